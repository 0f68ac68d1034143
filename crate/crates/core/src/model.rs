//! Switching plants, exosystems and the extended regulation system.
//!
//! Mode indices are 0-based in the API and 1-based in every user-facing
//! string (file diagnostics, signal grammar, CSV).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, from_rows, hstack, to_rows, vstack, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantMode {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// Family of discrete-time modes `x(t+1) = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingPlant {
    modes: Vec<PlantMode>,
    sampling_time: f64,
}

fn check_shape(m: &Matrix, rows: usize, cols: usize, mode: usize, field: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::mismatch(
            format!("mode {} field {}", mode + 1, field),
            format!("{rows}×{cols}"),
            format!("{}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

impl SwitchingPlant {
    pub fn new(modes: Vec<PlantMode>, sampling_time: f64) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidInput("plant has no modes".into()))?;
        let n = first.a.nrows();
        let m = first.b.ncols();
        let p = first.c.nrows();
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "plant dimensions must be positive, got n={n}, m={m}, p={p}"
            )));
        }
        if !(sampling_time > 0.0 && sampling_time.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampling time must be positive, got {sampling_time}"
            )));
        }
        for (i, mode) in modes.iter().enumerate() {
            check_shape(&mode.a, n, n, i, "A")?;
            check_shape(&mode.b, n, m, i, "B")?;
            check_shape(&mode.c, p, n, i, "C")?;
        }
        Ok(Self {
            modes,
            sampling_time,
        })
    }

    pub fn modes(&self) -> &[PlantMode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.modes[0].c.nrows()
    }

    pub fn sampling_time(&self) -> f64 {
        self.sampling_time
    }

    pub fn state_matrices(&self) -> Vec<Matrix> {
        self.modes.iter().map(|m| m.a.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExoMode {
    pub ag: Matrix,
    pub eg: Matrix,
}

/// Reference generator `w(t+1) = Ag w`, `y_ref = Eg w`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    modes: Vec<ExoMode>,
}

impl Exosystem {
    pub fn new(modes: Vec<ExoMode>) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidInput("exosystem has no modes".into()))?;
        let q = first.ag.nrows();
        let p = first.eg.nrows();
        if q == 0 || p == 0 {
            return Err(Error::InvalidInput(format!(
                "exosystem dimensions must be positive, got q={q}, p={p}"
            )));
        }
        for (i, mode) in modes.iter().enumerate() {
            check_shape(&mode.ag, q, q, i, "Ag")?;
            check_shape(&mode.eg, p, q, i, "Eg")?;
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[ExoMode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].ag.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.modes[0].eg.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedMode {
    pub ae: Matrix,
    pub be: Matrix,
    pub ce: Matrix,
}

/// Plant and exosystem in cascade; the output is the regulation error
/// `e = Eg w - C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    modes: Vec<ExtendedMode>,
    plant_dim: usize,
    exo_dim: usize,
}

impl ExtendedSystem {
    /// Builds from raw per-mode matrices, checking shape consistency only.
    pub fn from_modes(modes: Vec<ExtendedMode>, plant_dim: usize, exo_dim: usize) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidInput("extended system has no modes".into()))?;
        let dim = plant_dim + exo_dim;
        let m = first.be.ncols();
        let p = first.ce.nrows();
        for (i, mode) in modes.iter().enumerate() {
            check_shape(&mode.ae, dim, dim, i, "Ae")?;
            check_shape(&mode.be, dim, m, i, "Be")?;
            check_shape(&mode.ce, p, dim, i, "Ce")?;
        }
        Ok(Self {
            modes,
            plant_dim,
            exo_dim,
        })
    }

    pub fn modes(&self) -> &[ExtendedMode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn plant_dim(&self) -> usize {
        self.plant_dim
    }

    pub fn exo_dim(&self) -> usize {
        self.exo_dim
    }

    pub fn dim(&self) -> usize {
        self.plant_dim + self.exo_dim
    }

    pub fn input_dim(&self) -> usize {
        self.modes[0].be.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.modes[0].ce.nrows()
    }
}

pub fn build_extended(plant: &SwitchingPlant, exo: &Exosystem) -> Result<ExtendedSystem> {
    if plant.output_dim() != exo.output_dim() {
        return Err(Error::mismatch(
            "exosystem output count",
            format!("p = {} (plant outputs)", plant.output_dim()),
            format!("p = {}", exo.output_dim()),
        ));
    }
    if plant.n_modes() != exo.n_modes() {
        return Err(Error::mismatch(
            "exosystem mode count",
            plant.n_modes(),
            exo.n_modes(),
        ));
    }
    let q = exo.state_dim();
    let modes = plant
        .modes()
        .iter()
        .zip(exo.modes())
        .map(|(pm, em)| ExtendedMode {
            ae: block_diag(&pm.a, &em.ag),
            be: vstack(&pm.b, &Matrix::zeros(q, pm.b.ncols())),
            ce: hstack(&(-&pm.c), &em.eg),
        })
        .collect();
    Ok(ExtendedSystem {
        modes,
        plant_dim: plant.state_dim(),
        exo_dim: q,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PlantModeFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExoModeFile {
    #[serde(rename = "Ag")]
    ag: Vec<Vec<f64>>,
    #[serde(rename = "Eg")]
    eg: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    sampling_time: f64,
    modes: Vec<PlantModeFile>,
    exosystem: Vec<ExoModeFile>,
}

fn field(rows: &[Vec<f64>], mode: usize, name: &str) -> Result<Matrix> {
    from_rows(rows).map_err(|e| Error::Parse(format!("mode {} field {}: {}", mode + 1, name, e)))
}

/// Parses and validates a problem from its JSON text.
pub fn parse_problem(text: &str) -> Result<(SwitchingPlant, Exosystem)> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let modes = file
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(PlantMode {
                a: field(&m.a, i, "A")?,
                b: field(&m.b, i, "B")?,
                c: field(&m.c, i, "C")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let exo_modes = file
        .exosystem
        .iter()
        .enumerate()
        .map(|(i, m)| {
            Ok(ExoMode {
                ag: field(&m.ag, i, "Ag")?,
                eg: field(&m.eg, i, "Eg")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plant = SwitchingPlant::new(modes, file.sampling_time)?;
    let exo = Exosystem::new(exo_modes)?;
    if exo.n_modes() != plant.n_modes() {
        return Err(Error::mismatch(
            "exosystem mode count",
            plant.n_modes(),
            exo.n_modes(),
        ));
    }
    if exo.output_dim() != plant.output_dim() {
        return Err(Error::mismatch(
            "mode 1 field Eg",
            format!("{} rows (plant outputs)", plant.output_dim()),
            format!("{} rows", exo.output_dim()),
        ));
    }
    Ok((plant, exo))
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<(SwitchingPlant, Exosystem)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text)
}

pub fn problem_to_json(plant: &SwitchingPlant, exo: &Exosystem) -> String {
    let file = ProblemFile {
        sampling_time: plant.sampling_time(),
        modes: plant
            .modes()
            .iter()
            .map(|m| PlantModeFile {
                a: to_rows(&m.a),
                b: to_rows(&m.b),
                c: to_rows(&m.c),
            })
            .collect(),
        exosystem: exo
            .modes()
            .iter()
            .map(|m| ExoModeFile {
                ag: to_rows(&m.ag),
                eg: to_rows(&m.eg),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("problem serialization cannot fail")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    /// 0-based mode index.
    pub mode: usize,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Piecewise-constant switching signal over integer steps, starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchingSignal {
    segments: Vec<Segment>,
}

impl SwitchingSignal {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Signal("no segments".into()));
        }
        let mut next = 0usize;
        for (k, s) in segments.iter().enumerate() {
            if s.end < s.start {
                return Err(Error::Signal(format!(
                    "segment {} ends ({}) before it starts ({})",
                    k + 1,
                    s.end,
                    s.start
                )));
            }
            if s.start < next {
                return Err(Error::Signal(format!(
                    "segment {} starting at {} overlaps the previous segment",
                    k + 1,
                    s.start
                )));
            }
            if s.start > next {
                return Err(Error::Signal(format!(
                    "gap before segment {}: steps {}..{} are not covered",
                    k + 1,
                    next,
                    s.start - 1
                )));
            }
            next = s.end + 1;
        }
        Ok(Self { segments })
    }

    /// A single mode over steps `0..horizon`.
    pub fn constant(mode: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Signal("empty horizon".into()));
        }
        Self::new(vec![Segment {
            mode,
            start: 0,
            end: horizon - 1,
        }])
    }

    /// Parses the `mode:start-end,...` grammar (1-based modes).
    pub fn parse(text: &str) -> Result<Self> {
        let segments = text
            .split(',')
            .map(|part| {
                let part = part.trim();
                let bad = || {
                    Error::Signal(format!(
                        "malformed segment `{part}`, expected mode:start-end"
                    ))
                };
                let (mode, range) = part.split_once(':').ok_or_else(bad)?;
                let (start, end) = range.split_once('-').ok_or_else(bad)?;
                let mode: usize = mode.trim().parse().map_err(|_| bad())?;
                if mode == 0 {
                    return Err(Error::Signal(format!(
                        "mode indices start at 1 in `{part}`"
                    )));
                }
                Ok(Segment {
                    mode: mode - 1,
                    start: start.trim().parse().map_err(|_| bad())?,
                    end: end.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn last_step(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    /// Number of steps covered, `last_step + 1`.
    pub fn steps(&self) -> usize {
        self.last_step() + 1
    }

    /// 0-based mode active at step `t`.
    pub fn mode_at(&self, t: usize) -> Result<usize> {
        let idx = self.segments.partition_point(|s| s.end < t);
        match self.segments.get(idx) {
            Some(s) if s.start <= t => Ok(s.mode),
            _ => Err(Error::OutOfRange {
                t,
                last: self.last_step(),
            }),
        }
    }

    pub fn max_mode(&self) -> usize {
        self.segments.iter().map(|s| s.mode).max().unwrap_or(0)
    }

    pub fn check_modes(&self, n_modes: usize) -> Result<()> {
        if self.max_mode() >= n_modes {
            return Err(Error::Signal(format!(
                "mode {} referenced but the system has {} modes",
                self.max_mode() + 1,
                n_modes
            )));
        }
        Ok(())
    }

    /// Steps `t > 0` at which the active mode differs from step `t - 1`.
    pub fn switch_instants(&self) -> Vec<usize> {
        self.segments
            .windows(2)
            .filter(|w| w[0].mode != w[1].mode)
            .map(|w| w[1].start)
            .collect()
    }
}

impl fmt::Display for SwitchingSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.segments.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}:{}-{}", s.mode + 1, s.start, s.end)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use rand::{Rng, SeedableRng};

    #[test]
    fn example_fixture_dimensions() {
        let (plant, exo) = fixture::example_problem();
        assert_eq!(plant.n_modes(), 2);
        assert_eq!(plant.state_dim(), 6);
        assert_eq!(plant.input_dim(), 3);
        assert_eq!(plant.output_dim(), 2);
        assert_eq!(exo.state_dim(), 4);
        assert_eq!(plant.sampling_time(), 0.1);
    }

    #[test]
    fn mismatched_input_columns_rejected() {
        let (plant, exo) = fixture::example_problem();
        let text = problem_to_json(&plant, &exo);
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for row in value["modes"][1]["B"].as_array_mut().unwrap() {
            row.as_array_mut().unwrap().pop();
        }
        let err = parse_problem(&value.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::DimensionMismatch { .. }), "{msg}");
        assert!(msg.contains("mode 2") && msg.contains("field B"), "{msg}");
    }

    #[test]
    fn empty_modes_rejected() {
        let text = r#"{"sampling_time": 0.1, "modes": [], "exosystem": []}"#;
        assert!(matches!(
            parse_problem(text).unwrap_err(),
            Error::InvalidInput(_)
        ));
        assert!(matches!(
            parse_problem("{not json").unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn extended_error_row_of_worked_fixture() {
        let (plant, exo) = fixture::example_problem();
        let ext = build_extended(&plant, &exo).unwrap();
        assert_eq!(ext.dim(), 10);
        let row: Vec<f64> = ext.modes()[0].ce.row(0).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.0, -2.8, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn extended_zero_output_and_scalar_case() {
        let plant = SwitchingPlant::new(
            vec![PlantMode {
                a: Matrix::from_element(1, 1, 0.3),
                b: Matrix::from_element(1, 1, 1.0),
                c: Matrix::zeros(1, 1),
            }],
            1.0,
        )
        .unwrap();
        let exo = Exosystem::new(vec![ExoMode {
            ag: Matrix::from_element(1, 1, 0.7),
            eg: Matrix::zeros(1, 1),
        }])
        .unwrap();
        let ext = build_extended(&plant, &exo).unwrap();
        assert!(ext.modes()[0].ce.iter().all(|&v| v == 0.0));
        assert_eq!(
            ext.modes()[0].ae,
            Matrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7])
        );
    }

    #[test]
    fn output_count_mismatch() {
        let (plant, _) = fixture::example_problem();
        let exo = Exosystem::new(vec![
            ExoMode {
                ag: Matrix::identity(1, 1),
                eg: Matrix::identity(1, 1),
            };
            2
        ])
        .unwrap();
        assert!(build_extended(&plant, &exo).is_err());
    }

    #[test]
    fn extended_block_structure_oracle() {
        let (plant, exo) = fixture::example_problem();
        let ext = build_extended(&plant, &exo).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (i, mode) in ext.modes().iter().enumerate() {
            let x = Matrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0));
            let w = Matrix::from_fn(4, 1, |_, _| rng.random_range(-1.0..1.0));
            let xz = vstack(&x, &Matrix::zeros(4, 1));
            let lhs = &mode.ae * &xz;
            let rhs = vstack(&(&plant.modes()[i].a * &x), &Matrix::zeros(4, 1));
            assert!((lhs - rhs).abs().max() < 1e-14);
            let e = &mode.ce * vstack(&x, &w);
            let expected = &exo.modes()[i].eg * &w - &plant.modes()[i].c * &x;
            assert!((e - expected).abs().max() < 1e-14);
        }
    }

    #[test]
    fn serialization_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rand_m = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-1e3..1e3));
        let modes = (0..3)
            .map(|_| PlantMode {
                a: rand_m(3, 3),
                b: rand_m(3, 2),
                c: rand_m(2, 3),
            })
            .collect();
        let plant = SwitchingPlant::new(modes, 0.037).unwrap();
        let exo = Exosystem::new(
            (0..3)
                .map(|_| ExoMode {
                    ag: rand_m(2, 2),
                    eg: rand_m(2, 2),
                })
                .collect(),
        )
        .unwrap();
        let (p2, e2) = parse_problem(&problem_to_json(&plant, &exo)).unwrap();
        assert_eq!(plant, p2);
        assert_eq!(exo, e2);
    }

    #[test]
    fn example_signal_modes() {
        let s = SwitchingSignal::parse("1:0-29,2:30-69,1:70-99").unwrap();
        assert_eq!(s.mode_at(29).unwrap(), 0);
        assert_eq!(s.mode_at(30).unwrap(), 1);
        assert_eq!(s.mode_at(70).unwrap(), 0);
        assert!(matches!(s.mode_at(100), Err(Error::OutOfRange { .. })));
        assert_eq!(s.switch_instants(), vec![30, 70]);
        assert_eq!(s.to_string(), "1:0-29,2:30-69,1:70-99");

        let c = SwitchingSignal::parse("1:0-99").unwrap();
        assert!((0..100).all(|t| c.mode_at(t).unwrap() == 0));
    }

    #[test]
    fn signal_grammar_errors() {
        assert!(SwitchingSignal::parse("1:0-29,1:25-69")
            .unwrap_err()
            .to_string()
            .contains("overlap"));
        assert!(SwitchingSignal::parse("1:0-29,2:31-69").is_err());
        assert!(SwitchingSignal::parse("1:5-29").is_err());
        assert!(SwitchingSignal::parse("0:0-29").is_err());
        assert!(SwitchingSignal::parse("1:0-x").is_err());
        assert!(SwitchingSignal::parse("1:9-3").is_err());
    }
}
