//! Closed-loop simulation of plant, exosystem and regulator under a shared
//! switching signal.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::model::{Exosystem, SwitchingPlant, SwitchingSignal};
use crate::regulator::RegulatorRealization;

pub const DEFAULT_HORIZON: usize = 100;

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub horizon: usize,
    pub signal: SwitchingSignal,
    pub x0: Vector,
    pub w0: Vector,
    pub xi0: Vector,
    /// Seed that generated the initial states, if any.
    pub seed: Option<u64>,
    pub sampling_time: f64,
}

impl SimulationConfig {
    /// Default initial condition: plant and regulator at rest, exosystem
    /// drawn uniformly from `[-1, 1]^q`.
    pub fn seeded(
        plant: &SwitchingPlant,
        exo: &Exosystem,
        signal: SwitchingSignal,
        horizon: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = plant.state_dim();
        let q = exo.state_dim();
        Self {
            horizon,
            signal,
            x0: Vector::zeros(n),
            w0: Vector::from_fn(q, |_, _| rng.random_range(-1.0..=1.0)),
            xi0: Vector::zeros(n + q),
            seed: Some(seed),
            sampling_time: plant.sampling_time(),
        }
    }

    /// Every state component drawn uniformly from `[-1, 1]`.
    pub fn random_states(
        plant: &SwitchingPlant,
        exo: &Exosystem,
        signal: SwitchingSignal,
        horizon: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = plant.state_dim();
        let q = exo.state_dim();
        let mut draw = |len: usize| Vector::from_fn(len, |_, _| rng.random_range(-1.0..=1.0));
        let x0 = draw(n);
        let w0 = draw(q);
        let xi0 = draw(n + q);
        Self {
            horizon,
            signal,
            x0,
            w0,
            xi0,
            seed: Some(seed),
            sampling_time: plant.sampling_time(),
        }
    }

    /// The same configuration with every initial state multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            x0: &self.x0 * k,
            w0: &self.w0 * k,
            xi0: &self.xi0 * k,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// 0-based mode index.
    pub mode: usize,
    pub x: Vector,
    pub w: Vector,
    pub xi: Vector,
    pub u: Vector,
    /// Regulation error `E_g w - C x`.
    pub e: Vector,
    pub eta_norm: f64,
}

impl StepRecord {
    /// Regulator estimation error `ξ - (x, w)`.
    pub fn eta(&self) -> Vector {
        let n = self.x.len();
        let mut eta = self.xi.clone();
        for (k, v) in eta.iter_mut().enumerate() {
            *v -= if k < n { self.x[k] } else { self.w[k - n] };
        }
        eta
    }
}

#[derive(Debug, Clone)]
pub struct SimulationTrace {
    pub records: Vec<StepRecord>,
    pub sampling_time: f64,
    pub seed: Option<u64>,
    pub signal: SwitchingSignal,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn output_count(&self) -> usize {
        self.records.first().map_or(0, |r| r.e.len())
    }

    pub fn input_count(&self) -> usize {
        self.records.first().map_or(0, |r| r.u.len())
    }

    /// Time series of output `j`.
    pub fn error_series(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.e[j]).collect()
    }

    /// `ηᵀ P η` at every step.
    pub fn lyapunov_values(&self, p: &Matrix) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| {
                let eta = r.eta();
                eta.dot(&(p * &eta))
            })
            .collect()
    }

    /// Largest deviation between the stored error and `E_g w - C x`
    /// recomputed from the stored states.
    pub fn error_recomputation_residual(&self, plant: &SwitchingPlant, exo: &Exosystem) -> f64 {
        self.records
            .iter()
            .map(|r| {
                let e = &exo.modes()[r.mode].eg * &r.w - &plant.modes()[r.mode].c * &r.x;
                (e - &r.e).amax()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let p = self.output_count();
        let m = self.input_count();
        let mut out = String::from("t,seconds,mode");
        for j in 1..=p {
            write!(out, ",e{j}").unwrap();
        }
        for j in 1..=m {
            write!(out, ",u{j}").unwrap();
        }
        out.push_str(",eta_norm\n");
        for r in &self.records {
            write!(
                out,
                "{},{:.16e},{}",
                r.t,
                r.t as f64 * self.sampling_time,
                r.mode + 1
            )
            .unwrap();
            for v in r.e.iter().chain(r.u.iter()) {
                write!(out, ",{v:.16e}").unwrap();
            }
            writeln!(out, ",{:.16e}", r.eta_norm).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn check_len(v: &Vector, expected: usize, what: &str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::mismatch(what, expected, v.len()));
    }
    Ok(())
}

pub fn simulate(
    plant: &SwitchingPlant,
    exo: &Exosystem,
    reg: &RegulatorRealization,
    cfg: &SimulationConfig,
) -> Result<SimulationTrace> {
    let n = plant.state_dim();
    let q = exo.state_dim();
    if cfg.horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if plant.n_modes() != exo.n_modes() || reg.modes.len() != plant.n_modes() {
        return Err(Error::mismatch(
            "mode count",
            plant.n_modes(),
            format!(
                "{} (exosystem), {} (regulator)",
                exo.n_modes(),
                reg.modes.len()
            ),
        ));
    }
    if reg.state_dim() != n + q {
        return Err(Error::mismatch("regulator state", n + q, reg.state_dim()));
    }
    check_len(&cfg.x0, n, "x0")?;
    check_len(&cfg.w0, q, "w0")?;
    check_len(&cfg.xi0, n + q, "xi0")?;
    if cfg.signal.steps() < cfg.horizon {
        return Err(Error::Signal(format!(
            "signal covers {} steps but the horizon is {}",
            cfg.signal.steps(),
            cfg.horizon
        )));
    }
    cfg.signal.check_modes(plant.n_modes())?;

    let mut x = cfg.x0.clone();
    let mut w = cfg.w0.clone();
    let mut xi = cfg.xi0.clone();
    let mut records = Vec::with_capacity(cfg.horizon);
    for t in 0..cfg.horizon {
        let mode = cfg.signal.mode_at(t)?;
        let pm = &plant.modes()[mode];
        let em = &exo.modes()[mode];
        let rm = &reg.modes[mode];

        let e = &em.eg * &w - &pm.c * &x;
        let u = &rm.fr * &xi;
        let mut record = StepRecord {
            t,
            mode,
            x: x.clone(),
            w: w.clone(),
            xi: xi.clone(),
            u: u.clone(),
            e: e.clone(),
            eta_norm: 0.0,
        };
        record.eta_norm = record.eta().norm();
        records.push(record);

        x = &pm.a * &x + &pm.b * &u;
        w = &em.ag * &w;
        xi = &rm.ar * &xi + &rm.br * &e;
    }
    Ok(SimulationTrace {
        records,
        sampling_time: cfg.sampling_time,
        seed: cfg.seed,
        signal: cfg.signal.clone(),
    })
}

/// Runs independent simulations on scoped threads, preserving order.
pub fn simulate_batch(
    plant: &SwitchingPlant,
    exo: &Exosystem,
    reg: &RegulatorRealization,
    configs: &[SimulationConfig],
) -> Vec<Result<SimulationTrace>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || simulate(plant, exo, reg, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputMetrics {
    pub peak: f64,
    /// Max `|e_j|` over the last 10% of steps.
    pub tail_max: f64,
    /// Last step with `|e_j|` above 1% of the peak; `None` for a zero signal.
    pub settle_step: Option<usize>,
}

impl OutputMetrics {
    /// `tail_max <= ratio * peak`.
    pub fn decayed(&self, ratio: f64) -> bool {
        self.tail_max <= ratio * self.peak
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchTransient {
    pub step: usize,
    /// Per output, max `|e_j|` from the switch until the next one.
    pub magnitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    pub outputs: Vec<OutputMetrics>,
    pub tail_start: usize,
    pub switches: Vec<SwitchTransient>,
}

impl ErrorMetrics {
    pub fn all_decayed(&self, ratio: f64) -> bool {
        self.outputs.iter().all(|o| o.decayed(ratio))
    }
}

pub fn error_metrics(trace: &SimulationTrace) -> ErrorMetrics {
    let len = trace.len();
    let tail_len = len.div_ceil(10).max(1).min(len);
    let tail_start = len - tail_len;
    let p = trace.output_count();

    let outputs = (0..p)
        .map(|j| {
            let series: Vec<f64> = trace.records.iter().map(|r| r.e[j].abs()).collect();
            let peak = series.iter().copied().fold(0.0, f64::max);
            let tail_max = series[tail_start..].iter().copied().fold(0.0, f64::max);
            let settle_step = if peak > 0.0 {
                series.iter().rposition(|&v| v > 0.01 * peak)
            } else {
                None
            };
            OutputMetrics {
                peak,
                tail_max,
                settle_step,
            }
        })
        .collect();

    let instants: Vec<usize> = trace
        .signal
        .switch_instants()
        .into_iter()
        .filter(|&s| s < len)
        .collect();
    let switches = instants
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = instants.get(k + 1).copied().unwrap_or(len);
            let magnitude = (0..p)
                .map(|j| {
                    trace.records[s..end]
                        .iter()
                        .map(|r| r.e[j].abs())
                        .fold(0.0, f64::max)
                })
                .collect();
            SwitchTransient { step: s, magnitude }
        })
        .collect();

    ErrorMetrics {
        outputs,
        tail_start,
        switches,
    }
}
