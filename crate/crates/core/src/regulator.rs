//! Observer-based switching regulator.
//!
//! Per mode the regulator is
//! `ξ(t+1) = (Ae + Be F + G Ce) ξ(t) - G e(t)`, `u(t) = F ξ(t)`,
//! switching synchronously with the plant.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::geometry::{
    assemble_friend_feedback, check_condition_i, friendship_residuals,
    max_robust_controlled_invariant, output_residual, solve_francis, FrancisSolution,
    DEFAULT_RESIDUAL_TOL,
};
use crate::linalg::{from_rows, max_abs, to_rows, Matrix};
use crate::lmi::{
    find_common_lyapunov, lyapunov_margins, synth_output_injection, synth_state_feedback,
    verify_common_lyapunov, LyapunovCertificate, LyapunovMargins, SolverOptions, DEFAULT_EPSILON,
};
use crate::model::{build_extended, Exosystem, ExtendedSystem, SwitchingPlant};
use crate::subspace::{image, RankPolicy, Subspace};

/// Tolerance for `Ce_i` annihilating the regulation subspace.
pub const ANNIHILATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorMode {
    pub ar: Matrix,
    pub br: Matrix,
    pub fr: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    pub epsilon: f64,
    pub residual_tol: f64,
    /// Synthesize the plant feedback by LMI even when the plant is already
    /// quadratically stable.
    pub force_feedback_synthesis: bool,
    pub policy: RankPolicy,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            force_feedback_synthesis: false,
            policy: RankPolicy::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// Intermediate results of [`synthesize`], kept for reporting.
#[derive(Debug, Clone)]
pub struct SynthesisDiagnostics {
    pub vstar: Subspace,
    pub condition_i: bool,
    pub francis: FrancisSolution,
    pub friendship_residuals: Vec<f64>,
    /// Whether the plant feedback came from LMI synthesis rather than zero.
    pub feedback_synthesized: bool,
}

#[derive(Debug, Clone)]
pub struct RegulatorRealization {
    pub modes: Vec<RegulatorMode>,
    pub system: ExtendedSystem,
    /// Regulation subspace `Im[Π; I]`.
    pub v: Subspace,
    pub feedbacks: Vec<Matrix>,
    pub plant_feedbacks: Vec<Matrix>,
    pub injections: Vec<Matrix>,
    /// Common Lyapunov certificate of `{Ae_i + G_i Ce_i}`.
    pub innovation: LyapunovCertificate,
    /// Common Lyapunov certificate of `{A_i + B_i F1_i}`.
    pub plant_loop: LyapunovCertificate,
    pub diagnostics: Option<SynthesisDiagnostics>,
}

impl RegulatorRealization {
    pub fn state_dim(&self) -> usize {
        self.system.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.system.input_dim()
    }

    /// Closed-loop map over `(x, w, ξ)` for one mode.
    pub fn closed_loop(&self, mode: usize) -> Matrix {
        let sys = &self.system.modes()[mode];
        let reg = &self.modes[mode];
        let d = self.system.dim();
        let mut out = Matrix::zeros(2 * d, 2 * d);
        out.view_mut((0, 0), (d, d)).copy_from(&sys.ae);
        out.view_mut((0, d), (d, d)).copy_from(&(&sys.be * &reg.fr));
        out.view_mut((d, 0), (d, d)).copy_from(&(&reg.br * &sys.ce));
        out.view_mut((d, d), (d, d)).copy_from(&reg.ar);
        out
    }
}

fn assemble_modes(
    sys: &ExtendedSystem,
    feedbacks: &[Matrix],
    injections: &[Matrix],
) -> Vec<RegulatorMode> {
    sys.modes()
        .iter()
        .zip(feedbacks.iter().zip(injections))
        .map(|(m, (f, g))| RegulatorMode {
            ar: &m.ae + &m.be * f + g * &m.ce,
            br: -g,
            fr: f.clone(),
        })
        .collect()
}

/// Full synthesis pipeline; fails at the first unsatisfied stage.
pub fn synthesize(
    plant: &SwitchingPlant,
    exo: &Exosystem,
    options: &SynthesisOptions,
) -> Result<RegulatorRealization> {
    let sys = build_extended(plant, exo).map_err(|e| Error::at(Stage::ExtendedSystem, e))?;
    let (n, m) = (plant.state_dim(), plant.input_dim());

    let analysis = if options.force_feedback_synthesis {
        None
    } else {
        find_common_lyapunov(&plant.state_matrices(), options.epsilon, &options.solver).ok()
    };
    let (plant_feedbacks, plant_loop, feedback_synthesized) = match analysis {
        Some(cert) => (vec![Matrix::zeros(m, n); plant.n_modes()], cert, false),
        None => {
            let pairs: Vec<_> = plant
                .modes()
                .iter()
                .map(|pm| (pm.a.clone(), pm.b.clone()))
                .collect();
            let fb = synth_state_feedback(&pairs, options.epsilon, &options.solver)
                .map_err(|e| Error::at(Stage::PlantStability, e))?;
            (fb.gains, fb.certificate, true)
        }
    };

    let pairs: Vec<_> = sys
        .modes()
        .iter()
        .map(|em| (em.ae.clone(), em.ce.clone()))
        .collect();
    let injection = synth_output_injection(&pairs, options.epsilon, &options.solver)
        .map_err(|e| Error::at(Stage::OutputInjection, e))?;

    let vstar = max_robust_controlled_invariant(&sys, &options.policy)
        .map_err(|e| Error::at(Stage::MaxInvariant, e))?;
    let condition_i = check_condition_i(&vstar, n, &options.policy)?;
    if !condition_i {
        return Err(Error::Stage {
            stage: Stage::ConditionI,
            reason: format!(
                "V*_R (dim {}) plus the plant subspace does not span R^{}",
                vstar.dim(),
                sys.dim()
            ),
        });
    }

    let francis = solve_francis(plant, exo, options.residual_tol)
        .map_err(|e| Error::at(Stage::Francis, e))?;
    let friends = assemble_friend_feedback(&sys, &francis, &plant_feedbacks, &options.policy)
        .map_err(|e| Error::at(Stage::Friend, e))?;
    if let Some((i, r)) = friends
        .residuals
        .iter()
        .enumerate()
        .find(|(_, &r)| r > options.residual_tol)
    {
        return Err(Error::Stage {
            stage: Stage::Friend,
            reason: format!("friendship residual {r:.3e} in mode {}", i + 1),
        });
    }

    let modes = assemble_modes(&sys, &friends.feedbacks, &injection.gains);
    Ok(RegulatorRealization {
        modes,
        v: friends.v.clone(),
        feedbacks: friends.feedbacks.clone(),
        plant_feedbacks,
        injections: injection.gains,
        innovation: injection.certificate,
        plant_loop,
        diagnostics: Some(SynthesisDiagnostics {
            vstar,
            condition_i,
            francis,
            friendship_residuals: friends.residuals,
            feedback_synthesized,
        }),
        system: sys,
    })
}

/// Outcome of [`certify`].
#[derive(Debug, Clone)]
pub struct CertificateReport {
    /// (a) invariance of `V` under `Ae_i + Be_i Fr_i`, per mode.
    pub friendship: Vec<f64>,
    /// (b) `max_i |Ce_i V|`.
    pub annihilation: f64,
    /// (c) innovation dynamics `{Ae_i - Br_i Ce_i}` against the stored `P`.
    pub innovation: LyapunovMargins,
    /// (d) plant loop `{A_i + B_i F1_i}` against the stored plant certificate.
    pub plant_loop: LyapunovMargins,
    /// `max |Ar_i - Ae_i - Be_i Fr_i + Br_i Ce_i|`.
    pub reassembly: f64,
    pub failures: Vec<String>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Rejected(self.failures.join("; ")))
        }
    }
}

/// Re-verifies a realization from its stored matrices, independently of how
/// they were synthesized.
pub fn certify(reg: &RegulatorRealization, residual_tol: f64) -> Result<CertificateReport> {
    let sys = &reg.system;
    let n = sys.plant_dim();
    let mut failures = Vec::new();

    let fr: Vec<Matrix> = reg.modes.iter().map(|m| m.fr.clone()).collect();
    let friendship = friendship_residuals(sys, &reg.v, &fr);
    for (i, r) in friendship.iter().enumerate() {
        if *r > residual_tol {
            failures.push(format!("(a) friendship residual {r:.3e} in mode {}", i + 1));
        }
    }

    let annihilation = output_residual(sys, &reg.v);
    if annihilation > ANNIHILATION_TOL {
        failures.push(format!("(b) Ce does not annihilate V: {annihilation:.3e}"));
    }

    let innovation_modes: Vec<Matrix> = sys
        .modes()
        .iter()
        .zip(&reg.modes)
        .map(|(m, r)| &m.ae - &r.br * &m.ce)
        .collect();
    let innovation = lyapunov_margins(&reg.innovation.q, &innovation_modes)?;
    if !innovation.strictly_satisfied() {
        failures.push(format!(
            "(c) innovation dynamics not certified (worst margin {:.3e})",
            innovation.worst()
        ));
    }

    let plant_modes: Vec<Matrix> = sys
        .modes()
        .iter()
        .zip(&fr)
        .map(|(m, f)| {
            let closed = &m.ae + &m.be * f;
            closed.view((0, 0), (n, n)).into_owned()
        })
        .collect();
    let plant_loop = lyapunov_margins(&reg.plant_loop.q, &plant_modes)?;
    if !plant_loop.strictly_satisfied() {
        failures.push(format!(
            "(d) plant loop not certified (worst margin {:.3e})",
            plant_loop.worst()
        ));
    }

    let reassembly = sys
        .modes()
        .iter()
        .zip(&reg.modes)
        .map(|(m, r)| max_abs(&(&r.ar - &m.ae - &m.be * &r.fr + &r.br * &m.ce)))
        .fold(0.0, f64::max);
    if reassembly > 1e-12 * (1.0 + reg.modes.iter().map(|r| max_abs(&r.ar)).fold(0.0, f64::max)) {
        failures.push(format!(
            "regulator matrices do not reassemble: {reassembly:.3e}"
        ));
    }

    Ok(CertificateReport {
        friendship,
        annihilation,
        innovation,
        plant_loop,
        reassembly,
        failures,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct RegulatorModeFile {
    #[serde(rename = "Ar")]
    ar: Vec<Vec<f64>>,
    #[serde(rename = "Br")]
    br: Vec<Vec<f64>>,
    #[serde(rename = "Fr")]
    fr: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "F1")]
    f1: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MarginsFile {
    innovation_lambda_min: f64,
    innovation_lambda_max: Vec<f64>,
    plant_lambda_min: f64,
    plant_lambda_max: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegulatorFile {
    plant_dim: usize,
    exo_dim: usize,
    modes: Vec<RegulatorModeFile>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    #[serde(rename = "Q_plant")]
    q_plant: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    margins: MarginsFile,
}

pub fn regulator_to_json(reg: &RegulatorRealization) -> String {
    let file = RegulatorFile {
        plant_dim: reg.system.plant_dim(),
        exo_dim: reg.system.exo_dim(),
        modes: reg
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| RegulatorModeFile {
                ar: to_rows(&m.ar),
                br: to_rows(&m.br),
                fr: to_rows(&m.fr),
                g: to_rows(&reg.injections[i]),
                f1: to_rows(&reg.plant_feedbacks[i]),
            })
            .collect(),
        p: to_rows(&reg.innovation.q),
        q_plant: to_rows(&reg.plant_loop.q),
        v: to_rows(reg.v.basis()),
        margins: MarginsFile {
            innovation_lambda_min: reg.innovation.margins.positivity,
            innovation_lambda_max: reg.innovation.margins.decrease.clone(),
            plant_lambda_min: reg.plant_loop.margins.positivity,
            plant_lambda_max: reg.plant_loop.margins.decrease.clone(),
        },
    };
    serde_json::to_string_pretty(&file).expect("regulator serialization cannot fail")
}

/// Rebuilds a realization from its exported form and the problem it was
/// synthesized for. Stored certificates are carried over unverified; run
/// [`certify`] to check them.
pub fn parse_regulator(
    text: &str,
    plant: &SwitchingPlant,
    exo: &Exosystem,
) -> Result<RegulatorRealization> {
    let file: RegulatorFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let sys = build_extended(plant, exo)?;
    if file.plant_dim != sys.plant_dim() || file.exo_dim != sys.exo_dim() {
        return Err(Error::mismatch(
            "regulator dimensions",
            format!("n={}, q={}", sys.plant_dim(), sys.exo_dim()),
            format!("n={}, q={}", file.plant_dim, file.exo_dim),
        ));
    }
    if file.modes.len() != sys.n_modes() {
        return Err(Error::mismatch(
            "regulator mode count",
            sys.n_modes(),
            file.modes.len(),
        ));
    }
    let (d, m, p) = (sys.dim(), sys.input_dim(), sys.output_dim());
    let shape = |mat: &Matrix, rows: usize, cols: usize, what: String| -> Result<()> {
        if mat.shape() != (rows, cols) {
            return Err(Error::mismatch(
                what,
                format!("{rows}×{cols}"),
                format!("{}×{}", mat.nrows(), mat.ncols()),
            ));
        }
        Ok(())
    };
    let mut modes = Vec::new();
    let mut injections = Vec::new();
    let mut plant_feedbacks = Vec::new();
    for (i, mf) in file.modes.iter().enumerate() {
        let mode = RegulatorMode {
            ar: from_rows(&mf.ar)?,
            br: from_rows(&mf.br)?,
            fr: from_rows(&mf.fr)?,
        };
        shape(&mode.ar, d, d, format!("mode {} field Ar", i + 1))?;
        shape(&mode.br, d, p, format!("mode {} field Br", i + 1))?;
        shape(&mode.fr, m, d, format!("mode {} field Fr", i + 1))?;
        let g = from_rows(&mf.g)?;
        shape(&g, d, p, format!("mode {} field G", i + 1))?;
        let f1 = from_rows(&mf.f1)?;
        shape(&f1, m, sys.plant_dim(), format!("mode {} field F1", i + 1))?;
        modes.push(mode);
        injections.push(g);
        plant_feedbacks.push(f1);
    }
    let p_mat = from_rows(&file.p)?;
    shape(&p_mat, d, d, "P".into())?;
    let q_plant = from_rows(&file.q_plant)?;
    shape(&q_plant, sys.plant_dim(), sys.plant_dim(), "Q_plant".into())?;
    let v_basis = from_rows(&file.v)?;
    if v_basis.nrows() != d && !(v_basis.nrows() == 0 && file.v.is_empty()) {
        return Err(Error::mismatch("V", format!("{d} rows"), v_basis.nrows()));
    }
    let v = if v_basis.nrows() == 0 {
        Subspace::zero(d)
    } else {
        image(&v_basis, &RankPolicy::default())?
    };
    let feedbacks = modes.iter().map(|m| m.fr.clone()).collect();
    Ok(RegulatorRealization {
        innovation: LyapunovCertificate {
            q: p_mat,
            margins: LyapunovMargins {
                positivity: file.margins.innovation_lambda_min,
                decrease: file.margins.innovation_lambda_max,
            },
        },
        plant_loop: LyapunovCertificate {
            q: q_plant,
            margins: LyapunovMargins {
                positivity: file.margins.plant_lambda_min,
                decrease: file.margins.plant_lambda_max,
            },
        },
        modes,
        system: sys,
        v,
        feedbacks,
        plant_feedbacks,
        injections,
        diagnostics: None,
    })
}

pub fn load_regulator(
    path: impl AsRef<Path>,
    plant: &SwitchingPlant,
    exo: &Exosystem,
) -> Result<RegulatorRealization> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_regulator(&text, plant, exo)
}

/// Checks that the stored innovation certificate still verifies.
pub fn verify_innovation(reg: &RegulatorRealization) -> Result<LyapunovCertificate> {
    let modes: Vec<Matrix> = reg
        .system
        .modes()
        .iter()
        .zip(&reg.injections)
        .map(|(m, g)| &m.ae + g * &m.ce)
        .collect();
    verify_common_lyapunov(&reg.innovation.q, &modes)
}
