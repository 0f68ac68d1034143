//! Structural synthesis: maximal robust controlled invariant subspace,
//! the structural solvability check, switching Francis equations and
//! friend feedbacks.

use crate::error::{Error, Result};
use crate::linalg::{hstack, kron, lstsq, max_abs, unvec_cols, vec_cols, vstack, Matrix};
use crate::model::{Exosystem, ExtendedSystem, SwitchingPlant};
use crate::subspace::{image, intersect, kernel, preimage, sum, RankPolicy, Subspace};

/// Absolute acceptance threshold for residuals of the linear solves.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-8;

fn stacked_outputs(sys: &ExtendedSystem) -> Matrix {
    let mut out = Matrix::zeros(0, sys.dim());
    for m in sys.modes() {
        out = vstack(&out, &m.ce);
    }
    out
}

/// Largest robust controlled invariant subspace contained in every `ker Ce_i`.
pub fn max_robust_controlled_invariant(
    sys: &ExtendedSystem,
    policy: &RankPolicy,
) -> Result<Subspace> {
    let v0 = kernel(&stacked_outputs(sys), policy)?;
    max_robust_controlled_invariant_from(sys, &v0, policy)
}

/// Runs `V ← V₀ ∩ ⋂ᵢ Ae_i⁻¹(V + Im Be_i)` from `start` until the dimension
/// stops decreasing. `start` must contain the result for the limit to be the
/// maximal one; the whole space always qualifies.
pub fn max_robust_controlled_invariant_from(
    sys: &ExtendedSystem,
    start: &Subspace,
    policy: &RankPolicy,
) -> Result<Subspace> {
    if start.ambient_dim() != sys.dim() {
        return Err(Error::mismatch(
            "initial subspace",
            sys.dim(),
            start.ambient_dim(),
        ));
    }
    let v0 = kernel(&stacked_outputs(sys), policy)?;
    let images: Vec<Subspace> = sys
        .modes()
        .iter()
        .map(|m| image(&m.be, policy))
        .collect::<Result<_>>()?;
    let mut current = start.clone();
    for _ in 0..=sys.dim() + 1 {
        let mut next = v0.clone();
        for (mode, im_b) in sys.modes().iter().zip(&images) {
            let target = sum(&current, im_b, policy)?;
            next = intersect(&next, &preimage(&mode.ae, &target, policy)?, policy)?;
        }
        if next.dim() == current.dim() {
            return Ok(next);
        }
        current = next;
    }
    Ok(current)
}

/// `max_i max |Ce_i · basis|`.
pub fn output_residual(sys: &ExtendedSystem, v: &Subspace) -> f64 {
    sys.modes()
        .iter()
        .map(|m| max_abs(&(&m.ce * v.basis())))
        .fold(0.0, f64::max)
}

/// Largest component of `Ae_i V` outside `V + Im Be_i`, over all modes.
pub fn controlled_invariance_residual(
    sys: &ExtendedSystem,
    v: &Subspace,
    policy: &RankPolicy,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for m in sys.modes() {
        let target = sum(v, &image(&m.be, policy)?, policy)?;
        let moved = &m.ae * v.basis();
        let outside = &moved - target.projector() * &moved;
        worst = worst.max(max_abs(&outside));
    }
    Ok(worst)
}

/// True iff `Vstar + Im[I_n; 0]` is the whole extended space.
pub fn check_condition_i(vstar: &Subspace, plant_dim: usize, policy: &RankPolicy) -> Result<bool> {
    let total = vstar.ambient_dim();
    if plant_dim > total {
        return Err(Error::mismatch(
            "plant dimension",
            format!("at most {total}"),
            plant_dim,
        ));
    }
    let mut embed = Matrix::zeros(total, plant_dim);
    embed
        .view_mut((0, 0), (plant_dim, plant_dim))
        .fill_with_identity();
    let plant_part = image(&embed, policy)?;
    Ok(sum(vstar, &plant_part, policy)?.is_full())
}

/// `Π` and the per-mode `Γ_i` of the switching Francis equations.
#[derive(Debug, Clone)]
pub struct FrancisSolution {
    pub pi: Matrix,
    pub gammas: Vec<Matrix>,
    /// `max |A_i Π + B_i Γ_i - Π A_g,i|` per mode.
    pub regulator_residuals: Vec<f64>,
    /// `max |C_i Π - E_g,i|` per mode.
    pub output_residuals: Vec<f64>,
    /// Largest residual of the row-normalized stacked system.
    pub scaled_residual: f64,
}

impl FrancisSolution {
    /// `[Π; I_q]`.
    pub fn graph_basis(&self) -> Matrix {
        let q = self.pi.ncols();
        vstack(&self.pi, &Matrix::identity(q, q))
    }

    pub fn subspace(&self, policy: &RankPolicy) -> Result<Subspace> {
        image(&self.graph_basis(), policy)
    }

    pub fn max_residual(&self) -> f64 {
        self.regulator_residuals
            .iter()
            .chain(&self.output_residuals)
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Solves `A_i Π + B_i Γ_i = Π A_g,i`, `C_i Π = E_g,i` for all modes jointly
/// as one least-squares problem; the minimum-norm solution is returned when
/// the system is underdetermined.
pub fn solve_francis(plant: &SwitchingPlant, exo: &Exosystem, tol: f64) -> Result<FrancisSolution> {
    if plant.n_modes() != exo.n_modes() || plant.output_dim() != exo.output_dim() {
        return Err(Error::mismatch(
            "Francis equations",
            format!("{} modes, {} outputs", plant.n_modes(), plant.output_dim()),
            format!("{} modes, {} outputs", exo.n_modes(), exo.output_dim()),
        ));
    }
    let (n, m, p, q) = (
        plant.state_dim(),
        plant.input_dim(),
        plant.output_dim(),
        exo.state_dim(),
    );
    let modes = plant.n_modes();
    let unknowns = n * q + modes * m * q;
    let rows_per_mode = n * q + p * q;
    let mut lhs = Matrix::zeros(modes * rows_per_mode, unknowns);
    let mut rhs = Matrix::zeros(modes * rows_per_mode, 1);
    let id_q = Matrix::identity(q, q);
    let id_n = Matrix::identity(n, n);
    for (i, (pm, em)) in plant.modes().iter().zip(exo.modes()).enumerate() {
        let r0 = i * rows_per_mode;
        let reg = kron(&id_q, &pm.a) - kron(&em.ag.transpose(), &id_n);
        lhs.view_mut((r0, 0), (n * q, n * q)).copy_from(&reg);
        lhs.view_mut((r0, n * q + i * m * q), (n * q, m * q))
            .copy_from(&kron(&id_q, &pm.b));
        lhs.view_mut((r0 + n * q, 0), (p * q, n * q))
            .copy_from(&kron(&id_q, &pm.c));
        rhs.view_mut((r0 + n * q, 0), (p * q, 1))
            .copy_from(&vec_cols(&em.eg));
    }
    for r in 0..lhs.nrows() {
        let norm = lhs.row(r).norm();
        if norm > 0.0 {
            lhs.row_mut(r).scale_mut(1.0 / norm);
            rhs[r] /= norm;
        }
    }
    let x = lstsq(&lhs, &rhs, 1e-12);
    let scaled_residual = max_abs(&(&lhs * &x - &rhs));
    if scaled_residual > tol {
        return Err(Error::Unsolvable {
            what: "Francis equations".into(),
            residual: scaled_residual,
            tol,
        });
    }
    let xs = x.as_slice();
    let pi = unvec_cols(&xs[..n * q], n, q);
    let gammas: Vec<Matrix> = (0..modes)
        .map(|i| {
            let off = n * q + i * m * q;
            unvec_cols(&xs[off..off + m * q], m, q)
        })
        .collect();
    let mut regulator_residuals = Vec::with_capacity(modes);
    let mut output_residuals = Vec::with_capacity(modes);
    for ((pm, em), g) in plant.modes().iter().zip(exo.modes()).zip(&gammas) {
        regulator_residuals.push(max_abs(&(&pm.a * &pi + &pm.b * g - &pi * &em.ag)));
        output_residuals.push(max_abs(&(&pm.c * &pi - &em.eg)));
    }
    Ok(FrancisSolution {
        pi,
        gammas,
        regulator_residuals,
        output_residuals,
        scaled_residual,
    })
}

/// Coordinates of `Ae_i V = V X_i + Be_i W_i` for one mode; any `F` with
/// `F V = -W_i` is a friend of `V` in that mode.
#[derive(Debug, Clone)]
pub struct FriendEquation {
    pub x: Matrix,
    pub w: Matrix,
    pub residual: f64,
}

pub fn friend_of(sys: &ExtendedSystem, v: &Subspace, tol: f64) -> Result<Vec<FriendEquation>> {
    if v.ambient_dim() != sys.dim() {
        return Err(Error::mismatch(
            "friend subspace",
            sys.dim(),
            v.ambient_dim(),
        ));
    }
    friend_of_basis(sys, v.basis(), tol)
}

/// Same as [`friend_of`] for an arbitrary (full column rank) basis.
pub fn friend_of_basis(
    sys: &ExtendedSystem,
    basis: &Matrix,
    tol: f64,
) -> Result<Vec<FriendEquation>> {
    let k = basis.ncols();
    sys.modes()
        .iter()
        .enumerate()
        .map(|(i, mode)| {
            let m = mode.be.ncols();
            if k == 0 {
                return Ok(FriendEquation {
                    x: Matrix::zeros(0, 0),
                    w: Matrix::zeros(m, 0),
                    residual: 0.0,
                });
            }
            let lhs = hstack(basis, &mode.be);
            let rhs = &mode.ae * basis;
            let sol = lstsq(&lhs, &rhs, 1e-12);
            let residual = max_abs(&(&lhs * &sol - &rhs));
            if residual > tol {
                return Err(Error::Unsolvable {
                    what: format!("friend equation for mode {}", i + 1),
                    residual,
                    tol,
                });
            }
            Ok(FriendEquation {
                x: sol.rows(0, k).into_owned(),
                w: sol.rows(k, m).into_owned(),
                residual,
            })
        })
        .collect()
}

/// Friend feedbacks of the regulation subspace, one per mode.
#[derive(Debug, Clone)]
pub struct FriendSet {
    pub v: Subspace,
    /// `F_i = [F1_i, Γ_i - F1_i Π]`, `m × (n + q)`.
    pub feedbacks: Vec<Matrix>,
    /// Free plant-state part `F1_i`.
    pub plant_feedbacks: Vec<Matrix>,
    /// Largest component of `(Ae_i + Be_i F_i) V` outside `V`, per mode.
    pub residuals: Vec<f64>,
}

/// Invariance residual of `V` under `Ae_i + Be_i F_i`, per mode.
pub fn friendship_residuals(sys: &ExtendedSystem, v: &Subspace, feedbacks: &[Matrix]) -> Vec<f64> {
    let proj = v.projector();
    sys.modes()
        .iter()
        .zip(feedbacks)
        .map(|(m, f)| {
            let moved = (&m.ae + &m.be * f) * v.basis();
            max_abs(&(&moved - &proj * &moved))
        })
        .collect()
}

pub fn assemble_friend_feedback(
    sys: &ExtendedSystem,
    francis: &FrancisSolution,
    plant_feedbacks: &[Matrix],
    policy: &RankPolicy,
) -> Result<FriendSet> {
    let (n, q, m) = (sys.plant_dim(), sys.exo_dim(), sys.input_dim());
    if plant_feedbacks.len() != sys.n_modes() || francis.gammas.len() != sys.n_modes() {
        return Err(Error::mismatch(
            "friend feedback modes",
            sys.n_modes(),
            format!(
                "{} plant feedbacks, {} Γ",
                plant_feedbacks.len(),
                francis.gammas.len()
            ),
        ));
    }
    if francis.pi.shape() != (n, q) {
        return Err(Error::mismatch(
            "Π",
            format!("{n}×{q}"),
            format!("{}×{}", francis.pi.nrows(), francis.pi.ncols()),
        ));
    }
    let mut feedbacks = Vec::with_capacity(sys.n_modes());
    for (i, (f1, gamma)) in plant_feedbacks.iter().zip(&francis.gammas).enumerate() {
        if f1.shape() != (m, n) {
            return Err(Error::mismatch(
                format!("plant feedback for mode {}", i + 1),
                format!("{m}×{n}"),
                format!("{}×{}", f1.nrows(), f1.ncols()),
            ));
        }
        feedbacks.push(hstack(f1, &(gamma - f1 * &francis.pi)));
    }
    let v = francis.subspace(policy)?;
    let residuals = friendship_residuals(sys, &v, &feedbacks);
    Ok(FriendSet {
        v,
        feedbacks,
        plant_feedbacks: plant_feedbacks.to_vec(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::model::{build_extended, ExoMode, ExtendedMode, PlantMode};
    use crate::subspace::{contains, distance};
    use rand::{Rng, SeedableRng};

    fn pol() -> RankPolicy {
        RankPolicy::default()
    }

    fn scalar_problem(a: f64, b: f64, c: f64, ag: f64, eg: f64) -> (SwitchingPlant, Exosystem) {
        let s = |v| Matrix::from_element(1, 1, v);
        (
            SwitchingPlant::new(
                vec![PlantMode {
                    a: s(a),
                    b: s(b),
                    c: s(c),
                }],
                1.0,
            )
            .unwrap(),
            Exosystem::new(vec![ExoMode {
                ag: s(ag),
                eg: s(eg),
            }])
            .unwrap(),
        )
    }

    fn example_system() -> ExtendedSystem {
        let (plant, exo) = fixture::example_problem();
        build_extended(&plant, &exo).unwrap()
    }

    #[test]
    fn example_c1_kernel_is_four_dimensional() {
        let (plant, _) = fixture::example_problem();
        let c1 = &plant.modes()[0].c;
        assert_eq!(kernel(c1, &pol()).unwrap().dim(), 4);
    }

    #[test]
    fn vstar_trivial_cases() {
        let ae = Matrix::from_row_slice(2, 2, &[0.4, 1.0, -2.0, 3.0]);
        let zero_out = ExtendedSystem::from_modes(
            vec![ExtendedMode {
                ae: ae.clone(),
                be: Matrix::zeros(2, 1),
                ce: Matrix::zeros(1, 2),
            }],
            1,
            1,
        )
        .unwrap();
        assert!(max_robust_controlled_invariant(&zero_out, &pol())
            .unwrap()
            .is_full());

        let observed = ExtendedSystem::from_modes(
            vec![ExtendedMode {
                ae,
                be: Matrix::zeros(2, 1),
                ce: Matrix::identity(2, 2),
            }],
            1,
            1,
        )
        .unwrap();
        assert!(max_robust_controlled_invariant(&observed, &pol())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn vstar_worked_fixture() {
        let sys = example_system();
        let vstar = max_robust_controlled_invariant(&sys, &pol()).unwrap();
        assert_eq!(vstar.dim(), 8);
        let printed = image(&fixture::example_reference().vstar, &pol()).unwrap();
        assert!(distance(&vstar, &printed).unwrap() <= 1e-3);
        assert!(output_residual(&sys, &vstar) <= 1e-8);
        assert!(controlled_invariance_residual(&sys, &vstar, &pol()).unwrap() <= 1e-8);
        assert!(check_condition_i(&vstar, 6, &pol()).unwrap());

        let from_full =
            max_robust_controlled_invariant_from(&sys, &Subspace::full(10), &pol()).unwrap();
        assert!(distance(&vstar, &from_full).unwrap() <= 1e-9);
    }

    #[test]
    fn condition_i_trivial_cases() {
        assert!(!check_condition_i(&Subspace::zero(10), 6, &pol()).unwrap());
        assert!(check_condition_i(&Subspace::full(10), 6, &pol()).unwrap());
    }

    #[test]
    fn francis_scalar() {
        let (plant, exo) = scalar_problem(0.5, 1.0, 1.0, 1.0, 1.0);
        let sol = solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL).unwrap();
        assert!((sol.pi[0] - 1.0).abs() < 1e-12);
        assert!((sol.gammas[0][0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn francis_zero_reference_gives_zero() {
        let (plant, exo) = fixture::example_problem();
        let zero_exo = Exosystem::new(
            exo.modes()
                .iter()
                .map(|m| ExoMode {
                    ag: m.ag.clone(),
                    eg: Matrix::zeros(2, 4),
                })
                .collect(),
        )
        .unwrap();
        let sol = solve_francis(&plant, &zero_exo, DEFAULT_RESIDUAL_TOL).unwrap();
        assert!(max_abs(&sol.pi) < 1e-12);
        assert!(sol.gammas.iter().all(|g| max_abs(g) < 1e-12));
    }

    #[test]
    fn francis_unsolvable_without_inputs() {
        // x+ = 0.5 x cannot track a constant reference.
        let (plant, exo) = scalar_problem(0.5, 0.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL),
            Err(Error::Unsolvable { .. })
        ));
    }

    #[test]
    fn francis_worked_fixture() {
        let (plant, exo) = fixture::example_problem();
        let sys = build_extended(&plant, &exo).unwrap();
        let sol = solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL).unwrap();
        assert!(sol.max_residual() <= 1e-8);
        let v = sol.subspace(&pol()).unwrap();
        let vstar = max_robust_controlled_invariant(&sys, &pol()).unwrap();
        assert!(contains(&vstar, &v, 1e-8).unwrap());
        assert!(output_residual(&sys, &v) <= 1e-8);
    }

    #[test]
    fn friend_of_trivial_cases() {
        let sys = example_system();
        let eqs = friend_of(&sys, &Subspace::zero(10), 1e-8).unwrap();
        assert!(eqs.iter().all(|e| e.w.ncols() == 0));

        let ae = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sys = ExtendedSystem::from_modes(
            vec![ExtendedMode {
                ae: ae.clone(),
                be: Matrix::zeros(2, 1),
                ce: Matrix::zeros(1, 2),
            }],
            1,
            1,
        )
        .unwrap();
        let eqs = friend_of(&sys, &Subspace::full(2), 1e-8).unwrap();
        assert!(max_abs(&eqs[0].w) < 1e-12);
        assert!(max_abs(&(&eqs[0].x - ae)) < 1e-12);
    }

    #[test]
    fn friend_of_graph_basis_recovers_gamma() {
        let (plant, exo) = fixture::example_problem();
        let sys = build_extended(&plant, &exo).unwrap();
        let sol = solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL).unwrap();
        let eqs = friend_of_basis(&sys, &sol.graph_basis(), 1e-8).unwrap();
        for (i, eq) in eqs.iter().enumerate() {
            assert!(max_abs(&(&eq.w + &sol.gammas[i])) < 1e-9);
            assert!(max_abs(&(&eq.x - &exo.modes()[i].ag)) < 1e-9);
        }
        // The orthonormal basis route agrees after the change of basis.
        let v = sol.subspace(&pol()).unwrap();
        let t = lstsq(&sol.graph_basis(), v.basis(), 1e-12);
        let eqs = friend_of(&sys, &v, 1e-8).unwrap();
        for (i, eq) in eqs.iter().enumerate() {
            assert!(max_abs(&(&eq.w + &sol.gammas[i] * &t)) < 1e-9);
        }
    }

    #[test]
    fn friend_of_rejects_non_invariant() {
        let sys = example_system();
        // The ramp slope axis feeds the ramp value axis, which no input reaches.
        let mut e = Matrix::zeros(10, 1);
        e[7] = 1.0;
        let v = image(&e, &pol()).unwrap();
        let err = friend_of(&sys, &v, 1e-8).unwrap_err();
        assert!(err.to_string().contains("mode 1"), "{err}");
    }

    #[test]
    fn assemble_scalar_examples() {
        let (plant, exo) = scalar_problem(0.5, 1.0, 1.0, 1.0, 1.0);
        let sys = build_extended(&plant, &exo).unwrap();
        let sol = solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL).unwrap();
        let set = assemble_friend_feedback(&sys, &sol, &[Matrix::from_element(1, 1, -0.5)], &pol())
            .unwrap();
        assert!((set.feedbacks[0][(0, 0)] + 0.5).abs() < 1e-12);
        assert!((set.feedbacks[0][(0, 1)] - 1.0).abs() < 1e-12);
        let closed = &sys.modes()[0].ae + &sys.modes()[0].be * &set.feedbacks[0];
        assert!(closed[(0, 0)].abs() < 1e-12);

        let zero = assemble_friend_feedback(&sys, &sol, &[Matrix::zeros(1, 1)], &pol()).unwrap();
        assert!((zero.feedbacks[0][(0, 1)] - sol.gammas[0][0]).abs() < 1e-12);
    }

    #[test]
    fn friendship_holds_for_random_plant_feedback() {
        let (plant, exo) = fixture::example_problem();
        let sys = build_extended(&plant, &exo).unwrap();
        let sol = solve_francis(&plant, &exo, DEFAULT_RESIDUAL_TOL).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f1: Vec<Matrix> = (0..2)
                .map(|_| Matrix::from_fn(3, 6, |_, _| rng.random_range(-2.0..2.0)))
                .collect();
            let set = assemble_friend_feedback(&sys, &sol, &f1, &pol()).unwrap();
            assert!(
                set.residuals.iter().all(|&r| r <= 1e-8),
                "{:?}",
                set.residuals
            );
            for (i, f) in set.feedbacks.iter().enumerate() {
                let mode = &sys.modes()[i];
                let closed = &mode.ae + &mode.be * f;
                let plant_block = closed.view((0, 0), (6, 6)).into_owned();
                let expected = &plant.modes()[i].a + &plant.modes()[i].b * &f1[i];
                assert!(max_abs(&(plant_block - expected)) < 1e-12);
                assert!(max_abs(&(f * sol.graph_basis() - &sol.gammas[i])) < 1e-12);
            }
        }
    }
}
