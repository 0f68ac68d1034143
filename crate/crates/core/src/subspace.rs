//! Finite-dimensional subspace arithmetic on orthonormal bases.
//!
//! Every [`Subspace`] stores an orthonormal basis; rank decisions go through
//! a singular value decomposition and a [`RankPolicy`]. The zero subspace is
//! an `n × 0` basis and is handled like any other value.

use crate::error::{Error, Result};
use crate::linalg::{hstack, sorted_svd, spectral_norm, Matrix, Vector};

pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Relative singular-value threshold used for numerical rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    rel_tol: f64,
}

impl RankPolicy {
    pub fn new(rel_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidInput(format!(
                "rank tolerance must lie in (0, 1), got {rel_tol}"
            )));
        }
        Ok(Self { rel_tol })
    }

    pub fn rel_tol(&self) -> f64 {
        self.rel_tol
    }

    /// Number of singular values above `rel_tol * scale`.
    fn rank(&self, sigma: &[f64], scale: f64) -> usize {
        if scale <= 0.0 {
            return 0;
        }
        let cutoff = self.rel_tol * scale;
        sigma.iter().take_while(|&&s| s > cutoff).count()
    }
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self {
            rel_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    pub fn zero(ambient_dim: usize) -> Self {
        Self {
            basis: Matrix::zeros(ambient_dim, 0),
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self {
            basis: Matrix::identity(ambient_dim, ambient_dim),
        }
    }

    /// Span of the columns of `raw`, orthonormalized.
    pub fn from_basis(raw: &Matrix, policy: &RankPolicy) -> Result<Self> {
        image(raw, policy)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_zero(&self) -> bool {
        self.dim() == 0
    }

    pub fn is_full(&self) -> bool {
        self.dim() == self.ambient_dim()
    }

    /// Orthonormal basis, `ambient_dim × dim`.
    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Orthogonal complement.
    pub fn complement(&self) -> Subspace {
        let n = self.ambient_dim();
        if self.is_zero() {
            return Subspace::full(n);
        }
        if self.is_full() {
            return Subspace::zero(n);
        }
        // Singular values of an orthonormal basis are exactly one, so a fixed
        // cutoff of one half separates them from the padded zeros.
        let svd = sorted_svd(&self.basis.transpose());
        let r = svd.sigma.iter().take_while(|&&s| s > 0.5).count();
        Subspace {
            basis: svd.v.columns(r, n - r).into_owned(),
        }
    }

    /// Euclidean norm of the component of `x` orthogonal to this subspace.
    pub fn residual(&self, x: &Vector) -> f64 {
        let proj = &self.basis * (self.basis.transpose() * x);
        (x - proj).norm()
    }

    fn check_ambient(&self, other: &Subspace, what: &str) -> Result<()> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(Error::mismatch(
                what,
                format!("ambient dimension {}", self.ambient_dim()),
                format!("ambient dimension {}", other.ambient_dim()),
            ));
        }
        Ok(())
    }
}

/// Column span of `m`.
pub fn image(m: &Matrix, policy: &RankPolicy) -> Result<Subspace> {
    if m.nrows() == 0 {
        return Err(Error::InvalidInput("image of a matrix with no rows".into()));
    }
    if m.ncols() == 0 {
        return Ok(Subspace::zero(m.nrows()));
    }
    let svd = sorted_svd(m);
    let scale = svd.sigma.first().copied().unwrap_or(0.0);
    let r = policy.rank(&svd.sigma, scale);
    Ok(Subspace {
        basis: svd.u.columns(0, r).into_owned(),
    })
}

/// Null space `{x : m x = 0}`.
pub fn kernel(m: &Matrix, policy: &RankPolicy) -> Result<Subspace> {
    if m.ncols() == 0 {
        return Err(Error::InvalidInput(
            "kernel of a matrix with no columns".into(),
        ));
    }
    let scale = if m.nrows() == 0 {
        0.0
    } else {
        spectral_norm(m)
    };
    Ok(kernel_scaled(m, policy, scale))
}

/// Null space with rank decided relative to an externally supplied scale.
fn kernel_scaled(m: &Matrix, policy: &RankPolicy, scale: f64) -> Subspace {
    let n = m.ncols();
    if m.nrows() == 0 || scale <= 0.0 {
        return Subspace::full(n);
    }
    let svd = sorted_svd(m);
    let r = policy.rank(&svd.sigma, scale);
    Subspace {
        basis: svd.v.columns(r, n - r).into_owned(),
    }
}

pub fn sum(u: &Subspace, v: &Subspace, policy: &RankPolicy) -> Result<Subspace> {
    u.check_ambient(v, "subspace sum")?;
    if u.is_zero() {
        return Ok(v.clone());
    }
    if v.is_zero() {
        return Ok(u.clone());
    }
    image(&hstack(&u.basis, &v.basis), policy)
}

/// `U ∩ V = (U⊥ + V⊥)⊥`.
pub fn intersect(u: &Subspace, v: &Subspace, policy: &RankPolicy) -> Result<Subspace> {
    u.check_ambient(v, "subspace intersection")?;
    Ok(sum(&u.complement(), &v.complement(), policy)?.complement())
}

/// `{x : a x ∈ v}`, the kernel of the projection of `a` onto `v⊥`.
///
/// Rank is decided relative to the norm of `a` rather than of the projected
/// product, so round-off in an exactly annihilated product is not mistaken
/// for a nonzero direction.
pub fn preimage(a: &Matrix, v: &Subspace, policy: &RankPolicy) -> Result<Subspace> {
    if a.nrows() != v.ambient_dim() {
        return Err(Error::mismatch(
            "preimage",
            format!("map with {} rows", v.ambient_dim()),
            format!("{} rows", a.nrows()),
        ));
    }
    if a.ncols() == 0 {
        return Err(Error::InvalidInput(
            "preimage of a map with no columns".into(),
        ));
    }
    let perp = v.complement();
    if perp.is_zero() {
        return Ok(Subspace::full(a.ncols()));
    }
    let projected = perp.basis.transpose() * a;
    Ok(kernel_scaled(&projected, policy, spectral_norm(a)))
}

/// Gap metric: sine of the largest principal angle. Subspaces of different
/// dimension are at distance 1.
pub fn distance(u: &Subspace, v: &Subspace) -> Result<f64> {
    u.check_ambient(v, "subspace distance")?;
    if u.dim() != v.dim() {
        return Ok(1.0);
    }
    if u.is_zero() {
        return Ok(0.0);
    }
    let residual = &v.basis - &u.basis * (u.basis.transpose() * &v.basis);
    Ok(spectral_norm(&residual).min(1.0))
}

/// True iff every basis vector of `v` lies within `tol` of `u`.
pub fn contains(u: &Subspace, v: &Subspace, tol: f64) -> Result<bool> {
    u.check_ambient(v, "subspace containment")?;
    Ok(v.basis
        .column_iter()
        .all(|col| u.residual(&col.into_owned()) <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(n: usize, i: usize) -> Matrix {
        let mut m = Matrix::zeros(n, 1);
        m[i] = 1.0;
        m
    }

    fn pol() -> RankPolicy {
        RankPolicy::default()
    }

    fn assert_orthonormal(s: &Subspace) {
        let gram = s.basis().transpose() * s.basis();
        let id = Matrix::identity(s.dim(), s.dim());
        assert!((gram - id).abs().max() <= 1e-12);
    }

    #[test]
    fn policy_bounds() {
        assert!(RankPolicy::new(0.0).is_err());
        assert!(RankPolicy::new(1.0).is_err());
        assert!(RankPolicy::new(1e-6).is_ok());
    }

    #[test]
    fn image_of_rank_one() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let s = image(&m, &pol()).unwrap();
        assert_eq!(s.dim(), 1);
        assert_orthonormal(&s);
        let expected = Subspace::from_basis(
            &Matrix::from_row_slice(2, 1, &[1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()]),
            &pol(),
        )
        .unwrap();
        assert!(distance(&s, &expected).unwrap() < 1e-12);
    }

    #[test]
    fn image_of_identity_and_empty() {
        assert!(image(&Matrix::identity(3, 3), &pol()).unwrap().is_full());
        assert!(image(&Matrix::zeros(0, 2), &pol()).is_err());
        assert!(image(&Matrix::zeros(3, 0), &pol()).unwrap().is_zero());
        assert!(image(&Matrix::zeros(3, 2), &pol()).unwrap().is_zero());
    }

    #[test]
    fn kernel_examples() {
        let k = kernel(&Matrix::from_row_slice(1, 2, &[1.0, 0.0]), &pol()).unwrap();
        assert_eq!(k.dim(), 1);
        let e2 = image(&e(2, 1), &pol()).unwrap();
        assert!(distance(&k, &e2).unwrap() < 1e-12);

        assert!(kernel(&Matrix::identity(2, 2), &pol()).unwrap().is_zero());
        assert!(kernel(&Matrix::zeros(2, 0), &pol()).is_err());
    }

    #[test]
    fn sum_examples() {
        let e1 = image(&e(3, 0), &pol()).unwrap();
        let e2 = image(&e(3, 1), &pol()).unwrap();
        let s = sum(&e1, &e2, &pol()).unwrap();
        let expected = image(&hstack(&e(3, 0), &e(3, 1)), &pol()).unwrap();
        assert!(distance(&s, &expected).unwrap() < 1e-12);

        let z = Subspace::zero(3);
        assert_eq!(sum(&e1, &z, &pol()).unwrap(), e1);
        assert!(sum(&e1, &Subspace::zero(2), &pol()).is_err());
    }

    #[test]
    fn intersect_examples() {
        let u = image(&hstack(&e(3, 0), &e(3, 1)), &pol()).unwrap();
        let v = image(&hstack(&e(3, 1), &e(3, 2)), &pol()).unwrap();
        let w = intersect(&u, &v, &pol()).unwrap();
        assert_eq!(w.dim(), 1);
        assert!(distance(&w, &image(&e(3, 1), &pol()).unwrap()).unwrap() < 1e-12);

        let full = Subspace::full(3);
        assert!(distance(&intersect(&u, &full, &pol()).unwrap(), &u).unwrap() < 1e-12);
    }

    #[test]
    fn intersect_nested_random_spans() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let big = Matrix::from_fn(8, 5, |_, _| rng.random_range(-1.0..1.0));
        let mix = Matrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let u = image(&big, &pol()).unwrap();
        let sub = image(&(&big * mix), &pol()).unwrap();
        let w = intersect(&u, &sub, &pol()).unwrap();
        assert_eq!(w.dim(), 2);
        assert!(distance(&w, &sub).unwrap() < 1e-9);
    }

    #[test]
    fn preimage_examples() {
        let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e1 = image(&e(2, 0), &pol()).unwrap();
        assert!(preimage(&a, &e1, &pol()).unwrap().is_full());

        let v = image(&Matrix::from_row_slice(3, 1, &[1.0, 1.0, 0.0]), &pol()).unwrap();
        let p = preimage(&Matrix::identity(3, 3), &v, &pol()).unwrap();
        assert!(distance(&p, &v).unwrap() < 1e-12);

        let p0 = preimage(&Matrix::zeros(2, 3), &Subspace::zero(2), &pol()).unwrap();
        assert!(p0.is_full());
        assert_eq!(p0.ambient_dim(), 3);

        assert!(preimage(&Matrix::zeros(3, 3), &e1, &pol()).is_err());
    }

    #[test]
    fn distance_and_contains_examples() {
        let e1 = image(&e(2, 0), &pol()).unwrap();
        let e2 = image(&e(2, 1), &pol()).unwrap();
        assert!((distance(&e1, &e2).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(distance(&e1, &e1).unwrap(), 0.0);
        assert_eq!(distance(&e1, &Subspace::full(2)).unwrap(), 1.0);

        assert!(contains(&Subspace::full(2), &e1, 1e-12).unwrap());
        assert!(!contains(&Subspace::zero(2), &e1, 1e-12).unwrap());
        assert!(contains(&e1, &Subspace::zero(2), 1e-12).unwrap());
    }

    #[test]
    fn complement_round_trip() {
        let v = image(&Matrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]), &pol()).unwrap();
        let c = v.complement();
        assert_eq!(c.dim(), 2);
        assert_orthonormal(&c);
        assert!((v.basis().transpose() * c.basis()).abs().max() < 1e-12);
        assert!(distance(&c.complement(), &v).unwrap() < 1e-12);
    }

    fn matrix_strategy(max: usize) -> impl Strategy<Value = Matrix> {
        (1..=max, 1..=max, 1..=max).prop_flat_map(|(r, c, k)| {
            (
                proptest::collection::vec(-1.0f64..1.0, r * k),
                proptest::collection::vec(-1.0f64..1.0, k * c),
            )
                .prop_map(move |(x, y)| Matrix::from_vec(r, k, x) * Matrix::from_vec(k, c, y))
        })
    }

    proptest! {
        #[test]
        fn rank_nullity(m in matrix_strategy(8)) {
            let im = image(&m, &pol()).unwrap();
            let ker = kernel(&m, &pol()).unwrap();
            prop_assert_eq!(im.dim() + ker.dim(), m.ncols());
            prop_assert!((&m * ker.basis()).abs().max() <= 1e-9 * (1.0 + m.abs().max()));
        }

        #[test]
        fn grassmann_identity(a in matrix_strategy(6), b in matrix_strategy(6)) {
            // Reuse the generated matrices as spans in a common ambient space.
            let n = a.nrows().max(b.nrows());
            let pad = |m: &Matrix| {
                let mut out = Matrix::zeros(n, m.ncols());
                out.view_mut((0, 0), m.shape()).copy_from(m);
                out
            };
            let u = image(&pad(&a), &pol()).unwrap();
            let v = image(&pad(&b), &pol()).unwrap();
            let s = sum(&u, &v, &pol()).unwrap();
            let i = intersect(&u, &v, &pol()).unwrap();
            prop_assert_eq!(s.dim() + i.dim(), u.dim() + v.dim());
        }

        #[test]
        fn distance_is_basis_independent(
            raw in proptest::collection::vec(-1.0f64..1.0, 6 * 3),
            mix in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let basis = Matrix::from_vec(6, 3, raw);
            let mut t = Matrix::from_vec(3, 3, mix);
            t += Matrix::identity(3, 3) * 3.0;
            let u = image(&basis, &pol()).unwrap();
            let v = image(&(&basis * t), &pol()).unwrap();
            let d1 = distance(&u, &v).unwrap();
            let d2 = distance(&v, &u).unwrap();
            prop_assert!(d1 < 1e-9);
            prop_assert!((d1 - d2).abs() < 1e-9);
        }

        #[test]
        fn operations_are_deterministic(m in matrix_strategy(6)) {
            let a = image(&m, &pol()).unwrap();
            let b = image(&m, &pol()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
