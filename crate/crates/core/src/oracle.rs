//! Reference implementations used to cross-check the subspace library.
//!
//! Everything here works on spanning sets (matrix columns) and uses plain
//! Gaussian elimination with partial pivoting, sharing no code with the
//! SVD-based routines in [`crate::subspace`]. Intended for small, exactly
//! representable (integer) data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::max_robust_controlled_invariant;
use crate::linalg::{max_abs, Matrix, Vector};
use crate::model::{ExtendedMode, ExtendedSystem};
use crate::subspace::{image, intersect, kernel, preimage, sum, RankPolicy, Subspace};

fn pivot_tol(m: &Matrix) -> f64 {
    1e-9 * max_abs(m).max(1.0)
}

/// Reduced row echelon form and pivot columns.
pub fn rref(m: &Matrix) -> (Matrix, Vec<usize>) {
    let tol = pivot_tol(m);
    let mut r = m.clone();
    let (rows, cols) = r.shape();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (best, val) = (row..rows)
            .map(|i| (i, r[(i, col)].abs()))
            .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            for i in row..rows {
                r[(i, col)] = 0.0;
            }
            continue;
        }
        r.swap_rows(row, best);
        let p = r[(row, col)];
        for j in 0..cols {
            r[(row, j)] /= p;
        }
        for i in 0..rows {
            if i != row {
                let f = r[(i, col)];
                if f != 0.0 {
                    for j in 0..cols {
                        let v = r[(row, j)];
                        r[(i, j)] -= f * v;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (r, pivots)
}

pub fn rank(m: &Matrix) -> usize {
    rref(m).1.len()
}

/// Free-variable basis of `{x : m x = 0}`.
pub fn null_space(m: &Matrix) -> Matrix {
    let cols = m.ncols();
    let (r, pivots) = rref(m);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut out = Matrix::zeros(cols, free.len());
    for (k, &f) in free.iter().enumerate() {
        out[(f, k)] = 1.0;
        for (row, &p) in pivots.iter().enumerate() {
            out[(p, k)] = -r[(row, f)];
        }
    }
    out
}

/// Linearly independent subset of the columns of `m` spanning the same space.
pub fn column_basis(m: &Matrix) -> Matrix {
    let (_, pivots) = rref(m);
    m.select_columns(pivots.iter())
}

fn join(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

pub fn in_span(span: &Matrix, x: &Vector) -> bool {
    let x = Matrix::from_column_slice(x.len(), 1, x.as_slice());
    rank(&join(span, &x)) == rank(span)
}

pub fn span_sum(u: &Matrix, v: &Matrix) -> Matrix {
    column_basis(&join(u, v))
}

/// Solves `u a = v b` for `(a, b)` and returns a basis of the common vectors.
pub fn span_intersection(u: &Matrix, v: &Matrix) -> Matrix {
    let n = null_space(&join(u, &-v));
    column_basis(&(u * n.rows(0, u.ncols())))
}

/// `{x : a x ∈ span(s)}` from the solutions of `a x = s c`.
pub fn span_preimage(a: &Matrix, s: &Matrix) -> Matrix {
    let n = null_space(&join(a, &-s));
    column_basis(&n.rows(0, a.ncols()).into_owned())
}

/// Single-mode maximal controlled invariant subspace in `ker c`, by the
/// textbook recursion `V ← ker c ∩ a⁻¹(V + Im b)`.
pub fn max_controlled_invariant(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let v0 = null_space(c);
    let mut v = v0.clone();
    loop {
        let next = span_intersection(&v0, &span_preimage(a, &span_sum(&v, b)));
        if next.ncols() == v.ncols() {
            return next;
        }
        v = next;
    }
}

/// Outcome of a randomized cross-check suite.
#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn int_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sparsity: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random_bool(sparsity) {
            0.0
        } else {
            rng.random_range(-2i32..=2) as f64
        }
    })
}

fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let r = rng.random_range(0..=rows.min(cols));
    int_matrix(rng, rows, r, 0.0) * int_matrix(rng, r, cols, 0.0)
}

const MEMBERSHIP_TOL: f64 = 1e-7;

fn contains_all(s: &Subspace, vectors: &Matrix) -> bool {
    vectors
        .column_iter()
        .all(|c| s.residual(&c.into_owned()) <= MEMBERSHIP_TOL * (1.0 + c.norm()))
}

/// Dimension identities (rank-nullity, Grassmann) and preimage membership of
/// the subspace library against the elimination oracle, on `instances`
/// random integer problems of ambient dimension at most 8.
pub fn subspace_suite(instances: usize, seed: u64) -> SuiteOutcome {
    let policy = RankPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::default();
    for case in 0..instances {
        out.cases += 1;
        let mut fail = |msg: String| out.failures.push(format!("case {case}: {msg}"));
        let n = rng.random_range(1..=8);

        let cols = rng.random_range(1..=8);
        let m = low_rank(&mut rng, n, cols);
        match (image(&m, &policy), kernel(&m, &policy)) {
            (Ok(im), Ok(ker)) => {
                if im.dim() + ker.dim() != cols {
                    fail(format!(
                        "rank-nullity: {} + {} != {cols}",
                        im.dim(),
                        ker.dim()
                    ));
                }
                if im.dim() != rank(&m) {
                    fail(format!("rank {} vs oracle {}", im.dim(), rank(&m)));
                }
                if !contains_all(&ker, &null_space(&m)) {
                    fail("oracle kernel vector outside library kernel".into());
                }
            }
            (a, b) => fail(format!("image/kernel error: {:?} {:?}", a.err(), b.err())),
        }

        let ku = rng.random_range(1..=n);
        let kv = rng.random_range(1..=n);
        let (um, vm) = (low_rank(&mut rng, n, ku), low_rank(&mut rng, n, kv));
        let result = (|| -> crate::Result<()> {
            let u = image(&um, &policy)?;
            let v = image(&vm, &policy)?;
            let s = sum(&u, &v, &policy)?;
            let i = intersect(&u, &v, &policy)?;
            if s.dim() + i.dim() != u.dim() + v.dim() {
                fail(format!(
                    "Grassmann: {} + {} != {} + {}",
                    s.dim(),
                    i.dim(),
                    u.dim(),
                    v.dim()
                ));
            }
            let oi = span_intersection(&um, &vm);
            if i.dim() != oi.ncols() || !contains_all(&i, &oi) {
                fail(format!(
                    "intersection dim {} vs oracle {}",
                    i.dim(),
                    oi.ncols()
                ));
            }
            if !contains_all(&u, i.basis()) || !contains_all(&v, i.basis()) {
                fail("intersection not contained in both operands".into());
            }
            if s.dim() != span_sum(&um, &vm).ncols() {
                fail("sum dimension differs from oracle".into());
            }
            Ok(())
        })();
        if let Err(e) = result {
            fail(format!("sum/intersection error: {e}"));
        }

        let r = rng.random_range(1..=8);
        let a = low_rank(&mut rng, r, n);
        let sk = rng.random_range(1..=r);
        let sm = low_rank(&mut rng, r, sk);
        let result = (|| -> crate::Result<()> {
            let s = image(&sm, &policy)?;
            let p = preimage(&a, &s, &policy)?;
            let op = span_preimage(&a, &sm);
            if p.dim() != op.ncols() {
                fail(format!("preimage dim {} vs oracle {}", p.dim(), op.ncols()));
            }
            if !contains_all(&p, &op) {
                fail("oracle preimage vector outside library preimage".into());
            }
            let mapped = &a * p.basis();
            if !contains_all(&s, &mapped) {
                fail("library preimage vector does not map into the target".into());
            }
            for _ in 0..4 {
                let x = Vector::from_fn(n, |_, _| rng.random_range(-3i32..=3) as f64);
                let lib = p.residual(&x) <= MEMBERSHIP_TOL * (1.0 + x.norm());
                let orc = in_span(&sm, &(&a * &x));
                if lib != orc {
                    fail(format!(
                        "membership disagreement (library {lib}, oracle {orc})"
                    ));
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            fail(format!("preimage error: {e}"));
        }
    }
    out
}

/// Single-mode maximal controlled invariant subspace against the textbook
/// recursion, on random sparse integer systems with `n ≤ 4`.
pub fn vstar_suite(instances: usize, seed: u64) -> SuiteOutcome {
    let policy = RankPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteOutcome::default();
    for case in 0..instances {
        out.cases += 1;
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let p = rng.random_range(1..=2);
        let a = int_matrix(&mut rng, n, n, 0.5);
        let b = int_matrix(&mut rng, n, m, 0.5);
        let c = int_matrix(&mut rng, p, n, 0.5);
        let expected = max_controlled_invariant(&a, &b, &c);
        let sys = ExtendedSystem::from_modes(
            vec![ExtendedMode {
                ae: a,
                be: b,
                ce: c,
            }],
            n,
            0,
        );
        match sys.and_then(|s| max_robust_controlled_invariant(&s, &policy)) {
            Ok(v) if v.dim() == expected.ncols() && contains_all(&v, &expected) => {}
            Ok(v) => out.failures.push(format!(
                "case {case}: dim {} vs oracle {}",
                v.dim(),
                expected.ncols()
            )),
            Err(e) => out.failures.push(format!("case {case}: {e}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_row_slice(rows.len(), rows[0].len(), &rows.concat())
    }

    #[test]
    fn elimination_basics() {
        let a = m(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]]);
        assert_eq!(rank(&a), 1);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!(max_abs(&(&a * &n)) == 0.0);
        assert_eq!(column_basis(&a).ncols(), 1);
    }

    #[test]
    fn intersection_and_preimage_by_hand() {
        let u = m(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let v = m(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let i = span_intersection(&u, &v);
        assert_eq!(i.ncols(), 1);
        assert!(i[(0, 0)] == 0.0 && i[(2, 0)] == 0.0);
        // projection onto x1 pulled back from span{e1} is everything
        let p = span_preimage(&m(&[&[1.0, 0.0], &[0.0, 0.0]]), &m(&[&[1.0], &[0.0]]));
        assert_eq!(p.ncols(), 2);
    }

    #[test]
    fn textbook_recursion_double_integrator() {
        // x1+ = x2, x2+ = u, y = x1: only the origin stays in ker C
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let b = m(&[&[0.0], &[1.0]]);
        let c = m(&[&[1.0, 0.0]]);
        assert_eq!(max_controlled_invariant(&a, &b, &c).ncols(), 0);
        // y = x2: the x1 axis is invariant with u = 0
        let v = max_controlled_invariant(&a, &b, &m(&[&[0.0, 1.0]]));
        assert_eq!(v.ncols(), 1);
    }

    #[test]
    fn suites_pass_on_small_runs() {
        let s = subspace_suite(40, 11);
        assert!(s.passed(), "{:?}", s.failures);
        let v = vstar_suite(20, 12);
        assert!(v.passed(), "{:?}", v.failures);
    }
}
