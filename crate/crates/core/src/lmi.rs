//! Small dense LMI feasibility problems.
//!
//! Problems are stated over named matrix variables; each constraint is an
//! affine symmetric expression required to be positive or negative definite
//! with margin `epsilon`. The solver alternates projections between the
//! affine image of the decision variables and the shifted definite cones.
//! Whatever the solver returns is re-checked by [`constraint_margins`], which
//! evaluates the expressions directly from the variable matrices.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min, max_abs, sorted_svd, Matrix, Vector};

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;
pub const DEFAULT_MAX_RESTARTS: usize = 20;

/// Target margins tried in order; feasible homogeneous problems succeed at
/// the first level, normalized ones usually within two or three.
const MARGIN_LADDER: [f64; 6] = [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
const STAGNATION_WINDOW: usize = 200;
const STAGNATION_REL: f64 = 1e-6;
const ASYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
struct Variable {
    name: String,
    rows: usize,
    cols: usize,
    kind: VarKind,
}

impl Variable {
    fn scalar_count(&self) -> usize {
        match self.kind {
            VarKind::Symmetric => self.rows * (self.rows + 1) / 2,
            VarKind::Full => self.rows * self.cols,
        }
    }

    /// Matrix for the `k`-th scalar coordinate.
    fn basis_element(&self, k: usize) -> Matrix {
        let mut e = Matrix::zeros(self.rows, self.cols);
        match self.kind {
            VarKind::Symmetric => {
                let (i, j) = upper_index(self.rows, k);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
            }
            VarKind::Full => {
                e[(k % self.rows, k / self.rows)] = 1.0;
            }
        }
        e
    }

    fn assemble(&self, coords: &[f64]) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (k, &c) in coords.iter().enumerate() {
            m += self.basis_element(k) * c;
        }
        m
    }
}

fn upper_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row_len = n - i;
        if k < row_len {
            return (i, i + k);
        }
        k -= row_len;
    }
    unreachable!("scalar index out of range")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Positive,
    Negative,
}

impl Definiteness {
    fn sign(self) -> f64 {
        match self {
            Definiteness::Positive => 1.0,
            Definiteness::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Term {
    var: VarId,
    left: Matrix,
    right: Matrix,
    mirrored: bool,
}

/// `constant + Σ left·X·right` (plus the transpose for mirrored terms).
#[derive(Debug, Clone)]
pub struct Constraint {
    name: String,
    size: usize,
    definiteness: Definiteness,
    constant: Matrix,
    terms: Vec<Term>,
}

impl Constraint {
    pub fn new(name: impl Into<String>, size: usize, definiteness: Definiteness) -> Self {
        Self {
            name: name.into(),
            size,
            definiteness,
            constant: Matrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    pub fn positive(name: impl Into<String>, size: usize) -> Self {
        Self::new(name, size, Definiteness::Positive)
    }

    pub fn negative(name: impl Into<String>, size: usize) -> Self {
        Self::new(name, size, Definiteness::Negative)
    }

    /// Adds `left·X·right`, which must be symmetric for every `X`.
    pub fn term(mut self, var: VarId, left: Matrix, right: Matrix) -> Self {
        self.terms.push(Term {
            var,
            left,
            right,
            mirrored: false,
        });
        self
    }

    /// Adds `left·X·right + (left·X·right)ᵀ`.
    pub fn mirrored(mut self, var: VarId, left: Matrix, right: Matrix) -> Self {
        self.terms.push(Term {
            var,
            left,
            right,
            mirrored: true,
        });
        self
    }

    pub fn constant(mut self, c: Matrix) -> Self {
        self.constant = c;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn definiteness(&self) -> Definiteness {
        self.definiteness
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    epsilon: f64,
}

impl LmiProblem {
    pub fn new(epsilon: f64) -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            epsilon,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn symmetric(&mut self, name: impl Into<String>, n: usize) -> VarId {
        self.declare(name.into(), n, n, VarKind::Symmetric)
    }

    pub fn full(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.declare(name.into(), rows, cols, VarKind::Full)
    }

    fn declare(&mut self, name: String, rows: usize, cols: usize, kind: VarKind) -> VarId {
        self.vars.push(Variable {
            name,
            rows,
            cols,
            kind,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add(&mut self, constraint: Constraint) {
        self.constraints.push(constraint);
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn var_name(&self, id: VarId) -> Option<&str> {
        self.vars.get(id.0).map(|v| v.name.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "strictness margin must be positive, got {}",
                self.epsilon
            )));
        }
        if self.constraints.is_empty() {
            return Err(Error::InvalidInput("LMI problem has no constraints".into()));
        }
        for c in &self.constraints {
            if c.size == 0 {
                return Err(Error::InvalidInput(format!(
                    "constraint `{}` is empty",
                    c.name
                )));
            }
            if c.constant.shape() != (c.size, c.size) {
                return Err(Error::mismatch(
                    format!("constant of constraint `{}`", c.name),
                    format!("{0}×{0}", c.size),
                    format!("{}×{}", c.constant.nrows(), c.constant.ncols()),
                ));
            }
            if max_abs(&(&c.constant - c.constant.transpose()))
                > ASYMMETRY_TOL * (1.0 + max_abs(&c.constant))
            {
                return Err(Error::InvalidInput(format!(
                    "constant of constraint `{}` is not symmetric",
                    c.name
                )));
            }
            for t in &c.terms {
                let var = self.vars.get(t.var.0).ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "constraint `{}` references undeclared variable #{}",
                        c.name, t.var.0
                    ))
                })?;
                if t.left.shape() != (c.size, var.rows) || t.right.shape() != (var.cols, c.size) {
                    return Err(Error::mismatch(
                        format!("term in `{}` over `{}`", c.name, var.name),
                        format!(
                            "{}×{} · X({}×{}) · {}×{}",
                            c.size, var.rows, var.rows, var.cols, var.cols, c.size
                        ),
                        format!(
                            "{}×{} · X · {}×{}",
                            t.left.nrows(),
                            t.left.ncols(),
                            t.right.nrows(),
                            t.right.ncols()
                        ),
                    ));
                }
                if !t.mirrored {
                    for k in 0..var.scalar_count() {
                        let img = &t.left * var.basis_element(k) * &t.right;
                        if max_abs(&(&img - img.transpose()))
                            > ASYMMETRY_TOL * (1.0 + max_abs(&img))
                        {
                            return Err(Error::InvalidInput(format!(
                                "term over `{}` in constraint `{}` is not symmetric",
                                var.name, c.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn scalar_count(&self) -> usize {
        self.vars.iter().map(Variable::scalar_count).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.vars.len());
        let mut acc = 0;
        for v in &self.vars {
            out.push(acc);
            acc += v.scalar_count();
        }
        out
    }

    fn assignment_from_coords(&self, coords: &Vector) -> Assignment {
        let offsets = self.offsets();
        let values = self
            .vars
            .iter()
            .zip(offsets)
            .map(|(v, off)| v.assemble(&coords.as_slice()[off..off + v.scalar_count()]))
            .collect();
        Assignment { values }
    }

    /// Evaluates constraint `idx` directly from variable values.
    pub fn evaluate(&self, idx: usize, assignment: &Assignment) -> Matrix {
        let c = &self.constraints[idx];
        let mut out = c.constant.clone();
        for t in &c.terms {
            let prod = &t.left * &assignment.values[t.var.0] * &t.right;
            if t.mirrored {
                out += prod.transpose();
            }
            out += prod;
        }
        out
    }
}

/// Values for every declared variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<Matrix>,
}

impl Assignment {
    pub fn get(&self, id: VarId) -> &Matrix {
        &self.values[id.0]
    }
}

/// Extreme eigenvalue of one constraint: `λ_min` for positive constraints,
/// `λ_max` for negative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMargin {
    pub name: String,
    pub definiteness: Definiteness,
    pub extreme: f64,
}

impl ConstraintMargin {
    /// Signed distance into the required cone (positive means satisfied).
    pub fn slack(&self) -> f64 {
        self.definiteness.sign() * self.extreme
    }
}

/// Fresh eigenvalue check of every constraint.
pub fn constraint_margins(problem: &LmiProblem, assignment: &Assignment) -> Vec<ConstraintMargin> {
    problem
        .constraints
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let value = problem.evaluate(idx, assignment);
            let extreme = match c.definiteness {
                Definiteness::Positive => lambda_min(&value),
                Definiteness::Negative => lambda_max(&value),
            };
            ConstraintMargin {
                name: c.name.clone(),
                definiteness: c.definiteness,
                extreme,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            max_restarts: DEFAULT_MAX_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub assignment: Assignment,
    pub margins: Vec<ConstraintMargin>,
    pub iterations: usize,
}

impl LmiSolution {
    pub fn get(&self, id: VarId) -> &Matrix {
        self.assignment.get(id)
    }

    pub fn min_slack(&self) -> f64 {
        self.margins
            .iter()
            .map(ConstraintMargin::slack)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleReport {
    /// Smallest worst-case violation `max_j (ε - slack_j)` seen.
    pub best_violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub enum LmiOutcome {
    Feasible(LmiSolution),
    Infeasible(InfeasibleReport),
}

impl LmiOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LmiOutcome::Feasible(_))
    }

    /// Converts to a `Result`, labelling infeasibility with `problem`.
    pub fn into_result(self, problem: &str) -> Result<LmiSolution> {
        match self {
            LmiOutcome::Feasible(s) => Ok(s),
            LmiOutcome::Infeasible(r) => Err(Error::Infeasible {
                problem: problem.to_string(),
                best_violation: r.best_violation,
                iterations: r.iterations,
            }),
        }
    }
}

/// Flattened affine map `vars ↦ stacked constraint matrices`.
struct AffineMap {
    sizes: Vec<usize>,
    signs: Vec<f64>,
    offsets: Vec<usize>,
    linear: Matrix,
    constant: Vector,
    pinv: Matrix,
}

impl AffineMap {
    fn build(problem: &LmiProblem) -> Self {
        let sizes: Vec<usize> = problem.constraints.iter().map(|c| c.size).collect();
        let signs = problem
            .constraints
            .iter()
            .map(|c| c.definiteness.sign())
            .collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for s in &sizes {
            offsets.push(total);
            total += s * s;
        }
        let var_offsets = problem.offsets();
        let nv = problem.scalar_count();
        let mut linear = Matrix::zeros(total, nv);
        let mut constant = Vector::zeros(total);
        for (ci, c) in problem.constraints.iter().enumerate() {
            let off = offsets[ci];
            constant
                .rows_mut(off, c.size * c.size)
                .copy_from_slice(c.constant.as_slice());
            for t in &c.terms {
                let var = &problem.vars[t.var.0];
                for k in 0..var.scalar_count() {
                    let mut img = &t.left * var.basis_element(k) * &t.right;
                    if t.mirrored {
                        img += img.transpose();
                    }
                    let col = var_offsets[t.var.0] + k;
                    let mut dst = linear.view_mut((off, col), (c.size * c.size, 1));
                    for (d, s) in dst.iter_mut().zip(img.iter()) {
                        *d += s;
                    }
                }
            }
        }
        let pinv = pseudo_inverse(&linear);
        Self {
            sizes,
            signs,
            offsets,
            linear,
            constant,
            pinv,
        }
    }

    fn block(&self, stacked: &Vector, j: usize) -> Matrix {
        let n = self.sizes[j];
        Matrix::from_column_slice(
            n,
            n,
            &stacked.as_slice()[self.offsets[j]..self.offsets[j] + n * n],
        )
    }
}

fn pseudo_inverse(m: &Matrix) -> Matrix {
    let svd = sorted_svd(m);
    let cutoff = svd.sigma.first().copied().unwrap_or(0.0) * 1e-12;
    let mut out = Matrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            break;
        }
        out += svd.v.column(k) * svd.u.column(k).transpose() / s;
    }
    out
}

enum LevelEnd {
    Solved(Vector),
    Stagnated,
    Exhausted,
}

struct Search<'a> {
    map: &'a AffineMap,
    epsilon: f64,
    used: usize,
    budget: usize,
    best_violation: f64,
}

impl Search<'_> {
    /// Alternating projections toward the cones shifted by `target`, starting
    /// from the cone points `start`.
    fn run_level(&mut self, target: f64, start: Vector, cap: usize) -> (LevelEnd, Vector) {
        let map = self.map;
        let mut cone_point = start;
        let mut last_gap = f64::INFINITY;
        let mut steps = 0;
        while steps < cap && self.used < self.budget {
            steps += 1;
            self.used += 1;
            let coords = &map.pinv * (&cone_point - &map.constant);
            let value = &map.linear * &coords + &map.constant;
            let mut gap = 0.0;
            let mut worst = f64::NEG_INFINITY;
            for j in 0..map.sizes.len() {
                let sign = map.signs[j];
                let block = map.block(&value, j) * sign;
                let block = (&block + block.transpose()) * 0.5;
                let eig = SymmetricEigen::new(block);
                let mut clipped = eig.eigenvalues.clone();
                for (c, &w) in clipped.iter_mut().zip(eig.eigenvalues.iter()) {
                    if w < target {
                        gap += (target - w) * (target - w);
                        *c = target;
                    }
                }
                let lowest = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                worst = worst.max(self.epsilon - lowest);
                let projected = &eig.eigenvectors
                    * nalgebra::DMatrix::from_diagonal(&clipped)
                    * eig.eigenvectors.transpose()
                    * sign;
                let n = map.sizes[j];
                cone_point
                    .rows_mut(map.offsets[j], n * n)
                    .copy_from_slice(projected.as_slice());
            }
            self.best_violation = self.best_violation.min(worst.max(0.0));
            if worst <= 0.0 {
                return (LevelEnd::Solved(coords), cone_point);
            }
            if steps % STAGNATION_WINDOW == 0 {
                if last_gap - gap <= STAGNATION_REL * last_gap {
                    return (LevelEnd::Stagnated, cone_point);
                }
                last_gap = gap;
            }
        }
        (LevelEnd::Exhausted, cone_point)
    }
}

fn shifted_identity(map: &AffineMap, target: f64) -> Vector {
    let mut v = Vector::zeros(map.constant.len());
    for j in 0..map.sizes.len() {
        let n = map.sizes[j];
        let m = Matrix::identity(n, n) * (map.signs[j] * target);
        v.rows_mut(map.offsets[j], n * n)
            .copy_from_slice(m.as_slice());
    }
    v
}

fn random_start(map: &AffineMap, target: f64, rng: &mut ChaCha8Rng) -> Vector {
    let mut v = Vector::zeros(map.constant.len());
    for j in 0..map.sizes.len() {
        let n = map.sizes[j];
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = (&g * g.transpose() + Matrix::identity(n, n)) * (map.signs[j] * target);
        v.rows_mut(map.offsets[j], n * n)
            .copy_from_slice(m.as_slice());
    }
    v
}

/// Searches for a strictly feasible point; every feasible answer is
/// re-verified by [`constraint_margins`] before being returned.
pub fn solve_feasibility(problem: &LmiProblem, options: &SolverOptions) -> Result<LmiOutcome> {
    problem.validate()?;
    let map = AffineMap::build(problem);
    let eps = problem.epsilon;
    let floor = 2.0 * eps;
    let mut levels: Vec<f64> = MARGIN_LADDER
        .iter()
        .copied()
        .filter(|&t| t > floor)
        .collect();
    levels.push(floor);
    let cap = (options.max_iterations / 4).max(STAGNATION_WINDOW);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut search = Search {
        map: &map,
        epsilon: eps,
        used: 0,
        budget: options.max_iterations,
        best_violation: f64::INFINITY,
    };
    let mut restarts = 0;
    let mut warm: Option<Vector> = None;

    for &target in &levels {
        let mut start = match warm.take() {
            Some(prev) => prev,
            None => shifted_identity(&map, target),
        };
        loop {
            if search.used >= search.budget {
                break;
            }
            let (end, last) = search.run_level(target, start, cap);
            match end {
                LevelEnd::Solved(coords) => {
                    let assignment = problem.assignment_from_coords(&coords);
                    let margins = constraint_margins(problem, &assignment);
                    if margins.iter().all(|m| m.slack() >= eps) {
                        return Ok(LmiOutcome::Feasible(LmiSolution {
                            assignment,
                            margins,
                            iterations: search.used,
                        }));
                    }
                    warm = Some(last);
                    break;
                }
                LevelEnd::Stagnated => {
                    warm = Some(last);
                    break;
                }
                LevelEnd::Exhausted => {
                    if restarts >= options.max_restarts {
                        warm = Some(last);
                        break;
                    }
                    restarts += 1;
                    start = random_start(&map, target, &mut rng);
                }
            }
        }
        if search.used >= search.budget {
            break;
        }
    }
    Ok(LmiOutcome::Infeasible(InfeasibleReport {
        best_violation: search.best_violation,
        iterations: search.used,
    }))
}

/// Definiteness margins of a quadratic Lyapunov candidate for a mode family.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovMargins {
    /// `λ_min(Q)`.
    pub positivity: f64,
    /// `λ_max(A_iᵀ Q A_i - Q)` per mode.
    pub decrease: Vec<f64>,
}

impl LyapunovMargins {
    pub fn satisfied(&self, eps: f64) -> bool {
        self.positivity >= eps && self.decrease.iter().all(|&d| d <= -eps)
    }

    pub fn strictly_satisfied(&self) -> bool {
        self.positivity > 0.0 && self.decrease.iter().all(|&d| d < 0.0)
    }

    /// Smallest magnitude by which any requirement is met.
    pub fn worst(&self) -> f64 {
        self.decrease
            .iter()
            .map(|d| -d)
            .fold(self.positivity, f64::min)
    }

    fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.positivity <= 0.0 {
            out.push(format!(
                "λ_min(Q) = {:.4e} is not positive",
                self.positivity
            ));
        }
        for (i, d) in self.decrease.iter().enumerate() {
            if *d >= 0.0 {
                out.push(format!(
                    "mode {}: λ_max(AᵀQA - Q) = {:.4e} is not negative",
                    i + 1,
                    d
                ));
            }
        }
        out
    }
}

/// A verified common quadratic Lyapunov function.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovCertificate {
    pub q: Matrix,
    pub margins: LyapunovMargins,
}

fn check_symmetric(q: &Matrix) -> Result<()> {
    if !q.is_square() {
        return Err(Error::InvalidInput(format!(
            "Lyapunov matrix must be square, got {}×{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = max_abs(q);
    let asym = max_abs(&(q - q.transpose()));
    if asym > ASYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(Error::InvalidInput(format!(
            "Lyapunov matrix is not symmetric (relative asymmetry {:.3e})",
            asym / scale
        )));
    }
    Ok(())
}

pub fn lyapunov_margins(q: &Matrix, modes: &[Matrix]) -> Result<LyapunovMargins> {
    check_symmetric(q)?;
    let n = q.nrows();
    let mut decrease = Vec::with_capacity(modes.len());
    for (i, a) in modes.iter().enumerate() {
        if a.shape() != (n, n) {
            return Err(Error::mismatch(
                format!("mode {} state matrix", i + 1),
                format!("{n}×{n}"),
                format!("{}×{}", a.nrows(), a.ncols()),
            ));
        }
        decrease.push(lambda_max(&(a.transpose() * q * a - q)));
    }
    Ok(LyapunovMargins {
        positivity: lambda_min(q),
        decrease,
    })
}

/// Accepts iff `Q ≻ 0` and `A_iᵀ Q A_i - Q ≺ 0` for every mode.
pub fn verify_common_lyapunov(q: &Matrix, modes: &[Matrix]) -> Result<LyapunovCertificate> {
    let margins = lyapunov_margins(q, modes)?;
    if !margins.strictly_satisfied() {
        return Err(Error::Rejected(margins.failures().join("; ")));
    }
    Ok(LyapunovCertificate {
        q: q.clone(),
        margins,
    })
}

fn selector(total: usize, offset: usize, n: usize) -> Matrix {
    let mut e = Matrix::zeros(total, n);
    e.view_mut((offset, 0), (n, n)).fill_with_identity();
    e
}

fn normalized_lyapunov_var(problem: &mut LmiProblem, name: &str, n: usize) -> VarId {
    let id = problem.symmetric(name, n);
    let id_n = Matrix::identity(n, n);
    problem.add(Constraint::positive(format!("{name} > 0"), n).term(
        id,
        id_n.clone(),
        id_n.clone(),
    ));
    problem.add(
        Constraint::positive(format!("I - {name} > 0"), n)
            .constant(id_n.clone())
            .term(id, -id_n.clone(), id_n),
    );
    id
}

/// Analysis LMI: finds `Q` with `εI ≺ Q ≺ I` and `A_iᵀQA_i - Q ≺ -εI`.
pub fn find_common_lyapunov(
    modes: &[Matrix],
    epsilon: f64,
    options: &SolverOptions,
) -> Result<LyapunovCertificate> {
    let n = modes
        .first()
        .ok_or_else(|| Error::InvalidInput("no modes".into()))?
        .nrows();
    let mut problem = LmiProblem::new(epsilon);
    let q = normalized_lyapunov_var(&mut problem, "Q", n);
    for (i, a) in modes.iter().enumerate() {
        if a.shape() != (n, n) {
            return Err(Error::mismatch(
                format!("mode {} state matrix", i + 1),
                format!("{n}×{n}"),
                format!("{}×{}", a.nrows(), a.ncols()),
            ));
        }
        problem.add(
            Constraint::negative(format!("mode {} decrease", i + 1), n)
                .term(q, a.transpose(), a.clone())
                .term(q, -Matrix::identity(n, n), Matrix::identity(n, n)),
        );
    }
    let solution = solve_feasibility(&problem, options)?.into_result("common Lyapunov analysis")?;
    verify_common_lyapunov(solution.get(q), modes)
}

/// Common Lyapunov matrix and per-mode output injections.
#[derive(Debug, Clone)]
pub struct OutputInjection {
    pub p: Matrix,
    pub gains: Vec<Matrix>,
    /// Certificate for `{Ae_i + G_i Ce_i}` with `Q = P`.
    pub certificate: LyapunovCertificate,
    pub lmi_margins: Vec<ConstraintMargin>,
}

/// Finds `P` and `G_i` making `Ae_i + G_i Ce_i` quadratically stable through
/// the change of variables `W_i = P G_i`.
pub fn synth_output_injection(
    modes: &[(Matrix, Matrix)],
    epsilon: f64,
    options: &SolverOptions,
) -> Result<OutputInjection> {
    let (a0, c0) = modes
        .first()
        .ok_or_else(|| Error::InvalidInput("no modes".into()))?;
    let n = a0.nrows();
    let p_out = c0.nrows();
    let mut problem = LmiProblem::new(epsilon);
    let p = normalized_lyapunov_var(&mut problem, "P", n);
    let top = selector(2 * n, 0, n);
    let bottom = selector(2 * n, n, n);
    let mut w_ids = Vec::with_capacity(modes.len());
    for (i, (a, c)) in modes.iter().enumerate() {
        if a.shape() != (n, n) || c.shape() != (p_out, n) {
            return Err(Error::mismatch(
                format!("mode {} (Ae, Ce)", i + 1),
                format!("{n}×{n}, {p_out}×{n}"),
                format!("{}×{}, {}×{}", a.nrows(), a.ncols(), c.nrows(), c.ncols()),
            ));
        }
        let w = problem.full(format!("W{}", i + 1), n, p_out);
        w_ids.push(w);
        problem.add(
            Constraint::negative(format!("mode {} injection", i + 1), 2 * n)
                .term(p, -top.clone(), top.transpose())
                .term(p, -bottom.clone(), bottom.transpose())
                .mirrored(p, bottom.clone(), a * top.transpose())
                .mirrored(w, bottom.clone(), c * top.transpose()),
        );
    }
    let solution =
        solve_feasibility(&problem, options)?.into_result("output injection synthesis")?;
    let p_val = solution.get(p).clone();
    let p_inv = p_val
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Rejected("Lyapunov matrix P is singular".into()))?;
    let gains: Vec<Matrix> = w_ids.iter().map(|&w| &p_inv * solution.get(w)).collect();
    let closed: Vec<Matrix> = modes
        .iter()
        .zip(&gains)
        .map(|((a, c), g)| a + g * c)
        .collect();
    let certificate = verify_common_lyapunov(&p_val, &closed)?;
    Ok(OutputInjection {
        p: p_val,
        gains,
        certificate,
        lmi_margins: solution.margins,
    })
}

/// Common Lyapunov matrix `Q = S⁻¹` and per-mode state feedbacks.
#[derive(Debug, Clone)]
pub struct StateFeedback {
    pub s: Matrix,
    pub gains: Vec<Matrix>,
    /// Certificate for `{A_i + B_i F_i}` with `Q = S⁻¹`.
    pub certificate: LyapunovCertificate,
    pub lmi_margins: Vec<ConstraintMargin>,
}

/// Finds `S` and `F_i` making `A_i + B_i F_i` quadratically stable through
/// the dual change of variables `M_i = F_i S`.
pub fn synth_state_feedback(
    modes: &[(Matrix, Matrix)],
    epsilon: f64,
    options: &SolverOptions,
) -> Result<StateFeedback> {
    let (a0, b0) = modes
        .first()
        .ok_or_else(|| Error::InvalidInput("no modes".into()))?;
    let n = a0.nrows();
    let m = b0.ncols();
    let mut problem = LmiProblem::new(epsilon);
    let s = normalized_lyapunov_var(&mut problem, "S", n);
    let top = selector(2 * n, 0, n);
    let bottom = selector(2 * n, n, n);
    let mut m_ids = Vec::with_capacity(modes.len());
    for (i, (a, b)) in modes.iter().enumerate() {
        if a.shape() != (n, n) || b.shape() != (n, m) {
            return Err(Error::mismatch(
                format!("mode {} (A, B)", i + 1),
                format!("{n}×{n}, {n}×{m}"),
                format!("{}×{}, {}×{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
            ));
        }
        let mv = problem.full(format!("M{}", i + 1), m, n);
        m_ids.push(mv);
        problem.add(
            Constraint::negative(format!("mode {} feedback", i + 1), 2 * n)
                .term(s, -top.clone(), top.transpose())
                .term(s, -bottom.clone(), bottom.transpose())
                .mirrored(s, &bottom * a, top.transpose())
                .mirrored(mv, &bottom * b, top.transpose()),
        );
    }
    let solution = solve_feasibility(&problem, options)?.into_result("state feedback synthesis")?;
    let s_val = solution.get(s).clone();
    let s_inv = s_val
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Rejected("Lyapunov matrix S is singular".into()))?;
    let gains: Vec<Matrix> = m_ids.iter().map(|&mv| solution.get(mv) * &s_inv).collect();
    let closed: Vec<Matrix> = modes
        .iter()
        .zip(&gains)
        .map(|((a, b), f)| a + b * f)
        .collect();
    let q = crate::linalg::symmetrize(&s_inv);
    let certificate = verify_common_lyapunov(&q, &closed)?;
    Ok(StateFeedback {
        s: s_val,
        gains,
        certificate,
        lmi_margins: solution.margins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn analysis_contraction_feasible() {
        let a = Matrix::identity(2, 2) * 0.5;
        let cert =
            find_common_lyapunov(std::slice::from_ref(&a), DEFAULT_EPSILON, &opts()).unwrap();
        assert!(cert.margins.satisfied(DEFAULT_EPSILON));
        // Q = I is admissible as well.
        assert!(verify_common_lyapunov(&Matrix::identity(2, 2), &[a]).is_ok());
    }

    #[test]
    fn analysis_identity_infeasible() {
        let err =
            find_common_lyapunov(&[Matrix::identity(2, 2)], DEFAULT_EPSILON, &opts()).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }), "{err}");
    }

    #[test]
    fn analysis_worked_plant_feasible() {
        let (plant, _) = fixture::example_problem();
        let cert = find_common_lyapunov(&plant.state_matrices(), DEFAULT_EPSILON, &opts()).unwrap();
        assert!(cert.margins.satisfied(DEFAULT_EPSILON));
    }

    #[test]
    fn verify_examples() {
        let (plant, _) = fixture::example_problem();
        let q = fixture::example_reference().q;
        let cert = verify_common_lyapunov(&q, &plant.state_matrices()).unwrap();
        assert!(cert.margins.positivity > 0.0);

        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.1]);
        let err = verify_common_lyapunov(&Matrix::identity(2, 2), &[a]).unwrap_err();
        assert!(err.to_string().contains("mode 1"), "{err}");

        let err =
            verify_common_lyapunov(&(-Matrix::identity(2, 2)), &[Matrix::zeros(2, 2)]).unwrap_err();
        assert!(err.to_string().contains("λ_min"), "{err}");

        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            verify_common_lyapunov(&asym, &[Matrix::zeros(2, 2)]).unwrap_err(),
            Error::InvalidInput(_)
        ));
    }

    #[test]
    fn acceptance_scales_with_q() {
        let (plant, _) = fixture::example_problem();
        let q = fixture::example_reference().q;
        let base = lyapunov_margins(&q, &plant.state_matrices()).unwrap();
        for alpha in [1.0, 2.0, 10.0] {
            let scaled = lyapunov_margins(&(&q * alpha), &plant.state_matrices()).unwrap();
            assert!(scaled.strictly_satisfied());
            assert!((scaled.positivity - alpha * base.positivity).abs() < 1e-9 * alpha);
            for (s, b) in scaled.decrease.iter().zip(&base.decrease) {
                assert!((s - alpha * b).abs() < 1e-9 * alpha);
            }
        }
    }

    #[test]
    fn output_injection_examples() {
        let stable =
            synth_output_injection(&[(scalar(0.5), scalar(0.0))], DEFAULT_EPSILON, &opts())
                .unwrap();
        assert!(stable.certificate.margins.strictly_satisfied());

        let err = synth_output_injection(&[(scalar(2.0), scalar(0.0))], DEFAULT_EPSILON, &opts())
            .unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn state_feedback_examples() {
        let zero = synth_state_feedback(
            &[(Matrix::zeros(2, 2), Matrix::identity(2, 2))],
            DEFAULT_EPSILON,
            &opts(),
        )
        .unwrap();
        assert!(zero.certificate.margins.strictly_satisfied());

        let err = synth_state_feedback(&[(scalar(2.0), scalar(0.0))], DEFAULT_EPSILON, &opts())
            .unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));

        // An unstable but controllable scalar mode needs a nonzero gain.
        let fb = synth_state_feedback(
            &[(scalar(2.0), scalar(1.0)), (scalar(1.5), scalar(1.0))],
            DEFAULT_EPSILON,
            &opts(),
        )
        .unwrap();
        assert!((2.0 + fb.gains[0][0]).abs() < 1.0);
        assert!((1.5 + fb.gains[1][0]).abs() < 1.0);
    }

    #[test]
    fn example_plant_state_feedback_feasible() {
        let (plant, _) = fixture::example_problem();
        let modes: Vec<_> = plant
            .modes()
            .iter()
            .map(|m| (m.a.clone(), m.b.clone()))
            .collect();
        let fb = synth_state_feedback(&modes, DEFAULT_EPSILON, &opts()).unwrap();
        assert!(fb.certificate.margins.strictly_satisfied());
        // The zero feedback is admissible because the plant is already stable.
        assert!(
            verify_common_lyapunov(&fixture::example_reference().q, &plant.state_matrices())
                .is_ok()
        );
    }

    #[test]
    fn margins_reproducible_and_deterministic() {
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.5, 0.0, 0.8]);
        let mut problem = LmiProblem::new(DEFAULT_EPSILON);
        let q = problem.symmetric("Q", 2);
        problem.add(Constraint::positive("Q", 2).term(
            q,
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
        ));
        problem.add(
            Constraint::negative("decrease", 2)
                .term(q, a.transpose(), a.clone())
                .term(q, -Matrix::identity(2, 2), Matrix::identity(2, 2)),
        );
        let s1 = match solve_feasibility(&problem, &opts()).unwrap() {
            LmiOutcome::Feasible(s) => s,
            LmiOutcome::Infeasible(r) => panic!("unexpected infeasibility {r:?}"),
        };
        let again = constraint_margins(&problem, &s1.assignment);
        for (x, y) in again.iter().zip(&s1.margins) {
            assert!((x.extreme - y.extreme).abs() <= 1e-10);
        }
        let s2 = match solve_feasibility(&problem, &opts()).unwrap() {
            LmiOutcome::Feasible(s) => s,
            LmiOutcome::Infeasible(_) => unreachable!(),
        };
        assert_eq!(s1.assignment, s2.assignment);
    }

    #[test]
    fn duality_sanity_single_stable_mode() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, -0.7]);
        assert!(find_common_lyapunov(std::slice::from_ref(&a), DEFAULT_EPSILON, &opts()).is_ok());
        assert!(synth_output_injection(
            &[(a.clone(), Matrix::zeros(1, 2))],
            DEFAULT_EPSILON,
            &opts()
        )
        .is_ok());
        assert!(
            synth_state_feedback(&[(a, Matrix::zeros(2, 1))], DEFAULT_EPSILON, &opts()).is_ok()
        );
    }

    #[test]
    fn malformed_problems_rejected() {
        let mut problem = LmiProblem::new(DEFAULT_EPSILON);
        let x = problem.full("X", 2, 1);
        // X·[1] is not symmetric as a 2×2 expression.
        problem.add(Constraint::positive("bad", 2).term(
            x,
            Matrix::identity(2, 2),
            Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
        ));
        assert!(matches!(
            solve_feasibility(&problem, &opts()),
            Err(Error::InvalidInput(_))
        ));

        let mut problem = LmiProblem::new(DEFAULT_EPSILON);
        let q = problem.symmetric("Q", 2);
        problem.add(Constraint::positive("shape", 3).term(
            q,
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
        ));
        assert!(matches!(
            solve_feasibility(&problem, &opts()),
            Err(Error::DimensionMismatch { .. })
        ));

        assert!(matches!(
            solve_feasibility(&LmiProblem::new(DEFAULT_EPSILON), &opts()),
            Err(Error::InvalidInput(_))
        ));
        assert!(LmiProblem::new(-1.0).validate().is_err());
    }

    #[test]
    fn over_strict_margin_is_infeasible() {
        let (plant, _) = fixture::example_problem();
        assert!(find_common_lyapunov(&plant.state_matrices(), 0.5, &opts()).is_err());
    }
}
