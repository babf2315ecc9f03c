//! Smooth objectives `Ψ = f + h` with a (possibly) nonconvex part `f` and a
//! convex part `h`, each carrying an analytic Lipschitz constant for its gradient.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Result};
use crate::linalg::{self, all_finite};

/// A differentiable summand of `Ψ`.
pub trait SmoothTerm: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;

    /// Returns the value at `x` and adds the gradient into `grad`.
    fn accumulate(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// `½ xᵀAx − bᵀx` with symmetric positive semidefinite `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    eig_min: f64,
    eig_max: f64,
}

impl Quadratic {
    /// `a` is row-major `n x n`.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 || a.len() != n * n {
            return Err(invalid(format!("quadratic: A must be {n}x{n} to match b")));
        }
        if !all_finite(&a) || !all_finite(&b) {
            return Err(invalid("quadratic: non-finite coefficients"));
        }
        let eig = linalg::symmetric_eigenvalues(&a, n)?;
        let (eig_min, eig_max) = (eig[0], eig[n - 1]);
        if eig_min < -1e-12 * eig_max.abs().max(1.0) {
            return Err(invalid(format!(
                "quadratic: A must be positive semidefinite (smallest eigenvalue {eig_min})"
            )));
        }
        Ok(Self {
            dim: n,
            a,
            b,
            eig_min: eig_min.max(0.0),
            eig_max: eig_max.max(0.0),
        })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            a[i * n + i] = *d;
        }
        Self::new(a, b)
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.eig_min
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.eig_max
    }

    /// Diagonal of `A` when `A` has no off-diagonal entries.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let n = self.dim;
        let off_zero = (0..n).all(|i| (0..n).all(|j| i == j || self.a[i * n + j] == 0.0));
        off_zero.then(|| (0..n).map(|i| self.a[i * n + i]).collect())
    }

    /// Unique minimizer and minimum value when `A` is positive definite.
    pub fn minimizer(&self) -> Option<(Vec<f64>, f64)> {
        let x = linalg::cholesky_solve(&self.a, &self.b)?;
        let value = -0.5 * linalg::dot(&self.b, &x);
        Some((x, value))
    }
}

impl SmoothTerm for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lipschitz(&self) -> f64 {
        self.eig_max
    }

    fn accumulate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.dim;
        let mut value = 0.0;
        for i in 0..n {
            let ax = linalg::dot(&self.a[i * n..(i + 1) * n], x);
            grad[i] += ax - self.b[i];
            value += x[i] * (0.5 * ax - self.b[i]);
        }
        value
    }
}

/// `scale · Σ ψ(x_i)` with the bounded-curvature sigmoid `ψ(t) = t²/(1+t²)`.
///
/// `ψ''(t) = (2 − 6t²)/(1+t²)³` attains its largest magnitude 2 at `t = 0`, so the
/// gradient Lipschitz constant is `2·scale`. The term is nonconvex for `|t| > 1/√3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidalSum {
    dim: usize,
    scale: f64,
}

impl SigmoidalSum {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("sigmoidal_sum: dim must be positive"));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(invalid(
                "sigmoidal_sum: scale must be finite and nonnegative",
            ));
        }
        Ok(Self { dim, scale })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl SmoothTerm for SigmoidalSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lipschitz(&self) -> f64 {
        2.0 * self.scale
    }

    fn accumulate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for (g, &t) in grad.iter_mut().zip(x) {
            let d = 1.0 + t * t;
            value += t * t / d;
            *g += self.scale * 2.0 * t / (d * d);
        }
        self.scale * value
    }
}

/// Lipschitz constants of `∇f`, `∇h` and `∇Ψ`, with `l_psi = l_f + l_h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    pub l_f: f64,
    pub l_h: f64,
    pub l_psi: f64,
}

/// The smooth objective consumed by every algorithm.
#[derive(Clone)]
pub struct SmoothProblem {
    name: String,
    dim: usize,
    nonconvex: Option<Arc<dyn SmoothTerm>>,
    convex: Option<Arc<dyn SmoothTerm>>,
    l_f: f64,
    l_h: f64,
    psi_star: Option<f64>,
    x_star: Option<Vec<f64>>,
    is_convex: bool,
    separable: Option<(Vec<f64>, Vec<f64>)>,
}

impl fmt::Debug for SmoothProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("l_f", &self.l_f)
            .field("l_h", &self.l_h)
            .field("psi_star", &self.psi_star)
            .field("is_convex", &self.is_convex)
            .finish()
    }
}

impl SmoothProblem {
    /// An identically zero objective on `ℝ^dim`; add terms with the `with_*` methods.
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("problem dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            nonconvex: None,
            convex: None,
            l_f: 0.0,
            l_h: 0.0,
            psi_star: None,
            x_star: None,
            is_convex: true,
            separable: None,
        })
    }

    /// Sets the nonconvex part `f`; `L_f` is taken from the term.
    pub fn with_nonconvex(mut self, term: Arc<dyn SmoothTerm>) -> Result<Self> {
        self.check_term_dim(term.as_ref())?;
        self.l_f = term.lipschitz();
        self.nonconvex = Some(term);
        self.is_convex = false;
        Ok(self)
    }

    /// Sets the convex part `h`; `L_h` is taken from the term.
    pub fn with_convex(mut self, term: Arc<dyn SmoothTerm>) -> Result<Self> {
        self.check_term_dim(term.as_ref())?;
        self.l_h = term.lipschitz();
        self.convex = Some(term);
        Ok(self)
    }

    pub fn with_optimum(mut self, psi_star: f64, x_star: Option<Vec<f64>>) -> Result<Self> {
        if let Some(x) = &x_star {
            if x.len() != self.dim {
                return Err(invalid("x_star dimension mismatch"));
            }
        }
        self.psi_star = Some(psi_star);
        self.x_star = x_star;
        Ok(self)
    }

    pub fn with_convexity(mut self, is_convex: bool) -> Self {
        self.is_convex = is_convex;
        self
    }

    fn check_term_dim(&self, term: &dyn SmoothTerm) -> Result<()> {
        if term.dim() != self.dim {
            return Err(invalid(format!(
                "term dimension {} does not match problem dimension {}",
                term.dim(),
                self.dim
            )));
        }
        if !(term.lipschitz().is_finite() && term.lipschitz() >= 0.0) {
            return Err(invalid(
                "Lipschitz constants must be finite and nonnegative",
            ));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l_f(&self) -> f64 {
        self.l_f
    }

    pub fn l_h(&self) -> f64 {
        self.l_h
    }

    pub fn l_psi(&self) -> f64 {
        self.l_f + self.l_h
    }

    pub fn lipschitz_constants(&self) -> LipschitzConstants {
        LipschitzConstants {
            l_f: self.l_f,
            l_h: self.l_h,
            l_psi: self.l_psi(),
        }
    }

    pub fn psi_star(&self) -> Option<f64> {
        self.psi_star
    }

    pub fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    pub fn is_convex(&self) -> bool {
        self.is_convex
    }

    /// `(diag(A), b)` when `Ψ(x) = ½ xᵀ diag(A) x − bᵀx`.
    pub fn separable_quadratic(&self) -> Option<(&[f64], &[f64])> {
        self.separable
            .as_ref()
            .map(|(d, b)| (d.as_slice(), b.as_slice()))
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "point has dimension {}, problem has dimension {}",
                x.len(),
                self.dim
            )));
        }
        if !all_finite(x) {
            return Err(invalid("point has non-finite entries"));
        }
        Ok(())
    }

    /// `(Ψ(x), ∇Ψ(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_point(x)?;
        let mut grad = vec![0.0; self.dim];
        let value = self.eval_into(x, &mut grad);
        Ok((value, grad))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut scratch = vec![0.0; self.dim];
        Ok(self.eval_into(x, &mut scratch))
    }

    /// Unchecked evaluation: overwrites `grad` with `∇Ψ(x)` and returns `Ψ(x)`.
    /// Both slices must have length `dim`.
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut value = 0.0;
        if let Some(f) = &self.nonconvex {
            value += f.accumulate(x, grad);
        }
        if let Some(h) = &self.convex {
            value += h.accumulate(x, grad);
        }
        value
    }
}

/// Named problem families with analytic constants.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)
)]
pub enum ProblemSpec {
    /// `½ xᵀAx − bᵀx` with `A` given by rows.
    Quadratic { a: Vec<Vec<f64>>, b: Vec<f64> },
    /// Rotated quadratic with spectrum log-spaced in `[1, cond]`, minimized at 0.
    IllConditionedQuadratic { cond: f64, dim: usize },
    /// `scale · Σ x_i²/(1+x_i²)`.
    SigmoidalSum { scale: f64, dim: usize },
    /// `½ xᵀQx + a · Σ x_i²/(1+x_i²)`.
    QuadraticPlusSigmoidal { q: Vec<Vec<f64>>, a: f64 },
}

impl ProblemSpec {
    pub fn identity_quadratic(dim: usize) -> Self {
        ProblemSpec::Quadratic {
            a: identity_rows(dim),
            b: vec![0.0; dim],
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::IllConditionedQuadratic { .. } => "ill_conditioned_quadratic",
            ProblemSpec::SigmoidalSum { .. } => "sigmoidal_sum",
            ProblemSpec::QuadraticPlusSigmoidal { .. } => "quadratic_plus_sigmoidal",
        }
    }
}

pub(crate) fn identity_rows(dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn flatten_rows(rows: &[Vec<f64>], what: &str) -> Result<Vec<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!(
            "{what}: matrix must be square and non-empty"
        )));
    }
    Ok(rows.iter().flatten().copied().collect())
}

/// Names accepted by [`make_problem_by_name`] and the config loader.
pub const FAMILIES: [&str; 4] = [
    "quadratic",
    "ill_conditioned_quadratic",
    "sigmoidal_sum",
    "quadratic_plus_sigmoidal",
];

/// Default member of a named family (unit scales, identity `Q`, `cond = 10⁴`).
pub fn make_problem_by_name(family: &str, dim: usize) -> Result<SmoothProblem> {
    let spec = match family {
        "quadratic" => ProblemSpec::identity_quadratic(dim),
        "ill_conditioned_quadratic" => ProblemSpec::IllConditionedQuadratic { cond: 1e4, dim },
        "sigmoidal_sum" => ProblemSpec::SigmoidalSum { scale: 1.0, dim },
        "quadratic_plus_sigmoidal" => ProblemSpec::QuadraticPlusSigmoidal {
            q: identity_rows(dim),
            a: 1.0,
        },
        other => return Err(invalid(format!("unknown problem family `{other}`"))),
    };
    make_problem(&spec)
}

pub fn make_problem(spec: &ProblemSpec) -> Result<SmoothProblem> {
    match spec {
        ProblemSpec::Quadratic { a, b } => {
            let flat = flatten_rows(a, "quadratic")?;
            let quad = Quadratic::new(flat, b.clone())?;
            let dim = b.len();
            let separable = quad.as_diagonal().map(|d| (d, b.clone()));
            let optimum = quad.minimizer();
            let mut problem = SmoothProblem::new("quadratic", dim)?.with_convex(Arc::new(quad))?;
            if let Some((x, v)) = optimum {
                problem = problem.with_optimum(v, Some(x))?;
            }
            problem.separable = separable;
            Ok(problem)
        }
        ProblemSpec::IllConditionedQuadratic { cond, dim } => {
            let (cond, n) = (*cond, *dim);
            if !(cond.is_finite() && cond >= 1.0) {
                return Err(invalid("ill_conditioned_quadratic: cond must be >= 1"));
            }
            if n == 0 || (n == 1 && cond != 1.0) {
                return Err(invalid(
                    "ill_conditioned_quadratic: dim must be >= 2 when cond > 1",
                ));
            }
            let quad = Quadratic::new(rotated_spectrum(cond, n), vec![0.0; n])?;
            SmoothProblem::new("ill_conditioned_quadratic", n)?
                .with_convex(Arc::new(FixedLipschitz {
                    term: quad,
                    lipschitz: cond,
                }))?
                .with_optimum(0.0, Some(vec![0.0; n]))
        }
        ProblemSpec::SigmoidalSum { scale, dim } => {
            if !(*scale > 0.0) {
                return Err(invalid("sigmoidal_sum: scale must be positive"));
            }
            SmoothProblem::new("sigmoidal_sum", *dim)?
                .with_nonconvex(Arc::new(SigmoidalSum::new(*dim, *scale)?))?
                .with_optimum(0.0, Some(vec![0.0; *dim]))
        }
        ProblemSpec::QuadraticPlusSigmoidal { q, a } => {
            if !(a.is_finite() && *a >= 0.0) {
                return Err(invalid(
                    "quadratic_plus_sigmoidal: a must be finite and nonnegative",
                ));
            }
            let flat = flatten_rows(q, "quadratic_plus_sigmoidal")?;
            let dim = q.len();
            let quad = Quadratic::new(flat, vec![0.0; dim])?;
            let mut problem =
                SmoothProblem::new("quadratic_plus_sigmoidal", dim)?.with_convex(Arc::new(quad))?;
            if *a > 0.0 {
                problem = problem.with_nonconvex(Arc::new(SigmoidalSum::new(dim, *a)?))?;
            }
            // Both summands are nonnegative and vanish at the origin.
            problem.with_optimum(0.0, Some(vec![0.0; dim]))
        }
    }
}

/// `H diag(λ) H` with `λ_i = cond^{i/(n-1)}` and the Householder reflector
/// `H = I − 2vvᵀ/‖v‖²`, `v = (1, 2, …, n)`.
fn rotated_spectrum(cond: f64, n: usize) -> Vec<f64> {
    let lambdas: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                1.0
            } else {
                libm::pow(cond, i as f64 / (n - 1) as f64)
            }
        })
        .collect();
    let v: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    let vv = linalg::norm_sq(&v);
    let h = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..n).map(|k| h(i, k) * lambdas[k] * h(k, j)).sum();
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    a
}

/// A term whose declared Lipschitz constant is fixed analytically.
#[derive(Debug)]
struct FixedLipschitz<T> {
    term: T,
    lipschitz: f64,
}

impl<T: SmoothTerm> SmoothTerm for FixedLipschitz<T> {
    fn dim(&self) -> usize {
        self.term.dim()
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn accumulate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.term.accumulate(x, grad)
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.family())
    }
}
