//! Simple convex composite terms `X`, their exact prox mappings
//!
//! ```text
//! P(x, y, c) = argmin_u ⟨y, u⟩ + ‖u − x‖²/(2c) + X(u)
//! ```
//!
//! and the gradient mapping `G(x, y, c) = (x − P(x, y, c))/c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{invalid, Result};
use crate::linalg::{self, all_finite};

/// A value in `ℝ ∪ {+∞}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::PosInfinity => None,
        }
    }
}

impl core::ops::Add<f64> for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: f64) -> ExtendedReal {
        match self {
            ExtendedReal::Finite(v) => ExtendedReal::Finite(v + rhs),
            ExtendedReal::PosInfinity => ExtendedReal::PosInfinity,
        }
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::PosInfinity => f.write_str("+inf"),
        }
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(invalid("box bounds must be non-empty and of equal length"));
        }
        if !all_finite(&lo) || !all_finite(&hi) {
            return Err(invalid("box bounds must be finite"));
        }
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(invalid(format!("empty box: lo > hi in coordinate {i}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    #[inline]
    fn clip(&self, i: usize, v: f64) -> f64 {
        v.max(self.lo[i]).min(self.hi[i])
    }

    /// `sup_{u ∈ box} ‖u‖`.
    pub fn max_norm(&self) -> f64 {
        libm::sqrt(
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(l, h)| f64::max(l * l, h * h))
                .sum(),
        )
    }

    /// `max_i max(|lo_i|, |hi_i|)`.
    pub fn max_abs(&self) -> f64 {
        self.lo
            .iter()
            .chain(&self.hi)
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// The nonsmooth convex term `X`.
#[derive(Debug, Clone, PartialEq)]
pub enum CompositeTerm {
    Zero,
    /// Indicator of a box.
    BoxIndicator(BoxBounds),
    /// Box indicator plus `weight·‖x‖₁`.
    BoxPlusL1 {
        bounds: BoxBounds,
        weight: f64,
    },
}

/// Value record of `G(x, y, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMapping {
    pub vector: Vec<f64>,
    pub prox_point: Vec<f64>,
    pub c: f64,
}

impl GradientMapping {
    pub fn norm(&self) -> f64 {
        linalg::norm(&self.vector)
    }
}

impl CompositeTerm {
    pub fn box_indicator(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        Ok(CompositeTerm::BoxIndicator(BoxBounds::new(lo, hi)?))
    }

    pub fn box_plus_l1(lo: Vec<f64>, hi: Vec<f64>, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(invalid("l1 weight must be finite and nonnegative"));
        }
        Ok(CompositeTerm::BoxPlusL1 {
            bounds: BoxBounds::new(lo, hi)?,
            weight,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CompositeTerm::Zero => "zero",
            CompositeTerm::BoxIndicator(_) => "box_indicator",
            CompositeTerm::BoxPlusL1 { .. } => "box_plus_l1",
        }
    }

    pub fn bounds(&self) -> Option<&BoxBounds> {
        match self {
            CompositeTerm::Zero => None,
            CompositeTerm::BoxIndicator(b) | CompositeTerm::BoxPlusL1 { bounds: b, .. } => Some(b),
        }
    }

    fn weight(&self) -> f64 {
        match self {
            CompositeTerm::BoxPlusL1 { weight, .. } => *weight,
            _ => 0.0,
        }
    }

    /// Analytic bound `M ≥ ‖P(x, y, c)‖`; `None` for the unbounded zero term.
    pub fn bound_m(&self) -> Option<f64> {
        self.bounds().map(BoxBounds::max_norm)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds().is_none_or(|b| b.contains(x))
    }

    /// `X(x)`, `+∞` outside the domain.
    pub fn value(&self, x: &[f64]) -> ExtendedReal {
        match self {
            CompositeTerm::Zero => ExtendedReal::Finite(0.0),
            CompositeTerm::BoxIndicator(b) if b.contains(x) => ExtendedReal::Finite(0.0),
            CompositeTerm::BoxPlusL1 { bounds, weight } if bounds.contains(x) => {
                ExtendedReal::Finite(weight * x.iter().map(|v| v.abs()).sum::<f64>())
            }
            _ => ExtendedReal::PosInfinity,
        }
    }

    fn check_args(&self, x: &[f64], y: &[f64], c: f64) -> Result<()> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!(
                "prox parameter c must be positive and finite, got {c}"
            )));
        }
        if x.len() != y.len() {
            return Err(invalid("prox: x and y differ in dimension"));
        }
        if let Some(b) = self.bounds() {
            if b.dim() != x.len() {
                return Err(invalid(format!(
                    "prox: term has dimension {}, point has dimension {}",
                    b.dim(),
                    x.len()
                )));
            }
        }
        if !all_finite(x) || !all_finite(y) {
            return Err(invalid("prox: non-finite input"));
        }
        Ok(())
    }

    /// `P(x, y, c)`.
    pub fn prox(&self, x: &[f64], y: &[f64], c: f64) -> Result<Vec<f64>> {
        self.check_args(x, y, c)?;
        let mut out = vec![0.0; x.len()];
        self.prox_into(x, y, c, &mut out);
        Ok(out)
    }

    /// Unchecked [`prox`](Self::prox) writing into `out`.
    ///
    /// The prox objective is separable: per coordinate it minimizes
    /// `(u − z)²/(2c) + w|u|` over `[lo, hi]` with `z = x − c·y`, whose solution is
    /// soft-thresholding of `z` at `c·w` clipped to the box.
    pub fn prox_into(&self, x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
        for i in 0..x.len() {
            let z = x[i] - c * y[i];
            out[i] = match self {
                CompositeTerm::Zero => z,
                CompositeTerm::BoxIndicator(b) => b.clip(i, z),
                CompositeTerm::BoxPlusL1 { bounds, weight } => {
                    bounds.clip(i, soft_threshold(z, c * weight))
                }
            };
        }
    }

    /// `G(x, y, c)` together with the prox point.
    pub fn gradient_mapping(&self, x: &[f64], y: &[f64], c: f64) -> Result<GradientMapping> {
        let prox_point = self.prox(x, y, c)?;
        let vector = x
            .iter()
            .zip(&prox_point)
            .map(|(xi, pi)| (xi - pi) / c)
            .collect();
        Ok(GradientMapping {
            vector,
            prox_point,
            c,
        })
    }

    /// Euclidean distance from `v` to the subdifferential `∂X(u)`.
    ///
    /// `∂X(u)` is a product of intervals for every shipped kind, so the distance is
    /// computed coordinatewise. Returns `+∞` when `u` is outside the domain.
    pub fn subdifferential_distance(&self, u: &[f64], v: &[f64]) -> f64 {
        if !self.contains(u) {
            return f64::INFINITY;
        }
        let w = self.weight();
        let mut acc = 0.0;
        for i in 0..u.len() {
            let (mut lo, mut hi) = match u[i] {
                t if t > 0.0 => (w, w),
                t if t < 0.0 => (-w, -w),
                _ => (-w, w),
            };
            if let Some(b) = self.bounds() {
                if u[i] <= b.lo[i] {
                    lo = f64::NEG_INFINITY;
                }
                if u[i] >= b.hi[i] {
                    hi = f64::INFINITY;
                }
            }
            let d = if v[i] < lo {
                lo - v[i]
            } else if v[i] > hi {
                v[i] - hi
            } else {
                0.0
            };
            acc += d * d;
        }
        libm::sqrt(acc)
    }

    /// Residual of the prox optimality condition `0 ∈ y + (u − x)/c + ∂X(u)`.
    pub fn prox_optimality_residual(&self, x: &[f64], y: &[f64], c: f64, u: &[f64]) -> f64 {
        let v: Vec<f64> = (0..u.len()).map(|i| -(y[i] + (u[i] - x[i]) / c)).collect();
        self.subdifferential_distance(u, &v)
    }
}

pub fn prox_map(term: &CompositeTerm, x: &[f64], y: &[f64], c: f64) -> Result<Vec<f64>> {
    term.prox(x, y, c)
}

pub fn gradient_mapping(
    term: &CompositeTerm,
    x: &[f64],
    y: &[f64],
    c: f64,
) -> Result<GradientMapping> {
    term.gradient_mapping(x, y, c)
}

pub fn composite_value(term: &CompositeTerm, x: &[f64]) -> ExtendedReal {
    term.value(x)
}

#[inline]
pub fn soft_threshold(z: f64, level: f64) -> f64 {
    if z > level {
        z - level
    } else if z < -level {
        z + level
    } else {
        0.0
    }
}

/// Radius `ε(c·L_Ψ + 1)` of the ball certifying approximate stationarity of the
/// prox point when `‖G(x, ∇Ψ(x), c)‖ ≤ ε`:
/// `−∇Ψ(P) ∈ ∂X(P) + B(radius)`.
pub fn stationarity_radius(c: f64, l_psi: f64, eps: f64) -> Result<f64> {
    if !(c > 0.0) || !(l_psi > 0.0) || !(eps >= 0.0) {
        return Err(invalid(
            "stationarity_radius requires c > 0, L_psi > 0, eps >= 0",
        ));
    }
    Ok(eps * (c * l_psi + 1.0))
}

/// Minimizer and minimum of `Φ = Ψ + X` when `Ψ(x) = ½ xᵀdiag(a)x − bᵀx`
/// with `a > 0`: coordinatewise `clip(soft(b_i, w)/a_i)`.
pub fn separable_quadratic_optimum(
    diag: &[f64],
    b: &[f64],
    term: &CompositeTerm,
) -> Option<(Vec<f64>, f64)> {
    if diag.iter().any(|a| *a <= 0.0) {
        return None;
    }
    let w = term.weight();
    let x: Vec<f64> = (0..diag.len())
        .map(|i| {
            let u = soft_threshold(b[i], w) / diag[i];
            term.bounds().map_or(u, |bx| bx.clip(i, u))
        })
        .collect();
    let psi: f64 = (0..diag.len())
        .map(|i| 0.5 * diag[i] * x[i] * x[i] - b[i] * x[i])
        .sum();
    let phi = term.value(&x).finite()? + psi;
    Some((x, phi))
}
