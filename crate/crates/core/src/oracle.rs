//! Stochastic first-order oracle: unbiased gradients with variance at most `σ²`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::problem::SmoothProblem;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseModel {
    None,
    /// i.i.d. `N(0, σ²/n)` per coordinate, so `E‖noise‖² = σ²`.
    #[default]
    GaussianIsotropic,
}

#[derive(Debug, Clone)]
pub struct StochasticOracle {
    base: SmoothProblem,
    sigma: f64,
    noise: NoiseModel,
}

impl StochasticOracle {
    pub fn new(base: SmoothProblem, sigma: f64, noise: NoiseModel) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(invalid("sigma must be finite and nonnegative"));
        }
        Ok(Self { base, sigma, noise })
    }

    pub fn gaussian(base: SmoothProblem, sigma: f64) -> Result<Self> {
        Self::new(base, sigma, NoiseModel::GaussianIsotropic)
    }

    /// Noiseless oracle returning exact gradients.
    pub fn exact(base: SmoothProblem) -> Self {
        Self {
            base,
            sigma: 0.0,
            noise: NoiseModel::None,
        }
    }

    pub fn base(&self) -> &SmoothProblem {
        &self.base
    }

    /// Variance bound of the oracle (`0` for exact oracles).
    pub fn sigma(&self) -> f64 {
        if self.is_exact() {
            0.0
        } else {
            self.sigma
        }
    }

    pub fn noise_model(&self) -> NoiseModel {
        self.noise
    }

    /// True when samples are exact gradients and consume no randomness.
    pub fn is_exact(&self) -> bool {
        self.noise == NoiseModel::None || self.sigma == 0.0
    }

    /// One stochastic gradient `G(x, ξ)`.
    pub fn sample(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.base.check_point(x)?;
        let mut out = vec![0.0; x.len()];
        self.sample_into(x, rng, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`sample`](Self::sample); overwrites `out` and
    /// returns `Ψ(x)`.
    pub fn sample_into(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) -> f64 {
        let value = self.base.eval_into(x, out);
        self.add_noise(rng, out);
        value
    }

    /// Adds one draw of the oracle noise to `g`.
    pub fn add_noise(&self, rng: &mut Rng, g: &mut [f64]) {
        if self.is_exact() {
            return;
        }
        let scale = self.sigma / libm::sqrt(g.len() as f64);
        for gi in g.iter_mut() {
            *gi += scale * rng.standard_normal();
        }
    }

    /// Mean of `m` independent oracle calls at `x` (the mini-batch gradient).
    /// `grad` must hold `∇Ψ(x)`; `out` receives the average. The mean of `m`
    /// Gaussian draws is drawn directly from `N(0, σ²/(n·m))` per coordinate,
    /// which has the same law and costs one draw per coordinate.
    pub fn batch_mean_into(&self, grad: &[f64], m: u64, rng: &mut Rng, out: &mut [f64]) {
        if self.is_exact() {
            out.copy_from_slice(grad);
            return;
        }
        let scale = self.sigma / libm::sqrt(grad.len() as f64) / libm::sqrt(m.max(1) as f64);
        for (o, g) in out.iter_mut().zip(grad) {
            *o = g + scale * rng.standard_normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_problem, ProblemSpec};

    fn quad() -> SmoothProblem {
        make_problem(&ProblemSpec::identity_quadratic(2)).unwrap()
    }

    #[test]
    fn zero_sigma_is_bit_identical_to_gradient() {
        let o = StochasticOracle::gaussian(quad(), 0.0).unwrap();
        let mut rng = Rng::new(3);
        let x = [-0.0, 1.25];
        let (_, g) = o.base().eval(&x).unwrap();
        let s = o.sample(&x, &mut rng).unwrap();
        assert_eq!(
            g.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // No randomness consumed.
        assert_eq!(rng, Rng::new(3));
    }

    #[test]
    fn equal_seeds_equal_draws() {
        let o = StochasticOracle::gaussian(quad(), 1.0).unwrap();
        let (mut a, mut b) = (Rng::new(9), Rng::new(9));
        for _ in 0..100 {
            assert_eq!(
                o.sample(&[1.0, 2.0], &mut a).unwrap(),
                o.sample(&[1.0, 2.0], &mut b).unwrap()
            );
        }
    }

    #[test]
    fn dimension_mismatch() {
        let o = StochasticOracle::gaussian(quad(), 1.0).unwrap();
        assert!(o.sample(&[1.0], &mut Rng::new(0)).is_err());
        assert!(StochasticOracle::gaussian(quad(), -1.0).is_err());
    }
}
