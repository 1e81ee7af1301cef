use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::{check_len, NnError};

/// `0.5 * ln(2 pi e)`, the per-dimension entropy of a unit Gaussian.
pub const HALF_LOG_2PI_E: f64 = 1.418_938_533_204_672_7;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ActionBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, NnError> {
        check_len("upper bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(NnError::Spec("action bounds need finite lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Diagonal Gaussian over a pre-squash variable `u`, mapped to the action
/// `a = lower + (upper - lower) * sigmoid(u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub bounds: ActionBounds,
}

impl GaussianHead {
    pub fn new(bounds: ActionBounds) -> Self {
        Self { bounds }
    }

    pub fn squash(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, x)| {
                let (lo, hi) = (self.bounds.lower[k], self.bounds.upper[k]);
                (lo + (hi - lo) * sigmoid(*x)).clamp(lo, hi)
            })
            .collect()
    }

    /// Inverse of `squash` for actions strictly inside the bounds.
    pub fn unsquash(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .enumerate()
            .map(|(k, x)| {
                let (lo, hi) = (self.bounds.lower[k], self.bounds.upper[k]);
                let s = ((x - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                (s / (1.0 - s)).ln()
            })
            .collect()
    }

    pub fn sample<R: Rng>(&self, mean: &[f64], log_std: &[f64], rng: &mut R) -> Vec<f64> {
        mean.iter()
            .zip(log_std)
            .map(|(m, s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s.exp() * z
            })
            .collect()
    }

    /// Log-density of the squashed action whose pre-squash value is `u`.
    pub fn log_prob(&self, u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
        let mut lp = 0.0;
        for k in 0..u.len() {
            let z = (u[k] - mean[k]) * (-log_std[k]).exp();
            lp += -0.5 * z * z - log_std[k] - HALF_LOG_2PI;
            let s = sigmoid(u[k]);
            let width = self.bounds.upper[k] - self.bounds.lower[k];
            lp -= (width * s * (1.0 - s)).max(f64::MIN_POSITIVE).ln();
        }
        lp
    }

    /// Gradient of `log_prob` with respect to `(mean, log_std)` at fixed `u`.
    pub fn log_prob_grad(&self, u: &[f64], mean: &[f64], log_std: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut dm = Vec::with_capacity(u.len());
        let mut ds = Vec::with_capacity(u.len());
        for k in 0..u.len() {
            let inv = (-log_std[k]).exp();
            let z = (u[k] - mean[k]) * inv;
            dm.push(z * inv);
            ds.push(z * z - 1.0);
        }
        (dm, ds)
    }

    /// Entropy of the pre-squash Gaussian; its gradient in each log-std is 1.
    pub fn entropy(&self, log_std: &[f64]) -> f64 {
        log_std.iter().map(|s| s + HALF_LOG_2PI_E).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head() -> GaussianHead {
        GaussianHead::new(ActionBounds::new(vec![0.4, 0.0], vec![1.0, 10.0]).unwrap())
    }

    #[test]
    fn squash_stays_in_bounds_and_inverts() {
        let h = head();
        for u in [-800.0, -3.0, 0.0, 2.5, 900.0] {
            let a = h.squash(&[u, -u]);
            assert!((0.4..=1.0).contains(&a[0]) && (0.0..=10.0).contains(&a[1]));
        }
        let a = h.squash(&[0.3, -1.2]);
        let back = h.unsquash(&a);
        assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] + 1.2).abs() < 1e-12);
        assert_eq!(h.squash(&[0.0, 0.0]), vec![0.7, 5.0]);
    }

    #[test]
    fn log_prob_integrates_to_one() {
        // Midpoint rule over the first action dimension with a one-dim head.
        let h = GaussianHead::new(ActionBounds::new(vec![0.4], vec![1.0]).unwrap());
        let (mean, log_std) = ([0.3], [-0.2]);
        let n = 200_000;
        let mut total = 0.0;
        for i in 0..n {
            let a = 0.4 + 0.6 * (i as f64 + 0.5) / n as f64;
            let u = h.unsquash(&[a]);
            total += h.log_prob(&u, &mean, &log_std).exp() * 0.6 / n as f64;
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let h = head();
        let (u, mean, log_std) = ([0.7, -1.1], [0.2, -0.4], [-0.3, 0.1]);
        let (dm, ds) = h.log_prob_grad(&u, &mean, &log_std);
        let eps = 1e-6;
        for k in 0..2 {
            let mut up = mean;
            up[k] += eps;
            let mut dn = mean;
            dn[k] -= eps;
            let fd = (h.log_prob(&u, &up, &log_std) - h.log_prob(&u, &dn, &log_std)) / (2.0 * eps);
            assert!((fd - dm[k]).abs() < 1e-7);
            let mut up = log_std;
            up[k] += eps;
            let mut dn = log_std;
            dn[k] -= eps;
            let fd = (h.log_prob(&u, &mean, &up) - h.log_prob(&u, &mean, &dn)) / (2.0 * eps);
            assert!((fd - ds[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let h = head();
        let a = h.sample(&[0.0, 1.0], &[0.0, -1.0], &mut ChaCha8Rng::seed_from_u64(3));
        let b = h.sample(&[0.0, 1.0], &[0.0, -1.0], &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!((h.entropy(&[0.0]) - HALF_LOG_2PI_E).abs() < 1e-15);
    }
}
