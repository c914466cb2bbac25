//! Closed-form jump transforms chi(c) = E[exp(c . J)].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, Exp, Normal};
use std::fmt::Debug;

const POLE_EPS: f64 = 1e-12;

pub trait JumpTransform: Send + Sync + Debug {
    /// None when a denominator falls below the pole threshold.
    fn chi(&self, c: &[Complex64]) -> Option<Complex64>;
    /// chi(c) - 1 without cancellation near the origin.
    fn chi_minus_one(&self, c: &[Complex64]) -> Option<Complex64> {
        self.chi(c).map(|x| x - 1.0)
    }
    fn mean(&self) -> Vec<f64>;
    fn second_moment(&self) -> DMatrix<f64>;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

fn recip(d: Complex64) -> Option<Complex64> {
    if d.norm() < POLE_EPS {
        None
    } else {
        Some(d.inv())
    }
}

/// exp(z) - 1 accurate for small |z|.
fn expm1(z: Complex64) -> Complex64 {
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(z.re.exp_m1() * c - 2.0 * half * half, z.re.exp() * s)
}

/// 1/((1 + a)(1 - b)) - 1 = (b - a + a b) / ((1 + a)(1 - b))
fn co_jump_m1(a: Complex64, b: Complex64) -> Option<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    Some((b - a + a * b) * recip((one + a) * (one - b))?)
}

fn exp_draw(mean: f64, rng: &mut dyn RngCore) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Exp::new(1.0 / mean).unwrap().sample(rng)
}

/// Double-exponential return jump; exponential variance co-jump on negative return jumps.
#[derive(Debug, Clone)]
pub struct DoubleExpCoJump {
    pub dim: usize,
    pub p_dn: f64,
    pub eta_up: f64,
    pub eta_dn: f64,
    pub mu_v: f64,
}

impl JumpTransform for DoubleExpCoJump {
    fn chi(&self, c: &[Complex64]) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        let up = recip(one - c[0] * self.eta_up)?;
        let dn = recip((one + c[0] * self.eta_dn) * (one - c[1] * self.mu_v))?;
        Some(up * (1.0 - self.p_dn) + dn * self.p_dn)
    }

    fn chi_minus_one(&self, c: &[Complex64]) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        let a = c[0] * self.eta_up;
        let up = a * recip(one - a)?;
        let dn = co_jump_m1(c[0] * self.eta_dn, c[1] * self.mu_v)?;
        Some(up * (1.0 - self.p_dn) + dn * self.p_dn)
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = (1.0 - self.p_dn) * self.eta_up - self.p_dn * self.eta_dn;
        m[1] = self.p_dn * self.mu_v;
        m
    }

    fn second_moment(&self) -> DMatrix<f64> {
        let p = self.p_dn;
        let mut s = DMatrix::zeros(self.dim, self.dim);
        s[(0, 0)] = 2.0 * (1.0 - p) * self.eta_up.powi(2) + 2.0 * p * self.eta_dn.powi(2);
        s[(0, 1)] = -p * self.eta_dn * self.mu_v;
        s[(1, 0)] = s[(0, 1)];
        s[(1, 1)] = 2.0 * p * self.mu_v.powi(2);
        s
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut j = vec![0.0; self.dim];
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.p_dn {
            j[0] = -exp_draw(self.eta_dn, rng);
            j[1] = exp_draw(self.mu_v, rng);
        } else {
            j[0] = exp_draw(self.eta_up, rng);
        }
        j
    }
}

/// Gaussian return jump with an independent exponential variance jump.
#[derive(Debug, Clone)]
pub struct GaussCoJump {
    pub dim: usize,
    pub mu_j: f64,
    pub sigma_j: f64,
    pub mu_v: f64,
}

impl JumpTransform for GaussCoJump {
    fn chi(&self, c: &[Complex64]) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        let g = (c[0] * self.mu_j + 0.5 * c[0] * c[0] * self.sigma_j.powi(2)).exp();
        Some(g * recip(one - c[1] * self.mu_v)?)
    }

    fn chi_minus_one(&self, c: &[Complex64]) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        let z = c[0] * self.mu_j + 0.5 * c[0] * c[0] * self.sigma_j.powi(2);
        let b = c[1] * self.mu_v;
        Some((expm1(z) + b) * recip(one - b)?)
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = self.mu_j;
        m[1] = self.mu_v;
        m
    }

    fn second_moment(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        s[(0, 0)] = self.mu_j.powi(2) + self.sigma_j.powi(2);
        s[(0, 1)] = self.mu_j * self.mu_v;
        s[(1, 0)] = s[(0, 1)];
        s[(1, 1)] = 2.0 * self.mu_v.powi(2);
        s
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut j = vec![0.0; self.dim];
        let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
        j[0] = self.mu_j + self.sigma_j * z;
        j[1] = exp_draw(self.mu_v, rng);
        j
    }
}

/// Negative exponential return jump with exponential variance co-jump.
#[derive(Debug, Clone)]
pub struct NegExpCoJump {
    pub dim: usize,
    pub eta_dn: f64,
    pub mu_v: f64,
}

impl JumpTransform for NegExpCoJump {
    fn chi(&self, c: &[Complex64]) -> Option<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        recip((one + c[0] * self.eta_dn) * (one - c[1] * self.mu_v))
    }

    fn chi_minus_one(&self, c: &[Complex64]) -> Option<Complex64> {
        co_jump_m1(c[0] * self.eta_dn, c[1] * self.mu_v)
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = -self.eta_dn;
        m[1] = self.mu_v;
        m
    }

    fn second_moment(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        s[(0, 0)] = 2.0 * self.eta_dn.powi(2);
        s[(0, 1)] = -self.eta_dn * self.mu_v;
        s[(1, 0)] = s[(0, 1)];
        s[(1, 1)] = 2.0 * self.mu_v.powi(2);
        s
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut j = vec![0.0; self.dim];
        j[0] = -exp_draw(self.eta_dn, rng);
        j[1] = exp_draw(self.mu_v, rng);
        j
    }
}

/// Positive exponential return jump.
#[derive(Debug, Clone)]
pub struct PosExp {
    pub dim: usize,
    pub eta_up: f64,
}

impl JumpTransform for PosExp {
    fn chi(&self, c: &[Complex64]) -> Option<Complex64> {
        recip(Complex64::new(1.0, 0.0) - c[0] * self.eta_up)
    }

    fn chi_minus_one(&self, c: &[Complex64]) -> Option<Complex64> {
        let a = c[0] * self.eta_up;
        Some(a * recip(Complex64::new(1.0, 0.0) - a)?)
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        m[0] = self.eta_up;
        m
    }

    fn second_moment(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.dim, self.dim);
        s[(0, 0)] = 2.0 * self.eta_up.powi(2);
        s
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut j = vec![0.0; self.dim];
        j[0] = exp_draw(self.eta_up, rng);
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero(n: usize) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); n]
    }

    #[test]
    fn transforms_normalized() {
        let list: Vec<Box<dyn JumpTransform>> = vec![
            Box::new(DoubleExpCoJump { dim: 2, p_dn: 0.7, eta_up: 0.02, eta_dn: 0.05, mu_v: 0.05 }),
            Box::new(GaussCoJump { dim: 2, mu_j: -0.05, sigma_j: 0.04, mu_v: 0.05 }),
            Box::new(NegExpCoJump { dim: 2, eta_dn: 0.05, mu_v: 0.05 }),
            Box::new(PosExp { dim: 3, eta_up: 0.02 }),
        ];
        for t in &list {
            let n = t.mean().len();
            assert!((t.chi(&zero(n)).unwrap() - 1.0).norm() < 1e-15);
        }
    }

    #[test]
    fn chi_minus_one_consistent() {
        let list: Vec<Box<dyn JumpTransform>> = vec![
            Box::new(DoubleExpCoJump { dim: 2, p_dn: 0.7, eta_up: 0.02, eta_dn: 0.05, mu_v: 0.05 }),
            Box::new(GaussCoJump { dim: 2, mu_j: -0.05, sigma_j: 0.04, mu_v: 0.05 }),
            Box::new(NegExpCoJump { dim: 2, eta_dn: 0.05, mu_v: 0.05 }),
            Box::new(PosExp { dim: 2, eta_up: 0.02 }),
        ];
        let c = vec![Complex64::new(-0.3, 4.0), Complex64::new(-2.0, 0.7)];
        for t in &list {
            let d = t.chi_minus_one(&c).unwrap() - (t.chi(&c).unwrap() - 1.0);
            assert!(d.norm() < 1e-14);
        }
    }

    #[test]
    fn pole_detected() {
        let t = PosExp { dim: 2, eta_up: 0.5 };
        let c = vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(t.chi(&c).is_none());
    }

    #[test]
    fn sampled_moments_match() {
        let t = DoubleExpCoJump { dim: 2, p_dn: 0.7, eta_up: 0.02, eta_dn: 0.05, mu_v: 0.05 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 400_000;
        let mut m = [0.0; 2];
        let mut s = [0.0; 3];
        for _ in 0..n {
            let j = t.sample(&mut rng);
            m[0] += j[0];
            m[1] += j[1];
            s[0] += j[0] * j[0];
            s[1] += j[0] * j[1];
            s[2] += j[1] * j[1];
        }
        let mean = t.mean();
        let sm = t.second_moment();
        let nf = n as f64;
        assert!((m[0] / nf - mean[0]).abs() < 4e-4);
        assert!((m[1] / nf - mean[1]).abs() < 4e-4);
        assert!((s[0] / nf - sm[(0, 0)]).abs() / sm[(0, 0)] < 0.02);
        assert!((s[1] / nf - sm[(0, 1)]).abs() / sm[(0, 1)].abs() < 0.02);
        assert!((s[2] / nf - sm[(1, 1)]).abs() / sm[(1, 1)] < 0.02);
    }
}
