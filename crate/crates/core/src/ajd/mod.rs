//! Affine jump-diffusion models: coefficients, Riccati solver, conditional moments.

pub mod jumps;
pub mod moments;
pub mod params;
pub mod riccati;

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;

pub use jumps::JumpTransform;
pub use moments::{transition_closed_form, transition_coeffs, transition_fd, ConditionalMomentCoeffs};
pub use params::{admissible, build_model, build_pricing_model, physical_model, Admissibility, Domain, ModelTag, ParameterVector};
pub use riccati::{model_ccf, riccati_solve, riccati_solve_with, solve_from, CCFCoefficients, RiccatiOptions};

#[derive(Clone)]
pub struct JumpComponent {
    pub l0: f64,
    pub l1: Vec<f64>,
    pub transform: Arc<dyn JumpTransform>,
}

impl fmt::Debug for JumpComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpComponent")
            .field("l0", &self.l0)
            .field("l1", &self.l1)
            .field("transform", &self.transform)
            .finish()
    }
}

/// Drift K0 + K1 x, diffusion H0 + sum_j x_j H1[j], intensities l0 + l1.x.
/// Coordinate 0 is the log forward.
#[derive(Debug, Clone)]
pub struct AffineModel {
    pub dim_state: usize,
    pub latent: Vec<usize>,
    pub k0: Vec<f64>,
    pub k1: DMatrix<f64>,
    pub h0: DMatrix<f64>,
    pub h1: Vec<DMatrix<f64>>,
    pub jumps: Vec<JumpComponent>,
    pub rate: f64,
}

impl AffineModel {
    pub fn dim_latent(&self) -> usize {
        self.latent.len()
    }

    /// Coordinates that are not latent (log forward and exogenous factors).
    pub fn observed(&self) -> Vec<usize> {
        (0..self.dim_state).filter(|i| !self.latent.contains(i)).collect()
    }

    pub fn with_rate(mut self, r: f64) -> Self {
        self.rate = r;
        self
    }

    /// Riccati right-hand side. Returns None when a jump transform hits a pole.
    pub(crate) fn rhs(&self, beta: &[Complex64], d_alpha: &mut Complex64, d_beta: &mut [Complex64]) -> Option<()> {
        let n = self.dim_state;
        let half = Complex64::new(0.5, 0.0);
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                let k = self.k1[(i, j)];
                if k != 0.0 {
                    acc += beta[i] * k;
                }
            }
            let h = &self.h1[j];
            let mut quad = Complex64::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let c = h[(a, b)];
                    if c != 0.0 {
                        quad += beta[a] * beta[b] * c;
                    }
                }
            }
            d_beta[j] = acc + half * quad;
        }
        let mut da = Complex64::new(-self.rate, 0.0);
        for i in 0..n {
            if self.k0[i] != 0.0 {
                da += beta[i] * self.k0[i];
            }
            for b in 0..n {
                let c = self.h0[(i, b)];
                if c != 0.0 {
                    da += half * beta[i] * beta[b] * c;
                }
            }
        }
        for jc in &self.jumps {
            let chi = jc.transform.chi_minus_one(beta)?;
            da += chi * jc.l0;
            for j in 0..n {
                if jc.l1[j] != 0.0 {
                    d_beta[j] += chi * jc.l1[j];
                }
            }
        }
        *d_alpha = da;
        Some(())
    }
}
