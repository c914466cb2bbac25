//! QML estimation: unconstrained reparameterization, penalized objective, optimizer driver and sandwich errors.

use crate::ajd::params::admissibility_margins;
use crate::ajd::{Domain, ParameterVector, RiccatiOptions};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions, Objective};
use crate::statespace::{build_system_unchecked, kalman_pass, FilterOptions, PreparedPanel};
use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// |rho| is clamped to this before arctanh.
pub const RHO_CLAMP: f64 = 1.0 - 1e-8;
/// Objective value returned when the likelihood cannot be evaluated.
pub const FAIL_VALUE: f64 = 1e12;

fn to_free(d: Domain, x: f64) -> f64 {
    match d {
        Domain::Positive | Domain::NonNegative => x.ln(),
        Domain::Correlation => x.clamp(-RHO_CLAMP, RHO_CLAMP).atanh(),
        Domain::UnitInterval => (x / (1.0 - x)).ln(),
        Domain::Unrestricted => x,
    }
}

fn from_free(d: Domain, z: f64) -> f64 {
    match d {
        Domain::Positive | Domain::NonNegative => z.exp(),
        Domain::Correlation => z.tanh(),
        Domain::UnitInterval => 1.0 / (1.0 + (-z).exp()),
        Domain::Unrestricted => z,
    }
}

/// d(natural)/d(free) at z.
fn jacobian(d: Domain, z: f64) -> f64 {
    match d {
        Domain::Positive | Domain::NonNegative => z.exp(),
        Domain::Correlation => 1.0 - z.tanh().powi(2),
        Domain::UnitInterval => {
            let s = 1.0 / (1.0 + (-z).exp());
            s * (1.0 - s)
        }
        Domain::Unrestricted => 1.0,
    }
}

/// Free parameters mapped to unconstrained coordinates. Non-negative parameters use the log
/// as well, so an exact zero has no image.
pub fn transform(params: &ParameterVector) -> Vec<f64> {
    params.free_indices().into_iter().map(|i| to_free(params.domains[i], params.values[i])).collect()
}

/// Writes unconstrained coordinates back into the free slots of `template`.
pub fn inverse_transform(template: &ParameterVector, z: &[f64]) -> ParameterVector {
    let mut p = template.clone();
    for (k, i) in template.free_indices().into_iter().enumerate() {
        p.values[i] = from_free(p.domains[i], z[k]);
    }
    p
}

/// 1e6 times the summed squared shortfalls of the Feller/stationarity margins.
pub fn admissibility_penalty(params: &ParameterVector, weight: f64) -> f64 {
    weight * admissibility_margins(params).iter().map(|(_, m)| (-m).max(0.0).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    pub filter: FilterOptions,
    pub riccati: RiccatiOptions,
    pub bfgs: BfgsOptions,
    pub nelder_mead: NelderMeadOptions,
    /// Skip the simplex refinement.
    pub skip_nelder_mead: bool,
    pub penalty_weight: f64,
    pub hessian_step: f64,
    pub score_step: f64,
    pub compute_se: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            filter: FilterOptions::default(),
            riccati: RiccatiOptions::default(),
            bfgs: BfgsOptions::default(),
            nelder_mead: NelderMeadOptions::default(),
            skip_nelder_mead: false,
            penalty_weight: 1e6,
            hessian_step: 1e-4,
            score_step: 1e-5,
            compute_se: true,
        }
    }
}

/// Per-date proportional log-likelihood contributions at `params`; admissibility margins are not checked.
pub fn date_logliks(params: &ParameterVector, panel: &PreparedPanel, opts: &EstimateOptions) -> Result<Vec<f64>> {
    let sys = build_system_unchecked(params, panel, &opts.riccati)?;
    let run = kalman_pass(&sys, panel, params.sigma_kappa(), &opts.filter, None)?;
    Ok(run.steps.iter().map(|s| s.loglik).collect())
}

/// Minimization target: minus the average log-likelihood plus the admissibility penalty.
pub fn objective(params: &ParameterVector, panel: &PreparedPanel, opts: &EstimateOptions) -> f64 {
    let pen = admissibility_penalty(params, opts.penalty_weight);
    match date_logliks(params, panel, opts) {
        Ok(ll) => {
            let v = -ll.iter().sum::<f64>() / ll.len() as f64 + pen;
            if v.is_finite() {
                v
            } else {
                FAIL_VALUE
            }
        }
        Err(_) => FAIL_VALUE,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub bfgs_iterations: usize,
    pub nelder_mead_iterations: usize,
    pub evaluations: usize,
    pub initial_objective: f64,
    pub objective: f64,
    /// Max-abs central-difference gradient at the optimum, unconstrained units.
    pub gradient_max_abs: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta0: ParameterVector,
    pub theta_hat: ParameterVector,
    /// Natural-unit standard errors; `None` for fixed parameters or when not computed.
    pub standard_errors: Vec<Option<f64>>,
    pub loglik: f64,
    pub convergence: Convergence,
    /// Per-date scores (rows) in unconstrained coordinates of the free parameters.
    pub scores: Option<DMatrix<f64>>,
    pub ridge: Option<f64>,
}

impl EstimationResult {
    /// (name, estimate, se) for every parameter.
    pub fn table(&self) -> Vec<(String, f64, Option<f64>)> {
        self.theta_hat
            .names
            .iter()
            .zip(&self.theta_hat.values)
            .zip(&self.standard_errors)
            .map(|((n, v), s)| (n.clone(), *v, *s))
            .collect()
    }
}

/// Maximizes the filter likelihood from `theta0` (BFGS, then simplex refinement).
/// The start must lie inside the parameter domains; the Feller and stationarity
/// margins are only penalized, so a previous estimate sitting on a boundary can be reused.
pub fn qml_estimate(panel: &PreparedPanel, theta0: &ParameterVector, opts: &EstimateOptions) -> Result<EstimationResult> {
    let bad = theta0.domain_violations();
    if !bad.is_empty() {
        return Err(Error::Inadmissible(bad));
    }
    if panel.is_empty() {
        return Err(Error::Empty("measurement panel".into()));
    }
    let f = |z: &[f64]| objective(&inverse_transform(theta0, z), panel, opts);
    let z0 = transform(theta0);
    let f0 = f(&z0);
    if f0 >= FAIL_VALUE {
        let err = date_logliks(theta0, panel, opts).err().map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Invalid(format!("objective cannot be evaluated at the start: {err}")));
    }
    let stage1 = bfgs(&f, &z0, &opts.bfgs);
    let mut evals = stage1.evaluations + 1;
    let (mut z, mut fz, mut converged, mut message) = (stage1.x.clone(), stage1.f, stage1.converged, format!("bfgs: {}", stage1.message));
    let mut nm_iters = 0;
    if !opts.skip_nelder_mead {
        let stage2 = nelder_mead(&f, &z, &opts.nelder_mead);
        evals += stage2.evaluations;
        nm_iters = stage2.iterations;
        if stage2.f <= fz {
            z = stage2.x;
            fz = stage2.f;
        }
        converged = converged || stage2.converged;
        message = format!("{message}; nelder-mead: {}", stage2.message);
    }
    if fz > f0 {
        z = z0.clone();
        fz = f0;
        converged = false;
        message.push_str("; no improvement over the start");
    }
    let theta_hat = inverse_transform(theta0, &z);
    let grad = crate::optim::fd_gradient(&f, &z, opts.bfgs.grad_step);
    evals += 2 * z.len();
    let gradient_max_abs = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let lls = date_logliks(&theta_hat, panel, opts)?;
    let mut result = EstimationResult {
        theta0: theta0.clone(),
        standard_errors: vec![None; theta_hat.values.len()],
        loglik: lls.iter().sum(),
        convergence: Convergence {
            converged,
            bfgs_iterations: stage1.iterations,
            nelder_mead_iterations: nm_iters,
            evaluations: evals,
            initial_objective: f0,
            objective: fz,
            gradient_max_abs,
            message,
        },
        theta_hat,
        scores: None,
        ridge: None,
    };
    if opts.compute_se {
        match sandwich_se(&result.theta_hat, panel, opts) {
            Ok(s) => {
                result.standard_errors = s.standard_errors;
                result.scores = Some(s.scores);
                result.ridge = s.ridge;
            }
            Err(e) => warn!("standard errors unavailable: {e}"),
        }
    }
    Ok(result)
}

/// Runs `qml_estimate` from each start and keeps the highest likelihood.
pub fn qml_multistart(panel: &PreparedPanel, starts: &[ParameterVector], opts: &EstimateOptions) -> Result<EstimationResult> {
    let mut best: Option<EstimationResult> = None;
    let mut last_err = None;
    for s in starts {
        match qml_estimate(panel, s, opts) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.convergence.objective < b.convergence.objective) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Empty("starting points".into())))
}

/// Sandwich covariance pieces in unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sandwich {
    /// A^-1 B A^-1 / T.
    pub covariance: DMatrix<f64>,
    /// Minus the Hessian of the average contribution.
    pub a: DMatrix<f64>,
    /// Average outer product of scores.
    pub b: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub ridge: Option<f64>,
}

/// Sandwich from per-observation log-contributions `ell(z)` (length T), with central
/// differences: step `h_hess` for the Hessian of the average, `h_score` for the scores.
pub fn sandwich(ell: &(dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync), z: &[f64], h_hess: f64, h_score: f64) -> Result<Sandwich> {
    let n = z.len();
    let base = ell(z)?;
    let t = base.len();
    if t == 0 {
        return Err(Error::Empty("contributions".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / t as f64;
    let shift = |pairs: &[(usize, f64)]| -> Result<Vec<f64>> {
        let mut x = z.to_vec();
        for &(i, d) in pairs {
            x[i] += d;
        }
        ell(&x)
    };
    let score_cols: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let p = shift(&[(i, h_score)])?;
            let m = shift(&[(i, -h_score)])?;
            Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h_score)).collect())
        })
        .collect();
    let mut scores = DMatrix::zeros(t, n);
    for (i, c) in score_cols.into_iter().enumerate() {
        let c = c?;
        for (r, v) in c.into_iter().enumerate() {
            scores[(r, i)] = v;
        }
    }
    let f0 = mean(&base);
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let h = h_hess;
    let entries: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                let p = mean(&shift(&[(i, h)])?);
                let m = mean(&shift(&[(i, -h)])?);
                Ok((p - 2.0 * f0 + m) / (h * h))
            } else {
                let pp = mean(&shift(&[(i, h), (j, h)])?);
                let pm = mean(&shift(&[(i, h), (j, -h)])?);
                let mp = mean(&shift(&[(i, -h), (j, h)])?);
                let mm = mean(&shift(&[(i, -h), (j, -h)])?);
                Ok((pp - pm - mp + mm) / (4.0 * h * h))
            }
        })
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for (&(i, j), e) in pairs.iter().zip(entries) {
        let v = -e?;
        a[(i, j)] = v;
        a[(j, i)] = v;
    }
    let b = scores.transpose() * &scores / t as f64;
    let (ainv, ridge) = ridge_inverse(&a);
    if let Some(l) = ridge {
        warn!("Hessian not positive definite; ridge {l:e} added");
    }
    let covariance = &ainv * &b * &ainv / t as f64;
    Ok(Sandwich { covariance, a, b, scores, ridge })
}

/// Inverse of a symmetric matrix, adding a growing ridge until it is positive definite.
fn ridge_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, Option<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    if let Some((inv, _)) = spd_inverse(&sym) {
        return (inv, None);
    }
    let scale = sym.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut lambda = 1e-8 * scale;
    let eig_min = sym.clone().symmetric_eigen().eigenvalues.min();
    if eig_min < 0.0 {
        lambda = lambda.max(-eig_min * 1.01);
    }
    loop {
        let m = &sym + DMatrix::identity(n, n) * lambda;
        if let Some((inv, _)) = spd_inverse(&m) {
            return (inv, Some(lambda));
        }
        lambda *= 10.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardErrors {
    pub standard_errors: Vec<Option<f64>>,
    /// Natural-unit covariance of the free parameters.
    pub covariance: DMatrix<f64>,
    pub scores: DMatrix<f64>,
    pub ridge: Option<f64>,
}

/// Sandwich standard errors of the free parameters, delta-method mapped to natural units.
pub fn sandwich_se(theta_hat: &ParameterVector, panel: &PreparedPanel, opts: &EstimateOptions) -> Result<StandardErrors> {
    let z = transform(theta_hat);
    let ell = |zz: &[f64]| date_logliks(&inverse_transform(theta_hat, zz), panel, opts);
    let s = sandwich(&ell, &z, opts.hessian_step, opts.score_step)?;
    let free = theta_hat.free_indices();
    let jac = DVector::from_iterator(z.len(), free.iter().zip(&z).map(|(&i, &zi)| jacobian(theta_hat.domains[i], zi)));
    let cov = DMatrix::from_fn(z.len(), z.len(), |i, j| jac[i] * s.covariance[(i, j)] * jac[j]);
    let mut se = vec![None; theta_hat.values.len()];
    for (k, &i) in free.iter().enumerate() {
        se[i] = Some(cov[(k, k)].max(0.0).sqrt());
    }
    Ok(StandardErrors { standard_errors: se, covariance: cov, scores: s.scores, ridge: s.ridge })
}

/// Unconstrained-coordinate objective closure, exposed for diagnostics.
pub fn objective_fn<'a>(theta0: &'a ParameterVector, panel: &'a PreparedPanel, opts: &'a EstimateOptions) -> Box<Objective<'a>> {
    Box::new(move |z: &[f64]| objective(&inverse_transform(theta0, z), panel, opts))
}
