//! Small unconstrained minimizers: BFGS with central-difference gradients, then Nelder-Mead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Objective in unconstrained coordinates. Must be safe to call from several threads.
pub type Objective<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once the max-abs gradient component falls below this.
    pub gtol: f64,
    /// Stop after `stall_iter` consecutive iterations improving by less than this (relative).
    pub ftol: f64,
    pub stall_iter: usize,
    pub grad_step: f64,
    /// Largest max-abs step tried by the line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 200, gtol: 1e-5, ftol: 1e-12, stall_iter: 3, grad_step: 1e-5, max_step: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Spread of simplex values.
    pub ftol: f64,
    /// Max-abs distance of vertices from the best one.
    pub xtol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 2000, ftol: 1e-10, xtol: 1e-6, initial_step: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
}

/// Central-difference gradient; the 2n evaluations run in parallel.
pub fn fd_gradient(f: &Objective<'_>, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn bfgs(f: &Objective<'_>, x0: &[f64], opts: &BfgsOptions) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut evals = 1;
    if n == 0 {
        return OptimOutcome { x, f: fx, iterations: 0, evaluations: evals, converged: true, message: "no free parameters".into() };
    }
    let mut g = fd_gradient(f, &x, opts.grad_step);
    evals += 2 * n;
    let mut hinv = identity(n);
    let mut stall = 0;
    let mut fresh = true;
    for it in 0..opts.max_iter {
        if amax(&g) < opts.gtol {
            return OptimOutcome { x, f: fx, iterations: it, evaluations: evals, converged: true, message: "gradient tolerance".into() };
        }
        let mut d: Vec<f64> = hinv.iter().map(|row| -dot(row, &g)).collect();
        if dot(&d, &g) >= 0.0 {
            hinv = identity(n);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&d, &g);
        let mut alpha = (opts.max_step / amax(&d)).min(1.0);
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let fnew = f(&xn);
            evals += 1;
            if fnew.is_finite() && fnew <= fx + 1e-4 * alpha * slope {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                return OptimOutcome { x, f: fx, iterations: it, evaluations: evals, converged: false, message: "line search failed".into() };
            }
            hinv = identity(n);
            fresh = true;
            continue;
        };
        let gn = fd_gradient(f, &xn, opts.grad_step);
        evals += 2 * n;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                let scale = sy / dot(&y, &y);
                for (i, row) in hinv.iter_mut().enumerate() {
                    row.iter_mut().enumerate().for_each(|(j, v)| *v = if i == j { scale } else { 0.0 });
                }
            }
            let hy: Vec<f64> = hinv.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
            fresh = false;
        }
        let improved = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if improved <= opts.ftol * (1.0 + fx.abs()) {
            stall += 1;
            if stall >= opts.stall_iter {
                return OptimOutcome { x, f: fx, iterations: it + 1, evaluations: evals, converged: true, message: "objective change tolerance".into() };
            }
        } else {
            stall = 0;
        }
    }
    OptimOutcome { x, f: fx, iterations: opts.max_iter, evaluations: evals, converged: false, message: "iteration limit".into() }
}

pub fn nelder_mead(f: &Objective<'_>, x0: &[f64], opts: &NelderMeadOptions) -> OptimOutcome {
    let n = x0.len();
    let f0 = f(x0);
    if n == 0 {
        return OptimOutcome { x: x0.to_vec(), f: f0, iterations: 0, evaluations: 1, converged: true, message: "no free parameters".into() };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    let others: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut v = x0.to_vec();
            v[i] += opts.initial_step;
            let fv = f(&v);
            (v, fv)
        })
        .collect();
    simplex.extend(others);
    let mut evals = n + 1;
    let mut iters = 0;
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    loop {
        simplex.sort_by(|a, b| key(a.1).total_cmp(&key(b.1)));
        let best = &simplex[0];
        let spread = key(simplex[n].1) - best.1;
        let size = simplex[1..].iter().map(|(v, _)| v.iter().zip(&best.0).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))).fold(0.0, f64::max);
        if spread <= opts.ftol && size <= opts.xtol {
            let (x, fx) = simplex.swap_remove(0);
            return OptimOutcome { x, f: fx, iterations: iters, evaluations: evals, converged: true, message: "simplex tolerance".into() };
        }
        if evals >= opts.max_evals {
            let (x, fx) = simplex.swap_remove(0);
            return OptimOutcome { x, f: fx, iterations: iters, evaluations: evals, converged: false, message: "evaluation limit".into() };
        }
        iters += 1;
        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, a) in centroid.iter_mut().zip(v) {
                *c += a / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect() };
        let xr = along(-1.0);
        let fr = key(f(&xr));
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = key(f(&xe));
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < key(simplex[n].1) {
            let xc = along(-0.5);
            let fc = key(f(&xc));
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = key(f(&xc));
            (xc, fc)
        };
        evals += 1;
        if fc < fr.min(key(simplex[n].1)) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        let shrunk: Vec<(Vec<f64>, f64)> = simplex[1..]
            .par_iter()
            .map(|(v, _)| {
                let p: Vec<f64> = x_best.iter().zip(v).map(|(b, a)| b + 0.5 * (a - b)).collect();
                let fp = f(&p);
                (p, fp)
            })
            .collect();
        evals += n;
        for (slot, s) in simplex[1..].iter_mut().zip(shrunk) {
            *slot = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosen(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn bfgs_rosenbrock() {
        let out = bfgs(&rosen, &[-1.2, 1.0], &BfgsOptions { gtol: 1e-6, ..Default::default() });
        assert!((out.x[0] - 1.0).abs() < 1e-4 && (out.x[1] - 1.0).abs() < 1e-4, "{out:?}");
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let out = nelder_mead(&rosen, &[-1.2, 1.0], &NelderMeadOptions { initial_step: 0.5, xtol: 1e-8, ftol: 1e-14, ..Default::default() });
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{out:?}");
    }

    #[test]
    fn nan_region_is_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.1).powi(2) };
        let out = bfgs(&f, &[3.0], &BfgsOptions::default());
        assert!((out.x[0] - 0.1).abs() < 1e-5);
    }
}
