//! Black formula on forwards, implied-volatility inversion and forward vega.

use crate::error::{BoundSide, Error, Result};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteGreeks {
    pub bsiv: f64,
    pub vega: f64,
    pub total_variance: f64,
}

/// Discounted Black price.
pub fn bs_price(f: f64, k: f64, tau: f64, r: f64, sigma: f64, is_call: bool) -> f64 {
    let df = (-r * tau).exp();
    let s = sigma * tau.sqrt();
    if s <= 0.0 {
        let intrinsic = if is_call { f - k } else { k - f };
        return df * intrinsic.max(0.0);
    }
    let d1 = (f / k).ln() / s + 0.5 * s;
    let d2 = d1 - s;
    if is_call {
        df * (f * norm_cdf(d1) - k * norm_cdf(d2))
    } else {
        df * (k * norm_cdf(-d2) - f * norm_cdf(-d1))
    }
}

/// Forward vega F sqrt(tau) phi(d+), undiscounted.
pub fn vega(f: f64, k: f64, tau: f64, _r: f64, sigma: f64) -> f64 {
    let w = sigma * sigma * tau;
    let m = (k / f).ln();
    let sw = w.sqrt();
    let dp = -m / sw + 0.5 * sw;
    f * tau.sqrt() * norm_pdf(dp)
}

pub fn greeks(f: f64, k: f64, tau: f64, r: f64, sigma: f64) -> QuoteGreeks {
    QuoteGreeks {
        bsiv: sigma,
        vega: vega(f, k, tau, r, sigma),
        total_variance: sigma * sigma * tau,
    }
}

/// Newton on vega with a bisection fallback after 8 non-improving steps.
pub fn implied_vol(price: f64, f: f64, k: f64, tau: f64, r: f64, is_call: bool) -> Result<f64> {
    let df = (-r * tau).exp();
    let (lower, upper) = if is_call {
        (df * (f - k).max(0.0), df * f)
    } else {
        (df * (k - f).max(0.0), df * k)
    };
    if !(price > lower) {
        return Err(Error::Bounds(BoundSide::Lower));
    }
    if !(price < upper) {
        return Err(Error::Bounds(BoundSide::Upper));
    }
    let tol = (1e-12 * f).min(1e-9 * price);
    let target = |s: f64| bs_price(f, k, tau, r, s, is_call) - price;

    let mut lo = 0.0;
    let mut hi = 1.0;
    while target(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::ImpliedVol);
        }
    }
    let m = (f / k).ln().abs();
    let mut sigma = (2.0 * m / tau).sqrt().clamp(0.05, 2.0);
    if !(sigma > lo && sigma < hi) {
        sigma = 0.5 * (lo + hi);
    }
    let mut best = f64::INFINITY;
    let mut stall = 0;
    for _ in 0..300 {
        let g = target(sigma);
        if g.abs() <= tol {
            return Ok(sigma);
        }
        if g < 0.0 {
            lo = lo.max(sigma);
        } else {
            hi = hi.min(sigma);
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
        if g.abs() < best {
            best = g.abs();
            stall = 0;
        } else {
            stall += 1;
        }
        let dv = df * vega(f, k, tau, r, sigma);
        let newton = sigma - g / dv;
        sigma = if stall < 8 && dv > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            stall = 0;
            best = f64::INFINITY;
            0.5 * (lo + hi)
        };
    }
    Err(Error::ImpliedVol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vol_limit() {
        let c = bs_price(100.0, 90.0, 0.5, 0.02, 1e-12, true);
        assert!((c - (-0.01f64).exp() * 10.0).abs() < 1e-12);
    }

    #[test]
    fn parity() {
        let (f, k, t, r) = (100.0, 95.0, 0.1, 0.01);
        let c = bs_price(f, k, t, r, 0.2, true);
        let p = bs_price(f, k, t, r, 0.2, false);
        assert!((c - p - (-r * t).exp() * (f - k)).abs() < 1e-13);
    }

    #[test]
    fn atm_price_matches_lognormal_quadrature() {
        // E[(F e^{s z - s^2/2} - K)^+] by composite Simpson on z in [-12, 12]
        let (f, k, s) = (100.0, 100.0, 0.2);
        let n = 200_000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        let payoff = |z: f64| {
            let st = f * (s * z - 0.5 * s * s).exp();
            (st - k).max(0.0) * norm_pdf(z)
        };
        let mut acc = payoff(a) + payoff(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * payoff(a + i as f64 * h);
        }
        let quad = acc * h / 3.0;
        assert!((bs_price(f, k, 1.0, 0.0, s, true) - quad).abs() < 1e-10);
    }

    #[test]
    fn roundtrip() {
        for &(k, call) in &[(80.0, false), (100.0, true), (120.0, true), (95.0, false)] {
            let p = bs_price(100.0, k, 0.25, 0.03, 0.2, call);
            let s = implied_vol(p, 100.0, k, 0.25, 0.03, call).unwrap();
            assert!((s - 0.2).abs() < 1e-8, "k={k} s={s}");
        }
    }

    #[test]
    fn intrinsic_is_bounds_error() {
        let err = implied_vol(10.0, 110.0, 100.0, 0.5, 0.0, true).unwrap_err();
        assert!(matches!(err, Error::Bounds(BoundSide::Lower)));
        let err = implied_vol(100.0, 100.0, 110.0, 0.5, 0.0, true).unwrap_err();
        assert!(matches!(err, Error::Bounds(BoundSide::Upper)));
    }

    #[test]
    fn deep_otm_put_near_tick_matches_bisection() {
        let (f, k, t) = (100.0, 60.0, 30.0 / 365.0);
        let price = 0.05;
        let s = implied_vol(price, f, k, t, 0.0, false).unwrap();
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bs_price(f, k, t, 0.0, mid, false) < price {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((s - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn atm_vega() {
        let (t, s) = (0.3, 0.25);
        let w: f64 = s * s * t;
        let expect = 100.0 * t.sqrt() * norm_pdf(0.5 * w.sqrt());
        assert!((vega(100.0, 100.0, t, 0.0, s) - expect).abs() < 1e-14);
    }

    #[test]
    fn vega_matches_finite_difference() {
        let h = 1e-6;
        for &r in &[0.0f64, 0.04] {
            for &k in &[70.0, 90.0, 100.0, 115.0, 140.0] {
                for &s in &[0.1, 0.3, 0.8] {
                    let t: f64 = 0.4;
                    let undiscounted = |sig: f64| (r * t).exp() * bs_price(100.0, k, t, r, sig, k > 100.0);
                    let fd = (undiscounted(s + h) - undiscounted(s - h)) / (2.0 * h);
                    let v = vega(100.0, k, t, r, s);
                    assert!(((fd - v) / v).abs() < 1e-6, "k={k} s={s} fd={fd} v={v}");
                }
            }
        }
    }
}
