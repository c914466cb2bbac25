//! Knot selection, natural-spline total-variance fit and linear wings with slope clamps.

use super::quotes::OptionSlice;
use super::spline::NaturalSpline;
use crate::blackscholes::{bs_price, vega};
use crate::error::{Error, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

const SLOPE_SHRINK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KnotSelection {
    pub indices: Vec<usize>,
    /// True when the condition-based selection gave fewer than 4 knots.
    pub fallback: bool,
}

/// Put and parity-implied call prices at a slice point.
fn put_call(s: &OptionSlice, i: usize) -> (f64, f64) {
    let carry = (-s.rate * s.tau).exp() * (s.forward - s.strike[i]);
    if s.is_call[i] {
        (s.mid[i] - carry, s.mid[i])
    } else {
        (s.mid[i], s.mid[i] + carry)
    }
}

/// For puts, walking away from the money: price must fall and the implied call must rise,
/// both against the last accepted knot (i) and the adjacent closer-to-ATM quote (ii);
/// volume must exceed one when present (iii). Calls mirror this.
pub fn select_knots(s: &OptionSlice) -> KnotSelection {
    let n = s.len();
    let puts: Vec<usize> = (0..n).filter(|&i| !s.is_call[i]).collect();
    let calls: Vec<usize> = (0..n).filter(|&i| s.is_call[i]).collect();
    let ordered = |a: usize, b: usize, put_side: bool| -> bool {
        // a is further from the money than b
        let (pa, ca) = put_call(s, a);
        let (pb, cb) = put_call(s, b);
        if put_side {
            pa < pb && ca > cb
        } else {
            ca < cb && pa > pb
        }
    };
    let volume_ok = |i: usize| s.volume[i].is_none_or(|v| v > 1);
    let mut knots = Vec::new();
    let walk = |side: &[usize], put_side: bool, knots: &mut Vec<usize>| {
        // side ordered from the money outwards
        let mut last: Option<usize> = None;
        for (pos, &i) in side.iter().enumerate() {
            match last {
                None => {
                    knots.push(i);
                    last = Some(i);
                }
                Some(k) => {
                    let neighbour = side[pos - 1];
                    if ordered(i, k, put_side) && ordered(i, neighbour, put_side) && volume_ok(i) {
                        knots.push(i);
                        last = Some(i);
                    }
                }
            }
        }
    };
    let put_side: Vec<usize> = puts.iter().rev().copied().collect();
    walk(&put_side, true, &mut knots);
    walk(&calls, false, &mut knots);
    knots.sort_unstable();
    if knots.len() >= 4 {
        return KnotSelection { indices: knots, fallback: false };
    }
    let mut mono = Vec::new();
    for (side, put) in [(&put_side, true), (&calls, false)] {
        for (pos, &i) in side.iter().enumerate() {
            if pos == 0 || ordered(i, side[pos - 1], put) {
                mono.push(i);
            }
        }
    }
    mono.sort_unstable();
    KnotSelection { indices: mono, fallback: true }
}

/// Printed right-wing bound.
pub fn printed_beta_max(m: f64, w: f64) -> f64 {
    let delta = 4.0 * m * m - w * w + 4.0 * w;
    let b2 = (-2.0 * m + 2.0 * (m * m + 2.0 * w * w + 4.0 * w).sqrt()) / (w + 2.0);
    if delta > 0.0 {
        ((m * (w - 2.0) + delta.sqrt()) / (m * m + 1.0)).max(b2)
    } else {
        b2
    }
}

/// Printed left-wing bound (the non-positive branch uses the mirrored sign).
pub fn printed_beta_min(m: f64, w: f64) -> f64 {
    let delta = 4.0 * m * m - w * w + 4.0 * w;
    let b2 = (-2.0 * m - 2.0 * (m * m + 2.0 * w * w + 4.0 * w).sqrt()) / (w + 2.0);
    if delta > 0.0 {
        ((m * (w - 2.0) - delta.sqrt()) / (m * m + 1.0)).max(b2)
    } else {
        b2
    }
}

/// Largest |slope| of a linear wing from (m, w) that keeps the Durrleman density condition
/// nonnegative on the whole wing.
pub fn exact_wing_bound(m: f64, w: f64) -> f64 {
    4.0 * w / (2.0 * m.abs() + (w * w + 4.0 * w).sqrt())
}

pub fn right_slope_bound(m: f64, w: f64) -> f64 {
    printed_beta_max(m, w).min(exact_wing_bound(m, w)).min(2.0)
}

pub fn left_slope_bound(m: f64, w: f64) -> f64 {
    printed_beta_min(m, w).max(-exact_wing_bound(m, w)).max(-2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedSurface {
    pub quote_date: NaiveDate,
    pub tenor_days: i64,
    pub tau: f64,
    pub forward: f64,
    pub rate: f64,
    pub spline: NaturalSpline,
    pub beta_low: f64,
    pub beta_up: f64,
    pub c_low: f64,
    pub c_up: f64,
    /// Log-moneyness of all observed OTM quotes in the source slice.
    pub observed_m: Vec<f64>,
    pub fallback_knots: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub total_variance: f64,
    pub bsiv: f64,
    pub otm_price: f64,
}

/// Left wing slope clamped into (max(beta_min, -2), 0].
pub fn clamp_left_slope(raw: f64, m1: f64, w1: f64) -> f64 {
    let lo = left_slope_bound(m1, w1);
    if lo >= 0.0 || raw > 0.0 {
        0.0
    } else if raw <= lo {
        lo + SLOPE_SHRINK
    } else {
        raw
    }
}

/// Right wing slope clamped into [0, min(beta_max, 2)).
pub fn clamp_right_slope(raw: f64, mn: f64, wn: f64) -> f64 {
    let hi = right_slope_bound(mn, wn);
    if hi <= 0.0 || raw < 0.0 {
        0.0
    } else if raw >= hi {
        hi - SLOPE_SHRINK
    } else {
        raw
    }
}

pub fn fit_surface(s: &OptionSlice, knots: &KnotSelection) -> Result<PreparedSurface> {
    if knots.indices.len() < 4 {
        return Err(Error::TooFewKnots(knots.indices.len()));
    }
    let xs: Vec<f64> = knots.indices.iter().map(|&i| s.m[i]).collect();
    let ws: Vec<f64> = knots.indices.iter().map(|&i| s.bsiv[i] * s.bsiv[i] * s.tau).collect();
    let spline = NaturalSpline::new(&xs, &ws);
    for i in 0..xs.len() - 1 {
        for j in 0..=16 {
            let t = xs[i] + (xs[i + 1] - xs[i]) * j as f64 / 16.0;
            if !(spline.eval_in(i, t) > 0.0) {
                return Err(Error::Arbitrage(t));
            }
        }
    }
    let (m1, mn) = (xs[0], xs[xs.len() - 1]);
    let (w1, wn) = (ws[0], ws[ws.len() - 1]);
    let beta_low = clamp_left_slope(spline.derivative(m1), m1, w1);
    let beta_up = clamp_right_slope(spline.derivative(mn), mn, wn);
    Ok(PreparedSurface {
        quote_date: s.quote_date,
        tenor_days: s.tenor_days,
        tau: s.tau,
        forward: s.forward,
        rate: s.rate,
        c_low: w1 - beta_low * m1,
        c_up: wn - beta_up * mn,
        spline,
        beta_low,
        beta_up,
        observed_m: s.m.clone(),
        fallback_knots: knots.fallback,
    })
}

impl PreparedSurface {
    pub fn m_first(&self) -> f64 {
        self.spline.x[0]
    }

    pub fn m_last(&self) -> f64 {
        *self.spline.x.last().unwrap()
    }

    pub fn total_variance(&self, m: f64) -> f64 {
        if m < self.m_first() {
            self.c_low + self.beta_low * m
        } else if m > self.m_last() {
            self.c_up + self.beta_up * m
        } else {
            self.spline.eval(m)
        }
    }

    pub fn vega_at(&self, m: f64) -> f64 {
        let w = self.total_variance(m);
        vega(self.forward, self.forward * m.exp(), self.tau, self.rate, (w / self.tau).sqrt())
    }
}

/// Knot selection followed by the spline fit.
pub fn prepare_slice(s: &OptionSlice) -> Result<PreparedSurface> {
    fit_surface(s, &select_knots(s))
}

pub fn evaluate_surface(ps: &PreparedSurface, m: f64) -> SurfacePoint {
    let w = ps.total_variance(m);
    let bsiv = (w / ps.tau).sqrt();
    let k = ps.forward * m.exp();
    SurfacePoint { total_variance: w, bsiv, otm_price: bs_price(ps.forward, k, ps.tau, ps.rate, bsiv, m > 0.0) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_from(ms: &[f64], prices: &[f64], vols: &[Option<u64>]) -> OptionSlice {
        let f = 100.0;
        let d = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        OptionSlice {
            quote_date: d,
            expiry_date: d,
            tenor_days: 30,
            tau: 30.0 / 365.0,
            forward: f,
            rate: 0.0,
            m: ms.to_vec(),
            strike: ms.iter().map(|m| f * m.exp()).collect(),
            mid: prices.to_vec(),
            bsiv: vec![0.2; ms.len()],
            vega: vec![1.0; ms.len()],
            volume: vols.to_vec(),
            is_call: ms.iter().map(|&m| m > 0.0).collect(),
        }
    }

    #[test]
    fn monotone_quotes_all_knots() {
        let ms = [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2];
        let pr = [0.05, 0.3, 1.0, 2.0, 0.8, 0.2];
        let s = slice_from(&ms, &pr, &[Some(5); 6]);
        let k = select_knots(&s);
        assert_eq!(k.indices, vec![0, 1, 2, 3, 4, 5]);
        assert!(!k.fallback);
    }

    #[test]
    fn flat_run_keeps_first_only() {
        let ms = [-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2];
        let pr = [0.05, 0.05, 0.05, 0.3, 1.0, 2.0, 0.8, 0.2];
        let s = slice_from(&ms, &pr, &[Some(5); 8]);
        assert_eq!(select_knots(&s).indices, vec![2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn volume_one_excluded() {
        let ms = [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2];
        let pr = [0.05, 0.3, 1.0, 2.0, 0.8, 0.2];
        let vols = [Some(5), Some(1), Some(5), Some(5), Some(5), Some(5)];
        let s = slice_from(&ms, &pr, &vols);
        assert_eq!(select_knots(&s).indices, vec![0, 2, 3, 4, 5]);
        let s = slice_from(&ms, &pr, &[None; 6]);
        assert_eq!(select_knots(&s).indices.len(), 6);
    }

    #[test]
    fn printed_right_bound_is_looser_than_arbitrage_scan() {
        // at (0.3, 0.04) the printed bound exceeds the exact one
        assert!((printed_beta_max(0.3, 0.04) - 0.199206).abs() < 1e-6);
        assert!((exact_wing_bound(0.3, 0.04) - 0.159681).abs() < 1e-6);
        assert_eq!(right_slope_bound(0.3, 0.04), exact_wing_bound(0.3, 0.04));
    }
}
