//! Raw quotes, filtering rules, forward extraction, rate curves and slice construction.

use crate::blackscholes::{implied_vol, vega};
use crate::error::{Error, Result};
use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawQuote {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub is_call: bool,
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    /// None when the data carries no volume (synthetic markets).
    pub volume: Option<u64>,
    #[serde(default)]
    pub settlement: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DayCount {
    /// Calendar days / 365.
    #[default]
    Act365,
    /// Weekdays / 250.
    Business250,
}

/// Day count and year fraction between two dates.
pub fn tenor_between(from: NaiveDate, to: NaiveDate, dc: DayCount) -> (i64, f64) {
    match dc {
        DayCount::Act365 => {
            let d = (to - from).num_days();
            (d, d as f64 / 365.0)
        }
        DayCount::Business250 => {
            let d = weekdays_between(from, to);
            (d, d as f64 / 250.0)
        }
    }
}

/// Weekdays in (from, to].
pub fn weekdays_between(from: NaiveDate, to: NaiveDate) -> i64 {
    let mut n = 0;
    let mut d = from;
    while d < to {
        d = d.succ_opt().expect("date overflow");
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            n += 1;
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterRules {
    pub max_ask_bid_ratio: f64,
    pub min_days: i64,
    pub max_days: i64,
    pub early_closures: Vec<NaiveDate>,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules { max_ask_bid_ratio: 10.0, min_days: 2, max_days: 365, early_closures: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceWarning {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<RawQuote>,
    pub warnings: Vec<SliceWarning>,
}

pub fn filter_quotes(quotes: &[RawQuote], rules: &FilterRules) -> FilterOutcome {
    let closures: BTreeSet<NaiveDate> = rules.early_closures.iter().copied().collect();
    let mut seen: BTreeSet<(NaiveDate, NaiveDate)> = BTreeSet::new();
    let mut survived: BTreeSet<(NaiveDate, NaiveDate)> = BTreeSet::new();
    let mut kept = Vec::with_capacity(quotes.len());
    for q in quotes {
        let key = (q.quote_date, q.expiry_date);
        seen.insert(key);
        let days = (q.expiry_date - q.quote_date).num_days();
        let ok = q.bid > 0.0
            && q.ask / q.bid < rules.max_ask_bid_ratio
            && days >= rules.min_days
            && days <= rules.max_days
            && !closures.contains(&q.quote_date);
        if ok {
            survived.insert(key);
            kept.push(q.clone());
        }
    }
    let warnings = seen
        .difference(&survived)
        .map(|&(quote_date, expiry_date)| SliceWarning { quote_date, expiry_date, reason: "all quotes filtered".into() })
        .collect();
    FilterOutcome { kept, warnings }
}

/// Median of K + e^{r tau}(C - P) over the (up to) five pairs with the smallest |C - P|.
/// `pairs` holds (strike, call mid, put mid).
pub fn extract_forward(pairs: &[(f64, f64, f64)], r: f64, tau: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::MissingForward);
    }
    let mut sorted: Vec<&(f64, f64, f64)> = pairs.iter().collect();
    sorted.sort_by(|a, b| (a.1 - a.2).abs().partial_cmp(&(b.1 - b.2).abs()).unwrap().then(a.0.partial_cmp(&b.0).unwrap()));
    let growth = (r * tau).exp();
    let mut f: Vec<f64> = sorted.iter().take(5).map(|(k, c, p)| k + growth * (c - p)).collect();
    f.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = f.len();
    Ok(if n % 2 == 1 { f[n / 2] } else { 0.5 * (f[n / 2 - 1] + f[n / 2]) })
}

/// Zero-rate curves per date; linear in tenor days, flat outside the quoted range.
#[derive(Debug, Clone, Default)]
pub struct RateCurve {
    pub curves: BTreeMap<NaiveDate, Vec<(f64, f64)>>,
}

impl RateCurve {
    pub fn flat(rate: f64) -> Self {
        let mut curves = BTreeMap::new();
        curves.insert(NaiveDate::MIN, vec![(1.0, rate)]);
        RateCurve { curves }
    }

    pub fn insert(&mut self, date: NaiveDate, tenor_days: f64, rate: f64) {
        let c = self.curves.entry(date).or_default();
        c.push((tenor_days, rate));
        c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }

    /// Uses the latest curve on or before `date` (or the earliest curve if none precedes it).
    pub fn rate(&self, date: NaiveDate, tenor_days: f64) -> Option<f64> {
        let curve = self.curves.range(..=date).next_back().or_else(|| self.curves.iter().next()).map(|(_, c)| c)?;
        Some(interp_flat(curve, tenor_days))
    }
}

fn interp_flat(c: &[(f64, f64)], x: f64) -> f64 {
    if x <= c[0].0 {
        return c[0].1;
    }
    let last = c[c.len() - 1];
    if x >= last.0 {
        return last.1;
    }
    let i = c.partition_point(|p| p.0 <= x);
    let (a, b) = (c[i - 1], c[i]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// One date-tenor cross-section of OTM quotes (puts for m <= 0, calls for m > 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSlice {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub tenor_days: i64,
    pub tau: f64,
    pub forward: f64,
    pub rate: f64,
    pub m: Vec<f64>,
    pub strike: Vec<f64>,
    pub mid: Vec<f64>,
    pub bsiv: Vec<f64>,
    pub vega: Vec<f64>,
    pub volume: Vec<Option<u64>>,
    pub is_call: Vec<bool>,
}

impl OptionSlice {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Builds a slice from already-OTM (strike, price, volume) points; implied vols are inverted here.
    /// Points whose price cannot be inverted are skipped and counted.
    #[allow(clippy::too_many_arguments)]
    pub fn from_otm_prices(
        quote_date: NaiveDate,
        expiry_date: NaiveDate,
        tenor_days: i64,
        tau: f64,
        forward: f64,
        rate: f64,
        points: &[(f64, f64, Option<u64>)],
    ) -> (OptionSlice, usize) {
        let mut rows: Vec<(f64, f64, f64, f64, f64, Option<u64>, bool)> = Vec::with_capacity(points.len());
        let mut skipped = 0;
        for &(k, price, vol) in points {
            let m = (k / forward).ln();
            let is_call = m > 0.0;
            match implied_vol(price, forward, k, tau, rate, is_call) {
                Ok(s) if s.is_finite() && s > 0.0 => {
                    rows.push((m, k, price, s, vega(forward, k, tau, rate, s), vol, is_call));
                }
                _ => skipped += 1,
            }
        }
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        rows.dedup_by(|a, b| a.0 == b.0);
        let slice = OptionSlice {
            quote_date,
            expiry_date,
            tenor_days,
            tau,
            forward,
            rate,
            m: rows.iter().map(|r| r.0).collect(),
            strike: rows.iter().map(|r| r.1).collect(),
            mid: rows.iter().map(|r| r.2).collect(),
            bsiv: rows.iter().map(|r| r.3).collect(),
            vega: rows.iter().map(|r| r.4).collect(),
            volume: rows.iter().map(|r| r.5).collect(),
            is_call: rows.iter().map(|r| r.6).collect(),
        };
        (slice, skipped)
    }
}

/// Builds the OTM slice for one date-expiry group: forward from parity, then OTM mids.
pub fn build_slice(quotes: &[RawQuote], rates: &RateCurve, dc: DayCount) -> Result<(OptionSlice, usize)> {
    let first = quotes.first().ok_or_else(|| Error::Empty("slice has no quotes".into()))?;
    let (quote_date, expiry_date) = (first.quote_date, first.expiry_date);
    let (days, tau) = tenor_between(quote_date, expiry_date, dc);
    let cal_days = (expiry_date - quote_date).num_days() as f64;
    let r = rates.rate(quote_date, cal_days).ok_or_else(|| Error::Invalid(format!("no rate curve for {quote_date}")))?;
    let mut calls: BTreeMap<u64, (f64, f64, Option<u64>)> = BTreeMap::new();
    let mut puts: BTreeMap<u64, (f64, f64, Option<u64>)> = BTreeMap::new();
    for q in quotes {
        let mid = 0.5 * (q.bid + q.ask);
        let side = if q.is_call { &mut calls } else { &mut puts };
        side.insert(q.strike.to_bits(), (q.strike, mid, q.volume));
    }
    let pairs: Vec<(f64, f64, f64)> = calls
        .iter()
        .filter_map(|(key, c)| puts.get(key).map(|p| (c.0, c.1, p.1)))
        .collect();
    let forward = extract_forward(&pairs, r, tau)?;
    let mut points = Vec::new();
    for c in calls.values().filter(|c| c.0 > forward) {
        points.push(*c);
    }
    for p in puts.values().filter(|p| p.0 <= forward) {
        points.push(*p);
    }
    Ok(OptionSlice::from_otm_prices(quote_date, expiry_date, days, tau, forward, r, &points))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TenorStats {
    pub days: i64,
    pub volume: u64,
    pub count: usize,
}

/// For each target, starts at the longest tenor at or below it and moves to a shorter one
/// (above the previous target) only when both volume and quote count are larger.
pub fn select_tenors(available: &[TenorStats], targets: &[i64]) -> Vec<i64> {
    let mut sorted = available.to_vec();
    sorted.sort_by_key(|s| s.days);
    let mut out = Vec::new();
    let mut floor = i64::MIN;
    for &target in targets {
        let window: Vec<&TenorStats> = sorted.iter().filter(|s| s.days <= target && s.days > floor).collect();
        if let Some(start) = window.last() {
            let mut best = **start;
            for s in window.iter().rev().skip(1) {
                if s.volume > best.volume && s.count > best.count {
                    best = **s;
                }
            }
            out.push(best.days);
        }
        floor = target;
    }
    out
}
