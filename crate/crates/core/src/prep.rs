//! Quote files to measurement panels: filter, group, select tenors, fit surfaces, span.

use crate::error::{Error, Result};
use crate::spanning::{build_measurement, CCFMeasurement, SpanOptions};
use crate::surface::{build_slice, filter_quotes, prepare_slice, select_tenors, tenor_between, DayCount, FilterRules, PreparedSurface, RateCurve, RawQuote, TenorStats};
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Machine-readable per-slice event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub quote_date: NaiveDate,
    pub tenor_days: Option<i64>,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(quote_date: NaiveDate, tenor_days: Option<i64>, code: &str, message: impl Into<String>) -> Self {
        Diagnostic { quote_date, tenor_days, code: code.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepOptions {
    pub filter: FilterRules,
    pub day_count: DayCount,
    /// Target tenors in days; empty keeps every expiry.
    pub target_tenors: Vec<i64>,
    pub u_grid: Vec<f64>,
    pub span: SpanOptions,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            filter: FilterRules::default(),
            day_count: DayCount::default(),
            target_tenors: Vec::new(),
            u_grid: (1..=20).map(f64::from).collect(),
            span: SpanOptions::default(),
        }
    }
}

/// Spans the prepared tenors of one date. A tenor that fails is logged and dropped;
/// the date is dropped when none is left.
pub fn measure_date(date: NaiveDate, mut surfaces: Vec<PreparedSurface>, u_grid: &[f64], span: &SpanOptions, exog: &[f64]) -> (Option<CCFMeasurement>, Vec<Diagnostic>) {
    let mut diags = Vec::new();
    loop {
        if surfaces.is_empty() {
            diags.push(Diagnostic::new(date, None, "date_dropped", "no usable tenor"));
            return (None, diags);
        }
        match build_measurement(&surfaces, u_grid, span, exog) {
            Ok(m) => return (Some(m), diags),
            Err(e) => {
                let msg = e.to_string();
                let bad = surfaces.iter().position(|ps| msg.contains(&format!("tenor {} days", ps.tenor_days))).unwrap_or(0);
                let ps = surfaces.remove(bad);
                diags.push(Diagnostic::new(date, Some(ps.tenor_days), "span_failed", msg));
            }
        }
    }
}

/// Full ingestion of a quote file. `exog` supplies observed exogenous state values per date.
pub fn prepare_measurements(quotes: &[RawQuote], rates: &RateCurve, opts: &PrepOptions, exog: &BTreeMap<NaiveDate, Vec<f64>>) -> Result<(Vec<CCFMeasurement>, Vec<Diagnostic>)> {
    if quotes.is_empty() {
        return Err(Error::Empty("quote file has no rows".into()));
    }
    let outcome = filter_quotes(quotes, &opts.filter);
    let mut diags: Vec<Diagnostic> = outcome
        .warnings
        .iter()
        .map(|w| Diagnostic::new(w.quote_date, Some(tenor_between(w.quote_date, w.expiry_date, opts.day_count).0), "filtered_out", w.reason.clone()))
        .collect();
    let mut groups: BTreeMap<NaiveDate, BTreeMap<NaiveDate, Vec<RawQuote>>> = BTreeMap::new();
    for q in outcome.kept {
        groups.entry(q.quote_date).or_default().entry(q.expiry_date).or_default().push(q);
    }
    let per_date: Vec<(Option<CCFMeasurement>, Vec<Diagnostic>)> = groups
        .into_par_iter()
        .map(|(date, expiries)| {
            let mut diags = Vec::new();
            let chosen: Vec<i64> = if opts.target_tenors.is_empty() {
                expiries.keys().map(|&e| tenor_between(date, e, opts.day_count).0).collect()
            } else {
                let stats: Vec<TenorStats> = expiries
                    .iter()
                    .map(|(&e, qs)| TenorStats { days: tenor_between(date, e, opts.day_count).0, volume: qs.iter().filter_map(|q| q.volume).sum(), count: qs.len() })
                    .collect();
                select_tenors(&stats, &opts.target_tenors)
            };
            let mut surfaces = Vec::new();
            for (&expiry, qs) in &expiries {
                let days = tenor_between(date, expiry, opts.day_count).0;
                if !chosen.contains(&days) {
                    continue;
                }
                let slice = match build_slice(qs, rates, opts.day_count) {
                    Ok((s, skipped)) => {
                        if skipped > 0 {
                            diags.push(Diagnostic::new(date, Some(days), "iv_skipped", format!("{skipped} quotes without implied vol")));
                        }
                        s
                    }
                    Err(e) => {
                        diags.push(Diagnostic::new(date, Some(days), "slice_failed", e.to_string()));
                        continue;
                    }
                };
                match prepare_slice(&slice) {
                    Ok(ps) => {
                        if ps.fallback_knots {
                            diags.push(Diagnostic::new(date, Some(days), "knot_fallback", "fewer than 4 knots passed the selection rule"));
                        }
                        surfaces.push(ps);
                    }
                    Err(e) => diags.push(Diagnostic::new(date, Some(days), "surface_failed", e.to_string())),
                }
            }
            let ex = exog.get(&date).cloned().unwrap_or_default();
            let (m, more) = measure_date(date, surfaces, &opts.u_grid, &opts.span, &ex);
            diags.extend(more);
            (m, diags)
        })
        .collect();
    let mut out = Vec::new();
    for (m, d) in per_date {
        out.extend(m);
        diags.extend(d);
    }
    Ok((out, diags))
}
