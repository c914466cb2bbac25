//! CSV and plain-text file formats.
//!
//! Noise-block sidecar format: one block per (date, tenor), in panel order. Each block starts
//! with a header line `block <quote_date> <tenor_days> <n>` followed by `n` lines of `n`
//! space-separated values (row-major). Lines starting with `#` are comments.

use crate::error::{Error, Result};
use crate::estimate::EstimationResult;
use crate::montecarlo::MonteCarloReport;
use crate::prep::Diagnostic;
use crate::simulate::{SimPaths, SyntheticMarket};
use crate::spanning::CCFMeasurement;
use crate::statespace::FilterRun;
use crate::surface::{RateCurve, RawQuote};
use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct QuoteRow {
    quote_date: NaiveDate,
    expiry_date: NaiveDate,
    is_call: String,
    strike: f64,
    bid: f64,
    ask: f64,
    volume: Option<u64>,
}

fn parse_flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "c" | "call" => Ok(true),
        "false" | "0" | "p" | "put" => Ok(false),
        other => Err(Error::Invalid(format!("is_call value '{other}'"))),
    }
}

/// Reads `quote_date,expiry_date,is_call,strike,bid,ask,volume`; `is_call` accepts
/// true/false, 1/0, C/P or call/put, and volume may be empty.
pub fn read_quotes(path: &Path) -> Result<Vec<RawQuote>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: QuoteRow = row?;
        out.push(RawQuote {
            quote_date: r.quote_date,
            expiry_date: r.expiry_date,
            is_call: parse_flag(&r.is_call)?,
            strike: r.strike,
            bid: r.bid,
            ask: r.ask,
            volume: r.volume,
            settlement: None,
        });
    }
    Ok(out)
}

pub fn write_quotes(path: &Path, quotes: &[RawQuote]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for q in quotes {
        w.serialize(QuoteRow {
            quote_date: q.quote_date,
            expiry_date: q.expiry_date,
            is_call: q.is_call.to_string(),
            strike: q.strike,
            bid: q.bid,
            ask: q.ask,
            volume: q.volume,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RateRow {
    date: NaiveDate,
    tenor_days: f64,
    rate: f64,
}

/// Reads `date,tenor_days,rate` (continuously compounded zero rates).
pub fn read_rates(path: &Path) -> Result<RateCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut curve = RateCurve::default();
    for row in rdr.deserialize() {
        let r: RateRow = row?;
        curve.insert(r.date, r.tenor_days, r.rate);
    }
    if curve.curves.is_empty() {
        return Err(Error::Empty(format!("rate file {}", path.display())));
    }
    Ok(curve)
}

pub fn write_rates(path: &Path, rows: &[(NaiveDate, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for &(date, tenor_days, rate) in rows {
        w.serialize(RateRow { date, tenor_days, rate })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    quote_date: NaiveDate,
    tenor_days: i64,
    tau: f64,
    forward: f64,
    rate: f64,
    u: f64,
    re: f64,
    im: f64,
    /// Semicolon-separated exogenous state values.
    exog: String,
}

/// Panel CSV (one row per date, tenor and u) plus the noise-block sidecar.
pub fn write_panel(panel_path: &Path, sidecar_path: &Path, ms: &[CCFMeasurement]) -> Result<()> {
    let mut w = csv::Writer::from_path(panel_path)?;
    let mut side = String::from("# noise blocks: header 'block <date> <tenor_days> <n>', then n rows\n");
    for m in ms {
        let q = m.u_grid.len();
        let exog = m.exog.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        for (k, h) in m.h_blocks.iter().enumerate() {
            for (iu, &u) in m.u_grid.iter().enumerate() {
                w.serialize(PanelRow {
                    quote_date: m.quote_date,
                    tenor_days: m.tenor_days[k],
                    tau: m.taus[k],
                    forward: m.forwards[k],
                    rate: m.rates[k],
                    u,
                    re: m.y[2 * q * k + iu],
                    im: m.y[2 * q * k + q + iu],
                    exog: exog.clone(),
                })?;
            }
            let _ = writeln!(side, "block {} {} {}", m.quote_date, m.tenor_days[k], h.nrows());
            for i in 0..h.nrows() {
                let row: Vec<String> = (0..h.ncols()).map(|j| h[(i, j)].to_string()).collect();
                let _ = writeln!(side, "{}", row.join(" "));
            }
        }
    }
    w.flush()?;
    fs::write(sidecar_path, side)?;
    Ok(())
}

fn parse_num(s: &str, ctx: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Invalid(format!("{ctx}: '{s}' is not a number")))
}

fn read_sidecar(path: &Path) -> Result<Vec<(NaiveDate, i64, DMatrix<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let mut out = Vec::new();
    while let Some(head) = lines.next() {
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "block" {
            return Err(Error::Invalid(format!("sidecar header '{head}'")));
        }
        let date: NaiveDate = parts[1].parse().map_err(|_| Error::Invalid(format!("sidecar date '{}'", parts[1])))?;
        let tenor: i64 = parts[2].parse().map_err(|_| Error::Invalid(format!("sidecar tenor '{}'", parts[2])))?;
        let n: usize = parts[3].parse().map_err(|_| Error::Invalid(format!("sidecar size '{}'", parts[3])))?;
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let row = lines.next().ok_or_else(|| Error::Invalid(format!("sidecar block {date}/{tenor} truncated")))?;
            let vals: Vec<&str> = row.split_whitespace().collect();
            if vals.len() != n {
                return Err(Error::Invalid(format!("sidecar block {date}/{tenor} row {i} has {} values", vals.len())));
            }
            for (j, v) in vals.iter().enumerate() {
                h[(i, j)] = parse_num(v, "sidecar")?;
            }
        }
        out.push((date, tenor, h));
    }
    Ok(out)
}

pub fn read_panel(panel_path: &Path, sidecar_path: &Path) -> Result<Vec<CCFMeasurement>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(panel_path)?;
    // date -> tenor -> rows, keeping file order of tenors
    let mut by_date: BTreeMap<NaiveDate, Vec<(i64, Vec<PanelRow>)>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: PanelRow = row?;
        let tenors = by_date.entry(r.quote_date).or_default();
        match tenors.iter_mut().find(|(d, _)| *d == r.tenor_days) {
            Some((_, rows)) => rows.push(r),
            None => tenors.push((r.tenor_days, vec![r])),
        }
    }
    if by_date.is_empty() {
        return Err(Error::Empty(format!("panel file {}", panel_path.display())));
    }
    let mut blocks: BTreeMap<(NaiveDate, i64), DMatrix<f64>> = BTreeMap::new();
    for (d, t, h) in read_sidecar(sidecar_path)? {
        blocks.insert((d, t), h);
    }
    let mut out = Vec::with_capacity(by_date.len());
    for (date, tenors) in by_date {
        let u_grid: Vec<f64> = tenors[0].1.iter().map(|r| r.u).collect();
        let exog: Vec<f64> = tenors[0].1[0].exog.split(';').filter(|s| !s.is_empty()).map(|s| parse_num(s, "exog")).collect::<Result<_>>()?;
        let mut m = CCFMeasurement {
            quote_date: date,
            tenor_days: vec![],
            taus: vec![],
            u_grid: u_grid.clone(),
            y: vec![],
            h_blocks: vec![],
            forwards: vec![],
            rates: vec![],
            exog,
        };
        for (days, rows) in tenors {
            if rows.iter().map(|r| r.u).ne(u_grid.iter().copied()) {
                return Err(Error::Invalid(format!("{date}: u grid differs across tenors")));
            }
            let h = blocks.remove(&(date, days)).ok_or_else(|| Error::Invalid(format!("{date}: no noise block for tenor {days}")))?;
            if h.nrows() != 2 * u_grid.len() {
                return Err(Error::Invalid(format!("{date}: noise block for tenor {days} has size {}", h.nrows())));
            }
            m.tenor_days.push(days);
            m.taus.push(rows[0].tau);
            m.forwards.push(rows[0].forward);
            m.rates.push(rows[0].rate);
            m.y.extend(rows.iter().map(|r| r.re));
            m.y.extend(rows.iter().map(|r| r.im));
            m.h_blocks.push(h);
        }
        out.push(m);
    }
    Ok(out)
}

/// Filtered states: date, then predicted/filtered mean and variance per latent factor, then contributions.
pub fn write_filter(path: &Path, run: &FilterRun, latent_names: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["quote_date".to_string()];
    for n in latent_names {
        head.extend([format!("{n}_pred"), format!("{n}_filt"), format!("{n}_p_pred"), format!("{n}_p_filt")]);
    }
    head.extend(["loglik".into(), "loglik_full".into()]);
    w.write_record(&head)?;
    for s in &run.steps {
        let mut rec = vec![s.quote_date.to_string()];
        for i in 0..latent_names.len() {
            rec.extend([s.x_pred[i].to_string(), s.x_filt[i].to_string(), s.p_pred[(i, i)].to_string(), s.p_filt[(i, i)].to_string()]);
        }
        rec.extend([s.loglik.to_string(), s.loglik_full.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter table `name,estimate,se,fixed`.
pub fn write_estimation(path: &Path, r: &EstimationResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "estimate", "se", "fixed"])?;
    for (i, (name, v, se)) in r.table().into_iter().enumerate() {
        w.write_record([name, v.to_string(), se.map(|s| s.to_string()).unwrap_or_default(), r.theta_hat.fixed[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn estimation_summary(r: &EstimationResult) -> String {
    let mut s = String::new();
    let c = &r.convergence;
    let _ = writeln!(s, "model: {}", r.theta_hat.tag);
    let _ = writeln!(s, "log-likelihood: {:.6}", r.loglik);
    let _ = writeln!(s, "objective: {:.10} (start {:.10})", c.objective, c.initial_objective);
    let _ = writeln!(s, "converged: {} ({})", c.converged, c.message);
    let _ = writeln!(s, "bfgs iterations: {}, simplex iterations: {}, evaluations: {}", c.bfgs_iterations, c.nelder_mead_iterations, c.evaluations);
    let _ = writeln!(s, "max |gradient|: {:.3e}", c.gradient_max_abs);
    if let Some(l) = r.ridge {
        let _ = writeln!(s, "warning: Hessian regularized with ridge {l:.3e}");
    }
    let _ = writeln!(s, "\n{:<14}{:>16}{:>16}", "parameter", "estimate", "std. error");
    for (i, (name, v, se)) in r.table().into_iter().enumerate() {
        let se = match se {
            Some(x) => format!("{x:.6e}"),
            None if r.theta_hat.fixed[i] => "fixed".into(),
            None => "-".into(),
        };
        let _ = writeln!(s, "{name:<14}{v:>16.6}{se:>16}");
    }
    s
}

/// Summary in the layout of a Monte Carlo results table: one row per statistic, one column per parameter.
pub fn write_mc_table(path: &Path, r: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head = vec!["parameter".to_string()];
    head.extend(r.summary.iter().map(|s| s.name.clone()));
    w.write_record(&head)?;
    let rows: [(&str, fn(&crate::montecarlo::ParameterSummary) -> f64); 6] = [
        ("true value", |s| s.true_value),
        ("mean", |s| s.mean),
        ("std dev", |s| s.std_dev),
        ("q10", |s| s.q10),
        ("q50", |s| s.q50),
        ("q90", |s| s.q90),
    ];
    for (label, get) in rows {
        let mut rec = vec![label.to_string()];
        rec.extend(r.summary.iter().map(|s| get(s).to_string()));
        w.write_record(&rec)?;
    }
    let pad = r.summary.len().saturating_sub(1);
    for (label, v) in [("rmspe", r.rmspe.to_string()), ("failed", r.failed.to_string())] {
        let mut rec = vec![label.to_string(), v];
        rec.extend(std::iter::repeat_n(String::new(), pad));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replications(path: &Path, r: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut head: Vec<String> = ["index", "seed", "converged", "dates_used", "slices_skipped", "loglik", "error"].iter().map(|s| s.to_string()).collect();
    head.extend(r.names.iter().cloned());
    w.write_record(&head)?;
    for rep in &r.replications {
        let mut rec = vec![
            rep.index.to_string(),
            rep.seed.to_string(),
            rep.converged.to_string(),
            rep.dates_used.to_string(),
            rep.slices_skipped.to_string(),
            rep.loglik.map(|x| x.to_string()).unwrap_or_default(),
            rep.error.clone().unwrap_or_default(),
        ];
        match &rep.theta_hat {
            Some(t) => rec.extend(t.iter().map(|x| x.to_string())),
            None => rec.extend(r.names.iter().map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// True state path: `date,log_f,v[,h],jumps`.
pub fn write_paths(path: &Path, p: &SimPaths) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_h = !p.h.is_empty();
    let mut head = vec!["date", "log_f", "v"];
    if with_h {
        head.push("h");
    }
    head.push("jumps");
    w.write_record(&head)?;
    for t in 0..p.dates.len() {
        let mut rec = vec![p.dates[t].to_string(), p.log_f[t].to_string(), p.v[t].to_string()];
        if with_h {
            rec.push(p.h[t].to_string());
        }
        rec.push(p.jumps[t].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PathRow {
    date: NaiveDate,
    log_f: f64,
    v: f64,
    #[serde(default)]
    h: Option<f64>,
    jumps: u32,
}

pub fn read_paths(path: &Path) -> Result<SimPaths> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut p = SimPaths { dates: vec![], log_f: vec![], v: vec![], h: vec![], jumps: vec![] };
    for row in rdr.deserialize() {
        let r: PathRow = row?;
        p.dates.push(r.date);
        p.log_f.push(r.log_f);
        p.v.push(r.v);
        if let Some(h) = r.h {
            p.h.push(h);
        }
        p.jumps.push(r.jumps);
    }
    Ok(p)
}

/// Every simulated option with noiseless and noisy prices and the recorded greeks.
pub fn write_market_detail(path: &Path, m: &SyntheticMarket) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quote_date", "expiry_date", "tenor_days", "tau", "forward", "strike", "is_call", "otm", "price", "noisy", "bsiv", "vega", "floored"])?;
    for day in &m.slices {
        for s in day {
            for (otm, qs) in [(true, &s.otm), (false, &s.itm)] {
                for q in qs.iter() {
                    w.write_record([
                        s.quote_date.to_string(),
                        s.expiry_date.to_string(),
                        s.tenor_days.to_string(),
                        s.tau.to_string(),
                        s.forward.to_string(),
                        q.strike.to_string(),
                        q.is_call.to_string(),
                        otm.to_string(),
                        q.price.to_string(),
                        q.noisy.to_string(),
                        q.bsiv.to_string(),
                        q.vega.to_string(),
                        q.floored.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Diagnostics log `quote_date,tenor_days,code,message`.
pub fn write_diagnostics(path: &Path, diags: &[Diagnostic]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["quote_date", "tenor_days", "code", "message"])?;
    for d in diags {
        w.write_record([d.quote_date.to_string(), d.tenor_days.map(|x| x.to_string()).unwrap_or_default(), d.code.clone(), d.message.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
