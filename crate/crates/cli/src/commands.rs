use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use ccfilter_core::ajd::build_pricing_model;
use ccfilter_core::estimate::{objective, qml_multistart};
use ccfilter_core::io;
use ccfilter_core::montecarlo::{monte_carlo, threshold_sweep, MonteCarloOptions};
use ccfilter_core::prep::prepare_measurements;
use ccfilter_core::simulate::{add_business_days, cos_price, euler_simulate, synth_market, SimConfig};
use ccfilter_core::statespace::{filter_panel, PreparedPanel};
use ccfilter_core::surface::RateCurve;
use chrono::NaiveDate;
use log::info;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// (name, estimate) pairs from a parameter table written by `estimate`.
pub fn read_theta(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).context("missing name column")?.to_string();
        let v: f64 = rec.get(1).context("missing estimate column")?.parse().with_context(|| format!("estimate of {name}"))?;
        out.push((name, v));
    }
    Ok(out)
}

fn sim_config(cfg: &RunConfig) -> SimConfig {
    cfg.simulation.clone()
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = sim_config(cfg);
    sc.validate()?;
    let paths = euler_simulate(&sc, sc.seed)?;
    let market = synth_market(paths, &sc, sc.seed)?;
    let quotes: Vec<_> = market.slices.iter().flatten().flat_map(|s| s.raw_quotes()).collect();
    io::write_quotes(&out.join("quotes.csv"), &quotes)?;
    let rates: Vec<(NaiveDate, f64, f64)> = market
        .paths
        .dates
        .iter()
        .flat_map(|&d| sc.tenors_days.iter().map(move |&t| (d, (add_business_days(d, t) - d).num_days() as f64, sc.rate)))
        .collect();
    io::write_rates(&out.join("rates.csv"), &rates)?;
    io::write_paths(&out.join("paths.csv"), &market.paths)?;
    io::write_market_detail(&out.join("market_detail.csv"), &market)?;
    info!("simulated {} dates, {} quotes, {} floored", market.paths.dates.len(), quotes.len(), market.floored);
    Ok(())
}

fn exog_from_paths(cfg: &RunConfig) -> Result<BTreeMap<NaiveDate, Vec<f64>>> {
    let mut out = BTreeMap::new();
    if let Some(p) = &cfg.data.paths {
        let paths = io::read_paths(p)?;
        if !paths.h.is_empty() {
            for (d, h) in paths.dates.iter().zip(&paths.h) {
                out.insert(*d, vec![*h]);
            }
        }
    }
    Ok(out)
}

pub fn prep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let qpath = cfg.data.quotes.as_ref().context("data.quotes is required for prep")?;
    let quotes = io::read_quotes(qpath)?;
    let rates = match &cfg.data.rates {
        Some(p) => io::read_rates(p)?,
        None => RateCurve::flat(cfg.data.flat_rate),
    };
    let exog = exog_from_paths(cfg)?;
    let (ms, diags) = prepare_measurements(&quotes, &rates, &cfg.prep, &exog)?;
    io::write_diagnostics(&out.join("diagnostics.csv"), &diags)?;
    if ms.is_empty() {
        bail!("no date produced a measurement; see diagnostics.csv");
    }
    io::write_panel(&out.join("panel.csv"), &out.join("panel_noise.txt"), &ms)?;
    info!("prepared {} dates, {} diagnostics", ms.len(), diags.len());
    Ok(())
}

fn load_panel(cfg: &RunConfig) -> Result<PreparedPanel> {
    let panel = cfg.data.panel.as_ref().context("data.panel is required")?;
    let blocks = cfg.data.noise_blocks.clone().unwrap_or_else(|| panel.with_file_name("panel_noise.txt"));
    let ms = io::read_panel(panel, &blocks)?;
    Ok(PreparedPanel::new(&ms, cfg.filter.sbar)?)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Correlation of sqrt(filtered v) with sqrt(true v) on the dates both files share.
pub fn filter_correlation(run: &ccfilter_core::statespace::FilterRun, paths: &ccfilter_core::simulate::SimPaths) -> Option<f64> {
    let truth: BTreeMap<NaiveDate, f64> = paths.dates.iter().copied().zip(paths.v.iter().copied()).collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in &run.steps {
        if let Some(&v) = truth.get(&s.quote_date) {
            a.push(s.x_filt[0].max(0.0).sqrt());
            b.push(v.max(0.0).sqrt());
        }
    }
    (a.len() > 2).then(|| correlation(&a, &b))
}

pub fn filter(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let params = cfg.parameters()?;
    let run = filter_panel(&params, &panel, &cfg.filter, &cfg.estimation.riccati)?;
    io::write_filter(&out.join("filter.csv"), &run, &["v"])?;
    let mut s = String::new();
    let _ = writeln!(s, "dates: {}", run.steps.len());
    let _ = writeln!(s, "loglik (proportional): {}", run.loglik);
    let _ = writeln!(s, "loglik (full): {}", run.loglik_full);
    if let Some(p) = &cfg.data.paths {
        if let Some(c) = filter_correlation(&run, &io::read_paths(p)?) {
            let _ = writeln!(s, "corr(sqrt filtered v, sqrt true v): {c}");
        }
    }
    io::write_text(&out.join("filter_summary.txt"), &s)?;
    Ok(())
}

pub fn estimate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let panel = load_panel(cfg)?;
    let opts = cfg.estimation.options(&cfg.filter);
    let starts = cfg.starts()?;
    let r = qml_multistart(&panel, &starts, &opts)?;
    io::write_estimation(&out.join("estimation.csv"), &r)?;
    let summary = io::estimation_summary(&r);
    io::write_text(&out.join("estimation_summary.txt"), &summary)?;
    io::write_text(&out.join("convergence.toml"), &toml::to_string(&r.convergence)?)?;
    if let Some(sc) = &r.scores {
        let mut w = csv::Writer::from_path(out.join("scores.csv"))?;
        let names = r.theta_hat.free_names();
        w.write_record(std::iter::once("quote_date").chain(names.iter().copied()))?;
        for (t, date) in panel.dates.iter().enumerate() {
            w.write_record(std::iter::once(date.quote_date.to_string()).chain((0..sc.ncols()).map(|j| sc[(t, j)].to_string())))?;
        }
        w.flush()?;
    }
    let check = objective(&r.theta_hat, &panel, &opts);
    info!("objective at estimate {check}");
    print!("{summary}");
    Ok(())
}

fn mc_options(cfg: &RunConfig) -> MonteCarloOptions {
    MonteCarloOptions {
        u_grid: cfg.prep.u_grid.clone(),
        span: cfg.prep.span,
        estimate: cfg.estimation.options(&cfg.filter),
        noiseless: cfg.montecarlo.noiseless,
        skip_estimation: cfg.montecarlo.skip_estimation,
    }
}

pub fn montecarlo(cfg: &RunConfig, out: &Path) -> Result<()> {
    let sc = sim_config(cfg);
    let opts = mc_options(cfg);
    if cfg.montecarlo.sbar_sweep.is_empty() {
        let report = monte_carlo(&sc, &opts)?;
        io::write_mc_table(&out.join("montecarlo_table.csv"), &report)?;
        io::write_replications(&out.join("replications.csv"), &report)?;
        println!("rmspe {} failed {}", report.rmspe, report.failed);
    } else {
        let sweep = threshold_sweep(&sc, &cfg.montecarlo.sbar_sweep, &opts)?;
        let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
        w.write_record(["sbar", "rmspe", "failed"])?;
        for (k, (sbar, report)) in sweep.iter().enumerate() {
            w.write_record([sbar.to_string(), report.rmspe.to_string(), report.failed.to_string()])?;
            io::write_mc_table(&out.join(format!("montecarlo_table_{k}.csv")), report)?;
            io::write_replications(&out.join(format!("replications_{k}.csv")), report)?;
            println!("sbar {sbar:e} rmspe {} failed {}", report.rmspe, report.failed);
        }
        w.flush()?;
    }
    Ok(())
}

pub fn price(cfg: &RunConfig, out: &Path) -> Result<()> {
    let p = cfg.parameters()?;
    let model = build_pricing_model(&p)?;
    let ps = &cfg.price;
    let mut state = vec![0.0];
    state.extend(&ps.state);
    if state.len() != model.dim_state {
        bail!("price.state needs {} values for {}", model.dim_state - 1, p.tag);
    }
    let tau = ps.tau_days / 250.0;
    let prices = cos_price(&model, &state, ps.forward, &ps.strikes, tau, ps.rate)?;
    let mut w = csv::Writer::from_path(out.join("prices.csv"))?;
    w.write_record(["strike", "type", "price"])?;
    for (k, v) in ps.strikes.iter().zip(&prices) {
        w.write_record([k.to_string(), if *k > ps.forward { "call" } else { "put" }.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
