use anyhow::{bail, Context, Result};
use ccfilter_core::ajd::{admissible, ModelTag, ParameterVector, RiccatiOptions};
use ccfilter_core::estimate::EstimateOptions;
use ccfilter_core::optim::{BfgsOptions, NelderMeadOptions};
use ccfilter_core::prep::PrepOptions;
use ccfilter_core::simulate::SimConfig;
use ccfilter_core::statespace::FilterOptions;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub tag: ModelTag,
    /// Overrides of the catalog defaults.
    pub parameters: BTreeMap<String, f64>,
    /// Replaces the catalog's fixed set when present.
    pub fixed: Option<Vec<String>>,
    /// Parameter table written by a previous `estimate` run; its values override `parameters`.
    pub theta_file: Option<PathBuf>,
    /// Additional starting points for estimation, as overrides of the resolved parameters.
    pub extra_starts: Vec<BTreeMap<String, f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { tag: ModelTag::Svcdej, parameters: BTreeMap::new(), fixed: None, theta_file: None, extra_starts: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub quotes: Option<PathBuf>,
    pub rates: Option<PathBuf>,
    /// Flat rate used when no rate file is given.
    pub flat_rate: f64,
    pub panel: Option<PathBuf>,
    pub noise_blocks: Option<PathBuf>,
    /// True-path file from `simulate`; used for the exogenous factor and filter diagnostics.
    pub paths: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub riccati: RiccatiOptions,
    pub bfgs: BfgsOptions,
    pub nelder_mead: NelderMeadOptions,
    pub skip_nelder_mead: bool,
    pub penalty_weight: f64,
    pub hessian_step: f64,
    pub score_step: f64,
    pub compute_se: bool,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let d = EstimateOptions::default();
        EstimationSection {
            riccati: d.riccati,
            bfgs: d.bfgs,
            nelder_mead: d.nelder_mead,
            skip_nelder_mead: d.skip_nelder_mead,
            penalty_weight: d.penalty_weight,
            hessian_step: d.hessian_step,
            score_step: d.score_step,
            compute_se: d.compute_se,
        }
    }
}

impl EstimationSection {
    pub fn options(&self, filter: &FilterOptions) -> EstimateOptions {
        EstimateOptions {
            filter: *filter,
            riccati: self.riccati,
            bfgs: self.bfgs,
            nelder_mead: self.nelder_mead,
            skip_nelder_mead: self.skip_nelder_mead,
            penalty_weight: self.penalty_weight,
            hessian_step: self.hessian_step,
            score_step: self.score_step,
            compute_se: self.compute_se,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub noiseless: bool,
    pub skip_estimation: bool,
    /// Threshold levels for a sweep; empty runs a single level at `filter.sbar`.
    pub sbar_sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceSection {
    /// Latent state values (v, and h for the exogenous-factor model).
    pub state: Vec<f64>,
    pub forward: f64,
    pub tau_days: f64,
    pub strikes: Vec<f64>,
    pub rate: f64,
}

impl Default for PriceSection {
    fn default() -> Self {
        PriceSection { state: vec![0.015], forward: 100.0, tau_days: 30.0, strikes: vec![90.0, 95.0, 100.0, 105.0, 110.0], rate: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: Option<PathBuf>,
    pub model: ModelSection,
    pub data: DataSection,
    pub simulation: SimConfig,
    pub prep: PrepOptions,
    pub filter: FilterOptions,
    pub estimation: EstimationSection,
    pub montecarlo: MonteCarloSection,
    pub price: PriceSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

fn must_exist(p: &Option<PathBuf>, what: &str) -> Result<()> {
    if let Some(x) = p {
        if !x.exists() {
            bail!("{what} file {} does not exist", x.display());
        }
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads a config file; relative paths are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.quotes, &mut cfg.data.rates, &mut cfg.data.panel, &mut cfg.data.noise_blocks, &mut cfg.data.paths, &mut cfg.model.theta_file, &mut cfg.output] {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static checks that do not touch the file system.
    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        if let Some(t) = self.prep.target_tenors.iter().find(|&&t| t < 2) {
            bail!("target tenor of {t} days is below the 2-day minimum");
        }
        let u = &self.prep.u_grid;
        if u.is_empty() || u.iter().any(|&x| !(x > 0.0)) || u.windows(2).any(|w| w[1] <= w[0]) {
            bail!("u_grid must be nonempty, positive and strictly ascending");
        }
        if !(self.filter.sbar > 0.0) {
            bail!("filter.sbar must be positive");
        }
        Ok(())
    }

    /// Input files of a command must exist before any work starts.
    pub fn check_inputs(&self, command: &str) -> Result<()> {
        let d = &self.data;
        match command {
            "prep" => {
                must_exist(&d.quotes, "quote")?;
                must_exist(&d.rates, "rate")?;
                must_exist(&d.paths, "path")?;
            }
            "filter" | "estimate" => {
                must_exist(&d.panel, "panel")?;
                must_exist(&d.noise_blocks, "noise block")?;
                if command == "filter" {
                    must_exist(&d.paths, "path")?;
                }
            }
            _ => {}
        }
        must_exist(&self.model.theta_file, "parameter")
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Parameters from the model section (and its parameter file when given).
    pub fn parameters(&self) -> Result<ParameterVector> {
        let mut p = ParameterVector::defaults(self.model.tag);
        for (k, v) in &self.model.parameters {
            p.set(k, *v)?;
        }
        if let Some(fixed) = &self.model.fixed {
            for i in 0..p.fixed.len() {
                p.fixed[i] = false;
            }
            for name in fixed {
                p.set_fixed(name, true)?;
            }
        }
        if let Some(path) = &self.model.theta_file {
            for (name, v) in crate::commands::read_theta(path)? {
                p.set(&name, v)?;
            }
            // Estimates may sit marginally outside the Feller/stationarity boundary.
            let bad = p.domain_violations();
            if !bad.is_empty() {
                bail!("parameters in {} are outside their domains: {}", path.display(), bad.join("; "));
            }
            let adm = admissible(&p);
            if !adm.ok {
                log::warn!("parameters in {} violate: {}", path.display(), adm.violations.join("; "));
            }
            return Ok(p);
        }
        let adm = admissible(&p);
        if !adm.ok {
            bail!("model parameters are not admissible: {}", adm.violations.join("; "));
        }
        Ok(p)
    }

    pub fn starts(&self) -> Result<Vec<ParameterVector>> {
        let base = self.parameters()?;
        let mut out = vec![base.clone()];
        for s in &self.model.extra_starts {
            let mut p = base.clone();
            for (k, v) in s {
                p.set(k, *v)?;
            }
            out.push(p);
        }
        Ok(out)
    }
}
