//! Model catalog: named parameter vectors, admissibility, and affine coefficient construction.

use super::jumps::{DoubleExpCoJump, GaussCoJump, NegExpCoJump, PosExp};
use super::{AffineModel, JumpComponent};
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "svcdej")]
    Svcdej,
    #[serde(rename = "svcj")]
    Svcj,
    #[serde(rename = "svcej")]
    Svcej,
    #[serde(rename = "svcdej-ex")]
    SvcdejEx,
}

impl std::str::FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svcdej" => Ok(ModelTag::Svcdej),
            "svcj" => Ok(ModelTag::Svcj),
            "svcej" => Ok(ModelTag::Svcej),
            "svcdej-ex" => Ok(ModelTag::SvcdejEx),
            other => Err(Error::Parameter(format!("unknown model tag '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelTag::Svcdej => "svcdej",
            ModelTag::Svcj => "svcj",
            ModelTag::Svcej => "svcej",
            ModelTag::SvcdejEx => "svcdej-ex",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Positive,
    NonNegative,
    Correlation,
    UnitInterval,
    Unrestricted,
}

impl Domain {
    pub fn contains(self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self {
            Domain::Positive => x > 0.0,
            Domain::NonNegative => x >= 0.0,
            Domain::Correlation => (-1.0..=1.0).contains(&x),
            Domain::UnitInterval => x > 0.0 && x < 1.0,
            Domain::Unrestricted => true,
        }
    }
}

/// (name, domain, default value, fixed by default)
type Spec = (&'static str, Domain, f64, bool);

const SVCDEJ: &[Spec] = &[
    ("sigma", Domain::Positive, 0.45, false),
    ("kappa", Domain::Positive, 8.0, false),
    ("vbar", Domain::Positive, 0.015, false),
    ("rho", Domain::Correlation, -0.95, false),
    ("delta", Domain::Positive, 100.0, false),
    ("eta_up", Domain::Positive, 0.02, false),
    ("eta_dn", Domain::Positive, 0.05, false),
    ("mu_v", Domain::Positive, 0.05, false),
    ("sigma_kappa", Domain::Positive, 0.02, false),
    ("p_dn", Domain::UnitInterval, 0.7, true),
    ("pi_v", Domain::Unrestricted, 0.0, true),
];

const SVCJ: &[Spec] = &[
    ("sigma", Domain::Positive, 0.45, false),
    ("kappa", Domain::Positive, 8.0, false),
    ("vbar", Domain::Positive, 0.015, false),
    ("rho", Domain::Correlation, -0.95, false),
    ("delta", Domain::Positive, 100.0, false),
    ("mu_j", Domain::Unrestricted, -0.02, false),
    ("sigma_j", Domain::Positive, 0.04, false),
    ("mu_v", Domain::Positive, 0.05, false),
    ("sigma_kappa", Domain::Positive, 0.02, false),
    ("pi_v", Domain::Unrestricted, 0.0, true),
];

const SVCEJ: &[Spec] = &[
    ("sigma", Domain::Positive, 0.45, false),
    ("kappa", Domain::Positive, 8.0, false),
    ("vbar", Domain::Positive, 0.015, false),
    ("rho", Domain::Correlation, -0.95, false),
    ("delta_up", Domain::Positive, 0.5, false),
    ("delta_dn", Domain::Positive, 70.0, false),
    ("eta_up", Domain::Positive, 0.02, false),
    ("eta_dn", Domain::Positive, 0.05, false),
    ("mu_v", Domain::Positive, 0.05, false),
    ("sigma_kappa", Domain::Positive, 0.02, false),
    ("pi_v", Domain::Unrestricted, 0.0, true),
];

const SVCDEJ_EX: &[Spec] = &[
    ("sigma", Domain::Positive, 0.45, false),
    ("kappa", Domain::Positive, 8.0, false),
    ("vbar", Domain::Positive, 0.015, false),
    ("rho", Domain::Correlation, -0.95, false),
    ("delta", Domain::Positive, 100.0, false),
    ("gamma", Domain::NonNegative, 1.0, false),
    ("q", Domain::NonNegative, 0.05, false),
    ("eta_up", Domain::Positive, 0.02, false),
    ("eta_dn", Domain::Positive, 0.05, false),
    ("mu_v", Domain::Positive, 0.05, false),
    ("sigma_kappa", Domain::Positive, 0.02, false),
    ("p_dn", Domain::UnitInterval, 0.7, true),
    ("pi_v", Domain::Unrestricted, 0.0, true),
    ("kappa_h", Domain::Positive, 1.0, true),
    ("hbar", Domain::Positive, 1.0, true),
    ("sigma_h", Domain::Positive, 0.1, true),
];

fn specs(tag: ModelTag) -> &'static [Spec] {
    match tag {
        ModelTag::Svcdej => SVCDEJ,
        ModelTag::Svcj => SVCJ,
        ModelTag::Svcej => SVCEJ,
        ModelTag::SvcdejEx => SVCDEJ_EX,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub tag: ModelTag,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub domains: Vec<Domain>,
    pub fixed: Vec<bool>,
}

impl ParameterVector {
    /// Catalog defaults; for SVCDEJ these are the baseline simulation values.
    pub fn defaults(tag: ModelTag) -> Self {
        let s = specs(tag);
        ParameterVector {
            tag,
            names: s.iter().map(|x| x.0.to_string()).collect(),
            values: s.iter().map(|x| x.2).collect(),
            domains: s.iter().map(|x| x.1).collect(),
            fixed: s.iter().map(|x| x.3).collect(),
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> f64 {
        match self.index(name) {
            Some(i) => self.values[i],
            None => panic!("parameter '{name}' not defined for {}", self.tag),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::Parameter(format!("'{name}' not defined for {}", self.tag)))?;
        self.values[i] = value;
        Ok(())
    }

    pub fn set_fixed(&mut self, name: &str, fixed: bool) -> Result<()> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::Parameter(format!("'{name}' not defined for {}", self.tag)))?;
        self.fixed[i] = fixed;
        Ok(())
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| !self.fixed[i]).collect()
    }

    pub fn free_names(&self) -> Vec<&str> {
        self.free_indices().into_iter().map(|i| self.names[i].as_str()).collect()
    }

    pub fn sigma_kappa(&self) -> f64 {
        self.get("sigma_kappa")
    }

    pub fn domain_violations(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.values)
            .zip(&self.domains)
            .filter(|((_, v), d)| !d.contains(**v))
            .map(|((n, v), d)| format!("{n}={v} outside {d:?}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admissibility {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Margins of the Feller and stationarity conditions (positive = satisfied).
pub fn admissibility_margins(p: &ParameterVector) -> Vec<(String, f64)> {
    let sigma = p.get("sigma");
    let kappa = p.get("kappa");
    let vbar = p.get("vbar");
    let pi_v = p.try_get("pi_v").unwrap_or(0.0);
    let mut out = vec![("feller: 2 kappa vbar > sigma^2".to_string(), 2.0 * kappa * vbar - sigma * sigma)];
    let jump_pull = match p.tag {
        ModelTag::Svcdej | ModelTag::SvcdejEx => p.get("p_dn") * p.get("delta") * p.get("mu_v"),
        ModelTag::Svcj => p.get("delta") * p.get("mu_v"),
        ModelTag::Svcej => p.get("delta_dn") * p.get("mu_v"),
    };
    out.push(("stationarity: kappa > jump pull on v".to_string(), kappa - jump_pull));
    if pi_v != 0.0 {
        out.push(("stationarity under P: kappa + pi_v > jump pull on v".to_string(), kappa + pi_v - jump_pull));
    }
    if let Some(eta) = p.try_get("eta_up") {
        out.push(("positive jump mean eta_up < 1".to_string(), 1.0 - eta));
    }
    out
}

pub fn admissible(p: &ParameterVector) -> Admissibility {
    let mut violations = p.domain_violations();
    if violations.is_empty() {
        for (name, margin) in admissibility_margins(p) {
            if !(margin > 0.0) {
                violations.push(name);
            }
        }
    }
    Admissibility { ok: violations.is_empty(), violations }
}

/// Risk-neutral model (rate 0; set it with `with_rate`).
pub fn build_model(p: &ParameterVector) -> Result<AffineModel> {
    let adm = admissible(p);
    if !adm.ok {
        return Err(Error::Inadmissible(adm.violations));
    }
    Ok(build_unchecked(p, false, 0.0))
}

/// SVCDEJ-EX with the exogenous factor's own dynamics switched on (used for simulation pricing).
pub fn build_pricing_model(p: &ParameterVector) -> Result<AffineModel> {
    let adm = admissible(p);
    if !adm.ok {
        return Err(Error::Inadmissible(adm.violations));
    }
    Ok(build_unchecked(p, true, 0.0))
}

/// Physical-measure model: kappa replaced by kappa + pi_v in the variance drift slope.
pub fn physical_model(p: &ParameterVector) -> AffineModel {
    let pi_v = p.try_get("pi_v").unwrap_or(0.0);
    build_unchecked(p, false, pi_v)
}

pub(crate) fn build_unchecked(p: &ParameterVector, h_dynamics: bool, pi_v: f64) -> AffineModel {
    let sigma = p.get("sigma");
    let kappa = p.get("kappa");
    let vbar = p.get("vbar");
    let rho = p.get("rho");
    let n = if p.tag == ModelTag::SvcdejEx { 3 } else { 2 };
    let mut k0 = vec![0.0; n];
    let mut k1 = DMatrix::zeros(n, n);
    let h0 = DMatrix::zeros(n, n);
    let mut h1 = vec![DMatrix::zeros(n, n); n];
    k0[1] = kappa * vbar;
    k1[(1, 1)] = -(kappa + pi_v);
    h1[1][(0, 0)] = 1.0;
    h1[1][(0, 1)] = rho * sigma;
    h1[1][(1, 0)] = rho * sigma;
    h1[1][(1, 1)] = sigma * sigma;
    let mut jumps = Vec::new();
    match p.tag {
        ModelTag::Svcdej | ModelTag::SvcdejEx => {
            let (pd, eu, ed, mv, delta) = (p.get("p_dn"), p.get("eta_up"), p.get("eta_dn"), p.get("mu_v"), p.get("delta"));
            let mu = (1.0 - pd) / (1.0 - eu) + pd / (1.0 + ed) - 1.0;
            k1[(0, 1)] = -0.5 - mu * delta;
            let mut l1 = vec![0.0; n];
            l1[1] = delta;
            if p.tag == ModelTag::SvcdejEx {
                let (gamma, q) = (p.get("gamma"), p.get("q"));
                k1[(0, 2)] = -0.5 * q * q - mu * gamma;
                h1[2][(0, 0)] = q * q;
                l1[2] = gamma;
                if h_dynamics {
                    let (kh, hb, sh) = (p.get("kappa_h"), p.get("hbar"), p.get("sigma_h"));
                    k0[2] = kh * hb;
                    k1[(2, 2)] = -kh;
                    h1[2][(2, 2)] = sh * sh;
                }
            }
            jumps.push(JumpComponent {
                l0: 0.0,
                l1,
                transform: Arc::new(DoubleExpCoJump { dim: n, p_dn: pd, eta_up: eu, eta_dn: ed, mu_v: mv }),
            });
        }
        ModelTag::Svcj => {
            let (mj, sj, mv, delta) = (p.get("mu_j"), p.get("sigma_j"), p.get("mu_v"), p.get("delta"));
            let mu = (mj + 0.5 * sj * sj).exp() - 1.0;
            k1[(0, 1)] = -0.5 - mu * delta;
            jumps.push(JumpComponent {
                l0: 0.0,
                l1: vec![0.0, delta],
                transform: Arc::new(GaussCoJump { dim: n, mu_j: mj, sigma_j: sj, mu_v: mv }),
            });
        }
        ModelTag::Svcej => {
            let (d_up, d_dn, eu, ed, mv) = (p.get("delta_up"), p.get("delta_dn"), p.get("eta_up"), p.get("eta_dn"), p.get("mu_v"));
            let mu_dn = -ed / (1.0 + ed);
            let mu_up = eu / (1.0 - eu);
            k0[0] = -mu_up * d_up;
            k1[(0, 1)] = -0.5 - mu_dn * d_dn;
            jumps.push(JumpComponent {
                l0: 0.0,
                l1: vec![0.0, d_dn],
                transform: Arc::new(NegExpCoJump { dim: n, eta_dn: ed, mu_v: mv }),
            });
            jumps.push(JumpComponent { l0: d_up, l1: vec![0.0; n], transform: Arc::new(PosExp { dim: n, eta_up: eu }) });
        }
    }
    AffineModel { dim_state: n, latent: vec![1], k0, k1, h0, h1, jumps, rate: 0.0 }
}

/// Expected relative jump size of SVCDEJ returns.
pub fn svcdej_mean_jump(p: &ParameterVector) -> f64 {
    let (pd, eu, ed) = (p.get("p_dn"), p.get("eta_up"), p.get("eta_dn"));
    (1.0 - pd) / (1.0 - eu) + pd / (1.0 + ed) - 1.0
}
