//! Physical parameter sets for the four plants, with the shipped
//! estimated/actual presets and multiplicative perturbation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Glucose,
    BiGlucose,
    Cstr,
    CartPole,
}

impl PlantKind {
    pub const ALL: [PlantKind; 4] = [
        PlantKind::Glucose,
        PlantKind::BiGlucose,
        PlantKind::Cstr,
        PlantKind::CartPole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlantKind::Glucose => "glucose",
            PlantKind::BiGlucose => "biglucose",
            PlantKind::Cstr => "cstr",
            PlantKind::CartPole => "cartpole",
        }
    }
}

impl std::str::FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlantKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown plant '{s}'")))
    }
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which parameter table a preset comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Estimated,
    Actual,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Estimated => "estimated",
            ParamRole::Actual => "actual",
        }
    }
}

/// Minimal glucose-insulin model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlucoseParams {
    /// basal glucose, mg/dL
    pub g_b: f64,
    /// basal insulin, uU/mL
    pub i_b: f64,
    pub n: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    /// meal disturbance amplitude
    pub d0: f64,
    /// control period, min
    pub dt: f64,
}

/// Bihormonal (insulin + glucagon) extension of the Hovorka model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiGlucoseParams {
    pub d_g: f64,
    pub v_g: f64,
    pub k12: f64,
    pub f01: f64,
    pub egp0: f64,
    pub a_g: f64,
    pub t_max_g: f64,
    pub t_max_i: f64,
    pub v_i: f64,
    pub k_e: f64,
    pub k_a1: f64,
    pub k_a2: f64,
    pub k_a3: f64,
    pub k_b1: f64,
    pub k_b2: f64,
    pub k_b3: f64,
    pub t_max_n: f64,
    pub k_n: f64,
    pub v_n: f64,
    pub p: f64,
    pub s_n: f64,
    pub m_g: f64,
    pub bw: f64,
    pub n_b: f64,
    pub dt: f64,
    /// Conversion of the meal appearance rate (kg/min of carbohydrate) into
    /// mmol/(kg min) of glucose. Defaults to `1e6 / (m_g * bw)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_conv: Option<f64>,
}

impl BiGlucoseParams {
    pub fn c_conv(&self) -> f64 {
        self.c_conv.unwrap_or(1e6 / (self.m_g * self.bw))
    }
}

/// Continuous stirred tank reactor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CstrParams {
    pub k0_ab: f64,
    pub k0_bc: f64,
    pub k0_ad: f64,
    pub r_gas: f64,
    pub e_a_ab: f64,
    pub e_a_bc: f64,
    pub e_a_ad: f64,
    pub h_r_ab: f64,
    pub h_r_bc: f64,
    pub h_r_ad: f64,
    pub rho: f64,
    pub c_p: f64,
    pub c_p_k: f64,
    pub a_r: f64,
    pub v_r: f64,
    pub m_k: f64,
    pub t_in: f64,
    pub k_w: f64,
    pub c_a0: f64,
    pub dt: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleParams {
    pub g: f64,
    pub m_c: f64,
    pub m_p: f64,
    pub l: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plant", rename_all = "lowercase")]
pub enum PlantParams {
    Glucose(GlucoseParams),
    #[serde(rename = "biglucose")]
    BiGlucose(BiGlucoseParams),
    Cstr(CstrParams),
    #[serde(rename = "cartpole")]
    CartPole(CartPoleParams),
}

const GLUCOSE_ESTIMATED: &str = include_str!("../../presets/glucose_estimated.toml");
const GLUCOSE_ACTUAL: &str = include_str!("../../presets/glucose_actual.toml");
const BIGLUCOSE_ESTIMATED: &str = include_str!("../../presets/biglucose_estimated.toml");
const BIGLUCOSE_ACTUAL: &str = include_str!("../../presets/biglucose_actual.toml");
const CSTR_ESTIMATED: &str = include_str!("../../presets/cstr_estimated.toml");
const CSTR_ACTUAL: &str = include_str!("../../presets/cstr_actual.toml");
const CARTPOLE_ESTIMATED: &str = include_str!("../../presets/cartpole_estimated.toml");
const CARTPOLE_ACTUAL: &str = include_str!("../../presets/cartpole_actual.toml");

impl PlantParams {
    pub fn kind(&self) -> PlantKind {
        match self {
            PlantParams::Glucose(_) => PlantKind::Glucose,
            PlantParams::BiGlucose(_) => PlantKind::BiGlucose,
            PlantParams::Cstr(_) => PlantKind::Cstr,
            PlantParams::CartPole(_) => PlantKind::CartPole,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            PlantParams::Glucose(p) => p.dt,
            PlantParams::BiGlucose(p) => p.dt,
            PlantParams::Cstr(p) => p.dt,
            PlantParams::CartPole(p) => p.dt,
        }
    }

    /// One of the shipped presets.
    pub fn preset(kind: PlantKind, role: ParamRole) -> Self {
        let text = match (kind, role) {
            (PlantKind::Glucose, ParamRole::Estimated) => GLUCOSE_ESTIMATED,
            (PlantKind::Glucose, ParamRole::Actual) => GLUCOSE_ACTUAL,
            (PlantKind::BiGlucose, ParamRole::Estimated) => BIGLUCOSE_ESTIMATED,
            (PlantKind::BiGlucose, ParamRole::Actual) => BIGLUCOSE_ACTUAL,
            (PlantKind::Cstr, ParamRole::Estimated) => CSTR_ESTIMATED,
            (PlantKind::Cstr, ParamRole::Actual) => CSTR_ACTUAL,
            (PlantKind::CartPole, ParamRole::Estimated) => CARTPOLE_ESTIMATED,
            (PlantKind::CartPole, ParamRole::Actual) => CARTPOLE_ACTUAL,
        };
        Self::from_toml(text).expect("shipped presets are valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let params: PlantParams = toml::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain numeric records serialize")
    }

    fn named_values(&self) -> BTreeMap<String, f64> {
        let value = serde_json::to_value(self).expect("plain numeric records serialize");
        value
            .as_object()
            .expect("params serialize to a map")
            .iter()
            .filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.named_values().get(name).copied()
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let values = self.named_values();
        if let Some((k, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{} parameter {k} is not finite ({v})", self.kind())));
        }
        let positive: &[&str] = match self {
            PlantParams::Glucose(_) => &["g_b", "i_b", "n", "p2", "p3", "dt"],
            PlantParams::BiGlucose(_) => &[
                "v_g", "k12", "t_max_g", "t_max_i", "v_i", "k_e", "k_a1", "k_a2", "k_a3", "t_max_n",
                "k_n", "v_n", "p", "m_g", "bw", "dt",
            ],
            PlantParams::Cstr(_) => &["rho", "c_p", "c_p_k", "a_r", "v_r", "m_k", "dt", "alpha", "beta"],
            PlantParams::CartPole(_) => &["g", "m_c", "m_p", "l", "dt"],
        };
        for name in positive {
            let v = values[*name];
            if v <= 0.0 {
                return Err(Error::Config(format!(
                    "{} parameter {name} must be positive, got {v}",
                    self.kind()
                )));
            }
        }
        // reaction enthalpies are the only signed quantities
        let signed = ["h_r_ab", "h_r_bc", "h_r_ad"];
        if let Some((k, v)) = values.iter().find(|(k, v)| !signed.contains(&k.as_str()) && **v < 0.0) {
            return Err(Error::Config(format!("{} parameter {k} must be non-negative, got {v}", self.kind())));
        }
        Ok(())
    }

    /// Copy with named parameters scaled by the given multipliers.
    pub fn perturb(&self, multipliers: &BTreeMap<String, f64>) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let map = value.as_object_mut().expect("params serialize to a map");
        for (name, factor) in multipliers {
            if name == "plant" {
                return Err(Error::Config("cannot perturb the plant tag".into()));
            }
            let entry = map
                .get_mut(name)
                .and_then(|v| v.as_f64().map(|x| (v, x)))
                .ok_or_else(|| Error::Config(format!("{} has no parameter '{name}'", self.kind())))?;
            *entry.0 = serde_json::json!(entry.1 * factor);
        }
        let out: PlantParams = serde_json::from_value(value)?;
        out.validate()?;
        Ok(out)
    }
}

/// `perturb_params` with a plain list of pairs.
pub fn perturb_params(base: &PlantParams, overrides: &[(&str, f64)]) -> Result<PlantParams> {
    let map = overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    base.perturb(&map)
}
