//! Scenario ingestion: 24-hour load/price profiles, per-class
//! elasticities, technology assignments, and solver options.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dg_cost::TechnologyCatalog;
use crate::dispatch::DispatchOptions;
use crate::equilibrium::{EquilibriumConfig, HourInputs};
use crate::network::{CaseError, NetworkCase};
use crate::pricing::PricingOptions;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario field {field}: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Case(#[from] CaseError),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// Scalar applied to every class, or an explicit per-class map.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PerClass {
    Uniform(f64),
    ByClass(BTreeMap<String, f64>),
}

impl PerClass {
    /// Resolve against the case's declared classes, in class order.
    pub fn resolve(&self, case: &NetworkCase, field: &str) -> Result<Vec<f64>, ScenarioError> {
        match self {
            PerClass::Uniform(v) => Ok(vec![*v; case.classes.len()]),
            PerClass::ByClass(map) => {
                for key in map.keys() {
                    if case.class_index(key).is_none() {
                        return Err(invalid(field, format!("unknown class {key:?}")));
                    }
                }
                case.classes
                    .iter()
                    .map(|class| {
                        map.get(class).copied().ok_or_else(|| {
                            invalid(field, format!("missing value for class {class:?}"))
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioHour {
    pub multiplier: PerClass,
    pub spot_price: f64,
}

/// Solver and model options, all optional in the file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOptions {
    /// Price the dispatch's wholesale injection at the spot price instead
    /// of the load-weighted class prices.
    pub wholesale_at_spot: bool,
    /// Charge retailer DG purchases at the dispatch-point marginal cost.
    pub flat_mc: bool,
    /// Shared-pool DG availability drawn in class order.
    pub pooled: bool,
    pub price_cap_multiple: f64,
    pub demand_floor_kw: f64,
    pub damping: f64,
    pub price_tol: f64,
    pub max_iters: usize,
    pub voltage_penalty: f64,
    pub pf_tol_kw: f64,
    pub pf_max_iter: usize,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        let eq = EquilibriumConfig::default();
        ScenarioOptions {
            wholesale_at_spot: false,
            flat_mc: false,
            pooled: false,
            price_cap_multiple: eq.pricing.price_cap_multiple,
            demand_floor_kw: eq.pricing.demand_floor_kw,
            damping: eq.damping,
            price_tol: eq.price_tol,
            max_iters: eq.max_iters,
            voltage_penalty: eq.dispatch.voltage_penalty,
            pf_tol_kw: 1e-3,
            pf_max_iter: 100,
        }
    }
}

impl ScenarioOptions {
    pub fn equilibrium_config(&self) -> EquilibriumConfig {
        EquilibriumConfig {
            price_tol: self.price_tol,
            max_iters: self.max_iters,
            damping: self.damping,
            pooled: self.pooled,
            flat_mc: self.flat_mc,
            dispatch: DispatchOptions {
                wholesale_at_spot: self.wholesale_at_spot,
                voltage_penalty: self.voltage_penalty,
                // The dispatch sweeps feed finite-difference loss factors,
                // so never run them looser than 1e-6 kW.
                pf_tol_kw: self.pf_tol_kw.min(1e-6),
                pf_max_iter: self.pf_max_iter.max(DispatchOptions::default().pf_max_iter),
                ..DispatchOptions::default()
            },
            pricing: PricingOptions {
                price_cap_multiple: self.price_cap_multiple,
                demand_floor_kw: self.demand_floor_kw,
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub beta: PerClass,
    #[serde(default)]
    pub technology: BTreeMap<String, String>,
    #[serde(default)]
    pub options: ScenarioOptions,
    pub hours: Vec<ScenarioHour>,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.hours.len() != HOURS_PER_DAY {
            return Err(invalid(
                "hours",
                format!("expected {HOURS_PER_DAY} hourly entries, got {}", self.hours.len()),
            ));
        }
        for (h, hour) in self.hours.iter().enumerate() {
            if !(hour.spot_price > 0.0) {
                return Err(invalid(
                    format!("hours[{h}].spot_price"),
                    format!("must be positive (got {})", hour.spot_price),
                ));
            }
            let check_mult = |v: f64| v >= 0.0 && v.is_finite();
            let ok = match &hour.multiplier {
                PerClass::Uniform(v) => check_mult(*v),
                PerClass::ByClass(map) => map.values().all(|&v| check_mult(v)),
            };
            if !ok {
                return Err(invalid(
                    format!("hours[{h}].multiplier"),
                    "multipliers must be >= 0",
                ));
            }
        }
        let beta_ok = |v: f64| (-1.0..=0.0).contains(&v);
        let ok = match &self.beta {
            PerClass::Uniform(v) => beta_ok(*v),
            PerClass::ByClass(map) => map.values().all(|&v| beta_ok(v)),
        };
        if !ok {
            return Err(invalid("beta", "elasticities must lie in [-1, 0]"));
        }
        if !(self.options.damping > 0.0 && self.options.damping <= 1.0) {
            return Err(invalid("options.damping", "must lie in (0, 1]"));
        }
        if !(self.options.price_tol > 0.0) {
            return Err(invalid("options.price_tol", "must be positive"));
        }
        if self.options.max_iters == 0 {
            return Err(invalid("options.max_iters", "must be at least 1"));
        }
        Ok(())
    }

    /// Per-class elasticities in case class order.
    pub fn betas(&self, case: &NetworkCase) -> Result<Vec<f64>, ScenarioError> {
        self.beta.resolve(case, "beta")
    }

    /// Per-hour inputs in case class order.
    pub fn hour_inputs(&self, case: &NetworkCase) -> Result<Vec<HourInputs>, ScenarioError> {
        self.hours
            .iter()
            .enumerate()
            .map(|(h, hour)| {
                Ok(HourInputs {
                    multipliers: hour
                        .multiplier
                        .resolve(case, &format!("hours[{h}].multiplier"))?,
                    spot_price: hour.spot_price,
                })
            })
            .collect()
    }

    /// Apply the scenario's technology assignments to a copy of the case.
    pub fn apply_technology(
        &self,
        case: &NetworkCase,
        catalog: &TechnologyCatalog,
    ) -> Result<NetworkCase, ScenarioError> {
        if self.technology.is_empty() {
            return Ok(case.clone());
        }
        let mut out = case.clone();
        for (unit_id, tag) in &self.technology {
            let row = catalog
                .get(tag)
                .ok_or_else(|| invalid("technology", format!("unknown technology {tag:?}")))?;
            let unit = out
                .dg_units
                .iter_mut()
                .find(|u| &u.id == unit_id)
                .ok_or_else(|| invalid("technology", format!("unknown DG unit {unit_id:?}")))?;
            unit.technology = tag.clone();
            unit.a = row.a;
            unit.b = row.b;
            unit.c_fixed = row.c_fixed;
            unit.p_min = row.p_min;
            unit.p_max = row.p_max;
        }
        Ok(out)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)?;
    Scenario::parse(&text)
}
