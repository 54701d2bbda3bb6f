//! Quadratic DG cost model, marginal cost, and the technology catalog.
//!
//! Units: `a` in $/kW²·h, `b` in $/kWh, `c` in $/h, power limits in kW.
//! Catalog and market prices share the $/kWh scale.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;
use thiserror::Error;

use crate::network::DgUnit;

/// Catalog file shipped with the crate (the five stock technology rows).
const BUILTIN_CATALOG: &str = include_str!("../data/catalog.json");

/// Environment variable naming an alternative catalog file.
pub const CATALOG_ENV: &str = "RETAILSIM_CATALOG";

#[derive(Debug, Error)]
pub enum DgCostError {
    #[error("power {p} kW outside unit limits [{p_min}, {p_max}]")]
    OutsideLimits { p: f64, p_min: f64, p_max: f64 },
    #[error("cannot read catalog file: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("catalog entry {tag:?} has negative quadratic coefficient {a}")]
    NonConvex { tag: String, a: f64 },
    #[error("catalog declares technology {0:?} twice")]
    DuplicateTag(String),
}

/// One catalog row: quadratic cost coefficients and power limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Technology {
    pub a: f64,
    pub b: f64,
    pub c_fixed: f64,
    pub p_min: f64,
    pub p_max: f64,
}

/// Map from technology tag to cost characteristics.
#[derive(Debug, Clone, Default)]
pub struct TechnologyCatalog {
    rows: BTreeMap<String, Technology>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    technologies: Vec<CatalogRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogRow {
    tag: String,
    a: f64,
    b: f64,
    c: f64,
    p_min: f64,
    p_max: f64,
}

impl TechnologyCatalog {
    /// The five stock technology rows.
    pub fn builtin() -> &'static TechnologyCatalog {
        static CATALOG: OnceLock<TechnologyCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            TechnologyCatalog::parse(BUILTIN_CATALOG).expect("builtin catalog is valid")
        })
    }

    /// Builtin rows, unless `RETAILSIM_CATALOG` names a readable file.
    pub fn default_catalog() -> TechnologyCatalog {
        match std::env::var(CATALOG_ENV) {
            Ok(path) if !path.is_empty() => {
                TechnologyCatalog::from_path(&path).unwrap_or_else(|e| {
                    panic!("{CATALOG_ENV}={path} does not name a valid catalog: {e}")
                })
            }
            _ => TechnologyCatalog::builtin().clone(),
        }
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<TechnologyCatalog, DgCostError> {
        let text = std::fs::read_to_string(path)?;
        TechnologyCatalog::parse(&text)
    }

    pub fn parse(text: &str) -> Result<TechnologyCatalog, DgCostError> {
        let file: CatalogFile = serde_json::from_str(text)?;
        let mut rows = BTreeMap::new();
        for row in file.technologies {
            if row.a < 0.0 {
                return Err(DgCostError::NonConvex { tag: row.tag, a: row.a });
            }
            let tech = Technology {
                a: row.a,
                b: row.b,
                c_fixed: row.c,
                p_min: row.p_min,
                p_max: row.p_max,
            };
            if rows.insert(row.tag.clone(), tech).is_some() {
                return Err(DgCostError::DuplicateTag(row.tag));
            }
        }
        Ok(TechnologyCatalog { rows })
    }

    pub fn get(&self, tag: &str) -> Option<&Technology> {
        self.rows.get(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Instantiate a unit of this technology at a bus.
    pub fn unit(&self, tag: &str, id: &str, bus_id: u32) -> Option<DgUnit> {
        self.get(tag).map(|t| DgUnit {
            id: id.to_string(),
            bus_id,
            a: t.a,
            b: t.b,
            c_fixed: t.c_fixed,
            p_min: t.p_min,
            p_max: t.p_max,
            technology: tag.to_string(),
        })
    }
}

/// Hourly generation cost a·p² + b·p + c in $/h.
pub fn cost(unit: &DgUnit, p: f64) -> Result<f64, DgCostError> {
    check_limits(unit, p)?;
    Ok(unit.a * p * p + unit.b * p + unit.c_fixed)
}

/// Marginal generation cost 2·a·p + b in $/kWh.
pub fn marginal_cost(unit: &DgUnit, p: f64) -> Result<f64, DgCostError> {
    check_limits(unit, p)?;
    Ok(2.0 * unit.a * p + unit.b)
}

/// Power at which the marginal cost meets `price`, clamped to the unit's
/// limits. For a = 0 the marginal cost is flat at `b`: above it the unit
/// saturates, at or below it the unit stays at p_min.
pub fn inverse_marginal(unit: &DgUnit, price: f64) -> f64 {
    if unit.a == 0.0 {
        return if price > unit.b { unit.p_max } else { unit.p_min };
    }
    ((price - unit.b) / (2.0 * unit.a)).clamp(unit.p_min, unit.p_max)
}

fn check_limits(unit: &DgUnit, p: f64) -> Result<(), DgCostError> {
    if p < unit.p_min || p > unit.p_max {
        return Err(DgCostError::OutsideLimits {
            p,
            p_min: unit.p_min,
            p_max: unit.p_max,
        });
    }
    Ok(())
}
