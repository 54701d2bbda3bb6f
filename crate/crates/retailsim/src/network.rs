//! Data model for the radial distribution case: buses, branches, classed
//! loads, and distributed-generation placements, plus case-file ingestion
//! and validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::dg_cost::TechnologyCatalog;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file: {0}")]
    Io(#[from] std::io::Error),
    #[error("case file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("case has no slack bus")]
    NoSlack,
    #[error("case declares more than one slack bus (buses {0} and {1})")]
    MultipleSlack(u32, u32),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("{kind} references nonexistent bus {bus}")]
    UnknownBus { kind: &'static str, bus: u32 },
    #[error("load at bus {bus} references undeclared class {class:?}")]
    UnknownClass { bus: u32, class: String },
    #[error("duplicate DG unit id {0:?}")]
    DuplicateUnit(String),
    #[error("unknown technology {0:?} (not in catalog)")]
    UnknownTechnology(String),
    #[error("network is not radial: {0}")]
    NotRadial(RadialError),
    #[error("branch {from}-{to} has negative impedance")]
    NegativeImpedance { from: u32, to: u32 },
    #[error("load at bus {0} has negative nominal power")]
    NegativeLoad(u32),
    #[error("DG unit {id:?}: {reason}")]
    BadUnit { id: String, reason: String },
    #[error("voltage limits must satisfy 0 < v_min < v_max (got [{0}, {1}])")]
    BadVoltageLimits(f64, f64),
    #[error("base_mva must be positive (got {0})")]
    BadBase(f64),
    #[error("unknown class id {0:?}")]
    ClassNotDeclared(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialError {
    /// The branch set closes a loop through this bus.
    Cycle(u32),
    /// Buses unreachable from the slack; carries one example.
    Disconnected(u32),
    /// Branch count does not equal bus count - 1.
    EdgeCount { buses: usize, branches: usize },
}

impl fmt::Display for RadialError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialError::Cycle(bus) => write!(f, "cycle detected through bus {bus}"),
            RadialError::Disconnected(bus) => {
                write!(f, "bus {bus} is not connected to the slack bus")
            }
            RadialError::EdgeCount { buses, branches } => write!(
                f,
                "{branches} branches for {buses} buses (a radial tree needs exactly {})",
                buses - 1
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub base_kv: f64,
}

/// Series branch between two buses, impedance in per-unit on the case base.
#[derive(Debug, Clone)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub resistance: f64,
    pub reactance: f64,
}

/// A metered load point belonging to one retailer class.
#[derive(Debug, Clone)]
pub struct LoadPoint {
    pub bus_id: u32,
    pub p_nominal: f64,
    pub q_nominal: f64,
    pub class_id: String,
}

/// Dispatchable DG unit with quadratic cost a*p^2 + b*p + c ($/h, p in kW).
#[derive(Debug, Clone)]
pub struct DgUnit {
    pub id: String,
    pub bus_id: u32,
    pub a: f64,
    pub b: f64,
    pub c_fixed: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub technology: String,
}

#[derive(Debug, Clone, Copy)]
pub struct VoltageLimits {
    pub v_min: f64,
    pub v_max: f64,
}

/// Validated, immutable network case. Invariants established at
/// construction: unique bus ids, exactly one slack, all references
/// resolve, and the branch set forms a tree rooted at the slack.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<LoadPoint>,
    pub dg_units: Vec<DgUnit>,
    pub classes: Vec<String>,
    pub limits: VoltageLimits,
}

/// One branch of the tree, oriented away from the slack bus.
#[derive(Debug, Clone, Copy)]
pub struct OrientedBranch {
    /// Index into `case.branches`.
    pub branch: usize,
    pub parent: u32,
    pub child: u32,
}

impl NetworkCase {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: String,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        loads: Vec<LoadPoint>,
        dg_units: Vec<DgUnit>,
        classes: Vec<String>,
        limits: VoltageLimits,
    ) -> Result<Self, CaseError> {
        let case = NetworkCase {
            name,
            base_mva,
            buses,
            branches,
            loads,
            dg_units,
            classes,
            limits,
        };
        case.validate()?;
        Ok(case)
    }

    fn validate(&self) -> Result<(), CaseError> {
        if !(self.base_mva > 0.0) {
            return Err(CaseError::BadBase(self.base_mva));
        }
        if !(self.limits.v_min > 0.0 && self.limits.v_min < self.limits.v_max) {
            return Err(CaseError::BadVoltageLimits(
                self.limits.v_min,
                self.limits.v_max,
            ));
        }
        let mut seen = HashSet::new();
        let mut slack = None;
        for bus in &self.buses {
            if !seen.insert(bus.id) {
                return Err(CaseError::DuplicateBus(bus.id));
            }
            if bus.kind == BusKind::Slack {
                match slack {
                    None => slack = Some(bus.id),
                    Some(first) => return Err(CaseError::MultipleSlack(first, bus.id)),
                }
            }
        }
        if slack.is_none() {
            return Err(CaseError::NoSlack);
        }
        for br in &self.branches {
            for end in [br.from_bus, br.to_bus] {
                if !seen.contains(&end) {
                    return Err(CaseError::UnknownBus {
                        kind: "branch",
                        bus: end,
                    });
                }
            }
            if br.resistance < 0.0 || br.reactance < 0.0 {
                return Err(CaseError::NegativeImpedance {
                    from: br.from_bus,
                    to: br.to_bus,
                });
            }
        }
        let declared: HashSet<&str> = self.classes.iter().map(String::as_str).collect();
        for load in &self.loads {
            if !seen.contains(&load.bus_id) {
                return Err(CaseError::UnknownBus {
                    kind: "load",
                    bus: load.bus_id,
                });
            }
            if load.p_nominal < 0.0 {
                return Err(CaseError::NegativeLoad(load.bus_id));
            }
            if !declared.contains(load.class_id.as_str()) {
                return Err(CaseError::UnknownClass {
                    bus: load.bus_id,
                    class: load.class_id.clone(),
                });
            }
        }
        let mut unit_ids = HashSet::new();
        for unit in &self.dg_units {
            if !unit_ids.insert(unit.id.as_str()) {
                return Err(CaseError::DuplicateUnit(unit.id.clone()));
            }
            if !seen.contains(&unit.bus_id) {
                return Err(CaseError::UnknownBus {
                    kind: "DG unit",
                    bus: unit.bus_id,
                });
            }
            if unit.a < 0.0 {
                return Err(CaseError::BadUnit {
                    id: unit.id.clone(),
                    reason: format!("quadratic coefficient must be >= 0 (got {})", unit.a),
                });
            }
            if unit.p_min < 0.0 || unit.p_min > unit.p_max {
                return Err(CaseError::BadUnit {
                    id: unit.id.clone(),
                    reason: format!(
                        "power limits must satisfy 0 <= p_min <= p_max (got [{}, {}])",
                        unit.p_min, unit.p_max
                    ),
                });
            }
        }
        validate_radial(self).map_err(CaseError::NotRadial)?;
        Ok(())
    }

    pub fn slack_bus(&self) -> u32 {
        self.buses
            .iter()
            .find(|b| b.kind == BusKind::Slack)
            .map(|b| b.id)
            .expect("validated case has a slack bus")
    }

    /// Position of a bus id in `self.buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class_id)
    }

    /// Copy of the case with every DG unit removed (wholesale-only baseline).
    pub fn without_dg(&self) -> NetworkCase {
        let mut case = self.clone();
        case.dg_units.clear();
        case
    }

    /// Copy of the case with every DG unit reassigned to `technology`,
    /// taking coefficients and limits from the catalog.
    pub fn with_technology(
        &self,
        technology: &str,
        catalog: &TechnologyCatalog,
    ) -> Result<NetworkCase, CaseError> {
        let row = catalog
            .get(technology)
            .ok_or_else(|| CaseError::UnknownTechnology(technology.to_string()))?;
        let mut case = self.clone();
        for unit in &mut case.dg_units {
            unit.technology = technology.to_string();
            unit.a = row.a;
            unit.b = row.b;
            unit.c_fixed = row.c_fixed;
            unit.p_min = row.p_min;
            unit.p_max = row.p_max;
        }
        Ok(case)
    }
}

/// Topological ordering of the branches from the slack outward
/// (parent before child). Fails on cycles and disconnected buses.
pub fn validate_radial(case: &NetworkCase) -> Result<Vec<OrientedBranch>, RadialError> {
    let n = case.buses.len();
    if case.branches.len() != n - 1 {
        // Distinguish the failure mode for the error message: surplus
        // edges on a connected graph imply a cycle.
        if case.branches.len() < n - 1 {
            if let Some(bus) = first_unreachable(case) {
                return Err(RadialError::Disconnected(bus));
            }
        }
        if case.branches.len() > n - 1 {
            if let Some(bus) = first_cycle_bus(case) {
                return Err(RadialError::Cycle(bus));
            }
        }
        return Err(RadialError::EdgeCount {
            buses: n,
            branches: case.branches.len(),
        });
    }
    let index = case.bus_index();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, br) in case.branches.iter().enumerate() {
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        adjacency[f].push((bi, t));
        adjacency[t].push((bi, f));
    }
    let slack = index[&case.slack_bus()];
    let mut visited = vec![false; n];
    let mut used = vec![false; case.branches.len()];
    let mut order = Vec::with_capacity(case.branches.len());
    let mut queue = std::collections::VecDeque::from([slack]);
    visited[slack] = true;
    while let Some(at) = queue.pop_front() {
        for &(bi, other) in &adjacency[at] {
            if used[bi] {
                continue;
            }
            used[bi] = true;
            if visited[other] {
                return Err(RadialError::Cycle(case.buses[other].id));
            }
            visited[other] = true;
            order.push(OrientedBranch {
                branch: bi,
                parent: case.buses[at].id,
                child: case.buses[other].id,
            });
            queue.push_back(other);
        }
    }
    if let Some(pos) = visited.iter().position(|v| !v) {
        return Err(RadialError::Disconnected(case.buses[pos].id));
    }
    Ok(order)
}

fn first_unreachable(case: &NetworkCase) -> Option<u32> {
    let index = case.bus_index();
    let n = case.buses.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for br in &case.branches {
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    let slack = index[&case.slack_bus()];
    let mut visited = vec![false; n];
    visited[slack] = true;
    let mut queue = std::collections::VecDeque::from([slack]);
    while let Some(at) = queue.pop_front() {
        for &other in &adjacency[at] {
            if !visited[other] {
                visited[other] = true;
                queue.push_back(other);
            }
        }
    }
    visited
        .iter()
        .position(|v| !v)
        .map(|pos| case.buses[pos].id)
}

fn first_cycle_bus(case: &NetworkCase) -> Option<u32> {
    let index = case.bus_index();
    let n = case.buses.len();
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (bi, br) in case.branches.iter().enumerate() {
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        adjacency[f].push((bi, t));
        adjacency[t].push((bi, f));
    }
    let slack = index[&case.slack_bus()];
    let mut visited = vec![false; n];
    let mut used = vec![false; case.branches.len()];
    visited[slack] = true;
    let mut queue = std::collections::VecDeque::from([slack]);
    while let Some(at) = queue.pop_front() {
        for &(bi, other) in &adjacency[at] {
            if used[bi] {
                continue;
            }
            used[bi] = true;
            if visited[other] {
                return Some(case.buses[other].id);
            }
            visited[other] = true;
            queue.push_back(other);
        }
    }
    None
}

/// Sum of nominal real load over the class, scaled by `multiplier`.
pub fn class_nominal_load(
    case: &NetworkCase,
    class_id: &str,
    multiplier: f64,
) -> Result<f64, CaseError> {
    if case.class_index(class_id).is_none() {
        return Err(CaseError::ClassNotDeclared(class_id.to_string()));
    }
    Ok(case
        .loads
        .iter()
        .filter(|l| l.class_id == class_id)
        .map(|l| l.p_nominal)
        .sum::<f64>()
        * multiplier)
}

/// Nominal real load of every class, in declared class order.
pub fn nominal_class_loads(case: &NetworkCase) -> Vec<f64> {
    let mut totals = vec![0.0; case.classes.len()];
    for load in &case.loads {
        // Class membership validated at construction.
        let idx = case.class_index(&load.class_id).unwrap();
        totals[idx] += load.p_nominal;
    }
    totals
}

// --- case file schema ------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    name: String,
    base_mva: f64,
    limits: LimitsFile,
    classes: Vec<String>,
    buses: Vec<BusFile>,
    branches: Vec<BranchFile>,
    loads: Vec<LoadFile>,
    #[serde(default)]
    dg_units: Vec<DgFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsFile {
    v_min: f64,
    v_max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BusFile {
    id: u32,
    kind: BusKind,
    base_kv: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    from: u32,
    to: u32,
    r_pu: f64,
    x_pu: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadFile {
    bus: u32,
    p_kw: f64,
    #[serde(default)]
    q_kvar: f64,
    class: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DgFile {
    id: String,
    bus: u32,
    technology: String,
    // Explicit coefficients override the catalog row.
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    p_min: Option<f64>,
    p_max: Option<f64>,
}

/// Load and validate a case file, resolving DG technologies against the
/// default catalog (builtin rows, or the file named by `RETAILSIM_CATALOG`).
pub fn load_case(path: impl AsRef<Path>) -> Result<NetworkCase, CaseError> {
    load_case_with_catalog(path, &TechnologyCatalog::default_catalog())
}

pub fn load_case_with_catalog(
    path: impl AsRef<Path>,
    catalog: &TechnologyCatalog,
) -> Result<NetworkCase, CaseError> {
    let text = fs::read_to_string(path)?;
    parse_case(&text, catalog)
}

pub fn parse_case(text: &str, catalog: &TechnologyCatalog) -> Result<NetworkCase, CaseError> {
    let file: CaseFile = serde_json::from_str(text)?;
    let buses = file
        .buses
        .into_iter()
        .map(|b| Bus {
            id: b.id,
            kind: b.kind,
            base_kv: b.base_kv,
        })
        .collect();
    let branches = file
        .branches
        .into_iter()
        .map(|b| Branch {
            from_bus: b.from,
            to_bus: b.to,
            resistance: b.r_pu,
            reactance: b.x_pu,
        })
        .collect();
    let loads = file
        .loads
        .into_iter()
        .map(|l| LoadPoint {
            bus_id: l.bus,
            p_nominal: l.p_kw,
            q_nominal: l.q_kvar,
            class_id: l.class,
        })
        .collect();
    let mut dg_units = Vec::new();
    for dg in file.dg_units {
        let row = catalog.get(&dg.technology);
        let coeff = |explicit: Option<f64>, from_row: Option<f64>, what: &str| {
            explicit.or(from_row).ok_or_else(|| CaseError::BadUnit {
                id: dg.id.clone(),
                reason: format!("{what} given neither explicitly nor by technology {:?}", dg.technology),
            })
        };
        if row.is_none() && (dg.a.is_none() || dg.b.is_none() || dg.c.is_none()) {
            return Err(CaseError::UnknownTechnology(dg.technology.clone()));
        }
        dg_units.push(DgUnit {
            a: coeff(dg.a, row.map(|r| r.a), "a")?,
            b: coeff(dg.b, row.map(|r| r.b), "b")?,
            c_fixed: coeff(dg.c, row.map(|r| r.c_fixed), "c")?,
            p_min: coeff(dg.p_min, row.map(|r| r.p_min), "p_min")?,
            p_max: coeff(dg.p_max, row.map(|r| r.p_max), "p_max")?,
            id: dg.id,
            bus_id: dg.bus,
            technology: dg.technology,
        });
    }
    NetworkCase::new(
        file.name,
        file.base_mva,
        buses,
        branches,
        loads,
        dg_units,
        file.classes,
        VoltageLimits {
            v_min: file.limits.v_min,
            v_max: file.limits.v_max,
        },
    )
}

/// Distribute per-class aggregate loads onto the class's load points,
/// proportionally to their nominal values. Reactive power scales with the
/// same per-class factor. Returns kW/kvar keyed by bus id.
pub fn disaggregate_class_loads(
    case: &NetworkCase,
    class_loads: &[f64],
) -> Result<BTreeMap<u32, (f64, f64)>, CaseError> {
    assert_eq!(class_loads.len(), case.classes.len());
    let nominal = nominal_class_loads(case);
    let mut out: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for load in &case.loads {
        let idx = case.class_index(&load.class_id).unwrap();
        let factor = if nominal[idx] > 0.0 {
            class_loads[idx] / nominal[idx]
        } else if class_loads[idx] == 0.0 {
            0.0
        } else {
            return Err(CaseError::ClassNotDeclared(format!(
                "class {} has zero nominal load but {} kW requested",
                case.classes[idx], class_loads[idx]
            )));
        };
        let entry = out.entry(load.bus_id).or_insert((0.0, 0.0));
        entry.0 += load.p_nominal * factor;
        entry.1 += load.q_nominal * factor;
    }
    Ok(out)
}
