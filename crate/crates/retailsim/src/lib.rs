//! Retail electricity market simulation on radial distribution feeders
//! with distributed generation.
//!
//! The model couples two levels, iterated to a fixed point on the class
//! sale prices each hour:
//!
//! * [`dispatch`] minimizes the distribution operating cost (wholesale
//!   purchases plus DG generation cost) over the DG outputs, with losses
//!   from the [`power_flow`] sweep and voltage limits enforced;
//! * [`pricing`] maximizes each retailer's profit over its class sale
//!   price under linear price-elastic demand, splitting the purchase
//!   between the wholesale market and the dispatched DG quantities.
//!
//! [`equilibrium`] runs the loop per hour and maps it over a 24-hour
//! scenario; [`scenario`], [`report`], and [`cli`] cover ingestion,
//! CSV emission, and the command-line driver.

// Validation guards use the negated form (`!(x > 0.0)`) so NaN inputs
// are rejected along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dg_cost;
pub mod dispatch;
pub mod equilibrium;
pub mod network;
pub mod power_flow;
pub mod pricing;
pub mod report;
pub mod scenario;

pub use dg_cost::{Technology, TechnologyCatalog};
pub use dispatch::{DispatchOptions, DispatchProblem, DispatchResult};
pub use equilibrium::{
    solve_day, solve_day_sequential, solve_hour, DailyResults, EquilibriumConfig,
    HourInputs, HourlyEquilibrium,
};
pub use network::{load_case, validate_radial, NetworkCase};
pub use power_flow::{solve_sweep, InjectionSet, PowerFlowSolution, SweepOptions};
pub use pricing::{DemandModel, RetailerDecision, SupplyTerms};
pub use scenario::{load_scenario, Scenario};
