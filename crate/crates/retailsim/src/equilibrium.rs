//! Fixed-point iteration between the dispatch level and the retail
//! pricing level: class prices drive the cost-minimizing dispatch, the
//! dispatched DG quantities are offered back to the retailers, and the
//! retailers' profit-maximizing prices feed the next dispatch, until the
//! class prices stop moving.
//!
//! Hours are decoupled, so the day solve is a map over hours; with the
//! `parallel` feature it runs on a rayon pool (order and results are
//! identical to the sequential fallback).

use thiserror::Error;

use crate::dispatch::{self, DispatchError, DispatchOptions, DispatchProblem, DispatchResult};
use crate::network::{nominal_class_loads, NetworkCase};
use crate::pricing::{
    self, allocate_supply, nominal_price, CostCurve, DemandModel, DgOffer, PricingError,
    PricingOptions, RetailerDecision, SupplyTerms,
};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("hour {hour}, iteration {iteration}: dispatch failed: {source}")]
    Dispatch {
        hour: usize,
        iteration: usize,
        source: DispatchError,
    },
    #[error("hour {hour}, iteration {iteration}: pricing failed: {source}")]
    Pricing {
        hour: usize,
        iteration: usize,
        source: PricingError,
    },
    #[error("hour {hour}: every class demand collapsed to zero")]
    DegenerateLoads { hour: usize },
    #[error("hour inputs are invalid: {0}")]
    BadInputs(String),
}

#[derive(Debug, Clone)]
pub struct HourInputs {
    /// Load multiplier per class, in case class order.
    pub multipliers: Vec<f64>,
    /// Wholesale spot price for the hour, $/kWh.
    pub spot_price: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumConfig {
    /// Relative price-change tolerance for convergence.
    pub price_tol: f64,
    pub max_iters: usize,
    /// Update damping in (0, 1]; 1.0 is the undamped iteration.
    pub damping: f64,
    /// Offer the dispatched DG from a shared pool in class order instead
    /// of splitting it by load share.
    pub pooled: bool,
    /// Charge DG purchases at the marginal cost frozen at the dispatch
    /// point instead of along the marginal-cost line.
    pub flat_mc: bool,
    pub dispatch: DispatchOptions,
    pub pricing: PricingOptions,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            price_tol: 1e-4,
            max_iters: 50,
            damping: 0.5,
            pooled: false,
            flat_mc: false,
            dispatch: DispatchOptions::default(),
            pricing: PricingOptions::default(),
        }
    }
}

/// One row of the per-hour iteration trace.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Prices entering the iteration.
    pub class_prices: Vec<f64>,
    /// Raw prices proposed by the pricing level.
    pub proposed_prices: Vec<f64>,
    pub total_dg_kw: f64,
    pub p_wholesale_kw: f64,
    pub loss_kw: f64,
}

#[derive(Debug, Clone)]
pub struct HourlyEquilibrium {
    pub hour: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Converged sale price per class.
    pub class_prices: Vec<f64>,
    /// Nominal (markup-anchored) price per class at convergence.
    pub nominal_prices: Vec<f64>,
    pub dispatch: DispatchResult,
    pub decisions: Vec<RetailerDecision>,
    pub price_trace: Vec<IterationTrace>,
    /// Final damping factor (halved automatically on oscillation).
    pub damping_used: f64,
}

/// Everything one full dispatch→pricing round produces.
struct Round {
    anchors: Vec<f64>,
    dispatch: DispatchResult,
    /// Availability offered to each class from each unit, kW.
    availability: Vec<Vec<f64>>,
    decisions: Vec<RetailerDecision>,
}

fn class_supply(
    case: &NetworkCase,
    dispatch: &DispatchResult,
    availability: &[f64],
    spot_price: f64,
    flat_mc: bool,
) -> SupplyTerms {
    let offers = case
        .dg_units
        .iter()
        .enumerate()
        .map(|(i, unit)| DgOffer {
            unit_id: unit.id.clone(),
            availability_kw: availability[i],
            curve: if flat_mc {
                CostCurve::Flat {
                    price: 2.0 * unit.a * dispatch.p_dg[i] + unit.b,
                }
            } else {
                CostCurve::Quadratic {
                    a: unit.a,
                    b: unit.b,
                }
            },
        })
        .collect();
    SupplyTerms {
        spot_price,
        offers,
    }
}

/// Run one full round from the given prices. `avail_prev` carries the DG
/// availabilities of the previous round; `None` marks the first
/// iteration, whose nominal-price anchor is the spot price alone.
#[allow(clippy::too_many_arguments)]
fn run_round(
    case: &NetworkCase,
    betas: &[f64],
    inputs: &HourInputs,
    cfg: &EquilibriumConfig,
    hour: usize,
    iteration: usize,
    prices: &[f64],
    load_nominal: &[f64],
    avail_prev: Option<&[Vec<f64>]>,
) -> Result<Round, EquilibriumError> {
    let n = case.classes.len();
    let spot = inputs.spot_price;

    // Nominal-price anchor: 10% over the unit cost of serving the
    // nominal class load from the supply the class currently faces;
    // spot-only before any dispatch exists.
    let anchors: Vec<f64> = match avail_prev {
        None => vec![nominal_price(spot); n],
        Some(avail) => (0..n)
            .map(|c| {
                if load_nominal[c] <= 0.0 {
                    return nominal_price(spot);
                }
                // The anchor availability is the load-share split even in
                // pooled mode, to keep it independent of class order.
                let supply = SupplyTerms {
                    spot_price: spot,
                    offers: case
                        .dg_units
                        .iter()
                        .enumerate()
                        .map(|(i, unit)| DgOffer {
                            unit_id: unit.id.clone(),
                            availability_kw: avail[c][i],
                            curve: CostCurve::Quadratic {
                                a: unit.a,
                                b: unit.b,
                            },
                        })
                        .collect(),
                };
                let unit_cost = pricing::supply_cost(load_nominal[c], &supply) / load_nominal[c];
                nominal_price(unit_cost)
            })
            .collect(),
    };

    let floor = cfg.pricing.demand_floor_kw;
    let models: Vec<DemandModel> = (0..n)
        .map(|c| DemandModel {
            load_nominal: load_nominal[c],
            price_nominal: anchors[c],
            beta: betas[c],
        })
        .collect();
    let class_loads: Vec<f64> = (0..n)
        .map(|c| models[c].demand(prices[c]).max(floor))
        .collect();
    if class_loads.iter().sum::<f64>() <= 0.0 {
        return Err(EquilibriumError::DegenerateLoads { hour });
    }

    let problem = DispatchProblem {
        case,
        class_loads: class_loads.clone(),
        class_prices: prices.to_vec(),
        spot_price: spot,
    };
    let dispatch = dispatch::solve(&problem, &cfg.dispatch).map_err(|source| {
        EquilibriumError::Dispatch {
            hour,
            iteration,
            source,
        }
    })?;

    let total_load: f64 = class_loads.iter().sum();
    let availability: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let share = class_loads[c] / total_load;
            dispatch.p_dg.iter().map(|&p| p * share).collect()
        })
        .collect();

    let decisions = if cfg.pooled {
        solve_classes_pooled(case, &models, &dispatch, inputs, cfg, hour, iteration)?
    } else {
        let mut out = Vec::with_capacity(n);
        for c in 0..n {
            let supply = class_supply(case, &dispatch, &availability[c], spot, cfg.flat_mc);
            let decision = pricing::solve_class(&case.classes[c], &models[c], &supply, &cfg.pricing)
                .map_err(|source| EquilibriumError::Pricing {
                    hour,
                    iteration,
                    source,
                })?;
            out.push(decision);
        }
        out
    };

    Ok(Round {
        anchors,
        dispatch,
        availability,
        decisions,
    })
}

/// Pooled availability: classes draw from the shared dispatched caps in
/// class order, iterated to a fixed point by coordinate passes.
fn solve_classes_pooled(
    case: &NetworkCase,
    models: &[DemandModel],
    dispatch: &DispatchResult,
    inputs: &HourInputs,
    cfg: &EquilibriumConfig,
    hour: usize,
    iteration: usize,
) -> Result<Vec<RetailerDecision>, EquilibriumError> {
    let n = case.classes.len();
    let units = case.dg_units.len();
    let mut draws = vec![vec![0.0; units]; n];
    let mut decisions: Vec<Option<RetailerDecision>> = vec![None; n];
    for _pass in 0..50 {
        let mut moved = 0.0f64;
        for c in 0..n {
            let mut remaining = dispatch.p_dg.clone();
            for (other, draw) in draws.iter().enumerate() {
                if other != c {
                    for (cap, &q) in remaining.iter_mut().zip(draw) {
                        *cap = (*cap - q).max(0.0);
                    }
                }
            }
            let supply =
                class_supply(case, dispatch, &remaining, inputs.spot_price, cfg.flat_mc);
            let decision = pricing::solve_class(&case.classes[c], &models[c], &supply, &cfg.pricing)
                .map_err(|source| EquilibriumError::Pricing {
                    hour,
                    iteration,
                    source,
                })?;
            for (i, &q) in decision.p_dg.iter().enumerate() {
                moved = moved.max((q - draws[c][i]).abs());
                draws[c][i] = q;
            }
            decisions[c] = Some(decision);
        }
        if moved <= 1e-9 {
            break;
        }
    }
    Ok(decisions.into_iter().map(|d| d.expect("every class solved")).collect())
}

/// Solve one hour to a price fixed point.
pub fn solve_hour(
    case: &NetworkCase,
    betas: &[f64],
    inputs: &HourInputs,
    cfg: &EquilibriumConfig,
    hour: usize,
) -> Result<HourlyEquilibrium, EquilibriumError> {
    let n = case.classes.len();
    if betas.len() != n || inputs.multipliers.len() != n {
        return Err(EquilibriumError::BadInputs(format!(
            "expected {n} classes, got {} betas and {} multipliers",
            betas.len(),
            inputs.multipliers.len()
        )));
    }
    if !(inputs.spot_price > 0.0) {
        return Err(EquilibriumError::BadInputs(format!(
            "spot price must be positive (got {})",
            inputs.spot_price
        )));
    }
    let load_nominal: Vec<f64> = nominal_class_loads(case)
        .iter()
        .zip(&inputs.multipliers)
        .map(|(&base, &m)| base * m)
        .collect();

    let mut prices = vec![inputs.spot_price; n];
    let mut avail_prev: Option<Vec<Vec<f64>>> = None;
    let mut anchors_prev: Option<Vec<f64>> = None;
    let mut damping = cfg.damping;
    let mut trace = Vec::new();
    let mut last_delta = vec![0.0f64; n];
    let mut alternations = 0usize;
    let mut converged = false;
    let mut final_round: Option<Round> = None;
    let mut iterations = 0;

    for iteration in 1..=cfg.max_iters {
        iterations = iteration;
        let round = run_round(
            case,
            betas,
            inputs,
            cfg,
            hour,
            iteration,
            &prices,
            &load_nominal,
            avail_prev.as_deref(),
        )?;
        let proposed: Vec<f64> = round.decisions.iter().map(|d| d.price).collect();
        trace.push(IterationTrace {
            iteration,
            class_prices: prices.clone(),
            proposed_prices: proposed.clone(),
            total_dg_kw: round.dispatch.p_dg.iter().sum(),
            p_wholesale_kw: round.dispatch.p_wholesale,
            loss_kw: round.dispatch.total_loss_kw,
        });

        let price_shift = (0..n)
            .map(|c| (proposed[c] - prices[c]).abs() / prices[c].max(f64::MIN_POSITIVE))
            .fold(0.0f64, f64::max);
        let anchor_shift = match &anchors_prev {
            Some(prev) => (0..n)
                .map(|c| (round.anchors[c] - prev[c]).abs() / prev[c].max(f64::MIN_POSITIVE))
                .fold(0.0f64, f64::max),
            None => f64::INFINITY,
        };
        if price_shift <= cfg.price_tol && anchor_shift <= cfg.price_tol {
            converged = true;
            final_round = Some(round);
            break;
        }

        // Oscillation guard: three consecutive sign flips of the largest
        // price delta halve the damping.
        let deltas: Vec<f64> = (0..n).map(|c| proposed[c] - prices[c]).collect();
        let lead = (0..n)
            .max_by(|&a, &b| deltas[a].abs().total_cmp(&deltas[b].abs()))
            .unwrap_or(0);
        if last_delta[lead] != 0.0 && deltas[lead] * last_delta[lead] < 0.0 {
            alternations += 1;
            if alternations >= 3 {
                damping = (damping * 0.5).max(0.05);
                alternations = 0;
            }
        } else {
            alternations = 0;
        }
        last_delta = deltas.clone();

        for c in 0..n {
            prices[c] += damping * deltas[c];
        }
        anchors_prev = Some(round.anchors.clone());
        avail_prev = Some(round.availability.clone());
        final_round = Some(round);
    }

    // Consistency pass: at the stored prices, re-derive the decisions
    // from the stored dispatch's availabilities so the published record
    // is exactly self-consistent (load = demand(price), Eq-8 balance,
    // availability = dispatch share).
    let round = final_round.expect("max_iters >= 1");
    let decisions: Vec<RetailerDecision> = if converged {
        let floor = cfg.pricing.demand_floor_kw;
        (0..n)
            .map(|c| {
                let model = DemandModel {
                    load_nominal: load_nominal[c],
                    price_nominal: round.anchors[c],
                    beta: betas[c],
                };
                let load = model.demand(prices[c]).max(floor);
                let supply = class_supply(
                    case,
                    &round.dispatch,
                    &round.availability[c],
                    inputs.spot_price,
                    cfg.flat_mc,
                );
                let allocation = allocate_supply(load, &supply);
                let income = prices[c] * load;
                let cost = inputs.spot_price * allocation.p_wholesale
                    + supply
                        .offers
                        .iter()
                        .zip(&allocation.p_dg)
                        .map(|(o, &q)| o.purchase_cost(q))
                        .sum::<f64>();
                RetailerDecision {
                    class_id: case.classes[c].clone(),
                    price: prices[c],
                    load_kw: load,
                    p_wholesale: allocation.p_wholesale,
                    p_dg: allocation.p_dg,
                    income,
                    cost,
                    profit: income - cost,
                }
            })
            .collect()
    } else {
        round.decisions
    };

    Ok(HourlyEquilibrium {
        hour,
        converged,
        iterations,
        class_prices: prices,
        nominal_prices: round.anchors,
        dispatch: round.dispatch,
        decisions,
        price_trace: trace,
        damping_used: damping,
    })
}

/// One extra full round from a solved hour's state; returns the raw
/// prices the pricing level proposes. Used to verify the fixed point.
pub fn reiterate_hour(
    case: &NetworkCase,
    betas: &[f64],
    inputs: &HourInputs,
    cfg: &EquilibriumConfig,
    solved: &HourlyEquilibrium,
) -> Result<Vec<f64>, EquilibriumError> {
    let load_nominal: Vec<f64> = nominal_class_loads(case)
        .iter()
        .zip(&inputs.multipliers)
        .map(|(&base, &m)| base * m)
        .collect();
    let avail: Vec<Vec<f64>> = (0..case.classes.len())
        .map(|c| {
            let total: f64 = solved.decisions.iter().map(|d| d.load_kw).sum();
            let share = solved.decisions[c].load_kw / total;
            solved.dispatch.p_dg.iter().map(|&p| p * share).collect()
        })
        .collect();
    let round = run_round(
        case,
        betas,
        inputs,
        cfg,
        solved.hour,
        solved.iterations + 1,
        &solved.class_prices,
        &load_nominal,
        Some(&avail),
    )?;
    Ok(round.decisions.iter().map(|d| d.price).collect())
}

#[derive(Debug, Clone)]
pub struct HourFailure {
    pub hour: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct DailyAggregates {
    /// $/day per class (hourly records are $/h over one-hour steps).
    pub daily_profit: Vec<f64>,
    /// Mean converged sale price per class over solved hours, $/kWh.
    pub mean_price: Vec<f64>,
    /// Total energy purchased from DG per class, kWh/day.
    pub total_dg_kwh: Vec<f64>,
    /// Total energy purchased from wholesale per class, kWh/day.
    pub total_wholesale_kwh: Vec<f64>,
    pub solved_hours: usize,
    pub converged_hours: usize,
}

#[derive(Debug)]
pub struct DailyResults {
    pub hours: Vec<Result<HourlyEquilibrium, HourFailure>>,
    pub aggregates: DailyAggregates,
    /// True when any hour failed or finished unconverged.
    pub partial: bool,
}

pub fn aggregate(hours: &[Result<HourlyEquilibrium, HourFailure>], n_classes: usize) -> DailyAggregates {
    let mut agg = DailyAggregates {
        daily_profit: vec![0.0; n_classes],
        mean_price: vec![0.0; n_classes],
        total_dg_kwh: vec![0.0; n_classes],
        total_wholesale_kwh: vec![0.0; n_classes],
        solved_hours: 0,
        converged_hours: 0,
    };
    for hour in hours.iter().flatten() {
        agg.solved_hours += 1;
        if hour.converged {
            agg.converged_hours += 1;
        }
        for (c, decision) in hour.decisions.iter().enumerate() {
            agg.daily_profit[c] += decision.profit;
            agg.mean_price[c] += decision.price;
            agg.total_dg_kwh[c] += decision.p_dg.iter().sum::<f64>();
            agg.total_wholesale_kwh[c] += decision.p_wholesale;
        }
    }
    if agg.solved_hours > 0 {
        for price in &mut agg.mean_price {
            *price /= agg.solved_hours as f64;
        }
    }
    agg
}

fn finish_day(
    hours: Vec<Result<HourlyEquilibrium, HourFailure>>,
    n_classes: usize,
) -> DailyResults {
    let aggregates = aggregate(&hours, n_classes);
    let partial = hours
        .iter()
        .any(|h| h.as_ref().map(|eq| !eq.converged).unwrap_or(true));
    DailyResults {
        hours,
        aggregates,
        partial,
    }
}

fn solve_one(
    case: &NetworkCase,
    betas: &[f64],
    inputs: &HourInputs,
    cfg: &EquilibriumConfig,
    hour: usize,
) -> Result<HourlyEquilibrium, HourFailure> {
    solve_hour(case, betas, inputs, cfg, hour).map_err(|e| HourFailure {
        hour,
        message: e.to_string(),
    })
}

/// Solve every hour sequentially. Always available; the parallel variant
/// produces identical results.
pub fn solve_day_sequential(
    case: &NetworkCase,
    betas: &[f64],
    hours: &[HourInputs],
    cfg: &EquilibriumConfig,
) -> DailyResults {
    let outcomes: Vec<_> = hours
        .iter()
        .enumerate()
        .map(|(h, inputs)| solve_one(case, betas, inputs, cfg, h))
        .collect();
    finish_day(outcomes, case.classes.len())
}

/// Solve every hour of the day; hours are independent and run on the
/// rayon pool when the `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn solve_day(
    case: &NetworkCase,
    betas: &[f64],
    hours: &[HourInputs],
    cfg: &EquilibriumConfig,
) -> DailyResults {
    use rayon::prelude::*;
    let outcomes: Vec<_> = hours
        .par_iter()
        .enumerate()
        .map(|(h, inputs)| solve_one(case, betas, inputs, cfg, h))
        .collect();
    finish_day(outcomes, case.classes.len())
}

#[cfg(not(feature = "parallel"))]
pub fn solve_day(
    case: &NetworkCase,
    betas: &[f64],
    hours: &[HourInputs],
    cfg: &EquilibriumConfig,
) -> DailyResults {
    solve_day_sequential(case, betas, hours, cfg)
}
