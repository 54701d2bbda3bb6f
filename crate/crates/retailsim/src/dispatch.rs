//! Distribution operating-cost minimization: choose DG outputs and the
//! wholesale injection that minimize wholesale purchase cost plus DG
//! generation cost, subject to the loss-inclusive balance, unit limits,
//! and voltage limits.
//!
//! The solver is a projected coordinate scheme: every outer iteration
//! refreshes the losses and finite-difference incremental-loss factors
//! from the sweep power flow, then solves the resulting separable
//! quadratic exactly. The wholesale injection is the balance slack,
//! bounded below at zero; when that bound binds the units are trimmed to
//! a common marginal price found by bisection. Voltage limits enter as a
//! quadratic penalty on out-of-band magnitudes.

use thiserror::Error;

use crate::dg_cost;
use crate::network::NetworkCase;
use crate::power_flow::{
    check_voltage_limits, solve_sweep, InjectionSet, PowerFlowError, PowerFlowSolution,
    SweepOptions,
};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("all class loads are zero; the wholesale price weighting is undefined")]
    AllZeroLoads,
    #[error("class load/price vectors must match the case classes ({want}), got {got}")]
    SizeMismatch { got: usize, want: usize },
    #[error("class loads must be >= 0 and prices > 0")]
    BadInputs,
    #[error("infeasible: minimum DG output exceeds load plus losses")]
    Infeasible,
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone)]
pub struct DispatchProblem<'a> {
    pub case: &'a NetworkCase,
    /// kW per class, in `case.classes` order.
    pub class_loads: Vec<f64>,
    /// $/kWh per class, in `case.classes` order.
    pub class_prices: Vec<f64>,
    /// Exogenous wholesale spot price, $/kWh (used by `wholesale_at_spot`).
    pub spot_price: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchOptions {
    /// Price the wholesale injection at the spot price instead of the
    /// load-weighted class prices.
    pub wholesale_at_spot: bool,
    /// Quadratic penalty weight on voltage-band violations, $/pu².
    pub voltage_penalty: f64,
    /// Power-flow settings for the inner sweeps. The tolerance defaults
    /// tighter than the standalone sweep so the finite-difference loss
    /// factors stay accurate.
    pub pf_tol_kw: f64,
    pub pf_max_iter: usize,
    /// Finite-difference step for incremental losses, kW.
    pub fd_step_kw: f64,
    pub max_outer: usize,
    /// Outer-loop convergence: max unit movement, kW.
    pub p_tol_kw: f64,
    /// Outer-loop convergence: loss movement, kW.
    pub loss_tol_kw: f64,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        DispatchOptions {
            wholesale_at_spot: false,
            voltage_penalty: 1e4,
            pf_tol_kw: 1e-6,
            pf_max_iter: 200,
            fd_step_kw: 1.0,
            max_outer: 60,
            p_tol_kw: 1e-6,
            loss_tol_kw: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DispatchResult {
    /// kW per DG unit, in `case.dg_units` order.
    pub p_dg: Vec<f64>,
    /// Wholesale injection at the slack bus, kW (from the slack branch flows).
    pub p_wholesale: f64,
    pub total_loss_kw: f64,
    /// $/h, including the voltage penalty when active.
    pub objective: f64,
    pub kkt_residual: f64,
    pub voltage_feasible: bool,
    pub outer_iterations: usize,
    pub converged: bool,
}

/// Load-share-weighted average of the class prices: the effective $/kWh
/// at which the wholesale injection is valued.
pub fn effective_wholesale_price(
    class_loads: &[f64],
    class_prices: &[f64],
) -> Result<f64, DispatchError> {
    let total: f64 = class_loads.iter().sum();
    if total <= 0.0 {
        return Err(DispatchError::AllZeroLoads);
    }
    Ok(class_loads
        .iter()
        .zip(class_prices)
        .map(|(&load, &price)| load / total * price)
        .sum())
}

struct Landscape {
    loss_kw: f64,
    penalty: f64,
    /// d(loss)/d(p_i), dimensionless.
    loss_factor: Vec<f64>,
    /// d(penalty)/d(p_i), $/kWh.
    penalty_grad: Vec<f64>,
    solution: PowerFlowSolution,
}

fn survey(
    problem: &DispatchProblem,
    p: &[f64],
    opts: &DispatchOptions,
) -> Result<Landscape, DispatchError> {
    let sweep = SweepOptions {
        tol_kw: opts.pf_tol_kw,
        max_iter: opts.pf_max_iter,
    };
    let run = |p: &[f64]| -> Result<(f64, f64, PowerFlowSolution), DispatchError> {
        let inj = InjectionSet::from_dispatch(problem.case, p, &problem.class_loads)
            .map_err(PowerFlowError::Case)?;
        let sol = solve_sweep(problem.case, &inj, &sweep)?;
        let mut pen = 0.0;
        for &v in &sol.voltage_magnitude {
            let out = (problem.case.limits.v_min - v).max(v - problem.case.limits.v_max);
            if out > 0.0 {
                pen += opts.voltage_penalty * out * out;
            }
        }
        Ok((sol.total_loss_kw, pen, sol))
    };
    let (loss0, pen0, solution) = run(p)?;
    let mut loss_factor = Vec::with_capacity(p.len());
    let mut penalty_grad = Vec::with_capacity(p.len());
    for (i, unit) in problem.case.dg_units.iter().enumerate() {
        let mut step = opts.fd_step_kw;
        if p[i] + step > unit.p_max {
            step = -step;
        }
        let mut perturbed = p.to_vec();
        perturbed[i] += step;
        let (loss_h, pen_h, _) = run(&perturbed)?;
        loss_factor.push((loss_h - loss0) / step);
        penalty_grad.push((pen_h - pen0) / step);
    }
    Ok(Landscape {
        loss_kw: loss0,
        penalty: pen0,
        loss_factor,
        penalty_grad,
        solution,
    })
}

/// Unit output at which its reduced marginal cost meets `lambda`.
fn unit_target(
    unit: &crate::network::DgUnit,
    lambda: f64,
    loss_factor: f64,
    penalty_grad: f64,
) -> f64 {
    let level = lambda * (1.0 - loss_factor) - penalty_grad;
    if unit.a == 0.0 {
        return if level > unit.b { unit.p_max } else { unit.p_min };
    }
    ((level - unit.b) / (2.0 * unit.a)).clamp(unit.p_min, unit.p_max)
}

fn validate(problem: &DispatchProblem) -> Result<(), DispatchError> {
    let want = problem.case.classes.len();
    if problem.class_loads.len() != want || problem.class_prices.len() != want {
        return Err(DispatchError::SizeMismatch {
            got: problem.class_loads.len(),
            want,
        });
    }
    if problem.class_loads.iter().any(|&l| !(l >= 0.0))
        || problem.class_prices.iter().any(|&p| !(p > 0.0))
    {
        return Err(DispatchError::BadInputs);
    }
    Ok(())
}

pub fn solve(problem: &DispatchProblem, opts: &DispatchOptions) -> Result<DispatchResult, DispatchError> {
    validate(problem)?;
    let case = problem.case;
    let wholesale_price = if opts.wholesale_at_spot {
        problem.spot_price
    } else {
        effective_wholesale_price(&problem.class_loads, &problem.class_prices)?
    };
    let total_load: f64 = problem.class_loads.iter().sum();

    let mut p: Vec<f64> = case.dg_units.iter().map(|u| u.p_min).collect();
    let mut prev_loss = f64::INFINITY;
    let mut converged = false;
    let mut outer = 0;
    let mut land = survey(problem, &p, opts)?;

    while outer < opts.max_outer {
        outer += 1;
        let demand = total_load + land.loss_kw;
        let mut target: Vec<f64> = case
            .dg_units
            .iter()
            .enumerate()
            .map(|(i, u)| unit_target(u, wholesale_price, land.loss_factor[i], land.penalty_grad[i]))
            .collect();
        if target.iter().sum::<f64>() > demand {
            // The zero bound on the wholesale injection binds: trim the
            // units to a common marginal price.
            let at = |lambda: f64| -> f64 {
                case.dg_units
                    .iter()
                    .enumerate()
                    .map(|(i, u)| unit_target(u, lambda, land.loss_factor[i], land.penalty_grad[i]))
                    .sum()
            };
            let floor: f64 = case.dg_units.iter().map(|u| u.p_min).sum();
            if floor > demand + 1e-9 {
                return Err(DispatchError::Infeasible);
            }
            let (mut lo, mut hi) = (0.0f64, wholesale_price);
            // b may be negative in user catalogs; widen the bracket down.
            while at(lo) > demand && lo > -1e6 {
                lo = if lo == 0.0 { -1.0 } else { lo * 2.0 };
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if at(mid) > demand {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let lambda = 0.5 * (lo + hi);
            target = case
                .dg_units
                .iter()
                .enumerate()
                .map(|(i, u)| unit_target(u, lambda, land.loss_factor[i], land.penalty_grad[i]))
                .collect();
        }
        let moved = target
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        p = target;
        land = survey(problem, &p, opts)?;
        if moved <= opts.p_tol_kw && (land.loss_kw - prev_loss).abs() <= opts.loss_tol_kw {
            converged = true;
            break;
        }
        prev_loss = land.loss_kw;
    }

    let violations = check_voltage_limits(&land.solution, case);
    let balance_wholesale = (total_load + land.loss_kw - p.iter().sum::<f64>()).max(0.0);
    let generation_cost: f64 = case
        .dg_units
        .iter()
        .zip(&p)
        .map(|(u, &out)| dg_cost::cost(u, out).expect("dispatch keeps units within limits"))
        .sum();
    let objective = wholesale_price * balance_wholesale + generation_cost + land.penalty;
    // Reported wholesale comes from the slack branch flows so the
    // conservation audit checks two independent routes.
    let p_wholesale = if case.dg_units.is_empty() && total_load == 0.0 {
        0.0
    } else {
        land.solution.slack_injection_kw
    };
    let mut result = DispatchResult {
        p_dg: p,
        p_wholesale,
        total_loss_kw: land.loss_kw,
        objective,
        kkt_residual: 0.0,
        voltage_feasible: violations.is_empty(),
        outer_iterations: outer,
        converged,
    };
    result.kkt_residual = kkt_residual(problem, &result, opts)?;
    Ok(result)
}

/// Worst normalized violation of the first-order optimality conditions at
/// a dispatch point: stationarity for interior units, the signed bound
/// conditions at limits, and the wholesale lower-bound complementarity.
pub fn kkt_residual(
    problem: &DispatchProblem,
    result: &DispatchResult,
    opts: &DispatchOptions,
) -> Result<f64, DispatchError> {
    validate(problem)?;
    if problem.case.dg_units.is_empty() {
        return Ok(0.0);
    }
    let wholesale_price = if opts.wholesale_at_spot {
        problem.spot_price
    } else {
        effective_wholesale_price(&problem.class_loads, &problem.class_prices)?
    };
    let land = survey(problem, &result.p_dg, opts)?;
    let reduced = |lambda: f64| -> f64 {
        let mut worst: f64 = 0.0;
        for (i, unit) in problem.case.dg_units.iter().enumerate() {
            let mc = 2.0 * unit.a * result.p_dg[i] + unit.b;
            let slope = mc - lambda * (1.0 - land.loss_factor[i]) + land.penalty_grad[i];
            let at_min = result.p_dg[i] - unit.p_min <= 1e-9;
            let at_max = unit.p_max - result.p_dg[i] <= 1e-9;
            let violation = if at_min && at_max {
                0.0
            } else if at_max {
                slope.max(0.0)
            } else if at_min {
                (-slope).max(0.0)
            } else {
                slope.abs()
            };
            worst = worst.max(violation);
        }
        worst.max(lambda - wholesale_price)
    };
    let total_load: f64 = problem.class_loads.iter().sum();
    let wholesale_model = total_load + land.loss_kw - result.p_dg.iter().sum::<f64>();
    let residual = if wholesale_model > 1e-6 {
        reduced(wholesale_price)
    } else {
        // Zero wholesale: the balance multiplier is free in [0, w];
        // report the best achievable residual (convex piecewise-linear
        // in lambda, ternary search).
        let (mut lo, mut hi) = (0.0f64, wholesale_price);
        for _ in 0..100 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if reduced(m1) <= reduced(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        reduced(0.5 * (lo + hi))
    };
    Ok(residual / wholesale_price)
}
