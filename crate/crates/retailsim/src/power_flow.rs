//! Backward/forward sweep load flow for radial feeders.
//!
//! The sweep alternates branch-current accumulation from the leaves with
//! voltage propagation from the slack, under a constant-power load model.
//! Convergence is declared on the nodal power mismatch computed from the
//! bus admittance matrix, so the reported mismatch is independent of the
//! sweep recursion itself.

use num_complex::Complex64;
use thiserror::Error;

use crate::network::{
    disaggregate_class_loads, validate_radial, CaseError, NetworkCase, OrientedBranch,
};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("sweep did not converge after {iterations} iterations (mismatch {mismatch_kw:.6} kW > tol {tol_kw:.6} kW)")]
    NotConverged {
        iterations: usize,
        mismatch_kw: f64,
        tol_kw: f64,
    },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("network error: {0}")]
    Radial(crate::network::RadialError),
    #[error("injection set has {got} buses, case has {want}")]
    SizeMismatch { got: usize, want: usize },
}

/// Per-bus net injections, indexed consistently with `case.buses`.
/// Generation positive, load negative.
#[derive(Debug, Clone)]
pub struct InjectionSet {
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

impl InjectionSet {
    pub fn zeros(case: &NetworkCase) -> InjectionSet {
        InjectionSet {
            p_kw: vec![0.0; case.buses.len()],
            q_kvar: vec![0.0; case.buses.len()],
        }
    }

    /// Net injections for a dispatch: DG outputs (kW per unit, in
    /// `case.dg_units` order) minus per-class loads disaggregated onto
    /// the class's buses proportionally to nominal values. DG units
    /// inject real power only.
    pub fn from_dispatch(
        case: &NetworkCase,
        dg_outputs: &[f64],
        class_loads: &[f64],
    ) -> Result<InjectionSet, CaseError> {
        assert_eq!(dg_outputs.len(), case.dg_units.len());
        let mut inj = InjectionSet::zeros(case);
        let index = case.bus_index();
        for (bus, (p, q)) in disaggregate_class_loads(case, class_loads)? {
            let i = index[&bus];
            inj.p_kw[i] -= p;
            inj.q_kvar[i] -= q;
        }
        for (unit, &p) in case.dg_units.iter().zip(dg_outputs) {
            inj.p_kw[index[&unit.bus_id]] += p;
        }
        Ok(inj)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Convergence tolerance on the max nodal power mismatch, kW.
    pub tol_kw: f64,
    pub max_iter: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol_kw: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Per-unit voltage magnitude, indexed like `case.buses`.
    pub voltage_magnitude: Vec<f64>,
    /// Voltage angle in radians, indexed like `case.buses`.
    pub voltage_angle: Vec<f64>,
    /// Sending-end branch flow (kW, kvar), indexed like `case.branches`.
    pub branch_flow_kw: Vec<f64>,
    pub branch_flow_kvar: Vec<f64>,
    /// Total series loss, Σ R·|I|², kW.
    pub total_loss_kw: f64,
    /// Real power injected at the slack bus, from its branch flows, kW.
    pub slack_injection_kw: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Max nodal mismatch after the final iteration, kW.
    pub max_mismatch_kw: f64,
    /// Mismatch after each iteration, kW.
    pub mismatch_trace: Vec<f64>,
}

/// Solve the radial load flow for the given injections. The slack bus is
/// held at 1.0 pu ∠0 and absorbs the residual of the balance.
pub fn solve_sweep(
    case: &NetworkCase,
    injections: &InjectionSet,
    opts: &SweepOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.buses.len();
    if injections.p_kw.len() != n || injections.q_kvar.len() != n {
        return Err(PowerFlowError::SizeMismatch {
            got: injections.p_kw.len(),
            want: n,
        });
    }
    let order = validate_radial(case).map_err(PowerFlowError::Radial)?;
    let index = case.bus_index();
    let slack = index[&case.slack_bus()];
    let s_base_kw = case.base_mva * 1000.0;

    // Scheduled complex injections in per-unit.
    let sched: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(injections.p_kw[i], injections.q_kvar[i]) / s_base_kw)
        .collect();
    let impedance: Vec<Complex64> = case
        .branches
        .iter()
        .map(|b| Complex64::new(b.resistance, b.reactance))
        .collect();
    // Oriented tree in index space, parent-before-child.
    let tree: Vec<(usize, usize, usize)> = order
        .iter()
        .map(|ob: &OrientedBranch| (ob.branch, index[&ob.parent], index[&ob.child]))
        .collect();

    let ybus = build_ybus(case, &index);
    // Zero-impedance branches carry no admittance entry; their endpoints
    // form rigid supernodes and the mismatch is checked on merged KCL.
    let merge = supernodes(case, &index);

    let mut volt = vec![Complex64::new(1.0, 0.0); n];
    let mut branch_current = vec![Complex64::new(0.0, 0.0); case.branches.len()];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut mismatch = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;
        // Backward: accumulate branch currents from the leaves. Current
        // drawn at a bus is conj(S_consumed / V).
        let mut accumulated: Vec<Complex64> = (0..n)
            .map(|i| ((-sched[i]) / volt[i]).conj())
            .collect();
        for &(bi, parent, child) in tree.iter().rev() {
            branch_current[bi] = accumulated[child];
            accumulated[parent] += branch_current[bi];
        }
        // Forward: propagate voltage drops from the slack.
        for &(bi, parent, child) in &tree {
            volt[child] = volt[parent] - impedance[bi] * branch_current[bi];
        }
        mismatch = max_mismatch_kw(&ybus, &merge, &volt, &sched, slack, s_base_kw);
        trace.push(mismatch);
        if mismatch <= opts.tol_kw {
            converged = true;
            break;
        }
    }

    // Final backward pass so branch currents are consistent with the
    // final voltages.
    let mut accumulated: Vec<Complex64> = (0..n).map(|i| ((-sched[i]) / volt[i]).conj()).collect();
    for &(bi, parent, child) in tree.iter().rev() {
        branch_current[bi] = accumulated[child];
        accumulated[parent] += branch_current[bi];
    }

    let mut total_loss = 0.0;
    let mut flow_kw = vec![0.0; case.branches.len()];
    let mut flow_kvar = vec![0.0; case.branches.len()];
    for &(bi, parent, _) in &tree {
        let current = branch_current[bi];
        total_loss += impedance[bi].re * current.norm_sqr();
        let sending = volt[parent] * current.conj();
        flow_kw[bi] = sending.re * s_base_kw;
        flow_kvar[bi] = sending.im * s_base_kw;
    }
    let slack_injection: f64 = tree
        .iter()
        .filter(|&&(_, parent, _)| parent == slack)
        .map(|&(bi, _, _)| flow_kw[bi])
        .sum();

    let solution = PowerFlowSolution {
        voltage_magnitude: volt.iter().map(|v| v.norm()).collect(),
        voltage_angle: volt.iter().map(|v| v.arg()).collect(),
        branch_flow_kw: flow_kw,
        branch_flow_kvar: flow_kvar,
        total_loss_kw: total_loss * s_base_kw,
        slack_injection_kw: slack_injection,
        converged,
        iterations,
        max_mismatch_kw: mismatch,
        mismatch_trace: trace,
    };
    if !converged {
        return Err(PowerFlowError::NotConverged {
            iterations,
            mismatch_kw: mismatch,
            tol_kw: opts.tol_kw,
        });
    }
    Ok(solution)
}

fn build_ybus(
    case: &NetworkCase,
    index: &std::collections::HashMap<u32, usize>,
) -> Vec<Vec<(usize, Complex64)>> {
    let n = case.buses.len();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut diag = vec![Complex64::new(0.0, 0.0); n];
    for br in &case.branches {
        let z = Complex64::new(br.resistance, br.reactance);
        if z.norm_sqr() == 0.0 {
            continue;
        }
        let y = z.inv();
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        rows[f].push((t, -y));
        rows[t].push((f, -y));
        diag[f] += y;
        diag[t] += y;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row.push((i, diag[i]));
    }
    rows
}

/// Union-find roots merging buses joined by zero-impedance branches.
fn supernodes(case: &NetworkCase, index: &std::collections::HashMap<u32, usize>) -> Vec<usize> {
    let n = case.buses.len();
    let mut root: Vec<usize> = (0..n).collect();
    fn find(root: &mut [usize], i: usize) -> usize {
        let mut at = i;
        while root[at] != at {
            root[at] = root[root[at]];
            at = root[at];
        }
        at
    }
    for br in &case.branches {
        if br.resistance == 0.0 && br.reactance == 0.0 {
            let a = find(&mut root, index[&br.from_bus]);
            let b = find(&mut root, index[&br.to_bus]);
            root[a.max(b)] = a.min(b);
        }
    }
    (0..n).map(|i| find(&mut root, i)).collect()
}

/// Max over non-slack supernodes of max(|ΔP|, |ΔQ|), kW, between scheduled
/// injections and the injections implied by the voltage profile.
fn max_mismatch_kw(
    ybus: &[Vec<(usize, Complex64)>],
    merge: &[usize],
    volt: &[Complex64],
    sched: &[Complex64],
    slack: usize,
    s_base_kw: f64,
) -> f64 {
    let n = ybus.len();
    let mut delta = vec![Complex64::new(0.0, 0.0); n];
    for (i, row) in ybus.iter().enumerate() {
        let mut current = Complex64::new(0.0, 0.0);
        for &(k, y) in row {
            current += y * volt[k];
        }
        let calc = volt[i] * current.conj();
        delta[merge[i]] += sched[i] - calc;
    }
    let slack_group = merge[slack];
    let mut worst: f64 = 0.0;
    for (group, d) in delta.iter().enumerate() {
        if group == slack_group || merge[group] != group {
            continue;
        }
        let m = d.re.abs().max(d.im.abs());
        if !m.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(m);
    }
    worst * s_base_kw
}

/// Buses whose voltage magnitude falls outside the case limits.
pub fn check_voltage_limits(solution: &PowerFlowSolution, case: &NetworkCase) -> Vec<u32> {
    case.buses
        .iter()
        .zip(&solution.voltage_magnitude)
        .filter(|(_, &v)| v < case.limits.v_min || v > case.limits.v_max)
        .map(|(bus, _)| bus.id)
        .collect()
}

/// Total loss for a dispatch point: distributes the class loads onto the
/// feeder, runs the sweep, and returns the series loss in kW.
pub fn loss_with_dispatch(
    case: &NetworkCase,
    dg_outputs: &[f64],
    class_loads: &[f64],
    opts: &SweepOptions,
) -> Result<f64, PowerFlowError> {
    let injections = InjectionSet::from_dispatch(case, dg_outputs, class_loads)?;
    Ok(solve_sweep(case, &injections, opts)?.total_loss_kw)
}
