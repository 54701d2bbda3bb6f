//! Shared test helpers: an independent Newton-Raphson load-flow oracle,
//! shipped-data loaders, and random case builders.
//!
//! The oracle deliberately shares nothing with the production sweep: it
//! assembles the bus admittance matrix in polar form and iterates full
//! Newton steps with a dense LU solve.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use retailsim::dg_cost::TechnologyCatalog;
use retailsim::network::{
    load_case_with_catalog, Branch, Bus, BusKind, LoadPoint, NetworkCase, VoltageLimits,
};
use retailsim::power_flow::InjectionSet;
use retailsim::scenario::Scenario;

pub fn data_path(file: &str) -> String {
    format!("{}/data/{file}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load_ieee33() -> NetworkCase {
    load_case_with_catalog(data_path("ieee33.case"), TechnologyCatalog::builtin()).unwrap()
}

pub fn default_scenario() -> Scenario {
    Scenario::parse(&std::fs::read_to_string(data_path("default.scenario")).unwrap()).unwrap()
}

pub struct NewtonSolution {
    pub voltage_magnitude: Vec<f64>,
    pub voltage_angle: Vec<f64>,
    pub total_loss_kw: f64,
    pub slack_injection_kw: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Full Newton-Raphson load flow in polar coordinates; every non-slack
/// bus is PQ. Injections follow the same convention as the production
/// solver (generation positive, kW/kvar).
pub fn newton_solve(
    case: &NetworkCase,
    injections: &InjectionSet,
    tol_kw: f64,
    max_iter: usize,
) -> NewtonSolution {
    let n = case.buses.len();
    let index = case.bus_index();
    let slack = index[&case.slack_bus()];
    let s_base_kw = case.base_mva * 1000.0;

    // Dense admittance matrix.
    let mut g = vec![vec![0.0f64; n]; n];
    let mut b = vec![vec![0.0f64; n]; n];
    for br in &case.branches {
        let z = Complex::new(br.resistance, br.reactance);
        let y = z.inv();
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        g[f][t] -= y.re;
        b[f][t] -= y.im;
        g[t][f] -= y.re;
        b[t][f] -= y.im;
        g[f][f] += y.re;
        b[f][f] += y.im;
        g[t][t] += y.re;
        b[t][t] += y.im;
    }

    let p_sched: Vec<f64> = injections.p_kw.iter().map(|p| p / s_base_kw).collect();
    let q_sched: Vec<f64> = injections.q_kvar.iter().map(|q| q / s_base_kw).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();

    let mut vm = vec![1.0f64; n];
    let mut va = vec![0.0f64; n];
    let mut converged = false;
    let mut iterations = 0;

    let calc = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                if g[i][k] == 0.0 && b[i][k] == 0.0 {
                    continue;
                }
                let theta = va[i] - va[k];
                p[i] += vm[i] * vm[k] * (g[i][k] * theta.cos() + b[i][k] * theta.sin());
                q[i] += vm[i] * vm[k] * (g[i][k] * theta.sin() - b[i][k] * theta.cos());
            }
        }
        (p, q)
    };

    while iterations < max_iter {
        iterations += 1;
        let (p, q) = calc(&vm, &va);
        let mut mismatch = DVector::zeros(2 * m);
        let mut worst: f64 = 0.0;
        for (row, &i) in pq.iter().enumerate() {
            mismatch[row] = p_sched[i] - p[i];
            mismatch[m + row] = q_sched[i] - q[i];
            worst = worst.max(mismatch[row].abs()).max(mismatch[m + row].abs());
        }
        if worst * s_base_kw <= tol_kw {
            converged = true;
            break;
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (row, &i) in pq.iter().enumerate() {
            for (col, &k) in pq.iter().enumerate() {
                let theta = va[i] - va[k];
                if i == k {
                    jac[(row, col)] = -q[i] - b[i][i] * vm[i] * vm[i];
                    jac[(row, m + col)] = p[i] / vm[i] + g[i][i] * vm[i];
                    jac[(m + row, col)] = p[i] - g[i][i] * vm[i] * vm[i];
                    jac[(m + row, m + col)] = q[i] / vm[i] - b[i][i] * vm[i];
                } else {
                    let gc = g[i][k] * theta.cos() + b[i][k] * theta.sin();
                    let gs = g[i][k] * theta.sin() - b[i][k] * theta.cos();
                    jac[(row, col)] = vm[i] * vm[k] * gs;
                    jac[(row, m + col)] = vm[i] * gc;
                    jac[(m + row, col)] = -vm[i] * vm[k] * gc;
                    jac[(m + row, m + col)] = vm[i] * gs;
                }
            }
        }
        let delta = jac
            .lu()
            .solve(&mismatch)
            .expect("Jacobian is nonsingular on the oracle cases");
        for (row, &i) in pq.iter().enumerate() {
            va[i] += delta[row];
            vm[i] += delta[m + row];
        }
    }

    // Branch-wise series losses from the final voltages.
    let mut loss = 0.0;
    for br in &case.branches {
        let z = Complex::new(br.resistance, br.reactance);
        let f = index[&br.from_bus];
        let t = index[&br.to_bus];
        let vf = Complex::from_polar(vm[f], va[f]);
        let vt = Complex::from_polar(vm[t], va[t]);
        let current = (vf - vt) / z;
        loss += z.re * current.norm_sqr();
    }
    let (p, _) = calc(&vm, &va);

    NewtonSolution {
        voltage_magnitude: vm,
        voltage_angle: va,
        total_loss_kw: loss * s_base_kw,
        slack_injection_kw: p[slack] * s_base_kw,
        converged,
        iterations,
    }
}

/// Random injections on a case: class loads scaled into `load_range`,
/// DG outputs uniform in [0, p_max].
pub fn random_injections(
    case: &NetworkCase,
    rng: &mut impl Rng,
    load_range: (f64, f64),
) -> InjectionSet {
    let nominal = retailsim::network::nominal_class_loads(case);
    let class_loads: Vec<f64> = nominal
        .iter()
        .map(|&l| l * rng.gen_range(load_range.0..=load_range.1))
        .collect();
    let dg: Vec<f64> = case
        .dg_units
        .iter()
        .map(|u| rng.gen_range(0.0..=u.p_max))
        .collect();
    InjectionSet::from_dispatch(case, &dg, &class_loads).unwrap()
}

/// Small random radial feeder: a chain of `n_buses` with mild impedances,
/// one class, and `n_dg` units drawn from the builtin catalog.
pub fn random_small_case(rng: &mut impl Rng, n_buses: usize, n_dg: usize) -> NetworkCase {
    let catalog = TechnologyCatalog::builtin();
    let tags: Vec<&str> = catalog.tags().collect();
    let buses = (1..=n_buses as u32)
        .map(|id| Bus {
            id,
            kind: if id == 1 { BusKind::Slack } else { BusKind::Load },
            base_kv: 12.66,
        })
        .collect();
    let branches = (2..=n_buses as u32)
        .map(|id| Branch {
            from_bus: id - 1,
            to_bus: id,
            resistance: rng.gen_range(0.001..0.02),
            reactance: rng.gen_range(0.001..0.02),
        })
        .collect();
    let loads = (2..=n_buses as u32)
        .map(|id| LoadPoint {
            bus_id: id,
            p_nominal: rng.gen_range(50.0..400.0),
            q_nominal: rng.gen_range(10.0..150.0),
            class_id: "A".into(),
        })
        .collect();
    let dg_units = (0..n_dg)
        .map(|i| {
            let tag = tags[rng.gen_range(0..tags.len())];
            let bus = rng.gen_range(2..=n_buses as u32);
            catalog.unit(tag, &format!("DG{}", i + 1), bus).unwrap()
        })
        .collect();
    NetworkCase::new(
        "random".into(),
        1.0,
        buses,
        branches,
        loads,
        dg_units,
        vec!["A".into()],
        VoltageLimits { v_min: 0.5, v_max: 1.5 },
    )
    .unwrap()
}
