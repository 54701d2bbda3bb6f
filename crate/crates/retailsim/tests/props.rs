//! Property-based invariants across the model layers.

mod common;

use proptest::prelude::*;

use retailsim::dg_cost::{inverse_marginal, marginal_cost, TechnologyCatalog};
use retailsim::network::{
    class_nominal_load, validate_radial, Branch, Bus, BusKind, LoadPoint, NetworkCase,
    VoltageLimits,
};
use retailsim::pricing::{allocate_supply, CostCurve, DemandModel, DgOffer, SupplyTerms};

/// Random tree case: bus i+2 attaches to a uniformly chosen earlier bus.
fn tree_case(parents: &[usize], loads: &[(f64, u8)]) -> NetworkCase {
    let n = parents.len() + 1;
    let buses = (1..=n as u32)
        .map(|id| Bus {
            id,
            kind: if id == 1 { BusKind::Slack } else { BusKind::Load },
            base_kv: 12.66,
        })
        .collect();
    let branches = parents
        .iter()
        .enumerate()
        .map(|(i, &p)| Branch {
            from_bus: (p + 1) as u32,
            to_bus: (i + 2) as u32,
            resistance: 0.01,
            reactance: 0.01,
        })
        .collect();
    let classes = vec!["A".to_string(), "B".to_string()];
    let load_points = loads
        .iter()
        .enumerate()
        .map(|(i, &(p, class))| LoadPoint {
            bus_id: (i % (n - 1) + 2) as u32,
            p_nominal: p,
            q_nominal: p * 0.4,
            class_id: classes[class as usize % 2].clone(),
        })
        .collect();
    NetworkCase::new(
        "prop".into(),
        1.0,
        buses,
        branches,
        load_points,
        vec![],
        classes,
        VoltageLimits { v_min: 0.9, v_max: 1.05 },
    )
    .unwrap()
}

proptest! {
    /// The class partition is total: per-class sums add up to the total
    /// nominal load.
    #[test]
    fn class_partition_is_total(
        parents in prop::collection::vec(0usize..6, 2..7),
        loads in prop::collection::vec((0.0f64..500.0, 0u8..2), 1..12),
    ) {
        let parents: Vec<usize> = parents.iter().enumerate().map(|(i, &p)| p.min(i)).collect();
        let case = tree_case(&parents, &loads);
        let by_class: f64 = case
            .classes
            .iter()
            .map(|c| class_nominal_load(&case, c, 1.0).unwrap())
            .sum();
        let direct: f64 = case.loads.iter().map(|l| l.p_nominal).sum();
        prop_assert!((by_class - direct).abs() <= 1e-9 * direct.max(1.0));
    }

    /// A tree validates radially; adding any extra edge breaks it.
    #[test]
    fn radial_validation_accepts_trees_and_rejects_extra_edges(
        parents in prop::collection::vec(0usize..8, 2..9),
        extra_from in 0usize..8,
        extra_to in 0usize..8,
    ) {
        let parents: Vec<usize> = parents.iter().enumerate().map(|(i, &p)| p.min(i)).collect();
        let case = tree_case(&parents, &[(100.0, 0)]);
        let order = validate_radial(&case).unwrap();
        prop_assert_eq!(order.len(), case.branches.len());
        // Parent-before-child: every branch's parent is the slack or a
        // previous child.
        let mut seen = vec![case.slack_bus()];
        for ob in &order {
            prop_assert!(seen.contains(&ob.parent));
            seen.push(ob.child);
        }

        let n = case.buses.len();
        let mut meshed = case.clone();
        meshed.branches.push(Branch {
            from_bus: (extra_from % n) as u32 + 1,
            to_bus: (extra_to % n) as u32 + 1,
            resistance: 0.01,
            reactance: 0.01,
        });
        prop_assert!(validate_radial(&meshed).is_err());
    }

    /// Eq-7 anchoring: demand at the nominal price is the nominal load,
    /// and the finite-difference slope is beta * L / p.
    #[test]
    fn demand_anchors_and_slope(
        load in 1.0f64..1e4,
        price in 0.01f64..10.0,
        beta in -1.0f64..0.0,
    ) {
        let model = DemandModel { load_nominal: load, price_nominal: price, beta };
        prop_assert_eq!(model.demand(price), load);
        let h = price * 1e-6;
        let slope = (model.demand(price + h) - model.demand(price - h)) / (2.0 * h);
        let expected = beta * load / price;
        prop_assert!((slope - expected).abs() <= 1e-6 * expected.abs().max(1.0));
    }

    /// Demand never goes negative.
    #[test]
    fn demand_is_floored(
        load in 0.0f64..1e4,
        price_nominal in 0.01f64..10.0,
        beta in -1.0f64..0.0,
        price in 0.001f64..200.0,
    ) {
        let model = DemandModel { load_nominal: load, price_nominal, beta };
        prop_assert!(model.demand(price) >= 0.0);
    }

    /// Allocation covers the load exactly and respects availabilities.
    #[test]
    fn allocation_balances_and_respects_caps(
        load in 0.0f64..2000.0,
        spot in 0.02f64..0.2,
        avail in prop::collection::vec(0.0f64..400.0, 0..4),
        intercepts in prop::collection::vec(0.01f64..0.15, 0..4),
    ) {
        let offers: Vec<DgOffer> = avail
            .iter()
            .zip(intercepts.iter().chain(std::iter::repeat(&0.05)))
            .enumerate()
            .map(|(i, (&availability_kw, &b))| DgOffer {
                unit_id: format!("DG{i}"),
                availability_kw,
                curve: CostCurve::Quadratic { a: 1e-4, b },
            })
            .collect();
        let supply = SupplyTerms { spot_price: spot, offers };
        let allocation = allocate_supply(load, &supply);
        let supplied = allocation.p_wholesale + allocation.p_dg.iter().sum::<f64>();
        prop_assert!((supplied - load).abs() <= 1e-6);
        prop_assert!(allocation.p_wholesale >= 0.0);
        for (q, offer) in allocation.p_dg.iter().zip(&supply.offers) {
            prop_assert!(*q >= 0.0 && *q <= offer.availability_kw + 1e-9);
        }
    }

    /// Marginal-cost inversion round-trips for interior powers.
    #[test]
    fn inverse_marginal_round_trips(p in 0.5f64..399.5) {
        for tag in TechnologyCatalog::builtin().tags() {
            let unit = TechnologyCatalog::builtin().unit(tag, "T", 1).unwrap();
            let mc = marginal_cost(&unit, p).unwrap();
            prop_assert!((inverse_marginal(&unit, mc) - p).abs() <= 1e-9);
        }
    }
}
