//! Retailer profit maximization per class: choose the class sale price
//! under linear price-elastic demand, and the least-cost split of the
//! resulting load between the wholesale market and the DG quantities on
//! offer.
//!
//! The reduced profit in price is concave (linear demand, convex supply
//! cost), so the price search is a closed form when the supply cost is
//! linear and a golden-section scan over the capped interval otherwise.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("demand model is invalid: {0}")]
    BadModel(String),
    #[error("supply terms are invalid: {0}")]
    BadSupply(String),
    #[error("decision is inconsistent: {0}")]
    InconsistentDecision(String),
}

/// Retail markup applied to the unit supply cost to set the nominal price.
pub const MARKUP: f64 = 0.10;

/// Nominal sale price: unit supply cost marked up by [`MARKUP`].
pub fn nominal_price(unit_cost: f64) -> f64 {
    (1.0 + MARKUP) * unit_cost
}

/// Linear price-elastic demand anchored at a nominal operating point.
#[derive(Debug, Clone, Copy)]
pub struct DemandModel {
    pub load_nominal: f64,
    pub price_nominal: f64,
    /// Price elasticity, <= 0.
    pub beta: f64,
}

impl DemandModel {
    /// Elastic demand at `price`, floored at zero.
    pub fn demand(&self, price: f64) -> f64 {
        let raw = self.load_nominal
            * (1.0 + self.beta * (price - self.price_nominal) / self.price_nominal);
        raw.max(0.0)
    }

    fn validate(&self) -> Result<(), PricingError> {
        if !(self.price_nominal > 0.0) {
            return Err(PricingError::BadModel(format!(
                "nominal price must be positive (got {})",
                self.price_nominal
            )));
        }
        if !(self.load_nominal >= 0.0) {
            return Err(PricingError::BadModel(format!(
                "nominal load must be >= 0 (got {})",
                self.load_nominal
            )));
        }
        if !(self.beta <= 0.0) {
            return Err(PricingError::BadModel(format!(
                "elasticity must be <= 0 (got {})",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Purchase price schedule of one DG offer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostCurve {
    /// Pay along the unit's marginal-cost line: buying q costs a·q² + b·q.
    Quadratic { a: f64, b: f64 },
    /// Flat rate per kWh (the unit's marginal cost frozen at its
    /// dispatch point).
    Flat { price: f64 },
}

/// Quantity of one DG unit offered to a retailer.
#[derive(Debug, Clone)]
pub struct DgOffer {
    pub unit_id: String,
    pub availability_kw: f64,
    pub curve: CostCurve,
}

impl DgOffer {
    pub fn purchase_cost(&self, q: f64) -> f64 {
        match self.curve {
            CostCurve::Quadratic { a, b } => a * q * q + b * q,
            CostCurve::Flat { price } => price * q,
        }
    }

    pub fn marginal(&self, q: f64) -> f64 {
        match self.curve {
            CostCurve::Quadratic { a, b } => 2.0 * a * q + b,
            CostCurve::Flat { price } => price,
        }
    }

    /// Quantity at which the marginal purchase price meets `price`,
    /// clamped to the offered availability.
    fn quantity_at(&self, price: f64) -> f64 {
        match self.curve {
            CostCurve::Quadratic { a, b } => {
                if a == 0.0 {
                    if price > b {
                        self.availability_kw
                    } else {
                        0.0
                    }
                } else {
                    ((price - b) / (2.0 * a)).clamp(0.0, self.availability_kw)
                }
            }
            CostCurve::Flat { price: flat } => {
                if price > flat {
                    self.availability_kw
                } else {
                    0.0
                }
            }
        }
    }
}

/// Supply side a retailer faces: the spot market plus DG offers.
#[derive(Debug, Clone)]
pub struct SupplyTerms {
    pub spot_price: f64,
    pub offers: Vec<DgOffer>,
}

impl SupplyTerms {
    pub fn wholesale_only(spot_price: f64) -> SupplyTerms {
        SupplyTerms {
            spot_price,
            offers: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), PricingError> {
        if !(self.spot_price > 0.0) {
            return Err(PricingError::BadSupply(format!(
                "spot price must be positive (got {})",
                self.spot_price
            )));
        }
        for offer in &self.offers {
            if !(offer.availability_kw >= 0.0) {
                return Err(PricingError::BadSupply(format!(
                    "offer {} has negative availability",
                    offer.unit_id
                )));
            }
        }
        Ok(())
    }

    /// True when no offer is cheaper than the spot price for any quantity,
    /// so the supply cost is exactly spot-linear.
    fn is_spot_linear(&self) -> bool {
        self.offers.iter().all(|o| o.quantity_at(self.spot_price) <= 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub p_wholesale: f64,
    /// kW per offer, aligned with `supply.offers`.
    pub p_dg: Vec<f64>,
}

/// Least-cost split of `load` between wholesale and the DG offers: each
/// offer fills to the point its marginal price meets the spot price; if
/// those crossover quantities exceed the load, offers are trimmed to a
/// common marginal price (ties resolved in ascending intercept, then
/// offer order).
pub fn allocate_supply(load: f64, supply: &SupplyTerms) -> Allocation {
    let n = supply.offers.len();
    if load <= 0.0 {
        return Allocation {
            p_wholesale: 0.0,
            p_dg: vec![0.0; n],
        };
    }
    let crossover: Vec<f64> = supply
        .offers
        .iter()
        .map(|o| o.quantity_at(supply.spot_price))
        .collect();
    let total: f64 = crossover.iter().sum();
    if total <= load {
        return Allocation {
            p_wholesale: load - total,
            p_dg: crossover,
        };
    }
    // Trim to a common marginal price by bisection on the aggregate
    // quantity curve, which is nondecreasing in the price level.
    let mut lo = supply
        .offers
        .iter()
        .map(|o| o.marginal(0.0))
        .fold(f64::INFINITY, f64::min);
    let mut hi = supply.spot_price;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let q: f64 = supply.offers.iter().map(|o| o.quantity_at(mid)).sum();
        if q > load {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut quantities: Vec<f64> = supply.offers.iter().map(|o| o.quantity_at(lo)).collect();
    // Assign the bisection residual (and any flat-rate tie chunk) in
    // merit order: ascending marginal at the current fill, then offer
    // position.
    let mut residual = load - quantities.iter().sum::<f64>();
    if residual > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            supply.offers[i]
                .marginal(quantities[i])
                .total_cmp(&supply.offers[j].marginal(quantities[j]))
                .then(i.cmp(&j))
        });
        for i in order {
            let room = (crossover[i] - quantities[i]).max(0.0);
            let add = residual.min(room);
            quantities[i] += add;
            residual -= add;
            if residual <= 0.0 {
                break;
            }
        }
    }
    Allocation {
        p_wholesale: (load - quantities.iter().sum::<f64>()).max(0.0),
        p_dg: quantities,
    }
}

/// Cost of serving `load` under the least-cost split, $/h.
pub fn supply_cost(load: f64, supply: &SupplyTerms) -> f64 {
    let allocation = allocate_supply(load, supply);
    allocation_cost(&allocation, supply)
}

fn allocation_cost(allocation: &Allocation, supply: &SupplyTerms) -> f64 {
    supply.spot_price * allocation.p_wholesale
        + supply
            .offers
            .iter()
            .zip(&allocation.p_dg)
            .map(|(offer, &q)| offer.purchase_cost(q))
            .sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
pub struct PricingOptions {
    /// Sale price cap as a multiple of the nominal price.
    pub price_cap_multiple: f64,
    /// Lower bound applied to the elastic demand, kW.
    pub demand_floor_kw: f64,
}

impl Default for PricingOptions {
    fn default() -> Self {
        PricingOptions {
            price_cap_multiple: 20.0,
            demand_floor_kw: 0.0,
        }
    }
}

/// One retailer's converged hourly position.
#[derive(Debug, Clone)]
pub struct RetailerDecision {
    pub class_id: String,
    pub price: f64,
    pub load_kw: f64,
    pub p_wholesale: f64,
    pub p_dg: Vec<f64>,
    pub income: f64,
    pub cost: f64,
    pub profit: f64,
}

impl RetailerDecision {
    fn zero(class_id: &str, price: f64, offers: usize) -> RetailerDecision {
        RetailerDecision {
            class_id: class_id.to_string(),
            price,
            load_kw: 0.0,
            p_wholesale: 0.0,
            p_dg: vec![0.0; offers],
            income: 0.0,
            cost: 0.0,
            profit: 0.0,
        }
    }

    /// Per-class balance: the load is covered exactly by the purchases.
    pub fn check_balance(&self) -> Result<(), PricingError> {
        let supplied = self.p_wholesale + self.p_dg.iter().sum::<f64>();
        if (supplied - self.load_kw).abs() > 1e-6 {
            return Err(PricingError::InconsistentDecision(format!(
                "class {}: load {} kW but purchases total {} kW",
                self.class_id, self.load_kw, supplied
            )));
        }
        if self.p_wholesale < -1e-9 || self.p_dg.iter().any(|&q| q < -1e-9) {
            return Err(PricingError::InconsistentDecision(format!(
                "class {}: negative purchase quantity",
                self.class_id
            )));
        }
        Ok(())
    }
}

/// Income minus payments for a decision, recomputed from its price, load,
/// and split. Rejects decisions that violate the per-class balance.
pub fn profit(decision: &RetailerDecision, supply: &SupplyTerms) -> Result<f64, PricingError> {
    decision.check_balance()?;
    let income = decision.price * decision.load_kw;
    let cost = supply.spot_price * decision.p_wholesale
        + supply
            .offers
            .iter()
            .zip(&decision.p_dg)
            .map(|(offer, &q)| offer.purchase_cost(q))
            .sum::<f64>();
    Ok(income - cost)
}

/// Profit-maximizing sale price and purchase split for one class.
pub fn solve_class(
    class_id: &str,
    model: &DemandModel,
    supply: &SupplyTerms,
    opts: &PricingOptions,
) -> Result<RetailerDecision, PricingError> {
    model.validate()?;
    supply.validate()?;
    if model.load_nominal <= 0.0 {
        return Ok(RetailerDecision::zero(
            class_id,
            model.price_nominal,
            supply.offers.len(),
        ));
    }
    let cap = opts.price_cap_multiple * model.price_nominal;
    let floor = opts.demand_floor_kw;
    let demand_at = |price: f64| model.demand(price).max(floor);
    let reduced = |price: f64| {
        let load = demand_at(price);
        price * load - supply_cost(load, supply)
    };

    let price = if supply.is_spot_linear() {
        // Supply cost is spot-linear: stationarity of
        // p·L(p) - spot·L(p) has the closed form below. With a nonzero
        // demand floor the profit turns increasing once the floor binds,
        // so the cap competes with the vertex.
        let vertex = if model.beta == 0.0 {
            cap
        } else {
            0.5 * (model.price_nominal + supply.spot_price)
                - model.price_nominal / (2.0 * model.beta)
        };
        let candidate = vertex.clamp(f64::MIN_POSITIVE, cap);
        if floor > 0.0 && reduced(cap) > reduced(candidate) {
            cap
        } else {
            candidate
        }
    } else {
        golden_max(reduced, 1e-9 * model.price_nominal, cap)
    };

    let load = demand_at(price);
    let allocation = allocate_supply(load, supply);
    let income = price * load;
    let cost = allocation_cost(&allocation, supply);
    Ok(RetailerDecision {
        class_id: class_id.to_string(),
        price,
        load_kw: load,
        p_wholesale: allocation.p_wholesale,
        p_dg: allocation.p_dg,
        income,
        cost,
        profit: income - cost,
    })
}

/// Golden-section maximum of a quasiconcave function on [lo, hi].
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..300 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        if (b - a).abs() <= f64::EPSILON * b.abs() {
            break;
        }
    }
    let mid = 0.5 * (a + b);
    // Guard against flat plateaus: prefer the bracket midpoint unless an
    // endpoint is strictly better.
    let candidates = [mid, a, b];
    let mut best = mid;
    let mut best_value = f(mid);
    for &c in &candidates[1..] {
        let v = f(c);
        if v > best_value {
            best = c;
            best_value = v;
        }
    }
    best
}
