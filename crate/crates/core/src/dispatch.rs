//! Daily household cost minimization and the annual bill built from it.
//!
//! For usable capacity `y` the household chooses hourly storage actions to
//! minimize `[g]+ . q + [g]- . r`, where the grid exchange is
//!
//! ```text
//! g = l - eta_i v y + u+ / (eta_c eta_i) - eta_d eta_i u-
//! x_h = eta_s x_{h-1} + u_h,   0 <= x <= alpha y,   -u_dis y <= u <= u_chg y
//! ```
//!
//! The LP is posed over `[u+, u-, x, g+, g-]` (120 variables, 48 equality
//! rows); the split is exact because `q >= r >= 0`.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::domain::{AssetSpec, DayProfile, HouseholdRecord, IrradianceSeries, Scenario, TariffSet, HOURS};
use crate::error::{Error, Result};
use crate::simplex::LinearProgram;

#[derive(Clone, Debug, PartialEq)]
pub struct DailyDispatchResult {
    /// Optimal daily cost, $.
    pub cost: f64,
    /// `[g]+ . q`, $.
    pub purchases: f64,
    /// `[g]- . r`, $ (never positive).
    pub sale_credit: f64,
    /// Grid exchange per hour, kWh; positive is import.
    pub grid: DayProfile,
    /// Storage action per hour, kWh; positive is charging.
    pub storage_action: DayProfile,
    /// End-of-hour state of charge, kWh.
    pub soc: DayProfile,
}

const UP: usize = 0;
const UM: usize = HOURS;
const X: usize = 2 * HOURS;
const GP: usize = 3 * HOURS;
const GM: usize = 4 * HOURS;

/// Solves one day's dispatch LP at usable capacity `y` (kW of PV).
pub fn solve_day(
    load: &DayProfile,
    irr: &DayProfile,
    buy: &DayProfile,
    sell: &DayProfile,
    asset: &AssetSpec,
    y: f64,
) -> Result<DailyDispatchResult> {
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::domain(format!("capacity must be finite and >= 0, got {y}")));
    }
    for h in 0..HOURS {
        if !(sell[h] >= 0.0 && buy[h] >= sell[h]) {
            return Err(Error::domain(format!(
                "hour {h}: need buy >= sell >= 0, got buy {} sell {}",
                buy[h], sell[h]
            )));
        }
        if !(irr[h] >= 0.0) {
            return Err(Error::domain(format!("hour {h}: negative irradiance {}", irr[h])));
        }
        if !load[h].is_finite() {
            return Err(Error::domain(format!("hour {h}: non-finite load")));
        }
    }

    if y == 0.0 {
        // single feasible point: no storage, no PV, g = l
        return Ok(no_asset_day(load, buy, sell));
    }

    let a = asset;
    let cap = a.alpha * y;
    let charge_gain = 1.0 / (a.eta_c * a.eta_i);
    let discharge_gain = a.eta_d * a.eta_i;

    let mut lp = LinearProgram::with_capacity(5 * HOURS + 1, 2 * HOURS + 1);
    for _ in 0..HOURS {
        lp.add_var(0.0, 0.0, a.u_charge_max * y);
    }
    for _ in 0..HOURS {
        lp.add_var(0.0, 0.0, a.u_discharge_max * y);
    }
    for _ in 0..HOURS {
        lp.add_var(0.0, 0.0, cap);
    }
    for h in 0..HOURS {
        lp.add_var(buy[h], 0.0, f64::INFINITY);
    }
    for h in 0..HOURS {
        lp.add_var(-sell[h], 0.0, f64::INFINITY);
    }

    let mut basis = Vec::with_capacity(2 * HOURS + 1);
    for h in 0..HOURS {
        let rhs = load[h] - a.eta_i * irr[h] * y;
        lp.add_eq(
            &[
                (GP + h, 1.0),
                (GM + h, -1.0),
                (UP + h, -charge_gain),
                (UM + h, discharge_gain),
            ],
            rhs,
        );
        basis.push(if rhs >= 0.0 { GP + h } else { GM + h });
    }
    let x_init = a.x0 * cap;
    for h in 0..HOURS {
        if h == 0 {
            lp.add_eq(&[(X, 1.0), (UP, -1.0), (UM, 1.0)], a.eta_s * x_init);
        } else {
            lp.add_eq(
                &[(X + h, 1.0), (X + h - 1, -a.eta_s), (UP + h, -1.0), (UM + h, 1.0)],
                0.0,
            );
        }
        basis.push(X + h);
    }
    if a.hold_terminal_soc {
        let slack = lp.add_var(0.0, 0.0, f64::INFINITY);
        lp.add_eq(&[(X + HOURS - 1, 1.0), (slack, -1.0)], x_init);
        basis.push(slack);
    }

    let sol = lp.solve_with_basis(&basis)?;
    let v = &sol.x;

    let mut grid = [0.0; HOURS];
    let mut storage_action = [0.0; HOURS];
    let mut soc = [0.0; HOURS];
    for h in 0..HOURS {
        let mut up = v[UP + h].max(0.0);
        let mut um = v[UM + h].max(0.0);
        // simultaneous charge and discharge can only appear at zero marginal
        // price; netting keeps u and x and never raises the cost
        let overlap = up.min(um);
        if overlap > 0.0 {
            up -= overlap;
            um -= overlap;
        }
        storage_action[h] = up - um;
        soc[h] = v[X + h];
        grid[h] = load[h] - a.eta_i * irr[h] * y + charge_gain * up - discharge_gain * um;
    }
    Ok(price_grid(grid, storage_action, soc, buy, sell))
}

fn no_asset_day(load: &DayProfile, buy: &DayProfile, sell: &DayProfile) -> DailyDispatchResult {
    price_grid(*load, [0.0; HOURS], [0.0; HOURS], buy, sell)
}

fn price_grid(
    grid: DayProfile,
    storage_action: DayProfile,
    soc: DayProfile,
    buy: &DayProfile,
    sell: &DayProfile,
) -> DailyDispatchResult {
    let purchases: f64 = (0..HOURS).map(|h| grid[h].max(0.0) * buy[h]).sum();
    let sale_credit: f64 = (0..HOURS).map(|h| grid[h].min(0.0) * sell[h]).sum();
    DailyDispatchResult {
        cost: purchases + sale_credit,
        purchases,
        sale_credit,
        grid,
        storage_action,
        soc,
    }
}

/// Bill totals over the billing period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnualBill {
    pub bill: f64,
    pub purchases: f64,
    pub sale_credit: f64,
}

/// Shared inputs for billing: tariff, irradiance, asset and which days to
/// solve. With a day subsample the totals are scaled by `D / K`.
#[derive(Clone, Debug)]
pub struct BillingContext<'a> {
    pub tariff: &'a TariffSet,
    pub irradiance: &'a IrradianceSeries,
    pub asset: &'a AssetSpec,
    days: Vec<usize>,
    scale: f64,
}

impl<'a> BillingContext<'a> {
    pub fn full(scenario: &'a Scenario) -> Self {
        BillingContext {
            tariff: &scenario.tariff,
            irradiance: &scenario.irradiance,
            asset: &scenario.asset,
            days: (0..scenario.n_days()).collect(),
            scale: 1.0,
        }
    }

    /// `k` evenly spaced representative days; totals scaled by `D / k`.
    /// `k >= D` is the full period.
    pub fn subsampled(scenario: &'a Scenario, k: usize) -> Self {
        let d = scenario.n_days();
        if k == 0 || k >= d {
            return Self::full(scenario);
        }
        let days = representative_days(d, k);
        BillingContext {
            days,
            scale: d as f64 / k as f64,
            ..Self::full(scenario)
        }
    }

    pub fn days(&self) -> &[usize] {
        &self.days
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `L^T Q` over the billed days, in the same summation order as
    /// [`annual_bill`] at `y = 0`.
    pub fn baseline_bill(&self, household: &HouseholdRecord) -> f64 {
        let mut total = 0.0;
        for &d in &self.days {
            let l = household.load.day(d);
            let q = self.tariff.buy.day(d);
            total += (0..HOURS).map(|h| l[h].max(0.0) * q[h]).sum::<f64>();
        }
        total * self.scale
    }
}

/// Day indices `floor((i + 1/2) D / k)`, i = 0..k.
pub fn representative_days(n_days: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|i| (((2 * i + 1) * n_days) / (2 * k)).min(n_days - 1))
        .collect()
}

/// Sum of optimal daily costs at capacity `y`. Days are solved in parallel
/// and reduced in day order, so the result does not depend on thread count.
pub fn annual_bill(household: &HouseholdRecord, ctx: &BillingContext<'_>, y: f64) -> Result<AnnualBill> {
    let per_day: Vec<DailyDispatchResult> = ctx
        .days
        .par_iter()
        .map(|&d| {
            solve_day(
                household.load.day(d),
                ctx.irradiance.values.day(d),
                ctx.tariff.buy.day(d),
                ctx.tariff.sell.day(d),
                ctx.asset,
                y,
            )
        })
        .collect::<Result<_>>()?;
    let mut out = AnnualBill {
        bill: 0.0,
        purchases: 0.0,
        sale_credit: 0.0,
    };
    for r in &per_day {
        out.bill += r.cost;
        out.purchases += r.purchases;
        out.sale_credit += r.sale_credit;
    }
    out.bill *= ctx.scale;
    out.purchases *= ctx.scale;
    out.sale_credit *= ctx.scale;
    Ok(out)
}

/// Memoizes annual bills by household id and exact capacity value.
#[derive(Debug, Default)]
pub struct BillCache {
    entries: Mutex<HashMap<(String, u64), AnnualBill>>,
}

impl BillCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(&self, household: &HouseholdRecord, ctx: &BillingContext<'_>, y: f64) -> Result<AnnualBill> {
        let key = (household.id.clone(), y.to_bits());
        if let Some(b) = self.entries.lock().unwrap().get(&key) {
            return Ok(*b);
        }
        let b = annual_bill(household, ctx, y)?;
        self.entries.lock().unwrap().insert(key, b);
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn solar_day() -> DayProfile {
        std::array::from_fn(|h| {
            if (6..19).contains(&h) {
                0.8 * (std::f64::consts::PI * (h as f64 + 0.5 - 6.0) / 13.0).sin()
            } else {
                0.0
            }
        })
    }

    #[test]
    fn zero_capacity_is_plain_bill() {
        let r = solve_day(
            &[1.0; HOURS],
            &solar_day(),
            &[0.2; HOURS],
            &[0.05; HOURS],
            &AssetSpec::default(),
            0.0,
        )
        .unwrap();
        assert!((r.cost - 4.8).abs() < 1e-12);
        assert!((r.purchases - 4.8).abs() < 1e-12);
        assert_eq!(r.sale_credit, 0.0);
    }

    #[test]
    fn no_load_and_worthless_surplus_costs_nothing() {
        let r = solve_day(
            &[0.0; HOURS],
            &solar_day(),
            &[0.3; HOURS],
            &[0.0; HOURS],
            &AssetSpec::default(),
            2.0,
        )
        .unwrap();
        assert!(r.cost.abs() < 1e-12, "{}", r.cost);
    }

    #[test]
    fn rejects_sell_above_buy_and_negative_capacity() {
        let a = AssetSpec::default();
        let mut sell = [0.05; HOURS];
        sell[3] = 0.5;
        assert!(solve_day(&[1.0; HOURS], &solar_day(), &[0.2; HOURS], &sell, &a, 1.0).is_err());
        assert!(solve_day(&[1.0; HOURS], &solar_day(), &[0.2; HOURS], &[0.0; HOURS], &a, -1.0).is_err());
    }

    #[test]
    fn result_satisfies_physical_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = AssetSpec {
            x0: 0.3,
            ..AssetSpec::default()
        };
        for _ in 0..40 {
            let load: DayProfile = std::array::from_fn(|_| rng.gen_range(0.1..2.0));
            let buy: DayProfile = std::array::from_fn(|h| if (16..21).contains(&h) { 0.45 } else { 0.2 });
            let sell: DayProfile = std::array::from_fn(|_| rng.gen_range(0.0..0.1));
            let y = rng.gen_range(0.1..6.0);
            let irr = solar_day();
            let r = solve_day(&load, &irr, &buy, &sell, &a, y).unwrap();
            assert!((r.cost - (r.purchases + r.sale_credit)).abs() < 1e-9);
            assert!(r.sale_credit <= 0.0);
            let cap = a.alpha * y;
            let mut prev = a.x0 * cap;
            for h in 0..HOURS {
                assert!(r.soc[h] >= -1e-9 && r.soc[h] <= cap + 1e-9);
                assert!(r.storage_action[h] <= a.u_charge_max * y + 1e-9);
                assert!(r.storage_action[h] >= -a.u_discharge_max * y - 1e-9);
                let expect = a.eta_s * prev + r.storage_action[h];
                assert!((r.soc[h] - expect).abs() < 1e-8, "hour {h}");
                prev = r.soc[h];
            }
            // no asset is always feasible, so the optimum cannot be worse
            let base: f64 = (0..HOURS)
                .map(|h| {
                    let g = load[h] - a.eta_i * irr[h] * y;
                    g.max(0.0) * buy[h] + g.min(0.0) * sell[h]
                })
                .sum();
            assert!(r.cost <= base + 1e-9);
        }
    }

    #[test]
    fn terminal_soc_flag_holds_charge() {
        let a = AssetSpec {
            x0: 0.5,
            hold_terminal_soc: true,
            ..AssetSpec::default()
        };
        let buy: DayProfile = std::array::from_fn(|h| if (16..21).contains(&h) { 0.45 } else { 0.2 });
        let r = solve_day(&[1.0; HOURS], &solar_day(), &buy, &[0.03; HOURS], &a, 3.0).unwrap();
        assert!(r.soc[HOURS - 1] >= 0.5 * 3.0 - 1e-8);
        let free = solve_day(
            &[1.0; HOURS],
            &solar_day(),
            &buy,
            &[0.03; HOURS],
            &AssetSpec {
                hold_terminal_soc: false,
                ..a.clone()
            },
            3.0,
        )
        .unwrap();
        assert!(free.cost <= r.cost + 1e-9);
    }

    #[test]
    fn representative_days_are_spread() {
        assert_eq!(representative_days(30, 3), vec![5, 15, 25]);
        assert_eq!(representative_days(10, 10), (0..10).collect::<Vec<_>>());
    }
}
