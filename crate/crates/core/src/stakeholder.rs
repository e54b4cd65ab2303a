//! Vendor and utility revenue changes caused by the rental market, and the
//! profit-rate ratio above which the utility's opposition would block it.
//!
//! The utility earns on billed purchases only. Without the market, owners
//! run their full asset and everyone else buys from the grid; with it,
//! every household sits at its equilibrium capacity under the long-run
//! owner set.

use std::path::Path;

use rayon::prelude::*;

use crate::adoption::{long_run_adoption, AdoptionOrder, LongRunOutcome};
use crate::error::{Error, Result};
use crate::market::clear_market;
use crate::savings::{HouseholdSamples, SavingsCurve};

/// Annual purchases versus capacity for one household, linear between the
/// LP samples. The value at zero capacity is the baseline bill: without
/// panels or storage every kWh of load is bought.
#[derive(Clone, Debug, PartialEq)]
pub struct BilledSalesCurve {
    pub household_id: String,
    pub y: Vec<f64>,
    pub purchases: Vec<f64>,
}

impl BilledSalesCurve {
    pub fn from_samples(samples: &HouseholdSamples) -> Result<Self> {
        if samples.y.len() < 2 || samples.y.len() != samples.purchases.len() || samples.y[0] != 0.0 {
            return Err(Error::validation(
                format!("household {}", samples.household_id),
                "purchases",
                "need at least two samples starting at y = 0",
            ));
        }
        let mut purchases = samples.purchases.clone();
        purchases[0] = samples.baseline_bill;
        let curve = BilledSalesCurve {
            household_id: samples.household_id.clone(),
            y: samples.y.clone(),
            purchases,
        };
        let rises = curve.increases(1e-6 * samples.baseline_bill.max(1.0));
        if rises > 0 {
            log::warn!(
                "household {}: purchases rise with capacity at {rises} sample(s)",
                curve.household_id
            );
        }
        Ok(curve)
    }

    /// Sample steps where purchases go up by more than `tol`.
    pub fn increases(&self, tol: f64) -> usize {
        self.purchases.windows(2).filter(|w| w[1] > w[0] + tol).count()
    }

    /// Linear interpolation, clamped to the sampled range.
    pub fn value_at(&self, y: f64) -> f64 {
        let last = self.y.len() - 1;
        if y <= self.y[0] {
            return self.purchases[0];
        }
        if y >= self.y[last] {
            return self.purchases[last];
        }
        let j = self.y.partition_point(|&k| k <= y);
        let (y0, y1) = (self.y[j - 1], self.y[j]);
        let (p0, p1) = (self.purchases[j - 1], self.purchases[j]);
        p0 + (p1 - p0) * (y - y0) / (y1 - y0)
    }
}

pub fn billed_sales_curves(samples: &[HouseholdSamples]) -> Result<Vec<BilledSalesCurve>> {
    samples.iter().map(BilledSalesCurve::from_samples).collect()
}

/// `T_BL`, summed in household order.
pub fn total_baseline(samples: &[HouseholdSamples]) -> f64 {
    samples.iter().map(|s| s.baseline_bill).sum()
}

/// Total billed purchases at the given capacities, aligned with `billed`.
pub fn billed_sales(billed: &[BilledSalesCurve], allocations: &[f64]) -> f64 {
    assert_eq!(billed.len(), allocations.len(), "allocations must match curves");
    billed.iter().zip(allocations).map(|(b, &y)| b.value_at(y)).sum()
}

/// Capacities without the market: the top `k` households own their full
/// net-zero size, the rest have none.
pub fn no_market_allocation(order: &AdoptionOrder, curves: &[SavingsCurve], k: usize) -> Vec<f64> {
    order
        .owners(k)
        .iter()
        .zip(curves)
        .map(|(&o, c)| if o { c.net_zero_size() } else { 0.0 })
        .collect()
}

/// `Delta R_V = p (D~(p) - D(p))`.
pub fn vendor_gain(outcome: &LongRunOutcome) -> f64 {
    outcome.p * outcome.delta_quantity()
}

/// Billed sales with and without the market, `(B_e, B~_e)`.
pub fn billed_sales_pair(
    order: &AdoptionOrder,
    curves: &[SavingsCurve],
    billed: &[BilledSalesCurve],
    outcome: &LongRunOutcome,
) -> (f64, f64) {
    let without = billed_sales(billed, &no_market_allocation(order, curves, outcome.short_run_owners));
    let eq = clear_market(curves, &order.owners(outcome.long_run_owners));
    (without, billed_sales(billed, &eq.allocations))
}

/// `Delta R_U = B_e - B~_e`.
pub fn utility_loss(
    order: &AdoptionOrder,
    curves: &[SavingsCurve],
    billed: &[BilledSalesCurve],
    outcome: &LongRunOutcome,
) -> f64 {
    let (b, b_market) = billed_sales_pair(order, curves, billed, outcome);
    b - b_market
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegimePoint {
    pub p: f64,
    pub delta_quantity: f64,
    pub delta_r_v: f64,
    pub delta_r_u: f64,
    /// `Delta R_V / Delta R_U`; `None` when the utility does not lose, so
    /// the market emerges at any profit-rate ratio.
    pub threshold: Option<f64>,
}

impl RegimePoint {
    pub fn new(p: f64, delta_quantity: f64, delta_r_v: f64, delta_r_u: f64) -> Self {
        RegimePoint {
            p,
            delta_quantity,
            delta_r_v,
            delta_r_u,
            threshold: (delta_r_u > 0.0).then(|| delta_r_v / delta_r_u),
        }
    }

    /// Whether the market emerges at utility profit-rate ratio
    /// `a_u = zeta_U / zeta_V`. Ties go against the market.
    pub fn emerges(&self, a_u: f64) -> bool {
        self.threshold.is_none_or(|th| a_u < th)
    }

    /// Profit changes `(zeta_V Delta R_V, zeta_U Delta R_U)`.
    pub fn profits(&self, zeta_v: f64, zeta_u: f64) -> (f64, f64) {
        (zeta_v * self.delta_r_v, zeta_u * self.delta_r_u)
    }
}

pub fn regime_point(
    order: &AdoptionOrder,
    curves: &[SavingsCurve],
    billed: &[BilledSalesCurve],
    p: f64,
) -> Result<RegimePoint> {
    let outcome = long_run_adoption(order, curves, p)?;
    if outcome.delta_quantity() < 0.0 {
        log::warn!("p = {p}: adoption fell, vendor does not gain");
    }
    Ok(RegimePoint::new(
        p,
        outcome.delta_quantity(),
        vendor_gain(&outcome),
        utility_loss(order, curves, billed, &outcome),
    ))
}

/// Regime points over the price grid, in grid order.
pub fn regime_boundary(
    order: &AdoptionOrder,
    curves: &[SavingsCurve],
    billed: &[BilledSalesCurve],
    p_grid: &[f64],
) -> Result<Vec<RegimePoint>> {
    if billed.len() != curves.len() || billed.iter().zip(curves).any(|(b, c)| b.household_id != c.household_id) {
        return Err(Error::validation(
            "billed sales",
            "household_id",
            "must align with savings curves",
        ));
    }
    p_grid
        .par_iter()
        .map(|&p| regime_point(order, curves, billed, p))
        .collect()
}

/// `p,delta_Q,delta_R_V,delta_R_U,threshold_A_U,emerges_at_A_U_1`; an
/// unbounded threshold is written as `inf`.
pub fn write_stakeholders(path: &Path, points: &[RegimePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "p",
        "delta_Q",
        "delta_R_V",
        "delta_R_U",
        "threshold_A_U",
        "emerges_at_A_U_1",
    ])?;
    for pt in points {
        w.write_record([
            format!("{}", pt.p),
            format!("{}", pt.delta_quantity),
            format!("{}", pt.delta_r_v),
            format!("{}", pt.delta_r_u),
            pt.threshold.map_or_else(|| "inf".to_string(), |t| format!("{t}")),
            pt.emerges(1.0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
