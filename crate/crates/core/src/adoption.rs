//! Adoption order, short- and long-run demand, and the equivalent subsidy.
//!
//! Households adopt in order of normalized savings `f(ybar)/ybar`. At rate
//! `t` the owner set is the top `round(t N)` households. Without a market,
//! a household adopts at price `p` when its normalized savings are at least
//! `p`. With a market, extra households adopt (in the same order) until the
//! clearing rent no longer exceeds `p`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{clear_market, MarketEquilibrium};
use crate::savings::SavingsCurve;

#[derive(Clone, Debug, PartialEq)]
pub struct AdoptionOrder {
    /// Indices into the curve slice, highest normalized savings first.
    pub ranking: Vec<usize>,
    /// Normalized savings along the ranking.
    pub normalized_savings: Vec<f64>,
    /// `cumulative_quantity[k]` is the total ybar of the top `k` households.
    pub cumulative_quantity: Vec<f64>,
}

/// Stable sort by normalized savings, descending; ties by household id.
pub fn build_order(curves: &[SavingsCurve]) -> AdoptionOrder {
    let mut ranking: Vec<usize> = (0..curves.len()).collect();
    ranking.sort_by(|&a, &b| {
        curves[b]
            .normalized_savings
            .total_cmp(&curves[a].normalized_savings)
            .then_with(|| curves[a].household_id.cmp(&curves[b].household_id))
    });
    let normalized_savings = ranking.iter().map(|&i| curves[i].normalized_savings).collect();
    let mut cumulative_quantity = Vec::with_capacity(curves.len() + 1);
    cumulative_quantity.push(0.0);
    for &i in &ranking {
        let last = cumulative_quantity[cumulative_quantity.len() - 1];
        cumulative_quantity.push(last + curves[i].net_zero_size());
    }
    AdoptionOrder {
        ranking,
        normalized_savings,
        cumulative_quantity,
    }
}

impl AdoptionOrder {
    pub fn len(&self) -> usize {
        self.ranking.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranking.is_empty()
    }

    /// Owner count at adoption rate `t`.
    pub fn owner_count(&self, t: f64) -> usize {
        ((t * self.len() as f64).round() as usize).min(self.len())
    }

    /// Owner mask, aligned with the curves, for the top `k` households.
    pub fn owners(&self, k: usize) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.ranking[..k] {
            mask[i] = true;
        }
        mask
    }

    /// Short-run adopters at price `p`: the count with normalized savings >= p.
    pub fn short_run_count(&self, p: f64) -> usize {
        self.normalized_savings.partition_point(|&ns| ns >= p)
    }

    /// Inverse short-run demand at the `k`-th adopter: the normalized
    /// savings of the marginal household (the first one when `k = 0`).
    pub fn threshold(&self, k: usize) -> f64 {
        self.normalized_savings[k.max(1) - 1]
    }
}

/// Default rate grid: `n` points on `[0.001, 0.999]`, denser near both ends.
pub fn default_t_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5];
    }
    (0..n)
        .map(|i| {
            let u = 0.5 * (1.0 - (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos());
            0.001 + 0.998 * u
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub owners: usize,
    pub adopted_quantity: f64,
    pub short_run_price: f64,
    pub clearing_price: Option<f64>,
    pub volume: f64,
    pub fraction_rented_out: f64,
    pub owner_participation: f64,
    pub non_owner_participation: f64,
    pub total_participation: f64,
    pub owner_surplus: f64,
    pub renter_surplus: f64,
    pub total_surplus: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemandCurves {
    pub rows: Vec<SweepRow>,
}

fn row(t: f64, k: usize, order: &AdoptionOrder, curves: &[SavingsCurve], eq: &MarketEquilibrium) -> SweepRow {
    SweepRow {
        t,
        owners: k,
        adopted_quantity: order.cumulative_quantity[k],
        short_run_price: order.threshold(k),
        clearing_price: eq.clearing_price,
        volume: eq.volume,
        fraction_rented_out: eq.fraction_rented_out(curves),
        owner_participation: eq.participation.owner_rate(),
        non_owner_participation: eq.participation.non_owner_rate(),
        total_participation: eq.participation.total_rate(),
        owner_surplus: eq.owner_surplus_total,
        renter_surplus: eq.renter_surplus_total,
        total_surplus: eq.total_surplus,
    }
}

/// Clears the market at each rate in `t_grid`, which must lie in `[0, 1]`.
/// Rates mapping to the same owner count share one clearing.
pub fn sweep_adoption(order: &AdoptionOrder, curves: &[SavingsCurve], t_grid: &[f64]) -> Result<DemandCurves> {
    if order.is_empty() {
        return Err(Error::EmptyScenario);
    }
    if let Some(&t) = t_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::domain(format!("adoption rate {t} outside [0, 1]")));
    }
    let mut counts: Vec<usize> = t_grid.iter().map(|&t| order.owner_count(t)).collect();
    counts.sort_unstable();
    counts.dedup();
    let cleared: BTreeMap<usize, MarketEquilibrium> = counts
        .par_iter()
        .map(|&k| (k, clear_market(curves, &order.owners(k))))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let rows = t_grid
        .iter()
        .map(|&t| {
            let k = order.owner_count(t);
            row(t, k, order, curves, &cleared[&k])
        })
        .collect();
    Ok(DemandCurves { rows })
}

/// Clearing rent with the top `k` households as owners. One-sided markets
/// take the lower end of their clearing interval `inf{r : E(r) >= 0}`: the
/// largest initial slope with no owners (the rent the first unit of supply
/// would fetch), and 0 with no renters.
pub fn price_at(order: &AdoptionOrder, curves: &[SavingsCurve], k: usize) -> f64 {
    if k == 0 {
        return curves.iter().map(|c| c.initial_slope()).fold(0.0, f64::max);
    }
    if k >= order.len() {
        return 0.0;
    }
    clear_market(curves, &order.owners(k))
        .clearing_price
        .expect("two-sided market has a price")
}

#[derive(Clone, Debug, PartialEq)]
pub struct LongRunOutcome {
    pub p: f64,
    /// Short-run adopter count `N D_R(p)`.
    pub short_run_owners: usize,
    /// Long-run adopter count `N t-bar`.
    pub long_run_owners: usize,
    pub short_run_rate: f64,
    pub long_run_rate: f64,
    pub short_run_quantity: f64,
    pub long_run_quantity: f64,
    /// Clearing rent at the short-run owner set.
    pub price_at_short_run: f64,
    /// Clearing rent at the long-run owner set and with one household fewer;
    /// they bracket `p` whenever adoption increased.
    pub price_at_long_run: f64,
    pub price_one_before: f64,
    /// Rent below `p` at the short-run set: owners would rather sell out.
    pub contraction: bool,
    /// Rent stays above `p` until every household owns.
    pub saturated: bool,
}

impl LongRunOutcome {
    pub fn delta_quantity(&self) -> f64 {
        self.long_run_quantity - self.short_run_quantity
    }
}

/// Smallest owner count `k >= N D_R(p)` whose clearing rent is at most `p`,
/// found by bisection on the monotone rent path.
pub fn long_run_adoption(order: &AdoptionOrder, curves: &[SavingsCurve], p: f64) -> Result<LongRunOutcome> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::domain(format!("asset price must be positive, got {p}")));
    }
    if order.is_empty() {
        return Err(Error::EmptyScenario);
    }
    let n = order.len();
    let k0 = order.short_run_count(p);
    let price_k0 = price_at(order, curves, k0);
    let mut k_bar = k0;
    if price_k0 > p {
        // invariant: price(lo) > p, price(hi) <= p
        let (mut lo, mut hi) = (k0, n);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if price_at(order, curves, mid) <= p {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        k_bar = hi;
    }
    let price_long = price_at(order, curves, k_bar);
    let price_before = if k_bar == 0 {
        f64::INFINITY
    } else {
        price_at(order, curves, k_bar - 1)
    };
    if price_k0 < p {
        log::debug!("p = {p}: rent {price_k0} at short-run adoption is below p, owners would sell");
    }
    Ok(LongRunOutcome {
        p,
        short_run_owners: k0,
        long_run_owners: k_bar,
        short_run_rate: k0 as f64 / n as f64,
        long_run_rate: k_bar as f64 / n as f64,
        short_run_quantity: order.cumulative_quantity[k0],
        long_run_quantity: order.cumulative_quantity[k_bar],
        price_at_short_run: price_k0,
        price_at_long_run: price_long,
        price_one_before: price_before,
        contraction: price_k0 < p,
        saturated: k_bar == n && k0 < n && price_before > p,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsidyOutcome {
    pub delta_quantity: f64,
    pub subsidy: f64,
    /// Long-run adoption did not exceed short-run adoption.
    pub no_increase: bool,
}

fn sort_nodes(nodes: &mut Vec<(f64, f64)>) {
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    nodes.dedup_by(|a, b| a.0 == b.0);
}

/// `(q, D^{-1}(q))` nodes from the sweep table, sorted by quantity.
pub fn inverse_demand_nodes(table: &DemandCurves) -> Vec<(f64, f64)> {
    let mut nodes: Vec<(f64, f64)> = table
        .rows
        .iter()
        .map(|r| (r.adopted_quantity, r.short_run_price))
        .collect();
    sort_nodes(&mut nodes);
    nodes
}

/// Adds one node per household for owner counts `k0..=k1`.
pub fn refine_nodes(nodes: &mut Vec<(f64, f64)>, order: &AdoptionOrder, k0: usize, k1: usize) {
    for k in k0..=k1.min(order.len()) {
        nodes.push((order.cumulative_quantity[k], order.threshold(k)));
    }
    sort_nodes(nodes);
}

/// Piecewise-linear interpolation, constant beyond the end nodes.
fn interpolate(nodes: &[(f64, f64)], q: f64) -> f64 {
    let j = nodes.partition_point(|n| n.0 <= q);
    if j == 0 {
        return nodes[0].1;
    }
    if j == nodes.len() {
        return nodes[j - 1].1;
    }
    let (a, b) = (nodes[j - 1], nodes[j]);
    a.1 + (b.1 - a.1) * (q - a.0) / (b.0 - a.0)
}

/// `S_E = integral over [q0, q1] of (p - D^{-1}(q)) dq` by the trapezoid
/// rule on the nodes inside the interval, which is exact for the
/// piecewise-linear interpolant.
pub fn subsidy_integral(nodes: &[(f64, f64)], p: f64, q0: f64, q1: f64) -> f64 {
    if !(q1 > q0) || nodes.is_empty() {
        return 0.0;
    }
    let mut pts = vec![q0];
    pts.extend(nodes.iter().map(|n| n.0).filter(|&q| q > q0 && q < q1));
    pts.push(q1);
    pts.windows(2)
        .map(|w| {
            let (a, b) = (p - interpolate(nodes, w[0]), p - interpolate(nodes, w[1]));
            0.5 * (a + b) * (w[1] - w[0])
        })
        .sum()
}

/// Adoption increase and the direct subsidy that would achieve it. The
/// table's inverse demand is refined to one node per household between the
/// short- and long-run owner counts.
pub fn equivalent_subsidy(table: &DemandCurves, order: &AdoptionOrder, outcome: &LongRunOutcome) -> SubsidyOutcome {
    let dq = outcome.delta_quantity();
    if !(dq > 0.0) {
        return SubsidyOutcome {
            delta_quantity: dq,
            subsidy: 0.0,
            no_increase: true,
        };
    }
    let mut nodes = inverse_demand_nodes(table);
    refine_nodes(&mut nodes, order, outcome.short_run_owners, outcome.long_run_owners);
    SubsidyOutcome {
        delta_quantity: dq,
        subsidy: subsidy_integral(&nodes, outcome.p, outcome.short_run_quantity, outcome.long_run_quantity),
        no_increase: false,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

const SWEEP_HEADER: [&str; 13] = [
    "t",
    "owners",
    "adopted_quantity",
    "short_run_price",
    "clearing_price",
    "volume",
    "fraction_rented_out",
    "owner_participation",
    "non_owner_participation",
    "total_participation",
    "owner_surplus",
    "renter_surplus",
    "total_surplus",
];

pub fn write_sweep(path: &Path, table: &DemandCurves) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in &table.rows {
        w.write_record([
            format!("{}", r.t),
            r.owners.to_string(),
            format!("{}", r.adopted_quantity),
            format!("{}", r.short_run_price),
            opt(r.clearing_price),
            format!("{}", r.volume),
            format!("{}", r.fraction_rented_out),
            format!("{}", r.owner_participation),
            format!("{}", r.non_owner_participation),
            format!("{}", r.total_participation),
            format!("{}", r.owner_surplus),
            format!("{}", r.renter_surplus),
            format!("{}", r.total_surplus),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep(path: &Path) -> Result<DemandCurves> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("column `{}`: cannot parse `{raw}`", SWEEP_HEADER[i]),
            })
        };
        rows.push(SweepRow {
            t: get(0)?,
            owners: get(1)? as usize,
            adopted_quantity: get(2)?,
            short_run_price: get(3)?,
            clearing_price: if rec.get(4).unwrap_or("").is_empty() {
                None
            } else {
                Some(get(4)?)
            },
            volume: get(5)?,
            fraction_rented_out: get(6)?,
            owner_participation: get(7)?,
            non_owner_participation: get(8)?,
            total_participation: get(9)?,
            owner_surplus: get(10)?,
            renter_surplus: get(11)?,
            total_surplus: get(12)?,
        });
    }
    Ok(DemandCurves { rows })
}
