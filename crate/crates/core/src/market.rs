//! Rental market clearing between owners and non-owners.
//!
//! With piecewise-linear savings curves, each household's demand `y*(r)` is a
//! step function of the rent that jumps only at its segment slopes, so the
//! excess supply `E(r) = supply(r) - demand(r)` is a nondecreasing step
//! function. The clearing interval is found exactly by binary search over
//! the sorted slope breakpoints; the price is its midpoint. When the price
//! sits on a jump of `E`, households whose maximizer set is a whole segment
//! are rationed by a common fraction of that segment.

use std::path::Path;

use crate::error::Result;
use crate::savings::SavingsCurve;

/// Allocations this close to a no-trade point count as not participating.
pub const PARTICIPATION_EPS: f64 = 1e-9;

/// Balance tolerance `max(1e-6 kW, 1e-9 * sum ybar)`.
pub fn clearing_tolerance(curves: &[SavingsCurve]) -> f64 {
    let total: f64 = curves.iter().map(|c| c.net_zero_size()).sum();
    (1e-9 * total).max(1e-6)
}

/// Non-owner demand `sum y*(r)`.
pub fn aggregate_demand(curves: &[SavingsCurve], owners: &[bool], r: f64) -> f64 {
    curves
        .iter()
        .zip(owners)
        .filter(|(_, &o)| !o)
        .map(|(c, _)| c.demand_interval(r).1)
        .sum()
}

/// Owner supply `sum (ybar - y*(r))`.
pub fn aggregate_supply(curves: &[SavingsCurve], owners: &[bool], r: f64) -> f64 {
    curves
        .iter()
        .zip(owners)
        .filter(|(_, &o)| o)
        .map(|(c, _)| c.net_zero_size() - c.demand_interval(r).1)
        .sum()
}

/// Excess supply just below and just above `r`.
fn excess_limits(curves: &[SavingsCurve], owners: &[bool], r: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (c, &owner) in curves.iter().zip(owners) {
        let (ymin, ymax) = c.demand_interval(r);
        if owner {
            lo += c.net_zero_size() - ymax;
            hi += c.net_zero_size() - ymin;
        } else {
            lo -= ymax;
            hi -= ymin;
        }
    }
    (lo, hi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Participation {
    pub owners: usize,
    pub non_owners: usize,
    pub participating_owners: usize,
    pub participating_non_owners: usize,
}

impl Participation {
    fn rate(k: usize, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            k as f64 / n as f64
        }
    }

    pub fn owner_rate(&self) -> f64 {
        Self::rate(self.participating_owners, self.owners)
    }

    pub fn non_owner_rate(&self) -> f64 {
        Self::rate(self.participating_non_owners, self.non_owners)
    }

    pub fn total_rate(&self) -> f64 {
        Self::rate(
            self.participating_owners + self.participating_non_owners,
            self.owners + self.non_owners,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketEquilibrium {
    /// `None` when one side of the market is empty.
    pub clearing_price: Option<f64>,
    /// `[inf{r: E(r) >= 0}, sup{r: E(r) <= 0}]` up to the tolerance.
    pub price_interval: Option<(f64, f64)>,
    /// Cleared quantity, the mean of supply and demand at the allocation.
    pub volume: f64,
    pub supply: f64,
    pub demand: f64,
    pub owners: Vec<bool>,
    pub allocations: Vec<f64>,
    pub surpluses: Vec<f64>,
    pub owner_surplus_total: f64,
    pub renter_surplus_total: f64,
    pub total_surplus: f64,
    pub participation: Participation,
    pub tolerance: f64,
}

impl MarketEquilibrium {
    /// Volume over the owners' total capacity.
    pub fn fraction_rented_out(&self, curves: &[SavingsCurve]) -> f64 {
        let owned: f64 = curves
            .iter()
            .zip(&self.owners)
            .filter(|(_, &o)| o)
            .map(|(c, _)| c.net_zero_size())
            .sum();
        if owned > 0.0 {
            self.volume / owned
        } else {
            0.0
        }
    }
}

/// Clears the market for the given owner mask, which is aligned with `curves`.
pub fn clear_market(curves: &[SavingsCurve], owners: &[bool]) -> MarketEquilibrium {
    assert_eq!(curves.len(), owners.len(), "owner mask must match curves");
    let tol = clearing_tolerance(curves);
    let n_owners = owners.iter().filter(|&&o| o).count();
    let n_non = owners.len() - n_owners;

    let (price, interval, allocations) = if n_owners == 0 || n_non == 0 {
        let alloc = curves
            .iter()
            .zip(owners)
            .map(|(c, &o)| if o { c.net_zero_size() } else { 0.0 })
            .collect();
        (None, None, alloc)
    } else {
        let mut cands: Vec<f64> = std::iter::once(0.0)
            .chain(curves.iter().flat_map(|c| c.slopes.iter().copied()))
            .collect();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        // E is nondecreasing, so both predicates are monotone over `cands`
        let ia = cands.partition_point(|&c| excess_limits(curves, owners, c).1 < -tol);
        let ib = cands.partition_point(|&c| excess_limits(curves, owners, c).0 <= tol);
        let a = cands[ia.min(cands.len() - 1)];
        let b = cands[ib.saturating_sub(1)];
        let r = 0.5 * (a + b);
        let (e_lo, e_hi) = excess_limits(curves, owners, r);
        let theta = if e_hi > e_lo {
            (-e_lo / (e_hi - e_lo)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let alloc = curves
            .iter()
            .map(|c| {
                let (ymin, ymax) = c.demand_interval(r);
                if ymin < ymax {
                    ymax - theta * (ymax - ymin)
                } else {
                    ymax
                }
            })
            .collect();
        (Some(r), Some((a, b)), alloc)
    };

    let r = price.unwrap_or(0.0);
    let mut eq = MarketEquilibrium {
        clearing_price: price,
        price_interval: interval,
        volume: 0.0,
        supply: 0.0,
        demand: 0.0,
        owners: owners.to_vec(),
        surpluses: Vec::with_capacity(curves.len()),
        allocations,
        owner_surplus_total: 0.0,
        renter_surplus_total: 0.0,
        total_surplus: 0.0,
        participation: Participation {
            owners: n_owners,
            non_owners: n_non,
            ..Participation::default()
        },
        tolerance: tol,
    };
    for ((c, &owner), &y) in curves.iter().zip(owners).zip(&eq.allocations) {
        let ybar = c.net_zero_size();
        let fy = c.value_at(y);
        if owner {
            let w = fy + r * (ybar - y) - c.full_savings();
            eq.supply += ybar - y;
            eq.owner_surplus_total += w;
            eq.surpluses.push(w);
            if y < ybar - PARTICIPATION_EPS {
                eq.participation.participating_owners += 1;
            }
        } else {
            let w = fy - r * y;
            eq.demand += y;
            eq.renter_surplus_total += w;
            eq.surpluses.push(w);
            if y > PARTICIPATION_EPS {
                eq.participation.participating_non_owners += 1;
            }
        }
    }
    eq.total_surplus = eq.owner_surplus_total + eq.renter_surplus_total;
    eq.volume = 0.5 * (eq.supply + eq.demand);
    eq
}

/// Owner mask from a set of household ids.
pub fn owner_mask(curves: &[SavingsCurve], owner_ids: &[&str]) -> Vec<bool> {
    curves
        .iter()
        .map(|c| owner_ids.contains(&c.household_id.as_str()))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// `household_id,role,y_star,surplus`.
pub fn write_equilibrium(path: &Path, curves: &[SavingsCurve], eq: &MarketEquilibrium) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["household_id", "role", "y_star", "surplus"])?;
    for (i, c) in curves.iter().enumerate() {
        w.write_record([
            c.household_id.clone(),
            if eq.owners[i] { "owner" } else { "renter" }.to_string(),
            format!("{}", eq.allocations[i]),
            format!("{}", eq.surpluses[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One summary row; the price columns are empty when the market is one-sided.
pub fn write_equilibrium_summary(path: &Path, eq: &MarketEquilibrium) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "clearing_price",
        "price_lo",
        "price_hi",
        "volume",
        "owner_participation",
        "non_owner_participation",
        "total_participation",
        "owner_surplus",
        "renter_surplus",
        "total_surplus",
    ])?;
    w.write_record([
        fmt_opt(eq.clearing_price),
        fmt_opt(eq.price_interval.map(|p| p.0)),
        fmt_opt(eq.price_interval.map(|p| p.1)),
        format!("{}", eq.volume),
        format!("{}", eq.participation.owner_rate()),
        format!("{}", eq.participation.non_owner_rate()),
        format!("{}", eq.participation.total_rate()),
        format!("{}", eq.owner_surplus_total),
        format!("{}", eq.renter_surplus_total),
        format!("{}", eq.total_surplus),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, slope: f64, ybar: f64) -> SavingsCurve {
        SavingsCurve::from_parts(id.into(), vec![0.0, ybar], vec![0.0, slope * ybar], vec![slope]).unwrap()
    }

    #[test]
    fn two_lines_split_at_midpoint() {
        let curves = vec![line("o", 100.0, 1.0), line("n", 200.0, 1.0)];
        let eq = clear_market(&curves, &[true, false]);
        assert_eq!(eq.clearing_price, Some(150.0));
        assert_eq!(eq.price_interval, Some((100.0, 200.0)));
        assert_eq!(eq.allocations, vec![0.0, 1.0]);
        assert_eq!(eq.volume, 1.0);
        assert_eq!(eq.surpluses, vec![50.0, 50.0]);
        assert_eq!(eq.participation.total_rate(), 1.0);
    }

    #[test]
    fn one_sided_markets_do_not_trade() {
        let curves = vec![line("a", 100.0, 1.0), line("b", 200.0, 2.0)];
        for mask in [[true, true], [false, false]] {
            let eq = clear_market(&curves, &mask);
            assert_eq!(eq.clearing_price, None);
            assert_eq!(eq.volume, 0.0);
            assert_eq!(eq.total_surplus, 0.0);
        }
    }

    #[test]
    fn boundary_demand_and_supply() {
        let curves = vec![line("a", 100.0, 1.0), line("b", 200.0, 2.0), line("c", 50.0, 3.0)];
        let owners = [true, false, true];
        assert_eq!(aggregate_demand(&curves, &owners, 0.0), 2.0);
        assert_eq!(aggregate_supply(&curves, &owners, 0.0), 0.0);
        assert_eq!(aggregate_demand(&curves, &owners, 201.0), 0.0);
        assert_eq!(aggregate_supply(&curves, &owners, 201.0), 4.0);
    }

    #[test]
    fn jump_is_rationed_in_proportion() {
        // 1 kW of supply against two renters indifferent over [0, 2] at 150
        let curves = vec![line("o", 100.0, 1.0), line("n1", 150.0, 2.0), line("n2", 150.0, 2.0)];
        let eq = clear_market(&curves, &[true, false, false]);
        assert_eq!(eq.clearing_price, Some(150.0));
        assert!((eq.allocations[1] - 0.5).abs() < 1e-12);
        assert!((eq.allocations[2] - 0.5).abs() < 1e-12);
        assert!((eq.supply - eq.demand).abs() < 1e-12);
    }
}
