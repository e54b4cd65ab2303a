//! How much of the rental market clears within regions.
//!
//! Regional excess supply `s_k` is owner supply minus renter demand inside
//! region `k`. Surplus regions ship to deficit regions along a
//! minimum-cost transportation plan with squared-distance costs, solved by
//! the transportation simplex (northwest-corner start, MODI pricing).

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::error::{Error, Result};
use crate::market::MarketEquilibrium;
use crate::savings::SavingsCurve;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    GreatCircle,
    /// Flat projection around the mean latitude of the pair.
    Equirectangular,
}

fn check_coord(r: &Region) -> Result<()> {
    if !(-90.0..=90.0).contains(&r.lat) || !(-180.0..=180.0).contains(&r.lon) {
        return Err(Error::domain(format!(
            "region {} has invalid coordinates ({}, {})",
            r.id, r.lat, r.lon
        )));
    }
    Ok(())
}

pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

fn equirectangular_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let x = (lon2 - lon1).to_radians() * (0.5 * (lat1 + lat2)).to_radians().cos();
    let y = (lat2 - lat1).to_radians();
    EARTH_RADIUS_KM * x.hypot(y)
}

/// Symmetric distance matrix in km with a zero diagonal.
pub fn distance_matrix(regions: &[Region], metric: DistanceMetric) -> Result<Vec<Vec<f64>>> {
    for r in regions {
        check_coord(r)?;
    }
    let n = regions.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&regions[i], &regions[j]);
            let v = match metric {
                DistanceMetric::GreatCircle => haversine_km(a.lat, a.lon, b.lat, b.lon),
                DistanceMetric::Equirectangular => equirectangular_km(a.lat, a.lon, b.lat, b.lon),
            };
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Region index for each curve, looked up by household id.
pub fn region_index(
    curves: &[SavingsCurve],
    household_regions: &HashMap<String, String>,
    regions: &[Region],
) -> Result<Vec<usize>> {
    let by_id: HashMap<&str, usize> = regions.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    curves
        .iter()
        .map(|c| {
            let region = household_regions
                .get(&c.household_id)
                .ok_or_else(|| Error::validation(format!("household {}", c.household_id), "region_id", "is missing"))?;
            by_id.get(region.as_str()).copied().ok_or_else(|| {
                Error::validation(
                    format!("household {}", c.household_id),
                    "region_id",
                    format!("`{region}` is not a known region"),
                )
            })
        })
        .collect()
}

/// `s_k = sum over owners in k of (ybar - y*) - sum over renters in k of y*`.
pub fn regional_excess(
    eq: &MarketEquilibrium,
    curves: &[SavingsCurve],
    region_of: &[usize],
    n_regions: usize,
) -> Result<Vec<f64>> {
    let mut s = vec![0.0; n_regions];
    for (i, c) in curves.iter().enumerate() {
        let k = *region_of.get(i).filter(|&&k| k < n_regions).ok_or_else(|| {
            Error::validation(
                format!("household {}", c.household_id),
                "region_id",
                "is not mapped to a region",
            )
        })?;
        let y = eq.allocations[i];
        if eq.owners[i] {
            s[k] += c.net_zero_size() - y;
        } else {
            s[k] -= y;
        }
    }
    Ok(s)
}

/// `1 - sum |s_k| / (2 v)`; returns `(1, true)` when the volume is zero.
pub fn fraction_local(excess: &[f64], volume: f64) -> (f64, bool) {
    if !(volume > 0.0) {
        return (1.0, true);
    }
    let spread: f64 = excess.iter().map(|s| s.abs()).sum();
    ((1.0 - spread / (2.0 * volume)).clamp(0.0, 1.0), false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionalFlow {
    pub excess: Vec<f64>,
    /// `flow[k][l]`, kW shipped from region `k` to region `l`.
    pub flow: Vec<Vec<f64>>,
    /// `sum flow[k][l] * d(k, l)^2`, kW km^2.
    pub objective: f64,
    /// Dual prices: supply-side potential for surplus regions, demand-side
    /// potential for deficit regions, 0 for balanced ones. Optimality means
    /// `u_k + v_l <= d(k, l)^2` with equality wherever flow is positive.
    pub duals: Vec<f64>,
    /// Supplies and demands after the imbalance was absorbed.
    pub supply: Vec<f64>,
    pub demand: Vec<f64>,
}

/// Exact transportation optimum for the excess vector under squared
/// distance costs. A small imbalance is absorbed by scaling the larger side
/// down to the smaller one.
pub fn min_cost_flow(excess: &[f64], distances: &[Vec<f64>]) -> Result<RegionalFlow> {
    let n = excess.len();
    if distances.len() != n || distances.iter().any(|r| r.len() != n) {
        return Err(Error::domain(format!("distance matrix must be {n}x{n}")));
    }
    if distances.iter().flatten().any(|&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::domain("distances must be finite and nonnegative"));
    }
    if excess.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("excess supply must be finite"));
    }
    let mut supply: Vec<f64> = excess.iter().map(|&s| s.max(0.0)).collect();
    let mut demand: Vec<f64> = excess.iter().map(|&s| (-s).max(0.0)).collect();
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if ts > 0.0 && td > 0.0 && ts != td {
        let (side, factor) = if ts > td {
            (&mut supply, td / ts)
        } else {
            (&mut demand, ts / td)
        };
        for v in side.iter_mut() {
            *v *= factor;
        }
        log::debug!("rescaled transport imbalance {:.3e} kW", (ts - td).abs());
    } else if (ts > 0.0) != (td > 0.0) {
        log::debug!("one-sided excess ({ts:.3e} vs {td:.3e} kW), nothing to ship");
        supply.iter_mut().for_each(|v| *v = 0.0);
        demand.iter_mut().for_each(|v| *v = 0.0);
    }

    let sources: Vec<usize> = (0..n).filter(|&k| supply[k] > 0.0).collect();
    let sinks: Vec<usize> = (0..n).filter(|&k| demand[k] > 0.0).collect();
    let mut flow = vec![vec![0.0; n]; n];
    let mut duals = vec![0.0; n];
    if !sources.is_empty() && !sinks.is_empty() {
        let cost: Vec<Vec<f64>> = sources
            .iter()
            .map(|&i| sinks.iter().map(|&j| distances[i][j].powi(2)).collect())
            .collect();
        let a: Vec<f64> = sources.iter().map(|&i| supply[i]).collect();
        let b: Vec<f64> = sinks.iter().map(|&j| demand[j]).collect();
        let sol = transport(&cost, &a, &b)?;
        for (p, &i) in sources.iter().enumerate() {
            duals[i] = sol.u[p];
            for (q, &j) in sinks.iter().enumerate() {
                flow[i][j] = sol.x[p][q];
            }
        }
        for (q, &j) in sinks.iter().enumerate() {
            duals[j] = sol.v[q];
        }
    }
    let mut objective = 0.0;
    for k in 0..n {
        for l in 0..n {
            objective += flow[k][l] * distances[k][l].powi(2);
        }
    }
    Ok(RegionalFlow {
        excess: excess.to_vec(),
        flow,
        objective,
        duals,
        supply,
        demand,
    })
}

struct TransportSolution {
    x: Vec<Vec<f64>>,
    u: Vec<f64>,
    v: Vec<f64>,
}

/// Balanced transportation simplex on an `m x n` cost matrix.
fn transport(cost: &[Vec<f64>], a: &[f64], b: &[f64]) -> Result<TransportSolution> {
    let (m, n) = (a.len(), b.len());
    let mut x = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];

    // northwest corner, one index step per cell so the basis has m + n - 1 cells
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let q = ra[i].min(rb[j]).max(0.0);
        x[i][j] = q;
        basic[i][j] = true;
        ra[i] -= q;
        rb[j] -= q;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || ra[i] <= rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().flatten().fold(0.0f64, |s, &c| s.max(c)).max(1.0);
    let tol = 1e-12 * scale;
    let max_iter = 50 * (m + n) * (m + n) + 100;
    for it in 0..max_iter {
        let (u, v) = potentials(cost, &basic);
        // most negative reduced cost; first negative in index order late on
        let bland = it > 20 * (m + n);
        let mut enter: Option<(usize, usize, f64)> = None;
        'scan: for p in 0..m {
            for q in 0..n {
                if basic[p][q] {
                    continue;
                }
                let rc = cost[p][q] - u[p] - v[q];
                if rc < -tol && enter.is_none_or(|e| rc < e.2) {
                    enter = Some((p, q, rc));
                    if bland {
                        break 'scan;
                    }
                }
            }
        }
        let Some((p, q, _)) = enter else {
            return Ok(TransportSolution { x, u, v });
        };
        let cycle = basis_path(&basic, p, q);
        // cells alternate -, +, -, ... starting next to the entering column
        let mut theta = f64::INFINITY;
        let mut leave = None;
        for (k, &(ci, cj)) in cycle.iter().enumerate() {
            if k % 2 == 0 && x[ci][cj] < theta {
                theta = x[ci][cj];
                leave = Some((ci, cj));
            }
        }
        let (li, lj) = leave.expect("cycle has a decreasing cell");
        x[p][q] = theta;
        for (k, &(ci, cj)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                x[ci][cj] = (x[ci][cj] - theta).max(0.0);
            } else {
                x[ci][cj] += theta;
            }
        }
        x[li][lj] = 0.0;
        basic[p][q] = true;
        basic[li][lj] = false;
    }
    Err(crate::simplex::LpError::IterationLimit.into())
}

/// Node potentials with `u_0 = 0` and `u_i + v_j = c_ij` on basic cells.
fn potentials(cost: &[Vec<f64>], basic: &[Vec<bool>]) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (cost.len(), cost[0].len());
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    // nodes: rows 0..m, columns m..m+n
    let mut queue = VecDeque::from([0usize]);
    while let Some(node) = queue.pop_front() {
        if node < m {
            for q in 0..n {
                if basic[node][q] && v[q].is_nan() {
                    v[q] = cost[node][q] - u[node];
                    queue.push_back(m + q);
                }
            }
        } else {
            let q = node - m;
            for p in 0..m {
                if basic[p][q] && u[p].is_nan() {
                    u[p] = cost[p][q] - v[q];
                    queue.push_back(p);
                }
            }
        }
    }
    (u, v)
}

/// Basic cells on the tree path from column `q` to row `p`, in order.
fn basis_path(basic: &[Vec<bool>], p: usize, q: usize) -> Vec<(usize, usize)> {
    let (m, n) = (basic.len(), basic[0].len());
    let start = m + q;
    let mut prev = vec![usize::MAX; m + n];
    prev[start] = start;
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == p {
            break;
        }
        let next: Vec<usize> = if node < m {
            (0..n).filter(|&c| basic[node][c]).map(|c| m + c).collect()
        } else {
            (0..m).filter(|&r| basic[r][node - m]).collect()
        };
        for nb in next {
            if prev[nb] == usize::MAX {
                prev[nb] = node;
                queue.push_back(nb);
            }
        }
    }
    let mut nodes = vec![p];
    let mut cur = p;
    while cur != start {
        cur = prev[cur];
        nodes.push(cur);
    }
    nodes.reverse();
    nodes
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if a < m {
                (a, b - m)
            } else {
                (b, a - m)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalnessRow {
    pub t: f64,
    pub volume: f64,
    pub objective: f64,
    pub fraction_local: f64,
    pub zero_volume: bool,
}

/// Regional excess, transport plan and locality metric for one equilibrium.
pub fn analyze(
    t: f64,
    eq: &MarketEquilibrium,
    curves: &[SavingsCurve],
    region_of: &[usize],
    distances: &[Vec<f64>],
) -> Result<(LocalnessRow, RegionalFlow)> {
    let excess = regional_excess(eq, curves, region_of, distances.len())?;
    let (frac, zero) = fraction_local(&excess, eq.volume);
    let flow = min_cost_flow(&excess, distances)?;
    Ok((
        LocalnessRow {
            t,
            volume: eq.volume,
            objective: flow.objective,
            fraction_local: frac,
            zero_volume: zero,
        },
        flow,
    ))
}

pub fn write_localness(path: &Path, rows: &[LocalnessRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "volume", "objective", "fraction_local", "zero_volume"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.t),
            format!("{}", r.volume),
            format!("{}", r.objective),
            format!("{}", r.fraction_local),
            r.zero_volume.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Nonzero entries of the plan as `from_region,to_region,kw`.
pub fn write_flows(path: &Path, regions: &[Region], flow: &RegionalFlow) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["from_region", "to_region", "kw"])?;
    for (k, row) in flow.flow.iter().enumerate() {
        for (l, &f) in row.iter().enumerate() {
            if f > 0.0 {
                w.write_record([regions[k].id.clone(), regions[l].id.clone(), format!("{f}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
