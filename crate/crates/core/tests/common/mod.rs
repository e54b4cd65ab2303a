//! Test-only oracles shared by the integration suites.

#![allow(dead_code)]

use p2p_der::domain::{AssetSpec, DayProfile, HOURS};
use p2p_der::savings::{sample_grid, FitConfig, SavingsCurve, Spacing};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dynamic program over a 200-bucket (or `n_states`) state-of-charge grid.
///
/// Buckets partition `[0, alpha y]` evenly. Each bucket keeps one exact,
/// reachable state of charge together with the cheapest cost found to reach
/// it. From a state the candidate hourly actions are: move to any grid level,
/// idle, charge/discharge at the rate limit, and the action that makes the
/// grid exchange exactly zero. Every retained path is a feasible schedule for
/// the continuous problem, so the result is an upper bound on the exact
/// daily optimum; the grid resolution controls how close it gets.
pub fn dp_daily_cost(
    load: &DayProfile,
    irr: &DayProfile,
    buy: &DayProfile,
    sell: &DayProfile,
    asset: &AssetSpec,
    y: f64,
    n_states: usize,
) -> f64 {
    let cap = asset.alpha * y;
    let step = cap / (n_states - 1) as f64;
    let cg = 1.0 / (asset.eta_c * asset.eta_i);
    let dg = asset.eta_d * asset.eta_i;
    let hour_cost = |h: usize, u: f64| {
        let (up, um) = if u >= 0.0 { (u, 0.0) } else { (0.0, -u) };
        let g = load[h] - asset.eta_i * irr[h] * y + cg * up - dg * um;
        if g >= 0.0 {
            g * buy[h]
        } else {
            g * sell[h]
        }
    };
    let max_up = asset.u_charge_max * y;
    let max_dn = asset.u_discharge_max * y;

    // (exact soc, cost) per bucket
    let mut states: Vec<Option<(f64, f64)>> = vec![None; n_states];
    let x_init = asset.x0 * cap;
    states[((x_init / step).round() as usize).min(n_states - 1)] = Some((x_init, 0.0));
    let mut actions = Vec::with_capacity(n_states + 4);
    for h in 0..HOURS {
        let mut next: Vec<Option<(f64, f64)>> = vec![None; n_states];
        let net = load[h] - asset.eta_i * irr[h] * y;
        let balance = if net < 0.0 { -net / cg } else { -net / dg };
        for &(x, c) in states.iter().flatten() {
            let decayed = asset.eta_s * x;
            actions.clear();
            actions.extend((0..n_states).map(|k| k as f64 * step - decayed));
            actions.extend([0.0, max_up, -max_dn, balance]);
            for &u in &actions {
                let u = u.clamp(-max_dn, max_up);
                let x2 = decayed + u;
                if x2 < 0.0 || x2 > cap {
                    continue;
                }
                let k = ((x2 / step).round() as usize).min(n_states - 1);
                let cost = c + hour_cost(h, u);
                if next[k].is_none_or(|(_, best)| cost < best) {
                    next[k] = Some((x2, cost));
                }
            }
        }
        states = next;
    }
    states
        .into_iter()
        .flatten()
        .map(|(_, c)| c)
        .fold(f64::INFINITY, f64::min)
}

/// Random 24-hour instance drawn from plausible residential ranges.
pub struct DayInstance {
    pub load: DayProfile,
    pub irr: DayProfile,
    pub buy: DayProfile,
    pub sell: DayProfile,
    pub y: f64,
}

/// Capacity is drawn as a fraction of the day's own net-zero size, mirroring
/// the market's `0 <= y <= net-zero` domain.
pub fn random_day(rng: &mut impl rand::Rng) -> DayInstance {
    let peak_lo = rng.gen_range(14..18);
    let peak_hi = peak_lo + rng.gen_range(3..6);
    let off = rng.gen_range(0.12..0.25);
    let on = off + rng.gen_range(0.05..0.35);
    let sell_cap = rng.gen_range(0.0..off);
    let base = rng.gen_range(0.2..1.0);
    let clear = rng.gen_range(0.3..1.0);
    let mut d = DayInstance {
        load: std::array::from_fn(|h| {
            let bump = if (peak_lo..peak_hi).contains(&h) {
                rng.gen_range(0.5..2.5)
            } else {
                0.0
            };
            base * rng.gen_range(0.6..1.4) + bump
        }),
        irr: std::array::from_fn(|h| {
            if (6..19).contains(&h) {
                clear * (std::f64::consts::PI * (h as f64 + 0.5 - 6.0) / 13.0).sin()
            } else {
                0.0
            }
        }),
        buy: std::array::from_fn(|h| if (peak_lo..peak_hi).contains(&h) { on } else { off }),
        sell: std::array::from_fn(|_| rng.gen_range(0.0..=sell_cap)),
        y: 0.0,
    };
    let sun: f64 = d.irr.iter().sum();
    let use_: f64 = d.load.iter().sum();
    d.y = rng.gen_range(0.05..1.0) * use_ / (0.96 * sun);
    d
}

/// Fitted curves shaped like household savings: similar initial slopes,
/// dispersed terminal slopes.
pub fn random_curves(rng: &mut ChaCha8Rng, n: usize) -> Vec<SavingsCurve> {
    (0..n)
        .map(|i| {
            let ybar = rng.gen_range(1.0..8.0);
            let y = sample_grid(ybar, 30, Spacing::Linear);
            let s0 = rng.gen_range(380.0..420.0);
            let s_end = rng.gen_range(20.0..300.0);
            let bend = rng.gen_range(0.5..4.0);
            let mut f = vec![0.0];
            for k in 0..30 {
                let t = (0.5 * (y[k] + y[k + 1]) / ybar).powf(bend);
                let slope = s0 + (s_end - s0) * t;
                f.push(f[k] + slope * (y[k + 1] - y[k]));
            }
            SavingsCurve::fit(&format!("H{i:03}"), &y, &f, &FitConfig::default())
                .unwrap()
                .0
        })
        .collect()
}
