mod common;

use std::time::Instant;

use p2p_der::dispatch::solve_day;
use p2p_der::domain::AssetSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lp_is_sandwiched_by_dp_oracle() {
    let asset = AssetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..150 {
        let d = common::random_day(&mut rng);
        let lp = solve_day(&d.load, &d.irr, &d.buy, &d.sell, &asset, d.y).unwrap();
        let dp = common::dp_daily_cost(&d.load, &d.irr, &d.buy, &d.sell, &asset, d.y, 200);
        let gap = dp - lp.cost;
        assert!(gap >= -1e-6, "oracle below LP: dp {dp} lp {}", lp.cost);
        assert!(gap <= 0.01 * dp.abs() + 1e-6, "gap {gap} vs oracle {dp}");
        worst = worst.max(gap / dp.abs().max(1e-9));
    }
    eprintln!("worst relative DP gap {worst:.3e}");
}

#[test]
fn scale_equivariance() {
    let asset = AssetSpec {
        x0: 0.2,
        ..AssetSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let d = common::random_day(&mut rng);
        let one = solve_day(&d.load, &d.irr, &d.buy, &d.sell, &asset, d.y).unwrap();
        let load2 = d.load.map(|v| 2.0 * v);
        let two = solve_day(&load2, &d.irr, &d.buy, &d.sell, &asset, 2.0 * d.y).unwrap();
        assert!(
            (two.cost - 2.0 * one.cost).abs() <= 1e-7 * one.cost.abs().max(1.0),
            "{} vs {}",
            two.cost,
            2.0 * one.cost
        );
    }
}

#[test]
#[ignore]
fn lp_throughput() {
    let asset = AssetSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let days: Vec<_> = (0..2000).map(|_| common::random_day(&mut rng)).collect();
    let t = Instant::now();
    let mut s = 0.0;
    for d in &days {
        s += solve_day(&d.load, &d.irr, &d.buy, &d.sell, &asset, d.y).unwrap().cost;
    }
    eprintln!(
        "{:.3} ms per LP ({s})",
        t.elapsed().as_secs_f64() * 1e3 / days.len() as f64
    );
}
