mod common;

use common::random_curves;
use p2p_der::adoption::{
    build_order, default_t_grid, equivalent_subsidy, long_run_adoption, price_at, read_sweep, sweep_adoption,
    write_sweep,
};
use p2p_der::market::clear_market;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn population(seed: u64, n: usize) -> Vec<p2p_der::savings::SavingsCurve> {
    random_curves(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

fn with_endpoints(n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend(default_t_grid(n));
    g.push(1.0);
    g
}

#[test]
fn order_is_a_sorted_permutation() {
    let curves = population(1, 80);
    let o = build_order(&curves);
    let mut seen = o.ranking.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..80).collect::<Vec<_>>());
    assert!(o.normalized_savings.windows(2).all(|w| w[0] >= w[1]));
    for p in [250.0, 300.0, 330.0, 360.0] {
        let k = o.short_run_count(p);
        for &i in &o.ranking[..k] {
            assert!(curves[i].normalized_savings >= p);
        }
        for &i in &o.ranking[k..] {
            assert!(curves[i].normalized_savings < p);
        }
    }
}

#[test]
fn sweep_shape() {
    let curves = population(2, 120);
    let o = build_order(&curves);
    let table = sweep_adoption(&o, &curves, &with_endpoints(200)).unwrap();
    let rows = &table.rows;
    assert!(rows.windows(2).all(|w| w[1].adopted_quantity >= w[0].adopted_quantity));
    assert!(rows.windows(2).all(|w| w[1].short_run_price <= w[0].short_run_price));
    let prices: Vec<f64> = rows.iter().filter_map(|r| r.clearing_price).collect();
    assert!(prices.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert_eq!(rows[0].volume, 0.0);
    assert_eq!(rows[rows.len() - 1].volume, 0.0);
    let (imax, vmax) = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.volume))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    assert!(vmax > 0.0 && imax > 0 && imax < rows.len() - 1);
}

#[test]
fn single_owner_is_supply_limited() {
    let curves = population(3, 150);
    let o = build_order(&curves);
    let table = sweep_adoption(&o, &curves, &[1.0 / 150.0]).unwrap();
    assert_eq!(table.rows[0].owners, 1);
    assert!(table.rows[0].volume <= curves[o.ranking[0]].net_zero_size() + 1e-12);
}

#[test]
fn rejects_rates_outside_unit_interval() {
    let curves = population(4, 10);
    let o = build_order(&curves);
    assert!(sweep_adoption(&o, &curves, &[0.5, 1.2]).is_err());
}

#[test]
fn long_run_brackets_price() {
    let curves = population(5, 150);
    let o = build_order(&curves);
    let mut grew = 0;
    for i in 0..40 {
        let p = 150.0 + 6.0 * i as f64;
        let lr = long_run_adoption(&o, &curves, p).unwrap();
        assert!(lr.long_run_quantity >= lr.short_run_quantity);
        if lr.delta_quantity() > 0.0 {
            grew += 1;
            assert!(lr.price_at_long_run <= p && p < lr.price_one_before, "p={p} {lr:?}");
            assert_eq!(lr.price_at_long_run, price_at(&o, &curves, lr.long_run_owners));
        } else {
            assert!(lr.price_at_short_run <= p);
        }
    }
    assert!(grew > 0);
}

#[test]
fn price_at_a_sweep_point_is_recovered() {
    let curves = population(6, 100);
    let o = build_order(&curves);
    let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    let table = sweep_adoption(&o, &curves, &grid).unwrap();
    let mut checked = 0;
    for w in table.rows.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        let (Some(rp), Some(rc)) = (prev.clearing_price, cur.clearing_price) else {
            continue;
        };
        if rc < rp && o.short_run_count(rc) <= prev.owners {
            let lr = long_run_adoption(&o, &curves, rc).unwrap();
            assert!(lr.long_run_owners > prev.owners && lr.long_run_owners <= cur.owners);
            checked += 1;
        }
    }
    assert!(checked > 5);
}

#[test]
fn no_growth_when_price_exceeds_rents() {
    let curves = population(7, 60);
    let o = build_order(&curves);
    // above every initial slope nobody would pay that rent
    let top = price_at(&o, &curves, 0);
    assert!(top >= price_at(&o, &curves, 1));
    let lr = long_run_adoption(&o, &curves, top * 1.01).unwrap();
    assert_eq!(lr.long_run_owners, lr.short_run_owners);
    let table = sweep_adoption(&o, &curves, &default_t_grid(50)).unwrap();
    let s = equivalent_subsidy(&table, &o, &lr);
    assert!(s.no_increase);
    assert_eq!(s.subsidy, 0.0);
    assert_eq!(s.delta_quantity, 0.0);
}

#[test]
fn subsidy_converges_under_refinement() {
    let curves = population(8, 200);
    let o = build_order(&curves);
    let coarse = sweep_adoption(&o, &curves, &default_t_grid(200)).unwrap();
    let fine = sweep_adoption(&o, &curves, &default_t_grid(2000)).unwrap();
    let mut checked = 0;
    for i in 0..30 {
        let p = 200.0 + 5.0 * i as f64;
        let lr = long_run_adoption(&o, &curves, p).unwrap();
        let a = equivalent_subsidy(&coarse, &o, &lr);
        let b = equivalent_subsidy(&fine, &o, &lr);
        if !a.no_increase && b.subsidy.abs() > 0.0 {
            assert!(
                (a.subsidy - b.subsidy).abs() <= 0.005 * b.subsidy.abs(),
                "p={p}: {} vs {}",
                a.subsidy,
                b.subsidy
            );
            checked += 1;
        }
    }
    assert!(checked > 3);
}

#[test]
fn sweep_file_round_trips() {
    let curves = population(9, 30);
    let o = build_order(&curves);
    let table = sweep_adoption(&o, &curves, &with_endpoints(20)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("sweep.csv");
    write_sweep(&path, &table).unwrap();
    assert_eq!(read_sweep(&path).unwrap(), table);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rent_path_is_nonincreasing(seed in any::<u64>(), n in 3usize..60) {
        let curves = population(seed, n);
        let o = build_order(&curves);
        let mut prev = f64::INFINITY;
        for k in 1..n {
            let r = clear_market(&curves, &o.owners(k)).clearing_price.unwrap();
            prop_assert!(r <= prev + 1e-9);
            prev = r;
        }
    }

    #[test]
    fn long_run_never_below_short_run(seed in any::<u64>(), p in 100.0f64..450.0) {
        let curves = population(seed, 40);
        let o = build_order(&curves);
        let lr = long_run_adoption(&o, &curves, p).unwrap();
        prop_assert!(lr.long_run_quantity >= lr.short_run_quantity);
        prop_assert!(lr.price_at_long_run <= p);
    }
}
