//! Pipeline stages. Each stage reads the upstream files from the run
//! directory, writes its own outputs atomically and records their checksums
//! in the manifest. A stage whose inputs and parameters hash to the
//! recorded key, and whose outputs are untouched, is skipped.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use p2p_der::adoption::{
    build_order, default_t_grid, equivalent_subsidy, long_run_adoption, read_sweep, sweep_adoption, write_sweep,
    AdoptionOrder, LongRunOutcome,
};
use p2p_der::dispatch::BillingContext;
use p2p_der::domain::Scenario;
use p2p_der::ingest::{self, load_scenario, write_exclusions, write_scenario, Exclusion, ScenarioPaths};
use p2p_der::localness::{analyze, distance_matrix, region_index, write_flows, write_localness};
use p2p_der::market::{clear_market, write_equilibrium, write_equilibrium_summary};
use p2p_der::savings::{fit_population, read_curves, read_samples, write_curves, write_samples, SavingsCurve};
use p2p_der::stakeholder::{billed_sales_curves, regime_boundary, write_stakeholders};
use p2p_der::synth::generate_scenario;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{hash_json, RunConfig};
use crate::manifest::{now_unix, sha256_file, write_atomic, Manifest};

pub const DATA_DIR: &str = "data";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const CURVES_FILE: &str = "savings_curves.csv";
pub const DIAGNOSTICS_FILE: &str = "fit_diagnostics.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EQUILIBRIUM_FILE: &str = "equilibrium.csv";
pub const EQUILIBRIUM_SUMMARY_FILE: &str = "equilibrium_summary.csv";
pub const LONGRUN_FILE: &str = "longrun.csv";
pub const SUBSIDY_FILE: &str = "subsidy.csv";
pub const STAKEHOLDERS_FILE: &str = "stakeholders.csv";
pub const LOCALNESS_FILE: &str = "localness.csv";

const DATA_FILES: [&str; 5] = [
    ingest::LOADS_FILE,
    ingest::IRRADIANCE_FILE,
    ingest::TARIFF_BUY_FILE,
    ingest::TARIFF_SELL_FILE,
    ingest::REGIONS_FILE,
];

pub fn flows_file(t: f64) -> String {
    format!("flows_t{t}.csv")
}

pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub force: bool,
    manifest: Manifest,
}

impl Run {
    pub fn new(config: RunConfig, out: &Path) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut manifest = Manifest::load_or_new(out)?;
        manifest.version = env!("CARGO_PKG_VERSION").to_string();
        manifest.config_hash = config.hash();
        manifest.seed = config.synth.rng_seed;
        Ok(Run {
            config,
            out: out.to_path_buf(),
            force: false,
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn data_dir(&self) -> PathBuf {
        self.config.data_dir.clone().unwrap_or_else(|| self.out.join(DATA_DIR))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, command: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.exists() {
            bail!("{} is missing; run {command} first", p.display());
        }
        Ok(p)
    }

    fn input_sums(&self, files: &[PathBuf]) -> Result<Vec<String>> {
        files.iter().map(|f| sha256_file(f)).collect()
    }

    /// Runs `body` unless the stage is fresh; returns whether it ran.
    fn stage(&mut self, name: &str, key: String, body: impl FnOnce(&Self) -> Result<Vec<PathBuf>>) -> Result<bool> {
        if !self.force && self.manifest.is_fresh(&self.out, name, &key) {
            log::info!("{name}: up to date, skipped");
            return Ok(false);
        }
        let started = now_unix();
        let outputs = body(self)?;
        self.manifest.record(&self.out, name, &key, started, &outputs)?;
        self.manifest.save(&self.out)?;
        Ok(true)
    }

    pub fn gen_data(&mut self) -> Result<()> {
        if self.config.data_dir.is_some() {
            bail!("data_dir is set in the config; gen-data would not be used");
        }
        let key = hash_json(&("gen", &self.config.synth));
        self.stage("gen-data", key, |run| {
            let scenario = generate_scenario(&run.config.synth, &run.config.asset)?;
            let dir = run.data_dir();
            let tmp = run.out.join(".data.tmp");
            if tmp.exists() {
                fs::remove_dir_all(&tmp)?;
            }
            fs::create_dir_all(&tmp)?;
            write_scenario(&tmp, &scenario)?;
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            fs::rename(&tmp, &dir)?;
            println!(
                "generated {} households x {} days in {}",
                scenario.households.len(),
                scenario.n_days(),
                dir.display()
            );
            Ok(DATA_FILES.iter().map(|f| dir.join(f)).collect())
        })?;
        Ok(())
    }

    fn data_paths(&self) -> Result<(ScenarioPaths, Vec<PathBuf>)> {
        let dir = self.data_dir();
        let files: Vec<PathBuf> = DATA_FILES.iter().map(|f| dir.join(f)).collect();
        if let Some(missing) = files.iter().find(|f| !f.exists()) {
            bail!("{} is missing; run gen-data first or set data_dir", missing.display());
        }
        Ok((ScenarioPaths::in_dir(&dir), files))
    }

    fn load_data(&self) -> Result<(Scenario, Vec<Exclusion>)> {
        let (paths, _) = self.data_paths()?;
        Ok(load_scenario(&paths, &self.config.asset)?)
    }

    /// Screens a data directory and writes exclusions.csv to the run directory.
    pub fn validate_data(&self, dir: &Path) -> Result<Vec<Exclusion>> {
        let (scenario, excluded) = load_scenario(&ScenarioPaths::in_dir(dir), &self.config.asset)?;
        let path = self.path(ingest::EXCLUSIONS_FILE);
        write_atomic(&path, |tmp| Ok(write_exclusions(tmp, &excluded)?))?;
        println!(
            "{}: {} households kept, {} excluded, {} days, {} regions",
            dir.display(),
            scenario.households.len(),
            excluded.len(),
            scenario.n_days(),
            scenario.regions.len()
        );
        Ok(excluded)
    }

    pub fn fit(&mut self) -> Result<()> {
        let (_, files) = self.data_paths()?;
        let key = hash_json(&(
            "fit",
            self.input_sums(&files)?,
            &self.config.asset,
            &self.config.fit,
            self.config.days,
        ));
        self.stage("fit", key, |run| {
            let (scenario, excluded) = run.load_data()?;
            let ctx = BillingContext::subsampled(&scenario, run.config.days);
            log::info!(
                "fitting {} households on {} of {} days",
                scenario.households.len(),
                ctx.days().len(),
                scenario.n_days()
            );
            let fitted = fit_population(&scenario.households, &ctx, &run.config.fit)?;
            let samples: Vec<_> = fitted.iter().map(|f| f.0.clone()).collect();
            let curves: Vec<_> = fitted.iter().map(|f| f.1.clone()).collect();
            let outputs = [
                run.path(ingest::EXCLUSIONS_FILE),
                run.path(SAMPLES_FILE),
                run.path(CURVES_FILE),
                run.path(DIAGNOSTICS_FILE),
            ];
            write_atomic(&outputs[0], |tmp| Ok(write_exclusions(tmp, &excluded)?))?;
            write_atomic(&outputs[1], |tmp| Ok(write_samples(tmp, &samples)?))?;
            write_atomic(&outputs[2], |tmp| Ok(write_curves(tmp, &curves)?))?;
            write_atomic(&outputs[3], |tmp| {
                let mut w = csv::Writer::from_path(tmp)?;
                w.write_record(["household_id", "r_squared", "max_repair", "strictly_concave"])?;
                for (_, c, d) in &fitted {
                    w.write_record([
                        c.household_id.clone(),
                        format!("{}", d.r_squared),
                        format!("{}", d.max_repair),
                        d.strictly_concave.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            println!("fitted {} savings curves ({} excluded)", curves.len(), excluded.len());
            Ok(outputs.to_vec())
        })?;
        Ok(())
    }

    fn curves(&self) -> Result<(Vec<SavingsCurve>, AdoptionOrder, PathBuf)> {
        let path = self.require(CURVES_FILE, "fit")?;
        let curves = read_curves(&path)?;
        if curves.is_empty() {
            bail!("{} holds no curves", path.display());
        }
        let order = build_order(&curves);
        Ok((curves, order, path))
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let mut t = Vec::new();
        if self.config.sweep.endpoints {
            t.push(0.0);
        }
        t.extend(default_t_grid(self.config.sweep.t_points));
        if self.config.sweep.endpoints {
            t.push(1.0);
        }
        t
    }

    pub fn p_grid(&self, order: &AdoptionOrder) -> Vec<f64> {
        if let Some(g) = &self.config.prices.p_grid {
            return g.clone();
        }
        let lo = order
            .normalized_savings
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .max(1e-9);
        let hi = order.normalized_savings.iter().copied().fold(0.0, f64::max).max(lo);
        let n = self.config.prices.p_points;
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn sweep(&mut self, t_grid: Option<Vec<f64>>) -> Result<()> {
        let (curves, order, input) = self.curves()?;
        let grid = t_grid.unwrap_or_else(|| self.t_grid());
        let key = hash_json(&("sweep", self.input_sums(&[input])?, &grid));
        self.stage("sweep", key, |run| {
            let table = sweep_adoption(&order, &curves, &grid)?;
            let path = run.path(SWEEP_FILE);
            write_atomic(&path, |tmp| Ok(write_sweep(tmp, &table)?))?;
            println!("swept {} adoption levels", table.rows.len());
            Ok(vec![path])
        })?;
        Ok(())
    }

    pub fn clear(&mut self, t: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            bail!("adoption rate {t} must lie in [0, 1]");
        }
        let (curves, order, input) = self.curves()?;
        let key = hash_json(&("clear", self.input_sums(&[input])?, t));
        self.stage("clear", key, |run| {
            let k = order.owner_count(t);
            let eq = clear_market(&curves, &order.owners(k));
            let outputs = [run.path(EQUILIBRIUM_FILE), run.path(EQUILIBRIUM_SUMMARY_FILE)];
            write_atomic(&outputs[0], |tmp| Ok(write_equilibrium(tmp, &curves, &eq)?))?;
            write_atomic(&outputs[1], |tmp| Ok(write_equilibrium_summary(tmp, &eq)?))?;
            match eq.clearing_price {
                Some(r) => println!("t = {t}: {k} owners, rent {r:.4}, volume {:.4} kW", eq.volume),
                None => println!("t = {t}: {k} owners, one-sided market"),
            }
            Ok(outputs.to_vec())
        })?;
        Ok(())
    }

    fn long_run_outcomes(
        order: &AdoptionOrder,
        curves: &[SavingsCurve],
        prices: &[f64],
    ) -> Result<Vec<LongRunOutcome>> {
        prices
            .par_iter()
            .map(|&p| Ok(long_run_adoption(order, curves, p)?))
            .collect()
    }

    pub fn longrun(&mut self, prices: Option<Vec<f64>>) -> Result<()> {
        let (curves, order, input) = self.curves()?;
        let prices = prices.unwrap_or_else(|| self.p_grid(&order));
        let key = hash_json(&("longrun", self.input_sums(&[input])?, &prices));
        self.stage("longrun", key, |run| {
            let outcomes = Self::long_run_outcomes(&order, &curves, &prices)?;
            let path = run.path(LONGRUN_FILE);
            write_atomic(&path, |tmp| write_longrun(tmp, &outcomes))?;
            println!("long-run adoption at {} prices", outcomes.len());
            Ok(vec![path])
        })?;
        Ok(())
    }

    pub fn subsidy(&mut self, prices: Option<Vec<f64>>) -> Result<()> {
        let (curves, order, input) = self.curves()?;
        let sweep = self.require(SWEEP_FILE, "sweep")?;
        let prices = prices.unwrap_or_else(|| self.p_grid(&order));
        let key = hash_json(&("subsidy", self.input_sums(&[input, sweep.clone()])?, &prices));
        self.stage("subsidy", key, |run| {
            let table = read_sweep(&sweep)?;
            let outcomes = Self::long_run_outcomes(&order, &curves, &prices)?;
            let path = run.path(SUBSIDY_FILE);
            write_atomic(&path, |tmp| {
                let mut w = csv::Writer::from_path(tmp)?;
                w.write_record(["p", "delta_Q", "subsidy", "no_increase"])?;
                for lr in &outcomes {
                    let s = equivalent_subsidy(&table, &order, lr);
                    w.write_record([
                        format!("{}", lr.p),
                        format!("{}", s.delta_quantity),
                        format!("{}", s.subsidy),
                        s.no_increase.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            })?;
            println!("equivalent subsidy at {} prices", outcomes.len());
            Ok(vec![path])
        })?;
        Ok(())
    }

    pub fn stakeholders(&mut self, prices: Option<Vec<f64>>) -> Result<()> {
        let (curves, order, input) = self.curves()?;
        let samples_path = self.require(SAMPLES_FILE, "fit")?;
        let prices = prices.unwrap_or_else(|| self.p_grid(&order));
        let key = hash_json(&(
            "stakeholders",
            self.input_sums(&[input, samples_path.clone()])?,
            &prices,
        ));
        self.stage("stakeholders", key, |run| {
            let billed = billed_sales_curves(&read_samples(&samples_path)?)?;
            let points = regime_boundary(&order, &curves, &billed, &prices)?;
            let path = run.path(STAKEHOLDERS_FILE);
            write_atomic(&path, |tmp| Ok(write_stakeholders(tmp, &points)?))?;
            println!("stakeholder regime at {} prices", points.len());
            Ok(vec![path])
        })?;
        Ok(())
    }

    pub fn localness(&mut self, t_grid: Option<Vec<f64>>) -> Result<()> {
        let (curves, order, input) = self.curves()?;
        let (_, files) = self.data_paths()?;
        let ts = t_grid.unwrap_or_else(|| self.config.localness.t.clone());
        let mut inputs = vec![input];
        inputs.extend(files);
        let key = hash_json(&(
            "localness",
            self.input_sums(&inputs)?,
            &ts,
            &self.config.localness.metric,
        ));
        self.stage("localness", key, |run| {
            let (scenario, _) = run.load_data()?;
            let map: HashMap<String, String> = scenario
                .households
                .iter()
                .map(|h| (h.id.clone(), h.region_id.clone()))
                .collect();
            let region_of = region_index(&curves, &map, &scenario.regions)?;
            let dist = distance_matrix(&scenario.regions, run.config.localness.metric)?;
            let results = ts
                .par_iter()
                .map(|&t| {
                    let eq = clear_market(&curves, &order.owners(order.owner_count(t)));
                    Ok(analyze(t, &eq, &curves, &region_of, &dist)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut outputs = vec![run.path(LOCALNESS_FILE)];
            let rows: Vec<_> = results.iter().map(|r| r.0.clone()).collect();
            write_atomic(&outputs[0], |tmp| Ok(write_localness(tmp, &rows)?))?;
            for (row, flow) in &results {
                let path = run.path(&flows_file(row.t));
                write_atomic(&path, |tmp| Ok(write_flows(tmp, &scenario.regions, flow)?))?;
                outputs.push(path);
            }
            println!("localness at {} adoption levels", rows.len());
            Ok(outputs)
        })?;
        Ok(())
    }

    /// Every stage in order.
    pub fn run_all(&mut self) -> Result<()> {
        if self.config.data_dir.is_none() {
            self.gen_data()?;
        }
        self.fit()?;
        self.sweep(None)?;
        self.longrun(None)?;
        self.subsidy(None)?;
        self.stakeholders(None)?;
        self.localness(None)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct LongRunRow {
    p: f64,
    short_run_rate: f64,
    long_run_rate: f64,
    short_run_quantity: f64,
    long_run_quantity: f64,
    #[serde(rename = "delta_Q")]
    delta_q: f64,
    price_at_short_run: f64,
    price_at_long_run: f64,
    price_one_before: f64,
    contraction: bool,
    saturated: bool,
}

fn write_longrun(path: &Path, outcomes: &[LongRunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for lr in outcomes {
        w.serialize(LongRunRow {
            p: lr.p,
            short_run_rate: lr.short_run_rate,
            long_run_rate: lr.long_run_rate,
            short_run_quantity: lr.short_run_quantity,
            long_run_quantity: lr.long_run_quantity,
            delta_q: lr.delta_quantity(),
            price_at_short_run: lr.price_at_short_run,
            price_at_long_run: lr.price_at_long_run,
            price_one_before: lr.price_one_before,
            contraction: lr.contraction,
            saturated: lr.saturated,
        })?;
    }
    w.flush()?;
    Ok(())
}
