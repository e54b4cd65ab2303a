//! Run configuration read from a TOML file. Every section is optional.
//!
//! ```toml
//! days = 0                 # representative days per household, 0 = all
//! # data_dir = "my_data"   # ingest CSVs instead of generating them
//!
//! [synth]
//! n_households = 200
//! n_days = 30
//! rng_seed = 42
//!
//! [asset]
//! eta_i = 0.96
//!
//! [fit]
//! n_samples = 30
//!
//! [sweep]
//! t_points = 200
//!
//! [prices]
//! p_points = 40            # or p_grid = [200.0, 250.0, 300.0]
//!
//! [localness]
//! metric = "great_circle"
//! t = [0.1, 0.25, 0.45, 0.6, 0.8]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use p2p_der::domain::AssetSpec;
use p2p_der::localness::DistanceMetric;
use p2p_der::savings::FitConfig;
use p2p_der::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Interior adoption rates on `[0.1%, 99.9%]`, denser near the ends.
    pub t_points: usize,
    /// Also evaluate `t = 0` and `t = 1`.
    pub endpoints: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            t_points: 200,
            endpoints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceConfig {
    /// Explicit asset prices, $/yr/kW.
    pub p_grid: Option<Vec<f64>>,
    /// Without `p_grid`: this many prices spread evenly between the lowest
    /// and highest normalized savings.
    pub p_points: usize,
}

impl Default for PriceConfig {
    fn default() -> Self {
        PriceConfig {
            p_grid: None,
            p_points: 40,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalnessConfig {
    pub metric: DistanceMetric,
    pub t: Vec<f64>,
}

impl Default for LocalnessConfig {
    fn default() -> Self {
        LocalnessConfig {
            metric: DistanceMetric::GreatCircle,
            t: vec![0.1, 0.25, 0.45, 0.6, 0.8],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub days: usize,
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub asset: AssetSpec,
    pub fit: FitConfig,
    pub sweep: SweepConfig,
    pub prices: PriceConfig,
    pub localness: LocalnessConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.asset.validate()?;
        self.fit.validate()?;
        if self.sweep.t_points == 0 {
            bail!("sweep.t_points must be at least 1");
        }
        if let Some(g) = &self.prices.p_grid {
            if g.is_empty() || g.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                bail!("prices.p_grid must hold positive prices");
            }
        } else if self.prices.p_points == 0 {
            bail!("prices.p_points must be at least 1");
        }
        if self.localness.t.iter().any(|t| !(0.0..=1.0).contains(t)) {
            bail!("localness.t must lie in [0, 1]");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
