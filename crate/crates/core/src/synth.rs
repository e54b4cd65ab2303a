//! Reproducible synthetic scenarios.
//!
//! Stands in for metered data: households get a base load, a household-
//! specific evening peak bump and a daytime factor, all with a small positive
//! floor. Tariffs are a two-level time-of-use buy price and a sell-back price
//! kept strictly below the off-peak buy price. Irradiance is a half-sine over
//! the daylight window with a random daily clearness factor.
//!
//! Draws come from `ChaCha8Rng`, which is portable across platforms, in a
//! fixed order, so a seed pins the scenario bit for bit.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    AssetSpec, DayProfile, HourlyMatrix, HouseholdRecord, IrradianceSeries, Region, Scenario, TariffSet, HOURS,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadShape {
    /// Range of the per-household base load, kW.
    pub base_load_kw: [f64; 2],
    /// Range of the multiplier applied inside the peak window.
    pub peak_multiplier: [f64; 2],
    /// `[start, end)` hours of the consumption peak.
    pub peak_window: [usize; 2],
    /// Range of the multiplier applied to mid-day hours (9-16).
    pub daytime_factor: [f64; 2],
}

impl Default for LoadShape {
    fn default() -> Self {
        LoadShape {
            base_load_kw: [0.3, 0.9],
            peak_multiplier: [1.2, 4.0],
            peak_window: [16, 21],
            daytime_factor: [0.6, 1.4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TouParams {
    pub off_peak_price: f64,
    pub peak_price: f64,
    pub peak_window: [usize; 2],
}

impl Default for TouParams {
    fn default() -> Self {
        TouParams {
            off_peak_price: 0.22,
            peak_price: 0.48,
            peak_window: [16, 21],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SellParams {
    pub mean: f64,
    /// Daily swing around the mean; the maximum sell price is `mean + amplitude`.
    pub amplitude: f64,
}

impl Default for SellParams {
    fn default() -> Self {
        SellParams {
            mean: 0.04,
            amplitude: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrradianceParams {
    /// `[start, end)` hours with nonzero output.
    pub daylight: [usize; 2],
    /// Clear-sky peak hourly output, kWh per kW.
    pub peak: f64,
}

impl Default for IrradianceParams {
    fn default() -> Self {
        IrradianceParams {
            daylight: [6, 19],
            peak: 0.85,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionLayout {
    pub center_lat: f64,
    pub center_lon: f64,
    /// Region centers are drawn uniformly within this many degrees.
    pub spread_deg: f64,
    /// Per-region scaling of the peak multiplier is drawn from `1 +- peak_bias`.
    pub peak_bias: f64,
}

impl Default for RegionLayout {
    fn default() -> Self {
        RegionLayout {
            center_lat: 36.78,
            center_lon: -119.79,
            spread_deg: 0.08,
            peak_bias: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_households: usize,
    pub n_days: usize,
    pub n_regions: usize,
    pub rng_seed: u64,
    pub load: LoadShape,
    pub tou: TouParams,
    pub sell: SellParams,
    pub irradiance: IrradianceParams,
    pub regions: RegionLayout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_households: 200,
            n_days: 30,
            n_regions: 8,
            rng_seed: 42,
            load: LoadShape::default(),
            tou: TouParams::default(),
            sell: SellParams::default(),
            irradiance: IrradianceParams::default(),
            regions: RegionLayout::default(),
        }
    }
}

fn check_range(field: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0] >= min && r[1] >= r[0] && r[1].is_finite()) {
        return Err(Error::validation(
            "synth config",
            field,
            format!("range {:?} must satisfy {min} <= lo <= hi", r),
        ));
    }
    Ok(())
}

fn check_window(field: &str, w: [usize; 2]) -> Result<()> {
    if !(w[0] < w[1] && w[1] <= HOURS) {
        return Err(Error::validation(
            "synth config",
            field,
            format!("window {:?} must satisfy start < end <= 24", w),
        ));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_households", self.n_households),
            ("n_days", self.n_days),
            ("n_regions", self.n_regions),
        ] {
            if n == 0 {
                return Err(Error::validation("synth config", name, "must be at least 1"));
            }
        }
        check_range("load.base_load_kw", self.load.base_load_kw, f64::MIN_POSITIVE)?;
        check_range("load.peak_multiplier", self.load.peak_multiplier, 0.0)?;
        check_range("load.daytime_factor", self.load.daytime_factor, 0.0)?;
        check_window("load.peak_window", self.load.peak_window)?;
        check_window("tou.peak_window", self.tou.peak_window)?;
        check_window("irradiance.daylight", self.irradiance.daylight)?;
        let max_sell = self.sell.mean + self.sell.amplitude;
        if !(self.sell.amplitude >= 0.0 && self.sell.mean - self.sell.amplitude >= 0.0) {
            return Err(Error::validation(
                "synth config",
                "sell",
                "need 0 <= amplitude <= mean so prices stay nonnegative",
            ));
        }
        if !(self.tou.off_peak_price > max_sell) {
            return Err(Error::validation(
                "synth config",
                "tou.off_peak_price",
                format!(
                    "{} must exceed the maximum sell price {max_sell}",
                    self.tou.off_peak_price
                ),
            ));
        }
        if !(self.tou.peak_price >= self.tou.off_peak_price) {
            return Err(Error::validation(
                "synth config",
                "tou.peak_price",
                "must be at least the off-peak price",
            ));
        }
        if !(self.irradiance.peak > 0.0) {
            return Err(Error::validation("synth config", "irradiance.peak", "must be positive"));
        }
        if !(self.regions.spread_deg >= 0.0 && (0.0..1.0).contains(&self.regions.peak_bias)) {
            return Err(Error::validation(
                "synth config",
                "regions",
                "need spread_deg >= 0 and 0 <= peak_bias < 1",
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn in_window(h: usize, w: [usize; 2]) -> bool {
    (w[0]..w[1]).contains(&h)
}

/// Builds a scenario from `config`; `asset` supplies the inverter efficiency
/// for net-zero sizing and is stored on the scenario.
pub fn generate_scenario(config: &SynthConfig, asset: &AssetSpec) -> Result<Scenario> {
    config.validate()?;
    asset.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let layout = &config.regions;
    let mut regions = Vec::with_capacity(config.n_regions);
    let mut region_bias = Vec::with_capacity(config.n_regions);
    for r in 0..config.n_regions {
        let lat = layout.center_lat + uniform(&mut rng, [-layout.spread_deg, layout.spread_deg]);
        let lon = layout.center_lon + uniform(&mut rng, [-layout.spread_deg, layout.spread_deg]);
        regions.push(Region {
            id: format!("Z{r:02}"),
            lat,
            lon,
        });
        region_bias.push(uniform(&mut rng, [1.0 - layout.peak_bias, 1.0 + layout.peak_bias]));
    }

    let dl = config.irradiance.daylight;
    let span = (dl[1] - dl[0]) as f64;
    let irradiance: Vec<DayProfile> = (0..config.n_days)
        .map(|_| {
            let clearness = uniform(&mut rng, [0.55, 1.0]);
            std::array::from_fn(|h| {
                if in_window(h, dl) {
                    config.irradiance.peak * clearness * (PI * (h as f64 + 0.5 - dl[0] as f64) / span).sin()
                } else {
                    0.0
                }
            })
        })
        .collect();
    let irradiance = IrradianceSeries {
        values: HourlyMatrix::new(irradiance),
    };

    let tou = &config.tou;
    let buy_day: DayProfile = std::array::from_fn(|h| {
        if in_window(h, tou.peak_window) {
            tou.peak_price
        } else {
            tou.off_peak_price
        }
    });
    let sell: Vec<DayProfile> = (0..config.n_days)
        .map(|_| {
            let swing = uniform(&mut rng, [0.5, 1.0]);
            std::array::from_fn(|h| {
                // wholesale-like shape peaking in the early evening
                let shape = (2.0 * PI * (h as f64 - 18.0) / 24.0).cos();
                (config.sell.mean + config.sell.amplitude * swing * shape).max(0.0)
            })
        })
        .collect();
    let tariff = TariffSet {
        buy: HourlyMatrix::new(vec![buy_day; config.n_days]),
        sell: HourlyMatrix::new(sell),
    };

    let mut slots: Vec<usize> = (0..config.n_households).collect();
    slots.shuffle(&mut rng);
    let shape = &config.load;
    let mut households = Vec::with_capacity(config.n_households);
    for (i, &slot) in slots.iter().enumerate() {
        let region = slot % config.n_regions;
        let base = uniform(&mut rng, shape.base_load_kw);
        let peak = uniform(&mut rng, shape.peak_multiplier) * region_bias[region];
        let daytime = uniform(&mut rng, shape.daytime_factor);
        let profile: DayProfile = std::array::from_fn(|h| {
            let mut f = if h < 6 { 0.8 } else { 1.0 };
            if (9..16).contains(&h) {
                f *= daytime;
            }
            if in_window(h, shape.peak_window) {
                f *= peak.max(0.0);
            }
            f
        });
        let load: Vec<DayProfile> = (0..config.n_days)
            .map(|_| {
                let day_factor = uniform(&mut rng, [0.85, 1.15]);
                std::array::from_fn(|h| {
                    let jitter = uniform(&mut rng, [0.9, 1.1]);
                    let floor = uniform(&mut rng, [0.02, 0.05]);
                    base * profile[h] * day_factor * jitter + floor
                })
            })
            .collect();
        households.push(HouseholdRecord::new(
            format!("H{i:04}"),
            regions[region].id.clone(),
            HourlyMatrix::new(load),
            &irradiance,
            asset.eta_i,
        )?);
    }

    let scenario = Scenario {
        households,
        tariff,
        irradiance,
        asset: asset.clone(),
        regions,
    };
    scenario.validate()?;
    Ok(scenario)
}
