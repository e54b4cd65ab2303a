//! Shared domain types: assets, households, tariffs, irradiance and the
//! scenario container that ties them together.
//!
//! Everything is hourly, 24 slots per day. Energies are kWh, capacities kW of
//! PV (storage and converter ratings scale with PV capacity), prices $/kWh.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HOURS: usize = 24;

/// One day of hourly values.
pub type DayProfile = [f64; HOURS];

/// A `days x 24` matrix of hourly values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyMatrix {
    days: Vec<DayProfile>,
}

impl HourlyMatrix {
    pub fn new(days: Vec<DayProfile>) -> Self {
        HourlyMatrix { days }
    }

    pub fn constant(n_days: usize, value: f64) -> Self {
        HourlyMatrix {
            days: vec![[value; HOURS]; n_days],
        }
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn day(&self, d: usize) -> &DayProfile {
        &self.days[d]
    }

    pub fn days(&self) -> &[DayProfile] {
        &self.days
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.days.iter().flat_map(|d| d.iter().copied())
    }

    /// Sum in day-major, hour-minor order.
    pub fn total(&self) -> f64 {
        self.iter_values().sum()
    }

    /// Inner product with another matrix of the same shape, e.g. `L^T Q`.
    pub fn dot(&self, other: &HourlyMatrix) -> f64 {
        debug_assert_eq!(self.n_days(), other.n_days());
        self.days
            .iter()
            .zip(&other.days)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// Keep only the listed days, in the given order.
    pub fn select_days(&self, idx: &[usize]) -> HourlyMatrix {
        HourlyMatrix {
            days: idx.iter().map(|&d| self.days[d]).collect(),
        }
    }

    fn first_bad(&self, bad: impl Fn(f64) -> bool) -> Option<(usize, usize, f64)> {
        for (d, row) in self.days.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                if bad(v) {
                    return Some((d, h, v));
                }
            }
        }
        None
    }
}

/// Per-kW-of-PV asset parameters shared by every household.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetSpec {
    /// Storage energy per unit PV capacity (kWh/kW).
    pub alpha: f64,
    /// Max charging rate per unit PV capacity (kW/kW).
    pub u_charge_max: f64,
    /// Max discharging rate per unit PV capacity (kW/kW).
    pub u_discharge_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Hourly self-discharge retention.
    pub eta_s: f64,
    pub eta_i: f64,
    /// Initial state of charge as a fraction of capacity, reset every day.
    pub x0: f64,
    /// Require the end-of-day state of charge to be at least the initial one.
    /// Off by default; exists for sensitivity studies.
    pub hold_terminal_soc: bool,
}

impl Default for AssetSpec {
    /// alpha and the rate limits follow the reference 13.5 kWh / 5 kW battery
    /// scaled to 1 kWh per kW of PV. The efficiencies and x0 are artifact
    /// defaults, not measured values.
    fn default() -> Self {
        AssetSpec {
            alpha: 1.0,
            u_charge_max: 5.0 / 13.5,
            u_discharge_max: 5.0 / 13.5,
            eta_c: 0.95,
            eta_d: 0.95,
            eta_s: 0.9999,
            eta_i: 0.96,
            x0: 0.0,
            hold_terminal_soc: false,
        }
    }
}

impl AssetSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::validation("asset", name, format!("must lie in (0, 1], got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation("asset", name, format!("must be positive, got {v}")))
            }
        };
        unit("eta_c", self.eta_c)?;
        unit("eta_d", self.eta_d)?;
        unit("eta_s", self.eta_s)?;
        unit("eta_i", self.eta_i)?;
        positive("alpha", self.alpha)?;
        positive("u_charge_max", self.u_charge_max)?;
        positive("u_discharge_max", self.u_discharge_max)?;
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(Error::validation(
                "asset",
                "x0",
                format!("must lie in [0, 1], got {}", self.x0),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub id: String,
    pub region_id: String,
    /// Hourly consumption, kWh.
    pub load: HourlyMatrix,
    /// PV capacity whose delivered output matches total consumption, kW.
    pub net_zero_size: f64,
}

impl HouseholdRecord {
    /// Builds a record, deriving the net-zero size from the load.
    pub fn new(
        id: impl Into<String>,
        region_id: impl Into<String>,
        load: HourlyMatrix,
        irradiance: &IrradianceSeries,
        eta_i: f64,
    ) -> Result<Self> {
        let net_zero_size = compute_net_zero_size(&load, irradiance, eta_i)?;
        Ok(HouseholdRecord {
            id: id.into(),
            region_id: region_id.into(),
            load,
            net_zero_size,
        })
    }

    /// `L^T Q`, the bill with no asset.
    pub fn baseline_bill(&self, tariff: &TariffSet) -> f64 {
        self.load.dot(&tariff.buy)
    }
}

/// Shared hourly buy and sell-back prices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffSet {
    pub buy: HourlyMatrix,
    pub sell: HourlyMatrix,
}

impl TariffSet {
    pub fn validate(&self) -> Result<()> {
        if self.buy.n_days() != self.sell.n_days() {
            return Err(Error::validation(
                "tariff",
                "sell",
                format!("has {} days but buy has {}", self.sell.n_days(), self.buy.n_days()),
            ));
        }
        for (name, m) in [("buy", &self.buy), ("sell", &self.sell)] {
            if let Some((d, h, v)) = m.first_bad(|v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::validation(
                    "tariff",
                    name,
                    format!("negative or non-finite price {v} at day {d} hour {h}"),
                ));
            }
        }
        for (d, (b, s)) in self.buy.days().iter().zip(self.sell.days()).enumerate() {
            for h in 0..HOURS {
                if b[h] < s[h] {
                    return Err(Error::validation(
                        "tariff",
                        "sell",
                        format!("sell price {} exceeds buy price {} at day {d} hour {h}", s[h], b[h]),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Normalized PV output, kWh generated per kW installed per hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrradianceSeries {
    pub values: HourlyMatrix,
}

impl IrradianceSeries {
    pub fn validate(&self) -> Result<()> {
        if let Some((d, h, v)) = self.values.first_bad(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::validation(
                "irradiance",
                "values",
                format!("negative or non-finite value {v} at day {d} hour {h}"),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub households: Vec<HouseholdRecord>,
    pub tariff: TariffSet,
    pub irradiance: IrradianceSeries,
    pub asset: AssetSpec,
    pub regions: Vec<Region>,
}

impl Scenario {
    pub fn n_days(&self) -> usize {
        self.irradiance.values.n_days()
    }

    /// Checks every cross-field invariant; the error names the first
    /// offending household or field.
    pub fn validate(&self) -> Result<()> {
        self.asset.validate()?;
        self.tariff.validate()?;
        self.irradiance.validate()?;
        let days = self.n_days();
        if self.tariff.buy.n_days() != days {
            return Err(Error::validation(
                "tariff",
                "buy",
                format!("has {} days but irradiance has {days}", self.tariff.buy.n_days()),
            ));
        }
        let mut region_ids = HashSet::new();
        for r in &self.regions {
            if !region_ids.insert(r.id.as_str()) {
                return Err(Error::validation(format!("region {}", r.id), "id", "is duplicated"));
            }
            if !(-90.0..=90.0).contains(&r.lat) || !(-180.0..=180.0).contains(&r.lon) {
                return Err(Error::validation(
                    format!("region {}", r.id),
                    "lat/lon",
                    format!("({}, {}) is not a valid coordinate", r.lat, r.lon),
                ));
            }
        }
        let mut ids = HashSet::new();
        for hh in &self.households {
            let subject = format!("household {}", hh.id);
            if !ids.insert(hh.id.as_str()) {
                return Err(Error::validation(subject, "id", "is duplicated"));
            }
            if !region_ids.contains(hh.region_id.as_str()) {
                return Err(Error::validation(
                    subject,
                    "region_id",
                    format!("`{}` is not a known region", hh.region_id),
                ));
            }
            if hh.load.n_days() != days {
                return Err(Error::validation(
                    subject,
                    "load",
                    format!("has {} days, expected {days}", hh.load.n_days()),
                ));
            }
            if let Some((d, h, v)) = hh.load.first_bad(|v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::validation(
                    subject,
                    "load",
                    format!("entry {v} at day {d} hour {h} is negative or non-finite"),
                ));
            }
            let expected = compute_net_zero_size(&hh.load, &self.irradiance, self.asset.eta_i)?;
            if !(hh.net_zero_size > 0.0) {
                return Err(Error::validation(
                    subject,
                    "net_zero_size",
                    format!("must be positive, got {}", hh.net_zero_size),
                ));
            }
            if (hh.net_zero_size - expected).abs() > 1e-9 * expected {
                return Err(Error::validation(
                    subject,
                    "net_zero_size",
                    format!("is {} but the load implies {expected}", hh.net_zero_size),
                ));
            }
        }
        Ok(())
    }

    pub fn household(&self, id: &str) -> Option<&HouseholdRecord> {
        self.households.iter().find(|h| h.id == id)
    }
}

/// Net-zero PV size: total consumption over total delivered output per kW.
pub fn compute_net_zero_size(load: &HourlyMatrix, irradiance: &IrradianceSeries, eta_i: f64) -> Result<f64> {
    let sun = irradiance.values.total();
    if !(sun > 0.0) {
        return Err(Error::domain("total irradiance must be positive"));
    }
    if !(eta_i > 0.0) {
        return Err(Error::domain(format!(
            "inverter efficiency must be positive, got {eta_i}"
        )));
    }
    Ok(load.total() / (eta_i * sun))
}
