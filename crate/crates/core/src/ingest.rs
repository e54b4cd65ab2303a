//! CSV reading and writing of scenarios.
//!
//! Layout of a scenario directory:
//!
//! | file              | columns                                  |
//! |-------------------|------------------------------------------|
//! | `loads.csv`       | `household_id,region_id,day,h0..h23`    |
//! | `irradiance.csv`  | `day,h0..h23`                           |
//! | `tariff_buy.csv`  | `day,h0..h23`                           |
//! | `tariff_sell.csv` | `day,h0..h23`                           |
//! | `regions.csv`     | `region_id,lat,lon`                      |
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::domain::{
    AssetSpec, DayProfile, HourlyMatrix, HouseholdRecord, IrradianceSeries, Region, Scenario, TariffSet, HOURS,
};
use crate::error::{Error, Result};

pub const LOADS_FILE: &str = "loads.csv";
pub const IRRADIANCE_FILE: &str = "irradiance.csv";
pub const TARIFF_BUY_FILE: &str = "tariff_buy.csv";
pub const TARIFF_SELL_FILE: &str = "tariff_sell.csv";
pub const REGIONS_FILE: &str = "regions.csv";
pub const EXCLUSIONS_FILE: &str = "exclusions.csv";

/// Households with more than this share of exactly-zero readings are dropped.
pub const MAX_ZERO_FRACTION: f64 = 0.5;
/// Households with mean hourly consumption below this (kWh) are dropped.
pub const MIN_MEAN_LOAD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioPaths {
    pub loads: PathBuf,
    pub irradiance: PathBuf,
    pub tariff_buy: PathBuf,
    pub tariff_sell: PathBuf,
    pub regions: PathBuf,
}

impl ScenarioPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        ScenarioPaths {
            loads: dir.join(LOADS_FILE),
            irradiance: dir.join(IRRADIANCE_FILE),
            tariff_buy: dir.join(TARIFF_BUY_FILE),
            tariff_sell: dir.join(TARIFF_SELL_FILE),
            regions: dir.join(REGIONS_FILE),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExclusionReason {
    ZeroReadings,
    LowConsumption,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::ZeroReadings => "zero readings",
            ExclusionReason::LowConsumption => "low consumption",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exclusion {
    pub household_id: String,
    pub reason: ExclusionReason,
}

/// Data-quality screen. Zero readings are checked first.
pub fn screen_load(load: &HourlyMatrix) -> Option<ExclusionReason> {
    let n = (load.n_days() * HOURS) as f64;
    if n == 0.0 {
        return Some(ExclusionReason::LowConsumption);
    }
    let zeros = load.iter_values().filter(|&v| v == 0.0).count() as f64;
    if zeros / n > MAX_ZERO_FRACTION {
        return Some(ExclusionReason::ZeroReadings);
    }
    if load.total() / n < MIN_MEAN_LOAD {
        return Some(ExclusionReason::LowConsumption);
    }
    None
}

fn hour_header() -> Vec<String> {
    (0..HOURS).map(|h| format!("h{h}")).collect()
}

fn parse_err(file: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| parse_err(path, 0, format!("cannot open: {e}")))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[String]) -> Result<()> {
    let got = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    if got.len() != expected.len() || got.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(parse_err(path, 1, format!("expected header `{}`", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("column `{name}`: cannot parse `{raw}`")))
}

fn hours(path: &Path, line: u64, rec: &csv::StringRecord, offset: usize) -> Result<DayProfile> {
    let mut out = [0.0; HOURS];
    for (h, v) in out.iter_mut().enumerate() {
        let x: f64 = field(path, line, rec, offset + h, &format!("h{h}"))?;
        if !x.is_finite() {
            return Err(parse_err(path, line, format!("column `h{h}` is not finite")));
        }
        *v = x;
    }
    Ok(out)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn gather_days(path: &Path, rows: BTreeMap<usize, DayProfile>, n_days: Option<usize>) -> Result<HourlyMatrix> {
    let n = n_days.unwrap_or(rows.len());
    if rows.len() != n || rows.keys().enumerate().any(|(i, &d)| i != d) {
        let missing = (0..n).find(|d| !rows.contains_key(d));
        return Err(parse_err(
            path,
            0,
            match missing {
                Some(d) => format!("day {d} is missing (expected days 0..{n})"),
                None => format!("expected exactly days 0..{n}"),
            },
        ));
    }
    Ok(HourlyMatrix::new(rows.into_values().collect()))
}

/// Reads a `day,h0..h23` file; days must cover `0..n` exactly once.
pub fn read_day_matrix(path: &Path) -> Result<HourlyMatrix> {
    let mut rdr = open(path)?;
    let mut header = vec!["day".to_string()];
    header.extend(hour_header());
    expect_header(path, &mut rdr, &header)?;
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        let day: usize = field(path, line, &rec, 0, "day")?;
        if rows.insert(day, hours(path, line, &rec, 1)?).is_some() {
            return Err(parse_err(path, line, format!("day {day} appears twice")));
        }
    }
    gather_days(path, rows, None)
}

pub fn read_regions(path: &Path) -> Result<Vec<Region>> {
    let mut rdr = open(path)?;
    expect_header(path, &mut rdr, &["region_id".into(), "lat".into(), "lon".into()])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        out.push(Region {
            id: rec.get(0).unwrap_or("").to_string(),
            lat: field(path, line, &rec, 1, "lat")?,
            lon: field(path, line, &rec, 2, "lon")?,
        });
    }
    Ok(out)
}

struct RawHousehold {
    region_id: String,
    days: BTreeMap<usize, DayProfile>,
    first_line: u64,
}

fn read_loads(path: &Path) -> Result<BTreeMap<String, RawHousehold>> {
    let mut rdr = open(path)?;
    let mut header = vec!["household_id".to_string(), "region_id".into(), "day".into()];
    header.extend(hour_header());
    expect_header(path, &mut rdr, &header)?;
    let mut out: BTreeMap<String, RawHousehold> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, "empty household_id"));
        }
        let region = rec.get(1).unwrap_or("").to_string();
        let day: usize = field(path, line, &rec, 2, "day")?;
        let profile = hours(path, line, &rec, 3)?;
        if let Some(h) = profile.iter().position(|&v| v < 0.0) {
            return Err(parse_err(
                path,
                line,
                format!("household {id}: negative load {} at day {day} hour {h}", profile[h]),
            ));
        }
        let entry = out.entry(id.clone()).or_insert_with(|| RawHousehold {
            region_id: region.clone(),
            days: BTreeMap::new(),
            first_line: line,
        });
        if entry.region_id != region {
            return Err(parse_err(
                path,
                line,
                format!("household {id}: region changes from {} to {region}", entry.region_id),
            ));
        }
        if entry.days.insert(day, profile).is_some() {
            return Err(parse_err(
                path,
                line,
                format!("household {id}: day {day} appears twice"),
            ));
        }
    }
    Ok(out)
}

/// Reads and validates a scenario. Households failing the data-quality
/// screen are dropped and reported; households come back ordered by id.
pub fn load_scenario(paths: &ScenarioPaths, asset: &AssetSpec) -> Result<(Scenario, Vec<Exclusion>)> {
    asset.validate()?;
    let irradiance = IrradianceSeries {
        values: read_day_matrix(&paths.irradiance)?,
    };
    let n_days = irradiance.values.n_days();
    let tariff = TariffSet {
        buy: read_day_matrix(&paths.tariff_buy)?,
        sell: read_day_matrix(&paths.tariff_sell)?,
    };
    let regions = read_regions(&paths.regions)?;
    let raw = read_loads(&paths.loads)?;

    let mut households = Vec::with_capacity(raw.len());
    let mut excluded = Vec::new();
    for (id, hh) in raw {
        let load = gather_days(&paths.loads, hh.days, Some(n_days)).map_err(|e| match e {
            Error::Parse { file, message, .. } => Error::Parse {
                file,
                line: hh.first_line,
                message: format!("household {id}: {message}"),
            },
            other => other,
        })?;
        if let Some(reason) = screen_load(&load) {
            log::info!("excluding household {id}: {reason}");
            excluded.push(Exclusion {
                household_id: id,
                reason,
            });
            continue;
        }
        households.push(HouseholdRecord::new(id, hh.region_id, load, &irradiance, asset.eta_i)?);
    }
    if households.is_empty() {
        return Err(Error::EmptyScenario);
    }
    let scenario = Scenario {
        households,
        tariff,
        irradiance,
        asset: asset.clone(),
        regions,
    };
    scenario.validate()?;
    Ok((scenario, excluded))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_day_matrix(path: &Path, m: &HourlyMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["day".to_string()];
    header.extend(hour_header());
    w.write_record(&header)?;
    for (d, day) in m.days().iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(day.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the five scenario files into `dir`, creating it if needed.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir)?;
    let paths = ScenarioPaths::in_dir(dir);
    write_day_matrix(&paths.irradiance, &scenario.irradiance.values)?;
    write_day_matrix(&paths.tariff_buy, &scenario.tariff.buy)?;
    write_day_matrix(&paths.tariff_sell, &scenario.tariff.sell)?;

    let mut w = csv::Writer::from_path(&paths.regions)?;
    w.write_record(["region_id", "lat", "lon"])?;
    for r in &scenario.regions {
        w.write_record([r.id.clone(), fmt_f64(r.lat), fmt_f64(r.lon)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.loads)?;
    let mut header = vec!["household_id".to_string(), "region_id".into(), "day".into()];
    header.extend(hour_header());
    w.write_record(&header)?;
    for hh in &scenario.households {
        for (d, day) in hh.load.days().iter().enumerate() {
            let mut row = vec![hh.id.clone(), hh.region_id.clone(), d.to_string()];
            row.extend(day.iter().map(|&v| fmt_f64(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_exclusions(path: &Path, excluded: &[Exclusion]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["household_id", "reason"])?;
    for e in excluded {
        w.write_record([e.household_id.clone(), e.reason.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn screen_order() {
        let mut days = vec![[0.0; HOURS]; 2];
        days[0][0] = 100.0;
        assert_eq!(
            screen_load(&HourlyMatrix::new(days)),
            Some(ExclusionReason::ZeroReadings)
        );
        assert_eq!(
            screen_load(&HourlyMatrix::constant(2, 0.05)),
            Some(ExclusionReason::LowConsumption)
        );
        assert_eq!(screen_load(&HourlyMatrix::constant(2, 0.5)), None);
    }

    #[test]
    fn reason_strings() {
        assert_eq!(ExclusionReason::ZeroReadings.to_string(), "zero readings");
        assert_eq!(ExclusionReason::LowConsumption.to_string(), "low consumption");
    }
}
