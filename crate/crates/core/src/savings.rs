//! Household savings functions `f(y) = b_BL - b(y)`.
//!
//! Savings are sampled by solving the annual dispatch at `y = 0` and at
//! `n_samples` points over `[0.01 ybar, ybar]`, then projected onto the
//! monotone concave piecewise-linear family: slopes are made nonincreasing by
//! a weighted antitonic regression (which preserves `f(ybar)`), negative
//! slopes are clamped, and finally slopes are made strictly decreasing by a
//! small `epsilon` step so that `y*(r)` is single-valued off the knot slopes.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{annual_bill, BillingContext};
use crate::domain::HouseholdRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Sample count over `[0.01 ybar, ybar]`; `y = 0` is added on top.
    pub n_samples: usize,
    pub spacing: Spacing,
    /// Minimum slope drop between consecutive segments, $/yr/kW per segment.
    pub epsilon: f64,
    pub min_r_squared: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_samples: 30,
            spacing: Spacing::Linear,
            epsilon: 1e-6,
            min_r_squared: 0.999,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::validation("fit config", "n_samples", "must be at least 2"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("fit config", "epsilon", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.min_r_squared) {
            return Err(Error::validation("fit config", "min_r_squared", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `0` followed by `n` points over `[0.01 ybar, ybar]`; the last point is
/// exactly `ybar`.
pub fn sample_grid(ybar: f64, n: usize, spacing: Spacing) -> Vec<f64> {
    let lo = 0.01 * ybar;
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 0..n {
        let t = if n == 1 { 1.0 } else { i as f64 / (n - 1) as f64 };
        out.push(match spacing {
            Spacing::Linear => lo + t * (ybar - lo),
            Spacing::Geometric => lo * 100f64.powf(t),
        });
    }
    out[n] = ybar;
    out
}

/// Raw annual bill samples for one household.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseholdSamples {
    pub household_id: String,
    pub y: Vec<f64>,
    pub bill: Vec<f64>,
    pub purchases: Vec<f64>,
    pub baseline_bill: f64,
}

impl HouseholdSamples {
    /// `b_BL - b(y)` at each sample; the first entry is exactly 0.
    pub fn savings(&self) -> Vec<f64> {
        let mut f: Vec<f64> = self.bill.iter().map(|b| self.baseline_bill - b).collect();
        f[0] = 0.0;
        f
    }
}

pub fn sample_household(
    household: &HouseholdRecord,
    ctx: &BillingContext<'_>,
    config: &FitConfig,
) -> Result<HouseholdSamples> {
    config.validate()?;
    let y = sample_grid(household.net_zero_size, config.n_samples, config.spacing);
    let mut bill = Vec::with_capacity(y.len());
    let mut purchases = Vec::with_capacity(y.len());
    for &yk in &y {
        let b = annual_bill(household, ctx, yk)?;
        bill.push(b.bill);
        purchases.push(b.purchases);
    }
    Ok(HouseholdSamples {
        household_id: household.id.clone(),
        y,
        bill,
        purchases,
        baseline_bill: ctx.baseline_bill(household),
    })
}

/// How far the projection moved the samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitDiagnostics {
    pub r_squared: f64,
    /// Largest absolute gap between fitted values and samples at the knots.
    pub max_repair: f64,
    /// False when the strictness step was skipped because it would have
    /// pushed the terminal slope below zero.
    pub strictly_concave: bool,
}

/// Monotone concave piecewise-linear savings curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SavingsCurve {
    pub household_id: String,
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub normalized_savings: f64,
}

/// Weighted antitonic regression: the nonincreasing sequence closest to `x`
/// in weighted least squares. Preserves the weighted sum.
fn antitonic(x: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(x.len());
    for (&v, &wt) in x.iter().zip(w) {
        let mut cur = (v, wt, 1usize);
        while let Some(&(pv, pw, pn)) = blocks.last() {
            if pv >= cur.0 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.1;
            cur = ((pv * pw + cur.0 * cur.1) / tw, tw, pn + cur.2);
        }
        blocks.push(cur);
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat_n(v, n))
        .collect()
}

fn r_squared(fit: &[f64], samples: &[f64]) -> f64 {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let ss_tot: f64 = samples.iter().map(|s| (s - mean).powi(2)).sum();
    let ss_res: f64 = fit.iter().zip(samples).map(|(f, s)| (f - s).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

impl SavingsCurve {
    /// Projects `(y, f)` samples onto the monotone concave family.
    /// `y` must start at 0 and be strictly increasing.
    pub fn fit(household_id: &str, y: &[f64], f: &[f64], config: &FitConfig) -> Result<(SavingsCurve, FitDiagnostics)> {
        let fit_err = |message: String| Error::Fit {
            household: household_id.to_string(),
            message,
        };
        if y.len() < 2 || y.len() != f.len() {
            return Err(fit_err(format!(
                "need matching y/f of length >= 2, got {} and {}",
                y.len(),
                f.len()
            )));
        }
        if y[0] != 0.0 || y.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(fit_err("sample points must start at 0 and strictly increase".into()));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(fit_err("non-finite savings sample".into()));
        }
        let widths: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
        let raw: Vec<f64> = f.windows(2).zip(&widths).map(|(v, dy)| (v[1] - v[0]) / dy).collect();
        let mut slopes = antitonic(&raw, &widths);
        let mut clamped = 0.0;
        for (s, dy) in slopes.iter_mut().zip(&widths) {
            if *s < 0.0 {
                clamped += -*s * dy;
                *s = 0.0;
            }
        }
        if clamped > 0.0 {
            log::debug!("household {household_id}: clamped {clamped:.3e} $/yr of decreasing savings");
        }

        let mut strictly_concave = true;
        if config.epsilon > 0.0 && slopes.len() > 1 {
            let mut stair = slopes.clone();
            for k in (0..stair.len() - 1).rev() {
                stair[k] = stair[k].max(stair[k + 1] + config.epsilon);
            }
            let added: f64 = stair
                .iter()
                .zip(&slopes)
                .zip(&widths)
                .map(|((a, b), dy)| (a - b) * dy)
                .sum();
            let shift = added / y[y.len() - 1];
            if stair[stair.len() - 1] - shift >= 0.0 {
                slopes = stair.into_iter().map(|s| s - shift).collect();
            } else {
                strictly_concave = false;
            }
        }

        let mut values = Vec::with_capacity(y.len());
        values.push(0.0);
        for (s, dy) in slopes.iter().zip(&widths) {
            let last = values[values.len() - 1];
            values.push(last + s * dy);
        }
        let max_repair = values.iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = f[f.len() - 1].abs();
        if max_repair > 0.01 * scale + 1e-6 {
            return Err(fit_err(format!(
                "samples are not monotone concave: projection moved a value by {max_repair:.4e} (f(ybar) = {scale:.4e})"
            )));
        }
        if max_repair > 1e-9 * scale.max(1.0) {
            log::info!("household {household_id}: repaired samples by up to {max_repair:.3e} $/yr");
        }
        let r2 = r_squared(&values, f);
        if r2 < config.min_r_squared {
            return Err(fit_err(format!("fit R^2 {r2:.6} below {}", config.min_r_squared)));
        }
        let ybar = y[y.len() - 1];
        let curve = SavingsCurve {
            household_id: household_id.to_string(),
            normalized_savings: values[values.len() - 1] / ybar,
            knots: y.to_vec(),
            values,
            slopes,
        };
        Ok((
            curve,
            FitDiagnostics {
                r_squared: r2,
                max_repair,
                strictly_concave,
            },
        ))
    }

    /// Rebuilds a curve from stored knots, values and slopes.
    pub fn from_parts(household_id: String, knots: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        let bad = |m: &str| Error::Fit {
            household: household_id.clone(),
            message: m.to_string(),
        };
        if knots.len() < 2 || values.len() != knots.len() || slopes.len() + 1 != knots.len() {
            return Err(bad("inconsistent knot/value/slope lengths"));
        }
        if knots[0] != 0.0 || values[0] != 0.0 {
            return Err(bad("curve must start at (0, 0)"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("knots must strictly increase"));
        }
        if slopes.windows(2).any(|w| w[1] > w[0]) || slopes.iter().any(|&s| s < 0.0) {
            return Err(bad("slopes must be nonnegative and nonincreasing"));
        }
        let ybar = knots[knots.len() - 1];
        Ok(SavingsCurve {
            normalized_savings: values[values.len() - 1] / ybar,
            household_id,
            knots,
            values,
            slopes,
        })
    }

    pub fn net_zero_size(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// `f(ybar)`.
    pub fn full_savings(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn initial_slope(&self) -> f64 {
        self.slopes[0]
    }

    pub fn terminal_slope(&self) -> f64 {
        self.slopes[self.slopes.len() - 1]
    }

    fn check_domain(&self, y: f64) -> Result<()> {
        if !(0.0..=self.net_zero_size()).contains(&y) {
            return Err(Error::domain(format!(
                "y = {y} outside [0, {}] for household {}",
                self.net_zero_size(),
                self.household_id
            )));
        }
        Ok(())
    }

    /// Segment containing `y`: the last `k` with `knots[k] <= y`, capped so
    /// that it indexes a slope.
    fn segment(&self, y: f64) -> usize {
        let k = self.knots.partition_point(|&x| x <= y);
        k.saturating_sub(1).min(self.slopes.len() - 1)
    }

    pub fn eval(&self, y: f64) -> Result<f64> {
        self.check_domain(y)?;
        Ok(self.value_at(y))
    }

    /// [`eval`](Self::eval) without the domain check; `y` is clamped.
    pub fn value_at(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, self.net_zero_size());
        let k = self.segment(y);
        if y == self.knots[k + 1] {
            return self.values[k + 1];
        }
        self.values[k] + self.slopes[k] * (y - self.knots[k])
    }

    /// Supergradient interval `(left, right)` at `y`. At the endpoints the
    /// missing side takes the adjacent segment's slope.
    pub fn deriv_range(&self, y: f64) -> Result<(f64, f64)> {
        self.check_domain(y)?;
        let j = self.knots.partition_point(|&x| x < y);
        if j < self.knots.len() && self.knots[j] == y {
            let left = self.slopes[j.saturating_sub(1)];
            let right = self.slopes[j.min(self.slopes.len() - 1)];
            return Ok((left, right));
        }
        let s = self.slopes[self.segment(y)];
        Ok((s, s))
    }

    /// Set of maximizers of `f(y) - r y` over `[0, ybar]`, as `(lo, hi)`.
    /// The interval is a single point unless `r` equals a segment slope.
    pub fn demand_interval(&self, r: f64) -> (f64, f64) {
        let hi = self.slopes.partition_point(|&s| s >= r);
        let lo = self.slopes.partition_point(|&s| s > r);
        (self.knots[lo], self.knots[hi])
    }

    /// `y*(r) = max{y : right-slope(y) >= r}`, the largest maximizer of
    /// `f(y) - r y`, which is also the largest maximizer of
    /// `f(y) + r (ybar - y)`.
    pub fn inverse_marginal(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::domain(format!("rental price must be >= 0, got {r}")));
        }
        Ok(self.demand_interval(r).1)
    }
}

/// Samples and fits one household.
pub fn fit_household(
    household: &HouseholdRecord,
    ctx: &BillingContext<'_>,
    config: &FitConfig,
) -> Result<(HouseholdSamples, SavingsCurve, FitDiagnostics)> {
    let samples = sample_household(household, ctx, config)?;
    let (curve, diag) = SavingsCurve::fit(&household.id, &samples.y, &samples.savings(), config)?;
    Ok((samples, curve, diag))
}

/// Fits every household in parallel; output order follows `households`.
pub fn fit_population(
    households: &[HouseholdRecord],
    ctx: &BillingContext<'_>,
    config: &FitConfig,
) -> Result<Vec<(HouseholdSamples, SavingsCurve, FitDiagnostics)>> {
    households.par_iter().map(|hh| fit_household(hh, ctx, config)).collect()
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn num(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("column {i}: cannot parse `{raw}`")))
}

/// `household_id,knot_index,y,f,slope`; the slope column holds the slope of
/// the segment starting at the knot, and the terminal slope on the last knot.
pub fn write_curves(path: &Path, curves: &[SavingsCurve]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["household_id", "knot_index", "y", "f", "slope"])?;
    for c in curves {
        for k in 0..c.knots.len() {
            let s = c.slopes[k.min(c.slopes.len() - 1)];
            w.write_record([
                c.household_id.clone(),
                k.to_string(),
                fmt(c.knots[k]),
                fmt(c.values[k]),
                fmt(s),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups consecutive rows by their first column.
fn grouped_rows(path: &Path) -> Result<Vec<(String, Vec<csv::StringRecord>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut out: Vec<(String, Vec<csv::StringRecord>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        match out.last_mut() {
            Some((last, rows)) if *last == id => rows.push(rec),
            _ => out.push((id, vec![rec])),
        }
    }
    Ok(out)
}

pub fn read_curves(path: &Path) -> Result<Vec<SavingsCurve>> {
    let mut curves = Vec::new();
    for (id, rows) in grouped_rows(path)? {
        let mut knots = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        let mut slopes = Vec::with_capacity(rows.len());
        for rec in &rows {
            knots.push(num(path, rec, 2)?);
            values.push(num(path, rec, 3)?);
            slopes.push(num(path, rec, 4)?);
        }
        slopes.pop();
        curves.push(SavingsCurve::from_parts(id, knots, values, slopes)?);
    }
    Ok(curves)
}

/// `household_id,knot_index,y,bill,purchases,baseline_bill`.
pub fn write_samples(path: &Path, samples: &[HouseholdSamples]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["household_id", "knot_index", "y", "bill", "purchases", "baseline_bill"])?;
    for s in samples {
        for k in 0..s.y.len() {
            w.write_record([
                s.household_id.clone(),
                k.to_string(),
                fmt(s.y[k]),
                fmt(s.bill[k]),
                fmt(s.purchases[k]),
                fmt(s.baseline_bill),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<HouseholdSamples>> {
    let mut out = Vec::new();
    for (id, rows) in grouped_rows(path)? {
        let mut s = HouseholdSamples {
            household_id: id,
            y: Vec::with_capacity(rows.len()),
            bill: Vec::with_capacity(rows.len()),
            purchases: Vec::with_capacity(rows.len()),
            baseline_bill: num(path, &rows[0], 5)?,
        };
        for rec in &rows {
            s.y.push(num(path, rec, 2)?);
            s.bill.push(num(path, rec, 3)?);
            s.purchases.push(num(path, rec, 4)?);
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(y: &[f64], f: &[f64]) -> SavingsCurve {
        SavingsCurve::fit("h", y, f, &FitConfig::default()).unwrap().0
    }

    #[test]
    fn grid_endpoints() {
        let g = sample_grid(7.3, 30, Spacing::Linear);
        assert_eq!(g.len(), 31);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.073).abs() < 1e-15);
        assert_eq!(g[30], 7.3);
        let g = sample_grid(7.3, 30, Spacing::Geometric);
        assert_eq!(g[30], 7.3);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn antitonic_pools_violators() {
        let s = antitonic(&[3.0, 1.0, 2.0, 0.5], &[1.0, 1.0, 1.0, 2.0]);
        assert_eq!(s, vec![3.0, 1.5, 1.5, 0.5]);
    }

    #[test]
    fn zero_savings_stay_zero() {
        let y = sample_grid(4.0, 30, Spacing::Linear);
        let f = vec![0.0; y.len()];
        let (c, d) = SavingsCurve::fit("h", &y, &f, &FitConfig::default()).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert!(!d.strictly_concave);
        assert_eq!(d.r_squared, 1.0);
    }

    #[test]
    fn linear_savings_become_strict() {
        let y = sample_grid(2.0, 10, Spacing::Linear);
        let f: Vec<f64> = y.iter().map(|v| 100.0 * v).collect();
        let c = fit(&y, &f);
        assert!(c.slopes.windows(2).all(|w| w[0] > w[1]));
        assert!((c.full_savings() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn queries_on_two_segments() {
        let c =
            SavingsCurve::from_parts("h".into(), vec![0.0, 1.0, 3.0], vec![0.0, 10.0, 14.0], vec![10.0, 2.0]).unwrap();
        assert_eq!(c.eval(1.0).unwrap(), 10.0);
        assert_eq!(c.eval(2.0).unwrap(), 12.0);
        assert_eq!(c.deriv_range(1.0).unwrap(), (10.0, 2.0));
        assert_eq!(c.deriv_range(0.0).unwrap(), (10.0, 10.0));
        assert_eq!(c.deriv_range(3.0).unwrap(), (2.0, 2.0));
        assert_eq!(c.deriv_range(0.5).unwrap(), (10.0, 10.0));
        assert!(c.eval(3.0001).is_err());
        assert!(c.eval(-0.1).is_err());
        assert_eq!(c.inverse_marginal(0.0).unwrap(), 3.0);
        assert_eq!(c.inverse_marginal(5.0).unwrap(), 1.0);
        assert_eq!(c.inverse_marginal(10.0).unwrap(), 1.0);
        assert_eq!(c.inverse_marginal(10.5).unwrap(), 0.0);
        assert_eq!(c.demand_interval(10.0), (0.0, 1.0));
        assert_eq!(c.demand_interval(2.0), (1.0, 3.0));
        assert!(c.inverse_marginal(-1.0).is_err());
    }

    #[test]
    fn rejects_convex_samples() {
        let y = sample_grid(1.0, 10, Spacing::Linear);
        let f: Vec<f64> = y.iter().map(|v| 100.0 * v * v).collect();
        let err = SavingsCurve::fit("h7", &y, &f, &FitConfig::default()).unwrap_err();
        assert!(err.to_string().contains("h7"), "{err}");
    }
}
