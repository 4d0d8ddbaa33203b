//! Microgrid side of the simulation: baseload, PV and wind output, net load,
//! time-of-use tariff and the load-shape metrics.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::AllocationResult;
use crate::error::{Error, Result};
use crate::seed;

/// Length of the trailing load window used by every load-shape metric.
pub const WINDOW: usize = 24;

/// Photovoltaic plant with a linear irradiance/temperature model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams {
    pub p_rated_kw: f64,
    /// kW/m² per slot.
    pub irradiance: Vec<f64>,
    /// Irradiance at which the plant delivers `p_rated_kw`, kW/m².
    pub irradiance_std: f64,
    /// Panel temperature per slot, °C.
    pub temperature_c: Vec<f64>,
    /// Power temperature coefficient, 1/°C.
    pub temp_coeff: f64,
    pub temp_ref_c: f64,
}

/// PV output for one operating point, floored at zero.
pub fn pv_output(pv: &PvParams, irradiance: f64, temperature_c: f64) -> f64 {
    let p = pv.p_rated_kw * (irradiance / pv.irradiance_std)
        * (1.0 + pv.temp_coeff * (temperature_c - pv.temp_ref_c));
    p.max(0.0)
}

pub fn pv_power(pv: &PvParams, slot: usize) -> Result<f64> {
    if !(pv.irradiance_std > 0.0) {
        return Err(Error::config("pv.irradiance_std", "must be positive"));
    }
    let (irr, temp) = match (pv.irradiance.get(slot), pv.temperature_c.get(slot)) {
        (Some(i), Some(t)) => (*i, *t),
        _ => return Err(Error::Domain(format!("PV slot {slot} out of range"))),
    };
    Ok(pv_output(pv, irr, temp))
}

/// Wind turbine with a cut-in / linear ramp / rated / cut-out power curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WtParams {
    pub p_rated_kw: f64,
    pub v_cut_in: f64,
    pub v_rated: f64,
    pub v_cut_out: f64,
    /// Hub-height wind speed per slot, m/s.
    pub wind_ms: Vec<f64>,
}

pub fn wind_curve(wt: &WtParams, v: f64) -> f64 {
    if v <= wt.v_cut_in || v >= wt.v_cut_out {
        0.0
    } else if v <= wt.v_rated {
        (v - wt.v_cut_in) / (wt.v_rated - wt.v_cut_in) * wt.p_rated_kw
    } else {
        wt.p_rated_kw
    }
}

pub fn wt_power(wt: &WtParams, slot: usize) -> Result<f64> {
    wt.wind_ms
        .get(slot)
        .map(|&v| wind_curve(wt, v))
        .ok_or_else(|| Error::Domain(format!("wind slot {slot} out of range")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TariffLabel {
    OffPeak,
    Shoulder,
    Peak,
}

/// Price band covering hours `[start_hour, end_hour)`, wrapping over midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TariffBand {
    pub label: TariffLabel,
    pub start_hour: u32,
    pub end_hour: u32,
    pub price: f64,
}

impl TariffBand {
    fn covers(&self, hour: u32) -> bool {
        if self.start_hour <= self.end_hour {
            hour >= self.start_hour && hour < self.end_hour
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

/// Time-of-use price schedule (currency per kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TariffSchedule {
    pub bands: Vec<TariffBand>,
}

impl Default for TariffSchedule {
    fn default() -> Self {
        use TariffLabel::*;
        let band = |label, start_hour, end_hour, price| TariffBand {
            label,
            start_hour,
            end_hour,
            price,
        };
        Self {
            bands: vec![
                band(OffPeak, 23, 7, 0.4),
                band(Shoulder, 7, 10, 0.8),
                band(Peak, 10, 12, 1.2),
                band(Shoulder, 12, 18, 0.8),
                band(Peak, 18, 21, 1.2),
                band(Shoulder, 21, 23, 0.8),
            ],
        }
    }
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<()> {
        for b in &self.bands {
            if b.start_hour > 23 || b.end_hour > 24 || b.start_hour == b.end_hour {
                return Err(Error::config("tariff", format!("bad band hours {b:?}")));
            }
            if !(b.price.is_finite() && b.price > 0.0) {
                return Err(Error::config("tariff", "prices must be positive"));
            }
        }
        for hour in 0..24 {
            let n = self.bands.iter().filter(|b| b.covers(hour)).count();
            if n != 1 {
                return Err(Error::config(
                    "tariff",
                    format!("hour {hour} is covered by {n} bands"),
                ));
            }
        }
        Ok(())
    }

    pub fn price(&self, hour: u32) -> Result<f64> {
        let h = hour % 24;
        self.bands
            .iter()
            .find(|b| b.covers(h))
            .map(|b| b.price)
            .ok_or_else(|| Error::Domain(format!("no tariff band covers hour {h}")))
    }

    pub fn label(&self, hour: u32) -> Option<TariffLabel> {
        self.bands.iter().find(|b| b.covers(hour % 24)).map(|b| b.label)
    }
}

/// Tie-line import/export limits; `None` means unbounded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TieLine {
    pub min_kw: Option<f64>,
    pub max_kw: Option<f64>,
}

impl TieLine {
    /// Distance outside the limits, zero when inside.
    pub fn violation(&self, load_kw: f64) -> f64 {
        if let Some(max) = self.max_kw {
            if load_kw > max {
                return load_kw - max;
            }
        }
        if let Some(min) = self.min_kw {
            if load_kw < min {
                return min - load_kw;
            }
        }
        0.0
    }
}

/// Everything outside the fleet. Series are daily (24) or weekly (168) and
/// repeat cyclically over absolute slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridScenario {
    pub baseload_kw: Vec<f64>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub pv: Option<PvParams>,
    #[serde(default)]
    pub wt: Option<WtParams>,
    #[serde(default)]
    pub tariff: TariffSchedule,
    #[serde(default)]
    pub tie_line: TieLine,
    /// Half-width of the multiplicative uniform noise on baseload and RES.
    #[serde(default)]
    pub noise_pct: f64,
}

fn one() -> f64 {
    1.0
}

/// Per-slot multipliers realizing the scenario noise for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub base: Vec<f64>,
    pub pv: Vec<f64>,
    pub wt: Vec<f64>,
}

impl NoiseField {
    pub fn none(len: usize) -> Self {
        Self {
            base: vec![1.0; len],
            pv: vec![1.0; len],
            wt: vec![1.0; len],
        }
    }
}

/// Load decomposition at one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub base_kw: f64,
    pub pv_kw: f64,
    pub wt_kw: f64,
    pub eva_kw: f64,
    /// `base - pv - wt + eva`.
    pub total_kw: f64,
    /// `-pv - wt + eva`.
    pub net_kw: f64,
    /// How far `total_kw` lies outside the tie-line limits (0 when inside).
    pub tie_line_violation_kw: f64,
}

impl GridScenario {
    /// Mean of the scaled baseload profile, kW.
    pub fn mean_baseload_kw(&self) -> f64 {
        if self.baseload_kw.is_empty() {
            return 0.0;
        }
        self.scale * self.baseload_kw.iter().sum::<f64>() / self.baseload_kw.len() as f64
    }

    pub fn len(&self) -> usize {
        self.baseload_kw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseload_kw.is_empty()
    }

    pub fn has_res(&self) -> bool {
        self.pv.is_some() || self.wt.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.baseload_kw.len();
        if n != 24 && n != 168 {
            return Err(Error::config("baseload_kw", "length must be 24 or 168"));
        }
        if self.baseload_kw.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("baseload_kw", "values must be finite"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config("scale", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_pct) {
            return Err(Error::config("noise_pct", "must lie in [0, 1)"));
        }
        if let (Some(lo), Some(hi)) = (self.tie_line.min_kw, self.tie_line.max_kw) {
            if lo > hi {
                return Err(Error::config("tie_line", "min exceeds max"));
            }
        }
        self.tariff.validate()?;
        if let Some(pv) = &self.pv {
            if pv.irradiance.len() != n || pv.temperature_c.len() != n {
                return Err(Error::config("pv", "series length must match baseload"));
            }
            if !(pv.p_rated_kw > 0.0) {
                return Err(Error::config("pv.p_rated_kw", "must be positive"));
            }
            if !(pv.irradiance_std > 0.0) {
                return Err(Error::config("pv.irradiance_std", "must be positive"));
            }
            if pv.irradiance.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::config("pv.irradiance", "must be >= 0"));
            }
        }
        if let Some(wt) = &self.wt {
            if wt.wind_ms.len() != n {
                return Err(Error::config("wt", "series length must match baseload"));
            }
            if !(wt.p_rated_kw > 0.0) {
                return Err(Error::config("wt.p_rated_kw", "must be positive"));
            }
            if !(0.0 <= wt.v_cut_in && wt.v_cut_in < wt.v_rated && wt.v_rated < wt.v_cut_out) {
                return Err(Error::config("wt", "need 0 <= v_cut_in < v_rated < v_cut_out"));
            }
        }
        Ok(())
    }

    /// Draws the i.i.d. per-slot noise multipliers for one episode.
    pub fn noise_field(&self, seed: u64) -> NoiseField {
        let n = self.len();
        if self.noise_pct == 0.0 {
            return NoiseField::none(n);
        }
        let mut rng = seed::stream_rng(seed::derive(seed, seed::TAG_NOISE), 0);
        let pct = self.noise_pct;
        let mut draw = || -> Vec<f64> {
            (0..n)
                .map(|_| 1.0 + rng.random_range(-pct..=pct))
                .collect()
        };
        let base = draw();
        let pv = draw();
        let wt = draw();
        NoiseField { base, pv, wt }
    }

    /// Baseload, PV and WT at absolute slot `slot` (series index `slot mod len`).
    pub fn components(&self, slot: usize, noise: &NoiseField) -> Result<(f64, f64, f64)> {
        let i = slot % self.len();
        let base = self.baseload_kw[i] * self.scale * noise.base[i];
        let pv = match &self.pv {
            Some(pv) => pv_power(pv, i)? * self.scale * noise.pv[i],
            None => 0.0,
        };
        let wt = match &self.wt {
            Some(wt) => wt_power(wt, i)? * self.scale * noise.wt[i],
            None => 0.0,
        };
        Ok((base, pv, wt))
    }

    /// Apply a `slot,baseload_kw[,irradiance,temp_c,wind_ms]` profile.
    pub fn apply_profile(&mut self, profile: &ProfileColumns) -> Result<()> {
        self.baseload_kw = profile.baseload_kw.clone();
        if let Some(irr) = &profile.irradiance {
            let pv = self
                .pv
                .as_mut()
                .ok_or_else(|| Error::config("profile", "irradiance column needs a pv block"))?;
            pv.irradiance = irr.clone();
        }
        if let Some(temp) = &profile.temp_c {
            let pv = self
                .pv
                .as_mut()
                .ok_or_else(|| Error::config("profile", "temp_c column needs a pv block"))?;
            pv.temperature_c = temp.clone();
        }
        if let Some(wind) = &profile.wind_ms {
            let wt = self
                .wt
                .as_mut()
                .ok_or_else(|| Error::config("profile", "wind_ms column needs a wt block"))?;
            wt.wind_ms = wind.clone();
        }
        self.validate()
    }
}

/// Total and net load at absolute slot `slot` with the EVA drawing `eva_power_kw`.
///
/// Tie-line excursions are reported in the sample, never clamped.
pub fn total_load(
    scenario: &GridScenario,
    noise: &NoiseField,
    slot: usize,
    eva_power_kw: f64,
) -> Result<LoadSample> {
    let (base_kw, pv_kw, wt_kw) = scenario.components(slot, noise)?;
    let total_kw = base_kw - pv_kw - wt_kw + eva_power_kw;
    Ok(LoadSample {
        base_kw,
        pv_kw,
        wt_kw,
        eva_kw: eva_power_kw,
        total_kw,
        net_kw: -pv_kw - wt_kw + eva_power_kw,
        tie_line_violation_kw: scenario.tie_line.violation(total_kw),
    })
}

fn check_window(window: &[f64]) -> Result<()> {
    if window.len() != WINDOW {
        return Err(Error::Domain(format!(
            "load window has {} entries, expected {WINDOW}",
            window.len()
        )));
    }
    Ok(())
}

/// Population variance of the trailing 24-slot load window, kW².
pub fn load_variance(window: &[f64]) -> Result<f64> {
    check_window(window)?;
    let k = window.len() as f64;
    let mean = window.iter().sum::<f64>() / k;
    Ok(window.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / k)
}

/// `(P_max, P_min)` of the trailing window.
pub fn peak_valley(window: &[f64]) -> Result<(f64, f64)> {
    check_window(window)?;
    let max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = window.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((max, min))
}

/// Sum of `price(hour) * p_n * dt` over slots and vehicles. Positive is cost,
/// negative is profit.
pub fn charging_cost(
    hours: &[u32],
    allocations: &[AllocationResult],
    tariff: &TariffSchedule,
    dt_h: f64,
) -> Result<f64> {
    if hours.len() != allocations.len() {
        return Err(Error::Domain(format!(
            "{} tariff slots for {} allocations",
            hours.len(),
            allocations.len()
        )));
    }
    let mut cost = 0.0;
    for (&h, a) in hours.iter().zip(allocations) {
        let price = tariff.price(h)?;
        cost += a.powers_kw.iter().map(|p| price * p * dt_h).sum::<f64>();
    }
    Ok(cost)
}

pub fn mean_net_load(net_load: &[f64]) -> Result<f64> {
    if net_load.is_empty() {
        return Err(Error::Domain("empty net-load series".into()));
    }
    Ok(net_load.iter().sum::<f64>() / net_load.len() as f64)
}

/// Columns of a `slot,baseload_kw[,irradiance,temp_c,wind_ms]` profile file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileColumns {
    pub baseload_kw: Vec<f64>,
    pub irradiance: Option<Vec<f64>>,
    pub temp_c: Option<Vec<f64>>,
    pub wind_ms: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct ProfileRow {
    slot: usize,
    baseload_kw: f64,
    irradiance: Option<f64>,
    temp_c: Option<f64>,
    wind_ms: Option<f64>,
}

pub fn read_profile_csv<R: Read>(reader: R) -> Result<ProfileColumns> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = ProfileColumns::default();
    let (mut irr, mut temp, mut wind) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in r.deserialize().enumerate() {
        let row: ProfileRow = row?;
        if row.slot != i {
            return Err(Error::config("profile", format!("row {i} has slot {}", row.slot)));
        }
        out.baseload_kw.push(row.baseload_kw);
        irr.extend(row.irradiance);
        temp.extend(row.temp_c);
        wind.extend(row.wind_ms);
    }
    let n = out.baseload_kw.len();
    let column = |v: Vec<f64>, name: &str| -> Result<Option<Vec<f64>>> {
        match v.len() {
            0 => Ok(None),
            len if len == n => Ok(Some(v)),
            _ => Err(Error::config("profile", format!("column {name} is incomplete"))),
        }
    };
    out.irradiance = column(irr, "irradiance")?;
    out.temp_c = column(temp, "temp_c")?;
    out.wind_ms = column(wind, "wind_ms")?;
    Ok(out)
}
