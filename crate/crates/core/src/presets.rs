//! Shipped synthetic profiles and ready-made episode specifications.

use std::f64::consts::PI;

use crate::env::{fit_per_feature, EpisodeSpec, Mode, Normalization, RewardWeights};
use crate::error::Result;
use crate::fleet::FleetConfig;
use crate::grid::{GridScenario, PvParams, TariffSchedule, TieLine, WtParams};

/// Residential feeder shape, per unit of the daily peak, hours 0..23.
pub const RESIDENTIAL_PU: [f64; 24] = [
    0.62, 0.56, 0.52, 0.50, 0.51, 0.55, 0.63, 0.72, 0.80, 0.86, 0.91, 0.95, 0.97, 0.93, 0.88,
    0.85, 0.86, 0.91, 0.97, 1.00, 0.99, 0.92, 0.82, 0.71,
];

/// Baseload peak per vehicle, kW.
pub const PEAK_KW_PER_EV: f64 = 6.0;

const WEEK_LOAD: [f64; 7] = [1.0, 0.98, 1.0, 1.02, 1.0, 0.93, 0.9];
const WEEK_SUN: [f64; 7] = [1.0, 0.75, 0.9, 1.0, 0.6, 0.85, 1.0];
const WEEK_WIND: [f64; 7] = [1.0, 1.2, 0.8, 0.9, 1.3, 1.0, 0.85];

pub fn daily_baseload(peak_kw: f64) -> Vec<f64> {
    RESIDENTIAL_PU.iter().map(|pu| pu * peak_kw).collect()
}

/// Clear-sky irradiance, kW/m², sunrise 06:00, sunset 18:00.
pub fn daily_irradiance() -> Vec<f64> {
    (0..24)
        .map(|h| {
            let x = (h as f64 - 6.0) / 12.0;
            if (0.0..=1.0).contains(&x) {
                (PI * x).sin().max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn daily_temperature() -> Vec<f64> {
    (0..24)
        .map(|h| 22.0 + 8.0 * (2.0 * PI * (h as f64 - 14.0) / 24.0).cos())
        .collect()
}

/// Night-heavy wind, 5..10 m/s, strongest at 03:00.
pub fn daily_wind() -> Vec<f64> {
    (0..24)
        .map(|h| 7.5 + 2.5 * (2.0 * PI * (h as f64 - 3.0) / 24.0).cos())
        .collect()
}

fn weekly(daily: &[f64], factors: &[f64; 7]) -> Vec<f64> {
    factors
        .iter()
        .flat_map(|f| daily.iter().map(move |v| v * f))
        .collect()
}

pub fn pv_params(peak_kw: f64, irradiance: Vec<f64>, temperature_c: Vec<f64>) -> PvParams {
    PvParams {
        p_rated_kw: 0.35 * peak_kw,
        irradiance,
        irradiance_std: 1.0,
        temperature_c,
        temp_coeff: -0.004,
        temp_ref_c: 25.0,
    }
}

pub fn wt_params(peak_kw: f64, wind_ms: Vec<f64>) -> WtParams {
    WtParams {
        p_rated_kw: 0.15 * peak_kw,
        v_cut_in: 3.0,
        v_rated: 12.0,
        v_cut_out: 25.0,
        wind_ms,
    }
}

fn scenario(baseload_kw: Vec<f64>) -> GridScenario {
    GridScenario {
        baseload_kw,
        scale: 1.0,
        pv: None,
        wt: None,
        tariff: TariffSchedule::default(),
        tie_line: TieLine::default(),
        noise_pct: 0.0,
    }
}

/// Daily baseload sized for `n_evs` vehicles.
pub fn baseload_scenario(n_evs: usize) -> GridScenario {
    scenario(daily_baseload(PEAK_KW_PER_EV * n_evs as f64))
}

/// Daily baseload plus PV and wind.
pub fn res_scenario(n_evs: usize) -> GridScenario {
    let peak = PEAK_KW_PER_EV * n_evs as f64;
    GridScenario {
        pv: Some(pv_params(peak, daily_irradiance(), daily_temperature())),
        wt: Some(wt_params(peak, daily_wind())),
        ..scenario(daily_baseload(peak))
    }
}

/// One week with day-to-day variation and ±10 % uniform noise.
pub fn weekly_scenario(n_evs: usize, with_res: bool) -> GridScenario {
    let peak = PEAK_KW_PER_EV * n_evs as f64;
    let mut s = scenario(weekly(&daily_baseload(peak), &WEEK_LOAD));
    s.noise_pct = 0.1;
    if with_res {
        let temps = weekly(&daily_temperature(), &[1.0; 7]);
        s.pv = Some(pv_params(peak, weekly(&daily_irradiance(), &WEEK_SUN), temps));
        s.wt = Some(wt_params(peak, weekly(&daily_wind(), &WEEK_WIND)));
    }
    s
}

/// Default fleet count, used as the base of the large-scale variants.
pub const BASE_FLEET: usize = 509;
pub const LARGE_SCALE_FLEETS: [usize; 4] = [5090, 20360, 35630, 50900];
pub const LARGE_SCALE_FACTOR: f64 = 100.0;

/// RES microgrid of the 509-vehicle system, with load and generation scaled by 100.
pub fn large_scale_scenario() -> GridScenario {
    GridScenario {
        scale: LARGE_SCALE_FACTOR,
        ..res_scenario(BASE_FLEET)
    }
}

fn fleet(n_evs: usize) -> FleetConfig {
    FleetConfig {
        n_evs,
        ..FleetConfig::default()
    }
}

fn spec(mode: Mode, length_slots: u32, scenario: GridScenario, fleet: FleetConfig) -> EpisodeSpec {
    EpisodeSpec {
        mode,
        start_slot: 15,
        length_slots,
        scenario,
        fleet,
        reward: RewardWeights::default(),
        normalization: Normalization::WholeVector,
    }
}

/// 50-vehicle daily baseload episode used for desk-scale training.
pub fn desk_spec() -> EpisodeSpec {
    baseload_spec(50)
}

/// Rollouts and seed used to fit the desk observation scaling.
pub const DESK_FIT_EPISODES: u64 = 200;
pub const DESK_FIT_SEED: u64 = 99;

/// [`desk_spec`] with per-feature scaling fitted on full-rate charging rollouts.
/// Pair with [`crate::ppo::PpoConfig::desk`].
pub fn desk_training_spec() -> Result<EpisodeSpec> {
    let mut s = desk_spec();
    s.normalization = fit_per_feature(&s, DESK_FIT_EPISODES, DESK_FIT_SEED)?;
    Ok(s)
}

pub fn baseload_spec(n_evs: usize) -> EpisodeSpec {
    spec(Mode::Baseload, 20, baseload_scenario(n_evs), fleet(n_evs))
}

pub fn res_spec(n_evs: usize) -> EpisodeSpec {
    spec(Mode::Res, 20, res_scenario(n_evs), fleet(n_evs))
}

pub fn weekly_spec(n_evs: usize, with_res: bool) -> EpisodeSpec {
    spec(Mode::Weekly, 168, weekly_scenario(n_evs, with_res), fleet(n_evs))
}

pub fn large_scale_spec(n_evs: usize) -> EpisodeSpec {
    spec(Mode::LargeScale, 20, large_scale_scenario(), fleet(n_evs))
}
