//! Episodic MDP around the fleet and grid: observation, action map, reward.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregator::{
    power_envelope, step_aggregate, AllocationResult, PowerEnvelope,
};
use crate::error::{Error, Result};
use crate::fleet::{availability, refresh_bounds, sample_fleet, AvailabilityMask, EvRecord, FleetConfig};
use crate::grid::{self, GridScenario, LoadSample, NoiseField, WINDOW};
use crate::seed;

/// `[P^{k-23} .. P^k, SOC, variance]`.
pub const OBS_DIM: usize = WINDOW + 2;
pub const IDX_SOC: usize = WINDOW;
pub const IDX_VARIANCE: usize = WINDOW + 1;

/// Slot length, hours.
pub const DT_H: f64 = 1.0;

/// Reward added instead of the SOC term when the EVA SOC leaves its band.
pub const SOC_OUT_OF_BAND_PENALTY: f64 = -100.0;
/// Lower clamp on the variance in `alpha / variance`, kW².
pub const VARIANCE_FLOOR_KW2: f64 = 1.0;
const SOC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseload,
    Res,
    Weekly,
    LargeScale,
}

/// How the raw state is turned into the network input.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Normalization {
    /// z-score over the 26 entries of each vector.
    #[default]
    WholeVector,
    /// Fixed per-feature statistics, see [`fit_per_feature`].
    PerFeature {
        mean: Vec<f64>,
        std: Vec<f64>,
        /// Mean scenario baseload (kW) the statistics were fitted on; 0 when unknown.
        #[serde(default)]
        reference_kw: f64,
    },
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if let Normalization::PerFeature { mean, std, reference_kw } = self {
            if !(reference_kw.is_finite() && *reference_kw >= 0.0) {
                return Err(Error::config("normalization.reference_kw", "must be finite and >= 0"));
            }
            if mean.len() != OBS_DIM || std.len() != OBS_DIM {
                return Err(Error::config("normalization", "per-feature stats need 26 entries"));
            }
            if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config("normalization", "stats must be finite, std > 0"));
            }
        }
        Ok(())
    }

    /// Statistics carried over to a scenario with mean baseload `baseload_kw`:
    /// load features scale with it, the variance feature with its square.
    pub fn rescaled(&self, baseload_kw: f64) -> Normalization {
        match self {
            Normalization::PerFeature { mean, std, reference_kw }
                if *reference_kw > 0.0 && baseload_kw > 0.0 && baseload_kw != *reference_kw =>
            {
                let r = baseload_kw / reference_kw;
                let f = |k: usize| match k {
                    IDX_SOC => 1.0,
                    IDX_VARIANCE => r * r,
                    _ => r,
                };
                Normalization::PerFeature {
                    mean: mean.iter().enumerate().map(|(k, m)| m * f(k)).collect(),
                    std: std.iter().enumerate().map(|(k, s)| s * f(k)).collect(),
                    reference_kw: baseload_kw,
                }
            }
            other => other.clone(),
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            Normalization::WholeVector => normalize(raw),
            Normalization::PerFeature { mean, std, .. } => raw
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(x, (m, s))| (x - m) / s)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub chi: f64,
    pub psi: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: -5.0,
            chi: 10.0,
            psi: -1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::config("reward.alpha", "must be > 0"));
        }
        if !(self.beta < 0.0) {
            return Err(Error::config("reward.beta", "must be < 0"));
        }
        if !(self.chi > 0.0) {
            return Err(Error::config("reward.chi", "must be > 0"));
        }
        if !(self.psi < 0.0) {
            return Err(Error::config("reward.psi", "must be < 0"));
        }
        Ok(())
    }
}

/// Reward decomposition; `total()` is what the agent receives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub variance: f64,
    pub peak_valley: f64,
    pub soc: f64,
    pub res: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.variance + self.peak_valley + self.soc + self.res
    }
}

/// Substitutes the window statistics into the baseload reward.
///
/// `soc` is `(eva_soc, (lower, upper))`, or `None` when no vehicle is parked.
pub fn baseload_terms(
    w: &RewardWeights,
    variance_kw2: f64,
    spread_kw: f64,
    soc: Option<(f64, (f64, f64))>,
) -> RewardTerms {
    let soc_term = match soc {
        None => 0.0,
        Some((s, (lo, hi))) => {
            if s < lo - SOC_TOL || s > hi + SOC_TOL {
                SOC_OUT_OF_BAND_PENALTY
            } else {
                w.chi * (s - lo).min(hi - s).max(0.0)
            }
        }
    };
    RewardTerms {
        variance: w.alpha / variance_kw2.max(VARIANCE_FLOOR_KW2),
        peak_valley: w.beta * spread_kw,
        soc: soc_term,
        res: 0.0,
    }
}

pub fn reward_baseload(
    window: &[f64],
    eva_soc: f64,
    soc_bounds: Option<(f64, f64)>,
    w: &RewardWeights,
) -> Result<RewardTerms> {
    let variance = grid::load_variance(window)?;
    let (max, min) = grid::peak_valley(window)?;
    Ok(baseload_terms(
        w,
        variance,
        max - min,
        soc_bounds.map(|b| (eva_soc, b)),
    ))
}

pub fn reward_res(
    window: &[f64],
    eva_soc: f64,
    soc_bounds: Option<(f64, f64)>,
    net_load: &[f64],
    w: &RewardWeights,
) -> Result<RewardTerms> {
    let mut terms = reward_baseload(window, eva_soc, soc_bounds, w)?;
    let f1 = grid::mean_net_load(net_load)?;
    terms.res = if f1 == 0.0 {
        log::warn!("mean net load is zero; RES reward term set to 0");
        0.0
    } else {
        w.psi / f1
    };
    Ok(terms)
}

/// Whole-vector z-score; a constant vector maps to zeros.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|x| (x - mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub mode: Mode,
    pub start_slot: u32,
    pub length_slots: u32,
    pub scenario: GridScenario,
    pub fleet: FleetConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub normalization: Normalization,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.fleet.validate_distributions()?;
        self.reward.validate()?;
        self.normalization.validate()?;
        if self.start_slot >= 24 {
            return Err(Error::config("start_slot", "must be an hour of the day"));
        }
        if self.length_slots == 0 {
            return Err(Error::config("length_slots", "must be >= 1"));
        }
        match self.mode {
            Mode::Weekly if self.length_slots != 168 => {
                Err(Error::config("length_slots", "weekly episodes span 168 slots"))
            }
            Mode::Res if !self.scenario.has_res() => {
                Err(Error::config("scenario", "res mode needs pv or wt"))
            }
            Mode::Baseload | Mode::Res | Mode::LargeScale if self.length_slots > 24 => {
                Err(Error::config("length_slots", "daily episodes span at most 24 slots"))
            }
            _ => Ok(()),
        }
    }

    /// Hour of the day at which the next day's fleet replaces the current one.
    pub fn handover_hour(&self) -> u32 {
        self.fleet.handover_hour()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpObservation {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// One row of the episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: usize,
    pub baseload_kw: f64,
    pub pv_kw: f64,
    pub wt_kw: f64,
    pub eva_power_kw: f64,
    pub total_load_kw: f64,
    pub eva_soc: f64,
    pub variance_kw2: f64,
    pub reward: f64,
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Everything observed while taking one step.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub slot: usize,
    pub hour: u32,
    pub load: LoadSample,
    pub envelope: PowerEnvelope,
    pub n_connected: usize,
    pub allocation: AllocationResult,
    /// Vehicles whose SOC left their bounds (always expected to be 0).
    pub soc_violations: usize,
    pub eva_soc: f64,
    pub eva_soc_bounds: Option<(f64, f64)>,
    pub variance_kw2: f64,
    pub peak_kw: f64,
    pub valley_kw: f64,
    pub terms: RewardTerms,
    pub trace: TraceRow,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: MdpObservation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Stateful single-threaded environment.
#[derive(Debug, Clone)]
pub struct V2gEnv {
    spec: EpisodeSpec,
    episode_seed: u64,
    fleet: Vec<EvRecord>,
    noise: NoiseField,
    loads: VecDeque<f64>,
    net_loads: VecDeque<f64>,
    steps: u32,
    day: u64,
    mask: AvailabilityMask,
    envelope: PowerEnvelope,
    active: bool,
}

impl V2gEnv {
    pub fn new(spec: EpisodeSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.scenario.len();
        Ok(Self {
            spec,
            episode_seed: 0,
            fleet: Vec::new(),
            noise: NoiseField::none(n),
            loads: VecDeque::with_capacity(WINDOW + 1),
            net_loads: VecDeque::with_capacity(WINDOW + 1),
            steps: 0,
            day: 0,
            mask: AvailabilityMask::all(0),
            envelope: PowerEnvelope {
                discharge_kw: 0.0,
                charge_kw: 0.0,
            },
            active: false,
        })
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn fleet(&self) -> &[EvRecord] {
        &self.fleet
    }

    /// Availability of the slot about to be scheduled.
    pub fn mask(&self) -> &AvailabilityMask {
        &self.mask
    }

    /// Feasible EVA power for the slot about to be scheduled.
    pub fn envelope(&self) -> PowerEnvelope {
        self.envelope
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        !self.active
    }

    /// Absolute slot about to be scheduled, counted from midnight of day 0.
    pub fn slot(&self) -> usize {
        (self.spec.start_slot + self.steps) as usize
    }

    pub fn hour(&self) -> u32 {
        (self.slot() % 24) as u32
    }

    fn fleet_for_day(&self, day: u64) -> Result<Vec<EvRecord>> {
        if self.spec.fleet.n_evs == 0 {
            return Ok(Vec::new());
        }
        let cfg = FleetConfig {
            rng_seed: seed::derive(seed::derive(self.episode_seed, seed::TAG_FLEET_DAY), day),
            ..self.spec.fleet.clone()
        };
        sample_fleet(&cfg)
    }

    /// Starts a new episode: fresh fleet and noise, history filled with the
    /// 24 slots preceding the start at zero EVA power.
    pub fn reset(&mut self, episode_seed: u64) -> Result<MdpObservation> {
        self.episode_seed = episode_seed;
        self.steps = 0;
        self.day = 0;
        self.fleet = self.fleet_for_day(0)?;
        self.noise = self.spec.scenario.noise_field(episode_seed);
        self.loads.clear();
        self.net_loads.clear();
        let n = self.spec.scenario.len() as i64;
        let start = self.spec.start_slot as i64;
        for s in start - WINDOW as i64..start {
            let l = grid::total_load(
                &self.spec.scenario,
                &self.noise,
                s.rem_euclid(n) as usize,
                0.0,
            )?;
            self.loads.push_back(l.total_kw);
            self.net_loads.push_back(l.net_kw);
        }
        self.active = true;
        self.prepare_slot()?;
        Ok(self.observation())
    }

    fn prepare_slot(&mut self) -> Result<()> {
        let hour = self.hour();
        if self.spec.mode == Mode::Weekly && self.steps > 0 && hour == self.spec.handover_hour() {
            self.day += 1;
            self.fleet = self.fleet_for_day(self.day)?;
        }
        self.mask = availability(&self.fleet, hour)?;
        let band = self.spec.fleet.band;
        for (i, ev) in self.fleet.iter_mut().enumerate() {
            if self.mask.get(i) {
                refresh_bounds(ev, &band, hour, DT_H);
            }
        }
        self.envelope = power_envelope(&self.fleet, &self.mask, DT_H);
        Ok(())
    }

    /// Capacity-weighted SOC of the vehicles parked in the upcoming slot, or
    /// of the whole fleet when none is parked.
    fn observed_soc(&self) -> f64 {
        let weighted = |filter: &dyn Fn(usize) -> bool| {
            let (mut e, mut q) = (0.0, 0.0);
            for (_, ev) in self.fleet.iter().enumerate().filter(|(i, _)| filter(*i)) {
                e += ev.soc * ev.capacity_kwh;
                q += ev.capacity_kwh;
            }
            (q > 0.0).then(|| e / q)
        };
        weighted(&|i| self.mask.get(i))
            .or_else(|| weighted(&|_| true))
            .unwrap_or(0.0)
    }

    pub fn observation(&self) -> MdpObservation {
        let mut raw: Vec<f64> = self.loads.iter().copied().collect();
        let window = raw.clone();
        raw.push(self.observed_soc());
        raw.push(grid::load_variance(&window).unwrap_or(0.0));
        let normalized = self.spec.normalization.apply(&raw);
        MdpObservation { raw, normalized }
    }

    /// Affine map of `[0, 1]` onto the envelope.
    pub fn action_to_power(&self, action: f64) -> f64 {
        let a = action.clamp(0.0, 1.0);
        let e = self.envelope;
        e.discharge_kw + a * (e.charge_kw - e.discharge_kw)
    }

    pub fn step(&mut self, action: f64) -> Result<Transition> {
        if !self.active {
            return Err(Error::EpisodeDone);
        }
        if !action.is_finite() {
            return Err(Error::Numerical(format!("action {action}")));
        }
        let p = self.action_to_power(action);
        self.step_with_power(p)
    }

    /// Steps with an EVA power command, clipped to the envelope.
    pub fn step_with_power(&mut self, eva_power_kw: f64) -> Result<Transition> {
        if !self.active {
            return Err(Error::EpisodeDone);
        }
        if !eva_power_kw.is_finite() {
            return Err(Error::Numerical(format!("EVA power {eva_power_kw}")));
        }
        let slot = self.slot();
        let hour = self.hour();
        let envelope = self.envelope;
        let p = eva_power_kw.clamp(envelope.discharge_kw, envelope.charge_kw);
        let (next, state, allocation) = step_aggregate(&self.fleet, &self.mask, p, DT_H)?;
        let n_connected = state.n_connected;
        let soc_violations = next
            .iter()
            .enumerate()
            .filter(|(i, ev)| {
                self.mask.get(*i)
                    && (ev.soc < ev.soc_min - SOC_TOL || ev.soc > ev.soc_max + SOC_TOL)
            })
            .count();
        self.fleet = next;

        let applied = if n_connected > 0 {
            allocation.applied_eva_power_kw
        } else {
            0.0
        };
        let idx = slot % self.spec.scenario.len();
        let load = grid::total_load(&self.spec.scenario, &self.noise, idx, applied)?;
        self.loads.pop_front();
        self.loads.push_back(load.total_kw);
        self.net_loads.pop_front();
        self.net_loads.push_back(load.net_kw);
        let window: Vec<f64> = self.loads.iter().copied().collect();
        let variance_kw2 = grid::load_variance(&window)?;
        let (peak_kw, valley_kw) = grid::peak_valley(&window)?;

        let (eva_soc, bounds) = if n_connected > 0 {
            (state.soc, Some((state.soc_min, state.soc_max)))
        } else {
            (fleet_soc(&self.fleet), None)
        };
        let w = &self.spec.reward;
        let terms = if self.spec.scenario.has_res() {
            let net: Vec<f64> = self.net_loads.iter().copied().collect();
            reward_res(&window, eva_soc, bounds, &net, w)?
        } else {
            baseload_terms(w, variance_kw2, peak_kw - valley_kw, bounds.map(|b| (eva_soc, b)))
        };
        let reward = terms.total();
        if !reward.is_finite() {
            return Err(Error::Numerical(format!("reward {reward} at slot {slot}")));
        }

        self.steps += 1;
        let done = self.steps >= self.spec.length_slots;
        self.prepare_slot()?;
        if done {
            self.active = false;
        }
        let trace = TraceRow {
            slot,
            baseload_kw: load.base_kw,
            pv_kw: load.pv_kw,
            wt_kw: load.wt_kw,
            eva_power_kw: applied,
            total_load_kw: load.total_kw,
            eva_soc,
            variance_kw2,
            reward,
        };
        Ok(Transition {
            observation: self.observation(),
            reward,
            done,
            info: StepInfo {
                slot,
                hour,
                load,
                envelope,
                n_connected,
                allocation,
                soc_violations,
                eva_soc,
                eva_soc_bounds: bounds,
                variance_kw2,
                peak_kw,
                valley_kw,
                terms,
                trace,
            },
        })
    }
}

fn fleet_soc(fleet: &[EvRecord]) -> f64 {
    let q: f64 = fleet.iter().map(|e| e.capacity_kwh).sum();
    if q > 0.0 {
        fleet.iter().map(|e| e.soc * e.capacity_kwh).sum::<f64>() / q
    } else {
        0.0
    }
}

/// Per-feature mean/std of the raw states met under full-rate charging over
/// `episodes` episodes. Zero spreads are replaced by 1.
pub fn fit_per_feature(spec: &EpisodeSpec, episodes: u64, seed: u64) -> Result<Normalization> {
    let mut env = V2gEnv::new(EpisodeSpec {
        normalization: Normalization::WholeVector,
        ..spec.clone()
    })?;
    let mut sum = vec![0.0; OBS_DIM];
    let mut sq = vec![0.0; OBS_DIM];
    let mut n = 0.0;
    let mut add = |raw: &[f64]| {
        for (k, x) in raw.iter().enumerate() {
            sum[k] += x;
            sq[k] += x * x;
        }
        n += 1.0;
    };
    for e in 0..episodes.max(1) {
        let obs = env.reset(seed::derive(seed, e))?;
        add(&obs.raw);
        while !env.is_done() {
            let t = env.step(1.0)?;
            if !t.done {
                add(&t.observation.raw);
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| {
            let v = (s / n - m * m).max(0.0).sqrt();
            if v > 1e-12 {
                v
            } else {
                1.0
            }
        })
        .collect();
    Ok(Normalization::PerFeature {
        mean,
        std,
        reference_kw: spec.scenario.mean_baseload_kw(),
    })
}
