//! EV population: sampling, availability windows and per-vehicle SOC integration.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Rounding noise below this is snapped onto the violated SOC bound.
pub const SOC_TOLERANCE: f64 = 1e-12;

/// Hours per day; slots are one hour long.
pub const HOURS_PER_DAY: u32 = 24;

/// One vehicle as seen by the aggregator.
///
/// `soc_min`/`soc_max` are the bounds in force for the current slot. They move
/// over the parking window (see [`SocBand`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvRecord {
    pub id: u32,
    pub capacity_kwh: f64,
    pub p_ch_max_kw: f64,
    pub p_dis_max_kw: f64,
    pub soc: f64,
    pub arrival_slot: u32,
    pub departure_slot: u32,
    pub soc_min: f64,
    pub soc_max: f64,
}

impl EvRecord {
    /// Whether the vehicle is plugged in during hour-of-day `hour`.
    ///
    /// The window is `[arrival_slot, departure_slot)` and wraps over midnight.
    pub fn is_connected(&self, hour: u32) -> bool {
        let (a, d) = (self.arrival_slot, self.departure_slot);
        if a == d {
            false
        } else if a < d {
            hour >= a && hour < d
        } else {
            hour >= a || hour < d
        }
    }

    /// Slots left before departure when connected at `hour` (1 means this is the last slot).
    pub fn slots_to_departure(&self, hour: u32) -> u32 {
        (self.departure_slot + HOURS_PER_DAY - hour % HOURS_PER_DAY) % HOURS_PER_DAY
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str| format!("ev[{}].{}", self.id, name);
        if !(self.capacity_kwh.is_finite() && self.capacity_kwh > 0.0) {
            return Err(Error::config(field("capacity_kwh"), "must be positive"));
        }
        if !(self.p_ch_max_kw.is_finite() && self.p_ch_max_kw >= 0.0) {
            return Err(Error::config(field("p_ch_max_kw"), "must be >= 0"));
        }
        if !(self.p_dis_max_kw.is_finite() && self.p_dis_max_kw <= 0.0) {
            return Err(Error::config(field("p_dis_max_kw"), "must be <= 0"));
        }
        if self.arrival_slot >= HOURS_PER_DAY || self.departure_slot >= HOURS_PER_DAY {
            return Err(Error::config(field("arrival_slot"), "slots must be in [0, 23]"));
        }
        if !(self.soc_min <= self.soc && self.soc <= self.soc_max) {
            return Err(Error::config(
                field("soc"),
                format!("{} outside [{}, {}]", self.soc, self.soc_min, self.soc_max),
            ));
        }
        Ok(())
    }
}

/// Normal distribution truncated to `[lower, upper]`, sampled by rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    pub const fn new(mean: f64, std: f64, lower: f64, upper: f64) -> Self {
        Self {
            mean,
            std,
            lower,
            upper,
        }
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        let finite = [self.mean, self.std, self.lower, self.upper]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config(field, "parameters must be finite"));
        }
        if self.lower > self.upper {
            return Err(Error::config(field, "lower bound exceeds upper bound"));
        }
        if self.std < 0.0 {
            return Err(Error::config(field, "std must be >= 0"));
        }
        if self.mean < self.lower || self.mean > self.upper {
            return Err(Error::config(field, "mean must lie inside the bounds"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lower == self.upper {
            return self.lower;
        }
        if self.std == 0.0 {
            return self.mean;
        }
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = self.mean + self.std * z;
            if x >= self.lower && x <= self.upper {
                return x;
            }
        }
    }

    /// Draws a value and rounds it to an integer hour inside the bounds.
    pub fn sample_hour<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let lo = self.lower.ceil();
        let hi = self.upper.floor().max(lo);
        self.sample(rng).round().clamp(lo, hi) as u32
    }
}

/// Per-vehicle SOC limits while parked.
///
/// The floor rises linearly from `soc_min` to `departure_soc_min` over the last
/// `ramp_slots` slots before departure, so the vehicle leaves inside
/// `[departure_soc_min, soc_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocBand {
    pub soc_min: f64,
    pub soc_max: f64,
    pub departure_soc_min: f64,
    pub ramp_slots: u32,
}

impl Default for SocBand {
    fn default() -> Self {
        Self {
            soc_min: 0.2,
            soc_max: 0.9,
            departure_soc_min: 0.8,
            ramp_slots: 3,
        }
    }
}

impl SocBand {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.soc_min
            && self.soc_min <= self.departure_soc_min
            && self.departure_soc_min <= self.soc_max
            && self.soc_max <= 1.0;
        if !ok {
            return Err(Error::config(
                "band",
                "need 0 <= soc_min <= departure_soc_min <= soc_max <= 1",
            ));
        }
        Ok(())
    }

    /// Nominal `(min, max)` SOC bounds for the end of slot `hour`.
    pub fn bounds_at(&self, ev: &EvRecord, hour: u32) -> (f64, f64) {
        let remaining = ev.slots_to_departure(hour);
        let min = if self.ramp_slots > 0 && remaining >= 1 && remaining <= self.ramp_slots {
            let steps = (self.ramp_slots - remaining + 1) as f64;
            self.soc_min + (self.departure_soc_min - self.soc_min) * steps / self.ramp_slots as f64
        } else {
            self.soc_min
        };
        (min, self.soc_max)
    }
}

/// Sets the record's bounds for slot `hour`.
///
/// The ramped floor is capped at what one slot of full-rate charging can reach.
pub fn refresh_bounds(ev: &mut EvRecord, band: &SocBand, hour: u32, dt_h: f64) {
    let (min, max) = band.bounds_at(ev, hour);
    let reachable = ev.soc + ev.p_ch_max_kw * dt_h / ev.capacity_kwh;
    ev.soc_min = min.min(reachable).min(max);
    ev.soc_max = max;
}

/// Parameters for sampling a fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub n_evs: usize,
    pub arrival: TruncatedNormal,
    pub departure: TruncatedNormal,
    pub initial_soc: TruncatedNormal,
    pub capacity_kwh: f64,
    pub p_ch_max_kw: f64,
    pub p_dis_max_kw: f64,
    pub band: SocBand,
    pub rng_seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            n_evs: 509,
            arrival: TruncatedNormal::new(18.0, 1.0, 15.0, 21.0),
            departure: TruncatedNormal::new(8.0, 1.0, 6.0, 10.0),
            initial_soc: TruncatedNormal::new(0.5, 0.1, 0.2, 0.8),
            capacity_kwh: 24.0,
            p_ch_max_kw: 6.0,
            p_dis_max_kw: -6.0,
            band: SocBand::default(),
            rng_seed: 0,
        }
    }
}

impl FleetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_evs == 0 {
            return Err(Error::config("n_evs", "must be >= 1"));
        }
        self.validate_distributions()
    }

    /// Every check except the fleet size.
    pub fn validate_distributions(&self) -> Result<()> {
        self.arrival.validate("arrival")?;
        self.departure.validate("departure")?;
        self.initial_soc.validate("initial_soc")?;
        for (name, d) in [("arrival", &self.arrival), ("departure", &self.departure)] {
            if d.lower < 0.0 || d.upper > (HOURS_PER_DAY - 1) as f64 {
                return Err(Error::config(name, "hours must lie in [0, 23]"));
            }
        }
        if self.departure.upper >= self.arrival.lower {
            return Err(Error::config(
                "departure",
                "departure window must end before the arrival window starts",
            ));
        }
        if !(self.capacity_kwh.is_finite() && self.capacity_kwh > 0.0) {
            return Err(Error::config("capacity_kwh", "must be positive"));
        }
        if !(self.p_ch_max_kw.is_finite() && self.p_ch_max_kw >= 0.0) {
            return Err(Error::config("p_ch_max_kw", "must be >= 0"));
        }
        if !(self.p_dis_max_kw.is_finite() && self.p_dis_max_kw <= 0.0) {
            return Err(Error::config("p_dis_max_kw", "must be <= 0"));
        }
        self.band.validate()?;
        if self.initial_soc.lower < self.band.soc_min || self.initial_soc.upper > self.band.soc_max {
            return Err(Error::config(
                "initial_soc",
                "bounds must lie inside [band.soc_min, band.soc_max]",
            ));
        }
        Ok(())
    }

    /// First hour of the day at which every vehicle has left.
    pub fn handover_hour(&self) -> u32 {
        self.departure.upper.floor() as u32 + 1
    }
}

/// Samples `config.n_evs` vehicles, each from its own stream keyed by `(rng_seed, id)`.
pub fn sample_fleet(config: &FleetConfig) -> Result<Vec<EvRecord>> {
    config.validate()?;
    Ok((0..config.n_evs as u32)
        .map(|id| sample_ev(config, config.rng_seed, id))
        .collect())
}

fn sample_ev(config: &FleetConfig, seed: u64, id: u32) -> EvRecord {
    let mut rng = seed::stream_rng(seed, id as u64);
    let arrival_slot = config.arrival.sample_hour(&mut rng);
    let departure_slot = config.departure.sample_hour(&mut rng);
    let soc = config.initial_soc.sample(&mut rng);
    EvRecord {
        id,
        capacity_kwh: config.capacity_kwh,
        p_ch_max_kw: config.p_ch_max_kw,
        p_dis_max_kw: config.p_dis_max_kw,
        soc,
        arrival_slot,
        departure_slot,
        soc_min: config.band.soc_min,
        soc_max: config.band.soc_max,
    }
}

/// Connection indicator per vehicle for one hour of the day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityMask(Vec<bool>);

impl AvailabilityMask {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

pub fn availability(fleet: &[EvRecord], timeslot: u32) -> Result<AvailabilityMask> {
    if timeslot >= HOURS_PER_DAY {
        return Err(Error::Domain(format!("timeslot {timeslot} outside [0, 23]")));
    }
    Ok(AvailabilityMask(
        fleet.iter().map(|ev| ev.is_connected(timeslot)).collect(),
    ))
}

/// Integrates one slot of power into the vehicle's SOC.
///
/// Never clamps: a command that would leave `[soc_min, soc_max]` is rejected.
pub fn apply_ev_power(ev: &EvRecord, power_kw: f64, dt_h: f64) -> Result<EvRecord> {
    let slack = 1e-12 * power_kw.abs().max(1.0);
    if !power_kw.is_finite()
        || power_kw > ev.p_ch_max_kw + slack
        || power_kw < ev.p_dis_max_kw - slack
    {
        return Err(Error::PowerLimit {
            id: ev.id,
            power_kw,
            min_kw: ev.p_dis_max_kw,
            max_kw: ev.p_ch_max_kw,
        });
    }
    let mut soc = ev.soc + power_kw * dt_h / ev.capacity_kwh;
    let overshoot = if soc > ev.soc_max {
        soc - ev.soc_max
    } else if soc < ev.soc_min {
        ev.soc_min - soc
    } else {
        0.0
    };
    if overshoot > SOC_TOLERANCE {
        return Err(Error::SocBound {
            id: ev.id,
            soc_after: soc,
            soc_min: ev.soc_min,
            soc_max: ev.soc_max,
            overshoot,
        });
    }
    if overshoot > 0.0 {
        soc = soc.clamp(ev.soc_min, ev.soc_max);
    }
    Ok(EvRecord { soc, ..ev.clone() })
}

#[derive(Debug, Serialize, Deserialize)]
struct FleetRow {
    id: u32,
    capacity_kwh: f64,
    p_ch_max_kw: f64,
    p_dis_max_kw: f64,
    soc: f64,
    arrival_slot: u32,
    departure_slot: u32,
}

/// Writes `id,capacity_kwh,p_ch_max_kw,p_dis_max_kw,soc,arrival_slot,departure_slot`.
pub fn write_fleet_csv<W: Write>(writer: W, fleet: &[EvRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for ev in fleet {
        w.serialize(FleetRow {
            id: ev.id,
            capacity_kwh: ev.capacity_kwh,
            p_ch_max_kw: ev.p_ch_max_kw,
            p_dis_max_kw: ev.p_dis_max_kw,
            soc: ev.soc,
            arrival_slot: ev.arrival_slot,
            departure_slot: ev.departure_slot,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a fleet CSV; SOC bounds are taken from `band`.
pub fn read_fleet_csv<R: Read>(reader: R, band: &SocBand) -> Result<Vec<EvRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut fleet = Vec::new();
    for row in r.deserialize() {
        let row: FleetRow = row?;
        let ev = EvRecord {
            id: row.id,
            capacity_kwh: row.capacity_kwh,
            p_ch_max_kw: row.p_ch_max_kw,
            p_dis_max_kw: row.p_dis_max_kw,
            soc: row.soc,
            arrival_slot: row.arrival_slot,
            departure_slot: row.departure_slot,
            soc_min: band.soc_min,
            soc_max: band.soc_max,
        };
        ev.validate()?;
        fleet.push(ev);
    }
    Ok(fleet)
}
