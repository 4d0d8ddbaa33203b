//! Aggregate EVA state and SOC-buffer-factor power allocation.
//!
//! Every connected vehicle receives the same buffer factor `kappa`: when charging,
//! its SOC rises by `kappa` times its remaining headroom `soc_max - soc`; when
//! discharging, it falls by `kappa` times its depth `soc - soc_min`. Vehicles that
//! would exceed their power or SOC limits are clipped and `kappa` is re-solved over
//! the rest so the commanded aggregate power is met exactly whenever it is feasible.
//!
//! The re-solve is done in one pass over the sorted clip breakpoints of the
//! piecewise-linear map `kappa -> sum of powers`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fleet::{apply_ev_power, AvailabilityMask, EvRecord};

/// Feasible aggregate power interval for one slot.
///
/// `discharge_kw` is the most negative achievable power. It turns positive when
/// the departure ramp forces some vehicles to charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEnvelope {
    pub discharge_kw: f64,
    pub charge_kw: f64,
}

impl PowerEnvelope {
    pub fn contains(&self, power_kw: f64) -> bool {
        let tol = 1e-9 * power_kw.abs().max(1.0);
        power_kw >= self.discharge_kw - tol && power_kw <= self.charge_kw + tol
    }

    pub fn width(&self) -> f64 {
        self.charge_kw - self.discharge_kw
    }
}

/// Aggregate view of the connected vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaState {
    pub soc: f64,
    pub connected_energy_kwh: f64,
    pub n_connected: usize,
    /// Capacity-weighted mean of the per-vehicle bounds.
    pub soc_min: f64,
    pub soc_max: f64,
    pub envelope: PowerEnvelope,
}

/// Per-vehicle outcome of disaggregating one EVA command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    /// Power per fleet index in kW (zero for disconnected vehicles).
    pub powers_kw: Vec<f64>,
    pub requested_kw: f64,
    pub applied_eva_power_kw: f64,
    pub kappa: f64,
    pub clipped_ids: Vec<u32>,
    /// The request was beyond the envelope and every vehicle sits at a limit.
    pub saturated: bool,
}

impl AllocationResult {
    pub fn total_kw(&self) -> f64 {
        self.powers_kw.iter().sum()
    }
}

/// Feasible power interval `(lo, hi)` of one vehicle for a slot of `dt_h` hours.
pub fn ev_power_limits(ev: &EvRecord, dt_h: f64) -> (f64, f64) {
    let per_soc = ev.capacity_kwh / dt_h;
    let hi = ev.p_ch_max_kw.min((ev.soc_max - ev.soc).max(0.0) * per_soc);
    let lo = ev.p_dis_max_kw.max((ev.soc_min - ev.soc) * per_soc).min(hi);
    (lo, hi)
}

fn check_mask(fleet: &[EvRecord], mask: &AvailabilityMask) -> Result<()> {
    if fleet.len() != mask.len() {
        return Err(Error::Domain(format!(
            "mask length {} does not match fleet size {}",
            mask.len(),
            fleet.len()
        )));
    }
    Ok(())
}

fn connected<'a>(
    fleet: &'a [EvRecord],
    mask: &'a AvailabilityMask,
) -> impl Iterator<Item = (usize, &'a EvRecord)> + 'a {
    fleet
        .iter()
        .enumerate()
        .filter(move |(i, _)| mask.get(*i))
}

/// EVA SOC after applying `eva_power_kw` for `dt_h` hours to the connected set.
pub fn compute_eva_soc(
    fleet: &[EvRecord],
    mask: &AvailabilityMask,
    eva_power_kw: f64,
    dt_h: f64,
) -> Result<f64> {
    check_mask(fleet, mask)?;
    let (mut stored, mut capacity) = (0.0, 0.0);
    for (_, ev) in connected(fleet, mask) {
        stored += ev.soc * ev.capacity_kwh;
        capacity += ev.capacity_kwh;
    }
    if capacity == 0.0 {
        return Err(Error::NoConnected);
    }
    Ok((eva_power_kw * dt_h + stored) / capacity)
}

pub fn power_envelope(fleet: &[EvRecord], mask: &AvailabilityMask, dt_h: f64) -> PowerEnvelope {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (i, ev) in fleet.iter().enumerate() {
        if mask.get(i) {
            let (l, h) = ev_power_limits(ev, dt_h);
            lo += l;
            hi += h;
        }
    }
    PowerEnvelope {
        discharge_kw: lo,
        charge_kw: hi,
    }
}

/// Snapshot of the connected set; `soc` is the capacity-weighted mean SOC.
pub fn eva_state(fleet: &[EvRecord], mask: &AvailabilityMask, dt_h: f64) -> Result<EvaState> {
    check_mask(fleet, mask)?;
    let mut s = EvaState {
        soc: 0.0,
        connected_energy_kwh: 0.0,
        n_connected: 0,
        soc_min: 0.0,
        soc_max: 0.0,
        envelope: power_envelope(fleet, mask, dt_h),
    };
    for (_, ev) in connected(fleet, mask) {
        s.n_connected += 1;
        s.connected_energy_kwh += ev.capacity_kwh;
        s.soc += ev.soc * ev.capacity_kwh;
        s.soc_min += ev.soc_min * ev.capacity_kwh;
        s.soc_max += ev.soc_max * ev.capacity_kwh;
    }
    if s.n_connected > 0 {
        s.soc /= s.connected_energy_kwh;
        s.soc_min /= s.connected_energy_kwh;
        s.soc_max /= s.connected_energy_kwh;
    }
    Ok(s)
}

/// One vehicle's contribution `clamp(kappa * buffer, floor, cap) - floor`.
#[derive(Debug, Clone, Copy)]
struct Lane {
    buffer: f64,
    floor: f64,
    cap: f64,
}

/// Smallest `kappa >= 0` whose summed lane contributions reach `target`, or `None` if the
/// lanes saturate below `target`.
fn solve_kappa(lanes: &[Lane], target: f64) -> Option<f64> {
    if target <= 0.0 {
        return Some(0.0);
    }
    // (kappa, slope change); lanes live from kappa = 0 start in the initial slope
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(2 * lanes.len());
    let mut slope = 0.0;
    for l in lanes.iter().filter(|l| l.buffer > 0.0 && l.cap > l.floor) {
        if l.floor > 0.0 {
            events.push((l.floor / l.buffer, l.buffer));
        } else {
            slope += l.buffer;
        }
        events.push((l.cap / l.buffer, -l.buffer));
    }
    events.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let (mut kappa, mut sum) = (0.0, 0.0);
    for (k, ds) in events {
        let reach = sum + slope * (k - kappa);
        if slope > 0.0 && reach >= target {
            return Some(kappa + (target - sum) / slope);
        }
        sum = reach;
        kappa = k;
        slope += ds;
    }
    None
}

/// Splits `eva_power_kw` over the connected vehicles with a common buffer factor.
///
/// A request outside the envelope is met as far as possible and flagged
/// `saturated`. A request pointing in a direction no vehicle can move is an
/// [`Error::Infeasible`] carrying the achievable total.
pub fn allocate(
    fleet: &[EvRecord],
    mask: &AvailabilityMask,
    eva_power_kw: f64,
    dt_h: f64,
) -> Result<AllocationResult> {
    check_mask(fleet, mask)?;
    if !eva_power_kw.is_finite() {
        return Err(Error::Numerical(format!("EVA power {eva_power_kw}")));
    }
    let idx: Vec<usize> = connected(fleet, mask).map(|(i, _)| i).collect();
    let limits: Vec<(f64, f64)> = idx.iter().map(|&i| ev_power_limits(&fleet[i], dt_h)).collect();
    // Power every vehicle must take at kappa = 0 (forced by the departure ramp).
    let forced: Vec<f64> = limits.iter().map(|&(lo, _)| lo.max(0.0)).collect();
    let forced_total: f64 = forced.iter().sum();
    let per_soc = |i: usize| fleet[i].capacity_kwh / dt_h;

    let charging = eva_power_kw >= forced_total;
    let (lanes, target): (Vec<Lane>, f64) = if charging {
        let lanes = idx
            .iter()
            .zip(&limits)
            .zip(&forced)
            .map(|((&i, &(_, hi)), &m)| Lane {
                buffer: (fleet[i].soc_max - fleet[i].soc).max(0.0) * per_soc(i),
                floor: m,
                cap: hi,
            })
            .collect();
        (lanes, eva_power_kw - forced_total)
    } else {
        let lanes = idx
            .iter()
            .zip(&limits)
            .map(|(&i, &(lo, _))| {
                if lo > 0.0 {
                    Lane {
                        buffer: 0.0,
                        floor: 0.0,
                        cap: 0.0,
                    }
                } else {
                    Lane {
                        buffer: (fleet[i].soc - fleet[i].soc_min).max(0.0) * per_soc(i),
                        floor: 0.0,
                        cap: -lo,
                    }
                }
            })
            .collect();
        (lanes, forced_total - eva_power_kw)
    };

    let capacity: f64 = lanes.iter().map(|l| l.cap - l.floor).sum();
    if target > 0.0 && capacity <= 0.0 {
        return Err(Error::Infeasible {
            requested_kw: eva_power_kw,
            achievable_kw: forced_total,
        });
    }

    let (kappa, saturated) = match solve_kappa(&lanes, target) {
        Some(k) => (k, false),
        None => {
            let k = lanes
                .iter()
                .filter(|l| l.buffer > 0.0)
                .map(|l| l.cap / l.buffer)
                .fold(0.0, f64::max);
            (k, true)
        }
    };

    let sign = if charging { 1.0 } else { -1.0 };
    let mut powers_kw = vec![0.0; fleet.len()];
    let mut clipped_ids = Vec::new();
    let mut kappa = kappa;
    let place = |kappa: f64, powers_kw: &mut [f64]| {
        for ((&i, lane), &m) in idx.iter().zip(&lanes).zip(&forced) {
            let p = (kappa * lane.buffer).clamp(lane.floor, lane.cap);
            powers_kw[i] = if charging { p } else { m - p };
        }
    };
    place(kappa, &mut powers_kw);

    if !saturated {
        // One refinement pass over the unclipped lanes removes accumulated rounding.
        let residual = eva_power_kw - powers_kw.iter().sum::<f64>();
        let free_buffer: f64 = lanes
            .iter()
            .filter(|l| {
                let p = kappa * l.buffer;
                l.buffer > 0.0 && p > l.floor && p < l.cap
            })
            .map(|l| l.buffer)
            .sum();
        if residual != 0.0 && free_buffer > 0.0 {
            kappa += sign * residual / free_buffer;
            place(kappa, &mut powers_kw);
        }
    }

    for (&i, lane) in idx.iter().zip(&lanes) {
        let ideal = sign * kappa * lane.buffer;
        if powers_kw[i] != ideal {
            clipped_ids.push(fleet[i].id);
        }
    }

    let applied = if saturated {
        powers_kw.iter().sum()
    } else {
        eva_power_kw
    };
    Ok(AllocationResult {
        powers_kw,
        requested_kw: eva_power_kw,
        applied_eva_power_kw: applied,
        kappa,
        clipped_ids,
        saturated,
    })
}

/// One simulator tick: allocate, then integrate every connected vehicle.
///
/// Returns the updated fleet, the post-step aggregate state (its `soc` is the
/// EVA SOC prediction for the applied power; bounds and envelope are the ones
/// in force during the slot) and the allocation. The input fleet is untouched on error.
pub fn step_aggregate(
    fleet: &[EvRecord],
    mask: &AvailabilityMask,
    eva_power_kw: f64,
    dt_h: f64,
) -> Result<(Vec<EvRecord>, EvaState, AllocationResult)> {
    let before = eva_state(fleet, mask, dt_h)?;
    if !before.envelope.contains(eva_power_kw) {
        let achievable = eva_power_kw.clamp(before.envelope.discharge_kw, before.envelope.charge_kw);
        return Err(Error::Infeasible {
            requested_kw: eva_power_kw,
            achievable_kw: achievable,
        });
    }
    let alloc = allocate(fleet, mask, eva_power_kw, dt_h)?;
    let mut next = Vec::with_capacity(fleet.len());
    for (i, ev) in fleet.iter().enumerate() {
        if mask.get(i) {
            next.push(apply_ev_power(ev, alloc.powers_kw[i], dt_h)?);
        } else {
            next.push(ev.clone());
        }
    }
    let state = if before.n_connected > 0 {
        EvaState {
            soc: compute_eva_soc(fleet, mask, alloc.applied_eva_power_kw, dt_h)?,
            ..before
        }
    } else {
        before
    };
    Ok((next, state, alloc))
}

#[derive(Serialize)]
struct AllocationRow {
    slot: usize,
    ev_id: u32,
    power_kw: f64,
    soc_after: f64,
}

/// Writes `slot,ev_id,power_kw,soc_after` rows for the connected vehicles.
pub fn write_allocation_csv<W: Write>(
    writer: W,
    slot: usize,
    fleet_after: &[EvRecord],
    mask: &AvailabilityMask,
    alloc: &AllocationResult,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (i, ev) in connected(fleet_after, mask) {
        w.serialize(AllocationRow {
            slot,
            ev_id: ev.id,
            power_kw: alloc.powers_kw[i],
            soc_after: ev.soc,
        })?;
    }
    w.flush()?;
    Ok(())
}
