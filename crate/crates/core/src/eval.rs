//! Uncontrolled-charging baseline, episode evaluation and report rendering.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aggregator::{allocate, ev_power_limits, power_envelope, AllocationResult};
use crate::env::{EpisodeSpec, Mode, Normalization, TraceRow, V2gEnv, DT_H};
use crate::error::{Error, Result};
use crate::fleet::{AvailabilityMask, EvRecord};
use crate::grid;
use crate::ppo::{act_greedy, Actor, Checkpoint};

/// Full-rate charging of every parked vehicle until it reaches its upper SOC bound.
pub fn uncontrolled_policy(fleet: &[EvRecord], mask: &AvailabilityMask) -> f64 {
    fleet
        .iter()
        .enumerate()
        .filter(|(i, _)| mask.get(*i))
        .map(|(_, ev)| ev_power_limits(ev, DT_H).1)
        .sum()
}

#[derive(Debug, Clone)]
pub enum Policy {
    Uncontrolled,
    /// Actor mean, fed through `normalization` rescaled to the evaluated load level.
    Greedy {
        actor: Actor,
        normalization: Normalization,
    },
}

impl Policy {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let net = ckpt.networks()?;
        net.check_dims(crate::env::OBS_DIM)?;
        Ok(Policy::Greedy {
            actor: net.actor,
            normalization: ckpt.obs_normalizer.clone(),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Policy::Uncontrolled => "uncontrolled",
            Policy::Greedy { .. } => "ppo",
        }
    }
}

/// Greedy action, envelope and allocation for one slot.
pub fn schedule_once(
    actor: &Actor,
    observation: &[f64],
    fleet: &[EvRecord],
    mask: &AvailabilityMask,
) -> Result<AllocationResult> {
    let a = act_greedy(actor, observation)?;
    let env = power_envelope(fleet, mask, DT_H);
    let p = env.discharge_kw + a * (env.charge_kw - env.discharge_kw);
    allocate(fleet, mask, p, DT_H)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocQuantiles {
    pub slot: usize,
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data (`(n - 1) p` rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantiles of the parked vehicles' SOC per slot; slots with nobody parked are skipped.
pub fn soc_distribution_trace(per_slot: &[(usize, Vec<f64>)]) -> Vec<SocQuantiles> {
    per_slot
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(slot, socs)| {
            let mut v = socs.clone();
            v.sort_by(f64::total_cmp);
            SocQuantiles {
                slot: *slot,
                n: v.len(),
                min: v[0],
                q25: quantile_sorted(&v, 0.25),
                q50: quantile_sorted(&v, 0.5),
                q75: quantile_sorted(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeStats {
    pub max_charge_kw: f64,
    pub min_discharge_kw: f64,
    pub mean_width_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepartureStats {
    pub count: usize,
    pub soc_min: f64,
    pub soc_mean: f64,
    /// Departures below the band's departure target.
    pub below_target: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: String,
    pub mode: Mode,
    pub seed: u64,
    pub n_evs: usize,
    /// Trailing-window variance at the last arrival hour of the first day.
    pub arrival_variance_kw2: f64,
    /// Trailing-window variance at the final slot.
    pub departure_variance_kw2: f64,
    /// Variance of every total load in the episode.
    pub episode_variance_kw2: f64,
    pub peak_kw: f64,
    pub valley_kw: f64,
    pub total_cost: f64,
    pub soc_violations: usize,
    pub envelope: EnvelopeStats,
    pub departures: DepartureStats,
    pub soc_quantiles: Vec<SocQuantiles>,
    pub trace: Vec<TraceRow>,
    /// Wall-clock timings; only filled on request, so reports stay reproducible otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencyStats>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub measure_latency: bool,
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

pub fn evaluate(policy: &Policy, spec: &EpisodeSpec, seed: u64) -> Result<EvaluationReport> {
    evaluate_with(policy, spec, seed, EvalOptions::default())
}

/// Runs one deterministic episode under `policy` and computes the report.
pub fn evaluate_with(
    policy: &Policy,
    spec: &EpisodeSpec,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvaluationReport> {
    let spec = match policy {
        Policy::Greedy { normalization, .. } => EpisodeSpec {
            normalization: normalization.rescaled(spec.scenario.mean_baseload_kw()),
            ..spec.clone()
        },
        Policy::Uncontrolled => spec.clone(),
    };
    let mut env = V2gEnv::new(spec.clone())?;
    let mut obs = env.reset(seed)?;
    let arrival_hour = spec.fleet.arrival.upper.floor() as u32;
    let departure_floor = spec.fleet.band.departure_soc_min;

    let mut trace = Vec::new();
    let mut per_slot = Vec::new();
    let mut hours = Vec::new();
    let mut allocations = Vec::new();
    let mut violations = 0;
    let mut arrival_variance = None;
    let (mut max_ch, mut min_dis, mut width_sum) = (0.0f64, 0.0f64, 0.0);
    let mut departed = Vec::new();
    let mut timings = Vec::new();
    let mut window = Vec::new();

    while !env.is_done() {
        let before_mask = env.mask().clone();
        let envelope = env.envelope();
        max_ch = max_ch.max(envelope.charge_kw);
        min_dis = min_dis.min(envelope.discharge_kw);
        width_sum += envelope.charge_kw - envelope.discharge_kw;
        let power = match policy {
            Policy::Uncontrolled => uncontrolled_policy(env.fleet(), env.mask()),
            Policy::Greedy { actor, .. } => {
                if opts.measure_latency {
                    let t0 = Instant::now();
                    schedule_once(actor, &obs.normalized, env.fleet(), env.mask())?;
                    timings.push(t0.elapsed().as_secs_f64() * 1e3);
                }
                env.action_to_power(act_greedy(actor, &obs.normalized)?)
            }
        };
        let t = env.step_with_power(power)?;
        violations += t.info.soc_violations;
        hours.push(t.info.hour);
        allocations.push(t.info.allocation.clone());
        if arrival_variance.is_none() && t.info.hour == arrival_hour {
            arrival_variance = Some(t.info.variance_kw2);
        }
        let fleet = env.fleet();
        let socs: Vec<f64> = fleet
            .iter()
            .enumerate()
            .filter(|(i, _)| before_mask.get(*i))
            .map(|(_, ev)| ev.soc)
            .collect();
        per_slot.push((t.info.slot, socs));
        if !t.done && fleet.len() == before_mask.len() {
            for (i, ev) in fleet.iter().enumerate() {
                if before_mask.get(i) && !env.mask().get(i) && env.hour() != spec.handover_hour() {
                    departed.push(ev.soc);
                }
            }
        }
        trace.push(t.info.trace.clone());
        window = t.observation.raw[..grid::WINDOW].to_vec();
        obs = t.observation;
    }

    let departure_variance = grid::load_variance(&window)?;
    let (peak_kw, valley_kw) = grid::peak_valley(&window)?;
    let totals: Vec<f64> = trace.iter().map(|r| r.total_load_kw).collect();
    let total_cost = grid::charging_cost(&hours, &allocations, &spec.scenario.tariff, DT_H)?;
    let steps = trace.len().max(1) as f64;
    let departures = DepartureStats {
        count: departed.len(),
        soc_min: departed.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
        soc_mean: if departed.is_empty() {
            0.0
        } else {
            departed.iter().sum::<f64>() / departed.len() as f64
        },
        below_target: departed.iter().filter(|s| **s < departure_floor - 1e-9).count(),
    };
    let latency = if timings.is_empty() {
        None
    } else {
        let mut t = timings.clone();
        t.sort_by(f64::total_cmp);
        Some(LatencyStats {
            samples: t.len(),
            median_ms: quantile_sorted(&t, 0.5),
            p95_ms: quantile_sorted(&t, 0.95),
            max_ms: t[t.len() - 1],
        })
    };
    Ok(EvaluationReport {
        policy: policy.label().to_string(),
        mode: spec.mode,
        seed,
        n_evs: spec.fleet.n_evs,
        arrival_variance_kw2: arrival_variance.unwrap_or(departure_variance),
        departure_variance_kw2: departure_variance,
        episode_variance_kw2: population_variance(&totals),
        peak_kw,
        valley_kw,
        total_cost,
        soc_violations: violations,
        envelope: EnvelopeStats {
            max_charge_kw: max_ch,
            min_discharge_kw: min_dis,
            mean_width_kw: width_sum / steps,
        },
        departures,
        soc_quantiles: soc_distribution_trace(&per_slot),
        trace,
        latency,
    })
}

/// Percentage reduction of `value` relative to `reference`.
pub fn reduction_pct(reference: f64, value: f64) -> f64 {
    if reference == 0.0 {
        return 0.0;
    }
    (reference - value) / reference.abs() * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mode: Mode,
    pub seed: u64,
    pub variance_reduction_pct: f64,
    pub episode_variance_reduction_pct: f64,
    pub cost_reduction_pct: f64,
    pub policy: EvaluationReport,
    pub baseline: EvaluationReport,
}

/// Evaluates `policy` and the uncontrolled baseline on the same spec and seed.
pub fn compare(policy: &Policy, spec: &EpisodeSpec, seed: u64, opts: EvalOptions) -> Result<Comparison> {
    let p = evaluate_with(policy, spec, seed, opts)?;
    let b = evaluate(&Policy::Uncontrolled, spec, seed)?;
    Ok(comparison(p, b))
}

pub fn comparison(policy: EvaluationReport, baseline: EvaluationReport) -> Comparison {
    Comparison {
        mode: policy.mode,
        seed: policy.seed,
        variance_reduction_pct: reduction_pct(
            baseline.departure_variance_kw2,
            policy.departure_variance_kw2,
        ),
        episode_variance_reduction_pct: reduction_pct(
            baseline.episode_variance_kw2,
            policy.episode_variance_kw2,
        ),
        cost_reduction_pct: reduction_pct(baseline.total_cost, policy.total_cost),
        policy,
        baseline,
    }
}

/// Comparison table with one row per policy.
pub fn render_markdown(c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Method | Departure variance (kW²) | Variance reduction (%) | Peak (kW) | Valley (kW) | Cost | Cost reduction (%) | SOC violations |");
    let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|---:|");
    for (r, var_red, cost_red) in [
        (&c.baseline, 0.0, 0.0),
        (&c.policy, c.variance_reduction_pct, c.cost_reduction_pct),
    ] {
        let _ = writeln!(
            s,
            "| {} | {:.1} | {:.2} | {:.1} | {:.1} | {:.2} | {:.2} | {} |",
            r.policy, r.departure_variance_kw2, var_red, r.peak_kw, r.valley_kw, r.total_cost, cost_red, r.soc_violations
        );
    }
    s
}

/// Rejects an actor whose input size differs from the observation size.
pub fn check_policy(policy: &Policy) -> Result<()> {
    if let Policy::Greedy { actor, .. } = policy {
        if actor.net.input_dim() != crate::env::OBS_DIM {
            return Err(Error::config("checkpoint", "observation dimension mismatch"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::availability;
    use crate::presets;

    fn ev(id: u32, soc: f64) -> EvRecord {
        EvRecord {
            id,
            capacity_kwh: 24.0,
            p_ch_max_kw: 6.0,
            p_dis_max_kw: -6.0,
            soc,
            arrival_slot: 18,
            departure_slot: 8,
            soc_min: 0.2,
            soc_max: 0.9,
        }
    }

    #[test]
    fn uncontrolled_reference_values() {
        let full: Vec<EvRecord> = (0..5).map(|i| ev(i, 0.9)).collect();
        assert_eq!(uncontrolled_policy(&full, &AvailabilityMask::all(5)), 0.0);
        let fresh: Vec<EvRecord> = (0..509).map(|i| ev(i, 0.3)).collect();
        let p = uncontrolled_policy(&fresh, &AvailabilityMask::all(509));
        assert!((p - 3054.0).abs() < 1e-9);
        let mixed = vec![ev(0, 0.85), ev(1, 0.5)];
        let m = availability(&mixed, 20).unwrap();
        assert!((uncontrolled_policy(&mixed, &m) - (0.05 * 24.0 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let q = soc_distribution_trace(&[(3, vec![0.4]), (4, vec![]), (5, vec![0.5; 4])]);
        assert_eq!(q.len(), 2);
        assert_eq!((q[0].min, q[0].q50, q[0].max), (0.4, 0.4, 0.4));
        assert_eq!(q[1].q75 - q[1].q25, 0.0);
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
    }

    #[test]
    fn self_comparison_is_zero() {
        let spec = presets::desk_spec();
        let a = evaluate(&Policy::Uncontrolled, &spec, 5).unwrap();
        let b = evaluate(&Policy::Uncontrolled, &spec, 5).unwrap();
        let c = comparison(a, b);
        assert_eq!(c.variance_reduction_pct, 0.0);
        assert_eq!(c.cost_reduction_pct, 0.0);
        assert_eq!(c.policy.soc_violations, 0);
        assert!(render_markdown(&c).lines().count() == 4);
    }

    #[test]
    fn empty_fleet_sees_bare_grid() {
        let mut spec = presets::res_spec(50);
        spec.fleet.n_evs = 0;
        let r = evaluate(&Policy::Uncontrolled, &spec, 1).unwrap();
        for row in &r.trace {
            assert_eq!(row.eva_power_kw, 0.0);
            assert!((row.total_load_kw - (row.baseload_kw - row.pv_kw - row.wt_kw)).abs() < 1e-9);
        }
    }

    #[test]
    fn uncontrolled_raises_evening_peak() {
        let spec = presets::desk_spec();
        let r = evaluate(&Policy::Uncontrolled, &spec, 2).unwrap();
        let base_peak = spec.scenario.baseload_kw.iter().copied().fold(0.0, f64::max);
        assert!(r.peak_kw > base_peak);
        assert_eq!(r.departures.below_target, 0);
        assert_eq!(r.trace.len(), 20);
    }
}
