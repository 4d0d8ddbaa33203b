//! One pass/fail line per acceptance criterion. Exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v2g_core::aggregator::{allocate, ev_power_limits, power_envelope, step_aggregate};
use v2g_core::env::{EpisodeSpec, V2gEnv, DT_H};
use v2g_core::eval::{compare, evaluate, schedule_once, EvalOptions, Policy};
use v2g_core::fleet::{refresh_bounds, AvailabilityMask, EvRecord, SocBand};
use v2g_core::grid::{pv_output, wind_curve, PvParams, WtParams};
use v2g_core::ppo::checkpoint::Checkpoint;
use v2g_core::ppo::gae;
use v2g_core::ppo::loss::{ppo_loss, Batch, LossCoefficients};
use v2g_core::ppo::mlp::Mlp;
use v2g_core::ppo::policy::{log_prob, sigmoid, Actor, ActorCritic};
use v2g_core::ppo::train::write_report_jsonl;
use v2g_core::ppo::{PpoConfig, Trainer, TrainingReport};
use v2g_core::presets;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- fleets

struct Case {
    fleet: Vec<EvRecord>,
    mask: AvailabilityMask,
    command_kw: f64,
}

fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = 10f64.powf(rng.random_range(1.0..=4.0)).round() as usize;
    let band = SocBand::default();
    let hours: Vec<u32> = (15..24).chain(0..10).collect();
    let hour = hours[rng.random_range(0..hours.len())];
    let fleet: Vec<EvRecord> = (0..n as u32)
        .map(|id| {
            let mut ev = EvRecord {
                id,
                capacity_kwh: rng.random_range(16.0..80.0),
                p_ch_max_kw: rng.random_range(3.0..11.0),
                p_dis_max_kw: -rng.random_range(3.0..11.0),
                soc: rng.random_range(0.2..=0.9),
                arrival_slot: rng.random_range(15..=21),
                departure_slot: rng.random_range(6..=10),
                soc_min: band.soc_min,
                soc_max: band.soc_max,
            };
            refresh_bounds(&mut ev, &band, hour, DT_H);
            ev
        })
        .collect();
    let mask = AvailabilityMask::from_flags(fleet.iter().map(|e| e.is_connected(hour)).collect());
    let env = power_envelope(&fleet, &mask, DT_H);
    let u = match rng.random_range(0..20) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..=1.0),
    };
    Case {
        command_kw: env.discharge_kw + u * env.width(),
        fleet,
        mask,
    }
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11C);
    (0..1000).map(|_| random_case(&mut rng)).collect()
}

fn c1_allocation(cases: &[Case]) -> Outcome {
    let t0 = Instant::now();
    let (mut worst_sum, mut worst_kappa, mut evs) = (0.0f64, 0.0f64, 0usize);
    for (k, c) in cases.iter().enumerate() {
        evs += c.fleet.len();
        let a = allocate(&c.fleet, &c.mask, c.command_kw, DT_H)
            .map_err(|e| format!("case {k}: {e}"))?;
        let scale = c.command_kw.abs().max(1.0);
        let sum_err = (a.total_kw() - a.applied_eva_power_kw).abs() / scale;
        let cmd_err = (a.applied_eva_power_kw - c.command_kw).abs() / scale;
        worst_sum = worst_sum.max(sum_err).max(cmd_err);

        let forced: f64 = c
            .fleet
            .iter()
            .enumerate()
            .filter(|(i, _)| c.mask.get(*i))
            .map(|(_, e)| ev_power_limits(e, DT_H).0.max(0.0))
            .sum();
        let charging = c.command_kw >= forced;
        let kappas: Vec<f64> = c
            .fleet
            .iter()
            .enumerate()
            .filter(|(i, e)| c.mask.get(*i) && !a.clipped_ids.contains(&e.id))
            .filter_map(|(i, e)| {
                let buffer = if charging {
                    e.soc_max - e.soc
                } else {
                    e.soc - e.soc_min
                } * e.capacity_kwh
                    / DT_H;
                (buffer > 1e-9).then(|| a.powers_kw[i].abs() / buffer)
            })
            .collect();
        if let (Some(lo), Some(hi)) = (
            kappas.iter().copied().reduce(f64::min),
            kappas.iter().copied().reduce(f64::max),
        ) {
            worst_kappa = worst_kappa.max(hi - lo);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!(
        "{} fleets, {evs} EVs, max rel power error {worst_sum:.2e}, max kappa spread {worst_kappa:.2e}, {secs:.1}s",
        cases.len()
    );
    check(worst_sum <= 1e-9 && worst_kappa <= 1e-9 && secs < 30.0, || detail.clone())?;
    Ok(detail)
}

fn c3_aggregate(cases: &[Case]) -> Outcome {
    let mut worst = 0.0f64;
    for (k, c) in cases.iter().enumerate() {
        if c.mask.count() == 0 {
            continue;
        }
        let (next, state, _) = step_aggregate(&c.fleet, &c.mask, c.command_kw, DT_H)
            .map_err(|e| format!("case {k}: {e}"))?;
        let (mut e, mut q) = (0.0, 0.0);
        for (i, ev) in next.iter().enumerate().filter(|(i, _)| c.mask.get(*i)) {
            e += ev.soc * ev.capacity_kwh;
            q += ev.capacity_kwh;
            debug_assert_eq!(ev.id, c.fleet[i].id);
        }
        worst = worst.max((state.soc - e / q).abs());
    }
    let detail = format!("max |predicted - integrated| EVA SOC {worst:.2e}");
    check(worst <= 1e-9, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- SOC safety

fn c2_soc_safety() -> Outcome {
    let per_mode = 25_000;
    let specs = [
        presets::baseload_spec(50),
        presets::res_spec(50),
        presets::weekly_spec(50, true),
        presets::large_scale_spec(presets::LARGE_SCALE_FLEETS[0]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0x50C);
    let (mut ev_viol, mut agg_viol, mut steps, mut checked) = (0usize, 0usize, 0usize, 0usize);
    for spec in specs {
        let handover = spec.handover_hour();
        let mut env = V2gEnv::new(spec).map_err(|e| e.to_string())?;
        let mut done = true;
        let mut episode = 0u64;
        for _ in 0..per_mode {
            if done {
                env.reset(episode).map_err(|e| e.to_string())?;
                episode += 1;
            }
            let before = env.fleet().to_vec();
            let mask = env.mask().clone();
            let action = match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..=1.0),
            };
            let t = env.step(action).map_err(|e| e.to_string())?;
            done = t.done;
            steps += 1;
            ev_viol += t.info.soc_violations;
            if mask.count() == 0 {
                continue;
            }
            let after = env.fleet();
            if env.hour() == handover && !t.done {
                return Err("vehicles connected across the fleet handover".into());
            }
            let (mut q, mut lo, mut hi) = (0.0, 0.0, 0.0);
            for (i, (b, a)) in before.iter().zip(after).enumerate() {
                if !mask.get(i) {
                    continue;
                }
                checked += 1;
                if a.soc < b.soc_min - 1e-12 || a.soc > b.soc_max + 1e-12 {
                    ev_viol += 1;
                }
                q += b.capacity_kwh;
                lo += b.soc_min * b.capacity_kwh;
                hi += b.soc_max * b.capacity_kwh;
            }
            let soc = t.info.eva_soc;
            if soc < lo / q - 1e-12 || soc > hi / q + 1e-12 {
                agg_viol += 1;
            }
        }
    }
    let detail = format!(
        "{steps} steps over 4 modes, {checked} vehicle-slots checked, {ev_viol} vehicle and {agg_viol} aggregate violations"
    );
    check(ev_viol == 0 && agg_viol == 0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- gradients

struct GradCase {
    net: ActorCritic,
    obs: Vec<Vec<f64>>,
    actions: Vec<f64>,
    old: Vec<f64>,
    adv: Vec<f64>,
    targets: Vec<f64>,
    coeffs: LossCoefficients,
}

impl GradCase {
    fn batch(&self) -> Batch<'_> {
        Batch {
            observations: &self.obs,
            actions: &self.actions,
            old_log_probs: &self.old,
            advantages: &self.adv,
            value_targets: &self.targets,
        }
    }

    fn loss(&self, net: &ActorCritic) -> f64 {
        ppo_loss(net, &self.batch(), &self.coeffs).unwrap().0.loss
    }
}

/// Smallest |pre-activation| over every hidden unit and observation.
fn min_hidden_preactivation(net: &Mlp, obs: &[Vec<f64>]) -> f64 {
    let sizes = net.sizes().to_vec();
    let mut m = f64::INFINITY;
    for x in obs {
        let mut h = x.clone();
        for l in 0..sizes.len() - 2 {
            let (w, b) = net.layer(l);
            let n_in = sizes[l];
            let z: Vec<f64> = (0..sizes[l + 1])
                .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * h[i]).sum::<f64>())
                .collect();
            m = m.min(z.iter().fold(f64::INFINITY, |a, v| a.min(v.abs())));
            h = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    m
}

fn random_grad_case(rng: &mut ChaCha8Rng) -> GradCase {
    loop {
        let n_in = rng.random_range(3..=8);
        let mut sizes = vec![n_in];
        for _ in 0..rng.random_range(1..=2) {
            sizes.push(rng.random_range(4..=12));
        }
        sizes.push(1);
        let net = ActorCritic {
            actor: Actor {
                net: Mlp::random(&sizes, 1.0, rng).unwrap(),
                log_std: rng.random_range(-2.0..0.5),
            },
            critic: Mlp::random(&sizes, 1.0, rng).unwrap(),
        };
        let n = rng.random_range(4..=32);
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let actions: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let coeffs = LossCoefficients {
            clip_eps: rng.random_range(0.1..0.3),
            value_coeff: rng.random_range(0.25..1.0),
            entropy_coeff: rng.random_range(0.0..0.05),
        };
        let mut old = Vec::with_capacity(n);
        let mut near_kink = false;
        for (o, &a) in obs.iter().zip(&actions) {
            let m = sigmoid(net.actor.net.forward(o).unwrap()[0]);
            let lp = log_prob(a, m, net.actor.log_std);
            let shift: f64 = rng.random_range(-0.5..0.5);
            let ratio = (-shift).exp();
            near_kink |= (ratio - 1.0 - coeffs.clip_eps).abs() < 1e-2
                || (ratio - 1.0 + coeffs.clip_eps).abs() < 1e-2;
            old.push(lp + shift);
        }
        let kinky = near_kink
            || min_hidden_preactivation(&net.actor.net, &obs) < 1e-2
            || min_hidden_preactivation(&net.critic, &obs) < 1e-2;
        if kinky {
            continue;
        }
        return GradCase {
            net,
            obs,
            actions,
            old,
            adv: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            targets: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            coeffs,
        };
    }
}

/// Central difference with one Richardson step.
fn richardson(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn c4_gradients() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut params = 0;
    for _ in 0..50 {
        let c = random_grad_case(&mut rng);
        let (_, g) = ppo_loss(&c.net, &c.batch(), &c.coeffs).map_err(|e| e.to_string())?;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
        let flat = c.net.actor.flat();
        for k in 0..flat.len() {
            let fd = richardson(
                |d| {
                    let mut p = c.net.clone();
                    let mut f = flat.clone();
                    f[k] += d;
                    p.actor.set_flat(&f);
                    c.loss(&p)
                },
                h,
            );
            worst = worst.max(rel(g.actor[k], fd));
        }
        for k in 0..c.net.critic.len() {
            let fd = richardson(
                |d| {
                    let mut p = c.net.clone();
                    p.critic.params_mut()[k] += d;
                    c.loss(&p)
                },
                h,
            );
            worst = worst.max(rel(g.critic[k], fd));
        }
        params += flat.len() + c.net.critic.len();
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!("50 nets, {params} parameters, max relative error {worst:.2e}, {secs:.1}s");
    check(worst <= 1e-4 && secs < 120.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- GAE

fn td_errors(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|k| {
            let next = if d[k] {
                0.0
            } else if k + 1 == n {
                boot
            } else {
                v[k + 1]
            };
            r[k] + g * next - v[k]
        })
        .collect()
}

fn c5_gae() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AE);
    let (mut worst, mut lambda_zero_exact) = (0.0f64, true);
    for _ in 0..1000 {
        let n = 20;
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        let boot = rng.random_range(-10.0..10.0);
        let g = rng.random_range(0.8..=1.0);
        let l = rng.random_range(0.0..=1.0);
        let delta = td_errors(&r, &v, &d, boot, g);
        let a = gae::gae(&r, &v, &d, boot, g, l).map_err(|e| e.to_string())?;
        for t in 0..n {
            let mut want = 0.0;
            let mut w = 1.0;
            for k in t..n {
                want += w * delta[k];
                if d[k] {
                    break;
                }
                w *= g * l;
            }
            worst = worst.max((a[t] - want).abs());
        }
        let a0 = gae::gae(&r, &v, &d, boot, g, 0.0).map_err(|e| e.to_string())?;
        lambda_zero_exact &= a0 == delta;
    }
    let detail = format!("1000 trajectories, max abs error {worst:.2e}, lambda=0 equals delta exactly: {lambda_zero_exact}");
    check(worst <= 1e-10 && lambda_zero_exact, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- piecewise models

fn c6_piecewise() -> Outcome {
    let wt = WtParams {
        p_rated_kw: 450.0,
        v_cut_in: 3.0,
        v_rated: 12.0,
        v_cut_out: 25.0,
        wind_ms: vec![],
    };
    let closed = |v: f64| {
        if (0.0..=wt.v_cut_in).contains(&v) || v >= wt.v_cut_out {
            0.0
        } else if v <= wt.v_rated {
            (v - wt.v_cut_in) / (wt.v_rated - wt.v_cut_in) * wt.p_rated_kw
        } else {
            wt.p_rated_kw
        }
    };
    let eps = 1e-9;
    let points = [
        (wt.v_cut_in, 0.0),
        (0.5 * (wt.v_cut_in + wt.v_rated), 0.5 * wt.p_rated_kw),
        (wt.v_rated, wt.p_rated_kw),
        (wt.v_cut_out - eps, wt.p_rated_kw),
        (wt.v_cut_out, 0.0),
        (0.0, 0.0),
    ];
    let mut worst = 0.0f64;
    for (v, expected) in points {
        let p = wind_curve(&wt, v);
        worst = worst.max((p - expected).abs()).max((p - closed(v)).abs());
    }
    let pv = PvParams {
        p_rated_kw: 105.0,
        irradiance: vec![],
        irradiance_std: 1000.0,
        temperature_c: vec![],
        temp_coeff: -0.0045,
        temp_ref_c: 25.0,
    };
    worst = worst.max((pv_output(&pv, 1000.0, 25.0) - 105.0).abs());
    for (irr, t) in [(800.0, 25.0), (1000.0, 40.0), (350.0, 12.5)] {
        let want = 105.0 * (irr / 1000.0) * (1.0 + -0.0045 * (t - 25.0));
        worst = worst.max((pv_output(&pv, irr, t) - want).abs());
    }
    let detail = format!("6 wind points and 4 PV points, max abs error {worst:.1e} kW");
    check(worst <= 1e-12, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- training

const EVAL_SEEDS: [u64; 5] = [1_000_000, 1_000_001, 1_000_002, 1_000_003, 1_000_004];

struct Trained {
    checkpoint: Checkpoint,
    spec: EpisodeSpec,
}

fn c7_training(out: &mut Option<Trained>) -> Outcome {
    let spec = presets::desk_training_spec().map_err(|e| e.to_string())?;
    let cfg = PpoConfig::desk();
    let t0 = Instant::now();
    let mut trainer = Trainer::new(spec.clone(), cfg.clone()).map_err(|e| e.to_string())?;
    let report = trainer
        .run(&mut |_| Ok(()), None, &mut |_| {})
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let checkpoint = trainer.checkpoint();
    let policy = Policy::from_checkpoint(&checkpoint).map_err(|e| e.to_string())?;

    let mut reductions = Vec::new();
    for s in EVAL_SEEDS {
        let c = compare(&policy, &spec, s, EvalOptions::default()).map_err(|e| e.to_string())?;
        reductions.push(c.variance_reduction_pct);
    }
    let blocks: Vec<f64> = report
        .records
        .chunks(5000)
        .filter(|c| c.len() == 5000)
        .map(|c| c.iter().map(|r| r.reward).sum::<f64>() / 5000.0)
        .collect();
    let monotone = blocks.windows(2).all(|w| w[1] >= w[0]);
    *out = Some(Trained { checkpoint, spec });

    let min_red = reductions.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "{} episodes in {:.0}s, departure-window variance reduction {} (min {min_red:.1}%), 5000-episode reward means {}",
        report.records.len(),
        elapsed.as_secs_f64(),
        fmt_pct(&reductions),
        blocks.iter().map(|b| format!("{b:.0}")).collect::<Vec<_>>().join(" -> ")
    );
    check(
        cfg.episodes <= 50_000
            && matches!(report.status, v2g_core::ppo::TrainStatus::Completed)
            && min_red >= 60.0
            && monotone
            && blocks.len() >= 2
            && elapsed <= Duration::from_secs(30 * 60),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn fmt_pct(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.1}%")).collect::<Vec<_>>().join(" ")
}

fn need(t: &Option<Trained>) -> std::result::Result<&Trained, String> {
    t.as_ref().ok_or_else(|| "criterion 7 produced no checkpoint".to_string())
}

fn c8_transfer(t: &Option<Trained>) -> Outcome {
    let t = need(t)?;
    let policy = Policy::from_checkpoint(&t.checkpoint).map_err(|e| e.to_string())?;
    let spec = presets::res_spec(t.spec.fleet.n_evs);
    let mut reductions = Vec::new();
    let mut violations = 0;
    for s in EVAL_SEEDS {
        let c = compare(&policy, &spec, s + 1_000_000, EvalOptions::default()).map_err(|e| e.to_string())?;
        reductions.push(c.variance_reduction_pct);
        violations += c.policy.soc_violations;
    }
    let min_red = reductions.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!("RES scenario variance reduction {} (min {min_red:.1}%), {violations} SOC violations", fmt_pct(&reductions));
    check(min_red >= 40.0, || detail.clone())?;
    Ok(detail)
}

fn c9_cost(t: &Option<Trained>) -> Outcome {
    let t = need(t)?;
    let policy = Policy::from_checkpoint(&t.checkpoint).map_err(|e| e.to_string())?;
    let mut reductions = Vec::new();
    for s in EVAL_SEEDS {
        let c = compare(&policy, &t.spec, s, EvalOptions::default()).map_err(|e| e.to_string())?;
        reductions.push(c.cost_reduction_pct);
    }
    let min_red = reductions.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!("TOU charging cost reduction {} (min {min_red:.1}%)", fmt_pct(&reductions));
    check(min_red >= 30.0, || detail.clone())?;
    Ok(detail)
}

fn c10_latency(t: &Option<Trained>) -> Outcome {
    let t = need(t)?;
    let Policy::Greedy { actor, normalization } =
        Policy::from_checkpoint(&t.checkpoint).map_err(|e| e.to_string())?
    else {
        return Err("checkpoint did not give a greedy policy".into());
    };
    let n = *presets::LARGE_SCALE_FLEETS.last().unwrap();
    let spec = EpisodeSpec {
        normalization,
        ..presets::large_scale_spec(n)
    };
    let mut env = V2gEnv::new(spec).map_err(|e| e.to_string())?;
    let mut obs = env.reset(7).map_err(|e| e.to_string())?;
    // Advance to late evening so the whole fleet is parked.
    while env.hour() != 22 {
        obs = env.step(0.5).map_err(|e| e.to_string())?.observation;
    }
    let connected = env.mask().count();
    let mut times = Vec::new();
    for _ in 0..101 {
        let t0 = Instant::now();
        let a = schedule_once(&actor, &obs.normalized, env.fleet(), env.mask()).map_err(|e| e.to_string())?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(a);
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    let detail = format!("{n} EVs ({connected} connected), median {median:.2} ms, max {:.2} ms over 101 runs", times[100]);
    check(median <= 10.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- determinism

fn deterministic_run(threads: usize) -> std::result::Result<Vec<u8>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| {
        let spec = presets::desk_training_spec().map_err(|e| e.to_string())?;
        let cfg = PpoConfig {
            episodes: 400,
            checkpoint_every: 200,
            ..PpoConfig::desk()
        };
        let mut bytes = Vec::new();
        let mut trainer = Trainer::new(spec.clone(), cfg).map_err(|e| e.to_string())?;
        let mut sink = |c: &Checkpoint| {
            bytes.extend(c.to_json()?.into_bytes());
            Ok(())
        };
        let report: TrainingReport = trainer
            .run(&mut sink, None, &mut |_| {})
            .map_err(|e| e.to_string())?;
        write_report_jsonl(&mut bytes, &report.records).map_err(|e| e.to_string())?;
        let policy = Policy::from_checkpoint(&trainer.checkpoint()).map_err(|e| e.to_string())?;
        for p in [&policy, &Policy::Uncontrolled] {
            let r = evaluate(p, &presets::res_spec(50), 11).map_err(|e| e.to_string())?;
            bytes.extend(serde_json::to_vec(&r).map_err(|e| e.to_string())?);
        }
        Ok(bytes)
    })
}

fn c11_determinism() -> Outcome {
    let a = deterministic_run(1)?;
    let b = deterministic_run(4)?;
    let c = deterministic_run(4)?;
    let detail = format!("{} bytes of checkpoints, training log and evaluation reports; 1-thread vs 4-thread vs repeat identical: {}", a.len(), a == b && b == c);
    check(a == b && b == c, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- driver

fn run(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {id:>2} {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {id:>2} {name}: {detail}");
            false
        }
    }
}

fn main() {
    let cases = cases();
    let mut trained = None;
    let results = [
        run(1, "allocation conservation", || c1_allocation(&cases)),
        run(2, "SOC safety", c2_soc_safety),
        run(3, "aggregate consistency", || c3_aggregate(&cases)),
        run(4, "gradient correctness", c4_gradients),
        run(5, "GAE oracle", c5_gae),
        run(6, "piecewise generation models", c6_piecewise),
        run(7, "end-to-end training", || c7_training(&mut trained)),
        run(8, "RES transfer", || c8_transfer(&trained)),
        run(9, "cost direction", || c9_cost(&trained)),
        run(10, "scheduling latency", || c10_latency(&trained)),
        run(11, "determinism", c11_determinism),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
