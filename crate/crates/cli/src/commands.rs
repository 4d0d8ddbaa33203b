//! Subcommand implementations.

use std::fmt::Write as _;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Once;

use serde::{Deserialize, Serialize};
use v2g_core::aggregator::{step_aggregate, write_allocation_csv, PowerEnvelope};
use v2g_core::env::{fit_per_feature, write_trace_csv, DT_H};
use v2g_core::eval::{
    check_policy, compare, evaluate, render_markdown, EvalOptions, EvaluationReport, SocQuantiles,
};
use v2g_core::fleet::{availability, read_fleet_csv, refresh_bounds, AvailabilityMask, SocBand};
use v2g_core::ppo::train::write_report_jsonl;
use v2g_core::ppo::{hash_json, EpisodeRecord, Trainer};
use v2g_core::{presets, Checkpoint, Comparison, EpisodeSpec, Mode, Policy, PpoConfig, TrainStatus};

use crate::config::{self, Preset};
use crate::output::{RunDir, RunMeta, Tagged};
use crate::{
    AllocateArgs, EvalArgs, Failure, PresetArgs, PresetName, ReportArgs, SimulateArgs, Target,
    TrainArgs, TransferArgs, EXIT_DIVERGED,
};

static STOP: AtomicBool = AtomicBool::new(false);
static HANDLER: Once = Once::new();

fn install_stop_handler() {
    HANDLER.call_once(|| {
        if let Err(e) = ctrlc::set_handler(|| STOP.store(true, Ordering::SeqCst)) {
            log::warn!("no interrupt handler: {e}");
        }
    });
}

fn meta(command: &str, seed: u64, config_hash: String) -> RunMeta {
    RunMeta {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_hash,
    }
}

/// Checkpoint `created` stamp: `SOURCE_DATE_EPOCH` when set, else 0.
fn created_stamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let text = config::read_text(path, "checkpoint")?;
    Checkpoint::from_json(&text)
        .map_err(|e| Failure::config(format!("checkpoint {}: {e}", path.display())))
}

fn load_policy(path: &Path) -> Result<(Policy, Checkpoint), Failure> {
    let ck = load_checkpoint(path)?;
    let policy = Policy::from_checkpoint(&ck)
        .map_err(|e| Failure::config(format!("checkpoint {}: {e}", path.display())))?;
    check_policy(&policy)?;
    Ok((policy, ck))
}

fn hash<T: Serialize>(value: &T) -> Result<String, Failure> {
    Ok(hash_json(value)?)
}

fn trace_csv(run: &RunDir, name: &str, report: &EvaluationReport) -> Result<(), Failure> {
    write_trace_csv(run.file(name)?, &report.trace)?;
    Ok(())
}

#[derive(Serialize)]
struct LoadRow {
    slot: usize,
    baseload_kw: f64,
    pv_kw: f64,
    wt_kw: f64,
    uncontrolled_eva_kw: Option<f64>,
    uncontrolled_total_kw: Option<f64>,
    policy_eva_kw: f64,
    policy_total_kw: f64,
}

fn plot_data(run: &RunDir, prefix: &str, policy: &EvaluationReport, baseline: Option<&EvaluationReport>) -> Result<(), Failure> {
    let rows: Vec<LoadRow> = policy
        .trace
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let b = baseline.and_then(|b| b.trace.get(i));
            LoadRow {
                slot: r.slot,
                baseload_kw: r.baseload_kw,
                pv_kw: r.pv_kw,
                wt_kw: r.wt_kw,
                uncontrolled_eva_kw: b.map(|b| b.eva_power_kw),
                uncontrolled_total_kw: b.map(|b| b.total_load_kw),
                policy_eva_kw: r.eva_power_kw,
                policy_total_kw: r.total_load_kw,
            }
        })
        .collect();
    run.write_csv(&format!("{prefix}plot/load_profile.csv"), &rows)?;
    run.write_csv::<SocQuantiles>(&format!("{prefix}plot/soc_quantiles.csv"), &policy.soc_quantiles)?;
    Ok(())
}

fn summary_markdown(r: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| Policy | Mode | EVs | Departure variance (kW²) | Peak (kW) | Valley (kW) | Cost | SOC violations |");
    let _ = writeln!(s, "|---|---|---:|---:|---:|---:|---:|---:|");
    let _ = writeln!(
        s,
        "| {} | {:?} | {} | {:.1} | {:.1} | {:.1} | {:.2} | {} |",
        r.policy, r.mode, r.n_evs, r.departure_variance_kw2, r.peak_kw, r.valley_kw, r.total_cost, r.soc_violations
    );
    s
}

#[derive(Serialize, Deserialize)]
struct EpisodeConfig {
    spec: EpisodeSpec,
    checkpoint: Option<PathBuf>,
    checkpoint_hash: Option<String>,
}

pub fn simulate(a: &SimulateArgs, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let s = &a.scenario;
    let spec = config::load_spec(s.scenario.as_ref(), s.preset, s.n_evs, s.fleet.as_deref())?;
    let (policy, ck) = match &a.checkpoint {
        Some(p) => {
            let (pol, ck) = load_policy(p)?;
            (pol, Some(ck))
        }
        None => (Policy::Uncontrolled, None),
    };
    let cfg = EpisodeConfig {
        spec: spec.clone(),
        checkpoint: a.checkpoint.clone(),
        checkpoint_hash: ck.map(|c| c.meta.config_hash),
    };
    let meta = meta("simulate", a.seed, hash(&(&cfg.spec, &cfg.checkpoint_hash, a.seed))?);
    let mut run = RunDir::create(out, "simulate", a.seed)?;
    run.note(format!("simulate {} policy, {:?} mode, {} EVs, seed {}", policy.label(), spec.mode, spec.fleet.n_evs, a.seed));
    run.write_json("config.json", &Tagged { meta: meta.clone(), body: cfg })?;

    let report = evaluate(&policy, &spec, a.seed)?;
    run.write_json("report.json", &Tagged { meta, body: report.clone() })?;
    trace_csv(&run, "trace.csv", &report)?;
    if a.report.markdown {
        run.write_text("report.md", &summary_markdown(&report))?;
    }
    if a.report.emit_plot_data {
        plot_data(&run, "", &report, None)?;
    }
    println!(
        "departure variance {:.1} kW², peak {:.1} kW, cost {:.2}, SOC violations {}",
        report.departure_variance_kw2, report.peak_kw, report.total_cost, report.soc_violations
    );
    run.note("done");
    Ok(run.path)
}

fn comparison_outputs(run: &RunDir, prefix: &str, meta: &RunMeta, c: &Comparison, report: &ReportArgs) -> Result<(), Failure> {
    run.write_json(&format!("{prefix}comparison.json"), &Tagged { meta: meta.clone(), body: c.clone() })?;
    trace_csv(run, &format!("{prefix}trace.csv"), &c.policy)?;
    trace_csv(run, &format!("{prefix}baseline_trace.csv"), &c.baseline)?;
    if report.markdown {
        run.write_text(&format!("{prefix}report.md"), &render_markdown(c))?;
    }
    if report.emit_plot_data {
        plot_data(run, prefix, &c.policy, Some(&c.baseline))?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let s = &a.scenario;
    let spec = config::load_spec(s.scenario.as_ref(), s.preset, s.n_evs, s.fleet.as_deref())?;
    let (policy, ck) = load_policy(&a.checkpoint)?;
    let cfg = EpisodeConfig {
        spec: spec.clone(),
        checkpoint: Some(a.checkpoint.clone()),
        checkpoint_hash: Some(ck.meta.config_hash.clone()),
    };
    let meta = meta("eval", a.seed, hash(&(&cfg.spec, &cfg.checkpoint_hash, a.seed))?);
    let mut run = RunDir::create(out, "eval", a.seed)?;
    run.note(format!("eval {} on {:?} mode, {} EVs, seed {}", a.checkpoint.display(), spec.mode, spec.fleet.n_evs, a.seed));
    run.write_json("config.json", &Tagged { meta: meta.clone(), body: cfg })?;

    let c = compare(&policy, &spec, a.seed, EvalOptions { measure_latency: a.latency })?;
    comparison_outputs(&run, "", &meta, &c, &a.report)?;
    println!(
        "variance reduction {:.2}%, cost reduction {:.2}%, SOC violations {}",
        c.variance_reduction_pct, c.cost_reduction_pct, c.policy.soc_violations
    );
    if let Some(l) = c.policy.latency {
        println!("scheduling latency median {:.3} ms, p95 {:.3} ms", l.median_ms, l.p95_ms);
    }
    run.note("done");
    Ok(run.path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRow {
    pub target: String,
    pub mode: Mode,
    pub n_evs: usize,
    pub slots: usize,
    pub variance_reduction_pct: f64,
    pub episode_variance_reduction_pct: f64,
    pub cost_reduction_pct: f64,
    pub soc_violations: usize,
    pub max_charge_kw: f64,
    pub min_discharge_kw: f64,
    pub mean_envelope_width_kw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferSummary {
    pub checkpoint_hash: String,
    pub rows: Vec<TransferRow>,
}

fn transfer_specs(a: &TransferArgs) -> Vec<(String, EpisodeSpec)> {
    let targets = if a.targets.is_empty() {
        vec![Target::Res, Target::LargeScale, Target::Weekly, Target::WeeklyRes]
    } else {
        a.targets.clone()
    };
    let fleets = if a.large_scale_fleets.is_empty() {
        presets::LARGE_SCALE_FLEETS.to_vec()
    } else {
        a.large_scale_fleets.clone()
    };
    let mut out = Vec::new();
    for t in targets {
        match t {
            Target::Res => out.push(("res".into(), presets::res_spec(a.n_evs))),
            Target::Weekly => out.push(("weekly".into(), presets::weekly_spec(a.n_evs, false))),
            Target::WeeklyRes => out.push(("weekly-res".into(), presets::weekly_spec(a.n_evs, true))),
            Target::LargeScale => {
                for &n in &fleets {
                    out.push((format!("large-scale-{n}"), presets::large_scale_spec(n)));
                }
            }
        }
    }
    out
}

pub fn transfer(a: &TransferArgs, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let (policy, ck) = load_policy(&a.checkpoint)?;
    let specs = transfer_specs(a);
    for (_, s) in &specs {
        s.validate()?;
    }
    let meta = meta("transfer", a.seed, hash(&(&specs, &ck.meta.config_hash, a.seed))?);
    let mut run = RunDir::create(out, "transfer", a.seed)?;
    run.write_json(
        "config.json",
        &Tagged {
            meta: meta.clone(),
            body: serde_json::json!({ "checkpoint": a.checkpoint, "checkpoint_hash": ck.meta.config_hash, "targets": specs }),
        },
    )?;
    let mut rows = Vec::new();
    for (name, spec) in &specs {
        run.note(format!("transfer to {name} ({} EVs, {} slots)", spec.fleet.n_evs, spec.length_slots));
        let c = compare(&policy, spec, a.seed, EvalOptions::default())?;
        comparison_outputs(&run, &format!("{name}/"), &meta, &c, &a.report)?;
        let e = c.policy.envelope;
        rows.push(TransferRow {
            target: name.clone(),
            mode: spec.mode,
            n_evs: spec.fleet.n_evs,
            slots: c.policy.trace.len(),
            variance_reduction_pct: c.variance_reduction_pct,
            episode_variance_reduction_pct: c.episode_variance_reduction_pct,
            cost_reduction_pct: c.cost_reduction_pct,
            soc_violations: c.policy.soc_violations,
            max_charge_kw: e.max_charge_kw,
            min_discharge_kw: e.min_discharge_kw,
            mean_envelope_width_kw: e.mean_width_kw,
        });
        println!(
            "{name}: variance reduction {:.2}%, cost reduction {:.2}%",
            c.variance_reduction_pct, c.cost_reduction_pct
        );
    }
    let mut md = String::new();
    let _ = writeln!(md, "| Scenario | EVs | Slots | Variance reduction (%) | Episode variance reduction (%) | Cost reduction (%) | Envelope (kW) | SOC violations |");
    let _ = writeln!(md, "|---|---:|---:|---:|---:|---:|---|---:|");
    for r in &rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.2} | {:.2} | {:.2} | [{:.0}, {:.0}] | {} |",
            r.target, r.n_evs, r.slots, r.variance_reduction_pct, r.episode_variance_reduction_pct,
            r.cost_reduction_pct, r.min_discharge_kw, r.max_charge_kw, r.soc_violations
        );
    }
    if a.report.markdown {
        run.write_text("transfer.md", &md)?;
    }
    run.write_json(
        "transfer.json",
        &Tagged {
            meta,
            body: TransferSummary {
                checkpoint_hash: ck.meta.config_hash,
                rows,
            },
        },
    )?;
    run.note("done");
    Ok(run.path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AllocationSummary {
    pub requested_kw: f64,
    pub applied_kw: f64,
    pub kappa: f64,
    pub residual_kw: f64,
    pub n_connected: usize,
    pub n_clipped: usize,
    pub envelope: PowerEnvelope,
}

pub fn allocate(a: &AllocateArgs, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let band: SocBand = match &a.band {
        Some(arg) => config::parse(config::read_json_value(arg, "band")?, "band")?,
        None => SocBand::default(),
    };
    band.validate()?;
    let text = config::read_text(&a.fleet, "fleet CSV")?;
    let mut fleet = read_fleet_csv(text.as_bytes(), &band)
        .map_err(|e| Failure::config(format!("fleet CSV {}: {e}", a.fleet.display())))?;
    let mask = match a.hour {
        Some(h) if h >= 24 => return Err(Failure::config("--hour must lie in [0, 23]")),
        Some(h) => {
            for ev in &mut fleet {
                refresh_bounds(ev, &band, h, DT_H);
            }
            availability(&fleet, h)?
        }
        None => AvailabilityMask::all(fleet.len()),
    };
    let meta = meta("allocate", 0, hash(&(&text, a.power, a.hour, &band))?);
    let (next, state, alloc) = step_aggregate(&fleet, &mask, a.power, DT_H)?;
    let mut run = RunDir::create(out, "allocate", 0)?;
    run.note(format!("allocate {} kW over {} connected EVs", a.power, mask.count()));
    write_allocation_csv(run.file("allocation.csv")?, a.hour.unwrap_or(0) as usize, &next, &mask, &alloc)?;
    let residual = alloc.total_kw() - a.power;
    println!("kappa {:.12}", alloc.kappa);
    println!("conservation residual {residual:.3e} kW");
    run.write_json(
        "summary.json",
        &Tagged {
            meta,
            body: AllocationSummary {
                requested_kw: a.power,
                applied_kw: alloc.applied_eva_power_kw,
                kappa: alloc.kappa,
                residual_kw: residual,
                n_connected: mask.count(),
                n_clipped: alloc.clipped_ids.len(),
                envelope: state.envelope,
            },
        },
    )?;
    run.note("done");
    Ok(run.path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub status: TrainStatus,
    pub episodes: u64,
    pub first_episode: u64,
    /// Mean episode reward per complete 5000-episode block.
    pub block_means: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrainConfig {
    spec: EpisodeSpec,
    ppo: PpoConfig,
    resume: Option<PathBuf>,
}

pub fn train(a: &TrainArgs, out: Option<&Path>) -> Result<PathBuf, Failure> {
    let s = &a.scenario;
    let mut spec = config::load_spec(s.scenario.as_ref(), s.preset, s.n_evs, s.fleet.as_deref())?;
    if let Some(n) = a.fit_normalization {
        spec.normalization = fit_per_feature(&spec, n, presets::DESK_FIT_SEED)?;
    }
    let cfg = config::load_ppo(a.ppo_preset, a.ppo.as_deref(), &spec, a.episodes, a.seed)?;
    let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
    let mut trainer = match &resume {
        Some(ck) => Trainer::resume(spec.clone(), cfg.clone(), ck)?,
        None => Trainer::new(spec.clone(), cfg.clone())?,
    };
    trainer.set_created(created_stamp());
    let meta = meta("train", cfg.seed, trainer.config_hash().to_string());
    let mut run = RunDir::create(out, "train", cfg.seed)?;
    run.write_json(
        "config.json",
        &Tagged {
            meta: meta.clone(),
            body: TrainConfig {
                spec,
                ppo: cfg.clone(),
                resume: a.resume.clone(),
            },
        },
    )?;
    run.note(format!(
        "train {} episodes from episode {}, seed {}, hash {}",
        cfg.episodes,
        trainer.episode(),
        cfg.seed,
        meta.config_hash
    ));
    if let Some(ck) = &resume {
        if ck.meta.config_hash != meta.config_hash {
            run.note(format!("resuming from a checkpoint with config hash {}", ck.meta.config_hash));
        }
    }

    install_stop_handler();
    STOP.store(false, Ordering::SeqCst);
    let first_episode = trainer.episode();
    let ck_dir = run.path.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| Failure::config(format!("{}: {e}", ck_dir.display())))?;
    let mut report_file = BufWriter::new(run.file("report.jsonl")?);
    let mut io_error = None;
    let mut sink = |c: &Checkpoint| {
        c.save(&ck_dir.join(format!("episode-{:08}.json", c.meta.episode)))?;
        log::info!("checkpoint at episode {}", c.meta.episode);
        Ok(())
    };
    let mut on_episode = |r: &EpisodeRecord| {
        if io_error.is_none() {
            if let Err(e) = write_report_jsonl(&mut report_file, std::slice::from_ref(r)) {
                io_error = Some(e);
            }
        }
        if (r.episode + 1) % 1000 == 0 {
            log::info!("episode {} reward {:.1} variance {:.1}", r.episode + 1, r.reward, r.variance_kw2);
        }
    };
    let report = trainer.run(&mut sink, Some(&STOP), &mut on_episode)?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    report_file
        .flush()
        .map_err(|e| Failure::config(format!("report.jsonl: {e}")))?;
    drop(report_file);

    let final_ck = trainer.checkpoint();
    final_ck.save(&run.path.join("checkpoint.json"))?;
    let block_means = report
        .records
        .chunks(5000)
        .filter(|c| c.len() == 5000)
        .map(|c| c.iter().map(|r| r.reward).sum::<f64>() / 5000.0)
        .collect();
    run.write_json(
        "summary.json",
        &Tagged {
            meta,
            body: TrainSummary {
                status: report.status.clone(),
                episodes: report.records.len() as u64,
                first_episode,
                block_means,
            },
        },
    )?;
    if a.emit_plot_data {
        #[derive(Serialize)]
        struct Point {
            episode: u64,
            reward: f64,
            variance_kw2: f64,
        }
        let pts: Vec<Point> = report
            .records
            .iter()
            .map(|r| Point {
                episode: r.episode,
                reward: r.reward,
                variance_kw2: r.variance_kw2,
            })
            .collect();
        run.write_csv("plot/training_curve.csv", &pts)?;
    }
    match report.status {
        TrainStatus::Completed => run.note(format!("completed at episode {}", trainer.episode())),
        TrainStatus::Stopped => run.note(format!("stopped at episode {}", trainer.episode())),
        TrainStatus::Diverged { reason } => {
            run.note(format!("diverged: {reason}"));
            return Err(Failure {
                code: EXIT_DIVERGED,
                message: format!("training diverged at episode {}: {reason}", trainer.episode()),
            });
        }
    }
    println!("{}", run.path.join("checkpoint.json").display());
    Ok(run.path)
}

pub fn preset(a: &PresetArgs) -> Result<(), Failure> {
    let value = match a.name {
        PresetName::PpoDesk => serde_json::to_value(PpoConfig::desk()),
        PresetName::PpoReference => serde_json::to_value(PpoConfig::reference()),
        name => {
            let p = match name {
                PresetName::Desk => Preset::Desk,
                PresetName::Baseload => Preset::Baseload,
                PresetName::Res => Preset::Res,
                PresetName::Weekly => Preset::Weekly,
                PresetName::WeeklyRes => Preset::WeeklyRes,
                _ => Preset::LargeScale,
            };
            serde_json::to_value(p.spec(a.n_evs)?)
        }
    }
    .map_err(|e| Failure::config(e.to_string()))?;
    let text = serde_json::to_string_pretty(&value).map_err(|e| Failure::config(e.to_string()))?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::config(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}
