//! Scenario, fleet and PPO configuration loading.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde_json::Value;
use v2g_core::env::fit_per_feature;
use v2g_core::{presets, EpisodeSpec, FleetConfig, PpoConfig};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 50-vehicle daily baseload episode with fitted observation scaling.
    Desk,
    Baseload,
    Res,
    Weekly,
    WeeklyRes,
    LargeScale,
}

impl Preset {
    pub fn spec(self, n_evs: Option<usize>) -> Result<EpisodeSpec, Failure> {
        let n = n_evs.unwrap_or(50);
        Ok(match self {
            Preset::Desk => {
                let mut s = presets::baseload_spec(n);
                s.normalization =
                    fit_per_feature(&s, presets::DESK_FIT_EPISODES, presets::DESK_FIT_SEED)?;
                s
            }
            Preset::Baseload => presets::baseload_spec(n),
            Preset::Res => presets::res_spec(n),
            Preset::Weekly => presets::weekly_spec(n, false),
            Preset::WeeklyRes => presets::weekly_spec(n, true),
            Preset::LargeScale => {
                presets::large_scale_spec(n_evs.unwrap_or(presets::LARGE_SCALE_FLEETS[0]))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PpoPreset {
    /// Raised learning rates and a 2e4-episode budget.
    Desk,
    /// Default hyperparameters at full budget.
    Reference,
}

impl PpoPreset {
    pub fn config(self) -> PpoConfig {
        match self {
            PpoPreset::Desk => PpoConfig::desk(),
            PpoPreset::Reference => PpoConfig::reference(),
        }
    }
}

/// Reads JSON from a file, or parses the argument itself when it starts with `{`.
pub fn read_json_value(arg: &str, what: &str) -> Result<Value, Failure> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        read_text(Path::new(arg), what)?
    };
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{what} `{arg}`: {e}")))
}

pub fn read_text(path: &Path, what: &str) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn parse<T: DeserializeOwned>(value: Value, what: &str) -> Result<T, Failure> {
    serde_json::from_value(value).map_err(|e| Failure::config(format!("{what}: {e}")))
}

/// Episode spec from a scenario file or preset, with an optional fleet override.
pub fn load_spec(
    scenario: Option<&PathBuf>,
    preset: Option<Preset>,
    n_evs: Option<usize>,
    fleet: Option<&str>,
) -> Result<EpisodeSpec, Failure> {
    let mut spec = match (scenario, preset) {
        (Some(path), _) => {
            let text = read_text(path, "scenario file")?;
            serde_json::from_str::<EpisodeSpec>(&text)
                .map_err(|e| Failure::config(format!("scenario file {}: {e}", path.display())))?
        }
        (None, Some(p)) => p.spec(n_evs)?,
        (None, None) => Preset::Desk.spec(n_evs)?,
    };
    if let Some(arg) = fleet {
        spec.fleet = parse::<FleetConfig>(read_json_value(arg, "fleet config")?, "fleet config")?;
    }
    if scenario.is_some() {
        if let Some(n) = n_evs {
            spec.fleet.n_evs = n;
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// PPO config: preset, then JSON overrides, then flags. The horizon follows the
/// episode length unless the overrides set it.
pub fn load_ppo(
    preset: PpoPreset,
    overrides: Option<&str>,
    spec: &EpisodeSpec,
    episodes: Option<u64>,
    seed: Option<u64>,
) -> Result<PpoConfig, Failure> {
    let mut base = serde_json::to_value(preset.config()).map_err(|e| Failure::config(e.to_string()))?;
    let mut horizon_set = false;
    if let Some(arg) = overrides {
        let Value::Object(over) = read_json_value(arg, "ppo overrides")? else {
            return Err(Failure::config("ppo overrides must be a JSON object"));
        };
        horizon_set = over.contains_key("horizon");
        let Value::Object(b) = &mut base else { unreachable!() };
        b.extend(over);
    }
    let mut cfg: PpoConfig = parse(base, "ppo overrides")?;
    if !horizon_set {
        cfg.horizon = spec.length_slots;
    }
    if let Some(e) = episodes {
        cfg.episodes = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}
