use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::data_ingest::synth::{
    SynthConfig, GRAPH_FILE, LOTS_FILE, LOT_EVENTS_FILE, PAYMENTS_FILE, SURVEYS_FILE,
};
use crate::data_ingest::SmoothingConfig;
use crate::error::{Error, Result};
use crate::occupancy_model::TrainConfig;
use crate::offstreet_sim::LotSimConfig;
use crate::onstreet_sim::{OnstreetConfig, PolicyWeights};
use crate::travel_cache::CACHE_ENV_VAR;

/// Raw input files. Relative paths are resolved against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub graph: PathBuf,
    pub payments: PathBuf,
    pub surveys: PathBuf,
    pub lots: PathBuf,
    pub lot_events: PathBuf,
}

fn default_rate_weeks() -> usize {
    12
}

/// Everything a run needs, loaded from a single JSON file.
///
/// `seed` is the only seed: it is copied into the training, on-street and
/// lot simulation configs when the file is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: InputPaths,
    pub output_dir: PathBuf,
    /// Day the estimates are for; its weekday selects the lot rates.
    pub date: NaiveDate,
    pub hours: Vec<u32>,
    #[serde(default)]
    pub seed: u64,
    /// Whole weeks of lot events averaged into rates.
    #[serde(default = "default_rate_weeks")]
    pub rate_weeks: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub onstreet: OnstreetConfig,
    #[serde(default)]
    pub policy: PolicyWeights,
    #[serde(default)]
    pub lot_sim: LotSimConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    /// Directions cache used to override the graph's travel times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directions_cache: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
        cfg.resolve_paths(base_dir);
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    /// Reads and validates a config file. `PARKSIM_DIRECTIONS_CACHE`, when
    /// set, replaces `directions_cache`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::from_json_str(&text, base)?;
        if let Some(cache) = std::env::var_os(CACHE_ENV_VAR).filter(|v| !v.is_empty()) {
            cfg.directions_cache = Some(PathBuf::from(cache));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.graph,
            &mut i.payments,
            &mut i.surveys,
            &mut i.lots,
            &mut i.lot_events,
        ] {
            join(p);
        }
        join(&mut self.output_dir);
        if let Some(p) = &mut self.directions_cache {
            join(p);
        }
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.onstreet.seed = seed;
        self.lot_sim.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.hours.is_empty() {
            return Err(Error::Config("no hours requested".into()));
        }
        let mut seen = BTreeSet::new();
        for &h in &self.hours {
            if h > 23 {
                return Err(Error::Config(format!("hour {h} outside 0-23")));
            }
            if !seen.insert(h) {
                return Err(Error::Config(format!("hour {h} listed twice")));
            }
        }
        if self.rate_weeks == 0 {
            return Err(Error::Config("rate_weeks must be at least 1".into()));
        }
        let i = &self.inputs;
        for (name, p) in [
            ("graph", &i.graph),
            ("payments", &i.payments),
            ("surveys", &i.surveys),
            ("lots", &i.lots),
            ("lot_events", &i.lot_events),
        ] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "{name} file `{}` does not exist",
                    p.display()
                )));
            }
        }
        self.train.validate()?;
        self.onstreet.validate()?;
        self.lot_sim.validate()?;
        if !(self.smoothing.sigma_h.is_finite() && self.smoothing.sigma_h > 0.0)
            || self.smoothing.span_h == 0
        {
            return Err(Error::Config(
                "smoothing needs sigma_h > 0 and span_h >= 1".into(),
            ));
        }
        if self.smoothing.peak_hours.iter().any(|&h| h > 23) {
            return Err(Error::Config(
                "smoothing peak hours must be within 0-23".into(),
            ));
        }
        Ok(())
    }

    /// Day of week of `date`, 0 = Monday.
    pub fn day_of_week(&self) -> u8 {
        self.date.weekday().num_days_from_monday() as u8
    }

    /// A config for a synthetic bundle written to `dir`, with paths relative
    /// to that directory.
    pub fn for_synth_bundle(synth: &SynthConfig) -> Self {
        RunConfig {
            inputs: InputPaths {
                graph: GRAPH_FILE.into(),
                payments: PAYMENTS_FILE.into(),
                surveys: SURVEYS_FILE.into(),
                lots: LOTS_FILE.into(),
                lot_events: LOT_EVENTS_FILE.into(),
            },
            output_dir: "out".into(),
            date: synth.start_date + Duration::days((synth.payment_days as i64 / 2).min(2)),
            hours: (8..=18).collect(),
            seed: synth.seed,
            rate_weeks: synth.lot_weeks,
            train: TrainConfig {
                seed: synth.seed,
                ..TrainConfig::default()
            },
            onstreet: OnstreetConfig {
                seed: synth.seed,
                ..OnstreetConfig::default()
            },
            policy: PolicyWeights::default(),
            lot_sim: LotSimConfig {
                seed: synth.seed,
                ..LotSimConfig::default()
            },
            smoothing: SmoothingConfig::default(),
            directions_cache: None,
        }
    }
}

/// Parses `8-18`, `8,9,12` or a single hour into a list of hours.
pub fn parse_hours(spec: &str) -> Result<Vec<u32>> {
    let bad = || Error::Config(format!("invalid hour list `{spec}`"));
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u32 = a.trim().parse().map_err(|_| bad())?;
            let b: u32 = b.trim().parse().map_err(|_| bad())?;
            if a > b || b > 23 {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            let h: u32 = part.parse().map_err(|_| bad())?;
            if h > 23 {
                return Err(bad());
            }
            out.push(h);
        }
    }
    Ok(out)
}
