//! `key = value` run configuration.
//!
//! Later settings win, so command-line overrides are applied after the file.
//! Every key is checked against [`KEYS`] on insertion and every value is
//! parsed and validated by [`Settings::resolve`] before any stage runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use tkg_decay_core::attention::AttentionConfig;
use tkg_decay_core::encoder::{EncoderConfig, Grouping, LabelPolicy};
use tkg_decay_core::halflife::MissingIntervalPolicy;
use tkg_decay_core::model::ModelConfig;
use tkg_decay_core::synth::SynthSpec;
use tkg_decay_core::training::{LabelSource, OptimizerKind, PipelineConfig, Schedule, TrainConfig};

use crate::error::{Error, Result};

/// Recognised keys with a one-line description, as listed by `--help`.
pub const KEYS: &[(&str, &str)] = &[
    ("d1", "entity embedding width (32)"),
    ("d2", "relation embedding width, must equal d1 (32)"),
    ("time_dims", "width of the periodic time feature (1)"),
    ("fact_dim", "fact projection width (2*d1 + d2 + 1)"),
    ("heads", "attention heads (2)"),
    ("attention_slope", "leaky-relu slope in attention (0.2)"),
    ("margin", "hinge margin (1)"),
    ("negatives", "corruptions per positive fact (1)"),
    ("paper_sign", "flip the hinge orientation (false)"),
    ("d3", "projected fact feature width (32)"),
    ("hidden", "comma-separated convolution widths (32,32)"),
    ("layers", "convolution layers of width d3; replaces hidden"),
    ("encoder_slope", "leaky-relu slope in the encoder (0.2)"),
    ("concat_own_feature", "classifier also sees the projected feature (true)"),
    ("grouping", "relation | relation-head (relation)"),
    ("alpha", "margin loss weight in [0,1] (0.5)"),
    ("epochs", "training epochs (200)"),
    ("lr", "learning rate (0.01)"),
    ("optimizer", "adam | sgd (adam)"),
    ("seed", "seed for every random choice (0)"),
    ("batch_size", "facts per step, 0 for full batch (0)"),
    ("patience", "early-stop patience in epochs, 0 disables (50)"),
    ("val_fraction", "facts held out from the classifier loss (0.1)"),
    ("schedule", "joint | two-phase (joint)"),
    ("theta", "validity threshold in [0,1] (0.5)"),
    ("label_policy", "median | fixed:<days> | quantile:<q> (median)"),
    ("label_source", "predicted | derived (predicted)"),
    ("missing_interval", "exclude | span: never-updated keys in half-life means (exclude)"),
    ("zero_superseded", "score facts with a later tail change as 0 (false)"),
    ("half_life", "force one half-life in days for both classes"),
    ("t_current", "evaluation day in the input's date format (latest fact)"),
    ("scope", "train | all: which input files are filtered (train)"),
    ("synth.entities", "synthetic entities (200)"),
    ("synth.relations", "synthetic relations (10)"),
    ("synth.keys", "synthetic fact keys (1000)"),
    ("synth.fraction_active", "share of active keys (0.3)"),
    ("synth.mean_active", "mean active update interval in days (20)"),
    ("synth.mean_inactive", "mean inactive update interval in days (160)"),
    ("synth.horizon", "last generated day (730)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Train,
    All,
}

/// Fully parsed configuration shared by all subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub scope: Scope,
    /// Raw `t_current`, resolved against a dataset's date format later.
    pub t_current: Option<String>,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Settings::default().resolve().expect("defaults are valid")
    }
}

/// Unparsed key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            s.set_pair(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)], default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => options.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Error::Config(format!("`{key}` must be one of {}, got `{v}`", names.join(", ")))
            }),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let d1 = self.or("d1", 32usize)?;
        let d2 = self.or("d2", 32usize)?;
        let mut attention = AttentionConfig::with_dims(d1, d2);
        attention.time_dims = self.or("time_dims", attention.time_dims)?;
        attention.fact_dim = self.or("fact_dim", attention.fact_dim)?;
        attention.heads = self.or("heads", attention.heads)?;
        attention.leaky_slope = self.or("attention_slope", attention.leaky_slope)?;
        attention.margin = self.or("margin", attention.margin)?;
        attention.negatives_per_positive = self.or("negatives", attention.negatives_per_positive)?;
        attention.paper_sign = self.or("paper_sign", false)?;

        let mut encoder = EncoderConfig::default();
        encoder.d3 = self.or("d3", encoder.d3)?;
        encoder.hidden = vec![encoder.d3; encoder.hidden.len()];
        if let Some(n) = self.parsed::<usize>("layers")? {
            encoder.hidden = vec![encoder.d3; n];
        }
        if let Some(h) = self.get("hidden") {
            encoder.hidden = h
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid value `{h}` for `hidden`")))?;
        }
        encoder.leaky_slope = self.or("encoder_slope", encoder.leaky_slope)?;
        encoder.concat_own_feature = self.or("concat_own_feature", encoder.concat_own_feature)?;
        encoder.grouping = self.choice(
            "grouping",
            &[("relation", Grouping::Relation), ("relation-head", Grouping::RelationHead)],
            encoder.grouping,
        )?;
        let model = ModelConfig { attention, encoder };
        model.validate()?;
        if model.attention.heads == 0 {
            return Err(Error::Config("`heads` must be positive".into()));
        }

        let d = TrainConfig::default();
        let train = TrainConfig {
            alpha: self.or("alpha", d.alpha)?,
            epochs: self.or("epochs", d.epochs)?,
            learning_rate: self.or("lr", d.learning_rate)?,
            optimizer: self.choice(
                "optimizer",
                &[("adam", OptimizerKind::Adam), ("sgd", OptimizerKind::Sgd)],
                d.optimizer,
            )?,
            seed: self.or("seed", d.seed)?,
            batch_size: self.or("batch_size", d.batch_size)?,
            patience: self.or("patience", d.patience)?,
            val_fraction: self.or("val_fraction", d.val_fraction)?,
            schedule: self.choice(
                "schedule",
                &[("joint", Schedule::Joint), ("two-phase", Schedule::TwoPhase)],
                d.schedule,
            )?,
        };
        train.validate()?;

        let label_policy = match self.get("label_policy") {
            None | Some("median") => LabelPolicy::MedianSplit,
            Some(v) => {
                let parsed = v.split_once(':').and_then(|(kind, x)| {
                    let x: f64 = x.parse().ok()?;
                    match kind {
                        "fixed" => Some(LabelPolicy::FixedThreshold(x)),
                        "quantile" => Some(LabelPolicy::Quantile(x)),
                        _ => None,
                    }
                });
                parsed.ok_or_else(|| Error::Config(format!("invalid value `{v}` for `label_policy`")))?
            }
        };
        match label_policy {
            LabelPolicy::FixedThreshold(x) if !(x >= 0.0) => {
                return Err(Error::Config("fixed label threshold must be non-negative".into()))
            }
            LabelPolicy::Quantile(q) if !(0.0..=1.0).contains(&q) => {
                return Err(Error::Config("label quantile must lie in [0, 1]".into()))
            }
            _ => {}
        }
        let label_source = match self.get("label_source") {
            None | Some("predicted") => LabelSource::Predicted,
            Some("derived") => LabelSource::Derived,
            Some(v) => {
                return Err(Error::Config(format!(
                    "`label_source` must be one of predicted, derived, got `{v}`"
                )))
            }
        };
        let theta = self.or("theta", 0.5)?;
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::Config(format!("`theta` must lie in [0, 1], got {theta}")));
        }
        let half_life_override = self.parsed::<f64>("half_life")?;
        if half_life_override.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Config("`half_life` must be positive".into()));
        }
        let pipeline = PipelineConfig {
            model,
            train,
            label_policy,
            label_source,
            theta,
            missing_interval: self.choice(
                "missing_interval",
                &[("exclude", MissingIntervalPolicy::Exclude), ("span", MissingIntervalPolicy::TimeSpan)],
                MissingIntervalPolicy::Exclude,
            )?,
            zero_superseded: self.or("zero_superseded", false)?,
            half_life_override,
        };

        let s = SynthSpec::default();
        let synth = SynthSpec {
            n_entities: self.or("synth.entities", s.n_entities)?,
            n_relations: self.or("synth.relations", s.n_relations)?,
            n_fact_keys: self.or("synth.keys", s.n_fact_keys)?,
            fraction_active: self.or("synth.fraction_active", s.fraction_active)?,
            mean_interval_active: self.or("synth.mean_active", s.mean_interval_active)?,
            mean_interval_inactive: self.or("synth.mean_inactive", s.mean_interval_inactive)?,
            horizon: self.or("synth.horizon", s.horizon)?,
            seed: pipeline.train.seed,
        };
        synth.validate()?;

        Ok(RunConfig {
            pipeline,
            scope: self.choice("scope", &[("train", Scope::Train), ("all", Scope::All)], Scope::Train)?,
            t_current: self.get("t_current").map(str::to_string),
            synth,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.pipeline.theta, 0.5);
        assert_eq!(cfg.scope, Scope::Train);
        assert_eq!(cfg.pipeline.model, ModelConfig::default());
        assert_eq!(cfg.pipeline.train, TrainConfig::default());
    }

    #[test]
    fn later_values_override() {
        let mut s = Settings::parse("# comment\ntheta = 0.3\nseed=4\n\nlabel_policy = quantile:0.25\n").unwrap();
        s.set("theta", "0.7").unwrap();
        let cfg = s.resolve().unwrap();
        assert_eq!(cfg.pipeline.theta, 0.7);
        assert_eq!(cfg.pipeline.train.seed, 4);
        assert_eq!(cfg.synth.seed, 4);
        assert_eq!(cfg.pipeline.label_policy, LabelPolicy::Quantile(0.25));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Settings::parse("thetaa = 1").is_err());
        assert!(Settings::parse("no equals sign").is_err());
        for bad in ["theta=2", "alpha=-1", "d1=8", "optimizer=rmsprop", "hidden=4,x", "scope=test", "half_life=0"] {
            let s = Settings::parse(bad).unwrap();
            assert!(s.resolve().is_err(), "{bad}");
        }
    }

    #[test]
    fn layer_shorthand() {
        let s = Settings::parse("d3=8\nlayers=3").unwrap();
        assert_eq!(s.resolve().unwrap().pipeline.model.encoder.hidden, vec![8, 8, 8]);
        let s = Settings::parse("d1=8\nd2=8").unwrap();
        assert_eq!(s.resolve().unwrap().pipeline.model.attention.fact_dim, 25);
    }
}
