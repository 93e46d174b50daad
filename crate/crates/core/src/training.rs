//! Joint training loop and the end-to-end filtering pipeline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{sample_corruptions, FactBatch};
use crate::dataset::{Dataset, FactKey, Quadruple};
use crate::encoder::{derive_labels, ActivityClass, FactsToNodesGraph, LabelPolicy};
use crate::error::{Error, Result};
use crate::halflife::{
    estimate_half_life, flag_outdated, score_facts, HalfLifeEstimate, HalfLifeModel,
    MissingIntervalPolicy, ValidityScore,
};
use crate::model::{known_facts, Model, ModelConfig, StepTargets};
use crate::nd::{Adam, AdamConfig, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    /// Both terms every epoch.
    Joint,
    /// First half of the epochs on the margin loss alone, then the classifier alone.
    TwoPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Facts per step; 0 trains full-batch.
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of facts held out from the classifier loss.
    pub val_fraction: f64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epochs: 200,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            batch_size: 0,
            patience: 50,
            val_fraction: 0.1,
            schedule: Schedule::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn alpha_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Joint => self.alpha,
            Schedule::TwoPhase if epoch <= self.epochs / 2 => 1.0,
            Schedule::TwoPhase => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub l_gat: f64,
    pub l_bec: f64,
    pub total: f64,
    /// Classifier accuracy over all labelled facts.
    pub accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochStats>,
    pub stopped_early: bool,
    /// Accuracy of the returned parameters over all facts.
    pub final_accuracy: f64,
    /// Parameters that never received a nonzero gradient.
    pub dead_params: Vec<String>,
}

fn accuracy(probs: &[f64], labels: &[f64], idx: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for i in idx {
        n += 1;
        if (probs[i] >= 0.5) == (labels[i] >= 0.5) {
            hit += 1;
        }
    }
    (n > 0).then(|| hit as f64 / n as f64)
}

enum Optimizer {
    Sgd(f64),
    Adam(Adam),
}

/// Minimises the joint loss. `labels` holds one class per quadruple.
///
/// `observer` sees every epoch's statistics as they are produced.
pub fn train(
    dataset: &Dataset,
    labels: &[ActivityClass],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if labels.len() != dataset.len() {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: [dataset.len(), 1],
            right: [labels.len(), 1],
        });
    }
    let quads = &dataset.quadruples;
    let n = quads.len();
    let y: Vec<f64> = labels.iter().map(|c| c.label() as f64).collect();
    let mut model = Model::init(
        model_cfg.clone(),
        dataset.vocab.num_entities(),
        dataset.vocab.num_relations(),
        cfg.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = libm::floor(cfg.val_fraction * n as f64) as usize;
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }

    let batch = FactBatch::new(quads, dataset.t_current)?;
    let f2n = FactsToNodesGraph::new(quads, model_cfg.encoder.grouping);
    let known = known_facts(quads);
    let per_pos = model_cfg.attention.negatives_per_positive;
    let mut optimizer = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(cfg.learning_rate),
        OptimizerKind::Adam => Optimizer::Adam(Adam::new(
            AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &model.store,
        )),
    };
    let mut touched = vec![false; model.store.len()];
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, crate::nd::ParamStore)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let alpha = cfg.alpha_at(epoch);
        let mut steps: Vec<Vec<usize>> = Vec::new();
        if cfg.batch_size == 0 || cfg.batch_size >= n {
            steps.push((0..n).collect());
        } else {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            steps.extend(perm.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        let (mut sum_gat, mut sum_bec, mut sum_total) = (0.0, 0.0, 0.0);
        let mut last_probs = Vec::new();
        for step in &steps {
            let subset: Vec<Quadruple> = step.iter().map(|&i| quads[i]).collect();
            let pairs = sample_corruptions(&subset, &known, dataset.vocab.num_entities(), per_pos, &mut rng);
            let positives: Vec<usize> = pairs.iter().map(|(p, _)| step[*p]).collect();
            let corruptions: Vec<Quadruple> = pairs.iter().map(|(_, c)| *c).collect();
            let mut labelled: Vec<usize> = step.iter().copied().filter(|&i| !is_val[i]).collect();
            if labelled.is_empty() {
                labelled = step.clone();
            }
            let step_labels: Vec<f64> = labelled.iter().map(|&i| y[i]).collect();
            let targets = StepTargets {
                positives: &positives,
                corruptions: &corruptions,
                labelled: &labelled,
                labels: &step_labels,
            };
            let mut g = Graph::new();
            let fwd = model.forward(&mut g, &batch, &f2n)?;
            let parts = model.losses(&mut g, &fwd, quads, dataset.t_current, &targets, alpha)?;
            let total = g.value(parts.total).item();
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            sum_gat += g.value(parts.gat).item();
            sum_bec += g.value(parts.bec).item();
            sum_total += total;
            let grads = g.backward(parts.total)?;
            g.accumulate(&grads, &mut model.store);
            for (i, (_, _, t)) in model.store.iter().enumerate() {
                if !touched[i] && t.grad().is_some_and(|g| g.iter().any(|x| *x != 0.0)) {
                    touched[i] = true;
                }
            }
            match &mut optimizer {
                Optimizer::Sgd(lr) => crate::nd::sgd_step(&mut model.store, *lr)?,
                Optimizer::Adam(adam) => adam.step(&mut model.store)?,
            }
            last_probs = g.value(fwd.encoder.probs).data().to_vec();
        }
        let k = steps.len() as f64;
        let stats = EpochStats {
            epoch,
            l_gat: sum_gat / k,
            l_bec: sum_bec / k,
            total: sum_total / k,
            accuracy: accuracy(&last_probs, &y, 0..n).unwrap_or(0.0),
            val_accuracy: accuracy(&last_probs, &y, (0..n).filter(|&i| is_val[i])),
        };
        observer(&stats);
        let val = stats.val_accuracy;
        log.push(stats);

        if cfg.patience > 0 {
            if let Some(v) = val {
                match &best {
                    Some((b, _)) if v <= *b => since_best += 1,
                    _ => {
                        best = Some((v, model.store.clone()));
                        since_best = 0;
                    }
                }
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    if stopped_early {
        if let Some((_, store)) = best {
            model.store = store;
        }
    }
    let probs = model.predict(dataset)?;
    let final_accuracy = accuracy(&probs, &y, 0..n).unwrap_or(0.0);
    let dead_params = model
        .store
        .iter()
        .filter(|(id, _, _)| !touched[id.index()])
        .map(|(_, name, _)| name.to_string())
        .collect();
    Ok(TrainOutcome {
        model,
        log,
        stopped_early,
        final_accuracy,
        dead_params,
    })
}

/// Where the activity classes used for half-life estimation come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// Train the classifier on policy labels and use its predictions.
    Predicted,
    /// Use the policy labels directly.
    Derived,
    /// Externally supplied classes, e.g. ground truth.
    Provided(BTreeMap<FactKey, ActivityClass>),
}

impl LabelSource {
    pub fn name(&self) -> &'static str {
        match self {
            LabelSource::Predicted => "predicted",
            LabelSource::Derived => "derived",
            LabelSource::Provided(_) => "provided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub label_policy: LabelPolicy,
    pub label_source: LabelSource,
    /// Validity threshold below which a fact is outdated.
    pub theta: f64,
    pub missing_interval: MissingIntervalPolicy,
    pub zero_superseded: bool,
    /// Forces one half-life for both classes.
    pub half_life_override: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            label_policy: LabelPolicy::MedianSplit,
            label_source: LabelSource::Predicted,
            theta: 0.5,
            missing_interval: MissingIntervalPolicy::Exclude,
            zero_superseded: false,
            half_life_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub keys: usize,
    pub quadruples: usize,
    pub outdated: usize,
    pub half_life_days: f64,
    /// Exact half-life as `numerator/denominator`.
    pub half_life_exact: String,
    /// Keys with a defined mean interval.
    pub contributors: usize,
}

/// Aggregate outcome of one filtering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub schema_version: u32,
    pub quadruples: usize,
    pub kept: usize,
    pub outdated: usize,
    pub filtered_fraction: f64,
    pub theta: f64,
    pub t_current: i64,
    pub label_source: String,
    pub zero_superseded: bool,
    pub half_life_override: Option<f64>,
    pub active: ClassCounts,
    pub inactive: ClassCounts,
    pub classifier_accuracy: Option<f64>,
    pub warnings: Vec<String>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: FilterReport,
    pub scores: Vec<ValidityScore>,
    pub keep: Vec<bool>,
    pub key_classes: BTreeMap<FactKey, ActivityClass>,
    /// Mean predicted inactive probability per key, when a classifier ran.
    pub key_probs: Option<BTreeMap<FactKey, f64>>,
    pub half_lives: HalfLifeEstimate,
    pub training: Option<TrainOutcome>,
}

/// Key class from the mean inactive probability of its quadruples.
pub fn key_classes_from_probs(
    dataset: &Dataset,
    probs: &[f64],
) -> (BTreeMap<FactKey, ActivityClass>, BTreeMap<FactKey, f64>) {
    let mut acc: BTreeMap<FactKey, (f64, usize)> = BTreeMap::new();
    for (q, &p) in dataset.quadruples.iter().zip(probs) {
        let e = acc.entry(q.key()).or_insert((0.0, 0));
        e.0 += p;
        e.1 += 1;
    }
    let means: BTreeMap<FactKey, f64> = acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect();
    let classes = means.iter().map(|(k, &p)| (*k, ActivityClass::from_prob(p))).collect();
    (classes, means)
}

/// Per-quadruple classes inherited from their keys.
pub fn quad_classes(
    dataset: &Dataset,
    key_classes: &BTreeMap<FactKey, ActivityClass>,
) -> Result<Vec<ActivityClass>> {
    dataset
        .quadruples
        .iter()
        .map(|q| {
            key_classes.get(&q.key()).copied().ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "no class for fact key ({}, {})",
                    q.head.0, q.relation.0
                ))
            })
        })
        .collect()
}

/// Classify, estimate half-lives, score and flag. Training runs only for
/// [`LabelSource::Predicted`], or when `trained` supplies a model.
pub fn pipeline_run(
    dataset: &Dataset,
    cfg: &PipelineConfig,
    trained: Option<&Model>,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<PipelineOutput> {
    if !(0.0..=1.0).contains(&cfg.theta) {
        return Err(Error::InvalidThreshold(cfg.theta));
    }
    let mut training = None;
    let mut key_probs = None;
    let mut accuracy = None;
    let key_classes = match (&cfg.label_source, trained) {
        (LabelSource::Provided(map), _) => map.clone(),
        (LabelSource::Derived, _) => derive_labels(&dataset.timelines, cfg.label_policy)?,
        (LabelSource::Predicted, Some(model)) => {
            let probs = model.predict(dataset)?;
            let targets = derive_labels(&dataset.timelines, cfg.label_policy)?;
            let y = quad_classes(dataset, &targets)?;
            accuracy = Some(
                probs
                    .iter()
                    .zip(&y)
                    .filter(|(p, c)| ActivityClass::from_prob(**p) == **c)
                    .count() as f64
                    / y.len() as f64,
            );
            let (classes, means) = key_classes_from_probs(dataset, &probs);
            key_probs = Some(means);
            classes
        }
        (LabelSource::Predicted, None) => {
            let targets = derive_labels(&dataset.timelines, cfg.label_policy)?;
            let y = quad_classes(dataset, &targets)?;
            let outcome = train(dataset, &y, &cfg.model, &cfg.train, observer)?;
            let probs = outcome.model.predict(dataset)?;
            accuracy = Some(outcome.final_accuracy);
            let (classes, means) = key_classes_from_probs(dataset, &probs);
            key_probs = Some(means);
            training = Some(outcome);
            classes
        }
    };
    let per_quad = quad_classes(dataset, &key_classes)?;
    let mut half_lives = estimate_half_life(
        &key_classes,
        &dataset.timelines,
        dataset.time_span(),
        cfg.missing_interval,
    )?;
    if let Some(days) = cfg.half_life_override {
        half_lives.model = HalfLifeModel::uniform(days)?;
    }
    let mut scores = score_facts(dataset, &per_quad, &half_lives.model, cfg.zero_superseded)?;
    let keep = flag_outdated(&mut scores, cfg.theta)?;

    let class_counts = |class: ActivityClass| {
        let keys = key_classes
            .iter()
            .filter(|(k, c)| **c == class && dataset.timelines.contains_key(k))
            .count();
        let quadruples = per_quad.iter().filter(|c| **c == class).count();
        let outdated = scores.iter().filter(|s| s.class == class && s.outdated).count();
        let exact = half_lives.model.exact(class);
        ClassCounts {
            keys,
            quadruples,
            outdated,
            half_life_days: half_lives.model.half_life(class),
            half_life_exact: format!("{}/{}", exact.numer(), exact.denom()),
            contributors: half_lives.contributors[class.label() as usize],
        }
    };
    let outdated = keep.iter().filter(|k| !**k).count();
    let report = FilterReport {
        schema_version: REPORT_SCHEMA_VERSION,
        quadruples: dataset.len(),
        kept: dataset.len() - outdated,
        outdated,
        filtered_fraction: outdated as f64 / dataset.len() as f64,
        theta: cfg.theta,
        t_current: dataset.t_current,
        label_source: cfg.label_source.name().to_string(),
        zero_superseded: cfg.zero_superseded,
        half_life_override: cfg.half_life_override,
        active: class_counts(ActivityClass::Active),
        inactive: class_counts(ActivityClass::Inactive),
        classifier_accuracy: accuracy,
        warnings: half_lives.warnings.clone(),
    };
    Ok(PipelineOutput {
        report,
        scores,
        keep,
        key_classes,
        key_probs,
        half_lives,
        training,
    })
}
