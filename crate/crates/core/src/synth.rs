//! Synthetic temporal graphs with known update processes, plus
//! filter-quality metrics and parameter sweeps against the known staleness.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Day, EntityId, FactKey, Quadruple, RelationId, TimeFormat, Vocab};
use crate::encoder::ActivityClass;
use crate::error::{Error, Result};
use crate::halflife::{flag_outdated, score_facts, HalfLifeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_fact_keys: usize,
    pub fraction_active: f64,
    /// Mean days between tail changes of an active key.
    pub mean_interval_active: f64,
    pub mean_interval_inactive: f64,
    /// Last day events may occur on; also the evaluation time.
    pub horizon: Day,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 10,
            n_fact_keys: 1000,
            fraction_active: 0.3,
            mean_interval_active: 20.0,
            mean_interval_inactive: 160.0,
            horizon: 730,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n_entities < 2 || self.n_relations == 0 {
            return bad("need at least two entities and one relation");
        }
        if self.n_fact_keys == 0 || self.n_fact_keys > self.n_entities * self.n_relations {
            return bad("n_fact_keys must be in 1..=n_entities*n_relations");
        }
        if !(0.0..=1.0).contains(&self.fraction_active) {
            return bad("fraction_active must lie in [0, 1]");
        }
        if !(self.mean_interval_active >= 1.0 && self.mean_interval_inactive >= 1.0) {
            return bad("mean intervals must be at least one day");
        }
        if !(self.mean_interval_active < self.mean_interval_inactive) {
            return bad("active keys must update faster than inactive ones");
        }
        if self.horizon < 0 {
            return bad("horizon must be non-negative");
        }
        Ok(())
    }
}

/// Known classes, event times, and staleness of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub classes: BTreeMap<FactKey, ActivityClass>,
    /// Tail-change days per key, in dataset day-index.
    pub update_times: BTreeMap<FactKey, Vec<Day>>,
    /// Per quadruple: superseded by a later tail change before the horizon.
    pub stale: Vec<bool>,
}

impl GroundTruth {
    /// Rebuilds stale flags for `dataset` from per-key event times.
    pub fn from_update_times(
        dataset: &Dataset,
        classes: BTreeMap<FactKey, ActivityClass>,
        update_times: BTreeMap<FactKey, Vec<Day>>,
    ) -> Self {
        let stale = dataset
            .quadruples
            .iter()
            .map(|q| {
                update_times
                    .get(&q.key())
                    .is_some_and(|ts| ts.iter().any(|&t| t > q.timestamp))
            })
            .collect();
        Self {
            classes,
            update_times,
            stale,
        }
    }

    /// Ground-truth class of each quadruple.
    pub fn quad_classes(&self, dataset: &Dataset) -> Vec<ActivityClass> {
        dataset
            .quadruples
            .iter()
            .map(|q| self.classes.get(&q.key()).copied().unwrap_or(ActivityClass::Inactive))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    pub warnings: Vec<String>,
}

fn interval_sampler(mean: f64) -> Result<Geometric> {
    Geometric::new(1.0 / mean).map_err(|e| Error::InvalidConfig(format!("{e}")))
}

/// Generates keys whose tails change at geometric inter-arrival times.
///
/// Every event changes the tail, so all but the last event of a key are
/// stale at the horizon. Quadruples are emitted in time order.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut warnings = Vec::new();
    if (spec.horizon as f64) < spec.mean_interval_inactive {
        warnings.push(format!(
            "horizon {} is shorter than the inactive mean interval {}; few updates will be generated",
            spec.horizon, spec.mean_interval_inactive
        ));
    }
    let mut vocab = Vocab::new(TimeFormat::Integer);
    for i in 0..spec.n_entities {
        vocab.intern_entity(&format!("e{i}"));
    }
    for i in 0..spec.n_relations {
        vocab.intern_relation(&format!("r{i}"));
    }

    let mut pairs: Vec<(u32, u32)> = (0..spec.n_entities as u32)
        .flat_map(|h| (0..spec.n_relations as u32).map(move |r| (h, r)))
        .collect();
    let (chosen, _) = pairs.partial_shuffle(&mut rng, spec.n_fact_keys);
    let chosen = chosen.to_vec();
    let n_active = libm::round(spec.fraction_active * spec.n_fact_keys as f64) as usize;
    let active_gap = interval_sampler(spec.mean_interval_active)?;
    let inactive_gap = interval_sampler(spec.mean_interval_inactive)?;

    // (day, key slot, tail)
    let mut events: Vec<(Day, usize, u32)> = Vec::new();
    let mut keys = Vec::with_capacity(chosen.len());
    for (slot, &(h, r)) in chosen.iter().enumerate() {
        let class = if slot < n_active {
            ActivityClass::Active
        } else {
            ActivityClass::Inactive
        };
        let gap = match class {
            ActivityClass::Active => &active_gap,
            ActivityClass::Inactive => &inactive_gap,
        };
        keys.push((
            FactKey {
                head: EntityId(h),
                relation: RelationId(r),
            },
            class,
        ));
        let mut t = gap.sample(&mut rng) as Day;
        let mut tail: Option<u32> = None;
        while t <= spec.horizon {
            let next = loop {
                let c = rng.random_range(0..spec.n_entities as u32);
                if Some(c) != tail {
                    break c;
                }
            };
            events.push((t, slot, next));
            tail = Some(next);
            t += gap.sample(&mut rng) as Day + 1;
        }
    }
    if events.is_empty() {
        return Err(Error::Empty("generated events"));
    }
    events.sort_unstable_by_key(|&(t, slot, _)| (t, slot));
    let epoch = events[0].0;
    vocab.epoch = epoch;

    let mut last_event: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, &(_, slot, _)) in events.iter().enumerate() {
        last_event.insert(slot, i);
    }
    let mut update_times: BTreeMap<FactKey, Vec<Day>> = BTreeMap::new();
    let mut quads = Vec::with_capacity(events.len());
    let mut stale = Vec::with_capacity(events.len());
    for (i, &(t, slot, tail)) in events.iter().enumerate() {
        let key = keys[slot].0;
        quads.push(Quadruple {
            head: key.head,
            relation: key.relation,
            tail: EntityId(tail),
            timestamp: t - epoch,
        });
        stale.push(last_event[&slot] != i);
        update_times.entry(key).or_default().push(t - epoch);
    }
    let classes = keys
        .iter()
        .filter(|(k, _)| update_times.contains_key(k))
        .copied()
        .collect();
    let dataset = Dataset::new(quads, vocab)?.with_t_current(spec.horizon - epoch)?;
    Ok(SynthOutput {
        dataset,
        truth: GroundTruth {
            classes,
            update_times,
            stale,
        },
        warnings,
    })
}

/// Binary metrics with "outdated" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// `None` when nothing was flagged.
    pub precision: Option<f64>,
    /// `None` when the truth has no stale facts.
    pub recall: Option<f64>,
    /// `None` when neither side has a positive.
    pub f1: Option<f64>,
}

pub fn evaluate_filter(keep: &[bool], stale: &[bool]) -> Result<FilterMetrics> {
    if keep.len() != stale.len() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_filter",
            left: [keep.len(), 1],
            right: [stale.len(), 1],
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&k, &s) in keep.iter().zip(stale) {
        match (!k, s) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(FilterMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    Theta,
    HalfLife,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Theta => "theta",
            SweepParam::HalfLife => "half_life",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub filtered_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    /// Row with the highest F1 (first on ties).
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|i| &self.rows[i])
    }
}

/// Scores one filtering configuration per grid value.
///
/// Sweeping `Theta` keeps `half_lives`; sweeping `HalfLife` applies each
/// value to both classes and filters at `theta`.
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    dataset: &Dataset,
    stale: &[bool],
    classes: &[ActivityClass],
    half_lives: &HalfLifeModel,
    theta: f64,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Empty("sweep grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let base_scores = score_facts(dataset, classes, half_lives, false)?;
    for &value in grid {
        let mut scores = match param {
            SweepParam::Theta => base_scores.clone(),
            SweepParam::HalfLife => {
                score_facts(dataset, classes, &HalfLifeModel::uniform(value)?, false)?
            }
        };
        let t = match param {
            SweepParam::Theta => value,
            SweepParam::HalfLife => theta,
        };
        let keep = flag_outdated(&mut scores, t)?;
        let m = evaluate_filter(&keep, stale)?;
        let dropped = keep.iter().filter(|k| !**k).count();
        rows.push(SweepRow {
            value,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            filtered_fraction: dropped as f64 / keep.len() as f64,
        });
    }
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if let Some(f) = row.f1 {
            if best.is_none_or(|b| rows[b].f1.is_none_or(|bf| f > bf)) {
                best = Some(i);
            }
        }
    }
    Ok(SweepResult { param, rows, best })
}

/// Small dataset whose activity depends only on the head entity.
///
/// 20 entities, 3 relations, 200 quadruples. Keys headed by entities 0..10
/// change tail every 2 to 4 days; the rest every 40 to 60 days.
pub fn toy_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocab::new(TimeFormat::Integer);
    for i in 0..20 {
        vocab.intern_entity(&format!("e{i}"));
    }
    for i in 0..3 {
        vocab.intern_relation(&format!("r{i}"));
    }
    let mut quads = Vec::with_capacity(200);
    let mut inactive_seen = 0;
    for h in 0..20u32 {
        for r in 0..3u32 {
            let active = h < 10;
            let events = if active {
                4
            } else {
                inactive_seen += 1;
                if inactive_seen <= 20 {
                    3
                } else {
                    2
                }
            };
            let mut t: Day = rng.random_range(0..10);
            let mut tail = u32::MAX;
            for _ in 0..events {
                let next = loop {
                    let c = rng.random_range(0..20);
                    if c != tail {
                        break c;
                    }
                };
                quads.push(Quadruple {
                    head: EntityId(h),
                    relation: RelationId(r),
                    tail: EntityId(next),
                    timestamp: t,
                });
                tail = next;
                t += if active {
                    rng.random_range(2..=4)
                } else {
                    rng.random_range(40..=60)
                };
            }
        }
    }
    quads.sort_by_key(|q| q.timestamp);
    Dataset::new(quads, vocab).expect("toy dataset is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_inactive_when_no_active_fraction() {
        let spec = SynthSpec {
            n_fact_keys: 50,
            fraction_active: 0.0,
            ..SynthSpec::default()
        };
        let out = generate(&spec).unwrap();
        assert!(out.truth.classes.values().all(|c| *c == ActivityClass::Inactive));
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SynthSpec {
            n_fact_keys: 40,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        let c = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.dataset.quadruples, c.dataset.quadruples);
    }

    #[test]
    fn stale_flags_match_rebuilt_truth() {
        let out = generate(&SynthSpec {
            n_fact_keys: 100,
            ..SynthSpec::default()
        })
        .unwrap();
        let rebuilt = GroundTruth::from_update_times(
            &out.dataset,
            out.truth.classes.clone(),
            out.truth.update_times.clone(),
        );
        assert_eq!(rebuilt.stale, out.truth.stale);
        assert_eq!(out.dataset.superseded_mask(), out.truth.stale);
    }

    #[test]
    fn short_horizon_warns() {
        let out = generate(&SynthSpec {
            n_fact_keys: 20,
            horizon: 50,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn metric_examples() {
        let stale = [true, false, true, false];
        let perfect = evaluate_filter(&[false, true, false, true], &stale).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (Some(1.0), Some(1.0), Some(1.0)));
        // inverted: tp=0 fp=2 fn=2
        let inv = evaluate_filter(&[true, false, true, false], &stale).unwrap();
        assert_eq!((inv.false_positives, inv.false_negatives), (2, 2));
        assert_eq!((inv.precision, inv.recall, inv.f1), (Some(0.0), Some(0.0), Some(0.0)));
        let none = evaluate_filter(&[true; 4], &stale).unwrap();
        assert_eq!((none.precision, none.recall), (None, Some(0.0)));
        let no_truth = evaluate_filter(&[true, false], &[false, false]).unwrap();
        assert_eq!(no_truth.recall, None);
        assert!(evaluate_filter(&[true], &stale).is_err());
    }

    #[test]
    fn toy_dataset_shape() {
        let ds = toy_dataset(0);
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.vocab.num_entities(), 20);
        assert_eq!(ds.vocab.num_relations(), 3);
        assert_eq!(ds.timelines.len(), 60);
    }
}
