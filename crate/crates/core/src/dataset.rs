//! Quadruples, vocabularies, and per-key fact timelines.
//!
//! A fact key is a `(head, relation)` pair. Its timeline lists every
//! observed tail in time order; an *update* is a consecutive pair of events
//! whose tails differ and whose timestamps strictly increase.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days since the dataset epoch.
pub type Day = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
    pub timestamp: Day,
}

impl Quadruple {
    pub fn key(&self) -> FactKey {
        FactKey {
            head: self.head,
            relation: self.relation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FactKey {
    pub head: EntityId,
    pub relation: RelationId,
}

/// How the raw date column was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeFormat {
    /// `YYYY-MM-DD`; raw values are proleptic Gregorian day numbers, 0001-01-01 being 1.
    Iso,
    /// Plain integers taken as day counts.
    Integer,
}

/// Dense name/id tables plus the raw value of day zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: BTreeMap<String, EntityId>,
    relation_ids: BTreeMap<String, RelationId>,
    pub time_format: TimeFormat,
    /// Raw day value mapped to day-index 0.
    pub epoch: i64,
}

impl Vocab {
    pub fn new(time_format: TimeFormat) -> Self {
        Self {
            entities: Vec::new(),
            relations: Vec::new(),
            entity_ids: BTreeMap::new(),
            relation_ids: BTreeMap::new(),
            time_format,
            epoch: 0,
        }
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entity_ids.get(name) {
            return id;
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(name.to_string());
        self.entity_ids.insert(name.to_string(), id);
        id
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relation_ids.get(name) {
            return id;
        }
        let id = RelationId(self.relations.len() as u32);
        self.relations.push(name.to_string());
        self.relation_ids.insert(name.to_string(), id);
        id
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entities[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEvent {
    pub timestamp: Day,
    pub tail: EntityId,
    /// Position of the source quadruple in the dataset.
    pub quad: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactTimeline {
    pub key: FactKey,
    pub events: Vec<TimelineEvent>,
    /// Day counts between consecutive tail-changing events, all positive.
    pub intervals: Vec<u64>,
    pub mean_interval: Option<Ratio<u64>>,
}

impl FactTimeline {
    pub fn has_updates(&self) -> bool {
        !self.intervals.is_empty()
    }

    /// Quadruple indices whose tail is replaced by a strictly later event.
    pub fn superseded(&self) -> Vec<usize> {
        let mut out = Vec::new();
        // Distinct tails among strictly later events: none, exactly one, or several.
        let mut later_tail: Option<EntityId> = None;
        let mut several = false;
        let mut end = self.events.len();
        while end > 0 {
            let ts = self.events[end - 1].timestamp;
            let start = self.events[..end]
                .iter()
                .rposition(|e| e.timestamp != ts)
                .map_or(0, |p| p + 1);
            let group = &self.events[start..end];
            for e in group {
                let replaced = several || later_tail.is_some_and(|t| t != e.tail);
                if replaced {
                    out.push(e.quad);
                }
            }
            for e in group {
                match later_tail {
                    None => later_tail = Some(e.tail),
                    Some(t) if t != e.tail => several = true,
                    _ => {}
                }
            }
            end = start;
        }
        out.sort_unstable();
        out
    }
}

/// Groups quadruples by fact key and extracts update intervals.
///
/// Events sharing a timestamp keep their input order and never produce an
/// interval.
pub fn build_timelines(quadruples: &[Quadruple]) -> BTreeMap<FactKey, FactTimeline> {
    let mut groups: BTreeMap<FactKey, Vec<TimelineEvent>> = BTreeMap::new();
    for (i, q) in quadruples.iter().enumerate() {
        groups.entry(q.key()).or_default().push(TimelineEvent {
            timestamp: q.timestamp,
            tail: q.tail,
            quad: i,
        });
    }
    groups
        .into_iter()
        .map(|(key, mut events)| {
            // stable: equal timestamps stay in input order
            events.sort_by_key(|e| e.timestamp);
            let intervals: Vec<u64> = events
                .windows(2)
                .filter(|w| w[0].tail != w[1].tail && w[1].timestamp > w[0].timestamp)
                .map(|w| (w[1].timestamp - w[0].timestamp) as u64)
                .collect();
            let mean_interval = (!intervals.is_empty())
                .then(|| Ratio::new(intervals.iter().sum::<u64>(), intervals.len() as u64));
            let timeline = FactTimeline {
                key,
                events,
                intervals,
                mean_interval,
            };
            (key, timeline)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub quadruples: Vec<Quadruple>,
    pub vocab: Vocab,
    pub timelines: BTreeMap<FactKey, FactTimeline>,
    pub t_current: Day,
}

impl Dataset {
    /// Builds timelines and sets `t_current` to the latest timestamp.
    pub fn new(quadruples: Vec<Quadruple>, vocab: Vocab) -> Result<Self> {
        if quadruples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        for q in &quadruples {
            if q.head.index() >= vocab.num_entities() {
                return Err(Error::IndexOutOfRange {
                    what: "entity",
                    index: q.head.index(),
                    len: vocab.num_entities(),
                });
            }
            if q.tail.index() >= vocab.num_entities() {
                return Err(Error::IndexOutOfRange {
                    what: "entity",
                    index: q.tail.index(),
                    len: vocab.num_entities(),
                });
            }
            if q.relation.index() >= vocab.num_relations() {
                return Err(Error::IndexOutOfRange {
                    what: "relation",
                    index: q.relation.index(),
                    len: vocab.num_relations(),
                });
            }
            if q.timestamp < 0 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "negative timestamp {}",
                    q.timestamp
                )));
            }
        }
        let t_current = quadruples.iter().map(|q| q.timestamp).max().unwrap_or(0);
        let timelines = build_timelines(&quadruples);
        Ok(Self {
            quadruples,
            vocab,
            timelines,
            t_current,
        })
    }

    pub fn with_t_current(mut self, t_current: Day) -> Result<Self> {
        self.set_t_current(t_current)?;
        Ok(self)
    }

    pub fn set_t_current(&mut self, t_current: Day) -> Result<()> {
        let max = self.max_timestamp();
        if t_current < max {
            return Err(Error::FutureFact {
                timestamp: max,
                current: t_current,
            });
        }
        self.t_current = t_current;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.quadruples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadruples.is_empty()
    }

    pub fn max_timestamp(&self) -> Day {
        self.quadruples.iter().map(|q| q.timestamp).max().unwrap_or(0)
    }

    pub fn min_timestamp(&self) -> Day {
        self.quadruples.iter().map(|q| q.timestamp).min().unwrap_or(0)
    }

    /// Days covered by the data.
    pub fn time_span(&self) -> u64 {
        (self.max_timestamp() - self.min_timestamp()) as u64
    }

    /// Keep-flags marking quadruples superseded by a later tail change.
    pub fn superseded_mask(&self) -> Vec<bool> {
        let mut flags = alloc::vec![false; self.quadruples.len()];
        for tl in self.timelines.values() {
            for i in tl.superseded() {
                flags[i] = true;
            }
        }
        flags
    }

    /// Raw day value (pre-epoch shift) of a quadruple's timestamp.
    pub fn raw_day(&self, q: &Quadruple) -> i64 {
        q.timestamp + self.vocab.epoch
    }
}

/// Accumulates string records and assigns ids in first-appearance order.
#[derive(Debug, Clone)]
pub struct DatasetBuilder {
    vocab: Vocab,
    raw: Vec<(EntityId, RelationId, EntityId, i64)>,
}

impl DatasetBuilder {
    pub fn new(time_format: TimeFormat) -> Self {
        Self {
            vocab: Vocab::new(time_format),
            raw: Vec::new(),
        }
    }

    /// `raw_day` is in absolute units; the epoch shift happens in [`build`](Self::build).
    pub fn push(&mut self, head: &str, relation: &str, tail: &str, raw_day: i64) {
        let h = self.vocab.intern_entity(head);
        let r = self.vocab.intern_relation(relation);
        let t = self.vocab.intern_entity(tail);
        self.raw.push((h, r, t, raw_day));
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn build(mut self) -> Result<Dataset> {
        let epoch = self
            .raw
            .iter()
            .map(|r| r.3)
            .min()
            .ok_or(Error::Empty("dataset"))?;
        self.vocab.epoch = epoch;
        let quads = self
            .raw
            .into_iter()
            .map(|(head, relation, tail, day)| Quadruple {
                head,
                relation,
                tail,
                timestamp: day - epoch,
            })
            .collect();
        Dataset::new(quads, self.vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn q(h: u32, r: u32, t: u32, ts: i64) -> Quadruple {
        Quadruple {
            head: EntityId(h),
            relation: RelationId(r),
            tail: EntityId(t),
            timestamp: ts,
        }
    }

    fn key(h: u32, r: u32) -> FactKey {
        FactKey {
            head: EntityId(h),
            relation: RelationId(r),
        }
    }

    #[test]
    fn intervals_from_tail_changes() {
        let quads = vec![q(1, 1, 3, 11), q(1, 1, 1, 1), q(1, 1, 2, 5)];
        let tl = &build_timelines(&quads)[&key(1, 1)];
        assert_eq!(tl.intervals, vec![4, 6]);
        assert_eq!(tl.mean_interval, Some(Ratio::from_integer(5)));
        let ts: Vec<_> = tl.events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1, 5, 11]);
    }

    #[test]
    fn single_event_has_no_interval() {
        let tl = &build_timelines(&[q(0, 0, 1, 3)])[&key(0, 0)];
        assert!(tl.intervals.is_empty());
        assert_eq!(tl.mean_interval, None);
    }

    #[test]
    fn same_tail_is_not_an_update() {
        let tl = &build_timelines(&[q(0, 0, 1, 2), q(0, 0, 1, 7)])[&key(0, 0)];
        assert!(tl.intervals.is_empty());
    }

    #[test]
    fn simultaneous_events_keep_order_and_give_no_interval() {
        let quads = vec![q(0, 0, 1, 4), q(0, 0, 2, 4), q(0, 0, 3, 9)];
        let tl = &build_timelines(&quads)[&key(0, 0)];
        let tails: Vec<_> = tl.events.iter().map(|e| e.tail.0).collect();
        assert_eq!(tails, vec![1, 2, 3]);
        assert_eq!(tl.intervals, vec![5]);
    }

    #[test]
    fn superseded_requires_later_different_tail() {
        let quads = vec![q(0, 0, 1, 1), q(0, 0, 2, 5), q(0, 0, 1, 9), q(0, 0, 1, 9)];
        let ds = Dataset::new(quads, vocab_for(3, 1)).unwrap();
        assert_eq!(ds.superseded_mask(), vec![true, true, false, false]);
    }

    fn vocab_for(entities: usize, relations: usize) -> Vocab {
        let mut v = Vocab::new(TimeFormat::Integer);
        for i in 0..entities {
            v.intern_entity(&alloc::format!("e{i}"));
        }
        for i in 0..relations {
            v.intern_relation(&alloc::format!("r{i}"));
        }
        v
    }

    #[test]
    fn builder_shifts_to_epoch_and_keeps_duplicates() {
        let mut b = DatasetBuilder::new(TimeFormat::Integer);
        b.push("a", "likes", "b", 100);
        b.push("a", "likes", "b", 100);
        b.push("b", "likes", "a", 102);
        let ds = b.build().unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.vocab.epoch, 100);
        assert_eq!(ds.quadruples[0], ds.quadruples[1]);
        assert_eq!(ds.t_current, 2);
        assert_eq!(ds.vocab.num_entities(), 2);
        assert_eq!(ds.timelines.len(), 2);
    }

    #[test]
    fn dataset_rejects_bad_ids_and_early_current_time() {
        assert!(Dataset::new(vec![q(5, 0, 0, 0)], vocab_for(2, 1)).is_err());
        assert!(Dataset::new(vec![], vocab_for(2, 1)).is_err());
        let ds = Dataset::new(vec![q(0, 0, 1, 7)], vocab_for(2, 1)).unwrap();
        assert!(ds.clone().with_t_current(6).is_err());
        assert_eq!(ds.with_t_current(30).unwrap().t_current, 30);
    }
}
