//! Relation-grouped graph convolution over facts and the activity classifier.
//!
//! Facts sharing a relation form a complete graph with unit edge weights.
//! With self-loops every node has degree `n`, so the symmetric normalisation
//! `D^-1/2 (A + I) D^-1/2` is the constant matrix `1/n`: one layer replaces
//! each row by the group mean before the linear map. Groups are therefore
//! never materialised.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{FactKey, FactTimeline, Quadruple};
use crate::error::{Error, Result};
use crate::nd::{sigmoid, Graph, ParamId, ParamStore, Tensor, Var};

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Which facts are linked in the facts-to-nodes graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Grouping {
    /// All facts with the same relation.
    Relation,
    /// Facts with the same relation and head entity.
    RelationHead,
}

/// Group membership of each fact.
#[derive(Debug, Clone)]
pub struct FactsToNodesGraph {
    pub group_of: Rc<[usize]>,
    pub sizes: Vec<usize>,
}

impl FactsToNodesGraph {
    pub fn new(quads: &[Quadruple], grouping: Grouping) -> Self {
        let mut ids: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        let group_of: Vec<usize> = quads
            .iter()
            .map(|q| {
                let key = match grouping {
                    Grouping::Relation => (q.relation.0, 0),
                    Grouping::RelationHead => (q.relation.0, q.head.0),
                };
                let next = ids.len();
                *ids.entry(key).or_insert(next)
            })
            .collect();
        let mut sizes = vec![0; ids.len()];
        for &g in &group_of {
            sizes[g] += 1;
        }
        Self {
            group_of: group_of.into(),
            sizes,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_facts(&self) -> usize {
        self.group_of.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the projected fact features.
    pub d3: usize,
    /// Output width of each convolution layer; its length is the layer count.
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Feed `[gcn output || projected feature]` to the classifier.
    pub concat_own_feature: bool,
    pub grouping: Grouping,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d3: 32,
            hidden: vec![32, 32],
            leaky_slope: 0.2,
            concat_own_feature: true,
            grouping: Grouping::Relation,
        }
    }
}

impl EncoderConfig {
    pub fn layers(&self) -> usize {
        self.hidden.len()
    }

    pub fn classifier_dim(&self) -> usize {
        let last = self.hidden.last().copied().unwrap_or(self.d3);
        if self.concat_own_feature {
            last + self.d3
        } else {
            last
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d3 == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("encoder widths must be positive".into()));
        }
        if self.hidden.is_empty() {
            return Err(Error::InvalidConfig("encoder needs at least one layer".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig("leaky slope must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub w3: ParamId,
    pub theta: Vec<ParamId>,
    pub cls_weight: ParamId,
    pub cls_bias: ParamId,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &EncoderConfig,
        fact_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w3 = store.insert("enc.w3", Tensor::param(fact_dim, cfg.d3, fact_dim, rng));
        let mut theta = Vec::with_capacity(cfg.layers());
        let mut width = cfg.d3;
        for (l, &h) in cfg.hidden.iter().enumerate() {
            theta.push(store.insert(&format!("enc.theta.{l}"), Tensor::param(width, h, width, rng)));
            width = h;
        }
        let c = cfg.classifier_dim();
        let cls_weight = store.insert("cls.weight", Tensor::param(c, 1, c, rng));
        let cls_bias = store.insert("cls.bias", Tensor::zeros(1, 1));
        Self {
            w3,
            theta,
            cls_weight,
            cls_bias,
        }
    }

    pub fn bind(store: &ParamStore, cfg: &EncoderConfig) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
        };
        let theta = (0..cfg.layers())
            .map(|l| get(&format!("enc.theta.{l}")))
            .collect::<Result<_>>()?;
        Ok(Self {
            w3: get("enc.w3")?,
            theta,
            cls_weight: get("cls.weight")?,
            cls_bias: get("cls.bias")?,
        })
    }
}

/// Graph nodes produced by the encoder and classifier head.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub projected: Var,
    pub hidden: Var,
    pub logits: Var,
    pub probs: Var,
}

pub fn forward(
    g: &mut Graph,
    store: &ParamStore,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    facts: Var,
    graph: &FactsToNodesGraph,
) -> Result<EncoderOutput> {
    let w3 = g.param(store, params.w3);
    let projected = g.matmul(facts, w3)?;
    let inv_size = Tensor::column(
        graph
            .group_of
            .iter()
            .map(|&s| 1.0 / graph.sizes[s] as f64)
            .collect(),
    );
    let inv_size = g.input(inv_size);
    let mut h = projected;
    for &theta_id in &params.theta {
        // mean-then-map equals map-then-mean; the former keeps the sum narrow
        let scaled = g.mul_rows(h, inv_size)?;
        let sums = g.segment_sum(scaled, graph.group_of.clone(), graph.num_groups())?;
        let means = g.gather(sums, graph.group_of.clone())?;
        let theta = g.param(store, theta_id);
        let z = g.matmul(means, theta)?;
        h = g.leaky_relu(z, cfg.leaky_slope);
    }
    let features = if cfg.concat_own_feature {
        g.concat(&[h, projected])?
    } else {
        h
    };
    let w = g.param(store, params.cls_weight);
    let b = g.param(store, params.cls_bias);
    let logits = g.matmul(features, w)?;
    let logits = g.add_row(logits, b)?;
    let probs = g.sigmoid(logits);
    Ok(EncoderOutput {
        projected,
        hidden: h,
        logits,
        probs,
    })
}

/// Mean binary cross-entropy of `probs` (an `n x 1` node) against `labels`.
pub fn bce_loss_graph(g: &mut Graph, probs: Var, labels: &[f64]) -> Result<Var> {
    if g.value(probs).len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            left: g.value(probs).shape(),
            right: [labels.len(), 1],
        });
    }
    let p = g.clamp(probs, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = g.log(p);
    let one_minus = g.scale(p, -1.0);
    let one_minus = g.add_const(one_minus, 1.0);
    let log_q = g.log(one_minus);
    let y = g.input(Tensor::column(labels.to_vec()));
    let not_y = g.input(Tensor::column(labels.iter().map(|y| 1.0 - y).collect()));
    let a = g.mul(y, log_p)?;
    let b = g.mul(not_y, log_q)?;
    let ll = g.add(a, b)?;
    let mean = g.mean(ll)?;
    Ok(g.scale(mean, -1.0))
}

/// Per-group linear map with a shared weight.
pub fn project_facts(facts: &Tensor, w3: &Tensor) -> Result<Tensor> {
    facts.matmul(w3)
}

/// One convolution layer over a single complete group, closed form.
pub fn gcn_layer(h: &Tensor, theta: &Tensor, slope: f64) -> Result<Tensor> {
    let n = h.rows();
    if n == 0 {
        return Err(Error::Empty("fact group"));
    }
    let k = h.cols();
    let mut mean = vec![0.0; k];
    for r in 0..n {
        for (m, x) in mean.iter_mut().zip(h.row(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let row = Tensor::new(1, k, mean)?.matmul(theta)?;
    let row: Vec<f64> = row.data().iter().map(|&x| crate::nd::leaky_relu(x, slope)).collect();
    let mut data = Vec::with_capacity(n * row.len());
    for _ in 0..n {
        data.extend_from_slice(&row);
    }
    Tensor::new(n, row.len(), data)
}

/// `sigmoid(z . weight + bias)` per row.
pub fn classify(features: &Tensor, weight: &Tensor, bias: f64) -> Result<Vec<f64>> {
    Ok(features
        .matmul(weight)?
        .data()
        .iter()
        .map(|&l| sigmoid(l + bias))
        .collect())
}

/// Mean binary cross-entropy with probabilities clamped to `[eps, 1 - eps]`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            left: [probs.len(), 1],
            right: [labels.len(), 1],
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("bce_loss"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Activity class of a fact key; active facts carry label 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityClass {
    Active,
    Inactive,
}

impl ActivityClass {
    pub fn label(self) -> u8 {
        match self {
            ActivityClass::Active => 0,
            ActivityClass::Inactive => 1,
        }
    }

    /// Predicted inactive when the probability reaches one half.
    pub fn from_prob(p: f64) -> Self {
        if p >= 0.5 {
            ActivityClass::Inactive
        } else {
            ActivityClass::Active
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityClass::Active => "active",
            ActivityClass::Inactive => "inactive",
        }
    }
}

/// Rule turning mean update intervals into activity labels.
///
/// Keys that never changed tail are always inactive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LabelPolicy {
    /// Active when the mean interval is at most the median.
    MedianSplit,
    /// Active when the mean interval is at most this many days.
    FixedThreshold(f64),
    /// Active when the mean interval is at most the given lower quantile.
    Quantile(f64),
}

fn median(sorted: &[Ratio<u64>]) -> Ratio<u64> {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2
    }
}

pub fn derive_labels(
    timelines: &BTreeMap<FactKey, FactTimeline>,
    policy: LabelPolicy,
) -> Result<BTreeMap<FactKey, ActivityClass>> {
    let mut means: Vec<Ratio<u64>> = timelines.values().filter_map(|t| t.mean_interval).collect();
    means.sort_unstable();
    let is_active: alloc::boxed::Box<dyn Fn(Ratio<u64>) -> bool> = match policy {
        LabelPolicy::MedianSplit => {
            if means.is_empty() {
                return Err(Error::NoUpdates);
            }
            let m = median(&means);
            alloc::boxed::Box::new(move |x| x <= m)
        }
        LabelPolicy::FixedThreshold(days) => {
            if !(days >= 0.0) {
                return Err(Error::InvalidConfig("label threshold must be non-negative".into()));
            }
            alloc::boxed::Box::new(move |x: Ratio<u64>| {
                (*x.numer() as f64) <= days * (*x.denom() as f64)
            })
        }
        LabelPolicy::Quantile(q) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidConfig("label quantile must lie in [0, 1]".into()));
            }
            if means.is_empty() {
                return Err(Error::NoUpdates);
            }
            // lower nearest-rank quantile
            let rank = libm::floor(q * (means.len() - 1) as f64) as usize;
            let cut = means[rank];
            alloc::boxed::Box::new(move |x| x <= cut)
        }
    };
    Ok(timelines
        .iter()
        .map(|(k, t)| {
            let class = match t.mean_interval {
                Some(m) if is_active(m) => ActivityClass::Active,
                _ => ActivityClass::Inactive,
            };
            (*k, class)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_timelines, EntityId, RelationId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(h: u32, r: u32, t: u32, ts: i64) -> Quadruple {
        Quadruple {
            head: EntityId(h),
            relation: RelationId(r),
            tail: EntityId(t),
            timestamp: ts,
        }
    }

    #[test]
    fn grouping_partitions_facts() {
        let quads = [q(0, 1, 2, 0), q(1, 0, 2, 0), q(3, 1, 0, 1), q(0, 1, 4, 2)];
        let g = FactsToNodesGraph::new(&quads, Grouping::Relation);
        assert_eq!(g.num_groups(), 2);
        assert_eq!(g.sizes.iter().sum::<usize>(), quads.len());
        assert_eq!(&*g.group_of, &[0, 1, 0, 0]);
        let g = FactsToNodesGraph::new(&quads, Grouping::RelationHead);
        assert_eq!(&*g.group_of, &[0, 1, 2, 0]);
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::uniform(3, 4, 1.0, &mut rng);
        assert_eq!(project_facts(&f, &Tensor::identity(4)).unwrap(), f);
        let one = Tensor::uniform(1, 4, 1.0, &mut rng);
        let w = Tensor::uniform(4, 6, 1.0, &mut rng);
        assert_eq!(project_facts(&one, &w).unwrap().shape(), [1, 6]);
        assert!(project_facts(&one, &Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn single_fact_group_is_self_loop_only() {
        let h = Tensor::from_rows(&[vec![0.5, -2.0]]).unwrap();
        let theta = Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.5, 1.0, 0.0]]).unwrap();
        let out = gcn_layer(&h, &theta, 0.1).unwrap();
        // h . theta = [-0.5, -2.0, 1.0]
        assert_eq!(out.data(), &[-0.05, -0.2, 1.0]);
    }

    #[test]
    fn equal_rows_stay_equal() {
        let row = vec![0.3, -0.1, 0.8];
        let h = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta = Tensor::uniform(3, 2, 1.0, &mut rng);
        let out = gcn_layer(&h, &theta, 0.2).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(out.row(1), out.row(2));
    }

    #[test]
    fn classifier_examples() {
        let z = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let probs = classify(&z, &Tensor::zeros(2, 1), 0.0).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert!(sigmoid(0.3) > sigmoid(0.2));
        assert_eq!(ActivityClass::from_prob(0.5), ActivityClass::Inactive);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5], &[1.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.5], &[0.0]).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(&[0.9], &[1.0]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        assert!(bce_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn bce_graph_matches_plain() {
        let probs = vec![0.1, 0.7, 0.999, 0.5];
        let labels = vec![0.0, 1.0, 0.0, 1.0];
        let mut g = Graph::new();
        let p = g.input(Tensor::column(probs.clone()));
        let l = bce_loss_graph(&mut g, p, &labels).unwrap();
        assert!((g.value(l).item() - bce_loss(&probs, &labels).unwrap()).abs() < 1e-14);
    }

    fn timelines_with_means(means: &[u64]) -> BTreeMap<FactKey, FactTimeline> {
        let mut quads = Vec::new();
        for (h, &m) in means.iter().enumerate() {
            quads.push(q(h as u32, 0, 0, 0));
            quads.push(q(h as u32, 0, 1, m as i64));
        }
        build_timelines(&quads)
    }

    #[test]
    fn median_split_example() {
        let tl = timelines_with_means(&[2, 10, 100]);
        let labels: Vec<_> = derive_labels(&tl, LabelPolicy::MedianSplit)
            .unwrap()
            .into_values()
            .collect();
        use ActivityClass::*;
        assert_eq!(labels, vec![Active, Active, Inactive]);
    }

    #[test]
    fn never_updated_is_inactive_and_ties_are_active() {
        let mut tl = timelines_with_means(&[7, 7, 7]);
        tl.extend(build_timelines(&[q(9, 0, 3, 4)]));
        let labels = derive_labels(&tl, LabelPolicy::MedianSplit).unwrap();
        let key9 = FactKey {
            head: EntityId(9),
            relation: RelationId(0),
        };
        assert_eq!(labels[&key9], ActivityClass::Inactive);
        assert_eq!(
            labels.values().filter(|c| **c == ActivityClass::Active).count(),
            3
        );
    }

    #[test]
    fn no_updates_requires_fixed_policy() {
        let tl = build_timelines(&[q(0, 0, 1, 0), q(1, 0, 1, 3)]);
        assert_eq!(derive_labels(&tl, LabelPolicy::MedianSplit), Err(Error::NoUpdates));
        let labels = derive_labels(&tl, LabelPolicy::FixedThreshold(5.0)).unwrap();
        assert!(labels.values().all(|c| *c == ActivityClass::Inactive));
    }

    #[test]
    fn other_policies() {
        let tl = timelines_with_means(&[2, 10, 100, 40]);
        let fixed = derive_labels(&tl, LabelPolicy::FixedThreshold(10.0)).unwrap();
        assert_eq!(fixed.values().filter(|c| **c == ActivityClass::Active).count(), 2);
        let quant = derive_labels(&tl, LabelPolicy::Quantile(0.0)).unwrap();
        assert_eq!(quant.values().filter(|c| **c == ActivityClass::Active).count(), 1);
        let quant = derive_labels(&tl, LabelPolicy::Quantile(1.0)).unwrap();
        assert_eq!(quant.values().filter(|c| **c == ActivityClass::Active).count(), 4);
    }
}
