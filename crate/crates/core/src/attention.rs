//! Time-aware fact embeddings, multi-head neighbourhood attention, and the
//! translational margin loss that shapes the base embeddings.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Day, EntityId, Quadruple};
use crate::error::{Error, Result};
use crate::nd::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    /// Entity embedding width.
    pub d1: usize,
    /// Relation embedding width.
    pub d2: usize,
    /// Width of the time feature; 1 gives the scalar encoding.
    pub time_dims: usize,
    /// Output width of the fact projection.
    pub fact_dim: usize,
    pub heads: usize,
    pub leaky_slope: f64,
    /// Hinge margin of the translational loss.
    pub margin: f64,
    pub negatives_per_positive: usize,
    /// Use `max(d_corrupt - d_valid + margin, 0)` instead of the usual orientation.
    pub paper_sign: bool,
}

impl AttentionConfig {
    pub fn with_dims(d1: usize, d2: usize) -> Self {
        Self {
            d1,
            d2,
            time_dims: 1,
            fact_dim: 2 * d1 + d2 + 1,
            heads: 2,
            leaky_slope: 0.2,
            margin: 1.0,
            negatives_per_positive: 1,
            paper_sign: false,
        }
    }

    /// Width of `[head || relation || tail || time]`.
    pub fn input_dim(&self) -> usize {
        2 * self.d1 + self.d2 + self.time_dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.d1 == 0 || self.d2 == 0 || self.fact_dim == 0 || self.time_dims == 0 {
            return bad("embedding widths must be positive");
        }
        if self.d1 != self.d2 {
            return bad("the translational loss needs d1 == d2");
        }
        if self.heads == 0 {
            return bad("heads must be positive");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky slope must lie in (0, 1)");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be positive");
        }
        Ok(())
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self::with_dims(32, 32)
    }
}

/// Learnable frequency and phase of the periodic time feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    pub omega: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TimeEncoding {
    pub fn scalar(omega: f64, bias: f64) -> Self {
        Self {
            omega: alloc::vec![omega],
            bias: alloc::vec![bias],
        }
    }
}

fn elapsed(update_time: Day, current_time: Day) -> Result<f64> {
    if current_time < update_time {
        return Err(Error::FutureFact {
            timestamp: update_time,
            current: current_time,
        });
    }
    Ok((current_time - update_time) as f64)
}

/// `cos((t_c - t_i) * omega + bias)` for the first time dimension.
pub fn time_feature(update_time: Day, current_time: Day, enc: &TimeEncoding) -> Result<f64> {
    Ok(time_features(update_time, current_time, enc)?[0])
}

pub fn time_features(update_time: Day, current_time: Day, enc: &TimeEncoding) -> Result<Vec<f64>> {
    let d = elapsed(update_time, current_time)?;
    Ok(enc
        .omega
        .iter()
        .zip(&enc.bias)
        .map(|(w, b)| libm::cos(d * w + b))
        .collect())
}

/// L1 translational distance `|e_i + r - e_j|_1`.
pub fn transe_distance(head: &[f64], relation: &[f64], tail: &[f64]) -> f64 {
    head.iter()
        .zip(relation)
        .zip(tail)
        .map(|((h, r), t)| (h + r - t).abs())
        .sum()
}

/// One hinge term of the margin loss.
pub fn margin_term(d_valid: f64, d_corrupt: f64, margin: f64, paper_sign: bool) -> f64 {
    let x = if paper_sign {
        d_corrupt - d_valid + margin
    } else {
        d_valid - d_corrupt + margin
    };
    x.max(0.0)
}

/// Column-aligned index arrays for a batch of facts.
#[derive(Debug, Clone)]
pub struct FactBatch {
    pub heads: Rc<[usize]>,
    pub relations: Rc<[usize]>,
    pub tails: Rc<[usize]>,
    /// `n x 1` elapsed days `t_c - t_i`.
    pub elapsed: Tensor,
}

impl FactBatch {
    pub fn new(quads: &[Quadruple], current_time: Day) -> Result<Self> {
        let mut el = Vec::with_capacity(quads.len());
        for q in quads {
            el.push(elapsed(q.timestamp, current_time)?);
        }
        Ok(Self {
            heads: quads.iter().map(|q| q.head.index()).collect(),
            relations: quads.iter().map(|q| q.relation.index()).collect(),
            tails: quads.iter().map(|q| q.tail.index()).collect(),
            elapsed: Tensor::column(el),
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Parameter handles for the attention stage.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub entity: ParamId,
    pub relation: ParamId,
    pub omega: ParamId,
    pub bias: ParamId,
    pub w1: Vec<ParamId>,
    pub w2: Vec<ParamId>,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &AttentionConfig,
        n_entities: usize,
        n_relations: usize,
        rng: &mut R,
    ) -> Self {
        let entity = store.insert("entity", Tensor::param(n_entities, cfg.d1, cfg.d1, rng));
        let relation = store.insert("relation", Tensor::param(n_relations, cfg.d2, cfg.d2, rng));
        let omega = store.insert("time.omega", Tensor::param(1, cfg.time_dims, 1, rng));
        let bias = store.insert("time.bias", Tensor::param(1, cfg.time_dims, 1, rng));
        let mut w1 = Vec::with_capacity(cfg.heads);
        let mut w2 = Vec::with_capacity(cfg.heads);
        for m in 0..cfg.heads {
            w1.push(store.insert(
                &format!("attn.{m}.w1"),
                Tensor::param(cfg.input_dim(), cfg.fact_dim, cfg.input_dim(), rng),
            ));
            w2.push(store.insert(
                &format!("attn.{m}.w2"),
                Tensor::param(cfg.fact_dim, 1, cfg.fact_dim, rng),
            ));
        }
        Self {
            entity,
            relation,
            omega,
            bias,
            w1,
            w2,
        }
    }

    /// Looks up existing parameters by their canonical names.
    pub fn bind(store: &ParamStore, cfg: &AttentionConfig) -> Result<Self> {
        let get = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
        };
        let mut w1 = Vec::new();
        let mut w2 = Vec::new();
        for m in 0..cfg.heads {
            w1.push(get(&format!("attn.{m}.w1"))?);
            w2.push(get(&format!("attn.{m}.w2"))?);
        }
        Ok(Self {
            entity: get("entity")?,
            relation: get("relation")?,
            omega: get("time.omega")?,
            bias: get("time.bias")?,
            w1,
            w2,
        })
    }
}

/// Graph nodes produced by the attention stage.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// Per-head projected fact embeddings, `n x fact_dim`.
    pub facts: Vec<Var>,
    /// Per-head attention weights, `n x 1`, normalised per head entity.
    pub weights: Vec<Var>,
    /// Aggregated entity embeddings, `n_entities x fact_dim`.
    pub entities: Var,
    /// Fact representation handed to the encoder, `n x fact_dim`.
    pub fact_repr: Var,
}

/// `[head || relation || tail || cos(elapsed * omega + bias)]` as graph rows.
pub fn fact_inputs(
    g: &mut Graph,
    store: &ParamStore,
    params: &AttentionParams,
    batch: &FactBatch,
) -> Result<Var> {
    let ent = g.param(store, params.entity);
    let rel = g.param(store, params.relation);
    let omega = g.param(store, params.omega);
    let bias = g.param(store, params.bias);
    let h = g.gather(ent, batch.heads.clone())?;
    let r = g.gather(rel, batch.relations.clone())?;
    let t = g.gather(ent, batch.tails.clone())?;
    let d = g.input(batch.elapsed.clone());
    let phase = g.matmul(d, omega)?;
    let phase = g.add_row(phase, bias)?;
    let phi = g.cos(phase);
    g.concat(&[h, r, t, phi])
}

/// Runs every head over all facts and aggregates per head entity.
///
/// Heads are averaged. The representation passed on for each fact is the
/// head-averaged fact embedding plus the attended embedding of its head
/// entity. Entities with no outgoing fact get a zero row.
pub fn forward(
    g: &mut Graph,
    store: &ParamStore,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    batch: &FactBatch,
    n_entities: usize,
) -> Result<AttentionOutput> {
    if batch.is_empty() {
        return Err(Error::Empty("fact batch"));
    }
    let x = fact_inputs(g, store, params, batch)?;
    let inv_heads = 1.0 / cfg.heads as f64;
    let mut facts = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    let mut agg_sum: Option<Var> = None;
    let mut fact_sum: Option<Var> = None;
    for m in 0..cfg.heads {
        let w1 = g.param(store, params.w1[m]);
        let w2 = g.param(store, params.w2[m]);
        let f = g.matmul(x, w1)?;
        let s = g.matmul(f, w2)?;
        let s = g.leaky_relu(s, cfg.leaky_slope);
        let a = g.segment_softmax(s, batch.heads.clone())?;
        let weighted = g.mul_rows(f, a)?;
        let agg = g.segment_sum(weighted, batch.heads.clone(), n_entities)?;
        agg_sum = Some(match agg_sum {
            Some(acc) => g.add(acc, agg)?,
            None => agg,
        });
        fact_sum = Some(match fact_sum {
            Some(acc) => g.add(acc, f)?,
            None => f,
        });
        facts.push(f);
        weights.push(a);
    }
    let agg = g.scale(agg_sum.expect("at least one head"), inv_heads);
    let entities = g.leaky_relu(agg, cfg.leaky_slope);
    let fact_avg = g.scale(fact_sum.expect("at least one head"), inv_heads);
    let head_repr = g.gather(entities, batch.heads.clone())?;
    let fact_repr = g.add(fact_avg, head_repr)?;
    Ok(AttentionOutput {
        facts,
        weights,
        entities,
        fact_repr,
    })
}

/// Sum of hinge terms between aligned valid and corrupted facts.
pub fn margin_loss(
    g: &mut Graph,
    store: &ParamStore,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    valid: &FactBatch,
    corrupted: &FactBatch,
) -> Result<Var> {
    if valid.len() != corrupted.len() {
        return Err(Error::ShapeMismatch {
            op: "margin_loss",
            left: [valid.len(), 1],
            right: [corrupted.len(), 1],
        });
    }
    let ent = g.param(store, params.entity);
    let rel = g.param(store, params.relation);
    let d_valid = transe_rows(g, ent, rel, valid)?;
    let d_corrupt = transe_rows(g, ent, rel, corrupted)?;
    let diff = if cfg.paper_sign {
        g.sub(d_corrupt, d_valid)?
    } else {
        g.sub(d_valid, d_corrupt)?
    };
    let shifted = g.add_const(diff, cfg.margin);
    let hinge = g.relu(shifted);
    Ok(g.sum(hinge))
}

fn transe_rows(g: &mut Graph, ent: Var, rel: Var, batch: &FactBatch) -> Result<Var> {
    let h = g.gather(ent, batch.heads.clone())?;
    let r = g.gather(rel, batch.relations.clone())?;
    let t = g.gather(ent, batch.tails.clone())?;
    let hr = g.add(h, r)?;
    let diff = g.sub(hr, t)?;
    Ok(g.l1_norm_rowwise(diff))
}

/// Replaces the head or tail (fair coin) of each positive with a uniform
/// entity, resampling when the corruption is itself a known fact.
///
/// Returns `(positive index, corrupted quadruple)` pairs, `per_positive`
/// for each input.
pub fn sample_corruptions<R: Rng + ?Sized>(
    positives: &[Quadruple],
    known: &alloc::collections::BTreeSet<Quadruple>,
    n_entities: usize,
    per_positive: usize,
    rng: &mut R,
) -> Vec<(usize, Quadruple)> {
    const MAX_TRIES: usize = 32;
    let mut out = Vec::with_capacity(positives.len() * per_positive);
    for (i, q) in positives.iter().enumerate() {
        for _ in 0..per_positive {
            let mut c = *q;
            for _ in 0..MAX_TRIES {
                c = *q;
                let e = EntityId(rng.random_range(0..n_entities as u32));
                if rng.random_bool(0.5) {
                    c.head = e;
                } else {
                    c.tail = e;
                }
                if !known.contains(&c) {
                    break;
                }
            }
            out.push((i, c));
        }
    }
    out
}

/// Head-`m` fact embedding of one quadruple.
pub fn embed_fact(
    store: &ParamStore,
    params: &AttentionParams,
    q: &Quadruple,
    current_time: Day,
    head: usize,
) -> Result<Vec<f64>> {
    let w1_id = *params.w1.get(head).ok_or(Error::IndexOutOfRange {
        what: "attention head",
        index: head,
        len: params.w1.len(),
    })?;
    check_ids(store, params, q)?;
    let batch = FactBatch::new(core::slice::from_ref(q), current_time)?;
    let mut g = Graph::new();
    let x = fact_inputs(&mut g, store, params, &batch)?;
    let w1 = g.param(store, w1_id);
    let f = g.matmul(x, w1)?;
    Ok(g.value(f).data().to_vec())
}

fn check_ids(store: &ParamStore, params: &AttentionParams, q: &Quadruple) -> Result<()> {
    let n_e = store.get(params.entity).rows();
    let n_r = store.get(params.relation).rows();
    for (what, index, len) in [
        ("entity", q.head.index(), n_e),
        ("entity", q.tail.index(), n_e),
        ("relation", q.relation.index(), n_r),
    ] {
        if index >= len {
            return Err(Error::IndexOutOfRange { what, index, len });
        }
    }
    Ok(())
}

/// Attended embedding of `entity` from all facts it heads.
pub fn attend_entity(
    store: &ParamStore,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    entity: EntityId,
    quads: &[Quadruple],
    current_time: Day,
) -> Result<Vec<f64>> {
    let neighborhood: Vec<Quadruple> = quads.iter().filter(|q| q.head == entity).copied().collect();
    if neighborhood.is_empty() {
        return Err(Error::Empty("entity neighbourhood"));
    }
    for q in &neighborhood {
        check_ids(store, params, q)?;
    }
    let batch = FactBatch::new(&neighborhood, current_time)?;
    let mut g = Graph::new();
    let out = forward(&mut g, store, params, cfg, &batch, store.get(params.entity).rows())?;
    Ok(g.value(out.entities).row(entity.index()).to_vec())
}
