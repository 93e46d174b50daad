//! Full parameter set and the joint objective `alpha * L_gat + (1 - alpha) * L_bec`.

use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionConfig, AttentionOutput, AttentionParams, FactBatch};
use crate::dataset::{Dataset, Quadruple};
use crate::encoder::{self, EncoderConfig, EncoderOutput, EncoderParams, FactsToNodesGraph};
use crate::error::{Error, Result};
use crate::nd::{Graph, ParamStore, Var};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub attention: AttentionConfig,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        self.encoder.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    attn: AttentionParams,
    enc: EncoderParams,
}

/// Forward nodes of one pass over a fact batch.
#[derive(Debug, Clone)]
pub struct Forward {
    pub attention: AttentionOutput,
    pub encoder: EncoderOutput,
}

/// Loss nodes of one joint step.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub gat: Var,
    pub bec: Var,
    pub total: Var,
}

/// Which facts enter each loss term during one step.
#[derive(Debug, Clone)]
pub struct StepTargets<'a> {
    /// Facts scored by the margin loss, with one corruption each.
    pub positives: &'a [usize],
    pub corruptions: &'a [Quadruple],
    /// Facts scored by the classifier loss and their labels (0 active, 1 inactive).
    pub labelled: &'a [usize],
    pub labels: &'a [f64],
}

impl Model {
    pub fn init(config: ModelConfig, n_entities: usize, n_relations: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let attn = AttentionParams::init(&mut store, &config.attention, n_entities, n_relations, &mut rng);
        let enc = EncoderParams::init(&mut store, &config.encoder, config.attention.fact_dim, &mut rng);
        Ok(Self {
            config,
            store,
            attn,
            enc,
        })
    }

    /// Rebinds a stored parameter set, checking every shape against `config`.
    pub fn from_params(
        config: ModelConfig,
        store: ParamStore,
        n_entities: usize,
        n_relations: usize,
    ) -> Result<Self> {
        let mut template = Self::init(config, n_entities, n_relations, 0)?;
        template.store.load_values(&store)?;
        Ok(template)
    }

    pub fn attention_params(&self) -> &AttentionParams {
        &self.attn
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.enc
    }

    pub fn n_entities(&self) -> usize {
        self.store.get(self.attn.entity).rows()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &FactBatch,
        f2n: &FactsToNodesGraph,
    ) -> Result<Forward> {
        let attention = attention::forward(
            g,
            &self.store,
            &self.attn,
            &self.config.attention,
            batch,
            self.n_entities(),
        )?;
        let encoder = encoder::forward(
            g,
            &self.store,
            &self.enc,
            &self.config.encoder,
            attention.fact_repr,
            f2n,
        )?;
        Ok(Forward { attention, encoder })
    }

    /// Builds both loss terms on top of a forward pass.
    pub fn losses(
        &self,
        g: &mut Graph,
        fwd: &Forward,
        quads: &[Quadruple],
        current_time: i64,
        targets: &StepTargets<'_>,
        alpha: f64,
    ) -> Result<LossParts> {
        if targets.positives.len() != targets.corruptions.len() {
            return Err(Error::ShapeMismatch {
                op: "losses",
                left: [targets.positives.len(), 1],
                right: [targets.corruptions.len(), 1],
            });
        }
        let pos: Vec<Quadruple> = targets.positives.iter().map(|&i| quads[i]).collect();
        let valid = FactBatch::new(&pos, current_time)?;
        let corrupt = FactBatch::new(targets.corruptions, current_time)?;
        let gat = attention::margin_loss(g, &self.store, &self.attn, &self.config.attention, &valid, &corrupt)?;
        let idx: Rc<[usize]> = targets.labelled.into();
        let probs = g.gather(fwd.encoder.probs, idx)?;
        let bec = encoder::bce_loss_graph(g, probs, targets.labels)?;
        let a = g.scale(gat, alpha);
        let b = g.scale(bec, 1.0 - alpha);
        let total = g.add(a, b)?;
        Ok(LossParts { gat, bec, total })
    }

    /// Inactive-class probability of every quadruple.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let batch = FactBatch::new(&dataset.quadruples, dataset.t_current)?;
        let f2n = FactsToNodesGraph::new(&dataset.quadruples, self.config.encoder.grouping);
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, &batch, &f2n)?;
        Ok(g.value(fwd.encoder.probs).data().to_vec())
    }
}

/// Every quadruple of the dataset, for corruption rejection.
pub fn known_facts(quads: &[Quadruple]) -> BTreeSet<Quadruple> {
    quads.iter().copied().collect()
}
