//! Encoder plus decoder, scored 1-N against every entity.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::BaselineKind;
use crate::decoder::{DecoderBank, DecoderConfig, NormTrace};
use crate::encoder::{Activation, WgcnStack};
use crate::error::{Error, Result};
use crate::eval::LinkScorer;
use crate::graph::RelationAdjacency;
use crate::nn::init;
use crate::nn::{Mode, ParamId, ParamStore, Tape, Var};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    ConvTransE,
    DistMult,
    TransE,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::ConvTransE => "convtranse",
            DecoderKind::DistMult => "distmult",
            DecoderKind::TransE => "transe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convtranse" => Ok(DecoderKind::ConvTransE),
            "distmult" => Ok(DecoderKind::DistMult),
            "transe" => Ok(DecoderKind::TransE),
            o => Err(Error::Config(format!("unknown decoder '{o}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_nodes: usize,
    pub num_types: usize,
    pub num_relations: usize,
    pub dim: usize,
    pub layers: usize,
    pub activation: Activation,
    pub row_normalize: bool,
    pub dropout: f64,
    pub encoder_dropout: f64,
    pub decoder: DecoderKind,
    pub channels: usize,
    pub width: usize,
    pub batch_norm: bool,
    pub bias: bool,
    pub transe_norm: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Conv(DecoderBank),
    Baseline {
        kind: BaselineKind,
        relations: ParamId,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: WgcnStack,
    pub decoder: Decoder,
    pub adjacency: Arc<RelationAdjacency>,
    pub config: ModelConfig,
}

/// Output of one forward pass.
pub struct Forward {
    pub logits: Var,
    pub trace: NormTrace,
}

impl Model {
    /// Registers all parameters in `store` in a fixed order.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        config: &ModelConfig,
        adjacency: Arc<RelationAdjacency>,
    ) -> Result<Self> {
        if adjacency.num_nodes() != config.num_nodes || adjacency.num_types() != config.num_types {
            return Err(Error::Config(format!(
                "graph has {} nodes / {} edge types, config expects {} / {}",
                adjacency.num_nodes(),
                adjacency.num_types(),
                config.num_nodes,
                config.num_types
            )));
        }
        let widths = vec![config.dim; config.layers + 1];
        let encoder = WgcnStack::init(
            store,
            rng,
            config.num_nodes,
            config.num_types,
            &widths,
            config.encoder_dropout,
            config.activation,
            config.row_normalize,
        )?;
        let decoder = match config.decoder {
            DecoderKind::ConvTransE => Decoder::Conv(DecoderBank::init(
                store,
                rng,
                config.num_relations,
                config.dim,
                &DecoderConfig {
                    channels: config.channels,
                    width: config.width,
                    dropout: config.dropout,
                    batch_norm: config.batch_norm,
                    bias: config.bias,
                },
            )?),
            kind => {
                let relations = store.add(
                    "decoder.relations",
                    init::gaussian(&[config.num_relations, config.dim], 0.1, rng),
                    true,
                )?;
                let kind = if kind == DecoderKind::TransE {
                    BaselineKind::TransE {
                        p: config.transe_norm,
                    }
                } else {
                    BaselineKind::DistMult
                };
                Decoder::Baseline { kind, relations }
            }
        };
        Ok(Model {
            encoder,
            decoder,
            adjacency,
            config: config.clone(),
        })
    }

    fn check_queries(&self, subjects: &[usize], relations: &[usize]) -> Result<()> {
        if subjects.len() != relations.len() {
            return Err(Error::shape(
                "model forward",
                format!("{} subjects, {} relations", subjects.len(), relations.len()),
            ));
        }
        if let Some(&r) = relations.iter().find(|&&r| r >= self.config.num_relations) {
            return Err(Error::Invalid(format!("relation id {r} out of range")));
        }
        Ok(())
    }

    /// Entity matrix from the encoder, recorded on `tape`.
    pub fn encode<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.encoder.encode(tape, store, &self.adjacency, mode, rng)
    }

    /// Logits for each query against the given entity matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        entities: Var,
        subjects: &[usize],
        relations: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        self.check_queries(subjects, relations)?;
        let mut trace = NormTrace::default();
        let logits = match &self.decoder {
            Decoder::Conv(bank) => bank.logits(
                tape, store, entities, subjects, relations, mode, rng, &mut trace,
            )?,
            Decoder::Baseline {
                kind,
                relations: table,
            } => {
                let s = tape.gather_rows(entities, subjects)?;
                let rel = tape.param(store, *table);
                let r = tape.gather_rows(rel, relations)?;
                match kind {
                    BaselineKind::DistMult => {
                        let q = tape.mul(s, r)?;
                        tape.matmul_nt(q, entities)?
                    }
                    BaselineKind::TransE { p } => {
                        let q = tape.add(s, r)?;
                        tape.neg_distance(q, entities, *p)?
                    }
                }
            }
        };
        Ok(Forward { logits, trace })
    }

    /// Full forward: encode the whole graph, then score the queries.
    pub fn forward<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        subjects: &[usize],
        relations: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        let entities = self.encode(tape, store, mode, rng)?;
        self.decode(tape, store, entities, subjects, relations, mode, rng)
    }

    /// Mean binary cross-entropy of the query logits against `targets` (`B × N`).
    #[allow(clippy::too_many_arguments)]
    pub fn loss<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        subjects: &[usize],
        relations: &[usize],
        targets: Arc<Array2<T>>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, NormTrace)> {
        let fwd = self.forward(tape, store, subjects, relations, mode, rng)?;
        let loss = tape.bce_with_logits(fwd.logits, targets)?;
        Ok((loss, fwd.trace))
    }

    /// Eval-mode entity matrix `H^{L+1}`.
    pub fn entity_embeddings<T: Real>(&self, store: &ParamStore<T>) -> Result<Array2<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = self.encode(&mut tape, store, Mode::Eval, &mut rng)?;
        Ok(tape.matrix(h))
    }

    /// Eval-mode scorer that encodes the graph once.
    pub fn scorer<'a, T: Real>(&'a self, store: &'a ParamStore<T>) -> Result<ModelScorer<'a, T>> {
        let entities = Arc::new(self.entity_embeddings(store)?.into_dyn());
        Ok(ModelScorer {
            model: self,
            store,
            entities,
        })
    }
}

/// A trained model with its entity matrix cached.
pub struct ModelScorer<'a, T> {
    model: &'a Model,
    store: &'a ParamStore<T>,
    entities: Arc<ndarray::ArrayD<T>>,
}

impl<T: Real> ModelScorer<'_, T> {
    /// Raw logits for each `(subject, relation)` query.
    pub fn logits(&self, queries: &[(usize, usize)]) -> Result<Array2<T>> {
        let n = self.model.config.num_nodes;
        if let Some(&(s, _)) = queries.iter().find(|q| q.0 >= n) {
            return Err(Error::Invalid(format!("entity id {s} out of range")));
        }
        let subjects: Vec<usize> = queries.iter().map(|q| q.0).collect();
        let relations: Vec<usize> = queries.iter().map(|q| q.1).collect();
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = tape.constant_shared(Arc::clone(&self.entities));
        let fwd = self.model.decode(
            &mut tape,
            self.store,
            e,
            &subjects,
            &relations,
            Mode::Eval,
            &mut rng,
        )?;
        Ok(tape.matrix(fwd.logits))
    }
}

impl<T: Real> LinkScorer for ModelScorer<'_, T> {
    fn num_entities(&self) -> usize {
        self.model.config.num_nodes
    }

    fn score_batch(&self, queries: &[(usize, usize)]) -> Result<Array2<f64>> {
        Ok(self.logits(queries)?.mapv(|x| x.f64()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::score_all;
    use crate::nn::grad_check;

    pub(crate) fn small_config(decoder: DecoderKind, layers: usize) -> ModelConfig {
        ModelConfig {
            num_nodes: 6,
            num_types: 3,
            num_relations: 6,
            dim: 4,
            layers,
            activation: Activation::Relu,
            row_normalize: false,
            dropout: 0.0,
            encoder_dropout: 0.0,
            decoder,
            channels: 2,
            width: 3,
            batch_norm: false,
            bias: false,
            transe_norm: 1,
        }
    }

    fn graph() -> Arc<RelationAdjacency> {
        Arc::new(
            RelationAdjacency::from_edges(
                6,
                3,
                &[(0, 1, 0), (1, 2, 1), (2, 3, 2), (3, 4, 0), (0, 5, 1)],
            )
            .unwrap(),
        )
    }

    fn loss_fn(
        model: &Model,
        targets: Arc<Array2<f64>>,
    ) -> impl FnMut(&mut ParamStore<f64>, bool) -> Result<f64> + '_ {
        move |store, backward| {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (loss, _) = model.loss(
                &mut tape,
                store,
                &[0, 2, 4],
                &[0, 4, 2],
                Arc::clone(&targets),
                Mode::Train,
                &mut rng,
            )?;
            if backward {
                tape.backward(loss, store)?;
            }
            Ok(tape.scalar(loss))
        }
    }

    fn targets() -> Arc<Array2<f64>> {
        Arc::new(Array2::from_shape_fn((3, 6), |(i, j)| {
            if (i + j) % 3 == 0 {
                0.9
            } else {
                0.02
            }
        }))
    }

    #[test]
    fn gradients_match_finite_differences_for_every_decoder() {
        for kind in [
            DecoderKind::ConvTransE,
            DecoderKind::DistMult,
            DecoderKind::TransE,
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut store = ParamStore::<f64>::new();
            let cfg = small_config(kind, 2);
            let model = Model::init(&mut store, &mut rng, &cfg, graph()).unwrap();
            let report = grad_check(&mut store, loss_fn(&model, targets()), 1e-5).unwrap();
            assert!(report.max_rel_error() < 1e-4, "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn scorer_matches_single_query_scoring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let mut cfg = small_config(DecoderKind::ConvTransE, 1);
        cfg.batch_norm = true;
        let model = Model::init(&mut store, &mut rng, &cfg, graph()).unwrap();
        let scorer = model.scorer(&store).unwrap();
        let batch = scorer.logits(&[(1, 2), (3, 5)]).unwrap();
        let Decoder::Conv(bank) = &model.decoder else {
            unreachable!()
        };
        let h = model.entity_embeddings(&store).unwrap();
        let rel: Array2<f64> = store
            .value(bank.relations)
            .view()
            .into_dimensionality()
            .unwrap()
            .to_owned();
        let one = score_all(h.row(3), rel.row(5), h.view(), bank, &store).unwrap();
        for j in 0..6 {
            assert!((batch[[1, j]] - one[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let model = Model::init(
            &mut store,
            &mut rng,
            &small_config(DecoderKind::DistMult, 0),
            graph(),
        )
        .unwrap();
        assert!(model.scorer(&store).unwrap().logits(&[(0, 6)]).is_err());
        assert!(model.scorer(&store).unwrap().logits(&[(6, 0)]).is_err());
    }

    #[test]
    fn graph_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let mut cfg = small_config(DecoderKind::DistMult, 0);
        cfg.num_types = 4;
        assert!(Model::init(&mut store, &mut rng, &cfg, graph()).is_err());
    }
}
