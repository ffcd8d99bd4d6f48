//! Small deterministic knowledge graphs for checks and demos.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, RawTriple, Split};
use crate::error::{Error, Result};
use crate::nn::{grad_check, GradCheckReport, Mode, Tape};
use crate::real::Dtype;
use crate::train::{build_model, make_batches, TrainConfig};

pub const TOY_RELATIONS: usize = 3;

/// `size` entities `e0..` on a ring with three relation types: `e_i -r_{i%3}-> e_{i+1}`
/// plus chords `e_i -r_{(i+1)%3}-> e_{i+2}` for even `i`. One held-out triple
/// each for validation and test.
pub fn toy_dataset(size: usize) -> Result<Dataset> {
    if size < 3 {
        return Err(Error::Invalid(format!(
            "toy graph needs at least 3 nodes, got {size}"
        )));
    }
    let e = |i: usize| format!("e{}", i % size);
    let r = |i: usize| format!("r{}", i % TOY_RELATIONS);
    let mut train = Vec::new();
    for i in 0..size {
        train.push(RawTriple::new(&e(i), &r(i), &e(i + 1), Split::Train));
        if i % 2 == 0 {
            train.push(RawTriple::new(&e(i), &r(i + 1), &e(i + 2), Split::Train));
        }
    }
    let valid = [RawTriple::new(&e(1), &r(2), &e(0), Split::Valid)];
    let test = [RawTriple::new(&e(2), &r(0), &e(0), Split::Test)];
    Dataset::build(&train, &valid, &test, None)
}

/// `entities` nodes and three relations, two outgoing facts per node chosen by
/// fixed strides. Every split holds the same triples, so filtered metrics on
/// any split measure how well the training set is memorized.
pub fn overfit_dataset(entities: usize) -> Result<Dataset> {
    if entities < 4 {
        return Err(Error::Invalid(format!(
            "overfit graph needs at least 4 nodes, got {entities}"
        )));
    }
    let e = |i: usize| format!("e{}", i % entities);
    let r = |i: usize| format!("r{}", i % TOY_RELATIONS);
    let mut facts = Vec::new();
    for i in 0..entities {
        facts.push((e(i), r(i), e(7 * i + 3)));
        facts.push((e(i), r(i + 1), e(3 * i + 1)));
    }
    let split = |s| {
        facts
            .iter()
            .map(|(h, r, t)| RawTriple::new(h, r, t, s))
            .collect::<Vec<_>>()
    };
    Dataset::build(
        &split(Split::Train),
        &split(Split::Valid),
        &split(Split::Test),
        None,
    )
}

/// The default configuration scaled down for the overfit graph.
pub fn overfit_config() -> TrainConfig {
    TrainConfig {
        embedding_size: 32,
        kernel_count: 16,
        batch_size: 16,
        epochs: 500,
        eval_every: 25,
        patience: 0,
        seed: 1,
        ..TrainConfig::default()
    }
}

/// Smallest configuration that touches every parameter group, with
/// dropout and batch norm off so the loss is a deterministic function.
pub fn gradcheck_config() -> TrainConfig {
    TrainConfig {
        embedding_size: 4,
        kernel_count: 2,
        kernel_width: 3,
        layers: 2,
        dropout: 0.0,
        batch_norm: false,
        label_smoothing: 0.1,
        precision: Dtype::F64,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Finite-difference check of the full model on `toy_dataset(size)`, loss
/// over every training query.
pub fn toy_gradcheck(size: usize, seed: u64) -> Result<GradCheckReport> {
    let data = toy_dataset(size)?;
    let cfg = TrainConfig {
        seed,
        ..gradcheck_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, mut store) = build_model::<f64>(&cfg, &data, &mut rng)?;
    let index = crate::data::build_filter_index_for(&data.store, &[Split::Train]);
    let batch = make_batches(&index, usize::MAX, &mut rng)?.remove(0);
    let targets = Arc::new(batch.targets::<f64>(data.vocab.num_entities(), cfg.label_smoothing));
    let (subjects, relations) = (batch.subjects(), batch.relations());
    grad_check(
        &mut store,
        |store, backward| {
            let mut tape = Tape::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (loss, _) = model.loss(
                &mut tape,
                store,
                &subjects,
                &relations,
                Arc::clone(&targets),
                Mode::Train,
                &mut rng,
            )?;
            if backward {
                tape.backward(loss, store)?;
            }
            Ok(tape.scalar(loss))
        },
        1e-5,
    )
}
