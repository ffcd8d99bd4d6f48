//! Translational convolutional decoder. The subject and relation embeddings
//! are zero-padded, stacked as two rows, and correlated with `C` kernels of
//! width `K` along the embedding axis. The resulting `C × F` map is flattened,
//! projected back to `F`, and matched against every entity by inner product.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::init;
use crate::nn::{Mode, ParamId, ParamStore, Tape, Var};
use crate::real::Real;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

/// Zeros prepended and appended for kernel width `width`. The padded length
/// is always `F + width - 1`, so the correlation output keeps width `F`.
pub fn pad_offsets(width: usize) -> (usize, usize) {
    let half = width / 2;
    if width % 2 == 1 {
        (half, half)
    } else {
        (half - 1, half)
    }
}

/// Zero-pads `e` for a width-`width` kernel.
///
/// # Panics
/// If `width` is zero.
pub fn pad<T: Real>(e: &[T], width: usize) -> Vec<T> {
    assert!(width >= 1, "kernel width must be at least 1");
    let (left, right) = pad_offsets(width);
    let mut out = Vec::with_capacity(e.len() + left + right);
    out.resize(left, T::zero());
    out.extend_from_slice(e);
    out.resize(left + e.len() + right, T::zero());
    out
}

/// Correlation of each kernel (`C × 2 × K`) with the padded pair. Returns the
/// `C × F` feature map; row `c` is `m_c(n) = sum_tau k[c,0,tau] ŝ(n+tau) + k[c,1,tau] r̂(n+tau)`.
pub fn conv_forward<T: Real>(
    subject: ArrayView1<T>,
    relation: ArrayView1<T>,
    kernels: ArrayView3<T>,
) -> Result<Array2<T>> {
    let (c, two, width) = kernels.dim();
    if two != 2 || width == 0 || subject.len() != relation.len() {
        return Err(Error::shape(
            "conv_forward",
            format!(
                "kernels {:?}, subject {}, relation {}",
                kernels.shape(),
                subject.len(),
                relation.len()
            ),
        ));
    }
    let f = subject.len();
    let es = pad(&subject.to_vec(), width);
    let er = pad(&relation.to_vec(), width);
    let mut out = Array2::zeros((c, f));
    for ch in 0..c {
        for n in 0..f {
            let (mut from_s, mut from_r) = (T::zero(), T::zero());
            for tau in 0..width {
                from_s += kernels[[ch, 0, tau]] * es[n + tau];
                from_r += kernels[[ch, 1, tau]] * er[n + tau];
            }
            out[[ch, n]] = from_s + from_r;
        }
    }
    Ok(out)
}

/// Elementwise logistic sigmoid, stable at large magnitudes.
pub fn prob<T: Real>(scores: ArrayView1<T>) -> Array1<T> {
    scores.mapv(|x| {
        if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    pub channels: usize,
    pub width: usize,
    pub dropout: f64,
    pub batch_norm: bool,
    pub bias: bool,
}

/// Affine parameters plus running statistics (stored frozen so they travel
/// with checkpoints).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl NormParams {
    fn init<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(NormParams {
            gamma: store.add(
                &format!("{prefix}.gamma"),
                init::constant(&[channels], 1.0),
                true,
            )?,
            beta: store.add(
                &format!("{prefix}.beta"),
                init::constant(&[channels], 0.0),
                true,
            )?,
            running_mean: store.add(
                &format!("{prefix}.running_mean"),
                init::constant(&[channels], 0.0),
                false,
            )?,
            running_var: store.add(
                &format!("{prefix}.running_var"),
                init::constant(&[channels], 1.0),
                false,
            )?,
            channels,
        })
    }

    fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let mean: Vec<T> = store.value(self.running_mean).iter().copied().collect();
        let var: Vec<T> = store.value(self.running_var).iter().copied().collect();
        tape.batch_norm(
            input,
            gamma,
            beta,
            self.channels,
            (&mean, &var),
            BATCH_NORM_EPS,
            mode,
        )
    }

    /// Exponential moving average toward the batch statistics recorded at
    /// `node`, using the unbiased variance.
    pub fn update_running<T: Real>(&self, tape: &Tape<T>, node: Var, store: &mut ParamStore<T>) {
        let Some((mean, var, count)) = tape.batch_stats(node) else {
            return;
        };
        let m = T::of(BATCH_NORM_MOMENTUM);
        let unbias = if count > 1 {
            T::of(count as f64 / (count - 1) as f64)
        } else {
            T::one()
        };
        let rm = &mut store.get_mut(self.running_mean).value;
        for (r, &b) in rm.iter_mut().zip(mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        let rv = &mut store.get_mut(self.running_var).value;
        for (r, &b) in rv.iter_mut().zip(var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
}

/// Batch-norm nodes recorded during a forward pass, for running-stat updates.
#[derive(Debug, Clone, Default)]
pub struct NormTrace {
    pub nodes: Vec<(NormParams, Var)>,
}

impl NormTrace {
    pub fn update_running<T: Real>(&self, tape: &Tape<T>, store: &mut ParamStore<T>) {
        for (p, v) in &self.nodes {
            p.update_running(tape, *v, store);
        }
    }
}

/// Decoder parameters: kernels `C × 2 × K`, projection `(C·F) × F`, and the
/// relation embedding table `M_rel × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBank {
    pub kernels: ParamId,
    pub projection: ParamId,
    pub relations: ParamId,
    pub channels: usize,
    pub width: usize,
    pub dim: usize,
    pub dropout: f64,
    pub map_norm: Option<NormParams>,
    pub hidden_norm: Option<NormParams>,
    pub map_bias: Option<ParamId>,
    pub hidden_bias: Option<ParamId>,
}

impl DecoderBank {
    /// Relation embeddings `N(0, 0.1^2)`, kernels and projection Xavier-uniform.
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        num_relations: usize,
        dim: usize,
        config: &DecoderConfig,
    ) -> Result<Self> {
        let (c, k) = (config.channels, config.width);
        if c == 0 || k == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "decoder needs channels, width and dim >= 1 (got {c}, {k}, {dim})"
            )));
        }
        let relations = store.add(
            "decoder.relations",
            init::gaussian(&[num_relations, dim], 0.1, rng),
            true,
        )?;
        let kernels = store.add(
            "decoder.kernels",
            init::xavier_uniform(&[c, 2, k], 2 * k, c * k, rng),
            true,
        )?;
        let projection = store.add(
            "decoder.projection",
            init::xavier_uniform(&[c * dim, dim], c * dim, dim, rng),
            true,
        )?;
        let (map_norm, hidden_norm) = if config.batch_norm {
            (
                Some(NormParams::init(store, "decoder.map_norm", c)?),
                Some(NormParams::init(store, "decoder.hidden_norm", dim)?),
            )
        } else {
            (None, None)
        };
        let (map_bias, hidden_bias) = if config.bias {
            (
                Some(store.add("decoder.map_bias", init::constant(&[c], 0.0), true)?),
                Some(store.add("decoder.hidden_bias", init::constant(&[dim], 0.0), true)?),
            )
        } else {
            (None, None)
        };
        Ok(DecoderBank {
            kernels,
            projection,
            relations,
            channels: c,
            width: k,
            dim,
            dropout: config.dropout,
            map_norm,
            hidden_norm,
            map_bias,
            hidden_bias,
        })
    }

    /// Hidden query vectors `f(vec(M) W)` for `B` subject/relation rows (`B × F` each).
    #[allow(clippy::too_many_arguments)]
    pub fn hidden<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        subject: Var,
        relation: Var,
        mode: Mode,
        rng: &mut R,
        trace: &mut NormTrace,
    ) -> Result<Var> {
        let s = tape.dropout(subject, self.dropout, mode, rng)?;
        let r = tape.dropout(relation, self.dropout, mode, rng)?;
        let kernels = tape.param(store, self.kernels);
        let mut map = tape.correlate_pair(s, r, kernels)?;
        if let Some(b) = self.map_bias {
            let b = tape.param(store, b);
            map = tape.add_bias(map, b, self.channels)?;
        }
        if let Some(norm) = &self.map_norm {
            map = norm.apply(tape, store, map, mode)?;
            trace.nodes.push((*norm, map));
        }
        let map = tape.relu(map);
        let map = tape.dropout(map, self.dropout, mode, rng)?;
        let w = tape.param(store, self.projection);
        let mut hidden = tape.matmul(map, w)?;
        if let Some(b) = self.hidden_bias {
            let b = tape.param(store, b);
            hidden = tape.add_bias(hidden, b, self.dim)?;
        }
        let mut hidden = tape.dropout(hidden, self.dropout, mode, rng)?;
        if let Some(norm) = &self.hidden_norm {
            hidden = norm.apply(tape, store, hidden, mode)?;
            trace.nodes.push((*norm, hidden));
        }
        Ok(tape.relu(hidden))
    }

    /// Logits `B × N` for queries `(subjects[b], relations[b])` against the
    /// entity matrix `entities` (`N × F`).
    #[allow(clippy::too_many_arguments)]
    pub fn logits<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        entities: Var,
        subjects: &[usize],
        relations: &[usize],
        mode: Mode,
        rng: &mut R,
        trace: &mut NormTrace,
    ) -> Result<Var> {
        let s = tape.gather_rows(entities, subjects)?;
        let rel = tape.param(store, self.relations);
        let r = tape.gather_rows(rel, relations)?;
        let h = self.hidden(tape, store, s, r, mode, rng, trace)?;
        tape.matmul_nt(h, entities)
    }
}

/// Eval-mode scores of one `(subject, relation)` pair against every row of `entities`.
pub fn score_all<T: Real>(
    subject: ArrayView1<T>,
    relation: ArrayView1<T>,
    entities: ArrayView2<T>,
    bank: &DecoderBank,
    store: &ParamStore<T>,
) -> Result<Array1<T>> {
    let f = subject.len();
    if relation.len() != f || entities.ncols() != f || f != bank.dim {
        return Err(Error::shape(
            "score_all",
            format!(
                "subject {f}, relation {}, entities {:?}, decoder width {}",
                relation.len(),
                entities.shape(),
                bank.dim
            ),
        ));
    }
    let mut tape = Tape::new();
    let s = tape.constant(
        subject
            .to_owned()
            .into_shape_with_order((1, f))
            .unwrap()
            .into_dyn(),
    );
    let r = tape.constant(
        relation
            .to_owned()
            .into_shape_with_order((1, f))
            .unwrap()
            .into_dyn(),
    );
    let e = tape.constant(entities.to_owned().into_dyn());
    let mut trace = NormTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = bank.hidden(&mut tape, store, s, r, Mode::Eval, &mut rng, &mut trace)?;
    let out = tape.matmul_nt(h, e)?;
    Ok(tape.matrix(out).row(0).to_owned())
}
