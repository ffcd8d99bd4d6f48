use std::sync::Arc;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::Rng;
use rayon::prelude::*;

use super::as_matrix;
use super::param::{ParamId, ParamStore};
use crate::decoder::pad_offsets;
use crate::error::{Error, Result};
use crate::graph::{compose_with, spmm, spmm_backward, ComposedAdjacency, RelationAdjacency};
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    AddBias {
        input: Var,
        bias: Var,
        channels: usize,
        inner: usize,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Gather {
        src: Var,
        rows: Vec<usize>,
    },
    Spmm {
        adj: Arc<RelationAdjacency>,
        composed: ComposedAdjacency<T>,
        alphas: Var,
        input: Var,
    },
    Correlate {
        subj: Var,
        rel: Var,
        kernels: Var,
        width: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        inner: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
        train: bool,
    },
    NegDistance {
        query: Var,
        items: Var,
        p: u8,
    },
    BceWithLogits {
        logits: Var,
        targets: Arc<Array2<T>>,
    },
}

struct Node<T> {
    value: Arc<ArrayD<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] walks them in
/// reverse, visiting each node once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn scalar<T: Real>(v: T) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    pub fn shared(&self, v: Var) -> Arc<ArrayD<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    pub fn matrix(&self, v: Var) -> Array2<T> {
        as_matrix("matrix", self.value(v))
            .expect("matrix-shaped node")
            .to_owned()
    }

    /// Scalar value of a 0-d or single-element node.
    pub fn scalar(&self, v: Var) -> T {
        *self.value(v).iter().next().expect("non-empty node")
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn constant_shared(&mut self, value: Arc<ArrayD<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter leaf. Frozen parameters behave as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        if p.trainable {
            self.push(p.value.clone(), Op::Param(id), &[])
        } else {
            self.constant(p.value.clone())
        }
    }

    fn mat(&self, op: &'static str, v: Var) -> Result<ndarray::ArrayView2<'_, T>> {
        as_matrix(op, &self.nodes[v.0].value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.mat("matmul", a)?, self.mat("matmul", b)?);
        if am.ncols() != bm.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", am.shape(), bm.shape()),
            ));
        }
        let out = am.dot(&bm).into_dyn();
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.mat("matmul_nt", a)?, self.mat("matmul_nt", b)?);
        if am.ncols() != bm.ncols() {
            return Err(Error::shape(
                "matmul_nt",
                format!("{:?} x {:?}ᵀ", am.shape(), bm.shape()),
            ));
        }
        let out = am.dot(&bm.t()).into_dyn();
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Adds `bias[c]` to every entry of channel `c` in a `B × (channels·inner)` input.
    pub fn add_bias(&mut self, input: Var, bias: Var, channels: usize) -> Result<Var> {
        let x = self.mat("add_bias", input)?;
        let b = self.value(bias);
        if b.len() != channels || channels == 0 || x.ncols() % channels != 0 {
            return Err(Error::shape(
                "add_bias",
                format!(
                    "input {:?}, bias {:?}, {channels} channels",
                    x.shape(),
                    b.shape()
                ),
            ));
        }
        let inner = x.ncols() / channels;
        let bias_v: Vec<T> = b.iter().copied().collect();
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v += bias_v[k / inner];
            }
        }
        Ok(self.push(
            out.into_dyn(),
            Op::AddBias {
                input,
                bias,
                channels,
                inner,
            },
            &[input, bias],
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.tanh());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Inverted dropout. Identity in eval mode or at rate 0; in train mode each
    /// entry is zeroed with probability `rate` and survivors scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = self.value(a).as_standard_layout().into_owned();
        for (v, &m) in out.iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(out, Op::Dropout { input: a, mask }, &[a]))
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, rows: &[usize]) -> Result<Var> {
        let m = self.mat("gather_rows", src)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m.nrows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {} rows", m.nrows()),
            ));
        }
        let out = m.select(Axis(0), rows).into_dyn();
        Ok(self.push(
            out,
            Op::Gather {
                src,
                rows: rows.to_vec(),
            },
            &[src],
        ))
    }

    /// `compose(adj, alphas) · input`, differentiable in both `alphas` and `input`.
    pub fn spmm(
        &mut self,
        adj: &Arc<RelationAdjacency>,
        alphas: Var,
        input: Var,
        row_normalize: bool,
    ) -> Result<Var> {
        let al: Vec<T> = self.value(alphas).iter().copied().collect();
        let composed = compose_with(adj, &al, row_normalize)?;
        let out = spmm(&composed, self.mat("spmm", input)?)?.into_dyn();
        Ok(self.push(
            out,
            Op::Spmm {
                adj: Arc::clone(adj),
                composed,
                alphas,
                input,
            },
            &[alphas, input],
        ))
    }

    /// Width-`K` correlation of `C` kernels (`C × 2 × K`) over the zero-padded
    /// rows of `subj` and `rel` (`B × F` each). Output is `B × (C·F)`, channel-major.
    pub fn correlate_pair(&mut self, subj: Var, rel: Var, kernels: Var) -> Result<Var> {
        self.same_shape("correlate_pair", subj, rel)?;
        let ks = self.value(kernels).shape().to_vec();
        if ks.len() != 3 || ks[1] != 2 || ks[2] == 0 {
            return Err(Error::shape(
                "correlate_pair",
                format!("kernels must be C x 2 x K, got {ks:?}"),
            ));
        }
        let (c, width) = (ks[0], ks[2]);
        let s = self
            .mat("correlate_pair", subj)?
            .as_standard_layout()
            .into_owned();
        let r = self
            .mat("correlate_pair", rel)?
            .as_standard_layout()
            .into_owned();
        let k: Vec<T> = self.value(kernels).iter().copied().collect();
        let (b, f) = s.dim();
        let (left, _) = pad_offsets(width);
        let mut out = Array2::<T>::zeros((b, c * f));
        if b > 0 && f > 0 && c > 0 {
            out.as_slice_mut()
                .unwrap()
                .par_chunks_mut(c * f)
                .enumerate()
                .for_each(|(row, dst)| {
                    let es = padded(s.row(row).as_slice().unwrap(), width, left);
                    let er = padded(r.row(row).as_slice().unwrap(), width, left);
                    correlate_into(&es, &er, &k, c, width, f, dst);
                });
        }
        Ok(self.push(
            out.into_dyn(),
            Op::Correlate {
                subj,
                rel,
                kernels,
                width,
            },
            &[subj, rel, kernels],
        ))
    }

    /// Batch normalization over a `B × (channels·inner)` input with statistics
    /// per channel. Train mode uses batch statistics; eval mode uses the given
    /// running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        channels: usize,
        running: (&[T], &[T]),
        eps: f64,
        mode: Mode,
    ) -> Result<Var> {
        let x = self
            .mat("batch_norm", input)?
            .as_standard_layout()
            .into_owned();
        let (b, width) = x.dim();
        if channels == 0
            || width % channels != 0
            || self.value(gamma).len() != channels
            || self.value(beta).len() != channels
            || running.0.len() != channels
            || running.1.len() != channels
        {
            return Err(Error::shape(
                "batch_norm",
                format!("input {:?} with {channels} channels", x.shape()),
            ));
        }
        let inner = width / channels;
        let g: Vec<T> = self.value(gamma).iter().copied().collect();
        let bt: Vec<T> = self.value(beta).iter().copied().collect();
        let eps = T::of(eps);
        let count = T::of((b * inner) as f64);
        let train = mode == Mode::Train;
        let mut mean = vec![T::zero(); channels];
        let mut var = vec![T::zero(); channels];
        if train {
            if b * inner == 0 {
                return Err(Error::shape("batch_norm", "empty batch in train mode"));
            }
            for row in x.rows() {
                for (k, &v) in row.iter().enumerate() {
                    mean[k / inner] += v;
                }
            }
            for m in &mut mean {
                *m /= count;
            }
            for row in x.rows() {
                for (k, &v) in row.iter().enumerate() {
                    let d = v - mean[k / inner];
                    var[k / inner] += d * d;
                }
            }
            for v in &mut var {
                *v /= count;
            }
        } else {
            mean.copy_from_slice(running.0);
            var.copy_from_slice(running.1);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(b * width);
        let mut out = Array2::<T>::zeros((b, width));
        for (row, mut orow) in x.rows().into_iter().zip(out.rows_mut()) {
            for (k, (&v, o)) in row.iter().zip(orow.iter_mut()).enumerate() {
                let ch = k / inner;
                let xh = (v - mean[ch]) * inv_std[ch];
                xhat.push(xh);
                *o = g[ch] * xh + bt[ch];
            }
        }
        Ok(self.push(
            out.into_dyn(),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                channels,
                inner,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                train,
            },
            &[input, gamma, beta],
        ))
    }

    /// Batch mean and biased variance recorded by a train-mode batch norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[T], &[T], usize)> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_mean,
                batch_var,
                train: true,
                inner,
                ..
            } => {
                let n = self.value(v).shape()[0] * inner;
                Some((batch_mean, batch_var, n))
            }
            _ => None,
        }
    }

    /// `out[b][o] = -‖query_b - items_o‖_p` for `p` in {1, 2}.
    pub fn neg_distance(&mut self, query: Var, items: Var, p: u8) -> Result<Var> {
        if p != 1 && p != 2 {
            return Err(Error::Invalid(format!("p-norm must be 1 or 2, got {p}")));
        }
        let q = self
            .mat("neg_distance", query)?
            .as_standard_layout()
            .into_owned();
        let e = self
            .mat("neg_distance", items)?
            .as_standard_layout()
            .into_owned();
        if q.ncols() != e.ncols() {
            return Err(Error::shape(
                "neg_distance",
                format!("{:?} vs {:?}", q.shape(), e.shape()),
            ));
        }
        let (b, n) = (q.nrows(), e.nrows());
        let mut out = Array2::<T>::zeros((b, n));
        for (qi, mut orow) in q.rows().into_iter().zip(out.rows_mut()) {
            for (ei, o) in e.rows().into_iter().zip(orow.iter_mut()) {
                let d = if p == 1 {
                    qi.iter()
                        .zip(ei.iter())
                        .map(|(&a, &c)| (a - c).abs())
                        .sum::<T>()
                } else {
                    qi.iter()
                        .zip(ei.iter())
                        .map(|(&a, &c)| (a - c) * (a - c))
                        .sum::<T>()
                        .sqrt()
                };
                *o = -d;
            }
        }
        Ok(self.push(
            out.into_dyn(),
            Op::NegDistance { query, items, p },
            &[query, items],
        ))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`,
    /// evaluated as `max(x,0) - x·y + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Array2<T>>) -> Result<Var> {
        let x = self.mat("bce_with_logits", logits)?;
        if x.shape() != targets.shape() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("logits {:?}, targets {:?}", x.shape(), targets.shape()),
            ));
        }
        let count = x.len();
        if count == 0 {
            return Err(Error::shape("bce_with_logits", "empty input"));
        }
        let total: T = x
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln())
            .sum();
        let out = scalar(total / T::of(count as f64));
        Ok(self.push(out, Op::BceWithLogits { logits, targets }, &[logits]))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<ArrayD<T>>>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::from_elem(self.value(loss).raw_dim(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let contributions = self.backward_node(node, &g)?;
            grads[idx] = Some(g);
            for (v, dg) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &dg,
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        Ok(grads)
    }

    /// Backpropagates `loss` and accumulates into the parameter gradient buffers.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let p = store.get_mut(*id);
                if p.trainable {
                    if p.grad.shape() != g.shape() {
                        return Err(Error::shape(
                            "backward",
                            format!("gradient for {} has shape {:?}", p.name, g.shape()),
                        ));
                    }
                    p.grad += &g;
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, g: &ArrayD<T>) -> Result<Vec<(Var, ArrayD<T>)>> {
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let out = match &node.op {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let gm = as_matrix("matmul", g)?;
                let (am, bm) = (self.mat("matmul", *a)?, self.mat("matmul", *b)?);
                let mut v = vec![];
                if needs(a) {
                    v.push((*a, reshape_like(gm.dot(&bm.t()), self.value(*a))));
                }
                if needs(b) {
                    v.push((*b, reshape_like(am.t().dot(&gm), self.value(*b))));
                }
                v
            }
            Op::MatMulNt(a, b) => {
                let gm = as_matrix("matmul_nt", g)?;
                let (am, bm) = (self.mat("matmul_nt", *a)?, self.mat("matmul_nt", *b)?);
                let mut v = vec![];
                if needs(a) {
                    v.push((*a, reshape_like(gm.dot(&bm), self.value(*a))));
                }
                if needs(b) {
                    v.push((*b, reshape_like(gm.t().dot(&am), self.value(*b))));
                }
                v
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => vec![(*a, g * self.value(*b)), (*b, g * self.value(*a))],
            Op::Scale(a, c) => vec![(*a, g * *c)],
            Op::Sum(a) => {
                let gv = *g.iter().next().unwrap();
                vec![(*a, ArrayD::from_elem(self.value(*a).raw_dim(), gv))]
            }
            Op::AddBias {
                input,
                bias,
                channels,
                inner,
            } => {
                let gm = as_matrix("add_bias", g)?;
                let mut gb = vec![T::zero(); *channels];
                for row in gm.rows() {
                    for (k, &v) in row.iter().enumerate() {
                        gb[k / inner] += v;
                    }
                }
                let gb = ArrayD::from_shape_vec(self.value(*bias).raw_dim(), gb)
                    .map_err(|e| Error::shape("add_bias", e.to_string()))?;
                vec![(*input, g.clone()), (*bias, gb)]
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(&**self.nodes[a.0].value)
                    .for_each(|d, &x| {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    });
                vec![(*a, d)]
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(&*node.value)
                    .for_each(|d, &y| *d *= T::one() - y * y);
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d)
                    .and(&*node.value)
                    .for_each(|d, &y| *d *= y * (T::one() - y));
                vec![(*a, d)]
            }
            Op::Dropout { input, mask } => {
                let mut d = g.as_standard_layout().into_owned();
                for (v, &m) in d.iter_mut().zip(mask) {
                    *v *= m;
                }
                vec![(*input, d)]
            }
            Op::Gather { src, rows } => {
                let gm = as_matrix("gather_rows", g)?;
                let shape = self.value(*src).shape();
                let mut d = Array2::<T>::zeros((shape[0], gm.ncols()));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &gm.row(k);
                }
                vec![(*src, reshape_like(d, self.value(*src)))]
            }
            Op::Spmm {
                adj,
                composed,
                alphas,
                input,
            } => {
                let gm = as_matrix("spmm", g)?;
                let h = self.mat("spmm", *input)?;
                let (gh, ga) = spmm_backward(adj, composed, h, gm)?;
                let ga = ArrayD::from_shape_vec(self.value(*alphas).raw_dim(), ga)
                    .map_err(|e| Error::shape("spmm", e.to_string()))?;
                vec![
                    (*input, reshape_like(gh, self.value(*input))),
                    (*alphas, ga),
                ]
            }
            Op::Correlate {
                subj,
                rel,
                kernels,
                width,
            } => self.correlate_backward(g, *subj, *rel, *kernels, *width)?,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                channels,
                inner,
                xhat,
                inv_std,
                train,
                ..
            } => {
                let gm = as_matrix("batch_norm", g)?
                    .as_standard_layout()
                    .into_owned();
                let (b, width) = gm.dim();
                let gam: Vec<T> = self.value(*gamma).iter().copied().collect();
                let mut dgamma = vec![T::zero(); *channels];
                let mut dbeta = vec![T::zero(); *channels];
                for (i, &dy) in gm.iter().enumerate() {
                    let ch = (i % width) / inner;
                    dgamma[ch] += dy * xhat[i];
                    dbeta[ch] += dy;
                }
                let mut dx = Array2::<T>::zeros((b, width));
                if *train {
                    // dx = inv_std/M * (M*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                    let m = T::of((b * inner) as f64);
                    let mut s1 = vec![T::zero(); *channels];
                    let mut s2 = vec![T::zero(); *channels];
                    for (i, &dy) in gm.iter().enumerate() {
                        let ch = (i % width) / inner;
                        let dxh = dy * gam[ch];
                        s1[ch] += dxh;
                        s2[ch] += dxh * xhat[i];
                    }
                    for (i, d) in dx.iter_mut().enumerate() {
                        let ch = (i % width) / inner;
                        let dxh = gm.as_slice().unwrap()[i] * gam[ch];
                        *d = inv_std[ch] / m * (m * dxh - s1[ch] - xhat[i] * s2[ch]);
                    }
                } else {
                    for (i, d) in dx.iter_mut().enumerate() {
                        let ch = (i % width) / inner;
                        *d = gm.as_slice().unwrap()[i] * gam[ch] * inv_std[ch];
                    }
                }
                let shape_g = self.value(*gamma).raw_dim();
                let shape_b = self.value(*beta).raw_dim();
                vec![
                    (*input, reshape_like(dx, self.value(*input))),
                    (*gamma, ArrayD::from_shape_vec(shape_g, dgamma).unwrap()),
                    (*beta, ArrayD::from_shape_vec(shape_b, dbeta).unwrap()),
                ]
            }
            Op::NegDistance { query, items, p } => {
                let gm = as_matrix("neg_distance", g)?;
                let q = self.mat("neg_distance", *query)?;
                let e = self.mat("neg_distance", *items)?;
                let out = as_matrix("neg_distance", &node.value)?;
                let mut dq = Array2::<T>::zeros(q.raw_dim());
                let mut de = Array2::<T>::zeros(e.raw_dim());
                for b in 0..q.nrows() {
                    for o in 0..e.nrows() {
                        let up = gm[[b, o]];
                        if up == T::zero() {
                            continue;
                        }
                        let dist = -out[[b, o]];
                        for k in 0..q.ncols() {
                            let diff = q[[b, k]] - e[[o, k]];
                            // d(-dist)/dq; subgradient 0 at the kink
                            let dd = if *p == 1 {
                                if diff > T::zero() {
                                    T::one()
                                } else if diff < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            } else if dist > T::zero() {
                                diff / dist
                            } else {
                                T::zero()
                            };
                            dq[[b, k]] -= up * dd;
                            de[[o, k]] += up * dd;
                        }
                    }
                }
                vec![
                    (*query, reshape_like(dq, self.value(*query))),
                    (*items, reshape_like(de, self.value(*items))),
                ]
            }
            Op::BceWithLogits { logits, targets } => {
                let gv = *g.iter().next().unwrap();
                let x = self.mat("bce_with_logits", *logits)?;
                let scale = gv / T::of(x.len() as f64);
                let mut d = Array2::<T>::zeros(x.raw_dim());
                ndarray::Zip::from(&mut d)
                    .and(&x)
                    .and(&**targets)
                    .for_each(|d, &x, &y| *d = (sigmoid(x) - y) * scale);
                vec![(*logits, reshape_like(d, self.value(*logits)))]
            }
        };
        Ok(out)
    }

    fn correlate_backward(
        &self,
        g: &ArrayD<T>,
        subj: Var,
        rel: Var,
        kernels: Var,
        width: usize,
    ) -> Result<Vec<(Var, ArrayD<T>)>> {
        let gm = as_matrix("correlate_pair", g)?
            .as_standard_layout()
            .into_owned();
        let s = self
            .mat("correlate_pair", subj)?
            .as_standard_layout()
            .into_owned();
        let r = self
            .mat("correlate_pair", rel)?
            .as_standard_layout()
            .into_owned();
        let k: Vec<T> = self.value(kernels).iter().copied().collect();
        let c = self.value(kernels).shape()[0];
        let (b, f) = s.dim();
        let (left, _) = pad_offsets(width);
        let padw = f + width - 1;

        let mut ds = Array2::<T>::zeros((b, f));
        let mut dr = Array2::<T>::zeros((b, f));
        if b > 0 && f > 0 {
            ds.as_slice_mut()
                .unwrap()
                .par_chunks_mut(f)
                .zip(dr.as_slice_mut().unwrap().par_chunks_mut(f))
                .enumerate()
                .for_each(|(row, (ds_row, dr_row))| {
                    let grow = &gm.as_slice().unwrap()[row * c * f..(row + 1) * c * f];
                    let mut ps = vec![T::zero(); padw];
                    let mut pr = vec![T::zero(); padw];
                    for ch in 0..c {
                        let k0 = &k[ch * 2 * width..ch * 2 * width + width];
                        let k1 = &k[ch * 2 * width + width..(ch + 1) * 2 * width];
                        for n in 0..f {
                            let up = grow[ch * f + n];
                            for tau in 0..width {
                                ps[n + tau] += k0[tau] * up;
                                pr[n + tau] += k1[tau] * up;
                            }
                        }
                    }
                    ds_row.copy_from_slice(&ps[left..left + f]);
                    dr_row.copy_from_slice(&pr[left..left + f]);
                });
        }

        // each kernel row owns its accumulator; batch rows summed in order
        let mut dk = vec![T::zero(); c * 2 * width];
        if b > 0 && f > 0 {
            let padded_s: Vec<Vec<T>> = (0..b)
                .map(|i| padded(s.row(i).as_slice().unwrap(), width, left))
                .collect();
            let padded_r: Vec<Vec<T>> = (0..b)
                .map(|i| padded(r.row(i).as_slice().unwrap(), width, left))
                .collect();
            dk.par_chunks_mut(2 * width)
                .enumerate()
                .for_each(|(ch, acc)| {
                    for row in 0..b {
                        let grow = &gm.as_slice().unwrap()
                            [row * c * f + ch * f..row * c * f + (ch + 1) * f];
                        let (es, er) = (&padded_s[row], &padded_r[row]);
                        for tau in 0..width {
                            let mut a0 = T::zero();
                            let mut a1 = T::zero();
                            for n in 0..f {
                                a0 += grow[n] * es[n + tau];
                                a1 += grow[n] * er[n + tau];
                            }
                            acc[tau] += a0;
                            acc[width + tau] += a1;
                        }
                    }
                });
        }
        let dk = ArrayD::from_shape_vec(self.value(kernels).raw_dim(), dk)
            .map_err(|e| Error::shape("correlate_pair", e.to_string()))?;
        Ok(vec![
            (subj, reshape_like(ds, self.value(subj))),
            (rel, reshape_like(dr, self.value(rel))),
            (kernels, dk),
        ])
    }
}

fn reshape_like<T: Real>(m: Array2<T>, like: &ArrayD<T>) -> ArrayD<T> {
    if like.ndim() == 2 {
        m.into_dyn()
    } else {
        m.into_shape_with_order(like.raw_dim())
            .expect("gradient has the input's element count")
    }
}

fn padded<T: Real>(e: &[T], width: usize, left: usize) -> Vec<T> {
    let mut out = vec![T::zero(); e.len() + width - 1];
    out[left..left + e.len()].copy_from_slice(e);
    out
}

/// `dst[c*F + n] = sum_tau k[c,0,tau] es[n+tau] + sum_tau k[c,1,tau] er[n+tau]` on padded rows.
/// The two sums are kept apart so the result splits exactly into subject and relation parts.
pub(crate) fn correlate_into<T: Real>(
    es: &[T],
    er: &[T],
    k: &[T],
    channels: usize,
    width: usize,
    f: usize,
    dst: &mut [T],
) {
    for ch in 0..channels {
        let k0 = &k[ch * 2 * width..ch * 2 * width + width];
        let k1 = &k[ch * 2 * width + width..(ch + 1) * 2 * width];
        let out = &mut dst[ch * f..(ch + 1) * f];
        for (n, o) in out.iter_mut().enumerate() {
            let (mut from_s, mut from_r) = (T::zero(), T::zero());
            for tau in 0..width {
                from_s += k0[tau] * es[n + tau];
                from_r += k1[tau] * er[n + tau];
            }
            *o = from_s + from_r;
        }
    }
}
