//! Weighted graph convolutional encoder: `H^{l+1} = act(A^l H^l W^l)` with
//! `A^l = sum_t alpha_t^l A_t + I`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{compose_with, spmm, RelationAdjacency};
use crate::nn::init;
use crate::nn::{Mode, ParamId, ParamStore, Tape, Var};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "none" => Ok(Activation::Identity),
            o => Err(Error::Config(format!("unknown activation '{o}'"))),
        }
    }

    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub(crate) fn on_tape<T: Real>(self, tape: &mut Tape<T>, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
            Activation::Tanh => tape.tanh(v),
            Activation::Identity => v,
        }
    }
}

/// One layer: a `F^l × F^{l+1}` weight and one weight per edge type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WgcnLayer {
    pub weight: ParamId,
    pub alphas: ParamId,
}

/// Trainable initial features `H^1` followed by `L` layers. With no layers the
/// encoder is a plain embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct WgcnStack {
    pub h1: ParamId,
    pub layers: Vec<WgcnLayer>,
    pub dropout: f64,
    pub activation: Activation,
    pub row_normalize: bool,
}

impl WgcnStack {
    /// Registers parameters. `widths` lists `F^1, ..., F^{L+1}`; its length
    /// minus one is the layer count.
    ///
    /// `H^1 ~ N(0, 0.1^2)`, weights Xavier-uniform, every `alpha_t = 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        num_nodes: usize,
        num_types: usize,
        widths: &[usize],
        dropout: f64,
        activation: Activation,
        row_normalize: bool,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!("bad encoder widths {widths:?}")));
        }
        let h1 = store.add(
            "encoder.h1",
            init::gaussian(&[num_nodes, widths[0]], 0.1, rng),
            true,
        )?;
        let mut layers = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let weight = store.add(
                &format!("encoder.layer{l}.weight"),
                init::xavier_uniform(&[pair[0], pair[1]], pair[0], pair[1], rng),
                true,
            )?;
            let alphas = store.add(
                &format!("encoder.layer{l}.alpha"),
                init::constant(&[num_types], 1.0),
                true,
            )?;
            layers.push(WgcnLayer { weight, alphas });
        }
        Ok(WgcnStack {
            h1,
            layers,
            dropout,
            activation,
            row_normalize,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `act(A^l · (H W^l))` for one layer, followed by dropout unless it is
    /// the last layer (the last output is the candidate matrix at scoring time).
    #[allow(clippy::too_many_arguments)]
    pub fn layer_forward<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        adj: &Arc<RelationAdjacency>,
        layer: usize,
        h: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let l = &self.layers[layer];
        if store.value(l.alphas).len() != adj.num_types() {
            return Err(Error::shape(
                "wgcn layer",
                format!(
                    "{} relation weights for {} edge types",
                    store.value(l.alphas).len(),
                    adj.num_types()
                ),
            ));
        }
        if tape.value(h).shape()[0] != adj.num_nodes() {
            return Err(Error::shape(
                "wgcn layer",
                format!(
                    "{} rows for {} nodes",
                    tape.value(h).shape()[0],
                    adj.num_nodes()
                ),
            ));
        }
        let w = tape.param(store, l.weight);
        let alphas = tape.param(store, l.alphas);
        let hw = tape.matmul(h, w)?;
        let agg = tape.spmm(adj, alphas, hw, self.row_normalize)?;
        let act = self.activation.on_tape(tape, agg);
        if layer + 1 == self.layers.len() {
            return Ok(act);
        }
        tape.dropout(act, self.dropout, mode, rng)
    }

    /// Entity embedding matrix `H^{L+1}`.
    pub fn encode<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        adj: &Arc<RelationAdjacency>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = tape.param(store, self.h1);
        for l in 0..self.layers.len() {
            h = self.layer_forward(tape, store, adj, l, h, mode, rng)?;
        }
        Ok(h)
    }
}

fn check_layer<T: Real>(
    h: &ArrayView2<T>,
    adj: &RelationAdjacency,
    weight: &ArrayView2<T>,
    alphas: &[T],
) -> Result<()> {
    if h.nrows() != adj.num_nodes()
        || h.ncols() != weight.nrows()
        || alphas.len() != adj.num_types()
    {
        return Err(Error::shape(
            "wgcn layer",
            format!(
                "H {:?}, W {:?}, {} alphas, graph {} nodes / {} types",
                h.shape(),
                weight.shape(),
                alphas.len(),
                adj.num_nodes(),
                adj.num_types()
            ),
        ));
    }
    Ok(())
}

/// Matrix form of one layer without dropout: `act(A (H W))`.
pub fn layer_forward_dense<T: Real>(
    h: ArrayView2<T>,
    adj: &RelationAdjacency,
    weight: ArrayView2<T>,
    alphas: &[T],
    activation: Activation,
) -> Result<Array2<T>> {
    check_layer(&h, adj, &weight, alphas)?;
    let a = compose_with(adj, alphas, false)?;
    let out = spmm(&a, h.dot(&weight).view())?;
    Ok(out.mapv(|x| activation.apply(x)))
}

/// Node-by-node form of one layer: for each node `i`,
/// `act(sum_{(j,t) in N_i} alpha_t h_j W + h_i W)`, iterating neighbors explicitly.
pub fn nodewise_forward<T: Real>(
    h: ArrayView2<T>,
    adj: &RelationAdjacency,
    weight: ArrayView2<T>,
    alphas: &[T],
    activation: Activation,
) -> Result<Array2<T>> {
    check_layer(&h, adj, &weight, alphas)?;
    let n = adj.num_nodes();
    let mut neighbors: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for t in 0..adj.num_types() {
        for &(i, j) in adj.edges(t) {
            neighbors[i].push((j, t));
            neighbors[j].push((i, t));
        }
    }
    let fout = weight.ncols();
    let mut out = Array2::zeros((n, fout));
    for (i, nbrs) in neighbors.iter().enumerate() {
        let mut acc = h.row(i).dot(&weight);
        for &(j, t) in nbrs {
            let msg = h.row(j).dot(&weight);
            acc.scaled_add(alphas[t], &msg);
        }
        out.row_mut(i).assign(&acc.mapv(|x| activation.apply(x)));
    }
    Ok(out)
}
