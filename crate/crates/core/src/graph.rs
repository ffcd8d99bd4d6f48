//! Per-relation sparse adjacency, weighted composition `sum_t alpha_t A_t + I`,
//! and the sparse-dense products used by the encoder.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::data::{Split, TripleStore, Vocabulary};
use crate::error::{Error, Result};
use crate::real::Real;

/// Binary symmetric adjacency per edge type over `N` nodes.
///
/// Stores each type's undirected edges plus a merged row-compressed pattern
/// (diagonal included) where every nonzero remembers which types produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationAdjacency {
    num_nodes: usize,
    num_types: usize,
    // per type: (i, j) with i < j, sorted, unique
    edges: Vec<Vec<(usize, usize)>>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    type_ptr: Vec<usize>,
    types: Vec<usize>,
}

impl RelationAdjacency {
    /// Builds from `(i, j, type)` edges. Direction is ignored, repeats collapse,
    /// and self-loops are dropped (the identity term supplies them).
    pub fn from_edges(
        num_nodes: usize,
        num_types: usize,
        edges: &[(usize, usize, usize)],
    ) -> Result<Self> {
        let mut per_type: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_types];
        for &(i, j, t) in edges {
            if i >= num_nodes || j >= num_nodes || t >= num_types {
                return Err(Error::Invalid(format!(
                    "edge ({i}, {j}, type {t}) outside {num_nodes} nodes / {num_types} types"
                )));
            }
            if i != j {
                per_type[t].insert((i.min(j), i.max(j)));
            }
        }
        let edges: Vec<Vec<(usize, usize)>> = per_type
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        // row -> sorted (col, type) entries, both directions
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_nodes];
        for (t, list) in edges.iter().enumerate() {
            for &(i, j) in list {
                rows[i].push((j, t));
                rows[j].push((i, t));
            }
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut cols = Vec::new();
        let mut type_ptr = vec![0];
        let mut types = Vec::new();
        row_ptr.push(0);
        for (i, mut entries) in rows.into_iter().enumerate() {
            entries.push((i, usize::MAX));
            entries.sort_unstable();
            let mut k = 0;
            while k < entries.len() {
                let col = entries[k].0;
                cols.push(col);
                while k < entries.len() && entries[k].0 == col {
                    if entries[k].1 != usize::MAX {
                        types.push(entries[k].1);
                    }
                    k += 1;
                }
                type_ptr.push(types.len());
            }
            row_ptr.push(cols.len());
        }
        Ok(RelationAdjacency {
            num_nodes,
            num_types,
            edges,
            row_ptr,
            cols,
            type_ptr,
            types,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Undirected edges `(i, j)`, `i < j`, of one type.
    pub fn edges(&self, t: usize) -> &[(usize, usize)] {
        &self.edges[t]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Dense 0/1 matrix of one type, for inspection and tests.
    pub fn dense(&self, t: usize) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(i, j) in &self.edges[t] {
            m[[i, j]] = 1.0;
            m[[j, i]] = 1.0;
        }
        m
    }

    fn entry_types(&self, k: usize) -> &[usize] {
        &self.types[self.type_ptr[k]..self.type_ptr[k + 1]]
    }
}

/// Adjacency over the training graph. Only non-reciprocal relations define
/// edge types, since a symmetrized reciprocal edge duplicates its base edge.
pub fn build_adjacency(store: &TripleStore, vocab: &Vocabulary) -> Result<RelationAdjacency> {
    let types = vocab.num_graph_relations();
    let edges: Vec<(usize, usize, usize)> = store
        .split(Split::Train)
        .filter(|t| t.relation < types)
        .map(|t| (t.subject, t.object, t.relation))
        .collect();
    RelationAdjacency::from_edges(vocab.num_entities(), types, &edges)
}

/// `sum_t alpha_t A_t + I` in compressed sparse rows, optionally row-normalized.
#[derive(Debug, Clone)]
pub struct ComposedAdjacency<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    // unnormalized weights
    raw: Vec<T>,
    values: Vec<T>,
    /// Per-row `1 / d_i` when row normalization is on.
    inv_row_sum: Option<Vec<T>>,
    alphas: Vec<T>,
}

impl<T: Real> ComposedAdjacency<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn is_normalized(&self) -> bool {
        self.inv_row_sum.is_some()
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut m = Array2::zeros((self.n, self.n));
        for (i, j, v) in self.entries() {
            m[[i, j]] = v;
        }
        m
    }

    /// Coordinate-list dump, one `i j value` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, j, v) in self.entries() {
            writeln!(w, "{i} {j} {v}")?;
        }
        Ok(())
    }
}

/// `sum_t alpha_t A_t + I`.
pub fn compose<T: Real>(adj: &RelationAdjacency, alphas: &[T]) -> Result<ComposedAdjacency<T>> {
    compose_with(adj, alphas, false)
}

/// Composition with optional row normalization `D^-1 (sum_t alpha_t A_t + I)`.
pub fn compose_with<T: Real>(
    adj: &RelationAdjacency,
    alphas: &[T],
    row_normalize: bool,
) -> Result<ComposedAdjacency<T>> {
    if alphas.len() != adj.num_types {
        return Err(Error::shape(
            "compose",
            format!("{} alphas for {} edge types", alphas.len(), adj.num_types),
        ));
    }
    let mut raw = Vec::with_capacity(adj.cols.len());
    for i in 0..adj.num_nodes {
        for k in adj.row_ptr[i]..adj.row_ptr[i + 1] {
            let mut v = if adj.cols[k] == i {
                T::one()
            } else {
                T::zero()
            };
            for &t in adj.entry_types(k) {
                v += alphas[t];
            }
            raw.push(v);
        }
    }
    let (values, inv_row_sum) = if row_normalize {
        let mut inv = Vec::with_capacity(adj.num_nodes);
        let mut values = raw.clone();
        for i in 0..adj.num_nodes {
            let range = adj.row_ptr[i]..adj.row_ptr[i + 1];
            let sum: T = raw[range.clone()].iter().copied().sum();
            // a zero row sum (possible with negative weights) is left unscaled
            let s = if sum == T::zero() {
                T::one()
            } else {
                T::one() / sum
            };
            for v in &mut values[range] {
                *v *= s;
            }
            inv.push(s);
        }
        (values, Some(inv))
    } else {
        (raw.clone(), None)
    };
    Ok(ComposedAdjacency {
        n: adj.num_nodes,
        row_ptr: adj.row_ptr.clone(),
        cols: adj.cols.clone(),
        raw,
        values,
        inv_row_sum,
        alphas: alphas.to_vec(),
    })
}

fn spmm_values<T: Real>(
    n: usize,
    row_ptr: &[usize],
    cols: &[usize],
    values: &[T],
    h: ArrayView2<T>,
) -> Array2<T> {
    let f = h.ncols();
    let h = h.as_standard_layout();
    let hs = h.as_slice().expect("standard layout");
    let mut out = Array2::<T>::zeros((n, f));
    if f == 0 {
        return out;
    }
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(f)
        .enumerate()
        .for_each(|(i, row)| {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let v = values[k];
                let src = &hs[cols[k] * f..(cols[k] + 1) * f];
                for (o, &x) in row.iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        });
    out
}

/// Sparse-dense product `A H`. Each output row is accumulated sequentially in
/// column order, so results do not depend on the worker count.
pub fn spmm<T: Real>(a: &ComposedAdjacency<T>, h: ArrayView2<T>) -> Result<Array2<T>> {
    if h.nrows() != a.n {
        return Err(Error::shape(
            "spmm",
            format!(
                "adjacency is {0}x{0}, dense input has {1} rows",
                a.n,
                h.nrows()
            ),
        ));
    }
    Ok(spmm_values(a.n, &a.row_ptr, &a.cols, &a.values, h))
}

/// Reverse mode of `Y = A H` with `A = compose(adj, alphas)`.
///
/// Returns `dL/dH` and `dL/dalpha_t` given the upstream gradient `G = dL/dY`
/// and the forward input `H`.
pub fn spmm_backward<T: Real>(
    adj: &RelationAdjacency,
    a: &ComposedAdjacency<T>,
    h: ArrayView2<T>,
    g: ArrayView2<T>,
) -> Result<(Array2<T>, Vec<T>)> {
    if h.nrows() != a.n || g.nrows() != a.n || h.ncols() != g.ncols() {
        return Err(Error::shape(
            "spmm_backward",
            format!("n={}, input {:?}, upstream {:?}", a.n, h.shape(), g.shape()),
        ));
    }
    if adj.cols.len() != a.cols.len() {
        return Err(Error::shape(
            "spmm_backward",
            "adjacency does not match composition",
        ));
    }
    let f = h.ncols();
    let h = h.as_standard_layout();
    let g = g.as_standard_layout();
    let hs = h.as_slice().expect("standard layout");
    let gs = g.as_slice().expect("standard layout");

    // A is symmetric, so A^T G = A G; the normalized case is A_raw (D^-1 G).
    let grad_h = match &a.inv_row_sum {
        None => spmm_values(a.n, &a.row_ptr, &a.cols, &a.values, g.view()),
        Some(inv) => {
            let mut scaled = g.to_owned();
            for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
                row *= inv[i];
            }
            spmm_values(a.n, &a.row_ptr, &a.cols, &a.raw, scaled.view())
        }
    };

    let dot = |i: usize, j: usize| -> T {
        gs[i * f..(i + 1) * f]
            .iter()
            .zip(&hs[j * f..(j + 1) * f])
            .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
    };

    // coefficient per stored entry, then a sequential scatter into alpha slots
    let mut coeff = vec![T::zero(); a.cols.len()];
    let mut chunks: Vec<&mut [T]> = Vec::with_capacity(a.n);
    let mut rest = coeff.as_mut_slice();
    for i in 0..a.n {
        let (head, tail) = rest.split_at_mut(a.row_ptr[i + 1] - a.row_ptr[i]);
        chunks.push(head);
        rest = tail;
    }
    chunks.into_par_iter().enumerate().for_each(|(i, out)| {
        let base = a.row_ptr[i];
        for (off, c) in out.iter_mut().enumerate() {
            *c = dot(i, a.cols[base + off]);
        }
        if let Some(inv) = &a.inv_row_sum {
            // d(a_ij / d_i)/d alpha_t = (1[t in ij] - a_ij/d_i * deg_t(i)) / d_i
            let q = out
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (off, &d)| acc + a.values[base + off] * d);
            for c in out.iter_mut() {
                *c = (*c - q) * inv[i];
            }
        }
    });

    let mut grad_alpha = vec![T::zero(); adj.num_types];
    for (k, &c) in coeff.iter().enumerate() {
        for &t in adj.entry_types(k) {
            grad_alpha[t] += c;
        }
    }
    Ok((grad_h, grad_alpha))
}
