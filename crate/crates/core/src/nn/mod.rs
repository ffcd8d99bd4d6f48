//! Minimal reverse-mode differentiation for the ops this model needs.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod init;
mod param;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{peek_dtype, read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckReport, ParamError};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Mode, Tape, Var};

use ndarray::{ArrayD, ArrayView2, Ix2};

use crate::error::{Error, Result};

/// View a tensor as a matrix; rank-1 tensors become a single row.
pub(crate) fn as_matrix<'a, T>(op: &'static str, t: &'a ArrayD<T>) -> Result<ArrayView2<'a, T>> {
    match t.ndim() {
        2 => Ok(t.view().into_dimensionality::<Ix2>().expect("rank 2")),
        1 => Ok(t
            .view()
            .into_shape_with_order((1, t.len()))
            .map_err(|e| Error::shape(op, e.to_string()))?),
        _ => Err(Error::shape(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        )),
    }
}
