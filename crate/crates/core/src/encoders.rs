//! Graph encoders for the social and collaborative domains.
//!
//! The social encoder is a weighted GCN, `E⁽ˡ⁾ = φ(Ã_S E⁽ˡ⁻¹⁾ W⁽ˡ⁾)`. The
//! collaborative encoder is LightGCN: weightless propagation over the
//! normalized bipartite graph followed by a mean over all layers.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
pub use crate::nn::Activation;
use crate::sparse::SparseMatrix;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters {
    /// One `d x d` transform per layer.
    pub weights: Vec<Matrix>,
    pub activation: Activation,
}

impl GcnParameters {
    pub fn init<R: Rng + ?Sized>(dim: usize, layers: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weights: (0..layers)
                .map(|_| Matrix::glorot_uniform(dim, dim, rng))
                .collect(),
            activation,
        }
    }
}

fn check_square(a: &SparseMatrix, rows: usize, what: &str) -> Result<()> {
    if a.n_rows() != rows || a.n_cols() != rows {
        return Err(Error::Shape(format!(
            "{what}: adjacency {}x{} for {rows} embedding rows",
            a.n_rows(),
            a.n_cols()
        )));
    }
    Ok(())
}

pub fn social_encode(p_s: &Matrix, a: &SparseMatrix, params: &GcnParameters) -> Result<Matrix> {
    check_square(a, p_s.rows(), "social_encode")?;
    let mut e = p_s.clone();
    for w in &params.weights {
        if w.rows() != e.cols() {
            return Err(Error::Shape(format!(
                "social_encode: {}x{} weight after width {}",
                w.rows(),
                w.cols(),
                e.cols()
            )));
        }
        let mut next = a.spmm(&e)?.matmul(w)?;
        params.activation.apply(next.data_mut());
        e = next;
    }
    Ok(e)
}

/// LightGCN over the stacked `[P_R; Q]`; returns `(users, items)`.
pub fn collab_encode(p_r: &Matrix, q: &Matrix, a: &SparseMatrix, layers: usize) -> Result<(Matrix, Matrix)> {
    let n = p_r.rows();
    let stacked = Matrix::vconcat(&[p_r, q])?;
    check_square(a, stacked.rows(), "collab_encode")?;
    let mut acc = stacked.clone();
    let mut e = stacked;
    for _ in 0..layers {
        e = a.spmm(&e)?;
        acc.add_assign(&e);
    }
    let mean = acc.scale(1.0 / (layers + 1) as f64);
    Ok((mean.slice_rows(0, n), mean.slice_rows(n, mean.rows())))
}

/// Tape version of [`social_encode`].
pub fn social_encode_tape<'a>(
    tape: &mut Tape<'a>,
    p_s: Var,
    a: &'a SparseMatrix,
    weights: &[Var],
    activation: Activation,
) -> Var {
    let mut e = p_s;
    for &w in weights {
        let h = tape.spmm(a, e);
        let h = tape.matmul(h, w);
        e = activation.apply_tape(tape, h);
    }
    e
}

/// Tape version of [`collab_encode`] over an already stacked `[P_R; Q]`.
pub fn collab_encode_tape<'a>(
    tape: &mut Tape<'a>,
    stacked: Var,
    n_users: usize,
    a: &'a SparseMatrix,
    layers: usize,
) -> (Var, Var) {
    let mut outs = vec![stacked];
    for _ in 0..layers {
        let prev = *outs.last().expect("nonempty");
        outs.push(tape.spmm(a, prev));
    }
    let mean = tape.mean_of(&outs);
    let total = tape.value(mean).rows();
    (
        tape.slice_rows(mean, 0, n_users),
        tape.slice_rows(mean, n_users, total),
    )
}
