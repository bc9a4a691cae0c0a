//! Contrastive, ranking and joint objectives.

use rand::Rng;

use crate::autodiff::{logsumexp, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpVars};
use crate::tensor::{dot, norm, Matrix};

/// Two-layer perceptrons projecting social and collaborative user vectors
/// into a shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    pub social: Mlp,
    pub collab: Mlp,
}

impl ProjectionHeads {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let act = Activation::LeakyRelu(0.01);
        Self {
            social: Mlp::init(&[dim, dim, dim], act, rng),
            collab: Mlp::init(&[dim, dim, dim], act, rng),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            social: self.social.register(tape),
            collab: self.collab.register(tape),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadVars {
    pub social: MlpVars,
    pub collab: MlpVars,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the ranking loss.
    pub lambda1: f64,
    /// Weight of the contrastive loss.
    pub lambda2: f64,
    /// Contrastive temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights {self:?}: need tau > 0 and nonnegative lambdas"
            )));
        }
        Ok(())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = norm(a) * norm(b);
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}

/// In-batch InfoNCE on already projected rows: anchor `social[u]`, positive
/// `collab[u]`, negatives `collab[v]` for `v ≠ u`.
pub fn infonce_projected(social: &Matrix, collab: &Matrix, tau: f64) -> Result<f64> {
    if social.shape() != collab.shape() || social.rows() == 0 {
        return Err(Error::Shape(format!(
            "infonce batches {:?} and {:?}",
            social.shape(),
            collab.shape()
        )));
    }
    let b = social.rows();
    let mut total = 0.0;
    for u in 0..b {
        let logits: Vec<f64> = (0..b)
            .map(|v| cosine(social.row(u), collab.row(v)) / tau)
            .collect();
        total += logsumexp(&logits) - logits[u];
    }
    Ok(total / b as f64)
}

pub fn infonce(social: &Matrix, collab: &Matrix, heads: &ProjectionHeads, tau: f64) -> Result<f64> {
    infonce_projected(
        &heads.social.forward(social)?,
        &heads.collab.forward(collab)?,
        tau,
    )
}

pub fn infonce_tape(tape: &mut Tape, social: Var, collab: Var, heads: &HeadVars, tau: f64) -> Var {
    let e = heads.social.forward(tape, social);
    let p = heads.collab.forward(tape, collab);
    let e = tape.row_normalize(e);
    let p = tape.row_normalize(p);
    let logits = tape.matmul_nt(e, p);
    let logits = tape.scale(logits, 1.0 / tau);
    tape.diag_cross_entropy(logits)
}

/// Inner-product preference score.
pub fn predict_score(user: &[f64], item: &[f64]) -> f64 {
    debug_assert_eq!(user.len(), item.len());
    dot(user, item)
}

/// Mean of `−log σ(pos − neg)` computed as `softplus(neg − pos)`.
pub fn bpr(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.len() != neg.len() || pos.is_empty() {
        return Err(Error::Shape(format!(
            "bpr with {} positive and {} negative scores",
            pos.len(),
            neg.len()
        )));
    }
    Ok(pos.iter().zip(neg).map(|(p, n)| softplus(n - p)).sum::<f64>() / pos.len() as f64)
}

/// `pos` and `neg` are `B x 1` score columns.
pub fn bpr_tape(tape: &mut Tape, pos: Var, neg: Var) -> Var {
    let diff = tape.lincomb(&[(neg, 1.0), (pos, -1.0)]);
    tape.softplus_mean(diff)
}

/// `L = L_diff + λ1 L_bpr + λ2 L_cl`.
pub fn joint_loss(l_diff: f64, l_bpr: f64, l_cl: f64, w: &LossWeights) -> f64 {
    l_diff + w.lambda1 * l_bpr + w.lambda2 * l_cl
}
