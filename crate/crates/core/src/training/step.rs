//! Batch sampling and assembly of the joint loss on a tape.

use std::collections::BTreeSet;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::encoders::{collab_encode_tape, social_encode_tape, Activation};
use crate::error::{Error, Result};
use crate::graphs::{
    build_bipartite_adjacency, build_social_adjacency, drop_pairs, interaction_matrix, sym_normalize,
};
use crate::objectives::{bpr_tape, infonce_tape};
use crate::sgm::{denoise_social_tape, DiffusionDraw};
use crate::sparse::SparseMatrix;
use crate::training::model::{Graphs, ModelVars};

/// Training triples `(u, i⁺, i⁻)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Distinct users in ascending order.
    pub fn unique_users(&self) -> Vec<usize> {
        self.users
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Uniform positives from the training pairs, rejection-sampled negatives.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    train: &'a [(usize, usize)],
    items: Vec<BTreeSet<usize>>,
    m_items: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(train: &'a [(usize, usize)], n_users: usize, m_items: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::DegenerateDataset("empty training set".into()));
        }
        let mut items = vec![BTreeSet::new(); n_users];
        for &(u, i) in train {
            if u >= n_users || i >= m_items {
                return Err(Error::IndexOutOfRange {
                    index: if u >= n_users { u } else { i },
                    bound: if u >= n_users { n_users } else { m_items },
                });
            }
            items[u].insert(i);
        }
        if let Some(u) = items.iter().position(|s| s.len() == m_items) {
            return Err(Error::DegenerateUser { user: u });
        }
        Ok(Self {
            train,
            items,
            m_items,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let mut b = Batch {
            users: Vec::with_capacity(batch_size),
            pos: Vec::with_capacity(batch_size),
            neg: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let (u, i) = self.train[rng.random_range(0..self.train.len())];
            let j = loop {
                let j = rng.random_range(0..self.m_items);
                if !self.items[u].contains(&j) {
                    break j;
                }
            };
            b.users.push(u);
            b.pos.push(i);
            b.neg.push(j);
        }
        b
    }
}

pub fn sample_batch<R: Rng + ?Sized>(
    train: &[(usize, usize)],
    n_users: usize,
    m_items: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<Batch> {
    Ok(BatchSampler::new(train, n_users, m_items)?.sample(batch_size, rng))
}

/// Edge-dropout views replacing the generative view under `no_sgm`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedViews {
    pub social: SparseMatrix,
    pub bipartite: SparseMatrix,
}

impl AugmentedViews {
    pub fn sample<R: Rng + ?Sized>(
        social: &[(usize, usize)],
        train: &[(usize, usize)],
        n_users: usize,
        m_items: usize,
        rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let s = build_social_adjacency(&drop_pairs(social, rate, rng), n_users)?;
        let r = interaction_matrix(&drop_pairs(train, rate, rng), n_users, m_items)?;
        Ok(Self {
            social: sym_normalize(&s),
            bipartite: build_bipartite_adjacency(&r)?,
        })
    }
}

/// All randomness consumed by one step, fixed before the forward pass.
#[derive(Debug, Clone)]
pub struct StepNoise {
    pub batch: Batch,
    pub users: Vec<usize>,
    pub diffusion: Option<DiffusionDraw>,
    pub denoise_seed: u64,
    pub views: Option<AugmentedViews>,
}

impl StepNoise {
    #[allow(clippy::too_many_arguments)]
    pub fn draw<R: Rng + ?Sized>(
        sampler: &BatchSampler,
        social_pairs: &[(usize, usize)],
        cfg: &TrainConfig,
        n_users: usize,
        m_items: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let batch = sampler.sample(cfg.batch_size, rng);
        let users = batch.unique_users();
        let diffusion = (!cfg.ablations.no_sgm).then(|| DiffusionDraw::sample(users.len(), cfg.dim, rng));
        let denoise_seed = rng.next_u64();
        let views = if cfg.ablations.no_sgm {
            Some(AugmentedViews::sample(
                social_pairs,
                sampler.train,
                n_users,
                m_items,
                cfg.dropout_rate,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            batch,
            users,
            diffusion,
            denoise_seed,
            views,
        })
    }
}

/// Loss nodes of one step.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_diff: Option<Var>,
    pub l_bpr: Var,
    pub l_cl: Option<Var>,
    pub joint: Var,
}

/// Records the joint loss of one step.
///
/// `active` is the normalized curriculum adjacency for the diffusion loss;
/// the denoised view is always built from the full social graph. The
/// collaborative condition is a constant: `frozen` supplies it, otherwise
/// the current encoder output is used.
pub fn build_losses<'a>(
    tape: &mut Tape<'a>,
    vars: &ModelVars,
    graphs: &'a Graphs,
    active: &'a SparseMatrix,
    noise: &'a StepNoise,
    frozen: Option<&crate::tensor::Matrix>,
    cfg: &TrainConfig,
) -> LossVars {
    let n = graphs.n_users;
    let act = Activation::LeakyRelu(cfg.social_slope);
    let uniq = &noise.users;
    let slot: Vec<usize> = noise
        .batch
        .users
        .iter()
        .map(|u| uniq.binary_search(u).expect("batch user listed"))
        .collect();

    let stacked = tape.vconcat(&[vars.user_collab, vars.items]);
    let (eu, ei) = collab_encode_tape(tape, stacked, n, &graphs.bipartite, cfg.layers);
    let es_full = social_encode_tape(tape, vars.user_social, &graphs.social_norm, &vars.gcn, act);
    let full = frozen.unwrap_or_else(|| tape.value(eu)).clone();
    let cond = full.gather_rows(uniq);

    let l_diff = noise.diffusion.as_ref().map(|draw| {
        let es_sparse = if cfg.ablations.no_curriculum {
            es_full
        } else {
            social_encode_tape(tape, vars.user_social, active, &vars.gcn, act)
        };
        let x0 = tape.gather_rows(es_sparse, uniq);
        draw.loss_tape(tape, &vars.score, &cfg.sde, x0, &cond)
    });

    let (social_u, collab_u) = match &noise.views {
        None => {
            let denoised = denoise_social_tape(
                tape,
                es_full,
                &full,
                uniq,
                &vars.score,
                &cfg.sde,
                cfg.t_start,
                noise.denoise_seed,
            );
            (denoised, tape.gather_rows(eu, uniq))
        }
        Some(v) => {
            let es_v = social_encode_tape(tape, vars.user_social, &v.social, &vars.gcn, act);
            let (eu_v, _) = collab_encode_tape(tape, stacked, n, &v.bipartite, cfg.layers);
            (tape.gather_rows(es_v, uniq), tape.gather_rows(eu_v, uniq))
        }
    };

    let l_cl =
        (!cfg.ablations.no_ssl).then(|| infonce_tape(tape, social_u, collab_u, &vars.heads, cfg.weights.tau));

    let users = match &vars.fusion {
        Some(f) => {
            let eu_b = tape.gather_rows(eu, uniq);
            let joined = tape.hconcat(&[eu_b, social_u]);
            let fused = f.forward(tape, joined);
            tape.gather_rows(fused, &slot)
        }
        None if cfg.predict_with_social => {
            let u = tape.gather_rows(eu, &noise.batch.users);
            let s = tape.gather_rows(social_u, &slot);
            tape.add(u, s)
        }
        None => tape.gather_rows(eu, &noise.batch.users),
    };
    let pos_items = tape.gather_rows(ei, &noise.batch.pos);
    let neg_items = tape.gather_rows(ei, &noise.batch.neg);
    let pos = tape.row_dot(users, pos_items);
    let neg = tape.row_dot(users, neg_items);
    let l_bpr = bpr_tape(tape, pos, neg);

    let mut terms = vec![(l_bpr, cfg.weights.lambda1)];
    terms.extend(l_diff.map(|l| (l, 1.0)));
    terms.extend(l_cl.map(|l| (l, cfg.weights.lambda2)));
    let joint = tape.lincomb(&terms);
    LossVars {
        l_diff,
        l_bpr,
        l_cl,
        joint,
    }
}
