//! Trainable state and inference-time embeddings.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::config::TrainConfig;
use crate::dataset::SplitDataset;
use crate::encoders::{collab_encode, social_encode, Activation, GcnParameters};
use crate::error::{Error, Result};
use crate::graphs::{build_bipartite_adjacency, build_social_adjacency, interaction_matrix, sym_normalize};
use crate::nn::{Mlp, MlpVars};
use crate::objectives::{HeadVars, ProjectionHeads};
use crate::sgm::{denoise_social, ScoreNetVars, ScoreNetwork};
use crate::sparse::SparseMatrix;
use crate::tensor::Matrix;

const INIT_SALT: u64 = 0x5EED_0F1A_17CA_FE01;
const EVAL_SALT: u64 = 0xE7A1_DE00_15ED_0002;

/// Fixed graph inputs derived from a split.
#[derive(Debug, Clone, PartialEq)]
pub struct Graphs {
    pub n_users: usize,
    pub m_items: usize,
    /// Binary symmetric trust matrix.
    pub social: SparseMatrix,
    pub social_norm: SparseMatrix,
    /// Binary train interactions.
    pub interactions: SparseMatrix,
    /// Normalized `(n+m) x (n+m)` bipartite adjacency.
    pub bipartite: SparseMatrix,
    pub train_items: Vec<BTreeSet<usize>>,
}

impl Graphs {
    pub fn build(data: &SplitDataset) -> Result<Self> {
        let social = build_social_adjacency(&data.social, data.n_users)?;
        let interactions = interaction_matrix(&data.train, data.n_users, data.m_items)?;
        Ok(Self {
            n_users: data.n_users,
            m_items: data.m_items,
            social_norm: sym_normalize(&social),
            bipartite: build_bipartite_adjacency(&interactions)?,
            social,
            interactions,
            train_items: SplitDataset::items_by_user(&data.train, data.n_users),
        })
    }
}

/// All trainable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Social user embeddings `P_S`.
    pub user_social: Matrix,
    /// Collaborative user embeddings `P_R`.
    pub user_collab: Matrix,
    /// Item embeddings `Q`.
    pub items: Matrix,
    pub gcn: GcnParameters,
    pub score: ScoreNetwork,
    pub heads: ProjectionHeads,
    /// User-view fusion, present only without the contrastive loss.
    pub fusion: Option<Mlp>,
}

/// Tape handles in [`Model::named_params`] order.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub user_social: Var,
    pub user_collab: Var,
    pub items: Var,
    pub gcn: Vec<Var>,
    pub score: ScoreNetVars,
    pub heads: HeadVars,
    pub fusion: Option<MlpVars>,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.user_social, self.user_collab, self.items];
        v.extend(&self.gcn);
        v.extend(self.score.mlp.vars());
        v.extend(self.heads.social.vars());
        v.extend(self.heads.collab.vars());
        if let Some(f) = &self.fusion {
            v.extend(f.vars());
        }
        v
    }
}

fn mlp_names(prefix: &str, mlp: &Mlp) -> Vec<String> {
    (0..mlp.layers.len())
        .flat_map(|k| [format!("{prefix}.{k}.weight"), format!("{prefix}.{k}.bias")])
        .collect()
}

impl Model {
    /// Initialization draws from its own stream keyed by `cfg.seed`.
    pub fn init(cfg: &TrainConfig, n_users: usize, m_items: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SALT);
        let d = cfg.dim;
        Self {
            user_social: Matrix::glorot_uniform(n_users, d, &mut rng),
            user_collab: Matrix::glorot_uniform(n_users, d, &mut rng),
            items: Matrix::glorot_uniform(m_items, d, &mut rng),
            gcn: GcnParameters::init(d, cfg.layers, Activation::LeakyRelu(cfg.social_slope), &mut rng),
            score: ScoreNetwork::init(cfg.sde, d, cfg.time_embed_dim, &cfg.score_hidden, &mut rng),
            heads: ProjectionHeads::init(d, &mut rng),
            fusion: cfg
                .ablations
                .no_ssl
                .then(|| Mlp::init(&[2 * d, d, d], Activation::LeakyRelu(0.01), &mut rng)),
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_collab.rows()
    }

    pub fn m_items(&self) -> usize {
        self.items.rows()
    }

    pub fn dim(&self) -> usize {
        self.items.cols()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["user_social".to_owned(), "user_collab".into(), "items".into()];
        names.extend((0..self.gcn.weights.len()).map(|l| format!("gcn.{l}.weight")));
        names.extend(mlp_names("score", &self.score.mlp));
        names.extend(mlp_names("head.social", &self.heads.social));
        names.extend(mlp_names("head.collab", &self.heads.collab));
        if let Some(f) = &self.fusion {
            names.extend(mlp_names("fusion", f));
        }
        names
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.user_social, &self.user_collab, &self.items];
        v.extend(&self.gcn.weights);
        v.extend(self.score.mlp.params());
        v.extend(self.heads.social.params());
        v.extend(self.heads.collab.params());
        if let Some(f) = &self.fusion {
            v.extend(f.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![&mut self.user_social, &mut self.user_collab, &mut self.items];
        v.extend(self.gcn.weights.iter_mut());
        v.extend(self.score.mlp.params_mut());
        v.extend(self.heads.social.params_mut());
        v.extend(self.heads.collab.params_mut());
        if let Some(f) = &mut self.fusion {
            v.extend(f.params_mut());
        }
        v
    }

    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        self.param_names().into_iter().zip(self.params()).collect()
    }

    /// Replaces every array; shapes must match.
    pub fn set_params(&mut self, values: Vec<Matrix>) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} arrays for {} parameters",
                values.len(),
                slots.len()
            )));
        }
        if let Some((k, _)) = slots
            .iter()
            .zip(&values)
            .enumerate()
            .find(|(_, (s, v))| s.shape() != v.shape())
        {
            return Err(Error::Shape(format!(
                "parameter {k}: {:?} vs {:?}",
                slots[k].shape(),
                values[k].shape()
            )));
        }
        for (s, v) in slots.iter_mut().zip(values) {
            **s = v;
        }
        Ok(())
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            user_social: tape.param(self.user_social.clone()),
            user_collab: tape.param(self.user_collab.clone()),
            items: tape.param(self.items.clone()),
            gcn: self.gcn.weights.iter().map(|w| tape.param(w.clone())).collect(),
            score: self.score.register(tape),
            heads: self.heads.register(tape),
            fusion: self.fusion.as_ref().map(|f| f.register(tape)),
        }
    }

    /// Denoised social embeddings of every user (raw encoder output under
    /// `no_sgm`).
    pub fn social_view(&self, graphs: &Graphs, cfg: &TrainConfig, seed: u64) -> Result<Matrix> {
        let es = social_encode(&self.user_social, &graphs.social_norm, &self.gcn)?;
        if cfg.ablations.no_sgm {
            return Ok(es);
        }
        let (eu, _) = collab_encode(&self.user_collab, &self.items, &graphs.bipartite, cfg.layers)?;
        denoise_social(&es, &eu, &self.score, &cfg.sde, cfg.t_start, seed)
    }

    /// Final `(users, items)` used for ranking.
    pub fn embeddings(&self, graphs: &Graphs, cfg: &TrainConfig) -> Result<(Matrix, Matrix)> {
        if self.n_users() != graphs.n_users || self.m_items() != graphs.m_items {
            return Err(Error::Incompatible(format!(
                "model has {} users / {} items, dataset {} / {}",
                self.n_users(),
                self.m_items(),
                graphs.n_users,
                graphs.m_items
            )));
        }
        let (eu, ei) = collab_encode(&self.user_collab, &self.items, &graphs.bipartite, cfg.layers)?;
        if !(cfg.predict_with_social || self.fusion.is_some()) {
            return Ok((eu, ei));
        }
        let es = self.social_view(graphs, cfg, cfg.seed ^ EVAL_SALT)?;
        let users = match &self.fusion {
            Some(f) => f.forward(&Matrix::hconcat(&[&eu, &es])?)?,
            None => {
                let mut u = eu;
                u.add_assign(&es);
                u
            }
        };
        Ok((users, ei))
    }
}
