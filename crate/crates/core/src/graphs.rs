//! Social/bipartite adjacency construction, symmetric normalization and the
//! two-stage curriculum sparsifier.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tensor::{dot, Matrix};

/// Binary, symmetric, zero-diagonal adjacency from (possibly directed,
/// possibly duplicated) user pairs. Self-loops are ignored.
pub fn build_social_adjacency(edges: &[(usize, usize)], n_users: usize) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        for x in [a, b] {
            if x >= n_users {
                return Err(Error::IndexOutOfRange {
                    index: x,
                    bound: n_users,
                });
            }
        }
        if a != b {
            trip.push((a, b, 1.0));
            trip.push((b, a, 1.0));
        }
    }
    SparseMatrix::from_triplets(n_users, n_users, trip)
}

/// Binary `n x m` interaction matrix.
pub fn interaction_matrix(pairs: &[(usize, usize)], n: usize, m: usize) -> Result<SparseMatrix> {
    SparseMatrix::from_triplets(n, m, pairs.iter().map(|&(u, i)| (u, i, 1.0)).collect())
}

/// `D^{-1/2} S D^{-1/2}`; zero-degree rows and columns stay zero.
pub fn sym_normalize(s: &SparseMatrix) -> SparseMatrix {
    let deg = s.row_sums();
    let inv: Vec<f64> = deg
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let values = s.iter().map(|(r, c, v)| v * inv[r] * inv[c]).collect();
    s.with_values(values)
}

/// Normalized `(n+m) x (n+m)` block matrix `[[0, R], [Rᵀ, 0]]`.
pub fn build_bipartite_adjacency(r: &SparseMatrix) -> Result<SparseMatrix> {
    let n = r.n_rows();
    let dim = n + r.n_cols();
    let mut trip = Vec::with_capacity(2 * r.nnz());
    for (u, i, v) in r.iter() {
        trip.push((u, n + i, v));
        trip.push((n + i, u, v));
    }
    Ok(sym_normalize(&SparseMatrix::from_triplets(dim, dim, trip)?))
}

fn binary_from_upper(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> SparseMatrix {
    let trip = pairs
        .into_iter()
        .flat_map(|(a, b)| [(a, b, 1.0), (b, a, 1.0)])
        .collect();
    SparseMatrix::from_triplets(n, n, trip).expect("pairs come from a valid n x n matrix")
}

/// `ceil(frac * count)` with slack for values such as `0.3 * 10`.
fn ceil_fraction(frac: f64, count: usize) -> usize {
    ((frac * count as f64) - 1e-9).ceil().max(0.0) as usize
}

/// How the top-k stage counts retained relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TopKScope {
    /// `max(1, ceil(rho * d_u))` neighbors per user, union-symmetrized.
    #[default]
    PerUser,
    /// `ceil(rho * |E|)` most similar undirected edges overall.
    Global,
}

/// Keeps the most similar social neighbors by collaborative inner product.
/// Ties prefer the smaller neighbor index. The result is binary; callers
/// normalize.
pub fn sparsify_topk(
    s: &SparseMatrix,
    collab_users: &Matrix,
    rho: f64,
    scope: TopKScope,
) -> Result<SparseMatrix> {
    check_fraction("rho", rho)?;
    if collab_users.rows() != s.n_rows() {
        return Err(Error::Shape(format!(
            "{} collaborative rows for {} users",
            collab_users.rows(),
            s.n_rows()
        )));
    }
    let sim = |a: usize, b: usize| dot(collab_users.row(a), collab_users.row(b));
    let n = s.n_rows();
    let kept: Vec<(usize, usize)> = match scope {
        TopKScope::PerUser => {
            let mut kept = Vec::new();
            for u in 0..n {
                let picks = topk_neighbors(s, collab_users, rho, u);
                kept.extend(picks.into_iter().map(|v| (u.min(v), u.max(v))));
            }
            kept
        }
        TopKScope::Global => {
            let mut ranked: Vec<(f64, (usize, usize))> = s
                .upper_edges()
                .into_iter()
                .map(|(a, b)| (sim(a, b), (a, b)))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let k = ceil_fraction(rho, ranked.len());
            ranked[..k].iter().map(|&(_, e)| e).collect()
        }
    };
    Ok(binary_from_upper(n, kept))
}

/// The `max(1, ceil(rho * d_u))` neighbors of `u` with the highest inner
/// product, best first.
pub fn topk_neighbors(s: &SparseMatrix, collab_users: &Matrix, rho: f64, u: usize) -> Vec<usize> {
    let (nbrs, _) = s.row(u);
    if nbrs.is_empty() {
        return Vec::new();
    }
    let k = ceil_fraction(rho, nbrs.len()).max(1);
    let mut ranked: Vec<(f64, usize)> = nbrs
        .iter()
        .map(|&v| (dot(collab_users.row(u), collab_users.row(v)), v))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(k);
    ranked.into_iter().map(|(_, v)| v).collect()
}

/// Uniformly keeps `ceil(rho_hat * |E|)` undirected edges.
pub fn sparsify_random(s: &SparseMatrix, rho_hat: f64, seed: u64) -> Result<SparseMatrix> {
    check_fraction("rho_hat", rho_hat)?;
    let edges = s.upper_edges();
    let k = ceil_fraction(rho_hat, edges.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, edges.len(), k).into_vec();
    picked.sort_unstable();
    Ok(binary_from_upper(
        s.n_rows(),
        picked.into_iter().map(|k| edges[k]),
    ))
}

/// Keeps each undirected pair with probability `1 - rate`.
pub fn drop_pairs<R: Rng + ?Sized>(pairs: &[(usize, usize)], rate: f64, rng: &mut R) -> Vec<(usize, usize)> {
    pairs
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() >= rate)
        .collect()
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} must lie in (0, 1]")))
    }
}

/// Which sparsifier produced the active matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TopK,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumParams {
    /// Epochs of the top-k stage per period.
    pub topk_epochs: usize,
    /// Epochs of the random stage per period.
    pub random_epochs: usize,
    pub rho: f64,
    pub rho_hat: f64,
    pub seed: u64,
    pub scope: TopKScope,
}

impl Default for CurriculumParams {
    fn default() -> Self {
        Self {
            topk_epochs: 3,
            random_epochs: 2,
            rho: 0.8,
            rho_hat: 0.8,
            seed: 0,
            scope: TopKScope::PerUser,
        }
    }
}

impl CurriculumParams {
    pub fn validate(&self) -> Result<()> {
        if self.topk_epochs == 0 || self.random_epochs == 0 {
            return Err(Error::InvalidArgument(
                "curriculum stage lengths must be at least one epoch".into(),
            ));
        }
        check_fraction("rho", self.rho)?;
        check_fraction("rho_hat", self.rho_hat)
    }

    /// Refresh due at `epoch`, if any. The top-k refresh owns offset 0 of
    /// every `N + M` period; the random refresh fires at offset `N`.
    pub fn refresh_at(&self, epoch: usize) -> Option<Stage> {
        let period = self.topk_epochs + self.random_epochs;
        match epoch % period {
            0 => Some(Stage::TopK),
            r if r == self.topk_epochs => Some(Stage::Random),
            _ => None,
        }
    }
}

/// Curriculum state: schedule parameters plus the active normalized
/// social matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub params: CurriculumParams,
    pub stage: Option<Stage>,
    /// Normalized sparsified adjacency in use.
    pub active: SparseMatrix,
    /// Binary sparsified edge set behind `active`.
    pub edges: SparseMatrix,
}

impl CurriculumState {
    /// Before the first refresh the full graph is active.
    pub fn new(params: CurriculumParams, s: &SparseMatrix) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            stage: None,
            active: sym_normalize(s),
            edges: s.clone(),
        })
    }

    /// The state after the epoch-boundary refresh (if one is due).
    pub fn step(
        &self,
        epoch: usize,
        collab_users: &Matrix,
        s: &SparseMatrix,
    ) -> Result<(CurriculumState, Option<Stage>)> {
        let event = self.params.refresh_at(epoch);
        let edges = match event {
            None => return Ok((self.clone(), None)),
            Some(Stage::TopK) => sparsify_topk(s, collab_users, self.params.rho, self.params.scope)?,
            Some(Stage::Random) => {
                // stream keyed by epoch
                let seed = self.params.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                sparsify_random(s, self.params.rho_hat, seed)?
            }
        };
        Ok((
            CurriculumState {
                params: self.params,
                stage: event,
                active: sym_normalize(&edges),
                edges,
            },
            event,
        ))
    }
}
