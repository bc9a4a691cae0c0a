//! Browser bindings: SDE kernel curves, reverse-time sampling of a
//! Gaussian, and the sparsification curriculum on a random social graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use socdiff::graphs::{build_social_adjacency, CurriculumParams, CurriculumState, Stage, TopKScope};
use socdiff::sgm::{
    normal_vec, pc_sample_rows, row_stream, GaussianMarginalScore, SdeKind, SdeSpec, StepNorm,
};
use socdiff::{Matrix, SparseMatrix};

fn js_err(e: socdiff::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn spec_for(kind: &str) -> Result<SdeSpec, JsError> {
    Ok(match SdeKind::parse(kind).map_err(js_err)? {
        SdeKind::Vp => SdeSpec::vp(0.1, 20.0),
        SdeKind::Ve => SdeSpec::ve(0.01, 5.0),
    })
}

/// `[t, mean_coef, variance]` triples at `points` evenly spaced times in `[0, 1]`.
#[wasm_bindgen]
pub fn kernel_curves(kind: &str, points: usize) -> Result<Vec<f64>, JsError> {
    let spec = spec_for(kind)?;
    let points = points.max(2);
    let mut out = Vec::with_capacity(3 * points);
    for k in 0..points {
        let t = k as f64 / (points - 1) as f64;
        let m = spec.kernel_moments(t);
        out.extend([t, m.mean_coef, m.variance]);
    }
    Ok(out)
}

/// Samples `n` scalars with the exact score of unit-Gaussian data.
/// Returns `[mean, variance, count_0 .. count_{bins-1}]` with bins over `[-4, 4]`.
#[wasm_bindgen]
pub fn sample_gaussian(
    kind: &str,
    steps: usize,
    corrector_steps: usize,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    let spec = SdeSpec {
        step_norm: StepNorm::Batch,
        ..spec_for(kind)?.with_steps(steps, corrector_steps)
    };
    spec.validate().map_err(js_err)?;
    let n = n.max(2);
    let model = GaussianMarginalScore { spec, data_var: 1.0 };
    let sd = model.marginal_variance(1.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = normal_vec(&mut rng, n).into_iter().map(|z| sd * z).collect();
    let x = Matrix::from_vec(n, 1, start).map_err(js_err)?;
    let c = Matrix::zeros(n, 1);
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64)
        .map(|r| row_stream(seed.wrapping_add(1), r))
        .collect();
    let out = pc_sample_rows(&model, &spec, &c, &x, 1.0, &mut rngs).map_err(js_err)?;
    let v = out.data();
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let bins = bins.max(1);
    let mut result = vec![0.0; 2 + bins];
    result[0] = mean;
    result[1] = var;
    for &a in v {
        let b = ((a + 4.0) / 8.0 * bins as f64).floor();
        if (0.0..bins as f64).contains(&b) {
            result[2 + b as usize] += 1.0;
        }
    }
    Ok(result)
}

/// Curriculum over a random clustered social graph with random
/// collaborative embeddings.
#[wasm_bindgen]
pub struct Curriculum {
    social: SparseMatrix,
    collab: Matrix,
    state: CurriculumState,
    epoch: usize,
}

#[wasm_bindgen]
impl Curriculum {
    #[wasm_bindgen(constructor)]
    pub fn new(n_users: usize, rho: f64, rho_hat: f64, seed: u64) -> Result<Curriculum, JsError> {
        let n = n_users.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clusters = 3;
        let mut edges = Vec::new();
        for u in 0..n {
            for _ in 0..2 {
                let v = if rng.random_bool(0.7) {
                    // same cluster
                    let c = u % clusters;
                    c + clusters * rng.random_range(0..n.div_ceil(clusters))
                } else {
                    rng.random_range(0..n)
                };
                if v < n && v != u {
                    edges.push((u, v));
                }
            }
        }
        let social = build_social_adjacency(&edges, n).map_err(js_err)?;
        // embeddings aligned with the clusters plus noise
        let mut collab = Matrix::zeros(n, clusters);
        for u in 0..n {
            for (k, e) in collab.row_mut(u).iter_mut().enumerate() {
                *e = if k == u % clusters { 1.0 } else { 0.0 } + 0.5 * normal_vec(&mut rng, 1)[0];
            }
        }
        let params = CurriculumParams {
            rho,
            rho_hat,
            seed,
            scope: TopKScope::PerUser,
            ..CurriculumParams::default()
        };
        let state = CurriculumState::new(params, &social).map_err(js_err)?;
        Ok(Curriculum {
            social,
            collab,
            state,
            epoch: 0,
        })
    }

    /// Advances one epoch; returns the refresh that fired (`"topk"`,
    /// `"random"` or `""`).
    pub fn step(&mut self) -> Result<String, JsError> {
        let (next, event) = self
            .state
            .step(self.epoch, &self.collab, &self.social)
            .map_err(js_err)?;
        self.state = next;
        self.epoch += 1;
        Ok(match event {
            Some(Stage::TopK) => "topk",
            Some(Stage::Random) => "random",
            None => "",
        }
        .to_owned())
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn n_users(&self) -> usize {
        self.social.n_rows()
    }

    /// Cluster of each user, for colouring.
    pub fn cluster(&self, u: usize) -> usize {
        u % 3
    }

    /// Full edge list as flat `(a, b)` pairs with `a < b`.
    pub fn full_edges(&self) -> Vec<u32> {
        flat(&self.social)
    }

    /// Edges of the active sparsified graph.
    pub fn active_edges(&self) -> Vec<u32> {
        flat(&self.state.edges)
    }
}

fn flat(s: &SparseMatrix) -> Vec<u32> {
    s.upper_edges()
        .into_iter()
        .flat_map(|(a, b)| [a as u32, b as u32])
        .collect()
}
