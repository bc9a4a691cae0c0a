//! Score-based generative core.
//!
//! Forward SDEs (variance exploding and variance preserving), their
//! closed-form Gaussian transition kernels, a conditional time-aware score
//! network, the denoising score-matching loss and the Predictor-Corrector
//! sampler used to denoise social embeddings.
//!
//! Time is continuous on `[0, 1]`. The VP noise rate is linear,
//! `β(t) = β_min + t (β_max − β_min)`; the VE noise scale is geometric,
//! `σ(t) = σ_min (σ_max / σ_min)^t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpVars};
use crate::tensor::{norm, Matrix};

/// Smallest diffusion time drawn during training.
pub const T_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdeKind {
    Ve,
    Vp,
}

impl SdeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SdeKind::Ve => "ve",
            SdeKind::Vp => "vp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ve" => Ok(SdeKind::Ve),
            "vp" => Ok(SdeKind::Vp),
            other => Err(Error::Config(format!("unknown SDE kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeSpec {
    pub kind: SdeKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Predictor steps `M`.
    pub steps: usize,
    /// Langevin corrector steps per predictor step.
    pub corrector_steps: usize,
    /// Target signal-to-noise ratio of the Langevin step size.
    pub snr: f64,
    pub step_norm: StepNorm,
}

/// Which norms set the Langevin step size `2 (snr ‖z‖ / ‖s‖)²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepNorm {
    /// Each row uses its own norms, so rows stay independent.
    #[default]
    Row,
    /// Norms averaged over all rows; one step size for the batch.
    Batch,
}

/// Mean coefficient and variance of `p_t(x_t | x_0) = N(mean_coef · x_0, variance · I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelMoments {
    pub mean_coef: f64,
    pub variance: f64,
}

impl Default for SdeSpec {
    fn default() -> Self {
        Self::vp(0.1, 20.0)
    }
}

impl SdeSpec {
    pub fn vp(beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: SdeKind::Vp,
            sigma_min: 0.01,
            sigma_max: 5.0,
            beta_min,
            beta_max,
            steps: 5,
            corrector_steps: 1,
            snr: 0.16,
            step_norm: StepNorm::Row,
        }
    }

    pub fn ve(sigma_min: f64, sigma_max: f64) -> Self {
        Self {
            kind: SdeKind::Ve,
            sigma_min,
            sigma_max,
            ..Self::vp(0.1, 20.0)
        }
    }

    pub fn with_steps(mut self, steps: usize, corrector_steps: usize) -> Self {
        self.steps = steps;
        self.corrector_steps = corrector_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        match self.kind {
            SdeKind::Ve if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) => {
                bad("VE needs 0 < sigma_min < sigma_max")
            }
            SdeKind::Vp if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) => {
                bad("VP needs 0 < beta_min < beta_max")
            }
            _ if self.steps == 0 => bad("at least one diffusion step is required"),
            _ if self.snr <= 0.0 => bad("snr must be positive"),
            _ => Ok(()),
        }
    }

    fn check_time(t: f64) -> Result<()> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "diffusion time {t} outside [0, 1]"
            )))
        }
    }

    /// `β(t)` for VP, `σ(t)` for VE.
    pub fn schedule(&self, t: f64) -> Result<f64> {
        Self::check_time(t)?;
        Ok(match self.kind {
            SdeKind::Vp => self.beta(t),
            SdeKind::Ve => self.sigma(t),
        })
    }

    fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    fn sigma(&self, t: f64) -> f64 {
        self.sigma_min * (self.sigma_max / self.sigma_min).powf(t)
    }

    /// `∫₀ᵗ β(s) ds` (VP only).
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * t * t * (self.beta_max - self.beta_min)
    }

    pub fn kernel_moments(&self, t: f64) -> KernelMoments {
        match self.kind {
            SdeKind::Vp => {
                let b = self.integrated_beta(t);
                KernelMoments {
                    mean_coef: (-0.5 * b).exp(),
                    variance: -(-b).exp_m1(),
                }
            }
            SdeKind::Ve => {
                let s = self.sigma(t);
                KernelMoments {
                    mean_coef: 1.0,
                    variance: s * s - self.sigma_min * self.sigma_min,
                }
            }
        }
    }

    /// Drift `f(x, t)` of the forward SDE for a scalar coordinate.
    pub fn drift(&self, x: f64, t: f64) -> f64 {
        match self.kind {
            SdeKind::Vp => -0.5 * self.beta(t) * x,
            SdeKind::Ve => 0.0,
        }
    }

    /// Diffusion coefficient `g(t)`.
    pub fn diffusion(&self, t: f64) -> f64 {
        match self.kind {
            SdeKind::Vp => self.beta(t).sqrt(),
            SdeKind::Ve => self.sigma(t) * (2.0 * (self.sigma_max / self.sigma_min).ln()).sqrt(),
        }
    }

    /// `x_t = mean_coef · x_0 + sqrt(variance) · z`.
    pub fn perturb(&self, x0: &[f64], t: f64, z: &[f64]) -> Vec<f64> {
        let k = self.kernel_moments(t);
        let sd = k.variance.sqrt();
        x0.iter().zip(z).map(|(x, z)| k.mean_coef * x + sd * z).collect()
    }

    /// `∇ log p_t(x_t | x_0) = −(x_t − mean_coef · x_0) / variance`.
    pub fn score_target(&self, x_t: &[f64], x0: &[f64], t: f64) -> Result<Vec<f64>> {
        let k = self.kernel_moments(t);
        if k.variance <= 0.0 {
            return Err(Error::DegenerateKernel(t));
        }
        Ok(x_t
            .iter()
            .zip(x0)
            .map(|(xt, x0)| -(xt - k.mean_coef * x0) / k.variance)
            .collect())
    }

    /// Grid times `τ_k = t_start · k / M`, `k = 0..=M`.
    fn grid(&self, t_start: f64) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| t_start * k as f64 / self.steps as f64)
            .collect()
    }

    /// Predictor coefficients moving from `τ_{i+1}` to `τ_i`: returns
    /// `(x coefficient, score coefficient, noise scale)`.
    ///
    /// VE: `x + (σ²_{i+1} − σ²_i) s + sqrt(σ²_{i+1} − σ²_i) z`.
    /// VP: `(2 − sqrt(1 − β_{i+1})) x + β_{i+1} s + sqrt(β_{i+1}) z` with the
    /// per-step rate `β_{i+1} = 1 − exp(−∫_{τ_i}^{τ_{i+1}} β)`, which stays in
    /// `(0, 1)` for any step count.
    fn predictor_coefs(&self, t_hi: f64, t_lo: f64) -> (f64, f64, f64) {
        match self.kind {
            SdeKind::Ve => {
                let d = self.sigma(t_hi).powi(2) - self.sigma(t_lo).powi(2);
                (1.0, d, d.sqrt())
            }
            SdeKind::Vp => {
                let b = -(-(self.integrated_beta(t_hi) - self.integrated_beta(t_lo))).exp_m1();
                (2.0 - (1.0 - b).sqrt(), b, b.sqrt())
            }
        }
    }
}

/// Sinusoidal embedding of a diffusion time: `dim / 2` sine/cosine pairs at
/// geometrically spaced frequencies.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let angle = 1000.0 * t * freq;
        out[k] = angle.sin();
        out[half + k] = angle.cos();
    }
    out
}

fn time_embeddings(ts: &[f64], dim: usize) -> Matrix {
    let data = ts.iter().flat_map(|&t| time_embedding(t, dim)).collect();
    Matrix::from_vec(ts.len(), dim, data).expect("embedding block")
}

/// Anything that can estimate `∇ log p_t(x | c)` for a batch of rows.
pub trait ScoreModel {
    /// Row `r` of the result is the score of `x` row `r` at time `t[r]`
    /// under condition `c` row `r`.
    fn score(&self, x: &Matrix, t: &[f64], c: &Matrix) -> Result<Matrix>;
}

/// Conditional time-aware score estimator. A perceptron `ε` over
/// `[x_t / σ_t ∥ time-embedding(t) ∥ c]` predicts a noise residual and the
/// score is `−x_t / v_t − ε / σ_t`, where `σ_t² = var(t)` and
/// `v_t = mean_coef(t)² + σ_t²`. The first term is the exact score of
/// unit-variance Gaussian data, so `ε = 0` recovers it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    pub dim: usize,
    pub time_embed_dim: usize,
    pub sde: SdeSpec,
    pub mlp: Mlp,
}

/// `(1 / σ_t, 1 / v_t)` per row.
fn precondition(sde: &SdeSpec, t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    t.iter()
        .map(|&t| {
            SdeSpec::check_time(t)?;
            let k = sde.kernel_moments(t);
            if k.variance > 0.0 {
                Ok((
                    1.0 / k.variance.sqrt(),
                    1.0 / (k.mean_coef * k.mean_coef + k.variance),
                ))
            } else {
                Err(Error::DegenerateKernel(t))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

impl ScoreNetwork {
    pub fn init<R: Rng + ?Sized>(
        sde: SdeSpec,
        dim: usize,
        time_embed_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![2 * dim + time_embed_dim];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Self {
            dim,
            time_embed_dim,
            sde,
            mlp: Mlp::init(&widths, Activation::Silu, rng),
        }
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.mlp.layers[..self.mlp.layers.len() - 1]
            .iter()
            .map(|l| l.weight.cols())
            .collect()
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x_t: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, x_t.len(), x_t.to_vec())?;
        let c = Matrix::from_vec(1, c.len(), c.to_vec())?;
        Ok(self.score(&x, &[t], &c)?.into_vec())
    }

    pub fn register(&self, tape: &mut Tape) -> ScoreNetVars {
        ScoreNetVars {
            dim: self.dim,
            time_embed_dim: self.time_embed_dim,
            sde: self.sde,
            mlp: self.mlp.register(tape),
        }
    }
}

impl ScoreModel for ScoreNetwork {
    fn score(&self, x: &Matrix, t: &[f64], c: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim || c.cols() != self.dim || x.rows() != c.rows() || t.len() != x.rows() {
            return Err(Error::Shape(format!(
                "score network of width {} got x {:?}, c {:?}, {} times",
                self.dim,
                x.shape(),
                c.shape(),
                t.len()
            )));
        }
        let (inv, skip) = precondition(&self.sde, t)?;
        let mut xs = x.clone();
        for (r, &k) in inv.iter().enumerate() {
            xs.row_mut(r).iter_mut().for_each(|v| *v *= k);
        }
        let te = time_embeddings(t, self.time_embed_dim);
        let mut out = self.mlp.forward(&Matrix::hconcat(&[&xs, &te, c])?)?;
        for r in 0..out.rows() {
            let (k, w) = (inv[r], skip[r]);
            for (o, xv) in out.row_mut(r).iter_mut().zip(x.row(r)) {
                *o = -*xv * w - *o * k;
            }
        }
        Ok(out)
    }
}

/// Tape handles of a [`ScoreNetwork`].
#[derive(Debug, Clone)]
pub struct ScoreNetVars {
    pub dim: usize,
    pub time_embed_dim: usize,
    pub sde: SdeSpec,
    pub mlp: MlpVars,
}

impl ScoreNetVars {
    /// `c` is a constant condition block: no adjoint flows into it. Times
    /// must have positive kernel variance.
    pub fn forward(&self, tape: &mut Tape, x: Var, t: &[f64], c: &Matrix) -> Var {
        let (inv, skip) = precondition(&self.sde, t).expect("score times have positive variance");
        let neg: Vec<f64> = inv.iter().map(|k| -k).collect();
        let neg_skip: Vec<f64> = skip.iter().map(|w| -w).collect();
        let xs = tape.scale_rows(x, inv);
        let te = tape.constant(time_embeddings(t, self.time_embed_dim));
        let cv = tape.constant(c.clone());
        let input = tape.hconcat(&[xs, te, cv]);
        let eps = self.mlp.forward(tape, input);
        let resid = tape.scale_rows(eps, neg);
        let base = tape.scale_rows(x, neg_skip);
        tape.add(base, resid)
    }
}

/// Exact score of the marginal `p_t` when data are `N(0, data_var · I)`,
/// independent of the condition.
#[derive(Debug, Clone, Copy)]
pub struct GaussianMarginalScore {
    pub spec: SdeSpec,
    pub data_var: f64,
}

impl GaussianMarginalScore {
    pub fn marginal_variance(&self, t: f64) -> f64 {
        let k = self.spec.kernel_moments(t);
        k.mean_coef * k.mean_coef * self.data_var + k.variance
    }
}

impl ScoreModel for GaussianMarginalScore {
    fn score(&self, x: &Matrix, t: &[f64], _c: &Matrix) -> Result<Matrix> {
        let mut out = x.clone();
        for (r, &tr) in t.iter().enumerate() {
            let v = self.marginal_variance(tr);
            out.row_mut(r).iter_mut().for_each(|e| *e = -*e / v);
        }
        Ok(out)
    }
}

/// Independent standard-normal stream per row.
pub fn row_stream(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn normal_block<R: Rng>(rngs: &mut [R], dim: usize) -> Matrix {
    let data = rngs.iter_mut().flat_map(|r| normal_vec(r, dim)).collect();
    Matrix::from_vec(rngs.len(), dim, data).expect("noise block")
}

/// Denoising score-matching loss for one draw of `t` and `z` per row:
/// `mean_r ‖s(x_t, t, c) − ∇ log p_t(x_t | x_0)‖²` with `λ(t) = 1`.
pub fn diffusion_loss<S: ScoreModel, R: Rng + ?Sized>(
    model: &S,
    x0: &Matrix,
    c: &Matrix,
    spec: &SdeSpec,
    rng: &mut R,
) -> Result<f64> {
    let draw = DiffusionDraw::sample(x0.rows(), x0.cols(), rng);
    let (x_t, target) = draw.perturbed(spec, x0);
    let s = model.score(&x_t, &draw.t, c)?;
    let total: f64 = s
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(total / x0.rows().max(1) as f64)
}

/// Times and noise of one diffusion-loss evaluation.
#[derive(Debug, Clone)]
pub struct DiffusionDraw {
    pub t: Vec<f64>,
    pub z: Matrix,
}

impl DiffusionDraw {
    /// `t ~ U[T_EPS, 1]`, `z ~ N(0, I)`, drawn row by row.
    pub fn sample<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Self {
        let mut t = Vec::with_capacity(rows);
        let mut z = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            t.push(rng.random_range(T_EPS..=1.0));
            z.extend(normal_vec(rng, dim));
        }
        Self {
            t,
            z: Matrix::from_vec(rows, dim, z).expect("noise block"),
        }
    }

    /// `(x_t, score target)` for clean rows `x0`.
    pub fn perturbed(&self, spec: &SdeSpec, x0: &Matrix) -> (Matrix, Matrix) {
        let mut x_t = Matrix::zeros(x0.rows(), x0.cols());
        let mut target = Matrix::zeros(x0.rows(), x0.cols());
        for r in 0..x0.rows() {
            let row = spec.perturb(x0.row(r), self.t[r], self.z.row(r));
            let tg = spec
                .score_target(&row, x0.row(r), self.t[r])
                .expect("t >= T_EPS has positive variance");
            x_t.row_mut(r).copy_from_slice(&row);
            target.row_mut(r).copy_from_slice(&tg);
        }
        (x_t, target)
    }

    /// Tape version of the loss; gradients reach `x0` and the network but
    /// never the condition.
    pub fn loss_tape(&self, tape: &mut Tape, net: &ScoreNetVars, spec: &SdeSpec, x0: Var, c: &Matrix) -> Var {
        let (coef, sd): (Vec<f64>, Vec<f64>) = self
            .t
            .iter()
            .map(|&t| {
                let k = spec.kernel_moments(t);
                (k.mean_coef, k.variance.sqrt())
            })
            .unzip();
        let noise = {
            let mut m = self.z.clone();
            for (r, &s) in sd.iter().enumerate() {
                m.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            tape.constant(m)
        };
        let scaled = tape.scale_rows(x0, coef);
        let x_t = tape.add(scaled, noise);
        let s = net.forward(tape, x_t, &self.t, c);
        // target = −(x_t − m x0) / var = −z / sd, independent of x0
        let neg_target = {
            let mut m = self.z.clone();
            for (r, &s) in sd.iter().enumerate() {
                m.row_mut(r).iter_mut().for_each(|v| *v /= s);
            }
            tape.constant(m)
        };
        let resid = tape.add(s, neg_target);
        tape.mean_sq_row_norm(resid)
    }
}

pub use crate::autodiff::langevin_eps as langevin_step_size;

/// Predictor-Corrector sampling of one vector from `t_start` down to 0.
pub fn pc_sample<S: ScoreModel, R: Rng>(
    model: &S,
    spec: &SdeSpec,
    c: &[f64],
    x_start: &[f64],
    t_start: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x = Matrix::from_vec(1, x_start.len(), x_start.to_vec())?;
    let c = Matrix::from_vec(1, c.len(), c.to_vec())?;
    let mut rngs = [rng];
    Ok(pc_sample_rows(model, spec, &c, &x, t_start, &mut rngs)?.into_vec())
}

/// Row-independent Predictor-Corrector sampling; row `r` draws its noise
/// from `rngs[r]` only.
///
/// Each step `i = M−1 .. 0` runs the predictor from `τ_{i+1}` to `τ_i` and
/// then the corrector at `τ_i`. The final step adds no noise and skips the
/// corrector, so the result is the noise-free endpoint.
pub fn pc_sample_rows<S: ScoreModel, R: Rng>(
    model: &S,
    spec: &SdeSpec,
    c: &Matrix,
    x_start: &Matrix,
    t_start: f64,
    rngs: &mut [R],
) -> Result<Matrix> {
    spec.validate()?;
    SdeSpec::check_time(t_start)?;
    let grid = spec.grid(t_start);
    let rows = x_start.rows();
    let dim = x_start.cols();
    let mut x = x_start.clone();
    for i in (0..spec.steps).rev() {
        let (xc, sc, nc) = spec.predictor_coefs(grid[i + 1], grid[i]);
        let s = model.score(&x, &vec![grid[i + 1].max(T_EPS); rows], c)?;
        for (r, rng) in rngs.iter_mut().enumerate() {
            let z = if i > 0 {
                normal_vec(rng, dim)
            } else {
                vec![0.0; dim]
            };
            for ((xv, sv), zv) in x.row_mut(r).iter_mut().zip(s.row(r)).zip(&z) {
                *xv = xc * *xv + sc * sv + nc * zv;
            }
        }
        if i == 0 {
            break;
        }
        let tc = vec![grid[i].max(T_EPS); rows];
        for _ in 0..spec.corrector_steps {
            let s = model.score(&x, &tc, c)?;
            let z: Vec<Vec<f64>> = rngs.iter_mut().map(|g| normal_vec(g, dim)).collect();
            let eps: Vec<f64> = match spec.step_norm {
                StepNorm::Row => (0..rows)
                    .map(|r| langevin_step_size(spec.snr, &z[r], s.row(r)))
                    .collect(),
                StepNorm::Batch => {
                    let mean = |f: &dyn Fn(usize) -> f64| (0..rows).map(f).sum::<f64>() / rows.max(1) as f64;
                    let zn = mean(&|r| norm(&z[r]));
                    let sn = mean(&|r| norm(s.row(r)));
                    let e = if sn == 0.0 {
                        0.0
                    } else {
                        2.0 * (spec.snr * zn / sn).powi(2)
                    };
                    vec![e; rows]
                }
            };
            for r in 0..rows {
                let amp = (2.0 * eps[r]).sqrt();
                for ((xv, sv), zv) in x.row_mut(r).iter_mut().zip(s.row(r)).zip(&z[r]) {
                    *xv += eps[r] * sv + amp * zv;
                }
            }
        }
    }
    Ok(x)
}

/// Tape version of [`pc_sample_rows`] for a learned network. Noise draws are
/// constants; adjoints flow through the score evaluations, the adaptive
/// Langevin step size and `x_start`. Consumes exactly the same random draws
/// as the plain sampler. Step sizes are always per row.
pub fn pc_sample_tape<R: Rng>(
    tape: &mut Tape,
    net: &ScoreNetVars,
    spec: &SdeSpec,
    c: &Matrix,
    x_start: Var,
    t_start: f64,
    rngs: &mut [R],
) -> Var {
    let grid = spec.grid(t_start);
    let (rows, dim) = tape.value(x_start).shape();
    let mut x = x_start;
    for i in (0..spec.steps).rev() {
        let (xc, sc, nc) = spec.predictor_coefs(grid[i + 1], grid[i]);
        let s = net.forward(tape, x, &vec![grid[i + 1].max(T_EPS); rows], c);
        if i > 0 {
            let z = normal_block(rngs, dim);
            let z = tape.constant(z);
            x = tape.lincomb(&[(x, xc), (s, sc), (z, nc)]);
        } else {
            x = tape.lincomb(&[(x, xc), (s, sc)]);
            break;
        }
        let tc = vec![grid[i].max(T_EPS); rows];
        for _ in 0..spec.corrector_steps {
            let s = net.forward(tape, x, &tc, c);
            let z = normal_block(rngs, dim);
            x = tape.langevin_step(x, s, z, spec.snr);
        }
    }
    x
}

/// Perturbs each social row to `t_start` and reconstructs it by
/// Predictor-Corrector sampling conditioned on the matching collaborative
/// row. Row `u` uses its own random stream derived from `(seed, u)`.
pub fn denoise_social<S: ScoreModel + Sync>(
    social: &Matrix,
    collab_users: &Matrix,
    model: &S,
    spec: &SdeSpec,
    t_start: f64,
    seed: u64,
) -> Result<Matrix> {
    use rayon::prelude::*;

    if social.shape() != collab_users.shape() {
        return Err(Error::Shape(format!(
            "social {:?} vs collaborative {:?}",
            social.shape(),
            collab_users.shape()
        )));
    }
    SdeSpec::check_time(t_start)?;
    let dim = social.cols();
    let rows: Vec<Result<Vec<f64>>> = (0..social.rows())
        .into_par_iter()
        .map(|u| {
            let mut rng = row_stream(seed, u as u64);
            let z = normal_vec(&mut rng, dim);
            let x_t = spec.perturb(social.row(u), t_start, &z);
            pc_sample(model, spec, collab_users.row(u), &x_t, t_start, &mut rng)
        })
        .collect();
    let mut out = Matrix::zeros(social.rows(), dim);
    for (u, r) in rows.into_iter().enumerate() {
        out.row_mut(u).copy_from_slice(&r?);
    }
    Ok(out)
}

/// Tape version of [`denoise_social`] for selected users. Matches the plain
/// version value-for-value when given the same seed.
#[allow(clippy::too_many_arguments)]
pub fn denoise_social_tape(
    tape: &mut Tape,
    social: Var,
    collab_users: &Matrix,
    users: &[usize],
    net: &ScoreNetVars,
    spec: &SdeSpec,
    t_start: f64,
    seed: u64,
) -> Var {
    let dim = tape.value(social).cols();
    let mut rngs: Vec<ChaCha8Rng> = users.iter().map(|&u| row_stream(seed, u as u64)).collect();
    let z = normal_block(&mut rngs, dim);
    let k = spec.kernel_moments(t_start);
    let x0 = tape.gather_rows(social, users);
    let noise = tape.constant(z.scale(k.variance.sqrt()));
    let x_t = tape.lincomb(&[(x0, k.mean_coef), (noise, 1.0)]);
    let c = collab_users.gather_rows(users);
    pc_sample_tape(tape, net, spec, &c, x_t, t_start, &mut rngs)
}
