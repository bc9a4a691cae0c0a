//! Central-difference verification of the reverse-mode gradients.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataset::SplitDataset;
use crate::encoders::collab_encode;
use crate::error::Result;
use crate::graphs::CurriculumState;
use crate::tensor::Matrix;
use crate::training::model::{Graphs, Model};
use crate::training::step::{build_losses, BatchSampler, LossVars, StepNoise};

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst probe of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub array: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub max_rel_err: f64,
    pub probes: usize,
    pub worst: Option<Probe>,
}

/// Fourth-order central differences
/// `(f(−2h) − 8f(−h) + 8f(h) − f(2h)) / 12h` on the steps `h0 / 2^k`,
/// `k < STEP_LEVELS`. Each adjacent pair is scored by its disagreement
/// plus the roundoff bound `1.5 δ / h` with `δ = ROUNDOFF_ULPS · ε · |f|`;
/// the finer estimate of the best pair is returned with its score. Steps
/// spanning a kink drift with `h` and tiny steps drown in roundoff, so the
/// plateau between them wins.
pub fn stable_difference<F>(mut f: F, h0: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut h = h0;
    let (mut f1, mut f2) = ((f(-h)?, f(h)?), (f(-2.0 * h)?, f(2.0 * h)?));
    let delta = ROUNDOFF_ULPS * f64::EPSILON * f1.0.abs().max(f1.1.abs());
    let mut prev = (f2.0 - 8.0 * f1.0 + 8.0 * f1.1 - f2.1) / (12.0 * h);
    let mut best = (prev, f64::INFINITY);
    for _ in 1..STEP_LEVELS {
        h /= 2.0;
        f2 = f1;
        f1 = (f(-h)?, f(h)?);
        let d = (f2.0 - 8.0 * f1.0 + 8.0 * f1.1 - f2.1) / (12.0 * h);
        let score = (d - prev).abs() + 1.5 * delta / h;
        if score < best.1 {
            best = (d, score);
        }
        prev = d;
    }
    Ok(best)
}

pub const ROUNDOFF_ULPS: f64 = 16.0;
pub const STEP_LEVELS: usize = 14;

/// Compares `loss_and_grad` against [`stable_difference`] derivatives on
/// `probe_count` scalar entries, with `h0` as the initial step. Each probe
/// picks an array uniformly among those with a nonzero analytic gradient,
/// then an entry uniformly within it.
pub fn gradient_check<F, R>(
    params: &[Matrix],
    mut loss_and_grad: F,
    probe_count: usize,
    h0: f64,
    rng: &mut R,
) -> Result<CheckResult>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
    R: Rng + ?Sized,
{
    let (_, grads) = loss_and_grad(params)?;
    let live: Vec<usize> = (0..params.len())
        .filter(|&k| grads[k].data().iter().any(|&g| g != 0.0))
        .collect();
    let mut out = CheckResult {
        max_rel_err: 0.0,
        probes: 0,
        worst: None,
    };
    if live.is_empty() {
        return Ok(out);
    }
    let mut work = params.to_vec();
    for _ in 0..probe_count {
        let array = live[rng.random_range(0..live.len())];
        let index = rng.random_range(0..params[array].data().len());
        let orig = params[array].data()[index];
        let at = |h: f64| -> Result<f64> {
            work[array].data_mut()[index] = orig + h;
            let v = loss_and_grad(&work)?.0;
            work[array].data_mut()[index] = orig;
            Ok(v)
        };
        let numeric = stable_difference(at, h0)?.0;
        let analytic = grads[array].data()[index];
        let rel_err = relative_error(analytic, numeric);
        out.probes += 1;
        if out.worst.is_none() || rel_err > out.max_rel_err {
            out.max_rel_err = rel_err;
            out.worst = Some(Probe {
                array,
                index,
                analytic,
                numeric,
                rel_err,
            });
        }
    }
    Ok(out)
}

/// The fixed 8-user / 12-item dataset of the gradient suite.
pub fn gradcheck_fixture() -> SplitDataset {
    let train = vec![
        (0, 0),
        (0, 1),
        (0, 4),
        (1, 1),
        (1, 2),
        (1, 5),
        (2, 2),
        (2, 3),
        (2, 6),
        (3, 3),
        (3, 7),
        (3, 0),
        (4, 4),
        (4, 8),
        (4, 9),
        (5, 5),
        (5, 9),
        (5, 10),
        (6, 6),
        (6, 10),
        (6, 11),
        (7, 7),
        (7, 11),
        (7, 8),
    ];
    SplitDataset {
        n_users: 8,
        m_items: 12,
        train,
        val: vec![(0, 2), (5, 0)],
        test: vec![(1, 3), (6, 1)],
        social: vec![
            (0, 1),
            (0, 2),
            (1, 2),
            (1, 3),
            (2, 4),
            (3, 5),
            (4, 5),
            (4, 6),
            (5, 7),
            (6, 7),
            (0, 7),
        ],
        user_ids: (0..8).map(|u| format!("u{u}")).collect(),
        item_ids: (0..12).map(|i| format!("i{i}")).collect(),
    }
}

/// Gradient-suite settings: `d = 8` with small networks.
pub fn gradcheck_config(base: &TrainConfig) -> TrainConfig {
    TrainConfig {
        dim: 8,
        time_embed_dim: 4,
        score_hidden: vec![16],
        batch_size: 16,
        ..base.clone()
    }
}

pub const LOSS_NAMES: [&str; 4] = ["l_diff", "l_bpr", "l_cl", "joint"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub names: Vec<String>,
    /// Per loss component, in [`LOSS_NAMES`] order; absent components are skipped.
    pub results: Vec<(&'static str, CheckResult)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.results
            .iter()
            .map(|(_, r)| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.results.iter().all(|(_, r)| r.max_rel_err < threshold)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("loss,probes,max_rel_err,worst_param,worst_index,analytic,numeric\n");
        for (name, r) in &self.results {
            let (p, i, a, n) = match &r.worst {
                Some(w) => (
                    self.names[w.array].as_str(),
                    w.index.to_string(),
                    w.analytic,
                    w.numeric,
                ),
                None => ("-", "-".into(), 0.0, 0.0),
            };
            let _ = writeln!(
                s,
                "{name},{},{:.3e},{p},{i},{a:.6e},{n:.6e}",
                r.probes, r.max_rel_err
            );
        }
        s
    }
}

fn pick(lv: &LossVars, name: &str) -> Option<crate::autodiff::Var> {
    match name {
        "l_diff" => lv.l_diff,
        "l_bpr" => Some(lv.l_bpr),
        "l_cl" => lv.l_cl,
        _ => Some(lv.joint),
    }
}

/// Checks every loss component of one training step on the fixture.
/// `fault` skews the tape's product adjoints to exercise the harness.
pub fn run_gradcheck(cfg: &TrainConfig, probes: usize, h0: f64, fault: bool) -> Result<GradCheckReport> {
    let data = gradcheck_fixture();
    let graphs = Graphs::build(&data)?;
    let model = Model::init(cfg, data.n_users, data.m_items);
    let (eu, _) = collab_encode(&model.user_collab, &model.items, &graphs.bipartite, cfg.layers)?;
    let curriculum = CurriculumState::new(cfg.curriculum_params(), &graphs.social)?
        .step(0, &eu, &graphs.social)?
        .0;
    let sampler = BatchSampler::new(&data.train, data.n_users, data.m_items)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = StepNoise::draw(&sampler, &data.social, cfg, data.n_users, data.m_items, &mut rng)?;
    let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    // the condition is a stop-gradient: freeze it at the unperturbed values
    let frozen = eu;

    let mut results = Vec::new();
    for name in LOSS_NAMES {
        let thunk = |values: &[Matrix]| -> Result<(f64, Vec<Matrix>)> {
            let mut m = model.clone();
            m.set_params(values.to_vec())?;
            let mut tape = if fault {
                Tape::new().with_adjoint_fault()
            } else {
                Tape::new()
            };
            let vars = m.register(&mut tape);
            let lv = build_losses(
                &mut tape,
                &vars,
                &graphs,
                &curriculum.active,
                &noise,
                Some(&frozen),
                cfg,
            );
            let Some(loss) = pick(&lv, name) else {
                return Ok((
                    0.0,
                    values.iter().map(|v| Matrix::zeros(v.rows(), v.cols())).collect(),
                ));
            };
            let g = tape.backward(loss);
            let grads = vars
                .all()
                .into_iter()
                .map(|v| g.get_or_zeros(v, tape.value(v).shape()))
                .collect();
            Ok((tape.scalar(loss), grads))
        };
        {
            let mut t = Tape::new();
            let vars = model.register(&mut t);
            if pick(
                &build_losses(
                    &mut t,
                    &vars,
                    &graphs,
                    &curriculum.active,
                    &noise,
                    Some(&frozen),
                    cfg,
                ),
                name,
            )
            .is_none()
            {
                continue;
            }
        }
        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9C0D);
        results.push((name, gradient_check(&params, thunk, probes, h0, &mut probe_rng)?));
    }
    Ok(GradCheckReport {
        names: model.param_names(),
        results,
    })
}
