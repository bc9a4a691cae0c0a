//! Epoch loop, validation, early stopping and the per-epoch log.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::dataset::SplitDataset;
use crate::encoders::collab_encode;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Phase};
use crate::graphs::CurriculumState;
use crate::training::alloc::PeakAlloc;
use crate::training::model::{Graphs, Model};
use crate::training::optim::Adam;
use crate::training::step::{build_losses, BatchSampler, StepNoise};

pub const EPOCH_LOG_HEADER: &str =
    "epoch,l_diff,l_bpr,l_cl,joint,recall@10,ndcg@10,wall_clock_s,peak_alloc_bytes";

/// Mean component losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochLosses {
    pub l_diff: f64,
    pub l_bpr: f64,
    pub l_cl: f64,
    pub joint: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: EpochLosses,
    /// Validation metrics, when evaluated this epoch.
    pub recall10: Option<f64>,
    pub ndcg10: Option<f64>,
    pub wall_clock_s: f64,
    pub peak_alloc_bytes: usize,
}

impl EpochLog {
    /// One CSV row. Resource columns stay empty unless `resources`, which
    /// keeps the log byte-identical across repeated runs.
    pub fn csv_row(&self, resources: bool) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let l = &self.losses;
        let (wall, peak) = if resources {
            (
                format!("{:.3}", self.wall_clock_s),
                self.peak_alloc_bytes.to_string(),
            )
        } else {
            (String::new(), String::new())
        };
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            l.l_diff,
            l.l_bpr,
            l.l_cl,
            l.joint,
            opt(self.recall10),
            opt(self.ndcg10),
            wall,
            peak
        )
    }
}

pub fn epoch_csv(logs: &[EpochLog], resources: bool) -> String {
    let mut s = format!("{EPOCH_LOG_HEADER}\n");
    for l in logs {
        s.push_str(&l.csv_row(resources));
        s.push('\n');
    }
    s
}

/// Measured resources per epoch.
pub fn timing_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,wall_clock_s,peak_alloc_bytes\n");
    for l in logs {
        let _ = writeln!(s, "{},{:.3},{}", l.epoch, l.wall_clock_s, l.peak_alloc_bytes);
    }
    s
}

/// Everything mutated by training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optim: Adam,
    pub curriculum: CurriculumState,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, graphs: &Graphs) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(cfg, graphs.n_users, graphs.m_items);
        let shapes: Vec<_> = model.params().iter().map(|p| p.shape()).collect();
        Ok(Self {
            optim: Adam::new(cfg.learning_rate, &shapes),
            curriculum: CurriculumState::new(cfg.curriculum_params(), &graphs.social)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            model,
        })
    }
}

/// One pass of `ceil(|train| / batch_size)` optimizer steps, preceded by
/// the curriculum refresh due at `epoch`.
pub fn train_epoch(
    state: &mut TrainState,
    graphs: &Graphs,
    data: &SplitDataset,
    sampler: &BatchSampler,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochLosses> {
    if !cfg.ablations.no_curriculum && cfg.curriculum.refresh_at(epoch).is_some() {
        let (eu, _) = collab_encode(
            &state.model.user_collab,
            &state.model.items,
            &graphs.bipartite,
            cfg.layers,
        )?;
        state.curriculum = state.curriculum.step(epoch, &eu, &graphs.social)?.0;
    }
    let batches = data.train.len().div_ceil(cfg.batch_size);
    let mut sum = EpochLosses {
        batches,
        ..EpochLosses::default()
    };
    for b in 0..batches {
        let noise = StepNoise::draw(
            sampler,
            &data.social,
            cfg,
            graphs.n_users,
            graphs.m_items,
            &mut state.rng,
        )?;
        let grads = {
            let mut tape = Tape::new();
            let vars = state.model.register(&mut tape);
            let lv = build_losses(
                &mut tape,
                &vars,
                graphs,
                &state.curriculum.active,
                &noise,
                None,
                cfg,
            );
            let part = |v: Option<_>| v.map_or(0.0, |v| tape.scalar(v));
            let (l_diff, l_cl) = (part(lv.l_diff), part(lv.l_cl));
            let (l_bpr, joint) = (tape.scalar(lv.l_bpr), tape.scalar(lv.joint));
            if !joint.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    detail: format!(
                        "l_diff={l_diff} l_bpr={l_bpr} l_cl={l_cl} joint={joint}; batch of {} triples over {} users",
                        noise.batch.len(),
                        noise.users.len()
                    ),
                });
            }
            sum.l_diff += l_diff;
            sum.l_bpr += l_bpr;
            sum.l_cl += l_cl;
            sum.joint += joint;
            let g = tape.backward(lv.joint);
            let grads: Vec<_> = vars
                .all()
                .into_iter()
                .map(|v| g.get_or_zeros(v, tape.value(v).shape()))
                .collect();
            debug_assert!(grads.iter().all(|g| g.is_finite()), "non-finite gradient");
            grads
        };
        state.optim.update(&mut state.model.params_mut(), &grads)?;
    }
    let k = batches as f64;
    sum.l_diff /= k;
    sum.l_bpr /= k;
    sum.l_cl /= k;
    sum.joint /= k;
    Ok(sum)
}

/// Result of [`fit`].
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the best validation Recall@10 (the last epoch when
    /// validation never ran).
    pub best: Model,
    pub best_epoch: usize,
    pub best_recall: Option<f64>,
    pub last: Model,
    pub logs: Vec<EpochLog>,
}

/// Trains for `cfg.epochs` epochs with early stopping on validation
/// Recall@10. `on_epoch` sees each log line as it is produced.
pub fn fit(
    cfg: &TrainConfig,
    data: &SplitDataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    data.validate()?;
    let graphs = Graphs::build(data)?;
    let sampler = BatchSampler::new(&data.train, data.n_users, data.m_items)?;
    let mut state = TrainState::new(cfg, &graphs)?;
    let mut logs = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        PeakAlloc::reset_peak();
        let losses = train_epoch(&mut state, &graphs, data, &sampler, cfg, epoch)?;
        let (mut recall10, mut ndcg10) = (None, None);
        if !data.val.is_empty() && (epoch + 1) % cfg.eval_every == 0 {
            let (u, i) = state.model.embeddings(&graphs, cfg)?;
            let r = evaluate(&u, &i, data, &[10], Phase::Val)?;
            recall10 = r.recall(10);
            ndcg10 = r.ndcg(10);
            let rec = recall10.unwrap_or(0.0);
            if best.as_ref().is_none_or(|b| rec > b.1) {
                best = Some((epoch, rec, state.model.clone()));
            }
        }
        let log = EpochLog {
            epoch,
            losses,
            recall10,
            ndcg10,
            wall_clock_s: start.elapsed().as_secs_f64(),
            peak_alloc_bytes: PeakAlloc::peak(),
        };
        on_epoch(&log);
        logs.push(log);
        if let Some((b, _, _)) = &best {
            if epoch - b >= cfg.patience {
                break;
            }
        }
    }
    let last = state.model;
    let (best_epoch, best_recall, best) = match best {
        Some((e, r, m)) => (e, Some(r), m),
        None => (logs.len().saturating_sub(1), None, last.clone()),
    };
    Ok(FitOutcome {
        best,
        best_epoch,
        best_recall,
        last,
        logs,
    })
}
