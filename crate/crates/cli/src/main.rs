use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use socdiff::config::RunConfig;
use socdiff::dataset::{ingest_ratings, ingest_trust, load_split, preprocess, save_split, split, stats};
use socdiff::evaluation::{evaluate, Phase};
use socdiff::synth::{generate, SynthSpec};
use socdiff::training::alloc::PeakAlloc;
use socdiff::training::{
    epoch_csv, fit, load_checkpoint, run_gradcheck, save_checkpoint, timing_csv, Checkpoint, Graphs,
};
use socdiff::Error;

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

const GRADCHECK_THRESHOLD: f64 = 1e-4;
const EXIT_VERIFICATION: u8 = 5;

#[derive(Parser, Debug)]
#[command(name = "socdiff", version, about = "Score-based social denoising recommender")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation and denoising.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Extra `key=value` configuration overrides.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse, filter and split raw rating/trust files.
    Ingest(IngestArgs),
    /// Report dataset statistics of a split directory.
    Stats(DataArgs),
    /// Train and write `epochs.csv` plus the best-validation checkpoint.
    Train(TrainArgs),
    /// Full-rank Recall@K / NDCG@K of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Write denoised social embeddings of every user.
    Denoise(CheckpointArgs),
    /// Verify gradients of every loss component by finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a homophilous synthetic rating/trust dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    ratings: Option<PathBuf>,
    #[arg(long)]
    trust: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Split directory (defaults to `data.dir`).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Ablation to enable: no_curriculum, no_sgm or no_ssl.
    #[arg(long)]
    ablation: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    ck: CheckpointArgs,
    /// val or test.
    #[arg(long)]
    phase: Option<String>,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    /// Also write per-user metrics.
    #[arg(long)]
    per_user: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, hide = true)]
    inject_adjoint_fault: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    #[arg(long, default_value_t = 20)]
    items_per_user: usize,
    #[arg(long, default_value_t = 5)]
    friends_per_user: usize,
    #[arg(long, default_value_t = 0.9)]
    intra_cluster: f64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn usage(msg: String) -> Failure {
    Failure {
        code: 1,
        error: anyhow::anyhow!(msg),
    }
}

fn io_failure(e: anyhow::Error) -> Failure {
    Failure { code: 2, error: e }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn make_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("thread pool")
            .map_err(io_failure)?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&mut cfg, a),
        Command::Stats(a) => cmd_stats(&cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a, cli.seed),
        Command::Denoise(a) => cmd_denoise(&cfg, a, cli.seed),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, a),
        Command::Synth(a) => cmd_synth(&cfg, a),
    }
}

fn cmd_ingest(cfg: &mut RunConfig, a: IngestArgs) -> CliResult<()> {
    let ratings = a
        .ratings
        .or(cfg.ratings.clone())
        .ok_or_else(|| usage("ingest needs --ratings or data.ratings".into()))?;
    let trust = a
        .trust
        .or(cfg.trust.clone())
        .ok_or_else(|| usage("ingest needs --trust or data.trust".into()))?;
    let r = ingest_ratings(&ratings)?;
    let t = ingest_trust(&trust)?;
    eprintln!(
        "ratings: {} records, {} malformed; trust: {} edges, {} malformed, {} self-loops",
        r.records.len(),
        r.malformed(),
        t.records.len(),
        t.malformed(),
        t.self_loops
    );
    let pre = preprocess(&r.records, &t.records, cfg.rating_threshold, cfg.min_interactions)?;
    let [a, b, c] = cfg.split;
    let data = split(&pre, (a, b, c), cfg.train.seed)?;
    save_split(&data, &cfg.out_dir)?;
    let report = stats(&data).to_report();
    write(&cfg.out_dir.join("stats.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn data_dir(cfg: &RunConfig, a: &DataArgs) -> PathBuf {
    a.data.clone().unwrap_or_else(|| cfg.data_dir.clone())
}

fn cmd_stats(cfg: &RunConfig, a: DataArgs) -> CliResult<()> {
    let data = load_split(&data_dir(cfg, &a))?;
    let st = stats(&data);
    make_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("stats.txt"), &st.to_report())?;
    write(&cfg.out_dir.join("stats.csv"), &st.to_csv())?;
    print!("{}", st.to_report());
    Ok(())
}

fn cmd_train(cfg: &mut RunConfig, a: TrainArgs) -> CliResult<()> {
    for name in &a.ablation {
        cfg.train.ablations.enable(name)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate()?;
    if let Some(d) = &a.data.data {
        cfg.data_dir = d.clone();
    }
    let data = load_split(&cfg.data_dir)?;
    make_dir(&cfg.out_dir)?;
    write(&cfg.out_dir.join("config.txt"), &cfg.render())?;
    let out = fit(&cfg.train, &data, |log| {
        let l = &log.losses;
        let rec = log
            .recall10
            .map(|r| format!(" recall@10={r:.4}"))
            .unwrap_or_default();
        eprintln!(
            "epoch {:>4} joint={:.5} diff={:.5} bpr={:.5} cl={:.5}{rec} ({:.2}s)",
            log.epoch, l.joint, l.l_diff, l.l_bpr, l.l_cl, log.wall_clock_s
        );
    })?;
    write(
        &cfg.out_dir.join("epochs.csv"),
        &epoch_csv(&out.logs, cfg.train.log_resources),
    )?;
    write(&cfg.out_dir.join("timing.csv"), &timing_csv(&out.logs))?;
    let mut metrics = BTreeMap::new();
    if let Some(r) = out.best_recall {
        metrics.insert("val_recall@10".to_owned(), r);
    }
    let ck = Checkpoint {
        config: cfg.clone(),
        epoch: out.best_epoch,
        metrics,
        model: out.best,
    };
    save_checkpoint(&ck, &cfg.out_dir.join("checkpoint"))?;
    eprintln!(
        "best epoch {} written to {}",
        out.best_epoch,
        cfg.out_dir.join("checkpoint").display()
    );
    Ok(())
}

fn open_checkpoint(
    cfg: &RunConfig,
    a: &CheckpointArgs,
) -> CliResult<(Checkpoint, socdiff::dataset::SplitDataset)> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let dir = a.data.data.clone().unwrap_or_else(|| {
        if cfg.data_dir != RunConfig::default().data_dir {
            cfg.data_dir.clone()
        } else {
            ck.config.data_dir.clone()
        }
    });
    let data = load_split(&dir)?;
    Ok((ck, data))
}

fn cmd_evaluate(cfg: &RunConfig, a: EvaluateArgs, seed: Option<u64>) -> CliResult<()> {
    let phase = match &a.phase {
        Some(p) => {
            Phase::parse(p).map_err(|_| usage(format!("unknown phase `{p}`; expected val or test")))?
        }
        None => cfg.eval_phase,
    };
    let ks = a.ks.clone().unwrap_or_else(|| cfg.eval_ks.clone());
    let (ck, data) = open_checkpoint(cfg, &a.ck)?;
    let graphs = Graphs::build(&data)?;
    let mut train = ck.config.train.clone();
    train.seed = seed.unwrap_or(train.seed);
    let (users, items) = ck.model.embeddings(&graphs, &train)?;
    let result = evaluate(&users, &items, &data, &ks, phase)?;
    make_dir(&cfg.out_dir)?;
    let csv = result.to_csv();
    write(&cfg.out_dir.join(format!("metrics_{}.csv", phase.as_str())), &csv)?;
    if a.per_user {
        write(
            &cfg.out_dir.join(format!("metrics_{}_users.csv", phase.as_str())),
            &result.per_user_csv(),
        )?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_denoise(cfg: &RunConfig, a: CheckpointArgs, seed: Option<u64>) -> CliResult<()> {
    let (ck, data) = open_checkpoint(cfg, &a)?;
    let graphs = Graphs::build(&data)?;
    if ck.model.n_users() != graphs.n_users || ck.model.m_items() != graphs.m_items {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} users / {} items, dataset {} / {}",
            ck.model.n_users(),
            ck.model.m_items(),
            graphs.n_users,
            graphs.m_items
        ))
        .into());
    }
    let mut train = ck.config.train.clone();
    train.seed = seed.unwrap_or(train.seed);
    let emb = ck.model.social_view(&graphs, &train, train.seed)?;
    let mut s = String::new();
    for u in 0..emb.rows() {
        let row: Vec<String> = emb.row(u).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}\t{}", data.user_ids[u], row.join("\t"));
    }
    make_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("denoised_social.tsv");
    write(&path, &s)?;
    eprintln!("{} users written to {}", emb.rows(), path.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, a: GradcheckArgs) -> CliResult<()> {
    let train = socdiff::training::gradcheck::gradcheck_config(&cfg.train);
    let probes = a.probes.unwrap_or(cfg.gradcheck_probes);
    let step = a.step.unwrap_or(cfg.gradcheck_step);
    let report = run_gradcheck(&train, probes, step, a.inject_adjoint_fault)?;
    print!("{}", report.render());
    if report.passes(GRADCHECK_THRESHOLD) {
        println!(
            "max_rel_err={:.3e} < {GRADCHECK_THRESHOLD:e}",
            report.max_rel_err()
        );
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFICATION,
            error: anyhow::anyhow!(
                "gradient check failed: max relative error {:.3e} >= {GRADCHECK_THRESHOLD:e}",
                report.max_rel_err()
            ),
        })
    }
}

fn cmd_synth(cfg: &RunConfig, a: SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        n_users: a.users,
        m_items: a.items,
        clusters: a.clusters,
        items_per_user: a.items_per_user,
        friends_per_user: a.friends_per_user,
        intra_cluster: a.intra_cluster,
        seed: cfg.train.seed,
        ..SynthSpec::default()
    };
    let d = generate(&spec)?;
    let (r, t) = d.write(&cfg.out_dir)?;
    eprintln!(
        "{} ratings -> {}, {} trust edges -> {} ({:.1}% intra-cluster)",
        d.ratings.len(),
        r.display(),
        d.trust.len(),
        t.display(),
        100.0 * d.intra_fraction()
    );
    Ok(())
}
