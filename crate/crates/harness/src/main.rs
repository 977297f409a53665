use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dvf_core::occupancy::{Dataset, EmbeddingMode, Normalizer};
use dvf_core::policy::{bc_baseline_train, BcConfig, Policy};
use dvf_harness::envs::{collect, maze_spec, CollectSpec};
use dvf_harness::eval::{self, format_r, CorrelationSpec, MazeEvalSpec};
use dvf_harness::figures::{self, FigureInputs, SampleRow};
use dvf_harness::error::core_exit_code;
use dvf_harness::{Bundle, EnvId, HarnessError, RunConfig, RunDir};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "dvf", about = "Occupancy diffusion models, value estimates and policy decoding", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the behaviour policies of an environment into a dataset file.
    Collect(CollectArgs),
    /// Train on a dataset, writing checkpoints and metrics to a run directory.
    Train(TrainArgs),
    /// Returns-versus-value correlation over the Mountain Car behaviour policies.
    EvalCorr(CorrArgs),
    /// Policy-conditioned future samples from the maze start and their separation score.
    EvalMaze(MazeArgs),
    /// Mean geodesic distance of future samples over a list of discounts.
    EvalGamma(GammaArgs),
    /// Render figures from a run's metrics and evaluation CSVs.
    Plot(PlotArgs),
    /// Plain behaviour cloning, for comparison.
    BaselineBc(BcArgs),
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    env: EnvId,
    #[arg(long)]
    out: PathBuf,
    /// Behaviour policies (Mountain Car only; mazes use one per goal).
    #[arg(long, default_value_t = 5)]
    policies: usize,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_actions: bool,
    #[arg(long)]
    no_rewards: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    bc_coef: Option<f64>,
    #[arg(long)]
    reward_updates: Option<usize>,
    #[arg(long)]
    diffusion_steps: Option<usize>,
    /// Denoiser hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    policy_mode: Option<EmbeddingMode>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    pretrain_diffusion_only: bool,
    #[arg(long)]
    wall_clock: bool,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Run directory; its latest checkpoint is used unless one is given.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where CSV and figures go; defaults to `<run>/eval`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CheckpointArgs {
    fn load(&self) -> Result<Bundle> {
        let path = match &self.checkpoint {
            Some(p) => p.clone(),
            None => RunDir::new(&self.run)
                .list_checkpoints()?
                .pop()
                .map(|(_, p)| p)
                .with_context(|| format!("no checkpoints in {}", self.run.display()))?,
        };
        Ok(Bundle::load(&path)?)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let out = self.out.clone().unwrap_or_else(|| self.run.join("eval"));
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(out)
    }
}

#[derive(Args)]
struct CorrArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// Behaviour policies the model was trained on.
    #[arg(long, default_value_t = 5)]
    policies: usize,
    #[arg(long, default_value_t = 2)]
    episodes: usize,
    #[arg(long, default_value_t = 25)]
    stride: usize,
    #[arg(long)]
    n_samples: Option<usize>,
}

#[derive(Args)]
struct MazeArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    /// The dataset the model was trained on, for the ground-truth clusters.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 2000)]
    reference: usize,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    ckpt: CheckpointArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.9, 0.99])]
    gammas: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    n: usize,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    run: PathBuf,
    /// Directory holding `correlation.csv` or `samples.csv`; defaults to `<run>/eval`.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BcArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    env: EnvId,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 256])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Ok(Dataset::read(path)?)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_collect(a: CollectArgs) -> Result<()> {
    let spec = CollectSpec {
        env: a.env,
        policies: a.policies,
        episodes_per_policy: a.episodes,
        include_actions: !a.no_actions,
        include_rewards: !a.no_rewards,
    };
    let ds = collect(&spec, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    ds.write(&a.out)?;
    println!("{} episodes, {} transitions -> {}", ds.episodes.len(), ds.transitions(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field.clone() { cfg.$field = v; })*};
    }
    set!(env, seed, steps, checkpoint_every, batch_size, lr, gamma, n_samples, bc_coef, reward_updates, diffusion_steps, hidden, eval_episodes);
    if a.policy_mode.is_some() {
        cfg.policy_mode = a.policy_mode;
    }
    cfg.pretrain_diffusion_only |= a.pretrain_diffusion_only;
    cfg.wall_clock |= a.wall_clock;
    cfg.validate()?;
    let ds = read_dataset(&a.dataset)?;
    let dir = RunDir::new(&a.out);
    let summary = dvf_harness::run_training(&cfg, &ds, &dir)?;
    if let Some(last) = summary.rows.last() {
        println!(
            "step {}: diffusion {:.4}, reward {}, policy {}",
            last.step,
            last.diffusion_loss,
            last.reward_loss.map_or("-".into(), |v| format!("{v:.4}")),
            last.policy_loss.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    println!("{} checkpoints in {}", summary.checkpoints.len(), dir.checkpoints().display());
    Ok(())
}

fn cmd_eval_corr(a: CorrArgs) -> Result<()> {
    let bundle = a.ckpt.load()?;
    let spec = CorrelationSpec {
        env: bundle.config.env,
        checkpoints: a.policies,
        episodes_per_checkpoint: a.episodes,
        stride: a.stride,
        n_samples: a.n_samples.unwrap_or(bundle.config.n_samples),
        gamma: bundle.config.gamma,
    };
    let report = eval::eval_correlation(&bundle, &spec, &mut ChaCha8Rng::seed_from_u64(a.ckpt.seed))?;
    let out = a.ckpt.out_dir()?;
    figures::write_csv(&out.join("correlation.csv"), &report.points)?;
    write_json(
        &out.join("correlation.json"),
        &json!({
            "returns_vs_v": format_r(report.r_returns_v),
            "v_vs_future_reward": format_r(report.r_v_reward),
            "returns_vs_v_checkpoint_means": format_r(report.r_returns_v_means),
            "v_vs_future_reward_checkpoint_means": format_r(report.r_v_reward_means),
            "points": report.points.len(),
        }),
    )?;
    println!("returns vs V: {}", format_r(report.r_returns_v));
    println!("V vs future reward: {}", format_r(report.r_v_reward));
    Ok(())
}

fn cmd_eval_maze(a: MazeArgs) -> Result<()> {
    let bundle = a.ckpt.load()?;
    let raw = read_dataset(&a.dataset)?;
    let spec = MazeEvalSpec {
        env: bundle.config.env,
        gamma: a.gamma.unwrap_or(bundle.config.gamma),
        n_per_index: a.n,
        reference_per_index: a.reference,
    };
    let report = eval::eval_maze_conditioning(&bundle, &raw, &spec, &mut ChaCha8Rng::seed_from_u64(a.ckpt.seed))?;
    let out = a.ckpt.out_dir()?;
    figures::write_csv(&out.join("samples.csv"), &figures::sample_rows(&report.samples))?;
    figures::write_csv(&out.join("reference.csv"), &figures::sample_rows(&report.reference))?;
    write_json(
        &out.join("separation.json"),
        &json!({ "separation": report.score, "ground_truth_separation": report.ground_truth_score }),
    )?;
    println!("separation {:.4} (ground truth {:.4})", report.score, report.ground_truth_score);
    Ok(())
}

fn cmd_eval_gamma(a: GammaArgs) -> Result<()> {
    let bundle = a.ckpt.load()?;
    let env = bundle.config.env;
    let policies: Vec<u32> = (0..maze_spec(env).map_or(0, |s| s.goals.len()) as u32).collect();
    let sweep = eval::eval_gamma_sweep(
        &bundle,
        env,
        &a.gammas,
        &policies,
        eval::env_horizon(env),
        a.n,
        &mut ChaCha8Rng::seed_from_u64(a.ckpt.seed),
    )?;
    let out = a.ckpt.out_dir()?;
    let sets: Vec<_> = sweep.iter().map(|g| g.samples.clone()).collect();
    figures::write_csv(&out.join("samples.csv"), &figures::sample_rows(&sets))?;
    let distances: Vec<_> = sweep.iter().map(|g| json!({ "gamma": g.gamma, "mean_distance": g.mean_distance })).collect();
    write_json(&out.join("gamma_sweep.json"), &json!(distances))?;
    for g in &sweep {
        println!("gamma {:<5} mean geodesic distance {:.3}", g.gamma, g.mean_distance);
    }
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let dir = RunDir::new(&a.run);
    let metrics = dvf_harness::train::read_metrics(&dir.metrics())?;
    let env = RunConfig::load(&dir.config()).ok().map(|c| c.env);
    let eval_dir = a.eval.unwrap_or_else(|| a.run.join("eval"));
    let corr_path = eval_dir.join("correlation.csv");
    let correlation = if corr_path.exists() {
        figures::read_csv(&corr_path)?
    } else {
        Vec::new()
    };
    let samples_path = eval_dir.join("samples.csv");
    let samples = if samples_path.exists() {
        figures::sample_sets(&figures::read_csv::<SampleRow>(&samples_path)?)
    } else {
        Vec::new()
    };
    let maze = env.and_then(maze_spec);
    let inputs = FigureInputs {
        metrics: &metrics,
        correlation: &correlation,
        samples: &samples,
        maze: maze.as_deref(),
    };
    for f in figures::emit_figures(&inputs, &a.out)? {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_baseline_bc(a: BcArgs) -> Result<()> {
    let raw = read_dataset(&a.dataset)?;
    if !raw.has_actions() {
        bail!(HarnessError::Config("behaviour cloning needs dataset actions".into()));
    }
    let norm = Normalizer::fit(&raw)?;
    let data = norm.normalize_dataset(&raw);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for ep in &data.episodes {
        let acts = ep.actions.as_ref().expect("checked above");
        states.extend(ep.states[..ep.len()].iter().cloned());
        actions.extend(acts.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let bound = dvf_harness::envs::AnyEnv::new(a.env);
    let mut policy = Policy::new(data.state_dim, dvf_core::envs::Env::action_bound(&bound), &a.hidden, &mut rng)?;
    let cfg = BcConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        max_grad_norm: 100.0,
    };
    let curve = bc_baseline_train(&mut policy, &states, &actions, &cfg, &mut rng)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    #[derive(serde::Serialize)]
    struct Row {
        step: usize,
        bc_loss: f64,
    }
    let rows: Vec<Row> = curve.iter().enumerate().map(|(i, &l)| Row { step: i + 1, bc_loss: l }).collect();
    figures::write_csv(&a.out.join("bc_metrics.csv"), &rows)?;
    let path = a.out.join("bc_policy.dvf");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    policy.write(&mut f)?;
    println!("final loss {:.6}", curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect(a) => cmd_collect(a),
        Command::Train(a) => cmd_train(a),
        Command::EvalCorr(a) => cmd_eval_corr(a),
        Command::EvalMaze(a) => cmd_eval_maze(a),
        Command::EvalGamma(a) => cmd_eval_gamma(a),
        Command::Plot(a) => cmd_plot(a),
        Command::BaselineBc(a) => cmd_baseline_bc(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return h.exit_code() as u8;
        }
        if let Some(c) = cause.downcast_ref::<dvf_core::Error>() {
            return core_exit_code(c) as u8;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
