//! Command-line front end: each subcommand is a thin wrapper over the
//! library entry points the examples exercise one by one.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sftpg::checks::{gradient_check_suite, GRADCHECK_TOL};
use sftpg::diffusion::{dump_trajectories, sample_trajectory, GeneratorNet};
use sftpg::evalkit::{emit_figures, eval_w2_capped, gen_dataset, sinkhorn_w2, write_samples_csv};
use sftpg::finetune::{
    finetune_sft_pg_with, pretrain_with, write_metrics_csv, FinetuneOutcome, MetricsRow,
    TrainConfig,
};
use sftpg::gradients::EstimatorKind;
use sftpg::nn::{load_mlp, save_mlp};

#[derive(Parser)]
#[command(
    name = "sftpg",
    version,
    about = "Train few-step samplers on 2-D toy distributions and fine-tune them against an adversarial critic"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain a sampler on the noise-matching loss and write a checkpoint
    Pretrain(RunArgs),
    /// Fine-tune a sampler (pretraining first unless a checkpoint is given)
    Finetune(FinetuneArgs),
    /// Measure a checkpoint's Wasserstein-2 distance to its dataset
    Eval(EvalArgs),
    /// Check every analytic gradient against central finite differences
    Gradcheck,
    /// Fine-tune the same pretrained net with all three estimators and
    /// write their distance curves side by side
    CompareEstimators(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Apply one `key=value` line over the config; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Directory for checkpoints, CSVs and figures; defaults to
    /// runs/<config-hash>-s<seed> so distinct setups never collide
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve_out_dir(&self, cfg: &TrainConfig) -> PathBuf {
        match &self.out_dir {
            Some(p) => p.clone(),
            None => default_run_dir(cfg),
        }
    }
}

/// FNV-1a over the rendered config, folded to 32 bits. Stable across runs
/// of the same build since the config text is deterministic.
fn config_hash(cfg: &TrainConfig) -> u32 {
    let text = cfg.to_string();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h ^ (h >> 32)) as u32
}

fn default_run_dir(cfg: &TrainConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("{:08x}-s{}", config_hash(cfg), cfg.seed))
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Start from this pretrained checkpoint instead of pretraining here
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Sampler checkpoint to evaluate
    #[arg(long)]
    checkpoint: PathBuf,
    /// Flat `key = value` config file; built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Apply one `key=value` line over the config; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Independent evaluation repetitions
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Also run one entropic evaluation on this many points (10000 mirrors
    /// the single-shot protocol the subsampled default stands in for)
    #[arg(long, value_name = "N")]
    sinkhorn: Option<usize>,
    /// Regularization temperature for --sinkhorn
    #[arg(long, default_value_t = 1e-3)]
    sinkhorn_eps: f64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Pretrain(args) => cmd_pretrain(&args),
        Cmd::Finetune(args) => cmd_finetune(&args),
        Cmd::Eval(args) => cmd_eval(&args),
        Cmd::Gradcheck => cmd_gradcheck(),
        Cmd::CompareEstimators(args) => cmd_compare(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &[String]) -> anyhow::Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    for line in overrides {
        cfg.apply_str(line)
            .with_context(|| format!("override '{line}'"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path, cfg: &TrainConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.save(&dir.join("config.txt"))?;
    Ok(())
}

/// Final samples plus a handful of chains, the inputs of the figures.
fn write_sample_artifacts(dir: &Path, cfg: &TrainConfig, g: &GeneratorNet) -> anyhow::Result<()> {
    let n = cfg.eval_samples;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5A4D);
    let data = gen_dataset(cfg.dataset, n, cfg.data_noise, &mut rng)?;
    let states = sftpg::diffusion::sample_trajectories_batched(g, n, &mut rng)?;
    write_samples_csv(
        &dir.join("samples.csv"),
        &data,
        states.last().expect("chain has states"),
    )?;
    let chains: Vec<_> = (0..50)
        .map(|k| sample_trajectory(g, cfg.seed.wrapping_add(k)))
        .collect::<Result<_, _>>()?;
    dump_trajectories(&dir.join("paths.csv"), &chains)?;
    Ok(())
}

fn print_row(row: &MetricsRow) {
    println!(
        "  iter {:>6}  w2 {:.5}  gap {:+.5}  critic_loss {:+.5}  grad_norm {:.4}  [{:.1}s]",
        row.outer_iter,
        row.w2,
        row.ipm_gap_value,
        row.critic_loss,
        row.grad_norm_pre_clip,
        row.wall_clock_s
    );
}

fn run_pretrain(cfg: &TrainConfig, rng: &mut ChaCha12Rng) -> anyhow::Result<GeneratorNet> {
    println!(
        "pretraining on {} for {} epochs (T = {}, batch {})",
        cfg.dataset, cfg.pretrain_epochs, cfg.t_max, cfg.batch_m
    );
    let every = (cfg.pretrain_epochs / 10).max(1);
    let g = pretrain_with(cfg, rng, |epoch, loss| {
        if epoch % every == 0 || epoch + 1 == cfg.pretrain_epochs {
            println!("  epoch {epoch:>5}  eps-loss {loss:.5}");
        }
    })?;
    Ok(g)
}

fn cmd_pretrain(args: &RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let out_dir = args.resolve_out_dir(&cfg);
    prepare_out_dir(&out_dir, &cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let g = run_pretrain(&cfg, &mut rng)?;
    let ckpt = out_dir.join("pretrained.ckpt");
    save_mlp(&ckpt, &g.net)?;
    write_sample_artifacts(&out_dir, &cfg, &g)?;
    let rep = eval_w2_capped(
        &g,
        cfg.dataset,
        cfg.data_noise,
        cfg.eval_samples,
        cfg.eval_subsample,
        1,
        cfg.seed,
    )?;
    println!("pretrained W2 = {:.5}", rep.mean);
    println!("wrote {}", ckpt.display());
    Ok(())
}

fn cmd_finetune(args: &FinetuneArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run.config, &args.run.overrides)?;
    let out_dir = args.run.resolve_out_dir(&cfg);
    prepare_out_dir(&out_dir, &cfg)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let g = match &args.checkpoint {
        Some(p) => {
            let net = load_mlp(p).with_context(|| format!("reading {}", p.display()))?;
            GeneratorNet::new(net, cfg.schedule()?)?
        }
        None => {
            let g = run_pretrain(&cfg, &mut rng)?;
            save_mlp(&out_dir.join("pretrained.ckpt"), &g.net)?;
            g
        }
    };
    println!(
        "fine-tuning with {} ({} critic rounds : {} generator rounds, lambda {}, eta {})",
        cfg.estimator, cfg.n_critic, cfg.n_generator, cfg.lambda, cfg.eta_gp
    );
    let out = finetune_sft_pg_with(&cfg, g, &mut rng, print_row)?;
    finish_run(&out_dir, &cfg, &out)?;
    println!(
        "W2 {:.5} -> {:.5} ({}x better)",
        out.initial_w2,
        out.final_w2,
        (out.initial_w2 / out.final_w2).round()
    );
    Ok(())
}

fn finish_run(dir: &Path, cfg: &TrainConfig, out: &FinetuneOutcome) -> anyhow::Result<()> {
    save_mlp(&dir.join("finetuned.ckpt"), &out.gen.net)?;
    write_metrics_csv(&dir.join("metrics.csv"), &out.metrics)?;
    write_sample_artifacts(dir, cfg, &out.gen)?;
    let figs = emit_figures(dir)?;
    for f in figs {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.config, &args.overrides)?;
    let net = load_mlp(&args.checkpoint)
        .with_context(|| format!("reading {}", args.checkpoint.display()))?;
    let g = GeneratorNet::new(net, cfg.schedule()?)?;
    let rep = eval_w2_capped(
        &g,
        cfg.dataset,
        cfg.data_noise,
        cfg.eval_samples,
        cfg.eval_subsample,
        args.reps,
        cfg.seed,
    )?;
    for (i, v) in rep.per_rep.iter().enumerate() {
        println!("rep {i}: W2 = {v:.5}");
    }
    println!("mean {:.5}  std {:.5}", rep.mean, rep.std);
    if let Some(n) = args.sinkhorn {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x51_4B);
        let data = gen_dataset(cfg.dataset, n, cfg.data_noise, &mut rng)?;
        let states = sftpg::diffusion::sample_trajectories_batched(&g, n, &mut rng)?;
        let model = states.last().expect("chain has states");
        let v = sinkhorn_w2(&data, model, args.sinkhorn_eps, 1e-4, 50_000)?;
        println!(
            "sinkhorn (n = {n}, eps = {:.0e}): W2 = {v:.5}",
            args.sinkhorn_eps
        );
    }
    Ok(())
}

fn cmd_gradcheck() -> anyhow::Result<()> {
    let suite = gradient_check_suite()?;
    let mut failed = 0;
    for check in &suite {
        let ok = check.max_err < GRADCHECK_TOL;
        if !ok {
            failed += 1;
        }
        println!(
            "{:<36} {:>9.2e}  {}",
            check.name,
            check.max_err,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed > 0 {
        bail!("{failed} gradient check(s) above {GRADCHECK_TOL:.0e}");
    }
    println!("all {} checks below {GRADCHECK_TOL:.0e}", suite.len());
    Ok(())
}

fn cmd_compare(args: &RunArgs) -> anyhow::Result<()> {
    let base = load_config(&args.config, &args.overrides)?;
    let out_dir = args.resolve_out_dir(&base);
    prepare_out_dir(&out_dir, &base)?;
    let mut rng = ChaCha12Rng::seed_from_u64(base.seed);
    let pretrained = run_pretrain(&base, &mut rng)?;
    save_mlp(&out_dir.join("pretrained.ckpt"), &pretrained.net)?;

    let kinds = [
        EstimatorKind::Pg,
        EstimatorKind::PgBaseline,
        EstimatorKind::PathwiseGp,
    ];
    let mut curves = Vec::new();
    for kind in kinds {
        let mut cfg = base.clone();
        cfg.estimator = kind;
        println!("fine-tuning with {kind}");
        // Every estimator starts from the same net and the same stream, so
        // the curves differ only through the estimator itself.
        let mut run_rng = ChaCha12Rng::seed_from_u64(base.seed.wrapping_add(1));
        let out = finetune_sft_pg_with(&cfg, pretrained.clone(), &mut run_rng, print_row)?;
        println!("  {kind}: W2 {:.5} -> {:.5}", out.initial_w2, out.final_w2);
        save_mlp(
            &out_dir.join(format!("finetuned_{kind}.ckpt")),
            &out.gen.net,
        )?;
        curves.push(out.metrics);
    }

    // All runs share the eval grid, so rows join on the iteration index.
    let path = out_dir.join("compare.csv");
    let mut text = String::from("outer_iter,w2_pg,w2_pg_baseline,w2_pathwise_gp\n");
    for i in 0..curves[0].len() {
        if curves.iter().any(|c| c.len() <= i) {
            break;
        }
        let it = curves[0][i].outer_iter;
        text.push_str(&format!(
            "{},{},{},{}\n",
            it, curves[0][i].w2, curves[1][i].w2, curves[2][i].w2
        ));
    }
    std::fs::write(&path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}
