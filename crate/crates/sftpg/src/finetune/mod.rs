//! Training loops: noise-matching pretraining and the alternating
//! critic/generator fine-tuning loop.

pub mod buffer;
pub mod config;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::adversary::{
    critic_objective_baseline, critic_objective_gp, interpolates, BaselineNet, CriticNet,
};
use crate::diffusion::{
    pretrain_loss, sample_trajectories_batched, select_rows, split_into_trajectories,
    GeneratorNet,
};
use crate::error::{Error, Result};
use crate::evalkit::{eval_w2_capped, gen_dataset};
use crate::gradients::{
    clip_global_norm, pathwise_grad, policy_grad, policy_grad_baseline, tuples_from_trajectory,
    EstimatorKind, PgSample,
};
use crate::nn::{adam_step, AdamState, MlpNet};

pub use buffer::ReplayBuffer;
pub use config::TrainConfig;

/// One logged fine-tuning evaluation.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub outer_iter: usize,
    pub w2: f64,
    pub ipm_gap_value: f64,
    pub critic_loss: f64,
    /// Generator gradient norm before clipping; zero if the iteration ran no
    /// generator round.
    pub grad_norm_pre_clip: f64,
    /// Seconds since fine-tuning started. Shown on stdout but kept out of
    /// the CSV so reruns of the same config and seed are byte-identical.
    pub wall_clock_s: f64,
}

/// Write rows as `metrics.csv`. Deliberately omits the wall-clock column.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "outer_iter,w2,ipm_gap_value,critic_loss,grad_norm_pre_clip")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.outer_iter, r.w2, r.ipm_gap_value, r.critic_loss, r.grad_norm_pre_clip
        )?;
    }
    Ok(())
}

/// What a fine-tuning run hands back besides the net.
///
/// The endpoint distances average several evaluation repetitions and so sit
/// below the noise of the single-repetition `metrics` rows; they are the
/// numbers to quote for a run.
#[derive(Debug)]
pub struct FinetuneOutcome {
    pub gen: GeneratorNet,
    /// The adversary as it stood after the last critic round.
    pub critic: CriticNet,
    pub metrics: Vec<MetricsRow>,
    /// Distance measured on the incoming net, before any update.
    pub initial_w2: f64,
    /// Distance after the last update; equals `initial_w2` for a zero-length run.
    pub final_w2: f64,
    /// Largest generator gradient norm handed to Adam, after clipping.
    pub max_applied_grad_norm: f64,
}

/// Train a fresh generator on the noise-matching loss.
///
/// Draws an `n_train`-point pool from the configured dataset, initializes
/// the net, and runs `pretrain_epochs` shuffled passes of Adam at
/// `lr_pretrain`. Zero epochs returns the freshly initialized net.
pub fn pretrain<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<GeneratorNet> {
    pretrain_with(cfg, rng, |_, _| {})
}

/// [`pretrain`] with a progress sink, called once per epoch with the epoch
/// index and its mean minibatch loss.
pub fn pretrain_with<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    rng: &mut R,
    on_epoch: impl FnMut(usize, f64),
) -> Result<GeneratorNet> {
    cfg.validate()?;
    let pool = gen_dataset(cfg.dataset, cfg.n_train, cfg.data_noise, rng)?;
    let net = MlpNet::init(cfg.generator_spec(), rng)?;
    let g = GeneratorNet::new(net, cfg.schedule()?)?;
    pretrain_net_with(g, cfg, &pool, rng, on_epoch)
}

/// The same loop over a caller-supplied net and data pool.
pub fn pretrain_net<R: Rng + ?Sized>(
    g: GeneratorNet,
    cfg: &TrainConfig,
    pool: &Array2<f64>,
    rng: &mut R,
) -> Result<GeneratorNet> {
    pretrain_net_with(g, cfg, pool, rng, |_, _| {})
}

/// [`pretrain_net`] with a progress sink, called once per epoch with the
/// epoch index and its mean minibatch loss.
pub fn pretrain_net_with<R: Rng + ?Sized>(
    mut g: GeneratorNet,
    cfg: &TrainConfig,
    pool: &Array2<f64>,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<GeneratorNet> {
    if pool.ncols() != g.data_dim() || pool.nrows() == 0 {
        return Err(Error::invalid_arg("pool shape does not fit the generator"));
    }
    let mut adam = AdamState::new(g.net.params.len(), cfg.lr_pretrain);
    let steps = (pool.nrows() / cfg.batch_m).max(1);
    let mut order: Vec<usize> = (0..pool.nrows()).collect();
    for epoch in 0..cfg.pretrain_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for s in 0..steps {
            let lo = s * cfg.batch_m;
            let hi = ((s + 1) * cfg.batch_m).min(order.len());
            let batch = select_rows(pool, &order[lo..hi]);
            let (loss, grad) = pretrain_loss(&g, &batch, rng)?;
            adam_step(&mut g.net.params, &mut adam, &grad)?;
            epoch_loss += loss;
        }
        on_epoch(epoch, epoch_loss / steps as f64);
    }
    Ok(g)
}

struct TrainState {
    g: GeneratorNet,
    critic: CriticNet,
    /// Present exactly when the estimator subtracts a learned baseline.
    baseline: Option<BaselineNet>,
    buffer: ReplayBuffer,
    adam_gen: AdamState,
    adam_critic: AdamState,
    adam_baseline: Option<AdamState>,
    last_gap: f64,
    last_critic_loss: f64,
    last_grad_pre_clip: f64,
    max_applied_grad_norm: f64,
}

impl TrainState {
    fn init<R: Rng + ?Sized>(cfg: &TrainConfig, g: GeneratorNet, rng: &mut R) -> Result<Self> {
        let critic = CriticNet::new(MlpNet::init(cfg.critic_spec(), rng)?)?;
        let (baseline, adam_baseline) = if cfg.estimator == EstimatorKind::PgBaseline {
            let b = BaselineNet::new(MlpNet::init(cfg.baseline_spec(), rng)?)?;
            let st = AdamState::new(b.net.params.len(), cfg.lr_critic);
            (Some(b), Some(st))
        } else {
            (None, None)
        };
        let adam_gen = AdamState::new(g.net.params.len(), cfg.lr_generator);
        let adam_critic = AdamState::new(critic.net.params.len(), cfg.lr_critic);
        Ok(TrainState {
            g,
            critic,
            baseline,
            buffer: ReplayBuffer::new(),
            adam_gen,
            adam_critic,
            adam_baseline,
            last_gap: 0.0,
            last_critic_loss: 0.0,
            last_grad_pre_clip: 0.0,
            max_applied_grad_norm: 0.0,
        })
    }
}

fn draw_rows<R: Rng + ?Sized>(pool: &Array2<f64>, m: usize, rng: &mut R) -> Array2<f64> {
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..pool.nrows())).collect();
    select_rows(pool, &idx)
}

/// Flatten tuples into the arrays the baseline regression consumes.
fn tuple_arrays(samples: &[PgSample]) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let dim = samples[0].x0.len();
    let mut x0 = Array2::zeros((samples.len(), dim));
    let mut x_next = Array2::zeros((samples.len(), dim));
    let mut next_levels = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        x0.row_mut(i).assign(&s.x0);
        x_next.row_mut(i).assign(&s.x_next);
        next_levels.push(s.t + 1);
    }
    (x0, x_next, next_levels)
}

/// Ascend the critic (and baseline) for `n_critic` rounds, each on freshly
/// sampled chains whose tuples also feed the buffer.
fn critic_phase<R: Rng + ?Sized>(
    st: &mut TrainState,
    cfg: &TrainConfig,
    pool: &Array2<f64>,
    rng: &mut R,
    iter_tag: u64,
) -> Result<()> {
    for _ in 0..cfg.n_critic {
        let states = sample_trajectories_batched(&st.g, cfg.batch_m, rng)?;
        let trajs = split_into_trajectories(&states, iter_tag);
        for traj in &trajs {
            st.buffer.push_trajectory(traj);
        }
        let gen_x0 = states.last().expect("chain is never empty");
        let data = draw_rows(pool, cfg.batch_m, rng);

        let upd = if let Some(b) = &st.baseline {
            // Regress on every tuple of this round's chains, not a subsample:
            // each transition then contributes equally to the fit.
            let tuples: Vec<PgSample> =
                trajs.iter().flat_map(tuples_from_trajectory).collect();
            let (tx0, txn, levels) = tuple_arrays(&tuples);
            critic_objective_baseline(
                &st.critic, b, gen_x0, &data, &tx0, &txn, &levels, cfg.lambda,
            )?
        } else {
            let mix = interpolates(gen_x0, &data, rng)?;
            critic_objective_gp(&st.critic, gen_x0, &data, &mix, cfg.eta_gp)?
        };
        if !upd.objective.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "critic objective became {}",
                upd.objective
            )));
        }

        // The tape returns ascent directions; Adam descends, so negate.
        let mut cg = upd.critic_grad;
        cg.scale(-1.0);
        adam_step(&mut st.critic.net.params, &mut st.adam_critic, &cg)?;
        if let (Some(b), Some(ast), Some(mut bg)) = (
            st.baseline.as_mut(),
            st.adam_baseline.as_mut(),
            upd.baseline_grad,
        ) {
            bg.scale(-1.0);
            adam_step(&mut b.net.params, ast, &bg)?;
        }
        st.last_gap = upd.gap;
        st.last_critic_loss = -upd.objective;
    }
    Ok(())
}

/// Descend the generator for `n_generator` rounds along the configured
/// estimator. The critic is read, never written, here.
fn generator_phase<R: Rng + ?Sized>(
    st: &mut TrainState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..cfg.n_generator {
        let mut grad = match cfg.estimator {
            EstimatorKind::Pg => {
                let tuples = st.buffer.sample(cfg.batch_m, rng)?;
                policy_grad(&st.g, &st.critic, &tuples)?
            }
            EstimatorKind::PgBaseline => {
                let tuples = st.buffer.sample(cfg.batch_m, rng)?;
                let b = st.baseline.as_ref().expect("estimator keeps a baseline");
                policy_grad_baseline(&st.g, &st.critic, b, &tuples)?
            }
            // The pathwise route differentiates through whole fresh chains;
            // detached buffer tuples cannot serve it.
            EstimatorKind::PathwiseGp => pathwise_grad(&st.g, &st.critic, cfg.batch_m, rng)?.1,
        };
        let pre = match cfg.gamma {
            Some(cap) => clip_global_norm(&mut grad, cap),
            None => grad.norm(),
        };
        if !pre.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "generator gradient norm became {pre}"
            )));
        }
        let applied = if cfg.gamma.is_some() { grad.norm() } else { pre };
        st.last_grad_pre_clip = pre;
        st.max_applied_grad_norm = st.max_applied_grad_norm.max(applied);
        adam_step(&mut st.g.net.params, &mut st.adam_gen, &grad)?;
    }
    Ok(())
}

/// One outer iteration: clear the buffer, critic phase, generator phase.
/// The two phases never touch the other side's parameters.
fn outer_iteration<R: Rng + ?Sized>(
    st: &mut TrainState,
    cfg: &TrainConfig,
    pool: &Array2<f64>,
    rng: &mut R,
    iter: usize,
) -> Result<()> {
    st.buffer.clear();
    critic_phase(st, cfg, pool, rng, iter as u64)?;
    generator_phase(st, cfg, rng)
}

/// Repetitions for the before/after measurements in [`FinetuneOutcome`].
/// Mid-run rows use a single repetition to keep the eval cadence cheap.
const ENDPOINT_EVAL_REPS: usize = 5;

/// Distance of the current generator to the configured dataset. Eval streams
/// derive from the config seed and the iteration index, not from the
/// training rng, so the eval cadence never perturbs training. The iteration
/// stride is distinct from the per-repetition stride inside the evaluator,
/// so no two (iteration, repetition) pairs share a stream.
fn eval_point(g: &GeneratorNet, cfg: &TrainConfig, iter: usize, reps: usize) -> Result<f64> {
    let seed = cfg
        .seed
        .wrapping_add(0xE7A1_0000)
        .wrapping_add((iter as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let rep = eval_w2_capped(
        g,
        cfg.dataset,
        cfg.data_noise,
        cfg.eval_samples,
        cfg.eval_subsample,
        reps,
        seed,
    )?;
    Ok(rep.mean)
}

/// Adversarial fine-tuning of a pretrained sampler.
///
/// Runs `finetune_epochs * floor(n_train / batch_m)` outer iterations. Each
/// iteration clears the buffer, then `n_critic` rounds each sample `batch_m`
/// fresh chains, push all their transition tuples, draw `batch_m` pool
/// points, and ascend the critic: jointly with the baseline on the
/// regression-regularized objective when the estimator uses a baseline, on
/// the gradient-penalty objective otherwise. Then `n_generator` rounds
/// descend the generator along the configured estimator, clipped to `gamma`
/// when set.
///
/// The distance to the data is measured before the first update and then on
/// the first, every `eval_interval`-th, and the last iteration. The run
/// aborts with [`Error::TrainingDiverged`] when an evaluation exceeds ten
/// times the starting value or any objective or gradient goes nonfinite.
pub fn finetune_sft_pg<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    gen: GeneratorNet,
    rng: &mut R,
) -> Result<FinetuneOutcome> {
    finetune_sft_pg_with(cfg, gen, rng, |_| {})
}

/// [`finetune_sft_pg`] with a progress sink, called on every logged row.
pub fn finetune_sft_pg_with<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    gen: GeneratorNet,
    rng: &mut R,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if gen.data_dim() != cfg.data_dim || gen.schedule.t_max != cfg.t_max {
        return Err(Error::invalid_arg(format!(
            "generator ({} steps, dim {}) does not match config ({} steps, dim {})",
            gen.schedule.t_max,
            gen.data_dim(),
            cfg.t_max,
            cfg.data_dim
        )));
    }
    let pool = gen_dataset(cfg.dataset, cfg.n_train, cfg.data_noise, rng)?;
    let mut st = TrainState::init(cfg, gen, rng)?;
    let iters_per_epoch = (cfg.n_train / cfg.batch_m).max(1);
    let total = cfg.finetune_epochs * iters_per_epoch;

    let start = Instant::now();
    let initial_w2 = eval_point(&st.g, cfg, 0, ENDPOINT_EVAL_REPS)?;
    let mut metrics = Vec::new();
    for iter in 1..=total {
        outer_iteration(&mut st, cfg, &pool, rng, iter)?;
        if iter == 1 || iter == total || iter % cfg.eval_interval == 0 {
            let w2 = eval_point(&st.g, cfg, iter, 1)?;
            if !w2.is_finite() || w2 > 10.0 * initial_w2 {
                return Err(Error::TrainingDiverged(format!(
                    "W2 {w2:.4e} at iteration {iter}, 10x the initial {initial_w2:.4e}"
                )));
            }
            let row = MetricsRow {
                outer_iter: iter,
                w2,
                ipm_gap_value: st.last_gap,
                critic_loss: st.last_critic_loss,
                grad_norm_pre_clip: st.last_grad_pre_clip,
                wall_clock_s: start.elapsed().as_secs_f64(),
            };
            on_row(&row);
            metrics.push(row);
        }
    }
    let final_w2 = if total == 0 {
        initial_w2
    } else {
        eval_point(&st.g, cfg, total + 1, ENDPOINT_EVAL_REPS)?
    };
    Ok(FinetuneOutcome {
        gen: st.g,
        critic: st.critic,
        metrics,
        initial_w2,
        final_w2,
        max_applied_grad_norm: st.max_applied_grad_norm,
    })
}
