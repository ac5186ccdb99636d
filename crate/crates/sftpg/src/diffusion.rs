//! Forward noising process, reverse sampler, and epsilon-matching pretraining.
//!
//! Indexing follows the chain `x_T -> ... -> x_0`: levels carry index
//! `t in 0..=T` (data at 0, pure noise at T) and transition `t` maps level
//! `t+1` down to level `t`. Schedule vectors are stored for levels `1..=T`,
//! and `alpha_bar` at level 0 is defined as 1.
//!
//! The noise-prediction net is always queried with the level of its input:
//! pretraining evaluates `eps_hat(x_t, t)` and the reverse step at transition
//! `t` evaluates `eps_hat(x_{t+1}, t+1)`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{GradVector, MlpNet, NetVars, Tape, Var};
use crate::{Error, Result};

/// Per-step sampler variance choice.
///
/// `PosteriorBeta` uses the forward posterior variance, except at the final
/// transition where that variance is exactly zero; the policy-gradient
/// treatment needs a density for every transition, so the final step falls
/// back to `beta_1` under either mode. Both choices keep every step
/// stochastic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerVariance {
    Beta,
    PosteriorBeta,
}

impl std::str::FromStr for SamplerVariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SamplerVariance::Beta),
            "posterior" => Ok(SamplerVariance::PosteriorBeta),
            other => Err(Error::invalid_arg(format!(
                "unknown sampler variance {other:?}, expected beta or posterior"
            ))),
        }
    }
}

impl std::fmt::Display for SamplerVariance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerVariance::Beta => "beta",
            SamplerVariance::PosteriorBeta => "posterior",
        })
    }
}

/// Linear-beta noise schedule with derived quantities.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub t_max: usize,
    /// `beta[t-1]` is the forward variance at level `t`, `t in 1..=T`.
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Forward posterior variances; the entry for level 1 is exactly zero.
    pub posterior_beta: Vec<f64>,
    pub sampler_variance: SamplerVariance,
}

/// Build a schedule with `beta` linear from `beta_min` at level 1 to
/// `beta_max` at level `T`.
pub fn make_schedule(
    t_max: usize,
    beta_min: f64,
    beta_max: f64,
    sampler_variance: SamplerVariance,
) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::invalid_arg("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max) {
        return Err(Error::invalid_arg(format!(
            "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let mut beta = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let frac = if t_max == 1 {
            0.0
        } else {
            t as f64 / (t_max - 1) as f64
        };
        beta.push(beta_min + (beta_max - beta_min) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut acc = 1.0;
    for &a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    // posterior variance at level t+1: (1 - abar_t) / (1 - abar_{t+1}) * beta_{t+1}
    let mut posterior_beta = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let abar_prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
        posterior_beta.push((1.0 - abar_prev) / (1.0 - alpha_bar[t]) * beta[t]);
    }
    Ok(NoiseSchedule {
        t_max,
        beta,
        alpha,
        alpha_bar,
        posterior_beta,
        sampler_variance,
    })
}

impl NoiseSchedule {
    /// `beta` at level `t`, `t in 1..=T`.
    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar` at level `t`, with the level-0 convention of 1.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_beta_at(&self, t: usize) -> f64 {
        self.posterior_beta[t - 1]
    }

    /// Sampler variance used at transition `t` (level `t+1` down to `t`),
    /// `t in 0..T`. Strictly positive for every transition.
    pub fn step_variance(&self, t: usize) -> f64 {
        debug_assert!(t < self.t_max);
        match self.sampler_variance {
            SamplerVariance::Beta => self.beta_at(t + 1),
            SamplerVariance::PosteriorBeta => {
                if t == 0 {
                    self.beta_at(1)
                } else {
                    self.posterior_beta_at(t + 1)
                }
            }
        }
    }

    /// Closed-form forward marginal: `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`.
    /// Accepts any level in `0..=T`; level 0 returns `x0` untouched.
    pub fn forward_marginal_sample(
        &self,
        x0: &Array2<f64>,
        t: usize,
        noise: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        if t > self.t_max {
            return Err(Error::invalid_arg(format!(
                "level {t} out of range for T = {}",
                self.t_max
            )));
        }
        if x0.dim() != noise.dim() {
            return Err(Error::invalid_arg("x0 and noise shapes differ"));
        }
        let ab = self.alpha_bar_at(t);
        Ok(ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise)
    }

    /// Mean of the forward posterior `q(x_t | x_{t+1}, x_0)` at transition
    /// `t in 0..T`.
    ///
    /// At `t = 0` the posterior collapses onto `x_0`; that case returns `x0`
    /// directly because evaluating the quotient form there only adds
    /// cancellation noise.
    pub fn posterior_mean(
        &self,
        x0: &Array2<f64>,
        x_next: &Array2<f64>,
        t: usize,
    ) -> Result<Array2<f64>> {
        if t >= self.t_max {
            return Err(Error::invalid_arg(format!(
                "transition {t} out of range for T = {}",
                self.t_max
            )));
        }
        if x0.dim() != x_next.dim() {
            return Err(Error::invalid_arg("x0 and x_next shapes differ"));
        }
        if t == 0 {
            return Ok(x0.to_owned());
        }
        let (c0, c1) = self.posterior_coeffs(t);
        Ok(c0 * x0 + c1 * x_next)
    }

    /// Coefficients `(on x0, on x_next)` of the posterior mean at transition
    /// `t in 1..T`.
    pub fn posterior_coeffs(&self, t: usize) -> (f64, f64) {
        let ab_t = self.alpha_bar_at(t);
        let ab_next = self.alpha_bar_at(t + 1);
        let c0 = ab_t.sqrt() * self.beta_at(t + 1) / (1.0 - ab_next);
        let c1 = self.alpha_at(t + 1).sqrt() * (1.0 - ab_t) / (1.0 - ab_next);
        (c0, c1)
    }

    /// Coefficients of the reverse-step mean written in terms of the noise
    /// prediction: `mean = inv_sqrt_alpha * (x_next - eps_coeff * eps_hat)`.
    fn predicted_mean_coeffs(&self, t: usize) -> (f64, f64) {
        let inv_sqrt_alpha = 1.0 / self.alpha_at(t + 1).sqrt();
        let eps_coeff = self.beta_at(t + 1) / (1.0 - self.alpha_bar_at(t + 1)).sqrt();
        (inv_sqrt_alpha, eps_coeff)
    }
}

/// The sampler: a noise-prediction net paired with its schedule.
#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub net: MlpNet,
    pub schedule: NoiseSchedule,
}

impl GeneratorNet {
    pub fn new(net: MlpNet, schedule: NoiseSchedule) -> Result<Self> {
        if net.spec.input_dim != net.spec.output_dim {
            return Err(Error::invalid_arg(
                "noise-prediction net must map points to points of the same dim",
            ));
        }
        Ok(GeneratorNet { net, schedule })
    }

    pub fn data_dim(&self) -> usize {
        self.net.spec.input_dim
    }

    fn time_arg(&self, level: usize) -> Option<usize> {
        if self.net.spec.time_embed_dim > 0 {
            Some(level)
        } else {
            None
        }
    }

    /// Noise prediction for a batch at a given level.
    pub fn eps_hat(&self, x: &Array2<f64>, level: usize) -> Result<Array2<f64>> {
        self.net.forward(x, self.time_arg(level))
    }

    /// Reverse-step mean at transition `t in 0..T`, plain evaluation.
    pub fn predicted_mean(&self, x_next: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        if t >= self.schedule.t_max {
            return Err(Error::invalid_arg(format!(
                "transition {t} out of range for T = {}",
                self.schedule.t_max
            )));
        }
        let (inv_sqrt_alpha, eps_coeff) = self.schedule.predicted_mean_coeffs(t);
        let eps = self.eps_hat(x_next, t + 1)?;
        Ok(inv_sqrt_alpha * (x_next - &(eps_coeff * eps)))
    }

    /// Reverse-step mean recorded on a tape; `x_next` may itself carry
    /// gradients (pathwise chains) or be a constant (buffer batches).
    pub fn predicted_mean_var(
        &self,
        tape: &mut Tape,
        vars: &NetVars<'_>,
        x_next: Var,
        t: usize,
    ) -> Result<Var> {
        if t >= self.schedule.t_max {
            return Err(Error::invalid_arg(format!(
                "transition {t} out of range for T = {}",
                self.schedule.t_max
            )));
        }
        let (inv_sqrt_alpha, eps_coeff) = self.schedule.predicted_mean_coeffs(t);
        let eps = vars.forward(tape, x_next, self.time_arg(t + 1))?;
        let scaled = tape.scale(eps, eps_coeff);
        let diff = tape.sub(x_next, scaled);
        Ok(tape.scale(diff, inv_sqrt_alpha))
    }
}

/// One sampled chain, states ordered `x_T, ..., x_0`, plus the seed that
/// produced it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Array1<f64>>,
    pub seed: u64,
}

impl Trajectory {
    pub fn x0(&self) -> &Array1<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// Level of `states[i]`: counts down from `T`.
    pub fn level(&self, i: usize) -> usize {
        self.states.len() - 1 - i
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            m[[r, c]] = rng.sample(StandardNormal);
        }
    }
    m
}

fn sample_states_impl<R: Rng + ?Sized>(
    g: &GeneratorNet,
    m: usize,
    rng: &mut R,
    with_noise: bool,
) -> Result<Vec<Array2<f64>>> {
    let n = g.data_dim();
    let t_max = g.schedule.t_max;
    let mut states = Vec::with_capacity(t_max + 1);
    states.push(normal_matrix(m, n, rng));
    for t in (0..t_max).rev() {
        let mean = g.predicted_mean(states.last().unwrap(), t)?;
        let next = if with_noise {
            let sigma = g.schedule.step_variance(t).sqrt();
            mean + sigma * &normal_matrix(m, n, rng)
        } else {
            mean
        };
        states.push(next);
    }
    Ok(states)
}

/// Sample `m` chains at once. Returns `T+1` batches of shape `(m, dim)`,
/// ordered from level `T` down to level 0. Every step is stochastic,
/// including the final one.
pub fn sample_trajectories_batched<R: Rng + ?Sized>(
    g: &GeneratorNet,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    sample_states_impl(g, m, rng, true)
}

/// Test hook: the same chain with all step variances forced to zero, so the
/// recursion applies the predicted means exactly (only `x_T` is random).
pub fn sample_trajectories_mean_only<R: Rng + ?Sized>(
    g: &GeneratorNet,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Array2<f64>>> {
    sample_states_impl(g, m, rng, false)
}

/// Split batched states into per-chain [`Trajectory`] values, all tagged
/// with the seed of the stream that produced the batch.
pub fn split_into_trajectories(states: &[Array2<f64>], seed: u64) -> Vec<Trajectory> {
    let m = states.first().map_or(0, |s| s.nrows());
    (0..m)
        .map(|r| Trajectory {
            states: states.iter().map(|s| s.row(r).to_owned()).collect(),
            seed,
        })
        .collect()
}

/// Sample a single chain from an explicit seed.
pub fn sample_trajectory(g: &GeneratorNet, seed: u64) -> Result<Trajectory> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let states = sample_trajectories_batched(g, 1, &mut rng)?;
    Ok(split_into_trajectories(&states, seed).remove(0))
}

/// Draw per-sample levels (uniform on `1..=T`) and unit noise for an
/// epsilon-matching step.
pub fn pretrain_draws<R: Rng + ?Sized>(
    t_max: usize,
    m: usize,
    dim: usize,
    rng: &mut R,
) -> (Vec<usize>, Array2<f64>) {
    let ts: Vec<usize> = (0..m).map(|_| rng.random_range(1..=t_max)).collect();
    let eps = normal_matrix(m, dim, rng);
    (ts, eps)
}

/// Epsilon-matching objective for explicit draws, value only:
/// `mean_i || eps_i - eps_hat(x_{t_i}, t_i) ||^2` with
/// `x_{t_i} = forward_marginal_sample(x0_i, t_i, eps_i)`.
pub fn pretrain_loss_value(
    g: &GeneratorNet,
    x0: &Array2<f64>,
    ts: &[usize],
    eps: &Array2<f64>,
) -> Result<f64> {
    let groups = group_by_level(ts);
    let mut total = 0.0;
    for (level, idx) in groups {
        let x0_g = select_rows(x0, &idx);
        let eps_g = select_rows(eps, &idx);
        let xt = g.schedule.forward_marginal_sample(&x0_g, level, &eps_g)?;
        let pred = g.eps_hat(&xt, level)?;
        let diff = &eps_g - &pred;
        total += diff.iter().map(|d| d * d).sum::<f64>();
    }
    Ok(total / x0.nrows() as f64)
}

/// Epsilon-matching objective for explicit draws: value and gradient with
/// respect to the generator parameters.
pub fn pretrain_loss_given(
    g: &GeneratorNet,
    x0: &Array2<f64>,
    ts: &[usize],
    eps: &Array2<f64>,
) -> Result<(f64, GradVector)> {
    if ts.len() != x0.nrows() || eps.dim() != x0.dim() {
        return Err(Error::invalid_arg("pretrain draw shapes do not line up"));
    }
    let mut tape = Tape::new();
    let vars = g.net.stage(&mut tape, true);
    let groups = group_by_level(ts);
    let mut acc: Option<Var> = None;
    for (level, idx) in groups {
        let x0_g = select_rows(x0, &idx);
        let eps_g = select_rows(eps, &idx);
        let xt = g.schedule.forward_marginal_sample(&x0_g, level, &eps_g)?;
        let xt_var = tape.constant(xt);
        let pred = vars.forward(&mut tape, xt_var, g.time_arg(level))?;
        let eps_var = tape.constant(eps_g);
        let diff = tape.sub(eps_var, pred);
        let sq = tape.square(diff);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let total = acc.expect("at least one sample");
    let loss = tape.scale(total, 1.0 / x0.nrows() as f64);
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), vars.collect_grads(&grads)))
}

/// Epsilon-matching objective with fresh draws from `rng`.
pub fn pretrain_loss<R: Rng + ?Sized>(
    g: &GeneratorNet,
    x0: &Array2<f64>,
    rng: &mut R,
) -> Result<(f64, GradVector)> {
    let (ts, eps) = pretrain_draws(g.schedule.t_max, x0.nrows(), g.data_dim(), rng);
    pretrain_loss_given(g, x0, &ts, &eps)
}

/// Stable grouping of sample indices by level, ascending.
fn group_by_level(ts: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut by_level: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &t) in ts.iter().enumerate() {
        by_level.entry(t).or_default().push(i);
    }
    by_level.into_iter().collect()
}

pub(crate) fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Write chains as `traj_id,t,x,y` rows (sampling order, level descending).
pub fn dump_trajectories(path: &std::path::Path, trajectories: &[Trajectory]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "traj_id,t,x,y")?;
    for (id, traj) in trajectories.iter().enumerate() {
        for (i, state) in traj.states.iter().enumerate() {
            let coords: Vec<String> = state.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{},{}", id, traj.level(i), coords.join(","))?;
        }
    }
    Ok(())
}
