//! Generator gradient estimators.
//!
//! Every function here returns the gradient of the quantity the generator
//! descends, `E[f(x_0)]` under the sampler, so callers hand the result to a
//! minimizing optimizer as is.
//!
//! The score-function routes weight per-transition score terms
//! `grad_theta log p_theta(x_t | x_{t+1})` where the transition density is
//! Gaussian with the predicted mean and fixed variance. Buffer tuples are
//! drawn uniformly over transitions, so the per-tuple mean is scaled by `T`
//! to restore the within-trajectory sum; that keeps the estimators'
//! expectations aligned across different `T` and with the pathwise route.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::adversary::{BaselineNet, CriticNet};
use crate::diffusion::{GeneratorNet, Trajectory};
use crate::nn::{GradVector, Tape};
use crate::{Error, Result};

/// One transition tuple: `x_next` at level `t+1` stepped to `x_curr` at
/// level `t`, plus the endpoint of the chain it came from.
#[derive(Debug, Clone)]
pub struct PgSample {
    pub x_next: Array1<f64>,
    pub x_curr: Array1<f64>,
    pub x0: Array1<f64>,
    pub t: usize,
}

/// All `T` transition tuples of one chain.
pub fn tuples_from_trajectory(traj: &Trajectory) -> Vec<PgSample> {
    let t_max = traj.states.len() - 1;
    let x0 = traj.x0().clone();
    (0..t_max)
        .map(|t| PgSample {
            // states[i] sits at level t_max - i.
            x_next: traj.states[t_max - 1 - t].clone(),
            x_curr: traj.states[t_max - t].clone(),
            x0: x0.clone(),
            t,
        })
        .collect()
}

/// Which generator update a fine-tuning run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Score function weighted by the critic score of the endpoint.
    Pg,
    /// Score function with the value baseline subtracted from the weight.
    PgBaseline,
    /// Differentiate through the sampling chain into a frozen critic.
    PathwiseGp,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(EstimatorKind::Pg),
            "pg_baseline" => Ok(EstimatorKind::PgBaseline),
            "pathwise_gp" => Ok(EstimatorKind::PathwiseGp),
            other => Err(Error::invalid_arg(format!(
                "unknown estimator '{other}' (expected pg, pg_baseline, or pathwise_gp)"
            ))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Pg => "pg",
            EstimatorKind::PgBaseline => "pg_baseline",
            EstimatorKind::PathwiseGp => "pathwise_gp",
        })
    }
}

/// Gradient of `log N(x; mu, var I)` in `mu`: `(x - mu) / var`.
pub fn gaussian_logprob_grad_mu(
    x: &Array2<f64>,
    mu: &Array2<f64>,
    var: f64,
) -> Result<Array2<f64>> {
    if x.dim() != mu.dim() {
        return Err(Error::invalid_arg("x and mu shapes differ"));
    }
    if var <= 0.0 {
        return Err(Error::invalid_arg("variance must be positive"));
    }
    Ok((x - mu) / var)
}

/// Core score-function estimate `(T / N) sum_i w_i grad log p(tuple_i)`.
///
/// The per-tuple score carries the fixed step variance of its transition;
/// the predicted mean is the only parameter-dependent piece, so the sum is
/// assembled as a surrogate `sum_i <stopgrad(w_i (x_curr - mu) / var), mu>`
/// and differentiated once.
pub fn policy_grad_weighted(
    g: &GeneratorNet,
    samples: &[PgSample],
    weights: &[f64],
) -> Result<GradVector> {
    if samples.is_empty() {
        return Err(Error::invalid_arg("no tuples to estimate from"));
    }
    if samples.len() != weights.len() {
        return Err(Error::invalid_arg("one weight per tuple required"));
    }
    let n = g.data_dim();
    let mut tape = Tape::new();
    let vars = g.net.stage(&mut tape, true);
    let mut acc = None;
    for (t, idx) in group_by_transition(samples) {
        let m = idx.len();
        let mut x_next = Array2::zeros((m, n));
        let mut x_curr = Array2::zeros((m, n));
        for (r, &i) in idx.iter().enumerate() {
            x_next.row_mut(r).assign(&samples[i].x_next);
            x_curr.row_mut(r).assign(&samples[i].x_curr);
        }
        let xv = tape.constant(x_next);
        let mu = g.predicted_mean_var(&mut tape, &vars, xv, t)?;
        let var = g.schedule.step_variance(t);
        let mu_val = tape.value(mu).clone();
        let mut wc = (&x_curr - &mu_val) / var;
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..n {
                wc[[r, c]] *= weights[i];
            }
        }
        let wc_v = tape.constant(wc);
        let prod = tape.mul(wc_v, mu);
        let s = tape.sum_all(prod);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let total = acc.expect("nonempty samples");
    let t_max = g.schedule.t_max as f64;
    let scaled = tape.scale(total, t_max / samples.len() as f64);
    let grads = tape.backward(scaled)?;
    Ok(vars.collect_grads(&grads))
}

/// Score-function estimate weighted by the critic score of each endpoint.
pub fn policy_grad(
    g: &GeneratorNet,
    critic: &CriticNet,
    samples: &[PgSample],
) -> Result<GradVector> {
    let weights = endpoint_scores(critic, samples)?;
    policy_grad_weighted(g, samples, &weights)
}

/// Score-function estimate with weights `f(x0) - V(x_next, t+1)`.
/// Subtracting the baseline leaves the expectation unchanged because the
/// score has zero mean conditional on `x_next`.
pub fn policy_grad_baseline(
    g: &GeneratorNet,
    critic: &CriticNet,
    baseline: &BaselineNet,
    samples: &[PgSample],
) -> Result<GradVector> {
    let mut weights = endpoint_scores(critic, samples)?;
    let n = g.data_dim();
    for (t, idx) in group_by_transition(samples) {
        let mut x_next = Array2::zeros((idx.len(), n));
        for (r, &i) in idx.iter().enumerate() {
            x_next.row_mut(r).assign(&samples[i].x_next);
        }
        let v = baseline.value(&x_next, t + 1)?;
        for (r, &i) in idx.iter().enumerate() {
            weights[i] -= v[r];
        }
    }
    policy_grad_weighted(g, samples, &weights)
}

fn endpoint_scores(critic: &CriticNet, samples: &[PgSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid_arg("no tuples to estimate from"));
    }
    let n = samples[0].x0.len();
    let mut x0 = Array2::zeros((samples.len(), n));
    for (r, s) in samples.iter().enumerate() {
        x0.row_mut(r).assign(&s.x0);
    }
    Ok(critic.value(&x0)?.to_vec())
}

fn group_by_transition(samples: &[PgSample]) -> Vec<(usize, Vec<usize>)> {
    let mut by: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by.entry(s.t).or_default().push(i);
    }
    by.into_iter().collect()
}

/// Differentiate `mean f(x_0)` through freshly sampled chains, critic
/// frozen. Noise is drawn in the same order as plain batched sampling, so a
/// seeded rng reproduces the same chains either way. Returns the estimate of
/// `E[f(x_0)]` alongside its generator gradient.
pub fn pathwise_grad<R: Rng + ?Sized>(
    g: &GeneratorNet,
    critic: &CriticNet,
    m: usize,
    rng: &mut R,
) -> Result<(f64, GradVector)> {
    if m == 0 {
        return Err(Error::invalid_arg("need at least one chain"));
    }
    let n = g.data_dim();
    let mut tape = Tape::new();
    let g_vars = g.net.stage(&mut tape, true);
    let c_vars = critic.net.stage(&mut tape, false);

    let mut x = tape.constant(normal_matrix(m, n, rng));
    for t in (0..g.schedule.t_max).rev() {
        let mu = g.predicted_mean_var(&mut tape, &g_vars, x, t)?;
        let sigma = g.schedule.step_variance(t).sqrt();
        let noise = tape.constant(sigma * &normal_matrix(m, n, rng));
        x = tape.add(mu, noise);
    }
    let scores = c_vars.forward(&mut tape, x, None)?;
    let mean = tape.mean_all(scores);
    let grads = tape.backward(mean)?;
    Ok((tape.scalar(mean), g_vars.collect_grads(&grads)))
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            out[[r, c]] = rng.sample(rand_distr::StandardNormal);
        }
    }
    out
}

/// Scale `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut GradVector, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm && norm > 0.0 {
        grad.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{
        make_schedule, sample_trajectories_batched, split_into_trajectories, SamplerVariance,
    };
    use crate::nn::{finite_diff_check, Activation, MlpNet, MlpSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_generator(seed: u64, t_max: usize) -> GeneratorNet {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![6],
            output_dim: 2,
            activation: Activation::Softplus,
            time_embed_dim: 4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let net = MlpNet::init(spec, &mut rng).unwrap();
        let s = make_schedule(t_max, 0.05, 0.5, SamplerVariance::Beta).unwrap();
        GeneratorNet::new(net, s).unwrap()
    }

    fn small_critic(seed: u64) -> CriticNet {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![6],
            output_dim: 1,
            activation: Activation::Softplus,
            time_embed_dim: 0,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        CriticNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap()
    }

    fn random_tuples(g: &GeneratorNet, m: usize, seed: u64) -> Vec<PgSample> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let states = sample_trajectories_batched(g, m, &mut rng).unwrap();
        split_into_trajectories(&states, seed)
            .iter()
            .flat_map(tuples_from_trajectory)
            .collect()
    }

    #[test]
    fn estimator_names_roundtrip_and_bad_names_fail() {
        for kind in [
            EstimatorKind::Pg,
            EstimatorKind::PgBaseline,
            EstimatorKind::PathwiseGp,
        ] {
            let back: EstimatorKind = kind.to_string().parse().unwrap();
            assert_eq!(back, kind);
        }
        assert!("reinforce".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn trajectory_tuples_pair_adjacent_levels() {
        let g = small_generator(1, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let states = sample_trajectories_batched(&g, 1, &mut rng).unwrap();
        let traj = split_into_trajectories(&states, 2).remove(0);
        let tuples = tuples_from_trajectory(&traj);
        assert_eq!(tuples.len(), 3);
        for tup in &tuples {
            // states index of level l is t_max - l.
            assert_eq!(traj.states[3 - (tup.t + 1)], tup.x_next);
            assert_eq!(traj.states[3 - tup.t], tup.x_curr);
            assert_eq!(&tup.x0, traj.x0());
        }
    }

    #[test]
    fn logprob_grad_matches_finite_differences_of_the_density() {
        let x = ndarray::array![[0.3, -0.8]];
        let mu = ndarray::array![[0.1, 0.2]];
        let var = 0.07;
        let grad = gaussian_logprob_grad_mu(&x, &mu, var).unwrap();
        let logp = |m: &Array2<f64>| {
            let d = &x - m;
            -d.iter().map(|v| v * v).sum::<f64>() / (2.0 * var)
        };
        let h = 1e-6;
        for c in 0..2 {
            let mut mp = mu.clone();
            mp[[0, c]] += h;
            let mut mm = mu.clone();
            mm[[0, c]] -= h;
            let fd = (logp(&mp) - logp(&mm)) / (2.0 * h);
            assert_relative_eq!(grad[[0, c]], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn single_tuple_estimate_is_the_scaled_score_gradient() {
        // With one tuple and weight w, the estimate must equal
        // T * w * grad log p; the reference value is computed with plain
        // arithmetic and finite differences.
        let g = small_generator(3, 3);
        let tuples = random_tuples(&g, 1, 4);
        let sample = tuples[1].clone();
        let w = 0.83;
        let t_max = 3.0;
        let loss = |net: &MlpNet| {
            let g2 = GeneratorNet::new(net.clone(), g.schedule.clone()).unwrap();
            let mu = g2.predicted_mean(
                &sample.x_next.clone().insert_axis(ndarray::Axis(0)),
                sample.t,
            )?;
            let var = g2.schedule.step_variance(sample.t);
            let d0 = sample.x_curr[0] - mu[[0, 0]];
            let d1 = sample.x_curr[1] - mu[[0, 1]];
            let value = t_max * w * (-(d0 * d0 + d1 * d1) / (2.0 * var));
            let grad = policy_grad_weighted(&g2, &[sample.clone()], &[w])?;
            Ok((value, grad))
        };
        let err = finite_diff_check(&g.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "single-tuple score gradient error {err}");
    }

    #[test]
    fn zero_weights_give_a_zero_gradient() {
        let g = small_generator(5, 3);
        let tuples = random_tuples(&g, 4, 6);
        let grad = policy_grad_weighted(&g, &tuples, &vec![0.0; tuples.len()]).unwrap();
        assert!(grad.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn estimate_is_linear_in_the_weights() {
        let g = small_generator(7, 3);
        let tuples = random_tuples(&g, 3, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let w1: Vec<f64> = (0..tuples.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..tuples.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let g1 = policy_grad_weighted(&g, &tuples, &w1).unwrap();
        let g2 = policy_grad_weighted(&g, &tuples, &w2).unwrap();
        let gs = policy_grad_weighted(&g, &tuples, &sum).unwrap();
        for i in 0..g1.len() {
            assert_relative_eq!(gs.0[i], g1.0[i] + g2.0[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn antithetic_noise_with_unit_weight_cancels() {
        // Two tuples sharing x_next with x_curr mirrored around the mean
        // carry opposite score terms; weight 1 on both cancels down to
        // rounding (mirroring the point is itself inexact).
        let g = small_generator(10, 3);
        let x_next = ndarray::array![0.4, -0.2];
        let mu = g
            .predicted_mean(&x_next.clone().insert_axis(ndarray::Axis(0)), 1)
            .unwrap();
        let z = ndarray::array![0.37, -0.91];
        let plus = PgSample {
            x_next: x_next.clone(),
            x_curr: &mu.row(0).to_owned() + &z,
            x0: ndarray::array![0.0, 0.0],
            t: 1,
        };
        let minus = PgSample {
            x_curr: &mu.row(0).to_owned() - &z,
            ..plus.clone()
        };
        let grad = policy_grad_weighted(&g, &[plus, minus], &[1.0, 1.0]).unwrap();
        assert!(grad.norm() < 1e-12, "residual {}", grad.norm());
    }

    #[test]
    fn baseline_route_equals_weight_shifted_route() {
        let g = small_generator(11, 3);
        let critic = small_critic(12);
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![5],
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let baseline = BaselineNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap();
        let tuples = random_tuples(&g, 4, 14);

        let via_baseline = policy_grad_baseline(&g, &critic, &baseline, &tuples).unwrap();

        let mut weights = Vec::new();
        for s in &tuples {
            let x0 = s.x0.clone().insert_axis(ndarray::Axis(0));
            let xn = s.x_next.clone().insert_axis(ndarray::Axis(0));
            let f = critic.value(&x0).unwrap()[0];
            let v = baseline.value(&xn, s.t + 1).unwrap()[0];
            weights.push(f - v);
        }
        let via_weights = policy_grad_weighted(&g, &tuples, &weights).unwrap();
        for i in 0..via_baseline.len() {
            assert_relative_eq!(via_baseline.0[i], via_weights.0[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn plain_route_equals_critic_weighted_route() {
        let g = small_generator(15, 2);
        let critic = small_critic(16);
        let tuples = random_tuples(&g, 5, 17);
        let a = policy_grad(&g, &critic, &tuples).unwrap();
        let mut weights = Vec::new();
        for s in &tuples {
            let x0 = s.x0.clone().insert_axis(ndarray::Axis(0));
            weights.push(critic.value(&x0).unwrap()[0]);
        }
        let b = policy_grad_weighted(&g, &tuples, &weights).unwrap();
        for i in 0..a.len() {
            assert_relative_eq!(a.0[i], b.0[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn pathwise_gradient_matches_finite_differences() {
        let g = small_generator(18, 3);
        let critic = small_critic(19);
        let m = 6;
        let loss = |net: &MlpNet| {
            let g2 = GeneratorNet::new(net.clone(), g.schedule.clone()).unwrap();
            // Plain value route with the same noise stream.
            let mut r = ChaCha12Rng::seed_from_u64(55);
            let states = sample_trajectories_batched(&g2, m, &mut r).unwrap();
            let value = critic.value(states.last().unwrap()).unwrap().mean().unwrap();
            let mut r2 = ChaCha12Rng::seed_from_u64(55);
            let (taped, grad) = pathwise_grad(&g2, &critic, m, &mut r2)?;
            assert_relative_eq!(taped, value, max_relative = 1e-10);
            Ok((value, grad))
        };
        let err = finite_diff_check(&g.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "pathwise gradient error {err}");
    }

    #[test]
    fn pathwise_gradient_leaves_the_critic_out() {
        let g = small_generator(20, 2);
        let critic = small_critic(21);
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let (_, grad) = pathwise_grad(&g, &critic, 4, &mut rng).unwrap();
        assert_eq!(grad.len(), g.net.spec.param_count());
        assert!(grad.norm() > 0.0);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn clipping_is_idempotent_and_direction_preserving(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..12),
            max_norm in 0.01f64..5.0,
        ) {
            let original = GradVector(vals);
            let mut clipped = original.clone();
            clip_global_norm(&mut clipped, max_norm);
            // Cap holds up to one rounding step of the rescale.
            proptest::prop_assert!(clipped.norm() <= max_norm * (1.0 + 1e-12));
            let dot: f64 = original.0.iter().zip(&clipped.0).map(|(a, b)| a * b).sum();
            let denom = original.norm() * clipped.norm();
            if denom > 0.0 {
                proptest::prop_assert!(dot / denom > 1.0 - 1e-12);
            }
            let mut twice = clipped.clone();
            clip_global_norm(&mut twice, max_norm);
            for (a, b) in clipped.0.iter().zip(&twice.0) {
                proptest::prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn clipping_caps_the_norm_and_reports_the_original() {
        let mut small = GradVector(vec![0.3, -0.4]);
        let before = clip_global_norm(&mut small, 1.0);
        assert_relative_eq!(before, 0.5, max_relative = 1e-15);
        assert_eq!(small.0, vec![0.3, -0.4]);

        let mut big = GradVector(vec![3.0, -4.0]);
        let before = clip_global_norm(&mut big, 1.0);
        assert_relative_eq!(before, 5.0, max_relative = 1e-15);
        assert_relative_eq!(big.norm(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(big.0[0], 0.6, max_relative = 1e-12);
    }

    #[test]
    fn empty_or_mismatched_inputs_are_rejected() {
        let g = small_generator(23, 2);
        assert!(policy_grad_weighted(&g, &[], &[]).is_err());
        let tuples = random_tuples(&g, 1, 24);
        assert!(policy_grad_weighted(&g, &tuples, &[1.0]).is_err());
    }
}
