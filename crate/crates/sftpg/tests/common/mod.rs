//! Builders shared by the integration tests.
//!
//! The centerpiece is a single-step sampler with a closed form: a linear
//! net planted so the reverse-step mean is a constant `theta`, paired with
//! an identity critic. Every estimator then targets
//! `d/dtheta E[x_0] = 1` exactly, which pins down unbiasedness without
//! trusting any of the code under test.

#![allow(dead_code)]

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sftpg::adversary::{BaselineNet, CriticNet};
use sftpg::diffusion::{
    make_schedule, sample_trajectories_batched, split_into_trajectories, GeneratorNet,
    SamplerVariance,
};
use sftpg::gradients::{tuples_from_trajectory, PgSample};
use sftpg::nn::{Activation, MlpNet, MlpSpec};

/// Step size of the single-step oracle. At `T = 1` the chain is
/// `x_1 ~ N(0, 1)`, `x_0 ~ N(mu(x_1), beta)`, and `1 - alpha_bar_1 = beta`,
/// so both the epsilon coefficient and the step deviation are `sqrt(beta)`.
/// Betas must stay inside the open unit interval, so this sits as close to
/// a unit step variance as that constraint allows.
pub const ORACLE_BETA: f64 = 0.9999;

/// Standard deviation of the oracle's one transition.
pub fn oracle_sigma() -> f64 {
    ORACLE_BETA.sqrt()
}

fn linear_spec(dim: usize) -> MlpSpec {
    MlpSpec {
        input_dim: dim,
        hidden_dims: vec![],
        output_dim: dim,
        activation: Activation::Softplus,
        time_embed_dim: 0,
    }
}

/// Single-step sampler whose reverse mean is the constant `theta`:
/// `eps_hat(x) = (x - sqrt(alpha) * theta) / sqrt(beta)` cancels the `x`
/// dependence inside the predicted mean exactly.
pub fn oracle_generator(theta: f64) -> GeneratorNet {
    let c = ORACLE_BETA.sqrt();
    let sqrt_alpha = (1.0 - ORACLE_BETA).sqrt();
    let params = vec![1.0 / c, -sqrt_alpha * theta / c];
    let net = MlpNet::from_params(linear_spec(1), params).unwrap();
    let sched = make_schedule(1, ORACLE_BETA, ORACLE_BETA, SamplerVariance::PosteriorBeta).unwrap();
    GeneratorNet::new(net, sched).unwrap()
}

/// Map an estimator's bias-component gradient to the `theta` derivative.
/// The net carries `theta` only through its bias, `b = -sqrt(alpha) / c *
/// theta`, so `dPhi/dtheta = dPhi/db * (-sqrt(alpha) / c)`.
pub fn theta_grad(grad_bias: f64) -> f64 {
    let c = ORACLE_BETA.sqrt();
    grad_bias * (-(1.0 - ORACLE_BETA).sqrt() / c)
}

/// `f(x) = x` in one dimension.
pub fn identity_critic() -> CriticNet {
    let spec = MlpSpec {
        input_dim: 1,
        hidden_dims: vec![],
        output_dim: 1,
        activation: Activation::Softplus,
        time_embed_dim: 0,
    };
    CriticNet::new(MlpNet::from_params(spec, vec![1.0, 0.0]).unwrap()).unwrap()
}

/// `V(x, t) = v` regardless of input.
pub fn constant_baseline(v: f64) -> BaselineNet {
    let spec = MlpSpec {
        input_dim: 1,
        hidden_dims: vec![],
        output_dim: 1,
        activation: Activation::Softplus,
        time_embed_dim: 0,
    };
    BaselineNet::new(MlpNet::from_params(spec, vec![0.0, v]).unwrap()).unwrap()
}

/// All transition tuples of `m` fresh chains.
pub fn sample_tuples(g: &GeneratorNet, m: usize, seed: u64) -> Vec<PgSample> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let states = sample_trajectories_batched(g, m, &mut rng).unwrap();
    split_into_trajectories(&states, seed)
        .iter()
        .flat_map(tuples_from_trajectory)
        .collect()
}

/// Mean, and the standard error of that mean, of a slice of estimates.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// A generic linear multi-step sampler (no closed form needed, just smooth
/// and cheap) for agreement and variance experiments at `T > 1`.
pub fn linear_chain_generator(t_max: usize, w: f64, b: f64) -> GeneratorNet {
    let net = MlpNet::from_params(linear_spec(1), vec![w, b]).unwrap();
    let sched = make_schedule(t_max, 0.2, 0.5, SamplerVariance::PosteriorBeta).unwrap();
    GeneratorNet::new(net, sched).unwrap()
}

pub fn uniform_cloud(n: usize, scale: f64, rng: &mut ChaCha12Rng) -> Array2<f64> {
    use rand::Rng;
    Array2::from_shape_fn((n, 2), |_| rng.random_range(-scale..scale))
}
