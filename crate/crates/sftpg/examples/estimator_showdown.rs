//! Compare the three generator-gradient estimators on the same problem.
//!
//! A briefly pretrained cluster sampler and a fixed random critic define the
//! objective E[f(x_0)]. Each round draws fresh chains and asks every
//! estimator for the gradient of that objective; across rounds the three
//! estimates should agree in direction while differing sharply in spread,
//! with the pathwise estimator tightest and the raw score-function estimator
//! loosest. The baseline is regressed onto critic values first, which is what
//! lets it cancel variance instead of adding it.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sftpg::adversary::{baseline_reg, BaselineNet, CriticNet};
use sftpg::diffusion::{sample_trajectories_batched, split_into_trajectories};
use sftpg::evalkit::ToyDataset;
use sftpg::finetune::{pretrain, TrainConfig};
use sftpg::gradients::{
    pathwise_grad, policy_grad, policy_grad_baseline, tuples_from_trajectory, PgSample,
};
use sftpg::nn::{adam_step, AdamState, GradVector, MlpNet};

fn norm(v: &GradVector) -> f64 {
    v.norm()
}

fn cosine(a: &GradVector, b: &GradVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    dot / (a.norm() * b.norm())
}

fn mean_grad(grads: &[GradVector]) -> GradVector {
    let mut acc = GradVector(vec![0.0; grads[0].0.len()]);
    for g in grads {
        acc.add_scaled(g, 1.0 / grads.len() as f64);
    }
    acc
}

/// Mean squared distance to the round mean, a scalar spread measure.
fn scatter(grads: &[GradVector], center: &GradVector) -> f64 {
    grads
        .iter()
        .map(|g| {
            g.0.iter()
                .zip(&center.0)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
        })
        .sum::<f64>()
        / grads.len() as f64
}

fn tuple_arrays(tuples: &[PgSample]) -> (Vec<usize>, Array2<f64>, Array2<f64>) {
    let dim = tuples[0].x0.len();
    let mut x0 = Array2::zeros((tuples.len(), dim));
    let mut x_next = Array2::zeros((tuples.len(), dim));
    let mut levels = Vec::with_capacity(tuples.len());
    for (i, s) in tuples.iter().enumerate() {
        x0.row_mut(i).assign(&s.x0);
        x_next.row_mut(i).assign(&s.x_next);
        levels.push(s.t + 1);
    }
    (levels, x0, x_next)
}

fn main() -> sftpg::Result<()> {
    let cfg = TrainConfig {
        dataset: ToyDataset::GaussianCluster,
        t_max: 4,
        data_noise: 0.05,
        n_train: 512,
        pretrain_epochs: 100,
        gen_hidden: vec![64, 64],
        critic_hidden: vec![64, 64],
        baseline_hidden: vec![64, 64],
        seed: 11,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let g = pretrain(&cfg, &mut rng)?;
    let critic = CriticNet::new(MlpNet::init(cfg.critic_spec(), &mut rng)?)?;

    // Fit the baseline to the critic under the current sampler: draw one
    // large batch of tuples and regress V(x_next, t+1) onto f(x_0).
    let mut baseline = BaselineNet::new(MlpNet::init(cfg.baseline_spec(), &mut rng)?)?;
    let states = sample_trajectories_batched(&g, 512, &mut rng)?;
    let fit_tuples: Vec<PgSample> = split_into_trajectories(&states, 0)
        .iter()
        .flat_map(tuples_from_trajectory)
        .collect();
    let (levels, x0, x_next) = tuple_arrays(&fit_tuples);
    let f_x0 = critic.value(&x0)?;
    let mut adam = AdamState::new(baseline.net.params.len(), 1e-2);
    let (before, _) = baseline_reg(&baseline, &f_x0, &x_next, &levels)?;
    for _ in 0..300 {
        // The returned gradient is of the squared error itself, so a plain
        // descent step shrinks it.
        let (_, grad) = baseline_reg(&baseline, &f_x0, &x_next, &levels)?;
        adam_step(&mut baseline.net.params, &mut adam, &grad)?;
    }
    let (after, _) = baseline_reg(&baseline, &f_x0, &x_next, &levels)?;
    println!("baseline regression: {before:.4} -> {after:.4}");

    let rounds = 12;
    let m = 256;
    let mut pg = Vec::new();
    let mut pgb = Vec::new();
    let mut pw = Vec::new();
    for _ in 0..rounds {
        let states = sample_trajectories_batched(&g, m, &mut rng)?;
        let tuples: Vec<PgSample> = split_into_trajectories(&states, 0)
            .iter()
            .flat_map(tuples_from_trajectory)
            .collect();
        pg.push(policy_grad(&g, &critic, &tuples)?);
        pgb.push(policy_grad_baseline(&g, &critic, &baseline, &tuples)?);
        let (_, grad) = pathwise_grad(&g, &critic, m, &mut rng)?;
        pw.push(grad);
    }

    let (mpg, mpgb, mpw) = (mean_grad(&pg), mean_grad(&pgb), mean_grad(&pw));
    println!("\n{rounds} rounds of {m} chains each:");
    println!("{:<22} {:>10} {:>12}", "estimator", "mean norm", "scatter");
    println!("{:<22} {:>10.4} {:>12.4}", "policy_grad", norm(&mpg), scatter(&pg, &mpg));
    println!("{:<22} {:>10.4} {:>12.4}", "policy_grad_baseline", norm(&mpgb), scatter(&pgb, &mpgb));
    println!("{:<22} {:>10.4} {:>12.4}", "pathwise_grad", norm(&mpw), scatter(&pw, &mpw));
    println!("\ncosine(policy_grad, pathwise)          = {:+.4}", cosine(&mpg, &mpw));
    println!("cosine(policy_grad_baseline, pathwise) = {:+.4}", cosine(&mpgb, &mpw));
    Ok(())
}
