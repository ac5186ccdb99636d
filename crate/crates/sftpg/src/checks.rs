//! Named finite-difference checks over every gradient path in the crate.
//!
//! All nets here use softplus so no probe step can cross a relu kink; the
//! seeds and inputs are fixed so the reported errors are reproducible. The
//! `gradcheck` subcommand prints the table; tests assert every entry stays
//! under [`GRADCHECK_TOL`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::adversary::{
    baseline_reg, critic_objective_baseline, critic_objective_gp, gradient_penalty_at, ipm_gap,
    BaselineNet, CriticNet,
};
use crate::diffusion::{
    make_schedule, pretrain_draws, pretrain_loss_given, sample_trajectories_batched,
    split_into_trajectories, GeneratorNet, NoiseSchedule, SamplerVariance,
};
use crate::gradients::{pathwise_grad, policy_grad_weighted, tuples_from_trajectory};
use crate::nn::{finite_diff_check, Activation, MlpNet, MlpSpec, Tape};
use crate::Result;

/// Every analytic gradient must match central differences this closely.
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Worst relative error of one gradient path against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: &'static str,
    pub max_err: f64,
}

fn spec(output_dim: usize, time_embed_dim: usize) -> MlpSpec {
    MlpSpec {
        input_dim: 2,
        hidden_dims: vec![6],
        output_dim,
        activation: Activation::Softplus,
        time_embed_dim,
    }
}

fn schedule() -> NoiseSchedule {
    make_schedule(3, 0.05, 0.5, SamplerVariance::Beta).expect("static schedule")
}

fn net(s: MlpSpec, seed: u64) -> MlpNet {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    MlpNet::init(s, &mut rng).expect("static spec")
}

fn points(rows: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, 2), |_| rng.random_range(-1.0..1.0))
}

/// Run the whole suite. Each entry pairs a gradient path with the worst
/// relative error `finite_diff_check` found for it.
pub fn gradient_check_suite() -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    let eps = 1e-5;

    // Noise-matching pretraining loss.
    {
        let g_net = net(spec(2, 4), 1);
        let sched = schedule();
        let x0 = points(4, 2);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (ts, eps_draws) = pretrain_draws(sched.t_max, x0.nrows(), 2, &mut rng);
        let err = finite_diff_check(
            &g_net,
            |n| {
                let g = GeneratorNet::new(n.clone(), sched.clone())?;
                pretrain_loss_given(&g, &x0, &ts, &eps_draws)
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "pretrain_loss",
            max_err: err,
        });
    }

    // Critic gap, penalty, and the combined penalty objective.
    let critic = CriticNet::new(net(spec(1, 0), 4))?;
    let gen_x0 = points(4, 5);
    let data = points(4, 6);
    {
        let err = finite_diff_check(
            &critic.net,
            |n| ipm_gap(&CriticNet::new(n.clone())?, &gen_x0, &data),
            eps,
        )?;
        out.push(GradCheck {
            name: "ipm_gap",
            max_err: err,
        });

        let pts = points(5, 7);
        let err = finite_diff_check(
            &critic.net,
            |n| gradient_penalty_at(&CriticNet::new(n.clone())?, &pts),
            eps,
        )?;
        out.push(GradCheck {
            name: "gradient_penalty",
            max_err: err,
        });

        let err = finite_diff_check(
            &critic.net,
            |n| {
                let upd =
                    critic_objective_gp(&CriticNet::new(n.clone())?, &gen_x0, &data, &pts, 0.37)?;
                Ok((upd.objective, upd.critic_grad))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "critic_objective_gp",
            max_err: err,
        });
    }

    // Baseline regression and both sides of the joint objective.
    {
        let baseline = BaselineNet::new(net(spec(1, 4), 8))?;
        let f_x0 = ndarray::array![0.7, -0.4, 1.2, 0.1];
        let x_next = points(4, 9);
        let levels = [1usize, 3, 2, 1];
        let err = finite_diff_check(
            &baseline.net,
            |n| baseline_reg(&BaselineNet::new(n.clone())?, &f_x0, &x_next, &levels),
            eps,
        )?;
        out.push(GradCheck {
            name: "baseline_regression",
            max_err: err,
        });

        let tup_x0 = points(4, 10);
        let err = finite_diff_check(
            &critic.net,
            |n| {
                let upd = critic_objective_baseline(
                    &CriticNet::new(n.clone())?,
                    &baseline,
                    &gen_x0,
                    &data,
                    &tup_x0,
                    &x_next,
                    &levels,
                    0.3,
                )?;
                Ok((upd.objective, upd.critic_grad))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "critic_objective_baseline/critic",
            max_err: err,
        });

        let err = finite_diff_check(
            &baseline.net,
            |n| {
                let upd = critic_objective_baseline(
                    &critic,
                    &BaselineNet::new(n.clone())?,
                    &gen_x0,
                    &data,
                    &tup_x0,
                    &x_next,
                    &levels,
                    0.3,
                )?;
                Ok((upd.objective, upd.baseline_grad.expect("joint objective")))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "critic_objective_baseline/baseline",
            max_err: err,
        });
    }

    // Reverse-step mean as a function of the net, `mean ||mu||^2` probe.
    {
        let g = GeneratorNet::new(net(spec(2, 4), 16), schedule())?;
        let x_next = points(4, 17);
        let sched = g.schedule.clone();
        let err = finite_diff_check(
            &g.net,
            |n| {
                let g2 = GeneratorNet::new(n.clone(), sched.clone())?;
                let mut tape = Tape::new();
                let vars = g2.net.stage(&mut tape, true);
                let xv = tape.constant(x_next.clone());
                let mu = g2.predicted_mean_var(&mut tape, &vars, xv, 1)?;
                let sq = tape.square(mu);
                let l = tape.mean_all(sq);
                let grads = tape.backward(l)?;
                Ok((tape.scalar(l), vars.collect_grads(&grads)))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "predicted_mean",
            max_err: err,
        });
    }

    // Score-function surrogate, checked against the plain log-density value.
    {
        let g = GeneratorNet::new(net(spec(2, 4), 11), schedule())?;
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let states = sample_trajectories_batched(&g, 2, &mut rng)?;
        let sample = split_into_trajectories(&states, 12)
            .iter()
            .flat_map(tuples_from_trajectory)
            .nth(1)
            .expect("two chains of three tuples");
        let w = 0.83;
        let t_max = g.schedule.t_max as f64;
        let sched = g.schedule.clone();
        let err = finite_diff_check(
            &g.net,
            |n| {
                let g2 = GeneratorNet::new(n.clone(), sched.clone())?;
                let mu = g2.predicted_mean(
                    &sample.x_next.clone().insert_axis(ndarray::Axis(0)),
                    sample.t,
                )?;
                let var = g2.schedule.step_variance(sample.t);
                let sq = (0..2)
                    .map(|c| (sample.x_curr[c] - mu[[0, c]]).powi(2))
                    .sum::<f64>();
                let value = t_max * w * (-sq / (2.0 * var));
                let grad = policy_grad_weighted(&g2, std::slice::from_ref(&sample), &[w])?;
                Ok((value, grad))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "policy_score_surrogate",
            max_err: err,
        });
    }

    // Pathwise chain, value recomputed through the plain sampling route.
    {
        let g = GeneratorNet::new(net(spec(2, 4), 13), schedule())?;
        let critic = CriticNet::new(net(spec(1, 0), 14))?;
        let sched = g.schedule.clone();
        let err = finite_diff_check(
            &g.net,
            |n| {
                let g2 = GeneratorNet::new(n.clone(), sched.clone())?;
                let mut r1 = ChaCha12Rng::seed_from_u64(15);
                let states = sample_trajectories_batched(&g2, 3, &mut r1)?;
                let scores = critic.value(states.last().expect("chain has states"))?;
                let value = scores.sum() / scores.len() as f64;
                let mut r2 = ChaCha12Rng::seed_from_u64(15);
                let (_, grad) = pathwise_grad(&g2, &critic, 3, &mut r2)?;
                Ok((value, grad))
            },
            eps,
        )?;
        out.push(GradCheck {
            name: "pathwise_chain",
            max_err: err,
        });
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gradient_path_matches_finite_differences() {
        let suite = gradient_check_suite().unwrap();
        assert_eq!(suite.len(), 10);
        for check in &suite {
            assert!(
                check.max_err < GRADCHECK_TOL,
                "{} error {}",
                check.name,
                check.max_err
            );
        }
    }
}
