//! Train the critic against a frozen generator and watch the adversarial
//! machinery work: the mean-difference gap between data and model samples
//! grows as the critic learns to separate them, while the baseline head is
//! regressed toward the critic's own values along sampled chains.
//!
//! This is exactly one half of the fine-tuning loop. With the generator
//! frozen the gap cannot be driven back down, so it climbs for a long
//! stretch and then bounces around a level set by minibatch noise. The
//! regression residual chases a moving target: as the critic's values grow,
//! so does the squared error the baseline head has to close, which is why
//! that column rises alongside the gap instead of falling.

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sftpg::adversary::{critic_objective_baseline, BaselineNet, CriticNet};
use sftpg::diffusion::{sample_trajectories_batched, split_into_trajectories};
use sftpg::evalkit::{gen_dataset, ToyDataset};
use sftpg::finetune::{pretrain, TrainConfig};
use sftpg::gradients::{tuples_from_trajectory, PgSample};
use sftpg::nn::{adam_step, AdamState, MlpNet};

fn main() -> sftpg::Result<()> {
    let cfg = TrainConfig {
        dataset: ToyDataset::TwoMoons,
        t_max: 6,
        n_train: 1024,
        pretrain_epochs: 60,
        gen_hidden: vec![64, 64],
        critic_hidden: vec![64, 64],
        baseline_hidden: vec![64, 64],
        seed: 5,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);

    // A barely pretrained generator: good enough to be nontrivial to
    // separate from data at first, bad enough that a trained critic can.
    let g = pretrain(&cfg, &mut rng)?;
    let pool = gen_dataset(cfg.dataset, cfg.n_train, cfg.data_noise, &mut rng)?;

    let mut critic = CriticNet::new(MlpNet::init(cfg.critic_spec(), &mut rng)?)?;
    let mut baseline = BaselineNet::new(MlpNet::init(cfg.baseline_spec(), &mut rng)?)?;
    let mut adam_c = AdamState::new(critic.net.params.len(), cfg.lr_critic);
    let mut adam_b = AdamState::new(baseline.net.params.len(), cfg.lr_critic);

    println!("{:>6}  {:>10}  {:>12}", "round", "ipm_gap", "baseline_reg");
    let rows: Vec<usize> = (0..pool.nrows()).collect();
    for round in 0..200 {
        let states = sample_trajectories_batched(&g, cfg.batch_m, &mut rng)?;
        let trajs = split_into_trajectories(&states, 0);
        let tuples: Vec<PgSample> = trajs.iter().flat_map(tuples_from_trajectory).collect();
        let dim = cfg.data_dim;
        let mut tx0 = Array2::zeros((tuples.len(), dim));
        let mut txn = Array2::zeros((tuples.len(), dim));
        let mut levels = Vec::with_capacity(tuples.len());
        for (i, s) in tuples.iter().enumerate() {
            tx0.row_mut(i).assign(&s.x0);
            txn.row_mut(i).assign(&s.x_next);
            levels.push(s.t + 1);
        }
        let gen_x0 = states.last().expect("chain is never empty");
        let picks: Vec<usize> = rows.choose_multiple(&mut rng, cfg.batch_m).copied().collect();
        let mut data = Array2::zeros((cfg.batch_m, dim));
        for (i, &r) in picks.iter().enumerate() {
            data.row_mut(i).assign(&pool.row(r));
        }

        let upd = critic_objective_baseline(
            &critic, &baseline, gen_x0, &data, &tx0, &txn, &levels, cfg.lambda,
        )?;
        // Gradients point up the objective; Adam minimizes, so negate both.
        let mut cg = upd.critic_grad;
        cg.scale(-1.0);
        adam_step(&mut critic.net.params, &mut adam_c, &cg)?;
        let mut bg = upd.baseline_grad.expect("baseline objective always returns its gradient");
        bg.scale(-1.0);
        adam_step(&mut baseline.net.params, &mut adam_b, &bg)?;

        if round % 25 == 0 || round == 199 {
            println!("{round:>6}  {:>10.5}  {:>12.5}", upd.gap, upd.reg);
        }
    }
    Ok(())
}
