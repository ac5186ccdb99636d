//! Critic and value-baseline nets with their training objectives.
//!
//! The critic `f` scores points; its training signal is the gap
//! `mean f(generated) - mean f(data)`, ascended under one of two
//! regularizers: a gradient penalty on segment interpolates, or the
//! baseline regression term `mean (f(x0) - V(x_{t+1}, t+1))^2`. The second
//! form trains critic and baseline jointly on one tape: ascending the
//! objective pushes `V` toward the regression solution and keeps `f`
//! predictable from intermediate states.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::diffusion::select_rows;
use crate::nn::{GradVector, MlpNet, Tape, Var};
use crate::{Error, Result};

/// IPM critic: points to scalar scores, no time input.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub net: MlpNet,
}

impl CriticNet {
    pub fn new(net: MlpNet) -> Result<Self> {
        if net.spec.output_dim != 1 {
            return Err(Error::invalid_arg("critic must be scalar-valued"));
        }
        if net.spec.time_embed_dim != 0 {
            return Err(Error::invalid_arg("critic takes no timestep input"));
        }
        Ok(CriticNet { net })
    }

    /// Scores for a batch, one per row.
    pub fn value(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward(x, None)?.column(0).to_owned())
    }
}

/// Value baseline `V(x, level)`: scalar-valued, usually time-conditioned.
#[derive(Debug, Clone)]
pub struct BaselineNet {
    pub net: MlpNet,
}

impl BaselineNet {
    pub fn new(net: MlpNet) -> Result<Self> {
        if net.spec.output_dim != 1 {
            return Err(Error::invalid_arg("baseline must be scalar-valued"));
        }
        Ok(BaselineNet { net })
    }

    fn time_arg(&self, level: usize) -> Option<usize> {
        if self.net.spec.time_embed_dim > 0 {
            Some(level)
        } else {
            None
        }
    }

    pub fn value(&self, x: &Array2<f64>, level: usize) -> Result<Array1<f64>> {
        Ok(self.net.forward(x, self.time_arg(level))?.column(0).to_owned())
    }
}

fn check_nonempty(name: &str, x: &Array2<f64>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::invalid_arg(format!("{name} batch is empty")));
    }
    Ok(())
}

/// `mean f(gen) - mean f(data)` and its gradient in the critic parameters.
pub fn ipm_gap(
    critic: &CriticNet,
    gen_x0: &Array2<f64>,
    data: &Array2<f64>,
) -> Result<(f64, GradVector)> {
    check_nonempty("generated", gen_x0)?;
    check_nonempty("data", data)?;
    let mut tape = Tape::new();
    let vars = critic.net.stage(&mut tape, true);
    let g = tape.constant(gen_x0.clone());
    let d = tape.constant(data.clone());
    let fg = vars.forward(&mut tape, g, None)?;
    let fd = vars.forward(&mut tape, d, None)?;
    let mg = tape.mean_all(fg);
    let md = tape.mean_all(fd);
    let gap = tape.sub(mg, md);
    let grads = tape.backward(gap)?;
    Ok((tape.scalar(gap), vars.collect_grads(&grads)))
}

/// Gap value without gradients, for logging and evaluation.
pub fn ipm_gap_value(critic: &CriticNet, gen_x0: &Array2<f64>, data: &Array2<f64>) -> Result<f64> {
    check_nonempty("generated", gen_x0)?;
    check_nonempty("data", data)?;
    let fg = critic.value(gen_x0)?;
    let fd = critic.value(data)?;
    Ok(fg.mean().unwrap() - fd.mean().unwrap())
}

/// Rowwise segment interpolates `u x_data + (1 - u) x_gen`, `u ~ U[0,1]`.
/// Batches must be the same size.
pub fn interpolates<R: Rng + ?Sized>(
    gen_x0: &Array2<f64>,
    data: &Array2<f64>,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if gen_x0.dim() != data.dim() {
        return Err(Error::invalid_arg(
            "interpolates need equally sized batches",
        ));
    }
    let mut out = Array2::zeros(gen_x0.dim());
    for r in 0..gen_x0.nrows() {
        let u: f64 = rng.random_range(0.0..1.0);
        for c in 0..gen_x0.ncols() {
            out[[r, c]] = u * data[[r, c]] + (1.0 - u) * gen_x0[[r, c]];
        }
    }
    Ok(out)
}

const GP_NORM_SHIFT: f64 = 1e-12;

/// Penalty `mean_r (||grad_x f(points_r)|| - 1)^2` at explicit points,
/// with its gradient in the critic parameters. The input-gradient sweep is
/// recorded on the tape, so the parameter gradient of the penalty is exact
/// for the shifted norm.
pub fn gradient_penalty_at(critic: &CriticNet, points: &Array2<f64>) -> Result<(f64, GradVector)> {
    check_nonempty("penalty", points)?;
    let mut tape = Tape::new();
    let vars = critic.net.stage(&mut tape, true);
    let p = tape.constant(points.clone());
    let (_out, gin) = vars.forward_with_input_grad(&mut tape, p)?;
    let sq = tape.square(gin);
    let row = tape.sum_cols(sq);
    let norm = tape.sqrt_shift(row, GP_NORM_SHIFT);
    let dm1 = tape.add_scalar(norm, -1.0);
    let pen = tape.square(dm1);
    let mean = tape.mean_all(pen);
    let grads = tape.backward(mean)?;
    Ok((tape.scalar(mean), vars.collect_grads(&grads)))
}

/// Penalty over fresh interpolates between a generated and a data batch.
pub fn gradient_penalty<R: Rng + ?Sized>(
    critic: &CriticNet,
    gen_x0: &Array2<f64>,
    data: &Array2<f64>,
    rng: &mut R,
) -> Result<(f64, GradVector)> {
    let pts = interpolates(gen_x0, data, rng)?;
    gradient_penalty_at(critic, &pts)
}

/// Regression term `mean_i (f_x0[i] - V(x_next_i, next_levels[i]))^2` with
/// its gradient in the baseline parameters. `next_levels[i]` is the level of
/// `x_next` row `i`, i.e. transition index plus one.
pub fn baseline_reg(
    baseline: &BaselineNet,
    f_x0: &Array1<f64>,
    x_next: &Array2<f64>,
    next_levels: &[usize],
) -> Result<(f64, GradVector)> {
    check_nonempty("tuple", x_next)?;
    if f_x0.len() != x_next.nrows() || next_levels.len() != x_next.nrows() {
        return Err(Error::invalid_arg("tuple arrays must have equal length"));
    }
    let mut tape = Tape::new();
    let vars = baseline.net.stage(&mut tape, true);
    let mut acc: Option<Var> = None;
    for (level, idx) in group_by(next_levels) {
        let x_g = select_rows(x_next, &idx);
        let f_g = Array2::from_shape_fn((idx.len(), 1), |(r, _)| f_x0[idx[r]]);
        let xv = tape.constant(x_g);
        let v = vars.forward(&mut tape, xv, baseline.time_arg(level))?;
        let fv = tape.constant(f_g);
        let diff = tape.sub(fv, v);
        let sq = tape.square(diff);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let total = acc.expect("nonempty tuples");
    let mean = tape.scale(total, 1.0 / x_next.nrows() as f64);
    let grads = tape.backward(mean)?;
    Ok((tape.scalar(mean), vars.collect_grads(&grads)))
}

/// One critic round's worth of objective pieces. `objective` is the quantity
/// the critic ascends; gradients are of `objective`, so ascent negates them
/// before an optimizer step that minimizes.
#[derive(Debug, Clone)]
pub struct CriticUpdate {
    pub gap: f64,
    pub reg: f64,
    pub objective: f64,
    pub critic_grad: GradVector,
    pub baseline_grad: Option<GradVector>,
}

/// Gradient-penalty form: `objective = gap - eta * penalty(gp_points)`.
pub fn critic_objective_gp(
    critic: &CriticNet,
    gen_x0: &Array2<f64>,
    data: &Array2<f64>,
    gp_points: &Array2<f64>,
    eta: f64,
) -> Result<CriticUpdate> {
    check_nonempty("generated", gen_x0)?;
    check_nonempty("data", data)?;
    check_nonempty("penalty", gp_points)?;
    let mut tape = Tape::new();
    let vars = critic.net.stage(&mut tape, true);

    let g = tape.constant(gen_x0.clone());
    let d = tape.constant(data.clone());
    let fg = vars.forward(&mut tape, g, None)?;
    let fd = vars.forward(&mut tape, d, None)?;
    let mg = tape.mean_all(fg);
    let md = tape.mean_all(fd);
    let gap = tape.sub(mg, md);

    let p = tape.constant(gp_points.clone());
    let (_out, gin) = vars.forward_with_input_grad(&mut tape, p)?;
    let sq = tape.square(gin);
    let row = tape.sum_cols(sq);
    let norm = tape.sqrt_shift(row, GP_NORM_SHIFT);
    let dm1 = tape.add_scalar(norm, -1.0);
    let pen = tape.square(dm1);
    let reg = tape.mean_all(pen);

    let scaled = tape.scale(reg, eta);
    let obj = tape.sub(gap, scaled);
    let grads = tape.backward(obj)?;
    Ok(CriticUpdate {
        gap: tape.scalar(gap),
        reg: tape.scalar(reg),
        objective: tape.scalar(obj),
        critic_grad: vars.collect_grads(&grads),
        baseline_grad: None,
    })
}

/// Baseline-regularized form, critic and baseline on one tape:
/// `objective = gap - lambda * mean_i (f(tup_x0_i) - V(tup_x_next_i, level_i))^2`.
///
/// Both nets ascend this objective: the critic trades gap against staying
/// predictable, the baseline's only term is the regression so ascent drives
/// `V` toward the conditional mean of `f(x0)`.
#[allow(clippy::too_many_arguments)]
pub fn critic_objective_baseline(
    critic: &CriticNet,
    baseline: &BaselineNet,
    gen_x0: &Array2<f64>,
    data: &Array2<f64>,
    tup_x0: &Array2<f64>,
    tup_x_next: &Array2<f64>,
    tup_next_levels: &[usize],
    lambda: f64,
) -> Result<CriticUpdate> {
    check_nonempty("generated", gen_x0)?;
    check_nonempty("data", data)?;
    check_nonempty("tuple", tup_x0)?;
    if tup_x0.nrows() != tup_x_next.nrows() || tup_next_levels.len() != tup_x0.nrows() {
        return Err(Error::invalid_arg("tuple arrays must have equal length"));
    }
    let mut tape = Tape::new();
    let c_vars = critic.net.stage(&mut tape, true);
    let b_vars = baseline.net.stage(&mut tape, true);

    let g = tape.constant(gen_x0.clone());
    let d = tape.constant(data.clone());
    let fg = c_vars.forward(&mut tape, g, None)?;
    let fd = c_vars.forward(&mut tape, d, None)?;
    let mg = tape.mean_all(fg);
    let md = tape.mean_all(fd);
    let gap = tape.sub(mg, md);

    let mut acc: Option<Var> = None;
    for (level, idx) in group_by(tup_next_levels) {
        let x0_g = tape.constant(select_rows(tup_x0, &idx));
        let xn_g = tape.constant(select_rows(tup_x_next, &idx));
        let f = c_vars.forward(&mut tape, x0_g, None)?;
        let v = b_vars.forward(&mut tape, xn_g, baseline.time_arg(level))?;
        let diff = tape.sub(f, v);
        let sq = tape.square(diff);
        let s = tape.sum_all(sq);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    let total = acc.expect("nonempty tuples");
    let reg = tape.scale(total, 1.0 / tup_x0.nrows() as f64);

    let scaled = tape.scale(reg, lambda);
    let obj = tape.sub(gap, scaled);
    let grads = tape.backward(obj)?;
    Ok(CriticUpdate {
        gap: tape.scalar(gap),
        reg: tape.scalar(reg),
        objective: tape.scalar(obj),
        critic_grad: c_vars.collect_grads(&grads),
        baseline_grad: Some(b_vars.collect_grads(&grads)),
    })
}

fn group_by(levels: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut by: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &t) in levels.iter().enumerate() {
        by.entry(t).or_default().push(i);
    }
    by.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, Activation, MlpSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn linear_critic(w: [f64; 2], b: f64) -> CriticNet {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![],
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 0,
        };
        CriticNet::new(MlpNet::from_params(spec, vec![w[0], w[1], b]).unwrap()).unwrap()
    }

    fn random_critic(hidden: Vec<usize>, act: Activation, seed: u64) -> CriticNet {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: hidden,
            output_dim: 1,
            activation: act,
            time_embed_dim: 0,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        CriticNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap()
    }

    fn random_baseline(seed: u64) -> BaselineNet {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![8],
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        BaselineNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap()
    }

    #[test]
    fn scalar_output_is_enforced() {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![],
            output_dim: 2,
            activation: Activation::Relu,
            time_embed_dim: 0,
        };
        let net = MlpNet::zeros(spec).unwrap();
        assert!(CriticNet::new(net.clone()).is_err());
        assert!(BaselineNet::new(net).is_err());
    }

    #[test]
    fn gap_on_identical_batches_is_exactly_zero() {
        let critic = random_critic(vec![8], Activation::Relu, 1);
        let x = ndarray::array![[0.3, -0.2], [1.1, 0.4], [-0.7, 0.9]];
        let (gap, _) = ipm_gap(&critic, &x, &x).unwrap();
        assert_eq!(gap, 0.0);
        assert_eq!(ipm_gap_value(&critic, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn constant_critic_has_zero_gap() {
        let critic = linear_critic([0.0, 0.0], 4.2);
        let gen = ndarray::array![[1.0, 5.0], [3.0, -2.0]];
        let data = ndarray::array![[0.0, 7.0]];
        let (gap, grad) = ipm_gap(&critic, &gen, &data).unwrap();
        assert_eq!(gap, 0.0);
        // Bias gradient also cancels: 1 from each side.
        assert_eq!(grad.0[2], 0.0);
    }

    #[test]
    fn perfect_baseline_on_identical_batches_zeroes_the_objective() {
        // Constant critic and a baseline matching it: gap and regression
        // both vanish exactly.
        let critic = linear_critic([0.0, 0.0], 1.7);
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![],
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 0,
        };
        let baseline =
            BaselineNet::new(MlpNet::from_params(spec, vec![0.0, 0.0, 1.7]).unwrap()).unwrap();
        let x = ndarray::array![[0.4, -0.1], [0.9, 0.3]];
        let upd = critic_objective_baseline(
            &critic, &baseline, &x, &x, &x, &x, &[1, 2], 0.5,
        )
        .unwrap();
        assert_eq!(upd.gap, 0.0);
        assert_eq!(upd.reg, 0.0);
        assert_eq!(upd.objective, 0.0);
    }

    #[test]
    fn gap_of_coordinate_critic_is_difference_of_means() {
        // f(x) = x_1: gap = mean first coordinate gen - data = 2 - 0.
        let critic = linear_critic([1.0, 0.0], 0.0);
        let gen = ndarray::array![[1.0, 5.0], [3.0, -2.0]];
        let data = ndarray::array![[0.0, 7.0]];
        let (gap, _) = ipm_gap(&critic, &gen, &data).unwrap();
        assert_relative_eq!(gap, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn negating_the_critic_head_negates_the_gap_bitwise() {
        let critic = random_critic(vec![6], Activation::Softplus, 3);
        let mut flipped = critic.clone();
        let n = flipped.net.params.len();
        let head = flipped.net.spec.hidden_dims.last().copied().unwrap() + 1;
        for p in flipped.net.params[n - head..].iter_mut() {
            *p = -*p;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let gen = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((7, 2), |_| rng.random_range(-1.0..1.0));
        let a = ipm_gap_value(&critic, &gen, &data).unwrap();
        let b = ipm_gap_value(&flipped, &gen, &data).unwrap();
        assert_eq!(a, -b);
    }

    #[test]
    fn gap_gradient_matches_finite_differences() {
        let critic = random_critic(vec![6], Activation::Softplus, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let gen = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &MlpNet| {
            let c = CriticNet::new(n.clone()).unwrap();
            ipm_gap(&c, &gen, &data)
        };
        let err = finite_diff_check(&critic.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "gap gradient error {err}");
    }

    #[test]
    fn unit_slope_critic_has_near_zero_penalty() {
        let critic = linear_critic([1.0, 0.0], 0.25);
        let pts = ndarray::array![[0.1, 0.2], [-0.5, 0.9], [2.0, -1.0]];
        let (pen, _) = gradient_penalty_at(&critic, &pts).unwrap();
        assert!(pen < 1e-12, "penalty {pen}");
    }

    #[test]
    fn constant_critic_penalty_is_one() {
        let critic = linear_critic([0.0, 0.0], 3.0);
        let pts = ndarray::array![[0.1, 0.2], [-0.5, 0.9]];
        let (pen, _) = gradient_penalty_at(&critic, &pts).unwrap();
        // Zero input gradient leaves (sqrt(shift) - 1)^2, within 1e-5 of 1.
        assert_relative_eq!(pen, 1.0, max_relative = 1e-5);
    }

    #[test]
    fn double_slope_critic_penalty_is_one() {
        let critic = linear_critic([2.0, 0.0], 0.0);
        let pts = ndarray::array![[0.4, 0.6]];
        let (pen, _) = gradient_penalty_at(&critic, &pts).unwrap();
        assert_relative_eq!(pen, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let critic = random_critic(vec![7], Activation::Softplus, 8);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pts = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &MlpNet| {
            let c = CriticNet::new(n.clone()).unwrap();
            gradient_penalty_at(&c, &pts)
        };
        let err = finite_diff_check(&critic.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "penalty gradient error {err}");
    }

    #[test]
    fn interpolates_lie_on_the_connecting_segments() {
        let gen = ndarray::array![[0.0, 0.0], [1.0, 1.0], [-2.0, 4.0]];
        let data = ndarray::array![[1.0, 2.0], [3.0, 5.0], [0.0, 0.0]];
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let pts = interpolates(&gen, &data, &mut rng).unwrap();
        for r in 0..3 {
            let u = (pts[[r, 0]] - gen[[r, 0]]) / (data[[r, 0]] - gen[[r, 0]]);
            assert!((0.0..=1.0).contains(&u), "u out of range: {u}");
            let want_y = u * data[[r, 1]] + (1.0 - u) * gen[[r, 1]];
            assert_relative_eq!(pts[[r, 1]], want_y, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_baseline_reg_is_mean_square_of_scores() {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![],
            output_dim: 1,
            activation: Activation::Relu,
            time_embed_dim: 0,
        };
        let baseline = BaselineNet::new(MlpNet::zeros(spec).unwrap()).unwrap();
        let f = ndarray::array![1.0, 3.0];
        let x_next = ndarray::array![[0.5, 0.5], [0.2, -0.1]];
        let (rb, _) = baseline_reg(&baseline, &f, &x_next, &[1, 2]).unwrap();
        assert_relative_eq!(rb, (1.0 + 9.0) / 2.0, max_relative = 1e-15);
    }

    #[test]
    fn baseline_reg_gradient_matches_finite_differences() {
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![6],
            output_dim: 1,
            activation: Activation::Softplus,
            time_embed_dim: 4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let baseline = BaselineNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap();
        let f = ndarray::array![0.7, -0.4, 1.2, 0.1];
        let x_next = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let levels = [1usize, 3, 2, 1];
        let loss = |n: &MlpNet| {
            let b = BaselineNet::new(n.clone()).unwrap();
            baseline_reg(&b, &f, &x_next, &levels)
        };
        let err = finite_diff_check(&baseline.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "baseline reg gradient error {err}");
    }

    #[test]
    fn gp_objective_composes_gap_and_penalty() {
        let critic = random_critic(vec![8], Activation::Relu, 12);
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let gen = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let pts = interpolates(&gen, &data, &mut rng).unwrap();
        let eta = 0.37;
        let upd = critic_objective_gp(&critic, &gen, &data, &pts, eta).unwrap();
        let want_gap = ipm_gap_value(&critic, &gen, &data).unwrap();
        let (want_pen, _) = gradient_penalty_at(&critic, &pts).unwrap();
        assert_relative_eq!(upd.gap, want_gap, max_relative = 1e-12);
        assert_relative_eq!(upd.reg, want_pen, max_relative = 1e-12);
        assert_relative_eq!(
            upd.objective,
            want_gap - eta * want_pen,
            max_relative = 1e-12
        );
        assert!(upd.baseline_grad.is_none());
    }

    #[test]
    fn gp_objective_gradient_matches_finite_differences() {
        let critic = random_critic(vec![6], Activation::Softplus, 14);
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let gen = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let pts = interpolates(&gen, &data, &mut rng).unwrap();
        let loss = |n: &MlpNet| {
            let c = CriticNet::new(n.clone()).unwrap();
            let upd = critic_objective_gp(&c, &gen, &data, &pts, 0.5)?;
            Ok((upd.objective, upd.critic_grad))
        };
        let err = finite_diff_check(&critic.net, loss, 1e-5).unwrap();
        assert!(err < 1e-4, "gp objective gradient error {err}");
    }

    #[test]
    fn baseline_objective_composes_gap_and_regression() {
        // lambda = 0.3 worked example, checked against the standalone pieces.
        let critic = random_critic(vec![8], Activation::Relu, 16);
        let baseline = random_baseline(17);
        let mut rng = ChaCha12Rng::seed_from_u64(18);
        let gen = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let tup_x0 = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let tup_x_next = Array2::from_shape_fn((6, 2), |_| rng.random_range(-1.0..1.0));
        let levels = [1usize, 2, 3, 1, 2, 3];
        let lambda = 0.3;
        let upd = critic_objective_baseline(
            &critic, &baseline, &gen, &data, &tup_x0, &tup_x_next, &levels, lambda,
        )
        .unwrap();
        let want_gap = ipm_gap_value(&critic, &gen, &data).unwrap();
        let f = critic.value(&tup_x0).unwrap();
        let (want_rb, _) = baseline_reg(&baseline, &f, &tup_x_next, &levels).unwrap();
        assert_relative_eq!(upd.gap, want_gap, max_relative = 1e-12);
        assert_relative_eq!(upd.reg, want_rb, max_relative = 1e-12);
        assert_relative_eq!(
            upd.objective,
            want_gap - lambda * want_rb,
            max_relative = 1e-12
        );
    }

    #[test]
    fn baseline_objective_gradients_match_finite_differences_in_both_nets() {
        let critic = random_critic(vec![5], Activation::Softplus, 19);
        let spec = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![5],
            output_dim: 1,
            activation: Activation::Softplus,
            time_embed_dim: 4,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let baseline = BaselineNet::new(MlpNet::init(spec, &mut rng).unwrap()).unwrap();
        let gen = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let data = Array2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));
        let tup_x0 = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let tup_x_next = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let levels = [2usize, 1, 3, 2, 1];

        let critic_loss = |n: &MlpNet| {
            let c = CriticNet::new(n.clone()).unwrap();
            let upd = critic_objective_baseline(
                &c, &baseline, &gen, &data, &tup_x0, &tup_x_next, &levels, 0.3,
            )?;
            Ok((upd.objective, upd.critic_grad))
        };
        let err = finite_diff_check(&critic.net, critic_loss, 1e-5).unwrap();
        assert!(err < 1e-4, "critic side error {err}");

        let baseline_loss = |n: &MlpNet| {
            let b = BaselineNet::new(n.clone()).unwrap();
            let upd = critic_objective_baseline(
                &critic, &b, &gen, &data, &tup_x0, &tup_x_next, &levels, 0.3,
            )?;
            Ok((upd.objective, upd.baseline_grad.unwrap()))
        };
        let err = finite_diff_check(&baseline.net, baseline_loss, 1e-5).unwrap();
        assert!(err < 1e-4, "baseline side error {err}");
    }

    #[test]
    fn empty_batches_are_rejected() {
        let critic = linear_critic([1.0, 0.0], 0.0);
        let empty = Array2::<f64>::zeros((0, 2));
        let x = ndarray::array![[1.0, 2.0]];
        assert!(ipm_gap(&critic, &empty, &x).is_err());
        assert!(ipm_gap(&critic, &x, &empty).is_err());
        assert!(gradient_penalty_at(&critic, &empty).is_err());
    }
}
