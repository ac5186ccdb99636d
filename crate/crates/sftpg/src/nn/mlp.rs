//! Multi-layer perceptrons over flat f64 parameter vectors.
//!
//! Parameters live in one contiguous vector, layer-major: for each layer the
//! weight matrix in row-major `(fan_in, fan_out)` order, then the bias row.
//! That layout is shared by the optimizer, the gradient vectors, and the
//! checkpoint format, so nothing ever reshapes or reorders parameters.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::embed::timestep_embedding;
use super::tape::{Grads, Tape, TapeAct, Var};
use crate::{Error, Result};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Softplus,
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn tape_act(self) -> TapeAct {
        match self {
            Activation::Softplus => TapeAct::Softplus,
            Activation::Relu => TapeAct::Relu,
            Activation::LeakyRelu(s) => TapeAct::LeakyRelu(s),
        }
    }

    pub(crate) fn apply_scalar(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => super::tape::softplus(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
        }
    }
}

/// Architecture of an MLP.
///
/// `time_embed_dim = 0` means the net takes no timestep input; a positive
/// (even) value appends a sinusoidal embedding of that width to every input
/// row before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub time_embed_dim: usize,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid_arg("mlp dims must be positive"));
        }
        if self.hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid_arg("hidden dims must be positive"));
        }
        if self.time_embed_dim % 2 != 0 {
            return Err(Error::invalid_arg("time embedding dim must be even"));
        }
        Ok(())
    }

    /// Layer fan sizes, first entry including the time embedding width.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim + self.time_embed_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }
}

/// An MLP: architecture plus its flat parameter vector.
#[derive(Debug, Clone)]
pub struct MlpNet {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

/// Flat gradient aligned element-for-element with [`MlpNet::params`].
#[derive(Debug, Clone)]
pub struct GradVector(pub Vec<f64>);

impl GradVector {
    pub fn zeros(n: usize) -> Self {
        GradVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// `self += other * c`. Lengths must already agree.
    pub fn add_scaled(&mut self, other: &GradVector, c: f64) {
        debug_assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.0 {
            *g *= c;
        }
    }
}

impl MlpNet {
    /// Random initialization: Kaiming fan-in bounds for relu-family hidden
    /// activations, Xavier bounds for softplus. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut params = Vec::with_capacity(spec.param_count());
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = match spec.activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                Activation::LeakyRelu(s) => (6.0 / ((1.0 + s * s) * fan_in as f64)).sqrt(),
                Activation::Softplus => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(MlpNet { spec, params })
    }

    /// All-zero parameters; the net computes the zero function.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.param_count();
        Ok(MlpNet {
            spec,
            params: vec![0.0; n],
        })
    }

    /// Wrap an explicit parameter vector (used to craft closed-form nets in
    /// tests and oracles).
    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::invalid_arg(format!(
                "expected {} params, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        Ok(MlpNet { spec, params })
    }

    /// Byte offset bookkeeping: `(weight_range, bias_range)` per layer.
    fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let dims = self.spec.layer_dims();
        let mut out = Vec::with_capacity(dims.len() - 1);
        let mut off = 0;
        for w in dims.windows(2) {
            let ws = off..off + w[0] * w[1];
            off += w[0] * w[1];
            let bs = off..off + w[1];
            off += w[1];
            out.push((ws, bs));
        }
        out
    }

    fn weight_view(&self, layer: usize) -> ArrayView2<'_, f64> {
        let dims = self.spec.layer_dims();
        let (ws, _) = &self.layer_ranges()[layer];
        ArrayView2::from_shape((dims[layer], dims[layer + 1]), &self.params[ws.clone()])
            .expect("layout is consistent by construction")
    }

    fn bias_view(&self, layer: usize) -> ArrayView2<'_, f64> {
        let dims = self.spec.layer_dims();
        let (_, bs) = &self.layer_ranges()[layer];
        ArrayView2::from_shape((1, dims[layer + 1]), &self.params[bs.clone()])
            .expect("layout is consistent by construction")
    }

    fn check_input(&self, x: &Array2<f64>, t: Option<usize>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::invalid_arg(format!(
                "input has {} columns, net expects {}",
                x.ncols(),
                self.spec.input_dim
            )));
        }
        match (t, self.spec.time_embed_dim) {
            (None, 0) | (Some(_), 1..) => Ok(()),
            (Some(_), 0) => Err(Error::invalid_arg(
                "net takes no timestep but one was supplied",
            )),
            (None, _) => Err(Error::invalid_arg(
                "net expects a timestep and none was supplied",
            )),
        }
    }

    /// Input rows with the timestep embedding appended when the spec asks
    /// for one. `t` applies to the whole batch.
    fn augmented_input(&self, x: &Array2<f64>, t: Option<usize>) -> Result<Array2<f64>> {
        self.check_input(x, t)?;
        if self.spec.time_embed_dim == 0 {
            return Ok(x.to_owned());
        }
        let emb = timestep_embedding(t.unwrap(), self.spec.time_embed_dim)?;
        let mut out = Array2::zeros((x.nrows(), x.ncols() + emb.len()));
        out.slice_mut(ndarray::s![.., ..x.ncols()]).assign(x);
        for r in 0..x.nrows() {
            for (j, &e) in emb.iter().enumerate() {
                out[[r, x.ncols() + j]] = e;
            }
        }
        Ok(out)
    }

    /// Plain batched forward pass, no gradient tracking.
    pub fn forward(&self, x: &Array2<f64>, t: Option<usize>) -> Result<Array2<f64>> {
        let mut h = self.augmented_input(x, t)?;
        let n_layers = self.spec.layer_dims().len() - 1;
        for l in 0..n_layers {
            let mut z = h.dot(&self.weight_view(l));
            z += &self.bias_view(l);
            h = if l + 1 < n_layers {
                z.mapv(|v| self.spec.activation.apply_scalar(v))
            } else {
                z
            };
        }
        Ok(h)
    }

    /// Smallest `|z|` over all hidden pre-activations for this batch.
    ///
    /// Gradient checks of relu nets resample their probe inputs until this
    /// margin clears the finite-difference step, keeping the kink out of the
    /// stencil. Nets without hidden layers report infinity.
    pub fn hidden_preactivation_margin(&self, x: &Array2<f64>, t: Option<usize>) -> Result<f64> {
        let mut h = self.augmented_input(x, t)?;
        let n_layers = self.spec.layer_dims().len() - 1;
        let mut margin = f64::INFINITY;
        for l in 0..n_layers {
            let mut z = h.dot(&self.weight_view(l));
            z += &self.bias_view(l);
            if l + 1 < n_layers {
                for &v in z.iter() {
                    margin = margin.min(v.abs());
                }
                h = z.mapv(|v| self.spec.activation.apply_scalar(v));
            } else {
                h = z;
            }
        }
        Ok(margin)
    }

    /// Put this net's parameters on a tape. `trainable` decides whether they
    /// are parameter leaves (gradients collected) or constants (frozen).
    pub fn stage<'n>(&'n self, tape: &mut Tape, trainable: bool) -> NetVars<'n> {
        let n_layers = self.spec.layer_dims().len() - 1;
        let mut ws = Vec::with_capacity(n_layers);
        let mut bs = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let w = self.weight_view(l).to_owned();
            let b = self.bias_view(l).to_owned();
            if trainable {
                ws.push(tape.param(w));
                bs.push(tape.param(b));
            } else {
                ws.push(tape.constant(w));
                bs.push(tape.constant(b));
            }
        }
        NetVars { net: self, ws, bs }
    }
}

/// A net staged onto a tape: one `Var` per weight matrix and bias row.
pub struct NetVars<'n> {
    net: &'n MlpNet,
    ws: Vec<Var>,
    bs: Vec<Var>,
}

impl<'n> NetVars<'n> {
    pub fn spec(&self) -> &MlpSpec {
        &self.net.spec
    }

    fn input_var(&self, tape: &mut Tape, x: Var, t: Option<usize>) -> Result<Var> {
        let ncols = tape.value(x).ncols();
        if ncols != self.net.spec.input_dim {
            return Err(Error::invalid_arg(format!(
                "input has {} columns, net expects {}",
                ncols, self.net.spec.input_dim
            )));
        }
        match (t, self.net.spec.time_embed_dim) {
            (None, 0) => Ok(x),
            (Some(tt), d @ 1..) => {
                let emb = timestep_embedding(tt, d)?;
                let rows = tape.value(x).nrows();
                let mut mat = Array2::zeros((rows, d));
                for r in 0..rows {
                    for (j, &e) in emb.iter().enumerate() {
                        mat[[r, j]] = e;
                    }
                }
                let emb_var = tape.constant(mat);
                Ok(tape.append_cols(x, emb_var))
            }
            (Some(_), 0) => Err(Error::invalid_arg(
                "net takes no timestep but one was supplied",
            )),
            (None, _) => Err(Error::invalid_arg(
                "net expects a timestep and none was supplied",
            )),
        }
    }

    /// Recorded forward pass; `x` may be a constant or any tape node.
    pub fn forward(&self, tape: &mut Tape, x: Var, t: Option<usize>) -> Result<Var> {
        let (out, _) = self.forward_keeping_preacts(tape, x, t)?;
        Ok(out)
    }

    fn forward_keeping_preacts(
        &self,
        tape: &mut Tape,
        x: Var,
        t: Option<usize>,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = self.input_var(tape, x, t)?;
        let n_layers = self.ws.len();
        let act = self.net.spec.activation.tape_act();
        let mut preacts = Vec::with_capacity(n_layers.saturating_sub(1));
        for l in 0..n_layers {
            let zw = tape.matmul(h, self.ws[l]);
            let z = tape.add_bias(zw, self.bs[l]);
            if l + 1 < n_layers {
                preacts.push(z);
                h = tape.activation(z, act);
            } else {
                h = z;
            }
        }
        Ok((h, preacts))
    }

    /// Forward pass that also records the gradient of the scalar output with
    /// respect to the input rows, as tape nodes.
    ///
    /// The sweep is itself made of differentiable ops, so downstream scalars
    /// built from the returned input gradient (a gradient penalty, say) can
    /// be backpropagated into this net's parameters. Relu and leaky-relu
    /// derivative gates enter the sweep as constants, matching their
    /// piecewise-constant derivative; the softplus gate is a recorded sigmoid.
    ///
    /// Only nets with a single output and no timestep input are supported.
    pub fn forward_with_input_grad(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        if self.net.spec.output_dim != 1 {
            return Err(Error::invalid_arg(
                "input-gradient sweep needs a scalar-output net",
            ));
        }
        if self.net.spec.time_embed_dim != 0 {
            return Err(Error::invalid_arg(
                "input-gradient sweep does not take timestep inputs",
            ));
        }
        let (out, preacts) = self.forward_keeping_preacts(tape, x, None)?;
        let rows = tape.value(x).nrows();
        let mut g = tape.constant(Array2::from_elem((rows, 1), 1.0));
        for l in (0..self.ws.len()).rev() {
            if l < self.ws.len() - 1 {
                let z = preacts[l];
                let gate = match self.net.spec.activation {
                    Activation::Relu => {
                        let mask = tape.value(z).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                        tape.constant(mask)
                    }
                    Activation::LeakyRelu(s) => {
                        let mask = tape.value(z).mapv(|v| if v > 0.0 { 1.0 } else { s });
                        tape.constant(mask)
                    }
                    Activation::Softplus => tape.activation(z, TapeAct::Sigmoid),
                };
                g = tape.mul(g, gate);
            }
            g = tape.matmul_tb(g, self.ws[l]);
        }
        Ok((out, g))
    }

    /// Collect this net's adjoints into a flat [`GradVector`]; parameters the
    /// output never depended on come back as zeros.
    pub fn collect_grads(&self, grads: &Grads) -> GradVector {
        let mut flat = Vec::with_capacity(self.net.spec.param_count());
        for l in 0..self.ws.len() {
            let dims = self.net.spec.layer_dims();
            match grads.get(self.ws[l]) {
                Some(g) => flat.extend(g.iter()),
                None => flat.extend(std::iter::repeat(0.0).take(dims[l] * dims[l + 1])),
            }
            match grads.get(self.bs[l]) {
                Some(g) => flat.extend(g.iter()),
                None => flat.extend(std::iter::repeat(0.0).take(dims[l + 1])),
            }
        }
        GradVector(flat)
    }
}
