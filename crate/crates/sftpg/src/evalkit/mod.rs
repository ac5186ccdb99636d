//! Toy datasets, transport-based evaluation, and figure emission.

pub mod dataset;
pub mod figures;
pub mod transport;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::diffusion::{sample_trajectories_batched, GeneratorNet};
use crate::Result;
pub use dataset::{gen_dataset, ToyDataset};
pub use figures::emit_figures;
pub use transport::{exact_w2, sinkhorn_w2};

/// Largest cloud matched exactly; beyond this the entropic route takes over.
pub const EXACT_CAP: usize = 2048;

/// W2 with automatic solver choice by cloud size.
pub fn w2_auto(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() <= EXACT_CAP {
        transport::exact_w2(a, b)
    } else {
        // Temperature tied to the cost scale; tolerance matched to what the
        // low-temperature linear rate reaches in the iteration budget.
        let mut max_cost = 0.0f64;
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                max_cost = max_cost.max(a[[r, c]].abs()).max(b[[r, c]].abs());
            }
        }
        let diam2 = (2.0 * max_cost).powi(2).max(1e-12) * 2.0;
        transport::sinkhorn_w2(a, b, 1e-3 * diam2, 1e-4, 5_000)
    }
}

/// Repeated model-vs-data distances under a fixed seed.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_rep: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over reps; zero for a single rep.
    pub std: f64,
}

/// Draw `reps` fresh data samples and model samples of size `n` each and
/// match them. Each rep advances its own seeded stream, so a report is a
/// pure function of `(generator, kind, noise, n, reps, seed)`.
pub fn eval_w2(
    g: &GeneratorNet,
    kind: ToyDataset,
    noise: f64,
    n: usize,
    reps: usize,
    seed: u64,
) -> Result<EvalReport> {
    eval_w2_capped(g, kind, noise, n, n, reps, seed)
}

/// [`eval_w2`] with the matcher size capped: each rep still draws `n` points
/// per cloud but only the first `cap` rows are matched. Rows are iid draws,
/// so the prefix is a uniform subsample.
pub fn eval_w2_capped(
    g: &GeneratorNet,
    kind: ToyDataset,
    noise: f64,
    n: usize,
    cap: usize,
    reps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if reps == 0 {
        return Err(crate::Error::invalid_arg("need at least one rep"));
    }
    if cap == 0 {
        return Err(crate::Error::invalid_arg("matcher cap must be positive"));
    }
    let keep = cap.min(n);
    let mut per_rep = Vec::with_capacity(reps);
    for rep in 0..reps {
        let stream = seed.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha12Rng::seed_from_u64(stream);
        let data = gen_dataset(kind, n, noise, &mut rng)?;
        let states = sample_trajectories_batched(g, n, &mut rng)?;
        let model = states.last().expect("chain has states");
        per_rep.push(w2_auto(
            &model.slice(ndarray::s![..keep, ..]).to_owned(),
            &data.slice(ndarray::s![..keep, ..]).to_owned(),
        )?);
    }
    let mean = per_rep.iter().sum::<f64>() / reps as f64;
    let std = if reps > 1 {
        (per_rep.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(EvalReport { per_rep, mean, std })
}

/// Write an `x,y,source` scatter of data and model points, the input of the
/// samples figure.
pub fn write_samples_csv(
    path: &std::path::Path,
    data: &Array2<f64>,
    model: &Array2<f64>,
) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,source")?;
    for (name, cloud) in [("data", data), ("model", model)] {
        for row in cloud.rows() {
            let coords: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", coords.join(","), name)?;
        }
    }
    Ok(())
}
