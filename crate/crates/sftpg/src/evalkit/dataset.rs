//! 2-D toy distributions.
//!
//! All three live at a comparable spatial scale (points within roughly the
//! unit box around the origin) so one sampler architecture and one noise
//! schedule work across them. The curve datasets are scaled-down versions of
//! the classical shapes: at 2048 evaluation points the matching distance
//! between two independent draws of a curve of length `L` floors out near
//! `L / 78`, so curve lengths are kept near 1 to make small target
//! distances resolvable.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Scale applied to the classical `t (cos t, sin t)`, `t in [1.5pi, 4.5pi]`
/// spiral; arc length comes to about 0.89.
pub const SWISS_ROLL_SCALE: f64 = 0.01;

/// Scale applied to the classical unit-radius pair of half circles; total
/// arc length comes to about 1.26.
pub const TWO_MOONS_SCALE: f64 = 0.2;

/// Mean of the single-cluster dataset.
pub const CLUSTER_MEAN: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyDataset {
    SwissRoll,
    TwoMoons,
    GaussianCluster,
}

impl std::str::FromStr for ToyDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swiss_roll" => Ok(ToyDataset::SwissRoll),
            "two_moons" => Ok(ToyDataset::TwoMoons),
            "gaussian_cluster" => Ok(ToyDataset::GaussianCluster),
            other => Err(Error::invalid_arg(format!(
                "unknown dataset '{other}' (expected swiss_roll, two_moons, or gaussian_cluster)"
            ))),
        }
    }
}

impl std::fmt::Display for ToyDataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ToyDataset::SwissRoll => "swiss_roll",
            ToyDataset::TwoMoons => "two_moons",
            ToyDataset::GaussianCluster => "gaussian_cluster",
        })
    }
}

/// Draw `n` points with isotropic Gaussian jitter of standard deviation
/// `noise` added to the noiseless shape.
pub fn gen_dataset<R: Rng + ?Sized>(
    kind: ToyDataset,
    n: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::invalid_arg("dataset size must be positive"));
    }
    if noise < 0.0 {
        return Err(Error::invalid_arg("noise must be nonnegative"));
    }
    let mut out = Array2::zeros((n, 2));
    for r in 0..n {
        let (x, y) = match kind {
            ToyDataset::SwissRoll => {
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.random_range(0.0..1.0));
                (
                    SWISS_ROLL_SCALE * t * t.cos(),
                    SWISS_ROLL_SCALE * t * t.sin(),
                )
            }
            ToyDataset::TwoMoons => {
                let t = std::f64::consts::PI * rng.random_range(0.0..1.0);
                if rng.random_range(0..2u8) == 0 {
                    (TWO_MOONS_SCALE * t.cos(), TWO_MOONS_SCALE * t.sin())
                } else {
                    (
                        TWO_MOONS_SCALE * (1.0 - t.cos()),
                        TWO_MOONS_SCALE * (0.5 - t.sin()),
                    )
                }
            }
            ToyDataset::GaussianCluster => (CLUSTER_MEAN[0], CLUSTER_MEAN[1]),
        };
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        out[[r, 0]] = x + noise * z0;
        out[[r, 1]] = y + noise * z1;
    }
    Ok(out)
}
