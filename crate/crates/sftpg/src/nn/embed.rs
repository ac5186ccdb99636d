//! Sinusoidal timestep embeddings.

use ndarray::Array1;

use crate::{Error, Result};

/// Largest period in the frequency ladder; frequencies run geometrically
/// from 1 down to `1 / MAX_PERIOD`.
const MAX_PERIOD: f64 = 10_000.0;

/// Embed an integer timestep as interleaved `(sin(t w_k), cos(t w_k))` pairs
/// with geometrically spaced frequencies `w_k = MAX_PERIOD^(-k / (dim/2))`.
///
/// `dim` must be even and positive. `t = 0` maps to `(0, 1, 0, 1, ...)`.
/// Distinct timesteps in any sampling range used here (up to a few thousand)
/// map to distinct vectors once `dim >= 4`, because the `w_0 = 1` pair alone
/// separates integers modulo 2π and the slower pairs separate the wraps.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Array1<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid_arg(format!(
            "embedding dim must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(MAX_PERIOD.ln()) * k as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        out[2 * k] = angle.sin();
        out[2 * k + 1] = angle.cos();
    }
    Ok(out)
}
