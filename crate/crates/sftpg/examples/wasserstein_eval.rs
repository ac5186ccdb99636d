//! The two Wasserstein-2 solvers side by side.
//!
//! First a case with a known answer: translating a point cloud by a vector d
//! moves it exactly |d| in Wasserstein-2, and the exact solver reproduces
//! that to machine precision. Then two independent clouds, where the
//! entropic solver's answer approaches the exact one as the regularization
//! shrinks. The bias scales with epsilon relative to the squared distances
//! involved, which is why tiny-scale clouds need a proportionally tiny
//! epsilon.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sftpg::evalkit::{exact_w2, sinkhorn_w2};
use std::time::Instant;

fn unit_cloud(n: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |_| rng.random::<f64>())
}

fn main() -> sftpg::Result<()> {
    let mut rng = ChaCha12Rng::seed_from_u64(42);

    let a = unit_cloud(128, &mut rng);
    let mut shifted = a.clone();
    for mut row in shifted.rows_mut() {
        row[0] += 0.3;
        row[1] -= 0.2;
    }
    let expected = (0.3f64 * 0.3 + 0.2 * 0.2).sqrt();
    let got = exact_w2(&a, &shifted)?;
    println!("translated cloud: exact {got:.12}, |d| {expected:.12}, err {:.1e}", (got - expected).abs());

    let b = unit_cloud(128, &mut rng);
    let exact = exact_w2(&a, &b)?;
    println!("\nindependent clouds: exact W2 = {exact:.6}");
    for eps in [1e-1, 1e-2, 1e-3] {
        let t = Instant::now();
        let sk = sinkhorn_w2(&a, &b, eps, 1e-3, 200_000)?;
        println!(
            "  sinkhorn eps {eps:>5}: {sk:.6}  (rel {:+.4}, {:.2?})",
            sk / exact - 1.0,
            t.elapsed()
        );
    }
    Ok(())
}
