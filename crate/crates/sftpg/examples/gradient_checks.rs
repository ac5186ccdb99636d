//! Run the finite-difference audit over every differentiable path in the
//! library and print the worst relative error for each.
//!
//! Each entry compares the tape's analytic gradient against central
//! differences on a small randomly initialized instance of the real
//! objective. Anything at or above the tolerance means a broken adjoint.

use sftpg::checks::{gradient_check_suite, GRADCHECK_TOL};

fn main() -> sftpg::Result<()> {
    println!("{:<28} {:>12}  verdict (tol {GRADCHECK_TOL:.0e})", "path", "max rel err");
    let mut worst = 0.0f64;
    for check in gradient_check_suite()? {
        let verdict = if check.max_err < GRADCHECK_TOL { "ok" } else { "BROKEN" };
        println!("{:<28} {:>12.3e}  {verdict}", check.name, check.max_err);
        worst = worst.max(check.max_err);
    }
    println!("\nworst over the suite: {worst:.3e}");
    Ok(())
}
