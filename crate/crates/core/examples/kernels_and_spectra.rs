//! Matérn and squared-exponential kernels, their spectral densities, and
//! how well a truncated eigenbasis reproduces the kernel.
//!
//! Run with `cargo run --release --example kernels_and_spectra`.

use resonator::basis::{BasisSet, Domain, Point};
use resonator::covariance::{project_noise, reconstruct_covariance, Kernel};

fn main() -> resonator::Result<()> {
    let kernels = [
        ("matern 1/2", Kernel::matern(0.5, 0.2, 1.0)),
        ("matern 3/2", Kernel::matern(1.5, 0.2, 1.0)),
        ("matern 5/2", Kernel::matern(2.5, 0.2, 1.0)),
        ("squared exp", Kernel::squared_exponential(0.2, 1.0)),
    ];
    println!("{:<12} {:>10} {:>10} {:>10} {:>12} {:>12}", "kernel", "k(0)", "k(0.1)", "k(0.4)", "S(0), 1-D", "S(10), 2-D");
    for (name, k) in &kernels {
        println!(
            "{name:<12} {:>10.4} {:>10.4} {:>10.4} {:>12.4e} {:>12.4e}",
            k.eval(0.0)?,
            k.eval(0.1)?,
            k.eval(0.4)?,
            k.spectral_density(0.0, 1)?,
            k.spectral_density(10.0, 2)?
        );
    }

    // Covariance implied by projecting the kernel onto N Dirichlet modes of
    // [-3, 3], compared with the kernel itself near the middle.
    let kernel = Kernel::matern(1.5, 0.2, 1.0);
    let domain = Domain::interval(3.0);
    let (x, y) = (Point::on_line(0.0), Point::on_line(0.15));
    println!("\nprojection of matern 3/2 on [-3, 3], k(0.15) = {:.6}", kernel.eval(0.15)?);
    for n in [8, 32, 128, 512] {
        let basis = BasisSet::build(&domain, n)?;
        let q = project_noise(&kernel, &basis)?;
        let c = reconstruct_covariance(&q, &basis.eval_point(x)?, &basis.eval_point(y)?);
        println!("  N = {n:>3}: {c:.6}");
    }
    Ok(())
}
