//! Laplacian eigenbases on the four supported domains: lowest eigenvalues,
//! mode labels, orthonormality on a quadrature grid and a few point values.
//!
//! Run with `cargo run --release --example basis_functions`.

use resonator::basis::{orthonormality_error, BasisSet, Domain, Point};

fn main() -> resonator::Result<()> {
    let domains = [
        ("interval L=1", Domain::interval(1.0)),
        ("rectangle 1 x 0.5", Domain::rectangle(1.0, 0.5)),
        ("disk R=1", Domain::disk(1.0)),
        ("sphere R=1", Domain::sphere(1.0)),
    ];
    for (name, domain) in domains {
        let basis = BasisSet::build(&domain, 32)?;
        println!("{name}");
        let labels = basis.mode_labels();
        for (label, m) in labels.iter().zip(basis.modes()).take(6) {
            println!("  {label:<12} lambda = {:.6}", m.eigenvalue);
        }
        println!("  ... lambda_32 = {:.4}", basis.eigenvalues()[31]);
        println!("  Gram deviation      {:.2e}", orthonormality_error(&basis, 200)?);
        let p = match domain {
            Domain::Interval { .. } => Point::on_line(0.3),
            Domain::Sphere { .. } => Point::angles(1.0, 2.0),
            _ => Point::new(0.3, 0.2),
        };
        let v = basis.eval_point(p)?;
        println!("  first values at {:?}: {:.4?}", p.coords(domain.coord_dim()), &v[..4]);
    }
    Ok(())
}
