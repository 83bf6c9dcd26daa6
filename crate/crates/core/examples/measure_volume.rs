//! Lebesgue measure three ways: exact box volumes, simple-function
//! integrals, and a seeded Monte Carlo estimate of the unit disk.

use ergolab::measure::{self, Rect, SimpleFunction};

fn main() -> ergolab::Result<()> {
    let b = Rect::from_bounds(&[(0.0, 2.0), (0.0, 3.0)])?;
    println!("vol([0,2)x[0,3)) = {}", b.volume());

    let s = SimpleFunction::new(vec![
        (2.0, Rect::from_bounds(&[(0.0, 1.0)])?),
        (5.0, Rect::from_bounds(&[(1.0, 3.0)])?),
    ])?;
    println!("integral of 2*1[0,1) + 5*1[1,3) = {}", s.integral());

    let square = Rect::cube(2, -1.0, 1.0)?;
    let disk = |z: &[f64]| z[0] * z[0] + z[1] * z[1] < 1.0;
    for n in [10_000, 100_000, 1_000_000] {
        let est = measure::estimate_volume_mc(disk, &square, n, 42)?;
        println!(
            "n = {n:>9}: area = {:.6} +- {:.1e} ({:.2} sigma from pi)",
            est.estimate,
            est.standard_error,
            (est.estimate - std::f64::consts::PI).abs() / est.standard_error
        );
    }
    let grid = measure::grid_measure(disk, &square, 2000)?;
    println!("midpoint grid 2000^2: {grid:.6}");
    Ok(())
}
