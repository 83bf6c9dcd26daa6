//! Which maps of [0,1) preserve length? Compares integrals of observables
//! before and after the map, and grid measures of preimages.

use std::f64::consts::TAU;

use ergolab::dynamics::PointMap;
use ergolab::measure::{self, Rect, RectUnion, TestFunction};

fn main() -> ergolab::Result<()> {
    let unit = Rect::unit(1)?;
    let observables = vec![
        TestFunction::new("cos(2 pi x)", |x| (TAU * x[0]).cos()),
        TestFunction::new("x^2", |x| x[0] * x[0]),
        TestFunction::new("1[0.3,0.6)", |x| if (0.3..0.6).contains(&x[0]) { 1.0 } else { 0.0 }),
        TestFunction::new("x", |x| x[0]),
    ];
    let target = RectUnion::from(Rect::from_bounds(&[(0.0, 0.1)])?);
    for f in [PointMap::golden_rotation(), PointMap::doubling(), PointMap::contraction(0.5)] {
        let report = measure::invariance_by_integrals(&f, &observables, &unit, 1_000_000, 7, 4.0)?;
        println!("{}: {:?}", f.label(), report.verdict);
        for c in &report.per_test_function {
            println!(
                "  {:<12} {:+.5} vs {:+.5}  ({:.1} sigma)",
                c.label,
                c.lhs_integral,
                c.rhs_integral,
                c.sigmas()
            );
        }
        let d = measure::preimage_measure_discrepancy(&f, &target, &unit, 10_000)?;
        println!("  |mu(E) - mu(f^-1 E)| on a 10^4 grid = {d:.2e}");
    }
    Ok(())
}
