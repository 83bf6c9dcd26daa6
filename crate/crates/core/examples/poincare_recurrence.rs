//! Orbits started in a set come back to it under measure-preserving
//! dynamics, and keep coming back. Dissipative controls do not.

use std::f64::consts::TAU;

use ergolab::dynamics::{damped_oscillator, PointMap};
use ergolab::hamiltonian;
use ergolab::measure::Rect;
use ergolab::recurrence::{self, DyadicDoubling, RecurrenceReport};

fn show(name: &str, r: &RecurrenceReport) {
    println!(
        "{name:<22} returning {:>5.3}  mean first return {:>8}  max {:>8}",
        r.returning_fraction,
        r.mean_first_return.map_or("-".into(), |m| format!("{m:.2}")),
        r.max_first_return().map_or("-".into(), |m| format!("{m:.2}")),
    );
}

fn main() -> ergolab::Result<()> {
    let unit = Rect::unit(1)?;
    let e = |x: &[f64]| x[0] < 0.1;
    show(
        "golden rotation",
        &recurrence::recurrence_experiment_map(&PointMap::golden_rotation(), &e, &unit, 500, 1000, 1)?,
    );
    show(
        "doubling",
        &recurrence::recurrence_experiment_map(&DyadicDoubling, &e, &unit, 500, 10_000, 1)?,
    );
    let upper = |x: &[f64]| x[0] >= 0.5;
    show(
        "contraction x/2",
        &recurrence::recurrence_experiment_map(&PointMap::contraction(0.5), &upper, &unit, 500, 1000, 1)?,
    );

    let disk = |z: &[f64]| (z[0] - 1.0).hypot(z[1]) < 0.1;
    let domain = Rect::from_bounds(&[(0.9, 1.1), (-0.1, 0.1)])?;
    let harmonic = hamiltonian::harmonic_oscillator(1.0, 1.0)?.vector_field();
    show(
        "harmonic flow",
        &recurrence::recurrence_experiment_flow(&harmonic, &disk, &domain, 200, 3.0 * TAU, 1e-2, 1)?,
    );
    show(
        "damped flow",
        &recurrence::recurrence_experiment_flow(&damped_oscillator(0.5)?, &disk, &domain, 200, 3.0 * TAU, 1e-2, 1)?,
    );

    let counts = recurrence::return_count_growth(&PointMap::golden_rotation(), &e, &[0.05], &[1000, 2000, 4000])?;
    println!("golden rotation from x=0.05, returns by n = 1000, 2000, 4000: {counts:?}");
    Ok(())
}
