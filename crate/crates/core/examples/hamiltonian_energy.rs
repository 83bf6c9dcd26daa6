//! Energy along numerical orbits: symplectic schemes keep a bounded error,
//! RK4 drifts slowly, and the damped control loses energy.

use ergolab::dynamics::{self, damped_oscillator, Scheme};
use ergolab::hamiltonian;

fn main() -> ergolab::Result<()> {
    let h = hamiltonian::harmonic_oscillator(1.0, 1.0)?;
    for scheme in Scheme::ALL {
        for dt in [1e-1, 1e-2] {
            let traj = dynamics::integrate(&h, &[1.0, 0.0], 1000.0, dt, scheme)?;
            let drift = hamiltonian::energy_drift(&h, &traj)?;
            println!("harmonic {scheme:<16} dt={dt:<5} max |H - H0| over t<=1000: {drift:.3e}");
        }
    }

    let pendulum = hamiltonian::pendulum(1.0)?;
    let start = hamiltonian::level_start(&pendulum, 1.0)?;
    let traj = dynamics::integrate(&pendulum, &start.to_vec(), 100.0, 1e-3, Scheme::Rk4)?;
    println!("pendulum E=1 rk4 drift: {:.3e}", hamiltonian::energy_drift(&pendulum, &traj)?);

    let field = damped_oscillator(0.1)?;
    let traj = dynamics::integrate(&field, &[1.0, 0.0], 20.0, 1e-3, Scheme::Rk4)?;
    let e = |z: &[f64]| 0.5 * (z[0] * z[0] + z[1] * z[1]);
    println!(
        "damped gamma=0.1: energy {:.4} -> {:.4}",
        e(&traj.states[0]),
        e(traj.last_state())
    );
    Ok(())
}
