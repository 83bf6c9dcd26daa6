//! Convergence order of the fixed-step schemes on the harmonic oscillator,
//! and time reversibility of leapfrog.

use ergolab::dynamics::{self, Scheme};
use ergolab::hamiltonian;

fn main() -> ergolab::Result<()> {
    let h = hamiltonian::harmonic_oscillator(1.0, 1.0)?;
    let t = 10.0;
    let exact = hamiltonian::harmonic_exact(1.0, 0.0, 1.0, t);
    for scheme in Scheme::ALL {
        let mut previous: Option<f64> = None;
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let traj = dynamics::integrate(&h, &[1.0, 0.0], t, dt, scheme)?;
            let z = traj.last_state();
            let err = (z[0] - exact.q[0]).hypot(z[1] - exact.p[0]);
            let ratio = previous.map_or(String::new(), |p| format!("ratio {:.2}", p / err));
            println!("{scheme:<16} dt={dt:<7} error {err:.3e} {ratio}");
            previous = Some(err);
        }
    }

    let pendulum = hamiltonian::pendulum(1.0)?;
    let z0 = vec![0.3, 0.8];
    let mut z = z0.clone();
    for _ in 0..10_000 {
        z = dynamics::leapfrog_step(&pendulum, &z, 1e-3)?;
    }
    for _ in 0..10_000 {
        z = dynamics::leapfrog_step(&pendulum, &z, -1e-3)?;
    }
    println!(
        "leapfrog 10^4 steps forward and back: error {:.2e}",
        (z[0] - z0[0]).hypot(z[1] - z0[1])
    );
    Ok(())
}
