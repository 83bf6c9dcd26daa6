//! Pendulum orbits on three energy levels: a closed libration (E=1), the
//! separatrix (E=2) and an open rotation (E=3).

use std::f64::consts::PI;

use ergolab::dynamics::Scheme;
use ergolab::hamiltonian::{self, OrbitClass};

fn main() -> ergolab::Result<()> {
    let h = hamiltonian::pendulum(1.0)?;
    let levels = [1.0, 2.0, 3.0];
    let starts = levels
        .iter()
        .map(|&e| hamiltonian::level_start(&h, e))
        .collect::<ergolab::Result<Vec<_>>>()?;
    let portrait = hamiltonian::phase_portrait(&h, &starts, 20.0, 1e-3, Scheme::Leapfrog)?;
    for (orbit, &e) in portrait.orbits.iter().zip(&levels) {
        let class = hamiltonian::classify_pendulum_orbit(e, hamiltonian::SEPARATRIX_TOL)?;
        let lo = orbit.q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = orbit.q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let residual = orbit
            .q
            .iter()
            .zip(&orbit.p)
            .map(|(t, p)| (p * p - 2.0 * (e - (1.0 - t.cos()))).abs())
            .fold(0.0, f64::max);
        println!("E={e}: {class:?}, theta in [{lo:.3}, {hi:.3}], |p^2 - 2(E - V)| <= {residual:.1e}");
        if class == OrbitClass::Rotation {
            println!("  swept {:.1} turns in t=20", (hi - lo) / (2.0 * PI));
        }
    }
    let (p_plus, p_minus) = hamiltonian::pendulum_momentum_from_energy(1.0, 0.5)?;
    println!("momentum branches at E=1, theta=0.5: {p_plus:.6}, {p_minus:.6}");
    Ok(())
}
