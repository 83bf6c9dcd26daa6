//! det D(phi^t) by integrating the variational equation, and by the
//! exponential of the integrated divergence.

use ergolab::dynamics::{self, damped_oscillator};
use ergolab::hamiltonian;

fn main() -> ergolab::Result<()> {
    let pendulum = hamiltonian::pendulum(1.0)?.vector_field();
    let damped = damped_oscillator(0.5)?;
    println!("{:>8} {:>4} {:>22} {:>22} {:>22}", "system", "t", "variational", "liouville", "reference");
    for t in [1.0, 2.0, 5.0] {
        let c = dynamics::flow_det_both(&pendulum, &[0.4, 1.1], t, 1e-3)?;
        println!("{:>8} {t:>4} {:>22.16} {:>22.16} {:>22.16}", "pendulum", c.det_variational, c.det_liouville, 1.0);
        let c = dynamics::flow_det_both(&damped, &[1.0, 0.0], t, 1e-3)?;
        println!(
            "{:>8} {t:>4} {:>22.16} {:>22.16} {:>22.16}",
            "damped",
            c.det_variational,
            c.det_liouville,
            (-0.5 * t).exp()
        );
    }
    Ok(())
}
