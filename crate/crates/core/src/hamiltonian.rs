//! Separable Hamiltonians `H(q, p) = T(p) + V(q)`, their vector fields, and
//! the harmonic oscillator and pendulum families.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{integrate, Scheme, Trajectory, VectorField};
use crate::error::{invalid, Error, Result};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type HessFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// `H(q, p) = T(p) + V(q)` on `R^{2n}` with user-supplied gradients.
///
/// Phase points are laid out as `z = (q_1..q_n, p_1..p_n)`.
#[derive(Clone)]
pub struct SeparableHamiltonian {
    n: usize,
    label: String,
    kinetic: ScalarFn,
    grad_kinetic: GradFn,
    potential: ScalarFn,
    grad_potential: GradFn,
    hessians: Option<(HessFn, HessFn)>,
    angular: bool,
}

impl SeparableHamiltonian {
    pub fn new(
        n: usize,
        kinetic: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_kinetic: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        potential: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad_potential: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            label: String::from("hamiltonian"),
            kinetic: Arc::new(kinetic),
            grad_kinetic: Arc::new(grad_kinetic),
            potential: Arc::new(potential),
            grad_potential: Arc::new(grad_potential),
            hessians: None,
            angular: false,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Attaches `∇²T(p)` and `∇²V(q)`, giving the vector field an analytic
    /// Jacobian.
    pub fn with_hessians(
        mut self,
        hess_kinetic: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        hess_potential: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hessians = Some((Arc::new(hess_kinetic), Arc::new(hess_potential)));
        self
    }

    /// Marks `q` as an angle, so portraits also report it wrapped to
    /// `(−π, π]`.
    pub fn with_angular_coordinate(mut self) -> Self {
        self.angular = true;
        self
    }

    /// `T = |p|²/2`, `V ≡ 0`.
    pub fn free_particle(n: usize) -> Self {
        Self::new(
            n,
            |p| 0.5 * p.iter().map(|v| v * v).sum::<f64>(),
            |p| p.to_vec(),
            |_| 0.0,
            move |_| vec![0.0; n],
        )
        .with_label("free particle")
        .with_hessians(move |_| DMatrix::identity(n, n), move |_| DMatrix::zeros(n, n))
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_angular_coordinate(&self) -> bool {
        self.angular
    }

    pub fn kinetic(&self, p: &[f64]) -> f64 {
        (self.kinetic)(p)
    }

    pub fn potential(&self, q: &[f64]) -> f64 {
        (self.potential)(q)
    }

    pub fn grad_kinetic(&self, p: &[f64]) -> Vec<f64> {
        (self.grad_kinetic)(p)
    }

    pub fn grad_potential(&self, q: &[f64]) -> Vec<f64> {
        (self.grad_potential)(q)
    }

    /// `H(z) = T(p) + V(q)` on a flat phase vector.
    pub fn energy_at(&self, z: &[f64]) -> f64 {
        let (q, p) = z.split_at(self.n);
        self.kinetic(p) + self.potential(q)
    }

    /// `X_H(z) = (∇T(p), −∇V(q))`, with divergence identically zero.
    pub fn vector_field(&self) -> VectorField {
        let n = self.n;
        let (gt, gv) = (Arc::clone(&self.grad_kinetic), Arc::clone(&self.grad_potential));
        let mut field = VectorField::new(2 * n, move |z| {
            let (q, p) = z.split_at(n);
            let mut out = gt(p);
            out.extend(gv(q).into_iter().map(|v| -v));
            out
        })
        .with_label(format!("X_H[{}]", self.label))
        .with_divergence(|_| 0.0);
        if let Some((ht, hv)) = &self.hessians {
            let (ht, hv) = (Arc::clone(ht), Arc::clone(hv));
            field = field.with_jacobian(move |z| {
                let (q, p) = z.split_at(n);
                let mut jac = DMatrix::zeros(2 * n, 2 * n);
                jac.view_mut((0, n), (n, n)).copy_from(&ht(p));
                jac.view_mut((n, 0), (n, n)).copy_from(&(-hv(q)));
                jac
            });
        }
        field
    }

    /// Compares the supplied gradients with central differences of `T` and
    /// `V` at the given points.
    pub fn verify_gradients(&self, points: &[PhasePoint], tol: f64) -> Result<()> {
        let fd = |f: &ScalarFn, x: &[f64]| -> Vec<f64> {
            let h = crate::dynamics::default_fd_step(x);
            let mut probe = x.to_vec();
            (0..x.len())
                .map(|j| {
                    probe[j] = x[j] + h;
                    let plus = f(&probe);
                    probe[j] = x[j] - h;
                    let minus = f(&probe);
                    probe[j] = x[j];
                    (plus - minus) / (2.0 * h)
                })
                .collect()
        };
        for z in points {
            z.check_dim(self.n)?;
            let pairs = [
                ("grad_kinetic", self.grad_kinetic(&z.p), fd(&self.kinetic, &z.p)),
                ("grad_potential", self.grad_potential(&z.q), fd(&self.potential, &z.q)),
            ];
            for (name, given, approx) in pairs {
                if given.len() != self.n {
                    return Err(Error::DimensionMismatch {
                        expected: self.n,
                        got: given.len(),
                    });
                }
                if let Some((a, b)) = given.iter().zip(&approx).find(|(a, b)| (*a - *b).abs() > tol) {
                    return Err(invalid(name, format!("supplied {a} vs finite difference {b} at {z:?}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for SeparableHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeparableHamiltonian")
            .field("n", &self.n)
            .field("label", &self.label)
            .field("angular", &self.angular)
            .finish()
    }
}

/// Point `(q, p)` of phase space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhasePoint {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() || q.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        Ok(Self { q, p })
    }

    /// One degree of freedom.
    pub fn planar(q: f64, p: f64) -> Self {
        Self { q: vec![q], p: vec![p] }
    }

    /// Splits a flat `(q, p)` vector of even length.
    pub fn from_slice(z: &[f64]) -> Result<Self> {
        if z.is_empty() || !z.len().is_multiple_of(2) {
            return Err(invalid("z", format!("phase vector needs even positive length, got {}", z.len())));
        }
        let (q, p) = z.split_at(z.len() / 2);
        Ok(Self {
            q: q.to_vec(),
            p: p.to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [self.q.as_slice(), self.p.as_slice()].concat()
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.q.len()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.q.len() != n || self.p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.q.len().max(self.p.len()),
            });
        }
        Ok(())
    }
}

/// Total energy `T(p) + V(q)`.
pub fn energy(h: &SeparableHamiltonian, z: &PhasePoint) -> Result<f64> {
    z.check_dim(h.degrees_of_freedom())?;
    Ok(h.kinetic(&z.p) + h.potential(&z.q))
}

/// Vector field of `H`; see [`SeparableHamiltonian::vector_field`].
pub fn hamiltonian_vector_field(h: &SeparableHamiltonian) -> VectorField {
    h.vector_field()
}

/// `H = p²/2m + mω²q²/2`.
pub fn harmonic_oscillator(m: f64, omega: f64) -> Result<SeparableHamiltonian> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid("m", format!("mass must be positive, got {m}")));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(invalid("omega", format!("frequency must be positive, got {omega}")));
    }
    let k = m * omega * omega;
    Ok(SeparableHamiltonian::new(
        1,
        move |p| p[0] * p[0] / (2.0 * m),
        move |p| vec![p[0] / m],
        move |q| 0.5 * k * q[0] * q[0],
        move |q| vec![k * q[0]],
    )
    .with_label(format!("harmonic m={m} omega={omega}"))
    .with_hessians(
        move |_| DMatrix::from_element(1, 1, 1.0 / m),
        move |_| DMatrix::from_element(1, 1, k),
    ))
}

/// Closed-form unit-mass oscillator solution
/// `q = A cos(ω(t − δ))`, `p = −Aω sin(ω(t − δ))`.
pub fn harmonic_exact(amplitude: f64, delta: f64, omega: f64, t: f64) -> PhasePoint {
    let phase = omega * (t - delta);
    PhasePoint::planar(amplitude * phase.cos(), -amplitude * omega * phase.sin())
}

/// Normalized pendulum `H(θ, p) = p²/2 + (g/L)(1 − cos θ)`, `V(0) = 0`.
pub fn pendulum(g_over_l: f64) -> Result<SeparableHamiltonian> {
    if !(g_over_l > 0.0 && g_over_l.is_finite()) {
        return Err(invalid("g_over_L", format!("must be positive, got {g_over_l}")));
    }
    Ok(SeparableHamiltonian::new(
        1,
        |p| 0.5 * p[0] * p[0],
        |p| vec![p[0]],
        move |q| g_over_l * (1.0 - q[0].cos()),
        move |q| vec![g_over_l * q[0].sin()],
    )
    .with_label(format!("pendulum g/L={g_over_l}"))
    .with_hessians(
        |_| DMatrix::from_element(1, 1, 1.0),
        move |q| DMatrix::from_element(1, 1, g_over_l * q[0].cos()),
    )
    .with_angular_coordinate())
}

/// `H = p²/2 + Σ_k c_k q^k` for one degree of freedom.
pub fn polynomial_potential(coefficients: &[f64]) -> Result<SeparableHamiltonian> {
    if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
        return Err(invalid("coefficients", "need at least one finite coefficient"));
    }
    let c = coefficients.to_vec();
    let horner = |c: &[f64], x: f64| c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck);
    let derivative: Vec<f64> = c.iter().enumerate().skip(1).map(|(k, ck)| k as f64 * ck).collect();
    let second: Vec<f64> = derivative.iter().enumerate().skip(1).map(|(k, ck)| k as f64 * ck).collect();
    let (c1, d1, d2) = (c.clone(), derivative.clone(), second);
    Ok(SeparableHamiltonian::new(
        1,
        |p| 0.5 * p[0] * p[0],
        |p| vec![p[0]],
        move |q| horner(&c1, q[0]),
        move |q| vec![horner(&d1, q[0])],
    )
    .with_label(format!("polynomial {c:?}"))
    .with_hessians(
        |_| DMatrix::from_element(1, 1, 1.0),
        move |q| DMatrix::from_element(1, 1, horner(&d2, q[0])),
    ))
}

/// The two momentum branches `±√(2(E − (1 − cos θ)))` of the normalized
/// pendulum at angle `θ`.
pub fn pendulum_momentum_from_energy(energy: f64, theta: f64) -> Result<(f64, f64)> {
    let radicand = 2.0 * (energy - (1.0 - theta.cos()));
    if radicand < 0.0 || !radicand.is_finite() {
        return Err(Error::TurningPointExceeded {
            energy,
            theta,
            radicand,
        });
    }
    let p = radicand.sqrt();
    Ok((p, -p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitClass {
    /// Closed orbit, bounded angle.
    Libration,
    /// Full revolutions, monotone angle.
    Rotation,
    Separatrix,
}

pub const SEPARATRIX_TOL: f64 = 1e-9;

/// Orbit type of the normalized pendulum (`g/L = 1`) at energy `E`.
pub fn classify_pendulum_orbit(energy: f64, tol: f64) -> Result<OrbitClass> {
    classify_pendulum_orbit_scaled(energy, 1.0, tol)
}

/// Same as [`classify_pendulum_orbit`] with the separatrix at `2·g/L`.
pub fn classify_pendulum_orbit_scaled(energy: f64, g_over_l: f64, tol: f64) -> Result<OrbitClass> {
    if !(energy >= 0.0) {
        return Err(invalid("E", format!("pendulum energy is non-negative, got {energy}")));
    }
    if !(g_over_l > 0.0) {
        return Err(invalid("g_over_L", format!("must be positive, got {g_over_l}")));
    }
    let threshold = 2.0 * g_over_l;
    Ok(if energy < threshold - tol {
        OrbitClass::Libration
    } else if energy > threshold + tol {
        OrbitClass::Rotation
    } else {
        OrbitClass::Separatrix
    })
}

/// `max_t |H(z_t) − H(z_0)|` over the trajectory samples.
pub fn energy_drift(h: &SeparableHamiltonian, traj: &Trajectory) -> Result<f64> {
    let dim = 2 * h.degrees_of_freedom();
    let Some(first) = traj.states.first() else {
        return Ok(0.0);
    };
    if let Some(bad) = traj.states.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let e0 = h.energy_at(first);
    Ok(traj
        .states
        .iter()
        .map(|s| (h.energy_at(s) - e0).abs())
        .fold(0.0, f64::max))
}

/// Maps an angle onto `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// One planar orbit of a portrait.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortraitOrbit {
    pub initial: PhasePoint,
    pub energy: f64,
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// `q` wrapped to `(−π, π]` when the coordinate is an angle.
    pub q_wrapped: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortraitFailure {
    pub index: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePortrait {
    pub label: String,
    pub orbits: Vec<PortraitOrbit>,
    pub failures: Vec<PortraitFailure>,
}

/// Integrates each initial condition of a one-degree-of-freedom system.
/// Orbits whose integration fails are skipped and listed in `failures`.
pub fn phase_portrait(
    h: &SeparableHamiltonian,
    initial_conditions: &[PhasePoint],
    t_final: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<PhasePortrait> {
    if h.degrees_of_freedom() != 1 {
        return Err(Error::Unsupported(format!(
            "phase portraits are planar; system has {} degrees of freedom",
            h.degrees_of_freedom()
        )));
    }
    let results: Vec<Result<PortraitOrbit>> = initial_conditions
        .par_iter()
        .map(|ic| {
            let e = energy(h, ic)?;
            let traj = integrate(h, &ic.to_vec(), t_final, dt, scheme)?;
            let q: Vec<f64> = traj.states.iter().map(|s| s[0]).collect();
            let p: Vec<f64> = traj.states.iter().map(|s| s[1]).collect();
            let q_wrapped = h
                .has_angular_coordinate()
                .then(|| q.iter().copied().map(wrap_angle).collect());
            Ok(PortraitOrbit {
                initial: ic.clone(),
                energy: e,
                times: traj.times,
                q,
                p,
                q_wrapped,
            })
        })
        .collect();
    let mut orbits = Vec::new();
    let mut failures = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => orbits.push(o),
            Err(error) => failures.push(PortraitFailure { index, error }),
        }
    }
    Ok(PhasePortrait {
        label: h.label().to_string(),
        orbits,
        failures,
    })
}

/// Turning-point-free starting state `(0, √(2(E − V(0))))` on level `E`.
pub fn level_start(h: &SeparableHamiltonian, energy: f64) -> Result<PhasePoint> {
    let q = vec![0.0; h.degrees_of_freedom()];
    let v0 = h.potential(&q);
    if energy < v0 {
        return Err(invalid("E", format!("level {energy} lies below V(0) = {v0}")));
    }
    let mut p = vec![0.0; h.degrees_of_freedom()];
    p[0] = (2.0 * (energy - v0)).sqrt();
    PhasePoint::new(q, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{divergence, integrate};
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn vector_field_examples() {
        let free = SeparableHamiltonian::free_particle(2).vector_field();
        assert_eq!(free.eval(&[1.0, 2.0, 3.0, 4.0]), vec![3.0, 4.0, -0.0, -0.0]);
        let h = harmonic_oscillator(1.0, 1.0).unwrap().vector_field();
        assert_eq!(h.eval(&[1.0, 0.0]), vec![0.0, -1.0]);
        let p = pendulum(1.0).unwrap().vector_field();
        let v = p.eval(&[PI / 2.0, 0.0]);
        assert_eq!(v[0], 0.0);
        assert!(close(v[1], -1.0, 1e-15));
        assert!(p.has_analytic_divergence());
    }

    #[test]
    fn energy_examples() {
        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        assert_eq!(energy(&h, &PhasePoint::planar(1.0, 0.0)).unwrap(), 0.5);
        let pend = pendulum(1.0).unwrap();
        assert_eq!(energy(&pend, &PhasePoint::planar(0.0, 2.0)).unwrap(), 2.0);
        // equilibrium of a shifted quartic: V'(1) = 0, V(1) = 3
        let quartic = polynomial_potential(&[4.0, 0.0, -2.0, 0.0, 1.0]).unwrap();
        assert_eq!(quartic.grad_potential(&[1.0]), vec![0.0]);
        assert_eq!(energy(&quartic, &PhasePoint::planar(1.0, 0.0)).unwrap(), 3.0);
        assert!(energy(&h, &PhasePoint::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn harmonic_constructor() {
        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        assert_eq!(h.energy_at(&[1.0, 0.0]), 0.5);
        let h = harmonic_oscillator(2.0, 3.0).unwrap();
        assert_eq!(h.energy_at(&[0.0, 2.0]), 1.0);
        assert_eq!(h.energy_at(&[0.0, 0.0]), 0.0);
        assert!(harmonic_oscillator(0.0, 1.0).is_err());
        assert!(harmonic_oscillator(1.0, -1.0).is_err());
    }

    #[test]
    fn harmonic_exact_examples() {
        let (a, delta, w) = (1.3, 0.4, 2.0);
        let z = harmonic_exact(a, delta, w, delta);
        assert_eq!((z.q[0], z.p[0]), (a, -0.0));
        let z = harmonic_exact(a, delta, w, delta + PI / (2.0 * w));
        assert!(close(z.q[0], 0.0, 1e-15) && close(z.p[0], -a * w, 1e-15));
        let h = harmonic_oscillator(1.0, w).unwrap();
        for t in [0.0, 0.7, 3.1, 12.0] {
            assert!(close(energy(&h, &harmonic_exact(a, delta, w, t)).unwrap(), a * a * w * w / 2.0, 1e-12));
        }
    }

    #[test]
    fn harmonic_exact_solves_the_ode() {
        let mut rng = crate::rng::stream_rng(4, 0);
        for &w in &[1.0, 2.0] {
            let field = harmonic_oscillator(1.0, w).unwrap().vector_field();
            for _ in 0..100 {
                let t: f64 = rng.random_range(0.0..20.0);
                let h = 1e-5;
                let (plus, minus) = (harmonic_exact(1.5, 0.2, w, t + h), harmonic_exact(1.5, 0.2, w, t - h));
                let deriv = [(plus.q[0] - minus.q[0]) / (2.0 * h), (plus.p[0] - minus.p[0]) / (2.0 * h)];
                let rhs = field.eval(&harmonic_exact(1.5, 0.2, w, t).to_vec());
                assert!(close(deriv[0], rhs[0], 1e-6) && close(deriv[1], rhs[1], 1e-6));
            }
        }
    }

    #[test]
    fn pendulum_constructor() {
        let p = pendulum(1.0).unwrap();
        assert_eq!(p.energy_at(&[0.0, 0.0]), 0.0);
        assert_eq!(p.energy_at(&[PI, 0.0]), 2.0);
        assert_eq!(p.energy_at(&[0.0, 2.0]), 2.0);
        assert!(pendulum(0.0).is_err());
    }

    #[test]
    fn momentum_from_energy_examples() {
        assert_eq!(pendulum_momentum_from_energy(2.0, PI).unwrap(), (0.0, -0.0));
        assert_eq!(pendulum_momentum_from_energy(2.0, 0.0).unwrap(), (2.0, -2.0));
        assert!(matches!(
            pendulum_momentum_from_energy(1.0, PI),
            Err(Error::TurningPointExceeded { .. })
        ));
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_pendulum_orbit(1.0, SEPARATRIX_TOL).unwrap(), OrbitClass::Libration);
        assert_eq!(classify_pendulum_orbit(3.0, SEPARATRIX_TOL).unwrap(), OrbitClass::Rotation);
        assert_eq!(classify_pendulum_orbit(2.0, SEPARATRIX_TOL).unwrap(), OrbitClass::Separatrix);
        assert_eq!(classify_pendulum_orbit_scaled(3.0, 2.0, SEPARATRIX_TOL).unwrap(), OrbitClass::Libration);
        assert!(classify_pendulum_orbit(-0.1, SEPARATRIX_TOL).is_err());
    }

    #[test]
    fn classification_is_constant_along_orbits() {
        let h = pendulum(1.0).unwrap();
        for e in [0.5, 1.0, 1.9, 2.1, 3.0] {
            let z0 = level_start(&h, e).unwrap();
            let traj = integrate(&h, &z0.to_vec(), 20.0, 1e-3, Scheme::Rk4).unwrap();
            let class = classify_pendulum_orbit(h.energy_at(&traj.states[0]), 1e-6).unwrap();
            for s in traj.states.iter().step_by(50) {
                assert_eq!(classify_pendulum_orbit(h.energy_at(s), 1e-6).unwrap(), class);
            }
        }
    }

    #[test]
    fn energy_drift_examples() {
        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let exact = Trajectory {
            states: times.iter().map(|&t| harmonic_exact(1.0, 0.0, 1.0, t).to_vec()).collect(),
            times,
            scheme: Scheme::Rk4,
            dt: 0.01,
            partial_final_step: None,
        };
        assert!(energy_drift(&h, &exact).unwrap() < 1e-12);

        // leapfrog drift is second order: a tenth of the step gives ~1/100
        let coarse = energy_drift(&h, &integrate(&h, &[1.0, 0.0], 10.0, 1e-2, Scheme::Leapfrog).unwrap()).unwrap();
        let fine = energy_drift(&h, &integrate(&h, &[1.0, 0.0], 10.0, 1e-3, Scheme::Leapfrog).unwrap()).unwrap();
        let ratio = coarse / fine;
        assert!((80.0..120.0).contains(&ratio), "{ratio}");
        let long = energy_drift(&h, &integrate(&h, &[1.0, 0.0], 100.0, 1e-3, Scheme::Leapfrog).unwrap()).unwrap();
        assert!(long <= 1e-5);

        let pend = pendulum(1.0).unwrap();
        let z0 = level_start(&pend, 1.0).unwrap();
        let drift = energy_drift(&pend, &integrate(&pend, &z0.to_vec(), 100.0, 1e-3, Scheme::Rk4).unwrap()).unwrap();
        assert!(drift <= 1e-6, "{drift}");
    }

    #[test]
    fn divergence_vanishes_by_finite_differences() {
        let mut rng = crate::rng::stream_rng(1, 0);
        let systems = [
            harmonic_oscillator(1.0, 1.0).unwrap(),
            harmonic_oscillator(2.0, 2.0).unwrap(),
            pendulum(1.0).unwrap(),
            pendulum(2.0).unwrap(),
            polynomial_potential(&[0.0, 0.0, -1.0, 0.0, 0.25]).unwrap(),
        ];
        for h in &systems {
            let f = h.vector_field();
            let f_fd = f.without_analytic();
            for _ in 0..100 {
                let z = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                assert!(divergence(&f_fd, &z, None).unwrap().abs() <= 1e-6);
                assert_eq!(divergence(&f, &z, None).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn gradients_and_jacobians_are_consistent() {
        let mut rng = crate::rng::stream_rng(2, 0);
        let pts: Vec<PhasePoint> = (0..50)
            .map(|_| PhasePoint::planar(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        for h in [
            harmonic_oscillator(2.0, 1.5).unwrap(),
            pendulum(1.0).unwrap(),
            polynomial_potential(&[1.0, -0.5, 0.3, 0.1]).unwrap(),
        ] {
            h.verify_gradients(&pts, 1e-6).unwrap();
            let f = h.vector_field();
            let flat: Vec<Vec<f64>> = pts.iter().map(PhasePoint::to_vec).collect();
            f.verify_consistency(&flat, 1e-9).unwrap();
            for z in &flat {
                let fd = crate::dynamics::fd_jacobian(|y| f.eval(y), z, 1e-5);
                assert!((f.jacobian(z) - fd).abs().max() < 1e-6);
            }
        }
        let broken = SeparableHamiltonian::new(1, |p| p[0] * p[0], |p| vec![p[0]], |_| 0.0, |_| vec![0.0]);
        assert!(broken.verify_gradients(&pts, 1e-6).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!(close(wrap_angle(3.0 * PI + 0.1), -PI + 0.1, 1e-12));
        assert!(close(wrap_angle(0.3), 0.3, 1e-15));
    }

    #[test]
    fn portrait_examples() {
        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        let ics: Vec<PhasePoint> = [0.5, 1.0, 2.0].iter().map(|&e| PhasePoint::planar((2.0f64 * e).sqrt(), 0.0)).collect();
        let portrait = phase_portrait(&h, &ics, 2.0 * PI, 1e-3, Scheme::Leapfrog).unwrap();
        assert_eq!(portrait.orbits.len(), 3);
        for o in &portrait.orbits {
            let r = (2.0 * o.energy).sqrt();
            let dev = o.q.iter().zip(&o.p).map(|(q, p)| ((q * q + p * p).sqrt() - r).abs()).fold(0.0, f64::max);
            assert!(dev <= 1e-4);
            assert!(o.q_wrapped.is_none());
        }

        let pend = pendulum(1.0).unwrap();
        let ic = level_start(&pend, 3.0).unwrap();
        let portrait = phase_portrait(&pend, &[ic], 20.0, 1e-3, Scheme::Leapfrog).unwrap();
        let o = &portrait.orbits[0];
        assert!(o.q.windows(2).all(|w| w[1] > w[0]));
        assert!(o.q_wrapped.as_ref().unwrap().iter().all(|t| *t > -PI && *t <= PI));

        let two = SeparableHamiltonian::free_particle(2);
        assert!(phase_portrait(&two, &[], 1.0, 0.1, Scheme::Rk4).is_err());
    }

    #[test]
    fn portrait_reports_failed_orbits() {
        // force is undefined for q > 10
        let h = SeparableHamiltonian::new(
            1,
            |p| 0.5 * p[0] * p[0],
            |p| vec![p[0]],
            |q| 0.5 * q[0] * q[0],
            |q| vec![if q[0] > 10.0 { f64::NAN } else { q[0] }],
        );
        let ics = [PhasePoint::planar(0.0, 0.1), PhasePoint::planar(0.0, 20.0)];
        let portrait = phase_portrait(&h, &ics, 5.0, 1e-2, Scheme::Rk4).unwrap();
        assert_eq!(portrait.orbits.len(), 1);
        assert_eq!(portrait.failures.len(), 1);
        assert_eq!(portrait.failures[0].index, 1);
        assert!(matches!(portrait.failures[0].error, Error::NonFiniteState { .. }));
    }
}
