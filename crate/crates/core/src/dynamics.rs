//! Vector fields, point maps, fixed-step integrators and the two routes to
//! the Jacobian determinant of a flow.
//!
//! `det Dφ^t(x)` is computed independently by
//!
//! * integrating the variational equation `J' = DF(φ^s(x)) J`, `J(0) = I`,
//!   alongside the state ([`flow_det_variational`]), and
//! * exponentiating the time integral of `div F` along the orbit
//!   ([`flow_det_liouville`]).
//!
//! Agreement of the two is the main consistency check of this module.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hamiltonian::SeparableHamiltonian;

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Autonomous vector field `F: R^d → R^d`, optionally carrying its analytic
/// divergence and Jacobian.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    label: String,
    eval: MapFn,
    divergence: Option<ScalarFn>,
    jacobian: Option<MatrixFn>,
}

impl VectorField {
    pub fn new(dim: usize, eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            label: String::from("field"),
            eval: Arc::new(eval),
            divergence: None,
            jacobian: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_divergence(mut self, div: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.divergence = Some(Arc::new(div));
        self
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Same field with the analytic divergence and Jacobian dropped, so every
    /// derivative goes through finite differences.
    pub fn without_analytic(&self) -> Self {
        Self {
            dim: self.dim,
            label: self.label.clone(),
            eval: Arc::clone(&self.eval),
            divergence: None,
            jacobian: None,
        }
    }

    /// `F ≡ 0` on `R^d`.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, move |_| vec![0.0; dim])
            .with_label("zero")
            .with_divergence(|_| 0.0)
            .with_jacobian(move |_| DMatrix::zeros(dim, dim))
    }

    /// Linear field `F(x) = A x`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(invalid("a", "linear field needs a non-empty square matrix"));
        }
        let dim = a.nrows();
        let trace = a.trace();
        let m = a.clone();
        Ok(Self::new(dim, move |x| (&m * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec())
            .with_label("linear")
            .with_divergence(move |_| trace)
            .with_jacobian(move |_| a.clone()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }

    pub fn has_analytic_divergence(&self) -> bool {
        self.divergence.is_some()
    }

    pub fn analytic_divergence(&self, x: &[f64]) -> Option<f64> {
        self.divergence.as_ref().map(|d| d(x))
    }

    pub fn analytic_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(x))
    }

    /// Jacobian `DF(x)`: analytic when attached, central differences otherwise.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => fd_jacobian(|y| self.eval(y), x, default_fd_step(x)),
        }
    }

    /// Checks that the attached Jacobian and divergence agree
    /// (`trace DF = div F`) at the given points.
    pub fn verify_consistency(&self, points: &[Vec<f64>], tol: f64) -> Result<()> {
        let (Some(div), Some(jac)) = (&self.divergence, &self.jacobian) else {
            return Ok(());
        };
        for x in points {
            let out = self.eval(x);
            if out.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: out.len(),
                });
            }
            let (tr, d) = (jac(x).trace(), div(x));
            if (tr - d).abs() > tol {
                return Err(invalid(
                    "divergence",
                    format!("trace of Jacobian {tr} differs from divergence {d} at {x:?}"),
                ));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .field("analytic_divergence", &self.divergence.is_some())
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// Damped linear oscillator `(q, p)' = (p, −q − γ p)`. Divergence `−γ`.
pub fn damped_oscillator(gamma: f64) -> Result<VectorField> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid("gamma", format!("damping must be finite and non-negative, got {gamma}")));
    }
    Ok(VectorField::new(2, move |z| vec![z[1], -z[0] - gamma * z[1]])
        .with_label(format!("damped oscillator gamma={gamma}"))
        .with_divergence(move |_| -gamma)
        .with_jacobian(move |_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -gamma])))
}

/// Discrete transformation `f: R^d → R^d`.
#[derive(Clone)]
pub struct PointMap {
    dim: usize,
    label: String,
    eval: MapFn,
}

impl PointMap {
    pub fn new(dim: usize, eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            label: String::from("map"),
            eval: Arc::new(eval),
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, |x| x.to_vec()).with_label("identity")
    }

    /// Circle rotation `x ↦ x + α mod 1`.
    pub fn rotation(alpha: f64) -> Self {
        Self::new(1, move |x| vec![(x[0] + alpha).rem_euclid(1.0)]).with_label(format!("rotation alpha={alpha}"))
    }

    /// Rotation by the golden mean `(√5 − 1)/2`.
    pub fn golden_rotation() -> Self {
        Self::rotation(golden_mean()).with_label("golden rotation")
    }

    /// Doubling map `x ↦ 2x mod 1`.
    ///
    /// A single application is exact in binary floating point, but iterating
    /// it discards one mantissa bit per step and every orbit reaches `0`
    /// within ~53 steps. Long orbits should use
    /// [`crate::recurrence::DyadicDoubling`] instead.
    pub fn doubling() -> Self {
        Self::new(1, |x| vec![(2.0 * x[0]).rem_euclid(1.0)]).with_label("doubling")
    }

    /// `x ↦ factor · x`.
    pub fn contraction(factor: f64) -> Self {
        Self::new(1, move |x| vec![factor * x[0]]).with_label(format!("contraction factor={factor}"))
    }

    /// Linear map `x ↦ A x`.
    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(invalid("a", "linear map needs a non-empty square matrix"));
        }
        let dim = a.nrows();
        Ok(Self::new(dim, move |x| (&a * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec())
            .with_label("linear"))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }
}

impl fmt::Debug for PointMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointMap")
            .field("dim", &self.dim)
            .field("label", &self.label)
            .finish()
    }
}

pub fn golden_mean() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// Fixed-step integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4,
    SymplecticEuler,
    Leapfrog,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Rk4, Scheme::SymplecticEuler, Scheme::Leapfrog];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::SymplecticEuler => "symplectic_euler",
            Scheme::Leapfrog => "leapfrog",
        }
    }

    pub fn is_symplectic(self) -> bool {
        !matches!(self, Scheme::Rk4)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid("scheme", format!("unknown scheme `{s}`")))
    }
}

/// What [`integrate`] advances: a plain field (RK4 only) or a separable
/// Hamiltonian (any scheme).
#[derive(Debug, Clone, Copy)]
pub enum Flow<'a> {
    Field(&'a VectorField),
    Hamiltonian(&'a SeparableHamiltonian),
}

impl<'a> From<&'a VectorField> for Flow<'a> {
    fn from(f: &'a VectorField) -> Self {
        Flow::Field(f)
    }
}

impl<'a> From<&'a SeparableHamiltonian> for Flow<'a> {
    fn from(h: &'a SeparableHamiltonian) -> Self {
        Flow::Hamiltonian(h)
    }
}

/// Uniformly sampled orbit `φ^{t_k}(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub scheme: Scheme,
    pub dt: f64,
    /// Length of the shortened last step when `t_final` is not a multiple of
    /// `dt`.
    pub partial_final_step: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial time")
    }
}

/// Both routes to `det Dφ^t(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetComparison {
    pub det_variational: f64,
    pub det_liouville: f64,
    pub t: f64,
}

impl DetComparison {
    pub fn disagreement(&self) -> f64 {
        (self.det_variational - self.det_liouville).abs()
    }
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn check_dt(dt: f64) -> Result<()> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(invalid("dt", format!("step must be finite and non-zero, got {dt}")));
    }
    Ok(())
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

/// Classical four-stage Runge–Kutta step for an arbitrary right-hand side.
fn rk4_generic(rhs: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], dt: f64) -> Vec<f64> {
    let k1 = rhs(x);
    let k2 = rhs(&axpy(x, 0.5 * dt, &k1));
    let k3 = rhs(&axpy(x, 0.5 * dt, &k2));
    let k4 = rhs(&axpy(x, dt, &k3));
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// One classical RK4 step of `x' = F(x)`.
pub fn rk4_step(field: &VectorField, x: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    let out = rk4_generic(|y| field.eval(y), x, dt);
    if all_finite(&out) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

fn split_phase(h: &SeparableHamiltonian, z: &[f64]) -> Result<usize> {
    let n = h.degrees_of_freedom();
    if z.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: z.len(),
        });
    }
    Ok(n)
}

/// Symplectic Euler: `p ← p − dt ∇V(q)`, then `q ← q + dt ∇T(p)`.
pub fn symplectic_euler_step(h: &SeparableHamiltonian, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let n = split_phase(h, z)?;
    let (q, p) = z.split_at(n);
    let p_new = axpy(p, -dt, &h.grad_potential(q));
    let q_new = axpy(q, dt, &h.grad_kinetic(&p_new));
    let out = [q_new, p_new].concat();
    if all_finite(&out) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

/// Störmer–Verlet in kick–drift–kick form.
pub fn leapfrog_step(h: &SeparableHamiltonian, z: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dt(dt)?;
    let n = split_phase(h, z)?;
    let (q, p) = z.split_at(n);
    let p_half = axpy(p, -0.5 * dt, &h.grad_potential(q));
    let q_new = axpy(q, dt, &h.grad_kinetic(&p_half));
    let p_new = axpy(&p_half, -0.5 * dt, &h.grad_potential(&q_new));
    let out = [q_new, p_new].concat();
    if all_finite(&out) {
        Ok(out)
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

/// Number of full `dt` steps covering `[0, t_final]` and the length of the
/// shortened last step, if one is needed.
pub(crate) fn step_plan(t_final: f64, dt: f64) -> (usize, Option<f64>) {
    let ratio = t_final / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        return (nearest as usize, None);
    }
    let full = ratio.floor();
    (full as usize, Some(t_final - full * dt))
}

pub(crate) type StepFn<'a> = Box<dyn Fn(&[f64], f64) -> Result<Vec<f64>> + 'a>;

/// Stepper closure for a flow/scheme pair, validated once up front.
pub(crate) fn stepper<'a>(
    flow: Flow<'a>,
    scheme: Scheme,
) -> Result<(usize, StepFn<'a>)> {
    Ok(match (flow, scheme) {
        (Flow::Field(f), Scheme::Rk4) => (f.dim(), Box::new(move |x, dt| rk4_step(f, x, dt))),
        (Flow::Field(_), s) => {
            return Err(Error::Unsupported(format!(
                "scheme `{s}` needs a separable Hamiltonian, not a bare vector field"
            )))
        }
        (Flow::Hamiltonian(h), Scheme::Rk4) => {
            let field = h.vector_field();
            (field.dim(), Box::new(move |x, dt| rk4_step(&field, x, dt)))
        }
        (Flow::Hamiltonian(h), Scheme::SymplecticEuler) => {
            (2 * h.degrees_of_freedom(), Box::new(move |x, dt| symplectic_euler_step(h, x, dt)))
        }
        (Flow::Hamiltonian(h), Scheme::Leapfrog) => {
            (2 * h.degrees_of_freedom(), Box::new(move |x, dt| leapfrog_step(h, x, dt)))
        }
    })
}

/// Drives a fixed-step integration and hands every sample `(t, state)` to
/// `visit`, starting with `(0, z0)`. Stops early when `visit` returns false.
pub(crate) fn integrate_visit(
    flow: Flow<'_>,
    z0: &[f64],
    t_final: f64,
    dt: f64,
    scheme: Scheme,
    mut visit: impl FnMut(f64, &[f64]) -> bool,
) -> Result<Option<f64>> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(invalid("t_final", format!("horizon must be positive, got {t_final}")));
    }
    if !(dt > 0.0 && dt <= t_final) {
        return Err(invalid("dt", format!("step must satisfy 0 < dt <= t_final, got {dt}")));
    }
    let (dim, step) = stepper(flow, scheme)?;
    if z0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: z0.len(),
        });
    }
    if !all_finite(z0) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let (full, partial) = step_plan(t_final, dt);
    let mut z = z0.to_vec();
    if !visit(0.0, &z) {
        return Ok(partial);
    }
    for k in 1..=full {
        z = step(&z, dt).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { step: k },
            other => other,
        })?;
        if !visit(k as f64 * dt, &z) {
            return Ok(partial);
        }
    }
    if let Some(h) = partial {
        z = step(&z, h).map_err(|e| match e {
            Error::NonFiniteState { .. } => Error::NonFiniteState { step: full + 1 },
            other => other,
        })?;
        visit(t_final, &z);
    }
    Ok(partial)
}

/// Integrates `z0` over `[0, t_final]` with a fixed step.
pub fn integrate<'a>(
    flow: impl Into<Flow<'a>>,
    z0: &[f64],
    t_final: f64,
    dt: f64,
    scheme: Scheme,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let partial_final_step = integrate_visit(flow.into(), z0, t_final, dt, scheme, |t, z| {
        times.push(t);
        states.push(z.to_vec());
        true
    })?;
    Ok(Trajectory {
        times,
        states,
        scheme,
        dt,
        partial_final_step,
    })
}

/// Finite-difference step `1e-5 · max(1, |x|∞)`.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-5 * x.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Central-difference Jacobian, row `i` = component, column `j` = direction.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = x.to_vec();
    for j in 0..d {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        for i in 0..d {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// `Σ_j (F_j(x + h e_j) − F_j(x − h e_j)) / 2h`.
pub fn divergence_fd(field: &VectorField, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut sum = 0.0;
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = field.eval(&probe)[j];
        probe[j] = x[j] - h;
        let minus = field.eval(&probe)[j];
        probe[j] = x[j];
        sum += (plus - minus) / (2.0 * h);
    }
    if sum.is_finite() {
        Ok(sum)
    } else {
        Err(Error::NonFiniteState { step: 0 })
    }
}

/// `div F(x)`: the analytic divergence when attached, central differences
/// with step `h` (default [`default_fd_step`]) otherwise.
pub fn divergence(field: &VectorField, x: &[f64], h: Option<f64>) -> Result<f64> {
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    match field.analytic_divergence(x) {
        Some(d) if d.is_finite() => Ok(d),
        Some(_) => Err(Error::NonFiniteState { step: 0 }),
        None => divergence_fd(field, x, h.unwrap_or_else(|| default_fd_step(x))),
    }
}

fn check_horizon(field: &VectorField, x: &[f64], t: f64, dt: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("time must be non-negative, got {t}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("step must be positive, got {dt}")));
    }
    if x.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// `det Dφ^t(x)` from RK4 on the augmented system `(x, J)`,
/// `J' = DF(x) J`, `J(0) = I`.
pub fn flow_det_variational(field: &VectorField, x: &[f64], t: f64, dt: f64) -> Result<f64> {
    check_horizon(field, x, t, dt)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let d = field.dim();
    let rhs = |y: &[f64]| {
        let (state, jflat) = y.split_at(d);
        let mut out = field.eval(state);
        let jac = field.jacobian(state);
        let j = DMatrix::from_column_slice(d, d, jflat);
        out.extend_from_slice((jac * j).as_slice());
        out
    };
    let mut y = x.to_vec();
    y.extend_from_slice(DMatrix::<f64>::identity(d, d).as_slice());
    let (full, partial) = step_plan(t, dt.min(t));
    let h = dt.min(t);
    for k in 1..=full {
        y = rk4_generic(rhs, &y, h);
        if !all_finite(&y) {
            return Err(Error::NonFiniteState { step: k });
        }
    }
    if let Some(rest) = partial {
        y = rk4_generic(rhs, &y, rest);
        if !all_finite(&y) {
            return Err(Error::NonFiniteState { step: full + 1 });
        }
    }
    let det = DMatrix::from_column_slice(d, d, &y[d..]).determinant();
    if det.is_finite() {
        Ok(det)
    } else {
        Err(Error::NonFiniteState { step: full })
    }
}

/// Composite Simpson on uniformly spaced samples when the interval count is
/// even, composite trapezoid otherwise.
pub fn uniform_quadrature(values: &[f64], h: f64) -> f64 {
    let intervals = values.len().saturating_sub(1);
    if intervals == 0 {
        return 0.0;
    }
    if intervals.is_multiple_of(2) {
        let inner: f64 = values[1..intervals]
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { 4.0 * v } else { 2.0 * v })
            .sum();
        h / 3.0 * (values[0] + inner + values[intervals])
    } else {
        let inner: f64 = values[1..intervals].iter().sum();
        h * (0.5 * values[0] + inner + 0.5 * values[intervals])
    }
}

/// `det Dφ^t(x) = exp(∫_0^t div F(φ^s(x)) ds)`, with the integral taken
/// over the RK4 orbit samples.
pub fn flow_det_liouville(field: &VectorField, x: &[f64], t: f64, dt: f64) -> Result<f64> {
    check_horizon(field, x, t, dt)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let h = dt.min(t);
    let mut uniform = Vec::new();
    let mut tail: Option<(f64, f64)> = None;
    let mut failure = None;
    let partial = integrate_visit(Flow::Field(field), x, t, h, Scheme::Rk4, |s, z| {
        match divergence(field, z, None) {
            Ok(div) => {
                // the shortened last sample sits off the uniform grid
                let on_grid = uniform.is_empty() || (s - (uniform.len() as f64) * h).abs() <= 1e-9 * h.max(s);
                if on_grid {
                    uniform.push(div);
                } else {
                    tail = Some((s, div));
                }
                true
            }
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut integral = uniform_quadrature(&uniform, h);
    if let (Some(rest), Some((_, last))) = (partial, tail) {
        integral += 0.5 * rest * (uniform[uniform.len() - 1] + last);
    }
    Ok(integral.exp())
}

pub fn flow_det_both(field: &VectorField, x: &[f64], t: f64, dt: f64) -> Result<DetComparison> {
    Ok(DetComparison {
        det_variational: flow_det_variational(field, x, t, dt)?,
        det_liouville: flow_det_liouville(field, x, t, dt)?,
        t,
    })
}

/// Determinant of the central-difference Jacobian of a map.
pub fn map_jacobian_det(f: &PointMap, x: &[f64], h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(invalid("h", format!("difference step must be positive, got {h}")));
    }
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: x.len(),
        });
    }
    let jac = fd_jacobian(|y| f.eval(y), x, h);
    for (j, col) in jac.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularStencil { column: j });
        }
    }
    Ok(jac.determinant())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{harmonic_oscillator, pendulum, SeparableHamiltonian};
    use proptest::prelude::*;

    fn rotation_field() -> VectorField {
        VectorField::new(2, |z| vec![z[1], -z[0]])
    }

    #[test]
    fn rk4_examples() {
        assert_eq!(rk4_step(&VectorField::zero(3), &[1.0, 2.0, 3.0], 0.1).unwrap(), vec![1.0, 2.0, 3.0]);

        let z = rk4_step(&rotation_field(), &[1.0, 0.0], 0.01).unwrap();
        assert!((z[0] - 0.01f64.cos()).abs() < 1e-9);
        assert!((z[1] + 0.01f64.sin()).abs() < 1e-9);

        let grow = VectorField::new(1, |x| vec![x[0]]);
        let x = rk4_step(&grow, &[1.0], 0.1).unwrap();
        assert!((x[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_rejects_zero_step_and_blowup() {
        assert!(rk4_step(&rotation_field(), &[1.0, 0.0], 0.0).is_err());
        let blow = VectorField::new(1, |x| vec![x[0] * 1e300]);
        assert_eq!(rk4_step(&blow, &[1e10], 1.0), Err(Error::NonFiniteState { step: 0 }));
    }

    #[test]
    fn symplectic_euler_examples() {
        let free = SeparableHamiltonian::free_particle(1);
        assert_eq!(symplectic_euler_step(&free, &[1.0, 2.0], 0.5).unwrap(), vec![2.0, 2.0]);

        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        let z = symplectic_euler_step(&h, &[1.0, 0.0], 0.1).unwrap();
        assert!((z[1] + 0.1).abs() < 1e-15);
        assert!((z[0] - 0.99).abs() < 1e-15);

        // reversing dt is not an exact inverse for this scheme, only O(dt^2)
        for dt in [0.1, 0.05, 0.025] {
            let back = symplectic_euler_step(&h, &symplectic_euler_step(&h, &[1.0, 0.0], -dt).unwrap(), dt).unwrap();
            let err = ((back[0] - 1.0).powi(2) + back[1].powi(2)).sqrt();
            assert!(err <= 2.0 * dt * dt, "dt {dt}: {err}");
        }
    }

    #[test]
    fn leapfrog_examples() {
        let free = SeparableHamiltonian::free_particle(1);
        assert_eq!(
            leapfrog_step(&free, &[1.0, 2.0], 0.5).unwrap(),
            symplectic_euler_step(&free, &[1.0, 2.0], 0.5).unwrap()
        );
        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        let z = leapfrog_step(&h, &[1.0, 0.0], 0.1).unwrap();
        assert!((z[0] - 0.995).abs() < 1e-12);
        assert!((z[1] + 0.099750).abs() < 5e-7);
        let back = leapfrog_step(&h, &z, -0.1).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-12 && back[1].abs() < 1e-12);
    }

    #[test]
    fn step_plan_handles_partial_steps() {
        assert_eq!(step_plan(1.0, 0.1), (10, None));
        assert_eq!(step_plan(10.0, 2.5e-3), (4000, None));
        let (n, rest) = step_plan(1.05, 0.1);
        assert_eq!(n, 10);
        assert!((rest.unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let traj = integrate(&VectorField::zero(2), &[0.3, -0.2], 1.0, 0.1, Scheme::Rk4).unwrap();
        assert_eq!(traj.len(), 11);
        assert!(traj.states.iter().all(|s| s == &vec![0.3, -0.2]));

        let h = harmonic_oscillator(1.0, 1.0).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        let traj = integrate(&h, &[1.0, 0.0], two_pi, 1e-3, Scheme::Rk4).unwrap();
        let end = traj.last_state();
        assert!((end[0] - 1.0).abs() < 1e-8 && end[1].abs() < 1e-8, "{end:?}");
        assert!((traj.final_time() - two_pi).abs() < 1e-12);
        assert!(traj.partial_final_step.is_some());
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));

        let p = pendulum(1.0).unwrap();
        let traj = integrate(&p, &[0.0, 6f64.sqrt()], 20.0, 1e-3, Scheme::Leapfrog).unwrap();
        assert!(traj.states.windows(2).all(|w| w[1][0] > w[0][0]));
    }

    #[test]
    fn integrate_validates_inputs() {
        let f = rotation_field();
        assert!(integrate(&f, &[1.0, 0.0], 0.0, 0.1, Scheme::Rk4).is_err());
        assert!(integrate(&f, &[1.0, 0.0], 1.0, 2.0, Scheme::Rk4).is_err());
        assert!(matches!(
            integrate(&f, &[1.0, 0.0], 1.0, 0.1, Scheme::Leapfrog),
            Err(Error::Unsupported(_))
        ));
        assert!(integrate(&f, &[1.0], 1.0, 0.1, Scheme::Rk4).is_err());
        let blow = VectorField::new(1, |x| vec![x[0] * x[0]]);
        match integrate(&blow, &[1.0], 5.0, 0.1, Scheme::Rk4) {
            Err(Error::NonFiniteState { step }) => assert!(step > 5),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn divergence_examples() {
        let radial = VectorField::new(2, |x| vec![x[0], x[1]]);
        assert!((divergence(&radial, &[0.3, -1.2], None).unwrap() - 2.0).abs() < 1e-8);
        let damped = damped_oscillator(0.3).unwrap();
        assert_eq!(divergence(&damped, &[1.0, 1.0], None).unwrap(), -0.3);
        let fd = divergence(&damped.without_analytic(), &[1.0, 1.0], None).unwrap();
        assert!((fd + 0.3).abs() < 1e-8);
        for h in [harmonic_oscillator(2.0, 1.5).unwrap(), pendulum(1.0).unwrap()] {
            let f = h.vector_field().without_analytic();
            assert!(divergence(&f, &[0.4, -0.8], None).unwrap().abs() < 1e-6);
        }
        assert!(divergence_fd(&radial, &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn det_variational_examples() {
        let h = harmonic_oscillator(1.0, 1.0).unwrap().vector_field();
        assert_eq!(flow_det_variational(&h, &[1.0, 0.0], 0.0, 1e-3).unwrap(), 1.0);
        assert!((flow_det_variational(&h, &[1.0, 0.0], 5.0, 1e-3).unwrap() - 1.0).abs() < 1e-6);
        let damped = damped_oscillator(0.5).unwrap();
        let det = flow_det_variational(&damped, &[1.0, 0.0], 2.0, 1e-3).unwrap();
        assert!((det - (-1.0f64).exp()).abs() < 1e-6);
        // finite-difference Jacobian route
        let det = flow_det_variational(&damped.without_analytic(), &[1.0, 0.0], 2.0, 1e-3).unwrap();
        assert!((det - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn det_liouville_examples() {
        let h = pendulum(1.0).unwrap().vector_field();
        assert!((flow_det_liouville(&h, &[0.5, 0.1], 3.0, 1e-3).unwrap() - 1.0).abs() < 1e-12);
        let damped = damped_oscillator(0.5).unwrap();
        let det = flow_det_liouville(&damped, &[1.0, 0.0], 2.0, 1e-3).unwrap();
        assert!((det - (-1.0f64).exp()).abs() < 1e-8);
        // partial final step and odd interval count
        let det = flow_det_liouville(&damped, &[1.0, 0.0], 2.0005, 1e-3).unwrap();
        assert!((det - (-0.5f64 * 2.0005).exp()).abs() < 1e-8);
        let det = flow_det_liouville(&damped, &[1.0, 0.0], 2.001, 1e-3).unwrap();
        assert!((det - (-0.5f64 * 2.001).exp()).abs() < 1e-8);
        assert_eq!(flow_det_liouville(&damped, &[1.0, 0.0], 0.0, 1e-3).unwrap(), 1.0);
        assert!(flow_det_liouville(&damped, &[1.0, 0.0], -1.0, 1e-3).is_err());
    }

    #[test]
    fn quadrature_rules() {
        // x^2 on [0, 1]: Simpson exact, trapezoid with 3 intervals = 1/3 + 1/54
        let simpson: Vec<f64> = (0..=4).map(|i| (i as f64 / 4.0).powi(2)).collect();
        assert!((uniform_quadrature(&simpson, 0.25) - 1.0 / 3.0).abs() < 1e-15);
        let trap: Vec<f64> = (0..=3).map(|i| (i as f64 / 3.0).powi(2)).collect();
        assert!((uniform_quadrature(&trap, 1.0 / 3.0) - (1.0 / 3.0 + 1.0 / 54.0)).abs() < 1e-15);
        assert_eq!(uniform_quadrature(&[2.0], 0.1), 0.0);
    }

    #[test]
    fn map_det_examples() {
        assert!((map_jacobian_det(&PointMap::identity(3), &[0.1, 0.2, 0.3], 1e-5).unwrap() - 1.0).abs() < 1e-9);
        let diag = PointMap::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
        assert!((map_jacobian_det(&diag, &[0.7, -0.4], 1e-5).unwrap() - 1.0).abs() < 1e-9);
        let stretch = PointMap::new(2, |x| vec![2.0 * x[0], x[1]]);
        assert!((map_jacobian_det(&stretch, &[0.7, -0.4], 1e-5).unwrap() - 2.0).abs() < 1e-8);
        let bad = PointMap::new(2, |x| vec![x[0].ln(), x[1]]);
        assert_eq!(map_jacobian_det(&bad, &[0.0, 1.0], 1e-5), Err(Error::SingularStencil { column: 0 }));
    }

    #[test]
    fn field_consistency_check() {
        let d = damped_oscillator(0.2).unwrap();
        assert!(d.verify_consistency(&[vec![0.1, 0.2], vec![-3.0, 1.0]], 1e-9).is_ok());
        let wrong = VectorField::new(2, |z| vec![z[1], -z[0]])
            .with_divergence(|_| 1.0)
            .with_jacobian(|_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        assert!(wrong.verify_consistency(&[vec![0.0, 0.0]], 1e-9).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("euler".parse::<Scheme>().is_err());
    }

    proptest! {
        #[test]
        fn leapfrog_is_time_reversible(q in -2.0..2.0f64, p in -2.0..2.0f64, k in 1usize..200) {
            let h = pendulum(1.0).unwrap();
            let dt = 1e-2;
            let mut z = vec![q, p];
            for _ in 0..k { z = leapfrog_step(&h, &z, dt).unwrap(); }
            for _ in 0..k { z = leapfrog_step(&h, &z, -dt).unwrap(); }
            prop_assert!((z[0] - q).abs() <= 1e-10 * k as f64);
            prop_assert!((z[1] - p).abs() <= 1e-10 * k as f64);
        }
    }
}
