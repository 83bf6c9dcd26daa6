use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::{defaults, Experiment, ExperimentConfig, Parameters, SystemKey};
use super::output::{format_float, format_opt, render_polylines_svg, CsvTable, Polyline};
use super::CliError;
use crate::dynamics::{self, damped_oscillator, PointMap, Scheme, VectorField};
use crate::hamiltonian::{self, classify_pendulum_orbit_scaled, PhasePoint, SeparableHamiltonian, SEPARATRIX_TOL};
use crate::measure::{self, Rect, RectUnion, TestFunction};
use crate::recurrence::{self, DyadicDoubling, IteratedMap, RecurrenceReport};

type R<T> = Result<T, CliError>;

/// Everything a run produces before it touches the filesystem.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub csv: Vec<u8>,
    pub svg: Option<String>,
    pub summary: Value,
    pub check_passed: bool,
    pub check_detail: String,
}

const MAX_STORED_STEPS: f64 = 1e7;
const MAX_STREAMED_STEPS: f64 = 1e9;

/// Validates `config` and runs the experiment in memory.
pub fn compute(config: &ExperimentConfig) -> R<Artifacts> {
    let (exp, sys) = (config.experiment, config.system);
    let supported = super::config::system_registry()
        .into_iter()
        .find(|s| s.key == sys)
        .map(|s| s.experiments.contains(&exp))
        .unwrap_or(false);
    if !supported {
        return Err(CliError::validation(format!("system `{sys}` does not support the `{exp}` experiment")));
    }
    let allowed = allowed_keys(exp, sys);
    let stray: Vec<String> = config
        .parameters
        .present_keys()
        .into_iter()
        .filter(|k| !allowed.contains(&k.as_str()))
        .collect();
    if !stray.is_empty() {
        return Err(CliError::validation(format!(
            "parameter(s) {} do not apply to `{exp}` on `{sys}`; accepted: {}",
            stray.join(", "),
            allowed.join(", ")
        )));
    }
    let p = &config.parameters;
    match exp {
        Experiment::Portrait => portrait(sys, p),
        Experiment::Simulate => simulate(sys, p),
        Experiment::Liouville => liouville(sys, p),
        Experiment::Recurrence => recurrence(sys, p),
        Experiment::Volume => volume(sys, p),
        Experiment::Invariance => invariance(sys, p),
    }
}

fn allowed_keys(exp: Experiment, sys: SystemKey) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = match sys {
        SystemKey::Harmonic => vec!["m", "omega"],
        SystemKey::Pendulum => vec!["g_over_L"],
        SystemKey::Damped => vec!["gamma"],
        SystemKey::Rotation => vec!["alpha"],
        SystemKey::Doubling | SystemKey::Contraction => vec![],
        SystemKey::CustomPolynomial => vec!["coefficients"],
    };
    keys.extend(match exp {
        Experiment::Portrait => vec!["E_levels", "dt", "t_final", "scheme", "tolerance"],
        Experiment::Simulate => vec!["q0", "p0", "dt", "t_final", "scheme", "tolerance"],
        Experiment::Liouville => vec!["q0", "p0", "dt", "t_final", "times", "tolerance"],
        Experiment::Recurrence if sys.is_map() => vec!["n_points", "seed", "horizon", "set"],
        Experiment::Recurrence => vec!["n_points", "seed", "t_final", "dt", "q0", "p0", "radius"],
        Experiment::Volume => vec!["E_levels", "n_samples", "grid", "seed", "tolerance"],
        Experiment::Invariance => vec!["n_samples", "grid", "seed", "tolerance", "set"],
    });
    if exp == Experiment::Simulate && sys == SystemKey::Harmonic {
        keys.extend(["A", "delta"]);
    }
    keys
}

fn bad(name: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::validation(format!("parameter `{name}`: {reason}"))
}

fn finite(name: &str, v: f64) -> R<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(name, format!("must be finite, got {v}")))
    }
}

fn positive(name: &str, v: f64) -> R<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(name, format!("must be positive and finite, got {v}")))
    }
}

fn count<T: PartialOrd + Copy + std::fmt::Display>(name: &str, v: T, lo: T, hi: T) -> R<T> {
    if v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(bad(name, format!("must lie in [{lo}, {hi}], got {v}")))
    }
}

/// `dt` and `t_final` for a fixed-step run, with a cap on the step count.
fn time_grid(p: &Parameters, default_dt: f64, default_t: f64, max_steps: f64) -> R<(f64, f64)> {
    let dt = positive("dt", p.dt.unwrap_or(default_dt))?;
    let t = positive("t_final", p.t_final.unwrap_or(default_t))?;
    if dt > t {
        return Err(bad("dt", format!("step {dt} exceeds t_final {t}")));
    }
    if t / dt > max_steps {
        return Err(bad("t_final", format!("t_final/dt = {:.3e} exceeds {max_steps:.0e} steps", t / dt)));
    }
    Ok((dt, t))
}

fn tolerance(p: &Parameters, default: f64) -> R<f64> {
    positive("tolerance", p.tolerance.unwrap_or(default))
}

fn unit_interval_set(p: &Parameters, default: [f64; 2]) -> R<(f64, f64)> {
    let [lo, hi] = p.set.unwrap_or(default);
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(bad("set", format!("need 0 <= lo < hi <= 1, got [{lo}, {hi})")));
    }
    Ok((lo, hi))
}

fn hamiltonian_for(sys: SystemKey, p: &Parameters) -> R<SeparableHamiltonian> {
    Ok(match sys {
        SystemKey::Harmonic => hamiltonian::harmonic_oscillator(
            p.m.unwrap_or(defaults::M),
            p.omega.unwrap_or(defaults::OMEGA),
        )?,
        SystemKey::Pendulum => hamiltonian::pendulum(p.g_over_l.unwrap_or(defaults::G_OVER_L))?,
        SystemKey::CustomPolynomial => {
            let c = p.coefficients.clone().unwrap_or_else(|| defaults::COEFFICIENTS.to_vec());
            hamiltonian::polynomial_potential(&c)?
        }
        other => return Err(CliError::validation(format!("`{other}` is not a Hamiltonian system"))),
    })
}

/// Hamiltonian systems and the damped control as a plain vector field, with
/// an energy-like observable for the CSV.
enum PlanarSystem {
    Hamiltonian(SeparableHamiltonian),
    Damped { field: VectorField, gamma: f64 },
}

impl PlanarSystem {
    fn build(sys: SystemKey, p: &Parameters) -> R<Self> {
        if sys == SystemKey::Damped {
            let gamma = p.gamma.unwrap_or(defaults::GAMMA);
            finite("gamma", gamma)?;
            return Ok(PlanarSystem::Damped {
                field: damped_oscillator(gamma)?,
                gamma,
            });
        }
        Ok(PlanarSystem::Hamiltonian(hamiltonian_for(sys, p)?))
    }

    fn field(&self) -> VectorField {
        match self {
            PlanarSystem::Hamiltonian(h) => h.vector_field(),
            PlanarSystem::Damped { field, .. } => field.clone(),
        }
    }

    fn energy(&self, z: &[f64]) -> f64 {
        match self {
            PlanarSystem::Hamiltonian(h) => h.energy_at(z),
            PlanarSystem::Damped { .. } => 0.5 * (z[0] * z[0] + z[1] * z[1]),
        }
    }

    fn integrate(&self, z0: &[f64], t: f64, dt: f64, scheme: Scheme) -> crate::Result<dynamics::Trajectory> {
        match self {
            PlanarSystem::Hamiltonian(h) => dynamics::integrate(h, z0, t, dt, scheme),
            PlanarSystem::Damped { field, .. } => dynamics::integrate(field, z0, t, dt, scheme),
        }
    }
}

fn default_start(sys: SystemKey) -> (f64, f64) {
    match sys {
        SystemKey::Pendulum => (0.0, 2f64.sqrt()),
        SystemKey::CustomPolynomial => (0.0, 1.0),
        _ => (1.0, 0.0),
    }
}

fn start_point(sys: SystemKey, p: &Parameters) -> R<(f64, f64)> {
    let (dq, dp) = default_start(sys);
    Ok((finite("q0", p.q0.unwrap_or(dq))?, finite("p0", p.p0.unwrap_or(dp))?))
}

fn energy_levels(p: &Parameters, default: &[f64]) -> R<Vec<f64>> {
    let levels = p.energy_levels.clone().unwrap_or_else(|| default.to_vec());
    if levels.is_empty() {
        return Err(bad("E_levels", "need at least one level"));
    }
    for &e in &levels {
        positive("E_levels", e)?;
    }
    Ok(levels)
}

fn portrait(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let h = hamiltonian_for(sys, p)?;
    let levels = energy_levels(
        p,
        if sys == SystemKey::Pendulum {
            &[1.0, 2.0, 3.0]
        } else {
            &[0.5, 1.0, 2.0]
        },
    )?;
    let omega = p.omega.unwrap_or(defaults::OMEGA);
    let m = p.m.unwrap_or(defaults::M);
    let g = p.g_over_l.unwrap_or(defaults::G_OVER_L);
    let default_t = if sys == SystemKey::Harmonic { TAU / omega } else { 20.0 };
    let (dt, t_final) = time_grid(p, defaults::DT, default_t, MAX_STORED_STEPS)?;
    let scheme = p.scheme.unwrap_or(Scheme::Leapfrog);
    let tol = tolerance(p, 1e-4)?;

    // (level index, label, start)
    let mut starts: Vec<(usize, String, PhasePoint)> = Vec::new();
    for (i, &e) in levels.iter().enumerate() {
        match sys {
            SystemKey::Harmonic => {
                starts.push((i, format!("E={e}"), PhasePoint::planar((2.0 * e / (m * omega * omega)).sqrt(), 0.0)));
            }
            SystemKey::Pendulum => {
                let s = hamiltonian::level_start(&h, e)?;
                let mirrored = PhasePoint::planar(s.q[0], -s.p[0]);
                starts.push((i, format!("E={e}"), s));
                // open and separatrix levels need both momentum branches
                if e >= 2.0 * g - SEPARATRIX_TOL {
                    starts.push((i, format!("E={e} (p<0)"), mirrored));
                }
            }
            _ => starts.push((i, format!("E={e}"), hamiltonian::level_start(&h, e)?)),
        }
    }

    let ics: Vec<PhasePoint> = starts.iter().map(|s| s.2.clone()).collect();
    let portrait = hamiltonian::phase_portrait(&h, &ics, t_final, dt, scheme)?;
    if portrait.orbits.is_empty() {
        let first = &portrait.failures[0].error;
        return Err(CliError::numerical(format!("every orbit failed: {first}")));
    }
    let failed: Vec<usize> = portrait.failures.iter().map(|f| f.index).collect();
    let angular = h.has_angular_coordinate();

    let mut header = vec!["orbit", "energy_level", "t", "q1", "p1", "H"];
    if angular {
        header.push("q1_wrapped");
    }
    let mut table = CsvTable::new(&header)?;
    let mut polylines = Vec::new();
    let mut orbit_summaries = Vec::new();
    let mut worst = 0.0f64;
    let succeeded = (0..starts.len()).filter(|i| !failed.contains(i));
    for (orbit, (k, o)) in succeeded.zip(portrait.orbits.iter()).enumerate() {
        let (level_idx, label, _) = &starts[k];
        let level = levels[*level_idx];
        let mut residual = 0.0f64;
        for j in 0..o.times.len() {
            let hv = h.energy_at(&[o.q[j], o.p[j]]);
            residual = residual.max((hv - level).abs());
            let mut row = vec![
                orbit.to_string(),
                format_float(level),
                format_float(o.times[j]),
                format_float(o.q[j]),
                format_float(o.p[j]),
                format_float(hv),
            ];
            if let Some(w) = &o.q_wrapped {
                row.push(format_float(w[j]));
            }
            table.row(&row)?;
        }
        worst = worst.max(residual);
        let xs = o.q_wrapped.as_ref().unwrap_or(&o.q);
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(o.p.iter().copied()).collect();
        polylines.push(if angular {
            Polyline::split_at_jumps(label.clone(), &pts, PI)
        } else {
            Polyline::single(label.clone(), pts)
        });
        let mut entry = json!({
            "orbit": orbit,
            "label": label,
            "energy_level": level,
            "start": [o.initial.q[0], o.initial.p[0]],
            "max_level_residual": residual,
        });
        if angular {
            let lo = o.q.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = o.q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            entry["class"] = json!(classify_pendulum_orbit_scaled(level, g, SEPARATRIX_TOL)?);
            entry["angle_swing"] = json!(hi - lo);
        }
        orbit_summaries.push(entry);
    }
    let x_label = if angular { "theta (wrapped)" } else { "q" };
    let svg = render_polylines_svg(&format!("{} phase portrait", h.label()), x_label, "p", &polylines);
    let passed = failed.is_empty() && worst <= tol;
    Ok(Artifacts {
        csv: table.into_bytes()?,
        svg: Some(svg),
        summary: json!({
            "system": h.label(),
            "scheme": scheme,
            "dt": dt,
            "t_final": t_final,
            "orbits": orbit_summaries,
            "failed_orbits": portrait.failures.iter().map(|f| json!({"index": f.index, "error": f.error.to_string()})).collect::<Vec<_>>(),
            "max_level_residual": worst,
        }),
        check_passed: passed,
        check_detail: format!(
            "max |H - E| = {worst:.3e} (tolerance {tol:.1e}), {} failed orbit(s)",
            failed.len()
        ),
    })
}

fn simulate(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let system = PlanarSystem::build(sys, p)?;
    let (dt, t_final) = time_grid(p, defaults::DT, 10.0, MAX_STORED_STEPS)?;
    let scheme = p.scheme.unwrap_or(Scheme::Rk4);
    if matches!(system, PlanarSystem::Damped { .. }) && scheme != Scheme::Rk4 {
        return Err(bad("scheme", format!("`{scheme}` needs a separable Hamiltonian; use rk4")));
    }
    let tol = tolerance(p, 1e-5)?;
    let m = p.m.unwrap_or(defaults::M);
    let omega = p.omega.unwrap_or(defaults::OMEGA);
    let closed_form = p.amplitude.is_some() || p.delta.is_some();
    if closed_form && (p.q0.is_some() || p.p0.is_some()) {
        return Err(CliError::validation("give either (A, delta) or (q0, p0), not both"));
    }
    let (q0, p0) = if closed_form {
        let a = finite("A", p.amplitude.unwrap_or(1.0))?;
        let delta = finite("delta", p.delta.unwrap_or(0.0))?;
        let z = hamiltonian::harmonic_exact(a, delta, omega, 0.0);
        (z.q[0], m * z.p[0])
    } else {
        start_point(sys, p)?
    };

    let traj = system.integrate(&[q0, p0], t_final, dt, scheme)?;
    let mut table = CsvTable::new(&["t", "q1", "p1", "H"])?;
    let energies: Vec<f64> = traj.states.iter().map(|z| system.energy(z)).collect();
    for ((t, z), e) in traj.times.iter().zip(&traj.states).zip(&energies) {
        table.row(&[format_float(*t), format_float(z[0]), format_float(z[1]), format_float(*e)])?;
    }
    let e0 = energies[0];
    let drift = energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max);
    let mut summary = json!({
        "scheme": scheme,
        "dt": dt,
        "t_final": t_final,
        "partial_final_step": traj.partial_final_step,
        "initial": [q0, p0],
        "final": traj.last_state(),
        "initial_energy": e0,
        "final_energy": energies[energies.len() - 1],
        "energy_drift": drift,
    });
    let (passed, detail) = match &system {
        PlanarSystem::Hamiltonian(_) => {
            if sys == SystemKey::Harmonic {
                // closed form through the same initial state
                let a = q0.hypot(p0 / (m * omega));
                let delta = (p0 / (m * omega)).atan2(q0) / omega;
                let dev = traj
                    .times
                    .iter()
                    .zip(&traj.states)
                    .map(|(&t, z)| {
                        let e = hamiltonian::harmonic_exact(a, delta, omega, t);
                        (z[0] - e.q[0]).abs().max((z[1] - m * e.p[0]).abs())
                    })
                    .fold(0.0, f64::max);
                summary["max_deviation_from_closed_form"] = json!(dev);
            }
            (drift <= tol, format!("energy drift {drift:.3e} (tolerance {tol:.1e})"))
        }
        PlanarSystem::Damped { .. } => {
            let rise = energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
            summary["max_energy_increase"] = json!(rise);
            (rise <= tol, format!("largest energy increase {rise:.3e} (tolerance {tol:.1e})"))
        }
    };
    Ok(Artifacts {
        csv: table.into_bytes()?,
        svg: None,
        summary,
        check_passed: passed,
        check_detail: detail,
    })
}

fn liouville(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let system = PlanarSystem::build(sys, p)?;
    let (q0, p0) = start_point(sys, p)?;
    let times = match (&p.times, p.t_final) {
        (Some(_), Some(_)) => return Err(CliError::validation("give either `times` or `t_final`, not both")),
        (Some(ts), None) => ts.clone(),
        (None, t) => vec![t.unwrap_or(2.0)],
    };
    if times.is_empty() {
        return Err(bad("times", "need at least one time"));
    }
    let dt = positive("dt", p.dt.unwrap_or(defaults::DT))?;
    for &t in &times {
        positive("times", t)?;
        if t / dt > MAX_STREAMED_STEPS {
            return Err(bad("times", format!("t/dt = {:.3e} is too many steps", t / dt)));
        }
    }
    let tol = tolerance(p, 1e-5)?;
    let field = system.field();
    let reference = |t: f64| match &system {
        PlanarSystem::Damped { gamma, .. } => (-gamma * t).exp(),
        PlanarSystem::Hamiltonian(_) => 1.0,
    };
    let x = [q0, p0];
    let rows = times
        .par_iter()
        .map(|&t| dynamics::flow_det_both(&field, &x, t, dt))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut table = CsvTable::new(&["t", "det_var", "det_liou", "reference"])?;
    let mut worst = 0.0f64;
    for r in &rows {
        let reference = reference(r.t);
        worst = worst
            .max((r.det_variational - reference).abs())
            .max((r.det_liouville - reference).abs());
        table.row(&[
            format_float(r.t),
            format_float(r.det_variational),
            format_float(r.det_liouville),
            format_float(reference),
        ])?;
    }
    Ok(Artifacts {
        csv: table.into_bytes()?,
        svg: None,
        summary: json!({
            "start": x,
            "dt": dt,
            "rows": rows,
            "max_deviation_from_reference": worst,
        }),
        check_passed: worst <= tol,
        check_detail: format!("max |det - reference| = {worst:.3e} (tolerance {tol:.1e})"),
    })
}

fn recurrence(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let n_points = count("n_points", p.n_points.unwrap_or(defaults::N_POINTS), 1, 1_000_000)?;
    let seed = p.seed.unwrap_or(0);
    let (report, header, horizon_summary) = if sys.is_map() {
        let (lo, hi) = unit_interval_set(p, set_default(sys))?;
        let default_h = if sys == SystemKey::Doubling {
            defaults::DOUBLING_HORIZON
        } else {
            defaults::MAP_HORIZON
        };
        let horizon = count("horizon", p.horizon.unwrap_or(default_h), 1, 1_000_000_000)?;
        if (n_points as f64) * (horizon as f64) > 1e11 {
            return Err(bad("horizon", "n_points * horizon exceeds 1e11 map evaluations"));
        }
        let alpha = finite("alpha", p.alpha.unwrap_or_else(dynamics::golden_mean))?;
        let in_set = move |x: &[f64]| x[0] >= lo && x[0] < hi;
        let domain = Rect::unit(1)?;
        let map: Box<dyn IteratedMap> = match sys {
            SystemKey::Rotation => Box::new(PointMap::rotation(alpha)),
            SystemKey::Doubling => Box::new(DyadicDoubling),
            _ => Box::new(PointMap::contraction(defaults::CONTRACTION_FACTOR)),
        };
        let report = recurrence::recurrence_experiment_map(map.as_ref(), &in_set, &domain, n_points, horizon, seed)?;
        (report, vec!["index", "x1"], json!({"horizon_steps": horizon, "set": [lo, hi]}))
    } else {
        let system = PlanarSystem::build(sys, p)?;
        let (cq, cp) = start_point(sys, p)?;
        let radius = positive("radius", p.radius.unwrap_or(defaults::RADIUS))?;
        let default_t = match sys {
            SystemKey::Pendulum => 50.0,
            SystemKey::Harmonic => 3.0 * TAU / p.omega.unwrap_or(defaults::OMEGA),
            _ => 3.0 * TAU,
        };
        let (dt, t_final) = time_grid(p, defaults::FLOW_RECURRENCE_DT, default_t, MAX_STREAMED_STEPS)?;
        if n_points as f64 * t_final / dt > 1e10 {
            return Err(bad("t_final", "n_points * t_final/dt exceeds 1e10 steps"));
        }
        let field = system.field();
        let in_set = move |z: &[f64]| (z[0] - cq).hypot(z[1] - cp) < radius;
        let domain = Rect::from_bounds(&[(cq - radius, cq + radius), (cp - radius, cp + radius)])?;
        let report = recurrence::recurrence_experiment_flow(&field, &in_set, &domain, n_points, t_final, dt, seed)?;
        (
            report,
            vec!["index", "q1", "p1"],
            json!({"horizon_time": t_final, "dt": dt, "set": {"center": [cq, cp], "radius": radius}}),
        )
    };
    let csv = recurrence_csv(&report, &header)?;
    let expected_return = sys.preserves_volume();
    let passed = if expected_return {
        report.returning_fraction == 1.0
    } else {
        report.returning_fraction <= 0.05
    };
    Ok(Artifacts {
        csv,
        svg: None,
        summary: json!({
            "returning_fraction": report.returning_fraction,
            "mean_first_return": report.mean_first_return,
            "max_first_return": report.max_first_return(),
            "set_measure_estimate": report.set_measure_estimate,
            "n_points": report.records.len(),
            "seed": seed,
            "horizon": horizon_summary,
        }),
        check_passed: passed,
        check_detail: format!(
            "returning fraction {} (expected {})",
            report.returning_fraction,
            if expected_return { "1.0" } else { "<= 0.05" }
        ),
    })
}

fn set_default(sys: SystemKey) -> [f64; 2] {
    if sys == SystemKey::Contraction {
        defaults::CONTRACTION_SET
    } else {
        defaults::SET
    }
}

fn recurrence_csv(report: &RecurrenceReport, coords: &[&str]) -> R<Vec<u8>> {
    let mut header = coords.to_vec();
    header.extend(["first_return", "return_count", "horizon"]);
    let mut table = CsvTable::new(&header)?;
    let fmt_time = |t: recurrence::ReturnTime| match t {
        recurrence::ReturnTime::Step(n) => n.to_string(),
        recurrence::ReturnTime::Time(t) => format_float(t),
    };
    for (i, r) in report.records.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(r.start.iter().map(|&x| format_float(x)));
        row.push(r.first_return.map(fmt_time).unwrap_or_default());
        row.push(r.return_count.to_string());
        row.push(fmt_time(r.horizon));
        table.row(&row)?;
    }
    table.into_bytes()
}

/// Area of `{θ : |θ| ≤ π, p² < 2(E − g(1 − cos θ))}` by composite Simpson
/// in θ.
fn pendulum_sublevel_area(e: f64, g: f64) -> f64 {
    let n = 1 << 20;
    let h = TAU / n as f64;
    let f = |theta: f64| 2.0 * (2.0 * (e - g * (1.0 - theta.cos()))).max(0.0).sqrt();
    let values: Vec<f64> = (0..=n).map(|k| f(-PI + k as f64 * h)).collect();
    dynamics::uniform_quadrature(&values, h)
}

fn volume(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let h = hamiltonian_for(sys, p)?;
    let levels = energy_levels(
        p,
        if sys == SystemKey::Pendulum {
            &[1.0, 2.0, 3.0]
        } else {
            &[0.5, 1.0, 2.0]
        },
    )?;
    let n = count("n_samples", p.n_samples.unwrap_or(defaults::N_SAMPLES), 1, 10_000_000_000)?;
    let grid = count("grid", p.grid.unwrap_or(defaults::VOLUME_GRID), 2, 100_000)?;
    let seed = p.seed.unwrap_or(0);
    let k = tolerance(p, defaults::K_SIGMA)?;
    let m = p.m.unwrap_or(defaults::M);
    let omega = p.omega.unwrap_or(defaults::OMEGA);
    let g = p.g_over_l.unwrap_or(defaults::G_OVER_L);

    let mut table = CsvTable::new(&[
        "energy_level",
        "mc_estimate",
        "standard_error",
        "grid_estimate",
        "reference",
        "reference_kind",
    ])?;
    let mut rows = Vec::new();
    let mut worst_sigmas = 0.0f64;
    for &e in &levels {
        let (domain, reference, kind) = match sys {
            SystemKey::Harmonic => {
                let qm = 1.05 * (2.0 * e / (m * omega * omega)).sqrt();
                let pm = 1.05 * (2.0 * m * e).sqrt();
                (Rect::from_bounds(&[(-qm, qm), (-pm, pm)])?, TAU * e / omega, "analytic")
            }
            _ => {
                let pm = 1.05 * (2.0 * e).sqrt();
                (Rect::from_bounds(&[(-PI, PI), (-pm, pm)])?, pendulum_sublevel_area(e, g), "quadrature")
            }
        };
        let inside = |z: &[f64]| h.energy_at(z) < e;
        let mc = measure::estimate_volume_mc(inside, &domain, n, seed)?;
        let grid_est = measure::grid_measure(inside, &domain, grid)?;
        let sigmas = if mc.standard_error > 0.0 {
            (mc.estimate - reference).abs() / mc.standard_error
        } else if mc.estimate == reference {
            0.0
        } else {
            f64::INFINITY
        };
        worst_sigmas = worst_sigmas.max(sigmas);
        table.row(&[
            format_float(e),
            format_float(mc.estimate),
            format_float(mc.standard_error),
            format_float(grid_est),
            format_float(reference),
            kind.to_string(),
        ])?;
        rows.push(json!({
            "energy_level": e,
            "mc": mc,
            "grid_estimate": grid_est,
            "reference": reference,
            "reference_kind": kind,
            "sigmas": sigmas,
        }));
    }
    Ok(Artifacts {
        csv: table.into_bytes()?,
        svg: None,
        summary: json!({ "levels": rows, "n_samples": n, "grid": grid, "seed": seed }),
        check_passed: worst_sigmas <= k,
        check_detail: format!("worst Monte Carlo deviation {worst_sigmas:.2} sigma (allowed {k})"),
    })
}

fn invariance_test_functions() -> Vec<TestFunction> {
    vec![
        TestFunction::new("cos(2 pi x)", |x| (TAU * x[0]).cos()),
        TestFunction::new("x^2", |x| x[0] * x[0]),
        TestFunction::new("indicator[0.3,0.6)", |x| if (0.3..0.6).contains(&x[0]) { 1.0 } else { 0.0 }),
        TestFunction::new("x", |x| x[0]),
    ]
}

fn invariance(sys: SystemKey, p: &Parameters) -> R<Artifacts> {
    let n = count("n_samples", p.n_samples.unwrap_or(defaults::N_SAMPLES), 2, 10_000_000_000)?;
    let grid = count("grid", p.grid.unwrap_or(defaults::GRID), 2, 10_000_000)?;
    let seed = p.seed.unwrap_or(0);
    let k = tolerance(p, defaults::K_SIGMA)?;
    let (lo, hi) = unit_interval_set(p, set_default(sys))?;
    let alpha = finite("alpha", p.alpha.unwrap_or_else(dynamics::golden_mean))?;
    let f = match sys {
        SystemKey::Rotation => PointMap::rotation(alpha),
        SystemKey::Doubling => PointMap::doubling(),
        _ => PointMap::contraction(defaults::CONTRACTION_FACTOR),
    };
    let domain = Rect::unit(1)?;
    let report = measure::invariance_by_integrals(&f, &invariance_test_functions(), &domain, n, seed, k)?;
    let target = RectUnion::from(Rect::from_bounds(&[(lo, hi)])?);
    let preimage = measure::preimage_measure_discrepancy(&f, &target, &domain, grid)?;
    let preimage_bound = 2.0 / grid as f64;

    let mut table = CsvTable::new(&[
        "test_function",
        "lhs_integral",
        "rhs_integral",
        "discrepancy",
        "combined_mc_error",
        "sigmas",
    ])?;
    for c in &report.per_test_function {
        table.row(&[
            c.label.clone(),
            format_float(c.lhs_integral),
            format_float(c.rhs_integral),
            format_float(c.discrepancy),
            format_float(c.combined_mc_error),
            format_opt(Some(c.sigmas())),
        ])?;
    }
    let passed_integrals = report.verdict.passed();
    let passed = if sys.preserves_volume() {
        passed_integrals && preimage <= preimage_bound
    } else {
        !passed_integrals
    };
    Ok(Artifacts {
        csv: table.into_bytes()?,
        svg: None,
        summary: json!({
            "map": f.label(),
            "verdict": if passed_integrals { "pass" } else { "fail" },
            "k_sigma": k,
            "n_samples": n,
            "seed": seed,
            "per_test_function": report.per_test_function.iter().map(|c| json!({
                "label": c.label,
                "discrepancy": c.discrepancy,
                "combined_mc_error": c.combined_mc_error,
                "sigmas": c.sigmas(),
            })).collect::<Vec<_>>(),
            "preimage": { "set": [lo, hi], "grid": grid, "discrepancy": preimage },
        }),
        check_passed: passed,
        check_detail: format!(
            "integral verdict {}, preimage discrepancy {preimage:.3e} (bound {preimage_bound:.1e}); {} expected",
            if passed_integrals { "pass" } else { "fail" },
            if sys.preserves_volume() { "invariance" } else { "non-invariance" }
        ),
    })
}
