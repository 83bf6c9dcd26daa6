//! Lebesgue measure on boxes, simple-function integrals, and sampled
//! estimates of volumes and integrals.
//!
//! Two representations of measurable sets are used throughout:
//!
//! * finite unions of boxes ([`Rect`], [`RectUnion`]), measured exactly or on
//!   a midpoint grid;
//! * indicator predicates `Fn(&[f64]) -> bool`, measured by Monte Carlo.
//!
//! All intervals are closed-open, `[lo, hi)`, so grid cells tile a box
//! without overlap.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::PointMap;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, BATCH_SIZE};

/// Closed-open interval `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Overlap of the two intervals; empty overlaps come back with zero length.
    pub fn intersect(&self, other: &Interval) -> Interval {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi).max(lo);
        Interval { lo, hi }
    }
}

/// Axis-aligned box `I_1 × … × I_d` in `R^d`, `d ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    intervals: Vec<Interval>,
}

impl Rect {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(invalid("intervals", "a box needs at least one axis"));
        }
        Ok(Self { intervals })
    }

    /// Builds a box from `(lo, hi)` pairs.
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        let intervals = bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        Self::new(intervals)
    }

    /// `[0, 1)^d`.
    pub fn unit(d: usize) -> Result<Self> {
        Self::from_bounds(&vec![(0.0, 1.0); d])
    }

    /// `[lo, hi)^d`.
    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::from_bounds(&vec![(lo, hi); d])
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn lower(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::lo).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::hi).collect()
    }

    /// Product of the interval lengths.
    pub fn volume(&self) -> f64 {
        self.intervals.iter().map(Interval::length).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.intervals.iter().zip(x).all(|(i, &v)| i.contains(v))
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.dim() == other.dim()
            && self
                .intervals
                .iter()
                .zip(&other.intervals)
                .all(|(a, b)| a.contains_interval(b))
    }

    /// Axis-wise overlap. Disjoint boxes yield a box of volume zero.
    pub fn intersection(&self, other: &Rect) -> Result<Rect> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(Rect {
            intervals: self
                .intervals
                .iter()
                .zip(&other.intervals)
                .map(|(a, b)| a.intersect(b))
                .collect(),
        })
    }

    /// Cartesian product `self × other` in `R^(d1 + d2)`.
    pub fn product(&self, other: &Rect) -> Rect {
        let mut intervals = self.intervals.clone();
        intervals.extend_from_slice(&other.intervals);
        Rect { intervals }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, i) in self.intervals.iter().enumerate() {
            if k > 0 {
                f.write_str("×")?;
            }
            write!(f, "[{}, {})", i.lo, i.hi)?;
        }
        Ok(())
    }
}

/// Volume of a box.
pub fn box_volume(b: &Rect) -> f64 {
    b.volume()
}

/// Finite union of boxes of a common dimension. Members may overlap; only
/// membership is defined on the union itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RectUnion {
    rects: Vec<Rect>,
}

impl RectUnion {
    pub fn new(rects: Vec<Rect>) -> Result<Self> {
        let Some(first) = rects.first() else {
            return Err(invalid("rects", "union needs at least one box"));
        };
        let d = first.dim();
        if let Some(bad) = rects.iter().find(|r| r.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { rects })
    }

    pub fn dim(&self) -> usize {
        self.rects[0].dim()
    }

    pub fn rects(&self) -> &[Rect] {
        &self.rects
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.rects.iter().any(|r| r.contains(x))
    }
}

impl From<Rect> for RectUnion {
    fn from(r: Rect) -> Self {
        Self { rects: vec![r] }
    }
}

/// `Σ α_j χ_{A_j}` with pairwise-disjoint box supports.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimpleFunction {
    terms: Vec<(f64, Rect)>,
}

impl SimpleFunction {
    /// Rejects supports that intersect in a set of positive volume, and
    /// supports of differing dimension.
    pub fn new(terms: Vec<(f64, Rect)>) -> Result<Self> {
        for (i, (_, a)) in terms.iter().enumerate() {
            for (j, (_, b)) in terms.iter().enumerate().skip(i + 1) {
                if a.intersection(b)?.volume() > 0.0 {
                    return Err(Error::OverlappingSupports {
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[(f64, Rect)] {
        &self.terms
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|(_, r)| r.contains(x))
            .map(|(a, _)| a)
            .sum()
    }

    /// `Σ α_j µ(A_j)`.
    pub fn integral(&self) -> f64 {
        self.terms.iter().map(|(a, r)| a * r.volume()).sum()
    }
}

/// Integral of a simple function with respect to Lebesgue measure.
pub fn integrate_simple(s: &SimpleFunction) -> f64 {
    s.integral()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl VolumeEstimate {
    /// Builds the estimate from a hit count; shared with the recurrence
    /// sampler so both report identical numbers for identical streams.
    pub fn from_hits(hits: u64, n: u64, domain_volume: f64, seed: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            estimate: p * domain_volume,
            standard_error: (p * (1.0 - p) / n as f64).sqrt() * domain_volume,
            n_samples: n,
            seed,
        }
    }
}

/// Hit-or-miss Monte Carlo estimate of `µ({x ∈ domain : indicator(x)})`.
pub fn estimate_volume_mc<F>(indicator: F, domain: &Rect, n: u64, seed: u64) -> Result<VolumeEstimate>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    if n == 0 {
        return Err(invalid("n", "need at least one sample"));
    }
    let lo = domain.lower();
    let hi = domain.upper();
    let hits: u64 = rng::batches(n)
        .map(|(b, start, end)| {
            let mut r = rng::stream_rng(seed, b);
            let mut x = vec![0.0; lo.len()];
            let mut hits = 0u64;
            for _ in start..end {
                rng::fill_uniform(&mut r, &lo, &hi, &mut x);
                hits += u64::from(indicator(&x));
            }
            hits
        })
        .sum();
    Ok(VolumeEstimate::from_hits(hits, n, domain.volume(), seed))
}

/// Fraction of `n` uniform samples from the Euclidean ball `B(a, eps)` that
/// land in the set. Ball samples come from rejection on the bounding cube.
pub fn density_ratio<F>(a: &[f64], indicator: F, eps: f64, n: u64, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> bool,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps", format!("radius must be positive, got {eps}")));
    }
    if n == 0 {
        return Err(invalid("n", "need at least one sample"));
    }
    if a.is_empty() {
        return Err(invalid("a", "empty point"));
    }
    let lo: Vec<f64> = a.iter().map(|c| c - eps).collect();
    let hi: Vec<f64> = a.iter().map(|c| c + eps).collect();
    let eps2 = eps * eps;
    let mut x = vec![0.0; a.len()];
    let (mut accepted, mut hits) = (0u64, 0u64);
    let mut batch = 0u64;
    while accepted < n {
        let mut r = rng::stream_rng(seed, batch);
        for _ in 0..BATCH_SIZE {
            rng::fill_uniform(&mut r, &lo, &hi, &mut x);
            let r2: f64 = x.iter().zip(a).map(|(xi, ai)| (xi - ai) * (xi - ai)).sum();
            if r2 >= eps2 {
                continue;
            }
            accepted += 1;
            hits += u64::from(indicator(&x));
            if accepted == n {
                break;
            }
        }
        batch += 1;
    }
    Ok(hits as f64 / n as f64)
}

type Observable = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Bounded observable used by the integral invariance test.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    eval: Observable,
}

impl TestFunction {
    pub fn new(label: impl Into<String>, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("label", &self.label).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// `∫ φ dµ` against `∫ φ∘f dµ` for one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralComparison {
    pub label: String,
    pub lhs_integral: f64,
    pub rhs_integral: f64,
    pub discrepancy: f64,
    /// Standard error of the paired difference `φ(x) − φ(f(x))`, scaled by
    /// the domain volume. Both integrals share their samples, so the
    /// difference carries the joint Monte Carlo error.
    pub combined_mc_error: f64,
}

impl IntegralComparison {
    /// Discrepancy in units of `combined_mc_error` (infinite when the error is
    /// zero and the discrepancy is not).
    pub fn sigmas(&self) -> f64 {
        if self.discrepancy == 0.0 {
            0.0
        } else {
            self.discrepancy / self.combined_mc_error
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    pub per_test_function: Vec<IntegralComparison>,
    pub verdict: Verdict,
    pub k_sigma: f64,
    pub n_samples: u64,
    pub seed: u64,
}

pub const DEFAULT_K_SIGMA: f64 = 4.0;

#[derive(Clone, Copy, Default)]
struct Moments {
    lhs: f64,
    rhs: f64,
    diff: f64,
    diff_sq: f64,
}

/// Monte Carlo check of `∫ φ dµ = ∫ φ∘f dµ` over `domain` for every test
/// function, with both sides evaluated on the same sample stream.
pub fn invariance_by_integrals(
    f: &PointMap,
    test_functions: &[TestFunction],
    domain: &Rect,
    n: u64,
    seed: u64,
    k_sigma: f64,
) -> Result<InvarianceReport> {
    if test_functions.is_empty() {
        return Err(invalid("test_functions", "need at least one test function"));
    }
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    if !(k_sigma > 0.0) {
        return Err(invalid("k_sigma", "threshold must be positive"));
    }
    if f.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: f.dim(),
        });
    }
    let lo = domain.lower();
    let hi = domain.upper();
    let k = test_functions.len();

    // Per-batch partial sums, reduced in batch order so the floating-point
    // result does not depend on thread scheduling.
    let partials: Vec<Vec<Moments>> = rng::batches(n)
        .map(|(b, start, end)| {
            let mut r = rng::stream_rng(seed, b);
            let mut x = vec![0.0; lo.len()];
            let mut acc = vec![Moments::default(); k];
            for _ in start..end {
                rng::fill_uniform(&mut r, &lo, &hi, &mut x);
                let fx = f.eval(&x);
                for (m, phi) in acc.iter_mut().zip(test_functions) {
                    let a = phi.eval(&x);
                    let b = phi.eval(&fx);
                    let d = a - b;
                    m.lhs += a;
                    m.rhs += b;
                    m.diff += d;
                    m.diff_sq += d * d;
                }
            }
            acc
        })
        .collect();

    let mut totals = vec![Moments::default(); k];
    for batch in &partials {
        for (t, m) in totals.iter_mut().zip(batch) {
            t.lhs += m.lhs;
            t.rhs += m.rhs;
            t.diff += m.diff;
            t.diff_sq += m.diff_sq;
        }
    }

    let vol = domain.volume();
    let nf = n as f64;
    let per_test_function: Vec<IntegralComparison> = totals
        .iter()
        .zip(test_functions)
        .map(|(t, phi)| {
            let lhs = vol * t.lhs / nf;
            let rhs = vol * t.rhs / nf;
            let var = ((t.diff_sq - t.diff * t.diff / nf) / (nf - 1.0)).max(0.0);
            IntegralComparison {
                label: phi.label().to_string(),
                lhs_integral: lhs,
                rhs_integral: rhs,
                discrepancy: (lhs - rhs).abs(),
                combined_mc_error: vol * (var / nf).sqrt(),
            }
        })
        .collect();

    let verdict = if per_test_function
        .iter()
        .all(|c| c.discrepancy <= k_sigma * c.combined_mc_error)
    {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(InvarianceReport {
        per_test_function,
        verdict,
        k_sigma,
        n_samples: n,
        seed,
    })
}

/// Calls `visit` with the center of every cell of the uniform
/// `grid_per_axis^d` partition of `domain` and sums the returned counts.
fn count_cell_centers<F>(domain: &Rect, grid_per_axis: usize, visit: F) -> u64
where
    F: Fn(&[f64]) -> u64 + Sync,
{
    let d = domain.dim();
    let lo = domain.lower();
    let widths: Vec<f64> = domain
        .intervals()
        .iter()
        .map(|i| i.length() / grid_per_axis as f64)
        .collect();
    let inner = grid_per_axis.pow(d as u32 - 1);
    (0..grid_per_axis)
        .into_par_iter()
        .map(|first| {
            let mut c = vec![0.0; d];
            c[0] = lo[0] + (first as f64 + 0.5) * widths[0];
            let mut count = 0u64;
            for mut rest in 0..inner {
                for axis in (1..d).rev() {
                    let idx = rest % grid_per_axis;
                    rest /= grid_per_axis;
                    c[axis] = lo[axis] + (idx as f64 + 0.5) * widths[axis];
                }
                count += visit(&c);
            }
            count
        })
        .sum()
}

fn check_grid(domain: &Rect, grid_per_axis: usize) -> Result<()> {
    if grid_per_axis < 2 {
        return Err(invalid("grid_per_axis", "need at least two cells per axis"));
    }
    let cells = (grid_per_axis as f64).powi(domain.dim() as i32);
    if cells > 1e10 {
        return Err(invalid(
            "grid_per_axis",
            format!("{cells:e} cells is beyond the supported grid size"),
        ));
    }
    Ok(())
}

/// Midpoint-rule measure of an indicator set on a uniform grid over `domain`.
pub fn grid_measure<F>(indicator: F, domain: &Rect, grid_per_axis: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    check_grid(domain, grid_per_axis)?;
    let cell = domain.volume() / (grid_per_axis as f64).powi(domain.dim() as i32);
    let count = count_cell_centers(domain, grid_per_axis, |c| u64::from(indicator(c)));
    Ok(count as f64 * cell)
}

/// `|µ̂(E) − µ̂(f⁻¹(E))|` where both measures count grid cells whose centers
/// lie in `E` (respectively are mapped into `E` by `f`).
pub fn preimage_measure_discrepancy(
    f: &PointMap,
    e: &RectUnion,
    domain: &Rect,
    grid_per_axis: usize,
) -> Result<f64> {
    check_grid(domain, grid_per_axis)?;
    if e.dim() != domain.dim() || f.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: if e.dim() != domain.dim() { e.dim() } else { f.dim() },
        });
    }
    if !e.rects().iter().all(|r| domain.contains_rect(r)) {
        return Err(Error::SetOutsideDomain);
    }
    let cell = domain.volume() / (grid_per_axis as f64).powi(domain.dim() as i32);
    let in_set = count_cell_centers(domain, grid_per_axis, |c| u64::from(e.contains(c)));
    let in_preimage = count_cell_centers(domain, grid_per_axis, |c| u64::from(e.contains(&f.eval(c))));
    Ok((in_set as f64 - in_preimage as f64).abs() * cell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(b: &[(f64, f64)]) -> Rect {
        Rect::from_bounds(b).unwrap()
    }

    #[test]
    fn box_volume_examples() {
        assert_eq!(box_volume(&Rect::unit(3).unwrap()), 1.0);
        assert_eq!(box_volume(&rect(&[(0.0, 2.0), (0.0, 0.5)])), 1.0);
        assert_eq!(box_volume(&rect(&[(1.0, 1.0), (0.0, 5.0)])), 0.0);
    }

    #[test]
    fn closed_open_membership() {
        let r = rect(&[(0.0, 1.0), (0.0, 1.0)]);
        assert!(r.contains(&[0.0, 0.0]));
        assert!(!r.contains(&[1.0, 0.5]));
        assert!(!r.contains(&[0.5]));
    }

    #[test]
    fn interval_rejects_reversed_bounds() {
        assert!(matches!(Interval::new(1.0, 0.0), Err(Error::InvalidInterval { .. })));
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Rect::new(vec![]).is_err());
    }

    #[test]
    fn integrate_simple_examples() {
        let s = SimpleFunction::new(vec![(1.0, rect(&[(0.0, 1.0)]))]).unwrap();
        assert_eq!(integrate_simple(&s), 1.0);
        let s = SimpleFunction::new(vec![
            (2.0, rect(&[(0.0, 0.5)])),
            (3.0, rect(&[(0.5, 1.0)])),
        ])
        .unwrap();
        assert_eq!(integrate_simple(&s), 2.5);
        assert_eq!(s.eval(&[0.25]), 2.0);
        assert_eq!(s.eval(&[0.5]), 3.0);
        assert_eq!(s.eval(&[1.0]), 0.0);
        assert_eq!(integrate_simple(&SimpleFunction::new(vec![]).unwrap()), 0.0);
    }

    #[test]
    fn overlapping_supports_rejected() {
        let err = SimpleFunction::new(vec![
            (1.0, rect(&[(0.0, 0.6)])),
            (1.0, rect(&[(0.5, 1.0)])),
        ])
        .unwrap_err();
        assert_eq!(err, Error::OverlappingSupports { first: 0, second: 1 });
        // touching boxes share no volume
        assert!(SimpleFunction::new(vec![(1.0, rect(&[(0.0, 0.5)])), (1.0, rect(&[(0.5, 1.0)]))]).is_ok());
    }

    #[test]
    fn mc_full_domain_is_exact() {
        let est = estimate_volume_mc(|_| true, &Rect::unit(2).unwrap(), 1000, 3).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.standard_error, 0.0);
        assert!(estimate_volume_mc(|_| true, &Rect::unit(2).unwrap(), 0, 3).is_err());
    }

    #[test]
    fn mc_unit_disk_and_half_plane() {
        let sq = Rect::cube(2, -1.0, 1.0).unwrap();
        let est = estimate_volume_mc(|x| x[0] * x[0] + x[1] * x[1] < 1.0, &sq, 1_000_000, 11).unwrap();
        assert!((est.estimate - std::f64::consts::PI).abs() <= 4.0 * est.standard_error);

        let est = estimate_volume_mc(|x| x[0] < 0.5, &Rect::unit(2).unwrap(), 100_000, 5).unwrap();
        assert!((est.estimate - 0.5).abs() <= 4.0 * est.standard_error);
    }

    #[test]
    fn density_ratio_examples() {
        let disk = |x: &[f64]| x[0] * x[0] + x[1] * x[1] < 1.0;
        assert_eq!(density_ratio(&[0.0, 0.0], disk, 0.1, 2000, 1).unwrap(), 1.0);
        assert_eq!(density_ratio(&[3.0, 0.0], disk, 0.1, 2000, 1).unwrap(), 0.0);
        let n = 100_000;
        let r = density_ratio(&[0.0, 0.0], |x| x[0] < 0.0, 0.5, n, 2).unwrap();
        assert!((r - 0.5).abs() <= 4.0 * (0.25 / n as f64).sqrt());
        assert!(density_ratio(&[0.0], |_| true, 0.0, 10, 0).is_err());
        assert!(density_ratio(&[0.0], |_| true, -1.0, 10, 0).is_err());
    }

    #[test]
    fn invariance_identity_is_exact() {
        let id = PointMap::identity(1);
        let phis = [
            TestFunction::new("x", |x| x[0]),
            TestFunction::new("cos", |x| (7.0 * x[0]).cos()),
        ];
        let rep = invariance_by_integrals(&id, &phis, &Rect::unit(1).unwrap(), 10_000, 1, 4.0).unwrap();
        assert!(rep.verdict.passed());
        for c in &rep.per_test_function {
            assert_eq!(c.discrepancy, 0.0);
            assert_eq!(c.combined_mc_error, 0.0);
        }
    }

    #[test]
    fn invariance_doubling_passes_contraction_fails() {
        let unit = Rect::unit(1).unwrap();
        let phi = [TestFunction::new("cos 2pi x", |x| (2.0 * std::f64::consts::PI * x[0]).cos())];
        let rep = invariance_by_integrals(&PointMap::doubling(), &phi, &unit, 200_000, 9, 4.0).unwrap();
        assert!(rep.verdict.passed());
        assert!(rep.per_test_function[0].lhs_integral.abs() < 0.01);
        assert!(rep.per_test_function[0].rhs_integral.abs() < 0.01);

        let phi = [TestFunction::new("x", |x| x[0])];
        let rep = invariance_by_integrals(&PointMap::contraction(0.5), &phi, &unit, 200_000, 9, 4.0).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        let c = &rep.per_test_function[0];
        assert!((c.lhs_integral - 0.5).abs() < 0.01);
        assert!((c.rhs_integral - 0.25).abs() < 0.01);
        assert!(invariance_by_integrals(&PointMap::identity(1), &[], &unit, 10, 0, 4.0).is_err());
    }

    #[test]
    fn preimage_examples() {
        let unit = Rect::unit(1).unwrap();
        let e: RectUnion = rect(&[(0.0, 0.1)]).into();
        assert_eq!(preimage_measure_discrepancy(&PointMap::identity(1), &e, &unit, 1000).unwrap(), 0.0);
        let d = preimage_measure_discrepancy(&PointMap::rotation(0.3), &e, &unit, 10_000).unwrap();
        assert!(d <= 2.0 / 10_000.0, "{d}");
        let square = PointMap::new(1, |x| vec![x[0] * x[0]]);
        let e: RectUnion = rect(&[(0.0, 0.25)]).into();
        let d = preimage_measure_discrepancy(&square, &e, &unit, 10_000).unwrap();
        assert!((d - 0.25).abs() <= 2.0 / 10_000.0, "{d}");
    }

    #[test]
    fn preimage_rejects_bad_inputs() {
        let unit = Rect::unit(1).unwrap();
        let outside: RectUnion = rect(&[(0.5, 1.5)]).into();
        assert_eq!(
            preimage_measure_discrepancy(&PointMap::identity(1), &outside, &unit, 100),
            Err(Error::SetOutsideDomain)
        );
        let e: RectUnion = rect(&[(0.0, 0.5)]).into();
        assert!(preimage_measure_discrepancy(&PointMap::identity(1), &e, &unit, 1).is_err());
    }

    #[test]
    fn preimage_bound_shrinks_with_grid() {
        let unit = Rect::unit(1).unwrap();
        let e: RectUnion = rect(&[(0.0, 0.1)]).into();
        for map in [PointMap::rotation(0.3), PointMap::doubling()] {
            for g in [100usize, 200, 400, 800, 1600] {
                let d = preimage_measure_discrepancy(&map, &e, &unit, g).unwrap();
                assert!(d <= 2.0 / g as f64, "grid {g}: {d}");
            }
        }
    }

    #[test]
    fn grid_measure_of_disk() {
        let sq = Rect::cube(2, -1.0, 1.0).unwrap();
        let m = grid_measure(|x| x[0] * x[0] + x[1] * x[1] < 1.0, &sq, 1000).unwrap();
        assert!((m - std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn mc_converges_in_median() {
        let sq = Rect::cube(2, -1.0, 1.0).unwrap();
        let disk = |x: &[f64]| x[0] * x[0] + x[1] * x[1] < 1.0;
        let median_err = |n: u64| {
            let mut errs: Vec<f64> = (0..11)
                .map(|s| (estimate_volume_mc(disk, &sq, n, 100 + s).unwrap().estimate - std::f64::consts::PI).abs())
                .collect();
            errs.sort_by(f64::total_cmp);
            errs[5]
        };
        let m = 20_000;
        assert!(median_err(4 * m) <= median_err(m));
    }

    fn bounds() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0..10.0f64, 0.0..5.0f64).prop_map(|(lo, w)| (lo, lo + w)), 1..4)
    }

    proptest! {
        #[test]
        fn volume_is_multiplicative(a in bounds(), b in bounds()) {
            let (ra, rb) = (rect(&a), rect(&b));
            let prod = ra.product(&rb);
            let expect = ra.volume() * rb.volume();
            prop_assert!((prod.volume() - expect).abs() <= 1e-12 * expect.max(1.0));
        }

        #[test]
        fn integral_is_linear(
            a in -5.0..5.0f64, b in -5.0..5.0f64,
            s in prop::collection::vec(-3.0..3.0f64, 4),
            t in prop::collection::vec(-3.0..3.0f64, 4),
        ) {
            // common refinement: four disjoint cells of [0,1)
            let cells: Vec<Rect> = (0..4).map(|i| rect(&[(i as f64 * 0.25, (i + 1) as f64 * 0.25)])).collect();
            let mk = |c: &[f64]| SimpleFunction::new(c.iter().cloned().zip(cells.iter().cloned()).collect()).unwrap();
            let combo: Vec<f64> = s.iter().zip(&t).map(|(x, y)| a * x + b * y).collect();
            let lhs = mk(&combo).integral();
            let rhs = a * mk(&s).integral() + b * mk(&t).integral();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn mc_is_reproducible(seed in any::<u64>(), n in 1u64..20_000) {
            let sq = Rect::cube(2, -1.0, 1.0).unwrap();
            let disk = |x: &[f64]| x[0] * x[0] + x[1] * x[1] < 1.0;
            let a = estimate_volume_mc(disk, &sq, n, seed).unwrap();
            let b = estimate_volume_mc(disk, &sq, n, seed).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.estimate >= 0.0 && a.estimate <= sq.volume());
        }
    }
}
