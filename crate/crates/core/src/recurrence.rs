//! Return statistics for maps and flows: how many sampled points of a set
//! `E` come back to `E`, how soon, and how often.
//!
//! Start points are drawn uniformly from `E` by rejection from a domain box,
//! using the same sample stream as [`estimate_volume_mc`], so each report
//! also carries an estimate of `µ(E)`.
//!
//! [`estimate_volume_mc`]: crate::measure::estimate_volume_mc

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{integrate_visit, Flow, PointMap, Scheme, VectorField};
use crate::error::{invalid, Error, Result};
use crate::measure::{Rect, VolumeEstimate};
use crate::rng::{self, BATCH_SIZE};

/// Rejection attempts allowed before a set is declared empty.
pub const MAX_EMPTY_REJECTIONS: u64 = 1_000_000;

/// Discrete dynamics that can be iterated from a start point.
///
/// `rng` is a per-orbit stream for maps whose exact orbit needs digits that
/// the floating-point state does not hold; deterministic maps ignore it.
pub trait IteratedMap: Sync {
    fn dim(&self) -> usize;
    fn advance(&self, x: &mut Vec<f64>, rng: &mut ChaCha8Rng);
}

impl IteratedMap for PointMap {
    fn dim(&self) -> usize {
        PointMap::dim(self)
    }

    fn advance(&self, x: &mut Vec<f64>, _rng: &mut ChaCha8Rng) {
        *x = self.eval(x);
    }
}

const DYADIC_BITS: u32 = 53;
const DYADIC_SCALE: f64 = (1u64 << DYADIC_BITS) as f64;
const DYADIC_MASK: u64 = (1u64 << DYADIC_BITS) - 1;

/// Doubling map `x ↦ 2x mod 1` acting on the binary expansion of `x`.
///
/// The state keeps the leading 53 binary digits of `x` as an exact multiple
/// of `2^-53`. Each iterate shifts the expansion left by one digit and
/// appends the next digit below the window from the orbit's random stream.
/// For a uniformly distributed start the digits beyond the window are
/// independent fair bits, so this reproduces the true orbit in law instead of
/// collapsing onto `0` as repeated float doubling does.
#[derive(Debug, Clone, Copy, Default)]
pub struct DyadicDoubling;

impl IteratedMap for DyadicDoubling {
    fn dim(&self) -> usize {
        1
    }

    fn advance(&self, x: &mut Vec<f64>, rng: &mut ChaCha8Rng) {
        // truncate to the 53-digit window; exact for uniform samples
        let k = (x[0].rem_euclid(1.0) * DYADIC_SCALE) as u64;
        let next = ((k << 1) & DYADIC_MASK) | (rng.next_u64() & 1);
        x[0] = next as f64 / DYADIC_SCALE;
    }
}

/// Step count for maps, elapsed time for flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ReturnTime {
    Step(u64),
    Time(f64),
}

impl ReturnTime {
    pub fn as_f64(self) -> f64 {
        match self {
            ReturnTime::Step(n) => n as f64,
            ReturnTime::Time(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnRecord {
    pub start: Vec<f64>,
    /// Earliest return; `None` exactly when `return_count == 0`.
    pub first_return: Option<ReturnTime>,
    pub return_count: u64,
    pub horizon: ReturnTime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecurrenceReport {
    pub records: Vec<ReturnRecord>,
    pub returning_fraction: f64,
    /// Mean first return over returning records only.
    pub mean_first_return: Option<f64>,
    pub set_measure_estimate: VolumeEstimate,
    pub seed: u64,
}

impl RecurrenceReport {
    fn from_records(records: Vec<ReturnRecord>, set_measure_estimate: VolumeEstimate, seed: u64) -> Self {
        let firsts: Vec<f64> = records
            .iter()
            .filter_map(|r| r.first_return.map(ReturnTime::as_f64))
            .collect();
        let returning_fraction = if records.is_empty() {
            0.0
        } else {
            firsts.len() as f64 / records.len() as f64
        };
        let mean_first_return = (!firsts.is_empty()).then(|| firsts.iter().sum::<f64>() / firsts.len() as f64);
        Self {
            records,
            returning_fraction,
            mean_first_return,
            set_measure_estimate,
            seed,
        }
    }

    pub fn max_first_return(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.first_return.map(ReturnTime::as_f64))
            .reduce(f64::max)
    }
}

fn check_start<E: Fn(&[f64]) -> bool>(e: &E, x0: &[f64], dim: usize) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x0.len(),
        });
    }
    if !e(x0) {
        return Err(Error::StartOutsideSet);
    }
    Ok(())
}

/// Visits `f^n(x0)` for `n = 1..=horizon`, reporting every `n` with
/// `f^n(x0) ∈ E`.
fn map_returns<M, E>(f: &M, e: &E, x0: &[f64], horizon: u64, rng: &mut ChaCha8Rng, mut on_return: impl FnMut(u64))
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool,
{
    let mut x = x0.to_vec();
    for n in 1..=horizon {
        f.advance(&mut x, rng);
        if e(&x) {
            on_return(n);
        }
    }
}

/// Returns of one orbit of `f` to `E`, drawing any auxiliary digits from
/// `rng`.
pub fn orbit_returns_map_with_rng<M, E>(
    f: &M,
    e: &E,
    x0: &[f64],
    horizon: u64,
    rng: &mut ChaCha8Rng,
) -> Result<ReturnRecord>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool,
{
    if horizon == 0 {
        return Err(invalid("horizon", "need at least one iterate"));
    }
    check_start(e, x0, f.dim())?;
    let mut first = None;
    let mut count = 0u64;
    map_returns(f, e, x0, horizon, rng, |n| {
        first.get_or_insert(n);
        count += 1;
    });
    Ok(ReturnRecord {
        start: x0.to_vec(),
        first_return: first.map(ReturnTime::Step),
        return_count: count,
        horizon: ReturnTime::Step(horizon),
    })
}

/// Returns of one orbit of `f` to `E` within `horizon` iterates. Auxiliary
/// digits come from the fixed stream `(0, 0)`.
pub fn orbit_returns_map<M, E>(f: &M, e: &E, x0: &[f64], horizon: u64) -> Result<ReturnRecord>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool,
{
    orbit_returns_map_with_rng(f, e, x0, horizon, &mut rng::auxiliary_rng(0, 0))
}

fn check_horizons<T: PartialOrd + Copy>(horizons: &[T]) -> Result<()> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("horizons", "need a non-empty strictly increasing list"));
    }
    Ok(())
}

/// Return counts of one orbit at increasing horizons, all read off a single
/// orbit so the counts are non-decreasing by construction.
pub fn return_count_growth_with_rng<M, E>(
    f: &M,
    e: &E,
    x0: &[f64],
    horizons: &[u64],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u64>>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool,
{
    check_horizons(horizons)?;
    if horizons[0] == 0 {
        return Err(invalid("horizons", "horizons must be positive"));
    }
    check_start(e, x0, f.dim())?;
    let mut counts = vec![0u64; horizons.len()];
    map_returns(f, e, x0, *horizons.last().unwrap(), rng, |n| {
        for (c, &h) in counts.iter_mut().zip(horizons) {
            if n <= h {
                *c += 1;
            }
        }
    });
    Ok(counts)
}

pub fn return_count_growth<M, E>(f: &M, e: &E, x0: &[f64], horizons: &[u64]) -> Result<Vec<u64>>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool,
{
    return_count_growth_with_rng(f, e, x0, horizons, &mut rng::auxiliary_rng(0, 0))
}

/// Draws `n_points` uniform points of `E` by rejection from `domain`.
///
/// The candidates are exactly the first samples [`estimate_volume_mc`] would
/// draw with the same seed, so the returned estimate equals
/// `estimate_volume_mc(E, domain, attempts, seed)`.
///
/// [`estimate_volume_mc`]: crate::measure::estimate_volume_mc
pub fn sample_set<E>(e: &E, domain: &Rect, n_points: usize, seed: u64) -> Result<(Vec<Vec<f64>>, VolumeEstimate)>
where
    E: Fn(&[f64]) -> bool,
{
    if n_points == 0 {
        return Err(invalid("n_points", "need at least one start point"));
    }
    let lo = domain.lower();
    let hi = domain.upper();
    let mut starts = Vec::with_capacity(n_points);
    let mut attempts = 0u64;
    let mut x = vec![0.0; lo.len()];
    'batches: for b in 0.. {
        let mut r = rng::stream_rng(seed, b);
        for _ in 0..BATCH_SIZE {
            rng::fill_uniform(&mut r, &lo, &hi, &mut x);
            attempts += 1;
            if e(&x) {
                starts.push(x.clone());
                if starts.len() == n_points {
                    break 'batches;
                }
            }
            if starts.is_empty() && attempts >= MAX_EMPTY_REJECTIONS {
                return Err(Error::EmptySet { attempts });
            }
        }
    }
    let est = VolumeEstimate::from_hits(starts.len() as u64, attempts, domain.volume(), seed);
    Ok((starts, est))
}

/// Samples start points in `E` and records the return statistics of each
/// orbit of `f`. Orbit `i` draws auxiliary digits from its own stream, so
/// the report does not depend on the number of worker threads.
pub fn recurrence_experiment_map<M, E>(
    f: &M,
    e: &E,
    domain: &Rect,
    n_points: usize,
    horizon: u64,
    seed: u64,
) -> Result<RecurrenceReport>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool + Sync,
{
    if f.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: f.dim(),
        });
    }
    let (starts, measure) = sample_set(e, domain, n_points, seed)?;
    let records = starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| orbit_returns_map_with_rng(f, e, x0, horizon, &mut rng::auxiliary_rng(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecurrenceReport::from_records(records, measure, seed))
}

/// Return counts at increasing horizons for every sampled start point, on
/// the same start points and streams as [`recurrence_experiment_map`].
pub fn return_count_growth_sampled<M, E>(
    f: &M,
    e: &E,
    domain: &Rect,
    n_points: usize,
    horizons: &[u64],
    seed: u64,
) -> Result<Vec<Vec<u64>>>
where
    M: IteratedMap + ?Sized,
    E: Fn(&[f64]) -> bool + Sync,
{
    let (starts, _) = sample_set(e, domain, n_points, seed)?;
    starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| return_count_growth_with_rng(f, e, x0, horizons, &mut rng::auxiliary_rng(seed, i as u64)))
        .collect()
}

/// Entries into `E` along the RK4 orbit of `x0`. An entry only counts after
/// the orbit has been sampled outside `E` since the previous entry (or since
/// the start).
fn flow_returns<E>(
    field: &VectorField,
    e: &E,
    x0: &[f64],
    t_horizon: f64,
    dt: f64,
    mut on_return: impl FnMut(f64),
) -> Result<()>
where
    E: Fn(&[f64]) -> bool,
{
    let mut exited = false;
    integrate_visit(Flow::Field(field), x0, t_horizon, dt, Scheme::Rk4, |t, z| {
        if t == 0.0 {
            return true;
        }
        if e(z) {
            if exited {
                on_return(t);
                exited = false;
            }
        } else {
            exited = true;
        }
        true
    })?;
    Ok(())
}

/// Returns of one flow orbit to `E` within `t_horizon`.
pub fn orbit_returns_flow<E>(field: &VectorField, e: &E, x0: &[f64], t_horizon: f64, dt: f64) -> Result<ReturnRecord>
where
    E: Fn(&[f64]) -> bool,
{
    check_start(e, x0, field.dim())?;
    let mut first = None;
    let mut count = 0u64;
    flow_returns(field, e, x0, t_horizon, dt, |t| {
        first.get_or_insert(t);
        count += 1;
    })?;
    Ok(ReturnRecord {
        start: x0.to_vec(),
        first_return: first.map(ReturnTime::Time),
        return_count: count,
        horizon: ReturnTime::Time(t_horizon),
    })
}

/// Flow analogue of [`return_count_growth`], with time horizons.
pub fn return_count_growth_flow<E>(
    field: &VectorField,
    e: &E,
    x0: &[f64],
    horizons: &[f64],
    dt: f64,
) -> Result<Vec<u64>>
where
    E: Fn(&[f64]) -> bool,
{
    check_horizons(horizons)?;
    check_start(e, x0, field.dim())?;
    let mut counts = vec![0u64; horizons.len()];
    flow_returns(field, e, x0, *horizons.last().unwrap(), dt, |t| {
        for (c, &h) in counts.iter_mut().zip(horizons) {
            if t <= h {
                *c += 1;
            }
        }
    })?;
    Ok(counts)
}

/// Flow version of [`recurrence_experiment_map`], integrating each start
/// point with RK4 over `[0, t_horizon]`.
pub fn recurrence_experiment_flow<E>(
    field: &VectorField,
    e: &E,
    domain: &Rect,
    n_points: usize,
    t_horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<RecurrenceReport>
where
    E: Fn(&[f64]) -> bool + Sync,
{
    if field.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: field.dim(),
        });
    }
    let (starts, measure) = sample_set(e, domain, n_points, seed)?;
    let records = starts
        .par_iter()
        .map(|x0| orbit_returns_flow(field, e, x0, t_horizon, dt))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecurrenceReport::from_records(records, measure, seed))
}

/// Flow analogue of [`return_count_growth_sampled`].
pub fn return_count_growth_flow_sampled<E>(
    field: &VectorField,
    e: &E,
    domain: &Rect,
    n_points: usize,
    horizons: &[f64],
    dt: f64,
    seed: u64,
) -> Result<Vec<Vec<u64>>>
where
    E: Fn(&[f64]) -> bool + Sync,
{
    let (starts, _) = sample_set(e, domain, n_points, seed)?;
    starts
        .par_iter()
        .map(|x0| return_count_growth_flow(field, e, x0, horizons, dt))
        .collect()
}
