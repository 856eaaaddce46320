//! Mean first-detection time `⟨t_f⟩ = τ Σ n F_n^r`.
//!
//! IPR has a closed form. The MPR variants are summed to a finite horizon
//! `n_c` and extrapolated to `n_c → ∞` with a least-squares polynomial in
//! `1/n_c`.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionSeries;
use crate::error::{Error, Result};
use crate::propagation::LatticeConfig;
use crate::protocols::{Protocol, RestartKernel, RestartSchedule, StepLaw};

/// Degree of the extrapolating polynomial.
pub const FIT_DEGREE: usize = 10;
/// Degrees compared for the stability spread.
pub const STABILITY_DEGREES: [usize; 3] = [8, 10, 12];
/// Relative spread above which an extrapolated value is flagged unstable.
pub const STABILITY_TOLERANCE: f64 = 0.01;
/// Minimum number of distinct horizons accepted by the fit.
pub const MIN_GRID_POINTS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Truncated,
    Extrapolated,
}

/// A mean first-detection time together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdtEstimate {
    pub value: f64,
    pub method: Method,
    /// Horizons `n_c` used (empty for the closed form).
    pub nc_grid: Vec<usize>,
    /// Partial sums at each horizon.
    pub truncated: Vec<f64>,
    pub fit_degree: Option<usize>,
    /// Spread of the degree-8/10/12 fits at the origin.
    pub stability: Option<f64>,
    pub stable: bool,
    /// Survival probability at the largest horizon, when one was summed.
    pub tail_survival: Option<f64>,
}

impl FdtEstimate {
    fn closed(value: f64) -> Self {
        FdtEstimate {
            value,
            method: Method::ClosedForm,
            nc_grid: Vec::new(),
            truncated: Vec::new(),
            fit_degree: None,
            stability: None,
            stable: true,
            tail_survival: None,
        }
    }
}

/// Closed-form IPR mean, `τ [r(1-P)/P + Σ_{ñ<=r} ñ F_ñ / P]` with `P = P_det(r)`.
///
/// The overall `τ` converts measurement counts into time.
pub fn mean_fdt_ipr_closed(series: &DetectionSeries, r: usize, tau: f64) -> Result<FdtEstimate> {
    if r == 0 || r > series.len() {
        return Err(Error::Length { requested: r, available: series.len() });
    }
    closed_from_window(&series.f[..r], tau)
}

fn closed_from_window(f: &[f64], tau: f64) -> Result<FdtEstimate> {
    let r = f.len();
    let p: f64 = f.iter().sum();
    if !(p > 0.0) {
        return Err(Error::Divergent(format!(
            "no detection is possible within a window of {r} measurements"
        )));
    }
    let weighted: f64 = f.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
    let value = tau * (r as f64 * (1.0 - p) / p + weighted / p);
    if !value.is_finite() {
        return Err(Error::Divergent(format!("window detection probability {p:e} too small")));
    }
    Ok(FdtEstimate::closed(value))
}

/// Partial sums `τ Σ_{n<=n_c} n F_n` at every checkpoint (ascending), plus the
/// segment survival reached at the last one.
fn partial_sums(kernel: &RestartKernel, checkpoints: &[usize]) -> (Vec<f64>, f64) {
    let tau = kernel.lattice().tau;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut next = 0;
    let mut stream = kernel.stream();
    let last = checkpoints.last().copied().unwrap_or(0);
    for n in 1..=last {
        acc += n as f64 * stream.next().expect("stream is unbounded");
        while next < checkpoints.len() && checkpoints[next] == n {
            out.push(tau * acc);
            next += 1;
        }
    }
    (out, stream.segment_survival())
}

/// Truncated mean `τ Σ_{n<=n_c} n F_n^r`.
pub fn mean_fdt_truncated(kernel: &RestartKernel, n_c: usize) -> Result<FdtEstimate> {
    if n_c == 0 {
        return Err(Error::InputDomain("horizon n_c must be >= 1".into()));
    }
    let (sums, survival) = partial_sums(kernel, &[n_c]);
    Ok(FdtEstimate {
        value: sums[0],
        method: Method::Truncated,
        nc_grid: vec![n_c],
        truncated: sums,
        fit_degree: None,
        stability: None,
        stable: true,
        tail_survival: Some(survival),
    })
}

/// Legendre polynomials `P_0..P_deg` at `z`.
fn legendre(z: f64, deg: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(deg + 1);
    p.push(1.0);
    if deg >= 1 {
        p.push(z);
    }
    for k in 1..deg {
        let kf = k as f64;
        p.push(((2.0 * kf + 1.0) * z * p[k] - kf * p[k - 1]) / (kf + 1.0));
    }
    p
}

/// Least-squares fit of degree `deg` in `s ∈ (0, 1]`, evaluated at `s = 0`.
fn fit_at_origin(s: &[f64], y: &[f64], deg: usize) -> Result<f64> {
    let m = s.len();
    let cols = deg + 1;
    let design = DMatrix::from_fn(m, cols, |i, j| legendre(2.0 * s[i] - 1.0, deg)[j]);
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-13) {
        return Err(Error::Fit(format!("rank-deficient design for degree {deg}")));
    }
    let coef = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    Ok(legendre(-1.0, deg).iter().zip(coef.iter()).map(|(a, b)| a * b).sum())
}

/// Extrapolate partial sums `(n_c, value)` to `n_c → ∞`.
///
/// Fits a degree-10 polynomial in `u = 1/n_c`, rescaled to `(0, 1]` and
/// expanded in Legendre polynomials, and reads off its value at `u = 0`. The
/// spread of the degree 8/10/12 fits is reported as `stability`.
pub fn extrapolate_fdt(grid: &[(usize, f64)]) -> Result<FdtEstimate> {
    let mut pts: Vec<(usize, f64)> = grid.to_vec();
    pts.sort_by_key(|p| p.0);
    pts.dedup_by_key(|p| p.0);
    if pts.len() != grid.len() || pts.len() < MIN_GRID_POINTS || pts[0].0 == 0 {
        return Err(Error::Fit(format!(
            "need at least {MIN_GRID_POINTS} distinct positive horizons, got {} of {}",
            pts.len(),
            grid.len()
        )));
    }
    let u_max = 1.0 / pts[0].0 as f64;
    let s: Vec<f64> = pts.iter().map(|p| (1.0 / p.0 as f64) / u_max).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let value = fit_at_origin(&s, &y, FIT_DEGREE)?;
    let others: Vec<f64> = STABILITY_DEGREES
        .iter()
        .filter(|&&d| d + 1 <= pts.len())
        .map(|&d| fit_at_origin(&s, &y, d))
        .collect::<Result<_>>()?;
    let hi = others.iter().cloned().fold(f64::MIN, f64::max);
    let lo = others.iter().cloned().fold(f64::MAX, f64::min);
    let stability = hi - lo;
    let stable = value.is_finite() && stability <= STABILITY_TOLERANCE * value.abs();
    Ok(FdtEstimate {
        value,
        method: Method::Extrapolated,
        nc_grid: pts.iter().map(|p| p.0).collect(),
        truncated: y,
        fit_degree: Some(FIT_DEGREE),
        stability: Some(stability),
        stable,
        tail_survival: None,
    })
}

/// Geometric horizons `lo..=hi`, `points` of them before de-duplication.
pub fn geometric_grid(lo: usize, hi: usize, points: usize) -> Vec<usize> {
    assert!(lo >= 1 && hi >= lo && points >= 2);
    let ratio = (hi as f64 / lo as f64).ln() / (points - 1) as f64;
    let mut g: Vec<usize> = (0..points)
        .map(|i| (lo as f64 * (ratio * i as f64).exp()).round() as usize)
        .collect();
    g.dedup();
    g
}

/// Round horizons to whole restart windows so every partial sum closes a segment.
fn snap_to_windows(grid: &[usize], r: usize) -> Vec<usize> {
    let mut g: Vec<usize> = grid
        .iter()
        .map(|&n| ((n as f64 / r as f64).round() as usize).max(1) * r)
        .collect();
    g.dedup();
    g
}

/// Horizon sequence whose top is pushed out until the process has converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveGrid {
    pub points: usize,
    /// First candidate for the largest horizon.
    pub base_top: usize,
    /// Ratio between the largest and smallest horizon.
    pub span: usize,
    /// Stop doubling once the survival at the smallest horizon drops below this.
    pub survival_tol: f64,
    /// Largest horizon ever summed.
    pub cap: usize,
}

impl Default for AdaptiveGrid {
    fn default() -> Self {
        AdaptiveGrid { points: 20, base_top: 4000, span: 10, survival_tol: 1e-12, cap: 1 << 25 }
    }
}

/// How truncation horizons are chosen for extrapolated estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HorizonPolicy {
    Fixed { grid: Vec<usize> },
    Adaptive(AdaptiveGrid),
}

impl Default for HorizonPolicy {
    fn default() -> Self {
        HorizonPolicy::Adaptive(AdaptiveGrid::default())
    }
}

impl HorizonPolicy {
    /// 20 geometric horizons from 200 to 4000.
    pub fn classic() -> Self {
        HorizonPolicy::Fixed { grid: geometric_grid(200, 4000, 20) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HorizonPolicy::Fixed { grid } => {
                let mut g = grid.clone();
                g.sort_unstable();
                g.dedup();
                if g.len() != grid.len() || g.len() < MIN_GRID_POINTS || g[0] == 0 {
                    return Err(Error::Parameter(format!(
                        "n_c grid needs at least {MIN_GRID_POINTS} distinct positive horizons"
                    )));
                }
                Ok(())
            }
            HorizonPolicy::Adaptive(a) => {
                if a.points < MIN_GRID_POINTS + 1 || a.span < 2 || a.base_top < a.span || a.cap < a.base_top {
                    return Err(Error::Parameter("inconsistent adaptive horizon settings".into()));
                }
                if !(a.survival_tol > 0.0 && a.survival_tol < 1.0) {
                    return Err(Error::Parameter("survival tolerance must lie in (0, 1)".into()));
                }
                Ok(())
            }
        }
    }
}

/// Truncated sums on the policy's grid, snapped to whole restart windows.
pub fn truncated_grid(kernel: &RestartKernel, policy: &HorizonPolicy) -> Result<(Vec<usize>, Vec<f64>, f64)> {
    policy.validate()?;
    let r = kernel.schedule().r;
    match policy {
        HorizonPolicy::Fixed { grid } => {
            let mut g = grid.clone();
            g.sort_unstable();
            let (sums, surv) = partial_sums(kernel, &g);
            Ok((g, sums, surv))
        }
        HorizonPolicy::Adaptive(a) => {
            let mut tops = Vec::new();
            let mut top = a.base_top;
            while top < a.cap {
                tops.push(top);
                top *= 2;
            }
            tops.push(a.cap);
            let grids: Vec<Vec<usize>> = tops
                .iter()
                .map(|&t| snap_to_windows(&geometric_grid((t / a.span).max(1), t, a.points), r))
                .collect();
            // stream candidate by candidate, reusing the running sum
            let tau = kernel.lattice().tau;
            let mut stream = kernel.stream();
            let mut acc = 0.0;
            let mut n = 0usize;
            let mut recorded: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            let mut wanted: BTreeSet<usize> = grids.iter().flatten().copied().collect();
            for (i, g) in grids.iter().enumerate() {
                let top = *g.last().unwrap();
                while n < top {
                    n += 1;
                    acc += n as f64 * stream.next().expect("stream is unbounded");
                    if wanted.remove(&n) {
                        recorded.insert(n, (tau * acc, stream.segment_survival()));
                    }
                }
                let floor_survival = recorded[&g[0]].1;
                if floor_survival < a.survival_tol || i + 1 == grids.len() {
                    let sums = g.iter().map(|k| recorded[k].0).collect();
                    return Ok((g.clone(), sums, recorded[&top].1));
                }
            }
            unreachable!("last candidate always returns")
        }
    }
}

/// Mean first-detection time for one restart window.
///
/// Resolved IPR (including `Δ = 0` schedules) uses the closed form; the
/// other protocols are summed and extrapolated under `policy`.
pub fn estimate_mean_fdt(kernel: &RestartKernel, policy: &HorizonPolicy) -> Result<FdtEstimate> {
    if kernel.protocol().law == StepLaw::Fixed {
        let cfg = kernel.lattice();
        let f = match kernel.cache().row(cfg.distance(cfg.x0)) {
            Some(row) => row.f.clone(),
            None => vec![0.0; kernel.schedule().r],
        };
        return closed_from_window(&f, cfg.tau);
    }
    let (grid, sums, surv) = truncated_grid(kernel, policy)?;
    let pairs: Vec<(usize, f64)> = grid.into_iter().zip(sums).collect();
    let mut est = extrapolate_fdt(&pairs)?;
    est.tail_survival = Some(surv);
    Ok(est)
}

/// One restart window evaluated in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r: usize,
    pub t_r: f64,
    pub delta_offset: u64,
    /// `Δ > 0` and the detector distance is a multiple of `Δ`.
    pub divides: bool,
    /// `None` when the mean diverges.
    pub estimate: Option<FdtEstimate>,
}

impl SweepPoint {
    pub fn value(&self) -> f64 {
        self.estimate.as_ref().map_or(f64::INFINITY, |e| e.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Vec<f64>,
    pub points: Vec<SweepPoint>,
    pub local_minima: Vec<usize>,
    pub global_optimum: usize,
}

impl SweepResult {
    pub fn optimum(&self) -> &SweepPoint {
        &self.points[self.global_optimum]
    }
}

/// Strict interior minima; a flat bottom reports its leftmost index.
pub fn local_minima(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < values.len() {
        if values[i] < values[i - 1] {
            let mut j = i;
            while j + 1 < values.len() && values[j + 1] == values[i] {
                j += 1;
            }
            if j + 1 < values.len() && values[j + 1] > values[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

fn sweep_point(proto: &Protocol, cfg: &LatticeConfig, r: usize, policy: &HorizonPolicy) -> Result<SweepPoint> {
    let sched = RestartSchedule::new(r, cfg.tau)?;
    let kernel = RestartKernel::new(proto, &sched, cfg)?;
    let estimate = match estimate_mean_fdt(&kernel, policy) {
        Ok(e) => Some(e),
        Err(Error::Divergent(_)) => None,
        Err(e) => return Err(e),
    };
    let delta_offset = sched.delta_offset;
    let distance = (cfg.delta - cfg.x0).unsigned_abs();
    Ok(SweepPoint {
        r,
        t_r: sched.t_r(),
        delta_offset,
        divides: delta_offset > 0 && distance % delta_offset == 0,
        estimate,
    })
}

/// `⟨t_f⟩` across restart windows, with local and global minima.
pub fn optimal_restart(
    proto: &Protocol,
    cfg: &LatticeConfig,
    r_range: RangeInclusive<usize>,
    policy: &HorizonPolicy,
) -> Result<SweepResult> {
    proto.validate()?;
    cfg.validate()?;
    policy.validate()?;
    if r_range.is_empty() || *r_range.start() == 0 {
        return Err(Error::Parameter("restart range must be non-empty and start at r >= 1".into()));
    }
    let rs: Vec<usize> = r_range.collect();
    let points: Vec<SweepPoint> = rs
        .par_iter()
        .map(|&r| sweep_point(proto, cfg, r, policy))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = points.iter().map(SweepPoint::value).collect();
    let global_optimum = argmin(&values)
        .ok_or_else(|| Error::Divergent("every restart window in the sweep diverges".into()))?;
    Ok(SweepResult {
        axis: rs.iter().map(|&r| r as f64).collect(),
        local_minima: local_minima(&values),
        global_optimum,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::Fit("need at least two paired points".into()));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate abscissa".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r_squared })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaOptimum {
    pub delta: i64,
    pub r_star: usize,
    pub t_r_star: f64,
    pub fdt_star: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweep {
    pub rows: Vec<DeltaOptimum>,
    pub fit: LinearFit,
}

/// Optimal `⟨t_f⟩` as a function of detector position, with a straight-line fit.
pub fn fdt_vs_delta(
    proto: &Protocol,
    base: &LatticeConfig,
    deltas: &[i64],
    r_range: RangeInclusive<usize>,
    policy: &HorizonPolicy,
) -> Result<DeltaSweep> {
    if deltas.len() < 3 {
        return Err(Error::Fit("need at least three detector positions".into()));
    }
    let mut sorted = deltas.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != deltas.len() {
        return Err(Error::Fit("degenerate abscissa: repeated detector position".into()));
    }
    let rows: Vec<DeltaOptimum> = deltas
        .par_iter()
        .map(|&delta| {
            let cfg = LatticeConfig { delta, ..*base };
            let sweep = optimal_restart(proto, &cfg, r_range.clone(), policy)?;
            let best = sweep.optimum();
            Ok(DeltaOptimum { delta, r_star: best.r, t_r_star: best.t_r, fdt_star: best.value() })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.delta as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.fdt_star).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(DeltaSweep { rows, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauPoint {
    /// Requested restart time on the common grid.
    pub t_r_grid: f64,
    pub r: usize,
    /// Realized restart time `rτ`.
    pub t_r: f64,
    pub delta_offset: u64,
    pub fdt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauCurve {
    pub tau: f64,
    pub points: Vec<TauPoint>,
    pub local_minima: Vec<usize>,
    pub optimum: usize,
}

impl TauCurve {
    pub fn t_r_star(&self) -> f64 {
        self.points[self.optimum].t_r_grid
    }
}

/// `⟨t_f⟩` against restart time for several measurement periods.
///
/// Each grid time maps to `r = round(t_r / τ)`.
pub fn fdt_vs_tau(
    proto: &Protocol,
    base: &LatticeConfig,
    taus: &[f64],
    t_r_grid: &[f64],
    policy: &HorizonPolicy,
) -> Result<Vec<TauCurve>> {
    if taus.is_empty() || t_r_grid.is_empty() {
        return Err(Error::Parameter("need at least one tau and one restart time".into()));
    }
    taus.par_iter()
        .map(|&tau| {
            let cfg = LatticeConfig { tau, ..*base };
            cfg.validate()?;
            let points: Vec<TauPoint> = t_r_grid
                .par_iter()
                .map(|&t| {
                    if !(t > 0.0) {
                        return Err(Error::Parameter(format!("restart time must be > 0, got {t}")));
                    }
                    let r = ((t / tau).round() as usize).max(1);
                    let p = sweep_point(proto, &cfg, r, policy)?;
                    Ok(TauPoint { t_r_grid: t, r, t_r: p.t_r, delta_offset: p.delta_offset, fdt: p.value() })
                })
                .collect::<Result<_>>()?;
            let values: Vec<f64> = points.iter().map(|p| p.fdt).collect();
            let optimum = argmin(&values)
                .ok_or_else(|| Error::Divergent(format!("every restart time diverges at tau={tau}")))?;
            Ok(TauCurve { tau, local_minima: local_minima(&values), optimum, points })
        })
        .collect()
}
