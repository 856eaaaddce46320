//! First-detection amplitudes under stroboscopic projective measurement.
//!
//! With the detector at `δ`, measured every `τ`, the amplitude of first
//! detection at attempt `n` obeys the renewal recursion
//!
//! ```text
//! φ_n = i^d J_d(2nτ) - Σ_{m<n} J_0(2(n-m)τ) φ_m,      d = |start - δ|
//! ```
//!
//! Because the return kernel `J_0` is real, `φ_n = i^d ψ_n` with `ψ` real, and
//! the recursion runs on `ψ`.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{i_pow, LatticeConfig};
use crate::specfun::{bessel_j, bessel_row, negligible_order};

/// Slack allowed on the cumulative detection probability.
pub const PROBABILITY_BUDGET_SLACK: f64 = 1e-10;

/// First-detection amplitudes `φ_1..φ_N` for one start distance.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSeries {
    pub start_distance: u64,
    pub tau: f64,
    pub phi: Vec<Complex64>,
}

impl AmplitudeSeries {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// First-detection probabilities with their cumulative and survival sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSeries {
    /// `F_n` for `n = 1..N` (index 0 holds `F_1`).
    pub f: Vec<f64>,
    /// `P_det(n) = Σ_{m<=n} F_m`.
    pub p_det: Vec<f64>,
    /// `S_n = 1 - P_det(n)`.
    pub s: Vec<f64>,
}

impl DetectionSeries {
    pub fn from_first_detection(f: Vec<f64>) -> Self {
        let mut p_det = Vec::with_capacity(f.len());
        let mut acc = 0.0;
        for &v in &f {
            acc += v;
            p_det.push(acc);
        }
        let s = p_det.iter().map(|p| 1.0 - p).collect();
        DetectionSeries { f, p_det, s }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// `J_0(2kτ)` for `k = 0..=len`.
pub(crate) fn return_kernel(tau: f64, len: usize) -> Result<Vec<f64>> {
    (0..=len).map(|k| bessel_j(0, 2.0 * k as f64 * tau)).collect()
}

/// Real part `ψ` of the recursion for distance `d`, given the precomputed kernel.
fn real_recursion(source: &[f64], kernel: &[f64]) -> Vec<f64> {
    let mut psi = Vec::with_capacity(source.len());
    for (i, &src) in source.iter().enumerate() {
        let mut acc = src;
        for (m, &prev) in psi.iter().enumerate() {
            acc -= kernel[i - m] * prev;
        }
        psi.push(acc);
    }
    psi
}

fn source_terms(distance: u64, tau: f64, len: usize) -> Result<Vec<f64>> {
    let order = i32::try_from(distance)
        .map_err(|_| Error::InputDomain(format!("distance {distance} too large")))?;
    (1..=len).map(|n| bessel_j(order, 2.0 * n as f64 * tau)).collect()
}

/// First-detection amplitudes for a walker starting at `start`.
pub fn detection_amplitudes(start: i64, cfg: &LatticeConfig, n: usize) -> Result<AmplitudeSeries> {
    if n == 0 {
        return Err(Error::InputDomain("series length must be >= 1".into()));
    }
    if !(cfg.tau.is_finite() && cfg.tau > 0.0) {
        return Err(Error::InputDomain(format!("tau must be > 0, got {}", cfg.tau)));
    }
    let d = cfg.distance(start);
    let kernel = return_kernel(cfg.tau, n)?;
    let psi = real_recursion(&source_terms(d, cfg.tau, n)?, &kernel);
    let phase = i_pow(d);
    Ok(AmplitudeSeries {
        start_distance: d,
        tau: cfg.tau,
        phi: psi.into_iter().map(|v| phase * v).collect(),
    })
}

/// `F_n = |φ_n|^2` and the derived cumulative sums.
pub fn detection_series(phi: &AmplitudeSeries) -> DetectionSeries {
    DetectionSeries::from_first_detection(phi.phi.iter().map(|a| a.norm_sqr()).collect())
}

/// Detection probability within the first `r` attempts.
pub fn detection_prob_window(series: &DetectionSeries, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::InputDomain("window must be >= 1".into()));
    }
    series
        .p_det
        .get(r - 1)
        .copied()
        .ok_or(Error::Length { requested: r, available: series.len() })
}

/// First-detection probabilities `F_1..F_len` for one start distance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub f: Vec<f64>,
    /// `Σ F_n` over the window.
    pub total: f64,
}

/// Shared, lazily filled table of window rows indexed by start distance.
///
/// Each row is computed once and read without locking. Distances beyond
/// the light cone of the window (`d > 2 len τ + 60`) have no detectable
/// amplitude and report `None`.
#[derive(Debug)]
pub struct AmplitudeCache {
    tau: f64,
    len: usize,
    kernel: Vec<f64>,
    cutoff: u64,
    rows: Vec<OnceLock<WindowRow>>,
}

impl AmplitudeCache {
    pub fn new(tau: f64, len: usize) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InputDomain(format!("tau must be > 0, got {tau}")));
        }
        if len == 0 {
            return Err(Error::InputDomain("window length must be >= 1".into()));
        }
        let cutoff = negligible_order(2.0 * len as f64 * tau) as u64;
        Ok(AmplitudeCache {
            tau,
            len,
            kernel: return_kernel(tau, len)?,
            cutoff,
            rows: (0..=cutoff).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Largest distance with a stored row.
    pub fn cutoff(&self) -> u64 {
        self.cutoff
    }

    /// Row for `distance`, computing it on first use.
    pub fn row(&self, distance: u64) -> Option<&WindowRow> {
        let slot = self.rows.get(usize::try_from(distance).ok()?)?;
        Some(slot.get_or_init(|| self.compute(distance)))
    }

    /// Rows for every distance in `0..=max_distance` in one batched pass.
    pub fn prefill(&self, max_distance: u64) {
        let max_d = max_distance.min(self.cutoff) as usize;
        let missing: Vec<usize> = (0..=max_d).filter(|&d| self.rows[d].get().is_none()).collect();
        if missing.is_empty() {
            return;
        }
        // one Bessel row per measurement time serves every distance
        let table: Vec<Vec<f64>> = (1..=self.len)
            .map(|n| {
                bessel_row(max_d, 2.0 * n as f64 * self.tau)
                    .expect("tau validated at construction")
                    .values
            })
            .collect();
        for d in missing {
            let source: Vec<f64> = table.iter().map(|row| row[d]).collect();
            let _ = self.rows[d].set(self.finish(&source));
        }
    }

    fn compute(&self, distance: u64) -> WindowRow {
        let source = source_terms(distance, self.tau, self.len).expect("tau validated at construction");
        self.finish(&source)
    }

    fn finish(&self, source: &[f64]) -> WindowRow {
        let f: Vec<f64> = real_recursion(source, &self.kernel).into_iter().map(|v| v * v).collect();
        let total = f.iter().sum();
        WindowRow { f, total }
    }
}
