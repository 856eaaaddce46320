//! Free evolution on the infinite chain.
//!
//! The amplitude to hop from `x0` to `j` in time `t` is `i^|j-x0| J_|j-x0|(2t)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{bessel_j, bessel_row, negligible_order};

/// Ties in site probability closer than this resolve to the smaller offset.
pub const PEAK_TIE_TOLERANCE: f64 = 1e-12;

/// Measurement geometry shared by every computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Measurement period.
    pub tau: f64,
    /// Detector site.
    pub delta: i64,
    /// Initial site.
    pub x0: i64,
    /// Number of measurements in a computed series.
    pub n_max: usize,
}

impl LatticeConfig {
    pub fn new(tau: f64, delta: i64, x0: i64, n_max: usize) -> Result<Self> {
        let cfg = LatticeConfig { tau, delta, x0, n_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        if self.n_max == 0 {
            return Err(Error::Parameter("n_max must be >= 1".into()));
        }
        Ok(())
    }

    /// Distance from `site` to the detector.
    pub fn distance(&self, site: i64) -> u64 {
        site.abs_diff(self.delta)
    }
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { tau: 0.25, delta: 10, x0: 0, n_max: 10_000 }
    }
}

/// Most-probable hop length `Δ` after free evolution for `t_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOffset {
    pub t_r: f64,
    pub delta_offset: u64,
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InputDomain(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// `i^d` for integer `d >= 0`.
pub fn i_pow(d: u64) -> Complex64 {
    match d % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// `<j|U(t)|x0>` on the infinite chain.
pub fn transition_amplitude(j: i64, x0: i64, t: f64) -> Result<Complex64> {
    check_time(t)?;
    let d = j.abs_diff(x0);
    let order = i32::try_from(d)
        .map_err(|_| Error::InputDomain(format!("hop distance {d} too large")))?;
    Ok(i_pow(d) * bessel_j(order, 2.0 * t)?)
}

/// Probability of finding the walker at `j` after free evolution from `x0`.
pub fn occupation_probability(j: i64, x0: i64, t: f64) -> Result<f64> {
    Ok(transition_amplitude(j, x0, t)?.norm_sqr())
}

/// Hop length that maximizes `J_n(2 t_r)^2` over `n >= 0`.
///
/// The scan stops at `2 t_r + 60`; ties within [`PEAK_TIE_TOLERANCE`] keep the
/// smaller offset, so the `J_0 = J_1` crossing still reports `Δ = 0`.
pub fn peak_offset(t_r: f64) -> Result<PeakOffset> {
    if !t_r.is_finite() || t_r <= 0.0 {
        return Err(Error::InputDomain(format!("restart interval must be > 0, got {t_r}")));
    }
    let x = 2.0 * t_r;
    let row = bessel_row(negligible_order(x), x)?;
    let mut best = 0usize;
    let mut best_p = row.values[0] * row.values[0];
    for (n, v) in row.values.iter().enumerate().skip(1) {
        let p = v * v;
        if p > best_p + PEAK_TIE_TOLERANCE {
            best = n;
            best_p = p;
        }
    }
    Ok(PeakOffset { t_r, delta_offset: best as u64 })
}

/// Reset sites reachable after `resets` resets: `x0 + (R - 2m) Δ`, `m = 0..=R`, descending.
pub fn jstar_support(resets: usize, delta_offset: u64, x0: i64) -> Vec<i64> {
    if delta_offset == 0 {
        return vec![x0];
    }
    let step = delta_offset as i64;
    let r = resets as i64;
    (0..=r).map(|m| x0 + (r - 2 * m) * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_zero_time() {
        assert_eq!(transition_amplitude(3, 3, 0.0).unwrap(), Complex64::new(1.0, 0.0));
        assert_eq!(occupation_probability(3, 3, 0.0).unwrap(), 1.0);
        assert_eq!(occupation_probability(4, 3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn phase_convention() {
        let a = transition_amplitude(1, 0, 0.5).unwrap();
        assert!(a.re.abs() < 1e-15);
        assert!((a.im - 0.440_050_585_744_933_5).abs() < 1e-12);
        let t = 1.3;
        let b = transition_amplitude(-2, 0, t).unwrap();
        assert!(b.im.abs() < 1e-15);
        assert!((b.re + bessel_j(2, 2.0 * t).unwrap()).abs() < 1e-15);
        let p = occupation_probability(1, 0, 0.5).unwrap();
        assert!((p - 0.193_644_518_014_459).abs() < 1e-12);
    }

    #[test]
    fn reflection_symmetry_is_exact() {
        for d in 0..30 {
            for &t in &[0.1, 1.0, 4.5, 12.0] {
                assert_eq!(
                    occupation_probability(7 + d, 7, t).unwrap(),
                    occupation_probability(7 - d, 7, t).unwrap()
                );
            }
        }
    }

    #[test]
    fn peak_examples() {
        assert_eq!(peak_offset(0.25).unwrap().delta_offset, 0);
        assert_eq!(peak_offset(3.0).unwrap().delta_offset, 5);
        assert_eq!(peak_offset(1.75).unwrap().delta_offset, 2);
        assert!(matches!(peak_offset(0.0), Err(Error::InputDomain(_))));
        assert!(matches!(peak_offset(-1.0), Err(Error::InputDomain(_))));
    }

    #[test]
    fn peak_dominates_scanned_sites() {
        for k in 1..200 {
            let t = 0.1 * k as f64;
            let peak = peak_offset(t).unwrap();
            let top = occupation_probability(peak.delta_offset as i64, 0, t).unwrap();
            for n in 0..negligible_order(2.0 * t) as i64 {
                assert!(top + PEAK_TIE_TOLERANCE >= occupation_probability(n, 0, t).unwrap());
            }
        }
    }

    #[test]
    fn support_examples() {
        assert_eq!(jstar_support(0, 5, 0), vec![0]);
        assert_eq!(jstar_support(2, 5, 0), vec![10, 0, -10]);
        assert_eq!(jstar_support(3, 1, 2), vec![5, 3, 1, -1]);
        assert_eq!(jstar_support(4, 0, 2), vec![2]);
    }

    #[test]
    fn config_validation() {
        assert!(LatticeConfig::new(0.0, 10, 0, 5).is_err());
        assert!(LatticeConfig::new(0.25, 10, 0, 0).is_err());
        assert!(LatticeConfig::new(0.25, 10, 0, 1).is_ok());
    }
}
