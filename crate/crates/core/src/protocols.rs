//! Restart protocols and the first-detection law under resetting.
//!
//! Every `r` measurements without a click the walker is reset. Under initial
//! position resetting (IPR) it returns to `x0`. Under most-probable-position
//! resetting (MPR) it hops `±Δ` from its current reset site, right with
//! probability `p`, where `Δ` is the peak of free evolution over `t_r = rτ`.
//! Adaptive MPR uses `p_I` for the first `R_c` resets and `p_F` afterwards.
//!
//! The first-detection probability at attempt `n = rR + ñ` is the product of
//! distribution-averaged window survivals times the averaged in-window term:
//!
//! ```text
//! F_n = Π_{i<R} (1 - P_i) · F̄_R(ñ),   F̄_R(ñ) = Σ_l w_R(l) |φ_ñ^{x0+(R-2l)Δ}|²,
//! P_i = Σ_{ñ<=r} F̄_i(ñ)
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detection::{AmplitudeCache, DetectionSeries};
use crate::error::{Error, Result};
use crate::propagation::{jstar_support, peak_offset, LatticeConfig};

/// Weights smaller than this are dropped from distribution averages.
pub const WEIGHT_FLOOR: f64 = 1e-16;

/// When adaptive MPR switches from `p_I` to `p_F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchPoint {
    Fixed(usize),
    /// Resolved per schedule so the mean reset site lands on the detector.
    Auto,
}

/// Restart protocol as chosen by the user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    Ipr,
    Mpr { p: f64 },
    AdaptiveMpr { p_initial: f64, p_final: f64, switch: SwitchPoint },
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Protocol::Ipr => Ok(()),
            Protocol::Mpr { p } => check_probability("p", p),
            Protocol::AdaptiveMpr { p_initial, p_final, switch } => {
                check_probability("p_I", p_initial)?;
                check_probability("p_F", p_final)?;
                match switch {
                    SwitchPoint::Fixed(0) => Err(Error::Parameter("R_c must be >= 1".into())),
                    SwitchPoint::Auto if p_initial <= 0.5 => Err(Error::Parameter(format!(
                        "automatic R_c needs p_I > 0.5 so the drift points toward the detector, got {p_initial}"
                    ))),
                    _ => Ok(()),
                }
            }
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match *self {
            Protocol::Ipr => "ipr".to_string(),
            Protocol::Mpr { p } => format!("mpr(p={p})"),
            Protocol::AdaptiveMpr { p_initial, p_final, switch } => match switch {
                SwitchPoint::Fixed(rc) => format!("ampr(p_I={p_initial},p_F={p_final},R_c={rc})"),
                SwitchPoint::Auto => format!("ampr(p_I={p_initial},p_F={p_final},R_c=auto)"),
            },
        }
    }
}

/// Reset every `r` measurements; `Δ` follows from the restart interval `rτ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartSchedule {
    pub r: usize,
    pub tau: f64,
    pub delta_offset: u64,
}

impl RestartSchedule {
    pub fn new(r: usize, tau: f64) -> Result<Self> {
        if r == 0 {
            return Err(Error::Parameter("restart window r must be >= 1".into()));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Parameter(format!("tau must be > 0, got {tau}")));
        }
        let delta_offset = peak_offset(r as f64 * tau)?.delta_offset;
        Ok(RestartSchedule { r, tau, delta_offset })
    }

    pub fn t_r(&self) -> f64 {
        self.r as f64 * self.tau
    }

    /// `(R, ñ)` with `n = rR + ñ` and `1 <= ñ <= r`.
    pub fn decompose(&self, n: usize) -> (usize, usize) {
        assert!(n >= 1, "measurement index starts at 1");
        let resets = (n - 1) / self.r;
        (resets, n - self.r * resets)
    }
}

/// Nearest integer to `distance / (Δ (2 p_I - 1))`, halves rounded up, at least 1.
pub fn rc_default(distance: i64, delta_offset: u64, p_initial: f64) -> Result<usize> {
    if delta_offset == 0 {
        return Err(Error::Parameter("automatic R_c needs a nonzero peak offset".into()));
    }
    if !(p_initial > 0.5 && p_initial <= 1.0) {
        return Err(Error::Parameter(format!(
            "automatic R_c needs p_I in (0.5, 1] so the drift points toward the detector, got {p_initial}"
        )));
    }
    if distance <= 0 {
        return Err(Error::Parameter(format!(
            "automatic R_c needs the detector to the right of x0, distance {distance}"
        )));
    }
    let ratio = distance as f64 / (delta_offset as f64 * (2.0 * p_initial - 1.0));
    Ok(round_half_up(ratio).max(1))
}

pub(crate) fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Probability law of the signed hops between reset sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepLaw {
    /// Reset always returns to `x0`.
    Fixed,
    Constant { p: f64 },
    TwoPhase { p_initial: f64, p_final: f64, switch: usize },
}

/// Protocol with `Δ` and `R_c` fixed for one schedule and detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedProtocol {
    pub law: StepLaw,
    pub delta_offset: u64,
}

impl ResolvedProtocol {
    /// `Δ = 0` collapses every MPR variant onto IPR.
    pub fn resolve(proto: &Protocol, sched: &RestartSchedule, cfg: &LatticeConfig) -> Result<Self> {
        proto.validate()?;
        let delta_offset = sched.delta_offset;
        if delta_offset == 0 {
            return Ok(ResolvedProtocol { law: StepLaw::Fixed, delta_offset: 0 });
        }
        let law = match *proto {
            Protocol::Ipr => StepLaw::Fixed,
            Protocol::Mpr { p } => StepLaw::Constant { p },
            Protocol::AdaptiveMpr { p_initial, p_final, switch } => {
                let switch = match switch {
                    SwitchPoint::Fixed(rc) => rc,
                    SwitchPoint::Auto => rc_default(cfg.delta - cfg.x0, delta_offset, p_initial)?,
                };
                StepLaw::TwoPhase { p_initial, p_final, switch }
            }
        };
        let delta_offset = if law == StepLaw::Fixed { 0 } else { delta_offset };
        Ok(ResolvedProtocol { law, delta_offset })
    }

    /// Right-hop probability of reset `k` (1-based).
    pub fn step_probability(&self, k: usize) -> Option<f64> {
        match self.law {
            StepLaw::Fixed => None,
            StepLaw::Constant { p } => Some(p),
            StepLaw::TwoPhase { p_initial, p_final, switch } => {
                Some(if k <= switch { p_initial } else { p_final })
            }
        }
    }

    pub fn switch_point(&self) -> Option<usize> {
        match self.law {
            StepLaw::TwoPhase { switch, .. } => Some(switch),
            _ => None,
        }
    }
}

/// `ln k!` table, grown on demand with compensated summation.
///
/// Scratch space for binomial hop weights; reuse one across windows.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    table: Vec<f64>,
    carry: f64,
}

impl Default for LogFactorials {
    fn default() -> Self {
        Self::new()
    }
}

impl LogFactorials {
    pub fn new() -> Self {
        LogFactorials { table: vec![0.0, 0.0], carry: 0.0 }
    }

    fn ensure(&mut self, n: usize) {
        while self.table.len() <= n {
            let k = self.table.len();
            let last = *self.table.last().unwrap();
            let y = (k as f64).ln() - self.carry;
            let t = last + y;
            self.carry = (t - last) - y;
            self.table.push(t);
        }
    }

    pub(crate) fn ln_choose(&mut self, n: usize, k: usize) -> f64 {
        self.ensure(n);
        self.table[n] - self.table[k] - self.table[n - k]
    }

    /// `C(n, l) p^(n-l) (1-p)^l`: probability of `l` left hops out of `n`.
    pub(crate) fn binomial(&mut self, n: usize, l: usize, p: f64) -> f64 {
        if l > n {
            return 0.0;
        }
        let rights = n - l;
        if p >= 1.0 {
            return if l == 0 { 1.0 } else { 0.0 };
        }
        if p <= 0.0 {
            return if rights == 0 { 1.0 } else { 0.0 };
        }
        let mut lw = self.ln_choose(n, l);
        if rights > 0 {
            lw += rights as f64 * p.ln();
        }
        if l > 0 {
            lw += l as f64 * (-p).ln_1p();
        }
        lw.exp()
    }

    /// Weight of `l` left hops after `resets` resets under `law`.
    pub(crate) fn hop_weight(&mut self, law: &StepLaw, resets: usize, l: usize) -> f64 {
        match *law {
            StepLaw::Fixed => {
                if l == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            StepLaw::Constant { p } => self.binomial(resets, l, p),
            StepLaw::TwoPhase { p_initial, p_final, switch } => {
                if resets <= switch {
                    return self.binomial(resets, l, p_initial);
                }
                let late = resets - switch;
                let lo = l.saturating_sub(late);
                let hi = switch.min(l);
                (lo..=hi)
                    .map(|a| self.binomial(switch, a, p_initial) * self.binomial(late, l - a, p_final))
                    .sum()
            }
        }
    }
}

/// Distribution of the reset site after `resets` resets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JStarDistribution {
    pub resets: usize,
    /// Sites `x0 + (R - 2l) Δ`, descending.
    pub offsets: Vec<i64>,
    pub weights: Vec<f64>,
}

impl JStarDistribution {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Reset-site distribution after `resets` resets.
pub fn jstar_distribution(proto: &ResolvedProtocol, x0: i64, resets: usize) -> JStarDistribution {
    let offsets = jstar_support(resets, proto.delta_offset, x0);
    let mut lf = LogFactorials::new();
    let weights = if offsets.len() == 1 {
        vec![1.0]
    } else {
        (0..=resets).map(|l| lf.hop_weight(&proto.law, resets, l)).collect()
    };
    JStarDistribution { resets, offsets, weights }
}

/// Mean and variance of a displacement distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Moments of the reset-site displacement `j* - x0`.
pub fn jstar_moments(dist: &JStarDistribution, x0: i64) -> Moments {
    let total: f64 = dist.total_weight();
    let mean = dist
        .offsets
        .iter()
        .zip(&dist.weights)
        .map(|(&s, &w)| w * (s - x0) as f64)
        .sum::<f64>()
        / total;
    let variance = dist
        .offsets
        .iter()
        .zip(&dist.weights)
        .map(|(&s, &w)| {
            let d = (s - x0) as f64 - mean;
            w * d * d
        })
        .sum::<f64>()
        / total;
    Moments { mean, variance }
}

/// Random-walk moments `⟨j*⟩ = Δ Σ(2p_k - 1)`, `σ² = 4Δ² Σ p_k(1 - p_k)`.
pub fn analytic_moments(proto: &ResolvedProtocol, resets: usize) -> Moments {
    let d = proto.delta_offset as f64;
    let (mut drift, mut spread) = (0.0, 0.0);
    let mut add = |count: usize, p: f64| {
        drift += count as f64 * (2.0 * p - 1.0);
        spread += count as f64 * p * (1.0 - p);
    };
    match proto.law {
        StepLaw::Fixed => {}
        StepLaw::Constant { p } => add(resets, p),
        StepLaw::TwoPhase { p_initial, p_final, switch } => {
            let early = resets.min(switch);
            add(early, p_initial);
            add(resets - early, p_final);
        }
    }
    Moments { mean: d * drift, variance: 4.0 * d * d * spread }
}

/// Everything needed to evaluate `F_n^r` for one protocol, schedule and geometry.
#[derive(Debug, Clone)]
pub struct RestartKernel {
    proto: ResolvedProtocol,
    sched: RestartSchedule,
    cfg: LatticeConfig,
    cache: Arc<AmplitudeCache>,
}

impl RestartKernel {
    pub fn new(proto: &Protocol, sched: &RestartSchedule, cfg: &LatticeConfig) -> Result<Self> {
        cfg.validate()?;
        if (sched.tau - cfg.tau).abs() > 0.0 {
            return Err(Error::Parameter(format!(
                "schedule tau {} differs from lattice tau {}",
                sched.tau, cfg.tau
            )));
        }
        let resolved = ResolvedProtocol::resolve(proto, sched, cfg)?;
        let cache = Arc::new(AmplitudeCache::new(cfg.tau, sched.r)?);
        Ok(Self::with_cache(resolved, *sched, *cfg, cache))
    }

    /// Reuse an existing cache; its window must equal `sched.r`.
    pub fn with_cache(
        proto: ResolvedProtocol,
        sched: RestartSchedule,
        cfg: LatticeConfig,
        cache: Arc<AmplitudeCache>,
    ) -> Self {
        assert_eq!(cache.len(), sched.r, "cache window must match the restart window");
        RestartKernel { proto, sched, cfg, cache }
    }

    pub fn protocol(&self) -> &ResolvedProtocol {
        &self.proto
    }

    pub fn schedule(&self) -> &RestartSchedule {
        &self.sched
    }

    pub fn lattice(&self) -> &LatticeConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &Arc<AmplitudeCache> {
        &self.cache
    }

    /// `F̄_R(ñ)` summed over the full reset-site distribution.
    pub fn averaged_first_detection(&self, resets: usize, n_window: usize) -> Result<f64> {
        if n_window == 0 || n_window > self.sched.r {
            return Err(Error::InputDomain(format!(
                "window index must lie in 1..={}, got {n_window}",
                self.sched.r
            )));
        }
        let dist = jstar_distribution(&self.proto, self.cfg.x0, resets);
        let mut acc = 0.0;
        for (&site, &w) in dist.offsets.iter().zip(&dist.weights) {
            if w < WEIGHT_FLOOR {
                continue;
            }
            if let Some(row) = self.cache.row(self.cfg.distance(site)) {
                acc += w * row.f[n_window - 1];
            }
        }
        Ok(acc)
    }

    /// `F̄_R(1..=r)`, restricted to reset sites inside the window's light cone.
    pub fn window(&self, resets: usize, lf: &mut LogFactorials) -> Vec<f64> {
        let r = self.sched.r;
        let mut out = vec![0.0; r];
        let x0 = self.cfg.x0;
        let delta = self.cfg.delta;
        let step = self.proto.delta_offset as i64;
        if step == 0 {
            if let Some(row) = self.cache.row(self.cfg.distance(x0)) {
                out.copy_from_slice(&row.f);
            }
            return out;
        }
        let reach = self.cache.cutoff() as i64;
        let rr = resets as i64;
        let k_lo = (delta - x0 - reach).div_euclid(step).max(-rr);
        let k_hi = (delta - x0 + reach).div_euclid(step).min(rr);
        for k in k_lo..=k_hi {
            if (rr - k) % 2 != 0 {
                continue;
            }
            let l = ((rr - k) / 2) as usize;
            let w = lf.hop_weight(&self.proto.law, resets, l);
            if w < WEIGHT_FLOOR {
                continue;
            }
            if let Some(row) = self.cache.row(self.cfg.distance(x0 + k * step)) {
                for (o, v) in out.iter_mut().zip(&row.f) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `P_R`: averaged detection probability inside segment `R`.
    pub fn window_detection(&self, resets: usize) -> f64 {
        self.window(resets, &mut LogFactorials::new()).iter().sum()
    }

    /// `F_n^r` for a single measurement index.
    pub fn first_detection(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InputDomain("measurement index starts at 1".into()));
        }
        let (resets, n_window) = self.sched.decompose(n);
        let mut lf = LogFactorials::new();
        let mut survival = 1.0;
        for i in 0..resets {
            survival *= 1.0 - self.window(i, &mut lf).iter().sum::<f64>();
        }
        Ok(survival * self.window(resets, &mut lf)[n_window - 1])
    }

    /// Lazy sequence `F_1^r, F_2^r, ...`.
    pub fn stream(&self) -> RestartStream<'_> {
        RestartStream {
            kernel: self,
            lf: LogFactorials::new(),
            resets: 0,
            pos: 0,
            window: Vec::new(),
            survival: 1.0,
        }
    }

    pub fn series(&self, n: usize) -> DetectionSeries {
        DetectionSeries::from_first_detection(self.stream().take(n).collect())
    }
}

/// Iterator over `F_n^r`; the survival product is carried across segments.
#[derive(Debug)]
pub struct RestartStream<'a> {
    kernel: &'a RestartKernel,
    lf: LogFactorials,
    resets: usize,
    pos: usize,
    window: Vec<f64>,
    survival: f64,
}

impl RestartStream<'_> {
    /// `Π_{i<R} (1 - P_i)` for the segment currently being emitted.
    pub fn segment_survival(&self) -> f64 {
        self.survival
    }
}

impl Iterator for RestartStream<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let r = self.kernel.sched.r;
        if self.window.is_empty() {
            self.window = self.kernel.window(0, &mut self.lf);
        } else if self.pos == r {
            self.survival *= 1.0 - self.window.iter().sum::<f64>();
            self.resets += 1;
            self.pos = 0;
            if self.survival > 0.0 {
                self.window = self.kernel.window(self.resets, &mut self.lf);
            } else {
                self.window.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let v = self.survival * self.window[self.pos];
        self.pos += 1;
        Some(v)
    }
}

/// `F̄_R(ñ)` for one protocol and schedule.
pub fn averaged_first_detection(
    proto: &Protocol,
    sched: &RestartSchedule,
    resets: usize,
    n_window: usize,
    cfg: &LatticeConfig,
) -> Result<f64> {
    RestartKernel::new(proto, sched, cfg)?.averaged_first_detection(resets, n_window)
}

/// `F_n^r` under restart.
pub fn fn_under_restart(
    proto: &Protocol,
    sched: &RestartSchedule,
    cfg: &LatticeConfig,
    n: usize,
) -> Result<f64> {
    RestartKernel::new(proto, sched, cfg)?.first_detection(n)
}

/// `F^r`, `P^r_det` and `S^r` for `n = 1..=len`.
pub fn series_under_restart(
    proto: &Protocol,
    sched: &RestartSchedule,
    cfg: &LatticeConfig,
    len: usize,
) -> Result<DetectionSeries> {
    if len == 0 {
        return Err(Error::InputDomain("series length must be >= 1".into()));
    }
    Ok(RestartKernel::new(proto, sched, cfg)?.series(len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lattice() -> LatticeConfig {
        LatticeConfig::default()
    }

    fn resolved(law: StepLaw, delta_offset: u64) -> ResolvedProtocol {
        ResolvedProtocol { law, delta_offset }
    }

    #[test]
    fn rc_rounding() {
        assert_eq!(rc_default(10, 2, 0.6).unwrap(), 25);
        assert_eq!(round_half_up(5.873), 6);
        assert_eq!(round_half_up(5.173), 5);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(rc_default(1, 10, 1.0).unwrap(), 1);
        assert!(matches!(rc_default(10, 2, 0.5), Err(Error::Parameter(_))));
        assert!(matches!(rc_default(10, 0, 0.9), Err(Error::Parameter(_))));
    }

    #[test]
    fn protocol_validation() {
        assert!(Protocol::Mpr { p: 1.2 }.validate().is_err());
        let auto = |p_initial| Protocol::AdaptiveMpr { p_initial, p_final: 0.5, switch: SwitchPoint::Auto };
        assert!(auto(0.5).validate().is_err());
        assert!(auto(0.6).validate().is_ok());
        let zero = Protocol::AdaptiveMpr { p_initial: 0.6, p_final: 0.5, switch: SwitchPoint::Fixed(0) };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn decomposition() {
        let s = RestartSchedule::new(24, 0.25).unwrap();
        assert_eq!(s.decompose(1), (0, 1));
        assert_eq!(s.decompose(24), (0, 24));
        assert_eq!(s.decompose(25), (1, 1));
        assert_eq!(s.delta_offset, 10);
        assert_eq!(RestartSchedule::new(12, 0.25).unwrap().delta_offset, 5);
    }

    #[test]
    fn short_restart_collapses_to_ipr() {
        let sched = RestartSchedule::new(1, 0.25).unwrap();
        assert_eq!(sched.delta_offset, 0);
        let r = ResolvedProtocol::resolve(&Protocol::Mpr { p: 0.3 }, &sched, &lattice()).unwrap();
        assert_eq!(r.law, StepLaw::Fixed);
        let auto = Protocol::AdaptiveMpr { p_initial: 1.0, p_final: 0.5, switch: SwitchPoint::Auto };
        assert_eq!(ResolvedProtocol::resolve(&auto, &sched, &lattice()).unwrap().law, StepLaw::Fixed);
    }

    #[test]
    fn auto_switch_uses_detector_distance() {
        let sched = RestartSchedule::new(7, 0.25).unwrap();
        assert_eq!(sched.delta_offset, 2);
        let auto = Protocol::AdaptiveMpr { p_initial: 0.6, p_final: 0.5, switch: SwitchPoint::Auto };
        let r = ResolvedProtocol::resolve(&auto, &sched, &lattice()).unwrap();
        assert_eq!(r.switch_point(), Some(25));
    }

    #[test]
    fn distribution_examples() {
        let d = jstar_distribution(&resolved(StepLaw::Constant { p: 0.5 }, 3), 0, 2);
        assert_eq!(d.offsets, vec![6, 0, -6]);
        for (w, e) in d.weights.iter().zip([0.25, 0.5, 0.25]) {
            assert!((w - e).abs() < 1e-15);
        }
        let law = StepLaw::TwoPhase { p_initial: 1.0, p_final: 0.5, switch: 1 };
        let d = jstar_distribution(&resolved(law, 3), 0, 2);
        for (w, e) in d.weights.iter().zip([0.5, 0.5, 0.0]) {
            assert!((w - e).abs() < 1e-15);
        }
        let d = jstar_distribution(&resolved(StepLaw::Fixed, 0), 4, 7);
        assert_eq!((d.offsets, d.weights), (vec![4], vec![1.0]));
    }

    #[test]
    fn moment_examples() {
        let p = resolved(StepLaw::Constant { p: 0.6 }, 5);
        let m = jstar_moments(&jstar_distribution(&p, 0, 4), 0);
        assert!((m.mean - 4.0).abs() < 1e-12 && (m.variance - 96.0).abs() < 1e-11);
        let m = analytic_moments(&p, 4);
        assert!((m.mean - 4.0).abs() < 1e-12 && (m.variance - 96.0).abs() < 1e-12);
        let law = StepLaw::TwoPhase { p_initial: 0.6, p_final: 0.5, switch: 25 };
        for extra in [1, 10, 100] {
            let m = jstar_moments(&jstar_distribution(&resolved(law, 2), 0, 25 + extra), 0);
            assert!((m.mean - 25.0 * 2.0 * 0.2).abs() < 1e-10);
        }
    }

    #[test]
    fn no_reset_window_is_free_series() {
        let cfg = lattice();
        let sched = RestartSchedule::new(24, 0.25).unwrap();
        let free = crate::detection::detection_amplitudes(cfg.x0, &cfg, 24).unwrap();
        let free = crate::detection::detection_series(&free);
        for proto in [Protocol::Ipr, Protocol::Mpr { p: 0.3 }] {
            let k = RestartKernel::new(&proto, &sched, &cfg).unwrap();
            for n in 1..=24 {
                let v = k.first_detection(n).unwrap();
                assert!((v - free.f[n - 1]).abs() <= 1e-15 * free.f[n - 1].max(1e-300));
            }
        }
    }

    #[test]
    fn ipr_single_measurement_window_is_geometric() {
        let cfg = LatticeConfig { delta: 2, ..lattice() };
        let sched = RestartSchedule::new(1, 0.25).unwrap();
        let k = RestartKernel::new(&Protocol::Ipr, &sched, &cfg).unwrap();
        let f1 = k.first_detection(1).unwrap();
        for n in [2, 5, 40] {
            let expect = (1.0 - f1).powi(n as i32 - 1) * f1;
            assert!((k.first_detection(n).unwrap() - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn deterministic_hops_follow_the_drifting_site() {
        let cfg = lattice();
        let sched = RestartSchedule::new(12, 0.25).unwrap();
        let k = RestartKernel::new(&Protocol::Mpr { p: 1.0 }, &sched, &cfg).unwrap();
        let mut survival = 1.0;
        let mut expect = Vec::new();
        for i in 0..4 {
            let row = k.cache().row(cfg.distance(5 * i)).unwrap();
            expect.extend(row.f.iter().map(|v| survival * v));
            survival *= 1.0 - row.total;
        }
        for (a, b) in k.series(48).f.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-14 * b.max(1e-300));
        }
    }

    #[test]
    fn pruned_window_matches_full_average() {
        let cfg = lattice();
        for (r, proto) in [
            (12, Protocol::Mpr { p: 0.5 }),
            (7, Protocol::Mpr { p: 0.6 }),
            (24, Protocol::AdaptiveMpr { p_initial: 0.6, p_final: 0.5, switch: SwitchPoint::Fixed(3) }),
        ] {
            let k = RestartKernel::new(&proto, &RestartSchedule::new(r, 0.25).unwrap(), &cfg).unwrap();
            let mut lf = LogFactorials::new();
            for resets in [0, 1, 5, 30, 120] {
                let w = k.window(resets, &mut lf);
                for n in 1..=r {
                    let full = k.averaged_first_detection(resets, n).unwrap();
                    assert!((w[n - 1] - full).abs() < 1e-15, "r={r} R={resets} n={n}");
                }
            }
        }
    }

    #[test]
    fn series_invariants() {
        let cfg = lattice();
        let sched = RestartSchedule::new(24, 0.25).unwrap();
        for proto in [
            Protocol::Ipr,
            Protocol::Mpr { p: 0.5 },
            Protocol::AdaptiveMpr { p_initial: 1.0, p_final: 0.5, switch: SwitchPoint::Auto },
        ] {
            let s = series_under_restart(&proto, &sched, &cfg, 3000).unwrap();
            assert!(s.f.iter().all(|&v| v >= 0.0));
            assert!(s.s.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.p_det.iter().all(|&p| p <= 1.0 + 1e-12));
        }
    }

    proptest! {
        #[test]
        fn weights_form_probability_vector(
            p in 0.0f64..=1.0, q in 0.0f64..=1.0, rc in 1usize..40, resets in 0usize..300, delta in 1u64..10,
        ) {
            for law in [StepLaw::Constant { p }, StepLaw::TwoPhase { p_initial: p, p_final: q, switch: rc }] {
                let d = jstar_distribution(&resolved(law, delta), 0, resets);
                prop_assert!(d.weights.iter().all(|&w| w >= 0.0));
                prop_assert!((d.total_weight() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn binomial_matches_direct_product(p in 0.01f64..0.99, resets in 0usize..60) {
            let d = jstar_distribution(&resolved(StepLaw::Constant { p }, 1), 0, resets);
            for (l, w) in d.weights.iter().enumerate() {
                let mut c = 1.0f64;
                for i in 0..l {
                    c = c * (resets - i) as f64 / (i + 1) as f64;
                }
                let direct = c * p.powi((resets - l) as i32) * (1.0 - p).powi(l as i32);
                prop_assert!((w - direct).abs() <= 1e-12 * direct.max(1e-300));
            }
        }

        #[test]
        fn equal_phases_reduce_to_mpr(p in 0.0f64..=1.0, rc in 1usize..30, resets in 0usize..120) {
            let a = jstar_distribution(&resolved(StepLaw::TwoPhase { p_initial: p, p_final: p, switch: rc }, 3), 0, resets);
            let b = jstar_distribution(&resolved(StepLaw::Constant { p }, 3), 0, resets);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-13);
            }
        }

        #[test]
        fn mpr_moments_are_exact(tenths in 0u32..=10, resets in 0usize..=200, delta in 1u64..=10) {
            let p = tenths as f64 / 10.0;
            let proto = resolved(StepLaw::Constant { p }, delta);
            let m = jstar_moments(&jstar_distribution(&proto, 0, resets), 0);
            let a = analytic_moments(&proto, resets);
            let d = delta as f64;
            let r = resets as f64;
            prop_assert!((a.mean - r * d * (2.0 * p - 1.0)).abs() < 1e-9);
            prop_assert!((a.variance - 4.0 * r * d * d * p * (1.0 - p)).abs() < 1e-9);
            prop_assert!((m.mean - a.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
            prop_assert!((m.variance - a.variance).abs() <= 1e-9 * (1.0 + a.variance));
        }
    }
}
