//! Independent checks for the protocol kernels.
//!
//! [`enumerate_jstar`] walks every signed hop sequence explicitly, and
//! [`mc_first_detection`] samples the restart process trajectory by
//! trajectory. The Monte Carlo estimate is the trajectory-exact mean: it
//! averages the product of window survivals along each path, whereas the
//! kernel multiplies distribution-averaged survivals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::AmplitudeCache;
use crate::error::{Error, Result};
use crate::propagation::{jstar_support, LatticeConfig};
use crate::protocols::{JStarDistribution, RestartKernel, ResolvedProtocol};

/// Largest hop count enumerated exhaustively.
pub const ENUMERATION_LIMIT: usize = 20;
/// Trials per independently seeded block.
pub const MC_BLOCK: usize = 4096;
/// Resets per trial before a trajectory is censored.
pub const DEFAULT_SEGMENT_CAP: usize = 10_000;

fn check_budget(steps: usize) -> Result<()> {
    if steps > ENUMERATION_LIMIT {
        return Err(Error::Budget(format!(
            "{steps} hops need 2^{steps} sequences; limit is {ENUMERATION_LIMIT}, use Monte Carlo instead"
        )));
    }
    Ok(())
}

/// Right-hop probability of each of the first `resets` resets.
pub fn step_probabilities(proto: &ResolvedProtocol, resets: usize) -> Vec<f64> {
    (1..=resets).map(|k| proto.step_probability(k).unwrap_or(1.0)).collect()
}

/// Exact endpoint distribution of `x0 + Σ ±Δ` with independent per-step right probabilities.
pub fn enumerate_jstar(step_probs: &[f64], delta_offset: u64, x0: i64) -> Result<JStarDistribution> {
    let steps = step_probs.len();
    check_budget(steps)?;
    let offsets = jstar_support(steps, delta_offset, x0);
    let mut weights = vec![0.0; offsets.len()];
    for (mask, w) in sequences(step_probs) {
        let idx = if delta_offset == 0 { 0 } else { mask.count_ones() as usize };
        weights[idx] += w;
    }
    Ok(JStarDistribution { resets: steps, offsets, weights })
}

/// `(mask, weight)` for every hop sequence; bit `k` set means reset `k+1` hopped left.
fn sequences(step_probs: &[f64]) -> impl Iterator<Item = (u32, f64)> + '_ {
    (0u32..(1u32 << step_probs.len())).map(move |mask| {
        let w = step_probs
            .iter()
            .enumerate()
            .map(|(k, &p)| if mask >> k & 1 == 1 { 1.0 - p } else { p })
            .product();
        (mask, w)
    })
}

/// `Σ_sequences weight · |φ_ñ^{site}|²`, summed path by path.
pub fn enumerate_averaged_first_detection(
    step_probs: &[f64],
    delta_offset: u64,
    cfg: &LatticeConfig,
    cache: &AmplitudeCache,
    n_window: usize,
) -> Result<f64> {
    let steps = step_probs.len();
    check_budget(steps)?;
    if n_window == 0 || n_window > cache.len() {
        return Err(Error::InputDomain(format!("window index {n_window} outside 1..={}", cache.len())));
    }
    let step = delta_offset as i64;
    let mut acc = 0.0;
    for (mask, w) in sequences(step_probs) {
        let lefts = mask.count_ones() as i64;
        let site = cfg.x0 + (steps as i64 - 2 * lefts) * step;
        if let Some(row) = cache.row(cfg.distance(site)) {
            acc += w * row.f[n_window - 1];
        }
    }
    Ok(acc)
}

/// Monte Carlo mean first-detection time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub detected: usize,
    /// Trajectories still undetected after the segment cap.
    pub censored: usize,
}

#[derive(Clone, Copy, Default)]
struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
    censored: usize,
}

impl Accumulator {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Accumulator) -> Accumulator {
        if other.count == 0 {
            return Accumulator { censored: self.censored + other.censored, ..self };
        }
        if self.count == 0 {
            return Accumulator { censored: self.censored + other.censored, ..other };
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        Accumulator {
            count: n,
            mean: self.mean + d * other.count as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.count * other.count) as f64 / n as f64,
            censored: self.censored + other.censored,
        }
    }
}

/// Sample first-detection times of the physical restart process.
///
/// Each trajectory starts at `x0`; within a segment the click time is drawn
/// from the exact first-detection law of the current site, and after an
/// empty segment the reset site hops `±Δ` (or returns to `x0` under IPR).
/// Blocks of [`MC_BLOCK`] trials use independent ChaCha streams keyed by
/// block index, so the result does not depend on the thread count.
pub fn mc_first_detection(kernel: &RestartKernel, trials: usize, seed: u64, segment_cap: usize) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be >= 1".into()));
    }
    if segment_cap == 0 {
        return Err(Error::Parameter("segment cap must be >= 1".into()));
    }
    let blocks = trials.div_ceil(MC_BLOCK);
    let partial: Vec<Accumulator> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let n = MC_BLOCK.min(trials - b * MC_BLOCK);
            let mut acc = Accumulator::default();
            for _ in 0..n {
                match sample_trajectory(kernel, &mut rng, segment_cap) {
                    Some(t) => acc.push(t),
                    None => acc.censored += 1,
                }
            }
            acc
        })
        .collect();
    let total = partial.into_iter().fold(Accumulator::default(), Accumulator::merge);
    if total.count == 0 {
        return Err(Error::Divergent(format!(
            "no trajectory was detected within {segment_cap} resets"
        )));
    }
    let var = if total.count > 1 { total.m2 / (total.count - 1) as f64 } else { 0.0 };
    Ok(McEstimate {
        mean: total.mean,
        std_error: (var / total.count as f64).sqrt(),
        trials,
        detected: total.count,
        censored: total.censored,
    })
}

fn sample_trajectory(kernel: &RestartKernel, rng: &mut ChaCha8Rng, segment_cap: usize) -> Option<f64> {
    let cfg = kernel.lattice();
    let r = kernel.schedule().r;
    let proto = kernel.protocol();
    let step = proto.delta_offset as i64;
    let mut site = cfg.x0;
    for segment in 0..segment_cap {
        if let Some(row) = kernel.cache().row(cfg.distance(site)) {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for (i, f) in row.f.iter().enumerate() {
                cum += f;
                if u < cum {
                    return Some(cfg.tau * (segment * r + i + 1) as f64);
                }
            }
        }
        if let Some(p) = proto.step_probability(segment + 1) {
            let right = rng.random::<f64>() < p;
            site += if right { step } else { -step };
        }
    }
    None
}
