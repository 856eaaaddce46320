//! Integer-order Bessel functions of the first kind.
//!
//! Rows `J_0(x)..J_n(x)` come from Miller's downward recurrence normalized by
//! the sum rule `J_0 + 2 * sum_k J_2k = 1`. Small arguments use the ascending
//! power series directly.

use crate::error::{Error, Result};

/// Arguments at or below this value are evaluated by the ascending series.
const SERIES_MAX_X: f64 = 1.0;

/// Order offset past which `|J_n(x)| < 1e-15` is guaranteed (`n > x + TAIL_ORDER_MARGIN`).
pub const TAIL_ORDER_MARGIN: f64 = 60.0;

const RESCALE_THRESHOLD: f64 = 1e250;
const RESCALE_FACTOR: f64 = 1e-250;

/// `J_0(x)..J_{n_max}(x)` for a single argument.
#[derive(Debug, Clone, PartialEq)]
pub struct BesselRow {
    pub x: f64,
    pub values: Vec<f64>,
}

impl BesselRow {
    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    /// `J_n(x)`, or zero past the end of the row.
    pub fn get(&self, n: usize) -> f64 {
        self.values.get(n).copied().unwrap_or(0.0)
    }
}

fn check_argument(x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::InputDomain(format!("bessel argument must be finite, got {x}")));
    }
    if x < 0.0 {
        return Err(Error::InputDomain(format!("bessel argument must be >= 0, got {x}")));
    }
    Ok(())
}

/// `J_n(x)` for integer order `n >= 0` and real `x >= 0`.
pub fn bessel_j(n: i32, x: f64) -> Result<f64> {
    if n < 0 {
        return Err(Error::InputDomain(format!("bessel order must be >= 0, got {n}")));
    }
    check_argument(x)?;
    let n = n as usize;
    if x <= SERIES_MAX_X {
        return Ok(ascending_series(n, x));
    }
    Ok(miller_row(n, x)[n])
}

/// `J_0(x)..J_{n_max}(x)` in one downward pass.
pub fn bessel_row(n_max: usize, x: f64) -> Result<BesselRow> {
    check_argument(x)?;
    let values = if x <= SERIES_MAX_X {
        (0..=n_max).map(|n| ascending_series(n, x)).collect()
    } else {
        let mut row = miller_row(n_max, x);
        row.truncate(n_max + 1);
        row
    };
    Ok(BesselRow { x, values })
}

/// Sum of `(-1)^k (x/2)^(2k+n) / (k! (k+n)!)` until terms drop below one ulp.
fn ascending_series(n: usize, x: f64) -> f64 {
    if x == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let half = 0.5 * x;
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= half / k as f64;
        if lead == 0.0 {
            return 0.0;
        }
    }
    let q = -half * half;
    let mut term = lead;
    let mut sum = lead;
    for k in 1..200 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() <= f64::EPSILON * 1e-3 * sum.abs() {
            break;
        }
    }
    sum
}

/// Miller recurrence; returns at least `n_max + 1` normalized values.
fn miller_row(n_max: usize, x: f64) -> Vec<f64> {
    let margin = 20f64.max((10.0 * x.cbrt()).ceil());
    let mut start = (n_max as f64).max(x.ceil()) as usize + margin as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-30;
    let two_over_x = 2.0 / x;
    for k in (1..=start).rev() {
        let next = k as f64 * two_over_x * vals[k] - vals[k + 1];
        vals[k - 1] = next;
        if next.abs() > RESCALE_THRESHOLD {
            for v in &mut vals[k - 1..] {
                *v *= RESCALE_FACTOR;
            }
        }
    }
    let mut norm = vals[0];
    for k in (2..=start).step_by(2) {
        norm += 2.0 * vals[k];
    }
    for v in &mut vals {
        *v /= norm;
    }
    vals.truncate(start + 1);
    vals
}

/// Smallest order whose magnitude is guaranteed below 1e-15 for every argument up to `x`.
pub fn negligible_order(x: f64) -> usize {
    (x + TAIL_ORDER_MARGIN).floor() as usize + 1
}
