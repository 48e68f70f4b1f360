//! Generic samplers and chain diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic RNG for `(seed, stream)`.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Retry bound for rejection loops.
pub const MAX_REJECTIONS: u64 = 1_000_000;

/// Log-density with first and second derivatives at a point.
pub type LogDensity<'a> = dyn Fn(f64) -> (f64, f64, f64) + 'a;

/// Solves `d(x) = 0` for a decreasing `d` on `(lo, inf)`, starting near `x0`.
///
/// Returns `None` when `d(lo+) <= 0`, i.e. the root sits at the boundary.
fn decreasing_root(d: &dyn Fn(f64) -> (f64, f64), lo: f64, x0: f64) -> Option<f64> {
    let mut a: f64;
    let mut b: f64;
    let mut x = x0;
    let step0 = (x0.abs() + 1.0) * 0.5;
    // bracket
    let (dx, _) = d(x);
    if dx > 0.0 {
        a = x;
        let mut step = step0;
        loop {
            let y = x + step;
            let (dy, _) = d(y);
            if !dy.is_finite() || dy <= 0.0 {
                b = y;
                break;
            }
            a = y;
            step *= 2.0;
            if step > 1e300 {
                return Some(a);
            }
        }
    } else {
        b = x;
        let mut step = step0;
        loop {
            let y = if lo.is_finite() {
                let cand = x - step;
                if cand <= lo {
                    lo + (x - lo) * 0.5
                } else {
                    cand
                }
            } else {
                x - step
            };
            let (dy, _) = d(y);
            if dy.is_finite() && dy > 0.0 {
                a = y;
                break;
            }
            b = y;
            x = y;
            step *= 2.0;
            if lo.is_finite() && (y - lo) <= 1e-300_f64.max(1e-15 * lo.abs()) {
                return None;
            }
            if step > 1e300 {
                return None;
            }
        }
    }
    // safeguarded Newton
    x = 0.5 * (a + b);
    for _ in 0..200 {
        let (dx, ddx) = d(x);
        if dx == 0.0 {
            return Some(x);
        }
        if dx > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - dx / ddx;
        x = if ddx < 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (b - a) <= 1e-14 * (1.0 + x.abs()) {
            break;
        }
    }
    Some(x)
}

/// Ratio-of-uniforms sampler for a log-concave density on `(lo, inf)`.
///
/// The density is relocated to its mode, which makes the enclosing box
/// tight for log-concave targets.
pub struct RouSampler<'a> {
    logf: &'a LogDensity<'a>,
    lo: f64,
    mode: f64,
    log_f_mode: f64,
    w_minus: f64,
    w_plus: f64,
}

impl<'a> RouSampler<'a> {
    /// `guess` should lie inside the support.
    pub fn new(logf: &'a LogDensity<'a>, lo: f64, guess: f64) -> Result<Self> {
        let d = |x: f64| {
            let (_, g, h) = logf(x);
            (g, h)
        };
        let mode = decreasing_root(&d, lo, guess).unwrap_or(lo);
        let (log_f_mode, _, _) = logf(mode);
        if !log_f_mode.is_finite() {
            return Err(Error::Domain(format!(
                "log-density not finite at mode {mode}"
            )));
        }
        // maximize ln|x - m| + (L(x) - L(m)) / 2 on each side
        let right = |x: f64| {
            let (_, g, h) = logf(x);
            let r = x - mode;
            (1.0 / r + 0.5 * g, -1.0 / (r * r) + 0.5 * h)
        };
        let scale = {
            let (_, _, h) = logf(mode);
            if h < 0.0 {
                1.0 / (-h).sqrt()
            } else {
                1.0 + mode.abs()
            }
        };
        let xr = decreasing_root(&right, mode, mode + scale).unwrap_or(mode + scale);
        let w_plus = (xr - mode) * (0.5 * (logf(xr).0 - log_f_mode)).exp();
        let w_minus = if mode > lo {
            // in the distance r = mode - x, so the search cannot cross the mode
            let span = mode - lo;
            let left = |r: f64| {
                if r >= span {
                    return (f64::NEG_INFINITY, -1.0);
                }
                let (_, g, h) = logf(mode - r);
                (1.0 / r - 0.5 * g, -1.0 / (r * r) + 0.5 * h)
            };
            match decreasing_root(&left, 0.0, scale.min(0.5 * span)) {
                Some(rl) if rl > 0.0 && rl < span => {
                    -rl * (0.5 * (logf(mode - rl).0 - log_f_mode)).exp()
                }
                _ => {
                    let lf = logf(lo).0;
                    if lf.is_finite() {
                        -(mode - lo) * (0.5 * (lf - log_f_mode)).exp()
                    } else {
                        0.0
                    }
                }
            }
        } else {
            0.0
        };
        let pad = 1.0 + 1e-9;
        Ok(RouSampler {
            logf,
            lo,
            mode,
            log_f_mode,
            w_minus: w_minus * pad,
            w_plus: w_plus * pad,
        })
    }

    pub fn mode(&self) -> f64 {
        self.mode
    }

    /// Area of the enclosing box relative to `2 ∫ f / f(mode)`; the acceptance
    /// rate is its reciprocal.
    pub fn box_width(&self) -> f64 {
        self.w_plus - self.w_minus
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        for _ in 0..MAX_REJECTIONS {
            let v: f64 = 1.0 - rng.random::<f64>();
            let w = self.w_minus + (self.w_plus - self.w_minus) * rng.random::<f64>();
            let x = self.mode + w / v;
            if x <= self.lo || !x.is_finite() {
                continue;
            }
            let (lf, _, _) = (self.logf)(x);
            if 2.0 * v.ln() <= lf - self.log_f_mode {
                return Ok(x);
            }
        }
        Err(Error::RejectionLimit(MAX_REJECTIONS))
    }
}

/// One stepping-out and shrinkage slice update.
pub fn slice_step<R: Rng + ?Sized>(
    x0: f64,
    logf: &dyn Fn(f64) -> f64,
    width: f64,
    rng: &mut R,
) -> f64 {
    let l0 = logf(x0);
    let level = l0 + (1.0 - rng.random::<f64>()).ln();
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let mut steps = 0;
    while logf(left) > level && steps < 100 {
        left -= width;
        steps += 1;
    }
    steps = 0;
    while logf(right) > level && steps < 100 {
        right += width;
        steps += 1;
    }
    loop {
        let x = left + (right - left) * rng.random::<f64>();
        if logf(x) > level {
            return x;
        }
        if x < x0 {
            left = x;
        } else {
            right = x;
        }
        if right - left < 1e-15 * (1.0 + x0.abs()) {
            return x0;
        }
    }
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n || n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag)
        .map(|i| (values[i] - mean) * (values[i + lag] - mean))
        .sum();
    cov / var
}

/// Effective sample size with Geyer's initial positive sequence.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return n as f64;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag)
            .map(|i| (values[i] - mean) * (values[i + lag] - mean))
            .sum::<f64>()
            / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = rho(2 * m) + rho(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        m += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}

/// Chain diagnostics reported with posterior draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub ess: f64,
    pub lag1_autocorrelation: f64,
    pub thin: usize,
    pub chains: usize,
    /// Fraction of accepted proposals, for Metropolis steps.
    pub acceptance_rate: Option<f64>,
    /// `false` when the effective sample size is below a tenth of the draws.
    pub converged: bool,
}
