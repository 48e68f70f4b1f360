//! Special functions in log space.
//!
//! Rising factorials, digamma and trigamma, the Hermite function `h_ν(t)` for
//! negative order, and triangular tables of (noncentral) generalized factorial
//! coefficients and Stirling numbers of the first kind.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A real number stored as `sign · exp(log_magnitude)`.
///
/// Zero is `sign == 0` with `log_magnitude == -inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub log_magnitude: f64,
    pub sign: i8,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue {
        log_magnitude: f64::NEG_INFINITY,
        sign: 0,
    };
    pub const ONE: LogValue = LogValue {
        log_magnitude: 0.0,
        sign: 1,
    };

    /// Positive value with the given logarithm.
    pub fn from_ln(ln: f64) -> Self {
        if ln == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            LogValue {
                log_magnitude: ln,
                sign: 1,
            }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogValue {
                log_magnitude: x.abs().ln(),
                sign: if x > 0.0 { 1 } else { -1 },
            }
        }
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_magnitude.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    /// Natural log of a positive value; `None` for zero or negative values.
    pub fn ln(self) -> Option<f64> {
        (self.sign > 0).then_some(self.log_magnitude)
    }

    /// Multiply by a plain real factor.
    pub fn scale(self, x: f64) -> LogValue {
        self * LogValue::from_f64(x)
    }
}

impl std::ops::Mul for LogValue {
    type Output = LogValue;

    fn mul(self, other: LogValue) -> LogValue {
        if self.sign == 0 || other.sign == 0 {
            return Self::ZERO;
        }
        LogValue {
            log_magnitude: self.log_magnitude + other.log_magnitude,
            sign: self.sign * other.sign,
        }
    }
}

impl std::ops::Add for LogValue {
    type Output = LogValue;

    fn add(self, other: LogValue) -> LogValue {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (big, small) = if self.log_magnitude >= other.log_magnitude {
            (self, other)
        } else {
            (other, self)
        };
        let d = (small.log_magnitude - big.log_magnitude).exp();
        if big.sign == small.sign {
            LogValue {
                log_magnitude: big.log_magnitude + d.ln_1p(),
                sign: big.sign,
            }
        } else if d == 1.0 {
            Self::ZERO
        } else {
            LogValue {
                log_magnitude: big.log_magnitude + (-d).ln_1p(),
                sign: big.sign,
            }
        }
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Unchecked `ln (a)_n` for `a > 0`.
pub(crate) fn ln_rising(a: f64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if n <= 32 {
        let mut s = 0.0;
        for i in 0..n {
            s += (a + i as f64).ln();
        }
        s
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// Logarithm of the rising factorial `(a)_n = a (a+1) ... (a+n-1)`.
///
/// ```
/// let v = sigmadiv::specfun::log_rising(1.0, 5).unwrap();
/// assert!((v - 120f64.ln()).abs() < 1e-12);
/// ```
pub fn log_rising(a: f64, n: u64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return domain(format!("log_rising needs a > 0, got {a}"));
    }
    Ok(ln_rising(a, n))
}

/// `ln (a)_n` allowing `a = 0`, where `(0)_n = 0` for `n >= 1`.
pub(crate) fn ln_rising0(a: f64, n: u64) -> f64 {
    if n == 0 {
        0.0
    } else if a == 0.0 {
        f64::NEG_INFINITY
    } else {
        ln_rising(a, n)
    }
}

/// Unchecked digamma for `x > 0`.
pub(crate) fn psi(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = r
        * (1.0 / 12.0
            - r * (1.0 / 120.0
                - r * (1.0 / 252.0
                    - r * (1.0 / 240.0 - r * (1.0 / 132.0 - r * (691.0 / 32760.0 - r / 12.0))))));
    acc + x.ln() - 0.5 / x - series
}

/// Unchecked trigamma for `x > 0`.
pub(crate) fn psi1(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / (x * x);
    let series = 1.0 / x
        + 0.5 * r
        + r / x
            * (1.0 / 6.0
                - r * (1.0 / 30.0
                    - r * (1.0 / 42.0 - r * (1.0 / 30.0 - r * (5.0 / 66.0 - r * 691.0 / 2730.0)))));
    acc + series
}

/// Digamma function `ψ(x) = d/dx ln Γ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("digamma needs x > 0, got {x}"));
    }
    Ok(psi(x))
}

/// Trigamma function `ψ'(x)` for `x > 0`.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return domain(format!("trigamma needs x > 0, got {x}"));
    }
    Ok(psi1(x))
}

/// `ln C(n, k)`.
pub fn log_binomial(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return domain(format!("log_binomial needs k <= n, got n={n}, k={k}"));
    }
    if k == 0 || k == n {
        return Ok(0.0);
    }
    let (n, k) = (n as f64, k as f64);
    Ok(ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0))
}

/// Log-space trapezoid integral of `exp(g(x))` where `g` is concave with its
/// maximum at `x0` and curvature `curv = -g''(x0) > 0`.
///
/// `g` must return values relative to `g(x0)`, so that `g(x0) = 0`. Returns
/// the log of the integral.
pub(crate) fn log_integrate_concave(g: impl Fn(f64) -> f64, x0: f64, curv: f64, drop: f64) -> f64 {
    let scale = 1.0 / curv.max(1e-300).sqrt();
    let find_edge = |dir: f64| -> f64 {
        let mut step = scale;
        let mut inner = x0;
        let mut outer = x0 + dir * step;
        let mut guard = 0;
        while g(outer) > -drop {
            inner = outer;
            step *= 2.0;
            outer = x0 + dir * step;
            guard += 1;
            if guard > 200 {
                break;
            }
        }
        for _ in 0..100 {
            let mid = 0.5 * (inner + outer);
            if g(mid) > -drop {
                inner = mid;
            } else {
                outer = mid;
            }
            if (outer - inner).abs() <= 1e-12 * (1.0 + x0.abs()) {
                break;
            }
        }
        outer
    };
    let lo = find_edge(-1.0);
    let hi = find_edge(1.0);
    let h_target = (scale / 8.0).min(0.1);
    let nodes = (((hi - lo) / h_target).ceil() as usize).clamp(512, 400_000);
    let h = (hi - lo) / nodes as f64;
    let mut sum = 0.0;
    for i in 0..=nodes {
        let w = if i == 0 || i == nodes { 0.5 } else { 1.0 };
        sum += w * g(lo + i as f64 * h).exp();
    }
    sum.ln() + h.ln()
}

/// Logarithm of the Hermite function of negative order,
/// `h_ν(t) = Γ(-ν)^{-1} ∫_0^∞ exp(-u²/2 - t u) u^{-ν-1} du`, for `ν < 0` and `t > 0`.
///
/// `ν = 0` returns `0` (`h_0 = 1`).
///
/// ```
/// // h_{-1}(t) is the Mills ratio Φ(-t)/φ(t).
/// let h = sigmadiv::specfun::log_hermite(-1.0, 1.3).unwrap().exp();
/// assert!((h - 0.564867128969616).abs() < 1e-10);
/// ```
pub fn log_hermite(nu: f64, t: f64) -> Result<f64> {
    if !nu.is_finite() || nu > 0.0 {
        return domain(format!("log_hermite needs order nu <= 0, got {nu}"));
    }
    if !(t > 0.0) || !t.is_finite() {
        return domain(format!("log_hermite needs t > 0, got {t}"));
    }
    if nu == 0.0 {
        return Ok(0.0);
    }
    let q = -nu;
    // integrate over x = ln u, where q x - e^{2x}/2 - t e^x is concave
    let e0 = 2.0 * q / (t + (t * t + 4.0 * q).sqrt());
    let x0 = e0.ln();
    let e0sq = e0 * e0;
    let g = |x: f64| {
        let d = x - x0;
        q * d - 0.5 * e0sq * (2.0 * d).exp_m1() - t * e0 * d.exp_m1()
    };
    let gmax = q * x0 - 0.5 * e0sq - t * e0;
    let curv = 2.0 * e0sq + t * e0;
    let log_int = log_integrate_concave(g, x0, curv, 50.0);
    Ok(gmax + log_int - ln_gamma(q))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln h_{-q}(t)` for `q = 0..=q_max`.
///
/// Two quadratures at the deepest orders seed the three-term recursion
/// `h_{-(q-1)} = t h_{-q} + q h_{-q-1}`, which only adds positive terms.
#[derive(Debug, Clone)]
pub struct HermiteLadder {
    t: f64,
    logs: Vec<f64>,
}

impl HermiteLadder {
    pub fn new(t: f64, q_max: u64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return domain(format!("HermiteLadder needs t > 0, got {t}"));
        }
        let top = q_max as usize + 1;
        let mut logs = vec![0.0; top + 1];
        logs[top] = log_hermite(-(top as f64), t)?;
        logs[top - 1] = log_hermite(-((top - 1) as f64), t)?;
        let lt = t.ln();
        for q in (1..top).rev() {
            logs[q - 1] = log_add(lt + logs[q], (q as f64).ln() + logs[q + 1]);
        }
        logs.truncate(top);
        Ok(HermiteLadder { t, logs })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn q_max(&self) -> u64 {
        self.logs.len() as u64 - 1
    }

    /// `ln h_{-q}(t)`.
    pub fn log_h(&self, q: u64) -> f64 {
        self.logs[q as usize]
    }
}

/// Which coefficient family a [`CoefficientTable`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoefficientKind {
    /// Generalized factorial coefficients `C(n,k;σ)`, stored scaled as `C/σ^k`.
    GenFactorial { sigma: f64 },
    /// Unsigned Stirling numbers of the first kind `|s(n,k)|`.
    Stirling1,
    /// Noncentral coefficients `C(m,j;σ,shift)`, stored scaled as `C/σ^j`.
    NoncentralGenFactorial { sigma: f64, shift: f64 },
    /// Noncentral unsigned Stirling numbers `|s(m,j;r)|`.
    NoncentralStirling1 { shift: f64 },
}

impl CoefficientKind {
    fn is_central(self) -> bool {
        matches!(
            self,
            CoefficientKind::GenFactorial { .. } | CoefficientKind::Stirling1
        )
    }

    #[allow(clippy::collapsible_match)]
    fn validate(self) -> Result<()> {
        match self {
            CoefficientKind::GenFactorial { sigma }
            | CoefficientKind::NoncentralGenFactorial { sigma, .. } => {
                if !(sigma < 1.0) || sigma == 0.0 || !sigma.is_finite() {
                    return domain(format!(
                        "generalized factorial coefficients need sigma < 1, sigma != 0, got {sigma}"
                    ));
                }
            }
            _ => {}
        }
        match self {
            CoefficientKind::NoncentralGenFactorial { shift, .. }
            | CoefficientKind::NoncentralStirling1 { shift } => {
                if !shift.is_finite() {
                    return domain("noncentral shift must be finite");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// `(sigma, s)` such that `T(m+1,j) = (s + m - j σ) T(m,j) + T(m,j-1)`.
    fn recursion(self) -> (f64, f64) {
        match self {
            CoefficientKind::GenFactorial { sigma } => (sigma, 0.0),
            CoefficientKind::Stirling1 => (0.0, 0.0),
            CoefficientKind::NoncentralGenFactorial { sigma, shift } => (sigma, -shift),
            CoefficientKind::NoncentralStirling1 { shift } => (0.0, shift),
        }
    }

    fn key(self) -> (u8, u64, u64) {
        match self {
            CoefficientKind::GenFactorial { sigma } => (0, sigma.to_bits(), 0),
            CoefficientKind::Stirling1 => (1, 0, 0),
            CoefficientKind::NoncentralGenFactorial { sigma, shift } => {
                (2, sigma.to_bits(), shift.to_bits())
            }
            CoefficientKind::NoncentralStirling1 { shift } => (3, 0, shift.to_bits()),
        }
    }
}

/// Largest table dimension accepted by [`CoefficientTable::build`].
pub const MAX_TABLE_N: u64 = 4096;

/// Largest row index accepted by [`coefficient_row`].
pub const MAX_ROW_N: u64 = 200_000;

/// Lower-triangular table of scaled coefficients in log space.
///
/// Central kinds are indexed `1 <= k <= n <= n_max`; noncentral kinds
/// `0 <= j <= m <= n_max`.
#[derive(Debug, Clone)]
pub struct CoefficientTable {
    kind: CoefficientKind,
    n_max: u64,
    rows: Vec<Vec<LogValue>>,
}

fn next_row(prev: &[LogValue], m: u64, sigma: f64, s: f64) -> Vec<LogValue> {
    // prev holds row m at indices 0..=m
    let len = prev.len() + 1;
    let mut row = vec![LogValue::ZERO; len];
    for (j, slot) in row.iter_mut().enumerate() {
        let mut v = LogValue::ZERO;
        if j < prev.len() {
            let f = s + m as f64 - j as f64 * sigma;
            v = prev[j].scale(f);
        }
        if j >= 1 {
            v = v + prev[j - 1];
        }
        *slot = v;
    }
    row
}

impl CoefficientTable {
    pub fn build(kind: CoefficientKind, n_max: u64) -> Result<Self> {
        kind.validate()?;
        if n_max > MAX_TABLE_N {
            return Err(Error::TableSizeExceeded {
                requested: n_max,
                limit: MAX_TABLE_N,
            });
        }
        let (sigma, s) = kind.recursion();
        let mut rows = Vec::with_capacity(n_max as usize + 1);
        rows.push(vec![LogValue::ONE]);
        for m in 0..n_max {
            let r = next_row(&rows[m as usize], m, sigma, s);
            rows.push(r);
        }
        Ok(CoefficientTable { kind, n_max, rows })
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn n_max(&self) -> u64 {
        self.n_max
    }

    /// Scaled coefficient at `(n, k)`; zero outside the triangle.
    pub fn entry(&self, n: u64, k: u64) -> LogValue {
        if n > self.n_max || k > n {
            return LogValue::ZERO;
        }
        if self.kind.is_central() && (n == 0) != (k == 0) {
            return LogValue::ZERO;
        }
        self.rows[n as usize][k as usize]
    }

    /// Unscaled coefficient, multiplying back `σ^k` for generalized kinds.
    pub fn raw(&self, n: u64, k: u64) -> LogValue {
        let e = self.entry(n, k);
        match self.kind {
            CoefficientKind::GenFactorial { sigma }
            | CoefficientKind::NoncentralGenFactorial { sigma, .. } => {
                let mut v = e;
                v.log_magnitude += k as f64 * sigma.abs().ln();
                if sigma < 0.0 && k % 2 == 1 {
                    v.sign = -v.sign;
                }
                v
            }
            _ => e,
        }
    }

    pub fn row(&self, n: u64) -> &[LogValue] {
        &self.rows[n as usize]
    }
}

/// One row of scaled coefficients computed with `O(n)` memory.
///
/// The returned vector is indexed by `k` from `0` to `n`.
pub fn coefficient_row(kind: CoefficientKind, n: u64) -> Result<Vec<LogValue>> {
    kind.validate()?;
    if n > MAX_ROW_N {
        return Err(Error::TableSizeExceeded {
            requested: n,
            limit: MAX_ROW_N,
        });
    }
    let (sigma, s) = kind.recursion();
    let mut row = vec![LogValue::ONE];
    for m in 0..n {
        row = next_row(&row, m, sigma, s);
    }
    if kind.is_central() && n > 0 {
        row[0] = LogValue::ZERO;
    }
    Ok(row)
}

type CacheMap = HashMap<(u8, u64, u64), Arc<CoefficientTable>>;

fn cache() -> &'static RwLock<CacheMap> {
    static CACHE: OnceLock<RwLock<CacheMap>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Shared table covering at least `n_max`, built once per kind.
pub fn cached_table(kind: CoefficientKind, n_max: u64) -> Result<Arc<CoefficientTable>> {
    let key = kind.key();
    if let Some(t) = cache().read().expect("cache poisoned").get(&key) {
        if t.n_max >= n_max {
            return Ok(Arc::clone(t));
        }
    }
    let table = Arc::new(CoefficientTable::build(kind, n_max)?);
    let mut w = cache().write().expect("cache poisoned");
    let entry = w.entry(key).or_insert_with(|| Arc::clone(&table));
    if entry.n_max < n_max {
        *entry = Arc::clone(&table);
    }
    Ok(Arc::clone(entry))
}

/// Noncentral scaled coefficients by the convolution identity
/// `W(m,j) = Σ_l C(m,l) D(l,j) (s)_{m-l}`, with `D` the central scaled
/// coefficients and `s = -shift`.
///
/// Quadratic in `m`; intended for checking.
pub fn noncentral_by_convolution(sigma: f64, shift: f64, m: u64) -> Result<Vec<LogValue>> {
    let central = if sigma == 0.0 {
        CoefficientTable::build(CoefficientKind::Stirling1, m)?
    } else {
        CoefficientTable::build(CoefficientKind::GenFactorial { sigma }, m)?
    };
    let s = -shift;
    let rising = |x: f64, n: u64| -> LogValue {
        let mut v = LogValue::ONE;
        for i in 0..n {
            v = v.scale(x + i as f64);
        }
        v
    };
    let mut out = vec![LogValue::ZERO; m as usize + 1];
    for (j, slot) in out.iter_mut().enumerate() {
        let j = j as u64;
        let mut acc = LogValue::ZERO;
        for l in j..=m {
            let d = if l == 0 {
                LogValue::ONE
            } else {
                central.entry(l, j)
            };
            if d.is_zero() {
                continue;
            }
            let b = LogValue::from_ln(log_binomial(m, l)?);
            acc = acc + b * d * rising(s, m - l);
        }
        *slot = acc;
    }
    Ok(out)
}
