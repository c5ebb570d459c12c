//! Log-domain arithmetic shared by the exact solvers.

/// `ln(exp(a) + exp(b))` without overflow. Either argument may be `-inf`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(v)))` over a slice, shifted by the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Running signed sum of terms given as (sign, ln|term|).
///
/// Positive and negative parts are accumulated separately so the final
/// cancellation happens exactly once.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogSum {
    pos: f64,
    neg: f64,
}

impl Default for SignedLogSum {
    fn default() -> Self {
        Self {
            pos: f64::NEG_INFINITY,
            neg: f64::NEG_INFINITY,
        }
    }
}

impl SignedLogSum {
    pub fn add(&mut self, positive: bool, log_abs: f64) {
        if positive {
            self.pos = log_add(self.pos, log_abs);
        } else {
            self.neg = log_add(self.neg, log_abs);
        }
    }

    pub fn log_positive(&self) -> f64 {
        self.pos
    }

    pub fn log_negative(&self) -> f64 {
        self.neg
    }

    /// Returns `(sign, ln|sum|, relative_cancellation)` where the last value is
    /// `|sum| / max(pos, neg)`, i.e. how much of the magnitude survived.
    pub fn resolve(&self) -> (f64, f64, f64) {
        let (hi, lo, sign) = if self.pos >= self.neg {
            (self.pos, self.neg, 1.0)
        } else {
            (self.neg, self.pos, -1.0)
        };
        if hi == f64::NEG_INFINITY {
            return (0.0, f64::NEG_INFINITY, 0.0);
        }
        // |sum| = exp(hi) * (1 - exp(lo - hi))
        let frac = -(lo - hi).exp_m1();
        if frac <= 0.0 {
            return (0.0, f64::NEG_INFINITY, 0.0);
        }
        (sign, hi + frac.ln(), frac)
    }
}

/// Table of `ln(k!)` for `k = 0..=n`.
pub fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// `ln C(n, k)` from a log-factorial table.
#[inline]
pub fn log_binomial(lf: &[f64], n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    lf[n] - lf[k] - lf[n - k]
}

/// Binomial coefficient as `u128`, saturating on overflow.
pub fn binomial_u128(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}
