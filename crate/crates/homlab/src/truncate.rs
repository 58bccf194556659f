//! Scalar cutoff functions and their algebraic identities.
//!
//! These are the building blocks used to split a nonnegative field into its
//! bounded part `t_cut` and its excess `g_cut`, to window a band of values
//! (`s_window`) and to detect the near-zero set (`z_delta`). Everything here
//! is pure and reentrant.

use crate::error::HomlabError;

/// Truncation height `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutLevel(f64);

impl CutLevel {
    pub fn new(k: f64) -> Result<Self, HomlabError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(HomlabError::invalid(format!(
                "cut level must be a finite positive real, got {k}"
            )));
        }
        Ok(CutLevel(k))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// Pair of levels `n > k > 0` delimiting the window `[k, n]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLevels {
    k: f64,
    n: f64,
}

impl WindowLevels {
    pub fn new(k: f64, n: f64) -> Result<Self, HomlabError> {
        if !(k > 0.0) || !k.is_finite() || !n.is_finite() || !(n > k) {
            return Err(HomlabError::invalid(format!(
                "window levels must satisfy n > k > 0, got k={k}, n={n}"
            )));
        }
        Ok(WindowLevels { k, n })
    }

    #[inline]
    pub fn k(self) -> f64 {
        self.k
    }

    #[inline]
    pub fn n(self) -> f64 {
        self.n
    }
}

/// Clamp `s` into `[-k, k]`.
#[inline]
pub fn t_cut(s: f64, k: CutLevel) -> f64 {
    assert!(s.is_finite(), "t_cut: non-finite input {s}");
    s.clamp(-k.0, k.0)
}

/// Excess of `s` over the band `[-k, k]`: `s - t_cut(s, k)` with the exact
/// zero branch inside the band.
///
/// The recombination `t_cut + g_cut` reproduces `s` bit-exactly except when
/// `s - k` lands on an exact half-ulp rounding tie and `s` has an odd
/// mantissa; round-to-even then reaches only the even neighbor, one ulp off,
/// for every representable complement. Checks of the split therefore allow
/// one ulp outside the band.
#[inline]
pub fn g_cut(s: f64, k: CutLevel) -> f64 {
    assert!(s.is_finite(), "g_cut: non-finite input {s}");
    if s > k.0 {
        s - k.0
    } else if s < -k.0 {
        s + k.0
    } else {
        0.0
    }
}

/// Plateau-ramp cutoff: 1 on `[0, delta]`, affine down to 0 on `[delta, 2*delta]`.
#[inline]
pub fn z_delta(s: f64, delta: f64) -> f64 {
    assert!(delta > 0.0 && delta.is_finite(), "z_delta: bad delta {delta}");
    assert!(s.is_finite() && s >= 0.0, "z_delta: input must be >= 0, got {s}");
    if s <= delta {
        1.0
    } else if s >= 2.0 * delta {
        0.0
    } else {
        -s / delta + 2.0
    }
}

/// Window map: 0 below `k`, `s - k` on `[k, n]`, saturates at `n - k` above.
#[inline]
pub fn s_window(s: f64, levels: WindowLevels) -> f64 {
    assert!(s.is_finite() && s >= 0.0, "s_window: input must be >= 0, got {s}");
    if s <= levels.k {
        0.0
    } else if s >= levels.n {
        levels.n - levels.k
    } else {
        s - levels.k
    }
}
