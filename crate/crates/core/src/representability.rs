//! Counting arguments deciding when a fixed nested network cannot represent
//! a smoothness class.
//!
//! Two tests live here:
//!
//! * the ratio test: nodes of smoothness `k'` taking `n'` inputs cannot
//!   represent every `C^k` function of `n` variables when `k'/n' > k/n`;
//! * the derivative-counting test: a network with `m` univariate nodes on
//!   `n` inputs has at most `N_p = (p+1) m + m (n+m)` free quantities
//!   controlling its order-`p` derivatives at a point, while the number of
//!   order-`p` derivative combinations is at least `C(n,2) p^2 / 2`
//!   (`n >= 3`). Once the latter exceeds the former, some order-`p` local
//!   behaviour is out of reach.
//!
//! The pairwise bound `C(n,2) p^2 / 2` is reported alongside the exact count
//! of distinct order-`p` partials, `C(n+p-1, p)`. For small `p` the bound can
//! exceed the exact count (e.g. `n = 4, p = 3`: 27 vs 20); the verdict uses
//! the bound, and [`CountingReport::bound_exceeds_exact`] flags the regime.
//!
//! All arithmetic is exact `u64` with overflow reported as an error.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Upper end of the scan in [`smoothness_limit`].
pub const SCAN_LIMIT: u64 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountingError {
    #[error("{what} must be at least {min}, got {got}")]
    OutOfDomain {
        what: &'static str,
        min: u64,
        got: u64,
    },
    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),
    #[error("no limiting order found below p = {0}")]
    ScanLimit(u64),
    #[error("invalid smoothness order {0:?}: expected a non-negative integer or \"inf\"")]
    BadSmoothness(String),
}

/// Smoothness order `k` of a function class; `Infinite` stands for
/// analytic (or `C^inf`) functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Smoothness {
    Finite(u64),
    Infinite,
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothness::Finite(k) => write!(f, "{k}"),
            Smoothness::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for Smoothness {
    type Err = CountingError;

    fn from_str(s: &str) -> Result<Self, CountingError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "infinity" | "analytic" => Ok(Smoothness::Infinite),
            other => other
                .parse()
                .map(Smoothness::Finite)
                .map_err(|_| CountingError::BadSmoothness(s.to_string())),
        }
    }
}

impl Serialize for Smoothness {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Smoothness::Finite(k) => s.serialize_u64(*k),
            Smoothness::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Target class `C^k(R^n)` against node class `C^k'(R^n')`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SmoothnessSpec {
    pub k: Smoothness,
    pub n: u64,
    pub k_prime: Smoothness,
    pub n_prime: u64,
}

fn at_least(what: &'static str, got: u64, min: u64) -> Result<(), CountingError> {
    if got < min {
        Err(CountingError::OutOfDomain { what, min, got })
    } else {
        Ok(())
    }
}

/// True iff `k'/n' > k/n`: the node class is too smooth for its arity to
/// represent every target of the class.
///
/// Finite ratios are compared as `k' * n > k * n'`. An infinite target
/// order counts as violated whenever the nodes take fewer inputs than the
/// target (`n' < n`), whatever `k'`; infinite node smoothness against a
/// finite target always violates.
pub fn vitushkin_violates(spec: &SmoothnessSpec) -> Result<bool, CountingError> {
    at_least("n", spec.n, 1)?;
    at_least("n'", spec.n_prime, 1)?;
    Ok(match (spec.k, spec.k_prime) {
        (Smoothness::Infinite, _) => spec.n_prime < spec.n,
        (Smoothness::Finite(_), Smoothness::Infinite) => true,
        (Smoothness::Finite(k), Smoothness::Finite(kp)) => {
            (kp as u128) * (spec.n as u128) > (k as u128) * (spec.n_prime as u128)
        }
    })
}

/// `N_p = (p+1) m + m (n+m)`.
pub fn param_bound(m: u64, n: u64, p: u64) -> Result<u64, CountingError> {
    at_least("m", m, 1)?;
    at_least("n", n, 1)?;
    let of = || CountingError::Overflow("N_p");
    let derivs = p.checked_add(1).and_then(|q| q.checked_mul(m)).ok_or_else(of)?;
    let linear = n
        .checked_add(m)
        .and_then(|w| w.checked_mul(m))
        .ok_or_else(of)?;
    derivs.checked_add(linear).ok_or_else(of)
}

/// Exact binomial coefficient, or `None` on `u64` overflow.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        // acc = C(n - k + i - 1, i - 1); the product is divisible by i.
        acc = acc * (n as u128 - k as u128 + i) / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Number of distinct order-`p` partial derivatives of a function of `n`
/// variables: multisets of size `p` over `n` symbols, `C(n+p-1, p)`.
pub fn deriv_dim_exact(n: u64, p: u64) -> Result<u64, CountingError> {
    at_least("n", n, 1)?;
    let top = n
        .checked_add(p)
        .map(|s| s - 1)
        .ok_or(CountingError::Overflow("C(n+p-1, p)"))?;
    binomial(top, p).ok_or(CountingError::Overflow("C(n+p-1, p)"))
}

/// `ceil(C(n,2) p^2 / 2)`, defined for `n >= 3`, `p >= 1`.
pub fn pairwise_lower_bound(n: u64, p: u64) -> Result<u64, CountingError> {
    at_least("n", n, 3)?;
    at_least("p", p, 1)?;
    let of = || CountingError::Overflow("C(n,2) p^2 / 2");
    let pairs = binomial(n, 2).ok_or_else(of)?;
    let twice = pairs
        .checked_mul(p)
        .and_then(|v| v.checked_mul(p))
        .ok_or_else(of)?;
    Ok(twice / 2 + twice % 2)
}

/// One row of the derivative-counting analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CountingReport {
    pub p: u64,
    /// `N_p`, the parameter bound.
    pub n_p_bound: u64,
    pub deriv_dim_exact: u64,
    /// `ceil(C(n,2) p^2 / 2)`.
    pub pairwise_lower_bound: u64,
    /// False iff `pairwise_lower_bound > n_p_bound`.
    pub representable_all: bool,
    /// Set where the pairwise bound exceeds the exact derivative count, i.e.
    /// where it is not a true lower bound.
    pub bound_exceeds_exact: bool,
}

fn bound_exceeded(m: u64, n: u64, p: u64) -> Result<bool, CountingError> {
    Ok(pairwise_lower_bound(n, p)? > param_bound(m, n, p)?)
}

pub fn counting_report(m: u64, n: u64, p: u64) -> Result<CountingReport, CountingError> {
    at_least("m", m, 1)?;
    at_least("n", n, 3)?;
    at_least("p", p, 1)?;
    let n_p_bound = param_bound(m, n, p)?;
    let lower = pairwise_lower_bound(n, p)?;
    let exact = deriv_dim_exact(n, p)?;
    Ok(CountingReport {
        p,
        n_p_bound,
        deriv_dim_exact: exact,
        pairwise_lower_bound: lower,
        representable_all: lower <= n_p_bound,
        bound_exceeds_exact: lower > exact,
    })
}

/// Reports for `p = 1..=max_p`.
pub fn counting_series(m: u64, n: u64, max_p: u64) -> Result<Vec<CountingReport>, CountingError> {
    (1..=max_p).map(|p| counting_report(m, n, p)).collect()
}

/// Smallest `p` at which the counting test fails. The bound grows
/// quadratically in `p` and `N_p` linearly, so the scan terminates; it is
/// still capped at [`SCAN_LIMIT`].
pub fn smoothness_limit(m: u64, n: u64) -> Result<u64, CountingError> {
    at_least("m", m, 1)?;
    at_least("n", n, 3)?;
    for p in 1..=SCAN_LIMIT {
        if bound_exceeded(m, n, p)? {
            return Ok(p);
        }
    }
    Err(CountingError::ScanLimit(SCAN_LIMIT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: u64, n: u64, kp: u64, np: u64) -> SmoothnessSpec {
        SmoothnessSpec {
            k: Smoothness::Finite(k),
            n,
            k_prime: Smoothness::Finite(kp),
            n_prime: np,
        }
    }

    #[test]
    fn ratio_test_examples() {
        assert!(vitushkin_violates(&spec(2, 4, 2, 1)).unwrap());
        assert!(!vitushkin_violates(&spec(4, 4, 1, 1)).unwrap());
        assert!(!vitushkin_violates(&spec(3, 6, 1, 2)).unwrap());
        assert!(vitushkin_violates(&spec(0, 2, 1, 1)).unwrap());
        assert!(vitushkin_violates(&spec(1, 0, 1, 1)).is_err());
        assert!(vitushkin_violates(&spec(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn infinite_orders() {
        let analytic = |kp: Smoothness, np: u64| SmoothnessSpec {
            k: Smoothness::Infinite,
            n: 4,
            k_prime: kp,
            n_prime: np,
        };
        assert!(vitushkin_violates(&analytic(Smoothness::Finite(3), 1)).unwrap());
        assert!(!vitushkin_violates(&analytic(Smoothness::Finite(3), 4)).unwrap());
        assert!(vitushkin_violates(&analytic(Smoothness::Infinite, 2)).unwrap());
        let s = SmoothnessSpec {
            k: Smoothness::Finite(5),
            n: 2,
            k_prime: Smoothness::Infinite,
            n_prime: 1,
        };
        assert!(vitushkin_violates(&s).unwrap());
        assert_eq!("inf".parse::<Smoothness>().unwrap(), Smoothness::Infinite);
        assert_eq!("7".parse::<Smoothness>().unwrap(), Smoothness::Finite(7));
        assert!("-1".parse::<Smoothness>().is_err());
    }

    #[test]
    fn parameter_bound_examples() {
        assert_eq!(param_bound(5, 4, 3).unwrap(), 65);
        assert_eq!(param_bound(1, 1, 0).unwrap(), 3);
        assert_eq!(param_bound(7, 3, 10).unwrap(), 147);
        assert!(param_bound(0, 3, 1).is_err());
        assert_eq!(
            param_bound(u64::MAX / 2, 3, 5),
            Err(CountingError::Overflow("N_p"))
        );
    }

    #[test]
    fn derivative_dimension_examples() {
        assert_eq!(deriv_dim_exact(3, 2).unwrap(), 6);
        assert_eq!(deriv_dim_exact(4, 3).unwrap(), 20);
        assert_eq!(deriv_dim_exact(5, 4).unwrap(), 70);
        assert_eq!(deriv_dim_exact(7, 0).unwrap(), 1);
        assert!(deriv_dim_exact(1_000_000, 1_000_000).is_err());
    }

    #[test]
    fn pairwise_bound_examples() {
        assert_eq!(pairwise_lower_bound(3, 4).unwrap(), 24);
        assert_eq!(pairwise_lower_bound(4, 3).unwrap(), 27);
        assert_eq!(pairwise_lower_bound(3, 7).unwrap(), 74);
        assert!(pairwise_lower_bound(2, 3).is_err());
        assert!(pairwise_lower_bound(3, 0).is_err());
    }

    #[test]
    fn report_examples() {
        let r = counting_report(5, 3, 8).unwrap();
        assert_eq!((r.pairwise_lower_bound, r.n_p_bound), (96, 85));
        assert!(!r.representable_all);
        let r = counting_report(5, 3, 7).unwrap();
        assert_eq!((r.pairwise_lower_bound, r.n_p_bound), (74, 80));
        assert!(r.representable_all);
        assert!(counting_report(1000, 3, 1).unwrap().representable_all);
        let r = counting_report(5, 4, 3).unwrap();
        assert_eq!((r.deriv_dim_exact, r.pairwise_lower_bound), (20, 27));
        assert!(r.bound_exceeds_exact);
    }

    #[test]
    fn limit_examples() {
        assert_eq!(smoothness_limit(5, 3).unwrap(), 8);
        // 3 p^2 > 5 p + 50 first holds at p = 6 (p = 5 ties at 75).
        assert_eq!(smoothness_limit(5, 4).unwrap(), 6);
        assert!(smoothness_limit(5, 2).is_err());
    }

    #[test]
    fn huge_arguments_do_not_wrap() {
        let big = 1_000_000;
        assert!(param_bound(big, big, big).is_ok());
        assert!(matches!(pairwise_lower_bound(big, big), Err(CountingError::Overflow(_))));
        assert!(matches!(counting_report(big, big, big), Err(CountingError::Overflow(_))));
        assert!(smoothness_limit(big, 3).is_ok());
    }
}
