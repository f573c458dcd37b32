//! The logarithmic nonlinearity `f(u) = u log u^2` with a floor inside the logarithm.
//!
//! Every module that evaluates `f` or its derivative goes through these functions so the
//! reduction, the oracle and the verification tools all see the same discrete equation.

/// Natural log of the default floor `u_floor = e^{-40}`.
pub const LOG_FLOOR: f64 = -40.0;

/// `f(u) = 2 u max(ln u, ln_floor)` for `u > 0` and `0` otherwise.
#[inline]
pub fn f(u: f64, ln_floor: f64) -> f64 {
    if u > 0.0 {
        2.0 * u * u.ln().max(ln_floor)
    } else {
        0.0
    }
}

/// Same as [`f`] when `ln u` is already known (avoids `ln` of an underflowed value).
#[inline]
pub fn f_from_log(u: f64, ln_u: f64, ln_floor: f64) -> f64 {
    if u > 0.0 {
        2.0 * u * ln_u.max(ln_floor)
    } else {
        0.0
    }
}

/// Jacobian diagonal entry `2 max(ln u, ln_floor) + 2`.
#[inline]
pub fn df_from_log(ln_u: f64, ln_floor: f64) -> f64 {
    2.0 * ln_u.max(ln_floor) + 2.0
}

#[inline]
pub fn df(u: f64, ln_floor: f64) -> f64 {
    if u > 0.0 {
        df_from_log(u.ln(), ln_floor)
    } else {
        df_from_log(ln_floor, ln_floor)
    }
}

/// Exact derivative of [`f`]: `2 ln u + 2` above the floor, `2 ln_floor` between zero and
/// the floor, `0` for `u <= 0`. Newton needs this rather than [`df`] once iterates cross zero.
#[inline]
pub fn df_exact(u: f64, ln_floor: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        let l = u.ln();
        if l > ln_floor {
            2.0 * l + 2.0
        } else {
            2.0 * ln_floor
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_negative_values_map_to_zero() {
        assert_eq!(f(0.0, LOG_FLOOR), 0.0);
        assert_eq!(f(-3.0, LOG_FLOOR), 0.0);
        assert_eq!(f(1.0, LOG_FLOOR), 0.0);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for &u in &[0.3, 1.7, 4.0] {
            let h = 1e-6;
            let fd = (f(u + h, LOG_FLOOR) - f(u - h, LOG_FLOOR)) / (2.0 * h);
            assert!((fd - df(u, LOG_FLOOR)).abs() < 1e-7);
        }
    }

    #[test]
    fn floor_bounds_the_derivative() {
        assert_eq!(df(1e-300, LOG_FLOOR), -78.0);
    }

    #[test]
    fn exact_derivative_follows_each_branch() {
        for &u in &[1e-20, 0.3, 4.0, 1e-300] {
            let h = 1e-6 * u;
            let fd = (f(u + h, LOG_FLOOR) - f(u - h, LOG_FLOOR)) / (2.0 * h);
            assert!((fd - df_exact(u, LOG_FLOOR)).abs() < 1e-6 * fd.abs().max(1.0), "{u}");
        }
        assert_eq!(df_exact(-1.0, LOG_FLOOR), 0.0);
        assert_eq!(df_exact(0.0, LOG_FLOOR), 0.0);
    }
}
