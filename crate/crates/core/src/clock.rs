//! The variance clock: the residual-subspace variance of a linear
//! interpolant `z = (1−t)ε + tx` as a function of time.
//!
//! For noise floor `σ²` the clock is `σ⊥²(t) = (1−t)² + t²σ²`, a
//! parabola with its minimum `σ²/(1+σ²)` at the critical point
//! `t* = 1/(1+σ²)`. It is strictly decreasing on `[0, t*)` and strictly
//! increasing on `(t*, 1]`, which is what makes branchwise time
//! recovery possible.

use crate::scalar::Real;

/// Clock value and derivative at `t`: `((1−t)² + t²σ², −2(1−t) + 2tσ²)`.
#[inline]
pub fn clock_eval<T: Real>(sigma2: T, t: T) -> (T, T) {
    let one = T::one();
    let two = one + one;
    let omt = one - t;
    (omt * omt + t * t * sigma2, -two * omt + two * t * sigma2)
}

/// The critical point `t* = 1/(1+σ²)` where the clock's derivative vanishes.
#[inline]
pub fn critical_point<T: Real>(sigma2: T) -> T {
    T::one() / (T::one() + sigma2)
}

/// The clock's global minimum `σ²/(1+σ²)`, attained at the critical point.
#[inline]
pub fn clock_min<T: Real>(sigma2: T) -> T {
    sigma2 / (T::one() + sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn endpoints() {
        assert_eq!(clock_eval(0.1, 0.0), (1.0, -2.0));
        let (v, dv) = clock_eval(0.1, 1.0);
        assert_relative_eq!(v, 0.1, epsilon = 1e-15);
        assert_relative_eq!(dv, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn midpoint_hand_expansion() {
        let (v, dv) = clock_eval(0.1, 0.5);
        assert_relative_eq!(v, 0.275, epsilon = 1e-15);
        assert_relative_eq!(dv, -0.9, epsilon = 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let h = 1e-6;
        for &s2 in &[0.0064, 0.1, 1.0, 3.0] {
            for i in 1..50 {
                let t = i as f64 / 50.0;
                let (_, dv) = clock_eval(s2, t);
                let fd = (clock_eval(s2, t + h).0 - clock_eval(s2, t - h).0) / (2.0 * h);
                assert!((dv - fd).abs() < 1e-6, "s2={} t={}", s2, t);
            }
        }
    }

    #[test]
    fn critical_point_values() {
        assert!((critical_point(0.1_f64) - 0.9090).abs() < 5e-4);
        assert!((critical_point(0.0064_f64) - 0.9937).abs() < 5e-4);
        assert_relative_eq!(critical_point(1.0), 0.5);
        let (_, dv): (f64, f64) = clock_eval(0.1, critical_point(0.1));
        assert!(dv.abs() < 1e-12);
    }

    #[test]
    fn monotone_branches() {
        let s2 = 0.25;
        let ts = critical_point(s2);
        let mut prev = clock_eval(s2, 0.0).0;
        for i in 1..=100 {
            let t = ts * i as f64 / 100.0;
            let v = clock_eval(s2, t).0;
            assert!(v < prev);
            prev = v;
        }
        let mut prev = clock_eval(s2, ts).0;
        for i in 1..=100 {
            let t = ts + (1.0 - ts) * i as f64 / 100.0;
            let v = clock_eval(s2, t).0;
            assert!(v > prev);
            prev = v;
        }
        assert_relative_eq!(clock_eval(s2, ts).0, clock_min(s2), epsilon = 1e-15);
    }
}
