//! The summed two-point Gauss rule used for every time integral.
//!
//! On a single interval `(a, b)` the rule evaluates at the two Gauss points
//!
//! ```text
//!     chi_{1,2} = (a+b)/2 -+ (b-a)/sqrt(12)
//! ```
//!
//! with equal weights `(b-a)/2`; summed over a mesh it is exact for cubic
//! polynomials. Every variational form in this crate (macro steps, micro
//! steps, transfer averages, estimator weights) is evaluated with this same
//! rule so that discrete residuals vanish identically where the solvers
//! enforce them.

/// `1/sqrt(12)`: offset of the Gauss points from the interval midpoint,
/// relative to the interval length.
pub const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_88;

/// Barycentric positions of the two Gauss points inside a unit interval.
pub const GAUSS_THETA: [f64; 2] = [0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET];

/// The two Gauss points of the interval `(a, b)`.
#[inline]
pub fn gauss_points(a: f64, b: f64) -> [f64; 2] {
    let mid = 0.5 * (a + b);
    let off = (b - a) * GAUSS_OFFSET;
    [mid - off, mid + off]
}

/// Integrates a scalar function over the mesh described by `nodes` with the
/// summed two-point Gauss rule.
pub fn gauss2_integrate<F: FnMut(f64) -> f64>(nodes: &[f64], mut f: F) -> f64 {
    debug_assert!(nodes.len() >= 2);
    let mut total = 0.0;
    for w in nodes.windows(2) {
        let [chi1, chi2] = gauss_points(w[0], w[1]);
        total += 0.5 * (w[1] - w[0]) * (f(chi1) + f(chi2));
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cubic_is_integrated_exactly() {
        // \int_0^1 t^3 dt = 1/4 on a single interval.
        let val = gauss2_integrate(&[0.0, 1.0], |t| t * t * t);
        assert_relative_eq!(val, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn constant_over_long_mesh() {
        let nodes = [0.0, 3.0e5, 6.0e5];
        let val = gauss2_integrate(&nodes, |_| 1.0);
        assert_relative_eq!(val, 6.0e5, epsilon = 1e-9);
    }

    #[test]
    fn full_period_of_sine_vanishes() {
        let m = 20;
        let nodes: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
        let val = gauss2_integrate(&nodes, |t| (2.0 * std::f64::consts::PI * t).sin());
        assert!(val.abs() <= 1e-13, "got {val:.3e}");
    }

    #[test]
    fn quartic_error_has_the_right_order() {
        // On a mesh of width h the rule's error for t^4 scales like h^4.
        let exact = 0.2;
        let err = |m: usize| {
            let nodes: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
            (gauss2_integrate(&nodes, |t| t.powi(4)) - exact).abs()
        };
        let ratio = err(4) / err(8);
        assert!((ratio - 16.0).abs() < 0.5, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn random_cubics_on_random_meshes(
            c0 in -2.0..2.0f64, c1 in -2.0..2.0f64, c2 in -2.0..2.0f64, c3 in -2.0..2.0f64,
            n in 1usize..8, len in 0.1..5.0f64,
        ) {
            let nodes: Vec<f64> = (0..=n).map(|i| len * i as f64 / n as f64).collect();
            let poly = |t: f64| c0 + c1 * t + c2 * t * t + c3 * t * t * t;
            let exact = c0 * len + c1 * len.powi(2) / 2.0 + c2 * len.powi(3) / 3.0 + c3 * len.powi(4) / 4.0;
            let val = gauss2_integrate(&nodes, poly);
            let scale = 1.0 + exact.abs();
            prop_assert!((val - exact).abs() <= 1e-12 * scale);
        }
    }
}
