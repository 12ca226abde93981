//! Finite differences on possibly nonuniform time stamps.

/// Derivative at `b` of the quadratic through three `(t, f)` points.
pub fn centered_derivative(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (h1, h2) = (b.0 - a.0, c.0 - b.0);
    let left = (b.1 - a.1) / h1;
    let right = (c.1 - b.1) / h2;
    (h2 * left + h1 * right) / (h1 + h2)
}

/// Second derivative at `b` of the quadratic through three `(t, f)` points.
pub fn second_difference(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let left = (b.1 - a.1) / (b.0 - a.0);
    let right = (c.1 - b.1) / (c.0 - b.0);
    2.0 * (right - left) / (c.0 - a.0)
}

/// Trapezoid rule over paired samples.
pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1])).sum()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn exact_on_quadratics(a in -3.0f64..3.0, b in -2.0f64..2.0, h1 in 0.01f64..1.0, h2 in 0.01f64..1.0) {
            let f = |t: f64| a * t * t + b * t - 1.0;
            let (t0, t1, t2) = (0.3, 0.3 + h1, 0.3 + h1 + h2);
            let pts = ((t0, f(t0)), (t1, f(t1)), (t2, f(t2)));
            prop_assert!((second_difference(pts.0, pts.1, pts.2) - 2.0 * a).abs() < 1e-8);
            prop_assert!((centered_derivative(pts.0, pts.1, pts.2) - (2.0 * a * t1 + b)).abs() < 1e-9);
        }
    }

    #[test]
    fn trapezoid_integrates_lines() {
        let t = [0.0, 0.5, 2.0];
        let f: Vec<f64> = t.iter().map(|x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&t, &f) - 8.0).abs() < 1e-14);
    }
}
