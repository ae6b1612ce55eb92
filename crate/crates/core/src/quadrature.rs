//! Gauss–Legendre rules on [−1, 1] and symmetric rules on triangles.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [−1, 1].
///
/// Nodes are computed by Newton iteration on the three-term recurrence and
/// returned in increasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        dp = if d != 0.0 { d } else { dp };
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        x[i] = -t;
        x[n - 1 - i] = t;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Nodes and weights of the Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn gauss_legendre_on(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    x.iter().zip(&w).map(|(t, wt)| (mid + half * t, half * wt)).collect()
}

/// Symmetric triangle rule: barycentric points with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// Supported point counts for [`triangle_rule`].
pub const TRIANGLE_ORDERS: [usize; 4] = [1, 3, 6, 12];

/// Symmetric rule with `npts` ∈ {1, 3, 6, 12} points (exact for degree 1, 2,
/// 4 and 6 polynomials respectively).
pub fn triangle_rule(npts: usize) -> Result<TriangleRule> {
    let mut points = Vec::with_capacity(npts);
    let mut weights = Vec::with_capacity(npts);
    let mut orbit3 = |a: f64, w: f64| {
        let b = 1.0 - 2.0 * a;
        for p in [[b, a, a], [a, b, a], [a, a, b]] {
            points.push(p);
            weights.push(w);
        }
    };
    match npts {
        1 => {}
        3 => orbit3(1.0 / 6.0, 1.0 / 3.0),
        6 => {
            orbit3(0.445_948_490_915_965, 0.223_381_589_678_011);
            orbit3(0.091_576_213_509_771, 0.109_951_743_655_322);
        }
        12 => {
            orbit3(0.249_286_745_170_910, 0.116_786_275_726_379);
            orbit3(0.063_089_014_491_502, 0.050_844_906_370_207);
        }
        n => return Err(Error::UnsupportedOrder(n)),
    }
    if npts == 1 {
        points.push([1.0 / 3.0; 3]);
        weights.push(1.0);
    }
    if npts == 12 {
        let (a, b) = (0.053_145_049_844_817, 0.310_352_451_033_784);
        let c = 1.0 - a - b;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(0.082_851_075_618_374);
        }
    }
    Ok(TriangleRule { points, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 1..40 {
            let (x, w) = gauss_legendre(n);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            for deg in 0..(2 * n).min(30) {
                let approx: f64 = x.iter().zip(&w).map(|(t, wt)| wt * t.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn mapped_rule_integrates_on_interval() {
        let s: f64 = gauss_legendre_on(5, 1.0, 3.0).iter().map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(s, 26.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn triangle_rules_have_their_degree() {
        for (npts, degree) in [(1, 1), (3, 2), (6, 4), (12, 6)] {
            let rule = triangle_rule(npts).unwrap();
            assert_eq!(rule.points.len(), npts);
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for p in &rule.points {
                assert!(p.iter().all(|&l| l > 0.0));
                assert_relative_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
            }
            // Reference triangle (0,0),(1,0),(0,1): ∫ x^i y^j = i! j! / (i+j+2)!.
            for i in 0..=degree {
                for j in 0..=(degree - i) {
                    let approx: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| 0.5 * w * p[1].powi(i as i32) * p[2].powi(j as i32))
                        .sum();
                    let exact = factorial(i) * factorial(j) / factorial(i + j + 2);
                    assert!((approx - exact).abs() < 1e-14, "npts={npts} i={i} j={j}");
                }
            }
        }
        assert_eq!(triangle_rule(4), Err(Error::UnsupportedOrder(4)));
    }
}
