//! Exact 2D orientation test.
//!
//! A floating-point evaluation is accepted when it clears a forward error
//! bound; otherwise the determinant is recomputed in exact rational
//! arithmetic from the (exactly representable) input coordinates.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

// (3 + 16ε)ε for the two-product determinant.
const ERRBOUND: f64 = 3.330_669_073_875_472e-16;

/// Sign of `(a − c) × (b − c)`: `Greater` when `a, b, c` turn counter-clockwise.
pub fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Ordering {
    let detl = (a[0] - c[0]) * (b[1] - c[1]);
    let detr = (a[1] - c[1]) * (b[0] - c[0]);
    let det = detl - detr;
    let bound = ERRBOUND * (detl.abs() + detr.abs());
    if det > bound {
        return Ordering::Greater;
    }
    if -det > bound {
        return Ordering::Less;
    }
    orient2d_exact(a, b, c)
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(|| BigRational::from_integer(BigInt::zero()))
}

/// Rational-arithmetic orientation; inputs must be finite.
pub fn orient2d_exact(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Ordering {
    let [ax, ay, bx, by, cx, cy] = [a[0], a[1], b[0], b[1], c[0], c[1]].map(exact);
    let det = (ax - &cx) * (by - &cy) - (ay - cy) * (bx - cx);
    if det.is_zero() {
        Ordering::Equal
    } else if det.is_positive() {
        Ordering::Greater
    } else {
        Ordering::Less
    }
}

/// Whether the open interiors of two non-degenerate triangles intersect.
///
/// Two convex polygons have disjoint interiors iff an edge line of one of
/// them weakly separates them.
pub fn triangle_interiors_overlap(t: [[f64; 2]; 3], s: [[f64; 2]; 3]) -> bool {
    !(separated_by_edge(&t, &s) || separated_by_edge(&s, &t))
}

fn separated_by_edge(t: &[[f64; 2]; 3], s: &[[f64; 2]; 3]) -> bool {
    let inside = orient2d(t[0], t[1], t[2]);
    (0..3).any(|e| {
        let (p, q) = (t[e], t[(e + 1) % 3]);
        s.iter().all(|v| orient2d(p, q, *v) != inside)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orientation_signs() {
        assert_eq!(orient2d([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]), Ordering::Greater);
        assert_eq!(orient2d([0.0, 0.0], [0.0, 1.0], [1.0, 0.0]), Ordering::Less);
        assert_eq!(orient2d([0.0, 0.0], [1.0, 1.0], [2.0, 2.0]), Ordering::Equal);
    }

    #[test]
    fn near_degenerate_cases_are_exact() {
        // Points on the line y = x perturbed by one ulp.
        let base = 0.5f64;
        for k in 1..200 {
            let x = base + k as f64 * f64::EPSILON;
            let up = f64::from_bits(x.to_bits() + 1);
            assert_eq!(orient2d([0.0, 0.0], [1e3, 1e3], [x, x]), Ordering::Equal);
            assert_eq!(orient2d([0.0, 0.0], [1e3, 1e3], [x, up]), Ordering::Greater);
            assert_eq!(orient2d_exact([0.0, 0.0], [1e3, 1e3], [up, x]), Ordering::Less);
        }
        // A triple where the naive determinant has the wrong sign.
        let a = [0.5, 0.5];
        let b = [12.0, 12.0];
        let c = [24.0, 24.0];
        let naive_zero = (a[0] - c[0]) * (b[1] - c[1]) - (a[1] - c[1]) * (b[0] - c[0]);
        assert_eq!(naive_zero, 0.0);
        let c_off = [24.0, f64::from_bits(24f64.to_bits() + 1)];
        assert_eq!(orient2d(a, b, c_off), orient2d_exact(a, b, c_off));
    }

    #[test]
    fn overlap_cases() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let shared_edge = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let touching_vertex = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0]];
        let inside = [[0.1, 0.1], [0.2, 0.1], [0.1, 0.2]];
        let crossing = [[0.2, -0.5], [0.3, 2.0], [-0.5, 0.3]];
        assert!(!triangle_interiors_overlap(t, shared_edge));
        assert!(!triangle_interiors_overlap(t, touching_vertex));
        assert!(triangle_interiors_overlap(t, inside));
        assert!(triangle_interiors_overlap(inside, t));
        assert!(triangle_interiors_overlap(t, crossing));
        assert!(triangle_interiors_overlap(t, t));
        let cw = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(triangle_interiors_overlap(t, cw));
    }
}
