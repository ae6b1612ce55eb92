//! Rectangular Volterra dislocation parallel to the free surface.
//!
//! The Kelvin part `u_Γ(x) = ∫_S Ξ(x − y) k dσ(y)` of a constant slip `k` on
//! `S = [a, b] × [c, d] × {−|α|}` is available in closed form
//! ([`u_gamma_closed_form`]) and by brute-force panel quadrature of
//! [`xi_kernel`] ([`u_gamma_quadrature`]). The quadrature is the reference.
//!
//! Across `S`, `u_Γ(S₊) − u_Γ(S₋) = −k` with `S₊` above the plane.

use std::f64::consts::FRAC_PI_2;

use crate::elastic::{LameParameters, Vec3};
use crate::error::{Error, Result};
use crate::greens::xi_kernel;
use crate::quadrature::gauss_legendre;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectDislocation {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
    pub slip: Vec3,
}

impl RectDislocation {
    pub fn new(a: f64, b: f64, c: f64, d: f64, alpha: f64, slip: Vec3) -> Result<Self> {
        if ![a, b, c, d, alpha].iter().all(|v| v.is_finite()) || !slip.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRect("non-finite parameter".into()));
        }
        if a >= b || c >= d {
            return Err(Error::InvalidRect(format!("need a < b and c < d, got [{a}, {b}] x [{c}, {d}]")));
        }
        if alpha == 0.0 {
            return Err(Error::InvalidRect("alpha must be nonzero".into()));
        }
        Ok(Self { a, b, c, d, alpha, slip })
    }

    /// Same rectangle carrying a different slip.
    pub fn with_slip(&self, slip: Vec3) -> Self {
        Self { slip, ..*self }
    }

    /// Height `y₃ = −|α|` of the plane containing `S`.
    pub fn plane(&self) -> f64 {
        -self.alpha.abs()
    }

    pub fn diagonal(&self) -> f64 {
        (self.b - self.a).hypot(self.d - self.c)
    }

    pub fn area(&self) -> f64 {
        (self.b - self.a) * (self.d - self.c)
    }

    /// Corners in the order `(a,c)`, `(b,c)`, `(b,d)`, `(a,d)`.
    pub fn corners(&self) -> [Vec3; 4] {
        let z = self.plane();
        [
            Vec3::new(self.a, self.c, z),
            Vec3::new(self.b, self.c, z),
            Vec3::new(self.b, self.d, z),
            Vec3::new(self.a, self.d, z),
        ]
    }

    /// Closest point of `S̄` to `x`.
    pub fn closest_point(&self, x: &Vec3) -> Vec3 {
        Vec3::new(x[0].clamp(self.a, self.b), x[1].clamp(self.c, self.d), self.plane())
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        (x - self.closest_point(x)).norm()
    }
}

fn h_err(index: usize, reason: &'static str) -> Error {
    Error::HDomain {
        index,
        corner: None,
        reason,
    }
}

/// The auxiliary functions `h₀ … h₆` of the closed form.
///
/// Preconditions are enforced strictly: a vanishing denominator is an error
/// naming it. `h₃` switches to `ln(x² + z²) − ln(h₀ − y)` for `y < 0`.
pub fn eval_h(index: usize, x: f64, y: f64, z: f64) -> Result<f64> {
    let h0 = (x * x + y * y + z * z).sqrt();
    let xz = x * x + z * z;
    let yz = y * y + z * z;
    match index {
        0 => Ok(h0),
        1 => {
            if z * h0 == 0.0 {
                return Err(h_err(1, "z * h0 vanishes"));
            }
            Ok((x * y / (z * h0)).atan())
        }
        2 | 4 if xz == 0.0 => Err(h_err(index, "x^2 + z^2 vanishes")),
        2 => Ok(x * y * z / (xz * h0)),
        3 => {
            if y >= 0.0 {
                if y + h0 <= 0.0 {
                    return Err(h_err(3, "y + h0 is not positive"));
                }
                Ok((y + h0).ln())
            } else {
                if xz == 0.0 {
                    return Err(h_err(3, "y + h0 is not positive"));
                }
                Ok(xz.ln() - (h0 - y).ln())
            }
        }
        4 => Ok(y * z * z / (xz * h0)),
        5 | 6 if xz == 0.0 => Err(h_err(index, "x^2 + z^2 vanishes")),
        5 | 6 if yz == 0.0 => Err(h_err(index, "y^2 + z^2 vanishes")),
        5 => Ok(x * y * z * h0 / (xz * yz)),
        6 => Ok(x * y * z * z * z / (xz * yz * h0)),
        _ => Err(h_err(index, "index out of range 0..=6")),
    }
}

/// h-values at one corner offset; `h1` takes its in-plane limit when `z = 0`.
fn corner_h(x: f64, y: f64, z: f64) -> Result<[f64; 7]> {
    let mut h = [0.0; 7];
    for (i, v) in h.iter_mut().enumerate() {
        *v = if i == 1 && z == 0.0 {
            if x * y == 0.0 {
                return Err(h_err(1, "in-plane point on an edge line"));
            }
            FRAC_PI_2 * (x * y).signum()
        } else {
            eval_h(i, x, y, z)?
        };
    }
    Ok(h)
}

/// Closed-form `u_Γ(x)` for the rectangle's constant slip.
pub fn u_gamma_closed_form(x: &Vec3, rect: &RectDislocation, p: &LameParameters) -> Result<Vec3> {
    let scale = rect.diagonal().max(x.amax());
    if rect.distance(x) <= 1e-14 * scale {
        return Err(Error::OnSurface {
            distance: rect.distance(x),
        });
    }
    let (lambda, mu) = (p.lambda(), p.mu());
    let cnu = -1.0 / (8.0 * std::f64::consts::PI * (1.0 - p.poisson_ratio()));
    let z = x[2] + rect.alpha.abs();
    let xa = x[0] - rect.a;
    let xb = x[0] - rect.b;
    let yc = x[1] - rect.c;
    let yd = x[1] - rect.d;
    // Corner offsets with their alternating signs; corner indices follow
    // RectDislocation::corners.
    let offsets = [(xa, yc, 1.0, 0), (xa, yd, -1.0, 3), (xb, yd, 1.0, 2), (xb, yc, -1.0, 1)];
    let mut s = [0.0; 7];
    let mut ss = [0.0; 7];
    let mut inv_h0 = 0.0;
    for &(ox, oy, sign, corner) in &offsets {
        let tag = |e: Error| match e {
            Error::HDomain { index, reason, .. } => Error::HDomain {
                index,
                corner: Some(corner),
                reason,
            },
            e => e,
        };
        let h = corner_h(ox, oy, z).map_err(tag)?;
        let hs = corner_h(oy, ox, z).map_err(tag)?;
        for i in 0..7 {
            s[i] += sign * h[i];
            ss[i] += sign * hs[i];
        }
        inv_h0 += sign / h[0];
    }
    let k = rect.slip;
    // The h₁ coefficient is (λ+2μ)/(λ+μ); agreement with the quadrature
    // reference fixes it, and it yields the slip jump −k in every component.
    let c1 = (lambda + 2.0 * mu) / (lambda + mu);
    let c3 = mu / (lambda + mu);
    let u1 = k[0] * c1 * s[1] - k[0] * s[2] + k[1] * z * inv_h0 + k[2] * c3 * s[3] - k[2] * s[4];
    let u2 = k[0] * z * inv_h0 + k[1] * c1 * s[1] - k[1] * ss[2] + k[2] * c3 * ss[3] - k[2] * ss[4];
    let u3 = -k[0] * c3 * s[3] - k[0] * s[4] - k[1] * c3 * ss[3] - k[1] * ss[4]
        + k[2] * c1 * s[1]
        + k[2] * s[5]
        + k[2] * s[6];
    Ok(Vec3::new(u1, u2, u3) * cnu)
}

/// Result of a quadrature evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: Vec3,
    /// `|I(2n) − I(n)|` where `value = I(2n)`.
    pub error_estimate: f64,
    /// Gauss–Legendre points per panel direction used for `value`.
    pub order: usize,
}

/// Breakpoints of `[lo, hi]` graded geometrically towards `p ∈ [lo, hi]`
/// starting from width `s`.
fn graded_breaks(lo: f64, hi: f64, p: f64, s: f64) -> Vec<f64> {
    let mut left = Vec::new();
    let mut w = s;
    let mut t = p;
    while t - lo > 1e-12 * (hi - lo) {
        t = (t - w).max(lo);
        if t - lo < 0.5 * w {
            t = lo;
        }
        left.push(t);
        w *= 2.0;
    }
    let mut out: Vec<f64> = left.into_iter().rev().collect();
    out.push(p);
    let (mut w, mut t) = (s, p);
    while hi - t > 1e-12 * (hi - lo) {
        t = (t + w).min(hi);
        if hi - t < 0.5 * w {
            t = hi;
        }
        out.push(t);
        w *= 2.0;
    }
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (hi - lo));
    out
}

fn panel_sum(x: &Vec3, rect: &RectDislocation, p: &LameParameters, n: usize) -> Result<Vec3> {
    let cp = rect.closest_point(x);
    let s = 0.5 * rect.distance(x);
    let bx = graded_breaks(rect.a, rect.b, cp[0], s);
    let by = graded_breaks(rect.c, rect.d, cp[1], s);
    let (t, w) = gauss_legendre(n);
    let z = rect.plane();
    let mut acc = Vec3::zeros();
    for ix in bx.windows(2) {
        let (hx, mx) = (0.5 * (ix[1] - ix[0]), 0.5 * (ix[1] + ix[0]));
        for iy in by.windows(2) {
            let (hy, my) = (0.5 * (iy[1] - iy[0]), 0.5 * (iy[1] + iy[0]));
            for (ti, wi) in t.iter().zip(&w) {
                for (tj, wj) in t.iter().zip(&w) {
                    let y = Vec3::new(mx + hx * ti, my + hy * tj, z);
                    acc += xi_kernel(&(x - y), p)? * rect.slip * (wi * wj * hx * hy);
                }
            }
        }
    }
    Ok(acc)
}

/// Panel Gauss–Legendre quadrature of `Ξ k` over the rectangle.
///
/// Panels are graded geometrically towards the closest point of `S̄` to
/// `x`, and every panel uses `order × order` nodes; the returned value uses
/// `2 · order` nodes and is compared with the `order` result.
pub fn u_gamma_quadrature(
    x: &Vec3,
    rect: &RectDislocation,
    p: &LameParameters,
    order: usize,
) -> Result<QuadratureEstimate> {
    let required = 1e-3 * rect.diagonal();
    let distance = rect.distance(x);
    if distance < required {
        return Err(Error::TooClose { distance, required });
    }
    if order == 0 {
        return Err(Error::UnsupportedOrder(0));
    }
    let coarse = panel_sum(x, rect, p, order)?;
    let fine = panel_sum(x, rect, p, 2 * order)?;
    Ok(QuadratureEstimate {
        value: fine,
        error_estimate: (fine - coarse).norm(),
        order: 2 * order,
    })
}

/// Doubles the panel order from 4 until the self-estimate drops below
/// `rel_tol · |value|` (or an absolute floor for tiny values).
pub fn u_gamma_quadrature_converged(
    x: &Vec3,
    rect: &RectDislocation,
    p: &LameParameters,
    rel_tol: f64,
) -> Result<QuadratureEstimate> {
    let mut order = 4;
    let floor = 1e-15 * rect.slip.norm();
    let mut last = None;
    while order <= 64 {
        let est = u_gamma_quadrature(x, rect, p, order)?;
        if est.error_estimate <= rel_tol * est.value.norm() || est.error_estimate <= floor {
            return Ok(est);
        }
        last = Some(est);
        order *= 2;
    }
    let est = last.expect("at least one pass");
    Err(Error::NonConvergence {
        what: "rectangle quadrature",
        detail: format!("estimate {:e} at order {}", est.error_estimate, est.order),
    })
}

/// Which model describes `|u_i(d)|` along a probe ladder better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeModel {
    /// `c₀ + c₁ ln(1/d)`
    Logarithmic,
    /// `c₀ + c₁ d`
    Bounded,
}

/// Least-squares fits of one displacement component along a ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentFit {
    pub log_slope: f64,
    pub log_intercept: f64,
    pub log_slope_stderr: f64,
    pub log_r_squared: f64,
    pub log_rss: f64,
    pub bounded_rss: f64,
    pub preferred: ProbeModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub distances: Vec<f64>,
    pub values: Vec<Vec3>,
    pub components: [ComponentFit; 3],
}

struct LineFit {
    slope: f64,
    intercept: f64,
    slope_stderr: f64,
    r_squared: f64,
    rss: f64,
}

fn line_fit(t: &[f64], y: &[f64]) -> LineFit {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let syy: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let slope = sty / stt;
    let intercept = ym - slope * tm;
    let rss: f64 = t.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = (rss / (n - 2.0) / stt).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        rss,
    }
}

fn check_ladder(distances: &[f64]) -> Result<()> {
    if distances.len() < 6 {
        return Err(Error::DegenerateLadder(format!("{} distances, need at least 6", distances.len())));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::DegenerateLadder("distances must be positive and finite".into()));
    }
    if distances.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::DegenerateLadder("distances must be strictly descending".into()));
    }
    if distances[0] / distances[distances.len() - 1] < 100.0 {
        return Err(Error::DegenerateLadder("ladder spans less than two decades".into()));
    }
    Ok(())
}

fn probe_along(
    rect: &RectDislocation,
    p: &LameParameters,
    base: Vec3,
    approach: Vec3,
    distances: &[f64],
) -> Result<ProbeReport> {
    check_ladder(distances)?;
    if approach[2] != 0.0 || (approach.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput("approach must be a unit vector in the plane of S".into()));
    }
    let values = distances
        .iter()
        .map(|d| u_gamma_closed_form(&(base + approach * *d), rect, p))
        .collect::<Result<Vec<_>>>()?;
    let log_t: Vec<f64> = distances.iter().map(|d| -d.ln()).collect();
    let components = [0, 1, 2].map(|i| {
        let y: Vec<f64> = values.iter().map(|v| v[i].abs()).collect();
        let log = line_fit(&log_t, &y);
        let bounded = line_fit(distances, &y);
        ComponentFit {
            log_slope: log.slope,
            log_intercept: log.intercept,
            log_slope_stderr: log.slope_stderr,
            log_r_squared: log.r_squared,
            log_rss: log.rss,
            bounded_rss: bounded.rss,
            preferred: if log.rss < bounded.rss {
                ProbeModel::Logarithmic
            } else {
                ProbeModel::Bounded
            },
        }
    });
    Ok(ProbeReport {
        distances: distances.to_vec(),
        values,
        components,
    })
}

/// Fits `|u_i|` against `ln(1/d)` at `vertex + d · approach` for a
/// descending in-plane ladder `d`; `approach` must point away from `S̄`.
pub fn vertex_singularity_probe(
    rect: &RectDislocation,
    p: &LameParameters,
    corner: usize,
    distances: &[f64],
    approach: Vec3,
) -> Result<ProbeReport> {
    let base = *rect
        .corners()
        .get(corner)
        .ok_or_else(|| Error::InvalidInput(format!("corner {corner} out of range 0..4")))?;
    probe_along(rect, p, base, approach, distances)
}

/// Same fit at the midpoint of an edge, approaching perpendicular to it
/// from outside. Edges are numbered `y₂ = c`, `y₁ = b`, `y₂ = d`, `y₁ = a`.
pub fn edge_midpoint_probe(
    rect: &RectDislocation,
    p: &LameParameters,
    edge: usize,
    distances: &[f64],
) -> Result<ProbeReport> {
    let z = rect.plane();
    let (mx, my) = (0.5 * (rect.a + rect.b), 0.5 * (rect.c + rect.d));
    let (base, dir) = match edge {
        0 => (Vec3::new(mx, rect.c, z), -Vec3::y()),
        1 => (Vec3::new(rect.b, my, z), Vec3::x()),
        2 => (Vec3::new(mx, rect.d, z), Vec3::y()),
        3 => (Vec3::new(rect.a, my, z), -Vec3::x()),
        _ => return Err(Error::InvalidInput(format!("edge {edge} out of range 0..4"))),
    };
    probe_along(rect, p, base, dir, distances)
}

/// `n` distances from `hi` down to `lo`, equally spaced in log scale.
pub fn log_ladder(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| hi * (lo / hi).powf(i as f64 / (n - 1) as f64))
        .collect()
}
