//! Fundamental solutions of the isotropic Lamé system.
//!
//! All tensors use the normalization `div(C ∇̂ N^(k)) = δ e_k`, i.e. they are
//! the negatives of the classical point-force responses. Column `k` of a
//! tensor is the field generated by a source in direction `e_k`.
//!
//! * [`kelvin_gamma`]: full-space tensor `Γ(r)`, `r = x − y`, with gradient
//!   with respect to `r`.
//! * [`xi_kernel`]: `Ξ = (C ∇̂_y Γ e₃)ᵀ` for the horizontal plane, evaluated at
//!   `r = x − y` with derivatives taken in the integration point `y`.
//! * [`mindlin_neumann`]: half-space tensor `N₀(x, y) = Γ(x − y) + R(x, y)`
//!   whose traction `(C ∇̂ₓ N₀) e₃` vanishes on `{x₃ = 0}`. The gradient is
//!   taken in the field point `x`.
//!
//! The image term `R` follows Mindlin's point-force solution, rewritten for a
//! half-space `x₃ < 0` with the upward normal `e₃`.

use std::f64::consts::PI;

use crate::dual::{Dual3, HyperDual33, Scalar};
use crate::elastic::{stress, strain, LameParameters, Tensor2, Vec3};
use crate::error::{Error, Result};

/// Relative separation below which kernel evaluations are refused.
pub const SINGULAR_GUARD: f64 = 1e-12;

/// Sign multiplying the double-layer integral `∫ [(C ∇̂ₓ N) n]ᵀ g dσ`.
///
/// Locked so that the displacement jump `u(S₊) − u(S₋)` across the surface
/// equals the slip `g`, where `S₊` is the side the normal points into.
pub const DOUBLE_LAYER_SIGN: f64 = -1.0;

/// A tensor value together with its first derivatives.
///
/// `gradient[m]` holds the derivative of every entry with respect to the
/// `m`-th coordinate of the differentiation variable documented by the
/// producing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub value: Tensor2,
    pub gradient: [Tensor2; 3],
}

impl KernelEval {
    /// Largest Frobenius norm among the three gradient slices.
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }

    /// `∇ N^(k)` as a matrix with entries `∂N_ik / ∂v_m` at `(i, m)`.
    pub fn column_gradient(&self, k: usize) -> Tensor2 {
        Tensor2::from_fn(|i, m| self.gradient[m][(i, k)])
    }
}

fn kelvin_scale(p: &LameParameters) -> f64 {
    1.0 / (16.0 * PI * p.mu() * (1.0 - p.poisson_ratio()))
}

/// Full-space Kelvin tensor, generic over the scalar type.
pub(crate) fn kelvin_tensor<S: Scalar>(r: [S; 3], lambda: f64, mu: f64) -> [[S; 3]; 3] {
    let nu = lambda / (2.0 * (lambda + mu));
    let a = -1.0 / (16.0 * PI * mu * (1.0 - nu));
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let inv = r2.sqrt().recip();
    let inv3 = inv * inv * inv;
    let diag = inv * (3.0 - 4.0 * nu);
    let mut out = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let mut v = r[i] * r[j] * inv3;
            if i == j {
                v = v + diag;
            }
            out[i][j] = v * a;
            out[j][i] = out[i][j];
        }
    }
    out
}

/// Image part `R = N₀ − Γ` of the half-space tensor for field point `x` and
/// pole `y`, generic over the scalar type.
pub(crate) fn mindlin_image<S: Scalar>(x: [S; 3], y: [S; 3], lambda: f64, mu: f64) -> [[S; 3]; 3] {
    let nu = lambda / (2.0 * (lambda + mu));
    let k = 1.0 / (16.0 * PI * mu * (1.0 - nu));
    let k34 = 3.0 - 4.0 * nu;
    let kappa = 4.0 * (1.0 - nu) * (1.0 - 2.0 * nu);
    // Depth-positive coordinates: field depth z, pole depth c.
    let z = -x[2];
    let c = -y[2];
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    let zc = z + c;
    let r2 = (dx * dx + dy * dy + zc * zc).sqrt();
    let ir = r2.recip();
    let ir3 = ir * ir * ir;
    let ir5 = ir3 * ir * ir;
    let s = r2 + zc;
    let is = s.recip();
    let cz = c * z;

    // Horizontal force along x (and by symmetry y); displacement with z down.
    let horiz_diag = |d: S| -> S {
        ir + d * d * ir3 * k34 + cz * ir3 * (S::cst(1.0) - d * d * ir * ir * 3.0) * 2.0
            + is * (S::cst(1.0) - d * d * ir * is) * kappa
    };
    let horiz_cross = dx * dy * (ir3 * k34 - cz * ir5 * 6.0 - ir * is * is * kappa);
    let horiz_vert = (z - c) * ir3 * k34 - cz * zc * ir5 * 6.0 + ir * is * kappa;
    let vert_horiz = (z - c) * ir3 * k34 + cz * zc * ir5 * 6.0 - ir * is * kappa;
    let g_zz = ir * (8.0 * (1.0 - nu) * (1.0 - nu) - k34)
        + (zc * zc * k34 - cz * 2.0) * ir3
        + cz * zc * zc * ir5 * 6.0;

    // g[i][j]: displacement i due to force j in the depth-positive frame.
    let g = [
        [horiz_diag(dx), horiz_cross, dx * vert_horiz],
        [horiz_cross, horiz_diag(dy), dy * vert_horiz],
        [dx * horiz_vert, dy * horiz_vert, g_zz],
    ];
    // Flip the vertical axis and the sign of the source normalization.
    let sigma = [1.0, 1.0, -1.0];
    let mut out = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = g[i][j] * (-k * sigma[i] * sigma[j]);
        }
    }
    out
}

fn check_half_space_point(x: &Vec3, strict: bool) -> Result<()> {
    let bad = if strict { x[2] >= 0.0 } else { x[2] > 0.0 };
    if bad || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::AboveSurface {
            x1: x[0],
            x2: x[1],
            x3: x[2],
        });
    }
    Ok(())
}

fn check_separation(x: &Vec3, y: &Vec3) -> Result<f64> {
    let d = (x - y).norm();
    let scale = x.amax().max(y.amax()).max(1.0);
    let guard = SINGULAR_GUARD * scale;
    if d < guard {
        return Err(Error::SingularPoint { distance: d, guard });
    }
    Ok(d)
}

fn dual_to_eval(t: &[[Dual3; 3]; 3]) -> KernelEval {
    KernelEval {
        value: Tensor2::from_fn(|i, j| t[i][j].re),
        gradient: [0, 1, 2].map(|m| Tensor2::from_fn(|i, j| t[i][j].eps[m])),
    }
}

/// Kelvin tensor `Γ(r)` and its gradient with respect to `r`.
///
/// Homogeneous of degree −1 in `r`; symmetric.
pub fn kelvin_gamma(r: &Vec3, p: &LameParameters) -> Result<KernelEval> {
    let rn = r.norm();
    if rn < SINGULAR_GUARD {
        return Err(Error::SingularPoint {
            distance: rn,
            guard: SINGULAR_GUARD,
        });
    }
    let nu = p.poisson_ratio();
    let a = -kelvin_scale(p);
    let inv = 1.0 / rn;
    let inv3 = inv * inv * inv;
    let inv5 = inv3 * inv * inv;
    let c = 3.0 - 4.0 * nu;
    let value = Tensor2::from_fn(|i, j| a * (if i == j { c * inv } else { 0.0 } + r[i] * r[j] * inv3));
    let gradient = [0, 1, 2].map(|m| {
        Tensor2::from_fn(|i, j| {
            let mut v = -3.0 * r[i] * r[j] * r[m] * inv5;
            if i == j {
                v -= c * r[m] * inv3;
            }
            if i == m {
                v += r[j] * inv3;
            }
            if j == m {
                v += r[i] * inv3;
            }
            a * v
        })
    });
    Ok(KernelEval { value, gradient })
}

/// `Ξ(r) = (C ∇̂_y Γ(x − y) e₃)ᵀ` evaluated at `r = x − y`.
///
/// Row `k` is the traction on the plane `{y₃ = const}` of the `k`-th column
/// of `Γ`; for example `Ξ₃₁ = μ(∂Γ₁₃/∂y₃ + ∂Γ₃₃/∂y₁)` and
/// `Ξ₃₃ = λ div Γ^(3) + 2μ ∂Γ₃₃/∂y₃`. Homogeneous of degree −2.
pub fn xi_kernel(r: &Vec3, p: &LameParameters) -> Result<Tensor2> {
    let k = kelvin_gamma(r, p)?;
    // ∂/∂y of Γ(x − y) is −∂/∂r.
    let d = |i: usize, j: usize, m: usize| -k.gradient[m][(i, j)];
    let (lambda, mu) = (p.lambda(), p.mu());
    Ok(Tensor2::from_fn(|row, col| {
        let mut v = mu * (d(col, row, 2) + d(2, row, col));
        if col == 2 {
            let div = d(0, row, 0) + d(1, row, 1) + d(2, row, 2);
            v += lambda * div;
        }
        v
    }))
}

/// Half-space Neumann tensor `N₀(x, y)` for field point `x` (x₃ ≤ 0) and pole
/// `y` (y₃ < 0), with its gradient in `x`.
pub fn mindlin_neumann(x: &Vec3, y: &Vec3, p: &LameParameters) -> Result<KernelEval> {
    check_half_space_point(x, false)?;
    check_half_space_point(y, true)?;
    check_separation(x, y)?;
    Ok(mindlin_unchecked(x, y, p))
}

pub(crate) fn mindlin_unchecked(x: &Vec3, y: &Vec3, p: &LameParameters) -> KernelEval {
    let xs = Dual3::seed([x[0], x[1], x[2]]);
    let ys = [y[0], y[1], y[2]].map(Dual3::cst);
    let r = [xs[0] - ys[0], xs[1] - ys[1], xs[2] - ys[2]];
    let kel = kelvin_tensor(r, p.lambda(), p.mu());
    let img = mindlin_image(xs, ys, p.lambda(), p.mu());
    let mut sum = kel;
    for i in 0..3 {
        for j in 0..3 {
            sum[i][j] = kel[i][j] + img[i][j];
        }
    }
    dual_to_eval(&sum)
}

/// Regular part `R(x, y) = N₀(x, y) − Γ(x − y)` with its gradient in `x`.
pub fn mindlin_remainder(x: &Vec3, y: &Vec3, p: &LameParameters) -> Result<KernelEval> {
    check_half_space_point(x, false)?;
    check_half_space_point(y, true)?;
    let xs = Dual3::seed([x[0], x[1], x[2]]);
    let ys = [y[0], y[1], y[2]].map(Dual3::cst);
    Ok(dual_to_eval(&mindlin_image(xs, ys, p.lambda(), p.mu())))
}

/// `(C ∇̂u) n` for a displacement gradient `grad_u` and unit normal `n`.
pub fn traction(p: &LameParameters, grad_u: &Tensor2, n: &Vec3) -> Result<Vec3> {
    let len = n.norm();
    if (len - 1.0).abs() > 1e-10 {
        return Err(Error::NonUnitNormal(len));
    }
    Ok(stress(p, &strain(grad_u)).mul_vec(n))
}

/// Which part of `N₀ = Γ + R` a double-layer kernel evaluation includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KernelPart {
    Kelvin,
    Image,
}

fn part_tensor<S: Scalar>(x: [S; 3], y: [S; 3], p: &LameParameters, part: KernelPart) -> [[S; 3]; 3] {
    match part {
        KernelPart::Kelvin => {
            let r = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
            kelvin_tensor(r, p.lambda(), p.mu())
        }
        KernelPart::Image => mindlin_image(x, y, p.lambda(), p.mu()),
    }
}

/// Traction columns `t^(k) = (C ∇̂ₓ N^(k)) n` from `g[i][k][m] = ∂N_ik/∂x_m`.
fn traction_columns(g: &[[[f64; 3]; 3]; 3], n: &Vec3, lambda: f64, mu: f64) -> Tensor2 {
    let mut t = Tensor2::zeros();
    for k in 0..3 {
        let div = g[0][k][0] + g[1][k][1] + g[2][k][2];
        for i in 0..3 {
            let mut v = lambda * div * n[i];
            for m in 0..3 {
                v += mu * (g[i][k][m] + g[m][k][i]) * n[m];
            }
            t[(i, k)] = v;
        }
    }
    t
}

/// Double-layer kernel `D(x, y)` such that the displacement at `y` is
/// `∫_S D(x, y) g(x) dσ(x)`; `x` is the surface point with normal `n`.
pub(crate) fn double_layer(x: &Vec3, n: &Vec3, y: &Vec3, p: &LameParameters, part: KernelPart) -> Tensor2 {
    let xs = Dual3::seed([x[0], x[1], x[2]]);
    let ys = [y[0], y[1], y[2]].map(Dual3::cst);
    let nt = part_tensor(xs, ys, p, part);
    let mut g = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            g[i][k] = nt[i][k].eps;
        }
    }
    traction_columns(&g, n, p.lambda(), p.mu()).transpose() * DOUBLE_LAYER_SIGN
}

/// Double-layer kernel and its derivatives with respect to the observation
/// point: returns `(D, [∂D/∂y₁, ∂D/∂y₂, ∂D/∂y₃])`.
pub(crate) fn double_layer_with_gradient(
    x: &Vec3,
    n: &Vec3,
    y: &Vec3,
    p: &LameParameters,
    part: KernelPart,
) -> (Tensor2, [Tensor2; 3]) {
    let (xs, ys) = HyperDual33::seed([x[0], x[1], x[2]], [y[0], y[1], y[2]]);
    let nt = part_tensor(xs, ys, p, part);
    let mut g = [[[0.0; 3]; 3]; 3];
    let mut gy = [[[[0.0; 3]; 3]; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            g[i][k] = nt[i][k].a;
            for m in 0..3 {
                for q in 0..3 {
                    gy[q][i][k][m] = nt[i][k].ab[m][q];
                }
            }
        }
    }
    let (lambda, mu) = (p.lambda(), p.mu());
    let value = traction_columns(&g, n, lambda, mu).transpose() * DOUBLE_LAYER_SIGN;
    let grad = [0, 1, 2].map(|q| traction_columns(&gy[q], n, lambda, mu).transpose() * DOUBLE_LAYER_SIGN);
    (value, grad)
}
