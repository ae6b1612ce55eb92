//! Double-layer forward map from fault slip to displacement.
//!
//! `u(y) = ∫_S D(x, y) g(x) dσ(x)` with `D` from
//! [`crate::greens::double_layer`]; the sign is locked so that the
//! displacement jumps by `g` across `S` in the direction of `n`.
//!
//! The Kelvin part of the kernel is integrated with recursive 4-way facet
//! subdivision near the evaluation point; the half-space image part is
//! smooth and uses the plain rule.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rayon::prelude::*;

use crate::elastic::{LameParameters, Tensor2, Vec3};
use crate::error::{Error, Result};
use crate::greens::{double_layer, double_layer_with_gradient, traction, KernelPart};
use crate::mesh::{SlipField, TriMesh};
use crate::quadrature::{triangle_rule, TriangleRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    /// Full-space kernel `Γ` only.
    Kelvin,
    /// Half-space kernel `N₀ = Γ + R`.
    Mindlin,
}

impl Kernel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kernel::Kelvin => "kelvin",
            Kernel::Mindlin => "mindlin",
        }
    }
}

/// Near-field subdivision rule: a (sub-)facet closer than `ratio` times its
/// longest edge to the evaluation point is split into four, at most
/// `max_levels` times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearField {
    pub ratio: f64,
    pub max_levels: usize,
}

impl NearField {
    /// Rule used by the transmission checks, which evaluate very close to
    /// the surface.
    pub const CHECK: NearField = NearField {
        ratio: 4.0,
        max_levels: 16,
    };
}

impl Default for NearField {
    fn default() -> Self {
        Self {
            ratio: 0.5,
            max_levels: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub kernel: Kernel,
    /// Points of the symmetric triangle rule: 1, 3, 6 or 12.
    pub order: usize,
    pub near: NearField,
}

impl ForwardOptions {
    pub fn new(kernel: Kernel, order: usize) -> Self {
        Self {
            kernel,
            order,
            near: NearField::default(),
        }
    }

    pub fn with_near(self, near: NearField) -> Self {
        Self { near, ..self }
    }
}

/// Observation points, optionally all on the free surface.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSet {
    points: Vec<Vec3>,
    surface: bool,
}

impl StationSet {
    pub fn surface(points: Vec<Vec3>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| p[2] != 0.0) {
            return Err(Error::InvalidInput(format!("surface station {p:?} is not on x3 = 0")));
        }
        Ok(Self { points, surface: true })
    }

    pub fn interior(points: Vec<Vec3>) -> Self {
        Self { points, surface: false }
    }

    /// `n1 × n2` surface grid over `[x_lo, x_hi] × [y_lo, y_hi]`, `x₁` fastest.
    pub fn surface_grid(x: (f64, f64), y: (f64, f64), n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::InvalidInput("grid needs at least two points per axis".into()));
        }
        let mut pts = Vec::with_capacity(n1 * n2);
        for j in 0..n2 {
            for i in 0..n1 {
                let s = i as f64 / (n1 - 1) as f64;
                let t = j as f64 / (n2 - 1) as f64;
                pts.push(Vec3::new(x.0 + s * (x.1 - x.0), y.0 + t * (y.1 - y.0), 0.0));
            }
        }
        Self::surface(pts)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn is_surface(&self) -> bool {
        self.surface
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Displacements at a station set together with how they were computed.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub values: Vec<Vec3>,
    pub kernel: Kernel,
    pub order: usize,
    pub mesh_id: String,
}

/// Content hash of the mesh geometry and connectivity.
pub fn mesh_id(mesh: &TriMesh) -> String {
    let mut h = DefaultHasher::new();
    for v in mesh.vertices() {
        for c in v.iter() {
            c.to_bits().hash(&mut h);
        }
    }
    mesh.triangles().hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Closest point of triangle `t` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, t: &[Vec3; 3]) -> Vec3 {
    let [a, b, c] = *t;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

fn triangle_distance(p: &Vec3, t: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, t)).norm()
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Distance from `y` to the mesh.
pub fn distance_to_mesh(y: &Vec3, mesh: &TriMesh) -> f64 {
    (0..mesh.n_facets())
        .map(|f| triangle_distance(y, &mesh.facet_vertices(f)))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy)]
struct Acc {
    u: Vec3,
    grad: Tensor2,
}

impl Acc {
    fn zero() -> Self {
        Self {
            u: Vec3::zeros(),
            grad: Tensor2::zeros(),
        }
    }

    fn add_scaled(&mut self, o: &Acc, w: f64) {
        self.u += o.u * w;
        self.grad += o.grad * w;
    }
}

fn longest_edge(t: &[Vec3; 3]) -> f64 {
    (t[1] - t[0]).norm().max((t[2] - t[1]).norm()).max((t[0] - t[2]).norm())
}

fn apply_rule<F: Fn(&Vec3) -> Acc>(t: &[Vec3; 3], rule: &TriangleRule, f: &F) -> Acc {
    let area = 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
    let mut acc = Acc::zero();
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let x = t[0] * l[0] + t[1] * l[1] + t[2] * l[2];
        acc.add_scaled(&f(&x), w * area);
    }
    acc
}

fn integrate_near<F: Fn(&Vec3) -> Acc>(
    t: &[Vec3; 3],
    y: &Vec3,
    rule: &TriangleRule,
    near: &NearField,
    level: usize,
    f: &F,
) -> Acc {
    if level < near.max_levels && triangle_distance(y, t) < near.ratio * longest_edge(t) {
        let [a, b, c] = *t;
        let (ab, bc, ca) = ((a + b) * 0.5, (b + c) * 0.5, (c + a) * 0.5);
        let mut acc = Acc::zero();
        for sub in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
            acc.add_scaled(&integrate_near(&sub, y, rule, near, level + 1, f), 1.0);
        }
        acc
    } else {
        apply_rule(t, rule, f)
    }
}

fn check_point(y: &Vec3, mesh: &TriMesh, opts: &ForwardOptions) -> Result<()> {
    if !y.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidInput(format!("evaluation point {y:?} is not finite")));
    }
    if opts.kernel == Kernel::Mindlin && y[2] > 0.0 {
        return Err(Error::AboveSurface {
            x1: y[0],
            x2: y[1],
            x3: y[2],
        });
    }
    let d = distance_to_mesh(y, mesh);
    if d < 1e-6 * mesh.diameter() {
        return Err(Error::OnSurface { distance: d });
    }
    Ok(())
}

fn evaluate(
    y: &Vec3,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
    with_gradient: bool,
) -> Result<Acc> {
    slip.validate(mesh)?;
    check_point(y, mesh, opts)?;
    let rule = triangle_rule(opts.order)?;
    let mut total = Acc::zero();
    for f in 0..mesh.n_facets() {
        let g = slip.values[f];
        if g == Vec3::zeros() {
            continue;
        }
        let n = mesh.normal(f);
        let tri = mesh.facet_vertices(f);
        let integrand = |part: KernelPart| {
            move |x: &Vec3| {
                if with_gradient {
                    let (d, dd) = double_layer_with_gradient(x, &n, y, p, part);
                    Acc {
                        u: d * g,
                        grad: Tensor2::from_columns(&[dd[0] * g, dd[1] * g, dd[2] * g]),
                    }
                } else {
                    Acc {
                        u: double_layer(x, &n, y, p, part) * g,
                        grad: Tensor2::zeros(),
                    }
                }
            }
        };
        total.add_scaled(&integrate_near(&tri, y, &rule, &opts.near, 0, &integrand(KernelPart::Kelvin)), 1.0);
        if opts.kernel == Kernel::Mindlin {
            total.add_scaled(&apply_rule(&tri, &rule, &integrand(KernelPart::Image)), 1.0);
        }
    }
    Ok(total)
}

/// Displacement at `y` generated by `slip` on `mesh`.
pub fn displacement_at(
    y: &Vec3,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
) -> Result<Vec3> {
    Ok(evaluate(y, mesh, slip, p, opts, false)?.u)
}

/// Displacement and its gradient `∂u_i/∂y_m` at `y`, from analytic kernel
/// derivatives.
pub fn displacement_gradient_at(
    y: &Vec3,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
) -> Result<(Vec3, Tensor2)> {
    let acc = evaluate(y, mesh, slip, p, opts, true)?;
    Ok((acc.u, acc.grad))
}

/// Displacements at many points, evaluated in parallel; output order
/// matches input order.
pub fn displacements(
    points: &[Vec3],
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
) -> Result<Vec<Vec3>> {
    points.par_iter().map(|y| displacement_at(y, mesh, slip, p, opts)).collect()
}

/// Half-space displacements at surface stations.
pub fn surface_displacement(
    stations: &StationSet,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    order: usize,
) -> Result<DisplacementField> {
    if !stations.is_surface() {
        return Err(Error::InvalidInput("stations must be flagged as surface stations".into()));
    }
    let opts = ForwardOptions::new(Kernel::Mindlin, order);
    Ok(DisplacementField {
        values: displacements(stations.points(), mesh, slip, p, &opts)?,
        kernel: Kernel::Mindlin,
        order,
        mesh_id: mesh_id(mesh),
    })
}

/// Fit of `c₀ + c₁ εˢ` to samples along an ε-ladder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFit {
    pub limit: f64,
    pub coefficient: f64,
    pub exponent: f64,
    pub rss: f64,
}

fn linear_fit_given_exponent(eps: &[f64], vals: &[f64], s: f64) -> (f64, f64, f64) {
    let t: Vec<f64> = eps.iter().map(|e| e.powf(s)).collect();
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let vm = vals.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    let stv: f64 = t.iter().zip(vals).map(|(x, v)| (x - tm) * (v - vm)).sum();
    let c1 = if stt > 0.0 { stv / stt } else { 0.0 };
    let c0 = vm - c1 * tm;
    let rss = t.iter().zip(vals).map(|(x, v)| (v - c0 - c1 * x).powi(2)).sum();
    (c0, c1, rss)
}

/// Least-squares fit of `c₀ + c₁ εˢ` with `s ∈ [s_min, s_max]` found by a
/// coarse scan followed by golden-section refinement.
pub fn fit_power_limit(eps: &[f64], vals: &[f64], s_min: f64, s_max: f64) -> PowerFit {
    let rss = |s: f64| linear_fit_given_exponent(eps, vals, s).2;
    let steps = 64;
    let grid: Vec<f64> = (0..=steps).map(|i| s_min + (s_max - s_min) * i as f64 / steps as f64).collect();
    let best = (0..grid.len())
        .min_by(|&i, &j| rss(grid[i]).total_cmp(&rss(grid[j])))
        .unwrap_or(0);
    let mut lo = grid[best.saturating_sub(1)];
    let mut hi = grid[(best + 1).min(steps)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if rss(a) <= rss(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s = 0.5 * (lo + hi);
    let (c0, c1, r) = linear_fit_given_exponent(eps, vals, s);
    PowerFit {
        limit: c0,
        coefficient: c1,
        exponent: s,
        rss: r,
    }
}

fn check_ladder(eps: &[f64]) -> Result<()> {
    if eps.len() < 4 {
        return Err(Error::DegenerateLadder(format!("{} values, need at least 4", eps.len())));
    }
    if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::DegenerateLadder("epsilons must be positive and strictly descending".into()));
    }
    if eps[0] / eps[eps.len() - 1] < 100.0 {
        return Err(Error::DegenerateLadder("ladder spans less than two decades".into()));
    }
    Ok(())
}

/// Facet containing `q` (closest facet) and the distance from `q` to the
/// nearest edge across which the slip or the normal changes, including the
/// fault boundary.
fn locate(q: &Vec3, mesh: &TriMesh, slip: &SlipField) -> (usize, f64) {
    let facet = (0..mesh.n_facets())
        .min_by(|&a, &b| {
            triangle_distance(q, &mesh.facet_vertices(a)).total_cmp(&triangle_distance(q, &mesh.facet_vertices(b)))
        })
        .unwrap_or(0);
    let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, t) in mesh.triangles().iter().enumerate() {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            by_edge.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut dist = f64::INFINITY;
    for ((a, b), fs) in &by_edge {
        let critical = match fs.as_slice() {
            [f, g] => {
                let (gf, gg) = (slip.values[*f], slip.values[*g]);
                (gf - gg).norm() > 1e-12 * (1.0 + gf.norm()) || (mesh.normal(*f) - mesh.normal(*g)).norm() > 1e-12
            }
            _ => true,
        };
        if critical {
            dist = dist.min(segment_distance(q, &mesh.vertices()[*a], &mesh.vertices()[*b]));
        }
    }
    (facet, dist)
}

struct Sided {
    facet: usize,
    n: Vec3,
}

fn prepare_check(q: &Vec3, mesh: &TriMesh, slip: &SlipField, eps: &[f64]) -> Result<Sided> {
    check_ladder(eps)?;
    slip.validate(mesh)?;
    let (facet, edge_dist) = locate(q, mesh, slip);
    let required = 0.25 * mesh.facet_size(facet);
    if edge_dist < required {
        return Err(Error::TooClose {
            distance: edge_dist,
            required,
        });
    }
    if eps[0] > 0.5 * edge_dist {
        return Err(Error::TooClose {
            distance: edge_dist,
            required: 2.0 * eps[0],
        });
    }
    let on = triangle_distance(q, &mesh.facet_vertices(facet));
    if on > 1e-9 * mesh.diameter() {
        return Err(Error::InvalidInput(format!("point is {on:e} away from the fault")));
    }
    Ok(Sided {
        facet,
        n: mesh.normal(facet),
    })
}

/// Displacement jump recovered along an ε-ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpReport {
    pub facet: usize,
    /// Configured slip on the facet containing the probe point.
    pub slip: Vec3,
    /// `(ε, u(q + εn) − u(q − εn))` per ladder rung.
    pub samples: Vec<(f64, Vec3)>,
    pub fits: [PowerFit; 3],
    pub extrapolated: Vec3,
    /// `|extrapolated − g| / |g|`, or the absolute error for zero slip.
    pub error: f64,
}

fn fit_components(samples: &[(f64, Vec3)]) -> [PowerFit; 3] {
    let eps: Vec<f64> = samples.iter().map(|s| s.0).collect();
    [0, 1, 2].map(|i| {
        let v: Vec<f64> = samples.iter().map(|s| s.1[i]).collect();
        fit_power_limit(&eps, &v, 0.25, 3.0)
    })
}

/// Recovers `[u]` at the fault point `q` by extrapolating the two-sided
/// difference to ε → 0 and compares it with the configured slip.
pub fn jump_check(
    q: &Vec3,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
    eps: &[f64],
) -> Result<JumpReport> {
    let s = prepare_check(q, mesh, slip, eps)?;
    let samples = eps
        .iter()
        .map(|&e| {
            let up = displacement_at(&(q + s.n * e), mesh, slip, p, opts)?;
            let dn = displacement_at(&(q - s.n * e), mesh, slip, p, opts)?;
            Ok((e, up - dn))
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = fit_components(&samples);
    let extrapolated = Vec3::new(fits[0].limit, fits[1].limit, fits[2].limit);
    let g = slip.values[s.facet];
    let err = (extrapolated - g).norm();
    Ok(JumpReport {
        facet: s.facet,
        slip: g,
        samples,
        fits,
        extrapolated,
        error: if g.norm() > 0.0 { err / g.norm() } else { err },
    })
}

/// Traction jump recovered along an ε-ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct TractionJumpReport {
    pub facet: usize,
    /// `(ε, t(q + εn) − t(q − εn))` per ladder rung.
    pub samples: Vec<(f64, Vec3)>,
    pub extrapolated_jump: Vec3,
    /// Mean of the two one-sided tractions, extrapolated to ε → 0.
    pub traction: Vec3,
    /// `|jump| / |traction|`, zero when both vanish.
    pub relative: f64,
}

/// Extrapolated jump of `(C∇̂u)n` across the fault at `q`.
pub fn traction_continuity_check(
    q: &Vec3,
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
    eps: &[f64],
) -> Result<TractionJumpReport> {
    let s = prepare_check(q, mesh, slip, eps)?;
    let mut jumps = Vec::with_capacity(eps.len());
    let mut means = Vec::with_capacity(eps.len());
    for &e in eps {
        let (_, gu) = displacement_gradient_at(&(q + s.n * e), mesh, slip, p, opts)?;
        let (_, gd) = displacement_gradient_at(&(q - s.n * e), mesh, slip, p, opts)?;
        let tu = traction(p, &gu, &s.n)?;
        let td = traction(p, &gd, &s.n)?;
        jumps.push((e, tu - td));
        means.push((e, (tu + td) * 0.5));
    }
    let jf = fit_components(&jumps);
    let mf = fit_components(&means);
    let jump = Vec3::new(jf[0].limit, jf[1].limit, jf[2].limit);
    let t = Vec3::new(mf[0].limit, mf[1].limit, mf[2].limit);
    let relative = if jump.norm() == 0.0 { 0.0 } else { jump.norm() / t.norm() };
    Ok(TractionJumpReport {
        facet: s.facet,
        samples: jumps,
        extrapolated_jump: jump,
        traction: t,
        relative,
    })
}

/// Largest `|(C∇̂u)e₃| / ((|λ| + 2μ)|∇u|)` over surface points; points with
/// vanishing gradient contribute zero.
pub fn free_surface_traction_check(
    points: &[Vec3],
    mesh: &TriMesh,
    slip: &SlipField,
    p: &LameParameters,
    opts: &ForwardOptions,
) -> Result<f64> {
    if let Some(y) = points.iter().find(|y| y[2] != 0.0) {
        return Err(Error::InvalidInput(format!("point {y:?} is not on x3 = 0")));
    }
    let scale = p.lambda().abs() + 2.0 * p.mu();
    let vals = points
        .par_iter()
        .map(|y| {
            let (_, g) = displacement_gradient_at(y, mesh, slip, p, opts)?;
            let t = traction(p, &g, &Vec3::z())?;
            Ok(if g.norm() == 0.0 { 0.0 } else { t.norm() / (scale * g.norm()) })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{rect_to_mesh, SlipMode};
    use crate::rect::{u_gamma_closed_form, RectDislocation};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> LameParameters {
        LameParameters::new(1.0, 1.0).unwrap()
    }

    fn scene(n: usize, g: Vec3) -> (RectDislocation, TriMesh, SlipField) {
        let r = RectDislocation::new(-0.5, 0.5, -0.5, 0.5, 1.0, g).unwrap();
        let m = rect_to_mesh(&r, n, n).unwrap();
        let s = SlipField::uniform(&m, g, SlipMode::Oblique);
        (r, m, s)
    }

    #[test]
    fn zero_slip_gives_zero() {
        let (_, m, s) = scene(4, Vec3::zeros());
        for k in [Kernel::Kelvin, Kernel::Mindlin] {
            let u = displacement_at(&Vec3::new(0.2, 0.1, -0.3), &m, &s, &params(), &ForwardOptions::new(k, 6));
            assert_eq!(u.unwrap(), Vec3::zeros());
        }
    }

    #[test]
    fn kelvin_matches_rectangle_closed_form() {
        let g = Vec3::new(1.0, -0.4, 0.3);
        let (r, m, s) = scene(32, g);
        let p = params();
        let opts = ForwardOptions::new(Kernel::Kelvin, 6);
        for y in [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.8, -0.3, -0.6), Vec3::new(0.1, 0.2, -1.3)] {
            let u = displacement_at(&y, &m, &s, &p, &opts).unwrap();
            // The forward map carries the opposite sign of u_Γ.
            let reference = -u_gamma_closed_form(&y, &r, &p).unwrap();
            assert!((u - reference).norm() <= 1e-4 * reference.norm(), "{y:?}: {u:?} vs {reference:?}");
        }
    }

    #[test]
    fn additive_over_submeshes() {
        let (_, m, s) = scene(4, Vec3::new(0.3, 1.0, 0.0));
        let half: Vec<usize> = (0..m.n_facets() / 2).collect();
        let rest: Vec<usize> = (m.n_facets() / 2..m.n_facets()).collect();
        let (a, b) = (m.submesh(&half).unwrap(), m.submesh(&rest).unwrap());
        let p = params();
        let opts = ForwardOptions::new(Kernel::Mindlin, 6);
        let y = Vec3::new(0.7, 0.2, 0.0);
        let whole = displacement_at(&y, &m, &s, &p, &opts).unwrap();
        let g = s.values[0];
        let ua = displacement_at(&y, &a, &SlipField::uniform(&a, g, SlipMode::Oblique), &p, &opts).unwrap();
        let ub = displacement_at(&y, &b, &SlipField::uniform(&b, g, SlipMode::Oblique), &p, &opts).unwrap();
        assert_relative_eq!(whole, ua + ub, epsilon = 1e-13 * whole.norm());
    }

    #[test]
    fn rejects_points_on_the_fault() {
        let (_, m, s) = scene(2, Vec3::x());
        let opts = ForwardOptions::new(Kernel::Mindlin, 3);
        assert!(matches!(
            displacement_at(&Vec3::new(0.1, 0.1, -1.0), &m, &s, &params(), &opts),
            Err(Error::OnSurface { .. })
        ));
        assert!(matches!(
            displacement_at(&Vec3::new(0.1, 0.1, 0.5), &m, &s, &params(), &opts),
            Err(Error::AboveSurface { .. })
        ));
    }

    #[test]
    fn gradient_matches_differences() {
        let (_, m, s) = scene(3, Vec3::new(0.5, 1.0, -0.2));
        let p = LameParameters::new(2.0, 0.7).unwrap();
        let y = Vec3::new(0.4, -0.9, -0.5);
        for k in [Kernel::Kelvin, Kernel::Mindlin] {
            let opts = ForwardOptions::new(k, 6);
            let (u, g) = displacement_gradient_at(&y, &m, &s, &p, &opts).unwrap();
            assert_relative_eq!(u, displacement_at(&y, &m, &s, &p, &opts).unwrap(), epsilon = 1e-14);
            let h = 1e-5;
            for q in 0..3 {
                let fd = (displacement_at(&(y + Vec3::ith(q, h)), &m, &s, &p, &opts).unwrap()
                    - displacement_at(&(y - Vec3::ith(q, h)), &m, &s, &p, &opts).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(g.column(q).into_owned(), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn sign_convention_recovers_slip() {
        let g = Vec3::new(1.0, 0.5, -0.25);
        let (_, m, s) = scene(4, g);
        let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let p = params();
        let mut limits = Vec::new();
        for k in [Kernel::Kelvin, Kernel::Mindlin] {
            let opts = ForwardOptions::new(k, 6).with_near(NearField::CHECK);
            let rep = jump_check(&Vec3::new(0.0, 0.0, -1.0), &m, &s, &p, &opts, &eps).unwrap();
            assert!(rep.error < 1e-3, "{k:?}: {rep:?}");
            limits.push(rep.extrapolated);
        }
        assert_relative_eq!(limits[0], limits[1], epsilon = 1e-3);
        let reversed = m.reversed();
        let opts = ForwardOptions::new(Kernel::Kelvin, 6).with_near(NearField::CHECK);
        let rep = jump_check(&Vec3::new(0.0, 0.0, -1.0), &reversed, &s, &p, &opts, &eps).unwrap();
        assert!(rep.error < 1e-3);
    }

    #[test]
    fn zero_slip_checks_vanish() {
        let (_, m, s) = scene(2, Vec3::zeros());
        let eps = [1e-1, 1e-2, 5e-3, 1e-3];
        let opts = ForwardOptions::new(Kernel::Mindlin, 3);
        let p = params();
        let q = Vec3::new(0.0, 0.0, -1.0);
        assert_eq!(jump_check(&q, &m, &s, &p, &opts, &eps).unwrap().extrapolated, Vec3::zeros());
        assert_eq!(traction_continuity_check(&q, &m, &s, &p, &opts, &eps).unwrap().relative, 0.0);
        let pts = [Vec3::new(0.3, 0.1, 0.0)];
        assert_eq!(free_surface_traction_check(&pts, &m, &s, &p, &opts).unwrap(), 0.0);
    }

    #[test]
    fn checks_reject_points_near_slip_edges() {
        let (_, m, s) = scene(4, Vec3::x());
        let eps = [1e-2, 1e-3, 5e-4, 1e-4];
        let opts = ForwardOptions::new(Kernel::Kelvin, 3);
        let near_boundary = Vec3::new(0.49, 0.0, -1.0);
        assert!(matches!(
            jump_check(&near_boundary, &m, &s, &params(), &opts, &eps),
            Err(Error::TooClose { .. })
        ));
        assert!(matches!(
            jump_check(&Vec3::new(0.0, 0.0, -1.0), &m, &s, &params(), &opts, &[1e-2, 1e-3]),
            Err(Error::DegenerateLadder(_))
        ));
    }

    #[test]
    fn traction_jump_is_translation_invariant() {
        let g = Vec3::new(1.0, 0.0, 0.0);
        let (_, m, s) = scene(4, g);
        let p = params();
        let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let opts = ForwardOptions::new(Kernel::Kelvin, 6).with_near(NearField::CHECK);
        let q = Vec3::new(0.0, 0.0, -1.0);
        let a = traction_continuity_check(&q, &m, &s, &p, &opts, &eps).unwrap();
        assert!(a.relative < 1e-2, "{a:?}");
        let shift = Vec3::new(3.0, -2.0, -0.5);
        let mt = m.translated(&shift).unwrap();
        let b = traction_continuity_check(&(q + shift), &mt, &s, &p, &opts, &eps).unwrap();
        assert_relative_eq!(a.traction, b.traction, epsilon = 1e-6 * a.traction.norm());
        assert!((a.relative - b.relative).abs() < 1e-3);
    }

    #[test]
    fn free_surface_is_traction_free_only_with_mindlin() {
        let (_, m, s) = scene(4, Vec3::new(1.0, 0.3, 0.2));
        let p = LameParameters::new(1.5, 0.8).unwrap();
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(-1.0 + 0.5 * i as f64, 0.3, 0.0)).collect();
        let mindlin = free_surface_traction_check(&pts, &m, &s, &p, &ForwardOptions::new(Kernel::Mindlin, 6)).unwrap();
        let kelvin = free_surface_traction_check(&pts, &m, &s, &p, &ForwardOptions::new(Kernel::Kelvin, 6)).unwrap();
        assert!(mindlin <= 1e-6, "{mindlin}");
        assert!(kelvin > 10.0 * mindlin);
    }

    #[test]
    fn surface_displacement_properties() {
        let (_, m, s) = scene(4, Vec3::new(1.0, 0.0, 0.0));
        let p = params();
        let st = StationSet::surface_grid((-1.0, 1.0), (-1.0, 1.0), 4, 3).unwrap();
        let a = surface_displacement(&st, &m, &s, &p, 6).unwrap();
        let b = surface_displacement(&st, &m, &s.scaled(2.0), &p, 6).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(*x * 2.0, *y);
        }
        let mut rev = st.points().to_vec();
        rev.reverse();
        let c = surface_displacement(&StationSet::surface(rev).unwrap(), &m, &s, &p, 6).unwrap();
        for (x, y) in a.values.iter().zip(c.values.iter().rev()) {
            assert_eq!(x, y);
        }
        assert!(surface_displacement(&StationSet::interior(vec![Vec3::zeros()]), &m, &s, &p, 6).is_err());
    }

    #[test]
    fn far_stations_are_small() {
        let (_, m, s) = scene(4, Vec3::new(1.0, 0.0, 0.0));
        let p = params();
        let near = StationSet::surface_grid((-1.5, 1.5), (-1.5, 1.5), 13, 13).unwrap();
        let peak = surface_displacement(&near, &m, &s, &p, 6)
            .unwrap()
            .values
            .iter()
            .map(|u| u.norm())
            .fold(0.0, f64::max);
        // Footprint half-width 0.5, depth 1: stations at ≥ 20 depths from it.
        let far: Vec<Vec3> = (0..16)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 8.0;
                Vec3::new(20.5 * a.cos(), 20.5 * a.sin(), 0.0)
            })
            .collect();
        let far = surface_displacement(&StationSet::surface(far).unwrap(), &m, &s, &p, 6).unwrap();
        for u in &far.values {
            assert!(u.norm() < 1e-3 * peak, "{} vs peak {peak}", u.norm());
        }
    }

    #[test]
    fn refinement_converges() {
        let p = params();
        let y = Vec3::new(0.3, 0.2, 0.0);
        // A tilted patch so the facets are not aligned with the kernel.
        let mk = |n: usize| {
            let m = crate::mesh::planar_patch(
                Vec3::new(-0.5, -0.5, -1.2),
                Vec3::new(1.0, 0.0, 0.3),
                Vec3::new(0.0, 1.0, 0.2),
                n,
                n,
            )
            .unwrap();
            let s = SlipField::uniform(&m, Vec3::new(1.0, 0.0, 0.0), SlipMode::Oblique);
            displacement_at(&y, &m, &s, &p, &ForwardOptions::new(Kernel::Mindlin, 1)).unwrap()
        };
        let (a, b, c) = (mk(2), mk(4), mk(8));
        let order = ((a - b).norm() / (b - c).norm()).log2();
        assert!(order >= 1.0, "order {order}");
    }

    #[test]
    fn power_fit_recovers_model() {
        let eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
        let v: Vec<f64> = eps.iter().map(|e: &f64| 2.5 - 0.7 * e.powf(1.3)).collect();
        let fit = fit_power_limit(&eps, &v, 0.25, 3.0);
        assert_relative_eq!(fit.limit, 2.5, epsilon = 1e-9);
        assert_relative_eq!(fit.exponent, 1.3, epsilon = 1e-4);
    }

    #[test]
    fn closest_point_cases() {
        let t = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert_relative_eq!(
            closest_point_on_triangle(&Vec3::new(0.2, 0.2, 1.0), &t),
            Vec3::new(0.2, 0.2, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(closest_point_on_triangle(&Vec3::new(-1.0, -1.0, 0.0), &t), Vec3::zeros());
        assert_relative_eq!(
            closest_point_on_triangle(&Vec3::new(1.0, 1.0, 0.0), &t),
            Vec3::new(0.5, 0.5, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(closest_point_on_triangle(&Vec3::new(0.5, -1.0, 0.3), &t), Vec3::new(0.5, 0.0, 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn forward_map_is_linear(
            g1 in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 8),
            g2 in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 8),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let (_, m, _) = scene(2, Vec3::x());
            let s1 = SlipField::new(g1.into_iter().map(Vec3::from).collect(), SlipMode::Oblique);
            let s2 = SlipField::new(g2.into_iter().map(Vec3::from).collect(), SlipMode::Oblique);
            let p = params();
            let opts = ForwardOptions::new(Kernel::Mindlin, 6);
            let y = Vec3::new(0.3, -0.6, 0.0);
            let lhs = displacement_at(&y, &m, &s1.combined(a, &s2, b), &p, &opts).unwrap();
            let rhs = displacement_at(&y, &m, &s1, &p, &opts).unwrap() * a
                + displacement_at(&y, &m, &s2, &p, &opts).unwrap() * b;
            let scale = displacement_at(&y, &m, &s1, &p, &opts).unwrap().norm() * a.abs()
                + displacement_at(&y, &m, &s2, &p, &opts).unwrap().norm() * b.abs();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale.max(1e-300));
        }
    }
}
