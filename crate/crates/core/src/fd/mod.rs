//! Independent volumetric oracle for the fault problem.
//!
//! The distributional source `div(C (g ⊗ n) δ_S)` is spread onto a regular
//! grid on the truncated box `(−L, L)² × (−D, 0)` and the resulting
//! elliptic system is solved with a trilinear finite-element discretization
//! of `div(C ∇̂ u)`. Nothing here uses Green's functions, so agreement with
//! the boundary-integral forward map is a genuine cross-check.

mod operator;
mod solver;

use std::collections::BTreeMap;
use std::io::Write;

pub use operator::{assemble_operator, Operator};
pub use solver::{solve_stiffness, Multigrid, SolveStats, SolverOptions};

use crate::elastic::{LameField, Vec3};
use crate::error::{Error, Result};
use crate::forward::distance_to_mesh;
use crate::mesh::{SlipField, TriMesh};
use crate::quadrature::triangle_rule;

/// Regular node grid on `[−L, L]² × [−D, 0]` with spacing `h`.
///
/// Node `(i, j, k)` sits at `(−L + ih, −L + jh, −D + kh)`; the plane
/// `k = nz` is the traction-free surface and every other face is clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    depth: f64,
    h: f64,
    cells: [usize; 3],
}

impl GridSpec {
    /// Grid with spacing `h`; `2L / h` and `D / h` must be integers.
    pub fn new(half_width: f64, depth: f64, h: f64) -> Result<Self> {
        if !(half_width > 0.0 && depth > 0.0 && h > 0.0) || !(half_width.is_finite() && depth.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "extents and spacing must be positive (L = {half_width}, D = {depth}, h = {h})"
            )));
        }
        let count = |len: f64| -> Result<usize> {
            let n = (len / h).round();
            if (n * h - len).abs() > 1e-9 * len || n < 2.0 {
                return Err(Error::InvalidGrid(format!("extent {len} is not a multiple (>= 2) of h = {h}")));
            }
            Ok(n as usize)
        };
        let n = count(2.0 * half_width)?;
        let nz = count(depth)?;
        Ok(Self {
            half_width,
            depth,
            h,
            cells: [n, n, nz],
        })
    }

    /// `n` cells per axis on the cube of half-width `L` and depth `2L`.
    pub fn cubic(half_width: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 cells per axis, got {n}")));
        }
        Self::new(half_width, 2.0 * half_width, 2.0 * half_width / n as f64)
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn depth(&self) -> f64 {
        self.depth
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> [usize; 3] {
        self.cells
    }

    pub fn n_nodes(&self) -> usize {
        let [nx, ny, nz] = self.cells;
        (nx + 1) * (ny + 1) * (nz + 1)
    }

    pub fn node_id(&self, i: usize, j: usize, k: usize) -> usize {
        let [nx, ny, _] = self.cells;
        (k * (ny + 1) + j) * (nx + 1) + i
    }

    pub fn node_ijk(&self, id: usize) -> [usize; 3] {
        let [nx, ny, _] = self.cells;
        let plane = (nx + 1) * (ny + 1);
        [id % (nx + 1), (id % plane) / (nx + 1), id / plane]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.h;
        Vec3::new(
            -self.half_width + i as f64 * h,
            -self.half_width + j as f64 * h,
            // The surface plane is exactly zero.
            if k == self.cells[2] { 0.0 } else { -self.depth + k as f64 * h },
        )
    }

    pub fn cell_centroid(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.h;
        Vec3::new(
            -self.half_width + (i as f64 + 0.5) * h,
            -self.half_width + (j as f64 + 0.5) * h,
            -self.depth + (k as f64 + 0.5) * h,
        )
    }

    /// Whether the node carries unknowns (not on a clamped face).
    pub fn is_unknown(&self, i: usize, j: usize, k: usize) -> bool {
        let [nx, ny, _] = self.cells;
        (1..nx).contains(&i) && (1..ny).contains(&j) && k >= 1
    }

    /// Global dof indices of all unknowns, node-major.
    pub fn unknown_dofs(&self) -> Vec<usize> {
        let [nx, ny, nz] = self.cells;
        let mut out = Vec::with_capacity(3 * (nx - 1) * (ny - 1) * nz);
        for k in 1..=nz {
            for j in 1..ny {
                for i in 1..nx {
                    let id = self.node_id(i, j, k);
                    out.extend([3 * id, 3 * id + 1, 3 * id + 2]);
                }
            }
        }
        out
    }

    pub(crate) fn zero_dirichlet(&self, v: &mut [f64]) {
        let [nx, ny, nz] = self.cells;
        let plane = 3 * (nx + 1) * (ny + 1);
        v[..plane].fill(0.0);
        for k in 1..=nz {
            for j in 0..=ny {
                let row = 3 * self.node_id(0, j, k);
                if j == 0 || j == ny {
                    v[row..row + 3 * (nx + 1)].fill(0.0);
                } else {
                    v[row..row + 3].fill(0.0);
                    v[row + 3 * nx..row + 3 * nx + 3].fill(0.0);
                }
            }
        }
    }

    /// The grid with doubled spacing, when every cell count is even and
    /// at least eight.
    pub fn coarsened(&self) -> Option<Self> {
        if self.cells.iter().all(|&n| n % 2 == 0 && n >= 8) {
            Some(Self {
                half_width: self.half_width,
                depth: self.depth,
                h: 2.0 * self.h,
                cells: self.cells.map(|n| n / 2),
            })
        } else {
            None
        }
    }

    /// Require every fault vertex to keep `4h` from the truncation faces
    /// and `2h` from the free surface.
    pub fn check_fault_clearance(&self, mesh: &TriMesh) -> Result<()> {
        let (l, d, h) = (self.half_width, self.depth, self.h);
        for (idx, v) in mesh.vertices().iter().enumerate() {
            let lateral = (l - v[0].abs()).min(l - v[1].abs());
            let bottom = v[2] + d;
            let top = -v[2];
            if lateral < 4.0 * h || bottom < 4.0 * h || top < 2.0 * h {
                return Err(Error::InvalidGrid(format!(
                    "fault vertex {idx} at ({}, {}, {}) violates clearance: lateral {lateral:.4}, bottom {bottom:.4} (need {:.4}), surface {top:.4} (need {:.4})",
                    v[0],
                    v[1],
                    v[2],
                    4.0 * h,
                    2.0 * h
                )));
            }
        }
        Ok(())
    }

    /// Trilinear interpolation of a nodal field at `x`.
    pub fn interpolate(&self, field: &[f64], x: &Vec3) -> Result<Vec3> {
        let rel = [
            (x[0] + self.half_width) / self.h,
            (x[1] + self.half_width) / self.h,
            (x[2] + self.depth) / self.h,
        ];
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let n = self.cells[a] as f64;
            if !(rel[a] >= -1e-9 && rel[a] <= n + 1e-9) {
                return Err(Error::InvalidGeometry(format!(
                    "point ({}, {}, {}) lies outside the grid box",
                    x[0], x[1], x[2]
                )));
            }
            let r = rel[a].clamp(0.0, n);
            let b = (r.floor() as usize).min(self.cells[a] - 1);
            base[a] = b;
            t[a] = r - b as f64;
        }
        let mut out = Vec3::zeros();
        for l in 0..8 {
            let o = operator::local_offset(l);
            let w: f64 = (0..3).map(|a| if o[a] == 1 { t[a] } else { 1.0 - t[a] }).product();
            if w == 0.0 {
                continue;
            }
            let id = 3 * self.node_id(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
            out += w * Vec3::new(field[id], field[id + 1], field[id + 2]);
        }
        Ok(out)
    }

    /// Surface nodes at least `8h` from the lateral faces and `4h` from
    /// the fault, in node order. Only every `stride`-th node per axis is
    /// kept (counted from the box corner), so coarser grids of the same box
    /// can be sampled at identical points.
    pub fn probe_points(&self, mesh: &TriMesh, stride: usize) -> Vec<Vec3> {
        let stride = stride.max(1);
        let [nx, ny, nz] = self.cells;
        let (l, h) = (self.half_width, self.h);
        let mut out = Vec::new();
        for j in (0..=ny).step_by(stride) {
            for i in (0..=nx).step_by(stride) {
                let x = self.node_position(i, j, nz);
                if l - x[0].abs() >= 8.0 * h - 1e-12 && l - x[1].abs() >= 8.0 * h - 1e-12 && distance_to_mesh(&x, mesh) >= 4.0 * h {
                    out.push(x);
                }
            }
        }
        out
    }
}

/// Moment tensor `C(g ⊗ n)` for frozen coefficients.
fn moment(lambda: f64, mu: f64, g: &Vec3, n: &Vec3) -> [[f64; 3]; 3] {
    let gn = g.dot(n);
    let mut m = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] = mu * (g[a] * n[b] + n[a] * g[b]) + if a == b { lambda * gn } else { 0.0 };
        }
    }
    m
}

/// Nodal force density approximating `div(C(g ⊗ n) δ_S)`.
///
/// The moment density is spread with the trilinear tent of half-width `h`
/// and then differenced centrally, so the total force vanishes.
pub fn discretize_fault_source(mesh: &TriMesh, slip: &SlipField, field: &LameField, grid: &GridSpec) -> Result<Vec<f64>> {
    slip.validate(mesh)?;
    grid.check_fault_clearance(mesh)?;
    let rule = triangle_rule(3)?;
    let (l, d, h) = (grid.half_width, grid.depth, grid.h);
    let vol = h * h * h;
    let mut density: BTreeMap<usize, [[f64; 3]; 3]> = BTreeMap::new();
    for f in 0..mesh.n_facets() {
        let g = slip.values[f];
        if g == Vec3::zeros() {
            continue;
        }
        let n = mesh.normal(f);
        let [a, b, c] = mesh.facet_vertices(f);
        let k = ((4.0 * mesh.facet_size(f) / h).ceil() as usize).max(1);
        let sub_area = mesh.area(f) / (k * k) as f64;
        let at = |i: usize, j: usize| a + (b - a) * (i as f64 / k as f64) + (c - a) * (j as f64 / k as f64);
        let mut subs = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k - i {
                subs.push([at(i, j), at(i + 1, j), at(i, j + 1)]);
                if i + j + 1 < k {
                    subs.push([at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                }
            }
        }
        for t in &subs {
            for (bary, w) in rule.points.iter().zip(&rule.weights) {
                let x = t[0] * bary[0] + t[1] * bary[1] + t[2] * bary[2];
                let p = field.at(&x)?;
                let m = moment(p.lambda(), p.mu(), &g, &n);
                let weight = w * sub_area / vol;
                let rel = [(x[0] + l) / h, (x[1] + l) / h, (x[2] + d) / h];
                let base = rel.map(|r| r.floor() as usize);
                let frac = [0, 1, 2].map(|a| rel[a] - base[a] as f64);
                for corner in 0..8 {
                    let o = operator::local_offset(corner);
                    let phi: f64 = (0..3).map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
                    if phi == 0.0 {
                        continue;
                    }
                    let id = grid.node_id(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
                    let e = density.entry(id).or_insert([[0.0; 3]; 3]);
                    for r in 0..3 {
                        for s in 0..3 {
                            e[r][s] += weight * phi * m[r][s];
                        }
                    }
                }
            }
        }
    }
    let mut force = vec![0.0; 3 * grid.n_nodes()];
    let nodes = grid.cells.map(|n| n + 1);
    for (&id, m) in &density {
        let ijk = grid.node_ijk(id);
        for axis in 0..3 {
            let mut lo = ijk;
            let mut hi = ijk;
            // Clearance keeps the support away from the box faces.
            if ijk[axis] == 0 || ijk[axis] + 1 >= nodes[axis] {
                return Err(Error::InvalidGrid("fault source reaches the grid boundary".into()));
            }
            lo[axis] -= 1;
            hi[axis] += 1;
            let (lo, hi) = (grid.node_id(lo[0], lo[1], lo[2]), grid.node_id(hi[0], hi[1], hi[2]));
            for a in 0..3 {
                let v = m[a][axis] / (2.0 * h);
                force[3 * lo + a] += v;
                force[3 * hi + a] -= v;
            }
        }
    }
    Ok(force)
}

/// Nodal displacements from a grid solve.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub grid: GridSpec,
    /// Node-major `[u1, u2, u3]` triples; clamped nodes hold zero.
    pub u: Vec<f64>,
    /// Final relative residual of the linear solve.
    pub residual: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Stiffness right-hand side for the force density `f`: each node's share
/// of the box volume is `h³`, halved on the free surface.
pub fn load_vector(grid: &GridSpec, force: &[f64]) -> Vec<f64> {
    let vol = grid.h.powi(3);
    let nz = grid.cells[2];
    let mut b: Vec<f64> = force
        .iter()
        .enumerate()
        .map(|(dof, f)| {
            let [_, _, k] = grid.node_ijk(dof / 3);
            let w = if k == nz { 0.5 * vol } else { vol };
            -w * f
        })
        .collect();
    grid.zero_dirichlet(&mut b);
    b
}

/// Solve `div(C ∇̂ u) = f` on the operator's grid.
pub fn solve(op: &Operator, force: &[f64], opts: &SolverOptions) -> Result<DiscreteSolution> {
    let grid = op.grid().clone();
    if force.len() != 3 * grid.n_nodes() {
        return Err(Error::InvalidInput(format!(
            "force has {} entries, grid needs {}",
            force.len(),
            3 * grid.n_nodes()
        )));
    }
    let b = load_vector(&grid, force);
    let (u, stats) = solve_stiffness(op, &b, opts)?;
    Ok(DiscreteSolution {
        grid,
        u,
        residual: stats.residual(),
        iterations: stats.iterations,
        history: stats.history,
    })
}

/// Assemble, discretize the fault source and solve in one call.
pub fn solve_fault(mesh: &TriMesh, slip: &SlipField, field: &LameField, grid: &GridSpec, opts: &SolverOptions) -> Result<DiscreteSolution> {
    let op = assemble_operator(field, grid)?;
    let force = discretize_fault_source(mesh, slip, field, grid)?;
    solve(&op, &force, opts)
}

impl DiscreteSolution {
    pub fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let id = 3 * self.grid.node_id(i, j, k);
        Vec3::new(self.u[id], self.u[id + 1], self.u[id + 2])
    }

    pub fn interpolate(&self, x: &Vec3) -> Result<Vec3> {
        self.grid.interpolate(&self.u, x)
    }

    pub fn sample(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        points.iter().map(|x| self.interpolate(x)).collect()
    }

    /// Jump `u(q⁺) − u(q⁻)` across a fault through `q` with normal `n`,
    /// each side extrapolated linearly from offsets `2h` and `3h` where the
    /// smeared source no longer acts.
    pub fn recover_jump(&self, q: &Vec3, n: &Vec3) -> Result<Vec3> {
        let h = self.grid.h;
        let side = |s: f64| -> Result<Vec3> {
            let near = self.interpolate(&(q + n * (2.0 * s * h)))?;
            let far = self.interpolate(&(q + n * (3.0 * s * h)))?;
            Ok(near * 3.0 - far * 2.0)
        };
        Ok(side(1.0)? - side(-1.0)?)
    }

    /// Plain CSV of every node: `x1,x2,x3,u1,u2,u3`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x1,x2,x3,u1,u2,u3")?;
        let [nx, ny, nz] = self.grid.cells;
        for k in 0..=nz {
            for j in 0..=ny {
                for i in 0..=nx {
                    let x = self.grid.node_position(i, j, k);
                    let u = self.node(i, j, k);
                    writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e}", x[0], x[1], x[2], u[0], u[1], u[2])?;
                }
            }
        }
        Ok(())
    }
}

/// Discrepancy between two sets of displacement samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    /// `‖u − u_ref‖₂ / ‖u_ref‖₂` over the probes; zero when both vanish.
    pub rel_l2: f64,
    pub max_error: f64,
    pub max_reference: f64,
    pub n_probes: usize,
}

/// Compare `values` with `reference` probe by probe.
pub fn error_report(values: &[Vec3], reference: &[Vec3]) -> ErrorReport {
    assert_eq!(values.len(), reference.len(), "sample sets must align");
    let mut num = 0.0;
    let mut den = 0.0;
    let mut max_error: f64 = 0.0;
    let mut max_reference: f64 = 0.0;
    for (v, r) in values.iter().zip(reference) {
        let e = (v - r).norm();
        num += e * e;
        den += r.norm_squared();
        max_error = max_error.max(e);
        max_reference = max_reference.max(r.norm());
    }
    let rel_l2 = if num == 0.0 { 0.0 } else { (num / den).sqrt() };
    ErrorReport {
        rel_l2,
        max_error,
        max_reference,
        n_probes: values.len(),
    }
}

/// Sample the solution at `probes` and compare with a reference map
/// evaluated at the same points.
pub fn compare_with_analytic<F>(solution: &DiscreteSolution, probes: &[Vec3], reference: F) -> Result<ErrorReport>
where
    F: FnOnce(&[Vec3]) -> Result<Vec<Vec3>>,
{
    let values = solution.sample(probes)?;
    let exact = reference(probes)?;
    Ok(error_report(&values, &exact))
}

/// Observed order `log₂(‖u_2h − u_4h‖ / ‖u_h − u_2h‖)` from three
/// solutions on spacings `4h, 2h, h` sampled at common probes.
pub fn self_convergence_order(coarse: &[Vec3], mid: &[Vec3], fine: &[Vec3]) -> f64 {
    let diff = |a: &[Vec3], b: &[Vec3]| a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt();
    (diff(mid, coarse) / diff(fine, mid)).log2()
}

/// Observed order from errors on spacings halving at each step; uses the
/// last pair.
pub fn observed_order(errors: &[f64]) -> Option<f64> {
    match errors {
        [.., a, b] if *a > 0.0 && *b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}
