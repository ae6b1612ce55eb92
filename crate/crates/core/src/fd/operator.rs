//! Matrix-free trilinear (Q1) discretization of `div(C ∇̂ u)`.
//!
//! Each cubic cell carries constant Lamé parameters sampled at its centroid.
//! Constant fields are applied through a precomputed 27-point block stencil;
//! cellwise fields are applied element by element, alternating even and odd
//! cell layers so that parallel writes never overlap.
//!
//! `K` denotes the stiffness (energy) matrix; `L = −K / h³` approximates
//! `div(C ∇̂ ·)`. Rows at `x₃ = 0` carry the natural traction-free condition;
//! nodes on the other faces are homogeneous Dirichlet and always hold zero.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix3};
use rayon::prelude::*;

use super::GridSpec;
use crate::elastic::{LameField, LameParameters};
use crate::error::Result;

type ElementMatrix = [[f64; 24]; 24];

/// Unit-cube element matrices of the λ and μ parts of the bilinear form,
/// integrated exactly with the 2×2×2 Gauss rule.
fn reference_matrices() -> &'static (ElementMatrix, ElementMatrix) {
    static CELL: OnceLock<(ElementMatrix, ElementMatrix)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let mut kl = [[0.0; 24]; 24];
        let mut km = [[0.0; 24]; 24];
        for &x in &pts {
            for &y in &pts {
                for &z in &pts {
                    let grads: Vec<[f64; 3]> = (0..8).map(|l| shape_gradient(l, [x, y, z])).collect();
                    for l in 0..8 {
                        for m in 0..8 {
                            let dot: f64 = (0..3).map(|d| grads[l][d] * grads[m][d]).sum();
                            for p in 0..3 {
                                for q in 0..3 {
                                    kl[3 * l + p][3 * m + q] += 0.125 * grads[l][p] * grads[m][q];
                                    let iso = if p == q { dot } else { 0.0 };
                                    km[3 * l + p][3 * m + q] += 0.125 * (iso + grads[l][q] * grads[m][p]);
                                }
                            }
                        }
                    }
                }
            }
        }
        (kl, km)
    })
}

/// Offset `(a, b, c) ∈ {0,1}³` of local node `l = a + 2b + 4c`.
pub(crate) fn local_offset(l: usize) -> [usize; 3] {
    [l & 1, (l >> 1) & 1, (l >> 2) & 1]
}

fn shape_gradient(l: usize, xi: [f64; 3]) -> [f64; 3] {
    let o = local_offset(l);
    let f = |d: usize| if o[d] == 1 { xi[d] } else { 1.0 - xi[d] };
    let df = |d: usize| if o[d] == 1 { 1.0 } else { -1.0 };
    [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)]
}

/// 27-point block stencil `[offset][3p + q]`, offsets over `{−1,0,1}³`
/// with the first axis fastest.
type Stencil = [[f64; 9]; 27];

fn stencil_index(d: [isize; 3]) -> usize {
    ((d[2] + 1) * 9 + (d[1] + 1) * 3 + (d[0] + 1)) as usize
}

fn constant_stencils(lambda: f64, mu: f64, h: f64) -> (Stencil, Stencil) {
    let (kl, km) = reference_matrices();
    let mut interior = [[0.0; 9]; 27];
    let mut top = [[0.0; 9]; 27];
    for l in 0..8 {
        let ol = local_offset(l);
        for m in 0..8 {
            let om = local_offset(m);
            let s = stencil_index([0, 1, 2].map(|k| om[k] as isize - ol[k] as isize));
            for p in 0..3 {
                for q in 0..3 {
                    let v = h * (lambda * kl[3 * l + p][3 * m + q] + mu * km[3 * l + p][3 * m + q]);
                    interior[s][3 * p + q] += v;
                    // A top node is local node c = 1 of the cells below it.
                    if ol[2] == 1 {
                        top[s][3 * p + q] += v;
                    }
                }
            }
        }
    }
    (interior, top)
}

fn block_inverse(s: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(s)
        .try_inverse()
        .expect("diagonal blocks of a coercive stiffness are invertible")
}

#[derive(Debug, Clone)]
enum Coefficients {
    Constant {
        params: LameParameters,
        interior: Box<Stencil>,
        top: Box<Stencil>,
        diag_inv: [Matrix3<f64>; 2],
    },
    Cellwise {
        lambda: Vec<f64>,
        mu: Vec<f64>,
        diag_inv: Vec<Matrix3<f64>>,
    },
}

/// Stiffness operator on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct Operator {
    grid: GridSpec,
    coeffs: Coefficients,
}

/// Discretize `div(C ∇̂ ·)` for `field` on `grid`.
pub fn assemble_operator(field: &LameField, grid: &GridSpec) -> Result<Operator> {
    Operator::new(field, grid)
}

impl Operator {
    pub fn new(field: &LameField, grid: &GridSpec) -> Result<Self> {
        if let Some(p) = field.as_constant() {
            return Ok(Self::constant(p, grid));
        }
        let [nx, ny, nz] = grid.cells();
        let mut lambda = Vec::with_capacity(nx * ny * nz);
        let mut mu = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = field.at(&grid.cell_centroid(i, j, k))?;
                    lambda.push(p.lambda());
                    mu.push(p.mu());
                }
            }
        }
        Ok(Self::cellwise(grid.clone(), lambda, mu))
    }

    pub fn constant(p: LameParameters, grid: &GridSpec) -> Self {
        let (interior, top) = constant_stencils(p.lambda(), p.mu(), grid.h());
        let centre = stencil_index([0, 0, 0]);
        let diag_inv = [block_inverse(&interior[centre]), block_inverse(&top[centre])];
        Self {
            grid: grid.clone(),
            coeffs: Coefficients::Constant {
                params: p,
                interior: Box::new(interior),
                top: Box::new(top),
                diag_inv,
            },
        }
    }

    fn cellwise(grid: GridSpec, lambda: Vec<f64>, mu: Vec<f64>) -> Self {
        let (kl, km) = reference_matrices();
        let h = grid.h();
        let [nx, ny, nz] = grid.cells();
        let mut diag = vec![[0.0; 9]; grid.n_nodes()];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let e = (k * ny + j) * nx + i;
                    for l in 0..8 {
                        let o = local_offset(l);
                        let id = grid.node_id(i + o[0], j + o[1], k + o[2]);
                        for p in 0..3 {
                            for q in 0..3 {
                                let (r, c) = (3 * l + p, 3 * l + q);
                                diag[id][3 * p + q] += h * (lambda[e] * kl[r][c] + mu[e] * km[r][c]);
                            }
                        }
                    }
                }
            }
        }
        let diag_inv = diag
            .iter()
            .enumerate()
            .map(|(id, d)| {
                let [i, j, k] = grid.node_ijk(id);
                if grid.is_unknown(i, j, k) {
                    block_inverse(d)
                } else {
                    Matrix3::identity()
                }
            })
            .collect();
        Self {
            grid,
            coeffs: Coefficients::Cellwise { lambda, mu, diag_inv },
        }
    }

    /// The operator on the grid of twice the spacing; cell parameters are
    /// averaged over the eight children.
    pub(crate) fn coarsened(&self) -> Option<Self> {
        let coarse = self.grid.coarsened()?;
        Some(match &self.coeffs {
            Coefficients::Constant { params, .. } => Self::constant(*params, &coarse),
            Coefficients::Cellwise { lambda, mu, .. } => {
                let [nx, ny, _] = self.grid.cells();
                let [cx, cy, cz] = coarse.cells();
                let mut cl = Vec::with_capacity(cx * cy * cz);
                let mut cm = Vec::with_capacity(cx * cy * cz);
                for k in 0..cz {
                    for j in 0..cy {
                        for i in 0..cx {
                            let (mut sl, mut sm) = (0.0, 0.0);
                            for c in 0..8 {
                                let o = local_offset(c);
                                let e = ((2 * k + o[2]) * ny + 2 * j + o[1]) * nx + 2 * i + o[0];
                                sl += lambda[e];
                                sm += mu[e];
                            }
                            cl.push(sl / 8.0);
                            cm.push(sm / 8.0);
                        }
                    }
                }
                Self::cellwise(coarse, cl, cm)
            }
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.coeffs, Coefficients::Constant { .. })
    }

    /// `out = K u`. Entries of `u` at Dirichlet nodes must be zero; the
    /// corresponding entries of `out` are set to zero.
    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), 3 * self.grid.n_nodes());
        debug_assert_eq!(out.len(), u.len());
        match &self.coeffs {
            Coefficients::Constant { interior, top, .. } => self.apply_stencil(interior, top, u, out),
            Coefficients::Cellwise { lambda, mu, .. } => self.apply_elements(lambda, mu, u, out),
        }
    }

    fn apply_stencil(&self, interior: &Stencil, top: &Stencil, u: &[f64], out: &mut [f64]) {
        let [nx, ny, nz] = self.grid.cells();
        let sx = nx + 1;
        let plane = sx * (ny + 1);
        out.par_chunks_mut(3 * plane).enumerate().for_each(|(k, slab)| {
            slab.fill(0.0);
            if k == 0 {
                return;
            }
            let (st, dk_max) = if k == nz { (top, 0) } else { (interior, 1) };
            for j in 1..ny {
                for i in 1..nx {
                    let id = (k * (ny + 1) + j) * sx + i;
                    let mut acc = [0.0; 3];
                    for dk in -1..=dk_max {
                        for dj in -1isize..=1 {
                            let row = (id as isize + dj * sx as isize + dk * plane as isize) as usize;
                            for di in -1isize..=1 {
                                let nb = (row as isize + di) as usize;
                                let b = &st[stencil_index([di, dj, dk])];
                                let un = &u[3 * nb..3 * nb + 3];
                                for p in 0..3 {
                                    acc[p] += b[3 * p] * un[0] + b[3 * p + 1] * un[1] + b[3 * p + 2] * un[2];
                                }
                            }
                        }
                    }
                    let o = 3 * (j * sx + i);
                    slab[o..o + 3].copy_from_slice(&acc);
                }
            }
        });
    }

    fn apply_elements(&self, lambda: &[f64], mu: &[f64], u: &[f64], out: &mut [f64]) {
        let (kl, km) = reference_matrices();
        let g = &self.grid;
        let [nx, ny, nz] = g.cells();
        let h = g.h();
        let plane = 3 * (nx + 1) * (ny + 1);
        out.fill(0.0);
        // Cell layer k writes node planes k and k + 1 only.
        let layer = |k: usize, dst: &mut [f64]| {
            let mut ue = [0.0; 24];
            for j in 0..ny {
                for i in 0..nx {
                    for l in 0..8 {
                        let o = local_offset(l);
                        let id = g.node_id(i + o[0], j + o[1], k + o[2]);
                        ue[3 * l..3 * l + 3].copy_from_slice(&u[3 * id..3 * id + 3]);
                    }
                    let e = (k * ny + j) * nx + i;
                    let (a, b) = (h * lambda[e], h * mu[e]);
                    for l in 0..8 {
                        let o = local_offset(l);
                        let local = 3 * g.node_id(i + o[0], j + o[1], o[2]);
                        for p in 0..3 {
                            let (rl, rm) = (&kl[3 * l + p], &km[3 * l + p]);
                            let mut sl = 0.0;
                            let mut sm = 0.0;
                            for c in 0..24 {
                                sl += rl[c] * ue[c];
                                sm += rm[c] * ue[c];
                            }
                            dst[local + p] += a * sl + b * sm;
                        }
                    }
                }
            }
        };
        for parity in 0..2 {
            out[parity * plane..]
                .par_chunks_mut(2 * plane)
                .enumerate()
                .for_each(|(c, dst)| {
                    let k = 2 * c + parity;
                    if k < nz {
                        layer(k, dst);
                    }
                });
        }
        g.zero_dirichlet(out);
    }

    /// `out = L u = −K u / h³`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        self.apply_stiffness(u, out);
        let s = -1.0 / self.grid.h().powi(3);
        out.par_iter_mut().for_each(|v| *v *= s);
    }

    /// Inverse of the 3×3 diagonal stiffness block of node `id` in plane `k`.
    pub(crate) fn diag_inv(&self, id: usize, k: usize) -> &Matrix3<f64> {
        match &self.coeffs {
            Coefficients::Constant { diag_inv, .. } => &diag_inv[usize::from(k == self.grid.cells()[2])],
            Coefficients::Cellwise { diag_inv, .. } => &diag_inv[id],
        }
    }

    /// Dense stiffness restricted to the unknown degrees of freedom, with
    /// the global dof index of each row.
    pub fn dense_stiffness(&self) -> (DMatrix<f64>, Vec<usize>) {
        let dofs = self.grid.unknown_dofs();
        let n = 3 * self.grid.n_nodes();
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut m = DMatrix::zeros(dofs.len(), dofs.len());
        for (c, &d) in dofs.iter().enumerate() {
            e[d] = 1.0;
            self.apply_stiffness(&e, &mut col);
            e[d] = 0.0;
            for (r, &dr) in dofs.iter().enumerate() {
                m[(r, c)] = col[dr];
            }
        }
        (m, dofs)
    }

    /// Dense `L` on the unknown degrees of freedom.
    pub fn dense(&self) -> (DMatrix<f64>, Vec<usize>) {
        let (k, dofs) = self.dense_stiffness();
        (k * (-1.0 / self.grid.h().powi(3)), dofs)
    }
}
