//! Conjugate gradients on `K u = b`, preconditioned by one geometric
//! multigrid V-cycle.
//!
//! The hierarchy rediscretizes the operator on grids of doubled spacing.
//! Transfers are trilinear interpolation and its transpose, which makes the
//! cycle symmetric positive definite whenever pre- and post-smoothing agree.

use nalgebra::{Cholesky, Dyn};
use rayon::prelude::*;

use super::operator::Operator;
use super::GridSpec;
use crate::error::{Error, Result};

/// Fixed chunk length for reductions, so sums do not depend on the thread count.
const REDUCTION_CHUNK: usize = 1 << 14;

/// Largest coarse system factored densely.
const MAX_COARSE_DOFS: usize = 6000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `‖b − K u‖ / ‖b‖` at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    pub smoothing_steps: usize,
    /// Damping of the block-Jacobi smoother.
    pub omega: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 300,
            smoothing_steps: 2,
            omega: 0.6,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(REDUCTION_CHUNK)
        .zip(b.par_chunks(REDUCTION_CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
}

/// Per-axis trilinear weights of fine index `i` on the coarse nodes.
fn weights_1d(i: usize) -> [(usize, f64); 2] {
    if i % 2 == 0 {
        [(i / 2, 1.0), (i / 2, 0.0)]
    } else {
        [((i - 1) / 2, 0.5), ((i + 1) / 2, 0.5)]
    }
}

/// `fine += P coarse`.
pub(crate) fn prolong_add(coarse_grid: &GridSpec, fine_grid: &GridSpec, coarse: &[f64], fine: &mut [f64]) {
    let [nx, ny, _] = fine_grid.cells();
    let plane = 3 * (nx + 1) * (ny + 1);
    fine.par_chunks_mut(plane).enumerate().for_each(|(k, slab)| {
        let wk = weights_1d(k);
        for j in 0..=ny {
            let wj = weights_1d(j);
            for i in 0..=nx {
                let wi = weights_1d(i);
                let mut acc = [0.0; 3];
                for &(ck, a) in &wk {
                    for &(cj, b) in &wj {
                        for &(ci, c) in &wi {
                            let w = a * b * c;
                            if w == 0.0 {
                                continue;
                            }
                            let id = 3 * coarse_grid.node_id(ci, cj, ck);
                            for p in 0..3 {
                                acc[p] += w * coarse[id + p];
                            }
                        }
                    }
                }
                let o = 3 * (j * (nx + 1) + i);
                for p in 0..3 {
                    slab[o + p] += acc[p];
                }
            }
        }
    });
    fine_grid.zero_dirichlet(fine);
}

/// `coarse = Pᵀ fine`, restricted to unknown coarse nodes.
pub(crate) fn restrict(fine_grid: &GridSpec, coarse_grid: &GridSpec, fine: &[f64], coarse: &mut [f64]) {
    let [fx, fy, fz] = fine_grid.cells();
    let [cx, cy, _] = coarse_grid.cells();
    let plane = 3 * (cx + 1) * (cy + 1);
    let span = |c: usize, n: usize| {
        let lo = (2 * c).saturating_sub(1);
        let hi = (2 * c + 1).min(n);
        (lo..=hi).map(move |f| (f, if f == 2 * c { 1.0 } else { 0.5 }))
    };
    coarse.par_chunks_mut(plane).enumerate().for_each(|(ck, slab)| {
        for cj in 0..=cy {
            for ci in 0..=cx {
                let mut acc = [0.0; 3];
                for (k, a) in span(ck, fz) {
                    for (j, b) in span(cj, fy) {
                        for (i, c) in span(ci, fx) {
                            let w = a * b * c;
                            let id = 3 * fine_grid.node_id(i, j, k);
                            for p in 0..3 {
                                acc[p] += w * fine[id + p];
                            }
                        }
                    }
                }
                let o = 3 * (cj * (cx + 1) + ci);
                slab[o..o + 3].copy_from_slice(&acc);
            }
        }
    });
    coarse_grid.zero_dirichlet(coarse);
}

/// Geometric multigrid hierarchy used as a preconditioner.
pub struct Multigrid {
    levels: Vec<Operator>,
    coarse_factor: Cholesky<f64, Dyn>,
    coarse_dofs: Vec<usize>,
    smoothing_steps: usize,
    omega: f64,
}

impl Multigrid {
    pub fn new(op: &Operator, opts: &SolverOptions) -> Result<Self> {
        let mut levels = vec![op.clone()];
        while let Some(next) = levels.last().and_then(Operator::coarsened) {
            levels.push(next);
        }
        let coarsest = levels.last().expect("at least one level");
        let n_coarse = coarsest.grid().unknown_dofs().len();
        if n_coarse > MAX_COARSE_DOFS {
            return Err(Error::InvalidGrid(format!(
                "coarsest multigrid level still has {n_coarse} unknowns; use cell counts with more factors of two"
            )));
        }
        let (dense, coarse_dofs) = coarsest.dense_stiffness();
        let coarse_factor = Cholesky::new(dense)
            .ok_or_else(|| Error::InvalidGrid("coarse stiffness is not positive definite".into()))?;
        Ok(Self {
            levels,
            coarse_factor,
            coarse_dofs,
            smoothing_steps: opts.smoothing_steps,
            omega: opts.omega,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    fn smooth(&self, level: usize, b: &[f64], x: &mut [f64], tmp: &mut [f64]) {
        let op = &self.levels[level];
        let g = op.grid();
        let plane_nodes = {
            let [nx, ny, _] = g.cells();
            (nx + 1) * (ny + 1)
        };
        let omega = self.omega;
        op.apply_stiffness(x, tmp);
        // Dirichlet rows have zero residual, so their values stay zero.
        x.par_chunks_mut(3).enumerate().for_each(|(id, xn)| {
            let r = nalgebra::Vector3::new(b[3 * id] - tmp[3 * id], b[3 * id + 1] - tmp[3 * id + 1], b[3 * id + 2] - tmp[3 * id + 2]);
            let d = op.diag_inv(id, id / plane_nodes) * r;
            for p in 0..3 {
                xn[p] += omega * d[p];
            }
        });
    }

    fn cycle(&self, level: usize, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut x = vec![0.0; n];
        if level + 1 == self.levels.len() {
            let rhs = nalgebra::DVector::from_iterator(self.coarse_dofs.len(), self.coarse_dofs.iter().map(|&d| b[d]));
            let sol = self.coarse_factor.solve(&rhs);
            for (v, &d) in sol.iter().zip(&self.coarse_dofs) {
                x[d] = *v;
            }
            return x;
        }
        let mut tmp = vec![0.0; n];
        for _ in 0..self.smoothing_steps {
            self.smooth(level, b, &mut x, &mut tmp);
        }
        self.levels[level].apply_stiffness(&x, &mut tmp);
        tmp.par_iter_mut().zip(b.par_iter()).for_each(|(t, b)| *t = b - *t);
        let (fine, coarse) = (self.levels[level].grid(), self.levels[level + 1].grid());
        let mut bc = vec![0.0; 3 * coarse.n_nodes()];
        restrict(fine, coarse, &tmp, &mut bc);
        let xc = self.cycle(level + 1, &bc);
        prolong_add(coarse, fine, &xc, &mut x);
        for _ in 0..self.smoothing_steps {
            self.smooth(level, b, &mut x, &mut tmp);
        }
        x
    }

    /// One V-cycle applied to `r` with a zero initial guess.
    pub fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.cycle(0, r)
    }
}

/// Result of a stiffness solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
}

impl SolveStats {
    pub fn residual(&self) -> f64 {
        self.history.last().copied().unwrap_or(0.0)
    }
}

/// Solve `K u = b` by preconditioned conjugate gradients from `u = 0`.
pub fn solve_stiffness(op: &Operator, b: &[f64], opts: &SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, history: vec![0.0] }));
    }
    let mg = Multigrid::new(op, opts)?;
    let mut r = b.to_vec();
    let mut z = mg.precondition(&r);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut history = vec![1.0];
    for it in 1..=opts.max_iter {
        op.apply_stiffness(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let rel = dot(&r, &r).sqrt() / bnorm;
        history.push(rel);
        log::debug!("pcg iteration {it}: relative residual {rel:e}");
        if rel <= opts.tol {
            return Ok((x, SolveStats { iterations: it, history }));
        }
        z = mg.precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(p, z)| *p = z + beta * *p);
    }
    Err(Error::SolverStalled {
        iterations: opts.max_iter,
        history,
    })
}
