//! Slip and geometry inversion from surface displacements.
//!
//! The forward map is linear in the slip, so on a fixed patched fault the
//! surface data are `d = G m` with one column per patch and slip direction.
//! Geometry enters nonlinearly and is searched with a derivative-free
//! simplex method, solving for the slip inside every misfit evaluation.

mod geometry;
mod uniqueness;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

pub use geometry::{
    geometry_misfit, nelder_mead, search_geometry, GeometryModel, GeometrySearchResult, InnerSolver, NelderMead,
    RectParam,
};
pub use uniqueness::{
    quadrature_noise_floor, rigid_motion_nullspace, uniqueness_experiment, NullspaceReport, Scene, SeparationReport,
};

use crate::elastic::{LameParameters, Vec3};
use crate::error::{Error, Result};
use crate::forward::{displacement_at, mesh_id, ForwardOptions, Kernel, StationSet};
use crate::mesh::{SlipField, SlipMode, TriMesh};

/// Largest acceptable condition number of unregularized normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// Linear map from patch slip coefficients to stacked surface displacements.
///
/// Row `3s + c` is component `c` at station `s`; column `dirs·f + k` is the
/// response to unit slip along basis vector `k` of facet `f`.
#[derive(Debug, Clone)]
pub struct GreensMatrix {
    pub matrix: DMatrix<f64>,
    pub stations: StationSet,
    pub mode: SlipMode,
    /// Slip basis per facet: `[t₁, t₂]` for tangential mode, `[n]` for normal.
    pub basis: Vec<Vec<Vec3>>,
    /// Edge-sharing neighbours of every facet.
    pub adjacency: Vec<Vec<usize>>,
    pub mesh_id: String,
}

fn basis_for(mesh: &TriMesh, mode: SlipMode) -> Result<Vec<Vec<Vec3>>> {
    let frames = mesh.facet_frames()?;
    match mode {
        SlipMode::Tangential => Ok(frames.iter().map(|f| vec![f.t1, f.t2]).collect()),
        SlipMode::Normal => Ok(frames.iter().map(|f| vec![f.n]).collect()),
        SlipMode::Oblique => Err(Error::InvalidInput(
            "slip basis must be tangential or normal; oblique slip has no fixed-direction basis".into(),
        )),
    }
}

/// Assemble the half-space Green's matrix for `mesh` at surface `stations`.
pub fn assemble_greens(
    stations: &StationSet,
    mesh: &TriMesh,
    mode: SlipMode,
    p: &LameParameters,
    order: usize,
) -> Result<GreensMatrix> {
    if !stations.is_surface() {
        return Err(Error::InvalidInput("Green's matrix needs surface stations".into()));
    }
    if stations.is_empty() {
        return Err(Error::InvalidInput("station set is empty".into()));
    }
    let basis = basis_for(mesh, mode)?;
    let dirs = basis[0].len();
    let n_cols = mesh.n_facets() * dirs;
    let opts = ForwardOptions::new(Kernel::Mindlin, order);
    let columns: Vec<Vec<f64>> = (0..n_cols)
        .into_par_iter()
        .map(|col| {
            let (f, k) = (col / dirs, col % dirs);
            let mut values = vec![Vec3::zeros(); mesh.n_facets()];
            values[f] = basis[f][k];
            let slip = SlipField::new(values, mode);
            let mut out = Vec::with_capacity(3 * stations.len());
            for y in stations.points() {
                out.extend(displacement_at(y, mesh, &slip, p, &opts)?.iter());
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let matrix = DMatrix::from_fn(3 * stations.len(), n_cols, |r, c| columns[c][r]);
    Ok(GreensMatrix {
        matrix,
        stations: stations.clone(),
        mode,
        basis,
        adjacency: mesh.facet_adjacency(),
        mesh_id: mesh_id(mesh),
    })
}

impl GreensMatrix {
    pub fn n_patches(&self) -> usize {
        self.basis.len()
    }

    pub fn dirs_per_patch(&self) -> usize {
        self.basis.first().map_or(0, Vec::len)
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        self.matrix.singular_values().max()
    }

    /// Slip field represented by coefficient vector `m`.
    pub fn slip_from_coefficients(&self, m: &DVector<f64>) -> SlipField {
        let dirs = self.dirs_per_patch();
        let values = self
            .basis
            .iter()
            .enumerate()
            .map(|(f, b)| b.iter().enumerate().map(|(k, v)| v * m[dirs * f + k]).sum())
            .collect();
        SlipField::new(values, self.mode)
    }

    /// Coefficients of `slip` in the patch basis (orthogonal projection).
    pub fn coefficients_from_slip(&self, slip: &SlipField) -> Result<DVector<f64>> {
        if slip.values.len() != self.n_patches() {
            return Err(Error::InvalidSlip(format!(
                "slip has {} facets, Green's matrix has {}",
                slip.values.len(),
                self.n_patches()
            )));
        }
        let dirs = self.dirs_per_patch();
        Ok(DVector::from_fn(self.n_patches() * dirs, |j, _| {
            self.basis[j / dirs][j % dirs].dot(&slip.values[j / dirs])
        }))
    }

    pub fn predict(&self, m: &DVector<f64>) -> DVector<f64> {
        &self.matrix * m
    }
}

/// Penalty operator of the regularized inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularization {
    /// `R = I`.
    Identity,
    /// `R` is the graph Laplacian of facet adjacency, per slip direction.
    Laplacian,
}

impl Regularization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regularization::Identity => "identity",
            Regularization::Laplacian => "laplacian",
        }
    }
}

impl std::str::FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(Regularization::Identity),
            "laplacian" | "patch-laplacian" => Ok(Regularization::Laplacian),
            other => Err(Error::InvalidInput(format!("unknown regularization '{other}'"))),
        }
    }
}

fn penalty_matrix(g: &GreensMatrix, reg: Regularization) -> DMatrix<f64> {
    let n = g.matrix.ncols();
    match reg {
        Regularization::Identity => DMatrix::identity(n, n),
        Regularization::Laplacian => {
            let dirs = g.dirs_per_patch();
            let mut r = DMatrix::zeros(n, n);
            for (f, nbrs) in g.adjacency.iter().enumerate() {
                for k in 0..dirs {
                    r[(dirs * f + k, dirs * f + k)] = nbrs.len() as f64;
                    for &q in nbrs {
                        r[(dirs * f + k, dirs * q + k)] = -1.0;
                    }
                }
            }
            r
        }
    }
}

/// Outcome of a regularized slip inversion.
#[derive(Debug, Clone)]
pub struct InversionResult {
    pub coefficients: DVector<f64>,
    pub slip: SlipField,
    /// `‖G m − d‖₂`.
    pub residual_norm: f64,
    /// `‖R m‖₂`.
    pub model_norm: f64,
    pub reg_weight: f64,
    pub regularization: Regularization,
    pub mode: SlipMode,
}

impl InversionResult {
    /// `‖G m − d‖₂` recomputed from the stored coefficients.
    pub fn recompute_residual(&self, g: &GreensMatrix, data: &DVector<f64>) -> f64 {
        (g.predict(&self.coefficients) - data).norm()
    }
}

/// Minimize `‖G m − d‖² + w² ‖R m‖²` through the normal equations.
pub fn invert_slip(g: &GreensMatrix, data: &DVector<f64>, reg_weight: f64, reg: Regularization) -> Result<InversionResult> {
    if !(reg_weight >= 0.0 && reg_weight.is_finite()) {
        return Err(Error::InvalidInput(format!("regularization weight must be >= 0, got {reg_weight}")));
    }
    if data.len() != g.matrix.nrows() {
        return Err(Error::InvalidInput(format!(
            "data has {} entries, Green's matrix has {} rows",
            data.len(),
            g.matrix.nrows()
        )));
    }
    let gt = g.matrix.transpose();
    let mut normal = &gt * &g.matrix;
    let rhs = &gt * data;
    let r = penalty_matrix(g, reg);
    if reg_weight > 0.0 {
        normal += (r.transpose() * &r) * (reg_weight * reg_weight);
    } else {
        let eig = SymmetricEigen::new(normal.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::RankDeficient { condition });
        }
    }
    let chol = nalgebra::Cholesky::new(normal).ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let m = chol.solve(&rhs);
    let residual_norm = (&g.matrix * &m - data).norm();
    let model_norm = (&r * &m).norm();
    Ok(InversionResult {
        slip: g.slip_from_coefficients(&m),
        coefficients: m,
        residual_norm,
        model_norm,
        reg_weight,
        regularization: reg,
        mode: g.mode,
    })
}

/// One point of the residual / model-norm trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    pub reg_weight: f64,
    pub residual_norm: f64,
    pub model_norm: f64,
}

/// Tabulate the trade-off over the given weights (in the given order).
pub fn tradeoff_curve(g: &GreensMatrix, data: &DVector<f64>, weights: &[f64], reg: Regularization) -> Result<Vec<TradeoffPoint>> {
    weights
        .iter()
        .map(|&w| {
            let r = invert_slip(g, data, w, reg)?;
            Ok(TradeoffPoint {
                reg_weight: w,
                residual_norm: r.residual_norm,
                model_norm: r.model_norm,
            })
        })
        .collect()
}

/// Stack surface displacements station-major into a data vector.
pub fn stack(values: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(3 * values.len(), values.iter().flat_map(|v| v.iter().copied()))
}

/// Area-weighted relative L² distance between two slip fields on `mesh`.
pub fn slip_relative_error(mesh: &TriMesh, estimate: &SlipField, truth: &SlipField) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for f in 0..mesh.n_facets() {
        let a = mesh.area(f);
        num += a * (estimate.values[f] - truth.values[f]).norm_squared();
        den += a * truth.values[f].norm_squared();
    }
    if num == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}
