//! Distinguishability of fault scenes from surface data, and the rigid
//! motion argument behind it.

use nalgebra::DMatrix;

use crate::elastic::{LameParameters, Vec3};
use crate::error::{Error, Result};
use crate::forward::{surface_displacement, StationSet};
use crate::mesh::{validate_graph_condition, SlipField, SlipMode, TriMesh};

/// A fault surface with its slip.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: TriMesh,
    pub slip: SlipField,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    /// Root mean square of `|u₁ − u₂|` over the stations.
    pub rms_difference: f64,
    /// `‖u₁ − u₂‖ / max(‖u₁‖, ‖u₂‖)`, zero when both fields vanish.
    pub normalized: f64,
    pub norm1: f64,
    pub norm2: f64,
}

fn check_hypotheses(label: &str, scene: &Scene, direction: &Vec3) -> Result<()> {
    scene.slip.validate(&scene.mesh)?;
    if scene.slip.mode == SlipMode::Oblique {
        return Err(Error::Hypothesis(format!("{label}: slip must be tangential or normal, not oblique")));
    }
    let missing = scene.slip.support_violations();
    if !missing.is_empty() {
        return Err(Error::Hypothesis(format!(
            "{label}: slip lacks full support (zero on facets {missing:?})"
        )));
    }
    let graph = validate_graph_condition(&scene.mesh, direction)?;
    if !graph.is_graph {
        return Err(Error::Hypothesis(format!(
            "{label}: graph condition fails along ({}, {}, {}); overlapping facets {:?}",
            direction[0], direction[1], direction[2], graph.witness
        )));
    }
    Ok(())
}

fn norm(values: &[Vec3]) -> f64 {
    values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// Separation of the surface data of two scenes that satisfy the hypotheses
/// of the uniqueness theorem for a common projection `direction`.
pub fn uniqueness_experiment(
    scene1: &Scene,
    scene2: &Scene,
    stations: &StationSet,
    p: &LameParameters,
    order: usize,
    direction: &Vec3,
) -> Result<SeparationReport> {
    if stations.is_empty() {
        return Err(Error::Hypothesis("station set is empty".into()));
    }
    check_hypotheses("scene 1", scene1, direction)?;
    check_hypotheses("scene 2", scene2, direction)?;
    if scene1.slip.mode != scene2.slip.mode {
        return Err(Error::Hypothesis(format!(
            "slip modes differ ({} vs {})",
            scene1.slip.mode.as_str(),
            scene2.slip.mode.as_str()
        )));
    }
    let u1 = surface_displacement(stations, &scene1.mesh, &scene1.slip, p, order)?.values;
    let u2 = surface_displacement(stations, &scene2.mesh, &scene2.slip, p, order)?.values;
    Ok(separation(&u1, &u2))
}

fn separation(u1: &[Vec3], u2: &[Vec3]) -> SeparationReport {
    let diff: Vec<Vec3> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    let (norm1, norm2) = (norm(u1), norm(u2));
    let scale = norm1.max(norm2);
    SeparationReport {
        rms_difference: d / (u1.len() as f64).sqrt(),
        normalized: if d == 0.0 { 0.0 } else { d / scale },
        norm1,
        norm2,
    }
}

/// Quadrature noise of one scene: the separation between its surface data
/// at two quadrature orders.
pub fn quadrature_noise_floor(
    scene: &Scene,
    stations: &StationSet,
    p: &LameParameters,
    order_lo: usize,
    order_hi: usize,
) -> Result<SeparationReport> {
    let lo = surface_displacement(stations, &scene.mesh, &scene.slip, p, order_lo)?.values;
    let hi = surface_displacement(stations, &scene.mesh, &scene.slip, p, order_hi)?.values;
    Ok(separation(&hi, &lo))
}

/// Solutions `(A, c)`, `A` skew, of `(A x_v + c)·n = 0` for every vertex
/// `x_v` and each of its normals.
#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceReport {
    pub dimension: usize,
    /// Basis vectors `[a₁, a₂, a₃, c₁, c₂, c₃]` with `A x = a × x`.
    pub basis: Vec<[f64; 6]>,
    /// All six singular values in decreasing order (zeros pad short systems).
    pub singular_values: Vec<f64>,
}

/// Relative singular-value threshold for the nullspace.
pub const NULLSPACE_TOL: f64 = 1e-10;

/// Nullspace of the rigid-motion constraints. Each vertex needs at least
/// three normals.
pub fn rigid_motion_nullspace(vertices: &[Vec3], normals: &[Vec<Vec3>]) -> Result<NullspaceReport> {
    if vertices.len() != normals.len() {
        return Err(Error::InvalidInput(format!(
            "{} vertices but {} normal lists",
            vertices.len(),
            normals.len()
        )));
    }
    if let Some(v) = normals.iter().position(|n| n.len() < 3) {
        return Err(Error::InvalidInput(format!("vertex {v} carries fewer than three normals")));
    }
    let n_rows: usize = normals.iter().map(Vec::len).sum();
    // (a × x)·n = a·(x × n); zero rows pad the system to at least six.
    let mut m = DMatrix::zeros(n_rows.max(6), 6);
    let mut r = 0;
    for (x, ns) in vertices.iter().zip(normals) {
        for n in ns {
            let xn = x.cross(n);
            for k in 0..3 {
                m[(r, k)] = xn[k];
                m[(r, 3 + k)] = n[k];
            }
            r += 1;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = svd.singular_values;
    let smax = sigma.max();
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let basis: Vec<[f64; 6]> = order
        .iter()
        .filter(|&&i| sigma[i] < NULLSPACE_TOL * smax || smax == 0.0)
        .map(|&i| std::array::from_fn(|k| v_t[(i, k)]))
        .collect();
    Ok(NullspaceReport {
        dimension: basis.len(),
        basis,
        singular_values: order.iter().map(|&i| sigma[i]).collect(),
    })
}
