//! Variable-projection geometry search.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assemble_greens, invert_slip, Regularization};
use crate::elastic::{LameParameters, Vec3};
use crate::error::{Error, Result};
use crate::forward::StationSet;
use crate::mesh::{rect_to_mesh, SlipMode, TriMesh};
use crate::rect::RectDislocation;

/// A rectangle parameter that the search may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RectParam {
    A,
    B,
    C,
    D,
    /// Depth parameter `α`; the plane is `x₃ = −|α|`.
    Alpha,
}

impl RectParam {
    fn index(self) -> usize {
        match self {
            RectParam::A => 0,
            RectParam::B => 1,
            RectParam::C => 2,
            RectParam::D => 3,
            RectParam::Alpha => 4,
        }
    }

    /// Current value of this parameter on `rect`.
    pub fn value(self, rect: &RectDislocation) -> f64 {
        [rect.a, rect.b, rect.c, rect.d, rect.alpha][self.index()]
    }
}

impl std::str::FromStr for RectParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(RectParam::A),
            "b" => Ok(RectParam::B),
            "c" => Ok(RectParam::C),
            "d" => Ok(RectParam::D),
            "alpha" | "depth" => Ok(RectParam::Alpha),
            other => Err(Error::InvalidInput(format!("unknown rectangle parameter '{other}'"))),
        }
    }
}

/// Parameterized fault geometry.
#[derive(Debug, Clone)]
pub enum GeometryModel {
    /// A horizontal rectangle; `free` lists the parameters in search order,
    /// the rest are taken from `base`.
    Rectangle {
        base: RectDislocation,
        free: Vec<RectParam>,
        n1: usize,
        n2: usize,
    },
    /// Vertex heights `x₃` over a fixed horizontal footprint triangulation.
    Heights {
        footprint: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    },
}

impl GeometryModel {
    pub fn n_params(&self) -> usize {
        match self {
            GeometryModel::Rectangle { free, .. } => free.len(),
            GeometryModel::Heights { footprint, .. } => footprint.len(),
        }
    }

    pub fn mesh(&self, params: &[f64]) -> Result<TriMesh> {
        if params.len() != self.n_params() {
            return Err(Error::InvalidInput(format!(
                "geometry expects {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        match self {
            GeometryModel::Rectangle { base, free, n1, n2 } => {
                let mut v = [base.a, base.b, base.c, base.d, base.alpha];
                for (p, x) in free.iter().zip(params) {
                    v[p.index()] = *x;
                }
                let rect = RectDislocation::new(v[0], v[1], v[2], v[3], v[4], base.slip)?;
                rect_to_mesh(&rect, *n1, *n2)
            }
            GeometryModel::Heights { footprint, triangles } => {
                let vertices = footprint.iter().zip(params).map(|(xy, z)| Vec3::new(xy[0], xy[1], *z)).collect();
                TriMesh::from_parts(vertices, triangles.clone())
            }
        }
    }
}

/// Settings of the slip solve inside each misfit evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolver {
    pub mode: SlipMode,
    pub order: usize,
    pub reg_weight: f64,
    pub regularization: Regularization,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self {
            mode: SlipMode::Tangential,
            order: 6,
            reg_weight: 1e-6,
            regularization: Regularization::Identity,
        }
    }
}

/// Data residual `‖G m − d‖` of the best slip on the geometry `params`.
pub fn geometry_misfit(
    model: &GeometryModel,
    params: &[f64],
    data: &DVector<f64>,
    stations: &StationSet,
    p: &LameParameters,
    inner: &InnerSolver,
) -> Result<f64> {
    let mesh = model.mesh(params)?;
    let g = assemble_greens(stations, &mesh, inner.mode, p, inner.order)?;
    Ok(invert_slip(&g, data, inner.reg_weight, inner.regularization)?.residual_norm)
}

/// Nelder–Mead settings. Reflection, expansion, contraction and shrink
/// coefficients are the classical 1, 2, 1/2, 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct NelderMead {
    /// Total objective evaluations across all restarts.
    pub max_evals: usize,
    pub restarts: usize,
    pub seed: u64,
    /// A run stops once the simplex size, relative to the bounds width, is
    /// below `x_tol` and the spread of its values is below
    /// `f_tol · (1 + |f_best|)`.
    pub x_tol: f64,
    pub f_tol: f64,
    /// Initial edge length relative to the bounds width.
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 200,
            restarts: 1,
            seed: 0,
            x_tol: 1e-4,
            f_tol: 1e-10,
            initial_step: 0.1,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySearchResult {
    pub params: Vec<f64>,
    pub misfit: f64,
    pub evaluations: usize,
    /// Whether the best run met the stopping tolerances within budget.
    pub converged: bool,
    /// All evaluated misfits were equal within tolerance.
    pub flat: bool,
    /// Best misfit after each simplex iteration.
    pub trace: Vec<f64>,
}

/// Whether an error means "no admissible geometry here" rather than a
/// numerical failure; such points are treated as infinitely bad.
fn is_infeasible(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidRect(_)
            | Error::InvalidMesh(_)
            | Error::InvalidGeometry(_)
            | Error::DegenerateFacet { .. }
            | Error::AboveSurface { .. }
            | Error::OnSurface { .. }
    )
}

struct Budget<'a, F> {
    f: &'a F,
    used: usize,
    max: usize,
    values: Vec<f64>,
}

impl<F: Fn(&[f64]) -> Result<f64>> Budget<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<Option<f64>> {
        if self.used >= self.max {
            return Ok(None);
        }
        self.used += 1;
        let v = match (self.f)(x) {
            Ok(v) => v,
            Err(e) if is_infeasible(&e) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        self.values.push(v);
        Ok(Some(v))
    }
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

struct Run {
    best: Vec<f64>,
    value: f64,
    converged: bool,
}

fn simplex_run<F: Fn(&[f64]) -> Result<f64>>(
    budget: &mut Budget<'_, F>,
    x0: &[f64],
    bounds: &[(f64, f64)],
    cfg: &NelderMead,
    trace: &mut Vec<f64>,
    global_best: &mut f64,
) -> Result<Option<Run>> {
    let n = x0.len();
    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| hi - lo).collect();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let Some(f0) = budget.eval(x0)? else { return Ok(None) };
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = cfg.initial_step * width[i];
        x[i] = if x[i] + step <= bounds[i].1 { x[i] + step } else { x[i] - step };
        let Some(f) = budget.eval(&x)? else { return Ok(None) };
        simplex.push((x, f));
    }
    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        *global_best = global_best.min(simplex[0].1);
        trace.push(*global_best);
        let (fb, fw) = (simplex[0].1, simplex[n].1);
        let spread = if fw.is_finite() { fw - fb } else { f64::INFINITY };
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).zip(&width).map(|((a, b), w)| (a - b).abs() / w))
            .fold(0.0f64, f64::max);
        if spread <= cfg.f_tol * (1.0 + fb.abs()) && size <= cfg.x_tol {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64, from: &[f64]| -> Vec<f64> {
            let mut x: Vec<f64> = centroid.iter().zip(from).map(|(c, w)| c + t * (c - w)).collect();
            clamp(&mut x, bounds);
            x
        };
        let worst = simplex[n].0.clone();
        let xr = along(REFLECT, &worst);
        let Some(fr) = budget.eval(&xr)? else { break };
        if fr < fb {
            let xe = along(REFLECT * EXPAND, &worst);
            let Some(fe) = budget.eval(&xe)? else {
                simplex[n] = (xr, fr);
                break;
            };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, accept_below) = if fr < fw {
            (along(REFLECT * CONTRACT, &worst), fr)
        } else {
            (along(-CONTRACT, &worst), fw)
        };
        let Some(fc) = budget.eval(&xc)? else { break };
        if fc < accept_below || (fr < fw && fc <= fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best.iter().zip(&entry.0).map(|(b, v)| b + SHRINK * (v - b)).collect();
            clamp(&mut x, bounds);
            let Some(f) = budget.eval(&x)? else {
                return Ok(Some(finish(simplex, false)));
            };
            *entry = (x, f);
        }
    }
    Ok(Some(finish(simplex, converged)))
}

fn finish(mut simplex: Vec<(Vec<f64>, f64)>, converged: bool) -> Run {
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (best, value) = simplex.swap_remove(0);
    Run { best, value, converged }
}

/// Bounded Nelder–Mead minimization with restarts sharing one budget.
///
/// The first run starts at `x0` (the centre of the box when `None`); later
/// runs start from points drawn uniformly in the box.
pub fn nelder_mead<F>(f: F, bounds: &[(f64, f64)], x0: Option<&[f64]>, cfg: &NelderMead) -> Result<GeometrySearchResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if bounds.is_empty() || bounds.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidInput("bounds must be a nonempty box with lo < hi".into()));
    }
    if cfg.restarts == 0 || cfg.max_evals < bounds.len() + 1 {
        return Err(Error::InvalidInput(
            "need at least one restart and enough evaluations for an initial simplex".into(),
        ));
    }
    let mut start: Vec<f64> = match x0 {
        Some(x) if x.len() == bounds.len() => x.to_vec(),
        Some(x) => {
            return Err(Error::InvalidInput(format!(
                "start point has {} entries, bounds have {}",
                x.len(),
                bounds.len()
            )))
        }
        None => bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    clamp(&mut start, bounds);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut budget = Budget {
        f: &f,
        used: 0,
        max: cfg.max_evals,
        values: Vec::new(),
    };
    let mut trace = Vec::new();
    let mut global_best = f64::INFINITY;
    let mut best: Option<Run> = None;
    for r in 0..cfg.restarts {
        let x0: Vec<f64> = if r == 0 {
            start.clone()
        } else {
            bounds.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
        };
        let Some(run) = simplex_run(&mut budget, &x0, bounds, cfg, &mut trace, &mut global_best)? else {
            break;
        };
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
        if budget.used >= budget.max {
            break;
        }
    }
    let best = best.ok_or_else(|| Error::NonConvergence {
        what: "geometry search",
        detail: "budget exhausted before the first simplex was built".into(),
    })?;
    let v0 = budget.values[0];
    let flat = budget
        .values
        .iter()
        .all(|v| *v == v0 || (v - v0).abs() <= 1e-12 * v0.abs());
    if !best.converged {
        log::warn!("geometry search stopped at its evaluation budget ({} evaluations)", budget.used);
    }
    Ok(GeometrySearchResult {
        params: best.best,
        misfit: best.value,
        evaluations: budget.used,
        converged: best.converged,
        flat,
        trace,
    })
}

/// Search `model` parameters inside `bounds` for the smallest misfit.
#[allow(clippy::too_many_arguments)]
pub fn search_geometry(
    model: &GeometryModel,
    data: &DVector<f64>,
    stations: &StationSet,
    p: &LameParameters,
    inner: &InnerSolver,
    bounds: &[(f64, f64)],
    x0: Option<&[f64]>,
    cfg: &NelderMead,
) -> Result<GeometrySearchResult> {
    if bounds.len() != model.n_params() {
        return Err(Error::InvalidInput(format!(
            "geometry has {} parameters, bounds cover {}",
            model.n_params(),
            bounds.len()
        )));
    }
    nelder_mead(|x| geometry_misfit(model, x, data, stations, p, inner), bounds, x0, cfg)
}
