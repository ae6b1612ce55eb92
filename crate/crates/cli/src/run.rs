//! Task dispatch and report emission.

use std::fs;
use std::path::Path;

use dislo_core::fd::{error_report, observed_order, self_convergence_order, solve_fault, GridSpec, SolverOptions};
use dislo_core::forward::{
    displacements, free_surface_traction_check, jump_check, traction_continuity_check, ForwardOptions, Kernel,
    NearField, StationSet,
};
use dislo_core::inverse::{
    assemble_greens, invert_slip, quadrature_noise_floor, search_geometry, slip_relative_error, stack,
    uniqueness_experiment, GeometryModel, InnerSolver, NelderMead, Scene,
};
use dislo_core::mesh::{format_slip, SlipField, TriMesh};
use dislo_core::rect::{u_gamma_closed_form, u_gamma_quadrature_converged};
use dislo_core::Vec3;
use log::info;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, emit_grid, emit_stations, json_bytes, read_displacements};
use crate::scenario::{Fault, FaultSpec, Layout, Scenario, ScenarioConfig, Stations, Task};

/// Acceptance thresholds of the verify task.
pub const TRACTION_TOL: f64 = 1e-6;
pub const JUMP_TOL: f64 = 1e-3;
pub const TRACTION_JUMP_TOL: f64 = 1e-2;
pub const ORACLE_TOL: f64 = 1e-6;
/// Most stations used by the closed-form oracle comparison.
const ORACLE_STATIONS: usize = 25;

/// Runs the scenario's task, writing every artifact into `out`.
pub fn run(s: &Scenario, out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    atomic_write(&out.join("scenario.json"), &json_bytes(&s.config))?;
    info!("task {} -> {}", s.task.as_str(), out.display());
    match s.task {
        Task::Forward => forward(s, out),
        Task::InvertSlip => invert_slip_task(s, out),
        Task::InvertGeometry => invert_geometry_task(s, out),
        Task::Verify => verify(s, out),
        Task::Uniqueness => uniqueness(s, out),
        Task::FdCompare => fd_compare(s, out),
    }
}

fn write_table(values: &[Vec3], st: &Stations, path: &Path) -> CliResult<()> {
    match &st.layout {
        Layout::Lattice(l) => emit_grid(values, &st.set, l, path),
        Layout::Named(ids) => emit_stations(values, &st.set, ids, path),
    }
}

fn forward(s: &Scenario, out: &Path) -> CliResult<()> {
    let p = s.homogeneous()?;
    let st = s.stations()?;
    let opts = ForwardOptions::new(s.kernel, s.config.options.order);
    let u = displacements(st.set.points(), &s.fault.mesh, &s.fault.slip, &p, &opts)?;
    write_table(&u, st, &out.join("displacement.csv"))
}

/// `mesh` refined `levels` times with the slip of each facet copied to its
/// children.
pub fn refine_with_slip(mesh: &TriMesh, slip: &SlipField, levels: usize) -> CliResult<(TriMesh, SlipField)> {
    let (mut m, mut g) = (mesh.clone(), slip.clone());
    for _ in 0..levels {
        let (fine, parent) = m.refined()?;
        g = SlipField::new(parent.iter().map(|&f| g.values[f]).collect(), g.mode);
        m = fine;
    }
    Ok((m, g))
}

/// Observed data, or synthetic data from the configured fault computed on
/// a refined mesh plus seeded Gaussian noise.
fn data_vector(s: &Scenario, st: &StationSet) -> CliResult<(DVector<f64>, bool)> {
    let o = &s.config.options;
    if let Some(path) = &o.data {
        let (xy, u) = read_displacements(path)?;
        if xy.len() != st.len() {
            return Err(CliError::Config(format!(
                "{}: {} rows for {} stations",
                path.display(),
                xy.len(),
                st.len()
            )));
        }
        for (i, (a, b)) in xy.iter().zip(st.points()).enumerate() {
            if (a[0] - b[0]).abs().max((a[1] - b[1]).abs()) > 1e-9 * (1.0 + b.norm()) {
                return Err(CliError::Config(format!(
                    "{}: row {} at ({}, {}) does not match station ({}, {})",
                    path.display(),
                    i + 1,
                    a[0],
                    a[1],
                    b[0],
                    b[1]
                )));
            }
        }
        return Ok((stack(&u), false));
    }
    let p = s.homogeneous()?;
    let (mesh, slip) = refine_with_slip(&s.fault.mesh, &s.fault.slip, o.data_refinement)?;
    let opts = ForwardOptions::new(Kernel::Mindlin, o.order);
    let mut d = stack(&displacements(st.points(), &mesh, &slip, &p, &opts)?);
    if o.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(s.config.seed);
        let normal = Normal::new(0.0, o.noise).map_err(|e| CliError::config("options.noise", e))?;
        for x in d.iter_mut() {
            *x += normal.sample(&mut rng);
        }
    }
    Ok((d, true))
}

fn v3(v: &Vec3) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

#[derive(Serialize)]
struct SlipReport<'a> {
    task: &'static str,
    seed: u64,
    mode: &'static str,
    regularization: &'static str,
    reg_weight: f64,
    slip: Vec<[f64; 3]>,
    coefficients: Vec<f64>,
    residual_norm: f64,
    model_norm: f64,
    data_norm: f64,
    synthetic: bool,
    /// Area-weighted relative error against the configured slip.
    slip_error: Option<f64>,
    config: &'a ScenarioConfig,
}

fn invert_slip_task(s: &Scenario, out: &Path) -> CliResult<()> {
    let p = s.homogeneous()?;
    let st = s.stations()?;
    let o = &s.config.options;
    let (data, synthetic) = data_vector(s, &st.set)?;
    let g = assemble_greens(&st.set, &s.fault.mesh, s.fault.slip.mode, &p, o.order)?;
    let r = invert_slip(&g, &data, o.reg_weight, s.regularization)?;
    let predicted: Vec<Vec3> = g
        .predict(&r.coefficients)
        .as_slice()
        .chunks(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    write_table(&predicted, st, &out.join("predicted.csv"))?;
    atomic_write(&out.join("slip.txt"), format_slip(&r.slip).as_bytes())?;
    let report = SlipReport {
        task: s.task.as_str(),
        seed: s.config.seed,
        mode: r.mode.as_str(),
        regularization: r.regularization.as_str(),
        reg_weight: r.reg_weight,
        slip: r.slip.values.iter().map(v3).collect(),
        coefficients: r.coefficients.iter().copied().collect(),
        residual_norm: r.residual_norm,
        model_norm: r.model_norm,
        data_norm: data.norm(),
        synthetic,
        slip_error: synthetic.then(|| slip_relative_error(&s.fault.mesh, &r.slip, &s.fault.slip)),
        config: &s.config,
    };
    info!("residual {:e}, model norm {:e}", r.residual_norm, r.model_norm);
    atomic_write(&out.join("inversion.json"), &json_bytes(&report))
}

#[derive(Serialize)]
struct GeometryReport<'a> {
    task: &'static str,
    seed: u64,
    free: &'a [String],
    params: Vec<f64>,
    /// Configured values of the free parameters, for synthetic data.
    truth: Option<Vec<f64>>,
    misfit: f64,
    evaluations: usize,
    converged: bool,
    flat: bool,
    trace: Vec<f64>,
    synthetic: bool,
    config: &'a ScenarioConfig,
}

fn invert_geometry_task(s: &Scenario, out: &Path) -> CliResult<()> {
    let p = s.homogeneous()?;
    let st = s.stations()?;
    let o = &s.config.options;
    let rect = s
        .fault
        .rect
        .ok_or_else(|| CliError::Config("invert-geometry needs a rect fault".into()))?;
    let (n1, n2) = match s.config.fault {
        FaultSpec::Rect { n1, n2, .. } => (n1, n2),
        _ => (1, 1),
    };
    let (data, synthetic) = data_vector(s, &st.set)?;
    let model = GeometryModel::Rectangle {
        base: rect,
        free: s.free.clone(),
        n1,
        n2,
    };
    let inner = InnerSolver {
        mode: s.fault.slip.mode,
        order: o.order,
        reg_weight: o.reg_weight,
        regularization: s.regularization,
    };
    let bounds: Vec<(f64, f64)> = o.bounds.iter().map(|b| (b[0], b[1])).collect();
    let cfg = NelderMead {
        max_evals: o.max_evals,
        restarts: o.restarts,
        seed: s.config.seed,
        ..NelderMead::default()
    };
    let r = search_geometry(&model, &data, &st.set, &p, &inner, &bounds, o.x0.as_deref(), &cfg)?;
    let truth = synthetic.then(|| s.free.iter().map(|f| f.value(&rect)).collect());
    info!("best {:?} misfit {:e} after {} evaluations", r.params, r.misfit, r.evaluations);
    let report = GeometryReport {
        task: s.task.as_str(),
        seed: s.config.seed,
        free: &o.free,
        params: r.params,
        truth,
        misfit: r.misfit,
        evaluations: r.evaluations,
        converged: r.converged,
        flat: r.flat,
        trace: r.trace,
        synthetic,
        config: &s.config,
    };
    atomic_write(&out.join("geometry.json"), &json_bytes(&report))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    /// Absent when the check could not be evaluated or does not apply.
    pub value: Option<f64>,
    pub threshold: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn measured(name: &'static str, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name,
            value: Some(value),
            threshold,
            pass: value <= threshold,
            detail,
        }
    }

    fn failed(name: &'static str, threshold: f64, err: impl std::fmt::Display) -> Self {
        Self {
            name,
            value: None,
            threshold,
            pass: false,
            detail: err.to_string(),
        }
    }
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    task: &'static str,
    seed: u64,
    all_pass: bool,
    checks: &'a [Check],
}

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn boundary_distance(q: &Vec3, mesh: &TriMesh) -> f64 {
    let v = mesh.vertices();
    mesh.boundary_edges()
        .iter()
        .map(|[a, b]| segment_distance(q, &v[*a], &v[*b]))
        .fold(f64::INFINITY, f64::min)
}

/// Probe point for transmission checks: the configured point, the centre
/// of a rectangle, or else the facet centroid deepest inside the fault.
fn fault_point(s: &Scenario, fault: &Fault) -> Vec3 {
    if let Some(q) = s.config.options.jump_point {
        return Vec3::from(q);
    }
    if let Some(r) = fault.rect {
        return Vec3::new(0.5 * (r.a + r.b), 0.5 * (r.c + r.d), r.plane());
    }
    let mesh = &fault.mesh;
    (0..mesh.n_facets())
        .map(|f| mesh.centroid(f))
        .max_by(|a, b| boundary_distance(a, mesh).total_cmp(&boundary_distance(b, mesh)))
        .unwrap_or_else(Vec3::zeros)
}

/// Runs every applicable check; the report is written before a failing
/// verdict turns into an error.
pub fn verify_checks(s: &Scenario) -> CliResult<Vec<Check>> {
    let p = s.homogeneous()?;
    let st = s.stations()?;
    let (mesh, slip) = (&s.fault.mesh, &s.fault.slip);
    let order = s.config.options.order;
    let mut checks = Vec::new();

    let mindlin = free_surface_traction_check(st.set.points(), mesh, slip, &p, &ForwardOptions::new(Kernel::Mindlin, order));
    let kelvin = free_surface_traction_check(st.set.points(), mesh, slip, &p, &ForwardOptions::new(Kernel::Kelvin, order));
    match (mindlin, kelvin) {
        (Ok(m), Ok(k)) => {
            checks.push(Check::measured(
                "traction-free",
                m,
                TRACTION_TOL,
                format!("max normalized surface traction over {} stations", st.set.len()),
            ));
            // The full-space kernel must visibly violate the condition.
            let ratio = if m > 0.0 { k / m } else { f64::INFINITY };
            checks.push(Check {
                name: "kelvin-control",
                value: Some(k),
                threshold: 10.0 * TRACTION_TOL,
                pass: k > 10.0 * m.max(0.0) && k > 0.0,
                detail: format!("full-space kernel surface traction, {ratio:.3e} times the half-space value"),
            });
        }
        (Err(e), _) | (_, Err(e)) => checks.push(Check::failed("traction-free", TRACTION_TOL, e)),
    }

    let q = fault_point(s, &s.fault);
    let d = boundary_distance(&q, mesh);
    let eps: Vec<f64> = [0.2, 0.06, 0.02, 0.006, 0.002].iter().map(|r| r * d).collect();
    let opts = ForwardOptions::new(Kernel::Mindlin, order).with_near(NearField::CHECK);
    let at = format!("at ({:.6}, {:.6}, {:.6})", q[0], q[1], q[2]);
    match jump_check(&q, mesh, slip, &p, &opts, &eps) {
        Ok(r) => checks.push(Check::measured(
            "jump",
            r.error,
            JUMP_TOL,
            format!("{at}: recovered {:?} for slip {:?}", v3(&r.extrapolated), v3(&r.slip)),
        )),
        Err(e) => checks.push(Check::failed("jump", JUMP_TOL, e)),
    }
    match traction_continuity_check(&q, mesh, slip, &p, &opts, &eps) {
        Ok(r) => checks.push(Check::measured(
            "traction-jump",
            r.relative,
            TRACTION_JUMP_TOL,
            format!("{at}: |[t]| / |t| with t = {:?}", v3(&r.traction)),
        )),
        Err(e) => checks.push(Check::failed("traction-jump", TRACTION_JUMP_TOL, e)),
    }

    match s.fault.rect {
        Some(rect) if slip.values.iter().all(|v| *v == slip.values[0]) => {
            let stride = st.set.len().div_ceil(ORACLE_STATIONS);
            let pts: Vec<Vec3> = st.set.points().iter().step_by(stride).copied().collect();
            let worst = pts.iter().try_fold(0.0f64, |worst, x| -> dislo_core::Result<f64> {
                let closed = u_gamma_closed_form(x, &rect, &p)?;
                let quad = u_gamma_quadrature_converged(x, &rect, &p, 1e-12)?.value;
                let e = (closed - quad).norm();
                Ok(worst.max(if closed.norm() > 0.0 { e / closed.norm() } else { e }))
            });
            match worst {
                Ok(w) => checks.push(Check::measured(
                    "oracle-equivalence",
                    w,
                    ORACLE_TOL,
                    format!("closed form against panel quadrature at {} stations", pts.len()),
                )),
                Err(e) => checks.push(Check::failed("oracle-equivalence", ORACLE_TOL, e)),
            }
        }
        _ => checks.push(Check {
            name: "oracle-equivalence",
            value: None,
            threshold: ORACLE_TOL,
            pass: true,
            detail: "skipped: needs a rect fault with uniform slip".into(),
        }),
    }
    Ok(checks)
}

fn verify(s: &Scenario, out: &Path) -> CliResult<()> {
    let checks = verify_checks(s)?;
    for c in &checks {
        info!("{} {}: {:?} (threshold {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let report = VerifyReport {
        task: s.task.as_str(),
        seed: s.config.seed,
        all_pass: failed == 0,
        checks: &checks,
    };
    atomic_write(&out.join("verify.json"), &json_bytes(&report))?;
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

#[derive(Serialize)]
struct Separation {
    rms_difference: f64,
    normalized: f64,
    norm1: f64,
    norm2: f64,
}

impl From<dislo_core::inverse::SeparationReport> for Separation {
    fn from(r: dislo_core::inverse::SeparationReport) -> Self {
        Self {
            rms_difference: r.rms_difference,
            normalized: r.normalized,
            norm1: r.norm1,
            norm2: r.norm2,
        }
    }
}

#[derive(Serialize)]
struct UniquenessReport<'a> {
    task: &'static str,
    seed: u64,
    separation: Separation,
    noise_floor: Separation,
    /// Separation above both the calibration threshold and ten times the
    /// quadrature noise.
    distinguishable: bool,
    config: &'a ScenarioConfig,
}

/// Smallest normalized separation that counts as distinguishable data.
pub const SEPARATION_THRESHOLD: f64 = 1e-3;

fn uniqueness(s: &Scenario, out: &Path) -> CliResult<()> {
    let p = s.homogeneous()?;
    let st = s.stations()?;
    let other = s
        .other
        .as_ref()
        .ok_or_else(|| CliError::Config("uniqueness needs options.other".into()))?;
    let o = &s.config.options;
    let s1 = Scene {
        mesh: s.fault.mesh.clone(),
        slip: s.fault.slip.clone(),
    };
    let s2 = Scene {
        mesh: other.mesh.clone(),
        slip: other.slip.clone(),
    };
    let sep = uniqueness_experiment(&s1, &s2, &st.set, &p, o.order, &s.direction)?;
    let (lo, hi) = if o.order == o.floor_order { (6, 12) } else { (o.order, o.floor_order) };
    let floor = quadrature_noise_floor(&s1, &st.set, &p, lo, hi)?;
    let distinguishable = sep.normalized > SEPARATION_THRESHOLD && sep.normalized > 10.0 * floor.normalized;
    info!("separation {:e}, floor {:e}", sep.normalized, floor.normalized);
    let report = UniquenessReport {
        task: s.task.as_str(),
        seed: s.config.seed,
        separation: sep.into(),
        noise_floor: floor.into(),
        distinguishable,
        config: &s.config,
    };
    atomic_write(&out.join("uniqueness.json"), &json_bytes(&report))
}

#[derive(Serialize)]
struct FdLevel {
    cells: usize,
    h: f64,
    iterations: usize,
    residual: f64,
    /// Relative L² error at the surface probes (homogeneous media).
    rel_l2: Option<f64>,
    max_error: Option<f64>,
    /// Recovered jump and its error relative to the slip; absent when the
    /// grid is too coarse to sample three spacings on both sides.
    jump: Option<[f64; 3]>,
    jump_error: Option<f64>,
}

#[derive(Serialize)]
struct FdReport<'a> {
    task: &'static str,
    seed: u64,
    half_width: f64,
    depth: f64,
    probes: usize,
    jump_point: [f64; 3],
    levels: Vec<FdLevel>,
    observed_order: Option<f64>,
    self_convergence_order: Option<f64>,
    config: &'a ScenarioConfig,
}

fn fd_compare(s: &Scenario, out: &Path) -> CliResult<()> {
    let fd = &s.config.options.fd;
    let (mesh, slip) = (&s.fault.mesh, &s.fault.slip);
    let l = fd.half_width;
    let depth = fd.depth.unwrap_or(2.0 * l);
    let grids = fd
        .cells
        .iter()
        .map(|&n| GridSpec::new(l, depth, 2.0 * l / n as f64))
        .collect::<dislo_core::Result<Vec<_>>>()?;
    let finest = grids.last().expect("cells validated non-empty");
    let stride = fd.cells[fd.cells.len() - 1] / fd.cells[0];
    let probes = finest.probe_points(mesh, stride.max(1));
    let reference = match s.params {
        Some(p) if !probes.is_empty() => {
            Some(displacements(&probes, mesh, slip, &p, &ForwardOptions::new(Kernel::Mindlin, s.config.options.order))?)
        }
        _ => None,
    };
    let q = fault_point(s, &s.fault);
    let (facet, _) = (0..mesh.n_facets())
        .map(|f| (f, (mesh.centroid(f) - q).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("meshes have facets");
    let (n, g) = (mesh.normal(facet), slip.values[facet]);
    let opts = SolverOptions {
        tol: fd.tol,
        max_iter: fd.max_iter,
        ..SolverOptions::default()
    };
    let mut levels = Vec::new();
    let mut samples = Vec::new();
    for (grid, &cells) in grids.iter().zip(&fd.cells) {
        info!("fd grid {:?}, h = {}", grid.cells(), grid.h());
        let sol = solve_fault(mesh, slip, &s.medium, grid, &opts)?;
        let vals = sol.sample(&probes)?;
        let rep = reference.as_ref().map(|r| error_report(&vals, r));
        let jump = match sol.recover_jump(&q, &n) {
            Ok(j) => Some(j),
            Err(e) => {
                log::warn!("no jump on the {cells}-cell grid: {e}");
                None
            }
        };
        levels.push(FdLevel {
            cells,
            h: grid.h(),
            iterations: sol.iterations,
            residual: sol.residual,
            rel_l2: rep.map(|r| r.rel_l2),
            max_error: rep.map(|r| r.max_error),
            jump: jump.as_ref().map(v3),
            jump_error: jump.map(|j| if g.norm() > 0.0 { (j - g).norm() / g.norm() } else { j.norm() }),
        });
        samples.push(vals);
    }
    let errors: Vec<f64> = levels.iter().filter_map(|l| l.rel_l2).collect();
    let k = samples.len();
    let self_order = (k >= 3).then(|| self_convergence_order(&samples[k - 3], &samples[k - 2], &samples[k - 1]));
    if let Some(fine) = samples.last() {
        let ids: Vec<String> = (1..=probes.len()).map(|i| i.to_string()).collect();
        let set = StationSet::surface(probes.clone())?;
        emit_stations(fine, &set, &ids, &out.join("fd_surface.csv"))?;
        if let Some(r) = &reference {
            emit_stations(r, &set, &ids, &out.join("fd_reference.csv"))?;
        }
    }
    let report = FdReport {
        task: s.task.as_str(),
        seed: s.config.seed,
        half_width: l,
        depth,
        probes: probes.len(),
        jump_point: v3(&q),
        observed_order: observed_order(&errors),
        self_convergence_order: self_order,
        levels,
        config: &s.config,
    };
    atomic_write(&out.join("fd_compare.json"), &json_bytes(&report))
}
