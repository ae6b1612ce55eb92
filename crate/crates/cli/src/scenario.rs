//! Scenario files: one JSON document describing the medium, the fault, its
//! slip, the stations and the task options.

use std::fs;
use std::path::{Path, PathBuf};

use dislo_core::forward::{Kernel, StationSet};
use dislo_core::inverse::{RectParam, Regularization};
use dislo_core::mesh::{parse_mesh, parse_slip, rect_to_mesh, SlipField, SlipMode, TriMesh};
use dislo_core::quadrature::TRIANGLE_ORDERS;
use dislo_core::rect::RectDislocation;
use dislo_core::{LameField, LameParameters, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{read_stations, Lattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Forward,
    InvertSlip,
    InvertGeometry,
    Verify,
    Uniqueness,
    FdCompare,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Forward => "forward",
            Task::InvertSlip => "invert-slip",
            Task::InvertGeometry => "invert-geometry",
            Task::Verify => "verify",
            Task::Uniqueness => "uniqueness",
            Task::FdCompare => "fd-compare",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MediumSpec {
    Homogeneous {
        lambda: f64,
        mu: f64,
    },
    /// `μ(x) = μ₀ + amplitude · tanh(x₃ + depth)`, constant `λ`.
    TanhShear {
        lambda: f64,
        mu0: f64,
        amplitude: f64,
        depth: f64,
    },
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultSpec {
    /// `[a, b] × [c, d]` at `x₃ = −|alpha|`, split into `n1 × n2` cells of
    /// two triangles each.
    Rect {
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        alpha: f64,
        #[serde(default = "four")]
        n1: usize,
        #[serde(default = "four")]
        n2: usize,
    },
    Mesh {
        path: PathBuf,
    },
}

fn tangential() -> String {
    "tangential".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SlipSpec {
    Uniform {
        value: [f64; 3],
        #[serde(default = "tangential")]
        mode: String,
    },
    File {
        path: PathBuf,
        #[serde(default = "tangential")]
        mode: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StationSpec {
    Grid(Lattice),
    File { path: PathBuf },
}

/// Second fault of a uniqueness comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub fault: FaultSpec,
    pub slip: SlipSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdOptions {
    pub half_width: f64,
    /// Box depth; twice the half-width when absent.
    pub depth: Option<f64>,
    /// Cells along `x₁` per grid, coarse to fine.
    pub cells: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            half_width: 8.0,
            depth: None,
            cells: vec![32, 64],
            tol: 1e-8,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    pub kernel: String,
    /// Points of the triangle rule.
    pub order: usize,
    pub reg_weight: f64,
    pub regularization: String,
    /// Observed displacements; synthetic data from the configured slip
    /// when absent.
    pub data: Option<PathBuf>,
    /// Refinements of the synthetic-data mesh relative to the inversion mesh.
    pub data_refinement: usize,
    /// Standard deviation of Gaussian noise added to synthetic data.
    pub noise: f64,
    pub free: Vec<String>,
    pub bounds: Vec<[f64; 2]>,
    pub x0: Option<Vec<f64>>,
    pub max_evals: usize,
    pub restarts: usize,
    pub other: Option<SceneSpec>,
    pub direction: [f64; 3],
    pub floor_order: usize,
    pub jump_point: Option<[f64; 3]>,
    pub fd: FdOptions,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            kernel: "mindlin".into(),
            order: 6,
            reg_weight: 1e-6,
            regularization: "identity".into(),
            data: None,
            data_refinement: 1,
            noise: 0.0,
            free: vec!["alpha".into()],
            bounds: vec![[0.5, 3.0]],
            x0: None,
            max_evals: 200,
            restarts: 1,
            other: None,
            direction: [0.0, 0.0, 1.0],
            floor_order: 12,
            jump_point: None,
            fd: FdOptions::default(),
        }
    }
}

/// The scenario file as written, with every default filled in once loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub task: Option<Task>,
    pub medium: MediumSpec,
    pub fault: FaultSpec,
    pub slip: SlipSpec,
    #[serde(default)]
    pub stations: Option<StationSpec>,
    #[serde(default)]
    pub options: Options,
    #[serde(default)]
    pub seed: u64,
}

/// How stations were declared, which decides the output table layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Lattice(Lattice),
    Named(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct Stations {
    pub set: StationSet,
    pub layout: Layout,
}

#[derive(Debug, Clone)]
pub struct Fault {
    pub mesh: TriMesh,
    /// Present for rectangle faults.
    pub rect: Option<RectDislocation>,
    pub slip: SlipField,
}

/// A validated scenario with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub task: Task,
    pub medium: LameField,
    /// Lamé pair of a homogeneous medium.
    pub params: Option<LameParameters>,
    pub fault: Fault,
    pub stations: Option<Stations>,
    pub other: Option<Fault>,
    pub kernel: Kernel,
    pub regularization: Regularization,
    pub free: Vec<RectParam>,
    pub direction: Vec3,
}

impl Scenario {
    /// Lamé pair for tasks that need a homogeneous medium.
    pub fn homogeneous(&self) -> CliResult<LameParameters> {
        self.params.ok_or_else(|| {
            CliError::Config(format!("task {} needs a homogeneous medium", self.task.as_str()))
        })
    }

    pub fn stations(&self) -> CliResult<&Stations> {
        self.stations
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("task {} needs stations", self.task.as_str())))
    }
}

fn existing(base: &Path, path: &Path) -> CliResult<PathBuf> {
    let p = crate::io::resolve(base, path);
    fs::canonicalize(&p).map_err(|_| CliError::MissingFile {
        path: p.display().to_string(),
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(&path.display().to_string(), e))
}

fn build_medium(spec: &MediumSpec) -> CliResult<(LameField, Option<LameParameters>)> {
    let field = |e: dislo_core::Error| CliError::config("medium", e);
    match *spec {
        MediumSpec::Homogeneous { lambda, mu } => {
            let p = LameParameters::new(lambda, mu).map_err(field)?;
            Ok((LameField::constant(p), Some(p)))
        }
        MediumSpec::TanhShear {
            lambda,
            mu0,
            amplitude,
            depth,
        } => {
            if !(depth.is_finite() && amplitude.is_finite()) {
                return Err(CliError::Config("medium: depth and amplitude must be finite".into()));
            }
            // μ ranges over (μ₀ − |amp|, μ₀ + |amp|); convexity at the softest
            // value covers the whole field.
            LameParameters::new(lambda, mu0 - amplitude.abs()).map_err(field)?;
            Ok((LameField::tanh_shear(lambda, mu0, amplitude, depth), None))
        }
    }
}

fn build_fault(fault: &mut FaultSpec, slip: &mut SlipSpec, base: &Path, label: &str) -> CliResult<Fault> {
    let (mesh, mut rect) = match fault {
        FaultSpec::Rect {
            a,
            b,
            c,
            d,
            alpha,
            n1,
            n2,
        } => {
            let rect = RectDislocation::new(*a, *b, *c, *d, *alpha, Vec3::zeros())
                .map_err(|e| CliError::config(&format!("{label}.fault"), e))?;
            let mesh = rect_to_mesh(&rect, *n1, *n2).map_err(|e| CliError::config(&format!("{label}.fault"), e))?;
            (mesh, Some(rect))
        }
        FaultSpec::Mesh { path } => {
            *path = existing(base, path)?;
            let mesh = parse_mesh(&read_text(path)?).map_err(|e| CliError::config(&path.display().to_string(), e))?;
            (mesh, None)
        }
    };
    let field = match slip {
        SlipSpec::Uniform { value, mode } => {
            let mode: SlipMode = mode.parse().map_err(|e| CliError::config(&format!("{label}.slip.mode"), e))?;
            SlipField::uniform(&mesh, Vec3::from(*value), mode)
        }
        SlipSpec::File { path, mode } => {
            let mode: SlipMode = mode.parse().map_err(|e| CliError::config(&format!("{label}.slip.mode"), e))?;
            *path = existing(base, path)?;
            let mut field =
                parse_slip(&read_text(path)?, &mesh).map_err(|e| CliError::config(&path.display().to_string(), e))?;
            field.mode = mode;
            field
        }
    };
    field
        .validate(&mesh)
        .map_err(|e| CliError::config(&format!("{label}.slip"), e))?;
    if let Some(r) = rect.as_mut() {
        if field.values.iter().all(|v| *v == field.values[0]) {
            *r = r.with_slip(field.values[0]);
        }
    }
    Ok(Fault {
        mesh,
        rect,
        slip: field,
    })
}

fn build_stations(spec: &mut StationSpec, base: &Path) -> CliResult<Stations> {
    match spec {
        StationSpec::Grid(lattice) => Ok(Stations {
            set: lattice.stations().map_err(|e| CliError::config("stations", e))?,
            layout: Layout::Lattice(*lattice),
        }),
        StationSpec::File { path } => {
            *path = existing(base, path)?;
            let (ids, set) = read_stations(path)?;
            Ok(Stations {
                set,
                layout: Layout::Named(ids),
            })
        }
    }
}

fn check_options(o: &mut Options, task: Task, base: &Path) -> CliResult<(Kernel, Regularization, Vec<RectParam>, Vec3)> {
    let kernel = match o.kernel.as_str() {
        "mindlin" => Kernel::Mindlin,
        "kelvin" => Kernel::Kelvin,
        other => return Err(CliError::Config(format!("options.kernel: unknown kernel '{other}'"))),
    };
    for (name, order) in [("order", o.order), ("floor_order", o.floor_order)] {
        if !TRIANGLE_ORDERS.contains(&order) {
            return Err(CliError::Config(format!(
                "options.{name}: {order} is not one of {TRIANGLE_ORDERS:?}"
            )));
        }
    }
    let reg: Regularization = o
        .regularization
        .parse()
        .map_err(|e| CliError::config("options.regularization", e))?;
    if !(o.reg_weight >= 0.0 && o.reg_weight.is_finite()) {
        return Err(CliError::Config(format!("options.reg_weight: {} must be >= 0", o.reg_weight)));
    }
    if !(o.noise >= 0.0 && o.noise.is_finite()) {
        return Err(CliError::Config(format!("options.noise: {} must be >= 0", o.noise)));
    }
    if let Some(path) = o.data.as_mut() {
        *path = existing(base, path)?;
    }
    let free = o
        .free
        .iter()
        .map(|s| s.parse::<RectParam>().map_err(|e| CliError::config("options.free", e)))
        .collect::<CliResult<Vec<_>>>()?;
    if task == Task::InvertGeometry {
        if free.is_empty() || o.bounds.len() != free.len() {
            return Err(CliError::Config(format!(
                "options.bounds: {} intervals for {} free parameters",
                o.bounds.len(),
                free.len()
            )));
        }
        if let Some(b) = o.bounds.iter().find(|b| !(b[0] < b[1])) {
            return Err(CliError::Config(format!("options.bounds: empty interval {b:?}")));
        }
        if let Some(x0) = &o.x0 {
            if x0.len() != free.len() {
                return Err(CliError::Config(format!(
                    "options.x0: {} values for {} free parameters",
                    x0.len(),
                    free.len()
                )));
            }
        }
        if o.max_evals == 0 || o.restarts == 0 {
            return Err(CliError::Config("options.max_evals and options.restarts must be positive".into()));
        }
    }
    let direction = Vec3::from(o.direction);
    if !(direction.norm() > 0.0) {
        return Err(CliError::Config("options.direction must be a nonzero vector".into()));
    }
    if task == Task::FdCompare {
        let fd = &o.fd;
        if fd.cells.is_empty() {
            return Err(CliError::Config("options.fd.cells is empty".into()));
        }
        if fd.cells.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("options.fd.cells must increase".into()));
        }
        if !(fd.half_width > 0.0) || fd.depth.is_some_and(|d| !(d > 0.0)) {
            return Err(CliError::Config("options.fd: box dimensions must be positive".into()));
        }
        if !(fd.tol > 0.0) || fd.max_iter == 0 {
            return Err(CliError::Config("options.fd: tol and max_iter must be positive".into()));
        }
    }
    Ok((kernel, reg, free, direction))
}

/// Parse and validate a scenario for `task`. Relative paths are taken from
/// the scenario file's directory and replaced by absolute ones, so the
/// echoed configuration reruns from anywhere.
pub fn load_scenario(path: &Path, task: Task) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingFile {
        path: path.display().to_string(),
    })?;
    let mut config: ScenarioConfig = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if let Some(t) = config.task {
        if t != task {
            return Err(CliError::Config(format!(
                "scenario declares task {} but {} was requested",
                t.as_str(),
                task.as_str()
            )));
        }
    }
    config.task = Some(task);
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let (medium, params) = build_medium(&config.medium)?;
    let fault = build_fault(&mut config.fault, &mut config.slip, &base, "scenario")?;
    let stations = config.stations.as_mut().map(|s| build_stations(s, &base)).transpose()?;
    let (kernel, regularization, free, direction) = check_options(&mut config.options, task, &base)?;
    let other = match config.options.other.as_mut() {
        Some(s) => Some(build_fault(&mut s.fault, &mut s.slip, &base, "options.other")?),
        None => None,
    };

    let needs_stations = !matches!(task, Task::FdCompare);
    if needs_stations && stations.is_none() {
        return Err(CliError::Config(format!("task {} needs stations", task.as_str())));
    }
    if task != Task::FdCompare && params.is_none() {
        return Err(CliError::Config(format!(
            "task {} needs a homogeneous medium; heterogeneous media are only supported by fd-compare",
            task.as_str()
        )));
    }
    match task {
        Task::InvertSlip | Task::InvertGeometry if fault.slip.mode == SlipMode::Oblique => {
            return Err(CliError::Config(
                "slip.mode: inversions need tangential or normal slip".into(),
            ));
        }
        Task::InvertGeometry if fault.rect.is_none() => {
            return Err(CliError::Config("invert-geometry needs a rect fault".into()));
        }
        Task::Uniqueness if other.is_none() => {
            return Err(CliError::Config("uniqueness needs options.other".into()));
        }
        _ => {}
    }
    Ok(Scenario {
        config,
        task,
        medium,
        params,
        fault,
        stations,
        other,
        kernel,
        regularization,
        free,
        direction,
    })
}
