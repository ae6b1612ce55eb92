//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero
//! exit if any criterion fails. Runs as a plain binary (`harness = false`).

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dislo_core::fd::{error_report, observed_order, self_convergence_order, solve_fault, GridSpec, SolverOptions};
use dislo_core::forward::{
    displacements, free_surface_traction_check, jump_check, traction_continuity_check, ForwardOptions, Kernel,
    NearField, StationSet,
};
use dislo_core::inverse::{
    assemble_greens, invert_slip, quadrature_noise_floor, rigid_motion_nullspace, search_geometry,
    slip_relative_error, stack, uniqueness_experiment, GeometryModel, InnerSolver, NelderMead, RectParam,
    Regularization, Scene,
};
use dislo_core::mesh::{rect_to_mesh, SlipField, SlipMode, TriMesh};
use dislo_core::rect::{log_ladder, u_gamma_closed_form, u_gamma_quadrature_converged, vertex_singularity_probe, RectDislocation};
use dislo_core::{LameField, LameParameters, Vec3};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn unit_params() -> LameParameters {
    LameParameters::new(1.0, 1.0).unwrap()
}

fn unit_rect(depth: f64, slip: Vec3) -> RectDislocation {
    RectDislocation::new(-0.5, 0.5, -0.5, 0.5, depth, slip).unwrap()
}

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_rect(rng: &mut ChaCha8Rng, slip: Vec3) -> RectDislocation {
    let a = rng.random_range(-2.0..0.5);
    let c = rng.random_range(-2.0..0.5);
    let b = a + rng.random_range(0.2..2.0);
    let d = c + rng.random_range(0.2..2.0);
    let alpha = rng.random_range(0.3..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    RectDislocation::new(a, b, c, d, alpha, slip).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let slip = random_vector(&mut rng);
        let rect = random_rect(&mut rng, slip);
        let mu = rng.random_range(0.5..3.0);
        let lambda = rng.random_range(-0.6 * mu..4.0);
        let p = LameParameters::new(lambda, mu).unwrap();
        let diag = rect.diagonal();
        let x = loop {
            let x = Vec3::new(
                rng.random_range(rect.a - diag..rect.b + diag),
                rng.random_range(rect.c - diag..rect.d + diag),
                rng.random_range(rect.plane() - diag..0.0),
            );
            if rect.distance(&x) >= 0.1 * diag {
                break x;
            }
        };
        let closed = u_gamma_closed_form(&x, &rect, &p).map_err(|e| e.to_string())?;
        let quad = u_gamma_quadrature_converged(&x, &rect, &p, 1e-10).map_err(|e| e.to_string())?;
        worst = worst.max((closed - quad.value).norm() / closed.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && secs <= 30.0,
        format!("max relative error {worst:.2e} over 100 scenes (<= 1e-6), {secs:.1} s (<= 30 s)"),
    )
}

fn vertex_singularity() -> Outcome {
    let rect = unit_rect(1.0, Vec3::x());
    let ladder = log_ladder(1e-1 * rect.diagonal(), 1e-4 * rect.diagonal(), 12);
    let dir = Vec3::new(-1.0, -1.0, 0.0).normalize();
    let rep = vertex_singularity_probe(&rect, &unit_params(), 0, &ladder, dir).map_err(|e| e.to_string())?;
    let u3 = rep.components[2];
    let ratio = u3.log_slope.abs() / u3.log_slope_stderr;
    check(
        u3.log_r_squared >= 0.99 && ratio > 10.0,
        format!(
            "R^2 {:.5} (>= 0.99), |c1| = {:.3e} is {:.1} standard errors (> 10)",
            u3.log_r_squared,
            u3.log_slope.abs(),
            ratio
        ),
    )
}

fn rect_scene(n: usize, g: Vec3) -> (TriMesh, SlipField) {
    let mesh = rect_to_mesh(&unit_rect(1.0, g), n, n).unwrap();
    let slip = SlipField::uniform(&mesh, g, SlipMode::Oblique);
    (mesh, slip)
}

fn free_surface() -> Outcome {
    let (mesh, slip) = rect_scene(4, Vec3::new(1.0, 0.3, 0.2));
    let p = LameParameters::new(1.5, 0.8).unwrap();
    let grid = StationSet::surface_grid((-2.0, 2.0), (-2.0, 2.0), 15, 15).unwrap();
    let run = |k| free_surface_traction_check(grid.points(), &mesh, &slip, &p, &ForwardOptions::new(k, 6));
    let mindlin = run(Kernel::Mindlin).map_err(|e| e.to_string())?;
    let kelvin = run(Kernel::Kelvin).map_err(|e| e.to_string())?;
    check(
        mindlin <= 1e-6 && kelvin >= 10.0 * 1e-6 && kelvin >= 10.0 * mindlin,
        format!("half-space {mindlin:.2e} (<= 1e-6), full-space control {kelvin:.2e} (>= 10x)"),
    )
}

fn transmission() -> Outcome {
    let g = Vec3::new(1.0, 0.5, -0.25);
    let (mesh, slip) = rect_scene(4, g);
    let p = unit_params();
    let diam = mesh.diameter();
    let eps: Vec<f64> = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3].iter().map(|r| r * diam).collect();
    let opts = ForwardOptions::new(Kernel::Mindlin, 6).with_near(NearField::CHECK);
    let q = Vec3::new(0.0, 0.0, -1.0);
    let jump = jump_check(&q, &mesh, &slip, &p, &opts, &eps).map_err(|e| e.to_string())?;
    let tangential = SlipField::uniform(&mesh, Vec3::x(), SlipMode::Tangential);
    let t = traction_continuity_check(&q, &mesh, &tangential, &p, &opts, &eps).map_err(|e| e.to_string())?;
    let t_oblique = traction_continuity_check(&q, &mesh, &slip, &p, &opts, &eps).map_err(|e| e.to_string())?;
    let worst_t = t.relative.max(t_oblique.relative);
    check(
        jump.error <= 1e-3 && worst_t <= 1e-2,
        format!("jump error {:.2e} (<= 1e-3), traction jump {:.2e} (<= 1e-2)", jump.error, worst_t),
    )
}

fn fd_cross_validation() -> Outcome {
    let start = Instant::now();
    let p = unit_params();
    let field = LameField::constant(p);
    let (mesh, _) = rect_scene(4, Vec3::x());
    let slip = SlipField::uniform(&mesh, Vec3::x(), SlipMode::Tangential);
    let ns = [32, 64, 128];
    let finest = GridSpec::cubic(8.0, 128).unwrap();
    let probes = finest.probe_points(&mesh, 4);
    let reference = displacements(&probes, &mesh, &slip, &p, &ForwardOptions::new(Kernel::Mindlin, 6))
        .map_err(|e| e.to_string())?;
    let mut errors = Vec::new();
    let mut samples = Vec::new();
    for n in ns {
        let grid = GridSpec::cubic(8.0, n).unwrap();
        let sol = solve_fault(&mesh, &slip, &field, &grid, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let vals = sol.sample(&probes).map_err(|e| e.to_string())?;
        errors.push(error_report(&vals, &reference).rel_l2);
        samples.push(vals);
    }
    let order = observed_order(&errors).unwrap_or(f64::NAN);
    let self_order = self_convergence_order(&samples[0], &samples[1], &samples[2]);
    let secs = start.elapsed().as_secs_f64();
    let fine = errors[errors.len() - 1];
    check(
        fine <= 0.05 && order >= 1.0 && secs <= 600.0,
        format!(
            "rel L2 {:.2}% / {:.2}% / {:.2}% on 32/64/128 cells (<= 5%), order {order:.2} (>= 1), \
             self-convergence {self_order:.2}, {} probes, {secs:.0} s",
            100.0 * errors[0],
            100.0 * errors[1],
            100.0 * fine,
            probes.len()
        ),
    )
}

fn heterogeneous_transmission() -> Outcome {
    let field = LameField::tanh_shear(1.0, 1.0, 0.2, 1.0);
    let grid = GridSpec::cubic(2.0, 64).unwrap();
    let (mesh, _) = rect_scene(4, Vec3::x());
    let q = Vec3::new(0.0, 0.0, -1.0);
    let mut worst: f64 = 0.0;
    for g in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.6, 0.8, 0.0)] {
        let slip = SlipField::uniform(&mesh, g, SlipMode::Tangential);
        let sol = solve_fault(&mesh, &slip, &field, &grid, &SolverOptions::default()).map_err(|e| e.to_string())?;
        let jump = sol.recover_jump(&q, &mesh.normal(0)).map_err(|e| e.to_string())?;
        worst = worst.max((jump - g).norm() / g.norm());
    }
    check(worst <= 0.10, format!("max relative jump error {:.2}% (<= 10%)", 100.0 * worst))
}

fn slip_round_trip() -> Outcome {
    let p = unit_params();
    let rect = RectDislocation::new(-1.0, 1.0, -0.75, 0.75, 1.0, Vec3::zeros()).unwrap();
    let coarse = rect_to_mesh(&rect, 4, 4).unwrap();
    let truth = SlipField::new(
        (0..coarse.n_facets())
            .map(|f| {
                let c = coarse.centroid(f);
                Vec3::new(1.0 + 0.3 * c[0], 0.5 - 0.2 * c[1], 0.0)
            })
            .collect(),
        SlipMode::Tangential,
    );
    // Synthetic data on a mesh with twice the patch resolution.
    let (fine, parent) = coarse.refined().map_err(|e| e.to_string())?;
    let fine_slip = SlipField::new(parent.iter().map(|&f| truth.values[f]).collect(), SlipMode::Tangential);
    let stations = StationSet::surface_grid((-3.0, 3.0), (-3.0, 3.0), 15, 15).unwrap();
    let data = stack(&displacements(stations.points(), &fine, &fine_slip, &p, &ForwardOptions::new(Kernel::Mindlin, 6))
        .map_err(|e| e.to_string())?);
    let g = assemble_greens(&stations, &coarse, SlipMode::Tangential, &p, 6).map_err(|e| e.to_string())?;
    let w = 1e-8 * g.norm();
    let r = invert_slip(&g, &data, w, Regularization::Identity).map_err(|e| e.to_string())?;
    let err = slip_relative_error(&coarse, &r.slip, &truth);
    check(
        err <= 0.05,
        format!("{} patches from {} synthetic facets: rel L2 slip error {:.3}% (<= 5%)", coarse.n_facets(), fine.n_facets(), 100.0 * err),
    )
}

fn depth_search() -> Outcome {
    let p = unit_params();
    let truth = RectDislocation::new(-0.5, 0.5, -0.4, 0.4, 1.2, Vec3::zeros()).unwrap();
    let stations = StationSet::surface_grid((-2.0, 2.0), (-2.0, 2.0), 5, 5).unwrap();
    let fine = rect_to_mesh(&truth, 2, 2).unwrap();
    let slip = SlipField::uniform(&fine, Vec3::new(1.0, 0.3, 0.0), SlipMode::Tangential);
    let data = stack(&displacements(stations.points(), &fine, &slip, &p, &ForwardOptions::new(Kernel::Mindlin, 6))
        .map_err(|e| e.to_string())?);
    let model = GeometryModel::Rectangle {
        base: truth,
        free: vec![RectParam::Alpha],
        n1: 1,
        n2: 1,
    };
    let cfg = NelderMead::default();
    let r = search_geometry(&model, &data, &stations, &p, &InnerSolver::default(), &[(0.5, 3.0)], None, &cfg)
        .map_err(|e| e.to_string())?;
    let rel = (r.params[0] - 1.2).abs() / 1.2;
    check(
        rel <= 0.01 && r.evaluations <= 200,
        format!("depth {:.5} vs 1.2 ({:.3}%, <= 1%), {} evaluations (<= 200)", r.params[0], 100.0 * rel, r.evaluations),
    )
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let rect = random_rect(rng, Vec3::zeros());
    let mesh = rect_to_mesh(&rect, 2, 2).unwrap();
    // Horizontal facets: tangential slip lies in the x1-x2 plane, bounded
    // away from zero on every facet.
    let values = (0..mesh.n_facets())
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let len = rng.random_range(0.5..1.5);
            Vec3::new(len * angle.cos(), len * angle.sin(), 0.0)
        })
        .collect();
    Scene {
        mesh,
        slip: SlipField::new(values, SlipMode::Tangential),
    }
}

fn uniqueness_sweep() -> Outcome {
    let p = unit_params();
    let stations = StationSet::surface_grid((-4.0, 4.0), (-4.0, 4.0), 11, 11).unwrap();
    let e3 = Vec3::z();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut min_ratio = f64::INFINITY;
    let mut min_sep = f64::INFINITY;
    for _ in 0..20 {
        let (s1, s2) = (random_scene(&mut rng), random_scene(&mut rng));
        let sep = uniqueness_experiment(&s1, &s2, &stations, &p, 6, &e3).map_err(|e| e.to_string())?;
        let floor = quadrature_noise_floor(&s1, &stations, &p, 6, 12)
            .map_err(|e| e.to_string())?
            .normalized
            .max(quadrature_noise_floor(&s2, &stations, &p, 6, 12).map_err(|e| e.to_string())?.normalized);
        min_sep = min_sep.min(sep.normalized);
        min_ratio = min_ratio.min(sep.normalized / floor);
    }
    // Identical pairs: the same fault described by a refined mesh differs
    // only by quadrature error.
    let mut worst_identical: f64 = 0.0;
    let mut exact: f64 = 0.0;
    for _ in 0..5 {
        let s = random_scene(&mut rng);
        let (fine, parent) = s.mesh.refined().map_err(|e| e.to_string())?;
        let twin = Scene {
            slip: SlipField::new(parent.iter().map(|&f| s.slip.values[f]).collect(), SlipMode::Tangential),
            mesh: fine,
        };
        let floor = quadrature_noise_floor(&s, &stations, &p, 6, 12).map_err(|e| e.to_string())?.normalized;
        let sep = uniqueness_experiment(&s, &twin, &stations, &p, 6, &e3).map_err(|e| e.to_string())?;
        worst_identical = worst_identical.max(sep.normalized / floor);
        exact = exact.max(uniqueness_experiment(&s, &s, &stations, &p, 6, &e3).map_err(|e| e.to_string())?.normalized);
    }
    check(
        min_sep > 1e-3 && min_ratio > 1.0 && worst_identical <= 10.0 && exact == 0.0,
        format!(
            "distinct pairs: min separation {min_sep:.2e} (> 1e-3), min {min_ratio:.1e} x floor; \
             identical pairs: at most {worst_identical:.2} x floor, self-comparison {exact:e}"
        ),
    )
}

/// Rank of the rigid-motion constraints built with an explicit skew matrix.
fn constraint_rank(vertices: &[Vec3], normals: &[Vec<Vec3>]) -> usize {
    let rows: Vec<[f64; 6]> = vertices
        .iter()
        .zip(normals)
        .flat_map(|(x, ns)| {
            ns.iter().map(move |n| {
                let mut row = [0.0; 6];
                for (k, e) in [Vec3::x(), Vec3::y(), Vec3::z()].iter().enumerate() {
                    // A = skew(e_k): A x = e_k × x.
                    let a = nalgebra::Matrix3::new(0.0, -e[2], e[1], e[2], 0.0, -e[0], -e[1], e[0], 0.0);
                    row[k] = (a * x).dot(n);
                    row[3 + k] = n[k];
                }
                row
            })
        })
        .collect();
    let m = DMatrix::from_fn(rows.len(), 6, |i, j| rows[i][j]);
    m.rank(1e-10 * m.norm())
}

fn nullspace() -> Outcome {
    let e = vec![Vec3::x(), Vec3::y(), Vec3::z()];
    let tri = [Vec3::new(0.0, 0.0, -2.0), Vec3::new(1.0, 0.0, -2.0), Vec3::new(0.0, 1.0, -2.0)];
    let cases: [(&str, Vec<Vec3>, Vec<Vec<Vec3>>); 3] = [
        ("three vertices", tri.to_vec(), vec![e.clone(), e.clone(), e.clone()]),
        ("one vertex", vec![tri[0]], vec![e.clone()]),
        ("parallel normals", tri.to_vec(), vec![vec![Vec3::z(); 3]; 3]),
    ];
    let mut dims = Vec::new();
    for (name, v, n) in &cases {
        let d = rigid_motion_nullspace(v, n).map_err(|err| err.to_string())?.dimension;
        let oracle = 6 - constraint_rank(v, n);
        if d != oracle {
            return Err(format!("{name}: dimension {d}, independent rank count gives {oracle}"));
        }
        dims.push(d);
    }
    check(
        dims[0] == 0 && dims[1] == 3 && dims[2] >= 3,
        format!("dimensions {} / {} / {} (expected 0 / 3 / >= 3)", dims[0], dims[1], dims[2]),
    )
}

fn dislo(task: &str, config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_dislo"))
        .args([task, "--deterministic", "--seed", "42", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("{task} exited with {status}"))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("scenario.json");
    fs::write(
        &config,
        r#"{
            "medium": {"kind": "homogeneous", "lambda": 1.0, "mu": 1.0},
            "fault": {"kind": "rect", "a": -0.5, "b": 0.5, "c": -0.5, "d": 0.5, "alpha": 1.0, "n1": 2, "n2": 2},
            "slip": {"kind": "uniform", "value": [1.0, 0.2, 0.0]},
            "stations": {"kind": "grid", "x": [-2.0, 2.0], "y": [-2.0, 2.0], "n1": 7, "n2": 7},
            "options": {"noise": 1e-4, "restarts": 2, "max_evals": 60, "bounds": [[0.5, 2.0]]}
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for task in ["forward", "invert-slip", "invert-geometry", "verify"] {
        let (a, b) = (dir.path().join(format!("{task}-a")), dir.path().join(format!("{task}-b")));
        dislo(task, &config, &a)?;
        dislo(task, &config, &b)?;
        let mut names: Vec<_> = fs::read_dir(&a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            let (x, y) = (fs::read(a.join(&name)), fs::read(b.join(&name)));
            if x.map_err(|e| e.to_string())? != y.map_err(|e| e.to_string())? {
                return Err(format!("{task}: {} differs between runs", name.to_string_lossy()));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across repeated runs of 4 tasks"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("closed form matches quadrature", oracle_equivalence),
        ("logarithmic vertex singularity", vertex_singularity),
        ("traction-free surface", free_surface),
        ("transmission conditions", transmission),
        ("grid solver cross-validation", fd_cross_validation),
        ("heterogeneous transmission", heterogeneous_transmission),
        ("slip inversion round trip", slip_round_trip),
        ("depth search", depth_search),
        ("uniqueness sweep", uniqueness_sweep),
        ("rigid-motion nullspace", nullspace),
        ("deterministic reruns", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {:>2} {name}: {msg} [{secs:.1} s]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {msg} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
