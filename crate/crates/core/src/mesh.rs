//! Triangulated fault surfaces and piecewise-constant slip.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::Rotation3;

use crate::elastic::Vec3;
use crate::error::{Error, Result};
use crate::predicates::triangle_interiors_overlap;
use crate::quadrature::triangle_rule;
use crate::rect::RectDislocation;

/// Open, oriented, manifold triangle mesh strictly below the free surface.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    clearance: f64,
}

/// Orthonormal frame of one facet: normal from the winding, `t₂ = n × t₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacetFrame {
    pub n: Vec3,
    pub t1: Vec3,
    pub t2: Vec3,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl TriMesh {
    /// Validates and builds a mesh whose vertices all satisfy `x₃ ≤ −clearance`.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>, clearance: f64) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no facets".into()));
        }
        if !(clearance > 0.0 && clearance.is_finite()) {
            return Err(Error::InvalidMesh(format!("clearance must be positive, got {clearance}")));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
            if v[2] > -clearance {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i} at x3 = {} violates clearance {clearance}",
                    v[2]
                )));
            }
        }
        let mut used = vec![false; vertices.len()];
        let mut seen = HashSet::new();
        for (f, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!("facet {f} references a missing vertex")));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidMesh(format!("facet {f} repeats a vertex")));
            }
            let mut key = *t;
            key.sort_unstable();
            if !seen.insert(key) {
                return Err(Error::InvalidMesh(format!("facet {f} duplicates another facet")));
            }
            for &i in t {
                used[i] = true;
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {i} is not used by any facet")));
        }
        let mesh = Self {
            vertices,
            triangles,
            clearance,
        };
        let scale = mesh.diameter().max(f64::MIN_POSITIVE);
        for f in 0..mesh.n_facets() {
            let area = mesh.area(f);
            if area <= 1e-14 * scale * scale {
                return Err(Error::DegenerateFacet { facet: f, area });
            }
        }
        mesh.check_topology()?;
        Ok(mesh)
    }

    /// Builds a mesh whose clearance is its shallowest vertex depth.
    pub fn from_parts(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let top = vertices.iter().map(|v| v[2]).fold(f64::NEG_INFINITY, f64::max);
        Self::new(vertices, triangles, -top)
    }

    fn check_topology(&self) -> Result<()> {
        // Directed edges: each undirected edge is used at most twice, in
        // opposite directions when shared.
        let mut edges: HashMap<(usize, usize), Vec<(usize, bool)>> = HashMap::new();
        for (f, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                edges.entry(edge_key(a, b)).or_default().push((f, a < b));
            }
        }
        let mut boundary = 0;
        for (key, uses) in &edges {
            match uses.as_slice() {
                [_] => boundary += 1,
                [(f, d1), (g, d2)] => {
                    if d1 == d2 {
                        return Err(Error::InvalidMesh(format!(
                            "facets {f} and {g} have inconsistent orientation across edge {key:?}"
                        )));
                    }
                }
                _ => {
                    return Err(Error::InvalidMesh(format!("edge {key:?} is shared by {} facets", uses.len())));
                }
            }
        }
        if boundary == 0 {
            return Err(Error::InvalidMesh("surface is closed; an open surface is required".into()));
        }
        // Each vertex star must be a single edge-connected fan.
        let mut star: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for (f, t) in self.triangles.iter().enumerate() {
            for &v in t {
                star[v].push(f);
            }
        }
        for (v, facets) in star.iter().enumerate() {
            let mut reached = vec![facets[0]];
            let mut stack = vec![facets[0]];
            while let Some(f) = stack.pop() {
                for &g in facets {
                    if !reached.contains(&g) && self.shares_edge_through(f, g, v) {
                        reached.push(g);
                        stack.push(g);
                    }
                }
            }
            if reached.len() != facets.len() {
                return Err(Error::InvalidMesh(format!("vertex {v} is non-manifold")));
            }
        }
        Ok(())
    }

    fn shares_edge_through(&self, f: usize, g: usize, v: usize) -> bool {
        let (tf, tg) = (self.triangles[f], self.triangles[g]);
        tf.iter().any(|&a| a != v && tg.contains(&a))
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    pub fn n_facets(&self) -> usize {
        self.triangles.len()
    }

    pub fn facet_vertices(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.vertices[i])
    }

    fn area_vector(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.facet_vertices(f);
        (b - a).cross(&(c - a)) * 0.5
    }

    pub fn area(&self, f: usize) -> f64 {
        self.area_vector(f).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_facets()).map(|f| self.area(f)).sum()
    }

    /// Unit normal from the counter-clockwise winding.
    pub fn normal(&self, f: usize) -> Vec3 {
        self.area_vector(f).normalize()
    }

    pub fn centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.facet_vertices(f);
        (a + b + c) / 3.0
    }

    /// Longest edge of facet `f`.
    pub fn facet_size(&self, f: usize) -> f64 {
        let [a, b, c] = self.facet_vertices(f);
        (b - a).norm().max((c - b).norm()).max((a - c).norm())
    }

    /// Diameter of the vertex bounding box.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    /// Edges used by exactly one facet, as directed vertex pairs.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: BTreeMap<(usize, usize), ([usize; 2], usize)> = BTreeMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                count.entry(edge_key(a, b)).or_insert(([a, b], 0)).1 += 1;
            }
        }
        count.into_values().filter(|(_, n)| *n == 1).map(|(e, _)| e).collect()
    }

    /// Facets sharing an edge with each facet, in increasing order.
    pub fn facet_adjacency(&self) -> Vec<Vec<usize>> {
        let mut by_edge: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (f, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                by_edge.entry(edge_key(t[e], t[(e + 1) % 3])).or_default().push(f);
            }
        }
        let mut adj = vec![Vec::new(); self.n_facets()];
        for fs in by_edge.values() {
            if let [f, g] = fs.as_slice() {
                adj[*f].push(*g);
                adj[*g].push(*f);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Per-facet orthonormal frames.
    pub fn facet_frames(&self) -> Result<Vec<FacetFrame>> {
        let scale = self.diameter();
        (0..self.n_facets())
            .map(|f| {
                let area = self.area(f);
                if area <= 1e-14 * scale * scale {
                    return Err(Error::DegenerateFacet { facet: f, area });
                }
                Ok(frame_from_normal(self.normal(f)))
            })
            .collect()
    }

    pub fn translated(&self, shift: &Vec3) -> Result<Self> {
        let v = self.vertices.iter().map(|p| p + shift).collect();
        Self::new(v, self.triangles.clone(), self.clearance - shift[2])
    }

    /// Rotates about `center`; the result must still lie below the surface.
    pub fn rotated_about(&self, rot: &Rotation3<f64>, center: &Vec3) -> Result<Self> {
        let v = self.vertices.iter().map(|p| center + rot * (p - center)).collect();
        Self::from_parts(v, self.triangles.clone())
    }

    /// Same surface with the winding, and hence every normal, reversed.
    pub fn reversed(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            clearance: self.clearance,
        }
    }

    /// Keeps only the listed facets (and the vertices they use).
    pub fn submesh(&self, facets: &[usize]) -> Result<Self> {
        let mut remap = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(facets.len());
        for &f in facets {
            let t = self
                .triangles
                .get(f)
                .ok_or_else(|| Error::InvalidMesh(format!("facet {f} out of range")))?;
            triangles.push(t.map(|i| {
                *remap.entry(i).or_insert_with(|| {
                    vertices.push(self.vertices[i]);
                    vertices.len() - 1
                })
            }));
        }
        Self::new(vertices, triangles, self.clearance)
    }

    /// Midpoint subdivision of every facet into four; returns the parent
    /// facet of each child.
    pub fn refined(&self) -> Result<(Self, Vec<usize>)> {
        let mut vertices = self.vertices.clone();
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                vertices.push((vertices[a] + vertices[b]) * 0.5);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.n_facets());
        let mut parent = Vec::with_capacity(4 * self.n_facets());
        for (f, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            parent.extend([f; 4]);
        }
        Ok((Self::new(vertices, triangles, self.clearance)?, parent))
    }
}

/// Right-handed frame with `t₁` the projection of `e₁` (or `e₂` when `n` is
/// nearly parallel to `e₁`).
pub fn frame_from_normal(n: Vec3) -> FacetFrame {
    let pick = if n[0].abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = (pick - n * n.dot(&pick)).normalize();
    let t2 = n.cross(&t1);
    FacetFrame { n, t1, t2 }
}

/// Parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`, split into
/// `n1 × n2` cells of two triangles each, wound so that the normal is
/// `u × v / |u × v|`.
pub fn planar_patch(origin: Vec3, u: Vec3, v: Vec3, n1: usize, n2: usize) -> Result<TriMesh> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidMesh("patch needs at least one cell per side".into()));
    }
    let mut vertices = Vec::with_capacity((n1 + 1) * (n2 + 1));
    for j in 0..=n2 {
        for i in 0..=n1 {
            vertices.push(origin + u * (i as f64 / n1 as f64) + v * (j as f64 / n2 as f64));
        }
    }
    let id = |i: usize, j: usize| j * (n1 + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriMesh::from_parts(vertices, triangles)
}

/// Triangulates the rectangle with `n1 × n2` cells and upward normals.
pub fn rect_to_mesh(rect: &RectDislocation, n1: usize, n2: usize) -> Result<TriMesh> {
    planar_patch(
        Vec3::new(rect.a, rect.c, rect.plane()),
        Vec3::new(rect.b - rect.a, 0.0, 0.0),
        Vec3::new(0.0, rect.d - rect.c, 0.0),
        n1,
        n2,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlipMode {
    Tangential,
    Normal,
    Oblique,
}

impl SlipMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SlipMode::Tangential => "tangential",
            SlipMode::Normal => "normal",
            SlipMode::Oblique => "oblique",
        }
    }
}

impl FromStr for SlipMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangential" => Ok(SlipMode::Tangential),
            "normal" => Ok(SlipMode::Normal),
            "oblique" => Ok(SlipMode::Oblique),
            other => Err(Error::InvalidSlip(format!("unknown slip mode {other:?}"))),
        }
    }
}

/// Piecewise-constant slip, one vector per facet.
#[derive(Debug, Clone, PartialEq)]
pub struct SlipField {
    pub values: Vec<Vec3>,
    pub mode: SlipMode,
}

const MODE_TOL: f64 = 1e-12;

impl SlipField {
    pub fn new(values: Vec<Vec3>, mode: SlipMode) -> Self {
        Self { values, mode }
    }

    pub fn uniform(mesh: &TriMesh, g: Vec3, mode: SlipMode) -> Self {
        Self::new(vec![g; mesh.n_facets()], mode)
    }

    pub fn zeros(mesh: &TriMesh, mode: SlipMode) -> Self {
        Self::uniform(mesh, Vec3::zeros(), mode)
    }

    /// Checks the facet count, finiteness and the mode constraint.
    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        if self.values.len() != mesh.n_facets() {
            return Err(Error::InvalidSlip(format!(
                "{} slip vectors for {} facets",
                self.values.len(),
                mesh.n_facets()
            )));
        }
        for (f, g) in self.values.iter().enumerate() {
            if !g.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidSlip(format!("facet {f}: non-finite slip")));
            }
            let n = mesh.normal(f);
            let tol = MODE_TOL * (1.0 + g.norm());
            let bad = match self.mode {
                SlipMode::Tangential => g.dot(&n).abs() > tol,
                SlipMode::Normal => (g - n * g.dot(&n)).norm() > tol,
                SlipMode::Oblique => false,
            };
            if bad {
                return Err(Error::InvalidSlip(format!("facet {f}: slip violates {} mode", self.mode.as_str())));
            }
        }
        Ok(())
    }

    /// Facets where the slip vanishes.
    pub fn support_violations(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&f| self.values[f].norm() == 0.0).collect()
    }

    /// `|g| > 0` on every facet.
    pub fn has_full_support(&self) -> bool {
        self.values.iter().all(|g| g.norm() > 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.values.iter().map(|g| g * s).collect(), self.mode)
    }

    pub fn combined(&self, s: f64, other: &Self, t: f64) -> Self {
        let mode = if self.mode == other.mode { self.mode } else { SlipMode::Oblique };
        Self::new(self.values.iter().zip(&other.values).map(|(a, b)| a * s + b * t).collect(), mode)
    }
}

/// Projects each facet's slip onto the tangent plane or the normal line.
pub fn project_slip(field: &SlipField, mesh: &TriMesh) -> Result<SlipField> {
    if field.values.len() != mesh.n_facets() {
        return Err(Error::InvalidSlip("slip length does not match the mesh".into()));
    }
    let values = field
        .values
        .iter()
        .enumerate()
        .map(|(f, g)| {
            let n = mesh.normal(f);
            match field.mode {
                SlipMode::Tangential => Ok(g - n * g.dot(&n)),
                SlipMode::Normal => Ok(n * g.dot(&n)),
                SlipMode::Oblique => Err(Error::InvalidSlip("oblique slip has no projection".into())),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SlipField::new(values, field.mode))
}

/// Outcome of [`validate_graph_condition`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphCheck {
    pub is_graph: bool,
    /// A facet pair whose projections overlap; `(f, f)` marks a facet that
    /// projects to a segment.
    pub witness: Option<(usize, usize)>,
}

/// Whether orthogonal projection along `direction` is injective on the mesh,
/// decided by exact overlap tests of the projected facet interiors.
pub fn validate_graph_condition(mesh: &TriMesh, direction: &Vec3) -> Result<GraphCheck> {
    let len = direction.norm();
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::InvalidInput("projection direction must be nonzero".into()));
    }
    let frame = frame_from_normal(direction / len);
    let proj: Vec<[f64; 2]> = mesh
        .vertices()
        .iter()
        .map(|v| [v.dot(&frame.t1), v.dot(&frame.t2)])
        .collect();
    let tris: Vec<[[f64; 2]; 3]> = mesh.triangles().iter().map(|t| t.map(|i| proj[i])).collect();
    for (f, t) in tris.iter().enumerate() {
        if crate::predicates::orient2d(t[0], t[1], t[2]).is_eq() {
            return Ok(GraphCheck {
                is_graph: false,
                witness: Some((f, f)),
            });
        }
    }
    let boxes: Vec<[f64; 4]> = tris
        .iter()
        .map(|t| {
            let xs = t.map(|p| p[0]);
            let ys = t.map(|p| p[1]);
            [
                xs.iter().cloned().fold(f64::INFINITY, f64::min),
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ys.iter().cloned().fold(f64::INFINITY, f64::min),
                ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ]
        })
        .collect();
    for f in 0..tris.len() {
        for g in (f + 1)..tris.len() {
            let (a, b) = (boxes[f], boxes[g]);
            if a[1] < b[0] || b[1] < a[0] || a[3] < b[2] || b[3] < a[2] {
                continue;
            }
            if triangle_interiors_overlap(tris[f], tris[g]) {
                return Ok(GraphCheck {
                    is_graph: false,
                    witness: Some((f, g)),
                });
            }
        }
    }
    Ok(GraphCheck {
        is_graph: true,
        witness: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub point: Vec3,
    pub weight: f64,
    pub facet: usize,
}

/// Symmetric triangle rule with `order` ∈ {1, 3, 6, 12} points on every facet.
pub fn quadrature_points(mesh: &TriMesh, order: usize) -> Result<Vec<QuadPoint>> {
    let rule = triangle_rule(order)?;
    let mut out = Vec::with_capacity(order * mesh.n_facets());
    for f in 0..mesh.n_facets() {
        let [a, b, c] = mesh.facet_vertices(f);
        let area = mesh.area(f);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            out.push(QuadPoint {
                point: a * l[0] + b * l[1] + c * l[2],
                weight: w * area,
                facet: f,
            });
        }
    }
    Ok(out)
}

const MESH_HEADER: &str = "dislo-mesh v1";
const SLIP_HEADER: &str = "dislo-slip v1";

fn parse_fields<T: FromStr>(parts: &[&str], line: usize, n: usize) -> Result<Vec<T>> {
    if parts.len() != n {
        return Err(Error::Parse {
            line,
            message: format!("expected {n} values, found {}", parts.len()),
        });
    }
    parts
        .iter()
        .map(|s| {
            s.parse::<T>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {s:?}"),
            })
        })
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

/// Parses the `dislo-mesh v1` format: `v x1 x2 x3` and 1-based `f i j k` lines.
pub fn parse_mesh(text: &str) -> Result<TriMesh> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, h)) if h.join(" ") == MESH_HEADER => {}
        Some((line, _)) => {
            return Err(Error::Parse {
                line,
                message: format!("expected header {MESH_HEADER:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty mesh file".into(),
            })
        }
    }
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (line, parts) in lines {
        match parts[0] {
            "v" => {
                let c: Vec<f64> = parse_fields(&parts[1..], line, 3)?;
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            "f" => {
                let idx: Vec<usize> = parse_fields(&parts[1..], line, 3)?;
                if idx.iter().any(|&i| i == 0 || i > vertices.len()) {
                    return Err(Error::Parse {
                        line,
                        message: "facet index out of range (indices are 1-based)".into(),
                    });
                }
                triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown record {other:?}"),
                })
            }
        }
    }
    TriMesh::from_parts(vertices, triangles)
}

pub fn format_mesh(mesh: &TriMesh) -> String {
    let mut s = format!("{MESH_HEADER}\n");
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:e} {:e} {:e}", v[0], v[1], v[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

/// Parses `s facet g1 g2 g3` lines (1-based facets), optionally preceded by
/// a `dislo-slip v1 <mode>` header; without one the mode is oblique. Every
/// facet of `mesh` must be listed exactly once.
pub fn parse_slip(text: &str, mesh: &TriMesh) -> Result<SlipField> {
    let mut mode = SlipMode::Oblique;
    let mut values: Vec<Option<Vec3>> = vec![None; mesh.n_facets()];
    for (k, (line, parts)) in content_lines(text).enumerate() {
        if k == 0 && parts.len() == 3 && parts[..2].join(" ") == SLIP_HEADER {
            mode = parts[2].parse()?;
            continue;
        }
        if parts[0] != "s" {
            return Err(Error::Parse {
                line,
                message: format!("unknown record {:?}", parts[0]),
            });
        }
        if parts.len() != 5 {
            return Err(Error::Parse {
                line,
                message: "expected `s facet g1 g2 g3`".into(),
            });
        }
        let f: usize = parse_fields(&parts[1..2], line, 1)?[0];
        let g: Vec<f64> = parse_fields(&parts[2..], line, 3)?;
        if f == 0 || f > mesh.n_facets() {
            return Err(Error::Parse {
                line,
                message: format!("facet {f} out of range 1..={}", mesh.n_facets()),
            });
        }
        if values[f - 1].replace(Vec3::new(g[0], g[1], g[2])).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("facet {f} listed twice"),
            });
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(f, g)| g.ok_or_else(|| Error::InvalidSlip(format!("facet {} has no slip record", f + 1))))
        .collect::<Result<Vec<_>>>()?;
    let field = SlipField::new(values, mode);
    field.validate(mesh)?;
    Ok(field)
}

pub fn format_slip(field: &SlipField) -> String {
    let mut s = format!("{SLIP_HEADER} {}\n", field.mode.as_str());
    for (f, g) in field.values.iter().enumerate() {
        let _ = writeln!(s, "s {} {:e} {:e} {:e}", f + 1, g[0], g[1], g[2]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn horizontal_triangle(z: f64) -> TriMesh {
        TriMesh::from_parts(
            vec![Vec3::new(0.0, 0.0, z), Vec3::new(1.0, 0.0, z), Vec3::new(0.0, 1.0, z)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn stacked_pair() -> TriMesh {
        TriMesh::from_parts(
            vec![
                Vec3::new(0.0, 0.0, -1.0),
                Vec3::new(1.0, 0.0, -1.0),
                Vec3::new(0.0, 1.0, -1.0),
                Vec3::new(0.2, 0.2, -2.0),
                Vec3::new(1.2, 0.2, -2.0),
                Vec3::new(0.2, 1.2, -2.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    /// Two facets hinged on the x₁ axis (shifted down), opening upwards.
    fn open_book(half_angle: f64) -> TriMesh {
        let (s, c) = half_angle.sin_cos();
        TriMesh::from_parts(
            vec![
                Vec3::new(0.0, 0.0, -2.0),
                Vec3::new(1.0, 0.0, -2.0),
                Vec3::new(0.5, -s, -2.0 + c),
                Vec3::new(0.5, s, -2.0 + c),
            ],
            vec![[0, 2, 1], [0, 1, 3]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_meshes() {
        let v = vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, -1.0), Vec3::new(0.0, 1.0, -1.0)];
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2]], 2.0).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 3]], 0.5).is_err());
        assert!(TriMesh::new(v.clone(), vec![[0, 1, 2], [2, 1, 0]], 0.5).is_err());
        let mut flat = v.clone();
        flat[2] = Vec3::new(2.0, 0.0, -1.0);
        assert!(matches!(TriMesh::new(flat, vec![[0, 1, 2]], 0.5), Err(Error::DegenerateFacet { facet: 0, .. })));
        let mut quad = v.clone();
        quad.push(Vec3::new(1.0, 1.0, -1.0));
        // Inconsistent winding across the shared edge 1–2.
        assert!(TriMesh::new(quad.clone(), vec![[0, 1, 2], [1, 2, 3]], 0.5).is_err());
        assert!(TriMesh::new(quad, vec![[0, 1, 2], [2, 1, 3]], 0.5).is_ok());
        // Closed tetrahedron.
        let tet = vec![
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, -1.0),
            Vec3::new(0.0, 1.0, -1.0),
            Vec3::new(0.0, 0.0, -2.0),
        ];
        assert!(TriMesh::new(tet, vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]], 0.5).is_err());
        // Bow-tie: two facets touching at a single vertex.
        let bow = vec![
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 0.0, -1.0),
            Vec3::new(0.0, 1.0, -1.0),
            Vec3::new(-1.0, 0.0, -1.0),
            Vec3::new(0.0, -1.0, -1.0),
        ];
        assert!(TriMesh::new(bow, vec![[0, 1, 2], [0, 3, 4]], 0.5).is_err());
    }

    #[test]
    fn frame_examples() {
        let m = horizontal_triangle(-1.0);
        let fr = m.facet_frames().unwrap()[0];
        assert_eq!(fr.n, Vec3::z());
        assert_eq!(fr.t1, Vec3::x());
        assert_eq!(fr.t2, Vec3::y());
        assert_eq!(m.reversed().facet_frames().unwrap()[0].n, -Vec3::z());
        let book = open_book(0.7);
        for fr in book.facet_frames().unwrap() {
            assert!(fr.n.dot(&fr.t1).abs() < 1e-14);
            assert!(fr.n.dot(&fr.t2).abs() < 1e-14);
            assert!(fr.t1.dot(&fr.t2).abs() < 1e-14);
            assert_relative_eq!(fr.t1.cross(&fr.t2), fr.n, epsilon = 1e-14);
        }
    }

    #[test]
    fn graph_condition_examples() {
        let single = validate_graph_condition(&horizontal_triangle(-1.0), &Vec3::z()).unwrap();
        assert!(single.is_graph && single.witness.is_none());
        let stacked = validate_graph_condition(&stacked_pair(), &Vec3::z()).unwrap();
        assert!(!stacked.is_graph);
        assert_eq!(stacked.witness, Some((0, 1)));
        let book = open_book(0.6);
        // The bisector of the two facet normals.
        let n = book.normal(0) + book.normal(1);
        assert!(validate_graph_condition(&book, &n).unwrap().is_graph);
        // Along the hinge, every facet projects to a segment.
        assert!(!validate_graph_condition(&book, &Vec3::x()).unwrap().is_graph);
    }

    #[test]
    fn slip_projection_examples() {
        let m = horizontal_triangle(-1.0);
        let t1 = m.facet_frames().unwrap()[0].t1;
        let tan = SlipField::uniform(&m, t1, SlipMode::Tangential);
        assert_eq!(project_slip(&tan, &m).unwrap(), tan);
        let vertical = SlipField::uniform(&m, Vec3::z(), SlipMode::Tangential);
        assert!(vertical.validate(&m).is_err());
        let p = project_slip(&vertical, &m).unwrap();
        assert_eq!(p.values[0], Vec3::zeros());
        assert_eq!(p.support_violations(), vec![0]);
        assert!(!p.has_full_support());
        let g = Vec3::new(0.3, -1.2, 0.8);
        let nrm = project_slip(&SlipField::uniform(&m, g, SlipMode::Normal), &m).unwrap();
        assert_eq!(nrm.values[0], Vec3::new(0.0, 0.0, 0.8));
        assert_eq!(project_slip(&nrm, &m).unwrap(), nrm);
        assert!(project_slip(&SlipField::uniform(&m, g, SlipMode::Oblique), &m).is_err());
    }

    #[test]
    fn quadrature_point_examples() {
        let m = horizontal_triangle(-1.0);
        let q = quadrature_points(&m, 1).unwrap();
        assert_eq!(q.len(), 1);
        assert_relative_eq!(q[0].point, Vec3::new(1.0 / 3.0, 1.0 / 3.0, -1.0), epsilon = 1e-15);
        assert_relative_eq!(q[0].weight, 0.5, epsilon = 1e-15);
        assert!(matches!(quadrature_points(&m, 7), Err(Error::UnsupportedOrder(7))));
        let book = open_book(0.4);
        for order in [1, 3, 6, 12] {
            let q = quadrature_points(&book, order).unwrap();
            let total: f64 = q.iter().map(|p| p.weight).sum();
            assert_relative_eq!(total, book.total_area(), epsilon = 1e-12);
            // ∫ x₁ dσ over each facet equals area × centroid₁.
            for f in 0..book.n_facets() {
                let integral: f64 = q.iter().filter(|p| p.facet == f).map(|p| p.weight * p.point[0]).sum();
                assert_relative_eq!(integral, book.area(f) * book.centroid(f)[0], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rect_round_trip() {
        let r = RectDislocation::new(-1.0, 2.0, 0.5, 1.5, 3.0, Vec3::x()).unwrap();
        let m = rect_to_mesh(&r, 5, 3).unwrap();
        assert_eq!(m.n_facets(), 30);
        assert_relative_eq!(m.total_area(), r.area(), epsilon = 1e-12);
        for f in 0..m.n_facets() {
            assert_relative_eq!(m.normal(f), Vec3::z(), epsilon = 1e-15);
        }
        assert_eq!(m.boundary_edges().len(), 2 * (5 + 3));
    }

    #[test]
    fn refinement_preserves_area_and_orientation() {
        let m = open_book(0.5);
        let (fine, parent) = m.refined().unwrap();
        assert_eq!(fine.n_facets(), 4 * m.n_facets());
        assert_relative_eq!(fine.total_area(), m.total_area(), epsilon = 1e-14);
        for (f, &p) in parent.iter().enumerate() {
            assert_relative_eq!(fine.normal(f), m.normal(p), epsilon = 1e-14);
        }
    }

    #[test]
    fn file_round_trip() {
        let m = open_book(0.3);
        let back = parse_mesh(&format_mesh(&m)).unwrap();
        assert_eq!(back, m);
        let g = SlipField::new(vec![Vec3::new(0.1, 1.0 / 3.0, -2.5), Vec3::new(1e-300, 0.0, 7.0)], SlipMode::Oblique);
        assert_eq!(parse_slip(&format_slip(&g), &m).unwrap(), g);
        assert!(matches!(parse_mesh("dislo-mesh v2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_mesh("dislo-mesh v1\nv 0 0 -1\nv 1 0 -1\nv 0 1 -1\nf 0 1 2\n"),
            Err(Error::Parse { line: 5, .. })
        ));
        assert!(parse_slip("s 1 0 0 1\n", &m).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn graph_condition_is_rotation_invariant(
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in 0.0f64..std::f64::consts::PI,
            dir in prop::array::uniform3(-1.0f64..1.0),
            half in 0.2f64..1.3,
        ) {
            let axis = Vec3::from(axis);
            let dir = Vec3::from(dir);
            prop_assume!(axis.norm() > 0.1 && dir.norm() > 0.1);
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            for mesh in [open_book(half), stacked_pair()] {
                let before = validate_graph_condition(&mesh, &dir).unwrap();
                let deep = mesh.translated(&Vec3::new(0.0, 0.0, -5.0)).unwrap();
                let center = deep.centroid(0);
                let moved = deep.rotated_about(&rot, &center).unwrap();
                let after = validate_graph_condition(&moved, &(rot * dir)).unwrap();
                prop_assert_eq!(before.is_graph, after.is_graph);
            }
        }

        #[test]
        fn projections_are_idempotent(g in prop::array::uniform3(-5.0f64..5.0), half in 0.1f64..1.4) {
            let m = open_book(half);
            for mode in [SlipMode::Tangential, SlipMode::Normal] {
                let f = SlipField::uniform(&m, Vec3::from(g), mode);
                let once = project_slip(&f, &m).unwrap();
                let twice = project_slip(&once, &m).unwrap();
                once.validate(&m).unwrap();
                for (a, b) in once.values.iter().zip(&twice.values) {
                    prop_assert!((a - b).norm() <= 1e-14 * (1.0 + a.norm()));
                }
            }
        }
    }
}
