//! Station files, displacement tables and atomic output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dislo_core::forward::StationSet;
use dislo_core::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Write `bytes` to a sibling temporary file and rename it over `path`, so
/// readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::output(path, "not a file path"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::output(path, e));
    }
    Ok(())
}

/// Decimal text that parses back to the same `f64` (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A rectangular surface lattice, `x₁` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub n1: usize,
    pub n2: usize,
}

impl Lattice {
    pub fn stations(&self) -> CliResult<StationSet> {
        Ok(StationSet::surface_grid(
            (self.x[0], self.x[1]),
            (self.y[0], self.y[1]),
            self.n1,
            self.n2,
        )?)
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, stations: &StationSet) -> CliResult<()> {
        if stations.len() != self.len() {
            return Err(CliError::NotLattice(format!(
                "{} stations for a {}x{} lattice",
                stations.len(),
                self.n1,
                self.n2
            )));
        }
        let expected = self.stations()?;
        let scale = self.x[0].abs().max(self.x[1].abs()).max(self.y[0].abs()).max(self.y[1].abs()).max(1.0);
        for (i, (a, b)) in stations.points().iter().zip(expected.points()).enumerate() {
            if (a - b).norm() > 1e-12 * scale {
                return Err(CliError::NotLattice(format!(
                    "station {i} at ({}, {}) should be at ({}, {})",
                    a[0], a[1], b[0], b[1]
                )));
            }
        }
        Ok(())
    }
}

fn check_finite(values: &[Vec3]) -> CliResult<()> {
    match values.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
        Some(index) => Err(CliError::NonFinite { index }),
        None => Ok(()),
    }
}

fn render(header: &[&str], rows: impl Iterator<Item = Vec<String>>, path: &Path) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::output(path, e))?;
    }
    w.into_inner().map_err(|e| CliError::output(path, e))
}

/// Write displacements on a declared lattice as `x1,x2,u1,u2,u3` rows in
/// lattice order.
pub fn emit_grid(values: &[Vec3], stations: &StationSet, lattice: &Lattice, path: &Path) -> CliResult<()> {
    lattice.check(stations)?;
    if values.len() != stations.len() {
        return Err(CliError::NotLattice(format!(
            "{} values for {} stations",
            values.len(),
            stations.len()
        )));
    }
    check_finite(values)?;
    let rows = stations.points().iter().zip(values).map(|(x, u)| {
        vec![fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(u[0]), fmt_f64(u[1]), fmt_f64(u[2])]
    });
    atomic_write(path, &render(&["x1", "x2", "u1", "u2", "u3"], rows, path)?)
}

/// Write displacements at named stations as `id,x1,x2,u1,u2,u3`.
pub fn emit_stations(values: &[Vec3], stations: &StationSet, ids: &[String], path: &Path) -> CliResult<()> {
    check_finite(values)?;
    let rows = ids.iter().zip(stations.points()).zip(values).map(|((id, x), u)| {
        vec![id.clone(), fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(u[0]), fmt_f64(u[1]), fmt_f64(u[2])]
    });
    atomic_write(path, &render(&["id", "x1", "x2", "u1", "u2", "u3"], rows, path)?)
}

fn reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(CliError::MissingFile {
            path: path.display().to_string(),
        });
    }
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Parse {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })
}

fn columns(path: &Path, rdr: &mut csv::Reader<fs::File>, names: &[&str]) -> CliResult<Vec<usize>> {
    let header = rdr.headers().map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    names
        .iter()
        .map(|n| {
            header.iter().position(|h| h == *n).ok_or_else(|| CliError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: format!("missing column '{n}'"),
            })
        })
        .collect()
}

/// Rows of a headed CSV file as `(id, selected numeric columns)`; the id
/// is the `id` column when present, else the 1-based row number.
fn numeric_rows(path: &Path, names: &[&str]) -> CliResult<Vec<(String, Vec<f64>)>> {
    let mut rdr = reader(path)?;
    let cols = columns(path, &mut rdr, names)?;
    let id_col = rdr.headers().ok().and_then(|h| h.iter().position(|c| c == "id"));
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let parse_err = |message: String| CliError::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let values = cols
            .iter()
            .zip(names)
            .map(|(&c, n)| {
                let field = rec.get(c).unwrap_or("");
                field.parse::<f64>().map_err(|_| parse_err(format!("{n} = '{field}' is not a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        let id = id_col.and_then(|c| rec.get(c)).map_or_else(|| (row + 1).to_string(), str::to_string);
        out.push((id, values));
    }
    Ok(out)
}

/// Surface stations from an `id,x1,x2` file.
pub fn read_stations(path: &Path) -> CliResult<(Vec<String>, StationSet)> {
    let rows = numeric_rows(path, &["x1", "x2"])?;
    if rows.is_empty() {
        return Err(CliError::Config(format!("{}: no stations", path.display())));
    }
    let ids = rows.iter().map(|r| r.0.clone()).collect();
    let points = rows.iter().map(|r| Vec3::new(r.1[0], r.1[1], 0.0)).collect();
    Ok((ids, StationSet::surface(points)?))
}

/// Station coordinates and displacements from a table written by
/// [`emit_grid`] or [`emit_stations`].
pub fn read_displacements(path: &Path) -> CliResult<(Vec<[f64; 2]>, Vec<Vec3>)> {
    let rows = numeric_rows(path, &["x1", "x2", "u1", "u2", "u3"])?;
    Ok(rows
        .into_iter()
        .map(|(_, v)| ([v[0], v[1]], Vec3::new(v[2], v[3], v[4])))
        .unzip())
}

/// `path` relative to the directory holding the scenario file.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report types serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice() -> Lattice {
        Lattice {
            x: [-1.0, 1.0],
            y: [0.0, 2.0],
            n1: 2,
            n2: 2,
        }
    }

    #[test]
    fn grid_rows_follow_the_lattice_with_x1_fastest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let l = lattice();
        let st = l.stations().unwrap();
        let values: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.1 / 3.0, -1e-300)).collect();
        emit_grid(&values, &st, &l, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,u1,u2,u3");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1.0000000000000000e0,0.0000000000000000e0"));
        let (xy, back) = read_displacements(&path).unwrap();
        assert_eq!(back, values);
        assert_eq!(xy[3], [1.0, 2.0]);
    }

    #[test]
    fn emission_refuses_nan_and_foreign_stations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let l = lattice();
        let st = l.stations().unwrap();
        let mut values = vec![Vec3::zeros(); 4];
        values[2][1] = f64::NAN;
        assert!(matches!(emit_grid(&values, &st, &l, &path), Err(CliError::NonFinite { index: 2 })));
        assert!(!path.exists());
        let moved = StationSet::surface(st.points().iter().map(|p| p * 1.5).collect()).unwrap();
        assert!(matches!(
            emit_grid(&[Vec3::zeros(); 4], &moved, &l, &path),
            Err(CliError::NotLattice(_))
        ));
        let short = StationSet::surface(st.points()[..3].to_vec()).unwrap();
        assert!(matches!(
            emit_grid(&[Vec3::zeros(); 3], &short, &l, &path),
            Err(CliError::NotLattice(_))
        ));
    }

    #[test]
    fn station_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.csv");
        fs::write(&path, "id,x1,x2\nA,0.5,-1\nB, 2 ,3e-1\n").unwrap();
        let (ids, st) = read_stations(&path).unwrap();
        assert_eq!(ids, ["A", "B"]);
        assert_eq!(st.points()[1], Vec3::new(2.0, 0.3, 0.0));
        fs::write(&path, "id,x1,x2\nA,0.5,oops\n").unwrap();
        match read_stations(&path) {
            Err(CliError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("x2"));
            }
            other => panic!("{other:?}"),
        }
        let missing = dir.path().join("nope.csv");
        let err = read_stations(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.csv"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn atomic_write_replaces_whole_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        atomic_write(&path, b"first version, longer").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
