//! Field export and run artifacts.
//!
//! CSV files carry a header `x,y,<components>` and one row per node in
//! row-major order (x fastest). Legacy VTK files use `STRUCTURED_POINTS` with
//! a single `POINT_DATA` section holding one attribute per field. Every
//! writer has a matching reader.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fields::{Grid2, ScalarField, VectorField2};
use crate::tensor::Vec2;

/// A named nodal field with one or two components, stored interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub components: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn scalar(name: &str, f: &ScalarField) -> Self {
        Self {
            name: name.into(),
            components: 1,
            data: f.values.clone(),
        }
    }

    pub fn vector(name: &str, f: &VectorField2) -> Self {
        Self {
            name: name.into(),
            components: 2,
            data: f.values.iter().flat_map(|v| [v.x, v.y]).collect(),
        }
    }

    pub fn nodes(&self) -> usize {
        self.data.len() / self.components
    }

    /// Column names: `name` for scalars, `name_1, name_2` for vectors.
    pub fn column_names(&self) -> Vec<String> {
        if self.components == 1 {
            vec![self.name.clone()]
        } else {
            (1..=self.components).map(|c| format!("{}_{c}", self.name)).collect()
        }
    }

    pub fn to_scalar(&self, grid: std::sync::Arc<Grid2>) -> Result<ScalarField> {
        if self.components != 1 {
            return Err(Error::Config(format!("field {} is not scalar", self.name)));
        }
        ScalarField::new(grid, self.data.clone())
    }

    pub fn to_vector(&self, grid: std::sync::Arc<Grid2>) -> Result<VectorField2> {
        if self.components != 2 {
            return Err(Error::Config(format!("field {} is not a 2-vector", self.name)));
        }
        VectorField2::new(grid, self.data.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }
}

/// Shortest text that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn check_lengths(grid: &Grid2, fields: &[Field]) -> Result<()> {
    for f in fields {
        if !(f.components == 1 || f.components == 2) || f.data.len() != grid.len() * f.components {
            return Err(Error::Shape {
                expected: grid.len() * f.components,
                got: f.data.len(),
            });
        }
    }
    Ok(())
}

pub fn write_csv(path: &Path, grid: &Grid2, fields: &[Field]) -> Result<()> {
    check_lengths(grid, fields)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    header.extend(fields.iter().flat_map(Field::column_names));
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..grid.len() {
        let p = grid.point(k);
        let mut row = vec![num(p.x), num(p.y)];
        for f in fields {
            row.extend(f.data[k * f.components..(k + 1) * f.components].iter().map(|v| num(*v)));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Node coordinates and fields read back from a CSV file. Columns
/// `<name>_1, <name>_2` are regrouped into one vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub points: Vec<Vec2>,
    pub fields: Vec<Field>,
}

impl CsvTable {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// True iff the rows are the nodes of `grid` in order.
    pub fn matches(&self, grid: &Grid2) -> bool {
        self.points.len() == grid.len()
            && self.points.iter().enumerate().all(|(k, p)| {
                let q = grid.point(k);
                (p - q).norm() <= 1e-12 * (1.0 + q.norm())
            })
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "x" || header[1] != "y" {
        return Err(parse_err(path, "header must start with x,y"));
    }
    // Group columns: name_1 followed by name_2 forms a vector.
    let mut groups: Vec<(String, usize)> = Vec::new();
    let mut c = 2;
    while c < header.len() {
        let h = &header[c];
        if let Some(base) = h.strip_suffix("_1") {
            if header.get(c + 1).map(String::as_str) == Some(&format!("{base}_2")) {
                groups.push((base.to_string(), 2));
                c += 2;
                continue;
            }
        }
        groups.push((h.clone(), 1));
        c += 1;
    }
    let mut points = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); groups.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            return Err(parse_err(path, format!("row {} has {} columns", line + 2, rec.len())));
        }
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, format!("row {}: {e}", line + 2)))?;
        points.push(Vec2::new(vals[0], vals[1]));
        let mut c = 2;
        for (g, (_, n)) in groups.iter().enumerate() {
            data[g].extend_from_slice(&vals[c..c + n]);
            c += n;
        }
    }
    let fields = groups
        .into_iter()
        .zip(data)
        .map(|((name, components), data)| Field { name, components, data })
        .collect();
    Ok(CsvTable { points, fields })
}

pub fn write_vtk(path: &Path, grid: &Grid2, title: &str, fields: &[Field]) -> Result<()> {
    check_lengths(grid, fields)?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", grid.nx, grid.ny)?;
    writeln!(w, "ORIGIN {} {} 0", num(grid.origin.x), num(grid.origin.y))?;
    writeln!(w, "SPACING {} {} 1", num(grid.hx), num(grid.hy))?;
    writeln!(w, "POINT_DATA {}", grid.len())?;
    for f in fields {
        if f.components == 1 {
            writeln!(w, "SCALARS {} double 1", f.name)?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in &f.data {
                writeln!(w, "{}", num(*v))?;
            }
        } else {
            writeln!(w, "VECTORS {} double", f.name)?;
            for c in f.data.chunks(2) {
                writeln!(w, "{} {} 0", num(c[0]), num(c[1]))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Geometry and fields of a legacy VTK structured-points file.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkData {
    pub title: String,
    pub dims: [usize; 2],
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
    pub fields: Vec<Field>,
}

impl VtkData {
    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn matches(&self, grid: &Grid2) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        self.dims == [grid.nx, grid.ny]
            && close(self.origin[0], grid.origin.x)
            && close(self.origin[1], grid.origin.y)
            && close(self.spacing[0], grid.hx)
            && close(self.spacing[1], grid.hy)
    }
}

pub fn read_vtk(path: &Path) -> Result<VtkData> {
    let file = BufReader::new(fs::File::open(path)?);
    let lines: Vec<String> = file.lines().collect::<std::io::Result<_>>()?;
    let err = |m: &str| parse_err(path, m.to_string());
    if lines.len() < 8 || !lines[0].starts_with("# vtk DataFile") {
        return Err(err("missing vtk header"));
    }
    if lines[2].trim() != "ASCII" || lines[3].trim() != "DATASET STRUCTURED_POINTS" {
        return Err(err("only ASCII STRUCTURED_POINTS is supported"));
    }
    let nums = |line: &str, key: &str| -> Result<Vec<f64>> {
        let rest = line.strip_prefix(key).ok_or_else(|| err(&format!("expected {key}")))?;
        rest.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(&format!("{key}: {e}"))))
            .collect()
    };
    let d = nums(&lines[4], "DIMENSIONS")?;
    let o = nums(&lines[5], "ORIGIN")?;
    let s = nums(&lines[6], "SPACING")?;
    if d.len() != 3 || o.len() != 3 || s.len() != 3 {
        return Err(err("geometry lines need three values"));
    }
    let dims = [d[0] as usize, d[1] as usize];
    let n = nums(&lines[7], "POINT_DATA")?;
    let count = dims[0] * dims[1];
    if n.len() != 1 || n[0] as usize != count {
        return Err(err("POINT_DATA count does not match DIMENSIONS"));
    }
    let mut fields = Vec::new();
    let mut i = 8;
    let parse_vals = |line: &str| -> Result<Vec<f64>> {
        line.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(&format!("value: {e}"))))
            .collect()
    };
    while i < lines.len() {
        let head: Vec<&str> = lines[i].split_whitespace().collect();
        match head.first() {
            None => i += 1,
            Some(&"SCALARS") => {
                let name = head.get(1).ok_or_else(|| err("SCALARS without name"))?.to_string();
                i += 1;
                if lines.get(i).map(|l| l.starts_with("LOOKUP_TABLE")) == Some(true) {
                    i += 1;
                }
                let end = i + count;
                if end > lines.len() {
                    return Err(err("truncated SCALARS block"));
                }
                let mut data = Vec::with_capacity(count);
                for line in &lines[i..end] {
                    data.extend(parse_vals(line)?);
                }
                if data.len() != count {
                    return Err(err("SCALARS block has wrong length"));
                }
                fields.push(Field { name, components: 1, data });
                i = end;
            }
            Some(&"VECTORS") => {
                let name = head.get(1).ok_or_else(|| err("VECTORS without name"))?.to_string();
                i += 1;
                let end = i + count;
                if end > lines.len() {
                    return Err(err("truncated VECTORS block"));
                }
                let mut data = Vec::with_capacity(2 * count);
                for line in &lines[i..end] {
                    let v = parse_vals(line)?;
                    if v.len() != 3 {
                        return Err(err("VECTORS rows need three values"));
                    }
                    data.extend_from_slice(&v[..2]);
                }
                fields.push(Field { name, components: 2, data });
                i = end;
            }
            Some(other) => return Err(err(&format!("unexpected section {other}"))),
        }
    }
    Ok(VtkData {
        title: lines[1].clone(),
        dims,
        origin: [o[0], o[1]],
        spacing: [s[0], s[1]],
        fields,
    })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Flat records with a header row taken from the field names.
pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// One emitted artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Self-describing record of a run: the full configuration, its hash, the
/// results summary and every emitted file. Contains nothing time- or
/// host-dependent, so identical configurations give identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub passed: bool,
    pub results: serde_json::Value,
    pub files: Vec<FileRecord>,
}

/// Collects emitted files below one output directory.
pub struct ArtifactSink {
    pub dir: PathBuf,
    pub files: Vec<FileRecord>,
}

impl ArtifactSink {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hashes a file that was just written and records it.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(name))?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn fields(&mut self, stem: &str, grid: &Grid2, fields: &[Field], csv: bool, vtk: bool) -> Result<()> {
        if csv {
            let name = format!("{stem}.csv");
            write_csv(&self.path(&name), grid, fields)?;
            self.record(&name)?;
        }
        if vtk {
            let name = format!("{stem}.vtk");
            write_vtk(&self.path(&name), grid, stem, fields)?;
            self.record(&name)?;
        }
        Ok(())
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<PathBuf> {
        let path = self.path("manifest.json");
        let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}
