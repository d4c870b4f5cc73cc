//! On-disk dataset layout.
//!
//! A sample is a directory holding `cloud.xyz` (one `x y z` per line),
//! `paths.txt` (one `x y z ox oy oz` waypoint per line, blank line between
//! paths), `mesh.obj`, and a flat `meta.json`. A dataset root holds sample
//! directories plus `manifest.txt` with the split, per-sample counts, and
//! the normalization record. All numerics are written with 17 significant
//! digits, so reads reproduce the original bits.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use ocmg_core::geom::{Category, NormRecord, ObjectSample, Path, Pose, Vec3};
use ocmg_core::mesh::TriMesh;

/// 17 significant digits: enough to reproduce any f64 exactly.
pub fn g17(x: f64) -> String {
    format!("{:.16e}", x)
}

#[derive(Debug)]
pub struct ParseError {
    pub file: PathBuf,
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.file.display(), self.line, self.msg)
    }
}

impl std::error::Error for ParseError {}

fn perr(file: &FsPath, line: usize, msg: impl Into<String>) -> anyhow::Error {
    ParseError { file: file.to_path_buf(), line, msg: msg.into() }.into()
}

fn parse_floats(file: &FsPath, lineno: usize, line: &str, n: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != n {
        return Err(perr(file, lineno, format!("expected {n} fields, found {}", parts.len())));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| perr(file, lineno, format!("cannot parse number {p:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Waypoint path files (also the prediction interchange format)

pub fn write_paths(path: &FsPath, paths: &[Path]) -> Result<()> {
    let mut out = String::new();
    for (i, p) in paths.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for pose in p.poses() {
            let q = pose.position;
            let o = pose.orientation;
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                g17(q.x),
                g17(q.y),
                g17(q.z),
                g17(o.x),
                g17(o.y),
                g17(o.z)
            ));
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_paths(path: &FsPath) -> Result<Vec<Path>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut paths = Vec::new();
    let mut block: Vec<Pose> = Vec::new();
    let mut block_start = 1;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            if !block.is_empty() {
                paths.push(finish_block(path, block_start, std::mem::take(&mut block))?);
            }
            block_start = lineno + 1;
            continue;
        }
        let v = parse_floats(path, lineno, line, 6)?;
        let pose = Pose::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
            .map_err(|e| perr(path, lineno, format!("{e}")))?;
        block.push(pose);
    }
    if !block.is_empty() {
        paths.push(finish_block(path, block_start, block)?);
    }
    if paths.is_empty() {
        return Err(perr(path, 1, "file holds no waypoints"));
    }
    Ok(paths)
}

fn finish_block(file: &FsPath, line: usize, poses: Vec<Pose>) -> Result<Path> {
    Path::new(poses).map_err(|e| perr(file, line, format!("invalid path block: {e}")))
}

// ---------------------------------------------------------------------------
// Point clouds and meshes

pub fn write_cloud(path: &FsPath, cloud: &[Vec3]) -> Result<()> {
    let mut out = String::new();
    for p in cloud {
        out.push_str(&format!("{} {} {}\n", g17(p.x), g17(p.y), g17(p.z)));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_cloud(path: &FsPath) -> Result<Vec<Vec3>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut cloud = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_floats(path, idx + 1, line, 3)?;
        cloud.push(Vec3::new(v[0], v[1], v[2]));
    }
    if cloud.is_empty() {
        return Err(perr(path, 1, "empty point cloud"));
    }
    Ok(cloud)
}

pub fn write_mesh(path: &FsPath, mesh: &TriMesh) -> Result<()> {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", g17(v.x), g17(v.y), g17(v.z)));
    }
    for f in &mesh.faces {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_mesh(path: &FsPath) -> Result<TriMesh> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut mesh = TriMesh::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("v ") {
            let v = parse_floats(path, lineno, rest, 3)?;
            mesh.vertices.push(Vec3::new(v[0], v[1], v[2]));
        } else if let Some(rest) = line.strip_prefix("f ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(perr(path, lineno, "faces must be triangles"));
            }
            let mut idxs = [0u32; 3];
            for (k, p) in parts.iter().enumerate() {
                let i: u64 = p
                    .parse()
                    .map_err(|_| perr(path, lineno, format!("bad face index {p:?}")))?;
                if i == 0 || i as usize > mesh.vertices.len() {
                    return Err(perr(path, lineno, format!("face index {i} out of range")));
                }
                idxs[k] = (i - 1) as u32;
            }
            mesh.faces.push(idxs);
        } else {
            return Err(perr(path, lineno, format!("unsupported record {line:?}")));
        }
    }
    if mesh.faces.is_empty() {
        return Err(perr(path, 1, "mesh holds no faces"));
    }
    Ok(mesh)
}

// ---------------------------------------------------------------------------
// Flat meta.json

#[derive(Clone, Debug)]
pub enum MetaValue {
    Int(i64),
    Float(f64),
    Str(String),
    Vec3([f64; 3]),
}

pub fn write_meta(path: &FsPath, entries: &[(String, MetaValue)]) -> Result<()> {
    let mut out = String::from("{\n");
    for (i, (k, v)) in entries.iter().enumerate() {
        let comma = if i + 1 < entries.len() { "," } else { "" };
        let rendered = match v {
            MetaValue::Int(x) => x.to_string(),
            MetaValue::Float(x) => g17(*x),
            MetaValue::Str(s) => format!("{s:?}"),
            MetaValue::Vec3(a) => format!("[{}, {}, {}]", g17(a[0]), g17(a[1]), g17(a[2])),
        };
        out.push_str(&format!("  {k:?}: {rendered}{comma}\n"));
    }
    out.push_str("}\n");
    write_atomic(path, out.as_bytes())
}

pub fn read_meta(path: &FsPath) -> Result<serde_json::Map<String, serde_json::Value>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| perr(path, e.line(), e.to_string()))?;
    match value {
        serde_json::Value::Object(map) => Ok(map),
        _ => Err(perr(path, 1, "meta must be a JSON object")),
    }
}

// ---------------------------------------------------------------------------
// Samples

pub fn write_sample(
    root: &FsPath,
    id: &str,
    sample: &ObjectSample,
    mut meta: Vec<(String, MetaValue)>,
) -> Result<()> {
    let tmp = root.join(format!(".tmp-{id}"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    write_cloud(&tmp.join("cloud.xyz"), &sample.point_cloud)?;
    write_paths(&tmp.join("paths.txt"), &sample.paths)?;
    if let Some(mesh) = &sample.mesh {
        write_mesh(&tmp.join("mesh.obj"), mesh)?;
    }
    meta.insert(0, ("category".into(), MetaValue::Str(sample.category.to_string())));
    if let Some(norm) = &sample.norm {
        meta.push(("norm_centroid".into(), MetaValue::Vec3(norm.centroid.to_array())));
        meta.push(("norm_scale".into(), MetaValue::Float(norm.scale)));
    }
    write_meta(&tmp.join("meta.json"), &meta)?;

    let dst = root.join(id);
    if dst.exists() {
        fs::remove_dir_all(&dst)?;
    }
    fs::rename(&tmp, &dst)
        .with_context(|| format!("cannot move sample into place at {}", dst.display()))?;
    Ok(())
}

pub fn read_sample(dir: &FsPath) -> Result<ObjectSample> {
    let meta = read_meta(&dir.join("meta.json"))?;
    let category: Category = meta
        .get("category")
        .and_then(|v| v.as_str())
        .ok_or_else(|| anyhow!("{}: meta.json lacks a category", dir.display()))?
        .parse()
        .map_err(|e| anyhow!("{}: {e}", dir.display()))?;
    let cloud = read_cloud(&dir.join("cloud.xyz"))?;
    let paths = read_paths(&dir.join("paths.txt"))?;
    let mesh_path = dir.join("mesh.obj");
    let mesh = if mesh_path.exists() { Some(read_mesh(&mesh_path)?) } else { None };
    let mut sample = ObjectSample::new(cloud, paths, mesh, category)
        .map_err(|e| anyhow!("{}: {e}", dir.display()))?;
    if let (Some(c), Some(s)) = (meta.get("norm_centroid"), meta.get("norm_scale")) {
        let arr = c
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| anyhow!("{}: bad norm_centroid", dir.display()))?;
        let centroid = Vec3::new(
            arr[0].as_f64().unwrap_or(f64::NAN),
            arr[1].as_f64().unwrap_or(f64::NAN),
            arr[2].as_f64().unwrap_or(f64::NAN),
        );
        let scale = s.as_f64().ok_or_else(|| anyhow!("{}: bad norm_scale", dir.display()))?;
        sample.norm = Some(NormRecord { centroid, scale });
    }
    Ok(sample)
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub train: bool,
    pub n_paths: usize,
    pub k_segments: usize,
    pub centroid: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub category: Category,
    pub lambda: usize,
    /// Normalization scale frozen from the training split.
    pub scale: f64,
    /// Largest segment count over the training split.
    pub k_max: usize,
    /// Largest path count over the training split.
    pub n_max: usize,
    /// Waypoint downsampling spacing the dataset was written with.
    pub spacing: f64,
    /// Generator parameter echo, order preserved.
    pub gen_params: Vec<(String, String)>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn train_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.train)
    }

    pub fn test_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.train)
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn norm_record(&self, entry: &ManifestEntry) -> NormRecord {
        NormRecord { centroid: entry.centroid, scale: self.scale }
    }
}

pub fn write_manifest(path: &FsPath, m: &Manifest) -> Result<()> {
    let mut out = String::from("ocmg-manifest v1\n");
    out.push_str(&format!("category {}\n", m.category));
    out.push_str(&format!("lambda {}\n", m.lambda));
    out.push_str(&format!("scale {}\n", g17(m.scale)));
    out.push_str(&format!("k_max {}\n", m.k_max));
    out.push_str(&format!("n_max {}\n", m.n_max));
    out.push_str(&format!("spacing {}\n", g17(m.spacing)));
    for (k, v) in &m.gen_params {
        out.push_str(&format!("gen {k} {v}\n"));
    }
    for e in &m.entries {
        out.push_str(&format!(
            "sample {} {} {} {} {} {} {}\n",
            e.id,
            if e.train { "train" } else { "test" },
            e.n_paths,
            e.k_segments,
            g17(e.centroid.x),
            g17(e.centroid.y),
            g17(e.centroid.z),
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_manifest(path: &FsPath) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ocmg-manifest v1")) => {}
        Some((i, other)) => return Err(perr(path, i + 1, format!("bad header {other:?}"))),
        None => return Err(perr(path, 1, "empty manifest")),
    }
    let mut category = None;
    let mut lambda = None;
    let mut scale = None;
    let mut k_max = None;
    let mut n_max = None;
    let mut spacing = None;
    let mut gen_params = Vec::new();
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| perr(path, lineno, format!("bad line {line:?}")))?;
        match key {
            "category" => {
                category =
                    Some(rest.parse::<Category>().map_err(|e| perr(path, lineno, e.to_string()))?)
            }
            "lambda" => lambda = Some(parse_usize(path, lineno, rest)?),
            "scale" => scale = Some(parse_f64(path, lineno, rest)?),
            "k_max" => k_max = Some(parse_usize(path, lineno, rest)?),
            "n_max" => n_max = Some(parse_usize(path, lineno, rest)?),
            "spacing" => spacing = Some(parse_f64(path, lineno, rest)?),
            "gen" => {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| perr(path, lineno, "gen lines need a key and a value"))?;
                gen_params.push((k.to_string(), v.to_string()));
            }
            "sample" => {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 7 {
                    return Err(perr(path, lineno, "sample lines need 7 fields"));
                }
                let train = match parts[1] {
                    "train" => true,
                    "test" => false,
                    other => return Err(perr(path, lineno, format!("bad split tag {other:?}"))),
                };
                entries.push(ManifestEntry {
                    id: parts[0].to_string(),
                    train,
                    n_paths: parse_usize(path, lineno, parts[2])?,
                    k_segments: parse_usize(path, lineno, parts[3])?,
                    centroid: Vec3::new(
                        parse_f64(path, lineno, parts[4])?,
                        parse_f64(path, lineno, parts[5])?,
                        parse_f64(path, lineno, parts[6])?,
                    ),
                });
            }
            other => return Err(perr(path, lineno, format!("unknown key {other:?}"))),
        }
    }
    let manifest = Manifest {
        category: category.ok_or_else(|| perr(path, 1, "missing category"))?,
        lambda: lambda.ok_or_else(|| perr(path, 1, "missing lambda"))?,
        scale: scale.ok_or_else(|| perr(path, 1, "missing scale"))?,
        k_max: k_max.ok_or_else(|| perr(path, 1, "missing k_max"))?,
        n_max: n_max.ok_or_else(|| perr(path, 1, "missing n_max"))?,
        spacing: spacing.ok_or_else(|| perr(path, 1, "missing spacing"))?,
        gen_params,
        entries,
    };
    let mut seen = std::collections::BTreeSet::new();
    for e in &manifest.entries {
        if !seen.insert(&e.id) {
            bail!("{}: duplicate sample id {}", path.display(), e.id);
        }
    }
    Ok(manifest)
}

/// Loads a manifest entry's sample directory, verifying it exists.
pub fn load_entry_sample(root: &FsPath, entry: &ManifestEntry) -> Result<ObjectSample> {
    let dir = root.join(&entry.id);
    if !dir.is_dir() {
        bail!(
            "manifest references sample {:?} but {} does not exist",
            entry.id,
            dir.display()
        );
    }
    read_sample(&dir)
}

fn parse_usize(file: &FsPath, line: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| perr(file, line, format!("cannot parse integer {s:?}")))
}

fn parse_f64(file: &FsPath, line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|_| perr(file, line, format!("cannot parse number {s:?}")))
}

/// Writes through a temp file and renames, so readers never see partial
/// output.
pub fn write_atomic(path: &FsPath, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| FsPath::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
    ));
    {
        let mut f = fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path)
        .with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ocmg_core::dataset::{generate_cuboid, CuboidSpec, GenParams};

    fn sample() -> ObjectSample {
        let params = GenParams { cloud_points: 32, tess_cell: 0.3, ..GenParams::default() };
        generate_cuboid(&CuboidSpec::sample(5, 0.2).unwrap(), &params).unwrap()
    }

    #[test]
    fn sample_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), "c0000", &s, vec![("seed".into(), MetaValue::Int(5))]).unwrap();
        let back = read_sample(&dir.path().join("c0000")).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn truncated_files_are_errors_not_crashes() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_sample(dir.path(), "c0000", &s, vec![]).unwrap();
        let paths_file = dir.path().join("c0000/paths.txt");
        let text = fs::read_to_string(&paths_file).unwrap();
        fs::write(&paths_file, &text[..text.len() / 2 - 3]).unwrap();
        let err = read_sample(&dir.path().join("c0000"));
        assert!(err.is_err());
        let msg = format!("{:#}", err.unwrap_err());
        assert!(msg.contains("paths.txt"), "unexpected error: {msg}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cloud.xyz");
        fs::write(&file, "1.0 2.0 3.0\n4.0 nope 6.0\n").unwrap();
        let err = read_cloud(&file).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains(":2:"), "missing line number in {msg}");
    }

    #[test]
    fn manifest_round_trip_and_missing_sample() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            category: Category::Cuboids,
            lambda: 4,
            scale: 0.7523,
            k_max: 40,
            n_max: 6,
            spacing: 0.05,
            gen_params: vec![("pitch".into(), g17(0.15))],
            entries: vec![
                ManifestEntry {
                    id: "c0000".into(),
                    train: true,
                    n_paths: 6,
                    k_segments: 33,
                    centroid: Vec3::new(0.1, -0.2, 0.3),
                },
                ManifestEntry {
                    id: "c0001".into(),
                    train: false,
                    n_paths: 6,
                    k_segments: 37,
                    centroid: Vec3::ZERO,
                },
            ],
        };
        let path = dir.path().join("manifest.txt");
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(m, back);

        let err = load_entry_sample(dir.path(), &m.entries[0]).unwrap_err();
        assert!(format!("{err}").contains("c0000"));
    }
}
