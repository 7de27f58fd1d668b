//! On-disk formats and dataset plumbing: the PCX cloud text format, the
//! label manifest, resampling ingestion, and synthetic dataset generation.
//!
//! PCX is deliberately trivial: line 1 is `pcx 1 <N> <C>`, followed by N
//! whitespace-separated rows of C floats. Labels live in a separate manifest
//! CSV with `path,label,split` rows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::shapes::ShapeClass;

// guards against absurd allocations from corrupt headers
const MAX_PCX_ROWS: usize = 1 << 22;
const MAX_PCX_COLS: usize = 64;

/// Serialize a cloud to PCX text. Coordinates are written with 17
/// significant digits, which round-trips f64 exactly.
pub fn write_pcx(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 72 + 32);
    let _ = writeln!(out, "pcx 1 {} 3", cloud.len());
    for p in &cloud.points {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
    }
    out
}

/// Parse PCX text. Errors carry the 1-based offending line.
pub fn parse_pcx(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "pcx" || fields[1] != "1" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected 'pcx 1 <N> <C>' header, got '{header}'"),
        });
    }
    let n: usize = fields[2].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad point count '{}'", fields[2]),
    })?;
    let c: usize = fields[3].parse().map_err(|_| Error::Parse {
        line: 1,
        msg: format!("bad column count '{}'", fields[3]),
    })?;
    if n > MAX_PCX_ROWS || c > MAX_PCX_COLS {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unreasonable dimensions {n} x {c}"),
        });
    }
    if c != 3 {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected 3 coordinate columns, got {c}"),
        });
    }
    let mut points = Vec::with_capacity(n.min(1 << 16));
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0f64; 3];
        let mut count = 0;
        for tok in line.split_whitespace() {
            if count >= 3 {
                count += 1;
                break;
            }
            row[count] = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad float '{tok}'"),
            })?;
            count += 1;
        }
        if count != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 values per row, got {count}"),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: "non-finite coordinate".into(),
            });
        }
        points.push(row);
        if points.len() > n {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("more rows than the declared {n}"),
            });
        }
    }
    if points.len() != n {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("declared {n} rows, found {}", points.len()),
        });
    }
    Ok(PointCloud::new(points, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn label(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// Serialize manifest entries as `path,label,split` CSV.
pub fn write_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("path,label,split\n");
    for e in entries {
        let _ = writeln!(out, "{},{},{}", e.path, e.label, e.split.label());
    }
    out
}

/// Parse a manifest CSV. Errors carry the 1-based offending line.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "path,label,split" => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected 'path,label,split' header, got '{h}'"),
            })
        }
        None => return Err(Error::Parse { line: 1, msg: "empty manifest".into() }),
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        if fields[0].is_empty() || fields[0].contains("..") {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("bad path '{}'", fields[0]),
            });
        }
        let label: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad label '{}'", fields[1]),
        })?;
        let split = match fields[2].trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("bad split '{other}'"),
                })
            }
        };
        entries.push(ManifestEntry {
            path: fields[0].to_string(),
            label,
            split,
        });
    }
    Ok(entries)
}

/// Read a PCX file, resample to `target_n` points (upsample with
/// replacement, downsample without, both seeded), and normalize to the unit
/// sphere when the data is not already inside it.
pub fn ingest(path: &Path, target_n: usize, seed: u64) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let cloud = parse_pcx(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })?;
    ingest_cloud(cloud, target_n, seed)
}

pub fn ingest_cloud(mut cloud: PointCloud, target_n: usize, seed: u64) -> Result<PointCloud> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::data("cannot ingest an empty cloud"));
    }
    use std::cmp::Ordering;
    match n.cmp(&target_n) {
        Ordering::Equal => {}
        Ordering::Less => {
            let mut rng = stream(seed, "ingest-up", 0);
            for _ in n..target_n {
                let pick = rng.gen_range(0..n);
                let p = cloud.points[pick];
                cloud.points.push(p);
            }
        }
        Ordering::Greater => {
            let mut rng = stream(seed, "ingest-down", 0);
            let mut order: Vec<usize> = (0..n).collect();
            for i in 0..target_n {
                let j = rng.gen_range(i..n);
                order.swap(i, j);
            }
            let mut chosen = order[..target_n].to_vec();
            chosen.sort_unstable();
            cloud.points = chosen.iter().map(|&i| cloud.points[i]).collect();
        }
    }
    if cloud.max_norm() > 1.0 + 1e-9 {
        cloud.normalize_unit_sphere()?;
    }
    Ok(cloud)
}

/// Synthetic dataset description: balanced classes of parametric shapes,
/// normalized to the unit sphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub classes: Vec<ShapeClass>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: ShapeClass::ALL.to_vec(),
            train_per_class: 100,
            test_per_class: 30,
            points: 512,
            noise: 0.005,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::config("dataset needs at least 2 classes"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("per-class sample counts must be positive"));
        }
        if self.points < 32 {
            return Err(Error::config("clouds need at least 32 points"));
        }
        if self.noise < 0.0 {
            return Err(Error::config("noise level must be nonnegative"));
        }
        Ok(())
    }
}

/// Generate one sample of `class` under the dataset config. `sample_idx`
/// must be globally unique within the dataset for stream independence.
pub fn generate_cloud(cfg: &DatasetConfig, class: ShapeClass, label: usize, sample_idx: u64) -> PointCloud {
    let mut rng = stream(cfg.seed, "gen-shape", sample_idx);
    let mut points = class.sample_surface(cfg.points, &mut rng);
    // gravity-aligned pose variation plus acquisition noise
    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (sin, cos) = angle.sin_cos();
    for p in &mut points {
        let (x, y) = (p[0], p[1]);
        p[0] = cos * x - sin * y;
        p[1] = sin * x + cos * y;
        if cfg.noise > 0.0 {
            for d in 0..3 {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                p[d] += g * cfg.noise;
            }
        }
    }
    let mut cloud = PointCloud::new(points, Some(label));
    cloud
        .normalize_unit_sphere()
        .expect("generated cloud has positive extent");
    cloud
}

/// Write the dataset to `out_dir`: one PCX file per cloud plus
/// `manifest.csv`. Deterministic bytes for a fixed config.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir.join("clouds"))
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let per_class = cfg.train_per_class + cfg.test_per_class;
    let mut entries = Vec::new();
    for (label, class) in cfg.classes.iter().enumerate() {
        for i in 0..per_class {
            let sample_idx = (label * per_class + i) as u64;
            let cloud = generate_cloud(cfg, *class, label, sample_idx);
            let split = if i < cfg.train_per_class {
                Split::Train
            } else {
                Split::Test
            };
            let rel = format!("clouds/{}_{:04}.pcx", class.label(), i);
            let path = out_dir.join(&rel);
            std::fs::write(&path, write_pcx(&cloud))
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            entries.push(ManifestEntry {
                path: rel,
                label,
                split,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, write_manifest(&entries))
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(entries)
}

/// Load the manifest of a dataset directory and ingest every cloud at the
/// target point count. Returns `(train, test, num_classes)`.
pub fn load_dataset(
    dir: &Path,
    target_n: usize,
    seed: u64,
) -> Result<(Vec<PointCloud>, Vec<PointCloud>, usize)> {
    let manifest_path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let entries = parse_manifest(&text)?;
    if entries.is_empty() {
        return Err(Error::data("manifest lists no clouds"));
    }
    let num_classes = entries.iter().map(|e| e.label).max().unwrap() + 1;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        let mut cloud = ingest(&dir.join(&e.path), target_n, crate::rng::derive_seed(seed, "ingest", i as u64))?;
        cloud.label = Some(e.label);
        match e.split {
            Split::Train => train.push(cloud),
            Split::Test => test.push(cloud),
        }
    }
    Ok((train, test, num_classes))
}

/// Resolved dataset file paths for a directory, in manifest order.
pub fn manifest_paths(dir: &Path) -> Result<Vec<(PathBuf, ManifestEntry)>> {
    let manifest_path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let entries = parse_manifest(&text)?;
    Ok(entries
        .into_iter()
        .map(|e| (dir.join(&e.path), e))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcx_round_trip_is_exact() {
        let cloud = PointCloud::new(
            vec![
                [0.123456789012345678, -1.0 / 3.0, 2.5e-17],
                [f64::MIN_POSITIVE, 1.0, -0.9999999999999999],
            ],
            None,
        );
        let text = write_pcx(&cloud);
        let back = parse_pcx(&text).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for d in 0..3 {
                assert_eq!(a[d].to_bits(), b[d].to_bits(), "{} vs {}", a[d], b[d]);
            }
        }
    }

    #[test]
    fn pcx_parse_errors_carry_line_numbers() {
        let bad_row = "pcx 1 2 3\n0 0 0\n1 nope 1\n";
        match parse_pcx(bad_row) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_header = "pcy 1 2 3\n";
        assert!(matches!(parse_pcx(bad_header), Err(Error::Parse { line: 1, .. })));
        let wrong_count = "pcx 1 5 3\n0 0 0\n";
        assert!(parse_pcx(wrong_count).is_err());
    }

    #[test]
    fn ingest_same_size_preserves_order() {
        // already inside the unit sphere: ingest must not touch it
        let cloud = PointCloud::new(
            vec![[0.1, 0.2, 0.3], [0.2, 0.25, 0.3], [0.35, 0.4, 0.45]],
            None,
        );
        let out = ingest_cloud(cloud.clone(), 3, 42).unwrap();
        assert_eq!(out.points, cloud.points);
    }

    #[test]
    fn ingest_upsamples_with_replacement_from_source() {
        let cloud = PointCloud::new(
            (0..10)
                .map(|i| [i as f64 * 0.05, 0.0, 0.0])
                .collect::<Vec<_>>(),
            None,
        );
        let out = ingest_cloud(cloud.clone(), 64, 7).unwrap();
        assert_eq!(out.len(), 64);
        for p in &out.points {
            assert!(cloud.points.contains(p));
        }
    }

    #[test]
    fn ingest_downsamples_without_replacement() {
        let cloud = PointCloud::new(
            (0..100)
                .map(|i| [i as f64 * 0.005, 0.0, 0.0])
                .collect::<Vec<_>>(),
            None,
        );
        let out = ingest_cloud(cloud.clone(), 40, 3).unwrap();
        assert_eq!(out.len(), 40);
        let mut seen = std::collections::BTreeSet::new();
        for p in &out.points {
            let key = (p[0] * 1e9) as i64;
            assert!(seen.insert(key), "duplicate point after downsampling");
        }
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                path: "clouds/sphere_0000.pcx".into(),
                label: 0,
                split: Split::Train,
            },
            ManifestEntry {
                path: "clouds/cube_0001.pcx".into(),
                label: 1,
                split: Split::Test,
            },
        ];
        let text = write_manifest(&entries);
        assert_eq!(parse_manifest(&text).unwrap(), entries);
    }

    #[test]
    fn manifest_rejects_traversal_and_bad_rows() {
        assert!(parse_manifest("path,label,split\n../evil.pcx,0,train\n").is_err());
        assert!(parse_manifest("path,label,split\na.pcx,zero,train\n").is_err());
        assert!(parse_manifest("path,label,split\na.pcx,0,validation\n").is_err());
        assert!(parse_manifest("wrong,header\n").is_err());
    }

    #[test]
    fn generated_dataset_is_deterministic_and_normalized() {
        let cfg = DatasetConfig {
            classes: vec![ShapeClass::Sphere, ShapeClass::Cube],
            train_per_class: 2,
            test_per_class: 1,
            points: 64,
            noise: 0.005,
            seed: 9,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let entries_a = generate_dataset(&cfg, dir_a.path()).unwrap();
        let entries_b = generate_dataset(&cfg, dir_b.path()).unwrap();
        assert_eq!(entries_a.len(), 6);
        assert_eq!(entries_a, entries_b);
        for e in &entries_a {
            let a = std::fs::read(dir_a.path().join(&e.path)).unwrap();
            let b = std::fs::read(dir_b.path().join(&e.path)).unwrap();
            assert_eq!(a, b, "files differ for {}", e.path);
            let cloud = parse_pcx(std::str::from_utf8(&a).unwrap()).unwrap();
            assert!((cloud.max_norm() - 1.0).abs() < 1e-9);
        }
        let ma = std::fs::read(dir_a.path().join("manifest.csv")).unwrap();
        let mb = std::fs::read(dir_b.path().join("manifest.csv")).unwrap();
        assert_eq!(ma, mb);
    }
}
