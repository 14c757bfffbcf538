//! File formats: scan binaries, pose tables, JSON-lines labels, PP sidecars.
//!
//! All binary formats are little-endian. Scan files are KITTI-compatible:
//! four `f32` values (x, y, z, intensity) per point. Poses are text lines
//! with a scan id followed by a row-major 3x4 world-from-sensor matrix.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::types::{LabelSet, Point, Scan};

const POINT_STRIDE: usize = 16;

/// Load a KITTI-format binary scan (4 x f32 little-endian per point).
///
/// Intensity is clamped to `[0, 1]`. Non-finite coordinates are a
/// record-level error naming the offending point index.
pub fn load_scan(
    path: impl AsRef<Path>,
    pose: Pose,
    scan_id: impl Into<String>,
    traversal_id: impl Into<String>,
) -> Result<Scan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let points = decode_points(&bytes, path)?;
    Ok(Scan {
        scan_id: scan_id.into(),
        traversal_id: traversal_id.into(),
        points,
        pose,
    })
}

fn decode_points(bytes: &[u8], path: &Path) -> Result<Vec<Point>> {
    if bytes.is_empty() {
        return Err(Error::Format {
            path: path.into(),
            offset: Some(0),
            msg: "empty scan file (zero points disallowed)".into(),
        });
    }
    if bytes.len() % POINT_STRIDE != 0 {
        let offset = (bytes.len() / POINT_STRIDE * POINT_STRIDE) as u64;
        return Err(Error::Format {
            path: path.into(),
            offset: Some(offset),
            msg: format!(
                "file length {} is not a multiple of {POINT_STRIDE} bytes",
                bytes.len()
            ),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_STRIDE);
    for (i, rec) in bytes.chunks_exact(POINT_STRIDE).enumerate() {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        if !x.is_finite() || !y.is_finite() || !z.is_finite() {
            return Err(Error::Format {
                path: path.into(),
                offset: Some((i * POINT_STRIDE) as u64),
                msg: format!("non-finite coordinate in point {i}"),
            });
        }
        points.push(Point {
            x: x as f64,
            y: y as f64,
            z: z as f64,
            intensity: intensity.clamp(0.0, 1.0),
        });
    }
    Ok(points)
}

/// Write a scan's points in the binary format `load_scan` reads.
pub fn write_scan(path: impl AsRef<Path>, points: &[Point]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(points.len() * POINT_STRIDE);
    for p in points {
        bytes.extend_from_slice(&(p.x as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.y as f32).to_le_bytes());
        bytes.extend_from_slice(&(p.z as f32).to_le_bytes());
        bytes.extend_from_slice(&p.intensity.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Load a pose table: one line per scan, `scan_id` then 12 floats
/// (row-major 3x4 world-from-sensor). Returns poses keyed by scan id in
/// a deterministic (sorted) map.
pub fn load_poses(path: impl AsRef<Path>) -> Result<BTreeMap<String, Pose>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut poses = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let scan_id = fields.next().expect("non-empty line has a first field");
        let values: Vec<f64> = fields
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.into(),
                    line: Some(lineno),
                    msg: format!("expected a float, got `{s}`"),
                })
            })
            .collect::<Result<_>>()?;
        let values: [f64; 12] = values.try_into().map_err(|v: Vec<f64>| Error::Parse {
            path: path.into(),
            line: Some(lineno),
            msg: format!("expected 12 matrix values after scan_id, got {}", v.len()),
        })?;
        let pose = Pose::from_rows_3x4(&values).map_err(|e| Error::Parse {
            path: path.into(),
            line: Some(lineno),
            msg: e.to_string(),
        })?;
        if poses.insert(scan_id.to_string(), pose).is_some() {
            return Err(Error::Parse {
                path: path.into(),
                line: Some(lineno),
                msg: format!("duplicate scan_id `{scan_id}`"),
            });
        }
    }
    Ok(poses)
}

/// Write a pose table in the format `load_poses` reads.
pub fn write_poses<'a>(
    path: impl AsRef<Path>,
    poses: impl IntoIterator<Item = (&'a str, &'a Pose)>,
) -> Result<()> {
    let mut out = String::new();
    for (scan_id, pose) in poses {
        out.push_str(scan_id);
        for v in pose.to_rows_3x4() {
            out.push(' ');
            // 17 significant digits round-trips f64 exactly.
            out.push_str(&format!("{v:.17e}"));
        }
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

/// Read JSON-lines label sets, one frame per line.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<LabelSet>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let labels: LabelSet = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.into(),
            line: Some(lineno),
            msg: e.to_string(),
        })?;
        for b in &labels.boxes {
            b.validate().map_err(|e| Error::Parse {
                path: path.into(),
                line: Some(lineno),
                msg: e.to_string(),
            })?;
        }
        out.push(labels);
    }
    Ok(out)
}

/// Write JSON-lines label sets. Round-trips losslessly through
/// `read_labels` (serde_json emits shortest-round-trip floats).
pub fn write_labels(path: impl AsRef<Path>, labels: &[LabelSet]) -> Result<()> {
    let mut bytes = Vec::new();
    for ls in labels {
        for b in &ls.boxes {
            b.validate()?;
        }
        serde_json::to_writer(&mut bytes, ls)
            .map_err(|e| Error::Internal(format!("label serialization failed: {e}")))?;
        bytes.push(b'\n');
    }
    atomic_write(path.as_ref(), &bytes)
}

const PPF_MAGIC: &[u8; 4] = b"PPF1";

/// Write a PP-score sidecar: magic "PPF1", point count (u32 LE), f32 scores.
pub fn write_ppf(path: impl AsRef<Path>, tau: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + tau.len() * 4);
    bytes.extend_from_slice(PPF_MAGIC);
    bytes.extend_from_slice(&(tau.len() as u32).to_le_bytes());
    for &t in tau {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    atomic_write(path.as_ref(), &bytes)
}

/// Read a PP-score sidecar written by [`write_ppf`].
pub fn read_ppf(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[0..4] != PPF_MAGIC {
        return Err(Error::Format {
            path: path.into(),
            offset: Some(0),
            msg: "missing PPF1 magic".into(),
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * 4 {
        return Err(Error::Format {
            path: path.into(),
            offset: Some(8),
            msg: format!(
                "expected {} score bytes for {count} points, file has {}",
                count * 4,
                bytes.len() - 8
            ),
        });
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Write a file atomically: temp file in the same directory, then rename.
/// Interrupted runs never leave partial artifacts.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp.{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read an entire file as a string with path-tagged errors.
pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}
