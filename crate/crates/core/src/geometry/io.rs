//! Point cloud file formats: KITTI velodyne `.bin`, ASCII PLY and plain XYZ.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cloud::{Features, PointCloud};
use crate::error::{Error, Result};

const KITTI_RECORD: usize = 16;

/// Reads a KITTI velodyne scan: packed little-endian `f32` (x, y, z, intensity)
/// records. Intensity becomes a single feature column.
pub fn load_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % KITTI_RECORD != 0 {
        return Err(Error::MalformedScan {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
        });
    }
    let n = bytes.len() / KITTI_RECORD;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(KITTI_RECORD) {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        points.push([f(0), f(4), f(8)]);
        intensity.push(f(12));
    }
    if n == 0 {
        return Ok(PointCloud::empty());
    }
    PointCloud::with_features(
        points,
        Features {
            cols: 1,
            data: intensity,
        },
    )
}

/// Writes a cloud as a KITTI `.bin`; the first feature column (or 0) is stored as intensity.
pub fn save_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD);
    for (i, p) in cloud.points().iter().enumerate() {
        let intensity = cloud.features().map_or(0.0, |f| f.row(i)[0]);
        for v in [p[0], p[1], p[2], intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// 17 significant digits round-trip any f64 exactly
fn fmt_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

pub fn to_ply_string(cloud: &PointCloud) -> String {
    let cols = cloud.features().map_or(0, |f| f.cols);
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    writeln!(s, "element vertex {}", cloud.len()).unwrap();
    for axis in ["x", "y", "z"] {
        writeln!(s, "property double {axis}").unwrap();
    }
    for c in 0..cols {
        writeln!(s, "property double f{c}").unwrap();
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        let feats = cloud.features().map(|f| f.row(i)).unwrap_or(&[]);
        for (j, v) in p.iter().chain(feats).enumerate() {
            if j > 0 {
                s.push(' ');
            }
            fmt_real(&mut s, *v);
        }
        s.push('\n');
    }
    s
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_ply_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn parse_ply(text: &str, origin: &str) -> Result<PointCloud> {
    let err = |line: usize, message: String| Error::Parse {
        location: format!("{origin}:{line}"),
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(err(ln + 1, format!("unsupported format `{other}`")))
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|e| err(ln + 1, format!("bad vertex count: {e}")))?,
                )
            }
            ["element", ..] => {}
            ["property", _ty, name] => props.push(name.to_string()),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(err(ln + 1, format!("unexpected header line `{line}`"))),
        }
    }
    if !header_done {
        return Err(err(0, "missing end_header".into()));
    }
    let count = count.ok_or_else(|| err(0, "no vertex element".into()))?;
    let pos = |n: &str| props.iter().position(|p| p == n);
    let (xi, yi, zi) = match (pos("x"), pos("y"), pos("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(err(0, "vertex needs x, y, z properties".into())),
    };
    let extra: Vec<usize> = (0..props.len())
        .filter(|&i| i != xi && i != yi && i != zi)
        .collect();
    let mut points = Vec::with_capacity(count);
    let mut feats = Vec::with_capacity(count * extra.len());
    for (ln, line) in lines.take(count) {
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| err(ln + 1, e.to_string()))?;
        if vals.len() != props.len() {
            return Err(err(
                ln + 1,
                format!("expected {} values, found {}", props.len(), vals.len()),
            ));
        }
        points.push([vals[xi], vals[yi], vals[zi]]);
        feats.extend(extra.iter().map(|&i| vals[i]));
    }
    if points.len() != count {
        return Err(err(0, format!("expected {count} vertices, found {}", points.len())));
    }
    if extra.is_empty() || count == 0 {
        PointCloud::new(points)
    } else {
        PointCloud::with_features(
            points,
            Features {
                cols: extra.len(),
                data: feats,
            },
        )
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, &path.display().to_string())
}

/// Whitespace-separated `x y z [features...]`, one point per line.
pub fn to_xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let feats = cloud.features().map(|f| f.row(i)).unwrap_or(&[]);
        for (j, v) in p.iter().chain(feats).enumerate() {
            if j > 0 {
                s.push(' ');
            }
            fmt_real(&mut s, *v);
        }
        s.push('\n');
    }
    s
}

pub fn write_xyz(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_xyz_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn parse_xyz(text: &str, origin: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut feats = Vec::new();
    let mut cols = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                location: format!("{origin}:{}", ln + 1),
                message: e.to_string(),
            })?;
        if vals.len() < 3 || cols.is_some_and(|c| c != vals.len()) {
            return Err(Error::Parse {
                location: format!("{origin}:{}", ln + 1),
                message: format!("inconsistent column count {}", vals.len()),
            });
        }
        cols = Some(vals.len());
        points.push([vals[0], vals[1], vals[2]]);
        feats.extend_from_slice(&vals[3..]);
    }
    match cols {
        Some(c) if c > 3 => PointCloud::with_features(
            points,
            Features {
                cols: c - 3,
                data: feats,
            },
        ),
        _ => PointCloud::new(points),
    }
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, &path.display().to_string())
}

/// Reads a cloud by extension: `.ply`, `.bin` (KITTI) or anything else as XYZ.
pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => read_ply(path),
        Some("bin") => load_kitti_bin(path),
        _ => read_xyz(path),
    }
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => write_ply(cloud, path),
        Some("bin") => save_kitti_bin(cloud, path),
        _ => write_xyz(cloud, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_kitti_file_is_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.bin");
        fs::write(&p, []).unwrap();
        assert!(load_kitti_bin(&p).unwrap().is_empty());
    }

    #[test]
    fn kitti_record_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("two.bin");
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, -1.0, -2.0, -3.0, 0.25] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, &bytes).unwrap();
        let c = load_kitti_bin(&p).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points()[1], [-1.0, -2.0, -3.0]);
        assert_eq!(c.features().unwrap().data, vec![0.5, 0.25]);
    }

    #[test]
    fn kitti_bad_length_reports_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        fs::write(&p, [0u8; 20]).unwrap();
        let e = load_kitti_bin(&p).unwrap_err();
        assert!(matches!(e, Error::MalformedScan { len: 20, .. }));
        assert!(load_kitti_bin(dir.path().join("missing.bin")).is_err());
    }

    #[test]
    fn ply_keeps_features() {
        let c = PointCloud::with_features(
            vec![[0.1, 0.2, 0.3], [1.0, -2.0, 3.5]],
            Features {
                cols: 2,
                data: vec![1.0, 2.0, 3.0, 4.0],
            },
        )
        .unwrap();
        let back = parse_ply(&to_ply_string(&c), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn ply_rejects_short_body() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n";
        assert!(parse_ply(text, "mem").is_err());
    }

    #[test]
    fn formatting_has_enough_digits() {
        let c = PointCloud::new(vec![[1.0 / 3.0, 0.0, 0.0]]).unwrap();
        let s = to_xyz_string(&c);
        let first = s.split_whitespace().next().unwrap();
        let mantissa = first.split('e').next().unwrap().replace(['.', '-'], "");
        assert!(mantissa.len() >= 9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kitti_roundtrip_is_bit_exact(raw in prop::collection::vec(prop::array::uniform4(-100.0f32..100.0), 0..64)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("scan.bin");
            let pts: Vec<_> = raw.iter().map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]).collect();
            let cloud = if raw.is_empty() {
                PointCloud::empty()
            } else {
                PointCloud::with_features(pts, Features { cols: 1, data: raw.iter().map(|r| r[3] as f64).collect() }).unwrap()
            };
            save_kitti_bin(&cloud, &p).unwrap();
            let back = load_kitti_bin(&p).unwrap();
            prop_assert_eq!(back, cloud);
        }

        #[test]
        fn text_formats_roundtrip_exactly(raw in prop::collection::vec(prop::array::uniform3(-1e3f64..1e3), 1..32)) {
            let c = PointCloud::new(raw).unwrap();
            prop_assert_eq!(&parse_ply(&to_ply_string(&c), "mem").unwrap(), &c);
            prop_assert_eq!(&parse_xyz(&to_xyz_string(&c), "mem").unwrap(), &c);
        }
    }
}
