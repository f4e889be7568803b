use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::gaussian::{Gaussian3D, GaussianMap};

use super::{DataError, PointSample};

/// What a PLY file turned out to contain.
#[derive(Debug, Clone)]
pub enum PlyContent {
    Cloud(Vec<PointSample>),
    Map(GaussianMap),
}

const MAP_PROPS: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "red", "green", "blue",
];

/// Write a Gaussian map as binary little-endian PLY with float32 per-vertex
/// properties x,y,z, scale_0..2, rot_0..3 (w,x,y,z), opacity, red,green,blue.
pub fn save_map_ply(path: &Path, map: &GaussianMap) -> Result<(), DataError> {
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!(
        "comment background {} {} {}\n",
        map.background[0], map.background[1], map.background[2]
    ));
    header.push_str(&format!("element vertex {}\n", map.len()));
    for prop in MAP_PROPS {
        header.push_str(&format!("property float {prop}\n"));
    }
    header.push_str("end_header\n");

    let mut body = Vec::with_capacity(map.len() * MAP_PROPS.len() * 4);
    for g in &map.gaussians {
        let q = g.rotation.quaternion();
        for v in [
            g.position.x,
            g.position.y,
            g.position.z,
            g.scale.x,
            g.scale.y,
            g.scale.z,
            q.w,
            q.i,
            q.j,
            q.k,
            g.opacity,
            g.color[0],
            g.color[1],
            g.color[2],
        ] {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_file(path, header.as_bytes(), &body)
}

/// Write a raw point cloud as binary little-endian PLY (xyz, plus float rgb
/// when every point carries a color).
pub fn save_cloud_ply(path: &Path, points: &[PointSample]) -> Result<(), DataError> {
    let with_color = points.iter().all(|p| p.color.is_some()) && !points.is_empty();
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", points.len()));
    for prop in ["x", "y", "z"] {
        header.push_str(&format!("property float {prop}\n"));
    }
    if with_color {
        for prop in ["red", "green", "blue"] {
            header.push_str(&format!("property float {prop}\n"));
        }
    }
    header.push_str("end_header\n");

    let mut body = Vec::new();
    for p in points {
        for v in [p.position.x, p.position.y, p.position.z] {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if with_color {
            let c = p.color.unwrap();
            for v in c {
                body.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    write_file(path, header.as_bytes(), &body)
}

fn write_file(path: &Path, header: &[u8], body: &[u8]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(header).map_err(io_err)?;
    file.write_all(body).map_err(io_err)?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum PropType {
    Float,
    Double,
    Uchar,
    Int,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::Float => 4,
            PropType::Double => 8,
            PropType::Uchar => 1,
            PropType::Int => 4,
        }
    }
}

struct Header {
    ascii: bool,
    count: usize,
    props: Vec<(PropType, String)>,
    background: Option<[f64; 3]>,
    body_start: usize,
}

/// Load a PLY file, auto-detecting the schema: the full Gaussian layout loads
/// as a map, plain xyz(+rgb) as a raw cloud.
pub fn load_ply(path: &Path) -> Result<PlyContent, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header = parse_header(&bytes)?;
    let names: Vec<&str> = header.props.iter().map(|(_, n)| n.as_str()).collect();

    let rows = read_rows(&bytes, &header)?;
    let column = |name: &str| names.iter().position(|&n| n == name);

    if MAP_PROPS.iter().all(|p| column(p).is_some()) {
        let idx: Vec<usize> = MAP_PROPS.iter().map(|p| column(p).unwrap()).collect();
        let gaussians = rows
            .iter()
            .map(|row| {
                let f = |k: usize| row[idx[k]];
                Gaussian3D {
                    position: Vector3::new(f(0), f(1), f(2)),
                    scale: Vector3::new(f(3), f(4), f(5)),
                    rotation: UnitQuaternion::new_normalize(Quaternion::new(
                        f(6),
                        f(7),
                        f(8),
                        f(9),
                    )),
                    opacity: f(10),
                    color: [f(11), f(12), f(13)],
                }
            })
            .collect();
        let mut map = GaussianMap::new(gaussians);
        if let Some(bg) = header.background {
            map.background = bg;
        }
        return Ok(PlyContent::Map(map));
    }

    let (Some(ix), Some(iy), Some(iz)) = (column("x"), column("y"), column("z")) else {
        return Err(DataError::PlyUnknownSchema {
            reason: format!("vertex properties {names:?} lack x/y/z"),
        });
    };
    let rgb = match (column("red"), column("green"), column("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let uchar_color = rgb
        .map(|(r, _, _)| header.props[r].0 == PropType::Uchar)
        .unwrap_or(false);
    let points = rows
        .iter()
        .map(|row| PointSample {
            position: Vector3::new(row[ix], row[iy], row[iz]),
            color: rgb.map(|(r, g, b)| {
                let scale = if uchar_color { 1.0 / 255.0 } else { 1.0 };
                [row[r] * scale, row[g] * scale, row[b] * scale]
            }),
        })
        .collect();
    Ok(PlyContent::Cloud(points))
}

fn parse_header(bytes: &[u8]) -> Result<Header, DataError> {
    let fail = |reason: &str| DataError::PlyHeader {
        reason: reason.to_string(),
    };
    let mut ascii = None;
    let mut count = None;
    let mut props = Vec::new();
    let mut background = None;
    let mut in_vertex_element = false;
    let mut offset = 0usize;
    let mut lines = Vec::new();
    // Header is ASCII lines up to and including "end_header".
    loop {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail("no end_header"))?;
        let line = std::str::from_utf8(&bytes[offset..offset + end])
            .map_err(|_| fail("non-utf8 header"))?
            .trim_end_matches('\r')
            .to_string();
        offset += end + 1;
        let done = line == "end_header";
        lines.push(line);
        if done {
            break;
        }
        if offset >= bytes.len() {
            return Err(fail("no end_header"));
        }
    }
    if lines.first().map(String::as_str) != Some("ply") {
        return Err(fail("missing ply magic"));
    }
    for line in &lines[1..] {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => ascii = Some(true),
            ["format", "binary_little_endian", "1.0"] => ascii = Some(false),
            ["format", ..] => return Err(fail("unsupported format (want ascii or binary_little_endian)")),
            ["comment", "background", r, g, b] => {
                let parse = |s: &str| s.parse::<f64>().ok();
                if let (Some(r), Some(g), Some(b)) = (parse(r), parse(g), parse(b)) {
                    background = Some([r, g, b]);
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse().map_err(|_| fail("bad vertex count"))?);
                in_vertex_element = true;
            }
            ["element", ..] => in_vertex_element = false,
            ["property", "list", ..] if in_vertex_element => {
                return Err(DataError::PlyUnknownSchema {
                    reason: "list property on vertex element".to_string(),
                })
            }
            ["property", ty, name] if in_vertex_element => {
                let ty = match *ty {
                    "float" | "float32" => PropType::Float,
                    "double" | "float64" => PropType::Double,
                    "uchar" | "uint8" => PropType::Uchar,
                    "int" | "int32" | "uint" | "uint32" => PropType::Int,
                    other => {
                        return Err(DataError::PlyUnknownSchema {
                            reason: format!("unsupported property type {other}"),
                        })
                    }
                };
                props.push((ty, name.to_string()));
            }
            ["property", ..] => {}
            ["end_header"] => {}
            _ => return Err(fail(&format!("unrecognized header line: {line}"))),
        }
    }
    Ok(Header {
        ascii: ascii.ok_or_else(|| fail("missing format line"))?,
        count: count.ok_or_else(|| fail("missing element vertex line"))?,
        props,
        background,
        body_start: offset,
    })
}

fn read_rows(bytes: &[u8], header: &Header) -> Result<Vec<Vec<f64>>, DataError> {
    let mut rows = Vec::with_capacity(header.count);
    if header.ascii {
        let body = std::str::from_utf8(&bytes[header.body_start..]).map_err(|_| {
            DataError::PlyHeader {
                reason: "non-utf8 ascii body".to_string(),
            }
        })?;
        let mut lines = body.lines().filter(|l| !l.trim().is_empty());
        for _ in 0..header.count {
            let Some(line) = lines.next() else {
                return Err(DataError::PlyTruncated {
                    expected: header.count,
                    got: rows.len(),
                });
            };
            let values: Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let values = values.map_err(|_| DataError::PlyHeader {
                reason: format!("bad ascii vertex line: {line}"),
            })?;
            if values.len() < header.props.len() {
                return Err(DataError::PlyTruncated {
                    expected: header.count,
                    got: rows.len(),
                });
            }
            rows.push(values);
        }
    } else {
        let row_size: usize = header.props.iter().map(|(t, _)| t.size()).sum();
        let body = &bytes[header.body_start..];
        if body.len() < row_size * header.count {
            return Err(DataError::PlyTruncated {
                expected: header.count,
                got: body.len() / row_size.max(1),
            });
        }
        for r in 0..header.count {
            let mut cursor = r * row_size;
            let mut row = Vec::with_capacity(header.props.len());
            for (ty, _) in &header.props {
                let value = match ty {
                    PropType::Float => {
                        f32::from_le_bytes(body[cursor..cursor + 4].try_into().unwrap()) as f64
                    }
                    PropType::Double => {
                        f64::from_le_bytes(body[cursor..cursor + 8].try_into().unwrap())
                    }
                    PropType::Uchar => body[cursor] as f64,
                    PropType::Int => {
                        i32::from_le_bytes(body[cursor..cursor + 4].try_into().unwrap()) as f64
                    }
                };
                cursor += ty.size();
                row.push(value);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    fn sample_map() -> GaussianMap {
        // Every attribute (including the quaternion) is exactly representable
        // in f32, so the file roundtrip is bit-exact.
        let rotation = UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(
            0.5, 0.5, -0.5, 0.5,
        ));
        let gaussians = (0..5)
            .map(|i| Gaussian3D {
                position: Vector3::new(i as f64 * 0.25, -0.5, 2.0),
                scale: Vector3::new(0.0625, 0.125, 0.25),
                rotation,
                opacity: 0.8125,
                color: [0.25, 0.5, 0.75],
            })
            .collect();
        GaussianMap::new(gaussians)
    }

    #[test]
    fn map_roundtrip_is_exact_at_f32() {
        let dir = std::env::temp_dir().join("splatvo_ply_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("map.ply");
        let map = sample_map();
        save_map_ply(&path, &map).unwrap();
        let PlyContent::Map(loaded) = load_ply(&path).unwrap() else {
            panic!("expected map schema");
        };
        // All sample attributes are f32-representable, so the roundtrip is
        // bit-exact; a second write must reproduce the same bytes.
        assert_eq!(loaded, map);
        let path2 = dir.join("map2.ply");
        save_map_ply(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn ascii_cloud_parses() {
        let dir = std::env::temp_dir().join("splatvo_ply_ascii");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n0.5 -0.5 2\n",
        )
        .unwrap();
        let PlyContent::Cloud(points) = load_ply(&path).unwrap() else {
            panic!("expected cloud");
        };
        assert_eq!(points.len(), 2);
        assert_eq!(points[1].position, Vector3::new(0.5, -0.5, 2.0));
        assert!(points[0].color.is_none());
    }

    #[test]
    fn truncated_body_is_detected() {
        let dir = std::env::temp_dir().join("splatvo_ply_trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n",
        )
        .unwrap();
        assert!(matches!(
            load_ply(&path),
            Err(DataError::PlyTruncated { expected: 3, .. })
        ));
    }

    #[test]
    fn uchar_colors_are_normalized() {
        let dir = std::env::temp_dir().join("splatvo_ply_uchar");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rgb.ply");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        );
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[255u8, 0, 128]);
        std::fs::write(&path, bytes).unwrap();
        let PlyContent::Cloud(points) = load_ply(&path).unwrap() else {
            panic!("expected cloud");
        };
        let c = points[0].color.unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        assert_eq!(c[1], 0.0);
        assert!((c[2] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let dir = std::env::temp_dir().join("splatvo_ply_unknown");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("odd.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float u\nproperty float v\nend_header\n0 0\n",
        )
        .unwrap();
        assert!(matches!(
            load_ply(&path),
            Err(DataError::PlyUnknownSchema { .. })
        ));
    }
}
