//! File formats: the binary PLY dialect carrying the Doppler channel, the
//! timestamped trajectory text format, and small CSV helpers.
//!
//! PLY layout: `format binary_little_endian 1.0`, float vertex properties
//! `x y z [doppler] [nx ny nz]`, scan metadata carried in header comments
//! (`comment period_s <value>`, `frame_id`, `timestamp_s`). Absent normals
//! are stored as NaN triplets. Unknown vertex properties are skipped on read.

use crate::cloud::{DopplerPoint, DopplerPointCloud};
use crate::se3::{RigidTransform, Vec3};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("PLY header is missing required property '{0}'")]
    MissingProperty(&'static str),
    #[error("PLY payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("non-finite {what} at point {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("quaternion norm {norm} deviates from 1 beyond 1e-6 at line {line}")]
    NonUnitQuaternion { norm: f64, line: usize },
    #[error("duplicate timestamp {timestamp} in trajectory")]
    DuplicateTimestamp { timestamp: f64 },
}

fn property_size(ty: &str) -> Option<usize> {
    match ty {
        "char" | "int8" | "uchar" | "uint8" => Some(1),
        "short" | "int16" | "ushort" | "uint16" => Some(2),
        "int" | "int32" | "uint" | "uint32" | "float" | "float32" => Some(4),
        "double" | "float64" => Some(8),
        _ => None,
    }
}

/// Writes a cloud in the binary PLY dialect. The Doppler column appears only
/// when the cloud carries a Doppler channel; normal columns appear when any
/// point has a normal (absent ones become NaN).
pub fn write_cloud(cloud: &DopplerPointCloud, path: &Path) -> Result<(), IoError> {
    let with_doppler = cloud.has_doppler;
    let with_normals = cloud.has_normals();

    let mut header = String::new();
    header.push_str("ply\n");
    header.push_str("format binary_little_endian 1.0\n");
    header.push_str(&format!("comment period_s {}\n", cloud.period_s));
    if !cloud.frame_id.is_empty() {
        header.push_str(&format!("comment frame_id {}\n", cloud.frame_id));
    }
    header.push_str(&format!("comment timestamp_s {}\n", cloud.timestamp_s));
    header.push_str(&format!("element vertex {}\n", cloud.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if with_doppler {
        header.push_str("property float doppler\n");
    }
    if with_normals {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str("end_header\n");

    let mut payload = Vec::with_capacity(cloud.len() * 7 * 4);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z] {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if with_doppler {
            payload.extend_from_slice(&(p.doppler as f32).to_le_bytes());
        }
        if with_normals {
            let n = p.normal.unwrap_or_else(|| Vec3::repeat(f64::NAN));
            for v in [n.x, n.y, n.z] {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }

    let mut file = fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a cloud from the binary PLY dialect. Unknown vertex properties are
/// skipped; a missing Doppler column clears `has_doppler` (callers decide
/// whether that matters for their mode).
pub fn read_cloud(path: &Path) -> Result<DopplerPointCloud, IoError> {
    let bytes = fs::read(path)?;
    let header_end = find_header_end(&bytes).ok_or(IoError::Malformed {
        what: "PLY header",
        detail: "no end_header line".into(),
    })?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| IoError::Malformed {
        what: "PLY header",
        detail: "header is not UTF-8".into(),
    })?;

    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(IoError::Malformed {
            what: "PLY header",
            detail: "missing 'ply' magic".into(),
        });
    }

    let mut vertex_count: Option<usize> = None;
    let mut properties: Vec<(String, usize)> = Vec::new();
    let mut period_s = 0.0f64;
    let mut frame_id = String::new();
    let mut timestamp_s = 0.0f64;
    let mut format_seen = false;
    let mut in_vertex_element = false;

    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let rest: Vec<&str> = tokens.collect();
                if rest != ["binary_little_endian", "1.0"] {
                    return Err(IoError::Malformed {
                        what: "PLY format",
                        detail: format!("unsupported format '{}'", rest.join(" ")),
                    });
                }
                format_seen = true;
            }
            Some("comment") => {
                let rest: Vec<&str> = tokens.collect();
                match rest.as_slice() {
                    ["period_s", v] => {
                        period_s = v.parse().map_err(|_| IoError::Malformed {
                            what: "period_s comment",
                            detail: v.to_string(),
                        })?;
                    }
                    ["frame_id", v] => frame_id = v.to_string(),
                    ["timestamp_s", v] => {
                        timestamp_s = v.parse().map_err(|_| IoError::Malformed {
                            what: "timestamp_s comment",
                            detail: v.to_string(),
                        })?;
                    }
                    _ => {}
                }
            }
            Some("element") => {
                let name = tokens.next().unwrap_or("");
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or(IoError::Malformed {
                        what: "element line",
                        detail: line.to_string(),
                    })?;
                if name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else if count > 0 {
                    return Err(IoError::Malformed {
                        what: "PLY element",
                        detail: format!("unsupported element '{name}' with {count} entries"),
                    });
                } else {
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if !in_vertex_element {
                    continue;
                }
                let ty = tokens.next().unwrap_or("");
                let name = tokens.next().unwrap_or("");
                let size = property_size(ty).ok_or(IoError::Malformed {
                    what: "property type",
                    detail: ty.to_string(),
                })?;
                properties.push((name.to_string(), size));
            }
            Some("end_header") => break,
            _ => {
                return Err(IoError::Malformed {
                    what: "PLY header line",
                    detail: line.to_string(),
                })
            }
        }
    }

    if !format_seen {
        return Err(IoError::Malformed {
            what: "PLY header",
            detail: "missing format line".into(),
        });
    }
    let vertex_count = vertex_count.ok_or(IoError::Malformed {
        what: "PLY header",
        detail: "missing vertex element".into(),
    })?;

    let offset_of = |name: &str| -> Option<(usize, usize)> {
        let mut offset = 0;
        for (prop, size) in &properties {
            if prop == name {
                return Some((offset, *size));
            }
            offset += size;
        }
        None
    };
    let stride: usize = properties.iter().map(|(_, s)| s).sum();

    let field = |name: &'static str| -> Result<(usize, usize), IoError> {
        offset_of(name).ok_or(IoError::MissingProperty(name))
    };
    let x = field("x")?;
    let y = field("y")?;
    let z = field("z")?;
    for (name, (_, size)) in [("x", x), ("y", y), ("z", z)] {
        if size != 4 {
            return Err(IoError::Malformed {
                what: "property type",
                detail: format!("property '{name}' must be float"),
            });
        }
    }
    let doppler = offset_of("doppler");
    let normals = match (offset_of("nx"), offset_of("ny"), offset_of("nz")) {
        (Some(nx), Some(ny), Some(nz)) => Some((nx.0, ny.0, nz.0)),
        (None, None, None) => None,
        _ => {
            return Err(IoError::Malformed {
                what: "normal properties",
                detail: "nx, ny, nz must all be present or all absent".into(),
            })
        }
    };

    let payload = &bytes[header_end..];
    let expected = vertex_count * stride;
    if payload.len() < expected {
        return Err(IoError::Truncated {
            expected,
            found: payload.len(),
        });
    }

    let read_f32 = |row: &[u8], offset: usize| -> f64 {
        f32::from_le_bytes(row[offset..offset + 4].try_into().unwrap()) as f64
    };

    let mut points = Vec::with_capacity(vertex_count);
    for i in 0..vertex_count {
        let row = &payload[i * stride..(i + 1) * stride];
        let position = Vec3::new(read_f32(row, x.0), read_f32(row, y.0), read_f32(row, z.0));
        if !position.iter().all(|v| v.is_finite()) {
            return Err(IoError::NonFinite {
                what: "position",
                index: i,
            });
        }
        let doppler_value = match doppler {
            Some((off, _)) => {
                let v = read_f32(row, off);
                if !v.is_finite() {
                    return Err(IoError::NonFinite {
                        what: "doppler",
                        index: i,
                    });
                }
                v
            }
            None => 0.0,
        };
        let normal = normals.and_then(|(nx, ny, nz)| {
            let n = Vec3::new(read_f32(row, nx), read_f32(row, ny), read_f32(row, nz));
            if n.iter().all(|v| v.is_finite()) {
                Some(n)
            } else {
                None
            }
        });
        points.push(DopplerPoint {
            position,
            doppler: doppler_value,
            normal,
        });
    }

    Ok(DopplerPointCloud {
        points,
        period_s,
        frame_id,
        timestamp_s,
        has_doppler: doppler.is_some(),
    })
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let needle = b"end_header\n";
    bytes
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|pos| pos + needle.len())
}

/// Writes `timestamp tx ty tz qx qy qz qw` rows, one pose per line.
pub fn write_trajectory(rows: &[(f64, RigidTransform)], path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    for (t, pose) in rows {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(pose.rotation),
        );
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            t, pose.translation.x, pose.translation.y, pose.translation.z, q.i, q.j, q.k, q.w
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a trajectory file; rows come back sorted by timestamp.
/// Blank lines and `#` comments are ignored.
pub fn read_trajectory(path: &Path) -> Result<Vec<(f64, RigidTransform)>, IoError> {
    let mut content = String::new();
    fs::File::open(path)?.read_to_string(&mut content)?;
    let mut rows = Vec::new();
    for (line_no, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::Malformed {
                what: "trajectory row",
                detail: line.to_string(),
            })?;
        if fields.len() != 8 {
            return Err(IoError::Malformed {
                what: "trajectory row",
                detail: format!("expected 8 fields, got {} in '{line}'", fields.len()),
            });
        }
        let norm = (fields[4] * fields[4]
            + fields[5] * fields[5]
            + fields[6] * fields[6]
            + fields[7] * fields[7])
            .sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(IoError::NonUnitQuaternion {
                norm,
                line: line_no + 1,
            });
        }
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            fields[7], fields[4], fields[5], fields[6],
        ));
        rows.push((
            fields[0],
            RigidTransform::new(
                q.to_rotation_matrix().into_inner(),
                Vec3::new(fields[1], fields[2], fields[3]),
            ),
        ));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(IoError::DuplicateTimestamp {
                timestamp: pair[0].0,
            });
        }
    }
    Ok(rows)
}

/// Writes CSV content; one call per file keeps runs byte-reproducible.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), IoError> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
