//! On-disk formats.
//!
//! Volume: `<name>.vol` (raw little-endian f32, inline-major) plus a
//! `<name>.volh` text sidecar with the extents and sample interval.
//! Horizon: CSV `il,xl,twt_ms`. Point cloud: CSV `il,xl,t_index,prob` with a
//! `#`-prefixed metadata line. Surface: CSV grid with `NaN` for missing
//! columns. Floats are printed in shortest round-trip form, so text
//! round-trips reproduce `f32` values exactly.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{HorizonError, Result};
use crate::postprocess::{CloudPoint, CloudSource, PointCloud};

use super::{HorizonGrid, Volume};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HorizonError + '_ {
    move |e| HorizonError::io(path.display().to_string(), e)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut buf)
        .map_err(io_err(path))?;
    Ok(buf)
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?)
        .map_err(|_| HorizonError::corrupt(path.display().to_string(), "not utf-8"))
}

/// Parses `key=value` pairs from a `# ...` metadata line or a header file.
fn parse_kv(text: &str) -> std::collections::BTreeMap<String, String> {
    let mut map = std::collections::BTreeMap::new();
    for token in text.split_whitespace() {
        if let Some((k, v)) = token.split_once('=') {
            map.insert(k.to_string(), v.to_string());
        }
    }
    map
}

fn kv_get<T: std::str::FromStr>(
    map: &std::collections::BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<T> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| {
            HorizonError::corrupt(
                path.display().to_string(),
                format!("missing or invalid header field '{key}'"),
            )
        })
}

// ── Volume ───────────────────────────────────────────────────────────

pub fn save_volume(volume: &Volume, path: &Path) -> Result<()> {
    let header = format!(
        "n_il={}\nn_xl={}\nn_t={}\ndt_ms={}\nil0={}\nxl0={}\n",
        volume.n_il, volume.n_xl, volume.n_t, volume.dt_ms, volume.il0, volume.xl0
    );
    write_file(&path.with_extension("volh"), header.as_bytes())?;
    let mut bytes = Vec::with_capacity(volume.data().len() * 4);
    for &v in volume.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let header_path = path.with_extension("volh");
    let header = parse_kv(&read_text(&header_path)?);
    let n_il: usize = kv_get(&header, "n_il", &header_path)?;
    let n_xl: usize = kv_get(&header, "n_xl", &header_path)?;
    let n_t: usize = kv_get(&header, "n_t", &header_path)?;
    let dt_ms: f32 = kv_get(&header, "dt_ms", &header_path)?;
    let il0: i64 = kv_get(&header, "il0", &header_path)?;
    let xl0: i64 = kv_get(&header, "xl0", &header_path)?;

    let bytes = read_file(path)?;
    let expect = n_il * n_xl * n_t * 4;
    if bytes.len() != expect {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            format!("payload is {} bytes, header implies {expect}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(HorizonError::Validation(format!(
            "{} contains non-finite samples",
            path.display()
        )));
    }
    let mut v = Volume::from_data(n_il, n_xl, n_t, dt_ms, data)?;
    v.il0 = il0;
    v.xl0 = xl0;
    Ok(v)
}

// ── Horizon (sparse CSV of interpreted columns) ──────────────────────

pub fn save_horizon(grid: &HorizonGrid, path: &Path) -> Result<()> {
    let mut out = String::from("il,xl,twt_ms\n");
    for (il, xl, twt) in grid.iter_defined() {
        let _ = writeln!(out, "{il},{xl},{twt}");
    }
    write_file(path, out.as_bytes())
}

pub fn load_horizon(path: &Path, n_il: usize, n_xl: usize) -> Result<HorizonGrid> {
    let text = read_text(path)?;
    let mut grid = HorizonGrid::empty(n_il, n_xl);
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || {
            HorizonError::corrupt(
                path.display().to_string(),
                format!("line {}: expected il,xl,twt_ms", lineno + 1),
            )
        };
        if fields.len() != 3 {
            return Err(bad());
        }
        let il: usize = fields[0].trim().parse().map_err(|_| bad())?;
        let xl: usize = fields[1].trim().parse().map_err(|_| bad())?;
        let twt: f32 = fields[2].trim().parse().map_err(|_| bad())?;
        if il >= n_il || xl >= n_xl {
            return Err(HorizonError::Validation(format!(
                "{}: column (il={il}, xl={xl}) outside grid {n_il}x{n_xl}",
                path.display()
            )));
        }
        grid.set(il, xl, twt);
    }
    Ok(grid)
}

// ── Point cloud ──────────────────────────────────────────────────────

pub fn save_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let (n_il, n_xl, n_t) = cloud.dims;
    let mut out = format!(
        "# n_il={n_il} n_xl={n_xl} n_t={n_t} dt_ms={} source={}\nil,xl,t_index,prob\n",
        cloud.dt_ms,
        cloud.source.as_str()
    );
    for p in &cloud.points {
        let _ = writeln!(out, "{},{},{},{}", p.il, p.xl, p.t, p.prob);
    }
    write_file(path, out.as_bytes())
}

pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let Some((_, meta)) = lines.next() else {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            "empty file",
        ));
    };
    if !meta.starts_with('#') {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            "missing metadata line",
        ));
    }
    let kv = parse_kv(meta.trim_start_matches('#'));
    let n_il: usize = kv_get(&kv, "n_il", path)?;
    let n_xl: usize = kv_get(&kv, "n_xl", path)?;
    let n_t: usize = kv_get(&kv, "n_t", path)?;
    let dt_ms: f32 = kv_get(&kv, "dt_ms", path)?;
    let source = CloudSource::parse(
        kv.get("source")
            .map(String::as_str)
            .unwrap_or("merged"),
    )?;

    let mut points = Vec::new();
    for (lineno, line) in lines {
        if lineno == 1 || line.trim().is_empty() {
            continue; // column header
        }
        let bad = || {
            HorizonError::corrupt(
                path.display().to_string(),
                format!("line {}: expected il,xl,t_index,prob", lineno + 1),
            )
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        points.push(CloudPoint {
            il: fields[0].trim().parse().map_err(|_| bad())?,
            xl: fields[1].trim().parse().map_err(|_| bad())?,
            t: fields[2].trim().parse().map_err(|_| bad())?,
            prob: fields[3].trim().parse().map_err(|_| bad())?,
        });
    }
    PointCloud::new((n_il, n_xl, n_t), dt_ms, source, points)
}

// ── Surface grid ─────────────────────────────────────────────────────

pub fn save_surface(grid: &HorizonGrid, path: &Path) -> Result<()> {
    let mut out = format!("# n_il={} n_xl={}\n", grid.n_il, grid.n_xl);
    for il in 0..grid.n_il {
        let mut row = String::new();
        for xl in 0..grid.n_xl {
            if xl > 0 {
                row.push(',');
            }
            match grid.get(il, xl) {
                Some(v) => {
                    let _ = write!(row, "{v}");
                }
                None => row.push_str("NaN"),
            }
        }
        out.push_str(&row);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn load_surface(path: &Path) -> Result<HorizonGrid> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let Some(meta) = lines.next() else {
        return Err(HorizonError::corrupt(
            path.display().to_string(),
            "empty file",
        ));
    };
    let kv = parse_kv(meta.trim_start_matches('#'));
    let n_il: usize = kv_get(&kv, "n_il", path)?;
    let n_xl: usize = kv_get(&kv, "n_xl", path)?;
    let mut grid = HorizonGrid::empty(n_il, n_xl);
    for (il, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if il >= n_il {
            return Err(HorizonError::corrupt(
                path.display().to_string(),
                format!("more rows than the declared {n_il}"),
            ));
        }
        for (xl, field) in line.split(',').enumerate() {
            if xl >= n_xl {
                return Err(HorizonError::corrupt(
                    path.display().to_string(),
                    format!("row {il} has more than {n_xl} columns"),
                ));
            }
            let v: f32 = field.trim().parse().map_err(|_| {
                HorizonError::corrupt(
                    path.display().to_string(),
                    format!("row {il}, column {xl}: bad float '{field}'"),
                )
            })?;
            if !v.is_nan() {
                grid.set(il, xl, v);
            }
        }
    }
    Ok(grid)
}
