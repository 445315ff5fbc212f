//! Plain-text point clouds, accumulator exports, and atomic file writes.
//!
//! Clouds use one point per line, `x y z` or `x y z nx ny nz`, separated by
//! whitespace. Everything after a `#` is ignored. A scan point whose normal is
//! unknown is written as `nan nan nan` in the normal columns.
//!
//! Grid CSV files hold one heading layer: row `j` of the file is grid row `j`
//! (y ascending), column `i` is grid column `i` (x ascending).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::geometry::{MapCloud, Point3, ScanCloud, UnitNormal3};
use crate::objectives::Grid;

/// Contents of a cloud file before it is interpreted as a scan or a map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloudFile {
    pub points: Vec<Point3>,
    /// Present when the file has six columns.
    pub normals: Option<Vec<Option<UnitNormal3>>>,
}

impl CloudFile {
    pub fn into_scan(self) -> Result<ScanCloud> {
        ScanCloud::new(self.points, self.normals)
    }

    /// Fails unless every point carries a normal.
    pub fn into_map(self) -> Result<MapCloud> {
        let Some(normals) = self.normals else {
            return Err(Error::MissingNormals { first_point: 0 });
        };
        let normals = normals
            .into_iter()
            .enumerate()
            .map(|(k, n)| n.ok_or(Error::MissingNormals { first_point: k }))
            .collect::<Result<Vec<_>>>()?;
        MapCloud::new(self.points, normals)
    }
}

impl From<&ScanCloud> for CloudFile {
    fn from(scan: &ScanCloud) -> Self {
        Self {
            points: scan.points.clone(),
            normals: scan.normals.clone(),
        }
    }
}

impl From<&MapCloud> for CloudFile {
    fn from(map: &MapCloud) -> Self {
        Self {
            points: map.points.clone(),
            normals: Some(map.normals.iter().copied().map(Some).collect()),
        }
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_values(fields: &[&str], line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| parse_error(line, format!("not a number: {f:?}"))))
        .collect()
}

/// Parses cloud text. Line numbers in errors start at 1.
pub fn parse_cloud(text: &str) -> Result<CloudFile> {
    let mut cloud = CloudFile::default();
    let mut columns: Option<usize> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or_default();
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 3 && fields.len() != 6 {
            return Err(parse_error(line, format!("expected 3 or 6 values, found {}", fields.len())));
        }
        match columns {
            None => {
                columns = Some(fields.len());
                if fields.len() == 6 {
                    cloud.normals = Some(Vec::new());
                }
            }
            Some(c) if c != fields.len() => {
                return Err(parse_error(
                    line,
                    format!("expected {c} values like the lines before, found {}", fields.len()),
                ));
            }
            Some(_) => {}
        }
        let v = parse_values(&fields, line)?;
        let p = Point3::new(v[0], v[1], v[2]);
        if !p.is_finite() {
            return Err(parse_error(line, "coordinates must be finite"));
        }
        cloud.points.push(p);
        if let Some(normals) = cloud.normals.as_mut() {
            let n = if v[3..].iter().all(|c| c.is_nan()) {
                None
            } else {
                Some(UnitNormal3::new(v[3], v[4], v[5]).ok_or_else(|| parse_error(line, "normal has no direction"))?)
            };
            normals.push(n);
        }
    }
    Ok(cloud)
}

pub fn load_cloud(path: &Path) -> Result<CloudFile> {
    parse_cloud(&fs::read_to_string(path)?)
}

/// Formats a cloud with six decimals (micrometers).
pub fn format_cloud(cloud: &CloudFile) -> Result<String> {
    if let Some(n) = &cloud.normals {
        if n.len() != cloud.points.len() {
            return Err(Error::NormalCountMismatch {
                points: cloud.points.len(),
                normals: n.len(),
            });
        }
    }
    let mut out = String::with_capacity(cloud.points.len() * 64);
    for (k, p) in cloud.points.iter().enumerate() {
        let _ = write!(out, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        match cloud.normals.as_ref().map(|n| n[k]) {
            Some(Some(n)) => {
                let _ = write!(out, " {:.6} {:.6} {:.6}", n.nx(), n.ny(), n.nz());
            }
            Some(None) => out.push_str(" nan nan nan"),
            None => {}
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_cloud(path: &Path, cloud: &CloudFile) -> Result<()> {
    write_atomic(path, format_cloud(cloud)?.as_bytes())
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapWarning {
    /// The grid maximum is not positive; the image is all zeros.
    ZeroMax,
}

/// Encodes a grid as a binary 8-bit PGM, scaled so the maximum maps to 255.
///
/// Image row 0 is the grid row with the highest y.
pub fn encode_heatmap(grid: &Grid<f64>) -> Result<(Vec<u8>, Option<HeatmapWarning>)> {
    let n = grid.size();
    if n == 0 {
        return Err(Error::InvalidSpec("cannot export an empty grid".into()));
    }
    let max = grid.as_slice().iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let warning = (max <= 0.0).then_some(HeatmapWarning::ZeroMax);
    let mut out = format!("P5\n# row 0 is the highest y; value = round(255 * v / max)\n{n} {n}\n255\n").into_bytes();
    out.reserve(n * n);
    for j in (0..n).rev() {
        for i in 0..n {
            let v = *grid.get(i, j);
            let px = if warning.is_some() || !v.is_finite() {
                0.0
            } else {
                (255.0 * v / max).round().clamp(0.0, 255.0)
            };
            out.push(px as u8);
        }
    }
    Ok((out, warning))
}

pub fn export_heatmap(grid: &Grid<f64>, path: &Path) -> Result<Option<HeatmapWarning>> {
    let (bytes, warning) = encode_heatmap(grid)?;
    write_atomic(path, &bytes)?;
    Ok(warning)
}

/// Row-major CSV text of one heading layer, without a header row.
pub fn format_grid_csv(grid: &Grid<f64>) -> String {
    let n = grid.size();
    let mut out = String::with_capacity(n * n * 8);
    for j in 0..n {
        for i in 0..n {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", grid.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn export_grid_csv(grid: &Grid<f64>, path: &Path) -> Result<()> {
    write_atomic(path, format_grid_csv(grid).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let c = parse_cloud("# header\n\n1 2 3 # trailing\n  4 5 6\n").unwrap();
        assert_eq!(c.points, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.0, 5.0, 6.0)]);
        assert!(c.normals.is_none());
    }

    #[test]
    fn short_line_reports_its_number() {
        let err = parse_cloud("0 0 0\n# note\n1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn mixed_columns_name_first_offending_line() {
        let err = parse_cloud("0 0 0 0 0 1\n1 1 1 0 0 1\n2 2 2\n3 3 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn garbage_and_zero_normals_are_rejected() {
        assert!(matches!(parse_cloud("1 x 3").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(parse_cloud("1 2 3 0 0 0").unwrap_err(), Error::Parse { line: 1, .. }));
        assert!(matches!(parse_cloud("1 2 inf").unwrap_err(), Error::Parse { line: 1, .. }));
    }

    #[test]
    fn unknown_scan_normals_survive_a_round_trip() {
        let scan = ScanCloud::new(
            vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-1.0, 0.5, 2.0)],
            Some(vec![Some(UnitNormal3::PLUS_Z), None]),
        )
        .unwrap();
        let text = format_cloud(&CloudFile::from(&scan)).unwrap();
        assert!(text.contains("nan nan nan"));
        assert_eq!(parse_cloud(&text).unwrap().into_scan().unwrap(), scan);
        assert!(matches!(
            parse_cloud(&text).unwrap().into_map(),
            Err(Error::MissingNormals { first_point: 1 })
        ));
    }

    fn grid_of(n: usize, f: impl Fn(usize, usize) -> f64) -> Grid<f64> {
        Grid::from_vec(n, (0..n * n).map(|k| f(k % n, k / n)).collect())
    }

    fn pixels(bytes: &[u8], n: usize) -> &[u8] {
        &bytes[bytes.len() - n * n..]
    }

    #[test]
    fn heatmap_header_and_orientation() {
        let g = grid_of(4, |i, j| if (i, j) == (1, 3) { 2.0 } else { 0.0 });
        let (bytes, warn) = encode_heatmap(&g).unwrap();
        assert!(warn.is_none());
        assert!(bytes.starts_with(b"P5\n#"));
        let px = pixels(&bytes, 4);
        // grid row 3 (highest y) is image row 0
        assert_eq!(px[1], 255);
        assert_eq!(px.iter().filter(|&&v| v > 0).count(), 1);
    }

    #[test]
    fn uniform_and_zero_heatmaps() {
        let (bytes, warn) = encode_heatmap(&grid_of(5, |_, _| 3.5)).unwrap();
        assert!(warn.is_none());
        assert!(pixels(&bytes, 5).iter().all(|&v| v == 255));
        let (bytes, warn) = encode_heatmap(&grid_of(5, |_, _| 0.0)).unwrap();
        assert_eq!(warn, Some(HeatmapWarning::ZeroMax));
        assert!(pixels(&bytes, 5).iter().all(|&v| v == 0));
    }

    #[test]
    fn heatmap_rounds_to_nearest_level() {
        let g = grid_of(2, |i, j| [0.0, 1.0, 2.0, 510.0][j * 2 + i]);
        let (bytes, _) = encode_heatmap(&g).unwrap();
        // rows flipped: image = [row1, row0] = [2, 510, 0, 1]
        assert_eq!(pixels(&bytes, 2), &[1, 255, 0, 1]);
    }

    #[test]
    fn grid_csv_is_row_major() {
        let g = grid_of(2, |i, j| (10 * j + i) as f64);
        assert_eq!(format_grid_csv(&g), "0,1\n10,11\n");
    }
}
