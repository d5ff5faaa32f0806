//! Plain-text XYZ clouds: one `x y z` triple per line.
//!
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GeometryError, PointCloud};

pub fn parse_points(text: &str) -> Result<PointCloud, GeometryError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(GeometryError::Columns {
                line: i + 1,
                found: fields.len(),
            });
        }
        let mut p: [f64; 3] = [0.0; 3];
        for (slot, field) in p.iter_mut().zip(&fields) {
            *slot = field.parse().map_err(|_| GeometryError::Parse {
                line: i + 1,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !slot.is_finite() {
                return Err(GeometryError::Parse {
                    line: i + 1,
                    message: format!("non-finite coordinate {field:?}"),
                });
            }
        }
        points.push(p);
    }
    PointCloud::new(points, None)
}

pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud, GeometryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
    parse_points(&text)
}

/// Formats coordinates with 9 significant digits.
pub fn write_points(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(out, "{:.8e} {:.8e} {:.8e}", p[0], p[1], p[2]);
    }
    out
}

pub fn save_points(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    fs::write(path, write_points(cloud)).map_err(|e| GeometryError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_points() {
        let cloud = parse_points("0 0 0\n1 0 0").unwrap();
        assert_eq!(cloud.points(), &[[0.0; 3], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_points("a b c").unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 1, .. }));
        let err = parse_points("# header\n1 2 3\n\n4 5\n").unwrap_err();
        assert!(matches!(err, GeometryError::Columns { line: 4, found: 2 }));
        assert!(matches!(parse_points("\n"), Err(GeometryError::Empty)));
    }

    #[test]
    fn save_then_load_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let pts = (0..200)
            .map(|_| [0; 3].map(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let cloud = PointCloud::new(pts, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        save_points(&cloud, &path).unwrap();
        let back = load_points(&path).unwrap();
        let delta = cloud
            .points()
            .iter()
            .zip(back.points())
            .flat_map(|(p, q)| (0..3).map(move |k| (p[k] - q[k]).abs()))
            .fold(0.0, f64::max);
        assert!(delta < 1e-8, "{delta}");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            load_points("/nonexistent/cloud.xyz"),
            Err(GeometryError::Io { .. })
        ));
    }
}
