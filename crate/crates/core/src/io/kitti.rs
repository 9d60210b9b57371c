use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{RotationMatrix, Trajectory, TransformSE3};

use super::write_string_atomic;

/// Stored ground truth carries limited precision; rotations within this
/// tolerance are accepted and re-orthonormalised.
pub const KITTI_ORTHONORMAL_TOL: f64 = 1e-3;

fn parse_error(source_name: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source_name.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses pose-file text. Blank lines are skipped; `source_name` labels errors.
pub fn parse_kitti_poses(text: &str, source_name: &str) -> Result<Trajectory> {
    let mut poses = Vec::new();
    let mut last_line = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 12 {
            return Err(parse_error(
                source_name,
                n,
                format!("expected 12 values, found {}", tokens.len()),
            ));
        }
        let mut v = [0.0; 12];
        for (slot, tok) in v.iter_mut().zip(&tokens) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_error(source_name, n, format!("`{tok}` is not a finite number")))?;
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let rotation = RotationMatrix::with_tolerance(r, KITTI_ORTHONORMAL_TOL)
            .map_err(|e| parse_error(source_name, n, e.to_string()))?;
        poses.push(TransformSE3::new(rotation, Vector3::new(v[3], v[7], v[11])));
    }
    if poses.is_empty() {
        return Err(parse_error(source_name, last_line.max(1), "file contains no poses"));
    }
    Trajectory::new(poses)
}

pub fn read_kitti_poses(path: &Path) -> Result<Trajectory> {
    let text = crate::error::read_text(path)?;
    parse_kitti_poses(&text, &path.display().to_string())
}

/// Thirteen significant digits per value.
pub fn format_kitti_poses(traj: &Trajectory) -> String {
    let mut out = String::new();
    for p in traj.poses() {
        let r = p.rotation.matrix();
        let t = p.translation;
        for row in 0..3 {
            for col in 0..3 {
                write!(out, "{:.12e} ", r[(row, col)]).expect("string write");
            }
            write!(out, "{:.12e}", t[row]).expect("string write");
            out.push(if row == 2 { '\n' } else { ' ' });
        }
    }
    out
}

pub fn write_kitti_poses(traj: &Trajectory, path: &Path) -> Result<()> {
    write_string_atomic(path, &format_kitti_poses(traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let t = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n", "x").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.poses()[0], TransformSE3::identity());
    }

    #[test]
    fn located_errors() {
        let e = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1\n", "p.txt").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        assert_eq!(e.to_string(), "p.txt:1: expected 12 values, found 11");
        let e = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 z\n", "p").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
        let e = parse_kitti_poses("2 0 0 0 0 1 0 0 0 0 1 0\n", "p").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        assert!(matches!(parse_kitti_poses("", "p"), Err(Error::Parse { .. })));
        assert!(matches!(
            parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 NaN", "p"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn slightly_off_rotations_are_projected() {
        let t = parse_kitti_poses("1.0004 0 0 0 0 1 0 0 0 0 1 0\n", "p").unwrap();
        let r = t.poses()[0].rotation.matrix();
        assert!(crate::geometry::orthonormality_error(r) < 1e-12);
    }
}
