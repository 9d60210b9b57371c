use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::geometry::Trajectory;

use super::write_string_atomic;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of ASCII fields"))
}

/// `frame,x,y,z` rows, shortest round-trip decimals.
pub fn export_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["frame", "x", "y", "z"])?;
    for (i, p) in traj.positions().enumerate() {
        w.write_record([i.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    write_string_atomic(path, &finish(w)?)
}

/// `metric,value` rows with six decimals.
pub fn export_report_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"])?;
    for (k, v) in report.metrics() {
        w.write_record([k.to_string(), format!("{v:.6}")])?;
    }
    write_string_atomic(path, &finish(w)?)
}

/// Positions from a `frame,x,y,z` file; frames must count up from zero.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let source_name = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame", "x", "y", "z"] {
        return Err(Error::Parse {
            source_name,
            line: 1,
            msg: "expected header frame,x,y,z".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse {
            source_name: source_name.clone(),
            line,
            msg,
        };
        let frame: usize = rec[0]
            .parse()
            .map_err(|_| err(format!("bad frame index `{}`", &rec[0])))?;
        if frame != out.len() {
            return Err(err(format!("expected frame {}, found {frame}", out.len())));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(rec.iter().skip(1)) {
            *slot = field.parse().map_err(|_| err(format!("`{field}` is not a number")))?;
        }
        out.push(Vector3::from(v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TransformSE3;

    #[test]
    fn identity_trajectory_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let traj = Trajectory::new(vec![TransformSE3::identity(); 2]).unwrap();
        export_trajectory_csv(&traj, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "frame,x,y,z\n0,0,0,0\n1,0,0,0\n"
        );
        assert_eq!(read_trajectory_csv(&path).unwrap(), vec![Vector3::zeros(); 2]);
    }

    #[test]
    fn malformed_rows_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "frame,x,y,z\n0,0,0,0\n1,0,q,0\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Parse { line: 3, .. })));
    }
}
