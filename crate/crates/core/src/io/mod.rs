//! File formats and synthetic data.
//!
//! - KITTI pose files: one frame per line, 12 reals forming the row-major
//!   3×4 camera-to-world matrix `[R | t]`.
//! - Run configuration: TOML restricted to known keys.
//! - CSV exports of trajectories and evaluation reports.
//! - Evaluation reports as `key=value` text and JSON.
//! - Prediction files: one clip per line, `6 (N_f − 1)` reals.
//! - Synthetic trajectories and top-down rendered frames.
//!
//! Every writer goes through [`write_atomic`], so a failed write never leaves
//! a partial file behind.

mod config;
mod csv_export;
mod kitti;
mod predictions;
mod report;
mod synth;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use config::{
    format_config, parse_config, read_config, write_config, DataConfig, EvalSection, RunConfig, SamplerSection,
    TrainSection, MAX_SEED,
};
pub use csv_export::{export_report_csv, export_trajectory_csv, read_trajectory_csv};
pub use kitti::{format_kitti_poses, parse_kitti_poses, read_kitti_poses, write_kitti_poses, KITTI_ORTHONORMAL_TOL};
pub use predictions::{format_predictions, parse_predictions, read_predictions, write_predictions};
pub use report::{format_report, parse_report, read_report, report_from_json, report_to_json, write_report};
pub use synth::{
    generate_synthetic, generate_synthetic_frames, render_frame, render_frames, synthetic_motions, texture_seed,
    RenderConfig, Shape, SyntheticSpec,
};

/// Writes through a temporary file in the destination directory, then
/// renames it over `path`.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// [`write_atomic`] for an in-memory string.
pub fn write_string_atomic(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}
