use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::PredictedMotions;

use super::write_string_atomic;

/// One clip per non-blank line, `6 (N_f − 1)` reals in motion-major order.
/// Every line must carry the same count.
pub fn parse_predictions(text: &str, source_name: &str) -> Result<Vec<PredictedMotions>> {
    let err = |line, msg: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut out: Vec<PredictedMotions> = Vec::new();
    let mut width = None;
    let mut last = 0;
    for (i, line) in text.lines().enumerate() {
        last = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(i + 1, format!("`{t}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() || values.len() % 6 != 0 {
            return Err(err(
                i + 1,
                format!("{} values is not a positive multiple of 6", values.len()),
            ));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(err(
                    i + 1,
                    format!("expected {w} values like the first clip, found {}", values.len()),
                ))
            }
            _ => {}
        }
        out.push(PredictedMotions::from_flat(&values).map_err(|e| err(i + 1, e.to_string()))?);
    }
    if out.is_empty() {
        return Err(err(last.max(1), "file contains no clips".into()));
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictedMotions>> {
    parse_predictions(&crate::error::read_text(path)?, &path.display().to_string())
}

/// Shortest round-trip decimal for every value.
pub fn format_predictions(preds: &[PredictedMotions]) -> String {
    let mut out = String::new();
    for p in preds {
        let line: Vec<String> = p.flat().iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_predictions(preds: &[PredictedMotions], path: &Path) -> Result<()> {
    write_string_atomic(path, &format_predictions(preds))
}
