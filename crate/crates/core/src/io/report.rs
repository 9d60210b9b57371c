use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{AlignmentMode, EvalReport};

use super::write_string_atomic;

/// `key=value` lines in a fixed order: `alignment`, the five metrics with six
/// decimals, `segments_available`, then `segments.<length>=<count>`.
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "alignment={}", r.alignment).expect("string write");
    for (k, v) in r.metrics() {
        writeln!(out, "{k}={v:.6}").expect("string write");
    }
    writeln!(out, "segments_available={}", r.segments_available).expect("string write");
    for (len, n) in &r.n_segments_per_length {
        writeln!(out, "segments.{len}={n}").expect("string write");
    }
    out
}

pub fn parse_report(text: &str, source_name: &str) -> Result<EvalReport> {
    let err = |line, msg: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut alignment = None;
    let mut metrics: BTreeMap<&str, f64> = BTreeMap::new();
    let mut available = None;
    let mut counts = BTreeMap::new();
    let mut last = 0;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        last = n;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(n, format!("expected key=value, found `{line}`")))?;
        let bad = |what: &str| err(n, format!("`{v}` is not a valid {what} for `{k}`"));
        match k {
            "alignment" => alignment = Some(v.parse::<AlignmentMode>().map_err(|_| bad("alignment"))?),
            "t_err" | "r_err" | "ate" | "rpe_t" | "rpe_r" => {
                let x = v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad("number"))?;
                let key = ["t_err", "r_err", "ate", "rpe_t", "rpe_r"]
                    .into_iter()
                    .find(|m| *m == k)
                    .expect("listed");
                metrics.insert(key, x);
            }
            "segments_available" => available = Some(v.parse::<bool>().map_err(|_| bad("flag"))?),
            _ => {
                let len = k
                    .strip_prefix("segments.")
                    .and_then(|l| l.parse::<u32>().ok())
                    .ok_or_else(|| err(n, format!("unknown key `{k}`")))?;
                counts.insert(len, v.parse::<usize>().map_err(|_| bad("count"))?);
            }
        }
    }
    let missing = |k: &str| err(last, format!("missing key `{k}`"));
    let m = |k: &str| metrics.get(k).copied().ok_or_else(|| missing(k));
    Ok(EvalReport {
        t_err: m("t_err")?,
        r_err: m("r_err")?,
        ate: m("ate")?,
        rpe_t: m("rpe_t")?,
        rpe_r: m("rpe_r")?,
        alignment: alignment.ok_or_else(|| missing("alignment"))?,
        segments_available: available.ok_or_else(|| missing("segments_available"))?,
        n_segments_per_length: counts,
    })
}

pub fn report_to_json(r: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)?)
}

pub fn report_from_json(s: &str) -> Result<EvalReport> {
    Ok(serde_json::from_str(s)?)
}

pub fn write_report(r: &EvalReport, path: &Path) -> Result<()> {
    write_string_atomic(path, &format_report(r))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    parse_report(&crate::error::read_text(path)?, &path.display().to_string())
}
