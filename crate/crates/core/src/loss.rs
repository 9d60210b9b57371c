//! Training losses over overlapped clips.
//!
//! For a batch of clips the objective is
//!
//! ```text
//! L = L_mse + α · L_mc
//! ```
//!
//! `L_mse` averages, over clips, the per-clip mean squared L2 error of the
//! `N_f − 1` predicted 6-DoF motions. `L_mc` sums the squared L2 differences
//! between estimates of the same motion made by different clips of one group
//! of consecutive clips; in a batch it is reduced over pairs (mean by default).
//!
//! Two independent routes compute `L_mc`: [`mc_loss_closed`] walks the
//! closed-form index bounds, and [`mc_loss_oracle`] enumerates shared motions
//! from an [`OverlapMap`]. They must agree.

use serde::{Deserialize, Serialize};

use crate::clips::OverlapMap;
use crate::error::{invalid, Result};
use crate::geometry::Pose6DoF;

/// Per-clip predictions: row `w` is the motion at local position `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedMotions {
    rows: Vec<[f64; 6]>,
}

impl PredictedMotions {
    pub fn new(rows: Vec<[f64; 6]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("predictions need at least one motion row"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("predictions contain non-finite values"));
        }
        Ok(Self { rows })
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(6) {
            return Err(invalid(format!(
                "flat predictions need a positive multiple of 6 values, got {}",
                values.len()
            )));
        }
        Self::new(
            values
                .chunks_exact(6)
                .map(|c| c.try_into().expect("chunk of 6"))
                .collect(),
        )
    }

    pub fn rows(&self) -> &[[f64; 6]] {
        &self.rows
    }

    pub fn row(&self, w: usize) -> &[f64; 6] {
        &self.rows[w]
    }

    pub fn n_frames(&self) -> usize {
        self.rows.len() + 1
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// How per-pair consistency terms are reduced over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McReduction {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for McReduction {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(invalid(format!("unknown reduction `{other}` (mean|sum)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub mc_reduction: McReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::with_alpha(1.0)
    }
}

impl LossConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            mc_reduction: McReduction::Mean,
        }
    }

    /// MSE only.
    pub fn model_a() -> Self {
        Self::with_alpha(0.0)
    }

    pub fn model_b() -> Self {
        Self::with_alpha(1.0)
    }

    pub fn model_c() -> Self {
        Self::with_alpha(10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!("alpha must be finite and ≥ 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub mc: f64,
    /// Always `mse + alpha * mc`, evaluated in that order.
    pub total: f64,
    pub n_consistency_pairs: usize,
}

impl LossBreakdown {
    fn combine(mse: f64, mc: f64, alpha: f64, n_consistency_pairs: usize) -> Self {
        Self {
            mse,
            mc,
            total: mse + alpha * mc,
            n_consistency_pairs,
        }
    }
}

fn sq_dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_targets(pred: &PredictedMotions, target: &[Pose6DoF]) -> Result<()> {
    if pred.rows.len() != target.len() {
        return Err(invalid(format!(
            "prediction has {} motions but target has {}",
            pred.rows.len(),
            target.len()
        )));
    }
    Ok(())
}

/// `(1 / (N_f − 1)) Σ_w ‖y_w − ŷ_w‖²` for one clip.
pub fn clip_mse(pred: &PredictedMotions, target: &[Pose6DoF]) -> Result<f64> {
    check_targets(pred, target)?;
    let sum: f64 = pred
        .rows
        .iter()
        .zip(target)
        .map(|(p, t)| sq_dist(p, &t.to_array()))
        .sum();
    Ok(sum / pred.rows.len() as f64)
}

/// Mean of [`clip_mse`] over all clips of a batch.
pub fn mse_loss(preds: &[PredictedMotions], targets: &[Vec<Pose6DoF>]) -> Result<f64> {
    if preds.is_empty() {
        return Err(invalid("empty batch"));
    }
    if preds.len() != targets.len() {
        return Err(invalid(format!(
            "{} predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        sum += clip_mse(p, t)?;
    }
    Ok(sum / preds.len() as f64)
}

/// One squared-difference term: the same motion seen by two clips of a group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsistencyTerm {
    /// Index into the chronological group, and local position, of each side.
    pub a: (usize, usize),
    pub b: (usize, usize),
}

/// Enumerates the closed-form consistency terms for `group_len` consecutive
/// clips of `n_frames` frames, listed oldest first.
///
/// With clip instants counted backwards from the newest clip (`m = 0`), the
/// shared motion `k − j` is compared between clips `k − m` and `k − n` for
///
/// ```text
/// j = 1 ..= 2N_f − 5
///   m = max(j − N_f + 2, 0) ..= min(N_f − 3, j − 1)
///     n = m + 1 ..= min(N_f − 2, j)
/// ```
///
/// and local position `N_f − 2 − j + m` inside clip `k − m`. The bounds span
/// `N_f − 1` clips; terms naming clips outside the group are skipped.
pub fn consistency_terms(group_len: usize, n_frames: usize) -> Vec<ConsistencyTerm> {
    let nf = n_frames as i64;
    let g = group_len as i64;
    let mut terms = Vec::new();
    for j in 1..=(2 * nf - 5) {
        let mu = (j - nf + 2).max(0);
        let lambda = (nf - 3).min(j - 1);
        let gamma = (nf - 2).min(j);
        for m in mu..=lambda {
            for n in (m + 1)..=gamma {
                if n >= g {
                    continue;
                }
                let wm = nf - 2 - j + m;
                let wn = nf - 2 - j + n;
                terms.push(ConsistencyTerm {
                    a: ((g - 1 - m) as usize, wm as usize),
                    b: ((g - 1 - n) as usize, wn as usize),
                });
            }
        }
    }
    terms
}

/// Closed-form consistency loss of one group of consecutive clips (oldest
/// first). Returns the plain sum and the number of terms. Groups of clips with
/// fewer than 3 frames share no motion and give `(0, 0)`.
pub fn mc_loss_closed(group: &[&PredictedMotions], n_frames: usize) -> Result<(f64, usize)> {
    for p in group {
        if p.n_frames() != n_frames {
            return Err(invalid(format!(
                "clip with {} frames in a group of {}-frame clips",
                p.n_frames(),
                n_frames
            )));
        }
    }
    let terms = consistency_terms(group.len(), n_frames);
    let sum = terms
        .iter()
        .map(|t| sq_dist(group[t.a.0].row(t.a.1), group[t.b.0].row(t.b.1)))
        .sum();
    Ok((sum, terms.len()))
}

fn n_frames_of(preds: &[PredictedMotions]) -> Result<usize> {
    let n = preds
        .first()
        .map(PredictedMotions::n_frames)
        .ok_or_else(|| invalid("empty batch"))?;
    if preds.iter().any(|p| p.n_frames() != n) {
        return Err(invalid("all clips in a batch must have the same number of frames"));
    }
    Ok(n)
}

fn check_pairs(preds: &[PredictedMotions], pairs: &[(usize, usize)]) -> Result<()> {
    for &(a, b) in pairs {
        if a >= preds.len() || b >= preds.len() || a == b {
            return Err(invalid(format!(
                "pair ({a}, {b}) does not name two distinct clips of {}",
                preds.len()
            )));
        }
    }
    Ok(())
}

/// Consistency loss of a batch: closed form over each `(older, newer)` pair,
/// then reduced over pairs.
pub fn mc_loss_batch(
    preds: &[PredictedMotions],
    pairs: &[(usize, usize)],
    reduction: McReduction,
) -> Result<(f64, usize)> {
    let n_frames = n_frames_of(preds)?;
    check_pairs(preds, pairs)?;
    let mut sum = 0.0;
    let mut n_terms = 0;
    for &(a, b) in pairs {
        let (v, n) = mc_loss_closed(&[&preds[a], &preds[b]], n_frames)?;
        sum += v;
        n_terms += n;
    }
    let value = match reduction {
        McReduction::Sum => sum,
        McReduction::Mean if pairs.is_empty() => 0.0,
        McReduction::Mean => sum / pairs.len() as f64,
    };
    Ok((value, n_terms))
}

/// Brute-force consistency loss: for every motion seen at least twice inside
/// one group, the sum of squared differences over all unordered occurrence
/// pairs. No batch reduction is applied.
pub fn mc_loss_oracle(map: &OverlapMap, preds: &[PredictedMotions]) -> Result<f64> {
    let mut total = 0.0;
    for (motion, occ) in map.consistency_groups() {
        let rows = occ
            .iter()
            .map(|o| {
                let p = preds
                    .get(o.clip_id)
                    .ok_or_else(|| invalid(format!("no prediction for clip {} (motion {motion})", o.clip_id)))?;
                p.rows
                    .get(o.w)
                    .ok_or_else(|| invalid(format!("clip {} has no motion at position {}", o.clip_id, o.w)))
            })
            .collect::<Result<Vec<_>>>()?;
        for i in 0..rows.len() {
            for j in (i + 1)..rows.len() {
                total += sq_dist(rows[i], rows[j]);
            }
        }
    }
    Ok(total)
}

/// `L = L_mse + α · L_mc` over a batch; `pairs` lists `(older, newer)` clip
/// positions (see [`ClipPairBatch::pair_ids`](crate::clips::ClipPairBatch::pair_ids)).
pub fn total_loss(
    preds: &[PredictedMotions],
    targets: &[Vec<Pose6DoF>],
    pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let mse = mse_loss(preds, targets)?;
    let (mc, n) = mc_loss_batch(preds, pairs, cfg.mc_reduction)?;
    Ok(LossBreakdown::combine(mse, mc, cfg.alpha, n))
}

/// Analytic `∂L/∂ŷ`, one `(N_f − 1) × 6` block per clip. Contributions are
/// accumulated in clip order, then pair order.
pub fn loss_gradient(
    preds: &[PredictedMotions],
    targets: &[Vec<Pose6DoF>],
    pairs: &[(usize, usize)],
    cfg: &LossConfig,
) -> Result<Vec<Vec<[f64; 6]>>> {
    cfg.validate()?;
    let n_frames = n_frames_of(preds)?;
    if preds.len() != targets.len() {
        return Err(invalid(format!(
            "{} predictions but {} targets",
            preds.len(),
            targets.len()
        )));
    }
    check_pairs(preds, pairs)?;
    let mse_scale = 2.0 / ((n_frames - 1) as f64 * preds.len() as f64);
    let mut grads = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        check_targets(p, t)?;
        grads.push(
            p.rows
                .iter()
                .zip(t)
                .map(|(row, target)| {
                    let y = target.to_array();
                    std::array::from_fn(|i| mse_scale * (row[i] - y[i]))
                })
                .collect::<Vec<[f64; 6]>>(),
        );
    }
    if cfg.alpha != 0.0 && !pairs.is_empty() {
        let reduce = match cfg.mc_reduction {
            McReduction::Sum => 1.0,
            McReduction::Mean => 1.0 / pairs.len() as f64,
        };
        let scale = 2.0 * cfg.alpha * reduce;
        let terms = consistency_terms(2, n_frames);
        for &(older, newer) in pairs {
            let ids = [older, newer];
            for t in &terms {
                let (ca, wa) = (ids[t.a.0], t.a.1);
                let (cb, wb) = (ids[t.b.0], t.b.1);
                for i in 0..6 {
                    let d = scale * (preds[ca].rows[wa][i] - preds[cb].rows[wb][i]);
                    grads[ca][wa][i] += d;
                    grads[cb][wb][i] -= d;
                }
            }
        }
    }
    Ok(grads)
}
