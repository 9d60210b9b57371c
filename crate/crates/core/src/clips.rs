//! Overlapped clip sampling.
//!
//! A clip is a window of `N_f` consecutive frames. Motion `i` maps frame
//! `i − 1` to frame `i`, so a clip starting at frame `s` carries motions
//! `s + 1 ..= s + N_f − 1`. Pairs are consecutive clips shifted by one frame;
//! they share `N_f − 1` frames and `N_f − 2` motions.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{relative_transform, Pose6DoF, Trajectory};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_frames: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_frames: 3,
            stride: 1,
            batch_size: 2,
            shuffle_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(invalid(format!("n_frames must be ≥ 2, got {}", self.n_frames)));
        }
        if self.stride < 1 {
            return Err(invalid("stride must be ≥ 1"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clip {
    start: usize,
    n_frames: usize,
}

impl Clip {
    pub fn new(start: usize, n_frames: usize) -> Result<Self> {
        if n_frames < 2 {
            return Err(invalid(format!("a clip needs at least 2 frames, got {n_frames}")));
        }
        Ok(Self { start, n_frames })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_motions(&self) -> usize {
        self.n_frames - 1
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        (self.start..self.start + self.n_frames).collect()
    }

    /// `motion_indices()[w] == frame_indices()[w + 1]`.
    pub fn motion_indices(&self) -> Vec<usize> {
        (self.start + 1..self.start + self.n_frames).collect()
    }

    pub fn motion_at(&self, w: usize) -> Option<usize> {
        (w < self.n_motions()).then(|| self.start + 1 + w)
    }

    /// Local position of a global motion index inside this clip.
    pub fn position_of(&self, motion: usize) -> Option<usize> {
        (motion > self.start && motion < self.start + self.n_frames).then(|| motion - self.start - 1)
    }

    pub fn shifted(&self, by: usize) -> Clip {
        Clip {
            start: self.start + by,
            n_frames: self.n_frames,
        }
    }
}

/// Two consecutive clips; `second` is `first` shifted by one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipPair {
    pub first: Clip,
    pub second: Clip,
}

impl ClipPair {
    pub fn at(start: usize, n_frames: usize) -> Result<Self> {
        let first = Clip::new(start, n_frames)?;
        Ok(Self {
            first,
            second: first.shifted(1),
        })
    }

    pub fn shared_frames(&self) -> Vec<usize> {
        (self.second.start..self.first.start + self.first.n_frames).collect()
    }

    pub fn shared_motions(&self) -> Vec<usize> {
        (self.second.start + 1..self.first.start + self.first.n_frames).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledPairs {
    pub pairs: Vec<ClipPair>,
    /// Set when the sequence cannot hold a single pair.
    pub sequence_too_short: bool,
}

/// One pair per window start `s = 0, stride, ...` with `s + N_f < sequence_length`.
pub fn sample_clip_pairs(sequence_length: usize, cfg: &SamplerConfig) -> Result<SampledPairs> {
    cfg.validate()?;
    if sequence_length < cfg.n_frames + 1 {
        return Ok(SampledPairs {
            pairs: Vec::new(),
            sequence_too_short: true,
        });
    }
    let last_start = sequence_length - cfg.n_frames - 1;
    let pairs = (0..=last_start)
        .step_by(cfg.stride)
        .map(|s| ClipPair::at(s, cfg.n_frames))
        .collect::<Result<_>>()?;
    Ok(SampledPairs {
        pairs,
        sequence_too_short: false,
    })
}

/// A training batch of `B` pairs, exposed as `2B` clips: the first clips of
/// all pairs followed by the second clips in the same order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipPairBatch {
    pub first_half: Vec<Clip>,
    pub second_half: Vec<Clip>,
}

impl ClipPairBatch {
    pub fn from_pairs(pairs: &[ClipPair]) -> Self {
        Self {
            first_half: pairs.iter().map(|p| p.first).collect(),
            second_half: pairs.iter().map(|p| p.second).collect(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.first_half.len()
    }

    pub fn clips(&self) -> Vec<Clip> {
        self.first_half.iter().chain(&self.second_half).copied().collect()
    }

    pub fn pair(&self, i: usize) -> ClipPair {
        ClipPair {
            first: self.first_half[i],
            second: self.second_half[i],
        }
    }

    pub fn pairs(&self) -> Vec<ClipPair> {
        (0..self.n_pairs()).map(|i| self.pair(i)).collect()
    }

    /// `(first, second)` positions of each pair within [`clips`](Self::clips).
    pub fn pair_ids(&self) -> Vec<(usize, usize)> {
        let b = self.n_pairs();
        (0..b).map(|i| (i, b + i)).collect()
    }
}

/// Shuffles pairs with the seeded shuffle stream and groups them into batches
/// of `batch_size` pairs. The last, possibly partial, batch is kept.
pub fn assemble_batches(pairs: &[ClipPair], cfg: &SamplerConfig) -> Result<Vec<ClipPairBatch>> {
    cfg.validate()?;
    let mut shuffled = pairs.to_vec();
    let mut rng = rng::stream(cfg.shuffle_seed, Stream::Shuffle);
    shuffled.shuffle(&mut rng);
    Ok(shuffled.chunks(cfg.batch_size).map(ClipPairBatch::from_pairs).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Occurrence {
    pub clip_id: usize,
    /// Clips sharing a group id are consecutive and may be compared.
    pub group_id: usize,
    pub w: usize,
}

/// Every occurrence of every motion among a set of clips.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapMap {
    pub entries: BTreeMap<usize, Vec<Occurrence>>,
}

impl OverlapMap {
    /// `groups[i]` is the comparison group of `clips[i]`.
    pub fn from_clips(clips: &[Clip], groups: &[usize]) -> Result<Self> {
        if clips.len() != groups.len() {
            return Err(invalid(format!(
                "{} clips but {} group labels",
                clips.len(),
                groups.len()
            )));
        }
        let mut entries: BTreeMap<usize, Vec<Occurrence>> = BTreeMap::new();
        for (clip_id, (clip, &group_id)) in clips.iter().zip(groups).enumerate() {
            for (w, motion) in clip.motion_indices().into_iter().enumerate() {
                entries
                    .entry(motion)
                    .or_default()
                    .push(Occurrence { clip_id, group_id, w });
            }
        }
        Ok(Self { entries })
    }

    pub fn occurrences(&self, motion: usize) -> &[Occurrence] {
        self.entries.get(&motion).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Occurrences of one motion inside one group, for groups where the motion
    /// appears at least twice. Sorted by (motion, group).
    pub fn consistency_groups(&self) -> Vec<(usize, Vec<Occurrence>)> {
        let mut out = Vec::new();
        for (&motion, occ) in &self.entries {
            let mut by_group: BTreeMap<usize, Vec<Occurrence>> = BTreeMap::new();
            for o in occ {
                by_group.entry(o.group_id).or_default().push(*o);
            }
            out.extend(by_group.into_values().filter(|g| g.len() >= 2).map(|g| (motion, g)));
        }
        out
    }
}

/// Overlaps inside a batch, grouped by pair so that coincidental overlaps
/// between unrelated shuffled pairs are never compared.
pub fn overlap_map(batch: &ClipPairBatch) -> OverlapMap {
    let clips = batch.clips();
    let b = batch.n_pairs();
    let groups: Vec<usize> = (0..clips.len()).map(|i| i % b.max(1)).collect();
    OverlapMap::from_clips(&clips, &groups).expect("one group label per clip")
}

/// Relative ground-truth motions of a clip, one per local position.
pub fn ground_truth_targets(clip: &Clip, gt: &Trajectory) -> Result<Vec<Pose6DoF>> {
    let last = clip.start + clip.n_frames - 1;
    if last >= gt.len() {
        return Err(invalid(format!(
            "clip frames {}..={} exceed ground truth of {} poses",
            clip.start,
            last,
            gt.len()
        )));
    }
    let poses = gt.poses();
    Ok((clip.start..last)
        .map(|f| relative_transform(&poses[f], &poses[f + 1]).to_pose())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_frames: usize) -> SamplerConfig {
        SamplerConfig {
            n_frames,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn minimal_sequence_gives_one_pair() {
        let s = sample_clip_pairs(4, &cfg(3)).unwrap();
        assert_eq!(s.pairs.len(), 1);
        assert_eq!(s.pairs[0].first.frame_indices(), vec![0, 1, 2]);
        assert_eq!(s.pairs[0].second.frame_indices(), vec![1, 2, 3]);
        assert!(!s.sequence_too_short);
    }

    #[test]
    fn six_frames_three_pairs() {
        let s = sample_clip_pairs(6, &cfg(3)).unwrap();
        assert_eq!(s.pairs.len(), 3);
        assert_eq!(s.pairs[0].shared_motions(), vec![2]);
        assert_eq!(s.pairs[0].shared_frames(), vec![1, 2]);
    }

    #[test]
    fn too_short_is_flagged_not_error() {
        let s = sample_clip_pairs(3, &cfg(3)).unwrap();
        assert!(s.pairs.is_empty());
        assert!(s.sequence_too_short);
    }

    #[test]
    fn stride_skips_starts() {
        let c = SamplerConfig { stride: 2, ..cfg(3) };
        let starts: Vec<_> = sample_clip_pairs(9, &c)
            .unwrap()
            .pairs
            .iter()
            .map(|p| p.first.start())
            .collect();
        assert_eq!(starts, vec![0, 2, 4]);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(sample_clip_pairs(10, &cfg(1)).is_err());
        let c = SamplerConfig { stride: 0, ..cfg(3) };
        assert!(sample_clip_pairs(10, &c).is_err());
    }

    #[test]
    fn batches_keep_partial_tail() {
        let pairs = sample_clip_pairs(8, &cfg(3)).unwrap().pairs;
        assert_eq!(pairs.len(), 5);
        let batches = assemble_batches(&pairs, &cfg(3)).unwrap();
        assert_eq!(batches.iter().map(|b| b.n_pairs()).collect::<Vec<_>>(), vec![2, 2, 1]);
        let four = assemble_batches(&pairs[..4], &cfg(3)).unwrap();
        assert_eq!(four.len(), 2);
        assert!(four.iter().all(|b| b.clips().len() == 4));
    }

    #[test]
    fn batches_are_deterministic_and_seed_dependent() {
        let pairs = sample_clip_pairs(40, &cfg(3)).unwrap().pairs;
        let a = assemble_batches(&pairs, &cfg(3)).unwrap();
        let b = assemble_batches(&pairs, &cfg(3)).unwrap();
        assert_eq!(a, b);
        let other = SamplerConfig {
            shuffle_seed: 99,
            ..cfg(3)
        };
        assert_ne!(a, assemble_batches(&pairs, &other).unwrap());
    }

    #[test]
    fn overlap_of_single_pair() {
        let batch = ClipPairBatch::from_pairs(&[ClipPair::at(0, 3).unwrap()]);
        let map = overlap_map(&batch);
        assert_eq!(
            map.occurrences(2),
            &[
                Occurrence {
                    clip_id: 0,
                    group_id: 0,
                    w: 1
                },
                Occurrence {
                    clip_id: 1,
                    group_id: 0,
                    w: 0
                },
            ]
        );
        assert_eq!(map.occurrences(1).len(), 1);
        assert_eq!(map.occurrences(3).len(), 1);
        assert_eq!(map.consistency_groups().len(), 1);
    }

    #[test]
    fn overlap_of_four_frame_pair() {
        let batch = ClipPairBatch::from_pairs(&[ClipPair::at(0, 4).unwrap()]);
        let map = overlap_map(&batch);
        assert_eq!(map.occurrences(2).len(), 2);
        assert_eq!(map.occurrences(3).len(), 2);
        assert_eq!(map.occurrences(1).len(), 1);
        assert_eq!(map.occurrences(4).len(), 1);
    }

    #[test]
    fn single_clip_has_no_multi_entries() {
        let clip = Clip::new(5, 3).unwrap();
        let map = OverlapMap::from_clips(&[clip], &[0]).unwrap();
        assert!(map.entries.values().all(|o| o.len() == 1));
        assert!(map.consistency_groups().is_empty());
    }

    #[test]
    fn cross_pair_overlaps_are_not_grouped() {
        // pairs starting at 0 and 1 share motion 2 across pairs
        let batch = ClipPairBatch::from_pairs(&[ClipPair::at(0, 3).unwrap(), ClipPair::at(1, 3).unwrap()]);
        let map = overlap_map(&batch);
        assert_eq!(map.occurrences(2).len(), 3);
        let groups = map.consistency_groups();
        assert_eq!(groups.len(), 2);
        for (motion, occ) in groups {
            assert_eq!(occ.len(), 2);
            assert!(occ.iter().all(|o| o.group_id == occ[0].group_id));
            assert!(motion == 2 || motion == 3);
        }
    }

    #[test]
    fn targets_reject_out_of_range() {
        let gt = Trajectory::new(vec![Default::default(); 3]).unwrap();
        assert!(ground_truth_targets(&Clip::new(1, 3).unwrap(), &gt).is_err());
        let t = ground_truth_targets(&Clip::new(0, 3).unwrap(), &gt).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|p| p.to_array() == [0.0; 6]));
    }
}
