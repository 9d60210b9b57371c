use proptest::prelude::*;
use voclip::clips::{assemble_batches, overlap_map, sample_clip_pairs, ClipPair, SamplerConfig};

fn config(n_frames: usize, stride: usize, batch_size: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        n_frames,
        stride,
        batch_size,
        shuffle_seed: seed,
    }
}

proptest! {
    #[test]
    fn pairs_share_nf_minus_one_frames(len in 0usize..60, nf in 2usize..8, stride in 1usize..4) {
        let sampled = sample_clip_pairs(len, &config(nf, stride, 2, 0)).unwrap();
        prop_assert_eq!(sampled.sequence_too_short, len < nf + 1);
        for p in &sampled.pairs {
            prop_assert_eq!(p.shared_frames().len(), nf - 1);
            prop_assert_eq!(p.shared_motions().len(), nf - 2);
            prop_assert_eq!(p.second.start(), p.first.start() + 1);
            prop_assert!(p.second.start() + nf <= len);
        }
        let expected = if len > nf { (len - nf - 1) / stride + 1 } else { 0 };
        prop_assert_eq!(sampled.pairs.len(), expected);
    }

    #[test]
    fn overlap_entries_rederive_their_motion(starts in prop::collection::vec(0usize..30, 1..6), nf in 2usize..7) {
        let pairs: Vec<ClipPair> = starts.iter().map(|&s| ClipPair::at(s, nf).unwrap()).collect();
        let batch = voclip::clips::ClipPairBatch::from_pairs(&pairs);
        let clips = batch.clips();
        let map = overlap_map(&batch);
        for (&motion, occ) in &map.entries {
            for o in occ {
                prop_assert_eq!(clips[o.clip_id].motion_at(o.w), Some(motion));
            }
        }
        for (_, group) in map.consistency_groups() {
            prop_assert_eq!(group.len(), 2);
            let g = group[0].group_id;
            prop_assert!(group.iter().all(|o| o.group_id == g));
        }
        prop_assert_eq!(map.consistency_groups().len(), pairs.len() * (nf - 2));
    }

    #[test]
    fn batches_are_a_permutation(len in 4usize..80, batch_size in 1usize..6, seed in any::<u64>()) {
        let cfg = config(3, 1, batch_size, seed);
        let sampled = sample_clip_pairs(len, &cfg).unwrap();
        let batches = assemble_batches(&sampled.pairs, &cfg).unwrap();
        let mut out: Vec<ClipPair> = batches.iter().flat_map(|b| b.pairs()).collect();
        prop_assert!(batches.iter().all(|b| b.n_pairs() <= batch_size && b.n_pairs() > 0));
        let mut inp = sampled.pairs.clone();
        out.sort();
        inp.sort();
        prop_assert_eq!(out, inp);
    }

    #[test]
    fn batching_is_deterministic(len in 4usize..80, seed in any::<u64>()) {
        let cfg = config(3, 1, 4, seed);
        let sampled = sample_clip_pairs(len, &cfg).unwrap();
        let a = assemble_batches(&sampled.pairs, &cfg).unwrap();
        let b = assemble_batches(&sampled.pairs, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn batch_order_is_first_halves_then_second(starts in prop::collection::vec(0usize..30, 1..6)) {
        let pairs: Vec<ClipPair> = starts.iter().map(|&s| ClipPair::at(s, 3).unwrap()).collect();
        let batch = voclip::clips::ClipPairBatch::from_pairs(&pairs);
        let clips = batch.clips();
        let b = pairs.len();
        for (i, &(x, y)) in batch.pair_ids().iter().enumerate() {
            prop_assert_eq!((x, y), (i, b + i));
            prop_assert_eq!(clips[x], pairs[i].first);
            prop_assert_eq!(clips[y], pairs[i].second);
        }
    }
}

#[test]
fn short_sequence_is_flagged() {
    let s = sample_clip_pairs(3, &config(3, 1, 2, 0)).unwrap();
    assert!(s.sequence_too_short);
    assert!(s.pairs.is_empty());
    let s = sample_clip_pairs(4, &config(3, 1, 2, 0)).unwrap();
    assert!(!s.sequence_too_short);
    assert_eq!(s.pairs, vec![ClipPair::at(0, 3).unwrap()]);
}

#[test]
fn invalid_sampler_config_rejected() {
    assert!(sample_clip_pairs(10, &config(1, 1, 2, 0)).is_err());
    assert!(sample_clip_pairs(10, &config(3, 0, 2, 0)).is_err());
    assert!(assemble_batches(&[], &config(3, 1, 0, 0)).is_err());
}
