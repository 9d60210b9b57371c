use proptest::prelude::*;
use voclip::clips::{overlap_map, ClipPair, ClipPairBatch, OverlapMap};
use voclip::geometry::Pose6DoF;
use voclip::loss::{
    consistency_terms, mc_loss_batch, mc_loss_oracle, mse_loss, total_loss, LossConfig, McReduction, PredictedMotions,
};

/// A batch of clip pairs with random predictions and targets.
#[derive(Clone, Debug)]
struct Case {
    batch: ClipPairBatch,
    preds: Vec<PredictedMotions>,
    targets: Vec<Vec<Pose6DoF>>,
}

fn case(n_frames: usize, max_pairs: usize) -> impl Strategy<Value = Case> {
    prop::collection::vec(0usize..20, 1..=max_pairs).prop_flat_map(move |starts| {
        let n_clips = 2 * starts.len();
        let per_clip = 6 * (n_frames - 1);
        (
            Just(starts),
            prop::collection::vec(-2.0..2.0f64, n_clips * per_clip),
            prop::collection::vec(-1.0..1.0f64, n_clips * per_clip),
        )
            .prop_map(move |(starts, p, t)| {
                let pairs: Vec<ClipPair> = starts.iter().map(|&s| ClipPair::at(s, n_frames).unwrap()).collect();
                let batch = ClipPairBatch::from_pairs(&pairs);
                let preds = p
                    .chunks(per_clip)
                    .map(|c| PredictedMotions::from_flat(c).unwrap())
                    .collect();
                let targets = t
                    .chunks(per_clip)
                    .map(|c| {
                        c.chunks(6)
                            .map(|r| Pose6DoF::from_array(r.try_into().unwrap()).unwrap())
                            .collect()
                    })
                    .collect();
                Case { batch, preds, targets }
            })
    })
}

/// Makes every shared estimate of every pair agree.
fn make_consistent(c: &mut Case) {
    for (a, b) in c.batch.pair_ids() {
        let mut rows = c.preds[b].rows().to_vec();
        let older = c.preds[a].rows();
        // Motion at local w + 1 in the older clip is local w in the newer one.
        for w in 0..rows.len() - 1 {
            rows[w] = older[w + 1];
        }
        c.preds[b] = PredictedMotions::new(rows).unwrap();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_matches_oracle_nf3(c in case(3, 4)) {
        let (closed, _) = mc_loss_batch(&c.preds, &c.batch.pair_ids(), McReduction::Sum).unwrap();
        let oracle = mc_loss_oracle(&overlap_map(&c.batch), &c.preds).unwrap();
        prop_assert!((closed - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
    }
}

proptest! {
    #[test]
    fn closed_form_matches_oracle_any_nf((nf, c) in (2usize..7).prop_flat_map(|nf| case(nf, 3).prop_map(move |c| (nf, c)))) {
        let (closed, n) = mc_loss_batch(&c.preds, &c.batch.pair_ids(), McReduction::Sum).unwrap();
        let oracle = mc_loss_oracle(&overlap_map(&c.batch), &c.preds).unwrap();
        prop_assert!((closed - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()));
        prop_assert_eq!(n, c.batch.n_pairs() * nf.saturating_sub(2));
    }

    #[test]
    fn losses_are_non_negative(c in case(4, 3), alpha in 0.0..20.0f64) {
        let b = total_loss(&c.preds, &c.targets, &c.batch.pair_ids(), &LossConfig::with_alpha(alpha)).unwrap();
        prop_assert!(b.mse >= 0.0 && b.mc >= 0.0 && b.total >= 0.0);
    }

    #[test]
    fn zero_law(mut c in case(4, 3)) {
        make_consistent(&mut c);
        let (mc, _) = mc_loss_batch(&c.preds, &c.batch.pair_ids(), McReduction::Sum).unwrap();
        prop_assert_eq!(mc, 0.0);
    }

    #[test]
    fn nonzero_when_a_shared_estimate_differs(mut c in case(4, 3), delta in 1e-3..1.0f64, pair in 0usize..3, w in 0usize..2) {
        make_consistent(&mut c);
        let ids = c.batch.pair_ids();
        let (_, b) = ids[pair % ids.len()];
        let mut rows = c.preds[b].rows().to_vec();
        rows[w][0] += delta;
        c.preds[b] = PredictedMotions::new(rows).unwrap();
        let (mc, _) = mc_loss_batch(&c.preds, &ids, McReduction::Sum).unwrap();
        prop_assert!(mc > 0.0);
    }

    #[test]
    fn swapping_clips_within_pairs_is_invariant(c in case(4, 3)) {
        let ids = c.batch.pair_ids();
        let (before, _) = mc_loss_batch(&c.preds, &ids, McReduction::Sum).unwrap();
        // Store each pair newer-first; the pair list follows the new slots.
        let clips = c.batch.clips();
        let mut order = Vec::new();
        for &(a, b) in &ids {
            order.extend([b, a]);
        }
        let preds: Vec<PredictedMotions> = order.iter().map(|&i| c.preds[i].clone()).collect();
        let swapped_clips: Vec<_> = order.iter().map(|&i| clips[i]).collect();
        let groups: Vec<usize> = (0..order.len()).map(|i| i / 2).collect();
        let pairs: Vec<(usize, usize)> = (0..ids.len()).map(|i| (2 * i + 1, 2 * i)).collect();
        let (after, _) = mc_loss_batch(&preds, &pairs, McReduction::Sum).unwrap();
        let oracle = mc_loss_oracle(&OverlapMap::from_clips(&swapped_clips, &groups).unwrap(), &preds).unwrap();
        prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before));
        prop_assert!((before - oracle).abs() <= 1e-12 * (1.0 + before));
    }

    #[test]
    fn model_table(c in case(3, 3)) {
        let ids = c.batch.pair_ids();
        let mse = mse_loss(&c.preds, &c.targets).unwrap();
        let a = total_loss(&c.preds, &c.targets, &ids, &LossConfig::model_a()).unwrap();
        let b = total_loss(&c.preds, &c.targets, &ids, &LossConfig::model_b()).unwrap();
        let m = total_loss(&c.preds, &c.targets, &ids, &LossConfig::model_c()).unwrap();
        prop_assert!((a.total - mse).abs() <= 1e-12);
        prop_assert!((b.total - (mse + b.mc)).abs() <= 1e-12);
        prop_assert!((m.total - (mse + 10.0 * m.mc)).abs() <= 1e-12);
    }

    #[test]
    fn linear_in_alpha(c in case(4, 2), alpha in 0.0..50.0f64) {
        let ids = c.batch.pair_ids();
        let zero = total_loss(&c.preds, &c.targets, &ids, &LossConfig::with_alpha(0.0)).unwrap();
        let l = total_loss(&c.preds, &c.targets, &ids, &LossConfig::with_alpha(alpha)).unwrap();
        prop_assert!((l.total - zero.total - alpha * l.mc).abs() <= 1e-12 * (1.0 + l.total));
    }

    #[test]
    fn mean_reduction_divides_by_pairs(c in case(3, 4)) {
        let ids = c.batch.pair_ids();
        let (sum, _) = mc_loss_batch(&c.preds, &ids, McReduction::Sum).unwrap();
        let (mean, _) = mc_loss_batch(&c.preds, &ids, McReduction::Mean).unwrap();
        prop_assert!((mean * ids.len() as f64 - sum).abs() <= 1e-12 * (1.0 + sum));
    }
}

#[test]
fn single_pair_perturbation_changes_mc_by_delta_squared() {
    let older = PredictedMotions::from_flat(&[0.1, -0.2, 0.3, 1.0, 0.0, 2.0, 0.4, 0.5, -0.6, 0.3, 0.2, 1.0]).unwrap();
    let agreeing = PredictedMotions::new(vec![*older.row(1), [0.0, 0.0, 0.1, 0.0, 0.5, 0.9]]).unwrap();
    let pairs = [(0, 1)];
    let (mc, _) = mc_loss_batch(&[older.clone(), agreeing.clone()], &pairs, McReduction::Sum).unwrap();
    assert_eq!(mc, 0.0);
    for delta in [1e-3, 0.1, 0.5, 2.0] {
        for k in 0..6 {
            let mut rows = agreeing.rows().to_vec();
            rows[0][k] += delta;
            let moved = PredictedMotions::new(rows).unwrap();
            let (mc, _) = mc_loss_batch(&[older.clone(), moved], &pairs, McReduction::Sum).unwrap();
            assert!((mc - delta * delta).abs() <= 1e-12, "δ={delta} k={k} mc={mc}");
        }
    }
}

#[test]
fn term_counts_follow_shared_motions() {
    for nf in 2..10 {
        assert_eq!(consistency_terms(2, nf).len(), nf.saturating_sub(2));
    }
}

#[test]
fn negative_alpha_rejected() {
    let p = PredictedMotions::from_flat(&[0.0; 12]).unwrap();
    let t = vec![Pose6DoF::default(); 2];
    let err = total_loss(
        &[p.clone(), p],
        &[t.clone(), t],
        &[(0, 1)],
        &LossConfig::with_alpha(-1.0),
    );
    assert!(err.is_err());
}
