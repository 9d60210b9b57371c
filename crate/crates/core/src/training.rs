//! Seeded toy training on synthetic sequences.
//!
//! Each step runs one forward tape per clip (in parallel), evaluates the
//! batch loss in `f64`, seeds every clip's backward pass with the analytic
//! loss gradient, sums parameter gradients in clip order and applies Adam.
//! Results do not depend on the number of worker threads.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamState, Element, ParamSet, Tape, Tensor};
use crate::clips::{ground_truth_targets, sample_clip_pairs, Clip, ClipPair};
use crate::error::{invalid, Result};
use crate::eval::{evaluate, EvalReport};
use crate::geometry::{relative_to_absolute, Pose6DoF, Trajectory};
use crate::io::{generate_synthetic, read_kitti_poses, render_frames, texture_seed, RunConfig, Shape, SyntheticSpec};
use crate::loss::{loss_gradient, total_loss, LossBreakdown, LossConfig, PredictedMotions};
use crate::model::{normalize_frames, patchify, to_predictions, TsformerVo};
use crate::rng::{self, split_seed, Stream};

/// One sequence: its trajectory and the normalised patches of every frame.
#[derive(Clone, Debug)]
pub struct Sequence<T> {
    pub name: String,
    pub trajectory: Trajectory,
    /// `(N, C·P²)` per frame.
    patches: Vec<Tensor<T>>,
}

impl<T: Element> Sequence<T> {
    pub fn render(
        name: impl Into<String>,
        trajectory: Trajectory,
        model: &TsformerVo<T>,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let mc = model.config();
        let frames = render_frames(&trajectory, mc, &cfg.data.render, texture_seed(cfg.seed))?;
        let patches = frames
            .iter()
            .map(|f| {
                let f = normalize_frames(&f.cast::<T>(), mc)?.reshaped(&[1, mc.channels, mc.height, mc.width])?;
                let p = patchify(&f, mc.patch)?;
                p.reshaped(&[mc.num_patches(), mc.patch_dim()])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            trajectory,
            patches,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    /// `(N_f, N, C·P²)` model input of a clip.
    pub fn clip_input(&self, clip: &Clip) -> Result<Tensor<T>> {
        let frames = clip.frame_indices();
        if frames.last().is_some_and(|&f| f >= self.patches.len()) {
            return Err(invalid(format!(
                "clip starting at {} runs past sequence {}",
                clip.start(),
                self.name
            )));
        }
        let shape = self.patches[0].shape();
        let mut data = Vec::with_capacity(frames.len() * self.patches[0].numel());
        for f in frames {
            data.extend_from_slice(self.patches[f].data());
        }
        Tensor::new(vec![clip.n_frames(), shape[0], shape[1]], data)
    }

    pub fn targets(&self, clip: &Clip) -> Result<Vec<Pose6DoF>> {
        ground_truth_targets(clip, &self.trajectory)
    }
}

/// A clip pair tagged with its sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sequence: usize,
    pub pair: ClipPair,
}

/// Batch layout: the first clips of all windows, then the second clips in the
/// same order, so window `i` compares clips `i` and `B + i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
}

impl WindowBatch {
    pub fn clips(&self) -> Vec<(usize, Clip)> {
        let first = self.windows.iter().map(|w| (w.sequence, w.pair.first));
        let second = self.windows.iter().map(|w| (w.sequence, w.pair.second));
        first.chain(second).collect()
    }

    pub fn pair_ids(&self) -> Vec<(usize, usize)> {
        let b = self.windows.len();
        (0..b).map(|i| (i, b + i)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub sequences: Vec<Sequence<T>>,
    pub windows: Vec<Window>,
}

impl<T: Element> Dataset<T> {
    pub fn new(sequences: Vec<Sequence<T>>, cfg: &RunConfig) -> Result<Self> {
        let sampler = cfg.sampler_config();
        let mut windows = Vec::new();
        for (i, s) in sequences.iter().enumerate() {
            let sampled = sample_clip_pairs(s.len(), &sampler)?;
            windows.extend(sampled.pairs.into_iter().map(|pair| Window { sequence: i, pair }));
        }
        Ok(Self { sequences, windows })
    }

    fn inputs_and_targets(&self, clips: &[(usize, Clip)]) -> Result<(Vec<Tensor<T>>, Vec<Vec<Pose6DoF>>)> {
        clips
            .iter()
            .map(|(s, c)| Ok((self.sequences[*s].clip_input(c)?, self.sequences[*s].targets(c)?)))
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    }
}

/// Trajectory of sequence `index` of the run: a pose file when configured,
/// otherwise the perturbed copy of a synthetic shape.
pub fn sequence_trajectory(cfg: &RunConfig, name: &str, index: usize) -> Result<Trajectory> {
    let n = cfg.data.frames_per_sequence;
    if let Some(path) = cfg.pose_file(name) {
        let full = read_kitti_poses(&path)?;
        if full.len() < n {
            return Err(invalid(format!(
                "{} has {} poses, need {n}",
                path.display(),
                full.len()
            )));
        }
        return Trajectory::new(full.poses()[..n].to_vec());
    }
    let spec = SyntheticSpec {
        shape: Shape::ALL[index % Shape::ALL.len()],
        n_frames: n,
        step: cfg.data.step,
        curvature: cfg.data.curvature,
        noise_std: cfg.data.noise_std,
        seed: split_seed(cfg.seed, index as u64),
    };
    Ok(generate_synthetic(&spec)?.1)
}

/// Shuffles windows with the shuffle stream, one pass per epoch, and yields
/// `steps` batches. The last batch of an epoch may be partial.
pub fn schedule(windows: &[Window], batch_size: usize, steps: usize, seed: u64) -> Result<Vec<WindowBatch>> {
    if windows.is_empty() {
        return Err(invalid(
            "no training windows: every sequence is too short for a clip pair",
        ));
    }
    if batch_size == 0 {
        return Err(invalid("batch_size must be ≥ 1"));
    }
    let mut rng = rng::stream(seed, Stream::Shuffle);
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps {
        let mut epoch = windows.to_vec();
        epoch.shuffle(&mut rng);
        for chunk in epoch.chunks(batch_size) {
            if out.len() == steps {
                break;
            }
            out.push(WindowBatch {
                windows: chunk.to_vec(),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub n_pairs: usize,
    pub loss: LossBreakdown,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!(
            "step={} pairs={} mse={:.12e} mc={:.12e} total={:.12e}",
            self.step, self.n_pairs, self.loss.mse, self.loss.mc, self.loss.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: TsformerVo<T>,
    pub optimizer: Adam<T>,
    pub loss: LossConfig,
}

impl<T: Element> Trainer<T> {
    pub fn new(model: TsformerVo<T>, cfg: &RunConfig) -> Result<Self> {
        cfg.loss.validate()?;
        let optimizer = Adam::new(cfg.optim, model.params())?;
        Ok(Self {
            model,
            optimizer,
            loss: cfg.loss,
        })
    }

    pub fn predict(&self, inputs: &[Tensor<T>]) -> Result<Vec<PredictedMotions>> {
        inputs.par_iter().map(|x| self.model.predict_patches(x)).collect()
    }

    /// Loss of every window of `data` treated as one batch.
    pub fn dataset_loss(&self, data: &Dataset<T>) -> Result<LossBreakdown> {
        let batch = WindowBatch {
            windows: data.windows.clone(),
        };
        let (inputs, targets) = data.inputs_and_targets(&batch.clips())?;
        let preds = self.predict(&inputs)?;
        total_loss(&preds, &targets, &batch.pair_ids(), &self.loss)
    }

    /// Parameter gradients of the batch loss, summed in clip order, together
    /// with the loss before the update.
    pub fn gradients(&self, data: &Dataset<T>, batch: &WindowBatch) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
        self.gradients_on(data, batch, Tape::new)
    }

    /// Loss of one batch without recording gradients.
    pub fn batch_loss(&self, data: &Dataset<T>, batch: &WindowBatch) -> Result<LossBreakdown> {
        let (inputs, targets) = data.inputs_and_targets(&batch.clips())?;
        let preds = self.predict(&inputs)?;
        total_loss(&preds, &targets, &batch.pair_ids(), &self.loss)
    }

    /// [`gradients`](Self::gradients) recorded on tapes from `make_tape`.
    pub fn gradients_on(
        &self,
        data: &Dataset<T>,
        batch: &WindowBatch,
        make_tape: fn() -> Tape<T>,
    ) -> Result<(LossBreakdown, Vec<Tensor<T>>)> {
        let (inputs, targets) = data.inputs_and_targets(&batch.clips())?;
        let recorded = inputs
            .into_par_iter()
            .map(|x| {
                let mut tape = make_tape();
                let bound = self.model.bind_all(&mut tape);
                let input = tape.leaf(x);
                let out = self.model.forward_tape(&mut tape, &bound, input)?.output;
                let pred = to_predictions(tape.value(out))?;
                Ok((tape, bound, out, pred))
            })
            .collect::<Result<Vec<_>>>()?;
        let preds: Vec<PredictedMotions> = recorded.iter().map(|r| r.3.clone()).collect();
        let pairs = batch.pair_ids();
        let loss = total_loss(&preds, &targets, &pairs, &self.loss)?;
        let seeds = loss_gradient(&preds, &targets, &pairs, &self.loss)?;
        let n_params = self.model.params().len();
        let per_clip = recorded
            .par_iter()
            .zip(seeds.par_iter())
            .map(|((tape, bound, out, _), seed)| {
                let flat: Vec<f64> = seed.iter().flatten().copied().collect();
                let g = tape.backward_with_seed(*out, Tensor::from_f64(&[seed.len(), 6], &flat)?)?;
                Ok((0..n_params)
                    .map(|i| g.wrt(bound.node(i).expect("all parameters bound")))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total: Vec<Tensor<T>> = self
            .model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        for clip in &per_clip {
            for (acc, g) in total.iter_mut().zip(clip) {
                acc.add_assign(g);
            }
        }
        Ok((loss, total))
    }

    /// One optimisation step; returns the loss before the update.
    pub fn step(&mut self, data: &Dataset<T>, batch: &WindowBatch) -> Result<LossBreakdown> {
        let (loss, grads) = self.gradients(data, batch)?;
        for (p, g) in self.model.params_mut().iter_mut().zip(grads) {
            p.grad = g;
        }
        self.optimizer.step(self.model.params_mut())?;
        Ok(loss)
    }

    /// Chains predictions of non-overlapping clips into a trajectory starting
    /// at the sequence's first pose. A final overlapping clip covers any
    /// motions left at the end.
    pub fn predict_trajectory(&self, seq: &Sequence<T>) -> Result<Trajectory> {
        let nf = self.model.config().n_frames;
        let len = seq.len();
        if len < nf {
            return Err(invalid(format!(
                "sequence {} has {len} frames, fewer than a clip",
                seq.name
            )));
        }
        let mut starts: Vec<usize> = (0..=len - nf).step_by(nf - 1).collect();
        if starts.last() != Some(&(len - nf)) {
            starts.push(len - nf);
        }
        let clips = starts.iter().map(|&s| Clip::new(s, nf)).collect::<Result<Vec<_>>>()?;
        let inputs = clips.iter().map(|c| seq.clip_input(c)).collect::<Result<Vec<_>>>()?;
        let preds = self.predict(&inputs)?;
        let mut motions = Vec::with_capacity(len - 1);
        for (clip, pred) in clips.iter().zip(&preds) {
            for (w, motion) in clip.motion_indices().into_iter().enumerate() {
                if motion == motions.len() + 1 {
                    motions.push(Pose6DoF::from_array(*pred.row(w))?);
                }
            }
        }
        Ok(relative_to_absolute(&motions, &seq.trajectory.poses()[0]))
    }
}

/// Summary of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TsformerVo<f32>,
    pub adam: AdamState<f32>,
    pub steps: Vec<StepLog>,
    /// Full training-set loss before the first and after the last step.
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
    /// One report per test sequence.
    pub reports: Vec<(String, EvalReport)>,
}

impl TrainOutcome {
    pub fn params(&self) -> &ParamSet<f32> {
        self.model.params()
    }
}

/// Training set and test sequences of a run.
pub fn build_datasets<T: Element>(cfg: &RunConfig, model: &TsformerVo<T>) -> Result<(Dataset<T>, Vec<Sequence<T>>)> {
    let names: Vec<&String> = cfg
        .data
        .train_sequences
        .iter()
        .chain(&cfg.data.test_sequences)
        .collect();
    let mut seqs = names
        .iter()
        .enumerate()
        .map(|(i, name)| Sequence::render(name.as_str(), sequence_trajectory(cfg, name, i)?, model, cfg))
        .collect::<Result<Vec<_>>>()?;
    let test = seqs.split_off(cfg.data.train_sequences.len());
    Ok((Dataset::new(seqs, cfg)?, test))
}

/// Runs a seeded toy training from `cfg`. `on_step` sees every step log as
/// soon as it is produced.
pub fn run_toy_training(cfg: &RunConfig, mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = TsformerVo::<f32>::init(cfg.model.clone(), cfg.seed)?;
    let (train, test) = build_datasets(cfg, &model)?;
    let batches = schedule(&train.windows, cfg.sampler.batch_size, cfg.train.steps, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg)?;
    let initial = trainer.dataset_loss(&train)?;
    let mut steps = Vec::with_capacity(batches.len());
    for (i, batch) in batches.iter().enumerate() {
        let loss = trainer.step(&train, batch)?;
        let log = StepLog {
            step: i + 1,
            n_pairs: batch.windows.len(),
            loss,
        };
        on_step(&log);
        steps.push(log);
    }
    let last = trainer.dataset_loss(&train)?;
    let reports = test
        .iter()
        .map(|seq| {
            let pred = trainer.predict_trajectory(seq)?;
            Ok((
                seq.name.clone(),
                evaluate(&pred, &seq.trajectory, cfg.eval.alignment, &cfg.eval.segments())?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainOutcome {
        adam: trainer.optimizer.state.clone(),
        model: trainer.model,
        steps,
        initial,
        last,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.depth = 1;
        cfg.model.embed_dim = 16;
        cfg.data.train_sequences = vec!["a".into()];
        cfg.data.test_sequences = vec!["b".into()];
        cfg.data.frames_per_sequence = 8;
        cfg.train.steps = 3;
        cfg.optim.lr = 1e-3;
        cfg
    }

    #[test]
    fn schedule_covers_every_window_per_epoch() {
        let windows: Vec<Window> = (0..5)
            .map(|s| Window {
                sequence: 0,
                pair: ClipPair::at(s, 3).unwrap(),
            })
            .collect();
        let b = schedule(&windows, 2, 3, 1).unwrap();
        assert_eq!(b.iter().map(|x| x.windows.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
        let mut seen: Vec<usize> = b
            .iter()
            .flat_map(|x| x.windows.iter().map(|w| w.pair.first.start()))
            .collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(b, schedule(&windows, 2, 3, 1).unwrap());
    }

    #[test]
    fn predicted_trajectory_has_sequence_length() {
        let cfg = tiny();
        let model = TsformerVo::<f32>::init(cfg.model.clone(), 0).unwrap();
        let (_, test) = build_datasets(&cfg, &model).unwrap();
        let trainer = Trainer::new(model, &cfg).unwrap();
        let t = trainer.predict_trajectory(&test[0]).unwrap();
        assert_eq!(t.len(), test[0].len());
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = tiny();
        let a = run_toy_training(&cfg, |_| {}).unwrap();
        let b = run_toy_training(&cfg, |_| {}).unwrap();
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.params(), b.params());
        assert_eq!(a.steps.len(), 3);
    }
}
