//! Gradient-check suite used by tests and the `gradcheck` command.
//!
//! Every component compares analytic gradients against central finite
//! differences in `f64` and reports the largest relative error
//! `|a − n| / max(1, |a|, |n|)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_on, relative_error, NodeId, Tape, Tensor};
use crate::error::Result;
use crate::geometry::Pose6DoF;
use crate::io::RunConfig;
use crate::loss::{loss_gradient, total_loss, LossConfig, McReduction, PredictedMotions};
use crate::model::{attention, ModelConfig, TsformerVo};
use crate::rng::{self, Stream};
use crate::training::{build_datasets, Trainer, WindowBatch};

/// Finite-difference step scale; the step for `x` is `STEP · (1 + |x|)`.
pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const LOSS_TOL: f64 = 1e-6;
pub const BLOCK_TOL: f64 = 1e-6;
pub const END_TO_END_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub component: String,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    pub fn line(&self) -> String {
        format!(
            "component={} instances={} max_rel_err={:.3e} tolerance={:.0e} status={}",
            self.component,
            self.instances,
            self.max_rel_err,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random instances of the loss-gradient check.
    pub loss_instances: usize,
    /// Parameter coordinates probed per tensor in the end-to-end check.
    pub coords_per_param: usize,
    /// Use tapes with a deliberately wrong `linear` backward.
    pub corrupt_backward: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            loss_instances: 100,
            coords_per_param: 2,
            corrupt_backward: false,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output coordinate matters.
fn project(tape: &mut Tape<f64>, y: NodeId, w: &Tensor<f64>) -> Result<NodeId> {
    let w = tape.leaf(w.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Primitive = fn(&mut Tape<f64>, NodeId, &[NodeId]) -> Result<NodeId>;

struct PrimitiveCase {
    name: &'static str,
    input: Vec<usize>,
    /// Shapes of extra constant operands.
    extra: Vec<Vec<usize>>,
    range: (f64, f64),
    op: Primitive,
}

fn primitive_cases() -> Vec<PrimitiveCase> {
    let case = |name, input: &[usize], extra: &[&[usize]], range, op| PrimitiveCase {
        name,
        input: input.to_vec(),
        extra: extra.iter().map(|s| s.to_vec()).collect(),
        range,
        op,
    };
    let r = (-1.5, 1.5);
    vec![
        case("matmul", &[3, 4], &[&[4, 2]], r, |t, x, e| t.matmul(x, e[0])),
        case("matmul_rhs", &[4, 2], &[&[3, 4]], r, |t, x, e| t.matmul(e[0], x)),
        case("batch_matmul", &[2, 3, 4], &[&[2, 4, 3]], r, |t, x, e| {
            t.batch_matmul(x, e[0])
        }),
        case("batch_matmul_rhs", &[2, 4, 3], &[&[2, 3, 4]], r, |t, x, e| {
            t.batch_matmul(e[0], x)
        }),
        case("linear_input", &[2, 3, 4], &[&[4, 5], &[5]], r, |t, x, e| {
            t.linear(x, e[0], e[1])
        }),
        case("linear_weight", &[4, 5], &[&[2, 3, 4], &[5]], r, |t, x, e| {
            t.linear(e[0], x, e[1])
        }),
        case("linear_bias", &[5], &[&[2, 3, 4], &[4, 5]], r, |t, x, e| {
            t.linear(e[0], e[1], x)
        }),
        case("add", &[3, 4], &[&[3, 4]], r, |t, x, e| t.add(e[0], x)),
        case("sub", &[3, 4], &[&[3, 4]], r, |t, x, e| t.sub(e[0], x)),
        case("mul", &[3, 4], &[&[3, 4]], r, |t, x, e| t.mul(x, e[0])),
        case("scale", &[3, 4], &[], r, |t, x, _| t.scale(x, -0.7)),
        case("permute", &[2, 3, 4], &[], r, |t, x, _| t.permute(x, &[2, 0, 1])),
        case("reshape", &[2, 6], &[], r, |t, x, _| t.reshape(x, &[3, 4])),
        case("slice", &[3, 6], &[], r, |t, x, _| t.slice(x, 1, 2, 5)),
        case("concat", &[2, 3], &[&[2, 2]], r, |t, x, e| t.concat(&[x, e[0], x], 1)),
        case("sum", &[3, 4], &[], r, |t, x, _| {
            let s = t.sum(x)?;
            t.mul(s, s)
        }),
        case("mean", &[3, 4], &[], r, |t, x, _| {
            let s = t.mean(x)?;
            t.mul(s, s)
        }),
        case("mean_axis", &[3, 4, 2], &[], r, |t, x, _| t.mean_axis(x, 1)),
        case("softmax", &[3, 5], &[], (-3.0, 3.0), |t, x, _| t.softmax(x)),
        case("layer_norm_input", &[3, 6], &[&[6], &[6]], r, |t, x, e| {
            t.layer_norm(x, e[0], e[1], 1e-5)
        }),
        case("layer_norm_gamma", &[6], &[&[3, 6], &[6]], r, |t, x, e| {
            t.layer_norm(e[0], x, e[1], 1e-5)
        }),
        case("layer_norm_beta", &[6], &[&[3, 6], &[6]], r, |t, x, e| {
            t.layer_norm(e[0], e[1], x, 1e-5)
        }),
        case("gelu", &[3, 5], &[], (-3.0, 3.0), |t, x, _| t.gelu(x)),
        case("ln", &[3, 4], &[], (0.3, 3.0), |t, x, _| t.ln(x)),
    ]
}

fn tape_factory(corrupt: bool) -> fn() -> Tape<f64> {
    if corrupt {
        Tape::with_corrupted_backward
    } else {
        Tape::new
    }
}

/// Every tape primitive, each through a random linear projection.
pub fn check_primitives(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut rng = rng::stream(cfg.seed, Stream::Test);
    let make = tape_factory(cfg.corrupt_backward);
    primitive_cases()
        .into_iter()
        .map(|c| {
            let x = uniform(&mut rng, &c.input, c.range.0, c.range.1);
            let extra: Vec<Tensor<f64>> = c.extra.iter().map(|s| uniform(&mut rng, s, -1.5, 1.5)).collect();
            let mut probe = Tape::new();
            let xi = probe.leaf(x.clone());
            let ei: Vec<NodeId> = extra.iter().map(|e| probe.leaf(e.clone())).collect();
            let y = (c.op)(&mut probe, xi, &ei)?;
            let out_shape = probe.shape(y).to_vec();
            let w = uniform(&mut rng, &out_shape, -1.0, 1.0);
            let f = |t: &mut Tape<f64>, x: NodeId| {
                let e: Vec<NodeId> = extra.iter().map(|v| t.leaf(v.clone())).collect();
                let y = (c.op)(t, x, &e)?;
                project(t, y, &w)
            };
            let coords: Vec<usize> = (0..x.numel()).collect();
            Ok(CheckResult {
                component: format!("primitive.{}", c.name),
                instances: 1,
                max_rel_err: grad_check_on(make(), f, &x, STEP, &coords)?,
                tolerance: PRIMITIVE_TOL,
            })
        })
        .collect()
}

/// Scaled dot-product attention with respect to queries, keys and values.
pub fn check_attention(cfg: &SuiteConfig) -> Result<CheckResult> {
    let mut rng = rng::stream(cfg.seed, Stream::Test);
    let make = tape_factory(cfg.corrupt_backward);
    let (b, l, d) = (2, 4, 8);
    let qkv = uniform(&mut rng, &[3, b, l, d], -1.0, 1.0);
    let w = uniform(&mut rng, &[b, l, d], -1.0, 1.0);
    let f = |t: &mut Tape<f64>, x: NodeId| {
        let q = t.slice(x, 0, 0, 1)?;
        let q = t.reshape(q, &[b, l, d])?;
        let k = t.slice(x, 0, 1, 2)?;
        let k = t.reshape(k, &[b, l, d])?;
        let v = t.slice(x, 0, 2, 3)?;
        let v = t.reshape(v, &[b, l, d])?;
        let o = attention(t, q, k, v)?;
        project(t, o, &w)
    };
    let coords: Vec<usize> = (0..qkv.numel()).collect();
    Ok(CheckResult {
        component: "attention".into(),
        instances: 1,
        max_rel_err: grad_check_on(make(), f, &qkv, STEP, &coords)?,
        tolerance: PRIMITIVE_TOL,
    })
}

fn random_motions(rng: &mut ChaCha8Rng, n_motions: usize) -> Result<PredictedMotions> {
    PredictedMotions::new(
        (0..n_motions)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect(),
    )
}

/// Analytic loss gradient against central differences of the total loss, on
/// random batches with random `N_f`, pair layout, alpha and reduction.
pub fn check_loss_gradient(cfg: &SuiteConfig) -> Result<CheckResult> {
    let mut rng = rng::stream(cfg.seed, Stream::Test);
    let mut worst = 0f64;
    for _ in 0..cfg.loss_instances {
        let nf = rng.random_range(2..=5);
        let b = rng.random_range(1..=3);
        let preds = (0..2 * b)
            .map(|_| random_motions(&mut rng, nf - 1))
            .collect::<Result<Vec<_>>>()?;
        let targets = (0..2 * b)
            .map(|_| {
                (0..nf - 1)
                    .map(|_| Pose6DoF::from_array(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
                    .collect()
            })
            .collect::<Result<Vec<Vec<Pose6DoF>>>>()?;
        let pairs: Vec<(usize, usize)> = (0..b).map(|i| (i, b + i)).collect();
        let loss = LossConfig {
            alpha: [0.0, 1.0, 10.0, rng.random_range(0.0..5.0)][rng.random_range(0..4)],
            mc_reduction: if rng.random_bool(0.5) {
                McReduction::Mean
            } else {
                McReduction::Sum
            },
        };
        let analytic = loss_gradient(&preds, &targets, &pairs, &loss)?;
        for c in 0..preds.len() {
            for w in 0..nf - 1 {
                for i in 0..6 {
                    let x = preds[c].row(w)[i];
                    let h = STEP * (1.0 + x.abs());
                    let eval = |v: f64| -> Result<f64> {
                        let mut p = preds.clone();
                        let mut rows = p[c].rows().to_vec();
                        rows[w][i] = v;
                        p[c] = PredictedMotions::new(rows)?;
                        Ok(total_loss(&p, &targets, &pairs, &loss)?.total)
                    };
                    let numeric = (eval(x + h)? - eval(x - h)?) / (2.0 * h);
                    worst = worst.max(relative_error(analytic[c][w][i], numeric));
                }
            }
        }
    }
    Ok(CheckResult {
        component: "loss_gradient".into(),
        instances: cfg.loss_instances,
        max_rel_err: worst,
        tolerance: LOSS_TOL,
    })
}

fn check_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 32,
        patch: 8,
        embed_dim: 8,
        depth: 2,
        heads: 2,
        ..ModelConfig::toy()
    }
}

/// One encoder block with respect to its input tokens.
pub fn check_encoder_block(cfg: &SuiteConfig) -> Result<CheckResult> {
    let mut rng = rng::stream(cfg.seed, Stream::Test);
    let make = tape_factory(cfg.corrupt_backward);
    let mc = check_config();
    let model = TsformerVo::<f64>::init(mc.clone(), cfg.seed)?;
    let shape = [mc.n_frames, mc.num_patches(), mc.embed_dim];
    let z = uniform(&mut rng, &shape, -1.0, 1.0);
    let w = uniform(&mut rng, &shape, -1.0, 1.0);
    let f = |t: &mut Tape<f64>, x: NodeId| {
        let p = model.bind_all(t);
        let y = model.block(t, &p, 0, x, &mut Vec::new())?;
        project(t, y, &w)
    };
    let coords: Vec<usize> = (0..z.numel()).collect();
    Ok(CheckResult {
        component: "encoder_block".into(),
        instances: 1,
        max_rel_err: grad_check_on(make(), f, &z, STEP, &coords)?,
        tolerance: BLOCK_TOL,
    })
}

/// Training-path gradients of the full model (forward tapes seeded with the
/// analytic loss gradient) against central differences of the batch loss,
/// probing random coordinates of every parameter tensor.
pub fn check_end_to_end(cfg: &SuiteConfig) -> Result<CheckResult> {
    let mut rng = rng::stream(cfg.seed, Stream::Test);
    let mut run = RunConfig {
        seed: cfg.seed,
        model: check_config(),
        ..RunConfig::default()
    };
    run.data.train_sequences = vec!["check".into()];
    run.data.test_sequences = Vec::new();
    run.data.frames_per_sequence = 6;
    run.data.render.pixels_per_meter = 8.0;
    run.loss.alpha = 1.0;
    let model = TsformerVo::<f64>::init(run.model.clone(), cfg.seed)?;
    let (data, _) = build_datasets(&run, &model)?;
    let batch = WindowBatch {
        windows: data.windows[..2].to_vec(),
    };
    let mut trainer = Trainer::new(model, &run)?;
    let (_, analytic) = trainer.gradients_on(&data, &batch, tape_factory(cfg.corrupt_backward))?;
    let mut worst = 0f64;
    let mut probes = 0;
    for (p, grad) in analytic.iter().enumerate() {
        for _ in 0..cfg.coords_per_param {
            let i = rng.random_range(0..grad.numel());
            let x = trainer.model.params().get(p).value.data()[i];
            let h = STEP * (1.0 + x.abs());
            let mut loss_at = |v: f64| -> Result<f64> {
                trainer.model.params_mut().get_mut(p).value.data_mut()[i] = v;
                Ok(trainer.batch_loss(&data, &batch)?.total)
            };
            let numeric = (loss_at(x + h)? - loss_at(x - h)?) / (2.0 * h);
            loss_at(x)?;
            worst = worst.max(relative_error(grad.data()[i], numeric));
            probes += 1;
        }
    }
    Ok(CheckResult {
        component: "end_to_end".into(),
        instances: probes,
        max_rel_err: worst,
        tolerance: END_TO_END_TOL,
    })
}

/// Runs every component in a fixed order.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = check_primitives(cfg)?;
    out.push(check_attention(cfg)?);
    out.push(check_loss_gradient(cfg)?);
    out.push(check_encoder_block(cfg)?);
    out.push(check_end_to_end(cfg)?);
    Ok(out)
}
