//! Toy-scale divided space-time attention pose regressor.
//!
//! A clip of `N_f` frames `(C, H, W)` is cut into `N = HW / P²` patches per
//! frame, linearly embedded to `E_d` channels, and offset by one learned
//! positional embedding per (time, space) slot. Each encoder block then runs
//!
//! ```text
//! a_t  = MHSA_time(LN(z)) + z          attention across frames, per patch index
//! a_fc = FC(a_t)
//! a_s  = MHSA_space(LN(a_fc)) + a_fc   attention across patches, per frame
//! z'   = MLP(LN(a_s)) + a_s
//! ```
//!
//! After the last block a layer norm, a mean over all tokens, and a linear
//! head produce `6 (N_f − 1)` numbers, reshaped to one 6-DoF row per motion.
//! The temporal FC starts as the identity so that a freshly initialised block
//! with zeroed output projections passes tokens through unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, NodeId, ParamSet, Tape, Tensor};
use crate::error::{invalid, Result};
use crate::loss::PredictedMotions;
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// MLP hidden width as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    pub ln_eps: f64,
    /// Per-channel standardisation applied to `[0, 1]` pixels.
    pub pixel_mean: Vec<f64>,
    pub pixel_std: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// 3 frames of 3×32×64, 16-pixel patches (N = 8), E_d = 32, 2 blocks, 2 heads.
    pub fn toy() -> Self {
        Self {
            n_frames: 3,
            channels: 3,
            height: 32,
            width: 64,
            patch: 16,
            embed_dim: 32,
            depth: 2,
            heads: 2,
            mlp_ratio: 4,
            ln_eps: 1e-5,
            pixel_mean: vec![0.5; 3],
            pixel_std: vec![0.25; 3],
        }
    }

    /// 3 frames of 3×192×640, 16-pixel patches (N = 480), E_d = 384, 12 blocks, 6 heads.
    pub fn paper() -> Self {
        Self {
            height: 192,
            width: 640,
            embed_dim: 384,
            depth: 12,
            heads: 6,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_frames", self.n_frames),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("model.{name} must be positive")));
        }
        if self.n_frames < 2 {
            return Err(invalid("model.n_frames must be ≥ 2"));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(invalid(format!(
                "frame {}×{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.pixel_mean.len() != self.channels || self.pixel_std.len() != self.channels {
            return Err(invalid("pixel_mean and pixel_std need one entry per channel"));
        }
        if self.pixel_std.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("pixel_std entries must be > 0"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(invalid("ln_eps must be > 0"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn n_motions(&self) -> usize {
        self.n_frames - 1
    }

    /// Number of scalar parameters of the model built from this config.
    pub fn parameter_count(&self) -> usize {
        let e = self.embed_dim;
        let hidden = self.mlp_ratio * e;
        let attn = e * 3 * e + 3 * e + e * e + e;
        let block = 2 * e + attn + (e * e + e) + 2 * e + attn + 2 * e + (e * hidden + hidden) + (hidden * e + e);
        let out = 6 * self.n_motions();
        self.patch_dim() * e + e + self.n_frames * self.num_patches() * e + self.depth * block + 2 * e + e * out + out
    }
}

/// `(N_f, C, H, W)` → `(N_f, N, C·P²)`. Patches are numbered row-major over
/// the `(H/P, W/P)` grid; each is flattened in `(c, y, x)` order.
pub fn patchify<T: Element>(frames: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(invalid(format!("patchify expects (N_f, C, H, W), got {s:?}")));
    }
    let (nf, c, h, w) = (s[0], s[1], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(invalid(format!("frame {h}×{w} is not divisible by patch size {patch}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = frames.data();
    let mut out = Vec::with_capacity(src.len());
    for f in 0..nf {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for y in 0..patch {
                        let row = ((f * c + ch) * h + py * patch + y) * w + px * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![nf, gh * gw, c * patch * patch], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Element>(
    patches: &Tensor<T>,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<T>> {
    let s = patches.shape();
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(invalid("frame size not divisible by patch size"));
    }
    let (gh, gw) = (height / patch, width / patch);
    if s.len() != 3 || s[1] != gh * gw || s[2] != channels * patch * patch {
        return Err(invalid(format!(
            "unpatchify: shape {s:?} does not match the frame layout"
        )));
    }
    let nf = s[0];
    let mut out = vec![T::zero(); nf * channels * height * width];
    let mut src = patches.data().chunks_exact(patch);
    for f in 0..nf {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..channels {
                    for y in 0..patch {
                        let row = ((f * channels + ch) * height + py * patch + y) * width + px * patch;
                        out[row..row + patch].copy_from_slice(src.next().expect("sized"));
                    }
                }
            }
        }
    }
    Tensor::new(vec![nf, channels, height, width], out)
}

/// Standardises `[0, 1]` pixels of `(…, C, H, W)` frames per channel.
pub fn normalize_frames<T: Element>(frames: &Tensor<T>, cfg: &ModelConfig) -> Result<Tensor<T>> {
    let s = frames.shape();
    if s.len() < 3 || s[s.len() - 3] != cfg.channels {
        return Err(invalid(format!("frames {s:?} do not have {} channels", cfg.channels)));
    }
    let plane = s[s.len() - 2] * s[s.len() - 1];
    let mut out = frames.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = (i / plane) % cfg.channels;
        *v = (*v - T::of(cfg.pixel_mean[c])) / T::of(cfg.pixel_std[c]);
    }
    Ok(out)
}

/// `Softmax(Q Kᵀ / √d) V` for `(B, L, d)` or `(L, d)` inputs. Returns the output
/// and the attention weights.
pub fn attention_with_weights<T: Element>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
) -> Result<(NodeId, NodeId)> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() != sk.len() || sq.len() != sv.len() || !(2..=3).contains(&sq.len()) {
        return Err(invalid(format!(
            "attention expects matching 2-D or 3-D inputs, got {sq:?}, {sk:?}, {sv:?}"
        )));
    }
    let (q, k, v) = if sq.len() == 2 {
        (
            tape.reshape(q, &[1, sq[0], sq[1]])?,
            tape.reshape(k, &[1, sk[0], sk[1]])?,
            tape.reshape(v, &[1, sv[0], sv[1]])?,
        )
    } else {
        (q, k, v)
    };
    let d = *sq.last().expect("non-empty");
    if sk.last() != Some(&d) {
        return Err(crate::Error::ShapeMismatch {
            op: "attention",
            lhs: sq,
            rhs: sk,
        });
    }
    let kt = tape.permute(k, &[0, 2, 1])?;
    let scores = tape.batch_matmul(q, kt)?;
    let scores = tape.scale(scores, T::of(1.0 / (d as f64).sqrt()))?;
    let weights = tape.softmax(scores)?;
    let out = tape.batch_matmul(weights, v)?;
    let out = if sq.len() == 2 {
        let s = tape.shape(out).to_vec();
        tape.reshape(out, &s[1..])?
    } else {
        out
    };
    Ok((out, weights))
}

pub fn attention<T: Element>(tape: &mut Tape<T>, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    attention_with_weights(tape, q, k, v).map(|(o, _)| o)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Affine {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Mhsa {
    qkv: Affine,
    proj: Affine,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Block {
    temporal_norm: Affine,
    temporal_attn: Mhsa,
    temporal_fc: Affine,
    spatial_norm: Affine,
    spatial_attn: Mhsa,
    mlp_norm: Affine,
    fc1: Affine,
    fc2: Affine,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    patch_embed: Affine,
    pos_embed: usize,
    blocks: Vec<Block>,
    norm: Affine,
    head: Affine,
}

/// Parameters bound onto one tape. Unbound slots panic on use.
pub struct Bound {
    ids: Vec<Option<NodeId>>,
}

impl Bound {
    fn id(&self, i: usize) -> NodeId {
        self.ids[i].expect("parameter bound to this tape")
    }

    /// Tape node of parameter `i` of the model's [`ParamSet`].
    pub fn node(&self, i: usize) -> Option<NodeId> {
        self.ids.get(i).copied().flatten()
    }
}

/// Output of a recorded forward pass.
pub struct Forward {
    /// `(N_f − 1, 6)` predictions.
    pub output: NodeId,
    /// Attention weights of every temporal and spatial MHSA, in block order.
    pub attention_weights: Vec<NodeId>,
}

struct LayoutBuilder<'a, T, R> {
    params: &'a mut ParamSet<T>,
    rng: &'a mut R,
}

impl<T: Element, R: Rng> LayoutBuilder<'_, T, R> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> usize {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of((2.0 * self.rng.random::<f64>() - 1.0) * bound))
            .collect();
        self.params
            .push(name, Tensor::new(shape.to_vec(), data).expect("sized"))
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)) with a zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Affine {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = self.uniform(format!("{name}.weight"), &[fan_in, fan_out], bound);
        let bias = self.params.push(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        Affine { weight, bias }
    }

    fn identity(&mut self, name: &str, dim: usize) -> Affine {
        Affine {
            weight: self.params.push(format!("{name}.weight"), Tensor::eye(dim)),
            bias: self.params.push(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Affine {
        Affine {
            weight: self.params.push(format!("{name}.gamma"), Tensor::ones(&[dim])),
            bias: self.params.push(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    fn mhsa(&mut self, name: &str, e: usize) -> Mhsa {
        Mhsa {
            qkv: self.linear(&format!("{name}.qkv"), e, 3 * e),
            proj: self.linear(&format!("{name}.proj"), e, e),
        }
    }
}

fn build_layout<T: Element, R: Rng>(cfg: &ModelConfig, params: &mut ParamSet<T>, rng: &mut R) -> Layout {
    let e = cfg.embed_dim;
    let mut b = LayoutBuilder { params, rng };
    let patch_embed = b.linear("patch_embed", cfg.patch_dim(), e);
    let tokens = cfg.n_frames * cfg.num_patches();
    let pos_embed = b.uniform(
        "pos_embed".into(),
        &[cfg.n_frames, cfg.num_patches(), e],
        (6.0 / (tokens + e) as f64).sqrt(),
    );
    let blocks = (0..cfg.depth)
        .map(|l| {
            let p = format!("blocks.{l}");
            Block {
                temporal_norm: b.norm(&format!("{p}.temporal_norm"), e),
                temporal_attn: b.mhsa(&format!("{p}.temporal_attn"), e),
                temporal_fc: b.identity(&format!("{p}.temporal_fc"), e),
                spatial_norm: b.norm(&format!("{p}.spatial_norm"), e),
                spatial_attn: b.mhsa(&format!("{p}.spatial_attn"), e),
                mlp_norm: b.norm(&format!("{p}.mlp_norm"), e),
                fc1: b.linear(&format!("{p}.mlp.fc1"), e, cfg.mlp_ratio * e),
                fc2: b.linear(&format!("{p}.mlp.fc2"), cfg.mlp_ratio * e, e),
            }
        })
        .collect();
    let norm = b.norm("norm", e);
    let head = b.linear("head", e, 6 * cfg.n_motions());
    Layout {
        patch_embed,
        pos_embed,
        blocks,
        norm,
        head,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsformerVo<T> {
    cfg: ModelConfig,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Element> TsformerVo<T> {
    /// Seeded initialisation; see [`ModelConfig::parameter_count`] for the size.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut rng = rng::stream(seed, Stream::Init);
        let layout = build_layout(&cfg, &mut params, &mut rng);
        Ok(Self { cfg, params, layout })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, stored: ParamSet<T>) -> Result<Self> {
        let template = Self::init(cfg, 0)?;
        if template.params.len() != stored.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                stored.len()
            )));
        }
        for (a, b) in template.params.iter().zip(stored.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(invalid(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        Ok(Self {
            params: stored,
            ..template
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Element>(&self) -> TsformerVo<U> {
        TsformerVo {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Indices of every attention output projection and MLP output layer.
    pub fn output_projection_indices(&self) -> Vec<usize> {
        self.layout
            .blocks
            .iter()
            .flat_map(|b| {
                [b.temporal_attn.proj, b.spatial_attn.proj, b.fc2]
                    .into_iter()
                    .flat_map(|a| [a.weight, a.bias])
            })
            .collect()
    }

    /// Indices of the head weight and bias.
    pub fn head_indices(&self) -> [usize; 2] {
        [self.layout.head.weight, self.layout.head.bias]
    }

    pub fn bind_all(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            ids: self.params.iter().map(|p| Some(tape.param(p))).collect(),
        }
    }

    fn bind_subset(&self, tape: &mut Tape<T>, indices: &[usize]) -> Bound {
        let mut ids = vec![None; self.params.len()];
        for &i in indices {
            ids[i] = Some(tape.param(self.params.get(i)));
        }
        Bound { ids }
    }

    fn affine_linear(&self, tape: &mut Tape<T>, p: &Bound, a: Affine, x: NodeId) -> Result<NodeId> {
        tape.linear(x, p.id(a.weight), p.id(a.bias))
    }

    fn norm(&self, tape: &mut Tape<T>, p: &Bound, a: Affine, x: NodeId) -> Result<NodeId> {
        tape.layer_norm(x, p.id(a.weight), p.id(a.bias), self.cfg.ln_eps)
    }

    /// Multi-head self-attention over the middle axis of `(G, L, E)`.
    fn mhsa(&self, tape: &mut Tape<T>, p: &Bound, m: Mhsa, x: NodeId, weights: &mut Vec<NodeId>) -> Result<NodeId> {
        let s = tape.shape(x).to_vec();
        let (g, l, e) = (s[0], s[1], s[2]);
        let h = self.cfg.heads;
        let dh = e / h;
        let qkv = self.affine_linear(tape, p, m.qkv, x)?;
        let split = |tape: &mut Tape<T>, i: usize| -> Result<NodeId> {
            let part = tape.slice(qkv, 2, i * e, (i + 1) * e)?;
            let part = tape.reshape(part, &[g, l, h, dh])?;
            let part = tape.permute(part, &[0, 2, 1, 3])?;
            tape.reshape(part, &[g * h, l, dh])
        };
        let q = split(tape, 0)?;
        let k = split(tape, 1)?;
        let v = split(tape, 2)?;
        let (o, w) = attention_with_weights(tape, q, k, v)?;
        weights.push(w);
        let o = tape.reshape(o, &[g, h, l, dh])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[g, l, e])?;
        self.affine_linear(tape, p, m.proj, o)
    }

    /// Linear patch embedding plus positional embedding: `(N_f, N, C·P²)` →
    /// `(N_f, N, E_d)`.
    pub fn embed(&self, tape: &mut Tape<T>, p: &Bound, patches: NodeId) -> Result<NodeId> {
        let expected = [self.cfg.n_frames, self.cfg.num_patches(), self.cfg.patch_dim()];
        if tape.shape(patches) != expected {
            return Err(crate::Error::ShapeMismatch {
                op: "embed",
                lhs: tape.shape(patches).to_vec(),
                rhs: expected.to_vec(),
            });
        }
        let tokens = self.affine_linear(tape, p, self.layout.patch_embed, patches)?;
        tape.add(tokens, p.id(self.layout.pos_embed))
    }

    /// `MHSA(LN(z)) + z` with attention across frames for each patch index.
    pub fn temporal_sublayer(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        block: usize,
        z: NodeId,
        weights: &mut Vec<NodeId>,
    ) -> Result<NodeId> {
        let b = &self.layout.blocks[block];
        let zt = tape.permute(z, &[1, 0, 2])?;
        let ln = self.norm(tape, p, b.temporal_norm, zt)?;
        let attn = self.mhsa(tape, p, b.temporal_attn, ln, weights)?;
        let at = tape.add(attn, zt)?;
        tape.permute(at, &[1, 0, 2])
    }

    /// One divided space-time encoder block on `(N_f, N, E_d)` tokens.
    pub fn block(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        block: usize,
        z: NodeId,
        weights: &mut Vec<NodeId>,
    ) -> Result<NodeId> {
        let b = &self.layout.blocks[block];
        let at = self.temporal_sublayer(tape, p, block, z, weights)?;
        let afc = self.affine_linear(tape, p, b.temporal_fc, at)?;
        let ln = self.norm(tape, p, b.spatial_norm, afc)?;
        let attn = self.mhsa(tape, p, b.spatial_attn, ln, weights)?;
        let a_s = tape.add(attn, afc)?;
        let ln = self.norm(tape, p, b.mlp_norm, a_s)?;
        let hidden = self.affine_linear(tape, p, b.fc1, ln)?;
        let hidden = tape.gelu(hidden)?;
        let mlp = self.affine_linear(tape, p, b.fc2, hidden)?;
        tape.add(mlp, a_s)
    }

    fn head(&self, tape: &mut Tape<T>, p: &Bound, z: NodeId) -> Result<NodeId> {
        let ln = self.norm(tape, p, self.layout.norm, z)?;
        let tokens = self.cfg.n_frames * self.cfg.num_patches();
        let flat = tape.reshape(ln, &[tokens, self.cfg.embed_dim])?;
        let pooled = tape.mean_axis(flat, 0)?;
        let pooled = tape.reshape(pooled, &[1, self.cfg.embed_dim])?;
        let out = self.affine_linear(tape, p, self.layout.head, pooled)?;
        tape.reshape(out, &[self.cfg.n_motions(), 6])
    }

    /// Records the full forward pass from normalised patches.
    pub fn forward_tape(&self, tape: &mut Tape<T>, p: &Bound, patches: NodeId) -> Result<Forward> {
        let mut weights = Vec::new();
        let mut z = self.embed(tape, p, patches)?;
        for l in 0..self.cfg.depth {
            z = self.block(tape, p, l, z, &mut weights)?;
        }
        Ok(Forward {
            output: self.head(tape, p, z)?,
            attention_weights: weights,
        })
    }

    /// Normalises and patchifies raw `[0, 1]` frames `(N_f, C, H, W)`.
    pub fn prepare(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let expected = [self.cfg.n_frames, self.cfg.channels, self.cfg.height, self.cfg.width];
        if frames.shape() != expected {
            return Err(crate::Error::ShapeMismatch {
                op: "forward",
                lhs: frames.shape().to_vec(),
                rhs: expected.to_vec(),
            });
        }
        patchify(&normalize_frames(frames, &self.cfg)?, self.cfg.patch)
    }

    /// Predictions for prepared patches, recorded on a throwaway tape.
    pub fn predict_patches(&self, patches: &Tensor<T>) -> Result<PredictedMotions> {
        let mut tape = Tape::new();
        let p = self.bind_all(&mut tape);
        let x = tape.leaf(patches.clone());
        let out = self.forward_tape(&mut tape, &p, x)?.output;
        to_predictions(tape.value(out))
    }

    pub fn forward(&self, frames: &Tensor<T>) -> Result<PredictedMotions> {
        self.predict_patches(&self.prepare(frames)?)
    }

    /// Forward pass that keeps one block in memory at a time; suited to large
    /// configurations. Returns the `(N_f − 1, 6)` output tensor.
    pub fn infer(&self, frames: &Tensor<T>) -> Result<Tensor<T>> {
        let patches = self.prepare(frames)?;
        let mut weights = Vec::new();
        let mut tape = Tape::new();
        let p = self.bind_subset(
            &mut tape,
            &[
                self.layout.patch_embed.weight,
                self.layout.patch_embed.bias,
                self.layout.pos_embed,
            ],
        );
        let x = tape.leaf(patches);
        let z = self.embed(&mut tape, &p, x)?;
        let mut tokens = tape.value(z).clone();
        for (l, b) in self.layout.blocks.iter().enumerate() {
            let mut tape = Tape::new();
            let mut indices = Vec::new();
            for a in [
                b.temporal_norm,
                b.temporal_attn.qkv,
                b.temporal_attn.proj,
                b.temporal_fc,
                b.spatial_norm,
                b.spatial_attn.qkv,
                b.spatial_attn.proj,
                b.mlp_norm,
                b.fc1,
                b.fc2,
            ] {
                indices.extend([a.weight, a.bias]);
            }
            let p = self.bind_subset(&mut tape, &indices);
            let z = tape.leaf(tokens);
            let out = self.block(&mut tape, &p, l, z, &mut weights)?;
            weights.clear();
            tokens = tape.value(out).clone();
        }
        let mut tape = Tape::new();
        let n = self.layout.norm;
        let h = self.layout.head;
        let p = self.bind_subset(&mut tape, &[n.weight, n.bias, h.weight, h.bias]);
        let z = tape.leaf(tokens);
        let out = self.head(&mut tape, &p, z)?;
        Ok(tape.value(out).clone())
    }
}

/// Converts a `(N_f − 1, 6)` tensor into [`PredictedMotions`].
pub fn to_predictions<T: Element>(t: &Tensor<T>) -> Result<PredictedMotions> {
    if t.ndim() != 2 || t.shape()[1] != 6 {
        return Err(invalid(format!(
            "predictions must be (N_f − 1, 6), got {:?}",
            t.shape()
        )));
    }
    let flat: Vec<f64> = t.data().iter().map(|v| v.as_f64()).collect();
    PredictedMotions::from_flat(&flat)
}
