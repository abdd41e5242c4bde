//! The noise-conditional score network: a permutation-invariant object
//! encoder, a gripper-point tokenizer, a sinusoidal step embedding, and a
//! stack of DiT blocks whose adaptive layer normalization is driven by the
//! summed object and step features. A mean-pool plus linear head decodes the
//! fused tokens into a 6-vector score.
//!
//! Gradients are exact reverse-mode, hand-derived per layer for this fixed
//! architecture and checked against central finite differences.

pub mod layers;
pub mod params;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gripper::{gripper_points, GripperSpec};
use crate::lie::{GraspPose, Twist};
use crate::scenes::ObjectCloud;

use layers::*;
pub use params::{init_params, load_params, save_params, Checkpoint, Params, TrainState};
use params::{GradView, Layout};

/// Feature backbone variant: serial DiT blocks, or the flat
/// concatenation-plus-MLP fallback used by the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Dit,
    Mlp,
}

/// Score decoder head for the token backbone.
///
/// `PointFit` lets every token predict a 3-D displacement for its gripper
/// point; a fixed least-squares solve converts the displacement field into
/// a body twist. `PooledLinear` mean-pools the tokens and decodes with one
/// linear layer. The flat MLP backbone always decodes directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreHead {
    PointFit,
    PooledLinear,
}

/// Architecture hyperparameters. The parameter count is a deterministic
/// function of this struct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Descriptor dimension.
    pub d: usize,
    /// Gripper token count; must match the gripper spec in use.
    pub g: usize,
    /// Number of DiT blocks in series.
    pub depth: usize,
    /// Attention heads.
    pub heads: usize,
    /// Feed-forward hidden expansion.
    pub mlp_ratio: usize,
    /// Per-point encoder widths; the last entry must equal `d`.
    pub pointnet_widths: Vec<usize>,
    pub backbone: Backbone,
    pub head: ScoreHead,
    /// Learned per-token embedding added to the gripper tokens. On by
    /// default: the canonical control points are coplanar, so the bare
    /// point set cannot distinguish a pose from its half-turn about the
    /// approach axis; token identity restores that information.
    pub token_embedding: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            d: 128,
            g: 6,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            pointnet_widths: vec![64, 128, 128],
            backbone: Backbone::Dit,
            head: ScoreHead::PointFit,
            token_embedding: true,
        }
    }
}

impl NetworkConfig {
    /// CPU-minutes scale used by the desk preset.
    pub fn desk() -> Self {
        NetworkConfig {
            d: 64,
            depth: 2,
            pointnet_widths: vec![64, 128, 64],
            ..NetworkConfig::default()
        }
    }

    /// Tiny configuration for gradient checks.
    pub fn tiny() -> Self {
        NetworkConfig {
            d: 16,
            g: 4,
            depth: 1,
            heads: 2,
            mlp_ratio: 4,
            pointnet_widths: vec![16, 16],
            backbone: Backbone::Dit,
            head: ScoreHead::PointFit,
            token_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(Error::InvalidArgument(
                "network width d must be positive and even".into(),
            ));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::InvalidArgument(
                "d must be divisible by the head count".into(),
            ));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if self.g < 2 {
            return Err(Error::InvalidArgument("need at least 2 tokens".into()));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::InvalidArgument("mlp_ratio must be positive".into()));
        }
        if self.pointnet_widths.is_empty() || *self.pointnet_widths.last().unwrap() != self.d {
            return Err(Error::InvalidArgument(
                "pointnet_widths must end at the descriptor dimension".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic layer table; the init order is the listed order.
    pub fn layout(&self) -> Layout {
        let mut layers: Vec<(String, usize, usize, bool, bool)> = Vec::new();
        let mut prev = 3;
        for (i, w) in self.pointnet_widths.iter().enumerate() {
            layers.push((format!("obj_mlp.{i}"), prev, *w, true, false));
            prev = *w;
        }
        layers.push(("grip_mlp.0".into(), 3, self.d, true, false));
        layers.push(("grip_mlp.1".into(), self.d, self.d, true, false));
        if self.token_embedding {
            layers.push(("token_emb".into(), self.g, self.d, false, false));
        }
        layers.push(("step_lin".into(), self.d, self.d, true, false));
        match self.backbone {
            Backbone::Dit => {
                for b in 0..self.depth {
                    layers.push((format!("blocks.{b}.mod"), self.d, 6 * self.d, true, true));
                    for part in ["wq", "wk", "wv", "wo"] {
                        layers.push((format!("blocks.{b}.{part}"), self.d, self.d, true, false));
                    }
                    layers.push((
                        format!("blocks.{b}.ff1"),
                        self.d,
                        self.mlp_ratio * self.d,
                        true,
                        false,
                    ));
                    layers.push((
                        format!("blocks.{b}.ff2"),
                        self.mlp_ratio * self.d,
                        self.d,
                        true,
                        false,
                    ));
                }
            }
            Backbone::Mlp => {
                layers.push((
                    "fuse1".into(),
                    (self.g + 1) * self.d,
                    self.mlp_ratio * self.d,
                    true,
                    false,
                ));
                layers.push((
                    "fuse2".into(),
                    self.mlp_ratio * self.d,
                    self.d,
                    true,
                    false,
                ));
            }
        }
        let decoder_out = match (self.backbone, self.head) {
            (Backbone::Dit, ScoreHead::PointFit) => 3,
            _ => 6,
        };
        layers.push(("decoder".into(), self.d, decoder_out, true, false));
        Layout::new(layers)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total_len()
    }
}

/// One sample of a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchItem {
    /// Index into the distinct-clouds list.
    pub cloud_idx: usize,
    /// Noise level index.
    pub level: usize,
    /// Gripper points in the normalized object frame, shape (g, 3).
    pub tokens: Array2<f64>,
    /// The pose whose gripper points the tokens are; the point-fit head
    /// uses its rotation to express the fitted twist in the body frame.
    pub pose: GraspPose,
}

/// Inputs shared by a batched forward pass. Clouds are deduplicated by the
/// caller; each item refers to one by index.
pub struct BatchInput<'a> {
    pub clouds: Vec<&'a ObjectCloud>,
    /// Canonical gripper control points per distinct cloud, already scaled
    /// into that cloud's normalized frame (used by the point-fit head).
    pub fit_points: Vec<Vec<[f64; 3]>>,
    pub items: Vec<BatchItem>,
    pub level_count: usize,
}

struct PointNetCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    pool: MaxPoolCache,
    feat: Array1<f64>,
}

struct BlockCache {
    m: Array2<f64>,
    ln1: LayerNormCache,
    mod1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn_p: Vec<Array2<f64>>,
    attn_concat: Array2<f64>,
    attn_out: Array2<f64>,
    x_after_attn: Array2<f64>,
    ln2: LayerNormCache,
    mod2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_out: Array2<f64>,
}

struct MlpCache {
    z: Array2<f64>,
    fz1: Array2<f64>,
    fa1: Array2<f64>,
    fz2: Array2<f64>,
}

/// Every intermediate needed for an exact backward pass.
pub struct ForwardCache {
    b: usize,
    g: usize,
    pn: Vec<PointNetCache>,
    cloud_of_item: Vec<usize>,
    poses: Vec<GraspPose>,
    fits: Vec<TwistFit>,
    step_raw: Array2<f64>,
    cond: Array2<f64>,
    silu_c: Array2<f64>,
    x_in: Array2<f64>,
    grip_z0: Array2<f64>,
    grip_a0: Array2<f64>,
    blocks: Vec<BlockCache>,
    mlp: Option<MlpCache>,
    /// Final token features (point-fit head input), shape (b*g, d).
    tokens_final: Array2<f64>,
    /// Head input for the pooled/flat paths, shape (b, d).
    pooled: Array2<f64>,
    out: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.out
    }
}

fn cloud_matrix(cloud: &ObjectCloud) -> Array2<f64> {
    let mut x = Array2::zeros((cloud.points.len(), 3));
    for (i, p) in cloud.points.iter().enumerate() {
        x[[i, 0]] = p[0];
        x[[i, 1]] = p[1];
        x[[i, 2]] = p[2];
    }
    x
}

fn pointnet_fwd(cloud: &ObjectCloud, params: &Params, cfg: &NetworkConfig) -> Result<PointNetCache> {
    if cloud.points.len() < 8 {
        return Err(Error::TooFewPoints {
            got: cloud.points.len(),
            need: 8,
        });
    }
    let input = cloud_matrix(cloud);
    let last = cfg.pointnet_widths.len() - 1;
    let mut pre = Vec::with_capacity(cfg.pointnet_widths.len());
    let mut post = Vec::with_capacity(cfg.pointnet_widths.len());
    let mut x = input.clone();
    for i in 0..cfg.pointnet_widths.len() {
        let z = linear_fwd(&x.view(), params, &format!("obj_mlp.{i}"));
        let a = if i < last { relu_fwd(&z) } else { z.clone() };
        pre.push(z);
        post.push(a.clone());
        x = a;
    }
    let (feat, pool) = max_pool_fwd(&x);
    Ok(PointNetCache {
        input,
        pre,
        post,
        pool,
        feat,
    })
}

fn pointnet_bwd(
    cache: &PointNetCache,
    d_feat: &Array1<f64>,
    params: &Params,
    grads: &mut GradView,
    cfg: &NetworkConfig,
) {
    let last = cfg.pointnet_widths.len() - 1;
    let n = cache.input.nrows();
    let mut d = max_pool_bwd(&cache.pool, n, d_feat);
    for i in (0..cfg.pointnet_widths.len()).rev() {
        if i < last {
            d = relu_bwd(&cache.pre[i], &d);
        }
        let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
        d = linear_bwd(&x.view(), &d.view(), params, grads, &format!("obj_mlp.{i}"));
    }
}

/// Encode an object cloud into a d-vector: shared per-point MLP, then
/// channel-wise max pooling. Permutation-invariant by construction.
pub fn encode_object(
    cloud: &ObjectCloud,
    params: &Params,
    cfg: &NetworkConfig,
) -> Result<Array1<f64>> {
    Ok(pointnet_fwd(cloud, params, cfg)?.feat)
}

/// Encode gripper points (g, 3) into per-point features (g, d). Row order is
/// preserved: it is the token order.
pub fn encode_gripper(xg: &ArrayView2<f64>, params: &Params, _cfg: &NetworkConfig) -> Array2<f64> {
    let z0 = linear_fwd(xg, params, "grip_mlp.0");
    let a0 = relu_fwd(&z0);
    linear_fwd(&a0.view(), params, "grip_mlp.1")
}

/// Sinusoidal embedding of a noise level followed by the learned linear map.
pub fn encode_step(
    k: usize,
    level_count: usize,
    params: &Params,
    cfg: &NetworkConfig,
) -> Result<Array1<f64>> {
    if k >= level_count {
        return Err(Error::InvalidArgument(format!(
            "step index {k} out of range (level count {level_count})"
        )));
    }
    let raw = sinusoidal_embedding(k, cfg.d);
    let raw2 = raw.insert_axis(ndarray::Axis(0));
    let out = linear_fwd(&raw2.view(), params, "step_lin");
    Ok(out.row(0).to_owned())
}

/// Raw sinusoidal embedding before the learned map (exposed for tests).
pub fn raw_step_embedding(k: usize, d: usize) -> Array1<f64> {
    sinusoidal_embedding(k, d)
}

fn modulation_chunks(m: &Array2<f64>, sample: usize, d: usize, chunk: usize) -> Array1<f64> {
    m.slice(s![sample, chunk * d..(chunk + 1) * d]).to_owned()
}

#[allow(clippy::too_many_arguments)]
fn block_fwd(
    tokens: &Array2<f64>,
    silu_c: &Array2<f64>,
    cloudless_rows: usize,
    b: usize,
    params: &Params,
    cfg: &NetworkConfig,
    block: usize,
) -> BlockCache {
    let g = cloudless_rows;
    let d = cfg.d;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let m = linear_fwd(&silu_c.view(), params, &format!("blocks.{block}.mod"));

    let ln1 = layer_norm_fwd(&tokens.view());
    let mut mod1 = ln1.xhat.clone();
    for s_idx in 0..b {
        let shift = modulation_chunks(&m, s_idx, d, 0);
        let sc = modulation_chunks(&m, s_idx, d, 1);
        let mut rows = mod1.slice_mut(s![s_idx * g..(s_idx + 1) * g, ..]);
        for mut row in rows.rows_mut() {
            for c in 0..d {
                row[c] = row[c] * (1.0 + sc[c]) + shift[c];
            }
        }
    }

    let q = linear_fwd(&mod1.view(), params, &format!("blocks.{block}.wq"));
    let k = linear_fwd(&mod1.view(), params, &format!("blocks.{block}.wk"));
    let v = linear_fwd(&mod1.view(), params, &format!("blocks.{block}.wv"));

    let mut attn_p = Vec::with_capacity(b * heads);
    let mut attn_concat = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let r0 = s_idx * g;
        for h in 0..heads {
            let c0 = h * dh;
            let qh = q.slice(s![r0..r0 + g, c0..c0 + dh]);
            let kh = k.slice(s![r0..r0 + g, c0..c0 + dh]);
            let vh = v.slice(s![r0..r0 + g, c0..c0 + dh]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|x| x * scale);
            softmax_rows(&mut scores);
            let oh = scores.dot(&vh);
            attn_concat
                .slice_mut(s![r0..r0 + g, c0..c0 + dh])
                .assign(&oh);
            attn_p.push(scores);
        }
    }
    let attn_out = linear_fwd(&attn_concat.view(), params, &format!("blocks.{block}.wo"));

    let mut x_after_attn = tokens.clone();
    for s_idx in 0..b {
        let gate = modulation_chunks(&m, s_idx, d, 2);
        let mut rows = x_after_attn.slice_mut(s![s_idx * g..(s_idx + 1) * g, ..]);
        let src = attn_out.slice(s![s_idx * g..(s_idx + 1) * g, ..]);
        for (mut row, a_row) in rows.rows_mut().into_iter().zip(src.rows()) {
            for c in 0..d {
                row[c] += gate[c] * a_row[c];
            }
        }
    }

    let ln2 = layer_norm_fwd(&x_after_attn.view());
    let mut mod2 = ln2.xhat.clone();
    for s_idx in 0..b {
        let shift = modulation_chunks(&m, s_idx, d, 3);
        let sc = modulation_chunks(&m, s_idx, d, 4);
        let mut rows = mod2.slice_mut(s![s_idx * g..(s_idx + 1) * g, ..]);
        for mut row in rows.rows_mut() {
            for c in 0..d {
                row[c] = row[c] * (1.0 + sc[c]) + shift[c];
            }
        }
    }

    let ff_pre = linear_fwd(&mod2.view(), params, &format!("blocks.{block}.ff1"));
    let ff_act = gelu_fwd(&ff_pre);
    let ff_out = linear_fwd(&ff_act.view(), params, &format!("blocks.{block}.ff2"));

    BlockCache {
        m,
        ln1,
        mod1,
        q,
        k,
        v,
        attn_p,
        attn_concat,
        attn_out,
        x_after_attn,
        ln2,
        mod2,
        ff_pre,
        ff_act,
        ff_out,
    }
}

fn block_output(cache: &BlockCache, b: usize, g: usize, d: usize) -> Array2<f64> {
    let mut out = cache.x_after_attn.clone();
    for s_idx in 0..b {
        let gate = modulation_chunks(&cache.m, s_idx, d, 5);
        let mut rows = out.slice_mut(s![s_idx * g..(s_idx + 1) * g, ..]);
        let src = cache.ff_out.slice(s![s_idx * g..(s_idx + 1) * g, ..]);
        for (mut row, f_row) in rows.rows_mut().into_iter().zip(src.rows()) {
            for c in 0..d {
                row[c] += gate[c] * f_row[c];
            }
        }
    }
    out
}

/// Run one DiT block on a single sample's tokens.
pub fn dit_block(
    tokens: &ArrayView2<f64>,
    cond: &Array1<f64>,
    params: &Params,
    cfg: &NetworkConfig,
    block: usize,
) -> Array2<f64> {
    let silu_c = silu_fwd(cond).insert_axis(ndarray::Axis(0));
    let cache = block_fwd(&tokens.to_owned(), &silu_c, tokens.nrows(), 1, params, cfg, block);
    block_output(&cache, 1, tokens.nrows(), cfg.d)
}

/// Batched forward pass. Returns the per-sample 6-vector scores along with
/// the cache required for the backward pass.
pub fn forward_batch(
    input: &BatchInput,
    params: &Params,
    cfg: &NetworkConfig,
) -> Result<ForwardCache> {
    cfg.validate()?;
    let b = input.items.len();
    let g = cfg.g;
    let d = cfg.d;
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for item in &input.items {
        if item.tokens.dim() != (g, 3) {
            return Err(Error::ShapeMismatch(format!(
                "gripper tokens must be ({g}, 3), got {:?}",
                item.tokens.dim()
            )));
        }
        if item.level >= input.level_count {
            return Err(Error::InvalidArgument(format!(
                "step index {} out of range (level count {})",
                item.level, input.level_count
            )));
        }
        if item.cloud_idx >= input.clouds.len() {
            return Err(Error::InvalidArgument("cloud index out of range".into()));
        }
    }

    let point_fit = cfg.backbone == Backbone::Dit && cfg.head == ScoreHead::PointFit;
    let mut fits = Vec::new();
    if point_fit {
        if input.fit_points.len() != input.clouds.len() {
            return Err(Error::ShapeMismatch(
                "fit_points must align with the distinct clouds".into(),
            ));
        }
        for pts in &input.fit_points {
            if pts.len() != g {
                return Err(Error::ShapeMismatch(format!(
                    "fit needs {g} canonical points, got {}",
                    pts.len()
                )));
            }
            fits.push(TwistFit::new(pts).ok_or_else(|| {
                Error::InvalidArgument(
                    "gripper control points are collinear; the twist fit is singular".into(),
                )
            })?);
        }
    }

    let mut pn = Vec::with_capacity(input.clouds.len());
    for cloud in &input.clouds {
        pn.push(pointnet_fwd(cloud, params, cfg)?);
    }

    let mut step_raw = Array2::zeros((b, d));
    for (i, item) in input.items.iter().enumerate() {
        step_raw
            .row_mut(i)
            .assign(&sinusoidal_embedding(item.level, d));
    }
    let step_feat = linear_fwd(&step_raw.view(), params, "step_lin");

    let mut cond = step_feat;
    for (i, item) in input.items.iter().enumerate() {
        let feat = &pn[item.cloud_idx].feat;
        let mut row = cond.row_mut(i);
        for c in 0..d {
            row[c] += feat[c];
        }
    }

    let mut silu_c = Array2::zeros((b, d));
    for i in 0..b {
        let srow = silu_fwd(&cond.row(i).to_owned());
        silu_c.row_mut(i).assign(&srow);
    }

    let mut x_in = Array2::zeros((b * g, 3));
    for (i, item) in input.items.iter().enumerate() {
        x_in.slice_mut(s![i * g..(i + 1) * g, ..]).assign(&item.tokens);
    }
    let grip_z0 = linear_fwd(&x_in.view(), params, "grip_mlp.0");
    let grip_a0 = relu_fwd(&grip_z0);
    let mut tokens0 = linear_fwd(&grip_a0.view(), params, "grip_mlp.1");
    if cfg.token_embedding {
        let emb = params.weight("token_emb");
        for i in 0..b {
            let mut rows = tokens0.slice_mut(s![i * g..(i + 1) * g, ..]);
            for (mut row, e_row) in rows.rows_mut().into_iter().zip(emb.rows()) {
                for c in 0..d {
                    row[c] += e_row[c];
                }
            }
        }
    }

    let mut blocks = Vec::new();
    let mut mlp = None;
    let mut tokens_final = Array2::zeros((0, 0));
    let pooled;
    match cfg.backbone {
        Backbone::Dit => {
            let mut x = tokens0.clone();
            for block in 0..cfg.depth {
                let cache = block_fwd(&x, &silu_c, g, b, params, cfg, block);
                x = block_output(&cache, b, g, d);
                blocks.push(cache);
            }
            if point_fit {
                tokens_final = x;
                pooled = Array2::zeros((b, d));
            } else {
                let mut p = Array2::zeros((b, d));
                for i in 0..b {
                    let rows = x.slice(s![i * g..(i + 1) * g, ..]);
                    for c in 0..d {
                        p[[i, c]] = rows.column(c).sum() / g as f64;
                    }
                }
                pooled = p;
            }
        }
        Backbone::Mlp => {
            let mut z = Array2::zeros((b, (g + 1) * d));
            for i in 0..b {
                for t in 0..g {
                    for c in 0..d {
                        z[[i, t * d + c]] = tokens0[[i * g + t, c]];
                    }
                }
                for c in 0..d {
                    z[[i, g * d + c]] = cond[[i, c]];
                }
            }
            let fz1 = linear_fwd(&z.view(), params, "fuse1");
            let fa1 = relu_fwd(&fz1);
            let fz2 = linear_fwd(&fa1.view(), params, "fuse2");
            pooled = relu_fwd(&fz2);
            mlp = Some(MlpCache { z, fz1, fa1, fz2 });
        }
    }

    let poses: Vec<GraspPose> = input.items.iter().map(|i| i.pose).collect();
    let out = if point_fit {
        let delta = linear_fwd(&tokens_final.view(), params, "decoder");
        point_fit_forward(&delta, &poses, &fits, &input.items, g)
    } else {
        linear_fwd(&pooled.view(), params, "decoder")
    };

    Ok(ForwardCache {
        b,
        g,
        pn,
        cloud_of_item: input.items.iter().map(|i| i.cloud_idx).collect(),
        poses,
        fits,
        step_raw,
        cond,
        silu_c,
        x_in,
        grip_z0,
        grip_a0,
        blocks,
        mlp,
        tokens_final,
        pooled,
        out,
    })
}

#[allow(clippy::too_many_arguments)]
fn block_bwd(
    cache: &BlockCache,
    silu_c: &Array2<f64>,
    d_out: &Array2<f64>,
    d_silu_c: &mut Array2<f64>,
    b: usize,
    g: usize,
    params: &Params,
    grads: &mut GradView,
    cfg: &NetworkConfig,
    block: usize,
) -> Array2<f64> {
    let d = cfg.d;
    let heads = cfg.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut d_m: Array2<f64> = Array2::zeros((b, 6 * d));

    // X2 = X1 + gate2 ⊙ ff_out
    let mut d_x1 = d_out.clone();
    let mut d_ff_out = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let gate = modulation_chunks(&cache.m, s_idx, d, 5);
        for t in 0..g {
            let r = s_idx * g + t;
            for c in 0..d {
                d_ff_out[[r, c]] = d_out[[r, c]] * gate[c];
                d_m[[s_idx, 5 * d + c]] += d_out[[r, c]] * cache.ff_out[[r, c]];
            }
        }
    }

    // Feed-forward.
    let d_ff_act = linear_bwd(
        &cache.ff_act.view(),
        &d_ff_out.view(),
        params,
        grads,
        &format!("blocks.{block}.ff2"),
    );
    let d_ff_pre = gelu_bwd(&cache.ff_pre, &d_ff_act);
    let d_mod2 = linear_bwd(
        &cache.mod2.view(),
        &d_ff_pre.view(),
        params,
        grads,
        &format!("blocks.{block}.ff1"),
    );

    // mod2 = xhat2·(1+scale2) + shift2
    let mut d_xhat2 = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let sc = modulation_chunks(&cache.m, s_idx, d, 4);
        for t in 0..g {
            let r = s_idx * g + t;
            for c in 0..d {
                d_xhat2[[r, c]] = d_mod2[[r, c]] * (1.0 + sc[c]);
                d_m[[s_idx, 4 * d + c]] += d_mod2[[r, c]] * cache.ln2.xhat[[r, c]];
                d_m[[s_idx, 3 * d + c]] += d_mod2[[r, c]];
            }
        }
    }
    let d_from_ln2 = layer_norm_bwd(&cache.ln2, &d_xhat2.view());
    d_x1 += &d_from_ln2;

    // X1 = X0 + gate1 ⊙ attn_out
    let mut d_x0 = d_x1.clone();
    let mut d_attn_out = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let gate = modulation_chunks(&cache.m, s_idx, d, 2);
        for t in 0..g {
            let r = s_idx * g + t;
            for c in 0..d {
                d_attn_out[[r, c]] = d_x1[[r, c]] * gate[c];
                d_m[[s_idx, 2 * d + c]] += d_x1[[r, c]] * cache.attn_out[[r, c]];
            }
        }
    }

    // Attention.
    let d_concat = linear_bwd(
        &cache.attn_concat.view(),
        &d_attn_out.view(),
        params,
        grads,
        &format!("blocks.{block}.wo"),
    );
    let mut d_q = Array2::zeros((b * g, d));
    let mut d_k = Array2::zeros((b * g, d));
    let mut d_v = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let r0 = s_idx * g;
        for h in 0..heads {
            let c0 = h * dh;
            let p = &cache.attn_p[s_idx * heads + h];
            let d_oh = d_concat.slice(s![r0..r0 + g, c0..c0 + dh]).to_owned();
            let vh = cache.v.slice(s![r0..r0 + g, c0..c0 + dh]);
            let qh = cache.q.slice(s![r0..r0 + g, c0..c0 + dh]);
            let kh = cache.k.slice(s![r0..r0 + g, c0..c0 + dh]);
            let d_p = d_oh.dot(&vh.t());
            let d_vh = p.t().dot(&d_oh);
            let mut d_s = softmax_rows_bwd(p, &d_p);
            d_s.mapv_inplace(|x| x * scale);
            let d_qh = d_s.dot(&kh);
            let d_kh = d_s.t().dot(&qh);
            d_q.slice_mut(s![r0..r0 + g, c0..c0 + dh]).assign(&d_qh);
            d_k.slice_mut(s![r0..r0 + g, c0..c0 + dh]).assign(&d_kh);
            d_v.slice_mut(s![r0..r0 + g, c0..c0 + dh]).assign(&d_vh);
        }
    }
    let mut d_mod1 = linear_bwd(
        &cache.mod1.view(),
        &d_q.view(),
        params,
        grads,
        &format!("blocks.{block}.wq"),
    );
    d_mod1 += &linear_bwd(
        &cache.mod1.view(),
        &d_k.view(),
        params,
        grads,
        &format!("blocks.{block}.wk"),
    );
    d_mod1 += &linear_bwd(
        &cache.mod1.view(),
        &d_v.view(),
        params,
        grads,
        &format!("blocks.{block}.wv"),
    );

    // mod1 = xhat1·(1+scale1) + shift1
    let mut d_xhat1 = Array2::zeros((b * g, d));
    for s_idx in 0..b {
        let sc = modulation_chunks(&cache.m, s_idx, d, 1);
        for t in 0..g {
            let r = s_idx * g + t;
            for c in 0..d {
                d_xhat1[[r, c]] = d_mod1[[r, c]] * (1.0 + sc[c]);
                d_m[[s_idx, d + c]] += d_mod1[[r, c]] * cache.ln1.xhat[[r, c]];
                d_m[[s_idx, c]] += d_mod1[[r, c]];
            }
        }
    }
    let d_from_ln1 = layer_norm_bwd(&cache.ln1, &d_xhat1.view());
    d_x0 += &d_from_ln1;

    // Modulation table; its input gradient flows back to the condition.
    let d_silu = linear_bwd(
        &silu_c.view(),
        &d_m.view(),
        params,
        grads,
        &format!("blocks.{block}.mod"),
    );
    *d_silu_c += &d_silu;

    d_x0
}

/// Batched backward pass: accumulates parameter gradients (shaped like the
/// flat parameter vector) given the output gradient (b, 6).
pub fn backward_batch(
    cache: &ForwardCache,
    d_out: &ArrayView2<f64>,
    params: &Params,
    cfg: &NetworkConfig,
    grads: &mut [f64],
) {
    let b = cache.b;
    let g = cache.g;
    let d = cfg.d;
    let layout = params.layout();
    let mut gv = GradView::new(grads, layout);

    let d_pooled = linear_bwd(&cache.pooled.view(), d_out, params, &mut gv, "decoder");

    let mut d_cond: Array2<f64>;
    let mut d_tokens: Array2<f64>;
    match cfg.backbone {
        Backbone::Dit => {
            // Mean pooling spreads each sample's gradient over its tokens.
            d_tokens = Array2::zeros((b * g, d));
            for i in 0..b {
                for t in 0..g {
                    for c in 0..d {
                        d_tokens[[i * g + t, c]] = d_pooled[[i, c]] / g as f64;
                    }
                }
            }
            let mut d_silu_c = Array2::zeros((b, d));
            for block in (0..cfg.depth).rev() {
                d_tokens = block_bwd(
                    &cache.blocks[block],
                    &cache.silu_c,
                    &d_tokens,
                    &mut d_silu_c,
                    b,
                    g,
                    params,
                    &mut gv,
                    cfg,
                    block,
                );
            }
            d_cond = Array2::zeros((b, d));
            for i in 0..b {
                let row = silu_bwd(&cache.cond.row(i).to_owned(), &d_silu_c.row(i).to_owned());
                d_cond.row_mut(i).assign(&row);
            }
        }
        Backbone::Mlp => {
            let mlp = cache.mlp.as_ref().expect("mlp cache");
            let d_fz2 = relu_bwd(&mlp.fz2, &d_pooled);
            let d_fa1 = linear_bwd(&mlp.fa1.view(), &d_fz2.view(), params, &mut gv, "fuse2");
            let d_fz1 = relu_bwd(&mlp.fz1, &d_fa1);
            let d_z = linear_bwd(&mlp.z.view(), &d_fz1.view(), params, &mut gv, "fuse1");
            d_tokens = Array2::zeros((b * g, d));
            d_cond = Array2::zeros((b, d));
            for i in 0..b {
                for t in 0..g {
                    for c in 0..d {
                        d_tokens[[i * g + t, c]] = d_z[[i, t * d + c]];
                    }
                }
                for c in 0..d {
                    d_cond[[i, c]] = d_z[[i, g * d + c]];
                }
            }
        }
    }

    if cfg.token_embedding {
        let mut d_emb = gv.weight_mut("token_emb");
        for i in 0..b {
            for t in 0..g {
                for c in 0..d {
                    d_emb[[t, c]] += d_tokens[[i * g + t, c]];
                }
            }
        }
    }

    let d_a0 = linear_bwd(&cache.grip_a0.view(), &d_tokens.view(), params, &mut gv, "grip_mlp.1");
    let d_z0 = relu_bwd(&cache.grip_z0, &d_a0);
    let _ = linear_bwd(&cache.x_in.view(), &d_z0.view(), params, &mut gv, "grip_mlp.0");

    // Condition splits into the step embedding and the object feature.
    let _ = linear_bwd(&cache.step_raw.view(), &d_cond.view(), params, &mut gv, "step_lin");
    let mut d_feats: Vec<Array1<f64>> = cache.pn.iter().map(|p| Array1::zeros(p.feat.len())).collect();
    for (i, cloud_idx) in cache.cloud_of_item.iter().enumerate() {
        for c in 0..d {
            d_feats[*cloud_idx][c] += d_cond[[i, c]];
        }
    }
    for (pn_cache, d_feat) in cache.pn.iter().zip(&d_feats) {
        pointnet_bwd(pn_cache, d_feat, params, &mut gv, cfg);
    }
}

/// Full score-network forward for one pose: tokens from the gripper mapper,
/// condition from the object and step features, fused by the backbone, then
/// decoded to a 6-vector twist.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    h: &GraspPose,
    k: usize,
    level_count: usize,
    cloud: &ObjectCloud,
    gripper: &GripperSpec,
    params: &Params,
    cfg: &NetworkConfig,
) -> Result<Twist> {
    if gripper.point_count() != cfg.g {
        return Err(Error::ShapeMismatch(format!(
            "gripper supplies {} points but the network expects {}",
            gripper.point_count(),
            cfg.g
        )));
    }
    let pts = gripper_points(h, gripper);
    let mut tokens = Array2::zeros((cfg.g, 3));
    for (i, p) in pts.iter().enumerate() {
        tokens[[i, 0]] = p[0];
        tokens[[i, 1]] = p[1];
        tokens[[i, 2]] = p[2];
    }
    let input = BatchInput {
        clouds: vec![cloud],
        items: vec![BatchItem {
            cloud_idx: 0,
            level: k,
            tokens,
        }],
        level_count,
    };
    let cache = forward_batch(&input, params, cfg)?;
    let row = cache.out.row(0);
    let score = Twist::from_array([row[0], row[1], row[2], row[3], row[4], row[5]]);
    if !score.is_finite() {
        return Err(Error::NumericalFailure("non-finite network output".into()));
    }
    Ok(score)
}

/// Inference inputs with precomputed object features (one per distinct
/// cloud), for samplers that hold the cloud fixed across many steps.
pub struct InferInput<'a> {
    pub cloud_feats: &'a [Array1<f64>],
    pub items: Vec<BatchItem>,
    pub level_count: usize,
}

/// Forward pass without gradient caches, reusing precomputed object
/// features. Returns the (b, 6) scores.
pub fn infer_batch(input: &InferInput, params: &Params, cfg: &NetworkConfig) -> Result<Array2<f64>> {
    let b = input.items.len();
    let g = cfg.g;
    let d = cfg.d;
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for item in &input.items {
        if item.tokens.dim() != (g, 3) {
            return Err(Error::ShapeMismatch(format!(
                "gripper tokens must be ({g}, 3), got {:?}",
                item.tokens.dim()
            )));
        }
        if item.level >= input.level_count || item.cloud_idx >= input.cloud_feats.len() {
            return Err(Error::InvalidArgument("item index out of range".into()));
        }
    }

    let mut step_raw = Array2::zeros((b, d));
    for (i, item) in input.items.iter().enumerate() {
        step_raw
            .row_mut(i)
            .assign(&sinusoidal_embedding(item.level, d));
    }
    let mut cond = linear_fwd(&step_raw.view(), params, "step_lin");
    for (i, item) in input.items.iter().enumerate() {
        let feat = &input.cloud_feats[item.cloud_idx];
        let mut row = cond.row_mut(i);
        for c in 0..d {
            row[c] += feat[c];
        }
    }
    let mut silu_c = Array2::zeros((b, d));
    for i in 0..b {
        let srow = silu_fwd(&cond.row(i).to_owned());
        silu_c.row_mut(i).assign(&srow);
    }

    let mut x_in = Array2::zeros((b * g, 3));
    for (i, item) in input.items.iter().enumerate() {
        x_in.slice_mut(s![i * g..(i + 1) * g, ..]).assign(&item.tokens);
    }
    let grip_z0 = linear_fwd(&x_in.view(), params, "grip_mlp.0");
    let grip_a0 = relu_fwd(&grip_z0);
    let mut tokens = linear_fwd(&grip_a0.view(), params, "grip_mlp.1");
    if cfg.token_embedding {
        let emb = params.weight("token_emb");
        for i in 0..b {
            let mut rows = tokens.slice_mut(s![i * g..(i + 1) * g, ..]);
            for (mut row, e_row) in rows.rows_mut().into_iter().zip(emb.rows()) {
                for c in 0..d {
                    row[c] += e_row[c];
                }
            }
        }
    }

    let pooled;
    match cfg.backbone {
        Backbone::Dit => {
            let mut x = tokens;
            for block in 0..cfg.depth {
                let cache = block_fwd(&x, &silu_c, g, b, params, cfg, block);
                x = block_output(&cache, b, g, d);
            }
            let mut p = Array2::zeros((b, d));
            for i in 0..b {
                let rows = x.slice(s![i * g..(i + 1) * g, ..]);
                for c in 0..d {
                    p[[i, c]] = rows.column(c).sum() / g as f64;
                }
            }
            pooled = p;
        }
        Backbone::Mlp => {
            let mut z = Array2::zeros((b, (g + 1) * d));
            for i in 0..b {
                for t in 0..g {
                    for c in 0..d {
                        z[[i, t * d + c]] = tokens[[i * g + t, c]];
                    }
                }
                for c in 0..d {
                    z[[i, g * d + c]] = cond[[i, c]];
                }
            }
            let fa1 = relu_fwd(&linear_fwd(&z.view(), params, "fuse1"));
            pooled = relu_fwd(&linear_fwd(&fa1.view(), params, "fuse2"));
        }
    }
    Ok(linear_fwd(&pooled.view(), params, "decoder"))
}

/// Supervised batch: inputs plus per-sample regression targets and weights.
pub struct LossBatch<'a> {
    pub input: BatchInput<'a>,
    /// Target 6-vectors, shape (b, 6).
    pub targets: Array2<f64>,
    /// Per-sample loss weights.
    pub weights: Vec<f64>,
}

/// Forward plus exact reverse-mode gradients of the weighted squared error
/// `mean_i w_i · ‖out_i − target_i‖²` over the batch.
pub fn forward_with_gradients(
    batch: &LossBatch,
    params: &Params,
    cfg: &NetworkConfig,
) -> Result<(f64, Vec<f64>)> {
    let b = batch.input.items.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch.targets.dim() != (b, 6) || batch.weights.len() != b {
        return Err(Error::ShapeMismatch(
            "targets and weights must match the batch size".into(),
        ));
    }
    let cache = forward_batch(&batch.input, params, cfg)?;
    let mut loss = 0.0;
    let mut d_out = Array2::zeros((b, 6));
    for i in 0..b {
        let mut sample_loss = 0.0;
        for c in 0..6 {
            let r = cache.out[[i, c]] - batch.targets[[i, c]];
            sample_loss += batch.weights[i] * r * r;
            d_out[[i, c]] = 2.0 * batch.weights[i] * r / b as f64;
        }
        if !sample_loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite loss at batch index {i}"
            )));
        }
        loss += sample_loss;
    }
    loss /= b as f64;

    let mut grads = vec![0.0; params.len()];
    backward_batch(&cache, &d_out.view(), params, cfg, &mut grads);
    Ok((loss, grads))
}
