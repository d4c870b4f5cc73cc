//! A small trainable predictor: a permutation-invariant point-cloud encoder
//! (shared per-point MLP + channel max-pool) with parallel decoder heads for
//! segments, path masks, and confidences, trained by hand-written
//! backpropagation under the point-to-segment curriculum.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::{MetricConfig, Pose, Segment, Vec3};
use crate::losses::{
    assign_segments, build_target_masks, mask_loss_grads, p2s_cd_grad, CurriculumSchedule,
    CurriculumWeights, LossError, MaskBundle, SegmentAssignment,
};
use crate::segments::SegmentSet;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    BadConfig(&'static str),
    ShapeMismatch(&'static str),
    EmptyDataset,
    /// Non-finite loss or activations; reports the epoch that blew up.
    Diverged { epoch: usize },
    Loss(LossError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::BadConfig(w) => write!(f, "invalid model/train config: {w}"),
            TrainError::ShapeMismatch(w) => write!(f, "shape mismatch: {w}"),
            TrainError::EmptyDataset => write!(f, "training needs at least one sample"),
            TrainError::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            TrainError::Loss(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for TrainError {}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

// ---------------------------------------------------------------------------
// Model definition

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_points: usize,
    pub enc_hidden: usize,
    pub feature_dim: usize,
    pub dec_hidden: usize,
    pub lambda: usize,
    /// Segment slots K (at least the largest training segment count).
    pub segment_slots: usize,
    /// Mask slots N (at least the largest training path count).
    pub mask_slots: usize,
}

impl ModelConfig {
    /// The toy default: 256 input points, 3-64-128 encoder, 256-wide
    /// decoders.
    pub fn toy(lambda: usize, segment_slots: usize, mask_slots: usize) -> Self {
        ModelConfig {
            input_points: 256,
            enc_hidden: 64,
            feature_dim: 128,
            dec_hidden: 256,
            lambda,
            segment_slots,
            mask_slots,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fields = [
            self.input_points,
            self.enc_hidden,
            self.feature_dim,
            self.dec_hidden,
            self.segment_slots,
            self.mask_slots,
        ];
        if fields.iter().any(|&v| v == 0) || self.lambda < 1 {
            return Err(TrainError::BadConfig("all model dimensions must be positive"));
        }
        Ok(())
    }

    pub fn seg_output(&self) -> usize {
        6 * self.lambda * self.segment_slots
    }

    pub fn mask_output(&self) -> usize {
        self.segment_slots * self.mask_slots
    }
}

/// One dense layer, `y = W x + b`, weights row-major `[rows x cols]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(rows: usize, cols: usize) -> Linear {
        Linear { rows, cols, weight: vec![0.0; rows * cols], bias: vec![0.0; rows] }
    }

    fn init(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = 1.0 / libm::sqrt(cols as f64);
        let weight = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..rows).map(|_| rng.gen_range(-bound..bound)).collect();
        Linear { rows, cols, weight, bias }
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out[r] = acc;
        }
    }

    /// Accumulates dL/dW += dy (outer) x, dL/db += dy, and returns dL/dx
    /// into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        for v in dx.iter_mut() {
            *v = 0.0;
        }
        for r in 0..self.rows {
            let g = dy[r];
            if g == 0.0 {
                continue;
            }
            grad.bias[r] += g;
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
        }
    }
}

pub const LAYER_NAMES: [&str; 9] =
    ["enc1", "enc2", "seg1", "seg2", "seg3", "mask1", "mask2", "mask3", "conf"];

/// All weights of the model, in the fixed [`LAYER_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Linear>,
}

impl ModelParams {
    pub fn layer_shapes(cfg: &ModelConfig) -> [(usize, usize); 9] {
        [
            (cfg.enc_hidden, 3),
            (cfg.feature_dim, cfg.enc_hidden),
            (cfg.dec_hidden, cfg.feature_dim),
            (cfg.dec_hidden, cfg.dec_hidden),
            (cfg.seg_output(), cfg.dec_hidden),
            (cfg.dec_hidden, cfg.feature_dim),
            (cfg.dec_hidden, cfg.dec_hidden),
            (cfg.mask_output(), cfg.dec_hidden),
            (cfg.mask_slots, cfg.feature_dim),
        ]
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers =
            Self::layer_shapes(cfg).iter().map(|&(r, c)| Linear::init(r, c, &mut rng)).collect();
        ModelParams { layers }
    }

    pub fn zeros(cfg: &ModelConfig) -> ModelParams {
        let layers = Self::layer_shapes(cfg).iter().map(|&(r, c)| Linear::zeros(r, c)).collect();
        ModelParams { layers }
    }

    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let shapes = Self::layer_shapes(cfg);
        self.layers.len() == shapes.len()
            && self.layers.iter().zip(shapes).all(|(l, (r, c))| l.rows == r && l.cols == c)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in &mut l.weight {
                *v *= s;
            }
            for v in &mut l.bias {
                *v *= s;
            }
        }
    }

    /// Flattened view for generic parameter walks (checkpointing, finite
    /// differences).
    pub fn for_each_value_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            for v in &mut l.weight {
                f(v);
            }
            for v in &mut l.bias {
                f(v);
            }
        }
    }

    pub fn value_at(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weight.len() {
                return l.weight[idx];
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn nudge(&mut self, mut idx: usize, delta: f64) {
        for l in &mut self.layers {
            if idx < l.weight.len() {
                l.weight[idx] += delta;
                return;
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                l.bias[idx] += delta;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

// ---------------------------------------------------------------------------
// Forward pass

const ENC1: usize = 0;
const ENC2: usize = 1;
const SEG1: usize = 2;
const SEG2: usize = 3;
const SEG3: usize = 4;
const MASK1: usize = 5;
const MASK2: usize = 6;
const MASK3: usize = 7;
const CONF: usize = 8;

struct Cache {
    points: Vec<Vec3>,
    h1_pre: Vec<f64>,  // [points x enc_hidden]
    h2_pre: Vec<f64>,  // [points x feature_dim]
    argmax: Vec<usize>,
    g: Vec<f64>,
    seg_a1_pre: Vec<f64>,
    seg_a2_pre: Vec<f64>,
    seg_raw: Vec<f64>,
    orient_norms: Vec<f64>,
    mask_a1_pre: Vec<f64>,
    mask_a2_pre: Vec<f64>,
    mask_logits: Vec<f64>,
    conf_logits: Vec<f64>,
}

pub struct ForwardPass {
    pub segments: SegmentSet,
    pub bundle: MaskBundle,
    cache: Cache,
}

const ORIENT_NORM_FLOOR: f64 = 1e-8;

fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Deterministic forward pass. Segment orientations are renormalized to
/// unit length; masks and confidences pass through a sigmoid.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    cloud: &[Vec3],
) -> Result<ForwardPass, TrainError> {
    cfg.validate()?;
    if !params.matches(cfg) {
        return Err(TrainError::ShapeMismatch("parameters do not fit the model config"));
    }
    if cloud.len() != cfg.input_points {
        return Err(TrainError::ShapeMismatch("cloud size differs from the configured input"));
    }
    let np = cloud.len();
    let eh = cfg.enc_hidden;
    let fd = cfg.feature_dim;

    let mut h1_pre = vec![0.0f64; np * eh];
    let mut h2_pre = vec![0.0f64; np * fd];
    let mut g = vec![f64::NEG_INFINITY; fd];
    let mut argmax = vec![0usize; fd];
    let mut h1_buf = vec![0.0f64; eh];
    for (pi, p) in cloud.iter().enumerate() {
        let x = [p.x, p.y, p.z];
        params.layers[ENC1].forward(&x, &mut h1_pre[pi * eh..(pi + 1) * eh]);
        h1_buf.copy_from_slice(&h1_pre[pi * eh..(pi + 1) * eh]);
        relu_in_place(&mut h1_buf);
        params.layers[ENC2].forward(&h1_buf, &mut h2_pre[pi * fd..(pi + 1) * fd]);
        for c in 0..fd {
            let v = h2_pre[pi * fd + c].max(0.0);
            if v > g[c] {
                g[c] = v;
                argmax[c] = pi;
            }
        }
    }

    let run_head = |l1: usize, l2: usize, l3: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut a1 = vec![0.0f64; params.layers[l1].rows];
        params.layers[l1].forward(&g, &mut a1);
        let mut a1_post = a1.clone();
        relu_in_place(&mut a1_post);
        let mut a2 = vec![0.0f64; params.layers[l2].rows];
        params.layers[l2].forward(&a1_post, &mut a2);
        let mut a2_post = a2.clone();
        relu_in_place(&mut a2_post);
        let mut out = vec![0.0f64; params.layers[l3].rows];
        params.layers[l3].forward(&a2_post, &mut out);
        (a1, a2, out)
    };

    let (seg_a1_pre, seg_a2_pre, seg_raw) = run_head(SEG1, SEG2, SEG3);
    let (mask_a1_pre, mask_a2_pre, mask_logits) = run_head(MASK1, MASK2, MASK3);
    let mut conf_logits = vec![0.0f64; cfg.mask_slots];
    params.layers[CONF].forward(&g, &mut conf_logits);

    if seg_raw.iter().any(|v| !v.is_finite())
        || mask_logits.iter().any(|v| !v.is_finite())
        || conf_logits.iter().any(|v| !v.is_finite())
    {
        return Err(TrainError::Diverged { epoch: 0 });
    }

    // reshape segments, renormalizing orientations
    let lambda = cfg.lambda;
    let mut segs = Vec::with_capacity(cfg.segment_slots);
    let mut orient_norms = Vec::with_capacity(cfg.segment_slots * lambda);
    for k in 0..cfg.segment_slots {
        let mut poses = Vec::with_capacity(lambda);
        for t in 0..lambda {
            let base = (k * lambda + t) * 6;
            let position = Vec3::new(seg_raw[base], seg_raw[base + 1], seg_raw[base + 2]);
            let v = Vec3::new(seg_raw[base + 3], seg_raw[base + 4], seg_raw[base + 5]);
            let norm = v.norm().max(ORIENT_NORM_FLOOR);
            orient_norms.push(norm);
            poses.push(Pose { position, orientation: v * (1.0 / norm) });
        }
        segs.push(Segment::new(poses, lambda).map_err(|_| TrainError::ShapeMismatch("segment"))?);
    }
    let segments = SegmentSet::from_segments(segs, lambda)
        .map_err(|_| TrainError::ShapeMismatch("segment set"))?;

    let probs: Vec<Vec<f64>> = (0..cfg.mask_slots)
        .map(|i| (0..cfg.segment_slots).map(|j| sigmoid(mask_logits[i * cfg.segment_slots + j])).collect())
        .collect();
    let confidences: Vec<f64> = conf_logits.iter().map(|&z| sigmoid(z)).collect();
    let bundle = MaskBundle::new(probs, confidences)
        .map_err(|_| TrainError::ShapeMismatch("mask bundle"))?;

    Ok(ForwardPass {
        segments,
        bundle,
        cache: Cache {
            points: cloud.to_vec(),
            h1_pre,
            h2_pre,
            argmax,
            g,
            seg_a1_pre,
            seg_a2_pre,
            seg_raw,
            orient_norms,
            mask_a1_pre,
            mask_a2_pre,
            mask_logits,
            conf_logits,
        },
    })
}

// ---------------------------------------------------------------------------
// Backward pass

fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    pass: &ForwardPass,
    d_pose: &[[f64; 6]],
    d_prob: Option<&[Vec<f64>]>,
    d_conf: Option<&[f64]>,
    grads: &mut ModelParams,
) {
    let cache = &pass.cache;
    let lambda = cfg.lambda;
    let fd = cfg.feature_dim;
    let mut d_g = vec![0.0f64; fd];

    // segment head: chain pose gradients through the orientation
    // renormalization back to the raw outputs
    let mut d_raw = vec![0.0f64; cache.seg_raw.len()];
    for k in 0..cfg.segment_slots {
        for t in 0..lambda {
            let pi = k * lambda + t;
            let base = pi * 6;
            d_raw[base] = d_pose[pi][0];
            d_raw[base + 1] = d_pose[pi][1];
            d_raw[base + 2] = d_pose[pi][2];
            let norm = cache.orient_norms[pi];
            let v = Vec3::new(cache.seg_raw[base + 3], cache.seg_raw[base + 4], cache.seg_raw[base + 5]);
            let du = Vec3::new(d_pose[pi][3], d_pose[pi][4], d_pose[pi][5]);
            let dv = if v.norm() <= ORIENT_NORM_FLOOR {
                // below the floor the map is linear: u = v / floor
                du * (1.0 / norm)
            } else {
                let u = v * (1.0 / norm);
                (du - u * du.dot(u)) * (1.0 / norm)
            };
            d_raw[base + 3] = dv.x;
            d_raw[base + 4] = dv.y;
            d_raw[base + 5] = dv.z;
        }
    }
    backward_head(params, grads, SEG1, SEG2, SEG3, &cache.g, &cache.seg_a1_pre, &cache.seg_a2_pre, &d_raw, &mut d_g);

    // mask head
    if let Some(d_prob) = d_prob {
        let mut d_logits = vec![0.0f64; cache.mask_logits.len()];
        for i in 0..cfg.mask_slots {
            for j in 0..cfg.segment_slots {
                let p = sigmoid(cache.mask_logits[i * cfg.segment_slots + j]);
                d_logits[i * cfg.segment_slots + j] = d_prob[i][j] * p * (1.0 - p);
            }
        }
        backward_head(params, grads, MASK1, MASK2, MASK3, &cache.g, &cache.mask_a1_pre, &cache.mask_a2_pre, &d_logits, &mut d_g);
    }

    // confidence head
    if let Some(d_conf) = d_conf {
        let mut d_logits = vec![0.0f64; cache.conf_logits.len()];
        for (i, dz) in d_logits.iter_mut().enumerate() {
            let c = sigmoid(cache.conf_logits[i]);
            *dz = d_conf[i] * c * (1.0 - c);
        }
        let mut dg_head = vec![0.0f64; fd];
        params.layers[CONF].backward(&cache.g, &d_logits, &mut grads.layers[CONF], &mut dg_head);
        for (a, b) in d_g.iter_mut().zip(&dg_head) {
            *a += *b;
        }
    }

    // encoder: route the pooled-feature gradient to each channel's argmax
    // point, then through the shared per-point MLP
    let np = cache.points.len();
    let eh = cfg.enc_hidden;
    let mut d_h2_post = vec![0.0f64; np * fd];
    for c in 0..fd {
        if d_g[c] != 0.0 {
            d_h2_post[cache.argmax[c] * fd + c] = d_g[c];
        }
    }
    let mut h1_post = vec![0.0f64; eh];
    let mut d_h2 = vec![0.0f64; fd];
    let mut d_h1_post = vec![0.0f64; eh];
    let mut d_h1 = vec![0.0f64; eh];
    let mut dx3 = vec![0.0f64; 3];
    for pi in 0..np {
        let row = &d_h2_post[pi * fd..(pi + 1) * fd];
        if row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for c in 0..fd {
            let pre = cache.h2_pre[pi * fd + c];
            d_h2[c] = if pre > 0.0 { row[c] } else { 0.0 };
        }
        for c in 0..eh {
            h1_post[c] = cache.h1_pre[pi * eh + c].max(0.0);
        }
        params.layers[ENC2].backward(&h1_post, &d_h2, &mut grads.layers[ENC2], &mut d_h1_post);
        for c in 0..eh {
            let pre = cache.h1_pre[pi * eh + c];
            d_h1[c] = if pre > 0.0 { d_h1_post[c] } else { 0.0 };
        }
        let p = cache.points[pi];
        params.layers[ENC1].backward(&[p.x, p.y, p.z], &d_h1, &mut grads.layers[ENC1], &mut dx3);
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_head(
    params: &ModelParams,
    grads: &mut ModelParams,
    l1: usize,
    l2: usize,
    l3: usize,
    g: &[f64],
    a1_pre: &[f64],
    a2_pre: &[f64],
    d_out: &[f64],
    d_g: &mut [f64],
) {
    let a2_post: Vec<f64> = a2_pre.iter().map(|&v| v.max(0.0)).collect();
    let a1_post: Vec<f64> = a1_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut d_a2_post = vec![0.0f64; a2_pre.len()];
    params.layers[l3].backward(&a2_post, d_out, &mut grads.layers[l3], &mut d_a2_post);
    let d_a2: Vec<f64> = d_a2_post
        .iter()
        .zip(a2_pre)
        .map(|(&d, &pre)| if pre > 0.0 { d } else { 0.0 })
        .collect();
    let mut d_a1_post = vec![0.0f64; a1_pre.len()];
    params.layers[l2].backward(&a1_post, &d_a2, &mut grads.layers[l2], &mut d_a1_post);
    let d_a1: Vec<f64> = d_a1_post
        .iter()
        .zip(a1_pre)
        .map(|(&d, &pre)| if pre > 0.0 { d } else { 0.0 })
        .collect();
    let mut dg_head = vec![0.0f64; g.len()];
    params.layers[l1].backward(g, &d_a1, &mut grads.layers[l1], &mut dg_head);
    for (a, b) in d_g.iter_mut().zip(&dg_head) {
        *a += *b;
    }
}

// ---------------------------------------------------------------------------
// Loss + gradients for one sample

/// One training example: a fixed-size point cloud with its labeled
/// ground-truth segments.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub cloud: Vec<Vec3>,
    pub gt_segments: SegmentSet,
    pub n_paths: usize,
}

#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub p2s: f64,
    pub mask: f64,
}

/// Full loss and parameter gradients for one sample at the given curriculum
/// weights. Nearest-neighbour assignments and the mask matching are frozen
/// within the step.
pub fn loss_and_grads(
    cfg: &ModelConfig,
    params: &ModelParams,
    sample: &TrainSample,
    weights: &CurriculumWeights,
    mask_active: bool,
    metric: &MetricConfig,
    grads: &mut ModelParams,
) -> Result<SampleLoss, TrainError> {
    let pass = forward(cfg, params, &sample.cloud)?;
    let (p2s, d_pose) = p2s_cd_grad(&pass.segments, &sample.gt_segments, weights, metric)?;

    let mut mask_value = 0.0;
    let mut d_prob = None;
    let mut d_conf = None;
    if mask_active {
        let targets =
            build_target_masks(&pass.segments, &sample.gt_segments, cfg.mask_slots, metric)?;
        let (result, dp, dc) = mask_loss_grads(&pass.bundle, &targets)?;
        mask_value = result.loss;
        d_prob = Some(dp);
        d_conf = Some(dc);
    }
    if !p2s.is_finite() || !mask_value.is_finite() {
        return Err(TrainError::Diverged { epoch: 0 });
    }
    backward(
        cfg,
        params,
        &pass,
        &d_pose,
        d_prob.as_deref(),
        d_conf.as_deref(),
        grads,
    );
    Ok(SampleLoss { p2s, mask: mask_value })
}

/// Evaluates the sample loss without touching gradients.
pub fn sample_loss(
    cfg: &ModelConfig,
    params: &ModelParams,
    sample: &TrainSample,
    weights: &CurriculumWeights,
    mask_active: bool,
    metric: &MetricConfig,
) -> Result<SampleLoss, TrainError> {
    let pass = forward(cfg, params, &sample.cloud)?;
    let p2s = crate::losses::p2s_cd(&pass.segments, &sample.gt_segments, weights, metric)?;
    let mut mask_value = 0.0;
    if mask_active {
        let targets =
            build_target_masks(&pass.segments, &sample.gt_segments, cfg.mask_slots, metric)?;
        mask_value = crate::losses::mask_loss(&pass.bundle, &targets)?.loss;
    }
    Ok(SampleLoss { p2s, mask: mask_value })
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epoch from which the mask loss joins the objective.
    pub mask_activation: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Learning rate 1e-3, Adam (0.9, 0.999, 1e-8), mask loss from 2/3 of
    /// the budget, five halvings at sixths of the budget.
    pub fn standard(total_epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            total_epochs,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mask_activation: (2 * total_epochs).div_ceil(3),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_epochs == 0 {
            return Err(TrainError::BadConfig("at least one epoch"));
        }
        if self.mask_activation >= self.total_epochs {
            return Err(TrainError::BadConfig("mask activation must precede the end"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning rate must be positive"));
        }
        Ok(())
    }

    /// Halved at every sixth of the budget, five times in total.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let interval = (self.total_epochs / 6).max(1);
        let halvings = (epoch / interval).min(5) as i32;
        self.learning_rate * libm::pow(0.5, halvings as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam_m: ModelParams,
    pub adam_v: ModelParams,
    pub adam_t: u64,
    pub next_epoch: usize,
}

impl TrainState {
    pub fn init(cfg: &ModelConfig, seed: u64) -> TrainState {
        TrainState {
            params: ModelParams::init(cfg, seed),
            adam_m: ModelParams::zeros(cfg),
            adam_v: ModelParams::zeros(cfg),
            adam_t: 0,
            next_epoch: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_p2s: f64,
    pub loss_mask: f64,
    pub lr: f64,
    pub weights: CurriculumWeights,
}

pub trait TrainObserver {
    fn on_epoch(&mut self, _record: &EpochRecord) {}
    /// Called at curriculum milestones, mask activation, and the end.
    fn on_checkpoint(&mut self, _state: &TrainState) {}
}

pub struct NullObserver;

impl TrainObserver for NullObserver {}

/// Mean losses and gradients of one full-batch epoch.
pub struct EpochOutput {
    pub mean_p2s: f64,
    pub mean_mask: f64,
    pub mean_grads: ModelParams,
}

/// Sample grads are summed inside fixed chunks of this size, and the chunk
/// sums are folded in chunk order. Serial and parallel runners share the
/// convention, so results are bit-identical for any worker count.
pub const GRAD_CHUNK: usize = 8;

/// Sums losses and gradients over one chunk of samples, in order.
pub fn accumulate_chunk(
    cfg: &ModelConfig,
    params: &ModelParams,
    chunk: &[TrainSample],
    weights: &CurriculumWeights,
    mask_active: bool,
    metric: &MetricConfig,
) -> Result<(f64, f64, ModelParams), TrainError> {
    let mut grads = ModelParams::zeros(cfg);
    let mut p2s = 0.0;
    let mut mask = 0.0;
    for sample in chunk {
        let l = loss_and_grads(cfg, params, sample, weights, mask_active, metric, &mut grads)?;
        p2s += l.p2s;
        mask += l.mask;
    }
    Ok((p2s, mask, grads))
}

/// Folds per-chunk outputs (in chunk order) into epoch means.
pub fn fold_chunks(
    cfg: &ModelConfig,
    n_samples: usize,
    chunks: Vec<(f64, f64, ModelParams)>,
) -> EpochOutput {
    let mut grads = ModelParams::zeros(cfg);
    let mut p2s = 0.0;
    let mut mask = 0.0;
    for (cp, cm, cg) in chunks {
        p2s += cp;
        mask += cm;
        grads.add_assign(&cg);
    }
    let inv = 1.0 / n_samples as f64;
    grads.scale(inv);
    EpochOutput { mean_p2s: p2s * inv, mean_mask: mask * inv, mean_grads: grads }
}

/// Computes one epoch's mean loss and gradients over the dataset; the
/// serial runner lives here, a thread-pool runner can substitute as long as
/// it follows the same chunk convention.
pub trait EpochRunner {
    fn run(
        &mut self,
        cfg: &ModelConfig,
        params: &ModelParams,
        samples: &[TrainSample],
        weights: &CurriculumWeights,
        mask_active: bool,
        metric: &MetricConfig,
    ) -> Result<EpochOutput, TrainError>;
}

pub struct SerialRunner;

impl EpochRunner for SerialRunner {
    fn run(
        &mut self,
        cfg: &ModelConfig,
        params: &ModelParams,
        samples: &[TrainSample],
        weights: &CurriculumWeights,
        mask_active: bool,
        metric: &MetricConfig,
    ) -> Result<EpochOutput, TrainError> {
        let mut chunks = Vec::new();
        for chunk in samples.chunks(GRAD_CHUNK) {
            chunks.push(accumulate_chunk(cfg, params, chunk, weights, mask_active, metric)?);
        }
        Ok(fold_chunks(cfg, samples.len(), chunks))
    }
}

fn validate_dataset(cfg: &ModelConfig, samples: &[TrainSample]) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for s in samples {
        if s.cloud.len() != cfg.input_points {
            return Err(TrainError::ShapeMismatch("sample cloud size"));
        }
        if s.gt_segments.lambda() != cfg.lambda {
            return Err(TrainError::ShapeMismatch("sample lambda"));
        }
        if s.gt_segments.len() > cfg.segment_slots {
            return Err(TrainError::ShapeMismatch("more ground-truth segments than slots"));
        }
        if s.n_paths > cfg.mask_slots {
            return Err(TrainError::ShapeMismatch("more paths than mask slots"));
        }
        if s.gt_segments.path_ids().is_none() {
            return Err(TrainError::ShapeMismatch("training segments need path labels"));
        }
    }
    Ok(())
}

/// Full-batch Adam training from an initial or resumed state. Deterministic
/// given the seed and dataset order.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    schedule: &CurriculumSchedule,
    samples: &[TrainSample],
    mut state: TrainState,
    metric: &MetricConfig,
    runner: &mut dyn EpochRunner,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainState, Vec<EpochRecord>), TrainError> {
    cfg.validate()?;
    tcfg.validate()?;
    if schedule.total_epochs != tcfg.total_epochs {
        return Err(TrainError::BadConfig("schedule and train budgets differ"));
    }
    validate_dataset(cfg, samples)?;
    if !state.params.matches(cfg) {
        return Err(TrainError::ShapeMismatch("resumed parameters do not fit the config"));
    }

    let mut records = Vec::with_capacity(tcfg.total_epochs - state.next_epoch);
    let checkpoints = [schedule.milestones[0], schedule.milestones[1], tcfg.mask_activation];
    for epoch in state.next_epoch..tcfg.total_epochs {
        let weights = schedule.weights_at(epoch)?;
        let mask_active = epoch >= tcfg.mask_activation;
        let out = runner
            .run(cfg, &state.params, samples, &weights, mask_active, metric)
            .map_err(|e| match e {
                TrainError::Diverged { .. } => TrainError::Diverged { epoch },
                other => other,
            })?;
        if !out.mean_p2s.is_finite() || !out.mean_mask.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let lr = tcfg.lr_at(epoch);
        adam_step(&mut state, &out.mean_grads, tcfg, lr);
        if !state.params.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        state.next_epoch = epoch + 1;
        let record = EpochRecord {
            epoch,
            loss_p2s: out.mean_p2s,
            loss_mask: out.mean_mask,
            lr,
            weights,
        };
        observer.on_epoch(&record);
        records.push(record);
        if checkpoints.contains(&state.next_epoch) || state.next_epoch == tcfg.total_epochs {
            observer.on_checkpoint(&state);
        }
    }
    Ok((state, records))
}

/// Fresh training run; see [`train_from`].
pub fn train(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    schedule: &CurriculumSchedule,
    samples: &[TrainSample],
    metric: &MetricConfig,
    runner: &mut dyn EpochRunner,
    observer: &mut dyn TrainObserver,
) -> Result<(TrainState, Vec<EpochRecord>), TrainError> {
    let state = TrainState::init(cfg, tcfg.seed);
    train_from(cfg, tcfg, schedule, samples, state, metric, runner, observer)
}

fn adam_step(state: &mut TrainState, grads: &ModelParams, tcfg: &TrainConfig, lr: f64) {
    state.adam_t += 1;
    let t = state.adam_t as f64;
    let bc1 = 1.0 - libm::pow(tcfg.beta1, t);
    let bc2 = 1.0 - libm::pow(tcfg.beta2, t);
    for li in 0..state.params.layers.len() {
        let g = &grads.layers[li];
        let m = &mut state.adam_m.layers[li];
        let v = &mut state.adam_v.layers[li];
        let p = &mut state.params.layers[li];
        for i in 0..g.weight.len() {
            m.weight[i] = tcfg.beta1 * m.weight[i] + (1.0 - tcfg.beta1) * g.weight[i];
            v.weight[i] = tcfg.beta2 * v.weight[i] + (1.0 - tcfg.beta2) * g.weight[i] * g.weight[i];
            let mh = m.weight[i] / bc1;
            let vh = v.weight[i] / bc2;
            p.weight[i] -= lr * mh / (libm::sqrt(vh) + tcfg.epsilon);
        }
        for i in 0..g.bias.len() {
            m.bias[i] = tcfg.beta1 * m.bias[i] + (1.0 - tcfg.beta1) * g.bias[i];
            v.bias[i] = tcfg.beta2 * v.bias[i] + (1.0 - tcfg.beta2) * g.bias[i] * g.bias[i];
            let mh = m.bias[i] / bc1;
            let vh = v.bias[i] / bc2;
            p.bias[i] -= lr * mh / (libm::sqrt(vh) + tcfg.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Inference

#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub segments: SegmentSet,
    pub bundle: MaskBundle,
    /// `None` when no mask clears the confidence threshold.
    pub assignment: Option<SegmentAssignment>,
}

impl InferenceResult {
    pub fn n_paths(&self) -> usize {
        self.assignment.as_ref().map_or(0, |a| a.n_paths)
    }
}

/// Forward pass plus confidence-gated segment-to-mask assignment.
pub fn infer(
    cfg: &ModelConfig,
    params: &ModelParams,
    cloud: &[Vec3],
    confidence_threshold: f64,
) -> Result<InferenceResult, TrainError> {
    let pass = forward(cfg, params, cloud)?;
    let assignment = assign_segments(&pass.bundle, confidence_threshold);
    Ok(InferenceResult { segments: pass.segments, bundle: pass.bundle, assignment })
}

/// Deterministically fits a cloud to exactly `n` points: farthest-point
/// subsampling when too large, cyclic repetition when too small.
pub fn fit_cloud(cloud: &[Vec3], n: usize) -> Vec<Vec3> {
    assert!(n > 0 && !cloud.is_empty());
    if cloud.len() == n {
        return cloud.to_vec();
    }
    if cloud.len() < n {
        return (0..n).map(|i| cloud[i % cloud.len()]).collect();
    }
    let mut selected = Vec::with_capacity(n);
    let mut min_d2: Vec<f64> = cloud.iter().map(|p| (*p - cloud[0]).norm_sq()).collect();
    selected.push(cloud[0]);
    while selected.len() < n {
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(cloud[best]);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = (cloud[i] - cloud[best]).norm_sq();
            if nd < *d {
                *d = nd;
            }
        }
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{downsample_path, generate_cuboid, CuboidSpec, GenParams};
    use crate::segments::extract_segments;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            input_points: 3,
            enc_hidden: 5,
            feature_dim: 6,
            dec_hidden: 7,
            lambda: 2,
            segment_slots: 4,
            mask_slots: 3,
        }
    }

    fn tiny_sample(cfg: &ModelConfig) -> TrainSample {
        let o = Vec3::new(0.0, 0.0, 1.0);
        let paths = [
            crate::geom::Path::new(
                (0..4)
                    .map(|i| Pose { position: Vec3::new(i as f64 * 0.3, 0.1, 0.0), orientation: o })
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
            crate::geom::Path::new(
                (0..2)
                    .map(|i| Pose {
                        position: Vec3::new(0.2 - i as f64 * 0.45, -0.6, 0.3),
                        orientation: o,
                    })
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        ];
        let gt = extract_segments(&paths, cfg.lambda).unwrap();
        TrainSample {
            cloud: alloc::vec![
                Vec3::new(0.1, 0.4, -0.2),
                Vec3::new(-0.5, 0.2, 0.6),
                Vec3::new(0.3, -0.7, 0.1),
            ],
            n_paths: 2,
            gt_segments: gt,
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 42);
        let sample = tiny_sample(&cfg);
        let a = forward(&cfg, &params, &sample.cloud).unwrap();
        assert_eq!(a.segments.len(), cfg.segment_slots);
        assert_eq!(a.segments.lambda(), cfg.lambda);
        assert_eq!(a.bundle.n_masks(), cfg.mask_slots);
        assert_eq!(a.bundle.width(), cfg.segment_slots);
        for s in a.segments.segments() {
            for p in s.poses() {
                assert!((p.orientation.norm() - 1.0).abs() < 1e-9);
            }
        }
        let b = forward(&cfg, &params, &sample.cloud).unwrap();
        assert_eq!(a.segments, b.segments);
        assert_eq!(a.bundle, b.bundle);
    }

    #[test]
    fn encoder_is_permutation_invariant() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 7);
        let sample = tiny_sample(&cfg);
        let base = forward(&cfg, &params, &sample.cloud).unwrap();
        let mut permuted = sample.cloud.clone();
        permuted.swap(0, 2);
        let alt = forward(&cfg, &params, &permuted).unwrap();
        for (sa, sb) in base.segments.segments().iter().zip(alt.segments.segments()) {
            for (pa, pb) in sa.poses().iter().zip(sb.poses()) {
                assert!((pa.position - pb.position).norm() < 1e-9);
                assert!((pa.orientation - pb.orientation).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn loss_decomposes_into_loss_module_values() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 3);
        let sample = tiny_sample(&cfg);
        let metric = MetricConfig::default();
        let w = CurriculumWeights::new(0.0, 1.0, 100.0, 0.01).unwrap();
        let mut grads = ModelParams::zeros(&cfg);
        let l = loss_and_grads(&cfg, &params, &sample, &w, true, &metric, &mut grads).unwrap();

        let pass = forward(&cfg, &params, &sample.cloud).unwrap();
        let p2s = crate::losses::p2s_cd(&pass.segments, &sample.gt_segments, &w, &metric).unwrap();
        let targets =
            build_target_masks(&pass.segments, &sample.gt_segments, cfg.mask_slots, &metric)
                .unwrap();
        let mask = crate::losses::mask_loss(&pass.bundle, &targets).unwrap().loss;
        assert!((l.p2s - p2s).abs() <= 1e-12 * (1.0 + p2s));
        assert!((l.mask - mask).abs() <= 1e-12 * (1.0 + mask));
    }

    #[test]
    fn mask_gradients_gate_on_activation() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 5);
        let sample = tiny_sample(&cfg);
        let metric = MetricConfig::default();
        let w = CurriculumWeights::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let mut grads = ModelParams::zeros(&cfg);
        loss_and_grads(&cfg, &params, &sample, &w, false, &metric, &mut grads).unwrap();
        for li in [MASK1, MASK2, MASK3, CONF] {
            assert!(grads.layers[li].weight.iter().all(|&v| v == 0.0));
            assert!(grads.layers[li].bias.iter().all(|&v| v == 0.0));
        }
        // segment decoder gradients are not all zero
        assert!(grads.layers[SEG3].weight.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn full_parameter_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 11);
        let sample = tiny_sample(&cfg);
        let metric = MetricConfig::default();
        let w = CurriculumWeights::new(0.5, 1.0, 2.0, 0.25).unwrap();
        let mut grads = ModelParams::zeros(&cfg);
        loss_and_grads(&cfg, &params, &sample, &w, true, &metric, &mut grads).unwrap();

        let loss_of = |p: &ModelParams| -> f64 {
            let l = sample_loss(&cfg, p, &sample, &w, true, &metric).unwrap();
            l.p2s + l.mask
        };
        let n = params.n_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..n {
            let mut plus = params.clone();
            plus.nudge(idx, h);
            let mut minus = params.clone();
            minus.nudge(idx, -h);
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads.value_at(idx);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "param {idx}: analytic {a} vs fd {fd} (rel {rel:.2e})");
        }
        assert!(worst < 1e-4);
    }

    #[test]
    fn training_smoke_and_determinism() {
        let cfg = tiny_cfg();
        let tcfg = TrainConfig { total_epochs: 12, mask_activation: 8, ..TrainConfig::standard(12, 1) };
        let schedule = CurriculumSchedule {
            initial: CurriculumWeights::new(0.0, 1.0, 100.0, 0.01).unwrap(),
            milestones: [3, 6],
            total_epochs: 12,
        };
        let samples = alloc::vec![tiny_sample(&cfg)];
        let metric = MetricConfig::default();
        let run = |seed: u64| {
            let t = TrainConfig { seed, ..tcfg };
            train(&cfg, &t, &schedule, &samples, &metric, &mut SerialRunner, &mut NullObserver)
                .unwrap()
        };
        let (state_a, rec_a) = run(9);
        let (state_b, rec_b) = run(9);
        assert_eq!(state_a.params, state_b.params);
        assert_eq!(rec_a, rec_b);
        assert_eq!(rec_a.len(), 12);
        assert!(rec_a.iter().all(|r| r.loss_p2s.is_finite()));
        // curriculum weights in the log match the schedule exactly
        for r in &rec_a {
            assert_eq!(r.weights, schedule.weights_at(r.epoch).unwrap());
        }
        // mask loss is identically zero before activation
        assert!(rec_a.iter().take(8).all(|r| r.loss_mask == 0.0));

        let (state_c, _) = run(10);
        assert_ne!(state_c.params, state_a.params);
    }

    #[test]
    fn infer_is_total_on_random_params() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg, 77);
        let sample = tiny_sample(&cfg);
        let result = infer(&cfg, &params, &sample.cloud, 0.5).unwrap();
        assert!(result.n_paths() <= cfg.mask_slots);
    }

    #[test]
    fn toy_cuboid_sample_fits_the_toy_model() {
        let gen = GenParams::toy();
        let spec = CuboidSpec::sample(3, 0.5).unwrap();
        let sample = generate_cuboid(&spec, &gen).unwrap();
        let paths: Vec<crate::geom::Path> =
            sample.paths.iter().map(|p| downsample_path(p, 0.15).unwrap()).collect();
        let gt = extract_segments(&paths, 4).unwrap();
        let cloud = fit_cloud(&sample.point_cloud, 256);
        assert_eq!(cloud.len(), 256);
        let cfg = ModelConfig::toy(4, gt.len().max(8), 6);
        let ts = TrainSample { cloud, gt_segments: gt, n_paths: 6 };
        let params = ModelParams::init(&cfg, 1);
        let metric = MetricConfig::default();
        let mut grads = ModelParams::zeros(&cfg);
        let w = CurriculumWeights::new(0.0, 1.0, 100.0, 0.01).unwrap();
        let l = loss_and_grads(&cfg, &params, &ts, &w, false, &metric, &mut grads).unwrap();
        assert!(l.p2s.is_finite());
    }
}
