//! Adam training of the three layouts: liquid-centred crop pre-training,
//! full-image training and truncated backpropagation through time.

use crate::dataset::Sequence;
use crate::nn::{save_checkpoint, Architecture, Network, NetworkSpec, NnError, SequenceInit};
use crate::render::{segmented_input, LabeledFrame, VISIBLE_LIQUID};
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training sequences")]
    EmptyDataset,
    #[error("no visible liquid to crop around")]
    NoLiquid,
    #[error("crop {crop} does not fit a {width}x{height} frame")]
    CropTooLarge { crop: usize, width: usize, height: usize },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("gradient for {param} has {got} values, parameter has {expected}")]
    GradientShape { param: String, expected: usize, got: usize },
    #[error("loss diverged at iteration {iteration}")]
    Diverged { iteration: usize, trace: Vec<LossRecord> },
    #[error("sequence has {got} frames, {needed} needed")]
    SequenceTooShort { needed: usize, got: usize },
    #[error("{0}")]
    Incompatible(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub batch_size: usize,
    /// LSTM unroll length on full images.
    pub unroll: usize,
    /// LSTM unroll length during crop pre-training.
    pub crop_unroll: usize,
    pub positive_weight: f64,
    pub negative_weight: f64,
    /// Side of the square pre-training crop; a multiple of 4.
    pub crop_size: usize,
    /// Chance that a crop-phase sample is a random crop of a negative sequence.
    pub negative_crop_probability: f64,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 2000,
            batch_size: 1,
            unroll: 16,
            crop_unroll: 8,
            positive_weight: 1.0,
            negative_weight: 0.1,
            crop_size: 32,
            negative_crop_probability: 0.2,
            checkpoint_every: 0,
            checkpoint_dir: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.unroll == 0 || self.crop_unroll == 0 {
            return bad("unroll and crop_unroll must be >= 1".into());
        }
        for (name, w) in [("positive_weight", self.positive_weight), ("negative_weight", self.negative_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        if self.crop_size == 0 || self.crop_size % 4 != 0 {
            return bad(format!("crop_size must be a positive multiple of 4, got {}", self.crop_size));
        }
        if !(0.0..=1.0).contains(&self.negative_crop_probability) {
            return bad(format!("negative_crop_probability must be in [0, 1], got {}", self.negative_crop_probability));
        }
        Ok(())
    }

    /// Loss weights indexed by class id (0 background, 1 liquid).
    pub fn class_weights(&self) -> [f64; 2] {
        [self.negative_weight, self.positive_weight]
    }
}

/// Adam moments, one array per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[(String, Tensor)]) -> Self {
        Self { t: 0, m: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(), v: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect() }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// rejected.
pub fn adam_step(params: &mut [(String, Tensor)], grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::Incompatible(format!("{} gradients and {} moments for {} parameters", grads.len(), state.m.len(), params.len())));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if g.len() != p.len() {
            return Err(TrainError::GradientShape { param: name.clone(), expected: p.len(), got: g.len() });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFiniteGradient { param: name.clone() });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (k, (_, p)) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let g = grads[k][i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            *x -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Raw images, visible-liquid targets.
    Detection,
    /// Pre-segmented images, all-liquid targets.
    Tracking,
    /// Raw images, all-liquid targets.
    Combined,
}

impl Task {
    pub fn input_channels(self) -> usize {
        match self {
            Task::Tracking => 4,
            _ => 3,
        }
    }

    /// Network input `[1, C, H, W]` for one frame.
    pub fn input(self, f: &LabeledFrame) -> Tensor {
        let t = match self {
            Task::Tracking => segmented_input(f),
            _ => f.image_tensor(),
        };
        let shape = [1, t.shape()[0], t.shape()[1], t.shape()[2]];
        t.reshape(&shape).expect("same element count")
    }

    pub fn target(self, f: &LabeledFrame) -> Vec<u8> {
        match self {
            Task::Detection => f.detection_target(),
            _ => f.tracking_target(),
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "detection" => Ok(Task::Detection),
            "tracking" => Ok(Task::Tracking),
            "combined" => Ok(Task::Combined),
            _ => Err(format!("unknown task {s:?} (expected detection, tracking or combined)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    CropPretrain,
    FullImage,
}

impl FromStr for Phase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "crop_pretrain" => Ok(Phase::CropPretrain),
            "full_image" => Ok(Phase::FullImage),
            _ => Err(format!("unknown phase {s:?} (expected crop_pretrain or full_image)")),
        }
    }
}

/// A square window inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl CropWindow {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x..self.x + self.size).contains(&x) && (self.y..self.y + self.size).contains(&y)
    }

    pub fn apply(&self, f: &LabeledFrame) -> LabeledFrame {
        let s = self.size;
        let mut out = LabeledFrame { width: s, height: s, image: Vec::with_capacity(s * s * 3), multilabel: Vec::with_capacity(s * s), visible: Vec::with_capacity(s * s) };
        for y in self.y..self.y + s {
            let row = y * f.width + self.x;
            out.image.extend_from_slice(&f.image[row * 3..(row + s) * 3]);
            out.multilabel.extend_from_slice(&f.multilabel[row..row + s]);
            out.visible.extend_from_slice(&f.visible[row..row + s]);
        }
        out
    }
}

fn check_crop(f: &LabeledFrame, crop: usize) -> Result<()> {
    if crop == 0 || crop > f.width || crop > f.height {
        return Err(TrainError::CropTooLarge { crop, width: f.width, height: f.height });
    }
    Ok(())
}

/// Window around a uniformly drawn visible-liquid pixel, clamped to the image.
pub fn liquid_crop_window(f: &LabeledFrame, crop: usize, rng: &mut impl Rng) -> Result<CropWindow> {
    check_crop(f, crop)?;
    let liquid: Vec<usize> = (0..f.visible.len()).filter(|&i| f.visible[i] == VISIBLE_LIQUID).collect();
    if liquid.is_empty() {
        return Err(TrainError::NoLiquid);
    }
    let p = liquid[rng.random_range(0..liquid.len())];
    let (px, py) = (p % f.width, p / f.width);
    let x = rng.random_range(px.saturating_sub(crop - 1)..=px.min(f.width - crop));
    let y = rng.random_range(py.saturating_sub(crop - 1)..=py.min(f.height - crop));
    Ok(CropWindow { x, y, size: crop })
}

pub fn random_crop_window(f: &LabeledFrame, crop: usize, rng: &mut impl Rng) -> Result<CropWindow> {
    check_crop(f, crop)?;
    Ok(CropWindow { x: rng.random_range(0..=f.width - crop), y: rng.random_range(0..=f.height - crop), size: crop })
}

/// Crop of image and labels containing at least one visible-liquid pixel.
pub fn sample_liquid_crop(f: &LabeledFrame, crop: usize, rng: &mut impl Rng) -> Result<LabeledFrame> {
    Ok(liquid_crop_window(f, crop, rng)?.apply(f))
}

/// One training sample, batched: per step an input `[n, C, H, W]` and a
/// label vector of `n * H * W` class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<Tensor>,
    /// One target per step for the LSTM, only the last frame's otherwise.
    pub targets: Vec<Vec<u8>>,
    /// Labels of the frame preceding the clip; background at a sequence start.
    pub init: Vec<u8>,
}

/// Frames the network consumes per sample.
pub fn clip_length(spec: &NetworkSpec, cfg: &TrainConfig, phase: Phase) -> usize {
    match spec.architecture {
        Architecture::SingleFrame => 1,
        Architecture::MultiFrame => spec.window,
        Architecture::Lstm => match phase {
            Phase::CropPretrain => cfg.crop_unroll,
            Phase::FullImage => cfg.unroll,
        },
    }
}

/// Draws training clips from a set of sequences.
pub struct Sampler<'a> {
    all: Vec<&'a Sequence>,
    /// Positive sequences with the frames usable as crop anchors.
    positive: Vec<(&'a Sequence, Vec<usize>)>,
    negative: Vec<&'a Sequence>,
    arch: Architecture,
    len: usize,
    task: Task,
    phase: Phase,
    cfg: TrainConfig,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a [Sequence], spec: &NetworkSpec, cfg: &TrainConfig, task: Task, phase: Phase) -> Result<Self> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let len = clip_length(spec, cfg, phase);
        if let Some(s) = data.iter().find(|s| s.frames.len() < len) {
            return Err(TrainError::SequenceTooShort { needed: len, got: s.frames.len() });
        }
        let all: Vec<&Sequence> = data.iter().collect();
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for s in data {
            let anchors: Vec<usize> = (0..s.frames.len())
                .filter(|&k| s.frames[k].visible.contains(&VISIBLE_LIQUID))
                .filter(|&k| spec.architecture != Architecture::MultiFrame || k + 1 >= len)
                .collect();
            if !anchors.is_empty() {
                positive.push((s, anchors));
            } else if !s.header.has_liquid {
                negative.push(s);
            }
        }
        if phase == Phase::CropPretrain {
            if positive.is_empty() {
                return Err(TrainError::NoLiquid);
            }
            let f = &data[0].frames[0];
            check_crop(f, cfg.crop_size)?;
        }
        Ok(Self { all, positive, negative, arch: spec.architecture, len, task, phase, cfg: cfg.clone() })
    }

    /// Frames of one clip (cropped in the crop phase) plus its predecessor.
    fn clip(&self, rng: &mut impl Rng) -> Result<(Vec<LabeledFrame>, Option<LabeledFrame>)> {
        let len = self.len;
        let (seq, start, window) = match self.phase {
            Phase::FullImage => {
                let s = self.all[rng.random_range(0..self.all.len())];
                (s, rng.random_range(0..=s.frames.len() - len), None)
            }
            Phase::CropPretrain => {
                let use_negative = !self.negative.is_empty() && rng.random_bool(self.cfg.negative_crop_probability);
                if use_negative {
                    let s = self.negative[rng.random_range(0..self.negative.len())];
                    let start = rng.random_range(0..=s.frames.len() - len);
                    let w = random_crop_window(&s.frames[start], self.cfg.crop_size, rng)?;
                    (s, start, Some(w))
                } else {
                    let (s, anchors) = &self.positive[rng.random_range(0..self.positive.len())];
                    let a = anchors[rng.random_range(0..anchors.len())];
                    let start = match self.arch {
                        Architecture::SingleFrame => a,
                        Architecture::MultiFrame => a + 1 - len,
                        Architecture::Lstm => rng.random_range((a + 1).saturating_sub(len)..=a.min(s.frames.len() - len)),
                    };
                    let w = liquid_crop_window(&s.frames[a], self.cfg.crop_size, rng)?;
                    (*s, start, Some(w))
                }
            }
        };
        let take = |f: &LabeledFrame| window.map_or_else(|| f.clone(), |w| w.apply(f));
        let frames = seq.frames[start..start + len].iter().map(take).collect();
        let prev = start.checked_sub(1).map(|k| take(&seq.frames[k]));
        Ok((frames, prev))
    }

    /// A batch of `cfg.batch_size` clips.
    pub fn draw(&self, rng: &mut impl Rng) -> Result<Example> {
        let clips = (0..self.cfg.batch_size).map(|_| self.clip(rng)).collect::<Result<Vec<_>>>()?;
        let task = self.task;
        let inputs = (0..self.len)
            .map(|k| Tensor::stack_batch(&clips.iter().map(|(f, _)| task.input(&f[k])).collect::<Vec<_>>()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let labels = |k: usize| clips.iter().flat_map(|(f, _)| task.target(&f[k])).collect::<Vec<u8>>();
        let targets = match self.arch {
            Architecture::Lstm => (0..self.len).map(labels).collect(),
            _ => vec![labels(self.len - 1)],
        };
        let init = clips
            .iter()
            .flat_map(|(f, prev)| prev.as_ref().map_or_else(|| vec![0u8; f[0].width * f[0].height], |p| task.target(p)))
            .collect();
        Ok(Example { inputs, targets, init })
    }
}

/// Weighted loss of `ex` on `tape`; the LSTM sums its per-step losses.
pub fn example_loss(net: &Network, tape: &mut Tape, b: &crate::nn::Bound, ex: &Example, weights: &[f64]) -> Result<Var> {
    let xs: Vec<Var> = ex.inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let loss = match net.spec().architecture {
        Architecture::SingleFrame => {
            let s = net.forward_single(tape, b, xs[0])?;
            tape.weighted_softmax_loss(s, &ex.targets[0], weights)?
        }
        Architecture::MultiFrame => {
            let s = net.forward_multiframe(tape, b, &xs)?;
            tape.weighted_softmax_loss(s, &ex.targets[0], weights)?
        }
        Architecture::Lstm => {
            let (scores, _) = net.forward_sequence(tape, b, &xs, &SequenceInit::GroundTruth(ex.init.clone()))?;
            let mut total: Option<Var> = None;
            for (s, t) in scores.into_iter().zip(&ex.targets) {
                let l = tape.weighted_softmax_loss(s, t, weights)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, l)?,
                    None => l,
                });
            }
            total.expect("at least one step")
        }
    };
    Ok(loss)
}

/// Loss of `ex` under the current parameters, without gradients.
pub fn evaluate_loss(net: &Network, ex: &Example, cfg: &TrainConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let b = net.bind(&mut tape, false);
    let l = example_loss(net, &mut tape, &b, ex, &cfg.class_weights())?;
    Ok(tape.value(l).data()[0])
}

/// Loss and parameter gradients of `ex`.
pub fn loss_and_gradients(net: &Network, ex: &Example, cfg: &TrainConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let b = net.bind(&mut tape, true);
    let l = example_loss(net, &mut tape, &b, ex, &cfg.class_weights())?;
    tape.backward(l)?;
    let grads = b
        .vars()
        .iter()
        .zip(net.params())
        .map(|(&v, (_, p))| tape.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    Ok((tape.value(l).data()[0], grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

pub fn write_loss_csv(records: &[LossRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "iteration,loss,wall_ms")?;
    for r in records {
        writeln!(w, "{},{},{}", r.iteration, r.loss, r.wall_ms)?;
    }
    w.flush()
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(e, TrainError::Tensor(TensorError::NonFinite { .. }) | TrainError::Nn(NnError::Tensor(TensorError::NonFinite { .. })))
}

/// Run `cfg.iterations` Adam steps on samples of `task` in `phase`. Each
/// record holds the loss before that iteration's update.
pub fn train_network(net: &mut Network, data: &[Sequence], cfg: &TrainConfig, task: Task, phase: Phase) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    let want = task.input_channels();
    if net.spec().num_input_channels != want {
        return Err(TrainError::Incompatible(format!(
            "{task:?} needs {want} input channels, network has {}",
            net.spec().num_input_channels
        )));
    }
    let sampler = Sampler::new(data, net.spec(), cfg, task, phase)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(net.params());
    let clock = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let ex = sampler.draw(&mut rng)?;
        let (loss, grads) = match loss_and_gradients(net, &ex, cfg) {
            Ok(r) => r,
            Err(e) if is_non_finite(&e) => return Err(TrainError::Diverged { iteration, trace }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(TrainError::Diverged { iteration, trace });
        }
        adam_step(net.params_mut(), &grads, &mut adam, cfg)?;
        trace.push(LossRecord { iteration, loss, wall_ms: clock.elapsed().as_millis() as u64 });
        if let Some(dir) = &cfg.checkpoint_dir {
            if cfg.checkpoint_every > 0 && (iteration + 1) % cfg.checkpoint_every == 0 {
                std::fs::create_dir_all(dir)?;
                save_checkpoint(net, &dir.join(format!("iter_{:06}.lnet", iteration + 1)))?;
            }
        }
    }
    Ok(trace)
}

/// Detection training of any layout on raw images.
pub fn train_detection(net: &mut Network, data: &[Sequence], cfg: &TrainConfig, phase: Phase) -> Result<Vec<LossRecord>> {
    train_network(net, data, cfg, Task::Detection, phase)
}

/// Full-image BPTT over `cfg.unroll` frames, recurrent input initialized
/// with the ground truth of the frame before each window.
pub fn train_lstm(net: &mut Network, data: &[Sequence], cfg: &TrainConfig, task: Task) -> Result<Vec<LossRecord>> {
    if net.spec().architecture != Architecture::Lstm {
        return Err(TrainError::Incompatible(format!("train_lstm needs an LSTM network, got {:?}", net.spec().architecture)));
    }
    train_network(net, data, cfg, task, Phase::FullImage)
}

/// Copy every parameter of `src` whose name and shape match one in `dst`;
/// returns the number copied.
pub fn transfer_weights(dst: &mut Network, src: &Network) -> usize {
    let mut copied = 0;
    for (name, p) in dst.params_mut() {
        if let Some(s) = src.param(name) {
            if s.shape() == p.shape() {
                *p = s.clone();
                copied += 1;
            }
        }
    }
    copied
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_window_copies_rows() {
        let f = LabeledFrame {
            width: 4,
            height: 3,
            image: (0..36).collect(),
            multilabel: (0..12).collect(),
            visible: (0..12).map(|i| (i % 4) as u8).collect(),
        };
        let c = CropWindow { x: 1, y: 1, size: 2 }.apply(&f);
        assert_eq!(c.multilabel, vec![5, 6, 9, 10]);
        assert_eq!(&c.image[..6], &[15, 16, 17, 18, 19, 20]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { crop_size: 30, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { negative_weight: -0.1, ..Default::default() }.validate().is_err());
    }
}
