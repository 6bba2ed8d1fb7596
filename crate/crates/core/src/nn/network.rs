use super::{Architecture, NetworkSpec, NnError, Result};
use crate::tensor::{Activation, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const FULL_CONV: usize = 32;
const FULL_RECURRENT: usize = 20;
const FULL_FC: usize = 64;
const DECONV_KERNEL: usize = 16;
const DECONV_STRIDE: usize = 4;
const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// One row of the layer table, as built.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Stride-1 max-pool window applied after the convolution.
    pub pool: Option<usize>,
    pub activation: Option<Activation>,
    pub bias: bool,
    weight: usize,
    bias_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerDesc>,
    params: Vec<(String, Tensor)>,
}

/// Parameters placed on a tape, in the network's parameter order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Recurrent state held as plain tensors between inference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub cell: Tensor,
    pub hidden: Tensor,
    pub prev_prediction: Tensor,
}

/// Recurrent state living on a tape.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub cell: Var,
    pub hidden: Var,
    pub prev_prediction: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceInit {
    Zeros,
    /// Class ids of the frame preceding the first input, one per `(n, y, x)`.
    GroundTruth(Vec<u8>),
}

/// One-hot encoding of `labels` as a `(n, classes, h, w)` tensor.
pub fn one_hot(labels: &[u8], classes: usize, n: usize, h: usize, w: usize) -> Result<Tensor> {
    let plane = h * w;
    if labels.len() != n * plane {
        return Err(NnError::StateMismatch(format!("{} labels for {n}x{h}x{w}", labels.len())));
    }
    let mut out = Tensor::zeros(&[n, classes, h, w]);
    for (idx, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(crate::tensor::TensorError::LabelOutOfRange { label: l as usize, classes }.into());
        }
        let (i, p) = (idx / plane, idx % plane);
        out.data_mut()[(i * classes + l as usize) * plane + p] = 1.0;
    }
    Ok(out)
}

struct Builder<'a> {
    spec: &'a NetworkSpec,
    layers: Vec<LayerDesc>,
    params: Vec<(String, Tensor)>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn layer(
        &mut self,
        name: &str,
        kind: LayerKind,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: Option<usize>,
        activation: Option<Activation>,
        bias: bool,
    ) {
        let (shape, fan_in) = match kind {
            LayerKind::Conv => ([cout, cin, kernel, kernel], cin * kernel * kernel),
            // Each output pixel of a transposed convolution receives
            // (kernel / stride)^2 taps per input channel.
            LayerKind::Deconv => ([cin, cout, kernel, kernel], (cin * kernel * kernel / (stride * stride)).max(1)),
        };
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let rng = &mut self.rng;
        let w = Tensor::from_fn(&shape, |_| normal.sample(rng));
        let weight = self.params.len();
        self.params.push((format!("{name}.weight"), w));
        let bias_index = bias.then(|| {
            self.params.push((format!("{name}.bias"), Tensor::zeros(&[cout])));
            self.params.len() - 1
        });
        self.layers.push(LayerDesc {
            name: name.to_string(),
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
            pool: pool.filter(|&p| p > 1),
            activation,
            bias,
            weight,
            bias_index,
        });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pool: bool) {
        let pool = pool.then(|| self.spec.pool_window(kernel));
        self.layer(name, LayerKind::Conv, cin, cout, kernel, stride, kernel / 2, pool, Some(Activation::Relu), true);
    }

    fn pointwise(&mut self, name: &str, cin: usize, cout: usize, activation: Option<Activation>) {
        self.layer(name, LayerKind::Conv, cin, cout, 1, 1, 0, None, activation, true);
    }

    fn encoder(&mut self) {
        let c = self.spec.channels(FULL_CONV);
        let names: &[(&str, usize, usize)] = if self.spec.num_initial_convs == 5 {
            &[("conv1", 5, 2), ("conv2", 5, 2), ("conv3", 5, 1), ("conv4", 5, 1), ("conv5", 17, 1)]
        } else {
            &[("conv1", 5, 2), ("conv2", 5, 2), ("conv5", 17, 1)]
        };
        let mut cin = self.spec.num_input_channels;
        for &(name, k, s) in names {
            self.conv(name, cin, c, k, s, true);
            cin = c;
        }
    }

    fn head(&mut self, cin: usize) {
        self.layer("deconv", LayerKind::Deconv, cin, cin, DECONV_KERNEL, DECONV_STRIDE, 0, None, None, false);
        self.pointwise("classifier", cin, self.spec.num_classes, None);
    }
}

impl Network {
    /// Allocate and initialize every parameter of the layout in `spec`.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder { spec: &spec, layers: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        let c = spec.channels(FULL_CONV);
        let fc = spec.channels(FULL_FC);
        match spec.architecture {
            Architecture::SingleFrame | Architecture::MultiFrame => {
                b.encoder();
                let window = if spec.architecture == Architecture::MultiFrame { spec.window } else { 1 };
                b.pointwise("fc1", c * window, fc, Some(Activation::Relu));
                b.pointwise("fc2", fc, fc, Some(Activation::Relu));
                b.head(fc);
            }
            Architecture::Lstm => {
                b.encoder();
                let r = spec.channels(FULL_RECURRENT);
                b.conv("rec1", spec.num_classes, r, 5, 2, false);
                b.conv("rec2", r, r, 5, 2, false);
                b.conv("rec3", r, r, 5, 1, false);
                b.pointwise("gates", c + 2 * r, 4 * r, None);
                b.pointwise("fc", r, fc, Some(Activation::Relu));
                b.head(fc);
            }
        }
        let (layers, params) = (b.layers, b.params);
        let mut net = Network { spec, layers, params };
        if net.spec.architecture == Architecture::Lstm {
            let r = net.recurrent_channels();
            let bias = net.param_mut("gates.bias").expect("gate bias");
            bias.data_mut()[r..2 * r].iter_mut().for_each(|v| *v = FORGET_BIAS);
        }
        Ok(net)
    }

    /// Assemble a network from stored parameters; shapes must match `spec`.
    pub fn from_params(spec: NetworkSpec, params: Vec<(String, Tensor)>) -> Result<Self> {
        let mut net = Network::build(spec, 0)?;
        if params.len() != net.params.len() {
            return Err(NnError::Checkpoint(format!("expected {} tensors, got {}", net.params.len(), params.len())));
        }
        for (slot, (name, t)) in net.params.iter_mut().zip(params) {
            if slot.0 != name || slot.1.shape() != t.shape() {
                return Err(NnError::Checkpoint(format!(
                    "tensor {name} {:?} does not match expected {} {:?}",
                    t.shape(),
                    slot.0,
                    slot.1.shape()
                )));
            }
            slot.1 = t;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerDesc> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Channels of the per-frame encoder output.
    pub fn feature_channels(&self) -> usize {
        self.spec.channels(FULL_CONV)
    }

    pub fn recurrent_channels(&self) -> usize {
        self.spec.channels(FULL_RECURRENT)
    }

    /// Place every parameter on `tape`; `trainable` selects param vs constant leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(_, t)| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    fn find(&self, name: &str) -> &LayerDesc {
        self.layer(name).expect("layer present in built network")
    }

    fn apply(&self, tape: &mut Tape, b: &Bound, layer: &LayerDesc, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        let w = b.vars[layer.weight];
        let mut y = match layer.kind {
            LayerKind::Conv => {
                tape.conv2d(x, w, layer.bias_index.map(|i| b.vars[i]), layer.stride, layer.padding)?
            }
            LayerKind::Deconv => tape.deconv2d(x, w, layer.stride, out_hw)?,
        };
        if let Some(p) = layer.pool {
            y = tape.maxpool2d(y, p, 1)?;
        }
        if let Some(a) = layer.activation {
            y = tape.activation(y, a)?;
        }
        Ok(y)
    }

    fn run(&self, tape: &mut Tape, b: &Bound, name: &str, x: Var) -> Result<Var> {
        self.apply(tape, b, self.find(name), x, (0, 0))
    }

    fn check_input(&self, tape: &Tape, image: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = tape.value(image).dims4()?;
        if c != self.spec.num_input_channels {
            return Err(NnError::InputChannels { expected: self.spec.num_input_channels, got: c });
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(NnError::NotDivisible { h, w });
        }
        Ok((n, h, w))
    }

    /// Convolutional encoder shared by all layouts; output is at 1/4 resolution.
    pub fn encode(&self, tape: &mut Tape, b: &Bound, image: Var) -> Result<Var> {
        self.check_input(tape, image)?;
        let mut x = image;
        let count = self.spec.num_initial_convs;
        for layer in self.layers.iter().take(count) {
            x = self.apply(tape, b, layer, x, (0, 0))?;
        }
        Ok(x)
    }

    fn decode(&self, tape: &mut Tape, b: &Bound, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        let x = self.apply(tape, b, self.find("deconv"), x, out_hw)?;
        self.run(tape, b, "classifier", x)
    }

    fn require(&self, op: &'static str, arch: Architecture) -> Result<()> {
        if self.spec.architecture != arch {
            return Err(NnError::WrongArchitecture { op, arch: self.spec.architecture });
        }
        Ok(())
    }

    /// Per-pixel class scores `(n, classes, h, w)` for one image batch.
    pub fn forward_single(&self, tape: &mut Tape, b: &Bound, image: Var) -> Result<Var> {
        self.require("forward_single", Architecture::SingleFrame)?;
        let (_, h, w) = self.check_input(tape, image)?;
        let f = self.encode(tape, b, image)?;
        self.features_to_scores(tape, b, &[f], (h, w))
    }

    /// Scores for the last of `spec.window` frames.
    pub fn forward_multiframe(&self, tape: &mut Tape, b: &Bound, frames: &[Var]) -> Result<Var> {
        self.require("forward_multiframe", Architecture::MultiFrame)?;
        if frames.len() != self.spec.window {
            return Err(NnError::FrameCount { expected: self.spec.window, got: frames.len() });
        }
        let shape = tape.value(frames[0]).shape().to_vec();
        let (_, h, w) = self.check_input(tape, frames[0])?;
        let mut feats = Vec::with_capacity(frames.len());
        for &f in frames {
            if tape.value(f).shape() != shape.as_slice() {
                return Err(NnError::Tensor(crate::tensor::TensorError::Shape {
                    op: "forward_multiframe",
                    detail: format!("{:?} vs {shape:?}", tape.value(f).shape()),
                }));
            }
            feats.push(self.encode(tape, b, f)?);
        }
        self.features_to_scores(tape, b, &feats, (h, w))
    }

    /// The 1x1 stage and decoder of the feed-forward layouts, applied to
    /// already-encoded frames (oldest first).
    pub fn features_to_scores(&self, tape: &mut Tape, b: &Bound, features: &[Var], out_hw: (usize, usize)) -> Result<Var> {
        let x = if features.len() == 1 { features[0] } else { tape.concat_channels(features)? };
        let x = self.run(tape, b, "fc1", x)?;
        let x = self.run(tape, b, "fc2", x)?;
        self.decode(tape, b, x, out_hw)
    }

    /// Zero recurrent state for a batch of `n` images of size `h x w`.
    pub fn zero_state(&self, n: usize, h: usize, w: usize) -> RecurrentState {
        let r = self.recurrent_channels();
        RecurrentState {
            cell: Tensor::zeros(&[n, r, h / 4, w / 4]),
            hidden: Tensor::zeros(&[n, r, h / 4, w / 4]),
            prev_prediction: Tensor::zeros(&[n, self.spec.num_classes, h, w]),
        }
    }

    fn check_state(&self, tape: &Tape, s: &StateVars, n: usize, h: usize, w: usize) -> Result<()> {
        let r = self.recurrent_channels();
        let small = [n, r, h / 4, w / 4];
        let full = [n, self.spec.num_classes, h, w];
        for (what, v, want) in [("cell", s.cell, &small), ("hidden", s.hidden, &small), ("prev_prediction", s.prev_prediction, &full)]
        {
            if tape.value(v).shape() != want.as_slice() {
                return Err(NnError::StateMismatch(format!("{what} has shape {:?}, expected {want:?}", tape.value(v).shape())));
            }
        }
        Ok(())
    }

    /// One recurrent step; returns the scores and the successor state.
    pub fn lstm_step(&self, tape: &mut Tape, b: &Bound, image: Var, state: StateVars) -> Result<(Var, StateVars)> {
        self.require("lstm_step", Architecture::Lstm)?;
        let (n, h, w) = self.check_input(tape, image)?;
        self.check_state(tape, &state, n, h, w)?;
        let features = self.encode(tape, b, image)?;
        let mut rec = state.prev_prediction;
        for name in ["rec1", "rec2", "rec3"] {
            rec = self.run(tape, b, name, rec)?;
        }
        let x = tape.concat_channels(&[features, state.hidden, rec])?;
        let gates = self.run(tape, b, "gates", x)?;
        let r = self.recurrent_channels();
        let gate = |tape: &mut Tape, k: usize, act: Activation| -> Result<Var> {
            let s = tape.slice_channels(gates, k * r, r)?;
            Ok(tape.activation(s, act)?)
        };
        let i = gate(tape, 0, Activation::Sigmoid)?;
        let f = gate(tape, 1, Activation::Sigmoid)?;
        let o = gate(tape, 2, Activation::Sigmoid)?;
        let g = gate(tape, 3, Activation::Tanh)?;
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let squashed = tape.activation(cell, Activation::Tanh)?;
        let hidden = tape.mul(o, squashed)?;
        let x = self.run(tape, b, "fc", hidden)?;
        let scores = self.decode(tape, b, x, (h, w))?;
        Ok((scores, StateVars { cell, hidden, prev_prediction: scores }))
    }

    /// Place a tensor state on `tape` as constants.
    pub fn bind_state(&self, tape: &mut Tape, state: &RecurrentState) -> StateVars {
        StateVars {
            cell: tape.constant(state.cell.clone()),
            hidden: tape.constant(state.hidden.clone()),
            prev_prediction: tape.constant(state.prev_prediction.clone()),
        }
    }

    /// Initial state for a sequence starting with an `(n, _, h, w)` frame.
    pub fn initial_state(&self, init: &SequenceInit, n: usize, h: usize, w: usize) -> Result<RecurrentState> {
        let mut state = self.zero_state(n, h, w);
        if let SequenceInit::GroundTruth(labels) = init {
            if labels.is_empty() {
                return Err(NnError::MissingGroundTruth);
            }
            state.prev_prediction = one_hot(labels, self.spec.num_classes, n, h, w)?;
        }
        Ok(state)
    }

    /// Run `lstm_step` over `frames`, threading the state; returns every
    /// step's scores and the final state.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        b: &Bound,
        frames: &[Var],
        init: &SequenceInit,
    ) -> Result<(Vec<Var>, StateVars)> {
        self.require("forward_sequence", Architecture::Lstm)?;
        let first = *frames.first().ok_or(NnError::NoFrames)?;
        let (n, h, w) = self.check_input(tape, first)?;
        let start = self.initial_state(init, n, h, w)?;
        let mut state = self.bind_state(tape, &start);
        let mut out = Vec::with_capacity(frames.len());
        for &f in frames {
            let (scores, next) = self.lstm_step(tape, b, f, state)?;
            out.push(scores);
            state = next;
        }
        Ok((out, state))
    }

    /// Inference on plain tensors: single-frame scores.
    pub fn predict_single(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let s = self.forward_single(&mut tape, &b, x)?;
        Ok(tape.value(s).clone())
    }

    /// Encoder output for one frame, for reuse across sliding windows.
    pub fn predict_features(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let f = self.encode(&mut tape, &b, x)?;
        Ok(tape.value(f).clone())
    }

    /// Multi-frame scores from pre-encoded frames (oldest first).
    pub fn predict_from_features(&self, features: &[Tensor], out_hw: (usize, usize)) -> Result<Tensor> {
        self.require("predict_from_features", Architecture::MultiFrame)?;
        if features.len() != self.spec.window {
            return Err(NnError::FrameCount { expected: self.spec.window, got: features.len() });
        }
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let vars: Vec<Var> = features.iter().map(|f| tape.constant(f.clone())).collect();
        let s = self.features_to_scores(&mut tape, &b, &vars, out_hw)?;
        Ok(tape.value(s).clone())
    }

    pub fn predict_multiframe(&self, frames: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let vars: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
        let s = self.forward_multiframe(&mut tape, &b, &vars)?;
        Ok(tape.value(s).clone())
    }

    /// One recurrent inference step on plain tensors.
    pub fn predict_step(&self, image: &Tensor, state: &RecurrentState) -> Result<(Tensor, RecurrentState)> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let sv = self.bind_state(&mut tape, state);
        let (s, next) = self.lstm_step(&mut tape, &b, x, sv)?;
        let next = RecurrentState {
            cell: tape.value(next.cell).clone(),
            hidden: tape.value(next.hidden).clone(),
            prev_prediction: tape.value(next.prev_prediction).clone(),
        };
        Ok((tape.value(s).clone(), next))
    }

    /// Recurrent inference over a whole sequence, one tape per step.
    pub fn predict_sequence(&self, frames: &[Tensor], init: &SequenceInit) -> Result<Vec<Tensor>> {
        self.require("predict_sequence", Architecture::Lstm)?;
        let first = frames.first().ok_or(NnError::NoFrames)?;
        let (n, _, h, w) = first.dims4()?;
        let mut state = self.initial_state(init, n, h, w)?;
        let mut out = Vec::with_capacity(frames.len());
        for f in frames {
            let (s, next) = self.predict_step(f, &state)?;
            out.push(s);
            state = next;
        }
        Ok(out)
    }
}
