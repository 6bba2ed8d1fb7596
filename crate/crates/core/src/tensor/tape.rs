use super::kernels::{conv_out_len, deconv_crop_offset, gemm, Lowering};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    Deconv2d { x: Var, w: Var, stride: usize, off_y: usize, off_x: usize },
    MaxPool { x: Var, argmax: Vec<u32> },
    Act { x: Var, act: Activation },
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    SoftmaxLoss { scores: Var, probs: Vec<f64>, labels: Vec<u8>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of recorded ops. Nodes are appended in evaluation order, so
/// the list is always topologically sorted and the backward sweep is a
/// single reverse pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn finite_or(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn accumulate<'a>(grads: &'a mut [Option<Vec<f64>>], len: usize, v: Var) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every recorded node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// Forget gradients from a previous backward pass, keeping the values.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are tracked for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Detached leaf: never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass w.r.t. `v`; `None` for detached
    /// values or values the loss does not depend on.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        self.grads[v.0].as_deref()
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4()?;
        let (cout, wcin, kh, kw) = wv.dims4()?;
        if wcin != cin {
            return Err(shape_err(OP, format!("input has {cin} channels, weights expect {wcin}")));
        }
        if stride == 0 {
            return Err(TensorError::Invalid { op: OP, detail: "stride must be >= 1".into() });
        }
        let (Some(oh), Some(ow)) = (conv_out_len(h, kh, stride, pad), conv_out_len(wd, kw, stride, pad)) else {
            return Err(shape_err(OP, format!("{kh}x{kw} kernel does not fit {h}x{wd} input with padding {pad}")));
        };
        if let Some(b) = b {
            if self.value(b).len() != cout {
                return Err(shape_err(OP, format!("bias has {} values, expected {cout}", self.value(b).len())));
            }
        }
        if !xv.is_finite() || !wv.is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let lw = Lowering {
            channels: cin,
            img_h: h,
            img_w: wd,
            kh,
            kw,
            stride,
            off_y: pad,
            off_x: pad,
            grid_h: oh,
            grid_w: ow,
        };
        let pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
        let (k, p) = (lw.rows(), lw.cols());
        let mut out = vec![0.0; n * cout * p];
        let mut col = if pointwise { Vec::new() } else { vec![0.0; k * p] };
        for i in 0..n {
            let img = &xv.data()[i * cin * h * wd..(i + 1) * cin * h * wd];
            let src: &[f64] = if pointwise {
                img
            } else {
                lw.im2col(img, &mut col);
                &col
            };
            gemm(cout, k, p, wv.data(), false, src, false, 0.0, &mut out[i * cout * p..(i + 1) * cout * p]);
        }
        if let Some(b) = b {
            let bias = self.value(b).data();
            for (chunk, &bv) in out.chunks_mut(p).zip(bias.iter().cycle()) {
                chunk.iter_mut().for_each(|o| *o += bv);
            }
        }
        let value = finite_or(OP, Tensor::new(vec![n, cout, oh, ow], out)?)?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        let rg = self.any_grad(&inputs);
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Transposed convolution, center-cropped to `out_hw`. Weights are laid
    /// out `(cin, cout, kh, kw)`.
    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, out_hw: (usize, usize)) -> Result<Var> {
        const OP: &str = "deconv2d";
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, h, wd) = xv.dims4()?;
        let (wcin, cout, kh, kw) = wv.dims4()?;
        if wcin != cin {
            return Err(shape_err(OP, format!("input has {cin} channels, weights expect {wcin}")));
        }
        if stride == 0 || h == 0 || wd == 0 {
            return Err(TensorError::Invalid { op: OP, detail: "stride and input extents must be >= 1".into() });
        }
        let (full_h, full_w) = ((h - 1) * stride + kh, (wd - 1) * stride + kw);
        let (oh, ow) = out_hw;
        if oh > full_h || ow > full_w {
            return Err(shape_err(OP, format!("crop {oh}x{ow} exceeds uncropped output {full_h}x{full_w}")));
        }
        if !xv.is_finite() || !wv.is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let (off_y, off_x) = (deconv_crop_offset(full_h, oh), deconv_crop_offset(full_w, ow));
        let lw = Lowering {
            channels: cout,
            img_h: oh,
            img_w: ow,
            kh,
            kw,
            stride,
            off_y,
            off_x,
            grid_h: h,
            grid_w: wd,
        };
        let (k, p) = (lw.rows(), lw.cols());
        let mut out = vec![0.0; n * cout * oh * ow];
        let mut col = vec![0.0; k * p];
        for i in 0..n {
            let img = &xv.data()[i * cin * p..(i + 1) * cin * p];
            gemm(k, cin, p, wv.data(), true, img, false, 0.0, &mut col);
            lw.col2im(&col, &mut out[i * cout * oh * ow..(i + 1) * cout * oh * ow]);
        }
        let value = finite_or(OP, Tensor::new(vec![n, cout, oh, ow], out)?)?;
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(value, Op::Deconv2d { x, w, stride, off_y, off_x }, rg))
    }

    /// Max pooling. With stride 1 the input is padded so the output keeps the
    /// input's spatial size; with larger strides no padding is applied.
    /// Ties resolve to the first maximal element in row-major order.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        const OP: &str = "maxpool2d";
        if kernel == 0 || stride == 0 {
            return Err(TensorError::Invalid { op: OP, detail: "kernel and stride must be >= 1".into() });
        }
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4()?;
        let (pad, oh, ow) = if stride == 1 {
            ((kernel - 1) / 2, h, w)
        } else {
            match (conv_out_len(h, kernel, stride, 0), conv_out_len(w, kernel, stride, 0)) {
                (Some(oh), Some(ow)) => (0, oh, ow),
                _ => return Err(shape_err(OP, format!("window {kernel} larger than {h}x{w}"))),
            }
        };
        let window = |o: usize, len: usize| {
            let start = (o * stride) as isize - pad as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + kernel as isize).min(len as isize)) as usize;
            (lo, hi)
        };
        let mut out = vec![0.0; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        // separable: first-max along each row window, then topmost row max
        let mut row_val = vec![0.0; h * ow];
        let mut row_idx = vec![0usize; h * ow];
        for plane in 0..n * c {
            let src = &xv.data()[plane * h * w..(plane + 1) * h * w];
            for y in 0..h {
                for ox in 0..ow {
                    let (lo, hi) = window(ox, w);
                    let mut best = lo;
                    for xx in lo + 1..hi {
                        if src[y * w + xx] > src[y * w + best] {
                            best = xx;
                        }
                    }
                    row_val[y * ow + ox] = src[y * w + best];
                    row_idx[y * ow + ox] = best;
                }
            }
            for oy in 0..oh {
                let (lo, hi) = window(oy, h);
                for ox in 0..ow {
                    let mut best = lo;
                    for yy in lo + 1..hi {
                        if row_val[yy * ow + ox] > row_val[best * ow + ox] {
                            best = yy;
                        }
                    }
                    let o = plane * oh * ow + oy * ow + ox;
                    out[o] = row_val[best * ow + ox];
                    argmax[o] = (best * w + row_idx[best * ow + ox]) as u32;
                }
            }
        }
        let value = finite_or(OP, Tensor::new(vec![n, c, oh, ow], out)?)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let xv = self.value(x);
        let data: Vec<f64> = match act {
            Activation::Relu => xv.data().iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => xv.data().iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => xv.data().iter().map(|&v| v.tanh()).collect(),
        };
        let value = finite_or("activation", Tensor::new(xv.shape().to_vec(), data)?)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Act { x, act }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        finite_or(op, Tensor::new(av.shape().to_vec(), data)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |p, q| p + q)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |p, q| p * q)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Concatenate rank-4 tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *inputs.first().ok_or(TensorError::Invalid { op: OP, detail: "no inputs".into() })?;
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err(OP, format!("({vn},_,{vh},{vw}) vs ({n},_,{h},{w})")));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for i in 0..n {
            for (&v, &c) in inputs.iter().zip(&channels) {
                out.extend_from_slice(&self.value(v).data()[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    /// Channels `start..start + len` of a rank-4 tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(shape_err("slice_channels", format!("{start}..{} of {c} channels", start + len)));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for i in 0..n {
            out.extend_from_slice(&src[(i * c + start) * plane..(i * c + start + len) * plane]);
        }
        let value = Tensor::new(vec![n, len, h, w], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Slice { x, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).data().iter().sum();
        let value = finite_or("sum", Tensor::scalar(total))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    /// Mean over pixels of `weight[label] * -ln softmax(scores)[label]`.
    /// `labels` holds one class id per `(n, y, x)` position.
    pub fn weighted_softmax_loss(&mut self, scores: Var, labels: &[u8], weights: &[f64]) -> Result<Var> {
        const OP: &str = "weighted_softmax_loss";
        let sv = self.value(scores);
        let (n, k, h, w) = sv.dims4()?;
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(shape_err(OP, format!("{} labels for {n}x{h}x{w} pixels", labels.len())));
        }
        if weights.len() != k {
            return Err(shape_err(OP, format!("{} class weights for {k} classes", weights.len())));
        }
        if weights.iter().any(|&wt| !(wt >= 0.0) || !wt.is_finite()) {
            return Err(TensorError::Invalid { op: OP, detail: "class weights must be finite and >= 0".into() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(TensorError::LabelOutOfRange { label: bad as usize, classes: k });
        }
        let data = sv.data();
        let mut probs = vec![0.0; data.len()];
        let mut total = 0.0;
        for i in 0..n {
            for p in 0..plane {
                let at = |c: usize| (i * k + c) * plane + p;
                let max = (0..k).map(|c| data[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (data[at(c)] - max).exp()).sum();
                for c in 0..k {
                    probs[at(c)] = (data[at(c)] - max).exp() / z;
                }
                let label = labels[i * plane + p] as usize;
                let log_p = data[at(label)] - max - z.ln();
                total -= weights[label] * log_p;
            }
        }
        let value = finite_or(OP, Tensor::scalar(total / (n * plane) as f64))?;
        let rg = self.any_grad(&[scores]);
        Ok(self.push(
            value,
            Op::SoftmaxLoss { scores, probs, labels: labels.to_vec(), weights: weights.to_vec() },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every use of a value; call [`Tape::zero_grads`] before reusing
    /// the tape for a second backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        *accumulate(&mut self.grads, 1, loss) = vec![1.0];
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |v: &Var| nodes[v.0].requires_grad;
            let len_of = |v: Var| nodes[v.0].value.len();
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    let (n, cin, h, wd) = xv.dims4()?;
                    let (cout, _, kh, kw) = wv.dims4()?;
                    let (_, _, oh, ow) = node.value.dims4()?;
                    let lw = Lowering {
                        channels: cin,
                        img_h: h,
                        img_w: wd,
                        kh,
                        kw,
                        stride: *stride,
                        off_y: *pad,
                        off_x: *pad,
                        grid_h: oh,
                        grid_w: ow,
                    };
                    let pointwise = kh == 1 && kw == 1 && *stride == 1 && *pad == 0;
                    let (k, p) = (lw.rows(), lw.cols());
                    let mut col = if pointwise { Vec::new() } else { vec![0.0; k * p] };
                    if let Some(b) = b.filter(needs) {
                        let db = accumulate(grads, cout, b);
                        for (i, chunk) in g.chunks(p).enumerate() {
                            db[i % cout] += chunk.iter().sum::<f64>();
                        }
                    }
                    if needs(w) {
                        let mut dw = grads[w.0].take().unwrap_or_else(|| vec![0.0; wv.len()]);
                        for i in 0..n {
                            let img = &xv.data()[i * cin * h * wd..(i + 1) * cin * h * wd];
                            let src: &[f64] = if pointwise {
                                img
                            } else {
                                lw.im2col(img, &mut col);
                                &col
                            };
                            gemm(cout, p, k, &g[i * cout * p..(i + 1) * cout * p], false, src, true, 1.0, &mut dw);
                        }
                        grads[w.0] = Some(dw);
                    }
                    if needs(x) {
                        let mut dx = grads[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]);
                        for i in 0..n {
                            let dimg = &mut dx[i * cin * h * wd..(i + 1) * cin * h * wd];
                            let gout = &g[i * cout * p..(i + 1) * cout * p];
                            if pointwise {
                                gemm(k, cout, p, wv.data(), true, gout, false, 1.0, dimg);
                            } else {
                                gemm(k, cout, p, wv.data(), true, gout, false, 0.0, &mut col);
                                lw.col2im(&col, dimg);
                            }
                        }
                        grads[x.0] = Some(dx);
                    }
                }
                Op::Deconv2d { x, w, stride, off_y, off_x } => {
                    let xv = &nodes[x.0].value;
                    let wv = &nodes[w.0].value;
                    let (n, cin, h, wd) = xv.dims4()?;
                    let (_, cout, kh, kw) = wv.dims4()?;
                    let (_, _, oh, ow) = node.value.dims4()?;
                    let lw = Lowering {
                        channels: cout,
                        img_h: oh,
                        img_w: ow,
                        kh,
                        kw,
                        stride: *stride,
                        off_y: *off_y,
                        off_x: *off_x,
                        grid_h: h,
                        grid_w: wd,
                    };
                    let (k, p) = (lw.rows(), lw.cols());
                    let mut col = vec![0.0; k * p];
                    let mut dx = needs(x).then(|| grads[x.0].take().unwrap_or_else(|| vec![0.0; xv.len()]));
                    let mut dw = needs(w).then(|| grads[w.0].take().unwrap_or_else(|| vec![0.0; wv.len()]));
                    for i in 0..n {
                        lw.im2col(&g[i * cout * oh * ow..(i + 1) * cout * oh * ow], &mut col);
                        if let Some(dx) = dx.as_mut() {
                            gemm(cin, k, p, wv.data(), false, &col, false, 1.0, &mut dx[i * cin * p..(i + 1) * cin * p]);
                        }
                        if let Some(dw) = dw.as_mut() {
                            gemm(cin, p, k, &xv.data()[i * cin * p..(i + 1) * cin * p], false, &col, true, 1.0, dw);
                        }
                    }
                    if let Some(dx) = dx {
                        grads[x.0] = Some(dx);
                    }
                    if let Some(dw) = dw {
                        grads[w.0] = Some(dw);
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if needs(x) {
                        let (_, _, h, w) = nodes[x.0].value.dims4()?;
                        let (_, _, oh, ow) = node.value.dims4()?;
                        let dx = accumulate(grads, len_of(*x), *x);
                        for (o, (&gv, &am)) in g.iter().zip(argmax).enumerate() {
                            let plane = o / (oh * ow);
                            dx[plane * h * w + am as usize] += gv;
                        }
                    }
                }
                Op::Act { x, act } => {
                    if needs(x) {
                        let xin = nodes[x.0].value.data();
                        let y = node.value.data();
                        let dx = accumulate(grads, xin.len(), *x);
                        for i in 0..g.len() {
                            dx[i] += g[i]
                                * match act {
                                    Activation::Relu => {
                                        if xin[i] > 0.0 {
                                            1.0
                                        } else {
                                            0.0
                                        }
                                    }
                                    Activation::Sigmoid => y[i] * (1.0 - y[i]),
                                    Activation::Tanh => 1.0 - y[i] * y[i],
                                };
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if needs(v) {
                            let d = accumulate(grads, g.len(), *v);
                            d.iter_mut().zip(&g).for_each(|(d, gv)| *d += gv);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(a, b), (b, a)] {
                        if needs(v) {
                            let o = nodes[other.0].value.data();
                            let d = accumulate(grads, g.len(), *v);
                            for i in 0..g.len() {
                                d[i] += g[i] * o[i];
                            }
                        }
                    }
                }
                Op::Concat(inputs) => {
                    let (n, total, h, w) = node.value.dims4()?;
                    let plane = h * w;
                    let mut offset = 0;
                    for v in inputs {
                        let c = nodes[v.0].value.shape()[1];
                        if needs(v) {
                            let d = accumulate(grads, n * c * plane, *v);
                            for i in 0..n {
                                let src = &g[(i * total + offset) * plane..(i * total + offset + c) * plane];
                                d[i * c * plane..(i + 1) * c * plane]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, s)| *d += s);
                            }
                        }
                        offset += c;
                    }
                }
                Op::Slice { x, start } => {
                    if needs(x) {
                        let (n, c, h, w) = nodes[x.0].value.dims4()?;
                        let len = node.value.shape()[1];
                        let plane = h * w;
                        let d = accumulate(grads, n * c * plane, *x);
                        for i in 0..n {
                            let dst = &mut d[(i * c + start) * plane..(i * c + start + len) * plane];
                            dst.iter_mut()
                                .zip(&g[i * len * plane..(i + 1) * len * plane])
                                .for_each(|(d, s)| *d += s);
                        }
                    }
                }
                Op::Sum(x) => {
                    if needs(x) {
                        let d = accumulate(grads, len_of(*x), *x);
                        d.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::SoftmaxLoss { scores, probs, labels, weights } => {
                    if needs(scores) {
                        let (n, k, h, w) = nodes[scores.0].value.dims4()?;
                        let plane = h * w;
                        let scale = g[0] / (n * plane) as f64;
                        let d = accumulate(grads, probs.len(), *scores);
                        for i in 0..n {
                            for p in 0..plane {
                                let label = labels[i * plane + p] as usize;
                                let wt = weights[label] * scale;
                                for c in 0..k {
                                    let at = (i * k + c) * plane + p;
                                    let target = if c == label { 1.0 } else { 0.0 };
                                    d[at] += wt * (probs[at] - target);
                                }
                            }
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel softmax over the channel axis of a rank-4 score tensor.
pub fn softmax_channels(scores: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = scores.dims4()?;
    let plane = h * w;
    let src = scores.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        for p in 0..plane {
            let at = |c: usize| (i * k + c) * plane + p;
            let max = (0..k).map(|c| src[at(c)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..k).map(|c| (src[at(c)] - max).exp()).sum();
            for c in 0..k {
                out[at(c)] = (src[at(c)] - max).exp() / z;
            }
        }
    }
    Tensor::new(scores.shape().to_vec(), out)
}
