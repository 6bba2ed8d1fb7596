//! Independent reference implementations used by integration and
//! acceptance tests. Nothing here calls into the lowering kernels.
#![allow(dead_code)]

pub mod scenes;

use liquid::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct six-loop cross-correlation plus bias.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wdat = w.data();
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((i * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Dense matrix of the linear map `x -> naive_conv2d(x, w, None, stride, pad)`
/// for single-item inputs of shape `(1, cin, h, w)`; rows index outputs.
pub fn dense_conv_operator(w: &Tensor, h: usize, wd: usize, stride: usize, pad: usize) -> (Vec<Vec<f64>>, [usize; 4]) {
    let (_, cin, _, _) = w.dims4().unwrap();
    let inputs = cin * h * wd;
    let mut columns = Vec::with_capacity(inputs);
    let mut out_shape = [0; 4];
    for j in 0..inputs {
        let mut e = vec![0.0; inputs];
        e[j] = 1.0;
        let x = Tensor::new(vec![1, cin, h, wd], e).unwrap();
        let y = naive_conv2d(&x, w, None, stride, pad);
        out_shape.copy_from_slice(y.shape());
        columns.push(y.into_data());
    }
    let rows = columns[0].len();
    let matrix = (0..rows).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    (matrix, out_shape)
}

/// Brute-force maximum over each window with the same padding convention as
/// the library (stride 1 keeps size, larger strides are unpadded).
pub fn naive_maxpool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let (pad, oh, ow) = if stride == 1 { ((k - 1) / 2, h, w) } else { (0, (h - k) / stride + 1, (w - k) / stride + 1) };
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (oy * stride + ky) as isize - pad as isize;
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                            best = best.max(x.data()[p * h * w + y as usize * w + xx as usize]);
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        diff
    } else {
        diff / denom
    }
}

/// Central finite-difference check. `build` records a scalar loss from the
/// leaves it is handed; returns the worst norm-wise relative error over the
/// inputs listed in `check`.
pub fn fd_check<F>(inputs: &[Tensor], check: &[usize], step: f64, build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for &i in check {
        let analytic = tape.grad(vars[i]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut work = inputs.to_vec();
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work);
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work);
            work[i].data_mut()[j] = orig;
            numeric[j] = (up - down) / (2.0 * step);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}
