mod common;

use common::{random_tensor, rel_err, rng};
use liquid::nn::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Architecture, LayerKind, Network, NetworkSpec,
    NnError, SequenceInit,
};
use liquid::tensor::{softmax_channels, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

fn zero_all(net: &mut Network) {
    for (_, t) in net.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

fn table(net: &Network) -> Vec<(String, usize, usize, usize, usize)> {
    net.layers().iter().map(|l| (l.name.clone(), l.in_channels, l.out_channels, l.kernel, l.stride)).collect()
}

fn row(name: &str, cin: usize, cout: usize, k: usize, s: usize) -> (String, usize, usize, usize, usize) {
    (name.to_string(), cin, cout, k, s)
}

#[test]
fn single_frame_table_full_scale() {
    let net = Network::build(NetworkSpec::new(Architecture::SingleFrame), 1).unwrap();
    assert_eq!(
        table(&net),
        vec![
            row("conv1", 3, 32, 5, 2),
            row("conv2", 32, 32, 5, 2),
            row("conv3", 32, 32, 5, 1),
            row("conv4", 32, 32, 5, 1),
            row("conv5", 32, 32, 17, 1),
            row("fc1", 32, 64, 1, 1),
            row("fc2", 64, 64, 1, 1),
            row("deconv", 64, 64, 16, 4),
            row("classifier", 64, 2, 1, 1),
        ]
    );
    let pools: Vec<_> = net.layers().iter().map(|l| l.pool).collect();
    assert_eq!(pools[..5], [Some(5), Some(5), Some(5), Some(5), Some(17)]);
    assert!(pools[5..].iter().all(Option::is_none));
    let deconv = net.layer("deconv").unwrap();
    assert_eq!(deconv.kind, LayerKind::Deconv);
    assert!(!deconv.bias && deconv.activation.is_none());
    assert_eq!(net.param("deconv.weight").unwrap().shape(), &[64, 64, 16, 16]);
}

#[test]
fn lstm_table_full_scale() {
    let net = Network::build(NetworkSpec::new(Architecture::Lstm), 1).unwrap();
    let t = table(&net);
    assert_eq!(t[5..8], [row("rec1", 2, 20, 5, 2), row("rec2", 20, 20, 5, 2), row("rec3", 20, 20, 5, 1)]);
    assert_eq!(t[8], row("gates", 32 + 20 + 20, 80, 1, 1));
    assert_eq!(t[9..], [row("fc", 20, 64, 1, 1), row("deconv", 64, 64, 16, 4), row("classifier", 64, 2, 1, 1)]);
    let bias = net.param("gates.bias").unwrap().data();
    assert!(bias[..20].iter().all(|&v| v == 0.0));
    assert!(bias[20..40].iter().all(|&v| v == 1.0));
    assert!(bias[40..].iter().all(|&v| v == 0.0));
}

#[test]
fn quarter_scale_keeps_topology() {
    let full = Network::build(NetworkSpec::new(Architecture::Lstm), 1).unwrap();
    let net = Network::build(NetworkSpec::new(Architecture::Lstm).with_scale(0.25), 1).unwrap();
    let names = |n: &Network| n.layers().iter().map(|l| (l.name.clone(), l.kernel, l.stride)).collect::<Vec<_>>();
    assert_eq!(names(&full), names(&net));
    let outs: Vec<usize> = net.layers().iter().map(|l| l.out_channels).collect();
    assert_eq!(outs, vec![8, 8, 8, 8, 8, 5, 5, 5, 20, 16, 16, 2]);
}

#[test]
fn tracking_variant_keeps_strided_pair_and_wide_conv() {
    let net = Network::build(NetworkSpec::new(Architecture::SingleFrame).tracking(), 1).unwrap();
    let names: Vec<_> = net.layers().iter().map(|l| l.name.as_str()).collect();
    assert_eq!(names, ["conv1", "conv2", "conv5", "fc1", "fc2", "deconv", "classifier"]);
    assert_eq!(net.layer("conv1").unwrap().in_channels, 4);
}

#[test]
fn multiframe_concat_width() {
    let net = Network::build(NetworkSpec::new(Architecture::MultiFrame), 1).unwrap();
    assert_eq!(net.spec().window, 32);
    assert_eq!(net.layer("fc1").unwrap().in_channels, 1024);
}

#[test]
fn output_size_matches_input() {
    let mut r = rng(3);
    for arch in [Architecture::SingleFrame, Architecture::MultiFrame, Architecture::Lstm] {
        let mut spec = NetworkSpec::new(arch).with_scale(0.125);
        spec.window = 3;
        let net = Network::build(spec, 7).unwrap();
        for (h, w) in [(4, 4), (16, 12), (48, 64), (20, 36)] {
            let img = random_tensor(&mut r, &[2, 3, h, w]);
            let out = match arch {
                Architecture::SingleFrame => net.predict_single(&img).unwrap(),
                Architecture::MultiFrame => net.predict_multiframe(&vec![img.clone(); 3]).unwrap(),
                Architecture::Lstm => net.predict_sequence(&[img.clone()], &SequenceInit::Zeros).unwrap().remove(0),
            };
            assert_eq!(out.shape(), &[2, 2, h, w], "{arch:?} {h}x{w}");
        }
    }
}

#[test]
fn input_errors() {
    let net = Network::build(NetworkSpec::new(Architecture::SingleFrame).with_scale(0.125), 1).unwrap();
    let four = Tensor::zeros(&[1, 4, 16, 16]);
    assert!(matches!(net.predict_single(&four), Err(NnError::InputChannels { expected: 3, got: 4 })));
    let odd = Tensor::zeros(&[1, 3, 18, 16]);
    assert!(matches!(net.predict_single(&odd), Err(NnError::NotDivisible { .. })));
    assert!(matches!(net.predict_multiframe(&[]), Err(NnError::WrongArchitecture { .. })));
}

#[test]
fn zero_weights_give_uniform_scores() {
    let mut net = Network::build(NetworkSpec::new(Architecture::SingleFrame).with_scale(0.25), 5).unwrap();
    zero_all(&mut net);
    let img = random_tensor(&mut rng(1), &[1, 3, 16, 16]);
    let probs = softmax_channels(&net.predict_single(&img).unwrap()).unwrap();
    assert!(probs.data().iter().all(|&p| p == 0.5));
}

#[test]
fn fully_convolutional_crop_consistency() {
    let net = Network::build(NetworkSpec::new(Architecture::SingleFrame).with_scale(0.25), 11).unwrap();
    let (big, crop, off) = (232, 160, 36);
    let img = random_tensor(&mut rng(2), &[1, 3, big, big]);
    let cropped = Tensor::from_fn(&[1, 3, crop, crop], |i| {
        let (c, y, x) = (i / (crop * crop), (i / crop) % crop, i % crop);
        img.data()[(c * big + y + off) * big + x + off]
    });
    let full = net.predict_single(&img).unwrap();
    let part = net.predict_single(&cropped).unwrap();
    assert_eq!(part.shape(), &[1, 2, crop, crop]);
    let margin = 72;
    let mut worst: f64 = 0.0;
    for c in 0..2 {
        for y in margin..crop - margin {
            for x in margin..crop - margin {
                let a = part.data()[(c * crop + y) * crop + x];
                let b = full.data()[(c * big + y + off) * big + x + off];
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-9, "interior mismatch {worst}");
}

fn small_mf(window: usize, seed: u64) -> Network {
    let mut spec = NetworkSpec::new(Architecture::MultiFrame).with_scale(0.125);
    spec.window = window;
    Network::build(spec, seed).unwrap()
}

#[test]
fn identical_frames_match_block_summed_single_frame() {
    let mf = small_mf(32, 21);
    let mut sf_spec = mf.spec().clone();
    sf_spec.architecture = Architecture::SingleFrame;
    sf_spec.window = 1;
    let mut sf = Network::build(sf_spec, 0).unwrap();
    let c = mf.feature_channels();
    for (name, t) in sf.params_mut() {
        if name == "fc1.weight" {
            let src = mf.param(name).unwrap();
            let (out, cin) = (src.shape()[0], src.shape()[1]);
            for o in 0..out {
                for k in 0..c {
                    t.data_mut()[o * c + k] = (0..cin / c).map(|b| src.data()[o * cin + b * c + k]).sum();
                }
            }
        } else {
            *t = mf.param(name).unwrap().clone();
        }
    }
    let img = random_tensor(&mut rng(4), &[1, 3, 24, 32]);
    let a = mf.predict_multiframe(&vec![img.clone(); 32]).unwrap();
    let b = sf.predict_single(&img).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-8));
}

#[test]
fn multiframe_is_order_sensitive() {
    let net = small_mf(5, 8);
    let mut r = rng(5);
    let frames: Vec<Tensor> = (0..5).map(|_| random_tensor(&mut r, &[1, 3, 16, 16])).collect();
    let mut swapped = frames.clone();
    swapped.swap(1, 3);
    let a = net.predict_multiframe(&frames).unwrap();
    let b = net.predict_multiframe(&swapped).unwrap();
    let delta = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(delta > 0.0);
    assert!(matches!(net.predict_multiframe(&frames[..4]), Err(NnError::FrameCount { expected: 5, got: 4 })));
}

#[test]
fn precomputed_features_match_direct_multiframe() {
    let net = small_mf(3, 9);
    let mut r = rng(6);
    let frames: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut r, &[1, 3, 16, 20])).collect();
    let feats: Vec<Tensor> = frames.iter().map(|f| net.predict_features(f).unwrap()).collect();
    assert_eq!(net.predict_from_features(&feats, (16, 20)).unwrap(), net.predict_multiframe(&frames).unwrap());
}

fn lstm(scale: f64, seed: u64) -> Network {
    Network::build(NetworkSpec::new(Architecture::Lstm).with_scale(scale), seed).unwrap()
}

#[test]
fn lstm_zero_weights_zero_state() {
    let mut net = lstm(0.25, 3);
    zero_all(&mut net);
    let img = random_tensor(&mut rng(7), &[1, 3, 16, 16]);
    let (scores, next) = net.predict_step(&img, &net.zero_state(1, 16, 16)).unwrap();
    assert!(softmax_channels(&scores).unwrap().data().iter().all(|&p| p == 0.5));
    assert!(next.cell.data().iter().all(|&v| v == 0.0));
    assert!(next.hidden.data().iter().all(|&v| v == 0.0));
}

#[test]
fn forced_gates_hold_cell_state() {
    let mut net = lstm(0.25, 4);
    let r = net.recurrent_channels();
    net.param_mut("gates.weight").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let bias = net.param_mut("gates.bias").unwrap().data_mut();
    bias[..r].iter_mut().for_each(|v| *v = -800.0);
    bias[r..2 * r].iter_mut().for_each(|v| *v = 800.0);
    let mut g = rng(8);
    let mut state = net.zero_state(1, 16, 16);
    state.cell = random_tensor(&mut g, state.cell.shape());
    let initial = state.cell.clone();
    for _ in 0..4 {
        let img = random_tensor(&mut g, &[1, 3, 16, 16]);
        state = net.predict_step(&img, &state).unwrap().1;
        assert_eq!(state.cell, initial);
    }
}

#[test]
fn state_shape_mismatch_is_rejected() {
    let net = lstm(0.25, 4);
    let img = Tensor::zeros(&[1, 3, 16, 16]);
    let state = net.zero_state(1, 16, 20);
    assert!(matches!(net.predict_step(&img, &state), Err(NnError::StateMismatch(_))));
}

#[test]
fn sequence_threads_state() {
    let net = lstm(0.25, 12);
    let mut g = rng(9);
    let frames: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut g, &[1, 3, 16, 16])).collect();
    let seq = net.predict_sequence(&frames, &SequenceInit::Zeros).unwrap();
    let mut state = net.zero_state(1, 16, 16);
    for (t, f) in frames.iter().enumerate() {
        let (s, next) = net.predict_step(f, &state).unwrap();
        assert_eq!(s, seq[t]);
        assert_eq!(next.prev_prediction, s);
        state = next;
    }
    let single = net.predict_sequence(&frames[..1], &SequenceInit::Zeros).unwrap();
    assert_eq!(single[0], net.predict_step(&frames[0], &net.zero_state(1, 16, 16)).unwrap().0);
}

#[test]
fn ground_truth_init_changes_first_step() {
    let net = lstm(0.25, 13);
    let img = random_tensor(&mut rng(10), &[1, 3, 16, 16]);
    let labels: Vec<u8> = (0..256).map(|i| u8::from((i / 16) > 8)).collect();
    let a = net.predict_sequence(&[img.clone()], &SequenceInit::Zeros).unwrap();
    let b = net.predict_sequence(&[img.clone()], &SequenceInit::GroundTruth(labels)).unwrap();
    let delta = a[0].data().iter().zip(b[0].data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(delta > 0.0);
    assert!(matches!(net.predict_sequence(&[img], &SequenceInit::GroundTruth(Vec::new())), Err(NnError::MissingGroundTruth)));
    assert!(matches!(net.predict_sequence(&[], &SequenceInit::Zeros), Err(NnError::NoFrames)));
}

/// Summed per-step loss over an unrolled sequence.
fn unrolled_loss(net: &Network, frames: &[Tensor], labels: &[Vec<u8>], tape: &mut Tape, trainable: bool) -> (Var, Vec<Var>) {
    let bound = net.bind(tape, trainable);
    let inputs: Vec<Var> = frames.iter().map(|f| tape.constant(f.clone())).collect();
    let (scores, _) = net.forward_sequence(tape, &bound, &inputs, &SequenceInit::GroundTruth(labels[0].clone())).unwrap();
    let mut total = None;
    for (s, l) in scores.iter().zip(&labels[1..]) {
        let loss = tape.weighted_softmax_loss(*s, l, &[0.3, 1.0]).unwrap();
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss).unwrap(),
        });
    }
    (total.unwrap(), bound.vars().to_vec())
}

#[test]
fn unrolled_gradient_matches_finite_differences() {
    let mut net = lstm(0.125, 31);
    let steps = 32;
    let (h, w) = (8, 8);
    let mut g = rng(11);
    // Zero biases with dead pixels put ReLU inputs exactly on the kink,
    // where central differences are meaningless; move to a generic point.
    for (name, t) in net.params_mut() {
        if name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v += g.random_range(-0.1..0.1));
        }
    }
    let frames: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut g, &[1, 3, h, w])).collect();
    let labels: Vec<Vec<u8>> =
        (0..=steps).map(|_| (0..h * w).map(|_| u8::from(g.random_bool(0.4))).collect()).collect();
    let params: Vec<Tensor> = net.params().iter().map(|(_, t)| t.clone()).collect();

    let mut tape = Tape::new();
    let (loss, vars) = unrolled_loss(&net, &frames, &labels, &mut tape, true);
    tape.backward(loss).unwrap();

    let eval = |p: &[Tensor]| {
        let named = net.params().iter().zip(p).map(|((n, _), t)| (n.clone(), t.clone())).collect();
        let perturbed = Network::from_params(net.spec().clone(), named).unwrap();
        let mut tape = Tape::new();
        let (loss, _) = unrolled_loss(&perturbed, &frames, &labels, &mut tape, false);
        tape.value(loss).data()[0]
    };
    let step = 1e-6;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (pi, v) in vars.iter().enumerate() {
        let grad = tape.grad(*v).unwrap().to_vec();
        for _ in 0..3 {
            let j = g.random_range(0..params[pi].len());
            let mut work = params.clone();
            work[pi].data_mut()[j] += step;
            let up = eval(&work);
            work[pi].data_mut()[j] -= 2.0 * step;
            let down = eval(&work);
            analytic.push(grad[j]);
            numeric.push((up - down) / (2.0 * step));

        }
    }
    let err = rel_err(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn cell_state_growth_is_bounded(seed in 0u64..1000, steps in 1usize..5) {
        let net = lstm(0.125, seed);
        let mut g = rng(seed + 1);
        let mut state = net.zero_state(1, 8, 8);
        state.cell = random_tensor(&mut g, state.cell.shape());
        let c0 = state.cell.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 1..=steps {
            let img = random_tensor(&mut g, &[1, 3, 8, 8]);
            state = net.predict_step(&img, &state).unwrap().1;
            let ct = state.cell.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(ct <= c0 + t as f64 + 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.lnet");
    let mut spec = NetworkSpec::new(Architecture::MultiFrame).with_scale(0.25);
    spec.window = 4;
    spec.num_input_channels = 4;
    let net = Network::build(spec, 17).unwrap();
    save_checkpoint(&net, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, net);
    let again = dir.path().join("again.lnet");
    save_checkpoint(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"LNET");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
}

#[test]
fn checkpoint_records_and_corruption() {
    let records = vec![
        ("a".to_string(), Tensor::new(vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 3.0]).unwrap()),
        ("scalar".to_string(), Tensor::scalar(std::f64::consts::PI)),
    ];
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &records).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 2);
    for ((n0, t0), (n1, t1)) in records.iter().zip(&back) {
        assert_eq!(n0, n1);
        assert_eq!(t0.shape(), t1.shape());
        assert!(t0.data().iter().zip(t1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(read_checkpoint(bad.as_slice()).is_err());
    assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
}
