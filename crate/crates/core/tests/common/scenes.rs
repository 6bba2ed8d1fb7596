//! Small rendered scenes shared by the training and acceptance tests.

use liquid::dataset::{Sequence, SequenceHeader, LSEQ_VERSION};
use liquid::nn::Network;
use liquid::render::{render_frame, LabeledFrame, RenderConfig, LABEL_LIQUID, VISIBLE_LIQUID};
use liquid::sim::{run_simulation, BowlShape, CupShape, SimConfig, Trajectory};
use liquid::tensor::softmax_channels;
use liquid::train::{evaluate_loss, Example, Task, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

pub fn blank_frame(w: usize, h: usize) -> LabeledFrame {
    LabeledFrame { width: w, height: h, image: vec![0; w * h * 3], multilabel: vec![0; w * h], visible: vec![0; w * h] }
}

pub fn set_liquid(f: &mut LabeledFrame, x: usize, y: usize) {
    let i = y * f.width + x;
    f.visible[i] = VISIBLE_LIQUID;
    f.multilabel[i] = LABEL_LIQUID;
}

pub fn sequence(frames: Vec<LabeledFrame>, has_liquid: bool) -> Sequence {
    let (w, h) = (frames[0].width as u32, frames[0].height as u32);
    Sequence {
        header: SequenceHeader { version: LSEQ_VERSION, width: w, height: h, frames: frames.len() as u32, sim_config_hash: 0, render_config_hash: 0, has_liquid },
        frames,
    }
}

/// A real pour rendered at 64x48.
pub fn pour() -> &'static Sequence {
    static SEQ: OnceLock<Sequence> = OnceLock::new();
    SEQ.get_or_init(|| {
        let mut c = SimConfig::new(CupShape::Mug, BowlShape::FruitBowl, 0.9, Trajectory::Fast);
        c.frames = 15;
        c.fps = 1.0;
        c.steps_per_frame = 1280;
        let r = RenderConfig::new(64, 48);
        let frames = run_simulation(&c).unwrap().iter().map(|f| render_frame(f, &r).unwrap()).collect();
        sequence(frames, true)
    })
}

pub fn frame_example(f: &LabeledFrame) -> Example {
    Example { inputs: vec![Task::Detection.input(f)], targets: vec![f.detection_target()], init: vec![] }
}

pub fn sequence_loss(net: &Network, s: &Sequence, cfg: &TrainConfig) -> f64 {
    s.frames.iter().map(|f| evaluate_loss(net, &frame_example(f), cfg).unwrap()).sum::<f64>() / s.frames.len() as f64
}

/// Frames with four identical bright squares of which one, chosen at
/// random, is liquid: every square pixel is liquid with probability 1/4.
pub fn decoy_sequence(seed: u64, frames: usize) -> Sequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = [(2usize, 2usize), (18, 2), (2, 18), (18, 18)];
    let out = (0..frames)
        .map(|_| {
            let mut f = blank_frame(32, 32);
            for v in f.image.iter_mut() {
                *v = rng.random_range(0..80);
            }
            let mut order = slots;
            order.shuffle(&mut rng);
            for (k, &(sx, sy)) in order.iter().enumerate() {
                let (ox, oy) = (sx + rng.random_range(0..8), sy + rng.random_range(0..8));
                for y in oy..oy + 4 {
                    for x in ox..ox + 4 {
                        let i = y * 32 + x;
                        f.image[i * 3..i * 3 + 3].copy_from_slice(&[230, 230, 230]);
                        if k == 0 {
                            set_liquid(&mut f, x, y);
                        }
                    }
                }
            }
            f
        })
        .collect();
    sequence(out, true)
}

pub fn predicted_positives(net: &Network, s: &Sequence) -> usize {
    s.frames
        .iter()
        .map(|f| {
            let p = softmax_channels(&net.predict_single(&Task::Detection.input(f)).unwrap()).unwrap();
            let plane = f.width * f.height;
            p.data()[plane..].iter().filter(|&&q| q >= 0.5).count()
        })
        .sum()
}
