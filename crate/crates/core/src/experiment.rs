//! The four experiments: fixed- and multi-viewpoint detection, tracking on
//! segmented input, and combined detection and tracking from a warm start.

use crate::dataset::{split, Dataset, DatasetError, Sequence, SplitMode};
use crate::metrics::{default_thresholds, export_heatmap, pr_curve, slack_counts, write_pr_csv, MetricsError, PrPoint, ProbMap, SlackCounts, DEFAULT_SLACKS};
use crate::nn::{load_checkpoint, save_checkpoint, Architecture, Network, NetworkSpec, NnError, SequenceInit};
use crate::render::VISIBLE_LIQUID;
use crate::tensor::{softmax_channels, Tensor};
use crate::train::{train_network, write_loss_csv, LossRecord, Phase, Task, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

pub const REPORT_FILE: &str = "report.json";
pub const MODEL_FILE: &str = "model.lnet";
pub const PR_FILE: &str = "pr.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("warm-start checkpoint {0} not found")]
    MissingWarmStart(PathBuf),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    DetectFixed,
    DetectMultiview,
    TrackFixed,
    DetectAndTrack,
}

impl Experiment {
    pub fn task(self) -> Task {
        match self {
            Experiment::DetectFixed | Experiment::DetectMultiview => Task::Detection,
            Experiment::TrackFixed => Task::Tracking,
            Experiment::DetectAndTrack => Task::Combined,
        }
    }

    pub fn split_mode(self) -> SplitMode {
        match self {
            Experiment::DetectMultiview => SplitMode::Viewpoint,
            _ => SplitMode::RandomHoldout,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::DetectFixed => "detect_fixed",
            Experiment::DetectMultiview => "detect_multiview",
            Experiment::TrackFixed => "track_fixed",
            Experiment::DetectAndTrack => "detect_and_track",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "detect_fixed" => Ok(Experiment::DetectFixed),
            "detect_multiview" => Ok(Experiment::DetectMultiview),
            "track_fixed" => Ok(Experiment::TrackFixed),
            "detect_and_track" => Ok(Experiment::DetectAndTrack),
            _ => Err(format!("unknown experiment {s:?} (detect_fixed | detect_multiview | track_fixed | detect_and_track)")),
        }
    }
}

/// Architecture names as used on the command line.
pub fn parse_architecture(s: &str) -> std::result::Result<Architecture, String> {
    match s {
        "cnn" => Ok(Architecture::SingleFrame),
        "mf_cnn" => Ok(Architecture::MultiFrame),
        "lstm_cnn" => Ok(Architecture::Lstm),
        _ => Err(format!("unknown architecture {s:?} (cnn | mf_cnn | lstm_cnn)")),
    }
}

pub fn architecture_name(a: Architecture) -> &'static str {
    match a {
        Architecture::SingleFrame => "cnn",
        Architecture::MultiFrame => "mf_cnn",
        Architecture::Lstm => "lstm_cnn",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub architecture: Architecture,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub scale: f64,
    /// Frames per prediction of the multi-frame network.
    pub window: usize,
    /// Crop pre-training iterations before the full-image phase; detection only.
    pub crop_iterations: usize,
    pub split_seed: u64,
    /// Network initialization seed.
    pub init_seed: u64,
    /// Checkpoint the combined experiment starts from.
    pub warm_start: Option<PathBuf>,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults for one experiment.
    pub fn desk(experiment: Experiment, architecture: Architecture, dataset: PathBuf, output: PathBuf) -> Self {
        let tracking = experiment == Experiment::TrackFixed;
        Self {
            experiment,
            architecture,
            dataset,
            output,
            scale: 0.25,
            window: 8,
            crop_iterations: if tracking || experiment == Experiment::DetectAndTrack { 0 } else { 500 },
            split_seed: 0,
            init_seed: 0,
            warm_start: None,
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: match architecture {
                    Architecture::SingleFrame => 4,
                    Architecture::MultiFrame => 1,
                    Architecture::Lstm if tracking => 1,
                    Architecture::Lstm => 2,
                },
                unroll: if tracking { 48 } else { 16 },
                ..TrainConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if matches!(self.experiment, Experiment::DetectMultiview | Experiment::DetectAndTrack) && self.architecture != Architecture::Lstm {
            return bad(format!("experiment {} requires architecture lstm_cnn", self.experiment.name()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale must be > 0, got {}", self.scale));
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.experiment == Experiment::DetectAndTrack && self.warm_start.is_none() {
            return bad("warm_start is required for detect_and_track".into());
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut spec = NetworkSpec::new(self.architecture).with_scale(self.scale);
        if self.architecture == Architecture::MultiFrame {
            spec.window = self.window;
        }
        if self.experiment == Experiment::TrackFixed {
            spec = spec.tracking();
        }
        spec
    }
}

/// Liquid probability maps for every frame of `seq`. The multi-frame network
/// repeats the first frame to fill its window at the sequence start; the
/// LSTM starts from a zero state.
pub fn predict_probabilities(net: &Network, seq: &Sequence, task: Task) -> Result<Vec<ProbMap>> {
    let inputs: Vec<Tensor> = seq.frames.iter().map(|f| task.input(f)).collect();
    let scores: Vec<Tensor> = match net.spec().architecture {
        Architecture::SingleFrame => inputs.iter().map(|x| net.predict_single(x)).collect::<std::result::Result<_, _>>()?,
        Architecture::MultiFrame => {
            let feats: Vec<Tensor> = inputs.iter().map(|x| net.predict_features(x)).collect::<std::result::Result<_, _>>()?;
            let w = net.spec().window;
            let hw = (seq.header.height as usize, seq.header.width as usize);
            (0..feats.len())
                .map(|t| {
                    let window: Vec<Tensor> = (0..w).map(|k| feats[(t + k + 1).saturating_sub(w)].clone()).collect();
                    net.predict_from_features(&window, hw)
                })
                .collect::<std::result::Result<_, _>>()?
        }
        Architecture::Lstm => net.predict_sequence(&inputs, &SequenceInit::Zeros)?,
    };
    scores
        .iter()
        .map(|s| {
            let p = softmax_channels(s)?;
            let (_, _, h, w) = p.dims4()?;
            let data = p.data()[h * w..2 * h * w].iter().map(|v| v.clamp(0.0, 1.0)).collect();
            Ok(ProbMap { width: w, height: h, data })
        })
        .collect::<std::result::Result<_, NnError>>()
        .map_err(Into::into)
}

/// Liquid the current frame gives no evidence of: labeled liquid that is
/// not the visible class.
pub fn occluded_liquid(f: &crate::render::LabeledFrame) -> Vec<u8> {
    f.tracking_target().iter().zip(&f.visible).map(|(&t, &v)| (t == 1 && v != VISIBLE_LIQUID) as u8).collect()
}

/// Predictions and targets over a test set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub probs: Vec<ProbMap>,
    pub targets: Vec<Vec<u8>>,
    pub occluded: Vec<Vec<u8>>,
}

pub fn evaluate(net: &Network, test: &[Sequence], task: Task) -> Result<Evaluation> {
    let mut ev = Evaluation { probs: Vec::new(), targets: Vec::new(), occluded: Vec::new() };
    for s in test {
        ev.probs.extend(predict_probabilities(net, s, task)?);
        ev.targets.extend(s.frames.iter().map(|f| task.target(f)));
        ev.occluded.extend(s.frames.iter().map(occluded_liquid));
    }
    Ok(ev)
}

impl Evaluation {
    pub fn curve(&self, slacks: &[usize], thresholds: &[f64]) -> Result<Vec<PrPoint>> {
        Ok(pr_curve(&self.probs, &self.targets, slacks, thresholds)?)
    }

    /// Slack recall restricted to occluded liquid at `threshold`.
    pub fn occluded_recall(&self, threshold: f64, slack: usize) -> Result<SlackCounts> {
        let mut total = SlackCounts::default();
        for (p, g) in self.probs.iter().zip(&self.occluded) {
            total = total + slack_counts(&p.binarize(threshold), g, p.width, p.height, slack)?;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phase: Phase,
    pub iterations: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccludedRecall {
    pub slack: usize,
    pub recall: f64,
    pub fn_: u64,
    pub gt_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub architecture: Architecture,
    pub task: Task,
    pub config: ExperimentConfig,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub test_view_scales: Vec<f64>,
    /// Phases in the order they ran.
    pub phases: Vec<PhaseTrace>,
    /// Points at threshold 0.5, one per slack.
    pub final_points: Vec<PrPoint>,
    pub occluded_recall: Vec<OccludedRecall>,
    pub model: String,
}

impl ExperimentReport {
    pub fn point(&self, slack: usize) -> Option<&PrPoint> {
        self.final_points.iter().find(|p| p.slack == slack)
    }
}

fn write_phase(out: &Path, phase: Phase, trace: &[LossRecord]) -> Result<PhaseTrace> {
    let name = match phase {
        Phase::CropPretrain => "loss_crop_pretrain.csv",
        Phase::FullImage => "loss_full_image.csv",
    };
    write_loss_csv(trace, std::io::BufWriter::new(std::fs::File::create(out.join(name))?))?;
    Ok(PhaseTrace {
        phase,
        iterations: trace.len(),
        first_loss: trace.first().map_or(f64::NAN, |r| r.loss),
        last_loss: trace.last().map_or(f64::NAN, |r| r.loss),
        csv: name.to_string(),
    })
}

/// Train, evaluate and write the report, model, loss CSVs, PR CSV and one
/// heatmap per test sequence (its frame with the most target liquid).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let task = cfg.experiment.task();
    let mut net = match &cfg.warm_start {
        Some(path) => {
            if !path.exists() {
                return Err(ExperimentError::MissingWarmStart(path.clone()));
            }
            let net = load_checkpoint(path)?;
            if net.spec().architecture != cfg.architecture || net.spec().num_input_channels != task.input_channels() {
                return Err(ExperimentError::InvalidConfig(format!("warm-start checkpoint {} does not match the experiment's network", path.display())));
            }
            net
        }
        None => Network::build(cfg.network_spec(), cfg.init_seed)?,
    };
    let data = Dataset::load(&cfg.dataset)?;
    let (train_ids, test_ids) = split(&data.entries, cfg.experiment.split_mode(), cfg.split_seed)?;
    let train = data.subset(&train_ids)?;
    let test = data.subset(&test_ids)?;
    std::fs::create_dir_all(&cfg.output)?;

    let mut phases = Vec::new();
    if cfg.crop_iterations > 0 && cfg.experiment != Experiment::TrackFixed {
        let crop_cfg = TrainConfig { iterations: cfg.crop_iterations, ..cfg.train.clone() };
        let trace = train_network(&mut net, &train.sequences, &crop_cfg, task, Phase::CropPretrain)?;
        phases.push(write_phase(&cfg.output, Phase::CropPretrain, &trace)?);
    }
    let full_cfg = TrainConfig { seed: cfg.train.seed.wrapping_add(1), ..cfg.train.clone() };
    let trace = train_network(&mut net, &train.sequences, &full_cfg, task, Phase::FullImage)?;
    phases.push(write_phase(&cfg.output, Phase::FullImage, &trace)?);
    let model = cfg.output.join(MODEL_FILE);
    save_checkpoint(&net, &model)?;

    let ev = evaluate(&net, &test.sequences, task)?;
    let curve = ev.curve(&DEFAULT_SLACKS, &default_thresholds())?;
    write_pr_csv(&curve, std::io::BufWriter::new(std::fs::File::create(cfg.output.join(PR_FILE))?))?;
    let final_points = ev.curve(&DEFAULT_SLACKS, &[0.5])?;
    let occluded_recall = DEFAULT_SLACKS
        .iter()
        .map(|&slack| {
            let c = ev.occluded_recall(0.5, slack)?;
            Ok(OccludedRecall { slack, recall: c.recall(), fn_: c.counts.fn_, gt_total: c.gt_total })
        })
        .collect::<Result<Vec<_>>>()?;
    write_heatmaps(&cfg.output, &test, &ev)?;

    let report = ExperimentReport {
        experiment: cfg.experiment,
        architecture: cfg.architecture,
        task,
        config: cfg.clone(),
        train_ids,
        test_view_scales: test.entries.iter().map(|e| e.render.view.scale).collect(),
        test_ids,
        phases,
        final_points,
        occluded_recall,
        model: MODEL_FILE.to_string(),
    };
    std::fs::write(cfg.output.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

fn write_heatmaps(out: &Path, test: &Dataset, ev: &Evaluation) -> Result<()> {
    let dir = out.join("heatmaps");
    std::fs::create_dir_all(&dir)?;
    let mut offset = 0;
    for (e, s) in test.entries.iter().zip(&test.sequences) {
        let n = s.frames.len();
        let best = (0..n).max_by_key(|&k| (ev.targets[offset + k].iter().filter(|&&t| t == 1).count(), std::cmp::Reverse(k))).unwrap_or(0);
        export_heatmap(&ev.probs[offset + best], &dir.join(format!("seq_{:05}_frame_{best:03}.pgm", e.id)))?;
        offset += n;
    }
    Ok(())
}
