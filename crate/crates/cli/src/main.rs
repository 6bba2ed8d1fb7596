//! `liquid`: simulate, render, generate datasets, train, evaluate and infer.
//!
//! Every subcommand reads its settings from built-in desk defaults, then an
//! optional `--config` file of `key = value` lines, then command-line flags.
//! `--dump-config` prints the resolved settings in the config-file format.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use liquid::dataset::{generate_dataset, load_sequence, save_sequence, split, Dataset, DatasetConfig, Sequence, SequenceHeader, LSEQ_VERSION};
use liquid::experiment::{
    architecture_name, evaluate, parse_architecture, run_experiment, Experiment, ExperimentConfig, ExperimentReport, PR_FILE,
};
use liquid::metrics::{default_thresholds, export_heatmap, write_pr_csv, DEFAULT_SLACKS};
use liquid::nn::{load_checkpoint, Architecture};
use liquid::pnm::{write_pgm, write_ppm};
use liquid::render::{render_frame, RenderConfig, ViewConfig};
use liquid::sim::{run_simulation, write_fill_pgm, BowlShape, CupShape, SimConfig, Trajectory};
use liquid::train::Task;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "liquid", version, about = "Liquid pouring simulation, rendering, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one pouring simulation and dump per-frame fill grids.
    Simulate(SimulateArgs),
    /// Simulate and render one labeled sequence.
    Render(RenderArgs),
    /// Generate a dataset of labeled sequences.
    Dataset(DatasetArgs),
    /// Train a network for one experiment and evaluate it on the held-out split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on an experiment's test split.
    Eval(EvalArgs),
    /// Write per-frame liquid heatmaps for one sequence.
    Infer(InferArgs),
}

#[derive(Args, Serialize)]
struct Common {
    /// Settings file with `key = value` lines.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Print the resolved settings and exit.
    #[arg(long)]
    #[serde(skip)]
    dump_config: bool,
}

#[derive(Args, Serialize)]
struct SimArgs {
    #[arg(long)]
    cup: Option<String>,
    #[arg(long)]
    bowl: Option<String>,
    #[arg(long)]
    fill: Option<f64>,
    #[arg(long)]
    trajectory: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    steps_per_frame: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    sim: SimArgs,
}

#[derive(Args, Serialize)]
struct RenderArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    sim: SimArgs,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    background: Option<u8>,
    #[arg(long)]
    cup_texture: Option<u8>,
    #[arg(long)]
    bowl_texture: Option<u8>,
    #[arg(long)]
    refraction: Option<f64>,
    #[arg(long)]
    specular: Option<bool>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    hflip: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    v_offset: Option<i32>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    render_seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct DatasetArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    negative_fraction: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    steps_per_frame: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    fixed_view: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    crop_iterations: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    unroll: Option<usize>,
    #[arg(long)]
    crop_unroll: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    positive_weight: Option<f64>,
    #[arg(long)]
    negative_weight: Option<f64>,
    #[arg(long)]
    crop_size: Option<usize>,
    #[arg(long)]
    negative_crop_probability: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    warm_start: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct InferArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    sequence: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimSettings {
    cup: CupShape,
    bowl: BowlShape,
    fill: f64,
    trajectory: Trajectory,
    frames: usize,
    fps: f64,
    steps_per_frame: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::new(CupShape::Cup, BowlShape::Bowl, 0.6, Trajectory::Slow);
        Self {
            cup: d.cup_shape,
            bowl: d.bowl_shape,
            fill: d.fill_level,
            trajectory: d.trajectory,
            frames: d.frames,
            fps: d.fps,
            steps_per_frame: d.steps_per_frame,
            seed: d.seed,
            out: "sim_out".into(),
        }
    }
}

impl SimSettings {
    fn config(&self) -> SimConfig {
        let mut c = SimConfig::new(self.cup, self.bowl, self.fill, self.trajectory);
        c.frames = self.frames;
        c.fps = self.fps;
        c.steps_per_frame = self.steps_per_frame;
        c.seed = self.seed;
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RenderSettings {
    #[serde(flatten)]
    sim: SimSettings,
    width: usize,
    height: usize,
    background: u8,
    cup_texture: u8,
    bowl_texture: u8,
    refraction: f64,
    specular: bool,
    scale: f64,
    hflip: bool,
    v_offset: i32,
    noise: f64,
    render_seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        let r = RenderConfig::new(64, 48);
        Self {
            sim: SimSettings { out: "render_out".into(), ..SimSettings::default() },
            width: r.width,
            height: r.height,
            background: r.background,
            cup_texture: r.cup_texture,
            bowl_texture: r.bowl_texture,
            refraction: r.refraction_strength,
            specular: r.specular,
            scale: r.view.scale,
            hflip: r.view.hflip,
            v_offset: r.view.v_offset,
            noise: r.noise_sigma,
            render_seed: r.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSettings {
    n: usize,
    seed: u64,
    negative_fraction: f64,
    frames: usize,
    fps: f64,
    steps_per_frame: usize,
    width: usize,
    height: usize,
    fixed_view: bool,
    out: PathBuf,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            n: d.n_sequences,
            seed: d.seed,
            negative_fraction: d.negative_fraction,
            frames: d.frames,
            fps: d.fps,
            steps_per_frame: d.steps_per_frame,
            width: d.width,
            height: d.height,
            fixed_view: d.fixed_view,
            out: "data".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSettings {
    experiment: Experiment,
    arch: String,
    dataset: PathBuf,
    out: PathBuf,
    scale: f64,
    window: usize,
    crop_iterations: usize,
    iterations: usize,
    batch_size: usize,
    unroll: usize,
    crop_unroll: usize,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    positive_weight: f64,
    negative_weight: f64,
    crop_size: usize,
    negative_crop_probability: f64,
    checkpoint_every: usize,
    seed: u64,
    split_seed: u64,
    /// Empty for a fresh network.
    warm_start: PathBuf,
}

impl TrainSettings {
    fn desk(experiment: Experiment, arch: Architecture) -> Self {
        let c = ExperimentConfig::desk(experiment, arch, "data".into(), PathBuf::from("runs").join(format!("{}_{}", experiment.name(), architecture_name(arch))));
        let t = &c.train;
        Self {
            experiment,
            arch: architecture_name(arch).into(),
            dataset: c.dataset,
            out: c.output,
            scale: c.scale,
            window: c.window,
            crop_iterations: c.crop_iterations,
            iterations: t.iterations,
            batch_size: t.batch_size,
            unroll: t.unroll,
            crop_unroll: t.crop_unroll,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            positive_weight: t.positive_weight,
            negative_weight: t.negative_weight,
            crop_size: t.crop_size,
            negative_crop_probability: t.negative_crop_probability,
            checkpoint_every: t.checkpoint_every,
            seed: t.seed,
            split_seed: c.split_seed,
            warm_start: PathBuf::new(),
        }
    }

    fn experiment_config(&self) -> Result<ExperimentConfig> {
        let arch = parse_architecture(&self.arch).map_err(|e| anyhow!("arch: {e}"))?;
        let mut c = ExperimentConfig::desk(self.experiment, arch, self.dataset.clone(), self.out.clone());
        c.scale = self.scale;
        c.window = self.window;
        c.crop_iterations = self.crop_iterations;
        c.split_seed = self.split_seed;
        c.init_seed = self.seed;
        c.warm_start = (!self.warm_start.as_os_str().is_empty()).then(|| self.warm_start.clone());
        let t = &mut c.train;
        t.iterations = self.iterations;
        t.batch_size = self.batch_size;
        t.unroll = self.unroll;
        t.crop_unroll = self.crop_unroll;
        t.learning_rate = self.learning_rate;
        t.beta1 = self.beta1;
        t.beta2 = self.beta2;
        t.epsilon = self.epsilon;
        t.positive_weight = self.positive_weight;
        t.negative_weight = self.negative_weight;
        t.crop_size = self.crop_size;
        t.negative_crop_probability = self.negative_crop_probability;
        t.checkpoint_every = self.checkpoint_every;
        t.checkpoint_dir = (self.checkpoint_every > 0).then(|| self.out.join("checkpoints"));
        t.seed = self.seed;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSettings {
    model: PathBuf,
    dataset: PathBuf,
    experiment: Experiment,
    split_seed: u64,
    out: PathBuf,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { model: "model.lnet".into(), dataset: "data".into(), experiment: Experiment::DetectFixed, split_seed: 0, out: "eval_out".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InferSettings {
    model: PathBuf,
    sequence: PathBuf,
    /// `auto` picks tracking for 4-channel networks and detection otherwise.
    task: String,
    out: PathBuf,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self { model: "model.lnet".into(), sequence: "sequence.lseq".into(), task: "auto".into(), out: "infer_out".into() }
    }
}

/// `key = value` pairs; `#` starts a comment, dashes in keys read as underscores.
fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), n + 1))?;
        pairs.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parse `raw` with the JSON type of the value it replaces.
fn coerce(key: &str, raw: &str, current: &Value) -> Result<Value> {
    let fail = || anyhow!("invalid value {raw:?} for {key}");
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| fail())?),
        Value::Number(n) if n.is_f64() => serde_json::json!(raw.parse::<f64>().map_err(|_| fail())?),
        Value::Number(n) if n.is_i64() && n.as_i64().unwrap_or(0) < 0 => serde_json::json!(raw.parse::<i64>().map_err(|_| fail())?),
        Value::Number(_) => match raw.parse::<u64>() {
            Ok(v) => serde_json::json!(v),
            Err(_) => serde_json::json!(raw.parse::<i64>().map_err(|_| fail())?),
        },
        _ => Value::String(raw.to_string()),
    })
}

/// Defaults, then the config file, then flags; every key must be known.
fn resolve<S: Serialize + DeserializeOwned>(defaults: &S, common: &Common, flags: &impl Serialize) -> Result<S> {
    let mut map: Map<String, Value> = match serde_json::to_value(defaults)? {
        Value::Object(m) => m,
        _ => unreachable!("settings serialize to objects"),
    };
    if let Some(path) = &common.config {
        for (k, raw) in read_config_file(path)? {
            let current = map.get(&k).ok_or_else(|| anyhow!("{}: unknown setting {k:?}", path.display()))?;
            let v = coerce(&k, &raw, current)?;
            map.insert(k, v);
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| anyhow!("invalid settings: {e}"))
}

fn dump<S: Serialize>(settings: &S) -> Result<()> {
    if let Value::Object(m) = serde_json::to_value(settings)? {
        for (k, v) in m {
            match v {
                Value::String(s) => println!("{k} = {s}"),
                other => println!("{k} = {other}"),
            }
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let s: SimSettings = resolve(&SimSettings::default(), &a.common, &a.sim)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let cfg = s.config();
    let frames = run_simulation(&cfg).context("simulation failed")?;
    std::fs::create_dir_all(&s.out)?;
    let mut meta = Vec::with_capacity(frames.len());
    for f in &frames {
        write_fill_pgm(f, &s.out.join(format!("fill_{:03}.pgm", f.index)))?;
        meta.push(serde_json::json!({ "index": f.index, "time": f.time, "cup_angle": f.cup_angle, "total_fill": f.total_fill() }));
    }
    std::fs::write(s.out.join("frames.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    std::fs::write(s.out.join("sim.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!("wrote {} frames to {}", frames.len(), s.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    let s: RenderSettings = resolve(&RenderSettings::default(), &a.common, &a)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let sim = s.sim.config();
    let r = RenderConfig {
        width: s.width,
        height: s.height,
        background: s.background,
        cup_texture: s.cup_texture,
        bowl_texture: s.bowl_texture,
        refraction_strength: s.refraction,
        specular: s.specular,
        view: ViewConfig { scale: s.scale, hflip: s.hflip, v_offset: s.v_offset },
        noise_sigma: s.noise,
        seed: s.render_seed,
    };
    r.validate()?;
    let frames = run_simulation(&sim).context("simulation failed")?;
    let out = &s.sim.out;
    std::fs::create_dir_all(out)?;
    let mut rendered = Vec::with_capacity(frames.len());
    for f in &frames {
        let l = render_frame(f, &r)?;
        write_ppm(&out.join(format!("image_{:03}.ppm", f.index)), l.width, l.height, &l.image)?;
        let visible: Vec<u8> = l.visible.iter().map(|&v| v * 85).collect();
        write_pgm(&out.join(format!("visible_{:03}.pgm", f.index)), l.width, l.height, &visible)?;
        rendered.push(l);
    }
    let has_liquid = rendered.iter().any(|f| f.tracking_target().contains(&1));
    let seq = Sequence {
        header: SequenceHeader {
            version: LSEQ_VERSION,
            width: r.width as u32,
            height: r.height as u32,
            frames: rendered.len() as u32,
            sim_config_hash: liquid::dataset::config_hash(&sim),
            render_config_hash: liquid::dataset::config_hash(&r),
            has_liquid,
        },
        frames: rendered,
    };
    save_sequence(&seq, &out.join("sequence.lseq"))?;
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}

fn dataset(a: DatasetArgs) -> Result<()> {
    let s: DatasetSettings = resolve(&DatasetSettings::default(), &a.common, &a)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let cfg = DatasetConfig {
        n_sequences: s.n,
        negative_fraction: s.negative_fraction,
        frames: s.frames,
        fps: s.fps,
        steps_per_frame: s.steps_per_frame,
        width: s.width,
        height: s.height,
        fixed_view: s.fixed_view,
        seed: s.seed,
    };
    let entries = generate_dataset(&cfg, &s.out)?;
    println!("wrote {} sequences ({} negative) to {}", entries.len(), entries.iter().filter(|e| e.negative).count(), s.out.display());
    Ok(())
}

fn print_report(r: &ExperimentReport) {
    for p in &r.final_points {
        println!("slack {:>2}  threshold 0.5  precision {:.3}  recall {:.3}", p.slack, p.precision, p.recall);
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let pick = |flag: &Option<String>, key: &str| -> Result<Option<String>> {
        if flag.is_some() {
            return Ok(flag.clone());
        }
        match &a.common.config {
            Some(p) => Ok(read_config_file(p)?.into_iter().rev().find(|(k, _)| k == key).map(|(_, v)| v)),
            None => Ok(None),
        }
    };
    let experiment: Experiment = match pick(&a.experiment, "experiment")? {
        Some(e) => e.parse().map_err(|e| anyhow!("experiment: {e}"))?,
        None => Experiment::DetectFixed,
    };
    let arch = match pick(&a.arch, "arch")? {
        Some(s) => parse_architecture(&s).map_err(|e| anyhow!("arch: {e}"))?,
        None => Architecture::Lstm,
    };
    let s: TrainSettings = resolve(&TrainSettings::desk(experiment, arch), &a.common, &a)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let cfg = s.experiment_config()?;
    let spec = cfg.network_spec();
    println!(
        "{} / {}: {} input channels, {} initial convolutions, scale {}",
        experiment.name(),
        s.arch,
        spec.num_input_channels,
        spec.num_initial_convs,
        spec.scale
    );
    let report = run_experiment(&cfg)?;
    print_report(&report);
    println!("report written to {}", cfg.output.join(liquid::experiment::REPORT_FILE).display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let s: EvalSettings = resolve(&EvalSettings::default(), &a.common, &a)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let net = load_checkpoint(&s.model).with_context(|| format!("loading model {}", s.model.display()))?;
    let data = Dataset::load(&s.dataset).with_context(|| format!("loading dataset {}", s.dataset.display()))?;
    let (_, test_ids) = split(&data.entries, s.experiment.split_mode(), s.split_seed)?;
    let test = data.subset(&test_ids)?;
    let task = s.experiment.task();
    if net.spec().num_input_channels != task.input_channels() {
        bail!("model takes {} input channels but {} needs {}", net.spec().num_input_channels, s.experiment.name(), task.input_channels());
    }
    let ev = evaluate(&net, &test.sequences, task)?;
    let curve = ev.curve(&DEFAULT_SLACKS, &default_thresholds())?;
    std::fs::create_dir_all(&s.out)?;
    write_pr_csv(&curve, std::io::BufWriter::new(std::fs::File::create(s.out.join(PR_FILE))?))?;
    let dir = s.out.join("heatmaps");
    std::fs::create_dir_all(&dir)?;
    let mut k = 0;
    for (e, seq) in test.entries.iter().zip(&test.sequences) {
        for t in 0..seq.frames.len() {
            export_heatmap(&ev.probs[k], &dir.join(format!("seq_{:05}_frame_{t:03}.pgm", e.id)))?;
            k += 1;
        }
    }
    let finals = ev.curve(&DEFAULT_SLACKS, &[0.5])?;
    std::fs::write(s.out.join("eval.json"), serde_json::to_string_pretty(&serde_json::json!({ "test_ids": test_ids, "points": finals }))? + "\n")?;
    for p in &finals {
        println!("slack {:>2}  threshold 0.5  precision {:.3}  recall {:.3}", p.slack, p.precision, p.recall);
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let s: InferSettings = resolve(&InferSettings::default(), &a.common, &a)?;
    if a.common.dump_config {
        return dump(&s);
    }
    let net = load_checkpoint(&s.model).with_context(|| format!("loading model {}", s.model.display()))?;
    let seq = load_sequence(&s.sequence).with_context(|| format!("loading sequence {}", s.sequence.display()))?;
    let task = match s.task.as_str() {
        "auto" if net.spec().num_input_channels == 4 => Task::Tracking,
        "auto" => Task::Detection,
        other => other.parse().map_err(|e| anyhow!("task: {e}"))?,
    };
    if net.spec().num_input_channels != task.input_channels() {
        bail!("task: model takes {} input channels, {task:?} supplies {}", net.spec().num_input_channels, task.input_channels());
    }
    let probs = liquid::experiment::predict_probabilities(&net, &seq, task)?;
    std::fs::create_dir_all(&s.out)?;
    for (t, p) in probs.iter().enumerate() {
        export_heatmap(p, &s.out.join(format!("heatmap_{t:03}.pgm")))?;
    }
    println!("wrote {} heatmaps to {}", probs.len(), s.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Render(a) => render(a),
        Command::Dataset(a) => dataset(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
