//! Configuration enumeration, labeled-sequence generation and storage, and
//! train/test splits.

mod lseq;

pub use lseq::{load_sequence, read_header, read_sequence, save_sequence, write_sequence, Sequence, SequenceHeader, HEADER_LEN, LSEQ_MAGIC, LSEQ_VERSION};

use crate::render::{render_frame, RenderConfig, RenderError};
use crate::sim::{run_simulation, BowlShape, CupShape, SimConfig, SimError, SimFrame, Trajectory, FILL_LEVELS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

pub const INDEX_FILE: &str = "index.jsonl";
pub const CONFIG_FILE: &str = "dataset.json";
/// Redraws allowed for a positive sequence that never shows liquid.
const MAX_DRAWS: usize = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("sequence {id}: {source}")]
    Sequence {
        id: usize,
        #[source]
        source: Box<DatasetError>,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("split: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// First eight bytes (little-endian) of the SHA-256 of the JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hash of every fill grid of a simulation, in frame order.
pub fn fill_hash(frames: &[SimFrame]) -> u64 {
    let mut h = Sha256::new();
    for f in frames {
        for v in &f.fill {
            h.update(v.to_le_bytes());
        }
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// All 81 scene configurations in lexicographic order of
/// (cup, bowl, fill level, trajectory), with default simulation settings.
pub fn enumerate_sim_configs() -> Vec<SimConfig> {
    let mut out = Vec::with_capacity(81);
    for cup in CupShape::ALL {
        for bowl in BowlShape::ALL {
            for fill in FILL_LEVELS {
                for traj in Trajectory::ALL {
                    out.push(SimConfig::new(cup, bowl, fill, traj));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_sequences: usize,
    pub negative_fraction: f64,
    pub frames: usize,
    pub fps: f64,
    pub steps_per_frame: usize,
    pub width: usize,
    pub height: usize,
    /// Keep every camera at scale 1, unflipped and unshifted.
    pub fixed_view: bool,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { n_sequences: 40, negative_fraction: 0.2, frames: 60, fps: 4.0, steps_per_frame: 320, width: 64, height: 48, fixed_view: false, seed: 0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::InvalidConfig(m));
        if self.n_sequences < 1 {
            return bad("n_sequences must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return bad(format!("negative_fraction {} outside [0, 1]", self.negative_fraction));
        }
        if self.frames < 1 {
            return bad("frames must be >= 1".into());
        }
        RenderConfig::new(self.width, self.height).validate()?;
        self.sim_config(&enumerate_sim_configs()[0]).validate()?;
        Ok(())
    }

    pub fn negative_count(&self) -> usize {
        (self.n_sequences as f64 * self.negative_fraction).round() as usize
    }

    fn sim_config(&self, base: &SimConfig) -> SimConfig {
        SimConfig { frames: self.frames, fps: self.fps, steps_per_frame: self.steps_per_frame, ..base.clone() }
    }
}

/// One line of the dataset index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: usize,
    pub path: String,
    pub negative: bool,
    pub sim: SimConfig,
    pub render: RenderConfig,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub sim_config_hash: u64,
    pub render_config_hash: u64,
    pub fill_hash: u64,
    pub visible_liquid_frames: usize,
}

type SimCache = Vec<OnceLock<std::result::Result<Arc<(Vec<SimFrame>, u64)>, String>>>;

fn cached_sim(cache: &SimCache, configs: &[SimConfig], k: usize) -> Result<Arc<(Vec<SimFrame>, u64)>> {
    cache[k]
        .get_or_init(|| {
            run_simulation(&configs[k]).map(|frames| {
                let h = fill_hash(&frames);
                Arc::new((frames, h))
            })
            .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(|e| DatasetError::Format(format!("simulation {k} failed: {e}")))
}

fn build_sequence(cfg: &DatasetConfig, id: usize, negative: bool, configs: &[SimConfig], cache: &SimCache) -> Result<(Sequence, IndexEntry)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id as u64 + 1);
    for _ in 0..MAX_DRAWS {
        let k = rng.random_range(0..configs.len());
        let render = RenderConfig::sample(&mut rng, cfg.width, cfg.height, cfg.fixed_view);
        let sim = cached_sim(cache, configs, k)?;
        let frames = sim
            .0
            .iter()
            .map(|f| if negative { render_frame(&f.without_liquid(), &render) } else { render_frame(f, &render) })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let visible_liquid_frames = frames.iter().filter(|f| f.visible_liquid_pixels() > 0).count();
        if negative && frames.iter().any(|f| f.tracking_target().contains(&1)) {
            return Err(DatasetError::Format("negative sequence contains liquid labels".into()));
        }
        if !negative && visible_liquid_frames == 0 {
            continue;
        }
        let header = SequenceHeader {
            version: LSEQ_VERSION,
            width: cfg.width as u32,
            height: cfg.height as u32,
            frames: frames.len() as u32,
            sim_config_hash: config_hash(&configs[k]),
            render_config_hash: config_hash(&render),
            has_liquid: !negative,
        };
        let entry = IndexEntry {
            id,
            path: format!("seq_{id:05}.lseq"),
            negative,
            sim: configs[k].clone(),
            render,
            width: header.width,
            height: header.height,
            frames: header.frames,
            sim_config_hash: header.sim_config_hash,
            render_config_hash: header.render_config_hash,
            fill_hash: sim.1,
            visible_liquid_frames,
        };
        return Ok((Sequence { header, frames }, entry));
    }
    Err(DatasetError::Format(format!("no draw in {MAX_DRAWS} attempts showed visible liquid")))
}

/// Generate `cfg.n_sequences` labeled sequences into `dir`: LSEQ files, an
/// `index.jsonl` and the generating config. Each distinct scene is simulated
/// once and shared by every sequence that draws it.
pub fn generate_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Vec<IndexEntry>> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let configs: Vec<SimConfig> = enumerate_sim_configs().iter().map(|c| cfg.sim_config(c)).collect();
    let cache: SimCache = (0..configs.len()).map(|_| OnceLock::new()).collect();
    let mut order: Vec<usize> = (0..cfg.n_sequences).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut negative = vec![false; cfg.n_sequences];
    for &i in &order[..cfg.negative_count()] {
        negative[i] = true;
    }
    let entries = (0..cfg.n_sequences)
        .into_par_iter()
        .map(|id| {
            let wrap = |e: DatasetError| DatasetError::Sequence { id, source: Box::new(e) };
            let (seq, entry) = build_sequence(cfg, id, negative[id], &configs, &cache).map_err(wrap)?;
            save_sequence(&seq, &dir.join(&entry.path)).map_err(wrap)?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut index = std::io::BufWriter::new(std::fs::File::create(dir.join(INDEX_FILE))?);
    for e in &entries {
        serde_json::to_writer(&mut index, e)?;
        index.write_all(b"\n")?;
    }
    index.flush()?;
    std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(entries)
}

pub fn load_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let file = std::fs::File::open(dir.join(INDEX_FILE))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// An index plus every sequence, held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let entries = load_index(dir)?;
        let sequences = entries
            .iter()
            .map(|e| load_sequence(&dir.join(&e.path)).map_err(|err| DatasetError::Sequence { id: e.id, source: Box::new(err) }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { root: dir.to_path_buf(), entries, sequences })
    }

    /// Sequences whose ids are listed, in the listed order.
    pub fn subset(&self, ids: &[usize]) -> Result<Dataset> {
        let mut entries = Vec::with_capacity(ids.len());
        let mut sequences = Vec::with_capacity(ids.len());
        for &id in ids {
            let k = self.entries.iter().position(|e| e.id == id).ok_or_else(|| DatasetError::Split(format!("unknown sequence id {id}")))?;
            entries.push(self.entries[k].clone());
            sequences.push(self.sequences[k].clone());
        }
        Ok(Dataset { root: self.root.clone(), entries, sequences })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    RandomHoldout,
    Viewpoint,
}

impl std::str::FromStr for SplitMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random_holdout" => Ok(Self::RandomHoldout),
            "viewpoint" => Ok(Self::Viewpoint),
            _ => Err(format!("unknown split mode {s:?} (random_holdout | viewpoint)")),
        }
    }
}

/// Partition sequence ids into (train, test). Random holdout shuffles with
/// `seed` and keeps round(0.8 n) for training; viewpoint trains on view
/// scales 0.8 and 1.2 and tests on scale 1.0.
pub fn split(entries: &[IndexEntry], mode: SplitMode, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if entries.is_empty() {
        return Err(DatasetError::Split("dataset is empty".into()));
    }
    match mode {
        SplitMode::RandomHoldout => {
            let mut ids: Vec<usize> = entries.iter().map(|e| e.id).collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = (ids.len() as f64 * 0.8).round() as usize;
            let test = ids.split_off(n_train);
            Ok((ids, test))
        }
        SplitMode::Viewpoint => {
            let train: Vec<usize> = entries.iter().filter(|e| e.render.view.scale != 1.0).map(|e| e.id).collect();
            let test: Vec<usize> = entries.iter().filter(|e| e.render.view.scale == 1.0).map(|e| e.id).collect();
            if test.is_empty() {
                return Err(DatasetError::Split("viewpoint split needs sequences rendered at view scale 1.0".into()));
            }
            Ok((train, test))
        }
    }
}
