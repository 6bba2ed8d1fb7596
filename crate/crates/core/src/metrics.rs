//! Slack-tolerant pixel precision/recall, PR sweeps and heatmap export.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_SLACKS: [usize; 5] = [0, 1, 2, 4, 8];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("probability {value} outside [0, 1] at index {index}")]
    Probability { index: usize, value: f64 },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 5.0 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;
    fn add(self, o: Counts) -> Counts {
        Counts { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_ }
    }
}

impl Counts {
    /// tp / (tp + fp), or 1 when nothing is predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// Matched ground truth over all ground truth, or 1 when there is none.
    /// `tp` counts matched predictions, so recall uses the ground-truth side:
    /// `fn_` unmatched pixels out of the ground-truth total.
    pub fn recall_with(&self, gt_total: u64) -> f64 {
        if gt_total == 0 {
            1.0
        } else {
            (gt_total - self.fn_) as f64 / gt_total as f64
        }
    }
}

/// Counts plus the ground-truth total needed for recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlackCounts {
    pub counts: Counts,
    pub gt_total: u64,
}

impl std::ops::Add for SlackCounts {
    type Output = SlackCounts;
    fn add(self, o: SlackCounts) -> SlackCounts {
        SlackCounts { counts: self.counts + o.counts, gt_total: self.gt_total + o.gt_total }
    }
}

impl SlackCounts {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }

    pub fn recall(&self) -> f64 {
        self.counts.recall_with(self.gt_total)
    }
}

/// Chebyshev dilation by `r` as two separable running-window passes.
pub fn dilate(mask: &[u8], width: usize, height: usize, r: usize) -> Vec<u8> {
    if r == 0 {
        return mask.iter().map(|&m| (m != 0) as u8).collect();
    }
    let pass = |src: &[u8], len: usize, lines: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut out = vec![0u8; src.len()];
        for line in 0..lines {
            let mut last: Option<usize> = None;
            let mut next_on = vec![usize::MAX; len];
            let mut upcoming = usize::MAX;
            for i in (0..len).rev() {
                if src[at(line, i)] != 0 {
                    upcoming = i;
                }
                next_on[i] = upcoming;
            }
            for i in 0..len {
                if src[at(line, i)] != 0 {
                    last = Some(i);
                }
                let behind = last.is_some_and(|j| i - j <= r);
                let ahead = next_on[i] != usize::MAX && next_on[i] - i <= r;
                out[at(line, i)] = (behind || ahead) as u8;
            }
        }
        out
    };
    let rows = pass(mask, width, height, &|y, x| y * width + x);
    pass(&rows, height, width, &|x, y| y * width + x)
}

fn check_mask(name: &str, m: &[u8], width: usize, height: usize) -> Result<()> {
    if m.len() != width * height {
        return Err(MetricsError::Shape(format!("{name} has {} pixels, expected {width}x{height}", m.len())));
    }
    Ok(())
}

/// Slack-tolerant confusion counts. A predicted pixel is a true positive when
/// a ground-truth pixel lies within Chebyshev distance `slack`, otherwise a
/// false positive; a ground-truth pixel is missed when no predicted pixel
/// lies within `slack`.
pub fn slack_counts(pred: &[u8], gt: &[u8], width: usize, height: usize, slack: usize) -> Result<SlackCounts> {
    check_mask("prediction", pred, width, height)?;
    check_mask("ground truth", gt, width, height)?;
    let near_gt = dilate(gt, width, height, slack);
    let near_pred = dilate(pred, width, height, slack);
    let mut c = SlackCounts::default();
    for i in 0..pred.len() {
        if pred[i] != 0 {
            if near_gt[i] != 0 {
                c.counts.tp += 1;
            } else {
                c.counts.fp += 1;
            }
        }
        if gt[i] != 0 {
            c.gt_total += 1;
            if near_pred[i] == 0 {
                c.counts.fn_ += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub slack: usize,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PrPoint {
    pub fn new(threshold: f64, slack: usize, c: SlackCounts) -> Self {
        Self { threshold, slack, precision: c.precision(), recall: c.recall(), tp: c.counts.tp, fp: c.counts.fp, fn_: c.counts.fn_ }
    }
}

/// A per-pixel liquid probability grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ProbMap {
    pub fn binarize(&self, threshold: f64) -> Vec<u8> {
        self.data.iter().map(|&p| (p >= threshold) as u8).collect()
    }

    fn check(&self) -> Result<()> {
        if self.data.len() != self.width * self.height {
            return Err(MetricsError::Shape(format!("{} values for a {}x{} map", self.data.len(), self.width, self.height)));
        }
        if let Some((index, &value)) = self.data.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(MetricsError::Probability { index, value });
        }
        Ok(())
    }
}

/// Counts summed over all frames for every (threshold, slack) pair. Pixels
/// with probability >= threshold are predicted liquid. Points are ordered by
/// slack, then threshold.
pub fn pr_curve(probs: &[ProbMap], gts: &[Vec<u8>], slacks: &[usize], thresholds: &[f64]) -> Result<Vec<PrPoint>> {
    if probs.is_empty() {
        return Err(MetricsError::Empty("no probability maps"));
    }
    if slacks.is_empty() || thresholds.is_empty() {
        return Err(MetricsError::Empty("no slacks or thresholds"));
    }
    if probs.len() != gts.len() {
        return Err(MetricsError::Shape(format!("{} maps but {} ground-truth masks", probs.len(), gts.len())));
    }
    for (p, g) in probs.iter().zip(gts) {
        p.check()?;
        check_mask("ground truth", g, p.width, p.height)?;
    }
    let mut out = Vec::with_capacity(slacks.len() * thresholds.len());
    for &slack in slacks {
        for &t in thresholds {
            let total = probs
                .par_iter()
                .zip(gts.par_iter())
                .map(|(p, g)| slack_counts(&p.binarize(t), g, p.width, p.height, slack).expect("shapes checked"))
                .reduce(SlackCounts::default, |a, b| a + b);
            out.push(PrPoint::new(t, slack, total));
        }
    }
    Ok(out)
}

pub fn write_pr_csv(points: &[PrPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "slack,threshold,tp,fp,fn,precision,recall")?;
    for p in points {
        writeln!(w, "{},{},{},{},{},{},{}", p.slack, p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall)?;
    }
    w.flush()
}

/// 8-bit heatmap byte for a probability, rounding half up.
pub fn heatmap_byte(p: f64) -> u8 {
    (p * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Write a probability map as an 8-bit PGM, top row first.
pub fn export_heatmap(map: &ProbMap, path: &Path) -> Result<()> {
    map.check()?;
    let bytes: Vec<u8> = map.data.iter().map(|&p| heatmap_byte(p)).collect();
    crate::pnm::write_pgm(path, map.width, map.height, &bytes)?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<ProbMap> {
    let (width, height, bytes) = crate::pnm::read_pgm(path)?;
    Ok(ProbMap { width, height, data: bytes.iter().map(|&b| b as f64 / 255.0).collect() })
}
