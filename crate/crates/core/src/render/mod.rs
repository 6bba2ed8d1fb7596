//! Side-view rendering of simulation frames. Liquid is fully transparent and
//! shows only as a warp of the background plus optional highlights; labels
//! are rasterized from the scene geometry and never depend on appearance.

mod texture;

pub use texture::{value_noise, Pattern, Rgb, NUM_BACKGROUNDS, NUM_TEXTURES};

use crate::sim::{Point, SimFrame};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REFRACTION_LEVELS: [f64; 3] = [0.0, 0.5, 1.0];
pub const VIEW_SCALES: [f64; 3] = [0.8, 1.0, 1.2];
pub const VIEW_OFFSETS: [i32; 3] = [-8, 0, 8];

pub const LABEL_CUP: u8 = 1;
pub const LABEL_BOWL: u8 = 2;
pub const LABEL_LIQUID: u8 = 4;

pub const VISIBLE_BACKGROUND: u8 = 0;
pub const VISIBLE_CUP: u8 = 1;
pub const VISIBLE_BOWL: u8 = 2;
pub const VISIBLE_LIQUID: u8 = 3;

/// Interpolated fill at or above which a pixel is labeled liquid. The fill
/// is sampled at four points a quarter pixel from the pixel center, and any
/// sample at or above the threshold marks the pixel.
pub const LIQUID_FILL_THRESHOLD: f64 = 0.5;
/// Background displacement per unit fill gradient (per cell) at full
/// strength, in cells.
pub const REFRACTION_GAIN: f64 = 12.0;
const SPECULAR_GAIN: f64 = 140.0;
const SPECULAR_POWER: i32 = 6;
const BLUR_SIGMA: f64 = 1.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("render size {width}x{height} does not match the {sim_width}x{sim_height} scene aspect")]
    Aspect { width: usize, height: usize, sim_width: usize, sim_height: usize },
}

pub type Result<T> = std::result::Result<T, RenderError>;

/// Camera analog: zoom, horizontal mirror and vertical shift in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub scale: f64,
    pub hflip: bool,
    pub v_offset: i32,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { scale: 1.0, hflip: false, v_offset: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub background: u8,
    pub cup_texture: u8,
    pub bowl_texture: u8,
    pub refraction_strength: f64,
    pub specular: bool,
    pub view: ViewConfig,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RenderConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            background: 0,
            cup_texture: 0,
            bowl_texture: 1,
            refraction_strength: 1.0,
            specular: true,
            view: ViewConfig::default(),
            noise_sigma: 2.0,
            seed: 0,
        }
    }

    /// Draw every appearance variable uniformly. With `fixed_view` the camera
    /// stays at scale 1, unflipped, unshifted.
    pub fn sample(rng: &mut impl Rng, width: usize, height: usize, fixed_view: bool) -> Self {
        let view = if fixed_view {
            ViewConfig::default()
        } else {
            ViewConfig {
                scale: VIEW_SCALES[rng.random_range(0..VIEW_SCALES.len())],
                hflip: rng.random(),
                v_offset: VIEW_OFFSETS[rng.random_range(0..VIEW_OFFSETS.len())],
            }
        };
        Self {
            width,
            height,
            background: rng.random_range(0..NUM_BACKGROUNDS),
            cup_texture: rng.random_range(0..NUM_TEXTURES),
            bowl_texture: rng.random_range(0..NUM_TEXTURES),
            refraction_strength: REFRACTION_LEVELS[rng.random_range(0..REFRACTION_LEVELS.len())],
            specular: rng.random(),
            view,
            noise_sigma: 2.0,
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RenderError::InvalidConfig(m));
        if self.width < 32 || self.height < 32 {
            return bad(format!("size {}x{} below 32", self.width, self.height));
        }
        if !REFRACTION_LEVELS.contains(&self.refraction_strength) {
            return bad(format!("refraction_strength {} not in {REFRACTION_LEVELS:?}", self.refraction_strength));
        }
        if self.background >= NUM_BACKGROUNDS {
            return bad(format!("background {} out of range", self.background));
        }
        if self.cup_texture >= NUM_TEXTURES || self.bowl_texture >= NUM_TEXTURES {
            return bad(format!("texture ids {} / {} out of range", self.cup_texture, self.bowl_texture));
        }
        if !VIEW_SCALES.contains(&self.view.scale) {
            return bad(format!("view scale {} not in {VIEW_SCALES:?}", self.view.scale));
        }
        if !VIEW_OFFSETS.contains(&self.view.v_offset) {
            return bad(format!("view v_offset {} not in {VIEW_OFFSETS:?}", self.view.v_offset));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        Ok(())
    }
}

/// A rendered image with its multi-label and visible-class channels, all
/// row-major with the top row first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFrame {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB.
    pub image: Vec<u8>,
    /// Bit set of `LABEL_CUP | LABEL_BOWL | LABEL_LIQUID`.
    pub multilabel: Vec<u8>,
    /// One of the `VISIBLE_*` classes.
    pub visible: Vec<u8>,
}

impl LabeledFrame {
    /// Visible-liquid mask: the detection target.
    pub fn detection_target(&self) -> Vec<u8> {
        self.visible.iter().map(|&v| (v == VISIBLE_LIQUID) as u8).collect()
    }

    /// All-liquid mask, visible or occluded: the tracking target.
    pub fn tracking_target(&self) -> Vec<u8> {
        self.multilabel.iter().map(|&m| (m & LABEL_LIQUID != 0) as u8).collect()
    }

    pub fn visible_liquid_pixels(&self) -> usize {
        self.visible.iter().filter(|&&v| v == VISIBLE_LIQUID).count()
    }

    /// Left-right mirror of every channel.
    pub fn mirrored(&self) -> LabeledFrame {
        let (w, h) = (self.width, self.height);
        let flip = |src: &[u8], ch: usize| {
            let mut out = vec![0; src.len()];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..ch {
                        out[(y * w + x) * ch + c] = src[(y * w + (w - 1 - x)) * ch + c];
                    }
                }
            }
            out
        };
        LabeledFrame { width: w, height: h, image: flip(&self.image, 3), multilabel: flip(&self.multilabel, 1), visible: flip(&self.visible, 1) }
    }

    /// Network input `[3, H, W]`, each byte mapped to `v / 255 - 0.5`.
    pub fn image_tensor(&self) -> Tensor {
        let plane = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |i| self.image[(i % plane) * 3 + i / plane] as f64 / 255.0 - 0.5)
    }
}

/// Pre-segmented input `[4, H, W]`: one-hot (background, cup, bowl, liquid)
/// from the visible channel, so occluded liquid never appears.
pub fn segmented_input(frame: &LabeledFrame) -> Tensor {
    let plane = frame.width * frame.height;
    Tensor::from_fn(&[4, frame.height, frame.width], |i| (frame.visible[i % plane] as usize == i / plane) as u8 as f64)
}

/// Maps image pixels to scene (lattice) coordinates.
struct Camera {
    width: f64,
    height: f64,
    center: Point,
    px_per_cell: f64,
    hflip: bool,
    v_offset: f64,
}

impl Camera {
    fn new(frame: &SimFrame, cfg: &RenderConfig) -> Result<Self> {
        if cfg.width * frame.height != cfg.height * frame.width {
            return Err(RenderError::Aspect { width: cfg.width, height: cfg.height, sim_width: frame.width, sim_height: frame.height });
        }
        Ok(Self {
            width: cfg.width as f64,
            height: cfg.height as f64,
            center: [frame.width as f64 / 2.0, frame.height as f64 / 2.0],
            px_per_cell: cfg.width as f64 / frame.width as f64 * cfg.view.scale,
            hflip: cfg.view.hflip,
            v_offset: cfg.view.v_offset as f64,
        })
    }

    /// Scene point under continuous image coordinates `(u, v)`.
    fn scene(&self, u: f64, v: f64) -> Point {
        let u = if self.hflip { self.width - u } else { u };
        [self.center[0] + (u - self.width / 2.0) / self.px_per_cell, self.center[1] - (v - self.v_offset - self.height / 2.0) / self.px_per_cell]
    }

    /// Scene-space vector expressed in image pixels.
    fn to_image(&self, d: Point) -> Point {
        let sx = if self.hflip { -1.0 } else { 1.0 };
        [sx * d[0] * self.px_per_cell, -d[1] * self.px_per_cell]
    }
}

/// A cell-centered scalar grid with bilinear lookup; zero outside.
struct Field {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Field {
    fn at(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    fn bilinear(&self, p: Point) -> f64 {
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        let (x0, y0) = (x.floor(), y.floor());
        let (tx, ty) = (x - x0, y - y0);
        let (ix, iy) = (x0 as i64, y0 as i64);
        let a = self.at(ix, iy) * (1.0 - tx) + self.at(ix + 1, iy) * tx;
        let b = self.at(ix, iy + 1) * (1.0 - tx) + self.at(ix + 1, iy + 1) * tx;
        a * (1.0 - ty) + b * ty
    }

    fn gradient(&self, p: Point) -> Point {
        let h = 0.5;
        [
            (self.bilinear([p[0] + h, p[1]]) - self.bilinear([p[0] - h, p[1]])) / (2.0 * h),
            (self.bilinear([p[0], p[1] + h]) - self.bilinear([p[0], p[1] - h])) / (2.0 * h),
        ]
    }

    /// Separable Gaussian blur with radius 3 sigma.
    fn blurred(&self, sigma: f64) -> Field {
        let r = (3.0 * sigma).ceil() as i64;
        let kernel: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (-r..=r).map(|d| kernel[(d + r) as usize] * self.at(x as i64 + d, y as i64)).sum::<f64>() / norm;
            }
        }
        let tmp = Field { width: w, height: h, data: tmp };
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = (-r..=r).map(|d| kernel[(d + r) as usize] * tmp.at(x as i64, y as i64 + d)).sum::<f64>() / norm;
            }
        }
        Field { width: w, height: h, data: out }
    }
}

fn fill_field(frame: &SimFrame) -> Field {
    Field { width: frame.width, height: frame.height, data: frame.fill.iter().map(|&v| v as f64).collect() }
}

/// Per-object masks (multi-label) and the occlusion-ordered visible class.
/// Containers are opaque and drawn in front of liquid; the cup is in front of
/// the bowl.
pub fn render_labels(frame: &SimFrame, cfg: &RenderConfig) -> Result<(Vec<u8>, Vec<u8>)> {
    cfg.validate()?;
    let cam = Camera::new(frame, cfg)?;
    let fill = fill_field(frame);
    let (w, h) = (cfg.width, cfg.height);
    let mut multilabel = vec![0u8; w * h];
    let mut visible = vec![VISIBLE_BACKGROUND; w * h];
    for py in 0..h {
        for px in 0..w {
            let p = cam.scene(px as f64 + 0.5, py as f64 + 0.5);
            let mut bits = 0;
            if frame.cup.covers(p) {
                bits |= LABEL_CUP;
            }
            if frame.bowl.covers(p) {
                bits |= LABEL_BOWL;
            }
            let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
            if [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)]
                .iter()
                .any(|&(du, dv)| fill.bilinear(cam.scene(u + du, v + dv)) >= LIQUID_FILL_THRESHOLD)
            {
                bits |= LABEL_LIQUID;
            }
            let i = py * w + px;
            multilabel[i] = bits;
            visible[i] = if bits & LABEL_CUP != 0 {
                VISIBLE_CUP
            } else if bits & LABEL_BOWL != 0 {
                VISIBLE_BOWL
            } else if bits & LABEL_LIQUID != 0 {
                VISIBLE_LIQUID
            } else {
                VISIBLE_BACKGROUND
            };
        }
    }
    Ok((multilabel, visible))
}

fn frame_rng(cfg: &RenderConfig, frame: &SimFrame) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ (frame.index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Render one frame: background, liquid as a warped view of the background
/// with optional highlights, then opaque containers, then pixel noise.
pub fn render_frame(frame: &SimFrame, cfg: &RenderConfig) -> Result<LabeledFrame> {
    let (multilabel, visible) = render_labels(frame, cfg)?;
    let cam = Camera::new(frame, cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let background = Pattern::background(cfg.background, cfg.seed, w, h);
    let cup = Pattern::surface(cfg.cup_texture, cfg.seed ^ 0xC0FFEE, w, h);
    let bowl = Pattern::surface(cfg.bowl_texture, cfg.seed ^ 0xB0B1, w, h);
    let normals = fill_field(frame).blurred(BLUR_SIGMA);
    let light = {
        let l = [-0.4f64, -0.9f64];
        let n = (l[0] * l[0] + l[1] * l[1]).sqrt();
        [l[0] / n, l[1] / n]
    };
    let mut rng = frame_rng(cfg, frame);
    let noise = (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("validated sigma"));
    let mut image = vec![0u8; w * h * 3];
    for py in 0..h {
        for px in 0..w {
            let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
            let i = py * w + px;
            let color = match visible[i] {
                VISIBLE_CUP => cup.sample(u, v),
                VISIBLE_BOWL => bowl.sample(u, v),
                VISIBLE_LIQUID => {
                    let g = cam.to_image(normals.gradient(cam.scene(u, v)));
                    let k = cfg.refraction_strength * REFRACTION_GAIN;
                    let mut c = background.sample(u + k * g[0], v + k * g[1]);
                    let mag = (g[0] * g[0] + g[1] * g[1]).sqrt();
                    if cfg.specular && mag > 1e-9 {
                        let facing = (-(g[0] * light[0] + g[1] * light[1]) / mag).max(0.0);
                        let highlight = SPECULAR_GAIN * facing.powi(SPECULAR_POWER) * (mag * 4.0 / cam.px_per_cell).min(1.0);
                        c.iter_mut().for_each(|ch| *ch += highlight);
                    }
                    c
                }
                _ => background.sample(u, v),
            };
            for (ch, value) in color.iter().enumerate() {
                let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                image[i * 3 + ch] = (value + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(LabeledFrame { width: w, height: h, image, multilabel, visible })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_configs_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            RenderConfig::sample(&mut rng, 64, 48, false).validate().unwrap();
        }
        let fixed = RenderConfig::sample(&mut rng, 64, 48, true);
        assert_eq!(fixed.view, ViewConfig::default());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = RenderConfig::new(64, 48);
        c.refraction_strength = 0.7;
        assert!(c.validate().is_err());
        let mut c = RenderConfig::new(16, 48);
        assert!(c.validate().is_err());
        c.width = 64;
        c.view.scale = 1.1;
        assert!(c.validate().is_err());
    }
}
