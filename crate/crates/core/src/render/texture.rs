use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rgb = [f64; 3];

pub const NUM_BACKGROUNDS: u8 = 8;
pub const NUM_TEXTURES: u8 = 6;

/// Hash-based lattice value in [0, 1).
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated value noise with unit lattice spacing.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy) + (lattice(seed, ix + 1, iy) - lattice(seed, ix, iy)) * tx;
    let b = lattice(seed, ix, iy + 1) + (lattice(seed, ix + 1, iy + 1) - lattice(seed, ix, iy + 1)) * tx;
    a + (b - a) * ty
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random_range(20.0..235.0), rng.random_range(20.0..235.0), rng.random_range(20.0..235.0)]
}

/// A seeded procedural pattern evaluated at real-valued pixel coordinates.
#[derive(Debug, Clone)]
pub struct Pattern {
    kind: u8,
    background: bool,
    colors: [Rgb; 2],
    period: f64,
    noise_seed: u64,
    blobs: Vec<([f64; 2], f64, f64)>,
    size: [f64; 2],
}

impl Pattern {
    /// One of the eight backgrounds for a `width` x `height` image.
    pub fn background(kind: u8, seed: u64, width: usize, height: usize) -> Self {
        Self::build(kind % NUM_BACKGROUNDS, true, seed, width, height)
    }

    /// One of the six container surface textures.
    pub fn surface(kind: u8, seed: u64, width: usize, height: usize) -> Self {
        Self::build(kind % NUM_TEXTURES, false, seed, width, height)
    }

    fn build(kind: u8, background: bool, seed: u64, width: usize, height: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((kind as u64 + 1) << 56) ^ if background { 0xB6 } else { 0x5C });
        let colors = [random_color(&mut rng), random_color(&mut rng)];
        let unit = width as f64 / 128.0;
        let period = rng.random_range(6.0..14.0) * unit;
        let noise_seed = rng.random();
        let blobs = (0..6)
            .map(|_| {
                let c = [rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)];
                (c, rng.random_range(6.0..18.0) * unit, rng.random_range(0.4..1.0))
            })
            .collect();
        Self { kind, background, colors, period, noise_seed, blobs, size: [width as f64, height as f64] }
    }

    pub fn sample(&self, x: f64, y: f64) -> Rgb {
        let [a, b] = self.colors;
        let p = self.period;
        let wave = |t: f64| 0.5 + 0.5 * (std::f64::consts::TAU * t / p).sin();
        let t = if self.background {
            match self.kind {
                0 => y / self.size[1],
                1 => wave(y),
                2 => wave(x),
                3 => 0.5 + 0.5 * (std::f64::consts::TAU * x / p).sin() * (std::f64::consts::TAU * y / p).sin(),
                4 => self.blobs.iter().map(|&(c, r, s)| s * (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / (2.0 * r * r)).exp()).sum::<f64>().min(1.0),
                5 => value_noise(self.noise_seed, x / p, y / p),
                6 => wave((x + y) / std::f64::consts::SQRT_2),
                _ => wave(((x - self.size[0] / 2.0).powi(2) + (y - self.size[1] / 2.0).powi(2)).sqrt()),
            }
        } else {
            match self.kind {
                0 => 0.0,
                1 => wave(y),
                2 => wave(x),
                3 => (((x / p).floor() + (y / p).floor()) as i64).rem_euclid(2) as f64,
                4 => {
                    let (fx, fy) = ((x / p).fract().abs() - 0.5, (y / p).fract().abs() - 0.5);
                    if fx * fx + fy * fy < 0.09 {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => value_noise(self.noise_seed, x / p, y / p),
            }
        };
        mix(a, b, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_are_deterministic_and_bounded() {
        for kind in 0..NUM_BACKGROUNDS {
            let p = Pattern::background(kind, 9, 128, 96);
            let q = Pattern::background(kind, 9, 128, 96);
            for (x, y) in [(0.0, 0.0), (17.3, 40.2), (127.9, 95.5)] {
                let c = p.sample(x, y);
                assert_eq!(c, q.sample(x, y));
                assert!(c.iter().all(|v| (0.0..=255.0).contains(v)));
            }
        }
    }

    #[test]
    fn value_noise_is_continuous() {
        let a = value_noise(3, 4.999_999, 2.5);
        let b = value_noise(3, 5.000_001, 2.5);
        assert!((a - b).abs() < 1e-4);
    }
}
