use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::ImageBuffer;

enum Fill {
    Solid([f64; 3]),
    Gradient { base: [f64; 3], slope: [f64; 3], dir: (f64, f64) },
    Stripes { base: [f64; 3], amp: f64, freq: f64, dir: (f64, f64) },
}

enum Region {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    HalfPlane { px: f64, py: f64, nx: f64, ny: f64 },
}

impl Region {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Region::Rect { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * cos + dy * sin).abs() <= hw && (-dx * sin + dy * cos).abs() <= hh
            }
            Region::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Region::HalfPlane { px, py, nx, ny } => (x - px) * nx + (y - py) * ny >= 0.0,
        }
    }
}

impl Fill {
    fn at(&self, x: f64, y: f64) -> [f64; 3] {
        match self {
            Fill::Solid(c) => *c,
            Fill::Gradient { base, slope, dir } => {
                let t = x * dir.0 + y * dir.1;
                [0, 1, 2].map(|c| base[c] + slope[c] * t)
            }
            Fill::Stripes { base, amp, freq, dir } => {
                let s = amp * (freq * (x * dir.0 + y * dir.1)).sin();
                base.map(|b| b + s)
            }
        }
    }
}

fn color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(70.0..185.0))
}

/// Deterministic toy image: solid shapes with hard edges over a flat background,
/// plus linear gradients and sinusoidal stripe textures. Values stay well inside 0-255.
pub fn synthetic_image(seed: u64, width: usize, height: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let size = w.min(h);
    let background = color(&mut rng);
    let n_shapes = 4 + (width * height / 2048).min(8);
    let mut layers = Vec::with_capacity(n_shapes);
    for i in 0..n_shapes {
        let cx = rng.random_range(0.0..w);
        let cy = rng.random_range(0.0..h);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let region = match rng.random_range(0..5) {
            0 | 1 => Region::Rect {
                cx,
                cy,
                hw: rng.random_range(0.1..0.35) * size,
                hh: rng.random_range(0.1..0.35) * size,
                cos: angle.cos(),
                sin: angle.sin(),
            },
            2 | 3 => Region::Disk {
                cx,
                cy,
                r: rng.random_range(0.08..0.3) * size,
            },
            _ => Region::HalfPlane {
                px: cx,
                py: cy,
                nx: angle.cos(),
                ny: angle.sin(),
            },
        };
        let dir = (angle.sin(), -angle.cos());
        let fill = match (i % 4, rng.random_range(0..2)) {
            (1, 0) => Fill::Gradient {
                base: color(&mut rng).map(|c| c.clamp(100.0, 155.0)),
                slope: [0; 3].map(|_| rng.random_range(-0.6..0.6) * 64.0 / size),
                dir,
            },
            (3, _) => Fill::Stripes {
                base: color(&mut rng).map(|c| c.clamp(100.0, 155.0)),
                amp: rng.random_range(12.0..30.0),
                freq: std::f64::consts::TAU / rng.random_range(3.0..9.0),
                dir,
            },
            _ => Fill::Solid(color(&mut rng)),
        };
        layers.push((region, fill));
    }
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = background;
            for (region, fill) in &layers {
                if region.contains(fx, fy) {
                    v = fill.at(fx, fy);
                }
            }
            pixels.extend(v.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    ImageBuffer::new(width, height, pixels).expect("sized buffer")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = synthetic_image(1, 40, 30);
        assert_eq!(a, synthetic_image(1, 40, 30));
        assert_ne!(a, synthetic_image(2, 40, 30));
        let distinct: std::collections::HashSet<_> = a.pixels().chunks(3).collect();
        assert!(distinct.len() > 3);
        assert!(a.pixels().iter().all(|&v| (20..=235).contains(&v)));
    }
}
