//! Procedural "faces" and blur-based forgeries.
//!
//! A scene is a smooth multi-octave colour texture with an elliptical face
//! region whose texture is finer and differently coloured. Frames of a
//! scene differ by a small translation, a brightness gain and fresh sensor
//! noise. A forgery blurs a random ellipse inside the face, which removes
//! high-frequency detail there.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard deviation of per-pixel sensor noise.
pub const SENSOR_NOISE: f64 = 0.01;
/// Largest frame translation in pixels along each axis.
pub const MAX_JITTER: f64 = 2.0;
/// Width in pixels of the linear ramp at the forged region's edge.
pub const FEATHER: f64 = 2.0;
/// Mean shift inside the forged region per unit of blur strength.
pub const SHIFT_PER_STRENGTH: f64 = 0.004;

/// Axis-aligned ellipse in pixel coordinates (pixel centres at `i + 0.5`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.rx * self.ry
    }

    /// Approximate signed distance to the boundary in pixels, positive
    /// inside.
    pub fn depth(&self, x: f64, y: f64) -> f64 {
        let (u, v) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        (1.0 - (u * u + v * v).sqrt()) * self.rx.min(self.ry)
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    /// `(3, H, W)`, values in [0, 1].
    pub image: Tensor,
    /// 0 real, 1 fake.
    pub label: usize,
    /// `(H, W)`, 1 where pixels were altered; all zero for real samples.
    pub mask: Tensor,
    pub video_id: usize,
    pub frame_idx: usize,
    /// Face region of the scene in this frame.
    pub face: Ellipse,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[1], self.image.shape()[2])
    }

    /// Mirror image and mask left to right.
    pub fn flip_horizontal(&self) -> Sample {
        let (h, w) = self.size();
        let flip = |t: &Tensor| {
            let mut out = t.clone();
            for (src, dst) in t.data().chunks_exact(w).zip(out.data_mut().chunks_exact_mut(w)) {
                for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                    *d = *s;
                }
            }
            out
        };
        debug_assert_eq!(self.mask.shape(), [h, w]);
        Sample {
            image: flip(&self.image),
            mask: flip(&self.mask),
            face: Ellipse { cx: w as f64 - self.face.cx, ..self.face },
            ..self.clone()
        }
    }
}

/// Lattice of random values sampled with smoothstep-weighted bilinear
/// interpolation.
#[derive(Clone, Debug)]
struct ValueNoise {
    cell: f64,
    origin: f64,
    cols: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    /// Covers `[origin, origin + extent]` on both axes.
    fn new(rng: &mut ChaCha8Rng, cell: f64, origin: f64, extent: f64) -> Self {
        let cols = (extent / cell).ceil() as usize + 2;
        let values = (0..cols * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        ValueNoise { cell, origin, cols, values }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin) / self.cell).max(0.0);
        let fy = ((y - self.origin) / self.cell).max(0.0);
        let (ix, iy) = ((fx as usize).min(self.cols - 2), (fy as usize).min(self.cols - 2));
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth((fx - ix as f64).min(1.0)), smooth((fy - iy as f64).min(1.0)));
        let at = |c: usize, r: usize| self.values[r * self.cols + c];
        let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
        let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Octave-summed colour texture. Each octave mixes a lattice shared by the
/// three channels with a per-channel one, so channels are correlated.
#[derive(Clone, Debug)]
struct Texture {
    mean: [f64; 3],
    /// Per octave: amplitude, shared lattice, per-channel lattices.
    octaves: Vec<(f64, ValueNoise, [ValueNoise; 3])>,
}

const SHARED_WEIGHT: f64 = 0.8;

impl Texture {
    /// Octave `o` has lattice spacing `base_cell / 2^o` (at least one pixel)
    /// and amplitude `amplitude * persistence^o`.
    fn new(rng: &mut ChaCha8Rng, size: usize, base_cell: f64, octaves: usize, amplitude: f64, persistence: f64, mean: [f64; 3]) -> Self {
        let margin = 2.0 * MAX_JITTER + 1.0;
        let extent = size as f64 + 2.0 * margin;
        let octaves = (0..octaves)
            .map(|o| {
                let cell = (base_cell / (1 << o) as f64).max(1.0);
                let amp = amplitude * persistence.powi(o as i32);
                let shared = ValueNoise::new(rng, cell, -margin, extent);
                let own = std::array::from_fn(|_| ValueNoise::new(rng, cell, -margin, extent));
                (amp, shared, own)
            })
            .collect();
        Texture { mean, octaves }
    }

    fn sample(&self, c: usize, x: f64, y: f64) -> f64 {
        let mut v = self.mean[c];
        for (amp, shared, own) in &self.octaves {
            v += amp * (SHARED_WEIGHT * shared.sample(x, y) + (1.0 - SHARED_WEIGHT) * own[c].sample(x, y));
        }
        v
    }
}

/// Base content of one "video": background, face texture and face region.
#[derive(Clone, Debug)]
pub struct Scene {
    size: usize,
    background: Texture,
    skin: Texture,
    face: Ellipse,
}

fn random_mean(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    let base = rng.random_range(lo..hi);
    std::array::from_fn(|_| (base + rng.random_range(-0.08..0.08)).clamp(0.05, 0.95))
}

impl Scene {
    pub fn new(rng: &mut ChaCha8Rng, size: usize, octaves: usize) -> Self {
        let s = size as f64;
        let mean = random_mean(rng, 0.25, 0.55);
        let background = Texture::new(rng, size, s / 4.0, octaves, 0.18, 0.5, mean);
        let mean = random_mean(rng, 0.5, 0.8);
        let skin = Texture::new(rng, size, s / 16.0, octaves, 0.08, 0.8, mean);
        let face = Ellipse {
            cx: s * rng.random_range(0.45..0.55),
            cy: s * rng.random_range(0.45..0.55),
            rx: s * rng.random_range(0.26..0.34),
            ry: s * rng.random_range(0.32..0.40),
        };
        Scene { size, background, skin, face }
    }

    pub fn face(&self) -> Ellipse {
        self.face
    }

    /// One jittered, noisy frame, labelled real.
    pub fn frame(&self, rng: &mut ChaCha8Rng) -> Sample {
        let n = self.size;
        let (dx, dy) = (rng.random_range(-MAX_JITTER..=MAX_JITTER), rng.random_range(-MAX_JITTER..=MAX_JITTER));
        let gain = rng.random_range(0.97..1.03);
        let noise = Normal::new(0.0, SENSOR_NOISE).expect("valid sigma");
        let face = Ellipse { cx: self.face.cx - dx, cy: self.face.cy - dy, ..self.face };
        let mut data = vec![0.0; 3 * n * n];
        for y in 0..n {
            for x in 0..n {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                // one-pixel soft face edge, evaluated in scene coordinates
                let a = (self.face.depth(px + dx, py + dy) + 0.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    let bg = self.background.sample(c, px + dx, py + dy);
                    let sk = self.skin.sample(c, px + dx, py + dy);
                    data[(c * n + y) * n + x] = gain * ((1.0 - a) * bg + a * sk);
                }
            }
        }
        for v in data.iter_mut() {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
        Sample {
            image: Tensor::from_vec(data, &[3, n, n]).expect("shape"),
            label: 0,
            mask: Tensor::zeros(&[n, n]),
            video_id: 0,
            frame_idx: 0,
            face,
        }
    }
}

/// A fresh scene rendered once.
pub fn gen_real(rng: &mut ChaCha8Rng, size: usize, octaves: usize) -> Sample {
    Scene::new(rng, size, octaves).frame(rng)
}

/// Separable Gaussian blur with edge clamping, per channel.
pub fn gaussian_blur(image: &Tensor, sigma: f64) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape("gaussian_blur", format!("expected (C, H, W), got {:?}", image.shape())));
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let src = image.data();
    let mut tmp = vec![0.0; src.len()];
    for p in 0..c {
        for y in 0..h {
            let row = &src[(p * h + y) * w..(p * h + y + 1) * w];
            for x in 0..w {
                tmp[(p * h + y) * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * row[clamp(x as isize + k as isize - radius, w)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for p in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[(p * h + y) * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[(p * h + clamp(y as isize + k as isize - radius, h)) * w + x])
                    .sum();
            }
        }
    }
    Tensor::from_vec(out, image.shape())
}

/// Random ellipse inside `face` covering a fraction in `scale` of its area.
pub fn forged_region(rng: &mut ChaCha8Rng, face: Ellipse, scale: (f64, f64)) -> Ellipse {
    let fraction = rng.random_range(scale.0..=scale.1);
    let aspect = rng.random_range(0.8f64..1.25).sqrt();
    let r = fraction.sqrt();
    let (rx, ry) = (face.rx * r * aspect, face.ry * r / aspect);
    // keep the region centre where the region still fits inside the face
    let (sx, sy) = ((face.rx - rx).max(0.0), (face.ry - ry).max(0.0));
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    let m = rng.random_range(0.0f64..0.7).sqrt();
    Ellipse { cx: face.cx + m * sx * t.cos(), cy: face.cy + m * sy * t.sin(), rx, ry }
}

/// Blurs a random region of the face of a real sample and shifts its mean
/// slightly. Pixels outside the feathered region are copied unchanged.
pub fn gen_fake(real: &Sample, rng: &mut ChaCha8Rng, strength: f64, scale: (f64, f64)) -> Result<Sample> {
    if real.label != 0 {
        return Err(Error::invalid("gen_fake expects a real sample"));
    }
    if !(0.0 < scale.0 && scale.0 <= scale.1 && scale.1 <= 1.0) {
        return Err(Error::invalid(format!("region scale range {scale:?}")));
    }
    let region = forged_region(rng, real.face, scale);
    let shift = if rng.random_bool(0.5) { 1.0 } else { -1.0 } * SHIFT_PER_STRENGTH * strength;
    let blurred = gaussian_blur(&real.image, strength)?;
    let (h, w) = real.size();
    let mut image = real.image.clone();
    let mut mask = Tensor::zeros(&[h, w]);
    {
        let (out, m, b) = (image.data_mut(), mask.data_mut(), blurred.data());
        for y in 0..h {
            for x in 0..w {
                let alpha = ((region.depth(x as f64 + 0.5, y as f64 + 0.5) + FEATHER / 2.0) / FEATHER).clamp(0.0, 1.0);
                if alpha == 0.0 {
                    continue;
                }
                m[y * w + x] = 1.0;
                for c in 0..3 {
                    let i = (c * h + y) * w + x;
                    let forged = (b[i] + shift).clamp(0.0, 1.0);
                    out[i] = (1.0 - alpha) * out[i] + alpha * forged;
                }
            }
        }
    }
    Ok(Sample { image, label: 1, mask, ..real.clone() })
}
