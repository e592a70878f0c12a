//! Orthonormal 2-D Haar transform and its recursive pyramid.
//!
//! Each sub-band is a stride-2 valid cross-correlation of every channel with
//! one of the 2x2 kernels in [`HAAR_FILTERS`].

use crate::autograd::{Backward, BackwardCx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];
    pub const HIGH: [Band; 3] = [Band::LH, Band::HL, Band::HH];

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// `HAAR_FILTERS[band][row][col]`, in [`Band::ALL`] order.
pub const HAAR_FILTERS: [[[f64; 2]; 2]; 4] = [
    [[0.5, 0.5], [0.5, 0.5]],
    [[0.5, 0.5], [-0.5, -0.5]],
    [[0.5, -0.5], [0.5, -0.5]],
    [[0.5, -0.5], [-0.5, 0.5]],
];

/// Signs of the four taps (a, b, c, d) of `[[a, b], [c, d]]` per band.
const SIGNS: [[f64; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

/// Four equally shaped sub-bands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletLevel<T = Tensor> {
    pub ll: T,
    pub lh: T,
    pub hl: T,
    pub hh: T,
    /// 1 for the first decomposition of the input.
    pub level: usize,
}

impl<T> WaveletLevel<T> {
    pub fn band(&self, b: Band) -> &T {
        match b {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }

    fn from_bands([ll, lh, hl, hh]: [T; 4], level: usize) -> Self {
        WaveletLevel { ll, lh, hl, hh, level }
    }
}

impl WaveletLevel<Tensor> {
    /// Sum of squares over LH, HL and HH.
    pub fn high_energy(&self) -> f64 {
        self.lh.sum_squares() + self.hl.sum_squares() + self.hh.sum_squares()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid<T = Tensor> {
    pub levels: Vec<WaveletLevel<T>>,
}

impl<T> WaveletPyramid<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level `k`, counting from 1.
    pub fn level(&self, k: usize) -> Option<&WaveletLevel<T>> {
        k.checked_sub(1).and_then(|i| self.levels.get(i))
    }
}

fn check_input(shape: &[usize], depth: usize) -> Result<(usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::shape("dwt2", format!("expected (B, C, H, W), got {shape:?}")));
    }
    let f = 1usize << depth;
    let (h, w) = (shape[2], shape[3]);
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::shape("dwt2", format!("extent {h}x{w} not divisible by {f}")));
    }
    Ok((shape[0] * shape[1], h, w))
}

fn analyse(x: &[f64], planes: usize, h: usize, w: usize) -> [Vec<f64>; 4] {
    let (oh, ow) = (h / 2, w / 2);
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; planes * oh * ow]);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for i in 0..oh {
            let (r0, r1) = (&src[2 * i * w..(2 * i + 1) * w], &src[(2 * i + 1) * w..(2 * i + 2) * w]);
            for j in 0..ow {
                let (a, b, c, d) = (r0[2 * j], r0[2 * j + 1], r1[2 * j], r1[2 * j + 1]);
                let o = (p * oh + i) * ow + j;
                out[0][o] = 0.5 * ((a + b) + (c + d));
                out[1][o] = 0.5 * ((a + b) - (c + d));
                out[2][o] = 0.5 * ((a - b) + (c - d));
                out[3][o] = 0.5 * ((a - b) - (c - d));
            }
        }
    }
    out
}

/// Adds `scale * SIGNS[band] * g` into the 2x2 input blocks.
fn scatter_band(g: &[f64], band: usize, planes: usize, oh: usize, ow: usize, scale: f64, dx: &mut [f64]) {
    let (h, w) = (2 * oh, 2 * ow);
    let s = SIGNS[band];
    for p in 0..planes {
        for i in 0..oh {
            for j in 0..ow {
                let v = scale * g[(p * oh + i) * ow + j];
                let base = p * h * w + 2 * i * w + 2 * j;
                dx[base] += s[0] * v;
                dx[base + 1] += s[1] * v;
                dx[base + w] += s[2] * v;
                dx[base + w + 1] += s[3] * v;
            }
        }
    }
}

/// One level of the forward transform.
pub fn dwt2(x: &Tensor) -> Result<WaveletLevel> {
    let (planes, h, w) = check_input(x.shape(), 1)?;
    let s = x.shape();
    let shape = [s[0], s[1], h / 2, w / 2];
    let bands = analyse(x.data(), planes, h, w);
    let bands = bands.map(|b| Tensor::from_vec(b, &shape).expect("band shape"));
    Ok(WaveletLevel::from_bands(bands, 1))
}

/// Exact inverse of [`dwt2`].
pub fn idwt2(level: &WaveletLevel) -> Result<Tensor> {
    let shape = level.ll.shape();
    if shape.len() != 4 || Band::ALL.iter().any(|&b| level.band(b).shape() != shape) {
        return Err(Error::shape(
            "idwt2",
            format!(
                "bands {:?} {:?} {:?} {:?}",
                level.ll.shape(),
                level.lh.shape(),
                level.hl.shape(),
                level.hh.shape()
            ),
        ));
    }
    let (planes, oh, ow) = (shape[0] * shape[1], shape[2], shape[3]);
    let mut out = vec![0.0; planes * 4 * oh * ow];
    // the analysis matrix is symmetric and orthogonal, so synthesis reuses it
    for b in Band::ALL {
        scatter_band(level.band(b).data(), b.index(), planes, oh, ow, 0.5, &mut out);
    }
    Tensor::from_vec(out, &[shape[0], shape[1], 2 * oh, 2 * ow])
}

/// `depth` levels, each decomposing the previous level's LL.
pub fn decompose(x: &Tensor, depth: usize) -> Result<WaveletPyramid> {
    check_input(x.shape(), depth)?;
    let mut levels: Vec<WaveletLevel> = Vec::with_capacity(depth);
    for k in 1..=depth {
        let mut level = match levels.last() {
            Some(prev) => dwt2(&prev.ll)?,
            None => dwt2(x)?,
        };
        level.level = k;
        levels.push(level);
    }
    Ok(WaveletPyramid { levels })
}

struct HaarBandOp {
    x: Var,
    band: usize,
}

impl Backward for HaarBandOp {
    fn name(&self) -> &'static str {
        "haar_dwt"
    }

    fn backward(&self, cx: &mut BackwardCx<'_>, out: &Tensor, grad: &[f64]) -> Result<()> {
        if cx.wants(self.x) {
            let s = out.shape();
            let dx = cx.grad_mut(self.x);
            scatter_band(grad, self.band, s[0] * s[1], s[2], s[3], 0.5, dx);
        }
        Ok(())
    }
}

impl Graph {
    /// Differentiable [`dwt2`].
    pub fn dwt2(&mut self, x: Var) -> Result<WaveletLevel<Var>> {
        let level = dwt2(self.value(x))?;
        let bands = [level.ll, level.lh, level.hl, level.hh];
        let mut vars = [x; 4];
        for (i, t) in bands.into_iter().enumerate() {
            vars[i] = self.push(t, &[x], HaarBandOp { x, band: i })?;
        }
        Ok(WaveletLevel::from_bands(vars, 1))
    }

    /// Differentiable [`decompose`].
    pub fn decompose(&mut self, x: Var, depth: usize) -> Result<WaveletPyramid<Var>> {
        check_input(self.shape(x), depth)?;
        let mut levels: Vec<WaveletLevel<Var>> = Vec::with_capacity(depth);
        let mut src = x;
        for k in 1..=depth {
            let mut level = self.dwt2(src)?;
            level.level = k;
            src = level.ll;
            levels.push(level);
        }
        Ok(WaveletPyramid { levels })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, random_projection};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_slice(data, shape).unwrap()
    }

    fn random(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    /// Direct stride-2 cross-correlation with the printed kernels.
    fn correlate(x: &Tensor, band: Band) -> Tensor {
        let s = x.shape();
        let (h, w) = (s[2], s[3]);
        let k = HAAR_FILTERS[band.index()];
        let mut out = Vec::new();
        for p in 0..s[0] * s[1] {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    let mut acc = 0.0;
                    for (di, row) in k.iter().enumerate() {
                        for (dj, kv) in row.iter().enumerate() {
                            acc += kv * x.data()[p * h * w + (2 * i + di) * w + 2 * j + dj];
                        }
                    }
                    out.push(acc);
                }
            }
        }
        Tensor::from_vec(out, &[s[0], s[1], h / 2, w / 2]).unwrap()
    }

    #[test]
    fn pinned_two_by_two() {
        let l = dwt2(&t(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2])).unwrap();
        assert_eq!((l.ll.data()[0], l.lh.data()[0], l.hl.data()[0], l.hh.data()[0]), (5.0, -2.0, -1.0, 0.0));
    }

    #[test]
    fn constant_block_and_inverse() {
        let l = dwt2(&t(&[1.0; 4], &[1, 1, 2, 2])).unwrap();
        assert_eq!(l.ll.data(), &[2.0]);
        assert_eq!((l.lh.data(), l.hl.data(), l.hh.data()), (&[0.0][..], &[0.0][..], &[0.0][..]));
        assert_eq!(idwt2(&l).unwrap().data(), &[1.0; 4]);

        let zero = Tensor::zeros(&[1, 2, 3, 3]);
        let z = WaveletLevel { ll: zero.clone(), lh: zero.clone(), hl: zero.clone(), hh: zero, level: 1 };
        assert!(idwt2(&z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filters_are_orthonormal() {
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..4).map(|i| HAAR_FILTERS[a][i / 2][i % 2] * HAAR_FILTERS[b][i / 2][i % 2]).sum();
                assert_eq!(dot, if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn matches_direct_correlation() {
        let x = random(1, &[2, 3, 6, 8]);
        let l = dwt2(&x).unwrap();
        for b in Band::ALL {
            assert!(l.band(b).max_abs_diff(&correlate(&x, b)) < 1e-15);
        }
    }

    #[test]
    fn linearity() {
        let (x, y) = (random(2, &[1, 3, 8, 8]), random(3, &[1, 3, 8, 8]));
        let (a, b) = (1.7, -0.4);
        let combo = Tensor::from_vec(x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect(), x.shape()).unwrap();
        let (lx, ly, lc) = (dwt2(&x).unwrap(), dwt2(&y).unwrap(), dwt2(&combo).unwrap());
        for band in Band::ALL {
            for ((c, p), q) in lc.band(band).data().iter().zip(lx.band(band).data()).zip(ly.band(band).data()) {
                assert!((c - (a * p + b * q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_8x8() {
        let x = random(4, &[1, 1, 8, 8]);
        assert!(idwt2(&dwt2(&x).unwrap()).unwrap().max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn pyramid_extents_and_composition() {
        let x = random(5, &[1, 3, 8, 8]);
        let p = decompose(&x, 3).unwrap();
        let extents: Vec<usize> = p.levels.iter().map(|l| l.ll.shape()[2]).collect();
        assert_eq!(extents, [4, 2, 1]);
        assert_eq!(p.levels.iter().map(|l| l.level).collect::<Vec<_>>(), [1, 2, 3]);

        assert_eq!(decompose(&x, 1).unwrap().levels[0], dwt2(&x).unwrap());
        let twice = dwt2(&dwt2(&x).unwrap().ll).unwrap();
        let l2 = p.level(2).unwrap();
        for b in Band::ALL {
            assert_eq!(l2.band(b), twice.band(b));
        }
    }

    #[test]
    fn rejects_odd_and_indivisible() {
        assert!(matches!(dwt2(&Tensor::zeros(&[1, 1, 3, 4])), Err(Error::Shape { .. })));
        assert!(decompose(&Tensor::zeros(&[1, 1, 12, 12]), 3).is_err());
        assert!(dwt2(&Tensor::zeros(&[4, 4])).is_err());
        let l = dwt2(&Tensor::zeros(&[1, 1, 4, 4])).unwrap();
        let bad = WaveletLevel { hh: Tensor::zeros(&[1, 1, 1, 2]), ..l };
        assert!(idwt2(&bad).is_err());
    }

    #[test]
    fn constant_image_has_no_high_bands_at_any_level() {
        let x = Tensor::full(&[1, 3, 16, 16], 0.37);
        for l in decompose(&x, 3).unwrap().levels {
            assert_eq!(l.high_energy(), 0.0);
        }
    }

    #[test]
    fn graph_version_matches_and_passes_gradcheck() {
        let x = random(6, &[1, 2, 8, 8]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let p = g.decompose(xv, 2).unwrap();
        let plain = decompose(&x, 2).unwrap();
        for (lv, lt) in p.levels.iter().zip(&plain.levels) {
            for b in Band::ALL {
                assert_eq!(g.value(*lv.band(b)), lt.band(b));
            }
        }

        let r = check_inputs("dwt2", &[x], None, |g, v| {
            let p = g.decompose(v[0], 2)?;
            let bands: Vec<Var> = p.levels.iter().flat_map(|l| [l.lh, l.hl, l.hh]).chain([p.levels[1].ll]).collect();
            let mut total = None;
            for (i, b) in bands.into_iter().enumerate() {
                let s = random_projection(g, b, i as u64)?;
                total = Some(match total {
                    Some(t) => g.add(t, s)?,
                    None => s,
                });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        assert!(r.passed(), "{r}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn perfect_reconstruction_and_parseval(seed in any::<u64>(), hh in 1usize..5, ww in 1usize..5, c in 1usize..4) {
            let x = random(seed, &[1, c, 2 * hh, 2 * ww]);
            let l = dwt2(&x).unwrap();
            prop_assert!(idwt2(&l).unwrap().max_abs_diff(&x) < 1e-12);
            let e = l.ll.sum_squares() + l.high_energy();
            prop_assert!((e - x.sum_squares()).abs() <= 1e-9 * x.sum_squares());
        }
    }
}
