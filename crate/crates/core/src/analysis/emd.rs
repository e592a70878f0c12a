//! One-dimensional earth mover's distance between value histograms, and
//! the real-versus-fake sub-band comparison built on it.

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::{decompose, Band};

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_DEPTH: usize = 3;

/// Exact transport cost between two histograms on a common grid of
/// `bin_width`-spaced bins: the summed absolute difference of their CDFs.
/// Inputs are normalised to unit mass first.
pub fn emd_1d(p: &[f64], q: &[f64], bin_width: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("histograms have {} and {} bins", p.len(), q.len())));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width {bin_width}")));
    }
    let mass = |h: &[f64]| -> Result<f64> {
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("histogram entries must be finite and non-negative"));
        }
        let m: f64 = h.iter().sum();
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::invalid("histogram has zero mass"))
        }
    };
    let (mp, mq) = (mass(p)?, mass(q)?);
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        cp += a / mp;
        cq += b / mq;
        total += (cp - cq).abs();
    }
    Ok(total * bin_width)
}

/// Counts of `values` in `bins` equal-width bins spanning `[lo, hi]`. The
/// top edge belongs to the last bin. A degenerate range puts every value in
/// bin 0.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let span = hi - lo;
    for &v in values {
        let k = if span > 0.0 { (((v - lo) / span) * bins as f64) as usize } else { 0 };
        h[k.min(bins - 1)] += 1.0;
    }
    h
}

/// EMD in bin units between the value distributions of two equal-length
/// arrays, histogrammed over their joint range.
pub fn value_emd(a: &[f64], b: &[f64], bins: usize) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("empty value set"));
    }
    let (lo, hi) = a.iter().chain(b).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("non-finite values"));
    }
    emd_1d(&histogram(a, lo, hi, bins), &histogram(b, lo, hi, bins), 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmdRow {
    /// `None` for the whole-image row.
    pub level: Option<usize>,
    pub band: Option<Band>,
    pub value: f64,
}

impl EmdRow {
    pub fn band_name(&self) -> &'static str {
        self.band.map_or("Ori-Img", Band::name)
    }
}

/// Mean per-pair EMD: the whole-image row first, then levels 1.. with
/// bands LL, LH, HL, HH.
#[derive(Clone, Debug, PartialEq)]
pub struct EmdReport {
    pub rows: Vec<EmdRow>,
    pub pairs: usize,
    pub bins: usize,
}

impl EmdReport {
    pub fn get(&self, level: usize, band: Band) -> Option<f64> {
        self.rows.iter().find(|r| r.level == Some(level) && r.band == Some(band)).map(|r| r.value)
    }

    pub fn whole_image(&self) -> f64 {
        self.rows[0].value
    }

    pub fn depth(&self) -> usize {
        self.rows.iter().filter_map(|r| r.level).max().unwrap_or(0)
    }

    /// Levels at which every high band exceeds LL.
    pub fn high_exceeds_low(&self, level: usize) -> bool {
        let ll = self.get(level, Band::LL);
        Band::HIGH.iter().all(|&b| matches!((self.get(level, b), ll), (Some(h), Some(l)) if h > l))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,band,emd\n");
        for r in &self.rows {
            let level = r.level.map_or("-".to_string(), |l| l.to_string());
            s.push_str(&format!("{level},{},{:.6}\n", r.band_name(), r.value));
        }
        s
    }
}

impl fmt::Display for EmdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:<8} {:>10}", "level", "band", "emd")?;
        for r in &self.rows {
            let level = r.level.map_or("-".to_string(), |l| format!("Level-{l}"));
            writeln!(f, "{:<8} {:<8} {:>10.4}", level, r.band_name(), r.value)?;
        }
        write!(f, "({} pairs, {} bins)", self.pairs, self.bins)
    }
}

fn as_batch(t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        [c, h, w] => t.clone().reshape(&[1, *c, *h, *w]),
        [1, _, _, _] => Ok(t.clone()),
        s => Err(Error::shape("emd_report", format!("expected one (C, H, W) image, got {s:?}"))),
    }
}

/// Compares paired real and fake images (fake `k` derived from real `k`)
/// sub-band by sub-band and averages the per-pair distances.
pub fn emd_report(real: &[Tensor], fake: &[Tensor], depth: usize, bins: usize) -> Result<EmdReport> {
    if real.len() != fake.len() {
        return Err(Error::invalid(format!("{} real vs {} fake images are not paired", real.len(), fake.len())));
    }
    if real.is_empty() {
        return Err(Error::invalid("no image pairs"));
    }
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    let mut sums = vec![0.0; 1 + 4 * depth];
    for (r, f) in real.iter().zip(fake) {
        if r.shape() != f.shape() {
            return Err(Error::shape("emd_report", format!("pair shapes {:?} vs {:?}", r.shape(), f.shape())));
        }
        sums[0] += value_emd(r.data(), f.data(), bins)?;
        let (pr, pf) = (decompose(&as_batch(r)?, depth)?, decompose(&as_batch(f)?, depth)?);
        for (k, (lr, lf)) in pr.levels.iter().zip(&pf.levels).enumerate() {
            for (j, band) in Band::ALL.into_iter().enumerate() {
                sums[1 + 4 * k + j] += value_emd(lr.band(band).data(), lf.band(band).data(), bins)?;
            }
        }
    }
    let n = real.len() as f64;
    let mut rows = vec![EmdRow { level: None, band: None, value: sums[0] / n }];
    for k in 0..depth {
        for (j, band) in Band::ALL.into_iter().enumerate() {
            rows.push(EmdRow { level: Some(k + 1), band: Some(band), value: sums[1 + 4 * k + j] / n });
        }
    }
    Ok(EmdReport { rows, pairs: real.len(), bins })
}
