//! Inspection utilities behind the command line: sub-band dumps, attention
//! export and corpus-level EMD reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{emd_report, EmdReport};
use crate::data::{write_pgm, write_ppm, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::MswtModel;
use crate::tensor::Tensor;
use crate::wavelet::{decompose, Band};

/// Affine map of all values onto [0, 1]; constant inputs map to 0.5.
pub fn normalize_unit(t: &Tensor) -> Tensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    t.map(|v| if span > 0.0 { (v - lo) / span } else { 0.5 })
}

fn as_batch(image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("image", format!("expected (C, H, W), got {s:?}")));
    }
    image.clone().reshape(&[1, s[0], s[1], s[2]])
}

/// Writes every sub-band of a `depth`-level decomposition of a `(C, H, W)`
/// image as `level{k}_{band}.ppm`, each stretched to the full 8-bit range.
pub fn dump_dwt(image: &Tensor, depth: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let pyramid = decompose(&as_batch(image)?, depth)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for level in &pyramid.levels {
        for band in Band::ALL {
            let t = level.band(band);
            let s = t.shape();
            let img = normalize_unit(&t.clone().reshape(&[s[1], s[2], s[3]])?);
            let path = out.join(format!("level{}_{}.ppm", level.level, band.name()));
            if s[1] == 3 {
                write_ppm(&img, &path)?;
            } else {
                write_pgm(&img.reshape(&[s[2], s[3]])?, &path)?;
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// Runs the model on one image and writes each attention map averaged over
/// heads, as `level{k}_{fsa|cma}.csv` (a `T x T` matrix, query rows) and a
/// max-scaled `level{k}_{fsa|cma}.pgm` heat map. Returns the fake
/// probability and the written files.
pub fn export_attention(model: &mut MswtModel, image: &Tensor, out: &Path) -> Result<(f64, Vec<PathBuf>)> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("image", format!("expected (C, H, W), got {s:?}")));
    }
    if s[0] != model.config.image_channels || s[1] != model.config.image_size || s[2] != model.config.image_size {
        return Err(Error::Data(format!(
            "image is {}x{}x{}, model expects {}x{}x{}",
            s[0], s[1], s[2], model.config.image_channels, model.config.image_size, model.config.image_size
        )));
    }
    let p = model.predict(&as_batch(image)?)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (level, fsa, cma) in &p.attentions {
        for (kind, map) in [("fsa", fsa), ("cma", cma)] {
            let Some(map) = map else { continue };
            let ms = map.shape();
            let (heads, t) = (ms[1], ms[2]);
            let mut mean = vec![0.0; t * t];
            for head in map.data()[..heads * t * t].chunks_exact(t * t) {
                for (m, v) in mean.iter_mut().zip(head) {
                    *m += v / heads as f64;
                }
            }
            let mut csv = String::new();
            for row in mean.chunks_exact(t) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(csv, "{}", cells.join(",")).expect("string write");
            }
            let stem = format!("level{level}_{kind}");
            let csv_path = out.join(format!("{stem}.csv"));
            fs::write(&csv_path, csv)?;
            let max = mean.iter().copied().fold(0.0, f64::max);
            let heat = Tensor::from_vec(mean.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect(), &[t, t])?;
            let pgm_path = out.join(format!("{stem}.pgm"));
            write_pgm(&heat, &pgm_path)?;
            written.extend([csv_path, pgm_path]);
        }
    }
    Ok((p.fake_prob[0], written))
}

/// Real and fake images of a split as aligned pairs (fake `k` forged from
/// real `k`), optionally truncated to the first `max_pairs`.
pub fn corpus_pairs(data: &Dataset, max_pairs: Option<usize>) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let s = data.images.shape();
    let per = s[1] * s[2] * s[3];
    let pairs = (data.len() / 2).min(max_pairs.unwrap_or(usize::MAX));
    let (mut real, mut fake) = (Vec::with_capacity(pairs), Vec::with_capacity(pairs));
    for p in 0..pairs {
        let (r, f) = (2 * p, 2 * p + 1);
        if data.labels[r] != 0 || data.labels[f] != 1 {
            return Err(Error::Data(format!("samples {r} and {f} are not a real/fake pair")));
        }
        for (i, dst) in [(r, &mut real), (f, &mut fake)] {
            let pixels = data.images.data()[i * per..(i + 1) * per].to_vec();
            dst.push(Tensor::from_vec(pixels, &s[1..])?);
        }
    }
    Ok((real, fake))
}

/// EMD report over the real/fake pairs of one corpus split on disk.
pub fn corpus_emd_report(dir: &Path, split: Split, depth: usize, bins: usize, max_pairs: Option<usize>) -> Result<EmdReport> {
    let data = Dataset::load(dir, split)?;
    let (real, fake) = corpus_pairs(&data, max_pairs)?;
    emd_report(&real, &fake, depth, bins)
}
