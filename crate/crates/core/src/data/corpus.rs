//! Deterministic corpora of real/fake frame pairs grouped into videos.
//!
//! Pair `p` of a split belongs to video pair `v = p / 10` and is frame
//! `p % 10` of it. The real frame goes to video `2v`, its forgery to video
//! `2v + 1`. Every random draw comes from a ChaCha8 stream keyed by
//! (corpus seed, split, video pair, purpose, frame), so generation order
//! does not matter and splits never share a stream.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::netpbm::{quantize_tensor, read_ppm, write_pgm, write_ppm};
use super::synth::{gen_fake, Sample, Scene};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAMES_PER_VIDEO: usize = 10;
pub const MANIFEST_HEADER: &str = "path,label,video_id,frame_idx";
/// Name of the file recording the generating spec inside a corpus.
pub const SPEC_FILE: &str = "corpus.cfg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?} (train, val, test)")))
    }
}

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Scene = 1,
    Frame = 2,
    Forgery = 3,
}

/// 32-byte ChaCha8 key for one stream. Distinct arguments give distinct
/// keys, so streams are disjoint by construction.
pub fn stream_key(seed: u64, split: Split, video_pair: u64, purpose: Purpose, frame: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8] = split.tag();
    key[9] = purpose as u8;
    key[16..24].copy_from_slice(&video_pair.to_le_bytes());
    key[24..].copy_from_slice(&frame.to_le_bytes());
    key
}

fn stream(seed: u64, split: Split, video_pair: u64, purpose: Purpose, frame: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_key(seed, split, video_pair, purpose, frame))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Square image extent in pixels.
    pub size: usize,
    /// Blur sigma of the forgeries, in [0.5, 3].
    pub strength: f64,
    /// Forged area as a fraction of the face area.
    pub region_scale: (f64, f64),
    pub octaves: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 7,
            train: 2000,
            val: 200,
            test: 500,
            size: 64,
            strength: 1.5,
            region_scale: (0.1, 0.4),
            octaves: 3,
        }
    }
}

impl CorpusSpec {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            let n = self.count(split);
            if n < 2 || n % 2 != 0 {
                return Err(Error::invalid(format!("{split} count {n} must be even and at least 2")));
            }
        }
        if self.size < 8 || self.size % 8 != 0 {
            return Err(Error::invalid(format!("image size {} must be a positive multiple of 8", self.size)));
        }
        if !(0.5..=3.0).contains(&self.strength) {
            return Err(Error::invalid(format!("strength {} outside [0.5, 3]", self.strength)));
        }
        let (lo, hi) = self.region_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::invalid(format!("region scale {lo}..{hi}")));
        }
        if self.octaves == 0 || self.octaves > 6 {
            return Err(Error::invalid(format!("octave count {}", self.octaves)));
        }
        Ok(())
    }

    /// Flat `key = value` text, readable by [`CorpusSpec::parse`].
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\ntrain = {}\nval = {}\ntest = {}\nsize = {}\nstrength = {}\nregion_min = {}\nregion_max = {}\noctaves = {}\n",
            self.seed, self.train, self.val, self.test, self.size, self.strength, self.region_scale.0, self.region_scale.1, self.octaves
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = CorpusSpec::default();
        for (key, value) in crate::harness::config::parse_pairs(text)? {
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::invalid(format!("{key}: not a number: {v}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::invalid(format!("{key}: not an integer: {v}")));
            match key.as_str() {
                "seed" => spec.seed = value.parse().map_err(|_| Error::invalid(format!("seed: {value}")))?,
                "train" => spec.train = int(&value)?,
                "val" => spec.val = int(&value)?,
                "test" => spec.test = int(&value)?,
                "size" => spec.size = int(&value)?,
                "strength" => spec.strength = num(&value)?,
                "region_min" => spec.region_scale.0 = num(&value)?,
                "region_max" => spec.region_scale.1 = num(&value)?,
                "octaves" => spec.octaves = int(&value)?,
                _ => return Err(Error::invalid(format!("unknown corpus key {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Generates one split in manifest order (real then fake for each pair),
/// handing each sample to `sink`. Images are quantized to 8 bits, so a
/// corpus read back from disk equals the generated one.
pub fn generate_split(spec: &CorpusSpec, split: Split, mut sink: impl FnMut(Sample) -> Result<()>) -> Result<()> {
    spec.validate()?;
    let pairs = spec.count(split) / 2;
    let mut scene: Option<(usize, Scene)> = None;
    for p in 0..pairs {
        let (v, f) = (p / FRAMES_PER_VIDEO, p % FRAMES_PER_VIDEO);
        if scene.as_ref().is_none_or(|(sv, _)| *sv != v) {
            let mut r = stream(spec.seed, split, v as u64, Purpose::Scene, 0);
            scene = Some((v, Scene::new(&mut r, spec.size, spec.octaves)));
        }
        let (_, s) = scene.as_ref().expect("just set");
        let mut real = s.frame(&mut stream(spec.seed, split, v as u64, Purpose::Frame, f as u64));
        real.image = quantize_tensor(&real.image);
        real.video_id = 2 * v;
        real.frame_idx = f;
        let mut fake = gen_fake(&real, &mut stream(spec.seed, split, v as u64, Purpose::Forgery, f as u64), spec.strength, spec.region_scale)?;
        fake.image = quantize_tensor(&fake.image);
        fake.video_id = 2 * v + 1;
        sink(real)?;
        sink(fake)?;
    }
    Ok(())
}

/// In-memory corpus, one sample list per split.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn make_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let collect = |split| {
        let mut v = Vec::with_capacity(spec.count(split));
        generate_split(spec, split, |s| {
            v.push(s);
            Ok(())
        })?;
        Ok::<_, Error>(v)
    };
    Ok(Corpus { spec: spec.clone(), train: collect(Split::Train)?, val: collect(Split::Val)?, test: collect(Split::Test)? })
}

fn sample_stem(s: &Sample) -> String {
    format!("v{:05}_f{:02}", s.video_id, s.frame_idx)
}

/// Writes images (`<split>/<stem>.ppm`), masks (`<split>/<stem>_mask.pgm`),
/// one manifest per split (`<split>.csv`) and the generating `CorpusSpec` as `corpus.cfg`.
pub fn write_corpus(spec: &CorpusSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SPEC_FILE), spec.to_text())?;
    for split in Split::ALL {
        fs::create_dir_all(dir.join(split.name()))?;
        let mut manifest = String::from(MANIFEST_HEADER);
        manifest.push('\n');
        generate_split(spec, split, |s| {
            let rel = format!("{}/{}.ppm", split.name(), sample_stem(&s));
            write_ppm(&s.image, &dir.join(&rel))?;
            write_pgm(&s.mask, &dir.join(format!("{}/{}_mask.pgm", split.name(), sample_stem(&s))))?;
            manifest.push_str(&format!("{rel},{},{},{}\n", s.label, s.video_id, s.frame_idx));
            Ok(())
        })?;
        fs::write(dir.join(format!("{}.csv", split.name())), manifest)?;
    }
    Ok(())
}

pub fn read_spec(dir: &Path) -> Result<CorpusSpec> {
    let path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    CorpusSpec::parse(&text)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub video_id: usize,
    pub frame_idx: usize,
}

pub fn read_manifest(dir: &Path, split: Split) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(format!("{}.csv", split.name()));
    let text = fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Data(format!("{}: missing header {MANIFEST_HEADER:?}", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Data(format!("{}:{}: malformed line {line:?}", path.display(), i + 2));
            let f: Vec<&str> = line.split(',').collect();
            let [p, label, video, frame] = f[..] else { return Err(bad()) };
            let label: usize = label.parse().map_err(|_| bad())?;
            if label > 1 {
                return Err(bad());
            }
            Ok(ManifestEntry {
                path: dir.join(p),
                label,
                video_id: video.parse().map_err(|_| bad())?,
                frame_idx: frame.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// A split loaded for training or evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// `(N, 3, H, W)`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub video_ids: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let images = Tensor::stack(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())?;
        Ok(Dataset {
            images,
            labels: samples.iter().map(|s| s.label).collect(),
            video_ids: samples.iter().map(|s| s.video_id).collect(),
        })
    }

    pub fn load(dir: &Path, split: Split) -> Result<Self> {
        let entries = read_manifest(dir, split)?;
        if entries.is_empty() {
            return Err(Error::Data(format!("{split} split of {} is empty", dir.display())));
        }
        let mut images = Vec::with_capacity(entries.len());
        for e in &entries {
            let img = read_ppm(&e.path).map_err(|err| Error::Data(format!("{}: {err}", e.path.display())))?;
            if images.first().is_some_and(|f: &Tensor| f.shape() != img.shape()) {
                return Err(Error::Data(format!("{}: image size differs from the first image", e.path.display())));
            }
            images.push(img);
        }
        Ok(Dataset {
            images: Tensor::stack(&images)?,
            labels: entries.iter().map(|e| e.label).collect(),
            video_ids: entries.iter().map(|e| e.video_id).collect(),
        })
    }

    /// Images `indices` as a `(len, 3, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let shape = self.images.shape();
        let per = shape[1..].iter().product::<usize>();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut s = shape.to_vec();
        s[0] = indices.len();
        Ok((Tensor::from_vec(data, &s)?, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> CorpusSpec {
        CorpusSpec { seed: 3, train: 24, val: 4, test: 6, size: 16, ..CorpusSpec::default() }
    }

    #[test]
    fn counts_balance_and_video_grouping() {
        let c = make_corpus(&small()).unwrap();
        for split in Split::ALL {
            let s = c.split(split);
            assert_eq!(s.len(), small().count(split));
            assert_eq!(s.iter().filter(|x| x.label == 1).count(), s.len() / 2);
            for x in s {
                assert_eq!(x.video_id % 2, x.label);
                assert_eq!(x.mask.data().iter().any(|&m| m != 0.0), x.label == 1);
            }
        }
        // 12 pairs: frames 0..9 of video pair 0 then 0..1 of pair 1
        let fakes: Vec<_> = c.train.iter().filter(|s| s.label == 1).map(|s| (s.video_id, s.frame_idx)).collect();
        assert_eq!(fakes[9], (1, 9));
        assert_eq!(fakes[10], (3, 0));
    }

    #[test]
    fn default_spec_counts() {
        let spec = CorpusSpec::default();
        assert_eq!((spec.train, spec.val, spec.test), (2000, 200, 500));
        spec.validate().unwrap();
    }

    #[test]
    fn split_streams_are_disjoint() {
        let spec = CorpusSpec::default();
        let keys = |split: Split| -> HashSet<[u8; 32]> {
            (0..spec.count(split).div_ceil(2 * FRAMES_PER_VIDEO) as u64)
                .map(|v| stream_key(spec.seed, split, v, Purpose::Scene, 0))
                .collect()
        };
        let (train, val, test) = (keys(Split::Train), keys(Split::Val), keys(Split::Test));
        assert_eq!(train.len(), 100);
        assert!(train.is_disjoint(&test) && train.is_disjoint(&val) && val.is_disjoint(&test));
    }

    #[test]
    fn spec_text_round_trip_and_validation() {
        let spec = CorpusSpec { strength: 2.25, region_scale: (0.2, 0.3), ..small() };
        assert_eq!(CorpusSpec::parse(&spec.to_text()).unwrap(), spec);
        for bad in [
            CorpusSpec { train: 3, ..small() },
            CorpusSpec { test: 0, ..small() },
            CorpusSpec { size: 12, ..small() },
            CorpusSpec { strength: 0.1, ..small() },
            CorpusSpec { region_scale: (0.5, 0.2), ..small() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(CorpusSpec::parse("colour = red").is_err());
    }

    #[test]
    fn disk_round_trip_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small();
        write_corpus(&spec, dir.path()).unwrap();
        assert_eq!(read_spec(dir.path()).unwrap(), spec);
        let mem = make_corpus(&spec).unwrap();
        for split in Split::ALL {
            let entries = read_manifest(dir.path(), split).unwrap();
            let data = Dataset::load(dir.path(), split).unwrap();
            let expected = Dataset::from_samples(mem.split(split)).unwrap();
            assert_eq!(data.images, expected.images);
            assert_eq!(data.labels, expected.labels);
            assert_eq!(entries.len(), spec.count(split));
        }
        let (b, l) = Dataset::load(dir.path(), Split::Test).unwrap().batch(&[5, 0]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 16, 16]);
        assert_eq!(l, vec![1, 0]);
    }

    #[test]
    fn malformed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("val.csv"), "path,label\n").unwrap();
        assert!(matches!(read_manifest(dir.path(), Split::Val), Err(Error::Data(_))));
        fs::write(dir.path().join("val.csv"), format!("{MANIFEST_HEADER}\na.ppm,2,0,0\n")).unwrap();
        assert!(matches!(read_manifest(dir.path(), Split::Val), Err(Error::Data(_))));
        assert!(matches!(read_manifest(dir.path(), Split::Test), Err(Error::Data(_))));
    }
}
