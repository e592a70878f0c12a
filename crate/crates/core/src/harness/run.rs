//! Seeded training and evaluation runs.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::parse_pairs;
use crate::analysis::{frame_and_video_metrics, Metrics};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::fsf::AblationMode;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, MswtModel};
use crate::nn::{AdamW, StepLr};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "iter,split,acc_frame,auc_frame,acc_video,auc_video,loss";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "run.cfg";
/// Evaluation batch size. Fixed so scores never depend on it.
pub const EVAL_BATCH: usize = 25;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub mode: AblationMode,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    /// Iterations between learning-rate halvings.
    pub step_size: usize,
    pub gamma: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Validation cadence in iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Random horizontal flips of training samples.
    pub flip: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: PathBuf::from("corpus"),
            mode: AblationMode::Full,
            iters: 150_000,
            batch: 24,
            lr: 1e-4,
            step_size: 60_000,
            gamma: 0.5,
            weight_decay: 0.01,
            seed: 0,
            out: PathBuf::from("run"),
            eval_every: 1000,
            flip: true,
        }
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::invalid(format!("{key}: cannot parse {value:?}"));
        match key {
            "corpus" => self.corpus = PathBuf::from(value),
            "mode" => self.mode = value.parse()?,
            "iters" => self.iters = value.parse().map_err(|_| bad())?,
            "batch" => self.batch = value.parse().map_err(|_| bad())?,
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "step_size" => self.step_size = value.parse().map_err(|_| bad())?,
            "gamma" => self.gamma = value.parse().map_err(|_| bad())?,
            "weight_decay" => self.weight_decay = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "out" => self.out = PathBuf::from(value),
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad())?,
            "flip" => self.flip = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::invalid(format!("unknown run setting {key:?}"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_pairs(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "corpus = {}\nmode = {}\niters = {}\nbatch = {}\nlr = {}\nstep_size = {}\ngamma = {}\nweight_decay = {}\nseed = {}\nout = {}\neval_every = {}\nflip = {}\n",
            self.corpus.display(),
            self.mode,
            self.iters,
            self.batch,
            self.lr,
            self.step_size,
            self.gamma,
            self.weight_decay,
            self.seed,
            self.out.display(),
            self.eval_every,
            self.flip
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be at least 1"));
        }
        if self.iters == 0 {
            return Err(Error::invalid("iters must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr {} must be positive", self.lr)));
        }
        if self.step_size == 0 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("step_size must be positive and gamma in (0, 1]"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr { base: self.lr, step_size: self.step_size as u64, gamma: self.gamma }
    }
}

/// Scores and metrics of one evaluated split.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub frame: Metrics,
    pub video: Metrics,
    /// Mean cross-entropy.
    pub loss: f64,
    /// Fake probability per sample, in split order.
    pub scores: Vec<f64>,
}

fn cross_entropy_row(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Eval-mode scores for every sample of `data`.
pub fn evaluate_model(model: &mut MswtModel, data: &Dataset) -> Result<Evaluation> {
    let mut scores = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, labels) = data.batch(chunk)?;
        let p = model.predict(&images)?;
        for (row, &label) in p.logits.data().chunks(p.logits.shape()[1]).zip(&labels) {
            loss += cross_entropy_row(row, label);
        }
        scores.extend(p.fake_prob);
    }
    let (frame, video) = frame_and_video_metrics(&scores, &data.labels, &data.video_ids)?;
    Ok(Evaluation { frame, video, loss: loss / data.len() as f64, scores })
}

/// Loads a checkpoint and scores one split of a corpus directory.
pub fn evaluate(checkpoint: &Path, corpus: &Path, split: Split) -> Result<Evaluation> {
    let mut model = load_checkpoint(checkpoint)?;
    let data = Dataset::load(corpus, split)?;
    check_image_size(&model.config, &data)?;
    evaluate_model(&mut model, &data)
}

fn check_image_size(config: &ModelConfig, data: &Dataset) -> Result<()> {
    let s = data.images.shape();
    if s[1] != config.image_channels || s[2] != config.image_size || s[3] != config.image_size {
        return Err(Error::Data(format!(
            "images are {}x{}x{}, model expects {}x{}x{}",
            s[1], s[2], s[3], config.image_channels, config.image_size, config.image_size
        )));
    }
    Ok(())
}

/// Endless seeded stream of training indices: shuffled passes over the
/// split, each index with a flip decision.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    flip: bool,
}

impl Sampler {
    fn new(seed: u64, len: usize, flip: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Sampler { rng, order: (0..len).collect(), pos: len, flip }
    }

    fn next(&mut self, n: usize) -> Vec<(usize, bool)> {
        (0..n)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                let flip = self.flip && self.rng.random_bool(0.5);
                (self.order[self.pos - 1], flip)
            })
            .collect()
    }
}

/// Mirrors the listed batch entries left to right in place.
fn flip_samples(images: &mut Tensor, which: &[bool]) {
    let s = images.shape().to_vec();
    let (w, per) = (s[3], s[1] * s[2] * s[3]);
    let data = images.data_mut();
    for (b, _) in which.iter().enumerate().filter(|(_, &f)| f) {
        for row in data[b * per..(b + 1) * per].chunks_exact_mut(w) {
            row.reverse();
        }
    }
}

fn metrics_row(iter: usize, split: Split, e: &Evaluation) -> String {
    format!("{iter},{split},{},{},{},{},{}\n", e.frame.acc, e.frame.auc, e.video.acc, e.video.auc, e.loss)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub losses: Vec<f64>,
    pub val: Evaluation,
    pub test: Evaluation,
    pub seconds: f64,
}

/// Trains from scratch. Writes `run.cfg`, `metrics.csv` (one `train` row
/// per iteration, `val` rows at the evaluation cadence and after the last
/// iteration, then one `test` row) and `model.ckpt` into `cfg.out`.
/// Progress lines go to `progress`.
pub fn train(cfg: &RunConfig, progress: &mut dyn Write) -> Result<TrainSummary> {
    cfg.validate()?;
    let start = Instant::now();
    let train_set = Dataset::load(&cfg.corpus, Split::Train)?;
    let val_set = Dataset::load(&cfg.corpus, Split::Val)?;
    let test_set = Dataset::load(&cfg.corpus, Split::Test)?;
    let size = train_set.images.shape()[2];
    let config = ModelConfig { image_size: size, image_channels: train_set.images.shape()[1], mode: cfg.mode, ..ModelConfig::default() };
    config.validate().map_err(|e| Error::Data(format!("corpus images do not fit the model: {e}")))?;
    check_image_size(&config, &val_set)?;
    check_image_size(&config, &test_set)?;

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_text())?;
    let metrics_path = cfg.out.join(METRICS_FILE);
    let mut log = BufWriter::new(File::create(&metrics_path)?);
    writeln!(log, "{METRICS_HEADER}")?;

    let mut model = MswtModel::new(config, cfg.seed)?;
    let mut opt = AdamW::new(cfg.weight_decay);
    let schedule = cfg.schedule();
    let mut sampler = Sampler::new(cfg.seed, train_set.len(), cfg.flip);
    let mut losses = Vec::with_capacity(cfg.iters);
    let mut last_val = None;
    for iter in 0..cfg.iters {
        let picks = sampler.next(cfg.batch);
        let indices: Vec<usize> = picks.iter().map(|p| p.0).collect();
        let flips: Vec<bool> = picks.iter().map(|p| p.1).collect();
        let (mut images, labels) = train_set.batch(&indices)?;
        flip_samples(&mut images, &flips);
        let (loss, grads) = model.loss_and_grads(&images, &labels).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("iteration {iter}: {what}")),
            other => other,
        })?;
        opt.step(&mut model.store, &grads, schedule.lr(iter as u64))?;
        losses.push(loss);
        writeln!(log, "{iter},train,,,,,{loss}")?;
        let done = iter + 1;
        if (cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.iters {
            let e = evaluate_model(&mut model, &val_set)?;
            log.write_all(metrics_row(done, Split::Val, &e).as_bytes())?;
            log.flush()?;
            writeln!(progress, "iter {done}: loss {loss:.4}, val {}, {}", e.frame, e.video)?;
            last_val = Some(e);
        } else if done % 10 == 0 {
            writeln!(progress, "iter {done}: loss {loss:.4} ({:.1} s)", start.elapsed().as_secs_f64())?;
        }
    }
    let test = evaluate_model(&mut model, &test_set)?;
    log.write_all(metrics_row(cfg.iters, Split::Test, &test).as_bytes())?;
    log.flush()?;
    writeln!(progress, "test {}, {}", test.frame, test.video)?;
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        metrics: metrics_path,
        losses,
        val: last_val.expect("at least one iteration"),
        test,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Discards progress output.
pub fn quiet() -> io::Sink {
    io::sink()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_corpus, CorpusSpec};

    #[test]
    fn config_text_round_trip_and_validation() {
        let cfg = RunConfig { mode: AblationMode::CmaOnly, iters: 3000, step_size: 1000, seed: 7, flip: false, ..RunConfig::default() };
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(RunConfig::parse("batch = 0").unwrap().validate().is_err());
        assert!(RunConfig::parse("iters = 0").unwrap().validate().is_err());
        assert!(RunConfig::parse("lr = -1").unwrap().validate().is_err());
        assert!(RunConfig::parse("mode = xception").is_err());
        assert!(RunConfig::parse("depth = 3").is_err());
        let d = RunConfig::default();
        assert_eq!((d.batch, d.lr, d.step_size, d.iters), (24, 1e-4, 60_000, 150_000));
    }

    #[test]
    fn sampler_is_seeded_and_covers_each_pass() {
        let a: Vec<_> = Sampler::new(3, 10, true).next(25);
        let b: Vec<_> = Sampler::new(3, 10, true).next(25);
        assert_eq!(a, b);
        let mut first: Vec<usize> = a[..10].iter().map(|p| p.0).collect();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert!(a.iter().any(|p| p.1) && a.iter().any(|p| !p.1));
        assert!(Sampler::new(3, 10, false).next(25).iter().all(|p| !p.1));
    }

    #[test]
    fn flip_reverses_rows_of_chosen_samples() {
        let mut t = Tensor::from_vec((0..16).map(|v| v as f64).collect(), &[2, 1, 2, 4]).unwrap();
        flip_samples(&mut t, &[false, true]);
        assert_eq!(&t.data()[..8], &[0., 1., 2., 3., 4., 5., 6., 7.]);
        assert_eq!(&t.data()[8..], &[11., 10., 9., 8., 15., 14., 13., 12.]);
    }

    #[test]
    fn tiny_run_writes_artifacts_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        write_corpus(&CorpusSpec { seed: 1, train: 8, val: 4, test: 4, size: 16, ..CorpusSpec::default() }, &corpus).unwrap();
        let cfg = |out: &str| RunConfig { corpus: corpus.clone(), iters: 3, batch: 4, eval_every: 2, out: dir.path().join(out), ..RunConfig::default() };
        let a = train(&cfg("a"), &mut quiet()).unwrap();
        let b = train(&cfg("b"), &mut quiet()).unwrap();
        let log = fs::read_to_string(&a.metrics).unwrap();
        assert_eq!(log, fs::read_to_string(&b.metrics).unwrap());
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.iter().filter(|l| l.contains(",train,")).count(), 3);
        assert!(lines[3].starts_with("2,val,"));
        assert!(lines[5].starts_with("3,val,"));
        assert!(lines[6].starts_with("3,test,"));
        assert_eq!(lines.len(), 7);

        let e = evaluate(&a.checkpoint, &corpus, Split::Test).unwrap();
        assert_eq!(e.scores, a.test.scores);
        assert_eq!(RunConfig::parse(&fs::read_to_string(dir.path().join("a").join(CONFIG_FILE)).unwrap()).unwrap(), cfg("a"));
    }
}
