//! Command line front end.
//!
//! Every subcommand accepts `--config FILE` with flat `key = value` lines
//! named like its long flags (dashes or underscores); flags given on the
//! command line win. Exit codes: 0 success, 2 usage, 3 data, 4 numerical.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use mswt::analysis::DEFAULT_BINS;
use mswt::data::{read_ppm, write_corpus, CorpusSpec, Split};
use mswt::gradcheck::{run_suite, Suite};
use mswt::harness::{corpus_emd_report, dump_dwt, evaluate, export_attention, parse_pairs, train, RunConfig};
use mswt::model::load_checkpoint;
use mswt::{Error, Result};

#[derive(Parser)]
#[command(name = "mswt", version, about = "Wavelet-transformer face forgery detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic real/fake corpus.
    GenCorpus(GenCorpus),
    /// Train a model and write metrics.csv, run.cfg and model.ckpt.
    Train(Train),
    /// Score a checkpoint on a corpus split.
    Eval(Eval),
    /// Per-sub-band EMD between real and fake images of a corpus split.
    EmdAnalyze(EmdAnalyze),
    /// Write the wavelet sub-bands of an image.
    DwtDump(DwtDump),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Gradcheck),
    /// Write the attention maps of a checkpoint on one image.
    ExportAttention(ExportAttention),
}

#[derive(Args)]
struct GenCorpus {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long)]
    val: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    strength: Option<f64>,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// full, backbone_only, dwt_concat, sa_only, fsa_only or cma_only.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    step_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validation cadence in iterations; 0 evaluates only at the end.
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Also report video-level metrics.
    #[arg(long)]
    video_level: bool,
    /// Write per-frame scores as CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct EmdAnalyze {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Use only the first N real/fake pairs.
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Args)]
struct DwtDump {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long)]
    config: Option<PathBuf>,
    /// all, nn, wavelet, fsf or model.
    #[arg(long)]
    module: Option<String>,
}

#[derive(Args)]
struct ExportAttention {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Settings read from a config file, consumed key by key.
struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
            for (k, v) in parse_pairs(&text)? {
                values.insert(k.replace('-', "_"), v);
            }
        }
        Ok(FileSettings { values })
    }

    /// The flag value if given, else the parsed file value.
    fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let file = self.values.remove(key);
        match (flag, file) {
            (Some(v), _) => Ok(Some(v)),
            (None, Some(text)) => text
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidArgument(format!("config key {key}: cannot parse {text:?}"))),
            (None, None) => Ok(None),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<T> {
        self.pick(key, flag)?
            .ok_or_else(|| Error::InvalidArgument(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Rejects keys no flag asked for.
    fn finish(self) -> Result<()> {
        match self.values.keys().next() {
            Some(k) => Err(Error::InvalidArgument(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }
}

fn parse_split(text: &str) -> Result<Split> {
    text.parse()
}

fn gen_corpus(a: GenCorpus) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let mut spec = CorpusSpec::default();
    let out: PathBuf = f.require("out", a.out)?;
    if let Some(v) = f.pick("seed", a.seed)? {
        spec.seed = v;
    }
    if let Some(v) = f.pick("train", a.train)? {
        spec.train = v;
    }
    if let Some(v) = f.pick("val", a.val)? {
        spec.val = v;
    }
    if let Some(v) = f.pick("test", a.test)? {
        spec.test = v;
    }
    if let Some(v) = f.pick("size", a.size)? {
        spec.size = v;
    }
    if let Some(v) = f.pick("strength", a.strength)? {
        spec.strength = v;
    }
    f.finish()?;
    spec.validate()?;
    write_corpus(&spec, &out)?;
    println!("wrote {} train, {} val, {} test images to {}", spec.train, spec.val, spec.test, out.display());
    Ok(())
}

fn train_cmd(a: Train) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let mut cfg = RunConfig::default();
    let fields: [(&str, Option<String>); 10] = [
        ("corpus", a.corpus.map(|p| p.display().to_string())),
        ("mode", a.mode),
        ("iters", a.iters.map(|v| v.to_string())),
        ("batch", a.batch.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("step_size", a.step_size.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("out", a.out.map(|p| p.display().to_string())),
        ("eval_every", a.eval_every.map(|v| v.to_string())),
        ("weight_decay", a.weight_decay.map(|v| v.to_string())),
    ];
    for (key, flag) in fields {
        if let Some(v) = f.pick::<String>(key, flag)? {
            cfg.set(key, &v)?;
        }
    }
    // remaining run settings without a flag of their own
    for key in ["gamma", "flip"] {
        if let Some(v) = f.pick::<String>(key, None)? {
            cfg.set(key, &v)?;
        }
    }
    f.finish()?;
    if !cfg.corpus.is_dir() {
        return Err(Error::Data(format!("corpus directory {} not found", cfg.corpus.display())));
    }
    let summary = train(&cfg, &mut io::stderr())?;
    println!("checkpoint {}", summary.checkpoint.display());
    println!("metrics {}", summary.metrics.display());
    println!("test {}", summary.test.frame);
    println!("test {}", summary.test.video);
    Ok(())
}

fn eval_cmd(a: Eval) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let checkpoint: PathBuf = f.require("checkpoint", a.checkpoint)?;
    let corpus: PathBuf = f.require("corpus", a.corpus)?;
    let split = parse_split(&f.pick("split", a.split)?.unwrap_or_else(|| "test".into()))?;
    let video = f.pick("video_level", a.video_level.then_some(true))?.unwrap_or(false);
    let scores: Option<PathBuf> = f.pick("scores", a.scores)?;
    f.finish()?;
    let e = evaluate(&checkpoint, &corpus, split)?;
    println!("{split} {} loss {:.6}", e.frame, e.loss);
    if video {
        println!("{split} {}", e.video);
    }
    if let Some(path) = scores {
        let mut text = String::from("index,fake_prob\n");
        for (i, s) in e.scores.iter().enumerate() {
            text.push_str(&format!("{i},{s}\n"));
        }
        fs::write(path, text)?;
    }
    Ok(())
}

fn emd_cmd(a: EmdAnalyze) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let corpus: PathBuf = f.require("corpus", a.corpus)?;
    let levels = f.pick("levels", a.levels)?.unwrap_or(3);
    let bins = f.pick("bins", a.bins)?.unwrap_or(DEFAULT_BINS);
    let out: Option<PathBuf> = f.pick("out", a.out)?;
    let split = parse_split(&f.pick("split", a.split)?.unwrap_or_else(|| "train".into()))?;
    let pairs = f.pick("pairs", a.pairs)?;
    f.finish()?;
    let report = corpus_emd_report(&corpus, split, levels, bins, pairs)?;
    print!("{report}");
    if let Some(out) = out {
        fs::write(out, report.to_csv())?;
    }
    Ok(())
}

fn dwt_cmd(a: DwtDump) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let image: PathBuf = f.require("image", a.image)?;
    let levels = f.pick("levels", a.levels)?.unwrap_or(3);
    let out: PathBuf = f.require("out", a.out)?;
    f.finish()?;
    let files = dump_dwt(&read_ppm(&image)?, levels, &out)?;
    println!("wrote {} sub-band images to {}", files.len(), out.display());
    Ok(())
}

fn gradcheck_cmd(a: Gradcheck) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let module = f.pick("module", a.module)?.unwrap_or_else(|| "all".into());
    f.finish()?;
    let suite: Suite = module.parse()?;
    let reports = run_suite(suite)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    for r in &reports {
        println!("{} {r}", if r.passed() { "ok  " } else { "FAIL" });
    }
    println!("{} checks, {failed} failed", reports.len());
    if failed > 0 {
        return Err(Error::NonFinite(format!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}

fn attention_cmd(a: ExportAttention) -> Result<()> {
    let mut f = FileSettings::load(a.config.as_deref())?;
    let checkpoint: PathBuf = f.require("checkpoint", a.checkpoint)?;
    let image: PathBuf = f.require("image", a.image)?;
    let out: PathBuf = f.require("out", a.out)?;
    f.finish()?;
    let mut model = load_checkpoint(&checkpoint)?;
    let (p, files) = export_attention(&mut model, &read_ppm(&image)?, &out)?;
    println!("fake probability {p:.6}; wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::EmdAnalyze(a) => emd_cmd(a),
        Command::DwtDump(a) => dwt_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::ExportAttention(a) => attention_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
