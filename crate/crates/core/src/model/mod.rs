//! The staged network: four convolutional stages, fusion blocks after
//! stages 1-3 fed by wavelet levels 1-3, and a two-class classifier.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_tensors, save_checkpoint, write_tensors, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{softmax_rows, Conv2dSpec, Graph, OpTiming, Var};
use crate::error::{Error, Result};
use crate::fsf::{AblationMode, FsfParams, MAX_TOKENS};
use crate::nn::{collect_grads, Builder, Conv2d, ConvBnRelu, Linear, Mode, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub const NUM_STAGES: usize = 4;
pub const FUSION_LEVELS: usize = 3;
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub num_blocks: usize,
    pub downsample: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub widths: [usize; NUM_STAGES],
    pub blocks_per_stage: usize,
    pub dims: [usize; FUSION_LEVELS],
    pub heads: [usize; FUSION_LEVELS],
    pub mode: AblationMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            image_channels: 3,
            widths: [32, 64, 128, 256],
            blocks_per_stage: 2,
            dims: [64, 128, 320],
            heads: [1, 2, 5],
            mode: AblationMode::Full,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> [StageConfig; NUM_STAGES] {
        std::array::from_fn(|k| StageConfig {
            in_ch: if k == 0 { self.image_channels } else { self.widths[k - 1] },
            out_ch: self.widths[k],
            num_blocks: self.blocks_per_stage,
            downsample: 2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_stage == 0 || self.widths.contains(&0) || self.image_channels == 0 {
            return Err(Error::invalid("stage widths and block counts must be positive"));
        }
        for (d, h) in self.dims.iter().zip(&self.heads) {
            if *h == 0 || d % h != 0 {
                return Err(Error::invalid(format!("embedding dim {d} not divisible by {h} heads")));
            }
        }
        self.check_image(self.image_size, self.image_size)
    }

    /// Input extents must halve cleanly through every stage, and level-1
    /// attention must stay within the token budget.
    pub fn check_image(&self, h: usize, w: usize) -> Result<()> {
        let f = 1 << NUM_STAGES;
        if h != w || h == 0 || h % f != 0 {
            return Err(Error::shape("model", format!("input {h}x{w} must be square and divisible by {f}")));
        }
        if (h / 2) * (w / 2) > MAX_TOKENS {
            return Err(Error::invalid(format!(
                "{h}x{w} input gives {} level-1 tokens, budget is {MAX_TOKENS}",
                (h / 2) * (w / 2)
            )));
        }
        Ok(())
    }
}

/// conv-bn-relu, 2x2 max pool, then `num_blocks - 1` further conv-bn-relu.
#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<ConvBnRelu>,
}

impl Stage {
    fn new(b: &mut Builder<'_>, cfg: StageConfig) -> Self {
        let blocks = (0..cfg.num_blocks)
            .map(|i| {
                let cin = if i == 0 { cfg.in_ch } else { cfg.out_ch };
                ConvBnRelu::new(&mut b.scope(&format!("block{i}")), cin, cfg.out_ch, 3)
            })
            .collect();
        Stage { blocks }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let mut y = self.blocks[0].forward(s, x)?;
        y = s.graph.maxpool2d(y, 2, 2)?;
        for block in &self.blocks[1..] {
            y = block.forward(s, y)?;
        }
        Ok(y)
    }
}

/// Attention maps of one fusion level, `(B, heads, T, T)`.
#[derive(Clone, Copy, Debug)]
pub struct LevelAttention {
    pub level: usize,
    pub fsa: Option<Var>,
    pub cma: Option<Var>,
}

pub struct ForwardOutput {
    pub logits: Var,
    pub attentions: Vec<LevelAttention>,
}

/// Parameter handles of the network; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub stages: Vec<Stage>,
    pub fsf: Vec<FsfParams>,
    pub merges: Vec<Conv2d>,
    pub classifier: Linear,
}

impl Network {
    pub fn forward(&self, cfg: &ModelConfig, s: &mut Session<'_>, image: Var) -> Result<ForwardOutput> {
        let shape = s.graph.shape(image).to_vec();
        if shape.len() != 4 || shape[1] != cfg.image_channels {
            return Err(Error::shape("model", format!("image {shape:?}")));
        }
        cfg.check_image(shape[2], shape[3])?;
        let fuse = cfg.mode != AblationMode::BackboneOnly;
        let pyramid = if fuse { Some(s.graph.decompose(image, FUSION_LEVELS)?) } else { None };

        let mut x = image;
        let mut attentions = Vec::new();
        for (k, stage) in self.stages.iter().enumerate() {
            let feat = stage.forward(s, x)?;
            x = match &pyramid {
                Some(p) if k < FUSION_LEVELS => {
                    let out = self.fsf[k].forward(s, feat, &p.levels[k], cfg.mode)?;
                    attentions.push(LevelAttention { level: k + 1, fsa: out.attn_fsa, cma: out.attn_cma });
                    let cat = s.graph.concat(&[feat, out.fused], 1)?;
                    self.merges[k].forward(s, cat)?
                }
                _ => feat,
            };
        }
        let pooled = s.graph.global_avg_pool(x)?;
        let logits = self.classifier.forward(s, pooled)?;
        Ok(ForwardOutput { logits, attentions })
    }
}

/// Parameter counts by group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub backbone: usize,
    pub fusion: usize,
    pub merge: usize,
    pub classifier: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.backbone + self.fusion + self.merge + self.classifier
    }
}

pub struct MswtModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: Network,
}

/// Eval-mode results for one batch.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Tensor,
    /// Softmax probability of the fake class per sample.
    pub fake_prob: Vec<f64>,
    /// Per fusion level: (level, FSA map, CMA map).
    pub attentions: Vec<(usize, Option<Tensor>, Option<Tensor>)>,
}

impl MswtModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let stage_cfgs = config.stages();
        let stages = stage_cfgs
            .iter()
            .enumerate()
            .map(|(k, &c)| Stage::new(&mut b.scope(&format!("stage{}", k + 1)), c))
            .collect();
        let mut fsf = Vec::with_capacity(FUSION_LEVELS);
        let mut merges = Vec::with_capacity(FUSION_LEVELS);
        for k in 0..FUSION_LEVELS {
            let (w, d) = (config.widths[k], config.dims[k]);
            fsf.push(FsfParams::new(&mut b.scope(&format!("fsf{}", k + 1)), config.image_channels, w, d, config.heads[k])?);
            let point = Conv2dSpec { stride: 1, padding: 0 };
            merges.push(Conv2d::new(&mut b.scope(&format!("merge{}", k + 1)), w + 2 * d, w, 1, point, true));
        }
        let classifier = Linear::new(&mut b.scope("classifier"), config.widths[NUM_STAGES - 1], NUM_CLASSES);
        Ok(MswtModel { config, store, net: Network { stages, fsf, merges, classifier } })
    }

    pub fn count_params(&self) -> ParamCount {
        let c = |p: &str| self.store.count_params(p);
        ParamCount {
            backbone: c("stage"),
            fusion: c("fsf"),
            merge: c("merge"),
            classifier: c("classifier"),
        }
    }

    /// Ids of the parameters under a name prefix, e.g. `"fsf2"`.
    pub fn group(&self, prefix: &str) -> Vec<ParamId> {
        self.store.param_ids().filter(|&id| self.store.name(id).starts_with(prefix)).collect()
    }

    /// Eval-mode forward on a `(B, C, H, W)` batch.
    pub fn predict(&mut self, images: &Tensor) -> Result<Prediction> {
        let mut s = Session::new(&mut self.store, Mode::Eval);
        let x = s.constant(images.clone())?;
        let out = self.net.forward(&self.config, &mut s, x)?;
        let logits = s.graph.value(out.logits).clone();
        let probs = softmax_rows(&logits)?;
        let fake_prob = probs.data().chunks(NUM_CLASSES).map(|r| r[1]).collect();
        let attentions = out
            .attentions
            .iter()
            .map(|a| (a.level, a.fsa.map(|v| s.graph.value(v).clone()), a.cma.map(|v| s.graph.value(v).clone())))
            .collect();
        Ok(Prediction { logits, fake_prob, attentions })
    }

    /// Training-mode forward and backward. Returns the mean cross-entropy
    /// and the gradient of every parameter that influenced it. Batch-norm
    /// running statistics are updated.
    pub fn loss_and_grads(&mut self, images: &Tensor, labels: &[usize]) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
        let (value, graph, bound) = self.train_step(Graph::new(), images, labels)?;
        Ok((value, collect_grads(&graph, &bound)))
    }

    /// Training-mode forward without backward or update: only the
    /// batch-norm running statistics move towards those of `images`.
    pub fn update_batchnorm_stats(&mut self, images: &Tensor) -> Result<()> {
        let mut s = Session::new(&mut self.store, Mode::Train);
        let x = s.constant(images.clone())?;
        self.net.forward(&self.config, &mut s, x)?;
        Ok(())
    }

    /// Like [`loss_and_grads`](Self::loss_and_grads) but returns per-op
    /// forward and backward timings instead of gradients.
    pub fn profile_step(&mut self, images: &Tensor, labels: &[usize]) -> Result<(f64, Vec<OpTiming>)> {
        let (value, graph, _) = self.train_step(Graph::with_profiling(), images, labels)?;
        Ok((value, graph.timings()))
    }

    fn train_step(&mut self, graph: Graph, images: &Tensor, labels: &[usize]) -> Result<(f64, Graph, Vec<(ParamId, Var)>)> {
        let mut s = Session::with_graph(&mut self.store, Mode::Train, graph);
        let x = s.constant(images.clone())?;
        let out = self.net.forward(&self.config, &mut s, x)?;
        let loss = s.graph.cross_entropy(out.logits, labels)?;
        let (mut graph, bound) = s.into_bound();
        let value = graph.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss {value}")));
        }
        graph.backward(loss)?;
        Ok((value, graph, bound))
    }
}
