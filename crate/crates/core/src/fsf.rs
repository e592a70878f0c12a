//! Frequency and spatial feature fusion.
//!
//! High-frequency sub-bands of one wavelet level become `F_H` through three
//! band convolutions and a 1x1 combine; stage features become `F_S` through a
//! 1x1 down-channel projection. Frequency-based spatial attention takes its
//! queries and keys from `F_H` and values from `F_S`; cross-modality
//! attention takes queries from `F_S` and keys and values from `F_H`. The two
//! outputs are concatenated along channels.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Conv2dSpec, Var};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv2d, ConvBnRelu, Session, TransformerBlock};
use crate::wavelet::WaveletLevel;

/// Largest token count accepted by the attention blocks.
pub const MAX_TOKENS: usize = 4096;

/// Model wiring used for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AblationMode {
    Full,
    /// No fusion at all; stage outputs feed the next stage directly.
    BackboneOnly,
    /// High-frequency features concatenated without attention.
    DwtConcat,
    /// Self-attention on spatial features in place of FSA.
    SaOnly,
    FsaOnly,
    CmaOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Full,
        AblationMode::BackboneOnly,
        AblationMode::DwtConcat,
        AblationMode::SaOnly,
        AblationMode::FsaOnly,
        AblationMode::CmaOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::BackboneOnly => "backbone_only",
            AblationMode::DwtConcat => "dwt_concat",
            AblationMode::SaOnly => "sa_only",
            AblationMode::FsaOnly => "fsa_only",
            AblationMode::CmaOnly => "cma_only",
        }
    }

    pub fn index(self) -> usize {
        AblationMode::ALL.iter().position(|&m| m == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        AblationMode::ALL.get(i).copied()
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode '{s}'")))
    }
}

/// What each half of the fused output was computed by.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Fsa,
    Cma,
    SelfAttention,
    HighFreq,
}

pub struct FsfOutput {
    /// `(B, 2d, h, w)`, channel concatenation of `o1` and `o2`.
    pub fused: Var,
    pub o1: Var,
    pub o2: Var,
    pub attn_fsa: Option<Var>,
    pub attn_cma: Option<Var>,
    pub provenance: (Provenance, Provenance),
}

#[derive(Clone, Debug)]
pub struct FsfParams {
    /// LH, HL, HH in that order.
    pub band_convs: [ConvBnRelu; 3],
    pub combine: Conv2d,
    pub down: Conv2d,
    pub fsa: TransformerBlock,
    pub cma: TransformerBlock,
    pub dim: usize,
    pub heads: usize,
    pub stage_channels: usize,
}

impl FsfParams {
    pub fn new(b: &mut Builder<'_>, image_channels: usize, stage_channels: usize, dim: usize, heads: usize) -> Result<Self> {
        let band_convs = [
            ConvBnRelu::new(&mut b.scope("band_lh"), image_channels, dim, 3),
            ConvBnRelu::new(&mut b.scope("band_hl"), image_channels, dim, 3),
            ConvBnRelu::new(&mut b.scope("band_hh"), image_channels, dim, 3),
        ];
        let point = Conv2dSpec { stride: 1, padding: 0 };
        Ok(FsfParams {
            band_convs,
            combine: Conv2d::new(&mut b.scope("combine"), 3 * dim, dim, 1, point, true),
            down: Conv2d::new(&mut b.scope("down"), stage_channels, dim, 1, point, true),
            fsa: TransformerBlock::new(&mut b.scope("fsa"), dim, heads)?,
            cma: TransformerBlock::new(&mut b.scope("cma"), dim, heads)?,
            dim,
            heads,
            stage_channels,
        })
    }

    /// `F_H = combine(concat(conv_LH(LH), conv_HL(HL), conv_HH(HH)))`.
    pub fn prep_high_freq(&self, s: &mut Session<'_>, level: &WaveletLevel<Var>) -> Result<Var> {
        let mut parts = Vec::with_capacity(3);
        for (conv, band) in self.band_convs.iter().zip([level.lh, level.hl, level.hh]) {
            parts.push(conv.forward(s, band)?);
        }
        let cat = s.graph.concat(&parts, 1)?;
        self.combine.forward(s, cat)
    }

    /// `F_S`: 1x1 projection of stage features to `d` channels.
    pub fn down_channel(&self, s: &mut Session<'_>, feat: Var) -> Result<Var> {
        let c = s.graph.shape(feat).get(1).copied();
        if c != Some(self.stage_channels) {
            return Err(Error::shape(
                "down_channel",
                format!("features {:?} for {} stage channels", s.graph.shape(feat), self.stage_channels),
            ));
        }
        self.down.forward(s, feat)
    }

    /// Frequency-based spatial attention: Q, K from `F_H`, V and residual
    /// from `F_S`. Returns `O_1` as `(B, d, h, w)` and the attention map.
    pub fn fsa(&self, s: &mut Session<'_>, f_h: Var, f_s: Var) -> Result<(Var, Var)> {
        self.attend(s, &self.fsa, [f_h, f_h, f_s, f_s])
    }

    /// Cross-modality attention: Q and residual from `F_S`, K, V from `F_H`.
    pub fn cma(&self, s: &mut Session<'_>, f_s: Var, f_h: Var) -> Result<(Var, Var)> {
        self.attend(s, &self.cma, [f_s, f_h, f_h, f_s])
    }

    /// Self-attention over `F_S` with the FSA block's weights.
    pub fn self_attention(&self, s: &mut Session<'_>, f_s: Var) -> Result<(Var, Var)> {
        self.attend(s, &self.fsa, [f_s; 4])
    }

    /// Runs `block` on maps given as (query, key, value, residual).
    fn attend(&self, s: &mut Session<'_>, block: &TransformerBlock, maps: [Var; 4]) -> Result<(Var, Var)> {
        let shape = s.graph.shape(maps[0]).to_vec();
        for &m in &maps[1..] {
            if s.graph.shape(m) != shape.as_slice() {
                return Err(Error::shape("fsf_attention", format!("{:?} vs {shape:?}", s.graph.shape(m))));
            }
        }
        if shape.len() != 4 || shape[1] != self.dim {
            return Err(Error::shape("fsf_attention", format!("map {shape:?} for dim {}", self.dim)));
        }
        let (b, d, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if h * w > MAX_TOKENS {
            return Err(Error::invalid(format!("{} tokens exceed the budget of {MAX_TOKENS}", h * w)));
        }
        let mut tokens = [maps[0]; 4];
        for (t, &m) in tokens.iter_mut().zip(&maps) {
            *t = to_tokens(s, m)?;
        }
        let (out, attn) = block.forward_sources(s, tokens[0], tokens[1], tokens[2], tokens[3])?;
        let out = s.graph.permute(out, &[0, 2, 1])?;
        let out = s.graph.reshape(out, &[b, d, h, w])?;
        Ok((out, attn))
    }

    /// Full block for the given wiring. `BackboneOnly` is handled by the
    /// caller and rejected here.
    pub fn forward(&self, s: &mut Session<'_>, feat: Var, level: &WaveletLevel<Var>, mode: AblationMode) -> Result<FsfOutput> {
        let fs = s.graph.shape(feat).to_vec();
        let ls = s.graph.shape(level.lh).to_vec();
        if fs.len() != 4 || ls.len() != 4 || fs[0] != ls[0] || fs[2..] != ls[2..] {
            return Err(Error::shape("fsf", format!("features {fs:?} vs sub-bands {ls:?}")));
        }
        let f_s = self.down_channel(s, feat)?;
        let f_h = if mode == AblationMode::SaOnly { None } else { Some(self.prep_high_freq(s, level)?) };
        let (o1, o2, attn_fsa, attn_cma, provenance) = match mode {
            AblationMode::Full => {
                let f_h = f_h.expect("computed");
                let (o1, a1) = self.fsa(s, f_h, f_s)?;
                let (o2, a2) = self.cma(s, f_s, f_h)?;
                (o1, o2, Some(a1), Some(a2), (Provenance::Fsa, Provenance::Cma))
            }
            AblationMode::FsaOnly => {
                let (o1, a1) = self.fsa(s, f_h.expect("computed"), f_s)?;
                (o1, o1, Some(a1), None, (Provenance::Fsa, Provenance::Fsa))
            }
            AblationMode::CmaOnly => {
                let (o2, a2) = self.cma(s, f_s, f_h.expect("computed"))?;
                (o2, o2, None, Some(a2), (Provenance::Cma, Provenance::Cma))
            }
            AblationMode::SaOnly => {
                let (o, a) = self.self_attention(s, f_s)?;
                (o, o, Some(a), None, (Provenance::SelfAttention, Provenance::SelfAttention))
            }
            AblationMode::DwtConcat => {
                let f_h = f_h.expect("computed");
                (f_h, f_h, None, None, (Provenance::HighFreq, Provenance::HighFreq))
            }
            AblationMode::BackboneOnly => return Err(Error::invalid("backbone_only has no fusion block")),
        };
        let fused = s.graph.concat(&[o1, o2], 1)?;
        Ok(FsfOutput { fused, o1, o2, attn_fsa, attn_cma, provenance })
    }
}

/// `(B, d, h, w)` to `(B, h*w, d)`, one token per spatial position.
pub fn to_tokens(s: &mut Session<'_>, map: Var) -> Result<Var> {
    let sh = s.graph.shape(map).to_vec();
    let flat = s.graph.reshape(map, &[sh[0], sh[1], sh[2] * sh[3]])?;
    s.graph.permute(flat, &[0, 2, 1])
}
