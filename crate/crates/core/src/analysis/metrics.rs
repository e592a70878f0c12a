//! Accuracy and ROC AUC at frame and video level.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Scores above this count as a "fake" prediction.
pub const THRESHOLD: f64 = 0.5;

fn check_scores(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 (real) or 1 (fake)"));
    }
    Ok(())
}

/// Probability that a random fake outscores a random real, ties counting
/// one half (the Mann-Whitney statistic).
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_scores(scores, labels)?;
    let fakes = labels.iter().filter(|&&l| l == 1).count() as u64;
    let reals = labels.len() as u64 - fakes;
    if fakes == 0 || reals == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the statistic, kept integral
    let (mut twice, mut reals_below) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let tied_fakes = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        let tied_reals = (j - i) as u64 - tied_fakes;
        twice += tied_fakes * (2 * reals_below + tied_reals);
        reals_below += tied_reals;
        i = j;
    }
    Ok(twice as f64 / (2 * fakes * reals) as f64)
}

/// Fraction of samples whose thresholded score matches the label.
pub fn accuracy(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_scores(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = scores.iter().zip(labels).filter(|(&s, &l)| (s > THRESHOLD) == (l == 1)).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// One video: mean frame score and the shared label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoScore {
    pub video_id: usize,
    pub score: f64,
    pub label: usize,
    pub frames: usize,
}

/// Averages frame scores per video, ordered by video id. All frames of a
/// video must carry the same label.
pub fn video_level(scores: &[f64], labels: &[usize], video_ids: &[usize]) -> Result<Vec<VideoScore>> {
    check_scores(scores, labels)?;
    if video_ids.len() != scores.len() {
        return Err(Error::invalid(format!("{} video ids for {} scores", video_ids.len(), scores.len())));
    }
    let mut groups: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for ((&s, &l), &v) in scores.iter().zip(labels).zip(video_ids) {
        let entry = groups.entry(v).or_insert_with(|| (Vec::new(), l));
        if entry.1 != l {
            return Err(Error::Data(format!("video {v} mixes real and fake frames")));
        }
        entry.0.push(s);
    }
    Ok(groups
        .into_iter()
        .map(|(video_id, (frames, label))| VideoScore {
            video_id,
            score: frames.iter().sum::<f64>() / frames.len() as f64,
            label,
            frames: frames.len(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Frame,
    Video,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub acc: f64,
    pub auc: f64,
    pub n_frames: usize,
    pub n_videos: usize,
    pub level: Level,
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.level {
            Level::Frame => "frame",
            Level::Video => "video",
        };
        write!(f, "{level}: ACC {:.4} AUC {:.4} ({} frames, {} videos)", self.acc, self.auc, self.n_frames, self.n_videos)
    }
}

/// Frame-level and video-level metrics of one scored split.
pub fn frame_and_video_metrics(scores: &[f64], labels: &[usize], video_ids: &[usize]) -> Result<(Metrics, Metrics)> {
    let videos = video_level(scores, labels, video_ids)?;
    let n_videos = videos.len();
    let frame = Metrics { acc: accuracy(scores, labels)?, auc: auc(scores, labels)?, n_frames: scores.len(), n_videos, level: Level::Frame };
    let (vs, vl): (Vec<f64>, Vec<usize>) = videos.iter().map(|v| (v.score, v.label)).unzip();
    let video = Metrics { acc: accuracy(&vs, &vl)?, auc: auc(&vs, &vl)?, n_frames: scores.len(), n_videos, level: Level::Video };
    Ok((frame, video))
}
