//! A minimal weakly-supervised localization head: per-segment sigmoid class
//! activations, top-k video-level pooling, a multi-label MIL classification
//! loss, and threshold-based proposal generation with an inner/outer
//! contrast score.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Score clamp applied before logarithms in the MIL loss.
pub const SCORE_CLAMP: f64 = 1e-7;

/// Linear classifier over (possibly widened) segment features.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `D_in x C` weight matrix.
    pub classifier: Array2<f64>,
    /// Per-class bias.
    pub bias: Array1<f64>,
    /// Segments pooled per class for the video-level score.
    pub pool_k: usize,
}

impl HeadParams {
    /// Default pooling width for a video of `t` segments.
    pub fn default_pool_k(t: usize) -> usize {
        (t / 8).max(1)
    }

    /// Seeded small-uniform initialization.
    pub fn init_seeded(input_dim: usize, num_classes: usize, pool_k: usize, seed: u64) -> Self {
        let s = (6.0 / (input_dim + num_classes) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            classifier: Array2::from_shape_fn((input_dim, num_classes), |_| rng.gen_range(-s..s)),
            bias: Array1::zeros(num_classes),
            pool_k,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.classifier.nrows()
    }
}

/// Class activation sequence: `T x C` sigmoid scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Cas {
    scores: Array2<f64>,
}

impl Cas {
    /// Wraps raw scores; entries must lie in [0, 1].
    pub fn from_scores(scores: Array2<f64>) -> Self {
        debug_assert!(scores.iter().all(|&s| (0.0..=1.0).contains(&s)));
        Self { scores }
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn num_segments(&self) -> usize {
        self.scores.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    /// Per-segment maximum over classes: the activation weights of the EPM
    /// loss.
    pub fn max_over_classes(&self) -> Vec<f64> {
        self.scores
            .rows()
            .into_iter()
            .map(|row| row.iter().fold(0.0f64, |acc, &v| acc.max(v)))
            .collect()
    }
}

/// A scored temporal interval for one class; segment indices are inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub class_id: usize,
    pub start_seg: usize,
    pub end_seg: usize,
    pub score: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Segment logits `F * W + b` and their sigmoids. The logits are what the
/// trainer differentiates through.
pub fn compute_logits(features: &FeatureMatrix, params: &HeadParams) -> Result<Array2<f64>> {
    if features.dim() != params.input_dim() {
        return Err(Error::invalid(format!(
            "classifier expects {}-dimensional features, got {}",
            params.input_dim(),
            features.dim()
        )));
    }
    Ok(features.values().dot(&params.classifier) + &params.bias)
}

/// Class activation sequence: rowwise `sigmoid(F * W + b)`.
pub fn compute_cas(features: &FeatureMatrix, params: &HeadParams) -> Result<Cas> {
    let logits = compute_logits(features, params)?;
    Ok(Cas {
        scores: logits.mapv(sigmoid),
    })
}

/// Indices of the `pool_k` largest values in a column, ties broken by
/// ascending segment index.
pub(crate) fn top_k_indices(column: ArrayView1<'_, f64>, pool_k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..column.len()).collect();
    idx.sort_by(|&a, &b| column[b].total_cmp(&column[a]).then(a.cmp(&b)));
    idx.truncate(pool_k);
    idx
}

/// Video-level class scores: per class, the mean of the `pool_k` highest
/// segment scores.
pub fn video_scores(cas: &Cas, pool_k: usize) -> Result<Vec<f64>> {
    if pool_k == 0 || pool_k > cas.num_segments() {
        return Err(Error::invalid(format!(
            "pool_k must lie in [1, {}], got {pool_k}",
            cas.num_segments()
        )));
    }
    Ok((0..cas.num_classes())
        .map(|c| {
            let col = cas.scores.column(c);
            let top = top_k_indices(col, pool_k);
            top.iter().map(|&t| col[t]).sum::<f64>() / pool_k as f64
        })
        .collect())
}

/// Multi-label MIL classification loss: binary cross-entropy summed over
/// classes, with targets 1 for present labels and 0 otherwise.
pub fn mil_loss(video_scores: &[f64], label_set: &BTreeSet<usize>) -> Result<f64> {
    if let Some(&bad) = label_set.iter().find(|&&c| c >= video_scores.len()) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            video_scores.len()
        )));
    }
    let mut loss = 0.0;
    for (c, &s) in video_scores.iter().enumerate() {
        let s = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
        if label_set.contains(&c) {
            loss -= s.ln();
        } else {
            loss -= (1.0 - s).ln();
        }
    }
    Ok(loss)
}

/// Groups above-threshold segments of each predicted class into maximal runs
/// and scores each run by inner mean minus flanking mean.
///
/// The flank on each side is up to `ceil(len / 4)` segments immediately
/// outside the run; if the run touches both ends of the video the flank term
/// is zero. Output is sorted by descending score.
pub fn generate_proposals(
    cas: &Cas,
    predicted_classes: &[usize],
    act_threshold: f64,
) -> Result<Vec<Proposal>> {
    if !(0.0..1.0).contains(&act_threshold) || act_threshold <= 0.0 {
        return Err(Error::invalid(format!(
            "activation threshold must lie in (0, 1), got {act_threshold}"
        )));
    }
    let t = cas.num_segments();
    let mut proposals = Vec::new();
    for &class_id in predicted_classes {
        if class_id >= cas.num_classes() {
            return Err(Error::invalid(format!(
                "predicted class {class_id} out of range for {} classes",
                cas.num_classes()
            )));
        }
        let col = cas.scores.column(class_id);
        let mut start = None;
        for i in 0..=t {
            let marked = i < t && col[i] > act_threshold;
            match (start, marked) {
                (None, true) => start = Some(i),
                (Some(s), false) => {
                    let end = i - 1;
                    proposals.push(score_run(col, class_id, s, end));
                    start = None;
                }
                _ => {}
            }
        }
    }
    proposals.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.start_seg.cmp(&b.start_seg))
    });
    Ok(proposals)
}

fn score_run(col: ArrayView1<'_, f64>, class_id: usize, start: usize, end: usize) -> Proposal {
    let len = end - start + 1;
    let inner: f64 = (start..=end).map(|i| col[i]).sum::<f64>() / len as f64;

    let flank_width = len.div_ceil(4);
    let mut flank_sum = 0.0;
    let mut flank_count = 0usize;
    for i in start.saturating_sub(flank_width)..start {
        flank_sum += col[i];
        flank_count += 1;
    }
    for i in (end + 1)..(end + 1 + flank_width).min(col.len()) {
        flank_sum += col[i];
        flank_count += 1;
    }
    let flank_mean = if flank_count == 0 {
        0.0
    } else {
        flank_sum / flank_count as f64
    };
    Proposal {
        class_id,
        start_seg: start,
        end_seg: end,
        score: inner - flank_mean,
    }
}

/// Classes whose video-level score exceeds 0.5.
pub fn predicted_classes(scores: &[f64]) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s > 0.5)
        .map(|(c, _)| c)
        .collect()
}
