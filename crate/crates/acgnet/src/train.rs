//! Joint full-batch SGD over the graph convolution weights and the
//! localization head.
//!
//! The objective per step is `head_loss + epm_weight * epm_loss`, where the
//! head loss is the corpus-mean MIL classification loss and the EPM loss is
//! the easy-positive-mining term over sparse-graph edges. Per-segment
//! maximum activations enter the EPM term as detached constants: no gradient
//! flows into the head through them.
//!
//! Graph construction and neighbor averaging depend only on the fixed input
//! features, so both are computed once per video up front; only the graph
//! convolution and the head are re-run each epoch.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};

use crate::enhance::{
    fuse_features, gcn_forward, graph_average, Combine, FusionMode, GcnParams, LayerCache,
};
use crate::epm::{epm_loss, epm_loss_grad, gcn_backward, EpmBatch, EpmVideo};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{
    build_sparse_graph, row_normalize, AcgHyperparams, Adjacency, GraphVariant, RowNormalized,
    Sparse,
};
use crate::head::{compute_logits, top_k_indices, Cas, HeadParams, SCORE_CLAMP};
use crate::synth::VideoRecord;

/// Settings of one training run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Scale of the EPM term against the head loss.
    pub epm_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.4,
            epochs: 200,
            seed: 7,
            epm_weight: 0.02,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // A zero rate is allowed (it makes training a no-op) but negative
        // rates and weights are not.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if !self.epm_weight.is_finite() || self.epm_weight < 0.0 {
            return Err(Error::invalid("epm_weight must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Losses recorded at the start of one epoch (before the update).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub head_loss: f64,
    pub epm_loss: f64,
    pub total: f64,
}

/// Per-video constants of a training run.
#[derive(Debug, Clone)]
pub struct VideoContext {
    pub features: FeatureMatrix,
    pub labels: BTreeSet<usize>,
    pub sparse_adj: Adjacency<Sparse>,
    pub norm_adj: Adjacency<RowNormalized>,
    pub avg: FeatureMatrix,
}

/// Precomputed corpus state shared by every epoch.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub videos: Vec<VideoContext>,
    pub num_classes: usize,
    pub pool_k: usize,
    pub mode: FusionMode,
    pub epm_weight: f64,
}

/// One video's forward state at the current parameters.
struct VideoForward {
    /// Features as seen by the head (sum- or concat-fused).
    fused_head: FeatureMatrix,
    /// Sum-fused features compared against originals by the EPM term.
    fused_epm: FeatureMatrix,
    gcn_cache: Option<LayerCache>,
    cas: Cas,
    /// Per-segment maximum activation (detached).
    activations: Vec<f64>,
    video_scores: Vec<f64>,
    mil: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub gcn: GcnParams,
    pub head: HeadParams,
    pub history: Vec<EpochLoss>,
}

/// Gradients of the step objective with respect to all parameters, along
/// with the losses at the evaluation point.
pub struct StepGradients {
    pub gcn_layers: Vec<Array2<f64>>,
    pub classifier: Array2<f64>,
    pub bias: Array1<f64>,
    pub head_loss: f64,
    pub epm_loss: f64,
}

impl TrainContext {
    /// Builds per-video graphs and averaged features once.
    pub fn prepare(
        records: &[VideoRecord],
        hp: &AcgHyperparams,
        mode: &FusionMode,
        variant: GraphVariant,
        num_classes: usize,
        epm_weight: f64,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        mode.validate()?;
        let mut videos = Vec::with_capacity(records.len());
        for r in records {
            if r.labels.iter().any(|&c| c >= num_classes) {
                return Err(Error::invalid(format!(
                    "video {} carries a label outside 0..{num_classes}",
                    r.id
                )));
            }
            let sparse_adj = build_sparse_graph(&r.features, hp, variant)?;
            let norm_adj = row_normalize(&sparse_adj);
            let avg = graph_average(&r.features, &norm_adj)?;
            videos.push(VideoContext {
                features: r.features.clone(),
                labels: r.labels.clone(),
                sparse_adj,
                norm_adj,
                avg,
            });
        }
        let min_t = videos
            .iter()
            .map(|v| v.features.num_segments())
            .min()
            .expect("non-empty");
        let pool_k = HeadParams::default_pool_k(min_t).min(min_t);
        Ok(Self {
            videos,
            num_classes,
            pool_k,
            mode: *mode,
            epm_weight,
        })
    }

    /// Input width the head must accept under the current fusion mode.
    pub fn head_input_dim(&self) -> usize {
        self.mode.fused_dim(self.videos[0].features.dim())
    }

    fn forward_video(
        &self,
        v: &VideoContext,
        gcn: &GcnParams,
        head: &HeadParams,
        frozen_p: Option<&[f64]>,
    ) -> Result<VideoForward> {
        let t = v.features.num_segments();
        let d = v.features.dim();
        let (gcn_out, gcn_cache) = if self.mode.include_gcn {
            let (out, cache) = gcn_forward(&v.features, &v.norm_adj, gcn)?;
            (out, Some(cache))
        } else {
            (FeatureMatrix::new(Array2::zeros((t, d)))?, None)
        };

        let fused_head = fuse_features(&v.features, &v.avg, &gcn_out, &self.mode)?;
        let fused_epm = match self.mode.combine {
            Combine::Sum => fused_head.clone(),
            Combine::Concat => {
                let sum_mode = FusionMode {
                    combine: Combine::Sum,
                    ..self.mode
                };
                fuse_features(&v.features, &v.avg, &gcn_out, &sum_mode)?
            }
        };

        let logits = compute_logits(&fused_head, head)?;
        let cas = Cas::from_scores(logits.mapv(|x| 1.0 / (1.0 + (-x).exp())));
        let activations = match frozen_p {
            Some(p) => p.to_vec(),
            None => cas.max_over_classes(),
        };
        let pool_k = self.pool_k.min(t);
        let video_scores = crate::head::video_scores(&cas, pool_k)?;
        let mil = crate::head::mil_loss(&video_scores, &v.labels)?;
        Ok(VideoForward {
            fused_head,
            fused_epm,
            gcn_cache,
            cas,
            activations,
            video_scores,
            mil,
        })
    }

    fn epm_batch(&self, passes: &[VideoForward]) -> EpmBatch {
        EpmBatch {
            videos: self
                .videos
                .iter()
                .zip(passes)
                .map(|(v, f)| EpmVideo {
                    original: v.features.clone(),
                    enhanced: f.fused_epm.clone(),
                    sparse_adj: v.sparse_adj.clone(),
                    activations: f.activations.clone(),
                })
                .collect(),
        }
    }

    /// Head and EPM losses at the given parameters. When `frozen_p` is
    /// provided, the EPM activation weights are taken from it instead of the
    /// current activations; the finite-difference checks use this to match
    /// the detached-activation semantics of the analytic gradient.
    pub fn objective(
        &self,
        gcn: &GcnParams,
        head: &HeadParams,
        frozen_p: Option<&[Vec<f64>]>,
    ) -> Result<(f64, f64)> {
        let mut passes = Vec::with_capacity(self.videos.len());
        for (n, v) in self.videos.iter().enumerate() {
            let p = frozen_p.map(|all| all[n].as_slice());
            passes.push(self.forward_video(v, gcn, head, p)?);
        }
        let head_loss =
            passes.iter().map(|f| f.mil).sum::<f64>() / self.videos.len() as f64;
        let epm = if self.epm_weight > 0.0 {
            epm_loss(&self.epm_batch(&passes))?
        } else {
            0.0
        };
        Ok((head_loss, epm))
    }

    /// Current per-video maximum activations, for freezing in gradient checks.
    pub fn current_activations(
        &self,
        gcn: &GcnParams,
        head: &HeadParams,
    ) -> Result<Vec<Vec<f64>>> {
        self.videos
            .iter()
            .map(|v| Ok(self.forward_video(v, gcn, head, None)?.activations))
            .collect()
    }

    /// Analytic gradients of the step objective at the given parameters.
    pub fn gradients(&self, gcn: &GcnParams, head: &HeadParams) -> Result<StepGradients> {
        let n = self.videos.len() as f64;
        let d_in = head.input_dim();
        let c = head.num_classes();
        let mut grad_classifier = Array2::<f64>::zeros((d_in, c));
        let mut grad_bias = Array1::<f64>::zeros(c);
        let mut grad_layers = vec![Array2::<f64>::zeros((gcn.dim(), gcn.dim())); gcn.num_layers()];

        let mut passes = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            passes.push(self.forward_video(v, gcn, head, None)?);
        }
        let head_loss = passes.iter().map(|f| f.mil).sum::<f64>() / n;
        let (epm_value, epm_grads) = if self.epm_weight > 0.0 {
            let batch = self.epm_batch(&passes);
            (epm_loss(&batch)?, Some(epm_loss_grad(&batch)?))
        } else {
            (0.0, None)
        };

        for (idx, (v, fwd)) in self.videos.iter().zip(&passes).enumerate() {
            let t = v.features.num_segments();
            let pool_k = self.pool_k.min(t);
            let scores = fwd.cas.scores();

            // d(mean MIL)/d logits for this video, through the clamp, the
            // top-k mean pooling, and the sigmoid.
            let mut d_logits = Array2::<f64>::zeros((t, c));
            for class in 0..c {
                let s = fwd.video_scores[class];
                if !(SCORE_CLAMP..=1.0 - SCORE_CLAMP).contains(&s) {
                    continue;
                }
                let y = if v.labels.contains(&class) { 1.0 } else { 0.0 };
                let d_score = (-y / s + (1.0 - y) / (1.0 - s)) / (n * pool_k as f64);
                for &seg in &top_k_indices(scores.column(class), pool_k) {
                    let sig = scores[[seg, class]];
                    d_logits[[seg, class]] += d_score * sig * (1.0 - sig);
                }
            }

            grad_classifier += &fwd.fused_head.values().t().dot(&d_logits);
            grad_bias += &d_logits.sum_axis(ndarray::Axis(0));

            if self.mode.include_gcn {
                let d_fused = d_logits.dot(&head.classifier.t());
                let dims = v.features.dim();
                // Slice the gradient for the convolution block out of the
                // fused gradient, then add the EPM contribution (which flows
                // through the sum-fused view).
                let mut upstream = match self.mode.combine {
                    Combine::Sum => d_fused,
                    Combine::Concat => {
                        let offset = dims
                            * (self.mode.include_original as usize
                                + self.mode.include_avg as usize);
                        d_fused
                            .slice(ndarray::s![.., offset..offset + dims])
                            .to_owned()
                    }
                };
                if let Some(ref eg) = epm_grads {
                    upstream.scaled_add(self.epm_weight, &eg[idx]);
                }
                let cache = fwd.gcn_cache.as_ref().expect("cache exists when gcn included");
                let (_, layer_grads) = gcn_backward(&upstream, cache, &v.norm_adj, gcn)?;
                for (acc, g) in grad_layers.iter_mut().zip(layer_grads) {
                    *acc += &g;
                }
            }
        }

        Ok(StepGradients {
            gcn_layers: grad_layers,
            classifier: grad_classifier,
            bias: grad_bias,
            head_loss,
            epm_loss: epm_value,
        })
    }
}

/// Runs epoch-wise full-corpus SGD on the joint objective. Deterministic for
/// a fixed seed; returns the final parameters and the per-epoch loss history.
pub fn train(
    records: &[VideoRecord],
    cfg: &TrainConfig,
    hp: &AcgHyperparams,
    mode: &FusionMode,
    variant: GraphVariant,
    num_classes: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hp.validate()?;
    let ctx = TrainContext::prepare(records, hp, mode, variant, num_classes, cfg.epm_weight)?;
    let d = ctx.videos[0].features.dim();

    let mut gcn = GcnParams::init_seeded(d, GcnParams::DEFAULT_LAYERS, cfg.seed.wrapping_add(1))?;
    let mut head = HeadParams::init_seeded(
        ctx.head_input_dim(),
        num_classes,
        ctx.pool_k,
        cfg.seed.wrapping_add(2),
    );

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let grads = ctx.gradients(&gcn, &head)?;
        if !grads.head_loss.is_finite() {
            return Err(Error::NanLoss { epoch, term: "head" });
        }
        if !grads.epm_loss.is_finite() {
            return Err(Error::NanLoss { epoch, term: "epm" });
        }
        history.push(EpochLoss {
            epoch,
            head_loss: grads.head_loss,
            epm_loss: grads.epm_loss,
            total: grads.head_loss + cfg.epm_weight * grads.epm_loss,
        });

        let lr = cfg.learning_rate;
        head.classifier.scaled_add(-lr, &grads.classifier);
        head.bias.scaled_add(-lr, &grads.bias);
        for (w, g) in gcn.layers_mut().iter_mut().zip(&grads.gcn_layers) {
            w.scaled_add(-lr, g);
        }
    }
    Ok(TrainOutcome { gcn, head, history })
}
