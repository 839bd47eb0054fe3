//! High-level drivers tying enhancement, the head, and the evaluator into
//! train/localize/evaluate workflows, plus the ablation sweep used by the
//! CLI and the acceptance checks.

use crate::enhance::{enhance_features_variant, Combine, FusionMode, GcnParams};
use crate::error::Result;
use crate::eval::{mean_ap, DetectedProposal, EvalReport};
use crate::graph::{AcgHyperparams, GraphVariant};
use crate::head::{compute_cas, generate_proposals, predicted_classes, video_scores, HeadParams};
use crate::synth::VideoRecord;
use crate::train::{train, TrainConfig, TrainOutcome};

/// Default IoU thresholds: 0.1 through 0.7 in steps of 0.1.
pub fn default_iou_thresholds() -> Vec<f64> {
    (1..=7).map(|i| i as f64 / 10.0).collect()
}

/// Splits a corpus into train and test parts: the first two thirds
/// (rounded up) train, the rest test.
pub fn split_corpus(videos: &[VideoRecord]) -> (&[VideoRecord], &[VideoRecord]) {
    let cut = videos.len().div_ceil(3) * 2;
    let cut = cut.min(videos.len());
    videos.split_at(cut)
}

/// Runs the localization head over enhanced features of each video and
/// collects scored proposals.
pub fn localize_videos(
    videos: &[VideoRecord],
    hp: &AcgHyperparams,
    variant: GraphVariant,
    gcn: &GcnParams,
    head: &HeadParams,
    mode: &FusionMode,
    act_threshold: f64,
) -> Result<Vec<DetectedProposal>> {
    let mut detections = Vec::new();
    for video in videos {
        let enhanced = enhance_features_variant(&video.features, hp, gcn, mode, variant)?;
        let cas = compute_cas(&enhanced.features, head)?;
        let pool_k = head.pool_k.min(cas.num_segments());
        let scores = video_scores(&cas, pool_k)?;
        let classes = predicted_classes(&scores);
        for p in generate_proposals(&cas, &classes, act_threshold)? {
            detections.push(DetectedProposal {
                video_id: video.id.clone(),
                class_id: p.class_id,
                start_seg: p.start_seg,
                end_seg: p.end_seg,
                score: p.score,
            });
        }
    }
    Ok(detections)
}

/// Trains on the train split and reports mAP on the test split.
pub fn train_and_evaluate(
    train_videos: &[VideoRecord],
    test_videos: &[VideoRecord],
    cfg: &TrainConfig,
    hp: &AcgHyperparams,
    mode: &FusionMode,
    variant: GraphVariant,
    num_classes: usize,
    act_threshold: f64,
    iou_thresholds: &[f64],
) -> Result<(TrainOutcome, EvalReport)> {
    let outcome = train(train_videos, cfg, hp, mode, variant, num_classes)?;
    let proposals = localize_videos(
        test_videos,
        hp,
        variant,
        &outcome.gcn,
        &outcome.head,
        mode,
        act_threshold,
    )?;
    let gts: Vec<_> = test_videos
        .iter()
        .flat_map(|v| {
            v.instances.iter().map(|inst| crate::eval::GroundTruthInstance {
                video_id: v.id.clone(),
                class_id: inst.class_id,
                start_seg: inst.start_seg,
                end_seg: inst.end_seg,
            })
        })
        .collect();
    let report = mean_ap(&proposals, &gts, iou_thresholds)?;
    Ok((outcome, report))
}

/// One configuration of the ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSetting {
    /// Which sweep the row belongs to: "graph", "lambda", or "fusion".
    pub section: &'static str,
    pub variant: GraphVariant,
    pub lambda: f64,
    pub k: usize,
    pub mode: FusionMode,
    pub epm_weight: f64,
}

/// One emitted row: the setting plus its test mAP at IoU 0.5.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub setting: AblationSetting,
    pub map_at_05: f64,
}

/// Enumerates the full sweep around a base configuration:
/// graph variants crossed with sparsity levels (the densest K runs without a
/// threshold, mirroring the no-sparsification row), a lambda sweep at the
/// default K, and the feature/loss/fusion combinations.
pub fn ablation_settings(
    base_hp: &AcgHyperparams,
    base_epm_weight: f64,
    t: usize,
) -> Vec<AblationSetting> {
    let default_mode = FusionMode::default();
    let mut settings = Vec::new();

    let mut ks: Vec<usize> = [1, 5, 20, base_hp.k, t]
        .into_iter()
        .filter(|&k| k <= t)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    for variant in [
        GraphVariant::SimilarityOnly,
        GraphVariant::SimilarityMinusTemporal,
        GraphVariant::Combined,
    ] {
        for &k in &ks {
            let lambda = if k == t { 0.0 } else { base_hp.lambda };
            settings.push(AblationSetting {
                section: "graph",
                variant,
                lambda,
                k,
                mode: default_mode,
                epm_weight: base_epm_weight,
            });
        }
    }

    let mut lambda = 0.05;
    while lambda < 1.0 {
        settings.push(AblationSetting {
            section: "lambda",
            variant: GraphVariant::Combined,
            lambda,
            k: base_hp.k,
            mode: default_mode,
            epm_weight: base_epm_weight,
        });
        lambda += 0.10;
    }

    let fusion = |orig: bool, avg: bool, gcn: bool, combine: Combine| FusionMode {
        include_original: orig,
        include_avg: avg,
        include_gcn: gcn,
        combine,
    };
    use Combine::{Concat, Sum};
    let rows: [(FusionMode, bool); 13] = [
        (fusion(true, false, false, Sum), false),
        (fusion(false, true, false, Sum), false),
        (fusion(true, true, false, Sum), false),
        (fusion(true, true, false, Concat), false),
        (fusion(true, false, true, Sum), false),
        (fusion(true, false, true, Concat), false),
        (fusion(false, false, true, Sum), true),
        (fusion(false, true, true, Sum), true),
        (fusion(true, false, true, Sum), true),
        (fusion(true, false, true, Concat), true),
        (fusion(true, true, true, Sum), false),
        (fusion(true, true, true, Sum), true),
        (fusion(true, true, true, Concat), true),
    ];
    for (mode, epm) in rows {
        settings.push(AblationSetting {
            section: "fusion",
            variant: GraphVariant::Combined,
            lambda: base_hp.lambda,
            k: base_hp.k,
            mode,
            epm_weight: if epm { base_epm_weight } else { 0.0 },
        });
    }
    settings
}

/// Trains and evaluates one ablation setting on a fixed corpus split. Every
/// row reuses the same seed and corpus so rows are directly comparable.
pub fn run_ablation_setting(
    videos: &[VideoRecord],
    setting: &AblationSetting,
    cfg: &TrainConfig,
    base_hp: &AcgHyperparams,
    num_classes: usize,
    act_threshold: f64,
) -> Result<AblationRow> {
    let hp = AcgHyperparams {
        lambda: setting.lambda,
        k: setting.k,
        ..*base_hp
    };
    let cfg = TrainConfig {
        epm_weight: setting.epm_weight,
        ..*cfg
    };
    let (train_videos, test_videos) = split_corpus(videos);
    let (_, report) = train_and_evaluate(
        train_videos,
        test_videos,
        &cfg,
        &hp,
        &setting.mode,
        setting.variant,
        num_classes,
        act_threshold,
        &[0.5],
    )?;
    Ok(AblationRow {
        setting: setting.clone(),
        map_at_05: report.thresholds[0].mean_ap,
    })
}
