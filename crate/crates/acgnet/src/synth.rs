//! Seeded synthetic corpora of untrimmed-video segment features.
//!
//! Each video is background noise with a few planted action instances whose
//! segments are a class prototype plus per-segment noise (no two segments of
//! an instance share their noise, so instances are temporally incoherent).
//! A random subset of instance segments additionally has a fraction of its
//! feature coordinates zeroed, modeling occlusion-like spatial
//! incompleteness. Background stays untouched: the corruption is what the
//! graph enhancement is supposed to compensate for.
//!
//! Noise scales are relative to the unit-norm prototypes: a scale of `s`
//! yields per-coordinate deviation `s / sqrt(D)`, i.e. an expected total
//! noise norm of about `s`.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruthInstance;
use crate::features::FeatureMatrix;

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    /// Segments per video (T).
    pub segments: usize,
    /// Feature dimension (D).
    pub feature_dim: usize,
    /// Number of action classes (C).
    pub num_classes: usize,
    /// Inclusive range of instances per video.
    pub instances_per_video: (usize, usize),
    /// Inclusive range of instance lengths, in segments.
    pub instance_len: (usize, usize),
    /// Probability that an instance segment is corrupted.
    pub occlusion_rate: f64,
    /// Fraction of feature coordinates zeroed in a corrupted segment.
    pub occlusion_frac: f64,
    /// Noise scale inside instances (relative to the unit prototype norm).
    pub noise_sigma: f64,
    /// Noise scale of background segments.
    pub background_sigma: f64,
    /// Maximum pairwise cosine allowed between class prototypes.
    pub proto_max_cos: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 60,
            segments: 64,
            feature_dim: 32,
            num_classes: 5,
            instances_per_video: (1, 3),
            instance_len: (4, 12),
            occlusion_rate: 0.5,
            occlusion_frac: 0.5,
            noise_sigma: 0.3,
            background_sigma: 1.0,
            proto_max_cos: 0.3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::invalid("segments, feature_dim, num_classes must be positive"));
        }
        let (imin, imax) = self.instances_per_video;
        let (lmin, lmax) = self.instance_len;
        if imin > imax || lmin > lmax || lmin == 0 {
            return Err(Error::invalid("instance ranges must be non-empty"));
        }
        if lmax > self.segments {
            return Err(Error::invalid(format!(
                "maximum instance length {lmax} exceeds video length {}",
                self.segments
            )));
        }
        for (name, v) in [
            ("occlusion_rate", self.occlusion_rate),
            ("occlusion_frac", self.occlusion_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.noise_sigma < 0.0 || self.background_sigma < 0.0 {
            return Err(Error::invalid("noise scales must be non-negative"));
        }
        Ok(())
    }
}

/// One planted action instance; segment indices are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub class_id: usize,
    pub start_seg: usize,
    pub end_seg: usize,
}

/// One untrimmed video: features, its video-level label set, and (for
/// evaluation only) the hidden ground-truth instances.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: BTreeSet<usize>,
    pub instances: Vec<ActionInstance>,
}

/// A generated corpus plus the prototypes and corruption masks behind it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub videos: Vec<VideoRecord>,
    /// `C x D` unit-norm class prototypes.
    pub prototypes: Array2<f64>,
    /// Per video, per segment: whether the segment was corrupted.
    pub occlusion_masks: Vec<Vec<bool>>,
}

impl SynthCorpus {
    /// All ground-truth instances, in corpus order.
    pub fn ground_truth(&self) -> Vec<GroundTruthInstance> {
        self.videos
            .iter()
            .flat_map(|v| {
                v.instances.iter().map(|inst| GroundTruthInstance {
                    video_id: v.id.clone(),
                    class_id: inst.class_id,
                    start_seg: inst.start_seg,
                    end_seg: inst.end_seg,
                })
            })
            .collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(d, |_| normal(rng));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn draw_prototypes(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Array2<f64>> {
    let (c, d) = (cfg.num_classes, cfg.feature_dim);
    'attempt: for _ in 0..10_000 {
        let protos: Vec<Array1<f64>> = (0..c).map(|_| unit_vector(rng, d)).collect();
        for i in 0..c {
            for j in (i + 1)..c {
                if protos[i].dot(&protos[j]) > cfg.proto_max_cos {
                    continue 'attempt;
                }
            }
        }
        let mut out = Array2::zeros((c, d));
        for (i, p) in protos.iter().enumerate() {
            out.row_mut(i).assign(p);
        }
        return Ok(out);
    }
    Err(Error::Generation(format!(
        "could not draw {c} prototypes with pairwise cosine <= {} in {d} dimensions",
        cfg.proto_max_cos
    )))
}

fn place_instances(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Vec<ActionInstance>> {
    let count = rng.gen_range(cfg.instances_per_video.0..=cfg.instances_per_video.1);
    // THUMOS-style videos repeat one action: bias instances toward a
    // per-video primary class so same-class pairs exist across the timeline.
    let primary = rng.gen_range(0..cfg.num_classes);
    let mut placed: Vec<ActionInstance> = Vec::with_capacity(count);
    for _ in 0..count {
        let class_id = if rng.gen_bool(0.75) {
            primary
        } else {
            rng.gen_range(0..cfg.num_classes)
        };
        let len = rng.gen_range(cfg.instance_len.0..=cfg.instance_len.1);
        let mut placed_ok = false;
        for _ in 0..200 {
            let start = rng.gen_range(0..=cfg.segments - len);
            let end = start + len - 1;
            let overlaps = placed
                .iter()
                .any(|p| start <= p.end_seg && p.start_seg <= end);
            if !overlaps {
                placed.push(ActionInstance {
                    class_id,
                    start_seg: start,
                    end_seg: end,
                });
                placed_ok = true;
                break;
            }
        }
        if !placed_ok {
            return Err(Error::Generation(format!(
                "could not place {count} non-overlapping instances of length <= {} in {} segments",
                cfg.instance_len.1, cfg.segments
            )));
        }
    }
    placed.sort_by_key(|p| p.start_seg);
    Ok(placed)
}

/// Generates a corpus. Deterministic for a fixed config (including the seed).
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = draw_prototypes(&mut rng, cfg)?;
    let d = cfg.feature_dim;
    let per_coord_noise = cfg.noise_sigma / (d as f64).sqrt();
    let per_coord_background = cfg.background_sigma / (d as f64).sqrt();

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut occlusion_masks = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let instances = place_instances(&mut rng, cfg)?;

        let mut values =
            Array2::from_shape_fn((cfg.segments, d), |_| per_coord_background * normal(&mut rng));
        for inst in &instances {
            for t in inst.start_seg..=inst.end_seg {
                for c in 0..d {
                    values[[t, c]] =
                        prototypes[[inst.class_id, c]] + per_coord_noise * normal(&mut rng);
                }
            }
        }

        let mut mask = vec![false; cfg.segments];
        let zero_count = (cfg.occlusion_frac * d as f64).round() as usize;
        for inst in &instances {
            for t in inst.start_seg..=inst.end_seg {
                if rng.gen_bool(cfg.occlusion_rate) {
                    mask[t] = true;
                    for c in rand::seq::index::sample(&mut rng, d, zero_count) {
                        values[[t, c]] = 0.0;
                    }
                }
            }
        }

        let labels: BTreeSet<usize> = instances.iter().map(|i| i.class_id).collect();
        videos.push(VideoRecord {
            id: format!("video_{v:04}"),
            features: FeatureMatrix::new(values)?,
            labels,
            instances,
        });
        occlusion_masks.push(mask);
    }
    Ok(SynthCorpus {
        videos,
        prototypes,
        occlusion_masks,
    })
}

/// Summary statistics of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusReport {
    /// Ground-truth instance count per class.
    pub per_class_counts: Vec<usize>,
    pub total_instances: usize,
    pub total_instance_segments: usize,
    /// Fraction of instance segments that were corrupted.
    pub corruption_fraction: f64,
    /// Mean cosine between uncorrupted instance segments of the same class.
    pub mean_in_class_cos: f64,
    /// Mean cosine between uncorrupted instance segments of different classes.
    pub mean_cross_class_cos: f64,
}

pub fn corrupt_report(corpus: &SynthCorpus) -> CorpusReport {
    let num_classes = corpus.prototypes.nrows();
    let mut per_class_counts = vec![0usize; num_classes];
    let mut total_instances = 0usize;
    let mut instance_segments = 0usize;
    let mut corrupted_segments = 0usize;

    // (class, feature row) of every clean instance segment.
    let mut clean: Vec<(usize, Vec<f64>)> = Vec::new();
    for (video, mask) in corpus.videos.iter().zip(&corpus.occlusion_masks) {
        for inst in &video.instances {
            per_class_counts[inst.class_id] += 1;
            total_instances += 1;
            for t in inst.start_seg..=inst.end_seg {
                instance_segments += 1;
                if mask[t] {
                    corrupted_segments += 1;
                } else {
                    clean.push((inst.class_id, video.features.row(t).to_vec()));
                }
            }
        }
    }

    let mut in_sum = 0.0;
    let mut in_count = 0usize;
    let mut cross_sum = 0.0;
    let mut cross_count = 0usize;
    for i in 0..clean.len() {
        for j in (i + 1)..clean.len() {
            let cos = cosine(&clean[i].1, &clean[j].1);
            if clean[i].0 == clean[j].0 {
                in_sum += cos;
                in_count += 1;
            } else {
                cross_sum += cos;
                cross_count += 1;
            }
        }
    }

    CorpusReport {
        per_class_counts,
        total_instances,
        total_instance_segments: instance_segments,
        corruption_fraction: if instance_segments == 0 {
            0.0
        } else {
            corrupted_segments as f64 / instance_segments as f64
        },
        mean_in_class_cos: if in_count == 0 { 0.0 } else { in_sum / in_count as f64 },
        mean_cross_class_cos: if cross_count == 0 {
            0.0
        } else {
            cross_sum / cross_count as f64
        },
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = SynthConfig {
            num_videos: 4,
            ..SynthConfig::default()
        };
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.prototypes, b.prototypes);
        for (va, vb) in a.videos.iter().zip(&b.videos) {
            assert_eq!(va.features, vb.features);
            assert_eq!(va.instances, vb.instances);
            assert_eq!(va.labels, vb.labels);
        }
        assert_eq!(a.occlusion_masks, b.occlusion_masks);

        let c = generate_corpus(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(
            a.videos[0].features.values().to_owned(),
            c.videos[0].features.values().to_owned()
        );
    }

    #[test]
    fn without_corruption_instance_segments_equal_their_prototype() {
        let cfg = SynthConfig {
            num_videos: 3,
            occlusion_rate: 0.0,
            noise_sigma: 0.0,
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(&cfg).unwrap();
        for video in &corpus.videos {
            for inst in &video.instances {
                for t in inst.start_seg..=inst.end_seg {
                    let row = video.features.row(t);
                    let proto = corpus.prototypes.row(inst.class_id);
                    for (a, b) in row.iter().zip(proto.iter()) {
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_equal_the_instance_class_set_and_instances_fit() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        assert_eq!(corpus.videos.len(), 60);
        for video in &corpus.videos {
            let classes: BTreeSet<usize> =
                video.instances.iter().map(|i| i.class_id).collect();
            assert_eq!(video.labels, classes);
            assert!(!video.instances.is_empty());
            for inst in &video.instances {
                assert!(inst.start_seg <= inst.end_seg);
                assert!(inst.end_seg < video.features.num_segments());
            }
        }
    }

    #[test]
    fn instances_never_overlap() {
        let corpus = generate_corpus(&SynthConfig {
            num_videos: 30,
            instances_per_video: (3, 3),
            ..SynthConfig::default()
        })
        .unwrap();
        for video in &corpus.videos {
            for (i, a) in video.instances.iter().enumerate() {
                for b in &video.instances[i + 1..] {
                    assert!(a.end_seg < b.start_seg || b.end_seg < a.start_seg);
                }
            }
        }
    }

    #[test]
    fn infeasible_packing_is_a_generation_error() {
        let cfg = SynthConfig {
            num_videos: 1,
            segments: 10,
            instances_per_video: (5, 5),
            instance_len: (4, 4),
            ..SynthConfig::default()
        };
        match generate_corpus(&cfg) {
            Err(Error::Generation(_)) => {}
            other => panic!("expected a generation error, got {other:?}"),
        }
    }

    #[test]
    fn report_on_empty_corpus_is_all_zero() {
        let corpus = generate_corpus(&SynthConfig {
            num_videos: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        let report = corrupt_report(&corpus);
        assert_eq!(report.per_class_counts, vec![0; 5]);
        assert_eq!(report.total_instances, 0);
        assert_eq!(report.corruption_fraction, 0.0);
        assert_eq!(report.mean_in_class_cos, 0.0);
    }

    #[test]
    fn class_counts_sum_to_total_instances() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        let report = corrupt_report(&corpus);
        let by_video: usize = corpus.videos.iter().map(|v| v.instances.len()).sum();
        assert_eq!(report.per_class_counts.iter().sum::<usize>(), by_video);
        assert_eq!(report.total_instances, by_video);
    }

    #[test]
    fn corruption_fraction_tracks_the_occlusion_rate() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        let report = corrupt_report(&corpus);
        assert!(
            (report.corruption_fraction - 0.5).abs() <= 0.1,
            "corruption fraction {} strays from the occlusion rate",
            report.corruption_fraction
        );
    }

    #[test]
    fn prototypes_are_unit_norm_and_separated() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        let c = corpus.prototypes.nrows();
        for i in 0..c {
            let row = corpus.prototypes.row(i);
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-9);
            for j in (i + 1)..c {
                assert!(row.dot(&corpus.prototypes.row(j)) <= 0.3);
            }
        }
    }

    #[test]
    fn clean_segments_are_far_more_similar_within_a_class() {
        let report = corrupt_report(&generate_corpus(&SynthConfig::default()).unwrap());
        let margin = report.mean_in_class_cos - report.mean_cross_class_cos;
        // Default-seed measurement; regenerating with the default config must
        // reproduce this separation (see the margin assertions below).
        assert!(
            margin >= 0.3,
            "in-class/cross-class cosine margin {margin} too small \
             (in {}, cross {})",
            report.mean_in_class_cos,
            report.mean_cross_class_cos
        );
    }
}
