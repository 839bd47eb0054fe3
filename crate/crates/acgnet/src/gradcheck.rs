//! Finite-difference verification of every analytic gradient in the crate:
//! the EPM loss gradient, the graph-convolution backward pass, and the full
//! training objective.
//!
//! All checks use central differences with step 1e-5 in 64-bit arithmetic.
//! Relative error is measured against max(|analytic|, |fd|, 1e-3); the floor
//! keeps round-off noise on near-zero entries from registering as failures
//! while leaving real formula errors (which are O(1)) clearly visible.
//! Instances are redrawn when a ReLU pre-activation or a top-k pooling
//! boundary sits within the difference step, where the objective is not
//! differentiable and finite differences say nothing about the gradient.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::enhance::{gcn_forward, FusionMode, GcnParams};
use crate::epm::{epm_loss, epm_loss_grad, gcn_backward, EpmBatch, EpmVideo};
use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::graph::{Adjacency, GraphVariant, RowNormalized, Sparse};
use crate::head::HeadParams;
use crate::synth::{generate_corpus, SynthConfig};
use crate::train::{TrainConfig, TrainContext};

pub const FD_STEP: f64 = 1e-5;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked_entries: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Aggregate report over all gradient suites.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3)
}

fn random_feature_matrix(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
    FeatureMatrix::new(Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0))).unwrap()
}

fn random_sparse(rng: &mut ChaCha8Rng, t: usize) -> Adjacency<Sparse> {
    let values = Array2::from_shape_fn((t, t), |_| {
        if rng.gen_bool(0.35) {
            rng.gen_range(0.5..1.0)
        } else {
            0.0
        }
    });
    Adjacency::<Sparse>::from_values(values).unwrap()
}

fn random_row_stochastic(rng: &mut ChaCha8Rng, t: usize) -> Adjacency<RowNormalized> {
    let mut raw = Array2::from_shape_fn((t, t), |_| rng.gen_range(0.05..1.0));
    for i in 0..t {
        let s: f64 = raw.row(i).sum();
        raw.row_mut(i).mapv_inplace(|v| v / s);
    }
    Adjacency::<RowNormalized>::from_values(raw).unwrap()
}

/// Checks the EPM loss gradient against finite differences on every enhanced
/// feature entry, over `instances` random batches.
pub fn check_epm_gradient(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut entries = 0usize;
    for _ in 0..instances {
        let n = rng.gen_range(1..=3);
        let t = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=6);
        let mut batch = EpmBatch {
            videos: (0..n)
                .map(|_| EpmVideo {
                    original: random_feature_matrix(&mut rng, t, d),
                    enhanced: random_feature_matrix(&mut rng, t, d),
                    sparse_adj: random_sparse(&mut rng, t),
                    activations: (0..t).map(|_| rng.gen_range(0.0..1.0)).collect(),
                })
                .collect(),
        };
        let grads = epm_loss_grad(&batch)?;
        for v in 0..n {
            for i in 0..t {
                for c in 0..d {
                    let bump = |batch: &mut EpmBatch, delta: f64| {
                        let mut vals = batch.videos[v].enhanced.values().to_owned();
                        vals[[i, c]] += delta;
                        batch.videos[v].enhanced = FeatureMatrix::new(vals).unwrap();
                    };
                    bump(&mut batch, FD_STEP);
                    let up = epm_loss(&batch)?;
                    bump(&mut batch, -2.0 * FD_STEP);
                    let down = epm_loss(&batch)?;
                    bump(&mut batch, FD_STEP);
                    let fd = (up - down) / (2.0 * FD_STEP);
                    max_err = max_err.max(rel_err(grads[v][[i, c]], fd));
                    entries += 1;
                }
            }
        }
    }
    Ok(CheckResult {
        name: "epm_loss vs central differences".into(),
        max_rel_err: max_err,
        checked_entries: entries,
        tolerance: 1e-4,
    })
}

/// Draws a GCN instance whose pre-activations stay away from the ReLU kink,
/// where finite differences are ill-defined.
fn kink_safe_gcn_instance(
    rng: &mut ChaCha8Rng,
) -> (FeatureMatrix, Adjacency<RowNormalized>, GcnParams, Array2<f64>) {
    loop {
        let t = rng.gen_range(2..=8);
        let d = rng.gen_range(2..=6);
        let f = random_feature_matrix(rng, t, d);
        let adj = random_row_stochastic(rng, t);
        let params = GcnParams::init_seeded(d, 2, rng.gen()).unwrap();
        let (_, cache) = gcn_forward(&f, &adj, &params).unwrap();
        let margin = cache
            .pre_activations
            .iter()
            .flat_map(|m| m.iter())
            .fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
        if margin > 1e-3 {
            let coeffs = Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0));
            return (f, adj, params, coeffs);
        }
    }
}

/// Checks the graph-convolution backward pass against finite differences on
/// every weight entry and every input feature entry.
pub fn check_gcn_gradient(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut entries = 0usize;
    for _ in 0..instances {
        let (f, adj, params, coeffs) = kink_safe_gcn_instance(&mut rng);
        let (t, d) = (f.num_segments(), f.dim());

        let objective = |f: &FeatureMatrix, p: &GcnParams| -> f64 {
            let (out, _) = gcn_forward(f, &adj, p).unwrap();
            (&out.values().to_owned() * &coeffs).sum()
        };

        let (_, cache) = gcn_forward(&f, &adj, &params)?;
        let (grad_f, grad_w) = gcn_backward(&coeffs, &cache, &adj, &params)?;

        for layer in 0..params.num_layers() {
            for r in 0..d {
                for c in 0..d {
                    let mut p = params.clone();
                    p.layers_mut()[layer][[r, c]] += FD_STEP;
                    let up = objective(&f, &p);
                    p.layers_mut()[layer][[r, c]] -= 2.0 * FD_STEP;
                    let down = objective(&f, &p);
                    let fd = (up - down) / (2.0 * FD_STEP);
                    max_err = max_err.max(rel_err(grad_w[layer][[r, c]], fd));
                    entries += 1;
                }
            }
        }
        for i in 0..t {
            for c in 0..d {
                let mut vals = f.values().to_owned();
                vals[[i, c]] += FD_STEP;
                let up = objective(&FeatureMatrix::new(vals.clone()).unwrap(), &params);
                vals[[i, c]] -= 2.0 * FD_STEP;
                let down = objective(&FeatureMatrix::new(vals).unwrap(), &params);
                let fd = (up - down) / (2.0 * FD_STEP);
                max_err = max_err.max(rel_err(grad_f[[i, c]], fd));
                entries += 1;
            }
        }
    }
    Ok(CheckResult {
        name: "gcn_backward vs central differences".into(),
        max_rel_err: max_err,
        checked_entries: entries,
        tolerance: 1e-4,
    })
}

/// Draws a small training corpus and parameter point where the objective is
/// differentiable with margin: ReLU pre-activations away from zero and no
/// near-tie at any top-k pooling boundary.
fn well_conditioned_training_instance(
    rng: &mut ChaCha8Rng,
    epm_weight: f64,
) -> Result<(TrainContext, GcnParams, HeadParams)> {
    use crate::enhance::fuse_features;
    use crate::head::compute_cas;

    loop {
        let cfg = SynthConfig {
            num_videos: rng.gen_range(2..=3),
            segments: rng.gen_range(8..=10),
            feature_dim: rng.gen_range(3..=6),
            num_classes: 2,
            instances_per_video: (1, 2),
            instance_len: (2, 3),
            seed: rng.gen(),
            ..SynthConfig::default()
        };
        let corpus = match generate_corpus(&cfg) {
            Ok(c) => c,
            // Tight packings occasionally fail; redraw.
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        };
        // Loose graph settings so the sparse graphs carry edges at this
        // tiny scale.
        let hp = crate::graph::AcgHyperparams {
            z: 2,
            alpha: 1.0,
            lambda: 0.3,
            k: 3,
        };
        let mode = FusionMode::default();
        let ctx = TrainContext::prepare(
            &corpus.videos,
            &hp,
            &mode,
            GraphVariant::Combined,
            cfg.num_classes,
            epm_weight,
        )?;
        let gcn = GcnParams::init_seeded(cfg.feature_dim, 2, rng.gen())?;
        let head = HeadParams::init_seeded(
            ctx.head_input_dim(),
            cfg.num_classes,
            ctx.pool_k,
            rng.gen(),
        );

        let mut conditioned = true;
        'videos: for v in &ctx.videos {
            let (gcn_out, cache) = gcn_forward(&v.features, &v.norm_adj, &gcn)?;
            for pre in &cache.pre_activations {
                if pre.iter().any(|&u| u.abs() <= 1e-3) {
                    conditioned = false;
                    break 'videos;
                }
            }
            let fused = fuse_features(&v.features, &v.avg, &gcn_out, &mode)?;
            let cas = compute_cas(&fused, &head)?;
            let pool_k = ctx.pool_k.min(v.features.num_segments());
            for class in 0..cfg.num_classes {
                let mut col: Vec<f64> = cas.scores().column(class).to_vec();
                col.sort_by(|a, b| b.total_cmp(a));
                if pool_k < col.len() && col[pool_k - 1] - col[pool_k] <= 1e-3 {
                    conditioned = false;
                    break 'videos;
                }
            }
        }
        if conditioned {
            return Ok((ctx, gcn, head));
        }
    }
}

/// Checks the gradients of the full training objective (head MIL loss plus
/// weighted EPM loss) with respect to every GCN weight and every head
/// parameter. The activation weights of the EPM term are frozen at their
/// base-point values in the finite-difference evaluations, matching the
/// detached-activation semantics of the analytic gradient.
pub fn check_total_loss_gradient(seed: u64, instances: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut entries = 0usize;
    let train_cfg = TrainConfig {
        epm_weight: 0.5,
        ..TrainConfig::default()
    };
    for _ in 0..instances {
        let (ctx, gcn, head) = well_conditioned_training_instance(&mut rng, train_cfg.epm_weight)?;
        let frozen = ctx.current_activations(&gcn, &head)?;
        let total = |g: &GcnParams, h: &HeadParams| -> f64 {
            let (head_loss, epm) = ctx.objective(g, h, Some(&frozen)).unwrap();
            head_loss + train_cfg.epm_weight * epm
        };
        let grads = ctx.gradients(&gcn, &head)?;

        for layer in 0..gcn.num_layers() {
            for r in 0..gcn.dim() {
                for c in 0..gcn.dim() {
                    let mut g = gcn.clone();
                    g.layers_mut()[layer][[r, c]] += FD_STEP;
                    let up = total(&g, &head);
                    g.layers_mut()[layer][[r, c]] -= 2.0 * FD_STEP;
                    let down = total(&g, &head);
                    let fd = (up - down) / (2.0 * FD_STEP);
                    max_err = max_err.max(rel_err(grads.gcn_layers[layer][[r, c]], fd));
                    entries += 1;
                }
            }
        }
        for r in 0..head.input_dim() {
            for c in 0..head.num_classes() {
                let mut h = head.clone();
                h.classifier[[r, c]] += FD_STEP;
                let up = total(&gcn, &h);
                h.classifier[[r, c]] -= 2.0 * FD_STEP;
                let down = total(&gcn, &h);
                let fd = (up - down) / (2.0 * FD_STEP);
                max_err = max_err.max(rel_err(grads.classifier[[r, c]], fd));
                entries += 1;
            }
        }
        for c in 0..head.num_classes() {
            let mut h = head.clone();
            h.bias[c] += FD_STEP;
            let up = total(&gcn, &h);
            h.bias[c] -= 2.0 * FD_STEP;
            let down = total(&gcn, &h);
            let fd = (up - down) / (2.0 * FD_STEP);
            max_err = max_err.max(rel_err(grads.bias[c], fd));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: "training objective vs central differences".into(),
        max_rel_err: max_err,
        checked_entries: entries,
        tolerance: 1e-4,
    })
}

/// Runs all three suites with the given number of instances each.
pub fn run_all(seed: u64, instances: usize) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        checks: vec![
            check_epm_gradient(seed, instances)?,
            check_gcn_gradient(seed.wrapping_add(1), instances)?,
            check_total_loss_gradient(seed.wrapping_add(2), instances)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_gradient_suites_pass_at_reduced_size() {
        let report = run_all(7, 3).unwrap();
        for check in &report.checks {
            assert!(
                check.passed(),
                "{} failed: max rel err {}",
                check.name,
                check.max_rel_err
            );
            assert!(check.checked_entries > 0);
        }
    }
}
