//! The easy-positive-mining loss and its analytic gradients, plus the
//! backward pass of the graph convolution.
//!
//! The loss pulls each enhanced segment feature toward the *original*
//! features of its graph neighbors, weighted by the neighbor's maximum
//! class activation. Original features and activation weights are constants
//! under differentiation; only the enhanced features carry gradient.

use ndarray::Array2;

use crate::enhance::{GcnParams, LayerCache};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{Adjacency, RowNormalized, Sparse};

/// One video's contribution to an EPM batch.
#[derive(Debug, Clone)]
pub struct EpmVideo {
    /// Original segment features (constant).
    pub original: FeatureMatrix,
    /// Enhanced segment features (the differentiated variable).
    pub enhanced: FeatureMatrix,
    /// Sparse adjacency; a strictly positive entry (i, j) is an edge.
    pub sparse_adj: Adjacency<Sparse>,
    /// Per-segment maximum class activation in [0, 1] (constant).
    pub activations: Vec<f64>,
}

/// A batch of videos for the EPM loss.
#[derive(Debug, Clone)]
pub struct EpmBatch {
    pub videos: Vec<EpmVideo>,
}

impl EpmBatch {
    fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::invalid("EPM batch must contain at least one video"));
        }
        for (n, v) in self.videos.iter().enumerate() {
            let t = v.original.num_segments();
            if v.enhanced.num_segments() != t
                || v.sparse_adj.num_nodes() != t
                || v.activations.len() != t
            {
                return Err(Error::invalid(format!(
                    "video {n}: segment counts disagree (features {t}, enhanced {}, adjacency {}, activations {})",
                    v.enhanced.num_segments(),
                    v.sparse_adj.num_nodes(),
                    v.activations.len()
                )));
            }
            if v.enhanced.dim() != v.original.dim() {
                return Err(Error::invalid(format!(
                    "video {n}: enhanced dimension {} does not match original dimension {}",
                    v.enhanced.dim(),
                    v.original.dim()
                )));
            }
            if v.activations.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!(
                    "video {n}: activations must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Easy-positive-mining loss:
/// `(1/N) sum_n sum_{i,j : A'_{n,ij} > 0} p_{n,j} * ||f'_{n,i} - f_{n,j}||^2`.
pub fn epm_loss(batch: &EpmBatch) -> Result<f64> {
    batch.validate()?;
    let n = batch.videos.len() as f64;
    let mut total = 0.0;
    for v in &batch.videos {
        let t = v.original.num_segments();
        for i in 0..t {
            for (j, w) in v.sparse_adj.row_edges(i) {
                debug_assert!(w > 0.0);
                let diff = &v.enhanced.row(i) - &v.original.row(j);
                total += v.activations[j] * diff.dot(&diff);
            }
        }
    }
    Ok(total / n)
}

/// Gradient of [`epm_loss`] with respect to each video's enhanced features:
/// `(2/N) sum_{j : A'_{n,ij} > 0} p_{n,j} (f'_{n,i} - f_{n,j})` per row i.
pub fn epm_loss_grad(batch: &EpmBatch) -> Result<Vec<Array2<f64>>> {
    batch.validate()?;
    let n = batch.videos.len() as f64;
    let mut grads = Vec::with_capacity(batch.videos.len());
    for v in &batch.videos {
        let t = v.original.num_segments();
        let d = v.original.dim();
        let mut g = Array2::<f64>::zeros((t, d));
        for i in 0..t {
            for (j, _) in v.sparse_adj.row_edges(i) {
                let scale = 2.0 * v.activations[j] / n;
                let diff = &v.enhanced.row(i) - &v.original.row(j);
                g.row_mut(i).scaled_add(scale, &diff);
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Gradients of the graph convolution, chained from an upstream gradient on
/// the final layer's output down to the input features and every layer's
/// weights.
pub fn gcn_backward(
    upstream_grad: &Array2<f64>,
    cache: &LayerCache,
    norm_adj: &Adjacency<RowNormalized>,
    params: &GcnParams,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let m = params.num_layers();
    if cache.pre_activations.len() != m || cache.propagated.len() != m {
        return Err(Error::invalid(format!(
            "layer cache holds {} layers but params have {m}",
            cache.pre_activations.len()
        )));
    }
    let t = norm_adj.num_nodes();
    let d = params.dim();
    if upstream_grad.nrows() != t || upstream_grad.ncols() != d {
        return Err(Error::invalid(format!(
            "upstream gradient must be {t}x{d}, got {}x{}",
            upstream_grad.nrows(),
            upstream_grad.ncols()
        )));
    }
    for (layer, (pre, prop)) in cache
        .pre_activations
        .iter()
        .zip(cache.propagated.iter())
        .enumerate()
    {
        if pre.nrows() != t || pre.ncols() != d || prop.nrows() != t || prop.ncols() != d {
            return Err(Error::invalid(format!(
                "cache entry for layer {} has inconsistent shape",
                layer + 1
            )));
        }
    }

    let adj = norm_adj.values();
    let adj_t = adj.t();
    let mut grad = upstream_grad.clone();
    let mut grad_weights = vec![Array2::<f64>::zeros((d, d)); m];
    for layer in (0..m).rev() {
        // Through the ReLU: zero wherever the pre-activation was <= 0.
        let mut gu = grad;
        gu.zip_mut_with(&cache.pre_activations[layer], |g, &pre| {
            if pre <= 0.0 {
                *g = 0.0;
            }
        });
        grad_weights[layer] = cache.propagated[layer].t().dot(&gu);
        let grad_propagated = gu.dot(&params.layer(layer).t());
        grad = adj_t.dot(&grad_propagated);
    }
    Ok((grad, grad_weights))
}
