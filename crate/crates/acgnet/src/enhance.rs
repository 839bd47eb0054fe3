//! Feature enhancement on top of the sparse graph: weighted neighbor
//! averaging, a multi-layer graph convolution, and residual fusion of the
//! original, averaged, and convolved features.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::{
    build_sparse_graph, row_normalize, AcgHyperparams, Adjacency, GraphVariant, RowNormalized,
    Sparse,
};

/// Trainable weights of the graph convolutional layers, one `D x D` matrix
/// per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    weights: Vec<Array2<f64>>,
}

impl GcnParams {
    pub const DEFAULT_LAYERS: usize = 2;

    pub fn new(weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("at least one graph convolution layer required"));
        }
        let d = weights[0].nrows();
        for (m, w) in weights.iter().enumerate() {
            if w.nrows() != d || w.ncols() != d {
                return Err(Error::invalid(format!(
                    "layer {m} weight must be {d}x{d}, got {}x{}",
                    w.nrows(),
                    w.ncols()
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {m} weight has non-finite entries")));
            }
        }
        Ok(Self { weights })
    }

    /// Seeded uniform initialization in [-s, s] with s = sqrt(6 / (D + D)).
    pub fn init_seeded(dim: usize, layers: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let s = (6.0 / (dim as f64 + dim as f64)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..layers)
            .map(|_| Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-s..s)))
            .collect();
        Self::new(weights)
    }

    pub fn zeros(dim: usize, layers: usize) -> Result<Self> {
        Self::new(vec![Array2::zeros((dim, dim)); layers.max(1)])
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn layer(&self, m: usize) -> &Array2<f64> {
        &self.weights[m]
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }
}

/// How enhanced features are assembled from the original, averaged, and
/// convolved matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FusionMode {
    pub include_original: bool,
    pub include_avg: bool,
    pub include_gcn: bool,
    pub combine: Combine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Sum,
    Concat,
}

impl Default for FusionMode {
    fn default() -> Self {
        Self {
            include_original: true,
            include_avg: true,
            include_gcn: true,
            combine: Combine::Sum,
        }
    }
}

impl FusionMode {
    /// Original features only: the untouched-baseline configuration.
    pub fn original_only() -> Self {
        Self {
            include_original: true,
            include_avg: false,
            include_gcn: false,
            combine: Combine::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.include_original && !self.include_avg && !self.include_gcn {
            return Err(Error::invalid("fusion mode must include at least one feature set"));
        }
        Ok(())
    }

    /// Width of the fused matrix for input dimension `d`.
    pub fn fused_dim(&self, d: usize) -> usize {
        match self.combine {
            Combine::Sum => d,
            Combine::Concat => {
                let blocks = [self.include_original, self.include_avg, self.include_gcn]
                    .iter()
                    .filter(|&&b| b)
                    .count();
                blocks * d
            }
        }
    }
}

/// Pre-activation and propagated inputs cached by the forward pass, consumed
/// by the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// `A_hat * F^(m-1)` for each layer m.
    pub propagated: Vec<Array2<f64>>,
    /// `A_hat * F^(m-1) * W^(m)` for each layer m, before the ReLU.
    pub pre_activations: Vec<Array2<f64>>,
}

/// Weighted neighbor average: each output row is the row-normalized-weight
/// mean of its neighbors' features.
pub fn graph_average(
    features: &FeatureMatrix,
    norm_adj: &Adjacency<RowNormalized>,
) -> Result<FeatureMatrix> {
    if norm_adj.num_nodes() != features.num_segments() {
        return Err(Error::invalid(format!(
            "adjacency is over {} nodes but features have {} segments",
            norm_adj.num_nodes(),
            features.num_segments()
        )));
    }
    FeatureMatrix::new(norm_adj.values().dot(&features.values()))
}

/// Multi-layer graph convolution: `F^(m) = ReLU(A_hat F^(m-1) W^(m))` with
/// `F^(0)` the input features. Returns the final layer's output along with
/// the cached intermediates needed for backpropagation.
pub fn gcn_forward(
    features: &FeatureMatrix,
    norm_adj: &Adjacency<RowNormalized>,
    params: &GcnParams,
) -> Result<(FeatureMatrix, LayerCache)> {
    if norm_adj.num_nodes() != features.num_segments() {
        return Err(Error::invalid(format!(
            "adjacency is over {} nodes but features have {} segments",
            norm_adj.num_nodes(),
            features.num_segments()
        )));
    }
    if params.dim() != features.dim() {
        return Err(Error::invalid(format!(
            "GCN weights are {0}x{0} but features have dimension {1}",
            params.dim(),
            features.dim()
        )));
    }

    let mut cache = LayerCache {
        propagated: Vec::with_capacity(params.num_layers()),
        pre_activations: Vec::with_capacity(params.num_layers()),
    };
    let mut current = features.values().to_owned();
    for (m, w) in params.layers().iter().enumerate() {
        let propagated = norm_adj.values().dot(&current);
        let pre = propagated.dot(w);
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: m + 1 });
        }
        current = pre.mapv(|v| v.max(0.0));
        cache.propagated.push(propagated);
        cache.pre_activations.push(pre);
    }
    Ok((FeatureMatrix::new(current)?, cache))
}

/// Combines the original, averaged, and convolved features according to the
/// fusion mode: elementwise sum, or column-wise concatenation in the fixed
/// block order original | avg | gcn.
pub fn fuse_features(
    original: &FeatureMatrix,
    avg: &FeatureMatrix,
    gcn: &FeatureMatrix,
    mode: &FusionMode,
) -> Result<FeatureMatrix> {
    mode.validate()?;
    let mut included: Vec<&FeatureMatrix> = Vec::with_capacity(3);
    if mode.include_original {
        included.push(original);
    }
    if mode.include_avg {
        included.push(avg);
    }
    if mode.include_gcn {
        included.push(gcn);
    }
    let (t, d) = (included[0].num_segments(), included[0].dim());
    for m in &included {
        if m.num_segments() != t || m.dim() != d {
            return Err(Error::invalid(format!(
                "fusion inputs must share shape {t}x{d}, got {}x{}",
                m.num_segments(),
                m.dim()
            )));
        }
    }

    let values = match mode.combine {
        Combine::Sum => {
            let mut acc = included[0].values().to_owned();
            for m in &included[1..] {
                acc += &m.values();
            }
            acc
        }
        Combine::Concat => {
            let views: Vec<_> = included.iter().map(|m| m.values()).collect();
            ndarray::concatenate(ndarray::Axis(1), &views)
                .map_err(|e| Error::invalid(format!("concat failed: {e}")))?
        }
    };
    FeatureMatrix::new(values)
}

/// Output of the full enhancement pipeline for one video.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub features: FeatureMatrix,
    pub sparse_adj: Adjacency<Sparse>,
    pub norm_adj: Adjacency<RowNormalized>,
    pub avg: FeatureMatrix,
    pub gcn: FeatureMatrix,
    pub cache: LayerCache,
}

/// Runs the whole pipeline for one video: graph construction, neighbor
/// averaging, graph convolution, fusion. Returns the enhanced features and
/// the sparse adjacency (which the training loss also needs).
pub fn enhance_features(
    features: &FeatureMatrix,
    hp: &AcgHyperparams,
    params: &GcnParams,
    mode: &FusionMode,
) -> Result<Enhanced> {
    enhance_features_variant(features, hp, params, mode, GraphVariant::Combined)
}

/// Same as [`enhance_features`] but with an explicit graph variant, used by
/// the graph-design ablation.
pub fn enhance_features_variant(
    features: &FeatureMatrix,
    hp: &AcgHyperparams,
    params: &GcnParams,
    mode: &FusionMode,
    variant: GraphVariant,
) -> Result<Enhanced> {
    mode.validate()?;
    let sparse_adj = build_sparse_graph(features, hp, variant)?;
    let norm_adj = row_normalize(&sparse_adj);
    let avg = graph_average(features, &norm_adj)?;
    let (gcn, cache) = gcn_forward(features, &norm_adj, params)?;
    let fused = fuse_features(features, &avg, &gcn, mode)?;
    Ok(Enhanced {
        features: fused,
        sparse_adj,
        norm_adj,
        avg,
        gcn,
        cache,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn feat(values: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(values).unwrap()
    }

    fn norm_adj(values: Array2<f64>) -> Adjacency<RowNormalized> {
        Adjacency::<RowNormalized>::from_values(values).unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
        feat(Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn permutation_adjacency_swaps_rows() {
        let f = feat(array![[1.0, 2.0], [3.0, 4.0]]);
        let adj = norm_adj(array![[0.0, 1.0], [1.0, 0.0]]);
        let avg = graph_average(&f, &adj).unwrap();
        assert_eq!(avg.row(0).to_vec(), vec![3.0, 4.0]);
        assert_eq!(avg.row(1).to_vec(), vec![1.0, 2.0]);
    }

    #[test]
    fn identity_adjacency_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_features(&mut rng, 4, 3);
        let adj = norm_adj(Array2::eye(4));
        let avg = graph_average(&f, &adj).unwrap();
        assert_eq!(avg, f);
    }

    #[test]
    fn graph_average_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = 6;
        let d = 4;
        let f = random_features(&mut rng, t, d);
        let mut raw = Array2::from_shape_fn((t, t), |_| rng.gen_range(0.0..1.0));
        for i in 0..t {
            let s: f64 = raw.row(i).sum();
            raw.row_mut(i).mapv_inplace(|v| v / s);
        }
        let adj = norm_adj(raw.clone());
        let avg = graph_average(&f, &adj).unwrap();

        for i in 0..t {
            for c in 0..d {
                let mut expect = 0.0;
                for j in 0..t {
                    expect += raw[[i, j]] * f.values()[[j, c]];
                }
                assert_abs_diff_eq!(avg.values()[[i, c]], expect, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn graph_average_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 5;
        let f1 = random_features(&mut rng, t, 3);
        let f2 = random_features(&mut rng, t, 3);
        let mut raw = Array2::from_shape_fn((t, t), |_| rng.gen_range(0.0..1.0));
        for i in 0..t {
            let s: f64 = raw.row(i).sum();
            raw.row_mut(i).mapv_inplace(|v| v / s);
        }
        let adj = norm_adj(raw);

        let (a, b) = (1.7, -0.4);
        let mixed = feat(a * &f1.values().to_owned() + b * &f2.values().to_owned());
        let lhs = graph_average(&mixed, &adj).unwrap();
        let rhs = a * &graph_average(&f1, &adj).unwrap().values().to_owned()
            + b * &graph_average(&f2, &adj).unwrap().values().to_owned();
        for (x, y) in lhs.values().iter().zip(rhs.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_weights_give_zero_gcn_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_features(&mut rng, 4, 3);
        let adj = norm_adj(Array2::eye(4));
        let params = GcnParams::zeros(3, 2).unwrap();
        let (out, _) = gcn_forward(&f, &adj, &params).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_composition_preserves_non_negative_features() {
        let f = feat(array![[1.0, 0.5], [0.0, 2.0]]);
        let adj = norm_adj(Array2::eye(2));
        let params = GcnParams::new(vec![Array2::eye(2)]).unwrap();
        let (out, _) = gcn_forward(&f, &adj, &params).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn gcn_forward_matches_step_by_step_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (t, d) = (5, 3);
        let f = random_features(&mut rng, t, d);
        let mut raw = Array2::from_shape_fn((t, t), |_| rng.gen_range(0.0..1.0));
        for i in 0..t {
            let s: f64 = raw.row(i).sum();
            raw.row_mut(i).mapv_inplace(|v| v / s);
        }
        let adj = norm_adj(raw.clone());
        let params = GcnParams::init_seeded(d, 2, 11).unwrap();

        let (out, cache) = gcn_forward(&f, &adj, &params).unwrap();

        // Element-by-element forward pass.
        let mut fm = f.values().to_owned();
        for w in params.layers() {
            let mut prop = Array2::<f64>::zeros((t, d));
            for i in 0..t {
                for c in 0..d {
                    for j in 0..t {
                        prop[[i, c]] += raw[[i, j]] * fm[[j, c]];
                    }
                }
            }
            let mut pre = Array2::<f64>::zeros((t, d));
            for i in 0..t {
                for c in 0..d {
                    for e in 0..d {
                        pre[[i, c]] += prop[[i, e]] * w[[e, c]];
                    }
                }
            }
            fm = pre.mapv(|v: f64| v.max(0.0));
        }
        for (x, y) in out.values().iter().zip(fm.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
        assert_eq!(cache.pre_activations.len(), 2);
        assert_eq!(cache.propagated.len(), 2);
    }

    #[test]
    fn gcn_output_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for seed in 0..20 {
            let t = rng.gen_range(1..=8);
            let d = rng.gen_range(1..=5);
            let f = random_features(&mut rng, t, d);
            let hp = AcgHyperparams {
                z: 2,
                alpha: 1.0,
                lambda: 0.3,
                k: 2,
            };
            let sparse = build_sparse_graph(&f, &hp, GraphVariant::Combined).unwrap();
            let adj = row_normalize(&sparse);
            let params = GcnParams::init_seeded(d, 2, seed).unwrap();
            let (out, _) = gcn_forward(&f, &adj, &params).unwrap();
            assert!(out.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn gcn_rejects_non_finite_intermediates_naming_the_layer() {
        let f = feat(array![[1e200, 1e200], [1e200, 1e200]]);
        let adj = norm_adj(Array2::eye(2));
        let params =
            GcnParams::new(vec![Array2::from_elem((2, 2), 1e200), Array2::eye(2)]).unwrap();
        match gcn_forward(&f, &adj, &params) {
            Err(Error::NonFinite { layer }) => assert_eq!(layer, 1),
            other => panic!("expected NonFinite error, got {other:?}"),
        }
    }

    #[test]
    fn sum_fusion_with_zero_extras_returns_original() {
        let f = feat(array![[1.0, 2.0], [3.0, 4.0]]);
        let zero = feat(Array2::zeros((2, 2)));
        let fused = fuse_features(&f, &zero, &zero, &FusionMode::default()).unwrap();
        assert_eq!(fused, f);
    }

    #[test]
    fn sum_fusion_of_all_ones_triples() {
        let ones = feat(Array2::ones((3, 2)));
        let fused = fuse_features(&ones, &ones, &ones, &FusionMode::default()).unwrap();
        assert!(fused.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn concat_fusion_stacks_blocks_in_order() {
        let a = feat(Array2::from_elem((2, 2), 1.0));
        let b = feat(Array2::from_elem((2, 2), 2.0));
        let c = feat(Array2::from_elem((2, 2), 3.0));
        let mode = FusionMode {
            combine: Combine::Concat,
            ..FusionMode::default()
        };
        let fused = fuse_features(&a, &b, &c, &mode).unwrap();
        assert_eq!(fused.dim(), 6);
        assert_eq!(fused.row(0).to_vec(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn fusion_rejects_shape_mismatch() {
        let a = feat(Array2::ones((2, 2)));
        let b = feat(Array2::ones((2, 3)));
        assert!(fuse_features(&a, &b, &a, &FusionMode::default()).is_err());
    }

    #[test]
    fn fusion_requires_at_least_one_block() {
        let mode = FusionMode {
            include_original: false,
            include_avg: false,
            include_gcn: false,
            combine: Combine::Sum,
        };
        assert!(mode.validate().is_err());
    }

    #[test]
    fn single_segment_video_goes_through_self_loop_fallback() {
        let f = feat(array![[1.0, 2.0]]);
        let hp = AcgHyperparams::defaults_for(1);
        let params = GcnParams::init_seeded(2, 2, 0).unwrap();
        let out = enhance_features(&f, &hp, &params, &FusionMode::default()).unwrap();

        // Self-edge weight (1 + 0)/2 = 0.5 < lambda, so the sparse graph is
        // empty and normalization falls back to a self-loop.
        assert_eq!(out.sparse_adj.values()[[0, 0]], 0.0);
        assert_eq!(out.norm_adj.values()[[0, 0]], 1.0);
        assert_eq!(out.avg, f);

        // F' = F + F + relu-chain of F through the weights.
        let (gcn, _) = gcn_forward(&f, &out.norm_adj, &params).unwrap();
        let expect = f.values().to_owned() + f.values().to_owned() + gcn.values().to_owned();
        for (x, y) in out.features.values().iter().zip(expect.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_gcn_params_reduce_enhancement_to_original_plus_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_features(&mut rng, 7, 4);
        let hp = AcgHyperparams {
            z: 2,
            alpha: 1.0,
            lambda: 0.4,
            k: 3,
        };
        let params = GcnParams::zeros(4, 2).unwrap();
        let out = enhance_features(&f, &hp, &params, &FusionMode::default()).unwrap();
        let expect = f.values().to_owned() + out.avg.values().to_owned();
        assert_eq!(out.features.values().to_owned(), expect);
    }

    #[test]
    fn enhancement_composes_the_verified_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_features(&mut rng, 8, 4);
        let hp = AcgHyperparams {
            z: 3,
            alpha: 0.8,
            lambda: 0.5,
            k: 4,
        };
        let params = GcnParams::init_seeded(4, 2, 21).unwrap();
        let mode = FusionMode::default();

        let out = enhance_features(&f, &hp, &params, &mode).unwrap();

        let sparse = build_sparse_graph(&f, &hp, GraphVariant::Combined).unwrap();
        let norm = row_normalize(&sparse);
        let avg = graph_average(&f, &norm).unwrap();
        let (gcn, _) = gcn_forward(&f, &norm, &params).unwrap();
        let fused = fuse_features(&f, &avg, &gcn, &mode).unwrap();

        assert_eq!(out.sparse_adj.values().to_owned(), sparse.values().to_owned());
        assert_eq!(out.features, fused);
    }

    #[test]
    fn enhancement_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let f = random_features(&mut rng, 6, 3);
        let hp = AcgHyperparams::defaults_for(6);
        let params = GcnParams::init_seeded(3, 2, 5).unwrap();
        let a = enhance_features(&f, &hp, &params, &FusionMode::default()).unwrap();
        let b = enhance_features(&f, &hp, &params, &FusionMode::default()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.sparse_adj.values().to_owned(), b.sparse_adj.values().to_owned());
    }

    #[test]
    fn sum_fusion_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = random_features(&mut rng, 9, 5);
        let hp = AcgHyperparams::defaults_for(9);
        let params = GcnParams::init_seeded(5, 2, 1).unwrap();
        let out = enhance_features(&f, &hp, &params, &FusionMode::default()).unwrap();
        assert_eq!(out.features.num_segments(), f.num_segments());
        assert_eq!(out.features.dim(), f.dim());
    }
}
