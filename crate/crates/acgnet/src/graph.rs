//! Construction of the sparse action complement graph.
//!
//! The adjacency goes through five stages: a cosine similarity graph over
//! segment features, a temporal diffusion graph that up-weights distant
//! segment pairs, their combination, a per-row top-K / threshold
//! sparsification, and a row-wise normalization used by graph inference.
//! Each stage is a distinct type so a later stage cannot be fed an earlier
//! matrix by accident.

use std::marker::PhantomData;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Graph-construction hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AcgHyperparams {
    /// Temporal diffusion window, in segments.
    pub z: usize,
    /// Trade-off between the similarity and temporal sub-graphs.
    pub alpha: f64,
    /// Sparsification threshold; an edge survives only if strictly above it.
    pub lambda: f64,
    /// Maximum retained neighbors per row.
    pub k: usize,
}

impl AcgHyperparams {
    /// Defaults for a video of `t` segments: Z=10, alpha=1, lambda=0.85,
    /// and K=50 at the canonical T=750, otherwise T/10 (at least 1).
    pub fn defaults_for(t: usize) -> Self {
        Self {
            z: 10,
            alpha: 1.0,
            lambda: 0.85,
            k: Self::default_k(t),
        }
    }

    pub fn default_k(t: usize) -> usize {
        if t == 750 {
            50
        } else {
            (t / 10).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z < 1 {
            return Err(Error::invalid("Z must be at least 1"));
        }
        if self.k < 1 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!(
                "lambda must lie in [0, 1), got {}",
                self.lambda
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be finite and non-negative"));
        }
        Ok(())
    }
}

/// How the similarity and temporal sub-graphs are merged before
/// sparsification. `Combined` is the standard form; the other two exist for
/// the graph-design ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GraphVariant {
    /// G1: the similarity graph alone.
    SimilarityOnly,
    /// G2: similarity minus the temporal graph, clamped at zero, halved.
    SimilarityMinusTemporal,
    /// G3: (similarity + alpha * temporal) / 2.
    Combined,
}

mod sealed {
    pub trait Sealed {}
}

/// Marker for the processing stage an adjacency matrix is in.
pub trait Stage: sealed::Sealed + std::fmt::Debug {}

macro_rules! stage {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, Copy)]
        pub enum $name {}
        impl sealed::Sealed for $name {}
        impl Stage for $name {}
    };
}

stage!(
    /// Cosine similarities; symmetric, entries in [-1, 1].
    Similarity
);
stage!(
    /// Temporal diffusion weights; symmetric, entries in [0, 1], zero diagonal.
    Temporal
);
stage!(
    /// Merged similarity/temporal weights, pre-sparsification.
    Combined
);
stage!(
    /// Per-row top-K, threshold-pruned weights; not necessarily symmetric.
    Sparse
);
stage!(
    /// Rows sum to one (degenerate rows fall back to a unit self-loop).
    RowNormalized
);

/// A `T x T` adjacency matrix tagged with its construction stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency<S: Stage> {
    values: Array2<f64>,
    _stage: PhantomData<S>,
}

impl<S: Stage> Adjacency<S> {
    fn wrap(values: Array2<f64>) -> Self {
        Self {
            values,
            _stage: PhantomData,
        }
    }

    /// Number of nodes (segments).
    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

fn require_square(values: &Array2<f64>) -> Result<()> {
    if values.nrows() != values.ncols() || values.nrows() == 0 {
        return Err(Error::invalid(format!(
            "adjacency must be square and non-empty, got {}x{}",
            values.nrows(),
            values.ncols()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("adjacency contains non-finite entries"));
    }
    Ok(())
}

impl Adjacency<Combined> {
    /// Wraps raw pre-sparsification weights. Used by tests and by callers
    /// that assemble ablation variants by hand.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        require_square(&values)?;
        Ok(Self::wrap(values))
    }
}

impl Adjacency<Sparse> {
    /// Wraps an externally built sparse adjacency; entries must be
    /// non-negative and finite.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        require_square(&values)?;
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("sparse adjacency entries must be non-negative"));
        }
        Ok(Self::wrap(values))
    }

    /// Nonzero entries of row `i` as `(column, weight)` pairs.
    pub fn row_edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .row(i)
            .to_vec()
            .into_iter()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
    }
}

impl Adjacency<RowNormalized> {
    /// Wraps an externally built row-stochastic adjacency; every row must
    /// sum to 1 within 1e-9.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        require_square(&values)?;
        for (i, row) in values.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "row {i} of a normalized adjacency sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Self::wrap(values))
    }
}

/// Builds the segment similarity graph: pairwise cosine of feature rows.
///
/// Rows with zero magnitude get zero similarity against everything
/// (including themselves). The result is symmetrized by averaging with its
/// transpose and clamped to [-1, 1].
pub fn build_similarity_graph(features: &FeatureMatrix) -> Adjacency<Similarity> {
    let t = features.num_segments();
    let norms: Vec<f64> = (0..t)
        .map(|i| features.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut values = Array2::<f64>::zeros((t, t));
    for i in 0..t {
        if norms[i] == 0.0 {
            continue;
        }
        for j in i..t {
            if norms[j] == 0.0 {
                continue;
            }
            let dot = features.row(i).dot(&features.row(j));
            let cos = dot / (norms[i] * norms[j]);
            values[[i, j]] = cos;
            values[[j, i]] = cos;
        }
    }
    // Symmetric by construction; the transpose average only irons out the
    // accumulation-order difference between (i,j) and (j,i) dot products,
    // which we already avoid by computing each pair once.
    let sym = (&values + &values.t()) * 0.5;
    Adjacency::wrap(sym.mapv(|v| v.clamp(-1.0, 1.0)))
}

/// Builds the temporal diffusion graph on `t` nodes:
/// weight 1 - max(Z - |i-j|, 0) / Z, so the diagonal is 0 and any pair at
/// least `z` apart gets weight exactly 1.
pub fn build_temporal_graph(t: usize, z: usize) -> Result<Adjacency<Temporal>> {
    if t == 0 {
        return Err(Error::invalid("temporal graph needs at least one segment"));
    }
    if z == 0 {
        return Err(Error::invalid("Z must be at least 1"));
    }
    let zf = z as f64;
    let values = Array2::from_shape_fn((t, t), |(i, j)| {
        let d = (i as f64 - j as f64).abs();
        1.0 - (zf - d).max(0.0) / zf
    });
    Ok(Adjacency::wrap(values))
}

/// Merges the two sub-graphs: (similarity + alpha * temporal) / 2.
pub fn combine_graphs(
    sim: &Adjacency<Similarity>,
    temp: &Adjacency<Temporal>,
    alpha: f64,
) -> Result<Adjacency<Combined>> {
    if sim.num_nodes() != temp.num_nodes() {
        return Err(Error::invalid(format!(
            "similarity graph has {} nodes but temporal graph has {}",
            sim.num_nodes(),
            temp.num_nodes()
        )));
    }
    let values = (&sim.values + alpha * &temp.values) * 0.5;
    Ok(Adjacency::wrap(values))
}

/// Merges the sub-graphs according to an ablation variant.
///
/// `SimilarityOnly` passes the similarity weights through unchanged, and
/// `SimilarityMinusTemporal` is max(similarity - alpha * temporal, 0) / 2:
/// negative weights are meaningless to the downstream normalization, so the
/// subtraction is clamped at zero.
pub fn combine_graphs_variant(
    sim: &Adjacency<Similarity>,
    temp: &Adjacency<Temporal>,
    alpha: f64,
    variant: GraphVariant,
) -> Result<Adjacency<Combined>> {
    if sim.num_nodes() != temp.num_nodes() {
        return Err(Error::invalid(format!(
            "similarity graph has {} nodes but temporal graph has {}",
            sim.num_nodes(),
            temp.num_nodes()
        )));
    }
    let values = match variant {
        GraphVariant::SimilarityOnly => sim.values.clone(),
        GraphVariant::SimilarityMinusTemporal => {
            ((&sim.values - &(alpha * &temp.values)) * 0.5).mapv(|v| v.max(0.0))
        }
        GraphVariant::Combined => return combine_graphs(sim, temp, alpha),
    };
    Ok(Adjacency::wrap(values))
}

/// Per-row sparsification: rank each row's weights in descending order
/// (ties broken by ascending column index), keep an entry only if its rank
/// is within the top `k` AND its weight is strictly above `lambda`.
pub fn sparsify(combined: &Adjacency<Combined>, lambda: f64, k: usize) -> Adjacency<Sparse> {
    let t = combined.num_nodes();
    let mut values = Array2::<f64>::zeros((t, t));
    let mut order: Vec<usize> = Vec::with_capacity(t);
    for i in 0..t {
        let row = combined.values.row(i);
        order.clear();
        order.extend(0..t);
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            if row[j] > lambda {
                values[[i, j]] = row[j];
            }
        }
    }
    Adjacency::wrap(values)
}

/// Divides every row by its sum. A row with no surviving edges becomes a
/// unit self-loop so that graph averaging returns the node's own feature.
pub fn row_normalize(sparse: &Adjacency<Sparse>) -> Adjacency<RowNormalized> {
    let t = sparse.num_nodes();
    let mut values = sparse.values.clone();
    for i in 0..t {
        let sum: f64 = values.row(i).sum();
        if sum > 0.0 {
            values.row_mut(i).mapv_inplace(|v| v / sum);
        } else {
            values[[i, i]] = 1.0;
        }
    }
    Adjacency::wrap(values)
}

/// Runs the full construction chain for one video: similarity, temporal,
/// merge (per `variant`), sparsify. Returns the sparse adjacency.
pub fn build_sparse_graph(
    features: &FeatureMatrix,
    hp: &AcgHyperparams,
    variant: GraphVariant,
) -> Result<Adjacency<Sparse>> {
    hp.validate()?;
    let sim = build_similarity_graph(features);
    let temp = build_temporal_graph(features.num_segments(), hp.z)?;
    let combined = combine_graphs_variant(&sim, &temp, hp.alpha, variant)?;
    Ok(sparsify(&combined, hp.lambda, hp.k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn feat(values: Array2<f64>) -> FeatureMatrix {
        FeatureMatrix::new(values).unwrap()
    }

    fn random_features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> FeatureMatrix {
        feat(Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0)))
    }

    // Naive per-pair cosine, kept independent of the implementation above.
    fn cosine_oracle(features: &FeatureMatrix) -> Array2<f64> {
        let t = features.num_segments();
        let d = features.dim();
        let mut out = Array2::zeros((t, t));
        for i in 0..t {
            for j in 0..t {
                let mut dot = 0.0;
                let mut ni = 0.0;
                let mut nj = 0.0;
                for c in 0..d {
                    dot += features.row(i)[c] * features.row(j)[c];
                    ni += features.row(i)[c] * features.row(i)[c];
                    nj += features.row(j)[c] * features.row(j)[c];
                }
                out[[i, j]] = if ni == 0.0 || nj == 0.0 {
                    0.0
                } else {
                    dot / (ni.sqrt() * nj.sqrt())
                };
            }
        }
        out
    }

    // Sort-then-filter reimplementation of the sparsification rule.
    fn sparsify_oracle(combined: &Array2<f64>, lambda: f64, k: usize) -> Array2<f64> {
        let t = combined.nrows();
        let mut out = Array2::zeros((t, t));
        for i in 0..t {
            let mut idx: Vec<usize> = (0..t).collect();
            idx.sort_by(|&a, &b| {
                combined[[i, b]]
                    .partial_cmp(&combined[[i, a]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            for (rank0, &j) in idx.iter().enumerate() {
                if rank0 < k && combined[[i, j]] > lambda {
                    out[[i, j]] = combined[[i, j]];
                }
            }
        }
        out
    }

    #[test]
    fn identical_vectors_have_cosine_one() {
        let f = feat(array![[1.0, 2.0, 2.0], [1.0, 2.0, 2.0]]);
        let sim = build_similarity_graph(&f);
        assert_eq!(sim.values()[[0, 1]], 1.0);
        assert_eq!(sim.values()[[0, 0]], 1.0);
    }

    #[test]
    fn orthogonal_vectors_have_cosine_zero() {
        let f = feat(array![[1.0, 0.0], [0.0, 1.0]]);
        let sim = build_similarity_graph(&f);
        assert_eq!(sim.values()[[0, 1]], 0.0);
    }

    #[test]
    fn zero_vector_rows_are_zeroed_without_error() {
        let f = feat(array![[0.0, 0.0], [3.0, 4.0]]);
        let sim = build_similarity_graph(&f);
        assert_eq!(sim.values()[[0, 0]], 0.0);
        assert_eq!(sim.values()[[0, 1]], 0.0);
        assert_eq!(sim.values()[[1, 0]], 0.0);
        assert_eq!(sim.values()[[1, 1]], 1.0);
    }

    #[test]
    fn similarity_matches_loop_oracle_on_random_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let f = random_features(&mut rng, 5, 8);
        let sim = build_similarity_graph(&f);
        let oracle = cosine_oracle(&f);
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(sim.values()[[i, j]], oracle[[i, j]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn temporal_weights_follow_the_window_formula() {
        let g = build_temporal_graph(30, 10).unwrap();
        assert_eq!(g.values()[[5, 5]], 0.0);
        assert_abs_diff_eq!(g.values()[[5, 8]], 0.3, epsilon = 1e-15);
        assert_eq!(g.values()[[0, 25]], 1.0);
    }

    #[test]
    fn temporal_saturates_exactly_at_and_beyond_z() {
        let z = 7;
        let g = build_temporal_graph(40, z).unwrap();
        for i in 0..40 {
            assert_eq!(g.values()[[i, i]], 0.0);
            for j in 0..40 {
                if i.abs_diff(j) >= z {
                    assert_eq!(g.values()[[i, j]], 1.0);
                }
                assert_eq!(g.values()[[i, j]], g.values()[[j, i]]);
            }
        }
    }

    #[test]
    fn combine_is_elementwise_average() {
        let f = feat(array![[1.0, 2.0, 2.0], [1.0, 2.0, 2.0]]);
        let sim = build_similarity_graph(&f);
        let temp = build_temporal_graph(2, 1).unwrap();
        // |i-j|=1 >= Z=1 so the off-diagonal temporal weight is 1.
        let combined = combine_graphs(&sim, &temp, 1.0).unwrap();
        assert_eq!(combined.values()[[0, 1]], 1.0);
        // Diagonal: similarity 1, temporal 0.
        assert_eq!(combined.values()[[0, 0]], 0.5);
    }

    #[test]
    fn combine_applies_alpha_before_halving() {
        let sim = Adjacency::<Similarity>::wrap(array![[0.6]]);
        let temp = Adjacency::<Temporal>::wrap(array![[0.4]]);
        let combined = combine_graphs(&sim, &temp, 0.5).unwrap();
        assert_abs_diff_eq!(combined.values()[[0, 0]], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn combine_rejects_shape_mismatch() {
        let sim = Adjacency::<Similarity>::wrap(Array2::zeros((3, 3)));
        let temp = Adjacency::<Temporal>::wrap(Array2::zeros((4, 4)));
        assert!(combine_graphs(&sim, &temp, 1.0).is_err());
    }

    #[test]
    fn sparsify_keeps_top_k_above_threshold() {
        let combined = Adjacency::<Combined>::from_values(array![
            [0.90, 0.87, 0.30, 0.86],
            [0.90, 0.87, 0.30, 0.86],
            [0.90, 0.87, 0.30, 0.86],
            [0.90, 0.87, 0.30, 0.86],
        ])
        .unwrap();
        let sparse = sparsify(&combined, 0.85, 2);
        assert_eq!(
            sparse.values().row(0).to_vec(),
            vec![0.90, 0.87, 0.0, 0.0]
        );
    }

    #[test]
    fn sparsify_drops_everything_below_threshold() {
        let combined =
            Adjacency::<Combined>::from_values(array![[0.5, 0.4, 0.3], [0.5, 0.4, 0.3], [0.5, 0.4, 0.3]])
                .unwrap();
        for k in 1..=3 {
            let sparse = sparsify(&combined, 0.85, k);
            assert!(sparse.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn sparsify_breaks_ties_by_ascending_index() {
        let combined = Adjacency::<Combined>::from_values(Array2::from_elem((4, 4), 0.9)).unwrap();
        let sparse = sparsify(&combined, 0.85, 2);
        for i in 0..4 {
            let row = sparse.values().row(i).to_vec();
            assert_eq!(row, vec![0.9, 0.9, 0.0, 0.0]);
        }
        let oracle = sparsify_oracle(&Array2::from_elem((4, 4), 0.9), 0.85, 2);
        assert_eq!(sparse.values().to_owned(), oracle);
    }

    #[test]
    fn row_normalize_divides_by_row_sum() {
        let sparse =
            Adjacency::<Sparse>::from_values(array![[0.90, 0.87], [2.0, 2.0]]).unwrap();
        let norm = row_normalize(&sparse);
        assert_abs_diff_eq!(norm.values()[[0, 0]], 0.90 / 1.77, epsilon = 1e-12);
        assert_abs_diff_eq!(norm.values()[[0, 1]], 0.87 / 1.77, epsilon = 1e-12);
        assert_eq!(norm.values()[[1, 0]], 0.5);
        assert_eq!(norm.values()[[1, 1]], 0.5);
    }

    #[test]
    fn row_normalize_falls_back_to_self_loop_on_empty_rows() {
        let sparse =
            Adjacency::<Sparse>::from_values(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let norm = row_normalize(&sparse);
        assert_eq!(norm.values()[[0, 0]], 1.0);
        assert_eq!(norm.values()[[0, 1]], 0.0);
        assert_eq!(norm.values()[[1, 0]], 0.5);
    }

    #[test]
    fn full_chain_matches_naive_reimplementation_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let t = rng.gen_range(1..=12);
            let d = rng.gen_range(1..=6);
            let f = random_features(&mut rng, t, d);
            let hp = AcgHyperparams {
                z: rng.gen_range(1..=4),
                alpha: rng.gen_range(0.0..2.0),
                lambda: rng.gen_range(0.0..0.9),
                k: rng.gen_range(1..=t),
            };

            let sparse = build_sparse_graph(&f, &hp, GraphVariant::Combined).unwrap();

            let sim = cosine_oracle(&f);
            let mut combined = Array2::zeros((t, t));
            for i in 0..t {
                for j in 0..t {
                    let d_ij = (i as f64 - j as f64).abs();
                    let temp = 1.0 - (hp.z as f64 - d_ij).max(0.0) / hp.z as f64;
                    combined[[i, j]] = (sim[[i, j]] + hp.alpha * temp) / 2.0;
                }
            }
            let expected = sparsify_oracle(&combined, hp.lambda, hp.k);
            for i in 0..t {
                for j in 0..t {
                    assert_abs_diff_eq!(
                        sparse.values()[[i, j]],
                        expected[[i, j]],
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn time_reversal_equivariance_with_distinct_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let t = 9;
        let f = random_features(&mut rng, t, 5);
        let hp = AcgHyperparams {
            z: 3,
            alpha: 1.0,
            lambda: 0.1,
            k: 3,
        };

        let sim = build_similarity_graph(&f);
        let temp = build_temporal_graph(t, hp.z).unwrap();
        let combined = combine_graphs(&sim, &temp, hp.alpha).unwrap();
        // The equivariance claim only holds when no row has ties.
        for i in 0..t {
            let mut row = combined.values().row(i).to_vec();
            row.sort_by(|a, b| a.total_cmp(b));
            assert!(row.windows(2).all(|w| w[0] != w[1]));
        }

        let forward = build_sparse_graph(&f, &hp, GraphVariant::Combined).unwrap();

        let mut rev = f.values().to_owned();
        rev.invert_axis(ndarray::Axis(0));
        let reversed =
            build_sparse_graph(&FeatureMatrix::new(rev).unwrap(), &hp, GraphVariant::Combined)
                .unwrap();

        for i in 0..t {
            for j in 0..t {
                assert_abs_diff_eq!(
                    reversed.values()[[i, j]],
                    forward.values()[[t - 1 - i, t - 1 - j]],
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn g2_variant_clamps_at_zero() {
        let f = feat(array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let sim = build_similarity_graph(&f);
        let temp = build_temporal_graph(3, 1).unwrap();
        let g2 =
            combine_graphs_variant(&sim, &temp, 2.0, GraphVariant::SimilarityMinusTemporal)
                .unwrap();
        // Off-diagonal: (1 - 2*1)/2 = -0.5, clamped to 0. Diagonal: (1-0)/2.
        assert_eq!(g2.values()[[0, 1]], 0.0);
        assert_eq!(g2.values()[[0, 0]], 0.5);
    }

    #[test]
    fn g1_variant_is_the_similarity_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_features(&mut rng, 6, 4);
        let sim = build_similarity_graph(&f);
        let temp = build_temporal_graph(6, 10).unwrap();
        let g1 = combine_graphs_variant(&sim, &temp, 1.0, GraphVariant::SimilarityOnly).unwrap();
        assert_eq!(g1.values().to_owned(), sim.values().to_owned());
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            seed in 0u64..1000,
            scale in 1e-3f64..1e3,
            row in 0usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_features(&mut rng, 5, 4);
            let base = build_similarity_graph(&f);

            let mut scaled = f.values().to_owned();
            scaled.row_mut(row).mapv_inplace(|v| v * scale);
            let rescaled = build_similarity_graph(&FeatureMatrix::new(scaled).unwrap());

            for i in 0..5 {
                for j in 0..5 {
                    prop_assert!((base.values()[[i, j]] - rescaled.values()[[i, j]]).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn sparsity_bound_and_monotonicity(
            seed in 0u64..1000,
            lambda in 0.0f64..0.95,
            k in 1usize..10,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(1..=10);
            let raw = Array2::from_shape_fn((t, t), |_| rng.gen_range(-0.2..1.2));
            let combined = Adjacency::<Combined>::from_values(raw).unwrap();

            let sparse = sparsify(&combined, lambda, k);
            for i in 0..t {
                let nnz = sparse.values().row(i).iter().filter(|&&v| v != 0.0).count();
                prop_assert!(nnz <= k);
                for &v in sparse.values().row(i).iter() {
                    prop_assert!(v == 0.0 || v > lambda);
                }
            }

            // Raising lambda or lowering K never increases any row's support.
            let tighter = sparsify(&combined, (lambda + 0.1).min(0.99), k);
            let smaller = sparsify(&combined, lambda, (k - 1).max(1));
            for i in 0..t {
                let count = |adj: &Adjacency<Sparse>| {
                    adj.values().row(i).iter().filter(|&&v| v != 0.0).count()
                };
                prop_assert!(count(&tighter) <= count(&sparse));
                if k > 1 {
                    prop_assert!(count(&smaller) <= count(&sparse));
                }
            }
        }

        #[test]
        fn normalized_rows_sum_to_one(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.gen_range(1..=10);
            let f = random_features(&mut rng, t, 4);
            let hp = AcgHyperparams { z: 3, alpha: 1.0, lambda: 0.5, k: 3 };
            let sparse = build_sparse_graph(&f, &hp, GraphVariant::Combined).unwrap();
            let norm = row_normalize(&sparse);
            for i in 0..t {
                let sum: f64 = norm.values().row(i).sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
    }
}
