//! The meta-model that turns node attributes and pair features into
//! strictly positive pair weights:
//! `V = sum_r alpha_r * sigmoid((Z_r Z_r^T) ⊙ Y_r)` with `Z_r = MLP_r(X)`
//! and `alpha = softmax(logits)`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{row_softmax, sigmoid, ParamSet, Tape, Var};
use crate::cluster::{init_uniform, PairLossTerms};
use crate::error::ModelError;
use crate::graph::Graph;
use crate::similarity::PairSimilarity;

/// Number of pair features.
pub const N_FEATURES: usize = 3;
pub const ALPHA_LOGITS: &str = "alpha.logits";

/// Training variant: the full method and its two ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Meta-weighted with all three pair features.
    #[serde(rename = "metagc")]
    MetaGc,
    /// No meta-model; every pair weight is one.
    #[serde(rename = "metagc-x")]
    MetaGcX,
    /// Meta-weighted from attributes only, features fixed to `(1, 0, 0)`.
    #[serde(rename = "metagc-a")]
    MetaGcA,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::MetaGc, Variant::MetaGcX, Variant::MetaGcA];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::MetaGc => "metagc",
            Variant::MetaGcX => "metagc-x",
            Variant::MetaGcA => "metagc-a",
        }
    }

    /// Pair features used by the meta-model, or `None` when it is disabled.
    pub fn feature_mode(self) -> Option<FeatureMode> {
        match self {
            Variant::MetaGc => Some(FeatureMode::Full),
            Variant::MetaGcA => Some(FeatureMode::AttributesOnly),
            Variant::MetaGcX => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    /// Accepts `metagc`, `metagc-x`, `metagc-a`, underscores for dashes, any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "metagc" => Ok(Variant::MetaGc),
            "metagc-x" => Ok(Variant::MetaGcX),
            "metagc-a" => Ok(Variant::MetaGcA),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMode {
    Full,
    AttributesOnly,
}

impl FromStr for FeatureMode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(FeatureMode::Full),
            "attributes_only" | "attributes-only" => Ok(FeatureMode::AttributesOnly),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

/// Pair features `Y_1..Y_3` for a set of rows against every node.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub rows: Arc<[usize]>,
    pub values: [Array2<f64>; N_FEATURES],
}

/// `(1, 0, 0)` for non-adjacent pairs and `(1, S_ij, L_ij)` for edges.
///
/// The loss terms enter as plain numbers, so no gradient reaches the
/// clustering parameters through this feature.
pub fn pair_features(graph: &Graph, similarity: &PairSimilarity, terms: &PairLossTerms) -> Result<PairFeatures, ModelError> {
    let n = graph.n_nodes();
    let b = terms.rows.len();
    if terms.values.dim() != (b, n) {
        return Err(ModelError::Shape {
            context: "pair loss terms",
            expected: (b, n),
            actual: terms.values.dim(),
        });
    }
    let mut y2 = Array2::zeros((b, n));
    let mut y3 = Array2::zeros((b, n));
    for (r, &i) in terms.rows.iter().enumerate() {
        for &j in graph.neighbors(i) {
            y2[[r, j]] = similarity.get(i, j).ok_or(ModelError::MissingSimilarity(i, j))?;
            y3[[r, j]] = terms.values[[r, j]];
        }
    }
    Ok(PairFeatures {
        rows: Arc::from(terms.rows.as_slice()),
        values: [Array2::ones((b, n)), y2, y3],
    })
}

/// Features for the chosen mode. Attribute-only mode ignores the graph signals.
pub fn ablation_features(
    mode: FeatureMode,
    graph: &Graph,
    similarity: &PairSimilarity,
    terms: &PairLossTerms,
) -> Result<PairFeatures, ModelError> {
    match mode {
        FeatureMode::Full => pair_features(graph, similarity, terms),
        FeatureMode::AttributesOnly => {
            let dim = (terms.rows.len(), graph.n_nodes());
            Ok(PairFeatures {
                rows: Arc::from(terms.rows.as_slice()),
                values: [Array2::ones(dim), Array2::zeros(dim), Array2::zeros(dim)],
            })
        }
    }
}

/// Shapes of the meta-model: three `F -> hidden -> z_dim` MLPs plus the mixing logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetaModel {
    pub n_features: usize,
    pub hidden: usize,
    pub z_dim: usize,
}

fn param_name(r: usize, part: &str) -> String {
    format!("meta{}.{part}", r + 1)
}

impl MetaModel {
    pub fn new(n_features: usize, hidden: usize, z_dim: usize) -> Self {
        Self {
            n_features,
            hidden,
            z_dim,
        }
    }

    /// Fresh parameters with uniform mixing weights.
    pub fn init(&self, rng: &mut impl Rng) -> ParamSet {
        let mut theta = ParamSet::new();
        for r in 0..N_FEATURES {
            theta.push(param_name(r, "w1"), init_uniform(rng, self.n_features, self.hidden, 2f64.sqrt()));
            theta.push(param_name(r, "b1"), Array2::zeros((1, self.hidden)));
            theta.push(param_name(r, "w2"), init_uniform(rng, self.hidden, self.z_dim, 1.0));
            theta.push(param_name(r, "b2"), Array2::zeros((1, self.z_dim)));
        }
        theta.push(ALPHA_LOGITS, Array2::zeros((1, N_FEATURES)));
        theta
    }

    /// Records `Z_r` for every feature, `N x z_dim` each.
    pub fn embeddings_on_tape(&self, tape: &mut Tape, x: Var, theta: &[Var]) -> Vec<Var> {
        (0..N_FEATURES)
            .map(|r| {
                let p = &theta[4 * r..4 * r + 4];
                let h = tape.matmul(x, p[0]);
                let h = tape.add_row(h, p[1]);
                let h = tape.relu(h);
                let z = tape.matmul(h, p[2]);
                tape.add_row(z, p[3])
            })
            .collect()
    }

    /// Records the `|rows| x N` weight block for the feature rows.
    pub fn forward_on_tape(&self, tape: &mut Tape, x: Var, features: &PairFeatures, theta: &[Var]) -> Var {
        let z = self.embeddings_on_tape(tape, x, theta);
        let alpha = tape.row_softmax(theta[4 * N_FEATURES]);
        let mut total: Option<Var> = None;
        for (r, z_r) in z.into_iter().enumerate() {
            let rows = tape.gather_rows(z_r, &features.rows);
            let zt = tape.transpose(z_r);
            let attention = tape.matmul(rows, zt);
            let y = tape.constant(features.values[r].clone());
            let gated = tape.mul(attention, y);
            let gated = tape.sigmoid(gated);
            let a_r = tape.column(alpha, r);
            let term = tape.mul_scalar(gated, a_r);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
        total.expect("at least one feature")
    }

    pub fn check_params(&self, theta: &ParamSet) -> Result<(), ModelError> {
        let mut expected = Vec::with_capacity(4 * N_FEATURES + 1);
        for r in 0..N_FEATURES {
            expected.push((param_name(r, "w1"), (self.n_features, self.hidden)));
            expected.push((param_name(r, "b1"), (1, self.hidden)));
            expected.push((param_name(r, "w2"), (self.hidden, self.z_dim)));
            expected.push((param_name(r, "b2"), (1, self.z_dim)));
        }
        expected.push((ALPHA_LOGITS.to_string(), (1, N_FEATURES)));
        if theta.len() != expected.len() {
            return Err(ModelError::Config(format!("expected {} meta parameters, got {}", expected.len(), theta.len())));
        }
        for ((name, shape), (actual_name, actual)) in expected.iter().zip(theta.iter()) {
            if name != actual_name || *shape != actual.dim() {
                return Err(ModelError::Shape {
                    context: "meta parameters",
                    expected: *shape,
                    actual: actual.dim(),
                });
            }
        }
        Ok(())
    }

    /// Weight block `V` for the feature rows.
    pub fn forward(&self, x: &Array2<f64>, features: &PairFeatures, theta: &ParamSet) -> Result<Array2<f64>, ModelError> {
        self.check_params(theta)?;
        if x.ncols() != self.n_features {
            return Err(ModelError::Shape {
                context: "meta attributes",
                expected: (x.nrows(), self.n_features),
                actual: x.dim(),
            });
        }
        let dim = (features.rows.len(), x.nrows());
        if let Some(bad) = features.values.iter().find(|y| y.dim() != dim) {
            return Err(ModelError::Shape {
                context: "pair features",
                expected: dim,
                actual: bad.dim(),
            });
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars: Vec<Var> = theta.values().map(|v| tape.constant(v.clone())).collect();
        let v = self.forward_on_tape(&mut tape, xv, features, &vars);
        Ok(tape.value(v).clone())
    }

    /// `Z_r` for every feature, outside any tape.
    pub fn embeddings(&self, x: &Array2<f64>, theta: &ParamSet) -> Vec<Array2<f64>> {
        let values: Vec<&Array2<f64>> = theta.values().collect();
        (0..N_FEATURES)
            .map(|r| {
                let p = &values[4 * r..4 * r + 4];
                let h = (x.dot(p[0]) + p[1]).mapv(|v| v.max(0.0));
                h.dot(p[2]) + p[3]
            })
            .collect()
    }

    /// Mixing weights `alpha = softmax(logits)`.
    pub fn alpha(&self, theta: &ParamSet) -> [f64; N_FEATURES] {
        let a = row_softmax(theta.get(ALPHA_LOGITS).expect("alpha logits"));
        [a[[0, 0]], a[[0, 1]], a[[0, 2]]]
    }

    /// Weights of every edge of `graph`, in edge order, without forming dense blocks.
    ///
    /// `edge_terms[e]` is the pair loss term of edge `e`, used as the third
    /// feature in full mode.
    pub fn edge_weights(
        &self,
        x: &Array2<f64>,
        graph: &Graph,
        similarity: &PairSimilarity,
        edge_terms: &[f64],
        mode: FeatureMode,
        theta: &ParamSet,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_params(theta)?;
        if edge_terms.len() != graph.n_edges() {
            return Err(ModelError::Config(format!(
                "{} edge loss terms for {} edges",
                edge_terms.len(),
                graph.n_edges()
            )));
        }
        let z = self.embeddings(x, theta);
        let alpha = self.alpha(theta);
        graph
            .edges()
            .iter()
            .zip(edge_terms)
            .map(|(&(i, j), &loss)| {
                let y = match mode {
                    FeatureMode::Full => [1.0, similarity.get(i, j).ok_or(ModelError::MissingSimilarity(i, j))?, loss],
                    FeatureMode::AttributesOnly => [1.0, 0.0, 0.0],
                };
                Ok((0..N_FEATURES)
                    .map(|r| {
                        let dot = z[r].slice(s![i, ..]).dot(&z[r].slice(s![j, ..]));
                        alpha[r] * sigmoid(dot * y[r])
                    })
                    .sum())
            })
            .collect()
    }
}

/// Pair loss terms of every edge of `graph` under assignment `p`, in edge order.
pub fn edge_loss_terms(p: &Array2<f64>, graph: &Graph) -> Vec<f64> {
    let two_m = 2.0 * graph.n_edges() as f64;
    graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let c = -(1.0 - (graph.degree(i) * graph.degree(j)) as f64 / two_m) / two_m;
            c * p.index_axis(Axis(0), i).dot(&p.index_axis(Axis(0), j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::cluster::pair_loss_terms;
    use crate::similarity::adamic_adar;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn barbell() -> Graph {
        Graph::new(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).unwrap()
    }

    fn random_soft(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
        row_softmax(&Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0)))
    }

    fn setup(seed: u64) -> (Graph, Array2<f64>, MetaModel, ParamSet, PairFeatures) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = barbell();
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let model = MetaModel::new(3, 4, 3);
        let mut theta = model.init(&mut rng);
        theta.get_mut(ALPHA_LOGITS).unwrap().mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let p = random_soft(&mut rng, 6, 2);
        let all: Vec<usize> = (0..6).collect();
        let terms = pair_loss_terms(p.view(), &g, &all).unwrap();
        let features = pair_features(&g, &adamic_adar(&g), &terms).unwrap();
        (g, x, model, theta, features)
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert_eq!("MetaGC_A".parse::<Variant>().unwrap(), Variant::MetaGcA);
        assert!("dmon".parse::<Variant>().is_err());
        assert!("half".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn features_follow_adjacency() {
        let g = barbell();
        let p = Array2::ones((6, 1));
        let terms = pair_loss_terms(p.view(), &g, &[0, 2]).unwrap();
        let f = pair_features(&g, &adamic_adar(&g), &terms).unwrap();
        // non-adjacent pair (0, 4)
        assert_eq!([f.values[0][[0, 4]], f.values[1][[0, 4]], f.values[2][[0, 4]]], [1.0, 0.0, 0.0]);
        // (0, 2) share only node 1, which has degree 2
        assert_abs_diff_eq!(f.values[1][[0, 2]], 1.0 / 2f64.ln(), epsilon = 1e-15);
        // K = 1: the third feature is the bare coefficient, degrees 2 and 3, |E| = 7
        let expected = -(1.0 - 2.0 * 3.0 / 14.0) / 14.0;
        assert_abs_diff_eq!(f.values[2][[0, 2]], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(f.values[2][[1, 0]], expected, epsilon = 1e-15);
    }

    #[test]
    fn missing_similarity_is_an_error() {
        let g = barbell();
        let other = Graph::new(6, [(0, 1)]).unwrap();
        let terms = pair_loss_terms(Array2::ones((6, 1)).view(), &g, &[2]).unwrap();
        assert!(matches!(
            pair_features(&g, &adamic_adar(&other), &terms),
            Err(ModelError::MissingSimilarity(..))
        ));
    }

    #[test]
    fn attribute_only_features_ignore_the_graph() {
        let g = barbell();
        let terms = pair_loss_terms(Array2::ones((6, 1)).view(), &g, &[0, 1, 2, 3, 4, 5]).unwrap();
        let a = ablation_features(FeatureMode::AttributesOnly, &g, &adamic_adar(&g), &terms).unwrap();
        let other = Graph::new(6, [(0, 5), (1, 4), (2, 3), (0, 1), (1, 2), (0, 2), (3, 4)]).unwrap();
        let b = ablation_features(FeatureMode::AttributesOnly, &g, &adamic_adar(&other), &terms).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0][[0, 1]], 1.0);
        assert!(a.values[1].iter().chain(a.values[2].iter()).all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_soft(&mut rng, 6, 2);
        let terms = pair_loss_terms(p.view(), &g, &[0, 1, 2, 3, 4, 5]).unwrap();
        let delegated = ablation_features(FeatureMode::Full, &g, &adamic_adar(&g), &terms).unwrap();
        assert_eq!(delegated, pair_features(&g, &adamic_adar(&g), &terms).unwrap());
    }

    #[test]
    fn zero_embeddings_give_one_half() {
        let (_, x, model, mut theta, features) = setup(2);
        for (name, v) in [("meta1.w2", 0.0), ("meta2.w2", 0.0), ("meta3.w2", 0.0)] {
            theta.get_mut(name).unwrap().fill(v);
        }
        let v = model.forward(&x, &features, &theta).unwrap();
        assert!(v.iter().all(|&w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn single_feature_selection() {
        let (_, x, model, mut theta, features) = setup(3);
        *theta.get_mut(ALPHA_LOGITS).unwrap() = ndarray::array![[800.0, 0.0, 0.0]];
        let v = model.forward(&x, &features, &theta).unwrap();
        let z = &model.embeddings(&x, &theta)[0];
        let expected = z.dot(&z.t()).mapv(sigmoid);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn weights_are_strictly_inside_unit_interval_and_symmetric() {
        for seed in 0..10 {
            let (_, x, model, theta, features) = setup(10 + seed);
            let v = model.forward(&x, &features, &theta).unwrap();
            assert!(v.iter().all(|&w| w > 0.0 && w < 1.0));
            assert_abs_diff_eq!(v, v.t().to_owned(), epsilon = 1e-14);
        }
    }

    #[test]
    fn feature_relabeling_leaves_weights_unchanged() {
        let (_, x, model, theta, features) = setup(4);
        let base = model.forward(&x, &features, &theta).unwrap();
        let logits = theta.get(ALPHA_LOGITS).unwrap().clone();
        for perm in [[0, 2, 1], [1, 0, 2], [2, 1, 0], [1, 2, 0], [2, 0, 1]] {
            let mut permuted = ParamSet::new();
            for (slot, &r) in perm.iter().enumerate() {
                for part in ["w1", "b1", "w2", "b2"] {
                    permuted.push(param_name(slot, part), theta.get(&param_name(r, part)).unwrap().clone());
                }
            }
            permuted.push(ALPHA_LOGITS, Array2::from_shape_fn((1, 3), |(_, c)| logits[[0, perm[c]]]));
            let pf = PairFeatures {
                rows: features.rows.clone(),
                values: perm.map(|r| features.values[r].clone()),
            };
            let v = model.forward(&x, &pf, &permuted).unwrap();
            assert_abs_diff_eq!(v, base, epsilon = 1e-14);
        }
    }

    #[test]
    fn gradient_of_weight_sum_matches_finite_differences() {
        for seed in 0..3 {
            let (_, x, model, theta, features) = setup(30 + seed);
            let err = finite_diff_check(&theta, 1e-5, |t, vars| {
                let xv = t.constant(x.clone());
                let v = model.forward_on_tape(t, xv, &features, vars);
                t.sum(v)
            })
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn edge_weights_match_dense_blocks() {
        let (g, x, model, theta, _) = setup(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_soft(&mut rng, 6, 3);
        let all: Vec<usize> = (0..6).collect();
        let sim = adamic_adar(&g);
        let terms = pair_loss_terms(p.view(), &g, &all).unwrap();
        let edge_terms = edge_loss_terms(&p, &g);
        for (e, &(i, j)) in g.edges().iter().enumerate() {
            assert_abs_diff_eq!(edge_terms[e], terms.values[[i, j]], epsilon = 1e-15);
        }
        for mode in [FeatureMode::Full, FeatureMode::AttributesOnly] {
            let features = ablation_features(mode, &g, &sim, &terms).unwrap();
            let dense = model.forward(&x, &features, &theta).unwrap();
            let direct = model.edge_weights(&x, &g, &sim, &edge_terms, mode, &theta).unwrap();
            for (e, &(i, j)) in g.edges().iter().enumerate() {
                assert_abs_diff_eq!(direct[e], dense[[i, j]], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn malformed_parameters_are_rejected() {
        let (_, x, model, theta, features) = setup(6);
        let mut bad = theta.clone();
        *bad.get_mut("meta2.w1").unwrap() = Array2::zeros((2, 4));
        assert!(model.forward(&x, &features, &bad).is_err());
        assert!(model.forward(&Array2::zeros((6, 2)), &features, &theta).is_err());
    }
}
