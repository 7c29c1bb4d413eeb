//! Alternating meta-model and clustering-model updates on disjoint node
//! batches, with modularity-based early stopping.
//!
//! Each step runs, in order:
//! 1. a look-ahead `w' = w - eta * ∇_w sum_{B_C} L_i(w, θ)` (plain SGD, kept on the tape),
//! 2. an Adam update of `θ` on `∇_θ sum_{B_M} Q_i(w')`,
//! 3. an Adam update of `w` on `∇_w sum_{B_C} L_i(w, θ)` with the new `θ`.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{grad, meta_grad, ParamSet, Tape, Var};
use crate::cluster::{
    collapse_reg_on_tape, full_modularity_loss, node_loss_on_tape, pair_loss_on_tape, pair_loss_terms, ClusterModel,
    ModelInputs, PairCoefficients,
};
use crate::dataset::Dataset;
use crate::error::{AutodiffError, ModelError, TrainError};
use crate::meta_model::{ablation_features, edge_loss_terms, FeatureMode, MetaModel, PairFeatures, Variant};
use crate::similarity::{adamic_adar, PairSimilarity};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_clusters: usize,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Clustering-model learning rate, also the look-ahead step size.
    pub eta: f64,
    /// Meta-model learning rate.
    pub mu: f64,
    /// Collapse-regularization rate.
    pub lambda: f64,
    pub hidden: usize,
    pub meta_hidden: usize,
    pub z_dim: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_clusters: 2,
            max_epochs: 1500,
            min_epochs: 200,
            patience: 50,
            batch_size: 256,
            eta: 1e-3,
            mu: 1e-3,
            lambda: 1.0,
            hidden: 64,
            meta_hidden: 64,
            z_dim: 64,
            seed: 0,
            variant: Variant::MetaGc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_nodes: usize) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::Config(msg));
        if self.n_clusters < 2 || self.n_clusters > n_nodes {
            return fail(format!("need 2 <= K <= N, got K={}, N={n_nodes}", self.n_clusters));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if 2 * self.batch_size > n_nodes {
            return Err(TrainError::BatchTooLarge {
                batch: self.batch_size,
                n_nodes,
            });
        }
        if !(self.eta >= 0.0 && self.eta.is_finite() && self.mu >= 0.0 && self.mu.is_finite()) {
            return fail(format!("learning rates must be finite and non-negative (eta={}, mu={})", self.eta, self.mu));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.min_epochs > self.max_epochs {
            return fail(format!(
                "need patience >= 1 and 1 <= max_epochs with min_epochs <= max_epochs (patience={}, min={}, max={})",
                self.patience, self.min_epochs, self.max_epochs
            ));
        }
        if self.hidden == 0 || self.meta_hidden == 0 || self.z_dim == 0 {
            return fail("layer widths must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(lr: f64, like: &ParamSet) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let moments = self.m.values_mut().zip(self.v.values_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grads.values()).zip(moments) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

/// Two disjoint batches of `b` nodes each, uniform given the generator state.
pub fn sample_disjoint_batches(n: usize, b: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if 2 * b > n {
        return Err(TrainError::BatchTooLarge { batch: b, n_nodes: n });
    }
    let mut nodes: Vec<usize> = (0..n).collect();
    let (picked, _) = nodes.partial_shuffle(rng, 2 * b);
    Ok((picked[..b].to_vec(), picked[b..].to_vec()))
}

/// Both parameter sets plus their optimizers.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub w: ParamSet,
    pub theta: ParamSet,
    adam_w: Adam,
    adam_theta: Adam,
}

/// What one step saw, for tests and diagnostics.
#[derive(Clone, Debug)]
pub struct StepTrace {
    /// Batch loss at the pre-step `w` and `θ`.
    pub inner_loss: f64,
    /// Look-ahead parameters; `None` when the meta-model is disabled.
    pub w_prime: Option<ParamSet>,
    pub meta_loss: Option<f64>,
    pub theta_grad: Option<ParamSet>,
    /// Gradient used for the clustering update, taken at the updated `θ`.
    pub w_grad: ParamSet,
    /// Batch loss at the pre-step `w` and the updated `θ`.
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch's steps.
    pub loss: f64,
    /// Soft modularity on the training graph after the epoch.
    pub modularity: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_modularity: f64,
    pub epochs_run: usize,
    pub w: ParamSet,
    pub theta: ParamSet,
    pub wall_ms: u128,
}

/// Everything derived from one dataset and config that stays fixed during training.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pub inputs: ModelInputs,
    pub similarity: PairSimilarity,
    pub cluster: ClusterModel,
    pub meta: MetaModel,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate(dataset.n_nodes())?;
        Ok(Self {
            inputs: ModelInputs::from_dataset(dataset),
            similarity: adamic_adar(&dataset.graph),
            cluster: ClusterModel::new(dataset.n_features(), config.hidden, config.n_clusters),
            meta: MetaModel::new(dataset.n_features(), config.meta_hidden, config.z_dim),
            dataset,
            config,
        })
    }

    pub fn mode(&self) -> Option<FeatureMode> {
        self.config.variant.feature_mode()
    }

    /// Fresh state; clustering parameters are drawn before meta parameters.
    pub fn init_state(&self, rng: &mut ChaCha8Rng) -> TrainState {
        let w = self.cluster.init(rng);
        let theta = self.meta.init(rng);
        TrainState {
            adam_w: Adam::new(self.config.eta, &w),
            adam_theta: Adam::new(self.config.mu, &theta),
            w,
            theta,
        }
    }

    pub fn assignment(&self, w: &ParamSet) -> Result<Array2<f64>, ModelError> {
        Ok(self.cluster.assign(&self.inputs, w)?.into_inner())
    }

    /// Soft modularity of `w` on the training graph.
    pub fn modularity(&self, w: &ParamSet) -> Result<f64, ModelError> {
        Ok(-full_modularity_loss(self.assignment(w)?.view(), &self.dataset.graph))
    }

    /// Pair features of `rows` at the current `w`, or `None` without a meta-model.
    pub fn features(&self, w: &ParamSet, rows: &[usize]) -> Result<Option<PairFeatures>, ModelError> {
        let Some(mode) = self.mode() else { return Ok(None) };
        let p = self.assignment(w)?;
        let terms = pair_loss_terms(p.view(), &self.dataset.graph, rows)?;
        ablation_features(mode, &self.dataset.graph, &self.similarity, &terms).map(Some)
    }

    /// The weighted batch loss `sum_{i in rows} L_i(w, θ)` as a tape builder.
    pub fn inner_objective<'s>(
        &'s self,
        coeffs: &'s PairCoefficients,
        features: Option<&'s PairFeatures>,
    ) -> impl Fn(&mut Tape, &[Var], &[Var]) -> Var + 's {
        move |tape, w, theta| {
            let p = self.cluster.assign_on_tape(tape, &self.inputs, w);
            let pair = pair_loss_on_tape(tape, p, coeffs);
            let reg = collapse_reg_on_tape(tape, p);
            let weights = features.map(|f| {
                let x = tape.constant(self.inputs.attributes.clone());
                self.meta.forward_on_tape(tape, x, f, theta)
            });
            node_loss_on_tape(tape, pair, weights, reg, self.config.lambda)
        }
    }

    /// The unweighted batch loss `sum_{i in rows} Q_i(w)` as a tape builder.
    pub fn outer_objective<'s>(&'s self, coeffs: &'s PairCoefficients) -> impl Fn(&mut Tape, &[Var]) -> Var + 's {
        move |tape, w| {
            let p = self.cluster.assign_on_tape(tape, &self.inputs, w);
            let pair = pair_loss_on_tape(tape, p, coeffs);
            tape.sum(pair)
        }
    }

    /// One alternating update on the given batches.
    pub fn step(&self, state: &mut TrainState, cluster_rows: &[usize], meta_rows: &[usize]) -> Result<StepTrace, TrainError> {
        let graph = &self.dataset.graph;
        let coeffs_c = PairCoefficients::new(graph, cluster_rows)?;
        let features = self.features(&state.w, cluster_rows)?;
        let inner = self.inner_objective(&coeffs_c, features.as_ref());

        let mut inner_loss = None;
        let (w_prime, meta_loss, theta_grad) = if features.is_some() {
            let coeffs_m = PairCoefficients::new(graph, meta_rows)?;
            let outer = self.outer_objective(&coeffs_m);
            let mg = meta_grad(&state.w, &state.theta, self.config.eta, &inner, outer)?;
            state.adam_theta.step(&mut state.theta, &mg.theta_grad);
            inner_loss = Some(mg.inner_value);
            (Some(mg.w_prime), Some(mg.outer_value), Some(mg.theta_grad))
        } else {
            (None, None, None)
        };
        let adam_fault = AutodiffError::NonFinite {
            primitive: "adam",
            node: 0,
        };
        if !state.theta.is_finite() {
            return Err(adam_fault.into());
        }

        let theta = &state.theta;
        let g = grad(&state.w, |tape, w| {
            let t: Vec<Var> = theta.values().map(|v| tape.constant(v.clone())).collect();
            inner(tape, w, &t)
        })?;
        state.adam_w.step(&mut state.w, &g.grads);
        if !state.w.is_finite() {
            return Err(adam_fault.into());
        }
        Ok(StepTrace {
            inner_loss: inner_loss.unwrap_or(g.value),
            w_prime,
            meta_loss,
            theta_grad,
            w_grad: g.grads,
            loss: g.value,
        })
    }

    /// Learned weights of every training-graph edge, or `None` without a meta-model.
    pub fn edge_weights(&self, w: &ParamSet, theta: &ParamSet) -> Result<Option<Vec<f64>>, ModelError> {
        let Some(mode) = self.mode() else { return Ok(None) };
        let p = self.assignment(w)?;
        let terms = edge_loss_terms(&p, &self.dataset.graph);
        self.meta
            .edge_weights(&self.inputs.attributes, &self.dataset.graph, &self.similarity, &terms, mode, theta)
            .map(Some)
    }

    /// Runs until `max_epochs` or until `patience` epochs pass without a new
    /// best modularity, never stopping before `min_epochs`.
    pub fn train(&self) -> Result<TrainReport, TrainError> {
        let start = Instant::now();
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = self.init_state(&mut rng);
        let n = self.dataset.n_nodes();
        let steps = n / cfg.batch_size;
        let mut trace = Vec::new();
        let mut best = (0, f64::NEG_INFINITY, state.w.clone(), state.theta.clone());
        for epoch in 1..=cfg.max_epochs {
            let mut total = 0.0;
            for step in 0..steps {
                let (b_c, b_m) = sample_disjoint_batches(n, cfg.batch_size, &mut rng)?;
                let t = self.step(&mut state, &b_c, &b_m).map_err(|e| match e {
                    TrainError::Autodiff(source) => TrainError::Diverged { epoch, step, source },
                    other => other,
                })?;
                total += t.inner_loss;
            }
            let modularity = self.modularity(&state.w)?;
            trace.push(EpochRecord {
                epoch,
                loss: total / steps as f64,
                modularity,
            });
            if modularity > best.1 {
                best = (epoch, modularity, state.w.clone(), state.theta.clone());
            }
            log::debug!("epoch {epoch}: loss {:.6} modularity {modularity:.6}", total / steps as f64);
            if epoch >= cfg.min_epochs && epoch - best.0 >= cfg.patience {
                break;
            }
        }
        let (best_epoch, best_modularity, w, theta) = best;
        Ok(TrainReport {
            epochs_run: trace.len(),
            trace,
            best_epoch,
            best_modularity,
            w,
            theta,
            wall_ms: start.elapsed().as_millis(),
        })
    }
}

/// Trains on `dataset` (the possibly noisy graph) with `config`.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainReport, TrainError> {
    Trainer::new(dataset, config.clone())?.train()
}

/// Reloadable snapshot of a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_modularity: f64,
    pub w: ParamSet,
    pub theta: ParamSet,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(config: &TrainConfig, report: &TrainReport) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            config_hash: config.hash(),
            config: config.clone(),
            best_epoch: report.best_epoch,
            best_modularity: report.best_modularity,
            w: report.w.clone(),
            theta: report.theta.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    /// Loads and checks the version and the config hash.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(TrainError::Config(format!("unsupported checkpoint version {}", ckpt.format_version)));
        }
        if ckpt.config_hash != ckpt.config.hash() {
            return Err(TrainError::Config(format!("{}: config hash mismatch", path.display())));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_meta_check;
    use crate::dataset::{synth_sbm, SbmSpec};
    use crate::noise::inject_noise;

    fn small_dataset(seed: u64) -> Dataset {
        let clean = synth_sbm(&SbmSpec {
            n_per_cluster: 5,
            k_clusters: 2,
            p_in: 0.7,
            p_out: 0.1,
            attr_dim: 4,
            attr_signal: 1.0,
            seed,
        })
        .unwrap();
        let noisy = inject_noise(&clean.graph, &clean.labels, 0.3, seed).unwrap();
        clean.with_graph(noisy.graph)
    }

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            n_clusters: 2,
            batch_size: 3,
            hidden: 6,
            meta_hidden: 5,
            z_dim: 4,
            max_epochs: 6,
            min_epochs: 2,
            patience: 2,
            eta: 1e-2,
            mu: 1e-2,
            seed: 7,
            variant,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_are_disjoint_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = sample_disjoint_batches(4, 2, &mut rng).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
        let again = sample_disjoint_batches(4, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((a, b), again);
        assert!(matches!(
            sample_disjoint_batches(5, 3, &mut rng),
            Err(TrainError::BatchTooLarge { batch: 3, n_nodes: 5 })
        ));
    }

    #[test]
    fn batch_membership_is_uniform() {
        let (n, b, draws) = (10, 2, 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [[0usize; 10]; 2];
        for _ in 0..draws {
            let (c, m) = sample_disjoint_batches(n, b, &mut rng).unwrap();
            c.iter().for_each(|&i| counts[0][i] += 1);
            m.iter().for_each(|&i| counts[1][i] += 1);
        }
        let p = b as f64 / n as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for row in counts {
            for c in row {
                assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{c}");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(512).is_ok());
        assert!(matches!(TrainConfig::default().validate(511), Err(TrainError::BatchTooLarge { .. })));
        let bad = [
            TrainConfig { n_clusters: 1, ..small_config(Variant::MetaGc) },
            TrainConfig { patience: 0, ..small_config(Variant::MetaGc) },
            TrainConfig { eta: f64::NAN, ..small_config(Variant::MetaGc) },
            TrainConfig { lambda: -1.0, ..small_config(Variant::MetaGc) },
            TrainConfig { min_epochs: 9, ..small_config(Variant::MetaGc) },
        ];
        for cfg in bad {
            assert!(cfg.validate(10).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = ParamSet::new().with("a", ndarray::array![[1.0, -2.0, 0.5]]);
        let g = ParamSet::new().with("a", ndarray::array![[3.0, -0.1, 0.0]]);
        let mut adam = Adam::new(0.1, &p);
        adam.step(&mut p, &g);
        let a = p.get("a").unwrap();
        assert!((a[[0, 0]] - 0.9).abs() < 1e-8);
        assert!((a[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(a[[0, 2]], 0.5);
    }

    #[test]
    fn step_follows_the_documented_order() {
        let data = small_dataset(3);
        let trainer = Trainer::new(&data, small_config(Variant::MetaGc)).unwrap();
        let mut state = trainer.init_state(&mut ChaCha8Rng::seed_from_u64(0));
        let before = state.clone();
        let (b_c, b_m) = ([0, 4, 7], [1, 2, 9]);
        let trace = trainer.step(&mut state, &b_c, &b_m).unwrap();

        let coeffs = PairCoefficients::new(&data.graph, &b_c).unwrap();
        let features = trainer.features(&before.w, &b_c).unwrap();
        let inner = trainer.inner_objective(&coeffs, features.as_ref());
        let with_theta = |theta: &ParamSet| {
            grad(&before.w, |t, w| {
                let th: Vec<Var> = theta.values().map(|v| t.constant(v.clone())).collect();
                inner(t, w, &th)
            })
            .unwrap()
        };

        // (1) look-ahead uses the pre-step w and θ with a plain SGD step
        let g_old = with_theta(&before.theta);
        let mut expected_prime = before.w.clone();
        expected_prime.add_scaled(-trainer.config.eta, &g_old.grads).unwrap();
        let w_prime = trace.w_prime.unwrap();
        assert!(w_prime.flatten().iter().zip(expected_prime.flatten()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!((trace.inner_loss - g_old.value).abs() < 1e-12);

        // (2) θ moved by one Adam step on the meta-gradient
        let mut adam = Adam::new(trainer.config.mu, &before.theta);
        let mut expected_theta = before.theta.clone();
        adam.step(&mut expected_theta, trace.theta_grad.as_ref().unwrap());
        assert_eq!(state.theta, expected_theta);
        assert_ne!(state.theta, before.theta);

        // (3) the clustering gradient is taken at the updated θ
        let g_new = with_theta(&state.theta);
        assert_eq!(trace.w_grad, g_new.grads);
        assert_ne!(g_new.grads, g_old.grads);
        let mut adam = Adam::new(trainer.config.eta, &before.w);
        let mut expected_w = before.w.clone();
        adam.step(&mut expected_w, &g_new.grads);
        assert_eq!(state.w, expected_w);
    }

    #[test]
    fn zero_meta_rate_freezes_theta() {
        let data = small_dataset(4);
        let cfg = TrainConfig { mu: 0.0, ..small_config(Variant::MetaGc) };
        let trainer = Trainer::new(&data, cfg).unwrap();
        let mut state = trainer.init_state(&mut ChaCha8Rng::seed_from_u64(0));
        let before = state.clone();
        let trace = trainer.step(&mut state, &[0, 1, 2], &[3, 4, 5]).unwrap();
        assert_eq!(state.theta, before.theta);
        assert_eq!(trace.loss, trace.inner_loss);
        let mut adam = Adam::new(trainer.config.eta, &before.w);
        let mut expected = before.w.clone();
        adam.step(&mut expected, &trace.w_grad);
        assert_eq!(state.w, expected);
    }

    #[test]
    fn zero_clustering_rate_stalls_everything() {
        let data = small_dataset(5);
        let cfg = TrainConfig { eta: 0.0, ..small_config(Variant::MetaGc) };
        let trainer = Trainer::new(&data, cfg).unwrap();
        let mut state = trainer.init_state(&mut ChaCha8Rng::seed_from_u64(0));
        let before = state.clone();
        let trace = trainer.step(&mut state, &[0, 1, 2], &[3, 4, 5]).unwrap();
        assert_eq!(trace.w_prime.unwrap(), before.w);
        assert!(trace.theta_grad.unwrap().flatten().iter().all(|&g| g == 0.0));
        assert_eq!(state.theta, before.theta);
        assert_eq!(state.w, before.w);
    }

    #[test]
    fn meta_update_direction_matches_finite_differences() {
        let data = small_dataset(6);
        let cfg = TrainConfig { eta: 0.5, ..small_config(Variant::MetaGc) };
        let trainer = Trainer::new(&data, cfg).unwrap();
        let state = trainer.init_state(&mut ChaCha8Rng::seed_from_u64(1));
        let (b_c, b_m) = ([0, 3, 8], [2, 5, 6]);
        let coeffs_c = PairCoefficients::new(&data.graph, &b_c).unwrap();
        let coeffs_m = PairCoefficients::new(&data.graph, &b_m).unwrap();
        let features = trainer.features(&state.w, &b_c).unwrap();
        let err = finite_diff_meta_check(
            &state.w,
            &state.theta,
            0.5,
            1e-5,
            trainer.inner_objective(&coeffs_c, features.as_ref()),
            trainer.outer_objective(&coeffs_m),
        )
        .unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn no_meta_variant_skips_the_meta_step() {
        let data = small_dataset(7);
        let trainer = Trainer::new(&data, small_config(Variant::MetaGcX)).unwrap();
        let mut state = trainer.init_state(&mut ChaCha8Rng::seed_from_u64(0));
        let before = state.clone();
        let trace = trainer.step(&mut state, &[0, 1, 2], &[3, 4, 5]).unwrap();
        assert!(trace.w_prime.is_none() && trace.theta_grad.is_none());
        assert_eq!(state.theta, before.theta);
        assert_ne!(state.w, before.w);
        assert!(trainer.edge_weights(&state.w, &state.theta).unwrap().is_none());
    }

    #[test]
    fn training_is_deterministic_and_respects_patience() {
        let data = small_dataset(8);
        for variant in Variant::ALL {
            let cfg = small_config(variant);
            let a = train(&data, &cfg).unwrap();
            let b = train(&data, &cfg).unwrap();
            assert_eq!(a.trace, b.trace);
            assert_eq!(a.w, b.w);
            assert!(a.epochs_run <= a.best_epoch + cfg.patience);
            assert!(a.epochs_run >= cfg.min_epochs);
            let best = a.trace.iter().map(|r| r.modularity).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(a.best_modularity, best);
            let trainer = Trainer::new(&data, cfg).unwrap();
            assert_eq!(trainer.modularity(&a.w).unwrap(), a.best_modularity);
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_hash_check() {
        let data = small_dataset(9);
        let cfg = small_config(Variant::MetaGcA);
        let report = train(&data, &cfg).unwrap();
        let ckpt = Checkpoint::new(&cfg, &report);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let tampered = ckpt.to_json().replace("\"seed\":7", "\"seed\":8");
        std::fs::write(&path, tampered).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
