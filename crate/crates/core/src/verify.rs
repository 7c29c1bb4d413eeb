//! Self-checks: loss expectation properties on enumerable graphs, the modularity
//! oracle, and finite-difference checks of both gradient paths.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_check, finite_diff_meta_check, row_softmax};
use crate::cluster::PairCoefficients;
use crate::dataset::{synth_sbm, Dataset, SbmSpec};
use crate::error::ExperimentError;
use crate::eval::{
    bruteforce_best, expectation_conforming_gap, expected_hard_value, grid_minimum_check, modularity_loss, modularity_metric,
    normalized_cut_loss, normalized_cut_two_node_closed_forms, one_hot, Goal,
};
use crate::graph::Graph;
use crate::meta_model::Variant;
use crate::noise::inject_noise;
use crate::trainer::{TrainConfig, Trainer};

/// A relaxed clustering loss on a soft assignment.
pub type PairLoss = fn(ArrayView2<f64>, &Graph) -> f64;

pub const GAP_TOLERANCE: f64 = 1e-9;
pub const NCUT_MIN_GAP: f64 = 1e-3;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const META_GRAD_TOLERANCE: f64 = 1e-3;
pub const FD_EPSILON: f64 = 1e-5;
/// Look-ahead step used by the meta-gradient check; large enough that the
/// second-order term dominates rounding noise.
pub const META_CHECK_ETA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|_| rng.random_bool(p))
        .collect();
    Graph::new(n, edges).expect("simple graph")
}

fn random_soft(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    row_softmax(&Array2::from_shape_fn((n, k), |_| rng.random_range(-2.0..2.0)))
}

/// Expectation checks on `trials` random graphs with at most 5 nodes.
///
/// The loss must match its own expectation over hard assignments and that
/// expectation must equal the negated modularity of those assignments.
pub fn check_modularity_expectation(loss: PairLoss, seed: u64, trials: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(2..=3);
        let g = random_graph(&mut rng, n, 0.6);
        let p = random_soft(&mut rng, n, k);
        let self_gap = expectation_conforming_gap(loss, p.view(), &g).expect("enumerable");
        let expected_q = expected_hard_value(p.view(), |a| -modularity_metric(a, &g).expect("lengths match")).expect("enumerable");
        worst = worst.max(self_gap).max((loss(p.view(), &g) - expected_q).abs());
    }
    CheckResult {
        name: "modularity-expectation",
        passed: worst <= GAP_TOLERANCE,
        worst,
        detail: format!("{trials} random graphs, N <= 5, K in {{2, 3}}; max gap {worst:.3e} (limit {GAP_TOLERANCE:.0e})"),
    }
}

/// Any `sum_{i != j} c_ij P_i·P_j + sum_i c_ii` with random symmetric `c` is expectation-conforming.
pub fn check_decomposable_expectation(seed: u64, trials: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(2..=5);
        let k = rng.random_range(2..=3);
        let mut c = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0));
        c = &c + &c.t();
        let p = random_soft(&mut rng, n, k);
        let f = |p: ArrayView2<f64>| -> f64 {
            let gram = p.dot(&p.t());
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| if i == j { c[[i, i]] } else { c[[i, j]] * gram[[i, j]] })
                .sum()
        };
        let expected = expected_hard_value(p.view(), |a| f(one_hot(a, k).view())).expect("enumerable");
        worst = worst.max((f(p.view()) - expected).abs());
    }
    CheckResult {
        name: "decomposable-expectation",
        passed: worst <= GAP_TOLERANCE,
        worst,
        detail: format!("{trials} random decomposable losses; max gap {worst:.3e} (limit {GAP_TOLERANCE:.0e})"),
    }
}

/// The normalized cut on the one-edge graph is not expectation-conforming.
pub fn check_normalized_cut() -> CheckResult {
    let g = Graph::new(2, [(0, 1)]).expect("one edge");
    let p = ndarray::array![[0.5, 0.5], [0.5, 0.5]];
    let gap = expectation_conforming_gap(normalized_cut_loss, p.view(), &g).expect("enumerable");
    let (direct, expected) = normalized_cut_two_node_closed_forms([0.5, 0.5], [0.5, 0.5]);
    let matches = (normalized_cut_loss(p.view(), &g) - direct).abs() <= 1e-12 && (gap - (direct - expected).abs()).abs() <= 1e-12;
    CheckResult {
        name: "normalized-cut-counterexample",
        passed: gap > NCUT_MIN_GAP && matches,
        worst: gap,
        detail: format!("direct {direct}, expectation {expected}, gap {gap} (needs > {NCUT_MIN_GAP:.0e})"),
    }
}

/// Soft minima of `loss` on a dense grid only put mass on optimal hard assignments.
pub fn check_soft_minima(loss: PairLoss, seed: u64, trials: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = rng.random_range(3..=4);
        let g = loop {
            let g = random_graph(&mut rng, n, 0.6);
            if g.n_edges() > 0 {
                break g;
            }
        };
        let (k, steps) = if trial % 2 == 0 { (2, 10) } else { (3, 4) };
        let check = grid_minimum_check(loss, &g, k, steps, 1e-6).expect("enumerable");
        worst = worst.max(check.hard_min - check.soft_min);
        if !check.holds() {
            failures += 1;
        }
    }
    CheckResult {
        name: "soft-minima-support",
        passed: failures == 0,
        worst,
        detail: format!("{trials} tiny graphs, {failures} with a soft minimum off the hard optima"),
    }
}

/// The barbell triangle split scores 5/14 and is the brute-force optimum.
pub fn check_barbell_oracle(loss: PairLoss) -> CheckResult {
    let g = Graph::new(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)]).expect("barbell");
    let split = [0, 0, 0, 1, 1, 1];
    let q = modularity_metric(&split, &g).expect("lengths match");
    let best = bruteforce_best(|a, g| modularity_metric(a, g).expect("lengths match"), &g, 2, Goal::Maximize).expect("enumerable");
    let from_loss = -loss(one_hot(&split, 2).view(), &g);
    let worst = (q - 5.0 / 14.0).abs().max((best.best - q).abs()).max((from_loss - q).abs());
    CheckResult {
        name: "barbell-oracle",
        passed: worst <= 1e-12 && best.argbest.contains(&split.to_vec()),
        worst,
        detail: format!("split modularity {q:.15}, brute-force optimum {:.15}, from loss {from_loss:.15}", best.best),
    }
}

/// A small noisy SBM and training config for gradient checks.
pub fn gradient_instance(seed: u64) -> (Dataset, TrainConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = synth_sbm(&SbmSpec {
        n_per_cluster: rng.random_range(4..=6),
        k_clusters: 2,
        p_in: 0.7,
        p_out: 0.1,
        attr_dim: rng.random_range(2..=4),
        attr_signal: 1.0,
        seed,
    })
    .expect("valid spec");
    let noisy = inject_noise(&clean.graph, &clean.labels, 0.3, seed).expect("enough candidates");
    let config = TrainConfig {
        n_clusters: rng.random_range(2..=3),
        batch_size: 3,
        hidden: 5,
        meta_hidden: 4,
        z_dim: 3,
        lambda: rng.random_range(0.0..2.0),
        eta: META_CHECK_ETA,
        seed,
        variant: if seed % 2 == 0 { Variant::MetaGc } else { Variant::MetaGcA },
        ..TrainConfig::default()
    };
    (clean.with_graph(noisy.graph), config)
}

/// Worst relative errors `(grad, meta_grad)` against central differences on one instance.
pub fn gradient_errors(seed: u64) -> (f64, f64) {
    let (data, config) = gradient_instance(seed);
    let trainer = Trainer::new(&data, config).expect("valid instance");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let state = trainer.init_state(&mut rng);
    let mut nodes: Vec<usize> = (0..data.n_nodes()).collect();
    rand::seq::SliceRandom::shuffle(nodes.as_mut_slice(), &mut rng);
    let (b_c, b_m) = (&nodes[..3], &nodes[3..6]);
    let coeffs_c = PairCoefficients::new(&data.graph, b_c).expect("rows in range");
    let coeffs_m = PairCoefficients::new(&data.graph, b_m).expect("rows in range");
    let features = trainer.features(&state.w, b_c).expect("valid state");
    let inner = trainer.inner_objective(&coeffs_c, features.as_ref());
    let theta = state.theta.clone();
    let grad_err = finite_diff_check(&state.w, FD_EPSILON, |t, w| {
        let th: Vec<_> = theta.values().map(|v| t.constant(v.clone())).collect();
        inner(t, w, &th)
    })
    .expect("finite");
    let meta_err = finite_diff_meta_check(
        &state.w,
        &state.theta,
        META_CHECK_ETA,
        FD_EPSILON,
        &inner,
        trainer.outer_objective(&coeffs_m),
    )
    .expect("finite");
    (grad_err, meta_err)
}

pub fn check_gradients(seed: u64, trials: usize) -> [CheckResult; 2] {
    let (mut g_worst, mut m_worst): (f64, f64) = (0.0, 0.0);
    for t in 0..trials {
        let (g, m) = gradient_errors(seed.wrapping_add(t as u64));
        g_worst = g_worst.max(g);
        m_worst = m_worst.max(m);
    }
    [
        CheckResult {
            name: "gradient",
            passed: g_worst <= GRAD_TOLERANCE,
            worst: g_worst,
            detail: format!("{trials} instances; max relative error {g_worst:.3e} (limit {GRAD_TOLERANCE:.0e})"),
        },
        CheckResult {
            name: "meta-gradient",
            passed: m_worst <= META_GRAD_TOLERANCE,
            worst: m_worst,
            detail: format!("{trials} instances; max relative error {m_worst:.3e} (limit {META_GRAD_TOLERANCE:.0e})"),
        },
    ]
}

/// Runs every check with `loss` as the relaxed modularity loss under test.
pub fn run_suite_with(loss: PairLoss, seed: u64, trials: usize) -> Result<VerifyReport, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::Config("trials must be at least 1".into()));
    }
    let mut checks = vec![
        check_modularity_expectation(loss, seed, trials),
        check_decomposable_expectation(seed.wrapping_add(1), trials),
        check_normalized_cut(),
        check_soft_minima(loss, seed.wrapping_add(2), trials.min(10)),
        check_barbell_oracle(loss),
    ];
    checks.extend(check_gradients(seed.wrapping_add(3), trials.min(20)));
    Ok(VerifyReport { checks })
}

pub fn run_suite(seed: u64, trials: usize) -> Result<VerifyReport, ExperimentError> {
    run_suite_with(modularity_loss, seed, trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::literal_modularity_loss;

    #[test]
    fn default_suite_passes() {
        let report = run_suite(0, 20).unwrap();
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert!(run_suite(0, 0).is_err());
    }

    #[test]
    fn sign_bug_is_caught() {
        fn flipped(p: ArrayView2<f64>, g: &Graph) -> f64 {
            -modularity_loss(p, g)
        }
        let report = run_suite_with(flipped, 0, 5).unwrap();
        assert!(!report.get("modularity-expectation").unwrap().passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn literal_self_pairs_are_caught() {
        let check = check_modularity_expectation(literal_modularity_loss, 0, 20);
        assert!(!check.passed, "{}", check.detail);
        assert!(!check_soft_minima(literal_modularity_loss, 2, 10).passed);
    }
}
