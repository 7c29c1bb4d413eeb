use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// How well learned edge weights separate real edges from injected ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub prauc: f64,
    pub hits_at_frac: f64,
    /// Fraction of real edges, the expected score of a random ranking.
    pub baseline: f64,
}

/// Number of edges in the top `frac` share, rounded up.
pub fn hits_cutoff(n_edges: usize, frac: f64) -> usize {
    // the small slack keeps e.g. 0.1 * 70 at 7 rather than 8
    ((frac * n_edges as f64 - 1e-9).ceil() as usize).clamp(1, n_edges)
}

/// Ranks edges by descending weight and scores real edges as positives.
///
/// Edges with equal weight form one group: the PR curve gets a single point
/// per distinct weight, and a group straddling the HITS cutoff contributes
/// its expected share of real edges. This keeps both scores independent of
/// edge order, which matters once sigmoid outputs saturate. PRAUC integrates
/// the curve with the trapezoid rule, taking precision at recall zero from
/// the first point.
pub fn ranking_metrics(weights: &[f64], real_mask: &[bool], frac: f64) -> Result<RankingMetrics, EvalError> {
    if weights.len() != real_mask.len() {
        return Err(EvalError::LengthMismatch {
            left: weights.len(),
            right: real_mask.len(),
        });
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(EvalError::InvalidFraction(frac));
    }
    let n = weights.len();
    if n == 0 {
        return Err(EvalError::Empty);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    // (size, real count) of each run of equal weights, best first
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (rank, &e) in order.iter().enumerate() {
        let tied = rank > 0 && weights[order[rank - 1]].total_cmp(&weights[e]).is_eq();
        if !tied {
            groups.push((0, 0));
        }
        let g = groups.last_mut().expect("group pushed");
        g.0 += 1;
        g.1 += usize::from(real_mask[e]);
    }
    let positives = real_mask.iter().filter(|&&r| r).count();
    let baseline = positives as f64 / n as f64;

    let cutoff = hits_cutoff(n, frac);
    let (mut taken, mut hits) = (0usize, 0.0);
    for &(size, real) in &groups {
        let slots = size.min(cutoff - taken);
        hits += real as f64 * slots as f64 / size as f64;
        taken += slots;
        if taken == cutoff {
            break;
        }
    }
    let hits = hits / cutoff as f64;
    if positives == 0 {
        return Ok(RankingMetrics {
            prauc: 0.0,
            hits_at_frac: hits,
            baseline,
        });
    }

    let (mut seen, mut tp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &(size, real) in &groups {
        seen += size;
        tp += real;
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        let (r0, p0) = prev.unwrap_or((0.0, precision));
        area += (recall - r0) * (precision + p0) / 2.0;
        prev = Some((recall, precision));
    }
    Ok(RankingMetrics {
        prauc: area,
        hits_at_frac: hits,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_ranking() {
        let weights = [0.9, 0.1, 0.8, 0.2, 0.7];
        let mask = [true, false, true, false, true];
        let m = ranking_metrics(&weights, &mask, 0.4).unwrap();
        assert_eq!(m.prauc, 1.0);
        assert_eq!(m.hits_at_frac, 1.0);
        assert_eq!(m.baseline, 0.6);
    }

    #[test]
    fn whole_population_hits_equal_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let weights: Vec<f64> = (0..40).map(|_| rng.random()).collect();
        let mask: Vec<bool> = (0..40).map(|i| i % 3 != 0).collect();
        let m = ranking_metrics(&weights, &mask, 1.0).unwrap();
        assert_eq!(m.hits_at_frac, m.baseline);
    }

    #[test]
    fn random_weights_score_the_baseline() {
        // 1000 real edges plus 30% injected ones
        let (real, noise) = (1000, 300);
        let mask: Vec<bool> = (0..real + noise).map(|i| i < real).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trials = 50;
        let mean: f64 = (0..trials)
            .map(|_| {
                let w: Vec<f64> = mask.iter().map(|_| rng.random()).collect();
                ranking_metrics(&w, &mask, 0.1).unwrap().prauc
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 0.769).abs() < 0.01, "{mean}");
    }

    #[test]
    fn ties_ignore_edge_order() {
        let m = ranking_metrics(&[1.0, 1.0, 1.0, 1.0], &[false, true, true, true], 0.25).unwrap();
        assert_eq!(m.hits_at_frac, 0.75);
        assert_eq!(m.prauc, 0.75);
        let m = ranking_metrics(&[1.0, 1.0, 1.0, 1.0], &[true, false, false, false], 0.25).unwrap();
        assert_eq!(m.hits_at_frac, 0.25);
        // one clear winner, then a tie straddling the cutoff of 2
        let m = ranking_metrics(&[0.9, 0.5, 0.5, 0.5, 0.1], &[true, true, false, false, true], 0.4).unwrap();
        assert!((m.hits_at_frac - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn scores_ignore_edge_order(
            cells in proptest::collection::vec((0u8..4, proptest::bool::ANY), 1..40),
            frac in 0.05f64..1.0,
            shift in 0usize..40,
        ) {
            let weights: Vec<f64> = cells.iter().map(|c| c.0 as f64).collect();
            let mask: Vec<bool> = cells.iter().map(|c| c.1).collect();
            let a = ranking_metrics(&weights, &mask, frac).unwrap();
            let k = shift % cells.len();
            let (mut w2, mut m2) = (weights.clone(), mask.clone());
            w2.rotate_left(k);
            m2.rotate_left(k);
            w2.reverse();
            m2.reverse();
            let b = ranking_metrics(&w2, &m2, frac).unwrap();
            proptest::prop_assert!((a.prauc - b.prauc).abs() < 1e-12);
            proptest::prop_assert!((a.hits_at_frac - b.hits_at_frac).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&a.prauc));
        }
    }

    #[test]
    fn cutoff_rounds_up() {
        assert_eq!(hits_cutoff(70, 0.1), 7);
        assert_eq!(hits_cutoff(71, 0.1), 8);
        assert_eq!(hits_cutoff(3, 0.1), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(ranking_metrics(&[1.0], &[true, false], 0.1), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(ranking_metrics(&[1.0], &[true], 0.0), Err(EvalError::InvalidFraction(_))));
        assert!(matches!(ranking_metrics(&[], &[], 0.5), Err(EvalError::Empty)));
    }
}
