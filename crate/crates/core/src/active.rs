//! Bayesian active learning: iteratively pick which unobserved point of a
//! curve to acquire next, scoring every pool candidate by the variation
//! ratio of the model's predictive at its x. Acquisition is deterministic —
//! there is no randomness anywhere in the loop.

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::eval::Predictive;
use crate::pfn::{dist_log_prob, dist_max_prob, predict_ppd, BinnedDistribution, PfnModel};

/// Number of initial observations (the smallest-x points of the curve).
pub const INITIAL_OBSERVATIONS: usize = 4;

/// 1 − (modal bin mass): 0 for a point mass, 1 − 1/K for a uniform
/// distribution over K bins.
pub fn variation_ratio(d: &BinnedDistribution) -> f64 {
    1.0 - dist_max_prob(d)
}

/// Position of the highest-variation-ratio distribution; ties go to the
/// first (smallest-x, when the slice follows pool order).
pub fn argmax_variation_ratio(dists: &[BinnedDistribution]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in dists.iter().enumerate() {
        let vr = variation_ratio(d);
        if best.is_none_or(|(_, b)| vr > b) {
            best = Some((i, vr));
        }
    }
    best.map(|(i, _)| i)
}

/// Collapses a continuous predictive onto the given bin edges, folding the
/// tail mass outside the support into the edge bins, so its variation ratio
/// is comparable to a transformer head's.
pub fn bin_predictive(pred: &Predictive, edges: &[f64]) -> Result<BinnedDistribution> {
    if edges.len() < 2 {
        return Err(Error::invalid("need at least 2 bin edges"));
    }
    let nbins = edges.len() - 1;
    let mut probs = Vec::with_capacity(nbins);
    for i in 0..nbins {
        probs.push(pred.cdf(edges[i + 1]) - pred.cdf(edges[i]));
    }
    probs[0] += pred.cdf(edges[0]);
    probs[nbins - 1] += 1.0 - pred.cdf(edges[nbins]);
    // Fold any numerical negatives from CDF rounding back to zero mass.
    let mut clipped: Vec<f64> = probs.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::numeric("predictive carries no mass over the bins"));
    }
    for p in &mut clipped {
        *p /= total;
    }
    BinnedDistribution::new(edges.to_vec(), clipped)
}

/// Observation bookkeeping for one curve: which indices have been revealed,
/// which remain in the acquisition pool, and the mean pool log-likelihood
/// after each acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct BALState {
    /// Observed curve indices, kept sorted (curve xs are ascending, so
    /// sorted indices are sorted by x).
    pub observed: Vec<usize>,
    /// Unobserved curve indices, ascending.
    pub pool: Vec<usize>,
    /// Curve indices in acquisition order.
    pub acquired: Vec<usize>,
    /// Mean log-likelihood over the remaining pool after each acquisition,
    /// in the model's normalized y-space; NaN once the pool is empty.
    pub trajectory: Vec<f64>,
}

impl BALState {
    /// Starts with the `INITIAL_OBSERVATIONS` smallest-x points observed.
    pub fn new(curve: &Curve) -> Result<Self> {
        if curve.len() < INITIAL_OBSERVATIONS + 1 {
            return Err(Error::invalid(format!(
                "active learning needs at least {} points, got {}",
                INITIAL_OBSERVATIONS + 1,
                curve.len()
            )));
        }
        Ok(BALState {
            observed: (0..INITIAL_OBSERVATIONS).collect(),
            pool: (INITIAL_OBSERVATIONS..curve.len()).collect(),
            acquired: Vec::new(),
            trajectory: Vec::new(),
        })
    }

    /// Moves a pool index into the observed set.
    pub fn reveal(&mut self, index: usize) -> Result<()> {
        let pos = self
            .pool
            .iter()
            .position(|&i| i == index)
            .ok_or_else(|| Error::invalid(format!("index {index} is not in the pool")))?;
        self.pool.remove(pos);
        let at = self.observed.partition_point(|&i| i < index);
        self.observed.insert(at, index);
        self.acquired.push(index);
        Ok(())
    }

    /// The observed points as a context curve.
    pub fn observed_curve(&self, curve: &Curve) -> Result<Curve> {
        Curve::piece(
            curve.name.clone(),
            self.observed.iter().map(|&i| curve.xs[i]).collect(),
            self.observed.iter().map(|&i| curve.ys[i]).collect(),
        )
    }

    fn pool_xs(&self, curve: &Curve) -> Vec<f64> {
        self.pool.iter().map(|&i| curve.xs[i]).collect()
    }

    /// Mean log-likelihood of the pool's true ys under the model's
    /// predictive, conditioned on the observed set; NaN for an empty pool.
    pub fn pool_mean_ll(&self, model: &PfnModel, curve: &Curve) -> Result<f64> {
        if self.pool.is_empty() {
            return Ok(f64::NAN);
        }
        let context = self.observed_curve(curve)?;
        let (dists, record) = predict_ppd(model, &context, &self.pool_xs(curve))?;
        let total: f64 = dists
            .iter()
            .zip(&self.pool)
            .map(|(d, &i)| dist_log_prob(d, curve.ys[i] / record.y_scale))
            .sum();
        Ok(total / self.pool.len() as f64)
    }
}

/// The pool index (into the curve) with the highest predictive variation
/// ratio, conditioned on the observed set. One forward pass covers every
/// candidate; ties break to the smallest x.
pub fn select_next(model: &PfnModel, state: &BALState, curve: &Curve) -> Result<usize> {
    if state.pool.is_empty() {
        return Err(Error::invalid("acquisition pool is empty"));
    }
    let context = state.observed_curve(curve)?;
    let (dists, _) = predict_ppd(model, &context, &state.pool_xs(curve))?;
    let pos = argmax_variation_ratio(&dists).expect("pool is nonempty");
    Ok(state.pool[pos])
}

/// Runs select → reveal → rescore for `steps` acquisitions (truncated with a
/// warning if the pool is smaller) and returns the final state with its
/// log-likelihood trajectory. Needs a model trained on interleaved context
/// (the interpolation variant), since acquired points sit between pool
/// points rather than before them.
pub fn run_bal(model: &PfnModel, curve: &Curve, steps: usize) -> Result<BALState> {
    if !model.config.interpolation_variant {
        return Err(Error::invalid(
            "active learning needs a model trained with interleaved context",
        ));
    }
    let mut state = BALState::new(curve)?;
    let total = if steps > state.pool.len() {
        eprintln!(
            "warning: {} acquisition steps requested but the pool has {} points; truncating",
            steps,
            state.pool.len()
        );
        state.pool.len()
    } else {
        steps
    };
    for _ in 0..total {
        let index = select_next(model, &state, curve)?;
        state.reveal(index)?;
        let ll = state.pool_mean_ll(model, curve)?;
        state.trajectory.push(ll);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pfn::{init_model, ModelConfig};
    use crate::special::normal_cdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binned(probs: Vec<f64>) -> BinnedDistribution {
        let n = probs.len();
        let edges = (0..=n).map(|i| i as f64 / n as f64).collect();
        BinnedDistribution::new(edges, probs).unwrap()
    }

    fn tiny_model(interpolation: bool, seed: u64) -> PfnModel {
        let config = ModelConfig {
            nlayers: 1,
            nheads: 2,
            nhidden: 16,
            nbins: 10,
            interpolation_variant: interpolation,
            ..ModelConfig::default()
        };
        let edges: Vec<f64> = (0..=10).map(|i| 1.5 * i as f64 / 10.0).collect();
        init_model(&config, edges, "active-test".into(), seed).unwrap()
    }

    fn noisy_curve(name: &str, n: usize, seed: u64) -> Curve {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n)
            .map(|i| 0.01 * (1.0 / 0.01f64).powf(i as f64 / (n - 1) as f64))
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| (0.8 * x.powf(-0.2) * (1.0 + 0.05 * r.random_range(-1.0..1.0))).min(3.0))
            .collect();
        Curve::new(name, xs, ys).unwrap()
    }

    #[test]
    fn variation_ratio_closed_forms() {
        assert_eq!(variation_ratio(&binned(vec![1.0, 0.0, 0.0])), 0.0);
        assert!((variation_ratio(&binned(vec![0.25; 4])) - 0.75).abs() < 1e-15);
        assert!((variation_ratio(&binned(vec![0.7, 0.3])) - 0.3).abs() < 1e-15);
        // Exact ties go to the first (smallest-x) candidate.
        let tied = vec![binned(vec![0.25; 4]), binned(vec![0.25; 4]), binned(vec![1.0, 0.0])];
        assert_eq!(argmax_variation_ratio(&tied), Some(0));
        assert_eq!(argmax_variation_ratio(&[]), None);
    }

    #[test]
    fn variation_ratio_stays_in_range() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let k = r.random_range(2..30);
            let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let d = binned(raw.iter().map(|&p| p / total).collect());
            let vr = variation_ratio(&d);
            assert!(vr >= 0.0 && vr <= 1.0 - 1.0 / k as f64 + 1e-12, "vr = {vr}");
        }
    }

    #[test]
    fn state_bookkeeping() {
        let curve = noisy_curve("ten", 10, 0);
        let mut state = BALState::new(&curve).unwrap();
        assert_eq!(state.observed, vec![0, 1, 2, 3]);
        assert_eq!(state.pool, (4..10).collect::<Vec<_>>());

        state.reveal(7).unwrap();
        assert_eq!(state.observed, vec![0, 1, 2, 3, 7]);
        assert_eq!(state.pool, vec![4, 5, 6, 8, 9]);
        assert_eq!(state.acquired, vec![7]);
        // Revealed and out-of-pool indices are rejected.
        assert!(state.reveal(7).is_err());
        assert!(state.reveal(2).is_err());
        assert!(state.reveal(99).is_err());

        // Observed and pool always partition the index set.
        let mut all: Vec<usize> = state.observed.iter().chain(&state.pool).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let four = noisy_curve("four", 4, 1);
        assert!(BALState::new(&four).is_err());
    }

    #[test]
    fn selection_matches_an_exhaustive_scan() {
        let model = tiny_model(true, 11);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for c in 0..20 {
            let curve = noisy_curve(&format!("c{c}"), r.random_range(8..16), 100 + c);
            let mut state = BALState::new(&curve).unwrap();
            // Randomize the observed set a little before checking.
            for _ in 0..r.random_range(0..3) {
                let pick = state.pool[r.random_range(0..state.pool.len())];
                state.reveal(pick).unwrap();
            }
            let chosen = select_next(&model, &state, &curve).unwrap();

            // Oracle: brute-force scan, one call per candidate with that
            // candidate rotated to the front of the query list. The query
            // set (and so the x-normalization) is unchanged and query rows
            // are conditionally independent, so each front row must equal
            // the batched row. First-wins on ties = smallest x.
            let context = state.observed_curve(&curve).unwrap();
            let mut best: Option<(usize, f64)> = None;
            for (p, &i) in state.pool.iter().enumerate() {
                let mut queries = state.pool_xs(&curve);
                queries.rotate_left(p);
                let (dists, _) = predict_ppd(&model, &context, &queries).unwrap();
                let vr = variation_ratio(&dists[0]);
                if best.is_none_or(|(_, b)| vr > b) {
                    best = Some((i, vr));
                }
            }
            assert_eq!(chosen, best.unwrap().0, "curve {c}");
        }
    }

    #[test]
    fn pool_of_one_returns_that_index() {
        let model = tiny_model(true, 11);
        let curve = noisy_curve("five", 5, 2);
        let state = BALState::new(&curve).unwrap();
        assert_eq!(state.pool, vec![4]);
        assert_eq!(select_next(&model, &state, &curve).unwrap(), 4);

        let mut drained = state;
        drained.reveal(4).unwrap();
        assert!(select_next(&model, &drained, &curve).is_err());
    }

    #[test]
    fn acquisition_runs_to_exhaustion_and_is_deterministic() {
        let model = tiny_model(true, 11);
        let curve = noisy_curve("twelve", 12, 3);
        // More steps than pool points: truncated, trajectory spans the pool.
        let state = run_bal(&model, &curve, 20).unwrap();
        assert_eq!(state.trajectory.len(), 8);
        assert_eq!(state.acquired.len(), 8);
        assert!(state.pool.is_empty());
        assert_eq!(state.observed, (0..12).collect::<Vec<_>>());
        assert!(state.trajectory[7].is_nan(), "empty pool has no mean LL");
        assert!(state.trajectory[..7].iter().all(|ll| ll.is_finite()));

        let partial = run_bal(&model, &curve, 3).unwrap();
        assert_eq!(partial.trajectory.len(), 3);
        assert_eq!(partial.acquired, state.acquired[..3]);
        let again = run_bal(&model, &curve, 3).unwrap();
        assert_eq!(partial, again);
    }

    #[test]
    fn plain_context_models_are_rejected() {
        let model = tiny_model(false, 11);
        let curve = noisy_curve("twelve", 12, 3);
        let err = run_bal(&model, &curve, 2).unwrap_err();
        assert!(err.is_validation());
    }

    #[test]
    fn binning_a_gaussian_keeps_its_modal_mass() {
        let edges: Vec<f64> = (0..=15).map(|i| 1.5 * i as f64 / 15.0).collect();
        let narrow = Predictive::Gaussian { mean: 0.75, std: 0.1 };
        let d = bin_predictive(&narrow, &edges).unwrap();
        // Modal bin [0.7, 0.8] holds Phi(0.5) - Phi(-0.5) of the mass.
        let expect = normal_cdf(0.5) - normal_cdf(-0.5);
        assert!((dist_max_prob(&d) - expect).abs() < 1e-12);
        assert!((variation_ratio(&d) - (1.0 - expect)).abs() < 1e-12);

        // Out-of-support mass folds into the edge bin: a far-left Gaussian
        // becomes (numerically) a point mass at the first bin.
        let far = Predictive::Gaussian { mean: -5.0, std: 0.1 };
        let df = bin_predictive(&far, &edges).unwrap();
        assert!(variation_ratio(&df) < 1e-9);

        // A wider Gaussian (still mostly in support) spreads out and scores
        // a higher ratio than the narrow one.
        let wide = Predictive::Gaussian { mean: 0.75, std: 0.5 };
        let dw = bin_predictive(&wide, &edges).unwrap();
        assert!(variation_ratio(&dw) > variation_ratio(&d));
        let total: f64 = dw.probs.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        assert!(bin_predictive(&narrow, &[0.0]).is_err());
    }
}
