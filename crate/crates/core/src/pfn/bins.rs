//! Output discretization: equal-mass bin edges fitted to the prior's
//! normalized y distribution, and the piecewise-uniform predictive
//! distribution those bins induce.

use crate::error::{Error, Result};
use crate::prior::{PriorConfig, PriorSampler};

/// A piecewise-uniform distribution over `edges.len() - 1` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDistribution {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

impl BinnedDistribution {
    pub fn new(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if edges.len() != probs.len() + 1 || probs.is_empty() {
            return Err(Error::invalid(format!(
                "{} edges against {} bin masses",
                edges.len(),
                probs.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("bin edges must be strictly increasing"));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("bin masses must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("bin masses sum to {total}, not 1")));
        }
        Ok(BinnedDistribution { edges, probs })
    }

    pub fn nbins(&self) -> usize {
        self.probs.len()
    }
}

/// Quantile by linear interpolation of the CDF inside the crossing bin.
pub fn dist_quantile(d: &BinnedDistribution, q: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0);
    let mut cum = 0.0;
    for (i, &p) in d.probs.iter().enumerate() {
        if cum + p >= q && p > 0.0 {
            return d.edges[i] + (q - cum) / p * (d.edges[i + 1] - d.edges[i]);
        }
        cum += p;
    }
    // Numerical shortfall: all mass consumed before reaching q.
    d.edges[d.nbins()]
}

pub fn dist_median(d: &BinnedDistribution) -> f64 {
    dist_quantile(d, 0.5)
}

/// Index of the bin containing y, with out-of-support values clamped into
/// the edge bins.
pub fn bin_index(edges: &[f64], y: f64) -> usize {
    let nbins = edges.len() - 1;
    let y = y.clamp(edges[0], edges[nbins]);
    edges.partition_point(|&e| e <= y).clamp(1, nbins) - 1
}

/// Log density at y, which is clamped into the support; a zero-mass bin
/// gives -inf.
pub fn dist_log_prob(d: &BinnedDistribution, y: f64) -> f64 {
    let i = bin_index(&d.edges, y);
    (d.probs[i] / (d.edges[i + 1] - d.edges[i])).ln()
}

/// Largest single-bin mass (the modal bin's probability).
pub fn dist_max_prob(d: &BinnedDistribution) -> f64 {
    d.probs.iter().cloned().fold(0.0, f64::max)
}

/// Edges at the empirical quantiles {k/nbins} of a construction sample,
/// with the outermost edges widened to the support. Interior edges are
/// clamped into the support and nudged apart if equal.
pub fn edges_from_samples(samples: &[f64], nbins: usize, y_support: [f64; 2]) -> Result<Vec<f64>> {
    if nbins < 2 {
        return Err(Error::invalid(format!("{nbins} bins; at least 2 required")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("empty construction sample"));
    }
    let mut vals: Vec<f64> = samples.to_vec();
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if !(vals[n - 1] > vals[0]) {
        return Err(Error::numeric(
            "degenerate construction sample: all values equal",
        ));
    }
    let [lo, hi] = y_support;
    let mut edges = Vec::with_capacity(nbins + 1);
    edges.push(lo);
    for k in 1..nbins {
        let pos = k as f64 / nbins as f64 * (n - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let v = if i + 1 < n {
            vals[i] + frac * (vals[i + 1] - vals[i])
        } else {
            vals[i]
        };
        edges.push(v.clamp(lo, hi));
    }
    edges.push(hi);
    // Nudge any ties apart, keeping everything inside the support.
    for i in 1..nbins {
        if edges[i] <= edges[i - 1] {
            edges[i] = edges[i - 1] + (hi - lo) * 1e-12;
        }
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::numeric(
            "bin edges collapsed; construction sample too concentrated",
        ));
    }
    Ok(edges)
}

/// Draws curves from the prior, normalizes them the same way training does,
/// and fits equal-mass edges to the pooled y values.
pub fn build_bins(
    prior: &PriorConfig,
    n_draws: usize,
    nbins: usize,
    y_support: [f64; 2],
) -> Result<Vec<f64>> {
    if n_draws < 100 * nbins {
        return Err(Error::invalid(format!(
            "{n_draws} draws for {nbins} bins; at least {} required",
            100 * nbins
        )));
    }
    // Independent stream: offset so bin construction does not replay the
    // exact curves the training loop will start with.
    let mut cfg = prior.clone();
    cfg.rng_seed = prior.rng_seed.wrapping_add(1_000_003);
    let mut sampler = PriorSampler::new(cfg)?;
    let mut vals = Vec::with_capacity(n_draws);
    while vals.len() < n_draws {
        let sample = sampler.sample()?;
        let cutoff = sample.spec.cutoff_index;
        let (norm, _) = crate::curve::normalize(&sample.curve, cutoff)?;
        vals.extend(norm.ys);
    }
    vals.truncate(n_draws);
    edges_from_samples(&vals, nbins, y_support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_dist(nbins: usize) -> BinnedDistribution {
        let edges = (0..=nbins).map(|i| i as f64 / nbins as f64).collect();
        BinnedDistribution::new(edges, vec![1.0 / nbins as f64; nbins]).unwrap()
    }

    #[test]
    fn validation_rejects_malformed_distributions() {
        assert!(BinnedDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(BinnedDistribution::new(vec![0.0, 0.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(BinnedDistribution::new(vec![0.0, 0.5, 1.0], vec![0.7, 0.7]).is_err());
        assert!(BinnedDistribution::new(vec![0.0, 0.5, 1.0], vec![-0.1, 1.1]).is_err());
        assert!(BinnedDistribution::new(vec![0.0, 0.5, 1.0], vec![0.4, 0.6]).is_ok());
    }

    #[test]
    fn uniform_distribution_summaries() {
        let d = uniform_dist(10);
        assert!((dist_median(&d) - 0.5).abs() < 1e-12);
        for y in [0.0, 0.05, 0.33, 0.78, 1.0] {
            assert!(dist_log_prob(&d, y).abs() < 1e-12, "density 1 at {y}");
        }
        assert!((dist_max_prob(&d) - 0.1).abs() < 1e-15);
        // Out-of-support y clamps to the edge bins.
        assert!(dist_log_prob(&d, 2.0).abs() < 1e-12);
    }

    #[test]
    fn point_mass_bin_summaries() {
        let edges = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        let mut probs = vec![0.0; 4];
        probs[2] = 1.0;
        let d = BinnedDistribution::new(edges, probs).unwrap();
        assert!((dist_median(&d) - 0.625).abs() < 1e-12, "midpoint of the loaded bin");
        assert!((dist_max_prob(&d) - 1.0).abs() < 1e-15);
        assert_eq!(dist_log_prob(&d, 0.1), f64::NEG_INFINITY);
    }

    #[test]
    fn quantiles_are_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nbins = 37;
        let raw: Vec<f64> = (0..nbins).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let edges = (0..=nbins).map(|i| 1.5 * i as f64 / nbins as f64).collect();
        let d = BinnedDistribution::new(edges, probs).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for j in 1..100 {
            let q = dist_quantile(&d, j as f64 / 100.0);
            assert!(q >= prev, "quantile dipped at {j}");
            prev = q;
        }
    }

    #[test]
    fn log_prob_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nbins = 25;
        let raw: Vec<f64> = (0..nbins).map(|_| rng.random::<f64>() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let mut edges = vec![0.0];
        for i in 0..nbins {
            edges.push(edges[i] + rng.random::<f64>() * 0.1 + 0.01);
        }
        let d = BinnedDistribution::new(edges, probs).unwrap();
        let integral: f64 = (0..nbins)
            .map(|i| {
                let mid = 0.5 * (d.edges[i] + d.edges[i + 1]);
                dist_log_prob(&d, mid).exp() * (d.edges[i + 1] - d.edges[i])
            })
            .sum();
        assert!((integral - 1.0).abs() < 1e-9, "integral {integral}");
    }

    #[test]
    fn uniform_sample_recovers_uniform_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let nbins = 20;
        let edges = edges_from_samples(&vals, nbins, [0.0, 1.5]).unwrap();
        assert_eq!(edges[0], 0.0);
        assert_eq!(edges[nbins], 1.5);
        for k in 1..nbins {
            let want = k as f64 / nbins as f64;
            assert!(
                (edges[k] - want).abs() < 0.01,
                "edge {k}: {} vs uniform quantile {want}",
                edges[k]
            );
        }
    }

    #[test]
    fn each_bin_holds_an_equal_share_of_the_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Mildly skewed sample so the check is not trivially symmetric.
        let vals: Vec<f64> = (0..50_000).map(|_| rng.random::<f64>().powi(2) * 1.4).collect();
        let nbins = 10;
        let edges = edges_from_samples(&vals, nbins, [0.0, 1.5]).unwrap();
        let per = vals.len() as f64 / nbins as f64;
        let slack = 3.0 * per.sqrt();
        for i in 0..nbins {
            let count = vals
                .iter()
                .filter(|&&v| v >= edges[i] && (v < edges[i + 1] || i == nbins - 1))
                .count() as f64;
            assert!(
                (count - per).abs() <= slack,
                "bin {i} holds {count}, expected {per} +- {slack}"
            );
        }
    }

    #[test]
    fn degenerate_sample_is_an_error() {
        let vals = vec![0.25; 5_000];
        assert!(edges_from_samples(&vals, 10, [0.0, 1.5]).is_err());
    }

    #[test]
    fn prior_bins_cover_support_and_need_enough_draws() {
        let prior = PriorConfig::default();
        assert!(build_bins(&prior, 100, 10, [0.0, 1.5]).unwrap_err().is_validation());
        let edges = build_bins(&prior, 1_000, 10, [0.0, 1.5]).unwrap();
        assert_eq!(edges.len(), 11);
        assert_eq!(edges[0], 0.0);
        assert_eq!(edges[10], 1.5);
        assert!(edges.windows(2).all(|w| w[1] > w[0]));
        // Most normalized y mass sits inside [0, 1.2], so the interior edges
        // should all land well below the top of the support.
        assert!(edges[9] < 1.3, "ninth edge {}", edges[9]);
    }
}
