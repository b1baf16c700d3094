//! Scenario summaries over a balanced populations × samples × strata grid:
//! mean absolute relative bias, coefficient of variation from the
//! within-population variance component, and mean squared error.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Estimates indexed by population `p`, sample `s` and stratum `l`, with
/// the true stratum sizes of each population. Non-finite estimates mark
/// infinite replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateGrid<T> {
    populations: usize,
    samples: usize,
    strata: usize,
    estimates: Vec<T>,
    truths: Vec<T>,
}

impl<T: Scalar> ReplicateGrid<T> {
    /// `estimates` in `(p, s, l)` row-major order, `truths` in `(p, l)` order.
    pub fn new(populations: usize, samples: usize, strata: usize, estimates: Vec<T>, truths: Vec<T>) -> Result<Self> {
        if populations == 0 || samples == 0 || strata == 0 {
            return Err(Error::Metric("grid dimensions must be positive".into()));
        }
        if estimates.len() != populations * samples * strata {
            return Err(Error::Metric(format!(
                "expected {} estimates, got {}",
                populations * samples * strata,
                estimates.len()
            )));
        }
        if truths.len() != populations * strata {
            return Err(Error::Metric(format!("expected {} truths, got {}", populations * strata, truths.len())));
        }
        if truths.iter().any(|t| !(t.is_finite() && *t > T::zero())) {
            return Err(Error::Metric("true stratum sizes must be positive and finite".into()));
        }
        Ok(Self { populations, samples, strata, estimates, truths })
    }

    pub fn populations(&self) -> usize {
        self.populations
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn strata(&self) -> usize {
        self.strata
    }

    pub fn estimate(&self, p: usize, s: usize, l: usize) -> T {
        self.estimates[(p * self.samples + s) * self.strata + l]
    }

    pub fn truth(&self, p: usize, l: usize) -> T {
        self.truths[p * self.strata + l]
    }

    /// Number of flagged (infinite) entries.
    pub fn infinite_count(&self) -> usize {
        self.estimates.iter().filter(|e| !e.is_finite()).count()
    }

    fn finite_errors(&self) -> impl Iterator<Item = (T, T)> + '_ {
        (0..self.populations).flat_map(move |p| {
            (0..self.samples).flat_map(move |s| {
                (0..self.strata).filter_map(move |l| {
                    let e = self.estimate(p, s, l);
                    e.is_finite().then(|| (e - self.truth(p, l), self.truth(p, l)))
                })
            })
        })
    }
}

fn mean_over_finite<T: Scalar>(grid: &ReplicateGrid<T>, f: impl Fn(T, T) -> T) -> Result<T> {
    let (mut sum, mut n) = (T::zero(), 0u64);
    for (err, truth) in grid.finite_errors() {
        sum = sum + f(err, truth);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("every replicate is infinite".into()));
    }
    Ok(sum / T::count(n))
}

/// Mean of `|N̂_l − N_l| / N_l` over finite entries, in percent.
pub fn marb<T: Scalar>(grid: &ReplicateGrid<T>) -> Result<T> {
    Ok(mean_over_finite(grid, |e, t| e.abs() / t)? * T::lit(100.0))
}

/// Mean of `(N̂_l − N_l)²` over finite entries.
pub fn mse<T: Scalar>(grid: &ReplicateGrid<T>) -> Result<T> {
    mean_over_finite(grid, |e, _| e * e)
}

/// Balanced one-way random-effects ANOVA with populations as groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaComponents<T> {
    pub sigma2_between: T,
    pub sigma2_within: T,
    pub ss_between: T,
    pub ss_within: T,
    pub ms_between: T,
    pub ms_within: T,
    pub mean: T,
}

pub fn anova_vca<T: Scalar>(grid: &ReplicateGrid<T>, l: usize) -> Result<AnovaComponents<T>> {
    let (p_n, s_n) = (grid.populations, grid.samples);
    if l >= grid.strata {
        return Err(Error::Metric(format!("stratum {l} out of range")));
    }
    if p_n < 2 || s_n < 2 {
        return Err(Error::Metric("variance components need at least 2 populations and 2 samples".into()));
    }
    if (0..p_n).any(|p| (0..s_n).any(|s| !grid.estimate(p, s, l).is_finite())) {
        return Err(Error::Metric(format!("stratum {l} is unbalanced: infinite replicates present")));
    }
    let s_t = T::count(s_n as u64);
    let group_means: Vec<T> =
        (0..p_n).map(|p| (0..s_n).map(|s| grid.estimate(p, s, l)).sum::<T>() / s_t).collect();
    let mean = group_means.iter().copied().sum::<T>() / T::count(p_n as u64);
    let ss_within: T = (0..p_n)
        .flat_map(|p| (0..s_n).map(move |s| (p, s)))
        .map(|(p, s)| {
            let d = grid.estimate(p, s, l) - group_means[p];
            d * d
        })
        .sum();
    let ss_between = s_t * group_means.iter().map(|m| (*m - mean) * (*m - mean)).sum::<T>();
    let ms_within = ss_within / T::count((p_n * (s_n - 1)) as u64);
    let ms_between = ss_between / T::count((p_n - 1) as u64);
    let sigma2_between = ((ms_between - ms_within) / s_t).max(T::zero());
    Ok(AnovaComponents { sigma2_between, sigma2_within: ms_within, ss_between, ss_within, ms_between, ms_within, mean })
}

/// Within-population coefficient of variation, per stratum then averaged
/// over strata, in percent.
pub fn cv<T: Scalar>(grid: &ReplicateGrid<T>) -> Result<T> {
    let mut total = T::zero();
    for l in 0..grid.strata {
        let a = anova_vca(grid, l)?;
        if !(a.mean > T::zero()) {
            return Err(Error::Metric(format!("stratum {l} has a nonpositive mean estimate")));
        }
        total = total + a.sigma2_within.sqrt() / a.mean;
    }
    Ok(total / T::count(grid.strata as u64) * T::lit(100.0))
}

/// Scenario summary of one method. Metrics that cannot be computed are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary<T> {
    pub marb_percent: T,
    pub cv_percent: T,
    pub mse: T,
    pub infinite_count: usize,
}

impl<T: Scalar> MetricsSummary<T> {
    pub fn from_grid(grid: &ReplicateGrid<T>) -> Self {
        let nan = T::nan();
        Self {
            marb_percent: marb(grid).unwrap_or(nan),
            cv_percent: cv(grid).unwrap_or(nan),
            mse: mse(grid).unwrap_or(nan),
            infinite_count: grid.infinite_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn grid(p: usize, s: usize, r: usize, est: Vec<f64>, truth: f64) -> ReplicateGrid<f64> {
        ReplicateGrid::new(p, s, r, est, vec![truth; p * r]).unwrap()
    }

    #[test]
    fn exact_estimates() {
        let g = grid(2, 2, 1, vec![100.0; 4], 100.0);
        assert_eq!(marb(&g).unwrap(), 0.0);
        assert_eq!(mse(&g).unwrap(), 0.0);
        assert_eq!(cv(&g).unwrap(), 0.0);
        let a = anova_vca(&g, 0).unwrap();
        assert_eq!((a.sigma2_between, a.sigma2_within), (0.0, 0.0));
    }

    #[test]
    fn small_formula_examples() {
        let g = grid(1, 2, 1, vec![90.0, 110.0], 100.0);
        assert!((marb(&g).unwrap() - 10.0).abs() < 1e-12);
        let g = grid(1, 2, 1, vec![102.0, 98.0], 100.0);
        assert!((mse(&g).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infinite_entries_are_excluded_and_counted() {
        let g = grid(2, 2, 1, vec![90.0, f64::INFINITY, 110.0, 100.0], 100.0);
        assert_eq!(g.infinite_count(), 1);
        assert!((marb(&g).unwrap() - 20.0 / 3.0).abs() < 1e-12);
        assert!(cv(&g).is_err());
        let s = MetricsSummary::from_grid(&g);
        assert!(s.cv_percent.is_nan() && s.infinite_count == 1);
        let all = grid(1, 2, 1, vec![f64::INFINITY; 2], 100.0);
        assert!(marb(&all).is_err() && mse(&all).is_err());
    }

    #[test]
    fn between_only_variation() {
        let consts = [90.0, 100.0, 125.0];
        let est: Vec<f64> = consts.iter().flat_map(|c| [*c; 4]).collect();
        let a = anova_vca(&grid(3, 4, 1, est, 100.0), 0).unwrap();
        let m = consts.iter().sum::<f64>() / 3.0;
        let var = consts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 2.0;
        assert_eq!(a.sigma2_within, 0.0);
        assert!((a.sigma2_between - var).abs() < 1e-10);
    }

    #[test]
    fn anova_matches_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est: Vec<f64> = (0..9).map(|_| rng.random_range(50.0..150.0)).collect();
        let a = anova_vca(&grid(3, 3, 1, est.clone(), 100.0), 0).unwrap();
        // direct summation on the 3×3 layout
        let mut gm = [0.0; 3];
        for p in 0..3 {
            for s in 0..3 {
                gm[p] += est[p * 3 + s] / 3.0;
            }
        }
        let grand: f64 = est.iter().sum::<f64>() / 9.0;
        let mut ssw = 0.0;
        let mut ssb = 0.0;
        for p in 0..3 {
            ssb += 3.0 * (gm[p] - grand).powi(2);
            for s in 0..3 {
                ssw += (est[p * 3 + s] - gm[p]).powi(2);
            }
        }
        let msw = ssw / 6.0;
        let msb = ssb / 2.0;
        assert!((a.sigma2_within - msw).abs() < 1e-10);
        assert!((a.sigma2_between - ((msb - msw) / 3.0).max(0.0)).abs() < 1e-10);
        let sst: f64 = est.iter().map(|e| (e - grand).powi(2)).sum();
        assert!(((a.ss_within + a.ss_between) / 8.0 - sst / 8.0).abs() < 1e-10);
    }

    #[test]
    fn injected_within_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let est: Vec<f64> = (0..900).map(|_| 100.0 + noise.sample(&mut rng)).collect();
        let c = cv(&grid(30, 30, 1, est, 100.0)).unwrap();
        assert!((c - 5.0).abs() < 0.5, "cv {c}");
    }

    #[test]
    fn unbalanced_or_small_grids_are_rejected() {
        assert!(anova_vca(&grid(1, 3, 1, vec![1.0; 3], 1.0), 0).is_err());
        assert!(ReplicateGrid::new(2, 2, 1, vec![1.0; 3], vec![1.0; 2]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_nonnegative_and_scale_free(est in proptest::collection::vec(1.0f64..1000.0, 12), k in 0usize..4) {
            let g = grid(3, 2, 2, est.clone(), 300.0);
            let m = mse(&g).unwrap();
            prop_assert!(marb(&g).unwrap() >= 0.0 && cv(&g).unwrap() >= 0.0 && m >= 0.0);
            let mean_err = est.iter().map(|e| e - 300.0).sum::<f64>() / 12.0;
            prop_assert!(m + 1e-9 >= mean_err * mean_err);
            for l in 0..2 {
                prop_assert!(anova_vca(&g, l).unwrap().sigma2_between >= 0.0);
            }
            let scaled = grid(3, 2, 2, est.iter().map(|e| e * 10.0).collect(), 3000.0);
            prop_assert!((cv(&scaled).unwrap() - cv(&g).unwrap()).abs() < 1e-10);
            prop_assert!((marb(&scaled).unwrap() - marb(&g).unwrap()).abs() < 1e-10);

            // swap two samples inside population k % 3
            let p = k % 3;
            let mut swapped = est.clone();
            for l in 0..2 {
                swapped.swap((p * 2) * 2 + l, (p * 2 + 1) * 2 + l);
            }
            let h = grid(3, 2, 2, swapped, 300.0);
            prop_assert!((marb(&h).unwrap() - marb(&g).unwrap()).abs() < 1e-10);
            prop_assert!((cv(&h).unwrap() - cv(&g).unwrap()).abs() < 1e-10);
            prop_assert!((mse(&h).unwrap() - mse(&g).unwrap()).abs() < 1e-8);
        }
    }
}
