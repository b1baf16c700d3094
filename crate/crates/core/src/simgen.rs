//! Synthetic populations and samples: homogeneous base populations,
//! random-effect perturbation on the corner-point loglinear scale, integer
//! region sizes by stochastic rounding with multinomial correction, and
//! per-region multinomial sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution as _, LogNormal, Normal, Pareto, Poisson};
use rayon::prelude::*;

use crate::error::{spec_err, Error, Result};
use crate::glmm_fit::fit_mixed;
use crate::table_model::{DualStratumCounts, ModelSpec, RandomTerm, StratifiedTable};

/// Arbitrary population scale of the base population.
pub const DEFAULT_SCALE: f64 = 10_000.0;
/// Variances of the random intercept and the two list slopes used across
/// the scenario study.
pub const STUDY_VARIANCES: [f64; 3] = [0.0143, 0.0253, 0.0232];
/// Redraw cap of the multinomial removal step of [`integerize`].
pub const INTEGERIZE_REDRAW_CAP: usize = 1_000;

// ---------------------------------------------------------------------------
// seeded streams

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream keyed by `(base_seed, scenario, population, sample)`.
pub fn stream_seed(base_seed: u64, scenario: u64, population: u64, sample: u64) -> [u8; 32] {
    let mut h = splitmix64(base_seed);
    let mut out = [0u8; 32];
    for (i, part) in [scenario, population, sample].into_iter().enumerate() {
        h = splitmix64(h ^ splitmix64(part.wrapping_add(i as u64 + 1)));
        out[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    out[24..].copy_from_slice(&splitmix64(h).to_le_bytes());
    out
}

/// Independent counter-based generator for one stream key.
pub fn stream_rng(base_seed: u64, scenario: u64, population: u64, sample: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(base_seed, scenario, population, sample))
}

// ---------------------------------------------------------------------------
// populations

/// One region of a synthetic population. `probs` are the cell
/// probabilities `(π11, π10, π01, π00)` conditional on the region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionTruth {
    pub size: f64,
    pub probs: [f64; 4],
}

impl RegionTruth {
    /// Region with independent list inclusion.
    pub fn independent(size: f64, pi_a: f64, pi_b: f64) -> Self {
        Self {
            size,
            probs: [pi_a * pi_b, pi_a * (1.0 - pi_b), (1.0 - pi_a) * pi_b, (1.0 - pi_a) * (1.0 - pi_b)],
        }
    }

    pub fn pi_a(&self) -> f64 {
        self.probs[0] + self.probs[1]
    }

    pub fn pi_b(&self) -> f64 {
        self.probs[0] + self.probs[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTruth {
    pub regions: Vec<RegionTruth>,
}

impl PopulationTruth {
    pub fn total(&self) -> f64 {
        self.regions.iter().map(|r| r.size).sum()
    }

    /// Cell probabilities over the whole `regions × 2 × 2` table.
    pub fn unconditional(&self) -> Vec<[f64; 4]> {
        let total = self.total();
        self.regions.iter().map(|r| r.probs.map(|p| p * r.size / total)).collect()
    }

    /// Region sizes rescaled to a population of `n`.
    pub fn sizes_for(&self, n: f64) -> Vec<f64> {
        let total = self.total();
        self.regions.iter().map(|r| n * r.size / total).collect()
    }
}

pub fn base_population(regions: usize, pi_a: f64, pi_b: f64, scale: f64) -> Result<PopulationTruth> {
    if regions == 0 {
        return spec_err("a population needs at least one region");
    }
    if !(pi_a > 0.0 && pi_a < 1.0 && pi_b > 0.0 && pi_b < 1.0) {
        return spec_err(format!("inclusion probabilities must lie in (0, 1), got ({pi_a}, {pi_b})"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return spec_err("population scale must be positive");
    }
    let size = scale / regions as f64;
    Ok(PopulationTruth { regions: vec![RegionTruth::independent(size, pi_a, pi_b); regions] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Distribution {
    Normal,
    Lognormal,
    Pareto,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Normal => "normal",
            Distribution::Lognormal => "lognormal",
            Distribution::Pareto => "pareto",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Some(Self::Normal),
            "lognormal" => Some(Self::Lognormal),
            "pareto" => Some(Self::Pareto),
            _ => None,
        }
    }
}

/// Distribution and variances of the perturbations added to the region
/// intercept and the two list slopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub distribution: Distribution,
    pub variances: [f64; 3],
}

impl PerturbationSpec {
    pub fn new(distribution: Distribution, variances: [f64; 3]) -> Result<Self> {
        if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return spec_err("perturbation variances must be finite and nonnegative");
        }
        Ok(Self { distribution, variances })
    }
}

/// Lognormal `(μ_L, σ²_L)` with mean 1 and variance `sigma2`.
pub fn moment_match_lognormal(sigma2: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) {
        return spec_err("moment matching needs a positive variance");
    }
    let s2 = sigma2.ln_1p();
    Ok((-0.5 * s2, s2))
}

/// Pareto `(α, x_m)` with mean 1 and variance `sigma2`.
pub fn moment_match_pareto(sigma2: f64) -> Result<(f64, f64)> {
    if !(sigma2 > 0.0) {
        return spec_err("moment matching needs a positive variance");
    }
    let alpha = 1.0 + (1.0 + 1.0 / sigma2).sqrt();
    Ok((alpha, (alpha - 1.0) / alpha))
}

/// Sampler of mean-zero perturbations with a given variance.
#[derive(Debug, Clone, Copy)]
pub enum CenteredSampler {
    Zero,
    Normal(Normal<f64>),
    Lognormal(LogNormal<f64>),
    Pareto(Pareto<f64>),
}

impl CenteredSampler {
    pub fn new(distribution: Distribution, variance: f64) -> Result<Self> {
        if variance == 0.0 {
            return Ok(Self::Zero);
        }
        let bad = |e: &dyn std::fmt::Display| Error::Specification(format!("invalid perturbation distribution: {e}"));
        Ok(match distribution {
            Distribution::Normal => Self::Normal(Normal::new(0.0, variance.sqrt()).map_err(|e| bad(&e))?),
            Distribution::Lognormal => {
                let (mu, s2) = moment_match_lognormal(variance)?;
                Self::Lognormal(LogNormal::new(mu, s2.sqrt()).map_err(|e| bad(&e))?)
            }
            Distribution::Pareto => {
                let (alpha, xm) = moment_match_pareto(variance)?;
                Self::Pareto(Pareto::new(xm, alpha).map_err(|e| bad(&e))?)
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Normal(d) => d.sample(rng),
            Self::Lognormal(d) => d.sample(rng) - 1.0,
            Self::Pareto(d) => d.sample(rng) - 1.0,
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adds region-level perturbations to `λ^R_l`, `λ^{AR}_{1l}` and
/// `λ^{BR}_{1l}` and maps back to sizes and probabilities. Draws all region
/// intercepts first, then the A slopes, then the B slopes.
pub fn perturb<R: Rng + ?Sized>(pop: &PopulationTruth, spec: &PerturbationSpec, rng: &mut R) -> Result<PopulationTruth> {
    if spec.variances.iter().all(|v| *v == 0.0) {
        return Ok(pop.clone());
    }
    let r = pop.regions.len();
    let mut draws = [vec![0.0; r], vec![0.0; r], vec![0.0; r]];
    for (k, d) in draws.iter_mut().enumerate() {
        let sampler = CenteredSampler::new(spec.distribution, spec.variances[k])?;
        d.iter_mut().for_each(|x| *x = sampler.sample(rng));
    }
    let regions = pop
        .regions
        .iter()
        .enumerate()
        .map(|(l, reg)| {
            // corner point: log μ00 = λ + λ^R_l, log μ10/μ00 = λ^A_1 + λ^AR_1l, ...
            let log_mu00 = (reg.size * reg.probs[3]).ln() + draws[0][l];
            let pi_a = logistic(logit(reg.pi_a()) + draws[1][l]);
            let pi_b = logistic(logit(reg.pi_b()) + draws[2][l]);
            let size = log_mu00.exp() / ((1.0 - pi_a) * (1.0 - pi_b));
            RegionTruth::independent(size, pi_a, pi_b)
        })
        .collect();
    Ok(PopulationTruth { regions })
}

// ---------------------------------------------------------------------------
// sampling

/// Multinomial draw by sequential conditional binomials. Weights need not
/// be normalized; all-zero weights are treated as uniform.
pub fn multinomial<R: Rng + ?Sized>(n: u64, weights: &[f64], rng: &mut R) -> Vec<u64> {
    let k = weights.len();
    let mut out = vec![0u64; k];
    if k == 0 || n == 0 {
        return out;
    }
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    let uniform = !(total > 0.0);
    let mut remaining_n = n;
    let mut remaining_w = if uniform { k as f64 } else { total };
    for i in 0..k {
        if remaining_n == 0 {
            break;
        }
        let w = if uniform { 1.0 } else { weights[i].max(0.0) };
        if i + 1 == k {
            out[i] = remaining_n;
            break;
        }
        let p = if remaining_w > 0.0 { (w / remaining_w).clamp(0.0, 1.0) } else { 0.0 };
        let x = if p >= 1.0 {
            remaining_n
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining_n, p).expect("valid binomial").sample(rng)
        };
        out[i] = x;
        remaining_n -= x;
        remaining_w -= w;
    }
    out
}

/// Integer region sizes summing exactly to `n`.
///
/// Each fractional size is rounded up with probability equal to its
/// fractional part. An undershoot is topped up by one multinomial draw
/// weighted by the sign-flipped rounding residuals shifted to a zero
/// minimum; an overshoot is removed by a multinomial draw weighted by the
/// residuals shifted to a zero minimum, redrawn while any size would turn
/// negative. All-zero weights fall back to uniform.
pub fn integerize<R: Rng + ?Sized>(sizes: &[f64], n: u64, rng: &mut R) -> Result<Vec<u64>> {
    if sizes.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::Simulation("region sizes must be finite and nonnegative".into()));
    }
    let mut rounded: Vec<u64> = sizes
        .iter()
        .map(|&s| {
            let floor = s.floor();
            let frac = s - floor;
            let up = frac > 0.0 && rng.random_bool(frac.min(1.0));
            floor as u64 + u64::from(up)
        })
        .collect();
    let total: u64 = rounded.iter().sum();
    let residuals: Vec<f64> = sizes.iter().zip(&rounded).map(|(&s, &r)| s - r as f64).collect();

    if total < n {
        let flipped: Vec<f64> = residuals.iter().map(|d| -d).collect();
        let min = flipped.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = flipped.iter().map(|d| d - min).collect();
        let add = multinomial(n - total, &weights, rng);
        rounded.iter_mut().zip(add).for_each(|(r, a)| *r += a);
    } else if total > n {
        let min = residuals.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = residuals.iter().map(|d| d - min).collect();
        let excess = total - n;
        let mut done = false;
        for _ in 0..INTEGERIZE_REDRAW_CAP {
            let remove = multinomial(excess, &weights, rng);
            if rounded.iter().zip(&remove).all(|(r, x)| x <= r) {
                rounded.iter_mut().zip(remove).for_each(|(r, x)| *r -= x);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Simulation(format!(
                "integerize: no nonnegative removal after {INTEGERIZE_REDRAW_CAP} redraws"
            )));
        }
    }
    Ok(rounded)
}

/// One simulated two-list sample.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    /// Observed counts with the doubly-missed cell attached as truth.
    pub table: StratifiedTable<f64>,
    /// True region sizes at the sample's population size.
    pub truth_sizes: Vec<f64>,
    /// Integer region sizes the multinomials were drawn with.
    pub region_sizes: Vec<u64>,
}

/// Integer region sizes for population size `n`, then one four-cell
/// multinomial per region.
pub fn draw_sample<R: Rng + ?Sized>(pop: &PopulationTruth, n: u64, rng: &mut R) -> Result<SimulatedSample> {
    let truth_sizes = pop.sizes_for(n as f64);
    let region_sizes = integerize(&truth_sizes, n, rng)?;
    let strata = pop
        .regions
        .iter()
        .zip(&region_sizes)
        .map(|(reg, &size)| {
            let c = multinomial(size, &reg.probs, rng);
            DualStratumCounts::new(c[0], c[1], c[2]).with_truth(c[3] as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedSample { table: StratifiedTable::dual_numbered(strata)?, truth_sizes, region_sizes })
}

// ---------------------------------------------------------------------------
// variance calibration

/// Settings of the variance calibration study.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSettings {
    pub regions: usize,
    pub population_size: f64,
    pub pi_a_range: (f64, f64),
    pub pi_b_range: (f64, f64),
    pub replicates: usize,
    /// Fewer usable fits than this is an error.
    pub min_clean_fits: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            regions: 30,
            population_size: 500.0,
            pi_a_range: (0.7, 0.9),
            pi_b_range: (0.6, 0.8),
            replicates: 1_000,
            min_clean_fits: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// Mean estimated `(σ²_u0, σ²_u1, σ²_u2)` over warning-free fits.
    pub sigma2: [f64; 3],
    pub clean_fits: usize,
    pub warned_fits: usize,
    pub failed_fits: usize,
    pub population: PopulationTruth,
}

/// Calibration population: uniform inclusion probabilities and Poisson
/// region sizes with rate `N / regions`.
pub fn calibration_population<R: Rng + ?Sized>(settings: &CalibrationSettings, rng: &mut R) -> Result<PopulationTruth> {
    let rate = settings.population_size / settings.regions as f64;
    let poisson = Poisson::new(rate).map_err(|e| Error::Specification(format!("invalid Poisson rate: {e}")))?;
    let (a0, a1) = settings.pi_a_range;
    let (b0, b1) = settings.pi_b_range;
    let regions = (0..settings.regions)
        .map(|_| {
            let pi_a = rng.random_range(a0..a1);
            let pi_b = rng.random_range(b0..b1);
            let size: f64 = poisson.sample(rng);
            RegionTruth::independent(size, pi_a, pi_b)
        })
        .collect();
    Ok(PopulationTruth { regions })
}

/// Fits the mixed two-list model to repeated multinomial samples of the
/// whole table of one calibration population and averages the estimated variance components over fits
/// without convergence warnings.
pub fn calibrate_variances(seed: u64, settings: &CalibrationSettings) -> Result<CalibrationResult> {
    let population = calibration_population(settings, &mut stream_rng(seed, u64::MAX, 0, 0))?;
    let spec = ModelSpec::mixed_dual();
    // one multinomial over the whole regions × 2 × 2 table
    let cells: Vec<f64> = population.unconditional().into_iter().flatten().collect();
    let total = population.total().round() as u64;
    let outcomes: Vec<Option<(bool, [f64; 3])>> = (0..settings.replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, u64::MAX, 0, i as u64 + 1);
            let c = multinomial(total, &cells, &mut rng);
            let strata = c.chunks(4).map(|k| DualStratumCounts::new(k[0], k[1], k[2])).collect();
            let table = StratifiedTable::dual_numbered(strata).ok()?;
            let fit = fit_mixed(&table, &spec).ok()?;
            let v = &fit.variance;
            let get = |t| v.get(t).unwrap_or(0.0);
            Some((fit.convergence_warnings.is_empty(), [get(RandomTerm::U0), get(RandomTerm::U1), get(RandomTerm::U2)]))
        })
        .collect();

    let mut sum = [0.0; 3];
    let (mut clean, mut warned, mut failed) = (0usize, 0usize, 0usize);
    for o in &outcomes {
        match o {
            Some((true, s)) => {
                clean += 1;
                for k in 0..3 {
                    sum[k] += s[k];
                }
            }
            Some((false, _)) => warned += 1,
            None => failed += 1,
        }
    }
    if clean < settings.min_clean_fits {
        return Err(Error::Calibration(format!(
            "only {clean} warning-free fits out of {} (need {})",
            settings.replicates, settings.min_clean_fits
        )));
    }
    Ok(CalibrationResult {
        sigma2: sum.map(|s| s / clean as f64),
        clean_fits: clean,
        warned_fits: warned,
        failed_fits: failed,
        population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_population_cells() {
        let pop = base_population(10, 0.8, 0.7, DEFAULT_SCALE).unwrap();
        let expected = [0.56, 0.24, 0.14, 0.06];
        for reg in &pop.regions {
            for (p, e) in reg.probs.iter().zip(expected) {
                assert!((p - e).abs() < 1e-12);
            }
            assert_eq!(reg.size, 1000.0);
        }
        for u in pop.unconditional() {
            for (p, e) in u.iter().zip([0.056, 0.024, 0.014, 0.006]) {
                assert!((p - e).abs() < 1e-12);
            }
        }
        let low = base_population(3, 0.4, 0.2, 1.0).unwrap();
        for (p, e) in low.regions[0].probs.iter().zip([0.08, 0.32, 0.12, 0.48]) {
            assert!((p - e).abs() < 1e-12);
        }
        assert!(base_population(10, 1.0, 0.5, 1.0).is_err());
        assert!(base_population(0, 0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn zero_variance_perturbation_is_identity() {
        let pop = base_population(10, 0.8, 0.7, DEFAULT_SCALE).unwrap();
        let spec = PerturbationSpec::new(Distribution::Normal, [0.0; 3]).unwrap();
        let out = perturb(&pop, &spec, &mut stream_rng(1, 2, 3, 4)).unwrap();
        assert_eq!(out, pop);
    }

    #[test]
    fn perturbation_keeps_independence_and_normalization() {
        let pop = base_population(10, 0.8, 0.7, DEFAULT_SCALE).unwrap();
        for dist in [Distribution::Normal, Distribution::Lognormal, Distribution::Pareto] {
            let spec = PerturbationSpec::new(dist, STUDY_VARIANCES).unwrap();
            let out = perturb(&pop, &spec, &mut stream_rng(7, 0, 0, 0)).unwrap();
            for reg in &out.regions {
                assert!((reg.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((reg.probs[0] - reg.pi_a() * reg.pi_b()).abs() < 1e-10);
                assert!(reg.probs.iter().all(|p| *p > 0.0));
            }
        }
    }

    #[test]
    fn moment_matching_closed_forms() {
        let (mu, s2) = moment_match_lognormal(0.0143).unwrap();
        assert!((s2 - 0.0141988).abs() < 1e-7 && (mu + 0.0070994).abs() < 1e-7);
        assert!(((mu + s2 / 2.0).exp() - 1.0).abs() < 1e-12);
        let (alpha, xm) = moment_match_pareto(0.0143).unwrap();
        assert!((alpha - 9.42200).abs() < 1e-5 && (xm - 0.893866).abs() < 1e-6);
        assert!((alpha * xm / (alpha - 1.0) - 1.0).abs() < 1e-12);
        assert!(moment_match_lognormal(0.0).is_err());
        assert!(moment_match_pareto(-1.0).is_err());
        let (mu, s2) = moment_match_lognormal(1e-12).unwrap();
        assert!(mu.abs() < 1e-11 && s2 < 1e-11);
    }

    #[test]
    fn integerize_keeps_integer_input() {
        let mut rng = stream_rng(0, 0, 0, 0);
        assert_eq!(integerize(&[3.0, 5.0, 2.0], 10, &mut rng).unwrap(), [3, 5, 2]);
    }

    #[test]
    fn integerize_sums_to_target() {
        let mut rng = stream_rng(11, 0, 0, 0);
        for _ in 0..2000 {
            let r = rng.random_range(1..40);
            let sizes: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..50.0)).collect();
            let n = sizes.iter().sum::<f64>().round() as u64;
            let out = integerize(&sizes, n, &mut rng).unwrap();
            assert_eq!(out.iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn multinomial_closure_and_degenerate_weights() {
        let mut rng = stream_rng(3, 0, 0, 0);
        assert_eq!(multinomial(17, &[1.0, 0.0, 0.0, 0.0], &mut rng), [17, 0, 0, 0]);
        let x = multinomial(100, &[0.0, 0.0], &mut rng);
        assert_eq!(x.iter().sum::<u64>(), 100);
    }

    #[test]
    fn sample_closure() {
        let pop = base_population(10, 0.8, 0.7, DEFAULT_SCALE).unwrap();
        let spec = PerturbationSpec::new(Distribution::Normal, STUDY_VARIANCES).unwrap();
        let pop = perturb(&pop, &spec, &mut stream_rng(5, 0, 0, 0)).unwrap();
        let s = draw_sample(&pop, 1234, &mut stream_rng(5, 0, 0, 1)).unwrap();
        let dual = s.table.as_dual().unwrap();
        let total: f64 = dual.iter().map(|c| c.observed() as f64 + c.n00_truth.unwrap()).sum();
        assert_eq!(total, 1234.0);
        assert!((s.truth_sizes.iter().sum::<f64>() - 1234.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_probabilities_put_everyone_in_both_lists() {
        let pop = PopulationTruth { regions: vec![RegionTruth { size: 2.5, probs: [1.0, 0.0, 0.0, 0.0] }; 4] };
        let s = draw_sample(&pop, 10, &mut stream_rng(9, 0, 0, 0)).unwrap();
        for (c, size) in s.table.as_dual().unwrap().iter().zip(&s.region_sizes) {
            assert_eq!(c.n11, *size);
            assert_eq!(c.n10 + c.n01, 0);
        }
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        assert_eq!(stream_seed(1, 2, 3, 4), stream_seed(1, 2, 3, 4));
        assert_ne!(stream_seed(1, 2, 3, 4), stream_seed(1, 2, 4, 3));
        assert_ne!(stream_seed(1, 0, 0, 0), stream_seed(2, 0, 0, 0));
    }
}
