//! Scenario grid and the replicate loop: perturbed populations, repeated
//! samples per population, estimation by each method and scenario metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{spec_err, Error, Result};
use crate::estimators::{chapman, lincoln_petersen, nhat_from_mixed_fit};
use crate::glmm_fit::fit_mixed;
use crate::metrics::{MetricsSummary, ReplicateGrid};
use crate::simgen::{
    base_population, draw_sample, perturb, stream_rng, Distribution, PerturbationSpec, DEFAULT_SCALE, STUDY_VARIANCES,
};
use crate::table_model::ModelSpec;

/// Methods compared in the scenario study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StudyMethod {
    #[serde(rename = "FixedLP")]
    FixedLp,
    FixedChapman,
    Mixed,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 3] = [StudyMethod::FixedLp, StudyMethod::FixedChapman, StudyMethod::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            StudyMethod::FixedLp => "FixedLP",
            StudyMethod::FixedChapman => "FixedChapman",
            StudyMethod::Mixed => "Mixed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixedlp" | "lp" => Some(Self::FixedLp),
            "fixedchapman" | "chapman" => Some(Self::FixedChapman),
            "mixed" => Some(Self::Mixed),
            _ => None,
        }
    }
}

/// Named inclusion-probability settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Probabilities {
    High,
    Low,
}

impl Probabilities {
    pub fn values(self) -> (f64, f64) {
        match self {
            Probabilities::High => (0.8, 0.7),
            Probabilities::Low => (0.4, 0.2),
        }
    }
}

/// One cell of the scenario grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub id: usize,
    pub distribution: Distribution,
    pub n: u64,
    pub regions: usize,
    pub pi_a: f64,
    pub pi_b: f64,
    pub variances: [f64; 3],
}

impl Scenario {
    pub fn new(id: usize, distribution: Distribution, n: u64, regions: usize, probabilities: Probabilities) -> Self {
        let (pi_a, pi_b) = probabilities.values();
        Self { id, distribution, n, regions, pi_a, pi_b, variances: STUDY_VARIANCES }
    }
}

pub const STUDY_SIZES: [u64; 8] = [500, 1000, 1500, 2000, 2500, 3000, 30_000, 300_000];
pub const STUDY_REGIONS: [usize; 6] = [5, 10, 15, 20, 25, 30];

/// Factors of a scenario study. Scenarios are the full cross product in
/// the order distribution, N, regions, probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub distributions: Vec<Distribution>,
    pub sizes: Vec<u64>,
    pub regions: Vec<usize>,
    pub probabilities: Vec<Probabilities>,
    pub methods: Vec<StudyMethod>,
    pub populations: usize,
    pub samples_per_population: usize,
    pub base_seed: u64,
    pub variances: [f64; 3],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            distributions: vec![Distribution::Normal, Distribution::Lognormal, Distribution::Pareto],
            sizes: STUDY_SIZES.to_vec(),
            regions: STUDY_REGIONS.to_vec(),
            probabilities: vec![Probabilities::High, Probabilities::Low],
            methods: StudyMethod::ALL.to_vec(),
            populations: 100,
            samples_per_population: 100,
            base_seed: 20_190_101,
            variances: STUDY_VARIANCES,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.populations == 0 || self.samples_per_population == 0 {
            return spec_err("populations and samples per population must be at least 1");
        }
        if self.distributions.is_empty()
            || self.sizes.is_empty()
            || self.regions.is_empty()
            || self.probabilities.is_empty()
            || self.methods.is_empty()
        {
            return spec_err("every scenario factor needs at least one level");
        }
        if self.sizes.contains(&0) || self.regions.contains(&0) {
            return spec_err("population sizes and region counts must be positive");
        }
        if self.variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return spec_err("variances must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &distribution in &self.distributions {
            for &n in &self.sizes {
                for &regions in &self.regions {
                    for &probabilities in &self.probabilities {
                        let mut s = Scenario::new(out.len(), distribution, n, regions, probabilities);
                        s.variances = self.variances;
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}

/// Estimates of every method for one `(population, sample)` replicate.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub population: usize,
    pub sample: usize,
    /// Per method, per stratum. A failed fit leaves NaN.
    pub estimates: Vec<Vec<f64>>,
    pub truths: Vec<f64>,
    pub mixed_warnings: usize,
    pub mixed_failed: bool,
}

#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub metrics: MetricsSummary<f64>,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub summaries: Vec<MethodSummary>,
    /// Mixed fits that returned convergence warnings.
    pub mixed_warning_fits: usize,
    /// Mixed fits that failed outright and were excluded.
    pub mixed_failures: usize,
    pub replicates: Vec<Replicate>,
}

impl ScenarioResult {
    pub fn summary(&self, method: StudyMethod) -> Option<&MetricsSummary<f64>> {
        self.summaries.iter().find(|s| s.method == method).map(|s| &s.metrics)
    }
}

fn estimate_replicate(
    scenario: &Scenario,
    methods: &[StudyMethod],
    base_seed: u64,
    population: usize,
    sample: usize,
    pop: &crate::simgen::PopulationTruth,
) -> Result<Replicate> {
    let mut rng = stream_rng(base_seed, scenario.id as u64, population as u64, sample as u64 + 1);
    let draw = draw_sample(pop, scenario.n, &mut rng)?;
    let dual = draw.table.as_dual().expect("simulated tables are dual");
    let mut mixed_warnings = 0;
    let mut mixed_failed = false;
    let estimates = methods
        .iter()
        .map(|m| match m {
            StudyMethod::FixedLp => dual.iter().map(|c| lincoln_petersen(c).nhat_l).collect(),
            StudyMethod::FixedChapman => dual.iter().map(|c| chapman(c).nhat_l).collect(),
            StudyMethod::Mixed => {
                match fit_mixed(&draw.table, &ModelSpec::mixed_dual())
                    .and_then(|fit| nhat_from_mixed_fit(&fit, &draw.table).map(|e| (fit, e)))
                {
                    Ok((fit, est)) => {
                        mixed_warnings = fit.convergence_warnings.len();
                        est.per_stratum.iter().map(|s| s.nhat_l).collect()
                    }
                    Err(_) => {
                        mixed_failed = true;
                        vec![f64::NAN; dual.len()]
                    }
                }
            }
        })
        .collect();
    Ok(Replicate { population, sample, estimates, truths: draw.truth_sizes, mixed_warnings, mixed_failed })
}

/// Runs one scenario with `populations × samples` replicates. Every
/// population and sample owns a seeded stream, so the result does not
/// depend on the thread count.
pub fn run_scenario(
    scenario: &Scenario,
    methods: &[StudyMethod],
    populations: usize,
    samples: usize,
    base_seed: u64,
) -> Result<ScenarioResult> {
    if populations == 0 || samples == 0 || methods.is_empty() {
        return spec_err("a scenario needs at least one population, sample and method");
    }
    let base = base_population(scenario.regions, scenario.pi_a, scenario.pi_b, DEFAULT_SCALE)?;
    let spec = PerturbationSpec::new(scenario.distribution, scenario.variances)?;
    let pops = (0..populations)
        .into_par_iter()
        .map(|p| perturb(&base, &spec, &mut stream_rng(base_seed, scenario.id as u64, p as u64, 0)))
        .collect::<Result<Vec<_>>>()?;
    let replicates = (0..populations * samples)
        .into_par_iter()
        .map(|i| {
            let (p, s) = (i / samples, i % samples);
            estimate_replicate(scenario, methods, base_seed, p, s, &pops[p])
        })
        .collect::<Result<Vec<_>>>()?;

    let r = scenario.regions;
    let truths: Vec<f64> = (0..populations).flat_map(|p| replicates[p * samples].truths.clone()).collect();
    let summaries = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let estimates: Vec<f64> = replicates.iter().flat_map(|rep| rep.estimates[k].iter().copied()).collect();
            let grid = ReplicateGrid::new(populations, samples, r, estimates, truths.clone())
                .map_err(|e| Error::Simulation(format!("scenario {}: {e}", scenario.id)))?;
            Ok(MethodSummary { method, metrics: MetricsSummary::from_grid(&grid) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioResult {
        scenario: *scenario,
        summaries,
        mixed_warning_fits: replicates.iter().filter(|r| r.mixed_warnings > 0).count(),
        mixed_failures: replicates.iter().filter(|r| r.mixed_failed).count(),
        replicates,
    })
}
