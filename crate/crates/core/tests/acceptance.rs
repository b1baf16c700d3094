//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any fails.

use std::time::Instant;

use capture_mse::glm_fit::fit_fixed;
use capture_mse::scenario::{run_scenario, Probabilities, Scenario, ScenarioResult, StudyMethod};
use capture_mse::simgen::*;
use capture_mse::table_model::design_matrix;
use capture_mse::*;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(a.abs())
    }
}

fn random_dual(rng: &mut impl Rng, strata: usize, lo: u64) -> Table {
    let s = (0..strata)
        .map(|_| DualCounts::new(rng.random_range(lo..400), rng.random_range(0..400), rng.random_range(0..400)))
        .collect();
    Table::dual_numbered(s).unwrap()
}

fn closed_forms() -> Outcome {
    let lp = lincoln_petersen(&DualCounts::new(56, 24, 14));
    let mut ok = lp.mu00_hat == 6.0 && lp.nhat_l == 100.0;
    let mut rng = stream_rng(1, 1, 0, 0);
    for _ in 0..10_000 {
        let (a, b, c) = (rng.random_range(0..100_000), rng.random_range(0..100_000), rng.random_range(0..100_000));
        let ch = chapman(&DualCounts::new(a, b, c));
        let shifted = lincoln_petersen(&DualCounts::new(a + 1, b, c));
        ok &= ch.mu00_hat == shifted.mu00_hat;
    }
    let f = fienberg_triple(&TripleCounts::new([1; 7]));
    ok &= (f.mu00_hat - 1.0).abs() <= 1e-12;
    outcome(ok, format!("LP μ̂00 {} N̂ {}, Fienberg symmetric {}", lp.mu00_hat, lp.nhat_l, f.mu00_hat))
}

fn model_closed_form_equivalence() -> Outcome {
    let mut rng = stream_rng(2, 2, 0, 0);
    let mut worst = 0.0f64;
    let mut fit_errors = 0;
    for _ in 0..500 {
        let r = rng.random_range(1..10);
        let t = random_dual(&mut rng, r, 1);
        let Ok(fit) = fit_fixed(&t, &ModelSpec::conditional_independence(Parameterization::CornerPoint)) else {
            fit_errors += 1;
            continue;
        };
        let m = nhat_from_fixed_fit(&fit, &t).unwrap();
        let c = stratified_estimate(&t, ClosedForm::LP).unwrap();
        for (a, b) in m.per_stratum.iter().zip(&c.per_stratum) {
            worst = worst.max(rel(a.nhat_l, b.nhat_l));
        }
    }
    let mut worst_triple = 0.0f64;
    for _ in 0..500 {
        let r = rng.random_range(1..5);
        let s = (0..r).map(|_| TripleCounts::new(std::array::from_fn(|_| rng.random_range(1..200)))).collect();
        let t = Table::triple_numbered(s).unwrap();
        let Ok(fit) = fit_fixed(&t, &ModelSpec::maximal_triple(Parameterization::CornerPoint)) else {
            fit_errors += 1;
            continue;
        };
        let m = nhat_from_fixed_fit(&fit, &t).unwrap();
        let c = stratified_fienberg(&t).unwrap();
        for (a, b) in m.per_stratum.iter().zip(&c.per_stratum) {
            worst_triple = worst_triple.max(rel(a.mu00_hat, b.mu00_hat));
        }
    }
    outcome(
        fit_errors == 0 && worst < 1e-6 && worst_triple < 1e-6,
        format!("worst relative gap dual {worst:.2e}, triple {worst_triple:.2e}, failed fits {fit_errors}"),
    )
}

fn saturation() -> Outcome {
    let mut rng = stream_rng(3, 3, 0, 0);
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut check = |t: &Table, spec: ModelSpec| match fit_fixed(t, &spec) {
        Ok(fit) => {
            let d = design_matrix(&spec, t).unwrap();
            for (m, n) in fit.fitted_means.iter().zip(&d.response) {
                worst = worst.max(rel(*m, *n));
            }
        }
        Err(_) => failures += 1,
    };
    for _ in 0..100 {
        let mut cell = || rng.random_range(1..500u64);
        let one = Table::dual_numbered(vec![DualCounts::new(cell(), cell(), cell()).with_truth(cell() as f64).unwrap()]).unwrap();
        check(&one, ModelSpec::saturated_dual(Parameterization::CornerPoint));
        let r = rng.random_range(1..8);
        let strata = (0..r)
            .map(|_| DualCounts::new(rng.random_range(1..500), rng.random_range(1..500), rng.random_range(1..500)).with_truth(rng.random_range(1..500) as f64).unwrap())
            .collect();
        check(&Table::dual_numbered(strata).unwrap(), ModelSpec::saturated_stratified_dual(Parameterization::CornerPoint));
        let r = rng.random_range(1..5);
        let strata = (0..r)
            .map(|_| TripleCounts::new(std::array::from_fn(|_| rng.random_range(1..300))).with_truth(rng.random_range(1..300) as f64).unwrap())
            .collect();
        check(&Table::triple_numbered(strata).unwrap(), ModelSpec::saturated_triple(Parameterization::CornerPoint));
    }
    outcome(failures == 0 && worst < 1e-8, format!("worst relative residual {worst:.2e}, failed fits {failures}"))
}

fn simulated_table(regions: usize, n: u64, variances: [f64; 3], seed: u64) -> Table {
    let base = base_population(regions, 0.8, 0.7, DEFAULT_SCALE).unwrap();
    let spec = PerturbationSpec::new(Distribution::Normal, variances).unwrap();
    let pop = perturb(&base, &spec, &mut stream_rng(seed, 4, 0, 0)).unwrap();
    draw_sample(&pop, n, &mut stream_rng(seed, 4, 0, 1)).unwrap().table
}

fn glmm_correctness() -> Outcome {
    let spec = ModelSpec::mixed_dual();
    let mut rng = stream_rng(4, 4, 1, 0);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let t = simulated_table(rng.random_range(3..15), 3000, STUDY_VARIANCES, 100 + i);
        let beta = [rng.random_range(2.0..5.0), rng.random_range(0.2..1.2), rng.random_range(0.0..0.8)];
        let log_sd: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..0.0)).collect();
        let (_, g) = laplace_gradient(&t, &spec, &beta, &log_sd).unwrap();
        let mut x: Vec<f64> = beta.iter().chain(&log_sd).copied().collect();
        let f = |x: &[f64]| laplace_gradient(&t, &spec, &x[..3], &x[3..]).unwrap().0;
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for k in 0..x.len() {
            let h = 1e-5 * x[k].abs().max(1.0);
            let x0 = x[k];
            x[k] = x0 + h;
            let up = f(&x);
            x[k] = x0 - h;
            let down = f(&x);
            x[k] = x0;
            worst = worst.max((g[k] - (up - down) / (2.0 * h)).abs() / scale);
        }
    }

    let mut good = 0;
    let mut max_var = 0.0f64;
    let mut max_gap = 0.0f64;
    for seed in 0..20 {
        let t = simulated_table(10, 30_000, [0.0; 3], 200 + seed);
        let fit = fit_mixed(&t, &spec).unwrap();
        let est = nhat_from_mixed_fit(&fit, &t).unwrap();
        let d = t.as_dual().unwrap();
        let pooled = Table::dual_numbered(vec![d.iter().fold(DualCounts::new(0, 0, 0), |a, c| {
            DualCounts::new(a.n11 + c.n11, a.n10 + c.n10, a.n01 + c.n01)
        })])
        .unwrap();
        let pf = fit_fixed(&pooled, &ModelSpec::independence(Parameterization::CornerPoint)).unwrap();
        let pooled_est = nhat_from_fixed_fit(&pf, &pooled).unwrap();
        // pooled missed-to-observed ratio applied to each stratum
        let ratio = pooled_est.per_stratum[0].mu00_hat / observed_total(&pooled) as f64;
        let gap = est
            .per_stratum
            .iter()
            .map(|s| rel(s.nhat_l, s.observed as f64 * (1.0 + ratio)))
            .fold(0.0f64, f64::max);
        let var = fit.variance.sigma2.iter().copied().fold(0.0f64, f64::max);
        max_var = max_var.max(var);
        max_gap = max_gap.max(gap);
        if var <= 0.01 && gap < 0.01 {
            good += 1;
        }
    }
    outcome(
        worst < 1e-4 && good >= 18,
        format!("gradient worst relative error {worst:.2e}; zero heterogeneity {good}/20 seeds (max σ̂² {max_var:.2e}, max N̂ gap {:.3}%)", 100.0 * max_gap),
    )
}

fn calibration() -> Outcome {
    let target = STUDY_VARIANCES;
    let run = |replicates: usize| {
        let settings = CalibrationSettings { replicates, ..CalibrationSettings::default() };
        calibrate_variances(20_190_101, &settings)
    };
    let within = |got: &[f64; 3], tol: f64| got.iter().zip(&target).all(|(g, t)| (g - t).abs() <= tol * t);
    let fast = run(200);
    let full = run(1000);
    match (fast, full) {
        (Ok(fast), Ok(full)) => outcome(
            within(&full.sigma2, 0.5),
            format!(
                "1000 replicates {:.4?} (±50%: {}), {} clean; 200 replicates {:.4?} (±75%: {})",
                full.sigma2,
                within(&full.sigma2, 0.5),
                full.clean_fits,
                fast.sigma2,
                within(&fast.sigma2, 0.75)
            ),
        ),
        (a, b) => outcome(false, format!("calibration error: {:?} {:?}", a.err(), b.err())),
    }
}

const RERUNS: u64 = 10;

fn rerun(distribution: Distribution, n: u64, regions: usize, p: Probabilities, pops: usize, seed: u64) -> ScenarioResult {
    let sc = Scenario::new(0, distribution, n, regions, p);
    run_scenario(&sc, &StudyMethod::ALL, pops, pops, seed).unwrap()
}

fn marb_of(r: &ScenarioResult, m: StudyMethod) -> f64 {
    r.summary(m).unwrap().marb_percent
}

fn table_one_cell(runs: &[ScenarioResult]) -> Outcome {
    let in_band = |v: f64| (0.3..=0.7).contains(&v);
    let banded = runs
        .iter()
        .filter(|r| in_band(marb_of(r, StudyMethod::FixedChapman)) && in_band(marb_of(r, StudyMethod::Mixed)))
        .count();
    let better = runs
        .iter()
        .filter(|r| r.summary(StudyMethod::Mixed).unwrap().mse < r.summary(StudyMethod::FixedChapman).unwrap().mse)
        .count();
    let mean = |m| runs.iter().map(|r| marb_of(r, m)).sum::<f64>() / runs.len() as f64;
    let mean_mse = |m| runs.iter().map(|r| r.summary(m).unwrap().mse).sum::<f64>() / runs.len() as f64;
    outcome(
        banded == runs.len() && better >= 7,
        format!(
            "marb in [0.3, 0.7] in {banded}/{} runs (mean Chapman {:.3}, Mixed {:.3}); Mixed mse lower in {better}/{} (mean {:.1} vs {:.1})",
            runs.len(),
            mean(StudyMethod::FixedChapman),
            mean(StudyMethod::Mixed),
            runs.len(),
            mean_mse(StudyMethod::Mixed),
            mean_mse(StudyMethod::FixedChapman)
        ),
    )
}

fn small_n_ordering() -> Outcome {
    let runs: Vec<_> = (1..=RERUNS).map(|s| rerun(Distribution::Normal, 500, 30, Probabilities::High, 20, s)).collect();
    let lp_infinite: usize = runs.iter().map(|r| r.summary(StudyMethod::FixedLp).unwrap().infinite_count).sum();
    let finite = runs.iter().all(|r| {
        [StudyMethod::FixedChapman, StudyMethod::Mixed].iter().all(|&m| {
            let s = r.summary(m).unwrap();
            s.infinite_count == 0 && s.marb_percent.is_finite()
        })
    });
    let better = runs.iter().filter(|r| marb_of(r, StudyMethod::Mixed) < marb_of(r, StudyMethod::FixedChapman)).count();
    let mean = |m| runs.iter().map(|r| marb_of(r, m)).sum::<f64>() / runs.len() as f64;
    outcome(
        lp_infinite > 0 && finite && better >= 8,
        format!(
            "LP infinite estimates {lp_infinite} over {RERUNS} runs; Chapman/Mixed finite: {finite}; Mixed marb lower in {better}/{RERUNS} (mean {:.3} vs {:.3})",
            mean(StudyMethod::Mixed),
            mean(StudyMethod::FixedChapman)
        ),
    )
}

fn low_probability_stress() -> Outcome {
    let r = rerun(Distribution::Normal, 500, 30, Probabilities::Low, 20, 1);
    let (c, m) = (marb_of(&r, StudyMethod::FixedChapman), marb_of(&r, StudyMethod::Mixed));
    outcome(m < 0.7 * c, format!("Mixed marb {m:.2} vs Chapman {c:.2} (ratio {:.3})", m / c))
}

fn distribution_robustness(normal: &[ScenarioResult]) -> Outcome {
    let mean = |runs: &[ScenarioResult]| runs.iter().map(|r| marb_of(r, StudyMethod::Mixed)).sum::<f64>() / runs.len() as f64;
    let base = mean(normal);
    let mut pass = true;
    let mut detail = format!("Mixed marb normal {base:.3}");
    for d in [Distribution::Lognormal, Distribution::Pareto] {
        let runs: Vec<_> = (1..=RERUNS).map(|s| rerun(d, 30_000, 10, Probabilities::High, 10, s)).collect();
        let m = mean(&runs);
        pass &= rel(m, base) < 0.3;
        detail += &format!(", {} {m:.3} ({:+.1}%)", d.name(), 100.0 * (m - base) / base);
    }
    outcome(pass, detail)
}

fn integerize_invariants() -> Outcome {
    let mut rng = stream_rng(10, 10, 0, 0);
    let mut ok = true;
    for i in 0..100_000u64 {
        let r = rng.random_range(1..30);
        let sizes: Vec<f64> = (0..r).map(|_| rng.random_range(0.0..40.0)).collect();
        let n = sizes.iter().sum::<f64>().round() as u64;
        let out = integerize(&sizes, n, &mut stream_rng(10, 10, 1, i)).unwrap();
        ok &= out.iter().sum::<u64>() == n;
        if i % 1000 == 0 {
            ok &= integerize(&sizes, n, &mut stream_rng(10, 10, 1, i)).unwrap() == out;
        }
    }
    outcome(ok, "sum, nonnegativity and reproducibility over 100000 inputs")
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:2} {status} {name} [{:.1}s]: {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "closed forms", &mut closed_forms);
    report(2, "model and closed-form equivalence", &mut model_closed_form_equivalence);
    report(3, "saturated fits", &mut saturation);
    report(4, "mixed-model correctness", &mut glmm_correctness);
    report(5, "variance calibration", &mut calibration);
    let mut normal = Vec::new();
    report(6, "N = 30000, 10 regions", &mut || {
        normal = (1..=RERUNS).map(|s| rerun(Distribution::Normal, 30_000, 10, Probabilities::High, 10, s)).collect();
        table_one_cell(&normal)
    });
    report(7, "N = 500, 30 regions", &mut small_n_ordering);
    report(8, "low inclusion probabilities", &mut low_probability_stress);
    report(9, "perturbation distribution", &mut || distribution_robustness(&normal));
    report(10, "integer region sizes", &mut integerize_invariants);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
