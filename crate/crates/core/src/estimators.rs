//! Population-size estimators: closed forms per stratum and estimates read
//! off fitted loglinear models.

use std::fmt;

use crate::error::{spec_err, Result};
use crate::glm_fit::FixedFit;
use crate::glmm_fit::{predict_missing_mixed, MixedFit};
use crate::scalar::Scalar;
use crate::table_model::{DualStratumCounts, Lists, Parameterization, StratifiedTable, Strata, Term, TripleStratumCounts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    LP,
    Chapman,
    FixedModel,
    MixedModel,
    FienbergTriple,
    FixedTripleModel,
    MixedTripleModel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::LP => "LP",
            Method::Chapman => "Chapman",
            Method::FixedModel => "FixedModel",
            Method::MixedModel => "MixedModel",
            Method::FienbergTriple => "FienbergTriple",
            Method::FixedTripleModel => "FixedTripleModel",
            Method::MixedTripleModel => "MixedTripleModel",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Estimate for one stratum. An infinite estimate is `+inf`; `degenerate`
/// marks the case where the data carry no information at all (every
/// factor of the closed form is zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumEstimate<T> {
    pub method: Method,
    pub observed: u64,
    pub mu00_hat: T,
    pub nhat_l: T,
    pub degenerate: bool,
}

impl<T: Scalar> StratumEstimate<T> {
    fn finite(method: Method, observed: u64, mu00: T) -> Self {
        Self { method, observed, mu00_hat: mu00, nhat_l: T::count(observed) + mu00, degenerate: false }
    }

    fn infinite(method: Method, observed: u64, degenerate: bool) -> Self {
        Self { method, observed, mu00_hat: T::infinity(), nhat_l: T::infinity(), degenerate }
    }

    pub fn is_infinite(&self) -> bool {
        self.nhat_l.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationEstimate<T> {
    pub method: Method,
    pub per_stratum: Vec<StratumEstimate<T>>,
    pub nhat_total: T,
}

impl<T: Scalar> PopulationEstimate<T> {
    fn from_strata(method: Method, per_stratum: Vec<StratumEstimate<T>>) -> Self {
        // sequential accumulation in stratum order
        let nhat_total = per_stratum.iter().fold(T::zero(), |acc, s| acc + s.nhat_l);
        Self { method, per_stratum, nhat_total }
    }

    pub fn is_infinite(&self) -> bool {
        self.nhat_total.is_infinite()
    }

    pub fn mu00_total(&self) -> T {
        self.per_stratum.iter().fold(T::zero(), |acc, s| acc + s.mu00_hat)
    }
}

/// `μ̂₀₀ = n10·n01 / n11`
pub fn lincoln_petersen<T: Scalar>(c: &DualStratumCounts<T>) -> StratumEstimate<T> {
    let num = T::count(c.n10) * T::count(c.n01);
    if c.n11 == 0 {
        return StratumEstimate::infinite(Method::LP, c.observed(), num == T::zero());
    }
    StratumEstimate::finite(Method::LP, c.observed(), num / T::count(c.n11))
}

/// `μ̂₀₀ = n10·n01 / (n11 + 1)`
pub fn chapman<T: Scalar>(c: &DualStratumCounts<T>) -> StratumEstimate<T> {
    let num = T::count(c.n10) * T::count(c.n01);
    StratumEstimate::finite(Method::Chapman, c.observed(), num / T::count(c.n11 + 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedForm {
    LP,
    Chapman,
}

/// Closed form applied stratum by stratum to a two-list table.
pub fn stratified_estimate<T: Scalar>(table: &StratifiedTable<T>, method: ClosedForm) -> Result<PopulationEstimate<T>> {
    let Some(strata) = table.as_dual() else {
        return spec_err("Lincoln-Petersen and Chapman estimators need a two-list table");
    };
    let (m, f): (Method, fn(&DualStratumCounts<T>) -> StratumEstimate<T>) = match method {
        ClosedForm::LP => (Method::LP, lincoln_petersen),
        ClosedForm::Chapman => (Method::Chapman, chapman),
    };
    Ok(PopulationEstimate::from_strata(m, strata.iter().map(f).collect()))
}

/// `μ̂₀₀₀ = n111·n001·n100·n010 / (n101·n011·n110)`
pub fn fienberg_triple<T: Scalar>(c: &TripleStratumCounts<T>) -> StratumEstimate<T> {
    let num = T::count(c.n111) * T::count(c.n001) * T::count(c.n100) * T::count(c.n010);
    let den = T::count(c.n101) * T::count(c.n011) * T::count(c.n110);
    if den == T::zero() {
        return StratumEstimate::infinite(Method::FienbergTriple, c.observed(), num == T::zero());
    }
    StratumEstimate::finite(Method::FienbergTriple, c.observed(), num / den)
}

pub fn stratified_fienberg<T: Scalar>(table: &StratifiedTable<T>) -> Result<PopulationEstimate<T>> {
    let Some(strata) = table.as_triple() else {
        return spec_err("the Fienberg estimator needs a three-list table");
    };
    Ok(PopulationEstimate::from_strata(Method::FienbergTriple, strata.iter().map(fienberg_triple).collect()))
}

/// `μ̂ = exp(λ̂ + λ̂^R_l)` from a corner-point fit. Strata where the matching
/// closed form is infinite are flagged infinite: their fitted parameters
/// diverge and only approximate the limit.
pub fn nhat_from_fixed_fit<T: Scalar>(fit: &FixedFit<T>, table: &StratifiedTable<T>) -> Result<PopulationEstimate<T>> {
    if fit.spec.parameterization != Parameterization::CornerPoint {
        return spec_err("population estimate from a fixed fit needs the corner-point parameterization");
    }
    if fit.spec.lists != table.lists() {
        return spec_err("fit and table disagree on the number of lists");
    }
    if fit.spec.needs_unobserved_cell() {
        return spec_err("the model uses the unobserved cell; it cannot estimate it");
    }
    let Some(lambda) = fit.coefficient(Term::Intercept, None) else {
        return spec_err("fit has no intercept");
    };
    let method = match table.lists() {
        Lists::Two => Method::FixedModel,
        Lists::Three => Method::FixedTripleModel,
    };
    let per_stratum = (0..table.len())
        .map(|l| {
            let lambda_r = fit.coefficient(Term::R, Some(l)).unwrap_or_else(T::zero);
            let observed = table.stratum_observed(l);
            let closed_form_infinite = match table.strata() {
                Strata::Dual(s) => lincoln_petersen(&s[l]),
                Strata::Triple(s) => fienberg_triple(&s[l]),
            };
            if closed_form_infinite.is_infinite() {
                StratumEstimate::infinite(method, observed, closed_form_infinite.degenerate)
            } else {
                StratumEstimate::finite(method, observed, (lambda + lambda_r).exp())
            }
        })
        .collect();
    Ok(PopulationEstimate::from_strata(method, per_stratum))
}

/// Observed counts plus the mixed-model prediction of the missed cell.
pub fn nhat_from_mixed_fit<T: Scalar>(fit: &MixedFit<T>, table: &StratifiedTable<T>) -> Result<PopulationEstimate<T>> {
    if fit.spec.lists != table.lists() || fit.strata != table.len() {
        return spec_err("fit and table do not match");
    }
    let method = match table.lists() {
        Lists::Two => Method::MixedModel,
        Lists::Three => Method::MixedTripleModel,
    };
    let per_stratum = (0..table.len())
        .map(|l| StratumEstimate::finite(method, table.stratum_observed(l), predict_missing_mixed(fit, l)))
        .collect();
    Ok(PopulationEstimate::from_strata(method, per_stratum))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(a: u64, b: u64, c: u64) -> DualStratumCounts<f64> {
        DualStratumCounts::new(a, b, c)
    }

    #[test]
    fn lincoln_petersen_cases() {
        let e = lincoln_petersen(&d(56, 24, 14));
        assert_eq!(e.mu00_hat, 6.0);
        assert_eq!(e.nhat_l, 100.0);
        let e = lincoln_petersen(&d(10, 0, 7));
        assert_eq!((e.mu00_hat, e.nhat_l), (0.0, 17.0));
        let e = lincoln_petersen(&d(0, 5, 3));
        assert!(e.is_infinite() && !e.degenerate);
        let e = lincoln_petersen(&d(0, 0, 0));
        assert!(e.is_infinite() && e.degenerate);
    }

    #[test]
    fn chapman_cases() {
        assert_eq!(chapman(&d(56, 24, 14)).mu00_hat, 336.0 / 57.0);
        assert_eq!(chapman(&d(0, 5, 3)).mu00_hat, 15.0);
        assert_eq!(chapman(&d(0, 0, 0)).nhat_l, 0.0);
    }

    #[test]
    fn stratified_totals() {
        let t = StratifiedTable::dual_numbered(vec![d(56, 24, 14); 3]).unwrap();
        assert_eq!(stratified_estimate(&t, ClosedForm::LP).unwrap().nhat_total, 300.0);

        let t = StratifiedTable::dual_numbered(vec![d(56, 24, 14), d(0, 5, 3)]).unwrap();
        assert!(stratified_estimate(&t, ClosedForm::LP).unwrap().is_infinite());
        let c = stratified_estimate(&t, ClosedForm::Chapman).unwrap();
        assert!((c.nhat_total - (94.0 + 336.0 / 57.0 + 23.0)).abs() < 1e-12);
        assert!((c.nhat_total - 122.8947).abs() < 1e-4);
    }

    #[test]
    fn fienberg_cases() {
        let ones = TripleStratumCounts::<f64>::new([1; 7]);
        assert_eq!(fienberg_triple(&ones).mu00_hat, 1.0);
        let c = TripleStratumCounts::<f64>::new([8, 4, 2, 2, 2, 2, 1]);
        assert_eq!(fienberg_triple(&c).mu00_hat, 2.0);
        let z = TripleStratumCounts::<f64>::new([8, 0, 2, 2, 2, 2, 1]);
        assert!(fienberg_triple(&z).is_infinite());
    }

    #[test]
    fn single_precision_closed_forms() {
        let e = lincoln_petersen(&DualStratumCounts::<f32>::new(56, 24, 14));
        assert_eq!(e.nhat_l, 100.0f32);
    }

    #[test]
    fn mixed_estimate_is_at_least_the_observed_total() {
        let t = StratifiedTable::dual_numbered(vec![d(30, 12, 9), d(20, 15, 4), d(0, 6, 5), d(44, 10, 10)]).unwrap();
        let fit = crate::glmm_fit::fit_mixed(&t, &crate::table_model::ModelSpec::mixed_dual()).unwrap();
        let e = nhat_from_mixed_fit(&fit, &t).unwrap();
        for (l, s) in e.per_stratum.iter().enumerate() {
            assert!(s.nhat_l.is_finite() && s.nhat_l >= t.stratum_observed(l) as f64);
        }
        assert_eq!(e.nhat_total, e.per_stratum.iter().fold(0.0, |a, s| a + s.nhat_l));
    }

    #[test]
    fn fixed_fit_needs_corner_point() {
        let t = StratifiedTable::dual_numbered(vec![d(56, 24, 14), d(30, 12, 9)]).unwrap();
        let spec = crate::table_model::ModelSpec::conditional_independence(Parameterization::SumZero);
        let fit = crate::glm_fit::fit_fixed(&t, &spec).unwrap();
        assert!(nhat_from_fixed_fit(&fit, &t).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn counts() -> impl Strategy<Value = (u64, u64, u64)> {
            (0u64..10_000, 0u64..10_000, 0u64..10_000)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn chapman_is_lp_with_one_more_match((a, b, c) in counts()) {
                let ch = chapman(&d(a, b, c));
                let lp = lincoln_petersen(&d(a + 1, b, c));
                prop_assert_eq!(ch.mu00_hat, lp.mu00_hat);
                prop_assert_eq!(ch.nhat_l, lp.nhat_l - 1.0);
            }

            #[test]
            fn chapman_is_smaller_when_anything_is_missed((a, b, c) in counts()) {
                prop_assume!(b * c > 0);
                prop_assert!(chapman(&d(a, b, c)).mu00_hat < lincoln_petersen(&d(a, b, c)).mu00_hat);
            }

            #[test]
            fn totals_add_up(strata in proptest::collection::vec(counts(), 1..12)) {
                let t = StratifiedTable::dual_numbered(strata.iter().map(|&(a, b, c)| d(a, b, c)).collect()).unwrap();
                for m in [ClosedForm::LP, ClosedForm::Chapman] {
                    let e = stratified_estimate(&t, m).unwrap();
                    let mut sum = 0.0;
                    for s in &e.per_stratum {
                        sum += s.nhat_l;
                    }
                    prop_assert!(e.nhat_total == sum || (e.nhat_total.is_infinite() && sum.is_infinite()));
                    prop_assert_eq!(e.is_infinite(), e.per_stratum.iter().any(|s| s.is_infinite()));
                }
            }
        }
    }
}
