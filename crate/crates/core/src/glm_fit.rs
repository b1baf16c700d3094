//! Maximum-likelihood Poisson loglinear fits by iteratively reweighted
//! least squares.

use crate::error::{spec_err, Error, Result};
use crate::linalg::{Matrix, PivotedQr};
use crate::scalar::Scalar;
use crate::table_model::{design_matrix, ColumnKey, Design, ModelSpec, RowKey, StratifiedTable, Term};

#[derive(Debug, Clone)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Condition-number estimate above which the design is rank deficient.
    pub condition_limit: f64,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { max_iter: 100, abs_tol: 1e-10, rel_tol: 1e-12, condition_limit: 1e12 }
    }
}

/// A converged fixed-effects fit.
#[derive(Debug, Clone)]
pub struct FixedFit<T> {
    pub spec: ModelSpec,
    pub columns: Vec<ColumnKey>,
    pub column_labels: Vec<String>,
    pub coefficients: Vec<T>,
    pub rows: Vec<RowKey>,
    pub fitted_means: Vec<T>,
    pub deviance: T,
    pub converged: bool,
    pub iterations: usize,
    /// Deviance after each accepted iteration.
    pub deviance_trace: Vec<T>,
}

impl<T: Scalar> FixedFit<T> {
    pub fn coefficient(&self, term: Term, stratum: Option<usize>) -> Option<T> {
        self.columns
            .iter()
            .position(|c| c.term == term && c.stratum == stratum)
            .map(|i| self.coefficients[i])
    }
}

/// `2 Σ [n log(n/μ) − (n − μ)]` with `0 log 0 = 0`.
pub fn poisson_deviance<T: Scalar>(counts: &[T], means: &[T]) -> T {
    assert_eq!(counts.len(), means.len());
    let two = T::lit(2.0);
    counts.iter().zip(means).fold(T::zero(), |acc, (&n, &mu)| {
        let term = if n > T::zero() { n * (n / mu).ln() } else { T::zero() };
        acc + two * (term - (n - mu))
    })
}

/// Poisson deviance of `fit` against the counts of `table`.
pub fn deviance<T: Scalar>(table: &StratifiedTable<T>, fit: &FixedFit<T>) -> T {
    let counts: Vec<T> = fit
        .rows
        .iter()
        .map(|rk| table.cell(rk.stratum, rk.pattern).expect("fit rows refer to available cells"))
        .collect();
    poisson_deviance(&counts, &fit.fitted_means)
}

pub fn fit_fixed<T: Scalar>(table: &StratifiedTable<T>, spec: &ModelSpec) -> Result<FixedFit<T>> {
    fit_fixed_with(table, spec, &IrlsOptions::default())
}

pub fn fit_fixed_with<T: Scalar>(table: &StratifiedTable<T>, spec: &ModelSpec, opts: &IrlsOptions) -> Result<FixedFit<T>> {
    if !spec.random_terms.is_empty() {
        return spec_err("fixed-effects fit given a model with random terms");
    }
    let design = design_matrix(spec, table)?;
    let (coefficients, fitted_means, deviance, iterations, deviance_trace) = irls(&design, opts)?;
    Ok(FixedFit {
        spec: spec.clone(),
        columns: design.columns,
        column_labels: design.column_labels,
        coefficients,
        rows: design.rows,
        fitted_means,
        deviance,
        converged: true,
        iterations,
        deviance_trace,
    })
}

type IrlsOutput<T> = (Vec<T>, Vec<T>, T, usize, Vec<T>);

fn irls<T: Scalar>(design: &Design<T>, opts: &IrlsOptions) -> Result<IrlsOutput<T>> {
    let x = &design.matrix;
    let n = &design.response;
    let (m, p) = (x.rows(), x.cols());
    if m < p {
        return spec_err(format!("rank-deficient design: {p} parameters for {m} cells"));
    }
    let cond = PivotedQr::new(x).condition_estimate();
    if !(cond.to_f64_lossy() <= opts.condition_limit) {
        return spec_err(format!("rank-deficient design (condition estimate {:.3e})", cond.to_f64_lossy()));
    }
    let rtol = T::epsilon() * T::lit(16.0) * T::count(m as u64);
    let abs_tol = T::tol(opts.abs_tol);
    let rel_tol = T::tol(opts.rel_tol);

    let mut mu: Vec<T> = n.iter().map(|&v| v + T::lit(0.5)).collect();
    let mut eta: Vec<T> = mu.iter().map(|v| v.ln()).collect();
    let mut beta: Option<Vec<T>> = None;
    let mut dev = poisson_deviance(n, &mu);
    let mut trace = Vec::new();

    for iter in 1..=opts.max_iter {
        let mut weighted = Matrix::zeros(m, p);
        let mut rhs = vec![T::zero(); m];
        for i in 0..m {
            let sw = mu[i].sqrt();
            let z = eta[i] + (n[i] - mu[i]) / mu[i];
            rhs[i] = sw * z;
            for (j, &xij) in x.row(i).iter().enumerate() {
                weighted[(i, j)] = sw * xij;
            }
        }
        let proposal = PivotedQr::new(&weighted).solve_least_squares(&rhs, rtol);

        // step halving keeps the deviance from increasing
        let mut step = proposal.clone();
        let mut accepted = None;
        for _ in 0..40 {
            let eta_new = x.mul_vec(&step);
            let mu_new: Vec<T> = eta_new.iter().map(|v| v.exp()).collect();
            let dev_new = poisson_deviance(n, &mu_new);
            let ok = dev_new.is_finite() && mu_new.iter().all(|v| *v > T::zero());
            if ok && (beta.is_none() || dev_new <= dev + T::tol(1e-12) * dev.abs().max(T::one())) {
                accepted = Some((eta_new, mu_new, dev_new));
                break;
            }
            let Some(old) = &beta else { break };
            step = old.iter().zip(&step).map(|(&a, &b)| a + (b - a) * T::lit(0.5)).collect();
        }
        let Some((eta_new, mu_new, dev_new)) = accepted else {
            return Err(Error::Numeric(format!("IRLS step failed to reduce the deviance at iteration {iter}")));
        };

        let change = (dev - dev_new).abs();
        let first = beta.is_none();
        eta = eta_new;
        mu = mu_new;
        dev = dev_new;
        beta = Some(step);
        trace.push(dev);
        if !first && (change < abs_tol || change < rel_tol * dev.abs()) {
            return Ok((beta.unwrap(), mu, dev, iter, trace));
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        last_deviance: dev.to_f64_lossy(),
        last_coefficients: beta.unwrap_or_default().iter().map(|v| v.to_f64_lossy()).collect(),
    })
}
