//! Mixed-effects Poisson loglinear models fitted by maximizing the Laplace
//! approximation to the marginal likelihood.
//!
//! Random effects are independent across terms and strata,
//! `u_kl ~ N(0, σ_k²)`, and enter through the same sum-zero list contrasts
//! as their fixed counterparts, so a random slope is one scalar per
//! (term, stratum). Internally the effects are carried in spherical form
//! `u_k = σ_k v_k`, which keeps the penalized problem well conditioned as
//! `σ_k → 0` and lets a variance component sit exactly on the boundary.
//!
//! For fixed `β` and `σ` the conditional modes are found per stratum by
//! damped Newton iteration; the stratum blocks are independent. The
//! objective is
//!
//! `-2 log L ≈ -2 ℓ(β, û) + |v̂|² + log det(I + Λ Zᵀ M Z Λ)`
//!
//! with `Λ = diag(σ)` and `M = diag(μ̂)`, minimized over `(β, σ)`.

use crate::error::{spec_err, Error, Result};
use crate::glm_fit::fit_fixed;
use crate::linalg::{dot, max_abs, Cholesky, Matrix};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};
use crate::scalar::{ln_factorial, Scalar};
use crate::table_model::{
    contrast, design_columns, design_row, observed_total, CellPattern, ColumnKey, ModelSpec, Parameterization, RandomTerm,
    StratifiedTable,
};

/// Maximum inner Newton iterations per stratum.
pub const INNER_MAX_ITER: usize = 50;
/// Standard deviations below this are reported as an exact zero variance.
pub const BOUNDARY_SD: f64 = 1e-6;
/// Size of the Newton step `H⁻¹ g` at the optimum that raises a warning.
pub const GRADIENT_WARNING: f64 = 2e-3;

/// Variances of the random terms, aligned with `terms`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents<T> {
    pub terms: Vec<RandomTerm>,
    pub sigma2: Vec<T>,
}

impl<T: Scalar> VarianceComponents<T> {
    pub fn new(spec: &ModelSpec, sigma2: Vec<T>) -> Result<Self> {
        let terms: Vec<RandomTerm> = spec.random_terms.iter().copied().collect();
        if terms.len() != sigma2.len() {
            return spec_err(format!("{} variances for {} random terms", sigma2.len(), terms.len()));
        }
        if sigma2.iter().any(|s| !(*s >= T::zero())) {
            return spec_err("variance components must be nonnegative");
        }
        Ok(Self { terms, sigma2 })
    }

    pub fn uniform(spec: &ModelSpec, sigma2: T) -> Result<Self> {
        Self::new(spec, vec![sigma2; spec.random_terms.len()])
    }

    pub fn get(&self, term: RandomTerm) -> Option<T> {
        self.terms.iter().position(|t| *t == term).map(|i| self.sigma2[i])
    }

    pub fn sd(&self) -> Vec<T> {
        self.sigma2.iter().map(|s| s.sqrt()).collect()
    }
}

/// Predicted random effects `û`, indexed `[term][stratum]`, plus diagnostics
/// of the inner solve.
#[derive(Debug, Clone)]
pub struct ConditionalModes<T> {
    pub terms: Vec<RandomTerm>,
    pub modes: Vec<Vec<T>>,
    /// Strata whose Newton iteration hit the cap.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MixedFit<T> {
    pub spec: ModelSpec,
    pub strata: usize,
    pub fixed_columns: Vec<ColumnKey>,
    pub fixed_labels: Vec<String>,
    pub fixed_coefficients: Vec<T>,
    /// `û[term][stratum]`
    pub random_modes: Vec<Vec<T>>,
    pub variance: VarianceComponents<T>,
    pub laplace_deviance: T,
    pub converged: bool,
    pub convergence_warnings: Vec<String>,
    /// Objective evaluations used by the outer search.
    pub evaluations: usize,
}

impl<T: Scalar> MixedFit<T> {
    pub fn mode(&self, term: RandomTerm, stratum: usize) -> Option<T> {
        self.variance.terms.iter().position(|t| *t == term).map(|k| self.random_modes[k][stratum])
    }
}

/// Laplace-approximated mixed model over one table.
#[derive(Debug, Clone)]
pub struct MixedModel<T> {
    spec: ModelSpec,
    strata: usize,
    patterns: Vec<CellPattern>,
    /// `[stratum * cells + cell]`
    counts: Vec<T>,
    x: Matrix<T>,
    /// random design row per cell pattern
    z: Vec<Vec<T>>,
    columns: Vec<ColumnKey>,
    labels: Vec<String>,
    terms: Vec<RandomTerm>,
    log_factorials: T,
}

/// Largest random-effect dimension per stratum (all seven two-list terms).
const MAX_Q: usize = 7;
/// Largest number of cells per stratum (three lists, missed cell included).
const MAX_M: usize = 8;

type Vq<T> = [T; MAX_Q];
type Mq<T> = [[T; MAX_Q]; MAX_Q];

struct StratumMode<T> {
    v: Vq<T>,
    mu: [T; MAX_M],
    eta: [T; MAX_M],
    hinv: Mq<T>,
    log_det: T,
    converged: bool,
}

/// In-place lower Cholesky factor of the leading `q × q` block.
fn small_cholesky<T: Scalar>(mut a: Mq<T>, q: usize) -> Option<Mq<T>> {
    for j in 0..q {
        let mut d = a[j][j];
        for k in 0..j {
            d = d - a[j][k] * a[j][k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..q {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
        for i in 0..j {
            a[i][j] = T::zero();
        }
    }
    Some(a)
}

fn small_solve<T: Scalar>(l: &Mq<T>, q: usize, b: &Vq<T>) -> Vq<T> {
    let mut y = *b;
    for i in 0..q {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    for i in (0..q).rev() {
        let mut s = y[i];
        for k in i + 1..q {
            s = s - l[k][i] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

fn small_inverse<T: Scalar>(l: &Mq<T>, q: usize) -> Mq<T> {
    let mut inv = [[T::zero(); MAX_Q]; MAX_Q];
    for j in 0..q {
        let mut e = [T::zero(); MAX_Q];
        e[j] = T::one();
        let col = small_solve(l, q, &e);
        for i in 0..q {
            inv[i][j] = col[i];
        }
    }
    inv
}

fn small_dot<T: Scalar>(a: &Vq<T>, b: &Vq<T>, q: usize) -> T {
    (0..q).fold(T::zero(), |s, k| s + a[k] * b[k])
}

/// One evaluation of the Laplace objective.
#[derive(Debug, Clone)]
pub struct LaplaceEvaluation<T> {
    pub value: T,
    /// Gradient in `(β, log σ)` when requested.
    pub gradient: Option<Vec<T>>,
    /// Spherical modes `v̂[stratum][term]`.
    pub spherical_modes: Vec<Vec<T>>,
    pub inner_failures: Vec<usize>,
}

impl<T: Scalar> MixedModel<T> {
    pub fn new(table: &StratifiedTable<T>, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if spec.lists != table.lists() {
            return spec_err(format!(
                "model is for {} lists but the table has {}",
                spec.lists.count(),
                table.lists().count()
            ));
        }
        if spec.parameterization != Parameterization::SumZero {
            return spec_err("mixed models use the sum-zero parameterization");
        }
        let strata = table.len();
        let mut patterns = spec.lists.observed_patterns().to_vec();
        if spec.needs_unobserved_cell() {
            patterns.push(CellPattern::NONE);
        }
        let columns = design_columns(spec, strata);
        let cells = patterns.len();
        let mut counts = Vec::with_capacity(strata * cells);
        let mut rows = Vec::with_capacity(strata * cells);
        for l in 0..strata {
            for &p in &patterns {
                let Some(n) = table.cell(l, p) else {
                    return spec_err(format!(
                        "model needs the unobserved cell but stratum {:?} has no truth count",
                        table.labels()[l]
                    ));
                };
                counts.push(n);
                rows.push(design_row(spec, &columns, strata, l, p));
            }
        }
        let terms: Vec<RandomTerm> = spec.random_terms.iter().copied().collect();
        let z = patterns
            .iter()
            .map(|&p| terms.iter().map(|t| contrast::<T>(spec.parameterization, t.lists(), p)).collect())
            .collect();
        let log_factorials = counts.iter().fold(T::zero(), |s, &n| s + ln_factorial(n));
        let labels = columns
            .iter()
            .map(|c| match c.stratum {
                Some(l) => format!("{}[{}]", c.term.name(), table.labels()[l]),
                None => c.term.name().to_string(),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            strata,
            patterns,
            counts,
            x: Matrix::from_rows(&rows),
            z,
            columns,
            labels,
            terms,
            log_factorials,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn strata(&self) -> usize {
        self.strata
    }

    pub fn fixed_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn random_dim(&self) -> usize {
        self.terms.len()
    }

    pub fn fixed_columns(&self) -> &[ColumnKey] {
        &self.columns
    }

    fn cells(&self) -> usize {
        self.patterns.len()
    }

    /// Scaled random design `w_c = z_c ∘ σ` per cell.
    fn scaled_design(&self, sd: &[T]) -> [Vq<T>; MAX_M] {
        let mut w = [[T::zero(); MAX_Q]; MAX_M];
        for (c, zc) in self.z.iter().enumerate() {
            for (k, (&a, &s)) in zc.iter().zip(sd).enumerate() {
                w[c][k] = a * s;
            }
        }
        w
    }

    /// Damped Newton solve for the spherical modes of stratum `l`.
    fn solve_stratum(&self, l: usize, offsets: &[T; MAX_M], w: &[Vq<T>; MAX_M], start: Option<&[T]>) -> Option<StratumMode<T>> {
        let q = self.terms.len();
        let m = self.cells();
        let counts = &self.counts[l * m..(l + 1) * m];
        let scale = counts.iter().fold(T::one(), |s, &n| s + n);
        let tol = T::tol(1e-12) * scale;

        let penalized = |v: &Vq<T>| -> (T, [T; MAX_M], [T; MAX_M]) {
            let mut eta = [T::zero(); MAX_M];
            let mut mu = [T::zero(); MAX_M];
            let mut val = -T::lit(0.5) * small_dot(v, v, q);
            for c in 0..m {
                eta[c] = offsets[c] + small_dot(&w[c], v, q);
                mu[c] = eta[c].exp();
                val = val + counts[c] * eta[c] - mu[c];
            }
            (val, eta, mu)
        };
        let hessian = |mu: &[T; MAX_M]| -> Mq<T> {
            let mut h = [[T::zero(); MAX_Q]; MAX_Q];
            for a in 0..q {
                h[a][a] = T::one();
            }
            for c in 0..m {
                for a in 0..q {
                    let wa = mu[c] * w[c][a];
                    for b in 0..=a {
                        h[a][b] = h[a][b] + wa * w[c][b];
                    }
                }
            }
            for a in 0..q {
                for b in a + 1..q {
                    h[a][b] = h[b][a];
                }
            }
            h
        };

        let mut v = [T::zero(); MAX_Q];
        if let Some(s) = start {
            v[..q].copy_from_slice(&s[..q]);
        }
        let (mut phi, mut eta, mut mu) = penalized(&v);
        if !phi.is_finite() {
            v = [T::zero(); MAX_Q];
            (phi, eta, mu) = penalized(&v);
            if !phi.is_finite() {
                return None;
            }
        }
        let mut converged = false;
        for _ in 0..INNER_MAX_ITER {
            let mut grad = [T::zero(); MAX_Q];
            for k in 0..q {
                grad[k] = -v[k];
            }
            for c in 0..m {
                let r = counts[c] - mu[c];
                for k in 0..q {
                    grad[k] = grad[k] + r * w[c][k];
                }
            }
            let gmax = grad[..q].iter().fold(T::zero(), |a, g| a.max(g.abs()));
            if gmax <= tol {
                converged = true;
                break;
            }
            let chol = small_cholesky(hessian(&mu), q)?;
            let step = small_solve(&chol, q, &grad);
            // near the optimum φ changes below its rounding error
            let slack = T::epsilon() * T::lit(64.0) * (T::one() + phi.abs());
            let mut t = T::one();
            let mut moved = false;
            for _ in 0..60 {
                let mut cand = v;
                for k in 0..q {
                    cand[k] = v[k] + t * step[k];
                }
                let (p2, e2, m2) = penalized(&cand);
                if p2.is_finite() && p2 >= phi - slack {
                    moved = cand != v;
                    v = cand;
                    phi = p2;
                    eta = e2;
                    mu = m2;
                    break;
                }
                t = t * T::lit(0.5);
            }
            if !moved {
                // no representable ascent left: at the floating-point optimum
                converged = gmax <= tol * T::lit(1e3);
                break;
            }
        }
        let chol = small_cholesky(hessian(&mu), q)?;
        let log_det = (0..q).fold(T::zero(), |s, k| s + chol[k][k].ln()) * T::lit(2.0);
        Some(StratumMode { log_det, hinv: small_inverse(&chol, q), v, mu, eta, converged })
    }

    /// Laplace objective, and optionally its gradient, at `(β, σ)` given as
    /// standard deviations. `warm` carries spherical modes between calls.
    pub fn evaluate(&self, beta: &[T], sd: &[T], want_gradient: bool, warm: Option<&[Vec<T>]>) -> Option<LaplaceEvaluation<T>> {
        assert_eq!(beta.len(), self.fixed_dim());
        assert_eq!(sd.len(), self.random_dim());
        let m = self.cells();
        let p = self.fixed_dim();
        let q = self.random_dim();
        let two = T::lit(2.0);
        let mut value = two * self.log_factorials;
        let mut grad = if want_gradient { Some(vec![T::zero(); p + q]) } else { None };
        let mut modes = Vec::with_capacity(self.strata);
        let mut failures = Vec::new();

        let w = self.scaled_design(sd);
        for l in 0..self.strata {
            let mut offsets = [T::zero(); MAX_M];
            for (c, o) in offsets.iter_mut().enumerate().take(m) {
                *o = dot(self.x.row(l * m + c), beta);
            }
            let start = warm.and_then(|w| w.get(l)).map(Vec::as_slice);
            let sm = self.solve_stratum(l, &offsets, &w, start)?;
            if !sm.converged {
                failures.push(l);
            }
            let counts = &self.counts[l * m..(l + 1) * m];
            let loglik = (0..m).fold(T::zero(), |s, c| s + counts[c] * sm.eta[c] - sm.mu[c]);
            value = value - two * loglik + small_dot(&sm.v, &sm.v, q) + sm.log_det;

            if let Some(g) = grad.as_mut() {
                // a_c = μ_c w_cᵀ H⁻¹ w_c ; b = H⁻¹ Σ a_c w_c
                let mut aw = [T::zero(); MAX_Q];
                let mut a = [T::zero(); MAX_M];
                for c in 0..m {
                    let mut hw = [T::zero(); MAX_Q];
                    for i in 0..q {
                        hw[i] = small_dot(&sm.hinv[i], &w[c], q);
                    }
                    a[c] = sm.mu[c] * small_dot(&w[c], &hw, q);
                    for k in 0..q {
                        aw[k] = aw[k] + a[c] * w[c][k];
                    }
                }
                let mut b = [T::zero(); MAX_Q];
                for i in 0..q {
                    b[i] = small_dot(&sm.hinv[i], &aw, q);
                }
                for c in 0..m {
                    let coef = -two * (counts[c] - sm.mu[c]) + a[c] - sm.mu[c] * small_dot(&w[c], &b, q);
                    for (gj, &xj) in g[..p].iter_mut().zip(self.x.row(l * m + c)) {
                        *gj = *gj + coef * xj;
                    }
                }
                for k in 0..q {
                    let vk = sm.v[k];
                    g[p + k] = g[p + k] - two * vk * vk + two * (T::one() - sm.hinv[k][k]) + two * vk * b[k];
                }
            }
            modes.push(sm.v[..q].to_vec());
        }
        if !value.is_finite() {
            return None;
        }
        Some(LaplaceEvaluation { value, gradient: grad, spherical_modes: modes, inner_failures: failures })
    }

    /// Random effects on the `u` scale for given spherical modes.
    fn to_u_scale(&self, spherical: &[Vec<T>], sd: &[T]) -> Vec<Vec<T>> {
        (0..self.terms.len()).map(|k| spherical.iter().map(|v| v[k] * sd[k]).collect()).collect()
    }

    /// Gradient of the penalized log-likelihood in `u` at the given modes,
    /// over terms with positive variance. Used to check stationarity.
    pub fn penalized_gradient_u(&self, beta: &[T], sigma: &VarianceComponents<T>, modes: &[Vec<T>]) -> Vec<T> {
        let m = self.cells();
        let mut out = Vec::new();
        for l in 0..self.strata {
            let mut g = vec![T::zero(); self.terms.len()];
            for c in 0..m {
                let mut eta = dot(self.x.row(l * m + c), beta);
                for k in 0..self.terms.len() {
                    eta = eta + self.z[c][k] * modes[k][l];
                }
                let r = self.counts[l * m + c] - eta.exp();
                for k in 0..self.terms.len() {
                    g[k] = g[k] + r * self.z[c][k];
                }
            }
            for (k, gk) in g.iter().enumerate() {
                let s2 = sigma.sigma2[k];
                if s2 > T::zero() {
                    out.push(*gk - modes[k][l] / s2);
                }
            }
        }
        out
    }
}

fn check_sigma<T: Scalar>(spec: &ModelSpec, sigma: &VarianceComponents<T>) -> Result<()> {
    let terms: Vec<RandomTerm> = spec.random_terms.iter().copied().collect();
    if sigma.terms != terms {
        return spec_err("variance components do not match the model's random terms");
    }
    Ok(())
}

/// Conditional modes `û` maximizing `ℓ(β, u) − ½ Σ u²/σ²`.
pub fn conditional_modes<T: Scalar>(
    table: &StratifiedTable<T>,
    spec: &ModelSpec,
    beta: &[T],
    sigma: &VarianceComponents<T>,
) -> Result<ConditionalModes<T>> {
    check_sigma(spec, sigma)?;
    let model = MixedModel::new(table, spec)?;
    if beta.len() != model.fixed_dim() {
        return spec_err(format!("{} coefficients for {} fixed columns", beta.len(), model.fixed_dim()));
    }
    let sd = sigma.sd();
    let eval = model
        .evaluate(beta, &sd, false, None)
        .ok_or_else(|| Error::Numeric("conditional-mode solve produced non-finite values".into()))?;
    let warnings = eval
        .inner_failures
        .iter()
        .map(|l| format!("conditional-mode iteration cap ({INNER_MAX_ITER}) reached in stratum {}", table.labels()[*l]))
        .collect();
    Ok(ConditionalModes { terms: model.terms.clone(), modes: model.to_u_scale(&eval.spherical_modes, &sd), warnings })
}

/// Laplace approximation to `-2 log` of the marginal likelihood.
pub fn laplace_objective<T: Scalar>(
    table: &StratifiedTable<T>,
    spec: &ModelSpec,
    beta: &[T],
    sigma: &VarianceComponents<T>,
) -> Result<T> {
    check_sigma(spec, sigma)?;
    let model = MixedModel::new(table, spec)?;
    if beta.len() != model.fixed_dim() {
        return spec_err(format!("{} coefficients for {} fixed columns", beta.len(), model.fixed_dim()));
    }
    model
        .evaluate(beta, &sigma.sd(), false, None)
        .map(|e| e.value)
        .ok_or_else(|| Error::Numeric("Laplace objective is not finite or the mode Hessian is not positive definite".into()))
}

/// Objective and gradient in `(β, log σ)`.
pub fn laplace_gradient<T: Scalar>(
    table: &StratifiedTable<T>,
    spec: &ModelSpec,
    beta: &[T],
    log_sd: &[T],
) -> Result<(T, Vec<T>)> {
    let model = MixedModel::new(table, spec)?;
    if beta.len() != model.fixed_dim() || log_sd.len() != model.random_dim() {
        return spec_err("parameter dimensions do not match the model");
    }
    let sd: Vec<T> = log_sd.iter().map(|t| t.exp()).collect();
    let e = model
        .evaluate(beta, &sd, true, None)
        .ok_or_else(|| Error::Numeric("Laplace objective is not finite".into()))?;
    Ok((e.value, e.gradient.expect("gradient requested")))
}

/// Options of the outer search.
#[derive(Debug, Clone)]
pub struct MixedFitOptions {
    pub start_sd: f64,
    pub max_evals: usize,
    /// Gradient polish after the simplex search.
    pub polish: bool,
}

impl Default for MixedFitOptions {
    fn default() -> Self {
        Self { start_sd: 0.1, max_evals: 4000, polish: true }
    }
}

pub fn fit_mixed<T: Scalar>(table: &StratifiedTable<T>, spec: &ModelSpec) -> Result<MixedFit<T>> {
    fit_mixed_with(table, spec, &MixedFitOptions::default())
}

pub fn fit_mixed_with<T: Scalar>(table: &StratifiedTable<T>, spec: &ModelSpec, opts: &MixedFitOptions) -> Result<MixedFit<T>> {
    if spec.random_terms.is_empty() {
        return spec_err("mixed fit needs at least one random term");
    }
    if table.len() < 2 {
        return spec_err("random effects need at least two strata");
    }
    if observed_total(table) == 0 {
        return spec_err("table has no observed counts");
    }
    let model = MixedModel::new(table, spec)?;
    let p = model.fixed_dim();
    let q = model.random_dim();

    // start from the fixed part fitted without random terms
    let fixed_spec = ModelSpec::new(spec.lists, spec.terms.iter().copied(), [], spec.parameterization)?;
    let start_fit = fit_fixed(table, &fixed_spec)?;
    let mut x0 = start_fit.coefficients.clone();
    x0.extend(std::iter::repeat_n(T::lit(opts.start_sd), q));

    let mut warnings = Vec::new();
    let mut evals = 0usize;
    // the objective is even in each σ, so the search runs over signed σ
    let split = |x: &[T]| -> (Vec<T>, Vec<T>) { (x[..p].to_vec(), x[p..].iter().map(|t| t.abs()).collect()) };

    let mut warm: Vec<Vec<T>> = vec![vec![T::zero(); q]; model.strata()];
    let objective = |x: &[T], warm: &mut Vec<Vec<T>>| -> T {
        let (beta, sd) = split(x);
        match model.evaluate(&beta, &sd, false, Some(warm)) {
            Some(e) => {
                *warm = e.spherical_modes;
                e.value
            }
            None => T::infinity(),
        }
    };

    let mut step = vec![T::lit(0.1); p];
    step.extend(std::iter::repeat_n(T::lit(opts.start_sd * 0.5), q));
    let nm_opts = NelderMeadOptions {
        step: step.clone(),
        max_evals: opts.max_evals,
        f_abs_tol: T::tol(1e-7),
        f_rel_tol: T::tol(1e-10),
        x_tol: T::tol(1e-4),
    };
    let first = nelder_mead(|x| objective(x, &mut warm), &x0, &nm_opts);
    evals += first.evals;
    if !first.value.is_finite() {
        return Err(Error::Fit("Laplace objective not finite at any simplex vertex".into()));
    }
    // restart from a perturbed copy of the best point
    let restart_start: Vec<T> = first.x.iter().zip(&step).map(|(&x, &s)| x + s * T::lit(0.25)).collect();
    let restart_opts = NelderMeadOptions { step: step.iter().map(|&s| s * T::lit(0.5)).collect(), ..nm_opts };
    let second = nelder_mead(|x| objective(x, &mut warm), &restart_start, &restart_opts);
    evals += second.evals;
    let mut best = if second.value < first.value { second } else { first };
    if !best.converged {
        warnings.push(format!("simplex search stopped at the evaluation limit ({})", opts.max_evals));
    }

    if opts.polish {
        let mut polish_warm = warm.clone();
        let refined = bfgs(
            |x| {
                let (beta, sd) = split(x);
                let e = model.evaluate(&beta, &sd, true, Some(&polish_warm))?;
                polish_warm = e.spherical_modes.clone();
                let mut g = e.gradient.expect("requested");
                // d/dσ = (d/d log σ) / σ
                for (gk, &xk) in g[p..].iter_mut().zip(&x[p..]) {
                    *gk = if xk == T::zero() { T::zero() } else { *gk / xk };
                }
                Some((e.value, g))
            },
            &best.x,
            &BfgsOptions { max_iter: 200, grad_tol: T::tol(1e-7) },
        );
        if let Some(r) = refined {
            evals += r.evals;
            if r.value <= best.value {
                best.x = r.x;
                best.value = r.value;
            }
        }
    }

    let (beta, mut sd) = split(&best.x);
    for s in sd.iter_mut() {
        if *s < T::lit(BOUNDARY_SD) {
            *s = T::zero();
        }
    }
    let final_eval = model
        .evaluate(&beta, &sd, true, None)
        .ok_or_else(|| Error::Fit("Laplace objective not finite at the optimum".into()))?;
    if let Some(w) = scaled_gradient_warning(&model, &beta, &sd, &final_eval) {
        warnings.push(w);
    }
    for l in &final_eval.inner_failures {
        warnings.push(format!("conditional-mode iteration cap ({INNER_MAX_ITER}) reached in stratum {}", table.labels()[*l]));
    }

    let random_modes = model.to_u_scale(&final_eval.spherical_modes, &sd);
    let variance = VarianceComponents { terms: model.terms.clone(), sigma2: sd.iter().map(|s| *s * *s).collect() };
    Ok(MixedFit {
        spec: spec.clone(),
        strata: model.strata(),
        fixed_columns: model.columns.clone(),
        fixed_labels: model.labels.clone(),
        fixed_coefficients: beta,
        random_modes,
        variance,
        laplace_deviance: final_eval.value,
        converged: warnings.is_empty(),
        convergence_warnings: warnings,
        evaluations: evals,
    })
}

/// Convergence check on the Newton step `H⁻¹ g` at the optimum, over the
/// fixed effects and the standard deviations off the boundary. `H` is a
/// central-difference Hessian of the analytic gradient in `(β, σ)`.
fn scaled_gradient_warning<T: Scalar>(
    model: &MixedModel<T>,
    beta: &[T],
    sd: &[T],
    at: &LaplaceEvaluation<T>,
) -> Option<String> {
    let p = beta.len();
    let interior: Vec<usize> = (0..p + sd.len()).filter(|&i| i < p || sd[i - p] > T::zero()).collect();
    let grad_sigma = |e: &LaplaceEvaluation<T>, sd: &[T]| -> Vec<T> {
        let mut g = e.gradient.clone().expect("requested");
        for (gk, &s) in g[p..].iter_mut().zip(sd) {
            *gk = if s > T::zero() { *gk / s } else { T::zero() };
        }
        g
    };
    let g0 = grad_sigma(at, sd);
    let n = interior.len();
    let mut h = Matrix::zeros(n, n);
    for (a, &i) in interior.iter().enumerate() {
        let x_i = if i < p { beta[i] } else { sd[i - p] };
        let step = T::lit(1e-4) * x_i.abs().max(T::one());
        let side = |sign: T| -> Option<Vec<T>> {
            let (mut b, mut s) = (beta.to_vec(), sd.to_vec());
            if i < p {
                b[i] = b[i] + sign * step;
            } else {
                s[i - p] = (s[i - p] + sign * step).abs();
            }
            let e = model.evaluate(&b, &s, true, Some(&at.spherical_modes))?;
            Some(grad_sigma(&e, &s))
        };
        let (Some(up), Some(down)) = (side(T::one()), side(-T::one())) else {
            return Some("Laplace objective not finite next to the optimum".into());
        };
        for (c, &j) in interior.iter().enumerate() {
            h[(a, c)] = (up[j] - down[j]) / (T::lit(2.0) * step);
        }
    }
    for a in 0..n {
        for c in 0..a {
            let m = (h[(a, c)] + h[(c, a)]) * T::lit(0.5);
            h[(a, c)] = m;
            h[(c, a)] = m;
        }
    }
    let Some(chol) = Cholesky::new(&h) else {
        return Some("Hessian of the Laplace objective is not positive definite at the optimum".into());
    };
    let g: Vec<T> = interior.iter().map(|&i| g0[i]).collect();
    let scaled = max_abs(&chol.solve(&g));
    (scaled > T::lit(GRADIENT_WARNING)).then(|| {
        format!(
            "model failed to converge: max|H⁻¹g| = {:.3e} (tol = {GRADIENT_WARNING})",
            scaled.to_f64_lossy()
        )
    })
}

/// Predicted mean of the cell missed by every list in stratum `l`: the
/// linear predictor at contrast −1 for each list, random effects included.
pub fn predict_missing_mixed<T: Scalar>(fit: &MixedFit<T>, l: usize) -> T {
    let row: Vec<T> = design_row(&fit.spec, &fit.fixed_columns, fit.strata, l, CellPattern::NONE);
    let mut eta = dot(&row, &fit.fixed_coefficients);
    for (k, term) in fit.variance.terms.iter().enumerate() {
        let z: T = contrast(fit.spec.parameterization, term.lists(), CellPattern::NONE);
        eta = eta + z * fit.random_modes[k][l];
    }
    eta.exp()
}
