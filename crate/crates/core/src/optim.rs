//! Local minimizers used by the mixed-model fit: an adaptive Nelder-Mead
//! simplex search and a BFGS refinement with backtracking line search.

use crate::linalg::{dot, max_abs};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions<T> {
    /// Initial simplex edge length along each coordinate.
    pub step: Vec<T>,
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below
    /// `f_abs_tol + f_rel_tol * |f_best|` and the simplex diameter below `x_tol`.
    pub f_abs_tol: T,
    pub f_rel_tol: T,
    pub x_tol: T,
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::infinity()
    } else {
        v
    }
}

/// Minimize `f` from `x0` with the dimension-adaptive coefficients of
/// Gao and Han. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead<T, F>(mut f: F, x0: &[T], opts: &NelderMeadOptions<T>) -> Minimum<T>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    let n = x0.len();
    assert_eq!(opts.step.len(), n);
    let nf = T::count(n.max(1) as u64);
    let alpha = T::one();
    let gamma = T::one() + T::lit(2.0) / nf;
    let rho = (T::lit(0.75) - T::lit(0.5) / nf).max(T::lit(0.25));
    let sigma = (T::one() - T::one() / nf).max(T::lit(0.5));

    let mut evals = 0usize;
    let mut eval = |x: &[T], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] = x[i] + opts.step[i];
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&simplex[0].0).fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
            .fold(T::zero(), T::max);
        if best.is_finite()
            && spread <= opts.f_abs_tol + opts.f_rel_tol * best.abs()
            && diameter <= opts.x_tol
        {
            converged = true;
            break;
        }

        let mut centroid = vec![T::zero(); n];
        for (x, _) in &simplex[..n] {
            for (c, &xi) in centroid.iter_mut().zip(x) {
                *c = *c + xi;
            }
        }
        centroid.iter_mut().for_each(|c| *c = *c / nf);

        let along = |t: T, worst: &[T]| -> Vec<T> {
            centroid.iter().zip(worst).map(|(&c, &w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha, &simplex[n].0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma, &simplex[n].0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(alpha * rho, &simplex[n].0);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho, &simplex[n].0);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            for (xi, &bi) in vertex.0.iter_mut().zip(&x_best) {
                *xi = bi + sigma * (*xi - bi);
            }
            vertex.1 = eval(&vertex.0, &mut evals);
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    Minimum { x, value, evals, converged }
}

#[derive(Debug, Clone)]
pub struct BfgsOptions<T> {
    pub max_iter: usize,
    /// Stop when the gradient max-norm drops below this.
    pub grad_tol: T,
}

/// Quasi-Newton refinement. `fg` returns the objective and its gradient,
/// or `None` where the objective cannot be evaluated.
pub fn bfgs<T, F>(mut fg: F, x0: &[T], opts: &BfgsOptions<T>) -> Option<Minimum<T>>
where
    T: Scalar,
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let n = x0.len();
    let mut evals = 1usize;
    let (mut fx, mut g) = fg(x0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut x = x0.to_vec();
    // inverse Hessian approximation, row-major
    let mut h = vec![T::zero(); n * n];
    for i in 0..n {
        h[i * n + i] = T::one();
    }
    let mut converged = max_abs(&g) < opts.grad_tol;
    let c1 = T::lit(1e-4);

    for iter in 0..opts.max_iter {
        if converged {
            break;
        }
        let mut d: Vec<T> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            // reset to steepest descent
            h.iter_mut().for_each(|v| *v = T::zero());
            for i in 0..n {
                h[i * n + i] = T::one();
            }
            d = g.iter().map(|&v| -v).collect();
            slope = dot(&g, &d);
        }
        if iter == 0 {
            // keep the first step modest; the identity scaling knows nothing
            let scale = T::one() / max_abs(&d).max(T::one());
            d.iter_mut().for_each(|v| *v = *v * scale);
            slope = slope * scale;
        }

        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + t * b).collect();
            evals += 1;
            if let Some((fnew, gnew)) = fg(&xn) {
                if fnew.is_finite() && fnew <= fx + c1 * t * slope && gnew.iter().all(|v| v.is_finite()) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t = t * T::lit(0.5);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };

        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gnew.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            let hy: Vec<T> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = T::one() / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = h[i * n + j] - rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let progress = (fx - fnew).abs();
        x = xn;
        fx = fnew;
        g = gnew;
        converged = max_abs(&g) < opts.grad_tol;
        if !converged && progress <= T::epsilon() * fx.abs().max(T::one()) && max_abs(&s) <= T::epsilon().sqrt() {
            break;
        }
    }
    Some(Minimum { x, value: fx, evals, converged })
}
