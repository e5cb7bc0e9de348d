//! Generic nonsmooth nonconvex local optimization.
//!
//! A quasi-Newton (BFGS) pass with a weak Wolfe line search approximates a
//! local minimizer quickly; gradient sampling then refines it, searching for
//! a point where a convex combination of gradients at nearby points has
//! small norm and returning that norm as a rough optimality measure.
//! Objectives may evaluate to infinity (stability barriers): infinite points
//! are rejected by the line search and resampled by gradient sampling, never
//! accepted as iterates.

use ndarray::{Array1, Array2};
use ndarray_linalg::LeastSquaresSvd;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("objective is infinite at the starting point")]
    InfiniteStart,
    #[error("oracle returned a finite value without a usable gradient")]
    MissingGradient,
}

/// One oracle evaluation: a value (possibly infinite) and, when finite, the
/// gradient at that point.
#[derive(Debug, Clone)]
pub struct OracleEval {
    pub value: f64,
    pub grad: Option<Array1<f64>>,
}

impl OracleEval {
    pub fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            grad: None,
        }
    }
}

/// Evaluation contract for the optimizers: deterministic for fixed theta,
/// constant gradient length.
pub trait Oracle: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, theta: &Array1<f64>) -> OracleEval;
}

/// A closure-backed oracle, mostly for tests and small experiments.
pub struct FnOracle<F> {
    dim: usize,
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&Array1<f64>) -> OracleEval + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&Array1<f64>) -> OracleEval + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, theta: &Array1<f64>) -> OracleEval {
        (self.f)(theta)
    }
}

/// Wall-clock budget. `unlimited()` never expires.
#[derive(Debug, Clone, Copy)]
pub struct TimeBudget {
    deadline: Option<Instant>,
}

impl TimeBudget {
    pub fn unlimited() -> Self {
        Self { deadline: None }
    }

    pub fn from_secs(secs: f64) -> Self {
        Self {
            deadline: Some(Instant::now() + Duration::from_secs_f64(secs.max(0.0))),
        }
    }

    pub fn until(deadline: Instant) -> Self {
        Self {
            deadline: Some(deadline),
        }
    }

    pub fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient norm fell below the tolerance.
    GradTol,
    /// Iteration cap reached.
    MaxIter,
    /// Wall-clock budget expired.
    TimeBudget,
    /// The line search could not satisfy the weak Wolfe conditions — the
    /// normal outcome at a nonsmooth minimizer.
    LineSearchFail,
    /// Gradient sampling certified stationarity at its final radius.
    SamplingStationary,
    /// The objective dropped below the caller's target level.
    TargetReached,
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone)]
pub struct OptReport {
    pub theta_best: Array1<f64>,
    pub f_best: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Norm of the min-norm convex combination from the last sampling round,
    /// or the last gradient norm for BFGS.
    pub stationarity_measure: f64,
    /// Objective values over accepted iterates, starting at f(theta0);
    /// strictly decreasing after the first entry.
    pub accepted: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    /// Terminate when the gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Armijo constant.
    pub c1: f64,
    /// Weak Wolfe curvature constant.
    pub c2: f64,
    /// Optional early-exit level: stop as soon as f drops strictly below it.
    pub target: Option<f64>,
    pub budget: TimeBudget,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 1000,
            c1: 1e-4,
            c2: 0.9,
            target: None,
            budget: TimeBudget::unlimited(),
        }
    }
}

/// An accepted line-search point.
#[derive(Debug, Clone)]
pub struct LineSearchHit {
    pub step: f64,
    pub theta: Array1<f64>,
    pub value: f64,
    pub grad: Array1<f64>,
}

#[derive(Debug, Error)]
pub enum LineSearchError {
    #[error("search direction is not a descent direction")]
    NotDescent,
    /// Bisection exhausted without satisfying both Wolfe conditions. `best`
    /// carries the lowest strictly-decreasing point found, if any.
    #[error("line search failed to satisfy the weak Wolfe conditions")]
    Fail { best: Option<Box<LineSearchHit>> },
}

/// Maximum number of bisection halvings before the search gives up.
pub const MAX_BISECT: usize = 50;
const MAX_EXPAND: usize = 30;

/// Weak Wolfe line search by expansion/bisection.
///
/// Finds `t` with `f(theta + t dir) < f0 + c1 t g0'dir` (strict decrease)
/// and `g(theta + t dir)'dir >= c2 g0'dir`. Infinite values shrink the
/// bracket, so the returned point is always finite.
pub fn weak_wolfe_search(
    f: &dyn Oracle,
    theta: &Array1<f64>,
    dir: &Array1<f64>,
    f0: f64,
    g0: &Array1<f64>,
    c1: f64,
    c2: f64,
) -> Result<LineSearchHit, LineSearchError> {
    let g0d = g0.dot(dir);
    if !(g0d < 0.0) {
        return Err(LineSearchError::NotDescent);
    }
    let mut t = 1.0_f64;
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut bisects = 0;
    let mut expands = 0;
    let mut best: Option<Box<LineSearchHit>> = None;

    loop {
        let cand = theta + &(dir * t);
        let e = f.eval(&cand);
        let decreased = e.value.is_finite() && e.value < f0 + c1 * t * g0d && e.grad.is_some();
        if decreased {
            let grad = e.grad.clone().expect("checked");
            if best.as_ref().is_none_or(|b| e.value < b.value) {
                best = Some(Box::new(LineSearchHit {
                    step: t,
                    theta: cand.clone(),
                    value: e.value,
                    grad: grad.clone(),
                }));
            }
            if grad.dot(dir) >= c2 * g0d {
                return Ok(LineSearchHit {
                    step: t,
                    theta: cand,
                    value: e.value,
                    grad,
                });
            }
            lo = t;
        } else {
            hi = t;
        }

        let next = if hi.is_finite() {
            bisects += 1;
            if bisects > MAX_BISECT {
                return Err(LineSearchError::Fail { best });
            }
            0.5 * (lo + hi)
        } else {
            expands += 1;
            if expands > MAX_EXPAND {
                return Err(LineSearchError::Fail { best });
            }
            2.0 * t
        };
        if next == lo || next == hi || !next.is_finite() {
            // floating-point interval collapsed
            return Err(LineSearchError::Fail { best });
        }
        t = next;
    }
}

/// Relative curvature floor below which the BFGS update is skipped to keep
/// the inverse Hessian positive definite.
const CURVATURE_FLOOR: f64 = 1e-14;

/// BFGS with a weak Wolfe line search.
///
/// Monotone across accepted steps; terminates on gradient tolerance, the
/// iteration cap, the time budget, a crossed target level, or line-search
/// failure (the normal nonsmooth outcome).
pub fn bfgs_minimize(
    f: &dyn Oracle,
    theta0: &Array1<f64>,
    opts: &BfgsOptions,
) -> Result<OptReport, OptError> {
    let n = theta0.len();
    let e0 = f.eval(theta0);
    if !e0.value.is_finite() {
        return Err(OptError::InfiniteStart);
    }
    let mut g = e0.grad.ok_or(OptError::MissingGradient)?;
    let mut theta = theta0.clone();
    let mut fval = e0.value;
    let mut h = Array2::<f64>::eye(n);
    let mut accepted = vec![fval];
    let mut iterations = 0;
    let below_target = |v: f64| opts.target.is_some_and(|t| v < t);

    let termination = loop {
        let gnorm = g.dot(&g).sqrt();
        if below_target(fval) {
            break Termination::TargetReached;
        }
        if gnorm <= opts.grad_tol {
            break Termination::GradTol;
        }
        if opts.budget.expired() {
            break Termination::TimeBudget;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }

        let mut dir = -h.dot(&g);
        if !(g.dot(&dir) < 0.0) {
            // safeguard against a corrupted Hessian approximation
            h = Array2::eye(n);
            dir = -g.clone();
        }

        match weak_wolfe_search(f, &theta, &dir, fval, &g, opts.c1, opts.c2) {
            Ok(hit) => {
                let s = &hit.theta - &theta;
                let y = &hit.grad - &g;
                let sy = s.dot(&y);
                let snorm = s.dot(&s).sqrt();
                let ynorm = y.dot(&y).sqrt();
                if sy > CURVATURE_FLOOR * snorm * ynorm {
                    if iterations == 0 {
                        let yy = y.dot(&y);
                        if yy > 0.0 {
                            h *= sy / yy;
                        }
                    }
                    bfgs_update(&mut h, &s, &y, sy);
                }
                theta = hit.theta;
                fval = hit.value;
                g = hit.grad;
                accepted.push(fval);
                iterations += 1;
            }
            Err(LineSearchError::NotDescent) | Err(LineSearchError::Fail { best: None }) => {
                break Termination::LineSearchFail;
            }
            Err(LineSearchError::Fail { best: Some(hit) }) => {
                // adopt the decrease the search did find, then stop
                theta = hit.theta;
                fval = hit.value;
                g = hit.grad;
                accepted.push(fval);
                iterations += 1;
                break if below_target(fval) {
                    Termination::TargetReached
                } else {
                    Termination::LineSearchFail
                };
            }
        }
    };

    let stationarity_measure = g.dot(&g).sqrt();
    Ok(OptReport {
        theta_best: theta,
        f_best: fval,
        iterations,
        termination,
        stationarity_measure,
        accepted,
    })
}

/// `H <- (I - r s y') H (I - r y s') + r s s'` with `r = 1/(s'y)`.
fn bfgs_update(h: &mut Array2<f64>, s: &Array1<f64>, y: &Array1<f64>, sy: f64) {
    let rho = 1.0 / sy;
    let hy = h.dot(y);
    let yhy = y.dot(&hy);
    let n = h.nrows();
    for i in 0..n {
        for j in 0..n {
            h[[i, j]] += rho * rho * yhy * s[i] * s[j] + rho * s[i] * s[j]
                - rho * (s[i] * hy[j] + hy[i] * s[j]);
        }
    }
}

/// Minimum-norm point of the convex hull of `gs`, by Wolfe's algorithm.
///
/// Returns simplex weights `w` (nonnegative, summing to one) and the
/// combination `g = sum w_i gs_i` minimizing the Euclidean norm, solved to a
/// duality gap at machine-level accuracy. No external QP solver is used.
pub fn min_norm_convex_combination(gs: &[Array1<f64>]) -> (Array1<f64>, Array1<f64>) {
    let k = gs.len();
    assert!(k >= 1, "need at least one vector");
    let dim = gs[0].len();
    debug_assert!(gs.iter().all(|g| g.len() == dim));

    let norms2: Vec<f64> = gs.iter().map(|g| g.dot(g)).collect();
    let scale = norms2.iter().cloned().fold(1.0_f64, f64::max);
    let gap_tol = 1e-13 * scale;
    let drop_tol = 1e-14;

    // start from the shortest vertex
    let start = (0..k)
        .min_by(|&a, &b| norms2[a].partial_cmp(&norms2[b]).unwrap())
        .unwrap();
    let mut support: Vec<usize> = vec![start];
    let mut weights: Vec<f64> = vec![1.0];
    let mut x = gs[start].clone();

    let combine = |support: &[usize], w: &[f64]| -> Array1<f64> {
        let mut out = Array1::zeros(dim);
        for (i, &idx) in support.iter().enumerate() {
            out = out + &gs[idx] * w[i];
        }
        out
    };

    for _ in 0..(16 * k.max(4) + 64) {
        // most violated vertex
        let xx = x.dot(&x);
        let (jmin, dmin) = (0..k)
            .map(|i| (i, gs[i].dot(&x)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if xx - dmin <= gap_tol || support.contains(&jmin) {
            break;
        }
        support.push(jmin);
        weights.push(0.0);

        // minor cycle: affine minimizer over the support, stepping back to
        // the feasible boundary while any affine weight is negative
        loop {
            let alpha = affine_min_norm(gs, &support);
            if alpha.iter().all(|&a| a >= -1e-12) {
                weights = alpha.iter().map(|&a| a.max(0.0)).collect();
                break;
            }
            let mut tmin = 1.0_f64;
            for (i, (&w, &a)) in weights.iter().zip(alpha.iter()).enumerate() {
                let _ = i;
                if a < w {
                    let t = w / (w - a);
                    if t < tmin {
                        tmin = t;
                    }
                }
            }
            for (w, &a) in weights.iter_mut().zip(alpha.iter()) {
                *w = (1.0 - tmin) * *w + tmin * a;
            }
            let keep: Vec<bool> = weights.iter().map(|&w| w > drop_tol).collect();
            if keep.iter().all(|&b| b) {
                // numerical stall: clamp and stop the minor cycle
                for w in weights.iter_mut() {
                    *w = w.max(0.0);
                }
                break;
            }
            let mut new_support = Vec::new();
            let mut new_weights = Vec::new();
            for (i, &b) in keep.iter().enumerate() {
                if b {
                    new_support.push(support[i]);
                    new_weights.push(weights[i]);
                }
            }
            support = new_support;
            weights = new_weights;
        }
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
        x = combine(&support, &weights);
    }

    let mut w_full = Array1::zeros(k);
    for (i, &idx) in support.iter().enumerate() {
        w_full[idx] += weights[i];
    }
    let total = w_full.sum();
    if total > 0.0 {
        w_full /= total;
    }
    let mut g = Array1::zeros(dim);
    for i in 0..k {
        if w_full[i] != 0.0 {
            g = g + &gs[i] * w_full[i];
        }
    }
    (w_full, g)
}

/// Affine minimizer of `|sum a_i g_i|` subject to `sum a_i = 1` over the
/// given support, via the KKT system solved with an SVD least-squares
/// (robust to rank-deficient Gram matrices).
fn affine_min_norm(gs: &[Array1<f64>], support: &[usize]) -> Vec<f64> {
    let s = support.len();
    let mut kkt = Array2::<f64>::zeros((s + 1, s + 1));
    for i in 0..s {
        for j in 0..s {
            kkt[[i, j]] = gs[support[i]].dot(&gs[support[j]]);
        }
        kkt[[i, s]] = 1.0;
        kkt[[s, i]] = 1.0;
    }
    let mut rhs = Array1::<f64>::zeros(s + 1);
    rhs[s] = 1.0;
    match kkt.least_squares(&rhs) {
        Ok(sol) => sol.solution.iter().take(s).cloned().collect(),
        Err(_) => {
            // fall back to the uniform combination
            vec![1.0 / s as f64; s]
        }
    }
}

#[derive(Debug, Clone)]
pub struct GsOptions {
    /// Decreasing sampling radii.
    pub radii: Vec<f64>,
    pub samples_per_iter: usize,
    /// Stationarity declared when the min-norm combination falls below this.
    pub stat_tol: f64,
    pub max_rounds_per_radius: usize,
    pub c1: f64,
    /// Curvature constant; lower than the BFGS phase because sampled
    /// directions are lower quality.
    pub c2: f64,
    pub target: Option<f64>,
    pub budget: TimeBudget,
    pub seed: u64,
}

impl GsOptions {
    /// Defaults scaled to the starting point: radii `{1e-3, 1e-4, 1e-5}`
    /// times `1 + |theta0|`, `2 dim` samples per round.
    pub fn for_start(theta0: &Array1<f64>, seed: u64) -> Self {
        let scale = 1.0 + theta0.dot(theta0).sqrt();
        Self {
            radii: vec![1e-3 * scale, 1e-4 * scale, 1e-5 * scale],
            samples_per_iter: 2 * theta0.len().max(1),
            stat_tol: 1e-6,
            max_rounds_per_radius: 100,
            c1: 1e-4,
            c2: 0.5,
            target: None,
            budget: TimeBudget::unlimited(),
            seed,
        }
    }
}

/// Sample uniformly from the ball of radius `r`.
fn ball_sample(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Array1<f64> {
    let mut v = Array1::<f64>::zeros(dim);
    for x in v.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    let norm = v.dot(&v).sqrt();
    if norm == 0.0 {
        return v;
    }
    let u: f64 = rng.gen::<f64>();
    v * (r * u.powf(1.0 / dim as f64) / norm)
}

/// How many times an infinite sample slot is redrawn before the round is
/// abandoned and the radius shrinks.
const RESAMPLE_LIMIT: usize = 10;

/// Gradient sampling refinement.
///
/// For each radius in the (decreasing) schedule: sample gradients in the
/// ball around the incumbent, form their min-norm convex combination, and
/// either declare stationarity at that scale or line-search along the
/// negated combination. Deterministic for a fixed seed.
pub fn gradient_sampling(
    f: &dyn Oracle,
    theta0: &Array1<f64>,
    opts: &GsOptions,
) -> Result<OptReport, OptError> {
    let dim = theta0.len();
    let e0 = f.eval(theta0);
    if !e0.value.is_finite() {
        return Err(OptError::InfiniteStart);
    }
    let mut g_cur = e0.grad.ok_or(OptError::MissingGradient)?;
    let mut theta = theta0.clone();
    let mut fval = e0.value;
    let mut accepted = vec![fval];
    let mut iterations = 0;
    let mut stat = g_cur.dot(&g_cur).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let below_target = |v: f64| opts.target.is_some_and(|t| v < t);

    let mut termination = None;
    'radii: for &radius in &opts.radii {
        let mut stationary_here = false;
        for _round in 0..opts.max_rounds_per_radius {
            if below_target(fval) {
                termination = Some(Termination::TargetReached);
                break 'radii;
            }
            if opts.budget.expired() {
                termination = Some(Termination::TimeBudget);
                break 'radii;
            }

            // bundle: incumbent gradient plus sampled neighbors
            let mut bundle = vec![g_cur.clone()];
            let mut slot_starved = false;
            for _ in 0..opts.samples_per_iter {
                let mut got = false;
                for _ in 0..RESAMPLE_LIMIT {
                    let cand = &theta + &ball_sample(&mut rng, dim, radius);
                    let e = f.eval(&cand);
                    if e.value.is_finite() {
                        if let Some(g) = e.grad {
                            if g.iter().all(|x| x.is_finite()) {
                                bundle.push(g);
                                got = true;
                                break;
                            }
                        }
                    }
                }
                if !got {
                    slot_starved = true;
                    break;
                }
            }
            if slot_starved {
                break; // shrink the radius
            }

            let (_, combo) = min_norm_convex_combination(&bundle);
            stat = combo.dot(&combo).sqrt();
            if stat <= opts.stat_tol {
                stationary_here = true;
                break; // stationary at this scale; shrink
            }

            let dir = -&combo;
            if !(g_cur.dot(&dir) < 0.0) {
                break; // cannot certify descent along the combination
            }
            match weak_wolfe_search(f, &theta, &dir, fval, &g_cur, opts.c1, opts.c2) {
                Ok(hit) => {
                    theta = hit.theta;
                    fval = hit.value;
                    g_cur = hit.grad;
                    accepted.push(fval);
                    iterations += 1;
                }
                Err(LineSearchError::Fail { best: Some(hit) }) => {
                    theta = hit.theta;
                    fval = hit.value;
                    g_cur = hit.grad;
                    accepted.push(fval);
                    iterations += 1;
                    break; // decrease but no certificate: shrink
                }
                Err(_) => break,
            }
        }
        let _ = stationary_here;
    }

    let termination = termination.unwrap_or(if stat <= opts.stat_tol {
        Termination::SamplingStationary
    } else {
        Termination::MaxIter
    });

    Ok(OptReport {
        theta_best: theta,
        f_best: fval,
        iterations,
        termination,
        stationarity_measure: stat,
        accepted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn quadratic() -> FnOracle<impl Fn(&Array1<f64>) -> OracleEval + Sync> {
        FnOracle::new(2, |t: &Array1<f64>| OracleEval {
            value: 0.5 * t.dot(t),
            grad: Some(t.clone()),
        })
    }

    #[test]
    fn bfgs_exact_on_quadratic() {
        let f = quadratic();
        let r = bfgs_minimize(&f, &array![1.0, 1.0], &BfgsOptions::default()).unwrap();
        assert!(r.f_best < 1e-10, "f = {}", r.f_best);
        assert!(r.iterations <= 5, "iterations = {}", r.iterations);
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = FnOracle::new(2, |t: &Array1<f64>| {
            let (x, y) = (t[0], t[1]);
            let v = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = array![
                -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                200.0 * (y - x * x)
            ];
            OracleEval {
                value: v,
                grad: Some(g),
            }
        });
        let opts = BfgsOptions {
            max_iter: 500,
            grad_tol: 1e-10,
            ..Default::default()
        };
        let r = bfgs_minimize(&f, &array![-1.2, 1.0], &opts).unwrap();
        assert!((r.theta_best[0] - 1.0).abs() < 1e-6);
        assert!((r.theta_best[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_rejects_infinite_start() {
        let f = FnOracle::new(1, |_: &Array1<f64>| OracleEval::infinite());
        assert!(matches!(
            bfgs_minimize(&f, &array![0.0], &BfgsOptions::default()),
            Err(OptError::InfiniteStart)
        ));
    }

    #[test]
    fn accepted_iterates_strictly_decrease() {
        let f = quadratic();
        let r = bfgs_minimize(&f, &array![3.0, -2.0], &BfgsOptions::default()).unwrap();
        for w in r.accepted.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn wolfe_on_parabola() {
        let f = FnOracle::new(1, |t: &Array1<f64>| OracleEval {
            value: t[0] * t[0],
            grad: Some(array![2.0 * t[0]]),
        });
        let hit =
            weak_wolfe_search(&f, &array![1.0], &array![-1.0], 1.0, &array![2.0], 1e-4, 0.9)
                .unwrap();
        assert!(hit.value < 1.0);
    }

    #[test]
    fn wolfe_never_returns_infinite_point() {
        // barrier at t >= 0.1 along the direction
        let f = FnOracle::new(1, |t: &Array1<f64>| {
            if t[0] >= 2.0 {
                OracleEval::infinite()
            } else {
                OracleEval {
                    value: -t[0],
                    grad: Some(array![-1.0]),
                }
            }
        });
        let hit = weak_wolfe_search(
            &f,
            &array![1.9],
            &array![1.0],
            -1.9,
            &array![-1.0],
            1e-4,
            0.9,
        );
        match hit {
            Ok(h) => {
                assert!(h.value.is_finite());
                assert!(h.theta[0] < 2.0);
            }
            Err(LineSearchError::Fail { best }) => {
                if let Some(b) = best {
                    assert!(b.value.is_finite() && b.value < -1.9);
                }
            }
            Err(e) => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn wolfe_absolute_value() {
        // f = |x| from x=1 along -1: weak Wolfe needs f(1-t) < 1 - c1 t and
        // slope(1-t) >= -c2; the step lands just past the kink
        let f = FnOracle::new(1, |t: &Array1<f64>| OracleEval {
            value: t[0].abs(),
            grad: Some(array![t[0].signum()]),
        });
        let hit =
            weak_wolfe_search(&f, &array![1.0], &array![-1.0], 1.0, &array![1.0], 1e-4, 0.5)
                .unwrap();
        assert!(hit.value < 1.0);
        assert!(hit.theta[0] < 0.0, "must cross the kink to turn the slope");
        assert!(hit.step <= 2.0 + 1e-12);
    }

    #[test]
    fn wolfe_requires_descent() {
        let f = quadratic();
        assert!(matches!(
            weak_wolfe_search(
                &f,
                &array![1.0, 0.0],
                &array![1.0, 0.0],
                0.5,
                &array![1.0, 0.0],
                1e-4,
                0.9
            ),
            Err(LineSearchError::NotDescent)
        ));
    }

    #[test]
    fn min_norm_singleton() {
        let g = array![3.0, -4.0];
        let (w, x) = min_norm_convex_combination(&[g.clone()]);
        assert_eq!(w, array![1.0]);
        assert_eq!(x, g);
    }

    #[test]
    fn min_norm_symmetric_pair_contains_origin() {
        let g = array![1.0, 2.0];
        let (_, x) = min_norm_convex_combination(&[g.clone(), -g]);
        assert!(x.dot(&x).sqrt() < 1e-10);
    }

    #[test]
    fn min_norm_orthogonal_pair() {
        let (w, x) = min_norm_convex_combination(&[array![1.0, 0.0], array![0.0, 1.0]]);
        assert!((w[0] - 0.5).abs() < 1e-10 && (w[1] - 0.5).abs() < 1e-10);
        assert!((x[0] - 0.5).abs() < 1e-10 && (x[1] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn min_norm_weights_are_simplex() {
        let gs = vec![
            array![2.0, 1.0, 0.0],
            array![-1.0, 3.0, 0.5],
            array![0.3, -0.7, 2.0],
            array![1.0, 1.0, 1.0],
        ];
        let (w, x) = min_norm_convex_combination(&gs);
        assert!(w.iter().all(|&wi| wi >= 0.0));
        assert!((w.sum() - 1.0).abs() < 1e-12);
        let xn = x.dot(&x).sqrt();
        for g in &gs {
            assert!(xn <= g.dot(g).sqrt() + 1e-12);
        }
    }

    #[test]
    fn sampling_minimizes_l1() {
        let f = FnOracle::new(2, |t: &Array1<f64>| OracleEval {
            value: t[0].abs() + t[1].abs(),
            grad: Some(array![t[0].signum(), t[1].signum()]),
        });
        let theta0 = array![0.3, -0.2];
        let opts = GsOptions {
            stat_tol: 1e-3,
            ..GsOptions::for_start(&theta0, 7)
        };
        let r = gradient_sampling(&f, &theta0, &opts).unwrap();
        assert!(
            r.theta_best.dot(&r.theta_best).sqrt() <= 1e-2,
            "theta = {:?}",
            r.theta_best
        );
        assert!(r.stationarity_measure <= 1e-3);
    }

    #[test]
    fn sampling_on_smooth_quadratic() {
        let f = quadratic();
        let theta0 = array![0.5, 0.5];
        let mut opts = GsOptions::for_start(&theta0, 3);
        opts.radii = vec![1e-2, 1e-3, 1e-4];
        let r = gradient_sampling(&f, &theta0, &opts).unwrap();
        assert!(r.f_best <= 1e-6, "f = {}", r.f_best);
    }

    #[test]
    fn sampling_deterministic_under_seed() {
        let f = FnOracle::new(2, |t: &Array1<f64>| OracleEval {
            value: t[0].abs().max((t[0] - 1.0).powi(2) + t[1] * t[1]),
            grad: Some(if t[0].abs() > (t[0] - 1.0).powi(2) + t[1] * t[1] {
                array![t[0].signum(), 0.0]
            } else {
                array![2.0 * (t[0] - 1.0), 2.0 * t[1]]
            }),
        });
        let theta0 = array![0.9, 0.4];
        let opts = GsOptions::for_start(&theta0, 42);
        let r1 = gradient_sampling(&f, &theta0, &opts).unwrap();
        let r2 = gradient_sampling(&f, &theta0, &opts).unwrap();
        assert_eq!(r1.theta_best, r2.theta_best);
        assert_eq!(r1.accepted, r2.accepted);
        assert_eq!(r1.stationarity_measure, r2.stationarity_measure);
    }
}
