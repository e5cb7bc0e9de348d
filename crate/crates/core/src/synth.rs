//! Two-phase synthesis driver: stabilize, then optimize performance, over an
//! epsilon sweep with randomized multi-start under a wall-clock budget.
//!
//! Each run minimizes `max(alpha(A_CL), eps * alpha(A_K))` until it is
//! negative (the controller is stable *and* stabilizes the loop), then
//! locally minimizes `max(|Tzw|_inf, eps * |K|_inf)` from that point. The
//! sweep reports the lowest closed-loop norm over all runs.

use crate::lti::{
    close_loop, is_stable, spectral_abscissa, ControllerParams, GeneralizedPlant, LtiError,
};
use crate::hinf::hinf_norm;
use crate::objective::{ObjectiveError, ObjectiveSpec, Phase};
use crate::opt::{
    bfgs_minimize, gradient_sampling, BfgsOptions, GsOptions, OptError, Oracle, Termination,
    TimeBudget,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("stabilization failed; best objective value reached: {best_value:.6e}")]
    StabilizationFailed { best_value: f64 },
    #[error("no run produced a stable stabilizing controller ({attempted} runs attempted)")]
    AllRunsFailed { attempted: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Opt(#[from] OptError),
}

/// Numeric knobs shared by both phases.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Relative tolerance for H-infinity norm evaluations.
    pub norm_rtol: f64,
    /// BFGS gradient-norm termination.
    pub grad_tol: f64,
    /// BFGS iteration cap per start.
    pub max_iter: usize,
    /// Stabilization stops once the phase objective drops below this
    /// (strictly negative so the performance phase starts with a margin).
    pub stab_target: f64,
    /// Gradient-sampling stationarity tolerance.
    pub stat_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            norm_rtol: 1e-7,
            grad_tol: 1e-6,
            max_iter: 1000,
            stab_target: -1e-6,
            stat_tol: 1e-6,
        }
    }
}

/// Configuration of one synthesis sweep.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Controller order `n_K`.
    pub order: usize,
    /// Epsilon sweep; each value gets its own batch of runs.
    pub epsilons: Vec<f64>,
    pub runs_per_epsilon: usize,
    /// Global soft wall-clock budget in seconds, divided evenly across the
    /// epsilon sweep. No new run starts after a block's share expires; the
    /// active run finishes its current iteration.
    pub cpumax: f64,
    pub seed: u64,
    /// Extra warm starts prepended to every epsilon batch. Dimensions must
    /// match `order` and the plant.
    pub init_controllers: Vec<ControllerParams>,
    pub tolerances: Tolerances,
    /// Worker threads for independent runs; 1 = fully sequential.
    pub workers: usize,
}

impl SynthesisConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            runs_per_epsilon: 10,
            cpumax: 300.0,
            seed: 0,
            init_controllers: Vec::new(),
            tolerances: Tolerances::default(),
            workers: 1,
        }
    }

    fn validate(&self, plant: &GeneralizedPlant) -> Result<(), SynthError> {
        if self.epsilons.is_empty() {
            return Err(SynthError::InvalidConfig("empty epsilon list".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(SynthError::InvalidConfig(
                "epsilons must lie in (0, 1]".into(),
            ));
        }
        if self.runs_per_epsilon < 1 {
            return Err(SynthError::InvalidConfig("runs_per_epsilon < 1".into()));
        }
        if !(self.cpumax > 0.0) {
            return Err(SynthError::InvalidConfig("cpumax must be positive".into()));
        }
        for k in &self.init_controllers {
            if k.order() != self.order
                || k.n_meas() != plant.n_meas()
                || k.n_ctrl() != plant.n_ctrl()
            {
                return Err(SynthError::InvalidConfig(
                    "init controller dimensions do not match the plant/order".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of a single (epsilon, start) run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub eps: f64,
    pub eps_index: usize,
    pub run_index: usize,
    pub seed: u64,
    pub stabilized: bool,
    /// Best stabilization-phase objective value reached.
    pub stab_value: f64,
    /// Final performance objective (infinite when stabilization failed).
    pub final_f: f64,
    /// Closed-loop H-infinity norm of the run's final controller (infinite
    /// when the run failed).
    pub gamma: f64,
    pub iterations: usize,
    /// Wall time of this run. Excluded from the canonical trace because it
    /// is not reproducible.
    pub wall_seconds: f64,
    /// Final controller of the run, when the run stabilized.
    pub controller: Option<ControllerParams>,
}

/// Aggregate result of a sweep.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub best_controller: ControllerParams,
    /// `|Tzw|_inf` of the best controller.
    pub gamma: f64,
    pub controller_stable: bool,
    pub closed_loop_stable: bool,
    pub best_eps: f64,
    /// `(eps_index, run_index)` of the winning run.
    pub best_run: (usize, usize),
    pub per_run: Vec<RunRecord>,
}

impl SynthesisResult {
    /// Deterministic serialization of the sweep: everything except wall
    /// times, which depend on the machine. Two sweeps with identical inputs
    /// and seed produce byte-identical canonical traces.
    pub fn canonical_trace(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "best gamma={} eps={} run=({},{})\n",
            self.gamma, self.best_eps, self.best_run.0, self.best_run.1
        ));
        for r in &self.per_run {
            out.push_str(&format!(
                "run eps_index={} eps={} run={} seed={} stabilized={} stab_value={} final_f={} gamma={} iterations={}\n",
                r.eps_index,
                r.eps,
                r.run_index,
                r.seed,
                r.stabilized,
                r.stab_value,
                r.final_f,
                r.gamma,
                r.iterations,
            ));
        }
        out
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(a)).wrapping_add(splitmix64(b ^ 0x5851F42D4C957F2D)))
}

/// Random start with a stable controller A-block: entries are standard
/// normal, then `A_K` is shifted by `-(alpha(A_K) + 0.1) I` so every initial
/// controller is itself stable.
fn random_stable_start(
    order: usize,
    n_meas: usize,
    n_ctrl: usize,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let dim = ControllerParams::dim_for(order, n_meas, n_ctrl);
    let mut theta = Array1::<f64>::zeros(dim);
    for x in theta.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    if order > 0 {
        let k = ControllerParams::from_theta(order, n_meas, n_ctrl, theta.clone())
            .expect("dimension arithmetic");
        let a_k = k.a_k();
        let shift = match spectral_abscissa(&a_k) {
            Ok(alpha) => alpha + 0.1,
            Err(_) => return stable_fallback_theta(order, theta),
        };
        for i in 0..order {
            theta[i * order + i] -= shift;
        }
    }
    theta
}

fn stable_fallback_theta(order: usize, mut theta: Array1<f64>) -> Array1<f64> {
    for i in 0..order {
        for j in 0..order {
            theta[i * order + j] = if i == j { -1.0 } else { 0.0 };
        }
    }
    theta
}

/// Embed a controller into a higher order by appending fast, decoupled
/// stable states (A-diagonal `-10 (1 + |A_K|_F)`, zero coupling). The padded
/// controller realizes the same transfer function.
pub fn pad_controller(k: &ControllerParams, new_order: usize) -> ControllerParams {
    let old = k.order();
    assert!(new_order >= old, "can only pad to a larger order");
    if new_order == old {
        return k.clone();
    }
    let (a, b, c, d) = (k.a_k(), k.b_k(), k.c_k(), k.d_k());
    let fast = -10.0 * (1.0 + a.iter().map(|x| x * x).sum::<f64>().sqrt());
    let mut a_new = Array2::zeros((new_order, new_order));
    a_new.slice_mut(ndarray::s![..old, ..old]).assign(&a);
    for i in old..new_order {
        a_new[[i, i]] = fast;
    }
    let mut b_new = Array2::zeros((new_order, k.n_meas()));
    b_new.slice_mut(ndarray::s![..old, ..]).assign(&b);
    let mut c_new = Array2::zeros((k.n_ctrl(), new_order));
    c_new.slice_mut(ndarray::s![.., ..old]).assign(&c);
    ControllerParams::pack(
        &crate::lti::StateSpaceSystem::new(a_new, b_new, c_new, d)
            .expect("padded dimensions consistent"),
    )
}

fn gs_seed_for(theta0: &Array1<f64>, base: u64, tag: u64) -> u64 {
    let mut h = splitmix64(base ^ tag);
    for &x in theta0.iter() {
        h = splitmix64(h ^ x.to_bits());
    }
    h
}

struct PhaseOutcome {
    theta: Array1<f64>,
    value: f64,
    iterations: usize,
}

fn minimize_two_stage(
    oracle: &dyn Oracle,
    theta0: &Array1<f64>,
    tol: &Tolerances,
    target: Option<f64>,
    budget: TimeBudget,
    gs_seed: u64,
) -> Result<PhaseOutcome, OptError> {
    let bfgs_opts = BfgsOptions {
        grad_tol: tol.grad_tol,
        max_iter: tol.max_iter,
        target,
        budget,
        ..Default::default()
    };
    let r1 = bfgs_minimize(oracle, theta0, &bfgs_opts)?;
    let mut best = PhaseOutcome {
        theta: r1.theta_best,
        value: r1.f_best,
        iterations: r1.iterations,
    };
    let done = matches!(
        r1.termination,
        Termination::TargetReached | Termination::TimeBudget
    );
    if !done {
        let mut gs_opts = GsOptions::for_start(&best.theta, gs_seed);
        gs_opts.stat_tol = tol.stat_tol;
        gs_opts.target = target;
        gs_opts.budget = budget;
        let r2 = gradient_sampling(oracle, &best.theta, &gs_opts)?;
        if r2.f_best <= best.value {
            best = PhaseOutcome {
                theta: r2.theta_best,
                value: r2.f_best,
                iterations: best.iterations + r2.iterations,
            };
        } else {
            best.iterations += r2.iterations;
        }
    }
    Ok(best)
}

fn stabilize_inner(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
    theta0: &Array1<f64>,
    epsilon: f64,
    budget: TimeBudget,
) -> Result<(ControllerParams, f64, usize), SynthError> {
    let spec = ObjectiveSpec::new(plant.clone(), cfg.order, epsilon, Phase::Stabilize)?
        .with_norm_rtol(cfg.tolerances.norm_rtol);
    let oracle = spec.as_oracle();
    let gs_seed = gs_seed_for(theta0, cfg.seed, 0xABCD);
    let out = minimize_two_stage(
        &oracle,
        theta0,
        &cfg.tolerances,
        Some(cfg.tolerances.stab_target),
        budget,
        gs_seed,
    )?;
    let k = spec
        .controller_from_theta(out.theta.clone())
        .map_err(SynthError::Lti)?;
    // Success requires the *unscaled* abscissae negative: epsilon only
    // shapes the search objective.
    let ok = out.value < 0.0
        && is_stable(&close_loop(plant, &k)?.a, 0.0)?
        && is_stable(&k.a_k(), 0.0)?;
    if ok {
        Ok((k, out.value, out.iterations))
    } else {
        Err(SynthError::StabilizationFailed {
            best_value: out.value,
        })
    }
}

/// Stabilization phase: minimize `max(alpha(A_CL), eps * alpha(A_K))` from
/// `theta0` until it turns negative. On success the returned controller
/// satisfies both unscaled stability conditions.
pub fn stabilize_phase(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
    theta0: &Array1<f64>,
    epsilon: f64,
) -> Result<ControllerParams, SynthError> {
    stabilize_inner(plant, cfg, theta0, epsilon, TimeBudget::from_secs(cfg.cpumax))
        .map(|(k, _, _)| k)
}

fn performance_inner(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
    k_stab: &ControllerParams,
    epsilon: f64,
    budget: TimeBudget,
) -> Result<(ControllerParams, f64, usize), SynthError> {
    let spec = ObjectiveSpec::new(plant.clone(), cfg.order, epsilon, Phase::Performance)?
        .with_norm_rtol(cfg.tolerances.norm_rtol);
    let oracle = spec.as_oracle();
    let theta0 = k_stab.theta().clone();
    let gs_seed = gs_seed_for(&theta0, cfg.seed, 0x7E57);
    match minimize_two_stage(&oracle, &theta0, &cfg.tolerances, None, budget, gs_seed) {
        Ok(out) => {
            let k = spec
                .controller_from_theta(out.theta)
                .map_err(SynthError::Lti)?;
            Ok((k, out.value, out.iterations))
        }
        // worst case: hand back the stabilizing controller unchanged
        Err(OptError::InfiniteStart) | Err(OptError::MissingGradient) => {
            let f0 = spec
                .eval_performance(k_stab)
                .map(|e| e.value)
                .unwrap_or(f64::INFINITY);
            Ok((k_stab.clone(), f0, 0))
        }
    }
}

/// Performance phase: from a stabilizing controller with finite objective,
/// locally minimize the performance objective. Never increases it.
pub fn performance_phase(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
    k_stab: &ControllerParams,
    epsilon: f64,
) -> Result<(ControllerParams, f64), SynthError> {
    performance_inner(plant, cfg, k_stab, epsilon, TimeBudget::from_secs(cfg.cpumax))
        .map(|(k, f, _)| (k, f))
}

fn run_one(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
    eps_index: usize,
    eps: f64,
    run_index: usize,
    init: Option<&ControllerParams>,
    budget: TimeBudget,
) -> RunRecord {
    let started = Instant::now();
    let seed = derive_seed(cfg.seed, eps_index as u64, run_index as u64);
    let theta0 = match init {
        Some(k) => k.theta().clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_stable_start(cfg.order, plant.n_meas(), plant.n_ctrl(), &mut rng)
        }
    };
    let mut record = RunRecord {
        eps,
        eps_index,
        run_index,
        seed,
        stabilized: false,
        stab_value: f64::INFINITY,
        final_f: f64::INFINITY,
        gamma: f64::INFINITY,
        iterations: 0,
        wall_seconds: 0.0,
        controller: None,
    };
    match stabilize_inner(plant, cfg, &theta0, eps, budget) {
        Ok((k_stab, stab_value, iters)) => {
            record.stabilized = true;
            record.stab_value = stab_value;
            record.iterations += iters;
            match performance_inner(plant, cfg, &k_stab, eps, budget) {
                Ok((k, f, iters2)) => {
                    record.final_f = f;
                    record.iterations += iters2;
                    record.gamma = gamma_of(plant, &k);
                    record.controller = Some(k);
                }
                Err(_) => {
                    record.final_f = f64::INFINITY;
                    record.gamma = gamma_of(plant, &k_stab);
                    record.controller = Some(k_stab);
                }
            }
        }
        Err(SynthError::StabilizationFailed { best_value }) => {
            record.stab_value = best_value;
        }
        Err(_) => {}
    }
    record.wall_seconds = started.elapsed().as_secs_f64();
    record
}

/// `|Tzw|_inf` of the closed loop, infinite unless both stability
/// conditions hold.
fn gamma_of(plant: &GeneralizedPlant, k: &ControllerParams) -> f64 {
    let cl = match close_loop(plant, k) {
        Ok(cl) => cl,
        Err(_) => return f64::INFINITY,
    };
    let stable = matches!(is_stable(&cl.a, 0.0), Ok(true))
        && matches!(is_stable(&k.a_k(), 0.0), Ok(true));
    if !stable {
        return f64::INFINITY;
    }
    hinf_norm(&cl, 1e-7).map(|r| r.value).unwrap_or(f64::INFINITY)
}

/// Run the full sweep: `runs_per_epsilon` random starts per epsilon (plus
/// any configured warm starts), each run stabilization then performance
/// optimization, aggregated to the lowest closed-loop norm.
pub fn synthesize(
    plant: &GeneralizedPlant,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult, SynthError> {
    cfg.validate(plant)?;
    let start = Instant::now();
    let n_eps = cfg.epsilons.len();
    let starts_per_eps = cfg.init_controllers.len() + cfg.runs_per_epsilon;

    struct Desc {
        eps_index: usize,
        eps: f64,
        run_index: usize,
        deadline: Instant,
    }
    let mut descs = Vec::with_capacity(n_eps * starts_per_eps);
    for (ei, &eps) in cfg.epsilons.iter().enumerate() {
        let share = cfg.cpumax * (ei + 1) as f64 / n_eps as f64;
        let deadline = start + std::time::Duration::from_secs_f64(share);
        for r in 0..starts_per_eps {
            descs.push(Desc {
                eps_index: ei,
                eps,
                run_index: r,
                deadline,
            });
        }
    }

    let exec = |d: &Desc| -> Option<RunRecord> {
        if Instant::now() >= d.deadline {
            return None; // budget spent; no new run starts
        }
        let init = cfg.init_controllers.get(d.run_index);
        Some(run_one(
            plant,
            cfg,
            d.eps_index,
            d.eps,
            d.run_index,
            init,
            TimeBudget::until(d.deadline),
        ))
    };

    let per_run: Vec<RunRecord> = if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| SynthError::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| descs.par_iter().map(exec).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    } else {
        descs.iter().filter_map(exec).collect()
    };

    let attempted = per_run.len();
    // ties in gamma break toward the lowest (eps index, run index)
    let best = per_run
        .iter()
        .filter(|r| r.gamma.is_finite() && r.controller.is_some())
        .min_by(|a, b| {
            (a.gamma, a.eps_index, a.run_index)
                .partial_cmp(&(b.gamma, b.eps_index, b.run_index))
                .unwrap()
        });
    let Some(best) = best else {
        return Err(SynthError::AllRunsFailed { attempted });
    };
    let best_controller = best.controller.clone().expect("filtered on Some");
    let controller_stable = is_stable(&best_controller.a_k(), 0.0)?;
    let closed_loop_stable = is_stable(&close_loop(plant, &best_controller)?.a, 0.0)?;
    Ok(SynthesisResult {
        gamma: best.gamma,
        best_eps: best.eps,
        best_run: (best.eps_index, best.run_index),
        controller_stable,
        closed_loop_stable,
        best_controller,
        per_run,
    })
}
