//! Fixed-order strong-stabilization H-infinity controller synthesis.
//!
//! Given a generalized plant and a designer-chosen controller order, this
//! crate searches for a controller that is *itself stable*, internally
//! stabilizes the closed loop, and locally minimizes the closed-loop
//! H-infinity norm. The search is a two-phase nonsmooth nonconvex
//! optimization: a stabilization phase drives the spectral abscissae of the
//! closed loop and of the controller negative, then a performance phase
//! minimizes `max(|Tzw|_inf, eps * |K|_inf)` over the stabilizing set, using
//! BFGS with a weak Wolfe line search followed by gradient sampling.
//!
//! Module map:
//! - [`lti`]: state-space types, closed-loop interconnection, stability and
//!   frequency-response queries.
//! - [`hinf`]: H-infinity norm of a stable realization via Hamiltonian
//!   level-set tests.
//! - [`grad`]: analytic (sub)gradients of spectral-abscissa and norm
//!   objectives with respect to the controller parameter vector.
//! - [`objective`]: the two phase objectives as scalar functions of theta.
//! - [`opt`]: generic nonsmooth local optimization (BFGS, weak Wolfe line
//!   search, min-norm convex combinations, gradient sampling).
//! - [`synth`]: the multi-start, epsilon-sweep synthesis driver.

use openblas_src as _;

pub mod grad;
pub mod hinf;
pub mod lti;
pub mod objective;
pub mod opt;
pub mod synth;

pub use grad::{ActiveCertificate, GradError, GradEval, HinfTarget, WhichMatrix};
pub use hinf::{HinfError, NormResult};
pub use lti::{
    close_loop, freq_response, is_stable, spectral_abscissa, ControllerParams, GeneralizedPlant,
    LtiError, StateSpaceSystem,
};
pub use objective::{ObjectiveError, ObjectiveSpec, Phase};
pub use opt::{
    bfgs_minimize, gradient_sampling, min_norm_convex_combination, weak_wolfe_search, BfgsOptions,
    GsOptions, OptError, OptReport, Oracle, OracleEval, Termination, TimeBudget,
};
pub use synth::{
    pad_controller, performance_phase, stabilize_phase, synthesize, RunRecord, SynthError,
    SynthesisConfig, SynthesisResult, Tolerances,
};
