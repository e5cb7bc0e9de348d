//! The two phase objectives as scalar functions of theta.
//!
//! Stabilization minimizes `max(alpha(A_CL), eps * alpha(A_K))` until it is
//! negative; performance minimizes
//!
//! ```text
//!   f(K) = inf                                  if max(alpha(A_CL), alpha(A_K)) >= 0
//!        = max(|Tzw|_inf, eps * |K|_inf)        otherwise
//! ```
//!
//! The infinite branch is a *value*, never an error: it flows through the
//! optimizer and is rejected by the line search, which insists on a
//! reduction at every step.

use crate::grad::{
    grad_hinf, grad_spectral_abscissa, ActiveCertificate, GradError, GradEval, HinfTarget,
    WhichMatrix,
};
use crate::hinf::DEFAULT_RTOL;
use crate::lti::{close_loop, spectral_abscissa, ControllerParams, GeneralizedPlant, LtiError};
use crate::opt::{Oracle, OracleEval};
use ndarray::Array1;
use thiserror::Error;

/// Relative tie tolerance below which the first term's gradient is the
/// deterministic subgradient choice.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("epsilon must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stabilize,
    Performance,
}

/// A phase objective bound to a plant, controller order and epsilon.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub plant: GeneralizedPlant,
    pub order: usize,
    pub epsilon: f64,
    pub phase: Phase,
    /// Relative tolerance used for every norm evaluation inside the
    /// objective. Keep well below the line-search resolution.
    pub norm_rtol: f64,
}

impl ObjectiveSpec {
    pub fn new(
        plant: GeneralizedPlant,
        order: usize,
        epsilon: f64,
        phase: Phase,
    ) -> Result<Self, ObjectiveError> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ObjectiveError::BadEpsilon(epsilon));
        }
        Ok(Self {
            plant,
            order,
            epsilon,
            phase,
            norm_rtol: DEFAULT_RTOL,
        })
    }

    pub fn with_norm_rtol(mut self, rtol: f64) -> Self {
        self.norm_rtol = rtol;
        self
    }

    /// Dimension of the controller parameter vector this objective expects.
    pub fn dim(&self) -> usize {
        ControllerParams::dim_for(self.order, self.plant.n_meas(), self.plant.n_ctrl())
    }

    pub fn controller_from_theta(&self, theta: Array1<f64>) -> Result<ControllerParams, LtiError> {
        ControllerParams::from_theta(self.order, self.plant.n_meas(), self.plant.n_ctrl(), theta)
    }

    /// `max(alpha(A_CL), eps * alpha(A_K))` with the achieving term's
    /// gradient (eps-scaled for the controller term).
    pub fn eval_stabilize(&self, k: &ControllerParams) -> Result<GradEval, ObjectiveError> {
        let cl = grad_spectral_abscissa(&self.plant, k, WhichMatrix::ClosedLoop)?;
        let ctrl = grad_spectral_abscissa(&self.plant, k, WhichMatrix::Controller)?;
        Ok(select_max(cl, ctrl, self.epsilon))
    }

    /// The performance objective of the synthesis: infinite outside the
    /// strongly stabilizing set, `max(|Tzw|_inf, eps * |K|_inf)` inside.
    pub fn eval_performance(&self, k: &ControllerParams) -> Result<GradEval, ObjectiveError> {
        let cl = close_loop(&self.plant, k)?;
        let alpha_cl = spectral_abscissa(&cl.a)?;
        let alpha_k = spectral_abscissa(&k.a_k())?;
        if alpha_cl.max(alpha_k) >= 0.0 {
            return Ok(GradEval {
                value: f64::INFINITY,
                grad: None,
                certificate: ActiveCertificate::Unstable,
            });
        }
        let tzw = grad_hinf(HinfTarget::ClosedLoop(&self.plant), k, self.norm_rtol)?;
        let ctrl = grad_hinf(HinfTarget::Controller, k, self.norm_rtol)?;
        Ok(select_max(tzw, ctrl, self.epsilon))
    }

    /// Dispatch on the phase.
    pub fn eval(&self, k: &ControllerParams) -> Result<GradEval, ObjectiveError> {
        match self.phase {
            Phase::Stabilize => self.eval_stabilize(k),
            Phase::Performance => self.eval_performance(k),
        }
    }

    /// View this objective as an optimizer oracle. Evaluation errors
    /// (ill-posed loops, eigenvalue breakdowns) map to an infinite value so
    /// the line search rejects the point instead of aborting the run.
    pub fn as_oracle(&self) -> ObjectiveOracle<'_> {
        ObjectiveOracle { spec: self }
    }
}

/// `max` of two evaluated terms; the second term is scaled by `eps`. Ties
/// within `TIE_TOL` resolve to the first term's gradient.
fn select_max(first: GradEval, second: GradEval, eps: f64) -> GradEval {
    let t1 = first.value;
    let t2 = eps * second.value;
    let value = t1.max(t2);
    // -inf (vacuous alpha of a static controller) never wins the max;
    // eps * -inf stays -inf so the comparison below is safe
    let tied = (t1 - t2).abs() <= TIE_TOL * value.abs().max(1.0);
    if t1 >= t2 || tied {
        GradEval {
            value,
            grad: first.grad,
            certificate: first.certificate,
        }
    } else {
        GradEval {
            value,
            grad: second.grad.map(|g| g * eps),
            certificate: second.certificate,
        }
    }
}

/// Oracle adapter over an [`ObjectiveSpec`].
pub struct ObjectiveOracle<'a> {
    spec: &'a ObjectiveSpec,
}

impl Oracle for ObjectiveOracle<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn eval(&self, theta: &Array1<f64>) -> OracleEval {
        let k = match self.spec.controller_from_theta(theta.clone()) {
            Ok(k) => k,
            Err(_) => return OracleEval::infinite(),
        };
        match self.spec.eval(&k) {
            Ok(GradEval { value, grad, .. }) if value.is_finite() => OracleEval {
                value,
                grad: grad.filter(|g| g.iter().all(|x| x.is_finite())),
            },
            _ => OracleEval::infinite(),
        }
    }
}
