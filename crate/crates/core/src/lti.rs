//! State-space data model, closed-loop interconnection, stability queries,
//! and frequency-response evaluation.
//!
//! All systems are continuous-time with real coefficients. Types are
//! immutable after construction and safe to share across threads; every
//! operation is a pure function of its inputs.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{Eig, EigVals, Factorize, Inverse, Solve, SVD};
use num_complex::Complex64;
use thiserror::Error;

/// Relative singular-value floor below which the `I - D_K D22` loop matrix
/// is treated as singular.
pub const TOL_SINGULAR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ill-posed algebraic loop: inverse of (I - D_K D22) has norm {inverse_norm:.3e}")]
    WellPosedness { inverse_norm: f64 },
    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),
    #[error("frequency response singular at omega = {omega}")]
    SingularFrequency { omega: f64 },
}

/// A real state-space realization `(A, B, C, D)`.
///
/// `n = 0` is allowed and denotes a pure gain `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub c: Array2<f64>,
    pub d: Array2<f64>,
}

impl StateSpaceSystem {
    pub fn new(
        a: Array2<f64>,
        b: Array2<f64>,
        c: Array2<f64>,
        d: Array2<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(LtiError::Dimension(format!(
                "B has {} rows, expected {}",
                b.nrows(),
                n
            )));
        }
        if c.ncols() != n {
            return Err(LtiError::Dimension(format!(
                "C has {} columns, expected {}",
                c.ncols(),
                n
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(LtiError::Dimension(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    /// A static system `y = D u` with no states.
    pub fn pure_gain(d: Array2<f64>) -> Self {
        let (p, m) = d.dim();
        Self {
            a: Array2::zeros((0, 0)),
            b: Array2::zeros((0, m)),
            c: Array2::zeros((p, 0)),
            d,
        }
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// The partitioned plant
///
/// ```text
///   dx = A x  + B1 w  + B2 u
///   z  = C1 x + D11 w + D12 u
///   y  = C2 x + D21 w + D22 u
/// ```
///
/// with exogenous inputs `w` (m1), control inputs `u` (m2), regulated
/// outputs `z` (p1) and measured outputs `y` (p2).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedPlant {
    pub a: Array2<f64>,
    pub b1: Array2<f64>,
    pub b2: Array2<f64>,
    pub c1: Array2<f64>,
    pub c2: Array2<f64>,
    pub d11: Array2<f64>,
    pub d12: Array2<f64>,
    pub d21: Array2<f64>,
    pub d22: Array2<f64>,
}

impl GeneralizedPlant {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Array2<f64>,
        b1: Array2<f64>,
        b2: Array2<f64>,
        c1: Array2<f64>,
        c2: Array2<f64>,
        d11: Array2<f64>,
        d12: Array2<f64>,
        d21: Array2<f64>,
        d22: Array2<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LtiError::Dimension("A must be square".into()));
        }
        let m1 = b1.ncols();
        let m2 = b2.ncols();
        let p1 = c1.nrows();
        let p2 = c2.nrows();
        let blocks: [(&str, &Array2<f64>, usize, usize); 8] = [
            ("B1", &b1, n, m1),
            ("B2", &b2, n, m2),
            ("C1", &c1, p1, n),
            ("C2", &c2, p2, n),
            ("D11", &d11, p1, m1),
            ("D12", &d12, p1, m2),
            ("D21", &d21, p2, m1),
            ("D22", &d22, p2, m2),
        ];
        for (name, m, rows, cols) in blocks {
            if m.dim() != (rows, cols) {
                return Err(LtiError::Dimension(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self {
            a,
            b1,
            b2,
            c1,
            c2,
            d11,
            d12,
            d21,
            d22,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Number of exogenous inputs `w`.
    pub fn n_exo(&self) -> usize {
        self.b1.ncols()
    }

    /// Number of control inputs `u`.
    pub fn n_ctrl(&self) -> usize {
        self.b2.ncols()
    }

    /// Number of regulated outputs `z`.
    pub fn n_reg(&self) -> usize {
        self.c1.nrows()
    }

    /// Number of measured outputs `y`.
    pub fn n_meas(&self) -> usize {
        self.c2.nrows()
    }
}

/// Flat parameterization of a fixed-order controller.
///
/// `theta` packs `A_K`, `B_K`, `C_K`, `D_K` row-major in that order, so its
/// length is `n_K^2 + n_K*p2 + m2*n_K + m2*p2`. Packing is bijective:
/// `unpack(pack(K)) == K` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    order: usize,
    n_meas: usize,
    n_ctrl: usize,
    theta: Array1<f64>,
}

impl ControllerParams {
    /// Length of `theta` for a controller of the given dimensions.
    pub fn dim_for(order: usize, n_meas: usize, n_ctrl: usize) -> usize {
        order * order + order * n_meas + n_ctrl * order + n_ctrl * n_meas
    }

    pub fn from_theta(
        order: usize,
        n_meas: usize,
        n_ctrl: usize,
        theta: Array1<f64>,
    ) -> Result<Self, LtiError> {
        let want = Self::dim_for(order, n_meas, n_ctrl);
        if theta.len() != want {
            return Err(LtiError::Dimension(format!(
                "theta has length {}, expected {want}",
                theta.len()
            )));
        }
        Ok(Self {
            order,
            n_meas,
            n_ctrl,
            theta,
        })
    }

    /// The all-zero controller of the given dimensions.
    pub fn zeros(order: usize, n_meas: usize, n_ctrl: usize) -> Self {
        Self {
            order,
            n_meas,
            n_ctrl,
            theta: Array1::zeros(Self::dim_for(order, n_meas, n_ctrl)),
        }
    }

    /// Pack a controller realization. The controller maps measurements `y`
    /// (inputs) to controls `u` (outputs).
    pub fn pack(sys: &StateSpaceSystem) -> Self {
        let order = sys.order();
        let n_meas = sys.n_inputs();
        let n_ctrl = sys.n_outputs();
        let mut theta = Vec::with_capacity(Self::dim_for(order, n_meas, n_ctrl));
        theta.extend(sys.a.iter());
        theta.extend(sys.b.iter());
        theta.extend(sys.c.iter());
        theta.extend(sys.d.iter());
        Self {
            order,
            n_meas,
            n_ctrl,
            theta: Array1::from(theta),
        }
    }

    /// Recover the controller realization `(A_K, B_K, C_K, D_K)`.
    pub fn unpack(&self) -> StateSpaceSystem {
        StateSpaceSystem {
            a: self.a_k(),
            b: self.b_k(),
            c: self.c_k(),
            d: self.d_k(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_meas(&self) -> usize {
        self.n_meas
    }

    pub fn n_ctrl(&self) -> usize {
        self.n_ctrl
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn into_theta(self) -> Array1<f64> {
        self.theta
    }

    fn block(&self, offset: usize, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_vec(
            (rows, cols),
            self.theta.slice(s![offset..offset + rows * cols]).to_vec(),
        )
        .expect("block shape consistent with offset arithmetic")
    }

    pub fn a_k(&self) -> Array2<f64> {
        self.block(0, self.order, self.order)
    }

    pub fn b_k(&self) -> Array2<f64> {
        self.block(self.order * self.order, self.order, self.n_meas)
    }

    pub fn c_k(&self) -> Array2<f64> {
        let off = self.order * self.order + self.order * self.n_meas;
        self.block(off, self.n_ctrl, self.order)
    }

    pub fn d_k(&self) -> Array2<f64> {
        let off =
            self.order * self.order + self.order * self.n_meas + self.n_ctrl * self.order;
        self.block(off, self.n_ctrl, self.n_meas)
    }
}

fn hstack(left: &Array2<f64>, right: &Array2<f64>) -> Array2<f64> {
    assert_eq!(left.nrows(), right.nrows());
    let mut out = Array2::zeros((left.nrows(), left.ncols() + right.ncols()));
    out.slice_mut(s![.., ..left.ncols()]).assign(left);
    out.slice_mut(s![.., left.ncols()..]).assign(right);
    out
}

fn vstack(top: &Array2<f64>, bottom: &Array2<f64>) -> Array2<f64> {
    assert_eq!(top.ncols(), bottom.ncols());
    let mut out = Array2::zeros((top.nrows() + bottom.nrows(), top.ncols()));
    out.slice_mut(s![..top.nrows(), ..]).assign(top);
    out.slice_mut(s![top.nrows().., ..]).assign(bottom);
    out
}

/// Invert the loop matrix `delta = I - D_K D22`, rejecting ill-posed loops.
///
/// Returns the inverse. Shared by `close_loop` and the gradient chain rule
/// so both sides see the identical well-posedness decision.
pub(crate) fn loop_inverse(
    d_k: &Array2<f64>,
    d22: &Array2<f64>,
) -> Result<Array2<f64>, LtiError> {
    let m2 = d_k.nrows();
    if m2 == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let delta = Array2::eye(m2) - d_k.dot(d22);
    let (_, sv, _) = delta
        .svd(false, false)
        .map_err(|e| LtiError::EigenFailure(format!("svd of loop matrix: {e}")))?;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > TOL_SINGULAR * smax.max(1.0)) {
        return Err(LtiError::WellPosedness {
            inverse_norm: if smin > 0.0 { 1.0 / smin } else { f64::INFINITY },
        });
    }
    delta
        .inv()
        .map_err(|e| LtiError::EigenFailure(format!("loop matrix inversion: {e}")))
}

/// Connect a controller to a generalized plant and return the realization of
/// the closed-loop transfer `T_zw` from `w` to `z`. The state dimension of
/// the result is `n + n_K`; its `A` block is the closed-loop matrix `A_CL`.
pub fn close_loop(
    plant: &GeneralizedPlant,
    k: &ControllerParams,
) -> Result<StateSpaceSystem, LtiError> {
    if k.n_meas() != plant.n_meas() || k.n_ctrl() != plant.n_ctrl() {
        return Err(LtiError::Dimension(format!(
            "controller is {}x{} (u x y), plant wants {}x{}",
            k.n_ctrl(),
            k.n_meas(),
            plant.n_ctrl(),
            plant.n_meas()
        )));
    }
    let (a_k, b_k, c_k, d_k) = (k.a_k(), k.b_k(), k.c_k(), k.d_k());
    let m = loop_inverse(&d_k, &plant.d22)?;
    // w_gain = I + D22 M D_K  ( = (I - D22 D_K)^{-1} by the push-through identity )
    let p2 = plant.n_meas();
    let w_gain = Array2::eye(p2) + plant.d22.dot(&m).dot(&d_k);

    let b2m = plant.b2.dot(&m);
    let a11 = &plant.a + &b2m.dot(&d_k).dot(&plant.c2);
    let a12 = b2m.dot(&c_k);
    let a21 = b_k.dot(&w_gain).dot(&plant.c2);
    let a22 = &a_k + &b_k.dot(&plant.d22).dot(&m).dot(&c_k);
    let a_cl = vstack(&hstack(&a11, &a12), &hstack(&a21, &a22));

    let b_top = &plant.b1 + &b2m.dot(&d_k).dot(&plant.d21);
    let b_bot = b_k.dot(&w_gain).dot(&plant.d21);
    let b_cl = vstack(&b_top, &b_bot);

    let d12m = plant.d12.dot(&m);
    let c_left = &plant.c1 + &d12m.dot(&d_k).dot(&plant.c2);
    let c_right = d12m.dot(&c_k);
    let c_cl = hstack(&c_left, &c_right);

    let d_cl = &plant.d11 + &d12m.dot(&d_k).dot(&plant.d21);

    StateSpaceSystem::new(a_cl, b_cl, c_cl, d_cl)
}

/// Largest real part over the eigenvalues of `m`.
///
/// By convention the spectral abscissa of the empty matrix is `-inf`, so
/// static (order-zero) controllers are vacuously stable.
pub fn spectral_abscissa(m: &Array2<f64>) -> Result<f64, LtiError> {
    if m.nrows() != m.ncols() {
        return Err(LtiError::Dimension(format!(
            "spectral abscissa of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LtiError::EigenFailure("matrix has non-finite entries".into()));
    }
    let vals = m
        .eigvals()
        .map_err(|e| LtiError::EigenFailure(e.to_string()))?;
    Ok(vals.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

/// `true` iff every eigenvalue of `m` has real part strictly below `-margin`.
pub fn is_stable(m: &Array2<f64>, margin: f64) -> Result<bool, LtiError> {
    Ok(spectral_abscissa(m)? < -margin)
}

/// Evaluate the transfer function `C (i omega I - A)^{-1} B + D` via a
/// linear solve (never an explicit inverse).
pub fn freq_response(
    sys: &StateSpaceSystem,
    omega: f64,
) -> Result<Array2<Complex64>, LtiError> {
    let n = sys.order();
    let m = sys.n_inputs();
    let d_c = sys.d.mapv(|x| Complex64::new(x, 0.0));
    if n == 0 {
        return Ok(d_c);
    }
    let mut shifted = sys.a.mapv(|x| Complex64::new(-x, 0.0));
    for i in 0..n {
        shifted[[i, i]] += Complex64::new(0.0, omega);
    }
    let lu = shifted
        .factorize()
        .map_err(|_| LtiError::SingularFrequency { omega })?;
    let mut x = Array2::<Complex64>::zeros((n, m));
    for j in 0..m {
        let rhs = sys.b.column(j).mapv(|v| Complex64::new(v, 0.0));
        let col = lu
            .solve(&rhs)
            .map_err(|_| LtiError::SingularFrequency { omega })?;
        x.column_mut(j).assign(&col);
    }
    let g = sys.c.mapv(|v| Complex64::new(v, 0.0)).dot(&x) + d_c;
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(LtiError::SingularFrequency { omega });
    }
    Ok(g)
}

/// Eigenvalues and right eigenvectors. Fails on non-finite input or when the
/// eigenvalue iteration does not converge.
pub fn eig_full(m: &Array2<f64>) -> Result<(Array1<Complex64>, Array2<Complex64>), LtiError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LtiError::EigenFailure("matrix has non-finite entries".into()));
    }
    m.eig().map_err(|e| LtiError::EigenFailure(e.to_string()))
}
