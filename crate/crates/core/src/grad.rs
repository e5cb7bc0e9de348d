//! Analytic subgradients of the spectral-abscissa and H-infinity objectives
//! with respect to the controller parameter vector.
//!
//! Both objectives are differentiable almost everywhere. At a simple active
//! eigenvalue the abscissa gradient is the classical perturbation quotient
//! `Re(y^H (dM/dtheta) x)` with left/right eigenvectors normalized to
//! `y^H x = 1`; at a simple peak `(omega*, u, v)` the norm gradient is
//! `Re(u^H (dG(i omega*)/dtheta) v)`. The closed-loop chain rule treats the
//! controller as a static gain `Khat = [D_K C_K; B_K A_K]` on an augmented
//! plant, which factorizes every sensitivity as `Psi_L dKhat Psi_R`.
//!
//! No effort is made to detect exceptional (nonsmooth) points: ties are
//! broken deterministically and the result is one valid subgradient choice.

use crate::hinf::{hinf_norm, sigma_max_at, svd_triple, HinfError, NormResult};
use crate::lti::{
    close_loop, eig_full, loop_inverse, spectral_abscissa, ControllerParams, GeneralizedPlant,
    LtiError,
};
use ndarray::{s, Array1, Array2};
use ndarray_linalg::{Factorize, Solve};
use num_complex::Complex64;
use thiserror::Error;

/// Eigenvalues within this (scaled) distance of the abscissa form the
/// active cluster for tie-breaking.
pub const TOL_CLUSTER: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("active eigenvalue cluster is numerically defective")]
    DefectiveEigenvalue,
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Hinf(#[from] HinfError),
}

/// Which matrix the spectral-abscissa objective targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichMatrix {
    ClosedLoop,
    Controller,
}

/// Which transfer function the norm objective targets.
#[derive(Debug, Clone, Copy)]
pub enum HinfTarget<'a> {
    /// The closed loop `T_zw` of the given plant with the controller.
    ClosedLoop(&'a GeneralizedPlant),
    /// The controller's own transfer function.
    Controller,
}

/// What produced the gradient at this point.
#[derive(Debug, Clone, PartialEq)]
pub enum ActiveCertificate {
    /// A simple active eigenvalue of the targeted matrix.
    Eigenvalue { lambda: Complex64 },
    /// A certified peak of the largest singular value.
    Peak {
        omega: f64,
        sigma: f64,
        at_infinity: bool,
    },
    /// The value is infinite (stability barrier); no gradient exists.
    Unstable,
    /// Vacuous convention such as `alpha` of an order-zero controller.
    Vacuous,
}

/// A scalar objective value with its gradient in theta coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEval {
    pub value: f64,
    /// Present whenever `value` is finite; length equals `dim(theta)`.
    pub grad: Option<Array1<f64>>,
    pub certificate: ActiveCertificate,
}

fn real_to_c(m: &Array2<f64>) -> Array2<Complex64> {
    m.mapv(|x| Complex64::new(x, 0.0))
}

/// Pick the active eigenvalue: largest real part, ties within the cluster
/// tolerance resolved toward largest |Im|, then the +Im member of a pair.
pub(crate) fn active_index(vals: &Array1<Complex64>) -> usize {
    let alpha = vals.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let tol = TOL_CLUSTER * (1.0 + alpha.abs());
    let mut best: Option<usize> = None;
    for (i, l) in vals.iter().enumerate() {
        if alpha - l.re > tol {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(j) => {
                let lj = vals[j];
                let better = (l.im.abs(), l.im) > (lj.im.abs(), lj.im);
                if better {
                    Some(i)
                } else {
                    Some(j)
                }
            }
        };
    }
    best.expect("non-empty spectrum")
}

/// Right/left eigenvectors of the active eigenvalue, scaled to `|x| = 1`
/// with `y^H x = 1`.
fn left_right_active(
    m: &Array2<f64>,
) -> Result<(Array1<Complex64>, Array1<Complex64>, Complex64), GradError> {
    let (vals, vecs) = eig_full(m)?;
    let idx = active_index(&vals);
    let lambda = vals[idx];
    let x = vecs.column(idx).to_owned();
    // row idx of V^{-1} is the matching left eigenvector (transposed), and
    // the pairing y^H x = 1 comes for free from V^{-1} V = I
    let n = m.nrows();
    let mut e = Array1::<Complex64>::zeros(n);
    e[idx] = Complex64::new(1.0, 0.0);
    let vt = vecs.t().to_owned();
    let w = vt
        .solve(&e)
        .map_err(|_| GradError::DefectiveEigenvalue)?;
    let wnorm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !wnorm.is_finite() || wnorm > 1e12 {
        return Err(GradError::DefectiveEigenvalue);
    }
    let y = w.mapv(|z| z.conj());
    let xnorm = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok((x.mapv(|z| z / xnorm), y.mapv(|z| z * xnorm), lambda))
}

/// The augmented interconnection factors for sensitivities with respect to
/// the static gain `Khat = [D_K C_K; B_K A_K]`.
///
/// `b2l = Btilde2 * L` and `rc2 = R * Ctilde2` cover the A-block chain rule;
/// `d12l = Dtilde12 * L` and `rd21 = R * Dtilde21` extend it to the full
/// transfer function.
struct AugFactors {
    b2l: Array2<f64>,
    rc2: Array2<f64>,
    d12l: Array2<f64>,
    rd21: Array2<f64>,
}

fn aug_factors(plant: &GeneralizedPlant, k: &ControllerParams) -> Result<AugFactors, GradError> {
    let (n, m1, m2, p1, p2, nk) = (
        plant.n_states(),
        plant.n_exo(),
        plant.n_ctrl(),
        plant.n_reg(),
        plant.n_meas(),
        k.order(),
    );
    let (b_k, c_k, d_k) = (k.b_k(), k.c_k(), k.d_k());
    let m = loop_inverse(&d_k, &plant.d22)?;
    let w = Array2::eye(p2) + plant.d22.dot(&m).dot(&d_k); // (I - D22 D_K)^{-1}

    // L = [[M, 0], [B_K D22 M, I]],  R = [[W, W D22 C_K], [0, I]]
    let b2m = plant.b2.dot(&m);
    let bkd22m = b_k.dot(&plant.d22).dot(&m);
    let mut b2l = Array2::zeros((n + nk, m2 + nk));
    b2l.slice_mut(s![..n, ..m2]).assign(&b2m);
    b2l.slice_mut(s![n.., ..m2]).assign(&bkd22m);
    for i in 0..nk {
        b2l[[n + i, m2 + i]] = 1.0;
    }

    let wc2 = w.dot(&plant.c2);
    let wd22ck = w.dot(&plant.d22).dot(&c_k);
    let mut rc2 = Array2::zeros((p2 + nk, n + nk));
    rc2.slice_mut(s![..p2, ..n]).assign(&wc2);
    rc2.slice_mut(s![..p2, n..]).assign(&wd22ck);
    for i in 0..nk {
        rc2[[p2 + i, n + i]] = 1.0;
    }

    let d12m = plant.d12.dot(&m);
    let mut d12l = Array2::zeros((p1, m2 + nk));
    d12l.slice_mut(s![.., ..m2]).assign(&d12m);
    // the A_K columns of Dtilde12 L are zero: Dtilde12 = [D12 0]

    let wd21 = w.dot(&plant.d21);
    let mut rd21 = Array2::zeros((p2 + nk, m1));
    rd21.slice_mut(s![..p2, ..]).assign(&wd21);

    Ok(AugFactors {
        b2l,
        rc2,
        d12l,
        rd21,
    })
}

/// Assemble the theta-ordered gradient from the Khat sensitivity vectors:
/// `d/dKhat[p,q] = Re(conj(a[p]) * b[q])`.
fn khat_gradient(
    a: &Array1<Complex64>,
    b: &Array1<Complex64>,
    m2: usize,
    p2: usize,
    nk: usize,
) -> Array1<f64> {
    let entry = |p: usize, q: usize| (a[p].conj() * b[q]).re;
    let mut g = Vec::with_capacity(ControllerParams::dim_for(nk, p2, m2));
    // theta packs A_K, B_K, C_K, D_K row-major; Khat rows are [u; xdot_K]
    // against columns [y; x_K]
    for p in 0..nk {
        for q in 0..nk {
            g.push(entry(m2 + p, p2 + q)); // A_K
        }
    }
    for p in 0..nk {
        for q in 0..p2 {
            g.push(entry(m2 + p, q)); // B_K
        }
    }
    for p in 0..m2 {
        for q in 0..nk {
            g.push(entry(p, p2 + q)); // C_K
        }
    }
    for p in 0..m2 {
        for q in 0..p2 {
            g.push(entry(p, q)); // D_K
        }
    }
    Array1::from(g)
}

/// Gradient of the spectral abscissa of `A_CL` or `A_K` with respect to
/// theta. The value itself is computed along the same path as
/// [`spectral_abscissa`] so compositions agree bit-for-bit.
pub fn grad_spectral_abscissa(
    plant: &GeneralizedPlant,
    k: &ControllerParams,
    which: WhichMatrix,
) -> Result<GradEval, GradError> {
    let dim = k.dim();
    match which {
        WhichMatrix::Controller => {
            if k.order() == 0 {
                return Ok(GradEval {
                    value: f64::NEG_INFINITY,
                    grad: Some(Array1::zeros(dim)),
                    certificate: ActiveCertificate::Vacuous,
                });
            }
            let a_k = k.a_k();
            let value = spectral_abscissa(&a_k)?;
            let (x, y, lambda) = left_right_active(&a_k)?;
            let nk = k.order();
            let mut grad = Array1::zeros(dim);
            for p in 0..nk {
                for q in 0..nk {
                    grad[p * nk + q] = (y[p].conj() * x[q]).re;
                }
            }
            Ok(GradEval {
                value,
                grad: Some(grad),
                certificate: ActiveCertificate::Eigenvalue { lambda },
            })
        }
        WhichMatrix::ClosedLoop => {
            let cl = close_loop(plant, k)?;
            let value = spectral_abscissa(&cl.a)?;
            let (x, y, lambda) = left_right_active(&cl.a)?;
            let f = aug_factors(plant, k)?;
            let a = f.b2l.t().mapv(|r| Complex64::new(r, 0.0)).dot(&y);
            let b = f.rc2.mapv(|r| Complex64::new(r, 0.0)).dot(&x);
            let grad = khat_gradient(&a, &b, plant.n_ctrl(), plant.n_meas(), k.order());
            Ok(GradEval {
                value,
                grad: Some(grad),
                certificate: ActiveCertificate::Eigenvalue { lambda },
            })
        }
    }
}

/// Gradient of an H-infinity norm objective with respect to theta.
///
/// Requires the targeted system to be stable. When several frequencies
/// attain the norm within the tolerance, the smallest certified peak is the
/// (deterministic) subgradient choice.
pub fn grad_hinf(
    target: HinfTarget<'_>,
    k: &ControllerParams,
    rtol: f64,
) -> Result<GradEval, GradError> {
    match target {
        HinfTarget::ClosedLoop(plant) => grad_hinf_closed_loop(plant, k, rtol),
        HinfTarget::Controller => grad_hinf_controller(k, rtol),
    }
}

fn grad_hinf_closed_loop(
    plant: &GeneralizedPlant,
    k: &ControllerParams,
    rtol: f64,
) -> Result<GradEval, GradError> {
    let cl = close_loop(plant, k)?;
    let norm = hinf_norm(&cl, rtol)?;
    let f = aug_factors(plant, k)?;
    let (m2, p2, nk) = (plant.n_ctrl(), plant.n_meas(), k.order());

    let (a, b, cert) = if norm.attained_at_infinity {
        let (sigma, u, v) = svd_triple(&real_to_c(&cl.d))?;
        let a = f.d12l.t().mapv(|r| Complex64::new(r, 0.0)).dot(&u);
        let b = f.rd21.mapv(|r| Complex64::new(r, 0.0)).dot(&v);
        (
            a,
            b,
            ActiveCertificate::Peak {
                omega: norm.peak_omega,
                sigma,
                at_infinity: true,
            },
        )
    } else {
        let omega = norm.peak_omega;
        let (sigma, u, v) = sigma_max_at(&cl, omega)?;
        let ncl = cl.order();
        let mut shifted = cl.a.mapv(|x| Complex64::new(-x, 0.0));
        for i in 0..ncl {
            shifted[[i, i]] += Complex64::new(0.0, omega);
        }
        let lu = shifted
            .factorize()
            .map_err(|_| GradError::Lti(LtiError::SingularFrequency { omega }))?;
        let solve_mat = |rhs: &Array2<Complex64>| -> Result<Array2<Complex64>, GradError> {
            let mut out = Array2::zeros(rhs.dim());
            for j in 0..rhs.ncols() {
                let col = lu
                    .solve(&rhs.column(j).to_owned())
                    .map_err(|_| GradError::Lti(LtiError::SingularFrequency { omega }))?;
                out.column_mut(j).assign(&col);
            }
            Ok(out)
        };
        let y_b2 = solve_mat(&real_to_c(&f.b2l))?; // X * Btilde2 L
        let z_b = solve_mat(&real_to_c(&cl.b))?; // X * B_CL
        let c_cl = real_to_c(&cl.c);
        let psi_l = real_to_c(&f.d12l) + c_cl.dot(&y_b2);
        let psi_r = real_to_c(&f.rc2).dot(&z_b) + real_to_c(&f.rd21);
        let a = psi_l.t().mapv(|z| z.conj()).dot(&u);
        let b = psi_r.dot(&v);
        (
            a,
            b,
            ActiveCertificate::Peak {
                omega,
                sigma,
                at_infinity: false,
            },
        )
    };

    Ok(GradEval {
        value: norm.value,
        grad: Some(khat_gradient(&a, &b, m2, p2, nk)),
        certificate: cert,
    })
}

fn grad_hinf_controller(k: &ControllerParams, rtol: f64) -> Result<GradEval, GradError> {
    let nk = k.order();
    let (p2, m2) = (k.n_meas(), k.n_ctrl());
    let dim = k.dim();
    if nk == 0 {
        let (sigma, u, v) = svd_triple(&real_to_c(&k.d_k()))?;
        let mut grad = Array1::zeros(dim);
        for p in 0..m2 {
            for q in 0..p2 {
                grad[p * p2 + q] = (u[p].conj() * v[q]).re;
            }
        }
        return Ok(GradEval {
            value: sigma,
            grad: Some(grad),
            certificate: ActiveCertificate::Peak {
                omega: 0.0,
                sigma,
                at_infinity: true,
            },
        });
    }

    let ksys = k.unpack();
    let norm = hinf_norm(&ksys, rtol)?;
    let (a_k, b_k, c_k) = (k.a_k(), k.b_k(), k.c_k());
    let a_off = nk * nk;
    let b_off = a_off + nk * p2;
    let c_off = b_off + m2 * nk;

    let mut grad = Array1::zeros(dim);
    if norm.attained_at_infinity {
        let (sigma, u, v) = svd_triple(&real_to_c(&ksys.d))?;
        for p in 0..m2 {
            for q in 0..p2 {
                grad[c_off + p * p2 + q] = (u[p].conj() * v[q]).re;
            }
        }
        return Ok(GradEval {
            value: norm.value,
            grad: Some(grad),
            certificate: ActiveCertificate::Peak {
                omega: norm.peak_omega,
                sigma,
                at_infinity: true,
            },
        });
    }

    let omega = norm.peak_omega;
    let (sigma, u, v) = sigma_max_at(&ksys, omega)?;
    // c = ((C_K X)^H) u solved against (i w I - A_K)^H, d = X B_K v
    let mut fwd = a_k.mapv(|x| Complex64::new(-x, 0.0));
    let mut adj = a_k.t().mapv(|x| Complex64::new(-x, 0.0));
    for i in 0..nk {
        fwd[[i, i]] += Complex64::new(0.0, omega);
        adj[[i, i]] += Complex64::new(0.0, -omega);
    }
    let rhs_c = real_to_c(&c_k.t().to_owned()).dot(&u);
    let cvec = adj
        .solve(&rhs_c)
        .map_err(|_| GradError::Lti(LtiError::SingularFrequency { omega }))?;
    let rhs_d = real_to_c(&b_k).dot(&v);
    let dvec = fwd
        .solve(&rhs_d)
        .map_err(|_| GradError::Lti(LtiError::SingularFrequency { omega }))?;

    for p in 0..nk {
        for q in 0..nk {
            grad[p * nk + q] = (cvec[p].conj() * dvec[q]).re;
        }
    }
    for p in 0..nk {
        for q in 0..p2 {
            grad[a_off + p * p2 + q] = (cvec[p].conj() * v[q]).re;
        }
    }
    for p in 0..m2 {
        for q in 0..nk {
            grad[b_off + p * nk + q] = (u[p].conj() * dvec[q]).re;
        }
    }
    for p in 0..m2 {
        for q in 0..p2 {
            grad[c_off + p * p2 + q] = (u[p].conj() * v[q]).re;
        }
    }
    Ok(GradEval {
        value: norm.value,
        grad: Some(grad),
        certificate: ActiveCertificate::Peak {
            omega,
            sigma,
            at_infinity: false,
        },
    })
}

/// Re-exported for callers that need the norm alongside the gradient without
/// recomputing it.
pub fn hinf_norm_of_controller(k: &ControllerParams, rtol: f64) -> Result<NormResult, GradError> {
    if k.order() == 0 {
        let (sigma, _, _) = svd_triple(&real_to_c(&k.d_k()))?;
        return Ok(NormResult {
            value: sigma,
            peak_omega: 0.0,
            attained_at_infinity: true,
        });
    }
    Ok(hinf_norm(&k.unpack(), rtol)?)
}
