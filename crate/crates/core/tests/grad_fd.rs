//! Finite-difference oracles for the analytic gradients.
//!
//! Every check first certifies the point is smooth (simple active
//! eigenvalue, or a unique simple peak) and only then compares central
//! differences against the analytic formulas. Norm evaluations inside the
//! difference quotient run at a far tighter tolerance than the optimizer
//! default so bisection noise stays below the h = 1e-6 signal.

mod common;

use common::*;
use ndarray::{Array1, Array2};
use ndarray_linalg::{EigVals, SVD};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strongsyn::grad::{grad_hinf, grad_spectral_abscissa, HinfTarget, WhichMatrix};
use strongsyn::hinf::hinf_norm;
use strongsyn::lti::{close_loop, freq_response, spectral_abscissa, ControllerParams};

const FD_H: f64 = 1e-6;
const TIGHT_RTOL: f64 = 1e-13;

fn central_diff(f: &dyn Fn(&Array1<f64>) -> f64, theta: &Array1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::zeros(theta.len());
    for j in 0..theta.len() {
        let mut tp = theta.clone();
        tp[j] += h;
        let mut tm = theta.clone();
        tm[j] -= h;
        g[j] = (f(&tp) - f(&tm)) / (2.0 * h);
    }
    g
}

fn inf_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn rel_inf_err(fd: &Array1<f64>, an: &Array1<f64>) -> f64 {
    let scale = inf_norm(an).max(1e-10);
    fd.iter()
        .zip(an.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// The active eigenvalue is simple with a comfortable spectral gap: the
/// largest real part exceeds every non-conjugate competitor by `gap`.
fn simple_active(m: &Array2<f64>, gap: f64) -> bool {
    if m.nrows() == 0 {
        return false;
    }
    let vals = m.eigvals().unwrap();
    let alpha = vals.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let lead: Vec<Complex64> = vals.iter().cloned().filter(|l| alpha - l.re < gap).collect();
    match lead.len() {
        1 => true,
        2 => (lead[0] - lead[1].conj()).norm() < 1e-7 * (1.0 + lead[0].norm()),
        _ => false,
    }
}

/// Unique simple finite-frequency peak: clear of the D-gain, of the second
/// singular value, and of any secondary summit elsewhere on the axis.
fn unique_finite_peak(sys: &strongsyn::lti::StateSpaceSystem) -> bool {
    let Ok(r) = hinf_norm(sys, 1e-9) else {
        return false;
    };
    if r.attained_at_infinity || r.value <= 0.0 {
        return false;
    }
    let (_, sd, _) = sys.d.svd(false, false).unwrap();
    let sd = if sd.is_empty() { 0.0 } else { sd[0] };
    if sd > 0.9 * r.value {
        return false;
    }
    let g = freq_response(sys, r.peak_omega).unwrap();
    let (_, sv, _) = g.svd(false, false).unwrap();
    if sv.len() > 1 && sv[1] > (1.0 - 1e-3) * sv[0] {
        return false;
    }
    // no secondary summit within 0.5% of the value outside the peak window
    for i in 0..400 {
        let w = r.peak_omega.max(1e-3) * 10f64.powf(-3.0 + 6.0 * i as f64 / 399.0);
        if (w / r.peak_omega.max(1e-12)).ln().abs() < 0.2 {
            continue;
        }
        let s = sigma_max_small(&freq_response(sys, w).unwrap());
        if s > (1.0 - 5e-3) * r.value {
            return false;
        }
    }
    true
}

#[test]
fn closed_loop_abscissa_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut done = 0;
    while done < 15 {
        let plant = random_plant(&mut rng, 3, 1, 1, 1, 1, false, false);
        let k = random_controller(&mut rng, 1, 1, 1);
        let Ok(cl) = close_loop(&plant, &k) else {
            continue;
        };
        if !simple_active(&cl.a, 1e-3) {
            continue;
        }
        let an = grad_spectral_abscissa(&plant, &k, WhichMatrix::ClosedLoop)
            .unwrap()
            .grad
            .unwrap();
        let plant_ref = &plant;
        let f = move |t: &Array1<f64>| {
            let kk = ControllerParams::from_theta(1, 1, 1, t.clone()).unwrap();
            spectral_abscissa(&close_loop(plant_ref, &kk).unwrap().a).unwrap()
        };
        let fd = central_diff(&f, k.theta(), FD_H);
        let err = rel_inf_err(&fd, &an);
        assert!(err <= 1e-5, "closed-loop abscissa FD mismatch: {err}");
        done += 1;
    }
}

#[test]
fn controller_abscissa_matches_differences_and_ignores_plant() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut done = 0;
    while done < 10 {
        let plant_a = random_plant(&mut rng, 3, 1, 1, 1, 1, false, false);
        let plant_b = random_plant(&mut rng, 4, 2, 1, 2, 1, true, true);
        let k = random_controller(&mut rng, 2, 1, 1);
        if !simple_active(&k.a_k(), 1e-3) {
            continue;
        }
        let ga = grad_spectral_abscissa(&plant_a, &k, WhichMatrix::Controller).unwrap();
        let gb = grad_spectral_abscissa(&plant_b, &k, WhichMatrix::Controller).unwrap();
        assert_eq!(ga.value, gb.value, "alpha(A_K) must not depend on the plant");
        assert_eq!(ga.grad, gb.grad);
        let f = |t: &Array1<f64>| {
            let kk = ControllerParams::from_theta(2, 1, 1, t.clone()).unwrap();
            spectral_abscissa(&kk.a_k()).unwrap()
        };
        let fd = central_diff(&f, k.theta(), FD_H);
        let err = rel_inf_err(&fd, &ga.grad.unwrap());
        assert!(err <= 1e-5, "controller abscissa FD mismatch: {err}");
        done += 1;
    }
}

#[test]
fn closed_loop_norm_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut done = 0;
    let mut attempts = 0;
    while done < 8 {
        attempts += 1;
        assert!(attempts < 600, "could not sample enough smooth points");
        let plant = random_plant(&mut rng, 3, 2, 1, 2, 1, true, false);
        let k = random_stable_controller(&mut rng, 2, 1, 1);
        let Ok(cl) = close_loop(&plant, &k) else {
            continue;
        };
        if !matches!(spectral_abscissa(&cl.a), Ok(a) if a < -0.05) {
            continue;
        }
        if !unique_finite_peak(&cl) {
            continue;
        }
        let an = grad_hinf(HinfTarget::ClosedLoop(&plant), &k, 1e-9)
            .unwrap()
            .grad
            .unwrap();
        let plant_ref = &plant;
        let f = move |t: &Array1<f64>| {
            let kk = ControllerParams::from_theta(2, 1, 1, t.clone()).unwrap();
            hinf_norm(&close_loop(plant_ref, &kk).unwrap(), TIGHT_RTOL)
                .unwrap()
                .value
        };
        let fd = central_diff(&f, k.theta(), FD_H);
        let err = rel_inf_err(&fd, &an);
        assert!(err <= 1e-4, "closed-loop norm FD mismatch: {err}");
        done += 1;
    }
}

#[test]
fn controller_norm_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let mut done = 0;
    let mut attempts = 0;
    while done < 8 {
        attempts += 1;
        assert!(attempts < 600, "could not sample enough smooth points");
        let k = random_stable_controller(&mut rng, 2, 2, 1);
        let ksys = k.unpack();
        if !matches!(spectral_abscissa(&ksys.a), Ok(a) if a < -0.05) {
            continue;
        }
        if !unique_finite_peak(&ksys) {
            continue;
        }
        let an = grad_hinf(HinfTarget::Controller, &k, 1e-9)
            .unwrap()
            .grad
            .unwrap();
        let f = |t: &Array1<f64>| {
            let kk = ControllerParams::from_theta(2, 2, 1, t.clone()).unwrap();
            hinf_norm(&kk.unpack(), TIGHT_RTOL).unwrap().value
        };
        let fd = central_diff(&f, k.theta(), FD_H);
        let err = rel_inf_err(&fd, &an);
        assert!(err <= 1e-4, "controller norm FD mismatch: {err}");
        done += 1;
    }
}

#[test]
fn static_gain_chain_rule_consistency() {
    // n_K = 0, scalar D_K: the theta gradient must match the 1-D derivative
    // of d -> |Tzw(d)|_inf
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut done = 0;
    let mut attempts = 0;
    while done < 6 {
        attempts += 1;
        assert!(attempts < 600, "could not sample enough smooth points");
        let plant = random_plant(&mut rng, 3, 1, 1, 1, 1, true, false);
        let d0: f64 = 0.5 * rng.gen::<f64>() - 0.25;
        let k = ControllerParams::from_theta(0, 1, 1, ndarray::array![d0]).unwrap();
        let Ok(cl) = close_loop(&plant, &k) else {
            continue;
        };
        if !matches!(spectral_abscissa(&cl.a), Ok(a) if a < -0.05) {
            continue;
        }
        if !unique_finite_peak(&cl) {
            continue;
        }
        let an = grad_hinf(HinfTarget::ClosedLoop(&plant), &k, 1e-9)
            .unwrap()
            .grad
            .unwrap();
        let g = |d: f64| {
            let kk = ControllerParams::from_theta(0, 1, 1, ndarray::array![d]).unwrap();
            hinf_norm(&close_loop(&plant, &kk).unwrap(), TIGHT_RTOL)
                .unwrap()
                .value
        };
        let fd = (g(d0 + FD_H) - g(d0 - FD_H)) / (2.0 * FD_H);
        assert!(
            (fd - an[0]).abs() <= 1e-6 * an[0].abs().max(1.0),
            "scalar chain rule mismatch: fd {fd} vs analytic {}",
            an[0]
        );
        done += 1;
    }
}
