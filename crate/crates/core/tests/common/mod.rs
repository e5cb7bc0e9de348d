//! Shared generators and oracles for the integration tests.

use ndarray::{Array1, Array2};
use ndarray_linalg::EigVals;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use strongsyn::lti::{spectral_abscissa, ControllerParams, GeneralizedPlant, StateSpaceSystem};

pub fn randn_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for x in m.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    m
}

pub fn randn_vec(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let mut v = Array1::zeros(len);
    for x in v.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    v
}

/// Random stable system whose poles all have damping ratio at least
/// `min_damping` (keeps frequency-grid oracles honest near resonances).
pub fn random_stable_system(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    p: usize,
    min_damping: f64,
) -> StateSpaceSystem {
    loop {
        let a0 = randn_mat(rng, n, n);
        let alpha = spectral_abscissa(&a0).unwrap();
        let mu = 0.05 + 0.45 * rng.gen::<f64>();
        let mut a = a0;
        for i in 0..n {
            a[[i, i]] -= alpha + mu;
        }
        let ok = a
            .eigvals()
            .unwrap()
            .iter()
            .all(|l: &Complex64| l.re.abs() >= min_damping * l.norm());
        if !ok {
            continue;
        }
        let b = randn_mat(rng, n, m);
        let c = randn_mat(rng, p, n);
        let d = randn_mat(rng, p, m) * 0.5;
        return StateSpaceSystem::new(a, b, c, d).unwrap();
    }
}

/// Random generalized plant. `stable` shifts A to be Hurwitz; otherwise A is
/// left as drawn (possibly unstable).
#[allow(clippy::too_many_arguments)]
pub fn random_plant(
    rng: &mut ChaCha8Rng,
    n: usize,
    m1: usize,
    m2: usize,
    p1: usize,
    p2: usize,
    stable: bool,
    d22_zero: bool,
) -> GeneralizedPlant {
    let mut a = randn_mat(rng, n, n);
    if stable {
        let alpha = spectral_abscissa(&a).unwrap();
        let mu = 0.1 + 0.4 * rng.gen::<f64>();
        for i in 0..n {
            a[[i, i]] -= alpha + mu;
        }
    }
    let d22 = if d22_zero {
        Array2::zeros((p2, m2))
    } else {
        randn_mat(rng, p2, m2) * 0.2
    };
    GeneralizedPlant::new(
        a,
        randn_mat(rng, n, m1),
        randn_mat(rng, n, m2),
        randn_mat(rng, p1, n),
        randn_mat(rng, p2, n),
        randn_mat(rng, p1, m1) * 0.3,
        randn_mat(rng, p1, m2) * 0.5,
        randn_mat(rng, p2, m1) * 0.5,
        d22,
    )
    .unwrap()
}

/// Closed-form largest eigenvalue of a Hermitian matrix of size <= 3
/// (trigonometric method for the 3x3 case). Used by grid oracles where a
/// full SVD per point would dominate the runtime.
pub fn hermitian_lambda_max(h: &ndarray::Array2<Complex64>) -> f64 {
    match h.nrows() {
        0 => 0.0,
        1 => h[[0, 0]].re,
        2 => {
            let a = h[[0, 0]].re;
            let c = h[[1, 1]].re;
            let b2 = h[[0, 1]].norm_sqr();
            0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b2).sqrt()
        }
        3 => {
            let p1 = h[[0, 1]].norm_sqr() + h[[0, 2]].norm_sqr() + h[[1, 2]].norm_sqr();
            let d = [h[[0, 0]].re, h[[1, 1]].re, h[[2, 2]].re];
            if p1 == 0.0 {
                return d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
            let q = (d[0] + d[1] + d[2]) / 3.0;
            let p2 = (d[0] - q).powi(2) + (d[1] - q).powi(2) + (d[2] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = h.mapv(|z| z / p)
                - ndarray::Array2::eye(3).mapv(|x: f64| Complex64::new(x * q / p, 0.0));
            let det = (b[[0, 0]] * (b[[1, 1]] * b[[2, 2]] - b[[1, 2]] * b[[2, 1]])
                - b[[0, 1]] * (b[[1, 0]] * b[[2, 2]] - b[[1, 2]] * b[[2, 0]])
                + b[[0, 2]] * (b[[1, 0]] * b[[2, 1]] - b[[1, 1]] * b[[2, 0]]))
                .re;
            let r = (det / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * phi.cos()
        }
        _ => panic!("closed-form path only covers sizes up to 3"),
    }
}

/// Largest singular value of a complex matrix with min(p, m) <= 3, via the
/// smaller Gram matrix and the closed-form Hermitian eigenvalue.
pub fn sigma_max_small(g: &ndarray::Array2<Complex64>) -> f64 {
    let (p, m) = g.dim();
    let gram = if m <= p {
        let gh = g.mapv(|z| z.conj()).t().to_owned();
        gh.dot(g)
    } else {
        let gh = g.mapv(|z| z.conj()).t().to_owned();
        g.dot(&gh)
    };
    hermitian_lambda_max(&gram).max(0.0).sqrt()
}

pub fn random_controller(
    rng: &mut ChaCha8Rng,
    order: usize,
    n_meas: usize,
    n_ctrl: usize,
) -> ControllerParams {
    let dim = ControllerParams::dim_for(order, n_meas, n_ctrl);
    ControllerParams::from_theta(order, n_meas, n_ctrl, randn_vec(rng, dim)).unwrap()
}

/// Random controller whose own A-block is stable (shifted like the synthesis
/// driver's starts).
pub fn random_stable_controller(
    rng: &mut ChaCha8Rng,
    order: usize,
    n_meas: usize,
    n_ctrl: usize,
) -> ControllerParams {
    let k = random_controller(rng, order, n_meas, n_ctrl);
    if order == 0 {
        return k;
    }
    let mut theta = k.theta().clone();
    let alpha = spectral_abscissa(&k.a_k()).unwrap();
    for i in 0..order {
        theta[i * order + i] -= alpha + 0.1;
    }
    ControllerParams::from_theta(order, n_meas, n_ctrl, theta).unwrap()
}
