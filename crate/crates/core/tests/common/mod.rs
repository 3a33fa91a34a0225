//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secure_isac::array_model::{complex_normal, SystemConfig};
use secure_isac::bfim::BfimOptions;
use secure_isac::evaluate::Scenario;
use secure_isac::linalg::CMat;
use secure_isac::precoder::ConstraintSet;
use secure_isac::priors::{TargetPrior, TargetPriorSet};

/// Reference geometry: 12/10 antennas, 100 slots, 3 users, targets at -50 and -20 degrees.
pub fn reference_scenario(sigma_deg: f64, gamma_db: f64, power_dbm: f64, psk_order: usize, seed: u64) -> Scenario {
    let mut cfg = SystemConfig::with_counts(3, 2, power_dbm);
    cfg.psk_order = psk_order;
    let priors = TargetPriorSet::new(
        1.0,
        [-50.0f64, -20.0]
            .iter()
            .map(|&m| TargetPrior {
                mean: m.to_radians(),
                sigma: sigma_deg.to_radians(),
                path_loss: 1.0,
            })
            .collect(),
    )
    .unwrap();
    Scenario::build(
        cfg,
        priors,
        vec![gamma_db; 3],
        vec![-5.0; 2],
        500,
        BfimOptions::default(),
        seed,
    )
    .unwrap()
}

/// A reduced scenario that designs in well under a second.
pub fn small_scenario(
    n_tx: usize,
    n_slots: usize,
    users: usize,
    targets: usize,
    power_dbm: f64,
    seed: u64,
) -> Scenario {
    let mut cfg = SystemConfig::with_counts(users, targets, power_dbm);
    cfg.n_tx = n_tx;
    cfg.n_rx = n_tx;
    cfg.n_slots = n_slots;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let priors = TargetPriorSet::new(
        1.0,
        (0..targets)
            .map(|_| TargetPrior {
                mean: rng.gen_range(-60.0f64..60.0).to_radians(),
                sigma: rng.gen_range(1.0f64..6.0).to_radians(),
                path_loss: 1.0,
            })
            .collect(),
    )
    .unwrap();
    Scenario::build(
        cfg,
        priors,
        vec![10.0; users],
        vec![-5.0; targets],
        64,
        BfimOptions::default(),
        seed,
    )
    .unwrap()
}

pub fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Real coordinates of a frame: `[re, im]` per entry, slot-major.
pub fn to_real(x: &CMat) -> DVector<f64> {
    let n_tx = x.nrows();
    DVector::from_fn(2 * x.len(), |k, _| {
        let (l, rem) = (k / (2 * n_tx), k % (2 * n_tx));
        let z = x[(rem / 2, l)];
        if rem % 2 == 0 {
            z.re
        } else {
            z.im
        }
    })
}

pub fn from_real(v: &DVector<f64>, n_tx: usize, n_slots: usize) -> CMat {
    CMat::from_fn(n_tx, n_slots, |i, l| {
        let k = 2 * (l * n_tx + i);
        Complex64::new(v[k], v[k + 1])
    })
}

/// Dense real form `A x <= b` of every linear row.
pub fn real_rows(set: &ConstraintSet) -> (DMatrix<f64>, DVector<f64>) {
    let rows: Vec<_> = set.rows().collect();
    let dim = 2 * set.n_tx * set.n_slots;
    let mut a = DMatrix::zeros(rows.len(), dim);
    let mut b = DVector::zeros(rows.len());
    for (r, row) in rows.iter().enumerate() {
        for i in 0..set.n_tx {
            let k = 2 * (row.slot * set.n_tx + i);
            a[(r, k)] = row.coeff[i].re;
            a[(r, k + 1)] = row.coeff[i].im;
        }
        b[r] = row.rhs;
    }
    (a, b)
}

/// Exact minimum of `g^T x` over `{A x <= b, |x|^2 <= e}` by enumerating
/// active sets. Each subset of independent rows gives two candidates: the
/// minimizer on the sphere within the affine set, and the affine point
/// itself when the subset determines it uniquely. The best feasible
/// candidate is optimal because some active set certifies the optimum.
pub fn active_set_oracle(g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>, e: f64) -> Option<f64> {
    let m = a.nrows();
    let n = a.ncols();
    assert!(m <= 16, "enumeration is exponential in the row count");
    let scale = 1.0 + b.amax() + e.sqrt();
    let feasible = |x: &DVector<f64>| {
        let viol = (a * x - b).max();
        (m == 0 || viol <= 1e-9 * scale) && x.norm_squared() <= e * (1.0 + 1e-9)
    };
    let mut best: Option<f64> = None;
    let mut consider = |x: DVector<f64>| {
        if feasible(&x) {
            let f = g.dot(&x);
            if best.is_none_or(|b| f < b) {
                best = Some(f);
            }
        }
    };
    for mask in 0u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|&i| mask & (1 << i) != 0).collect();
        if idx.len() > n {
            continue;
        }
        let (x0, proj) = if idx.is_empty() {
            (DVector::zeros(n), DMatrix::identity(n, n))
        } else {
            let a_s = DMatrix::from_fn(idx.len(), n, |r, c| a[(idx[r], c)]);
            let b_s = DVector::from_fn(idx.len(), |r, _| b[idx[r]]);
            let gram = &a_s * a_s.transpose();
            let svd = gram.clone().svd(false, false);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() <= 1e-10 * smax {
                continue;
            }
            let Some(inv) = gram.try_inverse() else { continue };
            let x0 = a_s.transpose() * (&inv * b_s);
            let proj = DMatrix::identity(n, n) - a_s.transpose() * inv * a_s;
            (x0, proj)
        };
        let pg = &proj * g;
        let rest = e - x0.norm_squared();
        if pg.norm() > 1e-14 * g.norm() && rest >= 0.0 {
            consider(&x0 - &pg * (rest.sqrt() / pg.norm()));
        }
        if idx.len() == n || pg.norm() <= 1e-14 * g.norm() {
            consider(x0);
        }
    }
    best
}

/// Modified Bessel function `I0` by its power series.
pub fn bessel_i0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let q = x * x / 4.0;
    for k in 1..500 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Von Mises density on `(-pi, pi]`.
pub fn von_mises_pdf(x: f64, mu: f64, kappa: f64) -> f64 {
    // scaled to avoid overflow of I0 at large kappa
    let log_i0 = if kappa < 500.0 {
        bessel_i0(kappa).ln()
    } else {
        kappa - 0.5 * (2.0 * std::f64::consts::PI * kappa).ln()
    };
    (kappa * (x - mu).cos() - log_i0).exp() / (2.0 * std::f64::consts::PI)
}

/// Composite Simpson rule.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
