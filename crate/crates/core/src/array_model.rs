//! Physical model of the dual-functional base station: half-wavelength ULA
//! steering vectors with a center phase reference, the point-target response
//! matrix, frame covariance and beampattern, PSK geometry and Rayleigh
//! communication channels.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::linalg::{db_to_linear, hermitian_defect, CMat, CVec, J};

/// Array sizes, frame length, link budgets and modulation of one scenario.
///
/// Power and noise levels are kept in dBm as configured; the `*_linear`
/// accessors return milliwatts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_slots: usize,
    pub n_users: usize,
    pub n_targets: usize,
    pub power_budget_dbm: f64,
    pub noise_cu_dbm: Vec<f64>,
    pub noise_eve_dbm: Vec<f64>,
    pub noise_sensing_dbm: f64,
    pub psk_order: usize,
}

impl SystemConfig {
    /// Default geometry: 12 transmit and 10 receive antennas, 100 slots,
    /// 0 dBm noise everywhere and QPSK.
    pub fn with_counts(n_users: usize, n_targets: usize, power_budget_dbm: f64) -> Self {
        Self {
            n_tx: 12,
            n_rx: 10,
            n_slots: 100,
            n_users,
            n_targets,
            power_budget_dbm,
            noise_cu_dbm: vec![0.0; n_users],
            noise_eve_dbm: vec![0.0; n_targets],
            noise_sensing_dbm: 0.0,
            psk_order: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_tx", self.n_tx),
            ("n_rx", self.n_rx),
            ("n_slots", self.n_slots),
            ("n_users", self.n_users),
            ("n_targets", self.n_targets),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(IsacError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_tx % 2 != 0 {
            return Err(IsacError::Config(format!("n_tx must be even (got {})", self.n_tx)));
        }
        if self.n_rx % 2 != 0 {
            return Err(IsacError::Config(format!("n_rx must be even (got {})", self.n_rx)));
        }
        if !matches!(self.psk_order, 2 | 4 | 8 | 16) {
            return Err(IsacError::Config(format!(
                "psk_order must be one of 2, 4, 8, 16 (got {})",
                self.psk_order
            )));
        }
        if self.noise_cu_dbm.len() != self.n_users {
            return Err(IsacError::Config(format!(
                "noise_cu_dbm has {} entries, expected n_users = {}",
                self.noise_cu_dbm.len(),
                self.n_users
            )));
        }
        if self.noise_eve_dbm.len() != self.n_targets {
            return Err(IsacError::Config(format!(
                "noise_eve_dbm has {} entries, expected n_targets = {}",
                self.noise_eve_dbm.len(),
                self.n_targets
            )));
        }
        let levels = std::iter::once(("power_budget_dbm", self.power_budget_dbm))
            .chain(std::iter::once(("noise_sensing_dbm", self.noise_sensing_dbm)))
            .chain(self.noise_cu_dbm.iter().map(|&v| ("noise_cu_dbm", v)))
            .chain(self.noise_eve_dbm.iter().map(|&v| ("noise_eve_dbm", v)));
        for (name, v) in levels {
            if !v.is_finite() {
                return Err(IsacError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Per-slot power budget P_T in mW.
    pub fn power_budget(&self) -> f64 {
        db_to_linear(self.power_budget_dbm)
    }

    /// Bound on the squared Frobenius norm of the whole frame, `L * P_T`.
    pub fn frame_energy_budget(&self) -> f64 {
        self.n_slots as f64 * self.power_budget()
    }

    pub fn noise_cu(&self, user: usize) -> f64 {
        db_to_linear(self.noise_cu_dbm[user])
    }

    pub fn noise_eve(&self, target: usize) -> f64 {
        db_to_linear(self.noise_eve_dbm[target])
    }

    pub fn noise_sensing(&self) -> f64 {
        db_to_linear(self.noise_sensing_dbm)
    }

    pub fn half_angle(&self) -> f64 {
        PI / self.psk_order as f64
    }

    /// Number of real-valued unknowns, `3 * n_targets`.
    pub fn n_params(&self) -> usize {
        3 * self.n_targets
    }
}

/// Half-wavelength uniform linear array with the phase reference at its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UlaGeometry {
    n_elems: usize,
}

impl UlaGeometry {
    pub fn new(n_elems: usize) -> Result<Self> {
        if n_elems == 0 || n_elems % 2 != 0 {
            return Err(IsacError::Config(format!(
                "ULA element count must be a positive even number (got {n_elems})"
            )));
        }
        Ok(Self { n_elems })
    }

    pub fn n_elems(&self) -> usize {
        self.n_elems
    }

    /// Element offset from the array center in half-wavelength units.
    fn offset(&self, i: usize) -> f64 {
        i as f64 - (self.n_elems as f64 - 1.0) / 2.0
    }

    pub fn steering(&self, theta: f64) -> CVec {
        let s = theta.sin();
        DVector::from_fn(self.n_elems, |i, _| (J * (PI * self.offset(i) * s)).exp())
    }

    pub fn steering_derivative(&self, theta: f64) -> CVec {
        let (s, c) = theta.sin_cos();
        DVector::from_fn(self.n_elems, |i, _| {
            let w = PI * self.offset(i);
            J * (w * c) * (J * (w * s)).exp()
        })
    }
}

pub fn steering_vector(theta: f64, n: usize) -> Result<CVec> {
    Ok(UlaGeometry::new(n)?.steering(theta))
}

/// Derivative of [`steering_vector`] with respect to the angle. Orthogonal to
/// the steering vector itself because the weights are antisymmetric about
/// the array center.
pub fn steering_derivative(theta: f64, n: usize) -> Result<CVec> {
    Ok(UlaGeometry::new(n)?.steering_derivative(theta))
}

/// `H_S = sum_n alpha_n b(theta_n) a(theta_n)^H`, shape `n_rx x n_tx`.
pub fn target_response(alphas: &[Complex64], thetas: &[f64], n_rx: usize, n_tx: usize) -> Result<CMat> {
    if alphas.len() != thetas.len() {
        return Err(IsacError::Dimension(format!(
            "{} amplitudes but {} angles",
            alphas.len(),
            thetas.len()
        )));
    }
    let tx = UlaGeometry::new(n_tx)?;
    let rx = UlaGeometry::new(n_rx)?;
    let mut h = CMat::zeros(n_rx, n_tx);
    for (&alpha, &theta) in alphas.iter().zip(thetas) {
        let b = rx.steering(theta);
        let a = tx.steering(theta);
        h += (b * a.adjoint()) * alpha;
    }
    Ok(h)
}

/// `R_x = X X^H / L`.
pub fn sample_covariance(x: &CMat) -> Result<CMat> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(IsacError::Dimension("empty transmit frame".into()));
    }
    let mut r = x * x.adjoint() / Complex64::new(x.ncols() as f64, 0.0);
    // exact Hermitian symmetry
    for i in 0..r.nrows() {
        r[(i, i)].im = 0.0;
        for k in (i + 1)..r.ncols() {
            r[(k, i)] = r[(i, k)].conj();
        }
    }
    Ok(r)
}

/// Transmit beampattern `a(theta)^H R a(theta)` over `grid` (radians).
pub fn beampattern(r: &CMat, grid: &[f64]) -> Result<Vec<f64>> {
    if !r.is_square() {
        return Err(IsacError::Dimension("covariance must be square".into()));
    }
    let scale = 1.0 + r.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if hermitian_defect(r) > 1e-9 * scale {
        return Err(IsacError::Config("covariance is not Hermitian".into()));
    }
    let ula = UlaGeometry::new(r.nrows())?;
    Ok(grid
        .iter()
        .map(|&theta| {
            let a = ula.steering(theta);
            let p = (a.adjoint() * r * &a)[(0, 0)].re;
            p.max(0.0)
        })
        .collect())
}

/// M-PSK alphabet `e^{j 2 pi m / M}` with sector decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct PskConstellation {
    order: usize,
    points: Vec<Complex64>,
}

impl PskConstellation {
    pub fn new(order: usize) -> Result<Self> {
        if !matches!(order, 2 | 4 | 8 | 16) {
            return Err(IsacError::Config(format!(
                "PSK order must be one of 2, 4, 8, 16 (got {order})"
            )));
        }
        let points = (0..order)
            .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / order as f64))
            .collect();
        Ok(Self { order, points })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, m: usize) -> Complex64 {
        self.points[m]
    }

    /// Half-width of each decision sector, `pi / M`.
    pub fn half_angle(&self) -> f64 {
        PI / self.order as f64
    }

    /// Index of the sector containing `y` (nearest point in phase).
    pub fn decide(&self, y: Complex64) -> usize {
        let step = 2.0 * PI / self.order as f64;
        let k = (y.arg() / step).round() as i64;
        k.rem_euclid(self.order as i64) as usize
    }
}

/// Per-user MISO channels; user `k` receives `h_k^H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommChannelSet {
    pub h: Vec<CVec>,
}

impl CommChannelSet {
    pub fn new(h: Vec<CVec>) -> Result<Self> {
        if let Some(n) = h.first().map(|v| v.len()) {
            if h.iter().any(|v| v.len() != n) {
                return Err(IsacError::Dimension("channel vectors differ in length".into()));
            }
        }
        if h.iter()
            .flat_map(|v| v.iter())
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(IsacError::Numerical("non-finite channel entry".into()));
        }
        Ok(Self { h })
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }
}

/// Draws one standard circularly-symmetric complex Gaussian, `CN(0, 1)`.
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// I.i.d. `CN(0, 1)` Rayleigh channels, one `n_tx` vector per user.
pub fn generate_rayleigh_channels(cfg: &SystemConfig, seed: u64) -> CommChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (0..cfg.n_users)
        .map(|_| DVector::from_fn(cfg.n_tx, |_, _| complex_normal(&mut rng)))
        .collect();
    CommChannelSet { h }
}
