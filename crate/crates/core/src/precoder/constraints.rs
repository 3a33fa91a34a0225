//! Per-slot linear constraints of the symbol-level design: the constructive
//! region at every user and one of the three convex zones of the destructive
//! region at every target.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array_model::{CommChannelSet, PskConstellation, SystemConfig, UlaGeometry};
use crate::error::{IsacError, Result};
use crate::linalg::{db_to_linear, re_inner, CMat, CVec, J};
use crate::priors::TargetPriorSet;
use num_complex::Complex64;

/// Intended PSK symbols, users x slots.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    psk: PskConstellation,
    indices: Vec<Vec<usize>>,
}

impl SymbolFrame {
    pub fn from_indices(psk: PskConstellation, indices: Vec<Vec<usize>>) -> Result<Self> {
        let l = indices.first().map_or(0, Vec::len);
        if indices.is_empty() || l == 0 {
            return Err(IsacError::Dimension("symbol frame must be non-empty".into()));
        }
        if indices.iter().any(|row| row.len() != l) {
            return Err(IsacError::Dimension("ragged symbol frame".into()));
        }
        if indices.iter().flatten().any(|&m| m >= psk.order()) {
            return Err(IsacError::Config("symbol index outside the constellation".into()));
        }
        Ok(Self { psk, indices })
    }

    /// Uniform i.i.d. symbols.
    pub fn random<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Self> {
        let psk = PskConstellation::new(cfg.psk_order)?;
        let indices = (0..cfg.n_users)
            .map(|_| (0..cfg.n_slots).map(|_| rng.gen_range(0..psk.order())).collect())
            .collect();
        Self::from_indices(psk, indices)
    }

    pub fn n_users(&self) -> usize {
        self.indices.len()
    }

    pub fn n_slots(&self) -> usize {
        self.indices[0].len()
    }

    pub fn constellation(&self) -> &PskConstellation {
        &self.psk
    }

    pub fn index(&self, user: usize, slot: usize) -> usize {
        self.indices[user][slot]
    }

    pub fn symbol(&self, user: usize, slot: usize) -> Complex64 {
        self.psk.point(self.indices[user][slot])
    }

    /// Symbols as a `K x L` matrix.
    pub fn matrix(&self) -> CMat {
        DMatrix::from_fn(self.n_users(), self.n_slots(), |k, l| self.symbol(k, l))
    }
}

/// The three convex zones whose union is the destructive region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiZone {
    /// `Re(u) <= tau`.
    Inner,
    /// `Im(u) >= (Re(u) - tau) tan(phi)` and `Re(u) >= tau`.
    Upper,
    /// `-Im(u) >= (Re(u) - tau) tan(phi)` and `Re(u) >= tau`.
    Lower,
}

impl DiZone {
    pub const ALL: [DiZone; 3] = [DiZone::Inner, DiZone::Upper, DiZone::Lower];

    /// Case number 1, 2 or 3.
    pub fn id(self) -> u8 {
        match self {
            DiZone::Inner => 1,
            DiZone::Upper => 2,
            DiZone::Lower => 3,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(DiZone::Inner),
            2 => Ok(DiZone::Upper),
            3 => Ok(DiZone::Lower),
            _ => Err(IsacError::Config(format!(
                "destructive-region case must be 1, 2 or 3 (got {id})"
            ))),
        }
    }

    /// Membership of a rotated Eve observation `u` in this zone.
    pub fn contains(self, u: Complex64, tau: f64, phi: f64) -> bool {
        match self {
            DiZone::Inner => u.re <= tau,
            DiZone::Upper => u.re >= tau && sector_side(u.im, u.re - tau, phi) >= 0.0,
            DiZone::Lower => u.re >= tau && sector_side(-u.im, u.re - tau, phi) >= 0.0,
        }
    }
}

impl fmt::Display for DiZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// `im - re * tan(phi)` with the `phi = pi/2` limit handled as `-re`.
fn sector_side(im: f64, re: f64, phi: f64) -> f64 {
    if is_half_plane(phi) {
        -re
    } else {
        im - re * phi.tan()
    }
}

fn is_half_plane(phi: f64) -> bool {
    (phi - std::f64::consts::FRAC_PI_2).abs() < 1e-12
}

/// Smallest slack of the constructive-region inequalities
/// `|Im v| <= (Re v - threshold) tan(phi)`. Non-negative iff `v` is inside.
pub fn ci_margin(v: Complex64, threshold: f64, phi: f64) -> f64 {
    if is_half_plane(phi) {
        v.re - threshold
    } else {
        (v.re - threshold) * phi.tan() - v.im.abs()
    }
}

/// The (closed) destructive region `|Im u| >= (Re u - tau) tan(phi)`.
pub fn in_destructive_region(u: Complex64, tau: f64, phi: f64) -> bool {
    if is_half_plane(phi) {
        u.re <= tau
    } else {
        u.im.abs() >= (u.re - tau) * phi.tan()
    }
}

/// Which part of the frame a row constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RowOrigin {
    Constructive { user: usize },
    Destructive { target: usize },
}

/// `Re(coeff^H x_slot) <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub slot: usize,
    pub coeff: CVec,
    pub rhs: f64,
    pub origin: RowOrigin,
}

impl LinearRow {
    pub fn value(&self, x_slot: &CVec) -> f64 {
        re_inner(self.coeff.iter(), x_slot.iter())
    }

    /// `rhs - Re(coeff^H x)`; negative when violated.
    pub fn slack(&self, x_slot: &CVec) -> f64 {
        self.rhs - self.value(x_slot)
    }
}

/// Rows encoding `|Im(w^H x)| <= (Re(w^H x) - threshold) tan(phi)`.
fn ci_rows(w: &CVec, threshold: f64, phi: f64, slot: usize, origin: RowOrigin) -> Vec<LinearRow> {
    if is_half_plane(phi) {
        return vec![LinearRow {
            slot,
            coeff: -w,
            rhs: -threshold,
            origin,
        }];
    }
    let t = phi.tan();
    let iw = w * J;
    [1.0, -1.0]
        .into_iter()
        .map(|sign| LinearRow {
            slot,
            coeff: &iw * Complex64::new(sign, 0.0) - w * Complex64::new(t, 0.0),
            rhs: -threshold * t,
            origin,
        })
        .collect()
}

/// Constructive-interference rows for every user and slot:
/// with `v = s_kl^* h_k^H x_l`, `+-Im(v) <= (Re(v) - sqrt(sigma_k^2 Gamma_k)) tan(phi)`.
pub fn build_ci_constraints(
    channels: &CommChannelSet,
    symbols: &SymbolFrame,
    gammas_db: &[f64],
    noise_cu: &[f64],
    phi: f64,
) -> Result<Vec<LinearRow>> {
    if !(phi > 0.0 && phi <= std::f64::consts::FRAC_PI_2 + 1e-12) {
        return Err(IsacError::Config(format!(
            "PSK half-angle {phi} gives non-positive tan"
        )));
    }
    let k_users = channels.n_users();
    if symbols.n_users() != k_users || gammas_db.len() != k_users || noise_cu.len() != k_users {
        return Err(IsacError::Dimension(format!(
            "{k_users} channels, {} symbol streams, {} thresholds, {} noise levels",
            symbols.n_users(),
            gammas_db.len(),
            noise_cu.len()
        )));
    }
    let mut rows = Vec::new();
    for k in 0..k_users {
        let threshold = (noise_cu[k] * db_to_linear(gammas_db[k])).sqrt();
        for l in 0..symbols.n_slots() {
            // v = s^* h^H x = (h s)^H x
            let w = &channels.h[k] * symbols.symbol(k, l);
            rows.extend(ci_rows(&w, threshold, phi, l, RowOrigin::Constructive { user: k }));
        }
    }
    Ok(rows)
}

/// `tau_n = sqrt(sigma_E,n^2 * 10^(tau_dB / 10))`.
pub fn eve_threshold(noise_eve: f64, tau_db: f64) -> f64 {
    (noise_eve * db_to_linear(tau_db)).sqrt()
}

/// Effective Eve channel `beta_n a(mu_n)`; Eve `n` observes its adjoint times `x`.
pub fn eve_channel(priors: &TargetPriorSet, target: usize, n_tx: usize) -> Result<CVec> {
    let t = &priors.targets[target];
    Ok(UlaGeometry::new(n_tx)?.steering(t.mean) * Complex64::new(t.path_loss, 0.0))
}

/// Destructive-interference rows for one zone applied to every target and
/// slot, with `u = s_1l^* beta_n a(mu_n)^H x_l`.
pub fn build_di_constraints(
    zone: DiZone,
    priors: &TargetPriorSet,
    symbols: &SymbolFrame,
    taus_db: &[f64],
    noise_eve: &[f64],
    phi: f64,
    cfg: &SystemConfig,
) -> Result<Vec<LinearRow>> {
    let n_targets = priors.n_targets();
    if taus_db.len() != n_targets || noise_eve.len() != n_targets {
        return Err(IsacError::Dimension(format!(
            "{n_targets} targets, {} thresholds, {} noise levels",
            taus_db.len(),
            noise_eve.len()
        )));
    }
    let half_plane = is_half_plane(phi);
    let t = phi.tan();
    let mut rows = Vec::new();
    for n in 0..n_targets {
        let tau = eve_threshold(noise_eve[n], taus_db[n]);
        let a = eve_channel(priors, n, cfg.n_tx)?;
        let origin = RowOrigin::Destructive { target: n };
        for l in 0..symbols.n_slots() {
            let w = &a * symbols.symbol(0, l);
            let iw = &w * J;
            let mut push = |coeff: CVec, rhs: f64| {
                rows.push(LinearRow {
                    slot: l,
                    coeff,
                    rhs,
                    origin,
                })
            };
            match zone {
                DiZone::Inner => push(w.clone(), tau),
                DiZone::Upper | DiZone::Lower => {
                    let sign = if zone == DiZone::Upper { 1.0 } else { -1.0 };
                    if half_plane {
                        push(w.clone(), tau);
                    } else {
                        // tan(phi) Re(u) -+ Im(u) <= tau tan(phi)
                        push(&w * Complex64::new(t, 0.0) - &iw * Complex64::new(sign, 0.0), tau * t);
                    }
                    push(-&w, -tau);
                }
            }
        }
    }
    Ok(rows)
}

/// Feasible set of one convex subproblem: per-slot half-spaces plus
/// `||X||_F^2 <= energy_budget`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub n_tx: usize,
    pub n_slots: usize,
    pub energy_budget: f64,
    pub slots: Vec<Vec<LinearRow>>,
    pub zone: Option<DiZone>,
}

impl ConstraintSet {
    pub fn new(
        n_tx: usize,
        n_slots: usize,
        energy_budget: f64,
        rows: Vec<LinearRow>,
        zone: Option<DiZone>,
    ) -> Result<Self> {
        if !(energy_budget >= 0.0 && energy_budget.is_finite()) {
            return Err(IsacError::Config(
                "energy budget must be finite and non-negative".into(),
            ));
        }
        let mut slots = vec![Vec::new(); n_slots];
        for row in rows {
            if row.slot >= n_slots || row.coeff.len() != n_tx {
                return Err(IsacError::Dimension("row does not fit the frame".into()));
            }
            if !row.rhs.is_finite() || row.coeff.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(IsacError::Numerical("non-finite constraint coefficient".into()));
            }
            slots[row.slot].push(row);
        }
        Ok(Self {
            n_tx,
            n_slots,
            energy_budget,
            slots,
            zone,
        })
    }

    /// Full constraint set of the design problem for one destructive zone.
    pub fn for_design(
        cfg: &SystemConfig,
        channels: &CommChannelSet,
        symbols: &SymbolFrame,
        priors: &TargetPriorSet,
        gammas_db: &[f64],
        taus_db: &[f64],
        zone: DiZone,
    ) -> Result<Self> {
        let phi = cfg.half_angle();
        let noise_cu: Vec<f64> = (0..cfg.n_users).map(|k| cfg.noise_cu(k)).collect();
        let noise_eve: Vec<f64> = (0..cfg.n_targets).map(|n| cfg.noise_eve(n)).collect();
        let mut rows = build_ci_constraints(channels, symbols, gammas_db, &noise_cu, phi)?;
        rows.extend(build_di_constraints(
            zone, priors, symbols, taus_db, &noise_eve, phi, cfg,
        )?);
        Self::new(cfg.n_tx, cfg.n_slots, cfg.frame_energy_budget(), rows, Some(zone))
    }

    pub fn n_rows(&self) -> usize {
        self.slots.iter().map(Vec::len).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &LinearRow> {
        self.slots.iter().flatten()
    }

    /// Largest violation over all rows and the ball (0 when feasible).
    pub fn max_violation(&self, x: &CMat) -> f64 {
        let mut worst = (x.norm_squared() - self.energy_budget).max(0.0);
        for (l, rows) in self.slots.iter().enumerate() {
            let col: CVec = x.column(l).into_owned();
            for row in rows {
                worst = worst.max(-row.slack(&col));
            }
        }
        worst
    }

    /// Smallest slack over the linear rows (`+inf` without rows).
    pub fn min_slack(&self, x: &CMat) -> f64 {
        let mut best = f64::INFINITY;
        for (l, rows) in self.slots.iter().enumerate() {
            let col: CVec = x.column(l).into_owned();
            for row in rows {
                best = best.min(row.slack(&col));
            }
        }
        best
    }

    /// Scale used for relative feasibility tolerances, `1 + ||rhs||_inf`.
    pub fn rhs_scale(&self) -> f64 {
        1.0 + self
            .rows()
            .map(|r| r.rhs.abs())
            .fold(self.energy_budget.sqrt(), f64::max)
    }

    pub fn is_feasible(&self, x: &CMat, tol: f64) -> bool {
        self.max_violation(x) <= tol * self.rhs_scale()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::TargetPrior;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Single-antenna-like setup where the row value is the scalar itself:
    /// channel h = [1, 0], symbol 1, so v = x_0.
    fn scalar_rows_ci(threshold_sq: f64, phi: f64) -> Vec<LinearRow> {
        let h = CVec::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::default()]);
        let channels = CommChannelSet::new(vec![h]).unwrap();
        let psk = PskConstellation::new(4).unwrap();
        let sym = SymbolFrame::from_indices(psk, vec![vec![0]]).unwrap();
        build_ci_constraints(&channels, &sym, &[10.0 * threshold_sq.log10()], &[1.0], phi).unwrap()
    }

    fn point(v: Complex64) -> CVec {
        CVec::from_vec(vec![v, Complex64::default()])
    }

    #[test]
    fn ci_bisector_point_has_tan_slack() {
        let phi = PI / 8.0;
        let rows = scalar_rows_ci(4.0, phi);
        let x = point(Complex64::new(2.0 + 1.0, 0.0));
        for r in &rows {
            assert!((r.slack(&x) - phi.tan()).abs() < 1e-12);
        }
    }

    #[test]
    fn ci_vertex_is_active() {
        let rows = scalar_rows_ci(4.0, PI / 4.0);
        let x = point(Complex64::new(2.0, 0.0));
        for r in &rows {
            assert!(r.slack(&x).abs() < 1e-12);
        }
    }

    #[test]
    fn ci_qpsk_membership() {
        let rows = scalar_rows_ci(9.0, PI / 4.0);
        let inside = point(Complex64::new(3.0 + 2.0, 1.0));
        let outside = point(Complex64::new(3.0 + 0.5, 1.0));
        assert!(rows.iter().all(|r| r.slack(&inside) >= 0.0));
        assert!(rows.iter().any(|r| r.slack(&outside) < 0.0));
        assert!(ci_margin(Complex64::new(5.0, 1.0), 3.0, PI / 4.0) > 0.0);
        assert!(ci_margin(Complex64::new(3.5, 1.0), 3.0, PI / 4.0) < 0.0);
    }

    #[test]
    fn ci_rows_use_rotated_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SystemConfig::with_counts(2, 1, 30.0);
        let channels = crate::array_model::generate_rayleigh_channels(&cfg, 4);
        let sym = SymbolFrame::random(&cfg, &mut rng).unwrap();
        let rows = build_ci_constraints(&channels, &sym, &[10.0, 10.0], &[1.0, 1.0], PI / 4.0).unwrap();
        assert_eq!(rows.len(), 2 * 2 * cfg.n_slots);
        let x = CVec::from_fn(cfg.n_tx, |_, _| crate::array_model::complex_normal(&mut rng));
        let row = &rows[0];
        let v = sym.symbol(0, 0).conj() * channels.h[0].dotc(&x);
        let expect = v.im - v.re;
        assert!((row.value(&x) - expect).abs() < 1e-10);
    }

    #[test]
    fn bpsk_uses_half_plane() {
        let rows = scalar_rows_ci(4.0, PI / 2.0);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].slack(&point(Complex64::new(2.5, 100.0))) > 0.0);
        assert!(rows[0].slack(&point(Complex64::new(1.5, 0.0))) < 0.0);
    }

    #[test]
    fn invalid_half_angle_rejected() {
        let h = CVec::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::default()]);
        let channels = CommChannelSet::new(vec![h]).unwrap();
        let sym = SymbolFrame::from_indices(PskConstellation::new(4).unwrap(), vec![vec![0]]).unwrap();
        assert!(build_ci_constraints(&channels, &sym, &[0.0], &[1.0], 0.0).is_err());
        assert!(build_ci_constraints(&channels, &sym, &[0.0], &[1.0], -0.3).is_err());
    }

    fn di_setup(zone: DiZone, tau: f64) -> (Vec<LinearRow>, CVec) {
        // broadside target seen by a 2-element array with beta = 1:
        // a(0) = [1, 1], so u = x_0 + x_1 for symbol 1.
        let mut cfg = SystemConfig::with_counts(1, 1, 0.0);
        cfg.n_tx = 2;
        cfg.n_slots = 1;
        let priors = TargetPriorSet::new(
            1.0,
            vec![TargetPrior {
                mean: 0.0,
                sigma: 0.1,
                path_loss: 1.0,
            }],
        )
        .unwrap();
        let sym = SymbolFrame::from_indices(PskConstellation::new(4).unwrap(), vec![vec![0]]).unwrap();
        let tau_db = 10.0 * (tau * tau).log10();
        let rows = build_di_constraints(zone, &priors, &sym, &[tau_db], &[1.0], PI / 4.0, &cfg).unwrap();
        (
            rows,
            CVec::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::default()]),
        )
    }

    #[test]
    fn di_case_one_below_threshold() {
        let (rows, e) = di_setup(DiZone::Inner, 0.5);
        let x = &e * Complex64::new(0.5 - 1.0, 0.0);
        assert!(rows.iter().all(|r| r.slack(&x) >= 0.0));
    }

    #[test]
    fn di_case_two_membership() {
        let tau = 0.5;
        let (rows, e) = di_setup(DiZone::Upper, tau);
        assert_eq!(rows.len(), 2);
        let eps = 0.1;
        let good = &e * Complex64::new(tau + 1.0, 1.0 + eps);
        let bad = &e * Complex64::new(tau + 1.0, 1.0 - eps);
        assert!(rows.iter().all(|r| r.slack(&good) >= 0.0));
        assert!(rows.iter().any(|r| r.slack(&bad) < 0.0));
        assert!(DiZone::Upper.contains(Complex64::new(tau + 1.0, 1.0 + eps), tau, PI / 4.0));
        assert!(!DiZone::Upper.contains(Complex64::new(tau + 1.0, 1.0 - eps), tau, PI / 4.0));
    }

    #[test]
    fn di_case_three_mirrors_case_two() {
        let tau = 0.5;
        let (rows, e) = di_setup(DiZone::Lower, tau);
        let good = &e * Complex64::new(tau + 1.0, -1.1);
        let bad = &e * Complex64::new(tau + 1.0, 1.1);
        assert!(rows.iter().all(|r| r.slack(&good) >= 0.0));
        assert!(rows.iter().any(|r| r.slack(&bad) < 0.0));
    }

    #[test]
    fn zone_rows_agree_with_predicates() {
        let tau = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for zone in DiZone::ALL {
            let (rows, e) = di_setup(zone, tau);
            for _ in 0..2000 {
                let u = Complex64::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
                let x = &e * u;
                let by_rows = rows.iter().all(|r| r.slack(&x) >= 0.0);
                assert_eq!(by_rows, zone.contains(u, tau, PI / 4.0), "zone {zone} u {u}");
            }
        }
    }

    #[test]
    fn union_of_zones_is_destructive_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [4usize, 8, 16] {
            let phi = PI / m as f64;
            let tau = 0.56;
            let mut mismatches = 0;
            for _ in 0..10_000 {
                let u = Complex64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
                let any = DiZone::ALL.iter().any(|z| z.contains(u, tau, phi));
                if any != in_destructive_region(u, tau, phi) {
                    mismatches += 1;
                }
                // interior points of any zone never lie strictly inside the CI region
                if any {
                    assert!(ci_margin(u, tau, phi) <= 1e-12);
                }
            }
            assert_eq!(mismatches, 0);
        }
    }

    #[test]
    fn zone_ids_round_trip() {
        for z in DiZone::ALL {
            assert_eq!(DiZone::from_id(z.id()).unwrap(), z);
        }
        assert!(DiZone::from_id(4).is_err());
    }

    #[test]
    fn constraint_set_feasibility_measures() {
        let (rows, e) = di_setup(DiZone::Inner, 0.5);
        let set = ConstraintSet::new(2, 1, 4.0, rows, Some(DiZone::Inner)).unwrap();
        let ok = CMat::from_column_slice(2, 1, (&e * Complex64::new(-1.0, 0.0)).as_slice());
        assert!(set.is_feasible(&ok, 1e-12));
        let too_big = CMat::from_column_slice(2, 1, (&e * Complex64::new(-3.0, 0.0)).as_slice());
        assert!((set.max_violation(&too_big) - 5.0).abs() < 1e-12);
        assert!((set.min_slack(&ok) - 1.5).abs() < 1e-12);
    }
}
