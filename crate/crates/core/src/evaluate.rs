//! Evaluation of designed frames: received constellations, Monte-Carlo
//! symbol error rates, eavesdropping SINR, frame SNR, beampatterns and
//! communication/sensing tradeoff sweeps.

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::array_model::{beampattern, complex_normal, generate_rayleigh_channels, CommChannelSet, SystemConfig};
use crate::bfim::{expectation_factors, frame_covariance, BcrbObjective, BfimOptions, ExpectationFactors};
use crate::error::{IsacError, Result};
use crate::linalg::{db_to_linear, CMat, CVec};
use crate::precoder::{
    block_level_design, ci_margin, eve_channel, eve_threshold, sca_design_zones, BlockDesign, DesignProblem, DiZone,
    ScaOptions, SolveReport, SymbolFrame, ZoneDesigns,
};
use crate::priors::{prior_fim, TargetPriorSet};

/// Independent random streams derived from one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Channels = 1,
    Symbols = 2,
    PriorSamples = 3,
    Noise = 4,
}

/// SplitMix64 mix of the run seed and a stream tag.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut z = seed.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything needed to design and evaluate one operating point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: SystemConfig,
    pub priors: TargetPriorSet,
    pub gammas_db: Vec<f64>,
    pub taus_db: Vec<f64>,
    pub channels: CommChannelSet,
    pub symbols: SymbolFrame,
    pub objective: BcrbObjective,
    pub seed: u64,
}

impl Scenario {
    /// Draws channels, symbols and prior samples from streams of `seed`.
    pub fn build(
        cfg: SystemConfig,
        priors: TargetPriorSet,
        gammas_db: Vec<f64>,
        taus_db: Vec<f64>,
        n_prior_samples: usize,
        bfim: BfimOptions,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::PriorSamples));
        let factors = expectation_factors(&priors, &cfg, n_prior_samples, &mut rng)?;
        Self::with_factors(cfg, priors, gammas_db, taus_db, factors, bfim, seed)
    }

    pub fn with_factors(
        cfg: SystemConfig,
        priors: TargetPriorSet,
        gammas_db: Vec<f64>,
        taus_db: Vec<f64>,
        factors: ExpectationFactors,
        bfim: BfimOptions,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        priors.validate()?;
        if priors.n_targets() != cfg.n_targets {
            return Err(IsacError::Config(format!(
                "priors describe {} targets but n_targets = {}",
                priors.n_targets(),
                cfg.n_targets
            )));
        }
        if gammas_db.len() != cfg.n_users {
            return Err(IsacError::Config(format!(
                "gamma_db has {} entries for {} users",
                gammas_db.len(),
                cfg.n_users
            )));
        }
        if taus_db.len() != cfg.n_targets {
            return Err(IsacError::Config(format!(
                "tau_db has {} entries for {} targets",
                taus_db.len(),
                cfg.n_targets
            )));
        }
        let channels = generate_rayleigh_channels(&cfg, derive_seed(seed, Stream::Channels));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Symbols));
        let symbols = SymbolFrame::random(&cfg, &mut rng)?;
        let objective = BcrbObjective::new(Arc::new(factors), prior_fim(&priors), &cfg, bfim)?;
        Ok(Self {
            cfg,
            priors,
            gammas_db,
            taus_db,
            channels,
            symbols,
            objective,
            seed,
        })
    }

    pub fn problem(&self) -> DesignProblem<'_> {
        DesignProblem {
            cfg: &self.cfg,
            channels: &self.channels,
            symbols: &self.symbols,
            priors: &self.priors,
            gammas_db: &self.gammas_db,
            taus_db: &self.taus_db,
        }
    }

    /// Same channels, symbols and factors at another power budget and a
    /// common SNR threshold for every user.
    pub fn at_point(&self, power_dbm: f64, gamma_db: f64) -> Self {
        let mut s = self.clone();
        s.cfg.power_budget_dbm = power_dbm;
        s.gammas_db = vec![gamma_db; self.cfg.n_users];
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    User,
    Eve,
}

/// One noiseless rotated receive point with its region label.
#[derive(Debug, Clone)]
pub struct ConstellationPoint {
    pub side: Side,
    pub entity: usize,
    pub slot: usize,
    pub value: Complex64,
    /// Smallest slack of the region inequalities; negative when outside.
    pub margin: f64,
    pub in_region: bool,
}

/// Tolerance on region membership of noiseless points.
pub const REGION_TOLERANCE: f64 = 1e-6;

/// Slack of `u` in one destructive zone, in the same form as its rows.
pub fn zone_margin(zone: DiZone, u: Complex64, tau: f64, phi: f64) -> f64 {
    let half_plane = (phi - std::f64::consts::FRAC_PI_2).abs() < 1e-12;
    match zone {
        DiZone::Inner => tau - u.re,
        DiZone::Upper | DiZone::Lower => {
            let im = if zone == DiZone::Upper { u.im } else { -u.im };
            let side = if half_plane {
                tau - u.re
            } else {
                im - (u.re - tau) * phi.tan()
            };
            side.min(u.re - tau)
        }
    }
}

/// Rotated noiseless points `v = s_kl^* h_k^H x_l` (users) or
/// `u = s_1l^* beta_n a(mu_n)^H x_l` (Eves). Eve labels refer to `zone`.
pub fn received_constellation(
    x: &CMat,
    problem: &DesignProblem<'_>,
    side: Side,
    zone: DiZone,
) -> Result<Vec<ConstellationPoint>> {
    let cfg = problem.cfg;
    let phi = cfg.half_angle();
    let mut out = Vec::new();
    match side {
        Side::User => {
            for (k, h) in problem.channels.h.iter().enumerate() {
                let threshold = (cfg.noise_cu(k) * db_to_linear(problem.gammas_db[k])).sqrt();
                for l in 0..x.ncols() {
                    let v = problem.symbols.symbol(k, l).conj() * h.dotc(&x.column(l));
                    let margin = ci_margin(v, threshold, phi);
                    out.push(ConstellationPoint {
                        side,
                        entity: k,
                        slot: l,
                        value: v,
                        margin,
                        in_region: margin >= -REGION_TOLERANCE,
                    });
                }
            }
        }
        Side::Eve => {
            for n in 0..problem.priors.n_targets() {
                let a = eve_channel(problem.priors, n, cfg.n_tx)?;
                let tau = eve_threshold(cfg.noise_eve(n), problem.taus_db[n]);
                for l in 0..x.ncols() {
                    let u = problem.symbols.symbol(0, l).conj() * a.dotc(&x.column(l));
                    let margin = zone_margin(zone, u, tau, phi);
                    out.push(ConstellationPoint {
                        side,
                        entity: n,
                        slot: l,
                        value: u,
                        margin,
                        in_region: margin >= -REGION_TOLERANCE,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Fraction of points carrying `in_region`.
pub fn region_fraction(points: &[ConstellationPoint]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    points.iter().filter(|p| p.in_region).count() as f64 / points.len() as f64
}

/// Monte-Carlo symbol error rates with 95% normal-approximation intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SerResult {
    pub user_ser: Vec<f64>,
    pub user_half_width: Vec<f64>,
    /// Per Eve, averaged over its attempts to decode every user's stream.
    pub eve_ser: Vec<f64>,
    pub eve_half_width: Vec<f64>,
    /// Noise realizations of the whole frame.
    pub trials: usize,
    /// Decisions behind each user entry; Eve entries use `n_users` times more.
    pub decisions_per_user: usize,
}

impl SerResult {
    pub fn mean_user_ser(&self) -> f64 {
        mean(&self.user_ser)
    }

    pub fn mean_eve_ser(&self) -> f64 {
        mean(&self.eve_ser)
    }

    /// Half-width of the pooled user SER.
    pub fn mean_user_half_width(&self) -> f64 {
        half_width(self.mean_user_ser(), self.decisions_per_user * self.user_ser.len())
    }

    pub fn mean_eve_half_width(&self) -> f64 {
        half_width(
            self.mean_eve_ser(),
            self.decisions_per_user * self.user_ser.len() * self.eve_ser.len(),
        )
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `1.96 sqrt(p (1 - p) / n)`.
pub fn half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Trials per independently seeded noise stream.
const TRIAL_CHUNK: usize = 50;

/// Adds `CN(0, sigma^2)` noise to every noiseless observation and counts
/// phase-sector decision errors. Deterministic for a fixed seed.
pub fn simulate_ser(x: &CMat, problem: &DesignProblem<'_>, trials: usize, seed: u64) -> Result<SerResult> {
    if trials == 0 {
        return Err(IsacError::Config("SER simulation needs at least one trial".into()));
    }
    let cfg = problem.cfg;
    let symbols = problem.symbols;
    let psk = symbols.constellation();
    let k_users = symbols.n_users();
    let n_slots = x.ncols();
    if symbols.n_slots() != n_slots {
        return Err(IsacError::Dimension("frame and symbol frame disagree on slots".into()));
    }
    let users: Vec<(Vec<Complex64>, f64)> = problem
        .channels
        .h
        .iter()
        .enumerate()
        .map(|(k, h)| (observe(h, x), cfg.noise_cu(k).sqrt()))
        .collect();
    let eves: Vec<(Vec<Complex64>, f64)> = (0..problem.priors.n_targets())
        .map(|n| {
            Ok((
                observe(&eve_channel(problem.priors, n, cfg.n_tx)?, x),
                cfg.noise_eve(n).sqrt(),
            ))
        })
        .collect::<Result<_>>()?;

    let n_chunks = trials.div_ceil(TRIAL_CHUNK);
    let counts: Vec<(Vec<u64>, Vec<u64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Noise));
            rng.set_stream(c as u64);
            let mut user_err = vec![0u64; k_users];
            let mut eve_err = vec![0u64; eves.len()];
            let n_trials = TRIAL_CHUNK.min(trials - c * TRIAL_CHUNK);
            for _ in 0..n_trials {
                for (k, (clean, sigma)) in users.iter().enumerate() {
                    for (l, &y0) in clean.iter().enumerate() {
                        let y = y0 + complex_normal(&mut rng) * *sigma;
                        if psk.decide(y) != symbols.index(k, l) {
                            user_err[k] += 1;
                        }
                    }
                }
                for (n, (clean, sigma)) in eves.iter().enumerate() {
                    for (l, &y0) in clean.iter().enumerate() {
                        let d = psk.decide(y0 + complex_normal(&mut rng) * *sigma);
                        eve_err[n] += (0..k_users).filter(|&k| d != symbols.index(k, l)).count() as u64;
                    }
                }
            }
            (user_err, eve_err)
        })
        .collect();
    let mut user_err = vec![0u64; k_users];
    let mut eve_err = vec![0u64; eves.len()];
    for (u, e) in counts {
        user_err.iter_mut().zip(u).for_each(|(a, b)| *a += b);
        eve_err.iter_mut().zip(e).for_each(|(a, b)| *a += b);
    }
    let per_user = trials * n_slots;
    let per_eve = per_user * k_users;
    let user_ser: Vec<f64> = user_err.iter().map(|&e| e as f64 / per_user as f64).collect();
    let eve_ser: Vec<f64> = eve_err.iter().map(|&e| e as f64 / per_eve as f64).collect();
    Ok(SerResult {
        user_half_width: user_ser.iter().map(|&p| half_width(p, per_user)).collect(),
        eve_half_width: eve_ser.iter().map(|&p| half_width(p, per_eve)).collect(),
        user_ser,
        eve_ser,
        trials,
        decisions_per_user: per_user,
    })
}

/// `c^H x_l` for every slot.
fn observe(c: &CVec, x: &CMat) -> Vec<Complex64> {
    (0..x.ncols()).map(|l| c.dotc(&x.column(l))).collect()
}

/// `SINR_nk = mean_l |b_l|^2 / (mean_l |b_l - s_kl|^2 + sigma_E,n^2)` with
/// `b_l = beta_n a(mu_n)^H x_l`; rows are Eves, columns users.
pub fn eavesdrop_sinr(
    x: &CMat,
    priors: &TargetPriorSet,
    symbols: &SymbolFrame,
    cfg: &SystemConfig,
) -> Result<Vec<Vec<f64>>> {
    let l = x.ncols() as f64;
    (0..priors.n_targets())
        .map(|n| {
            let b = observe(&eve_channel(priors, n, cfg.n_tx)?, x);
            let signal = b.iter().map(|z| z.norm_sqr()).sum::<f64>() / l;
            Ok((0..symbols.n_users())
                .map(|k| {
                    let distortion = b
                        .iter()
                        .enumerate()
                        .map(|(i, z)| (z - symbols.symbol(k, i)).norm_sqr())
                        .sum::<f64>()
                        / l;
                    signal / (distortion + cfg.noise_eve(n))
                })
                .collect())
        })
        .collect()
}

/// `mean_l |h_k^H x_l|^2 / sigma_k^2` per user.
pub fn frame_snr(x: &CMat, channels: &CommChannelSet, cfg: &SystemConfig) -> Vec<f64> {
    channels
        .h
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let p = observe(h, x).iter().map(|z| z.norm_sqr()).sum::<f64>() / x.ncols().max(1) as f64;
            p / cfg.noise_cu(k)
        })
        .collect()
}

/// `[-90, 90]` degrees in steps of `step_deg`, endpoints included.
pub fn angle_grid_deg(step_deg: f64) -> Vec<f64> {
    let n = (180.0 / step_deg).round() as usize;
    (0..=n).map(|i| -90.0 + i as f64 * 180.0 / n as f64).collect()
}

/// Beampattern of a frame on a degree grid.
#[derive(Debug, Clone, Serialize)]
pub struct BeampatternTable {
    pub theta_deg: Vec<f64>,
    pub power: Vec<f64>,
    /// `trace(R)`, the pattern averaged over `sin(theta)`.
    pub total_power: f64,
}

impl BeampatternTable {
    pub fn compute(x: &CMat, grid_deg: &[f64]) -> Result<Self> {
        let r = frame_covariance(x);
        let rad: Vec<f64> = grid_deg.iter().map(|d| d.to_radians()).collect();
        Ok(Self {
            theta_deg: grid_deg.to_vec(),
            power: beampattern(&r, &rad)?,
            total_power: r.trace().re,
        })
    }

    /// Pattern in dB relative to its own maximum.
    pub fn normalized_db(&self) -> Vec<f64> {
        let peak = self.power.iter().copied().fold(0.0, f64::max);
        self.power
            .iter()
            .map(|&p| {
                if peak > 0.0 {
                    10.0 * (p / peak).max(1e-30).log10()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// Indices of strict interior local maxima (plateaus report their first point).
    pub fn local_maxima(&self) -> Vec<usize> {
        let p = &self.power;
        (1..p.len().saturating_sub(1))
            .filter(|&i| {
                let mut j = i + 1;
                while j < p.len() && p[j] == p[i] {
                    j += 1;
                }
                p[i] > p[i - 1] && j < p.len() && p[i] > p[j]
            })
            .collect()
    }

    /// Main-lobe summary around each target mean angle.
    pub fn lobe_metrics(&self, target_means_deg: &[f64]) -> LobeMetrics {
        let maxima = self.local_maxima();
        let peak = self.power.iter().copied().fold(0.0, f64::max);
        let lobes: Vec<Lobe> = target_means_deg
            .iter()
            .map(|&mu| {
                let nearest = maxima.iter().copied().min_by(|&a, &b| {
                    (self.theta_deg[a] - mu)
                        .abs()
                        .total_cmp(&(self.theta_deg[b] - mu).abs())
                });
                match nearest {
                    Some(i) => Lobe {
                        target_deg: mu,
                        gain: self.power[i] / self.total_power,
                        peak_deg: self.theta_deg[i],
                        offset_deg: (self.theta_deg[i] - mu).abs(),
                        width_3db_deg: self.width_3db(i),
                    },
                    None => Lobe {
                        target_deg: mu,
                        gain: 0.0,
                        peak_deg: f64::NAN,
                        offset_deg: f64::INFINITY,
                        width_3db_deg: f64::NAN,
                    },
                }
            })
            .collect();
        let n = lobes.len().max(1) as f64;
        LobeMetrics {
            peak_gain: if self.total_power > 0.0 {
                peak / self.total_power
            } else {
                0.0
            },
            lobe_gain: lobes.iter().map(|l| l.gain).sum::<f64>() / n,
            mean_width_3db_deg: lobes.iter().map(|l| l.width_3db_deg).sum::<f64>() / n,
            lobes,
        }
    }

    /// Width between the half-power crossings around index `i`, linearly
    /// interpolated; the grid edge bounds a lobe that never drops 3 dB.
    fn width_3db(&self, i: usize) -> f64 {
        let half = self.power[i] / 2.0;
        let (p, t) = (&self.power, &self.theta_deg);
        let cross = |a: usize, b: usize| t[a] + (half - p[a]) / (p[b] - p[a]) * (t[b] - t[a]);
        let mut lo = i;
        while lo > 0 && p[lo - 1] > half {
            lo -= 1;
        }
        let left = if lo == 0 { t[0] } else { cross(lo - 1, lo) };
        let mut hi = i;
        while hi + 1 < p.len() && p[hi + 1] > half {
            hi += 1;
        }
        let right = if hi + 1 == p.len() { t[hi] } else { cross(hi, hi + 1) };
        right - left
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lobe {
    pub target_deg: f64,
    /// `P(peak) / trace(R)`.
    pub gain: f64,
    pub peak_deg: f64,
    pub offset_deg: f64,
    pub width_3db_deg: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LobeMetrics {
    /// Maximum of `P(theta) / trace(R)` over the whole grid.
    pub peak_gain: f64,
    /// Normalized peak gain averaged over the target main lobes.
    pub lobe_gain: f64,
    pub mean_width_3db_deg: f64,
    pub lobes: Vec<Lobe>,
}

/// One `(Gamma, P_T)` grid point of a tradeoff sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub gamma_db: f64,
    pub power_dbm: f64,
    pub ci: std::result::Result<ZoneDesigns, String>,
    pub block: Option<std::result::Result<BlockDesign, String>>,
    /// Re-solved from a stricter neighbour's frames.
    pub continued: bool,
}

impl SweepPoint {
    pub fn ci_bcrb(&self) -> Option<f64> {
        self.ci.as_ref().ok().map(|d| d.report.bcrb)
    }

    pub fn ci_design(&self) -> Option<(&CMat, &SolveReport)> {
        self.ci.as_ref().ok().map(|d| (d.best(), &d.report))
    }

    pub fn block_bcrb(&self) -> Option<f64> {
        self.block.as_ref().and_then(|b| b.as_ref().ok()).map(|b| b.bcrb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub gamma_db: f64,
    pub power_budget_dbm: f64,
    /// `None` marks an infeasible grid point.
    pub bcrb_ci: Option<f64>,
    pub bcrb_block: Option<f64>,
}

impl From<&SweepPoint> for TradeoffPoint {
    fn from(p: &SweepPoint) -> Self {
        Self {
            gamma_db: p.gamma_db,
            power_budget_dbm: p.power_dbm,
            bcrb_ci: p.ci_bcrb(),
            bcrb_block: p.block_bcrb(),
        }
    }
}

fn design_point(
    scn: &Scenario,
    opts: &ScaOptions,
    warm: &[Option<CMat>; 3],
) -> std::result::Result<ZoneDesigns, String> {
    sca_design_zones(&scn.problem(), &scn.objective, opts, warm).map_err(|e| e.to_string())
}

/// Designs every `(Gamma, P_T)` point on shared channels, symbols and
/// factors, in the order `power_list_dbm x gamma_grid_db`.
///
/// Points are first solved independently. A point whose bound exceeds that
/// of a stricter neighbour (higher `Gamma` at the same power, or lower power
/// at the same `Gamma`) is then re-solved with every zone started from the
/// neighbours' frames, which are feasible for it.
pub fn sweep_designs(
    base: &Scenario,
    gamma_grid_db: &[f64],
    power_list_dbm: &[f64],
    opts: &ScaOptions,
    with_block: bool,
) -> Result<Vec<SweepPoint>> {
    if gamma_grid_db.is_empty() || power_list_dbm.is_empty() {
        return Err(IsacError::Config("sweep grids must be non-empty".into()));
    }
    let grid: Vec<(f64, f64)> = power_list_dbm
        .iter()
        .flat_map(|&p| gamma_grid_db.iter().map(move |&g| (g, p)))
        .collect();
    let mut points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&(g, p)| {
            let scn = base.at_point(p, g);
            let block =
                with_block.then(|| block_level_design(&scn.problem(), &scn.objective, opts).map_err(|e| e.to_string()));
            SweepPoint {
                gamma_db: g,
                power_dbm: p,
                ci: design_point(&scn, opts, &[None, None, None]),
                block,
                continued: false,
            }
        })
        .collect();

    // Strictest first: increasing power, decreasing Gamma.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].1.total_cmp(&grid[b].1).then(grid[b].0.total_cmp(&grid[a].0)));
    for &i in &order {
        let (g, p) = grid[i];
        let stricter: Vec<usize> = [
            nearest(&grid, |q| q.1 == p && q.0 > g, |q| q.0),
            nearest(&grid, |q| q.0 == g && q.1 < p, |q| -q.1),
        ]
        .into_iter()
        .flatten()
        .collect();
        let own = points[i].ci_bcrb();
        let bound = stricter
            .iter()
            .filter_map(|&j| points[j].ci_bcrb())
            .fold(f64::INFINITY, f64::min);
        if !bound.is_finite() || own.is_some_and(|b| b <= bound) {
            continue;
        }
        let scn = base.at_point(p, g);
        let mut warm: [Option<CMat>; 3] = [None, None, None];
        for (z, slot) in warm.iter_mut().enumerate() {
            let mut best: Option<(f64, &CMat)> = None;
            for &j in &stricter {
                if let Ok(d) = &points[j].ci {
                    if let (Some(frame), Some(b)) = (&d.frames[z], d.report.cases[z].final_bcrb) {
                        if best.is_none_or(|(bb, _)| b < bb) {
                            best = Some((b, frame));
                        }
                    }
                }
            }
            *slot = best.map(|(_, f)| f.clone());
        }
        let redo = design_point(&scn, opts, &warm);
        let better = match (&redo, own) {
            (Ok(r), Some(b)) => r.report.bcrb < b,
            (Ok(_), None) => true,
            _ => false,
        };
        if better {
            points[i].ci = redo;
            points[i].continued = true;
        }
    }
    Ok(points)
}

/// Grid index of the closest point satisfying `pred`, ranked by `key`.
fn nearest<P, K>(grid: &[(f64, f64)], pred: P, key: K) -> Option<usize>
where
    P: Fn(&(f64, f64)) -> bool,
    K: Fn(&(f64, f64)) -> f64,
{
    grid.iter()
        .enumerate()
        .filter(|(_, q)| pred(q))
        .min_by(|a, b| key(a.1).total_cmp(&key(b.1)))
        .map(|(j, _)| j)
}

/// Tradeoff table of a sweep.
pub fn sweep_tradeoff(
    base: &Scenario,
    gamma_grid_db: &[f64],
    power_list_dbm: &[f64],
    opts: &ScaOptions,
) -> Result<Vec<TradeoffPoint>> {
    Ok(sweep_designs(base, gamma_grid_db, power_list_dbm, opts, true)?
        .iter()
        .map(TradeoffPoint::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::TargetPrior;

    fn small_scenario(seed: u64) -> Scenario {
        let mut cfg = SystemConfig::with_counts(2, 1, 20.0);
        cfg.n_tx = 4;
        cfg.n_rx = 4;
        cfg.n_slots = 10;
        let priors = TargetPriorSet::new(
            1.0,
            vec![TargetPrior {
                mean: (-30f64).to_radians(),
                sigma: 5f64.to_radians(),
                path_loss: 1.0,
            }],
        )
        .unwrap();
        Scenario::build(
            cfg,
            priors,
            vec![10.0, 10.0],
            vec![-5.0],
            64,
            BfimOptions::default(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn seeds_are_distinct_per_stream() {
        let a = derive_seed(1, Stream::Channels);
        let b = derive_seed(1, Stream::Symbols);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(1, Stream::Channels));
    }

    #[test]
    fn zero_frame_sinr_and_snr_vanish() {
        let scn = small_scenario(1);
        let x = CMat::zeros(scn.cfg.n_tx, scn.cfg.n_slots);
        for row in eavesdrop_sinr(&x, &scn.priors, &scn.symbols, &scn.cfg).unwrap() {
            assert!(row.iter().all(|&s| s == 0.0));
        }
        assert!(frame_snr(&x, &scn.channels, &scn.cfg).iter().all(|&s| s == 0.0));
    }

    #[test]
    fn eve_sinr_with_perfect_replica() {
        // a^H x_l = s_kl exactly: x_l = a s_kl / ||a||^2 with beta = 1.
        let scn = small_scenario(2);
        let a = eve_channel(&scn.priors, 0, scn.cfg.n_tx).unwrap();
        let k = 1;
        let x = CMat::from_fn(scn.cfg.n_tx, scn.cfg.n_slots, |i, l| {
            a[i] * scn.symbols.symbol(k, l) / a.norm_squared()
        });
        let sinr = eavesdrop_sinr(&x, &scn.priors, &scn.symbols, &scn.cfg).unwrap();
        assert!((sinr[0][k] - 1.0 / scn.cfg.noise_eve(0)).abs() < 1e-12);
    }

    #[test]
    fn frame_snr_scales_quadratically() {
        let scn = small_scenario(3);
        let x = CMat::from_fn(scn.cfg.n_tx, scn.cfg.n_slots, |i, l| {
            Complex64::new(i as f64 - l as f64, 0.5)
        });
        let s1 = frame_snr(&x, &scn.channels, &scn.cfg);
        let s2 = frame_snr(&(&x * Complex64::new(2.0, 0.0)), &scn.channels, &scn.cfg);
        for (a, b) in s1.iter().zip(&s2) {
            assert!((b / a - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn designed_frame_points_in_regions_and_snr_above_threshold() {
        let scn = small_scenario(4);
        let d = sca_design_zones(
            &scn.problem(),
            &scn.objective,
            &ScaOptions::default(),
            &[None, None, None],
        )
        .unwrap();
        let x = d.best();
        let users = received_constellation(x, &scn.problem(), Side::User, d.report.zone).unwrap();
        assert_eq!(region_fraction(&users), 1.0);
        let eves = received_constellation(x, &scn.problem(), Side::Eve, d.report.zone).unwrap();
        assert_eq!(region_fraction(&eves), 1.0);
        for s in frame_snr(x, &scn.channels, &scn.cfg) {
            assert!(s >= db_to_linear(10.0) * (1.0 - 1e-9));
        }
    }

    #[test]
    fn noiseless_users_decode_without_errors() {
        let mut scn = small_scenario(5);
        scn.cfg.noise_cu_dbm = vec![-100.0; 2];
        let d = sca_design_zones(
            &scn.problem(),
            &scn.objective,
            &ScaOptions::default(),
            &[None, None, None],
        )
        .unwrap();
        let ser = simulate_ser(d.best(), &scn.problem(), 20, 9).unwrap();
        assert!(ser.user_ser.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn pure_noise_ser_is_uniform_guess() {
        let scn = small_scenario(6);
        let x = CMat::zeros(scn.cfg.n_tx, scn.cfg.n_slots);
        let trials = 10_000;
        let ser = simulate_ser(&x, &scn.problem(), trials, 1).unwrap();
        let expect = 0.75;
        let n = ser.decisions_per_user;
        for &p in &ser.user_ser {
            // 99.9% band
            assert!(
                (p - expect).abs() < 3.3 * (expect * (1.0 - expect) / n as f64).sqrt(),
                "{p}"
            );
        }
        let again = simulate_ser(&x, &scn.problem(), trials, 1).unwrap();
        assert_eq!(ser, again);
    }

    #[test]
    fn grid_has_endpoints() {
        let g = angle_grid_deg(0.1);
        assert_eq!(g.len(), 1801);
        assert_eq!(g[0], -90.0);
        assert_eq!(*g.last().unwrap(), 90.0);
    }

    #[test]
    fn lobe_width_of_single_beam() {
        // Single steering beam on 12 elements: half-power width about 8.5 degrees at broadside.
        let n = 12;
        let a = crate::array_model::steering_vector(0.0, n).unwrap();
        let x = CMat::from_fn(n, 1, |i, _| a[i]);
        let t = BeampatternTable::compute(&x, &angle_grid_deg(0.1)).unwrap();
        let m = t.lobe_metrics(&[0.0]);
        assert!(m.lobes[0].offset_deg < 1e-9);
        let w = m.lobes[0].width_3db_deg;
        assert!((w - 8.5).abs() < 0.3, "width {w}");
        assert!((m.peak_gain - n as f64).abs() < 1e-9);
    }

    #[test]
    fn sweep_is_monotone() {
        let scn = small_scenario(7);
        let pts = sweep_tradeoff(&scn, &[5.0, 10.0, 15.0], &[20.0, 23.0], &ScaOptions::default()).unwrap();
        assert_eq!(pts.len(), 6);
        for p in pts
            .windows(2)
            .filter(|w| w[0].power_budget_dbm == w[1].power_budget_dbm)
        {
            assert!(p[0].bcrb_ci.unwrap() <= p[1].bcrb_ci.unwrap());
        }
        for i in 0..3 {
            assert!(pts[i + 3].bcrb_ci.unwrap() <= pts[i].bcrb_ci.unwrap());
        }
    }
}
