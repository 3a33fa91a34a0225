//! Prior model of the unknown target parameters
//! `eta = [Re alpha_1..N, Im alpha_1..N, theta_1..N]`: complex Gaussian
//! reflection amplitudes and von Mises angles.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::linalg::RMat;

/// Above this concentration the von Mises law is replaced by its wrapped
/// normal limit `N(mu, 1/kappa)`; the rejection sampler loses precision there.
const VON_MISES_NORMAL_LIMIT: f64 = 1e6;

/// How `sigma0_sq` is read when drawing amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplitudeConvention {
    /// `sigma0_sq` is the variance of complex alpha; each real part has half.
    #[default]
    ComplexVariance,
    /// `sigma0_sq` is the variance of each real component.
    PerComponentVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPrior {
    /// Von Mises mean direction, radians.
    pub mean: f64,
    /// Angular standard deviation, radians; `kappa = 1 / sigma^2`.
    pub sigma: f64,
    /// Eve path loss `beta_n`.
    pub path_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetPriorSet {
    pub sigma0_sq: f64,
    pub convention: AmplitudeConvention,
    pub targets: Vec<TargetPrior>,
}

impl TargetPriorSet {
    pub fn new(sigma0_sq: f64, targets: Vec<TargetPrior>) -> Result<Self> {
        let set = Self {
            sigma0_sq,
            convention: AmplitudeConvention::default(),
            targets,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0_sq > 0.0 && self.sigma0_sq.is_finite()) {
            return Err(IsacError::Config("sigma0_sq must be positive".into()));
        }
        if self.targets.is_empty() {
            return Err(IsacError::Config("at least one target prior is required".into()));
        }
        for (n, t) in self.targets.iter().enumerate() {
            if !(t.sigma > 0.0 && t.sigma.is_finite()) {
                return Err(IsacError::Config(format!("target {n}: sigma_theta must be positive")));
            }
            if !(t.path_loss > 0.0 && t.path_loss.is_finite()) {
                return Err(IsacError::Config(format!("target {n}: path_loss must be positive")));
            }
            if !t.mean.is_finite() {
                return Err(IsacError::Config(format!("target {n}: mean angle must be finite")));
            }
        }
        Ok(())
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn kappa(&self, n: usize) -> f64 {
        1.0 / (self.targets[n].sigma * self.targets[n].sigma)
    }

    /// Variance of each real amplitude component under the active convention.
    pub fn component_variance(&self) -> f64 {
        match self.convention {
            AmplitudeConvention::ComplexVariance => self.sigma0_sq / 2.0,
            AmplitudeConvention::PerComponentVariance => self.sigma0_sq,
        }
    }
}

/// One draw of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSample {
    pub re_alpha: Vec<f64>,
    pub im_alpha: Vec<f64>,
    pub theta: Vec<f64>,
}

impl EtaSample {
    /// Deterministic sample, e.g. the prior means.
    pub fn new(alphas: &[Complex64], theta: Vec<f64>) -> Result<Self> {
        if alphas.len() != theta.len() {
            return Err(IsacError::Dimension("amplitude and angle counts differ".into()));
        }
        Ok(Self {
            re_alpha: alphas.iter().map(|a| a.re).collect(),
            im_alpha: alphas.iter().map(|a| a.im).collect(),
            theta,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.theta.len()
    }

    pub fn alpha(&self, n: usize) -> Complex64 {
        Complex64::new(self.re_alpha[n], self.im_alpha[n])
    }

    pub fn alphas(&self) -> Vec<Complex64> {
        (0..self.n_targets()).map(|n| self.alpha(n)).collect()
    }

    /// Flattened `[Re alpha; Im alpha; theta]`, length `3N`.
    pub fn flatten(&self) -> Vec<f64> {
        self.re_alpha
            .iter()
            .chain(&self.im_alpha)
            .chain(&self.theta)
            .copied()
            .collect()
    }

    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() % 3 != 0 {
            return Err(IsacError::Dimension(format!(
                "flat length {} not a multiple of 3",
                v.len()
            )));
        }
        let n = v.len() / 3;
        Ok(Self {
            re_alpha: v[..n].to_vec(),
            im_alpha: v[n..2 * n].to_vec(),
            theta: v[2 * n..].to_vec(),
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// One draw from the von Mises law with mean `mu` and concentration `kappa`,
/// wrapped to `(-pi, pi]`.
///
/// Uses the Best-Fisher wrapped-Cauchy envelope with the small-kappa series
/// for the envelope parameter.
pub fn sample_von_mises<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> Result<f64> {
    if !(kappa >= 0.0) || kappa.is_infinite() {
        return Err(IsacError::Config(format!(
            "von Mises kappa must be finite and >= 0 (got {kappa})"
        )));
    }
    if kappa < 1e-8 {
        let u: f64 = rng.gen();
        return Ok(wrap_angle(PI * (2.0 * u - 1.0)));
    }
    if kappa > VON_MISES_NORMAL_LIMIT {
        let z: f64 = StandardNormal.sample(rng);
        return Ok(wrap_angle(mu + z / kappa.sqrt()));
    }

    let s = if kappa < 1e-5 {
        1.0 / kappa + kappa
    } else {
        let r = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
        let rho = (r - (2.0 * r).sqrt()) / (2.0 * kappa);
        (1.0 + rho * rho) / (2.0 * rho)
    };

    let w = loop {
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        let z = (PI * u).cos();
        let w = (1.0 + s * z) / (s + z);
        let y = kappa * (s - w);
        if y * (2.0 - y) - v >= 0.0 || (y / v).ln() + 1.0 - y >= 0.0 {
            break w;
        }
    };

    let u: f64 = rng.gen();
    let dev = w.clamp(-1.0, 1.0).acos();
    let theta = if u < 0.5 { mu - dev } else { mu + dev };
    Ok(wrap_angle(theta))
}

pub fn sample_eta<R: Rng + ?Sized>(priors: &TargetPriorSet, rng: &mut R) -> EtaSample {
    let n = priors.n_targets();
    let sd = priors.component_variance().sqrt();
    let mut re_alpha = Vec::with_capacity(n);
    let mut im_alpha = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for (k, t) in priors.targets.iter().enumerate() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        re_alpha.push(sd * re);
        im_alpha.push(sd * im);
        // kappa is validated positive and finite by TargetPriorSet
        theta.push(sample_von_mises(t.mean, priors.kappa(k), rng).unwrap_or(t.mean));
    }
    EtaSample {
        re_alpha,
        im_alpha,
        theta,
    }
}

/// Prior Fisher information, `diag(1/(2 sigma0^2) I, 1/(2 sigma0^2) I, kappa_1..N)`.
pub fn prior_fim(priors: &TargetPriorSet) -> RMat {
    let n = priors.n_targets();
    let amp = 1.0 / (2.0 * priors.sigma0_sq);
    let mut d = DMatrix::zeros(3 * n, 3 * n);
    for k in 0..n {
        d[(k, k)] = amp;
        d[(n + k, n + k)] = amp;
        d[(2 * n + k, 2 * n + k)] = priors.kappa(k);
    }
    d
}
