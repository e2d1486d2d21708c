//! Linear-beta diffusion noise schedule and the forward noising processes.
//!
//! Step indices are 1-based: `t` in `1..=t_max`. Internally arrays are stored
//! 0-based, so `beta(t)` reads `betas[t-1]`. Cumulative products are computed
//! once at construction in index order, which keeps every derived quantity
//! bit-for-bit reproducible.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// Precomputed schedule: `beta_t`, `alpha_t = 1 - beta_t`, and the cumulative
/// product `alpha_bar_t = prod_{s<=t} alpha_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Build from explicit betas; every beta must lie in (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::EmptyInput("schedule betas"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "beta[{}] = {} outside (0, 1)",
                    i + 1,
                    b
                )));
            }
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0f64;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::StepOutOfRange {
                t,
                t_max: self.t_max(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas[t - 1])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t - 1])
    }

    /// `sqrt(1 - alpha_bar_t)`, the noise amplitude of the forward process.
    pub fn noise_scale(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }
}

/// Linear interpolation from `beta_start` at t=1 to `beta_end` at t=t_max.
pub fn make_linear_schedule(beta_start: f64, beta_end: f64, t_max: usize) -> Result<NoiseSchedule> {
    if t_max == 0 {
        return Err(Error::InvalidParameter(
            "schedule t_max must be >= 1".into(),
        ));
    }
    if beta_end < beta_start {
        return Err(Error::InvalidParameter(format!(
            "beta_end {beta_end} < beta_start {beta_start}"
        )));
    }
    let betas = if t_max == 1 {
        vec![beta_start]
    } else {
        (0..t_max)
            .map(|i| {
                let f = i as f64 / (t_max - 1) as f64;
                beta_start + f * (beta_end - beta_start)
            })
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

fn check_noise_len(n_points: usize, noise: &[Point3]) -> Result<()> {
    if noise.len() != n_points {
        return Err(Error::SizeMismatch {
            what: "noise vectors",
            expected: n_points,
            got: noise.len(),
        });
    }
    Ok(())
}

/// Signal-scaled forward process:
/// `x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps`.
pub fn forward_noise_global(
    cloud: &PointCloud,
    noise: &[Point3],
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<PointCloud> {
    check_noise_len(cloud.len(), noise)?;
    let ab = schedule.alpha_bar(t)?;
    let signal = ab.sqrt();
    let scale = (1.0 - ab).sqrt();
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(noise)
            .map(|(&p, &e)| p * signal + e * scale)
            .collect(),
        labels: cloud.labels.clone(),
    })
}

/// Local point-wise forward process: the clean point is kept at unit scale and
/// only perturbed, `p_t = p + sqrt(1 - alpha_bar_t) * eps`. This preserves the
/// scene scale at every step, unlike the signal-scaled process which contracts
/// coordinates toward the origin.
pub fn forward_noise_local(
    cloud: &PointCloud,
    noise: &[Point3],
    schedule: &NoiseSchedule,
    t: usize,
) -> Result<PointCloud> {
    check_noise_len(cloud.len(), noise)?;
    let scale = schedule.noise_scale(t)?;
    Ok(PointCloud {
        points: cloud
            .points
            .iter()
            .zip(noise)
            .map(|(&p, &e)| p + e * scale)
            .collect(),
        labels: cloud.labels.clone(),
    })
}
