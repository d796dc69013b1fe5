//! Noise schedules on the discrete time grid `0..=T`.
//!
//! Every schedule is a pair of coefficient functions with
//! `x_t = u_t * x0 + v_t * eps`:
//!
//! * `Vp`: `u_t = sqrt(abar_t)`, `v_t = sqrt(1 - abar_t)` from a linear beta table.
//! * `Ve`: `u_t = 1`, `v_t = sigma0 * (sigmaT / sigma0)^(t/T)`.
//! * `Ot`: `u_t = 1 - t/T`, `v_t = t/T`.
//!
//! Real-valued times are accepted by [`Schedule::coeff_at`]. `Ot` and `Ve`
//! evaluate analytically; `Vp` floors to the grid index of its table.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const VP_BETA_START: f64 = 1e-4;
pub const VP_BETA_END: f64 = 2e-2;
pub const VE_SIGMA0: f64 = 0.01;
pub const VE_SIGMA_T: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    Vp,
    Ve,
    Ot,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Vp => "vp",
            ScheduleKind::Ve => "ve",
            ScheduleKind::Ot => "ot",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vp" => Ok(ScheduleKind::Vp),
            "ve" => Ok(ScheduleKind::Ve),
            "ot" | "flow" => Ok(ScheduleKind::Ot),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Vp {
        betas: (f64, f64),
        sqrt_alphas_cumprod: Vec<f64>,
        sqrt_one_minus: Vec<f64>,
    },
    Ve {
        sigma0: f64,
        sigma_t: f64,
    },
    Ot,
}

/// Result of inverting a coefficient function back to a time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub t: usize,
    /// The target lay outside the schedule's range and was clamped to 0 or T.
    pub clamped: bool,
}

/// Immutable coefficient tables for one forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: usize,
    params: Params,
}

impl Schedule {
    /// VP schedule with the linear beta range 1e-4..2e-2.
    pub fn vp(steps: usize) -> Result<Self> {
        Self::vp_with_betas(steps, VP_BETA_START, VP_BETA_END)
    }

    pub fn vp_with_betas(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        check_steps(steps)?;
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(Error::Config(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut sqrt_alphas_cumprod = Vec::with_capacity(steps + 1);
        let mut sqrt_one_minus = Vec::with_capacity(steps + 1);
        let mut cumprod = 1.0f64;
        sqrt_alphas_cumprod.push(1.0);
        sqrt_one_minus.push(0.0);
        for t in 1..=steps {
            let beta = beta_start + (beta_end - beta_start) * (t - 1) as f64 / (steps - 1) as f64;
            cumprod *= 1.0 - beta;
            sqrt_alphas_cumprod.push(cumprod.sqrt());
            sqrt_one_minus.push((1.0 - cumprod).sqrt());
        }
        Ok(Self {
            steps,
            params: Params::Vp {
                betas: (beta_start, beta_end),
                sqrt_alphas_cumprod,
                sqrt_one_minus,
            },
        })
    }

    pub fn ve(steps: usize, sigma0: f64, sigma_t: f64) -> Result<Self> {
        check_steps(steps)?;
        if !(sigma0 > 0.0 && sigma0 < sigma_t && sigma_t.is_finite()) {
            return Err(Error::Config(format!(
                "VE needs 0 < sigma0 < sigmaT, got {sigma0}, {sigma_t}"
            )));
        }
        Ok(Self {
            steps,
            params: Params::Ve { sigma0, sigma_t },
        })
    }

    pub fn ot(steps: usize) -> Result<Self> {
        check_steps(steps)?;
        Ok(Self {
            steps,
            params: Params::Ot,
        })
    }

    /// Builds a schedule of `kind` with default parameters.
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        match kind {
            ScheduleKind::Vp => Self::vp(steps),
            ScheduleKind::Ve => Self::ve(steps, VE_SIGMA0, VE_SIGMA_T),
            ScheduleKind::Ot => Self::ot(steps),
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        match self.params {
            Params::Vp { .. } => ScheduleKind::Vp,
            Params::Ve { .. } => ScheduleKind::Ve,
            Params::Ot => ScheduleKind::Ot,
        }
    }

    /// Total number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64
    }

    /// `(sigma0, sigmaT)` for VE schedules.
    pub fn ve_sigmas(&self) -> Option<(f64, f64)> {
        match self.params {
            Params::Ve { sigma0, sigma_t } => Some((sigma0, sigma_t)),
            _ => None,
        }
    }

    /// Linear beta range `(start, end)` for VP schedules.
    pub fn vp_betas(&self) -> Option<(f64, f64)> {
        match self.params {
            Params::Vp { betas, .. } => Some(betas),
            _ => None,
        }
    }

    /// The precomputed `sqrt(abar_t)` table for VP schedules.
    pub fn sqrt_alphas_cumprod(&self) -> Option<&[f64]> {
        match &self.params {
            Params::Vp {
                sqrt_alphas_cumprod, ..
            } => Some(sqrt_alphas_cumprod),
            _ => None,
        }
    }

    /// Coefficients `(u_t, v_t)` at a grid index.
    pub fn coeff(&self, t: usize) -> Result<(f64, f64)> {
        if t > self.steps {
            return Err(Error::range("time index", t as f64, 0.0, self.horizon()));
        }
        Ok(self.coeff_at(t as f64))
    }

    /// Coefficients at a real time, clamped to `[0, T]`.
    pub fn coeff_at(&self, tau: f64) -> (f64, f64) {
        let tau = tau.clamp(0.0, self.horizon());
        match &self.params {
            Params::Vp {
                sqrt_alphas_cumprod,
                sqrt_one_minus,
                ..
            } => {
                let k = self.grid_index(tau);
                (sqrt_alphas_cumprod[k], sqrt_one_minus[k])
            }
            Params::Ve { sigma0, sigma_t } => {
                (1.0, sigma0 * (sigma_t / sigma0).powf(tau / self.horizon()))
            }
            Params::Ot => {
                let s = tau / self.horizon();
                (1.0 - s, s)
            }
        }
    }

    /// Time derivatives `(du/dt, dv/dt)` at a real time. VP uses forward
    /// differences of its table.
    pub fn derivative_at(&self, tau: f64) -> (f64, f64) {
        let tau = tau.clamp(0.0, self.horizon());
        match &self.params {
            Params::Vp {
                sqrt_alphas_cumprod,
                sqrt_one_minus,
                ..
            } => {
                let k = self.grid_index(tau).min(self.steps - 1);
                (
                    sqrt_alphas_cumprod[k + 1] - sqrt_alphas_cumprod[k],
                    sqrt_one_minus[k + 1] - sqrt_one_minus[k],
                )
            }
            Params::Ve { sigma0, sigma_t } => {
                let (_, v) = self.coeff_at(tau);
                (0.0, v * (sigma_t / sigma0).ln() / self.horizon())
            }
            Params::Ot => (-1.0 / self.horizon(), 1.0 / self.horizon()),
        }
    }

    /// Floor of a real time onto the grid.
    pub fn grid_index(&self, tau: f64) -> usize {
        (tau.clamp(0.0, self.horizon()).floor() as usize).min(self.steps)
    }

    /// Inverts `u` to a grid index.
    ///
    /// OT floors `T * (1 - u)`. VP counts the table entries with
    /// `sqrt(abar_t) > u`, which is the first index at or past `u`.
    /// VE has constant `u`; use [`Schedule::time_from_v`] instead.
    pub fn time_from_u(&self, u_target: f64) -> Result<Inversion> {
        match &self.params {
            Params::Ot => {
                let clamped = !(0.0..=1.0).contains(&u_target);
                let t = self.continuous_time_from_u(u_target);
                Ok(Inversion {
                    t: self.grid_index(t),
                    clamped,
                })
            }
            Params::Vp {
                sqrt_alphas_cumprod,
                ..
            } => {
                let count = sqrt_alphas_cumprod.iter().filter(|&&s| s > u_target).count();
                let clamped = count > self.steps || u_target > 1.0;
                Ok(Inversion {
                    t: count.min(self.steps),
                    clamped,
                })
            }
            Params::Ve { .. } => Err(Error::Config(
                "VE has constant u; invert v with time_from_v".into(),
            )),
        }
    }

    /// Inverts `v` for VE schedules: `T * (ln v - ln sigma0) / (ln sigmaT - ln sigma0)`, floored.
    pub fn time_from_v(&self, v_target: f64) -> Result<Inversion> {
        match self.params {
            Params::Ve { sigma0, sigma_t } => {
                let clamped = !(sigma0..=sigma_t).contains(&v_target);
                let t = self.continuous_time_from_v(v_target);
                Ok(Inversion {
                    t: self.grid_index(t),
                    clamped,
                })
            }
            _ => Err(Error::Config("time_from_v is defined for VE only".into())),
        }
    }

    /// Real-valued OT inversion `T * (1 - u)`, clamped to `[0, T]`.
    pub fn continuous_time_from_u(&self, u_target: f64) -> f64 {
        (self.horizon() * (1.0 - u_target)).clamp(0.0, self.horizon())
    }

    /// Real-valued VE inversion, clamped to `[0, T]`. Non-VE schedules return T.
    pub fn continuous_time_from_v(&self, v_target: f64) -> f64 {
        match self.params {
            Params::Ve { sigma0, sigma_t } => {
                let t = self.horizon() * (v_target.ln() - sigma0.ln()) / (sigma_t.ln() - sigma0.ln());
                if t.is_nan() {
                    self.horizon()
                } else {
                    t.clamp(0.0, self.horizon())
                }
            }
            _ => self.horizon(),
        }
    }
}

fn check_steps(steps: usize) -> Result<()> {
    if steps < 2 {
        return Err(Error::Config(format!("T must be at least 2, got {steps}")));
    }
    Ok(())
}
