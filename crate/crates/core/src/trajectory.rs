//! Rescaled forward trajectories.
//!
//! The trajectory from `x0` toward `eps` is restarted at its boundary point:
//! nominal time `t` maps to `tau = r*t0 + t*(T - r*t0)/T` and the noisy point
//! is the original flow evaluated at `tau`. `r = 0` gives back the plain
//! process.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::boundary::{self, BoundaryEstimate};
use crate::error::{Error, Result};
use crate::schedules::Schedule;
use crate::space::EmbeddingTable;

/// A noisy sample on the rescaled process.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledPoint {
    pub x_tilde: Array2<f64>,
    /// Nominal time the denoiser is conditioned on.
    pub t: f64,
    /// Per-element rescaled times.
    pub tau: Vec<f64>,
    pub eps: Array2<f64>,
    pub r: f64,
    pub estimate: BoundaryEstimate,
}

pub(crate) fn check_confidence(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::range("confidence factor", r, 0.0, 1.0));
    }
    Ok(())
}

/// `tau_i = r*t0_i + t*(T - r*t0_i)/T`, with both endpoints exact.
pub fn rescale_time(t: f64, t0: &[f64], r: f64, horizon: f64) -> Result<Vec<f64>> {
    check_confidence(r)?;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::range("time", t, 0.0, horizon));
    }
    Ok(t0
        .iter()
        .map(|&s| {
            if t == horizon {
                horizon
            } else {
                let start = r * s;
                start + t * (horizon - start) / horizon
            }
        })
        .collect())
}

/// `u(tau_i) x0_i + v(tau_i) eps_i` row by row.
pub fn flow_at(x0: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, tau: &[f64], schedule: &Schedule) -> Array2<f64> {
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (u, v) = schedule.coeff_at(tau[i]);
        Zip::from(&mut row)
            .and(x0.row(i))
            .and(eps.row(i))
            .for_each(|o, &x, &e| *o = u * x + v * e);
    }
    out
}

/// Draws the boundary-conditional noisy point at nominal time `t`.
pub fn forward_sample(
    x0: ArrayView2<'_, f64>,
    labels: &[usize],
    eps: ArrayView2<'_, f64>,
    t: f64,
    schedule: &Schedule,
    table: &EmbeddingTable,
    r: f64,
) -> Result<RescaledPoint> {
    let estimate = boundary::estimate(x0, labels, eps, table, schedule)?;
    let tau = rescale_time(t, &estimate.t0, r, schedule.horizon())?;
    let x_tilde = flow_at(x0, eps, &tau, schedule);
    Ok(RescaledPoint {
        x_tilde,
        t,
        tau,
        eps: eps.to_owned(),
        r,
        estimate,
    })
}

/// `dtau/dt = (T - r*t0)/T` per element.
pub fn time_scale(t0: &[f64], r: f64, horizon: f64) -> Vec<f64> {
    t0.iter().map(|&s| (horizon - r * s) / horizon).collect()
}

/// `[u'(tau) target + v'(tau) eps] * dtau/dt` row by row.
pub fn vector_field_at(
    target: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    tau: &[f64],
    dtau_dt: &[f64],
    schedule: &Schedule,
) -> Array2<f64> {
    let mut out = Array2::zeros(target.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (du, dv) = schedule.derivative_at(tau[i]);
        let k = dtau_dt[i];
        Zip::from(&mut row)
            .and(target.row(i))
            .and(eps.row(i))
            .for_each(|o, &x, &e| *o = (du * x + dv * e) * k);
    }
    out
}

/// Velocity of the rescaled trajectory at nominal time `t`.
pub fn rescaled_vector_field(
    x0: ArrayView2<'_, f64>,
    eps: ArrayView2<'_, f64>,
    t: f64,
    t0: &[f64],
    schedule: &Schedule,
    r: f64,
) -> Result<Array2<f64>> {
    let tau = rescale_time(t, t0, r, schedule.horizon())?;
    let scale = time_scale(t0, r, schedule.horizon());
    Ok(vector_field_at(x0, eps, &tau, &scale, schedule))
}

/// Closed-form move along one trajectory from `t_from` to `t_to`:
/// `(u_to - u_from v_to / v_from) x0 + (v_to / v_from) x_t`.
pub fn deterministic_step(
    x_t: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    t_from: f64,
    t_to: f64,
    schedule: &Schedule,
) -> Result<Array2<f64>> {
    if x_t.dim() != x0.dim() {
        return Err(Error::Shape(format!("x_t {:?} vs x0 {:?}", x_t.dim(), x0.dim())));
    }
    if t_from == t_to {
        return Ok(x_t.to_owned());
    }
    let (u_to, v_to) = schedule.coeff_at(t_to);
    if v_to == 0.0 {
        return Ok(x0.to_owned());
    }
    let (u_from, v_from) = schedule.coeff_at(t_from);
    if v_from == 0.0 {
        return Err(Error::Numeric(format!("cannot step from noiseless time {t_from}")));
    }
    let ratio = v_to / v_from;
    let coef = u_to - u_from * ratio;
    Ok(Zip::from(x0).and(x_t).map_collect(|&d, &x| coef * d + ratio * x))
}
