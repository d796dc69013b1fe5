//! Where a forward trajectory leaves its datum's discrete area.
//!
//! With a linear likelihood the trajectory `u x0 + v eps` ties with a
//! competitor `J` exactly when `u * a_J = v * b_J`, where
//! `a_J = f(x0, I) - f(x0, J)` and `b_J = f(eps, J) - f(eps, I)`. The ratio
//! `v/u` grows monotonically with time for every supported schedule, so the
//! first exit is the competitor with the smallest `q_J = a_J / b_J`, and the
//! boundary sits where `v/u = q`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::schedules::{Schedule, ScheduleKind};
use crate::space::EmbeddingTable;

/// Fraction assigned to elements whose noise never leaves the area.
pub const Q_SENTINEL: f64 = 100.0;

/// Relative tolerance of the likelihood tie at a boundary point.
pub const BOUNDARY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFraction {
    pub q_min: f64,
    /// Winning competitor; equals the datum's own state when masked.
    pub j_star: usize,
    pub masked: bool,
}

/// Smallest valid `a_J / b_J` over all competitors of `label`.
///
/// Competitors with `a_J < 0` (x0 not inside its own area) or `b_J <= 0`
/// (noise never favours `J`) are invalid. With no valid competitor the
/// element is masked and `q_min` is [`Q_SENTINEL`].
pub fn boundary_fraction(
    x0_row: ArrayView1<'_, f64>,
    eps_row: ArrayView1<'_, f64>,
    label: usize,
    table: &EmbeddingTable,
) -> BoundaryFraction {
    let emb_i = table.row(label);
    let fx_i = emb_i.dot(&x0_row);
    let feps_i = emb_i.dot(&eps_row);
    let mut best = BoundaryFraction {
        q_min: f64::INFINITY,
        j_star: label,
        masked: true,
    };
    for j in 0..table.num_states() {
        if j == label {
            continue;
        }
        let emb_j = table.row(j);
        let a = fx_i - emb_j.dot(&x0_row);
        let b = emb_j.dot(&eps_row) - feps_i;
        if !(a >= 0.0 && b > 0.0) {
            continue;
        }
        let q = a / b;
        if q < best.q_min {
            best = BoundaryFraction {
                q_min: q,
                j_star: j,
                masked: false,
            };
        }
    }
    if best.masked {
        best.q_min = Q_SENTINEL;
    }
    best
}

/// Coefficients `(u, v)` on the boundary for a fraction `q`.
///
/// VP: `u = 1/sqrt(1+q^2)`, `v = 1/sqrt(1+q^-2)`; OT: `u = 1/(1+q)`,
/// `v = 1/(1+q^-1)`; VE: `u = 1`, `v = q`. All three satisfy `v/u = q`.
pub fn boundary_coeffs(q: f64, kind: ScheduleKind) -> Result<(f64, f64)> {
    if !(q >= 0.0) {
        return Err(Error::range("boundary fraction", q, 0.0, f64::INFINITY));
    }
    Ok(match kind {
        ScheduleKind::Vp => (1.0 / (1.0 + q * q).sqrt(), 1.0 / (1.0 + (q * q).recip()).sqrt()),
        ScheduleKind::Ot => (1.0 / (1.0 + q), 1.0 / (1.0 + q.recip())),
        ScheduleKind::Ve => (1.0, q),
    })
}

/// Stopping time `t0 = G(x0, eps)` for one element.
///
/// OT: `T q / (1 + q)`. VE: log-linear inversion of `v = q`, clamped.
/// VP: the first table index with `sqrt(abar_t) <= u_t0`. Masked elements
/// stop at `T`.
pub fn stopping_time(fraction: &BoundaryFraction, schedule: &Schedule) -> Result<f64> {
    if fraction.masked {
        return Ok(schedule.horizon());
    }
    let q = fraction.q_min;
    Ok(match schedule.kind() {
        ScheduleKind::Ot => {
            if q.is_infinite() {
                schedule.horizon()
            } else {
                schedule.horizon() * q / (1.0 + q)
            }
        }
        ScheduleKind::Ve => schedule.continuous_time_from_v(q),
        ScheduleKind::Vp => {
            let (u, _) = boundary_coeffs(q, ScheduleKind::Vp)?;
            schedule.time_from_u(u)?.t as f64
        }
    })
}

/// Per-element boundary estimates for one datum.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEstimate {
    pub t0: Vec<f64>,
    /// Exact boundary coefficients from the fraction (before any grid
    /// quantization of `t0`).
    pub u_t0: Vec<f64>,
    pub v_t0: Vec<f64>,
    pub masked: Vec<bool>,
    pub j_star: Vec<usize>,
    pub q: Vec<f64>,
}

impl BoundaryEstimate {
    pub fn len(&self) -> usize {
        self.t0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t0.is_empty()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.masked.is_empty() {
            return 0.0;
        }
        self.masked.iter().filter(|&&m| m).count() as f64 / self.masked.len() as f64
    }

    pub fn mean_t0(&self) -> f64 {
        if self.t0.is_empty() {
            return 0.0;
        }
        self.t0.iter().sum::<f64>() / self.t0.len() as f64
    }

    /// Boundary points `u_t0 * x0 + v_t0 * eps` from the exact coefficients.
    pub fn boundary_points(&self, x0: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x0.raw_dim());
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            Zip::from(&mut row)
                .and(x0.row(i))
                .and(eps.row(i))
                .for_each(|o, &x, &e| *o = self.u_t0[i] * x + self.v_t0[i] * e);
        }
        out
    }
}

fn check_shapes(x0: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, n: usize, table: &EmbeddingTable) -> Result<()> {
    if x0.dim() != eps.dim() {
        return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.dim(), eps.dim())));
    }
    if x0.nrows() != n || x0.ncols() != table.dim() {
        return Err(Error::Shape(format!(
            "x0 {:?} vs {n} labels of dim {}",
            x0.dim(),
            table.dim()
        )));
    }
    Ok(())
}

/// Boundary estimate for every element of `x0` against noise `eps`.
///
/// `labels[i]` is the state element `i` belongs to. During training `x0`
/// rows are exactly the label embeddings; during sampling `x0` is a
/// prediction and `labels` its rounding.
pub fn estimate(
    x0: ArrayView2<'_, f64>,
    labels: &[usize],
    eps: ArrayView2<'_, f64>,
    table: &EmbeddingTable,
    schedule: &Schedule,
) -> Result<BoundaryEstimate> {
    check_shapes(x0, eps, labels.len(), table)?;
    let k = table.num_states();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::range("state index", bad as f64, 0.0, (k - 1) as f64));
    }
    let kind = schedule.kind();
    let per_element: Vec<Result<(BoundaryFraction, f64, (f64, f64))>> = (0..labels.len())
        .into_par_iter()
        .map(|i| {
            let frac = boundary_fraction(x0.row(i), eps.row(i), labels[i], table);
            let t0 = stopping_time(&frac, schedule)?;
            let coeffs = if frac.masked {
                schedule.coeff_at(t0)
            } else {
                boundary_coeffs(frac.q_min, kind)?
            };
            Ok((frac, t0, coeffs))
        })
        .collect();
    let n = labels.len();
    let mut est = BoundaryEstimate {
        t0: Vec::with_capacity(n),
        u_t0: Vec::with_capacity(n),
        v_t0: Vec::with_capacity(n),
        masked: Vec::with_capacity(n),
        j_star: Vec::with_capacity(n),
        q: Vec::with_capacity(n),
    };
    for item in per_element {
        let (frac, t0, (u, v)) = item?;
        est.t0.push(t0);
        est.u_t0.push(u);
        est.v_t0.push(v);
        est.masked.push(frac.masked);
        est.j_star.push(frac.j_star);
        est.q.push(frac.q_min);
    }
    Ok(est)
}

/// Boundary flow: maps noise to the pair `(x_t0, t0)` on its own trajectory.
///
/// The point uses the schedule's coefficients at `t0` so that
/// [`psi_inverse`] recovers `eps` exactly; for VP this is the grid point just
/// past the boundary.
pub fn psi(
    eps: ArrayView2<'_, f64>,
    x0: ArrayView2<'_, f64>,
    schedule: &Schedule,
    estimate: &BoundaryEstimate,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if x0.dim() != eps.dim() || x0.nrows() != estimate.len() {
        return Err(Error::Shape(format!(
            "x0 {:?}, eps {:?}, {} estimates",
            x0.dim(),
            eps.dim(),
            estimate.len()
        )));
    }
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (u, v) = schedule.coeff_at(estimate.t0[i]);
        Zip::from(&mut row)
            .and(x0.row(i))
            .and(eps.row(i))
            .for_each(|o, &x, &e| *o = u * x + v * e);
    }
    Ok((out, estimate.t0.clone()))
}

/// `(x_t0 - u(t0) x0) / v(t0)`; fails when any `v(t0)` is zero.
pub fn psi_inverse(
    x_t0: ArrayView2<'_, f64>,
    t0: &[f64],
    x0: ArrayView2<'_, f64>,
    schedule: &Schedule,
) -> Result<Array2<f64>> {
    if x_t0.dim() != x0.dim() || x0.nrows() != t0.len() {
        return Err(Error::Shape(format!("x_t0 {:?}, x0 {:?}, {} times", x_t0.dim(), x0.dim(), t0.len())));
    }
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let (u, v) = schedule.coeff_at(t0[i]);
        if v == 0.0 {
            return Err(Error::Numeric(format!(
                "degenerate boundary inverse at element {i}: v(t0={}) = 0",
                t0[i]
            )));
        }
        Zip::from(&mut row)
            .and(x_t0.row(i))
            .and(x0.row(i))
            .for_each(|o, &x, &d| *o = (x - u * d) / v);
    }
    Ok(out)
}
