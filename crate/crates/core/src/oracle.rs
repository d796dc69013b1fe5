//! Slow brute-force references for the test suites.
//!
//! Nothing here calls into `boundary`, `trajectory` or the rounding code of
//! `space`. Coefficients are recomputed from the schedule's parameters with
//! independent formulas so a bug in the fast path cannot hide in both.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::schedules::{Schedule, ScheduleKind};
use crate::space::EmbeddingTable;

/// Dense-grid points per unit of diffusion time.
pub const DENSE_GRID_PER_STEP: usize = 32;

/// Independent `(u, v)` at a real time. VP floors to the grid like the
/// table lookup it checks, but rebuilds `abar` by direct multiplication.
pub fn reference_coeff(schedule: &Schedule, t: f64) -> (f64, f64) {
    let horizon = schedule.steps() as f64;
    let t = t.max(0.0).min(horizon);
    match schedule.kind() {
        ScheduleKind::Ot => (1.0 - t / horizon, t / horizon),
        ScheduleKind::Ve => {
            let (s0, st) = schedule.ve_sigmas().expect("VE schedule");
            (1.0, (s0.ln() + (t / horizon) * (st.ln() - s0.ln())).exp())
        }
        ScheduleKind::Vp => {
            let (b0, b1) = schedule.vp_betas().expect("VP schedule");
            let steps = schedule.steps();
            let k = t.floor() as usize;
            let mut abar = 1.0;
            for s in 1..=k {
                let frac = (s - 1) as f64 / (steps - 1) as f64;
                abar *= 1.0 - (b0 * (1.0 - frac) + b1 * frac);
            }
            (abar.sqrt(), (1.0 - abar).sqrt())
        }
    }
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// First dense-grid time at which some other state ties or beats `label`
/// on the plain trajectory from `x0` toward `eps`; `T` if none does.
///
/// `grid_density` is the number of grid intervals across `[0, T]`.
pub fn brute_first_exit(
    x0: ArrayView1<'_, f64>,
    eps: ArrayView1<'_, f64>,
    label: usize,
    table: &EmbeddingTable,
    schedule: &Schedule,
    grid_density: usize,
) -> f64 {
    let horizon = schedule.steps() as f64;
    assert!(grid_density >= 10 * schedule.steps(), "grid too coarse");
    let dt = horizon / grid_density as f64;
    let weights = table.weights();
    let mut x = vec![0.0; x0.len()];
    for k in 0..=grid_density {
        let t = k as f64 * dt;
        let (u, v) = reference_coeff(schedule, t);
        for d in 0..x.len() {
            x[d] = u * x0[d] + v * eps[d];
        }
        let xv = ArrayView1::from(&x[..]);
        let own = dot(weights.row(label), xv);
        let exited = (0..weights.nrows()).any(|j| j != label && dot(weights.row(j), xv) >= own);
        if exited {
            return t;
        }
    }
    horizon
}

/// Exhaustive argmax of `f(x, j)`; strict comparison keeps the lowest index.
pub fn brute_argmax(x: ArrayView1<'_, f64>, table: &EmbeddingTable) -> usize {
    let weights = table.weights();
    let mut best = 0;
    let mut best_val = dot(weights.row(0), x);
    for j in 1..weights.nrows() {
        let val = dot(weights.row(j), x);
        if val > best_val {
            best = j;
            best_val = val;
        }
    }
    best
}

/// Exact stopping time by scanning competitors pairwise, without the mask
/// bookkeeping of the fast path. Elements that never exit stop at `T`.
pub fn reference_t0(
    x0: ArrayView1<'_, f64>,
    eps: ArrayView1<'_, f64>,
    label: usize,
    table: &EmbeddingTable,
    schedule: &Schedule,
) -> f64 {
    let horizon = schedule.steps() as f64;
    let weights = table.weights();
    let own_x = dot(weights.row(label), x0);
    let own_e = dot(weights.row(label), eps);
    let mut ratio = f64::INFINITY;
    for j in 0..weights.nrows() {
        if j == label {
            continue;
        }
        let a = own_x - dot(weights.row(j), x0);
        let b = dot(weights.row(j), eps) - own_e;
        if a >= 0.0 && b > 0.0 {
            ratio = ratio.min(a / b);
        }
    }
    if ratio.is_infinite() {
        return horizon;
    }
    match schedule.kind() {
        ScheduleKind::Ot => horizon * ratio / (1.0 + ratio),
        ScheduleKind::Ve => {
            let (s0, st) = schedule.ve_sigmas().expect("VE schedule");
            (horizon * (ratio.ln() - s0.ln()) / (st.ln() - s0.ln())).max(0.0).min(horizon)
        }
        ScheduleKind::Vp => {
            // first grid index whose v/u reaches the ratio
            (0..=schedule.steps())
                .find(|&k| {
                    let (u, v) = reference_coeff(schedule, k as f64);
                    v >= ratio * u
                })
                .map_or(horizon, |k| k as f64)
        }
    }
}

/// Central difference `(x(t+h) - x(t-h)) / 2h` of rescaled positions,
/// rebuilt from [`reference_t0`] and [`reference_coeff`].
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_field(
    x0: ArrayView2<'_, f64>,
    labels: &[usize],
    eps: ArrayView2<'_, f64>,
    t: f64,
    table: &EmbeddingTable,
    schedule: &Schedule,
    r: f64,
    h: f64,
) -> Array2<f64> {
    let horizon = schedule.steps() as f64;
    assert!(t - h >= 0.0 && t + h <= horizon, "stencil leaves [0, T]");
    let mut out = Array2::zeros(x0.raw_dim());
    for i in 0..x0.nrows() {
        let t0 = reference_t0(x0.row(i), eps.row(i), labels[i], table, schedule);
        let position = |s: f64| {
            let tau = r * t0 + s * (horizon - r * t0) / horizon;
            reference_coeff(schedule, tau)
        };
        let (u_hi, v_hi) = position(t + h);
        let (u_lo, v_lo) = position(t - h);
        for d in 0..x0.ncols() {
            let hi = u_hi * x0[[i, d]] + v_hi * eps[[i, d]];
            let lo = u_lo * x0[[i, d]] + v_lo * eps[[i, d]];
            out[[i, d]] = (hi - lo) / (2.0 * h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn known_crossing_on_the_line() {
        let table = EmbeddingTable::new(array![[1.0], [-1.0]], false).unwrap();
        let s = Schedule::ot(1000).unwrap();
        let t = brute_first_exit(array![1.0].view(), array![-1.0].view(), 0, &table, &s, 32_000);
        assert!((t - 500.0).abs() <= 1000.0 / 32_000.0);
        let never = brute_first_exit(array![1.0].view(), array![0.5].view(), 0, &table, &s, 32_000);
        assert_eq!(never, 1000.0);
    }

    #[test]
    fn reference_coefficients_match_schedule_tables() {
        for s in [Schedule::vp(300).unwrap(), Schedule::ve(300, 0.01, 50.0).unwrap(), Schedule::ot(300).unwrap()] {
            for t in [0usize, 1, 77, 299, 300] {
                let (u, v) = s.coeff(t).unwrap();
                let (ru, rv) = reference_coeff(&s, t as f64);
                assert!((u - ru).abs() < 1e-12 && (v - rv).abs() < 1e-9 * rv.max(1.0));
            }
        }
    }

    #[test]
    fn brute_argmax_ties_low() {
        let table = EmbeddingTable::new(array![[1.0, 0.0], [0.0, 1.0]], false).unwrap();
        assert_eq!(brute_argmax(array![1.0, 1.0].view(), &table), 0);
        assert_eq!(brute_argmax(array![0.0, 1.0].view(), &table), 1);
    }
}
