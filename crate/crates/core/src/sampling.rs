//! Reverse process on the rescaled trajectory.
//!
//! Each step predicts a pseudo target `x_hat`, optionally re-derives the noise
//! `eps_hat = (x - u(tau) x_hat) / v(tau)` from the current point (trajectory
//! alteration), recomputes the stopping time of `(x_hat, eps_hat)`, and moves
//! to `u(tau') x_hat + v(tau') eps_hat` at the next rescaled time. Gaussian
//! mode adds `z ~ N(0, sigma_t^2 I)` to every new point.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::boundary;
use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::schedules::Schedule;
use crate::space::EmbeddingTable;
use crate::trajectory::{check_confidence, rescale_time};

pub const DEFAULT_SIGMA_MAX: f64 = 0.1;

/// Anything that maps `(x_tilde, t)` batches to x0 predictions.
pub trait Predictor: Sync {
    fn predict(&self, x: ArrayView3<'_, f64>, t: f64) -> Result<Array3<f64>>;
}

impl Predictor for DenoiserNet {
    fn predict(&self, x: ArrayView3<'_, f64>, t: f64) -> Result<Array3<f64>> {
        let ts = vec![t; x.dim().0];
        Ok(self.forward(x, &ts)?.0)
    }
}

/// Returns fixed clean data whatever the input.
#[derive(Debug, Clone)]
pub struct ExactPredictor(pub Array3<f64>);

impl Predictor for ExactPredictor {
    fn predict(&self, x: ArrayView3<'_, f64>, _t: f64) -> Result<Array3<f64>> {
        if x.dim() != self.0.dim() {
            return Err(Error::Shape(format!("input {:?} vs target {:?}", x.dim(), self.0.dim())));
        }
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    Deterministic,
    Gaussian,
}

impl SamplerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::Deterministic => "deterministic",
            SamplerMode::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(SamplerMode::Deterministic),
            "gaussian" => Ok(SamplerMode::Gaussian),
            other => Err(Error::Config(format!("unknown sampler mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Step sizes, largest time first; they sum to `T`.
    pub intervals: Vec<usize>,
    pub r: f64,
    pub alteration: bool,
    pub mode: SamplerMode,
    /// Gaussian noise scale: `sigma_t = sigma_max * v(t) / v(T)`.
    pub sigma_max: f64,
}

impl SamplerConfig {
    /// `steps` intervals as equal as integers allow, larger ones first.
    pub fn equal(horizon: usize, steps: usize, r: f64) -> Result<Self> {
        if steps == 0 || steps > horizon {
            return Err(Error::range("sampling steps", steps as f64, 1.0, horizon as f64));
        }
        let base = horizon / steps;
        let extra = horizon % steps;
        let intervals = (0..steps).map(|i| base + usize::from(i < extra)).collect();
        let cfg = Self {
            intervals,
            r,
            alteration: true,
            mode: SamplerMode::Deterministic,
            sigma_max: DEFAULT_SIGMA_MAX,
        };
        cfg.validate(horizon)?;
        Ok(cfg)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        check_confidence(self.r)?;
        if self.intervals.is_empty() || self.intervals.contains(&0) {
            return Err(Error::Config("sampling intervals must be positive".into()));
        }
        let total: usize = self.intervals.iter().sum();
        if total != horizon {
            return Err(Error::Config(format!("sampling intervals sum to {total}, expected {horizon}")));
        }
        if !(self.sigma_max >= 0.0) {
            return Err(Error::Config("sigma_max must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.intervals.len()
    }
}

/// Sampler output: continuous pre-rounding state and rounded table states.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub x0: Array3<f64>,
    pub states: Vec<Vec<usize>>,
}

fn round_batch(x: &Array3<f64>, table: &EmbeddingTable) -> Vec<Vec<usize>> {
    x.axis_iter(Axis(0)).map(|item| table.round_to_discrete(item)).collect()
}

/// Per-item stopping times of `(x_hat, eps_hat)`, with labels from rounding.
fn stopping_times(x_hat: &Array3<f64>, eps_hat: &Array3<f64>, table: &EmbeddingTable, schedule: &Schedule) -> Result<Vec<Vec<f64>>> {
    (0..x_hat.dim().0)
        .into_par_iter()
        .map(|b| {
            let xh = x_hat.index_axis(Axis(0), b);
            let labels = table.round_to_discrete(xh);
            Ok(boundary::estimate(xh, &labels, eps_hat.index_axis(Axis(0), b), table, schedule)?.t0)
        })
        .collect()
}

fn check_finite(x: &Array3<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite sampler state at step {step}")))
    }
}

/// Runs the reverse process from `x_T = noise` (shape `(batch, n, m)`).
///
/// `noise_for_step` supplies the Gaussian perturbation for each step, or
/// `None` when nothing is added.
pub fn reverse_from<P, F>(
    predictor: &P,
    table: &EmbeddingTable,
    schedule: &Schedule,
    config: &SamplerConfig,
    noise: Array3<f64>,
    mut noise_for_step: F,
) -> Result<SampleOutput>
where
    P: Predictor + ?Sized,
    F: FnMut(usize, f64) -> Option<Array3<f64>>,
{
    config.validate(schedule.steps())?;
    let (batch, n, _) = noise.dim();
    let horizon = schedule.horizon();
    let mut t = horizon;
    let mut tau = vec![vec![horizon; n]; batch];
    let mut eps_hat = noise.clone();
    let mut x = noise;
    for (step, &dt) in config.intervals.iter().enumerate() {
        let x_hat = predictor.predict(x.view(), t)?;
        check_finite(&x_hat, step)?;
        if config.alteration {
            for b in 0..batch {
                for i in 0..n {
                    let (u, v) = schedule.coeff_at(tau[b][i]);
                    if v == 0.0 {
                        return Err(Error::Numeric(format!("v(tau) = 0 at step {step}, element {i}")));
                    }
                    Zip::from(eps_hat.slice_mut(ndarray::s![b, i, ..]))
                        .and(x.slice(ndarray::s![b, i, ..]))
                        .and(x_hat.slice(ndarray::s![b, i, ..]))
                        .for_each(|e, &xv, &xh| *e = (xv - u * xh) / v);
                }
            }
        }
        let t_next = t - dt as f64;
        let t0 = stopping_times(&x_hat, &eps_hat, table, schedule)?;
        for b in 0..batch {
            tau[b] = rescale_time(t_next, &t0[b], config.r, horizon)?;
            if t_next > 0.0 {
                // keep v(tau) > 0 until the final step
                for s in &mut tau[b] {
                    if schedule.coeff_at(*s).1 == 0.0 {
                        *s = s.max(1.0);
                    }
                }
            }
        }
        let mut next = Array3::zeros(x.raw_dim());
        for b in 0..batch {
            for i in 0..n {
                let (u, v) = schedule.coeff_at(tau[b][i]);
                Zip::from(next.slice_mut(ndarray::s![b, i, ..]))
                    .and(x_hat.slice(ndarray::s![b, i, ..]))
                    .and(eps_hat.slice(ndarray::s![b, i, ..]))
                    .for_each(|o, &xh, &e| *o = u * xh + v * e);
            }
        }
        if let Some(z) = noise_for_step(step, t) {
            next += &z;
        }
        check_finite(&next, step)?;
        x = next;
        t = t_next;
    }
    // the network was trained on t >= 1
    let x0 = predictor.predict(x.view(), t.max(1.0))?;
    check_finite(&x0, config.steps())?;
    let states = round_batch(&x0, table);
    Ok(SampleOutput { x0, states })
}

/// `sigma_max * v(t) / v(T)`.
pub fn gaussian_sigma(schedule: &Schedule, t: f64, sigma_max: f64) -> f64 {
    let (_, v_t) = schedule.coeff_at(t);
    let (_, v_big) = schedule.coeff_at(schedule.horizon());
    sigma_max * v_t / v_big
}

fn initial_noise<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.sample(StandardNormal))
}

/// Deterministic sampling of `count` items of `len` elements.
pub fn sample_deterministic<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    table: &EmbeddingTable,
    schedule: &Schedule,
    config: &SamplerConfig,
    count: usize,
    len: usize,
    rng: &mut R,
) -> Result<SampleOutput> {
    let noise = initial_noise((count, len, table.dim()), rng);
    reverse_from(predictor, table, schedule, config, noise, |_, _| None)
}

/// Gaussian sampling; with `sigma_max = 0` it matches the deterministic
/// sampler with alteration on.
pub fn sample_gaussian<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    table: &EmbeddingTable,
    schedule: &Schedule,
    config: &SamplerConfig,
    count: usize,
    len: usize,
    rng: &mut R,
) -> Result<SampleOutput> {
    let shape = (count, len, table.dim());
    let noise = initial_noise(shape, rng);
    reverse_from(predictor, table, schedule, config, noise, |_, t| {
        let sigma = gaussian_sigma(schedule, t, config.sigma_max);
        (sigma > 0.0).then(|| initial_noise(shape, rng) * sigma)
    })
}

/// Dispatches on `config.mode`.
pub fn sample<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    table: &EmbeddingTable,
    schedule: &Schedule,
    config: &SamplerConfig,
    count: usize,
    len: usize,
    rng: &mut R,
) -> Result<SampleOutput> {
    match config.mode {
        SamplerMode::Deterministic => sample_deterministic(predictor, table, schedule, config, count, len, rng),
        SamplerMode::Gaussian => sample_gaussian(predictor, table, schedule, config, count, len, rng),
    }
}

/// Unrescaled reverse process on the plain schedule times, without any
/// boundary computation. Draws from `rng` in the same order as [`sample`],
/// so `r = 0` runs of both agree exactly.
pub fn sample_plain<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &P,
    table: &EmbeddingTable,
    schedule: &Schedule,
    config: &SamplerConfig,
    count: usize,
    len: usize,
    rng: &mut R,
) -> Result<SampleOutput> {
    config.validate(schedule.steps())?;
    let shape = (count, len, table.dim());
    let mut x = initial_noise(shape, rng);
    let mut eps = x.clone();
    let mut t = schedule.horizon();
    for (step, &dt) in config.intervals.iter().enumerate() {
        let x_hat = predictor.predict(x.view(), t)?;
        let (u, v) = schedule.coeff_at(t);
        if config.alteration {
            eps = (&x - &(&x_hat * u)) / v;
        }
        let t_next = t - dt as f64;
        let (u2, v2) = schedule.coeff_at(if t_next > 0.0 && schedule.coeff_at(t_next).1 == 0.0 { 1.0 } else { t_next });
        x = x_hat.mapv(|a| u2 * a) + eps.mapv(|e| v2 * e);
        if config.mode == SamplerMode::Gaussian {
            let sigma = gaussian_sigma(schedule, t, config.sigma_max);
            if sigma > 0.0 {
                x += &(initial_noise(shape, rng) * sigma);
            }
        }
        check_finite(&x, step)?;
        t = t_next;
    }
    let x0 = predictor.predict(x.view(), t.max(1.0))?;
    let states = round_batch(&x0, table);
    Ok(SampleOutput { x0, states })
}

/// Flattens `(batch, n, m)` into `(batch * n, m)` rows.
pub fn flatten_rows(x: &Array3<f64>) -> Array2<f64> {
    let (b, n, m) = x.dim();
    x.to_owned().into_shape_with_order((b * n, m)).expect("row-major")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::ScheduleKind;
    use crate::trajectory::deterministic_step;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(kind: ScheduleKind, steps: usize) -> (EmbeddingTable, Schedule, Array3<f64>, Vec<Vec<usize>>) {
        let table = EmbeddingTable::new(array![[1.0, 0.2], [-0.3, 1.0], [-1.0, -0.4], [0.1, -1.0]], false).unwrap();
        let schedule = Schedule::new(kind, steps).unwrap();
        let labels = vec![vec![0, 1, 2, 3, 1], vec![3, 3, 0, 2, 1]];
        let mut x0 = Array3::zeros((2, 5, 2));
        for (b, l) in labels.iter().enumerate() {
            x0.index_axis_mut(Axis(0), b).assign(&table.embed(l).unwrap());
        }
        (table, schedule, x0, labels)
    }

    #[test]
    fn equal_intervals_sum_to_horizon() {
        let c = SamplerConfig::equal(1000, 20, 0.5).unwrap();
        assert_eq!(c.intervals, vec![50; 20]);
        let c = SamplerConfig::equal(10, 3, 0.5).unwrap();
        assert_eq!(c.intervals, vec![4, 3, 3]);
        assert!(SamplerConfig::equal(10, 0, 0.5).is_err());
        let mut bad = c.clone();
        bad.intervals = vec![5, 4];
        assert!(bad.validate(10).is_err());
    }

    #[test]
    fn exact_predictor_recovers_data() {
        for kind in [ScheduleKind::Vp, ScheduleKind::Ot, ScheduleKind::Ve] {
            let (table, schedule, x0, labels) = setup(kind, 200);
            let oracle = ExactPredictor(x0.clone());
            for steps in [1, 5, 20, 200] {
                for r in [0.0, 0.5, 1.0] {
                    for alteration in [true, false] {
                        let mut cfg = SamplerConfig::equal(200, steps, r).unwrap();
                        cfg.alteration = alteration;
                        let mut rng = ChaCha8Rng::seed_from_u64(steps as u64);
                        let out = sample_deterministic(&oracle, &table, &schedule, &cfg, 2, 5, &mut rng).unwrap();
                        let err = (&out.x0 - &x0).iter().fold(0.0f64, |a, d| a.max(d.abs()));
                        assert!(err < 1e-5);
                        assert_eq!(out.states, labels);
                    }
                }
            }
        }
    }

    #[test]
    fn zero_sigma_gaussian_matches_deterministic() {
        let (table, schedule, x0, _) = setup(ScheduleKind::Vp, 100);
        // a predictor that depends on its input so the paths matter
        struct Shrink;
        impl Predictor for Shrink {
            fn predict(&self, x: ArrayView3<'_, f64>, t: f64) -> Result<Array3<f64>> {
                Ok(x.mapv(|v| v * 0.5 + 0.001 * t))
            }
        }
        let _ = x0;
        let mut cfg = SamplerConfig::equal(100, 10, 0.7).unwrap();
        cfg.sigma_max = 0.0;
        let a = sample_gaussian(&Shrink, &table, &schedule, &cfg, 3, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_deterministic(&Shrink, &table, &schedule, &cfg, 3, 4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plain_path_matches_step_recurrence() {
        let (table, schedule, _, _) = setup(ScheduleKind::Vp, 100);
        struct Damp;
        impl Predictor for Damp {
            fn predict(&self, x: ArrayView3<'_, f64>, t: f64) -> Result<Array3<f64>> {
                Ok(x.mapv(|v| (v * (1.0 - t / 200.0)).tanh()))
            }
        }
        let cfg = SamplerConfig::equal(100, 4, 0.0).unwrap();
        let noise = initial_noise((1, 3, 2), &mut ChaCha8Rng::seed_from_u64(8));
        let out = reverse_from(&Damp, &table, &schedule, &cfg, noise.clone(), |_, _| None).unwrap();
        // DDIM-style chain with the closed-form step
        let mut x = noise.index_axis(Axis(0), 0).to_owned();
        let mut t = 100.0;
        for dt in [25.0, 25.0, 25.0, 25.0] {
            let x_hat = Damp.predict(x.view().insert_axis(Axis(0)), t).unwrap().index_axis_move(Axis(0), 0);
            x = deterministic_step(x.view(), x_hat.view(), t, t - dt, &schedule).unwrap();
            t -= dt;
        }
        let last = Damp.predict(x.view().insert_axis(Axis(0)), 1.0).unwrap();
        let err = (&out.x0 - &last).iter().fold(0.0f64, |a, d| a.max(d.abs()));
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn zero_confidence_equals_plain_sampler() {
        let (table, schedule, _, _) = setup(ScheduleKind::Vp, 100);
        struct Damp;
        impl Predictor for Damp {
            fn predict(&self, x: ArrayView3<'_, f64>, t: f64) -> Result<Array3<f64>> {
                Ok(x.mapv(|v| (v * (1.0 - t / 300.0)).tanh() * 0.9))
            }
        }
        for mode in [SamplerMode::Deterministic, SamplerMode::Gaussian] {
            for alteration in [true, false] {
                let mut cfg = SamplerConfig::equal(100, 7, 0.0).unwrap();
                cfg.mode = mode;
                cfg.alteration = alteration;
                let a = sample(&Damp, &table, &schedule, &cfg, 2, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                let b = sample_plain(&Damp, &table, &schedule, &cfg, 2, 3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
                assert_eq!(a, b, "{mode} alteration={alteration}");
            }
        }
    }

    #[test]
    fn gaussian_noise_does_not_break_exact_recovery() {
        let (table, schedule, x0, labels) = setup(ScheduleKind::Ot, 100);
        let mut cfg = SamplerConfig::equal(100, 10, 0.5).unwrap();
        cfg.mode = SamplerMode::Gaussian;
        let out = sample(&ExactPredictor(x0), &table, &schedule, &cfg, 2, 5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.states, labels);
    }
}
