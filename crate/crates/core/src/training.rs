//! Training on the rescaled process: draw `(x0, t, eps)`, move `x0` along its
//! rescaled trajectory, regress the denoiser onto `x0`, and (for embedding
//! representations) add a rounding cross-entropy through the dot logits.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{generate_dataset, Dataset, SourceKind, SyntheticSource};
use crate::denoiser::{DenoiserNet, GradientTape, Sgd};
use crate::error::{Error, Result};
use crate::schedules::Schedule;
use crate::space::{EmbeddingTable, Representation};
use crate::trajectory;

/// Rows closer than this trigger the embedding-collapse warning.
pub const COLLAPSE_TOL: f64 = 1e-6;

pub const METRICS_HEADER: &str = "step,loss_mse,loss_round,acc,masked_frac,wall_ms";

/// Mean over rows of the squared L2 distance.
pub fn loss_mse(x0: ArrayView2<'_, f64>, pred: ArrayView2<'_, f64>) -> f64 {
    let n = x0.nrows().max(1) as f64;
    Zip::from(&x0).and(&pred).fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b)) / n
}

/// [`loss_mse`] and its gradient with respect to `pred`.
pub fn loss_mse_grad(x0: ArrayView2<'_, f64>, pred: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = x0.nrows().max(1) as f64;
    let grad = Zip::from(&pred).and(&x0).map_collect(|&p, &x| 2.0 * (p - x) / n);
    (loss_mse(x0, pred), grad)
}

fn log_softmax_row(logits: ndarray::ArrayView1<'_, f64>) -> Vec<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Mean cross-entropy of `softmax(Emb . pred_i)` against `indices[i]`.
pub fn loss_rounding(indices: &[usize], pred: ArrayView2<'_, f64>, table: &EmbeddingTable) -> Result<f64> {
    Ok(loss_rounding_grad(indices, pred, table)?.0)
}

/// [`loss_rounding`] with gradients for `pred` and for the table.
pub fn loss_rounding_grad(
    indices: &[usize],
    pred: ArrayView2<'_, f64>,
    table: &EmbeddingTable,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if indices.len() != pred.nrows() || pred.ncols() != table.dim() {
        return Err(Error::Shape(format!(
            "{} indices for prediction {:?} with table dim {}",
            indices.len(),
            pred.dim(),
            table.dim()
        )));
    }
    let k = table.num_states();
    if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
        return Err(Error::range("state index", bad as f64, 0.0, (k - 1) as f64));
    }
    let n = pred.nrows().max(1) as f64;
    let logits = table.logits_batch(pred);
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let lp = log_softmax_row(row);
        loss -= lp[indices[i]];
        for j in 0..k {
            dlogits[[i, j]] = lp[j].exp() / n;
        }
        dlogits[[i, indices[i]]] -= 1.0 / n;
    }
    let d_pred = dlogits.dot(table.weights());
    let d_table = dlogits.t().dot(&pred);
    Ok((loss / n, d_pred, d_table))
}

/// Fraction of rows whose rounding equals the label.
pub fn rounding_accuracy(indices: &[usize], pred: ArrayView2<'_, f64>, table: &EmbeddingTable) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let rounded = table.round_to_discrete(pred);
    rounded.iter().zip(indices).filter(|(a, b)| a == b).count() as f64 / indices.len() as f64
}

/// A training or evaluation batch: labels and clean embeddings per item.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub labels: Vec<Vec<usize>>,
    pub x0: Array3<f64>,
    pub eps: Array3<f64>,
    pub t: Vec<f64>,
}

impl Batch {
    pub fn flat_labels(&self) -> Vec<usize> {
        self.labels.iter().flatten().copied().collect()
    }
}

/// Table states of each item under the representation.
pub fn expand_items(items: &[&[usize]], repr: Representation) -> Result<Vec<Vec<usize>>> {
    items.iter().map(|it| repr.expand(it)).collect()
}

/// Stacks embeddings of equally long label sequences into `(batch, n, m)`.
pub fn embed_batch(labels: &[Vec<usize>], table: &EmbeddingTable) -> Result<Array3<f64>> {
    let n = labels.first().map_or(0, Vec::len);
    let mut x0 = Array3::zeros((labels.len(), n, table.dim()));
    for (b, l) in labels.iter().enumerate() {
        if l.len() != n {
            return Err(Error::Shape("items of different lengths in one batch".into()));
        }
        x0.index_axis_mut(Axis(0), b).assign(&table.embed(l)?);
    }
    Ok(x0)
}

/// Draws items, times `t ~ U{1..T}` per item and standard normal noise,
/// in that order from `rng`.
pub fn draw_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    repr: Representation,
    table: &EmbeddingTable,
    size: usize,
    steps: usize,
    rng: &mut R,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let picks: Vec<&[usize]> = (0..size).map(|_| dataset.items[rng.random_range(0..dataset.len())].as_slice()).collect();
    let labels = expand_items(&picks, repr)?;
    let x0 = embed_batch(&labels, table)?;
    let t: Vec<f64> = (0..size).map(|_| rng.random_range(1..=steps) as f64).collect();
    let eps = Array3::from_shape_simple_fn(x0.raw_dim(), || rng.sample(StandardNormal));
    Ok(Batch { labels, x0, eps, t })
}

/// Rescaled noisy inputs for a batch, one `forward_sample` per item.
pub fn rescaled_inputs(
    batch: &Batch,
    schedule: &Schedule,
    table: &EmbeddingTable,
    r: f64,
) -> Result<(Array3<f64>, Vec<trajectory::RescaledPoint>)> {
    let points: Vec<trajectory::RescaledPoint> = (0..batch.labels.len())
        .into_par_iter()
        .map(|b| {
            trajectory::forward_sample(
                batch.x0.index_axis(Axis(0), b),
                &batch.labels[b],
                batch.eps.index_axis(Axis(0), b),
                batch.t[b],
                schedule,
                table,
                r,
            )
        })
        .collect::<Result<_>>()?;
    let mut x = Array3::zeros(batch.x0.raw_dim());
    for (b, p) in points.iter().enumerate() {
        x.index_axis_mut(Axis(0), b).assign(&p.x_tilde);
    }
    Ok((x, points))
}

/// Vector-field loss next to its bound from the x0 loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDiagnostic {
    /// Mean squared error between true and predicted rescaled fields.
    pub loss_field: f64,
    /// Largest per-element coefficient `c_i` in the batch.
    pub coeff: f64,
    pub loss_x0: f64,
}

impl BoundDiagnostic {
    pub fn holds(&self) -> bool {
        self.loss_field <= self.coeff * self.loss_x0 * (1.0 + 1e-9) + f64::MIN_POSITIVE
    }
}

/// Compares the rescaled-field error of a prediction with the x0 error.
///
/// The predicted field uses the prediction in place of `x0` and the noise
/// implied by it, `(x_tilde - u x_hat) / v`. Each element contributes
/// `c_i = (dtau/dt)^2 (u' - v' u / v)^2`.
pub fn bound_diagnostic(
    x0: ArrayView3<'_, f64>,
    pred: ArrayView3<'_, f64>,
    x_tilde: ArrayView3<'_, f64>,
    points: &[trajectory::RescaledPoint],
    schedule: &Schedule,
) -> BoundDiagnostic {
    let horizon = schedule.horizon();
    let (batch, n, m) = x0.dim();
    let mut field = 0.0;
    let mut coeff = 0.0f64;
    let mut mse = 0.0;
    for b in 0..batch {
        let p = &points[b];
        for i in 0..n {
            let tau = p.tau[i];
            let k = (horizon - p.r * p.estimate.t0[i]) / horizon;
            let (u, v) = schedule.coeff_at(tau);
            let (du, dv) = schedule.derivative_at(tau);
            coeff = coeff.max(k * k * (du - dv * u / v).powi(2));
            for d in 0..m {
                let (x, xh, xt, e) = (x0[[b, i, d]], pred[[b, i, d]], x_tilde[[b, i, d]], p.eps[[i, d]]);
                let e_hat = (xt - u * xh) / v;
                let diff = k * (du * x + dv * e) - k * (du * xh + dv * e_hat);
                field += diff * diff;
                mse += (x - xh) * (x - xh);
            }
        }
    }
    let rows = (batch * n).max(1) as f64;
    BoundDiagnostic {
        loss_field: field / rows,
        coeff,
        loss_x0: mse / rows,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss_mse: f64,
    pub loss_round: f64,
    pub acc: f64,
    pub masked_frac: f64,
    pub wall_ms: f64,
    pub grad_norm: f64,
    pub bound: BoundDiagnostic,
    /// Two embedding rows came within [`COLLAPSE_TOL`].
    pub collapsed: bool,
}

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6e},{:.6e},{:.6},{:.6},{:.1}",
            self.step, self.loss_mse, self.loss_round, self.acc, self.masked_frac, self.wall_ms
        )
    }
}

/// Everything a run needs to continue; serialized by `checkpoint`.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub schedule: Schedule,
    pub table: EmbeddingTable,
    pub net: DenoiserNet,
    pub opt: Sgd,
    pub rng: ChaCha8Rng,
    pub step: usize,
}

impl TrainState {
    /// Fresh state; the table is drawn before the network from the run seed.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule.build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let table = config.space.build_table(&mut rng)?;
        let net = DenoiserNet::new(config.net_config(), &mut rng)?;
        let opt = Sgd::new(config.lr, config.momentum, config.clip);
        Ok(Self {
            config,
            schedule,
            table,
            net,
            opt,
            rng,
            step: 0,
        })
    }

    fn uses_rounding(&self) -> bool {
        self.config.space.repr == Representation::Embedding && self.config.round_weight != 0.0
    }

    /// One update from a drawn batch and its noisy inputs.
    pub fn apply_update(
        &mut self,
        batch: &Batch,
        x_tilde: ArrayView3<'_, f64>,
        points: &[trajectory::RescaledPoint],
    ) -> Result<StepMetrics> {
        let (nb, n, m) = batch.x0.dim();
        let (pred, cache) = self.net.forward(x_tilde, &batch.t)?;
        let rows = nb * n;
        let flat_x0 = batch.x0.view().into_shape_with_order((rows, m)).expect("contiguous x0");
        let flat_pred = pred.view().into_shape_with_order((rows, m)).expect("contiguous prediction");
        let labels = batch.flat_labels();

        let (l_mse, g_mse) = loss_mse_grad(flat_x0, flat_pred);
        let mut d_pred = g_mse * self.config.mse_weight;
        let trainable = self.table.trainable();
        let mut tape = GradientTape::zeros_like(&self.net, trainable.then(|| self.table.weights().dim()));
        if let Some(g) = tape.embedding.as_mut() {
            // the regression target is the embedding itself
            for (i, &l) in labels.iter().enumerate() {
                let mut row = g.row_mut(l);
                Zip::from(&mut row)
                    .and(d_pred.row(i))
                    .for_each(|g, &d| *g -= d);
            }
        }
        let mut l_round = 0.0;
        if self.uses_rounding() {
            let (l, g_pred, g_table) = loss_rounding_grad(&labels, flat_pred, &self.table)?;
            l_round = l;
            d_pred.scaled_add(self.config.round_weight, &g_pred);
            if let Some(g) = tape.embedding.as_mut() {
                g.scaled_add(self.config.round_weight, &g_table);
            }
        }
        let total = self.config.mse_weight * l_mse + self.config.round_weight * l_round;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {}", self.step + 1)));
        }
        let acc = rounding_accuracy(&labels, flat_pred, &self.table);
        let bound = bound_diagnostic(batch.x0.view(), pred.view(), x_tilde, points, &self.schedule);

        let d_pred3 = d_pred.into_shape_with_order((nb, n, m)).expect("row-major grad");
        self.net.backward(&cache, d_pred3.view(), &mut tape)?;
        let emb = if trainable { Some(self.table.weights_mut()) } else { None };
        let grad_norm = self.opt.step(&mut self.net, emb, &mut tape)?;
        self.step += 1;
        let masked = points.iter().map(|p| p.estimate.masked_fraction()).sum::<f64>() / points.len().max(1) as f64;
        Ok(StepMetrics {
            step: self.step,
            loss_mse: l_mse,
            loss_round: l_round,
            acc,
            masked_frac: masked,
            wall_ms: 0.0,
            grad_norm,
            bound,
            collapsed: trainable && self.table.closest_pair(COLLAPSE_TOL).is_some(),
        })
    }

    /// Draws a batch from `dataset` and applies one update.
    pub fn train_step(&mut self, dataset: &Dataset) -> Result<StepMetrics> {
        let batch = draw_batch(
            dataset,
            self.config.space.repr,
            &self.table,
            self.config.batch,
            self.schedule.steps(),
            &mut self.rng,
        )?;
        let (x_tilde, points) = rescaled_inputs(&batch, &self.schedule, &self.table, self.config.r)?;
        self.apply_update(&batch, x_tilde.view(), &points)
    }

    /// Rounds the network and table to `f32` so a checkpoint reloads the
    /// exact in-memory state.
    pub fn quantize_f32(&mut self) {
        self.net.quantize_f32();
        self.table.weights_mut().mapv_inplace(|v| v as f32 as f64);
    }
}

/// Dataset named by the config: read from `data.path` or generated.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    let states = match config.data.source {
        SourceKind::BinarySubpixels => 256,
        _ => config.space.states,
    };
    let ds = match &config.data.path {
        Some(p) => Dataset::read(std::path::Path::new(p), config.data.source, states)?,
        None => {
            let src = SyntheticSource::new(config.data.source, states, config.data.size, config.data.seed)?;
            generate_dataset(&src, config.data.count)
        }
    };
    let limit = match config.space.repr {
        Representation::Embedding => config.space.states,
        _ => 256,
    };
    if ds.states > limit {
        return Err(Error::Config(format!(
            "dataset has {} symbols but the {} representation holds {limit}",
            ds.states, config.space.repr
        )));
    }
    Ok(ds)
}

/// Runs `config.steps` updates, logging every `log_every` steps (and the
/// last) to `metrics` as CSV. `on_step` sees every step's metrics.
pub fn train_with(
    state: &mut TrainState,
    dataset: &Dataset,
    mut metrics: Option<&mut dyn Write>,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<Vec<StepMetrics>> {
    let start = Instant::now();
    if let Some(w) = metrics.as_deref_mut() {
        writeln!(w, "{METRICS_HEADER}")?;
    }
    let mut logged = Vec::new();
    let target = state.config.steps;
    while state.step < target {
        let mut m = state.train_step(dataset)?;
        m.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        on_step(&m);
        if m.step % state.config.log_every == 0 || m.step == target {
            if let Some(w) = metrics.as_deref_mut() {
                writeln!(w, "{}", m.csv_row())?;
            }
            logged.push(m);
        }
    }
    state.quantize_f32();
    Ok(logged)
}

/// Fresh state trained on the config's dataset.
pub fn train(config: &TrainConfig, metrics: Option<&mut dyn Write>) -> Result<(TrainState, Vec<StepMetrics>)> {
    let dataset = load_dataset(config)?;
    let mut state = TrainState::new(config.clone())?;
    let logged = train_with(&mut state, &dataset, metrics, |_| {})?;
    Ok((state, logged))
}

/// Predictions for a batch at the nominal times, as `(batch * n, m)` rows.
pub fn predict_flat(net: &DenoiserNet, x: ArrayView3<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
    let (pred, _) = net.forward(x, t)?;
    let (b, n, m) = pred.dim();
    Ok(pred.into_shape_with_order((b * n, m)).expect("row-major"))
}

/// Slice of rows belonging to item `b` in a flattened batch.
pub fn item_rows(flat: &Array2<f64>, b: usize, n: usize) -> ArrayView2<'_, f64> {
    flat.slice(s![b * n..(b + 1) * n, ..])
}
