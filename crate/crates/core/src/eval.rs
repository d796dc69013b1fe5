//! Recovery accuracy, distribution distances and report CSVs.
//!
//! The report is long-format CSV with header `kind,r,t,value`; distance rows
//! leave `r` and `t` empty. [`plot_rows`] turns either a report or a training
//! metrics CSV into `series,x,y` rows.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::denoiser::DenoiserNet;
use crate::error::{Error, Result};
use crate::schedules::Schedule;
use crate::space::{EmbeddingTable, Representation};
use crate::training::{embed_batch, expand_items, predict_flat, rescaled_inputs, Batch};

pub const REPORT_HEADER: &str = "kind,r,t,value";
pub const PLOT_HEADER: &str = "series,x,y";

/// Total variation `0.5 * sum |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    (0..n).map(|i| (get(p, i) - get(q, i)).abs()).sum::<f64>() / 2.0
}

fn bigram_counts(items: &[Vec<usize>], row_len: Option<usize>) -> HashMap<(usize, usize), f64> {
    let mut counts = HashMap::new();
    let mut total = 0.0;
    for it in items {
        let rows: Vec<&[usize]> = match row_len {
            Some(w) if w > 0 => it.chunks(w).collect(),
            _ => vec![it.as_slice()],
        };
        for row in rows {
            for pair in row.windows(2) {
                *counts.entry((pair[0], pair[1])).or_insert(0.0) += 1.0;
                total += 1.0;
            }
        }
    }
    if total > 0.0 {
        counts.values_mut().for_each(|c| *c /= total);
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionDistance {
    pub unigram_tv: f64,
    pub bigram_tv: f64,
}

/// Unigram and bigram TV between two corpora. Bigrams are adjacent pairs;
/// with `row_len` they do not cross grid rows.
pub fn eval_distribution(generated: &[Vec<usize>], source: &[Vec<usize>], states: usize, row_len: Option<usize>) -> DistributionDistance {
    let unigram_tv = total_variation(&crate::data::unigram(generated, states), &crate::data::unigram(source, states));
    let g = bigram_counts(generated, row_len);
    let s = bigram_counts(source, row_len);
    let mut bigram_tv = 0.0;
    for (k, &p) in &g {
        bigram_tv += (p - s.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &q) in &s {
        if !g.contains_key(k) {
            bigram_tv += q;
        }
    }
    DistributionDistance {
        unigram_tv,
        bigram_tv: bigram_tv / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryRow {
    pub r: f64,
    pub t: f64,
    /// Fraction of elements whose one-step prediction rounds to the truth.
    pub acc: f64,
    pub masked_frac: f64,
    pub mean_t0: f64,
}

/// One-step recovery accuracy at each `t`, over the first `limit` items and
/// `draws` noise draws per item. Noise is drawn item-major from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn eval_recovery<R: Rng + ?Sized>(
    net: &DenoiserNet,
    table: &EmbeddingTable,
    repr: Representation,
    dataset: &Dataset,
    schedule: &Schedule,
    r: f64,
    t_list: &[f64],
    limit: usize,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<RecoveryRow>> {
    let picks: Vec<&[usize]> = dataset.items.iter().take(limit).map(Vec::as_slice).collect();
    if picks.is_empty() || draws == 0 {
        return Err(Error::Config("recovery needs at least one item and one draw".into()));
    }
    let labels = expand_items(&picks, repr)?;
    let x0 = embed_batch(&labels, table)?;
    let mut rows = Vec::with_capacity(t_list.len());
    for &t in t_list {
        if !(1.0..=schedule.horizon()).contains(&t) {
            return Err(Error::range("evaluation time", t, 1.0, schedule.horizon()));
        }
        let (mut hits, mut total, mut masked, mut t0_sum) = (0usize, 0usize, 0.0, 0.0);
        for _ in 0..draws {
            let eps: Array3<f64> = Array3::from_shape_simple_fn(x0.raw_dim(), || rng.sample(StandardNormal));
            let batch = Batch {
                labels: labels.clone(),
                x0: x0.clone(),
                eps,
                t: vec![t; labels.len()],
            };
            let (x_tilde, points) = rescaled_inputs(&batch, schedule, table, r)?;
            let pred = predict_flat(net, x_tilde.view(), &batch.t)?;
            let rounded = table.round_to_discrete(pred.view());
            let truth = batch.flat_labels();
            hits += rounded.iter().zip(&truth).filter(|(a, b)| a == b).count();
            total += truth.len();
            for p in &points {
                masked += p.estimate.masked_fraction();
                t0_sum += p.estimate.mean_t0();
            }
        }
        let denom = (draws * labels.len()) as f64;
        rows.push(RecoveryRow {
            r,
            t,
            acc: hits as f64 / total as f64,
            masked_frac: masked / denom,
            mean_t0: t0_sum / denom,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub recovery: Vec<RecoveryRow>,
    pub distance: Option<DistributionDistance>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for row in &self.recovery {
            for (kind, v) in [("acc", row.acc), ("masked_frac", row.masked_frac), ("mean_t0", row.mean_t0)] {
                let _ = writeln!(s, "{kind},{},{},{v:.6}", row.r, row.t);
            }
        }
        if let Some(d) = self.distance {
            let _ = writeln!(s, "unigram_tv,,,{:.6}", d.unigram_tv);
            let _ = writeln!(s, "bigram_tv,,,{:.6}", d.bigram_tv);
        }
        s
    }
}

/// Long-format `series,x,y` rows from a report or metrics CSV.
pub fn plot_rows(csv: &str) -> Result<String> {
    let mut lines = csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("empty CSV".into()))?.split(',').collect();
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    if header == REPORT_HEADER.split(',').collect::<Vec<_>>() {
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Parse(format!("report line {}: expected 4 fields", n + 2)));
            }
            if f[1].is_empty() {
                let _ = writeln!(out, "{},0,{}", f[0], f[3]);
            } else {
                let _ = writeln!(out, "{}_r{},{},{}", f[0], f[1], f[2], f[3]);
            }
        }
    } else {
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(Error::Parse(format!("line {}: expected {} fields", n + 2, header.len())));
            }
            for (name, v) in header.iter().zip(&f).skip(1) {
                let _ = writeln!(out, "{name},{},{v}", f[0]);
            }
        }
    }
    Ok(out)
}

/// Item rows of a batch of states, collapsed back to data symbols.
pub fn collapse_states(states: &[Vec<usize>], repr: Representation) -> Vec<Vec<usize>> {
    states.iter().map(|s| repr.collapse(s)).collect()
}

/// Mean recovery accuracy over a set of rows.
pub fn mean_acc(rows: &[RecoveryRow]) -> f64 {
    rows.iter().map(|r| r.acc).sum::<f64>() / rows.len().max(1) as f64
}
