//! Small x0-predicting MLP with hand-written reverse mode.
//!
//! Each position of a sequence is predicted from a window of neighbouring
//! positions, an optional mean-pooled context vector and a sinusoidal
//! embedding of the nominal time. Two tanh hidden layers feed a linear
//! output of the embedding dimension.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Embedding dimension `m` (input and output width per position).
    pub dim: usize,
    /// Neighbours on each side fed alongside a position.
    pub window: usize,
    /// Append the mean of all positions to every input row.
    pub pool: bool,
    pub hidden: usize,
    pub time_dim: usize,
}

impl NetConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            window: 1,
            pool: true,
            hidden: 128,
            time_dim: 32,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim * (2 * self.window + 1) + if self.pool { self.dim } else { 0 } + self.time_dim
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config(format!("time_dim must be even, got {}", self.time_dim)));
        }
        Ok(())
    }
}

/// Affine layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        Self {
            w: Array2::from_shape_fn((inputs, outputs), |_| dist.sample(rng)),
            b: Array1::zeros(outputs),
        }
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Sinusoidal embedding of a scalar time.
pub fn time_embedding(t: f64, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for k in 0..half {
        let freq = (-(10_000f64).ln() * k as f64 / half as f64).exp();
        out[k] = (t * freq).sin();
        out[half + k] = (t * freq).cos();
    }
    out
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    h1: Array2<f64>,
    h2: Array2<f64>,
    shape: (usize, usize, usize),
}

/// Gradients with the same shapes as the network (and optionally the
/// embedding table).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<Layer>,
    pub embedding: Option<Array2<f64>>,
}

impl GradientTape {
    pub fn zeros_like(net: &DenoiserNet, embedding: Option<(usize, usize)>) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Layer::zeros(l.w.nrows(), l.w.ncols())).collect(),
            embedding: embedding.map(Array2::zeros),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        if let Some(e) = &mut self.embedding {
            e.fill(0.0);
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .chain(self.embedding.iter().flat_map(|e| e.iter()))
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
        }
        if let Some(e) = &mut self.embedding {
            *e *= k;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    config: NetConfig,
    layers: Vec<Layer>,
}

impl DenoiserNet {
    /// Glorot-uniform hidden layers and a zero output layer, so a fresh
    /// network predicts zero everywhere.
    pub fn new<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = vec![
            Layer::glorot(config.input_dim(), config.hidden, rng),
            Layer::glorot(config.hidden, config.hidden, rng),
            Layer::zeros(config.hidden, config.dim),
        ];
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: NetConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let shapes = [
            (config.input_dim(), config.hidden),
            (config.hidden, config.hidden),
            (config.hidden, config.dim),
        ];
        if layers.len() != 3 {
            return Err(Error::Shape(format!("expected 3 layers, got {}", layers.len())));
        }
        for (l, &(i, o)) in layers.iter().zip(&shapes) {
            if l.w.dim() != (i, o) || l.b.len() != o {
                return Err(Error::Shape(format!("layer {:?}/{} vs expected ({i}, {o})", l.w.dim(), l.b.len())));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|v| v as f32 as f64);
            l.b.mapv_inplace(|v| v as f32 as f64);
        }
    }

    fn build_input(&self, x: ArrayView3<'_, f64>, t: &[f64]) -> Array2<f64> {
        let (batch, n, m) = x.dim();
        let cfg = &self.config;
        let w = cfg.window as isize;
        let mut input = Array2::zeros((batch * n, cfg.input_dim()));
        for b in 0..batch {
            let seq = x.index_axis(Axis(0), b);
            let pooled = seq.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m));
            let temb = time_embedding(t[b], cfg.time_dim);
            for i in 0..n {
                let mut row = input.row_mut(b * n + i);
                for (slot, off) in (-w..=w).enumerate() {
                    let j = i as isize + off;
                    if j >= 0 && (j as usize) < n {
                        row.slice_mut(s![slot * m..(slot + 1) * m]).assign(&seq.row(j as usize));
                    }
                }
                let mut at = m * (2 * cfg.window + 1);
                if cfg.pool {
                    row.slice_mut(s![at..at + m]).assign(&pooled);
                    at += m;
                }
                row.slice_mut(s![at..]).assign(&temb);
            }
        }
        input
    }

    fn check_input(&self, x: ArrayView3<'_, f64>, t: &[f64]) -> Result<()> {
        if x.dim().2 != self.config.dim {
            return Err(Error::Shape(format!("input dim {} vs net dim {}", x.dim().2, self.config.dim)));
        }
        if x.dim().0 != t.len() {
            return Err(Error::Shape(format!("{} sequences vs {} times", x.dim().0, t.len())));
        }
        Ok(())
    }

    /// Batched forward pass over `(batch, n, m)` with one time per sequence.
    pub fn forward(&self, x: ArrayView3<'_, f64>, t: &[f64]) -> Result<(Array3<f64>, ForwardCache)> {
        self.check_input(x, t)?;
        let (batch, n, m) = x.dim();
        let input = self.build_input(x, t);
        let [l1, l2, l3] = &self.layers[..] else { unreachable!() };
        let h1 = (input.dot(&l1.w) + &l1.b).mapv_into(f64::tanh);
        let h2 = (h1.dot(&l2.w) + &l2.b).mapv_into(f64::tanh);
        let out = h2.dot(&l3.w) + &l3.b;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite denoiser output".into()));
        }
        let pred = out.into_shape_with_order((batch, n, m)).expect("row-major output");
        Ok((
            pred,
            ForwardCache {
                input,
                h1,
                h2,
                shape: (batch, n, m),
            },
        ))
    }

    /// Prediction for a single `n x m` datum at time `t`.
    pub fn predict(&self, x: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let x3 = x.insert_axis(Axis(0));
        let (pred, _) = self.forward(x3, &[t])?;
        Ok(pred.index_axis_move(Axis(0), 0))
    }

    /// Accumulates parameter gradients of a loss whose gradient with respect
    /// to the output is `d_out`.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView3<'_, f64>, tape: &mut GradientTape) -> Result<()> {
        if d_out.dim() != cache.shape {
            return Err(Error::Shape(format!("output grad {:?} vs {:?}", d_out.dim(), cache.shape)));
        }
        let (batch, n, m) = cache.shape;
        let dy = d_out.to_owned().into_shape_with_order((batch * n, m)).expect("row-major grad");
        let [_, l2, l3] = &self.layers[..] else { unreachable!() };
        tape.layers[2].w += &cache.h2.t().dot(&dy);
        tape.layers[2].b += &dy.sum_axis(Axis(0));
        let mut dh2 = dy.dot(&l3.w.t());
        Zip::from(&mut dh2).and(&cache.h2).for_each(|d, &h| *d *= 1.0 - h * h);
        tape.layers[1].w += &cache.h1.t().dot(&dh2);
        tape.layers[1].b += &dh2.sum_axis(Axis(0));
        let mut dh1 = dh2.dot(&l2.w.t());
        Zip::from(&mut dh1).and(&cache.h1).for_each(|d, &h| *d *= 1.0 - h * h);
        tape.layers[0].w += &cache.input.t().dot(&dh1);
        tape.layers[0].b += &dh1.sum_axis(Axis(0));
        if !tape.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        Ok(())
    }
}

/// SGD with momentum and global grad-norm clipping.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip: f64,
    velocity: Option<GradientTape>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, clip: f64) -> Self {
        Self {
            lr,
            momentum,
            clip,
            velocity: None,
        }
    }

    /// Applies `tape` to the network and, if present, the embedding
    /// weights, then zeroes the tape. Returns the pre-clip gradient norm.
    pub fn step(&mut self, net: &mut DenoiserNet, embedding: Option<&mut Array2<f64>>, tape: &mut GradientTape) -> Result<f64> {
        if !tape.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let norm = tape.norm();
        if self.clip > 0.0 && norm > self.clip {
            tape.scale(self.clip / norm);
        }
        let vel = self.velocity.get_or_insert_with(|| {
            let mut v = tape.clone();
            v.zero();
            v
        });
        let (mu, lr) = (self.momentum, self.lr);
        for ((p, v), g) in net.layers.iter_mut().zip(&mut vel.layers).zip(&tape.layers) {
            Zip::from(&mut p.w).and(&mut v.w).and(&g.w).for_each(|p, v, &g| {
                *v = mu * *v + g;
                *p -= lr * *v;
            });
            Zip::from(&mut p.b).and(&mut v.b).and(&g.b).for_each(|p, v, &g| {
                *v = mu * *v + g;
                *p -= lr * *v;
            });
        }
        if let (Some(e), Some(v), Some(g)) = (embedding, vel.embedding.as_mut(), tape.embedding.as_ref()) {
            Zip::from(e).and(v).and(g).for_each(|p, v, &g| {
                *v = mu * *v + g;
                *p -= lr * *v;
            });
        }
        tape.zero();
        Ok(norm)
    }
}
