//! Discrete states in continuous space.
//!
//! A state `j` owns the region of points `x` where the dot-product likelihood
//! `f(x, j) = Emb(j) . x` beats every other state. Rounding picks the argmax,
//! lowest index first on ties.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Rows closer than this (L-infinity) count as identical.
pub const MIN_ROW_SEPARATION: f64 = 1e-8;

/// `K x m` table of state embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Array2<f64>,
    trainable: bool,
}

impl EmbeddingTable {
    pub fn new(weights: Array2<f64>, trainable: bool) -> Result<Self> {
        let table = Self { weights, trainable };
        table.validate()?;
        Ok(table)
    }

    /// Uniform init in `[-1/sqrt(m), 1/sqrt(m)]`.
    pub fn random<R: Rng + ?Sized>(states: usize, dim: usize, trainable: bool, rng: &mut R) -> Result<Self> {
        if states < 2 || dim == 0 {
            return Err(Error::Config(format!("need K >= 2 and m >= 1, got K={states} m={dim}")));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = Array2::from_shape_fn((states, dim), |_| rng.random_range(-bound..=bound));
        Self::new(weights, trainable)
    }

    /// The per-bit table: state 0 is `+1` (bit set), state 1 is `-1`.
    pub fn binary_bits() -> Self {
        Self {
            weights: ndarray::array![[1.0], [-1.0]],
            trainable: false,
        }
    }

    /// 256 states embedded by their 8-bit `+-1` codes.
    pub fn fixed_binary() -> Self {
        let weights = Array2::from_shape_fn((256, 8), |(v, b)| bit_value(v as u8, b));
        Self {
            weights,
            trainable: false,
        }
    }

    pub fn num_states(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, f64> {
        self.weights.row(j)
    }

    /// Rejects non-finite entries and duplicate rows.
    pub fn validate(&self) -> Result<()> {
        if self.weights.nrows() < 2 || self.weights.ncols() == 0 {
            return Err(Error::Shape(format!("embedding table {:?} too small", self.weights.dim())));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("embedding table has non-finite entries".into()));
        }
        if let Some((a, b)) = self.closest_pair(MIN_ROW_SEPARATION) {
            return Err(Error::Config(format!("embedding rows {a} and {b} are identical")));
        }
        Ok(())
    }

    /// First pair of rows within `tol` in L-infinity distance.
    pub fn closest_pair(&self, tol: f64) -> Option<(usize, usize)> {
        let k = self.num_states();
        for a in 0..k {
            for b in a + 1..k {
                let d = self
                    .row(a)
                    .iter()
                    .zip(self.row(b))
                    .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                if d <= tol {
                    return Some((a, b));
                }
            }
        }
        None
    }

    /// `f(x, j) = Emb(j) . x`.
    pub fn likelihood(&self, x: ArrayView1<'_, f64>, j: usize) -> Result<f64> {
        if j >= self.num_states() {
            return Err(Error::range("state index", j as f64, 0.0, (self.num_states() - 1) as f64));
        }
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point has dim {}, table has {}", x.len(), self.dim())));
        }
        Ok(self.row(j).dot(&x))
    }

    /// `f(x, j)` for every state.
    pub fn logits(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&x)
    }

    /// Logits for every row of `x`: an `n x K` matrix.
    pub fn logits_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t())
    }

    pub fn round_row(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax_first(self.logits(x).iter().copied())
    }

    /// Argmax state per row; ties go to the lowest index.
    pub fn round_to_discrete(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits_batch(x)
            .axis_iter(Axis(0))
            .map(|row| argmax_first(row.iter().copied()))
            .collect()
    }

    /// Stacks `Emb(i)` for every index.
    pub fn embed(&self, indices: &[usize]) -> Result<Array2<f64>> {
        let k = self.num_states();
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::range("state index", bad as f64, 0.0, (k - 1) as f64));
        }
        Ok(self.weights.select(Axis(0), indices))
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in values.enumerate() {
        if v > best_val {
            best = j;
            best_val = v;
        }
    }
    best
}

/// A datum: state indices per element and their embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDatum {
    pub indices: Vec<usize>,
    pub x0: Array2<f64>,
}

impl DiscreteDatum {
    pub fn new(indices: Vec<usize>, table: &EmbeddingTable) -> Result<Self> {
        let x0 = table.embed(&indices)?;
        Ok(Self { indices, x0 })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn bit_value(v: u8, position: usize) -> f64 {
    if (v >> (7 - position)) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// 8-bit `+-1` codes of sub-pixel values, most significant bit first.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCode {
    pub bits: Array2<f64>,
}

impl BinaryCode {
    pub fn encode(values: &[u32]) -> Result<Self> {
        let mut bits = Array2::zeros((values.len(), 8));
        for (i, &v) in values.iter().enumerate() {
            bits.row_mut(i).assign(&Array1::from(encode_binary(v)?.to_vec()));
        }
        Ok(Self { bits })
    }

    pub fn decode(&self) -> Vec<u8> {
        self.bits.axis_iter(Axis(0)).map(|row| decode_binary(&row.to_vec())).collect()
    }
}

pub fn encode_binary(v: u32) -> Result<[f64; 8]> {
    if v > 255 {
        return Err(Error::range("sub-pixel value", v as f64, 0.0, 255.0));
    }
    let mut out = [0.0; 8];
    for (b, slot) in out.iter_mut().enumerate() {
        *slot = bit_value(v as u8, b);
    }
    Ok(out)
}

/// Thresholds each coordinate at zero (`>= 0` is a set bit).
pub fn decode_binary(bits: &[f64]) -> u8 {
    bits.iter()
        .take(8)
        .fold(0u8, |acc, &b| (acc << 1) | u8::from(b >= 0.0))
}

/// How per-element symbols are laid out in continuous space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    /// One element per symbol, `K x m` table (trainable or not).
    Embedding,
    /// One element per sub-pixel, embedded by its fixed 8-bit code.
    FixedBinary,
    /// Eight one-dimensional elements per sub-pixel, one per bit.
    BinaryBits,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Embedding => "embedding",
            Representation::FixedBinary => "fixed_binary",
            Representation::BinaryBits => "binary_bits",
        }
    }

    /// Elements in continuous space per data symbol.
    pub fn elements_per_symbol(self) -> usize {
        match self {
            Representation::BinaryBits => 8,
            _ => 1,
        }
    }

    /// Maps data symbols to table state indices.
    pub fn expand(self, symbols: &[usize]) -> Result<Vec<usize>> {
        match self {
            Representation::Embedding => Ok(symbols.to_vec()),
            Representation::FixedBinary => {
                if let Some(&bad) = symbols.iter().find(|&&s| s > 255) {
                    return Err(Error::range("sub-pixel value", bad as f64, 0.0, 255.0));
                }
                Ok(symbols.to_vec())
            }
            Representation::BinaryBits => {
                let mut out = Vec::with_capacity(symbols.len() * 8);
                for &s in symbols {
                    let code = encode_binary(s as u32)?;
                    out.extend(code.iter().map(|&b| usize::from(b < 0.0)));
                }
                Ok(out)
            }
        }
    }

    /// Inverse of [`Representation::expand`].
    pub fn collapse(self, states: &[usize]) -> Vec<usize> {
        match self {
            Representation::BinaryBits => states
                .chunks(8)
                .map(|chunk| {
                    let bits: Vec<f64> = chunk.iter().map(|&s| if s == 0 { 1.0 } else { -1.0 }).collect();
                    decode_binary(&bits) as usize
                })
                .collect(),
            _ => states.to_vec(),
        }
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(Representation::Embedding),
            "fixed_binary" => Ok(Representation::FixedBinary),
            "binary_bits" => Ok(Representation::BinaryBits),
            other => Err(Error::Config(format!("unknown representation `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pm1() -> EmbeddingTable {
        EmbeddingTable::new(array![[1.0], [-1.0]], false).unwrap()
    }

    #[test]
    fn likelihood_on_two_state_line() {
        let t = pm1();
        assert_eq!(t.likelihood(array![1.0].view(), 0).unwrap(), 1.0);
        assert_eq!(t.likelihood(array![1.0].view(), 1).unwrap(), -1.0);
        assert_eq!(t.likelihood(array![0.0].view(), 1).unwrap(), 0.0);
        assert!(matches!(t.likelihood(array![0.0].view(), 2), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn rounding_recovers_rows_and_breaks_ties_low() {
        let t = pm1();
        assert_eq!(t.round_to_discrete(array![[1.0], [-1.0], [0.0]].view()), vec![0, 1, 0]);
    }

    #[test]
    fn duplicate_rows_rejected() {
        assert!(EmbeddingTable::new(array![[1.0, 2.0], [1.0, 2.0]], true).is_err());
        assert!(EmbeddingTable::new(array![[f64::NAN], [1.0]], true).is_err());
    }

    #[test]
    fn random_table_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::random(16, 9, true, &mut rng).unwrap();
        assert!(t.weights().iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(t.trainable());
    }

    #[test]
    fn binary_code_examples() {
        assert_eq!(encode_binary(170).unwrap(), [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        assert_eq!(encode_binary(0).unwrap(), [-1.0; 8]);
        assert_eq!(encode_binary(255).unwrap(), [1.0; 8]);
        assert!(encode_binary(256).is_err());
        assert_eq!(decode_binary(&[0.0, -0.3, 2.0, -1.0, 0.1, -5.0, 7.0, -0.0]), 0b1010_1011);
    }

    #[test]
    fn binary_code_is_a_bijection() {
        let all: Vec<u32> = (0..256).collect();
        let code = BinaryCode::encode(&all).unwrap();
        let back: Vec<u32> = code.decode().into_iter().map(u32::from).collect();
        assert_eq!(back, all);
    }

    #[test]
    fn bit_representation_round_trip() {
        let symbols: Vec<usize> = (0..256).collect();
        let states = Representation::BinaryBits.expand(&symbols).unwrap();
        assert_eq!(states.len(), 256 * 8);
        assert_eq!(Representation::BinaryBits.collapse(&states), symbols);
        // each bit state is a row of the K=2 table
        let bits = EmbeddingTable::binary_bits();
        let code = encode_binary(170).unwrap();
        for (b, s) in code.iter().zip(&states[170 * 8..171 * 8]) {
            assert_eq!(bits.row(*s)[0], *b);
        }
    }

    #[test]
    fn fixed_binary_rows_are_codes() {
        let t = EmbeddingTable::fixed_binary();
        assert_eq!(t.num_states(), 256);
        assert_eq!(t.row(170).to_vec(), encode_binary(170).unwrap().to_vec());
        assert!(t.validate().is_ok());
        // every code maximizes its own likelihood
        let x0 = t.embed(&(0..256).collect::<Vec<_>>()).unwrap();
        assert_eq!(t.round_to_discrete(x0.view()), (0..256).collect::<Vec<_>>());
    }
}
