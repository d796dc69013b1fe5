//! Synthetic discrete datasets and their text formats.
//!
//! Token files hold one sequence per line as whitespace-separated integers.
//! Grid files hold each grid as `side` lines of comma-separated integers,
//! with grids separated by one blank line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, weighted::WeightedIndex};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Order-1 Markov chain over `K` tokens with sparse transitions.
    MarkovTokens,
    /// `side x side` grid of `K` categories with vertical and horizontal
    /// dependence.
    CategoricalGrid,
    /// `side x side` grayscale sub-pixels (0..=255) from a 4-mode mixture.
    BinarySubpixels,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::MarkovTokens => "markov_tokens",
            SourceKind::CategoricalGrid => "categorical_grid",
            SourceKind::BinarySubpixels => "binary_subpixels",
        }
    }

    pub fn is_grid(self) -> bool {
        !matches!(self, SourceKind::MarkovTokens)
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov_tokens" => Ok(SourceKind::MarkovTokens),
            "categorical_grid" => Ok(SourceKind::CategoricalGrid),
            "binary_subpixels" => Ok(SourceKind::BinarySubpixels),
            other => Err(Error::Config(format!("unknown data source `{other}`"))),
        }
    }
}

/// Mode centres of the sub-pixel mixture.
pub const SUBPIXEL_MODES: [f64; 4] = [24.0, 88.0, 160.0, 232.0];
const SUBPIXEL_SPREAD: f64 = 6.0;

/// Probability that a grid cell copies the one above it.
const GRID_COPY_UP: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    pub kind: SourceKind,
    /// Number of symbols (256 for sub-pixels).
    pub states: usize,
    /// Sequence length, or grid side.
    pub size: usize,
    /// Row-stochastic transitions (tokens and grid rows); mode weights as a
    /// single row for sub-pixels.
    pub transition: Array2<f64>,
    /// Distribution of the first symbol.
    pub initial: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSource {
    /// Builds the source's random structure from `seed`. Each token or
    /// category moves to one of three successors.
    pub fn new(kind: SourceKind, states: usize, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("source size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (states, transition, initial) = match kind {
            SourceKind::MarkovTokens | SourceKind::CategoricalGrid => {
                if states < 2 {
                    return Err(Error::Config(format!("need at least 2 states, got {states}")));
                }
                let fanout = 3.min(states);
                let mut tr = Array2::zeros((states, states));
                for i in 0..states {
                    let next = rand::seq::index::sample(&mut rng, states, fanout);
                    let w: Vec<f64> = (0..fanout).map(|_| rng.random_range(0.2..1.0)).collect();
                    let total: f64 = w.iter().sum();
                    for (j, wj) in next.iter().zip(&w) {
                        tr[[i, j]] = wj / total;
                    }
                }
                (states, tr, vec![1.0 / states as f64; states])
            }
            SourceKind::BinarySubpixels => {
                let w: Vec<f64> = (0..SUBPIXEL_MODES.len()).map(|_| rng.random_range(0.5..1.0)).collect();
                let total: f64 = w.iter().sum();
                let row = Array2::from_shape_fn((1, w.len()), |(_, j)| w[j] / total);
                (256, row, Vec::new())
            }
        };
        Ok(Self {
            kind,
            states,
            size,
            transition,
            initial,
            seed,
        })
    }

    /// Builds a source whose transition table is given explicitly.
    pub fn with_transition(kind: SourceKind, size: usize, transition: Array2<f64>, seed: u64) -> Result<Self> {
        let states = transition.nrows();
        if kind == SourceKind::BinarySubpixels || transition.ncols() != states {
            return Err(Error::Shape("explicit transitions need a square token/grid table".into()));
        }
        for row in transition.rows() {
            if (row.sum() - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::Config("transition rows must be distributions".into()));
            }
        }
        Ok(Self {
            kind,
            states,
            size,
            transition,
            initial: vec![1.0 / states as f64; states],
            seed,
        })
    }

    /// Elements per item.
    pub fn item_len(&self) -> usize {
        if self.kind.is_grid() {
            self.size * self.size
        } else {
            self.size
        }
    }

    fn next_state<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let row = self.transition.row(from);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding slack: last state with positive mass
        row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn draw_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.initial).expect("valid initial distribution").sample(rng)
    }

    /// One item, flattened row-major for grids.
    pub fn sample_item<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match self.kind {
            SourceKind::MarkovTokens => {
                let mut seq = Vec::with_capacity(self.size);
                let mut s = self.draw_initial(rng);
                seq.push(s);
                for _ in 1..self.size {
                    s = self.next_state(s, rng);
                    seq.push(s);
                }
                seq
            }
            SourceKind::CategoricalGrid => {
                let side = self.size;
                let mut g = vec![0usize; side * side];
                for i in 0..side {
                    for j in 0..side {
                        g[i * side + j] = if i == 0 && j == 0 {
                            self.draw_initial(rng)
                        } else if i > 0 && rng.random_bool(GRID_COPY_UP) {
                            g[(i - 1) * side + j]
                        } else if j > 0 {
                            self.next_state(g[i * side + j - 1], rng)
                        } else {
                            self.next_state(g[(i - 1) * side], rng)
                        };
                    }
                }
                g
            }
            SourceKind::BinarySubpixels => {
                let modes = WeightedIndex::new(self.transition.row(0).to_vec()).expect("valid mode weights");
                let noise = Normal::new(0.0, SUBPIXEL_SPREAD).expect("positive spread");
                // one mode per image row, so rows are internally coherent
                let mut g = Vec::with_capacity(self.size * self.size);
                for _ in 0..self.size {
                    let centre = SUBPIXEL_MODES[modes.sample(rng)];
                    for _ in 0..self.size {
                        let v: f64 = centre + noise.sample(rng);
                        g.push(v.round().clamp(0.0, 255.0) as usize);
                    }
                }
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: SourceKind,
    pub states: usize,
    /// Sequence length, or grid side.
    pub size: usize,
    pub items: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_len(&self) -> usize {
        if self.kind.is_grid() {
            self.size * self.size
        } else {
            self.size
        }
    }

    /// Empirical unigram frequencies over `states` symbols.
    pub fn unigram(&self) -> Vec<f64> {
        unigram(&self.items, self.states)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = if self.kind.is_grid() {
            format_grids(&self.items, self.size)?
        } else {
            format_tokens(&self.items)
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path, kind: SourceKind, states: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let items = if kind.is_grid() { parse_grids(&text)? } else { parse_tokens(&text)? };
        let first = items.first().ok_or_else(|| Error::Parse(format!("{} holds no items", path.display())))?;
        let len = first.len();
        if items.iter().any(|it| it.len() != len) {
            return Err(Error::Parse("items have different lengths".into()));
        }
        if let Some(&bad) = items.iter().flatten().find(|&&s| s >= states) {
            return Err(Error::range("symbol", bad as f64, 0.0, (states - 1) as f64));
        }
        let size = if kind.is_grid() {
            let side = (len as f64).sqrt().round() as usize;
            if side * side != len {
                return Err(Error::Parse(format!("grid of {len} cells is not square")));
            }
            side
        } else {
            len
        };
        Ok(Self {
            kind,
            states,
            size,
            items,
        })
    }
}

/// Draws `count` items from `source` with its own seed.
pub fn generate_dataset(source: &SyntheticSource, count: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed ^ 0x9e37_79b9_7f4a_7c15);
    Dataset {
        kind: source.kind,
        states: source.states,
        size: source.size,
        items: (0..count).map(|_| source.sample_item(&mut rng)).collect(),
    }
}

pub fn unigram(items: &[Vec<usize>], states: usize) -> Vec<f64> {
    let mut counts = vec![0.0; states];
    let mut total = 0.0;
    for &s in items.iter().flatten() {
        if s < states {
            counts[s] += 1.0;
        }
        total += 1.0;
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

pub fn format_tokens(items: &[Vec<usize>]) -> String {
    let mut s = String::new();
    for it in items {
        let line: Vec<String> = it.iter().map(usize::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_tokens(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.split_whitespace()
                .map(|w| w.parse().map_err(|_| Error::Parse(format!("line {}: bad token `{w}`", n + 1))))
                .collect()
        })
        .collect()
}

pub fn format_grids(items: &[Vec<usize>], side: usize) -> Result<String> {
    let mut s = String::new();
    for (k, it) in items.iter().enumerate() {
        if it.len() != side * side {
            return Err(Error::Shape(format!("grid {k} has {} cells, expected {}", it.len(), side * side)));
        }
        if k > 0 {
            s.push('\n');
        }
        for row in it.chunks(side) {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
    }
    Ok(s)
}

pub fn parse_grids(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut items = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !cur.is_empty() {
                items.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let row: Vec<usize> = line
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad cell `{w}`", n + 1))))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Parse(format!("line {}: ragged grid row", n + 1)));
        }
        cur.extend(row);
    }
    if !cur.is_empty() {
        items.push(cur);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_chain_gives_constant_sequences() {
        let tr = Array2::eye(5);
        let src = SyntheticSource::with_transition(SourceKind::MarkovTokens, 12, tr, 3).unwrap();
        let ds = generate_dataset(&src, 50);
        assert!(ds.items.iter().all(|s| s.iter().all(|&v| v == s[0])));
    }

    #[test]
    fn uniform_chain_has_uniform_unigrams() {
        let tr = Array2::from_elem((4, 4), 0.25);
        let src = SyntheticSource::with_transition(SourceKind::MarkovTokens, 1, tr, 9).unwrap();
        let ds = generate_dataset(&src, 100_000);
        let tv: f64 = ds.unigram().iter().map(|p| (p - 0.25).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.01, "tv = {tv}");
    }

    #[test]
    fn transitions_are_stochastic() {
        for kind in [SourceKind::MarkovTokens, SourceKind::CategoricalGrid] {
            let src = SyntheticSource::new(kind, 16, 8, 1).unwrap();
            for row in src.transition.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_file() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [SourceKind::MarkovTokens, SourceKind::CategoricalGrid, SourceKind::BinarySubpixels] {
            let src = SyntheticSource::new(kind, 8, 4, 42).unwrap();
            let (a, b) = (dir.path().join("a"), dir.path().join("b"));
            generate_dataset(&src, 20).write(&a).unwrap();
            generate_dataset(&src, 20).write(&b).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
            let back = Dataset::read(&a, kind, src.states).unwrap();
            assert_eq!(back, generate_dataset(&src, 20));
        }
    }

    #[test]
    fn grid_text_layout() {
        let text = format_grids(&[vec![1, 2, 3, 4], vec![5, 6, 7, 0]], 2).unwrap();
        assert_eq!(text, "1,2\n3,4\n\n5,6\n7,0\n");
        assert_eq!(parse_grids(&text).unwrap(), vec![vec![1, 2, 3, 4], vec![5, 6, 7, 0]]);
        assert_eq!(format_tokens(&[vec![3, 1], vec![0]]), "3 1\n0\n");
        assert!(parse_tokens("1 x 2").is_err());
    }

    #[test]
    fn subpixels_stay_in_range() {
        let src = SyntheticSource::new(SourceKind::BinarySubpixels, 0, 8, 5).unwrap();
        let ds = generate_dataset(&src, 30);
        assert!(ds.items.iter().flatten().all(|&v| v <= 255));
        assert_eq!(ds.item_len(), 64);
    }
}
