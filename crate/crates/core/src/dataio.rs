//! Sparse binary-classification data: LIBSVM text I/O, statistics,
//! balanced partitioning and a synthetic generator.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One training example: a sparse feature vector and a ±1 label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    indices: Vec<u32>,
    values: Vec<f64>,
    label: f64,
    squared_norm: f64,
}

impl Example {
    /// Builds an example from parallel index/value lists. Indices must be
    /// strictly ascending; explicit zeros are dropped.
    pub fn new(indices: Vec<u32>, values: Vec<f64>, label: f64) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if label != 1.0 && label != -1.0 {
            return Err(Error::InvalidArgument(format!("label {label} is not ±1")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("indices not strictly ascending".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite feature value {v}")));
        }
        let (indices, values): (Vec<u32>, Vec<f64>) = indices
            .into_iter()
            .zip(values)
            .filter(|&(_, v)| v != 0.0)
            .unzip();
        let squared_norm = values.iter().map(|v| v * v).sum();
        Ok(Self { indices, values, label, squared_norm })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> f64 {
        self.label
    }

    pub fn squared_norm(&self) -> f64 {
        self.squared_norm
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&j| j as usize).zip(self.values.iter().copied())
    }

    /// `x · w` for a dense `w`.
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * w[j]).sum()
    }

    /// `w += scale * x`.
    pub fn axpy(&self, scale: f64, w: &mut [f64]) {
        for (j, v) in self.iter() {
            w[j] += v * scale;
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|v| v * factor).collect();
        let squared_norm = values.iter().map(|v| v * v).sum();
        Self { indices: self.indices.clone(), values, label: self.label, squared_norm }
    }
}

/// Table-1 style summary of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    /// Largest squared example norm.
    pub r: f64,
    pub nnz: usize,
    /// `nnz / (n * d)`.
    pub sparsity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    d: usize,
    stats: DatasetStats,
}

impl Dataset {
    /// `d` is raised to cover every index; pass 0 to use the observed maximum.
    pub fn new(examples: Vec<Example>, d: usize) -> Self {
        let observed = examples
            .iter()
            .filter_map(|e| e.indices.last())
            .map(|&j| j as usize + 1)
            .max()
            .unwrap_or(0);
        let d = d.max(observed);
        let nnz = examples.iter().map(Example::nnz).sum();
        let r = examples.iter().map(Example::squared_norm).fold(0.0, f64::max);
        let cells = examples.len() as f64 * d as f64;
        let sparsity = if cells > 0.0 { nnz as f64 / cells } else { 0.0 };
        Self { examples, d, stats: DatasetStats { r, nnz, sparsity } }
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn stats(&self) -> DatasetStats {
        self.stats
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    /// Same data with the feature dimension raised to at least `d`.
    pub fn with_dim(self, d: usize) -> Self {
        Self::new(self.examples, d)
    }

    /// Scales every nonzero example to unit Euclidean norm.
    pub fn normalized(&self) -> Self {
        let examples = self
            .examples
            .iter()
            .map(|e| if e.squared_norm > 0.0 { e.scaled(1.0 / e.squared_norm.sqrt()) } else { e.clone() })
            .collect();
        Self::new(examples, self.d)
    }

    /// Writes the dataset back out in LIBSVM text form (1-based indices).
    pub fn write_libsvm<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.examples {
            write!(out, "{}", if e.label > 0.0 { "+1" } else { "-1" })?;
            for (j, v) in e.iter() {
                write!(out, " {}:{}", j + 1, v)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses LIBSVM text: `label idx:val idx:val ...` with 1-based indices.
///
/// Labels `0` are mapped to `-1`; blank lines and `#` comment lines are
/// skipped; CRLF line endings are accepted. `min_dim` forces a larger feature
/// dimension than the one observed (0 = observed).
pub fn parse_libsvm<R: BufRead>(reader: R, min_dim: usize) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = lineno + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        examples.push(parse_line(text, line_no)?);
    }
    Ok(Dataset::new(examples, min_dim))
}

fn parse_line(text: &str, line: usize) -> Result<Example> {
    let err = |msg: String| Error::Parse { line, msg };
    let mut tokens = text.split_ascii_whitespace();
    let label_tok = tokens.next().ok_or_else(|| err("empty line".into()))?;
    let raw: f64 = label_tok
        .parse()
        .map_err(|_| err(format!("unparsable label {label_tok:?}")))?;
    let label = match raw {
        l if l == 1.0 => 1.0,
        l if l == 0.0 || l == -1.0 => -1.0,
        l => return Err(err(format!("label {l} outside {{-1, 0, +1}}"))),
    };
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("malformed token {tok:?}")))?;
        let idx: u64 = idx
            .parse()
            .map_err(|_| err(format!("bad feature index {idx:?}")))?;
        if idx == 0 || idx > u32::MAX as u64 {
            return Err(err(format!("feature index {idx} out of range (indices are 1-based)")));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("unparsable value {val:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value {val}")));
        }
        let zero_based = (idx - 1) as u32;
        if indices.last().is_some_and(|&prev| prev >= zero_based) {
            return Err(err(format!("feature index {idx} not ascending")));
        }
        indices.push(zero_based);
        values.push(val);
    }
    Example::new(indices, values, label).map_err(|e| err(e.to_string()))
}

/// Disjoint index sets, one per worker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    /// Wraps explicit assignments after checking they cover `0..n` exactly once.
    pub fn from_assignments(assignments: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in assignments.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!("index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || assignments.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("assignments do not cover every example".into()));
        }
        Ok(Self { assignments })
    }

    pub fn workers(&self) -> usize {
        self.assignments.len()
    }

    pub fn shard(&self, worker: usize) -> &[usize] {
        &self.assignments[worker]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }
}

/// Shuffles `0..n` with the seeded stream and cuts it into `m` contiguous,
/// balanced pieces (the first `n % m` pieces get one extra element).
pub fn partition(n: usize, m: usize, seed: u64) -> Result<Partition> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one worker".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("{m} workers for {n} examples")));
    }
    let mut rng = rng::stream(seed, rng::PARTITION_STREAM, 0);
    let perm = rng::sample_batch(&mut rng, n, n);
    let (base, extra) = (n / m, n % m);
    let mut assignments = Vec::with_capacity(m);
    let mut start = 0;
    for l in 0..m {
        let len = base + usize::from(l < extra);
        assignments.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(Partition { assignments })
}

/// Random sparse problem with labels from a hidden linear model.
///
/// Each feature is present with probability `density` and drawn from N(0,1);
/// `label = sign(x · w_true)` (ties go to +1), then flipped with probability
/// `label_noise`.
pub fn gen_synthetic(n: usize, d: usize, density: f64, seed: u64, label_noise: f64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {density} not in (0, 1]")));
    }
    if !(0.0..0.5).contains(&label_noise) {
        return Err(Error::InvalidArgument(format!("label noise {label_noise} not in [0, 0.5)")));
    }
    let mut rng = rng::stream(seed, rng::GENERATOR_STREAM, 0);
    let w_true: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for j in 0..d {
            if rng.random::<f64>() < density {
                let v: f64 = StandardNormal.sample(&mut rng);
                if v != 0.0 {
                    indices.push(j as u32);
                    values.push(v);
                }
            }
        }
        let margin: f64 = indices.iter().zip(&values).map(|(&j, v)| v * w_true[j as usize]).sum();
        let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
        if label_noise > 0.0 && rng.random::<f64>() < label_noise {
            label = -label;
        }
        examples.push(Example::new(indices, values, label)?);
    }
    Ok(Dataset::new(examples, d))
}

/// The hidden direction used by [`gen_synthetic`] for the same seed and `d`.
pub fn synthetic_truth(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, rng::GENERATOR_STREAM, 0);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        parse_libsvm(s.as_bytes(), 0)
    }

    #[test]
    fn parses_basic_line() {
        let ds = parse("1 3:0.5 7:-2\n").unwrap();
        let e = ds.example(0);
        assert_eq!(e.label(), 1.0);
        assert_eq!(e.indices(), &[2, 6]);
        assert_eq!(e.values(), &[0.5, -2.0]);
        assert_eq!(e.squared_norm(), 4.25);
        assert_eq!(ds.d(), 7);
    }

    #[test]
    fn zero_label_maps_to_negative() {
        let ds = parse("0 1:1").unwrap();
        assert_eq!(ds.example(0).label(), -1.0);
        assert_eq!(ds.example(0).indices(), &[0]);
    }

    #[test]
    fn featureless_example() {
        let ds = parse("-1\n").unwrap();
        assert_eq!(ds.n(), 1);
        assert_eq!(ds.example(0).label(), -1.0);
        assert_eq!(ds.example(0).nnz(), 0);
        assert_eq!(ds.example(0).squared_norm(), 0.0);
        assert_eq!(ds.stats().nnz, 0);
    }

    #[test]
    fn comments_blank_lines_and_crlf() {
        let ds = parse("# header\r\n+1 1:2\r\n\r\n-1 2:1.5\r\n").unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.example(1).values(), &[1.5]);
    }

    #[test]
    fn explicit_zero_values_are_dropped() {
        let ds = parse("1 1:0 2:3").unwrap();
        assert_eq!(ds.example(0).indices(), &[1]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("1 1:1\n2 1:1\n", 2),
            ("1 1:1\n1 3:1 2:1\n", 2),
            ("1 abc\n", 1),
            ("1 1:x\n", 1),
            ("# c\n1 0:1\n", 2),
            ("1 2:1 2:1\n", 1),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn forced_dimension() {
        let ds = parse_libsvm("1 2:1".as_bytes(), 10).unwrap();
        assert_eq!(ds.d(), 10);
    }

    #[test]
    fn stats_match_brute_force() {
        let ds = gen_synthetic(200, 30, 0.3, 5, 0.1).unwrap();
        let r = ds
            .examples()
            .iter()
            .map(|e| e.values().iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        assert_eq!(ds.stats().r, r);
        for e in ds.examples() {
            assert!(ds.stats().r >= e.squared_norm());
        }
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let p = partition(10, 3, 1).unwrap();
        assert_eq!(p.sizes(), vec![4, 3, 3]);
        assert_eq!(partition(4, 2, 7).unwrap(), partition(4, 2, 7).unwrap());
        let single = partition(6, 1, 3).unwrap();
        let mut all = single.shard(0).to_vec();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(matches!(partition(2, 3, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(partition(2, 0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn synthetic_dense_is_separable() {
        let ds = gen_synthetic(100, 10, 1.0, 42, 0.0).unwrap();
        assert_eq!(ds.stats().nnz, 1000);
        assert_eq!(ds.stats().sparsity, 1.0);
        let w = synthetic_truth(10, 42);
        for e in ds.examples() {
            assert!(e.label() * e.dot(&w) >= 0.0);
        }
    }

    #[test]
    fn synthetic_density_within_binomial_bounds() {
        // nnz ~ Binomial(1000, 0.2): mean 200, sd 12.65; [120, 280] is a 6.3 sigma window.
        let ds = gen_synthetic(100, 10, 0.2, 42, 0.0).unwrap();
        let nnz = ds.stats().nnz;
        assert!((120..=280).contains(&nnz), "nnz = {nnz}");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(50, 8, 0.5, 9, 0.1).unwrap();
        let b = gen_synthetic(50, 8, 0.5, 9, 0.1).unwrap();
        let (mut ta, mut tb) = (Vec::new(), Vec::new());
        a.write_libsvm(&mut ta).unwrap();
        b.write_libsvm(&mut tb).unwrap();
        assert_eq!(ta, tb);
        assert!(gen_synthetic(0, 8, 0.5, 9, 0.0).is_err());
        assert!(gen_synthetic(5, 8, 0.0, 9, 0.0).is_err());
        assert!(gen_synthetic(5, 8, 0.5, 9, 0.5).is_err());
    }

    #[test]
    fn normalization_gives_unit_rows() {
        let ds = gen_synthetic(20, 5, 0.6, 3, 0.0).unwrap().normalized();
        for e in ds.examples().iter().filter(|e| e.nnz() > 0) {
            assert!((e.squared_norm() - 1.0).abs() < 1e-12);
        }
    }
}
