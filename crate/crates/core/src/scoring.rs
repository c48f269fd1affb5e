//! Cosine scoring of trial pairs and the blocked all-pairs kernel.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fmt::sig_digits;
use crate::model::{sq_norm, CohortDataset, EmbeddingMatrix};
use crate::pairing::{PairLabel, PairScope, RowIndex, TrialPair};
use crate::par;

/// Pairs scored per parallel work unit in [`score_pairs`].
pub const PAIR_BLOCK: usize = 4096;

pub const KERNEL_ID: &str = "cosine-f64acc-f32store";

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine from a dot product and the two squared norms, clamped to `[-1, 1]`.
///
/// Dividing by `sqrt(|a|² |b|²)` rather than `|a| |b|` makes a vector's
/// self-similarity exactly 1.
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    (dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sq_a = sq_norm(a);
    let sq_b = sq_norm(b);
    for (index, sq) in [(0, sq_a), (1, sq_b)] {
        if !(sq > 0.0 && sq.is_finite()) {
            return Err(Error::DegenerateVector { index });
        }
    }
    Ok(cosine_from_parts(dot(a, b), sq_a, sq_b))
}

/// Cosine between two rows of a matrix, using its cached norms.
#[inline]
pub fn cosine_rows(m: &EmbeddingMatrix, i: usize, j: usize) -> f64 {
    cosine_from_parts(dot(m.row(i), m.row(j)), m.sq_norm(i), m.sq_norm(j))
}

/// Anything the metrics can consume: a score and a same/different label.
pub trait Scored {
    fn score(&self) -> f64;
    fn is_same(&self) -> bool;
}

impl Scored for (f64, PairLabel) {
    fn score(&self) -> f64 {
        self.0
    }
    fn is_same(&self) -> bool {
        self.1.is_same()
    }
}

impl Scored for (f64, bool) {
    fn score(&self) -> f64 {
        self.0
    }
    fn is_same(&self) -> bool {
        self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub pair: TrialPair,
    pub score: f64,
}

impl Scored for ScoredPair {
    fn score(&self) -> f64 {
        self.score
    }
    fn is_same(&self) -> bool {
        self.pair.label.is_same()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringProvenance {
    pub kernel: &'static str,
    pub block_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairSet {
    pub pairs: Vec<ScoredPair>,
    pub scope: Option<PairScope>,
    pub provenance: ScoringProvenance,
}

impl ScoredPairSet {
    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn counts(&self) -> (u64, u64) {
        let pos = self.pairs.iter().filter(|p| p.is_same()).count() as u64;
        (pos, self.pairs.len() as u64 - pos)
    }
}

/// Scores each pair, preserving input order.
pub fn score_pairs(
    pairs: impl IntoIterator<Item = TrialPair>,
    matrix: &EmbeddingMatrix,
    scope: Option<PairScope>,
) -> Result<ScoredPairSet> {
    let pairs: Vec<TrialPair> = pairs.into_iter().collect();
    let rows = matrix.row_count();
    if let Some(bad) = pairs.iter().find(|p| p.row_a >= rows || p.row_b >= rows) {
        return Err(Error::InvalidArgument(format!(
            "pair ({}, {}) references a row outside the {rows}-row matrix",
            bad.row_a, bad.row_b
        )));
    }
    let scored = par::map_chunks(&pairs, PAIR_BLOCK, |chunk| {
        chunk
            .iter()
            .map(|&pair| ScoredPair {
                pair,
                score: cosine_rows(matrix, pair.row_a, pair.row_b),
            })
            .collect()
    });
    Ok(ScoredPairSet {
        pairs: scored,
        scope,
        provenance: ScoringProvenance {
            kernel: KERNEL_ID,
            block_size: PAIR_BLOCK,
        },
    })
}

/// Strict upper triangle of the all-pairs cosine table, packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    n: usize,
    values: Vec<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn offset(&self, i: usize) -> usize {
        i * self.n - i * (i + 1) / 2
    }

    /// Score for `i < j`. Panics otherwise.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < j && j < self.n, "ScoreTable::get({i}, {j}) out of range");
        self.values[self.offset(i) + (j - i - 1)]
    }

    /// Score for any `i != j`.
    pub fn get_sym(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.get(i, j)
        } else {
            self.get(j, i)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// All-pairs cosine table, traversed in `block × block` tiles.
///
/// Each cell is computed by the same dot-product routine regardless of tiling,
/// so any block size yields a bitwise-identical table.
pub fn score_matrix(matrix: &EmbeddingMatrix, block: usize) -> Result<ScoreTable> {
    if block == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    let n = matrix.row_count();
    let mut values = vec![0.0f64; n * n.saturating_sub(1) / 2];

    // One mutable segment per row: row i holds columns i+1..n.
    let mut segments: Vec<(usize, &mut [f64])> = Vec::with_capacity(n);
    let mut rest: &mut [f64] = &mut values;
    for i in 0..n {
        let (seg, tail) = rest.split_at_mut(n - 1 - i);
        segments.push((i, seg));
        rest = tail;
    }
    let mut row_blocks: Vec<Vec<(usize, &mut [f64])>> = Vec::new();
    let mut it = segments.into_iter().peekable();
    while it.peek().is_some() {
        row_blocks.push(it.by_ref().take(block).collect());
    }

    par::for_each_mut(&mut row_blocks, |rows| {
        let Some(first) = rows.first().map(|r| r.0) else {
            return;
        };
        // Column tiles start at the block's first row; cells left of the diagonal are skipped.
        let mut col0 = first;
        while col0 < n {
            let col1 = (col0 + block).min(n);
            for (i, seg) in rows.iter_mut() {
                let i = *i;
                let a = matrix.row(i);
                let sq_a = matrix.sq_norm(i);
                for j in col0.max(i + 1)..col1 {
                    seg[j - i - 1] = cosine_from_parts(dot(a, matrix.row(j)), sq_a, matrix.sq_norm(j));
                }
            }
            col0 = col1;
        }
    });
    Ok(ScoreTable { n, values })
}

/// Writes `sample_id_a,sample_id_b,label,score` with scores to 9 significant digits.
pub fn write_scored_csv<W: Write>(out: W, dataset: &CohortDataset, scored: &ScoredPairSet) -> Result<()> {
    let index = RowIndex::new(dataset);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id_a", "sample_id_b", "label", "score"])?;
    for p in &scored.pairs {
        w.write_record([
            index.sample_id(p.pair.row_a),
            index.sample_id(p.pair.row_b),
            p.pair.label.as_str(),
            &sig_digits(p.score, 9),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scored pairs>", e))?;
    Ok(())
}

/// Reads the label and score columns back from a scored-pair dump.
pub fn read_scored_csv<R: Read>(input: R) -> Result<Vec<(f64, PairLabel)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("scored-pair file lacks a {name:?} column")))
    };
    let (label_col, score_col) = (col("label")?, col("score")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let label = PairLabel::parse(&rec[label_col]).ok_or_else(|| Error::MalformedLine {
            line,
            message: format!("bad label {:?}", &rec[label_col]),
        })?;
        let score: f64 = rec[score_col].parse().map_err(|_| Error::MalformedLine {
            line,
            message: format!("bad score {:?}", &rec[score_col]),
        })?;
        if !score.is_finite() {
            return Err(Error::MalformedLine {
                line,
                message: "non-finite score".into(),
            });
        }
        out.push((score, label));
    }
    Ok(out)
}
