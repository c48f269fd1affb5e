//! Domain types: the embedding matrix, per-sample metadata and the dataset
//! that binds the two together.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of speaker embeddings.
///
/// Rows are guaranteed finite with a strictly positive norm. Squared norms are
/// computed once at construction (in `f64`) and reused by every scorer.
#[derive(Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    sq_norms: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::RaggedMatrix { len: data.len(), dim });
        }
        let mut sq_norms = Vec::with_capacity(data.len() / dim);
        for (row, values) in data.chunks_exact(dim).enumerate() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row });
            }
            let sq = sq_norm(values);
            if sq <= 0.0 {
                return Err(Error::ZeroNorm { row });
            }
            sq_norms.push(sq);
        }
        Ok(EmbeddingMatrix { dim, data, sq_norms })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    left: dim,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn row_count(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Squared Euclidean norm of row `i`, accumulated in `f64`.
    pub fn sq_norm(&self, i: usize) -> f64 {
        self.sq_norms[i]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies the selected rows, in the given order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut sq_norms = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            sq_norms.push(self.sq_norms[r]);
        }
        EmbeddingMatrix {
            dim: self.dim,
            data,
            sq_norms,
        }
    }
}

impl fmt::Debug for EmbeddingMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingMatrix")
            .field("row_count", &self.row_count())
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

pub(crate) fn sq_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
}

/// Lowercase two-letter language code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Language(String);

impl Language {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() == 2 && s.bytes().all(|b| b.is_ascii_lowercase()) {
            Ok(Language(s.to_owned()))
        } else {
            Err(Error::InvalidArgument(format!(
                "language must be a lowercase two-letter code, got {s:?}"
            )))
        }
    }
}

impl TryFrom<String> for Language {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Language> for String {
    fn from(l: Language) -> String {
        l.0
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Elicitation task a recording was collected under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    PictureDescription,
    PhonemicFluency,
    SemanticFluency,
    ParagraphReading,
    ParagraphRecall,
    Journaling,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::PictureDescription,
        Task::PhonemicFluency,
        Task::SemanticFluency,
        Task::ParagraphReading,
        Task::ParagraphRecall,
        Task::Journaling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::PictureDescription => "picture_description",
            Task::PhonemicFluency => "phonemic_fluency",
            Task::SemanticFluency => "semantic_fluency",
            Task::ParagraphReading => "paragraph_reading",
            Task::ParagraphRecall => "paragraph_recall",
            Task::Journaling => "journaling",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown task {s:?}")))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Metadata for one recording, pointing at its row in the embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub speaker_id: String,
    pub language: Language,
    pub task: Task,
    pub session_index: u32,
    pub audio_duration_sec: f64,
    pub speech_duration_sec: f64,
    pub embedding_row: usize,
    /// Which extractor produced the embedding. Absent for hand-made manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
}

impl SampleRecord {
    /// Checks the per-record invariants, returning a human-readable reason.
    pub(crate) fn check(&self) -> std::result::Result<(), String> {
        if self.sample_id.is_empty() {
            return Err("empty sample_id".into());
        }
        if self.speaker_id.is_empty() {
            return Err("empty speaker_id".into());
        }
        for (name, v) in [
            ("audio_duration_sec", self.audio_duration_sec),
            ("speech_duration_sec", self.speech_duration_sec),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if self.speech_duration_sec > self.audio_duration_sec {
            return Err(format!(
                "speech_duration_sec {} exceeds audio_duration_sec {}",
                self.speech_duration_sec, self.audio_duration_sec
            ));
        }
        Ok(())
    }
}

/// What to do with matrix rows that no record references.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnreferencedRows {
    #[default]
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BindWarning {
    UnreferencedRows { count: usize, first: usize },
}

impl fmt::Display for BindWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BindWarning::UnreferencedRows { count, first } => {
                write!(f, "{count} embedding rows are never referenced (first: row {first})")
            }
        }
    }
}

/// Sample records bound to the embedding matrix they index into.
///
/// Sub-datasets produced by stratification or subsampling share the parent's
/// matrix through an `Arc`.
#[derive(Debug, Clone)]
pub struct CohortDataset {
    dataset_id: String,
    records: Vec<SampleRecord>,
    matrix: Arc<EmbeddingMatrix>,
}

impl PartialEq for CohortDataset {
    fn eq(&self, other: &Self) -> bool {
        self.dataset_id == other.dataset_id
            && self.records == other.records
            && (Arc::ptr_eq(&self.matrix, &other.matrix) || self.matrix == other.matrix)
    }
}

/// Validates `records` against `matrix` and binds them.
pub fn bind_dataset(
    records: Vec<SampleRecord>,
    matrix: impl Into<Arc<EmbeddingMatrix>>,
    dataset_id: impl Into<String>,
    unreferenced: UnreferencedRows,
) -> Result<(CohortDataset, Vec<BindWarning>)> {
    let matrix = matrix.into();
    let dataset_id = dataset_id.into();
    let (dataset, unused) = CohortDataset::bind_inner(dataset_id, records, matrix)?;
    let mut warnings = Vec::new();
    if let Some((count, first)) = unused {
        match unreferenced {
            UnreferencedRows::Warn => warnings.push(BindWarning::UnreferencedRows { count, first }),
            UnreferencedRows::Error => return Err(Error::RowsUnreferenced { count, first }),
        }
    }
    Ok((dataset, warnings))
}

impl CohortDataset {
    fn bind_inner(
        dataset_id: String,
        records: Vec<SampleRecord>,
        matrix: Arc<EmbeddingMatrix>,
    ) -> Result<(Self, Option<(usize, usize)>)> {
        if records.is_empty() {
            return Err(Error::EmptyDataset(dataset_id));
        }
        let row_count = matrix.row_count();
        let mut owner: Vec<Option<usize>> = vec![None; row_count];
        let mut ids: HashMap<&str, ()> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.check().map_err(|message| Error::InvalidSample {
                sample_id: r.sample_id.clone(),
                message,
            })?;
            if ids.insert(&r.sample_id, ()).is_some() {
                return Err(Error::InvalidSample {
                    sample_id: r.sample_id.clone(),
                    message: "duplicate sample_id".into(),
                });
            }
            if r.embedding_row >= row_count {
                return Err(Error::RowOutOfRange {
                    sample_id: r.sample_id.clone(),
                    row: r.embedding_row,
                    row_count,
                });
            }
            if let Some(prev) = owner[r.embedding_row] {
                return Err(Error::RowReferencedTwice {
                    row: r.embedding_row,
                    first: records[prev].sample_id.clone(),
                    second: r.sample_id.clone(),
                });
            }
            owner[r.embedding_row] = Some(i);
        }
        let unused = owner.iter().filter(|o| o.is_none()).count();
        let first_unused = owner.iter().position(Option::is_none);
        let ds = CohortDataset {
            dataset_id,
            records,
            matrix,
        };
        Ok((ds, first_unused.map(|first| (unused, first))))
    }

    /// Builds a dataset over a subset of this one's records, sharing the matrix.
    pub(crate) fn subset(&self, records: Vec<SampleRecord>) -> Result<CohortDataset> {
        if records.is_empty() {
            return Err(Error::EmptyDataset(self.dataset_id.clone()));
        }
        Ok(CohortDataset {
            dataset_id: self.dataset_id.clone(),
            records,
            matrix: Arc::clone(&self.matrix),
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn shared_matrix(&self) -> Arc<EmbeddingMatrix> {
        Arc::clone(&self.matrix)
    }

    pub fn embedding(&self, record: &SampleRecord) -> &[f32] {
        self.matrix.row(record.embedding_row)
    }

    /// Distinct languages present, sorted.
    pub fn languages(&self) -> Vec<Language> {
        let mut v: Vec<Language> = self.records.iter().map(|r| r.language.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Distinct speaker ids, sorted.
    pub fn speakers(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.records.iter().map(|r| r.speaker_id.as_str()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Mean with population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> MeanStd {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }

    /// Renders as `mean±std` with the given number of decimals, e.g. `10.7±7.0`.
    pub fn display(&self, decimals: usize) -> String {
        format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
    }
}

/// Descriptive statistics of a cohort: speaker count, per-speaker sample
/// counts, total samples and average durations.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortStats {
    /// Number of distinct speakers.
    pub speakers: u64,
    /// Samples per speaker, keyed by speaker id.
    pub samples_per_speaker: BTreeMap<String, u64>,
    /// Total number of samples.
    pub samples: u64,
    pub avg_samples_per_speaker: MeanStd,
    pub avg_audio_duration_sec: MeanStd,
    pub avg_speech_duration_sec: MeanStd,
}

impl CohortStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SampleRecord>) -> CohortStats {
        let mut per: BTreeMap<String, u64> = BTreeMap::new();
        let mut audio = Vec::new();
        let mut speech = Vec::new();
        for r in records {
            *per.entry(r.speaker_id.clone()).or_default() += 1;
            audio.push(r.audio_duration_sec);
            speech.push(r.speech_duration_sec);
        }
        Self::assemble(per, audio, speech)
    }

    /// Stats for bare per-speaker counts (durations reported as zero).
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> CohortStats {
        Self::assemble(counts.into_iter().collect(), Vec::new(), Vec::new())
    }

    fn assemble(per: BTreeMap<String, u64>, audio: Vec<f64>, speech: Vec<f64>) -> CohortStats {
        let samples = per.values().sum();
        // Averaging in sorted speaker order keeps the result independent of record order.
        let mut audio = audio;
        let mut speech = speech;
        audio.sort_by(f64::total_cmp);
        speech.sort_by(f64::total_cmp);
        CohortStats {
            speakers: per.len() as u64,
            avg_samples_per_speaker: MeanStd::of(per.values().map(|&n| n as f64)),
            samples,
            samples_per_speaker: per,
            avg_audio_duration_sec: MeanStd::of(audio),
            avg_speech_duration_sec: MeanStd::of(speech),
        }
    }
}

pub fn cohort_stats(dataset: &CohortDataset) -> CohortStats {
    let stats = CohortStats::from_records(dataset.records());
    debug_assert_eq!(stats.samples as usize, dataset.records().len());
    stats
}
