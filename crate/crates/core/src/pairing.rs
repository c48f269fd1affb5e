//! Verification trial pairs: every unordered pair of samples within one
//! (dataset, language) scope, labeled by speaker identity.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CohortDataset, CohortStats, Language, SampleRecord, Task};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairScope {
    pub dataset_id: String,
    pub language: Language,
    /// Restricts the scope to one elicitation task when set.
    pub task: Option<Task>,
}

impl PairScope {
    pub fn new(dataset_id: impl Into<String>, language: Language) -> Self {
        PairScope {
            dataset_id: dataset_id.into(),
            language,
            task: None,
        }
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = Some(task);
        self
    }

    pub fn contains(&self, dataset_id: &str, r: &SampleRecord) -> bool {
        dataset_id == self.dataset_id && r.language == self.language && self.task.is_none_or(|t| t == r.task)
    }
}

impl fmt::Display for PairScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset_id, self.language)?;
        if let Some(t) = self.task {
            write!(f, "/{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    SameSpeaker,
    DifferentSpeaker,
}

impl PairLabel {
    pub fn is_same(self) -> bool {
        self == PairLabel::SameSpeaker
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::SameSpeaker => "same_speaker",
            PairLabel::DifferentSpeaker => "different_speaker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same_speaker" => Some(PairLabel::SameSpeaker),
            "different_speaker" => Some(PairLabel::DifferentSpeaker),
            _ => None,
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unordered pair of matrix rows with `row_a < row_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialPair {
    pub row_a: usize,
    pub row_b: usize,
    pub label: PairLabel,
}

/// Closed-form pair counts for a cohort with per-speaker sample counts `n_i`
/// and `N` total samples: `Σ C(n_i, 2)` positives and `½ Σ n_i (N − n_i)` negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPlan {
    pub positive_count: u64,
    pub negative_count: u64,
    pub scope: Option<PairScope>,
}

impl PairPlan {
    pub fn total(&self) -> u64 {
        self.positive_count + self.negative_count
    }
}

pub fn plan_pairs(stats: &CohortStats) -> Result<PairPlan> {
    plan_from_counts(stats.samples_per_speaker.values().copied())
}

pub fn plan_from_counts(counts: impl IntoIterator<Item = u64>) -> Result<PairPlan> {
    let counts: Vec<u64> = counts.into_iter().collect();
    let total = counts
        .iter()
        .try_fold(0u64, |acc, &n| acc.checked_add(n))
        .ok_or(Error::PairCountOverflow(u64::MAX))?;
    let overflow = || Error::PairCountOverflow(total);
    let mut positives = 0u64;
    let mut cross = 0u64;
    for &n in &counts {
        let pos = n.checked_mul(n.saturating_sub(1)).ok_or_else(overflow)? / 2;
        positives = positives.checked_add(pos).ok_or_else(overflow)?;
        let c = n.checked_mul(total - n).ok_or_else(overflow)?;
        cross = cross.checked_add(c).ok_or_else(overflow)?;
    }
    // Every cross-speaker pair is counted once from each side.
    debug_assert_eq!(cross % 2, 0);
    Ok(PairPlan {
        positive_count: positives,
        negative_count: cross / 2,
        scope: None,
    })
}

/// Closed-form plan for the samples of `dataset` that fall in `scope`.
pub fn plan_scope(dataset: &CohortDataset, scope: &PairScope) -> Result<PairPlan> {
    let members = scope_members(dataset, scope);
    if members.is_empty() {
        return Err(Error::EmptyScope(scope.to_string()));
    }
    let mut plan = plan_pairs(&CohortStats::from_records(members))?;
    plan.scope = Some(scope.clone());
    Ok(plan)
}

fn scope_members<'a>(dataset: &'a CohortDataset, scope: &PairScope) -> Vec<&'a SampleRecord> {
    let mut members: Vec<&SampleRecord> = dataset
        .records()
        .iter()
        .filter(|r| scope.contains(dataset.dataset_id(), r))
        .collect();
    members.sort_by_key(|r| r.embedding_row);
    members
}

/// Lazily enumerates every unordered in-scope pair, ordered by `(row_a, row_b)`.
pub struct PairStream<'a> {
    members: Vec<&'a SampleRecord>,
    speaker: Vec<u32>,
    i: usize,
    j: usize,
    remaining: usize,
}

pub fn generate_pairs<'a>(dataset: &'a CohortDataset, scope: &PairScope) -> Result<PairStream<'a>> {
    let members = scope_members(dataset, scope);
    if members.is_empty() {
        return Err(Error::EmptyScope(scope.to_string()));
    }
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let speaker = members
        .iter()
        .map(|r| {
            let next = ids.len() as u32;
            *ids.entry(r.speaker_id.as_str()).or_insert(next)
        })
        .collect();
    let n = members.len();
    Ok(PairStream {
        members,
        speaker,
        i: 0,
        j: 1,
        remaining: n * (n - 1) / 2,
    })
}

impl<'a> PairStream<'a> {
    /// In-scope records, sorted by embedding row.
    pub fn members(&self) -> &[&'a SampleRecord] {
        &self.members
    }
}

impl Iterator for PairStream<'_> {
    type Item = TrialPair;

    fn next(&mut self) -> Option<TrialPair> {
        let n = self.members.len();
        if self.j >= n {
            self.i += 1;
            self.j = self.i + 1;
            if self.j >= n {
                return None;
            }
        }
        let (i, j) = (self.i, self.j);
        self.j += 1;
        self.remaining -= 1;
        let label = if self.speaker[i] == self.speaker[j] {
            PairLabel::SameSpeaker
        } else {
            PairLabel::DifferentSpeaker
        };
        Some(TrialPair {
            row_a: self.members[i].embedding_row,
            row_b: self.members[j].embedding_row,
            label,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for PairStream<'_> {}

/// Maps matrix rows back to sample ids for dump files.
pub struct RowIndex<'a> {
    ids: HashMap<usize, &'a str>,
}

impl<'a> RowIndex<'a> {
    pub fn new(dataset: &'a CohortDataset) -> Self {
        RowIndex {
            ids: dataset
                .records()
                .iter()
                .map(|r| (r.embedding_row, r.sample_id.as_str()))
                .collect(),
        }
    }

    pub fn sample_id(&self, row: usize) -> &'a str {
        self.ids.get(&row).copied().unwrap_or("")
    }
}

/// Writes `sample_id_a,sample_id_b,label` rows.
pub fn write_pairs_csv<W: Write>(
    out: W,
    dataset: &CohortDataset,
    pairs: impl IntoIterator<Item = TrialPair>,
) -> Result<()> {
    let index = RowIndex::new(dataset);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id_a", "sample_id_b", "label"])?;
    for p in pairs {
        w.write_record([index.sample_id(p.row_a), index.sample_id(p.row_b), p.label.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<pairs>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{basis_matrix, record};
    use crate::model::{bind_dataset, UnreferencedRows};
    use std::collections::HashSet;

    fn dataset(spec: &[(&str, &str)]) -> CohortDataset {
        let recs = spec
            .iter()
            .enumerate()
            .map(|(i, (spk, lang))| record(&format!("{spk}{i}"), spk, lang, i))
            .collect();
        bind_dataset(recs, basis_matrix(spec.len(), 4), "d", UnreferencedRows::Error)
            .unwrap()
            .0
    }

    fn en() -> PairScope {
        PairScope::new("d", "en".parse().unwrap())
    }

    #[test]
    fn plan_two_three_four() {
        let plan = plan_from_counts([2, 3, 4]).unwrap();
        // Brute force over 9 labeled samples.
        let spk: Vec<usize> = [0, 0, 1, 1, 1, 2, 2, 2, 2].to_vec();
        let (mut pos, mut neg) = (0, 0);
        for i in 0..9 {
            for j in i + 1..9 {
                if spk[i] == spk[j] {
                    pos += 1
                } else {
                    neg += 1
                }
            }
        }
        assert_eq!((pos, neg), (10, 26));
        assert_eq!((plan.positive_count, plan.negative_count, plan.total()), (10, 26, 36));
    }

    #[test]
    fn plan_degenerate_shapes() {
        let single = plan_from_counts([7]).unwrap();
        assert_eq!((single.positive_count, single.negative_count), (21, 0));
        let singletons = plan_from_counts([1; 6]).unwrap();
        assert_eq!((singletons.positive_count, singletons.negative_count), (0, 15));
    }

    #[test]
    fn plan_overflow_is_reported() {
        let err = plan_from_counts([u64::MAX / 2, u64::MAX / 2]).unwrap_err();
        assert!(matches!(err, Error::PairCountOverflow(_)));
    }

    #[test]
    fn two_samples_same_speaker() {
        let ds = dataset(&[("A", "en"), ("A", "en")]);
        let pairs: Vec<_> = generate_pairs(&ds, &en()).unwrap().collect();
        assert_eq!(
            pairs,
            [TrialPair {
                row_a: 0,
                row_b: 1,
                label: PairLabel::SameSpeaker
            }]
        );
    }

    #[test]
    fn exhaustive_small_case() {
        let ds = dataset(&[("A", "en"), ("A", "en"), ("B", "en")]);
        let got: Vec<_> = generate_pairs(&ds, &en())
            .unwrap()
            .map(|p| (p.row_a, p.row_b, p.label))
            .collect();
        use PairLabel::*;
        assert_eq!(
            got,
            [(0, 1, SameSpeaker), (0, 2, DifferentSpeaker), (1, 2, DifferentSpeaker)]
        );
    }

    #[test]
    fn language_scope_never_crosses() {
        let ds = dataset(&[("A", "de"), ("B", "es"), ("A", "de"), ("C", "de"), ("D", "es")]);
        let scope = PairScope::new("d", "de".parse().unwrap());
        let pairs: Vec<_> = generate_pairs(&ds, &scope).unwrap().collect();
        let de_rows: HashSet<usize> = [0, 2, 3].into();
        assert_eq!(pairs.len(), 3);
        assert!(pairs
            .iter()
            .all(|p| de_rows.contains(&p.row_a) && de_rows.contains(&p.row_b)));
        let plan = plan_scope(&ds, &scope).unwrap();
        assert_eq!((plan.positive_count, plan.negative_count), (1, 2));
    }

    #[test]
    fn empty_scope_errors() {
        let ds = dataset(&[("A", "en")]);
        let scope = PairScope::new("d", "ar".parse().unwrap());
        assert!(matches!(generate_pairs(&ds, &scope), Err(Error::EmptyScope(_))));
        let other = PairScope::new("other", "en".parse().unwrap());
        assert!(generate_pairs(&ds, &other).is_err());
        // A single sample is a valid scope with zero pairs.
        assert_eq!(generate_pairs(&ds, &en()).unwrap().count(), 0);
    }

    #[test]
    fn task_filter() {
        let mut recs: Vec<_> = (0..4).map(|i| record(&format!("s{i}"), "A", "en", i)).collect();
        recs[1].task = Task::Journaling;
        recs[3].task = Task::Journaling;
        let ds = bind_dataset(recs, basis_matrix(4, 4), "d", UnreferencedRows::Error)
            .unwrap()
            .0;
        let pairs: Vec<_> = generate_pairs(&ds, &en().with_task(Task::Journaling))
            .unwrap()
            .collect();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].row_a, pairs[0].row_b), (1, 3));
    }

    #[test]
    fn pair_csv_columns() {
        let ds = dataset(&[("A", "en"), ("B", "en")]);
        let mut buf = Vec::new();
        write_pairs_csv(&mut buf, &ds, generate_pairs(&ds, &en()).unwrap()).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "sample_id_a,sample_id_b,label\nA0,B1,different_speaker\n"
        );
    }
}
