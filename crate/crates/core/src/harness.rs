//! Stratified benchmarks: split cohorts by language / task / model tag,
//! optionally balance speaker counts, and run the pair → score → EER pipeline
//! for every stratum.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fmt::sig_digits;
use crate::metrics::{format_tpr_tnr, MetricsRow, ThresholdPolicy};
use crate::model::{cohort_stats, CohortDataset, Language, MeanStd, Task};
use crate::pairing::{generate_pairs, plan_scope, PairScope};
use crate::par;
use crate::scoring::score_pairs;

/// Algorithm behind [`balanced_subsample`], recorded in reports.
pub const SUBSAMPLER_ID: &str = "ChaCha8Rng::seed_from_u64 + rand::seq::index::sample over sorted speaker ids";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrataKey {
    Language,
    Task,
    ModelTag,
}

impl FromStr for StrataKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "language" => Ok(StrataKey::Language),
            "task" => Ok(StrataKey::Task),
            "model_tag" | "model-tag" | "model" => Ok(StrataKey::ModelTag),
            _ => Err(Error::InvalidArgument(format!("unknown stratification key {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumLabel {
    pub dataset_id: String,
    pub language: Option<Language>,
    pub task: Option<Task>,
    pub model_tag: Option<String>,
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dataset_id)?;
        if let Some(l) = &self.language {
            write!(f, "/{l}")?;
        }
        if let Some(t) = self.task {
            write!(f, "/{t}")?;
        }
        if let Some(m) = &self.model_tag {
            write!(f, "/{m}")?;
        }
        Ok(())
    }
}

const UNTAGGED: &str = "untagged";

/// Disjoint cover of the records by key tuple, ordered by label. Empty strata never appear.
pub fn stratify(dataset: &CohortDataset, keys: &[StrataKey]) -> Result<Vec<(StratumLabel, CohortDataset)>> {
    if keys.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one stratification key is required".into(),
        ));
    }
    let mut groups: BTreeMap<StratumLabel, Vec<_>> = BTreeMap::new();
    for r in dataset.records() {
        let label = StratumLabel {
            dataset_id: dataset.dataset_id().to_string(),
            language: keys.contains(&StrataKey::Language).then(|| r.language.clone()),
            task: keys.contains(&StrataKey::Task).then_some(r.task),
            model_tag: keys
                .contains(&StrataKey::ModelTag)
                .then(|| r.model_tag.clone().unwrap_or_else(|| UNTAGGED.into())),
        };
        groups.entry(label).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(label, records)| Ok((label, dataset.subset(records)?)))
        .collect()
}

/// Keeps every sample of `target_speakers` speakers drawn uniformly without
/// replacement. Deterministic for a fixed seed and speaker set.
pub fn balanced_subsample(dataset: &CohortDataset, target_speakers: usize, seed: u64) -> Result<CohortDataset> {
    let speakers = dataset.speakers();
    if target_speakers == 0 || target_speakers > speakers.len() {
        return Err(Error::TooFewSpeakers {
            needed: target_speakers,
            available: speakers.len(),
        });
    }
    if target_speakers == speakers.len() {
        return Ok(dataset.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: HashSet<&str> = rand::seq::index::sample(&mut rng, speakers.len(), target_speakers)
        .into_iter()
        .map(|i| speakers[i])
        .collect();
    let records = dataset
        .records()
        .iter()
        .filter(|r| chosen.contains(r.speaker_id.as_str()))
        .cloned()
        .collect();
    dataset.subset(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Balance {
    pub target_speakers: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Language is always split on, since pairs never cross languages.
    pub strata_keys: Vec<StrataKey>,
    pub balance: Option<Balance>,
    pub threshold_policy: ThresholdPolicy,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            strata_keys: vec![StrataKey::Language],
            balance: None,
            threshold_policy: ThresholdPolicy::EerPoint,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.balance {
            if b.target_speakers < 2 {
                return Err(Error::InvalidArgument(format!(
                    "balanced runs need at least 2 speakers, got {}",
                    b.target_speakers
                )));
            }
        }
        Ok(())
    }

    fn keys(&self) -> Vec<StrataKey> {
        let mut keys = self.strata_keys.clone();
        keys.push(StrataKey::Language);
        keys.sort();
        keys.dedup();
        keys
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StratumOutcome {
    Defined {
        metrics: MetricsRow,
    },
    /// EER cannot be computed for this stratum; the reason is kept for the report.
    Undefined(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub label: StratumLabel,
    pub n_speakers: u64,
    pub n_samples: u64,
    pub avg_samples_per_speaker: MeanStd,
    pub n_pos: u64,
    pub n_neg: u64,
    pub outcome: StratumOutcome,
}

impl BenchmarkRow {
    pub fn metrics(&self) -> Option<&MetricsRow> {
        match &self.outcome {
            StratumOutcome::Defined { metrics } => Some(metrics),
            StratumOutcome::Undefined(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub keys: Vec<StrataKey>,
    pub balance: Option<Balance>,
    pub threshold_policy: ThresholdPolicy,
    /// Proximity of every pair of reported languages found in the built-in table.
    pub proximity_annotations: Vec<(Language, Language, f64)>,
}

fn evaluate_stratum(label: StratumLabel, ds: &CohortDataset, policy: ThresholdPolicy) -> Result<BenchmarkRow> {
    let stats = cohort_stats(ds);
    let language = label.language.clone().expect("language is always a stratum key");
    let scope = PairScope::new(ds.dataset_id(), language);
    let plan = plan_scope(ds, &scope)?;
    let mut row = BenchmarkRow {
        label,
        n_speakers: stats.speakers,
        n_samples: stats.samples,
        avg_samples_per_speaker: stats.avg_samples_per_speaker,
        n_pos: plan.positive_count,
        n_neg: plan.negative_count,
        outcome: StratumOutcome::Undefined(String::new()),
    };
    if stats.speakers < 2 || plan.positive_count == 0 {
        row.outcome = StratumOutcome::Undefined(format!(
            "{} speakers, {} same-speaker pairs",
            stats.speakers, plan.positive_count
        ));
        return Ok(row);
    }
    let scored = score_pairs(generate_pairs(ds, &scope)?, ds.matrix(), Some(scope))?;
    let (pos, neg) = scored.counts();
    if (pos, neg) != (plan.positive_count, plan.negative_count) {
        return Err(Error::InvalidArgument(format!(
            "stratum {}: generated {pos}/{neg} pairs, closed form says {}/{}",
            row.label, plan.positive_count, plan.negative_count
        )));
    }
    row.outcome = match MetricsRow::compute(row.label.to_string(), scored.pairs(), policy) {
        Ok(metrics) => StratumOutcome::Defined { metrics },
        Err(e @ (Error::UndefinedMetric(_) | Error::TargetUnreachable { .. })) => {
            StratumOutcome::Undefined(e.to_string())
        }
        Err(e) => return Err(e),
    };
    Ok(row)
}

pub fn run_benchmark(datasets: &[CohortDataset], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let keys = config.keys();
    let mut strata: Vec<(StratumLabel, CohortDataset)> = Vec::new();
    let mut failed: Vec<BenchmarkRow> = Vec::new();
    for ds in datasets {
        for (lang_label, lang_ds) in stratify(ds, &[StrataKey::Language])? {
            let lang_ds = match config.balance {
                Some(b) => match balanced_subsample(&lang_ds, b.target_speakers, b.seed) {
                    Ok(sub) => sub,
                    Err(e @ Error::TooFewSpeakers { .. }) => {
                        let stats = cohort_stats(&lang_ds);
                        failed.push(BenchmarkRow {
                            label: lang_label,
                            n_speakers: stats.speakers,
                            n_samples: stats.samples,
                            avg_samples_per_speaker: stats.avg_samples_per_speaker,
                            n_pos: 0,
                            n_neg: 0,
                            outcome: StratumOutcome::Undefined(e.to_string()),
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                },
                None => lang_ds,
            };
            strata.extend(stratify(&lang_ds, &keys)?);
        }
    }
    let policy = config.threshold_policy;
    let evaluated = par::map(&strata, |(label, ds)| evaluate_stratum(label.clone(), ds, policy));
    let mut rows = evaluated.into_iter().collect::<Result<Vec<_>>>()?;
    rows.extend(failed);
    rows.sort_by(|a, b| a.label.cmp(&b.label));

    let mut langs: Vec<Language> = rows.iter().filter_map(|r| r.label.language.clone()).collect();
    langs.sort();
    langs.dedup();
    let mut proximity_annotations = Vec::new();
    for (i, a) in langs.iter().enumerate() {
        for b in &langs[i + 1..] {
            if let Ok(p) = language_proximity(a.as_str(), b.as_str()) {
                proximity_annotations.push((a.clone(), b.clone(), p));
            }
        }
    }
    Ok(BenchmarkReport {
        rows,
        keys,
        balance: config.balance,
        threshold_policy: policy,
        proximity_annotations,
    })
}

impl BenchmarkReport {
    pub fn all_undefined(&self) -> bool {
        self.rows.iter().all(|r| r.metrics().is_none())
    }

    fn label_columns(&self) -> Vec<&'static str> {
        let mut cols = vec!["dataset", "language"];
        if self.keys.contains(&StrataKey::Task) {
            cols.push("task");
        }
        if self.keys.contains(&StrataKey::ModelTag) {
            cols.push("model_tag");
        }
        cols
    }

    fn label_values(&self, l: &StratumLabel) -> Vec<String> {
        let mut v = vec![
            l.dataset_id.clone(),
            l.language.as_ref().map(|l| l.to_string()).unwrap_or_default(),
        ];
        if self.keys.contains(&StrataKey::Task) {
            v.push(l.task.map(|t| t.to_string()).unwrap_or_default());
        }
        if self.keys.contains(&StrataKey::ModelTag) {
            v.push(l.model_tag.clone().unwrap_or_default());
        }
        v
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.label_columns();
        header.extend([
            "n_speakers",
            "n_samples",
            "avg_samples_per_speaker",
            "n_pos",
            "n_neg",
            "eer_pct",
            "threshold",
            "tpr",
            "tnr",
        ]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = self.label_values(&r.label);
            rec.extend([
                r.n_speakers.to_string(),
                r.n_samples.to_string(),
                r.avg_samples_per_speaker.display(2),
                r.n_pos.to_string(),
                r.n_neg.to_string(),
            ]);
            match r.metrics() {
                Some(m) => rec.extend([
                    format!("{:.2}", m.eer.eer * 100.0),
                    sig_digits(m.threshold, 9),
                    format!("{:.3}", m.tpr),
                    format!("{:.3}", m.tnr),
                ]),
                None => rec.extend(["undefined".into(), String::new(), String::new(), String::new()]),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<benchmark report>", e))?;
        Ok(())
    }

    /// Aligned plain-text table with a `TPR | TNR` column.
    pub fn to_text(&self) -> String {
        let header = [
            "Stratum",
            "EER(%)",
            "TPR | TNR",
            "Threshold",
            "#Spkrs",
            "#Smpls",
            "Avg #Smpls per Spkr",
        ];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let (eer, rates, thr) = match r.metrics() {
                Some(m) => (
                    format!("{:.2}", m.eer.eer * 100.0),
                    format_tpr_tnr(m.tpr, m.tnr),
                    format!("{:.4}", m.threshold),
                ),
                None => ("undefined".into(), "-".into(), "-".into()),
            };
            table.push(vec![
                r.label.to_string(),
                eer,
                rates,
                thr,
                r.n_speakers.to_string(),
                r.n_samples.to_string(),
                r.avg_samples_per_speaker.display(2).replace('±', " ± "),
            ]);
        }
        let mut out = align(&table);
        if let Some(b) = self.balance {
            out.push_str(&format!(
                "\nbalanced: {} speakers per language, seed {} ({SUBSAMPLER_ID})\n",
                b.target_speakers, b.seed
            ));
        }
        if !self.proximity_annotations.is_empty() {
            out.push_str("\nlanguage proximity (lower is closer):\n");
            for (a, b, p) in &self.proximity_annotations {
                out.push_str(&format!("  {a}-{b}: {p:.1}\n"));
            }
        }
        out
    }

    /// EER(%) with one row per model tag (or dataset when untagged) and one
    /// column per language.
    pub fn to_pivot_text(&self) -> String {
        let mut langs: Vec<String> = Vec::new();
        let mut cells: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for r in &self.rows {
            let Some(lang) = r.label.language.as_ref().map(|l| l.to_string()) else {
                continue;
            };
            if !langs.contains(&lang) {
                langs.push(lang.clone());
            }
            let row_key = r.label.model_tag.clone().unwrap_or_else(|| r.label.dataset_id.clone());
            let value = r
                .metrics()
                .map(|m| format!("{:.2}", m.eer.eer * 100.0))
                .unwrap_or_else(|| "undefined".into());
            let entry = cells.entry(row_key).or_default();
            // Several strata per (row, language) happen when splitting by task too.
            entry
                .entry(lang)
                .and_modify(|v| {
                    v.push_str(" / ");
                    v.push_str(&value);
                })
                .or_insert(value);
        }
        langs.sort();
        let mut table = vec![std::iter::once("Model".to_string())
            .chain(langs.iter().map(|l| format!("{l} EER(%)")))
            .collect::<Vec<_>>()];
        for (row, vals) in &cells {
            let mut line = vec![row.clone()];
            line.extend(langs.iter().map(|l| vals.get(l).cloned().unwrap_or_else(|| "-".into())));
            table.push(line);
        }
        align(&table)
    }
}

fn align(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            table
                .iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}

/// Lexical distance between the built-in languages (lower is closer).
const PROXIMITY: [(&str, &str, f64); 10] = [
    ("en", "de", 31.3),
    ("en", "da", 24.6),
    ("en", "es", 59.3),
    ("en", "ar", 85.5),
    ("de", "da", 28.3),
    ("de", "es", 56.8),
    ("de", "ar", 76.3),
    ("da", "es", 51.4),
    ("da", "ar", 84.9),
    ("es", "ar", 76.6),
];

pub const PROXIMITY_LANGUAGES: [&str; 5] = ["en", "de", "da", "es", "ar"];

/// Symmetric lookup in the built-in proximity table; zero on the diagonal.
pub fn language_proximity(l1: &str, l2: &str) -> Result<f64> {
    for l in [l1, l2] {
        if !PROXIMITY_LANGUAGES.contains(&l) {
            return Err(Error::InvalidArgument(format!("no proximity data for language {l:?}")));
        }
    }
    if l1 == l2 {
        return Ok(0.0);
    }
    Ok(PROXIMITY
        .iter()
        .find(|(a, b, _)| (*a == l1 && *b == l2) || (*a == l2 && *b == l1))
        .map(|p| p.2)
        .expect("table covers every pair"))
}
