//! Duplicate-enrollment detection.
//!
//! Every pair of speaker ids in a scope is compared through all of their
//! cross-sample cosine scores. A pair is *linked* when the median score is
//! above the threshold and at least `min_frac` of the individual scores are.
//! Connected components of the link graph are reported as suspected
//! duplicate clusters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;

use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::fmt::sig_digits;
use crate::model::{sq_norm, CohortDataset, Language, SampleRecord};
use crate::par;
use crate::scoring::{cosine_from_parts, dot, score_matrix};

const TABLE_BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkScope {
    /// Compare speakers only within one language, like verification pairs.
    #[default]
    WithinLanguage,
    /// Compare across languages. Experimental.
    CrossLanguage,
}

impl fmt::Display for LinkScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkScope::WithinLanguage => "within_language",
            LinkScope::CrossLanguage => "cross_language(experimental)",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPolicy {
    pub threshold: f64,
    pub min_frac: f64,
    pub scope: LinkScope,
}

impl LinkPolicy {
    pub const DEFAULT_MIN_FRAC: f64 = 0.5;

    pub fn new(threshold: f64, min_frac: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "threshold must be finite, got {threshold}"
            )));
        }
        if !(min_frac > 0.0 && min_frac <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "min_frac must lie in (0, 1], got {min_frac}"
            )));
        }
        Ok(LinkPolicy {
            threshold,
            min_frac,
            scope: LinkScope::WithinLanguage,
        })
    }

    pub fn cross_language(mut self) -> Self {
        self.scope = LinkScope::CrossLanguage;
        self
    }

    fn decide(&self, scores: &mut [f64]) -> (f64, f64, bool) {
        let above = scores.iter().filter(|&&s| s > self.threshold).count();
        let frac = above as f64 / scores.len() as f64;
        let med = median(scores);
        (med, frac, frac >= self.min_frac && med > self.threshold)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerLinkScore {
    pub speaker_a: String,
    pub speaker_b: String,
    pub median_score: f64,
    /// Fraction of the `pair_count` cross-sample scores above the threshold.
    pub frac_above: f64,
    pub pair_count: u64,
    pub linked: bool,
}

#[derive(Debug, Clone)]
pub struct SpeakerLinks {
    pub policy: LinkPolicy,
    /// Every speaker id that took part, sorted.
    pub speakers: Vec<String>,
    /// One entry per compared speaker pair, `speaker_a < speaker_b`.
    pub scores: Vec<SpeakerLinkScore>,
}

impl SpeakerLinks {
    pub fn linked(&self) -> impl Iterator<Item = &SpeakerLinkScore> {
        self.scores.iter().filter(|s| s.linked)
    }
}

fn group_by_speaker<'a>(records: &[&'a SampleRecord]) -> BTreeMap<&'a str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.speaker_id.as_str()).or_default().push(i);
    }
    groups
}

pub fn link_speakers(dataset: &CohortDataset, policy: LinkPolicy) -> Result<SpeakerLinks> {
    let scopes: Vec<Vec<&SampleRecord>> = match policy.scope {
        LinkScope::WithinLanguage => dataset
            .languages()
            .into_iter()
            .map(|l| dataset.records().iter().filter(|r| r.language == l).collect())
            .collect(),
        LinkScope::CrossLanguage => vec![dataset.records().iter().collect()],
    };
    let mut scores = Vec::new();
    for mut members in scopes {
        members.sort_by_key(|r| r.embedding_row);
        let rows: Vec<usize> = members.iter().map(|r| r.embedding_row).collect();
        let groups = group_by_speaker(&members);
        if groups.len() < 2 {
            continue;
        }
        let table = score_matrix(&dataset.matrix().select_rows(&rows), TABLE_BLOCK)?;
        let groups: Vec<(&str, Vec<usize>)> = groups.into_iter().collect();
        let mut jobs = Vec::new();
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                jobs.push((a, b));
            }
        }
        scores.extend(par::map(&jobs, |&(a, b)| {
            let (ida, sa) = &groups[a];
            let (idb, sb) = &groups[b];
            let mut values: Vec<f64> = Vec::with_capacity(sa.len() * sb.len());
            for &i in sa {
                for &j in sb {
                    values.push(table.get_sym(i, j));
                }
            }
            let (median_score, frac_above, linked) = policy.decide(&mut values);
            SpeakerLinkScore {
                speaker_a: ida.to_string(),
                speaker_b: idb.to_string(),
                median_score,
                frac_above,
                pair_count: values.len() as u64,
                linked,
            }
        }));
    }
    scores.sort_by(|x, y| (&x.speaker_a, &x.speaker_b).cmp(&(&y.speaker_a, &y.speaker_b)));
    Ok(SpeakerLinks {
        policy,
        speakers: dataset.speakers().into_iter().map(String::from).collect(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMember {
    pub speaker_id: String,
    /// Median of this speaker's per-pair median scores to the other members.
    pub median_score_to_cluster: f64,
    /// Cross-sample scores behind those medians.
    pub evidence_pairs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateCluster {
    pub members: Vec<ClusterMember>,
}

impl DuplicateCluster {
    pub fn speaker_ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.speaker_id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuplicateReport {
    pub clusters: Vec<DuplicateCluster>,
    pub policy: LinkPolicy,
    /// Speakers not in any cluster.
    pub unclustered: usize,
}

/// Connected components of the link graph; singletons are only counted.
pub fn find_duplicate_clusters(links: &SpeakerLinks) -> DuplicateReport {
    let index: HashMap<&str, usize> = links
        .speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut uf = UnionFind::<usize>::new(links.speakers.len());
    for l in links.linked() {
        uf.union(index[l.speaker_a.as_str()], index[l.speaker_b.as_str()]);
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..links.speakers.len() {
        components.entry(uf.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = components.into_values().filter(|c| c.len() >= 2).collect();
    clusters.sort();
    let unclustered = links.speakers.len() - clusters.iter().map(Vec::len).sum::<usize>();

    let clusters = clusters
        .into_iter()
        .map(|members| {
            let ids: Vec<&str> = members.iter().map(|&i| links.speakers[i].as_str()).collect();
            let members = ids
                .iter()
                .map(|&id| {
                    let mut medians = Vec::new();
                    let mut evidence = 0;
                    for s in &links.scores {
                        let other = if s.speaker_a == id {
                            &s.speaker_b
                        } else if s.speaker_b == id {
                            &s.speaker_a
                        } else {
                            continue;
                        };
                        if ids.contains(&other.as_str()) {
                            medians.push(s.median_score);
                            evidence += s.pair_count;
                        }
                    }
                    ClusterMember {
                        speaker_id: id.to_string(),
                        median_score_to_cluster: if medians.is_empty() {
                            f64::NAN
                        } else {
                            median(&mut medians)
                        },
                        evidence_pairs: evidence,
                    }
                })
                .collect();
            DuplicateCluster { members }
        })
        .collect();
    DuplicateReport {
        clusters,
        policy: links.policy,
        unclustered,
    }
}

impl DuplicateReport {
    pub fn summary(&self) -> String {
        format!(
            "# threshold={} min_frac={} scope={} clusters={} unclustered={}",
            sig_digits(self.policy.threshold, 9),
            self.policy.min_frac,
            self.policy.scope,
            self.clusters.len(),
            self.unclustered
        )
    }

    /// Summary comment line, then `cluster_id,speaker_id,median_score_to_cluster,evidence_pairs`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.summary()).map_err(|e| Error::io("<dedup report>", e))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster_id", "speaker_id", "median_score_to_cluster", "evidence_pairs"])?;
        for (cid, c) in self.clusters.iter().enumerate() {
            for m in &c.members {
                w.write_record([
                    cid.to_string(),
                    m.speaker_id.clone(),
                    sig_digits(m.median_score_to_cluster, 9),
                    m.evidence_pairs.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<dedup report>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentMatch {
    pub speaker_id: String,
    pub score: SpeakerLinkScore,
    pub matched: bool,
}

/// Scores candidate embeddings against every enrolled speaker (optionally
/// within one language), ranked by median score, best first.
pub fn verify_enrollment<V: AsRef<[f32]> + Sync>(
    candidate: &[V],
    dataset: &CohortDataset,
    policy: LinkPolicy,
    language: Option<&Language>,
) -> Result<Vec<EnrollmentMatch>> {
    if candidate.is_empty() {
        return Err(Error::InvalidArgument("candidate has no embeddings".into()));
    }
    let dim = dataset.matrix().dim();
    let mut cand_sq = Vec::with_capacity(candidate.len());
    for (index, v) in candidate.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimMismatch {
                left: v.len(),
                right: dim,
            });
        }
        let sq = sq_norm(v);
        if !(sq > 0.0 && sq.is_finite()) {
            return Err(Error::DegenerateVector { index });
        }
        cand_sq.push(sq);
    }
    let members: Vec<&SampleRecord> = dataset
        .records()
        .iter()
        .filter(|r| language.is_none_or(|l| &r.language == l))
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyScope(
            language.map_or_else(|| dataset.dataset_id().to_string(), |l| l.to_string()),
        ));
    }
    let groups: Vec<(&str, Vec<usize>)> = group_by_speaker(&members).into_iter().collect();
    let m = dataset.matrix();
    let mut ranked = par::map(&groups, |(id, idx)| {
        let mut values = Vec::with_capacity(idx.len() * candidate.len());
        for (c, &csq) in candidate.iter().zip(&cand_sq) {
            for &i in idx {
                let row = members[i].embedding_row;
                values.push(cosine_from_parts(dot(c.as_ref(), m.row(row)), csq, m.sq_norm(row)));
            }
        }
        let (median_score, frac_above, linked) = policy.decide(&mut values);
        EnrollmentMatch {
            speaker_id: id.to_string(),
            score: SpeakerLinkScore {
                speaker_a: "<candidate>".into(),
                speaker_b: id.to_string(),
                median_score,
                frac_above,
                pair_count: values.len() as u64,
                linked,
            },
            matched: linked,
        }
    });
    ranked.sort_by(|a, b| {
        b.score
            .median_score
            .total_cmp(&a.score.median_score)
            .then_with(|| a.speaker_id.cmp(&b.speaker_id))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::record;
    use crate::model::{bind_dataset, EmbeddingMatrix, UnreferencedRows};
    use crate::synth::{generate_cohort, SynthSpec};

    fn links_from(pairs: &[(&str, &str)], speakers: &[&str]) -> SpeakerLinks {
        SpeakerLinks {
            policy: LinkPolicy::new(0.5, 0.5).unwrap(),
            speakers: speakers.iter().map(|s| s.to_string()).collect(),
            scores: pairs
                .iter()
                .map(|(a, b)| SpeakerLinkScore {
                    speaker_a: a.to_string(),
                    speaker_b: b.to_string(),
                    median_score: 0.9,
                    frac_above: 1.0,
                    pair_count: 4,
                    linked: true,
                })
                .collect(),
        }
    }

    #[test]
    fn chain_forms_one_cluster() {
        let r = find_duplicate_clusters(&links_from(&[("A", "B"), ("B", "C")], &["A", "B", "C", "D"]));
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].speaker_ids(), ["A", "B", "C"]);
        assert_eq!(r.unclustered, 1);
        // A and C were never compared directly: only their link to B counts.
        assert_eq!(r.clusters[0].members[0].evidence_pairs, 4);
        assert_eq!(r.clusters[0].members[1].evidence_pairs, 8);
    }

    #[test]
    fn no_links() {
        let r = find_duplicate_clusters(&links_from(&[], &["A", "B", "C", "D", "E"]));
        assert!(r.clusters.is_empty());
        assert_eq!(r.unclustered, 5);
    }

    fn shared_row_dataset() -> CohortDataset {
        // X and Y each have one sample with the same embedding; Z is orthogonal.
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let recs = vec![
            record("x", "X", "en", 0),
            record("y", "Y", "en", 1),
            record("z", "Z", "en", 2),
        ];
        bind_dataset(recs, m, "d", UnreferencedRows::Error).unwrap().0
    }

    #[test]
    fn identical_rows_link_below_one() {
        let ds = shared_row_dataset();
        let links = link_speakers(&ds, LinkPolicy::new(0.999, 0.5).unwrap()).unwrap();
        let xy = links
            .scores
            .iter()
            .find(|s| s.speaker_a == "X" && s.speaker_b == "Y")
            .unwrap();
        assert_eq!((xy.median_score, xy.frac_above, xy.pair_count), (1.0, 1.0, 1));
        assert!(xy.linked);
        assert_eq!(links.linked().count(), 1);
    }

    #[test]
    fn threshold_above_one_never_links() {
        let ds = shared_row_dataset();
        let links = link_speakers(&ds, LinkPolicy::new(1.5, 0.1).unwrap()).unwrap();
        assert_eq!(links.linked().count(), 0);
        assert!(find_duplicate_clusters(&links).clusters.is_empty());
    }

    #[test]
    fn single_speaker_scope_is_empty() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let recs = vec![record("a", "A", "en", 0), record("b", "A", "en", 1)];
        let ds = bind_dataset(recs, m, "d", UnreferencedRows::Error).unwrap().0;
        assert!(link_speakers(&ds, LinkPolicy::new(0.0, 0.5).unwrap())
            .unwrap()
            .scores
            .is_empty());
    }

    #[test]
    fn languages_are_not_mixed_by_default() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [1.0, 0.0]]).unwrap();
        let recs = vec![record("a", "A", "en", 0), record("b", "B", "de", 1)];
        let ds = bind_dataset(recs, m, "d", UnreferencedRows::Error).unwrap().0;
        let p = LinkPolicy::new(0.5, 0.5).unwrap();
        assert!(link_speakers(&ds, p).unwrap().scores.is_empty());
        let cross = link_speakers(&ds, p.cross_language()).unwrap();
        assert_eq!(cross.linked().count(), 1);
        let report = find_duplicate_clusters(&cross);
        assert!(report.summary().contains("experimental"));
    }

    #[test]
    fn policy_validation() {
        assert!(LinkPolicy::new(0.5, 0.0).is_err());
        assert!(LinkPolicy::new(0.5, 1.2).is_err());
        assert!(LinkPolicy::new(f64::NAN, 0.5).is_err());
        assert!(LinkPolicy::new(0.5, 1.0).is_ok());
    }

    #[test]
    fn monotone_in_threshold_and_min_frac() {
        let mut spec = SynthSpec::new(12, 4.0, 24, 0.3, 3);
        spec.duplicate_injections = 2;
        let ds = generate_cohort(&spec).unwrap().dataset;
        let mut prev: Option<Vec<bool>> = None;
        for t in [-0.2, 0.0, 0.1, 0.2, 0.4, 0.8] {
            let flags: Vec<bool> = link_speakers(&ds, LinkPolicy::new(t, 0.5).unwrap())
                .unwrap()
                .scores
                .iter()
                .map(|s| s.linked)
                .collect();
            if let Some(p) = &prev {
                assert!(flags.iter().zip(p).all(|(now, before)| !now || *before));
            }
            prev = Some(flags);
        }
        let mut prev: Option<Vec<bool>> = None;
        for f in [0.1, 0.3, 0.5, 0.9, 1.0] {
            let flags: Vec<bool> = link_speakers(&ds, LinkPolicy::new(0.1, f).unwrap())
                .unwrap()
                .scores
                .iter()
                .map(|s| s.linked)
                .collect();
            if let Some(p) = &prev {
                assert!(flags.iter().zip(p).all(|(now, before)| !now || *before));
            }
            prev = Some(flags);
        }
    }

    #[test]
    fn enrollment_copies_rank_first() {
        let spec = SynthSpec::new(6, 3.0, 16, 0.2, 5);
        let ds = generate_cohort(&spec).unwrap().dataset;
        let target = "spk0003";
        let rows: Vec<Vec<f32>> = ds
            .records()
            .iter()
            .filter(|r| r.speaker_id == target)
            .map(|r| ds.embedding(r).to_vec())
            .collect();
        let ranked = verify_enrollment(&rows, &ds, LinkPolicy::new(0.5, 0.5).unwrap(), None).unwrap();
        assert_eq!(ranked[0].speaker_id, target);
        assert!(ranked[0].matched);
        assert_eq!(ranked.len(), 6);
    }

    #[test]
    fn enrollment_orthogonal_candidate() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let recs = vec![record("a", "A", "en", 0), record("b", "B", "en", 1)];
        let ds = bind_dataset(recs, m, "d", UnreferencedRows::Error).unwrap().0;
        let ranked = verify_enrollment(&[[0.0f32, 0.0, 2.0]], &ds, LinkPolicy::new(0.5, 0.5).unwrap(), None).unwrap();
        assert!(ranked.iter().all(|m| !m.matched && m.score.median_score.abs() < 1e-12));
        assert!(matches!(
            verify_enrollment(&[[1.0f32, 0.0]], &ds, LinkPolicy::new(0.5, 0.5).unwrap(), None),
            Err(Error::DimMismatch { .. })
        ));
        let ar: Language = "ar".parse().unwrap();
        assert!(matches!(
            verify_enrollment(
                &[[1.0f32, 0.0, 0.0]],
                &ds,
                LinkPolicy::new(0.5, 0.5).unwrap(),
                Some(&ar)
            ),
            Err(Error::EmptyScope(_))
        ));
    }

    #[test]
    fn report_csv_layout() {
        let r = find_duplicate_clusters(&links_from(&[("A", "B")], &["A", "B", "C"]));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# threshold=0.5 min_frac=0.5 scope=within_language clusters=1 unclustered=1\n\
             cluster_id,speaker_id,median_score_to_cluster,evidence_pairs\n0,A,0.9,4\n0,B,0.9,4\n"
        );
    }
}
