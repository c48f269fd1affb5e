//! wasm-bindgen front for the browser demo. Every export returns a JSON string
//! so the page only needs `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use cohortguard::dedup::{find_duplicate_clusters, link_speakers, LinkPolicy};
use cohortguard::metrics::{det_curve, eer, rates_at_threshold, DetCurve};
use cohortguard::synth::{generate_cohort, SynthCohort, SynthSpec};
use cohortguard::{generate_pairs, score_pairs, CohortDataset, Error, Language, PairScope, ScoredPair};

const DET_POINTS: usize = 64;
const HIST_BINS: usize = 40;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Serialize, Debug)]
struct Histogram {
    lo: f64,
    hi: f64,
    same: Vec<u32>,
    different: Vec<u32>,
}

/// Score counts per class over `[-1, 1]`.
fn histogram(scored: &[ScoredPair], bins: usize) -> Histogram {
    let mut h = Histogram {
        lo: -1.0,
        hi: 1.0,
        same: vec![0; bins],
        different: vec![0; bins],
    };
    for s in scored {
        let b = (((s.score + 1.0) / 2.0) * bins as f64)
            .floor()
            .clamp(0.0, (bins - 1) as f64) as usize;
        if s.pair.label.is_same() {
            h.same[b] += 1;
        } else {
            h.different[b] += 1;
        }
    }
    h
}

#[derive(Serialize, Debug)]
struct Curve {
    fpr: Vec<f64>,
    fnr: Vec<f64>,
}

impl From<DetCurve> for Curve {
    fn from(c: DetCurve) -> Self {
        Curve {
            fpr: c.points.iter().map(|p| p.fpr).collect(),
            fnr: c.points.iter().map(|p| p.fnr).collect(),
        }
    }
}

fn en() -> Language {
    "en".parse().expect("valid code")
}

fn score_all(ds: &CohortDataset) -> Result<Vec<ScoredPair>, Error> {
    let scope = PairScope::new(ds.dataset_id(), en());
    Ok(score_pairs(generate_pairs(ds, &scope)?, ds.matrix(), None)?
        .pairs()
        .to_vec())
}

#[derive(Serialize, Debug)]
struct SigmaPoint {
    sigma: f64,
    eer: f64,
    threshold: f64,
    det: Curve,
    histogram: Histogram,
}

fn sigma_sweep_inner(
    speakers: usize,
    samples: f64,
    dim: usize,
    sigmas: &[f64],
    seed: u32,
) -> Result<Vec<SigmaPoint>, Error> {
    sigmas
        .iter()
        .map(|&sigma| {
            let cohort = generate_cohort(&SynthSpec::new(speakers, samples, dim, sigma, seed.into()))?;
            let scored = score_all(&cohort.dataset)?;
            let e = eer(&scored)?;
            Ok(SigmaPoint {
                sigma,
                eer: e.eer,
                threshold: e.threshold,
                det: det_curve(&scored, DET_POINTS)?.into(),
                histogram: histogram(&scored, HIST_BINS),
            })
        })
        .collect()
}

/// EER, DET curve and score histograms for one seeded cohort per noise level.
#[wasm_bindgen(js_name = sigmaSweep)]
pub fn sigma_sweep(speakers: usize, samples: f64, dim: usize, sigmas: &[f64], seed: u32) -> Result<String, JsError> {
    sigma_sweep_inner(speakers, samples, dim, sigmas, seed)
        .map(|v| to_json(&v))
        .map_err(js)
}

/// A synthetic cohort kept alive between slider moves.
#[wasm_bindgen]
pub struct Cohort {
    cohort: SynthCohort,
    scored: Vec<ScoredPair>,
}

#[derive(Serialize, Debug)]
struct Summary {
    speakers: usize,
    samples: usize,
    positives: usize,
    negatives: usize,
    eer: f64,
    eer_threshold: f64,
    planted: Vec<(String, String)>,
    histogram: Histogram,
    det: Curve,
}

#[derive(Serialize, Debug)]
struct Rates {
    threshold: f64,
    tpr: f64,
    tnr: f64,
    label: String,
}

#[derive(Serialize, Debug)]
struct Cluster {
    speakers: Vec<String>,
    planted: bool,
}

#[derive(Serialize, Debug)]
struct DedupView {
    threshold: f64,
    clusters: Vec<Cluster>,
    recovered: usize,
    planted: usize,
    spurious: usize,
}

impl Cohort {
    fn build(
        speakers: usize,
        samples: f64,
        dim: usize,
        sigma: f64,
        duplicates: usize,
        seed: u32,
    ) -> Result<Self, Error> {
        let mut spec = SynthSpec::new(speakers, samples, dim, sigma, seed.into());
        spec.duplicate_injections = duplicates;
        let cohort = generate_cohort(&spec)?;
        let scored = score_all(&cohort.dataset)?;
        Ok(Cohort { cohort, scored })
    }

    fn summary_inner(&self) -> Result<Summary, Error> {
        let e = eer(&self.scored)?;
        let positives = self.scored.iter().filter(|s| s.pair.label.is_same()).count();
        Ok(Summary {
            speakers: self.cohort.dataset.speakers().len(),
            samples: self.cohort.dataset.records().len(),
            positives,
            negatives: self.scored.len() - positives,
            eer: e.eer,
            eer_threshold: e.threshold,
            planted: self
                .cohort
                .ground_truth
                .iter()
                .map(|t| (t.alias_speaker_id.clone(), t.true_speaker_id.clone()))
                .collect(),
            histogram: histogram(&self.scored, HIST_BINS),
            det: det_curve(&self.scored, DET_POINTS)?.into(),
        })
    }

    fn rates_inner(&self, threshold: f64) -> Result<Rates, Error> {
        let (tpr, tnr) = rates_at_threshold(&self.scored, threshold)?;
        Ok(Rates {
            threshold,
            tpr,
            tnr,
            label: cohortguard::metrics::format_tpr_tnr(tpr, tnr),
        })
    }

    fn dedup_inner(&self, threshold: f64, min_frac: f64) -> Result<DedupView, Error> {
        let ds = &self.cohort.dataset;
        let report = find_duplicate_clusters(&link_speakers(ds, LinkPolicy::new(threshold, min_frac)?)?);
        let truth = &self.cohort.ground_truth;
        let clusters: Vec<Cluster> = report
            .clusters
            .iter()
            .map(|c| {
                let speakers: Vec<String> = c.speaker_ids().into_iter().map(String::from).collect();
                let planted = speakers.len() == 2
                    && truth
                        .iter()
                        .any(|t| speakers.contains(&t.alias_speaker_id) && speakers.contains(&t.true_speaker_id));
                Cluster { speakers, planted }
            })
            .collect();
        let recovered = clusters.iter().filter(|c| c.planted).count();
        Ok(DedupView {
            threshold,
            recovered,
            planted: truth.len(),
            spurious: clusters.len() - recovered,
            clusters,
        })
    }
}

#[wasm_bindgen]
impl Cohort {
    /// Single-language cohort; `duplicates` speaker ids are aliases of others.
    #[wasm_bindgen(constructor)]
    pub fn new(
        speakers: usize,
        samples: f64,
        dim: usize,
        sigma: f64,
        duplicates: usize,
        seed: u32,
    ) -> Result<Cohort, JsError> {
        Cohort::build(speakers, samples, dim, sigma, duplicates, seed).map_err(js)
    }

    pub fn summary(&self) -> Result<String, JsError> {
        self.summary_inner().map(|s| to_json(&s)).map_err(js)
    }

    /// TPR and TNR when accepting scores strictly above `threshold`.
    #[wasm_bindgen(js_name = ratesAt)]
    pub fn rates_at(&self, threshold: f64) -> Result<String, JsError> {
        self.rates_inner(threshold).map(|r| to_json(&r)).map_err(js)
    }

    /// Duplicate clusters at `threshold`, marked against the planted aliases.
    pub fn dedup(&self, threshold: f64, min_frac: f64) -> Result<String, JsError> {
        self.dedup_inner(threshold, min_frac).map(|d| to_json(&d)).map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_is_monotone_in_noise() {
        let points = sigma_sweep_inner(12, 5.0, 48, &[0.05, 0.3, 1.0], 3).unwrap();
        assert_eq!(points.len(), 3);
        assert!(points.windows(2).all(|w| w[0].eer <= w[1].eer));
        let h = &points[0].histogram;
        assert_eq!(h.same.len(), HIST_BINS);
        let total: u32 = h.same.iter().chain(&h.different).sum();
        let n = generate_cohort(&SynthSpec::new(12, 5.0, 48, 0.05, 3))
            .unwrap()
            .dataset
            .records()
            .len();
        assert_eq!(total as usize, n * (n - 1) / 2);
        assert!(points[0].det.fpr.len() <= DET_POINTS);
    }

    #[test]
    fn histogram_edges() {
        let cohort = Cohort::build(4, 3.0, 16, 0.0, 0, 1).unwrap();
        let h = histogram(&cohort.scored, 10);
        // sigma 0: every same-speaker score is exactly 1 and lands in the top bin.
        assert_eq!(
            h.same[9] as usize,
            cohort.scored.iter().filter(|s| s.pair.label.is_same()).count()
        );
    }

    #[test]
    fn threshold_explorer_rates() {
        let c = Cohort::build(10, 5.0, 32, 0.1, 0, 7).unwrap();
        let s = c.summary_inner().unwrap();
        let at = c.rates_inner(s.eer_threshold).unwrap();
        assert!(at.tpr > 0.95 && at.tnr > 0.95);
        let low = c.rates_inner(-2.0).unwrap();
        assert_eq!((low.tpr, low.tnr), (1.0, 0.0));
        assert_eq!(c.rates_inner(2.0).unwrap().label, "0.000 | 1.000");
        let json = to_json(&s);
        assert!(json.contains("\"eer_threshold\""));
    }

    #[test]
    fn dedup_explorer_marks_planted_clusters() {
        let c = Cohort::build(20, 6.0, 64, 0.1, 2, 9).unwrap();
        let s = c.summary_inner().unwrap();
        let v = c.dedup_inner(s.eer_threshold, 0.5).unwrap();
        assert_eq!((v.recovered, v.planted, v.spurious), (2, 2, 0));
        let none = c.dedup_inner(1.5, 0.5).unwrap();
        assert!(none.clusters.is_empty());
        assert!(c.dedup_inner(0.5, 0.0).is_err());
    }

    #[test]
    fn bad_parameters_are_errors() {
        assert!(Cohort::build(0, 5.0, 32, 0.1, 0, 1).is_err());
        assert!(sigma_sweep_inner(5, 3.0, 1, &[0.1], 1).is_err());
    }
}
