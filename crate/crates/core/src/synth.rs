//! Deterministic synthetic cohorts with known speaker identities.
//!
//! Each speaker gets a centroid drawn uniformly on the unit sphere; each sample
//! is the centroid plus isotropic Gaussian noise, renormalised to unit length.
//! Duplicate injections add speaker ids that reuse an existing centroid.
//! This controls cosine separability with one parameter and models nothing
//! about real speech.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::write_manifest;
use crate::model::{bind_dataset, CohortDataset, EmbeddingMatrix, Language, SampleRecord, Task, UnreferencedRows};
use crate::svem::write_embeddings;

/// Names the random stream so fixtures can be regenerated elsewhere.
pub const GENERATOR_ID: &str = "rand_chacha-0.9/ChaCha8Rng::seed_from_u64 + rand_distr-0.5/StandardNormal";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleCount {
    pub mean: f64,
    #[serde(default)]
    pub jitter: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_dataset_id")]
    pub dataset_id: String,
    /// Total speaker ids, including the duplicate aliases.
    pub n_speakers: usize,
    pub samples_per_speaker: SampleCount,
    pub dim: usize,
    pub noise_sigma: f64,
    pub languages: Vec<(Language, f64)>,
    pub tasks: Vec<(Task, f64)>,
    #[serde(default)]
    pub duplicate_injections: usize,
    pub seed: u64,
    /// Test hook: Gram–Schmidt the centroids so distinct speakers are orthogonal.
    #[serde(default)]
    pub orthogonal_centroids: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
}

fn default_dataset_id() -> String {
    "synth".into()
}

impl SynthSpec {
    /// Single-language (`en`), picture-description cohort.
    pub fn new(n_speakers: usize, mean_samples: f64, dim: usize, noise_sigma: f64, seed: u64) -> Self {
        SynthSpec {
            dataset_id: default_dataset_id(),
            n_speakers,
            samples_per_speaker: SampleCount {
                mean: mean_samples,
                jitter: 0,
            },
            dim,
            noise_sigma,
            languages: vec![("en".parse().unwrap(), 1.0)],
            tasks: vec![(Task::PictureDescription, 1.0)],
            duplicate_injections: 0,
            seed,
            orthogonal_centroids: false,
            model_tag: None,
        }
    }

    /// Parses and validates a JSON spec.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SynthSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.n_speakers == 0 {
            return bad("n_speakers must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.samples_per_speaker.mean >= 1.0 && self.samples_per_speaker.mean.is_finite()) {
            return bad("samples_per_speaker.mean must be at least 1".into());
        }
        if self.duplicate_injections >= self.n_speakers {
            return bad("duplicate_injections must be below n_speakers".into());
        }
        let genuine = self.n_speakers - self.duplicate_injections;
        if self.duplicate_injections > genuine {
            return bad(format!(
                "{} duplicates need as many distinct source speakers, only {genuine} exist",
                self.duplicate_injections
            ));
        }
        if self.orthogonal_centroids && genuine > self.dim {
            return bad(format!(
                "cannot orthogonalise {genuine} centroids in {} dimensions",
                self.dim
            ));
        }
        if self.languages.is_empty() || self.tasks.is_empty() {
            return bad("languages and tasks must be nonempty".into());
        }
        let weights = self.languages.iter().map(|l| l.1).chain(self.tasks.iter().map(|t| t.1));
        for w in weights {
            if !(w > 0.0 && w.is_finite()) {
                return bad(format!("weights must be positive, got {w}"));
            }
        }
        Ok(())
    }
}

/// An alias speaker id and the speaker whose centroid it shares.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DuplicateTruth {
    pub alias_speaker_id: String,
    pub true_speaker_id: String,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub dataset: CohortDataset,
    pub ground_truth: Vec<DuplicateTruth>,
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:04}")
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn orthogonalise(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for b in basis {
        let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
    n
}

pub fn generate_cohort(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let genuine = spec.n_speakers - spec.duplicate_injections;

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(spec.n_speakers);
    for _ in 0..genuine {
        let mut c = unit_gaussian(&mut rng, dim);
        if spec.orthogonal_centroids {
            while orthogonalise(&mut c, &centroids) < 1e-6 {
                c = unit_gaussian(&mut rng, dim);
            }
        }
        centroids.push(c);
    }

    let lang_pick = WeightedIndex::new(spec.languages.iter().map(|l| l.1))
        .map_err(|e| Error::InvalidArgument(format!("language weights: {e}")))?;
    let task_pick = WeightedIndex::new(spec.tasks.iter().map(|t| t.1))
        .map_err(|e| Error::InvalidArgument(format!("task weights: {e}")))?;
    let mut languages: Vec<Language> = (0..genuine)
        .map(|_| spec.languages[lang_pick.sample(&mut rng)].0.clone())
        .collect();

    let sources = rand::seq::index::sample(&mut rng, genuine, spec.duplicate_injections).into_vec();
    let mut ground_truth = Vec::with_capacity(sources.len());
    for (k, &src) in sources.iter().enumerate() {
        centroids.push(centroids[src].clone());
        languages.push(languages[src].clone());
        ground_truth.push(DuplicateTruth {
            alias_speaker_id: speaker_id(genuine + k),
            true_speaker_id: speaker_id(src),
        });
    }

    let SampleCount { mean, jitter } = spec.samples_per_speaker;
    let mut records = Vec::new();
    let mut data: Vec<f32> = Vec::new();
    for (s, centroid) in centroids.iter().enumerate() {
        let base = mean.floor() as i64 + i64::from(rng.random_bool(mean.fract()));
        let offset = if jitter > 0 {
            rng.random_range(-i64::from(jitter)..=i64::from(jitter))
        } else {
            0
        };
        let count = (base + offset).max(1) as usize;
        let spk = speaker_id(s);
        for k in 0..count {
            let task = spec.tasks[task_pick.sample(&mut rng)].0;
            let audio: f64 = rng.random_range(20.0..160.0);
            let speech = audio * rng.random_range(0.3..0.9);
            let sample = loop {
                let v: Vec<f64> = centroid
                    .iter()
                    .map(|&c| {
                        let z: f64 = rng.sample(StandardNormal);
                        c + spec.noise_sigma * z
                    })
                    .collect();
                let n = norm(&v);
                if n > 0.0 {
                    break v.into_iter().map(|x| (x / n) as f32).collect::<Vec<f32>>();
                }
            };
            records.push(SampleRecord {
                sample_id: format!("{spk}-{k:03}"),
                speaker_id: spk.clone(),
                language: languages[s].clone(),
                task,
                session_index: k as u32,
                audio_duration_sec: round_cs(audio),
                speech_duration_sec: round_cs(speech).min(round_cs(audio)),
                embedding_row: records.len(),
                model_tag: spec.model_tag.clone(),
            });
            data.extend_from_slice(&sample);
        }
    }
    let matrix = EmbeddingMatrix::new(dim, data)?;
    let (dataset, _) = bind_dataset(records, matrix, spec.dataset_id.clone(), UnreferencedRows::Error)?;
    Ok(SynthCohort { dataset, ground_truth })
}

fn round_cs(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub manifest: PathBuf,
    pub embeddings: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        FixturePaths {
            manifest: dir.join("manifest.jsonl"),
            embeddings: dir.join("embeddings.svem"),
        }
    }
}

/// Writes the manifest and SVEM matrix for `dataset`.
pub fn write_fixture(dataset: &CohortDataset, paths: &FixturePaths) -> Result<()> {
    write_manifest(&paths.manifest, dataset.records())?;
    write_embeddings(&paths.embeddings, dataset.matrix())
}

/// `alias_speaker_id,true_speaker_id` rows.
pub fn write_ground_truth<W: Write>(out: W, truth: &[DuplicateTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alias_speaker_id", "true_speaker_id"])?;
    for t in truth {
        w.write_record([&t.alias_speaker_id, &t.true_speaker_id])?;
    }
    w.flush().map_err(|e| Error::io("<ground truth>", e))?;
    Ok(())
}

#[derive(Serialize)]
struct FixtureMeta<'a> {
    generator: &'a str,
    spec: &'a SynthSpec,
}

/// Writes a full fixture directory: manifest, matrix, ground truth and a
/// metadata file naming the generator.
pub fn write_fixture_dir(cohort: &SynthCohort, spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = FixturePaths::in_dir(dir);
    write_fixture(&cohort.dataset, &paths)?;
    let gt = dir.join("ground_truth.csv");
    let f = fs::File::create(&gt).map_err(|e| Error::io(&gt, e))?;
    write_ground_truth(f, &cohort.ground_truth)?;
    let meta = dir.join("fixture.json");
    let mut json = serde_json::to_string_pretty(&FixtureMeta {
        generator: GENERATOR_ID,
        spec,
    })?;
    json.push('\n');
    fs::write(&meta, json).map_err(|e| Error::io(&meta, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::load_manifest;
    use crate::scoring::cosine;
    use crate::svem::{encode, load_embeddings};

    #[test]
    fn zero_noise_gives_identical_samples() {
        let c = generate_cohort(&SynthSpec::new(4, 3.0, 16, 0.0, 1)).unwrap();
        let ds = &c.dataset;
        for a in ds.records() {
            for b in ds.records() {
                if a.speaker_id == b.speaker_id {
                    assert_eq!(cosine(ds.embedding(a), ds.embedding(b)).unwrap(), 1.0);
                }
            }
        }
    }

    #[test]
    fn orthogonal_centroids_hook() {
        let mut spec = SynthSpec::new(2, 2.0, 8, 0.0, 4);
        spec.orthogonal_centroids = true;
        let c = generate_cohort(&spec).unwrap();
        let ds = &c.dataset;
        let (a, b) = (&ds.records()[0], &ds.records()[2]);
        assert_ne!(a.speaker_id, b.speaker_id);
        assert!(cosine(ds.embedding(a), ds.embedding(b)).unwrap().abs() < 1e-6);
    }

    #[test]
    fn duplicates_share_centroids() {
        let mut spec = SynthSpec::new(10, 2.0, 32, 0.0, 7);
        spec.duplicate_injections = 3;
        let c = generate_cohort(&spec).unwrap();
        assert_eq!(c.ground_truth.len(), 3);
        assert_eq!(c.dataset.speakers().len(), 10);
        for t in &c.ground_truth {
            let emb = |id: &str| {
                let r = c.dataset.records().iter().find(|r| r.speaker_id == id).unwrap();
                c.dataset.embedding(r).to_vec()
            };
            assert_eq!(
                cosine(&emb(&t.alias_speaker_id), &emb(&t.true_speaker_id)).unwrap(),
                1.0
            );
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = SynthSpec::new(3, 2.0, 1, 0.1, 0);
        assert!(generate_cohort(&s).is_err());
        s.dim = 4;
        s.languages[0].1 = 0.0;
        assert!(generate_cohort(&s).is_err());
        s.languages[0].1 = 1.0;
        s.duplicate_injections = 3;
        assert!(generate_cohort(&s).is_err());
        s.duplicate_injections = 2;
        assert!(generate_cohort(&s).is_err(), "two aliases need two distinct sources");
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"n_speakers":5,"samples_per_speaker":{"mean":3.5,"jitter":1},"dim":8,
            "noise_sigma":0.1,"languages":[["de",1.0],["es",2.0]],"tasks":[["journaling",1.0]],"seed":9}"#;
        let spec: SynthSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.dataset_id, "synth");
        let c = generate_cohort(&spec).unwrap();
        assert!(c.dataset.records().iter().all(|r| r.task == Task::Journaling));
    }

    #[test]
    fn write_load_bind_roundtrip_and_determinism() {
        let mut spec = SynthSpec::new(6, 3.0, 12, 0.2, 42);
        spec.duplicate_injections = 1;
        let a = generate_cohort(&spec).unwrap();
        let b = generate_cohort(&spec).unwrap();
        assert_eq!(encode(a.dataset.matrix()), encode(b.dataset.matrix()));

        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture_dir(&a, &spec, dir.path()).unwrap();
        let records = load_manifest(&paths.manifest).unwrap();
        let matrix = load_embeddings(&paths.embeddings).unwrap();
        let (back, warnings) = bind_dataset(records, matrix, "synth", UnreferencedRows::Error).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, a.dataset);
        assert_eq!(back.matrix().as_slice(), a.dataset.matrix().as_slice());

        let dir2 = tempfile::tempdir().unwrap();
        write_fixture_dir(&b, &spec, dir2.path()).unwrap();
        for f in ["manifest.jsonl", "embeddings.svem", "ground_truth.csv", "fixture.json"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
