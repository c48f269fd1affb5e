use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cohortguard::dedup::{find_duplicate_clusters, link_speakers, LinkPolicy};
use cohortguard::fmt::sig_digits;
use cohortguard::harness::{balanced_subsample, run_benchmark, stratify, Balance, BenchmarkConfig, StrataKey};
use cohortguard::manifest::{load_manifest, write_manifest};
use cohortguard::metrics::{calibrate_threshold, det_curve, write_metrics_csv, MetricsRow, ThresholdPolicy};
use cohortguard::pairing::write_pairs_csv;
use cohortguard::scoring::{read_scored_csv, write_scored_csv};
use cohortguard::svem::load_embeddings;
use cohortguard::synth::{generate_cohort, write_fixture_dir, SynthSpec};
use cohortguard::{
    bind_dataset, cohort_stats, generate_pairs, plan_scope, score_pairs, BindWarning, CohortDataset, Error, ErrorKind,
    PairScope, Result, Task, TrialPair, UnreferencedRows,
};

#[derive(Parser)]
#[command(
    name = "cohortguard",
    version,
    about = "Speaker-verification evaluation and duplicate-enrollment detection"
)]
struct Cli {
    /// Cap on worker threads. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-check a manifest and its embedding matrix.
    Validate(ValidateArgs),
    /// Per-stratum cohort statistics and pair counts as CSV.
    Stats(StatsArgs),
    /// Dump the trial pairs (optionally scored) for every language.
    Pairs(PairsArgs),
    /// Stratified benchmark: EER, threshold and TPR | TNR per stratum.
    Eval(EvalArgs),
    /// DET curve points per language.
    Det(DetArgs),
    /// Pick a decision threshold from scored pairs or a dataset.
    Calibrate(CalibrateArgs),
    /// Cluster speaker ids that look like the same person.
    Dedup(DedupArgs),
    /// Subsample each language to the same number of speakers.
    Balance(BalanceArgs),
    /// Generate a synthetic fixture directory from a JSON spec.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Defaults to the manifest's file stem.
    #[arg(long)]
    dataset_id: Option<String>,
    /// Treat matrix rows no record points at as an error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: Input,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_delimiter = ',', default_value = "language", value_parser = parse_key)]
    group_by: Vec<StrataKey>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    #[command(flatten)]
    input: Input,
    /// Restrict to one task.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    /// Append a cosine score column.
    #[arg(long)]
    score: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_delimiter = ',', default_value = "language", value_parser = parse_key)]
    group_by: Vec<StrataKey>,
    /// eer, target-fpr=X or target-fnr=X
    #[arg(long, default_value = "eer", value_parser = parse_policy)]
    policy: ThresholdPolicy,
    /// Subsample every language to this many speakers first.
    #[arg(long, requires = "seed")]
    balance_speakers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 200)]
    max_points: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Scored pairs CSV as written by `pairs --score`.
    #[arg(long, conflicts_with_all = ["manifest", "embeddings"], required_unless_present = "manifest")]
    scores: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    dataset_id: Option<String>,
    #[arg(long, default_value = "eer", value_parser = parse_policy)]
    policy: ThresholdPolicy,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    input: Input,
    #[arg(
        long,
        required_unless_present = "calibrate_from",
        conflicts_with = "calibrate_from",
        allow_hyphen_values = true
    )]
    threshold: Option<f64>,
    /// Scored pairs CSV to calibrate the threshold from.
    #[arg(long)]
    calibrate_from: Option<PathBuf>,
    /// Policy used with --calibrate-from.
    #[arg(long, default_value = "eer", value_parser = parse_policy)]
    policy: ThresholdPolicy,
    #[arg(long, default_value_t = LinkPolicy::DEFAULT_MIN_FRAC)]
    min_frac: f64,
    /// Also compare speakers across languages (experimental).
    #[arg(long)]
    cross_language: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BalanceArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    target_speakers: usize,
    #[arg(long)]
    seed: u64,
    /// Output manifest; rows keep pointing into the original matrix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_key(s: &str) -> std::result::Result<StrataKey, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> std::result::Result<ThresholdPolicy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Validation => 1,
        ErrorKind::UndefinedMetric => 2,
        ErrorKind::Io => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Validate(a) => validate(a),
        Command::Stats(a) => stats(a),
        Command::Pairs(a) => pairs(a),
        Command::Eval(a) => eval(a),
        Command::Det(a) => det(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Dedup(a) => dedup(a),
        Command::Balance(a) => balance(a),
        Command::Synth(a) => synth(a),
    }
}

fn default_id(manifest: &Path) -> String {
    manifest
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn load(manifest: &Path, embeddings: &Path, dataset_id: Option<&str>, strict: bool) -> Result<CohortDataset> {
    let records = load_manifest(manifest)?;
    let matrix = load_embeddings(embeddings)?;
    let id = dataset_id.map(str::to_string).unwrap_or_else(|| default_id(manifest));
    let policy = if strict {
        UnreferencedRows::Error
    } else {
        UnreferencedRows::Warn
    };
    let (ds, warnings) = bind_dataset(records, matrix, id, policy)?;
    for w in warnings {
        match w {
            BindWarning::UnreferencedRows { count, first } => {
                eprintln!("warning: {count} matrix rows are not referenced by any record (first: row {first})")
            }
        }
    }
    Ok(ds)
}

impl Input {
    fn load(&self) -> Result<CohortDataset> {
        load(
            &self.manifest,
            &self.embeddings,
            self.dataset_id.as_deref(),
            self.strict,
        )
    }
}

/// Runs `f` against the output file, or stdout when no path is given.
fn emit(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush().map_err(|e| Error::io(path, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn language_scopes(ds: &CohortDataset, task: Option<Task>) -> Vec<PairScope> {
    ds.languages()
        .into_iter()
        .map(|l| {
            let s = PairScope::new(ds.dataset_id(), l);
            match task {
                Some(t) => s.with_task(t),
                None => s,
            }
        })
        .collect()
}

fn validate(a: ValidateArgs) -> Result<u8> {
    let ds = a.input.load()?;
    println!(
        "ok: {} speakers, {} samples, dim {}",
        ds.speakers().len(),
        ds.records().len(),
        ds.matrix().dim()
    );
    Ok(0)
}

fn stats(a: StatsArgs) -> Result<u8> {
    let ds = a.input.load()?;
    let mut keys = a.group_by.clone();
    keys.push(StrataKey::Language);
    keys.sort();
    keys.dedup();
    let strata = stratify(&ds, &keys)?;
    emit(a.out.as_deref(), |w| {
        writeln!(
            w,
            "stratum,n_speakers,n_samples,avg_samples_per_speaker,avg_audio_duration_sec,avg_speech_duration_sec,n_pos,n_neg"
        )
        .map_err(|e| Error::io("<stats>", e))?;
        for (label, sub) in &strata {
            let st = cohort_stats(sub);
            let mut scope = PairScope::new(sub.dataset_id(), label.language.clone().expect("language key"));
            if let Some(t) = label.task {
                scope = scope.with_task(t);
            }
            let plan = plan_scope(sub, &scope)?;
            writeln!(
                w,
                "{label},{},{},{},{},{},{},{}",
                st.speakers,
                st.samples,
                st.avg_samples_per_speaker.display(2),
                st.avg_audio_duration_sec.display(2),
                st.avg_speech_duration_sec.display(2),
                plan.positive_count,
                plan.negative_count
            )
            .map_err(|e| Error::io("<stats>", e))?;
        }
        Ok(())
    })?;
    Ok(0)
}

fn all_pairs(ds: &CohortDataset, task: Option<Task>) -> Result<Vec<TrialPair>> {
    let mut pairs = Vec::new();
    for scope in language_scopes(ds, task) {
        match generate_pairs(ds, &scope) {
            Ok(stream) => pairs.extend(stream),
            // A task filter can leave some languages empty.
            Err(Error::EmptyScope(_)) if task.is_some() => {}
            Err(e) => return Err(e),
        }
    }
    if let (true, Some(t)) = (pairs.is_empty(), task) {
        return Err(Error::EmptyScope(format!("{}/*/{t}", ds.dataset_id())));
    }
    Ok(pairs)
}

fn pairs(a: PairsArgs) -> Result<u8> {
    let ds = a.input.load()?;
    let pairs = all_pairs(&ds, a.task)?;
    if a.score {
        let scored = score_pairs(pairs, ds.matrix(), None)?;
        emit(a.out.as_deref(), |w| write_scored_csv(w, &ds, &scored))?;
    } else {
        emit(a.out.as_deref(), |w| write_pairs_csv(w, &ds, pairs))?;
    }
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<u8> {
    let ds = a.input.load()?;
    let config = BenchmarkConfig {
        strata_keys: a.group_by,
        balance: a.balance_speakers.map(|target_speakers| Balance {
            target_speakers,
            seed: a.seed.expect("clap enforces --seed"),
        }),
        threshold_policy: a.policy,
    };
    let report = run_benchmark(&[ds], &config)?;
    emit(a.out.as_deref(), |w| match a.format {
        Format::Csv => report.write_csv(w),
        Format::Text => {
            let text = format!("{}\n{}", report.to_text(), report.to_pivot_text());
            w.write_all(text.as_bytes()).map_err(|e| Error::io("<report>", e))
        }
    })?;
    for r in &report.rows {
        if let cohortguard::harness::StratumOutcome::Undefined(why) = &r.outcome {
            eprintln!("warning: {}: metrics undefined: {why}", r.label);
        }
    }
    if report.all_undefined() {
        eprintln!("error: metrics are undefined for every stratum");
        return Ok(2);
    }
    Ok(0)
}

fn det(a: DetArgs) -> Result<u8> {
    let ds = a.input.load()?;
    let mut curves = Vec::new();
    for scope in language_scopes(&ds, None) {
        let scored = score_pairs(generate_pairs(&ds, &scope)?, ds.matrix(), None)?;
        match det_curve(scored.pairs(), a.max_points) {
            Ok(c) => curves.push((scope, c)),
            Err(e) if e.kind() == ErrorKind::UndefinedMetric => eprintln!("warning: {scope}: {e}"),
            Err(e) => return Err(e),
        }
    }
    if curves.is_empty() {
        return Err(Error::UndefinedMetric("no language has both pair classes".into()));
    }
    emit(a.out.as_deref(), |w| {
        let io = |e| Error::io("<det>", e);
        writeln!(w, "scope,threshold,fpr,fnr").map_err(io)?;
        for (scope, c) in &curves {
            for p in &c.points {
                writeln!(
                    w,
                    "{scope},{},{},{}",
                    sig_digits(p.threshold, 9),
                    sig_digits(p.fpr, 9),
                    sig_digits(p.fnr, 9)
                )
                .map_err(io)?;
            }
        }
        Ok(())
    })?;
    Ok(0)
}

fn calibrate(a: CalibrateArgs) -> Result<u8> {
    let mut rows = Vec::new();
    let mut undefined = 0;
    if let Some(path) = &a.scores {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let scored = read_scored_csv(io::BufReader::new(file))?;
        rows.push(MetricsRow::compute(default_id(path), &scored, a.policy)?);
    } else {
        let (m, e) = (a.manifest.as_ref().unwrap(), a.embeddings.as_ref().unwrap());
        let ds = load(m, e, a.dataset_id.as_deref(), false)?;
        let scopes = language_scopes(&ds, None);
        for scope in &scopes {
            let scored = score_pairs(generate_pairs(&ds, scope)?, ds.matrix(), None)?;
            match MetricsRow::compute(scope.to_string(), scored.pairs(), a.policy) {
                Ok(r) => rows.push(r),
                Err(e) if e.kind() == ErrorKind::UndefinedMetric => {
                    eprintln!("warning: {scope}: {e}");
                    undefined += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if undefined == scopes.len() {
            return Err(Error::UndefinedMetric("no language could be calibrated".into()));
        }
    }
    emit(a.out.as_deref(), |w| write_metrics_csv(w, &rows))?;
    Ok(0)
}

fn dedup(a: DedupArgs) -> Result<u8> {
    let threshold = match (a.threshold, &a.calibrate_from) {
        (Some(t), _) => t,
        (None, Some(path)) => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let scored = read_scored_csv(io::BufReader::new(file))?;
            calibrate_threshold(&scored, a.policy)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut policy = LinkPolicy::new(threshold, a.min_frac)?;
    if a.cross_language {
        eprintln!("warning: cross-language linking is experimental");
        policy = policy.cross_language();
    }
    let ds = a.input.load()?;
    let report = find_duplicate_clusters(&link_speakers(&ds, policy)?);
    eprintln!("{}", report.summary().trim_start_matches("# "));
    emit(a.out.as_deref(), |w| report.write_csv(w))?;
    Ok(0)
}

fn balance(a: BalanceArgs) -> Result<u8> {
    let ds = a.input.load()?;
    let mut kept = Vec::new();
    for (_, sub) in stratify(&ds, &[StrataKey::Language])? {
        kept.push(balanced_subsample(&sub, a.target_speakers, a.seed)?);
    }
    // Restore manifest order across languages.
    let mut records: Vec<_> = kept.iter().flat_map(|d| d.records().iter().cloned()).collect();
    let order: std::collections::HashMap<&str, usize> = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id.as_str(), i))
        .collect();
    records.sort_by_key(|r| order[r.sample_id.as_str()]);
    match &a.out {
        Some(path) => write_manifest(path, &records)?,
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            cohortguard::manifest::write_manifest_to(&mut w, &records)?;
        }
    }
    eprintln!(
        "kept {} of {} samples, {} speakers per language",
        records.len(),
        ds.records().len(),
        a.target_speakers
    );
    Ok(0)
}

fn synth(a: SynthArgs) -> Result<u8> {
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec = SynthSpec::from_json(&text)?;
    let cohort = generate_cohort(&spec)?;
    let paths = write_fixture_dir(&cohort, &spec, &a.out_dir)?;
    eprintln!(
        "wrote {} samples from {} speakers to {}",
        cohort.dataset.records().len(),
        cohort.dataset.speakers().len(),
        paths.manifest.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(0)
}
