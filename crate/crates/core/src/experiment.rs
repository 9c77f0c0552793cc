//! Sweep driver: expands (architecture × seed × k) grids into runs, trains
//! them on a bounded worker pool and persists per-run artifacts.
//!
//! Layout under the output root:
//!
//! ```text
//! runs/<run-id>/manifest.json
//! runs/<run-id>/checkpoint.bin
//! runs/<run-id>/history.csv
//! runs/<run-id>/split.json
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::encoding::{build_vocabs, Vocab};
use crate::grammar::{build_lexicon, enumerate_sentences, Dataset, Gender};
use crate::holdout::{make_split, ExperimentId, HoldoutError, HoldoutSpec};
use crate::numerics::{gradient_check, GradCheckConfig, GradCheckReport, ParamKind};
use crate::report::{Arch, RunRecord};
use crate::seq2seq::{AttentionKind, ExampleObjective, Fault, ModelConfig, Seq2Seq, Unit};
use crate::trainer::{encode_examples, train_run_with, Observer, RunHistory, StopReason, TrainConfig, TrainError};
use crate::{seeded_rng, RngStream};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("run directory {0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
    #[error(transparent)]
    Holdout(#[from] HoldoutError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error("malformed run artifact {path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SweepError + '_ {
    move |source| SweepError::Io { path: path.to_path_buf(), source }
}

/// Default seeds for every grid cell.
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Everything shared by the runs of a sweep.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dataset: Dataset,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl Corpus {
    pub fn standard() -> Self {
        let dataset = enumerate_sentences(&build_lexicon(None).expect("default lexicon is valid"));
        let (source_vocab, target_vocab) = build_vocabs(&dataset);
        Corpus { dataset, source_vocab, target_vocab }
    }

    pub fn holdout(&self, experiment: ExperimentId, k: Option<usize>) -> Result<HoldoutSpec, SweepError> {
        let lex = &self.dataset.lexicon;
        match (experiment, k) {
            (ExperimentId::E3, Some(k)) => Ok(HoldoutSpec::experiment3(k, Gender::Feminine, lex)?),
            (ExperimentId::E3, None) => Err(SweepError::Invalid("E3 needs a withheld-name count".into())),
            (e, None) => Ok(HoldoutSpec::new(e, lex)?),
            (e, Some(_)) => Err(SweepError::Invalid(format!("{e} takes no withheld-name count"))),
        }
    }
}

/// Hyperparameters shared by all runs of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub hidden: usize,
    pub embed: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { hidden: 256, embed: 256, learning_rate: 0.01, max_epochs: 100, clip_norm: None }
    }
}

/// One fully determined training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub experiment: ExperimentId,
    pub k: Option<usize>,
    pub arch: Arch,
    pub seed: u64,
    pub hyper: Hyper,
}

impl RunSpec {
    /// e.g. `E3-k2-lstm-attn-s0`, `E1-srn-noattn-s4`.
    pub fn run_id(&self) -> String {
        let k = self.k.map(|k| format!("-k{k}")).unwrap_or_default();
        let attn = if self.arch.attention.enabled() { "attn" } else { "noattn" };
        format!("{}{k}-{}-{attn}-s{}", self.experiment, self.arch.unit, self.seed)
    }

    pub fn train_config(&self, corpus: &Corpus) -> TrainConfig {
        let model = ModelConfig::new(
            self.arch.unit,
            self.arch.attention,
            corpus.source_vocab.len(),
            corpus.target_vocab.len(),
        )
        .with_sizes(self.hyper.hidden, self.hyper.embed);
        let mut c = TrainConfig::new(model, self.seed);
        c.learning_rate = self.hyper.learning_rate;
        c.max_epochs = self.hyper.max_epochs;
        c.clip_norm = self.hyper.clip_norm;
        c
    }
}

/// A grid of runs for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub experiment: ExperimentId,
    pub archs: Vec<Arch>,
    pub seeds: Vec<u64>,
    /// Withheld-name counts (E3 only).
    pub withheld: Vec<usize>,
    pub hyper: Hyper,
}

impl Sweep {
    pub fn new(experiment: ExperimentId) -> Self {
        Sweep {
            experiment,
            archs: Arch::ALL.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            withheld: if experiment == ExperimentId::E3 { vec![2, 3, 6, 14] } else { Vec::new() },
            hyper: Hyper::default(),
        }
    }

    pub fn plan(&self) -> Result<Vec<RunSpec>, SweepError> {
        let ks: Vec<Option<usize>> = match (self.experiment, self.withheld.is_empty()) {
            (ExperimentId::E3, true) => return Err(SweepError::Invalid("E3 needs --withheld".into())),
            (ExperimentId::E3, false) => self.withheld.iter().map(|&k| Some(k)).collect(),
            (e, false) => return Err(SweepError::Invalid(format!("--withheld only applies to E3, not {e}"))),
            (_, true) => vec![None],
        };
        if self.archs.is_empty() || self.seeds.is_empty() {
            return Err(SweepError::Invalid("empty architecture grid or seed list".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        let mut out = Vec::new();
        for &k in &ks {
            for &arch in &self.archs {
                for &seed in &seeds {
                    out.push(RunSpec { experiment: self.experiment, k, arch, seed, hyper: self.hyper.clone() });
                }
            }
        }
        Ok(out)
    }
}

/// Run manifest: enough to reproduce the run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub experiment: ExperimentId,
    pub k: Option<usize>,
    pub withheld_names: Vec<String>,
    pub unit: Unit,
    pub attention: AttentionKind,
    pub seed: u64,
    /// The split is drawn from this seed; see `split.json` for the indices.
    pub split_seed: u64,
    pub split_file: String,
    pub hyper: Hyper,
    pub config: TrainConfig,
    pub non_paper: Vec<String>,
    pub withheld_subsets: Vec<String>,
    pub stop_reason: Option<StopReason>,
    pub final_epoch: Option<usize>,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn spec(&self) -> RunSpec {
        RunSpec {
            experiment: self.experiment,
            k: self.k,
            arch: Arch::new(self.unit, self.attention),
            seed: self.seed,
            hyper: self.hyper.clone(),
        }
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const HISTORY: &str = "history.csv";
pub const SPLIT: &str = "split.json";

/// What to do when a run directory already exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Existing {
    Fail,
    Overwrite,
    /// Keep a completed run with an identical configuration; retrain otherwise.
    Reuse,
}

/// Trains one run (or reuses it) and writes its artifacts under `runs_dir`.
pub fn execute_run(
    spec: &RunSpec,
    corpus: &Corpus,
    runs_dir: &Path,
    existing: Existing,
    fault: Option<Fault>,
    observer: &mut dyn Observer,
) -> Result<RunRecord, SweepError> {
    let dir = runs_dir.join(spec.run_id());
    let config = spec.train_config(corpus);
    if dir.exists() {
        match existing {
            Existing::Fail => return Err(SweepError::Exists(dir)),
            Existing::Reuse => {
                if let Ok(m) = read_manifest(&dir) {
                    if m.error.is_none() && m.config == config && m.spec() == *spec && dir.join(CHECKPOINT).exists() {
                        return load_record(&dir);
                    }
                }
            }
            Existing::Overwrite => {}
        }
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let holdout = corpus.holdout(spec.experiment, spec.k)?;
    let split = make_split(&holdout, &corpus.dataset, spec.seed)?;
    let split_path = dir.join(SPLIT);
    fs::write(&split_path, to_json(&split.manifest())).map_err(io_err(&split_path))?;

    let start = Instant::now();
    let result = train_run_with(&config, &split, &corpus.source_vocab, &corpus.target_vocab, fault, observer);
    let wall_time_secs = start.elapsed().as_secs_f64();

    let mut manifest = RunManifest {
        run_id: spec.run_id(),
        experiment: spec.experiment,
        k: spec.k,
        withheld_names: holdout.withheld_names.clone(),
        unit: spec.arch.unit,
        attention: spec.arch.attention,
        seed: spec.seed,
        split_seed: spec.seed,
        split_file: SPLIT.into(),
        hyper: spec.hyper.clone(),
        non_paper: config.non_paper(),
        config,
        withheld_subsets: split.generalization.keys().cloned().collect(),
        stop_reason: None,
        final_epoch: None,
        wall_time_secs,
        error: None,
    };
    let history = match result {
        Ok((checkpoint, history)) => {
            checkpoint.save(&dir.join(CHECKPOINT))?;
            let path = dir.join(HISTORY);
            fs::write(&path, history.to_csv()).map_err(io_err(&path))?;
            manifest.stop_reason = Some(history.stop_reason);
            manifest.final_epoch = Some(history.final_epoch);
            Some(history)
        }
        Err(e @ (TrainError::NonFinite { .. } | TrainError::Model(_))) => {
            manifest.error = Some(e.to_string());
            None
        }
        Err(e) => return Err(SweepError::Invalid(e.to_string())),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, to_json(&manifest)).map_err(io_err(&path))?;
    Ok(record_of(&manifest, history))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn record_of(m: &RunManifest, history: Option<RunHistory>) -> RunRecord {
    RunRecord {
        run_id: m.run_id.clone(),
        experiment: m.experiment,
        k: m.k,
        unit: m.unit,
        attention: m.attention,
        seed: m.seed,
        withheld_subsets: m.withheld_subsets.clone(),
        history,
        error: m.error.clone(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, SweepError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| SweepError::Artifact { path, detail: e.to_string() })
}

/// Reads one run directory back into a record.
pub fn load_record(dir: &Path) -> Result<RunRecord, SweepError> {
    let mut m = read_manifest(dir)?;
    let history = if m.error.is_none() {
        let path = dir.join(HISTORY);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut h = RunHistory::from_csv(&text).map_err(|detail| SweepError::Artifact { path, detail })?;
        if let Some(s) = m.stop_reason {
            h.stop_reason = s;
        }
        Some(h)
    } else {
        None
    };
    m.withheld_subsets.sort();
    Ok(record_of(&m, history))
}

/// Every run under `<out>/runs`, sorted by run id.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>, SweepError> {
    let runs = out.join("runs");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(io_err(&runs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).exists())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_record(d)).collect()
}

/// Reruns the training described by a manifest, without writing anything.
pub fn reproduce(manifest: &RunManifest, corpus: &Corpus) -> Result<(Checkpoint, RunHistory), SweepError> {
    let holdout = corpus.holdout(manifest.experiment, manifest.k)?;
    let split = make_split(&holdout, &corpus.dataset, manifest.split_seed)?;
    train_run_with(&manifest.config, &split, &corpus.source_vocab, &corpus.target_vocab, None, &mut ())
        .map_err(|e| SweepError::Invalid(e.to_string()))
}

/// Runs every planned run on a pool of `jobs` workers. Records come back in
/// plan order regardless of scheduling.
pub fn run_sweep(
    specs: &[RunSpec],
    corpus: &Corpus,
    out: &Path,
    jobs: usize,
    existing: Existing,
    fault: Option<Fault>,
    progress: &(dyn Fn(&RunRecord, usize, usize) + Sync),
) -> Result<Vec<RunRecord>, SweepError> {
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).map_err(io_err(&runs_dir))?;
    if existing == Existing::Fail {
        if let Some(s) = specs.iter().find(|s| runs_dir.join(s.run_id()).exists()) {
            return Err(SweepError::Exists(runs_dir.join(s.run_id())));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SweepError::Invalid(e.to_string()))?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    pool.install(|| {
        specs
            .par_iter()
            .with_max_len(1)
            .map(|s| {
                let r = execute_run(s, corpus, &runs_dir, existing, fault, &mut ())?;
                let n = done.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                progress(&r, n, specs.len());
                Ok(r)
            })
            .collect()
    })
}

/// Gradient check of one architecture over several dataset examples.
#[derive(Debug, Clone)]
pub struct ArchGradCheck {
    pub arch: Arch,
    pub examples: usize,
    pub report: GradCheckReport,
}

impl ArchGradCheck {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckSuite {
    pub examples: usize,
    pub hidden: usize,
    pub embed: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradCheckSuite {
    fn default() -> Self {
        GradCheckSuite { examples: 10, hidden: 12, embed: 10, seed: 0, fault: None }
    }
}

impl GradCheckSuite {
    /// Checks all six architectures on `examples` randomly drawn sentences.
    pub fn run(&self, corpus: &Corpus) -> Result<Vec<ArchGradCheck>, SweepError> {
        let mut pool = corpus.dataset.examples.clone();
        pool.shuffle(&mut seeded_rng(self.seed, RngStream::GradCheck));
        pool.truncate(self.examples);
        let encoded = encode_examples(&pool, &corpus.source_vocab, &corpus.target_vocab)
            .map_err(|e| SweepError::Invalid(e.to_string()))?;
        let mut out = Vec::new();
        for arch in Arch::ALL {
            let cfg = ModelConfig::new(arch.unit, arch.attention, corpus.source_vocab.len(), corpus.target_vocab.len())
                .with_sizes(self.hidden, self.embed);
            let mut model = Seq2Seq::new(cfg, self.seed).map_err(|e| SweepError::Invalid(e.to_string()))?;
            // Nonzero biases, so every gradient path carries signal.
            for id in model.params().ids().collect::<Vec<_>>() {
                if model.params().kind(id) == ParamKind::Bias {
                    for (i, v) in model.params_mut().value_mut(id).data_mut().iter_mut().enumerate() {
                        *v = 0.1 * ((i as f64) * 0.7 + 1.0).sin();
                    }
                }
            }
            model.inject_fault(self.fault);
            let mut report: Option<GradCheckReport> = None;
            for (n, ex) in encoded.iter().enumerate() {
                let mut obj = ExampleObjective { model: &mut model, source: &ex.source, target: &ex.target };
                let cfg = GradCheckConfig { seed: self.seed + n as u64, ..GradCheckConfig::default() };
                let r = gradient_check(&mut obj, &cfg).map_err(|e| SweepError::Invalid(e.to_string()))?;
                match &mut report {
                    Some(acc) => acc.merge(&r),
                    None => report = Some(r),
                }
            }
            let report = report.ok_or_else(|| SweepError::Invalid("no examples to check".into()))?;
            out.push(ArchGradCheck { arch, examples: encoded.len(), report });
        }
        Ok(out)
    }
}

/// Parses `0..4` (inclusive), `0,2,5` or a single seed.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(bad)).collect()
}

/// Parses `on`, `off` or `both`.
pub fn parse_attention(s: &str) -> Result<Vec<AttentionKind>, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "yes" | "true" | "+" => Ok(vec![AttentionKind::Multiplicative]),
        "off" | "no" | "false" | "-" => Ok(vec![AttentionKind::None]),
        "both" | "all" => Ok(vec![AttentionKind::None, AttentionKind::Multiplicative]),
        _ => Err(format!("invalid attention setting `{s}` (on, off or both)")),
    }
}

/// Cartesian product in canonical grid order.
pub fn grid(units: &[Unit], attention: &[AttentionKind]) -> Vec<Arch> {
    Arch::ALL
        .iter()
        .copied()
        .filter(|a| units.contains(&a.unit) && attention.contains(&a.attention))
        .collect()
}
