use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use anaphora::experiment::{
    execute_run, grid, load_records, parse_attention, parse_seeds, read_manifest, reproduce, run_sweep, Corpus,
    Existing, GradCheckSuite, Hyper, RunManifest, RunSpec, Sweep, CHECKPOINT, HISTORY,
};
use anaphora::grammar::to_jsonl;
use anaphora::holdout::make_split;
use anaphora::report::{curve_export, paper_tables, Arch, RunRecord};
use anaphora::seq2seq::Fault;
use anaphora::trainer::{encode_examples, evaluate_accuracy, EpochRecord, Observer};
use anaphora::{Checkpoint, ExperimentId, Unit};

#[derive(Parser)]
#[command(name = "anaphora", version, about = "Reflexive-anaphora generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset (JSONL) and both vocabularies.
    Generate {
        #[arg(long, env = "ANAPHORA_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Write the split manifest for one experiment and seed.
    Split {
        #[command(flatten)]
        opts: Opts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a single run.
    Train {
        #[command(flatten)]
        opts: Opts,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reproduce the run described by this manifest instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the split it was trained with.
    Eval {
        /// Run directory (containing manifest.json and checkpoint.bin).
        run: PathBuf,
        /// Emit per-step attention weights as JSON lines for every example.
        #[arg(long)]
        trace: bool,
    },
    /// Train a grid of runs, then aggregate.
    Experiment {
        #[command(flatten)]
        opts: Opts,
        /// Keep completed runs whose configuration matches.
        #[arg(long)]
        resume: bool,
    },
    /// Central-difference gradient check over all six architectures.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Aggregate existing runs into tables, curves and summary.json.
    Report {
        #[arg(long, env = "ANAPHORA_OUT", default_value = "out")]
        out: PathBuf,
    },
}

/// Shared flags; every one has a JSON config equivalent.
#[derive(Args, Clone, Default)]
struct Opts {
    #[arg(long)]
    experiment: Option<ExperimentId>,
    /// Comma-separated: srn,gru,lstm.
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<Unit>>,
    /// on, off or both.
    #[arg(long)]
    attention: Option<String>,
    /// `0..4` or `0,1,2`.
    #[arg(long)]
    seeds: Option<String>,
    /// Withheld-name counts for E3, comma-separated.
    #[arg(long, value_delimiter = ',')]
    withheld: Option<Vec<usize>>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long, env = "ANAPHORA_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    force: bool,
    /// JSON file with any of the above; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: Option<Fault>,
}

/// JSON configuration file schema.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    experiment: Option<ExperimentId>,
    units: Option<Vec<Unit>>,
    attention: Option<String>,
    seeds: Option<Vec<u64>>,
    withheld: Option<Vec<usize>>,
    hidden: Option<usize>,
    embed: Option<usize>,
    lr: Option<f64>,
    max_epochs: Option<usize>,
    clip_norm: Option<f64>,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    force: Option<bool>,
}

/// Flags merged over the config file over defaults.
struct Resolved {
    experiment: ExperimentId,
    archs: Vec<Arch>,
    seeds: Vec<u64>,
    withheld: Vec<usize>,
    hyper: Hyper,
    out: PathBuf,
    jobs: usize,
    force: bool,
    fault: Option<Fault>,
}

impl Opts {
    fn resolve(&self) -> Result<Resolved> {
        let file: FileConfig = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => FileConfig::default(),
        };
        let experiment = self
            .experiment
            .or(file.experiment)
            .context("missing --experiment (E1, E2, E3, E4a, E4b, E5a or E5b)")?;
        let units = self.units.clone().or(file.units).unwrap_or_else(|| vec![Unit::Srn, Unit::Gru, Unit::Lstm]);
        let attention = parse_attention(self.attention.as_deref().or(file.attention.as_deref()).unwrap_or("both"))
            .map_err(anyhow::Error::msg)?;
        let seeds = match &self.seeds {
            Some(s) => parse_seeds(s).map_err(anyhow::Error::msg)?,
            None => file.seeds.unwrap_or_else(|| anaphora::experiment::DEFAULT_SEEDS.to_vec()),
        };
        let withheld = self.withheld.clone().or(file.withheld).unwrap_or_else(|| {
            if experiment == ExperimentId::E3 {
                vec![2, 3, 6, 14]
            } else {
                Vec::new()
            }
        });
        let d = Hyper::default();
        let hyper = Hyper {
            hidden: self.hidden.or(file.hidden).unwrap_or(d.hidden),
            embed: self.embed.or(file.embed).unwrap_or(d.embed),
            learning_rate: self.lr.or(file.lr).unwrap_or(d.learning_rate),
            max_epochs: self.max_epochs.or(file.max_epochs).unwrap_or(d.max_epochs),
            clip_norm: self.clip_norm.or(file.clip_norm),
        };
        Ok(Resolved {
            experiment,
            archs: grid(&units, &attention),
            seeds,
            withheld,
            hyper,
            out: self.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            jobs: self.jobs.or(file.jobs).unwrap_or(1),
            force: self.force || file.force.unwrap_or(false),
            fault: self.inject_fault,
        })
    }
}

impl Resolved {
    fn sweep(&self) -> Sweep {
        Sweep {
            experiment: self.experiment,
            archs: self.archs.clone(),
            seeds: self.seeds.clone(),
            withheld: self.withheld.clone(),
            hyper: self.hyper.clone(),
        }
    }

    fn single(&self, seed: u64) -> Result<RunSpec> {
        let [arch] = self.archs[..] else {
            bail!("train needs exactly one architecture (--units and --attention on|off)");
        };
        let k = match (self.experiment, &self.withheld[..]) {
            (ExperimentId::E3, [k]) => Some(*k),
            (ExperimentId::E3, _) => bail!("E3 needs exactly one --withheld count"),
            _ => None,
        };
        Ok(RunSpec { experiment: self.experiment, k, arch, seed, hyper: self.hyper.clone() })
    }

    fn existing(&self) -> Existing {
        if self.force {
            Existing::Overwrite
        } else {
            Existing::Fail
        }
    }
}

struct EpochLog;

impl Observer for EpochLog {
    fn on_epoch(&mut self, r: &EpochRecord) {
        let acc: Vec<String> = r.accuracy.iter().map(|(k, v)| format!("{k}={v:.3}")).collect();
        eprintln!("epoch {:3} train {:.4} val {:.4} {}", r.epoch, r.train_loss, r.val_loss, acc.join(" "));
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_report(out: &Path, records: &[RunRecord]) -> Result<()> {
    let tables = paper_tables(records);
    tables.write(out).with_context(|| format!("writing tables under {}", out.display()))?;
    for r in records {
        if let Some(h) = &r.history {
            write_file(&out.join("curves").join(format!("{}.csv", r.run_id)), curve_export(h, &h.subsets()))?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { out } => {
            let corpus = Corpus::standard();
            write_file(&out.join("dataset.jsonl"), to_jsonl(&corpus.dataset.examples))?;
            write_file(&out.join("source_vocab.json"), corpus.source_vocab.to_json())?;
            write_file(&out.join("target_vocab.json"), corpus.target_vocab.to_json())?;
            eprintln!("wrote {} sentences to {}", corpus.dataset.len(), out.display());
        }
        Command::Split { opts, seed } => {
            let r = opts.resolve()?;
            let k = match (r.experiment, &r.withheld[..]) {
                (ExperimentId::E3, [k]) => Some(*k),
                (ExperimentId::E3, _) => bail!("E3 needs exactly one --withheld count"),
                _ => None,
            };
            let spec = RunSpec { experiment: r.experiment, k, arch: Arch::ALL[0], seed, hyper: r.hyper.clone() };
            let corpus = Corpus::standard();
            let split = make_split(&corpus.holdout(spec.experiment, spec.k)?, &corpus.dataset, seed)?;
            let path = r.out.join(format!("split-{}{}-s{seed}.json", spec.experiment, spec.k.map(|k| format!("-k{k}")).unwrap_or_default()));
            write_file(&path, serde_json::to_string_pretty(&split.manifest())? + "\n")?;
            eprintln!(
                "{}: train {} validation {} test {} withheld {}",
                path.display(),
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                split.generalization_examples().count()
            );
        }
        Command::Train { opts, seed, manifest } => {
            let corpus = Corpus::standard();
            if let Some(path) = manifest {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let out = opts.out.unwrap_or_else(|| PathBuf::from("out")).join("reproduced").join(&m.run_id);
                if out.exists() && !opts.force {
                    bail!("{} already exists (use --force to overwrite)", out.display());
                }
                let (ckpt, history) = reproduce(&m, &corpus)?;
                fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                ckpt.save(&out.join(CHECKPOINT))?;
                write_file(&out.join(HISTORY), history.to_csv())?;
                println!("{}", out.display());
                return Ok(ExitCode::SUCCESS);
            }
            let r = opts.resolve()?;
            let spec = r.single(seed)?;
            let record = execute_run(&spec, &corpus, &r.out.join("runs"), r.existing(), r.fault, &mut EpochLog)?;
            println!("{}", r.out.join("runs").join(&record.run_id).display());
            if let Some(e) = record.error {
                eprintln!("run aborted: {e}");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Eval { run, trace } => {
            let m = read_manifest(&run)?;
            let ckpt = Checkpoint::load(&run.join(CHECKPOINT))?;
            let corpus = Corpus::standard();
            let split = make_split(&corpus.holdout(m.experiment, m.k)?, &corpus.dataset, m.split_seed)?;
            let mut sets: Vec<(String, Vec<anaphora::Example>)> =
                vec![("validation".into(), split.validation.clone()), ("test".into(), split.test.clone())];
            sets.extend(split.generalization.iter().map(|(k, v)| (k.clone(), v.clone())));
            for (name, ex) in &sets {
                println!("{name}\t{:.4}\t{}", evaluate_accuracy(&ckpt, ex)?, ex.len());
            }
            if trace {
                let all: Vec<anaphora::Example> = split.generalization_examples().cloned().collect();
                let enc = encode_examples(&all, ckpt.source_vocab(), ckpt.target_vocab())?;
                for (ex, e) in all.iter().zip(&enc) {
                    let t = ckpt.model.greedy_decode_traced(&e.source, ckpt.model.config().max_decode_len)?;
                    let line = serde_json::json!({
                        "id": ex.id,
                        "source": ex.source,
                        "output": ckpt.target_vocab().decode(&t.tokens)?,
                        "attention": t.attention,
                    });
                    eprintln!("{line}");
                }
            }
        }
        Command::Experiment { opts, resume } => {
            let r = opts.resolve()?;
            let specs = r.sweep().plan()?;
            let existing = if resume { Existing::Reuse } else { r.existing() };
            let corpus = Corpus::standard();
            eprintln!("{} runs, {} worker(s)", specs.len(), r.jobs);
            let records = run_sweep(&specs, &corpus, &r.out, r.jobs, existing, r.fault, &|rec, n, total| {
                let status = match (&rec.error, &rec.history) {
                    (Some(e), _) => format!("aborted: {e}"),
                    (None, Some(h)) => format!("{} epochs, {}", h.final_epoch, h.stop_reason.as_str()),
                    (None, None) => String::new(),
                };
                eprintln!("[{n}/{total}] {} {status}", rec.run_id);
            })?;
            let all = load_records(&r.out)?;
            write_report(&r.out, &all)?;
            let aborted = records.iter().filter(|r| r.error.is_some()).count();
            eprintln!("report written to {}", r.out.display());
            if aborted > 0 {
                eprintln!("{aborted} run(s) aborted");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Gradcheck { examples, seed, inject_fault } => {
            let suite = GradCheckSuite { examples, seed, fault: inject_fault, ..GradCheckSuite::default() };
            let results = suite.run(&Corpus::standard())?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:8} {} max_rel_error={:.3e} examples={}",
                    r.arch.label(),
                    if r.passed() { "PASS" } else { "FAIL" },
                    r.report.max_rel_error(),
                    r.examples
                );
                for p in r.report.failing() {
                    println!("         {} {:.3e}", p.name, p.max_rel_error);
                }
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { out } => {
            let records = load_records(&out)?;
            write_report(&out, &records)?;
            eprintln!("{} runs aggregated into {}", records.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
