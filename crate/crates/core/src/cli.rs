//! The `msnmt` command line.
//!
//! Exit codes: 0 on success, 2 for usage, input and validation errors, 3
//! when training diverges.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::augmentation::{iterative_augment, run_baseline, write_run, AugmentError, Baseline, PipelineRun};
use crate::config::{ExperimentConfig, TrainMode};
use crate::corpus::{MultiCorpus, Split};
use crate::evaluation::bleu;
use crate::seq2seq::Translator;
use crate::synth::{generate, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "msnmt", version, about = "Multi-source NMT with pseudo-translation augmentation")]
struct Cli {
    /// Experiment configuration (key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Machine-readable tab-separated output.
    #[arg(long, global = true)]
    tsv: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-language present/missing counts of a corpus.
    Stats { corpus: PathBuf },
    /// Train one system (mode=null or mode=one_to_one).
    Train,
    /// Translate parallel source files, one per encoder, with a checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        sources: Vec<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score { hypotheses: PathBuf, references: PathBuf },
    /// Filler training, pseudo-translation and final training.
    Pipeline,
    /// Write a synthetic train/valid/test triple under the output directory.
    Synth {
        #[arg(long, default_value_t = 3000)]
        rows: usize,
    },
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        let code = if e.is_divergence() { EXIT_NUMERIC } else { EXIT_USAGE };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    match &cli.command {
        Command::Stats { corpus } => cmd_stats(corpus, cli.tsv, out),
        Command::Score { hypotheses, references } => cmd_score(hypotheses, references, cli.tsv, out),
        Command::Translate { checkpoint, sources } => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_translate(checkpoint, sources, &dir, out)
        }
        Command::Train => cmd_train(&load_config(cli)?, out),
        Command::Pipeline => cmd_pipeline(&load_config(cli)?, out),
        Command::Synth { rows } => {
            let config = load_config(cli)?;
            cmd_synth(*rows, config.seed(), &config.out, out)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.train_config.seed = s;
    }
    if let Some(o) = &cli.out {
        config.out = o.clone();
    }
    Ok(config)
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> CmdResult {
    write!(out, "{text}").map_err(|e| Failure::usage(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Failure::usage(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn read_lines(path: &Path) -> Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn cmd_stats(path: &Path, tsv: bool, out: &mut dyn Write) -> CmdResult {
    let corpus = MultiCorpus::load(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    let stats = corpus.stats();
    if tsv {
        emit(out, stats.to_tsv())
    } else {
        emit(out, format!("{stats}"))
    }
}

fn cmd_score(hyp: &Path, reference: &Path, tsv: bool, out: &mut dyn Write) -> CmdResult {
    let h = read_lines(hyp)?;
    let r = read_lines(reference)?;
    if h.len() != r.len() {
        return Err(Failure::usage(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            h.len(),
            reference.display(),
            r.len()
        )));
    }
    let report = bleu(&h, &r).map_err(Failure::usage)?;
    if tsv {
        let tsv_lines: String = report
            .to_key_values()
            .lines()
            .map(|l| l.replacen('=', "\t", 1) + "\n")
            .collect();
        emit(out, tsv_lines)
    } else {
        emit(out, report.to_key_values())
    }
}

fn cmd_translate(checkpoint: &Path, sources: &[PathBuf], dir: &Path, out: &mut dyn Write) -> CmdResult {
    let translator = Translator::load(checkpoint).map_err(Failure::usage)?;
    let n = translator.model.n_sources();
    if sources.len() != n {
        return Err(Failure::usage(format!("the checkpoint has {n} encoders but {} source files were given", sources.len())));
    }
    let files = sources.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some((i, f)) = files.iter().enumerate().find(|(_, f)| f.len() != files[0].len()) {
        return Err(Failure::usage(format!(
            "{} has {} lines but {} has {}",
            sources[i].display(),
            f.len(),
            sources[0].display(),
            files[0].len()
        )));
    }
    let rows: Vec<Vec<&str>> = (0..files[0].len()).map(|r| files.iter().map(|f| f[r].as_str()).collect()).collect();
    let hyps = translator.translate_texts(&rows).map_err(Failure::usage)?;
    let path = dir.join("hypotheses.txt");
    let body: String = hyps.iter().map(|h| format!("{h}\n")).collect();
    write_file(&path, body)?;
    emit(out, format!("wrote {} lines to {}\n", hyps.len(), path.display()))
}

fn load_split(config: &ExperimentConfig) -> Result<Split, Failure> {
    let load = |p: &Path| MultiCorpus::load(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display())));
    match (&config.corpus, &config.train, &config.valid, &config.test) {
        (None, Some(tr), Some(va), Some(te)) => Ok(Split {
            train: load(tr)?,
            valid: load(va)?,
            test: load(te)?,
        }),
        (Some(c), None, None, None) => load(c)?.split(config.split, config.seed()).map_err(Failure::usage),
        _ => Err(Failure::usage("give either corpus or all of train, valid and test")),
    }
}

fn cmd_train(config: &ExperimentConfig, out: &mut dyn Write) -> CmdResult {
    let split = load_split(config)?;
    let pc = config.pipeline_config(split.train.pivot()).map_err(Failure::usage)?;
    let baseline = match config.mode {
        TrainMode::OneToOne => Baseline::OneToOne,
        TrainMode::Null => Baseline::Null,
    };
    let (system, report, eval) = run_baseline(&split, &pc, baseline)?;
    let dir = &config.out;
    system.save(dir.join("system")).map_err(Failure::usage)?;
    write_file(&dir.join("system/train_report.tsv"), report.to_tsv())?;
    write_file(&dir.join("system/hypotheses.txt"), eval.hypotheses.iter().map(|h| format!("{h}\n")).collect::<String>())?;
    write_file(&dir.join("system/bleu.txt"), eval.report.to_key_values())?;
    let mut manifest = config.to_manifest_string();
    manifest.push_str(&format!(
        "stage.1=train_system\nstage.1.sources={}\nstage.1.target={}\nstage.1.checkpoint=system\nstage.1.report=system/train_report.tsv\nstage.1.best_epoch={}\nresult.bleu={}\n",
        system.source_languages.join(","),
        system.target_language,
        report.best_epoch,
        eval.report.bleu
    ));
    write_file(&dir.join("manifest.txt"), manifest)?;
    emit(out, format!("BLEU={}\n", eval.report.bleu))
}

fn manifest_text(config: &ExperimentConfig, iterations: usize, entries: &[(String, String)]) -> String {
    let resolved = ExperimentConfig {
        iterations,
        ..config.clone()
    };
    let mut s = resolved.to_manifest_string();
    for (k, v) in entries {
        s.push_str(&format!("{k}={v}\n"));
    }
    s
}

fn cmd_pipeline(config: &ExperimentConfig, out: &mut dyn Write) -> CmdResult {
    let split = load_split(config)?;
    let pc = config.pipeline_config(split.train.pivot()).map_err(Failure::usage)?;
    let runs: Vec<PipelineRun> = iterative_augment(&split, &pc, config.iterations)?;
    let dir = &config.out;
    if runs.len() == 1 {
        let entries = write_run(&runs[0], dir)?;
        write_file(&dir.join("manifest.txt"), manifest_text(config, 1, &entries))?;
    } else {
        let mut summary = Vec::new();
        for run in &runs {
            let step_dir = dir.join(format!("step{}", run.step));
            let entries = write_run(run, &step_dir)?;
            write_file(&step_dir.join("manifest.txt"), manifest_text(config, run.step, &entries))?;
            summary.push((format!("result.step{}.bleu", run.step), run.evaluation.report.bleu.to_string()));
            summary.push((format!("result.step{}.manifest", run.step), format!("step{}/manifest.txt", run.step)));
        }
        write_file(&dir.join("manifest.txt"), manifest_text(config, runs.len(), &summary))?;
    }
    for run in &runs {
        emit(
            out,
            format!(
                "BLEU={}\tstep={}\ttarget={}\n",
                run.evaluation.report.bleu, run.step, run.system.target_language
            ),
        )?;
    }
    Ok(())
}

fn cmd_synth(rows: usize, seed: u64, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let split = generate(&SynthConfig {
        train_rows: rows,
        valid_rows: (rows / 10).max(1),
        test_rows: (rows / 10).max(1),
        seed,
        ..SynthConfig::default()
    })
    .map_err(Failure::usage)?;
    for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        write_file(&dir.join(format!("{name}.tsv")), part.to_file_string())?;
    }
    emit(out, format!("wrote train/valid/test corpora to {}\n", dir.display()))
}
