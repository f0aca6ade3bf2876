//! Acceptance report: one PASS/FAIL line per criterion on stdout.
//!
//! Runs without the libtest harness so the lines are visible under a plain
//! `cargo test`. A FAIL is reported, not raised, so the rest of the suite
//! still runs; set `ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.
//! Progress goes to stderr. Criteria 4 to 8 train about thirty models and
//! take the better part of an hour on one core; numeric arguments select
//! criteria, as in `cargo test --test acceptance -- 1 2 3 7`.

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use msnmt::augmentation::{
    apply_strategy, run_baseline, run_pipeline, write_run, Baseline, FillerKind, PipelineConfig, PipelineRun,
    PseudoMap, Strategy,
};
use msnmt::cli;
use msnmt::config::ExperimentConfig;
use msnmt::corpus::{Cell, MultiCorpus, Provenance, Row};
use msnmt::evaluation::bleu;
use msnmt::synth::{generate, SynthConfig, HELPER, PIVOT, TARGET};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

#[path = "support/gradcases.rs"]
mod gradcases;

const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const BLEU_TOL: f64 = 1e-6;
const SELF_BLEU_CASES: u32 = 100;
const STRATEGY_CASES: u32 = 256;
const FIXED_SEED: u64 = 1;
const SEEDS: [u64; 3] = [1, 2, 3];
const CRIPPLED_FILLER_EPOCHS: usize = 2;
const ITERATIONS: usize = 4;

/// Shared settings of every synthetic-task model. The learning rate is the
/// smallest that got all three seeds past the initial plateau within a few
/// epochs; early stopping then picks the epoch.
fn experiment_text(seed: u64, dir: &Path, extra: &str) -> String {
    format!(
        "train={0}/train.tsv\nvalid={0}/valid.tsv\ntest={0}/test.tsv\n\
         helper={HELPER}\ntarget={TARGET}\nstrategy=fill_in\nfiller=multi\n\
         embed_dim=32\nd_lstm=64\nlearning_rate=0.003\nclip_norm=5\nbatch_size=32\n\
         patience=3\nmax_epochs=30\nbpe_merges=100\nseed={seed}\n{extra}",
        dir.display()
    )
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = Result<Outcome, String>;

fn msnmt(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["msnmt"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

/// No regression files: this target has no source path for proptest to
/// key them on.
fn runner_config(cases: u32) -> RunnerConfig {
    RunnerConfig {
        cases,
        failure_persistence: None,
        ..RunnerConfig::default()
    }
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

// 1

fn gradients() -> Check {
    let start = Instant::now();
    let mut failed = Vec::new();
    let cases = gradcases::all();
    for (name, case) in &cases {
        if let Err(e) = panic::catch_unwind(case) {
            failed.push(format!("{name}: {}", panic_message(e)));
        }
    }
    let took = start.elapsed();
    let pass = failed.is_empty() && took < GRADCHECK_BUDGET;
    let mut detail = format!(
        "{} groups of op checks plus the 2-encoder model, step 1e-3, rel err < 1e-3, {:.2}s (budget {}s)",
        cases.len() - 1,
        took.as_secs_f64(),
        GRADCHECK_BUDGET.as_secs()
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failed: {}", failed.join("; ")));
    }
    Ok(outcome(pass, detail))
}

// 2

fn bleu_oracle() -> Check {
    let geo = |ps: [f64; 4]| 100.0 * (ps.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp();
    let cases: Vec<(&str, Vec<&str>, Vec<&str>, f64)> = vec![
        ("identical", vec!["a b c d e"], vec!["a b c d e"], 100.0),
        // unigram 2/7 after clipping, no matching bigram
        ("clipping", vec!["the the the the the the the"], vec!["the cat is on the mat"], 0.0),
        ("brevity", vec!["a b c d"], vec!["a b c d e f"], 100.0 * (1.0f64 - 6.0 / 4.0).exp()),
        (
            "two sentences",
            vec!["a b c d e", "a b c d"],
            vec!["a b x d e", "a b c d"],
            geo([8.0 / 9.0, 5.0 / 7.0, 2.0 / 5.0, 1.0 / 3.0]),
        ),
        ("long hypothesis", vec!["a b c d e f"], vec!["a b c d"], geo([4.0 / 6.0, 3.0 / 5.0, 2.0 / 4.0, 1.0 / 3.0])),
        ("empty hypothesis", vec![""], vec!["a b c d"], 0.0),
    ];
    let mut bad = Vec::new();
    for (name, h, r, want) in &cases {
        let got = bleu(h, r).map_err(|e| format!("{name}: {e}"))?;
        if (got.bleu - want).abs() > BLEU_TOL {
            bad.push(format!("{name}: got {} want {want}", got.bleu));
        }
    }
    let clip = bleu(&cases[1].1, &cases[1].2).map_err(|e| e.to_string())?;
    if (clip.precisions[0] - 2.0 / 7.0).abs() > BLEU_TOL {
        bad.push(format!("clipping: p1 {} want 2/7", clip.precisions[0]));
    }

    let mut runner = TestRunner::new(runner_config(SELF_BLEU_CASES));
    let sentence = prop::collection::vec("[a-f]{1,3}", 1..20).prop_map(|ws| ws.join(" "));
    let property = runner.run(&sentence, |s| {
        let b = bleu(&[&s], &[&s]).unwrap().bleu;
        prop_assert!((b - 100.0).abs() < BLEU_TOL, "bleu({s:?}, itself) = {b}");
        Ok(())
    });
    if let Err(e) = property {
        bad.push(format!("self-BLEU property: {e}"));
    }
    let detail = format!(
        "{} fixed cases within {BLEU_TOL:e}, clipped p1 = 2/7, bleu(h,h) = 100 over {SELF_BLEU_CASES} random sequences",
        cases.len()
    );
    Ok(if bad.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", bad.join("; ")))
    })
}

// 3

fn corpus_strategy() -> impl proptest::strategy::Strategy<Value = MultiCorpus> {
    let text = "[a-d]{1,4}( [a-d]{1,4}){0,3}";
    let cell = prop_oneof![
        3 => Just(Cell::Missing),
        4 => text.prop_map(Cell::original),
        1 => text.prop_map(Cell::pseudo),
        1 => Just(Cell::null_filled()),
    ];
    let row = (text, cell.clone(), cell).prop_map(|(p, h, t)| Row::new(vec![Cell::original(p), h, t]));
    prop::collection::vec(row, 0..16)
        .prop_map(|rows| MultiCorpus::new(vec!["p".into(), "h".into(), "t".into()], rows).unwrap())
}

fn strategy_algebra() -> Check {
    let mut runner = TestRunner::new(runner_config(STRATEGY_CASES));
    let input = (corpus_strategy(), 0usize..3);
    let result = runner.run(&input, |(c, which)| {
        let strategy = Strategy::ALL[which];
        let pseudo: PseudoMap = (0..c.len()).map(|r| (r, format!("pseudo {r}"))).collect();
        let out = apply_strategy(&c, &pseudo, "h", strategy).unwrap();
        let originals: Vec<usize> = (0..c.len())
            .filter(|&r| c.cell(r, 1).provenance() == Some(Provenance::Original))
            .collect();
        let expected = match strategy {
            Strategy::FillInAdd => c.len() + originals.len(),
            _ => c.len(),
        };
        prop_assert_eq!(out.len(), expected);
        for (i, row) in out.rows().iter().enumerate() {
            let src = if i < c.len() { i } else { originals[i - c.len()] };
            prop_assert_eq!(&row.cells[0], &c.rows()[src].cells[0], "pivot of row {}", i);
            prop_assert_eq!(&row.cells[2], &c.rows()[src].cells[2], "target of row {}", i);
            prop_assert!(!row.cells[1].is_missing(), "row {} still missing", i);
        }
        prop_assert_eq!(out.stats().languages[1].missing, 0);
        Ok(())
    });
    let detail = format!(
        "{STRATEGY_CASES} random corpora x 3 strategies: row counts n / n / n+|Original|, pivot and target untouched, no Missing left"
    );
    Ok(match result {
        Ok(()) => outcome(true, detail),
        Err(e) => outcome(false, format!("{detail}; {e}")),
    })
}

// 4 and 5

struct SeedResult {
    one_to_one: f64,
    null: f64,
    fill_in: f64,
    back_translation: f64,
    crippled_fill_in: f64,
    crippled_replace: f64,
    fill_in_run: PipelineRun,
}

fn seed_config(seed: u64, data: &Path) -> Result<PipelineConfig, String> {
    let text = experiment_text(seed, data, "");
    let config = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
    config.pipeline_config(PIVOT).map_err(|e| e.to_string())
}

fn run_seed(seed: u64, root: &Path) -> Result<SeedResult, String> {
    let data = root.join(format!("data{seed}"));
    let (code, _, err) = msnmt(&["synth", "--seed", &seed.to_string(), "--out", p(&data)]);
    if code != 0 {
        return Err(format!("synth: {err}"));
    }
    let split = generate(&SynthConfig { seed, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let pc = seed_config(seed, &data)?;
    let say = |what: &str, v: f64| eprintln!("  seed {seed} {what:<22} BLEU {v:.2}");
    let err = |e: msnmt::augmentation::AugmentError| e.to_string();

    let one_to_one = run_baseline(&split, &pc, Baseline::OneToOne).map_err(err)?.2.report.bleu;
    say("one_to_one", one_to_one);
    let null = run_baseline(&split, &pc, Baseline::Null).map_err(err)?.2.report.bleu;
    say("null", null);
    let fill_in_run = run_pipeline(&split, &pc).map_err(err)?;
    let fill_in = fill_in_run.evaluation.report.bleu;
    say("fill_in", fill_in);
    let bt = PipelineConfig { filler: FillerKind::OneToOne, ..pc.clone() };
    let back_translation = run_pipeline(&split, &bt).map_err(err)?.evaluation.report.bleu;
    say("back-translation", back_translation);

    let mut crippled = PipelineConfig { filler: FillerKind::OneToOne, ..pc.clone() };
    crippled.filler_train.max_epochs = CRIPPLED_FILLER_EPOCHS;
    let crippled_fill_in = run_pipeline(&split, &crippled).map_err(err)?.evaluation.report.bleu;
    say("crippled fill_in", crippled_fill_in);
    crippled.strategy = Strategy::FillInReplace;
    let crippled_replace = run_pipeline(&split, &crippled).map_err(err)?.evaluation.report.bleu;
    say("crippled fill_in_replace", crippled_replace);

    Ok(SeedResult {
        one_to_one,
        null,
        fill_in,
        back_translation,
        crippled_fill_in,
        crippled_replace,
        fill_in_run,
    })
}

fn orderings(results: &BTreeMap<u64, SeedResult>) -> Check {
    let fixed = &results[&FIXED_SEED];
    let med = |f: fn(&SeedResult) -> f64| median(results.values().map(f).collect());
    let (o, n, f, b) = (
        med(|r| r.one_to_one),
        med(|r| r.null),
        med(|r| r.fill_in),
        med(|r| r.back_translation),
    );
    let holds = |o: f64, n: f64, f: f64, b: f64| [n > o, f >= n, f > b];
    let at_fixed = holds(fixed.one_to_one, fixed.null, fixed.fill_in, fixed.back_translation);
    let at_median = holds(o, n, f, b);
    let marks = |h: [bool; 3]| {
        ["a", "b", "c"]
            .iter()
            .zip(h)
            .map(|(k, ok)| format!("{k}{}", if ok { "+" } else { "-" }))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let detail = format!(
        "seed {FIXED_SEED}: one_to_one {:.2}, null {:.2}, fill_in {:.2}, back-translation {:.2} [{}]; \
         median of seeds {SEEDS:?}: {o:.2}, {n:.2}, {f:.2}, {b:.2} [{}]; \
         need (a) null > one_to_one, (b) fill_in >= null, (c) fill_in > back-translation",
        fixed.one_to_one,
        fixed.null,
        fixed.fill_in,
        fixed.back_translation,
        marks(at_fixed),
        marks(at_median)
    );
    Ok(outcome(at_fixed.iter().chain(&at_median).all(|&x| x), detail))
}

fn degradation(results: &BTreeMap<u64, SeedResult>) -> Check {
    let fixed = &results[&FIXED_SEED];
    let f = median(results.values().map(|r| r.crippled_fill_in).collect());
    let r = median(results.values().map(|r| r.crippled_replace).collect());
    let pass = fixed.crippled_replace < fixed.crippled_fill_in && r < f;
    Ok(outcome(
        pass,
        format!(
            "{CRIPPLED_FILLER_EPOCHS}-epoch one-to-one filler; seed {FIXED_SEED}: fill_in_replace {:.2} vs fill_in {:.2}; \
             median: {r:.2} vs {f:.2}; need fill_in_replace < fill_in",
            fixed.crippled_replace, fixed.crippled_fill_in
        ),
    ))
}

// 6 and 8

fn files_under(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| format!("{}: {e}", d.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

/// Relative paths whose contents differ or exist on one side only.
fn differences(a: &Path, b: &Path) -> Result<Vec<String>, String> {
    let (fa, fb) = (files_under(a)?, files_under(b)?);
    let mut diff: Vec<String> = fa
        .iter()
        .filter(|(k, v)| fb.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    diff.extend(fb.keys().filter(|k| !fa.contains_key(*k)).map(|k| k.display().to_string()));
    Ok(diff)
}

struct IterativeRun {
    dir: PathBuf,
    rerun: PathBuf,
}

fn iterative(root: &Path) -> Result<(Outcome, IterativeRun), String> {
    let data = root.join(format!("data{FIXED_SEED}"));
    let cfg = root.join("iterative.cfg");
    fs::write(&cfg, experiment_text(FIXED_SEED, &data, &format!("iterations={ITERATIONS}\n"))).map_err(|e| e.to_string())?;
    let dir = root.join("iterative");
    let (code, out, err) = msnmt(&["pipeline", "--config", p(&cfg), "--out", p(&dir)]);
    if code != 0 {
        return Err(format!("pipeline exited {code}: {err}"));
    }
    eprint!("{out}");
    let mut problems = Vec::new();
    let printed = out.lines().filter(|l| l.starts_with("BLEU=")).count();
    if printed != ITERATIONS {
        problems.push(format!("{printed} BLEU lines printed"));
    }
    let top = fs::read_to_string(dir.join("manifest.txt")).map_err(|e| e.to_string())?;
    let recorded = top.lines().filter(|l| l.starts_with("result.step") && l.contains(".bleu=")).count();
    if recorded != ITERATIONS {
        problems.push(format!("{recorded} BLEU entries in the top manifest"));
    }

    // every step manifest is a complete config differing only in `iterations`
    let mut base = None;
    for k in 1..=ITERATIONS {
        let text = fs::read_to_string(dir.join(format!("step{k}/manifest.txt"))).map_err(|e| e.to_string())?;
        let mut config = ExperimentConfig::parse(&text).map_err(|e| format!("step{k} manifest: {e}"))?;
        if config.iterations != k {
            problems.push(format!("step{k} manifest has iterations={}", config.iterations));
        }
        for f in [&config.train, &config.valid, &config.test] {
            if !f.as_ref().is_some_and(|f| f.exists()) {
                problems.push(format!("step{k} manifest names a missing corpus file"));
            }
        }
        config.iterations = 1;
        let canonical = config.to_manifest_string();
        match &base {
            None => base = Some(canonical),
            Some(b) if *b != canonical => problems.push(format!("step{k} manifest differs from step1 beyond iterations")),
            Some(_) => {}
        }
    }

    // rerun step 1 from its manifest alone
    let rerun = root.join("rerun_step1");
    let (code, out, err) = msnmt(&["pipeline", "--config", p(&dir.join("step1/manifest.txt")), "--out", p(&rerun)]);
    if code != 0 {
        problems.push(format!("rerunning step1/manifest.txt exited {code}: {err}"));
    } else {
        eprint!("  rerun of step 1: {out}");
    }

    let detail = format!(
        "{ITERATIONS} steps completed, {printed} BLEU lines, {recorded} manifest BLEU entries, step manifests parse and \
         differ only in iterations, step1 manifest reran (exit {code})"
    );
    let o = if problems.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", problems.join("; ")))
    };
    Ok((o, IterativeRun { dir, rerun }))
}

fn determinism(root: &Path, it: &IterativeRun, fixed: &PipelineRun) -> Check {
    let step1 = it.dir.join("step1");
    if !it.rerun.join("manifest.txt").exists() {
        return Ok(outcome(false, "the rerun did not complete"));
    }
    let mut problems = differences(&step1, &it.rerun)?;

    // the library run of criterion 4 must agree with both
    let library = root.join("library_seed1");
    write_run(fixed, &library).map_err(|e| e.to_string())?;
    for sub in ["system", "filler"] {
        for d in differences(&step1.join(sub), &library.join(sub))? {
            problems.push(format!("library {sub}/{d}"));
        }
    }
    let files = files_under(&step1)?;
    let checkpoints = files.keys().filter(|k| k.extension().is_some_and(|e| e == "bin")).count();
    let bleu_text = String::from_utf8_lossy(&files[Path::new("system/bleu.txt")]).lines().next().unwrap_or("").to_string();
    let detail = format!(
        "seed {FIXED_SEED} pipeline rerun: {} files compared ({checkpoints} parameter tensors, manifest, {bleu_text}), \
         plus filler and system checkpoints of the in-process run",
        files.len()
    );
    Ok(if problems.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; differing: {}", problems.join(", ")))
    })
}

// 7

fn stats_fidelity(root: &Path) -> Check {
    let write = |name: &str, present: usize, missing: usize| -> Result<PathBuf, String> {
        let mut s = String::with_capacity(8 * (present + missing) + 8);
        s.push_str("en\thr\n");
        for _ in 0..present {
            s.push_str("a\tb\n");
        }
        for _ in 0..missing {
            s.push_str("a\t\n");
        }
        let path = root.join(name);
        fs::write(&path, s).map_err(|e| e.to_string())?;
        Ok(path)
    };
    // The reference hr figures are 118949 sentences, 35564 missing, 29.9%.
    // If 118949 counts present rows only, 29.9% is missing/present; if it
    // counts all rows, it is missing/(present+missing).
    let as_present = write("hr_present.tsv", 118949, 35564)?;
    let as_rows = write("hr_rows.tsv", 118949 - 35564, 35564)?;
    let (c1, o1, e1) = msnmt(&["stats", p(&as_present)]);
    let (c2, o2, e2) = msnmt(&["stats", p(&as_rows)]);
    if c1 != 0 || c2 != 0 {
        return Err(format!("stats failed: {e1}{e2}"));
    }
    let line = |o: &str| o.lines().find(|l| l.starts_with("hr:")).unwrap_or("").to_string();
    let (l1, l2) = (line(&o1), line(&o2));
    let pass = l1.contains("missing 35564 (23.0% of all rows, 29.9% of present)")
        && l2.contains("missing 35564 (29.9% of all rows");
    Ok(outcome(
        pass,
        format!(
            "118949 rows with 35564 missing -> \"{l2}\"; 118949 present + 35564 missing -> \"{l1}\" \
             (there 29.9% is missing/present)"
        ),
    ))
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let root = tempfile::tempdir().expect("temp dir");
    let root = root.path();
    let mut lines: BTreeMap<u32, bool> = BTreeMap::new();
    let mut record = |n: u32, name: &str, r: Check| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!("{} criterion {n} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        lines.insert(n, pass);
    };

    if want(1) {
        record(1, "gradient correctness", gradients());
    }
    if want(2) {
        record(2, "BLEU oracle", bleu_oracle());
    }
    if want(3) {
        record(3, "strategy algebra", strategy_algebra());
    }
    if want(7) {
        record(7, "corpus stats fidelity", stats_fidelity(root));
    }

    let mut results = BTreeMap::new();
    let mut seed_error = None;
    if want(4) || want(5) || want(8) {
        for seed in SEEDS {
            let start = Instant::now();
            match run_seed(seed, root) {
                Ok(r) => {
                    results.insert(seed, r);
                    eprintln!("  seed {seed} done in {:.0}s", start.elapsed().as_secs_f64());
                }
                Err(e) => {
                    seed_error = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
    }
    if want(4) {
        record(4, "synthetic-task ordering", seed_error.clone().map_or_else(|| orderings(&results), Err));
    }
    if want(5) {
        record(5, "low-quality pseudo degradation", seed_error.clone().map_or_else(|| degradation(&results), Err));
    }

    if want(6) || want(8) {
        let data = root.join(format!("data{FIXED_SEED}"));
        if !data.exists() {
            msnmt(&["synth", "--seed", &FIXED_SEED.to_string(), "--out", p(&data)]);
        }
        match iterative(root) {
            Ok((o, it)) => {
                if want(6) {
                    record(6, "iterative mechanism", Ok(o));
                }
                if want(8) {
                    let check = match results.get(&FIXED_SEED) {
                        Some(r) => determinism(root, &it, &r.fill_in_run),
                        None => Err("criterion 4 did not produce a seed 1 run".into()),
                    };
                    record(8, "determinism", check);
                }
            }
            Err(e) => {
                if want(6) {
                    record(6, "iterative mechanism", Err(e.clone()));
                }
                if want(8) {
                    record(8, "determinism", Err(format!("no iterative run to compare: {e}")));
                }
            }
        }
    }

    let failed = lines.values().filter(|pass| !**pass).count();
    println!("acceptance: {} passed, {failed} failed", lines.len() - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
