use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{apply_strategy, is_gap, AugmentError, PseudoMap, Result, Scope, Strategy};
use crate::corpus::bpe::NULL;
use crate::corpus::{Cell, CorpusError, MultiCorpus, Split, SubwordModel, NULL_TEXT};
use crate::evaluation::{evaluate, Evaluation};
use crate::seq2seq::{ModelConfig, MultiEncoderModel, Translator};
use crate::trainer::{train, Example, TrainConfig, TrainReport};

/// One subword model per language, learned from the original sentences of
/// the training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabularies(BTreeMap<String, SubwordModel>);

impl Vocabularies {
    pub fn train(corpus: &MultiCorpus, merges: i64) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, lang) in corpus.languages().iter().enumerate() {
            map.insert(lang.clone(), SubwordModel::train(corpus.original_texts(i), merges)?);
        }
        Ok(Vocabularies(map))
    }

    pub fn get(&self, language: &str) -> Result<&SubwordModel> {
        self.0
            .get(language)
            .ok_or_else(|| CorpusError::UnknownLanguage(language.to_string()).into())
    }
}

/// Token ids of a cell. Gaps and empty sentences become the single ⟨NULL⟩
/// token.
pub fn encode_cell(subwords: &SubwordModel, cell: &Cell) -> Vec<usize> {
    let ids = match cell {
        Cell::Present { text, .. } if cell.is_usable() => subwords.segment(text),
        _ => Vec::new(),
    };
    if ids.is_empty() {
        vec![NULL]
    } else {
        ids
    }
}

/// Training pairs from every row whose target cell holds real text.
pub fn examples(corpus: &MultiCorpus, sources: &[&str], target: &str, vocabs: &Vocabularies) -> Result<Vec<Example>> {
    let src: Vec<(usize, &SubwordModel)> = sources
        .iter()
        .map(|l| Ok((corpus.language_index(l)?, vocabs.get(l)?)))
        .collect::<Result<_>>()?;
    let tgt = corpus.language_index(target)?;
    let tgt_sw = vocabs.get(target)?;
    Ok(corpus
        .rows()
        .iter()
        .filter(|r| r.cells[tgt].is_usable())
        .map(|r| Example {
            sources: src.iter().map(|&(c, sw)| encode_cell(sw, &r.cells[c])).collect(),
            target: tgt_sw.segment(r.cells[tgt].text().unwrap_or_default()),
        })
        .collect())
}

/// Trains a fresh `sources → target` model. Missing source cells are fed as
/// ⟨NULL⟩.
pub fn train_system(
    train_set: &MultiCorpus,
    valid_set: &MultiCorpus,
    sources: &[&str],
    target: &str,
    vocabs: &Vocabularies,
    config: &TrainConfig,
) -> Result<(Translator, TrainReport)> {
    if sources.is_empty() || sources.contains(&target) || (1..sources.len()).any(|i| sources[..i].contains(&sources[i])) {
        return Err(AugmentError::Contract(format!(
            "invalid roles: sources {sources:?}, target {target}"
        )));
    }
    let train_ex = examples(train_set, sources, target, vocabs)?;
    let valid_ex = examples(valid_set, sources, target, vocabs)?;
    if train_ex.is_empty() || valid_ex.is_empty() {
        return Err(AugmentError::Contract(format!(
            "no training or validation rows with a {target} sentence"
        )));
    }
    let src_sw: Vec<SubwordModel> = sources.iter().map(|l| vocabs.get(l).cloned()).collect::<Result<_>>()?;
    let tgt_sw = vocabs.get(target)?.clone();
    let model_config = ModelConfig {
        source_vocab_sizes: src_sw.iter().map(SubwordModel::vocab_size).collect(),
        target_vocab_size: tgt_sw.vocab_size(),
        embed_dim: config.embed_dim,
        d_lstm: config.d_lstm,
    };
    let model = MultiEncoderModel::init(model_config, config.seed)?;
    let (best, report) = train(model, &train_ex, &valid_ex, config)?;
    let translator = Translator::new(
        best,
        sources.iter().map(|s| s.to_string()).collect(),
        target.to_string(),
        src_sw,
        tgt_sw,
    )?;
    Ok((translator, report))
}

/// Pseudo-translations into `fill_target` for the rows in `scope`, read
/// from the translator's source columns with gaps given as ⟨NULL⟩.
pub fn generate_pseudo(translator: &Translator, corpus: &MultiCorpus, fill_target: &str, scope: Scope) -> Result<PseudoMap> {
    let tgt = corpus.language_index(fill_target)?;
    if translator.target_language != fill_target {
        return Err(AugmentError::Contract(format!(
            "model translates into {}, not {fill_target}",
            translator.target_language
        )));
    }
    let cols: Vec<usize> = translator
        .source_languages
        .iter()
        .map(|l| corpus.language_index(l))
        .collect::<Result<_, _>>()?;
    let rows: Vec<usize> = (0..corpus.len())
        .filter(|&r| scope == Scope::All || is_gap(corpus.cell(r, tgt)))
        .collect();
    let inputs: Vec<Vec<&str>> = rows
        .iter()
        .map(|&r| {
            cols.iter()
                .map(|&c| {
                    let cell = corpus.cell(r, c);
                    if cell.is_usable() {
                        cell.text().unwrap_or_default()
                    } else {
                        NULL_TEXT
                    }
                })
                .collect()
        })
        .collect();
    let texts = translator.translate_texts(&inputs)?;
    Ok(rows.into_iter().zip(texts).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillerKind {
    /// {pivot, target} → helper, the target fed as ⟨NULL⟩ where missing.
    MultiEncoder,
    /// pivot → helper (back-translation baseline).
    OneToOne,
}

impl FillerKind {
    pub fn name(self) -> &'static str {
        match self {
            FillerKind::MultiEncoder => "multi",
            FillerKind::OneToOne => "one_to_one",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// pivot → target.
    OneToOne,
    /// {pivot, helper} → target with missing helper cells as ⟨NULL⟩.
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub pivot: String,
    /// Non-pivot source of the final system, filled at step 2.
    pub helper: String,
    pub target: String,
    pub strategy: Strategy,
    pub filler: FillerKind,
    pub filler_train: TrainConfig,
    pub system_train: TrainConfig,
    pub bpe_merges: i64,
}

impl PipelineConfig {
    fn check(&self, corpus: &MultiCorpus) -> Result<()> {
        let roles = [&self.pivot, &self.helper, &self.target];
        if roles[0] == roles[1] || roles[0] == roles[2] || roles[1] == roles[2] {
            return Err(AugmentError::Contract("pivot, helper and target must be distinct".into()));
        }
        for l in roles {
            corpus.language_index(l)?;
        }
        if corpus.pivot() != self.pivot {
            return Err(AugmentError::Contract(format!(
                "{} is not the corpus pivot ({})",
                self.pivot,
                corpus.pivot()
            )));
        }
        Ok(())
    }
}

/// Where a step's pseudo-translations came from.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    Trained { model: Translator, report: TrainReport },
    /// The system trained at an earlier step.
    Previous { step: usize },
}

/// Everything one pipeline step produced.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineRun {
    pub step: usize,
    pub strategy: Strategy,
    pub generator: Generator,
    /// Language the pseudo-translations were written into.
    pub filled_language: String,
    pub pseudo: PseudoMap,
    pub augmented: MultiCorpus,
    pub system: Translator,
    pub report: TrainReport,
    pub evaluation: Evaluation,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| AugmentError::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn finish_step(
    split: &Split,
    config: &PipelineConfig,
    vocabs: &Vocabularies,
    step: usize,
    generator: Generator,
    filled: &str,
    other: &str,
    pseudo: PseudoMap,
) -> Result<PipelineRun> {
    let augmented = stage("apply_strategy", apply_strategy(&split.train, &pseudo, filled, config.strategy))?;
    let sources = [config.pivot.as_str(), filled];
    let (system, report) = stage(
        "train_system",
        train_system(&augmented, &split.valid, &sources, other, vocabs, &config.system_train),
    )?;
    let evaluation = stage("evaluate", evaluate(&system, &split.test).map_err(Into::into))?;
    Ok(PipelineRun {
        step,
        strategy: config.strategy,
        generator,
        filled_language: filled.to_string(),
        pseudo,
        augmented,
        system,
        report,
        evaluation,
    })
}

/// Train a filler into the helper language, fill the helper column by
/// `config.strategy`, then train and evaluate {pivot, helper} → target.
pub fn run_pipeline(split: &Split, config: &PipelineConfig) -> Result<PipelineRun> {
    Ok(iterative_augment(split, config, 1)?.remove(0))
}

/// Step 1 is [`run_pipeline`]. Step `k > 1` regenerates the helper (odd
/// `k`) or target (even `k`) column with the latest system translating into
/// it, then retrains the system in the opposite direction from scratch.
pub fn iterative_augment(split: &Split, config: &PipelineConfig, n_steps: usize) -> Result<Vec<PipelineRun>> {
    if n_steps == 0 {
        return Err(AugmentError::Contract("at least one step is required".into()));
    }
    config.check(&split.train)?;
    let vocabs = Vocabularies::train(&split.train, config.bpe_merges)?;
    let (a, b) = (config.helper.as_str(), config.target.as_str());

    let filler_sources: Vec<&str> = match config.filler {
        FillerKind::MultiEncoder => vec![&config.pivot, b],
        FillerKind::OneToOne => vec![&config.pivot],
    };
    let (filler, filler_report) = stage(
        "train_filler",
        train_system(&split.train, &split.valid, &filler_sources, a, &vocabs, &config.filler_train),
    )?;
    let pseudo = stage(
        "generate_pseudo",
        generate_pseudo(&filler, &split.train, a, config.strategy.scope()),
    )?;
    let generator = Generator::Trained {
        model: filler,
        report: filler_report,
    };
    let mut runs = vec![finish_step(split, config, &vocabs, 1, generator, a, b, pseudo)?];

    for step in 2..=n_steps {
        let (fill, other) = if step % 2 == 1 { (a, b) } else { (b, a) };
        // latest system translating into `fill`, and the latest pseudo
        // column of `other` to feed it
        let source_run = runs.iter().rev().find(|r| r.system.target_language == fill).expect("earlier step");
        let other_run = runs.iter().rev().find(|r| r.filled_language == other).expect("earlier step");
        let input = stage(
            "generate_pseudo",
            apply_strategy(&split.train, &other_run.pseudo, other, Strategy::FillIn),
        )?;
        let pseudo = stage(
            "generate_pseudo",
            generate_pseudo(&source_run.system, &input, fill, config.strategy.scope()),
        )?;
        let generator = Generator::Previous { step: source_run.step };
        let run = finish_step(split, config, &vocabs, step, generator, fill, other, pseudo)?;
        runs.push(run);
    }
    Ok(runs)
}

/// Trains and evaluates a system without augmentation.
pub fn run_baseline(split: &Split, config: &PipelineConfig, baseline: Baseline) -> Result<(Translator, TrainReport, Evaluation)> {
    config.check(&split.train)?;
    let vocabs = Vocabularies::train(&split.train, config.bpe_merges)?;
    let sources: Vec<&str> = match baseline {
        Baseline::OneToOne => vec![&config.pivot],
        Baseline::Null => vec![&config.pivot, &config.helper],
    };
    let (system, report) = stage(
        "train_system",
        train_system(&split.train, &split.valid, &sources, &config.target, &vocabs, &config.system_train),
    )?;
    let evaluation = stage("evaluate", evaluate(&system, &split.test).map_err(Into::into))?;
    Ok((system, report, evaluation))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
        .into()
    })
}

/// Writes one step's artifacts under `dir` and returns the manifest entries
/// describing them, with paths relative to `dir`.
pub fn write_run(run: &PipelineRun, dir: &Path) -> Result<Vec<(String, String)>> {
    fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut m: Vec<(String, String)> = Vec::new();
    let mut kv = |k: &str, v: String| m.push((k.to_string(), v));
    match &run.generator {
        Generator::Trained { model, report } => {
            model.save(dir.join("filler"))?;
            write(&dir.join("filler/train_report.tsv"), report.to_tsv())?;
            kv("stage.1", "train_filler".into());
            kv("stage.1.sources", model.source_languages.join(","));
            kv("stage.1.target", model.target_language.clone());
            kv("stage.1.checkpoint", "filler".into());
            kv("stage.1.report", "filler/train_report.tsv".into());
            kv("stage.1.best_epoch", report.best_epoch.to_string());
        }
        Generator::Previous { step } => {
            kv("stage.1", "reuse_system".into());
            kv("stage.1.checkpoint", format!("../step{step}/system"));
        }
    }
    let mut audit = String::from("row_id\tlanguage\ttext\n");
    for (row, text) in &run.pseudo {
        audit.push_str(&format!("{row}\t{}\t{text}\n", run.filled_language));
    }
    write(&dir.join("pseudo_audit.tsv"), audit)?;
    kv("stage.2", "generate_pseudo".into());
    kv("stage.2.language", run.filled_language.clone());
    kv("stage.2.scope", format!("{:?}", run.strategy.scope()));
    kv("stage.2.count", run.pseudo.len().to_string());
    kv("stage.2.audit", "pseudo_audit.tsv".into());

    run.augmented.save(dir.join("augmented_train.tsv"))?;
    run.system.save(dir.join("system"))?;
    write(&dir.join("system/train_report.tsv"), run.report.to_tsv())?;
    write(&dir.join("system/hypotheses.txt"), lines(&run.evaluation.hypotheses))?;
    write(&dir.join("system/bleu.txt"), run.evaluation.report.to_key_values())?;
    kv("stage.3", "train_system".into());
    kv("stage.3.strategy", run.strategy.name().into());
    kv("stage.3.corpus", "augmented_train.tsv".into());
    kv("stage.3.rows", run.augmented.len().to_string());
    kv("stage.3.sources", run.system.source_languages.join(","));
    kv("stage.3.target", run.system.target_language.clone());
    kv("stage.3.checkpoint", "system".into());
    kv("stage.3.report", "system/train_report.tsv".into());
    kv("stage.3.best_epoch", run.report.best_epoch.to_string());
    kv("result.step", run.step.to_string());
    kv("result.bleu", run.evaluation.report.bleu.to_string());
    kv("result.report", "system/bleu.txt".into());
    kv("result.hypotheses", "system/hypotheses.txt".into());
    Ok(m)
}

fn lines(xs: &[String]) -> String {
    let mut s = String::new();
    for x in xs {
        s.push_str(x);
        s.push('\n');
    }
    s
}
