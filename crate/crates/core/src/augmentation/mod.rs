//! Filling and replacing translations of an incomplete corpus with
//! pseudo-translations, and the train/generate/retrain pipeline built on it.

mod pipeline;

pub use pipeline::{
    encode_cell, examples, generate_pseudo, iterative_augment, run_baseline, run_pipeline, train_system,
    write_run, Baseline, FillerKind, Generator, PipelineConfig, PipelineRun, Vocabularies,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Cell, CorpusError, MultiCorpus, Provenance};
use crate::evaluation::EvalError;
use crate::seq2seq::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{0}")]
    Contract(String),
    #[error("no pseudo-translation for row {row} of {language}")]
    MissingPseudo { row: usize, language: String },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<AugmentError>,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl AugmentError {
    /// True when the failure is a numeric divergence during training.
    pub fn is_divergence(&self) -> bool {
        match self {
            AugmentError::Train(TrainError::Diverged { .. }) => true,
            AugmentError::Stage { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

/// Pseudo-translations keyed by row index.
pub type PseudoMap = BTreeMap<usize, String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Fill missing cells only.
    FillIn,
    /// Fill missing cells and overwrite every original cell.
    FillInReplace,
    /// Fill missing cells and append a pseudo copy of every row with an
    /// original cell.
    FillInAdd,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::FillIn, Strategy::FillInReplace, Strategy::FillInAdd];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FillIn => "fill_in",
            Strategy::FillInReplace => "fill_in_replace",
            Strategy::FillInAdd => "fill_in_add",
        }
    }

    /// Rows that need a pseudo-translation under this strategy.
    pub fn scope(self) -> Scope {
        match self {
            Strategy::FillIn => Scope::MissingOnly,
            _ => Scope::All,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Strategy::ALL.iter().map(|x| x.name()).collect();
            format!("unknown strategy {s:?}; valid strategies: {}", names.join(", "))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    MissingOnly,
    All,
}

/// Missing and ⟨NULL⟩-filled cells both count as gaps.
fn is_gap(cell: &Cell) -> bool {
    matches!(cell, Cell::Missing) || cell.provenance() == Some(Provenance::NullFilled)
}

/// Rewrites the `language` column of `corpus` with pseudo-translations.
///
/// Only that column changes; `FillInAdd` appends its duplicates after the
/// existing rows, in row order. Cells that already hold pseudo text are left
/// alone.
pub fn apply_strategy(corpus: &MultiCorpus, pseudo: &PseudoMap, language: &str, strategy: Strategy) -> Result<MultiCorpus> {
    let col = corpus.language_index(language)?;
    if col == 0 {
        return Err(AugmentError::Contract(format!(
            "the pivot language {language} cannot be augmented"
        )));
    }
    let lookup = |row: usize| {
        pseudo.get(&row).ok_or_else(|| AugmentError::MissingPseudo {
            row,
            language: language.to_string(),
        })
    };
    let mut out = corpus.clone();
    let mut added = Vec::new();
    for (i, row) in out.rows_mut().iter_mut().enumerate() {
        let cell = &mut row.cells[col];
        if is_gap(cell) {
            *cell = Cell::pseudo(lookup(i)?.clone());
        } else if cell.provenance() == Some(Provenance::Original) {
            match strategy {
                Strategy::FillIn => {}
                Strategy::FillInReplace => *cell = Cell::pseudo(lookup(i)?.clone()),
                Strategy::FillInAdd => {
                    let mut copy = row.clone();
                    copy.cells[col] = Cell::pseudo(lookup(i)?.clone());
                    added.push(copy);
                }
            }
        }
    }
    out.rows_mut().extend(added);
    Ok(out)
}
