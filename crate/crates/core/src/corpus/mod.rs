//! Incomplete multilingual corpora.
//!
//! A [`MultiCorpus`] is a table of aligned rows with one cell per language.
//! Column 0 is the pivot language and must be present in every row; any
//! other cell may be [`Cell::Missing`].
//!
//! On disk a corpus is UTF-8 text: a header line of tab-separated language
//! codes followed by one tab-separated row per line, with an empty cell
//! meaning "missing".

pub mod bpe;
mod stats;

pub use bpe::SubwordModel;
pub use stats::{CorpusStats, LanguageStats};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Literal text of a null-filled sentence; segments to the reserved
/// ⟨NULL⟩ id.
pub const NULL_TEXT: &str = "⟨NULL⟩";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("row {row}: pivot language {language} is missing")]
    MissingPivot { row: usize, language: String },
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Pseudo,
    NullFilled,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cell {
    Missing,
    Present { text: String, provenance: Provenance },
}

impl Cell {
    pub fn original(text: impl Into<String>) -> Self {
        Cell::Present {
            text: text.into(),
            provenance: Provenance::Original,
        }
    }

    pub fn pseudo(text: impl Into<String>) -> Self {
        Cell::Present {
            text: text.into(),
            provenance: Provenance::Pseudo,
        }
    }

    pub fn null_filled() -> Self {
        Cell::Present {
            text: NULL_TEXT.to_string(),
            provenance: Provenance::NullFilled,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Cell::Missing => None,
            Cell::Present { text, .. } => Some(text),
        }
    }

    pub fn provenance(&self) -> Option<Provenance> {
        match self {
            Cell::Missing => None,
            Cell::Present { provenance, .. } => Some(*provenance),
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    /// Present with real text: original or pseudo, not a ⟨NULL⟩ filler.
    pub fn is_usable(&self) -> bool {
        matches!(
            self.provenance(),
            Some(Provenance::Original | Provenance::Pseudo)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Row {
    pub cells: Vec<Cell>,
}

impl Row {
    pub fn new(cells: Vec<Cell>) -> Self {
        Row { cells }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiCorpus {
    languages: Vec<String>,
    rows: Vec<Row>,
}

impl MultiCorpus {
    /// Validates the row shape and the pivot-completeness invariant.
    pub fn new(languages: Vec<String>, rows: Vec<Row>) -> Result<Self> {
        if languages.is_empty() {
            return Err(CorpusError::Contract("a corpus needs at least one language".into()));
        }
        for (i, l) in languages.iter().enumerate() {
            if l.is_empty() || languages[..i].contains(l) {
                return Err(CorpusError::Contract(format!("invalid or duplicate language code {l:?}")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.cells.len() != languages.len() {
                return Err(CorpusError::Contract(format!(
                    "row {i} has {} cells, expected {}",
                    row.cells.len(),
                    languages.len()
                )));
            }
            if !row.cells[0].is_usable() {
                return Err(CorpusError::MissingPivot {
                    row: i,
                    language: languages[0].clone(),
                });
            }
        }
        Ok(MultiCorpus { languages, rows })
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn pivot(&self) -> &str {
        &self.languages[0]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn language_index(&self, lang: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == lang)
            .ok_or_else(|| CorpusError::UnknownLanguage(lang.to_string()))
    }

    pub fn cell(&self, row: usize, lang: usize) -> &Cell {
        &self.rows[row].cells[lang]
    }

    /// Present, original-provenance texts of one language.
    pub fn original_texts(&self, lang: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().filter_map(move |r| match &r.cells[lang] {
            Cell::Present {
                text,
                provenance: Provenance::Original,
            } => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines.next().unwrap_or("");
        if header.trim().is_empty() {
            return Err(CorpusError::Parse {
                line: 1,
                message: "missing header of language codes".into(),
            });
        }
        let languages: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            if line.is_empty() {
                // Only a trailing newline is allowed to produce an empty line.
                continue;
            }
            let cells: Vec<Cell> = line
                .split('\t')
                .map(|c| if c.is_empty() { Cell::Missing } else { Cell::original(c) })
                .collect();
            if cells.len() != languages.len() {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("expected {} cells, found {}", languages.len(), cells.len()),
                });
            }
            if cells[0].is_missing() {
                return Err(CorpusError::MissingPivot {
                    row: rows.len(),
                    language: languages[0].clone(),
                });
            }
            rows.push(Row::new(cells));
        }
        MultiCorpus::new(languages, rows).map_err(|e| match e {
            CorpusError::Contract(message) => CorpusError::Parse { line: 1, message },
            other => other,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        MultiCorpus::parse(&text)
    }

    /// Serializes to the corpus file format. Provenance is not stored, so
    /// loading yields `Original` for every present cell.
    pub fn to_file_string(&self) -> String {
        let mut out = self.languages.join("\t");
        out.push('\n');
        for row in &self.rows {
            for (i, c) in row.cells.iter().enumerate() {
                if i > 0 {
                    out.push('\t');
                }
                let _ = write!(out, "{}", c.text().unwrap_or(""));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats::of(self)
    }

    /// Replaces every missing cell of `lang` with the one-token ⟨NULL⟩
    /// sentence.
    pub fn fill_null(&self, lang: &str) -> Result<MultiCorpus> {
        let li = self.language_index(lang)?;
        let mut out = self.clone();
        for row in &mut out.rows {
            if row.cells[li].is_missing() {
                row.cells[li] = Cell::null_filled();
            }
        }
        Ok(out)
    }

    /// Keeps rows whose cells in `languages` all carry real text.
    pub fn filter_complete(&self, languages: &[&str]) -> Result<MultiCorpus> {
        let idx: Vec<usize> = languages
            .iter()
            .map(|l| self.language_index(l))
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .filter(|r| idx.iter().all(|&i| r.cells[i].is_usable()))
            .cloned()
            .collect();
        Ok(MultiCorpus {
            languages: self.languages.clone(),
            rows,
        })
    }

    /// Shuffles rows with `seed` and cuts them into train/valid/test by the
    /// given fractions. The test part keeps only rows complete in every
    /// language.
    pub fn split(&self, fractions: [f64; 3], seed: u64) -> Result<Split> {
        let sum: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::Contract(format!(
                "split fractions must be positive and sum to 1, got {fractions:?}"
            )));
        }
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = order.len();
        let n_train = (fractions[0] * n as f64).round() as usize;
        let n_valid = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        let take = |ids: &[usize]| MultiCorpus {
            languages: self.languages.clone(),
            rows: ids.iter().map(|&i| self.rows[i].clone()).collect(),
        };
        let train = take(&order[..n_train]);
        let valid = take(&order[n_train..n_train + n_valid]);
        let mut test = take(&order[n_train + n_valid..]);
        test.rows.retain(|r| r.cells.iter().all(Cell::is_usable));
        Ok(Split { train, valid, test })
    }

    pub(crate) fn rows_mut(&mut self) -> &mut Vec<Row> {
        &mut self.rows
    }
}

/// Train/valid/test partition of a corpus.
#[derive(Clone, Debug)]
pub struct Split {
    pub train: MultiCorpus,
    pub valid: MultiCorpus,
    pub test: MultiCorpus,
}
