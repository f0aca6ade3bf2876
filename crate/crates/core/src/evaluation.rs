//! Corpus-level BLEU (clipped n-gram precision up to 4-grams, corpus brevity
//! penalty, single reference, no smoothing) and model evaluation on complete
//! test rows.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::corpus::{Cell, MultiCorpus, Provenance};
use crate::seq2seq::{ModelError, Translator};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Score in [0, 100].
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuReport {
    /// Recomputes the score from the precisions and brevity penalty.
    pub fn recompute(&self) -> f64 {
        if self.precisions.iter().any(|&p| p == 0.0) {
            return 0.0;
        }
        let mean_log = self.precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * self.brevity_penalty * mean_log.exp()
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = format!("BLEU={}\n", self.bleu);
        for (i, p) in self.precisions.iter().enumerate() {
            s.push_str(&format!("p{}={}\n", i + 1, p));
        }
        s.push_str(&format!(
            "bp={}\nhyp_len={}\nref_len={}\n",
            self.brevity_penalty, self.hyp_len, self.ref_len
        ));
        s
    }
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BLEU={:.2} ({:.1}/{:.1}/{:.1}/{:.1}, bp={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            100.0 * self.precisions[0],
            100.0 * self.precisions[1],
            100.0 * self.precisions[2],
            100.0 * self.precisions[3],
            self.brevity_penalty,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts<'s, 'a>(tokens: &'s [&'a str], n: usize) -> HashMap<&'s [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU over whitespace-tokenized sentences.
///
/// An order with no n-grams on either side (every sentence shorter than
/// `n`) counts as precision 1, so short identical sentences score 100.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Contract("BLEU needs at least one sentence pair".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut ref_ngrams = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = h.as_ref().split_whitespace().collect();
        let r: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            totals[n - 1] += h.len().saturating_sub(n - 1);
            ref_ngrams[n - 1] += r.len().saturating_sub(n - 1);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if totals[n] == 0 && ref_ngrams[n] == 0 {
            1.0
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len > ref_len {
        1.0
    } else if hyp_len == 0 {
        if ref_len == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut report = BleuReport {
        bleu: 0.0,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    };
    report.bleu = report.recompute();
    Ok(report)
}

/// Hypotheses and the report of translating every test row.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub hypotheses: Vec<String>,
    pub references: Vec<String>,
    pub report: BleuReport,
}

/// Translates the test rows with `translator` and scores against the
/// original target cells. Rows must hold original text in every language the
/// translator reads or writes.
pub fn evaluate(translator: &Translator, test: &MultiCorpus) -> Result<Evaluation, EvalError> {
    let source_cols = translator
        .source_languages
        .iter()
        .map(|l| test.language_index(l))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Contract(e.to_string()))?;
    let target_col = test
        .language_index(&translator.target_language)
        .map_err(|e| EvalError::Contract(e.to_string()))?;
    let original = |row: usize, col: usize| match test.cell(row, col) {
        Cell::Present {
            text,
            provenance: Provenance::Original,
        } => Ok(text.clone()),
        _ => Err(EvalError::Contract(format!(
            "test row {row} has no original {} sentence",
            test.languages()[col]
        ))),
    };
    let mut inputs = Vec::with_capacity(test.len());
    let mut references = Vec::with_capacity(test.len());
    for row in 0..test.len() {
        inputs.push(source_cols.iter().map(|&c| original(row, c)).collect::<Result<Vec<_>, _>>()?);
        references.push(original(row, target_col)?);
    }
    let hypotheses = translator.translate_texts(&inputs)?;
    let report = bleu(&hypotheses, &references)?;
    Ok(Evaluation {
        hypotheses,
        references,
        report,
    })
}
