//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust twin returning `Result<String,
//! String>` so the logic can be tested natively.

use msnmt::augmentation::{apply_strategy, PseudoMap, Strategy};
use msnmt::corpus::{Cell, MultiCorpus, Provenance, SubwordModel};
use msnmt::evaluation::bleu;
use wasm_bindgen::prelude::*;

/// Corpus BLEU of line-aligned hypotheses and references, as key=value
/// lines.
pub fn bleu_report(hypotheses: &str, references: &str) -> Result<String, String> {
    let h: Vec<&str> = hypotheses.lines().collect();
    let r: Vec<&str> = references.lines().collect();
    bleu(&h, &r).map(|rep| rep.to_key_values()).map_err(|e| e.to_string())
}

/// Learns `merges` merges from the training lines and shows how `sentence`
/// is split, one subword per space-separated item.
pub fn segmentation(training: &str, merges: i64, sentence: &str) -> Result<String, String> {
    let model = SubwordModel::train(training.lines(), merges).map_err(|e| e.to_string())?;
    let pieces = model.segment_tokens(sentence);
    Ok(format!("{}\n{} merges learned, vocabulary {}", pieces.join(" "), model.merges().len(), model.vocab_size()))
}

/// Parses an audit file (`row_id<TAB>language<TAB>text`, header optional)
/// into the pseudo-translations of one language.
fn parse_audit(audit: &str, language: &str) -> Result<PseudoMap, String> {
    let mut map = PseudoMap::new();
    for (i, line) in audit.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("row_id")) {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (row, lang, text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(r), Some(l), Some(t)) => (r, l, t),
            _ => return Err(format!("audit line {}: expected row_id, language and text", i + 1)),
        };
        let row: usize = row.trim().parse().map_err(|_| format!("audit line {}: bad row id {row:?}", i + 1))?;
        if lang == language {
            map.insert(row, text.to_string());
        }
    }
    Ok(map)
}

/// Applies a strategy to `language` and renders the result as corpus TSV
/// with pseudo cells marked by a leading `~`.
pub fn strategy_table(corpus: &str, audit: &str, language: &str, strategy: &str) -> Result<String, String> {
    let corpus = MultiCorpus::parse(corpus).map_err(|e| e.to_string())?;
    let strategy: Strategy = strategy.parse()?;
    let pseudo = parse_audit(audit, language)?;
    let out = apply_strategy(&corpus, &pseudo, language, strategy).map_err(|e| e.to_string())?;
    let mut s = out.languages().join("\t");
    s.push('\n');
    for row in out.rows() {
        let cells: Vec<String> = row
            .cells
            .iter()
            .map(|c| match c {
                Cell::Missing => String::new(),
                Cell::Present { text, provenance: Provenance::Pseudo } => format!("~{text}"),
                Cell::Present { text, .. } => text.clone(),
            })
            .collect();
        s.push_str(&cells.join("\t"));
        s.push('\n');
    }
    Ok(s)
}

#[wasm_bindgen]
pub fn score_bleu(hypotheses: &str, references: &str) -> Result<String, JsValue> {
    bleu_report(hypotheses, references).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn segment_preview(training: &str, merges: i32, sentence: &str) -> Result<String, JsValue> {
    segmentation(training, i64::from(merges), sentence).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn strategy_preview(corpus: &str, audit: &str, language: &str, strategy: &str) -> Result<String, JsValue> {
    strategy_table(corpus, audit, language, strategy).map_err(|e| JsValue::from_str(&e))
}
