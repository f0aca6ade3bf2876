use super::{ModelError, MultiEncoderModel, Result};
use crate::corpus::bpe::{BOS, EOS};
use crate::tensor::Graph;

/// A greedy decoding result.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Target ids, ending with end-of-sentence unless the length cap was hit.
    pub tokens: Vec<usize>,
    /// Sum of per-step log-probabilities.
    pub score: f64,
    /// `attention[step][source]` holds that step's weights over the source
    /// positions.
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl Hypothesis {
    /// Tokens without the trailing end-of-sentence marker.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Default output length cap: twice the first source's length plus 10.
pub fn default_max_len(sources: &[Vec<usize>]) -> usize {
    2 * sources.first().map_or(0, Vec::len) + 10
}

fn log_softmax_at(row: &[f64], i: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row[i] - lse
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl MultiEncoderModel {
    /// Greedy decoding of one row. `sources[i]` feeds encoder `i`.
    pub fn translate(&self, sources: &[Vec<usize>], max_len: usize) -> Result<Hypothesis> {
        let row = vec![sources.to_vec()];
        Ok(self.translate_batch(&row, &[max_len])?.remove(0))
    }

    /// Greedy decoding of many rows at once. `rows[b][i]` is row `b`'s input
    /// to encoder `i`; row `b` stops at end-of-sentence or after
    /// `max_lens[b]` tokens.
    pub fn translate_batch(&self, rows: &[Vec<Vec<usize>>], max_lens: &[usize]) -> Result<Vec<Hypothesis>> {
        if rows.len() != max_lens.len() {
            return Err(ModelError::Contract("one length cap per row is required".into()));
        }
        let mut hyps: Vec<Hypothesis> = rows
            .iter()
            .map(|_| Hypothesis {
                tokens: Vec::new(),
                score: 0.0,
                attention: Vec::new(),
            })
            .collect();
        let steps = max_lens.iter().copied().max().unwrap_or(0);
        if rows.is_empty() || steps == 0 {
            return Ok(hyps);
        }
        let n = self.n_sources();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(ModelError::Contract(format!(
                "expected {n} sources per row, got {}",
                bad.len()
            )));
        }
        let streams: Vec<Vec<Vec<usize>>> = (0..n).map(|i| rows.iter().map(|r| r[i].clone()).collect()).collect();
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let encs = self.encode_all(&mut g, &bound, &streams)?;
        let lens: Vec<Vec<usize>> = rows.iter().map(|r| r.iter().map(Vec::len).collect()).collect();
        let mut state = self.init_decoder(&mut g, &bound, &encs)?;
        let mut prev = vec![BOS; rows.len()];
        let mut done: Vec<bool> = max_lens.iter().map(|&m| m == 0).collect();
        for _ in 0..steps {
            if done.iter().all(|&d| d) {
                break;
            }
            let out = self.decode_step(&mut g, &bound, state, &prev, &encs)?;
            state = out.state;
            let logits = g.value(out.logits);
            let v = logits.last_dim();
            for (b, hyp) in hyps.iter_mut().enumerate() {
                if done[b] {
                    continue;
                }
                let row = &logits.data()[b * v..(b + 1) * v];
                let tok = argmax(row);
                hyp.score += log_softmax_at(row, tok);
                hyp.tokens.push(tok);
                let att = out
                    .attention
                    .iter()
                    .enumerate()
                    .map(|(i, w)| {
                        let w = g.value(*w);
                        let t = w.last_dim();
                        w.data()[b * t..b * t + lens[b][i]].to_vec()
                    })
                    .collect();
                hyp.attention.push(att);
                prev[b] = tok;
                if tok == EOS || hyp.tokens.len() >= max_lens[b] {
                    done[b] = true;
                }
            }
        }
        Ok(hyps)
    }
}
