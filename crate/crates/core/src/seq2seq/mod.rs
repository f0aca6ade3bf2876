//! Multi-encoder attentional sequence-to-sequence model.
//!
//! One bidirectional LSTM encoder per source language feeds a single LSTM
//! decoder. The decoder starts from
//!
//! ```text
//! h = tanh(W_init · [h_1; …; h_N])      c = c_1 + … + c_N
//! ```
//!
//! and at every step attends globally over each encoder's annotations,
//! then fuses the contexts with its own hidden state:
//!
//! ```text
//! h̃_t = tanh(W_comb · [h_t; d_t^1; …; d_t^N])
//! ```
//!
//! `h̃_t` produces the output logits and is fed into the next step's LSTM
//! input. With a single source this is an ordinary attentional seq2seq.
//!
//! All functions work on batches: a batch of `B` rows is padded per stream
//! and padded positions are masked so that each row's result is the same
//! as if it were computed alone.

mod checkpoint;
mod decode;

pub use checkpoint::Translator;
pub use decode::Hypothesis;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::bpe::{BOS, EOS, PAD};
use crate::corpus::CorpusError;
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Contract(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Large negative score added to padded attention positions.
const MASKED_SCORE: f64 = -1e30;

/// Uniform initialization half-width.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub source_vocab_sizes: Vec<usize>,
    pub target_vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden size of each LSTM direction.
    pub d_lstm: usize,
}

impl ModelConfig {
    pub fn n_sources(&self) -> usize {
        self.source_vocab_sizes.len()
    }

    /// Encoder state size: forward and backward directions concatenated.
    pub fn d_enc(&self) -> usize {
        2 * self.d_lstm
    }

    /// Decoder state size. Equal to `d_enc` because the initial cell is the
    /// sum of the encoders' final cells.
    pub fn d_dec(&self) -> usize {
        self.d_enc()
    }

    fn validate(&self) -> Result<()> {
        let ok = !self.source_vocab_sizes.is_empty()
            && self.source_vocab_sizes.iter().all(|&v| v > 0)
            && self.target_vocab_size > EOS
            && self.embed_dim > 0
            && self.d_lstm > 0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Contract(format!("invalid model configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// Gate weights `[4·hidden, input + hidden]`, gates ordered i, f, g, o.
    pub w: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: Tensor::zeros(&[4 * hidden, input + hidden]),
            b: Tensor::zeros(&[4 * hidden]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub embed: Tensor,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    /// Bilinear attention score matrix `[d_dec, d_enc]`.
    pub attention: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiEncoderModel {
    config: ModelConfig,
    pub encoders: Vec<EncoderParams>,
    pub dec_embed: Tensor,
    /// Input is `[embedding; previous h̃]`.
    pub dec_lstm: LstmParams,
    /// `[d_dec, N·d_enc]`
    pub w_init: Tensor,
    /// `[d_dec, d_dec + N·d_enc]`
    pub w_comb: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

struct BoundLstm {
    w: Var,
    b: Var,
    hidden: usize,
}

struct BoundEncoder {
    embed: Var,
    fwd: BoundLstm,
    bwd: BoundLstm,
    attention: Var,
}

/// The model's parameters recorded as leaves of one graph.
pub struct Bound {
    encoders: Vec<BoundEncoder>,
    dec_embed: Var,
    dec_lstm: BoundLstm,
    w_init: Var,
    w_comb: Var,
    out_w: Var,
    out_b: Var,
    vars: Vec<Var>,
}

impl Bound {
    /// Parameter handles in [`MultiEncoderModel::named_params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// One encoder's output for a batch.
#[derive(Clone, Debug)]
pub struct EncoderFinalState {
    /// `[B, T, d_enc]`
    pub annotations: Var,
    /// `[B, d_enc]`
    pub h: Var,
    /// `[B, d_enc]`
    pub c: Var,
    /// Additive attention mask `[B, T]`; `None` when no row is padded.
    mask: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Previous step's attentional vector h̃ (zeros before the first step).
    pub feed: Var,
}

/// Output of one decoder step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: DecoderState,
    /// `[B, V]`
    pub logits: Var,
    /// Per source, attention weights `[B, T_i]`.
    pub attention: Vec<Var>,
}

fn lstm_step(g: &mut Graph, p: &BoundLstm, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let n = p.hidden;
    let xh = g.concat(&[x, h], 1)?;
    let pre = g.matmul_t(xh, p.w)?;
    let gates = g.add_row(pre, p.b)?;
    let i = g.slice(gates, 1, 0, n)?;
    let f = g.slice(gates, 1, n, n)?;
    let u = g.slice(gates, 1, 2 * n, n)?;
    let o = g.slice(gates, 1, 3 * n, n)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let u = g.tanh(u)?;
    let o = g.sigmoid(o)?;
    let keep = g.mul(f, c)?;
    let write = g.mul(i, u)?;
    let c2 = g.add(keep, write)?;
    let tc = g.tanh(c2)?;
    let h2 = g.mul(o, tc)?;
    Ok((h2, c2))
}

/// `m ⊙ new + (1 − m) ⊙ old` with a 0/1 row mask expanded to `[B, width]`.
fn blend(g: &mut Graph, live: &[bool], width: usize, new: Var, old: Var) -> Result<Var> {
    let on: Vec<f64> = live
        .iter()
        .flat_map(|&l| std::iter::repeat_n(if l { 1.0 } else { 0.0 }, width))
        .collect();
    let off: Vec<f64> = on.iter().map(|v| 1.0 - v).collect();
    let b = live.len();
    let m_on = g.constant(Tensor::new(vec![b, width], on)?);
    let m_off = g.constant(Tensor::new(vec![b, width], off)?);
    let a = g.mul(m_on, new)?;
    let z = g.mul(m_off, old)?;
    Ok(g.add(a, z)?)
}

impl MultiEncoderModel {
    /// A model with all parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (e, h, d_enc, d_dec) = (config.embed_dim, config.d_lstm, config.d_enc(), config.d_dec());
        let n = config.n_sources();
        let encoders = config
            .source_vocab_sizes
            .iter()
            .map(|&v| EncoderParams {
                embed: Tensor::zeros(&[v, e]),
                fwd: LstmParams::zeros(e, h),
                bwd: LstmParams::zeros(e, h),
                attention: Tensor::zeros(&[d_dec, d_enc]),
            })
            .collect();
        let v = config.target_vocab_size;
        Ok(MultiEncoderModel {
            encoders,
            dec_embed: Tensor::zeros(&[v, e]),
            dec_lstm: LstmParams::zeros(e + d_dec, d_dec),
            w_init: Tensor::zeros(&[d_dec, n * d_enc]),
            w_comb: Tensor::zeros(&[d_dec, d_dec + n * d_enc]),
            out_w: Tensor::zeros(&[v, d_dec]),
            out_b: Tensor::zeros(&[v]),
            config,
        })
    }

    /// Every parameter drawn from `uniform(-0.1, 0.1)` with a seeded
    /// generator, in `named_params` order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in model.params_mut() {
            *p = Tensor::uniform(p.shape(), INIT_SCALE, &mut rng);
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_sources(&self) -> usize {
        self.config.n_sources()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, e) in self.encoders.iter().enumerate() {
            out.push((format!("enc{i}.embed"), &e.embed));
            out.push((format!("enc{i}.fwd.w"), &e.fwd.w));
            out.push((format!("enc{i}.fwd.b"), &e.fwd.b));
            out.push((format!("enc{i}.bwd.w"), &e.bwd.w));
            out.push((format!("enc{i}.bwd.b"), &e.bwd.b));
            out.push((format!("enc{i}.attention"), &e.attention));
        }
        out.push(("dec.embed".into(), &self.dec_embed));
        out.push(("dec.lstm.w".into(), &self.dec_lstm.w));
        out.push(("dec.lstm.b".into(), &self.dec_lstm.b));
        out.push(("dec.w_init".into(), &self.w_init));
        out.push(("dec.w_comb".into(), &self.w_comb));
        out.push(("dec.out.w".into(), &self.out_w));
        out.push(("dec.out.b".into(), &self.out_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.push(&mut e.embed);
            out.push(&mut e.fwd.w);
            out.push(&mut e.fwd.b);
            out.push(&mut e.bwd.w);
            out.push(&mut e.bwd.b);
            out.push(&mut e.attention);
        }
        out.push(&mut self.dec_embed);
        out.push(&mut self.dec_lstm.w);
        out.push(&mut self.dec_lstm.b);
        out.push(&mut self.w_init);
        out.push(&mut self.w_comb);
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records the parameters on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut vars = Vec::new();
        let mut leaf = |t: &Tensor| {
            let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
            vars.push(v);
            v
        };
        let h = self.config.d_lstm;
        let d_dec = self.config.d_dec();
        let encoders = self
            .encoders
            .iter()
            .map(|e| BoundEncoder {
                embed: leaf(&e.embed),
                fwd: BoundLstm {
                    w: leaf(&e.fwd.w),
                    b: leaf(&e.fwd.b),
                    hidden: h,
                },
                bwd: BoundLstm {
                    w: leaf(&e.bwd.w),
                    b: leaf(&e.bwd.b),
                    hidden: h,
                },
                attention: leaf(&e.attention),
            })
            .collect();
        let dec_embed = leaf(&self.dec_embed);
        let dec_lstm = BoundLstm {
            w: leaf(&self.dec_lstm.w),
            b: leaf(&self.dec_lstm.b),
            hidden: d_dec,
        };
        let w_init = leaf(&self.w_init);
        let w_comb = leaf(&self.w_comb);
        let out_w = leaf(&self.out_w);
        let out_b = leaf(&self.out_b);
        Bound {
            encoders,
            dec_embed,
            dec_lstm,
            w_init,
            w_comb,
            out_w,
            out_b,
            vars,
        }
    }

    /// Runs encoder `source` over a batch of token sequences.
    ///
    /// Annotation `t` is `[fwd_t; bwd_t]`; the final state concatenates the
    /// forward state after the last token and the backward state after the
    /// first token, so `d_enc = 2·d_lstm`.
    pub fn encode(&self, g: &mut Graph, bound: &Bound, source: usize, seqs: &[Vec<usize>]) -> Result<EncoderFinalState> {
        let enc = bound
            .encoders
            .get(source)
            .ok_or_else(|| ModelError::Contract(format!("no encoder {source} in a {}-source model", self.n_sources())))?;
        if seqs.is_empty() || seqs.iter().any(Vec::is_empty) {
            return Err(ModelError::Contract("encoder input must be non-empty".into()));
        }
        let b = seqs.len();
        let t_max = seqs.iter().map(Vec::len).max().unwrap();
        let h = self.config.d_lstm;
        let token_at = |t: usize| -> Vec<usize> { seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect() };
        let live_at = |t: usize| -> Vec<bool> { seqs.iter().map(|s| t < s.len()).collect() };

        let zero = g.constant(Tensor::zeros(&[b, h]));
        let mut fwd = Vec::with_capacity(t_max);
        let (mut hf, mut cf) = (zero, zero);
        for t in 0..t_max {
            let x = g.lookup_rows(enc.embed, &token_at(t))?;
            let (h2, c2) = lstm_step(g, &enc.fwd, x, hf, cf)?;
            let live = live_at(t);
            if live.iter().all(|&l| l) {
                (hf, cf) = (h2, c2);
            } else {
                hf = blend(g, &live, h, h2, hf)?;
                cf = blend(g, &live, h, c2, cf)?;
            }
            fwd.push(hf);
        }
        let mut bwd = vec![zero; t_max];
        let (mut hb, mut cb) = (zero, zero);
        for t in (0..t_max).rev() {
            let x = g.lookup_rows(enc.embed, &token_at(t))?;
            let (h2, c2) = lstm_step(g, &enc.bwd, x, hb, cb)?;
            let live = live_at(t);
            if live.iter().all(|&l| l) {
                (hb, cb) = (h2, c2);
            } else {
                hb = blend(g, &live, h, h2, hb)?;
                cb = blend(g, &live, h, c2, cb)?;
            }
            bwd[t] = hb;
        }
        let mut rows = Vec::with_capacity(t_max);
        for t in 0..t_max {
            rows.push(g.concat(&[fwd[t], bwd[t]], 1)?);
        }
        let annotations = g.stack(&rows, 1)?;
        let h_final = g.concat(&[hf, hb], 1)?;
        let c_final = g.concat(&[cf, cb], 1)?;
        let mask = if seqs.iter().all(|s| s.len() == t_max) {
            None
        } else {
            let m = seqs
                .iter()
                .flat_map(|s| (0..t_max).map(move |t| if t < s.len() { 0.0 } else { MASKED_SCORE }))
                .collect();
            Some(g.constant(Tensor::new(vec![b, t_max], m)?))
        };
        Ok(EncoderFinalState {
            annotations,
            h: h_final,
            c: c_final,
            mask,
        })
    }

    /// Initial decoder state: `h = tanh(W_init·[h_1;…;h_N])`, `c = Σ c_i`,
    /// zero input-feeding vector.
    pub fn init_decoder(&self, g: &mut Graph, bound: &Bound, finals: &[EncoderFinalState]) -> Result<DecoderState> {
        if finals.len() != self.n_sources() {
            return Err(ModelError::Contract(format!(
                "expected {} encoder states, got {}",
                self.n_sources(),
                finals.len()
            )));
        }
        let hs: Vec<Var> = finals.iter().map(|f| f.h).collect();
        let cat = g.concat(&hs, 1)?;
        let pre = g.matmul_t(cat, bound.w_init)?;
        let h = g.tanh(pre)?;
        let cs: Vec<Var> = finals.iter().map(|f| f.c).collect();
        let c = g.add_all(&cs)?;
        let b = g.shape(h)[0];
        let feed = g.constant(Tensor::zeros(&[b, self.config.d_dec()]));
        Ok(DecoderState { h, c, feed })
    }

    /// Global attention of `h_t` over every annotation of one source, with
    /// bilinear scores `h_tᵀ·W_att·annot_i`. Returns `(context, weights)`.
    pub fn attention_context(
        &self,
        g: &mut Graph,
        bound: &Bound,
        h_t: Var,
        enc: &EncoderFinalState,
        source: usize,
    ) -> Result<(Var, Var)> {
        let w_att = bound
            .encoders
            .get(source)
            .ok_or_else(|| ModelError::Contract(format!("no encoder {source}")))?
            .attention;
        let query = g.matmul(h_t, w_att)?;
        let mut scores = g.batch_dot(enc.annotations, query)?;
        if let Some(mask) = enc.mask {
            scores = g.add(scores, mask)?;
        }
        let weights = g.softmax(scores)?;
        let context = g.weighted_sum(weights, enc.annotations)?;
        Ok((context, weights))
    }

    /// `h̃_t = tanh(W_comb·[h_t; d_t^1; …; d_t^N])`.
    pub fn combine_contexts(&self, g: &mut Graph, bound: &Bound, h_t: Var, contexts: &[Var]) -> Result<Var> {
        if contexts.len() != self.n_sources() {
            return Err(ModelError::Contract(format!(
                "expected {} context vectors, got {}",
                self.n_sources(),
                contexts.len()
            )));
        }
        let mut parts = Vec::with_capacity(contexts.len() + 1);
        parts.push(h_t);
        parts.extend_from_slice(contexts);
        let cat = g.concat(&parts, 1)?;
        let pre = g.matmul_t(cat, bound.w_comb)?;
        Ok(g.tanh(pre)?)
    }

    /// One decoder step with input feeding.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        bound: &Bound,
        state: DecoderState,
        prev: &[usize],
        encoders: &[EncoderFinalState],
    ) -> Result<StepOutput> {
        let emb = g.lookup_rows(bound.dec_embed, prev)?;
        let x = g.concat(&[emb, state.feed], 1)?;
        let (h_t, c_t) = lstm_step(g, &bound.dec_lstm, x, state.h, state.c)?;
        let mut contexts = Vec::with_capacity(encoders.len());
        let mut attention = Vec::with_capacity(encoders.len());
        for (i, enc) in encoders.iter().enumerate() {
            let (ctx, w) = self.attention_context(g, bound, h_t, enc, i)?;
            contexts.push(ctx);
            attention.push(w);
        }
        let h_tilde = self.combine_contexts(g, bound, h_t, &contexts)?;
        let proj = g.matmul_t(h_tilde, bound.out_w)?;
        let logits = g.add_row(proj, bound.out_b)?;
        Ok(StepOutput {
            state: DecoderState {
                h: h_t,
                c: c_t,
                feed: h_tilde,
            },
            logits,
            attention,
        })
    }

    pub fn encode_all(&self, g: &mut Graph, bound: &Bound, sources: &[Vec<Vec<usize>>]) -> Result<Vec<EncoderFinalState>> {
        if sources.len() != self.n_sources() {
            return Err(ModelError::Contract(format!(
                "expected {} source streams, got {}",
                self.n_sources(),
                sources.len()
            )));
        }
        sources
            .iter()
            .enumerate()
            .map(|(i, s)| self.encode(g, bound, i, s))
            .collect()
    }

    /// Summed token-level negative log-likelihood of a batch under teacher
    /// forcing. `sources[i][b]` is row `b` of source stream `i`; each target
    /// is scored with a trailing end-of-sentence token, and padding
    /// positions contribute nothing.
    pub fn batch_nll(&self, g: &mut Graph, bound: &Bound, sources: &[Vec<Vec<usize>>], targets: &[Vec<usize>]) -> Result<Var> {
        let b = targets.len();
        if sources.iter().any(|s| s.len() != b) {
            return Err(ModelError::Contract("source and target batch sizes differ".into()));
        }
        let encs = self.encode_all(g, bound, sources)?;
        let mut state = self.init_decoder(g, bound, &encs)?;
        let steps = targets.iter().map(|t| t.len() + 1).max().unwrap_or(0);
        let mut prev = vec![BOS; b];
        let mut terms = Vec::with_capacity(steps);
        for t in 0..steps {
            let out = self.decode_step(g, bound, state, &prev, &encs)?;
            state = out.state;
            let mut gold = Vec::with_capacity(b);
            let mut weight = Vec::with_capacity(b);
            for y in targets {
                match t.cmp(&y.len()) {
                    std::cmp::Ordering::Less => {
                        gold.push(y[t]);
                        weight.push(1.0);
                    }
                    std::cmp::Ordering::Equal => {
                        gold.push(EOS);
                        weight.push(1.0);
                    }
                    std::cmp::Ordering::Greater => {
                        gold.push(PAD);
                        weight.push(0.0);
                    }
                }
            }
            terms.push(g.cross_entropy_masked(out.logits, &gold, &weight)?);
            prev = gold;
        }
        Ok(g.add_all(&terms)?)
    }
}
