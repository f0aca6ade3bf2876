//! A trained model together with its languages and subword models, and the
//! on-disk checkpoint layout:
//!
//! ```text
//! <dir>/meta.txt          key=value metadata
//! <dir>/params/<name>.bin one tensor per parameter
//! <dir>/source<i>.bpe     subword model of encoder i
//! <dir>/target.bpe        subword model of the decoder
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::decode::default_max_len;
use super::{Hypothesis, ModelConfig, ModelError, MultiEncoderModel, Result};
use crate::corpus::bpe::NULL;
use crate::corpus::SubwordModel;
use crate::tensor::{read_tensor, write_tensor};

/// Rows decoded per graph when translating text.
const DECODE_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Translator {
    pub model: MultiEncoderModel,
    pub source_languages: Vec<String>,
    pub target_language: String,
    pub source_subwords: Vec<SubwordModel>,
    pub target_subword: SubwordModel,
}

fn ck_err(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |e| ck_err(path, e.to_string())
}

impl Translator {
    pub fn new(
        model: MultiEncoderModel,
        source_languages: Vec<String>,
        target_language: String,
        source_subwords: Vec<SubwordModel>,
        target_subword: SubwordModel,
    ) -> Result<Self> {
        let cfg = model.config();
        let sizes: Vec<usize> = source_subwords.iter().map(SubwordModel::vocab_size).collect();
        if source_languages.len() != cfg.n_sources()
            || sizes != cfg.source_vocab_sizes
            || target_subword.vocab_size() != cfg.target_vocab_size
        {
            return Err(ModelError::Contract(
                "languages or subword vocabularies do not match the model".into(),
            ));
        }
        Ok(Translator {
            model,
            source_languages,
            target_language,
            source_subwords,
            target_subword,
        })
    }

    /// Segments one row of source texts. An empty sentence or the literal
    /// ⟨NULL⟩ text becomes the single ⟨NULL⟩ token.
    pub fn encode_sources<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<usize>> {
        texts
            .iter()
            .zip(&self.source_subwords)
            .map(|(t, sw)| {
                let ids = sw.segment(t.as_ref());
                if ids.is_empty() {
                    vec![NULL]
                } else {
                    ids
                }
            })
            .collect()
    }

    /// Greedy translation of many rows, each given as one text per source.
    pub fn translate_rows<S: AsRef<str>>(&self, rows: &[Vec<S>]) -> Result<Vec<Hypothesis>> {
        let n = self.model.n_sources();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(ModelError::Contract(format!("expected {n} source texts, got {}", r.len())));
        }
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(DECODE_BATCH) {
            let ids: Vec<Vec<Vec<usize>>> = chunk.iter().map(|r| self.encode_sources(r)).collect();
            let caps: Vec<usize> = ids.iter().map(|r| default_max_len(r)).collect();
            out.extend(self.model.translate_batch(&ids, &caps)?);
        }
        Ok(out)
    }

    pub fn translate_texts<S: AsRef<str>>(&self, rows: &[Vec<S>]) -> Result<Vec<String>> {
        Ok(self
            .translate_rows(rows)?
            .iter()
            .map(|h| self.target_subword.desegment(h.content()))
            .collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let params = dir.join("params");
        fs::create_dir_all(&params).map_err(io_err(dir))?;
        for (name, t) in self.model.named_params() {
            let path = params.join(format!("{name}.bin"));
            let mut f = fs::File::create(&path).map_err(io_err(&path))?;
            write_tensor(&mut f, t)?;
        }
        let cfg = self.model.config();
        let mut meta = String::new();
        meta.push_str(&format!("n_sources={}\n", cfg.n_sources()));
        meta.push_str(&format!("d_enc={}\n", cfg.d_enc()));
        meta.push_str(&format!("d_dec={}\n", cfg.d_dec()));
        meta.push_str(&format!("d_lstm={}\n", cfg.d_lstm));
        meta.push_str(&format!("embed_dim={}\n", cfg.embed_dim));
        meta.push_str(&format!("source_languages={}\n", self.source_languages.join(",")));
        meta.push_str(&format!("target_language={}\n", self.target_language));
        for (i, sw) in self.source_subwords.iter().enumerate() {
            let name = format!("source{i}.bpe");
            sw.save(dir.join(&name))?;
            meta.push_str(&format!("source_vocab.{i}={name}\n"));
        }
        self.target_subword.save(dir.join("target.bpe"))?;
        meta.push_str("target_vocab=target.bpe\n");
        let path = dir.join("meta.txt");
        fs::write(&path, meta).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.txt");
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let mut meta = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ck_err(&meta_path, format!("bad line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| ck_err(&meta_path, format!("missing key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| ck_err(&meta_path, format!("bad value for {k}")))
        };
        let n = num("n_sources")?;
        let source_languages: Vec<String> = get("source_languages")?.split(',').map(str::to_string).collect();
        let target_language = get("target_language")?;
        let source_subwords = (0..n)
            .map(|i| Ok(SubwordModel::load(dir.join(get(&format!("source_vocab.{i}"))?))?))
            .collect::<Result<Vec<_>>>()?;
        let target_subword = SubwordModel::load(dir.join(get("target_vocab")?))?;
        let config = ModelConfig {
            source_vocab_sizes: source_subwords.iter().map(SubwordModel::vocab_size).collect(),
            target_vocab_size: target_subword.vocab_size(),
            embed_dim: num("embed_dim")?,
            d_lstm: num("d_lstm")?,
        };
        if num("d_enc")? != config.d_enc() || num("d_dec")? != config.d_dec() {
            return Err(ck_err(&meta_path, "d_enc/d_dec inconsistent with d_lstm"));
        }
        let mut model = MultiEncoderModel::zeros(config)?;
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let path = dir.join("params").join(format!("{name}.bin"));
            let mut f = fs::File::open(&path).map_err(io_err(&path))?;
            let t = read_tensor(&mut f)?;
            if t.shape() != slot.shape() {
                return Err(ck_err(&path, format!("shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        Translator::new(model, source_languages, target_language, source_subwords, target_subword)
    }
}
