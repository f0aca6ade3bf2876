//! Byte-pair-encoding subword segmentation.
//!
//! Text is split into words at spaces; every space becomes a `▁` marker at
//! the start of the following word, and one `▁` is prepended to the text,
//! so `desegment(segment(s)) == s` for any `s` whose characters were seen in
//! training. Merges never cross a word.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::{CorpusError, Result, NULL_TEXT};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NULL: usize = 4;

pub const RESERVED: [&str; 5] = ["⟨pad⟩", "⟨s⟩", "⟨/s⟩", "⟨unk⟩", NULL_TEXT];

const MARK: char = '▁';

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    ids: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

fn words_of(text: &str) -> Vec<String> {
    if text.is_empty() {
        return Vec::new();
    }
    let marked: String = std::iter::once(MARK)
        .chain(text.chars().map(|c| if c == ' ' { MARK } else { c }))
        .collect();
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in marked.chars() {
        if c == MARK && !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
        cur.push(c);
    }
    words.push(cur);
    words
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    let mut out = Vec::with_capacity(symbols.len());
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(std::mem::take(&mut symbols[i]));
            i += 1;
        }
    }
    *symbols = out;
}

impl SubwordModel {
    /// Learns `n_merges` merges from `sentences`. At each step the most
    /// frequent adjacent pair wins; ties go to the lexicographically
    /// smallest pair. Stops early when no pair is left.
    pub fn train<'a>(sentences: impl IntoIterator<Item = &'a str>, n_merges: i64) -> Result<Self> {
        if n_merges < 0 {
            return Err(CorpusError::Contract(format!("n_merges must be >= 0, got {n_merges}")));
        }
        let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut any = false;
        for s in sentences {
            any = true;
            for w in words_of(s) {
                *word_freq.entry(w).or_default() += 1;
            }
        }
        if !any {
            return Err(CorpusError::Contract("cannot train a subword model on zero sentences".into()));
        }
        let mut alphabet: Vec<String> = word_freq
            .keys()
            .flat_map(|w| w.chars().map(String::from))
            .collect();
        alphabet.sort();
        alphabet.dedup();

        let mut words: Vec<(Vec<String>, usize)> = word_freq
            .into_iter()
            .map(|(w, f)| (w.chars().map(String::from).collect(), f))
            .collect();
        let mut merges = Vec::new();
        for _ in 0..n_merges {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, f) in &words {
                for pair in syms.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += f;
                }
            }
            let best = counts
                .into_iter()
                .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
            let Some(((l, r), _)) = best else { break };
            let (l, r) = (l.to_string(), r.to_string());
            for (syms, _) in &mut words {
                merge_pair(syms, &l, &r);
            }
            merges.push((l, r));
        }
        Ok(Self::from_parts(merges, alphabet))
    }

    fn from_parts(merges: Vec<(String, String)>, alphabet: Vec<String>) -> Self {
        let mut vocab: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::new();
        for (i, t) in vocab.iter().enumerate() {
            ids.insert(t.clone(), i);
        }
        let mut add = |t: String, vocab: &mut Vec<String>| {
            if !ids.contains_key(&t) {
                ids.insert(t.clone(), vocab.len());
                vocab.push(t);
            }
        };
        for c in alphabet {
            add(c, &mut vocab);
        }
        for (l, r) in &merges {
            add(format!("{l}{r}"), &mut vocab);
        }
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        SubwordModel {
            merges,
            vocab,
            ids,
            ranks,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: usize) -> &str {
        self.vocab.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Splits one word into subword strings by applying merges in the
    /// order they were learned.
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min();
            let Some(&rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut syms, l, r);
        }
        syms
    }

    pub fn segment_tokens(&self, text: &str) -> Vec<String> {
        if text == NULL_TEXT {
            return vec![NULL_TEXT.to_string()];
        }
        words_of(text).iter().flat_map(|w| self.segment_word(w)).collect()
    }

    /// Token ids for `text`. The literal ⟨NULL⟩ sentence maps to the single
    /// reserved id; unseen characters map to ⟨unk⟩.
    pub fn segment(&self, text: &str) -> Vec<usize> {
        self.segment_tokens(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`SubwordModel::segment`]. Reserved control tokens other
    /// than ⟨unk⟩ and ⟨NULL⟩ are dropped.
    pub fn desegment(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                _ => s.push_str(self.token(id)),
            }
        }
        let s = s.replace(MARK, " ");
        match s.strip_prefix(' ') {
            Some(rest) => rest.to_string(),
            None => s,
        }
    }

    /// Merge lines ("left right") in application order, a blank line, then
    /// "token<TAB>id" vocabulary lines.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out.push('\n');
        for (i, t) in self.vocab.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| CorpusError::Parse { line, message };
        let mut merges = Vec::new();
        let mut lines = text.lines().enumerate();
        for (i, line) in lines.by_ref() {
            if line.is_empty() {
                break;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| perr(i + 1, format!("bad merge line {line:?}")))?;
            merges.push((l.to_string(), r.to_string()));
        }
        let mut vocab = Vec::new();
        for (i, line) in lines {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| perr(i + 1, format!("bad vocabulary line {line:?}")))?;
            let id: usize = id.parse().map_err(|_| perr(i + 1, format!("bad id {id:?}")))?;
            if id != vocab.len() {
                return Err(perr(i + 1, format!("expected id {}, found {id}", vocab.len())));
            }
            vocab.push(tok.to_string());
        }
        if vocab.len() < RESERVED.len() || vocab[..RESERVED.len()] != RESERVED {
            return Err(perr(1, "reserved tokens must occupy ids 0-4".into()));
        }
        let model = Self::from_parts(merges, vocab[RESERVED.len()..].to_vec());
        if model.vocab != vocab {
            return Err(perr(1, "vocabulary does not match the merge table".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_file_string()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reserved_ids() {
        let m = SubwordModel::train(["a b"], 0).unwrap();
        for (i, t) in RESERVED.iter().enumerate() {
            assert_eq!(m.id(t), Some(i));
        }
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // pairs in "▁aaab": (▁,a)=1 (a,a)=2 (a,b)=1 per occurrence
        let m = SubwordModel::train(std::iter::repeat_n("aaab", 5), 1).unwrap();
        assert_eq!(m.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn ties_broken_lexicographically() {
        let m = SubwordModel::train(["xy", "ab"], 1).unwrap();
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn zero_merges_is_character_vocab() {
        let m = SubwordModel::train(["ab ba"], 0).unwrap();
        assert_eq!(m.vocab_size(), RESERVED.len() + 3);
        assert_eq!(m.segment_tokens("ab"), vec!["▁", "a", "b"]);
    }

    #[test]
    fn deterministic_training() {
        let data = ["the cat sat", "the hat", "a cat on a mat"];
        let a = SubwordModel::train(data, 20).unwrap();
        let b = SubwordModel::train(data, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_edge_cases() {
        let m = SubwordModel::train(["hello world"], 10).unwrap();
        assert!(m.segment("").is_empty());
        assert!(m.segment("hellq").contains(&UNK));
        assert_eq!(m.segment(NULL_TEXT), vec![NULL]);
        assert_eq!(m.desegment(&[NULL]), NULL_TEXT);
        assert!(SubwordModel::train(Vec::<&str>::new(), 1).is_err());
        assert!(SubwordModel::train(["a"], -1).is_err());
    }

    #[test]
    fn merges_do_not_cross_words() {
        let m = SubwordModel::train(std::iter::repeat_n("ab ab", 10), 50).unwrap();
        assert!(m.merges().iter().all(|(l, r)| !r.starts_with('▁') || l.is_empty()));
        assert_eq!(m.segment_tokens("ab ab"), vec!["▁ab", "▁ab"]);
    }

    #[test]
    fn file_roundtrip() {
        let m = SubwordModel::train(["low lower lowest", "new newer"], 15).unwrap();
        assert_eq!(SubwordModel::parse(&m.to_file_string()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn desegment_inverts_segment(s in "[abc d]{0,30}", merges in 0i64..40) {
            let m = SubwordModel::train(["abc d dcba", "a b c d", "bad cab"], merges).unwrap();
            prop_assert_eq!(m.desegment(&m.segment(&s)), s);
        }
    }
}
