//! Synthetic three-language corpora with a known ground truth.
//!
//! Target sentences are random strings over a small word alphabet. The pivot
//! is a symbol-wise bijective relabelling of the target; the helper is the
//! target reversed and relabelled with a second bijection, so both sources
//! fully determine the target. Helper and target cells of the training rows
//! are then dropped independently at random.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Cell, CorpusError, MultiCorpus, Row, Split};

pub const PIVOT: &str = "piv";
pub const HELPER: &str = "hlp";
pub const TARGET: &str = "tgt";

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const UPPER: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub train_rows: usize,
    pub valid_rows: usize,
    pub test_rows: usize,
    /// At most 26.
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub helper_drop: f64,
    pub target_drop: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_rows: 3000,
            valid_rows: 300,
            test_rows: 300,
            alphabet: 20,
            min_len: 4,
            max_len: 12,
            helper_drop: 0.4,
            target_drop: 0.4,
            seed: 1,
        }
    }
}

/// The two relabellings, as indices into the target alphabet.
struct Mappings {
    pivot: Vec<usize>,
    helper: Vec<usize>,
}

impl Mappings {
    fn triple(&self, target: &[usize]) -> [String; 3] {
        let words = |ids: &mut dyn Iterator<Item = usize>, letters: &[u8]| {
            ids.map(|i| (letters[i] as char).to_string()).collect::<Vec<_>>().join(" ")
        };
        let pivot = words(&mut target.iter().map(|&s| self.pivot[s]), UPPER);
        let helper = words(&mut target.iter().rev().map(|&s| self.helper[s]), LOWER);
        let tgt = words(&mut target.iter().copied(), LOWER);
        [pivot, helper, tgt]
    }
}

pub fn generate(config: &SynthConfig) -> Result<Split, CorpusError> {
    if config.alphabet == 0
        || config.alphabet > LOWER.len()
        || config.min_len == 0
        || config.min_len > config.max_len
        || !(0.0..1.0).contains(&config.helper_drop)
        || !(0.0..1.0).contains(&config.target_drop)
    {
        return Err(CorpusError::Contract(format!("invalid synthetic corpus settings {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pivot: Vec<usize> = (0..config.alphabet).collect();
    pivot.shuffle(&mut rng);
    let mut helper: Vec<usize> = (0..config.alphabet).collect();
    helper.shuffle(&mut rng);
    let maps = Mappings { pivot, helper };
    let languages = || vec![PIVOT.to_string(), HELPER.to_string(), TARGET.to_string()];
    let rows = |n: usize, drop: bool, rng: &mut ChaCha8Rng| -> Vec<Row> {
        (0..n)
            .map(|_| {
                let len = rng.gen_range(config.min_len..=config.max_len);
                let target: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.alphabet)).collect();
                let [p, h, t] = maps.triple(&target);
                let drop_h = drop && rng.gen_bool(config.helper_drop);
                let drop_t = drop && rng.gen_bool(config.target_drop);
                let cell = |text: String, dropped: bool| if dropped { Cell::Missing } else { Cell::original(text) };
                Row::new(vec![Cell::original(p), cell(h, drop_h), cell(t, drop_t)])
            })
            .collect()
    };
    let train = rows(config.train_rows, true, &mut rng);
    let valid = rows(config.valid_rows, false, &mut rng);
    let test = rows(config.test_rows, false, &mut rng);
    Ok(Split {
        train: MultiCorpus::new(languages(), train)?,
        valid: MultiCorpus::new(languages(), valid)?,
        test: MultiCorpus::new(languages(), test)?,
    })
}
