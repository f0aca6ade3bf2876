use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Example;
use crate::corpus::bpe::PAD;

/// Rows of one token stream padded with ⟨pad⟩ to a common length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedStream {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
}

impl PaddedStream {
    fn from_rows<'a>(rows: impl Iterator<Item = &'a Vec<usize>>) -> Self {
        let rows: Vec<&Vec<usize>> = rows.collect();
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        PaddedStream {
            ids: rows
                .iter()
                .map(|r| {
                    let mut v = (*r).clone();
                    v.resize(width, PAD);
                    v
                })
                .collect(),
            lengths: rows.iter().map(|r| r.len()).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn unpadded(&self) -> Vec<Vec<usize>> {
        self.ids
            .iter()
            .zip(&self.lengths)
            .map(|(r, &n)| r[..n].to_vec())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Indices of the rows in the example slice.
    pub rows: Vec<usize>,
    pub sources: Vec<PaddedStream>,
    pub target: PaddedStream,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `mask[b][t]` is 1 where decoder step `t` of row `b` is scored: every
    /// target token plus the end-of-sentence step.
    pub fn loss_mask(&self) -> Vec<Vec<f64>> {
        let steps = self.target.width() + 1;
        self.target
            .lengths
            .iter()
            .map(|&n| (0..steps).map(|t| if t <= n { 1.0 } else { 0.0 }).collect())
            .collect()
    }
}

/// Shuffles examples with `seed` and groups them into padded batches of at
/// most `batch_size` rows.
pub fn batchify(examples: &[Example], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_sources = examples.first().map_or(0, |e| e.sources.len());
    order
        .chunks(batch_size)
        .map(|rows| Batch {
            rows: rows.to_vec(),
            sources: (0..n_sources)
                .map(|i| PaddedStream::from_rows(rows.iter().map(|&r| &examples[r].sources[i])))
                .collect(),
            target: PaddedStream::from_rows(rows.iter().map(|&r| &examples[r].target)),
        })
        .collect()
}
