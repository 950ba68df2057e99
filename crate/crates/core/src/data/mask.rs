use super::vocab::{Vocab, MASK};
use crate::error::{Error, Result};
use rand::Rng;

/// A corrupted sequence with the positions to predict.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Masked {
    pub tokens: Vec<u32>,
    pub positions: Vec<usize>,
    pub originals: Vec<u32>,
}

/// Selects each non-special position with probability `rate`; a selected
/// token becomes `[MASK]` 80% of the time, a random content symbol 10%, and
/// stays unchanged 10%.
pub fn mask_tokens<R: Rng + ?Sized>(
    sequence: &[u32],
    vocab: &Vocab,
    rate: f64,
    rng: &mut R,
) -> Result<Masked> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("mask rate {rate} outside (0, 1)")));
    }
    let mut tokens = sequence.to_vec();
    let mut positions = Vec::new();
    let mut originals = Vec::new();
    for (i, tok) in tokens.iter_mut().enumerate() {
        if Vocab::is_special(*tok) || rng.gen::<f64>() >= rate {
            continue;
        }
        positions.push(i);
        originals.push(*tok);
        let r: f64 = rng.gen();
        if r < 0.8 {
            *tok = MASK;
        } else if r < 0.9 && vocab.content_len() > 0 {
            *tok = vocab.content_id(rng.gen_range(0..vocab.content_len()));
        }
    }
    Ok(Masked {
        tokens,
        positions,
        originals,
    })
}
