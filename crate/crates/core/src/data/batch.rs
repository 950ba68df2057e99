use super::vocab::{Vocab, CLS, PAD, SEP};
use crate::distill::Label;
use crate::error::{Error, Result};
use crate::model::EncoderInput;

/// One raw input: a sentence or a sentence pair, optionally labelled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchItem<'a> {
    pub a: &'a [u32],
    pub b: Option<&'a [u32]>,
    pub label: Option<Label>,
}

impl<'a> BatchItem<'a> {
    pub fn single(a: &'a [u32]) -> Self {
        BatchItem {
            a,
            b: None,
            label: None,
        }
    }

    pub fn pair(a: &'a [u32], b: &'a [u32]) -> Self {
        BatchItem {
            a,
            b: Some(b),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

/// A framed, unpadded sequence ready for the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub tokens: Vec<u32>,
    pub segments: Vec<u32>,
    pub label: Option<Label>,
}

impl Encoded {
    pub fn input(&self) -> EncoderInput<'_> {
        EncoderInput::new(&self.tokens, &self.segments)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Frames `[CLS] a [SEP]` or `[CLS] a [SEP] b [SEP]`. When the result would
/// exceed `max_len`, tokens are dropped from the end of `b` first, then `a`.
pub fn encode(item: &BatchItem<'_>, max_len: usize) -> Result<Encoded> {
    let framing = if item.b.is_some() { 3 } else { 2 };
    if max_len < framing {
        return Err(Error::SequenceTooLong {
            len: framing,
            max: max_len,
        });
    }
    let room = max_len - framing;
    let b_full = item.b.map_or(0, <[u32]>::len);
    let mut a_len = item.a.len();
    let mut b_len = b_full;
    if a_len + b_len > room {
        b_len = room.saturating_sub(a_len).min(b_full);
        a_len = a_len.min(room - b_len);
    }
    let mut tokens = Vec::with_capacity(a_len + b_len + framing);
    tokens.push(CLS);
    tokens.extend_from_slice(&item.a[..a_len]);
    tokens.push(SEP);
    let mut segments = vec![0; tokens.len()];
    if let Some(b) = item.b {
        tokens.extend_from_slice(&b[..b_len]);
        tokens.push(SEP);
        segments.resize(tokens.len(), 1);
    }
    Ok(Encoded {
        tokens,
        segments,
        label: item.label,
    })
}

/// Right-padded batch with a validity mask over positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<Vec<u32>>,
    pub segments: Vec<Vec<u32>>,
    pub valid: Vec<Vec<bool>>,
    pub labels: Vec<Option<Label>>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tokens.first().map_or(0, Vec::len)
    }

    /// Padded row `i` with its mask.
    pub fn input(&self, i: usize) -> EncoderInput<'_> {
        EncoderInput::new(&self.tokens[i], &self.segments[i]).with_valid(&self.valid[i])
    }

    /// Row `i` without padding or framing: the original `(a, b)` ids.
    pub fn strip(&self, i: usize) -> (Vec<u32>, Option<Vec<u32>>) {
        let row = &self.tokens[i][..self.lengths[i]];
        let seg = &self.segments[i][..self.lengths[i]];
        let first_sep = row.iter().position(|&t| t == SEP).unwrap_or(row.len());
        let a = row[1..first_sep].to_vec();
        let b = seg
            .contains(&1)
            .then(|| row[first_sep + 1..row.len() - 1].to_vec());
        (a, b)
    }
}

/// Frames, truncates and right-pads `items` with `[PAD]`.
pub fn build_batch(items: &[BatchItem<'_>], max_len: usize, pair_mode: bool) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("cannot build an empty batch".into()));
    }
    let mut encoded = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        if item.b.is_some() != pair_mode {
            return Err(Error::Data(format!(
                "item {i} is {} but the batch is in {} mode",
                if item.b.is_some() {
                    "a pair"
                } else {
                    "a single sentence"
                },
                if pair_mode { "pair" } else { "single" }
            )));
        }
        if let Some(&bad) = item.a.iter().chain(item.b.unwrap_or(&[])).find(|&&t| t == PAD) {
            return Err(Error::Data(format!("item {i} contains reserved id {bad}")));
        }
        encoded.push(encode(item, max_len)?);
    }
    let width = encoded.iter().map(Encoded::len).max().unwrap_or(0);
    let mut batch = Batch {
        tokens: Vec::with_capacity(items.len()),
        segments: Vec::with_capacity(items.len()),
        valid: Vec::with_capacity(items.len()),
        labels: Vec::with_capacity(items.len()),
        lengths: Vec::with_capacity(items.len()),
    };
    for e in encoded {
        let n = e.len();
        let mut tokens = e.tokens;
        let mut segments = e.segments;
        tokens.resize(width, PAD);
        segments.resize(width, 0);
        let mut valid = vec![true; n];
        valid.resize(width, false);
        batch.tokens.push(tokens);
        batch.segments.push(segments);
        batch.valid.push(valid);
        batch.labels.push(e.label);
        batch.lengths.push(n);
    }
    Ok(batch)
}

/// Convenience for callers holding only a vocabulary and raw text.
pub fn encode_text(vocab: &Vocab, a: &str, b: Option<&str>, max_len: usize) -> Result<Encoded> {
    let a = vocab.tokenize(a);
    let b = b.map(|b| vocab.tokenize(b));
    encode(
        &BatchItem {
            a: &a,
            b: b.as_deref(),
            label: None,
        },
        max_len,
    )
}
