use super::vocab::Vocab;
use crate::error::{Error, Result};
use rand::Rng;
use std::path::Path;

/// Unlabelled general data: documents of sentences of token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GeneralCorpus {
    documents: Vec<Vec<Vec<u32>>>,
}

impl GeneralCorpus {
    pub fn new(documents: Vec<Vec<Vec<u32>>>) -> Result<Self> {
        for (d, doc) in documents.iter().enumerate() {
            if doc.is_empty() {
                return Err(Error::Data(format!("document {d} has no sentences")));
            }
            if let Some(s) = doc.iter().position(Vec::is_empty) {
                return Err(Error::Data(format!("document {d} sentence {s} is empty")));
            }
        }
        Ok(GeneralCorpus { documents })
    }

    pub fn documents(&self) -> &[Vec<Vec<u32>>] {
        &self.documents
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &[u32]> {
        self.documents.iter().flatten().map(Vec::as_slice)
    }

    pub fn num_sentences(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }

    /// Parses one sentence per line with blank lines between documents.
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Self> {
        let mut documents = Vec::new();
        let mut current: Vec<Vec<u32>> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    documents.push(std::mem::take(&mut current));
                }
            } else {
                current.push(vocab.tokenize(line));
            }
        }
        if !current.is_empty() {
            documents.push(current);
        }
        GeneralCorpus::new(documents)
    }

    pub fn to_text(&self, vocab: &Vocab) -> String {
        self.documents
            .iter()
            .map(|doc| doc.iter().map(|s| vocab.detokenize(s) + "\n").collect::<String>())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn read(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GeneralCorpus::parse(&text, vocab)
    }

    pub fn write(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        std::fs::write(path, self.to_text(vocab)).map_err(|e| Error::io(path, e))
    }
}

/// Draws `n` pairs of adjacent sentences, uniformly over all adjacent
/// positions inside documents and with replacement.
pub fn sample_consecutive_pairs<'a, R: Rng + ?Sized>(
    corpus: &'a GeneralCorpus,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(&'a [u32], &'a [u32])>> {
    let eligible: Vec<(usize, usize)> = corpus
        .documents
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.len().saturating_sub(1)).map(move |i| (d, i)))
        .collect();
    if eligible.is_empty() {
        return Err(Error::Data(
            "no document has two consecutive sentences to pair".into(),
        ));
    }
    Ok((0..n)
        .map(|_| {
            let (d, i) = eligible[rng.gen_range(0..eligible.len())];
            let doc = &corpus.documents[d];
            (doc[i].as_slice(), doc[i + 1].as_slice())
        })
        .collect())
}
