//! A small symbolic language for desk-scale experiments.
//!
//! Content symbols split into class A, class B and neutral symbols; neutral
//! symbols split again into a "low" and a "high" half. A sequence is labelled
//! 1 when it holds more A symbols than B symbols and 0 otherwise; ties are
//! never emitted. The ood split uses longer sequences and favours the high
//! neutral half while keeping the rule.

use super::corpus::GeneralCorpus;
use super::task::{TaskDataset, TaskExample};
use super::vocab::Vocab;
use crate::distill::Label;
use crate::error::{Error, Result};
use crate::model::TaskKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    /// Content symbols (the vocabulary adds the reserved ones).
    pub num_symbols: usize,
    /// Size of each designated class; A is the first block, B the second.
    pub class_size: usize,
    /// Pair variant: label 1 when both sequences share a majority class.
    pub pair: bool,
    pub train_size: usize,
    pub dev_size: usize,
    pub ood_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a position holds a class symbol.
    pub class_rate: f64,
    /// Share of high-half neutral symbols in-domain.
    pub high_rate: f64,
    /// Added to both length bounds for the ood split.
    pub ood_length_shift: usize,
    /// Added to `high_rate` for the ood split.
    pub ood_high_shift: f64,
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Share of general documents written in the ood style.
    pub general_ood_share: f64,
    /// Within a general document, the share of class symbols from the
    /// document's leaning class.
    pub document_lean: f64,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            num_symbols: 48,
            class_size: 12,
            pair: false,
            train_size: 2000,
            dev_size: 500,
            ood_size: 500,
            min_len: 6,
            max_len: 12,
            class_rate: 0.5,
            high_rate: 0.2,
            ood_length_shift: 8,
            ood_high_shift: 0.6,
            documents: 300,
            min_sentences: 3,
            max_sentences: 8,
            general_ood_share: 0.5,
            document_lean: 0.7,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    A,
    B,
    Low,
    High,
}

#[derive(Clone, Copy, Debug)]
struct Style {
    min_len: usize,
    max_len: usize,
    high_rate: f64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.class_size == 0 || self.num_symbols < 2 * self.class_size + 2 {
            return bad("need two non-empty classes and at least two neutral symbols");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("sequence lengths must satisfy 1 <= min_len <= max_len");
        }
        if self.max_len < 2 && !self.pair {
            return bad("max_len must allow a non-tied count");
        }
        if self.train_size == 0 || self.dev_size == 0 {
            return bad("train and dev splits must be non-empty");
        }
        for (name, p) in [
            ("class_rate", self.class_rate),
            ("high_rate", self.high_rate),
            ("general_ood_share", self.general_ood_share),
            ("document_lean", self.document_lean),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.class_rate == 0.0 {
            return bad("class_rate must be positive so labels exist");
        }
        if !(0.0..=1.0).contains(&(self.high_rate + self.ood_high_shift)) {
            return bad("high_rate + ood_high_shift must lie in [0, 1]");
        }
        if self.documents == 0 || self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("need documents with 1 <= min_sentences <= max_sentences");
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::synthetic(self.num_symbols)
    }

    fn neutral_count(&self) -> usize {
        self.num_symbols - 2 * self.class_size
    }

    fn low_count(&self) -> usize {
        self.neutral_count() / 2
    }

    fn role(&self, id: u32) -> Option<Role> {
        let i = (id as usize).checked_sub(5)?;
        if i >= self.num_symbols {
            return None;
        }
        let k = self.class_size;
        Some(if i < k {
            Role::A
        } else if i < 2 * k {
            Role::B
        } else if i < 2 * k + self.low_count() {
            Role::Low
        } else {
            Role::High
        })
    }

    /// Majority class of one sequence: `Some(1)` for more A, `Some(0)` for
    /// more B, `None` on a tie.
    pub fn majority(&self, seq: &[u32]) -> Option<usize> {
        let (mut a, mut b) = (0usize, 0usize);
        for &t in seq {
            match self.role(t) {
                Some(Role::A) => a += 1,
                Some(Role::B) => b += 1,
                _ => {}
            }
        }
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => Some(1),
            std::cmp::Ordering::Less => Some(0),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// The labelling rule for a task input.
    pub fn label(&self, a: &[u32], b: Option<&[u32]>) -> Option<usize> {
        let ma = self.majority(a)?;
        match b {
            None => Some(ma),
            Some(b) => Some(usize::from(ma == self.majority(b)?)),
        }
    }

    /// Share of high-half symbols among the neutral symbols of `seq`.
    pub fn high_share(&self, seq: &[u32]) -> Option<f64> {
        let (mut low, mut high) = (0usize, 0usize);
        for &t in seq {
            match self.role(t) {
                Some(Role::Low) => low += 1,
                Some(Role::High) => high += 1,
                _ => {}
            }
        }
        (low + high > 0).then(|| high as f64 / (low + high) as f64)
    }

    fn in_domain(&self) -> Style {
        Style {
            min_len: self.min_len,
            max_len: self.max_len,
            high_rate: self.high_rate,
        }
    }

    fn shifted(&self) -> Style {
        Style {
            min_len: self.min_len + self.ood_length_shift,
            max_len: self.max_len + self.ood_length_shift,
            high_rate: self.high_rate + self.ood_high_shift,
        }
    }

    fn sentence<R: Rng>(&self, style: Style, a_share: f64, rng: &mut R) -> Vec<u32> {
        let n = rng.gen_range(style.min_len..=style.max_len);
        let k = self.class_size;
        let low = self.low_count();
        let high = self.neutral_count() - low;
        (0..n)
            .map(|_| {
                let i = if rng.gen::<f64>() < self.class_rate {
                    let base = if rng.gen::<f64>() < a_share { 0 } else { k };
                    base + rng.gen_range(0..k)
                } else if rng.gen::<f64>() < style.high_rate {
                    2 * k + low + rng.gen_range(0..high)
                } else {
                    2 * k + rng.gen_range(0..low)
                };
                (i + 5) as u32
            })
            .collect()
    }

    /// Rejection-samples a sequence with the given majority class.
    fn sequence_with_majority<R: Rng>(&self, style: Style, class: usize, rng: &mut R) -> Vec<u32> {
        loop {
            let s = self.sentence(style, 0.5, rng);
            if self.majority(&s) == Some(class) {
                return s;
            }
        }
    }

    fn example<R: Rng>(&self, style: Style, label: usize, rng: &mut R) -> TaskExample {
        if self.pair {
            let ma = rng.gen_range(0..2);
            let mb = if label == 1 { ma } else { 1 - ma };
            TaskExample {
                a: self.sequence_with_majority(style, ma, rng),
                b: Some(self.sequence_with_majority(style, mb, rng)),
                label: Label::Class(label),
            }
        } else {
            TaskExample {
                a: self.sequence_with_majority(style, label, rng),
                b: None,
                label: Label::Class(label),
            }
        }
    }

    fn split<R: Rng>(
        &self,
        style: Style,
        n: usize,
        seen: &mut HashSet<(Vec<u32>, Option<Vec<u32>>)>,
        rng: &mut R,
    ) -> Result<Vec<TaskExample>> {
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while out.len() < n {
            attempts += 1;
            if attempts > 100 * n + 1000 {
                return Err(Error::Config(format!(
                    "synthetic spec: cannot draw {n} distinct examples; widen lengths or symbols"
                )));
            }
            let ex = self.example(style, out.len() % 2, rng);
            if seen.insert((ex.a.clone(), ex.b.clone())) {
                out.push(ex);
            }
        }
        Ok(out)
    }
}

/// Draws the general corpus and the labelled task from `spec`, both over
/// `spec.vocab()`. Identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<(GeneralCorpus, TaskDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut documents = Vec::with_capacity(spec.documents);
    for _ in 0..spec.documents {
        let style = if rng.gen::<f64>() < spec.general_ood_share {
            spec.shifted()
        } else {
            spec.in_domain()
        };
        let lean = if rng.gen::<bool>() {
            spec.document_lean
        } else {
            1.0 - spec.document_lean
        };
        let sentences = rng.gen_range(spec.min_sentences..=spec.max_sentences);
        documents.push(
            (0..sentences)
                .map(|_| spec.sentence(style, lean, &mut rng))
                .collect(),
        );
    }
    let corpus = GeneralCorpus::new(documents)?;

    let mut seen = HashSet::new();
    let train = spec.split(spec.in_domain(), spec.train_size, &mut seen, &mut rng)?;
    let dev = spec.split(spec.in_domain(), spec.dev_size, &mut seen, &mut rng)?;
    let ood = spec.split(spec.shifted(), spec.ood_size, &mut seen, &mut rng)?;
    let task = TaskDataset {
        kind: TaskKind::Classification,
        num_labels: 2,
        pair: spec.pair,
        train,
        dev,
        ood,
    };
    task.validate()?;
    Ok((corpus, task))
}
