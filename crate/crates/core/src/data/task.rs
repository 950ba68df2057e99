use super::batch::{encode, BatchItem, Encoded};
use super::vocab::Vocab;
use crate::distill::Label;
use crate::error::{Error, Result};
use crate::model::TaskKind;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct TaskExample {
    pub a: Vec<u32>,
    pub b: Option<Vec<u32>>,
    pub label: Label,
}

impl TaskExample {
    pub fn item(&self) -> BatchItem<'_> {
        BatchItem {
            a: &self.a,
            b: self.b.as_deref(),
            label: Some(self.label),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Ood,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Ood];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Ood => "ood",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split {s:?} (train, dev, ood)")))
    }
}

/// Labelled task data with train/dev/ood splits.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub kind: TaskKind,
    pub num_labels: usize,
    pub pair: bool,
    pub train: Vec<TaskExample>,
    pub dev: Vec<TaskExample>,
    pub ood: Vec<TaskExample>,
}

impl TaskDataset {
    pub fn split(&self, split: Split) -> &[TaskExample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Ood => &self.ood,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<TaskExample> {
        match split {
            Split::Train => &mut self.train,
            Split::Dev => &mut self.dev,
            Split::Ood => &mut self.ood,
        }
    }

    /// Checks labels against the task kind, pair shape, and split disjointness.
    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            for (i, ex) in self.split(split).iter().enumerate() {
                if ex.b.is_some() != self.pair {
                    return Err(Error::Data(format!(
                        "{} example {i}: pair shape does not match the dataset",
                        split.name()
                    )));
                }
                match (self.kind, ex.label) {
                    (TaskKind::Classification, Label::Class(c)) if c < self.num_labels => {}
                    (TaskKind::Classification, Label::Class(c)) => {
                        return Err(Error::LabelOutOfRange {
                            label: c,
                            classes: self.num_labels,
                        })
                    }
                    (TaskKind::Regression, Label::Score(v)) if v.is_finite() => {}
                    (kind, label) => {
                        return Err(Error::Data(format!(
                            "{} example {i}: label {label:?} invalid for {kind:?}",
                            split.name()
                        )))
                    }
                }
            }
        }
        let key = |e: &TaskExample| (e.a.clone(), e.b.clone());
        let train: std::collections::HashSet<_> = self.train.iter().map(key).collect();
        let dev: std::collections::HashSet<_> = self.dev.iter().map(key).collect();
        for (name, other) in [("dev", &self.dev), ("ood", &self.ood)] {
            if other.iter().any(|e| train.contains(&key(e))) {
                return Err(Error::Data(format!("train and {name} splits overlap")));
            }
        }
        if self.ood.iter().any(|e| dev.contains(&key(e))) {
            return Err(Error::Data("dev and ood splits overlap".into()));
        }
        Ok(())
    }

    /// Frames every example of `split` for the encoder.
    pub fn encode_split(&self, split: Split, max_len: usize) -> Result<Vec<Encoded>> {
        self.split(split)
            .iter()
            .map(|e| encode(&e.item(), max_len))
            .collect()
    }

    /// Writes `<dir>/<split>.tsv` for every split.
    pub fn write_dir(&self, dir: &Path, vocab: &Vocab) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in Split::ALL {
            let path = dir.join(format!("{}.tsv", split.name()));
            write_tsv(&path, self.split(split), vocab)?;
        }
        Ok(())
    }

    /// Reads the three split files written by [`TaskDataset::write_dir`].
    pub fn read_dir(
        dir: &Path,
        vocab: &Vocab,
        kind: TaskKind,
        num_labels: usize,
        pair: bool,
    ) -> Result<Self> {
        let mut ds = TaskDataset {
            kind,
            num_labels,
            pair,
            train: Vec::new(),
            dev: Vec::new(),
            ood: Vec::new(),
        };
        for split in Split::ALL {
            let path = dir.join(format!("{}.tsv", split.name()));
            *ds.split_mut(split) = read_tsv(&path, vocab, kind, pair)?;
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// One example per line: `text_a[\ttext_b]\tlabel`.
pub fn write_tsv(path: &Path, examples: &[TaskExample], vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&vocab.detokenize(&e.a));
        if let Some(b) = &e.b {
            out.push('\t');
            out.push_str(&vocab.detokenize(b));
        }
        out.push('\t');
        out.push_str(&e.label.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_tsv(path: &Path, vocab: &Vocab, kind: TaskKind, pair: bool) -> Result<Vec<TaskExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fields = if pair { 3 } else { 2 };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != fields {
                return Err(Error::Data(format!(
                    "{}:{}: expected {fields} tab-separated fields, found {}",
                    path.display(),
                    n + 1,
                    parts.len()
                )));
            }
            let raw = parts[fields - 1].trim();
            let label = match kind {
                TaskKind::Classification => raw.parse().map(Label::Class).ok(),
                TaskKind::Regression => raw.parse().map(Label::Score).ok(),
            }
            .ok_or_else(|| Error::Data(format!("{}:{}: bad label {raw:?}", path.display(), n + 1)))?;
            Ok(TaskExample {
                a: vocab.tokenize(parts[0]),
                b: pair.then(|| vocab.tokenize(parts[1])),
                label,
            })
        })
        .collect()
}

/// Stratified subsample of the train split: `round(fraction * len)`
/// examples shared across classes by largest remainder. Dev and ood are
/// untouched.
pub fn subsample_task<R: Rng + ?Sized>(
    dataset: &TaskDataset,
    fraction: f64,
    rng: &mut R,
) -> Result<TaskDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let mut out = dataset.clone();
    if fraction == 1.0 {
        return Ok(out);
    }
    let train = match dataset.kind {
        TaskKind::Classification => {
            let mut by_class: BTreeMap<usize, Vec<&TaskExample>> = BTreeMap::new();
            for e in &dataset.train {
                if let Label::Class(c) = e.label {
                    by_class.entry(c).or_default().push(e);
                }
            }
            let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
            let sizes = allocate(&counts, fraction);
            let mut keep = Vec::new();
            for ((class, mut members), n) in by_class.into_iter().zip(sizes) {
                if n == 0 {
                    return Err(Error::Data(format!(
                        "fraction {fraction} leaves no examples of class {class}"
                    )));
                }
                members.shuffle(rng);
                keep.extend(members.into_iter().take(n).cloned());
            }
            keep.shuffle(rng);
            keep
        }
        TaskKind::Regression => {
            let n = allocate(&[dataset.train.len()], fraction)[0];
            if n == 0 {
                return Err(Error::Data(format!("fraction {fraction} leaves no examples")));
            }
            dataset.train.choose_multiple(rng, n).cloned().collect()
        }
    };
    out.train = train;
    Ok(out)
}

/// Largest-remainder allocation of `round(fraction * total)` slots across
/// strata, so each stratum is within one of its exact share.
fn allocate(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    let mut left = target.saturating_sub(sizes.iter().sum());
    for i in order {
        if left == 0 {
            break;
        }
        if sizes[i] < counts[i] {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}
