use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;

const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Symbol table with the five reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Reserved symbols followed by `symbols` in order.
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(symbols.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, s) in all.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!("invalid vocabulary symbol {s:?}")));
            }
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary symbol {s:?}")));
            }
        }
        Ok(Vocab { symbols: all, index })
    }

    /// `n` content symbols named `a`, `b`, ... (then `s26`, `s27`, ...).
    pub fn synthetic(n: usize) -> Self {
        let names = (0..n).map(|i| {
            if i < 26 {
                ((b'a' + i as u8) as char).to_string()
            } else {
                format!("s{i}")
            }
        });
        Vocab::new(names).expect("synthetic names are unique")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of non-reserved symbols.
    pub fn content_len(&self) -> usize {
        self.symbols.len() - RESERVED.len()
    }

    /// Id of the `i`-th content symbol.
    pub fn content_id(&self, i: usize) -> u32 {
        (RESERVED.len() + i) as u32
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    /// Whitespace-separated symbols to ids; unknown symbols become `[UNK]`.
    /// Framing tokens are added by the batch builder, not here.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|s| self.id(s).unwrap_or(UNK))
            .collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("[UNK]"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One symbol per line, reserved symbols included.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.symbols.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::Data(format!(
                "{}: vocabulary must start with the reserved symbols",
                path.display()
            )));
        }
        Vocab::new(lines[RESERVED.len()..].iter().copied())
    }
}
