//! Plain-text vocabulary: one `index<TAB>character` line per entry, index 0
//! being the `<PAD>` marker.

use std::fs;
use std::path::Path;

use chemtext_core::codec::Vocabulary;

use crate::error::{Error, FormatError, Result};

pub const PAD_TOKEN: &str = "<PAD>";

pub fn render(vocab: &Vocabulary) -> String {
    let mut out = format!("0\t{PAD_TOKEN}\n");
    for (i, ch) in vocab.entries() {
        out.push_str(&format!("{i}\t{ch}\n"));
    }
    out
}

pub fn parse(text: &str) -> Result<Vocabulary, FormatError> {
    let corrupt = |line: usize, what: &str| FormatError::Corrupt(format!("vocabulary line {}: {what}", line + 1));
    let mut chars = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (index, entry) = line.split_once('\t').ok_or_else(|| corrupt(n, "missing tab"))?;
        let index: usize = index.parse().map_err(|_| corrupt(n, "index is not a number"))?;
        if index != n {
            return Err(corrupt(n, "indices must run 0, 1, 2, ..."));
        }
        if n == 0 {
            if entry != PAD_TOKEN {
                return Err(corrupt(n, "first entry must be the pad"));
            }
            continue;
        }
        let mut it = entry.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => chars.push(c),
            _ => return Err(corrupt(n, "entry must be a single character")),
        }
    }
    if chars.is_empty() {
        return Err(FormatError::Corrupt("vocabulary has no characters".into()));
    }
    Vocabulary::from_ordered_chars(chars).map_err(|e| FormatError::Corrupt(e.to_string()))
}

pub fn save(vocab: &Vocabulary, path: &Path) -> Result<()> {
    fs::write(path, render(vocab)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|e| Error::format(path, e))
}
