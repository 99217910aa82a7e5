//! SMILES character codec.
//!
//! Strings are tokenized per character (case-sensitive: `c` and `C` are
//! different tokens) and laid out in a fixed window of [`ENCODED_LEN`] slots:
//! [`PAD_WIDTH`] pads, up to [`MAX_SMILES_LEN`] content characters
//! left-aligned, then pads to fill.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Longest SMILES accepted.
pub const MAX_SMILES_LEN: usize = 250;
/// Pads on each side of the content zone.
pub const PAD_WIDTH: usize = 10;
/// Total encoded width.
pub const ENCODED_LEN: usize = PAD_WIDTH + MAX_SMILES_LEN + PAD_WIDTH;
/// Index reserved for padding.
pub const PAD_INDEX: u32 = 0;

/// Dense character → index map; index 0 is the pad.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Vocabulary {
    chars: Vec<char>,
    lookup: BTreeMap<char, u32>,
}

impl TryFrom<Vec<char>> for Vocabulary {
    type Error = Error;

    fn try_from(chars: Vec<char>) -> Result<Self> {
        Self::from_ordered_chars(chars)
    }
}

impl From<Vocabulary> for Vec<char> {
    fn from(v: Vocabulary) -> Self {
        v.chars
    }
}

impl Vocabulary {
    /// Builds the vocabulary from every distinct character of `corpus`,
    /// ordered by character code.
    pub fn build<I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeMap::new();
        let mut any = false;
        for s in corpus {
            let s = s.as_ref();
            if s.is_empty() {
                return Err(Error::EmptySmiles);
            }
            any = true;
            for ch in s.chars() {
                seen.insert(ch, ());
            }
        }
        if !any {
            return Err(Error::NoData("vocabulary corpus is empty"));
        }
        Ok(Self::from_chars(seen.into_keys().collect()))
    }

    /// Rebuilds a vocabulary from its characters listed in index order
    /// (index 1 first). Rejects duplicates.
    pub fn from_ordered_chars(chars: Vec<char>) -> Result<Self> {
        let vocab = Self::from_chars(chars);
        if vocab.lookup.len() != vocab.chars.len() {
            return Err(Error::VocabMismatch("duplicate character".into()));
        }
        Ok(vocab)
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let lookup = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32 + 1))
            .collect();
        Self { chars, lookup }
    }

    /// Number of indices including the pad.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, ch: char) -> Option<u32> {
        self.lookup.get(&ch).copied()
    }

    pub fn char_at(&self, index: u32) -> Option<char> {
        if index == PAD_INDEX {
            return None;
        }
        self.chars.get(index as usize - 1).copied()
    }

    /// Characters in index order, starting at index 1.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// `(index, char)` pairs excluding the pad.
    pub fn entries(&self) -> impl Iterator<Item = (u32, char)> + '_ {
        self.chars.iter().enumerate().map(|(i, &c)| (i as u32 + 1, c))
    }

    /// Places `smiles` into the fixed-width window.
    pub fn encode(&self, smiles: &str) -> Result<EncodedSmiles> {
        if smiles.is_empty() {
            return Err(Error::EmptySmiles);
        }
        let len = smiles.chars().count();
        if len > MAX_SMILES_LEN {
            return Err(Error::TooLong {
                len,
                max: MAX_SMILES_LEN,
            });
        }
        let mut indices = alloc::vec![PAD_INDEX; ENCODED_LEN];
        for (slot, ch) in indices[PAD_WIDTH..].iter_mut().zip(smiles.chars()) {
            *slot = self.index_of(ch).ok_or(Error::UnknownChar(ch))?;
        }
        Ok(EncodedSmiles {
            indices,
            source: smiles.into(),
            content_span: (PAD_WIDTH, PAD_WIDTH + len),
        })
    }

    /// Inverse of [`encode`](Self::encode): maps indices back to characters
    /// and drops pads.
    pub fn decode(&self, indices: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &ix in indices {
            if ix == PAD_INDEX {
                continue;
            }
            let ch = self.char_at(ix).ok_or(Error::IndexOutOfRange {
                index: ix as usize,
                size: self.size(),
            })?;
            out.push(ch);
        }
        Ok(out)
    }
}

/// A SMILES string laid out in the fixed-width index window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSmiles {
    pub indices: Vec<u32>,
    pub source: String,
    /// Half-open range of content positions within `indices`.
    pub content_span: (usize, usize),
}

impl EncodedSmiles {
    pub fn content_len(&self) -> usize {
        self.content_span.1 - self.content_span.0
    }
}

/// One problem found by [`validate_smiles`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Issue {
    Empty,
    NonPrintable { position: usize, ch: char },
    UnbalancedRound,
    UnbalancedSquare,
    OddRingClosure(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub issues: Vec<Issue>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Cheap well-formedness checks: non-empty, printable ASCII, balanced
/// brackets, paired ring-closure labels. Digits inside `[...]` are charges,
/// isotopes, or hydrogen counts and do not count as ring closures; `%nn`
/// is a two-digit closure label.
pub fn validate_smiles(smiles: &str) -> ValidityReport {
    let mut issues = Vec::new();
    if smiles.is_empty() {
        issues.push(Issue::Empty);
        return ValidityReport { issues };
    }
    let chars: Vec<char> = smiles.chars().collect();
    for (position, &ch) in chars.iter().enumerate() {
        if !(' '..='~').contains(&ch) {
            issues.push(Issue::NonPrintable { position, ch });
        }
    }

    let mut round: i64 = 0;
    let mut round_ok = true;
    let mut in_square = false;
    let mut square_ok = true;
    let mut ring_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        match ch {
            '(' if !in_square => round += 1,
            ')' if !in_square => {
                round -= 1;
                if round < 0 {
                    round_ok = false;
                    round = 0;
                }
            }
            '[' => {
                if in_square {
                    square_ok = false;
                }
                in_square = true;
            }
            ']' => {
                if !in_square {
                    square_ok = false;
                }
                in_square = false;
            }
            '%' if !in_square => {
                let label: String = chars[i + 1..]
                    .iter()
                    .take(2)
                    .take_while(|c| c.is_ascii_digit())
                    .collect();
                let consumed = label.len();
                let mut key = String::from("%");
                key.push_str(&label);
                *ring_counts.entry(key).or_default() += 1;
                i += consumed;
            }
            d if d.is_ascii_digit() && !in_square => {
                *ring_counts.entry(String::from(d)).or_default() += 1;
            }
            _ => {}
        }
        i += 1;
    }
    if round != 0 || !round_ok {
        issues.push(Issue::UnbalancedRound);
    }
    if in_square || !square_ok {
        issues.push(Issue::UnbalancedSquare);
    }
    for (label, count) in ring_counts {
        if count % 2 != 0 {
            issues.push(Issue::OddRingClosure(label));
        }
    }
    ValidityReport { issues }
}

/// Ground-truth solubility role of a SMILES character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HydroClass {
    Hydrophilic,
    Hydrophobic,
    Neutral,
}

/// Labels each character. `Cl` and `Br` label both of their characters
/// hydrophobic; lone `l`, `r`, `B` are neutral.
pub fn classify_chars(smiles: &str) -> Vec<HydroClass> {
    let chars: Vec<char> = smiles.chars().collect();
    let mut out = alloc::vec![HydroClass::Neutral; chars.len()];
    let mut i = 0;
    while i < chars.len() {
        let next = chars.get(i + 1).copied();
        match (chars[i], next) {
            ('C', Some('l')) | ('B', Some('r')) => {
                out[i] = HydroClass::Hydrophobic;
                out[i + 1] = HydroClass::Hydrophobic;
                i += 2;
                continue;
            }
            ('O' | 'o' | 'N' | 'n', _) => out[i] = HydroClass::Hydrophilic,
            ('C' | 'c' | 'F' | 'I', _) => out[i] = HydroClass::Hydrophobic,
            _ => {}
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use HydroClass::*;

    #[test]
    fn vocabulary_of_ethanol() {
        let v = Vocabulary::build(["CCO"]).unwrap();
        assert_eq!(v.size(), 3);
        assert_eq!(v.index_of('C'), Some(1));
        assert_eq!(v.index_of('O'), Some(2));
        assert_eq!(v, Vocabulary::build(["CCO", "CCO"]).unwrap());
    }

    #[test]
    fn vocabulary_errors() {
        assert_eq!(
            Vocabulary::build(Vec::<&str>::new()),
            Err(Error::NoData("vocabulary corpus is empty"))
        );
        assert_eq!(Vocabulary::build(["C", ""]), Err(Error::EmptySmiles));
    }

    #[test]
    fn encode_pyridine_layout() {
        let v = Vocabulary::build(["c1ccncc1"]).unwrap();
        let e = v.encode("c1ccncc1").unwrap();
        assert_eq!(e.indices.len(), ENCODED_LEN);
        assert_eq!(e.content_span, (10, 18));
        assert!(e.indices[10..18].iter().all(|&i| i != PAD_INDEX));
        assert_eq!(e.indices.iter().filter(|&&i| i == PAD_INDEX).count(), 262);
        assert_eq!(v.decode(&e.indices).unwrap(), "c1ccncc1");
    }

    #[test]
    fn encode_rejections() {
        let v = Vocabulary::build(["C"]).unwrap();
        assert_eq!(v.encode(""), Err(Error::EmptySmiles));
        let long: String = "C".repeat(251);
        assert_eq!(v.encode(&long), Err(Error::TooLong { len: 251, max: 250 }));
        assert!(v.encode(&long[..250]).is_ok());
        assert_eq!(v.encode("CO"), Err(Error::UnknownChar('O')));
    }

    #[test]
    fn validity_examples() {
        assert!(validate_smiles("c1ccncc1").is_valid());
        assert_eq!(validate_smiles("C(C").issues, vec![Issue::UnbalancedRound]);
        assert_eq!(validate_smiles("C)C(").issues, vec![Issue::UnbalancedRound]);
        assert_eq!(
            validate_smiles("C1CC").issues,
            vec![Issue::OddRingClosure("1".into())]
        );
        assert_eq!(validate_smiles("").issues, vec![Issue::Empty]);
        assert_eq!(validate_smiles("[NH4+").issues, vec![Issue::UnbalancedSquare]);
        assert!(!validate_smiles("CC\u{e9}").is_valid());
        // hydrogen counts and isotopes inside brackets are not ring labels
        assert!(validate_smiles("[13CH3][NH2]").is_valid());
        assert!(validate_smiles("C%12CC%12").is_valid());
        assert!(!validate_smiles("C%12CC").is_valid());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(
            classify_chars("c1ccncc1"),
            vec![
                Hydrophobic,
                Neutral,
                Hydrophobic,
                Hydrophobic,
                Hydrophilic,
                Hydrophobic,
                Hydrophobic,
                Neutral
            ]
        );
        assert_eq!(classify_chars("Cl"), vec![Hydrophobic, Hydrophobic]);
        assert_eq!(classify_chars("Br"), vec![Hydrophobic, Hydrophobic]);
        assert_eq!(classify_chars("B"), vec![Neutral]);
        let furfural = classify_chars("O=Cc1ccco1");
        assert_eq!(furfural[0], Hydrophilic);
        assert_eq!(furfural[1], Neutral);
        assert_eq!(furfural[2], Hydrophobic);
        assert_eq!(furfural[3], Hydrophobic);
        assert_eq!(furfural[4], Neutral);
        assert_eq!(furfural[8], Hydrophilic);
        assert_eq!(furfural[9], Neutral);
    }
}
