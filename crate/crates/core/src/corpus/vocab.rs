use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::RawCorpus;
use crate::error::{Error, Result};

/// Reserved symbols. Their discriminants are their ids in every vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Special {
    Pad = 0,
    Bos = 1,
    Eos = 2,
    Unk = 3,
    SegStart = 4,
    SegEnd = 5,
}

impl Special {
    pub const ALL: [Special; 6] = [
        Special::Pad,
        Special::Bos,
        Special::Eos,
        Special::Unk,
        Special::SegStart,
        Special::SegEnd,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Bos => "<bos>",
            Special::Eos => "<eos>",
            Special::Unk => "<unk>",
            Special::SegStart => "<seg-start>",
            Special::SegEnd => "<seg-end>",
        }
    }
}

const HEADER: &str = "seglm-vocab v1";

/// Bidirectional map between characters and ids. Ids `0..6` are the
/// [`Special`] symbols; characters follow contiguously.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl CharVocab {
    pub const NUM_SPECIALS: usize = Special::ALL.len();

    /// Characters are assigned ids in the given order; duplicates and
    /// whitespace are rejected.
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut v = CharVocab {
            chars: Vec::new(),
            ids: HashMap::new(),
        };
        for c in chars {
            if c.is_whitespace() {
                return Err(Error::Data(format!("whitespace {c:?} cannot be a vocabulary entry")));
            }
            if v.ids.insert(c, Self::NUM_SPECIALS + v.chars.len()).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary character {c:?}")));
            }
            v.chars.push(c);
        }
        Ok(v)
    }

    /// Total size including specials.
    pub fn len(&self) -> usize {
        Self::NUM_SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.ids.get(&c).copied()
    }

    /// `None` for special ids and out-of-range ids.
    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(Self::NUM_SPECIALS).and_then(|i| self.chars.get(i).copied())
    }

    pub fn is_special(id: usize) -> bool {
        id < Self::NUM_SPECIALS
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for s in Special::ALL {
            out.push_str(s.symbol());
            out.push('\n');
        }
        for &c in &self.chars {
            out.push(c);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::format("vocab", format!("missing `{HEADER}` header")));
        }
        for s in Special::ALL {
            if lines.next() != Some(s.symbol()) {
                return Err(Error::format("vocab", format!("expected special {}", s.symbol())));
            }
        }
        let mut chars = Vec::new();
        for (n, l) in lines.enumerate() {
            let mut it = l.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(Error::format("vocab", format!("entry {} is not a single character: {l:?}", n + 1))),
            }
        }
        Self::from_chars(chars).map_err(|e| Error::format("vocab", e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Short hex fingerprint of the serialized vocabulary.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn corpus_chars(corpus: &RawCorpus) -> BTreeSet<char> {
    corpus
        .lines
        .iter()
        .flat_map(|l| l.nfc().collect::<Vec<_>>())
        .filter(|c| !c.is_whitespace())
        .collect()
}

/// Every distinct non-whitespace NFC codepoint of the corpus, in codepoint
/// order.
pub fn build_vocab(corpus: &RawCorpus) -> Result<CharVocab> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    CharVocab::from_chars(corpus_chars(corpus))
}

/// Appends the corpus characters missing from `base`. Existing ids are
/// unchanged; the returned list holds the ids that were added.
pub fn extend_vocab(base: &CharVocab, corpus: &RawCorpus) -> (CharVocab, Vec<usize>) {
    let mut chars = base.chars.clone();
    let mut new_ids = Vec::new();
    for c in corpus_chars(corpus) {
        if base.id_of(c).is_none() {
            new_ids.push(CharVocab::NUM_SPECIALS + chars.len());
            chars.push(c);
        }
    }
    let v = CharVocab::from_chars(chars).expect("extension of a valid vocabulary");
    (v, new_ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> RawCorpus {
        RawCorpus::new(lines.iter().map(|s| s.to_string()).collect(), "t").unwrap()
    }

    #[test]
    fn build_from_single_line() {
        let v = build_vocab(&corpus(&["aba"])).unwrap();
        assert_eq!(v.chars(), &['a', 'b']);
        assert_eq!(v.len(), 8);
        assert_eq!(v.id_of('a'), Some(6));
        assert_eq!(v.char_of(7), Some('b'));
        assert_eq!(v.char_of(Special::Unk.id()), None);
    }

    #[test]
    fn build_from_two_lines_skips_whitespace() {
        let v = build_vocab(&corpus(&["a b", "bc"])).unwrap();
        assert_eq!(v.chars(), &['a', 'b', 'c']);
    }

    #[test]
    fn build_rejects_empty() {
        assert!(build_vocab(&corpus(&[])).is_err());
    }

    #[test]
    fn nfc_merges_decomposed_forms() {
        let v = build_vocab(&corpus(&["a\u{308}", "ä"])).unwrap();
        assert_eq!(v.chars(), &['ä']);
    }

    #[test]
    fn extend_is_identity_for_covered_corpus() {
        let base = build_vocab(&corpus(&["abc"])).unwrap();
        let (v, new_ids) = extend_vocab(&base, &corpus(&["cab"]));
        assert_eq!(v, base);
        assert!(new_ids.is_empty());
    }

    #[test]
    fn extend_appends_missing() {
        let base = build_vocab(&corpus(&["ab"])).unwrap();
        let (v, new_ids) = extend_vocab(&base, &corpus(&["abc"]));
        assert_eq!(v.id_of('a'), base.id_of('a'));
        assert_eq!(v.id_of('b'), base.id_of('b'));
        assert_eq!(new_ids, vec![v.id_of('c').unwrap()]);
        assert_eq!(new_ids, vec![8]);
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(&corpus(&["k'iche' <x>"])).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("seglm-vocab v1\n<pad>\n<bos>\n"));
        assert_eq!(CharVocab::from_text(&text).unwrap(), v);
        assert!(CharVocab::from_text("nope\n").is_err());
        assert!(CharVocab::from_text(&text.replace("<bos>", "<bot>")).is_err());
    }

    #[test]
    fn specials_are_distinct_and_first() {
        let ids: BTreeSet<usize> = Special::ALL.iter().map(|s| s.id()).collect();
        assert_eq!(ids, (0..6).collect());
        let v = build_vocab(&corpus(&["<pad>"])).unwrap();
        for c in v.chars() {
            assert!(v.id_of(*c).unwrap() >= CharVocab::NUM_SPECIALS);
        }
    }
}
