use unicode_normalization::UnicodeNormalization;

use super::vocab::{CharVocab, Special};
use crate::error::{Error, Result};
use crate::segmentation::Segmentation;

/// One sentence as character ids, with whitespace removed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedLine {
    pub ids: Vec<usize>,
    /// Gap indices `g` in `1..T` ("boundary after character g"), taken from
    /// the whitespace of the input when it is gold-segmented.
    pub gold_boundaries: Option<Vec<usize>>,
    /// The NFC input with whitespace removed.
    pub raw: String,
}

impl EncodedLine {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn gold_segmentation(&self) -> Option<Segmentation> {
        self.gold_boundaries
            .as_ref()
            .map(|b| Segmentation::from_boundaries(self.len(), b).expect("gold boundaries are in range"))
    }

    pub fn chars(&self) -> Vec<char> {
        self.raw.chars().collect()
    }
}

/// NFC-normalizes `line` and deletes its whitespace. With `gold`, every
/// whitespace run between two characters becomes a boundary. Characters
/// outside `vocab` map to `<unk>`.
pub fn encode_line(vocab: &CharVocab, line: &str, gold: bool) -> Result<EncodedLine> {
    let mut ids = Vec::new();
    let mut raw = String::new();
    let mut boundaries = Vec::new();
    let mut pending_gap = false;
    for c in line.nfc() {
        if c.is_whitespace() {
            pending_gap = true;
            continue;
        }
        if pending_gap && !ids.is_empty() {
            boundaries.push(ids.len());
        }
        pending_gap = false;
        ids.push(vocab.id_of(c).unwrap_or(Special::Unk.id()));
        raw.push(c);
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("line {line:?} is empty after removing whitespace")));
    }
    Ok(EncodedLine {
        ids,
        gold_boundaries: gold.then_some(boundaries),
        raw,
    })
}

/// Characters for `ids`; specials render as their symbols.
pub fn decode(vocab: &CharVocab, ids: &[usize]) -> String {
    let mut out = String::new();
    for &id in ids {
        match vocab.char_of(id) {
            Some(c) => out.push(c),
            None => {
                let s = Special::ALL.iter().find(|s| s.id() == id).map_or("<?>", |s| s.symbol());
                out.push_str(s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::corpus::{build_vocab, RawCorpus};

    fn vocab(text: &str) -> CharVocab {
        build_vocab(&RawCorpus::new(vec![text.to_string()], "t").unwrap()).unwrap()
    }

    #[test]
    fn gold_table_example() {
        let line = "k in ch'aw r uk' le nu nan";
        let v = vocab(line);
        let e = encode_line(&v, line, true).unwrap();
        assert_eq!(e.raw, "kinch'awruk'lenunan");
        assert_eq!(e.gold_boundaries.as_deref(), Some(&[1, 3, 8, 9, 12, 14, 16][..]));
        assert_eq!(decode(&v, &e.ids), e.raw);
    }

    #[test]
    fn unsegmented_line() {
        let v = vocab("abc");
        let e = encode_line(&v, "abc", true).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e.gold_boundaries, Some(vec![]));
        assert_eq!(encode_line(&v, "abc", false).unwrap().gold_boundaries, None);
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let v = vocab("a");
        let e = encode_line(&v, "a b", true).unwrap();
        assert_eq!(e.ids, vec![v.id_of('a').unwrap(), Special::Unk.id()]);
        assert_eq!(e.gold_boundaries, Some(vec![1]));
    }

    #[test]
    fn empty_after_stripping_is_an_error() {
        assert!(encode_line(&vocab("a"), " \t ", false).is_err());
        assert!(encode_line(&vocab("a"), "", true).is_err());
    }

    #[test]
    fn edge_whitespace_is_not_a_boundary() {
        let v = vocab("ab");
        let e = encode_line(&v, "  a   b  ", true).unwrap();
        assert_eq!(e.gold_boundaries, Some(vec![1]));
    }

    proptest! {
        #[test]
        fn known_vocab_round_trip(words in prop::collection::vec("[a-eäö']{1,5}", 1..8)) {
            let line = words.join(" ");
            let v = vocab(&line);
            let e = encode_line(&v, &line, true).unwrap();
            let stripped: String = line.nfc().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(decode(&v, &e.ids), stripped);
            let gold = e.gold_segmentation().unwrap();
            prop_assert_eq!(gold.num_segments(), e.gold_boundaries.as_ref().unwrap().len() + 1);
            prop_assert_eq!(gold.num_segments(), words.len());
        }
    }
}
