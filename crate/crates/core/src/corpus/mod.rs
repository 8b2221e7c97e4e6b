//! Corpus preparation: cleaning and balancing raw text, character
//! vocabularies, line encoding and composition statistics.

mod clean;
mod encode;
mod stats;
mod vocab;

use std::path::Path;

pub use clean::{
    clean_lines, concat_corpora, dedupe, downsample, is_alphabetic, normalize_for_overlap, preprocess, remove_overlap,
    split_long_lines, CleaningRules,
};
pub use encode::{decode, encode_line, EncodedLine};
pub use stats::{corpus_stats, StatsReport};
pub use vocab::{build_vocab, extend_vocab, CharVocab, Special};

use crate::error::{Error, Result};

/// An ordered collection of lines from one source.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub lines: Vec<String>,
    pub source_tag: String,
    pub provenance: String,
}

impl RawCorpus {
    /// Newlines inside `lines` are not allowed.
    pub fn new(lines: Vec<String>, source_tag: impl Into<String>) -> Result<Self> {
        if let Some(n) = lines.iter().position(|l| l.contains(['\n', '\r'])) {
            return Err(Error::Data(format!("line {} contains a line break", n + 1)));
        }
        Ok(RawCorpus {
            lines,
            source_tag: source_tag.into(),
            provenance: String::new(),
        })
    }

    pub fn from_text(text: &str, source_tag: impl Into<String>) -> Self {
        let lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned()).collect();
        RawCorpus {
            lines,
            source_tag: source_tag.into(),
            provenance: String::new(),
        }
    }

    /// Reads UTF-8 text, one line per sentence. The source tag is the file
    /// extension (e.g. `quc` for `train.quc`), or the file stem.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tag = path
            .extension()
            .or_else(|| path.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut corpus = Self::from_text(&text, tag);
        corpus.provenance = path.display().to_string();
        Ok(corpus)
    }

    /// LF-terminated lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.lines.iter().map(|l| l.len() + 1).sum());
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub(crate) fn with_lines(&self, lines: Vec<String>) -> Self {
        RawCorpus {
            lines,
            source_tag: self.source_tag.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_keeps_order() {
        let c = RawCorpus::new(vec!["b".into(), "a".into(), "".into(), "ä x".into()], "t").unwrap();
        let back = RawCorpus::from_text(&c.to_text(), "t");
        assert_eq!(back.lines, c.lines);
    }

    #[test]
    fn rejects_embedded_newlines() {
        assert!(RawCorpus::new(vec!["a\nb".into()], "t").is_err());
    }

    #[test]
    fn read_uses_extension_as_tag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.quc");
        std::fs::write(&p, "one\r\ntwo\n").unwrap();
        let c = RawCorpus::read(&p).unwrap();
        assert_eq!(c.source_tag, "quc");
        assert_eq!(c.lines, vec!["one", "two"]);
    }
}
