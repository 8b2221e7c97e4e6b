use std::collections::HashSet;

use unicode_normalization::UnicodeNormalization;

use super::RawCorpus;

/// Composition summary of a corpus file. Tokens are whitespace-delimited;
/// character counts exclude whitespace.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReport {
    pub lines: usize,
    pub total_tokens: usize,
    pub unique_tokens: usize,
    pub total_characters: usize,
    pub unique_characters: usize,
    /// Characters per token; 0 for a corpus without tokens.
    pub mean_token_length: f64,
}

impl StatsReport {
    pub const HEADER: &'static str =
        "Lines\tTotal Tokens\tUnique Tokens\tTotal Characters\tUnique Characters\tMean Token Length";

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.2}",
            self.lines,
            self.total_tokens,
            self.unique_tokens,
            self.total_characters,
            self.unique_characters,
            self.mean_token_length
        )
    }
}

pub fn corpus_stats(corpus: &RawCorpus) -> StatsReport {
    let mut tokens = HashSet::new();
    let mut chars = HashSet::new();
    let (mut total_tokens, mut total_characters) = (0, 0);
    for line in &corpus.lines {
        let line: String = line.nfc().collect();
        for tok in line.split_whitespace() {
            total_tokens += 1;
            for c in tok.chars() {
                total_characters += 1;
                chars.insert(c);
            }
            tokens.insert(tok.to_owned());
        }
    }
    StatsReport {
        lines: corpus.len(),
        total_tokens,
        unique_tokens: tokens.len(),
        total_characters,
        unique_characters: chars.len(),
        mean_token_length: if total_tokens == 0 {
            0.0
        } else {
            total_characters as f64 / total_tokens as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let c = RawCorpus::new(vec!["ab cd".into(), "ab".into()], "t").unwrap();
        let s = corpus_stats(&c);
        assert_eq!(
            s,
            StatsReport {
                lines: 2,
                total_tokens: 3,
                unique_tokens: 2,
                total_characters: 6,
                unique_characters: 4,
                mean_token_length: 2.0,
            }
        );
        assert_eq!(s.tsv_row(), "2\t3\t2\t6\t4\t2.00");
    }

    #[test]
    fn empty_corpus_is_all_zero() {
        let s = corpus_stats(&RawCorpus::default());
        assert_eq!(s.lines + s.total_tokens + s.unique_tokens + s.total_characters + s.unique_characters, 0);
        assert_eq!(s.mean_token_length, 0.0);
    }
}
