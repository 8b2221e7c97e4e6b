use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use super::RawCorpus;
use crate::error::{Error, Result};

/// Which line filters are active, plus the splitting/overlap settings used
/// by [`preprocess`].
#[derive(Clone, Debug, PartialEq)]
pub struct CleaningRules {
    /// Drop lines containing `http://`, `https://` or `www.`.
    pub drop_urls: bool,
    /// Drop lines with no alphabetic character at all.
    pub drop_no_alpha: bool,
    /// Drop lines whose non-alphabetic share of non-whitespace characters
    /// exceeds this fraction.
    pub max_non_alpha_fraction: Option<f64>,
    /// Drop lines containing any of these substrings (boilerplate).
    pub blocklist: Vec<String>,
    pub max_chars: usize,
    /// Collapse internal whitespace runs when comparing lines for overlap.
    pub collapse_whitespace: bool,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            drop_urls: true,
            drop_no_alpha: true,
            max_non_alpha_fraction: None,
            blocklist: Vec::new(),
            max_chars: 2000,
            collapse_whitespace: true,
        }
    }
}

impl CleaningRules {
    /// The stricter rule set used for noisy web-scraped text: URLs and
    /// mostly non-alphabetic lines are dropped.
    pub fn noisy_web() -> Self {
        CleaningRules {
            max_non_alpha_fraction: Some(0.5),
            ..Self::default()
        }
    }

    pub fn accepts(&self, line: &str) -> bool {
        if self.drop_urls && ["http://", "https://", "www."].iter().any(|u| line.contains(u)) {
            return false;
        }
        if self.blocklist.iter().any(|b| !b.is_empty() && line.contains(b.as_str())) {
            return false;
        }
        let (mut alpha, mut total) = (0usize, 0usize);
        for c in line.chars().filter(|c| !c.is_whitespace()) {
            total += 1;
            alpha += is_alphabetic(c) as usize;
        }
        if self.drop_no_alpha && alpha == 0 {
            return false;
        }
        if let Some(frac) = self.max_non_alpha_fraction {
            if total > 0 && (total - alpha) as f64 > frac * total as f64 {
                return false;
            }
        }
        true
    }
}

/// Unicode letter categories (Lu, Ll, Lt, Lm, Lo).
pub fn is_alphabetic(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::UppercaseLetter
            | GeneralCategory::LowercaseLetter
            | GeneralCategory::TitlecaseLetter
            | GeneralCategory::ModifierLetter
            | GeneralCategory::OtherLetter
    )
}

pub fn clean_lines(corpus: &RawCorpus, rules: &CleaningRules) -> RawCorpus {
    corpus.with_lines(corpus.lines.iter().filter(|l| rules.accepts(l)).cloned().collect())
}

fn is_sentence_punct(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | ';' | ':')
}

/// Breaks lines longer than `max_chars` characters. Each cut goes after the
/// last sentence punctuation inside the window, else at the last whitespace,
/// else exactly at `max_chars`. Whitespace at a cut is dropped.
pub fn split_long_lines(corpus: &RawCorpus, max_chars: usize) -> Result<RawCorpus> {
    if max_chars == 0 {
        return Err(Error::InvalidArgument("max_chars must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(corpus.len());
    for line in &corpus.lines {
        let mut rest: Vec<char> = line.chars().collect();
        if rest.len() <= max_chars {
            out.push(line.clone());
            continue;
        }
        while rest.len() > max_chars {
            let window = &rest[..max_chars];
            let (piece_end, resume) = if let Some(p) = window.iter().rposition(|&c| is_sentence_punct(c)) {
                (p + 1, p + 1)
            } else if let Some(p) = rest[1..=max_chars].iter().rposition(|c| c.is_whitespace()) {
                (p + 1, p + 1)
            } else {
                (max_chars, max_chars)
            };
            let piece: String = rest[..piece_end].iter().collect::<String>().trim_end().to_owned();
            if !piece.is_empty() {
                out.push(piece);
            }
            let mut next = resume;
            while next < rest.len() && rest[next].is_whitespace() {
                next += 1;
            }
            rest.drain(..next);
        }
        if !rest.is_empty() {
            out.push(rest.into_iter().collect());
        }
    }
    Ok(corpus.with_lines(out))
}

/// Keeps the first occurrence of each line, comparing NFC forms.
pub fn dedupe(corpus: &RawCorpus) -> RawCorpus {
    let mut seen = HashSet::new();
    let lines = corpus
        .lines
        .iter()
        .filter(|l| seen.insert(l.nfc().collect::<String>()))
        .cloned()
        .collect();
    corpus.with_lines(lines)
}

/// NFC, trimmed, and optionally with whitespace runs collapsed to one space.
pub fn normalize_for_overlap(line: &str, collapse_whitespace: bool) -> String {
    let nfc: String = line.nfc().collect();
    if collapse_whitespace {
        nfc.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        nfc.trim().to_owned()
    }
}

/// Drops every training line that also occurs in `heldout`.
pub fn remove_overlap(train: &RawCorpus, heldout: &RawCorpus, collapse_whitespace: bool) -> RawCorpus {
    let held: HashSet<String> = heldout
        .lines
        .iter()
        .map(|l| normalize_for_overlap(l, collapse_whitespace))
        .collect();
    train.with_lines(
        train
            .lines
            .iter()
            .filter(|l| !held.contains(&normalize_for_overlap(l, collapse_whitespace)))
            .cloned()
            .collect(),
    )
}

/// Indices of a seeded permutation of `0..len`.
pub(crate) fn seeded_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// `n` lines drawn uniformly without replacement, kept in corpus order.
/// The sample is the first `n` entries of a permutation fixed by `seed`,
/// so samples of different sizes from the same seed are nested.
pub fn downsample(corpus: &RawCorpus, n: usize, seed: u64) -> Result<RawCorpus> {
    if n > corpus.len() {
        return Err(Error::Data(format!(
            "cannot downsample {} lines to {n}: requested size exceeds corpus size",
            corpus.len()
        )));
    }
    let mut picked = seeded_permutation(corpus.len(), seed);
    picked.truncate(n);
    picked.sort_unstable();
    Ok(corpus.with_lines(picked.into_iter().map(|i| corpus.lines[i].clone()).collect()))
}

pub fn concat_corpora(parts: &[RawCorpus]) -> RawCorpus {
    let tags: Vec<&str> = parts.iter().map(|p| p.source_tag.as_str()).filter(|t| !t.is_empty()).collect();
    RawCorpus {
        lines: parts.iter().flat_map(|p| p.lines.iter().cloned()).collect(),
        source_tag: tags.join("+"),
        provenance: parts.iter().map(|p| p.provenance.as_str()).collect::<Vec<_>>().join(";"),
    }
}

/// clean → split → clean → dedupe. Split pieces are screened again so that
/// the result is a fixed point of the pipeline.
pub fn preprocess(corpus: &RawCorpus, rules: &CleaningRules) -> Result<RawCorpus> {
    let cleaned = clean_lines(corpus, rules);
    let split = split_long_lines(&cleaned, rules.max_chars)?;
    Ok(dedupe(&clean_lines(&split, rules)))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn corpus(lines: &[&str]) -> RawCorpus {
        RawCorpus::new(lines.iter().map(|s| s.to_string()).collect(), "t").unwrap()
    }

    #[test]
    fn url_lines_are_dropped() {
        let rules = CleaningRules::default();
        let out = clean_lines(&corpus(&["see http://x.com", "kinch'aw"]), &rules);
        assert_eq!(out.lines, vec!["kinch'aw"]);
        assert!(!rules.accepts("www.example.org is here"));
    }

    #[test]
    fn no_alpha_lines_are_dropped() {
        let out = clean_lines(&corpus(&["1234 5678", "abc"]), &CleaningRules::default());
        assert_eq!(out.lines, vec!["abc"]);
    }

    #[test]
    fn mostly_non_alpha_lines_are_dropped() {
        let lines = ["ab12345678", "abcde123"];
        // brute-force count of letters per line
        for (line, expect) in lines.iter().zip([2usize, 5]) {
            assert_eq!(line.chars().filter(|c| c.is_ascii_alphabetic()).count(), expect);
        }
        let out = clean_lines(&corpus(&lines), &CleaningRules::noisy_web());
        assert_eq!(out.lines, vec!["abcde123"]);
    }

    #[test]
    fn blocklist_drops_boilerplate() {
        let rules = CleaningRules {
            blocklist: vec!["©".into()],
            ..CleaningRules::default()
        };
        let out = clean_lines(&corpus(&["© 2020 all rights", "plain"]), &rules);
        assert_eq!(out.lines, vec!["plain"]);
    }

    #[test]
    fn apostrophe_is_not_a_letter() {
        assert!(!is_alphabetic('\''));
        assert!(is_alphabetic('ä'));
        assert!(is_alphabetic('ñ'));
        assert!(!is_alphabetic('7'));
    }

    #[test]
    fn split_below_threshold_is_identity() {
        let line = "a".repeat(1999);
        let out = split_long_lines(&corpus(&[&line]), 2000).unwrap();
        assert_eq!(out.lines, vec![line]);
    }

    #[test]
    fn split_at_sentence_punctuation() {
        let out = split_long_lines(&corpus(&["A. B."]), 3).unwrap();
        assert_eq!(out.lines, vec!["A.", "B."]);
    }

    #[test]
    fn split_long_line_into_bounded_pieces() {
        let words: Vec<String> = (0..1500).map(|i| format!("w{}", i % 10)).collect();
        let line = words.join(" ") + &"x".repeat(1000);
        assert!(line.chars().count() >= 5000);
        let out = split_long_lines(&corpus(&[&line]), 2000).unwrap();
        assert!(out.len() >= 3);
        for piece in &out.lines {
            assert!(piece.chars().count() <= 2000);
        }
        let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
        assert_eq!(strip(&out.lines.concat()), strip(&line));
    }

    #[test]
    fn hard_cut_without_whitespace() {
        let out = split_long_lines(&corpus(&["abcdefgh"]), 3).unwrap();
        assert_eq!(out.lines, vec!["abc", "def", "gh"]);
        assert!(split_long_lines(&corpus(&["a"]), 0).is_err());
    }

    #[test]
    fn dedupe_keeps_first_occurrence() {
        assert_eq!(dedupe(&corpus(&["a", "b", "a"])).lines, vec!["a", "b"]);
        assert!(dedupe(&corpus(&[])).is_empty());
        // decomposed vs precomposed ä
        assert_eq!(dedupe(&corpus(&["a\u{308}", "ä"])).len(), 1);
    }

    #[test]
    fn dedupe_against_set_oracle() {
        let lines: Vec<String> = (0..100).map(|i| format!("line {}", (i * 37) % 40)).collect();
        let c = RawCorpus::new(lines.clone(), "t").unwrap();
        let out = dedupe(&c);
        let mut seen = HashSet::new();
        let expected: Vec<String> = lines.into_iter().filter(|l| seen.insert(l.clone())).collect();
        assert_eq!(out.len(), 40);
        assert_eq!(out.lines, expected);
    }

    #[test]
    fn overlap_removal() {
        assert_eq!(remove_overlap(&corpus(&["x", "y"]), &corpus(&["y"]), true).lines, vec!["x"]);
        assert_eq!(remove_overlap(&corpus(&["x", "y"]), &corpus(&["z"]), true).lines, vec!["x", "y"]);
        let train = corpus(&["a  b", "c"]);
        let held = corpus(&[" a b "]);
        let expected: Vec<String> = train
            .lines
            .iter()
            .filter(|l| l.split_whitespace().collect::<Vec<_>>() != vec!["a", "b"])
            .cloned()
            .collect();
        assert_eq!(remove_overlap(&train, &held, true).lines, expected);
        assert_eq!(remove_overlap(&train, &held, false).lines, vec!["a  b", "c"]);
    }

    #[test]
    fn downsample_edges() {
        let c = corpus(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        assert_eq!(downsample(&c, 10, 7).unwrap(), c);
        assert!(downsample(&c, 0, 7).unwrap().is_empty());
        assert_eq!(downsample(&c, 4, 3).unwrap(), downsample(&c, 4, 3).unwrap());
        let err = downsample(&c, 11, 0).unwrap_err().to_string();
        assert!(err.contains("10") && err.contains("11"), "{err}");
    }

    #[test]
    fn concat_sizes() {
        assert_eq!(concat_corpora(&[corpus(&["a"]), corpus(&["b"])]).lines, vec!["a", "b"]);
        assert_eq!(concat_corpora(&[corpus(&[]), corpus(&["b", "c"])]).lines, vec!["b", "c"]);
    }

    proptest! {
        #[test]
        fn downsample_is_an_ordered_subsequence(n in 0usize..30, extra in 0usize..30, seed: u64) {
            let lines: Vec<String> = (0..n + extra).map(|i| i.to_string()).collect();
            let c = RawCorpus::new(lines, "t").unwrap();
            let out = downsample(&c, n, seed).unwrap();
            prop_assert_eq!(out.len(), n);
            let mut it = c.lines.iter();
            for l in &out.lines {
                prop_assert!(it.any(|x| x == l));
            }
        }

        #[test]
        fn pipeline_is_idempotent(
            lines in prop::collection::vec("[a-c1 .!:]{0,12}", 0..20),
            max in 1usize..8,
            strict: bool,
        ) {
            let c = RawCorpus::new(lines, "t").unwrap();
            let rules = CleaningRules {
                max_chars: max,
                max_non_alpha_fraction: strict.then_some(0.5),
                ..CleaningRules::default()
            };
            let once = preprocess(&c, &rules).unwrap();
            let twice = preprocess(&once, &rules).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
