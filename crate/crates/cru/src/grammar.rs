//! ICAO call-sign grammar: expansion to spoken form, parsing back, token
//! normalization and word error rate.
//!
//! A call-sign like `RYR124` expands to `ryanair one two four`; the parser is
//! the exact inverse on the grammar's image. Unknown airline designators fall
//! back to letter-wise phonetic expansion so expansion is total over
//! pattern-valid call-signs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Digit words in spoken order, index = digit value.
pub const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Phonetic alphabet, index = letter - 'A'.
pub const PHONETIC_WORDS: [&str; 26] = [
    "alfa", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
    "uniform", "victor", "whiskey", "xray", "yankee", "zulu",
];

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("malformed ICAO call-sign `{0}`")]
    BadIcao(String),
    #[error("cannot parse call-sign from tokens: {0}")]
    Parse(String),
    #[error("word error rate is undefined for an empty reference")]
    EmptyReference,
    #[error("designator table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("failed to read designator table: {0}")]
    Io(#[from] std::io::Error),
}

/// A call-sign in both representations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Callsign {
    pub icao: String,
    pub expanded: Vec<String>,
}

impl Callsign {
    /// Build both representations from the ICAO string.
    pub fn from_icao(icao: &str, table: &DesignatorTable) -> Result<Self, GrammarError> {
        let expanded = expand_icao(icao, table)?;
        Ok(Callsign { icao: icao.to_string(), expanded })
    }
}

impl fmt::Display for Callsign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.icao)
    }
}

/// Mapping between three-letter ICAO airline designators and their spoken
/// telephony words. Telephony words must be unique so parsing can invert the
/// expansion.
#[derive(Debug, Clone)]
pub struct DesignatorTable {
    by_icao: BTreeMap<String, String>,
    by_word: BTreeMap<String, String>,
    digit_words: [String; 10],
}

impl DesignatorTable {
    /// The table shipped with the crate (common European carriers).
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/designators.tsv"))
            .expect("bundled designator table is valid")
    }

    /// Parse `ICAO<TAB>word` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        let mut by_icao = BTreeMap::new();
        let mut by_word = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (icao, word) = line.split_once('\t').ok_or_else(|| GrammarError::Table {
                line: line_no,
                msg: "expected `ICAO<TAB>word`".into(),
            })?;
            let icao = icao.trim().to_uppercase();
            let word = word.trim().to_lowercase();
            if icao.len() != 3 || !icao.chars().all(|c| c.is_ascii_uppercase()) {
                return Err(GrammarError::Table {
                    line: line_no,
                    msg: format!("designator `{icao}` is not three letters"),
                });
            }
            if word.is_empty() || !word.chars().all(|c| c.is_ascii_lowercase()) {
                return Err(GrammarError::Table {
                    line: line_no,
                    msg: format!("telephony `{word}` is not a lowercase word"),
                });
            }
            if by_icao.insert(icao.clone(), word.clone()).is_some() {
                return Err(GrammarError::Table {
                    line: line_no,
                    msg: format!("duplicate designator `{icao}`"),
                });
            }
            if by_word.insert(word.clone(), icao).is_some() {
                return Err(GrammarError::Table {
                    line: line_no,
                    msg: format!("duplicate telephony word `{word}`"),
                });
            }
        }
        Ok(DesignatorTable {
            by_icao,
            by_word,
            digit_words: DIGIT_WORDS.map(String::from),
        })
    }

    pub fn load(path: &Path) -> Result<Self, GrammarError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Override the digit-word convention (e.g. `niner` for 9).
    pub fn with_digit_words(mut self, words: [String; 10]) -> Self {
        self.digit_words = words;
        self
    }

    pub fn telephony(&self, designator: &str) -> Option<&str> {
        self.by_icao.get(designator).map(String::as_str)
    }

    pub fn designator_for_word(&self, word: &str) -> Option<&str> {
        self.by_word.get(word).map(String::as_str)
    }

    pub fn designators(&self) -> impl Iterator<Item = &str> {
        self.by_icao.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_icao.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_icao.is_empty()
    }

    pub fn digit_word(&self, digit: u8) -> &str {
        &self.digit_words[digit as usize]
    }

    fn digit_for_word(&self, word: &str) -> Option<u8> {
        self.digit_words.iter().position(|w| w == word).map(|d| d as u8)
    }
}

/// Three uppercase letters, one digit, then up to four uppercase
/// alphanumerics (covers flight ids like `DLH124LE`).
pub fn is_valid_icao(s: &str) -> bool {
    let bytes = s.as_bytes();
    if !(4..=8).contains(&bytes.len()) {
        return false;
    }
    bytes[..3].iter().all(u8::is_ascii_uppercase)
        && bytes[3].is_ascii_digit()
        && bytes[4..]
            .iter()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit())
}

fn phonetic_word(letter: char) -> &'static str {
    PHONETIC_WORDS[(letter as u8 - b'A') as usize]
}

/// Expand an ICAO call-sign into its spoken word sequence.
///
/// Known designators expand to their telephony word; unknown ones fall back
/// to letter-wise phonetic words, so any pattern-valid call-sign expands.
pub fn expand_icao(icao: &str, table: &DesignatorTable) -> Result<Vec<String>, GrammarError> {
    if !is_valid_icao(icao) {
        return Err(GrammarError::BadIcao(icao.to_string()));
    }
    let (designator, suffix) = icao.split_at(3);
    let mut words = Vec::with_capacity(suffix.len() + 3);
    match table.telephony(designator) {
        Some(word) => words.push(word.to_string()),
        None => {
            for c in designator.chars() {
                words.push(phonetic_word(c).to_string());
            }
        }
    }
    for c in suffix.chars() {
        if let Some(d) = c.to_digit(10) {
            words.push(table.digit_word(d as u8).to_string());
        } else {
            words.push(phonetic_word(c).to_string());
        }
    }
    Ok(words)
}

/// Parse a spoken word sequence back into ICAO format.
///
/// Exact inverse of [`expand_icao`] on its image: the leading telephony word
/// (or three phonetic letter words) gives the designator, the remaining
/// digit/phonetic words give the suffix. No fuzzy matching.
pub fn parse_expanded(tokens: &[String], table: &DesignatorTable) -> Result<String, GrammarError> {
    if tokens.is_empty() {
        return Err(GrammarError::Parse("empty token list".into()));
    }
    let (designator, rest) = if let Some(icao) = table.designator_for_word(&tokens[0]) {
        (icao.to_string(), &tokens[1..])
    } else if tokens.len() >= 3 {
        let mut letters = String::with_capacity(3);
        for tok in &tokens[..3] {
            match PHONETIC_WORDS.iter().position(|w| w == tok) {
                Some(i) => letters.push((b'A' + i as u8) as char),
                None => {
                    return Err(GrammarError::Parse(format!(
                        "`{}` is neither a telephony nor a phonetic word",
                        tokens[0]
                    )))
                }
            }
        }
        (letters, &tokens[3..])
    } else {
        return Err(GrammarError::Parse(format!(
            "`{}` is not a known telephony word",
            tokens[0]
        )));
    };

    let mut suffix = String::with_capacity(rest.len());
    for tok in rest {
        if let Some(d) = table.digit_for_word(tok) {
            suffix.push((b'0' + d) as char);
        } else if let Some(i) = PHONETIC_WORDS.iter().position(|w| w == tok) {
            suffix.push((b'A' + i as u8) as char);
        } else {
            return Err(GrammarError::Parse(format!(
                "`{tok}` is neither a digit nor a phonetic word"
            )));
        }
    }
    let icao = format!("{designator}{suffix}");
    if !is_valid_icao(&icao) {
        return Err(GrammarError::Parse(format!(
            "`{icao}` does not match the call-sign pattern"
        )));
    }
    Ok(icao)
}

/// Lowercase, split on whitespace, strip non-alphabetic characters and expand
/// digits to digit words, so one token vocabulary covers raw text and
/// call-sign expansions.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };
    for c in text.chars() {
        if c.is_alphabetic() {
            current.extend(c.to_lowercase());
        } else if let Some(d) = c.to_digit(10) {
            flush(&mut current, &mut tokens);
            tokens.push(DIGIT_WORDS[d as usize].to_string());
        } else if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        }
        // anything else is stripped
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Minimum edit distance between two slices (unit costs).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let n = b.len();
    let mut prev: Vec<usize> = (0..=n).collect();
    let mut curr = vec![0usize; n + 1];
    for (i, x) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let cost = usize::from(x != y);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[n]
}

/// Word error rate: edit distance over reference length. May exceed 1.
pub fn word_error_rate(reference: &[String], hypothesis: &[String]) -> Result<f64, GrammarError> {
    if reference.is_empty() {
        return Err(GrammarError::EmptyReference);
    }
    Ok(levenshtein(reference, hypothesis) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn bundled_table_has_enough_carriers() {
        let table = DesignatorTable::bundled();
        assert!(table.len() >= 30, "only {} designators bundled", table.len());
        assert_eq!(table.telephony("RYR"), Some("ryanair"));
        assert_eq!(table.telephony("DLH"), Some("lufthansa"));
    }

    #[test]
    fn expands_known_designator() {
        let table = DesignatorTable::bundled();
        assert_eq!(expand_icao("RYR124", &table).unwrap(), toks("ryanair one two four"));
        assert_eq!(
            expand_icao("DLH124LE", &table).unwrap(),
            toks("lufthansa one two four lima echo")
        );
    }

    #[test]
    fn expands_unknown_designator_letter_wise() {
        let table = DesignatorTable::bundled();
        assert_eq!(
            expand_icao("XYZ12", &table).unwrap(),
            toks("xray yankee zulu one two")
        );
    }

    #[test]
    fn expand_rejects_malformed() {
        let table = DesignatorTable::bundled();
        for bad in ["RY124", "RYRA24", "ryr124", "RYR", "RYR123456", ""] {
            assert!(expand_icao(bad, &table).is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn parses_spoken_form() {
        let table = DesignatorTable::bundled();
        assert_eq!(parse_expanded(&toks("ryanair one two four"), &table).unwrap(), "RYR124");
        assert_eq!(
            parse_expanded(&toks("ryanair three five four lima echo"), &table).unwrap(),
            "RYR354LE"
        );
        assert_eq!(parse_expanded(&toks("xray yankee zulu one two"), &table).unwrap(), "XYZ12");
    }

    #[test]
    fn parse_rejects_non_callsign() {
        let table = DesignatorTable::bundled();
        assert!(parse_expanded(&toks("hello world"), &table).is_err());
        assert!(parse_expanded(&[], &table).is_err());
        // suffix must start with a digit
        assert!(parse_expanded(&toks("ryanair lima echo"), &table).is_err());
    }

    #[test]
    fn normalize_strips_and_expands_digits() {
        assert_eq!(normalize_tokens("Turn RIGHT, heading"), toks("turn right heading"));
        assert_eq!(normalize_tokens(""), Vec::<String>::new());
        assert_eq!(normalize_tokens("ryanair 124"), toks("ryanair one two four"));
    }

    #[test]
    fn normalized_digits_round_trip_through_parse() {
        let table = DesignatorTable::bundled();
        let tokens = normalize_tokens("ryanair 124");
        assert_eq!(parse_expanded(&tokens, &table).unwrap(), "RYR124");
    }

    #[test]
    fn wer_matches_hand_counts() {
        let r = toks("turn right");
        assert_eq!(word_error_rate(&r, &r).unwrap(), 0.0);
        let r = toks("a b c d");
        assert_eq!(word_error_rate(&r, &toks("a x c d")).unwrap(), 0.25);
        assert_eq!(word_error_rate(&r, &toks("b c d")).unwrap(), 0.25);
        assert!(word_error_rate(&[], &r).is_err());
    }

    fn random_icao(rng: &mut ChaCha8Rng, table: &DesignatorTable) -> String {
        let designators: Vec<&str> = table.designators().collect();
        let des = designators[rng.random_range(0..designators.len())];
        let mut s = des.to_string();
        s.push((b'0' + rng.random_range(0..10u8)) as char);
        for _ in 0..rng.random_range(0..4u8) {
            let c = if rng.random_bool(0.5) {
                (b'0' + rng.random_range(0..10u8)) as char
            } else {
                (b'A' + rng.random_range(0..26u8)) as char
            };
            s.push(c);
        }
        s
    }

    #[test]
    fn round_trip_random_suffixes() {
        let table = DesignatorTable::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let icao = random_icao(&mut rng, &table);
            let expanded = expand_icao(&icao, &table).unwrap();
            assert_eq!(parse_expanded(&expanded, &table).unwrap(), icao, "{icao}");
        }
    }

    proptest! {
        #[test]
        fn wer_zero_on_identity(words in proptest::collection::vec("[a-z]{1,8}", 1..20)) {
            let w: Vec<String> = words;
            prop_assert_eq!(word_error_rate(&w, &w).unwrap(), 0.0);
        }

        #[test]
        fn wer_invariant_under_renaming(words in proptest::collection::vec(0u8..5, 1..15),
                                        hyp in proptest::collection::vec(0u8..5, 0..15)) {
            let name = |v: &[u8], f: &dyn Fn(u8) -> String| -> Vec<String> {
                v.iter().map(|&x| f(x)).collect()
            };
            let plain = |x: u8| format!("w{x}");
            let renamed = |x: u8| format!("tok{}", x + 7);
            let a = word_error_rate(&name(&words, &plain), &name(&hyp, &plain)).unwrap();
            let b = word_error_rate(&name(&words, &renamed), &name(&hyp, &renamed)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn wer_monotone_under_substitution(words in proptest::collection::vec("[a-z]{1,6}", 2..12),
                                           idx in 0usize..12) {
            let reference: Vec<String> = words;
            let idx = idx % reference.len();
            let mut hyp = reference.clone();
            hyp[idx] = "zzzzzzzz".to_string();
            let before = word_error_rate(&reference, &reference).unwrap();
            let after = word_error_rate(&reference, &hyp).unwrap();
            prop_assert!(after > before);
        }
    }
}
