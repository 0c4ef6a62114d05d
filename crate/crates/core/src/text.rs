//! Tokenization and normalization shared by the catalog, interpreter and embedder.

use alloc::string::String;
use alloc::vec::Vec;

/// Splits a prompt into lowercase tokens.
///
/// Punctuation is dropped except for hyphens inside a token (`7-5`,
/// `2021-2023`, `ob-lb`) and decimal points between digits. Thousands
/// separators inside numbers are removed, and a trailing possessive `'s` is
/// stripped so `Richardson's` and `Richardson` produce the same token.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();

    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let trimmed = current.trim_matches(|c| c == '-' || c == '.');
        if !trimmed.is_empty() {
            tokens.push(String::from(trimmed));
        }
        current.clear();
    };

    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if c == '-' {
            current.push('-');
        } else if (c == '.' || c == ',') && prev_digit && next_digit {
            if c == '.' {
                current.push('.');
            }
        } else if is_apostrophe(c) {
            // possessive: drop "'s" when it ends the word
            let s_next = chars.get(i + 1).is_some_and(|n| *n == 's' || *n == 'S');
            let word_ends = chars.get(i + 2).is_none_or(|n| !n.is_alphanumeric());
            if s_next && word_ends {
                i += 1;
            }
        } else {
            flush(&mut current, &mut tokens);
        }
        i += 1;
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{2018}')
}

/// Lowercase, strip punctuation, collapse whitespace.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Position of `phrase` (already tokenized) inside `tokens`, if present.
pub fn find_phrase(tokens: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return None;
    }
    tokens.windows(phrase.len()).position(|w| w == phrase)
}

/// Parses a four-digit season year or a `yyyy-yyyy` range.
pub fn parse_years(token: &str) -> Option<Vec<u16>> {
    let year = |s: &str| -> Option<u16> {
        if s.len() != 4 {
            return None;
        }
        let y: u16 = s.parse().ok()?;
        (1920..=2100).contains(&y).then_some(y)
    };
    if let Some(y) = year(token) {
        return Some(alloc::vec![y]);
    }
    let (a, b) = token.split_once('-')?;
    let (a, b) = (year(a)?, year(b)?);
    (a <= b).then(|| (a..=b).collect())
}

/// All years a token stream names, expanding spans such as "2021 to 2023".
pub fn years_in(tokens: &[String]) -> Vec<u16> {
    let mut years = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if let Some(ys) = parse_years(&tokens[i]) {
            let span = match (ys.as_slice(), tokens.get(i + 1), tokens.get(i + 2).and_then(|t| parse_years(t))) {
                ([a], Some(link), Some(end)) if matches!(link.as_str(), "to" | "through" | "thru" | "until") => {
                    end.last().filter(|b| *b >= a).map(|b| (*a..=*b).collect::<Vec<u16>>())
                }
                _ => None,
            };
            if let Some(span) = span {
                years.extend(span);
                i += 3;
                continue;
            }
            years.extend(ys);
        }
        i += 1;
    }
    years.sort_unstable();
    years.dedup();
    years
}
