//! Unicode script classification for the RU/EN code-switching metrics.
//!
//! Only the two script classes the protocols care about are modelled:
//! Cyrillic and Latin. Everything else (digits, punctuation, other
//! alphabets) is unclassified and inherits context where that matters.

use crate::model::LanguageMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Cyrillic,
    Latin,
}

pub fn char_script(c: char) -> Option<Script> {
    match c {
        '\u{0400}'..='\u{04FF}' | '\u{0500}'..='\u{052F}' => Some(Script::Cyrillic),
        'a'..='z' | 'A'..='Z' => Some(Script::Latin),
        // Latin-1 supplement letters and Latin Extended-A/B.
        '\u{00C0}'..='\u{024F}' if c.is_alphabetic() => Some(Script::Latin),
        _ => None,
    }
}

/// Dominant script of a token: majority character class among
/// {Cyrillic, Latin}. Ties (including all-unclassified tokens) yield None;
/// callers decide what a neutral token inherits.
pub fn token_script(token: &str) -> Option<Script> {
    let mut cyrillic = 0usize;
    let mut latin = 0usize;
    for c in token.chars() {
        match char_script(c) {
            Some(Script::Cyrillic) => cyrillic += 1,
            Some(Script::Latin) => latin += 1,
            None => {}
        }
    }
    match cyrillic.cmp(&latin) {
        std::cmp::Ordering::Greater => Some(Script::Cyrillic),
        std::cmp::Ordering::Less => Some(Script::Latin),
        std::cmp::Ordering::Equal => None,
    }
}

/// Language mode suggested by the scripts actually present in `texts`:
/// both scripts → MIX, one script → that language, neither → None.
pub fn observed_language_mode<'a>(
    texts: impl IntoIterator<Item = &'a str>,
) -> Option<LanguageMode> {
    let mut has_cyrillic = false;
    let mut has_latin = false;
    for text in texts {
        for c in text.chars() {
            match char_script(c) {
                Some(Script::Cyrillic) => has_cyrillic = true,
                Some(Script::Latin) => has_latin = true,
                None => {}
            }
            if has_cyrillic && has_latin {
                return Some(LanguageMode::MIX);
            }
        }
    }
    match (has_cyrillic, has_latin) {
        (true, false) => Some(LanguageMode::RU),
        (false, true) => Some(LanguageMode::EN),
        (false, false) => None,
        (true, true) => unreachable!("early return above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_majority_decides_script() {
        assert_eq!(token_script("канал"), Some(Script::Cyrillic));
        assert_eq!(token_script("channel"), Some(Script::Latin));
        assert_eq!(token_script("très"), Some(Script::Latin));
        assert_eq!(token_script("1234!"), None);
        // 2 Cyrillic vs 2 Latin characters: a tie stays unresolved.
        assert_eq!(token_script("abда"), None);
    }

    #[test]
    fn observed_mode_from_scripts() {
        assert_eq!(
            observed_language_mode(["hello there"]),
            Some(LanguageMode::EN)
        );
        assert_eq!(
            observed_language_mode(["привет мир"]),
            Some(LanguageMode::RU)
        );
        assert_eq!(
            observed_language_mode(["hello", "мир"]),
            Some(LanguageMode::MIX)
        );
        assert_eq!(observed_language_mode(["123 !!"]), None);
    }
}
