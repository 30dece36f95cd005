//! Answer normalization and comparison.

use alloc::string::String;

use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Lowercases, drops every Unicode punctuation character (categories `P*`),
/// trims, and collapses internal whitespace runs to a single space.
pub fn normalize_answer(raw: &str) -> String {
    let mut stripped = String::with_capacity(raw.len());
    for c in raw.chars().flat_map(char::to_lowercase) {
        if !is_punctuation(c) {
            stripped.push(c);
        }
    }
    let mut out = String::with_capacity(stripped.len());
    for word in stripped.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub fn answers_equal(a: &str, b: &str) -> bool {
    normalize_answer(a) == normalize_answer(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_federer() {
        assert_eq!(normalize_answer("  Roger Federer. "), "roger federer");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("5"), "5");
    }

    #[test]
    fn collapses_inner_whitespace_and_unicode_punctuation() {
        assert_eq!(normalize_answer("Rafael\t\n  Nadal"), "rafael nadal");
        assert_eq!(normalize_answer("«Iga Świątek»…"), "iga świątek");
        assert_eq!(normalize_answer("¿Coco\u{2014}Gauff?"), "cocogauff");
        // symbols are not punctuation
        assert_eq!(normalize_answer("$5 + 2"), "$5 + 2");
    }

    #[test]
    fn equality_examples() {
        assert!(answers_equal("Novak Djokovic", "novak djokovic!"));
        assert!(!answers_equal("iga swiatek", "coco gauff"));
        assert!(answers_equal("", ""));
    }
}
