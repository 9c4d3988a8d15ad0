use std::collections::HashSet;

use unicode_segmentation::UnicodeSegmentation;

/// Lowercased Unicode words. Whitespace and punctuation are boundaries and
/// are dropped; no stemming or script-specific handling.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(|w| w.to_lowercase()).collect()
}

/// Word n-gram sets for `n = 1..=n_max`. Element `n - 1` holds the n-grams,
/// each joined with a single space. Texts shorter than `n` give an empty set.
pub fn ngram_sets(tokens: &[String], n_max: usize) -> Vec<HashSet<String>> {
    (1..=n_max)
        .map(|n| {
            if tokens.len() < n {
                HashSet::new()
            } else {
                tokens.windows(n).map(|w| w.join(" ")).collect()
            }
        })
        .collect()
}
