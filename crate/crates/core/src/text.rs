//! Word tokenization shared by the bigram statistics and the fallback embedder.

use std::collections::HashSet;

/// Lowercased whitespace tokens with punctuation stripped; empty tokens dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| {
            tok.chars()
                .filter(|c| !c.is_ascii_punctuation() && !c.is_ascii_control())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Adds the word bigrams of `text` to `into`. Bigrams never span texts.
pub fn collect_bigrams(text: &str, into: &mut HashSet<(String, String)>) {
    let toks = words(text);
    for pair in toks.windows(2) {
        into.insert((pair[0].clone(), pair[1].clone()));
    }
}

/// Number of distinct word bigrams pooled over `texts`.
pub fn unique_bigram_count<'a>(texts: impl IntoIterator<Item = &'a str>) -> usize {
    let mut set = HashSet::new();
    for t in texts {
        collect_bigrams(t, &mut set);
    }
    set.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization() {
        assert_eq!(words("Hello, World!  it's ok."), ["hello", "world", "its", "ok"]);
        assert!(words(" ... ").is_empty());
    }

    #[test]
    fn bigrams_are_pooled_but_not_joined() {
        assert_eq!(unique_bigram_count(["a b c", "b c d"]), 3);
        assert_eq!(unique_bigram_count(["a b", "c d"]), 2);
        assert_eq!(unique_bigram_count(["A, b.", "a b"]), 1);
        assert_eq!(unique_bigram_count(["single"]), 0);
    }
}
