/// Lowercases, splits on whitespace, and strips leading and trailing
/// punctuation from each token. Tokens left empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("Amazing sunset!"), ["amazing", "sunset"]);
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ... !! ").is_empty());
    }

    #[test]
    fn collapses_whitespace() {
        assert_eq!(tokenize("a  b\tc"), ["a", "b", "c"]);
    }

    #[test]
    fn keeps_inner_punctuation() {
        assert_eq!(tokenize("\"don't\" stop."), ["don't", "stop"]);
    }
}
