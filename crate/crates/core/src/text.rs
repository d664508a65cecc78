//! Tokenization, answer normalization, and token-level containment.
//!
//! One tokenizer serves every module so that gold-passage judgments, oracle
//! mining, and evaluation all agree on term boundaries: lowercase, split on
//! anything that is not alphanumeric.

/// Articles removed during answer normalization.
const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase `text` and split it into maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Crude suffix stemmer standing in for lemmatization.
///
/// Tokens of length >= 4: strip a trailing "es" after s/x/z/ch/sh
/// (boxes -> box, dishes -> dish, classes -> class), otherwise strip a
/// single trailing "s" unless the token ends in "ss"
/// (vegetables -> vegetable, glass -> glass).
pub fn stem_token(token: &str) -> &str {
    if token.len() < 4 {
        return token;
    }
    if let Some(base) = token.strip_suffix("es") {
        if base.ends_with('s')
            || base.ends_with('x')
            || base.ends_with('z')
            || base.ends_with("ch")
            || base.ends_with("sh")
        {
            return base;
        }
    }
    if token.ends_with('s') && !token.ends_with("ss") {
        return &token[..token.len() - 1];
    }
    token
}

/// Answer/passage normalizer: lowercase, strip punctuation, drop articles,
/// collapse whitespace, optional suffix stemming.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Normalizer {
    /// When set, [`stem_token`] is applied to every token. Off by default;
    /// every experiment records the setting it ran under.
    pub stem: bool,
}

impl Normalizer {
    pub fn new(stem: bool) -> Self {
        Normalizer { stem }
    }

    /// Normalized token sequence of `raw`.
    pub fn tokens(&self, raw: &str) -> Vec<String> {
        tokenize(raw)
            .into_iter()
            .filter(|t| !ARTICLES.contains(&t.as_str()))
            .map(|t| {
                if self.stem {
                    stem_token(&t).to_string()
                } else {
                    t
                }
            })
            .collect()
    }

    /// Canonical normalized form: tokens joined by single spaces.
    pub fn normalize(&self, raw: &str) -> String {
        self.tokens(raw).join(" ")
    }
}

/// Normalize with the default (no-stemming) configuration.
pub fn normalize_text(raw: &str) -> String {
    Normalizer::default().normalize(raw)
}

/// Whether `needle` occurs in `haystack` as a contiguous token run.
/// Empty needles never match.
pub fn token_subsequence(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// FNV-1a 64-bit hash; fixed so hashed features are portable across
/// platforms and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_strips_punctuation_and_articles() {
        assert_eq!(normalize_text("The  Teddy-Bear!"), "teddy bear");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("A vegetable, the pepper"), "vegetable pepper");
    }

    #[test]
    fn normalize_is_idempotent() {
        for raw in ["The  Teddy-Bear!", "A vegetable, the pepper", "x  y\tz"] {
            let once = normalize_text(raw);
            assert_eq!(normalize_text(&once), once);
        }
    }

    #[test]
    fn stemming_rules() {
        assert_eq!(stem_token("vegetables"), "vegetable");
        assert_eq!(stem_token("boxes"), "box");
        assert_eq!(stem_token("dishes"), "dish");
        assert_eq!(stem_token("classes"), "class");
        assert_eq!(stem_token("glass"), "glass");
        assert_eq!(stem_token("is"), "is");
        assert_eq!(stem_token("its"), "its");
    }

    #[test]
    fn token_subsequence_is_contiguous() {
        let hay: Vec<String> = ["bell", "peppers", "are", "vegetables"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let hit: Vec<String> = vec!["peppers".into(), "are".into()];
        let gap: Vec<String> = vec!["bell".into(), "are".into()];
        assert!(token_subsequence(&hay, &hit));
        assert!(!token_subsequence(&hay, &gap));
        assert!(!token_subsequence(&hay, &[]));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
