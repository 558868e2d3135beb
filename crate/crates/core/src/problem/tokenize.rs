//! Whitespace-and-punctuation tokenizer with quantity masking.

use std::sync::LazyLock;

use regex::Regex;

pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

static BRACKETED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\[\s*(\d[\d,]*(?:\.\d+)?)\s*\]").expect("valid regex"));
static TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\d+(?:,\d{3})*(?:\.\d+)?|\.\d+|[A-Za-z]+(?:'[A-Za-z]+)?|\S").expect("valid regex")
});

/// Tokens of a text span with every number replaced by [`MASK`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    /// Surface form of each masked number, commas removed, in order.
    pub numbers: Vec<String>,
}

pub fn tokenize(text: &str) -> Tokenized {
    let text = BRACKETED.replace_all(text, " $1 ");
    let mut out = Tokenized::default();
    for m in TOKEN.find_iter(&text) {
        let t = m.as_str();
        let is_number = t.as_bytes()[0].is_ascii_digit() || (t.starts_with('.') && t.len() > 1);
        if is_number {
            out.numbers.push(t.replace(',', ""));
            out.tokens.push(MASK.to_string());
        } else {
            out.tokens.push(t.to_lowercase());
        }
    }
    out
}

pub fn is_punctuation(token: &str) -> bool {
    matches!(token, "." | "?" | "!" | "," | ";" | ":")
}
