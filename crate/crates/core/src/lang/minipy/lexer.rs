//! MiniPy tokenizer, also used for syntax highlighting.

use crate::lang::scan::{self, LexRules};
use crate::lang::Token;

pub const KEYWORDS: &[&str] = &[
    "and", "as", "break", "class", "continue", "def", "elif", "else", "except", "False", "finally", "for", "if", "in",
    "None", "not", "or", "pass", "raise", "return", "True", "try", "while",
];

const RULES: LexRules = LexRules {
    keywords: KEYWORDS,
    indentation: true,
    ruby_names: false,
    operators: &["==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "+", "-", "*", "/", "%", "<", ">", "="],
    punctuation: "()[],:.",
};

/// Total and deterministic: malformed input becomes `Error` tokens, at most
/// one per line.
pub fn tokenize(source: &str) -> Vec<Token> {
    scan::tokenize(source, &RULES)
}
