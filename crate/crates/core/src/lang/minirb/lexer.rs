//! MiniRb tokenizer. Blocks are delimited by `end`, so no indentation
//! tokens are produced.

use crate::lang::scan::{self, LexRules};
use crate::lang::Token;

pub const KEYWORDS: &[&str] = &[
    "and", "begin", "break", "class", "def", "do", "else", "elsif", "end", "ensure", "false", "for", "if", "in",
    "next", "nil", "not", "or", "raise", "rescue", "return", "self", "then", "true", "while",
];

const RULES: LexRules = LexRules {
    keywords: KEYWORDS,
    indentation: false,
    ruby_names: true,
    operators: &[
        "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&&", "||", "=>", "+", "-", "*", "/", "%", "<", ">", "=",
        "!",
    ],
    punctuation: "()[],.;",
};

pub fn tokenize(source: &str) -> Vec<Token> {
    scan::tokenize(source, &RULES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::TokenKind::{self, *};

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn ivar_assignment() {
        let toks = tokenize("@x = 1");
        assert_eq!(kinds("@x = 1"), [IVar, Operator, Number]);
        assert_eq!(toks[0].lexeme, "@x");
    }

    #[test]
    fn def_end() {
        let toks = tokenize("def f\nend");
        assert!(toks[0].is(Keyword, "def"));
        assert!(toks.last().unwrap().is(Keyword, "end"));
    }

    #[test]
    fn constant_new_call() {
        let toks = tokenize("Point.new(1,2)");
        assert_eq!(kinds("Point.new(1,2)")[..3], [Constant, Punctuation, Identifier]);
        assert_eq!(toks[2].lexeme, "new");
    }

    #[test]
    fn predicate_names_keep_their_suffix() {
        let toks = tokenize("empty? x != y");
        assert_eq!(toks[0].lexeme, "empty?");
        assert!(toks[2].is(Operator, "!="));
    }

    #[test]
    fn no_indentation_tokens() {
        assert!(!kinds("if x\n    y\nend").iter().any(|k| matches!(k, Indent | Dedent)));
    }

    #[test]
    fn lone_at_sign_is_an_error() {
        assert_eq!(kinds("@ = 1"), [Error]);
    }
}
