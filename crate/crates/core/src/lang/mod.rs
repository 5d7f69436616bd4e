//! Front ends for the bundled guest languages.

pub mod ast;
pub mod compiler;
pub mod minipy;
pub mod minirb;
mod scan;

use std::fmt;

/// Token categories of both languages. Indent/Dedent only occur in MiniPy;
/// IVar and Constant only in MiniRb.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Keyword,
    Identifier,
    IVar,
    Constant,
    Number,
    Text,
    Operator,
    Punctuation,
    Comment,
    Indent,
    Dedent,
    Newline,
    /// Malformed input; the parser reports it as a syntax error.
    Error,
}

impl TokenKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenKind::Keyword => "Keyword",
            TokenKind::Identifier => "Identifier",
            TokenKind::IVar => "IVar",
            TokenKind::Constant => "Constant",
            TokenKind::Number => "Number",
            TokenKind::Text => "Text",
            TokenKind::Operator => "Operator",
            TokenKind::Punctuation => "Punctuation",
            TokenKind::Comment => "Comment",
            TokenKind::Indent => "Indent",
            TokenKind::Dedent => "Dedent",
            TokenKind::Newline => "Newline",
            TokenKind::Error => "Error",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A lexeme with its position. Columns count characters from zero; `end`
/// is exclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub line: u32,
    pub start: u32,
    pub end: u32,
}

impl Token {
    pub fn is(&self, kind: TokenKind, lexeme: &str) -> bool {
        self.kind == kind && self.lexeme == lexeme
    }
}

/// Text escaping shared by the display functions.
pub(crate) fn escape_text(s: &str, quote: char) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 => out.push_str(&format!("\\x{:02x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}
