//! Character-level scanning shared by both lexers.

use super::{Token, TokenKind};

pub(crate) struct LexRules {
    pub keywords: &'static [&'static str],
    /// Synthesize Indent/Dedent from leading whitespace.
    pub indentation: bool,
    /// `@ivar` tokens, capitalized constants and `?`/`!` name suffixes.
    pub ruby_names: bool,
    /// Longest first.
    pub operators: &'static [&'static str],
    pub punctuation: &'static str,
}

/// Width of one tab in indentation.
const TAB_WIDTH: usize = 4;

struct Scanner<'a> {
    chars: Vec<char>,
    i: usize,
    line: u32,
    col: u32,
    rules: &'a LexRules,
    tokens: Vec<Token>,
}

impl Scanner<'_> {
    fn peek(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).copied()
    }

    fn emit(&mut self, kind: TokenKind, from: usize, start_col: u32) {
        let lexeme: String = self.chars[from..self.i].iter().collect();
        self.tokens.push(Token { kind, lexeme, line: self.line, start: start_col, end: self.col });
    }

    fn advance(&mut self, n: usize) {
        self.i += n;
        self.col += n as u32;
    }

    /// Consumes the rest of the line as one error token.
    fn error_to_eol(&mut self, from: usize, start_col: u32) {
        while let Some(c) = self.peek(0) {
            if c == '\n' {
                break;
            }
            self.advance(1);
        }
        self.emit(TokenKind::Error, from, start_col);
    }

    fn is_ident_char(c: char) -> bool {
        c.is_alphanumeric() || c == '_'
    }

    fn number(&mut self) {
        let (from, col) = (self.i, self.col);
        let digits = |s: &mut Self| {
            let mut n = 0;
            while let Some(c) = s.peek(0) {
                if c.is_ascii_digit() || (c == '_' && n > 0 && s.peek(1).is_some_and(|d| d.is_ascii_digit())) {
                    s.advance(1);
                    n += 1;
                } else {
                    break;
                }
            }
            n
        };
        digits(self);
        if self.peek(0) == Some('.') && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            self.advance(1);
            digits(self);
        }
        if matches!(self.peek(0), Some('e' | 'E')) {
            let sign = usize::from(matches!(self.peek(1), Some('+' | '-')));
            if self.peek(1 + sign).is_some_and(|c| c.is_ascii_digit()) {
                self.advance(1 + sign);
                digits(self);
            } else {
                return self.error_to_eol(from, col);
            }
        }
        if self.peek(0).is_some_and(Self::is_ident_char) || (self.peek(0) == Some('.') && self.peek(1).is_some_and(|c| c.is_ascii_digit())) {
            return self.error_to_eol(from, col);
        }
        self.emit(TokenKind::Number, from, col);
    }

    fn string(&mut self, quote: char) {
        let (from, col) = (self.i, self.col);
        self.advance(1);
        loop {
            match self.peek(0) {
                None | Some('\n') => return self.error_to_eol(from, col),
                Some('\\') => {
                    if matches!(self.peek(1), None | Some('\n')) {
                        return self.error_to_eol(from, col);
                    }
                    self.advance(2);
                }
                Some(c) if c == quote => {
                    self.advance(1);
                    break;
                }
                Some(_) => self.advance(1),
            }
        }
        self.emit(TokenKind::Text, from, col);
    }

    fn name(&mut self) {
        let (from, col) = (self.i, self.col);
        while self.peek(0).is_some_and(Self::is_ident_char) {
            self.advance(1);
        }
        if self.rules.ruby_names && matches!(self.peek(0), Some('?' | '!')) && self.peek(1) != Some('=') {
            self.advance(1);
        }
        let word: String = self.chars[from..self.i].iter().collect();
        let kind = if self.rules.keywords.contains(&word.as_str()) {
            TokenKind::Keyword
        } else if self.rules.ruby_names && word.starts_with(|c: char| c.is_uppercase()) {
            TokenKind::Constant
        } else {
            TokenKind::Identifier
        };
        self.emit(kind, from, col);
    }
}

pub(crate) fn tokenize(source: &str, rules: &LexRules) -> Vec<Token> {
    let mut s = Scanner { chars: source.chars().collect(), i: 0, line: 1, col: 0, rules, tokens: Vec::new() };
    let mut depth = 0usize;
    let mut levels = vec![0usize];
    let mut line_start = true;
    loop {
        if line_start && rules.indentation && depth == 0 {
            line_start = false;
            let mut width = 0;
            let mut n = 0;
            while let Some(c) = s.peek(n) {
                match c {
                    ' ' => width += 1,
                    '\t' => width += TAB_WIDTH,
                    _ => break,
                }
                n += 1;
            }
            let next = s.peek(n);
            if !matches!(next, None | Some('\n' | '#' | '\r')) {
                let (from, col) = (s.i, s.col);
                s.advance(n);
                let top = *levels.last().expect("base level");
                if width > top {
                    levels.push(width);
                    s.emit(TokenKind::Indent, from, col);
                } else if width < top {
                    while width < *levels.last().expect("base level") {
                        levels.pop();
                        let (line, at) = (s.line, s.col);
                        s.tokens.push(Token { kind: TokenKind::Dedent, lexeme: String::new(), line, start: at, end: at });
                    }
                    if width != *levels.last().expect("base level") {
                        levels.push(width);
                        s.tokens.push(Token {
                            kind: TokenKind::Error,
                            lexeme: s.chars[from..s.i].iter().collect(),
                            line: s.line,
                            start: col,
                            end: s.col,
                        });
                    }
                }
                continue;
            }
        }
        let Some(c) = s.peek(0) else { break };
        let (from, col) = (s.i, s.col);
        match c {
            '\n' => {
                s.advance(1);
                if depth == 0 {
                    s.emit(TokenKind::Newline, from, col);
                }
                s.line += 1;
                s.col = 0;
                line_start = true;
            }
            ' ' | '\t' | '\r' => s.advance(1),
            '\\' if s.peek(1) == Some('\n') => {
                s.i += 2;
                s.line += 1;
                s.col = 0;
            }
            '#' => {
                while s.peek(0).is_some_and(|c| c != '\n') {
                    s.advance(1);
                }
                s.emit(TokenKind::Comment, from, col);
            }
            '0'..='9' => s.number(),
            '\'' | '"' => s.string(c),
            '@' if rules.ruby_names => {
                s.advance(1);
                if s.peek(0).is_some_and(|c| c.is_alphabetic() || c == '_') {
                    while s.peek(0).is_some_and(Scanner::is_ident_char) {
                        s.advance(1);
                    }
                    s.emit(TokenKind::IVar, from, col);
                } else {
                    s.error_to_eol(from, col);
                }
            }
            c if c.is_alphabetic() || c == '_' => s.name(),
            _ => {
                if let Some(op) = rules.operators.iter().find(|op| s.chars[s.i..].starts_with(&op.chars().collect::<Vec<_>>())) {
                    s.advance(op.chars().count());
                    s.emit(TokenKind::Operator, from, col);
                } else if rules.punctuation.contains(c) {
                    s.advance(1);
                    match c {
                        '(' | '[' => depth += 1,
                        ')' | ']' => depth = depth.saturating_sub(1),
                        _ => {}
                    }
                    s.emit(TokenKind::Punctuation, from, col);
                } else {
                    s.error_to_eol(from, col);
                }
            }
        }
    }
    if rules.indentation {
        while levels.len() > 1 {
            levels.pop();
            s.tokens.push(Token { kind: TokenKind::Dedent, lexeme: String::new(), line: s.line, start: s.col, end: s.col });
        }
    }
    s.tokens
}

/// Decodes a quoted literal produced by the scanner.
pub(crate) fn unescape(lexeme: &str) -> String {
    let inner: Vec<char> = lexeme.chars().collect();
    let inner = &inner[1..inner.len().saturating_sub(1).max(1)];
    let mut out = String::new();
    let mut it = inner.iter().copied();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('0') => out.push('\0'),
            Some('\\') => out.push('\\'),
            Some('\'') => out.push('\''),
            Some('"') => out.push('"'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Message for an error token, for the parser's syntax error.
pub(crate) fn describe_error(token: &Token) -> String {
    let first = token.lexeme.chars().next();
    match first {
        Some('\'' | '"') => "unterminated string literal".into(),
        Some(c) if c.is_ascii_digit() => format!("invalid number literal '{}'", token.lexeme),
        Some(' ' | '\t') => "unindent does not match any outer indentation level".into(),
        Some('@') => "invalid instance variable name".into(),
        Some(c) => format!("invalid character '{}'", c),
        None => "invalid token".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unescape_handles_common_escapes() {
        assert_eq!(unescape(r#"'a\nb'"#), "a\nb");
        assert_eq!(unescape(r#""q\"x""#), "q\"x");
        assert_eq!(unescape(r"'\d'"), "\\d");
        assert_eq!(unescape("''"), "");
    }
}
