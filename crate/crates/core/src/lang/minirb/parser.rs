//! Recursive-descent parser for MiniRb.
//!
//! A bare identifier that has not been assigned in the current scope is a
//! method call without a receiver, as in Ruby; arguments may then follow
//! without parentheses (`puts x, y`).

use std::collections::HashSet;

use super::lexer::tokenize;
use crate::kernel::{BinaryOp, CompareOp, UnaryOp};
use crate::lang::ast::{ClassDef, Expr, ExprKind, FuncDef, Program, RescueClause, Stmt, StmtKind, Target};
use crate::lang::minipy::parse_number;
use crate::lang::scan::{describe_error, unescape};
use crate::lang::{Token, TokenKind};
use crate::plugin::CompileError;

pub fn parse(source: &str) -> Result<Program, CompileError> {
    let tokens: Vec<Token> = tokenize(source).into_iter().filter(|t| t.kind != TokenKind::Comment).collect();
    let line = source.matches('\n').count() as u32 + 1;
    let col = source.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32;
    let mut p = Parser { tokens, pos: 0, eof_line: line, eof_col: col, scopes: vec![HashSet::new()] };
    let body = p.body(&[])?;
    if p.peek().is_some() {
        return Err(p.unexpected());
    }
    Ok(Program { body })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    eof_line: u32,
    eof_col: u32,
    /// Local variable names per definition scope.
    scopes: Vec<HashSet<String>>,
}

type PResult<T> = Result<T, CompileError>;

const BLOCK_END: &[&str] = &["end", "else", "elsif", "rescue", "ensure"];

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.pos + k)
    }

    fn previous(&self) -> Option<&Token> {
        self.pos.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    fn line(&self) -> u32 {
        self.peek().map_or(self.eof_line, |t| t.line)
    }

    fn at(&self, kind: TokenKind, lexeme: &str) -> bool {
        self.peek().is_some_and(|t| t.is(kind, lexeme))
    }

    fn at_kind(&self, kind: TokenKind) -> bool {
        self.peek().is_some_and(|t| t.kind == kind)
    }

    fn at_keyword(&self, words: &[&str]) -> bool {
        self.peek().is_some_and(|t| t.kind == TokenKind::Keyword && words.contains(&t.lexeme.as_str()))
    }

    fn at_separator(&self) -> bool {
        self.at_kind(TokenKind::Newline) || self.at(TokenKind::Punctuation, ";")
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: TokenKind, lexeme: &str) -> bool {
        if self.at(kind, lexeme) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn skip_newlines(&mut self) {
        while self.at_kind(TokenKind::Newline) {
            self.pos += 1;
        }
    }

    fn error_here(&self, message: impl Into<String>) -> CompileError {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Error => CompileError::new(t.line, t.start, describe_error(t)),
            Some(t) => CompileError::new(t.line, t.start, message),
            None => CompileError::new(self.eof_line, self.eof_col, message),
        }
    }

    fn unexpected(&self) -> CompileError {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Newline => self.error_here("syntax error, unexpected end of line"),
            Some(t) => self.error_here(format!("syntax error, unexpected '{}'", t.lexeme)),
            None => self.error_here("syntax error, unexpected end of input"),
        }
    }

    fn expect(&mut self, kind: TokenKind, lexeme: &str) -> PResult<Token> {
        if self.at(kind, lexeme) {
            return Ok(self.next().expect("checked"));
        }
        match self.peek() {
            None => Err(self.error_here(format!("syntax error, unexpected end of input, expecting '{}'", lexeme))),
            Some(t) if t.kind == TokenKind::Error => Err(self.error_here("")),
            Some(t) if t.kind == TokenKind::Newline => {
                Err(self.error_here(format!("syntax error, unexpected end of line, expecting '{}'", lexeme)))
            }
            Some(t) => Err(self.error_here(format!("syntax error, unexpected '{}', expecting '{}'", t.lexeme, lexeme))),
        }
    }

    fn identifier(&mut self) -> PResult<String> {
        if self.at_kind(TokenKind::Identifier) {
            Ok(self.next().expect("checked").lexeme)
        } else {
            Err(self.error_here("expected a name"))
        }
    }

    fn constant(&mut self) -> PResult<String> {
        if self.at_kind(TokenKind::Constant) {
            Ok(self.next().expect("checked").lexeme)
        } else {
            Err(self.error_here("expected a constant name"))
        }
    }

    fn declare(&mut self, name: &str) {
        self.scopes.last_mut().expect("scope").insert(name.to_string());
    }

    fn is_local(&self, name: &str) -> bool {
        self.scopes.last().expect("scope").contains(name)
    }

    /// Statements up to one of the `terminators` keywords (not consumed) or
    /// the end of input.
    fn body(&mut self, terminators: &[&str]) -> PResult<Vec<Stmt>> {
        let mut out = Vec::new();
        loop {
            while self.at_separator() {
                self.pos += 1;
            }
            if self.peek().is_none() || self.at_keyword(terminators) {
                return Ok(out);
            }
            out.push(self.statement()?);
            if !(self.at_separator() || self.peek().is_none() || self.at_keyword(BLOCK_END)) {
                return Err(self.unexpected());
            }
        }
    }

    fn close(&mut self, opener: &str) -> PResult<()> {
        if self.eat(TokenKind::Keyword, "end") {
            Ok(())
        } else if self.peek().is_none() {
            Err(self.error_here(format!("syntax error, unexpected end of input, expecting 'end' for '{}'", opener)))
        } else {
            Err(self.unexpected())
        }
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let line = self.line();
        if let Some(t) = self.peek().filter(|t| t.kind == TokenKind::Keyword) {
            match t.lexeme.as_str() {
                "def" => return Ok(Stmt::new(StmtKind::FuncDef(self.def()?), line)),
                "class" => return self.class(),
                "if" => return self.if_stmt(),
                "while" => {
                    self.next();
                    let cond = self.expr()?;
                    self.eat(TokenKind::Keyword, "do");
                    let body = self.body(&["end"])?;
                    self.close("while")?;
                    return Ok(Stmt::new(StmtKind::While { cond, body }, line));
                }
                "for" => {
                    self.next();
                    let var = self.identifier()?;
                    self.declare(&var);
                    self.expect(TokenKind::Keyword, "in")?;
                    let iter = self.expr()?;
                    self.eat(TokenKind::Keyword, "do");
                    let body = self.body(&["end"])?;
                    self.close("for")?;
                    return Ok(Stmt::new(StmtKind::For { var, iter, body }, line));
                }
                "begin" => return self.begin(),
                "return" => {
                    self.next();
                    let value = if self.at_statement_end() { None } else { Some(self.expr()?) };
                    return Ok(Stmt::new(StmtKind::Return(value), line));
                }
                "break" => {
                    self.next();
                    return Ok(Stmt::new(StmtKind::Break, line));
                }
                "next" => {
                    self.next();
                    return Ok(Stmt::new(StmtKind::Continue, line));
                }
                "raise" => {
                    self.next();
                    if self.at_statement_end() {
                        return Err(self.error_here("bare 'raise' is not supported"));
                    }
                    let first = self.expr()?;
                    let raised = if self.eat(TokenKind::Punctuation, ",") {
                        self.skip_newlines();
                        let message = self.expr()?;
                        Expr::new(ExprKind::Call(Box::new(first), vec![message]), line)
                    } else {
                        first
                    };
                    return Ok(Stmt::new(StmtKind::Raise(raised), line));
                }
                _ => {}
            }
        }
        self.simple()
    }

    fn at_statement_end(&self) -> bool {
        self.peek().is_none() || self.at_separator() || self.at_keyword(BLOCK_END)
    }

    fn simple(&mut self) -> PResult<Stmt> {
        let line = self.line();
        let e = self.expr()?;
        if self.at(TokenKind::Operator, "=") {
            let op = self.next().expect("checked");
            let target = self.target(e, &op)?;
            self.skip_newlines();
            let value = self.expr()?;
            return Ok(Stmt::new(StmtKind::Assign(target, value), line));
        }
        let aug = self.peek().filter(|t| t.kind == TokenKind::Operator).and_then(|t| match t.lexeme.as_str() {
            "+=" => Some(BinaryOp::Add),
            "-=" => Some(BinaryOp::Sub),
            "*=" => Some(BinaryOp::Mul),
            "/=" => Some(BinaryOp::Div),
            "%=" => Some(BinaryOp::Mod),
            _ => None,
        });
        if let Some(bin) = aug {
            let op = self.next().expect("checked");
            let target = self.target(e, &op)?;
            self.skip_newlines();
            let value = self.expr()?;
            return Ok(Stmt::new(StmtKind::AugAssign(target, bin, value), line));
        }
        Ok(Stmt::new(StmtKind::Expr(e), line))
    }

    fn target(&mut self, e: Expr, at: &Token) -> PResult<Target> {
        let target = match e.kind {
            ExprKind::Name(n) => Target::Name(n),
            ExprKind::Send { receiver: None, selector, args } if args.is_empty() => Target::Name(selector),
            ExprKind::Send { receiver: Some(r), selector, args } if args.is_empty() => Target::Attr(*r, selector),
            ExprKind::IVar(n) => Target::IVar(n),
            ExprKind::Index(c, i) => Target::Index(*c, *i),
            _ => return Err(CompileError::new(at.line, at.start, "cannot assign to expression")),
        };
        if let Target::Name(n) = &target {
            self.declare(n);
        }
        Ok(target)
    }

    fn params(&mut self) -> PResult<Vec<String>> {
        let mut params: Vec<String> = Vec::new();
        let parens = self.eat(TokenKind::Punctuation, "(");
        if !parens && self.at_statement_end() {
            return Ok(params);
        }
        loop {
            if parens && self.at(TokenKind::Punctuation, ")") {
                break;
            }
            let at = self.peek().cloned();
            let p = self.identifier()?;
            if params.contains(&p) {
                let t = at.expect("parameter token");
                return Err(CompileError::new(t.line, t.start, "duplicated argument name"));
            }
            params.push(p);
            if !self.eat(TokenKind::Punctuation, ",") {
                break;
            }
            self.skip_newlines();
        }
        if parens {
            self.expect(TokenKind::Punctuation, ")")?;
        }
        Ok(params)
    }

    fn def(&mut self) -> PResult<FuncDef> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "def")?;
        let name = self.identifier()?;
        let params = self.params()?;
        self.scopes.push(params.iter().cloned().collect());
        let body = self.body(&["end"]);
        self.scopes.pop();
        let body = body?;
        self.close("def")?;
        Ok(FuncDef { name, params, body, line })
    }

    fn class(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "class")?;
        let name = self.constant()?;
        if self.at(TokenKind::Operator, "<") {
            return Err(self.error_here("inheritance is not supported"));
        }
        self.scopes.push(HashSet::new());
        let body = self.body(&["end"]);
        self.scopes.pop();
        let body = body?;
        self.close("class")?;
        let mut methods = Vec::new();
        let mut attrs = Vec::new();
        for s in body {
            match s.kind {
                StmtKind::FuncDef(f) => methods.push(f),
                StmtKind::Assign(Target::Name(n), value) => attrs.push((n, value)),
                _ => return Err(CompileError::new(s.line, 0, "only method definitions and constants may appear in a class body")),
            }
        }
        Ok(Stmt::new(StmtKind::ClassDef(ClassDef { name, methods, attrs }), line))
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "if")?;
        let mut branches = Vec::new();
        let mut orelse = Vec::new();
        loop {
            let cond = self.expr()?;
            self.eat(TokenKind::Keyword, "then");
            let body = self.body(&["elsif", "else", "end"])?;
            branches.push((cond, body));
            if self.eat(TokenKind::Keyword, "elsif") {
                continue;
            }
            if self.eat(TokenKind::Keyword, "else") {
                orelse = self.body(&["end"])?;
            }
            break;
        }
        self.close("if")?;
        Ok(Stmt::new(StmtKind::If { branches, orelse }, line))
    }

    fn begin(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "begin")?;
        let body = self.body(&["rescue", "ensure", "end"])?;
        let mut clauses: Vec<RescueClause> = Vec::new();
        while self.at(TokenKind::Keyword, "rescue") {
            let tok = self.next().expect("checked");
            if clauses.last().is_some_and(|c| c.class_name.is_none()) {
                return Err(CompileError::new(tok.line, tok.start, "a bare 'rescue' must be the last clause"));
            }
            let class_name = if self.at_kind(TokenKind::Constant) { Some(self.constant()?) } else { None };
            let bind = if self.eat(TokenKind::Operator, "=>") {
                let name = self.identifier()?;
                self.declare(&name);
                Some(name)
            } else {
                None
            };
            self.eat(TokenKind::Keyword, "then");
            let body = self.body(&["rescue", "ensure", "end"])?;
            clauses.push(RescueClause { class_name, bind, body, line: tok.line });
        }
        let finally = if self.eat(TokenKind::Keyword, "ensure") { Some(self.body(&["end"])?) } else { None };
        self.close("begin")?;
        if clauses.is_empty() && finally.is_none() {
            let always = Expr::new(ExprKind::Bool(true), line);
            return Ok(Stmt::new(StmtKind::If { branches: vec![(always, body)], orelse: Vec::new() }, line));
        }
        Ok(Stmt::new(StmtKind::Try { body, clauses, finally }, line))
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn binary_step(&mut self) -> u32 {
        let line = self.next().expect("operator").line;
        self.skip_newlines();
        line
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.at(TokenKind::Operator, "||") || self.at(TokenKind::Keyword, "or") {
            let line = self.binary_step();
            let right = self.and_expr()?;
            left = Expr::new(ExprKind::Or(Box::new(left), Box::new(right)), line);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.at(TokenKind::Operator, "&&") || self.at(TokenKind::Keyword, "and") {
            let line = self.binary_step();
            let right = self.not_expr()?;
            left = Expr::new(ExprKind::And(Box::new(left), Box::new(right)), line);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.at(TokenKind::Operator, "!") || self.at(TokenKind::Keyword, "not") {
            let line = self.next().expect("checked").line;
            let operand = self.not_expr()?;
            return Ok(Expr::new(ExprKind::Unary(UnaryOp::Not, Box::new(operand)), line));
        }
        self.comparison()
    }

    fn compare_op(&self) -> Option<CompareOp> {
        let t = self.peek().filter(|t| t.kind == TokenKind::Operator)?;
        Some(match t.lexeme.as_str() {
            "==" => CompareOp::Eq,
            "!=" => CompareOp::Ne,
            "<" => CompareOp::Lt,
            "<=" => CompareOp::Le,
            ">" => CompareOp::Gt,
            ">=" => CompareOp::Ge,
            _ => return None,
        })
    }

    fn comparison(&mut self) -> PResult<Expr> {
        let left = self.sum()?;
        let Some(op) = self.compare_op() else { return Ok(left) };
        let line = self.binary_step();
        let right = self.sum()?;
        if self.compare_op().is_some() {
            return Err(self.error_here("chained comparisons are not supported"));
        }
        Ok(Expr::new(ExprKind::Compare(op, Box::new(left), Box::new(right)), line))
    }

    fn sum(&mut self) -> PResult<Expr> {
        let mut left = self.term()?;
        loop {
            let op = if self.at(TokenKind::Operator, "+") {
                BinaryOp::Add
            } else if self.at(TokenKind::Operator, "-") {
                BinaryOp::Sub
            } else {
                return Ok(left);
            };
            let line = self.binary_step();
            let right = self.term()?;
            left = Expr::new(ExprKind::Binary(op, Box::new(left), Box::new(right)), line);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut left = self.unary()?;
        loop {
            let op = if self.at(TokenKind::Operator, "*") {
                BinaryOp::Mul
            } else if self.at(TokenKind::Operator, "/") {
                BinaryOp::Div
            } else if self.at(TokenKind::Operator, "%") {
                BinaryOp::Mod
            } else {
                return Ok(left);
            };
            let line = self.binary_step();
            let right = self.unary()?;
            left = Expr::new(ExprKind::Binary(op, Box::new(left), Box::new(right)), line);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.at(TokenKind::Operator, "-") {
            let line = self.next().expect("checked").line;
            let operand = self.unary()?;
            return Ok(Expr::new(ExprKind::Unary(UnaryOp::Neg, Box::new(operand)), line));
        }
        if self.eat(TokenKind::Operator, "+") {
            return self.unary();
        }
        self.postfix()
    }

    /// Whether the next token begins a parenthesis-free argument list for
    /// the name just consumed.
    fn command_args_follow(&self) -> bool {
        let (Some(prev), Some(t)) = (self.previous(), self.peek()) else { return false };
        if t.line != prev.line {
            return false;
        }
        let spaced = t.start > prev.end;
        match t.kind {
            TokenKind::Identifier | TokenKind::Constant | TokenKind::Number | TokenKind::Text | TokenKind::IVar => true,
            TokenKind::Keyword => matches!(t.lexeme.as_str(), "nil" | "true" | "false" | "self" | "not"),
            TokenKind::Punctuation => spaced && (t.lexeme == "[" || t.lexeme == "("),
            TokenKind::Operator => {
                spaced
                    && (t.lexeme == "-" || t.lexeme == "!")
                    && self.peek_at(1).is_some_and(|n| n.line == t.line && n.start == t.end)
            }
            _ => false,
        }
    }

    fn call_args(&mut self) -> PResult<Vec<Expr>> {
        if self.at(TokenKind::Punctuation, "(") && self.previous().zip(self.peek()).is_some_and(|(p, t)| t.start == p.end && t.line == p.line) {
            self.next();
            self.skip_newlines();
            let mut args = Vec::new();
            while !self.at(TokenKind::Punctuation, ")") {
                args.push(self.expr()?);
                self.skip_newlines();
                if !self.eat(TokenKind::Punctuation, ",") {
                    break;
                }
                self.skip_newlines();
            }
            self.expect(TokenKind::Punctuation, ")")?;
            return Ok(args);
        }
        if self.command_args_follow() {
            let mut args = vec![self.expr()?];
            while self.eat(TokenKind::Punctuation, ",") {
                self.skip_newlines();
                args.push(self.expr()?);
            }
            return Ok(args);
        }
        Ok(Vec::new())
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.at(TokenKind::Punctuation, ".") {
                let line = self.next().expect("checked").line;
                self.skip_newlines();
                let name = match self.peek() {
                    Some(t) if matches!(t.kind, TokenKind::Identifier | TokenKind::Constant) => self.next().expect("checked").lexeme,
                    Some(t) if t.kind == TokenKind::Keyword && t.lexeme == "class" => self.next().expect("checked").lexeme,
                    _ => return Err(self.error_here("expected a method name")),
                };
                let args = self.call_args()?;
                e = if name == "new" {
                    Expr::new(ExprKind::New(Box::new(e), args), line)
                } else {
                    Expr::new(ExprKind::Send { receiver: Some(Box::new(e)), selector: name, args }, line)
                };
            } else if self.at(TokenKind::Punctuation, "[") && self.previous().zip(self.peek()).is_some_and(|(p, t)| p.line == t.line) {
                let line = self.next().expect("checked").line;
                self.skip_newlines();
                let index = self.expr()?;
                self.skip_newlines();
                self.expect(TokenKind::Punctuation, "]")?;
                e = Expr::new(ExprKind::Index(Box::new(e), Box::new(index)), line);
            } else {
                return Ok(e);
            }
        }
    }

    fn list(&mut self) -> PResult<Vec<Expr>> {
        self.expect(TokenKind::Punctuation, "[")?;
        self.skip_newlines();
        let mut items = Vec::new();
        while !self.at(TokenKind::Punctuation, "]") {
            items.push(self.expr()?);
            self.skip_newlines();
            if !self.eat(TokenKind::Punctuation, ",") {
                break;
            }
            self.skip_newlines();
        }
        self.expect(TokenKind::Punctuation, "]")?;
        Ok(items)
    }

    fn atom(&mut self) -> PResult<Expr> {
        let Some(t) = self.peek().cloned() else {
            return Err(self.unexpected());
        };
        let line = t.line;
        let kind = match t.kind {
            TokenKind::Number => match parse_number(&t.lexeme) {
                Some(k) => k,
                None => return Err(self.error_here(format!("invalid number literal '{}'", t.lexeme))),
            },
            TokenKind::Text => ExprKind::Text(unescape(&t.lexeme)),
            TokenKind::IVar => ExprKind::IVar(t.lexeme.clone()),
            TokenKind::Constant => ExprKind::Name(t.lexeme.clone()),
            TokenKind::Identifier => {
                self.next();
                let name = t.lexeme.clone();
                let adjacent_paren = self.at(TokenKind::Punctuation, "(") && self.peek().is_some_and(|p| p.start == t.end && p.line == t.line);
                if self.is_local(&name) && !adjacent_paren {
                    return Ok(Expr::new(ExprKind::Name(name), line));
                }
                let args = self.call_args()?;
                return Ok(Expr::new(ExprKind::Send { receiver: None, selector: name, args }, line));
            }
            TokenKind::Keyword => match t.lexeme.as_str() {
                "nil" => ExprKind::Nil,
                "true" => ExprKind::Bool(true),
                "false" => ExprKind::Bool(false),
                "self" => ExprKind::SelfRef,
                _ => return Err(self.unexpected()),
            },
            TokenKind::Punctuation if t.lexeme == "(" => {
                self.next();
                self.skip_newlines();
                let e = self.expr()?;
                self.skip_newlines();
                self.expect(TokenKind::Punctuation, ")")?;
                return Ok(e);
            }
            TokenKind::Punctuation if t.lexeme == "[" => {
                let items = self.list()?;
                return Ok(Expr::new(ExprKind::List(items), line));
            }
            _ => return Err(self.unexpected()),
        };
        self.next();
        Ok(Expr::new(kind, line))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmts(src: &str) -> Vec<StmtKind> {
        parse(src).unwrap().body.into_iter().map(|s| s.kind).collect()
    }

    fn expr_of(src: &str) -> Expr {
        match stmts(src).pop().unwrap() {
            StmtKind::Expr(e) => e,
            other => panic!("not an expression: {:?}", other),
        }
    }

    #[test]
    fn begin_rescue_with_binding() {
        let s = stmts("begin\nf\nrescue E => e\ng(e)\nend");
        let StmtKind::Try { clauses, finally, body } = &s[0] else { panic!("{:?}", s) };
        assert_eq!(clauses.len(), 1);
        assert_eq!(clauses[0].class_name.as_deref(), Some("E"));
        assert_eq!(clauses[0].bind.as_deref(), Some("e"));
        assert!(finally.is_none());
        assert!(matches!(&body[0].kind, StmtKind::Expr(Expr { kind: ExprKind::Send { receiver: None, .. }, .. })));
        let StmtKind::Expr(call) = &clauses[0].body[0].kind else { panic!() };
        let ExprKind::Send { args, .. } = &call.kind else { panic!() };
        assert_eq!(args[0].kind, ExprKind::Name("e".into()));
    }

    #[test]
    fn raise_text() {
        let s = stmts("raise \"boom\"");
        assert_eq!(s[0], StmtKind::Raise(Expr::new(ExprKind::Text("boom".into()), 1)));
    }

    #[test]
    fn raise_class_and_message() {
        let s = stmts("raise ArgumentError, \"bad\"");
        let StmtKind::Raise(Expr { kind: ExprKind::Call(class, args), .. }) = &s[0] else { panic!() };
        assert_eq!(class.kind, ExprKind::Name("ArgumentError".into()));
        assert_eq!(args.len(), 1);
    }

    #[test]
    fn unclosed_def_is_an_error() {
        assert!(parse("def f(").is_err());
        assert!(parse("def f\n1").is_err());
    }

    #[test]
    fn assigned_names_become_locals() {
        let e = expr_of("x = 1\nx");
        assert_eq!(e.kind, ExprKind::Name("x".into()));
        let e = expr_of("y");
        assert!(matches!(e.kind, ExprKind::Send { receiver: None, .. }));
    }

    #[test]
    fn command_call_without_parentheses() {
        let e = expr_of("puts 1, 2");
        let ExprKind::Send { selector, args, .. } = e.kind else { panic!() };
        assert_eq!(selector, "puts");
        assert_eq!(args.len(), 2);
    }

    #[test]
    fn binary_minus_is_not_an_argument() {
        let e = expr_of("x = 3\nx - 1");
        assert!(matches!(e.kind, ExprKind::Binary(BinaryOp::Sub, _, _)));
        let e = expr_of("n - 1");
        assert!(matches!(e.kind, ExprKind::Binary(BinaryOp::Sub, _, _)));
    }

    #[test]
    fn new_and_chained_sends() {
        let e = expr_of("Point.new(1, 2)");
        assert!(matches!(e.kind, ExprKind::New(_, ref a) if a.len() == 2));
        let e = expr_of("it.downcase.split(\" \")");
        let ExprKind::Send { receiver, selector, .. } = e.kind else { panic!() };
        assert_eq!(selector, "split");
        assert!(matches!(receiver.unwrap().kind, ExprKind::Send { .. }));
    }

    #[test]
    fn def_parameters_are_locals() {
        let s = stmts("def f(a, b)\n  a + b\nend");
        let StmtKind::FuncDef(f) = &s[0] else { panic!() };
        assert_eq!(f.params, ["a", "b"]);
        let StmtKind::Expr(e) = &f.body[0].kind else { panic!() };
        let ExprKind::Binary(_, l, _) = &e.kind else { panic!() };
        assert_eq!(l.kind, ExprKind::Name("a".into()));
    }

    #[test]
    fn operators_continue_across_lines() {
        let e = expr_of("1 +\n2");
        assert!(matches!(e.kind, ExprKind::Binary(BinaryOp::Add, _, _)));
    }

    #[test]
    fn logical_operators() {
        let e = expr_of("a || b && !c");
        let ExprKind::Or(_, r) = e.kind else { panic!() };
        let ExprKind::And(_, c) = r.kind else { panic!() };
        assert!(matches!(c.kind, ExprKind::Unary(UnaryOp::Not, _)));
    }

    #[test]
    fn one_line_if() {
        let s = stmts("if 1 < 2 then 3 else 4 end");
        assert!(matches!(&s[0], StmtKind::If { branches, orelse } if branches.len() == 1 && orelse.len() == 1));
    }

    #[test]
    fn class_with_methods() {
        let s = stmts("class Point\n  def initialize(x, y)\n    @x = x\n    @y = y\n  end\n  def x\n    @x\n  end\nend");
        let StmtKind::ClassDef(c) = &s[0] else { panic!() };
        assert_eq!(c.name, "Point");
        assert_eq!(c.methods.len(), 2);
    }

    #[test]
    fn bare_rescue_must_be_last() {
        assert!(parse("begin\n1\nrescue\n2\nrescue E\n3\nend").is_err());
    }
}
