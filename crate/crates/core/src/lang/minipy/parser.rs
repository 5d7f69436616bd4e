//! Recursive-descent statement parser with precedence climbing for
//! expressions.

use num_bigint::BigInt;

use super::lexer::tokenize;
use crate::kernel::{BinaryOp, CompareOp, UnaryOp};
use crate::lang::ast::{ClassDef, Expr, ExprKind, FuncDef, Program, RescueClause, Stmt, StmtKind, Target};
use crate::lang::scan::{describe_error, unescape};
use crate::lang::{Token, TokenKind};
use crate::plugin::CompileError;

pub fn parse(source: &str) -> Result<Program, CompileError> {
    let tokens: Vec<Token> = tokenize(source).into_iter().filter(|t| t.kind != TokenKind::Comment).collect();
    let (eof_line, eof_col) = source_end(source);
    let mut p = Parser { tokens, pos: 0, eof_line, eof_col };
    p.program()
}

fn source_end(source: &str) -> (u32, u32) {
    let line = source.matches('\n').count() as u32 + 1;
    let col = source.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32;
    (line, col)
}

pub(crate) fn parse_number(lexeme: &str) -> Option<ExprKind> {
    let clean: String = lexeme.chars().filter(|c| *c != '_').collect();
    if clean.contains(['.', 'e', 'E']) {
        clean.parse::<f64>().ok().map(ExprKind::Float)
    } else {
        clean.parse::<BigInt>().ok().map(ExprKind::Int)
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    eof_line: u32,
    eof_col: u32,
}

type PResult<T> = Result<T, CompileError>;

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
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

    fn at_end_of_statement(&self) -> bool {
        matches!(self.peek().map(|t| t.kind), None | Some(TokenKind::Newline | TokenKind::Dedent))
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
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
            Some(t) if t.kind == TokenKind::Newline => self.error_here("invalid syntax: unexpected end of line"),
            Some(t) if t.kind == TokenKind::Indent => self.error_here("unexpected indent"),
            Some(t) => self.error_here(format!("invalid syntax: unexpected '{}'", t.lexeme)),
            None => self.error_here("unexpected end of input"),
        }
    }

    fn eat(&mut self, kind: TokenKind, lexeme: &str) -> bool {
        if self.at(kind, lexeme) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind, lexeme: &str) -> PResult<Token> {
        if self.at(kind, lexeme) {
            Ok(self.next().expect("checked"))
        } else {
            match self.peek() {
                Some(t) if t.kind != TokenKind::Error => {
                    let found = if t.kind == TokenKind::Newline { "end of line".to_string() } else { format!("'{}'", t.lexeme) };
                    Err(self.error_here(format!("expected '{}', found {}", lexeme, found)))
                }
                _ => Err(self.error_here(format!("expected '{}'", lexeme))),
            }
        }
    }

    fn identifier(&mut self) -> PResult<String> {
        if self.at_kind(TokenKind::Identifier) {
            Ok(self.next().expect("checked").lexeme)
        } else {
            Err(self.error_here("expected a name"))
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut body = Vec::new();
        loop {
            while self.eat(TokenKind::Newline, "\n") {}
            if self.peek().is_none() {
                break;
            }
            if self.at_kind(TokenKind::Indent) || self.at_kind(TokenKind::Dedent) {
                return Err(self.unexpected());
            }
            body.push(self.statement()?);
        }
        Ok(Program { body })
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let line = self.line();
        let t = self.peek().cloned().ok_or_else(|| self.unexpected())?;
        if t.kind == TokenKind::Keyword {
            match t.lexeme.as_str() {
                "def" => return Ok(Stmt::new(StmtKind::FuncDef(self.funcdef()?), line)),
                "class" => return self.classdef(),
                "if" => return self.if_stmt(),
                "while" => {
                    self.next();
                    let cond = self.expr()?;
                    let body = self.block()?;
                    return Ok(Stmt::new(StmtKind::While { cond, body }, line));
                }
                "for" => {
                    self.next();
                    let var = self.identifier()?;
                    self.expect(TokenKind::Keyword, "in")?;
                    let iter = self.expr()?;
                    let body = self.block()?;
                    return Ok(Stmt::new(StmtKind::For { var, iter, body }, line));
                }
                "try" => return self.try_stmt(),
                _ => {}
            }
        }
        let s = self.simple()?;
        self.end_statement()?;
        Ok(s)
    }

    fn end_statement(&mut self) -> PResult<()> {
        if self.eat(TokenKind::Newline, "\n") || self.peek().is_none() || self.at_kind(TokenKind::Dedent) {
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn simple(&mut self) -> PResult<Stmt> {
        let line = self.line();
        if self.eat(TokenKind::Keyword, "pass") {
            return Ok(Stmt::new(StmtKind::Pass, line));
        }
        if self.eat(TokenKind::Keyword, "break") {
            return Ok(Stmt::new(StmtKind::Break, line));
        }
        if self.eat(TokenKind::Keyword, "continue") {
            return Ok(Stmt::new(StmtKind::Continue, line));
        }
        if self.eat(TokenKind::Keyword, "return") {
            let value = if self.at_end_of_statement() { None } else { Some(self.expr()?) };
            return Ok(Stmt::new(StmtKind::Return(value), line));
        }
        if self.eat(TokenKind::Keyword, "raise") {
            if self.at_end_of_statement() {
                return Err(self.error_here("bare 'raise' is not supported"));
            }
            let e = self.expr()?;
            return Ok(Stmt::new(StmtKind::Raise(e), line));
        }
        let e = self.expr()?;
        if self.at(TokenKind::Operator, "=") {
            let op_tok = self.next().expect("checked");
            let target = to_target(e, &op_tok)?;
            let value = self.expr()?;
            return Ok(Stmt::new(StmtKind::Assign(target, value), line));
        }
        let aug = match self.peek() {
            Some(t) if t.kind == TokenKind::Operator => match t.lexeme.as_str() {
                "+=" => Some(BinaryOp::Add),
                "-=" => Some(BinaryOp::Sub),
                "*=" => Some(BinaryOp::Mul),
                "/=" => Some(BinaryOp::Div),
                "%=" => Some(BinaryOp::Mod),
                _ => None,
            },
            _ => None,
        };
        if let Some(op) = aug {
            let op_tok = self.next().expect("checked");
            let target = to_target(e, &op_tok)?;
            let value = self.expr()?;
            return Ok(Stmt::new(StmtKind::AugAssign(target, op, value), line));
        }
        Ok(Stmt::new(StmtKind::Expr(e), line))
    }

    /// `':' NEWLINE INDENT stmts DEDENT` or `':' simple-statement`.
    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(TokenKind::Punctuation, ":")?;
        if !self.eat(TokenKind::Newline, "\n") {
            if self.peek().is_none() {
                return Err(self.error_here("expected an indented block"));
            }
            let s = self.simple()?;
            self.end_statement()?;
            return Ok(vec![s]);
        }
        while self.eat(TokenKind::Newline, "\n") {}
        if !self.at_kind(TokenKind::Indent) {
            return Err(self.error_here("expected an indented block"));
        }
        self.next();
        let mut body = Vec::new();
        loop {
            while self.eat(TokenKind::Newline, "\n") {}
            if self.at_kind(TokenKind::Dedent) {
                self.next();
                break;
            }
            if self.peek().is_none() {
                break;
            }
            if self.at_kind(TokenKind::Indent) {
                return Err(self.unexpected());
            }
            body.push(self.statement()?);
        }
        Ok(body)
    }

    fn funcdef(&mut self) -> PResult<FuncDef> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "def")?;
        let name = self.identifier()?;
        self.expect(TokenKind::Punctuation, "(")?;
        let mut params: Vec<String> = Vec::new();
        while !self.at(TokenKind::Punctuation, ")") {
            let at = self.peek().cloned();
            let p = self.identifier()?;
            if params.contains(&p) {
                let t = at.expect("parameter token");
                return Err(CompileError::new(t.line, t.start, format!("duplicate argument '{}' in function definition", p)));
            }
            params.push(p);
            if !self.eat(TokenKind::Punctuation, ",") {
                break;
            }
        }
        self.expect(TokenKind::Punctuation, ")")?;
        let body = self.block()?;
        Ok(FuncDef { name, params, body, line })
    }

    fn classdef(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "class")?;
        let name = self.identifier()?;
        if self.eat(TokenKind::Punctuation, "(") {
            return Err(self.error_here("inheritance is not supported"));
        }
        let body = self.block()?;
        let mut methods = Vec::new();
        let mut attrs = Vec::new();
        for s in body {
            match s.kind {
                StmtKind::FuncDef(f) => methods.push(f),
                StmtKind::Assign(Target::Name(n), value) => attrs.push((n, value)),
                StmtKind::Pass => {}
                _ => return Err(CompileError::new(s.line, 0, "only methods and attribute assignments may appear in a class body")),
            }
        }
        Ok(Stmt::new(StmtKind::ClassDef(ClassDef { name, methods, attrs }), line))
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "if")?;
        let mut branches = Vec::new();
        let cond = self.expr()?;
        branches.push((cond, self.block()?));
        let mut orelse = Vec::new();
        loop {
            if self.eat(TokenKind::Keyword, "elif") {
                let cond = self.expr()?;
                branches.push((cond, self.block()?));
            } else if self.eat(TokenKind::Keyword, "else") {
                orelse = self.block()?;
                break;
            } else {
                break;
            }
        }
        Ok(Stmt::new(StmtKind::If { branches, orelse }, line))
    }

    fn try_stmt(&mut self) -> PResult<Stmt> {
        let line = self.line();
        self.expect(TokenKind::Keyword, "try")?;
        let body = self.block()?;
        let mut clauses: Vec<RescueClause> = Vec::new();
        while self.at(TokenKind::Keyword, "except") {
            let tok = self.next().expect("checked");
            if clauses.last().is_some_and(|c| c.class_name.is_none()) {
                return Err(CompileError::new(tok.line, tok.start, "default 'except:' must be last"));
            }
            let mut class_name = None;
            let mut bind = None;
            if !self.at(TokenKind::Punctuation, ":") {
                class_name = Some(self.identifier()?);
                if self.eat(TokenKind::Keyword, "as") {
                    bind = Some(self.identifier()?);
                }
            }
            let body = self.block()?;
            clauses.push(RescueClause { class_name, bind, body, line: tok.line });
        }
        let finally = if self.eat(TokenKind::Keyword, "finally") { Some(self.block()?) } else { None };
        if clauses.is_empty() && finally.is_none() {
            return Err(self.error_here("expected 'except' or 'finally' block"));
        }
        Ok(Stmt::new(StmtKind::Try { body, clauses, finally }, line))
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut left = self.and_expr()?;
        while self.at(TokenKind::Keyword, "or") {
            let line = self.next().expect("checked").line;
            let right = self.and_expr()?;
            left = Expr::new(ExprKind::Or(Box::new(left), Box::new(right)), line);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut left = self.not_expr()?;
        while self.at(TokenKind::Keyword, "and") {
            let line = self.next().expect("checked").line;
            let right = self.not_expr()?;
            left = Expr::new(ExprKind::And(Box::new(left), Box::new(right)), line);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.at(TokenKind::Keyword, "not") {
            let line = self.next().expect("checked").line;
            let operand = self.not_expr()?;
            return Ok(Expr::new(ExprKind::Unary(UnaryOp::Not, Box::new(operand)), line));
        }
        self.comparison()
    }

    fn compare_op(&self) -> Option<CompareOp> {
        let t = self.peek()?;
        if t.kind != TokenKind::Operator {
            return None;
        }
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
        let line = self.next().expect("checked").line;
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
            let line = self.next().expect("checked").line;
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
            let line = self.next().expect("checked").line;
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

    fn args(&mut self, close: &str) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        while !self.at(TokenKind::Punctuation, close) {
            args.push(self.expr()?);
            if !self.eat(TokenKind::Punctuation, ",") {
                break;
            }
        }
        self.expect(TokenKind::Punctuation, close)?;
        Ok(args)
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        loop {
            if self.at(TokenKind::Punctuation, "(") {
                let line = self.next().expect("checked").line;
                let args = self.args(")")?;
                e = Expr::new(ExprKind::Call(Box::new(e), args), line);
            } else if self.at(TokenKind::Punctuation, ".") {
                let line = self.next().expect("checked").line;
                let name = self.identifier()?;
                if self.at(TokenKind::Punctuation, "(") {
                    self.next();
                    let args = self.args(")")?;
                    e = Expr::new(ExprKind::Send { receiver: Some(Box::new(e)), selector: name, args }, line);
                } else {
                    e = Expr::new(ExprKind::Attr(Box::new(e), name), line);
                }
            } else if self.at(TokenKind::Punctuation, "[") {
                let line = self.next().expect("checked").line;
                let index = self.expr()?;
                self.expect(TokenKind::Punctuation, "]")?;
                e = Expr::new(ExprKind::Index(Box::new(e), Box::new(index)), line);
            } else {
                return Ok(e);
            }
        }
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
            TokenKind::Identifier => ExprKind::Name(t.lexeme.clone()),
            TokenKind::Keyword => match t.lexeme.as_str() {
                "True" => ExprKind::Bool(true),
                "False" => ExprKind::Bool(false),
                "None" => ExprKind::Nil,
                _ => return Err(self.unexpected()),
            },
            TokenKind::Punctuation if t.lexeme == "(" => {
                self.next();
                let e = self.expr()?;
                self.expect(TokenKind::Punctuation, ")")?;
                return Ok(e);
            }
            TokenKind::Punctuation if t.lexeme == "[" => {
                self.next();
                let items = self.args("]")?;
                return Ok(Expr::new(ExprKind::List(items), line));
            }
            _ => return Err(self.unexpected()),
        };
        self.next();
        Ok(Expr::new(kind, line))
    }
}

fn to_target(e: Expr, at: &Token) -> PResult<Target> {
    match e.kind {
        ExprKind::Name(n) => Ok(Target::Name(n)),
        ExprKind::Attr(obj, name) => Ok(Target::Attr(*obj, name)),
        ExprKind::Index(c, i) => Ok(Target::Index(*c, *i)),
        _ => Err(CompileError::new(at.line, at.start, "cannot assign to expression")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expr_of(src: &str) -> Expr {
        match parse(src).unwrap().body.remove(0).kind {
            StmtKind::Expr(e) => e,
            other => panic!("not an expression: {:?}", other),
        }
    }

    #[test]
    fn multiplication_binds_tighter_than_addition() {
        let e = expr_of("1 + 2 * 3");
        let ExprKind::Binary(BinaryOp::Add, l, r) = e.kind else { panic!() };
        assert_eq!(l.kind, ExprKind::Int(1.into()));
        assert!(matches!(r.kind, ExprKind::Binary(BinaryOp::Mul, _, _)));
    }

    #[test]
    fn not_is_below_comparison() {
        let e = expr_of("not 1 < 2");
        let ExprKind::Unary(UnaryOp::Not, inner) = e.kind else { panic!() };
        assert!(matches!(inner.kind, ExprKind::Compare(CompareOp::Lt, _, _)));
    }

    #[test]
    fn or_is_below_and() {
        let e = expr_of("a or b and c");
        let ExprKind::Or(_, r) = e.kind else { panic!() };
        assert!(matches!(r.kind, ExprKind::And(_, _)));
    }

    #[test]
    fn try_with_named_clause() {
        let p = parse("try:\n    f()\nexcept E as e:\n    g(e)").unwrap();
        let StmtKind::Try { clauses, finally, .. } = &p.body[0].kind else { panic!() };
        assert_eq!(clauses.len(), 1);
        assert_eq!(clauses[0].class_name.as_deref(), Some("E"));
        assert_eq!(clauses[0].bind.as_deref(), Some("e"));
        assert!(finally.is_none());
    }

    #[test]
    fn syntax_error_points_at_colon() {
        let err = parse("def f(:").unwrap_err();
        assert_eq!((err.line, err.column), (1, 6));
    }

    #[test]
    fn bare_except_must_be_last() {
        let err = parse("try:\n    pass\nexcept:\n    pass\nexcept E:\n    pass").unwrap_err();
        assert_eq!(err.line, 5);
    }

    #[test]
    fn method_call_and_attribute() {
        let e = expr_of("a.b.c(1)");
        let ExprKind::Send { receiver, selector, args } = e.kind else { panic!() };
        assert_eq!(selector, "c");
        assert_eq!(args.len(), 1);
        assert!(matches!(receiver.unwrap().kind, ExprKind::Attr(_, _)));
    }

    #[test]
    fn chained_comparison_is_rejected() {
        assert!(parse("1 < 2 < 3").is_err());
    }

    #[test]
    fn unterminated_string_is_reported() {
        let err = parse("x = 'abc").unwrap_err();
        assert!(err.message.contains("unterminated"), "{}", err.message);
    }

    #[test]
    fn class_body_collects_methods_and_attrs() {
        let p = parse("class A:\n    n = 1\n    def f(self):\n        return self.n\n").unwrap();
        let StmtKind::ClassDef(c) = &p.body[0].kind else { panic!() };
        assert_eq!(c.methods.len(), 1);
        assert_eq!(c.attrs.len(), 1);
    }
}
