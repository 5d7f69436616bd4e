//! Syntax trees produced by both front ends.
//!
//! The two languages differ in surface syntax but share one statement and
//! expression vocabulary, so a single tree type (and a single lowering pass)
//! serves both. Nodes that only one language produces are noted.

use num_bigint::BigInt;

use crate::kernel::{BinaryOp, CompareOp, UnaryOp};

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub body: Vec<Stmt>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuncDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassDef {
    pub name: String,
    pub methods: Vec<FuncDef>,
    /// Class-level assignments, in definition order.
    pub attrs: Vec<(String, Expr)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescueClause {
    /// `None` catches everything.
    pub class_name: Option<String>,
    pub bind: Option<String>,
    pub body: Vec<Stmt>,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Name(String),
    Attr(Expr, String),
    Index(Expr, Expr),
    /// `@name` (MiniRb); stored as a slot of the receiver.
    IVar(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Expr(Expr),
    Assign(Target, Expr),
    AugAssign(Target, BinaryOp, Expr),
    FuncDef(FuncDef),
    ClassDef(ClassDef),
    If { branches: Vec<(Expr, Vec<Stmt>)>, orelse: Vec<Stmt> },
    While { cond: Expr, body: Vec<Stmt> },
    For { var: String, iter: Expr, body: Vec<Stmt> },
    Try { body: Vec<Stmt>, clauses: Vec<RescueClause>, finally: Option<Vec<Stmt>> },
    Raise(Expr),
    Return(Option<Expr>),
    Break,
    Continue,
    Pass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Nil,
    Bool(bool),
    Int(BigInt),
    Float(f64),
    Text(String),
    List(Vec<Expr>),
    Name(String),
    SelfRef,
    IVar(String),
    /// Slot read, `obj.name` (MiniPy).
    Attr(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    /// Call of a value, `f(x)` (MiniPy).
    Call(Box<Expr>, Vec<Expr>),
    /// Message send. Without a receiver the selector is resolved against
    /// locals, then the receiver's methods, then builtins.
    Send { receiver: Option<Box<Expr>>, selector: String, args: Vec<Expr> },
    /// `Class.new(args)` (MiniRb).
    New(Box<Expr>, Vec<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Compare(CompareOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn new(kind: ExprKind, line: u32) -> Expr {
        Expr { kind, line }
    }
}

impl Stmt {
    pub fn new(kind: StmtKind, line: u32) -> Stmt {
        Stmt { kind, line }
    }
}
