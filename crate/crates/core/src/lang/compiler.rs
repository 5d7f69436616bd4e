//! Lowering of syntax trees to the shared instruction set.

use std::collections::HashMap;
use std::rc::Rc;

use super::ast::{ClassDef, Expr, ExprKind, FuncDef, Program, RescueClause, Stmt, StmtKind, Target};
use crate::kernel::{
    BinaryOp, ClassTemplate, CodeKind, CodeUnit, Constant, HandlerKind, Instruction, Matcher, UnaryOp,
};
use crate::plugin::CompileError;
use crate::value::{LangId, Value};

/// Surface rules that change how a tree is lowered.
#[derive(Clone, Debug)]
pub struct Dialect {
    pub lang: LangId,
    pub root_name: &'static str,
    pub method_separator: char,
    /// Function and program bodies evaluate to their last statement.
    pub tail_values: bool,
    pub continue_keyword: &'static str,
}

/// Where the compiled program will run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CompileContext {
    /// Inside a method activation, so the receiver and its slots are
    /// reachable (used when evaluating in a debugger frame).
    pub in_method: bool,
}

#[derive(Clone, Debug)]
enum Block {
    Loop { is_for: bool, continue_target: usize, breaks: Vec<usize> },
    /// Active rescue handlers of a protected body.
    Rescue(usize),
    /// An active ensure block and the body to inline on early exits.
    Finally(Vec<Stmt>),
    /// An ensure body running with a pending exception or return value
    /// beneath it on the operand stack.
    Unwinding,
}

struct Unit<'d> {
    dialect: &'d Dialect,
    source: Rc<str>,
    name: Rc<str>,
    kind: CodeKind,
    params: Vec<Rc<str>>,
    instructions: Vec<Instruction>,
    lines: Vec<u32>,
    constants: Vec<Constant>,
    names: Vec<Rc<str>>,
    name_index: HashMap<String, u32>,
    line: u32,
    blocks: Vec<Block>,
    in_method: bool,
}

fn error(line: u32, message: impl Into<String>) -> CompileError {
    CompileError::new(line, 0, message)
}

/// Compiles a whole program into a module unit.
pub fn compile_program(
    program: &Program,
    source: &str,
    dialect: &Dialect,
    context: CompileContext,
) -> Result<CodeUnit, CompileError> {
    let source: Rc<str> = Rc::from(source);
    let mut unit = Unit::new(dialect, source, Rc::from(dialect.root_name), CodeKind::Module, Vec::new());
    unit.in_method = context.in_method;
    let body = &program.body;
    if dialect.tail_values {
        unit.tail(body)?;
    } else {
        match body.split_last() {
            Some((Stmt { kind: StmtKind::Expr(e), .. }, rest)) => {
                unit.stmts(rest)?;
                unit.expr(e)?;
            }
            _ => {
                unit.stmts(body)?;
                unit.push_const(Value::Nil);
            }
        }
    }
    unit.emit(Instruction::Return);
    Ok(unit.finish())
}

impl<'d> Unit<'d> {
    fn new(dialect: &'d Dialect, source: Rc<str>, name: Rc<str>, kind: CodeKind, params: Vec<Rc<str>>) -> Self {
        Unit {
            dialect,
            source,
            name,
            kind,
            params,
            instructions: Vec::new(),
            lines: Vec::new(),
            constants: Vec::new(),
            names: Vec::new(),
            name_index: HashMap::new(),
            line: 1,
            blocks: Vec::new(),
            in_method: false,
        }
    }

    fn finish(self) -> CodeUnit {
        CodeUnit {
            name: self.name,
            kind: self.kind,
            params: self.params,
            instructions: self.instructions,
            constants: self.constants,
            names: self.names,
            lines: self.lines,
            source: self.source,
            language: self.dialect.lang.clone(),
            depths: Default::default(),
        }
    }

    fn emit(&mut self, ins: Instruction) -> usize {
        self.instructions.push(ins);
        self.lines.push(self.line);
        self.instructions.len() - 1
    }

    fn here(&self) -> usize {
        self.instructions.len()
    }

    fn patch(&mut self, at: usize, target: usize) {
        let t = target as u32;
        match &mut self.instructions[at] {
            Instruction::Jump(x) | Instruction::JumpIfFalse(x) | Instruction::IterNext(x) => *x = t,
            Instruction::SetupHandler { target, .. } => *target = t,
            other => panic!("patching a non-jump instruction {:?}", other),
        }
    }

    fn name(&mut self, name: &str) -> u32 {
        if let Some(i) = self.name_index.get(name) {
            return *i;
        }
        let i = self.names.len() as u32;
        self.names.push(Rc::from(name));
        self.name_index.insert(name.to_string(), i);
        i
    }

    fn constant(&mut self, c: Constant) -> u32 {
        self.constants.push(c);
        (self.constants.len() - 1) as u32
    }

    fn push_const(&mut self, v: Value) {
        let k = self.constant(Constant::Value(v));
        self.emit(Instruction::PushConst(k));
    }

    fn stmts(&mut self, body: &[Stmt]) -> Result<(), CompileError> {
        for s in body {
            self.stmt(s)?;
        }
        Ok(())
    }

    /// Compiles `body` leaving the value of its last statement on the stack.
    fn tail(&mut self, body: &[Stmt]) -> Result<(), CompileError> {
        let Some((last, rest)) = body.split_last() else {
            self.push_const(Value::Nil);
            return Ok(());
        };
        self.stmts(rest)?;
        self.line = last.line;
        match &last.kind {
            StmtKind::Expr(e) => self.expr(e),
            StmtKind::Assign(target, value) => {
                self.expr(value)?;
                self.line = last.line;
                self.emit(Instruction::Dup);
                self.store(target, last.line)
            }
            StmtKind::If { branches, orelse } => self.if_chain(branches, orelse, true),
            _ => {
                self.stmt(last)?;
                self.push_const(Value::Nil);
                Ok(())
            }
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), CompileError> {
        self.line = s.line;
        match &s.kind {
            StmtKind::Expr(e) => {
                self.expr(e)?;
                self.emit(Instruction::Pop);
            }
            StmtKind::Assign(target, value) => {
                self.expr(value)?;
                self.line = s.line;
                self.store(target, s.line)?;
            }
            StmtKind::AugAssign(target, op, value) => self.aug_assign(target, *op, value, s.line)?,
            StmtKind::FuncDef(f) => {
                let code = self.function(f, CodeKind::Function, f.name.clone(), false)?;
                self.line = s.line;
                let k = self.constant(Constant::Code(Rc::new(code)));
                self.emit(Instruction::MakeFunction(k));
                let n = self.name(&f.name);
                self.emit(Instruction::Store(n));
            }
            StmtKind::ClassDef(c) => self.class(c, s.line)?,
            StmtKind::If { branches, orelse } => self.if_chain(branches, orelse, false)?,
            StmtKind::While { cond, body } => {
                let head = self.here();
                self.expr(cond)?;
                self.line = s.line;
                let exit = self.emit(Instruction::JumpIfFalse(0));
                self.loop_body(body, false, head)?;
                self.line = s.line;
                self.emit(Instruction::Jump(head as u32));
                let end = self.here();
                self.patch(exit, end);
                self.close_loop(end);
            }
            StmtKind::For { var, iter, body } => {
                self.expr(iter)?;
                self.line = s.line;
                self.emit(Instruction::IterNew);
                let head = self.emit(Instruction::IterNext(0));
                let n = self.name(var);
                self.emit(Instruction::Store(n));
                self.loop_body(body, true, head)?;
                self.line = s.line;
                self.emit(Instruction::Jump(head as u32));
                let end = self.here();
                self.patch(head, end);
                self.close_loop(end);
            }
            StmtKind::Try { body, clauses, finally } => self.try_stmt(body, clauses, finally.as_deref(), s.line)?,
            StmtKind::Raise(e) => {
                self.expr(e)?;
                self.line = s.line;
                self.emit(Instruction::Raise);
            }
            StmtKind::Return(value) => {
                if self.kind == CodeKind::Module {
                    return Err(error(s.line, "'return' outside function"));
                }
                match value {
                    Some(e) => self.expr(e)?,
                    None => self.push_const(Value::Nil),
                }
                self.line = s.line;
                self.exit_blocks(None)?;
                self.emit(Instruction::Return);
            }
            StmtKind::Break => {
                let target = self.innermost_loop().ok_or_else(|| error(s.line, "'break' outside loop"))?;
                self.exit_blocks(Some(target))?;
                if let Block::Loop { is_for: true, .. } = self.blocks[target] {
                    self.emit(Instruction::Pop);
                    self.emit(Instruction::Pop);
                }
                let at = self.emit(Instruction::Jump(0));
                if let Block::Loop { breaks, .. } = &mut self.blocks[target] {
                    breaks.push(at);
                }
            }
            StmtKind::Continue => {
                let kw = self.dialect.continue_keyword;
                let target = self.innermost_loop().ok_or_else(|| error(s.line, format!("'{}' outside loop", kw)))?;
                self.exit_blocks(Some(target))?;
                let Block::Loop { continue_target, .. } = self.blocks[target] else { unreachable!() };
                self.emit(Instruction::Jump(continue_target as u32));
            }
            StmtKind::Pass => {}
        }
        Ok(())
    }

    fn innermost_loop(&self) -> Option<usize> {
        self.blocks.iter().rposition(|b| matches!(b, Block::Loop { .. }))
    }

    /// Emits the handler pops and inlined ensure bodies needed to leave every
    /// block above `stop` (or all blocks, for a return).
    fn exit_blocks(&mut self, stop: Option<usize>) -> Result<(), CompileError> {
        let saved = self.blocks.clone();
        let floor = stop.map_or(0, |i| i + 1);
        let line = self.line;
        for i in (floor..saved.len()).rev() {
            match &saved[i] {
                Block::Loop { .. } => {}
                Block::Unwinding => {
                    // A return leaves the frame and its stack behind.
                    if stop.is_some() {
                        self.emit(Instruction::Pop);
                    }
                }
                Block::Rescue(n) => {
                    for _ in 0..*n {
                        self.emit(Instruction::PopHandler);
                    }
                }
                Block::Finally(body) => {
                    self.emit(Instruction::PopHandler);
                    let above = self.blocks.split_off(i);
                    if stop.is_none() {
                        // The return value waits beneath the ensure body.
                        self.blocks.push(Block::Unwinding);
                        self.stmts(body)?;
                        self.blocks.pop();
                    } else {
                        self.stmts(body)?;
                    }
                    self.blocks.extend(above);
                    self.line = line;
                }
            }
        }
        Ok(())
    }

    fn loop_body(&mut self, body: &[Stmt], is_for: bool, head: usize) -> Result<(), CompileError> {
        self.blocks.push(Block::Loop { is_for, continue_target: head, breaks: Vec::new() });
        self.stmts(body)
    }

    fn close_loop(&mut self, end: usize) {
        if let Some(Block::Loop { breaks, .. }) = self.blocks.pop() {
            for at in breaks {
                self.patch(at, end);
            }
        }
    }

    fn if_chain(&mut self, branches: &[(Expr, Vec<Stmt>)], orelse: &[Stmt], value: bool) -> Result<(), CompileError> {
        let mut ends = Vec::new();
        for (cond, body) in branches {
            let line = cond.line;
            self.expr(cond)?;
            self.line = line;
            let skip = self.emit(Instruction::JumpIfFalse(0));
            if value {
                self.tail(body)?;
            } else {
                self.stmts(body)?;
            }
            self.line = line;
            ends.push(self.emit(Instruction::Jump(0)));
            let next = self.here();
            self.patch(skip, next);
        }
        if value {
            self.tail(orelse)?;
        } else {
            self.stmts(orelse)?;
        }
        let end = self.here();
        for at in ends {
            self.patch(at, end);
        }
        Ok(())
    }

    fn try_stmt(
        &mut self,
        body: &[Stmt],
        clauses: &[RescueClause],
        finally: Option<&[Stmt]>,
        line: u32,
    ) -> Result<(), CompileError> {
        let mut ensure_setup = None;
        if let Some(fin) = finally {
            ensure_setup = Some(self.emit(Instruction::SetupHandler {
                target: 0,
                matcher: Matcher::CatchAll,
                kind: HandlerKind::Ensure,
            }));
            self.blocks.push(Block::Finally(fin.to_vec()));
        }
        // The first clause must be the innermost block, so set up in reverse.
        let n = clauses.len();
        let mut setups = vec![0usize; n];
        for (i, clause) in clauses.iter().enumerate().rev() {
            let matcher = match &clause.class_name {
                Some(c) => Matcher::ClassName(Rc::from(c.as_str())),
                None => Matcher::CatchAll,
            };
            setups[i] = self.emit(Instruction::SetupHandler { target: 0, matcher, kind: HandlerKind::Rescue });
        }
        if n > 0 {
            self.blocks.push(Block::Rescue(n));
        }
        self.stmts(body)?;
        self.line = line;
        if n > 0 {
            self.blocks.pop();
        }
        for _ in 0..n {
            self.emit(Instruction::PopHandler);
        }
        let mut to_after = vec![self.emit(Instruction::Jump(0))];
        for (i, clause) in clauses.iter().enumerate() {
            self.line = clause.line;
            let entry = self.here();
            self.patch(setups[i], entry);
            for _ in 0..(n - 1 - i) {
                self.emit(Instruction::PopHandler);
            }
            match &clause.bind {
                Some(name) => {
                    let k = self.name(name);
                    self.emit(Instruction::Store(k));
                }
                None => {
                    self.emit(Instruction::Pop);
                }
            }
            self.stmts(&clause.body)?;
            self.line = clause.line;
            to_after.push(self.emit(Instruction::Jump(0)));
        }
        let after = self.here();
        for at in to_after {
            self.patch(at, after);
        }
        if let (Some(fin), Some(setup)) = (finally, ensure_setup) {
            self.blocks.pop();
            self.line = line;
            self.emit(Instruction::PopHandler);
            self.stmts(fin)?;
            self.line = line;
            let skip = self.emit(Instruction::Jump(0));
            let handler = self.here();
            self.patch(setup, handler);
            self.blocks.push(Block::Unwinding);
            self.stmts(fin)?;
            self.blocks.pop();
            self.line = line;
            self.emit(Instruction::Raise);
            let end = self.here();
            self.patch(skip, end);
        }
        Ok(())
    }

    fn store(&mut self, target: &Target, line: u32) -> Result<(), CompileError> {
        match target {
            Target::Name(name) => {
                let k = self.name(name);
                self.emit(Instruction::Store(k));
            }
            Target::Attr(obj, name) => {
                self.expr(obj)?;
                self.line = line;
                let k = self.name(name);
                self.emit(Instruction::StoreSlot(k));
            }
            Target::Index(container, index) => {
                self.expr(container)?;
                self.expr(index)?;
                self.line = line;
                self.emit(Instruction::SetIndex);
            }
            Target::IVar(name) => {
                self.load_self(line)?;
                let k = self.name(name);
                self.emit(Instruction::StoreSlot(k));
            }
        }
        Ok(())
    }

    fn load_self(&mut self, line: u32) -> Result<(), CompileError> {
        if !self.in_method {
            return Err(error(line, "instance variable outside of a method"));
        }
        let k = self.name("self");
        self.emit(Instruction::Load(k));
        Ok(())
    }

    fn aug_assign(&mut self, target: &Target, op: BinaryOp, value: &Expr, line: u32) -> Result<(), CompileError> {
        match target {
            Target::Name(name) => {
                let k = self.name(name);
                self.emit(Instruction::Load(k));
                self.expr(value)?;
                self.line = line;
                self.emit(Instruction::Binary(op));
                self.emit(Instruction::Store(k));
            }
            Target::IVar(name) => {
                self.load_self(line)?;
                let k = self.name(name);
                self.emit(Instruction::LoadSlot(k));
                self.expr(value)?;
                self.line = line;
                self.emit(Instruction::Binary(op));
                self.load_self(line)?;
                self.emit(Instruction::StoreSlot(k));
            }
            Target::Attr(obj, name) if matches!(obj.kind, ExprKind::Name(_) | ExprKind::SelfRef) => {
                self.expr(obj)?;
                let k = self.name(name);
                self.emit(Instruction::LoadSlot(k));
                self.expr(value)?;
                self.line = line;
                self.emit(Instruction::Binary(op));
                self.expr(obj)?;
                self.line = line;
                self.emit(Instruction::StoreSlot(k));
            }
            _ => return Err(error(line, "augmented assignment needs a name or a simple attribute")),
        }
        Ok(())
    }

    fn function(&mut self, f: &FuncDef, kind: CodeKind, name: String, in_method: bool) -> Result<CodeUnit, CompileError> {
        let params = f.params.iter().map(|p| Rc::from(p.as_str())).collect();
        let mut unit = Unit::new(self.dialect, self.source.clone(), Rc::from(name.as_str()), kind, params);
        unit.in_method = in_method;
        unit.line = f.line;
        if self.dialect.tail_values {
            unit.tail(&f.body)?;
        } else {
            unit.stmts(&f.body)?;
            unit.push_const(Value::Nil);
        }
        unit.emit(Instruction::Return);
        Ok(unit.finish())
    }

    fn class(&mut self, c: &ClassDef, line: u32) -> Result<(), CompileError> {
        let mut methods = Vec::new();
        for m in &c.methods {
            let full = format!("{}{}{}", c.name, self.dialect.method_separator, m.name);
            let code = self.function(m, CodeKind::Method, full, true)?;
            methods.push((Rc::from(m.name.as_str()), Rc::new(code)));
        }
        for (_, value) in &c.attrs {
            self.expr(value)?;
        }
        self.line = line;
        let template = ClassTemplate {
            name: Rc::from(c.name.as_str()),
            methods,
            attr_names: c.attrs.iter().map(|(n, _)| Rc::from(n.as_str())).collect(),
        };
        let k = self.constant(Constant::Class(Rc::new(template)));
        self.emit(Instruction::MakeClass(k));
        let n = self.name(&c.name);
        self.emit(Instruction::Store(n));
        Ok(())
    }

    fn expr(&mut self, e: &Expr) -> Result<(), CompileError> {
        self.line = e.line;
        match &e.kind {
            ExprKind::Nil => self.push_const(Value::Nil),
            ExprKind::Bool(b) => self.push_const(Value::Bool(*b)),
            ExprKind::Int(n) => self.push_const(Value::Int(n.clone())),
            ExprKind::Float(x) => self.push_const(Value::Float(*x)),
            ExprKind::Text(s) => self.push_const(Value::text(s)),
            ExprKind::List(items) => {
                for item in items {
                    self.expr(item)?;
                }
                self.line = e.line;
                self.emit(Instruction::BuildList(items.len() as u32));
            }
            ExprKind::Name(name) => {
                let k = self.name(name);
                self.emit(Instruction::Load(k));
            }
            ExprKind::SelfRef => {
                let k = self.name("self");
                self.emit(Instruction::Load(k));
            }
            ExprKind::IVar(name) => {
                self.load_self(e.line)?;
                let k = self.name(name);
                self.emit(Instruction::LoadSlot(k));
            }
            ExprKind::Attr(obj, name) => {
                self.expr(obj)?;
                self.line = e.line;
                let k = self.name(name);
                self.emit(Instruction::LoadSlot(k));
            }
            ExprKind::Index(container, index) => {
                self.expr(container)?;
                self.expr(index)?;
                self.line = e.line;
                self.emit(Instruction::Index);
            }
            ExprKind::Call(callee, args) => {
                self.expr(callee)?;
                for a in args {
                    self.expr(a)?;
                }
                self.line = e.line;
                self.emit(Instruction::Call(args.len() as u32));
            }
            ExprKind::Send { receiver, selector, args } => {
                match receiver {
                    Some(r) => self.expr(r)?,
                    None => self.push_const(Value::Nil),
                }
                for a in args {
                    self.expr(a)?;
                }
                self.line = e.line;
                let k = self.name(selector);
                self.emit(Instruction::Invoke { selector: k, argc: args.len() as u32, implicit: receiver.is_none() });
            }
            ExprKind::New(class, args) => {
                self.expr(class)?;
                for a in args {
                    self.expr(a)?;
                }
                self.line = e.line;
                self.emit(Instruction::NewInstance(args.len() as u32));
            }
            ExprKind::Binary(op, a, b) => {
                self.expr(a)?;
                self.expr(b)?;
                self.line = e.line;
                self.emit(Instruction::Binary(*op));
            }
            ExprKind::Unary(op, a) => {
                self.expr(a)?;
                self.line = e.line;
                self.emit(Instruction::Unary(*op));
            }
            ExprKind::Compare(op, a, b) => {
                self.expr(a)?;
                self.expr(b)?;
                self.line = e.line;
                self.emit(Instruction::Compare(*op));
            }
            ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                self.expr(a)?;
                self.line = e.line;
                self.emit(Instruction::Dup);
                if matches!(e.kind, ExprKind::Or(..)) {
                    self.emit(Instruction::Unary(UnaryOp::Not));
                }
                let skip = self.emit(Instruction::JumpIfFalse(0));
                self.emit(Instruction::Pop);
                self.expr(b)?;
                let end = self.here();
                self.patch(skip, end);
            }
        }
        Ok(())
    }
}
