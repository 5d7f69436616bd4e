//! The instruction set both guest compilers target.

use std::cell::OnceCell;
use std::fmt;
use std::rc::Rc;

use crate::value::{LangId, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Mod => "%",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Matcher {
    CatchAll,
    ClassName(Rc<str>),
}

impl Matcher {
    pub fn matches(&self, class_name: &str) -> bool {
        match self {
            Matcher::CatchAll => true,
            Matcher::ClassName(name) => &**name == class_name,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandlerKind {
    Rescue,
    Ensure,
}

/// One instruction. Name and constant operands index the code unit's pools;
/// jump operands are instruction indices.
#[derive(Clone, Debug, PartialEq)]
pub enum Instruction {
    PushConst(u32),
    Load(u32),
    Store(u32),
    /// Pops an object, pushes the named slot.
    LoadSlot(u32),
    /// Pops an object then a value, stores the value in the named slot.
    StoreSlot(u32),
    /// Stack: callee, args... (argc = operand).
    Call(u32),
    /// Stack: receiver, args... With `implicit`, the receiver is the frame's
    /// self and the selector may also name a function or builtin.
    Invoke { selector: u32, argc: u32, implicit: bool },
    Return,
    Jump(u32),
    /// Pops the condition.
    JumpIfFalse(u32),
    Binary(BinaryOp),
    Unary(UnaryOp),
    Compare(CompareOp),
    BuildList(u32),
    /// Stack: container, index.
    Index,
    /// Stack: value, container, index.
    SetIndex,
    MakeFunction(u32),
    /// Pops one value per class attribute, in declaration order.
    MakeClass(u32),
    /// Stack: class, args...
    NewInstance(u32),
    SetupHandler { target: u32, matcher: Matcher, kind: HandlerKind },
    PopHandler,
    /// Raises the value on top of the stack.
    Raise,
    Pop,
    Dup,
    /// Pops an iterable, pushes the iteration list and a cursor.
    IterNew,
    /// Pushes the next element, or pops the list and cursor and jumps.
    IterNext(u32),
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::PushConst(_) => "PUSH_CONST",
            Instruction::Load(_) => "LOAD",
            Instruction::Store(_) => "STORE",
            Instruction::LoadSlot(_) => "LOAD_SLOT",
            Instruction::StoreSlot(_) => "STORE_SLOT",
            Instruction::Call(_) => "CALL",
            Instruction::Invoke { .. } => "INVOKE",
            Instruction::Return => "RETURN",
            Instruction::Jump(_) => "JUMP",
            Instruction::JumpIfFalse(_) => "JUMP_IF_FALSE",
            Instruction::Binary(_) => "BINARY",
            Instruction::Unary(_) => "UNARY",
            Instruction::Compare(_) => "COMPARE",
            Instruction::BuildList(_) => "BUILD_LIST",
            Instruction::Index => "INDEX",
            Instruction::SetIndex => "SET_INDEX",
            Instruction::MakeFunction(_) => "MAKE_FUNCTION",
            Instruction::MakeClass(_) => "MAKE_CLASS",
            Instruction::NewInstance(_) => "NEW_INSTANCE",
            Instruction::SetupHandler { .. } => "SETUP_HANDLER",
            Instruction::PopHandler => "POP_HANDLER",
            Instruction::Raise => "RAISE",
            Instruction::Pop => "POP",
            Instruction::Dup => "DUP",
            Instruction::IterNew => "ITER_NEW",
            Instruction::IterNext(_) => "ITER_NEXT",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeKind {
    Module,
    Function,
    Method,
}

#[derive(Debug)]
pub struct ClassTemplate {
    pub name: Rc<str>,
    pub methods: Vec<(Rc<str>, Rc<CodeUnit>)>,
    pub attr_names: Vec<Rc<str>>,
}

#[derive(Debug)]
pub enum Constant {
    Value(Value),
    Code(Rc<CodeUnit>),
    Class(Rc<ClassTemplate>),
}

/// Compiled guest code.
#[derive(Debug)]
pub struct CodeUnit {
    pub name: Rc<str>,
    pub kind: CodeKind,
    pub params: Vec<Rc<str>>,
    pub instructions: Vec<Instruction>,
    pub constants: Vec<Constant>,
    pub names: Vec<Rc<str>>,
    /// Source line (1-based) of every instruction.
    pub lines: Vec<u32>,
    pub source: Rc<str>,
    pub language: LangId,
    /// Lazily computed result of [`verify`].
    pub depths: OnceCell<Vec<Option<usize>>>,
}

impl CodeUnit {
    /// Static operand-stack depth per instruction. Panics if the unit fails
    /// verification, which only a compiler bug can cause.
    pub fn static_depths(&self) -> &[Option<usize>] {
        self.depths.get_or_init(|| match verify(self) {
            Ok(d) => d,
            Err(e) => panic!("code unit `{}` failed verification: {}\n{}", self.name, e, self.disassemble()),
        })
    }

    pub fn name_at(&self, idx: u32) -> &Rc<str> {
        &self.names[idx as usize]
    }

    /// Line of the instruction at `ip`, clamped to the last instruction.
    pub fn line_at(&self, ip: usize) -> u32 {
        if self.lines.is_empty() {
            return 1;
        }
        self.lines[ip.min(self.lines.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Nested code units, for walking a whole compilation.
    pub fn children(&self) -> Vec<Rc<CodeUnit>> {
        let mut out = Vec::new();
        for c in &self.constants {
            match c {
                Constant::Code(code) => out.push(code.clone()),
                Constant::Class(t) => out.extend(t.methods.iter().map(|(_, c)| c.clone())),
                Constant::Value(_) => {}
            }
        }
        out
    }

    pub fn disassemble(&self) -> String {
        let mut out = String::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            out.push_str(&format!("{:4} L{:<3} {:?}\n", i, self.line_at(i), ins));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyError {
    pub ip: usize,
    pub message: String,
}

impl fmt::Display for VerifyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "instruction {}: {}", self.ip, self.message)
    }
}

/// Checks the structural invariants of a code unit and returns the static
/// operand-stack depth at every reachable instruction boundary (`None` for
/// unreachable instructions).
///
/// Invariants: operands are in range, every jump and handler target is a
/// valid index, the line table is total, and all paths reaching an
/// instruction agree on its stack depth.
pub fn verify(code: &CodeUnit) -> Result<Vec<Option<usize>>, VerifyError> {
    let n = code.instructions.len();
    let err = |ip: usize, message: String| VerifyError { ip, message };
    if code.lines.len() != n {
        return Err(err(0, format!("line table has {} entries for {} instructions", code.lines.len(), n)));
    }
    let mut depth: Vec<Option<usize>> = vec![None; n];
    let mut work: Vec<(usize, usize)> = Vec::new();
    if n > 0 {
        work.push((0, 0));
    }
    let check_target = |ip: usize, t: u32| -> Result<usize, VerifyError> {
        if (t as usize) < n {
            Ok(t as usize)
        } else {
            Err(err(ip, format!("target {} out of range", t)))
        }
    };
    let check_name = |ip: usize, i: u32| -> Result<(), VerifyError> {
        if (i as usize) < code.names.len() {
            Ok(())
        } else {
            Err(err(ip, format!("name index {} out of range", i)))
        }
    };
    while let Some((ip, d)) = work.pop() {
        match depth[ip] {
            Some(seen) if seen == d => continue,
            Some(seen) => return Err(err(ip, format!("inconsistent stack depth {} vs {}", seen, d))),
            None => depth[ip] = Some(d),
        }
        let need = |k: usize| -> Result<(), VerifyError> {
            if d >= k {
                Ok(())
            } else {
                Err(err(ip, format!("stack underflow: need {}, have {}", k, d)))
            }
        };
        let mut next: Vec<(usize, usize)> = Vec::new();
        match &code.instructions[ip] {
            Instruction::PushConst(k) => {
                match code.constants.get(*k as usize) {
                    Some(Constant::Value(_)) => {}
                    _ => return Err(err(ip, format!("constant {} is not a value", k))),
                }
                next.push((ip + 1, d + 1));
            }
            Instruction::Load(i) => {
                check_name(ip, *i)?;
                next.push((ip + 1, d + 1));
            }
            Instruction::Store(i) => {
                check_name(ip, *i)?;
                need(1)?;
                next.push((ip + 1, d - 1));
            }
            Instruction::LoadSlot(i) => {
                check_name(ip, *i)?;
                need(1)?;
                next.push((ip + 1, d));
            }
            Instruction::StoreSlot(i) => {
                check_name(ip, *i)?;
                need(2)?;
                next.push((ip + 1, d - 2));
            }
            Instruction::Call(argc) | Instruction::NewInstance(argc) => {
                let k = *argc as usize + 1;
                need(k)?;
                next.push((ip + 1, d - k + 1));
            }
            Instruction::Invoke { selector, argc, .. } => {
                check_name(ip, *selector)?;
                let k = *argc as usize + 1;
                need(k)?;
                next.push((ip + 1, d - k + 1));
            }
            Instruction::Return | Instruction::Raise => need(1)?,
            Instruction::Jump(t) => next.push((check_target(ip, *t)?, d)),
            Instruction::JumpIfFalse(t) => {
                need(1)?;
                next.push((check_target(ip, *t)?, d - 1));
                next.push((ip + 1, d - 1));
            }
            Instruction::Binary(_) | Instruction::Compare(_) => {
                need(2)?;
                next.push((ip + 1, d - 1));
            }
            Instruction::Unary(_) => {
                need(1)?;
                next.push((ip + 1, d));
            }
            Instruction::BuildList(k) => {
                need(*k as usize)?;
                next.push((ip + 1, d - *k as usize + 1));
            }
            Instruction::Index => {
                need(2)?;
                next.push((ip + 1, d - 1));
            }
            Instruction::SetIndex => {
                need(3)?;
                next.push((ip + 1, d - 3));
            }
            Instruction::MakeFunction(k) => {
                match code.constants.get(*k as usize) {
                    Some(Constant::Code(_)) => {}
                    _ => return Err(err(ip, format!("constant {} is not code", k))),
                }
                next.push((ip + 1, d + 1));
            }
            Instruction::MakeClass(k) => {
                let attrs = match code.constants.get(*k as usize) {
                    Some(Constant::Class(t)) => t.attr_names.len(),
                    _ => return Err(err(ip, format!("constant {} is not a class", k))),
                };
                need(attrs)?;
                next.push((ip + 1, d - attrs + 1));
            }
            Instruction::SetupHandler { target, .. } => {
                next.push((check_target(ip, *target)?, d + 1));
                next.push((ip + 1, d));
            }
            Instruction::PopHandler => next.push((ip + 1, d)),
            Instruction::Pop => {
                need(1)?;
                next.push((ip + 1, d - 1));
            }
            Instruction::Dup => {
                need(1)?;
                next.push((ip + 1, d + 1));
            }
            Instruction::IterNew => {
                need(1)?;
                next.push((ip + 1, d + 1));
            }
            Instruction::IterNext(t) => {
                need(2)?;
                next.push((check_target(ip, *t)?, d - 2));
                next.push((ip + 1, d + 1));
            }
        }
        for (t, nd) in next {
            if t >= n {
                return Err(err(ip, "falls off the end of the code".into()));
            }
            work.push((t, nd));
        }
    }
    Ok(depth)
}
