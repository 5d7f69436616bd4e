//! A direct tree-walking evaluator over the shared syntax tree.
//!
//! It shares the heap representation and the per-language surface tables
//! (display, error messages, primitive methods) with the VM but none of the
//! execution machinery: no bytecode, no operand stack, no handler tables.
//! Exceptions propagate as Rust errors through the recursion.

use std::cell::OnceCell;
use std::cmp::Ordering;
use std::collections::HashMap;
use std::rc::Rc;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use polyvm_core::heap::{ClassObject, Heap, HeapObject, Scope};
use polyvm_core::kernel::{is_exception_class_name, BinaryOp, CodeKind, CodeUnit, CompareOp, ExceptionValue, UnaryOp};
use polyvm_core::lang::ast::{ClassDef, Expr, ExprKind, FuncDef, Program, RescueClause, Stmt, StmtKind, Target};
use polyvm_core::plugin::{GuestError, IntDivision, LanguagePlugin, Truthiness};
use polyvm_core::value::{LangId, ObjRef, Value};

const MAX_DEPTH: usize = 150;

/// Why evaluation did not produce a value.
#[derive(Clone, Debug, PartialEq)]
pub enum Failure {
    Raised(ExceptionValue),
    /// The step or recursion budget ran out.
    Exhausted,
    Unsupported(String),
}

enum Stop {
    Break,
    Continue,
    Return(Value),
    Fail(Failure),
}

type Flow<T> = Result<T, Stop>;

fn raise(e: ExceptionValue) -> Stop {
    Stop::Fail(Failure::Raised(e))
}

struct Env {
    locals: Scope,
    globals: Scope,
    receiver: Option<Value>,
}

struct Callable {
    def: Rc<FuncDef>,
    /// Name used in arity messages.
    name: String,
}

pub struct Evaluator<'p> {
    plugin: &'p dyn LanguagePlugin,
    lang: LangId,
    tail_values: bool,
    pub heap: Heap,
    pub transcript: String,
    functions: HashMap<u32, Callable>,
    methods: HashMap<(u32, String), Callable>,
    fuel: u64,
    depth: usize,
}

fn stub_unit(name: &str, params: &[String], kind: CodeKind, lang: &LangId) -> Rc<CodeUnit> {
    Rc::new(CodeUnit {
        name: Rc::from(name),
        kind,
        params: params.iter().map(|p| Rc::from(p.as_str())).collect(),
        instructions: Vec::new(),
        constants: Vec::new(),
        names: Vec::new(),
        lines: Vec::new(),
        source: Rc::from(""),
        language: lang.clone(),
        depths: OnceCell::new(),
    })
}

fn arity(name: &str, expected: usize, given: usize) -> GuestError {
    GuestError::Arity { name: name.to_string(), expected, given }
}

fn big_f64(n: &BigInt) -> f64 {
    n.to_f64().unwrap_or(if n.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

fn zero_division(message: &str) -> Stop {
    raise(ExceptionValue::new("ZeroDivisionError", message))
}

fn wrap_index(i: &BigInt, len: usize) -> Option<usize> {
    let i = i.to_i64()?;
    let k = if i < 0 { i + len as i64 } else { i };
    (0..len as i64).contains(&k).then_some(k as usize)
}

fn equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Float(y)) | (Value::Float(y), Value::Int(x)) => big_f64(x) == *y,
        (Value::Float(x), Value::Float(y)) => x == y,
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| equal(p, q))
        }
        (Value::Nil, Value::Nil) => true,
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Text(x), Value::Text(y)) => x == y,
        (Value::ObjectRef(x), Value::ObjectRef(y)) => x == y,
        _ => false,
    }
}

fn order(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Int(x), Value::Float(y)) => big_f64(x).partial_cmp(y),
        (Value::Float(x), Value::Int(y)) => x.partial_cmp(&big_f64(y)),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            match x.iter().zip(y.iter()).find(|(p, q)| !equal(p, q)) {
                Some((p, q)) => order(p, q),
                None => Some(x.len().cmp(&y.len())),
            }
        }
        _ => None,
    }
}

fn repeat(n: &BigInt) -> usize {
    if n.is_negative() {
        0
    } else {
        n.to_usize().unwrap_or(usize::MAX)
    }
}

impl<'p> Evaluator<'p> {
    pub fn new(plugin: &'p dyn LanguagePlugin, fuel: u64) -> Self {
        let lang = plugin.id().clone();
        Evaluator {
            plugin,
            tail_values: lang.as_str() == "minirb",
            lang,
            heap: Heap::new(),
            transcript: String::new(),
            functions: HashMap::new(),
            methods: HashMap::new(),
            fuel,
            depth: 0,
        }
    }

    /// Runs a whole program with `bindings` in its top-level scope.
    pub fn run(&mut self, program: &Program, bindings: Vec<(&str, Value)>) -> Result<Value, Failure> {
        let scope = Scope::from_bindings(bindings);
        let env = Env { locals: scope.clone(), globals: scope, receiver: None };
        let result = if self.tail_values {
            self.tail(&env, &program.body)
        } else {
            match program.body.split_last() {
                Some((Stmt { kind: StmtKind::Expr(e), .. }, rest)) => {
                    self.block(&env, rest).and_then(|_| self.eval(&env, e))
                }
                _ => self.block(&env, &program.body).map(|_| Value::Nil),
            }
        };
        match result {
            Ok(v) => Ok(v),
            Err(Stop::Fail(f)) => Err(f),
            Err(_) => Err(Failure::Unsupported("control flow escaped the program".into())),
        }
    }

    fn tick(&mut self) -> Flow<()> {
        if self.fuel == 0 {
            return Err(Stop::Fail(Failure::Exhausted));
        }
        self.fuel -= 1;
        Ok(())
    }

    fn guest(&self, e: GuestError) -> Stop {
        raise(self.plugin.error(e))
    }

    fn type_name(&self, v: &Value) -> String {
        self.plugin.type_name(v, &self.heap)
    }

    fn truthy(&self, v: &Value) -> bool {
        match self.plugin.semantics().truthiness {
            Truthiness::Ruby => !matches!(v, Value::Nil | Value::Bool(false)),
            Truthiness::Python => match v {
                Value::Nil => false,
                Value::Bool(b) => *b,
                Value::Int(n) => !n.is_zero(),
                Value::Float(x) => *x != 0.0,
                Value::Text(s) => !s.is_empty(),
                Value::List(items) => !items.borrow().is_empty(),
                Value::ObjectRef(_) | Value::ForeignRef(_) => true,
            },
        }
    }

    fn class_name(&self, r: &ObjRef) -> String {
        self.heap.class_name(r).map(|c| c.to_string()).unwrap_or_default()
    }


    fn block(&mut self, env: &Env, body: &[Stmt]) -> Flow<()> {
        for s in body {
            self.exec(env, s)?;
        }
        Ok(())
    }

    /// Value of a body whose last statement provides the result.
    fn tail(&mut self, env: &Env, body: &[Stmt]) -> Flow<Value> {
        let Some((last, rest)) = body.split_last() else {
            return Ok(Value::Nil);
        };
        self.block(env, rest)?;
        match &last.kind {
            StmtKind::Expr(e) => self.eval(env, e),
            StmtKind::Assign(target, value) => {
                self.tick()?;
                let v = self.eval(env, value)?;
                self.store(env, target, v.clone())?;
                Ok(v)
            }
            StmtKind::If { branches, orelse } => {
                self.tick()?;
                for (cond, body) in branches {
                    let c = self.eval(env, cond)?;
                    if self.truthy(&c) {
                        return self.tail(env, body);
                    }
                }
                self.tail(env, orelse)
            }
            _ => {
                self.exec(env, last)?;
                Ok(Value::Nil)
            }
        }
    }

    fn exec(&mut self, env: &Env, s: &Stmt) -> Flow<()> {
        self.tick()?;
        match &s.kind {
            StmtKind::Expr(e) => {
                self.eval(env, e)?;
            }
            StmtKind::Assign(target, value) => {
                let v = self.eval(env, value)?;
                self.store(env, target, v)?;
            }
            StmtKind::AugAssign(target, op, value) => self.aug_assign(env, target, *op, value)?,
            StmtKind::FuncDef(f) => {
                let unit = stub_unit(&f.name, &f.params, CodeKind::Function, &self.lang);
                let r = self.heap.alloc(&self.lang, HeapObject::Function { code: unit, globals: env.globals.clone() });
                self.functions.insert(r.handle.0, Callable { def: Rc::new(f.clone()), name: f.name.clone() });
                env.locals.set(&f.name, Value::ObjectRef(r));
            }
            StmtKind::ClassDef(c) => self.define_class(env, c)?,
            StmtKind::If { branches, orelse } => {
                for (cond, body) in branches {
                    let c = self.eval(env, cond)?;
                    if self.truthy(&c) {
                        return self.block(env, body);
                    }
                }
                self.block(env, orelse)?;
            }
            StmtKind::While { cond, body } => loop {
                let c = self.eval(env, cond)?;
                if !self.truthy(&c) {
                    break;
                }
                match self.block(env, body) {
                    Ok(()) | Err(Stop::Continue) => {}
                    Err(Stop::Break) => break,
                    Err(other) => return Err(other),
                }
            },
            StmtKind::For { var, iter, body } => {
                let source = self.eval(env, iter)?;
                let items = match self.heap.unbox(&source) {
                    Value::List(l) => l,
                    Value::Text(t) => match Value::list(t.chars().map(|c| Value::text(&c.to_string())).collect()) {
                        Value::List(l) => l,
                        _ => unreachable!(),
                    },
                    other => return Err(self.guest(GuestError::NotIterable(self.type_name(&other)))),
                };
                let mut cursor = 0;
                loop {
                    self.tick()?;
                    let Some(item) = items.borrow().get(cursor).cloned() else { break };
                    cursor += 1;
                    env.locals.set(var, item);
                    match self.block(env, body) {
                        Ok(()) | Err(Stop::Continue) => {}
                        Err(Stop::Break) => break,
                        Err(other) => return Err(other),
                    }
                }
            }
            StmtKind::Try { body, clauses, finally } => self.try_stmt(env, body, clauses, finally.as_deref())?,
            StmtKind::Raise(e) => {
                let v = self.eval(env, e)?;
                let exc = self.exception_from_value(&v)?;
                return Err(raise(exc));
            }
            StmtKind::Return(value) => {
                let v = match value {
                    Some(e) => self.eval(env, e)?,
                    None => Value::Nil,
                };
                return Err(Stop::Return(v));
            }
            StmtKind::Break => return Err(Stop::Break),
            StmtKind::Continue => return Err(Stop::Continue),
            StmtKind::Pass => {}
        }
        Ok(())
    }

    fn try_stmt(&mut self, env: &Env, body: &[Stmt], clauses: &[RescueClause], finally: Option<&[Stmt]>) -> Flow<()> {
        let outcome = match self.block(env, body) {
            Err(Stop::Fail(Failure::Raised(exc))) => {
                let clause = clauses.iter().find(|c| c.class_name.as_deref().is_none_or(|n| n == &*exc.class_name));
                match clause {
                    Some(clause) => {
                        let obj = self.exception_object(&exc);
                        if let Some(name) = &clause.bind {
                            env.locals.set(name, obj);
                        }
                        self.block(env, &clause.body)
                    }
                    None => Err(raise(exc)),
                }
            }
            other => other,
        };
        match finally {
            Some(fin) => {
                self.block(env, fin)?;
                outcome
            }
            None => outcome,
        }
    }

    fn define_class(&mut self, env: &Env, c: &ClassDef) -> Flow<()> {
        let mut attrs = IndexMap::new();
        let mut values = Vec::new();
        for (_, e) in &c.attrs {
            values.push(self.eval(env, e)?);
        }
        for ((name, _), v) in c.attrs.iter().zip(values) {
            attrs.insert(Rc::from(name.as_str()), v);
        }
        let class = ClassObject {
            name: Rc::from(c.name.as_str()),
            globals: env.globals.clone(),
            methods: IndexMap::new(),
            attrs,
        };
        let r = self.heap.alloc(&self.lang, HeapObject::Class(class));
        let sep = self.plugin.semantics().method_separator;
        for m in &c.methods {
            let name = format!("{}{}{}", c.name, sep, m.name);
            self.methods.insert((r.handle.0, m.name.clone()), Callable { def: Rc::new(m.clone()), name });
        }
        env.locals.set(&c.name, Value::ObjectRef(r));
        Ok(())
    }

    fn store(&mut self, env: &Env, target: &Target, value: Value) -> Flow<()> {
        match target {
            Target::Name(name) => env.locals.set(name, value),
            Target::Attr(obj, name) => {
                let o = self.eval(env, obj)?;
                self.store_slot(&o, name, value)?;
            }
            Target::Index(container, index) => {
                let c = self.eval(env, container)?;
                let i = self.eval(env, index)?;
                let (c, i) = (self.heap.unbox(&c), self.heap.unbox(&i));
                self.set_index(&c, &i, value)?;
            }
            Target::IVar(name) => {
                let recv = self.load_name(env, "self")?;
                self.store_slot(&recv, name, value)?;
            }
        }
        Ok(())
    }

    fn aug_assign(&mut self, env: &Env, target: &Target, op: BinaryOp, value: &Expr) -> Flow<()> {
        match target {
            Target::Name(name) => {
                let current = self.load_name(env, name)?;
                let v = self.eval(env, value)?;
                let r = self.binary(op, &current, &v)?;
                env.locals.set(name, r);
            }
            Target::IVar(name) => {
                let recv = self.load_name(env, "self")?;
                let current = self.load_slot(&recv, name)?;
                let v = self.eval(env, value)?;
                let r = self.binary(op, &current, &v)?;
                let recv = self.load_name(env, "self")?;
                self.store_slot(&recv, name, r)?;
            }
            Target::Attr(obj, name) => {
                let o = self.eval(env, obj)?;
                let current = self.load_slot(&o, name)?;
                let v = self.eval(env, value)?;
                let r = self.binary(op, &current, &v)?;
                let o = self.eval(env, obj)?;
                self.store_slot(&o, name, r)?;
            }
            Target::Index(..) => return Err(Stop::Fail(Failure::Unsupported("augmented index assignment".into()))),
        }
        Ok(())
    }


    fn eval(&mut self, env: &Env, e: &Expr) -> Flow<Value> {
        self.tick()?;
        Ok(match &e.kind {
            ExprKind::Nil => Value::Nil,
            ExprKind::Bool(b) => Value::Bool(*b),
            ExprKind::Int(n) => Value::Int(n.clone()),
            ExprKind::Float(x) => Value::Float(*x),
            ExprKind::Text(s) => Value::text(s),
            ExprKind::List(items) => Value::list(self.eval_all(env, items)?),
            ExprKind::Name(name) => self.load_name(env, name)?,
            ExprKind::SelfRef => self.load_name(env, "self")?,
            ExprKind::IVar(name) => {
                let recv = self.load_name(env, "self")?;
                self.load_slot(&recv, name)?
            }
            ExprKind::Attr(obj, name) => {
                let o = self.eval(env, obj)?;
                self.load_slot(&o, name)?
            }
            ExprKind::Index(container, index) => {
                let c = self.eval(env, container)?;
                let i = self.eval(env, index)?;
                let (c, i) = (self.heap.unbox(&c), self.heap.unbox(&i));
                self.index(&c, &i)?
            }
            ExprKind::Call(callee, args) => {
                let f = self.eval(env, callee)?;
                let args = self.eval_all(env, args)?;
                self.call_value(&f, args)?
            }
            ExprKind::Send { receiver, selector, args } => match receiver {
                Some(r) => {
                    let recv = self.eval(env, r)?;
                    let args = self.eval_all(env, args)?;
                    self.invoke(&recv, selector, args)?
                }
                None => {
                    let args = self.eval_all(env, args)?;
                    self.invoke_implicit(env, selector, args)?
                }
            },
            ExprKind::New(class, args) => {
                let c = self.eval(env, class)?;
                let c = self.heap.unbox(&c);
                let args = self.eval_all(env, args)?;
                match &c {
                    Value::ObjectRef(r) | Value::ForeignRef(r) => self.instantiate(r, args)?,
                    other => return Err(self.guest(GuestError::NotCallable(self.type_name(other)))),
                }
            }
            ExprKind::Binary(op, a, b) => {
                let x = self.eval(env, a)?;
                let y = self.eval(env, b)?;
                self.binary(*op, &x, &y)?
            }
            ExprKind::Unary(op, a) => {
                let x = self.eval(env, a)?;
                let x = self.heap.unbox(&x);
                match op {
                    UnaryOp::Not => Value::Bool(!self.truthy(&x)),
                    UnaryOp::Neg => match x {
                        Value::Int(n) => Value::Int(-n),
                        Value::Float(f) => Value::Float(-f),
                        other => {
                            return Err(self.guest(GuestError::Operand { op: "-", operand: self.type_name(&other) }))
                        }
                    },
                }
            }
            ExprKind::Compare(op, a, b) => {
                let x = self.eval(env, a)?;
                let y = self.eval(env, b)?;
                self.compare(*op, &x, &y)?
            }
            ExprKind::And(a, b) => {
                let x = self.eval(env, a)?;
                if self.truthy(&self.heap.unbox(&x)) {
                    self.eval(env, b)?
                } else {
                    x
                }
            }
            ExprKind::Or(a, b) => {
                let x = self.eval(env, a)?;
                if self.truthy(&self.heap.unbox(&x)) {
                    x
                } else {
                    self.eval(env, b)?
                }
            }
        })
    }

    fn eval_all(&mut self, env: &Env, items: &[Expr]) -> Flow<Vec<Value>> {
        items.iter().map(|e| self.eval(env, e)).collect()
    }

    fn load_name(&mut self, env: &Env, name: &str) -> Flow<Value> {
        if name == "self" {
            if let Some(v) = &env.receiver {
                return Ok(v.clone());
            }
        }
        if let Some(v) = env.locals.get(name).or_else(|| env.globals.get(name)) {
            return Ok(v);
        }
        if self.plugin.semantics().builtins.contains(&name) {
            return Ok(Value::ObjectRef(self.heap.builtin(&self.lang, name)));
        }
        if is_exception_class_name(name) {
            return Ok(Value::ObjectRef(self.heap.exception_class(&self.lang, name)));
        }
        Err(self.guest(GuestError::UndefinedName(name.to_string())))
    }

    fn load_slot(&mut self, obj: &Value, name: &str) -> Flow<Value> {
        let obj = self.heap.unbox(obj);
        let Some(r) = obj.as_ref().cloned() else {
            return Err(self.guest(GuestError::NoAttribute { name: name.to_string(), receiver: self.type_name(&obj) }));
        };
        let found = match self.heap.object(&r) {
            Some(HeapObject::Instance { class, slots }) => slots
                .get(name)
                .cloned()
                .or_else(|| {
                    let class = ObjRef { lang: r.lang.clone(), handle: *class };
                    match self.heap.object(&class) {
                        Some(HeapObject::Class(c)) => c.attrs.get(name).cloned(),
                        _ => None,
                    }
                })
                .or_else(|| self.plugin.semantics().missing_slot_is_nil.then_some(Value::Nil)),
            Some(HeapObject::Class(c)) => c.attrs.get(name).cloned(),
            Some(HeapObject::Exception(e)) if name == "message" => Some(Value::Text(e.message.clone())),
            _ => None,
        };
        found.ok_or_else(|| self.guest(GuestError::NoAttribute { name: name.to_string(), receiver: self.class_name(&r) }))
    }

    fn store_slot(&mut self, obj: &Value, name: &str, value: Value) -> Flow<()> {
        let obj = self.heap.unbox(obj);
        let Some(r) = obj.as_ref().cloned() else {
            return Err(self.guest(GuestError::NoAttribute { name: name.to_string(), receiver: self.type_name(&obj) }));
        };
        let receiver = self.class_name(&r);
        match self.heap.get_mut(&r).map(|e| &mut e.object) {
            Some(HeapObject::Instance { slots, .. }) => {
                slots.insert(Rc::from(name), value);
                Ok(())
            }
            _ => Err(self.guest(GuestError::NoAttribute { name: name.to_string(), receiver })),
        }
    }


    fn call_value(&mut self, callee: &Value, args: Vec<Value>) -> Flow<Value> {
        let callee = self.heap.unbox(callee);
        let Some(r) = callee.as_ref().cloned() else {
            return Err(self.guest(GuestError::NotCallable(self.type_name(&callee))));
        };
        match self.heap.object(&r) {
            Some(HeapObject::Function { globals, .. }) => {
                let globals = globals.clone();
                let callable = &self.functions[&r.handle.0];
                let (def, name) = (callable.def.clone(), callable.name.clone());
                self.call_function(&def, &name, globals, args, None)
            }
            Some(HeapObject::Builtin { name }) => {
                let name = name.to_string();
                self.builtin(&name, args)
            }
            Some(HeapObject::Class(_)) => self.instantiate(&r, args),
            Some(HeapObject::ExceptionClass { name }) => {
                let name = name.clone();
                let message = match args.as_slice() {
                    [] => String::new(),
                    [m] => self.plugin.to_text(m, &self.heap),
                    _ => return Err(self.guest(arity(&name, 1, args.len()))),
                };
                let exc = ExceptionValue::new(&name, message);
                Ok(Value::ObjectRef(self.heap.alloc(&self.lang, HeapObject::Exception(exc))))
            }
            _ => Err(self.guest(GuestError::NotCallable(self.type_name(&callee)))),
        }
    }

    fn call_function(
        &mut self,
        def: &FuncDef,
        name: &str,
        globals: Scope,
        args: Vec<Value>,
        receiver: Option<Value>,
    ) -> Flow<Value> {
        let explicit_self = receiver.is_some() && self.plugin.semantics().explicit_self;
        let skip = usize::from(explicit_self);
        let expected = def.params.len().saturating_sub(skip);
        if args.len() != expected {
            return Err(self.guest(arity(name, expected + skip, args.len() + skip)));
        }
        if self.depth >= MAX_DEPTH {
            return Err(Stop::Fail(Failure::Exhausted));
        }
        let locals = Scope::new();
        if explicit_self {
            locals.set(&def.params[0], receiver.clone().expect("receiver"));
        }
        for (p, a) in def.params[skip..].iter().zip(args) {
            locals.set(p, a);
        }
        let env = Env { locals, globals, receiver };
        self.depth += 1;
        let result = if self.tail_values {
            self.tail(&env, &def.body)
        } else {
            self.block(&env, &def.body).map(|_| Value::Nil)
        };
        self.depth -= 1;
        match result {
            Ok(v) | Err(Stop::Return(v)) => Ok(v),
            Err(Stop::Break | Stop::Continue) => {
                Err(Stop::Fail(Failure::Unsupported("loop control escaped a function".into())))
            }
            Err(other) => Err(other),
        }
    }

    fn method(&self, r: &ObjRef, selector: &str) -> Option<(Rc<FuncDef>, String, Scope)> {
        let Some(HeapObject::Instance { class, .. }) = self.heap.object(r) else {
            return None;
        };
        let class_ref = ObjRef { lang: r.lang.clone(), handle: *class };
        let Some(HeapObject::Class(c)) = self.heap.object(&class_ref) else {
            return None;
        };
        let m = self.methods.get(&(class.0, selector.to_string()))?;
        Some((m.def.clone(), m.name.clone(), c.globals.clone()))
    }

    fn instantiate(&mut self, class: &ObjRef, args: Vec<Value>) -> Flow<Value> {
        let (class_name, globals) = match self.heap.object(class) {
            Some(HeapObject::Class(c)) => (c.name.to_string(), c.globals.clone()),
            Some(HeapObject::ExceptionClass { .. }) => return self.call_value(&Value::ObjectRef(class.clone()), args),
            _ => {
                let v = Value::ForeignRef(class.clone());
                return Err(self.guest(GuestError::NotCallable(self.type_name(&v))));
            }
        };
        let init = self.plugin.semantics().init_selector;
        let new_instance = |heap: &mut Heap| {
            Value::ObjectRef(heap.alloc(&class.lang, HeapObject::Instance { class: class.handle, slots: IndexMap::new() }))
        };
        match self.methods.get(&(class.handle.0, init.to_string())) {
            Some(m) => {
                let (def, name) = (m.def.clone(), m.name.clone());
                let skip = usize::from(self.plugin.semantics().explicit_self);
                let expected = def.params.len().saturating_sub(skip);
                if args.len() != expected {
                    return Err(self.guest(arity(&name, expected + skip, args.len() + skip)));
                }
                let inst = new_instance(&mut self.heap);
                self.call_function(&def, &name, globals, args, Some(inst.clone()))?;
                Ok(inst)
            }
            None => {
                if !args.is_empty() {
                    return Err(self.guest(arity(&class_name, 0, args.len())));
                }
                Ok(new_instance(&mut self.heap))
            }
        }
    }

    fn is_function(&self, v: &Value) -> bool {
        v.as_ref()
            .is_some_and(|r| matches!(self.heap.object(r), Some(HeapObject::Function { .. } | HeapObject::Builtin { .. })))
    }

    fn invoke_implicit(&mut self, env: &Env, selector: &str, args: Vec<Value>) -> Flow<Value> {
        if let Some(v) = env.locals.get(selector).or_else(|| env.globals.get(selector)) {
            if args.is_empty() && !self.is_function(&v) {
                return Ok(v);
            }
            return self.call_value(&v, args);
        }
        if let Some(Value::ObjectRef(r)) = &env.receiver {
            if self.method(r, selector).is_some() {
                let r = r.clone();
                return self.invoke_object(&r, selector, args);
            }
        }
        if self.plugin.semantics().builtins.contains(&selector) {
            return self.builtin(selector, args);
        }
        Err(self.guest(if args.is_empty() {
            GuestError::UndefinedName(selector.to_string())
        } else {
            GuestError::NoMethod { selector: selector.to_string(), receiver: "main".into() }
        }))
    }

    fn invoke(&mut self, receiver: &Value, selector: &str, args: Vec<Value>) -> Flow<Value> {
        match receiver {
            Value::ObjectRef(r) | Value::ForeignRef(r) => self.invoke_object(r, selector, args),
            prim => match self.plugin.primitive_method(prim, selector, &args, &self.heap) {
                Some(Ok(v)) => Ok(v),
                Some(Err(e)) => Err(raise(e)),
                None => Err(self.guest(GuestError::NoMethod {
                    selector: selector.to_string(),
                    receiver: self.type_name(prim),
                })),
            },
        }
    }

    fn invoke_object(&mut self, r: &ObjRef, selector: &str, args: Vec<Value>) -> Flow<Value> {
        let no_method = |this: &Self| this.guest(GuestError::NoMethod { selector: selector.to_string(), receiver: this.class_name(r) });
        match self.heap.object(r) {
            Some(HeapObject::Instance { .. }) => match self.method(r, selector) {
                Some((def, name, globals)) => self.call_function(&def, &name, globals, args, Some(Value::ObjectRef(r.clone()))),
                None => Err(no_method(self)),
            },
            Some(HeapObject::Class(_) | HeapObject::ExceptionClass { .. }) if selector == "new" => self.instantiate(r, args),
            Some(HeapObject::Function { .. } | HeapObject::Builtin { .. }) if selector == "call" => {
                self.call_value(&Value::ObjectRef(r.clone()), args)
            }
            Some(HeapObject::Exception(e)) if selector == "message" && args.is_empty() => Ok(Value::Text(e.message.clone())),
            _ => Err(no_method(self)),
        }
    }

    fn exception_from_value(&mut self, v: &Value) -> Flow<ExceptionValue> {
        let v = self.heap.unbox(v);
        let not_an_exception = |this: &Self, v: &Value| this.guest(GuestError::NotAnException(this.type_name(v)));
        match &v {
            Value::ObjectRef(r) => match self.heap.object(r) {
                Some(HeapObject::Exception(e)) => Ok(e.clone()),
                Some(HeapObject::ExceptionClass { name }) => Ok(ExceptionValue::new(name, "")),
                Some(HeapObject::Instance { slots, .. }) => {
                    let message = slots
                        .get("message")
                        .or_else(|| slots.get("@message"))
                        .map(|m| self.plugin.to_text(m, &self.heap))
                        .unwrap_or_default();
                    let mut exc = ExceptionValue::new(&self.class_name(r), message);
                    exc.payload = Some(v.clone());
                    Ok(exc)
                }
                _ => Err(not_an_exception(self, &v)),
            },
            Value::Text(s) => match self.plugin.semantics().raise_text_class {
                Some(class) => Ok(ExceptionValue::new(class, &**s)),
                None => Err(not_an_exception(self, &v)),
            },
            other => Err(not_an_exception(self, other)),
        }
    }

    fn exception_object(&mut self, exc: &ExceptionValue) -> Value {
        if let Some(payload @ Value::ObjectRef(_)) = &exc.payload {
            return payload.clone();
        }
        Value::ObjectRef(self.heap.alloc(&self.lang, HeapObject::Exception(exc.clone())))
    }


    fn builtin(&mut self, name: &str, args: Vec<Value>) -> Flow<Value> {
        let args: Vec<Value> = args.iter().map(|a| self.heap.unbox(a)).collect();
        let bad_type = |this: &Self, msg: String| this.guest(GuestError::BadType(msg));
        match name {
            "print" => {
                let line = args.iter().map(|a| self.plugin.to_text(a, &self.heap)).collect::<Vec<_>>().join(" ");
                self.transcript.push_str(&line);
                self.transcript.push('\n');
                Ok(Value::Nil)
            }
            "puts" => {
                if args.is_empty() {
                    self.transcript.push('\n');
                }
                for a in &args {
                    match a {
                        Value::List(items) => {
                            for item in items.borrow().iter() {
                                let line = self.plugin.to_text(item, &self.heap);
                                self.transcript.push_str(&line);
                                self.transcript.push('\n');
                            }
                        }
                        Value::Nil => self.transcript.push('\n'),
                        other => {
                            let line = self.plugin.to_text(other, &self.heap);
                            self.transcript.push_str(&line);
                            if !line.ends_with('\n') {
                                self.transcript.push('\n');
                            }
                        }
                    }
                }
                Ok(Value::Nil)
            }
            "len" => match args.as_slice() {
                [Value::Text(s)] => Ok(Value::int(s.chars().count() as i64)),
                [Value::List(items)] => Ok(Value::int(items.borrow().len() as i64)),
                [other] => Err(bad_type(self, format!("object of type '{}' has no len()", self.type_name(other)))),
                _ => Err(self.guest(arity(name, 1, args.len()))),
            },
            "range" => {
                let bound = |this: &Self, v: &Value| match v {
                    Value::Int(n) => Ok(n.clone()),
                    other => Err(bad_type(
                        this,
                        format!("'{}' object cannot be interpreted as an integer", this.type_name(other)),
                    )),
                };
                let (lo, hi) = match args.as_slice() {
                    [hi] => (BigInt::zero(), bound(self, hi)?),
                    [lo, hi] => (bound(self, lo)?, bound(self, hi)?),
                    _ => return Err(self.guest(arity(name, 1, args.len()))),
                };
                let mut items = Vec::new();
                let mut i = lo;
                while i < hi {
                    self.tick()?;
                    items.push(Value::Int(i.clone()));
                    i += 1;
                }
                Ok(Value::list(items))
            }
            "str" => match args.as_slice() {
                [v] => Ok(Value::text(&self.plugin.to_text(v, &self.heap))),
                _ => Err(self.guest(arity(name, 1, args.len()))),
            },
            "int" => match args.as_slice() {
                [Value::Int(n)] => Ok(Value::Int(n.clone())),
                [Value::Bool(b)] => Ok(Value::int(i64::from(*b))),
                [Value::Float(x)] if x.is_finite() => Ok(Value::Int(BigInt::from(x.trunc() as i128))),
                _ => Err(Stop::Fail(Failure::Unsupported(format!("int() of {:?}", args)))),
            },
            "float" => match args.as_slice() {
                [Value::Int(n)] => Ok(Value::Float(big_f64(n))),
                [Value::Float(x)] => Ok(Value::Float(*x)),
                _ => Err(Stop::Fail(Failure::Unsupported(format!("float() of {:?}", args)))),
            },
            other => Err(Stop::Fail(Failure::Unsupported(format!("builtin {}", other)))),
        }
    }


    fn binary(&mut self, op: BinaryOp, a: &Value, b: &Value) -> Flow<Value> {
        let (a, b) = (self.heap.unbox(a), self.heap.unbox(b));
        match (&a, &b) {
            (Value::Int(x), Value::Int(y)) => return self.int_arith(op, x, y),
            (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
                let f = |v: &Value| match v {
                    Value::Int(n) => big_f64(n),
                    Value::Float(x) => *x,
                    _ => unreachable!(),
                };
                return float_arith(op, f(&a), f(&b));
            }
            _ => {}
        }
        match (op, &a, &b) {
            (BinaryOp::Add, Value::Text(x), Value::Text(y)) => Ok(Value::text(&format!("{}{}", x, y))),
            (BinaryOp::Add, Value::List(x), Value::List(y)) => {
                Ok(Value::list(x.borrow().iter().chain(y.borrow().iter()).cloned().collect()))
            }
            (BinaryOp::Mul, Value::Text(s), Value::Int(n)) => Ok(Value::text(&s.repeat(repeat(n)))),
            (BinaryOp::Mul, Value::List(items), Value::Int(n)) => {
                let items = items.borrow();
                Ok(Value::list(items.iter().cloned().cycle().take(items.len() * repeat(n)).collect()))
            }
            _ => Err(self.guest(GuestError::Operands {
                op: op.symbol(),
                left: self.type_name(&a),
                right: self.type_name(&b),
            })),
        }
    }

    fn int_arith(&self, op: BinaryOp, x: &BigInt, y: &BigInt) -> Flow<Value> {
        Ok(Value::Int(match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => {
                if y.is_zero() {
                    return Err(zero_division("integer division by zero"));
                }
                match self.plugin.semantics().int_division {
                    IntDivision::Floor => x.div_floor(y),
                    IntDivision::True => {
                        let q = match (x.to_i64(), y.to_i64()) {
                            (Some(p), Some(q)) if p.unsigned_abs() < (1 << 53) && q.unsigned_abs() < (1 << 53) => {
                                p as f64 / q as f64
                            }
                            _ => big_f64(x) / big_f64(y),
                        };
                        return Ok(Value::Float(q));
                    }
                }
            }
            BinaryOp::Mod => {
                if y.is_zero() {
                    return Err(zero_division("integer modulo by zero"));
                }
                x.mod_floor(y)
            }
        }))
    }

    fn compare(&self, op: CompareOp, a: &Value, b: &Value) -> Flow<Value> {
        let (a, b) = (self.heap.unbox(a), self.heap.unbox(b));
        let result = match op {
            CompareOp::Eq => equal(&a, &b),
            CompareOp::Ne => !equal(&a, &b),
            _ => {
                let Some(ord) = order(&a, &b) else {
                    return Err(self.guest(GuestError::Operands {
                        op: op.symbol(),
                        left: self.type_name(&a),
                        right: self.type_name(&b),
                    }));
                };
                match op {
                    CompareOp::Lt => ord.is_lt(),
                    CompareOp::Le => ord.is_le(),
                    CompareOp::Gt => ord.is_gt(),
                    _ => ord.is_ge(),
                }
            }
        };
        Ok(Value::Bool(result))
    }

    fn index(&self, container: &Value, idx: &Value) -> Flow<Value> {
        let found = match (container, idx) {
            (Value::List(items), Value::Int(i)) => {
                let items = items.borrow();
                wrap_index(i, items.len()).map(|k| items[k].clone())
            }
            (Value::Text(s), Value::Int(i)) => {
                let chars: Vec<char> = s.chars().collect();
                wrap_index(i, chars.len()).map(|k| Value::text(&chars[k].to_string()))
            }
            _ => {
                return Err(self.guest(GuestError::IndexType {
                    container: self.type_name(container),
                    index: self.type_name(idx),
                }))
            }
        };
        match found {
            Some(v) => Ok(v),
            None if self.plugin.semantics().index_miss_is_nil => Ok(Value::Nil),
            None => Err(self.guest(GuestError::IndexOutOfRange)),
        }
    }

    fn set_index(&self, container: &Value, idx: &Value, value: Value) -> Flow<()> {
        match (container, idx) {
            (Value::List(items), Value::Int(i)) => {
                let len = items.borrow().len();
                match wrap_index(i, len) {
                    Some(k) => {
                        items.borrow_mut()[k] = value;
                        Ok(())
                    }
                    None => Err(self.guest(GuestError::IndexOutOfRange)),
                }
            }
            _ => Err(self.guest(GuestError::IndexType {
                container: self.type_name(container),
                index: self.type_name(idx),
            })),
        }
    }
}

fn float_arith(op: BinaryOp, a: f64, b: f64) -> Flow<Value> {
    Ok(Value::Float(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            if b == 0.0 {
                return Err(zero_division("float division by zero"));
            }
            a / b
        }
        BinaryOp::Mod => {
            if b == 0.0 {
                return Err(zero_division("float modulo by zero"));
            }
            let r = a % b;
            if r != 0.0 && (r < 0.0) != (b < 0.0) {
                r + b
            } else {
                r
            }
        }
    }))
}
