//! The instruction interpreter shared by every language.
//!
//! Execution is stackless: guest calls push a [`Frame`] onto an explicit
//! [`ExecStack`] instead of recursing on the host stack, so a process can be
//! suspended after any instruction and its frames inspected or edited.
//!
//! An instruction that fails mutates nothing. Its operands stay on the stack
//! and `ip` is rewound to it before the raise is processed, so a trapped
//! process looks exactly as it did just before the faulting instruction.

use std::rc::Rc;
use std::time::Instant;

use indexmap::IndexMap;
use num_traits::ToPrimitive;
use thiserror::Error;

use super::exceptions::{find_handler, unwind, ExceptionValue, UnwindStop};
use super::frame::{CodeOrigin, Frame, ReturnAction};
use super::isa::{ClassTemplate, CodeUnit, Constant, Instruction};
use super::ops::{self, Fault};
use crate::heap::{ClassObject, Heap, HeapObject, Scope};
use crate::plugin::{convert, ConversionPolicy, GuestError, LanguagePlugin, PluginRegistry};
use crate::value::{LangId, ObjRef, Value};

/// The frames of one process.
#[derive(Clone, Debug, Default)]
pub struct ExecStack {
    pub frames: Vec<Frame>,
    /// Set once a debugger has let an unhandled exception proceed: further
    /// unhandled raises unwind to the bottom instead of trapping.
    pub terminating: bool,
}

impl ExecStack {
    pub fn new(root: Frame) -> Self {
        ExecStack { frames: vec![root], terminating: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    /// The budget ran out with work remaining.
    Yielded,
    /// The root frame returned.
    Completed(Value),
    /// An exception unwound every frame.
    Failed(ExceptionValue),
    /// An exception found no handler; the frames are untouched.
    Trapped(ExceptionValue),
    /// The process asked to sleep until the given instant.
    Blocked(Instant),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub outcome: StepOutcome,
    /// Instructions dispatched, including one that faulted.
    pub executed: u64,
}

/// A broken kernel invariant. Guest programs cannot cause one.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("kernel fault: {0}")]
pub struct KernelFault(pub String);

/// Result of a call-like instruction.
pub(crate) enum CallEffect {
    Push(Value),
    Enter(Frame),
    Block(Instant, Value),
}

enum Flow {
    Next,
    Done(Value),
    Block(Instant),
    Raise(Fault),
}

enum Raised {
    Handled,
    Trap(ExceptionValue),
    Failed(ExceptionValue),
}

fn internal(msg: impl Into<String>) -> Fault {
    Fault::Internal(msg.into())
}

/// Borrowed view of the VM state needed to execute code.
pub struct Machine<'a> {
    pub heap: &'a mut Heap,
    pub plugins: &'a PluginRegistry,
    /// Output written by `print`/`puts`.
    pub transcript: &'a mut String,
    pub policy: ConversionPolicy,
    /// Compare the live stack depth with the verifier's before every
    /// instruction.
    pub check_depths: bool,
}

impl<'a> Machine<'a> {
    pub fn plugin(&self, lang: &LangId) -> &'a dyn LanguagePlugin {
        self.plugins.expect(lang)
    }

    /// Runs at most `budget` instructions.
    pub fn step(&mut self, thread: &mut ExecStack, budget: u64) -> Result<StepResult, KernelFault> {
        let mut executed = 0u64;
        while executed < budget {
            let Some(frame) = thread.frames.last() else {
                return Err(KernelFault("step on an empty frame stack".into()));
            };
            let code = frame.code.clone();
            let pc = frame.ip;
            let Some(ins) = code.instructions.get(pc) else {
                return Err(KernelFault(format!("ip {} past the end of `{}`", pc, code.name)));
            };
            if self.check_depths {
                let expected = code.static_depths()[pc];
                if expected != Some(frame.stack.len()) {
                    return Err(KernelFault(format!(
                        "stack depth {} at {}:{} disagrees with verifier ({:?})",
                        frame.stack.len(),
                        code.name,
                        pc,
                        expected
                    )));
                }
            }
            let depth = thread.frames.len();
            thread.frames[depth - 1].ip = pc + 1;
            executed += 1;
            match self.execute(&mut thread.frames, &code, ins) {
                Flow::Next => {}
                Flow::Done(v) => return Ok(StepResult { outcome: StepOutcome::Completed(v), executed }),
                Flow::Block(until) => return Ok(StepResult { outcome: StepOutcome::Blocked(until), executed }),
                Flow::Raise(fault) => {
                    if thread.frames.len() != depth {
                        return Err(KernelFault("faulting instruction changed the frame stack".into()));
                    }
                    thread.frames[depth - 1].ip = pc;
                    let exc = match fault {
                        Fault::Raise(e) => e,
                        Fault::Guest(g) => self.plugin(&code.language).error(g),
                        Fault::Internal(msg) => return Err(KernelFault(msg)),
                    };
                    match self.raise(thread, exc) {
                        Raised::Handled => {}
                        Raised::Trap(e) => return Ok(StepResult { outcome: StepOutcome::Trapped(e), executed }),
                        Raised::Failed(e) => return Ok(StepResult { outcome: StepOutcome::Failed(e), executed }),
                    }
                }
            }
        }
        Ok(StepResult { outcome: StepOutcome::Yielded, executed })
    }

    /// Delivers `exc` at the current point of `thread`. With a matching
    /// handler the frames unwind to it; otherwise they are left alone and the
    /// exception is reported as a trap (or, when terminating, everything is
    /// unwound through ensure blocks).
    fn raise(&mut self, thread: &mut ExecStack, exc: ExceptionValue) -> Raised {
        let target = find_handler(&thread.frames, &exc.class_name);
        if target.is_none() && !thread.terminating {
            return Raised::Trap(exc);
        }
        match unwind(&mut thread.frames, target) {
            UnwindStop::Entered => {
                let top = thread.frames.last_mut().expect("entered a handler");
                let lang = top.language.clone();
                let obj = self.exception_object(&exc, &lang);
                thread.frames.last_mut().expect("entered a handler").stack.push(obj);
                Raised::Handled
            }
            UnwindStop::Exhausted => Raised::Failed(exc),
        }
    }

    /// Continues a trapped exception past the debugger: unwinds through
    /// ensure blocks and, once they finish, fails the process. Returns the
    /// outcome if the stack was exhausted immediately.
    pub fn begin_termination(&mut self, thread: &mut ExecStack, exc: ExceptionValue) -> Option<StepOutcome> {
        thread.terminating = true;
        match self.raise(thread, exc) {
            Raised::Handled => None,
            Raised::Trap(e) | Raised::Failed(e) => Some(StepOutcome::Failed(e)),
        }
    }

    /// Runs a thread to the end, sleeping through blocks, for short host-side
    /// evaluations. Traps and failures both come back as the exception.
    pub fn run_to_end(&mut self, thread: &mut ExecStack, limit: u64) -> Result<Value, ExceptionValue> {
        let mut remaining = limit;
        loop {
            let r = self
                .step(thread, remaining.min(10_000))
                .map_err(|f| ExceptionValue::new("InternalError", f.0))?;
            remaining = remaining.saturating_sub(r.executed);
            match r.outcome {
                StepOutcome::Completed(v) => return Ok(v),
                StepOutcome::Trapped(e) | StepOutcome::Failed(e) => return Err(e),
                StepOutcome::Blocked(until) => {
                    let now = Instant::now();
                    if until > now {
                        std::thread::sleep(until - now);
                    }
                }
                StepOutcome::Yielded => {}
            }
            if remaining == 0 {
                return Err(ExceptionValue::new(
                    "TimeoutError",
                    format!("evaluation exceeded {} instructions", limit),
                ));
            }
        }
    }

    /// The guest object a handler receives for `exc`.
    pub fn exception_object(&mut self, exc: &ExceptionValue, lang: &LangId) -> Value {
        if let Some(payload @ (Value::ObjectRef(r) | Value::ForeignRef(r))) = &exc.payload {
            let from = r.lang.clone();
            return convert(payload, &from, lang, &self.policy, self.heap);
        }
        Value::ObjectRef(self.heap.alloc(lang, HeapObject::Exception(exc.clone())))
    }

    fn execute(&mut self, frames: &mut Vec<Frame>, code: &Rc<CodeUnit>, ins: &Instruction) -> Flow {
        match self.try_execute(frames, code, ins) {
            Ok(flow) => flow,
            Err(fault) => Flow::Raise(fault),
        }
    }

    fn try_execute(&mut self, frames: &mut Vec<Frame>, code: &Rc<CodeUnit>, ins: &Instruction) -> Result<Flow, Fault> {
        let lang = &code.language;
        let plugin = self.plugin(lang);
        let fi = frames.len() - 1;
        match ins {
            Instruction::PushConst(k) => match code.constants.get(*k as usize) {
                Some(Constant::Value(v)) => push(&mut frames[fi], v.clone()),
                _ => return Err(internal("PUSH_CONST on a non-value constant")),
            },
            Instruction::Load(i) => {
                let v = self.load_name(&frames[fi], code.name_at(*i))?;
                push(&mut frames[fi], v);
            }
            Instruction::Store(i) => {
                let v = pop(&mut frames[fi])?;
                frames[fi].locals.set(code.name_at(*i), v);
            }
            Instruction::LoadSlot(i) => {
                let obj = peek(&frames[fi], 0)?.clone();
                let v = self.load_slot(&obj, code.name_at(*i), lang)?;
                replace_top(&mut frames[fi], 1, v);
            }
            Instruction::StoreSlot(i) => {
                let obj = peek(&frames[fi], 0)?.clone();
                let value = peek(&frames[fi], 1)?.clone();
                self.store_slot(&obj, code.name_at(*i), value, lang)?;
                drop_n(&mut frames[fi], 2);
            }
            Instruction::Call(argc) => {
                let n = *argc as usize;
                let callee = peek(&frames[fi], n)?.clone();
                let args = top_n(&frames[fi], n)?;
                let effect = self.call_value(&callee, args, lang)?;
                return Ok(self.apply(frames, n + 1, effect));
            }
            Instruction::NewInstance(argc) => {
                let n = *argc as usize;
                let class = self.heap.unbox(peek(&frames[fi], n)?);
                let args = top_n(&frames[fi], n)?;
                let effect = match &class {
                    Value::ObjectRef(r) | Value::ForeignRef(r) => self.instantiate(r, args, lang)?,
                    other => return Err(GuestError::NotCallable(plugin.type_name(other, self.heap)).into()),
                };
                return Ok(self.apply(frames, n + 1, effect));
            }
            Instruction::Invoke { selector, argc, implicit } => {
                let n = *argc as usize;
                let receiver = peek(&frames[fi], n)?.clone();
                let args = top_n(&frames[fi], n)?;
                let selector = code.name_at(*selector).clone();
                let effect = if *implicit {
                    self.invoke_implicit(&frames[fi], &selector, args, lang)?
                } else {
                    self.invoke(&receiver, &selector, args, lang)?
                };
                return Ok(self.apply(frames, n + 1, effect));
            }
            Instruction::Return => {
                let v = pop(&mut frames[fi])?;
                return Ok(self.do_return(frames, v));
            }
            Instruction::Jump(t) => frames[fi].ip = *t as usize,
            Instruction::JumpIfFalse(t) => {
                let c = pop(&mut frames[fi])?;
                if !ops::truthy(&self.heap.unbox(&c), plugin.semantics().truthiness) {
                    frames[fi].ip = *t as usize;
                }
            }
            Instruction::Binary(op) => {
                let b = self.heap.unbox(peek(&frames[fi], 0)?);
                let a = self.heap.unbox(peek(&frames[fi], 1)?);
                let v = ops::binary(*op, &a, &b, plugin, self.heap)?;
                replace_top(&mut frames[fi], 2, v);
            }
            Instruction::Unary(op) => {
                let a = self.heap.unbox(peek(&frames[fi], 0)?);
                let v = ops::unary(*op, &a, plugin, self.heap)?;
                replace_top(&mut frames[fi], 1, v);
            }
            Instruction::Compare(op) => {
                let b = self.heap.unbox(peek(&frames[fi], 0)?);
                let a = self.heap.unbox(peek(&frames[fi], 1)?);
                let v = ops::compare(*op, &a, &b, plugin, self.heap)?;
                replace_top(&mut frames[fi], 2, v);
            }
            Instruction::BuildList(k) => {
                let items = top_n(&frames[fi], *k as usize)?;
                replace_top(&mut frames[fi], *k as usize, Value::list(items));
            }
            Instruction::Index => {
                let idx = self.heap.unbox(peek(&frames[fi], 0)?);
                let container = self.heap.unbox(peek(&frames[fi], 1)?);
                let v = ops::index(&container, &idx, plugin, self.heap)?;
                replace_top(&mut frames[fi], 2, v);
            }
            Instruction::SetIndex => {
                let idx = self.heap.unbox(peek(&frames[fi], 0)?);
                let container = self.heap.unbox(peek(&frames[fi], 1)?);
                let value = peek(&frames[fi], 2)?.clone();
                ops::set_index(&container, &idx, value, plugin, self.heap)?;
                drop_n(&mut frames[fi], 3);
            }
            Instruction::MakeFunction(k) => {
                let Some(Constant::Code(unit)) = code.constants.get(*k as usize) else {
                    return Err(internal("MAKE_FUNCTION on a non-code constant"));
                };
                let globals = frames[fi].globals.clone();
                let r = self.heap.alloc(lang, HeapObject::Function { code: unit.clone(), globals });
                push(&mut frames[fi], Value::ObjectRef(r));
            }
            Instruction::MakeClass(k) => {
                let Some(Constant::Class(template)) = code.constants.get(*k as usize) else {
                    return Err(internal("MAKE_CLASS on a non-class constant"));
                };
                let n = template.attr_names.len();
                let values = top_n(&frames[fi], n)?;
                let r = self.make_class(template, values, frames[fi].globals.clone(), lang);
                replace_top(&mut frames[fi], n, Value::ObjectRef(r));
            }
            Instruction::SetupHandler { target, matcher, kind } => {
                let depth = frames[fi].stack.len();
                frames[fi].handlers.push(super::frame::HandlerBlock {
                    handler_ip: *target as usize,
                    matcher: matcher.clone(),
                    kind: *kind,
                    stack_depth: depth,
                });
            }
            Instruction::PopHandler => {
                if frames[fi].handlers.pop().is_none() {
                    return Err(internal("POP_HANDLER with no active handler"));
                }
            }
            Instruction::Raise => {
                let v = peek(&frames[fi], 0)?.clone();
                let exc = self.exception_from_value(&v, lang)?;
                return Err(Fault::Raise(exc));
            }
            Instruction::Pop => {
                pop(&mut frames[fi])?;
            }
            Instruction::Dup => {
                let v = peek(&frames[fi], 0)?.clone();
                push(&mut frames[fi], v);
            }
            Instruction::IterNew => {
                let v = self.heap.unbox(peek(&frames[fi], 0)?);
                let list = match v {
                    Value::List(l) => Value::List(l),
                    Value::Text(s) => Value::list(s.chars().map(|c| Value::text(&c.to_string())).collect()),
                    other => return Err(GuestError::NotIterable(plugin.type_name(&other, self.heap)).into()),
                };
                replace_top(&mut frames[fi], 1, list);
                push(&mut frames[fi], Value::int(0));
            }
            Instruction::IterNext(t) => {
                let cursor = match peek(&frames[fi], 0)? {
                    Value::Int(n) => n.to_usize().ok_or_else(|| internal("bad iterator cursor"))?,
                    _ => return Err(internal("ITER_NEXT without a cursor")),
                };
                let next = match peek(&frames[fi], 1)? {
                    Value::List(items) => items.borrow().get(cursor).cloned(),
                    _ => return Err(internal("ITER_NEXT without a list")),
                };
                match next {
                    Some(item) => {
                        replace_top(&mut frames[fi], 1, Value::int(cursor as i64 + 1));
                        push(&mut frames[fi], item);
                    }
                    None => {
                        drop_n(&mut frames[fi], 2);
                        frames[fi].ip = *t as usize;
                    }
                }
            }
        }
        Ok(Flow::Next)
    }

    /// Pops the operands of a call-like instruction and applies its effect.
    fn apply(&mut self, frames: &mut Vec<Frame>, operands: usize, effect: CallEffect) -> Flow {
        let fi = frames.len() - 1;
        drop_n(&mut frames[fi], operands);
        match effect {
            CallEffect::Push(v) => {
                push(&mut frames[fi], v);
                Flow::Next
            }
            CallEffect::Enter(frame) => {
                frames.push(frame);
                Flow::Next
            }
            CallEffect::Block(until, v) => {
                push(&mut frames[fi], v);
                Flow::Block(until)
            }
        }
    }

    fn do_return(&mut self, frames: &mut Vec<Frame>, value: Value) -> Flow {
        let frame = frames.pop().expect("RETURN with a frame");
        let mut v = value;
        if let ReturnAction::PushInstance(inst) = frame.on_return {
            v = inst;
        }
        if let Some(to) = &frame.boundary {
            v = convert(&v, &frame.language, to, &self.policy, self.heap);
        }
        match frames.last_mut() {
            None => Flow::Done(v),
            Some(caller) => {
                caller.stack.push(v);
                Flow::Next
            }
        }
    }

    fn load_name(&mut self, frame: &Frame, name: &Rc<str>) -> Result<Value, Fault> {
        if &**name == "self" {
            if let Some(v) = &frame.self_object {
                return Ok(v.clone());
            }
        }
        if let Some(v) = frame.locals.get(name) {
            return Ok(v);
        }
        if let Some(v) = frame.globals.get(name) {
            return Ok(v);
        }
        let sem = self.plugin(&frame.language).semantics();
        if sem.builtins.contains(&&**name) {
            return Ok(Value::ObjectRef(self.heap.builtin(&frame.language, name)));
        }
        if is_exception_class_name(name) {
            return Ok(Value::ObjectRef(self.heap.exception_class(&frame.language, name)));
        }
        Err(GuestError::UndefinedName(name.to_string()).into())
    }

    fn make_class(&mut self, template: &ClassTemplate, values: Vec<Value>, globals: Scope, lang: &LangId) -> ObjRef {
        let attrs: IndexMap<Rc<str>, Value> = template.attr_names.iter().cloned().zip(values).collect();
        let methods = template.methods.iter().cloned().collect();
        self.heap.alloc(lang, HeapObject::Class(ClassObject { name: template.name.clone(), globals, methods, attrs }))
    }

    /// Builds a frame for `code`, converting arguments from `caller` and
    /// binding the receiver when the language declares it explicitly.
    #[allow(clippy::too_many_arguments)]
    fn activate(
        &mut self,
        code: &Rc<CodeUnit>,
        globals: Scope,
        args: Vec<Value>,
        receiver: Option<Value>,
        origin: CodeOrigin,
        caller: &LangId,
    ) -> Result<Frame, Fault> {
        let owner = code.language.clone();
        let explicit_self = receiver.is_some() && self.plugin(&owner).semantics().explicit_self;
        let skip = usize::from(explicit_self);
        let expected = code.params.len().saturating_sub(skip);
        if args.len() != expected {
            return Err(GuestError::Arity {
                name: code.name.to_string(),
                expected: expected + skip,
                given: args.len() + skip,
            }
            .into());
        }
        let mut bindings = Vec::with_capacity(code.params.len());
        if explicit_self {
            bindings.push((code.params[0].clone(), receiver.clone().expect("receiver")));
        }
        for (name, arg) in code.params[skip..].iter().zip(args) {
            bindings.push((name.clone(), convert(&arg, caller, &owner, &self.policy, self.heap)));
        }
        let mut frame = Frame::call(code.clone(), globals, bindings, receiver, origin);
        if &owner != caller {
            frame.boundary = Some(caller.clone());
        }
        Ok(frame)
    }

    pub(crate) fn call_value(&mut self, callee: &Value, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        let callee = self.heap.unbox(callee);
        let Some(r) = callee.as_ref().cloned() else {
            return Err(GuestError::NotCallable(self.plugin(caller).type_name(&callee, self.heap)).into());
        };
        enum Kind {
            Function(Rc<CodeUnit>, Scope),
            Builtin(Rc<str>),
            Class,
            ExceptionClass(Rc<str>),
            Other,
        }
        let kind = match self.heap.object(&r) {
            Some(HeapObject::Function { code, globals }) => Kind::Function(code.clone(), globals.clone()),
            Some(HeapObject::Builtin { name }) => Kind::Builtin(name.clone()),
            Some(HeapObject::Class(_)) => Kind::Class,
            Some(HeapObject::ExceptionClass { name }) => Kind::ExceptionClass(name.clone()),
            Some(_) => Kind::Other,
            None => return Err(internal(format!("stale reference {:?}", r))),
        };
        match kind {
            Kind::Function(code, globals) => {
                Ok(CallEffect::Enter(self.activate(&code, globals, args, None, CodeOrigin::Function(r), caller)?))
            }
            Kind::Builtin(name) => self.call_builtin(&name, &r.lang, args, caller),
            Kind::Class => self.instantiate(&r, args, caller),
            Kind::ExceptionClass(name) => {
                let message = match args.as_slice() {
                    [] => String::new(),
                    [m] => self.plugin(caller).to_text(m, self.heap),
                    _ => {
                        return Err(GuestError::Arity { name: name.to_string(), expected: 1, given: args.len() }.into())
                    }
                };
                let exc = ExceptionValue::new(&name, message);
                Ok(CallEffect::Push(Value::ObjectRef(self.heap.alloc(caller, HeapObject::Exception(exc)))))
            }
            Kind::Other => Err(GuestError::NotCallable(self.plugin(caller).type_name(&callee, self.heap)).into()),
        }
    }

    pub(crate) fn instantiate(&mut self, class: &ObjRef, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        let owner = class.lang.clone();
        let init_selector = self.plugin(&owner).semantics().init_selector;
        let (init, globals, name) = match self.heap.object(class) {
            Some(HeapObject::Class(c)) => (c.methods.get(init_selector).cloned(), c.globals.clone(), c.name.clone()),
            Some(HeapObject::ExceptionClass { .. }) => return self.call_value(&Value::ObjectRef(class.clone()), args, caller),
            _ => {
                let v = Value::ForeignRef(class.clone());
                return Err(GuestError::NotCallable(self.plugin(caller).type_name(&v, self.heap)).into());
            }
        };
        match init {
            Some(code) => {
                let skip = usize::from(self.plugin(&owner).semantics().explicit_self);
                let expected = code.params.len().saturating_sub(skip);
                if args.len() != expected {
                    return Err(GuestError::Arity {
                        name: code.name.to_string(),
                        expected: expected + skip,
                        given: args.len() + skip,
                    }
                    .into());
                }
                let inst = self.heap.alloc(&owner, HeapObject::Instance { class: class.handle, slots: IndexMap::new() });
                let recv = Value::ObjectRef(inst);
                let origin = CodeOrigin::Method { class: class.clone(), name: Rc::from(init_selector) };
                let mut frame = self.activate(&code, globals, args, Some(recv.clone()), origin, caller)?;
                frame.on_return = ReturnAction::PushInstance(recv);
                Ok(CallEffect::Enter(frame))
            }
            None => {
                if !args.is_empty() {
                    return Err(GuestError::Arity { name: name.to_string(), expected: 0, given: args.len() }.into());
                }
                let inst = self.heap.alloc(&owner, HeapObject::Instance { class: class.handle, slots: IndexMap::new() });
                Ok(CallEffect::Push(convert(&Value::ObjectRef(inst), &owner, caller, &self.policy, self.heap)))
            }
        }
    }

    /// A call written without a receiver, e.g. `greet` or `greet(1)` in a
    /// language where parentheses are optional.
    fn invoke_implicit(&mut self, frame: &Frame, selector: &str, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        if let Some(v) = frame.locals.get(selector).or_else(|| frame.globals.get(selector)) {
            if args.is_empty() && !self.is_function(&v) {
                return Ok(CallEffect::Push(v));
            }
            return self.call_value(&v, args, caller);
        }
        if let Some(Value::ObjectRef(r)) = &frame.self_object {
            if self.find_method(r, selector).is_some() {
                return self.invoke_object(r, selector, args, caller);
            }
        }
        if self.plugin(caller).semantics().builtins.contains(&selector) {
            return self.call_builtin(selector, caller, args, caller);
        }
        if args.is_empty() {
            Err(GuestError::UndefinedName(selector.to_string()).into())
        } else {
            Err(GuestError::NoMethod { selector: selector.to_string(), receiver: "main".into() }.into())
        }
    }

    fn is_function(&self, v: &Value) -> bool {
        match v.as_ref() {
            Some(r) => matches!(self.heap.object(r), Some(HeapObject::Function { .. } | HeapObject::Builtin { .. })),
            None => false,
        }
    }

    fn find_method(&self, r: &ObjRef, selector: &str) -> Option<(ObjRef, Rc<CodeUnit>, Scope)> {
        let HeapObject::Instance { class, .. } = self.heap.object(r)? else {
            return None;
        };
        let class_ref = ObjRef { lang: r.lang.clone(), handle: *class };
        match self.heap.object(&class_ref)? {
            HeapObject::Class(c) => c.methods.get(selector).map(|code| (class_ref.clone(), code.clone(), c.globals.clone())),
            _ => None,
        }
    }

    /// Sends `selector` to `receiver`.
    pub(crate) fn invoke(&mut self, receiver: &Value, selector: &str, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        match receiver {
            Value::ObjectRef(r) | Value::ForeignRef(r) => self.invoke_object(r, selector, args, caller),
            prim => {
                let plugin = self.plugin(caller);
                match plugin.primitive_method(prim, selector, &args, self.heap) {
                    Some(Ok(v)) => Ok(CallEffect::Push(v)),
                    Some(Err(e)) => Err(Fault::Raise(e)),
                    None => Err(GuestError::NoMethod {
                        selector: selector.to_string(),
                        receiver: plugin.type_name(prim, self.heap),
                    }
                    .into()),
                }
            }
        }
    }

    fn invoke_object(&mut self, r: &ObjRef, selector: &str, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        let owner = r.lang.clone();
        let owner_plugin = self.plugin(&owner);
        let no_method = |this: &Self| -> Fault {
            let receiver = this.heap.class_name(r).map(|c| c.to_string()).unwrap_or_default();
            GuestError::NoMethod { selector: selector.to_string(), receiver }.into()
        };
        let Some(obj) = self.heap.object(r) else {
            return Err(internal(format!("stale reference {:?}", r)));
        };
        match obj {
            HeapObject::Instance { .. } => match self.find_method(r, selector) {
                Some((class, code, globals)) => {
                    let origin = CodeOrigin::Method { class, name: Rc::from(selector) };
                    let frame = self.activate(&code, globals, args, Some(Value::ObjectRef(r.clone())), origin, caller)?;
                    Ok(CallEffect::Enter(frame))
                }
                None => Err(no_method(self)),
            },
            HeapObject::Class(_) | HeapObject::ExceptionClass { .. } if selector == "new" => self.instantiate(r, args, caller),
            HeapObject::Function { .. } | HeapObject::Builtin { .. } if selector == "call" => {
                self.call_value(&Value::ObjectRef(r.clone()), args, caller)
            }
            HeapObject::Exception(e) if selector == "message" && args.is_empty() => {
                Ok(CallEffect::Push(Value::Text(e.message.clone())))
            }
            HeapObject::Boxed(inner) => {
                let inner = inner.clone();
                let policy = self.policy;
                let args: Vec<Value> = args.iter().map(|a| convert(a, caller, &owner, &policy, self.heap)).collect();
                match owner_plugin.primitive_method(&inner, selector, &args, self.heap) {
                    Some(Ok(v)) => Ok(CallEffect::Push(convert(&v, &owner, caller, &policy, self.heap))),
                    Some(Err(e)) => Err(Fault::Raise(e)),
                    None => Err(GuestError::NoMethod {
                        selector: selector.to_string(),
                        receiver: owner_plugin.type_name(&inner, self.heap),
                    }
                    .into()),
                }
            }
            _ => Err(no_method(self)),
        }
    }

    pub(crate) fn load_slot(&mut self, obj: &Value, name: &str, caller: &LangId) -> Result<Value, Fault> {
        let obj = self.heap.unbox(obj);
        let Some(r) = obj.as_ref().cloned() else {
            let receiver = self.plugin(caller).type_name(&obj, self.heap);
            return Err(GuestError::NoAttribute { name: name.to_string(), receiver }.into());
        };
        let owner = r.lang.clone();
        let found = match self.heap.object(&r) {
            Some(HeapObject::Instance { slots, class }) => {
                let mut v = slots.get(name).cloned();
                if v.is_none() && &owner != caller {
                    v = slots.get(format!("@{}", name).as_str()).cloned();
                }
                if v.is_none() {
                    let class_ref = ObjRef { lang: owner.clone(), handle: *class };
                    if let Some(HeapObject::Class(c)) = self.heap.object(&class_ref) {
                        v = c.attrs.get(name).cloned();
                    }
                }
                if v.is_none() && self.plugin(&owner).semantics().missing_slot_is_nil {
                    v = Some(Value::Nil);
                }
                v
            }
            Some(HeapObject::Class(c)) => c.attrs.get(name).cloned(),
            Some(HeapObject::Exception(e)) if name == "message" => Some(Value::Text(e.message.clone())),
            Some(_) => None,
            None => return Err(internal(format!("stale reference {:?}", r))),
        };
        match found {
            Some(v) => Ok(convert(&v, &owner, caller, &self.policy, self.heap)),
            None => {
                let receiver = self.heap.class_name(&r).map(|c| c.to_string()).unwrap_or_default();
                Err(GuestError::NoAttribute { name: name.to_string(), receiver }.into())
            }
        }
    }

    pub(crate) fn store_slot(&mut self, obj: &Value, name: &str, value: Value, caller: &LangId) -> Result<(), Fault> {
        let obj = self.heap.unbox(obj);
        let Some(r) = obj.as_ref().cloned() else {
            let receiver = self.plugin(caller).type_name(&obj, self.heap);
            return Err(GuestError::NoAttribute { name: name.to_string(), receiver }.into());
        };
        let value = convert(&value, caller, &r.lang, &self.policy, self.heap);
        let receiver = self.heap.class_name(&r).map(|c| c.to_string()).unwrap_or_default();
        match self.heap.get_mut(&r).map(|e| &mut e.object) {
            Some(HeapObject::Instance { slots, .. }) => {
                let key = if &r.lang != caller && !slots.contains_key(name) && slots.contains_key(format!("@{}", name).as_str()) {
                    Rc::from(format!("@{}", name).as_str())
                } else {
                    Rc::from(name)
                };
                slots.insert(key, value);
                Ok(())
            }
            Some(_) => Err(GuestError::NoAttribute { name: name.to_string(), receiver }.into()),
            None => Err(internal(format!("stale reference {:?}", r))),
        }
    }

    /// Interprets a raised value as an exception.
    fn exception_from_value(&mut self, v: &Value, lang: &LangId) -> Result<ExceptionValue, Fault> {
        let plugin = self.plugin(lang);
        let v = self.heap.unbox(v);
        match &v {
            Value::ObjectRef(r) | Value::ForeignRef(r) => match self.heap.object(r) {
                Some(HeapObject::Exception(e)) => Ok(e.clone()),
                Some(HeapObject::ExceptionClass { name }) => Ok(ExceptionValue::new(name, "")),
                Some(HeapObject::Instance { slots, .. }) => {
                    let class = self.heap.class_name(r).unwrap_or_else(|| Rc::from("Exception"));
                    let message = slots
                        .get("message")
                        .or_else(|| slots.get("@message"))
                        .cloned()
                        .map(|m| self.plugin(&r.lang).to_text(&m, self.heap))
                        .unwrap_or_default();
                    let mut exc = ExceptionValue::new(&class, message);
                    exc.payload = Some(v.clone());
                    Ok(exc)
                }
                _ => Err(GuestError::NotAnException(plugin.type_name(&v, self.heap)).into()),
            },
            Value::Text(s) => match plugin.semantics().raise_text_class {
                Some(class) => Ok(ExceptionValue::new(class, &**s)),
                None => Err(GuestError::NotAnException(plugin.type_name(&v, self.heap)).into()),
            },
            other => Err(GuestError::NotAnException(plugin.type_name(other, self.heap)).into()),
        }
    }
}

/// Names such as `ValueError` or `ArgumentError` denote built-in exception
/// classes when nothing else binds them.
pub fn is_exception_class_name(name: &str) -> bool {
    name.starts_with(|c: char| c.is_ascii_uppercase()) && (name.ends_with("Error") || name.ends_with("Exception"))
}

fn push(frame: &mut Frame, v: Value) {
    frame.stack.push(v);
}

fn pop(frame: &mut Frame) -> Result<Value, Fault> {
    frame.stack.pop().ok_or_else(|| internal("operand stack underflow"))
}

fn peek(frame: &Frame, depth: usize) -> Result<&Value, Fault> {
    let len = frame.stack.len();
    if depth < len {
        Ok(&frame.stack[len - 1 - depth])
    } else {
        Err(internal("operand stack underflow"))
    }
}

fn top_n(frame: &Frame, n: usize) -> Result<Vec<Value>, Fault> {
    let len = frame.stack.len();
    if n > len {
        return Err(internal("operand stack underflow"));
    }
    Ok(frame.stack[len - n..].to_vec())
}

fn drop_n(frame: &mut Frame, n: usize) {
    let len = frame.stack.len();
    frame.stack.truncate(len - n);
}

fn replace_top(frame: &mut Frame, n: usize, v: Value) {
    drop_n(frame, n);
    frame.stack.push(v);
}
