use std::rc::Rc;

use super::isa::{CodeUnit, HandlerKind, Matcher};
use crate::heap::Scope;
use crate::value::{LangId, ObjRef, Value};

/// A protected region pushed by `SETUP_HANDLER`.
#[derive(Clone, Debug, PartialEq)]
pub struct HandlerBlock {
    pub handler_ip: usize,
    pub matcher: Matcher,
    pub kind: HandlerKind,
    /// Operand-stack depth to restore before entering the handler.
    pub stack_depth: usize,
}

/// Where a frame's code came from, so an edited version can be installed
/// back into its definition on restart.
#[derive(Clone, Debug, PartialEq)]
pub enum CodeOrigin {
    Root,
    Function(ObjRef),
    Method { class: ObjRef, name: Rc<str> },
    Scratch,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReturnAction {
    PushResult,
    /// Constructor activations hand back the new instance, not their result.
    PushInstance(Value),
}

/// One activation.
#[derive(Clone, Debug)]
pub struct Frame {
    pub code: Rc<CodeUnit>,
    pub ip: usize,
    pub locals: Scope,
    pub globals: Scope,
    pub stack: Vec<Value>,
    pub handlers: Vec<HandlerBlock>,
    pub self_object: Option<Value>,
    pub language: LangId,
    /// Argument bindings at activation time, replayed by a restart.
    pub args: Vec<(Rc<str>, Value)>,
    pub origin: CodeOrigin,
    pub on_return: ReturnAction,
    /// Set on the first frame of a nested foreign activation: its result is
    /// converted into this language when it returns.
    pub boundary: Option<LangId>,
}

impl Frame {
    /// A module-level activation whose locals are also its globals.
    pub fn root(code: Rc<CodeUnit>, scope: Scope) -> Frame {
        let args = scope.entries();
        Frame {
            language: code.language.clone(),
            code,
            ip: 0,
            locals: scope.clone(),
            globals: scope,
            stack: Vec::new(),
            handlers: Vec::new(),
            self_object: None,
            args,
            origin: CodeOrigin::Root,
            on_return: ReturnAction::PushResult,
            boundary: None,
        }
    }

    pub fn call(
        code: Rc<CodeUnit>,
        globals: Scope,
        args: Vec<(Rc<str>, Value)>,
        self_object: Option<Value>,
        origin: CodeOrigin,
    ) -> Frame {
        let locals = Scope::new();
        for (name, value) in &args {
            locals.set(name, value.clone());
        }
        Frame {
            language: code.language.clone(),
            code,
            ip: 0,
            locals,
            globals,
            stack: Vec::new(),
            handlers: Vec::new(),
            self_object,
            args,
            origin,
            on_return: ReturnAction::PushResult,
            boundary: None,
        }
    }

    pub fn is_module(&self) -> bool {
        self.locals.ptr_eq(&self.globals)
    }

    /// Line of the instruction this frame is executing or about to execute.
    pub fn current_line(&self, is_top: bool) -> u32 {
        if is_top || self.ip == 0 {
            self.code.line_at(self.ip)
        } else {
            // Callers sit just past their CALL/INVOKE.
            self.code.line_at(self.ip - 1)
        }
    }

    pub fn snapshot(&self) -> FrameSnapshot {
        FrameSnapshot {
            code: self.code.name.to_string(),
            code_ptr: Rc::as_ptr(&self.code) as usize,
            ip: self.ip,
            locals: self.locals.entries().into_iter().map(|(k, v)| (k.to_string(), v.deep_clone())).collect(),
            stack: self.stack.iter().map(Value::deep_clone).collect(),
            handlers: self.handlers.clone(),
            self_object: self.self_object.clone(),
            language: self.language.clone(),
        }
    }
}

/// Deep copy of a frame's observable state, for equality checks.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSnapshot {
    pub code: String,
    pub code_ptr: usize,
    pub ip: usize,
    pub locals: Vec<(String, Value)>,
    pub stack: Vec<Value>,
    pub handlers: Vec<HandlerBlock>,
    pub self_object: Option<Value>,
    pub language: LangId,
}

pub fn snapshot_stack(frames: &[Frame]) -> Vec<FrameSnapshot> {
    frames.iter().map(Frame::snapshot).collect()
}
