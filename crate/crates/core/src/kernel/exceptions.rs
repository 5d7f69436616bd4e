//! Handler search and unwinding.
//!
//! A raise first asks [`find_handler`] whether any frame will catch the
//! exception. Only when a handler exists is the stack modified; otherwise the
//! caller traps with the stack exactly as it was at the raise point.

use std::rc::Rc;

use super::frame::Frame;
use super::isa::HandlerKind;
use crate::value::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct ExceptionValue {
    pub class_name: Rc<str>,
    pub message: Rc<str>,
    pub payload: Option<Value>,
}

impl ExceptionValue {
    pub fn new(class_name: &str, message: impl AsRef<str>) -> Self {
        assert!(!class_name.is_empty(), "exception class name must be non-empty");
        ExceptionValue { class_name: Rc::from(class_name), message: Rc::from(message.as_ref()), payload: None }
    }

    /// `Class: message`, or just the class when there is no message.
    pub fn title(&self) -> String {
        if self.message.is_empty() {
            self.class_name.to_string()
        } else {
            format!("{}: {}", self.class_name, self.message)
        }
    }
}

/// Location of a matching rescue block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandlerLocation {
    /// Frame index counted from the root (0).
    pub frame: usize,
    /// Index of the block within that frame's handler stack.
    pub block: usize,
    pub handler_ip: usize,
}

/// Innermost rescue block whose matcher accepts `class_name`. Ensure blocks
/// are not handlers and are skipped.
pub fn find_handler(frames: &[Frame], class_name: &str) -> Option<HandlerLocation> {
    for (fi, frame) in frames.iter().enumerate().rev() {
        for (bi, block) in frame.handlers.iter().enumerate().rev() {
            if block.kind == HandlerKind::Rescue && block.matcher.matches(class_name) {
                return Some(HandlerLocation { frame: fi, block: bi, handler_ip: block.handler_ip });
            }
        }
    }
    None
}

/// Where unwinding stopped.
#[derive(Debug, PartialEq)]
pub enum UnwindStop {
    /// Control transferred to a rescue or ensure block; the exception object
    /// must be pushed on the top frame's stack.
    Entered,
    /// Every frame was discarded.
    Exhausted,
}

/// Pops handler blocks and frames from the top until the target rescue block
/// (or, with `target = None`, the bottom of the stack) is reached. The first
/// ensure block met on the way is entered instead; it re-raises when done,
/// which resumes the search.
pub fn unwind(frames: &mut Vec<Frame>, target: Option<HandlerLocation>) -> UnwindStop {
    while !frames.is_empty() {
        let fi = frames.len() - 1;
        let frame = &mut frames[fi];
        while let Some(block) = frame.handlers.pop() {
            let is_target = matches!(target, Some(t) if t.frame == fi && t.block == frame.handlers.len());
            if is_target || block.kind == HandlerKind::Ensure {
                frame.stack.truncate(block.stack_depth);
                frame.ip = block.handler_ip;
                return UnwindStop::Entered;
            }
        }
        frames.pop();
    }
    UnwindStop::Exhausted
}
