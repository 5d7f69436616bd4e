//! Stack views, frame restart and in-frame evaluation support.

use std::rc::Rc;

use thiserror::Error;

use super::frame::{CodeOrigin, Frame};
use super::isa::{CodeKind, CodeUnit};
use crate::heap::{Heap, HeapObject};
use crate::plugin::{CompileError, PluginRegistry};
use crate::value::{LangId, Value};

/// One frame as tools see it.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameView {
    pub language: LangId,
    pub display_name: String,
    pub line: u32,
    pub source: Rc<str>,
    pub locals: Vec<(String, Value)>,
    /// Labelled entries shown next to the locals, such as `(thisContext)`.
    pub pseudo: Vec<(String, String)>,
}

/// Frames top first.
pub fn stack_view(frames: &[Frame], plugins: &PluginRegistry) -> Vec<FrameView> {
    let top = frames.len().saturating_sub(1);
    frames
        .iter()
        .enumerate()
        .rev()
        .map(|(i, frame)| frame_view(frame, i == top, plugins))
        .collect()
}

pub fn display_name(frame: &Frame, plugins: &PluginRegistry) -> String {
    match frame.code.kind {
        CodeKind::Module => match plugins.get(&frame.language) {
            Some(p) => p.semantics().root_name.to_string(),
            None => frame.code.name.to_string(),
        },
        _ => frame.code.name.to_string(),
    }
}

pub fn frame_view(frame: &Frame, is_top: bool, plugins: &PluginRegistry) -> FrameView {
    let name = display_name(frame, plugins);
    let line = frame.current_line(is_top);
    let mut locals: Vec<(String, Value)> = Vec::new();
    if let Some(receiver) = &frame.self_object {
        if !frame.locals.contains("self") {
            locals.push(("self".to_string(), receiver.clone()));
        }
    }
    locals.extend(frame.locals.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    let pseudo = vec![
        ("(thisContext)".to_string(), format!("{} [{}] line {}", name, frame.language, line)),
        ("(source)".to_string(), format!("{} source of {}", frame.language, name)),
    ];
    FrameView { language: frame.language.clone(), display_name: name, line, source: frame.code.source.clone(), locals, pseudo }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RestartError {
    #[error("compile error: {0}")]
    Compile(#[from] CompileError),
    #[error("parameter count changed from {old} to {new}")]
    ArityChanged { old: usize, new: usize },
    #[error("no frame at index {0}")]
    BadIndex(usize),
}

/// Converts a top-first view index into a position in `frames`.
pub fn frame_position(frames: &[Frame], view_index: usize) -> Option<usize> {
    frames.len().checked_sub(1)?.checked_sub(view_index)
}

/// Picks the unit in a fresh compilation that replaces `old`.
fn replacement(module: Rc<CodeUnit>, old: &CodeUnit, separator: char) -> Option<Rc<CodeUnit>> {
    if old.kind == CodeKind::Module {
        return Some(module);
    }
    let short = old.name.rsplit(separator).next().unwrap_or(&old.name).to_string();
    let mut all = Vec::new();
    let mut pending = module.children();
    while let Some(unit) = pending.pop() {
        pending.extend(unit.children());
        all.push(unit);
    }
    if let Some(found) = all.iter().find(|u| u.name == old.name) {
        return Some(found.clone());
    }
    if let Some(found) = all.iter().find(|u| *u.name == *short) {
        return Some(found.clone());
    }
    let mut routines = all.into_iter().filter(|u| u.kind != CodeKind::Module);
    match (routines.next(), routines.next()) {
        (Some(only), None) => Some(only),
        _ => None,
    }
}

/// Discards every frame above `view_index` (their ensure blocks do not run)
/// and replaces the frame at that index with a fresh activation, optionally
/// of recompiled code. Argument values and the receiver are reused. Edited
/// code is also installed into the function or method it came from.
pub fn restart_frame(
    frames: &mut Vec<Frame>,
    view_index: usize,
    new_source: Option<&str>,
    plugins: &PluginRegistry,
    heap: &mut Heap,
) -> Result<(), RestartError> {
    let pos = frame_position(frames, view_index).ok_or(RestartError::BadIndex(view_index))?;
    let old = &frames[pos];
    let code = match new_source {
        None => old.code.clone(),
        Some(src) => {
            let plugin = plugins
                .get(&old.language)
                .ok_or_else(|| CompileError::new(1, 0, format!("unknown language `{}`", old.language)))?;
            let module = Rc::new(plugin.compile(src)?);
            let sep = plugin.semantics().method_separator;
            let code = replacement(module, &old.code, sep).ok_or_else(|| {
                CompileError::new(1, 0, format!("source does not define `{}`", old.code.name))
            })?;
            if code.params.len() != old.code.params.len() {
                return Err(RestartError::ArityChanged { old: old.code.params.len(), new: code.params.len() });
            }
            code
        }
    };
    // Verify before touching anything so a broken unit cannot be installed.
    code.static_depths();
    if new_source.is_some() {
        install(heap, &old.origin, &code);
    }
    let fresh = if old.is_module() {
        let mut f = Frame::root(code, old.locals.clone());
        f.args = old.args.clone();
        f
    } else {
        let params: Vec<Rc<str>> = code.params.clone();
        let args = params
            .into_iter()
            .zip(old.args.iter().map(|(_, v)| v.clone()))
            .collect::<Vec<_>>();
        Frame::call(code, old.globals.clone(), args, old.self_object.clone(), old.origin.clone())
    };
    let mut fresh = fresh;
    fresh.origin = old.origin.clone();
    fresh.on_return = old.on_return.clone();
    fresh.boundary = old.boundary.clone();
    frames.truncate(pos);
    frames.push(fresh);
    Ok(())
}

fn install(heap: &mut Heap, origin: &CodeOrigin, code: &Rc<CodeUnit>) {
    match origin {
        CodeOrigin::Function(r) => {
            if let Some(entry) = heap.get_mut(r) {
                if let HeapObject::Function { code: slot, .. } = &mut entry.object {
                    *slot = code.clone();
                }
            }
        }
        CodeOrigin::Method { class, name } => {
            if let Some(entry) = heap.get_mut(class) {
                if let HeapObject::Class(c) = &mut entry.object {
                    c.methods.insert(name.clone(), code.clone());
                }
            }
        }
        CodeOrigin::Root | CodeOrigin::Scratch => {}
    }
}

/// A frame that runs `code` against an existing frame's variables: writes go
/// to that frame's locals, and its receiver is visible.
pub fn scratch_frame(code: Rc<CodeUnit>, context: &Frame) -> Frame {
    let mut f = Frame::call(code, context.globals.clone(), Vec::new(), context.self_object.clone(), CodeOrigin::Scratch);
    f.locals = context.locals.clone();
    f
}
