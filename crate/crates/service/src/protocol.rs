//! Message dispatch for the wire protocol.
//!
//! Everything here runs on the VM lane: the server hands each message to
//! [`Dispatcher::handle_text`] inside a VM command.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use polyvm_core::bridge::{PipelineCell, PipelineError};
use polyvm_core::debug::{DebugError, Proceeded};
use polyvm_core::heap::HeapObject;
use polyvm_core::kernel::{ExceptionValue, FrameView};
use polyvm_core::lang::TokenKind;
use polyvm_core::mop::{inspect_value, InspectView, MopError};
use polyvm_core::value::{Handle, LangId, ObjRef, Value};
use polyvm_core::vm::{ProcessState, VmError};
use polyvm_core::{ProcessId, SessionId, Vm, VmEvent};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    UnknownOp,
    BadParams,
    UnknownLanguage,
    CompileError,
    StaleHandle,
    SessionClosed,
    NotRunnable,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UnknownOp => "unknown_op",
            ErrorCode::BadParams => "bad_params",
            ErrorCode::UnknownLanguage => "unknown_language",
            ErrorCode::CompileError => "compile_error",
            ErrorCode::StaleHandle => "stale_handle",
            ErrorCode::SessionClosed => "session_closed",
            ErrorCode::NotRunnable => "not_runnable",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ProtocolError { code, message: message.into() }
    }

    fn bad(message: impl Into<String>) -> Self {
        ProtocolError::new(ErrorCode::BadParams, message)
    }
}

impl From<VmError> for ProtocolError {
    fn from(e: VmError) -> Self {
        let code = match &e {
            VmError::UnknownLanguage(_) => ErrorCode::UnknownLanguage,
            VmError::Compile(_) => ErrorCode::CompileError,
            VmError::NoSuchProcess(_) | VmError::InvalidBudget(_) => ErrorCode::BadParams,
            VmError::NotRunnable(_) | VmError::NotInterruptible(_) => ErrorCode::NotRunnable,
        };
        ProtocolError::new(code, e.to_string())
    }
}

impl From<DebugError> for ProtocolError {
    fn from(e: DebugError) -> Self {
        let code = match &e {
            DebugError::NoSuchSession(_) | DebugError::BadIndex(_) | DebugError::Restart(_) => ErrorCode::BadParams,
            DebugError::SessionClosed(_) => ErrorCode::SessionClosed,
            DebugError::NotSteppable => ErrorCode::NotRunnable,
            DebugError::UnknownLanguage(_) => ErrorCode::UnknownLanguage,
            DebugError::Compile(_) => ErrorCode::CompileError,
            DebugError::Raised(_) => ErrorCode::BadParams,
        };
        ProtocolError::new(code, e.to_string())
    }
}

impl From<MopError> for ProtocolError {
    fn from(e: MopError) -> Self {
        let code = match &e {
            MopError::StaleHandle(_) => ErrorCode::StaleHandle,
            MopError::UnknownLanguage(_) => ErrorCode::UnknownLanguage,
            MopError::NoSuchSlot(_) | MopError::NoSuchMethod(_) => ErrorCode::BadParams,
        };
        ProtocolError::new(code, e.to_string())
    }
}

impl From<PipelineError> for ProtocolError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Empty | PipelineError::EmptyCell(_) => ErrorCode::BadParams,
            PipelineError::UnknownLanguage { .. } => ErrorCode::UnknownLanguage,
            PipelineError::Compile { .. } => ErrorCode::CompileError,
        };
        ProtocolError::new(code, e.to_string())
    }
}

type OpResult = Result<Json, ProtocolError>;

pub fn ok_reply(id: u64, result: Json) -> Json {
    json!({ "id": id, "result": result })
}

pub fn error_reply(id: u64, error: &ProtocolError) -> Json {
    json!({ "id": id, "error": { "code": error.code.as_str(), "message": error.message } })
}

/// Per-server protocol state.
#[derive(Debug, Default)]
pub struct Dispatcher {
    print_it: HashSet<ProcessId>,
}

impl Dispatcher {
    pub fn new() -> Self {
        Dispatcher::default()
    }

    /// Parses one message and answers it. Unparseable input gets an error
    /// reply with id 0.
    pub fn handle_text(&mut self, vm: &mut Vm, text: &str) -> Json {
        let message: Json = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return error_reply(0, &ProtocolError::bad(format!("malformed JSON: {e}"))),
        };
        let Some(object) = message.as_object() else {
            return error_reply(0, &ProtocolError::bad("a message must be a JSON object"));
        };
        let id = match object.get("id") {
            None => 0,
            Some(v) => match v.as_u64() {
                Some(id) => id,
                None => return error_reply(0, &ProtocolError::bad("id must be a non-negative integer")),
            },
        };
        let Some(op) = object.get("op").and_then(Json::as_str) else {
            return error_reply(id, &ProtocolError::bad("missing op"));
        };
        let empty = Map::new();
        let params = match object.get("params") {
            None | Some(Json::Null) => &empty,
            Some(Json::Object(p)) => p,
            Some(_) => return error_reply(id, &ProtocolError::bad("params must be an object")),
        };
        match self.handle(vm, op, params) {
            Ok(result) => ok_reply(id, result),
            Err(e) => error_reply(id, &e),
        }
    }

    pub fn handle(&mut self, vm: &mut Vm, op: &str, params: &Map<String, Json>) -> OpResult {
        let p = Params(params);
        match op {
            "hello" => Ok(hello(vm)),
            "eval" => self.eval(vm, p),
            "inspect" => inspect(vm, p),
            "inspect_eval" => inspect_eval(vm, p),
            "processes" => Ok(processes(vm)),
            "interrupt" => {
                let session = vm.interrupt(ProcessId(p.u64("pid")?))?;
                Ok(json!({ "session": session.0 }))
            }
            "stack" => {
                let frames = vm.session_stack(p.session()?)?;
                Ok(stack_json(&frames))
            }
            "frame" => {
                let index = p.usize("index")?;
                let frame = vm.session_frame(p.session()?, index)?;
                Ok(frame_json(vm, index, &frame))
            }
            "eval_in_frame" => {
                let session = p.session()?;
                let index = p.usize("index")?;
                let source = p.str("source")?;
                let language = vm.session_frame(session, index)?.language;
                match vm.evaluate_in_frame(session, index, source) {
                    Ok(v) => Ok(json!({ "display": display(vm, &language, &v), "value": encode_value(vm, &language, &v) })),
                    Err(DebugError::Raised(e)) => Ok(json!({ "error": exception_json(&e) })),
                    Err(e) => Err(e.into()),
                }
            }
            "restart_frame" => {
                let session = p.session()?;
                let source = p.opt_str("source")?;
                let frames = vm.restart(session, p.usize("index")?, source)?;
                Ok(stack_json(&frames))
            }
            "proceed" => {
                let session = p.session()?;
                let pid = vm.session(session)?.event.pid;
                match vm.proceed(session)? {
                    Proceeded::Resumed => Ok(json!({ "resumed": true })),
                    Proceeded::Terminated(result) => {
                        let language = vm.process(pid).map(|p| p.language.clone()).expect("session process exists");
                        let mut reply = json!({ "result_display": vm.result_display(&language, &result) });
                        if let Err(e) = &result {
                            reply["exception"] = exception_json(e);
                        }
                        Ok(reply)
                    }
                }
            }
            "step_over" => {
                let frames = vm.step_over(p.session()?)?;
                Ok(stack_json(&frames))
            }
            "set_budget" => {
                let quantum = p.get("quantum")?.as_i64().ok_or_else(|| ProtocolError::bad("quantum must be an integer"))?;
                let previous = vm.set_budget(quantum)?;
                Ok(json!({ "previous": previous }))
            }
            "highlight" => highlight(vm, p),
            "pipeline" => pipeline(vm, p),
            other => Err(ProtocolError::new(ErrorCode::UnknownOp, format!("unknown op '{other}'"))),
        }
    }

    fn eval(&mut self, vm: &mut Vm, p: Params) -> OpResult {
        let language = p.str("language")?;
        let source = p.str("source")?;
        let print_it = match p.opt_str("mode")? {
            None | Some("printIt") => true,
            Some("doIt") => false,
            Some(other) => return Err(ProtocolError::bad(format!("unknown mode '{other}'"))),
        };
        let pid = vm.spawn_process(language, source, [])?;
        if print_it {
            self.print_it.insert(pid);
        }
        Ok(json!({ "pid": pid.0 }))
    }

    /// The push a subscriber event turns into.
    pub fn push_for(&mut self, vm: &mut Vm, event: &VmEvent) -> Json {
        match event {
            VmEvent::Trap { session, pid, title, interrupt } => json!({
                "id": 0, "event": "trap", "session": session.0, "pid": pid.0, "title": title, "interrupt": interrupt,
            }),
            VmEvent::Completed { pid, display, exception, transcript } => {
                let mut push = json!({ "id": 0, "event": "completed", "pid": pid.0, "transcript": transcript });
                if self.print_it.remove(pid) {
                    push["display"] = json!(display);
                    let result = vm.process(*pid).and_then(|p| Some((p.language.clone(), p.result()?.clone())));
                    if let Some((language, Ok(value))) = result {
                        push["value"] = encode_value(vm, &language, &value);
                    }
                }
                if let Some((class, message)) = exception {
                    push["exception"] = json!({ "class": class, "message": message });
                }
                push
            }
            VmEvent::Cell { pipeline, pid, index, display } => json!({
                "id": 0, "event": "cell", "pipeline": pipeline, "pid": pid.0, "index": index, "display": display,
            }),
            VmEvent::PipelineCompleted { pipeline, pid, display, error } => {
                let mut push = json!({ "id": 0, "event": "completed", "pipeline": pipeline, "pid": pid.0 });
                if let Some(d) = display {
                    push["display"] = json!(d);
                }
                if let Some(e) = error {
                    push["error"] = json!(e);
                }
                push
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Params<'a>(&'a Map<String, Json>);

impl<'a> Params<'a> {
    fn get(self, key: &str) -> Result<&'a Json, ProtocolError> {
        self.0.get(key).ok_or_else(|| ProtocolError::bad(format!("missing parameter '{key}'")))
    }

    fn str(self, key: &str) -> Result<&'a str, ProtocolError> {
        self.get(key)?.as_str().ok_or_else(|| ProtocolError::bad(format!("'{key}' must be a string")))
    }

    fn opt_str(self, key: &str) -> Result<Option<&'a str>, ProtocolError> {
        match self.0.get(key) {
            None | Some(Json::Null) => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| ProtocolError::bad(format!("'{key}' must be a string"))),
        }
    }

    fn u64(self, key: &str) -> Result<u64, ProtocolError> {
        self.get(key)?.as_u64().ok_or_else(|| ProtocolError::bad(format!("'{key}' must be a non-negative integer")))
    }

    fn usize(self, key: &str) -> Result<usize, ProtocolError> {
        Ok(self.u64(key)? as usize)
    }

    fn session(self) -> Result<SessionId, ProtocolError> {
        Ok(SessionId(self.u64("session")?))
    }
}

fn hello(vm: &Vm) -> Json {
    let languages: Vec<Json> = vm
        .plugins
        .descriptors()
        .map(|d| {
            json!({
                "id": d.id.as_str(),
                "name": d.display_name,
                "extension": d.file_extension,
                "capabilities": d.capabilities.iter().map(|c| c.name()).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "version": PROTOCOL_VERSION, "languages": languages, "budget": vm.quantum() })
}

fn default_language(vm: &Vm) -> LangId {
    vm.plugins.ids().next().cloned().expect("at least one language is registered")
}

fn display(vm: &Vm, language: &LangId, value: &Value) -> String {
    vm.plugins.expect(language).display(value, &vm.heap)
}

fn exception_json(e: &ExceptionValue) -> Json {
    json!({ "class": e.class_name.as_ref(), "message": e.message.as_ref() })
}

/// Wire form of a value. Lists are boxed on the heap so tools can hold on
/// to them by reference.
pub fn encode_value(vm: &mut Vm, language: &LangId, value: &Value) -> Json {
    match value {
        Value::Nil => Json::Null,
        Value::Bool(b) => json!(b),
        Value::Int(n) => match n.to_i64() {
            Some(i) => json!(i),
            None => json!({ "int": n.to_string() }),
        },
        Value::Float(x) if x.is_finite() => json!(x),
        Value::Float(x) => {
            let text = if x.is_nan() { "nan" } else if *x > 0.0 { "inf" } else { "-inf" };
            json!({ "float": text })
        }
        Value::Text(s) => json!(s.as_ref()),
        Value::List(_) => {
            let r = vm.heap.alloc(language, HeapObject::Boxed(value.clone()));
            ref_json(&r)
        }
        Value::ObjectRef(r) | Value::ForeignRef(r) => ref_json(r),
    }
}

fn ref_json(r: &ObjRef) -> Json {
    json!({ "ref": { "lang": r.lang.as_str(), "handle": r.handle.0 } })
}

/// Inverse of [`encode_value`]. References must name a live object of the
/// stated language; boxed lists come back as the list itself.
pub fn decode_value(vm: &Vm, json: &Json) -> Result<Value, ProtocolError> {
    match json {
        Json::Null => Ok(Value::Nil),
        Json::Bool(b) => Ok(Value::Bool(*b)),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(Value::int(i))
            } else if let Some(u) = n.as_u64() {
                Ok(Value::Int(BigInt::from(u)))
            } else {
                Ok(Value::Float(n.as_f64().unwrap_or(f64::NAN)))
            }
        }
        Json::String(s) => Ok(Value::text(s)),
        Json::Array(items) => Ok(Value::list(items.iter().map(|i| decode_value(vm, i)).collect::<Result<_, _>>()?)),
        Json::Object(o) => {
            if let Some(r) = o.get("ref") {
                return decode_ref(vm, r);
            }
            if let Some(text) = o.get("int").and_then(Json::as_str) {
                return text.parse::<BigInt>().map(Value::Int).map_err(|_| ProtocolError::bad("bad integer"));
            }
            if let Some(text) = o.get("float").and_then(Json::as_str) {
                return match text {
                    "inf" => Ok(Value::Float(f64::INFINITY)),
                    "-inf" => Ok(Value::Float(f64::NEG_INFINITY)),
                    "nan" => Ok(Value::Float(f64::NAN)),
                    _ => Err(ProtocolError::bad("bad float")),
                };
            }
            Err(ProtocolError::bad("unrecognized value encoding"))
        }
    }
}

fn decode_ref(vm: &Vm, json: &Json) -> Result<Value, ProtocolError> {
    let lang = json.get("lang").and_then(Json::as_str).ok_or_else(|| ProtocolError::bad("ref needs a lang"))?;
    let handle = json.get("handle").and_then(Json::as_u64).ok_or_else(|| ProtocolError::bad("ref needs a handle"))?;
    let stale = || ProtocolError::new(ErrorCode::StaleHandle, format!("stale handle {lang}:{handle}"));
    let r = ObjRef { lang: LangId::new(lang), handle: Handle(u32::try_from(handle).map_err(|_| stale())?) };
    let entry = vm.heap.get(&r).ok_or_else(stale)?;
    if entry.owner != r.lang {
        return Err(stale());
    }
    match &entry.object {
        HeapObject::Boxed(v) => Ok(v.clone()),
        _ => Ok(Value::ObjectRef(r)),
    }
}

fn value_language(vm: &Vm, value: &Value, fallback: Option<&str>) -> Result<LangId, ProtocolError> {
    if let Some(r) = value.as_ref() {
        return Ok(r.lang.clone());
    }
    match fallback {
        Some(id) => vm
            .plugins
            .lookup(id)
            .map(|p| p.id().clone())
            .ok_or_else(|| ProtocolError::new(ErrorCode::UnknownLanguage, format!("unknown language '{id}'"))),
        None => Ok(default_language(vm)),
    }
}

fn viewer(vm: &Vm, p: Params, value: &Value) -> Result<LangId, ProtocolError> {
    match p.opt_str("viewer")? {
        Some(id) => value_language(vm, &Value::Nil, Some(id)),
        None => value_language(vm, value, p.opt_str("language")?),
    }
}

fn inspect_json(vm: &mut Vm, view: &InspectView) -> Json {
    let viewer = view.viewer_language.clone();
    let slots: Vec<Json> = view
        .slots
        .iter()
        .map(|(name, v)| json!({ "name": name, "display": display(vm, &viewer, v), "value": encode_value(vm, &viewer, v) }))
        .collect();
    json!({
        "class_name": view.class_name,
        "display": view.display,
        "language": view.language.as_ref().map(|l| l.as_str().to_string()),
        "viewer_language": viewer.as_str(),
        "slots": slots,
    })
}

fn inspect(vm: &mut Vm, p: Params) -> OpResult {
    let value = decode_value(vm, p.get("value_ref")?)?;
    let viewer = viewer(vm, p, &value)?;
    let view = inspect_value(&value, &viewer, &vm.heap, &vm.plugins)?;
    Ok(inspect_json(vm, &view))
}

fn inspect_eval(vm: &mut Vm, p: Params) -> OpResult {
    let value = decode_value(vm, p.get("value_ref")?)?;
    let source = p.str("source")?;
    let language = value_language(vm, &value, p.opt_str("language")?)?;
    let outcome = vm.evaluate(language.as_str(), source, value.clone());
    let view = inspect_value(&value, &viewer(vm, p, &value)?, &vm.heap, &vm.plugins)?;
    let refreshed = inspect_json(vm, &view);
    match outcome {
        Ok(v) => Ok(json!({
            "display": display(vm, &language, &v),
            "value": encode_value(vm, &language, &v),
            "refreshed": refreshed,
        })),
        Err(DebugError::Raised(e)) => Ok(json!({ "error": exception_json(&e), "refreshed": refreshed })),
        Err(e) => Err(e.into()),
    }
}

fn processes(vm: &Vm) -> Json {
    let list: Vec<Json> = vm
        .processes()
        .map(|p| {
            let mut entry = json!({ "pid": p.id.0, "language": p.language.as_str(), "state": p.state.name() });
            if let Some(line) = p.current_line() {
                entry["current_line"] = json!(line);
            }
            if matches!(p.state, ProcessState::Suspended(_)) {
                if let Some(s) = vm.session_for(p.id) {
                    entry["session"] = json!(s.0);
                }
            }
            entry
        })
        .collect();
    Json::Array(list)
}

fn frame_summary(index: usize, frame: &FrameView) -> Json {
    json!({ "index": index, "language": frame.language.as_str(), "name": frame.display_name, "line": frame.line })
}

fn stack_json(frames: &[FrameView]) -> Json {
    Json::Array(frames.iter().enumerate().map(|(i, f)| frame_summary(i, f)).collect())
}

fn frame_json(vm: &mut Vm, index: usize, frame: &FrameView) -> Json {
    let mut out = frame_summary(index, frame);
    let locals: Vec<Json> = frame
        .locals
        .iter()
        .map(|(name, v)| {
            json!({ "name": name, "display": display(vm, &frame.language, v), "value": encode_value(vm, &frame.language, v) })
        })
        .collect();
    let pseudo: Vec<Json> = frame.pseudo.iter().map(|(name, text)| json!({ "name": name, "text": text })).collect();
    out["source"] = json!(frame.source.as_ref());
    out["locals"] = Json::Array(locals);
    out["pseudo"] = Json::Array(pseudo);
    out
}

fn highlight(vm: &Vm, p: Params) -> OpResult {
    let language = p.str("language")?;
    let plugin = vm.plugin(language)?;
    let spans: Vec<Json> = plugin
        .tokenize(p.str("source")?)
        .into_iter()
        .filter(|t| !matches!(t.kind, TokenKind::Indent | TokenKind::Dedent | TokenKind::Newline))
        .map(|t| json!({ "kind": t.kind.name(), "line": t.line, "start": t.start, "end": t.end }))
        .collect();
    Ok(Json::Array(spans))
}

fn pipeline(vm: &mut Vm, p: Params) -> OpResult {
    let cells = p.get("cells")?.as_array().ok_or_else(|| ProtocolError::bad("cells must be a list"))?;
    let cells = cells
        .iter()
        .map(|c| {
            let language = c.get("language").and_then(Json::as_str);
            let source = c.get("source").and_then(Json::as_str);
            match (language, source) {
                (Some(l), Some(s)) => Ok(PipelineCell::new(l, s)),
                _ => Err(ProtocolError::bad("each cell needs a language and a source")),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let initial = match p.0.get("initial") {
        Some(v) => decode_value(vm, v)?,
        None => Value::Nil,
    };
    let (pipeline, pid) = vm.start_pipeline(&cells, initial)?;
    Ok(json!({ "pid": pid.0, "pipeline": pipeline }))
}
