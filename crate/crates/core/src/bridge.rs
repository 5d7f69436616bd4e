//! Cross-language calls and multi-language pipelines.

use std::rc::Rc;

use thiserror::Error;

use crate::heap::Scope;
use crate::kernel::ops::Fault;
use crate::kernel::{CallEffect, CodeUnit, ExceptionValue, ExecStack, Frame, Machine};
use crate::plugin::{convert, CompileError};
use crate::value::{LangId, Value};
use crate::vm::{ProcessId, ProcessState, SessionId, Vm, VmEvent, EVAL_LIMIT};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineCell {
    pub language: String,
    pub source: String,
}

impl PipelineCell {
    pub fn new(language: &str, source: &str) -> Self {
        PipelineCell { language: language.to_string(), source: source.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineResult {
    /// `(cell index, value, display)` in cell order.
    pub per_cell: Vec<(usize, Value, String)>,
    pub final_value: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PipelineStatus {
    Running(ProcessId),
    Completed(PipelineResult),
    Failed { index: usize, exception: ExceptionValue },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("a pipeline needs at least one cell")]
    Empty,
    #[error("cell {0} has no source")]
    EmptyCell(usize),
    #[error("cell {index}: unknown language '{language}'")]
    UnknownLanguage { index: usize, language: String },
    #[error("cell {index}: {error}")]
    Compile { index: usize, error: CompileError },
}

/// Why [`Vm::run_pipeline`] stopped short of a result.
#[derive(Clone, Debug, PartialEq)]
pub enum PipelineStop {
    Invalid(PipelineError),
    /// A cell trapped; the pipeline continues once the session is resolved.
    Paused { pipeline: u64, session: SessionId },
    Failed { index: usize, exception: ExceptionValue },
}

#[derive(Debug)]
pub(crate) struct Pipeline {
    cells: Vec<(LangId, Rc<CodeUnit>)>,
    per_cell: Vec<(usize, Value, String)>,
    pub(crate) status: PipelineStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PipelineFormatError {
    #[error("line {0}: separator without a language")]
    MissingLanguage(usize),
    #[error("no `--- <language>` separator found")]
    NoCells,
}

/// Splits a pipeline file into cells. Each cell starts at a `--- <language>`
/// line; text before the first separator is ignored.
pub fn parse_pipeline(text: &str) -> Result<Vec<PipelineCell>, PipelineFormatError> {
    let mut cells: Vec<PipelineCell> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("---") {
            if rest.is_empty() || rest.starts_with(char::is_whitespace) {
                let language = rest.trim();
                if language.is_empty() {
                    return Err(PipelineFormatError::MissingLanguage(n + 1));
                }
                cells.push(PipelineCell::new(language, ""));
                continue;
            }
        }
        if let Some(cell) = cells.last_mut() {
            cell.source.push_str(line);
            cell.source.push('\n');
        }
    }
    if cells.is_empty() {
        return Err(PipelineFormatError::NoCells);
    }
    Ok(cells)
}

fn origin_language(value: &Value, fallback: &LangId) -> LangId {
    value.as_ref().map(|r| r.lang.clone()).unwrap_or_else(|| fallback.clone())
}

impl Vm {
    /// Sends `selector` to `target` from code written in `caller`. Arguments
    /// and the result cross the language boundary through the conversion
    /// policy.
    pub fn cross_invoke(
        &mut self,
        target: &Value,
        selector: &str,
        args: Vec<Value>,
        caller: &LangId,
    ) -> Result<Value, ExceptionValue> {
        let mut transcript = String::new();
        let mut machine = Machine {
            heap: &mut self.heap,
            plugins: &self.plugins,
            transcript: &mut transcript,
            policy: self.policy,
            check_depths: self.check_depths,
        };
        let fault = match machine.invoke(target, selector, args, caller) {
            Ok(CallEffect::Push(v) | CallEffect::Block(_, v)) => return Ok(v),
            Ok(CallEffect::Enter(frame)) => {
                return machine.run_to_end(&mut ExecStack::new(frame), EVAL_LIMIT);
            }
            Err(fault) => fault,
        };
        Err(match fault {
            Fault::Raise(e) => e,
            Fault::Guest(g) => self.plugins.expect(caller).error(g),
            Fault::Internal(msg) => ExceptionValue::new("InternalError", msg),
        })
    }

    /// Compiles every cell and starts the first one as a process with `it`
    /// bound to `initial`. Later cells start as earlier ones complete.
    pub fn start_pipeline(&mut self, cells: &[PipelineCell], initial: Value) -> Result<(u64, ProcessId), PipelineError> {
        if cells.is_empty() {
            return Err(PipelineError::Empty);
        }
        let mut compiled = Vec::new();
        for (index, cell) in cells.iter().enumerate() {
            if cell.source.trim().is_empty() {
                return Err(PipelineError::EmptyCell(index));
            }
            let plugin = self
                .plugins
                .lookup(&cell.language)
                .ok_or_else(|| PipelineError::UnknownLanguage { index, language: cell.language.clone() })?;
            let code = plugin.compile(&cell.source).map_err(|error| PipelineError::Compile { index, error })?;
            compiled.push((plugin.id().clone(), Rc::new(code)));
        }
        let id = self.next_pipeline;
        self.next_pipeline += 1;
        let from = origin_language(&initial, &compiled[0].0);
        self.pipelines.insert(
            id,
            Pipeline { cells: compiled, per_cell: Vec::new(), status: PipelineStatus::Running(ProcessId(0)) },
        );
        let pid = self.start_cell(id, 0, &initial, &from);
        Ok((id, pid))
    }

    fn start_cell(&mut self, pipeline: u64, index: usize, input: &Value, from: &LangId) -> ProcessId {
        let p = self.pipelines.get(&pipeline).expect("pipeline exists");
        let (language, code) = p.cells[index].clone();
        let it = convert(input, from, &language, &self.policy, &mut self.heap);
        let pid = self.spawn_frame(Frame::root(code, Scope::from_bindings([("it", it)])));
        self.processes.get_mut(&pid).expect("just spawned").pipeline = Some((pipeline, index));
        self.pipelines.get_mut(&pipeline).expect("pipeline exists").status = PipelineStatus::Running(pid);
        pid
    }

    pub(crate) fn advance_pipeline(
        &mut self,
        pipeline: u64,
        index: usize,
        pid: ProcessId,
        result: Result<Value, ExceptionValue>,
    ) {
        let Some(p) = self.pipelines.get(&pipeline) else { return };
        let language = p.cells[index].0.clone();
        let last = index + 1 == p.cells.len();
        match result {
            Err(exception) => {
                let error = exception.title();
                self.pipelines.get_mut(&pipeline).expect("pipeline exists").status =
                    PipelineStatus::Failed { index, exception };
                self.publish(VmEvent::PipelineCompleted { pipeline, pid, display: None, error: Some(error) });
            }
            Ok(value) => {
                let display = self.plugins.expect(&language).display(&value, &self.heap);
                let p = self.pipelines.get_mut(&pipeline).expect("pipeline exists");
                p.per_cell.push((index, value.clone(), display.clone()));
                self.publish(VmEvent::Cell { pipeline, pid, index, display: display.clone() });
                if last {
                    let p = self.pipelines.get_mut(&pipeline).expect("pipeline exists");
                    let per_cell = std::mem::take(&mut p.per_cell);
                    p.status = PipelineStatus::Completed(PipelineResult { per_cell, final_value: value });
                    self.publish(VmEvent::PipelineCompleted { pipeline, pid, display: Some(display), error: None });
                } else {
                    self.start_cell(pipeline, index + 1, &value, &language);
                }
            }
        }
    }

    pub fn pipeline_status(&self, pipeline: u64) -> Option<&PipelineStatus> {
        self.pipelines.get(&pipeline).map(|p| &p.status)
    }

    /// Ticks a started pipeline until it completes, fails or pauses on a trap.
    pub fn resume_pipeline(&mut self, pipeline: u64) -> Result<PipelineResult, PipelineStop> {
        loop {
            match self.pipeline_status(pipeline).cloned() {
                None => return Err(PipelineStop::Invalid(PipelineError::Empty)),
                Some(PipelineStatus::Completed(r)) => return Ok(r),
                Some(PipelineStatus::Failed { index, exception }) => {
                    return Err(PipelineStop::Failed { index, exception })
                }
                Some(PipelineStatus::Running(pid)) => {
                    if let Some(ProcessState::Suspended(_)) = self.run_until_settled(pid) {
                        let session = self.session_for(pid).expect("suspended process has a session");
                        return Err(PipelineStop::Paused { pipeline, session });
                    }
                }
            }
        }
    }

    /// Starts and runs a pipeline.
    pub fn run_pipeline(&mut self, cells: &[PipelineCell], initial: Value) -> Result<PipelineResult, PipelineStop> {
        let (id, _) = self.start_pipeline(cells, initial).map_err(PipelineStop::Invalid)?;
        self.resume_pipeline(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debug::Proceeded;
    use crate::plugin::ConversionPolicy;
    use crate::vm::VmConfig;

    #[test]
    fn parse_cells_and_skip_header() {
        let cells = parse_pipeline("header text\n--- minipy\n1 + 1\n--- minirb\nit * 2\n").unwrap();
        assert_eq!(cells, vec![PipelineCell::new("minipy", "1 + 1\n"), PipelineCell::new("minirb", "it * 2\n")]);
    }

    #[test]
    fn separator_needs_a_language() {
        assert_eq!(parse_pipeline("--- minipy\n1\n---\n2\n"), Err(PipelineFormatError::MissingLanguage(3)));
        assert_eq!(parse_pipeline("just text\n"), Err(PipelineFormatError::NoCells));
    }

    #[test]
    fn values_flow_between_languages() {
        let mut vm = Vm::default();
        let cells = [PipelineCell::new("minipy", "'A b C'"), PipelineCell::new("minirb", "it.downcase.split(\" \")")];
        let r = vm.run_pipeline(&cells, Value::Nil).unwrap();
        assert_eq!(r.per_cell[0].2, "'A b C'");
        assert_eq!(r.per_cell[1].2, "[\"a\", \"b\", \"c\"]");
        assert_eq!(r.final_value, Value::list(vec![Value::text("a"), Value::text("b"), Value::text("c")]));
    }

    #[test]
    fn single_cell_equals_plain_evaluation() {
        let mut vm = Vm::default();
        let r = vm.run_pipeline(&[PipelineCell::new("minipy", "[1, 2][1] * 5")], Value::Nil).unwrap();
        assert_eq!(r.final_value, Value::int(10));
        assert_eq!(r.per_cell.len(), 1);
    }

    #[test]
    fn cells_do_not_see_earlier_locals() {
        let mut vm = Vm::default();
        let cells = [PipelineCell::new("minipy", "secret = 5\nsecret"), PipelineCell::new("minipy", "secret")];
        let stop = vm.run_pipeline(&cells, Value::Nil).unwrap_err();
        let PipelineStop::Paused { session, .. } = stop else { panic!("expected a trap, got {:?}", stop) };
        assert_eq!(vm.session(session).unwrap().event.title, "NameError: name 'secret' is not defined");
    }

    #[test]
    fn compile_errors_name_the_cell() {
        let mut vm = Vm::default();
        let cells = [PipelineCell::new("minipy", "1"), PipelineCell::new("minirb", "def")];
        assert!(matches!(
            vm.start_pipeline(&cells, Value::Nil),
            Err(PipelineError::Compile { index: 1, .. })
        ));
        assert_eq!(vm.start_pipeline(&[], Value::Nil), Err(PipelineError::Empty));
        assert!(matches!(
            vm.start_pipeline(&[PipelineCell::new("cobol", "1")], Value::Nil),
            Err(PipelineError::UnknownLanguage { index: 0, .. })
        ));
    }

    #[test]
    fn trap_pauses_and_restart_completes() {
        let mut vm = Vm::default();
        let cells = [PipelineCell::new("minipy", "10"), PipelineCell::new("minirb", "it / 0"), PipelineCell::new("minipy", "it + 1")];
        let PipelineStop::Paused { pipeline, session } = vm.run_pipeline(&cells, Value::Nil).unwrap_err() else {
            panic!("expected a pause")
        };
        vm.restart(session, 0, Some("it / 2")).unwrap();
        assert_eq!(vm.proceed(session), Ok(Proceeded::Resumed));
        let r = vm.resume_pipeline(pipeline).unwrap();
        assert_eq!(r.final_value, Value::int(6));
    }

    #[test]
    fn proceeding_a_trapped_cell_fails_the_pipeline() {
        let mut vm = Vm::default();
        let cells = [PipelineCell::new("minirb", "1 / 0"), PipelineCell::new("minipy", "it")];
        let PipelineStop::Paused { pipeline, session } = vm.run_pipeline(&cells, Value::Nil).unwrap_err() else {
            panic!("expected a pause")
        };
        vm.proceed(session).unwrap();
        assert!(matches!(vm.resume_pipeline(pipeline), Err(PipelineStop::Failed { index: 0, .. })));
    }

    fn stack_object(vm: &mut Vm) -> Value {
        let src = "class Stack\n  def initialize\n    @items = []\n  end\n  def push(x)\n    @items.push(x)\n    self\n  end\n  def pop\n    @items.pop\n  end\nend\ns = Stack.new\ns.push(1).push(2).push(3)\ns\n";
        let pid = vm.spawn_process("minirb", src, []).unwrap();
        match vm.run_until_settled(pid) {
            Some(ProcessState::Terminated(Ok(v))) => v.clone(),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn cross_invoke_pops_a_foreign_stack() {
        let mut vm = Vm::default();
        let stack = stack_object(&mut vm);
        let py = LangId::new("minipy");
        assert_eq!(vm.cross_invoke(&stack, "pop", vec![], &py), Ok(Value::int(3)));
        assert_eq!(vm.cross_invoke(&stack, "pop", vec![], &py), Ok(Value::int(2)));
        let err = vm.cross_invoke(&stack, "peek", vec![], &py).unwrap_err();
        assert_eq!(&*err.class_name, "AttributeError");
    }

    #[test]
    fn cross_invoke_without_conversion_wraps_results() {
        let mut vm = Vm::new(VmConfig { policy: ConversionPolicy::wrap_everything(), ..VmConfig::default() });
        let stack = stack_object(&mut vm);
        let v = vm.cross_invoke(&stack, "pop", vec![], &LangId::new("minipy")).unwrap();
        assert!(matches!(v, Value::ForeignRef(_)), "{:?}", v);
    }
}
