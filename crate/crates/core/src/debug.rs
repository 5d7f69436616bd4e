//! Debug sessions over suspended processes: proceed, restart, step and
//! evaluate in a frame.

use std::rc::Rc;

use thiserror::Error;

use crate::kernel::{
    frame_position, restart_frame, scratch_frame, stack_view, ExceptionValue, ExecStack, FrameView, Machine,
    RestartError, StepOutcome,
};
use crate::lang::compiler::CompileContext;
use crate::plugin::CompileError;
use crate::value::Value;
use crate::vm::{ProcessId, ProcessState, SessionId, Vm, EVAL_LIMIT};

/// Cap on instructions a single step may run.
const STEP_LIMIT: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum DebugKind {
    UnhandledException(ExceptionValue),
    UserInterrupt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebugEvent {
    pub kind: DebugKind,
    pub pid: ProcessId,
    /// Top first.
    pub stack: Vec<FrameView>,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebugSession {
    pub id: SessionId,
    pub event: DebugEvent,
    pub selected_frame: usize,
    pub open: bool,
    /// False while an unhandled exception is pending.
    resumable: bool,
}

impl DebugSession {
    pub(crate) fn new(id: SessionId, event: DebugEvent) -> Self {
        let resumable = matches!(event.kind, DebugKind::UserInterrupt);
        DebugSession { id, event, selected_frame: 0, open: true, resumable }
    }

    /// Whether proceeding continues execution rather than unwinding a
    /// pending exception.
    pub fn is_resumable(&self) -> bool {
        self.resumable
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DebugError {
    #[error("no session {0}")]
    NoSuchSession(SessionId),
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error("an exception is pending; restart a frame or proceed")]
    NotSteppable,
    #[error("no frame at index {0}")]
    BadIndex(usize),
    #[error("unknown language '{0}'")]
    UnknownLanguage(String),
    #[error(transparent)]
    Restart(RestartError),
    #[error("compile error: {0}")]
    Compile(#[from] CompileError),
    #[error("{}", .0.title())]
    Raised(ExceptionValue),
}

impl From<RestartError> for DebugError {
    fn from(e: RestartError) -> Self {
        match e {
            RestartError::Compile(c) => DebugError::Compile(c),
            RestartError::BadIndex(i) => DebugError::BadIndex(i),
            other => DebugError::Restart(other),
        }
    }
}

/// What proceeding led to right away.
#[derive(Clone, Debug, PartialEq)]
pub enum Proceeded {
    /// The process is runnable again.
    Resumed,
    /// Unwinding finished and the process ended with this result.
    Terminated(Result<Value, ExceptionValue>),
}

impl Vm {
    pub fn session(&self, id: SessionId) -> Result<&DebugSession, DebugError> {
        self.sessions.get(&id).ok_or(DebugError::NoSuchSession(id))
    }

    pub fn sessions(&self) -> impl Iterator<Item = &DebugSession> {
        self.sessions.values()
    }

    /// Open session on `pid`, if one exists.
    pub fn session_for(&self, pid: ProcessId) -> Option<SessionId> {
        self.sessions.values().find(|s| s.open && s.event.pid == pid).map(|s| s.id)
    }

    fn open(&self, id: SessionId) -> Result<ProcessId, DebugError> {
        let s = self.session(id)?;
        if !s.open {
            return Err(DebugError::SessionClosed(id));
        }
        Ok(s.event.pid)
    }

    /// Current stack of the session's process, top first.
    pub fn session_stack(&self, id: SessionId) -> Result<Vec<FrameView>, DebugError> {
        let pid = self.open(id)?;
        Ok(stack_view(&self.processes[&pid].thread.frames, &self.plugins))
    }

    pub fn session_frame(&self, id: SessionId, index: usize) -> Result<FrameView, DebugError> {
        self.session_stack(id)?.into_iter().nth(index).ok_or(DebugError::BadIndex(index))
    }

    fn refresh(&mut self, id: SessionId) -> Vec<FrameView> {
        let pid = self.sessions[&id].event.pid;
        let stack = stack_view(&self.processes[&pid].thread.frames, &self.plugins);
        let session = self.sessions.get_mut(&id).expect("session exists");
        session.event.stack = stack.clone();
        if let Some(p) = self.processes.get_mut(&pid) {
            if matches!(p.state, ProcessState::Suspended(_)) {
                p.state = ProcessState::Suspended(session.event.clone());
            }
        }
        stack
    }

    /// Closes the session. An interrupted process resumes where it stopped;
    /// a pending exception unwinds now, running ensure blocks, and becomes
    /// the process result.
    pub fn proceed(&mut self, id: SessionId) -> Result<Proceeded, DebugError> {
        let pid = self.open(id)?;
        let session = self.sessions.get_mut(&id).expect("session exists");
        session.open = false;
        let pending = match (&session.event.kind, session.resumable) {
            (DebugKind::UnhandledException(e), false) => Some(e.clone()),
            _ => None,
        };
        let process = self.processes.get_mut(&pid).expect("session process exists");
        process.state = ProcessState::Runnable;
        let Some(exc) = pending else { return Ok(Proceeded::Resumed) };
        let mut machine = Machine {
            heap: &mut self.heap,
            plugins: &self.plugins,
            transcript: &mut process.transcript,
            policy: self.policy,
            check_depths: self.check_depths,
        };
        match machine.begin_termination(&mut process.thread, exc) {
            None => Ok(Proceeded::Resumed),
            Some(outcome) => {
                self.settle(pid, outcome);
                Ok(Proceeded::Terminated(self.processes[&pid].result().cloned().expect("terminated")))
            }
        }
    }

    /// Replaces the frame at `index` with a fresh activation, optionally of
    /// edited code, discarding the frames above it. The restarted frame
    /// becomes the selected one and the session becomes resumable.
    pub fn restart(&mut self, id: SessionId, index: usize, new_source: Option<&str>) -> Result<Vec<FrameView>, DebugError> {
        let pid = self.open(id)?;
        let process = self.processes.get_mut(&pid).expect("session process exists");
        restart_frame(&mut process.thread.frames, index, new_source, &self.plugins, &mut self.heap)?;
        process.thread.terminating = false;
        let session = self.sessions.get_mut(&id).expect("session exists");
        session.resumable = true;
        session.selected_frame = 0;
        Ok(self.refresh(id))
    }

    /// Runs the selected frame until its line changes or it returns, without
    /// letting other processes run.
    pub fn step_over(&mut self, id: SessionId) -> Result<Vec<FrameView>, DebugError> {
        let pid = self.open(id)?;
        let session = &self.sessions[&id];
        if !session.resumable {
            return Err(DebugError::NotSteppable);
        }
        let frames = &self.processes[&pid].thread.frames;
        let pos = frame_position(frames, session.selected_frame).ok_or(DebugError::BadIndex(session.selected_frame))?;
        let start_line = frames[pos].current_line(pos + 1 == frames.len());

        let process = self.processes.get_mut(&pid).expect("session process exists");
        let mut machine = Machine {
            heap: &mut self.heap,
            plugins: &self.plugins,
            transcript: &mut process.transcript,
            policy: self.policy,
            check_depths: self.check_depths,
        };
        let mut finished = None;
        for _ in 0..STEP_LIMIT {
            let r = match machine.step(&mut process.thread, 1) {
                Ok(r) => r,
                Err(fault) => {
                    finished = Some(StepOutcome::Failed(ExceptionValue::new("InternalError", fault.0)));
                    break;
                }
            };
            process.consumed += r.executed;
            match r.outcome {
                StepOutcome::Yielded | StepOutcome::Blocked(_) => {}
                other => {
                    finished = Some(other);
                    break;
                }
            }
            let frames = &process.thread.frames;
            if frames.len() <= pos {
                break;
            }
            if frames.len() == pos + 1 && frames[pos].current_line(true) != start_line {
                break;
            }
        }
        match finished {
            Some(StepOutcome::Trapped(e)) => {
                let session = self.sessions.get_mut(&id).expect("session exists");
                session.event.title = e.title();
                session.event.kind = DebugKind::UnhandledException(e);
                session.resumable = false;
                session.selected_frame = 0;
                Ok(self.refresh(id))
            }
            Some(done) => {
                self.settle(pid, done);
                Ok(Vec::new())
            }
            None => {
                let len = self.processes[&pid].thread.frames.len();
                let session = self.sessions.get_mut(&id).expect("session exists");
                session.selected_frame = if len > pos { len - 1 - pos } else { 0 };
                Ok(self.refresh(id))
            }
        }
    }

    /// Evaluates `source` against the variables of the frame at `index`.
    /// Assignments land in that frame; the process stays suspended.
    pub fn evaluate_in_frame(&mut self, id: SessionId, index: usize, source: &str) -> Result<Value, DebugError> {
        let pid = self.open(id)?;
        let process = self.processes.get_mut(&pid).expect("session process exists");
        let pos = frame_position(&process.thread.frames, index).ok_or(DebugError::BadIndex(index))?;
        let context = &process.thread.frames[pos];
        let plugin = self.plugins.expect(&context.language);
        let code = Rc::new(plugin.compile_with(source, CompileContext { in_method: context.self_object.is_some() })?);
        let mut scratch = ExecStack::new(scratch_frame(code, context));
        let mut machine = Machine {
            heap: &mut self.heap,
            plugins: &self.plugins,
            transcript: &mut process.transcript,
            policy: self.policy,
            check_depths: self.check_depths,
        };
        let result = machine.run_to_end(&mut scratch, EVAL_LIMIT).map_err(DebugError::Raised);
        self.refresh(id);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{ProcessState, RunOutcome};

    const AVERAGE: &str = "def average(iterable):\n    return sum(iterable) / len(iterable)\n\ndef sum(xs):\n    total = 0\n    for x in xs:\n        total = total + x\n    return total\n\naverage([])\n";

    fn trap(vm: &mut Vm, lang: &str, src: &str) -> SessionId {
        let pid = vm.spawn_process(lang, src, []).unwrap();
        vm.run_until_settled(pid);
        vm.session_for(pid).expect("trapped")
    }

    #[test]
    fn exception_trap_keeps_the_raising_frame() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        let session = vm.session(s).unwrap();
        assert_eq!(session.event.title, "ZeroDivisionError: integer division by zero");
        assert_eq!(session.event.stack[0].display_name, "average");
        assert_eq!(session.event.stack[1].display_name, "<string>");
        assert_eq!(session.selected_frame, 0);
    }

    #[test]
    fn proceed_after_exception_terminates_with_it() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        match vm.proceed(s).unwrap() {
            Proceeded::Terminated(Err(e)) => assert_eq!(&*e.class_name, "ZeroDivisionError"),
            other => panic!("unexpected {:?}", other),
        }
        assert_eq!(vm.proceed(s), Err(DebugError::SessionClosed(s)));
    }

    #[test]
    fn proceed_runs_ensure_blocks() {
        let mut vm = Vm::default();
        let src = "def f\n  begin\n    1 / 0\n  ensure\n    puts \"cleanup\"\n  end\nend\nf\n";
        let s = trap(&mut vm, "minirb", src);
        let pid = vm.session(s).unwrap().event.pid;
        assert_eq!(vm.process(pid).unwrap().transcript, "");
        vm.proceed(s).unwrap();
        vm.run_until_settled(pid);
        let p = vm.process(pid).unwrap();
        assert_eq!(p.transcript, "cleanup\n");
        assert!(matches!(p.result(), Some(Err(e)) if &*e.class_name == "ZeroDivisionError"));
    }

    #[test]
    fn restart_with_edit_then_proceed() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        let fixed = "def average(iterable):\n    if len(iterable) == 0:\n        return 0\n    return sum(iterable) / len(iterable)\n";
        let stack = vm.restart(s, 0, Some(fixed)).unwrap();
        assert_eq!(stack[0].display_name, "average");
        assert!(vm.session(s).unwrap().open);
        let pid = vm.session(s).unwrap().event.pid;
        assert_eq!(vm.proceed(s), Ok(Proceeded::Resumed));
        assert_eq!(vm.run_until_settled(pid), Some(&ProcessState::Terminated(Ok(Value::int(0)))));
    }

    #[test]
    fn bad_edit_leaves_session_intact() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        let before = vm.session_stack(s).unwrap();
        assert!(matches!(vm.restart(s, 0, Some("def average(:\n")), Err(DebugError::Compile(_))));
        assert_eq!(vm.session_stack(s).unwrap(), before);
        assert!(!vm.session(s).unwrap().is_resumable());
    }

    #[test]
    fn unchanged_restart_traps_again() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        let pid = vm.session(s).unwrap().event.pid;
        vm.restart(s, 0, None).unwrap();
        vm.proceed(s).unwrap();
        vm.run_until_settled(pid);
        let again = vm.session_for(pid).unwrap();
        assert_ne!(again, s);
        assert_eq!(vm.session(again).unwrap().event.title, "ZeroDivisionError: integer division by zero");
    }

    #[test]
    fn step_over_needs_a_resumable_session() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        assert_eq!(vm.step_over(s), Err(DebugError::NotSteppable));
    }

    fn interrupted_at_start(vm: &mut Vm, lang: &str, src: &str) -> SessionId {
        let pid = vm.spawn_process(lang, src, []).unwrap();
        vm.interrupt(pid).unwrap()
    }

    #[test]
    fn step_over_walks_lines() {
        let mut vm = Vm::default();
        let s = interrupted_at_start(&mut vm, "minipy", "x = 1\ny = x + 1\ny\n");
        assert_eq!(vm.session(s).unwrap().event.title, "User Interrupt");
        let stack = vm.step_over(s).unwrap();
        assert_eq!(stack[0].line, 2);
        assert!(stack[0].locals.contains(&("x".to_string(), Value::int(1))));
    }

    #[test]
    fn step_out_of_a_frame_selects_the_caller() {
        let mut vm = Vm::default();
        let src = "def f():\n    return 5\n\nf()\n";
        let pid = vm.spawn_process("minipy", src, []).unwrap();
        vm.set_budget(1).unwrap();
        while vm.process(pid).unwrap().thread.frames.len() < 2 {
            assert_eq!(vm.run_quantum(pid), Ok(RunOutcome::Yielded));
        }
        let s = vm.interrupt(pid).unwrap();
        let stack = vm.step_over(s).unwrap();
        assert_eq!(stack.len(), 1);
        assert_eq!(vm.session(s).unwrap().selected_frame, 0);
    }

    #[test]
    fn interrupt_then_proceed_matches_a_plain_run() {
        let src = "total = 0\nfor i in range(500):\n    total = total + i\ntotal\n";
        let mut plain = Vm::default();
        let p = plain.spawn_process("minipy", src, []).unwrap();
        let expected = plain.run_until_settled(p).cloned();

        let mut vm = Vm::default();
        vm.set_budget(37).unwrap();
        let pid = vm.spawn_process("minipy", src, []).unwrap();
        vm.tick();
        let s = vm.interrupt(pid).unwrap();
        assert_eq!(vm.proceed(s), Ok(Proceeded::Resumed));
        assert_eq!(vm.run_until_settled(pid).cloned(), expected);
    }

    #[test]
    fn evaluate_sees_and_writes_frame_locals() {
        let mut vm = Vm::default();
        let s = trap(&mut vm, "minipy", AVERAGE);
        assert_eq!(vm.evaluate_in_frame(s, 0, "len(iterable)"), Ok(Value::int(0)));
        vm.evaluate_in_frame(s, 0, "probe = 9").unwrap();
        let top = vm.session_frame(s, 0).unwrap();
        assert!(top.locals.contains(&("probe".to_string(), Value::int(9))));
        assert!(matches!(vm.evaluate_in_frame(s, 0, "1/0"), Err(DebugError::Raised(_))));
        assert!(matches!(vm.evaluate_in_frame(s, 7, "1"), Err(DebugError::BadIndex(7))));
        assert!(vm.session(s).unwrap().open);
    }

    #[test]
    fn evaluate_inside_a_method_sees_the_receiver() {
        let mut vm = Vm::default();
        let src = "class Box\n  def initialize(v)\n    @v = v\n  end\n  def boom\n    @v / 0\n  end\nend\nBox.new(4).boom\n";
        let s = trap(&mut vm, "minirb", src);
        assert_eq!(vm.evaluate_in_frame(s, 0, "@v + 1"), Ok(Value::int(5)));
    }

    #[test]
    fn sessions_are_isolated() {
        let mut vm = Vm::default();
        let a = trap(&mut vm, "minipy", AVERAGE);
        let b = trap(&mut vm, "minirb", "1 / 0");
        let b_pid = vm.session(b).unwrap().event.pid;
        let before = vm.process(b_pid).unwrap().thread.frames.len();
        vm.proceed(a).unwrap();
        assert!(vm.session(b).unwrap().open);
        assert_eq!(vm.process(b_pid).unwrap().thread.frames.len(), before);
        assert_eq!(vm.session(b).unwrap().event.title, "ZeroDivisionError: integer division by zero");
    }
}
