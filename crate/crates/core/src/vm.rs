//! Green processes and the round-robin scheduler.
//!
//! The [`Vm`] lives on one thread. Other threads talk to it through a
//! [`VmHandle`], whose commands are drained at the start of every tick, and
//! hear back through [`VmEvent`] subscriptions.

use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bridge::Pipeline;
use crate::debug::{DebugEvent, DebugKind, DebugSession};
use crate::heap::{Heap, Scope};
use crate::kernel::{stack_view, ExceptionValue, ExecStack, Frame, Machine, StepOutcome};
use crate::plugin::{CompileError, ConversionPolicy, LanguagePlugin, PluginRegistry};
use crate::value::{LangId, Value};

pub const DEFAULT_QUANTUM: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u64);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProcessState {
    Runnable,
    Running,
    Suspended(DebugEvent),
    Blocked(Instant),
    Terminated(Result<Value, ExceptionValue>),
}

impl ProcessState {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessState::Runnable => "Runnable",
            ProcessState::Running => "Running",
            ProcessState::Suspended(_) => "Suspended",
            ProcessState::Blocked(_) => "Blocked",
            ProcessState::Terminated(_) => "Terminated",
        }
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self, ProcessState::Terminated(_))
    }
}

#[derive(Debug)]
pub struct GreenProcess {
    pub id: ProcessId,
    pub language: LangId,
    pub state: ProcessState,
    pub thread: ExecStack,
    /// Instructions executed so far.
    pub consumed: u64,
    pub transcript: String,
    pub(crate) pipeline: Option<(u64, usize)>,
}

impl GreenProcess {
    /// Line of the innermost frame, if any frames remain.
    pub fn current_line(&self) -> Option<u32> {
        self.thread.frames.last().map(|f| f.current_line(true))
    }

    pub fn result(&self) -> Option<&Result<Value, ExceptionValue>> {
        match &self.state {
            ProcessState::Terminated(r) => Some(r),
            _ => None,
        }
    }
}

/// What one quantum ended with.
#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Yielded,
    Completed(Value),
    Failed(ExceptionValue),
    Trapped(SessionId),
    Blocked(Instant),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickReport {
    pub drained: usize,
    pub ran: Option<(ProcessId, RunOutcome)>,
}

impl TickReport {
    pub fn is_idle(&self) -> bool {
        self.ran.is_none()
    }
}

/// Notifications for subscribers. Plain data so it can cross threads.
#[derive(Clone, Debug, PartialEq)]
pub enum VmEvent {
    Trap { session: SessionId, pid: ProcessId, title: String, interrupt: bool },
    Completed { pid: ProcessId, display: String, exception: Option<(String, String)>, transcript: String },
    Cell { pipeline: u64, pid: ProcessId, index: usize, display: String },
    PipelineCompleted { pipeline: u64, pid: ProcessId, display: Option<String>, error: Option<String> },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("unknown language '{0}'")]
    UnknownLanguage(String),
    #[error("compile error: {0}")]
    Compile(#[from] CompileError),
    #[error("no process {0}")]
    NoSuchProcess(ProcessId),
    #[error("process {0} is not runnable")]
    NotRunnable(ProcessId),
    #[error("process {0} cannot be interrupted")]
    NotInterruptible(ProcessId),
    #[error("invalid budget {0}; the quantum must be at least 1")]
    InvalidBudget(i64),
}

#[derive(Clone, Copy, Debug)]
pub struct VmConfig {
    pub quantum: u64,
    pub policy: ConversionPolicy,
    /// Cross-check operand stack depths against the verifier while running.
    pub check_depths: bool,
}

impl Default for VmConfig {
    fn default() -> Self {
        VmConfig { quantum: DEFAULT_QUANTUM, policy: ConversionPolicy::default(), check_depths: cfg!(debug_assertions) }
    }
}

pub type Command = Box<dyn FnOnce(&mut Vm) + Send>;

/// Thread-safe entry point into a running [`Vm`].
#[derive(Clone)]
pub struct VmHandle {
    tx: Sender<Command>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("the VM has stopped")]
pub struct VmGone;

impl VmHandle {
    pub fn submit(&self, command: impl FnOnce(&mut Vm) + Send + 'static) -> Result<(), VmGone> {
        self.tx.send(Box::new(command)).map_err(|_| VmGone)
    }

    /// Runs `f` on the VM lane and waits for its answer.
    pub fn call<R: Send + 'static>(&self, f: impl FnOnce(&mut Vm) -> R + Send + 'static) -> Result<R, VmGone> {
        let (tx, rx) = mpsc::channel();
        self.submit(move |vm| {
            let _ = tx.send(f(vm));
        })?;
        rx.recv().map_err(|_| VmGone)
    }

    /// Events published after the subscription is registered.
    pub fn subscribe(&self) -> Result<Receiver<VmEvent>, VmGone> {
        let (tx, rx) = mpsc::channel();
        self.call(move |vm| vm.subscribers.push(tx))?;
        Ok(rx)
    }

    pub fn shutdown(&self) {
        let _ = self.submit(|vm| vm.stopping = true);
    }
}

pub struct Vm {
    pub heap: Heap,
    pub plugins: PluginRegistry,
    pub policy: ConversionPolicy,
    pub check_depths: bool,
    quantum: u64,
    pub(crate) processes: BTreeMap<ProcessId, GreenProcess>,
    pub(crate) sessions: BTreeMap<SessionId, DebugSession>,
    pub(crate) pipelines: BTreeMap<u64, Pipeline>,
    next_pid: u64,
    next_session: u64,
    pub(crate) next_pipeline: u64,
    last_run: Option<ProcessId>,
    subscribers: Vec<Sender<VmEvent>>,
    tx: Sender<Command>,
    rx: Receiver<Command>,
    stopping: bool,
}

impl Default for Vm {
    fn default() -> Self {
        Vm::new(VmConfig::default())
    }
}

impl Vm {
    pub fn new(config: VmConfig) -> Self {
        let (tx, rx) = mpsc::channel();
        Vm {
            heap: Heap::new(),
            plugins: PluginRegistry::with_defaults(),
            policy: config.policy,
            check_depths: config.check_depths,
            quantum: config.quantum.max(1),
            processes: BTreeMap::new(),
            sessions: BTreeMap::new(),
            pipelines: BTreeMap::new(),
            next_pid: 1,
            next_session: 1,
            next_pipeline: 1,
            last_run: None,
            subscribers: Vec::new(),
            tx,
            rx,
            stopping: false,
        }
    }

    /// Starts a VM on its own thread.
    pub fn spawn_thread(config: VmConfig) -> (VmHandle, JoinHandle<()>) {
        let (handle_tx, handle_rx) = mpsc::channel();
        let join = std::thread::Builder::new()
            .name("polyvm".into())
            .spawn(move || {
                let mut vm = Vm::new(config);
                let _ = handle_tx.send(vm.handle());
                vm.serve();
            })
            .expect("spawn VM thread");
        let handle = handle_rx.recv().expect("VM thread starts");
        (handle, join)
    }

    pub fn handle(&self) -> VmHandle {
        VmHandle { tx: self.tx.clone() }
    }

    pub fn subscribe(&mut self) -> Receiver<VmEvent> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.push(tx);
        rx
    }

    pub(crate) fn publish(&mut self, event: VmEvent) {
        self.subscribers.retain(|s| s.send(event.clone()).is_ok());
    }

    pub fn quantum(&self) -> u64 {
        self.quantum
    }

    /// Sets the quantum for later slices and returns the previous one.
    pub fn set_budget(&mut self, quantum: i64) -> Result<u64, VmError> {
        if quantum < 1 {
            return Err(VmError::InvalidBudget(quantum));
        }
        Ok(std::mem::replace(&mut self.quantum, quantum as u64))
    }

    pub fn plugin(&self, language: &str) -> Result<&dyn LanguagePlugin, VmError> {
        self.plugins.lookup(language).ok_or_else(|| VmError::UnknownLanguage(language.to_string()))
    }

    pub fn process(&self, pid: ProcessId) -> Option<&GreenProcess> {
        self.processes.get(&pid)
    }

    pub fn processes(&self) -> impl Iterator<Item = &GreenProcess> {
        self.processes.values()
    }

    pub fn state(&self, pid: ProcessId) -> Option<&ProcessState> {
        self.processes.get(&pid).map(|p| &p.state)
    }

    pub fn spawn_process<'a>(
        &mut self,
        language: &str,
        source: &str,
        bindings: impl IntoIterator<Item = (&'a str, Value)>,
    ) -> Result<ProcessId, VmError> {
        self.spawn_with_scope(language, source, Scope::from_bindings(bindings))
    }

    /// Like [`Vm::spawn_process`], but the root frame's locals are `scope`
    /// itself, so definitions outlive the process.
    pub fn spawn_with_scope(&mut self, language: &str, source: &str, scope: Scope) -> Result<ProcessId, VmError> {
        let code = Rc::new(self.plugin(language)?.compile(source)?);
        Ok(self.spawn_frame(Frame::root(code, scope)))
    }

    pub(crate) fn spawn_frame(&mut self, root: Frame) -> ProcessId {
        let pid = ProcessId(self.next_pid);
        self.next_pid += 1;
        let process = GreenProcess {
            id: pid,
            language: root.language.clone(),
            state: ProcessState::Runnable,
            thread: ExecStack::new(root),
            consumed: 0,
            transcript: String::new(),
            pipeline: None,
        };
        self.processes.insert(pid, process);
        pid
    }

    /// Suspends a runnable or sleeping process at its current instruction
    /// boundary and opens a session on it.
    pub fn interrupt(&mut self, pid: ProcessId) -> Result<SessionId, VmError> {
        let p = self.processes.get(&pid).ok_or(VmError::NoSuchProcess(pid))?;
        if !matches!(p.state, ProcessState::Runnable | ProcessState::Blocked(_)) {
            return Err(VmError::NotInterruptible(pid));
        }
        Ok(self.open_session(pid, DebugKind::UserInterrupt))
    }

    pub(crate) fn open_session(&mut self, pid: ProcessId, kind: DebugKind) -> SessionId {
        let process = self.processes.get_mut(&pid).expect("session on a live process");
        let title = match &kind {
            DebugKind::UnhandledException(e) => e.title(),
            DebugKind::UserInterrupt => "User Interrupt".to_string(),
        };
        let event = DebugEvent { kind, pid, stack: stack_view(&process.thread.frames, &self.plugins), title };
        process.state = ProcessState::Suspended(event.clone());
        let id = SessionId(self.next_session);
        self.next_session += 1;
        let interrupt = matches!(event.kind, DebugKind::UserInterrupt);
        let title = event.title.clone();
        self.sessions.insert(id, DebugSession::new(id, event));
        self.publish(VmEvent::Trap { session: id, pid, title, interrupt });
        id
    }

    /// Executes every queued command, returning how many ran.
    pub fn drain_commands(&mut self) -> usize {
        let mut n = 0;
        while let Ok(command) = self.rx.try_recv() {
            command(self);
            n += 1;
        }
        n
    }

    /// Drains commands, wakes sleepers, then gives the next runnable process
    /// one quantum.
    pub fn tick(&mut self) -> TickReport {
        let drained = self.drain_commands();
        let now = Instant::now();
        for p in self.processes.values_mut() {
            if matches!(p.state, ProcessState::Blocked(until) if until <= now) {
                p.state = ProcessState::Runnable;
            }
        }
        let next = self.next_runnable();
        let ran = next.map(|pid| {
            self.last_run = Some(pid);
            let outcome = self.run_quantum(pid).expect("chosen process is runnable");
            (pid, outcome)
        });
        TickReport { drained, ran }
    }

    fn next_runnable(&self) -> Option<ProcessId> {
        let runnable = |p: &&GreenProcess| matches!(p.state, ProcessState::Runnable);
        let after = self.last_run.map(|p| p.0 + 1).unwrap_or(0);
        self.processes
            .range(ProcessId(after)..)
            .map(|(_, p)| p)
            .find(runnable)
            .or_else(|| self.processes.values().find(runnable))
            .map(|p| p.id)
    }

    /// Runs one quantum of `pid`.
    pub fn run_quantum(&mut self, pid: ProcessId) -> Result<RunOutcome, VmError> {
        let budget = self.quantum;
        self.run_slice(pid, budget)
    }

    pub(crate) fn run_slice(&mut self, pid: ProcessId, budget: u64) -> Result<RunOutcome, VmError> {
        let Vm { heap, plugins, processes, policy, check_depths, .. } = self;
        let process = processes.get_mut(&pid).ok_or(VmError::NoSuchProcess(pid))?;
        if process.state != ProcessState::Runnable {
            return Err(VmError::NotRunnable(pid));
        }
        process.state = ProcessState::Running;
        let mut machine =
            Machine { heap, plugins, transcript: &mut process.transcript, policy: *policy, check_depths: *check_depths };
        let result = machine.step(&mut process.thread, budget);
        let outcome = match result {
            Ok(r) => {
                process.consumed += r.executed;
                r.outcome
            }
            Err(fault) => {
                log::error!("process {}: {}", pid, fault);
                StepOutcome::Failed(ExceptionValue::new("InternalError", fault.0))
            }
        };
        Ok(self.settle(pid, outcome))
    }

    /// Applies a kernel outcome to the process state.
    pub(crate) fn settle(&mut self, pid: ProcessId, outcome: StepOutcome) -> RunOutcome {
        match outcome {
            StepOutcome::Yielded => {
                self.set_state(pid, ProcessState::Runnable);
                RunOutcome::Yielded
            }
            StepOutcome::Blocked(until) => {
                self.set_state(pid, ProcessState::Blocked(until));
                RunOutcome::Blocked(until)
            }
            StepOutcome::Trapped(e) => RunOutcome::Trapped(self.open_session(pid, DebugKind::UnhandledException(e))),
            StepOutcome::Completed(v) => {
                self.finish(pid, Ok(v.clone()));
                RunOutcome::Completed(v)
            }
            StepOutcome::Failed(e) => {
                self.finish(pid, Err(e.clone()));
                RunOutcome::Failed(e)
            }
        }
    }

    fn set_state(&mut self, pid: ProcessId, state: ProcessState) {
        if let Some(p) = self.processes.get_mut(&pid) {
            p.state = state;
        }
    }

    /// Display text of a process result in the process's language.
    pub fn result_display(&self, language: &LangId, result: &Result<Value, ExceptionValue>) -> String {
        match result {
            Ok(v) => self.plugins.expect(language).display(v, &self.heap),
            Err(e) => e.title(),
        }
    }

    pub(crate) fn finish(&mut self, pid: ProcessId, result: Result<Value, ExceptionValue>) {
        let Some(p) = self.processes.get_mut(&pid) else { return };
        p.thread.frames.clear();
        p.state = ProcessState::Terminated(result.clone());
        let language = p.language.clone();
        let transcript = p.transcript.clone();
        let pipeline = p.pipeline;
        for s in self.sessions.values_mut().filter(|s| s.event.pid == pid) {
            s.open = false;
        }
        let display = self.result_display(&language, &result);
        let exception = result.as_ref().err().map(|e| (e.class_name.to_string(), e.message.to_string()));
        self.publish(VmEvent::Completed { pid, display, exception, transcript });
        if let Some((pipeline, index)) = pipeline {
            self.advance_pipeline(pipeline, index, pid, result);
        }
    }

    fn has_pending_work(&self) -> bool {
        self.processes.values().any(|p| matches!(p.state, ProcessState::Runnable | ProcessState::Blocked(_)))
    }

    fn earliest_wake(&self) -> Option<Instant> {
        self.processes
            .values()
            .filter_map(|p| match p.state {
                ProcessState::Blocked(t) => Some(t),
                _ => None,
            })
            .min()
    }

    /// Ticks until `pid` is terminated or suspended, sleeping when every
    /// process is blocked. Other processes keep their turns.
    pub fn run_until_settled(&mut self, pid: ProcessId) -> Option<&ProcessState> {
        loop {
            match self.processes.get(&pid).map(|p| &p.state) {
                None => return None,
                Some(ProcessState::Terminated(_) | ProcessState::Suspended(_)) => break,
                _ => {}
            }
            if self.tick().is_idle() {
                self.sleep_until_wake();
            }
        }
        self.state(pid)
    }

    /// Ticks until no process can make progress on its own.
    pub fn run_all(&mut self) {
        while self.has_pending_work() {
            if self.tick().is_idle() {
                self.sleep_until_wake();
            }
        }
    }

    fn sleep_until_wake(&self) {
        if let Some(t) = self.earliest_wake() {
            let now = Instant::now();
            if t > now {
                std::thread::sleep(t - now);
            }
        }
    }

    /// Scheduler loop for a VM on its own thread. Returns after
    /// [`VmHandle::shutdown`].
    pub fn serve(&mut self) {
        while !self.stopping {
            if !self.tick().is_idle() {
                continue;
            }
            let wait = self
                .earliest_wake()
                .map(|t| t.saturating_duration_since(Instant::now()))
                .unwrap_or(Duration::from_millis(200))
                .min(Duration::from_millis(200));
            match self.rx.recv_timeout(wait) {
                Ok(command) => command(self),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
    }

    /// Synchronously evaluates `source` with `it` bound, on a scratch stack.
    /// Output is discarded.
    pub fn evaluate(&mut self, language: &str, source: &str, it: Value) -> Result<Value, crate::debug::DebugError> {
        let plugin = self.plugin(language).map_err(|_| crate::debug::DebugError::UnknownLanguage(language.into()))?;
        let code = Rc::new(plugin.compile(source)?);
        let mut thread = ExecStack::new(Frame::root(code, Scope::from_bindings([("it", it)])));
        let mut transcript = String::new();
        let mut machine = Machine {
            heap: &mut self.heap,
            plugins: &self.plugins,
            transcript: &mut transcript,
            policy: self.policy,
            check_depths: self.check_depths,
        };
        machine.run_to_end(&mut thread, EVAL_LIMIT).map_err(crate::debug::DebugError::Raised)
    }
}

/// Instruction cap for synchronous host-side evaluations.
pub const EVAL_LIMIT: u64 = 10_000_000;
