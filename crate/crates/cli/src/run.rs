//! Headless runs of source and pipeline files. Traps are proceeded
//! automatically so a batch run never waits on a debugger.

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::sync::mpsc::Receiver;

use polyvm_core::bridge::{parse_pipeline, PipelineError, PipelineStop};
use polyvm_core::debug::DebugKind;
use polyvm_core::kernel::{ExceptionValue, FrameView};
use polyvm_core::value::Value;
use polyvm_core::vm::{ProcessState, VmConfig};
use polyvm_core::{ProcessId, Vm, VmEvent};

use crate::USAGE_ERROR;

fn read(path: &Path) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(USAGE_ERROR)
    })
}

/// Plain-text stack, innermost first.
pub fn format_stack(stack: &[FrameView]) -> String {
    stack.iter().map(|f| format!("  in {} ({}) at line {}\n", f.display_name, f.language, f.line)).collect()
}

pub fn report_unhandled(e: &ExceptionValue, stack: &[FrameView]) {
    eprint!("UNHANDLED {}\n{}", e.title(), format_stack(stack));
}

/// Runs `pid` to the end, proceeding through every trap. Also returns the
/// stack at the first unhandled-exception trap.
pub fn run_headless(vm: &mut Vm, pid: ProcessId) -> (Result<Value, ExceptionValue>, Vec<FrameView>) {
    let mut stack = Vec::new();
    loop {
        match vm.run_until_settled(pid).cloned() {
            Some(ProcessState::Terminated(result)) => return (result, stack),
            Some(ProcessState::Suspended(event)) => {
                if stack.is_empty() && matches!(event.kind, DebugKind::UnhandledException(_)) {
                    stack = event.stack;
                }
                let session = vm.session_for(pid).expect("suspended process has a session");
                vm.proceed(session).expect("an open session proceeds");
            }
            other => unreachable!("settled process in state {other:?}"),
        }
    }
}

pub fn run_file(path: &Path, lang: Option<&str>, config: VmConfig) -> ExitCode {
    let source = match read(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let mut vm = Vm::new(config);
    let language = match lang {
        Some(id) => vm.plugins.lookup(id).map(|p| p.id().clone()),
        None => path.extension().and_then(|e| e.to_str()).and_then(|e| vm.plugins.by_extension(e)).map(|p| p.id().clone()),
    };
    let Some(language) = language else {
        eprintln!("error: cannot tell the language of {}; pass --lang", path.display());
        return ExitCode::from(USAGE_ERROR);
    };
    let pid = match vm.spawn_process(language.as_str(), &source, []) {
        Ok(pid) => pid,
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    let (result, stack) = run_headless(&mut vm, pid);
    print!("{}", vm.process(pid).map(|p| p.transcript.as_str()).unwrap_or(""));
    let _ = std::io::stdout().flush();
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            report_unhandled(&e, &stack);
            ExitCode::FAILURE
        }
    }
}

fn print_events(events: &Receiver<VmEvent>) {
    for event in events.try_iter() {
        match event {
            VmEvent::Completed { transcript, .. } => print!("{transcript}"),
            VmEvent::Cell { index, display, .. } => println!("cell {}: {display}", index + 1),
            _ => {}
        }
    }
}

pub fn run_pipeline_file(path: &Path, config: VmConfig) -> ExitCode {
    let text = match read(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cells = match parse_pipeline(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let mut vm = Vm::new(config);
    let events = vm.subscribe();
    let pipeline = match vm.start_pipeline(&cells, Value::Nil) {
        Ok((id, _)) => id,
        Err(e @ PipelineError::Compile { .. }) => {
            eprintln!("{}: {e}", path.display());
            return ExitCode::FAILURE;
        }
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(USAGE_ERROR);
        }
    };
    let mut stack = Vec::new();
    let outcome = loop {
        let step = vm.resume_pipeline(pipeline);
        print_events(&events);
        match step {
            Err(PipelineStop::Paused { session, .. }) => {
                let trap = vm.session(session).expect("paused on a live session").event.clone();
                if stack.is_empty() && matches!(trap.kind, DebugKind::UnhandledException(_)) {
                    stack = trap.stack;
                }
                vm.proceed(session).expect("an open session proceeds");
            }
            other => break other,
        }
    };
    print_events(&events);
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(result) => {
            let display = result.per_cell.last().map(|(_, _, d)| d.as_str()).unwrap_or("");
            println!("result: {display}");
            ExitCode::SUCCESS
        }
        Err(PipelineStop::Failed { index, exception }) => {
            report_unhandled(&exception, &stack);
            eprintln!("  in cell {}", index + 1);
            ExitCode::FAILURE
        }
        Err(other) => {
            eprintln!("error: pipeline stopped: {other:?}");
            ExitCode::FAILURE
        }
    }
}
