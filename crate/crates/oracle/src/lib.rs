//! Reference evaluator, program generator and observation helpers used by
//! the polyvm test suites.

pub mod eval;
pub mod gen;

use polyvm_core::plugin::PluginRegistry;
use polyvm_core::vm::{ProcessState, Vm, VmConfig};

pub use eval::{Evaluator, Failure};
pub use gen::{generate, GenConfig, Generated, Lang};

/// What running a program showed from the outside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    /// Display text of the result in the program's language.
    Value(String),
    Exception { class: String, message: String },
    CompileError(String),
    /// The reference evaluator gave up (fuel, recursion or an unsupported
    /// builtin); such programs are skipped.
    Inconclusive(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observation {
    pub outcome: Outcome,
    pub transcript: String,
}

/// Runs `source` on the reference evaluator.
pub fn observe_oracle(lang: &str, source: &str, fuel: u64) -> Observation {
    let plugins = PluginRegistry::with_defaults();
    let plugin = plugins.lookup(lang).unwrap_or_else(|| panic!("unknown language {}", lang));
    if let Err(e) = plugin.compile(source) {
        return Observation { outcome: Outcome::CompileError(e.to_string()), transcript: String::new() };
    }
    let program = match lang {
        "minipy" => polyvm_core::lang::minipy::parse(source),
        _ => polyvm_core::lang::minirb::parse(source),
    }
    .expect("compiled programs parse");
    let mut ev = Evaluator::new(plugin, fuel);
    let outcome = match ev.run(&program, Vec::new()) {
        Ok(v) => Outcome::Value(plugin.display(&v, &ev.heap)),
        Err(Failure::Raised(e)) => Outcome::Exception { class: e.class_name.to_string(), message: e.message.to_string() },
        Err(Failure::Exhausted) => Outcome::Inconclusive("out of fuel".into()),
        Err(Failure::Unsupported(what)) => Outcome::Inconclusive(what),
    };
    Observation { outcome, transcript: ev.transcript }
}

/// Runs `source` as a VM process with the given quantum, proceeding past
/// every trap the way a headless run does.
pub fn observe_vm(lang: &str, source: &str, quantum: i64) -> Observation {
    let mut vm = Vm::new(VmConfig::default());
    vm.set_budget(quantum).expect("positive quantum");
    let pid = match vm.spawn_process(lang, source, []) {
        Ok(pid) => pid,
        Err(e) => {
            let msg = match e {
                polyvm_core::vm::VmError::Compile(c) => c.to_string(),
                other => other.to_string(),
            };
            return Observation { outcome: Outcome::CompileError(msg), transcript: String::new() };
        }
    };
    loop {
        match vm.run_until_settled(pid) {
            Some(ProcessState::Suspended(_)) => {
                let session = vm.session_for(pid).expect("suspended process has a session");
                vm.proceed(session).expect("proceed an open session");
            }
            Some(ProcessState::Terminated(result)) => {
                let outcome = match result.clone() {
                    Ok(v) => Outcome::Value(vm.plugin(lang).expect("known language").display(&v, &vm.heap)),
                    Err(e) => Outcome::Exception { class: e.class_name.to_string(), message: e.message.to_string() },
                };
                let transcript = vm.process(pid).map(|p| p.transcript.clone()).unwrap_or_default();
                return Observation { outcome, transcript };
            }
            other => panic!("process did not settle: {:?}", other.map(|s| s.name())),
        }
    }
}
