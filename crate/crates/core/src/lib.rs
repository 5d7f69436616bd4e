//! Multi-language green-process VM with live debugging primitives.

pub mod bridge;
pub mod debug;
pub mod heap;
pub mod kernel;
pub mod lang;
pub mod mop;
pub mod plugin;
pub mod value;
pub mod vm;

pub use vm::{ProcessId, ProcessState, SessionId, Vm, VmConfig, VmEvent, VmHandle};
