//! The shared bytecode machine.

mod builtins;
mod exceptions;
mod exec;
mod frame;
mod introspect;
mod isa;
pub mod ops;

pub use builtins::FOREIGN_COMPILE_ERROR;
pub use exceptions::{find_handler, unwind, ExceptionValue, HandlerLocation, UnwindStop};
pub(crate) use exec::CallEffect;
pub use exec::{is_exception_class_name, ExecStack, KernelFault, Machine, StepOutcome, StepResult};
pub use frame::{snapshot_stack, CodeOrigin, Frame, FrameSnapshot, HandlerBlock, ReturnAction};
pub use introspect::{
    display_name, frame_position, frame_view, restart_frame, scratch_frame, stack_view, FrameView, RestartError,
};
pub use isa::{
    verify, BinaryOp, ClassTemplate, CodeKind, CodeUnit, CompareOp, Constant, HandlerKind, Instruction, Matcher,
    UnaryOp, VerifyError,
};
