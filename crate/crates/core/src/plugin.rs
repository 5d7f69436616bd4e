//! The language plugin contract and boundary conversion.

use std::fmt;

use indexmap::IndexMap;
use thiserror::Error;

use crate::heap::{Heap, HeapObject};
use crate::kernel::{CodeUnit, ExceptionValue};
use crate::lang::compiler::CompileContext;
use crate::lang::Token;
use crate::value::{LangId, Value};

/// The operations a language must provide to be usable by the VM and tools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Capability {
    Compile,
    Step,
    Display,
    Tokenize,
    Reflect,
    Invoke,
}

impl Capability {
    pub const ALL: [Capability; 6] = [
        Capability::Compile,
        Capability::Step,
        Capability::Display,
        Capability::Tokenize,
        Capability::Reflect,
        Capability::Invoke,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::Compile => "compile",
            Capability::Step => "step",
            Capability::Display => "display",
            Capability::Tokenize => "tokenize",
            Capability::Reflect => "reflect",
            Capability::Invoke => "invoke",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PluginDescriptor {
    pub id: LangId,
    pub display_name: String,
    pub file_extension: String,
    pub capabilities: Vec<Capability>,
}

/// How integer `/` behaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntDivision {
    /// Always produces a float.
    True,
    /// Floors toward negative infinity, staying integral.
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truthiness {
    /// `None`, `False`, zero, empty text and empty lists are false.
    Python,
    /// Only `nil` and `false` are false.
    Ruby,
}

/// Surface rules the shared kernel consults per frame language.
#[derive(Clone, Debug)]
pub struct Semantics {
    pub int_division: IntDivision,
    pub truthiness: Truthiness,
    /// Method invoked by instance creation.
    pub init_selector: &'static str,
    /// Display name of module-level activations.
    pub root_name: &'static str,
    /// Methods declare their receiver as the first parameter.
    pub explicit_self: bool,
    /// Out-of-range list reads produce nil instead of raising.
    pub index_miss_is_nil: bool,
    /// Reading an unset slot produces nil instead of raising.
    pub missing_slot_is_nil: bool,
    /// Exception class used when plain text is raised; `None` rejects it.
    pub raise_text_class: Option<&'static str>,
    /// Separator between class and method in frame names.
    pub method_separator: char,
    pub builtins: &'static [&'static str],
}

/// Guest-visible failure conditions the kernel detects. Each language maps
/// them onto its own exception class and message.
#[derive(Clone, Debug)]
pub enum GuestError {
    UndefinedName(String),
    NoMethod { selector: String, receiver: String },
    NoAttribute { name: String, receiver: String },
    Operands { op: &'static str, left: String, right: String },
    Operand { op: &'static str, operand: String },
    Arity { name: String, expected: usize, given: usize },
    IndexOutOfRange,
    IndexType { container: String, index: String },
    NotCallable(String),
    NotIterable(String),
    NotAnException(String),
    BadValue(String),
    BadType(String),
}

pub trait LanguagePlugin {
    fn descriptor(&self) -> &PluginDescriptor;

    fn semantics(&self) -> &Semantics;

    fn id(&self) -> &LangId {
        &self.descriptor().id
    }

    /// Compiles a whole program into a module code unit.
    fn compile(&self, source: &str) -> Result<CodeUnit, CompileError> {
        self.compile_with(source, CompileContext::default())
    }

    /// Compiles for a particular evaluation context, e.g. inside a method
    /// frame where the receiver's slots are reachable.
    fn compile_with(&self, source: &str, context: CompileContext) -> Result<CodeUnit, CompileError>;

    fn tokenize(&self, source: &str) -> Vec<Token>;

    /// Canonical display text (the printIt representation).
    fn display(&self, value: &Value, heap: &Heap) -> String;

    /// Conversion to text as done by `print`/`puts`/`str`: text is shown raw.
    fn to_text(&self, value: &Value, heap: &Heap) -> String {
        match heap.unbox(value) {
            Value::Text(s) => s.to_string(),
            other => self.display(&other, heap),
        }
    }

    /// The language's own name for the type of a value, used in messages.
    fn type_name(&self, value: &Value, heap: &Heap) -> String;

    fn error(&self, error: GuestError) -> ExceptionValue;

    /// Methods on non-object values (text, lists, numbers). `None` means the
    /// selector is unknown for this receiver.
    fn primitive_method(
        &self,
        receiver: &Value,
        selector: &str,
        args: &[Value],
        heap: &Heap,
    ) -> Option<Result<Value, ExceptionValue>>;
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}, column {}: {message}", column + 1)]
pub struct CompileError {
    pub line: u32,
    /// Zero-based character column.
    pub column: u32,
    pub message: String,
}

impl CompileError {
    pub fn new(line: u32, column: u32, message: impl Into<String>) -> Self {
        CompileError { line, column, message: message.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("plugin `{0}` is already registered")]
    DuplicatePlugin(String),
    #[error("plugin is missing capability `{0}`")]
    MissingCapability(&'static str),
}

#[derive(Default)]
pub struct PluginRegistry {
    plugins: IndexMap<LangId, Box<dyn LanguagePlugin>>,
}

impl fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.plugins.keys()).finish()
    }
}

impl PluginRegistry {
    pub fn new() -> Self {
        PluginRegistry::default()
    }

    /// Registry with both bundled languages.
    pub fn with_defaults() -> Self {
        let mut reg = PluginRegistry::new();
        reg.register(Box::new(crate::lang::minipy::MiniPy::new())).expect("minipy registers");
        reg.register(Box::new(crate::lang::minirb::MiniRb::new())).expect("minirb registers");
        reg
    }

    pub fn register(&mut self, plugin: Box<dyn LanguagePlugin>) -> Result<LangId, RegistryError> {
        let desc = plugin.descriptor();
        if self.plugins.contains_key(&desc.id) {
            return Err(RegistryError::DuplicatePlugin(desc.id.to_string()));
        }
        for cap in Capability::ALL {
            if !desc.capabilities.contains(&cap) {
                return Err(RegistryError::MissingCapability(cap.name()));
            }
        }
        let id = desc.id.clone();
        self.plugins.insert(id.clone(), plugin);
        Ok(id)
    }

    pub fn get(&self, id: &LangId) -> Option<&dyn LanguagePlugin> {
        self.plugins.get(id).map(|p| p.as_ref())
    }

    pub fn lookup(&self, id: &str) -> Option<&dyn LanguagePlugin> {
        self.plugins.get(&LangId::new(id)).map(|p| p.as_ref())
    }

    /// Plugin for `id`. Only for ids taken from live code or values, which
    /// always name registered languages.
    pub fn expect(&self, id: &LangId) -> &dyn LanguagePlugin {
        self.get(id).unwrap_or_else(|| panic!("language `{}` is not registered", id))
    }

    pub fn ids(&self) -> impl Iterator<Item = &LangId> {
        self.plugins.keys()
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &PluginDescriptor> {
        self.plugins.values().map(|p| p.descriptor())
    }

    pub fn by_extension(&self, ext: &str) -> Option<&dyn LanguagePlugin> {
        let ext = ext.trim_start_matches('.');
        self.plugins
            .values()
            .find(|p| p.descriptor().file_extension.trim_start_matches('.') == ext)
            .map(|p| p.as_ref())
    }
}

/// Boundary conversion rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConversionPolicy {
    pub auto_convert: bool,
    pub deep_lists: bool,
}

impl Default for ConversionPolicy {
    fn default() -> Self {
        ConversionPolicy { auto_convert: true, deep_lists: true }
    }
}

impl ConversionPolicy {
    pub fn wrap_everything() -> Self {
        ConversionPolicy { auto_convert: false, deep_lists: true }
    }
}

/// Converts a value held by language `from` for use by language `to`.
///
/// References never nest: an object crossing into a third language keeps
/// its `ForeignRef`, and one returning to its owner becomes an `ObjectRef`
/// again. With `auto_convert` off every other value is boxed in the source
/// heap and handed over as a `ForeignRef`.
pub fn convert(value: &Value, from: &LangId, to: &LangId, policy: &ConversionPolicy, heap: &mut Heap) -> Value {
    match value {
        Value::ObjectRef(r) | Value::ForeignRef(r) => {
            return if &r.lang == to { Value::ObjectRef(r.clone()) } else { Value::ForeignRef(r.clone()) };
        }
        _ => {}
    }
    if from == to {
        return value.clone();
    }
    if !policy.auto_convert {
        return Value::ForeignRef(heap.alloc(from, HeapObject::Boxed(value.clone())));
    }
    match value {
        Value::List(items) => {
            if policy.deep_lists {
                let items: Vec<Value> = items.borrow().clone();
                Value::list(items.iter().map(|v| convert(v, from, to, policy, heap)).collect())
            } else {
                Value::ForeignRef(heap.alloc(from, HeapObject::Boxed(value.clone())))
            }
        }
        // Scalars share one neutral representation; text is immutable, so
        // sharing the buffer is a copy.
        scalar => scalar.clone(),
    }
}
