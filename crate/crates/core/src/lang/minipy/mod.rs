//! MiniPy: a small Python-flavored language.

mod lexer;
mod parser;

use std::rc::Rc;

pub use lexer::{tokenize, KEYWORDS};
pub use parser::parse;
pub(crate) use parser::parse_number;

use crate::heap::{Heap, HeapObject};
use crate::kernel::{CodeUnit, ExceptionValue};
use crate::lang::compiler::{compile_program, CompileContext, Dialect};
use crate::lang::{escape_text, Token};
use crate::plugin::{
    Capability, CompileError, GuestError, IntDivision, LanguagePlugin, PluginDescriptor, Semantics, Truthiness,
};
use crate::value::{format_float, LangId, Value};

pub const ID: &str = "minipy";

const BUILTINS: &[&str] = &["len", "print", "range", "str", "int", "float", "sleep", "xeval"];

pub struct MiniPy {
    descriptor: PluginDescriptor,
    semantics: Semantics,
    dialect: Dialect,
}

impl Default for MiniPy {
    fn default() -> Self {
        MiniPy::new()
    }
}

impl MiniPy {
    pub fn new() -> Self {
        let id = LangId::new(ID);
        MiniPy {
            descriptor: PluginDescriptor {
                id: id.clone(),
                display_name: "MiniPy".into(),
                file_extension: ".mpy".into(),
                capabilities: Capability::ALL.to_vec(),
            },
            semantics: Semantics {
                int_division: IntDivision::True,
                truthiness: Truthiness::Python,
                init_selector: "__init__",
                root_name: "<string>",
                explicit_self: true,
                index_miss_is_nil: false,
                missing_slot_is_nil: false,
                raise_text_class: None,
                method_separator: '.',
                builtins: BUILTINS,
            },
            dialect: Dialect {
                lang: id,
                root_name: "<string>",
                method_separator: '.',
                tail_values: false,
                continue_keyword: "continue",
            },
        }
    }

    fn display_inner(&self, value: &Value, heap: &Heap, seen: &mut Vec<*const ()>) -> String {
        match value {
            Value::Nil => "None".into(),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::Int(n) => n.to_string(),
            Value::Float(x) => format_float(*x),
            Value::Text(s) => escape_text(s, '\''),
            Value::List(items) => {
                let ptr = Rc::as_ptr(items) as *const ();
                if seen.contains(&ptr) {
                    return "[...]".into();
                }
                seen.push(ptr);
                let parts: Vec<String> = items.borrow().iter().map(|v| self.display_inner(v, heap, seen)).collect();
                seen.pop();
                format!("[{}]", parts.join(", "))
            }
            Value::ObjectRef(r) => match heap.object(r) {
                Some(HeapObject::Instance { .. }) => {
                    format!("<{} object>", heap.class_name(r).as_deref().unwrap_or("?"))
                }
                Some(HeapObject::Class(c)) => format!("<class '{}'>", c.name),
                Some(HeapObject::ExceptionClass { name }) => format!("<class '{}'>", name),
                Some(HeapObject::Function { code, .. }) => format!("<function {}>", code.name),
                Some(HeapObject::Builtin { name }) => format!("<built-in function {}>", name),
                Some(HeapObject::Exception(e)) => format!("{}({})", e.class_name, escape_text(&e.message, '\'')),
                Some(HeapObject::Boxed(inner)) => {
                    let inner = inner.clone();
                    self.display_inner(&inner, heap, seen)
                }
                None => "<stale reference>".into(),
            },
            Value::ForeignRef(r) => {
                format!("<foreign {} {}>", r.lang, heap.class_name(r).as_deref().unwrap_or("?"))
            }
        }
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("{} {}", n, word)
    } else {
        format!("{} {}s", n, word)
    }
}

fn split_text(s: &str, sep: Option<&str>) -> Result<Value, ExceptionValue> {
    let parts: Vec<Value> = match sep {
        None => s.split_whitespace().map(Value::text).collect(),
        Some("") => return Err(ExceptionValue::new("ValueError", "empty separator")),
        Some(sep) => s.split(sep).map(Value::text).collect(),
    };
    Ok(Value::list(parts))
}

impl LanguagePlugin for MiniPy {
    fn descriptor(&self) -> &PluginDescriptor {
        &self.descriptor
    }

    fn semantics(&self) -> &Semantics {
        &self.semantics
    }

    fn compile_with(&self, source: &str, context: CompileContext) -> Result<CodeUnit, CompileError> {
        let program = parse(source)?;
        compile_program(&program, source, &self.dialect, context)
    }

    fn tokenize(&self, source: &str) -> Vec<Token> {
        tokenize(source)
    }

    fn display(&self, value: &Value, heap: &Heap) -> String {
        self.display_inner(value, heap, &mut Vec::new())
    }

    fn type_name(&self, value: &Value, heap: &Heap) -> String {
        match value {
            Value::Nil => "NoneType".into(),
            Value::Bool(_) => "bool".into(),
            Value::Int(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Text(_) => "str".into(),
            Value::List(_) => "list".into(),
            Value::ObjectRef(r) => match heap.object(r) {
                Some(HeapObject::Instance { .. }) => heap.class_name(r).map(|c| c.to_string()).unwrap_or_default(),
                Some(HeapObject::Class(_) | HeapObject::ExceptionClass { .. }) => "type".into(),
                Some(HeapObject::Function { .. }) => "function".into(),
                Some(HeapObject::Builtin { .. }) => "builtin_function_or_method".into(),
                Some(HeapObject::Exception(e)) => e.class_name.to_string(),
                Some(HeapObject::Boxed(inner)) => self.type_name(&inner.clone(), heap),
                None => "object".into(),
            },
            Value::ForeignRef(r) => format!("foreign {}", heap.class_name(r).as_deref().unwrap_or("object")),
        }
    }

    fn error(&self, error: GuestError) -> ExceptionValue {
        let (class, message) = match error {
            GuestError::UndefinedName(n) => ("NameError", format!("name '{}' is not defined", n)),
            GuestError::NoMethod { selector, receiver } => {
                ("AttributeError", format!("'{}' object has no attribute '{}'", receiver, selector))
            }
            GuestError::NoAttribute { name, receiver } => {
                ("AttributeError", format!("'{}' object has no attribute '{}'", receiver, name))
            }
            GuestError::Operands { op, left, right } => {
                if matches!(op, "<" | "<=" | ">" | ">=") {
                    ("TypeError", format!("'{}' not supported between instances of '{}' and '{}'", op, left, right))
                } else {
                    ("TypeError", format!("unsupported operand type(s) for {}: '{}' and '{}'", op, left, right))
                }
            }
            GuestError::Operand { op, operand } => ("TypeError", format!("bad operand type for unary {}: '{}'", op, operand)),
            GuestError::Arity { name, expected, given } => (
                "TypeError",
                format!(
                    "{}() takes {} but {} given",
                    name,
                    plural(expected, "positional argument"),
                    if given == 1 { "1 was".to_string() } else { format!("{} were", given) }
                ),
            ),
            GuestError::IndexOutOfRange => ("IndexError", "list index out of range".into()),
            GuestError::IndexType { container, index } => {
                if container == "list" || container == "str" {
                    ("TypeError", format!("{} indices must be integers, not {}", container, index))
                } else {
                    ("TypeError", format!("'{}' object is not subscriptable", container))
                }
            }
            GuestError::NotCallable(t) => ("TypeError", format!("'{}' object is not callable", t)),
            GuestError::NotIterable(t) => ("TypeError", format!("'{}' object is not iterable", t)),
            GuestError::NotAnException(_) => ("TypeError", "exceptions must derive from BaseException".into()),
            GuestError::BadValue(m) => ("ValueError", m),
            GuestError::BadType(m) => ("TypeError", m),
        };
        ExceptionValue::new(class, message)
    }

    fn primitive_method(
        &self,
        receiver: &Value,
        selector: &str,
        args: &[Value],
        heap: &Heap,
    ) -> Option<Result<Value, ExceptionValue>> {
        let arity = |expected: usize| -> Result<(), ExceptionValue> {
            if args.len() == expected {
                Ok(())
            } else {
                Err(self.error(GuestError::Arity { name: selector.to_string(), expected, given: args.len() }))
            }
        };
        Some(match (receiver, selector) {
            (Value::Text(s), "split") => match args {
                [] => split_text(s, None),
                [Value::Text(sep)] => split_text(s, Some(sep)),
                [Value::Nil] => split_text(s, None),
                [other] => Err(self.error(GuestError::BadType(format!(
                    "must be str or None, not {}",
                    self.type_name(other, heap)
                )))),
                _ => Err(self.error(GuestError::Arity { name: "split".into(), expected: 1, given: args.len() })),
            },
            (Value::Text(s), "lower") => arity(0).map(|_| Value::text(&s.to_lowercase())),
            (Value::Text(s), "strip") => arity(0).map(|_| Value::text(s.trim())),
            (Value::List(items), "append") => arity(1).map(|_| {
                items.borrow_mut().push(args[0].clone());
                Value::Nil
            }),
            (Value::List(items), "pop") => arity(0).and_then(|_| {
                items.borrow_mut().pop().ok_or_else(|| ExceptionValue::new("IndexError", "pop from empty list"))
            }),
            _ => return None,
        })
    }
}
