//! MiniRb: a small Ruby-flavored language.

mod lexer;
mod parser;

use std::rc::Rc;

pub use lexer::{tokenize, KEYWORDS};
pub use parser::parse;

use crate::heap::{Heap, HeapObject};
use crate::kernel::{CodeUnit, ExceptionValue};
use crate::lang::compiler::{compile_program, CompileContext, Dialect};
use crate::lang::{escape_text, Token};
use crate::plugin::{
    Capability, CompileError, GuestError, IntDivision, LanguagePlugin, PluginDescriptor, Semantics, Truthiness,
};
use crate::value::{format_float, LangId, Value};

pub const ID: &str = "minirb";

const BUILTINS: &[&str] = &["puts", "sleep", "xeval"];

pub struct MiniRb {
    descriptor: PluginDescriptor,
    semantics: Semantics,
    dialect: Dialect,
}

impl Default for MiniRb {
    fn default() -> Self {
        MiniRb::new()
    }
}

/// Ruby's `Float#to_s`: like the shared rendering, but exponents always
/// carry a fractional part and non-finite values are spelled out.
pub fn ruby_float(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "Infinity".into() } else { "-Infinity".into() };
    }
    let s = format_float(x);
    match s.split_once('e') {
        Some((mant, exp)) if !mant.contains('.') => format!("{}.0e{}", mant, exp),
        _ => s,
    }
}

impl MiniRb {
    pub fn new() -> Self {
        let id = LangId::new(ID);
        MiniRb {
            descriptor: PluginDescriptor {
                id: id.clone(),
                display_name: "MiniRb".into(),
                file_extension: ".mrb".into(),
                capabilities: Capability::ALL.to_vec(),
            },
            semantics: Semantics {
                int_division: IntDivision::Floor,
                truthiness: Truthiness::Ruby,
                init_selector: "initialize",
                root_name: "<main>",
                explicit_self: false,
                index_miss_is_nil: true,
                missing_slot_is_nil: true,
                raise_text_class: Some("RuntimeError"),
                method_separator: '#',
                builtins: BUILTINS,
            },
            dialect: Dialect {
                lang: id,
                root_name: "<main>",
                method_separator: '#',
                tail_values: true,
                continue_keyword: "next",
            },
        }
    }

    fn display_inner(&self, value: &Value, heap: &Heap, seen: &mut Vec<*const ()>) -> String {
        match value {
            Value::Nil => "nil".into(),
            Value::Bool(b) => b.to_string(),
            Value::Int(n) => n.to_string(),
            Value::Float(x) => ruby_float(*x),
            Value::Text(s) => escape_text(s, '"'),
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
                Some(HeapObject::Instance { .. }) => format!("#<{}>", heap.class_name(r).as_deref().unwrap_or("?")),
                Some(HeapObject::Class(c)) => c.name.to_string(),
                Some(HeapObject::ExceptionClass { name }) => name.to_string(),
                Some(HeapObject::Function { code, .. }) => format!("#<Method: {}>", code.name),
                Some(HeapObject::Builtin { name }) => format!("#<Method: Kernel#{}>", name),
                Some(HeapObject::Exception(e)) => {
                    if e.message.is_empty() {
                        format!("#<{}>", e.class_name)
                    } else {
                        format!("#<{}: {}>", e.class_name, e.message)
                    }
                }
                Some(HeapObject::Boxed(inner)) => {
                    let inner = inner.clone();
                    self.display_inner(&inner, heap, seen)
                }
                None => "#<stale reference>".into(),
            },
            Value::ForeignRef(r) => {
                format!("#<foreign {} {}>", r.lang, heap.class_name(r).as_deref().unwrap_or("?"))
            }
        }
    }
}

/// `String#split`. A single space splits on runs of whitespace and drops
/// leading ones, and trailing empty fields are removed.
fn split_text(s: &str, sep: Option<&str>) -> Value {
    let mut parts: Vec<&str> = match sep {
        None | Some(" ") => s.split_whitespace().collect(),
        Some("") => {
            return Value::list(s.chars().map(|c| Value::text(&c.to_string())).collect());
        }
        Some(sep) => s.split(sep).collect(),
    };
    while parts.last().is_some_and(|p| p.is_empty()) {
        parts.pop();
    }
    Value::list(parts.into_iter().map(Value::text).collect())
}

fn describe_receiver(receiver: &str) -> String {
    match receiver {
        "main" => "main".into(),
        "NilClass" => "nil".into(),
        other => format!("an instance of {}", other),
    }
}

impl LanguagePlugin for MiniRb {
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

    fn to_text(&self, value: &Value, heap: &Heap) -> String {
        match heap.unbox(value) {
            Value::Text(s) => s.to_string(),
            Value::Nil => String::new(),
            other => self.display(&other, heap),
        }
    }

    fn type_name(&self, value: &Value, heap: &Heap) -> String {
        match value {
            Value::Nil => "NilClass".into(),
            Value::Bool(true) => "TrueClass".into(),
            Value::Bool(false) => "FalseClass".into(),
            Value::Int(_) => "Integer".into(),
            Value::Float(_) => "Float".into(),
            Value::Text(_) => "String".into(),
            Value::List(_) => "Array".into(),
            Value::ObjectRef(r) => match heap.object(r) {
                Some(HeapObject::Instance { .. }) => heap.class_name(r).map(|c| c.to_string()).unwrap_or_default(),
                Some(HeapObject::Class(_) | HeapObject::ExceptionClass { .. }) => "Class".into(),
                Some(HeapObject::Function { .. } | HeapObject::Builtin { .. }) => "Method".into(),
                Some(HeapObject::Exception(e)) => e.class_name.to_string(),
                Some(HeapObject::Boxed(inner)) => self.type_name(&inner.clone(), heap),
                None => "Object".into(),
            },
            Value::ForeignRef(r) => format!("foreign {}", heap.class_name(r).as_deref().unwrap_or("Object")),
        }
    }

    fn error(&self, error: GuestError) -> ExceptionValue {
        let (class, message) = match error {
            GuestError::UndefinedName(n) => ("NameError", format!("undefined local variable or method '{}' for main", n)),
            GuestError::NoMethod { selector, receiver } => {
                ("NoMethodError", format!("undefined method '{}' for {}", selector, describe_receiver(&receiver)))
            }
            GuestError::NoAttribute { name, receiver } => {
                ("NoMethodError", format!("undefined method '{}' for {}", name, describe_receiver(&receiver)))
            }
            GuestError::Operands { op, left, right } => match (op, left.as_str()) {
                ("<" | "<=" | ">" | ">=", _) => ("ArgumentError", format!("comparison of {} with {} failed", left, right)),
                (_, "Integer" | "Float") => ("TypeError", format!("{} can't be coerced into {}", right, left)),
                ("+", "String" | "Array") => ("TypeError", format!("no implicit conversion of {} into {}", right, left)),
                ("*", "String" | "Array") => ("TypeError", format!("no implicit conversion of {} into Integer", right)),
                _ => ("NoMethodError", format!("undefined method '{}' for {}", op, describe_receiver(&left))),
            },
            GuestError::Operand { op, operand } => {
                let selector = if op == "-" { "-@".to_string() } else { op.to_string() };
                ("NoMethodError", format!("undefined method '{}' for {}", selector, describe_receiver(&operand)))
            }
            GuestError::Arity { given, expected, .. } => {
                ("ArgumentError", format!("wrong number of arguments (given {}, expected {})", given, expected))
            }
            GuestError::IndexOutOfRange => ("IndexError", "index out of range".into()),
            GuestError::IndexType { container, index } => {
                if container == "Array" || container == "String" {
                    ("TypeError", format!("no implicit conversion of {} into Integer", index))
                } else {
                    ("NoMethodError", format!("undefined method '[]' for {}", describe_receiver(&container)))
                }
            }
            GuestError::NotCallable(t) => ("NoMethodError", format!("undefined method 'call' for {}", describe_receiver(&t))),
            GuestError::NotIterable(t) => ("NoMethodError", format!("undefined method 'each' for {}", describe_receiver(&t))),
            GuestError::NotAnException(_) => ("TypeError", "exception class/object expected".into()),
            GuestError::BadValue(m) => ("ArgumentError", m),
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
                [] => Ok(split_text(s, None)),
                [Value::Text(sep)] => Ok(split_text(s, Some(sep))),
                [other] => Err(self.error(GuestError::BadType(format!(
                    "wrong argument type {} (expected String)",
                    self.type_name(other, heap)
                )))),
                _ => Err(self.error(GuestError::Arity { name: "split".into(), expected: 1, given: args.len() })),
            },
            (Value::Text(s), "downcase") => arity(0).map(|_| Value::text(&s.to_lowercase())),
            (Value::Text(s), "length" | "size") => arity(0).map(|_| Value::int(s.chars().count() as i64)),
            (Value::List(items), "push") => arity(1).map(|_| {
                items.borrow_mut().push(args[0].clone());
                receiver.clone()
            }),
            (Value::List(items), "pop") => arity(0).map(|_| items.borrow_mut().pop().unwrap_or(Value::Nil)),
            (Value::List(items), "size" | "length") => arity(0).map(|_| Value::int(items.borrow().len() as i64)),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heap::Heap;

    #[test]
    fn display_rules() {
        let rb = MiniRb::new();
        let heap = Heap::new();
        assert_eq!(rb.display(&Value::Nil, &heap), "nil");
        assert_eq!(rb.display(&Value::text("hi"), &heap), "\"hi\"");
        assert_eq!(rb.display(&Value::int(7), &heap), "7");
        assert_eq!(rb.display(&Value::list(vec![Value::int(1), Value::text("a")]), &heap), "[1, \"a\"]");
    }

    #[test]
    fn float_formatting() {
        assert_eq!(ruby_float(1.0), "1.0");
        assert_eq!(ruby_float(1e16), "1.0e+16");
        assert_eq!(ruby_float(1.5e-7), "1.5e-07");
        assert_eq!(ruby_float(f64::INFINITY), "Infinity");
    }

    #[test]
    fn split_on_space_collapses_runs() {
        assert_eq!(
            split_text("  the  quick fox ", Some(" ")),
            Value::list(vec![Value::text("the"), Value::text("quick"), Value::text("fox")])
        );
        assert_eq!(split_text("a,b,,", Some(",")), Value::list(vec![Value::text("a"), Value::text("b")]));
    }

    #[test]
    fn push_returns_the_list() {
        let rb = MiniRb::new();
        let heap = Heap::new();
        let l = Value::list(vec![]);
        let r = rb.primitive_method(&l, "push", &[Value::int(1)], &heap).unwrap().unwrap();
        assert_eq!(r, Value::list(vec![Value::int(1)]));
        assert_eq!(rb.primitive_method(&l, "size", &[], &heap), Some(Ok(Value::int(1))));
    }

    #[test]
    fn error_messages() {
        let rb = MiniRb::new();
        let e = rb.error(GuestError::Arity { name: "f".into(), expected: 1, given: 2 });
        assert_eq!(e.title(), "ArgumentError: wrong number of arguments (given 2, expected 1)");
        let e = rb.error(GuestError::UndefinedName("x".into()));
        assert_eq!(&*e.class_name, "NameError");
    }
}
