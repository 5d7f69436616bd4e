//! Built-in functions of the bundled languages.

use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use super::exceptions::ExceptionValue;
use super::exec::{CallEffect, Machine};
use super::frame::Frame;
use super::ops::Fault;
use crate::heap::Scope;
use crate::plugin::{convert, GuestError};
use crate::value::{LangId, Value};

/// Exception class used when `xeval` source does not compile.
pub const FOREIGN_COMPILE_ERROR: &str = "ForeignCompileError";

fn arity(name: &str, expected: usize, given: usize) -> Fault {
    GuestError::Arity { name: name.to_string(), expected, given }.into()
}

impl Machine<'_> {
    pub(crate) fn call_builtin(&mut self, name: &str, owner: &LangId, args: Vec<Value>, caller: &LangId) -> Result<CallEffect, Fault> {
        let policy = self.policy;
        let args: Vec<Value> = args
            .iter()
            .map(|a| {
                let v = convert(a, caller, owner, &policy, self.heap);
                self.heap.unbox(&v)
            })
            .collect();
        let effect = self.builtin(name, owner, args)?;
        Ok(match effect {
            CallEffect::Push(v) => CallEffect::Push(convert(&v, owner, caller, &policy, self.heap)),
            other => other,
        })
    }

    fn builtin(&mut self, name: &str, lang: &LangId, args: Vec<Value>) -> Result<CallEffect, Fault> {
        let plugin = self.plugin(lang);
        let type_name = |heap: &crate::heap::Heap, v: &Value| plugin.type_name(v, heap);
        let push = |v: Value| Ok(CallEffect::Push(v));
        match name {
            "print" => {
                let parts: Vec<String> = args.iter().map(|a| plugin.to_text(a, self.heap)).collect();
                self.transcript.push_str(&parts.join(" "));
                self.transcript.push('\n');
                push(Value::Nil)
            }
            "puts" => {
                if args.is_empty() {
                    self.transcript.push('\n');
                }
                for a in &args {
                    match a {
                        Value::List(items) => {
                            for item in items.borrow().iter() {
                                let line = plugin.to_text(item, self.heap);
                                self.transcript.push_str(&line);
                                self.transcript.push('\n');
                            }
                        }
                        Value::Nil => self.transcript.push('\n'),
                        other => {
                            let line = plugin.to_text(other, self.heap);
                            self.transcript.push_str(&line);
                            if !line.ends_with('\n') {
                                self.transcript.push('\n');
                            }
                        }
                    }
                }
                push(Value::Nil)
            }
            "len" => match args.as_slice() {
                [Value::Text(s)] => push(Value::int(s.chars().count() as i64)),
                [Value::List(items)] => push(Value::int(items.borrow().len() as i64)),
                [other] => Err(GuestError::BadType(format!("object of type '{}' has no len()", type_name(self.heap, other))).into()),
                _ => Err(arity(name, 1, args.len())),
            },
            "range" => {
                let bound = |v: &Value| -> Result<BigInt, Fault> {
                    match v {
                        Value::Int(n) => Ok(n.clone()),
                        other => Err(GuestError::BadType(format!(
                            "'{}' object cannot be interpreted as an integer",
                            type_name(self.heap, other)
                        ))
                        .into()),
                    }
                };
                let (lo, hi) = match args.as_slice() {
                    [hi] => (BigInt::zero(), bound(hi)?),
                    [lo, hi] => (bound(lo)?, bound(hi)?),
                    _ => return Err(arity(name, 1, args.len())),
                };
                let mut items = Vec::new();
                let mut i = lo;
                while i < hi {
                    items.push(Value::Int(i.clone()));
                    i += 1;
                }
                push(Value::list(items))
            }
            "str" => match args.as_slice() {
                [v] => push(Value::text(&plugin.to_text(v, self.heap))),
                _ => Err(arity(name, 1, args.len())),
            },
            "int" => match args.as_slice() {
                [Value::Int(n)] => push(Value::Int(n.clone())),
                [Value::Bool(b)] => push(Value::int(i64::from(*b))),
                [Value::Float(x)] => {
                    if x.is_finite() {
                        push(Value::Int(BigInt::from(x.trunc() as i128)))
                    } else {
                        Err(GuestError::BadValue(format!("cannot convert float {} to integer", crate::value::format_float(*x))).into())
                    }
                }
                [Value::Text(s)] => match s.trim().replace('_', "").parse::<BigInt>() {
                    Ok(n) if !s.trim().is_empty() => push(Value::Int(n)),
                    _ => Err(GuestError::BadValue(format!(
                        "invalid literal for int() with base 10: {}",
                        plugin.display(&args[0], self.heap)
                    ))
                    .into()),
                },
                [other] => Err(GuestError::BadType(format!(
                    "int() argument must be a string or a number, not '{}'",
                    type_name(self.heap, other)
                ))
                .into()),
                _ => Err(arity(name, 1, args.len())),
            },
            "float" => match args.as_slice() {
                [Value::Int(n)] => push(Value::Float(n.to_f64().unwrap_or(f64::INFINITY))),
                [Value::Float(x)] => push(Value::Float(*x)),
                [Value::Bool(b)] => push(Value::Float(f64::from(u8::from(*b)))),
                [Value::Text(s)] => match s.trim().parse::<f64>() {
                    Ok(x) => push(Value::Float(x)),
                    Err(_) => Err(GuestError::BadValue(format!(
                        "could not convert string to float: {}",
                        plugin.display(&args[0], self.heap)
                    ))
                    .into()),
                },
                [other] => Err(GuestError::BadType(format!(
                    "float() argument must be a string or a number, not '{}'",
                    type_name(self.heap, other)
                ))
                .into()),
                _ => Err(arity(name, 1, args.len())),
            },
            "sleep" => {
                let secs = match args.as_slice() {
                    [Value::Int(n)] => n.to_f64().unwrap_or(f64::INFINITY),
                    [Value::Float(x)] => *x,
                    [other] => {
                        return Err(GuestError::BadType(format!("can't sleep for {}", type_name(self.heap, other))).into())
                    }
                    _ => return Err(arity(name, 1, args.len())),
                };
                if !secs.is_finite() || secs < 0.0 {
                    return Err(GuestError::BadValue("sleep length must be non-negative".into()).into());
                }
                let until = Instant::now() + Duration::from_secs_f64(secs);
                Ok(CallEffect::Block(until, Value::Nil))
            }
            "xeval" => self.xeval(lang, args),
            _ => Err(GuestError::UndefinedName(name.to_string()).into()),
        }
    }

    /// `xeval(language, source[, it])`: runs `source` in another language as
    /// a nested activation with `it` bound to the converted argument.
    fn xeval(&mut self, caller: &LangId, args: Vec<Value>) -> Result<CallEffect, Fault> {
        let (lang, source, it) = match args.as_slice() {
            [Value::Text(l), Value::Text(s)] => (l.clone(), s.clone(), Value::Nil),
            [Value::Text(l), Value::Text(s), it] => (l.clone(), s.clone(), it.clone()),
            [_, _] | [_, _, _] => return Err(GuestError::BadType("xeval expects a language name and source text".into()).into()),
            _ => return Err(arity("xeval", 2, args.len())),
        };
        let Some(target) = self.plugins.lookup(&lang) else {
            return Err(Fault::Raise(ExceptionValue::new(FOREIGN_COMPILE_ERROR, format!("unknown language '{}'", lang))));
        };
        let code = target
            .compile(&source)
            .map_err(|e| Fault::Raise(ExceptionValue::new(FOREIGN_COMPILE_ERROR, format!("{}: {}", lang, e))))?;
        let target_id = target.id().clone();
        let it = convert(&it, caller, &target_id, &self.policy, self.heap);
        let mut frame = Frame::root(std::rc::Rc::new(code), Scope::from_bindings([("it", it)]));
        frame.origin = super::frame::CodeOrigin::Scratch;
        frame.boundary = Some(caller.clone());
        Ok(CallEffect::Enter(frame))
    }
}
