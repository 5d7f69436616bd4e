//! Operator semantics on neutral values.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

use super::exceptions::ExceptionValue;
use super::isa::{BinaryOp, CompareOp, UnaryOp};
use crate::heap::Heap;
use crate::plugin::{GuestError, IntDivision, LanguagePlugin, Truthiness};
use crate::value::Value;

pub const ZERO_DIVISION: &str = "ZeroDivisionError";

/// Why an operation failed, before it is turned into a guest exception.
#[derive(Debug)]
pub enum Fault {
    Raise(ExceptionValue),
    Guest(GuestError),
    /// A kernel invariant was violated; never caused by guest code.
    Internal(String),
}

impl From<GuestError> for Fault {
    fn from(e: GuestError) -> Self {
        Fault::Guest(e)
    }
}

fn zero_division(message: &str) -> Fault {
    Fault::Raise(ExceptionValue::new(ZERO_DIVISION, message))
}

fn to_f64(n: &BigInt) -> f64 {
    n.to_f64().unwrap_or(if n.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
}

enum Num {
    Int(BigInt),
    Float(f64),
}

fn numeric(v: &Value) -> Option<Num> {
    match v {
        Value::Int(n) => Some(Num::Int(n.clone())),
        Value::Float(x) => Some(Num::Float(*x)),
        _ => None,
    }
}

fn as_float(n: &Num) -> f64 {
    match n {
        Num::Int(i) => to_f64(i),
        Num::Float(x) => *x,
    }
}

fn repeat_count(n: &BigInt) -> usize {
    if n.is_negative() {
        0
    } else {
        n.to_usize().unwrap_or(usize::MAX)
    }
}

pub fn binary(op: BinaryOp, a: &Value, b: &Value, plugin: &dyn LanguagePlugin, heap: &Heap) -> Result<Value, Fault> {
    let operands = || -> Fault {
        GuestError::Operands {
            op: op.symbol(),
            left: plugin.type_name(a, heap),
            right: plugin.type_name(b, heap),
        }
        .into()
    };
    if let (Some(x), Some(y)) = (numeric(a), numeric(b)) {
        return arith(op, x, y, plugin.semantics().int_division);
    }
    match (op, a, b) {
        (BinaryOp::Add, Value::Text(x), Value::Text(y)) => {
            let mut s = String::with_capacity(x.len() + y.len());
            s.push_str(x);
            s.push_str(y);
            Ok(Value::text(&s))
        }
        (BinaryOp::Add, Value::List(x), Value::List(y)) => {
            let mut items = x.borrow().clone();
            items.extend(y.borrow().iter().cloned());
            Ok(Value::list(items))
        }
        (BinaryOp::Mul, Value::Text(s), Value::Int(n)) => Ok(Value::text(&s.repeat(repeat_count(n)))),
        (BinaryOp::Mul, Value::List(items), Value::Int(n)) => {
            let items = items.borrow();
            let mut out = Vec::new();
            for _ in 0..repeat_count(n) {
                out.extend(items.iter().cloned());
            }
            Ok(Value::list(out))
        }
        _ => Err(operands()),
    }
}

fn arith(op: BinaryOp, x: Num, y: Num, division: IntDivision) -> Result<Value, Fault> {
    match (x, y) {
        (Num::Int(a), Num::Int(b)) => match op {
            BinaryOp::Add => Ok(Value::Int(a + b)),
            BinaryOp::Sub => Ok(Value::Int(a - b)),
            BinaryOp::Mul => Ok(Value::Int(a * b)),
            BinaryOp::Div => {
                if b.is_zero() {
                    return Err(zero_division("integer division by zero"));
                }
                match division {
                    IntDivision::True => Ok(Value::Float(int_true_div(&a, &b))),
                    IntDivision::Floor => Ok(Value::Int(a.div_floor(&b))),
                }
            }
            BinaryOp::Mod => {
                if b.is_zero() {
                    return Err(zero_division("integer modulo by zero"));
                }
                Ok(Value::Int(a.mod_floor(&b)))
            }
        },
        (x, y) => {
            let (a, b) = (as_float(&x), as_float(&y));
            match op {
                BinaryOp::Add => Ok(Value::Float(a + b)),
                BinaryOp::Sub => Ok(Value::Float(a - b)),
                BinaryOp::Mul => Ok(Value::Float(a * b)),
                BinaryOp::Div => {
                    if b == 0.0 {
                        return Err(zero_division("float division by zero"));
                    }
                    Ok(Value::Float(a / b))
                }
                BinaryOp::Mod => {
                    if b == 0.0 {
                        return Err(zero_division("float modulo by zero"));
                    }
                    let r = a % b;
                    Ok(Value::Float(if r != 0.0 && (r < 0.0) != (b < 0.0) { r + b } else { r }))
                }
            }
        }
    }
}

/// Integer true division that stays exact for quotients of small integers.
fn int_true_div(a: &BigInt, b: &BigInt) -> f64 {
    match (a.to_i64(), b.to_i64()) {
        (Some(x), Some(y)) if x.unsigned_abs() < (1 << 53) && y.unsigned_abs() < (1 << 53) => x as f64 / y as f64,
        _ => to_f64(a) / to_f64(b),
    }
}

pub fn unary(op: UnaryOp, v: &Value, plugin: &dyn LanguagePlugin, heap: &Heap) -> Result<Value, Fault> {
    match op {
        UnaryOp::Not => Ok(Value::Bool(!truthy(v, plugin.semantics().truthiness))),
        UnaryOp::Neg => match v {
            Value::Int(n) => Ok(Value::Int(-n)),
            Value::Float(x) => Ok(Value::Float(-x)),
            other => Err(GuestError::Operand { op: "-", operand: plugin.type_name(other, heap) }.into()),
        },
    }
}

pub fn truthy(v: &Value, rule: Truthiness) -> bool {
    match rule {
        Truthiness::Ruby => !matches!(v, Value::Nil | Value::Bool(false)),
        Truthiness::Python => match v {
            Value::Nil => false,
            Value::Bool(b) => *b,
            Value::Int(n) => !n.is_zero(),
            Value::Float(x) => *x != 0.0,
            Value::Text(s) => !s.is_empty(),
            Value::List(items) => !items.borrow().is_empty(),
            Value::ObjectRef(_) | Value::ForeignRef(_) => true,
        },
    }
}

/// Guest-level equality: numbers compare across int/float, lists deeply,
/// objects by identity.
pub fn guest_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Float(y)) | (Value::Float(y), Value::Int(x)) => to_f64(x) == *y,
        (Value::Float(x), Value::Float(y)) => x == y,
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| guest_eq(p, q))
        }
        (Value::ObjectRef(x), Value::ForeignRef(y)) | (Value::ForeignRef(x), Value::ObjectRef(y)) => x == y,
        _ => a == b,
    }
}

fn guest_cmp(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Text(x), Value::Text(y)) => Some(x.cmp(y)),
        (Value::List(x), Value::List(y)) => {
            let (x, y) = (x.borrow(), y.borrow());
            for (p, q) in x.iter().zip(y.iter()) {
                if guest_eq(p, q) {
                    continue;
                }
                return guest_cmp(p, q);
            }
            Some(x.len().cmp(&y.len()))
        }
        _ => {
            let (x, y) = (numeric(a)?, numeric(b)?);
            as_float(&x).partial_cmp(&as_float(&y))
        }
    }
}

pub fn compare(op: CompareOp, a: &Value, b: &Value, plugin: &dyn LanguagePlugin, heap: &Heap) -> Result<Value, Fault> {
    let result = match op {
        CompareOp::Eq => guest_eq(a, b),
        CompareOp::Ne => !guest_eq(a, b),
        _ => {
            let ord = guest_cmp(a, b).ok_or_else(|| GuestError::Operands {
                op: op.symbol(),
                left: plugin.type_name(a, heap),
                right: plugin.type_name(b, heap),
            })?;
            match op {
                CompareOp::Lt => ord == Ordering::Less,
                CompareOp::Le => ord != Ordering::Greater,
                CompareOp::Gt => ord == Ordering::Greater,
                CompareOp::Ge => ord != Ordering::Less,
                CompareOp::Eq | CompareOp::Ne => unreachable!(),
            }
        }
    };
    Ok(Value::Bool(result))
}

/// Resolves a possibly negative index against a length.
pub fn resolve_index(index: &BigInt, len: usize) -> Option<usize> {
    let i = index.to_i64()?;
    let i = if i < 0 { i + len as i64 } else { i };
    if i >= 0 && (i as usize) < len {
        Some(i as usize)
    } else {
        None
    }
}

pub fn index(container: &Value, idx: &Value, plugin: &dyn LanguagePlugin, heap: &Heap) -> Result<Value, Fault> {
    let miss = || -> Result<Value, Fault> {
        if plugin.semantics().index_miss_is_nil {
            Ok(Value::Nil)
        } else {
            Err(GuestError::IndexOutOfRange.into())
        }
    };
    match (container, idx) {
        (Value::List(items), Value::Int(i)) => {
            let items = items.borrow();
            match resolve_index(i, items.len()) {
                Some(k) => Ok(items[k].clone()),
                None => miss(),
            }
        }
        (Value::Text(s), Value::Int(i)) => {
            let chars: Vec<char> = s.chars().collect();
            match resolve_index(i, chars.len()) {
                Some(k) => Ok(Value::text(&chars[k].to_string())),
                None => miss(),
            }
        }
        _ => Err(GuestError::IndexType {
            container: plugin.type_name(container, heap),
            index: plugin.type_name(idx, heap),
        }
        .into()),
    }
}

pub fn set_index(container: &Value, idx: &Value, value: Value, plugin: &dyn LanguagePlugin, heap: &Heap) -> Result<(), Fault> {
    match (container, idx) {
        (Value::List(items), Value::Int(i)) => {
            let mut items = items.borrow_mut();
            let len = items.len();
            match resolve_index(i, len) {
                Some(k) => {
                    items[k] = value;
                    Ok(())
                }
                None => Err(GuestError::IndexOutOfRange.into()),
            }
        }
        _ => Err(GuestError::IndexType {
            container: plugin.type_name(container, heap),
            index: plugin.type_name(idx, heap),
        }
        .into()),
    }
}
