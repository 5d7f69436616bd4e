//! The neutral value model shared by every guest language.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use num_bigint::BigInt;

/// Identifier of a registered language plugin, e.g. `minipy`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LangId(Arc<str>);

impl LangId {
    pub fn new(id: &str) -> Self {
        LangId(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for LangId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LangId {
    fn from(s: &str) -> Self {
        LangId::new(s)
    }
}

/// Index of an entry in the VM heap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub u32);

/// A heap object together with the language that owns it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ObjRef {
    pub lang: LangId,
    pub handle: Handle,
}

pub type ListRef = Rc<RefCell<Vec<Value>>>;

/// A value flowing through guest code and across language boundaries.
///
/// Lists are shared by reference inside one language (mutation through one
/// alias is visible through the others) and copied when they cross into
/// another language under a deep conversion policy.
#[derive(Clone, Debug)]
pub enum Value {
    Nil,
    Bool(bool),
    Int(BigInt),
    Float(f64),
    Text(Rc<str>),
    List(ListRef),
    /// An object owned by the language currently holding the value.
    ObjectRef(ObjRef),
    /// An object owned by another language.
    ForeignRef(ObjRef),
}

impl Value {
    pub fn int(n: i64) -> Value {
        Value::Int(BigInt::from(n))
    }

    pub fn text(s: &str) -> Value {
        Value::Text(Rc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Rc::new(RefCell::new(items)))
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Value::Nil)
    }

    pub fn as_ref(&self) -> Option<&ObjRef> {
        match self {
            Value::ObjectRef(r) | Value::ForeignRef(r) => Some(r),
            _ => None,
        }
    }

    /// Neutral type name used by the inspector for non-object values.
    pub fn neutral_class(&self) -> &'static str {
        match self {
            Value::Nil => "Nil",
            Value::Bool(_) => "Bool",
            Value::Int(_) => "Int",
            Value::Float(_) => "Float",
            Value::Text(_) => "Text",
            Value::List(_) => "List",
            Value::ObjectRef(_) => "Object",
            Value::ForeignRef(_) => "Foreign",
        }
    }

    /// Copy of the value with every list cloned recursively, so later guest
    /// mutation cannot change the snapshot.
    pub fn deep_clone(&self) -> Value {
        match self {
            Value::List(items) => {
                Value::list(items.borrow().iter().map(Value::deep_clone).collect())
            }
            other => other.clone(),
        }
    }
}

/// Structural identity: floats compare by bit pattern, lists by content and
/// references by owner and handle. Guest-level `==` lives in the kernel.
impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Nil, Value::Nil) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::List(a), Value::List(b)) => Rc::ptr_eq(a, b) || *a.borrow() == *b.borrow(),
            (Value::ObjectRef(a), Value::ObjectRef(b)) => a == b,
            (Value::ForeignRef(a), Value::ForeignRef(b)) => a == b,
            _ => false,
        }
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Value {
        Value::int(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Value {
        Value::text(s)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Value {
        Value::Bool(b)
    }
}

/// Shortest round-trip decimal rendering in the Python `repr` style:
/// positional notation for exponents in `[-4, 16)`, scientific otherwise,
/// and always a fractional part or exponent so floats never look like ints.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    // `{:e}` yields the shortest digits that round-trip, e.g. "1.2345e3".
    let sci = format!("{:e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if (-4..16).contains(&exp) {
        let point = exp + 1;
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if point as usize >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (int, frac) = digits.split_at(point as usize);
            format!("{}.{}", int, frac)
        };
        format!("{}{}", sign, body)
    } else {
        let (first, rest) = digits.split_at(1);
        let mant = if rest.is_empty() { first.to_string() } else { format!("{}.{}", first, rest) };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{}{}e{}{:02}", sign, mant, esign, exp.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering_matches_repr_style() {
        assert_eq!(format_float(1.0), "1.0");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(-2.5), "-2.5");
        assert_eq!(format_float(1e16), "1e+16");
        assert_eq!(format_float(1.5e-5), "1.5e-05");
        assert_eq!(format_float(0.0001), "0.0001");
        assert_eq!(format_float(123456.789), "123456.789");
        assert_eq!(format_float(1e15), "1000000000000000.0");
        assert_eq!(format_float(f64::INFINITY), "inf");
    }

    #[test]
    fn float_rendering_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 6.02e23, -7.25] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{}", s);
        }
    }

    #[test]
    fn structural_equality() {
        assert_eq!(Value::list(vec![1.into(), "a".into()]), Value::list(vec![1.into(), "a".into()]));
        assert_ne!(Value::int(1), Value::Float(1.0));
        assert_eq!(Value::Float(f64::NAN), Value::Float(f64::NAN));
    }
}
