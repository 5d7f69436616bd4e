//! Object storage shared by all languages in one VM.
//!
//! Every entry records its owning language. Handles are never reused, so a
//! handle stays valid for the whole VM run.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use indexmap::IndexMap;

use crate::kernel::CodeUnit;
use crate::kernel::ExceptionValue;
use crate::value::{Handle, LangId, ObjRef, Value};

/// A mutable name table. Root frames share theirs with every function they
/// define, which is how functions see module globals.
#[derive(Clone, Debug, Default)]
pub struct Scope(Rc<RefCell<IndexMap<Rc<str>, Value>>>);

impl Scope {
    pub fn new() -> Self {
        Scope::default()
    }

    pub fn from_bindings<'a>(bindings: impl IntoIterator<Item = (&'a str, Value)>) -> Self {
        let scope = Scope::new();
        for (name, value) in bindings {
            scope.set(name, value);
        }
        scope
    }

    pub fn get(&self, name: &str) -> Option<Value> {
        self.0.borrow().get(name).cloned()
    }

    pub fn set(&self, name: &str, value: Value) {
        let mut map = self.0.borrow_mut();
        if let Some(slot) = map.get_mut(name) {
            *slot = value;
        } else {
            map.insert(Rc::from(name), value);
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.borrow().contains_key(name)
    }

    pub fn entries(&self) -> Vec<(Rc<str>, Value)> {
        self.0.borrow().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn clear(&self) {
        self.0.borrow_mut().clear();
    }

    pub fn len(&self) -> usize {
        self.0.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ptr_eq(&self, other: &Scope) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }
}

#[derive(Clone, Debug)]
pub struct ClassObject {
    pub name: Rc<str>,
    /// Globals of the defining module, seen by every method.
    pub globals: Scope,
    pub methods: IndexMap<Rc<str>, Rc<CodeUnit>>,
    pub attrs: IndexMap<Rc<str>, Value>,
}

#[derive(Clone, Debug)]
pub enum HeapObject {
    Instance {
        class: Handle,
        slots: IndexMap<Rc<str>, Value>,
    },
    Class(ClassObject),
    Function {
        code: Rc<CodeUnit>,
        globals: Scope,
    },
    Builtin {
        name: Rc<str>,
    },
    /// A built-in exception class such as `ValueError`; calling it builds an
    /// exception object.
    ExceptionClass {
        name: Rc<str>,
    },
    Exception(ExceptionValue),
    /// A non-object value wrapped so it can cross a boundary by reference.
    Boxed(Value),
}

#[derive(Clone, Debug)]
pub struct HeapEntry {
    pub owner: LangId,
    pub object: HeapObject,
}

#[derive(Debug, Default)]
pub struct Heap {
    entries: Vec<HeapEntry>,
    interned: HashMap<(LangId, Rc<str>, bool), Handle>,
}

impl Heap {
    pub fn new() -> Self {
        Heap::default()
    }

    pub fn alloc(&mut self, owner: &LangId, object: HeapObject) -> ObjRef {
        let handle = Handle(self.entries.len() as u32);
        self.entries.push(HeapEntry { owner: owner.clone(), object });
        ObjRef { lang: owner.clone(), handle }
    }

    /// Looks up an entry, checking that the reference names its real owner.
    pub fn get(&self, r: &ObjRef) -> Option<&HeapEntry> {
        self.entries.get(r.handle.0 as usize).filter(|e| e.owner == r.lang)
    }

    pub fn get_mut(&mut self, r: &ObjRef) -> Option<&mut HeapEntry> {
        self.entries.get_mut(r.handle.0 as usize).filter(|e| e.owner == r.lang)
    }

    pub fn object(&self, r: &ObjRef) -> Option<&HeapObject> {
        self.get(r).map(|e| &e.object)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Shared builtin function object for `name` in `lang`, created on first use.
    pub fn builtin(&mut self, lang: &LangId, name: &str) -> ObjRef {
        self.interned_object(lang, name, false, |name| HeapObject::Builtin { name })
    }

    /// Shared built-in exception class object.
    pub fn exception_class(&mut self, lang: &LangId, name: &str) -> ObjRef {
        self.interned_object(lang, name, true, |name| HeapObject::ExceptionClass { name })
    }

    fn interned_object(
        &mut self,
        lang: &LangId,
        name: &str,
        exception: bool,
        make: impl FnOnce(Rc<str>) -> HeapObject,
    ) -> ObjRef {
        let key = (lang.clone(), Rc::from(name), exception);
        if let Some(handle) = self.interned.get(&key) {
            return ObjRef { lang: lang.clone(), handle: *handle };
        }
        let r = self.alloc(lang, make(Rc::from(name)));
        self.interned.insert(key, r.handle);
        r
    }

    /// Class name of an object as the MOP reports it.
    pub fn class_name(&self, r: &ObjRef) -> Option<Rc<str>> {
        Some(match self.object(r)? {
            HeapObject::Instance { class, .. } => {
                let class_ref = ObjRef { lang: r.lang.clone(), handle: *class };
                match self.object(&class_ref)? {
                    HeapObject::Class(c) => c.name.clone(),
                    _ => return None,
                }
            }
            HeapObject::Class(_) | HeapObject::ExceptionClass { .. } => Rc::from("Class"),
            HeapObject::Function { .. } => Rc::from("Function"),
            HeapObject::Builtin { .. } => Rc::from("Builtin"),
            HeapObject::Exception(e) => e.class_name.clone(),
            HeapObject::Boxed(v) => Rc::from(v.neutral_class()),
        })
    }

    /// Unwraps an own-language reference to a boxed value; anything else is
    /// returned unchanged.
    pub fn unbox(&self, value: &Value) -> Value {
        if let Value::ObjectRef(r) = value {
            if let Some(HeapObject::Boxed(inner)) = self.object(r) {
                return inner.clone();
            }
        }
        value.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handles_are_owner_checked() {
        let mut heap = Heap::new();
        let py = LangId::new("minipy");
        let rb = LangId::new("minirb");
        let r = heap.alloc(&py, HeapObject::Boxed(Value::int(1)));
        assert!(heap.get(&r).is_some());
        let wrong = ObjRef { lang: rb, handle: r.handle };
        assert!(heap.get(&wrong).is_none());
    }

    #[test]
    fn builtins_are_interned_per_language() {
        let mut heap = Heap::new();
        let py = LangId::new("minipy");
        let a = heap.builtin(&py, "len");
        let b = heap.builtin(&py, "len");
        let c = heap.exception_class(&py, "len");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scope_keeps_insertion_order() {
        let s = Scope::new();
        s.set("b", Value::int(1));
        s.set("a", Value::int(2));
        s.set("b", Value::int(3));
        let names: Vec<_> = s.entries().into_iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
        assert_eq!(s.get("b"), Some(Value::int(3)));
    }
}
