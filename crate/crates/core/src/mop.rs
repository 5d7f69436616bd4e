//! The neutral meta-object protocol tools use on values of any language.

use thiserror::Error;

use crate::heap::{Heap, HeapObject};
use crate::plugin::{convert, ConversionPolicy, PluginRegistry};
use crate::value::{LangId, ObjRef, Value};

/// Reflective view of one object.
#[derive(Clone, Debug, PartialEq)]
pub struct MopView {
    pub class_name: String,
    pub display: String,
    pub slots: Vec<(String, Value)>,
}

/// What an inspector shows for any value.
#[derive(Clone, Debug, PartialEq)]
pub struct InspectView {
    pub class_name: String,
    pub display: String,
    pub slots: Vec<(String, Value)>,
    pub viewer_language: LangId,
    /// Owner of the inspected object; `None` for plain values.
    pub language: Option<LangId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MopError {
    #[error("stale handle {0}")]
    StaleHandle(String),
    #[error("no slot named '{0}'")]
    NoSuchSlot(String),
    #[error("no method '{0}'")]
    NoSuchMethod(String),
    #[error("unknown language '{0}'")]
    UnknownLanguage(String),
}

fn stale(r: &ObjRef) -> MopError {
    MopError::StaleHandle(format!("{}:{}", r.lang, r.handle.0))
}

fn indexed(items: &[Value]) -> Vec<(String, Value)> {
    items.iter().enumerate().map(|(i, v)| (i.to_string(), v.clone())).collect()
}

/// Class name, owner-language display and slots of an object. Instance
/// slots come in insertion order, class attributes in definition order.
pub fn reflect(heap: &Heap, plugins: &PluginRegistry, r: &ObjRef) -> Result<MopView, MopError> {
    let object = heap.object(r).ok_or_else(|| stale(r))?;
    let owner = plugins.get(&r.lang).ok_or_else(|| MopError::UnknownLanguage(r.lang.to_string()))?;
    let slots = match object {
        HeapObject::Instance { slots, .. } => slots.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        HeapObject::Class(c) => c.attrs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        HeapObject::Exception(e) => vec![("message".to_string(), Value::Text(e.message.clone()))],
        HeapObject::Boxed(Value::List(items)) => indexed(&items.borrow()),
        _ => Vec::new(),
    };
    let class_name = heap.class_name(r).map(|c| c.to_string()).unwrap_or_default();
    let display = owner.display(&Value::ObjectRef(r.clone()), heap);
    Ok(MopView { class_name, display, slots })
}

/// Reads one slot, converted for `caller`.
pub fn slot_get(
    heap: &mut Heap,
    policy: &ConversionPolicy,
    r: &ObjRef,
    name: &str,
    caller: &LangId,
) -> Result<Value, MopError> {
    let value = match heap.object(r).ok_or_else(|| stale(r))? {
        HeapObject::Instance { slots, .. } => slots.get(name).cloned(),
        HeapObject::Class(c) => c.attrs.get(name).cloned(),
        HeapObject::Exception(e) if name == "message" => Some(Value::Text(e.message.clone())),
        _ => None,
    };
    let value = value.ok_or_else(|| MopError::NoSuchSlot(name.to_string()))?;
    let owner = r.lang.clone();
    Ok(convert(&value, &owner, caller, policy, heap))
}

/// Display text of `value` in `language`.
pub fn display(value: &Value, language: &LangId, heap: &Heap, plugins: &PluginRegistry) -> Result<String, MopError> {
    let plugin = plugins.get(language).ok_or_else(|| MopError::UnknownLanguage(language.to_string()))?;
    Ok(plugin.display(value, heap))
}

/// Inspector view. Objects are reflected through their owner; lists list
/// their elements by index; scalars have no slots.
pub fn inspect_value(
    value: &Value,
    viewer: &LangId,
    heap: &Heap,
    plugins: &PluginRegistry,
) -> Result<InspectView, MopError> {
    let viewer_plugin = plugins.get(viewer).ok_or_else(|| MopError::UnknownLanguage(viewer.to_string()))?;
    match value {
        Value::ObjectRef(r) | Value::ForeignRef(r) => {
            let view = reflect(heap, plugins, r)?;
            Ok(InspectView {
                class_name: view.class_name,
                display: view.display,
                slots: view.slots,
                viewer_language: viewer.clone(),
                language: Some(r.lang.clone()),
            })
        }
        Value::List(items) => Ok(InspectView {
            class_name: value.neutral_class().to_string(),
            display: viewer_plugin.display(value, heap),
            slots: indexed(&items.borrow()),
            viewer_language: viewer.clone(),
            language: None,
        }),
        scalar => Ok(InspectView {
            class_name: scalar.neutral_class().to_string(),
            display: viewer_plugin.display(scalar, heap),
            slots: Vec::new(),
            viewer_language: viewer.clone(),
            language: None,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use std::rc::Rc;

    fn point(heap: &mut Heap) -> ObjRef {
        let rb = LangId::new("minirb");
        let class = heap.alloc(
            &rb,
            HeapObject::Class(crate::heap::ClassObject {
                name: Rc::from("Point"),
                globals: Default::default(),
                methods: IndexMap::new(),
                attrs: IndexMap::new(),
            }),
        );
        let mut slots = IndexMap::new();
        slots.insert(Rc::from("@x"), Value::int(1));
        slots.insert(Rc::from("@y"), Value::int(2));
        heap.alloc(&rb, HeapObject::Instance { class: class.handle, slots })
    }

    #[test]
    fn reflect_lists_slots_in_order() {
        let mut heap = Heap::new();
        let plugins = PluginRegistry::with_defaults();
        let p = point(&mut heap);
        let view = reflect(&heap, &plugins, &p).unwrap();
        assert_eq!(view.class_name, "Point");
        assert_eq!(view.display, "#<Point>");
        assert_eq!(view.slots, vec![("@x".to_string(), Value::int(1)), ("@y".to_string(), Value::int(2))]);
        assert_eq!(reflect(&heap, &plugins, &p).unwrap(), view);
    }

    #[test]
    fn slot_get_and_missing_slot() {
        let mut heap = Heap::new();
        let p = point(&mut heap);
        let py = LangId::new("minipy");
        let policy = ConversionPolicy::default();
        assert_eq!(slot_get(&mut heap, &policy, &p, "@x", &py), Ok(Value::int(1)));
        assert_eq!(slot_get(&mut heap, &policy, &p, "z", &py), Err(MopError::NoSuchSlot("z".into())));
    }

    #[test]
    fn stale_handle_is_reported() {
        let heap = Heap::new();
        let plugins = PluginRegistry::with_defaults();
        let r = ObjRef { lang: LangId::new("minipy"), handle: crate::value::Handle(99) };
        assert!(matches!(reflect(&heap, &plugins, &r), Err(MopError::StaleHandle(_))));
    }

    #[test]
    fn scalars_have_no_slots() {
        let heap = Heap::new();
        let plugins = PluginRegistry::with_defaults();
        let view = inspect_value(&Value::int(7), &LangId::new("minipy"), &heap, &plugins).unwrap();
        assert_eq!((view.class_name.as_str(), view.display.as_str()), ("Int", "7"));
        assert!(view.slots.is_empty());
    }

    #[test]
    fn lists_are_indexed() {
        let heap = Heap::new();
        let plugins = PluginRegistry::with_defaults();
        let l = Value::list(vec![Value::int(1), Value::text("a")]);
        let view = inspect_value(&l, &LangId::new("minirb"), &heap, &plugins).unwrap();
        assert_eq!(view.display, "[1, \"a\"]");
        assert_eq!(view.slots[1], ("1".to_string(), Value::text("a")));
    }
}
