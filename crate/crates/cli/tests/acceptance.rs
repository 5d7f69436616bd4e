//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero if any failed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use polyvm_core::bridge::{parse_pipeline, PipelineStop};
use polyvm_core::debug::{DebugKind, Proceeded};
use polyvm_core::heap::{Heap, HeapObject};
use polyvm_core::kernel::snapshot_stack;
use polyvm_core::plugin::{convert, ConversionPolicy};
use polyvm_core::value::{LangId, Value};
use polyvm_core::vm::{RunOutcome, DEFAULT_QUANTUM};
use polyvm_core::{ProcessId, ProcessState, Vm, VmConfig, VmEvent};
use polyvm_oracle::{generate, observe_oracle, observe_vm, GenConfig, Lang, Outcome};
use polyvm_service::{serve, Dispatcher, ServerConfig};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn s<E: Display>(e: E) -> String {
    e.to_string()
}

const AVERAGE: &str = "def average(iterable):\n    return sum(iterable) / len(iterable)\n\ndef sum(xs):\n    total = 0\n    for x in xs:\n        total = total + x\n    return total\n\naverage([])\n";

const GUARDED: &str = "def average(iterable):\n    if len(iterable) == 0:\n        return 0\n    return sum(iterable) / len(iterable)\n";

fn settle(vm: &mut Vm, pid: ProcessId) -> Result<ProcessState, String> {
    vm.run_until_settled(pid).cloned().ok_or_else(|| format!("process {pid} vanished"))
}

fn pre_unwind_trap() -> Check {
    let started = Instant::now();
    let mut vm = Vm::new(VmConfig { quantum: 1, ..VmConfig::default() });
    let pid = vm.spawn_process("minipy", AVERAGE, []).map_err(s)?;
    let (session, before) = loop {
        let before = snapshot_stack(&vm.process(pid).unwrap().thread.frames);
        match vm.run_quantum(pid).map_err(s)? {
            RunOutcome::Yielded => {}
            RunOutcome::Trapped(session) => break (session, before),
            other => return Err(format!("expected a trap, got {other:?}")),
        }
    };
    let after = snapshot_stack(&vm.process(pid).unwrap().thread.frames);
    ensure!(after.len() == 2, "{} frames remain", after.len());
    ensure!(after == before, "frames changed between the raise and the trap");

    let event = &vm.session(session).map_err(s)?.event;
    match &event.kind {
        DebugKind::UnhandledException(e) => ensure!(&*e.class_name == "ZeroDivisionError", "raised {}", e.class_name),
        DebugKind::UserInterrupt => return Err("trap is not an exception".into()),
    }
    let names: Vec<&str> = event.stack.iter().map(|f| f.display_name.as_str()).collect();
    ensure!(names == ["average", "<string>"], "stack {names:?}");
    let iterable = event.stack[0].locals.iter().find(|(n, _)| n == "iterable").map(|(_, v)| v.clone());
    ensure!(iterable == Some(Value::list(vec![])), "iterable = {iterable:?}");

    let mut fast = Vm::default();
    let pid = fast.spawn_process("minipy", AVERAGE, []).map_err(s)?;
    ensure!(matches!(settle(&mut fast, pid)?, ProcessState::Suspended(_)), "default quantum did not trap");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(())
}

/// The whole edit-and-continue exchange over the wire protocol.
fn edit_and_continue_transcript() -> Result<Vec<Json>, String> {
    let mut vm = Vm::default();
    let events = vm.subscribe();
    let mut d = Dispatcher::new();
    let mut log = Vec::new();
    let mut id = 0;
    let mut send = |vm: &mut Vm, d: &mut Dispatcher, log: &mut Vec<Json>, op: &str, params: Json| {
        id += 1;
        let reply = d.handle_text(vm, &json!({"id": id, "op": op, "params": params}).to_string());
        log.push(reply.clone());
        reply
    };
    let reply = send(&mut vm, &mut d, &mut log, "eval", json!({"language": "minipy", "source": AVERAGE, "mode": "printIt"}));
    let pid = ProcessId(reply["result"]["pid"].as_u64().ok_or("eval failed")?);
    settle(&mut vm, pid)?;
    let pushes: Vec<VmEvent> = events.try_iter().collect();
    log.extend(pushes.iter().map(|e| d.push_for(&mut vm, e)));
    let session = log.last().and_then(|p| p["session"].as_u64()).ok_or("no trap push")?;
    send(&mut vm, &mut d, &mut log, "stack", json!({"session": session}));
    send(&mut vm, &mut d, &mut log, "restart_frame", json!({"session": session, "index": 0, "source": GUARDED}));
    let proceed = send(&mut vm, &mut d, &mut log, "proceed", json!({"session": session}));
    ensure!(proceed["result"] == json!({"resumed": true}), "proceed replied {proceed}");
    let state = settle(&mut vm, pid)?;
    ensure!(state == ProcessState::Terminated(Ok(Value::int(0))), "ended as {state:?}");
    let pushes: Vec<VmEvent> = events.try_iter().collect();
    log.extend(pushes.iter().map(|e| d.push_for(&mut vm, e)));
    Ok(log)
}

fn edit_and_continue() -> Check {
    let first = edit_and_continue_transcript()?;
    let done = first.last().ok_or("empty transcript")?;
    ensure!(done["event"] == "completed" && done["display"] == "0", "last push {done}");
    let restarted = &first[3]["result"];
    ensure!(restarted[0]["name"] == "average" && restarted[0]["line"] == 2, "restart gave {restarted}");
    for run in 1..100 {
        let again = edit_and_continue_transcript()?;
        ensure!(again == first, "run {run} diverged");
    }
    Ok(())
}

const COUNTING: &str = "total = 0\ni = 0\nwhile i < 20000\n  total = total + i % 7\n  i += 1\nend\ntotal\n";
const LOOP_LINES: std::ops::RangeInclusive<u32> = 3..=5;

fn user_interrupt() -> Check {
    let expected = Value::int((0..20000i64).map(|i| i % 7).sum());
    let mut vm = Vm::default();
    let pid = vm.spawn_process("minirb", COUNTING, []).map_err(s)?;
    let uninterrupted = settle(&mut vm, pid)?;
    ensure!(uninterrupted == ProcessState::Terminated(Ok(expected.clone())), "plain run gave {uninterrupted:?}");
    let total = vm.process(pid).unwrap().consumed;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..20 {
        let point = rng.gen_range(total / 10..total * 9 / 10);
        let mut vm = Vm::new(VmConfig { quantum: point, ..VmConfig::default() });
        let pid = vm.spawn_process("minirb", COUNTING, []).map_err(s)?;
        ensure!(vm.run_quantum(pid).map_err(s)? == RunOutcome::Yielded, "finished before {point}");
        vm.set_budget(DEFAULT_QUANTUM as i64).map_err(s)?;
        let session = vm.interrupt(pid).map_err(s)?;
        let event = vm.session(session).map_err(s)?.event.clone();
        ensure!(event.kind == DebugKind::UserInterrupt && event.title == "User Interrupt", "trap {:?}", event.kind);
        let line = event.stack[0].line;
        ensure!(LOOP_LINES.contains(&line), "interrupted at line {line} after {point} instructions");
        ensure!(vm.proceed(session).map_err(s)? == Proceeded::Resumed, "proceed did not resume");
        let state = settle(&mut vm, pid)?;
        ensure!(state == ProcessState::Terminated(Ok(expected.clone())), "after {point}: {state:?}");
    }
    Ok(())
}

/// Instructions executed and slices taken to run `source` to completion.
fn slices(lang: &str, source: &str, quantum: u64) -> Result<Option<(u64, u64)>, String> {
    let mut vm = Vm::new(VmConfig { quantum, ..VmConfig::default() });
    let pid = vm.spawn_process(lang, source, []).map_err(s)?;
    let mut n = 0;
    loop {
        n += 1;
        match vm.run_quantum(pid).map_err(s)? {
            RunOutcome::Yielded => {}
            RunOutcome::Completed(_) => return Ok(Some((vm.process(pid).unwrap().consumed, n))),
            _ => return Ok(None),
        }
    }
}

fn budget_semantics() -> Check {
    ensure!(DEFAULT_QUANTUM == 10_000, "default quantum {DEFAULT_QUANTUM}");
    ensure!(VmConfig::default().quantum == 10_000 && Vm::default().quantum() == 10_000, "config default differs");
    let fixed = "n = 0\nfor i in range(3000):\n    n = n + i\nn";
    let mut sizes = Vec::new();
    for q in [1u64, 7, 10_000] {
        let (n, taken) = slices("minipy", fixed, q)?.ok_or("fixed loop did not complete")?;
        ensure!(taken == n.div_ceil(q), "q={q}: {taken} slices for {n} instructions");
        sizes.push(n);
    }
    ensure!(sizes.windows(2).all(|w| w[0] == w[1]), "instruction counts differ: {sizes:?}");

    let mut programs = 0;
    for seed in 0..25 {
        let g = generate(seed, GenConfig::full());
        for lang in [Lang::Py, Lang::Rb] {
            let src = g.source(lang);
            let reference = observe_vm(lang.id(), src, 10_000);
            for q in [1i64, 7] {
                let other = observe_vm(lang.id(), src, q);
                ensure!(other == reference, "seed {seed} {} differs at q={q}", lang.id());
            }
            if let Some((n, _)) = slices(lang.id(), src, 10_000)? {
                for q in [1u64, 7] {
                    let (m, taken) = slices(lang.id(), src, q)?.ok_or("completion depends on the quantum")?;
                    ensure!(m == n && taken == m.div_ceil(q), "seed {seed}: {taken} slices for {m} at q={q}");
                }
            }
            programs += 1;
        }
    }
    ensure!(programs >= 50, "only {programs} programs");
    Ok(())
}

const HOT: &str = "n = 0\nwhile true\n  n += 1\nend\n";

fn scheduler_latency() -> Check {
    let quantum = 200_000;
    let (vm, _thread) = Vm::spawn_thread(VmConfig { quantum, ..VmConfig::default() });
    let pid = vm.call(|vm| vm.spawn_process("minirb", HOT, [])).map_err(s)?.map_err(s)?;
    for trial in 0..10 {
        let before = vm.call(move |vm| vm.process(pid).map(|p| p.consumed)).map_err(s)?.ok_or("no process")?;
        let (tx, rx) = mpsc::channel();
        vm.submit(move |vm| {
            let at_service = vm.process(pid).map(|p| p.consumed).unwrap_or(0);
            let _ = tx.send((at_service, vm.interrupt(pid)));
        })
        .map_err(s)?;
        let (at_service, session) = rx.recv_timeout(Duration::from_secs(30)).map_err(s)?;
        let session = session.map_err(s)?;
        let ran = at_service - before;
        ensure!(ran <= quantum, "trial {trial}: {ran} instructions ran before the interrupt (quantum {quantum})");
        let still = vm.call(move |vm| vm.process(pid).map(|p| p.consumed)).map_err(s)?.unwrap_or(0);
        ensure!(still == at_service, "process kept running while suspended");
        vm.call(move |vm| vm.proceed(session).map(|_| ()).map_err(|e| e.to_string())).map_err(s)??;
    }
    vm.shutdown();
    Ok(())
}

fn oracle_equivalence() -> Check {
    let mut compared = 0;
    let mut seed = 0;
    while compared < 240 {
        let g = generate(seed, GenConfig::full());
        for lang in [Lang::Py, Lang::Rb] {
            let src = g.source(lang);
            let expected = observe_oracle(lang.id(), src, 200_000);
            if let Outcome::Inconclusive(_) = expected.outcome {
                continue;
            }
            let actual = observe_vm(lang.id(), src, 10_000);
            ensure!(actual == expected, "seed {seed} in {}:\n{src}\nvm: {actual:?}\noracle: {expected:?}", lang.id());
            compared += 1;
        }
        seed += 1;
        ensure!(seed < 1000, "too few conclusive programs");
    }
    Ok(())
}

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Nil),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::int),
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Value::Float),
        ".{0,12}".prop_map(|t: String| Value::text(&t)),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    scalar().prop_recursive(3, 24, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(Value::list))
}

fn nested_reference(v: &Value, heap: &Heap) -> bool {
    match v {
        Value::ObjectRef(r) | Value::ForeignRef(r) => {
            matches!(heap.object(r), Some(HeapObject::Boxed(Value::ObjectRef(_) | Value::ForeignRef(_))))
        }
        Value::List(items) => items.borrow().iter().any(|i| nested_reference(i, heap)),
        _ => false,
    }
}

fn conversion_properties() -> Check {
    let py = LangId::new("minipy");
    let rb = LangId::new("minirb");
    let mut runner = TestRunner::new(Config { cases: 512, failure_persistence: None, ..Config::default() });
    runner
        .run(&scalar(), |v| {
            let mut heap = Heap::new();
            let policy = ConversionPolicy::default();
            for (a, b) in [(&py, &rb), (&rb, &py)] {
                let there = convert(&v, a, b, &policy, &mut heap);
                prop_assert_eq!(&there, &v);
                prop_assert_eq!(convert(&there, b, a, &policy, &mut heap), v.clone());
            }
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;
    runner
        .run(&(value(), prop::collection::vec(any::<bool>(), 1..6)), |(v, hops)| {
            let mut heap = Heap::new();
            let (mut here, mut there) = (py.clone(), rb.clone());
            let mut current = v;
            for auto_convert in hops {
                let policy = ConversionPolicy { auto_convert, deep_lists: true };
                current = convert(&current, &here, &there, &policy, &mut heap);
                std::mem::swap(&mut here, &mut there);
                prop_assert!(!nested_reference(&current, &heap), "{:?}", current);
            }
            Ok(())
        })
        .map_err(|e| format!("double wrapping: {e}"))?;
    runner
        .run(&value(), |v| {
            let mut heap = Heap::new();
            let wrap = ConversionPolicy::wrap_everything();
            let crossed = convert(&v, &py, &rb, &wrap, &mut heap);
            prop_assert!(matches!(crossed, Value::ForeignRef(_)));
            let home = convert(&crossed, &rb, &py, &wrap, &mut heap);
            prop_assert_eq!(heap.unbox(&home), v);
            Ok(())
        })
        .map_err(|e| format!("unwrap inverse: {e}"))?;

    let mut vm = Vm::new(VmConfig { policy: ConversionPolicy::wrap_everything(), ..VmConfig::default() });
    let probe = "class Probe\n  def take(x)\n    @seen = x\n    x\n  end\nend\nProbe.new\n";
    let pid = vm.spawn_process("minirb", probe, []).map_err(s)?;
    let ProcessState::Terminated(Ok(probe)) = settle(&mut vm, pid)? else { return Err("probe failed".into()) };
    for arg in [Value::int(3), Value::text("x"), Value::Nil, Value::Float(0.5), Value::list(vec![Value::int(1)])] {
        vm.cross_invoke(&probe, "take", vec![arg.clone()], &py).map_err(|e| format!("{e:?}"))?;
        let seen = match vm.heap.object(probe.as_ref().unwrap()) {
            Some(HeapObject::Instance { slots, .. }) => slots.get("@seen").cloned(),
            _ => None,
        };
        ensure!(matches!(seen, Some(Value::ForeignRef(_))), "{arg:?} arrived as {seen:?}");
    }
    Ok(())
}

fn samples() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

/// Sorted by descending count, then word.
fn word_counts(text: &str) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in text.split_whitespace() {
        *counts.entry(w.to_lowercase()).or_default() += 1;
    }
    let mut pairs: Vec<(String, usize)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pairs
}

fn word_frequency_pipeline() -> Check {
    let file = std::fs::read_to_string(samples().join("wordfreq.pipeline")).map_err(s)?;
    let cells = parse_pipeline(&file).map_err(s)?;
    ensure!(cells.len() == 3, "{} cells", cells.len());
    let text = cells[0]
        .source
        .lines()
        .find_map(|l| l.strip_prefix("text = '").and_then(|r| r.strip_suffix('\'')))
        .ok_or("no text literal in cell 1")?;
    ensure!(text.split_whitespace().count() == 200, "text has {} words", text.split_whitespace().count());
    let pairs = word_counts(text);
    let expected =
        format!("[{}]", pairs.iter().map(|(w, c)| format!("['{w}', {c}]")).collect::<Vec<_>>().join(", "));

    let mut vm = Vm::default();
    let result = vm.run_pipeline(&cells, Value::Nil).map_err(|e| format!("{e:?}"))?;
    let shown = &result.per_cell.last().ok_or("no cells ran")?.2;
    ensure!(*shown == expected, "pipeline gave {shown}\nexpected {expected}");

    let mut broken = cells.clone();
    broken[1].source = format!("scale = 1 / 0\n{}", cells[1].source);
    let mut vm = Vm::default();
    let (pipeline, session) = match vm.run_pipeline(&broken, Value::Nil) {
        Err(PipelineStop::Paused { pipeline, session }) => (pipeline, session),
        other => return Err(format!("injected fault did not pause: {other:?}")),
    };
    let pid = vm.session(session).map_err(s)?.event.pid;
    ensure!(vm.process(pid).unwrap().language.as_str() == "minirb", "paused outside cell 2");
    let stack = vm.restart(session, 0, Some(&cells[1].source)).map_err(s)?;
    ensure!(stack.len() == 1, "restart left {} frames", stack.len());
    ensure!(vm.proceed(session).map_err(s)? == Proceeded::Resumed, "proceed did not resume");
    let result = vm.resume_pipeline(pipeline).map_err(|e| format!("{e:?}"))?;
    let shown = &result.per_cell.last().ok_or("no cells ran")?.2;
    ensure!(*shown == expected, "after restart {shown}");
    Ok(())
}

fn quoted(source: &str) -> String {
    format!("\"{}\"", source.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n"))
}

fn mixed_stacks() -> Check {
    let inner = "def inner():\n    return 1 / 0\ninner()";
    let middle = format!("def middle\n  xeval(\"minipy\", {})\nend\nmiddle", quoted(inner));
    let outer = format!("def outer():\n    return xeval(\"minirb\", {})\nouter()", quoted(&middle));
    let mut vm = Vm::default();
    let events = vm.subscribe();
    let mut d = Dispatcher::new();
    let reply = d.handle_text(&mut vm, &json!({"id": 1, "op": "eval", "params": {"language": "minipy", "source": outer}}).to_string());
    let pid = ProcessId(reply["result"]["pid"].as_u64().ok_or_else(|| format!("eval failed: {reply}"))?);
    ensure!(matches!(settle(&mut vm, pid)?, ProcessState::Suspended(_)), "no trap");
    let session = events
        .try_iter()
        .find_map(|e| match e {
            VmEvent::Trap { session, .. } => Some(session.0),
            _ => None,
        })
        .ok_or("no trap event")?;
    let reply = d.handle_text(&mut vm, &json!({"id": 2, "op": "stack", "params": {"session": session}}).to_string());
    let frames = reply["result"].as_array().ok_or_else(|| format!("stack failed: {reply}"))?;
    let seen: Vec<(String, String)> = frames
        .iter()
        .map(|f| (f["language"].as_str().unwrap_or("").to_string(), f["name"].as_str().unwrap_or("").to_string()))
        .collect();
    let expected: Vec<(String, String)> = [
        ("minipy", "inner"),
        ("minipy", "<string>"),
        ("minirb", "middle"),
        ("minirb", "<main>"),
        ("minipy", "outer"),
        ("minipy", "<string>"),
    ]
    .iter()
    .map(|(l, n)| (l.to_string(), n.to_string()))
    .collect();
    ensure!(seen == expected, "stack {seen:?}");
    Ok(())
}

struct Wire {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    pushes: Vec<Json>,
}

impl Wire {
    fn send(&mut self, text: &str) -> Result<Json, String> {
        writeln!(self.writer, "{text}").map_err(s)?;
        loop {
            let mut line = String::new();
            ensure!(self.reader.read_line(&mut line).map_err(s)? > 0, "connection closed after {text}");
            let m: Json = serde_json::from_str(&line).map_err(s)?;
            if m.get("event").is_some() {
                self.pushes.push(m);
            } else {
                return Ok(m);
            }
        }
    }

    fn push(&mut self, event: &str) -> Result<Json, String> {
        loop {
            if let Some(i) = self.pushes.iter().position(|p| p["event"] == event) {
                return Ok(self.pushes.remove(i));
            }
            let mut line = String::new();
            ensure!(self.reader.read_line(&mut line).map_err(s)? > 0, "connection closed");
            self.pushes.push(serde_json::from_str(&line).map_err(s)?);
        }
    }
}

fn protocol_goldens() -> Check {
    let (vm, _thread) = Vm::spawn_thread(VmConfig::default());
    let server = serve(vm, ServerConfig::default()).map_err(s)?;
    let stream = TcpStream::connect(server.local_addr()).map_err(s)?;
    stream.set_read_timeout(Some(Duration::from_secs(20))).map_err(s)?;
    let mut w = Wire { writer: stream.try_clone().map_err(s)?, reader: BufReader::new(stream), pushes: Vec::new() };
    let mut covered: Vec<String> = Vec::new();
    let golden = |w: &mut Wire, covered: &mut Vec<String>, request: Json, expected: Json| -> Check {
        covered.push(request["op"].as_str().unwrap_or("").to_string());
        let reply = w.send(&request.to_string())?;
        ensure!(reply == expected, "{request} replied {reply}, expected {expected}");
        Ok(())
    };

    let hello = w.send(r#"{"id":1,"op":"hello","params":{}}"#)?;
    ensure!(hello["result"]["version"] == "1" && hello["result"]["languages"].as_array().map(Vec::len) == Some(2), "hello {hello}");
    golden(&mut w, &mut covered, json!({"id":2,"op":"eval","params":{"language":"minipy","source":"1+2","mode":"printIt"}}), json!({"id":2,"result":{"pid":1}}))?;
    let done = w.push("completed")?;
    ensure!(done == json!({"id":0,"event":"completed","pid":1,"transcript":"","display":"3","value":3}), "push {done}");
    golden(&mut w, &mut covered, json!({"id":3,"op":"inspect","params":{"value_ref":"hi"}}),
        json!({"id":3,"result":{"class_name":"Text","display":"'hi'","language":null,"viewer_language":"minipy","slots":[]}}))?;
    golden(&mut w, &mut covered, json!({"id":4,"op":"inspect_eval","params":{"value_ref":[1],"source":"len(it)"}}),
        json!({"id":4,"result":{"display":"1","value":1,"refreshed":{"class_name":"List","display":"[1]","language":null,"viewer_language":"minipy","slots":[{"name":"0","display":"1","value":1}]}}}))?;
    golden(&mut w, &mut covered, json!({"id":5,"op":"processes","params":{}}), json!({"id":5,"result":[{"pid":1,"language":"minipy","state":"Terminated"}]}))?;
    golden(&mut w, &mut covered, json!({"id":6,"op":"eval","params":{"language":"minipy","source":AVERAGE,"mode":"doIt"}}), json!({"id":6,"result":{"pid":2}}))?;
    let trap = w.push("trap")?;
    ensure!(trap == json!({"id":0,"event":"trap","session":1,"pid":2,"title":"ZeroDivisionError: integer division by zero","interrupt":false}), "trap {trap}");
    golden(&mut w, &mut covered, json!({"id":7,"op":"stack","params":{"session":1}}),
        json!({"id":7,"result":[{"index":0,"language":"minipy","name":"average","line":2},{"index":1,"language":"minipy","name":"<string>","line":10}]}))?;
    let frame = w.send(r#"{"id":8,"op":"frame","params":{"session":1,"index":0}}"#)?;
    covered.push("frame".into());
    ensure!(frame["result"]["locals"][0] == json!({"name":"iterable","display":"[]","value":frame["result"]["locals"][0]["value"]}), "frame {frame}");
    golden(&mut w, &mut covered, json!({"id":9,"op":"eval_in_frame","params":{"session":1,"index":0,"source":"len(iterable)"}}), json!({"id":9,"result":{"display":"0","value":0}}))?;
    golden(&mut w, &mut covered, json!({"id":10,"op":"step_over","params":{"session":1}}),
        json!({"id":10,"error":{"code":"not_runnable","message":"an exception is pending; restart a frame or proceed"}}))?;
    golden(&mut w, &mut covered, json!({"id":11,"op":"restart_frame","params":{"session":1,"index":0,"source":GUARDED}}),
        json!({"id":11,"result":[{"index":0,"language":"minipy","name":"average","line":2},{"index":1,"language":"minipy","name":"<string>","line":10}]}))?;
    golden(&mut w, &mut covered, json!({"id":12,"op":"step_over","params":{"session":1}}),
        json!({"id":12,"result":[{"index":0,"language":"minipy","name":"average","line":3},{"index":1,"language":"minipy","name":"<string>","line":10}]}))?;
    golden(&mut w, &mut covered, json!({"id":13,"op":"proceed","params":{"session":1}}), json!({"id":13,"result":{"resumed":true}}))?;
    golden(&mut w, &mut covered, json!({"id":14,"op":"proceed","params":{"session":1}}),
        json!({"id":14,"error":{"code":"session_closed","message":"session 1 is closed"}}))?;
    golden(&mut w, &mut covered, json!({"id":15,"op":"eval","params":{"language":"minirb","source":HOT,"mode":"doIt"}}), json!({"id":15,"result":{"pid":3}}))?;
    golden(&mut w, &mut covered, json!({"id":16,"op":"interrupt","params":{"pid":3}}), json!({"id":16,"result":{"session":2}}))?;
    let trap = w.push("trap")?;
    ensure!(trap["title"] == "User Interrupt" && trap["interrupt"] == true, "trap {trap}");
    golden(&mut w, &mut covered, json!({"id":17,"op":"restart_frame","params":{"session":2,"index":0,"source":"42"}}),
        json!({"id":17,"result":[{"index":0,"language":"minirb","name":"<main>","line":1}]}))?;
    golden(&mut w, &mut covered, json!({"id":18,"op":"set_budget","params":{"quantum":500}}), json!({"id":18,"result":{"previous":10000}}))?;
    golden(&mut w, &mut covered, json!({"id":19,"op":"highlight","params":{"language":"minirb","source":"@x = 1"}}),
        json!({"id":19,"result":[{"kind":"IVar","line":1,"start":0,"end":2},{"kind":"Operator","line":1,"start":3,"end":4},{"kind":"Number","line":1,"start":5,"end":6}]}))?;
    golden(&mut w, &mut covered, json!({"id":20,"op":"pipeline","params":{"cells":[{"language":"minipy","source":"it * 2"},{"language":"minirb","source":"it + 1"}],"initial":20}}),
        json!({"id":20,"result":{"pid":4,"pipeline":1}}))?;
    let cell = w.push("cell")?;
    ensure!(cell == json!({"id":0,"event":"cell","pipeline":1,"pid":4,"index":0,"display":"40"}), "cell push {cell}");
    let finished = loop {
        let p = w.push("completed")?;
        if p.get("pipeline").is_some() {
            break p;
        }
    };
    ensure!(finished == json!({"id":0,"event":"completed","pipeline":1,"pid":5,"display":"41"}), "pipeline push {finished}");

    for (bad, code) in [("{oops", "bad_params"), ("17", "bad_params"), (r#"{"id":30}"#, "bad_params"), (r#"{"id":31,"op":"nope"}"#, "unknown_op")] {
        let reply = w.send(bad)?;
        ensure!(reply["error"]["code"] == code, "{bad} gave {reply}");
    }
    let reply = w.send(r#"{"id":32,"op":"inspect","params":{"value_ref":{"ref":{"lang":"minipy","handle":999999}}}}"#)?;
    ensure!(reply["error"]["code"] == "stale_handle", "stale ref gave {reply}");
    let reply = w.send(r#"{"id":33,"op":"eval","params":{"language":"cobol","source":"1"}}"#)?;
    ensure!(reply["error"]["code"] == "unknown_language", "{reply}");
    let reply = w.send(r#"{"id":34,"op":"eval","params":{"language":"minipy","source":"1 +"}}"#)?;
    ensure!(reply["error"]["code"] == "compile_error", "{reply}");
    let reply = w.send(r#"{"id":35,"op":"hello"}"#)?;
    ensure!(reply["result"]["budget"] == 500, "connection unusable after malformed input: {reply}");

    for op in ["eval", "inspect", "inspect_eval", "processes", "interrupt", "stack", "frame", "eval_in_frame", "restart_frame", "proceed", "step_over", "set_budget", "highlight", "pipeline"] {
        ensure!(covered.iter().any(|c| c == op), "no golden for {op}");
    }
    server.shutdown();
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("pre-unwind trap keeps the raising frame", pre_unwind_trap),
        ("edit-and-continue is deterministic", edit_and_continue),
        ("user interrupt inside a MiniRb loop", user_interrupt),
        ("budget semantics and resumption exactness", budget_semantics),
        ("interrupt latency within one quantum", scheduler_latency),
        ("compilers match the reference evaluator", oracle_equivalence),
        ("boundary conversion properties", conversion_properties),
        ("word-frequency pipeline with restart", word_frequency_pipeline),
        ("mixed-language stacks in nesting order", mixed_stacks),
        ("protocol goldens and malformed input", protocol_goldens),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string())).unwrap_or_default())
        });
        let elapsed = started.elapsed();
        match outcome {
            Ok(()) => println!("criterion {:>2}: PASS  {name} ({elapsed:.2?})", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {name}: {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
