//! Request/reply and push transcripts against a live server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::Duration;

use polyvm_core::{Vm, VmConfig, VmHandle};
use polyvm_service::{serve, ServeError, Server, ServerConfig};
use serde_json::{json, Value as Json};

const WAIT: Duration = Duration::from_secs(10);

fn start() -> (VmHandle, Server) {
    let (vm, _) = Vm::spawn_thread(VmConfig::default());
    let server = serve(vm.clone(), ServerConfig::default()).expect("server starts");
    (vm, server)
}

struct Client {
    writer: TcpStream,
    incoming: Receiver<Json>,
    pushes: Vec<Json>,
    next_id: u64,
}

impl Client {
    fn connect(server: &Server) -> Client {
        let stream = TcpStream::connect(server.local_addr()).unwrap();
        let reader = BufReader::new(stream.try_clone().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if tx.send(serde_json::from_str(&line).expect("server sends JSON")).is_err() {
                    break;
                }
            }
        });
        Client { writer: stream, incoming: rx, pushes: Vec::new(), next_id: 1 }
    }

    fn send_raw(&mut self, text: &str) {
        self.writer.write_all(text.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    fn recv(&mut self) -> Json {
        self.incoming.recv_timeout(WAIT).expect("a message arrives")
    }

    /// Next message that is not a push.
    fn reply(&mut self) -> Json {
        loop {
            let m = self.recv();
            if m.get("event").is_some() {
                self.pushes.push(m);
            } else {
                return m;
            }
        }
    }

    fn request(&mut self, op: &str, params: Json) -> Json {
        let id = self.next_id;
        self.next_id += 1;
        self.send_raw(&json!({ "id": id, "op": op, "params": params }).to_string());
        let reply = self.reply();
        assert_eq!(reply["id"], id, "reply correlates: {reply}");
        reply
    }

    fn ok(&mut self, op: &str, params: Json) -> Json {
        let reply = self.request(op, params);
        assert!(reply.get("error").is_none(), "{op} failed: {reply}");
        reply["result"].clone()
    }

    fn error_code(&mut self, op: &str, params: Json) -> String {
        let reply = self.request(op, params);
        reply["error"]["code"].as_str().unwrap_or_else(|| panic!("{op} should fail: {reply}")).to_string()
    }

    fn push(&mut self, pred: impl Fn(&Json) -> bool) -> Json {
        if let Some(i) = self.pushes.iter().position(&pred) {
            return self.pushes.remove(i);
        }
        loop {
            let m = self.recv();
            if m.get("event").is_some() && pred(&m) {
                return m;
            }
            if m.get("event").is_some() {
                self.pushes.push(m);
            }
        }
    }

    fn completed(&mut self, pid: &Json) -> Json {
        let pid = pid.clone();
        self.push(move |m| m["event"] == "completed" && m["pid"] == pid && m.get("pipeline").is_none())
    }

    fn trap(&mut self, pid: &Json) -> Json {
        let pid = pid.clone();
        self.push(move |m| m["event"] == "trap" && m["pid"] == pid)
    }
}

const LOOP: &str = "n = 0\nwhile True:\n    n += 1";

#[test]
fn hello() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let reply = c.request("hello", json!({}));
    assert_eq!(
        reply,
        json!({"id": 1, "result": {
            "version": "1",
            "budget": 10000,
            "languages": [
                {"id": "minipy", "name": "MiniPy", "extension": ".mpy",
                 "capabilities": ["compile", "step", "display", "tokenize", "reflect", "invoke"]},
                {"id": "minirb", "name": "MiniRb", "extension": ".mrb",
                 "capabilities": ["compile", "step", "display", "tokenize", "reflect", "invoke"]},
            ],
        }})
    );
}

#[test]
fn eval_print_it() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let reply = c.request("eval", json!({"language": "minipy", "source": "1+2", "mode": "printIt"}));
    assert_eq!(reply, json!({"id": 1, "result": {"pid": 1}}));
    let push = c.completed(&json!(1));
    assert_eq!(push, json!({"id": 0, "event": "completed", "pid": 1, "transcript": "", "display": "3", "value": 3}));
}

#[test]
fn eval_do_it_has_no_display() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let pid = c.ok("eval", json!({"language": "minirb", "source": "puts 'hi'\n5", "mode": "doIt"}))["pid"].clone();
    let push = c.completed(&pid);
    assert_eq!(push, json!({"id": 0, "event": "completed", "pid": pid, "transcript": "hi\n"}));
}

#[test]
fn eval_errors() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    assert_eq!(c.error_code("eval", json!({"language": "cobol", "source": "1"})), "unknown_language");
    assert_eq!(c.error_code("eval", json!({"language": "minipy", "source": "1 +"})), "compile_error");
    assert_eq!(c.error_code("eval", json!({"language": "minipy", "source": "1", "mode": "shout"})), "bad_params");
    assert_eq!(c.error_code("eval", json!({"language": "minipy"})), "bad_params");
}

#[test]
fn inspect_an_object() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let src = "class Point:\n    def __init__(self, x, y):\n        self.x = x\n        self.y = y\nPoint(3, 'a')";
    let pid = c.ok("eval", json!({"language": "minipy", "source": src}))["pid"].clone();
    let value = c.completed(&pid)["value"].clone();
    assert_eq!(value["ref"]["lang"], "minipy");
    let view = c.ok("inspect", json!({"value_ref": value}));
    assert_eq!(view["class_name"], "Point");
    assert_eq!(view["language"], "minipy");
    assert_eq!(view["viewer_language"], "minipy");
    assert_eq!(
        view["slots"],
        json!([{"name": "x", "display": "3", "value": 3}, {"name": "y", "display": "'a'", "value": "a"}])
    );
    let rb_view = c.ok("inspect", json!({"value_ref": value, "viewer": "minirb"}));
    assert_eq!(rb_view["viewer_language"], "minirb");
    assert_eq!(rb_view["slots"][1]["display"], "\"a\"");
}

#[test]
fn inspect_scalars_and_stale_handles() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let view = c.ok("inspect", json!({"value_ref": 42}));
    assert_eq!(
        view,
        json!({"class_name": "Int", "display": "42", "language": null, "viewer_language": "minipy", "slots": []})
    );
    let code = c.error_code("inspect", json!({"value_ref": {"ref": {"lang": "minipy", "handle": 4000000}}}));
    assert_eq!(code, "stale_handle");
    assert_eq!(c.error_code("inspect", json!({})), "bad_params");
}

#[test]
fn inspect_eval_refreshes() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let pid = c.ok("eval", json!({"language": "minipy", "source": "[1, 2]"}))["pid"].clone();
    let value = c.completed(&pid)["value"].clone();
    let result = c.ok("inspect_eval", json!({"value_ref": value, "source": "it.append(3)\nlen(it)"}));
    assert_eq!(result["display"], "3");
    assert_eq!(result["refreshed"]["display"], "[1, 2, 3]");
    assert_eq!(result["refreshed"]["slots"].as_array().unwrap().len(), 3);
    let again = c.ok("inspect", json!({"value_ref": value}));
    assert_eq!(again["display"], "[1, 2, 3]");
    let failed = c.ok("inspect_eval", json!({"value_ref": value, "source": "it[10]"}));
    assert_eq!(failed["error"]["class"], "IndexError");
    assert_eq!(failed["refreshed"]["display"], "[1, 2, 3]");
    assert_eq!(c.error_code("inspect_eval", json!({"value_ref": value, "source": "("})), "compile_error");
}

#[test]
fn processes_lists_states() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let pid = c.ok("eval", json!({"language": "minipy", "source": "1"}))["pid"].clone();
    c.completed(&pid);
    let list = c.ok("processes", json!({}));
    assert_eq!(list, json!([{"pid": 1, "language": "minipy", "state": "Terminated"}]));
}

#[test]
fn interrupt_and_debug_a_loop() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let pid = c.ok("eval", json!({"language": "minipy", "source": LOOP}))["pid"].clone();
    thread::sleep(Duration::from_millis(20));
    let session = c.ok("interrupt", json!({"pid": pid}))["session"].clone();
    let trap = c.trap(&pid);
    assert_eq!(
        trap,
        json!({"id": 0, "event": "trap", "session": session, "pid": pid, "title": "User Interrupt", "interrupt": true})
    );

    let list = c.ok("processes", json!({}));
    assert_eq!(list[0]["state"], "Suspended");
    assert_eq!(list[0]["session"], session);
    let line = list[0]["current_line"].as_u64().unwrap();
    assert!((2..=3).contains(&line), "line {line}");

    let stack = c.ok("stack", json!({"session": session}));
    assert_eq!(stack.as_array().unwrap().len(), 1);
    assert_eq!(stack[0]["index"], 0);
    assert_eq!(stack[0]["language"], "minipy");
    assert_eq!(stack[0]["name"], "<string>");

    let frame = c.ok("frame", json!({"session": session, "index": 0}));
    assert_eq!(frame["source"], LOOP);
    assert_eq!(frame["locals"][0]["name"], "n");
    assert!(frame["locals"][0]["value"].as_i64().unwrap() >= 0);
    assert!(frame["pseudo"].is_array());

    let n = c.ok("eval_in_frame", json!({"session": session, "index": 0, "source": "n * 0 + 5"}));
    assert_eq!(n, json!({"display": "5", "value": 5}));
    let err = c.ok("eval_in_frame", json!({"session": session, "index": 0, "source": "n / 0"}));
    assert_eq!(err["error"]["class"], "ZeroDivisionError");

    let stepped = c.ok("step_over", json!({"session": session}));
    assert_eq!(stepped[0]["name"], "<string>");

    assert_eq!(c.error_code("frame", json!({"session": session, "index": 5})), "bad_params");
    assert_eq!(c.error_code("stack", json!({"session": 999})), "bad_params");

    let restarted = c.ok("restart_frame", json!({"session": session, "index": 0, "source": "print('swapped')\n7"}));
    assert_eq!(restarted[0]["line"], 1);
    assert_eq!(c.ok("proceed", json!({"session": session})), json!({"resumed": true}));
    let done = c.completed(&pid);
    assert_eq!(done["transcript"], "swapped\n");
    assert_eq!(done["display"], "7");
    assert_eq!(c.error_code("proceed", json!({"session": session})), "session_closed");
    assert_eq!(c.error_code("interrupt", json!({"pid": pid})), "not_runnable");
}

#[test]
fn exception_trap_then_proceed() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let src = "def average(iterable):\n    return sum(iterable) / len(iterable)\naverage([])";
    let src = src.replace("sum(iterable)", "0");
    let pid = c.ok("eval", json!({"language": "minipy", "source": src}))["pid"].clone();
    let trap = c.trap(&pid);
    assert_eq!(trap["interrupt"], false);
    assert_eq!(trap["title"], "ZeroDivisionError: integer division by zero");
    let session = trap["session"].clone();
    let stack = c.ok("stack", json!({"session": session}));
    assert_eq!(
        stack,
        json!([
            {"index": 0, "language": "minipy", "name": "average", "line": 2},
            {"index": 1, "language": "minipy", "name": "<string>", "line": 3},
        ])
    );
    assert_eq!(c.error_code("step_over", json!({"session": session})), "not_runnable");
    assert_eq!(
        c.error_code("restart_frame", json!({"session": session, "index": 0, "source": "def average(:"})),
        "compile_error"
    );
    let reply = c.ok("proceed", json!({"session": session}));
    assert_eq!(
        reply,
        json!({
            "result_display": "ZeroDivisionError: integer division by zero",
            "exception": {"class": "ZeroDivisionError", "message": "integer division by zero"},
        })
    );
    let done = c.completed(&pid);
    assert_eq!(done["exception"], json!({"class": "ZeroDivisionError", "message": "integer division by zero"}));
}

#[test]
fn mixed_stack_carries_languages() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let src = "def outer():\n    return xeval('minirb', 'def inner\\n  1 / 0\\nend\\ninner')\nouter()";
    let pid = c.ok("eval", json!({"language": "minipy", "source": src}))["pid"].clone();
    let session = c.trap(&pid)["session"].clone();
    let stack = c.ok("stack", json!({"session": session}));
    let languages: Vec<&str> = stack.as_array().unwrap().iter().map(|f| f["language"].as_str().unwrap()).collect();
    assert_eq!(languages, ["minirb", "minirb", "minipy", "minipy"]);
}

#[test]
fn set_budget() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    assert_eq!(c.request("set_budget", json!({"quantum": 7})), json!({"id": 1, "result": {"previous": 10000}}));
    assert_eq!(c.ok("set_budget", json!({"quantum": 10000})), json!({"previous": 7}));
    assert_eq!(c.error_code("set_budget", json!({"quantum": 0})), "bad_params");
    assert_eq!(c.error_code("set_budget", json!({"quantum": "lots"})), "bad_params");
}

#[test]
fn highlight() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let reply = c.request("highlight", json!({"language": "minirb", "source": "@x = 1"}));
    assert_eq!(
        reply,
        json!({"id": 1, "result": [
            {"kind": "IVar", "line": 1, "start": 0, "end": 2},
            {"kind": "Operator", "line": 1, "start": 3, "end": 4},
            {"kind": "Number", "line": 1, "start": 5, "end": 6},
        ]})
    );
    let py = c.ok("highlight", json!({"language": "minipy", "source": "def f():\n    return 'x'"}));
    let kinds: Vec<&str> = py.as_array().unwrap().iter().map(|t| t["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["Keyword", "Identifier", "Punctuation", "Punctuation", "Punctuation", "Keyword", "Text"]);
    assert_eq!(py[6], json!({"kind": "Text", "line": 2, "start": 11, "end": 14}));
    assert_eq!(c.error_code("highlight", json!({"language": "nope", "source": ""})), "unknown_language");
}

#[test]
fn pipeline_pushes_cells_then_completion() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let cells = json!([{"language": "minipy", "source": "it + 1"}, {"language": "minirb", "source": "it * 2"}]);
    let reply = c.ok("pipeline", json!({"cells": cells, "initial": 1}));
    assert_eq!(reply["pipeline"], 1);
    let first = c.push(|m| m["event"] == "cell" && m["index"] == 0);
    assert_eq!(first["display"], "2");
    assert_eq!(first["pid"], reply["pid"]);
    let second = c.push(|m| m["event"] == "cell" && m["index"] == 1);
    assert_eq!(second["display"], "4");
    let done = c.push(|m| m["event"] == "completed" && m["pipeline"] == 1);
    assert_eq!(done, json!({"id": 0, "event": "completed", "pipeline": 1, "pid": second["pid"], "display": "4"}));

    assert_eq!(c.error_code("pipeline", json!({"cells": []})), "bad_params");
    assert_eq!(c.error_code("pipeline", json!({"cells": [{"language": "x", "source": "1"}]})), "unknown_language");
    assert_eq!(c.error_code("pipeline", json!({"cells": [{"language": "minipy", "source": "("}]})), "compile_error");
    assert_eq!(c.error_code("pipeline", json!({"cells": "nope"})), "bad_params");
}

#[test]
fn malformed_input_never_disconnects() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    c.send_raw("{not json");
    let reply = c.reply();
    assert_eq!(reply["id"], 0);
    assert_eq!(reply["error"]["code"], "bad_params");
    c.send_raw("[1, 2, 3]");
    assert_eq!(c.reply()["error"]["code"], "bad_params");
    c.send_raw(r#"{"id": 5}"#);
    assert_eq!(c.reply(), json!({"id": 5, "error": {"code": "bad_params", "message": "missing op"}}));
    c.send_raw(r#"{"id": 6, "op": "hello", "params": 3}"#);
    assert_eq!(c.reply()["error"]["code"], "bad_params");
    c.send_raw(r#"{"id": -1, "op": "hello"}"#);
    assert_eq!(c.reply()["id"], 0);
    c.writer.write_all(b"\xff\xfe\n").unwrap();
    assert_eq!(c.reply()["error"]["code"], "bad_params");
    assert_eq!(c.error_code("teleport", json!({})), "unknown_op");
    assert_eq!(c.ok("hello", json!({}))["version"], "1");
}

#[test]
fn replies_keep_request_order() {
    let (_vm, server) = start();
    let mut c = Client::connect(&server);
    let mut batch = String::new();
    for id in 1..=50 {
        batch.push_str(&json!({"id": id, "op": "highlight", "params": {"language": "minipy", "source": "x"}}).to_string());
        batch.push('\n');
    }
    c.writer.write_all(batch.as_bytes()).unwrap();
    for id in 1..=50 {
        assert_eq!(c.reply()["id"], id);
    }
    assert!(c.incoming.recv_timeout(Duration::from_millis(100)).is_err(), "no extra replies");
}

#[test]
fn traps_are_broadcast() {
    let (_vm, server) = start();
    let mut a = Client::connect(&server);
    let mut b = Client::connect(&server);
    b.ok("hello", json!({}));
    let pid = a.ok("eval", json!({"language": "minirb", "source": "1 / 0"}))["pid"].clone();
    let ta = a.trap(&pid);
    let tb = b.trap(&pid);
    assert_eq!(ta, tb);
    assert_eq!(ta["title"], "ZeroDivisionError: integer division by zero");
}

#[test]
fn websocket_clients_speak_the_same_protocol() {
    let (_vm, server) = start();
    let url = format!("ws://{}/", server.local_addr());
    let (mut ws, _) = tungstenite::connect(url).expect("handshake");
    ws.send(tungstenite::Message::text(r#"{"id": 3, "op": "eval", "params": {"language": "minipy", "source": "6 * 7"}}"#))
        .unwrap();
    let mut seen = Vec::new();
    while seen.len() < 2 {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            seen.push(serde_json::from_str::<Json>(&t).unwrap());
        }
    }
    assert_eq!(seen[0], json!({"id": 3, "result": {"pid": 1}}));
    assert_eq!(seen[1]["event"], "completed");
    assert_eq!(seen[1]["display"], "42");
    ws.send(tungstenite::Message::text("nonsense")).unwrap();
    loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            let m: Json = serde_json::from_str(&t).unwrap();
            assert_eq!(m["id"], 0);
            assert_eq!(m["error"]["code"], "bad_params");
            break;
        }
    }
}

fn http_get(server: &Server, path: &str) -> String {
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn static_assets_over_http() {
    let (_vm, server) = start();
    let index = http_get(&server, "/");
    assert!(index.starts_with("HTTP/1.1 200 OK\r\n"), "{index}");
    assert!(index.contains("Content-Type: text/html"));
    assert!(index.contains("<title>polyvm</title>"));
    let missing = http_get(&server, "/nothing-here.js");
    assert!(missing.starts_with("HTTP/1.1 404"));
    let escape = http_get(&server, "/../Cargo.toml");
    assert!(escape.starts_with("HTTP/1.1 404"));
}

#[test]
fn static_assets_from_a_directory() {
    let dir = std::env::temp_dir().join(format!("polyvm-assets-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "<p>custom</p>").unwrap();
    std::fs::write(dir.join("app.js"), "let x = 1;").unwrap();
    let (vm, _) = Vm::spawn_thread(VmConfig::default());
    let server = serve(vm, ServerConfig { port: 0, assets: Some(dir.clone()) }).unwrap();
    assert!(http_get(&server, "/").ends_with("<p>custom</p>"));
    let js = http_get(&server, "/app.js");
    assert!(js.contains("Content-Type: text/javascript"));
    assert!(js.ends_with("let x = 1;"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn busy_port_is_reported() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    let (vm, _) = Vm::spawn_thread(VmConfig::default());
    match serve(vm, ServerConfig { port, assets: None }) {
        Err(ServeError::PortInUse(p)) => assert_eq!(p, port),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("bound a busy port"),
    }
}

#[test]
fn shutdown_stops_accepting() {
    let (_vm, server) = start();
    let addr = server.local_addr();
    server.shutdown();
    thread::sleep(Duration::from_millis(50));
    assert!(TcpStream::connect(addr).is_err());
}
