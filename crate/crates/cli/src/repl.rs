//! Line-oriented REPL over one persistent root scope.

use std::io::{self, BufRead, IsTerminal, Write};
use std::process::ExitCode;

use polyvm_core::heap::Scope;
use polyvm_core::mop::inspect_value;
use polyvm_core::plugin::convert;
use polyvm_core::value::LangId;
use polyvm_core::vm::VmConfig;
use polyvm_core::Vm;

use crate::run::run_headless;
use crate::USAGE_ERROR;

const BLOCK_OPENERS: &[&str] = &["def", "class", "while", "if", "unless", "until", "for", "begin"];

/// Whether `line` starts a block that spans more lines.
fn opens_block(line: &str) -> bool {
    let trimmed = line.trim_end();
    let first = trimmed.split_whitespace().next().unwrap_or("");
    trimmed.ends_with(':') || (BLOCK_OPENERS.contains(&first) && !trimmed.ends_with("end"))
}

struct Repl {
    vm: Vm,
    scope: Scope,
    language: LangId,
}

impl Repl {
    fn eval(&mut self, source: &str, out: &mut impl Write) -> io::Result<()> {
        let pid = match self.vm.spawn_with_scope(self.language.as_str(), source, self.scope.clone()) {
            Ok(pid) => pid,
            Err(e) => {
                eprintln!("{e}");
                return Ok(());
            }
        };
        let (result, _) = run_headless(&mut self.vm, pid);
        write!(out, "{}", self.vm.process(pid).map(|p| p.transcript.as_str()).unwrap_or(""))?;
        match result {
            Ok(v) if v.is_nil() => {}
            Ok(v) => writeln!(out, "{}", self.vm.plugins.expect(&self.language).display(&v, &self.vm.heap))?,
            Err(e) => eprintln!("{}", e.title()),
        }
        Ok(())
    }

    fn compiles(&self, source: &str) -> bool {
        self.vm.plugins.expect(&self.language).compile(source).is_ok()
    }

    fn switch(&mut self, id: &str) {
        let Some(to) = self.vm.plugins.lookup(id).map(|p| p.id().clone()) else {
            eprintln!("unknown language '{id}'");
            return;
        };
        for (name, value) in self.scope.entries() {
            let converted = convert(&value, &self.language, &to, &self.vm.policy, &mut self.vm.heap);
            self.scope.set(&name, converted);
        }
        self.language = to;
    }

    fn inspect(&mut self, name: &str, out: &mut impl Write) -> io::Result<()> {
        let Some(value) = self.scope.get(name) else {
            eprintln!("no binding '{name}'");
            return Ok(());
        };
        match inspect_value(&value, &self.language, &self.vm.heap, &self.vm.plugins) {
            Ok(view) => {
                let owner = view.language.as_ref().map(|l| format!(" ({l})")).unwrap_or_default();
                writeln!(out, "{}{owner}: {}", view.class_name, view.display)?;
                let plugin = self.vm.plugins.expect(&self.language);
                for (slot, v) in &view.slots {
                    writeln!(out, "  {slot} = {}", plugin.display(v, &self.vm.heap))?;
                }
            }
            Err(e) => eprintln!("{e}"),
        }
        Ok(())
    }
}

pub fn repl(language: &str, config: VmConfig) -> ExitCode {
    let vm = Vm::new(config);
    let Some(language) = vm.plugins.lookup(language).map(|p| p.id().clone()) else {
        eprintln!("error: unknown language '{language}'");
        return ExitCode::from(USAGE_ERROR);
    };
    let mut repl = Repl { vm, scope: Scope::new(), language };
    match session(&mut repl) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn session(repl: &mut Repl) -> io::Result<()> {
    let interactive = io::stdin().is_terminal();
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    let mut out = io::stdout();
    loop {
        if interactive {
            write!(out, "{}> ", repl.language)?;
            out.flush()?;
        }
        let Some(line) = lines.next().transpose()? else { return Ok(()) };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(command) = trimmed.strip_prefix(':') {
            let mut parts = command.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some("lang"), Some(id)) => repl.switch(id),
                (Some("inspect"), Some(name)) => repl.inspect(name, &mut out)?,
                (Some("quit" | "q"), None) => return Ok(()),
                _ => eprintln!("commands: :lang <id>, :inspect <name>, :quit"),
            }
            continue;
        }
        let mut source = line.clone();
        if opens_block(&line) {
            loop {
                if interactive {
                    write!(out, "... ")?;
                    out.flush()?;
                }
                match lines.next().transpose()? {
                    Some(more) if !more.trim().is_empty() => {
                        source.push('\n');
                        source.push_str(&more);
                        if more.trim() == "end" && repl.compiles(&source) {
                            break;
                        }
                    }
                    _ => break,
                }
            }
        }
        repl.eval(&source, &mut out)?;
        out.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_detection() {
        assert!(opens_block("def f(x):"));
        assert!(opens_block("def f(x)"));
        assert!(!opens_block("def f(x) = 1 end"));
        assert!(opens_block("while n < 3"));
        assert!(!opens_block("x = 1"));
    }
}
