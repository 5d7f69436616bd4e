//! Seeded random programs rendered in both surface languages.
//!
//! Programs are built over a small abstract syntax that maps one to one onto
//! MiniPy and MiniRb. Loops are always bounded: `while` loops run on a
//! counter incremented first thing in the body and `for` loops walk fresh list
//! literals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lang {
    Py,
    Rb,
}

impl Lang {
    pub fn id(self) -> &'static str {
        match self {
            Lang::Py => "minipy",
            Lang::Rb => "minirb",
        }
    }
}

/// Which features the generator may use.
#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub division: bool,
    pub out_of_range: bool,
    pub exceptions: bool,
    pub functions: bool,
    pub classes: bool,
    pub max_stmts: usize,
}

impl GenConfig {
    /// Everything the generator knows.
    pub fn full() -> Self {
        GenConfig { division: true, out_of_range: true, exceptions: true, functions: true, classes: true, max_stmts: 12 }
    }

    /// Programs whose results agree across the two languages: no division,
    /// no indexing past the end and no raised errors.
    pub fn portable() -> Self {
        GenConfig { division: false, out_of_range: false, exceptions: false, functions: true, classes: true, max_stmts: 12 }
    }
}

#[derive(Clone, Debug)]
enum E {
    Int(i64),
    Text(&'static str),
    Var(String),
    Bin(&'static str, Box<E>, Box<E>),
    Cmp(&'static str, Box<E>, Box<E>),
    And(Box<E>, Box<E>),
    Or(Box<E>, Box<E>),
    Not(Box<E>),
    List(Vec<E>),
    Index(Box<E>, Box<E>),
    Len(Box<E>),
    Call(String, Vec<E>),
    New(&'static str, Vec<E>),
    Method(Box<E>, &'static str, Vec<E>),
    Field(&'static str),
    Message(String),
}

#[derive(Clone, Debug)]
enum S {
    Assign(String, E),
    AddTo(String, E),
    Print(E),
    Append(String, E),
    If(E, Vec<S>, Vec<S>),
    While(String, i64, Vec<S>),
    For(String, E, Vec<S>),
    Try { body: Vec<S>, class: Option<&'static str>, bind: Option<String>, handler: Vec<S>, finally: Option<Vec<S>> },
    Raise(&'static str, &'static str),
    Break,
    Return(E),
    SetField(&'static str, E),
    Func(String, Vec<String>, Vec<S>),
    Class,
    Expr(E),
}

const CLASS: &str = "Acc";

/// A generated program in both languages.
#[derive(Clone, Debug)]
pub struct Generated {
    pub seed: u64,
    pub py: String,
    pub rb: String,
}

impl Generated {
    pub fn source(&self, lang: Lang) -> &str {
        match lang {
            Lang::Py => &self.py,
            Lang::Rb => &self.rb,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ty {
    Int,
    /// A loop counter: readable as an int but never assigned.
    Counter,
    List,
    Obj,
}

struct Gen {
    rng: ChaCha8Rng,
    config: GenConfig,
    vars: Vec<(String, Ty)>,
    funcs: Vec<(String, usize)>,
    has_class: bool,
    next_name: usize,
    loop_depth: usize,
    in_function: bool,
}

pub fn generate(seed: u64, config: GenConfig) -> Generated {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        config,
        vars: Vec::new(),
        funcs: Vec::new(),
        has_class: false,
        next_name: 0,
        loop_depth: 0,
        in_function: false,
    };
    let program = g.program();
    Generated { seed, py: render(&program, Lang::Py), rb: render(&program, Lang::Rb) }
}

impl Gen {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next_name += 1;
        format!("{}{}", prefix, self.next_name)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn program(&mut self) -> Vec<S> {
        let mut out = Vec::new();
        if self.config.classes && self.chance(0.4) {
            out.push(S::Class);
            self.has_class = true;
        }
        if self.config.functions {
            for _ in 0..self.rng.gen_range(0..=2) {
                out.push(self.function());
            }
        }
        for _ in 0..2 {
            let name = self.fresh("v");
            let e = self.int_expr(1);
            out.push(S::Assign(name.clone(), e));
            self.vars.push((name, Ty::Int));
        }
        let n = self.rng.gen_range(1..=self.config.max_stmts);
        for _ in 0..n {
            let s = self.stmt(0);
            out.push(s);
        }
        let finals: Vec<E> = self
            .vars
            .iter()
            .filter(|(_, t)| *t != Ty::Obj)
            .map(|(v, _)| E::Var(v.clone()))
            .collect();
        out.push(S::Expr(E::List(finals)));
        out
    }

    fn function(&mut self) -> S {
        let name = self.fresh("f");
        let arity = self.rng.gen_range(1..=2);
        let params: Vec<String> = (0..arity).map(|_| self.fresh("p")).collect();
        let saved = std::mem::replace(&mut self.vars, params.iter().map(|p| (p.clone(), Ty::Int)).collect());
        let saved_class = std::mem::replace(&mut self.has_class, false);
        self.in_function = true;
        let mut body = Vec::new();
        for _ in 0..self.rng.gen_range(0..=3) {
            let s = self.stmt(1);
            body.push(s);
        }
        let r = self.int_expr(2);
        body.push(S::Return(r));
        self.in_function = false;
        self.vars = saved;
        self.has_class = saved_class;
        self.funcs.push((name.clone(), arity));
        S::Func(name, params, body)
    }

    fn int_var(&mut self) -> Option<String> {
        let ints: Vec<&String> =
            self.vars.iter().filter(|(_, t)| matches!(t, Ty::Int | Ty::Counter)).map(|(v, _)| v).collect();
        ints.choose(&mut self.rng).map(|s| s.to_string())
    }

    fn var_of(&mut self, ty: Ty) -> Option<String> {
        let vs: Vec<&String> = self.vars.iter().filter(|(_, t)| *t == ty).map(|(v, _)| v).collect();
        vs.choose(&mut self.rng).map(|s| s.to_string())
    }

    fn block(&mut self, depth: usize) -> Vec<S> {
        let n = self.rng.gen_range(1..=3);
        (0..n).map(|_| self.stmt(depth + 1)).collect()
    }

    fn stmt(&mut self, depth: usize) -> S {
        let nested = depth < 2;
        loop {
            match self.rng.gen_range(0..14) {
                0 | 1 => {
                    let e = self.int_expr(2);
                    if let Some(v) = self.var_of(Ty::Int).filter(|_| self.chance(0.5)) {
                        return S::Assign(v, e);
                    }
                    let v = self.fresh("v");
                    self.vars.push((v.clone(), Ty::Int));
                    return S::Assign(v, e);
                }
                2 => {
                    if let Some(v) = self.var_of(Ty::Int) {
                        let e = self.int_expr(1);
                        return S::AddTo(v, e);
                    }
                }
                3 => {
                    let e = self.any_expr(2);
                    return S::Print(e);
                }
                4 => {
                    let e = self.list_expr(1);
                    let v = self.fresh("l");
                    self.vars.push((v.clone(), Ty::List));
                    return S::Assign(v, e);
                }
                5 => {
                    if let Some(v) = self.var_of(Ty::List) {
                        let e = self.int_expr(1);
                        return S::Append(v, e);
                    }
                }
                6 if nested => {
                    let c = self.bool_expr(2);
                    let then = self.scoped_block(depth);
                    let orelse = if self.chance(0.5) { self.scoped_block(depth) } else { Vec::new() };
                    return S::If(c, then, orelse);
                }
                7 if nested => {
                    let counter = self.fresh("i");
                    let bound = self.rng.gen_range(0..5);
                    self.loop_depth += 1;
                    let saved = self.vars.clone();
                    self.vars.push((counter.clone(), Ty::Counter));
                    let body = self.block(depth);
                    self.vars = saved;
                    self.loop_depth -= 1;
                    return S::While(counter, bound, body);
                }
                8 if nested => {
                    let var = self.fresh("x");
                    let n = self.rng.gen_range(0..4);
                    let items = E::List((0..n).map(|_| self.int_expr(1)).collect());
                    self.loop_depth += 1;
                    let saved = self.vars.clone();
                    self.vars.push((var.clone(), Ty::Counter));
                    let body = self.block(depth);
                    self.vars = saved;
                    self.loop_depth -= 1;
                    return S::For(var, items, body);
                }
                9 if self.loop_depth > 0 && self.chance(0.3) => {
                    let c = self.bool_expr(1);
                    return S::If(c, vec![S::Break], Vec::new());
                }
                10 if nested && self.config.exceptions => return self.try_stmt(depth),
                11 if self.config.exceptions && self.chance(0.3) => {
                    let class = *["ValueError", "RuntimeError", "KeyError"].choose(&mut self.rng).unwrap();
                    let msg = *["bad", "oops", "no way"].choose(&mut self.rng).unwrap();
                    let c = self.bool_expr(1);
                    return S::If(c, vec![S::Raise(class, msg)], Vec::new());
                }
                12 if self.has_class && !self.in_function => {
                    let e = self.int_expr(1);
                    let v = self.fresh("o");
                    self.vars.push((v.clone(), Ty::Obj));
                    return S::Assign(v, E::New(CLASS, vec![e]));
                }
                13 => {
                    if let Some(o) = self.var_of(Ty::Obj) {
                        let e = self.int_expr(1);
                        return S::Expr(E::Method(Box::new(E::Var(o)), "add", vec![e]));
                    }
                }
                _ => {}
            }
        }
    }

    /// A nested block whose new variables do not leak, since they may be
    /// unbound when the block is skipped.
    fn scoped_block(&mut self, depth: usize) -> Vec<S> {
        let saved = self.vars.clone();
        let b = self.block(depth);
        self.vars = saved;
        b
    }

    fn try_stmt(&mut self, depth: usize) -> S {
        let body = self.scoped_block(depth);
        let class = match self.rng.gen_range(0..4) {
            0 => None,
            1 => Some("ValueError"),
            2 => Some("ZeroDivisionError"),
            _ => Some("RuntimeError"),
        };
        let bind = (class.is_some() && self.chance(0.5)).then(|| self.fresh("e"));
        let mut handler = self.scoped_block(depth);
        if let Some(b) = &bind {
            handler.insert(0, S::Print(E::Message(b.clone())));
        }
        let finally = if self.chance(0.4) { Some(self.scoped_block(depth)) } else { None };
        S::Try { body, class, bind, handler, finally }
    }

    fn int_expr(&mut self, depth: usize) -> E {
        let leaf = depth == 0 || self.chance(0.3);
        if leaf {
            return match self.rng.gen_range(0..3) {
                0 => E::Int(self.rng.gen_range(-9..=20)),
                _ => match self.int_var() {
                    Some(v) => E::Var(v),
                    None => E::Int(self.rng.gen_range(0..10)),
                },
            };
        }
        match self.rng.gen_range(0..10) {
            0..=4 => {
                let ops: &[&'static str] = if self.config.division { &["+", "-", "*", "%", "/"] } else { &["+", "-", "*"] };
                let op = *ops.choose(&mut self.rng).unwrap();
                let a = self.int_expr(depth - 1);
                let b = if matches!(op, "/" | "%") && self.chance(0.8) {
                    E::Int(*[-4, -3, 2, 3, 5, 7].choose(&mut self.rng).unwrap())
                } else {
                    self.int_expr(depth - 1)
                };
                E::Bin(op, Box::new(a), Box::new(b))
            }
            5 => E::Len(Box::new(self.list_expr(depth - 1))),
            6 => match self.var_of(Ty::List) {
                Some(l) if self.config.out_of_range => {
                    let i = self.rng.gen_range(-3..4);
                    E::Index(Box::new(E::Var(l)), Box::new(E::Int(i)))
                }
                _ => {
                    let n = self.rng.gen_range(1..4);
                    let items = (0..n).map(|_| self.int_expr(depth - 1)).collect();
                    let i = self.rng.gen_range(-(n as i64)..n as i64);
                    E::Index(Box::new(E::List(items)), Box::new(E::Int(i)))
                }
            },
            7 => match self.funcs.choose(&mut self.rng).cloned() {
                Some((f, n)) => E::Call(f, (0..n).map(|_| self.int_expr(depth - 1)).collect()),
                None => self.int_expr(depth - 1),
            },
            8 => match self.var_of(Ty::Obj) {
                Some(o) => E::Method(Box::new(E::Var(o)), "get", Vec::new()),
                None => self.int_expr(depth - 1),
            },
            _ => self.int_expr(depth - 1),
        }
    }

    fn bool_expr(&mut self, depth: usize) -> E {
        match self.rng.gen_range(0..6) {
            0 if depth > 0 => E::And(Box::new(self.bool_expr(depth - 1)), Box::new(self.bool_expr(depth - 1))),
            1 if depth > 0 => E::Or(Box::new(self.bool_expr(depth - 1)), Box::new(self.bool_expr(depth - 1))),
            2 if depth > 0 => E::Not(Box::new(self.bool_expr(depth - 1))),
            _ => {
                let op = *["<", "<=", ">", ">=", "==", "!="].choose(&mut self.rng).unwrap();
                let a = self.int_expr(1);
                let b = self.int_expr(1);
                E::Cmp(op, Box::new(a), Box::new(b))
            }
        }
    }

    fn list_expr(&mut self, depth: usize) -> E {
        if depth > 0 && self.chance(0.3) {
            let a = self.list_expr(depth - 1);
            let b = self.list_expr(depth - 1);
            return E::Bin("+", Box::new(a), Box::new(b));
        }
        if self.chance(0.3) {
            if let Some(l) = self.var_of(Ty::List) {
                return E::Var(l);
            }
        }
        let n = self.rng.gen_range(0..4);
        E::List((0..n).map(|_| self.int_expr(depth.min(1))).collect())
    }

    fn any_expr(&mut self, depth: usize) -> E {
        match self.rng.gen_range(0..4) {
            0 => self.list_expr(depth),
            1 => self.bool_expr(depth),
            2 => E::Text(["hi", "a b", ""].choose(&mut self.rng).unwrap()),
            _ => self.int_expr(depth),
        }
    }
}

fn render(program: &[S], lang: Lang) -> String {
    let mut out = String::new();
    for s in program {
        stmt(&mut out, s, 0, lang);
    }
    out
}

fn line(out: &mut String, indent: usize, text: &str) {
    for _ in 0..indent {
        out.push_str("  ");
    }
    out.push_str(text);
    out.push('\n');
}

fn body(out: &mut String, stmts: &[S], indent: usize, lang: Lang) {
    if stmts.is_empty() && lang == Lang::Py {
        line(out, indent, "pass");
    }
    for s in stmts {
        stmt(out, s, indent, lang);
    }
}

fn stmt(out: &mut String, s: &S, indent: usize, lang: Lang) {
    let py = lang == Lang::Py;
    match s {
        S::Assign(v, e) => line(out, indent, &format!("{} = {}", v, expr(e, lang))),
        S::AddTo(v, e) => line(out, indent, &format!("{} += {}", v, expr(e, lang))),
        S::Print(e) => {
            let f = if py { "print" } else { "puts" };
            line(out, indent, &format!("{}({})", f, expr(e, lang)))
        }
        S::Append(v, e) => {
            let m = if py { "append" } else { "push" };
            line(out, indent, &format!("{}.{}({})", v, m, expr(e, lang)))
        }
        S::If(c, then, orelse) => {
            line(out, indent, &format!("if {}{}", expr(c, lang), if py { ":" } else { "" }));
            body(out, then, indent + 1, lang);
            if !orelse.is_empty() {
                line(out, indent, if py { "else:" } else { "else" });
                body(out, orelse, indent + 1, lang);
            }
            if !py {
                line(out, indent, "end");
            }
        }
        S::While(counter, bound, stmts) => {
            line(out, indent, &format!("{} = 0", counter));
            line(out, indent, &format!("while {} < {}{}", counter, bound, if py { ":" } else { "" }));
            line(out, indent + 1, &format!("{} += 1", counter));
            for s in stmts {
                stmt(out, s, indent + 1, lang);
            }
            if !py {
                line(out, indent, "end");
            }
        }
        S::For(var, iter, stmts) => {
            line(out, indent, &format!("for {} in {}{}", var, expr(iter, lang), if py { ":" } else { "" }));
            body(out, stmts, indent + 1, lang);
            if !py {
                line(out, indent, "end");
            }
        }
        S::Try { body: b, class, bind, handler, finally } => {
            line(out, indent, if py { "try:" } else { "begin" });
            body(out, b, indent + 1, lang);
            let clause = match (py, class, bind) {
                (true, Some(c), Some(e)) => format!("except {} as {}:", c, e),
                (true, Some(c), None) => format!("except {}:", c),
                (true, None, _) => "except:".to_string(),
                (false, Some(c), Some(e)) => format!("rescue {} => {}", c, e),
                (false, Some(c), None) => format!("rescue {}", c),
                (false, None, _) => "rescue".to_string(),
            };
            line(out, indent, &clause);
            body(out, handler, indent + 1, lang);
            if let Some(f) = finally {
                line(out, indent, if py { "finally:" } else { "ensure" });
                body(out, f, indent + 1, lang);
            }
            if !py {
                line(out, indent, "end");
            }
        }
        S::Raise(class, msg) => {
            if py {
                line(out, indent, &format!("raise {}(\"{}\")", class, msg))
            } else {
                line(out, indent, &format!("raise {}, \"{}\"", class, msg))
            }
        }
        S::Break => line(out, indent, "break"),
        S::Return(e) => line(out, indent, &format!("return {}", expr(e, lang))),
        S::SetField(f, e) => {
            let target = if py { format!("self.{}", f) } else { format!("@{}", f) };
            line(out, indent, &format!("{} = {}", target, expr(e, lang)))
        }
        S::Func(name, params, stmts) => {
            let ps = params.join(", ");
            if py {
                line(out, indent, &format!("def {}({}):", name, ps));
            } else {
                line(out, indent, &format!("def {}({})", name, ps));
            }
            body(out, stmts, indent + 1, lang);
            if !py {
                line(out, indent, "end");
            }
        }
        S::Class => render_class(out, indent, lang),
        S::Expr(e) => line(out, indent, &expr(e, lang)),
    }
}

fn render_class(out: &mut String, indent: usize, lang: Lang) {
    let total = E::Field("total");
    let add = vec![
        S::SetField("total", E::Bin("+", Box::new(total.clone()), Box::new(E::Var("x".into())))),
        S::Return(total.clone()),
    ];
    if lang == Lang::Py {
        line(out, indent, &format!("class {}:", CLASS));
        line(out, indent + 1, "def __init__(self, start):");
        stmt(out, &S::SetField("total", E::Var("start".into())), indent + 2, lang);
        line(out, indent + 1, "def add(self, x):");
        body(out, &add, indent + 2, lang);
        line(out, indent + 1, "def get(self):");
        stmt(out, &S::Return(total), indent + 2, lang);
    } else {
        line(out, indent, &format!("class {}", CLASS));
        line(out, indent + 1, "def initialize(start)");
        stmt(out, &S::SetField("total", E::Var("start".into())), indent + 2, lang);
        line(out, indent + 1, "end");
        line(out, indent + 1, "def add(x)");
        body(out, &add, indent + 2, lang);
        line(out, indent + 1, "end");
        line(out, indent + 1, "def get");
        stmt(out, &S::Return(total), indent + 2, lang);
        line(out, indent + 1, "end");
        line(out, indent, "end");
    }
}

fn args(items: &[E], lang: Lang) -> String {
    items.iter().map(|e| expr(e, lang)).collect::<Vec<_>>().join(", ")
}

fn expr(e: &E, lang: Lang) -> String {
    let py = lang == Lang::Py;
    match e {
        E::Int(n) if *n < 0 => format!("({})", n),
        E::Int(n) => n.to_string(),
        E::Text(s) => format!("\"{}\"", s),
        E::Var(v) => v.clone(),
        E::Bin(op, a, b) | E::Cmp(op, a, b) => format!("({} {} {})", expr(a, lang), op, expr(b, lang)),
        E::And(a, b) => format!("({} {} {})", expr(a, lang), if py { "and" } else { "&&" }, expr(b, lang)),
        E::Or(a, b) => format!("({} {} {})", expr(a, lang), if py { "or" } else { "||" }, expr(b, lang)),
        E::Not(a) => format!("({}{})", if py { "not " } else { "!" }, expr(a, lang)),
        E::List(items) => format!("[{}]", args(items, lang)),
        E::Index(c, i) => format!("{}[{}]", postfix(c, lang), expr(i, lang)),
        E::Len(x) => {
            if py {
                format!("len({})", expr(x, lang))
            } else {
                format!("{}.size", postfix(x, lang))
            }
        }
        E::Call(f, a) => format!("{}({})", f, args(a, lang)),
        E::New(c, a) => {
            if py {
                format!("{}({})", c, args(a, lang))
            } else {
                format!("{}.new({})", c, args(a, lang))
            }
        }
        E::Method(o, m, a) => format!("{}.{}({})", postfix(o, lang), m, args(a, lang)),
        E::Field(f) => {
            if py {
                format!("self.{}", f)
            } else {
                format!("@{}", f)
            }
        }
        E::Message(v) => format!("{}.message", v),
    }
}

/// Renders `e` so that a postfix operator can follow it.
fn postfix(e: &E, lang: Lang) -> String {
    match e {
        E::Var(_) | E::List(_) => expr(e, lang),
        _ => format!("({})", expr(e, lang)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate(7, GenConfig::full());
        let b = generate(7, GenConfig::full());
        assert_eq!(a.py, b.py);
        assert_eq!(a.rb, b.rb);
    }

    #[test]
    fn generated_programs_compile() {
        let plugins = polyvm_core::plugin::PluginRegistry::with_defaults();
        for seed in 0..300 {
            let g = generate(seed, GenConfig::full());
            for lang in [Lang::Py, Lang::Rb] {
                let plugin = plugins.lookup(lang.id()).unwrap();
                if let Err(e) = plugin.compile(g.source(lang)) {
                    panic!("seed {} {}: {}\n{}", seed, lang.id(), e, g.source(lang));
                }
            }
        }
    }
}
