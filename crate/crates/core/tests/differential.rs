//! The compilers and kernel against the reference tree-walker on generated
//! programs.

use polyvm_oracle::{generate, observe_oracle, observe_vm, GenConfig, Lang, Outcome};

const FUEL: u64 = 200_000;

fn check_corpus(config: GenConfig, seeds: std::ops::Range<u64>, quantum: i64) -> usize {
    let mut compared = 0;
    for seed in seeds {
        let g = generate(seed, config);
        for lang in [Lang::Py, Lang::Rb] {
            let src = g.source(lang);
            let expected = observe_oracle(lang.id(), src, FUEL);
            if let Outcome::Inconclusive(_) = expected.outcome {
                continue;
            }
            let actual = observe_vm(lang.id(), src, quantum);
            assert_eq!(actual, expected, "seed {} in {}:\n{}", seed, lang.id(), src);
            compared += 1;
        }
    }
    compared
}

#[test]
fn generated_programs_match_the_reference() {
    let compared = check_corpus(GenConfig::full(), 0..250, 10_000);
    assert!(compared >= 400, "only {} programs were conclusive", compared);
}

#[test]
fn small_quanta_do_not_change_results() {
    check_corpus(GenConfig::full(), 1000..1040, 3);
}

#[test]
fn portable_programs_agree_across_languages() {
    for seed in 0..150 {
        let g = generate(seed, GenConfig::portable());
        let py = observe_vm("minipy", &g.py, 10_000);
        let rb = observe_vm("minirb", &g.rb, 10_000);
        assert!(matches!(py.outcome, Outcome::Value(_)), "seed {}: {:?}\n{}", seed, py.outcome, g.py);
        assert_eq!(py.outcome, rb.outcome, "seed {}:\n{}\n----\n{}", seed, g.py, g.rb);
    }
}

const PY_SAMPLES: &[&str] = &[
    "def average(iterable):\n    return sum_of(iterable) / len(iterable)\ndef sum_of(xs):\n    t = 0\n    for x in xs:\n        t += x\n    return t\naverage([1, 2, 4])",
    "def average(iterable):\n    return 0 / len(iterable)\naverage([])",
    "class Point:\n    dims = 2\n    def __init__(self, x, y):\n        self.x = x\n        self.y = y\n    def norm1(self):\n        return abs_(self.x) + abs_(self.y)\ndef abs_(n):\n    if n < 0:\n        return -n\n    return n\np = Point(3, -4)\n[p.norm1(), p.dims, Point.dims]",
    "class Box:\n    pass\nb = Box()\nb.missing",
    "class Oops:\n    def __init__(self, message):\n        self.message = message\ntry:\n    raise Oops('custom')\nexcept Oops as e:\n    print(e.message)\nraise Oops('again')",
    "xs = [3, 1, 2]\nys = xs\nys.append(9)\nprint(xs, len(ys))\nxs[0] = 'a'\n[xs, xs[-1], 'abc'[1], 'ab' * 2]",
    "def f(a, b):\n    return a\nf(1)",
    "total = 0\nfor c in 'hello':\n    if c == 'l':\n        continue\n    total += 1\ntotal",
    "def g():\n    try:\n        return 1\n    finally:\n        print('cleanup')\ng()",
    "n = 0\nwhile True:\n    n += 1\n    try:\n        if n > 3:\n            break\n    finally:\n        print(n)\nn",
    "x = 7 / 2\ny = -7 % 3\nz = 7.5 % -2\n[x, y, z, 1 == 1.0, [1, 2] < [1, 3], 'b' > 'a']",
    "undefined_thing + 1",
    "str(3) + str([1, 'a']) + str(None)",
    "print(1, 'two', [3], None, True)\nrange(2, 5)",
    "1 + 'a'",
    "[1, 2][5]",
    "raise 'text'",
    "i = 0\nwhile i < 4:\n    i += 1\n    try:\n        break\n    finally:\n        if i > 0:\n            break\ni",
    "def f():\n    while True:\n        try:\n            return 1\n        finally:\n            break\n    return 2\nf()",
    "def f():\n    for x in [1, 2]:\n        try:\n            return x\n        finally:\n            if x == 1:\n                continue\n    return 9\nf()",
];

const RB_SAMPLES: &[&str] = &[
    "def average(iterable)\n  sum_of(iterable) / iterable.size\nend\ndef sum_of(xs)\n  t = 0\n  for x in xs\n    t += x\n  end\n  t\nend\naverage([1, 2, 4])",
    "class Counter\n  def initialize(start)\n    @n = start\n  end\n  def bump\n    @n += 1\n    self\n  end\n  def n\n    @n\n  end\nend\nc = Counter.new(5)\nc.bump.bump\nc.n",
    "class Greeter\n  def hello(name)\n    greeting + name\n  end\n  def greeting\n    \"hi \"\n  end\nend\nGreeter.new.hello(\"bob\")",
    "class Empty\nend\ne = Empty.new\ne.nothing",
    "x = 10\nif x > 5\n  \"big\"\nelsif x > 2\n  \"mid\"\nelse\n  \"small\"\nend",
    "begin\n  raise ArgumentError, \"bad arg\"\nrescue ArgumentError => e\n  puts e.message\n  e.message.size\nensure\n  puts \"done\"\nend",
    "xs = [1, 2, 3]\nputs xs\nputs nil\nxs[10]",
    "7 / -2",
    "def f(a)\n  return a * 2 if a > 3\n  a\nend\n[f(1), f(5)]",
    "raise \"plain\"",
    "i = 0\nwhile i < 10\n  i += 1\n  next if i % 2 == 0\n  break if i > 6\nend\ni",
    "s = \"Hello World\"\n[s.downcase, s.upcase, s.split(\" \"), s.size, s[0]]",
    "undefined_method_call(1)",
    "nope",
    "def f\n  i = 0\n  while i < 3\n    i += 1\n    begin\n      return i\n    ensure\n      if i < 3\n        next\n      end\n    end\n  end\n  0\nend\nf",
    "i = 0\nwhile i < 3\n  i += 1\n  begin\n    break\n  ensure\n    if i > 0\n      break\n    end\n  end\nend\ni",
];

fn check_samples(lang: &str, samples: &[&str]) {
    for src in samples {
        let expected = observe_oracle(lang, src, FUEL);
        assert!(!matches!(expected.outcome, Outcome::Inconclusive(_)), "{:?} for\n{}", expected, src);
        for quantum in [1, 10_000] {
            assert_eq!(observe_vm(lang, src, quantum), expected, "{} at quantum {}:\n{}", lang, quantum, src);
        }
    }
}

#[test]
fn handwritten_minipy_programs_match_the_reference() {
    check_samples("minipy", PY_SAMPLES);
}

#[test]
fn handwritten_minirb_programs_match_the_reference() {
    check_samples("minirb", RB_SAMPLES);
}
