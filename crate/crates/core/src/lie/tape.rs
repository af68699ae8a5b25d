//! Linearized evaluation of a set of expressions with common-subexpression
//! sharing.

use std::collections::HashMap;

use super::expr::{Expr, Node, Op};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Add(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Recip(u32),
    Sin(u32),
    Cos(u32),
    Tan(u32),
    Atan(u32),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Key {
    Const(u64),
    Var(usize),
    Add(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Recip(u32),
    Sin(u32),
    Cos(u32),
    Tan(u32),
    Atan(u32),
}

/// A straight-line program evaluating several expressions at once.
///
/// Structurally identical sub-expressions are evaluated once, even when they
/// were built independently.
#[derive(Clone, Debug)]
pub struct Tape {
    instrs: Vec<Instr>,
    outputs: Vec<u32>,
    n_vars: usize,
}

struct Compiler {
    instrs: Vec<Instr>,
    keys: HashMap<Key, u32>,
    seen: HashMap<*const Node, u32>,
}

impl Compiler {
    fn push(&mut self, key: Key, instr: Instr) -> u32 {
        if let Some(&i) = self.keys.get(&key) {
            return i;
        }
        let i = self.instrs.len() as u32;
        self.instrs.push(instr);
        self.keys.insert(key, i);
        i
    }

    fn visit(&mut self, e: &Expr) -> u32 {
        if let Some(&i) = self.seen.get(&e.ptr()) {
            return i;
        }
        let i = match &e.0.op {
            Op::Const(c) => self.push(Key::Const(c.to_bits()), Instr::Const(*c)),
            Op::Var(k) => self.push(Key::Var(*k), Instr::Var(*k)),
            Op::Add(a, b) => {
                let (a, b) = ordered(self.visit(a), self.visit(b));
                self.push(Key::Add(a, b), Instr::Add(a, b))
            }
            Op::Mul(a, b) => {
                let (a, b) = ordered(self.visit(a), self.visit(b));
                self.push(Key::Mul(a, b), Instr::Mul(a, b))
            }
            Op::Neg(a) => {
                let a = self.visit(a);
                self.push(Key::Neg(a), Instr::Neg(a))
            }
            Op::Recip(a) => {
                let a = self.visit(a);
                self.push(Key::Recip(a), Instr::Recip(a))
            }
            Op::Sin(a) => {
                let a = self.visit(a);
                self.push(Key::Sin(a), Instr::Sin(a))
            }
            Op::Cos(a) => {
                let a = self.visit(a);
                self.push(Key::Cos(a), Instr::Cos(a))
            }
            Op::Tan(a) => {
                let a = self.visit(a);
                self.push(Key::Tan(a), Instr::Tan(a))
            }
            Op::Atan(a) => {
                let a = self.visit(a);
                self.push(Key::Atan(a), Instr::Atan(a))
            }
        };
        self.seen.insert(e.ptr(), i);
        i
    }
}

fn ordered(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Tape {
    /// Compiles `roots`; `n_vars` is the length of the input vector the tape
    /// will be evaluated on.
    ///
    /// # Panics
    /// If any root references a variable index `>= n_vars`.
    pub fn compile(roots: &[Expr], n_vars: usize) -> Self {
        let mask = roots.iter().fold(0u64, |m, e| m | e.var_mask());
        assert!(
            n_vars >= 64 || mask >> n_vars == 0,
            "expression references a variable beyond n_vars = {n_vars}"
        );
        let mut c = Compiler {
            instrs: Vec::new(),
            keys: HashMap::new(),
            seen: HashMap::new(),
        };
        let outputs = roots.iter().map(|r| c.visit(r)).collect();
        Tape {
            instrs: c.instrs,
            outputs,
            n_vars,
        }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Evaluates all outputs at `x` into `out`, using `scratch` as the
    /// per-instruction value buffer.
    pub fn eval_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.outputs.len());
        scratch.clear();
        scratch.reserve(self.instrs.len());
        for ins in &self.instrs {
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Var(k) => x[k],
                Instr::Add(a, b) => scratch[a as usize] + scratch[b as usize],
                Instr::Mul(a, b) => scratch[a as usize] * scratch[b as usize],
                Instr::Neg(a) => -scratch[a as usize],
                Instr::Recip(a) => 1.0 / scratch[a as usize],
                Instr::Sin(a) => scratch[a as usize].sin(),
                Instr::Cos(a) => scratch[a as usize].cos(),
                Instr::Tan(a) => scratch[a as usize].tan(),
                Instr::Atan(a) => scratch[a as usize].atan(),
            };
            scratch.push(v);
        }
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[i as usize];
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(x, &mut scratch, &mut out);
        out
    }

    /// Values and gradients of every output, by forward-mode dual arithmetic
    /// carrying one tangent per variable. Returns `(values, gradients)` with
    /// `gradients[i]` the gradient of output `i`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.n_vars;
        let len = self.instrs.len();
        let mut val = Vec::with_capacity(len);
        let mut tan = vec![0.0; len * n];
        for (i, ins) in self.instrs.iter().enumerate() {
            let (head, rest) = tan.split_at_mut(i * n);
            let t = &mut rest[..n];
            let tv = |j: u32| &head[j as usize * n..j as usize * n + n];
            let v = match *ins {
                Instr::Const(c) => c,
                Instr::Var(k) => {
                    t[k] = 1.0;
                    x[k]
                }
                Instr::Add(a, b) => {
                    let (ta, tb) = (tv(a), tv(b));
                    for k in 0..n {
                        t[k] = ta[k] + tb[k];
                    }
                    val[a as usize] + val[b as usize]
                }
                Instr::Mul(a, b) => {
                    let (va, vb): (f64, f64) = (val[a as usize], val[b as usize]);
                    let (ta, tb) = (tv(a), tv(b));
                    for k in 0..n {
                        t[k] = ta[k] * vb + va * tb[k];
                    }
                    va * vb
                }
                Instr::Neg(a) => {
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = -ta[k];
                    }
                    -val[a as usize]
                }
                Instr::Recip(a) => {
                    let r = 1.0 / val[a as usize];
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = -ta[k] * r * r;
                    }
                    r
                }
                Instr::Sin(a) => {
                    let (s, c) = val[a as usize].sin_cos();
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = ta[k] * c;
                    }
                    s
                }
                Instr::Cos(a) => {
                    let (s, c) = val[a as usize].sin_cos();
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = -ta[k] * s;
                    }
                    c
                }
                Instr::Tan(a) => {
                    let y: f64 = val[a as usize].tan();
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = ta[k] * (1.0 + y * y);
                    }
                    y
                }
                Instr::Atan(a) => {
                    let va: f64 = val[a as usize];
                    let ta = tv(a);
                    for k in 0..n {
                        t[k] = ta[k] / (1.0 + va * va);
                    }
                    va.atan()
                }
            };
            val.push(v);
        }
        let values = self.outputs.iter().map(|&i| val[i as usize]).collect();
        let grads = self
            .outputs
            .iter()
            .map(|&i| tan[i as usize * n..i as usize * n + n].to_vec())
            .collect();
        (values, grads)
    }
}
