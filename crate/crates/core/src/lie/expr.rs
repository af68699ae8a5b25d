//! Immutable expression DAG with constant folding and symbolic forward-mode
//! differentiation.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

/// Maximum number of state variables an expression may reference.
pub const MAX_VARS: usize = 64;

#[derive(Debug)]
pub(crate) enum Op {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Mul(Expr, Expr),
    Neg(Expr),
    Recip(Expr),
    Sin(Expr),
    Cos(Expr),
    Tan(Expr),
    Atan(Expr),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) op: Op,
    /// Bit `k` is set when the expression depends on variable `k`.
    pub(crate) vars: u64,
}

/// A scalar expression over the state vector.
///
/// Cloning is cheap (reference counted); sub-expressions are shared, so the
/// structure is a DAG rather than a tree.
#[derive(Clone)]
pub struct Expr(pub(crate) Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.op {
            Op::Const(c) => write!(f, "{c}"),
            Op::Var(k) => write!(f, "x{k}"),
            Op::Add(a, b) => write!(f, "({a} + {b})"),
            Op::Mul(a, b) => write!(f, "{a}*{b}"),
            Op::Neg(a) => write!(f, "-{a}"),
            Op::Recip(a) => write!(f, "1/{a}"),
            Op::Sin(a) => write!(f, "sin({a})"),
            Op::Cos(a) => write!(f, "cos({a})"),
            Op::Tan(a) => write!(f, "tan({a})"),
            Op::Atan(a) => write!(f, "atan({a})"),
        }
    }
}

fn node(op: Op) -> Expr {
    let vars = match &op {
        Op::Const(_) => 0,
        Op::Var(k) => 1u64 << k,
        Op::Add(a, b) | Op::Mul(a, b) => a.0.vars | b.0.vars,
        Op::Neg(a) | Op::Recip(a) | Op::Sin(a) | Op::Cos(a) | Op::Tan(a) | Op::Atan(a) => a.0.vars,
    };
    Expr(Arc::new(Node { op, vars }))
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        node(Op::Const(c))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    /// The `k`-th state variable.
    ///
    /// # Panics
    /// If `k >= MAX_VARS`.
    pub fn var(k: usize) -> Self {
        assert!(k < MAX_VARS, "variable index {k} exceeds {MAX_VARS}");
        node(Op::Var(k))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.0.op {
            Op::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    /// Bitmask of the variables this expression depends on.
    pub fn var_mask(&self) -> u64 {
        self.0.vars
    }

    pub fn depends_on(&self, k: usize) -> bool {
        k < MAX_VARS && self.0.vars & (1u64 << k) != 0
    }

    pub(crate) fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn add(&self, other: &Expr) -> Expr {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => other.clone(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => node(Op::Add(self.clone(), other.clone())),
        }
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        match (self.as_const(), other.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => other.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            (Some(a), _) if a == -1.0 => other.neg(),
            (_, Some(b)) if b == -1.0 => self.neg(),
            _ => node(Op::Mul(self.clone(), other.clone())),
        }
    }

    pub fn scale(&self, c: f64) -> Expr {
        Expr::constant(c).mul(self)
    }

    pub fn div(&self, other: &Expr) -> Expr {
        self.mul(&other.recip())
    }

    pub fn neg(&self) -> Expr {
        match &self.0.op {
            Op::Const(c) => Expr::constant(-c),
            Op::Neg(a) => a.clone(),
            _ => node(Op::Neg(self.clone())),
        }
    }

    pub fn recip(&self) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(1.0 / c),
            None => node(Op::Recip(self.clone())),
        }
    }

    pub fn sin(&self) -> Expr {
        self.unary(f64::sin, Op::Sin)
    }

    pub fn cos(&self) -> Expr {
        self.unary(f64::cos, Op::Cos)
    }

    pub fn tan(&self) -> Expr {
        self.unary(f64::tan, Op::Tan)
    }

    pub fn atan(&self) -> Expr {
        self.unary(f64::atan, Op::Atan)
    }

    fn unary(&self, fold: fn(f64) -> f64, make: fn(Expr) -> Op) -> Expr {
        match self.as_const() {
            Some(c) => Expr::constant(fold(c)),
            None => node(make(self.clone())),
        }
    }

    /// Partial derivative with respect to variable `k`, built by applying the
    /// dual-number rules node by node.
    pub fn diff(&self, k: usize) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(k, &mut memo)
    }

    pub(crate) fn diff_memo(&self, k: usize, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if !self.depends_on(k) {
            return Expr::zero();
        }
        if let Some(d) = memo.get(&self.ptr()) {
            return d.clone();
        }
        let d = match &self.0.op {
            Op::Const(_) => Expr::zero(),
            Op::Var(j) => {
                if *j == k {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Op::Add(a, b) => a.diff_memo(k, memo).add(&b.diff_memo(k, memo)),
            Op::Mul(a, b) => {
                let da = a.diff_memo(k, memo);
                let db = b.diff_memo(k, memo);
                da.mul(b).add(&a.mul(&db))
            }
            Op::Neg(a) => a.diff_memo(k, memo).neg(),
            Op::Recip(a) => {
                // (1/a)' = -a' * (1/a)^2
                let da = a.diff_memo(k, memo);
                da.mul(&self.mul(self)).neg()
            }
            Op::Sin(a) => a.diff_memo(k, memo).mul(&a.cos()),
            Op::Cos(a) => a.diff_memo(k, memo).mul(&a.sin()).neg(),
            Op::Tan(a) => {
                // (tan a)' = a' * (1 + tan^2 a), reusing this node
                let da = a.diff_memo(k, memo);
                da.mul(&Expr::one().add(&self.mul(self)))
            }
            Op::Atan(a) => {
                let da = a.diff_memo(k, memo);
                da.div(&Expr::one().add(&a.mul(a)))
            }
        };
        memo.insert(self.ptr(), d.clone());
        d
    }

    /// Direct recursive evaluation. Intended for tests and one-off values;
    /// use a compiled [`Tape`](super::Tape) for repeated evaluation.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.0.op {
            Op::Const(c) => *c,
            Op::Var(k) => x[*k],
            Op::Add(a, b) => a.eval(x) + b.eval(x),
            Op::Mul(a, b) => a.eval(x) * b.eval(x),
            Op::Neg(a) => -a.eval(x),
            Op::Recip(a) => 1.0 / a.eval(x),
            Op::Sin(a) => a.eval(x).sin(),
            Op::Cos(a) => a.eval(x).cos(),
            Op::Tan(a) => a.eval(x).tan(),
            Op::Atan(a) => a.eval(x).atan(),
        }
    }
}

macro_rules! binop {
    ($tr:ident, $method:ident, $call:ident) => {
        impl std::ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$call(self, rhs)
            }
        }
        impl std::ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$call(&self, &rhs)
            }
        }
        impl std::ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::$call(&self, &Expr::constant(rhs))
            }
        }
        impl std::ops::$tr<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$call(&Expr::constant(self), &rhs)
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}
