//! Complex-valued expression trees in `(x, ξ, y, ε, t)` with exact differentiation.
//!
//! Trees are immutable and shared through `Arc`. Constructors fold constants
//! and drop neutral elements, so derivative trees stay reasonably small.
//! Evaluation flattens the DAG once ([`Compiled`]) and then runs it per point.
//!
//! A product with an exactly-zero factor evaluates to zero even when the
//! other factor is infinite. This is what makes derivatives of the
//! compactly supported glue function `g(t) = exp(-1/t)` total.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X(u8),
    Xi(u8),
    Y(u8),
    Eps,
    T,
}

impl Var {
    pub fn is_space(self) -> bool {
        matches!(self, Var::X(_) | Var::Y(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(Complex64),
    Var(Var),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, f64),
    Exp(Expr),
    Log(Expr),
    Sin(Expr),
    Cos(Expr),
    /// `(1 + Σ aᵢ²)^(1/2)`.
    Bracket(Vec<Expr>),
    /// `s(t) = g(t) / (g(t) + g(1-t))`.
    Smoothstep(Expr),
    /// `g(t) = exp(-1/t)` for `t > 0`, else `0`.
    Glue(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr(Arc<Node>);

/// Evaluation point. Unused coordinates may be left at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: [f64; 2],
    pub xi: [f64; 2],
    pub y: [f64; 2],
    pub eps: f64,
    pub t: f64,
}

impl Point {
    pub fn new(x: &[f64], xi: &[f64], eps: f64) -> Self {
        let mut p = Point { eps, ..Default::default() };
        p.x[..x.len()].copy_from_slice(x);
        p.xi[..xi.len()].copy_from_slice(xi);
        p
    }

    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X(i) => self.x[i as usize],
            Var::Xi(i) => self.xi[i as usize],
            Var::Y(i) => self.y[i as usize],
            Var::Eps => self.eps,
            Var::T => self.t,
        }
    }
}

fn c64(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn is_zero(e: &Expr) -> bool {
    matches!(e.node(), Node::Const(c) if *c == Complex64::new(0.0, 0.0))
}

fn is_one(e: &Expr) -> bool {
    matches!(e.node(), Node::Const(c) if *c == Complex64::new(1.0, 0.0))
}

fn as_const(e: &Expr) -> Option<Complex64> {
    match e.node() {
        Node::Const(c) => Some(*c),
        _ => None,
    }
}

impl Expr {
    fn new(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn constant(c: Complex64) -> Self {
        Expr::new(Node::Const(c))
    }

    pub fn real(re: f64) -> Self {
        Expr::constant(c64(re))
    }

    pub fn complex(re: f64, im: f64) -> Self {
        Expr::constant(Complex64::new(re, im))
    }

    pub fn zero() -> Self {
        Expr::real(0.0)
    }

    pub fn one() -> Self {
        Expr::real(1.0)
    }

    pub fn var(v: Var) -> Self {
        Expr::new(Node::Var(v))
    }

    pub fn x(i: u8) -> Self {
        Expr::var(Var::X(i))
    }

    pub fn xi(i: u8) -> Self {
        Expr::var(Var::Xi(i))
    }

    pub fn y(i: u8) -> Self {
        Expr::var(Var::Y(i))
    }

    pub fn eps() -> Self {
        Expr::var(Var::Eps)
    }

    pub fn t() -> Self {
        Expr::var(Var::T)
    }

    pub fn is_zero(&self) -> bool {
        is_zero(self)
    }

    pub fn as_const(&self) -> Option<Complex64> {
        as_const(self)
    }

    pub fn add(a: &Expr, b: &Expr) -> Expr {
        match (as_const(a), as_const(b)) {
            (Some(x), Some(y)) => Expr::constant(x + y),
            _ if is_zero(a) => b.clone(),
            _ if is_zero(b) => a.clone(),
            _ => Expr::new(Node::Add(a.clone(), b.clone())),
        }
    }

    pub fn sub(a: &Expr, b: &Expr) -> Expr {
        match (as_const(a), as_const(b)) {
            (Some(x), Some(y)) => Expr::constant(x - y),
            _ if is_zero(b) => a.clone(),
            _ if a.ptr_eq(b) => Expr::zero(),
            _ if is_zero(a) => Expr::mul(&Expr::real(-1.0), b),
            _ => Expr::new(Node::Sub(a.clone(), b.clone())),
        }
    }

    pub fn mul(a: &Expr, b: &Expr) -> Expr {
        match (as_const(a), as_const(b)) {
            (Some(x), Some(y)) => return Expr::constant(x * y),
            (Some(_), None) | (None, Some(_)) if is_zero(a) || is_zero(b) => return Expr::zero(),
            (None, Some(_)) => return Expr::mul(b, a),
            _ => {}
        }
        if is_one(a) {
            return b.clone();
        }
        if let (Some(x), Node::Mul(l, r)) = (as_const(a), b.node()) {
            if let Some(y) = as_const(l) {
                return Expr::mul(&Expr::constant(x * y), r);
            }
        }
        Expr::new(Node::Mul(a.clone(), b.clone()))
    }

    pub fn div(a: &Expr, b: &Expr) -> Expr {
        match (as_const(a), as_const(b)) {
            (Some(x), Some(y)) if y != c64(0.0) => Expr::constant(x / y),
            _ if is_zero(a) => Expr::zero(),
            _ if is_one(b) => a.clone(),
            (_, Some(y)) if y != c64(0.0) => Expr::mul(&Expr::constant(y.inv()), a),
            _ => Expr::new(Node::Div(a.clone(), b.clone())),
        }
    }

    pub fn neg(a: &Expr) -> Expr {
        Expr::mul(&Expr::real(-1.0), a)
    }

    pub fn pow(a: &Expr, p: f64) -> Expr {
        if p == 0.0 {
            return Expr::one();
        }
        if p == 1.0 {
            return a.clone();
        }
        if let Some(c) = as_const(a) {
            return Expr::constant(pow_c(c, p));
        }
        Expr::new(Node::Pow(a.clone(), p))
    }

    pub fn exp(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) => Expr::constant(c.exp()),
            None => Expr::new(Node::Exp(a.clone())),
        }
    }

    pub fn log(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) if c != c64(0.0) => Expr::constant(c.ln()),
            _ => Expr::new(Node::Log(a.clone())),
        }
    }

    pub fn sin(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) => Expr::constant(c.sin()),
            None => Expr::new(Node::Sin(a.clone())),
        }
    }

    pub fn cos(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) => Expr::constant(c.cos()),
            None => Expr::new(Node::Cos(a.clone())),
        }
    }

    pub fn bracket(args: Vec<Expr>) -> Expr {
        if args.iter().all(|a| as_const(a).is_some()) {
            let s = args.iter().map(|a| as_const(a).unwrap().powi(2)).sum::<Complex64>();
            return Expr::constant((c64(1.0) + s).sqrt());
        }
        Expr::new(Node::Bracket(args))
    }

    /// `⟨ξ⟩` in dimension `n`.
    pub fn japanese_xi(n: usize) -> Expr {
        Expr::bracket((0..n as u8).map(Expr::xi).collect())
    }

    pub fn smoothstep(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) => Expr::real(smoothstep(c.re)),
            None => Expr::new(Node::Smoothstep(a.clone())),
        }
    }

    pub fn glue(a: &Expr) -> Expr {
        match as_const(a) {
            Some(c) => Expr::real(glue(c.re)),
            None => Expr::new(Node::Glue(a.clone())),
        }
    }

    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| Expr::add(&acc, &t))
    }

    pub fn product(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms.into_iter().fold(Expr::one(), |acc, t| Expr::mul(&acc, &t))
    }

    fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Var(_) => vec![],
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => vec![a, b],
            Node::Pow(a, _)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Smoothstep(a)
            | Node::Glue(a) => vec![a],
            Node::Bracket(v) => v.iter().collect(),
        }
    }

    /// Rebuilds the tree bottom-up, sharing results for shared subtrees.
    fn rebuild(&self, leaf: &dyn Fn(&Node) -> Option<Expr>, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        let key = Arc::as_ptr(&self.0);
        if let Some(e) = memo.get(&key) {
            return e.clone();
        }
        let out = if let Some(e) = leaf(self.node()) {
            e
        } else {
            let mut r = |e: &Expr| e.rebuild(leaf, memo);
            match self.node() {
                Node::Const(_) | Node::Var(_) => self.clone(),
                Node::Add(a, b) => Expr::add(&r(a), &r(b)),
                Node::Sub(a, b) => Expr::sub(&r(a), &r(b)),
                Node::Mul(a, b) => Expr::mul(&r(a), &r(b)),
                Node::Div(a, b) => Expr::div(&r(a), &r(b)),
                Node::Pow(a, p) => Expr::pow(&r(a), *p),
                Node::Exp(a) => Expr::exp(&r(a)),
                Node::Log(a) => Expr::log(&r(a)),
                Node::Sin(a) => Expr::sin(&r(a)),
                Node::Cos(a) => Expr::cos(&r(a)),
                Node::Smoothstep(a) => Expr::smoothstep(&r(a)),
                Node::Glue(a) => Expr::glue(&r(a)),
                Node::Bracket(v) => Expr::bracket(v.iter().map(r).collect()),
            }
        };
        memo.insert(key, out.clone());
        out
    }

    /// Replaces every occurrence of `v` by `by`.
    pub fn subst(&self, v: Var, by: &Expr) -> Expr {
        let leaf = |n: &Node| match n {
            Node::Var(w) if *w == v => Some(by.clone()),
            _ => None,
        };
        self.rebuild(&leaf, &mut HashMap::new())
    }

    /// Simultaneous substitution of several variables.
    pub fn subst_many(&self, map: &[(Var, Expr)]) -> Expr {
        let leaf = |n: &Node| match n {
            Node::Var(w) => map.iter().find(|(v, _)| v == w).map(|(_, e)| e.clone()),
            _ => None,
        };
        self.rebuild(&leaf, &mut HashMap::new())
    }

    /// Complex conjugate, assuming every variable is real.
    pub fn conj(&self) -> Expr {
        let leaf = |n: &Node| match n {
            Node::Const(c) => Some(Expr::constant(c.conj())),
            _ => None,
        };
        self.rebuild(&leaf, &mut HashMap::new())
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self];
        while let Some(e) = stack.pop() {
            if !seen.insert(Arc::as_ptr(&e.0)) {
                continue;
            }
            if let Node::Var(v) = e.node() {
                out.insert(*v);
            }
            stack.extend(e.children());
        }
        out
    }

    pub fn depends_on(&self, pred: impl Fn(Var) -> bool) -> bool {
        self.free_vars().into_iter().any(pred)
    }

    /// Number of distinct nodes in the DAG.
    pub fn size(&self) -> usize {
        Compiled::new(self).ops.len()
    }

    /// Exact partial derivative in `v`.
    pub fn diff(&self, v: Var) -> Expr {
        self.diff_memo(v, &mut HashMap::new())
    }

    fn diff_memo(&self, v: Var, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        let key = Arc::as_ptr(&self.0);
        if let Some(e) = memo.get(&key) {
            return e.clone();
        }
        let mut d = |e: &Expr| e.diff_memo(v, memo);
        let out = match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => Expr::add(&d(a), &d(b)),
            Node::Sub(a, b) => Expr::sub(&d(a), &d(b)),
            Node::Mul(a, b) => {
                let (da, db) = (d(a), d(b));
                Expr::add(&Expr::mul(&da, b), &Expr::mul(a, &db))
            }
            Node::Div(a, b) => {
                let (da, db) = (d(a), d(b));
                let num = Expr::sub(&Expr::mul(&da, b), &Expr::mul(a, &db));
                Expr::div(&num, &Expr::pow(b, 2.0))
            }
            Node::Pow(a, p) => {
                let da = d(a);
                Expr::mul(&Expr::mul(&Expr::real(*p), &Expr::pow(a, p - 1.0)), &da)
            }
            Node::Exp(a) => {
                let da = d(a);
                Expr::mul(self, &da)
            }
            Node::Log(a) => {
                let da = d(a);
                Expr::div(&da, a)
            }
            Node::Sin(a) => {
                let da = d(a);
                Expr::mul(&Expr::cos(a), &da)
            }
            Node::Cos(a) => {
                let da = d(a);
                Expr::neg(&Expr::mul(&Expr::sin(a), &da))
            }
            Node::Bracket(args) => {
                let mut num = Expr::zero();
                for a in args {
                    let da = d(a);
                    num = Expr::add(&num, &Expr::mul(a, &da));
                }
                Expr::div(&num, self)
            }
            Node::Smoothstep(a) => {
                // s'(t) = g(t) g(1-t) (t^-2 + (1-t)^-2) / (g(t) + g(1-t))²
                let da = d(a);
                let om = Expr::sub(&Expr::one(), a);
                let g0 = Expr::glue(a);
                let g1 = Expr::glue(&om);
                let both = Expr::new(Node::Mul(g0.clone(), g1.clone()));
                let w = Expr::add(&Expr::pow(a, -2.0), &Expr::pow(&om, -2.0));
                let num = Expr::new(Node::Mul(both, w));
                let den = Expr::pow(&Expr::add(&g0, &g1), 2.0);
                Expr::mul(&Expr::div(&num, &den), &da)
            }
            Node::Glue(a) => {
                let da = d(a);
                let inner = Expr::new(Node::Mul(self.clone(), Expr::pow(a, -2.0)));
                Expr::mul(&inner, &da)
            }
        };
        memo.insert(key, out.clone());
        out
    }

    /// Repeated derivative along a list of variables.
    pub fn diff_many(&self, vars: &[Var]) -> Expr {
        vars.iter().fold(self.clone(), |e, v| e.diff(*v))
    }

    pub fn eval(&self, p: &Point) -> Complex64 {
        Compiled::new(self).eval(p)
    }

    pub fn try_eval(&self, p: &Point) -> Result<Complex64> {
        let v = self.eval(p);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("{self} at {p:?}")))
        }
    }

    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src);
        let mut pos = 0;
        let e = parse_tokens(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse(format!("trailing input after token {pos}")));
        }
        Ok(e)
    }
}

pub fn glue(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = glue(t);
        a / (a + glue(1.0 - t))
    }
}

fn pow_c(c: Complex64, p: f64) -> Complex64 {
    if c.im == 0.0 && c.re > 0.0 {
        return c64(c.re.powf(p));
    }
    if p.fract() == 0.0 && p.abs() < 1e9 {
        if c.im == 0.0 {
            return c64(c.re.powi(p as i32));
        }
        return c.powi(p as i32);
    }
    c.powf(p)
}

fn mul_z(a: Complex64, b: Complex64) -> Complex64 {
    let z = c64(0.0);
    if a == z || b == z {
        z
    } else {
        a * b
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const(Complex64),
    Var(Var),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, f64),
    Exp(usize),
    Log(usize),
    Sin(usize),
    Cos(usize),
    Bracket(Vec<usize>),
    Smoothstep(usize),
    Glue(usize),
}

/// A flattened expression DAG, evaluated once per distinct node.
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
}

impl Compiled {
    pub fn new(e: &Expr) -> Self {
        let mut index: HashMap<*const Node, usize> = HashMap::new();
        let mut ops = Vec::new();
        // Iterative post-order so deep trees do not overflow the stack.
        let mut stack: Vec<(&Expr, bool)> = vec![(e, false)];
        while let Some((cur, expanded)) = stack.pop() {
            let key = Arc::as_ptr(&cur.0);
            if index.contains_key(&key) {
                continue;
            }
            if !expanded {
                stack.push((cur, true));
                for c in cur.children() {
                    if !index.contains_key(&Arc::as_ptr(&c.0)) {
                        stack.push((c, false));
                    }
                }
                continue;
            }
            let ix = |c: &Expr| index[&Arc::as_ptr(&c.0)];
            let op = match cur.node() {
                Node::Const(c) => Op::Const(*c),
                Node::Var(v) => Op::Var(*v),
                Node::Add(a, b) => Op::Add(ix(a), ix(b)),
                Node::Sub(a, b) => Op::Sub(ix(a), ix(b)),
                Node::Mul(a, b) => Op::Mul(ix(a), ix(b)),
                Node::Div(a, b) => Op::Div(ix(a), ix(b)),
                Node::Pow(a, p) => Op::Pow(ix(a), *p),
                Node::Exp(a) => Op::Exp(ix(a)),
                Node::Log(a) => Op::Log(ix(a)),
                Node::Sin(a) => Op::Sin(ix(a)),
                Node::Cos(a) => Op::Cos(ix(a)),
                Node::Bracket(v) => Op::Bracket(v.iter().map(ix).collect()),
                Node::Smoothstep(a) => Op::Smoothstep(ix(a)),
                Node::Glue(a) => Op::Glue(ix(a)),
            };
            index.insert(key, ops.len());
            ops.push(op);
        }
        Compiled { ops }
    }

    pub fn eval(&self, p: &Point) -> Complex64 {
        let mut buf = vec![c64(0.0); self.ops.len()];
        self.eval_into(p, &mut buf)
    }

    /// Evaluates with a caller-provided scratch buffer of length `len()`.
    pub fn eval_into(&self, p: &Point, v: &mut [Complex64]) -> Complex64 {
        let zero = c64(0.0);
        for (i, op) in self.ops.iter().enumerate() {
            v[i] = match op {
                Op::Const(c) => *c,
                Op::Var(w) => c64(p.get(*w)),
                Op::Add(a, b) => v[*a] + v[*b],
                Op::Sub(a, b) => v[*a] - v[*b],
                Op::Mul(a, b) => mul_z(v[*a], v[*b]),
                Op::Div(a, b) => {
                    if v[*a] == zero {
                        zero
                    } else if v[*b].im == 0.0 && v[*a].im == 0.0 {
                        c64(v[*a].re / v[*b].re)
                    } else {
                        v[*a] / v[*b]
                    }
                }
                Op::Pow(a, e) => pow_c(v[*a], *e),
                Op::Exp(a) => {
                    if v[*a].im == 0.0 {
                        c64(v[*a].re.exp())
                    } else {
                        v[*a].exp()
                    }
                }
                Op::Log(a) => {
                    if v[*a].im == 0.0 && v[*a].re > 0.0 {
                        c64(v[*a].re.ln())
                    } else {
                        v[*a].ln()
                    }
                }
                Op::Sin(a) => {
                    if v[*a].im == 0.0 {
                        c64(v[*a].re.sin())
                    } else {
                        v[*a].sin()
                    }
                }
                Op::Cos(a) => {
                    if v[*a].im == 0.0 {
                        c64(v[*a].re.cos())
                    } else {
                        v[*a].cos()
                    }
                }
                Op::Bracket(args) => {
                    let s: Complex64 = args.iter().map(|&k| v[k] * v[k]).sum();
                    let z = c64(1.0) + s;
                    if z.im == 0.0 && z.re >= 0.0 {
                        c64(z.re.sqrt())
                    } else {
                        z.sqrt()
                    }
                }
                Op::Smoothstep(a) => c64(smoothstep(v[*a].re)),
                Op::Glue(a) => c64(glue(v[*a].re)),
            };
        }
        v[self.ops.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

fn fmt_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => {
                if c.im == 0.0 {
                    write!(f, "(const {})", fmt_num(c.re))
                } else {
                    write!(f, "(const {} {})", fmt_num(c.re), fmt_num(c.im))
                }
            }
            Node::Var(v) => match v {
                Var::X(i) => write!(f, "(var x {i})"),
                Var::Xi(i) => write!(f, "(var xi {i})"),
                Var::Y(i) => write!(f, "(var y {i})"),
                Var::Eps => write!(f, "(var eps)"),
                Var::T => write!(f, "(var t)"),
            },
            Node::Add(a, b) => write!(f, "(add {a} {b})"),
            Node::Sub(a, b) => write!(f, "(sub {a} {b})"),
            Node::Mul(a, b) => write!(f, "(mul {a} {b})"),
            Node::Div(a, b) => write!(f, "(div {a} {b})"),
            Node::Pow(a, p) => write!(f, "(pow {a} {})", fmt_num(*p)),
            Node::Exp(a) => write!(f, "(exp {a})"),
            Node::Log(a) => write!(f, "(log {a})"),
            Node::Sin(a) => write!(f, "(sin {a})"),
            Node::Cos(a) => write!(f, "(cos {a})"),
            Node::Smoothstep(a) => write!(f, "(smoothstep {a})"),
            Node::Glue(a) => write!(f, "(glue {a})"),
            Node::Bracket(v) => {
                write!(f, "(japanese_bracket")?;
                for a in v {
                    write!(f, " {a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Atom(String),
}

fn tokenize(src: &str) -> Vec<Tok> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in src.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(Tok::Atom(std::mem::take(&mut cur)));
                }
                out.push(if ch == '(' { Tok::Open } else { Tok::Close });
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(Tok::Atom(std::mem::take(&mut cur)));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(Tok::Atom(cur));
    }
    out
}

fn parse_num(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Parse(format!("expected a number, found `{s}`")))
}

fn parse_tokens(t: &[Tok], pos: &mut usize) -> Result<Expr> {
    let tok = t.get(*pos).ok_or_else(|| Error::Parse("unexpected end of input".into()))?;
    *pos += 1;
    match tok {
        Tok::Atom(a) => Ok(Expr::real(parse_num(a)?)),
        Tok::Close => Err(Error::Parse("unexpected `)`".into())),
        Tok::Open => {
            let head = match t.get(*pos) {
                Some(Tok::Atom(h)) => h.clone(),
                _ => return Err(Error::Parse("expected an operator name".into())),
            };
            *pos += 1;
            let mut atoms = Vec::new();
            let mut args = Vec::new();
            let leaf = matches!(head.as_str(), "const" | "var");
            loop {
                match t.get(*pos) {
                    Some(Tok::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(Tok::Atom(a)) if leaf => {
                        atoms.push(a.clone());
                        *pos += 1;
                    }
                    Some(_) => args.push(parse_tokens(t, pos)?),
                    None => return Err(Error::Parse(format!("unclosed `({head}`"))),
                }
            }
            build(&head, &atoms, args)
        }
    }
}

fn arity(head: &str, args: &[Expr], n: usize) -> Result<()> {
    if args.len() == n {
        Ok(())
    } else {
        Err(Error::Parse(format!("`{head}` takes {n} argument(s), got {}", args.len())))
    }
}

fn build(head: &str, atoms: &[String], args: Vec<Expr>) -> Result<Expr> {
    let index = |k: usize| -> Result<u8> {
        let s = atoms.get(k).ok_or_else(|| Error::Parse("missing variable index".into()))?;
        let i: u8 = s.parse().map_err(|_| Error::Parse(format!("bad index `{s}`")))?;
        if i > 1 {
            return Err(Error::Parse(format!("variable index {i} out of range (n <= 2)")));
        }
        Ok(i)
    };
    match head {
        "const" => match atoms.len() {
            1 => Ok(Expr::real(parse_num(&atoms[0])?)),
            2 => Ok(Expr::complex(parse_num(&atoms[0])?, parse_num(&atoms[1])?)),
            _ => Err(Error::Parse("`const` takes one or two numbers".into())),
        },
        "var" => match atoms.first().map(String::as_str) {
            Some("x") => Ok(Expr::x(index(1)?)),
            Some("xi") => Ok(Expr::xi(index(1)?)),
            Some("y") => Ok(Expr::y(index(1)?)),
            Some("eps") => Ok(Expr::eps()),
            Some("t") => Ok(Expr::t()),
            other => Err(Error::Parse(format!("unknown variable {other:?}"))),
        },
        "add" | "mul" => {
            if args.is_empty() {
                return Err(Error::Parse(format!("`{head}` needs arguments")));
            }
            let mut it = args.into_iter();
            let first = it.next().unwrap();
            Ok(it.fold(first, |acc, e| {
                if head == "add" {
                    Expr::new(Node::Add(acc, e))
                } else {
                    Expr::new(Node::Mul(acc, e))
                }
            }))
        }
        "sub" => {
            arity(head, &args, 2)?;
            Ok(Expr::new(Node::Sub(args[0].clone(), args[1].clone())))
        }
        "div" => {
            arity(head, &args, 2)?;
            Ok(Expr::new(Node::Div(args[0].clone(), args[1].clone())))
        }
        "pow" => {
            arity(head, &args, 2)?;
            let p = as_const(&args[1])
                .filter(|c| c.im == 0.0)
                .ok_or_else(|| Error::Parse("`pow` exponent must be a real number".into()))?;
            Ok(Expr::new(Node::Pow(args[0].clone(), p.re)))
        }
        "exp" | "log" | "sin" | "cos" | "smoothstep" | "glue" => {
            arity(head, &args, 1)?;
            let a = args[0].clone();
            Ok(Expr::new(match head {
                "exp" => Node::Exp(a),
                "log" => Node::Log(a),
                "sin" => Node::Sin(a),
                "cos" => Node::Cos(a),
                "smoothstep" => Node::Smoothstep(a),
                _ => Node::Glue(a),
            }))
        }
        "japanese_bracket" => {
            if args.is_empty() {
                return Err(Error::Parse("`japanese_bracket` needs arguments".into()));
            }
            Ok(Expr::new(Node::Bracket(args)))
        }
        other => Err(Error::Parse(format!("unknown operator `{other}`"))),
    }
}

impl ops::Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl ops::Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl ops::Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl ops::Div for &Expr {
    type Output = Expr;
    fn div(self, rhs: &Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

macro_rules! owned_ops {
    ($($tr:ident $f:ident),*) => {$(
        impl ops::$tr for Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr { ops::$tr::$f(&self, &rhs) }
        }
        impl ops::$tr<&Expr> for Expr {
            type Output = Expr;
            fn $f(self, rhs: &Expr) -> Expr { ops::$tr::$f(&self, rhs) }
        }
        impl ops::$tr<Expr> for &Expr {
            type Output = Expr;
            fn $f(self, rhs: Expr) -> Expr { ops::$tr::$f(self, &rhs) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul, Div div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt1(x: f64, xi: f64) -> Point {
        Point::new(&[x], &[xi], 0.5)
    }

    #[test]
    fn parse_print_round_trip() {
        let src = "(add (var xi 0) (mul (const 0 1) (var xi 1)))";
        let e = Expr::parse(src).unwrap();
        assert_eq!(e.to_string(), src);
        let v = e.eval(&Point::new(&[0.0, 0.0], &[3.0, 4.0], 1.0));
        assert_eq!(v, Complex64::new(3.0, 4.0));
    }

    #[test]
    fn parse_errors() {
        assert!(Expr::parse("(foo 1)").is_err());
        assert!(Expr::parse("(add (var xi 0)").is_err());
        assert!(Expr::parse("(var xi 3)").is_err());
        assert!(Expr::parse("(pow (var x 0) (var x 0))").is_err());
    }

    #[test]
    fn derivative_of_bracket() {
        let e = Expr::japanese_xi(2);
        let d = e.diff(Var::Xi(0));
        let p = Point::new(&[0.0, 0.0], &[3.0, 4.0], 1.0);
        assert!((d.eval(&p).re - 3.0 / 26f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn derivative_sin_xi_squared() {
        let e = Expr::sin(&Expr::x(0)) * Expr::pow(&Expr::xi(0), 2.0);
        let d = e.diff_many(&[Var::Xi(0), Var::Xi(0), Var::X(0)]);
        for x in [0.1, 1.0, 2.5] {
            assert!((d.eval(&pt1(x, 7.0)).re - 2.0 * x.cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn glue_derivatives_are_total() {
        let s = Expr::smoothstep(&Expr::x(0));
        let mut d = s.clone();
        for _ in 0..5 {
            d = d.diff(Var::X(0));
            for x in [-1.0, 0.0, 1.0, 2.0] {
                let v = d.eval(&pt1(x, 0.0));
                assert_eq!(v, Complex64::new(0.0, 0.0), "x = {x}");
            }
            assert!(d.eval(&pt1(0.5, 0.0)).re.is_finite());
        }
    }

    #[test]
    fn smoothstep_values() {
        assert_eq!(smoothstep(-0.2), 0.0);
        assert_eq!(smoothstep(1.3), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        assert!((smoothstep(0.3) + smoothstep(0.7) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conj_and_subst() {
        let e = Expr::complex(0.0, 1.0) * Expr::x(0);
        let c = e.conj();
        assert_eq!(c.eval(&pt1(2.0, 0.0)), Complex64::new(0.0, -2.0));
        let f = (Expr::x(0) * Expr::xi(0)).subst(Var::Xi(0), &-Expr::xi(0));
        assert_eq!(f.eval(&pt1(2.0, 3.0)).re, -6.0);
    }

    #[test]
    fn domain_errors_surface() {
        let e = Expr::log(&Expr::x(0));
        assert!(e.try_eval(&pt1(0.0, 0.0)).is_err());
        let e = Expr::one() / Expr::x(0);
        assert!(e.try_eval(&pt1(0.0, 0.0)).is_err());
    }
}
