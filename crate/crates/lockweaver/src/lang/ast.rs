//! Syntax tree for `.lcl` libraries: variables, expressions, statements,
//! procedures and the annotation blocks that carry proofs.

use std::collections::BTreeMap;
use std::fmt;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKind {
    Global,
    Local,
    Param,
    /// Entry-state copy `old(v)`; `base` names the copied variable.
    Shadow,
    /// Free variable of a formula, universally quantified. The name carries
    /// its primes (`num'`) or a `$` prefix for the return-value symbol.
    Logical,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var {
    pub name: String,
    pub kind: VarKind,
    pub base: Option<String>,
}

impl Var {
    pub fn global(name: &str) -> Var {
        Var { name: name.to_string(), kind: VarKind::Global, base: None }
    }
    pub fn local(name: &str) -> Var {
        Var { name: name.to_string(), kind: VarKind::Local, base: None }
    }
    pub fn param(name: &str) -> Var {
        Var { name: name.to_string(), kind: VarKind::Param, base: None }
    }
    pub fn logical(name: &str) -> Var {
        Var { name: name.to_string(), kind: VarKind::Logical, base: None }
    }
    pub fn shadow(base: &str) -> Var {
        Var { name: format!("old({base})"), kind: VarKind::Shadow, base: Some(base.to_string()) }
    }

    /// Locals, params and shadows live in a thread's frame.
    pub fn is_thread_local(&self) -> bool {
        matches!(self.kind, VarKind::Local | VarKind::Param | VarKind::Shadow)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    /// The operator obtained by swapping operands.
    pub fn flip(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Ne => CmpOp::Ne,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Integer terms and boolean formulas share one tree. In integer position a
/// formula evaluates to 0/1; in boolean position an integer means `!= 0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Int(i64),
    Bool(bool),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    App(String, Vec<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

/// Formulas are expressions used in boolean position.
pub type Formula = Expr;

impl Expr {
    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }
    pub fn cmp(op: CmpOp, a: Expr, b: Expr) -> Expr {
        Expr::Cmp(op, Box::new(a), Box::new(b))
    }
    pub fn eq(a: Expr, b: Expr) -> Expr {
        Expr::cmp(CmpOp::Eq, a, b)
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }
    pub fn not(a: Expr) -> Expr {
        Expr::Not(Box::new(a))
    }
    pub fn implies(a: Expr, b: Expr) -> Expr {
        Expr::Or(vec![Expr::not(a), b])
    }
    pub fn and(items: Vec<Expr>) -> Expr {
        match items.len() {
            0 => Expr::Bool(true),
            1 => items.into_iter().next().unwrap(),
            _ => Expr::And(items),
        }
    }
    pub fn or(items: Vec<Expr>) -> Expr {
        match items.len() {
            0 => Expr::Bool(false),
            1 => items.into_iter().next().unwrap(),
            _ => Expr::Or(items),
        }
    }

    /// Visits every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Bool(_) | Expr::Var(_) => {}
            Expr::Neg(a) | Expr::Not(a) => a.walk(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Cmp(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::App(_, args) | Expr::And(args) | Expr::Or(args) => {
                for a in args {
                    a.walk(f);
                }
            }
        }
    }

    /// Distinct variables in order of first occurrence.
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    pub fn mentions(&self, pred: &dyn Fn(&Var) -> bool) -> bool {
        let mut hit = false;
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if pred(v) {
                    hit = true;
                }
            }
        });
        hit
    }

    /// Rebuilds the tree bottom-up, replacing variables through `f`.
    pub fn map_vars(&self, f: &dyn Fn(&Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Expr::Int(_) | Expr::Bool(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.map_vars(f))),
            Expr::Not(a) => Expr::Not(Box::new(a.map_vars(f))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.map_vars(f)), Box::new(b.map_vars(f))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.map_vars(f)), Box::new(b.map_vars(f))),
            Expr::Cmp(op, a, b) => Expr::Cmp(*op, Box::new(a.map_vars(f)), Box::new(b.map_vars(f))),
            Expr::App(n, args) => Expr::App(n.clone(), args.iter().map(|a| a.map_vars(f)).collect()),
            Expr::And(xs) => Expr::And(xs.iter().map(|a| a.map_vars(f)).collect()),
            Expr::Or(xs) => Expr::Or(xs.iter().map(|a| a.map_vars(f)).collect()),
        }
    }
}

/// Lock operations woven by the synthesizer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockOp {
    Acquire(String),
    Release(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Skip,
    Assign(Var, Expr),
    /// `v = *;`
    Havoc(Var),
    If(Expr, Vec<StmtNode>, Option<Vec<StmtNode>>),
    Assert(Formula),
    /// Two-state assertion; `old(v)` appears as a shadow variable.
    Assert2(Formula),
    /// `return e;` or `return (e1, e2);`
    Return(Vec<Expr>),
    Acquire(String),
    Release(String),
}

#[derive(Debug, Clone)]
pub struct StmtNode {
    /// Unique within the library; used to map control-flow edges back.
    pub id: usize,
    pub label: Option<String>,
    pub pos: Pos,
    pub kind: StmtKind,
}

/// Structural equality ignores ids and positions.
impl PartialEq for StmtNode {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label && self.kind == other.kind
    }
}
impl Eq for StmtNode {}

impl StmtNode {
    pub fn is_lock(&self) -> bool {
        matches!(self.kind, StmtKind::Acquire(_) | StmtKind::Release(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UfunSig {
    pub name: String,
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDecl {
    pub var: Var,
    pub init: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub name: String,
    pub params: Vec<Var>,
    /// Declared locals, excluding return variables and shadows.
    pub locals: Vec<Var>,
    /// `ret` for single-valued returns, `ret1..retk` for tuples.
    pub rets: Vec<Var>,
    /// Entry-state copies: those `old(v)` mentions, or every global and
    /// parameter after the two-state transformation.
    pub shadows: Vec<Var>,
    pub body: Vec<StmtNode>,
}

impl Procedure {
    /// Every frame variable in slot order: params, locals, rets, shadows.
    pub fn frame(&self) -> Vec<Var> {
        let mut v = self.params.clone();
        v.extend(self.locals.iter().cloned());
        v.extend(self.rets.iter().cloned());
        v.extend(self.shadows.iter().cloned());
        v
    }
}

/// Names a control point in annotations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PointRef {
    Quiescent,
    Entry(String),
    Exit(String),
    Label(String),
}

impl fmt::Display for PointRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointRef::Quiescent => f.write_str("quiescent"),
            PointRef::Entry(p) => write!(f, "{p}.entry"),
            PointRef::Exit(p) => write!(f, "{p}.exit"),
            PointRef::Label(l) => f.write_str(l),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Annotations {
    pub inv: BTreeMap<PointRef, Formula>,
    pub basis: BTreeMap<PointRef, Vec<Formula>>,
    pub seeds: Vec<Formula>,
    /// Two-state specification per procedure, over globals, `old(g)`,
    /// params and return variables. Consumed by the linearizability oracle.
    pub ensures: BTreeMap<String, Formula>,
}

impl Annotations {
    pub fn is_empty(&self) -> bool {
        self.inv.is_empty() && self.basis.is_empty() && self.seeds.is_empty() && self.ensures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Library {
    pub ufuns: Vec<UfunSig>,
    pub globals: Vec<GlobalDecl>,
    pub procs: Vec<Procedure>,
    pub annotations: Annotations,
    /// Set by the two-state transformation: call edges carry the LP copy.
    pub two_state: bool,
}

impl Library {
    pub fn proc(&self, name: &str) -> Option<&Procedure> {
        self.procs.iter().find(|p| p.name == name)
    }
    pub fn proc_index(&self, name: &str) -> Option<usize> {
        self.procs.iter().position(|p| p.name == name)
    }
    pub fn global_vars(&self) -> Vec<Var> {
        self.globals.iter().map(|g| g.var.clone()).collect()
    }
    pub fn ufun(&self, name: &str) -> Option<&UfunSig> {
        self.ufuns.iter().find(|u| u.name == name)
    }
}
