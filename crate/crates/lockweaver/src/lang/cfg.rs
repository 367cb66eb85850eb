//! Control-flow graphs: one per procedure, joined through the quiescent
//! vertex `w` by call and exit edges.

use std::fmt;

use super::ast::*;

pub type VertexId = usize;
pub type EdgeId = usize;

/// The quiescent vertex is always vertex 0.
pub const W: VertexId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Quiescent,
    /// Lock acquisitions woven ahead of the call edge.
    PreEntry,
    Entry,
    Exit,
    Inner,
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: VertexId,
    pub proc: Option<usize>,
    pub kind: VertexKind,
    pub label: Option<String>,
    pub name: String,
}

/// Statement carried by an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeStmt {
    Skip,
    Assign(Var, Expr),
    Havoc(Var),
    Assume(Formula),
    Assert(Formula),
    Assert2(Formula),
    /// `ret_i := e_i`
    Return(Vec<Expr>),
    Acquire(String),
    Release(String),
    /// Copies every shadowed variable into its shadow: `(shadow, base)`.
    LPCopy(Vec<(Var, Var)>),
}

impl EdgeStmt {
    pub fn is_lock(&self) -> bool {
        matches!(self, EdgeStmt::Acquire(_) | EdgeStmt::Release(_))
    }
}

impl fmt::Display for EdgeStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeStmt::Skip => write!(f, "skip"),
            EdgeStmt::Assign(v, e) => write!(f, "{v} = {e}"),
            EdgeStmt::Havoc(v) => write!(f, "{v} = *"),
            EdgeStmt::Assume(c) => write!(f, "assume {c}"),
            EdgeStmt::Assert(c) => write!(f, "assert {c}"),
            EdgeStmt::Assert2(c) => write!(f, "assert2 {c}"),
            EdgeStmt::Return(es) => {
                let parts: Vec<String> = es.iter().map(|e| e.to_string()).collect();
                write!(f, "return {}", parts.join(", "))
            }
            EdgeStmt::Acquire(l) => write!(f, "acquire({l})"),
            EdgeStmt::Release(l) => write!(f, "release({l})"),
            EdgeStmt::LPCopy(_) => write!(f, "lp"),
        }
    }
}

/// Where an edge came from in the source tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeOrigin {
    Stmt(usize),
    /// Assume edge of the `if` with this id; `true` is the then-branch.
    Branch(usize, bool),
    Call,
    Exit,
    /// Implicit return at the end of a body without one.
    FallOff,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub id: EdgeId,
    pub src: VertexId,
    pub dst: VertexId,
    pub stmt: EdgeStmt,
    pub origin: EdgeOrigin,
    pub proc: usize,
}

impl Edge {
    pub fn is_call(&self) -> bool {
        self.origin == EdgeOrigin::Call
    }
    pub fn is_exit(&self) -> bool {
        self.origin == EdgeOrigin::Exit
    }
}

#[derive(Debug, Clone)]
pub struct ProcCfg {
    pub name: String,
    pub entry: VertexId,
    pub exit: VertexId,
    pub vertices: Vec<VertexId>,
    pub edges: Vec<EdgeId>,
}

#[derive(Debug, Clone)]
pub struct ControlGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub procs: Vec<ProcCfg>,
    pub out: Vec<Vec<EdgeId>>,
    pub inc: Vec<Vec<EdgeId>>,
    pub two_state: bool,
}

impl ControlGraph {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
    pub fn succ(&self, v: VertexId) -> impl Iterator<Item = &Edge> {
        self.out[v].iter().map(move |&e| &self.edges[e])
    }
    pub fn pred(&self, v: VertexId) -> impl Iterator<Item = &Edge> {
        self.inc[v].iter().map(move |&e| &self.edges[e])
    }
    pub fn vertex_by_name(&self, name: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v.name == name || v.label.as_deref() == Some(name))
    }
    /// Resolves an annotation point.
    pub fn point(&self, pt: &PointRef) -> Option<VertexId> {
        match pt {
            PointRef::Quiescent => Some(W),
            PointRef::Entry(p) => self.procs.iter().find(|c| &c.name == p).map(|c| c.entry),
            PointRef::Exit(p) => self.procs.iter().find(|c| &c.name == p).map(|c| c.exit),
            PointRef::Label(l) => self.vertices.iter().position(|v| v.label.as_deref() == Some(l.as_str())),
        }
    }
    /// Vertices of the procedure graphs in a topological order (all bodies
    /// are acyclic once `w` is removed), `w` first.
    pub fn topo_order(&self) -> Vec<VertexId> {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            if e.src != W && e.dst != W {
                indeg[e.dst] += 1;
            }
        }
        let mut order = vec![W];
        let mut stack: Vec<VertexId> = (1..n).filter(|&v| indeg[v] == 0).rev().collect();
        while let Some(v) = stack.pop() {
            order.push(v);
            for e in self.succ(v) {
                if e.dst != W {
                    indeg[e.dst] -= 1;
                    if indeg[e.dst] == 0 {
                        stack.push(e.dst);
                    }
                }
            }
        }
        order
    }
}

struct Builder<'a> {
    lib: &'a Library,
    g: ControlGraph,
    proc: usize,
}

impl Builder<'_> {
    fn vertex(&mut self, kind: VertexKind, name: String) -> VertexId {
        let id = self.g.vertices.len();
        self.g.vertices.push(Vertex { id, proc: Some(self.proc), kind, label: None, name });
        self.g.out.push(Vec::new());
        self.g.inc.push(Vec::new());
        self.g.procs[self.proc].vertices.push(id);
        id
    }

    fn inner(&mut self) -> VertexId {
        let k = self.g.procs[self.proc].vertices.len();
        let name = format!("{}.v{k}", self.lib.procs[self.proc].name);
        self.vertex(VertexKind::Inner, name)
    }

    fn edge(&mut self, src: VertexId, dst: VertexId, stmt: EdgeStmt, origin: EdgeOrigin) {
        let id = self.g.edges.len();
        self.g.edges.push(Edge { id, src, dst, stmt, origin, proc: self.proc });
        self.g.out[src].push(id);
        self.g.inc[dst].push(id);
        self.g.procs[self.proc].edges.push(id);
    }

    fn label(&mut self, v: VertexId, s: &StmtNode) {
        if let Some(l) = &s.label {
            self.g.vertices[v].label = Some(l.clone());
            self.g.vertices[v].name = l.clone();
        }
    }

    /// Lowers `stmts` starting at `start`. When `target` is given the block
    /// must finish there. Returns the end vertex, or `None` if every path
    /// returned.
    fn block(&mut self, stmts: &[StmtNode], start: VertexId, target: Option<VertexId>) -> Option<VertexId> {
        let exit = self.g.procs[self.proc].exit;
        let mut cur = start;
        let mut i = 0;
        while i < stmts.len() {
            let s = &stmts[i];
            let last = i + 1 == stmts.len();
            let tgt = if last { target } else { None };
            self.label(cur, s);
            let simple = match &s.kind {
                StmtKind::Skip => Some(EdgeStmt::Skip),
                StmtKind::Assign(v, e) => Some(EdgeStmt::Assign(v.clone(), e.clone())),
                StmtKind::Havoc(v) => Some(EdgeStmt::Havoc(v.clone())),
                StmtKind::Assert(f) => Some(EdgeStmt::Assert(f.clone())),
                StmtKind::Assert2(f) => Some(EdgeStmt::Assert2(f.clone())),
                StmtKind::Acquire(l) => Some(EdgeStmt::Acquire(l.clone())),
                StmtKind::Release(l) => Some(EdgeStmt::Release(l.clone())),
                StmtKind::Return(_) | StmtKind::If(..) => None,
            };
            if let Some(st) = simple {
                let dst = tgt.unwrap_or_else(|| self.inner());
                self.edge(cur, dst, st, EdgeOrigin::Stmt(s.id));
                cur = dst;
                i += 1;
                continue;
            }
            match &s.kind {
                StmtKind::Return(es) => {
                    // Lock statements may trail a return in instrumented text.
                    let tail = &stmts[i + 1..];
                    let mut at = cur;
                    let mut next = if tail.is_empty() { exit } else { self.inner() };
                    self.edge(at, next, EdgeStmt::Return(es.clone()), EdgeOrigin::Stmt(s.id));
                    for (k, t) in tail.iter().enumerate() {
                        at = next;
                        next = if k + 1 == tail.len() { exit } else { self.inner() };
                        let st = match &t.kind {
                            StmtKind::Acquire(l) => EdgeStmt::Acquire(l.clone()),
                            StmtKind::Release(l) => EdgeStmt::Release(l.clone()),
                            _ => unreachable!("parser rejects code after return"),
                        };
                        self.edge(at, next, st, EdgeOrigin::Stmt(t.id));
                    }
                    return None;
                }
                StmtKind::If(c, t, e) => {
                    let empty = Vec::new();
                    let e = e.as_ref().unwrap_or(&empty);
                    let falls = !super::parser::block_terminates(t) || !super::parser::block_terminates(e);
                    let join = if falls { Some(tgt.unwrap_or_else(|| self.inner())) } else { None };
                    for (branch, cond, blk) in [(true, c.clone(), t), (false, Expr::not(c.clone()), e)] {
                        let origin = EdgeOrigin::Branch(s.id, branch);
                        if blk.is_empty() {
                            self.edge(cur, join.expect("empty branch falls through"), EdgeStmt::Assume(cond), origin);
                        } else {
                            let v = self.inner();
                            self.edge(cur, v, EdgeStmt::Assume(cond), origin);
                            let bt = if super::parser::block_terminates(blk) { None } else { join };
                            self.block(blk, v, bt);
                        }
                    }
                    match join {
                        Some(j) => cur = j,
                        None => return None,
                    }
                    i += 1;
                }
                _ => unreachable!(),
            }
        }
        if let Some(t) = target {
            if t != cur {
                self.edge(cur, t, EdgeStmt::Skip, EdgeOrigin::FallOff);
                return Some(t);
            }
        }
        Some(cur)
    }
}

/// Builds the library-wide control graph.
pub fn build_control_graph(lib: &Library) -> ControlGraph {
    let mut b = Builder {
        lib,
        g: ControlGraph {
            vertices: vec![Vertex { id: W, proc: None, kind: VertexKind::Quiescent, label: None, name: "w".into() }],
            edges: Vec::new(),
            procs: Vec::new(),
            out: vec![Vec::new()],
            inc: vec![Vec::new()],
            two_state: lib.two_state,
        },
        proc: 0,
    };
    for (pi, p) in lib.procs.iter().enumerate() {
        b.proc = pi;
        b.g.procs.push(ProcCfg { name: p.name.clone(), entry: 0, exit: 0, vertices: Vec::new(), edges: Vec::new() });
        let lead = p.body.iter().take_while(|s| matches!(s.kind, StmtKind::Acquire(_))).count();
        let mut at = W;
        for s in &p.body[..lead] {
            let k = b.g.procs[pi].vertices.len();
            let v = b.vertex(VertexKind::PreEntry, format!("{}.pre{k}", p.name));
            if let StmtKind::Acquire(l) = &s.kind {
                b.edge(at, v, EdgeStmt::Acquire(l.clone()), EdgeOrigin::Stmt(s.id));
            }
            at = v;
        }
        let entry = b.vertex(VertexKind::Entry, format!("{}.entry", p.name));
        let exit = b.vertex(VertexKind::Exit, format!("{}.exit", p.name));
        b.g.procs[pi].entry = entry;
        b.g.procs[pi].exit = exit;
        let call = if lib.two_state { EdgeStmt::LPCopy(shadow_pairs(lib, p)) } else { EdgeStmt::Skip };
        b.edge(at, entry, call, EdgeOrigin::Call);
        if let Some(end) = b.block(&p.body[lead..], entry, None) {
            b.edge(end, exit, EdgeStmt::Skip, EdgeOrigin::FallOff);
        }
        b.edge(exit, W, EdgeStmt::Skip, EdgeOrigin::Exit);
    }
    b.g
}

/// Pairs each shadow of `p` with the variable it copies.
pub fn shadow_pairs(lib: &Library, p: &Procedure) -> Vec<(Var, Var)> {
    p.shadows
        .iter()
        .map(|s| {
            let base = s.base.as_deref().unwrap_or_default();
            let v = if lib.globals.iter().any(|g| g.var.name == base) { Var::global(base) } else { Var::param(base) };
            (s.clone(), v)
        })
        .collect()
}
