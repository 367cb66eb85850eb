//! Lexer and recursive-descent parser for `.lcl` sources.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::LangError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

const SYMBOLS: &[&str] = &[
    "==>", "==", "!=", "<=", ">=", "&&", "||", "(", ")", "{", "}", ";", ",", "=", "<", ">", "+", "-", "*", "!",
    "/", "@", ":", "'", ".", "$",
];

const KEYWORDS: &[&str] = &[
    "ufun", "globals", "proc", "int", "if", "else", "skip", "assert", "assert2", "return", "old", "acquire",
    "release", "true", "false", "quiescent",
];

fn lex(src: &str) -> Result<Vec<Token>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let pos = Pos { line, col };
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            out.push(Token { tok: Tok::Ident(s), pos });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += (i - start) as u32;
            let n = s
                .parse::<i64>()
                .map_err(|_| LangError::Syntax { pos, msg: format!("integer literal `{s}` out of range") })?;
            out.push(Token { tok: Tok::Int(n), pos });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len() as u32;
                out.push(Token { tok: Tok::Sym(s), pos });
            }
            None => return Err(LangError::Syntax { pos, msg: format!("unexpected character `{c}`") }),
        }
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(out)
}

/// Where an expression is being parsed; controls which names resolve.
#[derive(Clone, Default)]
struct Scope {
    proc: Option<usize>,
    /// Union of every procedure's frame (seed formulas).
    all_procs: bool,
    old_allowed: bool,
    logical_allowed: bool,
    rets_visible: bool,
}

pub(super) struct Parser {
    toks: Vec<Token>,
    at: usize,
    allow_locks: bool,
    next_id: usize,
    lib: Library,
    labels: BTreeMap<String, usize>,
    /// Arity of return statements seen per procedure while parsing its body.
    ret_arity: Option<usize>,
    cur_params: Vec<Var>,
    cur_locals: Vec<Var>,
}

impl Parser {
    pub(super) fn new(src: &str, allow_locks: bool) -> Result<Parser, LangError> {
        Ok(Parser {
            toks: lex(src)?,
            at: 0,
            allow_locks,
            next_id: 0,
            lib: Library::default(),
            labels: BTreeMap::new(),
            ret_arity: None,
            cur_params: Vec::new(),
            cur_locals: Vec::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }
    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.at + k).min(self.toks.len() - 1)].tok
    }
    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }
    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }
    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }
    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }
    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        Err(LangError::Syntax { pos: self.pos(), msg: msg.into() })
    }
    fn describe(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
    fn expect_sym(&mut self, s: &str) -> Result<(), LangError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }
    fn expect_kw(&mut self, k: &str) -> Result<(), LangError> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.describe()))
        }
    }
    fn ident(&mut self) -> Result<(String, Pos), LangError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok((s, pos))
            }
            _ => self.err(format!("expected identifier, found {}", self.describe())),
        }
    }
    fn int(&mut self) -> Result<i64, LangError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            _ => self.err(format!("expected integer, found {}", self.describe())),
        }
    }
    fn fresh_id(&mut self) -> usize {
        self.next_id += 1;
        self.next_id - 1
    }

    pub(super) fn library(mut self) -> Result<Library, LangError> {
        while self.is_kw("ufun") {
            self.bump();
            while matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str())) {
                let (name, pos) = self.ident()?;
                self.expect_sym("/")?;
                let arity = self.int()?;
                self.expect_sym(";")?;
                if !(1..=2).contains(&arity) {
                    return Err(LangError::Invalid { pos, msg: format!("ufun `{name}` must be unary or binary") });
                }
                if self.lib.ufun(&name).is_some() {
                    return Err(LangError::Duplicate { pos, name });
                }
                self.lib.ufuns.push(UfunSig { name, arity: arity as usize });
            }
        }
        self.expect_kw("globals")?;
        self.expect_sym("{")?;
        while !self.is_sym("}") {
            let (name, pos) = self.ident()?;
            self.expect_sym("=")?;
            let init = self.expr(&Scope::default())?;
            self.expect_sym(";")?;
            if !init.vars().is_empty() {
                return Err(LangError::Invalid { pos, msg: format!("initializer of `{name}` must be closed") });
            }
            if self.lib.globals.iter().any(|g| g.var.name == name) || self.lib.ufun(&name).is_some() {
                return Err(LangError::Duplicate { pos, name });
            }
            self.lib.globals.push(GlobalDecl { var: Var::global(&name), init });
        }
        self.expect_sym("}")?;
        loop {
            if self.is_kw("proc") {
                self.proc()?;
            } else if self.is_sym("@") {
                self.annotation()?;
            } else if matches!(self.peek(), Tok::Eof) {
                break;
            } else {
                return self.err(format!("expected `proc` or annotation, found {}", self.describe()));
            }
        }
        Ok(self.lib)
    }

    fn proc(&mut self) -> Result<(), LangError> {
        self.expect_kw("proc")?;
        let (name, pos) = self.ident()?;
        if self.lib.proc(&name).is_some() {
            return Err(LangError::Duplicate { pos, name });
        }
        self.expect_sym("(")?;
        self.cur_params.clear();
        self.cur_locals.clear();
        self.ret_arity = None;
        let mut taken: BTreeSet<String> = self.lib.globals.iter().map(|g| g.var.name.clone()).collect();
        if !self.is_sym(")") {
            loop {
                let (p, ppos) = self.ident()?;
                if !taken.insert(p.clone()) || is_ret_name(&p) {
                    return Err(LangError::Duplicate { pos: ppos, name: p });
                }
                self.cur_params.push(Var::param(&p));
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        self.expect_sym("{")?;
        while self.is_kw("int") {
            self.bump();
            loop {
                let (l, lpos) = self.ident()?;
                if !taken.insert(l.clone()) || is_ret_name(&l) {
                    return Err(LangError::Duplicate { pos: lpos, name: l });
                }
                self.cur_locals.push(Var::local(&l));
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(";")?;
        }
        let pidx = self.lib.procs.len();
        // Register early so labels can point at it; body filled below.
        self.lib.procs.push(Procedure {
            name: name.clone(),
            params: self.cur_params.clone(),
            locals: self.cur_locals.clone(),
            rets: vec![],
            shadows: vec![],
            body: vec![],
        });
        let scope = Scope { proc: Some(pidx), ..Scope::default() };
        let body = self.block_items(&scope, pidx)?;
        self.expect_sym("}")?;
        let arity = self.ret_arity.unwrap_or(1);
        let p = &mut self.lib.procs[pidx];
        p.rets = ret_vars(arity);
        p.body = body;
        Ok(())
    }

    fn block_items(&mut self, scope: &Scope, pidx: usize) -> Result<Vec<StmtNode>, LangError> {
        let mut out: Vec<StmtNode> = Vec::new();
        let mut done = false;
        while !self.is_sym("}") {
            let s = self.stmt(scope, pidx)?;
            if done && !(self.allow_locks && s.is_lock()) {
                return Err(LangError::Invalid { pos: s.pos, msg: "unreachable statement after return".into() });
            }
            done = done || terminates(&s);
            out.push(s);
        }
        Ok(out)
    }

    fn block(&mut self, scope: &Scope, pidx: usize) -> Result<Vec<StmtNode>, LangError> {
        self.expect_sym("{")?;
        let b = self.block_items(scope, pidx)?;
        self.expect_sym("}")?;
        Ok(b)
    }

    fn stmt(&mut self, scope: &Scope, pidx: usize) -> Result<StmtNode, LangError> {
        let mut label = None;
        if matches!(self.peek(), Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()))
            && matches!(self.peek_at(1), Tok::Sym(":"))
        {
            let (l, lpos) = self.ident()?;
            self.bump();
            if self.labels.contains_key(&l) || l == "quiescent" {
                return Err(LangError::Duplicate { pos: lpos, name: l });
            }
            self.labels.insert(l.clone(), pidx);
            label = Some(l);
        }
        let pos = self.pos();
        let id = self.fresh_id();
        let kind = match self.peek().clone() {
            Tok::Ident(k) if k == "skip" => {
                self.bump();
                self.expect_sym(";")?;
                StmtKind::Skip
            }
            Tok::Ident(k) if k == "if" => {
                self.bump();
                self.expect_sym("(")?;
                let c = self.expr(scope)?;
                self.expect_sym(")")?;
                let then = self.block(scope, pidx)?;
                let els = if self.is_kw("else") {
                    self.bump();
                    if self.is_kw("if") {
                        Some(vec![self.stmt(scope, pidx)?])
                    } else {
                        Some(self.block(scope, pidx)?)
                    }
                } else {
                    None
                };
                StmtKind::If(c, then, els)
            }
            Tok::Ident(k) if k == "assert" => {
                self.bump();
                let f = self.expr(scope)?;
                self.expect_sym(";")?;
                StmtKind::Assert(f)
            }
            Tok::Ident(k) if k == "assert2" => {
                self.bump();
                let s2 = Scope { old_allowed: true, ..scope.clone() };
                let f = self.expr(&s2)?;
                self.expect_sym(";")?;
                StmtKind::Assert2(f)
            }
            Tok::Ident(k) if k == "return" => {
                self.bump();
                let es = if self.is_sym(";") { vec![Expr::Int(0)] } else { self.return_exprs(scope)? };
                self.expect_sym(";")?;
                match self.ret_arity {
                    None => self.ret_arity = Some(es.len()),
                    Some(a) if a != es.len() => {
                        return Err(LangError::Invalid { pos, msg: "return arity differs between returns".into() })
                    }
                    _ => {}
                }
                StmtKind::Return(es)
            }
            Tok::Ident(k) if k == "acquire" || k == "release" => {
                if !self.allow_locks {
                    return Err(LangError::LockInInput { pos });
                }
                self.bump();
                self.expect_sym("(")?;
                let (l, _) = self.ident()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                if k == "acquire" {
                    StmtKind::Acquire(l)
                } else {
                    StmtKind::Release(l)
                }
            }
            Tok::Ident(_) => {
                let (name, npos) = self.ident()?;
                let v = self.resolve(&name, npos, scope)?;
                if v.kind != VarKind::Global && v.kind != VarKind::Local && v.kind != VarKind::Param {
                    return Err(LangError::Invalid { pos: npos, msg: format!("cannot assign `{name}`") });
                }
                self.expect_sym("=")?;
                if self.eat_sym("*") {
                    self.expect_sym(";")?;
                    StmtKind::Havoc(v)
                } else {
                    let e = self.expr(scope)?;
                    self.expect_sym(";")?;
                    StmtKind::Assign(v, e)
                }
            }
            _ => return self.err(format!("expected statement, found {}", self.describe())),
        };
        Ok(StmtNode { id, label, pos, kind })
    }

    fn return_exprs(&mut self, scope: &Scope) -> Result<Vec<Expr>, LangError> {
        if self.is_sym("(") {
            let save = self.at;
            self.bump();
            let first = self.expr(scope)?;
            if self.eat_sym(",") {
                let mut es = vec![first];
                loop {
                    es.push(self.expr(scope)?);
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym(")")?;
                return Ok(es);
            }
            self.at = save;
        }
        Ok(vec![self.expr(scope)?])
    }

    fn annotation(&mut self) -> Result<(), LangError> {
        self.expect_sym("@")?;
        let (kind, kpos) = match self.peek().clone() {
            Tok::Ident(s) => {
                let p = self.pos();
                self.bump();
                (s, p)
            }
            _ => return self.err("expected annotation name"),
        };
        match kind.as_str() {
            "inv" | "basis" => {
                let points = self.point_list()?;
                self.expect_sym("{")?;
                for (pt, ppos) in &points {
                    let _ = self.point_scope(pt, *ppos)?;
                }
                let scope = self.point_scope(&points[0].0, points[0].1)?;
                if kind == "inv" {
                    let f = self.expr(&scope)?;
                    self.expect_sym("}")?;
                    for (pt, ppos) in points {
                        if self.lib.annotations.inv.insert(pt.clone(), f.clone()).is_some() {
                            return Err(LangError::Duplicate { pos: ppos, name: format!("@inv({pt})") });
                        }
                    }
                } else {
                    let fs = self.formula_list(&scope)?;
                    for (pt, ppos) in points {
                        if self.lib.annotations.basis.insert(pt.clone(), fs.clone()).is_some() {
                            return Err(LangError::Duplicate { pos: ppos, name: format!("@basis({pt})") });
                        }
                    }
                }
            }
            "seed" => {
                let scope = Scope { all_procs: true, old_allowed: true, logical_allowed: true, rets_visible: true, proc: None };
                self.expect_sym("{")?;
                let fs = self.formula_list(&scope)?;
                self.lib.annotations.seeds.extend(fs);
            }
            "ensures" => {
                self.expect_sym("(")?;
                let (pname, ppos) = self.ident()?;
                self.expect_sym(")")?;
                let pidx = self
                    .lib
                    .proc_index(&pname)
                    .ok_or(LangError::Undeclared { pos: ppos, name: pname.clone() })?;
                let scope = Scope { proc: Some(pidx), old_allowed: true, rets_visible: true, ..Scope::default() };
                self.expect_sym("{")?;
                let f = self.expr(&scope)?;
                self.expect_sym("}")?;
                if self.lib.annotations.ensures.insert(pname.clone(), f).is_some() {
                    return Err(LangError::Duplicate { pos: ppos, name: format!("@ensures({pname})") });
                }
            }
            _ => return Err(LangError::Syntax { pos: kpos, msg: format!("unknown annotation `@{kind}`") }),
        }
        Ok(())
    }

    fn formula_list(&mut self, scope: &Scope) -> Result<Vec<Formula>, LangError> {
        let mut fs = Vec::new();
        while !self.eat_sym("}") {
            fs.push(self.expr(scope)?);
            self.expect_sym(";")?;
        }
        Ok(fs)
    }

    fn point_list(&mut self) -> Result<Vec<(PointRef, Pos)>, LangError> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        loop {
            let pos = self.pos();
            let pt = if self.is_kw("quiescent") {
                self.bump();
                PointRef::Quiescent
            } else {
                let (name, _) = self.ident()?;
                if self.eat_sym(".") {
                    let (which, wpos) = match self.peek().clone() {
                        Tok::Ident(s) => {
                            let p = self.pos();
                            self.bump();
                            (s, p)
                        }
                        _ => return self.err("expected `entry` or `exit`"),
                    };
                    match which.as_str() {
                        "entry" => PointRef::Entry(name),
                        "exit" => PointRef::Exit(name),
                        _ => return Err(LangError::Syntax { pos: wpos, msg: "expected `entry` or `exit`".into() }),
                    }
                } else {
                    PointRef::Label(name)
                }
            };
            out.push((pt, pos));
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn point_scope(&self, pt: &PointRef, pos: Pos) -> Result<Scope, LangError> {
        let pidx = match pt {
            PointRef::Quiescent => None,
            PointRef::Entry(p) | PointRef::Exit(p) => {
                Some(self.lib.proc_index(p).ok_or(LangError::Undeclared { pos, name: p.clone() })?)
            }
            PointRef::Label(l) => Some(*self.labels.get(l).ok_or(LangError::Undeclared { pos, name: l.clone() })?),
        };
        Ok(Scope { proc: pidx, all_procs: false, old_allowed: true, logical_allowed: true, rets_visible: true })
    }

    fn resolve(&self, name: &str, pos: Pos, scope: &Scope) -> Result<Var, LangError> {
        if let Some(g) = self.lib.globals.iter().find(|g| g.var.name == name) {
            return Ok(g.var.clone());
        }
        let frames: Vec<usize> = if scope.all_procs {
            (0..self.lib.procs.len()).collect()
        } else {
            scope.proc.into_iter().collect()
        };
        for pi in frames {
            let p = &self.lib.procs[pi];
            // The procedure being parsed keeps its declarations in the parser.
            let (params, locals) = if p.body.is_empty() && p.rets.is_empty() {
                (&self.cur_params, &self.cur_locals)
            } else {
                (&p.params, &p.locals)
            };
            if let Some(v) = params.iter().chain(locals.iter()).find(|v| v.name == name) {
                return Ok(v.clone());
            }
            if scope.rets_visible {
                let rets = if p.rets.is_empty() { ret_vars(self.ret_arity.unwrap_or(1)) } else { p.rets.clone() };
                if let Some(v) = rets.iter().find(|v| v.name == name) {
                    return Ok(v.clone());
                }
            }
        }
        Err(LangError::Undeclared { pos, name: name.to_string() })
    }

    fn expr(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let lhs = self.or_expr(scope)?;
        if self.eat_sym("==>") {
            let rhs = self.expr(scope)?;
            return Ok(Expr::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let mut items = vec![self.and_expr(scope)?];
        while self.eat_sym("||") {
            items.push(self.and_expr(scope)?);
        }
        Ok(Expr::or(items))
    }

    fn and_expr(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let mut items = vec![self.not_expr(scope)?];
        while self.eat_sym("&&") {
            items.push(self.not_expr(scope)?);
        }
        Ok(Expr::and(items))
    }

    fn not_expr(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        if self.eat_sym("!") {
            return Ok(Expr::not(self.not_expr(scope)?));
        }
        self.cmp_expr(scope)
    }

    fn cmp_expr(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let lhs = self.sum(scope)?;
        let op = match self.peek() {
            Tok::Sym("==") => CmpOp::Eq,
            Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.sum(scope)?;
        Ok(Expr::cmp(op, lhs, rhs))
    }

    fn sum(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let mut acc = self.unary(scope)?;
        loop {
            if self.eat_sym("+") {
                acc = Expr::add(acc, self.unary(scope)?);
            } else if self.eat_sym("-") {
                acc = Expr::sub(acc, self.unary(scope)?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        if self.eat_sym("-") {
            if let Tok::Int(n) = self.peek().clone() {
                self.bump();
                return Ok(Expr::Int(-n));
            }
            return Ok(Expr::Neg(Box::new(self.unary(scope)?)));
        }
        self.primary(scope)
    }

    fn primes(&mut self) -> usize {
        let mut n = 0;
        while self.eat_sym("'") {
            n += 1;
        }
        n
    }

    fn primary(&mut self, scope: &Scope) -> Result<Expr, LangError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Int(n))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr(scope)?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym("$") => {
                if !scope.logical_allowed {
                    return self.err("logical variable not allowed here");
                }
                self.bump();
                let (n, _) = self.ident()?;
                let p = self.primes();
                Ok(Expr::Var(Var::logical(&format!("${n}{}", "'".repeat(p)))))
            }
            Tok::Ident(k) if k == "true" || k == "false" => {
                self.bump();
                Ok(Expr::Bool(k == "true"))
            }
            Tok::Ident(k) if k == "old" => {
                if !scope.old_allowed {
                    return self.err("`old` is only allowed in two-state formulas");
                }
                self.bump();
                self.expect_sym("(")?;
                let (n, npos) = self.ident()?;
                self.expect_sym(")")?;
                let base = self.resolve(&n, npos, scope)?;
                if !matches!(base.kind, VarKind::Global | VarKind::Param) {
                    return Err(LangError::Invalid { pos: npos, msg: format!("`old({n})` needs a global or parameter") });
                }
                let p = self.primes();
                if p > 0 {
                    if !scope.logical_allowed {
                        return self.err("logical variable not allowed here");
                    }
                    return Ok(Expr::Var(Var::logical(&format!("old({n}){}", "'".repeat(p)))));
                }
                let sh = Var::shadow(&n);
                if let Some(pi) = scope.proc {
                    let shadows = &mut self.lib.procs[pi].shadows;
                    if !shadows.contains(&sh) {
                        shadows.push(sh.clone());
                        shadows.sort();
                    }
                }
                Ok(Expr::Var(sh))
            }
            Tok::Ident(_) => {
                let (n, npos) = self.ident()?;
                if self.is_sym("(") {
                    let arity = match self.lib.ufun(&n) {
                        Some(u) => u.arity,
                        None => return Err(LangError::Undeclared { pos: npos, name: n }),
                    };
                    self.bump();
                    let mut args = Vec::new();
                    if !self.is_sym(")") {
                        loop {
                            args.push(self.expr(scope)?);
                            if !self.eat_sym(",") {
                                break;
                            }
                        }
                    }
                    self.expect_sym(")")?;
                    if args.len() != arity {
                        return Err(LangError::Invalid {
                            pos: npos,
                            msg: format!("`{n}` expects {arity} argument(s), got {}", args.len()),
                        });
                    }
                    return Ok(Expr::App(n, args));
                }
                let p = self.primes();
                if p > 0 {
                    if !scope.logical_allowed {
                        return Err(LangError::Syntax { pos, msg: "logical variable not allowed here".into() });
                    }
                    return Ok(Expr::Var(Var::logical(&format!("{n}{}", "'".repeat(p)))));
                }
                Ok(Expr::Var(self.resolve(&n, npos, scope)?))
            }
            _ => self.err(format!("expected expression, found {}", self.describe())),
        }
    }
}

pub fn is_ret_name(s: &str) -> bool {
    s == "ret" || (s.starts_with("ret") && s[3..].parse::<usize>().is_ok())
}

pub fn ret_vars(arity: usize) -> Vec<Var> {
    if arity == 1 {
        vec![Var::local("ret")]
    } else {
        (1..=arity).map(|i| Var::local(&format!("ret{i}"))).collect()
    }
}

/// True when every path through `s` ends in a return.
pub fn terminates(s: &StmtNode) -> bool {
    match &s.kind {
        StmtKind::Return(_) => true,
        StmtKind::If(_, t, Some(e)) => block_terminates(t) && block_terminates(e),
        _ => false,
    }
}

pub fn block_terminates(b: &[StmtNode]) -> bool {
    b.iter().any(terminates)
}

/// Parses a standalone formula against `lib`. With `proc` given, names
/// resolve in that procedure's frame; otherwise in any procedure's.
pub fn parse_formula(src: &str, lib: &Library, proc: Option<&str>) -> Result<Formula, LangError> {
    let mut p = Parser::new(src, false)?;
    p.lib = lib.clone();
    let pidx = match proc {
        Some(name) => Some(lib.proc_index(name).ok_or(LangError::Undeclared { pos: Pos::default(), name: name.into() })?),
        None => None,
    };
    let scope = Scope { proc: pidx, all_procs: pidx.is_none(), old_allowed: true, logical_allowed: true, rets_visible: true };
    let f = p.expr(&scope)?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.err(format!("unexpected {} after formula", p.describe()));
    }
    Ok(f)
}
