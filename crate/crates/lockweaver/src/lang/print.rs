//! Pretty-printer. Output re-parses to a structurally equal library.

use std::fmt::{self, Write};

use super::ast::*;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Or(_) => 1,
        Expr::And(_) => 2,
        Expr::Cmp(..) => 4,
        Expr::Add(..) | Expr::Sub(..) => 5,
        Expr::Neg(_) => 6,
        Expr::Int(n) if *n < 0 => 6,
        _ => 7,
    }
}

fn write_expr(out: &mut String, e: &Expr, ctx: u8) {
    let wrap = prec(e) < ctx;
    if wrap {
        out.push('(');
    }
    match e {
        Expr::Int(n) => {
            let _ = write!(out, "{n}");
        }
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Var(v) => out.push_str(&v.name),
        Expr::Neg(a) => {
            out.push('-');
            // `-5` would re-parse as a literal.
            let ctx = if matches!(**a, Expr::Int(_)) { 8 } else { 6 };
            write_expr(out, a, ctx);
        }
        Expr::Add(a, b) => {
            write_expr(out, a, 5);
            out.push_str(" + ");
            write_expr(out, b, 6);
        }
        Expr::Sub(a, b) => {
            write_expr(out, a, 5);
            out.push_str(" - ");
            write_expr(out, b, 6);
        }
        Expr::App(f, args) => {
            out.push_str(f);
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a, 0);
            }
            out.push(')');
        }
        Expr::Cmp(op, a, b) => {
            write_expr(out, a, 5);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b, 5);
        }
        Expr::Not(a) => {
            out.push('!');
            write_expr(out, a, 7);
        }
        Expr::And(xs) | Expr::Or(xs) => {
            let (sep, inner) = if matches!(e, Expr::And(_)) { (" && ", 3) } else { (" || ", 2) };
            if xs.is_empty() {
                out.push_str(if matches!(e, Expr::And(_)) { "true" } else { "false" });
            }
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                write_expr(out, x, inner);
            }
        }
    }
    if wrap {
        out.push(')');
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(&mut s, self, 0);
        f.write_str(&s)
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

pub fn print_stmt(out: &mut String, s: &StmtNode, depth: usize) {
    indent(out, depth);
    if let Some(l) = &s.label {
        let _ = write!(out, "{l}: ");
    }
    match &s.kind {
        StmtKind::Skip => out.push_str("skip;\n"),
        StmtKind::Assign(v, e) => {
            let _ = writeln!(out, "{v} = {e};");
        }
        StmtKind::Havoc(v) => {
            let _ = writeln!(out, "{v} = *;");
        }
        StmtKind::If(c, t, e) => {
            let _ = writeln!(out, "if ({c}) {{");
            print_block(out, t, depth + 1);
            indent(out, depth);
            out.push('}');
            if let Some(e) = e {
                out.push_str(" else {\n");
                print_block(out, e, depth + 1);
                indent(out, depth);
                out.push('}');
            }
            out.push('\n');
        }
        StmtKind::Assert(f) => {
            let _ = writeln!(out, "assert {f};");
        }
        StmtKind::Assert2(f) => {
            let _ = writeln!(out, "assert2 {f};");
        }
        StmtKind::Return(es) => {
            if es.len() == 1 {
                let _ = writeln!(out, "return {};", es[0]);
            } else {
                let parts: Vec<String> = es.iter().map(|e| e.to_string()).collect();
                let _ = writeln!(out, "return ({});", parts.join(", "));
            }
        }
        StmtKind::Acquire(l) => {
            let _ = writeln!(out, "acquire({l});");
        }
        StmtKind::Release(l) => {
            let _ = writeln!(out, "release({l});");
        }
    }
}

pub fn print_block(out: &mut String, b: &[StmtNode], depth: usize) {
    for s in b {
        print_stmt(out, s, depth);
    }
}

pub fn print_proc(out: &mut String, p: &Procedure) {
    let params: Vec<&str> = p.params.iter().map(|v| v.name.as_str()).collect();
    let _ = writeln!(out, "proc {}({}) {{", p.name, params.join(", "));
    if !p.locals.is_empty() {
        let locals: Vec<&str> = p.locals.iter().map(|v| v.name.as_str()).collect();
        let _ = writeln!(out, "    int {};", locals.join(", "));
    }
    print_block(out, &p.body, 1);
    out.push_str("}\n");
}

/// Renders a library as `.lcl` source.
pub fn print_library(lib: &Library) -> String {
    let mut out = String::new();
    if !lib.ufuns.is_empty() {
        out.push_str("ufun");
        for u in &lib.ufuns {
            let _ = write!(out, " {}/{};", u.name, u.arity);
        }
        out.push('\n');
    }
    out.push_str("globals {\n");
    for g in &lib.globals {
        let _ = writeln!(out, "    {} = {};", g.var, g.init);
    }
    out.push_str("}\n");
    for p in &lib.procs {
        out.push('\n');
        print_proc(&mut out, p);
    }
    let a = &lib.annotations;
    if !a.is_empty() {
        out.push('\n');
    }
    for (pt, f) in &a.inv {
        let _ = writeln!(out, "@inv({pt}) {{ {f} }}");
    }
    for (pt, fs) in &a.basis {
        let _ = write!(out, "@basis({pt}) {{");
        for f in fs {
            let _ = write!(out, " {f};");
        }
        out.push_str(" }\n");
    }
    if !a.seeds.is_empty() {
        out.push_str("@seed {");
        for f in &a.seeds {
            let _ = write!(out, " {f};");
        }
        out.push_str(" }\n");
    }
    for (p, f) in &a.ensures {
        let _ = writeln!(out, "@ensures({p}) {{ {f} }}");
    }
    out
}
