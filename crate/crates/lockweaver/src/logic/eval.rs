//! Three-valued evaluation of expressions under partial valuations.

use crate::lang::{Expr, Var};

/// Source of variable values and function-table entries. `None` means
/// not (yet) known.
pub trait Env {
    fn var(&self, v: &Var) -> Option<i64>;
    fn app(&self, f: &str, args: &[i64]) -> Option<i64>;
}

pub fn eval_int(e: &Expr, env: &dyn Env) -> Option<i64> {
    match e {
        Expr::Int(n) => Some(*n),
        Expr::Bool(b) => Some(*b as i64),
        Expr::Var(v) => env.var(v),
        Expr::Neg(a) => eval_int(a, env).map(i64::wrapping_neg),
        Expr::Add(a, b) => Some(eval_int(a, env)?.wrapping_add(eval_int(b, env)?)),
        Expr::Sub(a, b) => Some(eval_int(a, env)?.wrapping_sub(eval_int(b, env)?)),
        Expr::App(f, args) => {
            let vals: Option<Vec<i64>> = args.iter().map(|a| eval_int(a, env)).collect();
            env.app(f, &vals?)
        }
        Expr::Cmp(..) | Expr::Not(_) | Expr::And(_) | Expr::Or(_) => eval_bool(e, env).map(|b| b as i64),
    }
}

pub fn eval_bool(e: &Expr, env: &dyn Env) -> Option<bool> {
    match e {
        Expr::Bool(b) => Some(*b),
        Expr::Cmp(op, a, b) => Some(op.eval(eval_int(a, env)?, eval_int(b, env)?)),
        Expr::Not(a) => eval_bool(a, env).map(|b| !b),
        Expr::And(xs) => {
            let mut unknown = false;
            for x in xs {
                match eval_bool(x, env) {
                    Some(false) => return Some(false),
                    None => unknown = true,
                    _ => {}
                }
            }
            if unknown {
                None
            } else {
                Some(true)
            }
        }
        Expr::Or(xs) => {
            let mut unknown = false;
            for x in xs {
                match eval_bool(x, env) {
                    Some(true) => return Some(true),
                    None => unknown = true,
                    _ => {}
                }
            }
            if unknown {
                None
            } else {
                Some(false)
            }
        }
        _ => eval_int(e, env).map(|n| n != 0),
    }
}
