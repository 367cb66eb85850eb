//! Formulas: normal form, weakest preconditions, renaming and a bounded
//! validity checker.

pub mod eval;
pub mod normal;
pub mod solve;
pub mod wp;

pub use eval::{eval_bool, eval_int, Env};
pub use normal::{family_key, is_positive, leaves, mk_and, mk_or, negate, normalize, normalize_term};
pub use solve::{Checker, TriState, Valuation};
pub use wp::{fresh_logical, rename_locals, subst, wp, wp_avoiding, wp_call, wp_edge};
