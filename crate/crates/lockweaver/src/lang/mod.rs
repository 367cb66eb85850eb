//! Input language: syntax tree, parser, printer and control graphs.

pub mod ast;
pub mod cfg;
mod parser;
pub mod print;

pub use ast::*;
pub use cfg::{build_control_graph, ControlGraph, Edge, EdgeId, EdgeOrigin, EdgeStmt, Vertex, VertexId, VertexKind, W};
pub use parser::{block_terminates, parse_formula, ret_vars, terminates};
pub use print::print_library;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LangError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("undeclared identifier `{name}` at {pos}")]
    Undeclared { pos: Pos, name: String },
    #[error("duplicate declaration `{name}` at {pos}")]
    Duplicate { pos: Pos, name: String },
    #[error("locking statement in input at {pos}")]
    LockInInput { pos: Pos },
    #[error("invalid program at {pos}: {msg}")]
    Invalid { pos: Pos, msg: String },
}

/// Parses a lock-free `.lcl` library.
pub fn parse_library(src: &str) -> Result<Library, LangError> {
    parser::Parser::new(src, false)?.library()
}

/// Parses synthesizer output, which may contain `acquire`/`release`.
pub fn parse_instrumented(src: &str) -> Result<Library, LangError> {
    parser::Parser::new(src, true)?.library()
}
