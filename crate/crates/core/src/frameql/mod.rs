//! FrameQL: a SQL dialect over per-frame object detections.
//!
//! Grammar (keywords are case-insensitive; identifiers, class names and UDF
//! names are case-sensitive):
//!
//! ```text
//! query       = "SELECT" select_list "FROM" ident
//!               [ "WHERE" expr ]
//!               [ "GROUP" "BY" ( "timestamp" | "trackid" ) ]
//!               [ "HAVING" having_term { "AND" having_term } ]
//!               { trailer } ;
//! select_list = "*" | aggregate | column { "," column } ;
//! aggregate   = "FCOUNT" "(" "*" ")"
//!             | "COUNT" "(" ( "*" | "DISTINCT" column ) ")" ;
//! having_term = ( "COUNT" "(" "*" ")" | "SUM" "(" "class" "=" string ")" )
//!               cmp_op number ;
//! trailer     = "LIMIT" int [ "GAP" int ]
//!             | "ERROR" "WITHIN" number
//!             | [ "AT" ] "CONFIDENCE" number [ "%" ]
//!             | "FPR" "WITHIN" number
//!             | "FNR" "WITHIN" number ;
//! expr        = and_expr { "OR" and_expr } ;
//! and_expr    = comparison { "AND" comparison } ;
//! comparison  = operand cmp_op operand | "(" expr ")" ;
//! operand     = number | string | column | udf "(" column ")" | "(" expr ")" ;
//! cmp_op      = "=" | "!=" | "<>" | "<" | "<=" | ">" | ">=" ;
//! column      = "timestamp" | "class" | "mask" | "trackid" | "content" | "features" ;
//! ```
//!
//! Each trailer may appear at most once, in any order. Validation rejects
//! `GAP` without `LIMIT`, `ERROR WITHIN` on a non-aggregate select list,
//! `HAVING` without `GROUP BY`, grouped aggregates, and calls to UDFs that are
//! not registered. `ERROR WITHIN` without a confidence implies 95%.

mod ast;
mod lexer;
mod parser;
mod print;

pub use ast::*;
pub use print::print;

use std::fmt;

use crate::select::udf::UdfRegistry;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    Validation,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Syntax => "syntax",
            ErrorKind::Validation => "validation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{column}: {kind} error: {message}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn syntax(pos: Pos, message: impl Into<String>) -> Self {
        ParseError { kind: ErrorKind::Syntax, line: pos.line, column: pos.column, message: message.into() }
    }

    pub(crate) fn validation(pos: Pos, message: impl Into<String>) -> Self {
        ParseError { kind: ErrorKind::Validation, line: pos.line, column: pos.column, message: message.into() }
    }
}

/// Parses and validates against the built-in UDF set.
pub fn parse(text: &str) -> Result<Query, ParseError> {
    parse_with(text, UdfRegistry::builtin())
}

pub fn parse_with(text: &str, udfs: &UdfRegistry) -> Result<Query, ParseError> {
    parser::parse_query(text, udfs)
}
