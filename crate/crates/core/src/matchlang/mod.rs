//! The match language: expressions over attribute ads, three-valued
//! evaluation, and bilateral job/slot matching.

mod ad;
mod ast;
mod eval;
mod matching;
mod parser;
mod value;

pub use ad::{parse_ads, write_ads, Ad, AdError, AdKind};
pub use ast::{BinaryOp, Expr, Func, Scope, UnaryOp};
pub use eval::{evaluate, MAX_RESOLUTION_DEPTH};
pub use matching::{
    compare_ranked, name_key, rank_order, rank_value, requirements_match, symmetric_match,
};
pub use parser::{parse, ParseError};
pub use value::Value;
