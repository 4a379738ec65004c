//! A small ClassAd dialect: bracketed attribute/expression records with
//! three-valued evaluation, used to describe both jobs and resources.

mod ast;
mod eval;
mod parser;
mod value;

pub use ast::{BinaryOp, Builtin, ClassAd, Expr, UnaryOp};
pub use eval::{
    evaluate, evaluate_multi_scope, match_two, rank_in, rank_of, MatchContext, Rank,
};
pub use parser::{parse_ad, parse_expr, ParseError};
pub use value::Value;
