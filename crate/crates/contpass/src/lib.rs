//! A laboratory for compiler passes over a mini imperative language:
//! three big-step semantics (naive, intermediate, optimised),
//! lambda-lifting, CPS conversion, the matching small-step machines, and
//! a differential-testing harness that exercises the agreement and
//! preservation properties between all of them on generated programs.

pub mod ast;
pub mod bigstep;
pub mod cps;
pub mod generator;
pub mod harness;
pub mod lifting;
pub mod machines;
pub mod parser;
pub mod rng;

pub use ast::{BinOp, Expr, Ident, Term, Value};
pub use bigstep::{EvalError, EvalOutcome, Semantics};
pub use lifting::Program;
pub use parser::{parse_term, validate, Diagnostic};
