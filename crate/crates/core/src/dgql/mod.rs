//! The DGQL query language: parsing, printing, desugaring and the
//! well-designedness check.

pub mod ast;
pub mod desugar;
pub mod parser;

pub use ast::*;
pub use desugar::{check_well_designed, desugar, Atom, Pattern, Query};
pub use parser::parse;

use crate::error::Result;

/// Parses, desugars and checks a query.
pub fn compile(text: &str) -> Result<Query> {
    let q = desugar(&parse(text)?);
    check_well_designed(&q)?;
    Ok(q)
}
