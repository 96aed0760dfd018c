//! HSL front end: program parser, contract interface files, the unified
//! type map and semantic validation.

pub mod ast;
pub mod diag;
pub mod iface;
pub mod lexer;
pub mod parser;
pub mod types;
pub mod validate;

pub use ast::Program;
pub use diag::{Code, Diagnostic, Diagnostics, Severity, Span};
pub use iface::{parse_contract_interface, ContractInterface};
pub use parser::parse_hsl;
pub use types::{map_type, Language, TypeMapping, UnifiedType};
pub use validate::{validate, ValidatedProgram};
