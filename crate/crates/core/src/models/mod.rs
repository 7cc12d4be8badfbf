//! Model registry: built-in families, the expression grammar, and JSON configs.

pub mod builtin;
pub mod expr;
pub mod spec;

pub use builtin::{gradient_family, lti, rl_network, rl_network_expressions, QuarticPotential};
pub use expr::{parse, parse_signal, Expr, ParseError, ParseErrorKind};
pub use spec::{expression_system, BuiltinSpec, ExpressionSpec, ModelSpec};
