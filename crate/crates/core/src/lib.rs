//! Compile SQL SELECT queries into tool-calling benchmarks (SLOT, SEL, REST),
//! execute them over CSV payloads, and score tool-calling models.

pub mod agent;
pub mod dataset;
pub mod db;
pub mod endpoint;
pub mod eval;
pub mod normalize;
pub mod pool;
pub mod runtime;
pub mod spec;
pub mod sql;
pub mod table;
pub mod transpile;
pub mod value;
