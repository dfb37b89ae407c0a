pub mod aam;
pub mod ast;
pub mod calculus;
pub mod delta;
pub mod jam;
pub mod pdreach;
pub mod sexpr;
pub mod queries;
pub mod cli;
