//! Secure C code generation: prompting, guideline retrieval, sandboxed test
//! execution, the revision workflow and benchmark scoring.

pub mod cwe;
pub mod eval;
pub mod gateway;
pub mod guidelines;
pub mod persist;
pub mod prompts;
pub mod sandbox;
pub mod workflow;
