//! Script runner, REPL and HTTP service over summar-guard sessions.

pub mod service;
