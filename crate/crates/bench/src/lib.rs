//! Shared fixtures for the benchmark suite live in the benches themselves;
//! this crate exists to anchor them in the workspace.
