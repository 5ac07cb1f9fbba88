//! Acceptance runner for the dfgcn workspace; see `tests/acceptance.rs`.
//!
//! Kept in its own package so it runs after every other test target in a
//! workspace test run.
