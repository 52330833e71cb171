//! Acceptance checks for the adaptrunc samplers. Everything lives in
//! `tests/acceptance.rs`; run it with `cargo test -p adaptrunc-validation`.
