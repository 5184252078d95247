//! Acceptance suite for `stericpb`; everything lives in `tests/acceptance.rs`.
//!
//! Run it alone with `cargo test -p stericpb-validation --test acceptance`.
