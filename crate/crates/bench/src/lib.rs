//! Placeholder library; the content of this crate is its benchmarks.
