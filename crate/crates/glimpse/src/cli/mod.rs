//! Config-driven command-line pipeline (placeholder while the core builds).

pub fn placeholder() {}
