//! x
