//! Regex frontend: parsing the counting fragment and compiling it to
//! monadic counting automata.
//!
//! The supported syntax covers literals, escapes, character classes,
//! concatenation, `|`, `*`, `+`, `?`, and the counting operators `{n}`,
//! `{n,m}`, `{n,}` applied to character classes. General range repetitions
//! are normalised at parse time: `s{n,m}` with `0 < n < m` becomes
//! `s{n,n}` followed by `s{0,m-n}`.

mod compiler;
mod parser;

pub use compiler::{compile, CompileError};
pub use parser::{parse, parse_in, DEFAULT_BOUND_CAP};

use crate::alphabet::CharClass;

/// Abstract syntax of the supported regex dialect. Counting applies to
/// character classes only (the monadic restriction).
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum RegexAst {
    /// Matches nothing.
    Empty,
    /// Matches the empty word.
    Epsilon,
    /// Matches one symbol of the class.
    Class(CharClass),
    Concat(Box<RegexAst>, Box<RegexAst>),
    Union(Box<RegexAst>, Box<RegexAst>),
    Star(Box<RegexAst>),
    /// Exactly `n` symbols of the class.
    CountExact(CharClass, u64),
    /// Up to `n` symbols of the class.
    CountUpTo(CharClass, u64),
}

impl RegexAst {
    pub fn concat(l: RegexAst, r: RegexAst) -> RegexAst {
        RegexAst::Concat(Box::new(l), Box::new(r))
    }

    pub fn union(l: RegexAst, r: RegexAst) -> RegexAst {
        RegexAst::Union(Box::new(l), Box::new(r))
    }

    pub fn star(e: RegexAst) -> RegexAst {
        RegexAst::Star(Box::new(e))
    }
}

/// Errors raised while parsing a pattern.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    /// A counting operator was applied to something other than a character
    /// class, e.g. `(ab){3}`.
    #[error("counted subexpression at byte {pos} is not a character class")]
    NonMonadicCounting { pos: usize },
    #[error("repetition bound {bound} at byte {pos} exceeds the cap {cap}")]
    BoundTooLarge { pos: usize, bound: u64, cap: u64 },
}
