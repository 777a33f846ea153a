//! A toolkit for counting automata (CAs): finite automata extended with
//! bounded counters, as produced by regexes with bounded repetition such as
//! `.*a.{k}` or `[D-G]{43,53}`.
//!
//! The crate provides:
//!
//! - [`alphabet`] — symbolic character classes over a finite alphabet, with
//!   Boolean operations and minterm computation;
//! - [`automaton`] — the nondeterministic CA data model, the configuration-set
//!   simulation oracle, monadic-shape validation, and the deterministic CA
//!   (DCA) model with its runner;
//! - [`frontend`] — a regex parser for the monadic counting fragment and a
//!   Glushkov-style compiler from regexes to monadic CAs;
//! - [`naive`] — the baseline pipeline: unfold counters into control states,
//!   subset construction, DFA minimisation;
//! - [`generaldet`] — sphere-based determinisation of arbitrary CAs, with a
//!   terminating variant, a budget-limited basic variant, and a
//!   reachability-restricted variant; includes the parameter-constraint
//!   solver;
//! - [`monadicdet`] — the specialised, polynomial determinisation of monadic
//!   CAs via multiset spheres;
//! - [`json`], [`dot`], [`stats`] — serialization and the benchmark harness
//!   behind the `cadet` command-line tool;
//! - [`checks`] — verification utilities (language agreement, invariant
//!   exploration, isomorphism tests) used by the test suites and exposed for
//!   downstream users.

pub mod alphabet;
pub mod automaton;
pub mod checks;
pub mod dot;
pub mod frontend;
pub mod generaldet;
pub mod json;
pub mod monadicdet;
pub mod naive;
pub mod stats;
