//! The counting-automaton data model.
//!
//! A counting automaton (CA) is a finite automaton extended with counters
//! over a bounded range. Transitions carry a symbol guard (a [`CharClass`]),
//! a conjunction of counter guard atoms, and an assignment giving each
//! assigned counter a new value of the form `c + k` or `k`. Unassigned
//! counters keep their value (frame semantics). Initial states carry concrete
//! valuations of every counter; final conditions are per-state disjunctions
//! of guard conjunctions.
//!
//! The module also defines the deterministic CA ([`Dca`]) produced by the
//! determinisers: its control states are spheres, its counters are the
//! sphere parameters, and for every reachable configuration and symbol at
//! most one transition is enabled.

use std::collections::BTreeSet;
use std::fmt;

use crate::alphabet::{Alphabet, CharClass, Symbol};

// ---------------------------------------------------------------------------
// Identifiers, terms, guard atoms
// ---------------------------------------------------------------------------

/// Dense index of a control state.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct StateId(pub u32);

/// Dense index of a counter.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CounterId(pub u32);

/// Dense index of a DCA parameter.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ParamId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl CounterId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An arithmetic term `var + offset` or the constant `offset`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Term<Id> {
    pub var: Option<Id>,
    pub offset: u64,
}

impl<Id> Term<Id> {
    pub fn constant(k: u64) -> Self {
        Term {
            var: None,
            offset: k,
        }
    }

    pub fn var_plus(var: Id, k: u64) -> Self {
        Term {
            var: Some(var),
            offset: k,
        }
    }
}

impl<Id: Copy> Term<Id> {
    pub fn eval(&self, vals: &[u64]) -> u64
    where
        Id: Into<usize> + Copy,
    {
        match self.var {
            Some(v) => vals[v.into()] + self.offset,
            None => self.offset,
        }
    }
}

impl From<CounterId> for usize {
    fn from(c: CounterId) -> usize {
        c.index()
    }
}

impl From<ParamId> for usize {
    fn from(p: ParamId) -> usize {
        p.index()
    }
}

/// An atomic guard over terms: bounds against a constant, or (dis)equality
/// between two terms. Disequalities only appear in determiniser output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum GuardAtom<Id> {
    /// `term <= k`
    Le(Term<Id>, u64),
    /// `term >= k`
    Ge(Term<Id>, u64),
    /// `term = term`
    Eq(Term<Id>, Term<Id>),
    /// `term != term`
    Neq(Term<Id>, Term<Id>),
}

impl<Id: Copy + Into<usize>> GuardAtom<Id> {
    pub fn eval(&self, vals: &[u64]) -> bool {
        match self {
            GuardAtom::Le(t, k) => t.eval(vals) <= *k,
            GuardAtom::Ge(t, k) => t.eval(vals) >= *k,
            GuardAtom::Eq(a, b) => a.eval(vals) == b.eval(vals),
            GuardAtom::Neq(a, b) => a.eval(vals) != b.eval(vals),
        }
    }
}

/// Evaluates a conjunction of atoms.
pub fn conj_sat<Id: Copy + Into<usize>>(atoms: &[GuardAtom<Id>], vals: &[u64]) -> bool {
    atoms.iter().all(|a| a.eval(vals))
}

/// A disjunction of conjunctions of guard atoms. The empty disjunction is
/// false; a disjunct with no atoms is true.
pub type Dnf<Id> = Vec<Vec<GuardAtom<Id>>>;

/// Evaluates a DNF formula.
pub fn dnf_sat<Id: Copy + Into<usize>>(dnf: &Dnf<Id>, vals: &[u64]) -> bool {
    dnf.iter().any(|conj| conj_sat(conj, vals))
}

/// The always-true DNF.
pub fn dnf_true<Id>() -> Dnf<Id> {
    vec![Vec::new()]
}

/// A counter assignment: each counter assigned at most once, to a term.
/// Kept sorted by counter for canonical comparison.
pub type Assignment = Vec<(CounterId, Term<CounterId>)>;

/// One transition of a CA.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Transition {
    pub src: StateId,
    pub sym_guard: CharClass,
    pub ctr_guard: Vec<GuardAtom<CounterId>>,
    pub assign: Assignment,
    pub dst: StateId,
}

// ---------------------------------------------------------------------------
// Counting automaton
// ---------------------------------------------------------------------------

/// A nondeterministic counting automaton.
#[derive(Clone, Debug)]
pub struct CountingAutomaton {
    alphabet: Alphabet,
    state_names: Vec<String>,
    counter_names: Vec<String>,
    /// Bound `max_q` per counter: no run ever takes the counter above it.
    counter_max: Vec<u64>,
    /// Initial (state, total counter valuation) pairs.
    initial: Vec<(StateId, Vec<u64>)>,
    /// Per-state final condition; the empty DNF means non-final.
    final_cond: Vec<Dnf<CounterId>>,
    transitions: Vec<Transition>,
    outgoing: Vec<Vec<u32>>,
    max_value: u64,
}

/// A malformed automaton description.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CaError {
    #[error("state index {0} out of range")]
    BadState(u32),
    #[error("counter index {0} out of range")]
    BadCounter(u32),
    #[error("initial valuation must assign every counter a concrete value")]
    PartialInitialValuation,
    #[error("counter {0} assigned more than once on a transition")]
    DoubleAssignment(String),
}

impl CountingAutomaton {
    pub fn new(
        alphabet: Alphabet,
        state_names: Vec<String>,
        counters: Vec<(String, u64)>,
        initial: Vec<(StateId, Vec<u64>)>,
        final_cond: Vec<(StateId, Dnf<CounterId>)>,
        transitions: Vec<Transition>,
    ) -> Result<Self, CaError> {
        let n_states = state_names.len() as u32;
        let n_counters = counters.len() as u32;
        let check_state = |s: StateId| {
            if s.0 < n_states {
                Ok(())
            } else {
                Err(CaError::BadState(s.0))
            }
        };
        let check_counter = |c: CounterId| {
            if c.0 < n_counters {
                Ok(())
            } else {
                Err(CaError::BadCounter(c.0))
            }
        };
        let check_term = |t: &Term<CounterId>| t.var.map_or(Ok(()), check_counter);
        let check_atom = |a: &GuardAtom<CounterId>| match a {
            GuardAtom::Le(t, _) | GuardAtom::Ge(t, _) => check_term(t),
            GuardAtom::Eq(a, b) | GuardAtom::Neq(a, b) => check_term(a).and_then(|()| check_term(b)),
        };

        for (state, vals) in &initial {
            check_state(*state)?;
            if vals.len() != counters.len() {
                return Err(CaError::PartialInitialValuation);
            }
        }
        let mut finals = vec![Dnf::new(); state_names.len()];
        for (state, dnf) in final_cond {
            check_state(state)?;
            for conj in &dnf {
                for atom in conj {
                    check_atom(atom)?;
                }
            }
            finals[state.index()] = dnf;
        }
        let mut outgoing = vec![Vec::new(); state_names.len()];
        for (i, t) in transitions.iter().enumerate() {
            check_state(t.src)?;
            check_state(t.dst)?;
            for atom in &t.ctr_guard {
                check_atom(atom)?;
            }
            let mut seen = BTreeSet::new();
            for (c, term) in &t.assign {
                check_counter(*c)?;
                check_term(term)?;
                if !seen.insert(*c) {
                    return Err(CaError::DoubleAssignment(counters[c.index()].0.clone()));
                }
            }
            outgoing[t.src.index()].push(i as u32);
        }
        let max_value = counters.iter().map(|(_, m)| *m).max().unwrap_or(0);
        let (counter_names, counter_max) = counters.into_iter().unzip();
        Ok(CountingAutomaton {
            alphabet,
            state_names,
            counter_names,
            counter_max,
            initial,
            final_cond: finals,
            transitions,
            outgoing,
            max_value,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn state_count(&self) -> usize {
        self.state_names.len()
    }

    pub fn counter_count(&self) -> usize {
        self.counter_names.len()
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.state_names[s.index()]
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn counter_name(&self, c: CounterId) -> &str {
        &self.counter_names[c.index()]
    }

    pub fn counter_names(&self) -> &[String] {
        &self.counter_names
    }

    /// The declared bound of one counter.
    pub fn counter_max(&self, c: CounterId) -> u64 {
        self.counter_max[c.index()]
    }

    /// `max_A`: the bound no counter ever exceeds.
    pub fn max_value(&self) -> u64 {
        self.max_value
    }

    pub fn initial(&self) -> &[(StateId, Vec<u64>)] {
        &self.initial
    }

    pub fn final_cond(&self, s: StateId) -> &Dnf<CounterId> {
        &self.final_cond[s.index()]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transitions_from(&self, s: StateId) -> impl Iterator<Item = (usize, &Transition)> {
        self.outgoing[s.index()]
            .iter()
            .map(move |&i| (i as usize, &self.transitions[i as usize]))
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.state_names.len() as u32).map(StateId)
    }

    pub fn counters(&self) -> impl Iterator<Item = CounterId> {
        (0..self.counter_names.len() as u32).map(CounterId)
    }

    /// The outcome of a word: all `w`-successors of the initial
    /// configurations, deduplicated.
    pub fn outcome(&self, word: &[Symbol]) -> Result<BTreeSet<Configuration>, SimulationError> {
        let mut configs: BTreeSet<Configuration> = self
            .initial
            .iter()
            .map(|(state, vals)| Configuration {
                state: *state,
                counters: vals.clone(),
            })
            .collect();
        for cfg in &configs {
            self.check_bounds(cfg)?;
        }
        for &sym in word {
            let mut next = BTreeSet::new();
            for cfg in &configs {
                for (_, t) in self.transitions_from(cfg.state) {
                    if !t.sym_guard.contains(sym) || !conj_sat(&t.ctr_guard, &cfg.counters) {
                        continue;
                    }
                    let mut counters = cfg.counters.clone();
                    for (c, term) in &t.assign {
                        counters[c.index()] = term.eval(&cfg.counters);
                    }
                    let succ = Configuration {
                        state: t.dst,
                        counters,
                    };
                    self.check_bounds(&succ)?;
                    next.insert(succ);
                }
            }
            configs = next;
        }
        Ok(configs)
    }

    /// Whole-word acceptance: some configuration in the outcome is final.
    pub fn accepts(&self, word: &[Symbol]) -> Result<bool, SimulationError> {
        Ok(self
            .outcome(word)?
            .iter()
            .any(|cfg| dnf_sat(&self.final_cond[cfg.state.index()], &cfg.counters)))
    }

    fn check_bounds(&self, cfg: &Configuration) -> Result<(), SimulationError> {
        for (i, &v) in cfg.counters.iter().enumerate() {
            if v > self.counter_max[i] {
                return Err(SimulationError::BoundViolation {
                    counter: self.counter_names[i].clone(),
                    value: v,
                    max: self.counter_max[i],
                });
            }
        }
        Ok(())
    }
}

/// A valuation of the control-state variable and the counters.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Configuration {
    pub state: StateId,
    pub counters: Vec<u64>,
}

/// Errors raised by the configuration-set oracle.
#[derive(Debug, Clone, thiserror::Error)]
pub enum SimulationError {
    /// A reached configuration took a counter above its bound; the input CA
    /// violates the boundedness requirement.
    #[error("counter {counter} reached {value}, above its bound {max}")]
    BoundViolation {
        counter: String,
        value: u64,
        max: u64,
    },
}

// ---------------------------------------------------------------------------
// Monadic shape validation
// ---------------------------------------------------------------------------

/// How a counting state may be left: exact states only at `c = max_q`,
/// range states at any count.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CountingKind {
    Exact,
    Range,
}

/// Role data for one counting state of a monadic CA.
#[derive(Clone, Debug)]
pub struct CountingState {
    pub state: StateId,
    pub counter: CounterId,
    pub bound: u64,
    pub kind: CountingKind,
    /// Index of the increment self-loop in the transition list.
    pub increment: usize,
    /// Transitions entering the state with a `c' = 0` reset.
    pub entries: Vec<usize>,
    /// Transitions leaving the state other than the increment.
    pub exits: Vec<usize>,
}

/// The partition and per-state roles of a validated monadic CA.
#[derive(Clone, Debug)]
pub struct McaShape {
    pub simple: Vec<StateId>,
    /// Counting-state info, indexed by state: `None` for simple states.
    pub counting: Vec<Option<CountingState>>,
}

impl McaShape {
    pub fn counting_info(&self, s: StateId) -> Option<&CountingState> {
        self.counting[s.index()].as_ref()
    }

    pub fn exact_states(&self) -> impl Iterator<Item = &CountingState> {
        self.counting
            .iter()
            .flatten()
            .filter(|c| c.kind == CountingKind::Exact)
    }

    pub fn range_states(&self) -> impl Iterator<Item = &CountingState> {
        self.counting
            .iter()
            .flatten()
            .filter(|c| c.kind == CountingKind::Range)
    }
}

/// Raised when a CA does not have the monadic structure; `item` names the
/// violated condition (1-5).
#[derive(Debug, Clone, thiserror::Error)]
#[error("not a monadic CA (condition {item}): {detail}")]
pub struct NotMonadic {
    pub item: u8,
    pub detail: String,
}

fn not_monadic(item: u8, detail: impl Into<String>) -> NotMonadic {
    NotMonadic {
        item,
        detail: detail.into(),
    }
}

impl CountingAutomaton {
    /// Checks the monadic structural conditions and returns the state
    /// partition with per-state transition roles.
    pub fn validate_mca(&self) -> Result<McaShape, NotMonadic> {
        let mut owner: Vec<Option<CounterId>> = vec![None; self.state_count()];
        let mut info: Vec<Option<CountingState>> = vec![None; self.state_count()];

        // Each counter must have exactly one increment transition, a
        // self-loop guarded by c < max_q, owned by its counting state.
        for c in self.counters() {
            let increments: Vec<usize> = self
                .transitions
                .iter()
                .enumerate()
                .filter(|(_, t)| {
                    t.assign
                        .iter()
                        .any(|(d, term)| *d == c && term.var == Some(c))
                })
                .map(|(i, _)| i)
                .collect();
            let name = self.counter_name(c);
            if increments.len() != 1 {
                return Err(not_monadic(
                    3,
                    format!(
                        "counter {name} has {} increment transitions, expected a single increment self-loop",
                        increments.len()
                    ),
                ));
            }
            let idx = increments[0];
            let t = &self.transitions[idx];
            if t.src != t.dst {
                return Err(not_monadic(
                    3,
                    format!("increment of counter {name} is not a self-loop"),
                ));
            }
            if t.assign.len() != 1 || t.assign[0].1 != Term::var_plus(c, 1) {
                return Err(not_monadic(
                    3,
                    format!("increment of counter {name} must assign exactly {name}' = {name}+1"),
                ));
            }
            let bound = self.counter_max(c);
            if bound == 0 {
                return Err(not_monadic(
                    3,
                    format!("counter {name} has bound 0; counting states need max_q >= 1"),
                ));
            }
            if t.ctr_guard.as_slice() != [GuardAtom::Le(Term::var_plus(c, 0), bound - 1)] {
                return Err(not_monadic(
                    3,
                    format!("increment self-loop of {name} must be guarded by {name} < {bound}"),
                ));
            }
            let q = t.src;
            if let Some(other) = owner[q.index()] {
                return Err(not_monadic(
                    2,
                    format!(
                        "state {} owns both counters {} and {name}",
                        self.state_name(q),
                        self.counter_name(other)
                    ),
                ));
            }
            owner[q.index()] = Some(c);
            info[q.index()] = Some(CountingState {
                state: q,
                counter: c,
                bound,
                kind: CountingKind::Range,
                increment: idx,
                entries: Vec::new(),
                exits: Vec::new(),
            });
        }

        let mut counter_owner: Vec<Option<StateId>> = vec![None; self.counter_count()];
        for cs in info.iter().flatten() {
            counter_owner[cs.counter.index()] = Some(cs.state);
        }
        let owner_of = move |c: CounterId| counter_owner[c.index()];

        // Classify every transition against the allowed shapes.
        for (i, t) in self.transitions.iter().enumerate() {
            let is_increment = info[t.src.index()]
                .as_ref()
                .is_some_and(|cs| cs.increment == i);
            if is_increment {
                continue;
            }
            if t.ctr_guard.len() > 1 {
                return Err(not_monadic(
                    3,
                    format!("transition {i} carries more than one counter guard atom"),
                ));
            }
            if let Some(atom) = t.ctr_guard.first() {
                // The only allowed guard outside increments is the exit test
                // c_src = max_src.
                let src_info = info[t.src.index()].as_ref().ok_or_else(|| {
                    not_monadic(
                        3,
                        format!("transition {i} guards a counter from a simple state"),
                    )
                })?;
                let c = src_info.counter;
                let saturated = GuardAtom::Eq(Term::var_plus(c, 0), Term::constant(src_info.bound));
                let saturated_ge = GuardAtom::Ge(Term::var_plus(c, 0), src_info.bound);
                if *atom != saturated && *atom != saturated_ge {
                    return Err(not_monadic(
                        3,
                        format!(
                            "transition {i} from {} carries a guard other than {} = {}",
                            self.state_name(t.src),
                            self.counter_name(c),
                            src_info.bound
                        ),
                    ));
                }
            }
            for (c, term) in &t.assign {
                let q = owner_of(*c).ok_or_else(|| {
                    not_monadic(2, format!("counter {} has no owner", self.counter_name(*c)))
                })?;
                if *term != Term::constant(0) || q != t.dst {
                    return Err(not_monadic(
                        3,
                        format!(
                            "transition {i} assigns {} outside the entry shape {}' = 0",
                            self.counter_name(*c),
                            self.counter_name(*c)
                        ),
                    ));
                }
            }
        }

        // Entries, exits, and the exact/range classification.
        for (i, t) in self.transitions.iter().enumerate() {
            if info[t.src.index()]
                .as_ref()
                .is_some_and(|cs| cs.increment == i)
            {
                continue;
            }
            if let Some(cs) = info[t.dst.index()].as_ref() {
                let resets = t.assign.iter().any(|(c, _)| *c == cs.counter);
                if !resets {
                    return Err(not_monadic(
                        3,
                        format!(
                            "transition {i} enters counting state {} without resetting {}",
                            self.state_name(t.dst),
                            self.counter_name(cs.counter)
                        ),
                    ));
                }
            }
            for (c, _) in &t.assign {
                let q = owner_of(*c).unwrap();
                info[q.index()].as_mut().unwrap().entries.push(i);
            }
            if info[t.src.index()].is_some() {
                info[t.src.index()].as_mut().unwrap().exits.push(i);
            }
        }

        for cs in info.iter_mut().flatten() {
            let mut guarded = 0usize;
            let mut unguarded = 0usize;
            for &e in &cs.exits {
                if self.transitions[e].ctr_guard.is_empty() {
                    unguarded += 1;
                } else {
                    guarded += 1;
                }
            }
            if guarded > 0 && unguarded > 0 {
                return Err(not_monadic(
                    3,
                    format!(
                        "counting state {} mixes guarded and unguarded exits",
                        self.state_names[cs.state.index()]
                    ),
                ));
            }
            // Final condition: |- for non-final, true for range, c = max_q
            // for exact.
            let f = &self.final_cond[cs.state.index()];
            let final_kind = if f.is_empty() {
                None
            } else if f.len() == 1 && f[0].is_empty() {
                Some(CountingKind::Range)
            } else if f.len() == 1
                && (f[0]
                    == [GuardAtom::Eq(
                        Term::var_plus(cs.counter, 0),
                        Term::constant(cs.bound),
                    )]
                    || f[0] == [GuardAtom::Ge(Term::var_plus(cs.counter, 0), cs.bound)])
            {
                Some(CountingKind::Exact)
            } else {
                return Err(not_monadic(
                    5,
                    format!(
                        "final condition of counting state {} must be true or {} = {}",
                        self.state_names[cs.state.index()],
                        self.counter_names[cs.counter.index()],
                        cs.bound
                    ),
                ));
            };
            let exit_kind = if guarded > 0 {
                Some(CountingKind::Exact)
            } else if unguarded > 0 {
                Some(CountingKind::Range)
            } else {
                None
            };
            cs.kind = match (exit_kind, final_kind) {
                (Some(a), Some(b)) if a != b => {
                    return Err(not_monadic(
                        5,
                        format!(
                            "counting state {} has contradictory exit and final conditions",
                            self.state_names[cs.state.index()]
                        ),
                    ));
                }
                (Some(k), _) | (None, Some(k)) => k,
                (None, None) => CountingKind::Range,
            };
        }

        // Simple states must not constrain counters in their final condition.
        for s in self.states() {
            if info[s.index()].is_some() {
                continue;
            }
            let f = &self.final_cond[s.index()];
            if !f.is_empty() && f != &dnf_true::<CounterId>() {
                return Err(not_monadic(
                    5,
                    format!(
                        "simple state {} has a counter-dependent final condition",
                        self.state_name(s)
                    ),
                ));
            }
        }

        // Initial valuations: counters start at 0.
        for (state, vals) in &self.initial {
            if vals.iter().any(|&v| v != 0) {
                return Err(not_monadic(
                    4,
                    format!(
                        "initial state {} has a non-zero counter valuation",
                        self.state_name(*state)
                    ),
                ));
            }
        }

        let simple = self
            .states()
            .filter(|s| info[s.index()].is_none())
            .collect();
        Ok(McaShape {
            simple,
            counting: info,
        })
    }
}

// ---------------------------------------------------------------------------
// Deterministic counting automata
// ---------------------------------------------------------------------------

/// Dense index of a DCA control state (a sphere).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SphereId(pub u32);

impl SphereId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One clause of a clausal sphere: a source state together with a binding of
/// its live counters to parameters.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SphereClause {
    pub state: StateId,
    pub binding: Vec<(CounterId, ParamId)>,
}

/// The structured content of a DCA control state. The runner never inspects
/// it; tests and exports do.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum SpherePayload {
    /// General spheres: a set of clauses (state, counter -> parameter).
    Clausal(Vec<SphereClause>),
    /// Monadic spheres: per-state counts of tracked counter variants.
    Multiset(Vec<(StateId, u32)>),
    /// Loaded from a file; only the name is known.
    Opaque,
}

impl SpherePayload {
    /// The empty sphere is the explicit non-accepting sink.
    pub fn is_empty(&self) -> bool {
        match self {
            SpherePayload::Clausal(clauses) => clauses.is_empty(),
            SpherePayload::Multiset(counts) => counts.is_empty(),
            SpherePayload::Opaque => false,
        }
    }
}

/// A control state of a DCA.
#[derive(Clone, Debug)]
pub struct Sphere {
    pub name: String,
    pub payload: SpherePayload,
}

/// One transition of a DCA.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DcaTransition {
    pub src: SphereId,
    pub sym_guard: CharClass,
    pub guard: Vec<GuardAtom<ParamId>>,
    /// Total after grounding: every parameter gets an explicit next value.
    pub assign: Vec<(ParamId, Term<ParamId>)>,
    pub dst: SphereId,
}

/// A deterministic counting automaton over sphere control states and
/// parameter counters.
#[derive(Clone, Debug)]
pub struct Dca {
    pub alphabet: Alphabet,
    pub spheres: Vec<Sphere>,
    pub param_names: Vec<String>,
    /// The single initial configuration.
    pub initial: (SphereId, Vec<u64>),
    pub transitions: Vec<DcaTransition>,
    pub final_cond: Vec<Dnf<ParamId>>,
    /// Carried over from the source CA; parameter values stay within it.
    pub max_value: u64,
    outgoing: Vec<Vec<u32>>,
}

/// Errors raised by the DCA runner.
#[derive(Debug, Clone, thiserror::Error)]
pub enum RunError {
    /// No transition was enabled although the current sphere is non-empty.
    /// Under the construction invariants this is unreachable; raising it
    /// turns the runner into an invariant probe.
    #[error("no transition enabled in non-empty sphere {sphere} at input position {pos}")]
    StuckUnexpected { sphere: String, pos: usize },
    /// More than one transition was enabled: a determinism violation.
    #[error("{count} transitions enabled in sphere {sphere} at input position {pos}")]
    NotDeterministic {
        sphere: String,
        pos: usize,
        count: usize,
    },
}

impl Dca {
    pub fn new(
        alphabet: Alphabet,
        spheres: Vec<Sphere>,
        param_names: Vec<String>,
        initial: (SphereId, Vec<u64>),
        transitions: Vec<DcaTransition>,
        final_cond: Vec<Dnf<ParamId>>,
        max_value: u64,
    ) -> Self {
        let mut outgoing = vec![Vec::new(); spheres.len()];
        for (i, t) in transitions.iter().enumerate() {
            outgoing[t.src.index()].push(i as u32);
        }
        Dca {
            alphabet,
            spheres,
            param_names,
            initial,
            transitions,
            final_cond,
            max_value,
            outgoing,
        }
    }

    pub fn sphere_count(&self) -> usize {
        self.spheres.len()
    }

    pub fn param_count(&self) -> usize {
        self.param_names.len()
    }

    pub fn transitions_from(&self, s: SphereId) -> impl Iterator<Item = (usize, &DcaTransition)> {
        self.outgoing[s.index()]
            .iter()
            .map(move |&i| (i as usize, &self.transitions[i as usize]))
    }

    /// Control states excluding the explicit empty sink, mirroring the
    /// partial-DFA counting convention of the naive pipeline.
    pub fn live_state_count(&self) -> usize {
        self.spheres
            .iter()
            .filter(|s| !s.payload.is_empty())
            .count()
    }

    /// Transitions not entering the empty sink.
    pub fn live_transition_count(&self) -> usize {
        self.transitions
            .iter()
            .filter(|t| !self.spheres[t.dst.index()].payload.is_empty())
            .count()
    }

    /// Steps through `word`, following the unique enabled transition per
    /// symbol. `strict` raises [`RunError::StuckUnexpected`] when no
    /// transition is enabled in a non-empty sphere; otherwise such words are
    /// rejected silently.
    pub fn run(&self, word: &[Symbol], strict: bool) -> Result<bool, RunError> {
        let (mut sphere, mut vals) = (self.initial.0, self.initial.1.clone());
        for (pos, &sym) in word.iter().enumerate() {
            let mut taken: Option<&DcaTransition> = None;
            let mut enabled = 0usize;
            for (_, t) in self.transitions_from(sphere) {
                if t.sym_guard.contains(sym) && conj_sat(&t.guard, &vals) {
                    enabled += 1;
                    taken = Some(t);
                }
            }
            match (enabled, taken) {
                (1, Some(t)) => {
                    let mut next = vec![0u64; vals.len()];
                    for (p, term) in &t.assign {
                        next[p.index()] = term.eval(&vals);
                    }
                    vals = next;
                    sphere = t.dst;
                }
                (0, _) => {
                    if strict && !self.spheres[sphere.index()].payload.is_empty() {
                        return Err(RunError::StuckUnexpected {
                            sphere: self.spheres[sphere.index()].name.clone(),
                            pos,
                        });
                    }
                    return Ok(false);
                }
                (n, _) => {
                    return Err(RunError::NotDeterministic {
                        sphere: self.spheres[sphere.index()].name.clone(),
                        pos,
                        count: n,
                    });
                }
            }
        }
        Ok(dnf_sat(&self.final_cond[sphere.index()], &vals))
    }
}

// ---------------------------------------------------------------------------
// Rendering helpers shared by DOT export, traces, and JSON
// ---------------------------------------------------------------------------

/// Renders a term with a name table, e.g. `c+1` or `0`.
pub fn render_term<Id: Copy + Into<usize>>(t: &Term<Id>, names: &[String]) -> String {
    match t.var {
        None => t.offset.to_string(),
        Some(v) if t.offset == 0 => names[v.into()].clone(),
        Some(v) => format!("{}+{}", names[v.into()], t.offset),
    }
}

/// Renders a guard atom with a name table, e.g. `c<=3` or `c=d+1`.
pub fn render_atom<Id: Copy + Into<usize>>(a: &GuardAtom<Id>, names: &[String]) -> String {
    match a {
        GuardAtom::Le(t, k) => format!("{}<={k}", render_term(t, names)),
        GuardAtom::Ge(t, k) => format!("{}>={k}", render_term(t, names)),
        GuardAtom::Eq(a, b) => format!("{}={}", render_term(a, names), render_term(b, names)),
        GuardAtom::Neq(a, b) => format!("{}!={}", render_term(a, names), render_term(b, names)),
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CounterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::alphabet::word_from_bytes;

    /// The running-example CA for `.*a.{k}`: states q, r; `I: s=q, c=0`;
    /// `F: s=r && c=k`; transitions q -any-> q, q -a,c'=0-> r,
    /// r -any,c<k,c'=c+1-> r.
    pub(crate) fn fig1_ca(k: u64) -> CountingAutomaton {
        let alpha = Alphabet::BYTES;
        let q = StateId(0);
        let r = StateId(1);
        let c = CounterId(0);
        CountingAutomaton::new(
            alpha,
            vec!["q".into(), "r".into()],
            vec![("c".into(), k)],
            vec![(q, vec![0])],
            vec![(
                r,
                vec![vec![GuardAtom::Eq(Term::var_plus(c, 0), Term::constant(k))]],
            )],
            vec![
                Transition {
                    src: q,
                    sym_guard: alpha.full_class(),
                    ctr_guard: vec![],
                    assign: vec![],
                    dst: q,
                },
                Transition {
                    src: q,
                    sym_guard: CharClass::singleton(Symbol(b'a' as u32)),
                    ctr_guard: vec![],
                    assign: vec![(c, Term::constant(0))],
                    dst: r,
                },
                Transition {
                    src: r,
                    sym_guard: alpha.full_class(),
                    ctr_guard: vec![GuardAtom::Le(Term::var_plus(c, 0), k - 1)],
                    assign: vec![(c, Term::var_plus(c, 1))],
                    dst: r,
                },
            ],
        )
        .unwrap()
    }

    fn configs(pairs: &[(u32, u64)]) -> BTreeSet<Configuration> {
        pairs
            .iter()
            .map(|&(s, c)| Configuration {
                state: StateId(s),
                counters: vec![c],
            })
            .collect()
    }

    #[test]
    fn outcome_of_aab_matches_the_outcome_formula() {
        // With k=3 the outcome of "aab" is s=q or (s=r and (c=1 or c=2));
        // c is pinned to 0 in q.
        let ca = fig1_ca(3);
        let got = ca.outcome(&word_from_bytes(b"aab")).unwrap();
        assert_eq!(got, configs(&[(0, 0), (1, 1), (1, 2)]));
    }

    #[test]
    fn outcome_of_empty_word_is_the_initial_configurations() {
        let ca = fig1_ca(2);
        assert_eq!(ca.outcome(&[]).unwrap(), configs(&[(0, 0)]));
    }

    #[test]
    fn outcome_of_ba_hand_stepped() {
        // k=1: after 'b' only q survives; after 'a' both the q self-loop and
        // the entry into r fire.
        let ca = fig1_ca(1);
        let got = ca.outcome(&word_from_bytes(b"ba")).unwrap();
        assert_eq!(got, configs(&[(0, 0), (1, 0)]));
    }

    #[test]
    fn accepts_iff_kth_letter_from_the_end_is_a() {
        let ca = fig1_ca(1);
        assert!(ca.accepts(&word_from_bytes(b"ab")).unwrap());
        assert!(!ca.accepts(&word_from_bytes(b"bb")).unwrap());
        let ca = fig1_ca(2);
        assert!(ca.accepts(&word_from_bytes(b"abb")).unwrap());
        assert!(!ca.accepts(&word_from_bytes(b"abab")).unwrap());
        // Brute-force cross-check over all words of length <= 4 on {a,b}.
        for len in 0..=4usize {
            for mask in 0..(1u32 << len) {
                let word: Vec<u8> = (0..len)
                    .map(|i| if mask & (1 << i) != 0 { b'a' } else { b'b' })
                    .collect();
                let expected = word.len() >= 3 && word[word.len() - 3] == b'a';
                assert_eq!(
                    ca.accepts(&word_from_bytes(&word)).unwrap(),
                    expected,
                    "word {:?}",
                    String::from_utf8_lossy(&word)
                );
            }
        }
    }

    #[test]
    fn fig1_is_monadic_with_exact_counting_state() {
        let ca = fig1_ca(3);
        let shape = ca.validate_mca().unwrap();
        assert_eq!(shape.simple, vec![StateId(0)]);
        let r = shape.counting_info(StateId(1)).unwrap();
        assert_eq!(r.kind, CountingKind::Exact);
        assert_eq!(r.bound, 3);
        assert_eq!(r.increment, 2);
        assert_eq!(r.entries, vec![1]);
        assert!(r.exits.is_empty());
    }

    #[test]
    fn counterless_ca_validates_with_all_states_simple() {
        let alpha = Alphabet::new(2);
        let ca = CountingAutomaton::new(
            alpha,
            vec!["s0".into(), "s1".into()],
            vec![],
            vec![(StateId(0), vec![])],
            vec![(StateId(1), dnf_true())],
            vec![Transition {
                src: StateId(0),
                sym_guard: alpha.full_class(),
                ctr_guard: vec![],
                assign: vec![],
                dst: StateId(1),
            }],
        )
        .unwrap();
        let shape = ca.validate_mca().unwrap();
        assert_eq!(shape.simple.len(), 2);
    }

    #[test]
    fn two_increment_self_loops_violate_item_3() {
        let alpha = Alphabet::new(2);
        let c = CounterId(0);
        let loop_at = |s: u32| Transition {
            src: StateId(s),
            sym_guard: alpha.full_class(),
            ctr_guard: vec![GuardAtom::Le(Term::var_plus(c, 0), 1)],
            assign: vec![(c, Term::var_plus(c, 1))],
            dst: StateId(s),
        };
        let ca = CountingAutomaton::new(
            alpha,
            vec!["p".into(), "q".into()],
            vec![("c".into(), 2)],
            vec![(StateId(0), vec![0])],
            vec![],
            vec![loop_at(0), loop_at(1)],
        )
        .unwrap();
        let err = ca.validate_mca().unwrap_err();
        assert_eq!(err.item, 3);
    }

    #[test]
    fn oracle_reports_bound_violations() {
        // A broken CA whose counter can exceed its declared bound.
        let alpha = Alphabet::new(2);
        let c = CounterId(0);
        let ca = CountingAutomaton::new(
            alpha,
            vec!["p".into()],
            vec![("c".into(), 1)],
            vec![(StateId(0), vec![0])],
            vec![],
            vec![Transition {
                src: StateId(0),
                sym_guard: alpha.full_class(),
                ctr_guard: vec![],
                assign: vec![(c, Term::var_plus(c, 1))],
                dst: StateId(0),
            }],
        )
        .unwrap();
        let err = ca.outcome(&[Symbol(0), Symbol(0)]).unwrap_err();
        assert!(matches!(err, SimulationError::BoundViolation { .. }));
    }
}
