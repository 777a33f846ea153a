//! Compilation of monadic regexes to monadic counting automata.
//!
//! The construction is a Glushkov-style position automaton extended with
//! counting states. Every class occurrence and every counting operator
//! contributes one position; there are no epsilon transitions. A counting
//! position becomes a counting state whose counter tracks how many loop
//! symbols have been consumed: entry transitions consume the symbol of a
//! *predecessor* position and reset the counter to zero, the increment
//! self-loop consumes the counting class, and exits consume a successor's
//! symbol (guarded by `c = max` for exact states).
//!
//! Entries must consume a predecessor symbol, so a counting position whose
//! predecessor is itself a counting position (e.g. the two blocks of
//! `[D-G]{43,53}`, or `(a{2})*`) has no symbol to enter on. Such positions
//! are rewritten before the construction: the block consumes its first
//! symbol through an explicit marker position, `s{0,n}` becoming
//! `(|s s{0,n-1})` and `s{n}` becoming `s s{n-1}`. The rewrite preserves the
//! language and restores the invariant that every predecessor of a counting
//! position is simple.

use std::collections::BTreeSet;

use super::RegexAst;
use crate::alphabet::{Alphabet, CharClass};
use crate::automaton::{
    dnf_true, CounterId, CountingAutomaton, Dnf, GuardAtom, StateId, Term, Transition,
};

/// Compilation failures. The construction itself is total; this only
/// reports broken internal invariants.
#[derive(Debug, Clone, thiserror::Error)]
pub enum CompileError {
    #[error("internal compiler invariant violated: {0}")]
    Internal(String),
}

/// Compiles a regex AST to a monadic counting automaton over `alphabet`.
/// The result always satisfies the monadic structural conditions.
pub fn compile(ast: &RegexAst, alphabet: Alphabet) -> Result<CountingAutomaton, CompileError> {
    let ast = normalize(ast.clone());
    let ast = fix_adjacency(ast);

    let mut g = Glushkov::default();
    let root = g.analyze(&ast);

    let builder = Builder {
        alphabet,
        positions: &g.positions,
        follow: &g.follow,
        root,
    };
    let ca = builder.build()?;
    ca.validate_mca()
        .map_err(|e| CompileError::Internal(format!("compiled CA is not monadic: {e}")))?;
    Ok(ca)
}

// ---------------------------------------------------------------------------
// AST normalisation
// ---------------------------------------------------------------------------

/// Removes vacuous nodes: zero-length counting reduces to epsilon, empty
/// classes to the empty language, and `Empty`/`Epsilon` are folded into
/// their parents.
fn normalize(ast: RegexAst) -> RegexAst {
    use RegexAst::*;
    match ast {
        Class(c) if c.is_empty() => Empty,
        CountExact(_, 0) | CountUpTo(_, 0) => Epsilon,
        CountUpTo(c, _) if c.is_empty() => Epsilon,
        CountExact(c, _) if c.is_empty() => Empty,
        Concat(l, r) => match (normalize(*l), normalize(*r)) {
            (Empty, _) | (_, Empty) => Empty,
            (Epsilon, r) => r,
            (l, Epsilon) => l,
            (l, r) => RegexAst::concat(l, r),
        },
        Union(l, r) => match (normalize(*l), normalize(*r)) {
            (Empty, r) => r,
            (l, Empty) => l,
            (l, r) => RegexAst::union(l, r),
        },
        Star(e) => match normalize(*e) {
            Empty | Epsilon => Epsilon,
            Star(i) => Star(i),
            // Iterated bounded repetition of a class is just its star.
            CountUpTo(c, _) | CountExact(c, 1) => RegexAst::star(Class(c)),
            i => RegexAst::star(i),
        },
        other => other,
    }
}

/// Summary flags used by the adjacency rewrite.
struct Info {
    nullable: bool,
    first_counting: bool,
    last_counting: bool,
}

fn info(ast: &RegexAst) -> Info {
    use RegexAst::*;
    match ast {
        Empty | Epsilon => Info {
            nullable: matches!(ast, Epsilon),
            first_counting: false,
            last_counting: false,
        },
        Class(_) => Info {
            nullable: false,
            first_counting: false,
            last_counting: false,
        },
        CountExact(..) => Info {
            nullable: false,
            first_counting: true,
            last_counting: true,
        },
        CountUpTo(..) => Info {
            nullable: true,
            first_counting: true,
            last_counting: true,
        },
        Concat(l, r) => {
            let (il, ir) = (info(l), info(r));
            Info {
                nullable: il.nullable && ir.nullable,
                first_counting: il.first_counting || (il.nullable && ir.first_counting),
                last_counting: ir.last_counting || (ir.nullable && il.last_counting),
            }
        }
        Union(l, r) => {
            let (il, ir) = (info(l), info(r));
            Info {
                nullable: il.nullable || ir.nullable,
                first_counting: il.first_counting || ir.first_counting,
                last_counting: il.last_counting || ir.last_counting,
            }
        }
        Star(e) => {
            let i = info(e);
            Info {
                nullable: true,
                ..i
            }
        }
    }
}

/// Rewrites every counting node in first position so that it starts with an
/// explicit marker symbol.
fn rewrite_first(ast: RegexAst) -> RegexAst {
    use RegexAst::*;
    match ast {
        CountExact(c, 1) => Class(c),
        CountExact(c, n) => RegexAst::concat(Class(c.clone()), CountExact(c, n - 1)),
        CountUpTo(c, 1) => RegexAst::union(Epsilon, Class(c)),
        CountUpTo(c, n) => RegexAst::union(
            Epsilon,
            RegexAst::concat(Class(c.clone()), CountUpTo(c, n - 1)),
        ),
        Concat(l, r) => {
            let l_nullable = info(&l).nullable;
            let l = rewrite_first(*l);
            if l_nullable {
                RegexAst::concat(l, rewrite_first(*r))
            } else {
                RegexAst::concat(l, *r)
            }
        }
        Union(l, r) => RegexAst::union(rewrite_first(*l), rewrite_first(*r)),
        Star(e) => RegexAst::star(rewrite_first(*e)),
        other => other,
    }
}

/// Ensures no counting position has a counting predecessor by applying
/// [`rewrite_first`] at every concatenation or star that would create such
/// an adjacency.
fn fix_adjacency(ast: RegexAst) -> RegexAst {
    use RegexAst::*;
    match ast {
        Concat(l, r) => {
            let l = fix_adjacency(*l);
            let mut r = fix_adjacency(*r);
            if info(&l).last_counting && info(&r).first_counting {
                r = rewrite_first(r);
            }
            RegexAst::concat(l, r)
        }
        Union(l, r) => RegexAst::union(fix_adjacency(*l), fix_adjacency(*r)),
        Star(e) => {
            let mut e = fix_adjacency(*e);
            let i = info(&e);
            if i.last_counting && i.first_counting {
                e = rewrite_first(e);
            }
            RegexAst::star(e)
        }
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Position analysis
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum PosKind {
    Simple,
    Exact(u64),
    Range(u64),
}

struct Pos {
    class: CharClass,
    kind: PosKind,
}

#[derive(Default)]
struct Glushkov {
    positions: Vec<Pos>,
    follow: Vec<BTreeSet<usize>>,
}

/// First/last position sets and nullability of one subtree.
struct Sets {
    nullable: bool,
    first: BTreeSet<usize>,
    last: BTreeSet<usize>,
}

impl Glushkov {
    fn leaf(&mut self, class: CharClass, kind: PosKind) -> Sets {
        let id = self.positions.len();
        self.positions.push(Pos { class, kind });
        self.follow.push(BTreeSet::new());
        Sets {
            nullable: false,
            first: BTreeSet::from([id]),
            last: BTreeSet::from([id]),
        }
    }

    fn analyze(&mut self, ast: &RegexAst) -> Sets {
        use RegexAst::*;
        match ast {
            Empty => Sets {
                nullable: false,
                first: BTreeSet::new(),
                last: BTreeSet::new(),
            },
            Epsilon => Sets {
                nullable: true,
                first: BTreeSet::new(),
                last: BTreeSet::new(),
            },
            Class(c) => self.leaf(c.clone(), PosKind::Simple),
            CountExact(c, n) => {
                let mut s = self.leaf(c.clone(), PosKind::Exact(*n));
                s.nullable = false;
                s
            }
            CountUpTo(c, n) => {
                let mut s = self.leaf(c.clone(), PosKind::Range(*n));
                s.nullable = true;
                s
            }
            Concat(l, r) => {
                let sl = self.analyze(l);
                let sr = self.analyze(r);
                for &p in &sl.last {
                    self.follow[p].extend(sr.first.iter().copied());
                }
                Sets {
                    nullable: sl.nullable && sr.nullable,
                    first: if sl.nullable {
                        sl.first.union(&sr.first).copied().collect()
                    } else {
                        sl.first
                    },
                    last: if sr.nullable {
                        sl.last.union(&sr.last).copied().collect()
                    } else {
                        sr.last
                    },
                }
            }
            Union(l, r) => {
                let sl = self.analyze(l);
                let sr = self.analyze(r);
                Sets {
                    nullable: sl.nullable || sr.nullable,
                    first: sl.first.union(&sr.first).copied().collect(),
                    last: sl.last.union(&sr.last).copied().collect(),
                }
            }
            Star(e) => {
                let s = self.analyze(e);
                for &p in &s.last {
                    self.follow[p].extend(s.first.iter().copied());
                }
                Sets {
                    nullable: true,
                    ..s
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Automaton construction
// ---------------------------------------------------------------------------

struct Builder<'a> {
    alphabet: Alphabet,
    positions: &'a [Pos],
    follow: &'a [BTreeSet<usize>],
    root: Sets,
}

impl Builder<'_> {
    /// State id of a position in the pre-trim automaton; state 0 is the
    /// fresh initial state.
    fn state_of(&self, pos: usize) -> StateId {
        StateId(pos as u32 + 1)
    }

    fn build(&self) -> Result<CountingAutomaton, CompileError> {
        let n = self.positions.len();
        // One counter per counting position.
        let mut counter_of: Vec<Option<CounterId>> = vec![None; n];
        let mut counters: Vec<(String, u64)> = Vec::new();
        for (i, p) in self.positions.iter().enumerate() {
            if let PosKind::Exact(b) | PosKind::Range(b) = p.kind {
                counter_of[i] = Some(CounterId(counters.len() as u32));
                counters.push((format!("c{}", counters.len()), b));
            }
        }
        let n_counters = counters.len();

        // Predecessor positions of each position.
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (p, f) in self.follow.iter().enumerate() {
            for &q in f {
                preds[q].push(p);
            }
        }

        // Arrival edges at a simple position or the initial state: pairs of
        // (source state, exit guard of the source).
        let exit_guard = |pos: usize| -> Vec<GuardAtom<CounterId>> {
            match self.positions[pos].kind {
                PosKind::Exact(b) => vec![GuardAtom::Eq(
                    Term::var_plus(counter_of[pos].unwrap(), 0),
                    Term::constant(b),
                )],
                _ => Vec::new(),
            }
        };
        let sources_of = |pos: usize| -> Vec<(StateId, Vec<GuardAtom<CounterId>>)> {
            let mut out = Vec::new();
            if self.root.first.contains(&pos) {
                out.push((StateId(0), Vec::new()));
            }
            for &p in &preds[pos] {
                out.push((self.state_of(p), exit_guard(p)));
            }
            out
        };

        let mut transitions: BTreeSet<Transition> = BTreeSet::new();
        for (i, pos) in self.positions.iter().enumerate() {
            match pos.kind {
                PosKind::Simple => {
                    for (src, guard) in sources_of(i) {
                        transitions.insert(Transition {
                            src,
                            sym_guard: pos.class.clone(),
                            ctr_guard: guard,
                            assign: Vec::new(),
                            dst: self.state_of(i),
                        });
                    }
                }
                PosKind::Exact(bound) | PosKind::Range(bound) => {
                    let c = counter_of[i].unwrap();
                    transitions.insert(Transition {
                        src: self.state_of(i),
                        sym_guard: pos.class.clone(),
                        ctr_guard: vec![GuardAtom::Le(Term::var_plus(c, 0), bound - 1)],
                        assign: vec![(c, Term::var_plus(c, 1))],
                        dst: self.state_of(i),
                    });
                    // Entries consume a predecessor's symbol; the adjacency
                    // rewrite guarantees those predecessors are simple.
                    for &p in &preds[i] {
                        if self.positions[p].kind != PosKind::Simple {
                            return Err(CompileError::Internal(format!(
                                "counting position {i} has counting predecessor {p}"
                            )));
                        }
                        for (src, guard) in sources_of(p) {
                            transitions.insert(Transition {
                                src,
                                sym_guard: self.positions[p].class.clone(),
                                ctr_guard: guard,
                                assign: vec![(c, Term::constant(0))],
                                dst: self.state_of(i),
                            });
                        }
                    }
                }
            }
        }

        let mut initial: Vec<(StateId, Vec<u64>)> = vec![(StateId(0), vec![0; n_counters])];
        for &f in &self.root.first {
            if self.positions[f].kind != PosKind::Simple {
                initial.push((self.state_of(f), vec![0; n_counters]));
            }
        }

        let mut final_cond: Vec<(StateId, Dnf<CounterId>)> = Vec::new();
        if self.root.nullable {
            final_cond.push((StateId(0), dnf_true()));
        }
        for &l in &self.root.last {
            let cond = match self.positions[l].kind {
                PosKind::Simple | PosKind::Range(_) => dnf_true(),
                PosKind::Exact(b) => vec![vec![GuardAtom::Eq(
                    Term::var_plus(counter_of[l].unwrap(), 0),
                    Term::constant(b),
                )]],
            };
            final_cond.push((self.state_of(l), cond));
        }

        let raw = RawCa {
            n_states: n + 1,
            counters,
            counting_state: {
                let mut v = vec![None; n + 1];
                for (i, c) in counter_of.iter().enumerate() {
                    v[i + 1] = *c;
                }
                v
            },
            initial,
            final_cond,
            transitions: transitions.into_iter().collect(),
        };
        let raw = trim(raw);
        let raw = merge_equivalent_simple_states(raw);
        raw.into_automaton(self.alphabet)
    }
}

/// Intermediate automaton representation used by trimming and merging.
struct RawCa {
    n_states: usize,
    counters: Vec<(String, u64)>,
    /// Counter owned by each state, if any.
    counting_state: Vec<Option<CounterId>>,
    initial: Vec<(StateId, Vec<u64>)>,
    final_cond: Vec<(StateId, Dnf<CounterId>)>,
    transitions: Vec<Transition>,
}

/// Removes states that are unreachable or cannot reach a final state
/// (structurally, ignoring guards; this under-prunes but never changes the
/// language). A dead single-state automaton is produced when nothing
/// remains.
fn trim(raw: RawCa) -> RawCa {
    let n = raw.n_states;
    let mut fwd = vec![Vec::new(); n];
    let mut bwd = vec![Vec::new(); n];
    for t in &raw.transitions {
        fwd[t.src.index()].push(t.dst.index());
        bwd[t.dst.index()].push(t.src.index());
    }
    let bfs = |seeds: Vec<usize>, edges: &Vec<Vec<usize>>| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut queue = seeds;
        for &s in &queue {
            seen[s] = true;
        }
        while let Some(s) = queue.pop() {
            for &t in &edges[s] {
                if !seen[t] {
                    seen[t] = true;
                    queue.push(t);
                }
            }
        }
        seen
    };
    let reachable = bfs(
        raw.initial.iter().map(|(s, _)| s.index()).collect(),
        &fwd,
    );
    let coaccessible = bfs(
        raw.final_cond
            .iter()
            .filter(|(_, f)| !f.is_empty())
            .map(|(s, _)| s.index())
            .collect(),
        &bwd,
    );
    let keep: Vec<bool> = (0..n).map(|i| reachable[i] && coaccessible[i]).collect();

    if !raw
        .initial
        .iter()
        .any(|(s, _)| keep[s.index()])
    {
        // The language is empty; a single dead initial state represents it.
        return RawCa {
            n_states: 1,
            counters: Vec::new(),
            counting_state: vec![None],
            initial: vec![(StateId(0), Vec::new())],
            final_cond: Vec::new(),
            transitions: Vec::new(),
        };
    }
    renumber(raw, &keep)
}

/// Rebuilds a raw automaton keeping only the flagged states, renumbering
/// states and counters densely.
fn renumber(raw: RawCa, keep: &[bool]) -> RawCa {
    let mut state_map: Vec<Option<StateId>> = vec![None; raw.n_states];
    let mut next = 0u32;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            state_map[i] = Some(StateId(next));
            next += 1;
        }
    }
    let mut counter_map: Vec<Option<CounterId>> = vec![None; raw.counters.len()];
    let mut counters = Vec::new();
    let mut counting_state = vec![None; next as usize];
    for (i, &k) in keep.iter().enumerate() {
        if !k {
            continue;
        }
        if let Some(c) = raw.counting_state[i] {
            let new = CounterId(counters.len() as u32);
            counter_map[c.index()] = Some(new);
            counters.push(raw.counters[c.index()].clone());
            counting_state[state_map[i].unwrap().index()] = Some(new);
        }
    }
    let remap_term = |t: &Term<CounterId>| Term {
        var: t.var.map(|c| counter_map[c.index()].unwrap()),
        offset: t.offset,
    };
    let remap_atom = |a: &GuardAtom<CounterId>| match a {
        GuardAtom::Le(t, k) => GuardAtom::Le(remap_term(t), *k),
        GuardAtom::Ge(t, k) => GuardAtom::Ge(remap_term(t), *k),
        GuardAtom::Eq(a, b) => GuardAtom::Eq(remap_term(a), remap_term(b)),
        GuardAtom::Neq(a, b) => GuardAtom::Neq(remap_term(a), remap_term(b)),
    };
    let transitions = raw
        .transitions
        .iter()
        .filter(|t| keep[t.src.index()] && keep[t.dst.index()])
        .map(|t| Transition {
            src: state_map[t.src.index()].unwrap(),
            sym_guard: t.sym_guard.clone(),
            ctr_guard: t.ctr_guard.iter().map(remap_atom).collect(),
            assign: t
                .assign
                .iter()
                .map(|(c, term)| (counter_map[c.index()].unwrap(), remap_term(term)))
                .collect(),
            dst: state_map[t.dst.index()].unwrap(),
        })
        .collect();
    let initial = raw
        .initial
        .iter()
        .filter(|(s, _)| keep[s.index()])
        .map(|(s, vals)| {
            let mut new_vals = vec![0u64; counters.len()];
            for (c, &v) in vals.iter().enumerate() {
                if let Some(nc) = counter_map.get(c).copied().flatten() {
                    new_vals[nc.index()] = v;
                }
            }
            (state_map[s.index()].unwrap(), new_vals)
        })
        .collect();
    let final_cond = raw
        .final_cond
        .iter()
        .filter(|(s, _)| keep[s.index()])
        .map(|(s, dnf)| {
            (
                state_map[s.index()].unwrap(),
                dnf.iter()
                    .map(|conj| conj.iter().map(remap_atom).collect())
                    .collect(),
            )
        })
        .collect();
    RawCa {
        n_states: next as usize,
        counters,
        counting_state,
        initial,
        final_cond,
        transitions,
    }
}

/// Merges simple states with identical outgoing transitions and final
/// conditions (they are forward-bisimilar). Iterates to a fixpoint, since
/// redirecting transitions can create new identical pairs. This is what
/// collapses the fresh initial state into the `.*` self-loop state of the
/// running example, reproducing the textbook two-state automaton.
fn merge_equivalent_simple_states(mut raw: RawCa) -> RawCa {
    loop {
        let n = raw.n_states;
        let mut finals: Vec<Dnf<CounterId>> = vec![Dnf::new(); n];
        for (s, f) in &raw.final_cond {
            finals[s.index()] = f.clone();
        }
        type Edge<'a> = (
            &'a CharClass,
            &'a [GuardAtom<CounterId>],
            &'a [(CounterId, Term<CounterId>)],
            StateId,
        );
        let mut outgoing: Vec<Vec<Edge>> = vec![Vec::new(); n];
        for t in &raw.transitions {
            outgoing[t.src.index()].push((&t.sym_guard, &t.ctr_guard, &t.assign, t.dst));
        }
        for list in &mut outgoing {
            list.sort();
        }
        let mut repr: Vec<StateId> = (0..n as u32).map(StateId).collect();
        let mut by_key: std::collections::BTreeMap<String, StateId> =
            std::collections::BTreeMap::new();
        let mut changed = false;
        for s in 0..n {
            if raw.counting_state[s].is_some() {
                continue;
            }
            let key = format!("{:?}|{:?}", finals[s], outgoing[s]);
            match by_key.get(&key) {
                Some(&first) => {
                    repr[s] = first;
                    changed = true;
                }
                None => {
                    by_key.insert(key, StateId(s as u32));
                }
            }
        }
        if !changed {
            return raw;
        }
        // Redirect into representatives, then drop the merged states.
        let mut transitions: BTreeSet<Transition> = BTreeSet::new();
        for t in &raw.transitions {
            if repr[t.src.index()] != t.src {
                continue;
            }
            transitions.insert(Transition {
                src: t.src,
                sym_guard: t.sym_guard.clone(),
                ctr_guard: t.ctr_guard.clone(),
                assign: t.assign.clone(),
                dst: repr[t.dst.index()],
            });
        }
        raw.transitions = transitions.into_iter().collect();
        let mut initial: Vec<(StateId, Vec<u64>)> = raw
            .initial
            .iter()
            .map(|(s, v)| (repr[s.index()], v.clone()))
            .collect();
        initial.sort();
        initial.dedup();
        raw.initial = initial;
        raw.final_cond.retain(|(s, _)| repr[s.index()] == *s);
        let keep: Vec<bool> = (0..n).map(|i| repr[i] == StateId(i as u32)).collect();
        raw = renumber(raw, &keep);
    }
}

impl RawCa {
    fn into_automaton(self, alphabet: Alphabet) -> Result<CountingAutomaton, CompileError> {
        // Names: q0, q1, ... for simple states, r0, r1, ... for counting
        // states, in state order.
        let mut names = Vec::with_capacity(self.n_states);
        let (mut n_simple, mut n_counting) = (0usize, 0usize);
        for s in 0..self.n_states {
            if self.counting_state[s].is_some() {
                names.push(format!("r{n_counting}"));
                n_counting += 1;
            } else {
                names.push(format!("q{n_simple}"));
                n_simple += 1;
            }
        }
        CountingAutomaton::new(
            alphabet,
            names,
            self.counters,
            self.initial,
            self.final_cond,
            self.transitions,
        )
        .map_err(|e| CompileError::Internal(e.to_string()))
    }
}
