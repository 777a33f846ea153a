//! The baseline determinisation pipeline: unfold counters into control
//! states (CA to NFA), classical subset construction (NFA to DFA), and DFA
//! minimisation by partition refinement.
//!
//! All three machines operate on the minterm partition of the source
//! automaton's symbol guards rather than on raw symbols, which keeps
//! transition tables small on byte alphabets with few distinct classes.
//! DFAs are partial: the dead sink is implicit, matching the counting
//! convention where reported state counts exclude it. Minimisation
//! completes with a sink internally and strips its block on output.

use std::collections::HashMap;
use std::time::Instant;

use crate::alphabet::{CharClass, Symbol};
use crate::automaton::{conj_sat, dnf_sat, Configuration, CountingAutomaton};

/// Budgets shared by the unfold and subset stages.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    /// Cap on produced states before giving up.
    pub state_budget: usize,
    /// Optional wall-clock deadline, checked periodically.
    pub deadline: Option<Instant>,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            state_budget: 1 << 22,
            deadline: None,
        }
    }
}

/// Failure modes of the naive pipeline.
#[derive(Debug, Clone, thiserror::Error)]
pub enum NaiveError {
    #[error("state budget of {budget} exceeded during {stage}")]
    StateBudgetExceeded { budget: usize, stage: &'static str },
    #[error("deadline exceeded during {stage}")]
    Timeout { stage: &'static str },
}

/// An NFA over the minterm alphabet. When produced by [`unfold`], each state
/// is a reachable (control state, counter valuation) pair of the source CA,
/// recorded in `configs`.
#[derive(Clone, Debug)]
pub struct Nfa {
    pub minterms: Vec<CharClass>,
    /// `transitions[state][minterm]` lists successor states, sorted.
    pub transitions: Vec<Vec<Vec<u32>>>,
    pub initial: Vec<u32>,
    pub finals: Vec<bool>,
    /// The unfolded configuration behind each state (empty for NFAs not
    /// produced by unfolding).
    pub configs: Vec<Configuration>,
}

impl Nfa {
    pub fn state_count(&self) -> usize {
        self.transitions.len()
    }
}

/// A partial DFA over the minterm alphabet.
#[derive(Clone, PartialEq, Debug)]
pub struct Dfa {
    pub minterms: Vec<CharClass>,
    /// `transitions[state][minterm]`; `None` leads to the implicit sink.
    pub transitions: Vec<Vec<Option<u32>>>,
    pub initial: u32,
    pub finals: Vec<bool>,
    /// For subset-construction output: the NFA states of each macrostate.
    pub macrostates: Option<Vec<Vec<u32>>>,
}

impl Dfa {
    pub fn state_count(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition_count(&self) -> usize {
        self.transitions
            .iter()
            .map(|row| row.iter().flatten().count())
            .sum()
    }

    /// Builds a symbol-to-minterm lookup table.
    pub fn minterm_table(&self, alphabet_size: u32) -> Vec<u32> {
        minterm_table(&self.minterms, alphabet_size)
    }

    pub fn accepts(&self, word: &[Symbol], table: &[u32]) -> bool {
        let mut state = self.initial as usize;
        for &sym in word {
            let m = table[sym.0 as usize];
            match self.transitions[state][m as usize] {
                Some(next) => state = next as usize,
                None => return false,
            }
        }
        self.finals[state]
    }
}

/// Symbol-to-minterm lookup for a minterm partition.
pub fn minterm_table(minterms: &[CharClass], alphabet_size: u32) -> Vec<u32> {
    let mut table = vec![u32::MAX; alphabet_size as usize];
    for (m, class) in minterms.iter().enumerate() {
        for sym in class.iter() {
            table[sym.0 as usize] = m as u32;
        }
    }
    table
}

fn check_deadline(budget: &Budget, stage: &'static str) -> Result<(), NaiveError> {
    if budget.deadline.is_some_and(|d| Instant::now() > d) {
        return Err(NaiveError::Timeout { stage });
    }
    Ok(())
}

/// Hard-wires counter valuations into control states, producing an NFA over
/// the reachable (state, valuation) pairs.
pub fn unfold(ca: &CountingAutomaton, budget: &Budget) -> Result<Nfa, NaiveError> {
    let guards: Vec<CharClass> = ca
        .transitions()
        .iter()
        .map(|t| t.sym_guard.clone())
        .collect();
    let minterms = ca.alphabet().minterms(&guards);
    // Minterm indices covered by each CA transition. A minterm either lies
    // inside a guard or is disjoint from it, so testing one symbol suffices.
    let covered: Vec<Vec<u32>> = ca
        .transitions()
        .iter()
        .map(|t| {
            minterms
                .iter()
                .enumerate()
                .filter(|(_, m)| t.sym_guard.contains(m.min_symbol().unwrap()))
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();

    let mut ids: HashMap<Configuration, u32> = HashMap::new();
    let mut configs: Vec<Configuration> = Vec::new();
    let mut worklist: Vec<u32> = Vec::new();
    let mut initial = Vec::new();
    for (state, vals) in ca.initial() {
        let cfg = Configuration {
            state: *state,
            counters: vals.clone(),
        };
        let id = *ids.entry(cfg.clone()).or_insert_with(|| {
            configs.push(cfg);
            worklist.push(configs.len() as u32 - 1);
            configs.len() as u32 - 1
        });
        if !initial.contains(&id) {
            initial.push(id);
        }
    }

    let mut rows_by_state: HashMap<u32, Vec<Vec<u32>>> = HashMap::new();
    let mut steps = 0usize;
    while let Some(id) = worklist.pop() {
        steps += 1;
        if steps % 4096 == 0 {
            check_deadline(budget, "unfold")?;
        }
        let cfg = configs[id as usize].clone();
        let mut rows = vec![Vec::new(); minterms.len()];
        for (ti, t) in ca.transitions_from(cfg.state) {
            if !conj_sat(&t.ctr_guard, &cfg.counters) {
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
            let succ_id = match ids.get(&succ) {
                Some(&i) => i,
                None => {
                    if configs.len() >= budget.state_budget {
                        return Err(NaiveError::StateBudgetExceeded {
                            budget: budget.state_budget,
                            stage: "unfold",
                        });
                    }
                    let i = configs.len() as u32;
                    ids.insert(succ.clone(), i);
                    configs.push(succ);
                    worklist.push(i);
                    i
                }
            };
            for &m in &covered[ti] {
                rows[m as usize].push(succ_id);
            }
        }
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
        }
        rows_by_state.insert(id, rows);
    }
    let transitions: Vec<Vec<Vec<u32>>> = (0..configs.len() as u32)
        .map(|id| {
            rows_by_state
                .remove(&id)
                .unwrap_or_else(|| vec![Vec::new(); minterms.len()])
        })
        .collect();

    let finals = configs
        .iter()
        .map(|cfg| dnf_sat(ca.final_cond(cfg.state), &cfg.counters))
        .collect();
    Ok(Nfa {
        minterms,
        transitions,
        initial,
        finals,
        configs,
    })
}

/// Classical reachable-subset construction. The output is partial: an empty
/// successor set yields no transition.
pub fn subset_determinise(nfa: &Nfa, budget: &Budget) -> Result<Dfa, NaiveError> {
    let n_minterms = nfa.minterms.len();
    let mut start: Vec<u32> = nfa.initial.clone();
    start.sort_unstable();
    start.dedup();

    let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut macrostates: Vec<Vec<u32>> = vec![start.clone()];
    ids.insert(start, 0);
    let mut worklist: Vec<u32> = vec![0];
    let mut rows_by_state: HashMap<u32, Vec<Option<u32>>> = HashMap::new();

    let mut steps = 0usize;
    while let Some(id) = worklist.pop() {
        steps += 1;
        if steps % 1024 == 0 {
            check_deadline(budget, "subset construction")?;
        }
        let members = macrostates[id as usize].clone();
        let mut row = Vec::with_capacity(n_minterms);
        for m in 0..n_minterms {
            let mut successor: Vec<u32> = Vec::new();
            for &s in &members {
                successor.extend_from_slice(&nfa.transitions[s as usize][m]);
            }
            successor.sort_unstable();
            successor.dedup();
            if successor.is_empty() {
                row.push(None);
                continue;
            }
            let succ_id = match ids.get(&successor) {
                Some(&i) => i,
                None => {
                    if macrostates.len() >= budget.state_budget {
                        return Err(NaiveError::StateBudgetExceeded {
                            budget: budget.state_budget,
                            stage: "subset construction",
                        });
                    }
                    let i = macrostates.len() as u32;
                    ids.insert(successor.clone(), i);
                    macrostates.push(successor);
                    worklist.push(i);
                    i
                }
            };
            row.push(Some(succ_id));
        }
        rows_by_state.insert(id, row);
    }
    let transitions: Vec<Vec<Option<u32>>> = (0..macrostates.len() as u32)
        .map(|id| {
            rows_by_state
                .remove(&id)
                .unwrap_or_else(|| vec![None; n_minterms])
        })
        .collect();

    let finals = macrostates
        .iter()
        .map(|ms| ms.iter().any(|&s| nfa.finals[s as usize]))
        .collect();
    Ok(Dfa {
        minterms: nfa.minterms.clone(),
        transitions,
        initial: 0,
        finals,
        macrostates: Some(macrostates),
    })
}

/// Hopcroft partition refinement, producing the unique minimal DFA for the
/// language (up to isomorphism; the output numbering is canonical, so
/// language-equal inputs give structurally identical outputs). The implicit
/// sink is restored internally and stripped again on output.
pub fn minimise(dfa: &Dfa) -> Dfa {
    let n = dfa.state_count();
    let n_minterms = dfa.minterms.len();
    if n == 0 || n_minterms == 0 {
        return dfa.clone();
    }

    // Complete with a sink when the DFA is partial.
    let needs_sink = dfa
        .transitions
        .iter()
        .any(|row| row.iter().any(|t| t.is_none()));
    let total = n + usize::from(needs_sink);
    let sink = n as u32;
    let delta = |s: usize, m: usize| -> u32 {
        if s == n {
            sink
        } else {
            dfa.transitions[s][m].unwrap_or(sink)
        }
    };

    // Per-minterm predecessor lists in CSR layout.
    let mut pre_offsets = vec![vec![0u32; total + 1]; n_minterms];
    for s in 0..total {
        for (m, offsets) in pre_offsets.iter_mut().enumerate() {
            offsets[delta(s, m) as usize + 1] += 1;
        }
    }
    for offsets in &mut pre_offsets {
        for i in 0..total {
            offsets[i + 1] += offsets[i];
        }
    }
    let mut pre_data = vec![vec![0u32; total]; n_minterms];
    let mut cursor: Vec<Vec<u32>> = pre_offsets.clone();
    for s in 0..total {
        for m in 0..n_minterms {
            let t = delta(s, m) as usize;
            pre_data[m][cursor[m][t] as usize] = s as u32;
            cursor[m][t] += 1;
        }
    }

    // Initial partition: final vs non-final states.
    let mut blocks: Vec<Vec<u32>> = vec![Vec::new(), Vec::new()];
    for s in 0..total {
        let is_final = s < n && dfa.finals[s];
        blocks[usize::from(is_final)].push(s as u32);
    }
    blocks.retain(|b| !b.is_empty());
    let mut block_of: Vec<u32> = vec![0; total];
    for (b, members) in blocks.iter().enumerate() {
        for &s in members {
            block_of[s as usize] = b as u32;
        }
    }

    let mut worklist: Vec<(u32, u32)> = Vec::new();
    for b in 0..blocks.len() as u32 {
        for m in 0..n_minterms as u32 {
            worklist.push((b, m));
        }
    }

    let mut touched: Vec<u32> = Vec::new();
    let mut hit: Vec<bool> = vec![false; total];
    while let Some((a, m)) = worklist.pop() {
        // X = predecessors of block `a` under minterm `m`.
        touched.clear();
        for &t in &blocks[a as usize] {
            let (lo, hi) = (
                pre_offsets[m as usize][t as usize] as usize,
                pre_offsets[m as usize][t as usize + 1] as usize,
            );
            for &s in &pre_data[m as usize][lo..hi] {
                if !hit[s as usize] {
                    hit[s as usize] = true;
                    touched.push(s);
                }
            }
        }
        let mut split_candidates: Vec<u32> = touched.iter().map(|&s| block_of[s as usize]).collect();
        split_candidates.sort_unstable();
        split_candidates.dedup();
        for b in split_candidates {
            let inside: Vec<u32> = blocks[b as usize]
                .iter()
                .copied()
                .filter(|&s| hit[s as usize])
                .collect();
            if inside.len() == blocks[b as usize].len() {
                continue;
            }
            let outside: Vec<u32> = blocks[b as usize]
                .iter()
                .copied()
                .filter(|&s| !hit[s as usize])
                .collect();
            let new_id = blocks.len() as u32;
            let (stay, moved) = if inside.len() <= outside.len() {
                (outside, inside)
            } else {
                (inside, outside)
            };
            for &s in &moved {
                block_of[s as usize] = new_id;
            }
            blocks[b as usize] = stay;
            blocks.push(moved);
            for m2 in 0..n_minterms as u32 {
                worklist.push((new_id, m2));
            }
        }
        for &s in &touched {
            hit[s as usize] = false;
        }
    }

    // Canonical renumbering: BFS over blocks from the initial block in
    // minterm order, skipping the sink block.
    let sink_block = needs_sink.then(|| block_of[sink as usize]);
    let init_block = block_of[dfa.initial as usize];
    let mut new_id: Vec<Option<u32>> = vec![None; blocks.len()];
    let mut order: Vec<u32> = Vec::new();
    if Some(init_block) != sink_block {
        new_id[init_block as usize] = Some(0);
        order.push(init_block);
    }
    let mut head = 0;
    while head < order.len() {
        let b = order[head];
        head += 1;
        let rep = blocks[b as usize][0] as usize;
        for m in 0..n_minterms {
            let tb = block_of[delta(rep, m) as usize];
            if Some(tb) == sink_block || new_id[tb as usize].is_some() {
                continue;
            }
            new_id[tb as usize] = Some(order.len() as u32);
            order.push(tb);
        }
    }

    if order.is_empty() {
        // The language is empty; keep one dead initial state so the
        // automaton stays runnable.
        return Dfa {
            minterms: dfa.minterms.clone(),
            transitions: vec![vec![None; n_minterms]],
            initial: 0,
            finals: vec![false],
            macrostates: None,
        };
    }

    let mut transitions = vec![vec![None; n_minterms]; order.len()];
    let mut finals = vec![false; order.len()];
    for (i, &b) in order.iter().enumerate() {
        let rep = blocks[b as usize][0] as usize;
        finals[i] = rep < n && dfa.finals[rep];
        for m in 0..n_minterms {
            let tb = block_of[delta(rep, m) as usize];
            if Some(tb) != sink_block {
                transitions[i][m] = new_id[tb as usize];
            }
        }
    }
    Dfa {
        minterms: dfa.minterms.clone(),
        transitions,
        initial: 0,
        finals,
        macrostates: None,
    }
}
