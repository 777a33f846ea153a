//! Satisfiability of parameter constraints over bounded naturals.
//!
//! Constraints are conjunctions of atoms `t1 = t2`, `t1 != t2`, `t <= k`,
//! `t >= k` where terms are `p + k` or `k`, interpreted over parameter
//! values in `[0, domain_max]`. The solver works in three stages: a
//! union-find with additive offsets canonicalises the equalities (detecting
//! offset conflicts such as `p = p+1`), interval propagation narrows each
//! equivalence class, and the remaining disequality graph is decided
//! exactly, so the result agrees with brute-force enumeration.

use crate::automaton::{GuardAtom, ParamId, Term};

/// A conjunction of parameter guard atoms.
pub type ParamConstraint = Vec<GuardAtom<ParamId>>;

/// Union-find over parameters plus one virtual zero node, with additive
/// offsets: `value(x) = value(root(x)) + delta(x)`.
struct OffsetUnionFind {
    parent: Vec<u32>,
    delta: Vec<i64>,
}

impl OffsetUnionFind {
    fn new(n: usize) -> Self {
        OffsetUnionFind {
            parent: (0..n as u32).collect(),
            delta: vec![0; n],
        }
    }

    fn find(&mut self, x: u32) -> (u32, i64) {
        if self.parent[x as usize] == x {
            return (x, 0);
        }
        let (root, parent_delta) = self.find(self.parent[x as usize]);
        self.parent[x as usize] = root;
        self.delta[x as usize] += parent_delta;
        (root, self.delta[x as usize])
    }

    /// Imposes `value(x) - value(y) = diff`; false on an offset conflict.
    fn union(&mut self, x: u32, y: u32, diff: i64) -> bool {
        let (rx, dx) = self.find(x);
        let (ry, dy) = self.find(y);
        if rx == ry {
            return dx - dy == diff;
        }
        // value(rx) = value(ry) + (dy + diff - dx)
        self.parent[rx as usize] = ry;
        self.delta[rx as usize] = dy + diff - dx;
        true
    }
}

/// Decides whether an assignment of the mentioned parameters to
/// `[0, domain_max]` satisfies all atoms.
pub fn satisfiable(constraint: &[GuardAtom<ParamId>], domain_max: u64) -> bool {
    let n_params = constraint
        .iter()
        .flat_map(|a| match a {
            GuardAtom::Le(t, _) | GuardAtom::Ge(t, _) => [t.var, None],
            GuardAtom::Eq(a, b) | GuardAtom::Neq(a, b) => [a.var, b.var],
        })
        .flatten()
        .map(|p| p.index() + 1)
        .max()
        .unwrap_or(0);
    // Node n_params is the virtual zero.
    let zero = n_params as u32;
    let mut uf = OffsetUnionFind::new(n_params + 1);
    let node = |t: &Term<ParamId>| -> (u32, i64) {
        match t.var {
            Some(p) => (p.0, t.offset as i64),
            None => (zero, t.offset as i64),
        }
    };

    let mut bounds: Vec<(u32, i64, i64)> = Vec::new(); // (node, lo, hi) on the node's value
    let mut neqs: Vec<((u32, i64), (u32, i64))> = Vec::new();
    for atom in constraint {
        match atom {
            GuardAtom::Eq(a, b) => {
                let ((na, ka), (nb, kb)) = (node(a), node(b));
                // value(na) + ka = value(nb) + kb
                if !uf.union(na, nb, kb - ka) {
                    return false;
                }
            }
            GuardAtom::Le(t, k) => {
                let (n, off) = node(t);
                bounds.push((n, i64::MIN, *k as i64 - off));
            }
            GuardAtom::Ge(t, k) => {
                let (n, off) = node(t);
                bounds.push((n, *k as i64 - off, i64::MAX));
            }
            GuardAtom::Neq(a, b) => {
                neqs.push((node(a), node(b)));
            }
        }
    }

    // Interval propagation: intersect the domains of all members of each
    // class, expressed on the class root.
    let dm = domain_max as i64;
    let mut lo = vec![i64::MIN; n_params + 1];
    let mut hi = vec![i64::MAX; n_params + 1];
    let mut constrain = |uf: &mut OffsetUnionFind, x: u32, l: i64, h: i64| -> bool {
        let (root, d) = uf.find(x);
        // value(x) = value(root) + d, so value(root) in [l - d, h - d].
        lo[root as usize] = lo[root as usize].max(l.saturating_sub(d));
        hi[root as usize] = hi[root as usize].min(h.saturating_sub(d));
        lo[root as usize] <= hi[root as usize]
    };
    if !constrain(&mut uf, zero, 0, 0) {
        return false;
    }
    for p in 0..n_params as u32 {
        if !constrain(&mut uf, p, 0, dm) {
            return false;
        }
    }
    for (n, l, h) in bounds {
        if !constrain(&mut uf, n, l, h) {
            return false;
        }
    }

    // Disequalities between classes. Within a class they are decided by the
    // offsets alone.
    let mut edges: Vec<(u32, u32, i64)> = Vec::new(); // value(r1) - value(r2) != diff
    for ((na, ka), (nb, kb)) in neqs {
        let (ra, da) = uf.find(na);
        let (rb, db) = uf.find(nb);
        if ra == rb {
            if da + ka == db + kb {
                return false;
            }
            continue;
        }
        // value(ra) + da + ka != value(rb) + db + kb
        edges.push((ra, rb, (db + kb) - (da + ka)));
    }
    if edges.is_empty() {
        return true;
    }

    // Decide the disequality graph exactly. Classes whose interval is larger
    // than their degree can always pick a fresh value, so they are peeled
    // off first; the remaining core is searched by backtracking.
    let mut nodes: Vec<u32> = edges
        .iter()
        .flat_map(|&(a, b, _)| [a, b])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    let index_of = |n: u32, nodes: &[u32]| nodes.binary_search(&n).unwrap();
    let mut adj: Vec<Vec<(usize, i64)>> = vec![Vec::new(); nodes.len()];
    for &(a, b, diff) in &edges {
        let (ia, ib) = (index_of(a, &nodes), index_of(b, &nodes));
        // value(a) - value(b) != diff
        adj[ia].push((ib, diff));
        adj[ib].push((ia, -diff));
    }
    let width = |i: usize| -> i64 {
        let n = nodes[i] as usize;
        hi[n].saturating_sub(lo[n]).saturating_add(1)
    };

    let mut removed = vec![false; nodes.len()];
    loop {
        let mut peeled = false;
        for i in 0..nodes.len() {
            if removed[i] {
                continue;
            }
            let degree = adj[i].iter().filter(|(j, _)| !removed[*j]).count() as i64;
            if width(i) > degree {
                removed[i] = true;
                peeled = true;
            }
        }
        if !peeled {
            break;
        }
    }

    let core: Vec<usize> = (0..nodes.len()).filter(|&i| !removed[i]).collect();
    if core.is_empty() {
        return true;
    }
    // Backtracking over the core. Peeled classes had intervals wider than
    // their degree, so any core solution extends to them greedily.
    let mut assignment: Vec<Option<i64>> = vec![None; nodes.len()];
    let mut fuel: u64 = 1 << 20;
    fn search(
        pos: usize,
        core: &[usize],
        nodes: &[u32],
        lo: &[i64],
        hi: &[i64],
        adj: &[Vec<(usize, i64)>],
        assignment: &mut Vec<Option<i64>>,
        fuel: &mut u64,
    ) -> bool {
        if pos == core.len() {
            return true;
        }
        let i = core[pos];
        let n = nodes[i] as usize;
        for v in lo[n]..=hi[n] {
            if *fuel == 0 {
                // Out of fuel: answer true, which only ever keeps extra
                // (infeasible) transitions rather than dropping needed ones.
                return true;
            }
            *fuel -= 1;
            let ok = adj[i]
                .iter()
                .all(|&(j, diff)| assignment[j].is_none_or(|w| v - w != diff));
            if ok {
                assignment[i] = Some(v);
                if search(pos + 1, core, nodes, lo, hi, adj, assignment, fuel) {
                    return true;
                }
                assignment[i] = None;
            }
        }
        false
    }
    search(
        0,
        &core,
        &nodes,
        &lo,
        &hi,
        &adj,
        &mut assignment,
        &mut fuel,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(i: u32) -> Term<ParamId> {
        Term::var_plus(ParamId(i), 0)
    }

    fn p_plus(i: u32, k: u64) -> Term<ParamId> {
        Term::var_plus(ParamId(i), k)
    }

    fn konst(k: u64) -> Term<ParamId> {
        Term::constant(k)
    }

    #[test]
    fn offset_conflict_is_unsatisfiable() {
        // p = p + 1
        assert!(!satisfiable(&[GuardAtom::Eq(p(0), p_plus(0, 1))], 10));
    }

    #[test]
    fn bounds_propagate_through_equalities() {
        // p0+1 = p1, p1 <= 1, p0 >= 1 forces p1 = 2 > 1.
        let c = vec![
            GuardAtom::Eq(p_plus(0, 1), p(1)),
            GuardAtom::Le(p(1), 1),
            GuardAtom::Ge(p(0), 1),
        ];
        assert!(!satisfiable(&c, 1));
        // Without the lower bound there is a witness (p0 = 0, p1 = 1).
        assert!(satisfiable(&c[..2], 1));
    }

    #[test]
    fn disequality_with_room_is_satisfiable() {
        let c = vec![
            GuardAtom::Neq(p(0), p(1)),
            GuardAtom::Le(p(0), 1),
            GuardAtom::Le(p(1), 1),
        ];
        assert!(satisfiable(&c, 1));
    }

    #[test]
    fn pigeonhole_disequalities_are_detected() {
        // Three pairwise-distinct parameters in a two-value domain.
        let c = vec![
            GuardAtom::Neq(p(0), p(1)),
            GuardAtom::Neq(p(0), p(2)),
            GuardAtom::Neq(p(1), p(2)),
        ];
        assert!(!satisfiable(&c, 1));
        assert!(satisfiable(&c, 2));
    }

    #[test]
    fn constant_atoms() {
        assert!(satisfiable(&[GuardAtom::Eq(konst(3), konst(3))], 1));
        assert!(!satisfiable(&[GuardAtom::Eq(konst(3), konst(4))], 10));
        assert!(!satisfiable(&[GuardAtom::Neq(konst(3), konst(3))], 10));
        assert!(!satisfiable(&[GuardAtom::Ge(konst(0), 1)], 10));
        // p = 7 outside the domain.
        assert!(!satisfiable(&[GuardAtom::Eq(p(0), konst(7))], 5));
    }

    #[test]
    fn offset_disequality_within_a_class() {
        // p0 = p1 + 1 makes p0 != p1 vacuous and p0 != p1+1 contradictory.
        let eq = GuardAtom::Eq(p(0), p_plus(1, 1));
        assert!(satisfiable(&[eq, GuardAtom::Neq(p(0), p(1))], 5));
        assert!(!satisfiable(
            &[eq, GuardAtom::Neq(p(0), p_plus(1, 1))],
            5
        ));
    }

    mod brute_force_agreement {
        use super::*;
        use proptest::prelude::*;

        fn eval_brute(constraint: &[GuardAtom<ParamId>], n: usize, domain_max: u64) -> bool {
            let mut vals = vec![0u64; n];
            loop {
                if crate::automaton::conj_sat(constraint, &vals) {
                    return true;
                }
                let mut i = 0;
                loop {
                    if i == n {
                        return false;
                    }
                    if vals[i] < domain_max {
                        vals[i] += 1;
                        break;
                    }
                    vals[i] = 0;
                    i += 1;
                }
            }
        }

        fn arb_term() -> impl Strategy<Value = Term<ParamId>> {
            prop_oneof![
                (0u32..4, 0u64..3).prop_map(|(p, k)| Term::var_plus(ParamId(p), k)),
                (0u64..5).prop_map(Term::constant),
            ]
        }

        fn arb_atom() -> impl Strategy<Value = GuardAtom<ParamId>> {
            prop_oneof![
                (arb_term(), arb_term()).prop_map(|(a, b)| GuardAtom::Eq(a, b)),
                (arb_term(), arb_term()).prop_map(|(a, b)| GuardAtom::Neq(a, b)),
                (arb_term(), 0u64..5).prop_map(|(t, k)| GuardAtom::Le(t, k)),
                (arb_term(), 0u64..5).prop_map(|(t, k)| GuardAtom::Ge(t, k)),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(512))]

            #[test]
            fn solver_agrees_with_enumeration(
                atoms in prop::collection::vec(arb_atom(), 0..7),
                domain_max in 0u64..5,
            ) {
                prop_assert_eq!(
                    satisfiable(&atoms, domain_max),
                    eval_brute(&atoms, 4, domain_max)
                );
            }
        }
    }
}
