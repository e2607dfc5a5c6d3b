//! Graph-based preprocessing: the 0/1 state sets and end-component collapse.
//!
//! Nothing in here looks at probability values, only at supports.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;

use crate::model::{Branch, Mdp, Opt, StateSet, Transition};

/// States with reachability probability exactly zero and exactly one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualitativeSets {
    pub s0: StateSet,
    pub s1: StateSet,
}

impl QualitativeSets {
    pub fn compute(m: &Mdp, goal: &StateSet, opt: Opt) -> Self {
        Self {
            s0: prob0(m, goal, opt),
            s1: prob1(m, goal, opt),
        }
    }

    /// True if `s` has to be iterated.
    pub fn is_unknown(&self, s: usize) -> bool {
        !self.s0.contains(&s) && !self.s1.contains(&s)
    }
}

fn mask(n: usize, set: &StateSet) -> Vec<bool> {
    let mut v = vec![false; n];
    for &s in set {
        if s < n {
            v[s] = true;
        }
    }
    v
}

fn unmask(v: &[bool]) -> StateSet {
    v.iter()
        .enumerate()
        .filter_map(|(s, &b)| b.then_some(s))
        .collect()
}

/// States from which some scheduler reaches `target` with positive
/// probability (backward closure over any transition).
fn exists_reach(m: &Mdp, target: &[bool], blocked: &[bool]) -> Vec<bool> {
    let preds = m.predecessors();
    let mut reach = target.to_vec();
    let mut stack: Vec<usize> = (0..m.state_count()).filter(|&s| reach[s]).collect();
    while let Some(t) = stack.pop() {
        for &p in &preds[t] {
            if !reach[p] && !blocked[p] {
                reach[p] = true;
                stack.push(p);
            }
        }
    }
    reach
}

/// States whose `opt` probability of eventually reaching `goal` is zero.
pub fn prob0(m: &Mdp, goal: &StateSet, opt: Opt) -> StateSet {
    let n = m.state_count();
    let goal = mask(n, goal);
    let reach = match opt {
        Opt::Max => exists_reach(m, &goal, &vec![false; n]),
        Opt::Min => {
            // states where every scheduler reaches the goal with positive probability
            let mut r = goal;
            loop {
                let mut changed = false;
                for s in 0..n {
                    if r[s] {
                        continue;
                    }
                    let forced = m
                        .transitions(s)
                        .iter()
                        .all(|t| t.targets().any(|x| r[x]));
                    if forced {
                        r[s] = true;
                        changed = true;
                    }
                }
                if !changed {
                    break r;
                }
            }
        }
    };
    (0..n).filter(|&s| !reach[s]).collect()
}

/// States whose `opt` probability of eventually reaching `goal` is one.
pub fn prob1(m: &Mdp, goal: &StateSet, opt: Opt) -> StateSet {
    let n = m.state_count();
    let goal_mask = mask(n, goal);
    match opt {
        Opt::Max => {
            let mut u = vec![true; n];
            loop {
                let mut r = goal_mask.clone();
                loop {
                    let mut changed = false;
                    for s in 0..n {
                        if r[s] || !u[s] {
                            continue;
                        }
                        let ok = m.transitions(s).iter().any(|t| {
                            t.targets().all(|x| u[x]) && t.targets().any(|x| r[x])
                        });
                        if ok {
                            r[s] = true;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
                if r == u {
                    break unmask(&u);
                }
                u = r;
            }
        }
        Opt::Min => {
            let zero = mask(n, &prob0(m, goal, Opt::Min));
            let bad = exists_reach(m, &zero, &goal_mask);
            (0..n).filter(|&s| !bad[s]).collect()
        }
    }
}

/// One maximal end component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndComponent {
    /// Member states in ascending order.
    pub states: Vec<usize>,
    /// Per member state, indices of the transitions that stay inside.
    pub retained: BTreeMap<usize, Vec<usize>>,
}

impl EndComponent {
    pub fn contains(&self, s: usize) -> bool {
        self.states.binary_search(&s).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MecPartition {
    pub mecs: Vec<EndComponent>,
    /// Index of the collapsed state each original state maps to.
    pub quotient_map: Vec<usize>,
    pub quotient_size: usize,
}

/// Strongly connected components of the subgraph induced by `alive` states.
/// Edges come from `edges(s)`. Returns a component id per state
/// (`usize::MAX` for dead states) in reverse topological order.
pub(crate) fn tarjan<F>(n: usize, alive: &[bool], edges: F) -> Vec<usize>
where
    F: Fn(usize) -> Vec<usize>,
{
    const NONE: usize = usize::MAX;
    let mut index = vec![NONE; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![NONE; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;

    for root in 0..n {
        if !alive[root] || index[root] != NONE {
            continue;
        }
        // explicit call stack: (node, successors, next successor position)
        let mut call: Vec<(usize, Vec<usize>, usize)> = Vec::new();
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        call.push((root, edges(root), 0));

        while let Some(frame) = call.last_mut() {
            let v = frame.0;
            if frame.2 < frame.1.len() {
                let w = frame.1[frame.2];
                frame.2 += 1;
                if !alive[w] {
                    continue;
                }
                if index[w] == NONE {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, edges(w), 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(parent) = call.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

/// Maximal end components by repeated SCC decomposition with pruning of
/// transitions that leave their component.
pub fn mec_decomposition(m: &Mdp) -> MecPartition {
    let n = m.state_count();
    let mut alive = vec![true; n];
    let mut allowed: Vec<Vec<bool>> = (0..n)
        .map(|s| vec![true; m.transitions(s).len()])
        .collect();

    let comp = loop {
        let comp = tarjan(n, &alive, |s| {
            let mut out: Vec<usize> = m
                .transitions(s)
                .iter()
                .zip(&allowed[s])
                .filter(|(_, &a)| a)
                .flat_map(|(t, _)| t.targets())
                .collect();
            out.sort_unstable();
            out.dedup();
            out
        });
        let mut changed = false;
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            for (i, t) in m.transitions(s).iter().enumerate() {
                if allowed[s][i] && t.targets().any(|x| !alive[x] || comp[x] != comp[s]) {
                    allowed[s][i] = false;
                    changed = true;
                }
            }
            if !allowed[s].iter().any(|&a| a) {
                alive[s] = false;
                changed = true;
            }
        }
        if !changed {
            break comp;
        }
    };

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in (0..n).filter(|&s| alive[s]) {
        groups.entry(comp[s]).or_default().push(s);
    }
    let mut mecs: Vec<EndComponent> = groups
        .into_values()
        .map(|states| {
            let retained = states
                .iter()
                .map(|&s| {
                    let idx = (0..allowed[s].len()).filter(|&i| allowed[s][i]).collect();
                    (s, idx)
                })
                .collect();
            EndComponent { states, retained }
        })
        .collect();
    mecs.sort_by_key(|c| c.states[0]);

    let mut owner = vec![usize::MAX; n];
    for (i, c) in mecs.iter().enumerate() {
        for &s in &c.states {
            owner[s] = i;
        }
    }
    let mut quotient_map = vec![0; n];
    let mut mec_index: Vec<Option<usize>> = vec![None; mecs.len()];
    let mut next = 0;
    for s in 0..n {
        quotient_map[s] = if owner[s] == usize::MAX {
            next += 1;
            next - 1
        } else if let Some(q) = mec_index[owner[s]] {
            q
        } else {
            mec_index[owner[s]] = Some(next);
            next += 1;
            next - 1
        };
    }
    MecPartition {
        mecs,
        quotient_map,
        quotient_size: next,
    }
}

fn remap(t: &Transition, map: &[usize]) -> Transition {
    let mut merged: Vec<Branch> = Vec::with_capacity(t.branches.len());
    for b in &t.branches {
        let target = map[b.target];
        match merged.iter_mut().find(|x| x.target == target) {
            Some(x) => x.prob += &b.prob,
            None => merged.push(Branch::new(target, b.prob.clone())),
        }
    }
    Transition::new(merged)
}

/// Collapses every maximal end component into a single state.
///
/// A collapsed state keeps the transitions of its members that have a
/// branch leaving the component. Goal-containing collapsed states become
/// absorbing, as do collapsed states left without any exit. Labels are
/// carried over to the collapsed state.
pub fn collapse_mecs(m: &Mdp, goal: &StateSet) -> (Mdp, Vec<usize>) {
    let part = mec_decomposition(m);
    let map = part.quotient_map;
    let qn = part.quotient_size;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); qn];
    for s in 0..m.state_count() {
        members[map[s]].push(s);
    }
    let in_mec: Vec<bool> = {
        let mut v = vec![false; qn];
        for c in &part.mecs {
            v[map[c.states[0]]] = true;
        }
        v
    };
    let is_goal: Vec<bool> = {
        let mut v = vec![false; qn];
        for &g in goal {
            v[map[g]] = true;
        }
        v
    };

    let mut transitions = Vec::with_capacity(qn);
    for q in 0..qn {
        if is_goal[q] {
            transitions.push(vec![Transition::dirac(q)]);
            continue;
        }
        let mut ts: Vec<Transition> = Vec::new();
        for &s in &members[q] {
            for t in m.transitions(s) {
                if in_mec[q] && t.targets().all(|x| map[x] == q) {
                    continue;
                }
                ts.push(remap(t, &map));
            }
        }
        if ts.is_empty() {
            ts.push(Transition::dirac(q));
        }
        transitions.push(ts);
    }
    let labels = m
        .labels()
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|&s| map[s]).collect()))
        .collect();
    let quotient = Mdp::new(qn, map[m.initial()], transitions, labels)
        .expect("quotient of a valid model is valid");
    debug_assert!(quotient
        .all_transitions()
        .iter()
        .flatten()
        .all(|t| t.branches.iter().all(|b| !b.prob.is_zero())));
    (quotient, map)
}

/// Maps a state set through a quotient map.
pub fn map_states(set: &StateSet, map: &[usize]) -> StateSet {
    set.iter().map(|&s| map[s]).collect::<BTreeSet<_>>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_counterexample, Rational};

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn cx() -> Mdp {
        build_counterexample(1, &q(1, 10)).unwrap()
    }

    #[test]
    fn counterexample_zero_one_sets() {
        let m = cx();
        let goal = m.label("plus").unwrap().clone();
        assert_eq!(prob0(&m, &goal, Opt::Max), StateSet::from([1]));
        assert_eq!(prob1(&m, &goal, Opt::Max), StateSet::from([0]));
        assert_eq!(prob0(&m, &goal, Opt::Min), StateSet::from([1]));
        assert_eq!(prob1(&m, &goal, Opt::Min), StateSet::from([0]));
    }

    #[test]
    fn all_goal_has_no_zero_states() {
        let m = cx();
        let goal: StateSet = (0..m.state_count()).collect();
        assert!(prob0(&m, &goal, Opt::Max).is_empty());
        assert!(prob0(&m, &goal, Opt::Min).is_empty());
        assert_eq!(prob1(&m, &goal, Opt::Min), goal);
    }

    #[test]
    fn counterexample_has_two_singleton_mecs() {
        let p = mec_decomposition(&cx());
        let states: Vec<Vec<usize>> = p.mecs.iter().map(|c| c.states.clone()).collect();
        assert_eq!(states, vec![vec![0], vec![1]]);
        assert_eq!(p.quotient_map, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn absorbing_state_is_a_mec() {
        let m = Mdp::new(1, 0, vec![vec![Transition::dirac(0)]], Default::default()).unwrap();
        let p = mec_decomposition(&m);
        assert_eq!(p.mecs.len(), 1);
        assert_eq!(p.mecs[0].retained[&0], vec![0]);
    }

    #[test]
    fn collapse_is_identity_on_counterexample() {
        let m = cx();
        let goal = m.label("plus").unwrap().clone();
        let (c, map) = collapse_mecs(&m, &goal);
        assert_eq!(c, m);
        assert_eq!(map, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn collapse_two_state_mec_with_exit() {
        // 0 <-> 1 form an end component; 0 may also leave to the absorbing 2
        let ts = vec![
            vec![Transition::dirac(1), Transition::dirac(2)],
            vec![Transition::dirac(0)],
            vec![Transition::dirac(2)],
        ];
        let m = Mdp::new(3, 0, ts, Default::default()).unwrap();
        let (c, map) = collapse_mecs(&m, &StateSet::from([2]));
        assert_eq!(map, vec![0, 0, 1]);
        assert_eq!(c.state_count(), 2);
        assert_eq!(c.transitions(0), &[Transition::dirac(1)]);
        assert_eq!(c.transitions(1), &[Transition::dirac(1)]);
    }

    #[test]
    fn trapped_mec_gets_self_loop() {
        let ts = vec![
            vec![Transition::new(vec![
                Branch::new(1, q(1, 2)),
                Branch::new(2, q(1, 2)),
            ])],
            vec![Transition::dirac(2)],
            vec![Transition::dirac(1)],
        ];
        let m = Mdp::new(3, 0, ts, Default::default()).unwrap();
        let (c, map) = collapse_mecs(&m, &StateSet::new());
        assert_eq!(map, vec![0, 1, 1]);
        assert_eq!(c.transitions(0), &[Transition::dirac(1)]);
        assert_eq!(c.transitions(1), &[Transition::dirac(1)]);
    }
}
