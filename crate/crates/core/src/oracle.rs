//! Exact rational reference solver.
//!
//! Enumerates memoryless deterministic schedulers, solves the induced
//! Markov chain of each exactly by Gaussian elimination over rationals and
//! keeps the optimum. Meant for small models only.

use num_traits::{One, Zero};
use thiserror::Error;

use crate::model::{Mdp, Opt, Rational, StateSet};

pub const DEFAULT_SCHEDULER_LIMIT: u128 = 1_000_000;

/// One transition index per state.
pub type SchedulerAssignment = Vec<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactResult {
    pub value: Rational,
    pub witness: SchedulerAssignment,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("model is not a DTMC: state {0} has {1} transitions")]
    NotDtmc(usize, usize),
    #[error("{count} schedulers exceed the oracle limit of {limit}")]
    TooManySchedulers { count: u128, limit: u128 },
    #[error("goal state {0} out of range")]
    GoalOutOfRange(usize),
}

fn check_goal(m: &Mdp, goal: &StateSet) -> Result<(), OracleError> {
    match goal.iter().find(|&&g| g >= m.state_count()) {
        Some(&g) => Err(OracleError::GoalOutOfRange(g)),
        None => Ok(()),
    }
}

/// Exact reachability probability of every state of a DTMC.
pub fn exact_dtmc_reachability(m: &Mdp, goal: &StateSet) -> Result<Vec<Rational>, OracleError> {
    check_goal(m, goal)?;
    if let Some(s) = (0..m.state_count()).find(|&s| m.transitions(s).len() != 1) {
        return Err(OracleError::NotDtmc(s, m.transitions(s).len()));
    }
    Ok(induced_values(m, goal, &vec![0; m.state_count()]))
}

/// Reachability probabilities in the chain induced by `choice`.
pub fn induced_values(m: &Mdp, goal: &StateSet, choice: &[usize]) -> Vec<Rational> {
    let n = m.state_count();
    let is_goal = |s: usize| goal.contains(&s);
    let succ = |s: usize| m.transitions(s)[choice[s]].branches.iter();

    // backward reachability of the goal inside the induced chain
    let mut reach = vec![false; n];
    for &g in goal {
        reach[g] = true;
    }
    loop {
        let mut changed = false;
        for s in 0..n {
            if !reach[s] && succ(s).any(|b| reach[b.target]) {
                reach[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let unknown: Vec<usize> = (0..n).filter(|&s| reach[s] && !is_goal(s)).collect();
    let mut column = vec![usize::MAX; n];
    for (i, &s) in unknown.iter().enumerate() {
        column[s] = i;
    }
    // (I - P_uu) x = P_ug * 1
    let k = unknown.len();
    let mut a = vec![vec![Rational::zero(); k + 1]; k];
    for (i, &s) in unknown.iter().enumerate() {
        a[i][i] = Rational::one();
        for b in succ(s) {
            if is_goal(b.target) {
                a[i][k] += &b.prob;
            } else if column[b.target] != usize::MAX {
                a[i][column[b.target]] -= &b.prob;
            }
        }
    }
    let x = gauss_solve(a);

    let mut out = vec![Rational::zero(); n];
    for &g in goal {
        out[g] = Rational::one();
    }
    for (i, &s) in unknown.iter().enumerate() {
        out[s] = x[i].clone();
    }
    out
}

/// Solves the augmented system `a` (k rows, k+1 columns) exactly.
fn gauss_solve(mut a: Vec<Vec<Rational>>) -> Vec<Rational> {
    let k = a.len();
    for col in 0..k {
        let pivot = (col..k)
            .find(|&r| !a[r][col].is_zero())
            .expect("reachability system is non-singular");
        a.swap(col, pivot);
        let inv = a[col][col].recip();
        for x in &mut a[col][col..] {
            *x *= &inv;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r == col || row[col].is_zero() {
                continue;
            }
            let factor = row[col].clone();
            for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= &factor * p;
            }
        }
    }
    a.into_iter().map(|mut row| row.pop().expect("rhs")).collect()
}

/// States reachable from the initial state, stopping at goal states.
fn relevant_states(m: &Mdp, goal: &StateSet) -> Vec<bool> {
    let n = m.state_count();
    let mut seen = vec![false; n];
    let mut stack = vec![m.initial()];
    seen[m.initial()] = true;
    while let Some(s) = stack.pop() {
        if goal.contains(&s) {
            continue;
        }
        for t in m.transitions(s) {
            for x in t.targets() {
                if !seen[x] {
                    seen[x] = true;
                    stack.push(x);
                }
            }
        }
    }
    seen
}

/// Optimal exact reachability probability from the initial state.
///
/// Only choices at non-goal states reachable from the initial state are
/// enumerated; the count of those schedulers must not exceed `limit`.
pub fn exact_reachability(
    m: &Mdp,
    goal: &StateSet,
    opt: Opt,
    limit: u128,
) -> Result<ExactResult, OracleError> {
    check_goal(m, goal)?;
    let relevant = relevant_states(m, goal);
    let free: Vec<usize> = (0..m.state_count())
        .filter(|&s| relevant[s] && !goal.contains(&s) && m.transitions(s).len() > 1)
        .collect();
    let count = free.iter().fold(1u128, |acc, &s| {
        acc.saturating_mul(m.transitions(s).len() as u128)
    });
    if count > limit {
        return Err(OracleError::TooManySchedulers { count, limit });
    }

    let mut choice = vec![0usize; m.state_count()];
    let mut best: Option<ExactResult> = None;
    loop {
        let value = induced_values(m, goal, &choice).swap_remove(m.initial());
        let better = match &best {
            None => true,
            Some(b) => match opt {
                Opt::Max => value > b.value,
                Opt::Min => value < b.value,
            },
        };
        if better {
            best = Some(ExactResult {
                value,
                witness: choice.clone(),
            });
        }
        // odometer over the free states
        let mut i = 0;
        loop {
            if i == free.len() {
                return Ok(best.expect("at least one scheduler"));
            }
            let s = free[i];
            choice[s] += 1;
            if choice[s] < m.transitions(s).len() {
                break;
            }
            choice[s] = 0;
            i += 1;
        }
    }
}

/// True if the only cycles are self-loops of absorbing states.
pub fn is_acyclic(m: &Mdp) -> bool {
    let n = m.state_count();
    let absorbing = |s: usize| {
        m.transitions(s)
            .iter()
            .all(|t| t.targets().all(|x| x == s))
    };
    // Kahn's algorithm on the graph without absorbing self-loops
    let mut indeg = vec![0usize; n];
    let succ: Vec<Vec<usize>> = m
        .successors()
        .into_iter()
        .enumerate()
        .map(|(s, v)| if absorbing(s) { Vec::new() } else { v })
        .collect();
    for v in &succ {
        for &x in v {
            indeg[x] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&s| indeg[s] == 0).collect();
    let mut visited = 0;
    while let Some(s) = queue.pop() {
        visited += 1;
        for &x in &succ[s] {
            indeg[x] -= 1;
            if indeg[x] == 0 {
                queue.push(x);
            }
        }
    }
    visited == n
}

/// Exact value iteration over rationals, unrolled `state_count` times.
/// On acyclic models this reaches the exact optimum.
pub fn acyclic_value_iteration(m: &Mdp, goal: &StateSet, opt: Opt) -> Vec<Rational> {
    let n = m.state_count();
    let mut v: Vec<Rational> = (0..n)
        .map(|s| {
            if goal.contains(&s) {
                Rational::one()
            } else {
                Rational::zero()
            }
        })
        .collect();
    for _ in 0..n {
        let next: Vec<Rational> = (0..n)
            .map(|s| {
                if goal.contains(&s) {
                    return Rational::one();
                }
                m.transitions(s)
                    .iter()
                    .map(|t| {
                        t.branches
                            .iter()
                            .fold(Rational::zero(), |acc, b| acc + &b.prob * &v[b.target])
                    })
                    .reduce(|a, b| match opt {
                        Opt::Max => a.max(b),
                        Opt::Min => a.min(b),
                    })
                    .expect("non-empty transitions")
            })
            .collect();
        v = next;
    }
    v
}
