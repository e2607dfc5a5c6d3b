//! Explicit-state MDPs with exact rational branch probabilities.
//!
//! A model is a list of states; each state owns a non-empty list of
//! transitions and each transition is a probability distribution over
//! successor states, stored as a list of branches with positive rational
//! probabilities. State order is significant: it is the order in which the
//! Gauss-Seidel sweeps of the solvers visit states.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use thiserror::Error;

/// Exact probability. Always kept in lowest terms with a positive denominator.
pub type Rational = BigRational;

/// A set of state indices.
pub type StateSet = BTreeSet<usize>;

/// Optimisation direction over schedulers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opt {
    Max,
    Min,
}

impl fmt::Display for Opt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opt::Max => f.write_str("max"),
            Opt::Min => f.write_str("min"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub target: usize,
    pub prob: Rational,
}

impl Branch {
    pub fn new(target: usize, prob: Rational) -> Self {
        Self { target, prob }
    }
}

/// One probability distribution over successors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transition {
    pub branches: Vec<Branch>,
}

impl Transition {
    pub fn new(branches: Vec<Branch>) -> Self {
        Self { branches }
    }

    /// A transition with a single branch of probability one.
    pub fn dirac(target: usize) -> Self {
        Self {
            branches: vec![Branch::new(target, Rational::one())],
        }
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.branches.iter().map(|b| b.target)
    }

    pub fn sum(&self) -> Rational {
        self.branches
            .iter()
            .fold(Rational::zero(), |acc, b| acc + &b.prob)
    }
}

/// A problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    StateCountMismatch { declared: usize, actual: usize },
    InitialOutOfRange { initial: usize },
    EmptyTransitionSet { state: usize },
    EmptyTransition { state: usize, transition: usize },
    DanglingTarget { state: usize, transition: usize, target: usize },
    NonPositiveProbability { state: usize, transition: usize, target: usize },
    DuplicateTarget { state: usize, transition: usize, target: usize },
    SumNotOne { state: usize, transition: usize, sum: Rational },
    LabelOutOfRange { label: String, state: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StateCountMismatch { declared, actual } => write!(
                f,
                "model declares {declared} states but defines transitions for {actual}"
            ),
            Violation::InitialOutOfRange { initial } => {
                write!(f, "initial state {initial} out of range")
            }
            Violation::EmptyTransitionSet { state } => {
                write!(f, "empty transition set at state {state}")
            }
            Violation::EmptyTransition { state, transition } => write!(
                f,
                "transition {transition} of state {state} has no branches"
            ),
            Violation::DanglingTarget {
                state,
                transition,
                target,
            } => write!(
                f,
                "transition {transition} of state {state} targets unknown state {target}"
            ),
            Violation::NonPositiveProbability {
                state,
                transition,
                target,
            } => write!(
                f,
                "transition {transition} of state {state} has a non-positive branch to {target}"
            ),
            Violation::DuplicateTarget {
                state,
                transition,
                target,
            } => write!(
                f,
                "transition {transition} of state {state} lists target {target} twice"
            ),
            Violation::SumNotOne {
                state,
                transition,
                sum,
            } => {
                let one = Rational::one();
                if *sum < one {
                    write!(
                        f,
                        "transition {transition} of state {state} sums to {sum}, deficit {}",
                        &one - sum
                    )
                } else {
                    write!(
                        f,
                        "transition {transition} of state {state} sums to {sum}, excess {}",
                        sum - &one
                    )
                }
            }
            Violation::LabelOutOfRange { label, state } => {
                write!(f, "label {label:?} refers to unknown state {state}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("invalid counterexample parameter: {0}")]
    Parameter(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Explicit-state Markov decision process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mdp {
    state_count: usize,
    initial: usize,
    transitions: Vec<Vec<Transition>>,
    labels: BTreeMap<String, StateSet>,
}

impl Mdp {
    /// Builds a model and checks every structural invariant.
    pub fn new(
        state_count: usize,
        initial: usize,
        transitions: Vec<Vec<Transition>>,
        labels: BTreeMap<String, StateSet>,
    ) -> Result<Self, ModelError> {
        let m = Self::new_unchecked(state_count, initial, transitions, labels);
        let violations = validate(&m);
        if violations.is_empty() {
            Ok(m)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Builds a model without validation. Use [`validate`] to inspect it.
    pub fn new_unchecked(
        state_count: usize,
        initial: usize,
        transitions: Vec<Vec<Transition>>,
        labels: BTreeMap<String, StateSet>,
    ) -> Self {
        Self {
            state_count,
            initial,
            transitions,
            labels,
        }
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn transitions(&self, state: usize) -> &[Transition] {
        &self.transitions[state]
    }

    pub fn all_transitions(&self) -> &[Vec<Transition>] {
        &self.transitions
    }

    pub fn labels(&self) -> &BTreeMap<String, StateSet> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Result<&StateSet, ModelError> {
        self.labels
            .get(name)
            .ok_or_else(|| ModelError::UnknownLabel(name.to_string()))
    }

    pub fn is_dtmc(&self) -> bool {
        self.transitions.iter().all(|t| t.len() == 1)
    }

    pub fn transition_count(&self) -> usize {
        self.transitions.iter().map(Vec::len).sum()
    }

    pub fn branch_count(&self) -> usize {
        self.transitions
            .iter()
            .flatten()
            .map(|t| t.branches.len())
            .sum()
    }

    /// Number of memoryless deterministic schedulers, saturating at `u128::MAX`.
    pub fn scheduler_count(&self) -> u128 {
        self.transitions
            .iter()
            .fold(1u128, |acc, t| acc.saturating_mul(t.len() as u128))
    }

    /// Same model with a different initial state.
    pub fn with_initial(&self, initial: usize) -> Self {
        let mut m = self.clone();
        m.initial = initial;
        m
    }

    /// Replaces the transitions of every goal state by a single self-loop.
    pub fn with_absorbing(&self, goal: &StateSet) -> Self {
        let mut m = self.clone();
        for &g in goal {
            if g < m.state_count {
                m.transitions[g] = vec![Transition::dirac(g)];
            }
        }
        m
    }

    /// Successor lists (deduplicated, any transition) per state.
    pub fn successors(&self) -> Vec<Vec<usize>> {
        self.transitions
            .iter()
            .map(|ts| {
                let set: BTreeSet<usize> = ts.iter().flat_map(Transition::targets).collect();
                set.into_iter().collect()
            })
            .collect()
    }

    /// Predecessor lists (deduplicated, any transition) per state.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![BTreeSet::new(); self.state_count];
        for (s, ts) in self.transitions.iter().enumerate() {
            for t in ts.iter().flat_map(Transition::targets) {
                preds[t].insert(s);
            }
        }
        preds.into_iter().map(|p| p.into_iter().collect()).collect()
    }
}

/// Checks all model invariants and reports every violation found.
pub fn validate(m: &Mdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.transitions.len() != m.state_count {
        out.push(Violation::StateCountMismatch {
            declared: m.state_count,
            actual: m.transitions.len(),
        });
    }
    if m.initial >= m.state_count {
        out.push(Violation::InitialOutOfRange { initial: m.initial });
    }
    for (state, ts) in m.transitions.iter().enumerate() {
        if ts.is_empty() {
            out.push(Violation::EmptyTransitionSet { state });
        }
        for (transition, t) in ts.iter().enumerate() {
            if t.branches.is_empty() {
                out.push(Violation::EmptyTransition { state, transition });
                continue;
            }
            let mut seen = BTreeSet::new();
            for b in &t.branches {
                if b.target >= m.state_count {
                    out.push(Violation::DanglingTarget {
                        state,
                        transition,
                        target: b.target,
                    });
                }
                if !b.prob.is_positive() {
                    out.push(Violation::NonPositiveProbability {
                        state,
                        transition,
                        target: b.target,
                    });
                }
                if !seen.insert(b.target) {
                    out.push(Violation::DuplicateTarget {
                        state,
                        transition,
                        target: b.target,
                    });
                }
            }
            let sum = t.sum();
            if !sum.is_one() {
                out.push(Violation::SumNotOne {
                    state,
                    transition,
                    sum,
                });
            }
        }
    }
    for (label, states) in &m.labels {
        for &state in states {
            if state >= m.state_count {
                out.push(Violation::LabelOutOfRange {
                    label: label.clone(),
                    state,
                });
            }
        }
    }
    out
}

fn syntax(line: usize, message: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_index(tok: &str, line: usize, what: &str) -> Result<usize, ModelError> {
    tok.parse::<usize>()
        .map_err(|_| syntax(line, format!("expected {what}, found {tok:?}")))
}

/// Parses a `num/den` literal. Decimal literals are refused.
pub fn parse_rational(tok: &str) -> Result<Rational, String> {
    let tok = tok.trim();
    if tok.contains('.') || tok.contains('e') || tok.contains('E') {
        return Err(format!(
            "decimal literal {tok:?} not allowed, write probabilities as num/den"
        ));
    }
    let (num, den) = tok
        .split_once('/')
        .ok_or_else(|| format!("expected a rational num/den, found {tok:?}"))?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    if !digits(num) || !digits(den) {
        return Err(format!("expected a rational num/den, found {tok:?}"));
    }
    let num: BigInt = num.parse().expect("digits");
    let den: BigInt = den.parse().expect("digits");
    if den.is_zero() {
        return Err(format!("zero denominator in {tok:?}"));
    }
    Ok(Rational::new(num, den))
}

/// Parses the line-oriented explicit model format.
///
/// ```text
/// mdp 3 0
/// label goal 1
/// state 0:
///   1/2 -> 1, 1/2 -> 2
/// state 1:
///   1/1 -> 1
/// state 2:
///   1/1 -> 2
/// ```
pub fn parse_model(text: &str) -> Result<Mdp, ModelError> {
    let mut header: Option<(usize, usize)> = None;
    let mut transitions: Vec<Option<Vec<Transition>>> = Vec::new();
    let mut labels: BTreeMap<String, StateSet> = BTreeMap::new();
    let mut current: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let first = words.next().unwrap_or("");
        match first {
            "mdp" => {
                if header.is_some() {
                    return Err(syntax(line_no, "duplicate mdp header"));
                }
                let n = words
                    .next()
                    .ok_or_else(|| syntax(line_no, "missing state count"))?;
                let i = words
                    .next()
                    .ok_or_else(|| syntax(line_no, "missing initial state"))?;
                if let Some(extra) = words.next() {
                    return Err(syntax(line_no, format!("unexpected token {extra:?}")));
                }
                let n = parse_index(n, line_no, "state count")?;
                let i = parse_index(i, line_no, "initial state")?;
                if i >= n {
                    return Err(syntax(line_no, format!("initial state {i} out of range")));
                }
                header = Some((n, i));
                transitions = vec![None; n];
            }
            _ if header.is_none() => {
                return Err(syntax(line_no, "expected `mdp <states> <initial>` header"));
            }
            "label" => {
                let (n, _) = header.expect("checked");
                let name = words
                    .next()
                    .ok_or_else(|| syntax(line_no, "missing label name"))?;
                if labels.contains_key(name) {
                    return Err(syntax(line_no, format!("duplicate label {name:?}")));
                }
                let mut set = StateSet::new();
                for tok in words {
                    let s = parse_index(tok, line_no, "state index")?;
                    if s >= n {
                        return Err(syntax(
                            line_no,
                            format!("label {name:?} refers to unknown state {s}"),
                        ));
                    }
                    set.insert(s);
                }
                labels.insert(name.to_string(), set);
                current = None;
            }
            "state" => {
                let (n, _) = header.expect("checked");
                let rest = content["state".len()..].trim();
                let idx_tok = rest
                    .strip_suffix(':')
                    .ok_or_else(|| syntax(line_no, "expected `state <idx>:`"))?
                    .trim();
                let s = parse_index(idx_tok, line_no, "state index")?;
                if s >= n {
                    return Err(syntax(line_no, format!("state {s} out of range")));
                }
                if transitions[s].is_some() {
                    return Err(syntax(line_no, format!("state {s} defined twice")));
                }
                transitions[s] = Some(Vec::new());
                current = Some(s);
            }
            _ => {
                let (n, _) = header.expect("checked");
                let s = current
                    .ok_or_else(|| syntax(line_no, "transition outside of a state block"))?;
                let t = parse_transition(content, n, line_no)?;
                transitions[s].as_mut().expect("open state").push(t);
            }
        }
    }

    let (n, initial) = header.ok_or_else(|| syntax(1, "missing `mdp` header"))?;
    let transitions = transitions
        .into_iter()
        .map(Option::unwrap_or_default)
        .collect();
    Mdp::new(n, initial, transitions, labels)
}

fn parse_transition(content: &str, n: usize, line_no: usize) -> Result<Transition, ModelError> {
    let mut branches = Vec::new();
    for part in content.split(',') {
        let (prob, target) = part
            .split_once("->")
            .ok_or_else(|| syntax(line_no, format!("expected `p -> state`, found {:?}", part.trim())))?;
        let prob = parse_rational(prob).map_err(|m| syntax(line_no, m))?;
        let target = parse_index(target.trim(), line_no, "target state")?;
        if target >= n {
            return Err(syntax(line_no, format!("target state {target} out of range")));
        }
        if branches.iter().any(|b: &Branch| b.target == target) {
            return Err(syntax(line_no, format!("target {target} listed twice")));
        }
        // zero-probability branches are outside the support
        if prob.is_zero() {
            continue;
        }
        branches.push(Branch::new(target, prob));
    }
    let t = Transition::new(branches);
    let sum = t.sum();
    if !sum.is_one() {
        return Err(syntax(line_no, format!("distribution sums to {sum}, not 1")));
    }
    Ok(t)
}

/// Renders a model in the explicit format accepted by [`parse_model`].
pub fn serialize_model(m: &Mdp) -> String {
    use fmt::Write;
    let mut out = String::new();
    writeln!(out, "mdp {} {}", m.state_count, m.initial).unwrap();
    for (name, states) in &m.labels {
        write!(out, "label {name}").unwrap();
        for s in states {
            write!(out, " {s}").unwrap();
        }
        out.push('\n');
    }
    for (s, ts) in m.transitions.iter().enumerate() {
        writeln!(out, "state {s}:").unwrap();
        for t in ts {
            let parts: Vec<String> = t
                .branches
                .iter()
                .map(|b| format!("{}/{} -> {}", b.prob.numer(), b.prob.denom(), b.target))
                .collect();
            writeln!(out, "  {}", parts.join(", ")).unwrap();
        }
    }
    out
}

/// Label attached to the `s+` state of the counterexample family.
pub const PLUS_LABEL: &str = "plus";

/// Builds the chain model `M_n^gamma`.
///
/// States are numbered in reverse topological order: `0 = s+`, `1 = s-`,
/// `2 + n - i = s_i` for the chain, and `3 + n = s_I` (initial). The model
/// has `4 + n` states and `7 + 2n` branches, and the probability of
/// reaching `s+` from the initial state is `1/2 + gamma^(n+2)`.
pub fn build_counterexample(n: usize, gamma: &Rational) -> Result<Mdp, ModelError> {
    let half = Rational::new(1.into(), 2.into());
    if !gamma.is_positive() || *gamma >= half {
        return Err(ModelError::Parameter(format!(
            "gamma must lie in (0, 1/2), got {gamma}"
        )));
    }
    let plus = 0;
    let minus = 1;
    let chain = |i: usize| 2 + n - i;
    let initial = 3 + n;
    let one = Rational::one();

    let mut transitions = vec![Vec::new(); 4 + n];
    transitions[plus] = vec![Transition::dirac(plus)];
    transitions[minus] = vec![Transition::dirac(minus)];
    for i in 0..n {
        transitions[chain(i)] = vec![Transition::new(vec![
            Branch::new(chain(i + 1), gamma.clone()),
            Branch::new(minus, &one - gamma),
        ])];
    }
    transitions[chain(n)] = vec![Transition::new(vec![
        Branch::new(plus, gamma.clone()),
        Branch::new(minus, &one - gamma),
    ])];
    transitions[initial] = vec![Transition::new(vec![
        Branch::new(plus, half.clone()),
        Branch::new(chain(0), gamma.clone()),
        Branch::new(minus, &half - gamma),
    ])];

    let mut labels = BTreeMap::new();
    labels.insert(PLUS_LABEL.to_string(), StateSet::from([plus]));
    Mdp::new(4 + n, initial, transitions, labels)
}

/// Shape limits for [`random_mdp`].
#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    pub max_states: usize,
    pub max_transitions: usize,
    pub max_branches: usize,
    pub max_denominator: u32,
}

impl Default for RandomShape {
    fn default() -> Self {
        Self {
            max_states: 8,
            max_transitions: 3,
            max_branches: 4,
            max_denominator: 10,
        }
    }
}

/// Label placed on the goal states of generated models.
pub const GOAL_LABEL: &str = "goal";

/// Generates a small random MDP with a non-empty `goal` label.
///
/// Roughly one state in five is absorbing, so models usually contain both
/// sinks and cycles.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, shape: &RandomShape) -> Mdp {
    let n = rng.gen_range(2..=shape.max_states.max(2));
    let mut transitions = Vec::with_capacity(n);
    for s in 0..n {
        if rng.gen_bool(0.2) {
            transitions.push(vec![Transition::dirac(s)]);
            continue;
        }
        let count = rng.gen_range(1..=shape.max_transitions.max(1));
        let ts = (0..count)
            .map(|_| random_transition(rng, n, shape))
            .collect();
        transitions.push(ts);
    }
    let goal_count = rng.gen_range(1..=2.min(n));
    let mut goal = StateSet::new();
    while goal.len() < goal_count {
        goal.insert(rng.gen_range(0..n));
    }
    let mut labels = BTreeMap::new();
    labels.insert(GOAL_LABEL.to_string(), goal);
    Mdp::new(n, 0, transitions, labels).expect("generator produces valid models")
}

fn random_transition<R: Rng + ?Sized>(rng: &mut R, n: usize, shape: &RandomShape) -> Transition {
    let width = rng.gen_range(1..=shape.max_branches.max(1).min(n));
    let mut targets = BTreeSet::new();
    while targets.len() < width {
        targets.insert(rng.gen_range(0..n));
    }
    let den = rng.gen_range(width as u32..=shape.max_denominator.max(width as u32));
    // composition of den into `width` positive parts
    let mut cuts = BTreeSet::new();
    while cuts.len() + 1 < width {
        cuts.insert(rng.gen_range(1..den));
    }
    let mut bounds: Vec<u32> = Vec::with_capacity(width + 1);
    bounds.push(0);
    bounds.extend(cuts);
    bounds.push(den);
    let mut targets: Vec<usize> = targets.into_iter().collect();
    // shuffle branch order so that stored order is not always ascending
    for i in (1..targets.len()).rev() {
        let j = rng.gen_range(0..=i);
        targets.swap(i, j);
    }
    let branches = targets
        .into_iter()
        .zip(bounds.windows(2))
        .map(|(t, w)| Branch::new(t, Rational::new((w[1] - w[0]).into(), den.into())))
        .collect();
    Transition::new(branches)
}
