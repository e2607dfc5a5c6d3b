//! Interval iteration solvers.
//!
//! Four variants share one sweep engine:
//!
//! | variant  | sweep order                         | rounding             |
//! |----------|-------------------------------------|----------------------|
//! | `Iii`    | per state: lower then upper         | nearest              |
//! | `Sii`    | all lower values, then all upper    | nearest              |
//! | `SrIii`  | per state: lower then upper         | lower down, upper up |
//! | `SrSii`  | all lower values, then all upper    | lower down, upper up |
//!
//! Updates are in place (Gauss-Seidel) in ascending state order. Because a
//! lower update only reads lower values and an upper update only reads
//! upper values, the interleaved and sequential orders compute the same
//! vectors bit for bit; they differ only in how often the rounding mode
//! has to change.

use std::time::{Duration, Instant};

use num_traits::Signed;
use thiserror::Error;

use crate::graph::{collapse_mecs, map_states, QualitativeSets};
use crate::model::{Mdp, Opt, Rational, StateSet};
use crate::rounding::{
    rational_to_float, Arith, Direction, HardwareOps, NearestOps, NudgeOps, Precision, Real,
    RoundingControl, ModeScope, Strategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Iii,
    Sii,
    SrIii,
    SrSii,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Iii, Variant::Sii, Variant::SrIii, Variant::SrSii];

    pub fn is_safe(self) -> bool {
        matches!(self, Variant::SrIii | Variant::SrSii)
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Variant::Sii | Variant::SrSii)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Iii => "iii",
            Variant::Sii => "sii",
            Variant::SrIii => "sr-iii",
            Variant::SrSii => "sr-sii",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub variant: Variant,
    /// Relative convergence threshold.
    pub epsilon: Rational,
    pub precision: Precision,
    pub strategy: Strategy,
    pub max_sweeps: u64,
    /// Require convergence at every state instead of only the initial one.
    pub check_all_states: bool,
    /// Give up (with [`Termination::Timeout`]) once this instant has passed.
    pub deadline: Option<Instant>,
}

pub const DEFAULT_MAX_SWEEPS: u64 = 100_000_000;

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SrSii,
            epsilon: Rational::new(1.into(), 1_000_000.into()),
            precision: Precision::Double,
            strategy: Strategy::HardwareMode,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            check_all_states: false,
            deadline: None,
        }
    }
}

impl SolveConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

/// Lower and upper bound per state, widened exactly to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVectors {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Whether the last sweep changed any stored value.
    pub changed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Converged,
    /// A full sweep left every value unchanged before the threshold was met.
    Stalled,
    SweepLimit,
    Timeout,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::Stalled => "stalled",
            Termination::SweepLimit => "sweep-limit",
            Termination::Timeout => "TO",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Lower bound at the initial state.
    pub lower: f64,
    /// Upper bound at the initial state.
    pub upper: f64,
    pub sweeps: u64,
    pub termination: Termination,
    pub mode_switches: u64,
    /// Strategy actually used (hardware falls back to nudging when the
    /// target has no rounding-mode control).
    pub strategy: Strategy,
    pub strategy_fallback: bool,
    /// Number of states updated per sweep.
    pub iterated_states: usize,
    /// Bounds for every state of the input model.
    pub full_vectors: ValueVectors,
    /// Wall time of the iteration phase only.
    pub iteration_time: Duration,
}

impl SolveResult {
    pub fn stalled(&self) -> bool {
        self.termination == Termination::Stalled
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolveError {
    #[error("goal set is empty")]
    EmptyGoal,
    #[error("goal state {0} out of range")]
    GoalOutOfRange(usize),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(Rational),
    #[error("max_sweeps must be at least 1")]
    MaxSweeps,
    #[error("start vectors have {got} entries, model has {expected} states")]
    StartShape { expected: usize, got: usize },
}

/// Initial bounds: lower is one on `s1` and zero elsewhere, upper is zero
/// on `s0` and one elsewhere.
pub fn initialize(m: &Mdp, q: &QualitativeSets) -> ValueVectors {
    let n = m.state_count();
    let lower = (0..n)
        .map(|s| if q.s1.contains(&s) { 1.0 } else { 0.0 })
        .collect();
    let upper = (0..n)
        .map(|s| if q.s0.contains(&s) { 0.0 } else { 1.0 })
        .collect();
    ValueVectors {
        lower,
        upper,
        changed: false,
    }
}

/// One Bellman update at `s` with every branch probability converted and
/// every operation rounded in direction `dir`.
///
/// This is the reference form of the update used inside the solvers.
pub fn bellman<F: Real>(
    m: &Mdp,
    s: usize,
    v: &[F],
    opt: Opt,
    dir: Direction,
    ctl: &RoundingControl,
) -> F {
    let mut best: Option<F> = None;
    for t in m.transitions(s) {
        let mut acc: Option<F> = None;
        for b in &t.branches {
            let p: F = rational_to_float(&b.prob, dir);
            let term = ctl.mul(p, v[b.target], dir);
            acc = Some(match acc {
                None => term,
                Some(a) => ctl.add(a, term, dir),
            });
        }
        let acc = acc.expect("transitions have at least one branch");
        best = Some(match best {
            None => acc,
            Some(b) => pick(opt, b, acc),
        });
    }
    best.expect("states have at least one transition")
}

#[inline(always)]
fn pick<F: Real>(opt: Opt, current: F, candidate: F) -> F {
    match opt {
        Opt::Max if candidate > current => candidate,
        Opt::Min if candidate < current => candidate,
        _ => current,
    }
}

/// Relative-width stopping test `(u - l) / l <= epsilon` with both
/// operations rounded in `dir`. A zero-width interval is converged; a
/// positive width over `l = 0` is not.
pub fn check_convergence<F: Real>(
    l: F,
    u: F,
    epsilon: F,
    dir: Direction,
    ctl: &RoundingControl,
) -> bool {
    if l.is_nan() || u.is_nan() {
        return false;
    }
    let width = ctl.sub(u, l, dir);
    if width == F::ZERO {
        return true;
    }
    let rel = ctl.div(width, l, dir);
    !rel.is_nan() && rel <= epsilon
}

#[inline(always)]
fn converged_with<A: Arith, F: Real>(l: F, u: F, epsilon: F) -> bool {
    if l.is_nan() || u.is_nan() {
        return false;
    }
    let width = A::sub(u, l);
    if width == F::ZERO {
        return true;
    }
    let rel = A::div(width, l);
    !rel.is_nan() && rel <= epsilon
}

/// Model compiled for iteration: only the states outside `S0 ∪ S1`, with
/// branch probabilities pre-rounded for each side.
struct Compiled<F> {
    states: Vec<usize>,
    transition_start: Vec<usize>,
    branch_start: Vec<usize>,
    target: Vec<usize>,
    prob_lower: Vec<F>,
    prob_upper: Vec<F>,
}

impl<F: Real> Compiled<F> {
    fn new(m: &Mdp, q: &QualitativeSets, safe: bool) -> Self {
        let (lo_dir, hi_dir) = if safe {
            (Direction::Down, Direction::Up)
        } else {
            (Direction::Nearest, Direction::Nearest)
        };
        let mut c = Compiled {
            states: Vec::new(),
            transition_start: vec![0],
            branch_start: vec![0],
            target: Vec::new(),
            prob_lower: Vec::new(),
            prob_upper: Vec::new(),
        };
        for s in (0..m.state_count()).filter(|&s| q.is_unknown(s)) {
            c.states.push(s);
            for t in m.transitions(s) {
                for b in &t.branches {
                    c.target.push(b.target);
                    c.prob_lower.push(rational_to_float(&b.prob, lo_dir));
                    c.prob_upper.push(rational_to_float(&b.prob, hi_dir));
                }
                c.branch_start.push(c.target.len());
            }
            c.transition_start.push(c.branch_start.len() - 1);
        }
        c
    }

    #[inline(always)]
    fn update<A: Arith>(&self, i: usize, v: &[F], probs: &[F], opt: Opt) -> F {
        let mut best: Option<F> = None;
        for t in self.transition_start[i]..self.transition_start[i + 1] {
            let (b0, b1) = (self.branch_start[t], self.branch_start[t + 1]);
            let mut acc = A::mul(probs[b0], v[self.target[b0]]);
            for b in b0 + 1..b1 {
                acc = A::add(acc, A::mul(probs[b], v[self.target[b]]));
            }
            best = Some(match best {
                None => acc,
                Some(cur) => pick(opt, cur, acc),
            });
        }
        let r = best.expect("iterated states have transitions");
        // bounds never leave [0, 1]; clamping is sound since p(s) <= 1
        if r > F::ONE {
            F::ONE
        } else {
            r
        }
    }

    /// Returns whether the stored value changed.
    #[inline(always)]
    fn step<A: Arith>(&self, i: usize, v: &mut [F], probs: &[F], opt: Opt) -> bool {
        let s = self.states[i];
        let new = self.update::<A>(i, v, probs, opt);
        let changed = new.to_bits_u64() != v[s].to_bits_u64();
        v[s] = new;
        changed
    }
}

/// How a rounding strategy realises the lower and upper directions.
trait Env {
    type Lower: Arith;
    type Upper: Arith;
    fn enter_lower(&mut self);
    fn enter_upper(&mut self);
}

struct NearestEnv;

impl Env for NearestEnv {
    type Lower = NearestOps;
    type Upper = NearestOps;
    fn enter_lower(&mut self) {}
    fn enter_upper(&mut self) {}
}

struct NudgeEnv;

impl Env for NudgeEnv {
    type Lower = NudgeOps<false>;
    type Upper = NudgeOps<true>;
    fn enter_lower(&mut self) {}
    fn enter_upper(&mut self) {}
}

struct HardwareEnv<'a> {
    scope: ModeScope<'a>,
}

impl Env for HardwareEnv<'_> {
    type Lower = HardwareOps<false>;
    type Upper = HardwareOps<true>;
    fn enter_lower(&mut self) {
        self.scope.set(Direction::Down);
    }
    fn enter_upper(&mut self) {
        if self.scope.current() != Some(Direction::Up) {
            self.scope.set(Direction::Up);
        }
    }
}

/// Called after each sweep with the sweep number and the lower and upper
/// vectors of the iterated (possibly collapsed) model. Runs while directed
/// rounding may be active: only compare or copy values in here.
pub type SweepObserver<'a> = &'a mut dyn FnMut(u64, &[f64], &[f64]);

struct Prepared {
    model: Mdp,
    map: Vec<usize>,
    qual: QualitativeSets,
    opt: Opt,
    original_states: usize,
}

fn prepare(m: &Mdp, goal: &StateSet, opt: Opt) -> Result<Prepared, SolveError> {
    if goal.is_empty() {
        return Err(SolveError::EmptyGoal);
    }
    if let Some(&g) = goal.iter().find(|&&g| g >= m.state_count()) {
        return Err(SolveError::GoalOutOfRange(g));
    }
    let absorbing = m.with_absorbing(goal);
    let (model, map, goal) = match opt {
        Opt::Max => {
            let (q, map) = collapse_mecs(&absorbing, goal);
            let g = map_states(goal, &map);
            (q, map, g)
        }
        Opt::Min => (absorbing, (0..m.state_count()).collect(), goal.clone()),
    };
    let qual = QualitativeSets::compute(&model, &goal, opt);
    Ok(Prepared {
        model,
        map,
        qual,
        opt,
        original_states: m.state_count(),
    })
}

/// Computes an interval for the `opt` probability of eventually reaching
/// `goal` from the initial state.
///
/// For the safely rounding variants the exact probability always lies in
/// `[lower, upper]`, whatever the termination reason.
pub fn solve(m: &Mdp, goal: &StateSet, opt: Opt, cfg: &SolveConfig) -> Result<SolveResult, SolveError> {
    solve_observed(m, goal, opt, cfg, None, None)
}

/// Like [`solve`], optionally resuming from previously computed vectors
/// and reporting every sweep to `observer`.
pub fn solve_observed(
    m: &Mdp,
    goal: &StateSet,
    opt: Opt,
    cfg: &SolveConfig,
    start: Option<&ValueVectors>,
    observer: Option<SweepObserver<'_>>,
) -> Result<SolveResult, SolveError> {
    if !cfg.epsilon.is_positive() {
        return Err(SolveError::Epsilon(cfg.epsilon.clone()));
    }
    if cfg.max_sweeps == 0 {
        return Err(SolveError::MaxSweeps);
    }
    if let Some(v) = start {
        if v.lower.len() != m.state_count() || v.upper.len() != m.state_count() {
            return Err(SolveError::StartShape {
                expected: m.state_count(),
                got: v.lower.len().min(v.upper.len()),
            });
        }
    }
    let p = prepare(m, goal, opt)?;
    Ok(match cfg.precision {
        Precision::Single => run_typed::<f32>(&p, cfg, start, observer),
        Precision::Double => run_typed::<f64>(&p, cfg, start, observer),
    })
}

fn run_typed<F: Real>(
    p: &Prepared,
    cfg: &SolveConfig,
    start: Option<&ValueVectors>,
    observer: Option<SweepObserver<'_>>,
) -> SolveResult {
    let safe = cfg.variant.is_safe();
    let compiled = Compiled::<F>::new(&p.model, &p.qual, safe);
    let init = initialize(&p.model, &p.qual);
    let n = p.model.state_count();
    let mut lower: Vec<F> = init.lower.iter().map(|&x| F::from_f64_exact(x)).collect();
    let mut upper: Vec<F> = init.upper.iter().map(|&x| F::from_f64_exact(x)).collect();
    if let Some(v) = start {
        // every member of a collapsed state carries the same value
        let mut seen = vec![false; n];
        for (s, &q) in p.map.iter().enumerate() {
            if !seen[q] && p.qual.is_unknown(q) {
                lower[q] = F::from_f64_exact(v.lower[s]);
                upper[q] = F::from_f64_exact(v.upper[s]);
            }
            seen[q] = true;
        }
    }
    let eps_dir = if safe { Direction::Down } else { Direction::Nearest };
    let epsilon: F = rational_to_float(&cfg.epsilon, eps_dir);
    let check: Vec<usize> = if cfg.check_all_states {
        compiled.states.clone()
    } else {
        vec![p.model.initial()]
    };

    let ctl = RoundingControl::new(cfg.strategy);
    let mut engine = Engine {
        compiled: &compiled,
        lower: &mut lower,
        upper: &mut upper,
        opt: p.opt,
        epsilon,
        check: &check,
        sequential: cfg.variant.is_sequential(),
        max_sweeps: cfg.max_sweeps,
        deadline: cfg.deadline,
        observer,
    };
    let started = Instant::now();
    let (sweeps, termination, changed) = match (safe, ctl.strategy()) {
        (false, _) => engine.run(&mut NearestEnv),
        (true, Strategy::Nudge) => engine.run(&mut NudgeEnv),
        (true, Strategy::HardwareMode) => {
            let mut env = HardwareEnv { scope: ctl.scope() };
            engine.run(&mut env)
        }
    };
    let iteration_time = started.elapsed();

    let full_vectors = ValueVectors {
        lower: p.map.iter().map(|&q| lower[q].to_f64()).collect(),
        upper: p.map.iter().map(|&q| upper[q].to_f64()).collect(),
        changed,
    };
    debug_assert_eq!(full_vectors.lower.len(), p.original_states);
    let init = p.model.initial();
    SolveResult {
        lower: lower[init].to_f64(),
        upper: upper[init].to_f64(),
        sweeps,
        termination,
        mode_switches: ctl.mode_switches(),
        strategy: ctl.strategy(),
        strategy_fallback: ctl.fell_back(),
        iterated_states: compiled.states.len(),
        full_vectors,
        iteration_time,
    }
}

struct Engine<'a, 'o, F> {
    compiled: &'a Compiled<F>,
    lower: &'a mut [F],
    upper: &'a mut [F],
    opt: Opt,
    epsilon: F,
    check: &'a [usize],
    sequential: bool,
    max_sweeps: u64,
    deadline: Option<Instant>,
    observer: Option<SweepObserver<'o>>,
}

impl<F: Real> Engine<'_, '_, F> {
    fn converged<A: Arith>(&self) -> bool {
        self.check
            .iter()
            .all(|&s| converged_with::<A, F>(self.lower[s], self.upper[s], self.epsilon))
    }

    fn sweep<E: Env>(&mut self, env: &mut E) -> bool {
        let c = self.compiled;
        let mut changed = false;
        if self.sequential {
            env.enter_lower();
            for i in 0..c.states.len() {
                changed |= c.step::<E::Lower>(i, self.lower, &c.prob_lower, self.opt);
            }
            env.enter_upper();
            for i in 0..c.states.len() {
                changed |= c.step::<E::Upper>(i, self.upper, &c.prob_upper, self.opt);
            }
        } else {
            for i in 0..c.states.len() {
                env.enter_lower();
                changed |= c.step::<E::Lower>(i, self.lower, &c.prob_lower, self.opt);
                env.enter_upper();
                changed |= c.step::<E::Upper>(i, self.upper, &c.prob_upper, self.opt);
            }
        }
        changed
    }

    fn observe(&mut self, sweep: u64) {
        if let Some(obs) = self.observer.as_mut() {
            let lo: Vec<f64> = self.lower.iter().map(|x| x.to_f64()).collect();
            let hi: Vec<f64> = self.upper.iter().map(|x| x.to_f64()).collect();
            obs(sweep, &lo, &hi);
        }
    }

    /// Returns (sweeps, termination, whether the last sweep changed anything).
    fn run<E: Env>(&mut self, env: &mut E) -> (u64, Termination, bool) {
        env.enter_upper();
        if self.converged::<E::Upper>() {
            return (0, Termination::Converged, false);
        }
        let mut sweeps = 0;
        loop {
            if sweeps >= self.max_sweeps {
                return (sweeps, Termination::SweepLimit, true);
            }
            if self.deadline.is_some_and(|d| Instant::now() >= d) {
                return (sweeps, Termination::Timeout, true);
            }
            let changed = self.sweep(env);
            sweeps += 1;
            self.observe(sweeps);
            env.enter_upper();
            if self.converged::<E::Upper>() {
                return (sweeps, Termination::Converged, changed);
            }
            if !changed {
                return (sweeps, Termination::Stalled, false);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_counterexample, Branch, Transition, PLUS_LABEL};
    use std::collections::BTreeMap;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn half_half() -> (Mdp, StateSet) {
        let ts = vec![
            vec![Transition::new(vec![
                Branch::new(1, q(1, 2)),
                Branch::new(2, q(1, 2)),
            ])],
            vec![Transition::dirac(1)],
            vec![Transition::dirac(2)],
        ];
        (
            Mdp::new(3, 0, ts, BTreeMap::new()).unwrap(),
            StateSet::from([1]),
        )
    }

    #[test]
    fn half_half_all_variants_one_sweep() {
        let (m, goal) = half_half();
        for variant in Variant::ALL {
            for strategy in [Strategy::HardwareMode, Strategy::Nudge] {
                let cfg = SolveConfig {
                    strategy,
                    ..SolveConfig::new(variant)
                };
                let r = solve(&m, &goal, Opt::Max, &cfg).unwrap();
                assert_eq!(r.sweeps, 1, "{variant} {strategy}");
                assert!(r.converged());
                if strategy == Strategy::HardwareMode || !variant.is_safe() {
                    assert_eq!((r.lower, r.upper), (0.5, 0.5), "{variant} {strategy}");
                } else {
                    assert!(r.lower <= 0.5 && 0.5 <= r.upper);
                }
            }
        }
    }

    #[test]
    fn initial_vectors_on_counterexample() {
        let m = build_counterexample(1, &q(1, 10)).unwrap();
        let goal = m.label(PLUS_LABEL).unwrap().clone();
        let qs = QualitativeSets::compute(&m, &goal, Opt::Max);
        let v = initialize(&m, &qs);
        assert_eq!(v.lower, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v.upper, vec![1.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn bellman_single_precision_tenth() {
        let ts = vec![
            vec![Transition::new(vec![
                Branch::new(1, q(1, 10)),
                Branch::new(2, q(9, 10)),
            ])],
            vec![Transition::dirac(1)],
            vec![Transition::dirac(2)],
        ];
        let m = Mdp::new(3, 0, ts, BTreeMap::new()).unwrap();
        let ctl = RoundingControl::new(Strategy::HardwareMode);
        let v = [0.0f32, 1.0, 0.0];
        let x = bellman(&m, 0, &v, Opt::Max, Direction::Nearest, &ctl);
        assert_eq!(x as f64, 13421773.0 * 2f64.powi(-27));
    }

    #[test]
    fn convergence_edge_cases() {
        let ctl = RoundingControl::new(Strategy::HardwareMode);
        let eps = 1e-6;
        assert!(check_convergence(0.0, 0.0, eps, Direction::Up, &ctl));
        assert!(!check_convergence(0.0, 1.0, f64::MAX, Direction::Up, &ctl));
        assert!(check_convergence(0.5, 0.5f64.next_up(), eps, Direction::Up, &ctl));
        assert!(!check_convergence(0.5, 0.6, eps, Direction::Nearest, &ctl));
    }

    #[test]
    fn rejects_bad_config() {
        let (m, goal) = half_half();
        let cfg = SolveConfig {
            epsilon: q(0, 1),
            ..SolveConfig::default()
        };
        assert!(matches!(solve(&m, &goal, Opt::Max, &cfg), Err(SolveError::Epsilon(_))));
        let cfg = SolveConfig {
            max_sweeps: 0,
            ..SolveConfig::default()
        };
        assert_eq!(solve(&m, &goal, Opt::Max, &cfg).unwrap_err(), SolveError::MaxSweeps);
        assert_eq!(
            solve(&m, &StateSet::new(), Opt::Max, &SolveConfig::default()).unwrap_err(),
            SolveError::EmptyGoal
        );
    }

    #[test]
    fn sweep_limit_is_flagged() {
        // slow geometric convergence: stay with 9/10, goal 1/20, sink 1/20
        let ts = vec![
            vec![Transition::new(vec![
                Branch::new(0, q(9, 10)),
                Branch::new(1, q(1, 20)),
                Branch::new(2, q(1, 20)),
            ])],
            vec![Transition::dirac(1)],
            vec![Transition::dirac(2)],
        ];
        let m = Mdp::new(3, 0, ts, BTreeMap::new()).unwrap();
        let cfg = SolveConfig {
            max_sweeps: 3,
            ..SolveConfig::default()
        };
        let r = solve(&m, &StateSet::from([1]), Opt::Max, &cfg).unwrap();
        assert_eq!(r.termination, Termination::SweepLimit);
        assert_eq!(r.sweeps, 3);
        assert!(r.lower <= 0.5 && 0.5 <= r.upper);
    }
}
