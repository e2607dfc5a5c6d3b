//! Directed floating-point arithmetic.
//!
//! Two interchangeable strategies give each basic operation a rounding
//! direction:
//!
//! * [`Strategy::HardwareMode`] switches the SSE rounding-control bits of
//!   MXCSR and performs every operation through inline assembly, so the
//!   instructions observe the mode that is current when they execute.
//!   LLVM assumes round-to-nearest for ordinary float code and may fold or
//!   move it; the `asm!` blocks are volatile and are never merged or
//!   reordered across a mode switch.
//! * [`Strategy::Nudge`] computes in round-to-nearest and then steps one
//!   ULP in the requested direction. It needs no floating-point environment
//!   access and costs up to one extra ULP per operation.
//!
//! Conversion of exact rationals into floats ([`rational_to_float`]) is done
//! in integer arithmetic and is correctly rounded in every direction
//! regardless of strategy.

use std::cell::Cell;
use std::fmt;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::model::Rational;

/// Rounding direction of a single operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Toward negative infinity.
    Down,
    /// Toward positive infinity.
    Up,
    /// To nearest, ties to even.
    Nearest,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Down => Direction::Up,
            Direction::Up => Direction::Down,
            Direction::Nearest => Direction::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// IEEE 754 binary32: 24-bit significand, 8-bit exponent.
    Single,
    /// IEEE 754 binary64: 53-bit significand, 11-bit exponent.
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "single",
            Precision::Double => "double",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    HardwareMode,
    Nudge,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::HardwareMode => "hardware",
            Strategy::Nudge => "nudge",
        })
    }
}

/// Whether this target can switch the hardware rounding mode.
pub const fn hardware_rounding_available() -> bool {
    cfg!(target_arch = "x86_64")
}

#[cfg(target_arch = "x86_64")]
mod hw {
    use super::Direction;
    use std::arch::asm;

    const RC_MASK: u32 = 0b11 << 13;

    pub fn read_csr() -> u32 {
        let mut csr: u32 = 0;
        // SAFETY: stmxcsr stores the 32-bit control word to the given address.
        unsafe {
            asm!("stmxcsr [{}]", in(reg) &mut csr as *mut u32, options(nostack, preserves_flags));
        }
        csr
    }

    pub fn write_csr(csr: u32) {
        // SAFETY: only the rounding-control field differs from a value read
        // back from the register, so no exception is unmasked.
        unsafe {
            asm!("ldmxcsr [{}]", in(reg) &csr as *const u32, options(nostack, preserves_flags));
        }
    }

    pub fn with_rc(csr: u32, dir: Direction) -> u32 {
        let rc = match dir {
            Direction::Nearest => 0b00,
            Direction::Down => 0b01,
            Direction::Up => 0b10,
        };
        (csr & !RC_MASK) | (rc << 13)
    }

    pub fn direction_of(csr: u32) -> Option<Direction> {
        match (csr & RC_MASK) >> 13 {
            0b00 => Some(Direction::Nearest),
            0b01 => Some(Direction::Down),
            0b10 => Some(Direction::Up),
            _ => None,
        }
    }

    macro_rules! binop {
        ($name:ident, $ty:ty, $insn:literal) => {
            #[inline(always)]
            pub fn $name(a: $ty, b: $ty) -> $ty {
                let mut r = a;
                // SAFETY: a register-only scalar SSE instruction.
                unsafe {
                    asm!(concat!($insn, " {r}, {b}"), r = inout(xmm_reg) r, b = in(xmm_reg) b,
                         options(nomem, nostack, preserves_flags));
                }
                r
            }
        };
    }

    binop!(add_f64, f64, "addsd");
    binop!(sub_f64, f64, "subsd");
    binop!(mul_f64, f64, "mulsd");
    binop!(div_f64, f64, "divsd");
    binop!(add_f32, f32, "addss");
    binop!(sub_f32, f32, "subss");
    binop!(mul_f32, f32, "mulss");
    binop!(div_f32, f32, "divss");
}

#[cfg(not(target_arch = "x86_64"))]
mod hw {
    use super::Direction;

    pub fn read_csr() -> u32 {
        0
    }
    pub fn write_csr(_: u32) {}
    pub fn with_rc(csr: u32, _: Direction) -> u32 {
        csr
    }
    pub fn direction_of(_: u32) -> Option<Direction> {
        Some(Direction::Nearest)
    }
    pub fn add_f64(a: f64, b: f64) -> f64 {
        a + b
    }
    pub fn sub_f64(a: f64, b: f64) -> f64 {
        a - b
    }
    pub fn mul_f64(a: f64, b: f64) -> f64 {
        a * b
    }
    pub fn div_f64(a: f64, b: f64) -> f64 {
        a / b
    }
    pub fn add_f32(a: f32, b: f32) -> f32 {
        a + b
    }
    pub fn sub_f32(a: f32, b: f32) -> f32 {
        a - b
    }
    pub fn mul_f32(a: f32, b: f32) -> f32 {
        a * b
    }
    pub fn div_f32(a: f32, b: f32) -> f32 {
        a / b
    }
}

/// Current hardware rounding direction of the calling thread.
pub fn current_hardware_direction() -> Option<Direction> {
    hw::direction_of(hw::read_csr())
}

/// A binary floating-point format the solvers can run in.
pub trait Real:
    Copy + PartialEq + PartialOrd + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const PRECISION: Precision;
    /// Significand width including the hidden bit.
    const SIGNIFICAND_BITS: u32;
    /// Exponent of the least significant bit of the smallest subnormal.
    const MIN_LSB_EXP: i32;

    fn native_add(a: Self, b: Self) -> Self;
    fn native_sub(a: Self, b: Self) -> Self;
    fn native_mul(a: Self, b: Self) -> Self;
    fn native_div(a: Self, b: Self) -> Self;

    /// Operations that round according to the current hardware mode.
    fn hw_add(a: Self, b: Self) -> Self;
    fn hw_sub(a: Self, b: Self) -> Self;
    fn hw_mul(a: Self, b: Self) -> Self;
    fn hw_div(a: Self, b: Self) -> Self;

    fn next_up(self) -> Self;
    fn next_down(self) -> Self;
    fn is_nan(self) -> bool;
    fn is_finite(self) -> bool;
    fn is_sign_negative(self) -> bool;
    fn max_finite() -> Self;

    /// Exact widening to `f64`.
    fn to_f64(self) -> f64;
    /// Narrowing that must only be used on values representable in `Self`.
    fn from_f64_exact(x: f64) -> Self;
    /// Raw bits, zero-extended.
    fn to_bits_u64(self) -> u64;
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: Precision = Precision::Double;
    const SIGNIFICAND_BITS: u32 = 53;
    const MIN_LSB_EXP: i32 = -1074;

    #[inline(always)]
    fn native_add(a: Self, b: Self) -> Self {
        a + b
    }
    #[inline(always)]
    fn native_sub(a: Self, b: Self) -> Self {
        a - b
    }
    #[inline(always)]
    fn native_mul(a: Self, b: Self) -> Self {
        a * b
    }
    #[inline(always)]
    fn native_div(a: Self, b: Self) -> Self {
        a / b
    }
    #[inline(always)]
    fn hw_add(a: Self, b: Self) -> Self {
        hw::add_f64(a, b)
    }
    #[inline(always)]
    fn hw_sub(a: Self, b: Self) -> Self {
        hw::sub_f64(a, b)
    }
    #[inline(always)]
    fn hw_mul(a: Self, b: Self) -> Self {
        hw::mul_f64(a, b)
    }
    #[inline(always)]
    fn hw_div(a: Self, b: Self) -> Self {
        hw::div_f64(a, b)
    }
    fn next_up(self) -> Self {
        f64::next_up(self)
    }
    fn next_down(self) -> Self {
        f64::next_down(self)
    }
    fn is_nan(self) -> bool {
        f64::is_nan(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn is_sign_negative(self) -> bool {
        f64::is_sign_negative(self)
    }
    fn max_finite() -> Self {
        f64::MAX
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64_exact(x: f64) -> Self {
        x
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const PRECISION: Precision = Precision::Single;
    const SIGNIFICAND_BITS: u32 = 24;
    const MIN_LSB_EXP: i32 = -149;

    #[inline(always)]
    fn native_add(a: Self, b: Self) -> Self {
        a + b
    }
    #[inline(always)]
    fn native_sub(a: Self, b: Self) -> Self {
        a - b
    }
    #[inline(always)]
    fn native_mul(a: Self, b: Self) -> Self {
        a * b
    }
    #[inline(always)]
    fn native_div(a: Self, b: Self) -> Self {
        a / b
    }
    #[inline(always)]
    fn hw_add(a: Self, b: Self) -> Self {
        hw::add_f32(a, b)
    }
    #[inline(always)]
    fn hw_sub(a: Self, b: Self) -> Self {
        hw::sub_f32(a, b)
    }
    #[inline(always)]
    fn hw_mul(a: Self, b: Self) -> Self {
        hw::mul_f32(a, b)
    }
    #[inline(always)]
    fn hw_div(a: Self, b: Self) -> Self {
        hw::div_f32(a, b)
    }
    fn next_up(self) -> Self {
        f32::next_up(self)
    }
    fn next_down(self) -> Self {
        f32::next_down(self)
    }
    fn is_nan(self) -> bool {
        f32::is_nan(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn is_sign_negative(self) -> bool {
        f32::is_sign_negative(self)
    }
    fn max_finite() -> Self {
        f32::MAX
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64_exact(x: f64) -> Self {
        x as f32
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
}

/// A family of rounded basic operations with a fixed direction.
pub trait Arith {
    const DIRECTION: Direction;
    fn add<F: Real>(a: F, b: F) -> F;
    fn sub<F: Real>(a: F, b: F) -> F;
    fn mul<F: Real>(a: F, b: F) -> F;
    fn div<F: Real>(a: F, b: F) -> F;
}

/// Plain round-to-nearest arithmetic.
pub struct NearestOps;

impl Arith for NearestOps {
    const DIRECTION: Direction = Direction::Nearest;
    #[inline(always)]
    fn add<F: Real>(a: F, b: F) -> F {
        F::native_add(a, b)
    }
    #[inline(always)]
    fn sub<F: Real>(a: F, b: F) -> F {
        F::native_sub(a, b)
    }
    #[inline(always)]
    fn mul<F: Real>(a: F, b: F) -> F {
        F::native_mul(a, b)
    }
    #[inline(always)]
    fn div<F: Real>(a: F, b: F) -> F {
        F::native_div(a, b)
    }
}

/// Operations rounded by the hardware in whatever mode is current. The
/// type parameter records the direction the caller has set.
pub struct HardwareOps<const UP: bool>;

impl<const UP: bool> Arith for HardwareOps<UP> {
    const DIRECTION: Direction = if UP { Direction::Up } else { Direction::Down };
    #[inline(always)]
    fn add<F: Real>(a: F, b: F) -> F {
        F::hw_add(a, b)
    }
    #[inline(always)]
    fn sub<F: Real>(a: F, b: F) -> F {
        F::hw_sub(a, b)
    }
    #[inline(always)]
    fn mul<F: Real>(a: F, b: F) -> F {
        F::hw_mul(a, b)
    }
    #[inline(always)]
    fn div<F: Real>(a: F, b: F) -> F {
        F::hw_div(a, b)
    }
}

/// Round-to-nearest followed by a one-ULP step in the chosen direction.
pub struct NudgeOps<const UP: bool>;

impl<const UP: bool> NudgeOps<UP> {
    #[inline(always)]
    fn step<F: Real>(r: F) -> F {
        if UP {
            r.next_up()
        } else {
            r.next_down()
        }
    }

    /// Nudges a product or quotient, using the known sign of the exact
    /// result when the nearest result underflowed to zero.
    #[inline(always)]
    fn nudge_scaled<F: Real>(r: F, a: F, b: F) -> F {
        if r.is_nan() || !a.is_finite() || !b.is_finite() {
            return r;
        }
        if r == F::ZERO {
            if a == F::ZERO {
                return r;
            }
            let negative = a.is_sign_negative() != b.is_sign_negative();
            return match (UP, negative) {
                (false, false) | (true, true) => F::ZERO,
                _ => Self::step(F::ZERO),
            };
        }
        Self::step(r)
    }

    #[inline(always)]
    fn nudge_sum<F: Real>(r: F, a: F, b: F) -> F {
        // a zero sum of finite operands is exact
        if r.is_nan() || r == F::ZERO || !a.is_finite() || !b.is_finite() {
            return r;
        }
        Self::step(r)
    }
}

impl<const UP: bool> Arith for NudgeOps<UP> {
    const DIRECTION: Direction = if UP { Direction::Up } else { Direction::Down };
    #[inline(always)]
    fn add<F: Real>(a: F, b: F) -> F {
        Self::nudge_sum(F::native_add(a, b), a, b)
    }
    #[inline(always)]
    fn sub<F: Real>(a: F, b: F) -> F {
        Self::nudge_sum(F::native_sub(a, b), a, b)
    }
    #[inline(always)]
    fn mul<F: Real>(a: F, b: F) -> F {
        Self::nudge_scaled(F::native_mul(a, b), a, b)
    }
    #[inline(always)]
    fn div<F: Real>(a: F, b: F) -> F {
        let r = F::native_div(a, b);
        if b == F::ZERO {
            // x/0 is +-inf, 0/0 is NaN; both are passed through
            return r;
        }
        Self::nudge_scaled(r, a, b)
    }
}

/// Per-solve rounding state: the effective strategy and the number of
/// hardware rounding-mode changes performed so far.
#[derive(Debug)]
pub struct RoundingControl {
    requested: Strategy,
    strategy: Strategy,
    switches: Cell<u64>,
}

impl RoundingControl {
    /// Falls back to [`Strategy::Nudge`] when hardware mode control is
    /// unavailable on this target.
    pub fn new(requested: Strategy) -> Self {
        let strategy = match requested {
            Strategy::HardwareMode if !hardware_rounding_available() => Strategy::Nudge,
            s => s,
        };
        Self {
            requested,
            strategy,
            switches: Cell::new(0),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn requested(&self) -> Strategy {
        self.requested
    }

    pub fn fell_back(&self) -> bool {
        self.requested != self.strategy
    }

    pub fn mode_switches(&self) -> u64 {
        self.switches.get()
    }

    /// Opens a scope in which the rounding direction may be changed any
    /// number of times. The mode in force on entry is restored when the
    /// scope is dropped, including during unwinding.
    pub fn scope(&self) -> ModeScope<'_> {
        ModeScope {
            ctl: self,
            saved: hw::read_csr(),
            dirty: false,
            current: None,
        }
    }

    /// Runs `body` with the hardware rounding direction set to `dir`.
    /// Counts two mode switches (set and restore) under
    /// [`Strategy::HardwareMode`] and none under [`Strategy::Nudge`].
    pub fn with_direction<R>(&self, dir: Direction, body: impl FnOnce() -> R) -> R {
        let mut scope = self.scope();
        scope.set(dir);
        body()
    }

    pub fn add<F: Real>(&self, a: F, b: F, dir: Direction) -> F {
        self.dispatch(dir, a, b, F::hw_add, NudgeOps::<false>::add, NudgeOps::<true>::add, F::native_add)
    }

    pub fn sub<F: Real>(&self, a: F, b: F, dir: Direction) -> F {
        self.dispatch(dir, a, b, F::hw_sub, NudgeOps::<false>::sub, NudgeOps::<true>::sub, F::native_sub)
    }

    pub fn mul<F: Real>(&self, a: F, b: F, dir: Direction) -> F {
        self.dispatch(dir, a, b, F::hw_mul, NudgeOps::<false>::mul, NudgeOps::<true>::mul, F::native_mul)
    }

    pub fn div<F: Real>(&self, a: F, b: F, dir: Direction) -> F {
        self.dispatch(dir, a, b, F::hw_div, NudgeOps::<false>::div, NudgeOps::<true>::div, F::native_div)
    }

    #[allow(clippy::too_many_arguments)]
    fn dispatch<F: Real>(
        &self,
        dir: Direction,
        a: F,
        b: F,
        hw_op: fn(F, F) -> F,
        down: fn(F, F) -> F,
        up: fn(F, F) -> F,
        nearest: fn(F, F) -> F,
    ) -> F {
        match (self.strategy, dir) {
            (_, Direction::Nearest) => nearest(a, b),
            (Strategy::HardwareMode, d) => self.with_direction(d, || hw_op(a, b)),
            (Strategy::Nudge, Direction::Down) => down(a, b),
            (Strategy::Nudge, Direction::Up) => up(a, b),
        }
    }
}

/// Guard returned by [`RoundingControl::scope`].
pub struct ModeScope<'a> {
    ctl: &'a RoundingControl,
    saved: u32,
    dirty: bool,
    current: Option<Direction>,
}

impl ModeScope<'_> {
    /// Sets the rounding direction; one mode switch under hardware mode.
    pub fn set(&mut self, dir: Direction) {
        if self.ctl.strategy == Strategy::HardwareMode {
            hw::write_csr(hw::with_rc(self.saved, dir));
            self.ctl.switches.set(self.ctl.switches.get() + 1);
            self.dirty = true;
        }
        self.current = Some(dir);
    }

    pub fn current(&self) -> Option<Direction> {
        self.current
    }
}

impl Drop for ModeScope<'_> {
    fn drop(&mut self) {
        if self.dirty {
            hw::write_csr(self.saved);
            self.ctl.switches.set(self.ctl.switches.get() + 1);
        }
    }
}

/// Multiplies by `2^exp` exactly whenever the result is representable.
fn scale_pow2(mut x: f64, mut exp: i64) -> f64 {
    let pow = |e: i64| f64::from_bits(((e + 1023) as u64) << 52);
    while exp > 1000 {
        x *= pow(1000);
        exp -= 1000;
    }
    while exp < -1000 {
        x *= pow(-1000);
        exp += 1000;
    }
    x * pow(exp)
}

/// Rounds an exact rational to the nearest float in direction `dir`.
///
/// The result is correctly rounded: `Down` yields the largest float not
/// above `q`, `Up` the smallest float not below `q`, `Nearest` breaks ties
/// to even. Values beyond the finite range become the largest finite float
/// or infinity according to the direction.
pub fn rational_to_float<F: Real>(q: &Rational, dir: Direction) -> F {
    if q.is_zero() {
        return F::ZERO;
    }
    if q.is_negative() {
        let neg: F = rational_to_float(&-q, dir.flip());
        return F::native_sub(F::ZERO, neg);
    }
    let num = q.numer().magnitude().clone();
    let den = q.denom().magnitude().clone();
    let p = F::SIGNIFICAND_BITS as i64;
    // choose k with 2^(p-1) <= num * 2^k / den < 2^p
    let mut k = p - 1 - (num.bits() as i64 - den.bits() as i64);
    let divide = |k: i64| -> (BigUint, BigUint, BigUint) {
        let (n, d) = if k >= 0 {
            (&num << (k as u64), den.clone())
        } else {
            (num.clone(), &den << ((-k) as u64))
        };
        let (m, r) = n.div_rem(&d);
        (m, r, d)
    };
    let (mut m, mut r, mut d) = divide(k);
    if m.bits() as i64 > p {
        k -= 1;
        (m, r, d) = divide(k);
    } else if (m.bits() as i64) < p {
        k += 1;
        (m, r, d) = divide(k);
    }
    // subnormal range: the least significant bit may not go below MIN_LSB_EXP
    let k_max = -(F::MIN_LSB_EXP as i64);
    if k > k_max {
        k = k_max;
        (m, r, d) = divide(k);
    }
    let round_up = match dir {
        Direction::Down => false,
        Direction::Up => !r.is_zero(),
        Direction::Nearest => {
            let twice = &r << 1u32;
            match twice.cmp(&d) {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => m.is_odd(),
            }
        }
    };
    if round_up {
        m += 1u32;
    }
    let mantissa = m.to_u64().expect("significand fits in 64 bits") as f64;
    let value = scale_pow2(mantissa, -k);
    if value.is_infinite() || F::from_f64_exact(value).to_f64().is_infinite() {
        return match dir {
            Direction::Down => F::max_finite(),
            _ => F::from_f64_exact(f64::INFINITY),
        };
    }
    F::from_f64_exact(value)
}

/// Exact value of a finite float; `None` for infinities and NaN.
pub fn float_to_rational<F: Real>(x: F) -> Option<Rational> {
    let x = x.to_f64();
    if !x.is_finite() {
        return None;
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exp_field = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp_field - 1075)
    };
    let m = BigInt::from_biguint(
        if negative { Sign::Minus } else { Sign::Plus },
        BigUint::from(mantissa),
    );
    let value = if exp >= 0 {
        Rational::from_integer(m << (exp as u64))
    } else {
        Rational::new(m, BigInt::one() << ((-exp) as u64))
    };
    Some(value)
}
