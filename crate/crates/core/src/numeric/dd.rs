//! Double-double scalar.
//!
//! A value is the unevaluated sum `hi + lo` of two `f64`s with
//! `|lo| <= ulp(hi) / 2`, giving roughly 106 bits of significand. Arithmetic,
//! `exp`, `ln`, `sqrt` and `powi` are carried out at full precision; the
//! trigonometric family only goes through `f64` since no kernel uses it.
//!
//! The type exists so finite-difference checks can run far below `f64`
//! round-off: a central difference with `h = 1e-5` in `f64` carries about
//! `1e-11` of cancellation noise, which swamps gradients that are
//! structurally zero.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN_2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

const LN_10: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_10,
    lo: -2.170_756_223_382_249_2e-16,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub const ZERO: Self = Self { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = Self { hi: 1.0, lo: 0.0 };

    #[inline]
    pub const fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn hi(self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    fn renorm(hi: f64, lo: f64) -> Self {
        if !hi.is_finite() {
            return Self { hi, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Multiplies by `2^k` exactly (barring overflow and underflow).
    fn ldexp(self, k: i32) -> Self {
        // split so that neither factor overflows on its own
        let half = k / 2;
        let a = 2f64.powi(half);
        let b = 2f64.powi(k - half);
        Self { hi: self.hi * a * b, lo: self.lo * a * b }
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.hi, f)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        if !s1.is_finite() {
            return Self { hi: s1, lo: 0.0 };
        }
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        Self::renorm(s1, s2 + t2)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, rhs.hi);
        if !p1.is_finite() {
            return Self { hi: p1, lo: 0.0 };
        }
        Self::renorm(p1, p2 + (self.hi * rhs.lo + self.lo * rhs.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        if !q1.is_finite() || rhs.hi.is_infinite() {
            return Self { hi: q1, lo: 0.0 };
        }
        let r = self - rhs * Self::from_f64(q1);
        let q2 = r.hi / rhs.hi;
        let r = r - rhs * Self::from_f64(q2);
        let q3 = r.hi / rhs.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Self { hi: q1, lo: q2 } + Self::from_f64(q3)
    }
}

impl Rem for DoubleDouble {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        self - rhs * (self / rhs).trunc()
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for DoubleDouble {
            #[inline]
            fn $m(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *,
    DivAssign div_assign /, RemAssign rem_assign %);

impl Sum for DoubleDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a DoubleDouble> for DoubleDouble {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, &b| a + b)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        Self::ZERO
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        Self::ONE
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(Self::from_f64)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        let t = self.trunc();
        let i = t.hi.to_i64()?;
        Some(i.checked_add(t.lo as i64)?)
    }
    fn to_u64(&self) -> Option<u64> {
        let t = self.trunc();
        let i = t.hi.to_u64()?;
        if t.lo < 0.0 {
            i.checked_sub((-t.lo) as u64)
        } else {
            i.checked_add(t.lo as u64)
        }
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.hi + self.lo)
    }
    fn to_f32(&self) -> Option<f32> {
        Some((self.hi + self.lo) as f32)
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        let hi = n as f64;
        let lo = (n - hi as i64) as f64;
        Some(Self::renorm(hi, lo))
    }
    fn from_u64(n: u64) -> Option<Self> {
        let hi = n as f64;
        let lo = n.wrapping_sub(hi as u64) as i64 as f64;
        Some(Self::renorm(hi, lo))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(Self::from_f64(n))
    }
    fn from_f32(n: f32) -> Option<Self> {
        Some(Self::from_f64(n as f64))
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(Self::from_f64)
    }
}

impl From<f64> for DoubleDouble {
    fn from(x: f64) -> Self {
        Self::from_f64(x)
    }
}

impl Float for DoubleDouble {
    fn nan() -> Self {
        Self::from_f64(f64::NAN)
    }
    fn infinity() -> Self {
        Self::from_f64(f64::INFINITY)
    }
    fn neg_infinity() -> Self {
        Self::from_f64(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Self {
        Self::from_f64(-0.0)
    }
    fn min_value() -> Self {
        Self::from_f64(f64::MIN)
    }
    fn min_positive_value() -> Self {
        Self::from_f64(f64::MIN_POSITIVE)
    }
    fn epsilon() -> Self {
        Self::from_f64(4.930_380_657_631_324e-32)
    }
    fn max_value() -> Self {
        Self::from_f64(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi.is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi.is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi.is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi.classify()
    }
    fn floor(self) -> Self {
        let f = self.hi.floor();
        if f == self.hi {
            Self::renorm(f, self.lo.floor())
        } else {
            Self::from_f64(f)
        }
    }
    fn ceil(self) -> Self {
        let c = self.hi.ceil();
        if c == self.hi {
            Self::renorm(c, self.lo.ceil())
        } else {
            Self::from_f64(c)
        }
    }
    fn round(self) -> Self {
        if self.hi >= 0.0 {
            (self + Self::from_f64(0.5)).floor()
        } else {
            (self - Self::from_f64(0.5)).ceil()
        }
    }
    fn trunc(self) -> Self {
        if self.hi >= 0.0 {
            self.floor()
        } else {
            self.ceil()
        }
    }
    fn fract(self) -> Self {
        self - self.trunc()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.hi.is_sign_negative()) {
            -self
        } else {
            self
        }
    }
    fn signum(self) -> Self {
        Self::from_f64(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }
    fn recip(self) -> Self {
        Self::ONE / self
    }
    fn powi(self, n: i32) -> Self {
        let mut base = self;
        let mut e = n.unsigned_abs();
        let mut acc = Self::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        if n < 0 {
            acc.recip()
        } else {
            acc
        }
    }
    fn powf(self, n: Self) -> Self {
        if n.is_zero() {
            return Self::ONE;
        }
        if self.is_zero() {
            return if n.hi > 0.0 { Self::ZERO } else { Self::infinity() };
        }
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from_f64(self.hi.sqrt());
        }
        let y = Self::from_f64(self.hi.sqrt());
        y + (self - y * y) / (y * Self::from_f64(2.0))
    }
    fn exp(self) -> Self {
        if self.hi > 709.78 {
            return Self::infinity();
        }
        if self.hi < -745.2 {
            return Self::ZERO;
        }
        if self.hi.is_nan() {
            return self;
        }
        let k = (self.hi / LN_2.hi).round();
        // |r| <= ln2 / 2, then scaled down by 2^10 so the series converges fast
        let r = (self - LN_2 * Self::from_f64(k)).ldexp(-10);
        // e^r - 1 kept separate from the leading one to preserve precision
        let mut term = r;
        let mut em1 = r;
        for n in 2..=12 {
            term = term * r / Self::from_f64(n as f64);
            em1 += term;
        }
        // (1 + t)^2 - 1 = t (2 + t)
        for _ in 0..10 {
            em1 = em1 * (em1 + Self::from_f64(2.0));
        }
        (em1 + Self::ONE).ldexp(k as i32)
    }
    fn exp2(self) -> Self {
        (self * LN_2).exp()
    }
    fn ln(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Self::nan();
        }
        if self.hi == 0.0 {
            return Self::neg_infinity();
        }
        if self.hi.is_infinite() {
            return self;
        }
        // one Newton step on exp(y) = x doubles the f64 starting precision
        let y = Self::from_f64(self.hi.ln());
        y + self * (-y).exp() - Self::ONE
    }
    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }
    fn log2(self) -> Self {
        self.ln() / LN_2
    }
    fn log10(self) -> Self {
        self.ln() / LN_10
    }
    fn to_degrees(self) -> Self {
        self * Self::from_f64(180.0) / Self::from_f64(std::f64::consts::PI)
    }
    fn to_radians(self) -> Self {
        self * Self::from_f64(std::f64::consts::PI) / Self::from_f64(180.0)
    }
    fn max(self, other: Self) -> Self {
        if self.is_nan() || other > self {
            other
        } else {
            self
        }
    }
    fn min(self, other: Self) -> Self {
        if self.is_nan() || other < self {
            other
        } else {
            self
        }
    }
    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::ZERO
        }
    }
    fn cbrt(self) -> Self {
        let y = Self::from_f64(self.hi.cbrt());
        if y.is_zero() || !y.is_finite() {
            return y;
        }
        // Newton on y^3 = x
        y - (y * y * y - self) / (Self::from_f64(3.0) * y * y)
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    fn sin(self) -> Self {
        Self::from_f64(self.hi.sin())
    }
    fn cos(self) -> Self {
        Self::from_f64(self.hi.cos())
    }
    fn tan(self) -> Self {
        Self::from_f64(self.hi.tan())
    }
    fn asin(self) -> Self {
        Self::from_f64(self.hi.asin())
    }
    fn acos(self) -> Self {
        Self::from_f64(self.hi.acos())
    }
    fn atan(self) -> Self {
        Self::from_f64(self.hi.atan())
    }
    fn atan2(self, other: Self) -> Self {
        Self::from_f64(self.hi.atan2(other.hi))
    }
    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }
    fn exp_m1(self) -> Self {
        self.exp() - Self::ONE
    }
    fn ln_1p(self) -> Self {
        (self + Self::ONE).ln()
    }
    fn sinh(self) -> Self {
        let e = self.exp();
        (e - e.recip()) / Self::from_f64(2.0)
    }
    fn cosh(self) -> Self {
        let e = self.exp();
        (e + e.recip()) / Self::from_f64(2.0)
    }
    fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return Self::from_f64(self.hi.signum());
        }
        let e = (self * Self::from_f64(2.0)).exp();
        (e - Self::ONE) / (e + Self::ONE)
    }
    fn asinh(self) -> Self {
        Self::from_f64(self.hi.asinh())
    }
    fn acosh(self) -> Self {
        Self::from_f64(self.hi.acosh())
    }
    fn atanh(self) -> Self {
        Self::from_f64(self.hi.atanh())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi.integer_decode()
    }
}

impl Real for DoubleDouble {}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DoubleDouble {
        DoubleDouble::from_f64(x)
    }

    /// Error of `a - b` measured in double-double, returned as `f64`.
    fn diff(a: DoubleDouble, b: DoubleDouble) -> f64 {
        (a - b).hi().abs()
    }

    #[test]
    fn sum_keeps_bits_f64_loses() {
        let x = dd(1.0) + dd(1e-20);
        assert_eq!(x.hi(), 1.0);
        assert_eq!(x.lo(), 1e-20);
        assert_eq!((x - dd(1.0)).hi(), 1e-20);
    }

    #[test]
    fn division_roundtrips() {
        for (a, b) in [(1.0, 3.0), (2.0, 7.0), (-5.5, 0.1), (1e10, 3e-7)] {
            let q = dd(a) / dd(b);
            assert!(diff(q * dd(b), dd(a)) <= a.abs() * 1e-30, "{a}/{b}");
        }
    }

    #[test]
    fn exp_ln_roundtrip_at_double_double_precision() {
        for x in [-30.0, -3.0, -0.7, -1e-9, 0.0, 1e-12, 0.1, 0.5, 1.0, 2.0, 17.3, 300.0] {
            let t = dd(x);
            let back = t.exp().ln();
            assert!(diff(back, t) <= 1e-29 * x.abs().max(1.0), "x = {x}: {:?}", back - t);
        }
    }

    #[test]
    fn exp_matches_constant_e() {
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let e = dd(1.0).exp();
        assert_eq!(e.hi(), std::f64::consts::E);
        assert!((e.lo() - 1.445_646_891_729_250_2e-16).abs() < 1e-31);
    }

    #[test]
    fn exp_is_additive() {
        for (a, b) in [(0.3, -0.7), (2.5, 1.25), (-10.0, 3.3)] {
            let lhs = (dd(a) + dd(b)).exp();
            let rhs = dd(a).exp() * dd(b).exp();
            assert!(diff(lhs, rhs) / rhs.hi() < 1e-30, "{a} {b}");
        }
    }

    #[test]
    fn sqrt_squares_back() {
        for x in [2.0, 3.0, 0.01, 12345.678] {
            let r = dd(x).sqrt();
            assert!(diff(r * r, dd(x)) <= x * 1e-30);
        }
    }

    #[test]
    fn powi_and_powf_agree() {
        let x = dd(1.7);
        assert!(diff(x.powi(5), x * x * x * x * x) < 1e-29);
        assert!(diff(x.powf(dd(5.0)), x.powi(5)) < 1e-28);
        assert!(diff(x.powi(-2) * x * x, dd(1.0)) < 1e-30);
    }

    #[test]
    fn ordering_uses_low_word() {
        let a = dd(1.0) + dd(1e-20);
        assert!(a > dd(1.0));
        assert!(dd(1.0) < a);
        assert_eq!(a.max(dd(1.0)), a);
    }

    #[test]
    fn non_finite_propagates() {
        assert!(dd(f64::INFINITY).is_infinite());
        assert!((dd(1e308) * dd(10.0)).is_infinite());
        assert!((dd(1.0) / dd(0.0)).is_infinite());
        assert!(dd(-1.0).ln().is_nan());
        assert!(dd(f64::NAN).exp().is_nan());
        assert!(dd(800.0).exp().is_infinite());
        assert_eq!(dd(-800.0).exp(), DoubleDouble::ZERO);
    }

    #[test]
    fn floor_and_trunc() {
        assert_eq!(dd(2.5).floor(), dd(2.0));
        assert_eq!(dd(-2.5).floor(), dd(-3.0));
        assert_eq!(dd(-2.5).trunc(), dd(-2.0));
        let just_below_two = dd(2.0) - dd(1e-20);
        assert_eq!(just_below_two.floor(), dd(1.0));
        assert_eq!(dd(7.0) % dd(3.0), dd(1.0));
    }

    #[test]
    fn central_difference_resolves_flat_direction() {
        // f(b) = ln softmax_0(x + b) is exactly flat in b
        let f = |b: DoubleDouble| {
            let xs = [dd(0.3) + b, dd(-0.7) + b, dd(1.1) + b];
            let m = xs[2];
            let s: DoubleDouble = xs.iter().map(|&x| (x - m).exp()).sum();
            ((xs[0] - m).exp() / s).ln()
        };
        let h = dd(1e-5);
        let d = (f(h) - f(-h)) / (h + h);
        assert!(d.abs().hi() < 1e-20, "{d:?}");
    }
}
