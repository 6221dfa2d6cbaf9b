//! Scalar abstraction so the Green quadrature runs in `f64` or in software
//! multi-precision floats.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use dashu_float::round::mode::HalfEven;
use dashu_float::{Context, FBig};

pub trait Real:
    Clone
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Working context: carries the precision for multi-precision types.
    type Ctx: Clone + Debug + Send + Sync;

    fn from_f64(ctx: &Self::Ctx, x: f64) -> Self;
    fn from_i64(ctx: &Self::Ctx, x: i64) -> Self;
    fn ratio(ctx: &Self::Ctx, num: i64, den: i64) -> Self {
        Self::from_i64(ctx, num) / Self::from_i64(ctx, den)
    }
    fn pi(ctx: &Self::Ctx) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self {
        if self.is_negative() {
            -self.clone()
        } else {
            self.clone()
        }
    }
    fn is_negative(&self) -> bool;
    /// Decimal rendering with about `digits` significant digits.
    fn to_decimal(&self, digits: usize) -> String;
    /// Relative precision of the type, used for early termination of series.
    fn epsilon(ctx: &Self::Ctx) -> f64;
}

impl Real for f64 {
    type Ctx = ();

    fn from_f64(_: &(), x: f64) -> Self {
        x
    }
    fn from_i64(_: &(), x: i64) -> Self {
        x as f64
    }
    fn pi(_: &()) -> Self {
        std::f64::consts::PI
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn is_negative(&self) -> bool {
        *self < 0.0
    }
    fn to_decimal(&self, digits: usize) -> String {
        format!("{:.*}", digits.min(17), self)
    }
    fn epsilon(_: &()) -> f64 {
        f64::EPSILON
    }
}

/// Binary floating point with a fixed number of mantissa bits.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct Ext(pub FBig<HalfEven, 2>);

/// Precision (in bits) for [`Ext`] arithmetic.
#[derive(Clone, Copy, Debug)]
pub struct ExtCtx {
    pub bits: usize,
}

impl Default for ExtCtx {
    fn default() -> Self {
        ExtCtx { bits: 192 }
    }
}

impl Ext {
    fn wrap(ctx: &ExtCtx, v: FBig<HalfEven, 2>) -> Ext {
        Ext(v.with_precision(ctx.bits).value())
    }
}

impl Add for Ext {
    type Output = Ext;
    fn add(self, o: Ext) -> Ext {
        Ext(self.0 + o.0)
    }
}
impl Sub for Ext {
    type Output = Ext;
    fn sub(self, o: Ext) -> Ext {
        Ext(self.0 - o.0)
    }
}
impl Mul for Ext {
    type Output = Ext;
    fn mul(self, o: Ext) -> Ext {
        Ext(self.0 * o.0)
    }
}
impl Div for Ext {
    type Output = Ext;
    fn div(self, o: Ext) -> Ext {
        Ext(self.0 / o.0)
    }
}
impl Neg for Ext {
    type Output = Ext;
    fn neg(self) -> Ext {
        Ext(-self.0)
    }
}

impl Real for Ext {
    type Ctx = ExtCtx;

    fn from_f64(ctx: &ExtCtx, x: f64) -> Self {
        Ext::wrap(ctx, FBig::try_from(x).expect("finite f64"))
    }
    fn from_i64(ctx: &ExtCtx, x: i64) -> Self {
        Ext::wrap(ctx, FBig::from(x))
    }
    fn pi(ctx: &ExtCtx) -> Self {
        Ext(Context::<HalfEven>::new(ctx.bits).pi::<2>(None).value())
    }
    fn exp(&self) -> Self {
        Ext(self.0.exp())
    }
    fn ln(&self) -> Self {
        Ext(self.0.ln())
    }
    fn sqrt(&self) -> Self {
        Ext(self.0.sqrt())
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }
    fn is_negative(&self) -> bool {
        self.0 < FBig::<HalfEven, 2>::ZERO
    }
    fn to_decimal(&self, digits: usize) -> String {
        let dec = self.0.clone().with_base_and_precision::<10>(digits + 2).value();
        dec.to_string()
    }
    fn epsilon(ctx: &ExtCtx) -> f64 {
        2f64.powi(-(ctx.bits as i32))
    }
}
