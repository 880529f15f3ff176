//! Floating-point intrinsics that `core` does not provide.
//!
//! With the `std` feature these forward to the inherent `f64` methods, otherwise
//! to `libm`.

pub use core::f64::consts::{PI, TAU};

macro_rules! unary {
    ($($name:ident => $libm:ident),* $(,)?) => {
        $(
            #[inline(always)]
            pub fn $name(x: f64) -> f64 {
                #[cfg(feature = "std")]
                {
                    f64::$name(x)
                }
                #[cfg(not(feature = "std"))]
                {
                    libm::$libm(x)
                }
            }
        )*
    };
}

unary! {
    exp => exp,
    ln => log,
    ln_1p => log1p,
    exp_m1 => expm1,
    sqrt => sqrt,
    sin => sin,
    cos => cos,
    tanh => tanh,
    sinh => sinh,
    floor => floor,
    round => round,
    asin => asin,
}

#[inline(always)]
pub fn atan2(y: f64, x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        y.atan2(x)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::atan2(y, x)
    }
}

#[inline(always)]
pub fn powf(x: f64, e: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(e)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Fractional part in `[0, 1)`.
#[inline]
pub fn frac(x: f64) -> f64 {
    x - floor(x)
}
