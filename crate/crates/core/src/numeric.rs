//! Scalar-generic numerics for the statistics layer.
//!
//! Everything here is generic over [`Scalar`] so the frequency and test
//! machinery works at `f32` or `f64`; the crate root exports
//! [`crate::Real`] (= `f64`) as the default. Exact combinatorial results
//! never pass through this module — those live in [`crate::oracle`] on
//! arbitrary-precision rationals.

// coefficient tables keep their published digits
#![allow(clippy::excessive_precision)]

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the statistics layer.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + core::fmt::Debug {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    fn from_u64_lossy(v: u64) -> Self {
        Self::from_u64(v).expect("u64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Natural log of the gamma function (Lanczos, g = 7, 9 terms).
pub fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = T::from_f64_lossy(0.5);
    let one = T::one();
    if x < half {
        // reflection formula
        let pi = T::from_f64_lossy(std::f64::consts::PI);
        return (pi / (pi * x).sin()).ln() - ln_gamma(one - x);
    }
    let x = x - one;
    let mut acc = T::from_f64_lossy(COEF[0]);
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc = acc + T::from_f64_lossy(c) / (x + T::from_usize(i).unwrap());
    }
    let t = x + T::from_f64_lossy(7.5);
    let ln_sqrt_2pi = T::from_f64_lossy(0.918_938_533_204_672_74);
    ln_sqrt_2pi + (x + half) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
///
/// Series expansion for x < a + 1, Lentz continued fraction otherwise.
pub fn reg_lower_gamma<T: Scalar>(a: T, x: T) -> T {
    assert!(a > T::zero(), "shape parameter must be positive");
    if x <= T::zero() {
        return T::zero();
    }
    let one = T::one();
    let eps = T::epsilon() * T::from_f64_lossy(4.0);
    let ln_pre = a * x.ln() - x - ln_gamma(a);
    if x < a + one {
        // series: P = x^a e^-x / Γ(a) · Σ x^n / (a (a+1) ... (a+n))
        let mut ap = a;
        let mut term = one / a;
        let mut sum = term;
        for _ in 0..500 {
            ap = ap + one;
            term = term * x / ap;
            sum = sum + term;
            if term.abs() < sum.abs() * eps {
                break;
            }
        }
        (ln_pre.exp() * sum).min(one)
    } else {
        // continued fraction for Q, then P = 1 - Q
        let tiny = T::from_f64_lossy(1e-300).max(T::min_positive_value());
        let mut b = x + one - a;
        let mut c = one / tiny;
        let mut d = one / b;
        let mut h = d;
        let mut i = one;
        for _ in 0..500 {
            let an = -i * (i - a);
            b = b + one + one;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = one / d;
            let del = d * c;
            h = h * del;
            if (del - one).abs() < eps {
                break;
            }
            i = i + one;
        }
        (one - ln_pre.exp() * h).max(T::zero())
    }
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_cdf<T: Scalar>(x: T, dof: usize) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let half = T::from_f64_lossy(0.5);
    reg_lower_gamma(T::from_usize(dof).unwrap() * half, x * half)
}

/// Standard normal CDF via the incomplete gamma identity
/// Φ(z) = (1 + sgn(z)·P(1/2, z²/2)) / 2.
pub fn std_normal_cdf<T: Scalar>(z: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let p = reg_lower_gamma(half, z * z * half);
    if z >= T::zero() {
        half * (T::one() + p)
    } else {
        half * (T::one() - p)
    }
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation refined by one Newton step against
/// [`std_normal_cdf`]; good to ~1e-13 over (0, 1).
pub fn inv_std_normal<T: Scalar>(p: T) -> T {
    let pf = p.to_f64().expect("probability representable as f64");
    assert!(
        pf > 0.0 && pf < 1.0,
        "quantile argument must lie strictly inside (0, 1), got {pf}"
    );
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if pf < P_LOW {
        let q = (-2.0 * pf.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if pf <= 1.0 - P_LOW {
        let q = pf - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - pf).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // one Newton step: x -= (Φ(x) - p) / φ(x)
    let phi = std_normal_cdf(x);
    let dens = (-0.5 * x * x).exp() * 0.398_942_280_401_432_7;
    let refined = x - (phi - pf) / dens;
    T::from_f64_lossy(refined)
}
