//! Scalar statistical kernels, generic over the floating-point type.

use num_traits::Float;

use crate::error::{Error, Result};

fn c<T: Float>(v: f64) -> T {
    T::from(v).expect("constant representable in scalar type")
}

/// Standard normal CDF.
///
/// Hart-style rational approximation, accurate to ~1e-15 over the full
/// double range, including far tails.
pub fn std_normal_cdf<T: Float>(x: T) -> T {
    let z = x.abs();
    let cdf = if z > c(37.0) {
        T::zero()
    } else {
        let e = (-z * z / c(2.0)).exp();
        if z < c(7.071_067_811_865_475) {
            let mut b: T = c::<T>(3.526_249_659_989_11e-2) * z + c(0.700_383_064_443_688);
            b = b * z + c(6.373_962_203_531_65);
            b = b * z + c(33.912_866_078_383);
            b = b * z + c(112.079_291_497_871);
            b = b * z + c(221.213_596_169_931);
            b = b * z + c(220.206_867_912_376);
            let mut d: T = c::<T>(8.838_834_764_831_84e-2) * z + c(1.755_667_163_182_64);
            d = d * z + c(16.064_177_579_207);
            d = d * z + c(86.780_732_202_946_1);
            d = d * z + c(296.564_248_779_674);
            d = d * z + c(637.333_633_378_831);
            d = d * z + c(793.826_512_519_948);
            d = d * z + c(440.413_735_824_752);
            e * b / d
        } else {
            let mut b = z + c(0.65);
            b = z + c::<T>(4.0) / b;
            b = z + c::<T>(3.0) / b;
            b = z + c::<T>(2.0) / b;
            b = z + T::one() / b;
            e / (b * c(2.506_628_274_631_000_5))
        }
    };
    if x > T::zero() {
        T::one() - cdf
    } else {
        cdf
    }
}

/// Standard normal density.
pub fn std_normal_pdf<T: Float>(x: T) -> T {
    (-x * x / c(2.0)).exp() / c(2.506_628_274_631_000_5)
}

/// Standard normal quantile function.
///
/// Acklam's rational approximation refined by one Halley step against
/// [`std_normal_cdf`]; the refinement brings the error near machine
/// precision for p away from the extreme underflow region.
pub fn std_normal_inv_cdf<T: Float>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::InvalidParameter(
            "normal quantile requires 0 < p < 1".into(),
        ));
    }
    let a = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    let b = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    let cc = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    let d = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = c(0.02425);
    let p_high = T::one() - p_low;

    let mut x: T;
    if p < p_low {
        let q = (c::<T>(-2.0) * p.ln()).sqrt();
        x = (((((c::<T>(cc[0]) * q + c(cc[1])) * q + c(cc[2])) * q + c(cc[3])) * q + c(cc[4]))
            * q
            + c(cc[5]))
            / ((((c::<T>(d[0]) * q + c(d[1])) * q + c(d[2])) * q + c(d[3])) * q + T::one());
    } else if p <= p_high {
        let q = p - c(0.5);
        let r = q * q;
        x = (((((c::<T>(a[0]) * r + c(a[1])) * r + c(a[2])) * r + c(a[3])) * r + c(a[4])) * r
            + c(a[5]))
            * q
            / (((((c::<T>(b[0]) * r + c(b[1])) * r + c(b[2])) * r + c(b[3])) * r + c(b[4])) * r
                + T::one());
    } else {
        let q = (c::<T>(-2.0) * (T::one() - p).ln()).sqrt();
        x = -(((((c::<T>(cc[0]) * q + c(cc[1])) * q + c(cc[2])) * q + c(cc[3])) * q + c(cc[4]))
            * q
            + c(cc[5]))
            / ((((c::<T>(d[0]) * q + c(d[1])) * q + c(d[2])) * q + c(d[3])) * q + T::one());
    }

    // Halley refinement.
    let e = std_normal_cdf(x) - p;
    let u = e * c::<T>(2.506_628_274_631_000_5) * (x * x / c(2.0)).exp();
    x = x - u / (T::one() + x * u / c(2.0));
    Ok(x)
}

/// Linear-interpolation empirical quantile: order statistic k sits at
/// probability (k-1)/(N-1).
pub fn empirical_quantile<T: Float>(samples: &[T], p: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample for quantile".into()));
    }
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::InvalidArgument("quantile p outside [0,1]".into()));
    }
    let mut sorted: Vec<T> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in quantile input"));
    let n = sorted.len();
    if n == 1 {
        return Ok(sorted[0]);
    }
    let h = p * T::from(n - 1).unwrap();
    let lo = h.floor();
    let idx = lo.to_usize().unwrap().min(n - 2);
    let frac = h - T::from(idx).unwrap();
    Ok(sorted[idx] + frac * (sorted[idx + 1] - sorted[idx]))
}

/// log(1 + exp(x)) without overflow.
pub fn softplus<T: Float>(x: T) -> T {
    if x > c(30.0) {
        x
    } else if x < c(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// log(sum(exp(xs))) with the usual max shift; -inf inputs are ignored.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}
