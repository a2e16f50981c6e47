use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::marginals::Marginal;
use crate::normal;

// Gauss-Legendre abscissae (positive half) and weights for 6, 12 and 20 points.
const X6: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197];
const W6: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
const X12: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475,
    0.769_902_674_194_305,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
const W12: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
const X20: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_325_9,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];
const W20: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];

/// `P(X > h, Y > k)` for a standard bivariate normal with correlation `r`
/// (Genz's method: Drezner-Wesolowsky quadrature for moderate `|r|`, an
/// asymptotic expansion near `|r| = 1`).
fn upper_orthant(h: f64, k: f64, r: f64) -> f64 {
    let (x, w): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&X6, &W6)
    } else if r.abs() < 0.75 {
        (&X12, &W12)
    } else {
        (&X20, &W20)
    };
    let nodes = || {
        x.iter()
            .zip(w)
            .flat_map(|(&xi, &wi)| [(1.0 - xi, wi), (1.0 + xi, wi)])
    };

    let mut k = k;
    let mut hk = h * k;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        let s: f64 = nodes()
            .map(|(t, wi)| {
                let sn = (asr * t).sin();
                wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp()
            })
            .sum();
        return (s * asr / (2.0 * PI) + normal::cdf(-h) * normal::cdf(-k)).clamp(0.0, 1.0);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    if r.abs() < 1.0 {
        let a2 = (1.0 - r) * (1.0 + r);
        let mut a = a2.sqrt();
        let bs = (h - k).powi(2);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -0.5 * (bs / a2 + hk);
        if asr > -100.0 {
            bvn = a * asr.exp() * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0);
        }
        if hk > -100.0 {
            let b = bs.sqrt();
            let sp = (2.0 * PI).sqrt() * normal::cdf(-b / a);
            bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a *= 0.5;
        let s: f64 = nodes()
            .filter_map(|(t, wi)| {
                let xs = (a * t).powi(2);
                let asr = -0.5 * (bs / xs + hk);
                if asr <= -100.0 {
                    return None;
                }
                let rs = (1.0 - xs).sqrt();
                let sp = 1.0 + c * xs * (1.0 + d * xs);
                let ep = (-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs;
                Some(wi * asr.exp() * (sp - ep))
            })
            .sum();
        bvn = (a * s - bvn) / (2.0 * PI);
    }
    let p = if r > 0.0 {
        bvn + normal::cdf(-h.max(k))
    } else if h >= k {
        -bvn
    } else {
        let l = if h < 0.0 {
            normal::cdf(k) - normal::cdf(h)
        } else {
            normal::cdf(-h) - normal::cdf(-k)
        };
        l - bvn
    };
    p.clamp(0.0, 1.0)
}

/// `Φ₂(h, k; ρ) = P(X <= h, Y <= k)`; infinite limits are allowed.
pub fn bivariate_normal_cdf(h: f64, k: f64, rho: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return normal::cdf(k);
    }
    if k == f64::INFINITY {
        return normal::cdf(h);
    }
    upper_orthant(-h, -k, rho)
}

/// Bivariate Gaussian copula `C(u₁, u₂; ρ)` on the closed unit square.
pub fn gaussian_copula_cdf(u1: f64, u2: f64, rho: f64) -> f64 {
    if u1 <= 0.0 || u2 <= 0.0 {
        return 0.0;
    }
    if u1 >= 1.0 {
        return u2.min(1.0);
    }
    if u2 >= 1.0 {
        return u1;
    }
    bivariate_normal_cdf(
        normal::quantile_unchecked(u1),
        normal::quantile_unchecked(u2),
        rho,
    )
}

/// Exact joint mass `P(Y₁ = y₁, Y₂ = y₂)` of two discrete marginals coupled by a
/// bivariate Gaussian copula, by inclusion-exclusion over the copula rectangle.
pub fn exact_bivariate_discrete_pmf(
    rho: f64,
    m1: &Marginal,
    m2: &Marginal,
    y1: u64,
    y2: u64,
) -> Result<f64> {
    if !m1.family().is_discrete() || !m2.family().is_discrete() {
        return Err(Error::Domain("exact rectangle mass needs two discrete marginals".into()));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")));
    }
    let bounds = |m: &Marginal, y: u64| {
        let hi = m.cdf(y as f64);
        let lo = if y == 0 { 0.0 } else { m.cdf(y as f64 - 1.0) };
        (lo, hi)
    };
    let (u11, u12) = bounds(m1, y1);
    let (u21, u22) = bounds(m2, y2);
    let c = |a, b| gaussian_copula_cdf(a, b, rho);
    Ok((c(u12, u22) - c(u11, u22) - c(u12, u21) + c(u11, u21)).max(0.0))
}
