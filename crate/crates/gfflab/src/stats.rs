//! Small statistics toolbox shared by the experiment drivers and tests:
//! running moments, binomial errors, Kolmogorov-Smirnov distances and
//! weighted least squares on log-probabilities.

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Sample covariance of paired observations.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (n - 1.0)
}

/// Standard error of a sample covariance, estimated from the empirical
/// variance of the per-observation products.
pub fn covariance_se(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    (variance(&prods) / n).sqrt()
}

/// Estimate and binomial standard error for a success count.
pub fn binomial_estimate(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials.max(1) as f64;
    let p = successes as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// One-sample Kolmogorov-Smirnov distance against a CDF.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov distance, tie-aware.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-proportion z test; returns the two-sided p-value.
pub fn two_proportion_pvalue(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return 1.0;
    }
    let z = (p1 - p2).abs() / se;
    libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile (Wichura's AS 241, double precision).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile needs p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = poly(
            &[
                3.387_132_872_796_366_608,
                1.331_416_678_917_843_774_5e2,
                1.971_590_950_306_551_442_7e3,
                1.373_169_376_550_946_112_5e4,
                4.592_195_393_154_987_145_7e4,
                6.726_577_092_700_870_085_3e4,
                3.343_057_558_358_812_810_5e4,
                2.509_080_928_730_122_672_7e3,
            ],
            r,
        );
        let den = poly(
            &[
                1.0,
                4.231_333_070_160_091_125_2e1,
                6.871_870_074_920_579_083e2,
                5.394_196_021_424_751_107_7e3,
                2.121_379_430_158_659_586_7e4,
                3.930_789_580_009_271_061e4,
                2.872_908_573_572_194_267_4e4,
                5.226_495_278_852_854_561e3,
            ],
            r,
        );
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(
            &[
                1.423_437_110_749_683_577_3,
                4.630_337_846_156_545_295_9,
                5.769_497_221_460_691_405_5,
                3.647_848_324_763_204_605,
                1.270_458_252_452_368_382_6,
                2.417_807_251_774_506_117_7e-1,
                2.272_384_498_926_918_458_3e-2,
                7.745_450_142_783_414_076_4e-4,
            ],
            r,
        ) / poly(
            &[
                1.0,
                2.053_191_626_637_758_821_9,
                1.676_384_830_183_803_849_4,
                6.897_673_349_851_000_045_5e-1,
                1.481_039_764_274_800_745_9e-1,
                1.519_866_656_361_645_719_7e-2,
                5.475_938_084_995_344_946e-4,
                1.050_750_071_644_416_843_2e-9,
            ],
            r,
        )
    } else {
        r -= 5.0;
        poly(
            &[
                6.657_904_643_501_103_777_2,
                5.463_784_911_164_114_369_9,
                1.784_826_539_917_291_335_8,
                2.965_605_718_285_048_912_3e-1,
                2.653_218_952_657_612_309_3e-2,
                1.242_660_947_388_078_438_6e-3,
                2.711_555_568_743_487_578e-5,
                2.010_334_399_292_288_132_6e-7,
            ],
            r,
        ) / poly(
            &[
                1.0,
                5.998_322_065_558_879_376_9e-1,
                1.369_298_809_227_358_053_1e-1,
                1.487_536_129_085_061_485_3e-2,
                7.868_691_311_456_132_591e-4,
                1.846_318_317_510_054_681_8e-5,
                1.421_511_758_316_445_888_7e-7,
                2.044_263_103_389_939_785_6e-15,
            ],
            r,
        )
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coeffs_ascending: &[f64], x: f64) -> f64 {
    coeffs_ascending
        .iter()
        .rev()
        .fold(0.0, |acc, &c| acc * x + c)
}

/// Weighted least squares line fit y = intercept + slope·x.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

/// Fit with weights w_i ~ 1/Var(y_i). Requires at least two points.
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> LineFit {
    assert!(xs.len() >= 2 && xs.len() == ys.len() && xs.len() == ws.len());
    let sw: f64 = ws.iter().sum();
    let sx: f64 = xs.iter().zip(ws).map(|(x, w)| x * w).sum();
    let sy: f64 = ys.iter().zip(ws).map(|(y, w)| y * w).sum();
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| x * x * w).sum();
    let sxy: f64 = xs.iter().zip(ys).zip(ws).map(|((x, y), w)| x * y * w).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let slope_se = (sw / det).sqrt();
    let ybar = sy / sw;
    let ss_tot: f64 = ys
        .iter()
        .zip(ws)
        .map(|(y, w)| w * (y - ybar) * (y - ybar))
        .sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| {
            let e = y - intercept - slope * x;
            w * e * e
        })
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        slope_se,
        r_squared,
    }
}

/// CDF of the exponential distribution with the given mean.
pub fn exp_cdf(x: f64, mean: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -libm::expm1(-x / mean)
    }
}

/// CDF of Gamma(shape 1/2, scale s), the law of (s/2)·Z² for standard Z.
pub fn gamma_half_cdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        libm::erf((x / scale).sqrt())
    }
}
