//! Autocorrelation, effective sample size and two-sample KS statistics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest series accepted by [`effective_sample_size`].
pub const MIN_ESS_LEN: usize = 100;

/// Biased, mean-centred sample autocorrelation for lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag {
        return Err(Error::SeriesTooShort {
            len: n,
            min: max_lag + 1,
        });
    }
    let acov = autocovariance(series)?;
    Ok(acov[..=max_lag].iter().map(|c| c / acov[0]).collect())
}

/// All `n` autocovariances (divisor `n`), via zero-padded FFT.
fn autocovariance(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n == 0 {
        return Err(Error::SeriesTooShort { len: 0, min: 1 });
    }
    let first = series[0];
    if series.iter().all(|v| *v == first) {
        return Err(Error::ConstantSeries);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / (size as f64 * n as f64);
    let acov: Vec<f64> = buf[..n].iter().map(|c| c.re * scale).collect();
    if !(acov[0] > 0.0) {
        return Err(Error::ConstantSeries);
    }
    Ok(acov)
}

/// `N / (1 + 2 Σ_{k=1}^{K} ρ_k)`, truncated at the first adjacent pair
/// `ρ_{2m} + ρ_{2m+1} < 0`, clamped to `[1, N]`.
pub fn effective_sample_size(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < MIN_ESS_LEN {
        return Err(Error::SeriesTooShort {
            len: n,
            min: MIN_ESS_LEN,
        });
    }
    let acov = autocovariance(series)?;
    let rho = |k: usize| acov[k] / acov[0];
    // τ = -1 + 2 Σ_m Γ_m with Γ_m = ρ_{2m} + ρ_{2m+1}, ρ_0 = 1
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let gamma = rho(2 * m) + rho(2 * m + 1);
        if gamma < 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        m += 1;
    }
    let ess = n as f64 / tau;
    Ok(ess.clamp(1.0, n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub per_coordinate: Vec<f64>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// `autocorr[k][c]`: lag-`k` autocorrelation of coordinate `c`.
    pub autocorr: Vec<Vec<f64>>,
}

/// Per-coordinate ESS of a chain (`draws[iteration][coordinate]`). A
/// coordinate that never moved counts as a single effective draw.
pub fn ess_report(draws: &[Vec<f64>], max_lag: usize) -> Result<EssReport> {
    let n = draws.len();
    let dim = draws.first().map_or(0, |r| r.len());
    if dim == 0 {
        return Err(Error::Shape("no coordinates in chain".into()));
    }
    let max_lag = max_lag.min(n.saturating_sub(1));
    let mut per = Vec::with_capacity(dim);
    let mut ac = vec![vec![0.0; dim]; max_lag + 1];
    for c in 0..dim {
        let col: Vec<f64> = draws.iter().map(|r| r[c]).collect();
        match effective_sample_size(&col) {
            Ok(e) => {
                per.push(e);
                for (k, r) in autocorrelation(&col, max_lag)?.into_iter().enumerate() {
                    ac[k][c] = r;
                }
            }
            Err(Error::ConstantSeries) => {
                per.push(1.0);
                for row in ac.iter_mut() {
                    row[c] = 1.0;
                }
            }
            Err(e) => return Err(e),
        }
    }
    let (min, median, max) = summarize(&per);
    Ok(EssReport {
        per_coordinate: per,
        min,
        median,
        max,
        autocorr: ac,
    })
}

/// `(min, median, max)` of a non-empty slice; the median of an even count
/// averages the middle pair.
pub fn summarize(v: &[f64]) -> (f64, f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let med = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    (s[0], med, s[n - 1])
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
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

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|i, j| v[*i].total_cmp(&v[*j]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for t in k..=e {
            r[idx[t]] = avg;
        }
        k = e + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut r = seeded(seed);
        (0..n).map(|_| r.sample(StandardNormal)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut r = seeded(seed);
        let mut x = 0.0;
        let sd = (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + sd * r.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    fn naive_acf(x: &[f64], k: usize) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let ck: f64 = (0..n - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum();
        ck / c0
    }

    #[test]
    fn fft_matches_direct_sum() {
        let x = ar1(500, 0.6, 1);
        let ac = autocorrelation(&x, 20).unwrap();
        assert_eq!(ac[0], 1.0);
        for k in 0..=20 {
            assert!((ac[k] - naive_acf(&x, k)).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_band() {
        let n = 10_000;
        let x = white(n, 2);
        let ac = autocorrelation(&x, 50).unwrap();
        for r in &ac[1..] {
            assert!(r.abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn ar1_autocorrelation_decay() {
        let x = ar1(100_000, 0.9, 3);
        let ac = autocorrelation(&x, 10).unwrap();
        for (k, r) in ac.iter().enumerate() {
            assert!((r - 0.9f64.powi(k as i32)).abs() < 0.05);
        }
    }

    #[test]
    fn ess_calibration() {
        let e = effective_sample_size(&white(4000, 4)).unwrap();
        assert!((3400.0..=4600.0).contains(&e), "{e}");
        let n = 100_000;
        let e = effective_sample_size(&ar1(n, 0.9, 5)).unwrap();
        let want = n as f64 * 0.1 / 1.9;
        assert!((e / want - 1.0).abs() < 0.2, "{e} vs {want}");
    }

    #[test]
    fn duplicated_draws_halve_efficiency() {
        let x = ar1(20_000, 0.5, 6);
        let d: Vec<f64> = x.iter().flat_map(|v| [*v, *v]).collect();
        let (e1, e2) = (effective_sample_size(&x).unwrap(), effective_sample_size(&d).unwrap());
        let per_draw = (e2 / d.len() as f64) / (e1 / x.len() as f64);
        assert!((per_draw - 0.5).abs() < 0.08, "{per_draw}");
    }

    #[test]
    fn errors() {
        assert_eq!(effective_sample_size(&[1.0; 200]), Err(Error::ConstantSeries));
        assert!(matches!(
            effective_sample_size(&[1.0, 2.0]),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(matches!(
            autocorrelation(&[1.0, 2.0], 2),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn affine_invariance() {
        let x = ar1(3000, 0.7, 8);
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 12.0).collect();
        let (a, b) = (effective_sample_size(&x).unwrap(), effective_sample_size(&y).unwrap());
        assert!((a - b).abs() <= 1e-9 * a);
    }

    #[test]
    fn ks_detects_shift() {
        let a = white(5000, 9);
        let b = white(5000, 10);
        let c: Vec<f64> = white(5000, 11).iter().map(|v| v + 0.3).collect();
        let crit = ks_critical_value(5000, 5000, 0.001);
        assert!(ks_statistic(&a, &b) < crit);
        assert!(ks_statistic(&a, &c) > crit);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        let mut r = seeded(1);
        let v: Vec<f64> = (0..10).map(|_| r.random()).collect();
        assert!((spearman(&v, &v) - 1.0).abs() < 1e-12);
    }
}
