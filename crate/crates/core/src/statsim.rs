//! Numerical checks of the statistical behavior of BBS for 1-D point sets.
//!
//! Point sets are drawn i.i.d. from one-dimensional Gaussians or Gaussian
//! mixtures and compared with the distance `|p - q|`. The module provides
//!
//! - the direct Monte-Carlo mean of BBS over sampled sets,
//! - the pair-probability integral `E_BBP` evaluated by Monte Carlo with
//!   analytic CDFs, which gives `E[BBS] = c * E_BBP` with
//!   `c = N_P * N_Q / min(N_P, N_Q)`,
//! - closed forms for the expected SSD and SAD between `N(0,1)` and `N(mu, sigma)`,
//! - the large-set probability that a fixed point has a best buddy,
//!   `f_Q(p) / (f_P(p) + f_Q(p))`, and its empirical counterpart,
//! - the χ² distance by Simpson quadrature and the large-set limit
//!   `E[BBS] -> 1/2 - χ²/4`.
//!
//! All randomness comes from ChaCha8 streams keyed by `(seed, stream)`, so
//! results do not depend on thread count.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::bbs::bbs;
use crate::error::{BbsError, Result};
use crate::pointset::{Measure, PointSet};

/// Name of the generator behind every random stream in this module.
pub const RNG_ALGORITHM: &str = "ChaCha8";
pub const DEFAULT_SUPPORT: f64 = 20.0;
const SAMPLE_BLOCK: usize = 4096;

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Gaussian or Gaussian mixture on the real line, with a nominal support
/// `[-M, M]` used by quadrature.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Distribution1D {
    components: Vec<Component>,
    support: f64,
}

impl Distribution1D {
    pub fn gaussian(mean: f64, std: f64) -> Result<Self> {
        Self::mixture(&[(1.0, mean, std)])
    }

    /// Components as `(weight, mean, std)`; weights must sum to 1.
    pub fn mixture(components: &[(f64, f64, f64)]) -> Result<Self> {
        if components.is_empty() {
            return Err(BbsError::Config("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BbsError::Config(format!("mixture weights sum to {total}, not 1")));
        }
        for &(w, m, s) in components {
            if !(w > 0.0 && s > 0.0 && m.is_finite() && s.is_finite()) {
                return Err(BbsError::Config(format!(
                    "invalid component (weight {w}, mean {m}, std {s})"
                )));
            }
        }
        Ok(Distribution1D {
            components: components
                .iter()
                .map(|&(weight, mean, std)| Component { weight, mean, std })
                .collect(),
            support: DEFAULT_SUPPORT,
        })
    }

    pub fn with_support(mut self, m: f64) -> Self {
        self.support = m;
        self
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let z = (x - c.mean) / c.std;
                c.weight * (-0.5 * z * z).exp() / (c.std * (2.0 * PI).sqrt())
            })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * 0.5 * erfc(-(x - c.mean) / c.std * FRAC_1_SQRT_2))
            .sum()
    }

    /// `1 - cdf(x)` without cancellation in the upper tail.
    pub fn sf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * 0.5 * erfc((x - c.mean) / c.std * FRAC_1_SQRT_2))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = if self.components.len() == 1 {
            &self.components[0]
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = self.components.last().expect("non-empty");
            for c in &self.components {
                acc += c.weight;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            chosen
        };
        let z: f64 = rng.sample(StandardNormal);
        c.mean + c.std * z
    }

    fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

/// The two mixtures of the best-buddy probability experiment: a shared
/// foreground `N(-5, 1)` with background `N(0, 1)` in P and `N(5, 1)` in Q,
/// equal weights.
pub fn two_mixture_example() -> (Distribution1D, Distribution1D) {
    (
        Distribution1D::mixture(&[(0.5, -5.0, 1.0), (0.5, 0.0, 1.0)]).expect("valid mixture"),
        Distribution1D::mixture(&[(0.5, -5.0, 1.0), (0.5, 5.0, 1.0)]).expect("valid mixture"),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub dist_p: Distribution1D,
    pub dist_q: Distribution1D,
    pub n_p: usize,
    pub n_q: usize,
    pub trials: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Equal set sizes `n`.
    pub fn new(dist_p: Distribution1D, dist_q: Distribution1D, n: usize, trials: usize, seed: u64) -> Self {
        SimConfig {
            dist_p,
            dist_q,
            n_p: n,
            n_q: n,
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p == 0 || self.n_q == 0 || self.trials == 0 {
            return Err(BbsError::Config("set sizes and trials must be positive".into()));
        }
        Ok(())
    }

    /// `N_P * N_Q / min(N_P, N_Q)`.
    pub fn pair_factor(&self) -> f64 {
        (self.n_p as f64 * self.n_q as f64) / self.n_p.min(self.n_q) as f64
    }
}

/// Sample mean with its standard error.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sum_sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        Estimate {
            mean: self.mean * c,
            std_error: self.std_error * c.abs(),
            samples: self.samples,
        }
    }
}

fn sorted_with_index(values: &[f64]) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = values.iter().copied().zip(0..).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    v
}

/// Index (in the original order) of the element of `sorted` nearest to `x`;
/// ties go to the lowest index.
fn nearest(sorted: &[(f64, usize)], x: f64) -> usize {
    let pos = sorted.partition_point(|&(v, _)| v < x);
    let right = sorted.get(pos).copied();
    let left = (pos > 0).then(|| {
        let lv = sorted[pos - 1].0;
        // lowest index among equal values sits first in the run
        sorted[sorted.partition_point(|&(v, _)| v < lv)]
    });
    match (left, right) {
        (Some(l), Some(r)) => {
            let (dl, dr) = (x - l.0, r.0 - x);
            match dl.partial_cmp(&dr).unwrap_or(Ordering::Equal) {
                Ordering::Less => l.1,
                Ordering::Greater => r.1,
                Ordering::Equal => l.1.min(r.1),
            }
        }
        (Some(l), None) => l.1,
        (None, Some(r)) => r.1,
        (None, None) => unreachable!("nearest() on an empty set"),
    }
}

/// Number of best-buddy pairs between two 1-D sets under `|p - q|`,
/// in `O(N log N)`.
pub fn best_buddy_count_1d(p: &[f64], q: &[f64]) -> usize {
    let sp = sorted_with_index(p);
    let sq = sorted_with_index(q);
    p.iter()
        .enumerate()
        .filter(|&(i, &x)| {
            let j = nearest(&sq, x);
            nearest(&sp, q[j]) == i
        })
        .count()
}

/// BBS of two 1-D sets.
pub fn bbs_1d(p: &[f64], q: &[f64]) -> f64 {
    best_buddy_count_1d(p, q) as f64 / p.len().min(q.len()) as f64
}

/// Mean BBS over `cfg.trials` independently sampled pairs of sets.
pub fn empirical_ebbs(cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    let values: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(cfg.seed, t as u64);
            let p = cfg.dist_p.sample_n(&mut rng, cfg.n_p);
            let q = cfg.dist_q.sample_n(&mut rng, cfg.n_q);
            bbs_1d(&p, &q)
        })
        .collect();
    Ok(Estimate::from_samples(&values))
}

/// Integrand of the pair probability at a sampled `(p, q)`.
#[inline]
pub fn ebbp_integrand(dist_p: &Distribution1D, dist_q: &Distribution1D, n_p: usize, n_q: usize, p: f64, q: f64) -> f64 {
    let d = (p - q).abs();
    let others_q = dist_q.cdf(p - d) + dist_q.sf(p + d);
    let others_p = dist_p.cdf(q - d) + dist_p.sf(q + d);
    others_q.powi((n_q - 1) as i32) * others_p.powi((n_p - 1) as i32)
}

/// Monte-Carlo estimate of `E_BBP`, the probability that a given pair
/// `(p_i, q_j)` are best buddies, from `samples` draws of `(p, q) ~ f_P x f_Q`.
pub fn integral_ebbp(cfg: &SimConfig, samples: usize) -> Result<Estimate> {
    cfg.validate()?;
    if samples == 0 {
        return Err(BbsError::Config("samples must be positive".into()));
    }
    let blocks = samples.div_ceil(SAMPLE_BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, b as u64);
            let n = SAMPLE_BLOCK.min(samples - b * SAMPLE_BLOCK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let p = cfg.dist_p.sample(&mut rng);
                let q = cfg.dist_q.sample(&mut rng);
                let v = ebbp_integrand(&cfg.dist_p, &cfg.dist_q, cfg.n_p, cfg.n_q, p, q);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Estimate::from_sums(s, s2, samples))
}

/// `E[BBS] = c * E_BBP`.
pub fn expected_bbs_from_integral(cfg: &SimConfig, samples: usize) -> Result<Estimate> {
    Ok(integral_ebbp(cfg, samples)?.scaled(cfg.pair_factor()))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(BbsError::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// `E[(p - q)^2] = 1 + mu^2 + sigma^2` for `p ~ N(0,1)`, `q ~ N(mu, sigma)`.
pub fn expected_ssd(mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(1.0 + mu * mu + sigma * sigma)
}

/// `E|p - q|` for `p ~ N(0,1)`, `q ~ N(mu, sigma)`: the folded-normal mean of
/// `N(mu, 1 + sigma^2)`.
pub fn expected_sad(mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let sd = (1.0 + sigma * sigma).sqrt();
    let phi_neg = 0.5 * erfc(mu / sd * FRAC_1_SQRT_2);
    Ok(sd * (2.0 / PI).sqrt() * (-mu * mu / (2.0 * sd * sd)).exp() + mu * (1.0 - 2.0 * phi_neg))
}

/// Large-set probability that a point at `p` in P has a best buddy in Q.
pub fn lemma1_analytic(dist_p: &Distribution1D, dist_q: &Distribution1D, p: f64) -> Result<f64> {
    let (fp, fq) = (dist_p.pdf(p), dist_q.pdf(p));
    if fp + fq <= 0.0 {
        return Err(BbsError::Numeric(format!("both densities vanish at {p}")));
    }
    Ok(fq / (fp + fq))
}

/// Empirical probability that a point pinned at `p` has a best buddy, for
/// every `p` in `points`. Each trial draws the other `n - 1` points of P and
/// all `n` points of Q once and reuses them across `points`.
pub fn lemma1_empirical_curve(
    dist_p: &Distribution1D,
    dist_q: &Distribution1D,
    points: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if n == 0 || trials == 0 {
        return Err(BbsError::Config("set size and trials must be positive".into()));
    }
    let hits: Vec<Vec<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let q = dist_q.sample_n(&mut rng, n);
            let rest = dist_p.sample_n(&mut rng, n - 1);
            points.iter().map(|&p| has_best_buddy(p, &rest, &q)).collect()
        })
        .collect();
    Ok((0..points.len())
        .map(|k| {
            let v: Vec<f64> = hits.iter().map(|h| if h[k] { 1.0 } else { 0.0 }).collect();
            Estimate::from_samples(&v)
        })
        .collect())
}

/// Single-point form of [`lemma1_empirical_curve`].
pub fn lemma1_empirical(
    dist_p: &Distribution1D,
    dist_q: &Distribution1D,
    p: f64,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(lemma1_empirical_curve(dist_p, dist_q, &[p], n, trials, seed)?[0])
}

/// `p` sits at index 0 of P, so it wins distance ties against `rest`.
fn has_best_buddy(p: f64, rest: &[f64], q: &[f64]) -> bool {
    let mut best = 0;
    let mut best_d = (q[0] - p).abs();
    for (j, &v) in q.iter().enumerate().skip(1) {
        let d = (v - p).abs();
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    let anchor = q[best];
    rest.iter().all(|&r| (r - anchor).abs() >= best_d)
}

/// Composite Simpson rule on `[a, b]` with at least `(b - a) / max_step`
/// intervals (rounded up to even).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, max_step: f64) -> f64 {
    let mut n = ((b - a) / max_step).ceil() as usize;
    n = n.max(2);
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn default_step(dist_p: &Distribution1D, dist_q: &Distribution1D) -> (f64, f64) {
    let m = dist_p.support().max(dist_q.support());
    (m, m / 2000.0)
}

fn quadrature(
    dist_p: &Distribution1D,
    dist_q: &Distribution1D,
    step: f64,
    term: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if step.is_nan() || step <= 0.0 {
        return Err(BbsError::Config(format!("quadrature step must be positive, got {step}")));
    }
    let m = dist_p.support().max(dist_q.support());
    let bad = std::cell::Cell::new(None);
    let value = simpson(
        |x| {
            let (f, g) = (dist_p.pdf(x), dist_q.pdf(x));
            // both densities underflowed: the integrand tends to 0
            if f + g == 0.0 {
                return 0.0;
            }
            let v = term(f, g);
            if !v.is_finite() {
                bad.set(Some(x));
            }
            v
        },
        -m,
        m,
        step,
    );
    match bad.get() {
        Some(x) => Err(BbsError::Numeric(format!("non-finite integrand at {x}"))),
        None => Ok(value),
    }
}

/// `χ² = ∫ (f_P - f_Q)^2 / (f_P + f_Q)` over `[-M, M]`.
pub fn chi_square(dist_p: &Distribution1D, dist_q: &Distribution1D, step: f64) -> Result<f64> {
    quadrature(dist_p, dist_q, step, |f, g| {
        let d = f - g;
        d * d / (f + g)
    })
}

/// `∫ f_P f_Q / (f_P + f_Q)` over `[-M, M]`, the large-set limit of E[BBS]
/// written directly.
pub fn overlap_integral(dist_p: &Distribution1D, dist_q: &Distribution1D, step: f64) -> Result<f64> {
    quadrature(dist_p, dist_q, step, |f, g| f * g / (f + g))
}

/// Large-set limit of E[BBS]: `1/2 - χ²/4`, with the χ² quadrature step `M / 2000`.
pub fn theorem1_limit(dist_p: &Distribution1D, dist_q: &Distribution1D) -> Result<f64> {
    let (_, step) = default_step(dist_p, dist_q);
    Ok(0.5 - chi_square(dist_p, dist_q, step)? / 4.0)
}

/// Mean BBS of 2-D point sets whose coordinates are drawn independently from
/// `(x, y)` marginals, under squared Euclidean distance.
pub fn empirical_ebbs_2d(
    p: (&Distribution1D, &Distribution1D),
    q: (&Distribution1D, &Distribution1D),
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Estimate> {
    if n == 0 || trials == 0 {
        return Err(BbsError::Config("set size and trials must be positive".into()));
    }
    let measure = Measure::color(0.0);
    let values: Result<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let mut draw = |dx: &Distribution1D, dy: &Distribution1D| {
                let mut v = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    v.push(dx.sample(&mut rng));
                    v.push(dy.sample(&mut rng));
                }
                PointSet::from_appearance(2, v)
            };
            let ps = draw(p.0, p.1)?;
            let qs = draw(q.0, q.1)?;
            bbs(&ps, &qs, &measure)
        })
        .collect();
    Ok(Estimate::from_samples(&values?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_handles_ties_and_ends() {
        let s = sorted_with_index(&[1.0, 3.0, 3.0, -1.0]);
        assert_eq!(nearest(&s, 2.0), 0);
        assert_eq!(nearest(&s, 3.1), 1);
        assert_eq!(nearest(&s, 10.0), 1);
        assert_eq!(nearest(&s, -5.0), 3);
        assert_eq!(nearest(&s, 0.0), 0);
    }

    #[test]
    fn single_point_sets_always_match() {
        let d = Distribution1D::gaussian(0.0, 1.0).unwrap();
        let cfg = SimConfig::new(d.clone(), Distribution1D::gaussian(3.0, 0.5).unwrap(), 1, 50, 7);
        assert_eq!(empirical_ebbs(&cfg).unwrap().mean, 1.0);
        assert_eq!(integral_ebbp(&cfg, 100).unwrap().mean, 1.0);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(expected_ssd(0.0, 1.0).unwrap(), 2.0);
        assert_eq!(expected_ssd(3.0, 2.0).unwrap(), 14.0);
        assert!((expected_sad(0.0, 1.0).unwrap() - 2.0 / PI.sqrt()).abs() < 1e-12);
        assert!(expected_ssd(0.0, 0.0).is_err());
        assert!(expected_sad(1.0, -1.0).is_err());
    }

    #[test]
    fn lemma1_symmetry() {
        let (fp, fq) = two_mixture_example();
        assert_eq!(lemma1_analytic(&fp, &fp, 0.3).unwrap(), 0.5);
        for p in [-6.0, -2.5, 0.0, 1.0, 5.0] {
            let a = lemma1_analytic(&fp, &fq, p).unwrap();
            let b = lemma1_analytic(&fq, &fp, p).unwrap();
            assert!((a + b - 1.0).abs() < 1e-12);
        }
        assert!(lemma1_analytic(&fp, &fq, 0.0).unwrap() < 1e-3);
        assert!(lemma1_analytic(&fp, &fq, 5.0).unwrap() > 0.999);
    }

    #[test]
    fn identical_distributions_have_zero_chi_square() {
        let d = Distribution1D::gaussian(0.0, 1.0).unwrap();
        assert_eq!(chi_square(&d, &d, 0.01).unwrap(), 0.0);
        assert!((theorem1_limit(&d, &d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 0.5);
        assert!((v - (15.0 / 4.0 - 3.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mixture_validation() {
        assert!(Distribution1D::mixture(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(Distribution1D::gaussian(0.0, 0.0).is_err());
        let d = Distribution1D::mixture(&[(0.3, -1.0, 1.0), (0.7, 2.0, 0.5)]).unwrap();
        assert!((d.cdf(1.3) + d.sf(1.3) - 1.0).abs() < 1e-15);
    }
}
