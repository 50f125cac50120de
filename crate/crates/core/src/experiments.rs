//! Named simulation runs that produce CSV tables.
//!
//! Every row repeats the run configuration (experiment, seed, rng, set size,
//! trials) so a table can be read without its command line.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BbsError, Result};
use crate::statsim::{
    chi_square, empirical_ebbs, expected_bbs_from_integral, expected_sad, expected_ssd, lemma1_analytic,
    lemma1_empirical_curve, stream_rng, theorem1_limit, two_mixture_example, Distribution1D, Estimate,
    SimConfig, RNG_ALGORITHM,
};

/// Quadrature step used for the χ² column.
const CHI_SQUARE_STEP: f64 = 1e-3;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Experiment {
    /// Expected BBS of `N(0,1)` against `N(mu, sigma)` over a grid.
    Fig4,
    /// Best-buddy probability of a pinned point along a grid of positions.
    Fig5,
    /// Empirical expected BBS against the χ² limit on several distributions.
    Theorem1,
    /// Sampled SSD and SAD means against their closed forms.
    SsdSad,
}

impl Experiment {
    pub const NAMES: [&'static str; 4] = ["fig4", "fig5", "theorem1", "ssd_sad"];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Fig4 => "fig4",
            Experiment::Fig5 => "fig5",
            Experiment::Theorem1 => "theorem1",
            Experiment::SsdSad => "ssd_sad",
        }
    }

    /// Set size used when none is given.
    pub fn default_n(&self) -> usize {
        match self {
            Experiment::Fig4 => 100,
            Experiment::Fig5 | Experiment::Theorem1 => 10_000,
            Experiment::SsdSad => 1,
        }
    }

    /// Trials (or Monte-Carlo samples for `fig4` and `ssd_sad`) used when none is given.
    pub fn default_trials(&self) -> usize {
        match self {
            Experiment::Fig4 => 100_000,
            Experiment::Fig5 => 500,
            Experiment::Theorem1 => 20,
            Experiment::SsdSad => 1_000_000,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = BbsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig4" => Ok(Experiment::Fig4),
            "fig5" => Ok(Experiment::Fig5),
            "theorem1" => Ok(Experiment::Theorem1),
            "ssd_sad" => Ok(Experiment::SsdSad),
            other => Err(BbsError::Config(format!(
                "unknown experiment {other:?}; valid experiments: {}",
                Experiment::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct RunParams {
    pub seed: u64,
    pub n: usize,
    pub trials: usize,
}

impl RunParams {
    pub fn defaults(exp: Experiment, seed: u64) -> Self {
        RunParams {
            seed,
            n: exp.default_n(),
            trials: exp.default_trials(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.trials == 0 {
            return Err(BbsError::Config("--n and --trials must be positive".into()));
        }
        Ok(())
    }
}

/// A finished run: column names and one row of values per grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub experiment: Experiment,
    pub params: RunParams,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(experiment: Experiment, params: RunParams, columns: Vec<&'static str>) -> Self {
        Table {
            experiment,
            params,
            columns,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, values: Vec<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(values);
    }

    /// CSV text; the echo columns come first on every row.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["experiment", "seed", "rng", "n", "trials"];
        header.extend(&self.columns);
        w.write_record(&header).map_err(csv_error)?;
        let echo = [
            self.experiment.name().to_string(),
            self.params.seed.to_string(),
            RNG_ALGORITHM.to_string(),
            self.params.n.to_string(),
            self.params.trials.to_string(),
        ];
        for row in &self.rows {
            w.write_record(echo.iter().chain(row)).map_err(csv_error)?;
        }
        w.into_inner().map_err(|e| BbsError::Format(format!("csv: {e}")))
    }
}

fn csv_error(e: csv::Error) -> BbsError {
    BbsError::Format(format!("csv: {e}"))
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn run(exp: Experiment, params: RunParams) -> Result<Table> {
    params.validate()?;
    match exp {
        Experiment::Fig4 => fig4(params),
        Experiment::Fig5 => fig5(params),
        Experiment::Theorem1 => theorem1(params),
        Experiment::SsdSad => ssd_sad(params),
    }
}

pub const FIG4_MEANS: [f64; 6] = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
pub const FIG4_SIGMAS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 3.0, 4.0];

fn fig4(params: RunParams) -> Result<Table> {
    let mut t = Table::new(Experiment::Fig4, params, vec!["mu", "sigma", "e_bbs", "std_error"]);
    let p = Distribution1D::gaussian(0.0, 1.0)?;
    for (a, &mu) in FIG4_MEANS.iter().enumerate() {
        for (b, &sigma) in FIG4_SIGMAS.iter().enumerate() {
            let q = Distribution1D::gaussian(mu, sigma)?;
            let seed = params.seed.wrapping_add((a * FIG4_SIGMAS.len() + b) as u64);
            let cfg = SimConfig::new(p.clone(), q, params.n, 1, seed);
            let e = expected_bbs_from_integral(&cfg, params.trials)?;
            t.push(vec![num(mu), num(sigma), num(e.mean), num(e.std_error)]);
        }
    }
    Ok(t)
}

/// 41 positions on `[-8, 8]`.
pub fn fig5_grid() -> Vec<f64> {
    (0..41).map(|i| -8.0 + 0.4 * i as f64).collect()
}

fn fig5(params: RunParams) -> Result<Table> {
    let mut t = Table::new(
        Experiment::Fig5,
        params,
        vec!["p", "empirical", "std_error", "analytic", "abs_diff"],
    );
    let (dp, dq) = two_mixture_example();
    let grid = fig5_grid();
    let curve = lemma1_empirical_curve(&dp, &dq, &grid, params.n, params.trials, params.seed)?;
    for (&p, e) in grid.iter().zip(curve) {
        let a = lemma1_analytic(&dp, &dq, p)?;
        t.push(vec![num(p), num(e.mean), num(e.std_error), num(a), num((e.mean - a).abs())]);
    }
    Ok(t)
}

/// Named distribution pairs for the χ² limit run.
pub fn theorem1_configs() -> Result<Vec<(&'static str, Distribution1D, Distribution1D)>> {
    let (fp, fq) = two_mixture_example();
    let g = Distribution1D::gaussian;
    Ok(vec![
        ("two-mixture example", fp, fq),
        ("N(0,1) vs N(0,1)", g(0.0, 1.0)?, g(0.0, 1.0)?),
        ("N(0,1) vs N(1,2)", g(0.0, 1.0)?, g(1.0, 2.0)?),
        (
            "0.3N(-2,1)+0.7N(2,0.5) vs N(0,1.5)",
            Distribution1D::mixture(&[(0.3, -2.0, 1.0), (0.7, 2.0, 0.5)])?,
            g(0.0, 1.5)?,
        ),
    ])
}

fn theorem1(params: RunParams) -> Result<Table> {
    let mut t = Table::new(
        Experiment::Theorem1,
        params,
        vec!["config", "chi_square", "limit", "empirical", "std_error", "abs_diff"],
    );
    for (i, (name, p, q)) in theorem1_configs()?.into_iter().enumerate() {
        let chi = chi_square(&p, &q, CHI_SQUARE_STEP)?;
        let limit = theorem1_limit(&p, &q)?;
        let cfg = SimConfig::new(p, q, params.n, params.trials, params.seed.wrapping_add(i as u64));
        let e = empirical_ebbs(&cfg)?;
        t.push(vec![
            name.to_string(),
            num(chi),
            num(limit),
            num(e.mean),
            num(e.std_error),
            num((e.mean - limit).abs()),
        ]);
    }
    Ok(t)
}

pub const MOMENT_GRID: [(f64, f64); 5] = [(0.0, 1.0), (3.0, 2.0), (5.0, 0.5), (1.0, 0.25), (-2.0, 3.0)];

/// Sampled `E(p - q)^2` and `E|p - q|` for `p ~ N(0,1)`, `q ~ N(mu, sigma)`.
fn sampled_moments(mu: f64, sigma: f64, samples: usize, seed: u64) -> (Estimate, Estimate) {
    let mut rng = stream_rng(seed, 0);
    let (mut sq, mut abs) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    for _ in 0..samples {
        let p: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let d = p - (mu + sigma * z);
        sq.push(d * d);
        abs.push(d.abs());
    }
    (Estimate::from_samples(&sq), Estimate::from_samples(&abs))
}

fn ssd_sad(params: RunParams) -> Result<Table> {
    let mut t = Table::new(
        Experiment::SsdSad,
        params,
        vec!["mu", "sigma", "ssd_sampled", "ssd_closed", "sad_sampled", "sad_closed"],
    );
    for (i, &(mu, sigma)) in MOMENT_GRID.iter().enumerate() {
        let (ssd, sad) = sampled_moments(mu, sigma, params.trials, params.seed.wrapping_add(i as u64));
        t.push(vec![
            num(mu),
            num(sigma),
            num(ssd.mean),
            num(expected_ssd(mu, sigma)?),
            num(sad.mean),
            num(expected_sad(mu, sigma)?),
        ]);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(exp: Experiment) -> RunParams {
        let mut p = RunParams::defaults(exp, 3);
        p.trials = p.trials.clamp(2, 200);
        p.n = p.n.min(200);
        p
    }

    #[test]
    fn names_round_trip() {
        for name in Experiment::NAMES {
            assert_eq!(name.parse::<Experiment>().unwrap().name(), name);
        }
        let err = "fig6".parse::<Experiment>().unwrap_err().to_string();
        assert!(err.contains("ssd_sad"), "{err}");
    }

    #[test]
    fn tables_have_echo_and_are_deterministic() {
        for exp in [Experiment::Fig5, Experiment::Theorem1, Experiment::SsdSad] {
            let a = run(exp, small(exp)).unwrap().to_csv().unwrap();
            let b = run(exp, small(exp)).unwrap().to_csv().unwrap();
            assert_eq!(a, b);
            let text = String::from_utf8(a).unwrap();
            let second = text.lines().nth(1).unwrap();
            assert!(second.starts_with(&format!("{},3,ChaCha8,", exp.name())), "{second}");
        }
    }

    #[test]
    fn fig4_peaks_at_unit_gaussian() {
        let mut p = RunParams::defaults(Experiment::Fig4, 1);
        p.trials = 20_000;
        let t = run(Experiment::Fig4, p).unwrap();
        assert_eq!(t.rows.len(), FIG4_MEANS.len() * FIG4_SIGMAS.len());
        let best = t
            .rows
            .iter()
            .max_by(|a, b| a[2].parse::<f64>().unwrap().total_cmp(&b[2].parse::<f64>().unwrap()))
            .unwrap();
        assert_eq!((best[0].as_str(), best[1].as_str()), ("0.000000", "1.000000"));
    }

    #[test]
    fn rejects_zero_trials() {
        let p = RunParams {
            seed: 0,
            n: 10,
            trials: 0,
        };
        assert!(matches!(run(Experiment::Fig5, p), Err(BbsError::Config(_))));
    }
}
