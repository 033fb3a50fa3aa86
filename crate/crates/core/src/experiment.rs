//! Reproducible experiment drivers.
//!
//! Trials are independent. Trial `i` of a run with master seed `s` draws all
//! of its randomness (salt, element nonce) from ChaCha8 seeded with
//! `seed_from_u64(s)` on stream `i`; matched clean-control trials use stream
//! `CONTROL_STREAM_BASE + i`. Trials run in parallel and are reported in
//! index order, so a run is a pure function of its configuration.
//!
//! Synthetic distinct elements for trial streams are 16 bytes: the trial's
//! 64-bit nonce followed by the element's ordinal, both little-endian.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{filter_m2, fresh_estimate, BlackBox, OracleBudget, RoundStats};
use crate::error::Result;
use crate::flows::{generate_flows, FlowTemplate};
use crate::hll::{HashConfig, Sketch};
use crate::sns::{SnsSketch, Verdict};
use crate::stats::{mean_std, normal_cdf, quantile_sorted, sns_sigma, DetectionParams};

pub const CONTROL_STREAM_BASE: u64 = 1 << 32;

pub fn trial_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// `count` distinct 16-byte elements keyed by `nonce`.
pub fn distinct_elements(nonce: u64, count: u64) -> impl Iterator<Item = [u8; 16]> {
    (0..count).map(move |i| {
        let mut e = [0u8; 16];
        e[..8].copy_from_slice(&nonce.to_le_bytes());
        e[8..].copy_from_slice(&i.to_le_bytes());
        e
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub name: String,
    pub value: f64,
    pub low: f64,
    pub high: f64,
    pub pass: bool,
}

impl BandCheck {
    pub fn new(name: &str, value: f64, low: f64, high: f64) -> Self {
        BandCheck {
            name: name.to_string(),
            value,
            low,
            high,
            pass: value >= low && value <= high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport<C, R, S> {
    pub experiment: String,
    pub config: C,
    pub records: Vec<R>,
    pub summary: S,
    pub checks: Vec<BandCheck>,
}

impl<C, R, S> ExperimentReport<C, R, S> {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub std: f64,
    pub p01: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

impl Distribution {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&sorted, p);
        Distribution {
            mean,
            std,
            p01: q(0.01),
            p05: q(0.05),
            p50: q(0.5),
            p95: q(0.95),
            p99: q(0.99),
        }
    }
}

/// How the detection threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    FpTarget(f64),
    Fixed(f64),
}

impl Threshold {
    pub fn params(self, m_salted: usize, m_unsalted: usize) -> Result<DetectionParams> {
        match self {
            Threshold::FpTarget(p) => DetectionParams::calibrate(m_salted, m_unsalted, p),
            Threshold::Fixed(d) => DetectionParams::with_threshold(m_salted, m_unsalted, d),
        }
    }
}

/// Shared SNS geometry for the SNS experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnsSetup {
    pub m_salted: usize,
    pub m_unsalted: usize,
    pub threshold: Threshold,
    pub public: HashConfig,
    pub two_sided: bool,
}

impl Default for SnsSetup {
    fn default() -> Self {
        SnsSetup {
            m_salted: 1024,
            m_unsalted: 1024,
            threshold: Threshold::FpTarget(normal_cdf(-5.0)),
            public: HashConfig::default(),
            two_sided: false,
        }
    }
}

impl SnsSetup {
    fn build(&self, params: DetectionParams, rng: &mut impl RngCore) -> Result<SnsSketch> {
        let mut sns = SnsSketch::with_params(self.m_salted, self.m_unsalted, self.public, params, rng)?;
        sns.set_two_sided(self.two_sided);
        Ok(sns)
    }
}

/// Runs `trials` clean SNS trials of `cardinality` fresh distinct elements
/// on streams `stream_base + i`.
pub fn clean_sns_trials(
    setup: &SnsSetup,
    cardinality: u64,
    trials: usize,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<Verdict>> {
    let params = setup.threshold.params(setup.m_salted, setup.m_unsalted)?;
    (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, stream_base + i);
            let mut sns = setup.build(params, &mut rng)?;
            sns.insert_all(distinct_elements(rng.random(), cardinality));
            Ok(sns.check())
        })
        .collect()
}

/// Relative errors `estimate / n - 1`, one fresh unsalted sketch per trial.
pub fn accuracy_trials(precision: u8, n: u64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    Sketch::new(precision, HashConfig::default())?;
    Ok((0..trials as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(seed, i);
            let mut s = Sketch::new(precision, HashConfig::default()).expect("validated");
            s.insert_all(distinct_elements(rng.random(), n));
            s.estimate() / n as f64 - 1.0
        })
        .collect())
}

// ---- estimate-gap distribution ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig4Config {
    pub trials: usize,
    pub cardinality: u64,
    pub setup: SnsSetup,
    pub seed: u64,
    pub bins: usize,
    /// Histogram covers `[-range, range]`.
    pub range: f64,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Fig4Config {
            trials: 1000,
            cardinality: 100_000,
            setup: SnsSetup::default(),
            seed: 1,
            bins: 50,
            range: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub trial: usize,
    pub c_salted: f64,
    pub c_unsalted: f64,
    /// `(C_s - C_ns) / C` with `C` the true cardinality.
    pub diff: f64,
    pub attacked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    pub empirical_density: f64,
    /// Normal(0, sigma) density averaged over the bin.
    pub theoretical_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Summary {
    pub sigma: f64,
    pub d_t: f64,
    pub diff: Distribution,
    pub fraction_beyond_dt: f64,
    pub flagged_fraction: f64,
    pub histogram: Vec<HistogramBin>,
}

pub type Fig4Report = ExperimentReport<Fig4Config, GapRecord, Fig4Summary>;

pub fn histogram(xs: &[f64], bins: usize, range: f64, sigma: f64) -> Vec<HistogramBin> {
    let width = 2.0 * range / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        if x >= -range && x < range {
            let k = (((x + range) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let total = xs.len().max(1) as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let low = -range + k as f64 * width;
            let high = low + width;
            HistogramBin {
                low,
                high,
                count,
                empirical_density: count as f64 / (total * width),
                theoretical_density: (normal_cdf(high / sigma) - normal_cdf(low / sigma)) / width,
            }
        })
        .collect()
}

pub fn fig4(config: &Fig4Config) -> Result<Fig4Report> {
    if config.trials < 2 || config.bins == 0 || config.range.is_nan() || config.range <= 0.0 {
        return Err(crate::Error::InvalidParameter(
            "fig4 needs trials >= 2, bins >= 1, range > 0".into(),
        ));
    }
    let params = config
        .setup
        .threshold
        .params(config.setup.m_salted, config.setup.m_unsalted)?;
    let verdicts = clean_sns_trials(&config.setup, config.cardinality, config.trials, config.seed, 0)?;
    let c = config.cardinality as f64;
    let records: Vec<GapRecord> = verdicts
        .iter()
        .enumerate()
        .map(|(trial, v)| GapRecord {
            trial,
            c_salted: v.c_salted,
            c_unsalted: v.c_unsalted,
            diff: (v.c_salted - v.c_unsalted) / c,
            attacked: v.attacked,
        })
        .collect();
    let diffs: Vec<f64> = records.iter().map(|r| r.diff).collect();
    let n = diffs.len() as f64;
    let sigma = sns_sigma(config.setup.m_salted, config.setup.m_unsalted)?;
    let dist = Distribution::of(&diffs);
    let summary = Fig4Summary {
        sigma,
        d_t: params.d_t,
        diff: dist,
        fraction_beyond_dt: diffs.iter().filter(|d| d.abs() > params.d_t).count() as f64 / n,
        flagged_fraction: records.iter().filter(|r| r.attacked).count() as f64 / n,
        histogram: histogram(&diffs, config.bins, config.range, sigma),
    };
    let se = sigma / n.sqrt();
    let checks = vec![
        BandCheck::new("std_within_13pct_of_sigma", dist.std, 0.87 * sigma, 1.13 * sigma),
        BandCheck::new("mean_within_4_standard_errors", dist.mean, -4.0 * se, 4.0 * se),
        BandCheck::new("fraction_beyond_dt", summary.fraction_beyond_dt, 0.0, 1.0 / n),
    ];
    Ok(ExperimentReport {
        experiment: "fig4".into(),
        config: *config,
        records,
        summary,
        checks,
    })
}

/// Histogram as CSV: `bin_low,bin_high,count,empirical_density,theoretical_density`.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_low,bin_high,count,empirical_density,theoretical_density\n");
    for b in bins {
        out.push_str(&format!(
            "{:.6},{:.6},{},{:.9},{:.9}\n",
            b.low, b.high, b.count, b.empirical_density, b.theoretical_density
        ));
    }
    out
}

// ---- detection rate ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub setup: SnsSetup,
    pub trials: usize,
    pub control_trials: usize,
    /// Clean elements added per attack element.
    pub clean_ratio: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            setup: SnsSetup {
                threshold: Threshold::Fixed(0.23),
                ..SnsSetup::default()
            },
            trials: 100,
            control_trials: 100,
            clean_ratio: 0.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectRecord {
    pub trial: usize,
    pub control: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub attack_size: usize,
    pub clean_per_trial: u64,
    pub d_t: f64,
    pub sigma: f64,
    pub below_floor: bool,
    pub detection_rate: Option<f64>,
    pub indeterminate_rate: Option<f64>,
    pub mean_normalized_diff: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub control_mean_normalized_diff: Option<f64>,
}

pub type DetectReport = ExperimentReport<DetectConfig, DetectRecord, DetectSummary>;

fn rate(verdicts: &[Verdict], f: impl Fn(&Verdict) -> bool) -> Option<f64> {
    (!verdicts.is_empty()).then(|| verdicts.iter().filter(|v| f(v)).count() as f64 / verdicts.len() as f64)
}

fn mean_diff(verdicts: &[Verdict]) -> Option<f64> {
    (!verdicts.is_empty()).then(|| verdicts.iter().map(|v| v.normalized_diff).sum::<f64>() / verdicts.len() as f64)
}

/// Streams `attack` (plus fresh clean traffic) through a freshly salted SNS
/// sketch per trial, alongside matched clean controls of equal cardinality.
/// An empty attack set yields no verdicts and sets `below_floor`.
pub fn detect<E: AsRef<[u8]> + Sync>(attack: &[E], config: &DetectConfig) -> Result<DetectReport> {
    let setup = &config.setup;
    let params = setup.threshold.params(setup.m_salted, setup.m_unsalted)?;
    let clean_per_trial = (attack.len() as f64 * config.clean_ratio.max(0.0)).round() as u64;
    let total = attack.len() as u64 + clean_per_trial;
    let floor = crate::sns::FLOOR_FACTOR * setup.m_salted.max(setup.m_unsalted) as f64;

    let (attacked, control) = if attack.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let attacked: Vec<Verdict> = (0..config.trials as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = trial_rng(config.seed, i);
                let mut sns = setup.build(params, &mut rng)?;
                sns.insert_all(attack);
                sns.insert_all(distinct_elements(rng.random(), clean_per_trial));
                Ok(sns.check())
            })
            .collect::<Result<_>>()?;
        let control = clean_sns_trials(setup, total, config.control_trials, config.seed, CONTROL_STREAM_BASE)?;
        (attacked, control)
    };

    let records = attacked
        .iter()
        .enumerate()
        .map(|(trial, &verdict)| DetectRecord {
            trial,
            control: false,
            verdict,
        })
        .chain(control.iter().enumerate().map(|(trial, &verdict)| DetectRecord {
            trial,
            control: true,
            verdict,
        }))
        .collect();
    let summary = DetectSummary {
        attack_size: attack.len(),
        clean_per_trial,
        d_t: params.d_t,
        sigma: params.sigma,
        below_floor: (total as f64) < floor,
        detection_rate: rate(&attacked, |v| v.attacked),
        indeterminate_rate: rate(&attacked, |v| v.indeterminate),
        mean_normalized_diff: mean_diff(&attacked),
        false_positive_rate: rate(&control, |v| v.attacked),
        control_mean_normalized_diff: mean_diff(&control),
    };
    let mut checks = Vec::new();
    if let Some(fp) = summary.false_positive_rate {
        // one-sided tail plus a 4-sigma binomial allowance
        let p = params.false_positive_probability() * if setup.two_sided { 2.0 } else { 1.0 };
        let slack = 4.0 * (p * (1.0 - p) / control.len() as f64).sqrt();
        checks.push(BandCheck::new(
            "false_positive_rate",
            fp,
            0.0,
            p + slack + 1.0 / control.len() as f64,
        ));
    }
    Ok(ExperimentReport {
        experiment: "detect".into(),
        config: *config,
        records,
        summary,
        checks,
    })
}

// ---- black-box filtering ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2Config {
    pub candidates: usize,
    pub rounds: u32,
    pub precision: u8,
    pub public: HashConfig,
    pub seed: u64,
}

impl Default for M2Config {
    fn default() -> Self {
        M2Config {
            candidates: 250_000,
            rounds: 3,
            precision: 14,
            public: HashConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct M2RoundRecord {
    pub round: u32,
    pub input: usize,
    pub retained: usize,
    /// Fresh-victim estimate of the retained set.
    pub retained_estimate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct M2Summary {
    pub retained: usize,
    pub retained_estimate: f64,
    pub ratio: f64,
    pub budget: OracleBudget,
}

pub type M2Report = ExperimentReport<M2Config, M2RoundRecord, M2Summary>;

/// Black-box filtering of random flows against an unsalted victim, plus the
/// retained set (the attack set itself).
pub fn m2(config: &M2Config) -> Result<(M2Report, crate::attack::AttackSet)> {
    if config.rounds == 0 {
        return Err(crate::Error::InvalidParameter("rounds must be at least 1".into()));
    }
    let template = Sketch::new(config.precision, config.public)?;
    let candidates: Vec<Vec<u8>> = generate_flows(config.seed, config.candidates, &FlowTemplate::default())?
        .iter()
        .map(|f| f.encode())
        .collect::<Result<_>>()?;

    let mut budget = OracleBudget::default();
    let mut records = Vec::with_capacity(config.rounds as usize);
    let mut current = candidates;
    for round in 1..=config.rounds {
        let out = filter_m2(|| BlackBox::new(template.empty_like()), &current, 1, &mut budget)?;
        let RoundStats { input, retained, .. } = out.rounds[0];
        current = out.set.into_elements();
        let est = fresh_estimate(&template, &current);
        records.push(M2RoundRecord {
            round,
            input,
            retained,
            retained_estimate: est,
            ratio: if retained > 0 { est / retained as f64 } else { f64::NAN },
        });
    }
    let last = *records.last().expect("at least one round");
    let summary = M2Summary {
        retained: last.retained,
        retained_estimate: last.retained_estimate,
        ratio: last.ratio,
        budget,
    };
    let checks = vec![BandCheck::new("final_ratio", last.ratio, 0.0, 0.3)];
    let set = crate::attack::AttackSet::new(
        current,
        crate::attack::AttackModel::M2,
        Some(config.public.fingerprint(config.precision)),
    );
    Ok((
        ExperimentReport {
            experiment: "m2".into(),
            config: *config,
            records,
            summary,
            checks,
        },
        set,
    ))
}
