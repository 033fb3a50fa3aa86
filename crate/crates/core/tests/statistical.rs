//! Seeded statistical checks of the sketch, the attacks and the guard.

use hllguard::attack::craft_m1;
use hllguard::experiment::{clean_sns_trials, distinct_elements, m2, trial_rng, M2Config, SnsSetup};
use hllguard::hll::{HashConfig, Sketch};
use hllguard::sns::SnsSketch;
use hllguard::stats::{mean_std, normal_cdf, pearson};
use rand::RngCore;

const RSE_1024: f64 = 1.04 / 32.0;

#[test]
fn salted_and_unsalted_estimates_are_uncorrelated() {
    let setup = SnsSetup::default();
    let verdicts = clean_sns_trials(&setup, 20_000, 300, 11, 0).unwrap();
    let s: Vec<f64> = verdicts.iter().map(|v| v.c_salted).collect();
    let u: Vec<f64> = verdicts.iter().map(|v| v.c_unsalted).collect();
    let r = pearson(&s, &u);
    assert!(r.abs() < 0.2, "correlation {r}");
}

#[test]
fn salt_defeats_m1() {
    let attack = craft_m1(&HashConfig::default(), 10, 10_000, distinct_elements(5, u64::MAX))
        .unwrap()
        .set
        .into_elements();
    let mut rng = trial_rng(5, 1);
    let errs: Vec<f64> = (0..200)
        .map(|_| {
            let mut s = Sketch::new(10, HashConfig::default().with_salt(rng.next_u64())).unwrap();
            s.insert_all(&attack);
            s.estimate() / attack.len() as f64 - 1.0
        })
        .collect();
    let (mean, std) = mean_std(&errs);
    assert!(mean.abs() < 4.0 * RSE_1024 / (200f64).sqrt() + 0.01, "mean {mean}");
    assert!((0.75 * RSE_1024..=1.25 * RSE_1024).contains(&std), "std {std}");
}

#[test]
fn averaging_matches_a_double_size_sketch() {
    let n = 100_000.0;
    let verdicts = clean_sns_trials(&SnsSetup::default(), n as u64, 500, 12, 0).unwrap();
    let rel: Vec<f64> = verdicts.iter().map(|v| v.trusted_estimate / n - 1.0).collect();
    let (_, std) = mean_std(&rel);
    let bound = 1.1 * 1.04 / (2048f64).sqrt();
    assert!(std <= bound, "relative std {std} above {bound}");
}

#[test]
fn m2_ratio_does_not_grow_with_rounds() {
    let ratios: Vec<Vec<f64>> = (0..10)
        .map(|seed| {
            let (report, _) = m2(&M2Config {
                candidates: 60_000,
                rounds: 3,
                precision: 12,
                seed,
                ..M2Config::default()
            })
            .unwrap();
            report.records.iter().map(|r| r.ratio).collect()
        })
        .collect();
    let median = |round: usize| {
        let mut xs: Vec<f64> = ratios.iter().map(|r| r[round]).collect();
        xs.sort_by(f64::total_cmp);
        (xs[4] + xs[5]) / 2.0
    };
    for round in 1..3 {
        assert!(
            median(round) <= median(round - 1),
            "median ratio rose at round {}: {} -> {}",
            round + 1,
            median(round - 1),
            median(round)
        );
    }
}

#[test]
fn sns_flags_black_box_attack_set() {
    let (_, set) = m2(&M2Config {
        candidates: 100_000,
        precision: 10,
        ..M2Config::default()
    })
    .unwrap();
    let mut rng = trial_rng(13, 0);
    let mut ratios = Vec::new();
    for _ in 0..20 {
        let mut sns = SnsSketch::new(1024, 1024, normal_cdf(-5.0), &mut rng).unwrap();
        sns.insert_all(set.elements());
        let v = sns.check();
        assert!(v.attacked && !v.indeterminate, "{v:?}");
        assert_eq!(v.trusted_estimate, v.c_salted);
        ratios.push(v.c_unsalted / v.c_salted);
    }
    let (mean, _) = mean_std(&ratios);
    assert!((0.15..=0.35).contains(&mean), "C_ns / C_s averaged {mean}");
}
