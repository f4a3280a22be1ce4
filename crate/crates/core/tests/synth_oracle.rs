//! The synthetic generator against closed-form and brute-force references.

use statrs::distribution::{ContinuousCDF, Normal};

use lowfpr::analysis::{observed_families, uncertainty_by_novelty};
use lowfpr::data::Split;
use lowfpr::roc;
use lowfpr::synth::{generate, is_novel_family, oracle_metrics, SynthConfig};
use lowfpr::uncertainty::{ensemble_scores, Measure};

fn empirical_auc(cfg: &SynthConfig) -> f64 {
    let ds = generate(cfg).unwrap();
    roc::auc(&roc::roc_curve(&ensemble_scores(&ds), &ds.labels()).unwrap())
}

#[test]
fn oracle_matches_gaussian_overlap() {
    let phi = Normal::new(0.0, 1.0).unwrap();
    let n = 1_000_000;
    for (mu, sd) in [(1.0, 1.0), (0.5, 2.0), (2.0, 1.5)] {
        let cfg = SynthConfig {
            benign_logit_mean: -mu,
            malicious_logit_mean: mu,
            logit_sd: sd,
            member_noise_sd_base: 0.0,
            member_noise_sd_novel: 0.0,
            ..SynthConfig::default()
        };
        let o = oracle_metrics(&cfg, n, &[0.999_999, 0.1]).unwrap();
        // logistic is monotone, so the ROC is that of the latent Gaussians
        let closed = phi.cdf(2.0 * mu / (2.0f64.sqrt() * sd));
        assert!(
            (o.auc - closed).abs() < 3.0 / (n as f64).sqrt(),
            "mu {mu} sd {sd}: oracle {} vs closed form {closed}",
            o.auc
        );
        // TPR at FPR 0.1 for two Gaussians: 1 - Phi(z_0.9 - d)
        let d = 2.0 * mu / sd;
        let tpr = 1.0 - phi.cdf(phi.inverse_cdf(0.9) - d);
        assert!((o.tpr_at_fpr[1].1 - tpr).abs() < 0.005, "{} vs {tpr}", o.tpr_at_fpr[1].1);
    }
}

#[test]
fn oracle_tpr_at_full_fpr_is_one() {
    for seed in 0..3 {
        let cfg = SynthConfig::scenario("novelty", seed).unwrap();
        let o = oracle_metrics(&cfg, 20_000, &[0.999_999_99]).unwrap();
        assert_eq!(o.tpr_at_fpr[0].1, 1.0);
        assert_eq!(o.n_pos + o.n_neg, 20_000);
    }
}

#[test]
fn empirical_auc_within_three_standard_errors_of_oracle() {
    let mut rng_state = 0x5eedu64;
    let mut next = || {
        rng_state = lowfpr::mix_seed(rng_state, 1);
        (rng_state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..20 {
        let cfg = SynthConfig {
            n_benign: 50_000,
            n_malicious: 50_000,
            member_count: 1 + (next() * 6.0) as usize,
            benign_logit_mean: -3.0 * next(),
            malicious_logit_mean: 3.0 * next(),
            logit_sd: 0.5 + 2.0 * next(),
            member_noise_sd_base: next(),
            member_noise_sd_novel: 1.0 + next(),
            novel_fraction: 0.3 * next(),
            seed: i,
            ..SynthConfig::default()
        };
        let emp = empirical_auc(&cfg);
        let o = oracle_metrics(&cfg, 1_000_000, &[]).unwrap();
        // Hanley-McNeil standard error of the 100k-sample estimate
        let a = o.auc;
        let (np, nn) = (50_000.0, 50_000.0);
        let q1 = a / (2.0 - a);
        let q2 = 2.0 * a * a / (1.0 + a);
        let se = ((a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn)).sqrt();
        // the oracle itself carries Monte Carlo error at 1e6 samples
        let se_total = (se * se * (1.0 + 0.1)).sqrt();
        assert!((emp - a).abs() <= 3.0 * se_total, "config {i}: empirical {emp} oracle {a} se {se_total}");
    }
}

#[test]
fn separable_scenario_has_near_perfect_auc() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            n_benign: 50_000,
            n_malicious: 50_000,
            ..SynthConfig::scenario("separable", seed).unwrap()
        };
        assert!(empirical_auc(&cfg) > 0.999);
    }
}

#[test]
fn novel_samples_carry_more_epistemic_uncertainty() {
    for seed in 0..20 {
        let cfg = SynthConfig {
            n_benign: 2_000,
            n_malicious: 4_000,
            novel_fraction: 0.5,
            member_noise_sd_novel: 3.0,
            seed,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let known = observed_families(&ds.filter(|r| r.split != Split::Test));
        assert!(known.iter().all(|f| !is_novel_family(f)));
        let g = uncertainty_by_novelty(&ds.filter_split(Split::Test), &known, Measure::Epistemic).unwrap();
        assert!(g.mean(1).unwrap() > g.mean(0).unwrap(), "seed {seed}");
    }
}
