//! Seeded synthetic ensemble-score datasets.
//!
//! Every sample draws a latent logit from its cluster; each of the `T`
//! members then reports `logistic(latent + noise)` with zero-mean Gaussian
//! noise whose spread depends on the cluster. Clusters:
//!
//! * benign, optionally with an *ambiguous* sub-cluster of benign samples
//!   that score high but on which members disagree strongly;
//! * malicious from seen families;
//! * malicious from novel families, confined to the test split.
//!
//! Randomness comes from ChaCha8 with one stream per sample index (stream id
//! = sample index, key derived from the seed), so output is independent of
//! the number of worker threads and reproducible on any platform.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Label, PredictionDataset, SampleRecord, Split};
use crate::error::{Error, Result};

/// Stream offset separating oracle regeneration from the main stream.
const ORACLE_STREAM: u64 = 0x6f72_6163_6c65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_benign: usize,
    pub n_malicious: usize,
    pub member_count: usize,
    /// Share of malicious samples drawn from the novel-family cluster.
    pub novel_fraction: f64,
    pub benign_logit_mean: f64,
    pub malicious_logit_mean: f64,
    pub novel_logit_mean: f64,
    pub logit_sd: f64,
    pub member_noise_sd_base: f64,
    /// Member noise of the novel and ambiguous clusters.
    pub member_noise_sd_novel: f64,
    /// Share of benign samples drawn from the ambiguous cluster.
    pub ambiguous_fraction: f64,
    pub ambiguous_logit_mean: f64,
    pub seen_families: usize,
    pub novel_families: usize,
    pub seed: u64,
    /// (train, validation, test), summing to 1.
    pub split_fractions: [f64; 3],
}

impl Default for SynthConfig {
    /// 100k benign + 100k malicious, five members, split evenly between
    /// validation and test.
    fn default() -> Self {
        Self {
            n_benign: 100_000,
            n_malicious: 100_000,
            member_count: 5,
            novel_fraction: 0.0,
            benign_logit_mean: -2.5,
            malicious_logit_mean: 2.5,
            novel_logit_mean: 1.0,
            logit_sd: 1.6,
            member_noise_sd_base: 0.5,
            member_noise_sd_novel: 2.0,
            ambiguous_fraction: 0.0,
            ambiguous_logit_mean: 3.0,
            seen_families: 8,
            novel_families: 2,
            seed: 0,
            split_fractions: [0.0, 0.5, 0.5],
        }
    }
}

impl SynthConfig {
    /// Named presets: `default`, `heteroscedastic`, `novelty`, `separable`.
    pub fn scenario(name: &str, seed: u64) -> Result<Self> {
        let base = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        Ok(match name {
            "default" => base,
            // a slice of benign samples scores high with strong member
            // disagreement, so uncertainty flags the would-be false positives
            "heteroscedastic" => SynthConfig {
                n_benign: 60_000,
                n_malicious: 60_000,
                ambiguous_fraction: 0.01,
                ..base
            },
            "novelty" => SynthConfig {
                n_benign: 20_000,
                n_malicious: 20_000,
                novel_fraction: 0.3,
                split_fractions: [0.6, 0.2, 0.2],
                ..base
            },
            "separable" => SynthConfig {
                n_benign: 10_000,
                n_malicious: 10_000,
                benign_logit_mean: -10.0,
                malicious_logit_mean: 10.0,
                logit_sd: 0.1,
                member_noise_sd_base: 0.1,
                ..base
            },
            other => {
                return Err(Error::arg(format!(
                    "unknown scenario `{other}` (expected default, heteroscedastic, novelty or separable)"
                )))
            }
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: SynthConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidData(format!("synth config: {msg}")));
        if self.n_benign + self.n_malicious == 0 {
            return bad("no samples requested".into());
        }
        if self.member_count == 0 {
            return bad("member_count must be at least 1".into());
        }
        for (name, v) in [
            ("novel_fraction", self.novel_fraction),
            ("ambiguous_fraction", self.ambiguous_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("benign_logit_mean", self.benign_logit_mean),
            ("malicious_logit_mean", self.malicious_logit_mean),
            ("novel_logit_mean", self.novel_logit_mean),
            ("ambiguous_logit_mean", self.ambiguous_logit_mean),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(self.logit_sd > 0.0 && self.logit_sd.is_finite()) {
            return bad(format!("logit_sd = {} must be positive", self.logit_sd));
        }
        if !(self.member_noise_sd_base >= 0.0 && self.member_noise_sd_base.is_finite()) {
            return bad("member_noise_sd_base must be non-negative".into());
        }
        if !(self.member_noise_sd_novel >= self.member_noise_sd_base && self.member_noise_sd_novel.is_finite()) {
            return bad("member_noise_sd_novel must be at least member_noise_sd_base".into());
        }
        if self.n_malicious > 0 && self.seen_families == 0 && self.novel_fraction < 1.0 {
            return bad("seen_families must be at least 1".into());
        }
        if self.novel_fraction > 0.0 && self.novel_families == 0 {
            return bad("novel_families must be at least 1 when novel_fraction > 0".into());
        }
        let s = self.split_fractions;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split_fractions {s:?} must be non-negative and sum to 1"));
        }
        Ok(())
    }

    fn total(&self) -> usize {
        self.n_benign + self.n_malicious
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cluster {
    Benign,
    Ambiguous,
    Seen,
    Novel,
}

fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Draw {
    cluster: Cluster,
    family_slot: usize,
    split: Split,
    scores: Vec<f64>,
}

fn draw_sample(config: &SynthConfig, seed: u64, index: usize) -> Draw {
    let mut rng = sample_rng(seed, index as u64);
    let u_cluster: f64 = rng.random();
    let u_split: f64 = rng.random();
    let u_family: f64 = rng.random();
    let cluster = if index < config.n_benign {
        if u_cluster < config.ambiguous_fraction {
            Cluster::Ambiguous
        } else {
            Cluster::Benign
        }
    } else if u_cluster < config.novel_fraction {
        Cluster::Novel
    } else {
        Cluster::Seen
    };
    let (mean, noise_sd) = match cluster {
        Cluster::Benign => (config.benign_logit_mean, config.member_noise_sd_base),
        Cluster::Ambiguous => (config.ambiguous_logit_mean, config.member_noise_sd_novel),
        Cluster::Seen => (config.malicious_logit_mean, config.member_noise_sd_base),
        Cluster::Novel => (config.novel_logit_mean, config.member_noise_sd_novel),
    };
    let z: f64 = rng.sample(StandardNormal);
    let latent = mean + config.logit_sd * z;
    let scores = (0..config.member_count)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            logistic(latent + noise_sd * e)
        })
        .collect();
    let split = if cluster == Cluster::Novel {
        Split::Test
    } else {
        let [train, val, _] = config.split_fractions;
        if u_split < train {
            Split::Train
        } else if u_split < train + val {
            Split::Validation
        } else {
            Split::Test
        }
    };
    let families = match cluster {
        Cluster::Novel => config.novel_families,
        _ => config.seen_families,
    };
    Draw {
        cluster,
        family_slot: ((u_family * families as f64) as usize).min(families.saturating_sub(1)),
        split,
        scores,
    }
}

/// Generates the dataset described by `config`. Sample `i` is `syn-<i>`;
/// the first `n_benign` samples are benign.
pub fn generate(config: &SynthConfig) -> Result<PredictionDataset> {
    config.validate()?;
    let records: Vec<SampleRecord> = (0..config.total())
        .into_par_iter()
        .map(|i| {
            let d = draw_sample(config, config.seed, i);
            let (label, family) = match d.cluster {
                Cluster::Benign | Cluster::Ambiguous => (Label::Benign, None),
                Cluster::Seen => (Label::Malicious, Some(format!("fam-{}", d.family_slot))),
                Cluster::Novel => (Label::Malicious, Some(format!("novel-{}", d.family_slot))),
            };
            SampleRecord {
                sample_id: format!("syn-{i}"),
                label,
                split: d.split,
                family,
                member_scores: d.scores,
            }
        })
        .collect();
    PredictionDataset::new(records, config.member_count, format!("synth seed {}", config.seed))
}

/// True for family tags produced by the novel cluster.
pub fn is_novel_family(family: &str) -> bool {
    family.starts_with("novel-")
}

/// Reference metrics of a configuration, computed by brute-force counting
/// on an independent regeneration. Intended for tests.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub auc: f64,
    /// `(fpr, tpr)` pairs.
    pub tpr_at_fpr: Vec<(f64, f64)>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Regenerates `config` at `n_oracle` samples (class ratio preserved) on a
/// separate random stream, then measures the ensemble-mean AUC by pairwise
/// rank counting and TPR at each FPR by counting positives above the
/// matching negative order statistic.
pub fn oracle_metrics(config: &SynthConfig, n_oracle: usize, fprs: &[f64]) -> Result<OracleMetrics> {
    config.validate()?;
    let frac_benign = config.n_benign as f64 / config.total() as f64;
    let n_benign = (n_oracle as f64 * frac_benign).round() as usize;
    let scaled = SynthConfig {
        n_benign,
        n_malicious: n_oracle - n_benign,
        ..config.clone()
    };
    let seed = crate::mix_seed(config.seed, ORACLE_STREAM);
    let (mut pos, mut neg): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
    let draws: Vec<(bool, f64)> = (0..scaled.total())
        .into_par_iter()
        .map(|i| {
            let d = draw_sample(&scaled, seed, i);
            let mean = d.scores.iter().sum::<f64>() / d.scores.len() as f64;
            (i >= scaled.n_benign, mean)
        })
        .collect();
    for (is_pos, s) in draws {
        if is_pos {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidData("oracle needs both classes".into()));
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    // Mann-Whitney: for each positive, negatives strictly below plus half the ties
    let mut wins = 0.0f64;
    let (mut lo, mut hi) = (0usize, 0usize);
    for &p in &pos {
        while lo < neg.len() && neg[lo] < p {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < neg.len() && neg[hi] <= p {
            hi += 1;
        }
        wins += lo as f64 + 0.5 * (hi - lo) as f64;
    }
    let auc = wins / (pos.len() as f64 * neg.len() as f64);

    let tpr_at_fpr = fprs
        .iter()
        .map(|&f| {
            let allowed = (f * neg.len() as f64).floor() as usize;
            let tpr = if allowed >= neg.len() {
                1.0
            } else {
                // the (allowed+1)-th largest negative must stay below the threshold
                let cutoff = neg[neg.len() - 1 - allowed];
                let above = pos.len() - pos.partition_point(|&p| p <= cutoff);
                above as f64 / pos.len() as f64
            };
            (f, tpr)
        })
        .collect();
    Ok(OracleMetrics {
        auc,
        tpr_at_fpr,
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}
