use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::runner::{mean_std, run_experiment, ExperimentResult, RunOptions};

/// Mean of `a - b` over paired samples with a two-sided 95% t interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDifference {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<PairedDifference> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), actual: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("a paired interval needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let ms = mean_std(&d);
    let n = d.len();
    let half = if ms.std == 0.0 {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .inverse_cdf(0.975);
        t * ms.std / (n as f64).sqrt()
    };
    Ok(PairedDifference { n, mean: ms.mean, std: ms.std, ci_low: ms.mean - half, ci_high: ms.mean + half })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigStats {
    pub name: String,
    pub optimizer: String,
    pub mean_successes: f64,
    pub std_successes: f64,
    /// Mean successes at each episode index, averaged over trials.
    pub episode_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedComparison {
    pub name: String,
    pub baseline: String,
    /// Successes of `name` minus the baseline's, per (trial, episode).
    pub difference: PairedDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub baseline: String,
    pub configs: Vec<ConfigStats>,
    pub paired: Vec<PairedComparison>,
}

fn check_shared(configs: &[ExperimentConfig]) -> Result<()> {
    if configs.len() < 2 {
        return Err(Error::InvalidArgument("compare needs at least two configs".into()));
    }
    let first = &configs[0];
    for c in &configs[1..] {
        let mismatch = if c.scheme != first.scheme {
            Some("scheme")
        } else if c.traffic != first.traffic {
            Some("traffic")
        } else if c.channels != first.channels {
            Some("channels")
        } else if c.retransmission_limit != first.retransmission_limit {
            Some("retransmission_limit")
        } else if c.episode_length != first.episode_length {
            Some("episode_length")
        } else if c.episodes != first.episodes {
            Some("episodes")
        } else if c.trials != first.trials {
            Some("trials")
        } else if c.seed != first.seed {
            Some("seed")
        } else {
            None
        };
        if let Some(field) = mismatch {
            return Err(Error::config(field, format!("`{}` differs from `{}`", c.label(), first.label())));
        }
    }
    Ok(())
}

/// Runs every config on the same trial seeds and compares each with the first.
pub fn compare(configs: &[ExperimentConfig]) -> Result<CompareReport> {
    check_shared(configs)?;
    let results = configs
        .iter()
        .map(|c| run_experiment(c, RunOptions { record_frames: false }))
        .collect::<Result<Vec<_>>>()?;
    compare_results(&results)
}

fn successes(r: &ExperimentResult) -> Vec<f64> {
    r.trials.iter().flat_map(|t| t.episodes.iter().map(|m| m.successes as f64)).collect()
}

/// Compares already computed results (same trials and episodes) with the first.
pub fn compare_results(results: &[ExperimentResult]) -> Result<CompareReport> {
    let configs: Vec<ExperimentConfig> = results.iter().map(|r| r.config.clone()).collect();
    check_shared(&configs)?;
    let stats = results
        .iter()
        .map(|r| {
            let s = successes(r);
            let ms = mean_std(&s);
            let episodes = r.config.episodes;
            let episode_means = (0..episodes)
                .map(|e| {
                    let v: Vec<f64> = r.trials.iter().map(|t| t.episodes[e].successes as f64).collect();
                    mean_std(&v).mean
                })
                .collect();
            ConfigStats {
                name: r.config.label(),
                optimizer: r.config.optimizer.as_str().to_string(),
                mean_successes: ms.mean,
                std_successes: ms.std,
                episode_means,
            }
        })
        .collect::<Vec<_>>();
    let base = successes(&results[0]);
    let baseline = results[0].config.label();
    let paired = results[1..]
        .iter()
        .map(|r| {
            Ok(PairedComparison {
                name: r.config.label(),
                baseline: baseline.clone(),
                difference: paired_difference(&successes(r), &base)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { baseline, configs: stats, paired })
}
