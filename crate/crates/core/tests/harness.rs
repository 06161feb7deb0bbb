use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rachsim::control::Scheme;
use rachsim::harness::{
    compare, convergence_report, pretrain_agents, pretrain_corrector, read_episode_curves, run_experiment, run_trial,
    write_outputs, ExperimentConfig, OptimizerKind, Resources, RunOptions,
};
use rachsim::neural::encode_checkpoint;
use rachsim::traffic::TrafficProfile;
use serde::Deserialize;

fn small(scheme: Scheme, optimizer: OptimizerKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(scheme, optimizer);
    cfg.episodes = 4;
    cfg.trials = 3;
    cfg.seed = 17;
    cfg
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn zero_traffic_is_vacuous_success() {
    let mut cfg = small(Scheme::Acb, OptimizerKind::Genie);
    cfg.traffic = TrafficProfile::constant(0, 10);
    let result = run_experiment(&cfg, RunOptions::default()).unwrap();
    for m in result.trials.iter().flat_map(|t| &t.episodes) {
        assert_eq!(m.successes, 0);
        assert_eq!(m.access_success_prob, 1.0);
    }
}

#[test]
fn reruns_are_byte_identical() {
    for (scheme, optimizer) in [
        (Scheme::Acb, OptimizerKind::SlFormula),
        (Scheme::AcbBo, OptimizerKind::Cpcl),
        (Scheme::Acb, OptimizerKind::TabularQ),
    ] {
        let cfg = small(scheme, optimizer);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_outputs(a.path(), &run_experiment(&cfg, RunOptions::default()).unwrap()).unwrap();
        write_outputs(b.path(), &run_experiment(&cfg, RunOptions::default()).unwrap()).unwrap();
        let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
        assert!(fa.contains_key("frames.csv") && fa.contains_key("episodes.csv"));
        assert!(fa.keys().any(|k| k.ends_with(".rachnn") || k.starts_with("qtable")), "{:?}", fa.keys());
        assert_eq!(fa, fb, "{optimizer:?}");
    }
}

#[derive(Debug, Deserialize)]
struct FrameCsv {
    trial: usize,
    episode: usize,
    frame: u64,
    success: u64,
    arrivals: u64,
    true_backlog: u64,
    predicted_backlog: Option<f64>,
    drops: u64,
    transmissions: u64,
    reward: f64,
}

#[derive(Debug, Deserialize)]
struct EpisodeCsv {
    trial: usize,
    episode: usize,
    successes: u64,
    access_success_prob: f64,
    transmissions: u64,
    drops: u64,
    pred_mae: Option<f64>,
}

#[derive(Default)]
struct Recomputed {
    frames: u64,
    successes: u64,
    arrivals: u64,
    transmissions: u64,
    drops: u64,
    abs_err: f64,
    predictions: u64,
}

#[test]
fn episode_file_is_recomputable_from_frame_file() {
    let cfg = small(Scheme::Acb, OptimizerKind::SlFormula);
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &run_experiment(&cfg, RunOptions::default()).unwrap()).unwrap();

    let mut frames = csv::Reader::from_path(dir.path().join("frames.csv")).unwrap();
    let header: Vec<String> = frames.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header.join(","),
        "trial,episode,frame,scheme,optimizer,p_acb,bo_window,channels,idle,success,collision,arrivals,\
         true_backlog,predicted_backlog,label_backlog,drops,transmissions,reward"
    );
    let mut agg: BTreeMap<(usize, usize), Recomputed> = BTreeMap::new();
    for row in frames.deserialize::<FrameCsv>() {
        let row = row.unwrap();
        let a = agg.entry((row.trial, row.episode)).or_default();
        assert_eq!(row.frame, a.frames);
        assert_eq!(row.reward, row.success as f64);
        a.frames += 1;
        a.successes += row.success;
        a.arrivals += row.arrivals;
        a.transmissions += row.transmissions;
        a.drops += row.drops;
        if let Some(p) = row.predicted_backlog {
            a.abs_err += (p - row.true_backlog as f64).abs();
            a.predictions += 1;
        }
    }
    assert_eq!(agg.len(), cfg.trials * cfg.episodes);
    assert!(agg.values().all(|a| a.frames == cfg.episode_length));

    let mut episodes = csv::Reader::from_path(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(
        episodes.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        "trial,episode,successes,access_success_prob,mean_delay,transmissions,drops,pred_mae"
    );
    let mut rows = 0;
    for row in episodes.deserialize::<EpisodeCsv>() {
        let e = row.unwrap();
        let a = &agg[&(e.trial, e.episode)];
        assert_eq!(e.successes, a.successes);
        assert_eq!(e.transmissions, a.transmissions);
        assert_eq!(e.drops, a.drops);
        let prob = if a.arrivals == 0 { 1.0 } else { a.successes as f64 / a.arrivals as f64 };
        assert_eq!(e.access_success_prob, prob);
        assert_eq!(e.pred_mae, Some(a.abs_err / a.predictions as f64));
        rows += 1;
    }
    assert_eq!(rows, cfg.trials * cfg.episodes);
}

#[test]
fn trials_do_not_share_state() {
    let cfg = small(Scheme::AcbBo, OptimizerKind::Dqn);
    let res = Resources::load(&cfg).unwrap();
    let all = run_experiment(&cfg, RunOptions::default()).unwrap();
    for k in (0..cfg.trials).rev() {
        let alone = run_trial(&cfg, k, &res, RunOptions::default()).unwrap();
        assert_eq!(alone.episodes, all.trials[k].episodes);
        assert_eq!(alone.frames, all.trials[k].frames);
        assert_eq!(alone.checkpoint, all.trials[k].checkpoint);
    }
}

#[derive(Debug, Deserialize)]
struct GenieBaseline {
    seed: u64,
    trials: usize,
    episodes: usize,
    mean_successes_per_episode: f64,
    mean_successes_per_period: f64,
}

#[test]
fn genie_matches_golden_baseline() {
    let golden: GenieBaseline =
        serde_json::from_str(include_str!("golden/genie_baseline.json")).unwrap();
    let mut cfg = ExperimentConfig::new(Scheme::Acb, OptimizerKind::Genie);
    cfg.seed = golden.seed;
    cfg.trials = golden.trials;
    cfg.episodes = golden.episodes;
    let result = run_experiment(&cfg, RunOptions { record_frames: false }).unwrap();
    let mean = result.summary.successes.mean;
    assert!((mean - golden.mean_successes_per_episode).abs() < 1e-9, "{mean}");
    let periods = (cfg.episode_length / cfg.traffic.period) as f64;
    let per_period = mean / periods;
    assert!((per_period - golden.mean_successes_per_period).abs() < 1e-9);
    assert!((190.0..=200.0).contains(&per_period), "{per_period}");
    // Never more successes than arrivals.
    assert!(mean <= cfg.traffic.total_per_period as f64 * periods);
}

#[test]
fn config_round_trip_and_validation() {
    let mut cfg = small(Scheme::AcbBo, OptimizerKind::Cpcl);
    cfg.name = Some("cpcl".into());
    cfg.hyper.cpcl_observations = true;
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);

    let err = ExperimentConfig::from_json(r#"{"scheme":"ACB","optimizer":"genie","chanels":54}"#).unwrap_err();
    assert!(err.to_string().contains("chanels"), "{err}");

    let mut bad = small(Scheme::Acb, OptimizerKind::Dqn);
    bad.hyper.default_backoff = 4;
    assert!(bad.validate().unwrap_err().to_string().contains("hyper.default_backoff"));
    let mut bad = small(Scheme::Acb, OptimizerKind::Genie);
    bad.channels = 0;
    assert!(bad.validate().unwrap_err().to_string().contains("channels"));
}

#[test]
fn compare_self_and_mismatch() {
    let a = small(Scheme::Acb, OptimizerKind::MomIdle);
    let report = compare(&[a.clone(), a.clone()]).unwrap();
    let d = &report.paired[0].difference;
    assert_eq!((d.mean, d.ci_low, d.ci_high), (0.0, 0.0, 0.0));
    assert_eq!(d.n, a.trials * a.episodes);

    let genie = small(Scheme::Acb, OptimizerKind::Genie);
    let report = compare(&[genie.clone(), a.clone()]).unwrap();
    assert!(report.paired[0].difference.mean <= 0.0, "MoM_idle vs genie: {:?}", report.paired[0]);

    let mut other = a.clone();
    other.scheme = Scheme::Dra;
    assert!(compare(&[a.clone(), other]).unwrap_err().to_string().contains("scheme"));
    let mut other = a.clone();
    other.traffic = TrafficProfile::constant(200, 10);
    assert!(compare(&[a, other]).unwrap_err().to_string().contains("traffic"));
}

#[test]
fn pretraining_is_reproducible() {
    let mut cfg = ExperimentConfig::new(Scheme::Acb, OptimizerKind::Cpcl);
    cfg.hyper.pretrain.dnn_frames = 3000;
    cfg.hyper.pretrain.dnn_epochs = 3;
    let a = pretrain_corrector(&cfg).unwrap();
    let b = pretrain_corrector(&cfg).unwrap();
    assert_eq!(encode_checkpoint(&a.corrector.to_records()), encode_checkpoint(&b.corrector.to_records()));
    assert_eq!(a.report.epoch_mse.len(), 3);

    cfg.hyper.pretrain.dnn_frames = 40;
    assert!(pretrain_corrector(&cfg).is_err(), "dataset smaller than a batch must be rejected");

    let mut cfg = ExperimentConfig::new(Scheme::AcbBo, OptimizerKind::Dqn);
    cfg.hyper.pretrain.agent_episodes = 3;
    cfg.hyper.pretrain.eval_episodes = 2;
    let res = Resources::default();
    let a = pretrain_agents(&cfg, &res).unwrap();
    let b = pretrain_agents(&cfg, &res).unwrap();
    assert_eq!(encode_checkpoint(&a.layers), encode_checkpoint(&b.layers));
    assert_eq!(a.summary.margin, a.summary.trained_eval_successes - a.summary.untrained_eval_successes);
    assert_eq!(a.curve.len(), 3);
}

#[test]
fn convergence_from_episode_file() {
    let mut cfg = small(Scheme::Acb, OptimizerKind::Genie);
    cfg.episodes = 20;
    let dir = tempfile::tempdir().unwrap();
    write_outputs(dir.path(), &run_experiment(&cfg, RunOptions { record_frames: false }).unwrap()).unwrap();
    let curves = read_episode_curves(&dir.path().join("episodes.csv")).unwrap();
    assert_eq!(curves.len(), cfg.trials);
    for curve in curves.values() {
        let report = convergence_report(curve, 0.05, 5).unwrap();
        // A non-learning baseline is stationary from the start.
        assert_eq!(report.converged_at, Some(1));
        assert_eq!(report.episodes, 20);
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            ExperimentConfig::from_file(&path).unwrap().validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 5);
}
