//! Online backlog prediction with one-frame-delayed approximate labels, and
//! the offline-trained single-frame correction network.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::estimators::{BacklogEstimate, EstimateSource};
use crate::neural::{Activation, Adam, LayerRecord, Loss, LstmRegressor, Mlp, Parameters};
use crate::rng::RngStream;
use crate::sim::Observation;

pub const FEATURES: usize = 5;

/// `(I/R, S/R, C/R, p, W/W_max)` for one frame.
pub fn frame_features(obs: &Observation, max_backoff: u32) -> [f64; FEATURES] {
    let r = obs.channels().max(1) as f64;
    let w = if max_backoff == 0 { 0.0 } else { obs.action.backoff_window as f64 / max_backoff as f64 };
    [obs.idle as f64 / r, obs.success as f64 / r, obs.collision as f64 / r, obs.action.acb_factor, w]
}

/// The last `T_o` frames' features, oldest first, zero-padded at the front.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorInput {
    pub rows: Vec<Vec<f64>>,
}

impl PredictorInput {
    pub fn zeros(len: usize) -> Self {
        Self { rows: vec![vec![0.0; FEATURES]; len] }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Rolling feature history feeding [`PredictorInput`].
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    len: usize,
    max_backoff: u32,
    rows: VecDeque<[f64; FEATURES]>,
}

impl ObservationWindow {
    pub fn new(len: usize, max_backoff: u32) -> Self {
        Self { len, max_backoff, rows: VecDeque::with_capacity(len) }
    }

    pub fn push(&mut self, obs: &Observation) {
        if self.rows.len() == self.len {
            self.rows.pop_front();
        }
        self.rows.push_back(frame_features(obs, self.max_backoff));
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    pub fn input(&self) -> PredictorInput {
        let pad = self.len - self.rows.len();
        let mut rows = vec![vec![0.0; FEATURES]; pad];
        rows.extend(self.rows.iter().map(|r| r.to_vec()));
        PredictorInput { rows }
    }
}

/// A prediction waiting for its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub frame: u64,
    pub predicted: f64,
    pub label: f64,
    pub label_source: EstimateSource,
    pub input: PredictorInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorSettings {
    pub window: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    /// Output normalization; labels are divided by it before the loss.
    pub scale: f64,
    pub cap: f64,
    /// Most recent records used per update (1 = the new record only).
    pub replay: usize,
    /// Oldest record age, in frames, still accepted.
    pub horizon: u64,
}

impl PredictorSettings {
    pub fn for_channels(r: u32) -> Self {
        Self {
            window: 10,
            hidden: 32,
            learning_rate: 1e-3,
            scale: r as f64,
            cap: 10.0 * r as f64,
            replay: 1,
            horizon: 10,
        }
    }
}

/// LSTM traffic predictor trained online.
#[derive(Debug, Clone)]
pub struct LstmPredictor {
    pub model: LstmRegressor,
    pub settings: PredictorSettings,
    optimizer: Adam,
    recent: VecDeque<LabelRecord>,
}

impl LstmPredictor {
    pub fn new(settings: PredictorSettings, rng: &mut RngStream) -> Self {
        let model = LstmRegressor::new(FEATURES, settings.hidden, 1, rng);
        Self::with_model(model, settings)
    }

    pub fn with_model(model: LstmRegressor, settings: PredictorSettings) -> Self {
        Self { model, optimizer: Adam::new(settings.learning_rate), settings, recent: VecDeque::new() }
    }

    pub fn predict(&self, input: &PredictorInput) -> Result<BacklogEstimate> {
        let y = self.model.forward(&input.rows)?[0] * self.settings.scale;
        let value = if y.is_finite() { y.clamp(0.0, self.settings.cap) } else { 0.0 };
        Ok(BacklogEstimate::new(value, EstimateSource::Lstm))
    }

    /// One gradient step on the squared error between the prediction for
    /// `record.input` and its label. Returns the pre-update loss in
    /// normalized units.
    pub fn online_update(&mut self, record: LabelRecord, current_frame: u64) -> Result<f64> {
        let age = current_frame.checked_sub(record.frame).unwrap_or(u64::MAX);
        if age == 0 || age > self.settings.horizon {
            return Err(Error::StaleRecord { record: record.frame, current: current_frame });
        }
        if record.label < 0.0 || !record.label.is_finite() {
            return Err(Error::InvalidArgument(format!("label {} is not a nonnegative finite value", record.label)));
        }
        self.recent.push_back(record);
        while self.recent.len() > self.settings.replay.max(1) {
            self.recent.pop_front();
        }
        let batch: Vec<(Vec<Vec<f64>>, Vec<f64>)> = self
            .recent
            .iter()
            .map(|r| (r.input.rows.clone(), vec![r.label / self.settings.scale]))
            .collect();
        let (loss, grads) = self.model.loss_and_grads(&batch, Loss::Mse)?;
        self.optimizer.step(self.model.tensors_mut(), &grads)?;
        Ok(loss)
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.model.to_records()
    }
}

/// Single-frame fully connected backlog estimator used for correction labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnCorrector {
    pub model: Mlp,
    pub scale: f64,
    pub max_backoff: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnnTrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for DnnTrainSettings {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 64, learning_rate: 1e-3, hidden: [64, 64], seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnnTrainReport {
    /// Mean squared error in devices^2 after each epoch, over the training set.
    pub epoch_mse: Vec<f64>,
}

impl DnnTrainReport {
    pub fn final_mse(&self) -> f64 {
        *self.epoch_mse.last().unwrap_or(&f64::NAN)
    }
}

impl DnnCorrector {
    pub fn new(scale: f64, max_backoff: u32, hidden: [usize; 2], rng: &mut RngStream) -> Self {
        let model = Mlp::new(&[FEATURES, hidden[0], hidden[1], 1], Activation::Relu, Activation::Identity, rng);
        Self { model, scale, max_backoff }
    }

    pub fn estimate(&self, obs: &Observation) -> Result<BacklogEstimate> {
        let x = frame_features(obs, self.max_backoff);
        let y = self.model.forward(&x)?[0] * self.scale;
        let value = if y.is_finite() { y.max(0.0) } else { 0.0 };
        Ok(BacklogEstimate::new(value, EstimateSource::Dnn))
    }

    pub fn to_records(&self) -> Vec<LayerRecord> {
        self.model.to_records()
    }
}

/// Trains a correction network on `(observation, true backlog)` pairs with
/// seed-driven shuffling.
pub fn pretrain_dnn(
    dataset: &[(Observation, f64)],
    scale: f64,
    max_backoff: u32,
    settings: &DnnTrainSettings,
) -> Result<(DnnCorrector, DnnTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let mut init_rng = RngStream::new(settings.seed, 0xD1);
    let mut shuffle_rng = RngStream::new(settings.seed, 0xD2);
    let mut net = DnnCorrector::new(scale, max_backoff, settings.hidden, &mut init_rng);
    let mut adam = Adam::new(settings.learning_rate);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = dataset
        .iter()
        .map(|(o, n)| (frame_features(o, max_backoff).to_vec(), vec![n / scale]))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_mse = Vec::with_capacity(settings.epochs);
    let batch_size = settings.batch_size.max(1);
    for _ in 0..settings.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sum_sq = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grads) = net.model.loss_and_grads(&batch, Loss::Mse)?;
            sum_sq += loss * chunk.len() as f64;
            adam.step(net.model.tensors_mut(), &grads)?;
        }
        epoch_mse.push(sum_sq / samples.len() as f64 * scale * scale);
    }
    Ok((net, DnnTrainReport { epoch_mse }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ControlAction;

    fn obs(idle: u32, success: u32, collision: u32, p: f64) -> Observation {
        Observation { frame: 0, idle, success, collision, action: ControlAction::new(p, 0, idle + success + collision) }
    }

    #[test]
    fn window_pads_and_rolls() {
        let mut w = ObservationWindow::new(3, 32);
        let input = w.input();
        assert_eq!(input.rows.len(), 3);
        assert!(input.flatten().iter().all(|&v| v == 0.0));
        for k in 0..5u32 {
            w.push(&obs(54 - k, k, 0, 1.0));
        }
        let input = w.input();
        assert_eq!(input.rows[0][1], 2.0 / 54.0);
        assert_eq!(input.rows[2][1], 4.0 / 54.0);
    }

    #[test]
    fn fresh_prediction_is_well_formed() {
        let mut rng = RngStream::new(1, 0);
        let p = LstmPredictor::new(PredictorSettings::for_channels(54), &mut rng);
        let est = p.predict(&PredictorInput::zeros(10)).unwrap();
        assert!(est.value.is_finite() && (0.0..=540.0).contains(&est.value));
        assert_eq!(est.source, EstimateSource::Lstm);
    }

    #[test]
    fn label_equal_to_prediction_changes_nothing() {
        let mut rng = RngStream::new(2, 0);
        // A power-of-two scale keeps label / scale exact.
        let settings = PredictorSettings { scale: 64.0, ..PredictorSettings::for_channels(54) };
        let mut p = LstmPredictor::new(settings, &mut rng);
        let mut input = PredictorInput::zeros(10);
        input.rows[9] = vec![0.3, 0.4, 0.3, 1.0, 0.0];
        let raw = p.model.forward(&input.rows).unwrap()[0] * 64.0;
        let before = p.model.clone();
        let rec = LabelRecord { frame: 4, predicted: raw, label: raw.max(0.0), label_source: EstimateSource::MomFull, input };
        assert!(raw >= 0.0, "pick a seed with a nonnegative raw output");
        p.online_update(rec, 5).unwrap();
        assert_eq!(p.model, before);
    }

    #[test]
    fn stale_record_rejected() {
        let mut rng = RngStream::new(3, 0);
        let mut p = LstmPredictor::new(PredictorSettings::for_channels(54), &mut rng);
        let rec = LabelRecord { frame: 1, predicted: 0.0, label: 5.0, label_source: EstimateSource::MomFull, input: PredictorInput::zeros(10) };
        assert!(matches!(p.online_update(rec.clone(), 100), Err(Error::StaleRecord { .. })));
        assert!(matches!(p.online_update(rec, 1), Err(Error::StaleRecord { .. })));
    }

    #[test]
    fn overfits_one_sample() {
        let mut rng = RngStream::new(4, 0);
        let mut settings = PredictorSettings::for_channels(54);
        settings.learning_rate = 1e-2;
        let mut p = LstmPredictor::new(settings, &mut rng);
        let mut input = PredictorInput::zeros(10);
        for (k, row) in input.rows.iter_mut().enumerate() {
            *row = vec![0.2 + 0.01 * k as f64, 0.4, 0.4 - 0.01 * k as f64, 0.5, 0.0];
        }
        let mut losses = Vec::new();
        for t in 0..400u64 {
            let rec = LabelRecord { frame: t, predicted: 0.0, label: 80.0, label_source: EstimateSource::MomFull, input: input.clone() };
            losses.push(p.online_update(rec, t + 1).unwrap());
        }
        assert!(*losses.last().unwrap() < 1e-3, "{:?}", losses.last());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(pretrain_dnn(&[], 54.0, 32, &DnnTrainSettings::default()).is_err());
    }

    #[test]
    fn dnn_memorizes_one_pair() {
        let o = obs(20, 20, 14, 0.5);
        let data = vec![(o, 106.0); 64];
        let settings = DnnTrainSettings { epochs: 100, batch_size: 16, ..Default::default() };
        let (net, report) = pretrain_dnn(&data, 54.0, 32, &settings).unwrap();
        assert!(report.final_mse() < 1e-2, "{}", report.final_mse());
        let a = net.estimate(&o).unwrap().value;
        assert_eq!(a, net.estimate(&o).unwrap().value);
    }

    #[test]
    fn dnn_training_is_seeded() {
        let data: Vec<(Observation, f64)> =
            (0..50u32).map(|k| (obs(54 - k, k / 2, k - k / 2, 1.0), k as f64 * 1.2)).collect();
        let settings = DnnTrainSettings { epochs: 3, batch_size: 8, seed: 9, ..Default::default() };
        let (a, _) = pretrain_dnn(&data, 54.0, 32, &settings).unwrap();
        let (b, _) = pretrain_dnn(&data, 54.0, 32, &settings).unwrap();
        assert_eq!(a, b);
    }
}
