mod common;

use rachsim::neural::{
    decode_checkpoint, encode_checkpoint, Activation, Adam, LayerRecord, LstmRegressor, Loss, Mlp, Parameters,
};
use rachsim::rng::RngStream;

#[test]
fn gradients_match_finite_differences() {
    let mut count = 0;
    for seed in 0..30u64 {
        let (what, err) = common::gradient_instance(seed as usize, seed);
        assert!(err < 1e-4, "{what}: relative error {err}");
        count += 1;
    }
    assert!(count >= 20);
}

#[test]
fn forward_and_backward_are_bitwise_reproducible() {
    let mut rng = RngStream::new(3, 0);
    let net = LstmRegressor::new(5, 8, 1, &mut rng);
    let window: Vec<Vec<f64>> = (0..10).map(|k| vec![0.1 * k as f64; 5]).collect();
    let batch = vec![(window.clone(), vec![0.7])];
    let a = net.loss_and_grads(&batch, Loss::Mse).unwrap();
    let b = net.loss_and_grads(&batch, Loss::Mse).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn adam_training_keeps_parameters_finite() {
    let mut rng = RngStream::new(9, 0);
    let mut net = Mlp::new(&[3, 16, 1], Activation::Relu, Activation::Identity, &mut rng);
    let mut adam = Adam::new(1e-2);
    let batch: Vec<(Vec<f64>, Vec<f64>)> =
        (0..32).map(|k| (vec![k as f64 / 32.0, 1.0, -0.5], vec![(k as f64 / 8.0).sin()])).collect();
    let first = net.loss_and_grads(&batch, Loss::Mse).unwrap().0;
    for _ in 0..500 {
        let (_, g) = net.loss_and_grads(&batch, Loss::Mse).unwrap();
        adam.step(net.tensors_mut(), &g).unwrap();
        assert!(net.all_finite());
    }
    assert!(net.loss_and_grads(&batch, Loss::Mse).unwrap().0 < first);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut rng = RngStream::new(4, 0);
    let lstm = LstmRegressor::new(5, 4, 1, &mut rng);
    let mlp = Mlp::new(&[5, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
    let mut layers = lstm.to_records();
    layers.extend(mlp.to_records());
    let bytes = encode_checkpoint(&layers);
    assert_eq!(&bytes[..7], b"RACHNN1");
    assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 4);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back, layers);
    assert_eq!(encode_checkpoint(&back), bytes);
    assert!(matches!(back[0], LayerRecord::Lstm(_)));
}
