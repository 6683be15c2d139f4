use fallchain::nn::{
    batch_loss, batch_loss_grad, grad_check, sgd_step, Autoencoder, AutoencoderConfig, CellKind,
    Classifier, ClassifierConfig, Example, LabeledLatent, Mlp, ModelParams, Trainable,
};
use fallchain::preproc::{LabeledWindow, Window};
use fallchain::seeds;
use proptest::prelude::*;
use rand::Rng;

fn window(seed: u64, len: usize) -> Window {
    let mut rng = seeds::stream_rng(seed, "test.window", 0);
    Window {
        values: (0..len)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect(),
        source: "test".into(),
        start_index: 0,
    }
}

fn small_config(cell: CellKind) -> AutoencoderConfig {
    AutoencoderConfig {
        hidden: vec![4, 3, 2],
        cell,
    }
}

#[test]
fn linear_model_gradient_matches_closed_form() {
    // y = W x + b with mse; dL/dW = 2/n (y - t) xᵀ
    let mlp = Mlp::new(vec![3, 2], 4).unwrap();
    let ex = Example {
        input: vec![0.3, -1.2, 0.7],
        target: vec![0.5, -0.25],
    };
    let (_, grad) = batch_loss_grad(&mlp, std::slice::from_ref(&ex), &[0]).unwrap();
    let y = mlp.forward(&ex.input).unwrap();
    let w = mlp.params.layout.block("mlp.0.w").unwrap().clone();
    let b = mlp.params.layout.block("mlp.0.b").unwrap().clone();
    for r in 0..2 {
        let d = 2.0 * (y[r] - ex.target[r]) / 2.0;
        assert!((grad.values[b.offset + r] - d).abs() < 1e-15);
        for c in 0..3 {
            assert!((grad.values[w.offset + r * 3 + c] - d * ex.input[c]).abs() < 1e-15);
        }
    }
    let report = grad_check(&mlp, &[ex], 1e-5, 2000, 1).unwrap();
    assert!(report.max_rel_error < 1e-7, "{report:?}");
}

#[test]
fn autoencoder_gradients_match_finite_differences() {
    for cell in [CellKind::Gated, CellKind::SimpleTanh] {
        let ae = Autoencoder::new(small_config(cell), 11).unwrap();
        let data = vec![window(1, 8), window(2, 8)];
        let report = grad_check(&ae, &data, 1e-5, 2000, 3).unwrap();
        assert_eq!(report.checked, ae.params.len());
        assert!(report.max_rel_error < 1e-4, "{cell:?}: {report:?}");
    }
}

fn labeled(seed: u64, n: usize) -> Vec<LabeledWindow> {
    (0..n)
        .map(|i| LabeledWindow {
            window: window(seed * 1000 + i as u64, 8),
            label: (i % 2) as u8,
        })
        .collect()
}

#[test]
fn classifier_head_gradients_match_finite_differences() {
    let ae = Autoencoder::new(small_config(CellKind::Gated), 2).unwrap();
    let clf = Classifier::from_encoder(&ae, vec![16], 2, 9).unwrap();
    let data = labeled(3, 6);
    let report = grad_check(&clf, &data, 1e-5, 2000, 4).unwrap();
    assert_eq!(report.checked, clf.params.len() - clf.frozen_len());
    assert!(report.max_rel_error < 1e-6, "{report:?}");

    let latents: Vec<LabeledLatent> = data
        .iter()
        .map(|s| LabeledLatent {
            latent: clf.latent(&s.window.values).unwrap(),
            label: s.label as usize,
        })
        .collect();
    let (l1, g1) = batch_loss_grad(&clf, &data, &[0, 1, 2, 3, 4, 5]).unwrap();
    let (l2, g2) = batch_loss_grad(&clf, &latents, &[0, 1, 2, 3, 4, 5]).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn descent_on_fixed_batch() {
    for seed in 0..20 {
        let mut ae = Autoencoder::new(small_config(CellKind::Gated), seed).unwrap();
        let data = vec![window(seed + 100, 8), window(seed + 200, 8)];
        let (before, grad) = batch_loss_grad(&ae, &data, &[0, 1]).unwrap();
        sgd_step(&mut ae.params, &grad, 1e-3).unwrap();
        let after = batch_loss(&ae, &data);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn save_load_forward_is_bit_identical() {
    let ae = Autoencoder::new(small_config(CellKind::Gated), 5).unwrap();
    let json = serde_json::to_string(&ae.params).unwrap();
    let params: ModelParams = serde_json::from_str(&json).unwrap();
    assert_eq!(params, ae.params);
    let loaded = Autoencoder::from_params(ae.config.clone(), params).unwrap();
    let w = window(7, 40);
    let a: Vec<u64> = ae.forward(&w.values).unwrap().iter().flatten().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = loaded.forward(&w.values).unwrap().iter().flatten().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);

    let clf = Classifier::from_encoder(&ae, vec![16], 2, 1).unwrap();
    let json = serde_json::to_string(&(&clf.config, &clf.params)).unwrap();
    let (config, params): (ClassifierConfig, ModelParams) = serde_json::from_str(&json).unwrap();
    let loaded = Classifier::from_params(config, params).unwrap();
    assert_eq!(
        clf.predict_proba(&w.values).unwrap(),
        loaded.predict_proba(&w.values).unwrap()
    );
}

#[test]
fn frozen_coordinates_have_zero_gradient() {
    let ae = Autoencoder::new(small_config(CellKind::SimpleTanh), 5).unwrap();
    let clf = Classifier::from_encoder(&ae, vec![8], 2, 1).unwrap();
    let data = labeled(4, 4);
    let (_, grad) = batch_loss_grad(&clf, &data, &[0, 1, 2, 3]).unwrap();
    for i in 0..clf.params.len() {
        if Trainable::<LabeledWindow>::is_frozen(&clf, i) {
            assert_eq!(grad.values[i], 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_outputs_sum_to_one(seed in 0u64..1000, scale in 0.1f64..50.0) {
        let ae = Autoencoder::new(small_config(CellKind::Gated), seed).unwrap();
        let clf = Classifier::from_encoder(&ae, vec![16], 2, seed).unwrap();
        let mut w = window(seed, 8);
        w.values.iter_mut().flatten().for_each(|v| *v *= scale);
        let p = clf.predict_proba(&w.values).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
