use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rbc_core::{Grid, ScalarField};
use rbc_lran::checkpoint::{from_bytes, to_bytes};
use rbc_lran::{
    composite_loss, load_checkpoint, save_checkpoint, sequence_loss, Architecture, LranConfig, LranError, LranModel,
};

fn small_arch(latent: usize) -> Architecture {
    Architecture::new(8, 12, [2, 3, 2, 2], latent).unwrap()
}

fn wave(grid: Grid, phase: f64) -> ScalarField<f64> {
    ScalarField::from_fn(grid, |x, y| 0.5 + (x - phase).sin() * (1.0 - y * y))
}

fn frames(t: usize) -> Vec<ScalarField<f64>> {
    let g = Grid::new(12, 8).unwrap();
    (0..t).map(|k| wave(g, 0.3 * k as f64)).collect()
}

fn norm_sq(v: &ScalarField<f64>) -> f64 {
    v.values().iter().map(|x| x * x).sum()
}

#[test]
fn reference_encoder_output_and_decoder_shape() {
    let arch = Architecture::reference(16);
    assert_eq!(arch.flat_dim(), 12288);
    let model = LranModel::new(arch, 3);
    let q = wave(Grid::new(96, 64).unwrap(), 0.0);
    let g = model.encode(&q).unwrap();
    assert_eq!(g.len(), 16);
    assert_eq!(model.encode(&q).unwrap(), g);
    let back = model.decode(g.as_slice().unwrap()).unwrap();
    assert_eq!(back.grid().shape(), (64, 96));
}

#[test]
fn wrong_shapes_are_rejected() {
    let model = LranModel::new(small_arch(4), 0);
    let q = wave(Grid::new(16, 8).unwrap(), 0.0);
    assert!(matches!(
        model.encode(&q),
        Err(LranError::ShapeMismatch {
            expected: (8, 12),
            got: (8, 16)
        })
    ));
    assert!(matches!(
        model.decode(&[0.0; 3]),
        Err(LranError::LatentMismatch { expected: 4, got: 3 })
    ));
    assert!(matches!(model.rollout(&q, 2), Err(LranError::ShapeMismatch { .. })));
}

#[test]
fn rollout_contract() {
    let model = LranModel::new(small_arch(4), 1);
    let entry = frames(1).remove(0);
    assert!(model.rollout(&entry, 0).unwrap().is_empty());
    let out = model.rollout(&entry, 3).unwrap();
    assert_eq!(out.len(), 3);
    // K starts as the identity, so every frame is the autoencoder output.
    let same = model.decode(model.encode(&entry).unwrap().as_slice().unwrap()).unwrap();
    for f in &out {
        assert_eq!(f.grid(), entry.grid());
        assert_eq!(f, &same);
    }
}

#[test]
fn rollout_applies_k_repeatedly() {
    let mut model = LranModel::new(small_arch(4), 1);
    let k = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.5 } else { 0.05 * (i + j) as f64 });
    model.set_k_matrix(&k).unwrap();
    let entry = frames(1).remove(0);
    let out = model.rollout(&entry, 3).unwrap();
    let mut g = model.encode(&entry).unwrap();
    for f in &out {
        g = k.dot(&g);
        assert_eq!(f, &model.decode(g.as_slice().unwrap()).unwrap());
    }
}

#[test]
fn denormalization_is_affine_in_the_network_output() {
    let mut a = LranModel::new(small_arch(4), 5);
    let g = [0.3, -1.0, 0.2, 0.7];
    a.input_mean = 0.0;
    a.input_std = 1.0;
    let raw = a.decode(&g).unwrap();
    let mut b = a.clone();
    b.input_mean = -2.5;
    b.input_std = 4.0;
    let scaled = b.decode(&g).unwrap();
    for (r, s) in raw.values().iter().zip(scaled.values().iter()) {
        assert!((s - (4.0 * r - 2.5)).abs() <= 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn identity_ingredients_give_zero_loss() {
    let z: Vec<Array1<f64>> = (0..4).map(|k| Array1::from_elem(6, 1.0 + k as f64)).collect();
    let g: Vec<Array1<f64>> = (0..4).map(|_| Array1::from(vec![0.5, -0.2])).collect();
    for beta in [0.0, 1.0, 7.5] {
        for delta in [0.9, 0.95, 1.0] {
            let cfg = LranConfig {
                beta,
                delta,
                sequence_length: 4,
                ..LranConfig::default()
            };
            assert_eq!(composite_loss(&z, &z, &g, &g, &cfg), 0.0);
        }
    }
}

#[test]
fn unit_delta_without_hidden_term_is_plain_mean() {
    let targets: Vec<Array1<f64>> = vec![Array1::from(vec![1.0, 0.0]), Array1::from(vec![0.0, 2.0])];
    let recon: Vec<Array1<f64>> = vec![Array1::from(vec![0.0, 0.0]), Array1::from(vec![0.0, 1.0])];
    let g: Vec<Array1<f64>> = vec![Array1::zeros(1); 2];
    let cfg = LranConfig {
        beta: 0.0,
        delta: 1.0,
        sequence_length: 2,
        ..LranConfig::default()
    };
    let want = 0.5 * (1.0 / (1.0 + 1e-6) + 1.0 / (4.0 + 1e-6));
    assert!((composite_loss(&targets, &recon, &g, &g, &cfg) - want).abs() < 1e-15);
}

#[test]
fn single_frame_loss_is_the_reconstruction_error() {
    let mut model = LranModel::new(small_arch(4), 9);
    model.input_mean = 0.2;
    model.input_std = 0.8;
    let seq = frames(1);
    let cfg = LranConfig {
        sequence_length: 1,
        delta: 1.0,
        beta: 3.0,
        ..LranConfig::default()
    };
    let q = &seq[0];
    let rec = model.decode(model.encode(q).unwrap().as_slice().unwrap()).unwrap();
    let z = q.map(|v| model.normalize(v));
    let err: f64 = rec
        .values()
        .iter()
        .zip(z.values().iter())
        .map(|(r, z)| (model.normalize(*r) - z).powi(2))
        .sum();
    let want = err / (norm_sq(&z) + cfg.eps1);
    let got = sequence_loss(&model, &seq, &cfg).unwrap();
    assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
}

#[test]
fn wrong_sequence_length_is_rejected() {
    let model = LranModel::new(small_arch(4), 0);
    let cfg = LranConfig {
        sequence_length: 3,
        ..LranConfig::default()
    };
    assert!(matches!(sequence_loss(&model, &frames(2), &cfg), Err(LranError::BadSequence(_))));
}

#[test]
fn checkpoint_round_trips_exactly() {
    let mut model = LranModel::new(small_arch(4), 11);
    model.input_mean = 0.125;
    model.input_std = 3.5;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lran");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, model);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"LRAN");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
    let dims: usize = model.params().iter().map(|p| 1 + p.ndim()).sum();
    assert_eq!(bytes.len(), 40 + 4 * dims + 8 * model.parameter_count());
}

#[test]
fn corrupted_checkpoints_are_format_errors() {
    let bytes = to_bytes(&LranModel::new(small_arch(4), 2)).unwrap();
    let mut bad = bytes.clone();
    bad[1] = b'X';
    assert!(matches!(from_bytes(&bad), Err(LranError::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(from_bytes(&bad), Err(LranError::Format(_))));
    assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(LranError::Format(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(from_bytes(&long), Err(LranError::Format(_))));
    // A latent size that disagrees with the tensors.
    let mut bad = bytes;
    bad[8] = 5;
    assert!(matches!(from_bytes(&bad), Err(LranError::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decode_encode_keeps_the_grid(latent in 16usize..=1024, seed in any::<u64>()) {
        let arch = Architecture::new(16, 24, [2, 2, 2, 2], latent).unwrap();
        let model = LranModel::new(arch, seed);
        let q = wave(Grid::new(24, 16).unwrap(), 0.1);
        let g = model.encode(&q).unwrap();
        prop_assert_eq!(g.len(), latent);
        let back = model.decode(g.as_slice().unwrap()).unwrap();
        prop_assert_eq!(back.grid(), q.grid());
    }

    #[test]
    fn normalization_inverts(v in -1e6f64..1e6, mean in -10.0f64..10.0, std in 1e-3f64..1e3) {
        let mut model = LranModel::new(small_arch(2), 0);
        model.input_mean = mean;
        model.input_std = std;
        let back = model.denormalize(model.normalize(v));
        prop_assert!((back - v).abs() <= 1e-12 * v.abs().max(mean.abs()).max(1e-300));
    }

    #[test]
    fn loss_is_monotone_in_beta(b1 in 0.0f64..10.0, extra in 0.0f64..10.0, seed in 0u64..1000, delta in 0.9f64..=1.0) {
        let model = LranModel::new(small_arch(4), seed);
        let seq = frames(3);
        let cfg = |beta| LranConfig { beta, delta, sequence_length: 3, ..LranConfig::default() };
        let l1 = sequence_loss(&model, &seq, &cfg(b1)).unwrap();
        let l2 = sequence_loss(&model, &seq, &cfg(b1 + extra)).unwrap();
        prop_assert!(l2 >= l1);
    }
}
