use proptest::prelude::*;
use rbc_core::dataset::{
    convective_field, convective_flux, make_sequences, manifest_path, nsse, read_episode, write_episode,
    DatasetError, Episode, EpisodeManifest, SplitSpec,
};
use rbc_core::dns::{initial_condition, RbcSolver, SimulationConfig};
use rbc_core::{Grid, ScalarField};

fn small_grid() -> Grid {
    Grid::new(6, 4).unwrap()
}

fn episode_from(seed: u64, n: usize, values: &[f64]) -> Episode<f64> {
    let g = small_grid();
    let snaps = (0..n)
        .map(|k| {
            let flat: Vec<f64> = (0..g.len())
                .map(|i| values[(k * g.len() + i) % values.len()] as f32 as f64)
                .collect();
            ScalarField::from_flat(g, flat).unwrap()
        })
        .collect();
    let times = (0..n).map(|k| 101.0 + k as f64).collect();
    Episode::new(1e5, 0.7, seed, times, snaps).unwrap()
}

#[test]
fn uniform_velocity_scales_temperature_deviation() {
    let g = small_grid();
    let u = ScalarField::<f64>::constant(g, 0.5);
    assert!(convective_flux(&u, &ScalarField::constant(g, 4.0)).unwrap().max_abs() < 1e-15);
    let t = ScalarField::<f64>::from_fn(g, |_, y| if y < 0.0 { 1.0 } else { 3.0 });
    let q = convective_flux(&u, &t).unwrap();
    let mean = t.mean();
    for j in 0..g.ny {
        for i in 0..g.nx {
            assert!((q.get(j, i) - 0.5 * (t.get(j, i) - mean)).abs() < 1e-15);
        }
    }
}

#[test]
fn conduction_has_zero_flux() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.noise_amplitude = 0.0;
    let s = initial_condition::<f64>(&cfg).unwrap();
    assert_eq!(convective_field(&s).max_abs(), 0.0);
}

#[test]
fn flux_of_a_live_state_has_zero_mean_temperature_deviation() {
    let mut cfg = SimulationConfig::desk(1e5);
    cfg.noise_amplitude = 1e-2;
    let solver = RbcSolver::<f64>::new(&cfg).unwrap();
    let s = solver.advance(initial_condition(&cfg).unwrap(), 400).unwrap();
    let mean = s.temperature.mean();
    let theta = s.temperature.map(|t| t - mean);
    assert!(theta.mean().abs() <= 1e-12);
}

#[test]
fn nsse_examples() {
    // (1, 0) against (0, 1), padded with zeros.
    let g = Grid::new(2, 2).unwrap();
    let q = ScalarField::from_flat(g, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let p = ScalarField::from_flat(g, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(nsse(&q, &p).unwrap(), 2.0);
    assert_eq!(nsse(&q, &q).unwrap(), 0.0);
    assert_eq!(nsse(&q, &ScalarField::zeros(g)).unwrap(), 1.0);
    assert!(matches!(
        nsse(&ScalarField::zeros(g), &q),
        Err(DatasetError::ZeroReference)
    ));
}

#[test]
fn corrupted_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.rbce");
    write_episode(&episode_from(1, 3, &[0.25, -1.5, 3.0]), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(read_episode::<f64>(&path), Err(DatasetError::Format(_))));
}

#[test]
fn truncated_data_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.rbce");
    write_episode(&episode_from(1, 3, &[0.25, -1.5, 3.0]), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(read_episode::<f64>(&path), Err(DatasetError::Format(_))));
}

#[test]
fn manifest_mismatch_reports_both_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.rbce");
    write_episode(&episode_from(1, 3, &[0.5]), &path).unwrap();
    let mpath = manifest_path(&path);
    let mut m: EpisodeManifest = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
    m.ra = 2e5;
    std::fs::write(&mpath, serde_json::to_string(&m).unwrap()).unwrap();
    match read_episode::<f64>(&path) {
        Err(DatasetError::Format(msg)) => {
            assert!(msg.contains("100000") && msg.contains("200000"), "{msg}");
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_episode::<f64>(&dir.path().join("none.rbce")),
        Err(DatasetError::Io(_))
    ));
}

#[test]
fn header_layout_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.rbce");
    let ep = episode_from(9, 2, &[1.0, 2.0]);
    write_episode(&ep, &path).unwrap();
    let b = std::fs::read(&path).unwrap();
    assert_eq!(&b[0..4], b"RBCE");
    let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(b[i..i + 8].try_into().unwrap());
    assert_eq!([u32_at(4), u32_at(8), u32_at(12), u32_at(16), u32_at(20)], [1, 4, 6, 2, 0]);
    assert_eq!([f64_at(24), f64_at(32), f64_at(40), f64_at(48)], [1e5, 0.7, 101.0, 1.0]);
    assert_eq!(u64::from_le_bytes(b[56..64].try_into().unwrap()), 9);
    assert_eq!(b.len(), 64 + 2 * 24 * 4);
    // Snapshot-major, row-major.
    assert_eq!(f32::from_le_bytes(b[64..68].try_into().unwrap()), 1.0);
    assert_eq!(f32::from_le_bytes(b[68..72].try_into().unwrap()), 2.0);
}

fn toy(n: usize) -> Episode<f64> {
    episode_from(0, n, &[1.0, -2.0, 0.5])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nsse_is_quadratic_in_scale(vals in prop::collection::vec(-10.0f64..10.0, 24), alpha in -3.0f64..3.0) {
        prop_assume!(vals.iter().any(|v| v.abs() > 1e-3));
        let q = ScalarField::from_flat(small_grid(), vals).unwrap();
        let e = nsse(&q, &q.map(|v| alpha * v)).unwrap();
        prop_assert!((e - (1.0 - alpha).powi(2)).abs() <= 1e-12 * (1.0 + e));
    }

    #[test]
    fn nsse_is_nonnegative_and_zero_only_at_equality(
        a in prop::collection::vec(-5.0f64..5.0, 24),
        b in prop::collection::vec(-5.0f64..5.0, 24),
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
        let q = ScalarField::from_flat(small_grid(), a).unwrap();
        let p = ScalarField::from_flat(small_grid(), b).unwrap();
        let e = nsse(&q, &p).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert_eq!(e == 0.0, q == p);
    }

    #[test]
    fn convective_flux_commutes_with_periodic_shift(
        u in prop::collection::vec(-1.0f64..1.0, 24),
        t in prop::collection::vec(1.0f64..2.0, 24),
        k in 0usize..6,
    ) {
        let g = small_grid();
        let u = ScalarField::from_flat(g, u).unwrap();
        let t = ScalarField::from_flat(g, t).unwrap();
        let shifted = convective_flux(&u.shift_x(k), &t.shift_x(k)).unwrap();
        let q = convective_flux(&u, &t).unwrap().shift_x(k);
        // The mean is a sum in a different order, so allow rounding.
        for (a, b) in shifted.values().iter().zip(q.values().iter()) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn windows_cover_training_prefix(train_end in 4usize..80, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let length = 2 + ((train_end / 2 - 2) as f64 * frac) as usize;
        let ep = toy(train_end + 1);
        let split = SplitSpec { train_end, test_length: 1 };
        let set = make_sequences(&ep, length, &split, seed).unwrap();
        prop_assert_eq!(set.len(), train_end - length);
        let mut covered = vec![false; train_end];
        for &s in &set.starts {
            for c in covered.iter_mut().skip(s).take(length) {
                *c = true;
            }
        }
        // The last window starts at train_end - length - 1, so it ends one
        // short of the final training index.
        prop_assert!(covered[..train_end - 1].iter().all(|&c| c));
        prop_assert_eq!(set.validation_starts().len(), set.len() / 5);
        prop_assert_eq!(set.train_starts().len() + set.validation_starts().len(), set.len());
    }

    #[test]
    fn persistence_round_trips(seed in any::<u64>(), n in 1usize..6, vals in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let ep = episode_from(seed, n, &vals);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep.rbce");
        write_episode(&ep, &path).unwrap();
        let back = read_episode::<f64>(&path).unwrap();
        prop_assert_eq!(back.snapshots(), ep.snapshots());
        prop_assert_eq!(back.times(), ep.times());
        prop_assert_eq!((back.ra, back.pr, back.seed), (ep.ra, ep.pr, ep.seed));
        // Without the manifest the header alone reconstructs the episode.
        std::fs::remove_file(manifest_path(&path)).unwrap();
        let bare = read_episode::<f64>(&path).unwrap();
        prop_assert_eq!(bare.snapshots(), ep.snapshots());
        prop_assert_eq!(bare.times(), ep.times());
    }
}
