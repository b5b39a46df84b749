use proptest::prelude::*;

use rand::Rng;

use super::*;

fn spec(frames: Vec<Vec<f64>>) -> Spectrogram {
    let t = frames.len();
    let f = frames[0].len();
    Spectrogram::new(frames.into_iter().flatten().collect(), t, f, "fp".into()).unwrap()
}

/// Brute-force two-pass variance, bin by bin.
fn oracle(specs: &[Spectrogram]) -> Vec<f64> {
    let bins = specs[0].n_bins();
    (0..bins)
        .map(|k| {
            specs
                .iter()
                .map(|s| {
                    let col: Vec<f64> = (0..s.n_frames()).map(|t| s.get(t, k)).collect();
                    let m = col.iter().sum::<f64>() / col.len() as f64;
                    col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64
                })
                .sum::<f64>()
                / specs.len() as f64
        })
        .collect()
}

#[test]
fn gv_examples() {
    let flat = global_variance(&[spec(vec![vec![3.0, -1.0]; 5])], "x").unwrap();
    assert_eq!(flat.per_bin, vec![0.0, 0.0]);
    assert_eq!(flat.average, 0.0);
    let two = global_variance(&[spec(vec![vec![0.0], vec![2.0]])], "x").unwrap();
    assert_eq!(two.per_bin, vec![1.0]);
    assert_eq!(global_variance(&[], "x").unwrap_err().class(), "invalid-argument");
    let mixed = [spec(vec![vec![0.0]]), spec(vec![vec![0.0, 1.0]])];
    assert_eq!(global_variance(&mixed, "x").unwrap_err().class(), "invalid-argument");
}

#[test]
fn gv_table_file_format() {
    let r = global_variance(&[spec(vec![vec![0.0, 1.0], vec![2.0, 1.0]])], "M2F/proposed").unwrap();
    let mut out = Vec::new();
    r.write_table(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "0\t1\n1\t0\naverage\t0.5\n");
}

fn report(tag: &str, avg: f64) -> GvReport {
    GvReport { per_bin: vec![avg; 3], average: avg, condition_tag: tag.into() }
}

#[test]
fn comparison_table_layout() {
    let reports = vec![
        report("M2F/proposed", 0.0394),
        report("M2M/autoencoder", 0.034),
        report("M2M/stage1", 0.0326),
        report("M2M/proposed", 0.04),
    ];
    let table = gv_table(&reports);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "system\tM2M\tM2F\tF2M\tF2F");
    assert_eq!(lines[1], "(a) autoencoder alone\t0.0340\t-\t-\t-");
    assert_eq!(lines[2], "(b) stage 1 alone\t0.0326\t-\t-\t-");
    assert_eq!(lines[3], "(c) proposed\t0.0400\t0.0394\t-\t-");
}

#[test]
fn comparison_plot_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = global_variance(&[spec(vec![vec![0.0, 1.0, 4.0], vec![2.0, 1.0, 0.0]])], "M2M/stage1").unwrap();
    let b = GvReport { condition_tag: "M2M/proposed".into(), ..a.clone() };
    let (p1, p2) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let t1 = gv_compare(&[a.clone(), b.clone()], &p1).unwrap();
    let t2 = gv_compare(&[a.clone(), b], &p2).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(gv_compare(&[a.clone()], &p1).unwrap_err().class(), "invalid-argument");
    let short = GvReport { per_bin: vec![0.0], ..a.clone() };
    assert_eq!(gv_compare(&[a, short], &p1).unwrap_err().class(), "invalid-argument");
}

#[test]
fn heatmaps_share_one_scale() {
    let dir = tempfile::tempdir().unwrap();
    let a = spec(vec![vec![0.0, 1.0]; 3]);
    let b = spec(vec![vec![1.0, 2.0]; 3]);
    let path = dir.path().join("panels.png");
    plot_spectrograms(&[&a, &b], &path, None).unwrap();
    let img = image::open(&path).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (3, 2 + 2 + 4));
    // value 1.0: top row of panel a (bin 1) and bottom row of panel b (bin 0)
    assert_eq!(img.get_pixel(0, 0), img.get_pixel(0, 7));
    assert_ne!(img.get_pixel(0, 1), img.get_pixel(0, 6));
    let again = dir.path().join("again.png");
    plot_spectrograms(&[&a, &b], &again, None).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    plot_spectrogram(&a, &dir.path().join("single.png")).unwrap();
}

fn probe_model() -> ModelConfig {
    ModelConfig::shrunken(4, 17, 16)
}

/// `[8, 4]` latents, speakers cycling through 0..4; one-hot codes alternate
/// in sign over time so that they survive instance normalization.
fn latents(n: usize, seed: u64, make: impl Fn(usize, &mut ChaCha8Rng) -> Vec<f32>) -> Vec<LabeledLatent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let s = i % 4;
            (Tensor::new(&[8, 4], make(s, &mut rng)).unwrap(), s)
        })
        .collect()
}

fn quick() -> ProbeConfig {
    ProbeConfig { steps: 150, batch_size: 16, crop_frames: 4, adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() }, seed: 1 }
}

#[test]
fn probe_separates_one_hot_codes() {
    let one_hot = |s: usize, _: &mut ChaCha8Rng| (0..32).map(|i| if i / 4 == s { [1.0, -1.0][i % 2] } else { 0.0 }).collect();
    let r = disentanglement_probe(&probe_model(), &latents(200, 1, one_hot), &latents(400, 2, one_hot), &quick(), "one-hot")
        .unwrap();
    assert!(r.accuracy > 0.99, "{}", r.accuracy);
    assert_eq!(r.n_eval, 400);
    assert_eq!(r.line(), format!("one-hot\t{}\t400", r.accuracy));
}

#[test]
fn probe_on_noise_is_at_chance() {
    let noise = |_: usize, rng: &mut ChaCha8Rng| (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = disentanglement_probe(&probe_model(), &latents(400, 3, noise), &latents(1000, 4, noise), &quick(), "noise")
        .unwrap();
    assert!((r.accuracy - 0.25).abs() < 0.05, "{}", r.accuracy);
}

#[test]
fn probe_with_shuffled_labels_is_at_chance() {
    let one_hot = |s: usize, _: &mut ChaCha8Rng| (0..32).map(|i| if i / 4 == s { [1.0, -1.0][i % 2] } else { 0.0 }).collect();
    let mut train = latents(400, 5, one_hot);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for item in &mut train {
        item.1 = rng.gen_range(0..4);
    }
    let r = disentanglement_probe(&probe_model(), &train, &latents(1000, 6, one_hot), &quick(), "shuffled").unwrap();
    assert!((r.accuracy - 0.25).abs() < 0.1, "{}", r.accuracy);
}

#[test]
fn probe_needs_two_speakers() {
    let zeros = |_: usize, _: &mut ChaCha8Rng| vec![0.0; 32];
    let single: Vec<LabeledLatent> = latents(8, 0, zeros).into_iter().map(|(z, _)| (z, 1)).collect();
    let err = disentanglement_probe(&probe_model(), &single, &latents(4, 0, zeros), &quick(), "x").unwrap_err();
    assert_eq!(err.class(), "invalid-argument");
}

#[test]
fn voice_groups_and_directions() {
    assert_eq!((0..4).map(|s| voice_group(s, 4)).collect::<String>(), "MMFF");
    assert_eq!((0..5).map(|s| voice_group(s, 5)).collect::<String>(), "MMFFF");
}

fn random_specs(seed: u64, frames_pow2: bool) -> Vec<Spectrogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..5);
    let bins = rng.gen_range(1..9);
    (0..n)
        .map(|_| {
            let t = if frames_pow2 { 1 << rng.gen_range(1..5) } else { rng.gen_range(1..40) };
            let frames = (0..t)
                .map(|_| {
                    (0..bins)
                        .map(|_| if frames_pow2 { rng.gen_range(-64i32..64) as f64 / 16.0 } else { rng.gen_range(-12.0..3.0) })
                        .collect()
                })
                .collect();
            spec(frames)
        })
        .collect()
}

#[test]
fn gv_matches_the_oracle_on_random_sets() {
    for seed in 0..100 {
        let specs = random_specs(seed, false);
        let r = global_variance(&specs, "x").unwrap();
        for (a, b) in r.per_bin.iter().zip(oracle(&specs)) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((r.average - r.per_bin.iter().sum::<f64>() / r.per_bin.len() as f64).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn gv_invariances_are_exact_on_dyadic_values(seed in any::<u64>(), shift in -8i32..8, rot in 0usize..16) {
        // dyadic values and power-of-two frame counts keep every operation exact
        let specs = random_specs(seed, true);
        let base = global_variance(&specs, "x").unwrap();
        let shifted: Vec<Spectrogram> = specs
            .iter()
            .map(|s| Spectrogram::new(s.data().iter().map(|v| v + shift as f64).collect(), s.n_frames(), s.n_bins(), "fp".into()).unwrap())
            .collect();
        prop_assert_eq!(&global_variance(&shifted, "x").unwrap().per_bin, &base.per_bin);
        let permuted: Vec<Spectrogram> = specs
            .iter()
            .map(|s| {
                let t = s.n_frames();
                let frames: Vec<Vec<f64>> = (0..t).map(|i| s.frame((i + rot) % t).to_vec()).rev().collect();
                spec(frames)
            })
            .collect();
        prop_assert_eq!(&global_variance(&permuted, "x").unwrap().per_bin, &base.per_bin);
    }

    #[test]
    fn gv_invariances_hold_on_real_values(seed in any::<u64>(), shift in -20.0f64..20.0) {
        let specs = random_specs(seed, false);
        let base = global_variance(&specs, "x").unwrap();
        let shifted: Vec<Spectrogram> = specs
            .iter()
            .map(|s| Spectrogram::new(s.data().iter().map(|v| v + shift).collect(), s.n_frames(), s.n_bins(), "fp".into()).unwrap())
            .collect();
        for (a, b) in global_variance(&shifted, "x").unwrap().per_bin.iter().zip(&base.per_bin) {
            prop_assert!((a - b).abs() < 1e-10);
            prop_assert!(*a >= 0.0);
        }
    }
}
