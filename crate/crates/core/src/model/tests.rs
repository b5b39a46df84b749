use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::Tape;
use crate::dsp::Spectrogram;
use crate::nn::{Mode, ParamBuilder, ParamSet};
use crate::tensor::Tensor;

fn tiny(n_speakers: usize, feat_bins: usize, frames: usize) -> ModelConfig {
    ModelConfig::shrunken(n_speakers, feat_bins, frames)
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn encoder_downsamples_by_eight_and_decoder_restores() {
    let cfg = tiny(3, 17, 16);
    let nets = Networks::new(&cfg, 1).unwrap();
    for frames in [16, 64, 128, 256] {
        let x = random(&[2, 17, frames], frames as u64);
        let z = nets.encode(&x).unwrap();
        assert_eq!(z.shape(), &[2, cfg.latent_dim(), frames / 8]);
        let y = nets.decode(&z, &[0, 2]).unwrap();
        assert_eq!(y.shape(), x.shape());
        let r = nets.residual(&z, &[0, 2]).unwrap();
        assert_eq!(r.shape(), x.shape());
    }
}

#[test]
fn encoder_rejects_indivisible_length() {
    let nets = Networks::new(&tiny(3, 17, 16), 1).unwrap();
    let err = nets.encode(&random(&[1, 17, 20], 0)).unwrap_err();
    assert_eq!(err.class(), "invalid-argument");
}

#[test]
fn decoder_rejects_unknown_speaker() {
    let nets = Networks::new(&tiny(3, 17, 16), 1).unwrap();
    let z = nets.encode(&random(&[1, 17, 16], 0)).unwrap();
    assert_eq!(nets.decode(&z, &[3]).unwrap_err().class(), "invalid-argument");
}

#[test]
fn decoder_conditioning_depends_on_speaker() {
    let nets = Networks::new(&tiny(3, 17, 16), 4).unwrap();
    let z = nets.encode(&random(&[1, 17, 32], 5)).unwrap();
    let a = nets.decode(&z, &[0]).unwrap();
    let b = nets.decode(&z, &[1]).unwrap();
    let diff = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
    assert!(diff > 0.0);
}

#[test]
fn generator_starts_at_zero_residual() {
    let nets = Networks::new(&tiny(3, 17, 16), 4).unwrap();
    let z = nets.encode(&random(&[2, 17, 32], 5)).unwrap();
    let r = nets.residual(&z, &[1, 2]).unwrap();
    assert!(r.data().iter().all(|&v| v == 0.0));
}

#[test]
fn pixel_shuffle_examples() {
    let x = Tensor::new(&[2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
    let y = pixel_shuffle_1d(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 4]);
    assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);

    let x = random(&[4, 3], 0);
    assert_eq!(pixel_shuffle_1d(&x, 2).unwrap().shape(), &[2, 6]);
    assert_eq!(pixel_shuffle_1d(&x, 1).unwrap(), x);
    assert_eq!(pixel_shuffle_1d(&random(&[3, 3], 0), 2).unwrap_err().class(), "invalid-argument");
}

proptest! {
    #[test]
    fn pixel_shuffle_is_a_bijection(c in 1usize..6, r in 1usize..5, t in 1usize..7, seed in any::<u64>()) {
        let x = random(&[c * r, t], seed);
        let y = pixel_shuffle_1d(&x, r).unwrap();
        for ch in 0..c * r {
            for tt in 0..t {
                let (oc, j) = (ch / r, ch % r);
                prop_assert_eq!(y.data()[oc * t * r + tt * r + j], x.data()[ch * t + tt]);
            }
        }
        prop_assert_eq!(pixel_unshuffle_1d(&y, r).unwrap(), x);
    }

    #[test]
    fn instance_norm_normalizes_each_channel(c in 1usize..5, t in 2usize..40, seed in any::<u64>()) {
        let x = random(&[c, t], seed).cast::<f64>();
        let y = instance_norm(&x).unwrap();
        for (row, raw) in y.data().chunks(t).zip(x.data().chunks(t)) {
            let mean = row.iter().sum::<f64>() / t as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
            let raw_mean = raw.iter().sum::<f64>() / t as f64;
            let raw_var = raw.iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / t as f64;
            prop_assert!(mean.abs() < 1e-6);
            // the epsilon only matters for near-constant channels
            if raw_var > 0.1 {
                prop_assert!((var - 1.0).abs() < 1e-4);
            }
        }
        // the epsilon term breaks exact scale invariance, so only channels with
        // non-negligible spread are held to the tolerance
        let wide = x.map(|v| 10.0 * v);
        let yw = instance_norm(&wide).unwrap();
        let ys = instance_norm(&wide.map(|v| 5.0 * v)).unwrap();
        for ((a, b), raw) in yw.data().chunks(t).zip(ys.data().chunks(t)).zip(x.data().chunks(t)) {
            let m = raw.iter().sum::<f64>() / t as f64;
            if raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (t as f64) < 0.05 {
                continue;
            }
            for (p, q) in a.iter().zip(b) {
                prop_assert!((p - q).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn instance_norm_edge_cases() {
    let constant = Tensor::full(&[2, 5], 3.0f64);
    assert!(instance_norm(&constant).unwrap().data().iter().all(|&v| v == 0.0));
    assert_eq!(instance_norm(&Tensor::full(&[2, 1], 1.0f64)).unwrap_err().class(), "invalid-argument");
}

#[test]
fn conv_bank_preserves_time_and_concatenates() {
    for k in 1..=8 {
        let mut set = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let bank = ConvBank::new(&mut ParamBuilder::new(&mut set, &mut rng), 5, 3, k, 0.2);
        let y = conv_bank(&bank, &set, &random(&[5, 11], 9)).unwrap();
        assert_eq!(y.shape(), &[3 * k, 11]);
    }
}

#[test]
fn conv_bank_with_identity_kernel() {
    let c = 4;
    let mut set = ParamSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bank = ConvBank::new(&mut ParamBuilder::new(&mut set, &mut rng), c, c, 1, 0.2);
    let conv = &bank.branches()[0];
    *set.get_mut(conv.weight()) = Tensor::from_fn(&[c, c, 1], |i| if i / c == i % c { 1.0 } else { 0.0 });
    *set.get_mut(conv.bias()) = Tensor::zeros(&[c]);
    let x = random(&[c, 9], 3).cast::<f64>();
    let y = conv_bank(&bank, &set.cast::<f64>(), &x).unwrap();
    let expected = instance_norm(&x.map(|v| if v > 0.0 { v } else { 0.2 * v })).unwrap();
    for (a, b) in y.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn classifier_output_is_per_speaker_for_any_length() {
    let cfg = tiny(5, 17, 16);
    let nets = Networks::new(&cfg, 2).unwrap();
    for len in [2, 3, 16] {
        let logits = nets.classify(&random(&[2, cfg.latent_dim(), len], 1)).unwrap();
        assert_eq!(logits.shape(), &[2, 5]);
    }
}

#[test]
fn classifier_on_time_constant_latent_matches_single_frame() {
    // pointwise kernels keep a constant sequence constant, free of edge effects
    let cfg = ModelConfig { classifier_kernel: 1, ..tiny(3, 17, 16) };
    let nets = Networks::new(&cfg, 2).unwrap();
    let d = cfg.latent_dim();
    let column = random(&[d], 8);
    let long = Tensor::from_fn(&[1, d, 12], |i| column.data()[i / 12]);
    let a = nets.classify(&long).unwrap();
    // instance norm needs two positions, so compare against a two-frame input
    let short = Tensor::from_fn(&[1, d, 2], |i| column.data()[i / 2]);
    let b = nets.classify(&short).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn kernel_one_classifier_is_permutation_invariant() {
    let cfg = ModelConfig { classifier_kernel: 1, ..tiny(3, 17, 16) };
    let nets = Networks::new(&cfg, 2).unwrap();
    let d = cfg.latent_dim();
    let len = 10;
    let z = random(&[1, d, len], 4).cast::<f64>();
    let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
    let zp = Tensor::from_fn(&[1, d, len], |i| z.data()[(i / len) * len + perm[i % len]]);
    let run = |x: &Tensor<f64>| {
        let mut t = Tape::<f64>::new();
        let p = nets.params(Net::Classifier1).cast::<f64>().bind(&mut t, false);
        let xv = t.constant(x.clone());
        let y = nets.classifier.forward(&mut t, &p, xv, &mut Mode::eval()).unwrap();
        t.value(y).clone()
    };
    let (a, b) = (run(&z), run(&zp));
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn discriminator_reduces_paper_segment_to_33_by_4() {
    let cfg = ModelConfig { disc_channels: vec![2; 5], disc_out_channels: 2, ..tiny(3, 1025, 128) };
    assert_eq!(ModelConfig::paper(20, 1025).disc_output_dims(), (33, 4));
    let mut set = ParamSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let disc = Discriminator::new(&cfg, &mut ParamBuilder::new(&mut set, &mut rng));
    let mut t = Tape::<f32>::new();
    let p = set.bind(&mut t, false);
    let x = t.constant(random(&[1, 1025, 128], 0));
    let h = disc.trunk(&mut t, &p, x).unwrap();
    assert_eq!(t.shape(h), &[1, 2, 33, 4]);
    let out = disc.forward(&mut t, &p, x).unwrap();
    assert_eq!(t.shape(out.score), &[1, 1]);
    assert_eq!(t.shape(out.logits), &[1, 3]);
}

#[test]
fn discriminator_rejects_wrong_segment_shape() {
    let nets = Networks::new(&tiny(3, 17, 16), 0).unwrap();
    assert_eq!(nets.criticize(&random(&[1, 17, 32], 0)).unwrap_err().class(), "invalid-argument");
}

#[test]
fn discriminator_heads_share_the_trunk() {
    let mut nets = Networks::new(&tiny(3, 17, 16), 0).unwrap();
    let x = random(&[2, 17, 16], 1);
    let (s0, l0) = nets.criticize(&x).unwrap();
    let w = nets.discriminator.first_conv_weight();
    let set = nets.params_mut(Net::Discriminator);
    let perturbed = set.get(w).map(|v| v * 1.5 + 0.01);
    *set.get_mut(w) = perturbed;
    let (s1, l1) = nets.criticize(&x).unwrap();
    assert_ne!(s0, s1);
    assert_ne!(l0, l1);
}

#[test]
fn forward_passes_are_deterministic() {
    let cfg = tiny(3, 17, 16);
    let a = Networks::new(&cfg, 11).unwrap();
    let b = Networks::new(&cfg, 11).unwrap();
    let x = random(&[2, 17, 16], 2);
    let za = a.encode(&x).unwrap();
    assert_eq!(za, b.encode(&x).unwrap());
    assert_eq!(a.decode(&za, &[0, 1]).unwrap(), b.decode(&za, &[0, 1]).unwrap());
    assert_eq!(a.criticize(&x).unwrap(), b.criticize(&x).unwrap());
    for net in Net::ALL {
        assert_eq!(a.param_hash(net), b.param_hash(net));
    }
    assert_ne!(Networks::new(&cfg, 12).unwrap().param_hash(Net::Encoder), a.param_hash(Net::Encoder));
}

#[test]
fn embedding_tables_match_layer_widths() {
    let cfg = tiny(4, 17, 16);
    let nets = Networks::new(&cfg, 0).unwrap();
    let dims = cfg.embedding_dims();
    let tables = nets.decoder.embedding_tables();
    assert_eq!(tables.len(), dims.len());
    for (id, d) in tables.into_iter().zip(dims) {
        assert_eq!(nets.params(Net::Decoder).get(id).shape(), &[4, d]);
    }
}

#[test]
fn config_validation() {
    let cfg = tiny(3, 17, 20);
    assert_eq!(cfg.validate().unwrap_err().class(), "invalid-argument");
    assert!(ModelConfig { n_speakers: 1, ..tiny(3, 17, 16) }.validate().is_err());
    let paper = ModelConfig::paper(20, 1025);
    assert_eq!(paper.downsample_factor(), 8);
    assert_eq!(paper.latent_dim(), 512);
    paper.validate().unwrap();
}

#[test]
fn checkpoint_round_trip_gives_identical_forward() {
    use crate::nn::{Adam, AdamConfig};
    use std::collections::BTreeMap;

    let cfg = tiny(3, 17, 16);
    let nets = Networks::new(&cfg, 7).unwrap();
    let mut states = BTreeMap::new();
    for net in Net::ALL {
        let params = nets.params(net).clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step = 3;
        adam.m[0][0] = 0.25;
        states.insert(net, NetworkState { params, adam });
    }
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            model: cfg.clone(),
            model_fingerprint: cfg.fingerprint(),
            dsp_fingerprint: "dsp".into(),
            schedule_fingerprint: "sched".into(),
            stage: "stage1".into(),
            counters: BTreeMap::from([("main_updates".to_string(), 3)]),
            speakers: vec!["a".into(), "b".into(), "c".into()],
            rng_seed: "00".into(),
            rng_stream: 0,
            rng_word_pos: "17".into(),
            feature_norm: Some(FeatureNorm { mean: vec![-3.25, 0.1], std: vec![1.0 / 3.0, 2.0] }),
        },
        nets: states,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let mut restored = Networks::new(&cfg, 99).unwrap();
    for net in Net::ALL {
        restored.params_mut(net).load_from(&loaded.nets[&net].params).unwrap();
    }
    let x = random(&[1, 17, 16], 3);
    let z = nets.encode(&x).unwrap();
    assert_eq!(restored.encode(&x).unwrap(), z);
    assert_eq!(restored.decode(&z, &[2]).unwrap(), nets.decode(&z, &[2]).unwrap());
    assert_eq!(restored.criticize(&x).unwrap(), nets.criticize(&x).unwrap());

    std::fs::write(&path, b"garbage").unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap_err().class(), "malformed-file");
}

#[test]
fn feature_norm_standardizes_and_restores() {
    let a = Spectrogram::new(vec![1.0, 5.0, 3.0, 5.0], 2, 2, "fp".into()).unwrap();
    let n = FeatureNorm::fit([&a]).unwrap();
    assert_eq!(n.mean, vec![2.0, 5.0]);
    assert_eq!(n.std, vec![1.0, 1e-3]);
    assert_eq!(n.apply(&a).unwrap(), vec![-1.0, 1.0, 0.0, 0.0]);
    assert_eq!(n.restore(0, 1.0), 3.0);
    assert_eq!(n.restore_delta(1, 2.0), 2e-3);
    let wrong = Spectrogram::new(vec![0.0; 3], 1, 3, "fp".into()).unwrap();
    assert_eq!(n.apply(&wrong).unwrap_err().class(), "config-mismatch");
    assert_eq!(FeatureNorm::fit([]).unwrap_err().class(), "invalid-argument");
}
