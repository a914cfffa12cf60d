use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;

use cratedig_core::activity::{binarize_and_merge, windows_to_timeline};
use cratedig_core::audio::{self, AudioBuffer};
use cratedig_core::boundaries::{kernel_frames, novelty_curve, pick_peaks};
use cratedig_core::classifier::{argmax, classify, softmax_probs, ToolClass};
use cratedig_core::embedding::{EmbeddingCache, MockAudioMode, MockBackend};
use cratedig_core::features::{log_mel_features, self_similarity, FeatureMatrix, Ssm};
use cratedig_core::segmentation::{cut_segments, snap_boundaries};
use cratedig_core::{
    ActivityConfig, ActivityTimeline, BoundaryConfig, BoundarySet, BoundarySource, ClassSet, ClassSpec, Embedding,
    Encoder, FeatureConfig, Modality, SegmentConfig,
};

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 1e-6).then(|| v.iter().map(|x| x / n).collect())
}

fn sine(hz: f64, seconds: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * rate as f64).round() as usize;
    (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * hz * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

fn matrix(frames: Vec<Vec<f64>>, period: f64) -> FeatureMatrix {
    let times = (0..frames.len()).map(|i| i as f64 * period).collect();
    FeatureMatrix::new(frames, times).unwrap()
}

/// Novelty straight from its definition: the checkerboard kernel `w(u) w(v)`
/// correlated with the SSM, kernel shrunk symmetrically at the edges.
fn oracle_novelty(s: &[Vec<f64>], half: usize) -> Vec<f64> {
    let n = s.len();
    let sigma = (half as f64 / 2.0).max(0.5);
    let w = |u: isize| (u.signum() as f64) * (-((u * u) as f64) / (2.0 * sigma * sigma)).exp();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let r = half.min(i).min(n - 1 - i) as isize;
            let mut acc = 0.0;
            for u in -r..=r {
                for v in -r..=r {
                    acc += w(u) * w(v) * s[(i as isize + u) as usize][(i as isize + v) as usize];
                }
            }
            acc
        })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let full = (2.0 * (1..=half).map(|u| w(u as isize)).sum::<f64>()).powi(2);
    if max <= 1e-4 * full {
        return vec![0.0; n];
    }
    raw.iter().map(|v| v.max(0.0) / max).collect()
}

fn anchors_set(anchors: &[Vec<f64>]) -> ClassSet {
    let classes = anchors
        .iter()
        .enumerate()
        .map(|(i, a)| ToolClass {
            spec: ClassSpec {
                id: format!("c{i}"),
                display_name: format!("c{i}"),
                prompts: vec![format!("p{i}")],
            },
            anchor: Embedding::from_vector(a.iter().map(|&x| x as f32).collect(), Modality::Text).unwrap(),
        })
        .collect();
    ClassSet::new(classes, 100.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wav_round_trip_within_quantisation(samples in vec(-1.0f32..0.99996, 1..4000), rate in 8000u32..48001) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        audio::export_wav(&AudioBuffer::new(samples.clone(), rate).unwrap(), &path).unwrap();
        let back = audio::decode(&path).unwrap();
        prop_assert_eq!(back.len(), samples.len());
        prop_assert_eq!(back.sample_rate(), rate);
        for (a, b) in samples.iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn adjacent_slices_add_up(len in 100usize..20000, a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let buf = AudioBuffer::new(vec![0.25; len], 8000).unwrap();
        let mut cuts = [a, b, c];
        cuts.sort_by(f64::total_cmp);
        let d = buf.duration_seconds();
        let [a, b, c] = cuts.map(|x| x * d);
        prop_assume!(a < b && b < c);
        let whole = audio::slice(&buf, a, c).unwrap().len() as i64;
        let parts = (audio::slice(&buf, a, b).unwrap().len() + audio::slice(&buf, b, c).unwrap().len()) as i64;
        prop_assert!((whole - parts).abs() <= 1);
    }

    #[test]
    fn resample_keeps_duration_and_level(hz in 50.0f64..2000.0, from in prop::sample::select(vec![16000u32, 22050, 44100, 48000]), to in prop::sample::select(vec![16000u32, 22050, 44100, 48000])) {
        prop_assume!(hz < from.min(to) as f64 / 4.0);
        let buf = AudioBuffer::new(sine(hz, 0.5, from), from).unwrap();
        let out = audio::resample(&buf, to).unwrap();
        prop_assert!((out.duration_seconds() - buf.duration_seconds()).abs() <= 1.0 / to as f64);
        let rms = |s: &[f32]| {
            let edge = s.len() / 10;
            let mid = &s[edge..s.len() - edge];
            (mid.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / mid.len() as f64).sqrt()
        };
        let (r0, r1) = (rms(buf.samples()), rms(out.samples()));
        prop_assert!((r1 - r0).abs() <= 0.05 * r0, "rms {} -> {}", r0, r1);
    }

    #[test]
    fn ssm_symmetric_bounded_and_scale_invariant(
        frames in vec(vec(-5.0f64..5.0, 6), 3..25),
        scales in vec(0.01f64..100.0, 25),
    ) {
        let feat = matrix(frames.clone(), 0.05);
        let ssm = self_similarity(&feat).unwrap();
        let n = ssm.len();
        for i in 0..n {
            for j in 0..n {
                let v = ssm.get(i, j);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
                prop_assert_eq!(v, ssm.get(j, i));
            }
        }
        let scaled: Vec<Vec<f64>> = frames.iter().zip(&scales).map(|(f, s)| f.iter().map(|x| x * s).collect()).collect();
        let other = self_similarity(&matrix(scaled, 0.05)).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((ssm.get(i, j) - other.get(i, j)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn novelty_routes_match_the_definition(frames in vec(vec(-1.0f64..1.0, 4), 10), zero_at in prop::option::of(0usize..10)) {
        let mut frames = frames;
        if let Some(z) = zero_at {
            frames[z] = vec![0.0; 4];
        }
        let feat = matrix(frames, 1.0);
        let factored = self_similarity(&feat).unwrap();
        let dense = Ssm::from_dense(factored.to_dense(), feat.frame_times().to_vec()).unwrap();
        let kernel_seconds = 5.0;
        let half = (kernel_frames(kernel_seconds, 1.0) - 1) / 2;
        let want = oracle_novelty(&factored.to_dense(), half);
        let a = novelty_curve(&factored, kernel_seconds).unwrap();
        let b = novelty_curve(&dense, kernel_seconds).unwrap();
        prop_assert_eq!(a.values().len(), want.len());
        prop_assert_eq!(b.values().len(), want.len());
        for ((&x, &y), &w) in a.values().iter().zip(b.values()).zip(&want) {
            prop_assert!((x - w).abs() <= 1e-9, "factored {} vs {}", x, w);
            prop_assert!((y - w).abs() <= 1e-9, "dense {} vs {}", y, w);
        }
    }

    #[test]
    fn novelty_ignores_block_relabelling(
        labels in vec(0usize..4, 2..6),
        lens in vec(11usize..30, 6),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let build = |map: &dyn Fn(usize) -> usize| {
            let mut frames = Vec::new();
            for (b, &l) in labels.iter().enumerate() {
                for _ in 0..lens[b] {
                    let mut f = vec![0.0; 4];
                    f[map(l)] = 1.0;
                    frames.push(f);
                }
            }
            matrix(frames, 0.1)
        };
        let a = build(&|l| l);
        let b = build(&|l| perm[l]);
        let cfg = BoundaryConfig { kernel_seconds: 2.1, peak_median_window_seconds: 4.0, peak_offset: 0.05, min_separation_seconds: 1.0 };
        let duration = a.len() as f64 * 0.1;
        let na = novelty_curve(&self_similarity(&a).unwrap(), cfg.kernel_seconds).unwrap();
        let nb = novelty_curve(&self_similarity(&b).unwrap(), cfg.kernel_seconds).unwrap();
        for (x, y) in na.values().iter().zip(nb.values()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(pick_peaks(&na, &cfg, duration).unwrap(), pick_peaks(&nb, &cfg, duration).unwrap());
    }

    #[test]
    fn boundary_sets_stay_valid(times in vec(-10.0f64..400.0, 0..30), duration in 0.5f64..300.0, onsets in vec(0.0f64..300.0, 0..20), tol in 0.0f64..5.0) {
        let b = BoundarySet::from_times(times, duration, BoundarySource::Imported).unwrap();
        prop_assert!(b.validate().is_ok());
        let snapped = snap_boundaries(&b, &onsets, tol).unwrap();
        prop_assert!(snapped.validate().is_ok());
        let segs = cut_segments(duration, &snapped, &SegmentConfig::default()).unwrap();
        prop_assert!(!segs.is_empty());
    }

    #[test]
    fn rerendered_windows_are_a_fixed_point(
        speech in vec(0.0f64..1.0, 2..300),
        music_seed in vec(0.0f64..1.0, 300),
        period in 0.01f64..0.2,
        thr in 0.05f64..0.95,
        min in 0.01f64..1.0,
        gap in 0.01f64..1.0,
    ) {
        let n = speech.len();
        let times: Vec<f64> = (0..n).map(|i| i as f64 * period).collect();
        let tl = ActivityTimeline::new(times.clone(), speech, music_seed[..n].to_vec()).unwrap();
        let cfg = ActivityConfig { speech_threshold: thr, music_threshold: thr, min_window_seconds: min, merge_gap_seconds: gap };
        let (s, m) = binarize_and_merge(&tl, &cfg).unwrap();
        let again = windows_to_timeline(&s, &m, &times).unwrap();
        let (s2, m2) = binarize_and_merge(&again, &cfg).unwrap();
        prop_assert_eq!(s, s2);
        prop_assert_eq!(m, m2);
    }

    #[test]
    fn softmax_contracts(logits in vec(-1.0f64..1.0, 2..12), scale in 0.001f64..500.0, rot in 0usize..12) {
        let p = softmax_probs(&logits, scale).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(argmax(&p), argmax(&logits));
        let mut rotated = logits.clone();
        rotated.rotate_left(rot % logits.len());
        let mut pr = p.clone();
        pr.rotate_left(rot % logits.len());
        let q = softmax_probs(&rotated, scale).unwrap();
        for (a, b) in q.iter().zip(&pr) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn logits_ignore_vector_scale(
        anchors in vec(vec(-1.0f64..1.0, 16), 2..6),
        audio in vec(-1.0f64..1.0, 16),
        k in 0.001f64..1000.0,
    ) {
        let anchors: Vec<Vec<f64>> = anchors.iter().filter_map(|a| unit(a)).collect();
        prop_assume!(anchors.len() >= 2 && unit(&audio).is_some());
        let cs = anchors_set(&anchors);
        let e = |v: &[f64]| Embedding::from_vector(v.iter().map(|&x| x as f32).collect(), Modality::Audio).unwrap();
        let scaled: Vec<f64> = audio.iter().map(|x| x * k).collect();
        let a = classify(&e(&audio), &cs).unwrap();
        let b = classify(&e(&scaled), &cs).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
        prop_assert!(a.logits.iter().all(|l| l.abs() <= 1.0 + 1e-6));
    }

    #[test]
    fn embeddings_are_unit_norm_and_cache_round_trips(v in vec(-1e3f32..1e3, 1..64)) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
        let e = Embedding::from_vector(v, Modality::Audio).unwrap();
        prop_assert!((e.norm() - 1.0).abs() <= 1e-5);
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::open(dir.path()).unwrap();
        let key = "ab".repeat(32);
        cache.put(&key, &e).unwrap();
        prop_assert_eq!(cache.get(&key, Modality::Audio).unwrap(), Some(e));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn log_mel_is_deterministic(hz in 60.0f64..4000.0, secs in 0.2f64..1.5) {
        let buf = AudioBuffer::new(sine(hz, secs, 22050), 22050).unwrap();
        let cfg = FeatureConfig::default();
        prop_assert_eq!(log_mel_features(&buf, &cfg).unwrap(), log_mel_features(&buf, &cfg).unwrap());
    }

    #[test]
    fn repeated_chunks_average_to_one_chunk(hz in prop::sample::select(vec![200.0f64, 330.0, 440.0, 1000.0]), repeats in 2usize..6) {
        let mock = MockBackend::new()
            .with_audio_mode(MockAudioMode::DominantPitch { resolution_hz: 10.0 })
            .with_max_audio_seconds(Some(1.0));
        let enc = Encoder::new(Arc::new(mock));
        let rate = 8000;
        let one = enc.embed_audio(&AudioBuffer::new(sine(hz, 1.0, rate), rate).unwrap()).unwrap();
        let long = enc.embed_audio(&AudioBuffer::new(sine(hz, repeats as f64, rate), rate).unwrap()).unwrap();
        prop_assert!(one.dot(&long) >= 1.0 - 1e-4);
    }
}
