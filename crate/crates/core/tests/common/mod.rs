#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cratedig_core::embedding::{MockAudioMode, MockBackend};
use cratedig_core::{ClassConfig, ClassSpec};

pub const RATE: u32 = 22050;

pub fn sine(hz: f64, seconds: f64, amp: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * rate as f64).round() as usize;
    (0..n)
        .map(|i| (amp * (2.0 * PI * hz * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f32], rate: u32) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

/// A song made of consecutive pure tones; returns samples and the planted
/// block boundaries (interior only).
pub fn tone_song(blocks: &[(f64, f64)], rate: u32) -> (Vec<f32>, Vec<f64>) {
    let mut out = Vec::new();
    let mut edges = Vec::new();
    let mut t = 0.0;
    for (i, &(hz, secs)) in blocks.iter().enumerate() {
        if i > 0 {
            edges.push(t);
        }
        out.extend(sine(hz, secs, 0.5, rate));
        t += secs;
    }
    (out, edges)
}

/// One stationary timbre: a harmonic stack with its own fundamental, spectral
/// tilt and noise floor.
#[derive(Debug, Clone)]
pub struct Timbre {
    pub f0: f64,
    pub tilt: f64,
    pub harmonics: usize,
    pub noise: f64,
}

fn render_block(t: &Timbre, seconds: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = (seconds * rate as f64).round() as usize;
    let phases: Vec<f64> = (0..t.harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let norm: f64 = (1..=t.harmonics).map(|h| (h as f64).powf(-t.tilt)).sum();
    (0..n)
        .map(|i| {
            let time = i as f64 / rate as f64;
            let mut v = 0.0;
            for h in 1..=t.harmonics {
                let f = t.f0 * h as f64;
                if f < rate as f64 / 2.0 {
                    v += (h as f64).powf(-t.tilt) * (2.0 * PI * f * time + phases[h - 1]).sin();
                }
            }
            (0.4 * v / norm + t.noise * rng.gen_range(-1.0..1.0)) as f32
        })
        .collect()
}

/// A synthetic song of 2-5 timbre blocks, each at least `min_block` seconds.
/// Consecutive blocks differ in fundamental by at least a fifth.
pub fn timbre_song(seed: u64, min_block: f64, rate: u32) -> (Vec<f32>, Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = rng.gen_range(2..=5);
    let mut samples = Vec::new();
    let mut edges = Vec::new();
    let mut t = 0.0;
    let mut prev_f0: f64 = 0.0;
    for b in 0..blocks {
        let f0 = loop {
            let f = 80.0 * 2f64.powf(rng.gen_range(0.0..3.5));
            if prev_f0 == 0.0 || (f / prev_f0).log2().abs() > 0.6 {
                break f;
            }
        };
        prev_f0 = f0;
        let timbre = Timbre {
            f0,
            tilt: rng.gen_range(0.5..2.0),
            harmonics: rng.gen_range(3..10),
            noise: rng.gen_range(0.005..0.03),
        };
        let secs = rng.gen_range(min_block..min_block * 2.0);
        if b > 0 {
            edges.push(t);
        }
        samples.extend(render_block(&timbre, secs, rate, &mut rng));
        t += (secs * rate as f64).round() / rate as f64;
    }
    (samples, edges, t)
}

pub const PITCHES: [u32; 6] = [220, 330, 440, 550, 660, 880];

pub fn tone_classes() -> ClassConfig {
    ClassConfig {
        logit_scale: 100.0,
        classes: PITCHES
            .iter()
            .map(|hz| ClassSpec {
                id: format!("tone_{hz}"),
                display_name: format!("{hz} Hz"),
                prompts: vec![format!("tone:{hz}")],
            })
            .collect(),
    }
}

pub fn pitch_backend() -> MockBackend {
    MockBackend::new().with_audio_mode(MockAudioMode::DominantPitch { resolution_hz: 10.0 })
}

/// Three tone songs; returns (file name, planted (pitch, block seconds)).
pub fn fixture_songs() -> Vec<(&'static str, Vec<(f64, f64)>)> {
    vec![
        ("a.wav", vec![(220.0, 40.0), (660.0, 40.0), (440.0, 40.0)]),
        ("b.wav", vec![(880.0, 25.0), (330.0, 25.0)]),
        ("sub/c.wav", vec![(550.0, 20.0), (220.0, 20.0), (880.0, 20.0)]),
    ]
}

pub fn write_library(root: &Path) {
    for (name, blocks) in fixture_songs() {
        let path = root.join(name);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_wav(&path, &tone_song(&blocks, RATE).0, RATE);
    }
}

pub fn planted_pitch(blocks: &[(f64, f64)], t: f64) -> f64 {
    let mut end = 0.0;
    for &(hz, secs) in blocks {
        end += secs;
        if t < end {
            return hz;
        }
    }
    blocks.last().unwrap().0
}
