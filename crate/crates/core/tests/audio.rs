use hlc_core::audio::{
    apply_gain, estimate_log_power, process, process_file, tone, FilterBank, FrameConfig, SampleFormat, Wav,
    POWER_EPSILON,
};
use hlc_core::Theta;
use proptest::prelude::*;

fn cfg() -> FrameConfig {
    FrameConfig::default()
}

#[test]
fn full_scale_sine_level() {
    // 1 kHz at 16 kHz: 16 samples per period, ten periods per frame.
    let x: Vec<f64> = (0..1600).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 16.0).sin()).collect();
    let levels = estimate_log_power(&x, &cfg()).unwrap();
    let want = 100.0 + 10.0 * (0.5f64 + POWER_EPSILON).log10();
    assert!((want - 96.99).abs() < 0.01);
    // The last frame hangs over the end and is zero padded.
    for l in &levels[..levels.len() - 1] {
        assert!((l - want).abs() < 1e-9, "{l}");
    }
}

#[test]
fn halving_amplitude_drops_six_db() {
    let x = tone(440.0, 80.0, 4000, &cfg());
    let half: Vec<f64> = x.iter().map(|v| v / 2.0).collect();
    let (a, b) = (estimate_log_power(&x, &cfg()).unwrap(), estimate_log_power(&half, &cfg()).unwrap());
    for (la, lb) in a.iter().zip(&b) {
        assert!((la - lb - 20.0 * 2f64.log10()).abs() < 1e-6, "{la} {lb}");
    }
}

#[test]
fn silence_sits_on_the_floor() {
    let levels = estimate_log_power(&[0.0; 800], &cfg()).unwrap();
    assert!(levels.iter().all(|l| (l - (100.0 - 120.0)).abs() < 1e-9));
}

#[test]
fn prepending_a_hop_shifts_the_track() {
    let x = tone(300.0, 70.0, 3000, &cfg());
    let mut shifted = vec![0.0; cfg().hop];
    shifted.extend(&x);
    let a = estimate_log_power(&x, &cfg()).unwrap();
    let b = estimate_log_power(&shifted, &cfg()).unwrap();
    assert_eq!(b.len(), a.len() + 1);
    assert_eq!(&b[1..], &a[..]);
}

#[test]
fn zero_gain_is_the_identity() {
    let x = tone(1234.5, 85.0, 5000, &cfg());
    let out = apply_gain(&x, &vec![0.0; cfg().frame_count(x.len())], &cfg()).unwrap();
    assert_eq!(out.clipped, 0);
    for (a, b) in x.iter().zip(&out.samples) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn six_db_doubles_the_amplitude() {
    let x = tone(500.0, 70.0, 2000, &cfg());
    let g = 20.0 * 2f64.log10();
    let out = apply_gain(&x, &vec![g; cfg().frame_count(x.len())], &cfg()).unwrap();
    for (a, b) in x.iter().zip(&out.samples) {
        assert!((2.0 * a - b).abs() <= 1e-12);
    }
    // 6.02 dB as printed is within 2e-4 of a factor two.
    let out = apply_gain(&x, &vec![6.02; cfg().frame_count(x.len())], &cfg()).unwrap();
    for (a, b) in x.iter().zip(&out.samples) {
        assert!((2.0 * a - b).abs() <= 2e-4 * a.abs() + 1e-15);
    }
}

#[test]
fn gain_step_is_interpolated() {
    let c = cfg();
    let x = vec![0.2; 1600];
    let mut gains = vec![0.0; c.frame_count(x.len())];
    for g in &mut gains[10..] {
        *g = 10.0;
    }
    let y = apply_gain(&x, &gains, &c).unwrap().samples;
    let bound = 0.2 * (10f64.powf(0.5) - 1.0) / c.hop as f64;
    let worst = y.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    assert!(worst <= bound + 1e-12, "{worst} > {bound}");
    assert_eq!(y[0], 0.2);
    assert!((y[1599] - 0.2 * 10f64.powf(0.5)).abs() < 1e-12, "{}", y[1599]);
}

#[test]
fn identity_region_leaves_audio_alone() {
    // RT = 90 dB; a 95 dB tone never needs gain.
    let theta = Theta::new(2.0, -90.0, 10.0, 1.0).unwrap();
    let wav = Wav::mono(16_000, tone(1000.0, 95.0, 8000, &cfg()));
    let out = process(&wav, &theta, &cfg()).unwrap();
    assert_eq!(out.wav.len(), wav.len());
    for (a, b) in wav.channels[0].iter().zip(&out.wav.channels[0]) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn alternating_tone_reaches_both_plateaus() {
    let c = cfg();
    let theta = Theta::new(2.0, -90.0, 10.0, 1.0).unwrap();
    let block = 16_000 / 2;
    let mut x = Vec::new();
    for i in 0..4 {
        x.extend(tone(1000.0, if i % 2 == 0 { 55.0 } else { 80.0 }, block, &c));
    }
    let dir = tempfile::tempdir().unwrap();
    let (inp, outp) = (dir.path().join("in.wav"), dir.path().join("out.wav"));
    Wav { sample_rate: 16_000, format: SampleFormat::Float32, channels: vec![x.clone()] }.to_path(&inp).unwrap();
    let processed = process_file(&inp, &outp, &theta, &c).unwrap();
    let written = Wav::from_path(&outp).unwrap();
    assert_eq!(written.len(), x.len());
    assert_eq!(processed.levels.len(), processed.gains.len());
    let frames = block / c.hop;
    for (i, want) in [(0, 17.5), (1, 5.0), (2, 17.5), (3, 5.0)] {
        let g = processed.gains[(i + 1) * frames - 2].mean;
        assert!((g - want).abs() < 0.01, "block {i}: {g}");
    }
}

#[test]
fn pcm16_round_trip_is_bit_identical() {
    let samples: Vec<f64> = (-300..300).map(|i| i as f64 * 100.0 / 32768.0).collect();
    let wav = Wav { sample_rate: 22_050, format: SampleFormat::Pcm16, channels: vec![samples.clone(), samples] };
    let back = Wav::from_bytes(&wav.to_bytes()).unwrap();
    assert_eq!(back, wav);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rt.wav");
    wav.to_path(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), wav.to_bytes());
}

#[test]
fn float_round_trip_is_bit_identical() {
    let samples: Vec<f64> = (0..500).map(|i| ((i as f32) * 0.013).sin() as f64).collect();
    let wav = Wav { sample_rate: 48_000, format: SampleFormat::Float32, channels: vec![samples] };
    assert_eq!(Wav::from_bytes(&wav.to_bytes()).unwrap(), wav);
}

#[test]
fn filter_bank_bands_run_independently() {
    let bank = FilterBank::new(256, 4).unwrap();
    let theta = Theta::new(2.0, -90.0, 10.0, 1.0).unwrap();
    let x = tone(1000.0, 70.0, 8192, &cfg());
    let (y, states) = bank.process(&x, &theta, 100.0).unwrap();
    assert_eq!(y.len(), x.len());
    assert_eq!(states.len(), 4);
    let unity = vec![vec![0.0; 4]; states[0].len()];
    let same = bank.apply(&x, &unity).unwrap();
    for (a, b) in x.iter().zip(&same) {
        assert!((a - b).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn output_length_matches_input(n in 1usize..3000, level in 20.0..95.0f64) {
        let theta = Theta::new(2.0, -90.0, 10.0, 1.0).unwrap();
        let wav = Wav::mono(16_000, tone(700.0, level, n, &cfg()));
        let out = process(&wav, &theta, &cfg()).unwrap();
        prop_assert_eq!(out.wav.len(), n);
        prop_assert_eq!(out.levels.len(), cfg().frame_count(n));
    }
}
