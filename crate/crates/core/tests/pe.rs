use std::time::Instant;

use hlc_core::model::{synthesize, GainProcess, HearingLossParams, SyntheticSpec};
use hlc_core::pe::{
    estimate, estimate_detailed, estimate_slices, point_estimate, ParameterTransition, PeConfig, PosteriorSet,
    Segment, SegmentMeta, Slice, TrainingSet,
};
use hlc_core::sp::characterize;
use hlc_core::ThetaPriors;

fn target() -> HearingLossParams {
    HearingLossParams::new(2.0, -90.0).unwrap()
}

fn recovery_data(steps: usize, seed: u64) -> TrainingSet {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::new(target(), steps, GainProcess::UniformLevels { low: 30.0, high: 100.0 })
    };
    synthesize(&spec).unwrap()
}

fn iterations(n: usize) -> PeConfig {
    PeConfig { iterations: n, ..PeConfig::default() }
}

/// Mean-field coordinate ascent for the slices' exact regression
/// s = α x + β + noise (x = s + g, all slices in the recruitment branch),
/// with γ fed by the observed gain increments. Returns the fixed point.
fn mean_field_oracle(slices: &[Slice], priors: &ThetaPriors) -> [f64; 8] {
    let (ma0, va0) = (priors.alpha.mean(), priors.alpha.variance());
    let (mb0, vb0) = (priors.beta.mean(), priors.beta.variance());
    let (a0, b0) = (priors.obs_variance.shape(), priors.obs_variance.scale());
    let (c0, d0) = (priors.gain_precision.shape(), priors.gain_precision.rate());
    let (mut ma, mut va, mut mb, mut vb, mut a, mut b) = (ma0, va0, mb0, vb0, a0, b0);
    let steps: Vec<f64> = slices.iter().filter_map(|sl| sl.g_prev.map(|p| sl.g - p)).collect();
    let c = c0 + 0.5 * steps.len() as f64;
    let d = d0 + 0.5 * steps.iter().map(|d| d * d).sum::<f64>();
    for _ in 0..1_000_000 {
        let w = a / b;
        let (mut pa, mut ha) = (1.0 / va0, ma0 / va0);
        let (mut pb, mut hb) = (1.0 / vb0, mb0 / vb0);
        for sl in slices {
            let x = sl.s + sl.g;
            pa += w * x * x;
            ha += w * x * (sl.s - mb);
            pb += w;
            hb += w * (sl.s - ma * x);
        }
        let (nma, nva, nmb, nvb) = (ha / pa, 1.0 / pa, hb / pb, 1.0 / pb);
        let mut sq = 0.0;
        for sl in slices {
            let x = sl.s + sl.g;
            sq += (sl.s - nma * x - nmb).powi(2) + x * x * nva + nvb;
        }
        let (na, nb) = (a0 + 0.5 * slices.len() as f64, b0 + 0.5 * sq);
        let moved = (nma - ma).abs() + (nmb - mb).abs() + (nb - b).abs();
        (ma, va, mb, vb, a, b) = (nma, nva, nmb, nvb, na, nb);
        if moved < 1e-14 {
            break;
        }
    }
    [ma, va, mb, vb, a, b, c, d]
}

fn as_array(p: &PosteriorSet) -> [f64; 8] {
    [
        p.q_alpha.mean(),
        p.q_alpha.variance(),
        p.q_beta.mean(),
        p.q_beta.variance(),
        p.q_obs_variance.shape(),
        p.q_obs_variance.scale(),
        p.q_gain_precision.shape(),
        p.q_gain_precision.rate(),
    ]
}

fn assert_close(got: [f64; 8], want: [f64; 8], tol: f64) {
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() <= tol * w.abs().max(1.0), "component {i}: {g} vs {w}");
    }
}

#[test]
fn recovers_the_target_curve() {
    let data = recovery_data(2000, 0);
    let priors = ThetaPriors::default();
    let started = Instant::now();
    let post = estimate(&data, &priors, &iterations(200)).unwrap();
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "{elapsed:?}");
    let (alpha, beta) = (post.q_alpha.mean(), post.q_beta.mean());
    assert!((1.7..=2.3).contains(&alpha), "alpha {alpha}");
    assert!((-105.0..=-75.0).contains(&beta), "beta {beta}");
    assert!(post.q_alpha.variance() < priors.alpha.variance());
    assert!(post.q_beta.variance() < priors.beta.variance());

    // End to end: the point estimate compresses like the target.
    let theta = point_estimate(&post).unwrap();
    let cr = characterize(&theta, 55.0, 80.0).unwrap().compression_ratio;
    assert!((cr - 2.0).abs() <= 0.1, "CR {cr}");
}

#[test]
fn recovery_holds_across_seeds() {
    for seed in 1..4 {
        let post = estimate(&recovery_data(2000, seed), &ThetaPriors::default(), &iterations(200)).unwrap();
        assert!((post.q_alpha.mean() - 2.0).abs() <= 0.3, "seed {seed}: {}", post.q_alpha.mean());
        assert!((post.q_beta.mean() + 90.0).abs() <= 15.0, "seed {seed}: {}", post.q_beta.mean());
    }
}

#[test]
fn empty_training_set_returns_priors() {
    let priors = ThetaPriors::default();
    let est = estimate_detailed(&TrainingSet::default(), &priors, &PeConfig::default()).unwrap();
    assert_eq!(est.posterior, PosteriorSet::from(priors));
    assert!(!est.warnings.is_empty());
    assert_eq!(est.sweeps, 0);
}

#[test]
fn single_slice_matches_direct_update() {
    let slices = [Slice { s: 52.0, g: 18.0, g_prev: Some(16.5) }];
    let priors = ThetaPriors::default();
    let est = estimate_slices(&slices, &priors, &iterations(4000)).unwrap();
    assert_close(as_array(&est.posterior), mean_field_oracle(&slices, &priors), 1e-9);
}

#[test]
fn two_identical_slices_count_twice() {
    let slice = Slice { s: 52.0, g: 18.0, g_prev: Some(16.5) };
    let priors = ThetaPriors::default();
    let est = estimate_slices(&[slice, slice], &priors, &iterations(4000)).unwrap();
    let want = mean_field_oracle(&[slice, slice], &priors);
    assert_close(as_array(&est.posterior), want, 1e-9);
    // Not the same as one slice.
    let once = mean_field_oracle(&[slice], &priors);
    assert!((want[1] - once[1]).abs() > 1e-6);
}

#[test]
fn permuting_segments_changes_nothing() {
    let spec = SyntheticSpec {
        segment_len: 5,
        noise_sd: 1.0,
        seed: 3,
        ..SyntheticSpec::new(target(), 30, GainProcess::UniformLevels { low: 50.0, high: 85.0 })
    };
    let data = synthesize(&spec).unwrap();
    let mut shuffled = data.clone();
    shuffled.segments.reverse();
    shuffled.segments.swap(0, 2);
    let cfg = iterations(3000);
    let a = estimate(&data, &ThetaPriors::default(), &cfg).unwrap();
    let b = estimate(&shuffled, &ThetaPriors::default(), &cfg).unwrap();
    assert_close(as_array(&a), as_array(&b), 1e-9);
}

#[test]
fn more_data_tightens_the_posterior() {
    let priors = ThetaPriors::default();
    let small = estimate(&recovery_data(500, 7), &priors, &iterations(200)).unwrap();
    let large = estimate(&recovery_data(2000, 7), &priors, &iterations(200)).unwrap();
    assert!(large.q_alpha.precision() >= small.q_alpha.precision());
    assert!(large.q_beta.precision() >= small.q_beta.precision());
}

#[test]
fn duplicated_slices_add_evidence() {
    let data = recovery_data(200, 5);
    let doubled = TrainingSet::new(
        data.segments
            .iter()
            .map(|seg| Segment {
                s: seg.s.iter().flat_map(|&v| [v, v]).collect(),
                g: seg.g.iter().flat_map(|&v| [v, v]).collect(),
                meta: SegmentMeta::default(),
            })
            .collect(),
    )
    .unwrap();
    let priors = ThetaPriors::default();
    let one = estimate(&data, &priors, &iterations(20)).unwrap();
    let two = estimate(&doubled, &priors, &iterations(20)).unwrap();
    let n = data.steps() as f64;
    assert_eq!(one.q_obs_variance.shape(), priors.obs_variance.shape() + n / 2.0);
    assert_eq!(two.q_obs_variance.shape(), priors.obs_variance.shape() + n);
    assert!(two.q_gain_precision.shape() > one.q_gain_precision.shape());
}

#[test]
fn estimation_is_reproducible() {
    let data = recovery_data(300, 11);
    let a = estimate(&data, &ThetaPriors::default(), &iterations(30)).unwrap();
    let b = estimate(&data, &ThetaPriors::default(), &iterations(30)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn random_walk_decouples_slices() {
    let data = recovery_data(60, 2);
    let priors = ThetaPriors::default();
    let walk = PeConfig { transition: ParameterTransition::RandomWalk { variance: 1e9 }, ..iterations(200) };
    let loose = estimate_detailed(&data, &priors, &walk).unwrap();
    let tied = estimate_detailed(&data, &priors, &iterations(200)).unwrap();
    let spread = |est: &hlc_core::pe::Estimate| {
        let means: Vec<f64> = est.slice_marginals.iter().map(|(a, _)| a.mean()).collect();
        let hi = means.iter().cloned().fold(f64::MIN, f64::max);
        let lo = means.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    };
    // A static parameter gives every slice the same marginal.
    assert!(spread(&tied) < 1e-9, "tied spread {}", spread(&tied));
    assert!(spread(&loose) > 1e-2, "loose spread {}", spread(&loose));
    for k in 1..data.steps() {
        let (a, b) = (loose.slice_marginals[k], tied.slice_marginals[k]);
        assert!(a.0.variance() > 1e3 * b.0.variance(), "slice {k}");
        assert!(a.1.variance() > 1e3 * b.1.variance(), "slice {k}");
    }
}

#[test]
fn early_stop_ends_sooner() {
    let data = recovery_data(200, 9);
    let cfg = PeConfig { early_stop: Some(1e-6), ..iterations(5000) };
    let est = estimate_detailed(&data, &ThetaPriors::default(), &cfg).unwrap();
    assert!(est.sweeps < 5000, "{}", est.sweeps);
}

#[test]
fn jsonl_round_trip_on_disk() {
    let data = recovery_data(40, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    data.write_jsonl(std::fs::File::create(&path).unwrap()).unwrap();
    assert_eq!(TrainingSet::read_jsonl(&path).unwrap(), data);
}
