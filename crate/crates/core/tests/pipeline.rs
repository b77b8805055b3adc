use babe::filter::FilterParams;
use babe::pipeline::{
    block_autoregressive_restore, discontinuity, equal_power_crossfade, segment_starts, simulate_degradation,
    AutoregressiveConfig, RestoreMode,
};
use babe::prior::GaussianPrior;
use babe::sampler::{NoiseSchedule, SamplerConfig, SamplerError};
use babe::signal::{std_dev, AudioBuffer, StftPlan};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SR: u32 = 22050;

fn quick_config() -> SamplerConfig {
    SamplerConfig {
        schedule: NoiseSchedule {
            steps: 6,
            ..NoiseSchedule::piano()
        },
        window_len: 512,
        hop: 256,
        ..SamplerConfig::standard()
    }
}

proptest! {
    #[test]
    fn segments_cover_everything(total in 1usize..200_000, seg in 64usize..20_000, frac in 0.0f64..0.5) {
        let overlap = (seg as f64 * frac) as usize;
        let starts = segment_starts(total, seg, overlap);
        prop_assert_eq!(starts[0], 0);
        prop_assert!(starts.last().unwrap() + seg >= total);
        for w in starts.windows(2) {
            prop_assert_eq!(w[1] - w[0], seg - overlap);
            // no segment starts past the end
            prop_assert!(w[1] < total);
        }
    }
}

#[test]
fn crossfade_is_equal_power() {
    let n = 257;
    let fade_out = equal_power_crossfade(&vec![1.0; n], &vec![0.0; n]);
    let fade_in = equal_power_crossfade(&vec![0.0; n], &vec![1.0; n]);
    for (a, b) in fade_out.iter().zip(&fade_in) {
        assert!((a * a + b * b - 1.0).abs() < 1e-12);
    }
    assert!(fade_out[0] > 0.999 && fade_in[0] < 0.01);
    assert!(fade_out[n - 1] < 0.01 && fade_in[n - 1] > 0.999);
    assert!(fade_out.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn discontinuity_measure() {
    assert_eq!(discontinuity(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
    assert!((discontinuity(&[3.0, 4.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    assert_eq!(discontinuity(&[0.0], &[0.0]), 0.0);
    assert!(discontinuity(&[0.0], &[1.0]).is_infinite());
}

#[test]
fn simulated_noise_level() {
    let plan = StftPlan::default();
    let x = AudioBuffer::zeros(SR as usize * 4, SR).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = simulate_degradation(&x, &FilterParams::single(1000.0, -20.0), 0.01, &plan, &mut rng).unwrap();
    let s = std_dev(y.samples());
    assert!((s / 0.01 - 1.0).abs() < 0.02, "std {s}");
}

#[test]
fn simulate_without_noise_is_the_filter() {
    let plan = StftPlan::default();
    let n = SR as usize;
    let f = 4000.0;
    // a tone at 4 kHz, two octaves above a 1 kHz -20 dB/oct cutoff
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / SR as f64).sin()).collect();
    let x = AudioBuffer::new(x, SR).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = simulate_degradation(&x, &FilterParams::single(1000.0, -20.0), 0.0, &plan, &mut rng).unwrap();
    let mid = n / 4..3 * n / 4;
    let ratio = std_dev(&y.samples()[mid.clone()]) / std_dev(&x.samples()[mid]);
    let db = 20.0 * ratio.log10();
    assert!((db + 40.0).abs() < 0.5, "{db} dB");

    // a cutoff at Nyquist leaves the signal alone
    let id = simulate_degradation(&x, &FilterParams::single(SR as f64 / 2.0, -1.0), 0.0, &plan, &mut rng).unwrap();
    for (a, b) in x.samples().iter().zip(id.samples()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn short_overlap_is_rejected() {
    let mut prior = GaussianPrior::decaying(2048, SR, 500.0, 0.07).unwrap();
    let y = AudioBuffer::zeros(5000, SR).unwrap();
    let ar = AutoregressiveConfig {
        overlap: 100,
        ..Default::default()
    };
    let res = block_autoregressive_restore(&y, &mut prior, &quick_config(), &ar, &RestoreMode::Blind, &mut |_, _| {});
    assert!(matches!(res, Err(SamplerError::InvalidConfig(_))));
}

#[test]
fn long_input_is_stitched_to_length() {
    let seg = 4096;
    let mut prior = GaussianPrior::decaying(seg, SR, 500.0, 0.07).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..3)
        .flat_map(|_| prior.sample_marginal(0.0, &mut rng))
        .take(10_000)
        .collect();
    let y = AudioBuffer::new(x, SR).unwrap();
    let ar = AutoregressiveConfig::with_fraction(seg, 0.25);
    let mut steps = vec![0usize; 4];
    let out = block_autoregressive_restore(
        &y,
        &mut prior,
        &quick_config(),
        &ar,
        &RestoreMode::Informed(FilterParams::single(1000.0, -20.0)),
        &mut |i, _| steps[i] += 1,
    )
    .unwrap();
    assert_eq!(out.audio.len(), 10_000);
    // starts 0, 3072, 6144: the last segment is zero-padded
    assert_eq!(out.segments.iter().map(|s| s.start).collect::<Vec<_>>(), vec![0, 3072, 6144]);
    assert_eq!(steps, vec![5, 5, 5, 0]);
    assert!(out.segments[0].overlap_discontinuity.is_none());
    assert!(out.segments[1..].iter().all(|s| s.overlap_discontinuity.unwrap().is_finite()));
    assert_eq!(out.phi, Some(FilterParams::single(1000.0, -20.0)));
    assert!(out.failed_segments().is_empty());
}

#[test]
fn blind_filter_is_estimated_once() {
    let seg = 4096;
    let mut prior = GaussianPrior::decaying(seg, SR, 500.0, 0.07).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..2).flat_map(|_| prior.sample_marginal(0.0, &mut rng)).take(7000).collect();
    let y = AudioBuffer::new(x, SR).unwrap();
    let ar = AutoregressiveConfig::with_fraction(seg, 0.25);
    let mut inner = [0usize; 2];
    let out = block_autoregressive_restore(&y, &mut prior, &quick_config(), &ar, &RestoreMode::Blind, &mut |i, d| {
        inner[i] += d.inner_iterations
    })
    .unwrap();
    assert!(out.phi.is_some());
    assert!(inner[0] > 0);
    // later segments reuse the first estimate
    assert_eq!(inner[1], 0);
}
