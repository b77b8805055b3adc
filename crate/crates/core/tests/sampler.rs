use babe::filter::{bin_gains, FilterParams};
use babe::prior::GaussianPrior;
use babe::metrics::lsd;
use babe::sampler::{
    babe_sample, informed_sample, run, sample_unconditional, warm_init, DegradationModel, NoiseSchedule, SamplerConfig,
    SamplingTask,
};
use babe::signal::{full_fft, normalize_loudness, AudioBuffer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SR: u32 = 22050;

fn prior(n: usize) -> GaussianPrior {
    GaussianPrior::decaying(n, SR, 500.0, 0.07).unwrap()
}

fn unconditional(init: &AudioBuffer, p: &mut GaussianPrior, steps: usize, order: u8) -> Vec<f64> {
    let config = SamplerConfig {
        schedule: NoiseSchedule {
            steps,
            ..NoiseSchedule::piano()
        },
        order,
        ..SamplerConfig::standard()
    };
    sample_unconditional(init, p, &config).unwrap().x0.into_samples()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn heun_tracks_the_fine_reference_better_than_euler() {
    let mut p = prior(4096);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = AudioBuffer::new(p.sample_marginal(0.2, &mut rng), SR).unwrap();
    let reference = unconditional(&init, &mut p, 500, 2);
    let euler = dist(&unconditional(&init, &mut p, 35, 1), &reference);
    let heun = dist(&unconditional(&init, &mut p, 35, 2), &reference);
    assert!(heun < euler, "heun {heun} euler {euler}");
}

#[test]
fn same_seed_same_result() {
    let mut p = prior(8192);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let y = AudioBuffer::new(p.sample_marginal(0.0, &mut rng), SR).unwrap();
    let config = SamplerConfig {
        schedule: NoiseSchedule {
            steps: 10,
            ..NoiseSchedule::piano()
        },
        seed: 5,
        ..SamplerConfig::standard()
    };
    let a = babe_sample(&y, &mut p, &config).unwrap();
    let b = babe_sample(&y, &mut p, &config).unwrap();
    assert_eq!(a.x0, b.x0);
    assert_eq!(a.phi, b.phi);
    let c = babe_sample(&y, &mut p, &SamplerConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a.x0, c.x0);
}

#[test]
fn zero_guidance_ignores_the_degradation() {
    let mut p = prior(4096);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = AudioBuffer::new(p.sample_marginal(0.0, &mut rng), SR).unwrap();
    let config = SamplerConfig {
        xi_prime: 0.0,
        window_len: 1024,
        hop: 512,
        ..SamplerConfig::standard()
    };
    let plan = config.plan().unwrap();
    let g1 = bin_gains(&FilterParams::single(500.0, -40.0), &plan, SR).unwrap();
    let g2 = bin_gains(&FilterParams::single(5000.0, -5.0), &plan, SR).unwrap();
    let a = informed_sample(&y, &g1, &mut p, &config).unwrap();
    let b = informed_sample(&y, &g2, &mut p, &config).unwrap();
    assert_eq!(a.x0, b.x0);
}

#[test]
fn identity_degradation_keeps_the_low_band() {
    let n = 32768;
    let mut p = prior(n);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = AudioBuffer::new(p.sample_marginal(0.0, &mut rng), SR).unwrap();
    // at xi' = 0.2 the guidance budget leaves about half the band unmatched
    let config = SamplerConfig {
        xi_prime: 1.0,
        ..SamplerConfig::standard()
    };
    let gains = vec![1.0; config.plan().unwrap().n_bins()];
    let out = informed_sample(&y, &gains, &mut p, &config).unwrap();
    assert!(!out.failed());
    let (fy, fx) = (full_fft(y.samples()), full_fft(out.x0.samples()));
    let top = (0.8 * SR as f64 / 2.0 * n as f64 / SR as f64) as usize;
    let err: f64 = (0..top).map(|k| (fy[k] - fx[k]).norm_sqr()).sum();
    let norm: f64 = (0..top).map(|k| fy[k].norm_sqr()).sum();
    let rel = (err / norm).sqrt();
    assert!(rel <= 0.05, "low-band relative error {rel}");
}

#[test]
fn loudness_gain_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = AudioBuffer::new(prior(4096).sample_marginal(0.0, &mut rng), SR)
        .unwrap()
        .scaled(0.013);
    let (normalized, gain) = normalize_loudness(&x, 0.07).unwrap();
    let back = normalized.scaled(1.0 / gain);
    for (a, b) in x.samples().iter().zip(back.samples()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-3));
    }
}

#[test]
fn frozen_blind_filter_equals_informed() {
    let mut p = prior(8192);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = AudioBuffer::new(p.sample_marginal(0.0, &mut rng), SR).unwrap();
    let config = SamplerConfig {
        schedule: NoiseSchedule {
            steps: 10,
            ..NoiseSchedule::piano()
        },
        seed: 9,
        ..SamplerConfig::standard()
    };
    let phi = FilterParams::single(1000.0, -20.0);
    let gains = bin_gains(&phi, &config.plan().unwrap(), SR).unwrap();
    let informed = informed_sample(&y, &gains, &mut p, &config).unwrap();
    let task = SamplingTask {
        degradation: DegradationModel::Frozen(phi),
        ..SamplingTask::blind(&y, 5)
    };
    let frozen = run(&task, &mut p, &config, &mut |_| {}).unwrap();
    assert_eq!(informed.x0, frozen.x0);
}

#[test]
fn identity_degradation_beats_unconditional_lsd() {
    let n = 32768;
    let mut p = prior(n);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = AudioBuffer::new(p.sample_marginal(0.0, &mut rng), SR).unwrap();
    let config = SamplerConfig::standard();
    let plan = config.plan().unwrap();
    let blind = babe_sample(&y, &mut p, &config).unwrap();
    assert!(!blind.failed());
    let init = AudioBuffer::new(warm_init(&vec![0.0; n], 0.2, &mut rng), SR).unwrap();
    let free = sample_unconditional(&init, &mut p, &config).unwrap();
    let guided = lsd(&y, &blind.x0, &plan).unwrap();
    let unguided = lsd(&y, &free.x0, &plan).unwrap();
    assert!(guided < unguided, "guided {guided} unconditional {unguided}");
}
