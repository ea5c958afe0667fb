//! Throughput of the hot kernels: log-Mel extraction, GMM utterance scoring,
//! per-frame weighting accumulators, and one Jacobian weight estimate.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use micfuse::scene::reference_model;
use micfuse::{
    cmvn, estimate_weights_jacobian, frame_accumulators, log_mel, make_scene, synth_clean, AudioBuffer,
    CleanKind, JacobianConfig, LbfgsConfig, MelConfig, MultichannelUtterance, SceneSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 40;

fn noise_audio(secs: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * 16_000.0) as usize;
    AudioBuffer::new((0..n).map(|_| rng.random_range(-0.5..0.5)).collect(), 16_000).unwrap()
}

fn scene(seed: u64, mixtures: usize) -> (micfuse::GmmModel, MultichannelUtterance) {
    let model = reference_model(seed, DIM, mixtures).unwrap();
    let kind = CleanKind::GmmSamples {
        model: model.clone(),
        switch_prob: 0.1,
    };
    let clean = synth_clean(seed + 1, 2.0, &kind).unwrap();
    let spec = SceneSpec {
        noise: vec![0.5, 1.1, 2.4, 5.3, 11.7, 1.7],
        seed,
        ..SceneSpec::default()
    };
    let (utt, _) = make_scene(&clean, &spec).unwrap();
    (model, utt.map_channels(cmvn))
}

fn bench_log_mel(c: &mut Criterion) {
    let audio = noise_audio(1.0, 7);
    let cfg = MelConfig::default();
    let mut group = c.benchmark_group("log_mel");
    group.throughput(Throughput::Elements(audio.len() as u64));
    group.bench_function("1s_16k", |b| b.iter(|| log_mel(black_box(&audio), &cfg).unwrap()));
    group.finish();
}

fn bench_utterance_score(c: &mut Criterion) {
    let (model, utt) = scene(11, 64);
    let f = utt.channel(1);
    let mut group = c.benchmark_group("utterance_score");
    group.throughput(Throughput::Elements(f.frames() as u64));
    group.bench_function("m64_d40", |b| b.iter(|| model.utterance_score(black_box(f)).unwrap()));
    group.finish();
}

fn bench_frame_accumulators(c: &mut Criterion) {
    let (model, utt) = scene(13, 64);
    let stack = utt.frame_stack(0);
    let w = vec![1.0 / utt.num_channels() as f64; utt.num_channels()];
    let mut fused = vec![0.0; DIM];
    for (x, wc) in stack.iter().zip(&w) {
        fused.iter_mut().zip(x.iter()).for_each(|(f, v)| *f += wc * v);
    }
    let gamma = model.posteriors(&fused).unwrap();
    c.bench_function("frame_accumulators/c6_m64_d40", |b| {
        b.iter(|| frame_accumulators(&model, black_box(&stack), &gamma).unwrap())
    });
}

fn bench_jacobian(c: &mut Criterion) {
    let (model, utt) = scene(17, 16);
    let cfg = JacobianConfig::default();
    let lbfgs = LbfgsConfig::default();
    let mut group = c.benchmark_group("weights");
    group.sample_size(10);
    group.bench_function("jacobian_c6_2s", |b| {
        b.iter(|| estimate_weights_jacobian(&model, black_box(&utt), &cfg, &lbfgs).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_log_mel,
    bench_utterance_score,
    bench_frame_accumulators,
    bench_jacobian
);
criterion_main!(benches);
