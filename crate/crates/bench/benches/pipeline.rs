use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fbkws_core::autodiff::{NormMode, Tape, Tensor};
use fbkws_core::backend::{Adam, AdamConfig, Fusion, KwsSystem};
use fbkws_core::data::CLIP_LEN;
use fbkws_core::experiments::{build_frontend, build_system, ExperimentSpec, FrontendOptions, Regime};

fn clips(n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n).map(|_| (0..CLIP_LEN).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
}

fn system(name: &str) -> KwsSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let regime: Regime = name.parse().unwrap();
    let fe = build_frontend(&regime, &FrontendOptions::default(), &mut rng).unwrap();
    let spec = ExperimentSpec::new(name, "small").unwrap();
    let mut sys = build_system(vec![fe], Fusion::Stack, &spec.backend, 4, &mut rng).unwrap();
    sys.set_trainable(true, true);
    sys
}

fn frontends(c: &mut Criterion) {
    let batch = clips(8);
    let mut g = c.benchmark_group("frontend_batch8");
    g.sample_size(10);
    for name in ["FtBt_26", "GC[t]_Ic-Mel"] {
        let mut sys = system(name);
        let inputs = sys.prepare(&batch).unwrap();
        g.bench_function(format!("{name}/forward"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let y = sys.features(&mut tape, &inputs, NormMode::Train).unwrap();
                black_box(tape.value(y).data()[0])
            })
        });
        g.bench_function(format!("{name}/forward_backward"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let y = sys.features(&mut tape, &inputs, NormMode::Train).unwrap();
                let s = tape.sum_all(y).unwrap();
                tape.backward(s).unwrap();
            })
        });
    }
    g.finish();
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rand_tensor = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    // one batch of spectrogram frames against the filterbank
    let a = rand_tensor(vec![8 * 98, 241]);
    let w = rand_tensor(vec![241, 40]);
    c.bench_function("matmul_784x241x40", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let (x, y) = (tape.constant(a.clone()), tape.leaf(w.clone(), true));
            let z = tape.matmul(x, y).unwrap();
            let s = tape.sum_all(z).unwrap();
            tape.backward(s).unwrap();
        })
    });
}

fn train_step(c: &mut Criterion) {
    let batch = clips(16);
    let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
    let mut sys = system("FtBt_26");
    let inputs = sys.prepare(&batch).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    g.bench_function("FtBt_small_batch16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let logits = sys.forward(&mut tape, &inputs, NormMode::Train).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
            tape.backward(loss).unwrap();
            adam.step(&tape, sys.params_mut());
        })
    });
    g.finish();
}

criterion_group!(benches, frontends, matmul, train_step);
criterion_main!(benches);
