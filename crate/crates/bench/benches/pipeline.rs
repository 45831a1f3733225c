use criterion::{criterion_group, criterion_main, Criterion};
use ecgrhythm::autodiff::{Adam, Rng};
use ecgrhythm::dsp::{design_highpass_fir, resample, FilterSpec, Preprocessor, Spectrogram};
use ecgrhythm::model::{Frontend, Model, ModelConfig};
use ecgrhythm::training::synth::{synth_record, SynthConfig};
use ecgrhythm::training::{stage1_step, StageState, TrainConfig};
use ecgrhythm::signal_io::RhythmClass;
use std::hint::black_box;

fn record() -> Vec<f64> {
    synth_record(RhythmClass::Sinus, &SynthConfig::default(), &mut Rng::new(1))
}

fn front_end(c: &mut Criterion) {
    let x = record();
    let pre = Preprocessor::default();
    c.bench_function("resample 250->200 Hz, 13 s", |b| b.iter(|| resample(black_box(&x), 250.0, 200.0).unwrap()));
    c.bench_function("design high-pass FIR", |b| b.iter(|| design_highpass_fir(black_box(&FilterSpec::default())).unwrap()));
    c.bench_function("full front end, 13 s chunk", |b| b.iter(|| pre.run(black_box(&x), 250.0).unwrap()));
}

fn model(c: &mut Criterion) {
    let spec: Spectrogram = Preprocessor::default().run(&record(), 250.0).unwrap();
    let model = Model::new(&ModelConfig::default(), Frontend::Vae, 0).unwrap();
    c.bench_function("predict one chunk", |b| b.iter(|| model.predict(black_box(&spec)).unwrap()));

    let cfg = TrainConfig::default();
    let batch = vec![&spec; 4];
    let mut g = c.benchmark_group("training");
    g.sample_size(10);
    g.bench_function("stage-1 step, 4 chunks", |b| {
        let mut m = model.clone();
        let mut opt = Adam::new(cfg.lr);
        let mut state = StageState::new(cfg.eta_min);
        let mut rng = Rng::new(0);
        b.iter(|| stage1_step(&mut m, &batch, &mut opt, &mut state, &cfg, &mut rng).unwrap())
    });
    g.finish();
}

criterion_group!(benches, front_end, model);
criterion_main!(benches);
