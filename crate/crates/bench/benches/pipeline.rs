use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use xdjdl_core::dict_learning::train_xdjdl;
use xdjdl_core::evaluate::{evaluate_batch, EvalOptions};
use xdjdl_core::inference::infer_ecg;
use xdjdl_core::preprocess::{build_dataset, PreprocessConfig};
use xdjdl_core::sparse_coding::omp_batch;
use xdjdl_core::synthetic::{gen_planted_model, gen_synthetic_record, EcgTemplateParams, PlantedSpec};
use xdjdl_core::{Dictionary, HyperParams};

fn sparse_coding(c: &mut Criterion) {
    let data = gen_planted_model(&PlantedSpec::default()).unwrap();
    let dict: &Dictionary = &data.model.d_p;
    c.bench_function("omp_batch d=32 k=24 t=3 n=500", |b| b.iter(|| omp_batch(dict, black_box(&data.x_p), 3).unwrap()));
}

fn training(c: &mut Criterion) {
    let data = gen_planted_model(&PlantedSpec { n: 400, ..Default::default() }).unwrap();
    let hyper = HyperParams { max_iters: 1, ..HyperParams::desk() };
    c.bench_function("train_xdjdl one iteration, desk scale", |b| {
        b.iter(|| train_xdjdl(black_box(&data.x_e), black_box(&data.x_p), &hyper).unwrap())
    });
    let model = train_xdjdl(&data.x_e, &data.x_p, &HyperParams::desk()).unwrap();
    c.bench_function("infer_ecg + evaluate, 400 cycles", |b| {
        b.iter(|| {
            let r = infer_ecg(&model, black_box(&data.x_p)).unwrap();
            evaluate_batch(&r.r_e, &data.x_e, &vec![125.0; 400], &EvalOptions::default()).unwrap()
        })
    });
}

fn preprocessing(c: &mut Criterion) {
    let params = EcgTemplateParams { noise_std: 0.02, hr_jitter: 0.05, ..Default::default() };
    let rec = gen_synthetic_record(&params, 60.0, 125.0).unwrap().record;
    let records = vec![rec];
    c.bench_function("build_dataset 60 s record", |b| {
        b.iter(|| build_dataset(black_box(&records), None, &PreprocessConfig::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sparse_coding, training, preprocessing
}
criterion_main!(benches);
