use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tsxd_core::explain::{gradcam_for_model, lime_explain, segment, ModelClassifier};
use tsxd_core::models::{StudentConfig, TeacherConfig};
use tsxd_core::raster::rasterize;
use tsxd_core::{LimeConfig, Model, PlotConfig, SegmentStrategy};

fn series(len: usize) -> Vec<f64> {
    (0..len).map(|i| (i as f64 * 0.21).sin() + 0.3 * (i as f64 * 0.037).cos()).collect()
}

fn bench_rasterize(c: &mut Criterion) {
    let s = series(500);
    let plot = PlotConfig::default();
    c.bench_function("rasterize_500_224", |b| b.iter(|| rasterize(black_box(&s), &plot).unwrap()));
}

fn bench_forward(c: &mut Criterion) {
    let s = series(152);
    let plot = PlotConfig::with_size(64, 64);
    let image = rasterize(&s, &plot).unwrap();
    let student = Model::student(StudentConfig::new(64, 64), 0).unwrap();
    let teacher = Model::teacher(TeacherConfig::new(152), 0).unwrap();
    c.bench_function("student_trace_64", |b| {
        b.iter(|| student.trace(None, black_box(&image)).unwrap().probabilities())
    });
    c.bench_function("gradcam_64", |b| {
        b.iter(|| gradcam_for_model(&student, None, black_box(&image), None).unwrap())
    });
    let batch = tsxd_core::models::Batch {
        series: Some(tsxd_core::models::series_batch(&vec![s.as_slice(); 32]).unwrap()),
        images: None,
    };
    c.bench_function("teacher_predict_32x152", |b| b.iter(|| teacher.predict_proba(black_box(&batch)).unwrap()));
}

fn bench_lime(c: &mut Criterion) {
    let s = series(152);
    let plot = PlotConfig::with_size(64, 64);
    let image = rasterize(&s, &plot).unwrap();
    let student = Model::student(StudentConfig::new(64, 64), 0).unwrap();
    let clf = ModelClassifier::new(&student, None).unwrap();
    let mask = segment(64, 64, SegmentStrategy::Vstrip { n: 10 }).unwrap();
    let cfg = LimeConfig {
        n_samples: 200,
        ..LimeConfig::default()
    };
    let mut group = c.benchmark_group("lime");
    group.sample_size(10);
    group.bench_function("vstrip10_200_samples_64", |b| {
        b.iter(|| lime_explain(&clf, black_box(&image), &mask, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_rasterize, bench_forward, bench_lime);
criterion_main!(benches);
