use criterion::{
    black_box, criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput,
};
use seqpatch::coreset::{self, nn_distances, BankMetadata, CoresetBank, FitOptions, SliceSource};
use seqpatch::features::{extract, ExtractorSpec};
use seqpatch::noise::{perlin, NoiseSeed};
use seqpatch::synth::render_sample;
use seqpatch_bench::{full_bank, stained_plate, uniform_vectors};

const DIM: usize = 12;

fn observe(c: &mut Criterion) {
    let mut group = c.benchmark_group("observe");
    let patches = uniform_vectors(1024, DIM, 7);
    group.throughput(Throughput::Elements(1024));
    for capacity in [64, 256, 1024] {
        let bank = full_bank(capacity, DIM, 1);
        group.bench_with_input(BenchmarkId::from_parameter(capacity), &bank, |b, bank| {
            b.iter_batched_ref(
                || bank.clone(),
                |bank| {
                    for p in patches.chunks_exact(DIM) {
                        black_box(bank.observe(p).unwrap());
                    }
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn fit(c: &mut Criterion) {
    let data = uniform_vectors(8192, DIM, 3);
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.throughput(Throughput::Elements(8192));
    for capacity in [128, 512] {
        group.bench_function(BenchmarkId::from_parameter(capacity), |b| {
            b.iter(|| {
                let mut bank = CoresetBank::new(capacity, DIM, BankMetadata::default()).unwrap();
                let mut source = SliceSource::new(&data, DIM).unwrap();
                let options = FitOptions {
                    max_epochs: 2,
                    ..Default::default()
                };
                coreset::fit(&mut bank, &mut source, options).unwrap()
            })
        });
    }
    group.finish();
}

fn nearest_neighbours(c: &mut Criterion) {
    let bank = full_bank(1024, DIM, 5);
    let queries = uniform_vectors(4096, DIM, 9);
    let mut group = c.benchmark_group("nn_distances");
    group.throughput(Throughput::Elements(4096));
    for chunk in [64, 2048] {
        group.bench_with_input(BenchmarkId::from_parameter(chunk), &chunk, |b, &chunk| {
            b.iter(|| nn_distances(&bank, &queries, chunk).unwrap())
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let mut group = c.benchmark_group("render_sample");
    group.sample_size(20);
    for size in [96, 256] {
        let spec = stained_plate(size, 4);
        group.throughput(Throughput::Elements((size * size) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(size), &spec, |b, spec| {
            b.iter(|| render_sample(spec).unwrap())
        });
    }
    group.finish();
}

fn features(c: &mut Criterion) {
    let image = render_sample(&stained_plate(256, 4)).unwrap().image;
    let spec = ExtractorSpec::default();
    c.bench_function("extract/256", |b| {
        b.iter(|| extract(&image, &spec).unwrap())
    });
}

fn noise(c: &mut Criterion) {
    let points: Vec<[f64; 2]> = uniform_vectors(4096, 2, 11)
        .chunks_exact(2)
        .map(|p| [p[0] as f64 * 100.0, p[1] as f64 * 100.0])
        .collect();
    let mut group = c.benchmark_group("perlin");
    group.throughput(Throughput::Elements(points.len() as u64));
    group.bench_function("4096", |b| {
        b.iter(|| {
            points
                .iter()
                .map(|&p| perlin(p, 0.15, NoiseSeed(2)))
                .sum::<f64>()
        })
    });
    group.finish();
}

criterion_group!(
    benches,
    observe,
    fit,
    nearest_neighbours,
    render,
    features,
    noise
);
criterion_main!(benches);
