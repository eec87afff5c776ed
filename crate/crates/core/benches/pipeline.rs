//! Sequential vs. data-parallel throughput of the parse, filter and stats
//! stages. Build with `--no-default-features` to benchmark the fallback
//! path with parallelism forced to 1 everywhere.

use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use vlgen_core::exec;
use vlgen_core::filter::{filter_samples, FilterConfig, HashEmbedder};
use vlgen_core::io::write_jsonl;
use vlgen_core::parser::parse_generation;
use vlgen_core::rng::SplitMix64;
use vlgen_core::schema::{serialize_box, RegionBox};
use vlgen_core::stats::{compute_stats, LexiconTagger};
use vlgen_core::{CorpusManifest, Sample, TaskType};

const COLORS: [&str; 5] = ["red", "green", "blue", "yellow", "white"];

fn fixture() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/corpus50"))
}

fn raw_generations(n: usize) -> Vec<(String, String)> {
    let mut rng = SplitMix64::new(7);
    (0..n)
        .map(|i| {
            let x = rng.below(500) as f64 / 1000.0;
            let y = rng.below(500) as f64 / 1000.0;
            let w = (50 + rng.below(400)) as f64 / 1000.0;
            let region = RegionBox::new(x, y, x + w, y + w.min(0.5)).unwrap();
            let color = COLORS[i % COLORS.len()];
            let text = format!(
                "Question: Where is the {color} square number {i} in the image? Answer with a bounding box. \
                 Answer: {}</s>",
                serialize_box(&region)
            );
            (format!("img{:02}.png", i % 50), text)
        })
        .collect()
}

fn parse_all(raw: &[(String, String)], parallelism: usize) -> Vec<Sample> {
    exec::map_ordered(raw, parallelism, |(image, text)| {
        let mut s = parse_generation(text, TaskType::Rec, image).expect("bench input parses");
        s.id = format!("{image}:{}", text.len());
        s
    })
}

// The parallel arm always runs, even on a single-core host.
fn levels() -> Vec<usize> {
    vec![1, exec::available_parallelism().max(4)]
}

fn bench_parse(c: &mut Criterion) {
    let raw = raw_generations(20_000);
    let mut g = c.benchmark_group("parse");
    g.throughput(Throughput::Elements(raw.len() as u64));
    for p in levels() {
        g.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, &p| {
            b.iter(|| black_box(parse_all(&raw, p)))
        });
    }
    g.finish();
}

fn bench_filter(c: &mut Criterion) {
    let samples = parse_all(&raw_generations(2_000), 1);
    let manifest = CorpusManifest::load(&fixture().join("manifest.jsonl")).unwrap();
    let config = FilterConfig::new(fixture().join("images"));
    let backend = HashEmbedder::new(64);
    let mut g = c.benchmark_group("filter");
    g.sample_size(10);
    g.throughput(Throughput::Elements(samples.len() as u64));
    for p in levels() {
        g.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, &p| {
            b.iter(|| black_box(filter_samples(samples.clone(), vec![], &backend, &manifest, &config, p)))
        });
    }
    g.finish();
}

fn bench_stats(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.jsonl");
    write_jsonl(&path, &parse_all(&raw_generations(20_000), 1)).unwrap();
    let tagger = LexiconTagger::bundled();
    let mut g = c.benchmark_group("stats");
    g.sample_size(10);
    g.throughput(Throughput::Elements(20_000));
    for p in levels() {
        g.bench_with_input(BenchmarkId::from_parameter(p), &p, |b, &p| {
            b.iter(|| black_box(compute_stats(&path, &tagger, p).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_parse, bench_filter, bench_stats);
criterion_main!(benches);
