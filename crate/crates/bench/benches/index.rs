use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use safekv_bench::{chat_workload, filled_index};
use safekv_core::{CacheIndex, IndexConfig};

fn match_prefix(c: &mut Criterion) {
    let w = chat_workload(2000);
    let idx = filled_index(&w);
    let tokens: u64 = w.requests.iter().map(|r| r.tokens.len() as u64).sum();
    let mut g = c.benchmark_group("match_prefix");
    g.throughput(Throughput::Elements(tokens));
    g.bench_function("chat_2000", |b| {
        b.iter(|| {
            for r in &w.requests {
                black_box(idx.match_prefix(&r.tokens, r.user));
            }
        })
    });
    g.finish();
}

fn insert(c: &mut Criterion) {
    let w = chat_workload(2000);
    let mut g = c.benchmark_group("insert");
    g.throughput(Throughput::Elements(w.requests.len() as u64));
    g.bench_function("chat_2000", |b| {
        b.iter_batched(
            || CacheIndex::new(IndexConfig::default()).unwrap(),
            |mut idx| {
                for r in &w.requests {
                    black_box(idx.insert(&r.tokens, r.user, r.owner, 0).unwrap());
                }
                idx
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, match_prefix, insert);
criterion_main!(benches);
