use bootforge_bench::{bytes, key, residue};
use bootforge_core::forge::{brute_force_search, SearchParams};
use bootforge_core::modmath::{mod_exp, Montgomery};
use bootforge_core::sigparser::{classify_plaintext, ParserConfig};
use bootforge_core::Seed;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

fn modexp(c: &mut Criterion) {
    let mut g = c.benchmark_group("mod_exp");
    for bits in [512, 2048] {
        let k = key(bits);
        let (n, e) = (k.n().clone(), k.e().clone());
        let d = k.private_exponent().unwrap().clone();
        let x = residue(&n, 1);
        let mont = Montgomery::new(&n).unwrap();
        g.bench_with_input(BenchmarkId::new("public_num_bigint", bits), &x, |b, x| {
            b.iter(|| mod_exp(black_box(x), &e, &n).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("private_num_bigint", bits), &x, |b, x| {
            b.iter(|| mod_exp(black_box(x), &d, &n).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("private_montgomery", bits), &x, |b, x| {
            b.iter(|| mont.pow(black_box(x), &d))
        });
    }
    g.finish();
}

fn montgomery_mul(c: &mut Criterion) {
    let mut g = c.benchmark_group("montgomery_mul");
    for bits in [512, 2048] {
        let k = key(bits);
        let mont = Montgomery::new(k.n()).unwrap();
        let a = mont.to_montgomery(&residue(k.n(), 2));
        let bb = mont.to_montgomery(&residue(k.n(), 3));
        let mut out = vec![0; mont.limbs()];
        let mut scratch = vec![0; mont.limbs() + 2];
        g.bench_function(BenchmarkId::from_parameter(bits), |b| {
            b.iter(|| mont.mul_into(black_box(&a), black_box(&bb), &mut out, &mut scratch))
        });
    }
    g.finish();
}

fn classify(c: &mut Criterion) {
    let blocks: Vec<Vec<u8>> = (0..1024).map(|i| bytes(0x100, 100 + i)).collect();
    let mut g = c.benchmark_group("classify_plaintext");
    g.throughput(Throughput::Elements(blocks.len() as u64));
    for (name, config) in [("flawed", ParserConfig::flawed(0x100)), ("relaxed", ParserConfig::relaxed(0x100))] {
        g.bench_function(name, |b| {
            b.iter(|| blocks.iter().filter(|blk| classify_plaintext(blk, &config).is_some()).count())
        });
    }
    g.finish();
}

fn search(c: &mut Criterion) {
    const ATTEMPTS: u64 = 20_000;
    let k = key(512);
    // A window no block can reach keeps the budget fixed.
    let config = ParserConfig::flawed(64).with_window(1 << 40..(1 << 40) + 1);
    let mut g = c.benchmark_group("search");
    g.sample_size(10);
    g.throughput(Throughput::Elements(ATTEMPTS));
    g.bench_function("512_bit_one_worker", |b| {
        b.iter(|| {
            let params = SearchParams::new(1, Seed([7; 32]), ATTEMPTS);
            brute_force_search(&k.public, &config, &params).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, modexp, montgomery_mul, classify, search);
criterion_main!(benches);
