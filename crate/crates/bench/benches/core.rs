use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gshf_core::env::RewardTable;
use gshf_core::policy::rejection_sample_step;
use gshf_core::rng::substream;
use gshf_core::{fit_mle, generate_instance, gibbs_oracle, InstanceSpec, MleOptions, TabularPolicy};

fn bench_fit_mle(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_mle");
    for &n in &[200usize, 2000, 20_000] {
        let mut rng = substream(1, &[n as u64]);
        let inst = generate_instance(&InstanceSpec::new(8, 16, 8, 2.0, 1.0), &mut rng).unwrap();
        let data = inst.sample_comparisons(inst.pi0(), n, &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| fit_mle(black_box(data), &inst, &MleOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn bench_gibbs(c: &mut Criterion) {
    let mut group = c.benchmark_group("gibbs_oracle");
    for &k in &[16usize, 4096] {
        let pi0 = TabularPolicy::uniform(&vec![k; 32]);
        let r = RewardTable::new((0..32).map(|x| (0..k).map(|a| ((x * 31 + a * 17) % 97) as f64 / 97.0).collect()).collect());
        group.bench_with_input(BenchmarkId::from_parameter(k), &r, |b, r| {
            b.iter(|| gibbs_oracle(black_box(r), &pi0, 0.3).unwrap())
        });
    }
    group.finish();
}

fn bench_rejection(c: &mut Criterion) {
    let pi0 = TabularPolicy::uniform(&[64]);
    let r = RewardTable::new(vec![(0..64).map(|a| a as f64 / 64.0).collect()]);
    let mut rng = substream(2, &[]);
    c.bench_function("rejection_sample_step/100k", |b| {
        b.iter(|| rejection_sample_step(&pi0, 0.5, None, black_box(&r), 0, 100_000, 1, &mut rng).unwrap())
    });
}

criterion_group!(benches, bench_fit_mle, bench_gibbs, bench_rejection);
criterion_main!(benches);
