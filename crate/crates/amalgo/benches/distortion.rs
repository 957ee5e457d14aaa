//! Parallel vs. sequential distance-row evaluation, the inner workload
//! of distortion measurement, plus the end-to-end report on a claimed
//! map. Run with `cargo bench -p amalgo`.

use criterion::{criterion_group, criterion_main, Criterion};

use amalgo::graphcore::{ball, semitree};
use amalgo::qimaps::cubic_tree_map;
use amalgo::qiverify::measure_distortion_with;
use amalgo::{par, Budget};

fn bench_distance_rows(c: &mut Criterion) {
    let g = semitree(3, 4);
    let bv = ball(&g, &g.origin(), 4, &Budget::default()).unwrap();
    let idx: Vec<u32> = (0..bv.len() as u32).collect();
    let row_max = |&i: &u32| -> u64 {
        let u = &bv.vertices[i as usize];
        bv.vertices
            .iter()
            .map(|v| g.metric(u, v).expect("closed-form metric"))
            .max()
            .unwrap()
    };

    let mut group = c.benchmark_group("distance-rows");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| par::map_collect(&idx, row_max))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| par::map_collect_seq(&idx, row_max))
    });
    group.finish();
}

fn bench_distortion_report(c: &mut Criterion) {
    let budget = Budget {
        pairs: 50_000,
        ..Budget::default()
    };
    let f = cubic_tree_map(&semitree(3, 4)).unwrap();

    let mut group = c.benchmark_group("distortion-report");
    group.sample_size(10);
    group.bench_function("cubic-semitree-r6", |b| {
        b.iter(|| measure_distortion_with(&f, 6, &budget).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_distance_rows, bench_distortion_report);
criterion_main!(benches);
