use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ftdir_core::generate::{erdos_renyi, WeightRange};
use ftdir_core::scenario::{generate_scenario, run_scenario, GenParams, GraphKind};
use ftdir_core::spt::{build_spt, update_spt};
use ftdir_core::{Hierarchy, Mode};

fn hierarchy(c: &mut Criterion) {
    let mut grp = c.benchmark_group("hierarchy_build");
    for n in [16, 32, 64] {
        let g = erdos_renyi(n, 15, WeightRange { min: 1, max: 4 }, 7).unwrap();
        for mode in [Mode::Weak, Mode::Strong] {
            grp.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &g, |b, g| {
                b.iter(|| Hierarchy::build(black_box(g), 2, mode, 1).unwrap())
            });
        }
    }
    grp.finish();
}

fn spt_repair(c: &mut Criterion) {
    let g = erdos_renyi(64, 10, WeightRange { min: 1, max: 8 }, 3).unwrap();
    let t = build_spt(&g, 0);
    let e = t.tree_edges().into_iter().find(|&e| g.connected_without(&[e])).unwrap();
    let mut h = g.clone();
    h.fail_edge(e).unwrap();
    c.bench_function("spt_repair_vs_rebuild/repair", |b| {
        b.iter(|| {
            let mut t2 = t.clone();
            update_spt(&mut t2, e, black_box(&h))
        })
    });
    c.bench_function("spt_repair_vs_rebuild/rebuild", |b| b.iter(|| build_spt(black_box(&h), 0)));
}

fn scenario(c: &mut Criterion) {
    let mut grp = c.benchmark_group("scenario_run");
    grp.sample_size(10);
    for failures in [0, 2] {
        let p = GenParams { n: 32, failures, ..Default::default() };
        let sc = generate_scenario(GraphKind::Random, &p, 11).unwrap();
        grp.bench_with_input(BenchmarkId::new("random_n32_f", failures), &sc, |b, sc| {
            b.iter(|| run_scenario(black_box(sc)).unwrap())
        });
    }
    grp.finish();
}

criterion_group!(benches, hierarchy, spt_repair, scenario);
criterion_main!(benches);
