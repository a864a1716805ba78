use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcrnn::autodiff::{ParamStore, Tape};
use dcrnn::dcgru::{next_seed, record_cell, CellShape, DcgruLayer};
use dcrnn::graph::out_transition;
use dcrnn::sparse::{diffusion_powers, spmm};
use dcrnn::{ConvMode, Supports};
use dcrnn_bench::{road_like_graph, signal};

fn bench_spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm");
    for n in [207, 1024] {
        let p = out_transition(&road_like_graph(n, 7));
        let x = signal(n, 64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| spmm(&p, &x).unwrap())
        });
    }
    group.finish();
}

fn bench_diffusion_powers(c: &mut Criterion) {
    let mut group = c.benchmark_group("diffusion_powers");
    let n = 207;
    let p = out_transition(&road_like_graph(n, 7));
    let x = signal(n, 64);
    for k in [2, 3, 5] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| diffusion_powers(&p, &x, k).unwrap())
        });
    }
    group.finish();
}

fn bench_dcgru_cell(c: &mut Criterion) {
    let n = 207;
    let batch = 8;
    let graph = road_like_graph(n, 7);
    let supports = Supports::from_graph(&graph, ConvMode::Bidirectional).unwrap();
    let shape = CellShape {
        input_dim: 2,
        units: 64,
        k_max: 3,
        mode: ConvMode::Bidirectional,
    };
    let mut store = ParamStore::new();
    let mut seed = next_seed(1);
    let layer = DcgruLayer::register(&mut store, "cell", shape, &mut seed).unwrap();
    let x = signal(batch * n, shape.input_dim);
    let h = signal(batch * n, shape.units);

    let mut group = c.benchmark_group("dcgru_cell");
    group.sample_size(20);
    group.bench_function("forward", |b| {
        let mut tape = Tape::new();
        b.iter(|| {
            tape.clear();
            let vars = layer.bind(&mut tape, &store);
            let xv = tape.constant(x.clone());
            let hv = tape.constant(h.clone());
            record_cell(&mut tape, &vars, &supports, xv, hv).unwrap()
        })
    });
    group.bench_function("forward_backward", |b| {
        let mut tape = Tape::new();
        b.iter(|| {
            tape.clear();
            let vars = layer.bind(&mut tape, &store);
            let xv = tape.constant(x.clone());
            let hv = tape.constant(h.clone());
            let out = record_cell(&mut tape, &vars, &supports, xv, hv).unwrap();
            let loss = tape.mean(out);
            tape.backward(loss, &mut store).unwrap();
            store.zero_grad();
        })
    });
    group.finish();
}

criterion_group!(benches, bench_spmm, bench_diffusion_powers, bench_dcgru_cell);
criterion_main!(benches);
