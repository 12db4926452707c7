use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ecp_core::analysis::{sweep, SweepSpec};
use ecp_core::protocols::oracle::oracle_enumerate;
use ecp_core::protocols::{Engine, ProtocolSpec, RunConfig};
use ecp_core::{run, trace, vbs_schedule, Accounting, DetectorModel, EntanglementParams, PolarizationParams};

fn params() -> (EntanglementParams, PolarizationParams) {
    (
        EntanglementParams::from_alpha_sq(0.3).unwrap(),
        PolarizationParams::from_gamma_sq(0.6).unwrap(),
    )
}

fn ecp2(e: &EntanglementParams, rounds: usize) -> ProtocolSpec {
    ProtocolSpec::Ecp2 {
        schedule: vbs_schedule(e, rounds).unwrap(),
        rounds,
    }
}

fn exact_trace(c: &mut Criterion) {
    let (e, p) = params();
    let mut g = c.benchmark_group("trace");
    g.bench_function("ecp1_branch", |b| {
        let spec = ProtocolSpec::Ecp1 { t1: 0.3, t2: 0.3 };
        b.iter(|| trace(black_box(&e), Some(&p), &spec, Accounting::PaperBranch).unwrap())
    });
    for rounds in [1, 3, 5] {
        let spec = ecp2(&e, rounds);
        g.bench_with_input(BenchmarkId::new("ecp2_branch", rounds), &spec, |b, spec| {
            b.iter(|| trace(black_box(&e), Some(&p), spec, Accounting::PaperBranch).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("ecp2_joint", rounds), &spec, |b, spec| {
            b.iter(|| trace(black_box(&e), Some(&p), spec, Accounting::JointCoherent).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let (e, p) = params();
    let spec = ecp2(&e, 3);
    c.bench_function("oracle/ecp2_joint_3", |b| {
        b.iter(|| oracle_enumerate(black_box(&e), Some(&p), &spec, Accounting::JointCoherent).unwrap())
    });
}

fn monte_carlo(c: &mut Criterion) {
    let (e, p) = params();
    let config = RunConfig {
        protocol: ecp2(&e, 5),
        accounting: Accounting::PaperBranch,
        model: DetectorModel::bernoulli(0.8),
        engine: Engine::MonteCarlo {
            trials: 100_000,
            seed: 1,
        },
    };
    c.bench_function("monte_carlo/ecp2_5_rounds_1e5", |b| {
        b.iter(|| run(black_box(&e), Some(&p), &config).unwrap())
    });
}

fn sweeps(c: &mut Criterion) {
    let spec = SweepSpec {
        grid: "0.05:0.95:0.05".parse().unwrap(),
        eta_p: 0.8,
        ks: vec![1, 3, 5],
        engine: Engine::Exact,
    };
    c.bench_function("sweep/exact_57_rows", |b| b.iter(|| sweep(black_box(&spec)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = exact_trace, oracle, monte_carlo, sweeps
}
criterion_main!(benches);
