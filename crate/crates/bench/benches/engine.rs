use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use repinv_core::checks::{weak_field_metric, weak_field_start};
use repinv_core::eom::{acceleration, Gauge, GaugeChoice};
use repinv_core::integrate::{integrate, IntegratorConfig};
use repinv_core::lagrangian::{hamiltonian, CanonicalTerm, LagrangianSpec};
use repinv_core::oracle::{minimize_action, MinimizeConfig};
use repinv_core::{Expr, SymTensorField};

fn quadratic(g: SymTensorField) -> LagrangianSpec {
    LagrangianSpec::new(vec![CanonicalTerm::polynomial(1.0, g)], None).unwrap()
}

fn dsl(c: &mut Criterion) {
    let e = Expr::parse("exp(-0.5*(x1^2 + x2^2)) * (1 + 0.02/r)").unwrap();
    c.bench_function("expr parse", |b| {
        b.iter(|| Expr::parse(black_box("exp(-0.5*(x1^2 + x2^2)) * (1 + 0.02/r)")).unwrap())
    });
    c.bench_function("expr eval", |b| {
        b.iter(|| e.eval_f64(&[("x1", 0.3), ("x2", -0.2), ("r", 1.1)][..]).unwrap())
    });
}

fn eom(c: &mut Criterion) {
    let g = weak_field_metric();
    let s = weak_field_start();
    let l1 = LagrangianSpec::metric(1.0, g.clone()).unwrap();
    let l2 = quadratic(g.clone());
    let gauge = Gauge::new(GaugeChoice::MetricNormConst(g));
    c.bench_function("hamiltonian 4d", |b| b.iter(|| hamiltonian(&l2, black_box(&s.x), &s.v).unwrap()));
    c.bench_function("acceleration regular 4d", |b| {
        b.iter(|| acceleration(&l2, &Gauge::affine(), 0.0, black_box(&s.x), &s.v).unwrap())
    });
    c.bench_function("acceleration degenerate 4d", |b| {
        b.iter(|| acceleration(&l1, &gauge, 0.0, black_box(&s.x), &s.v).unwrap())
    });
}

fn integration(c: &mut Criterion) {
    let g = weak_field_metric();
    let s = weak_field_start();
    let l1 = LagrangianSpec::metric(1.0, g.clone()).unwrap();
    let gauge = Gauge::new(GaugeChoice::MetricNormConst(g));
    let cfg = IntegratorConfig::default();
    let mut group = c.benchmark_group("integrate");
    group.sample_size(10);
    group.bench_function("weak field orbit tau 0..10", |b| {
        b.iter(|| integrate(&l1, &gauge, &s, (0.0, 10.0), &cfg, &[]).unwrap())
    });
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let flat = quadratic(SymTensorField::minkowski(3));
    let mut group = c.benchmark_group("oracle");
    group.sample_size(10);
    group.bench_function("flat minimize N=32", |b| {
        b.iter(|| {
            minimize_action(
                &flat,
                (&[0.0, 0.0, 0.0], &[1.0, 0.3, -0.2]),
                (0.0, 1.0),
                32,
                &GaugeChoice::Affine,
                &MinimizeConfig::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, dsl, eom, integration, oracle);
criterion_main!(benches);
