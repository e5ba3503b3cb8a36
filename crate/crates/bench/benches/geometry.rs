use std::hint::black_box;

use algebroid_flow::connection::PointGeometry;
use algebroid_flow::{identity_suite, parse, VarSet};
use algebroid_flow_bench::scenario;
use criterion::{criterion_group, criterion_main, Criterion};

fn expressions(c: &mut Criterion) {
    let vars = VarSet::new(2, 2);
    let e = parse("(y1^2 + y2^2)/2 * (1 + x1^2/4) + sin(x2) * y1 * y2 + exp(x1/3)", &vars).unwrap();
    let p = [0.3, -0.2, 0.5, 0.1];
    c.bench_function("expr/eval", |b| b.iter(|| e.eval(black_box(&p)).unwrap()));
    c.bench_function("expr/differentiate", |b| b.iter(|| black_box(&e).differentiate(2)));
}

fn point_geometry(c: &mut Criterion) {
    let sc = scenario("general");
    let (x, y) = sc.sample_points(1, 42).remove(0);
    c.bench_function("point/geometry_and_curvature", |b| {
        b.iter(|| {
            let pg = PointGeometry::new(sc.algebroid(), sc.nsource(), sc.metric_source(), &x, &y).unwrap();
            black_box(pg.curvature(pg.canonical()))
        })
    });
    let pts = sc.sample_points(8, 42);
    c.bench_function("point/identity_suite_8", |b| {
        b.iter(|| identity_suite(sc.algebroid(), sc.nsource(), sc.metric_source(), &pts, None).unwrap())
    });
}

fn el(c: &mut Criterion) {
    let sc = scenario("so3_rigid_body");
    c.bench_function("el/rigid_body_1000_steps", |b| {
        b.iter(|| sc.model().integrate_el(&[0.0], &[0.6, 0.5, -0.4], 1e-3, 1000).unwrap())
    });
}

criterion_group!(benches, expressions, point_geometry, el);
criterion_main!(benches);
