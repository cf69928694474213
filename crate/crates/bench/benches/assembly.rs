use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use fallsphere::baseflow::{solve_base, BaseProblem, NewtonOptions};
use fallsphere::forms::{assemble_S, assemble_trilinear};
use fallsphere::spectrum::{assemble_bundle, leading_eigs, EigenOptions, ModeOperators};
use fallsphere::{build_basis, Parity, QuadratureSpec};
use num_complex::Complex64;

fn forms(c: &mut Criterion) {
    let quad = QuadratureSpec::default();
    let b1 = build_basis(1, 4, 8, &quad).unwrap();
    c.bench_function("assemble_S m=1 (4,8)", |bch| bch.iter(|| assemble_S(&b1, &quad).unwrap()));

    let problem = BaseProblem::new(4, 8, quad).unwrap();
    let base = solve_base(&problem, 20.0, None, &NewtonOptions::default()).unwrap();
    let v = problem.field(base.coefficients()).unwrap();
    let b1 = Arc::new(b1);
    c.bench_function("assemble_trilinear m=1 (4,8)", |bch| {
        bch.iter(|| assemble_trilinear(&b1, &b1, &v, &quad).unwrap())
    });
}

fn eigen(c: &mut Criterion) {
    let quad = QuadratureSpec::default();
    let problem = BaseProblem::new(4, 8, quad).unwrap();
    let base = solve_base(&problem, 60.0, None, &NewtonOptions::default()).unwrap();
    let ops = ModeOperators::new(1, Parity::Even, 4, 8, &quad).unwrap();
    let bundle = assemble_bundle(&problem, &base, &ops).unwrap();
    let opts = EigenOptions::default();
    c.bench_function("leading_eigs m=1 (4,8) k=6", |bch| {
        bch.iter(|| leading_eigs(&bundle, Complex64::new(1.0, 0.0), 6, &opts).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forms, eigen
}
criterion_main!(benches);
