use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use wqed_core::coupling::{Preset, SiteKind};
use wqed_core::experiments::{self, BurstSettings, TwoPairSettings};
use wqed_core::fock::{FockBasis, Truncation};
use wqed_core::liouville::{self, DensityVector, PropagatorConfig, SteadyStateMethod, SteadyStateOptions};
use wqed_core::spectra::{self, ArrayModel, SpectrumOptions};

fn diagonalize(c: &mut Criterion) {
    let p = Preset::table1();
    let model = ArrayModel::two_pair(SiteKind::Transmon, &p, 1.3 * p.gamma);
    let basis = Arc::new(FockBasis::new(4, 3, Truncation::UpTo(3)).unwrap());
    let h = spectra::build_h_eff(basis, &model, &model.tables(3).unwrap()).unwrap();
    c.bench_function("diagonalize two-pair N<=3", |b| {
        b.iter(|| spectra::diagonalize(black_box(&h), &SpectrumOptions::default()).unwrap())
    });
}

fn krylov(c: &mut Criterion) {
    let p = Preset::table1();
    let s = TwoPairSettings::new(SiteKind::Transmon, p);
    let array = s.prepare(2.0 * p.gamma).unwrap();
    let h = array.h_eff(p.omega0).unwrap();
    let l = liouville::build_liouvillian(&h, &array.tables, array.model.kappa, None).unwrap();
    let r0 = DensityVector::basis_state(array.basis.len(), array.basis.len() - 1);
    let cfg = PropagatorConfig::default();
    c.bench_function("krylov step d=3 full (6561)", |b| {
        b.iter(|| liouville::krylov_step(&l.matrix, black_box(&r0.data), 0.5 / p.gamma, &cfg).unwrap())
    });
}

fn steady(c: &mut Criterion) {
    let p = Preset::table1();
    let wd = p.omega0 + p.capacitive_j + 0.5 * p.gamma;
    let mut group = c.benchmark_group("steady state");
    group.sample_size(10);
    for (name, truncation, method) in [
        ("dense N<=2", Truncation::UpTo(2), SteadyStateMethod::Dense),
        ("gmres d=3 full", Truncation::Full, SteadyStateMethod::Iterative),
    ] {
        let mut s = TwoPairSettings::new(SiteKind::Transmon, p);
        s.truncation = truncation;
        s.steady = SteadyStateOptions { method, ..SteadyStateOptions::default() };
        group.bench_function(name, |b| b.iter(|| experiments::transmission_point(&s, 3.0 * p.gamma, wd, 700.0).unwrap()));
    }
    group.finish();
}

fn burst(c: &mut Criterion) {
    let p = Preset::table1();
    let mut s = BurstSettings::new(SiteKind::Transmon, 4, &p);
    s.samples = 121;
    let mut group = c.benchmark_group("burst");
    group.sample_size(10);
    group.bench_function("transmon L=4", |b| b.iter(|| experiments::superradiant_burst(black_box(&s)).unwrap()));
    group.finish();
}

criterion_group!(benches, diagonalize, krylov, steady, burst);
criterion_main!(benches);
