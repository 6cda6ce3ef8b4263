use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dvdflow::dvd_stepper::residual;
use dvdflow::dvd_stepper::StageState;
use dvdflow::{
    builtin_tableau, dvd_step, BoundaryCondition, DissipationKind, DvdSolverConfig, Field,
    FreeEnergy, LinearSolver, RelaxedScheme, RelaxedState, UniformGrid,
};

fn setup_1d() -> (Field, FreeEnergy) {
    let grid =
        UniformGrid::new_1d(500, 2.0 * std::f64::consts::PI, BoundaryCondition::Periodic).unwrap();
    let phi = Field::from_fn(grid, |x, _| 0.2 * x.sin());
    (phi, FreeEnergy::double_well(1.0, 0.1).with_beta(2.0))
}

fn dvd_steps(c: &mut Criterion) {
    let (phi, fe) = setup_1d();
    let cfg = DvdSolverConfig::default_for(phi.grid());
    let mut group = c.benchmark_group("dvd_step_ch_1d_500");
    group.sample_size(10);
    for name in ["Sch-1", "Sch-2", "Sch-3", "Sch-4"] {
        let tab = builtin_tableau(name).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| dvd_step(&phi, &tab, DissipationKind::Hminus1, &fe, 1e-3, &cfg).unwrap())
        });
    }
    group.finish();
}

// R-DVD-1 solves one linear system per step, SAV/CN two.
fn relaxed_steps(c: &mut Criterion) {
    let (phi, fe) = setup_1d();
    let mut group = c.benchmark_group("relaxed_step_ch_1d_500");
    for (label, scheme) in [
        ("R-DVD-1", RelaxedScheme::RDvd1),
        ("SAV-CN", RelaxedScheme::SavCn),
    ] {
        let start = RelaxedState::new(phi.clone(), scheme, &fe).unwrap();
        let mut solver = LinearSolver::default_for(phi.grid());
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            b.iter(|| {
                let mut state = start.clone();
                state
                    .step(&fe, DissipationKind::Hminus1, 1e-3, &mut solver)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn stage_residual(c: &mut Criterion) {
    let grid = UniformGrid::new_2d(
        128,
        128,
        2.0 * std::f64::consts::PI,
        2.0 * std::f64::consts::PI,
        BoundaryCondition::Periodic,
    )
    .unwrap();
    let phi = Field::from_fn(grid, |x, y| 0.05 * x.sin() * y.sin());
    let fe = FreeEnergy::double_well(1.0, 0.1);
    let tab = builtin_tableau("Sch-4").unwrap();
    let state = StageState::frozen(phi, tab.nu, 1e-4);
    c.bench_function("stage_residual_sch4_128x128", |b| {
        b.iter(|| residual(&state, &tab, DissipationKind::Hminus1, &fe).unwrap())
    });
}

criterion_group!(benches, dvd_steps, relaxed_steps, stage_residual);
criterion_main!(benches);
