//! Fixtures shared by the benchmarks.

use abp_core::engine::{AbpState, DiffusionProcess};
use abp_core::{
    BiasGrid, CvMeasure, DynamicsSpec, Family, KernelSpec, NormalizationSpec, Observable, PotentialSpec,
    ReactionCoordinate, RunSettings, State,
};

pub fn double_well() -> DynamicsSpec {
    let v = PotentialSpec::preset("double-well-1d", 1.0).expect("preset");
    DynamicsSpec::new(Family::Brownian, v, ReactionCoordinate::projection(1)).expect("dynamics")
}

pub fn coupled_torus(m: usize) -> DynamicsSpec {
    let v = PotentialSpec::preset("t2-coupled", 1.0).expect("preset");
    DynamicsSpec::new(Family::Brownian, v, ReactionCoordinate::projection(m)).expect("dynamics")
}

pub fn empty_grid(g: usize, m: usize) -> BiasGrid {
    let start = CvMeasure::Atoms(vec![(1.0, vec![0.5; m])]);
    BiasGrid::new(&KernelSpec::default(), &NormalizationSpec::l1(), &start, g, m).expect("grid")
}

/// A fresh adaptive state at the centre of the torus.
pub fn adaptive_state(dynamics: DynamicsSpec, g: usize) -> AbpState<DiffusionProcess> {
    let d = dynamics.dim();
    let m = dynamics.cv_dim();
    let settings = RunSettings::new(1e-3, 1.0, 1);
    let process = DiffusionProcess::new(dynamics, vec![Observable::Cos { coord: 0, k: 1 }], settings.dt).expect("process");
    AbpState::new(process, State { x: vec![0.5; d], aux: vec![] }, empty_grid(g, m), vec![1.0], true, &settings)
        .expect("state")
}
