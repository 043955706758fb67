//! Shared fixtures for the criterion benches.

use ctc_core::numerics::{Sampler, Seed};
use ctc_core::quantum::{standard_gate, standard_state, ControlArm, DensityMatrix, GateName, UnitaryGate};
use ctc_core::solver::{CtcProblem, SolverOptions};

pub const BRUN_SOURCE: &str = include_str!("../../../experiments/brun_ch.ctc");

/// The controlled-Hadamard loop fed with `|->`, undamped.
pub fn ch_minus_problem() -> CtcProblem {
    let opts = SolverOptions {
        damping: 1.0,
        ..SolverOptions::default()
    };
    CtcProblem::with_options(
        standard_state("-").expect("fixed ket"),
        standard_gate(GateName::Ch, ControlArm::Lower),
        &opts,
    )
    .expect("valid problem")
}

/// Seeded Haar gate and random qubit input.
pub fn random_pair(seed: u64) -> (UnitaryGate, DensityMatrix) {
    let mut s = Sampler::new(Seed(seed));
    let gate = UnitaryGate::haar(&mut s, 4);
    let rho = DensityMatrix::new(s.density(2)).expect("sampled state");
    (gate, rho)
}
