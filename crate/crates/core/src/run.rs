//! Executes compiled experiment files and cross-checks them against the
//! unrolled circuit.

use crate::circuit::{unroll_bipartite, UnrollInput, UnrollSpec};
use crate::dsl::{Action, CompiledExperiment};
use crate::error::{CtcError, Result};
use crate::experiments::{discriminate_tagged, run_correlation, run_sweep, ExperimentReport, SweepAxis, SweepPoint};
use crate::numerics::{partial_trace, trace_distance, Keep};
use crate::quantum::DensityMatrix;
use crate::solver::{evolve_ensemble, iterate, observed_output, CtcProblem, InitialState, SolverOptions};

#[derive(Debug)]
pub enum RunOutcome {
    Report(ExperimentReport),
    Sweep { axis: SweepAxis, points: Vec<SweepPoint> },
}

impl RunOutcome {
    /// False if any solve hit `max_iter` or any sweep point failed.
    pub fn converged(&self) -> bool {
        match self {
            RunOutcome::Report(r) => r.converged,
            RunOutcome::Sweep { points, axis } => points.iter().all(|p| match &p.outcome {
                // Fixed-length iteration points have no stopping rule to miss.
                Ok(r) => r.converged || *axis == SweepAxis::N,
                Err(_) => false,
            }),
        }
    }
}

pub fn execute(exp: &CompiledExperiment) -> Result<RunOutcome> {
    let ens = &exp.ensemble;
    let mut report = match &exp.action {
        Action::Sweep { axis, grid } => {
            let rho_in = exp.ctc_input()?;
            let points = run_sweep(*axis, grid, &rho_in, &exp.gate, &exp.options)?;
            return Ok(RunOutcome::Sweep { axis: *axis, points });
        }
        Action::Solve => {
            let evo = evolve_ensemble(ens, &exp.gate, &exp.options)?;
            ExperimentReport::from_ensemble(&exp.name, ens, &evo)
        }
        Action::Discriminate => {
            let evo = evolve_ensemble(ens, &exp.gate, &exp.options)?;
            discriminate_tagged(ens, &evo, exp.basis)?
        }
        Action::Correlate { semantics } => run_correlation(&exp.name, ens, &exp.gate, &exp.options, *semantics)?,
    };
    report.name = exp.name.clone();
    Ok(RunOutcome::Report(report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCheck {
    pub depth: usize,
    /// Trace distance between the unrolled circuit and the undamped solver
    /// iterate at the same depth, ensemble averaged.
    pub distance: f64,
    /// Largest per-branch distance.
    pub max_branch_distance: f64,
}

fn chain_start(initial: &InitialState, rho_b: &DensityMatrix) -> DensityMatrix {
    match initial {
        InitialState::Input => rho_b.clone(),
        InitialState::MaximallyMixed => DensityMatrix::maximally_mixed(rho_b.dim()),
        InitialState::State(s) => s.clone(),
    }
}

/// Runs the unrolled circuit with `depth` copies for every branch and
/// compares it with `depth - 1` undamped solver steps followed by the final
/// interaction.
pub fn oracle_check(exp: &CompiledExperiment, depth: usize) -> Result<OracleCheck> {
    if depth == 0 {
        return Err(CtcError::InvalidParameter("oracle depth must be positive".into()));
    }
    let opts = SolverOptions {
        damping: 1.0,
        ..exp.options.clone()
    };
    let mut unrolled = Vec::new();
    let mut solved = Vec::new();
    let mut max_branch_distance = 0.0f64;
    for b in exp.ensemble.branches() {
        let dims = b.state.dims();
        let rho_b = DensityMatrix::new(partial_trace(b.state.density().matrix(), dims, Keep::B)?.hermitian_part())?;
        let start = chain_start(&opts.initial, &rho_b);
        let spec = UnrollSpec::new(depth, UnrollInput::Bipartite(b.state.clone()), exp.gate.clone())?
            .with_chain_initial(start)
            .with_p(opts.p);
        let circuit = unroll_bipartite(&spec)?;
        let problem = CtcProblem::with_options(rho_b, exp.gate.clone(), &opts)?;
        let rho = iterate(&problem, depth - 1)?;
        let reference = observed_output(&b.state.density(), dims, &exp.gate, &rho)?;
        max_branch_distance = max_branch_distance.max(trace_distance(&circuit, &reference)?);
        unrolled.push((b.weight, circuit));
        solved.push((b.weight, reference));
    }
    let mix = |parts: &[(f64, DensityMatrix)]| {
        DensityMatrix::mixture(&parts.iter().map(|(w, r)| (*w, r)).collect::<Vec<_>>())
    };
    Ok(OracleCheck {
        depth,
        distance: trace_distance(&mix(&unrolled)?, &mix(&solved)?)?,
        max_branch_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{compile, parse_experiment};
    use crate::numerics::Seed;

    fn compiled(src: &str) -> CompiledExperiment {
        compile(&parse_experiment(src).unwrap(), Seed(7)).unwrap()
    }

    #[test]
    fn brun_file_discriminates_perfectly() {
        let c = compiled(
            "experiment brun_ch\ngate CH(control=lower)\nbranch 0.5: ket \"00\"\nbranch 0.5: ket \"1-\"\nsolver { damping=1.0 }\naction discriminate\n",
        );
        let RunOutcome::Report(r) = execute(&c).unwrap() else { panic!() };
        assert!(r.converged);
        assert!((r.metric("success_probability").unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(r.name, "brun_ch");
        let check = oracle_check(&c, 10).unwrap();
        assert!(check.distance < 1e-9, "{check:?}");
    }

    #[test]
    fn oracle_matches_with_decoherence_and_random_start() {
        let c = compiled(
            "experiment r\ngate CNOT(control=upper)\nbranch 1: ket \"+\"\nsolver { p=0.05, initial=random }\n",
        );
        let check = oracle_check(&c, 6).unwrap();
        assert!(check.max_branch_distance < 1e-12, "{check:?}");
    }

    #[test]
    fn sweep_outcome() {
        let c = compiled("experiment s\ngate SWAP\nbranch 1: ket \"0\"\nsolver { p=0.01 }\naction sweep axis=n grid=[10, 20]\n");
        let out = execute(&c).unwrap();
        assert!(out.converged());
        let RunOutcome::Sweep { points, .. } = out else { panic!() };
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].value, 10.0);
    }
}
