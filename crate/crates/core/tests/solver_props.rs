use ctc_core::numerics::{partial_trace, trace_distance, von_neumann_entropy, Keep, Sampler, Seed};
use ctc_core::quantum::{standard_gate, standard_ket, ControlArm, DensityMatrix, GateName, UnitaryGate};
use ctc_core::solver::{
    consistency_map, evolve_bipartite_branch, evolve_ensemble, scan_multiplicity, solve_fixed_point,
    BipartiteState, Branch, CtcProblem, EnsembleSpec, InitialState, Multiplicity, SolverOptions,
};
use proptest::prelude::*;

fn undamped() -> SolverOptions {
    SolverOptions {
        damping: 1.0,
        ..SolverOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_solutions_are_certified(seed in any::<u64>()) {
        let mut s = Sampler::new(Seed(seed));
        let gate = UnitaryGate::haar(&mut s, 4);
        let rho_in = DensityMatrix::new(s.density(2)).unwrap();
        let fp = solve_fixed_point(&CtcProblem::new(rho_in.clone(), gate.clone()).unwrap()).unwrap();
        if fp.converged {
            let image = consistency_map(&rho_in, &gate, &fp.rho_star).unwrap();
            prop_assert!(trace_distance(&fp.rho_star, &image).unwrap() < ctc_core::solver::DEFAULT_TOL);
        }
    }

    #[test]
    fn mixing_is_linear(seed in any::<u64>(), w in 0.05f64..0.95) {
        let mut s = Sampler::new(Seed(seed));
        let gate = UnitaryGate::haar(&mut s, 4);
        let branches = vec![
            Branch { weight: w, state: BipartiteState::new(s.ket(4), (2, 2)).unwrap() },
            Branch { weight: 1.0 - w, state: BipartiteState::new(s.ket(4), (2, 2)).unwrap() },
        ];
        let ens = EnsembleSpec::new(branches.clone()).unwrap();
        let evo = evolve_ensemble(&ens, &gate, &SolverOptions::default()).unwrap();
        let a = evolve_bipartite_branch(&branches[0].state, &gate, &SolverOptions::default()).unwrap().output;
        let b = evolve_bipartite_branch(&branches[1].state, &gate, &SolverOptions::default()).unwrap().output;
        let sum = a.matrix().scale_real(w).try_add(&b.matrix().scale_real(1.0 - w)).unwrap();
        prop_assert!(evo.output.matrix().max_abs_diff(&sum) < 1e-14);
    }

    #[test]
    fn entangled_partner_is_untouched(seed in any::<u64>(), bell in 0usize..4) {
        let mut s = Sampler::new(Seed(seed));
        let gate = UnitaryGate::haar(&mut s, 4);
        let label = ["Phi+", "Phi-", "Psi+", "Psi-"][bell];
        let phi = BipartiteState::new(standard_ket(label).unwrap(), (2, 2)).unwrap();
        let out = evolve_bipartite_branch(&phi, &gate, &SolverOptions::default()).unwrap().output;
        let kept = partial_trace(out.matrix(), (2, 2), Keep::A).unwrap();
        let before = partial_trace(phi.density().matrix(), (2, 2), Keep::A).unwrap();
        prop_assert!(kept.max_abs_diff(&before) < 1e-10);
    }
}

#[test]
fn swap_output_is_input() {
    let mut s = Sampler::new(Seed(11));
    let swap = standard_gate(GateName::Swap, ControlArm::Lower);
    for _ in 0..100 {
        let rho_in = DensityMatrix::new(s.density(2)).unwrap();
        let start = DensityMatrix::new(s.density(2)).unwrap();
        let opts = SolverOptions {
            initial: InitialState::State(start),
            ..SolverOptions::default()
        };
        let fp = solve_fixed_point(&CtcProblem::with_options(rho_in.clone(), swap.clone(), &opts).unwrap()).unwrap();
        assert!(trace_distance(&fp.rho_out, &rho_in).unwrap() < 1e-12);
    }
}

#[test]
fn haar_gates_have_fixed_points() {
    let mut s = Sampler::new(Seed(12));
    let opts = SolverOptions {
        p: 1e-6,
        damping: 0.5,
        ..SolverOptions::default()
    };
    let mut failures = 0;
    for i in 0..100 {
        let gate = UnitaryGate::haar(&mut s, 4);
        let rho_in = DensityMatrix::new(s.density(2)).unwrap();
        let fp = solve_fixed_point(&CtcProblem::with_options(rho_in, gate, &opts).unwrap()).unwrap();
        if !fp.converged {
            eprintln!("case {i}: no convergence in {} iterations", fp.iterations);
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn decoherence_selects_one_solution() {
    let mut s = Sampler::new(Seed(13));
    let swap = standard_gate(GateName::Swap, ControlArm::Lower);
    let rho_in = DensityMatrix::new(s.density(2)).unwrap();
    let solutions: Vec<DensityMatrix> = (0..20)
        .map(|_| {
            let opts = SolverOptions {
                p: 1e-3,
                initial: InitialState::State(DensityMatrix::new(s.density(2)).unwrap()),
                ..undamped()
            };
            let fp = solve_fixed_point(&CtcProblem::with_options(rho_in.clone(), swap.clone(), &opts).unwrap()).unwrap();
            assert!(fp.converged);
            fp.rho_star
        })
        .collect();
    let mixed = DensityMatrix::maximally_mixed(2);
    for a in &solutions {
        assert!(trace_distance(a, &mixed).unwrap() < 1e-6);
        for b in &solutions {
            assert!(trace_distance(a, b).unwrap() < 1e-6);
        }
    }
}

#[test]
fn decohered_solution_has_maximal_entropy() {
    let mut s = Sampler::new(Seed(14));
    let swap = standard_gate(GateName::Swap, ControlArm::Lower);
    let gates = [
        swap.clone(),
        swap.then_after(&standard_gate(GateName::Cnot, ControlArm::Upper)).unwrap(),
        swap.then_after(&standard_gate(GateName::Ch, ControlArm::Upper)).unwrap(),
        UnitaryGate::haar(&mut s, 4),
    ];
    let rho_in = DensityMatrix::new(s.density(2)).unwrap();
    for (i, gate) in gates.iter().enumerate() {
        let scan = scan_multiplicity(&rho_in, gate, 12, Seed(i as u64)).unwrap();
        if scan.classification != Multiplicity::Multiple {
            continue;
        }
        let opts = SolverOptions { p: 1e-3, ..undamped() };
        let fp = solve_fixed_point(&CtcProblem::with_options(rho_in.clone(), gate.clone(), &opts).unwrap()).unwrap();
        for rep in &scan.representatives {
            assert!(fp.entropy_bits >= von_neumann_entropy(rep).unwrap() - 1e-9, "gate {i}");
        }
    }
}
