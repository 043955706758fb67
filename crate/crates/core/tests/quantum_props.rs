use ctc_core::numerics::{tensor_product, ComplexMatrix, Sampler, Seed, C64};
use ctc_core::quantum::{
    apply_channel, depolarize, standard_gate, standard_ket, ControlArm, DensityMatrix, GateName, KrausChannel,
    UnitaryGate,
};
use proptest::prelude::*;

const NAMES: [GateName; 7] = [
    GateName::I,
    GateName::X,
    GateName::Z,
    GateName::H,
    GateName::Swap,
    GateName::Cnot,
    GateName::Ch,
];

/// Kraus operators read off the first `d` columns of a random isometry.
fn random_channel(s: &mut Sampler, d: usize, k: usize) -> KrausChannel {
    let v = s.unitary(d * k);
    let ops = (0..k)
        .map(|i| ComplexMatrix::from_fn(d, d, |r, c| v[(i * d + r, c)]))
        .collect();
    KrausChannel::new(ops).unwrap()
}

proptest! {
    #[test]
    fn constructors_satisfy_invariants(seed in any::<u64>(), d in 2usize..6) {
        let mut s = Sampler::new(Seed(seed));
        prop_assert!(DensityMatrix::new(s.density(d)).is_ok());
        prop_assert!(DensityMatrix::new(s.pure(d)).is_ok());
        prop_assert!(UnitaryGate::new(s.unitary(d), "haar").is_ok());
        for name in NAMES {
            for arm in [ControlArm::Upper, ControlArm::Lower] {
                let g = standard_gate(name, arm);
                prop_assert!(UnitaryGate::new(g.matrix().clone(), "copy").is_ok());
            }
        }
        for spec in ["0", "1", "+", "-", "01", "+-", "Phi+", "Psi-"] {
            prop_assert!(DensityMatrix::from_ket(&standard_ket(spec).unwrap()).is_ok());
        }
    }

    #[test]
    fn channel_preserves_trace_and_positivity(seed in any::<u64>(), d in 2usize..5, k in 1usize..4) {
        let mut s = Sampler::new(Seed(seed));
        let ch = random_channel(&mut s, d, k);
        let rho = DensityMatrix::new(s.density(d)).unwrap();
        let out = apply_channel(&ch, &rho).unwrap();
        prop_assert!((out.matrix().trace().re - 1.0).abs() < 1e-12);
        let spectrum = ctc_core::numerics::eig_hermitian(out.matrix()).unwrap().values;
        prop_assert!(spectrum.iter().all(|&l| l > -1e-9));
    }

    #[test]
    fn swap_exchanges_factors(seed in any::<u64>()) {
        let mut s = Sampler::new(Seed(seed));
        let a = s.density(2);
        let b = s.density(2);
        let swap = standard_gate(GateName::Swap, ControlArm::Lower);
        let swapped = tensor_product(&a, &b).conjugate_by(swap.matrix()).unwrap();
        prop_assert!(swapped.max_abs_diff(&tensor_product(&b, &a)) < 1e-14);
    }

    #[test]
    fn depolarize_is_affine(seed in any::<u64>(), d in 2usize..5, lambda in 0.0f64..1.0, p in 0.0f64..=1.0) {
        let mut s = Sampler::new(Seed(seed));
        let r1 = DensityMatrix::new(s.density(d)).unwrap();
        let r2 = DensityMatrix::new(s.density(d)).unwrap();
        let mix = DensityMatrix::mixture(&[(lambda, &r1), (1.0 - lambda, &r2)]).unwrap();
        let lhs = depolarize(&mix, p).unwrap();
        let rhs = depolarize(&r1, p).unwrap().matrix().scale_real(lambda)
            .try_add(&depolarize(&r2, p).unwrap().matrix().scale_real(1.0 - lambda)).unwrap();
        prop_assert!(lhs.matrix().max_abs_diff(&rhs) < 1e-13);
    }
}

#[test]
fn controlled_gates_fix_control_zero() {
    // With the control arm in |0>, every controlled gate acts as the identity.
    let zero = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
    let plus = standard_ket("+").unwrap();
    for name in [GateName::Cnot, GateName::Ch] {
        let lower = standard_gate(name, ControlArm::Lower);
        let v = ctc_core::numerics::kron_vec(&plus, &zero);
        let out = lower.matrix().mul_vec(&v).unwrap();
        assert!(out.iter().zip(&v).all(|(a, b)| (a - b).norm() < 1e-15));
    }
}
