//! Unrolled equivalent circuits.
//!
//! The CTC interaction is replaced by a finite chain: `n` fresh copies of the
//! input meet a chained mode one after another through the same gate. After
//! each interaction the lower (qubit-2) slot is lost and the upper slot
//! carries on as the chained mode. This is an ordinary circuit and serves as
//! a brute-force check on the iterated-map solver.
//!
//! Two routes are implemented: the eager route traces lost modes as soon as
//! they leave (memory linear in `n`), the deferred route builds the whole
//! `n`-copy tensor and traces once at the end.

use crate::error::{CtcError, Result};
use crate::numerics::{conjugate_two_site, embed_two_site, partial_trace_multi, tensor_product, ComplexMatrix};
use crate::quantum::{depolarize, DensityMatrix, UnitaryGate};
use crate::solver::BipartiteState;

pub const DEFAULT_DIM_CAP: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceStrategy {
    #[default]
    Eager,
    Deferred,
}

#[derive(Debug, Clone)]
pub enum UnrollInput {
    Single(DensityMatrix),
    Bipartite(BipartiteState),
}

#[derive(Debug, Clone)]
pub struct UnrollSpec {
    pub n_copies: usize,
    pub input: UnrollInput,
    pub gate: UnitaryGate,
    pub chain_initial: DensityMatrix,
    /// Depolarizing rate applied to the chained mode after each interaction.
    /// Eager route only.
    pub p: f64,
    /// Largest Hilbert-space dimension the chosen route may materialize.
    pub dim_cap: usize,
    pub strategy: TraceStrategy,
}

impl UnrollSpec {
    /// Chain starting from the input itself (`ρ_in`, or `Tr_A|φ><φ|`).
    pub fn new(n_copies: usize, input: UnrollInput, gate: UnitaryGate) -> Result<Self> {
        let chain_initial = match &input {
            UnrollInput::Single(rho) => rho.clone(),
            UnrollInput::Bipartite(phi) => reduced_b(phi)?,
        };
        Ok(Self {
            n_copies,
            input,
            gate,
            chain_initial,
            p: 0.0,
            dim_cap: DEFAULT_DIM_CAP,
            strategy: TraceStrategy::Eager,
        })
    }

    pub fn with_chain_initial(mut self, rho: DensityMatrix) -> Self {
        self.chain_initial = rho;
        self
    }

    pub fn with_strategy(mut self, strategy: TraceStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    fn copy_dims(&self) -> Vec<usize> {
        match &self.input {
            UnrollInput::Single(rho) => vec![rho.dim()],
            UnrollInput::Bipartite(phi) => vec![phi.dims().0, phi.dims().1],
        }
    }

    fn ctc_slot_dim(&self) -> usize {
        *self.copy_dims().last().unwrap()
    }

    fn materialized_dim(&self) -> usize {
        let per_copy: usize = self.copy_dims().iter().product();
        let chain = self.chain_initial.dim();
        match self.strategy {
            TraceStrategy::Eager => per_copy.saturating_mul(chain),
            TraceStrategy::Deferred => (0..self.n_copies)
                .fold(chain, |acc, _| acc.saturating_mul(per_copy)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_copies == 0 {
            return Err(CtcError::InvalidParameter("n_copies must be positive".into()));
        }
        let d = self.ctc_slot_dim();
        if self.chain_initial.dim() != d || self.gate.dim() != d * d {
            return Err(CtcError::DimensionMismatch(format!(
                "chain state of dimension {} and gate of dimension {} for a {d}-dimensional CTC slot",
                self.chain_initial.dim(),
                self.gate.dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CtcError::InvalidParameter(format!("p {} outside [0, 1]", self.p)));
        }
        if self.p > 0.0 && self.strategy == TraceStrategy::Deferred {
            return Err(CtcError::InvalidParameter(
                "decoherence is only supported with eager tracing".into(),
            ));
        }
        let dim = self.materialized_dim();
        if dim > self.dim_cap {
            return Err(CtcError::DimensionCap { dim, cap: self.dim_cap });
        }
        Ok(())
    }
}

fn reduced_b(phi: &BipartiteState) -> Result<DensityMatrix> {
    let (da, db) = phi.dims();
    let m = partial_trace_multi(phi.density().matrix(), &[da, db], &[1])?;
    DensityMatrix::new(m.hermitian_part())
}

fn to_state(m: ComplexMatrix) -> Result<DensityMatrix> {
    DensityMatrix::new(m.hermitian_part())
}

/// Reorders a two-factor operator from `(X, Y)` to `(Y, X)`.
fn swap_factors(m: &ComplexMatrix, (dx, dy): (usize, usize)) -> ComplexMatrix {
    let idx = |i: usize| (i % dy) * dx + i / dy;
    let mut out = ComplexMatrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            out[(idx(r), idx(c))] = m[(r, c)];
        }
    }
    out
}

/// One link of the chain on an explicit `(copy..., chain)` register: the gate
/// meets the last copy factor and the chained mode, and only `keep` survives.
fn link(
    copy: &ComplexMatrix,
    copy_dims: &[usize],
    chain: &DensityMatrix,
    gate: &UnitaryGate,
    keep: &[usize],
) -> Result<ComplexMatrix> {
    let mut dims = copy_dims.to_vec();
    dims.push(chain.dim());
    let slot = copy_dims.len() - 1;
    let u = embed_two_site(gate.matrix(), &dims, slot, slot + 1)?;
    let joint = tensor_product(copy, chain.matrix()).conjugate_by(&u)?;
    partial_trace_multi(&joint, &dims, keep)
}

/// State of the chained mode after `n` interactions.
pub fn unroll_single(spec: &UnrollSpec) -> Result<DensityMatrix> {
    spec.validate()?;
    let rho_in = match &spec.input {
        UnrollInput::Single(rho) => rho,
        UnrollInput::Bipartite(_) => {
            return Err(CtcError::InvalidParameter("unroll_single needs a single-arm input".into()))
        }
    };
    match spec.strategy {
        TraceStrategy::Eager => {
            let mut chain = spec.chain_initial.clone();
            for _ in 0..spec.n_copies {
                let next = to_state(link(rho_in.matrix(), &[rho_in.dim()], &chain, &spec.gate, &[0])?)?;
                chain = depolarize(&next, spec.p)?;
            }
            Ok(chain)
        }
        TraceStrategy::Deferred => {
            let n = spec.n_copies;
            let d = rho_in.dim();
            let dims = vec![d; n + 1];
            let mut state = spec.chain_initial.matrix().clone();
            for _ in 0..n {
                state = tensor_product(rho_in.matrix(), &state);
            }
            // Factors: copies 0..n then the initial chain mode at index n.
            let mut carrier = n;
            for k in 0..n {
                state = conjugate_two_site(&state, spec.gate.matrix(), &dims, k, carrier)?;
                carrier = k;
            }
            to_state(partial_trace_multi(&state, &dims, &[carrier])?)
        }
    }
}

/// Joint state of the kept arm of the final copy and the observed output
/// mode, every other mode traced out.
pub fn unroll_bipartite(spec: &UnrollSpec) -> Result<DensityMatrix> {
    spec.validate()?;
    let phi = match &spec.input {
        UnrollInput::Bipartite(phi) => phi,
        UnrollInput::Single(_) => {
            return Err(CtcError::InvalidParameter("unroll_bipartite needs a bipartite input".into()))
        }
    };
    let (da, db) = phi.dims();
    let copy = phi.density().into_matrix();
    match spec.strategy {
        TraceStrategy::Eager => {
            let mut chain = spec.chain_initial.clone();
            for _ in 1..spec.n_copies {
                let next = to_state(link(&copy, &[da, db], &chain, &spec.gate, &[1])?)?;
                chain = depolarize(&next, spec.p)?;
            }
            to_state(link(&copy, &[da, db], &chain, &spec.gate, &[0, 2])?)
        }
        TraceStrategy::Deferred => {
            let n = spec.n_copies;
            let mut dims = Vec::with_capacity(2 * n + 1);
            let mut state = spec.chain_initial.matrix().clone();
            for _ in 0..n {
                state = tensor_product(&copy, &state);
                dims.extend([da, db]);
            }
            dims.push(spec.chain_initial.dim());
            // Factors: (A_0, B_0, ..., A_{n-1}, B_{n-1}, C).
            let mut carrier = 2 * n;
            for k in 0..n {
                let b = 2 * k + 1;
                state = conjugate_two_site(&state, spec.gate.matrix(), &dims, b, carrier)?;
                if k + 1 < n {
                    carrier = b;
                }
            }
            let kept_a = 2 * (n - 1);
            let out = partial_trace_multi(&state, &dims, &[kept_a, carrier])?;
            let out = if carrier < kept_a {
                swap_factors(&out, (dims[carrier], da))
            } else {
                out
            };
            to_state(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{trace_distance, Sampler, Seed};
    use crate::quantum::{standard_gate, standard_ket, standard_state, ControlArm, GateName};
    use crate::solver::consistency_map;

    fn gate(name: GateName) -> UnitaryGate {
        standard_gate(name, ControlArm::Lower)
    }

    #[test]
    fn one_copy_is_one_map() {
        let mut s = Sampler::new(Seed(12));
        let g = UnitaryGate::haar(&mut s, 4);
        let rho_in = DensityMatrix::new(s.density(2)).unwrap();
        let init = DensityMatrix::new(s.density(2)).unwrap();
        let spec = UnrollSpec::new(1, UnrollInput::Single(rho_in.clone()), g.clone())
            .unwrap()
            .with_chain_initial(init.clone());
        let expect = consistency_map(&rho_in, &g, &init).unwrap();
        assert!(unroll_single(&spec).unwrap().matrix().max_abs_diff(expect.matrix()) < 1e-14);
    }

    #[test]
    fn swap_chain_keeps_initial_mode() {
        // SWAP routes the chained mode straight into the lost slot and the
        // fresh copy into the chain, so the chain holds ρ_in after one step.
        let rho_in = standard_state("+").unwrap();
        for n in 1..6 {
            let spec = UnrollSpec::new(n, UnrollInput::Single(rho_in.clone()), gate(GateName::Swap))
                .unwrap()
                .with_chain_initial(standard_state("1").unwrap());
            let got = unroll_single(&spec).unwrap();
            assert!(got.matrix().max_abs_diff(standard_state("1").unwrap().matrix()) < 1e-14);
        }
    }

    #[test]
    fn eager_and_deferred_agree() {
        let mut s = Sampler::new(Seed(99));
        for n in 1..=4 {
            let g = UnitaryGate::haar(&mut s, 4);
            let rho_in = DensityMatrix::new(s.density(2)).unwrap();
            let init = DensityMatrix::new(s.density(2)).unwrap();
            let spec = UnrollSpec::new(n, UnrollInput::Single(rho_in), g.clone())
                .unwrap()
                .with_chain_initial(init);
            let eager = unroll_single(&spec).unwrap();
            let deferred = unroll_single(&spec.clone().with_strategy(TraceStrategy::Deferred)).unwrap();
            assert!(eager.matrix().max_abs_diff(deferred.matrix()) < 1e-12, "n = {n}");

            let phi = BipartiteState::new(s.ket(4), (2, 2)).unwrap();
            let spec = UnrollSpec::new(n, UnrollInput::Bipartite(phi), g).unwrap();
            let eager = unroll_bipartite(&spec).unwrap();
            let deferred = unroll_bipartite(&spec.clone().with_strategy(TraceStrategy::Deferred)).unwrap();
            assert!(eager.matrix().max_abs_diff(deferred.matrix()) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn bipartite_examples() {
        let bell = BipartiteState::new(standard_ket("Φ+").unwrap(), (2, 2)).unwrap();
        for n in [1, 3, 8] {
            let spec = UnrollSpec::new(n, UnrollInput::Bipartite(bell.clone()), gate(GateName::Swap)).unwrap();
            let got = unroll_bipartite(&spec).unwrap();
            assert!(got.matrix().max_abs_diff(bell.density().matrix()) < 1e-13);
        }
        let spec = UnrollSpec::new(8, UnrollInput::Bipartite(bell), gate(GateName::I)).unwrap();
        let got = unroll_bipartite(&spec).unwrap();
        assert!(got.matrix().max_abs_diff(DensityMatrix::maximally_mixed(4).matrix()) < 1e-12);

        let tagged = BipartiteState::new(standard_ket("1-").unwrap(), (2, 2)).unwrap();
        let spec = UnrollSpec::new(10, UnrollInput::Bipartite(tagged), gate(GateName::Ch)).unwrap();
        let got = unroll_bipartite(&spec).unwrap();
        let dist = trace_distance(&got, &standard_state("11").unwrap()).unwrap();
        assert!(dist < 2.0 * 0.5f64.powi(10), "distance {dist}");
    }

    #[test]
    fn dimension_cap_enforced() {
        let rho_in = standard_state("0").unwrap();
        let spec = UnrollSpec::new(12, UnrollInput::Single(rho_in), gate(GateName::Ch))
            .unwrap()
            .with_strategy(TraceStrategy::Deferred);
        assert!(matches!(unroll_single(&spec), Err(CtcError::DimensionCap { dim: 8192, cap: 4096 })));
        let eager = spec.with_strategy(TraceStrategy::Eager);
        assert!(unroll_single(&eager).is_ok());
    }

    #[test]
    fn input_kind_checked() {
        let spec = UnrollSpec::new(2, UnrollInput::Single(standard_state("0").unwrap()), gate(GateName::I)).unwrap();
        assert!(unroll_bipartite(&spec).is_err());
        assert!(UnrollSpec::new(0, UnrollInput::Single(standard_state("0").unwrap()), gate(GateName::I))
            .and_then(|s| unroll_single(&s))
            .is_err());
    }
}
