//! The CTC consistency map and its fixed-point solver.
//!
//! The gate acts on (input arm, CTC arm). The CTC-arm state `ρ` must satisfy
//! `ρ = Tr_2[U (ρ_in ⊗ ρ) U†]`, and the observed output is
//! `Tr_1[U (ρ_in ⊗ ρ) U†]`. The solver finds `ρ` by iterating the map, which
//! is the same computation as running the unrolled chain of interactions in
//! [`crate::circuit`].

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CtcError, Result};
use crate::numerics::{
    embed_two_site, partial_trace, partial_trace_multi, tensor_product, trace_distance, von_neumann_entropy,
    ComplexMatrix, Keep, Sampler, Seed, C64,
};
use crate::quantum::{depolarize, DensityMatrix, UnitaryGate};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;
pub const DEFAULT_DAMPING: f64 = 0.5;
pub const MIN_TOL: f64 = 1e-14;
/// Multiplicity clusters are separated by more than this multiple of `tol`.
pub const CLUSTER_FACTOR: f64 = 100.0;

/// Starting point `ρ_o` of the iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitialState {
    /// The input state itself, as when both arms start in `ρ_in`.
    #[default]
    Input,
    MaximallyMixed,
    State(DensityMatrix),
}

impl InitialState {
    fn resolve(&self, rho_in: &DensityMatrix, ctc_dim: usize) -> Result<DensityMatrix> {
        let rho = match self {
            InitialState::Input => rho_in.clone(),
            InitialState::MaximallyMixed => DensityMatrix::maximally_mixed(ctc_dim),
            InitialState::State(s) => s.clone(),
        };
        if rho.dim() != ctc_dim {
            return Err(CtcError::DimensionMismatch(format!(
                "initial state has dimension {}, CTC arm has {ctc_dim}",
                rho.dim()
            )));
        }
        Ok(rho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Depolarizing rate applied once per iteration.
    pub p: f64,
    /// Weight `α` of the new map image in `ρ ← (1-α) ρ + α F(ρ)`.
    pub damping: f64,
    pub initial: InitialState,
    /// Keep every iterate in the convergence trace.
    pub keep_iterates: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            p: 0.0,
            damping: DEFAULT_DAMPING,
            initial: InitialState::Input,
            keep_iterates: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= MIN_TOL) || !self.tol.is_finite() {
            return Err(CtcError::InvalidParameter(format!("tol {} must be finite and >= {MIN_TOL:e}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(CtcError::InvalidParameter("max_iter must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(CtcError::InvalidParameter(format!("p {} outside [0, 1]", self.p)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(CtcError::InvalidParameter(format!("damping {} outside (0, 1]", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CtcProblem {
    pub rho_in: DensityMatrix,
    pub gate: UnitaryGate,
    pub p: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub initial: DensityMatrix,
    pub keep_iterates: bool,
}

impl CtcProblem {
    /// Problem with default options: `p = 0`, damping 0.5, start at `ρ_in`.
    pub fn new(rho_in: DensityMatrix, gate: UnitaryGate) -> Result<Self> {
        Self::with_options(rho_in, gate, &SolverOptions::default())
    }

    pub fn with_options(rho_in: DensityMatrix, gate: UnitaryGate, opts: &SolverOptions) -> Result<Self> {
        opts.validate()?;
        let ctc_dim = ctc_dim(&rho_in, &gate)?;
        let initial = opts.initial.resolve(&rho_in, ctc_dim)?;
        Ok(Self {
            rho_in,
            gate,
            p: opts.p,
            tol: opts.tol,
            max_iter: opts.max_iter,
            damping: opts.damping,
            initial,
            keep_iterates: opts.keep_iterates,
        })
    }

    pub fn validate(&self) -> Result<()> {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            p: self.p,
            damping: self.damping,
            initial: InitialState::Input,
            keep_iterates: false,
        }
        .validate()?;
        let ctc = ctc_dim(&self.rho_in, &self.gate)?;
        if self.initial.dim() != ctc {
            return Err(CtcError::DimensionMismatch(format!(
                "initial state has dimension {}, CTC arm has {ctc}",
                self.initial.dim()
            )));
        }
        Ok(())
    }

    /// One application of the (decohered) consistency map.
    pub fn map(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        depolarize(&consistency_map(&self.rho_in, &self.gate, rho)?, self.p)
    }

    /// One damped solver step.
    pub fn step(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        damped(rho, &self.map(rho)?, self.damping)
    }
}

fn ctc_dim(rho_in: &DensityMatrix, gate: &UnitaryGate) -> Result<usize> {
    let d = rho_in.dim();
    if gate.dim() != d * d {
        return Err(CtcError::DimensionMismatch(format!(
            "gate of dimension {} on an input of dimension {d} (CTC arm must match the input arm)",
            gate.dim()
        )));
    }
    Ok(d)
}

fn damped(old: &DensityMatrix, image: &DensityMatrix, alpha: f64) -> Result<DensityMatrix> {
    if alpha == 1.0 {
        return DensityMatrix::new(image.matrix().hermitian_part());
    }
    let m = old
        .matrix()
        .scale_real(1.0 - alpha)
        .try_add(&image.matrix().scale_real(alpha))?;
    DensityMatrix::new(m.hermitian_part())
}

fn joint_after_gate(rho_in: &DensityMatrix, gate: &UnitaryGate, rho: &DensityMatrix) -> Result<ComplexMatrix> {
    if gate.dim() != rho_in.dim() * rho.dim() {
        return Err(CtcError::DimensionMismatch(format!(
            "gate of dimension {} on arms of dimension {} and {}",
            gate.dim(),
            rho_in.dim(),
            rho.dim()
        )));
    }
    tensor_product(rho_in.matrix(), rho.matrix()).conjugate_by(gate.matrix())
}

/// `Tr_2[U (ρ_in ⊗ ρ) U†]`: the state carried back along the CTC.
pub fn consistency_map(rho_in: &DensityMatrix, gate: &UnitaryGate, rho: &DensityMatrix) -> Result<DensityMatrix> {
    let joint = joint_after_gate(rho_in, gate, rho)?;
    let reduced = partial_trace(&joint, (rho_in.dim(), rho.dim()), Keep::A)?;
    DensityMatrix::new(reduced.hermitian_part())
}

/// `Tr_1[U (ρ_in ⊗ ρ*) U†]`: the state leaving the interaction region.
pub fn output_state(rho_in: &DensityMatrix, gate: &UnitaryGate, rho_star: &DensityMatrix) -> Result<DensityMatrix> {
    let joint = joint_after_gate(rho_in, gate, rho_star)?;
    let reduced = partial_trace(&joint, (rho_in.dim(), rho_star.dim()), Keep::B)?;
    DensityMatrix::new(reduced.hermitian_part())
}

/// Trace distance between `ρ` and its image under the undecohered map.
pub fn consistency_residual(rho_in: &DensityMatrix, gate: &UnitaryGate, rho: &DensityMatrix) -> Result<f64> {
    trace_distance(rho, &consistency_map(rho_in, gate, rho)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub successive_distance: f64,
    pub residual: f64,
    pub entropy_bits: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub records: Vec<TraceRecord>,
    /// `iterates[k]` is `ρ_k` (index 0 is the initial state); empty unless
    /// requested through [`SolverOptions::keep_iterates`].
    pub iterates: Vec<DensityMatrix>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub rho_star: DensityMatrix,
    pub rho_out: DensityMatrix,
    /// Trace distance between `ρ*` and its image under the solved map.
    pub residual: f64,
    pub iterations: usize,
    pub entropy_bits: f64,
    pub trace: ConvergenceTrace,
    pub converged: bool,
}

/// Iterates `ρ ← (1-α) ρ + α D_p(Tr_2[U(ρ_in ⊗ ρ)U†])` until both the step
/// size and the consistency residual fall below `tol`.
pub fn solve_fixed_point(problem: &CtcProblem) -> Result<FixedPointResult> {
    problem.validate()?;
    let mut trace = ConvergenceTrace::default();
    let mut rho = problem.initial.clone();
    let mut image = problem.map(&rho)?;
    if problem.keep_iterates {
        trace.iterates.push(rho.clone());
    }
    let mut converged = false;
    let mut residual = trace_distance(&rho, &image)?;

    for step in 1..=problem.max_iter {
        let next = damped(&rho, &image, problem.damping)?;
        let next_image = problem.map(&next)?;
        let successive = trace_distance(&next, &rho)?;
        residual = trace_distance(&next, &next_image)?;
        let entropy = von_neumann_entropy(&next)?;
        trace.records.push(TraceRecord {
            step,
            successive_distance: successive,
            residual,
            entropy_bits: entropy,
        });
        if problem.keep_iterates {
            trace.iterates.push(next.clone());
        }
        rho = next;
        image = next_image;
        if successive < problem.tol && residual < problem.tol {
            converged = true;
            break;
        }
    }

    let iterations = trace.len();
    if converged {
        debug!("converged after {iterations} iterations (residual {residual:e})");
    } else {
        warn!("no convergence after {iterations} iterations (residual {residual:e})");
    }
    let rho_out = output_state(&problem.rho_in, &problem.gate, &rho)?;
    let entropy_bits = von_neumann_entropy(&rho)?;
    Ok(FixedPointResult {
        rho_star: rho,
        rho_out,
        residual,
        iterations,
        entropy_bits,
        trace,
        converged,
    })
}

/// Exactly `n` solver steps from the problem's initial state, no stopping rule.
pub fn iterate(problem: &CtcProblem, n: usize) -> Result<DensityMatrix> {
    problem.validate()?;
    let mut rho = problem.initial.clone();
    for _ in 0..n {
        rho = problem.step(&rho)?;
    }
    Ok(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplicity {
    Unique,
    Multiple,
}

#[derive(Debug, Clone)]
pub struct MultiplicityReport {
    pub classification: Multiplicity,
    pub representatives: Vec<DensityMatrix>,
    pub samples_used: usize,
    pub max_pairwise_distance: f64,
    /// Starting points whose undecohered iteration hit `max_iter`.
    pub non_converged: usize,
}

/// Solves the undecohered problem from `n_samples` random initial states plus
/// `I/d` and `ρ_in`, then clusters the fixed points by trace distance.
pub fn scan_multiplicity(
    rho_in: &DensityMatrix,
    gate: &UnitaryGate,
    n_samples: usize,
    seed: Seed,
) -> Result<MultiplicityReport> {
    scan_multiplicity_with(rho_in, gate, n_samples, seed, &SolverOptions::default())
}

pub fn scan_multiplicity_with(
    rho_in: &DensityMatrix,
    gate: &UnitaryGate,
    n_samples: usize,
    seed: Seed,
    opts: &SolverOptions,
) -> Result<MultiplicityReport> {
    if n_samples < 2 {
        return Err(CtcError::InvalidParameter(format!("n_samples must be at least 2, got {n_samples}")));
    }
    let d = ctc_dim(rho_in, gate)?;
    let mut sampler = Sampler::new(seed);
    let mut initials = Vec::with_capacity(n_samples + 2);
    for k in 0..n_samples {
        // Alternate pure and mixed starts to probe both the boundary and the interior.
        let m = if k % 2 == 0 { sampler.pure(d) } else { sampler.density(d) };
        initials.push(DensityMatrix::new(m)?);
    }
    initials.push(DensityMatrix::maximally_mixed(d));
    initials.push(rho_in.clone());

    let base = SolverOptions {
        p: 0.0,
        keep_iterates: false,
        ..opts.clone()
    };
    let results: Vec<FixedPointResult> = initials
        .into_par_iter()
        .map(|init| {
            let o = SolverOptions {
                initial: InitialState::State(init),
                ..base.clone()
            };
            solve_fixed_point(&CtcProblem::with_options(rho_in.clone(), gate.clone(), &o)?)
        })
        .collect::<Result<_>>()?;

    let threshold = CLUSTER_FACTOR * base.tol;
    let non_converged = results.iter().filter(|r| !r.converged).count();
    let mut representatives: Vec<DensityMatrix> = Vec::new();
    let mut max_pairwise: f64 = 0.0;
    for (i, r) in results.iter().enumerate() {
        for other in &results[..i] {
            max_pairwise = max_pairwise.max(trace_distance(&r.rho_star, &other.rho_star)?);
        }
        let mut joined = false;
        for rep in &representatives {
            if trace_distance(&r.rho_star, rep)? <= threshold {
                joined = true;
                break;
            }
        }
        if !joined {
            representatives.push(r.rho_star.clone());
        }
    }
    let classification = if representatives.len() == 1 {
        Multiplicity::Unique
    } else {
        Multiplicity::Multiple
    };
    Ok(MultiplicityReport {
        classification,
        representatives,
        samples_used: results.len(),
        max_pairwise_distance: max_pairwise,
        non_converged,
    })
}

/// A normalized pure state on arms `(A, B)`; `A` is kept, `B` meets the CTC.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    vector: Vec<C64>,
    dims: (usize, usize),
}

pub const NORM_TOL: f64 = 1e-12;

impl BipartiteState {
    pub fn new(vector: Vec<C64>, dims: (usize, usize)) -> Result<Self> {
        if dims.0 == 0 || dims.1 == 0 || vector.len() != dims.0 * dims.1 {
            return Err(CtcError::DimensionMismatch(format!(
                "state of length {} for arms {dims:?}",
                vector.len()
            )));
        }
        let norm: f64 = vector.iter().map(|z| z.norm_sqr()).sum();
        if (norm.sqrt() - 1.0).abs() > NORM_TOL {
            return Err(CtcError::InvalidState(format!("branch state has norm {}", norm.sqrt())));
        }
        Ok(Self { vector, dims })
    }

    /// Single-arm state: the kept arm is trivial.
    pub fn single(vector: Vec<C64>) -> Result<Self> {
        let d = vector.len();
        Self::new(vector, (1, d))
    }

    pub fn product(a: &[C64], b: &[C64]) -> Result<Self> {
        Self::new(crate::numerics::kron_vec(a, b), (a.len(), b.len()))
    }

    pub fn vector(&self) -> &[C64] {
        &self.vector
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix::new(ComplexMatrix::outer(&self.vector)).expect("normalized vector gives a valid state")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub weight: f64,
    pub state: BipartiteState,
}

pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    branches: Vec<Branch>,
}

impl EnsembleSpec {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| CtcError::InvalidParameter("ensemble has no branches".into()))?;
        let dims = first.state.dims();
        for b in &branches {
            if !(b.weight > 0.0) {
                return Err(CtcError::InvalidParameter(format!("branch weight {} is not positive", b.weight)));
            }
            if b.state.dims() != dims {
                return Err(CtcError::DimensionMismatch(format!(
                    "branch arms {:?} differ from {dims:?}",
                    b.state.dims()
                )));
            }
        }
        let total: f64 = branches.iter().map(|b| b.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(CtcError::InvalidParameter(format!("branch weights sum to {total}")));
        }
        Ok(Self { branches })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn dims(&self) -> (usize, usize) {
        self.branches[0].state.dims()
    }

    /// `Σ P_k |φ_k><φ_k|`: the ensemble averaged before it meets the CTC.
    pub fn mixed_input(&self) -> Result<DensityMatrix> {
        let parts: Vec<(f64, DensityMatrix)> = self.branches.iter().map(|b| (b.weight, b.state.density())).collect();
        let refs: Vec<(f64, &DensityMatrix)> = parts.iter().map(|(w, r)| (*w, r)).collect();
        DensityMatrix::mixture(&refs)
    }
}

#[derive(Debug, Clone)]
pub struct BranchEvolution {
    /// Joint state of (kept arm A, CTC output).
    pub output: DensityMatrix,
    pub fixed_point: FixedPointResult,
}

/// Evolves a possibly mixed `ρ_AB` whose `B` arm enters the CTC: solves the
/// fixed point for `ρ_B = Tr_A ρ_AB` and returns
/// `Tr_B[U_BC (ρ_AB ⊗ ρ*_C) U_BC†]` on `(A, C)`.
pub fn evolve_mixed_input(
    rho_ab: &DensityMatrix,
    dims: (usize, usize),
    gate: &UnitaryGate,
    opts: &SolverOptions,
) -> Result<BranchEvolution> {
    let (da, db) = dims;
    if rho_ab.dim() != da * db {
        return Err(CtcError::DimensionMismatch(format!(
            "state of dimension {} for arms {dims:?}",
            rho_ab.dim()
        )));
    }
    if gate.dim() != db * db {
        return Err(CtcError::DimensionMismatch(format!(
            "gate of dimension {} but CTC-bound arm has dimension {db}",
            gate.dim()
        )));
    }
    let rho_b = DensityMatrix::new(partial_trace(rho_ab.matrix(), dims, Keep::B)?.hermitian_part())?;
    let fixed_point = solve_fixed_point(&CtcProblem::with_options(rho_b, gate.clone(), opts)?)?;
    let output = observed_output(rho_ab, dims, gate, &fixed_point.rho_star)?;
    Ok(BranchEvolution { output, fixed_point })
}

/// `Tr_B[U_BC (ρ_AB ⊗ ρ_C) U_BC†]` for a given CTC-arm state.
pub fn observed_output(
    rho_ab: &DensityMatrix,
    (da, db): (usize, usize),
    gate: &UnitaryGate,
    rho_c: &DensityMatrix,
) -> Result<DensityMatrix> {
    let factors = [da, db, rho_c.dim()];
    let u = embed_two_site(gate.matrix(), &factors, 1, 2)?;
    let joint = tensor_product(rho_ab.matrix(), rho_c.matrix()).conjugate_by(&u)?;
    let kept = partial_trace_multi(&joint, &factors, &[0, 2])?;
    DensityMatrix::new(kept.hermitian_part())
}

pub fn evolve_bipartite_branch(
    phi: &BipartiteState,
    gate: &UnitaryGate,
    opts: &SolverOptions,
) -> Result<BranchEvolution> {
    evolve_mixed_input(&phi.density(), phi.dims(), gate, opts)
}

#[derive(Debug, Clone)]
pub struct EnsembleEvolution {
    pub output: DensityMatrix,
    pub branches: Vec<BranchEvolution>,
}

impl EnsembleEvolution {
    pub fn converged(&self) -> bool {
        self.branches.iter().all(|b| b.fixed_point.converged)
    }
}

/// Evolves each pure branch on its own and mixes the outputs with the branch
/// weights.
pub fn evolve_ensemble(ens: &EnsembleSpec, gate: &UnitaryGate, opts: &SolverOptions) -> Result<EnsembleEvolution> {
    let branches: Vec<BranchEvolution> = ens
        .branches()
        .par_iter()
        .map(|b| evolve_bipartite_branch(&b.state, gate, opts))
        .collect::<Result<_>>()?;
    let parts: Vec<(f64, &DensityMatrix)> = ens
        .branches()
        .iter()
        .zip(&branches)
        .map(|(b, e)| (b.weight, &e.output))
        .collect();
    let output = DensityMatrix::mixture(&parts)?;
    Ok(EnsembleEvolution { output, branches })
}

/// Comparison semantics, not the default: mixes the ensemble *before* the
/// CTC and solves once for the averaged input.
pub fn evolve_ensemble_mixing_inputs(
    ens: &EnsembleSpec,
    gate: &UnitaryGate,
    opts: &SolverOptions,
) -> Result<BranchEvolution> {
    evolve_mixed_input(&ens.mixed_input()?, ens.dims(), gate, opts)
}
