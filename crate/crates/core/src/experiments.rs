//! Ready-made experiments: state discrimination through the CTC, the
//! classical/entangled correlation suite, parameter sweeps and the
//! maximum-entropy comparison for gates with several fixed points.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{CtcError, Result};
use crate::numerics::{
    mutual_information, partial_trace, trace_distance, von_neumann_entropy, ComplexMatrix, Keep, Seed, C64, ONE,
    ZERO,
};
use crate::quantum::{standard_ket, DensityMatrix, UnitaryGate};
use crate::solver::{
    evolve_ensemble, evolve_ensemble_mixing_inputs, iterate, output_state, scan_multiplicity_with,
    solve_fixed_point, BipartiteState, Branch, BranchEvolution, ConvergenceTrace, CtcProblem, EnsembleEvolution,
    EnsembleSpec, FixedPointResult, InitialState, Multiplicity, MultiplicityReport, SolverOptions,
};

/// Projective measurement on the output arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeasurementBasis {
    #[default]
    Computational,
    /// `{|+>, |->}` on a qubit.
    Diagonal,
}

impl MeasurementBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementBasis::Computational => "computational",
            MeasurementBasis::Diagonal => "diagonal",
        }
    }

    pub fn projectors(self, dim: usize) -> Result<Vec<ComplexMatrix>> {
        match self {
            MeasurementBasis::Computational => Ok((0..dim)
                .map(|i| {
                    let mut p = ComplexMatrix::zeros(dim, dim);
                    p[(i, i)] = ONE;
                    p
                })
                .collect()),
            MeasurementBasis::Diagonal if dim == 2 => Ok(["+", "-"]
                .iter()
                .map(|s| ComplexMatrix::outer(&standard_ket(s).expect("fixed ket")))
                .collect()),
            MeasurementBasis::Diagonal => Err(CtcError::InvalidParameter(format!(
                "diagonal basis is defined for qubits, output arm has dimension {dim}"
            ))),
        }
    }
}

impl std::str::FromStr for MeasurementBasis {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "computational" => Ok(Self::Computational),
            "diagonal" => Ok(Self::Diagonal),
            _ => Err(CtcError::InvalidParameter(format!("unknown measurement basis `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminationSpec {
    /// `(prior, pure state)` pairs.
    pub candidates: Vec<(f64, Vec<C64>)>,
    pub gate: UnitaryGate,
    pub measurement: MeasurementBasis,
    pub options: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    /// Observed joint output on (kept arm, CTC output).
    pub output_state: DensityMatrix,
    /// CTC-arm state for single-problem runs.
    pub ctc_state: Option<DensityMatrix>,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub entropy_bits: f64,
    pub metrics: BTreeMap<String, f64>,
    pub trace: Option<ConvergenceTrace>,
}

impl ExperimentReport {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    fn from_fixed_point(name: &str, output: DensityMatrix, fp: &FixedPointResult) -> Self {
        Self {
            name: name.to_string(),
            output_state: output,
            ctc_state: Some(fp.rho_star.clone()),
            converged: fp.converged,
            iterations: fp.iterations,
            residual: fp.residual,
            entropy_bits: fp.entropy_bits,
            metrics: BTreeMap::new(),
            trace: Some(fp.trace.clone()),
        }
    }

    /// Summary of an ensemble run: worst-case convergence figures across
    /// branches, weight-averaged CTC entropy, and the trace of the branch
    /// that needed the most iterations.
    pub fn from_ensemble(name: &str, ens: &EnsembleSpec, evo: &EnsembleEvolution) -> Self {
        let slowest = evo
            .branches
            .iter()
            .max_by_key(|b| b.fixed_point.iterations)
            .expect("ensembles are nonempty");
        let ctc_state = (evo.branches.len() == 1).then(|| slowest.fixed_point.rho_star.clone());
        Self {
            name: name.to_string(),
            output_state: evo.output.clone(),
            ctc_state,
            converged: evo.converged(),
            iterations: evo.branches.iter().map(|b| b.fixed_point.iterations).max().unwrap_or(0),
            residual: evo.branches.iter().map(|b| b.fixed_point.residual).fold(0.0, f64::max),
            entropy_bits: ens
                .branches()
                .iter()
                .zip(&evo.branches)
                .map(|(b, e)| b.weight * e.fixed_point.entropy_bits)
                .sum(),
            metrics: BTreeMap::new(),
            trace: Some(slowest.fixed_point.trace.clone()),
        }
    }

    fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }
}

fn basis_ket(dim: usize, k: usize) -> Vec<C64> {
    let mut v = vec![ZERO; dim];
    v[k] = ONE;
    v
}

/// Joint outcome table `P(k, j) = Tr[(|k><k| ⊗ Π_j) ρ]` for a register `A`
/// measured in its computational basis and the output measured in `basis`.
pub fn joint_outcomes(
    joint: &DensityMatrix,
    (da, db): (usize, usize),
    basis: MeasurementBasis,
) -> Result<Vec<Vec<f64>>> {
    if joint.dim() != da * db {
        return Err(CtcError::DimensionMismatch(format!(
            "joint state of dimension {} for arms ({da}, {db})",
            joint.dim()
        )));
    }
    let projectors = basis.projectors(db)?;
    let m = joint.matrix();
    Ok((0..da)
        .map(|k| {
            let block = ComplexMatrix::from_fn(db, db, |r, c| m[(k * db + r, k * db + c)]);
            projectors
                .iter()
                .map(|p| (p * &block).trace().re.clamp(0.0, 1.0))
                .collect()
        })
        .collect())
}

/// Maximum-likelihood success probability `Σ_j max_k P(k, j)` and the
/// outcome-to-candidate assignment that achieves it.
pub fn ml_success(table: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let outcomes = table.first().map_or(0, |r| r.len());
    let mut total = 0.0;
    let mut assignment = Vec::with_capacity(outcomes);
    for j in 0..outcomes {
        let (best_k, best) = table
            .iter()
            .enumerate()
            .map(|(k, row)| (k, row[j]))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        total += best;
        assignment.push(best_k);
    }
    (total.clamp(0.0, 1.0), assignment)
}

fn discrimination_metrics(
    mut report: ExperimentReport,
    table: &[Vec<f64>],
    dims: (usize, usize),
) -> Result<ExperimentReport> {
    let (success, assignment) = ml_success(table);
    let info = mutual_information(&report.output_state, dims)?.max(0.0);
    report = report
        .with_metric("success_probability", success)
        .with_metric("mutual_information_bits", info);
    for (j, k) in assignment.iter().enumerate() {
        report = report.with_metric(&format!("assignment_{j}"), *k as f64);
    }
    Ok(report)
}

/// Tags each candidate with an orthogonal register state `|k>_v`, evolves the
/// tagged ensemble branch by branch, and measures the output arm.
pub fn run_discrimination(spec: &DiscriminationSpec) -> Result<ExperimentReport> {
    let k = spec.candidates.len();
    if k == 0 {
        return Err(CtcError::InvalidParameter("no candidates to discriminate".into()));
    }
    let branches = spec
        .candidates
        .iter()
        .enumerate()
        .map(|(i, (w, psi))| {
            Ok(Branch {
                weight: *w,
                state: BipartiteState::product(&basis_ket(k, i), psi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ens = EnsembleSpec::new(branches)?;
    let evo = evolve_ensemble(&ens, &spec.gate, &spec.options)?;
    discriminate_tagged(&ens, &evo, spec.measurement)
}

/// Discrimination when the kept arm already is the tag register.
pub fn discriminate_tagged(
    ens: &EnsembleSpec,
    evo: &EnsembleEvolution,
    basis: MeasurementBasis,
) -> Result<ExperimentReport> {
    let dims = ens.dims();
    let table = joint_outcomes(&evo.output, dims, basis)?;
    let report = ExperimentReport::from_ensemble("discrimination", ens, evo);
    discrimination_metrics(report, &table, dims)
}

/// How a classically mixed input meets the CTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixingSemantics {
    /// Evolve each pure branch, then mix the outputs.
    #[default]
    PerBranch,
    /// Comparison mode only: mix first, solve once for the averaged input.
    MixInputs,
}

impl MixingSemantics {
    pub fn as_str(self) -> &'static str {
        match self {
            MixingSemantics::PerBranch => "per-branch",
            MixingSemantics::MixInputs => "mix-inputs",
        }
    }
}

impl std::str::FromStr for MixingSemantics {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-branch" => Ok(Self::PerBranch),
            "mix-inputs" => Ok(Self::MixInputs),
            _ => Err(CtcError::InvalidParameter(format!("unknown mixing semantics `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    /// Half `|00>`, half `|11>`.
    Classical,
    /// One Bell pair `(|00> + |11>)/√2`.
    Entangled,
}

pub fn correlation_ensemble(kind: CorrelationKind) -> EnsembleSpec {
    let branch = |w: f64, s: &str| Branch {
        weight: w,
        state: BipartiteState::new(standard_ket(s).expect("fixed ket"), (2, 2)).expect("normalized"),
    };
    let branches = match kind {
        CorrelationKind::Classical => vec![branch(0.5, "00"), branch(0.5, "11")],
        CorrelationKind::Entangled => vec![branch(1.0, "Φ+")],
    };
    EnsembleSpec::new(branches).expect("valid preset")
}

fn correlation_metrics(mut report: ExperimentReport, dims: (usize, usize)) -> Result<ExperimentReport> {
    let rho = &report.output_state;
    let a = DensityMatrix::new(partial_trace(rho.matrix(), dims, Keep::A)?.hermitian_part())?;
    let b = DensityMatrix::new(partial_trace(rho.matrix(), dims, Keep::B)?.hermitian_part())?;
    let (sa, sb, sab) = (von_neumann_entropy(&a)?, von_neumann_entropy(&b)?, von_neumann_entropy(rho)?);
    report = report
        .with_metric("entropy_a_bits", sa)
        .with_metric("entropy_out_bits", sb)
        .with_metric("entropy_joint_bits", sab)
        .with_metric("mutual_information_bits", (sa + sb - sab).max(0.0));
    Ok(report)
}

/// Mutual information `I(A : out)` after evolving any ensemble under the
/// chosen mixing semantics.
pub fn run_correlation(
    name: &str,
    ens: &EnsembleSpec,
    gate: &UnitaryGate,
    opts: &SolverOptions,
    semantics: MixingSemantics,
) -> Result<ExperimentReport> {
    let report = match semantics {
        MixingSemantics::PerBranch => {
            let evo = evolve_ensemble(ens, gate, opts)?;
            ExperimentReport::from_ensemble(name, ens, &evo)
        }
        MixingSemantics::MixInputs => {
            let BranchEvolution { output, fixed_point } = evolve_ensemble_mixing_inputs(ens, gate, opts)?;
            ExperimentReport::from_fixed_point(name, output, &fixed_point).with_metric("mix_inputs", 1.0)
        }
    };
    correlation_metrics(report, ens.dims())
}

pub fn run_correlation_suite(
    kind: CorrelationKind,
    gate: &UnitaryGate,
    opts: &SolverOptions,
    semantics: MixingSemantics,
) -> Result<ExperimentReport> {
    let name = match kind {
        CorrelationKind::Classical => "classical_correlation",
        CorrelationKind::Entangled => "entangled_correlation",
    };
    run_correlation(name, &correlation_ensemble(kind), gate, opts, semantics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Depolarizing rate; each point is solved to convergence.
    P,
    /// Iteration count; each point runs exactly `n` steps without a stopping rule.
    N,
    /// Damping weight; each point is solved to convergence.
    Damping,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::P => "p",
            SweepAxis::N => "n",
            SweepAxis::Damping => "damping",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Self::P),
            "n" => Ok(Self::N),
            "damping" => Ok(Self::Damping),
            _ => Err(CtcError::InvalidParameter(format!("unknown sweep axis `{s}`"))),
        }
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: Result<ExperimentReport>,
}

fn single_arm_metrics(mut report: ExperimentReport, rho: &DensityMatrix) -> Result<ExperimentReport> {
    let d = rho.dim();
    let mixed = DensityMatrix::maximally_mixed(d);
    report = report
        .with_metric("distance_to_maximally_mixed", trace_distance(rho, &mixed)?)
        .with_metric("population_0", rho.population(0))
        .with_metric("coherence_01", rho.matrix()[(0, 1)].norm());
    Ok(report)
}

fn sweep_point(axis: SweepAxis, value: f64, rho_in: &DensityMatrix, gate: &UnitaryGate, base: &SolverOptions) -> Result<ExperimentReport> {
    let name = format!("sweep_{}={value}", axis.as_str());
    match axis {
        SweepAxis::P | SweepAxis::Damping => {
            let opts = match axis {
                SweepAxis::P => SolverOptions { p: value, ..base.clone() },
                _ => SolverOptions { damping: value, ..base.clone() },
            };
            let problem = CtcProblem::with_options(rho_in.clone(), gate.clone(), &opts)?;
            let fp = solve_fixed_point(&problem)?;
            let report = ExperimentReport::from_fixed_point(&name, fp.rho_out.clone(), &fp);
            single_arm_metrics(report, &fp.rho_star)
        }
        SweepAxis::N => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(CtcError::InvalidParameter(format!("iteration count {value} is not a non-negative integer")));
            }
            let n = value as usize;
            let problem = CtcProblem::with_options(rho_in.clone(), gate.clone(), base)?;
            let rho = iterate(&problem, n)?;
            let image = problem.map(&rho)?;
            let residual = trace_distance(&rho, &image)?;
            let d0 = trace_distance(&problem.initial, &DensityMatrix::maximally_mixed(rho.dim()))?;
            let report = ExperimentReport {
                name,
                output_state: output_state(&problem.rho_in, &problem.gate, &rho)?,
                ctc_state: Some(rho.clone()),
                converged: residual < problem.tol,
                iterations: n,
                residual,
                entropy_bits: von_neumann_entropy(&rho)?,
                metrics: BTreeMap::new(),
                trace: None,
            }
            .with_metric("depolarizing_envelope", (1.0 - problem.p).powi(n as i32) * d0);
            single_arm_metrics(report, &rho)
        }
    }
}

/// Independent solves over a grid. Failed points are kept in the output with
/// their error; the sweep itself only fails on an empty grid.
pub fn run_sweep(
    axis: SweepAxis,
    grid: &[f64],
    rho_in: &DensityMatrix,
    gate: &UnitaryGate,
    base: &SolverOptions,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(CtcError::InvalidParameter("sweep grid is empty".into()));
    }
    Ok(grid
        .par_iter()
        .map(|&value| SweepPoint {
            value,
            outcome: sweep_point(axis, value, rho_in, gate, base),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct MaxEntropyReport {
    pub multiplicity: MultiplicityReport,
    pub decohered: FixedPointResult,
    pub representative_entropies: Vec<f64>,
}

impl MaxEntropyReport {
    /// Decohered entropy minus the largest undecohered representative entropy.
    pub fn entropy_margin(&self) -> f64 {
        let max_rep = self.representative_entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.decohered.entropy_bits - max_rep
    }
}

/// Classifies the fixed points of the undecohered map, then solves again
/// with a small depolarizing rate `p` from `ρ_in`.
pub fn run_max_entropy_check(
    rho_in: &DensityMatrix,
    gate: &UnitaryGate,
    n_samples: usize,
    seed: Seed,
    p: f64,
    opts: &SolverOptions,
) -> Result<MaxEntropyReport> {
    let multiplicity = scan_multiplicity_with(rho_in, gate, n_samples, seed, opts)?;
    let representative_entropies = multiplicity
        .representatives
        .iter()
        .map(von_neumann_entropy)
        .collect::<Result<Vec<_>>>()?;
    let decohered_opts = SolverOptions {
        p,
        initial: InitialState::Input,
        keep_iterates: false,
        ..opts.clone()
    };
    let decohered = solve_fixed_point(&CtcProblem::with_options(rho_in.clone(), gate.clone(), &decohered_opts)?)?;
    Ok(MaxEntropyReport {
        multiplicity,
        decohered,
        representative_entropies,
    })
}

pub fn is_multiple(report: &MultiplicityReport) -> bool {
    report.classification == Multiplicity::Multiple
}
