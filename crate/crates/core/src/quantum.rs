//! Validated states, gates and channels.
//!
//! Two-qubit gates act on the ordered pair (upper, lower): the upper arm is the
//! input qubit and the most significant index, the lower arm is the qubit that
//! emerges from the CTC.

use std::fmt;
use std::str::FromStr;

use crate::error::{CtcError, Result};
use crate::numerics::{eig_hermitian, kron_vec, tensor_product, ComplexMatrix, Sampler, C64, ONE, ZERO};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
pub const UNITARY_TOL: f64 = 1e-12;
pub const COMPLETENESS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity, then stores the
    /// Hermitian part.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(CtcError::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if !matrix.is_finite() {
            return Err(CtcError::NonFinite);
        }
        let asym = matrix.max_abs_diff(&matrix.dagger());
        if asym >= HERMITIAN_TOL {
            return Err(CtcError::InvalidState(format!("not Hermitian (max |m - m^dag| = {asym:e})")));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() >= TRACE_TOL {
            return Err(CtcError::InvalidState(format!("trace {tr} is not 1")));
        }
        let matrix = matrix.hermitian_part();
        let min = eig_hermitian(&matrix)?.values.last().copied().unwrap_or(0.0);
        if min <= -PSD_TOL {
            return Err(CtcError::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self { matrix })
    }

    /// Pure state `|v><v|`; `v` must be normalized to within 1e-10.
    pub fn from_ket(v: &[C64]) -> Result<Self> {
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > TRACE_TOL {
            return Err(CtcError::InvalidState(format!("state vector has squared norm {norm}")));
        }
        Self::new(ComplexMatrix::outer(v))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut m = ComplexMatrix::zeros(dim, dim);
        m[(index, index)] = ONE;
        Self { matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `<i|rho|i>`.
    pub fn population(&self, i: usize) -> f64 {
        self.matrix[(i, i)].re
    }

    pub fn tensor(&self, other: &Self) -> Self {
        Self {
            matrix: tensor_product(&self.matrix, &other.matrix),
        }
    }

    /// Convex combination `Σ w_k ρ_k`; weights must be non-negative and sum to 1.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| CtcError::InvalidParameter("empty mixture".into()))?;
        let mut acc = ComplexMatrix::zeros(first.1.dim(), first.1.dim());
        for (w, rho) in parts {
            if *w < 0.0 {
                return Err(CtcError::InvalidParameter(format!("negative mixture weight {w}")));
            }
            acc = acc.try_add(&rho.matrix.scale_real(*w))?;
        }
        Self::new(acc)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryGate {
    matrix: ComplexMatrix,
    label: String,
}

impl UnitaryGate {
    pub fn new(matrix: ComplexMatrix, label: impl Into<String>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(CtcError::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if !matrix.is_finite() {
            return Err(CtcError::NonFinite);
        }
        let dev = (&matrix * &matrix.dagger()).max_abs_diff(&ComplexMatrix::identity(matrix.rows()));
        if dev >= UNITARY_TOL {
            return Err(CtcError::NotUnitary(dev));
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    pub fn haar(sampler: &mut Sampler, dim: usize) -> Self {
        Self {
            matrix: sampler.unitary(dim),
            label: "haar".into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `self · other`: `other` acts first.
    pub fn then_after(&self, other: &UnitaryGate) -> Result<Self> {
        Self::new(
            self.matrix.matmul(&other.matrix)?,
            format!("{}*{}", self.label, other.label),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateName {
    I,
    X,
    Z,
    H,
    Swap,
    Cnot,
    Ch,
}

impl GateName {
    pub fn is_controlled(self) -> bool {
        matches!(self, GateName::Cnot | GateName::Ch)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GateName::I => "I",
            GateName::X => "X",
            GateName::Z => "Z",
            GateName::H => "H",
            GateName::Swap => "SWAP",
            GateName::Cnot => "CNOT",
            GateName::Ch => "CH",
        }
    }
}

impl fmt::Display for GateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GateName {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "I" | "ID" | "IDENTITY" => GateName::I,
            "X" => GateName::X,
            "Z" => GateName::Z,
            "H" => GateName::H,
            "SWAP" => GateName::Swap,
            "CNOT" | "CX" => GateName::Cnot,
            "CH" => GateName::Ch,
            _ => return Err(CtcError::UnknownGate(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ControlArm {
    Upper,
    #[default]
    Lower,
}

impl ControlArm {
    pub fn as_str(self) -> &'static str {
        match self {
            ControlArm::Upper => "upper",
            ControlArm::Lower => "lower",
        }
    }
}

impl FromStr for ControlArm {
    type Err = CtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(ControlArm::Upper),
            "lower" => Ok(ControlArm::Lower),
            _ => Err(CtcError::InvalidParameter(format!("control arm `{s}` (expected upper|lower)"))),
        }
    }
}

fn single_qubit(name: GateName) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    match name {
        GateName::X => ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]),
        GateName::Z => ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]),
        GateName::H => ComplexMatrix::from_real_rows(&[&[s, s], &[s, -s]]),
        _ => ComplexMatrix::identity(2),
    }
}

/// Controlled-`target` with the given control arm, built from projectors.
fn controlled(target: &ComplexMatrix, control: ControlArm) -> ComplexMatrix {
    let p0 = ComplexMatrix::from_real_diag(&[1.0, 0.0]);
    let p1 = ComplexMatrix::from_real_diag(&[0.0, 1.0]);
    let id = ComplexMatrix::identity(2);
    match control {
        ControlArm::Upper => &tensor_product(&p0, &id) + &tensor_product(&p1, target),
        ControlArm::Lower => &tensor_product(&id, &p0) + &tensor_product(target, &p1),
    }
}

/// Named two-qubit gate on (upper, lower). Single-qubit names act on the
/// upper arm; `control` only matters for CNOT and CH.
pub fn standard_gate(name: GateName, control: ControlArm) -> UnitaryGate {
    let id = ComplexMatrix::identity(2);
    let (matrix, label) = match name {
        GateName::I => (ComplexMatrix::identity(4), "I".to_string()),
        GateName::X | GateName::Z | GateName::H => (tensor_product(&single_qubit(name), &id), name.to_string()),
        GateName::Swap => (
            ComplexMatrix::from_real_rows(&[
                &[1.0, 0.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
            ]),
            "SWAP".to_string(),
        ),
        GateName::Cnot | GateName::Ch => {
            let target = if name == GateName::Cnot {
                single_qubit(GateName::X)
            } else {
                single_qubit(GateName::H)
            };
            (controlled(&target, control), format!("{name}(control={})", control.as_str()))
        }
    };
    UnitaryGate { matrix, label }
}

pub fn parse_gate(name: &str, control: ControlArm) -> Result<UnitaryGate> {
    Ok(standard_gate(name.parse()?, control))
}

/// Single-qubit symbol of a ket string.
pub fn symbol_ket(symbol: char) -> Result<[C64; 2]> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ok(match symbol {
        '0' => [ONE, ZERO],
        '1' => [ZERO, ONE],
        '+' => [C64::new(s, 0.0), C64::new(s, 0.0)],
        '-' => [C64::new(s, 0.0), C64::new(-s, 0.0)],
        other => return Err(CtcError::UnknownSymbol(other.to_string())),
    })
}

fn bell_ket(label: &str) -> Option<Vec<C64>> {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let (a, b, c, d) = match label {
        "Φ+" | "Phi+" | "phi+" => (s, ZERO, ZERO, s),
        "Φ-" | "Phi-" | "phi-" => (s, ZERO, ZERO, -s),
        "Ψ+" | "Psi+" | "psi+" => (ZERO, s, s, ZERO),
        "Ψ-" | "Psi-" | "psi-" => (ZERO, s, -s, ZERO),
        _ => return None,
    };
    Some(vec![a, b, c, d])
}

/// State vector for a ket string over `{0, 1, +, -}` or a Bell label
/// (`Φ+`, `Φ-`, `Ψ+`, `Ψ-`, or the ASCII spellings `Phi+` etc.).
pub fn standard_ket(spec: &str) -> Result<Vec<C64>> {
    if spec.is_empty() {
        return Err(CtcError::InvalidParameter("empty state specification".into()));
    }
    if let Some(v) = bell_ket(spec) {
        return Ok(v);
    }
    let mut v = vec![ONE];
    for ch in spec.chars() {
        v = kron_vec(&v, &symbol_ket(ch)?);
    }
    Ok(v)
}

pub fn standard_state(spec: &str) -> Result<DensityMatrix> {
    DensityMatrix::from_ket(&standard_ket(spec)?)
}

/// `(1 - p) ρ + p I/d`.
pub fn depolarize(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CtcError::InvalidParameter(format!("depolarizing rate {p} outside [0, 1]")));
    }
    if p == 0.0 {
        return Ok(rho.clone());
    }
    if p == 1.0 {
        return Ok(DensityMatrix::maximally_mixed(rho.dim()));
    }
    let d = rho.dim();
    let mut m = rho.matrix().scale_real(1.0 - p);
    for i in 0..d {
        m[(i, i)] += C64::new(p / d as f64, 0.0);
    }
    Ok(DensityMatrix { matrix: m })
}

#[derive(Clone, Debug)]
pub struct KrausChannel {
    operators: Vec<ComplexMatrix>,
}

impl KrausChannel {
    pub fn new(operators: Vec<ComplexMatrix>) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| CtcError::InvalidParameter("channel needs at least one Kraus operator".into()))?;
        let (out_dim, in_dim) = (first.rows(), first.cols());
        let mut sum = ComplexMatrix::zeros(in_dim, in_dim);
        for e in &operators {
            if (e.rows(), e.cols()) != (out_dim, in_dim) {
                return Err(CtcError::DimensionMismatch("Kraus operators differ in shape".into()));
            }
            sum = sum.try_add(&(&e.dagger() * e))?;
        }
        let dev = sum.max_abs_diff(&ComplexMatrix::identity(in_dim));
        if dev >= COMPLETENESS_TOL {
            return Err(CtcError::IncompleteChannel(dev));
        }
        Ok(Self { operators })
    }

    /// Pauli form `{√(1-p) I, √(p/3) X, √(p/3) Y, √(p/3) Z}`; equals
    /// [`depolarize`] with rate `4p/3`.
    pub fn pauli_depolarizing(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CtcError::InvalidParameter(format!("error probability {p} outside [0, 1]")));
        }
        let a = (1.0 - p).sqrt();
        let b = (p / 3.0).sqrt();
        let y = ComplexMatrix::new(2, 2, vec![ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO])?;
        Self::new(vec![
            ComplexMatrix::identity(2).scale_real(a),
            single_qubit(GateName::X).scale_real(b),
            y.scale_real(b),
            single_qubit(GateName::Z).scale_real(b),
        ])
    }

    pub fn operators(&self) -> &[ComplexMatrix] {
        &self.operators
    }

    pub fn input_dim(&self) -> usize {
        self.operators[0].cols()
    }
}

/// `Σ E_k ρ E_k^dag`.
pub fn apply_channel(ch: &KrausChannel, rho: &DensityMatrix) -> Result<DensityMatrix> {
    if ch.input_dim() != rho.dim() {
        return Err(CtcError::DimensionMismatch(format!(
            "channel on dimension {} applied to a {}-dimensional state",
            ch.input_dim(),
            rho.dim()
        )));
    }
    let out_dim = ch.operators[0].rows();
    let mut acc = ComplexMatrix::zeros(out_dim, out_dim);
    for e in &ch.operators {
        acc = acc.try_add(&rho.matrix().conjugate_by(e)?)?;
    }
    DensityMatrix::new(acc.hermitian_part())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Seed;

    fn ket(spec: &str) -> Vec<C64> {
        standard_ket(spec).unwrap()
    }

    fn close(a: &[C64], b: &[C64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn swap_moves_01_to_10() {
        let swap = standard_gate(GateName::Swap, ControlArm::Lower);
        let out = swap.matrix().mul_vec(&ket("01")).unwrap();
        assert!(close(&out, &ket("10"), 1e-15));
    }

    #[test]
    fn ch_lower_control_off_is_identity() {
        let ch = standard_gate(GateName::Ch, ControlArm::Lower);
        let mut s = Sampler::new(Seed(1));
        for _ in 0..10 {
            let phi = s.ket(2);
            let input = kron_vec(&phi, &ket("0"));
            let out = ch.matrix().mul_vec(&input).unwrap();
            assert!(close(&out, &input, 1e-15));
        }
    }

    #[test]
    fn ch_lower_control_on_applies_hadamard_to_upper() {
        let ch = standard_gate(GateName::Ch, ControlArm::Lower);
        let out = ch.matrix().mul_vec(&ket("01")).unwrap();
        // Index-by-index oracle: CH|01> = (|01> + |11>)/√2 = |+>|1>.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [ZERO, C64::new(s, 0.0), ZERO, C64::new(s, 0.0)];
        assert!(close(&out, &expect, 1e-15));
        assert!(close(&out, &ket("+1"), 1e-15));
    }

    #[test]
    fn all_standard_gates_are_unitary() {
        for name in [
            GateName::I,
            GateName::X,
            GateName::Z,
            GateName::H,
            GateName::Swap,
            GateName::Cnot,
            GateName::Ch,
        ] {
            for arm in [ControlArm::Upper, ControlArm::Lower] {
                let g = standard_gate(name, arm);
                UnitaryGate::new(g.matrix().clone(), g.label()).unwrap();
            }
        }
        assert!(matches!(parse_gate("toffoli", ControlArm::Lower), Err(CtcError::UnknownGate(_))));
    }

    #[test]
    fn standard_states() {
        assert_eq!(
            standard_state("0").unwrap().matrix(),
            &ComplexMatrix::from_real_diag(&[1.0, 0.0])
        );
        let minus = standard_state("-").unwrap();
        let expect = ComplexMatrix::from_real_rows(&[&[0.5, -0.5], &[-0.5, 0.5]]);
        assert!(minus.matrix().max_abs_diff(&expect) < 1e-15);
        let bell = standard_state("Φ+").unwrap();
        let expect = ComplexMatrix::from_real_rows(&[
            &[0.5, 0.0, 0.0, 0.5],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0],
            &[0.5, 0.0, 0.0, 0.5],
        ]);
        assert!(bell.matrix().max_abs_diff(&expect) < 1e-15);
        assert_eq!(standard_state("Phi+").unwrap(), bell);
        assert!(matches!(standard_state("0x"), Err(CtcError::UnknownSymbol(_))));
        assert!(standard_state("").is_err());
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(ComplexMatrix::from_real_diag(&[0.6, 0.6])).is_err());
        assert!(DensityMatrix::new(ComplexMatrix::from_real_diag(&[1.5, -0.5])).is_err());
        let nonherm = ComplexMatrix::from_real_rows(&[&[0.5, 0.1], &[0.0, 0.5]]);
        assert!(DensityMatrix::new(nonherm).is_err());
    }

    #[test]
    fn depolarize_examples() {
        let zero = standard_state("0").unwrap();
        assert_eq!(depolarize(&zero, 0.0).unwrap(), zero);
        assert_eq!(depolarize(&zero, 1.0).unwrap(), DensityMatrix::maximally_mixed(2));
        let d = depolarize(&zero, 0.1).unwrap();
        let expect = ComplexMatrix::from_real_diag(&[0.95, 0.05]);
        assert!(d.matrix().max_abs_diff(&expect) < 1e-15);
        assert!(depolarize(&zero, 1.1).is_err());
        assert!(depolarize(&zero, -0.1).is_err());
    }

    #[test]
    fn identity_channel() {
        let ch = KrausChannel::new(vec![ComplexMatrix::identity(2)]).unwrap();
        let rho = DensityMatrix::new(Sampler::new(Seed(4)).density(2)).unwrap();
        assert!(apply_channel(&ch, &rho).unwrap().matrix().max_abs_diff(rho.matrix()) < 1e-15);
    }

    #[test]
    fn pauli_channel_matches_depolarize() {
        let mut s = Sampler::new(Seed(8));
        for &p in &[0.0, 0.05, 0.3, 0.75] {
            let ch = KrausChannel::pauli_depolarizing(p).unwrap();
            for _ in 0..5 {
                let rho = DensityMatrix::new(s.density(2)).unwrap();
                let a = apply_channel(&ch, &rho).unwrap();
                let b = depolarize(&rho, 4.0 * p / 3.0).unwrap();
                assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-14);
            }
        }
    }

    #[test]
    fn reset_channel_sends_everything_to_zero() {
        let e0 = ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let e1 = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let ch = KrausChannel::new(vec![e0, e1]).unwrap();
        let mut s = Sampler::new(Seed(6));
        for _ in 0..5 {
            let rho = DensityMatrix::new(s.density(2)).unwrap();
            let out = apply_channel(&ch, &rho).unwrap();
            assert!(out.matrix().max_abs_diff(standard_state("0").unwrap().matrix()) < 1e-15);
        }
    }

    #[test]
    fn incomplete_channel_rejected() {
        let half = ComplexMatrix::identity(2).scale_real(0.5);
        assert!(matches!(KrausChannel::new(vec![half]), Err(CtcError::IncompleteChannel(_))));
    }
}
