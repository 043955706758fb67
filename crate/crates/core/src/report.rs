//! Result files: JSON reports with sorted keys and CSV convergence traces.

use std::io::Write;

use serde_json::{json, Map, Value};

use crate::error::{CtcError, Result};
use crate::experiments::{ExperimentReport, SweepAxis, SweepPoint};
use crate::numerics::ComplexMatrix;
use crate::run::{OracleCheck, RunOutcome};
use crate::solver::{ConvergenceTrace, MultiplicityReport};

pub const TRACE_COLUMNS: [&str; 4] = ["step", "successive_distance", "residual", "entropy_bits"];

/// Row-major `[re, im]` pairs.
pub fn complex_pairs(m: &ComplexMatrix) -> Value {
    Value::Array(m.as_slice().iter().map(|z| json!([z.re, z.im])).collect())
}

pub fn report_json(report: &ExperimentReport) -> Value {
    let mut obj = Map::new();
    obj.insert("experiment".into(), json!(report.name));
    obj.insert("converged".into(), json!(report.converged));
    obj.insert("iterations".into(), json!(report.iterations));
    obj.insert("residual".into(), json!(report.residual));
    obj.insert("entropy_bits".into(), json!(report.entropy_bits));
    obj.insert("metrics".into(), json!(report.metrics));
    obj.insert("rho_out".into(), complex_pairs(report.output_state.matrix()));
    obj.insert("rho_out_dim".into(), json!(report.output_state.dim()));
    if let Some(ctc) = &report.ctc_state {
        obj.insert("rho_ctc".into(), complex_pairs(ctc.matrix()));
    }
    Value::Object(obj)
}

fn sweep_json(axis: SweepAxis, points: &[SweepPoint]) -> Value {
    let items = points
        .iter()
        .map(|p| match &p.outcome {
            Ok(r) => {
                let mut v = report_json(r);
                v["sweep_value"] = json!(p.value);
                v
            }
            Err(e) => json!({ "sweep_value": p.value, "error": e.to_string() }),
        })
        .collect();
    json!({ "axis": axis.as_str(), "points": Value::Array(items) })
}

/// JSON for a whole run; an oracle check, if any, lands in the metrics of
/// single reports and at top level for sweeps.
pub fn outcome_json(outcome: &RunOutcome, oracle: Option<&OracleCheck>) -> Value {
    let mut v = match outcome {
        RunOutcome::Report(r) => report_json(r),
        RunOutcome::Sweep { axis, points } => sweep_json(*axis, points),
    };
    if let Some(o) = oracle {
        let target = if matches!(outcome, RunOutcome::Report(_)) { &mut v["metrics"] } else { &mut v };
        target["oracle_depth"] = json!(o.depth);
        target["oracle_distance"] = json!(o.distance);
        target["oracle_max_branch_distance"] = json!(o.max_branch_distance);
    }
    v
}

pub fn multiplicity_json(report: &MultiplicityReport) -> Value {
    json!({
        "classification": report.classification,
        "samples_used": report.samples_used,
        "max_pairwise_distance": report.max_pairwise_distance,
        "non_converged": report.non_converged,
        "representatives": report
            .representatives
            .iter()
            .map(|r| complex_pairs(r.matrix()))
            .collect::<Vec<_>>(),
    })
}

pub fn to_pretty_string(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values always serialize")
}

pub fn write_trace_csv<W: Write>(trace: &ConvergenceTrace, out: W) -> Result<()> {
    let io = |e: csv::Error| CtcError::InvalidParameter(format!("csv write failed: {e}"));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRACE_COLUMNS).map_err(io)?;
    for r in &trace.records {
        w.serialize(r).map_err(io)?;
    }
    w.flush()
        .map_err(|e| CtcError::InvalidParameter(format!("csv write failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{standard_gate, standard_state, ControlArm, GateName};
    use crate::solver::{solve_fixed_point, CtcProblem, SolverOptions};

    fn solved() -> crate::solver::FixedPointResult {
        let opts = SolverOptions {
            damping: 1.0,
            ..SolverOptions::default()
        };
        let p = CtcProblem::with_options(
            standard_state("-").unwrap(),
            standard_gate(GateName::Ch, ControlArm::Lower),
            &opts,
        )
        .unwrap();
        solve_fixed_point(&p).unwrap()
    }

    #[test]
    fn csv_header_and_rows() {
        let fp = solved();
        let mut buf = Vec::new();
        write_trace_csv(&fp.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,successive_distance,residual,entropy_bits");
        assert_eq!(lines.count(), fp.trace.len());
    }

    #[test]
    fn json_has_schema_fields() {
        let fp = solved();
        let report = ExperimentReport {
            name: "x".into(),
            output_state: fp.rho_out.clone(),
            ctc_state: None,
            converged: true,
            iterations: fp.iterations,
            residual: fp.residual,
            entropy_bits: fp.entropy_bits,
            metrics: [("b".to_string(), 2.0), ("a".to_string(), 1.0)].into_iter().collect(),
            trace: None,
        };
        let v = report_json(&report);
        for key in ["experiment", "converged", "iterations", "residual", "entropy_bits", "metrics", "rho_out"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["rho_out"].as_array().unwrap().len(), 4);
        assert_eq!(v["rho_out"][0].as_array().unwrap().len(), 2);
        let text = to_pretty_string(&v);
        assert!(text.find("\"a\"").unwrap() < text.find("\"b\"").unwrap());
        assert!(text.find("\"converged\"").unwrap() < text.find("\"experiment\"").unwrap());
    }
}
