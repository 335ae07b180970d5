//! Point-cloud CSV input and transport output for the `ot` subcommand.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::ot::{CostKind, DiscreteMeasure};
use crate::tensor::Tensor;

use super::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OtMethod {
    Exact,
    Sinkhorn,
}

impl std::str::FromStr for OtMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(OtMethod::Exact),
            "sinkhorn" => Ok(OtMethod::Sinkhorn),
            other => Err(format!("unknown method {other:?} (expected exact or sinkhorn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtSummary {
    pub distance: f64,
    pub method: OtMethod,
    pub cost: CostKind,
    pub reg: Option<f64>,
    pub n_source: usize,
    pub n_target: usize,
}

fn bad(what: impl std::fmt::Display) -> RunError {
    RunError::Invalid {
        path: "points".into(),
        reason: what.to_string(),
    }
}

/// A header row, then one point per row. A column named `weight` holds
/// unnormalized masses; without it every point gets the same mass.
pub fn read_point_csv<R: Read>(r: R) -> Result<DiscreteMeasure, RunError> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(bad)?.clone();
    let weight_col = headers.iter().position(|h| h.trim() == "weight");
    let d = headers.len() - usize::from(weight_col.is_some());
    if d == 0 {
        return Err(bad("no coordinate columns"));
    }
    let mut data = Vec::new();
    let mut weights = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(bad)?;
        if rec.len() != headers.len() {
            return Err(bad(format!("row {} has {} fields, expected {}", line + 1, rec.len(), headers.len())));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: {field:?} is not a number", line + 1)))?;
            if Some(c) == weight_col {
                weights.push(v);
            } else {
                data.push(v);
            }
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(bad("no points"));
    }
    let points = Tensor::matrix(n, d, data).map_err(bad)?;
    Ok(match weight_col {
        Some(_) => DiscreteMeasure::normalized(points, weights)?,
        None => DiscreteMeasure::uniform(points),
    })
}

/// Nonzero plan entries as `source, target, mass` with 1-based indices.
pub fn write_plan_csv<W: Write>(plan: &Tensor, w: W) -> Result<(), RunError> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| RunError::Io(e.to_string());
    out.write_record(["source", "target", "mass"]).map_err(io)?;
    for i in 0..plan.rows() {
        for j in 0..plan.cols() {
            let m = plan.get(i, j);
            if m != 0.0 {
                out.write_record([(i + 1).to_string(), (j + 1).to_string(), m.to_string()])
                    .map_err(io)?;
            }
        }
    }
    out.flush().map_err(|e| RunError::Io(e.to_string()))
}
