//! Tensor dumps and the pointwise identity suite.

use std::io::Write;

use serde::Serialize;

use crate::algebroid::AlgebroidSpec;
use crate::connection::{einstein, ricci, scalar, CurvatureBlocks, DistortionComparison, MetricSource, PointGeometry};
use crate::error::{Error, Result};
use crate::geometry::NSource;

/// One tensor component at one point. Indices are 1-based.
#[derive(Clone, Debug, Serialize)]
pub struct DumpRow {
    pub point: Vec<f64>,
    pub block: String,
    pub index: Vec<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
#[serde(transparent)]
pub struct TensorDump {
    pub rows: Vec<DumpRow>,
}

impl TensorDump {
    /// Append a dense block with row-major `values` of shape `dims`.
    pub fn push(&mut self, point: &[f64], block: &str, dims: &[usize], values: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        let mut idx = vec![0; dims.len()];
        for &v in values {
            self.rows.push(DumpRow {
                point: point.to_vec(),
                block: block.to_string(),
                index: idx.iter().map(|i| i + 1).collect(),
                value: v,
            });
            for k in (0..dims.len()).rev() {
                idx[k] += 1;
                if idx[k] < dims[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dump rows serialize")
    }

    /// Flat CSV: `block, index, value, p1..pk` with the index joined by `.`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.rows.first().map_or(0, |r| r.point.len());
        let mut header = vec!["block".to_string(), "index".to_string(), "value".to_string()];
        header.extend((1..=width).map(|k| format!("p{k}")));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.block.clone(),
                r.index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("."),
                r.value.to_string(),
            ];
            rec.extend(r.point.iter().map(|p| p.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Residuals of the connection and curvature identities over a point set.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub points: usize,
    pub checks: Vec<Check>,
    /// `max |T^α_βγ − C_βγ^α|` for the canonical connection; reported only.
    pub hh_torsion_minus_c: f64,
    /// Literal distortion table vs `K* − Γ̂`, worst over the points.
    pub distortion: Vec<DistortionComparison>,
    pub pass: bool,
}

impl IdentityReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Literal-table blocks that differ from `K* − Γ̂` by more than `tol`.
    pub fn distortion_mismatches(&self, tol: f64) -> Vec<&DistortionComparison> {
        self.distortion.iter().filter(|c| c.max_diff > tol).collect()
    }
}

/// Default tolerances of the identity suite.
pub const IDENTITY_TOLERANCES: [(&str, f64); 10] = [
    ("compatibility", 1e-9),
    ("hh_torsion", 1e-12),
    ("vv_torsion", 1e-12),
    ("vh_torsion_is_omega", 1e-12),
    ("curvature_routes", 1e-8),
    ("koszul_torsion", 1e-9),
    ("koszul_metricity", 1e-9),
    ("ricci_distortion", 1e-8),
    ("einstein_trace", 1e-10),
    ("finite", 0.0),
];

/// Run the identity suite at the given points. `tol` overrides every
/// default tolerance when given.
pub fn identity_suite(
    alg: &AlgebroidSpec,
    nsrc: &dyn NSource,
    metric: &dyn MetricSource,
    points: &[(Vec<f64>, Vec<f64>)],
    tol: Option<f64>,
) -> Result<IdentityReport> {
    let m = alg.m();
    let d = 2 * m;
    let ix = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
    let mut worst = [0.0_f64; 10];
    let mut hh_c = 0.0_f64;
    let mut distortion: Vec<DistortionComparison> = Vec::new();
    for (x, y) in points {
        let pg = PointGeometry::new(alg, nsrc, metric, x, y)?;
        let gam = pg.canonical();
        let w = pg.anholonomy();
        let mut r = [0.0_f64; 10];
        r[0] = pg.compatibility(gam).into_iter().fold(0.0, f64::max);
        let t = pg.torsion(gam);
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    r[1] = r[1].max(t[ix(a, b, c)].abs());
                    r[2] = r[2].max(t[ix(m + a, m + b, m + c)].abs());
                    r[3] = r[3].max((t[ix(m + c, a, b)] - w[ix(a, b, m + c)]).abs());
                    hh_c = hh_c.max((t[ix(a, b, c)] - w[ix(b, c, a)]).abs());
                }
            }
        }
        let full = pg.curvature(gam);
        r[4] = CurvatureBlocks::from_full(m, &full).max_diff(&pg.curvature_blocks(gam));
        let k = pg.koszul();
        r[5] = pg.torsion(k).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        r[6] = pg.nonmetricity(k).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let ric_h = ricci(d, &full);
        let ric_k = ricci(d, &pg.curvature(k));
        let zic = pg.ricci_distortion(1.0);
        r[7] = (0..d * d).map(|i| (ric_k[i] - ric_h[i] - zic[i]).abs()).fold(0.0, f64::max);
        let s = pg.scalar(&ric_h);
        let e = einstein(&ric_h, &pg.metric(), s);
        let tr = scalar(d, &pg.inverse_metric(), &e);
        r[8] = (tr - s * (1.0 - m as f64)).abs() / (1.0 + s.abs());
        r[9] = if full.iter().chain(&ric_h).all(|v| v.is_finite()) { 0.0 } else { f64::INFINITY };
        for (w, v) in worst.iter_mut().zip(r) {
            *w = w.max(v);
        }
        let cmp = pg.compare_distortion();
        if distortion.is_empty() {
            distortion = cmp;
        } else {
            for (acc, c) in distortion.iter_mut().zip(cmp) {
                acc.max_diff = acc.max_diff.max(c.max_diff);
                acc.max_reference = acc.max_reference.max(c.max_reference);
            }
        }
    }
    let checks: Vec<Check> = IDENTITY_TOLERANCES
        .iter()
        .zip(worst)
        .map(|(&(name, default), residual)| {
            let tol = if name == "finite" { 0.0 } else { tol.unwrap_or(default) };
            Check {
                name,
                residual,
                tol,
                pass: residual <= tol,
            }
        })
        .collect();
    let pass = checks.iter().all(|c| c.pass);
    Ok(IdentityReport {
        points: points.len(),
        checks,
        hh_torsion_minus_c: hh_c,
        distortion,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_indices_run_row_major() {
        let mut d = TensorDump::default();
        d.push(&[0.5], "A", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx: Vec<Vec<usize>> = d.rows.iter().map(|r| r.index.clone()).collect();
        assert_eq!(idx, vec![vec![1, 1], vec![1, 2], vec![1, 3], vec![2, 1], vec![2, 2], vec![2, 3]]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("block,index,value,p1\nA,1.1,1,0.5\n"));
        let json: serde_json::Value = serde_json::from_str(&d.to_json()).unwrap();
        assert_eq!(json[5]["index"], serde_json::json!([2, 3]));
        assert_eq!(json[5]["block"], "A");
    }
}
