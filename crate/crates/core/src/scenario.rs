//! JSON scenario files: schema, validation with JSON-pointer error paths, and
//! builders for the objects the library works with.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::algebroid::{AlgebroidSpec, ChartBox};
use crate::connection::{AlgebroidMetric, ExprDMetric, MetricSource};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, VarSet};
use crate::flow::{Flow, FlowConfig, FlowMode, Gradient, Grid};
use crate::geometry::{ExprNConnection, LagrangeModel, NSource};
use crate::sampling::halton_box;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub algebroid: AlgebroidBlock,
    pub lagrangian: LagrangianBlock,
    /// Replaces the Sasaki lift of the Hessian.
    #[serde(default)]
    pub metric: Option<MetricBlock>,
    /// Replaces the canonical N-connection, `[α][γ]`.
    #[serde(default)]
    pub nconnection: Option<Vec<Vec<String>>>,
    /// Metric on the algebroid itself (functions of `x`), `[α][β]`.
    #[serde(default)]
    pub algebroid_metric: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub grid: Option<GridBlock>,
    #[serde(default)]
    pub flow: FlowBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub el: Option<ElBlock>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebroidBlock {
    pub n: usize,
    pub m: usize,
    /// `rho[α][i]`
    pub rho: Vec<Vec<String>>,
    #[serde(default)]
    pub structure: Vec<StructureEntry>,
    pub chart: ChartBlock,
}

/// `C_{alpha beta}^{gamma} = value`, indices starting at 1.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StructureEntry {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: usize,
    pub value: String,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianBlock {
    #[serde(rename = "L")]
    pub l: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    pub gh: Vec<Vec<String>>,
    pub gv: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    /// Points per axis, `x` axes first; the box is the chart.
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBlock {
    pub tau0: f64,
    pub dchi: f64,
    pub steps: usize,
    pub mode: FlowMode,
    pub gradient: Gradient,
    /// Abort when the mixed Ricci residual exceeds this.
    pub mixed_threshold: Option<f64>,
}

impl Default for FlowBlock {
    fn default() -> Self {
        let c = FlowConfig::default();
        FlowBlock {
            tau0: 1.0,
            dchi: c.dchi,
            steps: c.steps,
            mode: c.mode,
            gradient: c.gradient,
            mixed_threshold: c.mixed_threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: Option<String>,
    pub format: Format,
    /// Sample points for pointwise reports.
    pub points: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            dir: None,
            format: Format::Csv,
            points: 8,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ElBlock {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub h: f64,
    pub steps: usize,
}

/// A validated scenario with its expressions parsed.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    model: LagrangeModel,
    nconn: Option<ExprNConnection>,
    metric: Option<ExprDMetric>,
    algebroid_metric: Option<AlgebroidMetric>,
}

fn pointer(segments: &[String]) -> String {
    segments.iter().map(|s| format!("/{}", s.replace('~', "~0").replace('/', "~1"))).collect()
}

fn quoted(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    Some(rest[..rest.find('`')?].to_string())
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Scenario { .. } => e,
        other => Error::scenario(path, other.to_string()),
    }
}

fn parse_at(src: &str, vars: &VarSet, path: String) -> Result<Expr> {
    parse(src, vars).map_err(|e| at(&path, e))
}

fn parse_matrix(rows: &[Vec<String>], r: usize, c: usize, vars: &VarSet, path: &str) -> Result<Vec<Expr>> {
    if rows.len() != r {
        return Err(Error::scenario(path, format!("expected {r} rows, found {}", rows.len())));
    }
    let mut out = Vec::with_capacity(r * c);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::scenario(format!("{path}/{i}"), format!("expected {c} entries, found {}", row.len())));
        }
        for (j, s) in row.iter().enumerate() {
            out.push(parse_at(s, vars, format!("{path}/{i}/{j}"))?);
        }
    }
    Ok(out)
}

fn interval(b: &[f64; 2], path: String) -> Result<(f64, f64)> {
    if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
        return Err(Error::scenario(path, format!("bad interval [{}, {}]", b[0], b[1])));
    }
    Ok((b[0], b[1]))
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let mut segs: Vec<String> = e
                .path()
                .iter()
                .filter_map(|s| match s {
                    serde_path_to_error::Segment::Seq { index } => Some(index.to_string()),
                    serde_path_to_error::Segment::Map { key } => Some(key.clone()),
                    serde_path_to_error::Segment::Enum { variant } => Some(variant.clone()),
                    serde_path_to_error::Segment::Unknown => None,
                })
                .collect();
            let msg = e.inner().to_string();
            if let Some(field) = quoted(&msg, "missing field `") {
                segs.push(field);
            }
            Error::scenario(pointer(&segs), msg)
        })?;
        Self::build(file)
    }

    pub fn build(file: ScenarioFile) -> Result<Self> {
        let a = &file.algebroid;
        let (n, m) = (a.n, a.m);
        if n == 0 {
            return Err(Error::scenario("/algebroid/n", "n must be at least 1"));
        }
        if m == 0 {
            return Err(Error::scenario("/algebroid/m", "m must be at least 1"));
        }
        let mut vars = VarSet::new(n, m);
        for (name, value) in &file.lagrangian.params {
            vars.add_param(name, *value).map_err(|e| at(&format!("/lagrangian/params/{name}"), e))?;
        }
        let rho = parse_matrix(&a.rho, m, n, &vars, "/algebroid/rho")?;
        let mut structure = Vec::with_capacity(a.structure.len());
        for (k, s) in a.structure.iter().enumerate() {
            for (field, v) in [("alpha", s.alpha), ("beta", s.beta), ("gamma", s.gamma)] {
                if v == 0 || v > m {
                    return Err(Error::scenario(format!("/algebroid/structure/{k}/{field}"), format!("index {v} outside 1..={m}")));
                }
            }
            let e = parse_at(&s.value, &vars, format!("/algebroid/structure/{k}/value"))?;
            structure.push((s.alpha - 1, s.beta - 1, s.gamma - 1, e));
        }
        if a.chart.x.len() != n {
            return Err(Error::scenario("/algebroid/chart/x", format!("expected {n} intervals")));
        }
        if a.chart.y.len() != m {
            return Err(Error::scenario("/algebroid/chart/y", format!("expected {m} intervals")));
        }
        let xb = a.chart.x.iter().enumerate().map(|(i, b)| interval(b, format!("/algebroid/chart/x/{i}"))).collect::<Result<_>>()?;
        let yb = a.chart.y.iter().enumerate().map(|(i, b)| interval(b, format!("/algebroid/chart/y/{i}"))).collect::<Result<_>>()?;
        let chart = ChartBox::new(xb, yb).map_err(|e| at("/algebroid/chart", e))?;
        let rho_rows: Vec<Vec<Expr>> = rho.chunks(n).map(|r| r.to_vec()).collect();
        let alg = AlgebroidSpec::new(vars.clone(), rho_rows, structure, chart).map_err(|e| at("/algebroid", e))?;

        let l = parse_at(&file.lagrangian.l, &vars, "/lagrangian/L".into())?;
        let model = LagrangeModel::new(alg.clone(), l).map_err(|e| at("/lagrangian/L", e))?;

        let metric = match &file.metric {
            Some(mb) => Some(ExprDMetric {
                vars: vars.clone(),
                gh: parse_matrix(&mb.gh, m, m, &vars, "/metric/gh")?,
                gv: parse_matrix(&mb.gv, m, m, &vars, "/metric/gv")?,
            }),
            None => None,
        };
        let nconn = match &file.nconnection {
            Some(rows) => Some(ExprNConnection {
                vars: vars.clone(),
                n: parse_matrix(rows, m, m, &vars, "/nconnection")?,
            }),
            None => None,
        };
        let algebroid_metric = match &file.algebroid_metric {
            Some(rows) => {
                let w = parse_matrix(rows, m, m, &vars, "/algebroid_metric")?;
                Some(AlgebroidMetric::new(&alg, w).map_err(|e| at("/algebroid_metric", e))?)
            }
            None => None,
        };

        if let Some(g) = &file.grid {
            if g.counts.len() != n + m {
                return Err(Error::scenario("/grid/counts", format!("expected {} counts", n + m)));
            }
            for (k, c) in g.counts.iter().enumerate() {
                if *c < 8 {
                    return Err(Error::scenario(format!("/grid/counts/{k}"), "at least 8 points per axis"));
                }
            }
        }
        let f = &file.flow;
        if !(f.tau0.is_finite() && f.tau0 > 0.0) {
            return Err(Error::scenario("/flow/tau0", "tau0 must be positive"));
        }
        if !(f.dchi.is_finite() && f.dchi > 0.0) {
            return Err(Error::scenario("/flow/dchi", "dchi must be positive"));
        }
        if let Some(t) = f.mixed_threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::scenario("/flow/mixed_threshold", "threshold must be positive"));
            }
        }
        if let Some(el) = &file.el {
            if el.x0.len() != n {
                return Err(Error::scenario("/el/x0", format!("expected {n} values")));
            }
            if el.y0.len() != m {
                return Err(Error::scenario("/el/y0", format!("expected {m} values")));
            }
            if !(el.h.is_finite() && el.h > 0.0) {
                return Err(Error::scenario("/el/h", "step must be positive"));
            }
        }
        if file.output.points == 0 {
            return Err(Error::scenario("/output/points", "need at least one point"));
        }
        Ok(Scenario {
            file,
            model,
            nconn,
            metric,
            algebroid_metric,
        })
    }

    pub fn name(&self) -> &str {
        self.file.name.as_deref().unwrap_or("scenario")
    }

    pub fn algebroid(&self) -> &AlgebroidSpec {
        self.model.algebroid()
    }

    pub fn vars(&self) -> &VarSet {
        self.model.vars()
    }

    pub fn model(&self) -> &LagrangeModel {
        &self.model
    }

    /// Whether the scenario overrides the canonical N-connection or the
    /// Sasaki metric.
    pub fn has_overrides(&self) -> bool {
        self.nconn.is_some() || self.metric.is_some()
    }

    pub fn nsource(&self) -> &dyn NSource {
        match &self.nconn {
            Some(n) => n,
            None => &self.model,
        }
    }

    pub fn metric_source(&self) -> &dyn MetricSource {
        match &self.metric {
            Some(g) => g,
            None => &self.model,
        }
    }

    pub fn algebroid_metric(&self) -> Option<&AlgebroidMetric> {
        self.algebroid_metric.as_ref()
    }

    /// Seeded sample points in the chart, split into `(x, y)`.
    pub fn sample_points(&self, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let n = self.algebroid().n();
        halton_box(&self.algebroid().chart().total(), count, seed)
            .into_iter()
            .map(|mut p| {
                let y = p.split_off(n);
                (p, y)
            })
            .collect()
    }

    pub fn grid(&self) -> Result<Grid> {
        let counts = self.file.grid.as_ref().ok_or_else(|| Error::scenario("/grid", "scenario has no grid block"))?.counts.clone();
        let (lo, hi) = self.algebroid().chart().total().into_iter().unzip();
        Grid::new(lo, hi, counts)
    }

    pub fn flow_config(&self) -> FlowConfig {
        let f = &self.file.flow;
        FlowConfig {
            mode: f.mode,
            gradient: f.gradient,
            dchi: f.dchi,
            steps: f.steps,
            mixed_threshold: f.mixed_threshold,
        }
    }

    pub fn flow(&self, config: FlowConfig) -> Result<Flow> {
        Flow::new(self.algebroid(), self.nsource(), self.grid()?, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "algebroid": {"n": 1, "m": 1, "rho": [["1"]], "chart": {"x": [[0, 1]], "y": [[-1, 1]]}},
        "lagrangian": {"L": "y1^2/2"}
    }"#;

    fn error_path(text: &str) -> String {
        match Scenario::from_json(text) {
            Err(Error::Scenario { path, .. }) => path,
            other => panic!("expected a scenario error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_loads_with_defaults() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.file.flow.tau0, 1.0);
        assert_eq!(s.file.output.points, 8);
        assert!(s.grid().is_err());
    }

    #[test]
    fn missing_and_unknown_fields() {
        let no_l = MINIMAL.replace(r#""L": "y1^2/2""#, r#""params": {}"#);
        assert_eq!(error_path(&no_l), "/lagrangian/L");
        let extra = MINIMAL.replace(r#""n": 1,"#, r#""n": 1, "bogus": 2,"#);
        assert!(error_path(&extra).starts_with("/algebroid"));
    }

    #[test]
    fn semantic_errors_point_at_fields() {
        assert_eq!(error_path(&MINIMAL.replace(r#""m": 1"#, r#""m": 0"#)), "/algebroid/m");
        assert_eq!(error_path(&MINIMAL.replace("y1^2/2", "y1^2/")), "/lagrangian/L");
        assert_eq!(error_path(&MINIMAL.replace(r#"[["1"]]"#, r#"[["z"]]"#)), "/algebroid/rho/0/0");
        assert_eq!(error_path(&MINIMAL.replace("[[0, 1]]", "[[1, 0]]")), "/algebroid/chart/x/0");
        let grid = MINIMAL.replace(r#""lagrangian""#, r#""grid": {"counts": [8, 4]}, "lagrangian""#);
        assert_eq!(error_path(&grid), "/grid/counts/1");
    }
}
