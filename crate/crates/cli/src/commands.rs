use std::fs;
use std::io::Write;
use std::path::PathBuf;

use algebroid_flow::connection::{einstein, ricci};
use algebroid_flow::flow::SeriesRow;
use algebroid_flow::geometry::anholonomy_at;
use algebroid_flow::{identity_suite, Error, Flow, FlowState, Format, PointGeometry, Scenario, TensorDump};
use serde_json::json;

use crate::{Common, Failure};

/// Structure checks use a fixed, larger sample than the pointwise dumps.
const STRUCTURE_POINTS: usize = 200;

struct Ctx<'a> {
    sc: Scenario,
    args: &'a Common,
}

impl<'a> Ctx<'a> {
    fn new(args: &'a Common) -> Result<Self, Failure> {
        let sc = Scenario::load(args.scenario_path()?)?;
        Ok(Ctx { sc, args })
    }

    fn format(&self) -> Format {
        self.args.format().unwrap_or(self.sc.file.output.format)
    }

    fn out_dir(&self) -> Option<PathBuf> {
        self.args.out.clone().or_else(|| self.sc.file.output.dir.as_ref().map(PathBuf::from))
    }

    fn points(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.sc.sample_points(self.sc.file.output.points, self.args.seed)
    }

    /// Write `content` to `<out>/<name>` when an output directory is set.
    fn write(&self, name: &str, content: &str) -> Result<bool, Failure> {
        match self.out_dir() {
            Some(dir) => {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join(name), content)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// The main artifact: a file in the output directory, else stdout.
    fn emit(&self, name: &str, content: &str) -> Result<(), Failure> {
        if !self.write(name, content)? {
            let mut out = std::io::stdout().lock();
            out.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    fn emit_dump(&self, stem: &str, dump: &TensorDump) -> Result<(), Failure> {
        match self.format() {
            Format::Json => self.emit(&format!("{stem}.json"), &dump.to_json()),
            Format::Csv => {
                let mut buf = Vec::new();
                dump.write_csv(&mut buf)?;
                self.emit(&format!("{stem}.csv"), &String::from_utf8_lossy(&buf))
            }
        }
    }
}

/// Numbers in CSV output: plain decimals in the usual range, exponent form
/// otherwise. Both forms round-trip.
fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Time-like columns accumulate `h` per step; drop the accumulated round-off.
fn clock(t: f64) -> String {
    num(format!("{t:.12e}").parse().unwrap_or(t))
}

fn csv_table(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::from(Error::invalid(format!("csv: {e}")));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::from(Error::invalid(format!("csv: {e}"))))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize")
}

fn tag_init(e: Error) -> Error {
    match e {
        Error::NotPositive(s) => Error::NotPositive(format!("step 0: {s}")),
        other => other,
    }
}

pub fn validate(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let alg = ctx.sc.algebroid();
    let tol = args.tol.unwrap_or(1e-10);
    let xs: Vec<Vec<f64>> = ctx.sc.sample_points(STRUCTURE_POINTS, args.seed).into_iter().map(|(x, _)| x).collect();
    let rep = alg.validate_structure(&xs, tol)?;
    let kind = alg.kind(&xs, 1e-12)?;
    match ctx.format() {
        Format::Json => {
            let v = json!({ "scenario": ctx.sc.name(), "kind": kind, "seed": args.seed, "structure": rep });
            ctx.emit("validate.json", &pretty(&v))?;
        }
        Format::Csv => {
            let header = ["scenario", "kind", "points", "anchor_residual", "jacobi_residual", "antisymmetry_residual", "tol", "pass"];
            let kind = serde_json::to_value(kind).expect("kind serializes");
            let row = vec![
                ctx.sc.name().to_string(),
                kind.as_str().unwrap_or_default().to_string(),
                rep.points.to_string(),
                num(rep.anchor_residual),
                num(rep.jacobi_residual),
                num(rep.antisymmetry_residual),
                num(rep.tol),
                rep.pass.to_string(),
            ];
            ctx.emit("validate.csv", &csv_table(&header.map(String::from), [row])?)?;
        }
    }
    if !rep.pass {
        return Err(Failure::invariant(format!(
            "structure residuals exceed {tol:e}: anchor {:e}, jacobi {:e}, antisymmetry {:e}",
            rep.anchor_residual, rep.jacobi_residual, rep.antisymmetry_residual
        )));
    }
    Ok(())
}

pub fn geom(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let model = ctx.sc.model();
    let m = model.m();
    let mut dump = TensorDump::default();
    for (x, y) in ctx.points() {
        let pt: Vec<f64> = x.iter().chain(&y).copied().collect();
        let h = model.regular_hessian_at(&x, &y)?;
        let hv: Vec<f64> = (0..m).flat_map(|a| (0..m).map(move |b| (a, b))).map(|(a, b)| h[(a, b)]).collect();
        dump.push(&pt, "hessian", &[m, m], &hv);
        dump.push(&pt, "semispray", &[m], &model.semispray_at(&x, &y)?);
        let nj = ctx.sc.nsource().n_jets(&x, &y, 0)?;
        let nv: Vec<f64> = nj.iter().map(|j| j.value()).collect();
        dump.push(&pt, "nconnection", &[m, m], &nv);
        let fd = anholonomy_at(ctx.sc.algebroid(), ctx.sc.nsource(), &x, &y)?;
        dump.push(&pt, "omega", &[m, m, m], &fd.omega);
    }
    ctx.emit_dump("geom", &dump)
}

pub fn curv(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let sc = &ctx.sc;
    let pts = ctx.points();
    let m = sc.algebroid().m();
    let d = 2 * m;
    let mut dump = TensorDump::default();
    for (x, y) in &pts {
        let pg = PointGeometry::new(sc.algebroid(), sc.nsource(), sc.metric_source(), x, y)?;
        let pt = pg.point().to_vec();
        let vals = |js: &[algebroid_flow::Jet]| js.iter().map(|j| j.value()).collect::<Vec<f64>>();
        let gam = pg.canonical();
        dump.push(&pt, "connection", &[d, d, d], &vals(gam));
        dump.push(&pt, "torsion", &[d, d, d], &pg.torsion(gam));
        let full = pg.curvature(gam);
        for (name, blk) in pg.curvature_blocks(gam).named() {
            dump.push(&pt, name, &[m, m, m, m], blk);
        }
        let ric = ricci(d, &full);
        let s = pg.scalar(&ric);
        dump.push(&pt, "ricci", &[d, d], &ric);
        dump.push(&pt, "einstein", &[d, d], &einstein(&ric, &pg.metric(), s));
        dump.push(&pt, "scalar", &[1], &[s]);
        dump.push(&pt, "levi_civita", &[d, d, d], &vals(pg.koszul()));
        dump.push(&pt, "distortion", &[d, d, d], &vals(&pg.distortion()));
        dump.push(&pt, "distortion_literal", &[d, d, d], &pg.distortion_literal());
        dump.push(&pt, "ricci_distortion", &[d, d], &pg.ricci_distortion(1.0));
    }
    let report = identity_suite(sc.algebroid(), sc.nsource(), sc.metric_source(), &pts, args.tol)?;
    let rep_json = pretty(&json!({ "scenario": sc.name(), "seed": args.seed, "identities": report }));
    if ctx.out_dir().is_some() {
        ctx.emit_dump("curv", &dump)?;
        ctx.write("identities.json", &rep_json)?;
    }
    println!("{rep_json}");
    if !report.pass {
        let failed: Vec<String> = report.checks.iter().filter(|c| !c.pass).map(|c| format!("{} {:e} > {:e}", c.name, c.residual, c.tol)).collect();
        return Err(Failure::invariant(format!("identity checks failed: {}", failed.join("; "))));
    }
    Ok(())
}

fn flow_setup(ctx: &Ctx) -> Result<(Flow, FlowState), Failure> {
    let mut cfg = ctx.sc.flow_config();
    if let Some(m) = ctx.args.mode() {
        cfg.mode = m;
    }
    if let Some(g) = ctx.args.grad() {
        cfg.gradient = g;
    }
    if let Some(s) = ctx.args.steps {
        cfg.steps = s;
    }
    if let Some(h) = ctx.args.dchi {
        if !(h.is_finite() && h > 0.0) {
            return Err(Failure::usage("--dchi must be positive"));
        }
        cfg.dchi = h;
    }
    let flow = ctx.sc.flow(cfg)?;
    let s0 = flow.init(ctx.sc.metric_source(), ctx.sc.file.flow.tau0).map_err(tag_init)?;
    Ok((flow, s0))
}

const SERIES_COLUMNS: [&str; 9] = ["chi", "tau", "F", "W", "E_avg", "S", "sigma", "max_mixed_ricci_residual", "min_eig_g"];

fn series_values(r: &SeriesRow) -> [f64; 9] {
    [r.chi, r.tau, r.f, r.w, r.e_avg, r.s, r.sigma, r.max_mixed_ricci_residual, r.min_eig_g]
}

fn snapshot(flow: &Flow, s: &FlowState) -> serde_json::Value {
    let g = &flow.grid;
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..g.dims()).map(|ax| g.bounds(ax)).unzip();
    json!({
        "grid": { "lo": lo, "hi": hi, "counts": g.counts() },
        "m": s.m,
        "chi": s.chi,
        "tau": s.tau,
        "gh": s.gh,
        "gv": s.gv,
        "f": s.f,
    })
}

pub fn flow(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let (flow, s0) = flow_setup(&ctx)?;
    let (last, rows) = flow.run(s0, |_| {})?;
    match ctx.format() {
        Format::Csv => {
            let body = rows.iter().map(|r| {
                let v = series_values(r);
                let mut rec = vec![clock(v[0]), clock(v[1])];
                rec.extend(v[2..].iter().map(|x| num(*x)));
                rec
            });
            ctx.emit("flow.csv", &csv_table(&SERIES_COLUMNS.map(String::from), body)?)?;
        }
        Format::Json => {
            let body: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    let map: serde_json::Map<String, serde_json::Value> =
                        SERIES_COLUMNS.iter().zip(series_values(r)).map(|(k, v)| (k.to_string(), json!(v))).collect();
                    serde_json::Value::Object(map)
                })
                .collect();
            ctx.emit("flow.json", &pretty(&serde_json::Value::Array(body)))?;
        }
    }
    ctx.write("snapshot.json", &snapshot(&flow, &last).to_string())?;
    Ok(())
}

pub fn thermo(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let mut args2 = args.clone();
    args2.steps = Some(args.steps.unwrap_or(0));
    let ctx2 = Ctx { sc: ctx.sc, args: &args2 };
    let (flow, s0) = flow_setup(&ctx2)?;
    let (s, _) = flow.run(s0, |_| {})?;
    let c = flow.curvature(&s)?;
    let th = flow.thermodynamics(&s, &c)?;
    let fr = flow.functionals(&s, &c);
    let v = json!({ "scenario": ctx2.sc.name(), "chi": s.chi, "thermo": th, "functionals": fr });
    ctx2.emit("thermo.json", &pretty(&v))?;
    if th.sigma < 0.0 {
        return Err(Failure::invariant(format!("negative fluctuation sigma = {:e}", th.sigma)));
    }
    Ok(())
}

pub fn el_integrate(args: &Common) -> Result<(), Failure> {
    let ctx = Ctx::new(args)?;
    let el = ctx.sc.file.el.clone().ok_or_else(|| Failure::from(Error::scenario("/el", "scenario has no el block")))?;
    let steps = args.steps.unwrap_or(el.steps);
    let traj = ctx.sc.model().integrate_el(&el.x0, &el.y0, el.h, steps)?;
    let (n, m) = (traj.n, traj.m);
    match ctx.format() {
        Format::Csv => {
            let mut header = vec!["tau".to_string()];
            header.extend((1..=n).map(|i| format!("x{i}")));
            header.extend((1..=m).map(|a| format!("y{a}")));
            header.push("E_L".into());
            let body = traj.rows.iter().map(|r| {
                let mut rec = vec![clock(r.tau)];
                rec.extend(r.state.iter().map(|v| num(*v)));
                rec.push(num(r.energy));
                rec
            });
            ctx.emit("trajectory.csv", &csv_table(&header, body)?)?;
        }
        Format::Json => ctx.emit("trajectory.json", &serde_json::to_string(&traj).expect("trajectory serializes"))?,
    }
    Ok(())
}
