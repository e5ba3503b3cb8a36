//! Metrics, connections, torsion, curvature, Ricci and distortion tensors on
//! the algebroid itself and on its prolongation in N-adapted frames.
//!
//! Conventions: `Γ^a_bc` is the `e_a` coefficient of `D_{e_c} e_b` (the
//! derivation index is last) and `[e_a, e_b] = W_ab^c e_c`. Three-index arrays
//! use the layout `[(a D + b) D + c]`, four-index arrays
//! `[((a D + b) D + c) D + d]`. On the prolongation `D = 2m`, horizontal
//! indices come first.

use std::cell::OnceCell;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::algebroid::AlgebroidSpec;
use crate::error::{Error, Result};
use crate::expr::{Expr, ExprScalar, VarSet};
use crate::geometry::{check_regular, AdaptedFrame, LagrangeModel, NSource};
use crate::jet::{self, Jet};

/// A local frame acting on jets.
pub trait Frame {
    fn dim(&self) -> usize;
    /// `e_a f`, one order lower than `f`.
    fn apply(&self, a: usize, f: &Jet) -> Jet;
    /// Anholonomy coefficients, `dim³` entries.
    fn w(&self) -> &[Jet];
}

fn i3(d: usize, a: usize, b: usize, c: usize) -> usize {
    (a * d + b) * d + c
}

fn i4(d: usize, a: usize, b: usize, c: usize, e: usize) -> usize {
    ((a * d + b) * d + c) * d + e
}

/// Levi-Civita connection of `g` in the frame by the Koszul formula
/// `Γ^a_bc = ½ g^{ad}(e_c g_bd + e_b g_cd − e_d g_bc + W_dc^t g_tb + W_db^t g_tc − W_bc^t g_td)`.
pub fn koszul(frame: &dyn Frame, g: &[Jet], ginv: &[Jet]) -> Vec<Jet> {
    let d = frame.dim();
    let eg: Vec<Jet> = (0..d)
        .flat_map(|c| (0..d * d).map(move |ab| (c, ab)))
        .map(|(c, ab)| frame.apply(c, &g[ab]))
        .collect();
    koszul_coefficients(d, g, ginv, &eg, frame.w())
}

/// `T^a_bc = Γ^a_bc − Γ^a_cb + W_bc^a` at the expansion point.
pub fn torsion(frame: &dyn Frame, gamma: &[Jet]) -> Vec<f64> {
    let d = frame.dim();
    let w = frame.w();
    let mut t = vec![0.0; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                t[i3(d, a, b, c)] = gamma[i3(d, a, b, c)].value() - gamma[i3(d, a, c, b)].value() + w[i3(d, b, c, a)].value();
            }
        }
    }
    t
}

/// `(D_c g)_ab = e_c g_ab − Γ^t_ac g_tb − Γ^t_bc g_at`, layout `[(c D + a) D + b]`.
pub fn nonmetricity(frame: &dyn Frame, gamma: &[Jet], g: &[Jet]) -> Vec<f64> {
    let d = frame.dim();
    let mut q = vec![0.0; d * d * d];
    for c in 0..d {
        for a in 0..d {
            for b in 0..d {
                let mut r = frame.apply(c, &g[a * d + b]).value();
                for t in 0..d {
                    r -= gamma[i3(d, t, a, c)].value() * g[t * d + b].value();
                    r -= gamma[i3(d, t, b, c)].value() * g[a * d + t].value();
                }
                q[i3(d, c, a, b)] = r;
            }
        }
    }
    q
}

/// Frame derivatives of connection coefficients: `[e][abc]` → `e_e Γ^a_bc`.
fn gamma_derivatives(frame: &dyn Frame, gamma: &[Jet]) -> Vec<f64> {
    let d = frame.dim();
    let mut out = vec![0.0; d * d * d * d];
    for (k, g) in gamma.iter().enumerate() {
        if g.is_zero() {
            continue;
        }
        for e in 0..d {
            out[e * d * d * d + k] = frame.apply(e, g).value();
        }
    }
    out
}

/// General-frame curvature
/// `R^a_bcd = e_d Γ^a_bc − e_c Γ^a_bd + Γ^f_bc Γ^a_fd − Γ^f_bd Γ^a_fc + Γ^a_bf W_cd^f`.
pub fn curvature(frame: &dyn Frame, gamma: &[Jet]) -> Vec<f64> {
    let d = frame.dim();
    let de = gamma_derivatives(frame, gamma);
    let gv: Vec<f64> = gamma.iter().map(|j| j.value()).collect();
    let wv: Vec<f64> = frame.w().iter().map(|j| j.value()).collect();
    curvature_from_values(d, &gv, &de, &wv)
}

pub(crate) fn curvature_from_values(d: usize, gv: &[f64], de: &[f64], wv: &[f64]) -> Vec<f64> {
    let d3 = d * d * d;
    let mut r = vec![0.0; d3 * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                for e in 0..d {
                    let mut v = de[e * d3 + i3(d, a, b, c)] - de[c * d3 + i3(d, a, b, e)];
                    for f in 0..d {
                        v += gv[i3(d, f, b, c)] * gv[i3(d, a, f, e)] - gv[i3(d, f, b, e)] * gv[i3(d, a, f, c)];
                        v += gv[i3(d, a, b, f)] * wv[i3(d, c, e, f)];
                    }
                    r[i4(d, a, b, c, e)] = v;
                }
            }
        }
    }
    r
}

/// `Ric_bc = R^a_bca`.
pub fn ricci(d: usize, r: &[f64]) -> Vec<f64> {
    let mut ric = vec![0.0; d * d];
    for b in 0..d {
        for c in 0..d {
            ric[b * d + c] = (0..d).map(|a| r[i4(d, a, b, c, a)]).sum();
        }
    }
    ric
}

/// `g^{ab} Ric_ab` for a full inverse metric.
pub fn scalar(d: usize, ginv: &[f64], ric: &[f64]) -> f64 {
    (0..d * d).map(|k| ginv[k] * ric[k]).sum()
}

/// `E_ab = Ric_ab − ½ g_ab s`.
pub fn einstein(ric: &[f64], g: &[f64], s: f64) -> Vec<f64> {
    ric.iter().zip(g).map(|(r, g)| r - 0.5 * g * s).collect()
}

fn values(js: &[Jet]) -> Vec<f64> {
    js.iter().map(|j| j.value()).collect()
}

/// Canonical d-connection coefficients from metric values `g`, `ginv`
/// (block diagonal, `D × D`), frame derivatives `eg[(k D + a) D + b] = e_k g_ab`
/// and the anholonomy `w`. Entries outside the four d-connection blocks are zero.
pub fn canonical_coefficients<S: ExprScalar>(m: usize, g: &[S], ginv: &[S], eg: &[S], w: &[S]) -> Vec<S> {
    let d = 2 * m;
    let zero = S::from_const(0.0, &eg[0]);
    let mut out = vec![zero.clone(); d * d * d];
    let gg = |a: usize, b: usize| &g[a * d + b];
    let gi = |a: usize, b: usize| &ginv[a * d + b];
    let egv = |k: usize, a: usize, b: usize| &eg[(k * d + a) * d + b];
    let ww = |a: usize, b: usize, c: usize| &w[i3(d, a, b, c)];
    let mut low = vec![zero.clone(); m];
    // L^α_βγ
    for b in 0..m {
        for gm in 0..m {
            for (t, lo) in low.iter_mut().enumerate() {
                let mut acc = egv(gm, b, t).add(egv(b, gm, t)).sub(egv(t, b, gm));
                for ep in 0..m {
                    acc = acc
                        .add(&gg(b, ep).mul(ww(t, gm, ep)))
                        .add(&gg(gm, ep).mul(ww(t, b, ep)))
                        .sub(&gg(t, ep).mul(ww(b, gm, ep)));
                }
                *lo = acc;
            }
            for a in 0..m {
                let mut acc = zero.clone();
                for (t, lo) in low.iter().enumerate() {
                    acc = acc.add(&gi(a, t).mul(lo));
                }
                out[i3(d, a, b, gm)] = acc.mul(&S::from_const(0.5, &zero));
            }
        }
    }
    // L^A_Bγ, with V_B N_γ^A = W_γB^A
    for b in 0..m {
        for gm in 0..m {
            for (c, lo) in low.iter_mut().enumerate() {
                let mut acc = egv(gm, m + b, m + c).clone();
                for e in 0..m {
                    acc = acc
                        .sub(&gg(m + e, m + c).mul(ww(gm, m + b, m + e)))
                        .sub(&gg(m + e, m + b).mul(ww(gm, m + c, m + e)));
                }
                *lo = acc;
            }
            for a in 0..m {
                let mut acc = zero.clone();
                for (c, lo) in low.iter().enumerate() {
                    acc = acc.add(&gi(m + a, m + c).mul(lo));
                }
                out[i3(d, m + a, m + b, gm)] = ww(gm, m + b, m + a).add(&acc.mul(&S::from_const(0.5, &zero)));
            }
        }
    }
    // B^α_βC = ½ g^{ατ} V_C g_βτ and B^A_BC = ½ g^{AD}(V_C g_BD + V_B g_CD − V_D g_BC)
    for b in 0..m {
        for c in 0..m {
            for a in 0..m {
                let mut h = zero.clone();
                let mut v = zero.clone();
                for t in 0..m {
                    h = h.add(&gi(a, t).mul(egv(m + c, b, t)));
                    let lo = egv(m + c, m + b, m + t).add(egv(m + b, m + c, m + t)).sub(egv(m + t, m + b, m + c));
                    v = v.add(&gi(m + a, m + t).mul(&lo));
                }
                let half = S::from_const(0.5, &zero);
                out[i3(d, a, b, m + c)] = h.mul(&half);
                out[i3(d, m + a, m + b, m + c)] = v.mul(&half);
            }
        }
    }
    out
}

/// Koszul formula in a general frame with metric derivatives
/// `eg[(k D + a) D + b] = e_k g_ab`.
pub fn koszul_coefficients<S: ExprScalar>(d: usize, g: &[S], ginv: &[S], eg: &[S], w: &[S]) -> Vec<S> {
    let zero = S::from_const(0.0, &eg[0]);
    let half = S::from_const(0.5, &zero);
    let egv = |k: usize, a: usize, b: usize| &eg[(k * d + a) * d + b];
    let mut low = vec![zero.clone(); d * d * d];
    for b in 0..d {
        for c in 0..d {
            for e in 0..d {
                let mut acc = egv(c, b, e).add(egv(b, c, e)).sub(egv(e, b, c));
                for t in 0..d {
                    acc = acc
                        .add(&w[i3(d, e, c, t)].mul(&g[t * d + b]))
                        .add(&w[i3(d, e, b, t)].mul(&g[t * d + c]))
                        .sub(&w[i3(d, b, c, t)].mul(&g[t * d + e]));
                }
                low[i3(d, b, c, e)] = acc.mul(&half);
            }
        }
    }
    let mut out = vec![zero; d * d * d];
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let mut acc = out[i3(d, a, b, c)].clone();
                for e in 0..d {
                    acc = acc.add(&ginv[a * d + e].mul(&low[i3(d, b, c, e)]));
                }
                out[i3(d, a, b, c)] = acc;
            }
        }
    }
    out
}

/// Frame `e_α = ρ_α^i ∂_i` on the algebroid with `W = C`.
pub struct AlgebroidFrame {
    n: usize,
    m: usize,
    rho: Vec<Jet>,
    c: Vec<Jet>,
}

impl AlgebroidFrame {
    pub fn at(alg: &AlgebroidSpec, x: &[f64], order: usize) -> Result<Self> {
        let coords: Vec<f64> = x.iter().copied().chain(std::iter::repeat_n(0.0, alg.m())).collect();
        let vals = Jet::seed_with_params(&coords, alg.vars().params(), order);
        Ok(AlgebroidFrame {
            n: alg.n(),
            m: alg.m(),
            rho: alg.rho_values(&vals)?,
            c: alg.c_values(&vals)?,
        })
    }
}

impl Frame for AlgebroidFrame {
    fn dim(&self) -> usize {
        self.m
    }

    fn apply(&self, a: usize, f: &Jet) -> Jet {
        let n = self.n;
        let mut out = Jet::from_const(0.0, &f.partial(0));
        for i in 0..n {
            let r = &self.rho[a * n + i];
            if !r.is_zero() {
                out = out.add(&r.mul(&f.partial(i)));
            }
        }
        out
    }

    fn w(&self) -> &[Jet] {
        &self.c
    }
}

/// Metric `ϖ_αβ(x)` on the algebroid itself.
#[derive(Clone, Debug)]
pub struct AlgebroidMetric {
    pub w: Vec<Expr>,
}

impl AlgebroidMetric {
    pub fn new(alg: &AlgebroidSpec, w: Vec<Expr>) -> Result<Self> {
        let m = alg.m();
        if w.len() != m * m {
            return Err(Error::Dimension(format!("algebroid metric needs {m}x{m} entries")));
        }
        if !w.iter().all(|e| e.vars_all(&|v| alg.vars().is_base(v))) {
            return Err(Error::invalid("algebroid metric may depend on x only"));
        }
        Ok(AlgebroidMetric { w })
    }

    /// Signature signs at a base point.
    pub fn signature(&self, alg: &AlgebroidSpec, x: &[f64]) -> Result<Vec<i8>> {
        let m = alg.m();
        let v = alg.vars().values(x, &vec![0.0; m])?;
        let vals: Vec<f64> = self.w.iter().map(|e| e.eval(&v)).collect::<Result<_>>()?;
        let mat = DMatrix::from_row_slice(m, m, &vals);
        Ok(mat.symmetric_eigenvalues().iter().map(|e| if *e > 0.0 { 1 } else { -1 }).collect())
    }
}

/// Levi-Civita data of an algebroid metric at a base point.
#[derive(Clone, Debug, Serialize)]
pub struct LeviCivitaPoint {
    pub m: usize,
    pub gamma: Vec<f64>,
    pub torsion: Vec<f64>,
    /// `ρ(e_γ)ϖ_αβ − Γ^τ_αγ ϖ_τβ − Γ^τ_βγ ϖ_ατ`, layout `[(γ m + α) m + β]`
    pub nonmetricity: Vec<f64>,
    pub curvature: Vec<f64>,
    pub ricci: Vec<f64>,
    pub scalar: f64,
}

/// Levi-Civita connection, torsion and curvature of `(alg, w)` at `x`.
pub fn lc_algebroid(alg: &AlgebroidSpec, w: &AlgebroidMetric, x: &[f64]) -> Result<LeviCivitaPoint> {
    let m = alg.m();
    let frame = AlgebroidFrame::at(alg, x, 2)?;
    let coords: Vec<f64> = x.iter().copied().chain(std::iter::repeat_n(0.0, m)).collect();
    let vals = Jet::seed_with_params(&coords, alg.vars().params(), 2);
    let g: Vec<Jet> = w.w.iter().map(|e| e.eval(&vals)).collect::<Result<_>>()?;
    let gm = DMatrix::from_row_slice(m, m, &values(&g));
    check_regular(&gm, x)?;
    let rows: Vec<Vec<Jet>> = g.chunks(m).map(|r| r.to_vec()).collect();
    let ginv: Vec<Jet> = jet::inverse(&rows)?.into_iter().flatten().collect();
    let gamma = koszul(&frame, &g, &ginv);
    let t = torsion(&frame, &gamma);
    let q = nonmetricity(&frame, &gamma, &g);
    let r = curvature(&frame, &gamma);
    let ric = ricci(m, &r);
    let s = scalar(m, &values(&ginv), &ric);
    Ok(LeviCivitaPoint {
        m,
        gamma: values(&gamma),
        torsion: t,
        nonmetricity: q,
        curvature: r,
        ricci: ric,
        scalar: s,
    })
}

/// Source of d-metric blocks `(g_αβ, g_AB)` as jets.
pub trait MetricSource: Sync {
    fn blocks(&self, x: &[f64], y: &[f64], order: usize) -> Result<(Vec<Jet>, Vec<Jet>)>;
}

/// Sasaki lift: both blocks are the Hessian.
impl MetricSource for LagrangeModel {
    fn blocks(&self, x: &[f64], y: &[f64], order: usize) -> Result<(Vec<Jet>, Vec<Jet>)> {
        let vals = self.jet_values(x, y, order)?;
        let h: Vec<Jet> = self.hessian().iter().map(|e| e.eval(&vals)).collect::<Result<_>>()?;
        Ok((h.clone(), h))
    }
}

/// d-metric blocks given by expressions in `(x, y)`.
#[derive(Clone, Debug)]
pub struct ExprDMetric {
    pub vars: VarSet,
    pub gh: Vec<Expr>,
    pub gv: Vec<Expr>,
}

impl MetricSource for ExprDMetric {
    fn blocks(&self, x: &[f64], y: &[f64], order: usize) -> Result<(Vec<Jet>, Vec<Jet>)> {
        let coords: Vec<f64> = x.iter().chain(y).copied().collect();
        let vals = Jet::seed_with_params(&coords, self.vars.params(), order);
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(&vals)).collect::<Result<Vec<Jet>>>();
        Ok((ev(&self.gh)?, ev(&self.gv)?))
    }
}

struct ProlongedFrame {
    inner: AdaptedFrame,
    w: Vec<Jet>,
}

impl Frame for ProlongedFrame {
    fn dim(&self) -> usize {
        2 * self.inner.m
    }

    fn apply(&self, a: usize, f: &Jet) -> Jet {
        self.inner.apply(a, f)
    }

    fn w(&self) -> &[Jet] {
        &self.w
    }
}

/// The six curvature blocks of a d-connection, each `m⁴` entries in the
/// index order of its label.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureBlocks {
    /// `R^α_εβγ`
    pub hhhh: Vec<f64>,
    /// `R^A_Bβγ`
    pub vvhh: Vec<f64>,
    /// `R^α_εβA`
    pub hhhv: Vec<f64>,
    /// `R^C_BγA`
    pub vvhv: Vec<f64>,
    /// `R^α_βBA`
    pub hhvv: Vec<f64>,
    /// `R^A_BCE`
    pub vvvv: Vec<f64>,
}

impl CurvatureBlocks {
    pub fn named(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("R^a_ebg", &self.hhhh),
            ("R^A_Bbg", &self.vvhh),
            ("R^a_ebA", &self.hhhv),
            ("R^C_BgA", &self.vvhv),
            ("R^a_bBA", &self.hhvv),
            ("R^A_BCE", &self.vvvv),
        ]
    }

    /// Read the six blocks off a full `(2m)⁴` curvature array.
    pub fn from_full(m: usize, r: &[f64]) -> Self {
        let d = 2 * m;
        let pick = |oa: usize, ob: usize, oc: usize, od: usize| {
            let mut out = Vec::with_capacity(m * m * m * m);
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        for e in 0..m {
                            out.push(r[i4(d, oa + a, ob + b, oc + c, od + e)]);
                        }
                    }
                }
            }
            out
        };
        CurvatureBlocks {
            hhhh: pick(0, 0, 0, 0),
            vvhh: pick(m, m, 0, 0),
            hhhv: pick(0, 0, 0, m),
            vvhv: pick(m, m, 0, m),
            hhvv: pick(0, 0, m, m),
            vvvv: pick(m, m, m, m),
        }
    }

    pub fn max_diff(&self, o: &CurvatureBlocks) -> f64 {
        self.named()
            .iter()
            .zip(o.named().iter())
            .flat_map(|((_, a), (_, b))| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Ricci blocks `R_αβ, R_αA, R_Aα, R_AB`, each `m²`.
#[derive(Clone, Debug, Serialize)]
pub struct RicciBlocks {
    pub hh: Vec<f64>,
    pub hv: Vec<f64>,
    pub vh: Vec<f64>,
    pub vv: Vec<f64>,
}

impl RicciBlocks {
    pub fn from_full(m: usize, ric: &[f64]) -> Self {
        let d = 2 * m;
        let pick = |oa: usize, ob: usize| {
            (0..m)
                .flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| ric[(oa + a) * d + ob + b])
                .collect()
        };
        RicciBlocks {
            hh: pick(0, 0),
            hv: pick(0, m),
            vh: pick(m, 0),
            vv: pick(m, m),
        }
    }

    /// Contractions of the block curvature: `R_αβ = R^γ_αβγ`,
    /// `R_αA = −R^γ_αγA`, `R_Aα = R^B_AαB`, `R_AB = R^C_ABC`.
    pub fn from_blocks(m: usize, r: &CurvatureBlocks) -> Self {
        let at = |blk: &[f64], a: usize, b: usize, c: usize, e: usize| blk[((a * m + b) * m + c) * m + e];
        let mut out = RicciBlocks {
            hh: vec![0.0; m * m],
            hv: vec![0.0; m * m],
            vh: vec![0.0; m * m],
            vv: vec![0.0; m * m],
        };
        for p in 0..m {
            for q in 0..m {
                for k in 0..m {
                    out.hh[p * m + q] += at(&r.hhhh, k, p, q, k);
                    out.hv[p * m + q] -= at(&r.hhhv, k, p, k, q);
                    out.vh[p * m + q] += at(&r.vvhv, k, p, q, k);
                    out.vv[p * m + q] += at(&r.vvvv, k, p, q, k);
                }
            }
        }
        out
    }

    pub fn mixed_norm(&self) -> f64 {
        self.hv.iter().chain(&self.vh).map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Blockwise comparison of the literal distortion table with `K* − Γ̂`.
#[derive(Clone, Debug, Serialize)]
pub struct DistortionComparison {
    pub block: &'static str,
    /// `max |literal − (K* − Γ̂)|`
    pub max_diff: f64,
    /// `max |K* − Γ̂|` on the block, for scale
    pub max_reference: f64,
}

/// Memoized pointwise geometry of a d-metric with an N-connection.
pub struct PointGeometry {
    m: usize,
    point: Vec<f64>,
    frame: ProlongedFrame,
    /// block-diagonal `2m × 2m` metric jets (order 2)
    g: Vec<Jet>,
    ginv: Vec<Jet>,
    canonical: OnceCell<Vec<Jet>>,
    koszul: OnceCell<Vec<Jet>>,
}

impl PointGeometry {
    pub fn new(alg: &AlgebroidSpec, nsrc: &dyn NSource, metric: &dyn MetricSource, x: &[f64], y: &[f64]) -> Result<Self> {
        let m = alg.m();
        let d = 2 * m;
        let inner = AdaptedFrame::at(alg, nsrc, x, y, 2)?;
        let w = inner.anholonomy();
        let (gh, gv) = metric.blocks(x, y, 2)?;
        let point: Vec<f64> = x.iter().chain(y).copied().collect();
        let mut ginv_blocks = Vec::new();
        for blk in [&gh, &gv] {
            let mat = DMatrix::from_row_slice(m, m, &values(blk));
            check_regular(&mat, &point)?;
            let rows: Vec<Vec<Jet>> = blk.chunks(m).map(|r| r.to_vec()).collect();
            ginv_blocks.push(jet::inverse(&rows)?);
        }
        let zero = Jet::from_const(0.0, &gh[0]);
        let mut g = vec![zero.clone(); d * d];
        let mut ginv = vec![zero; d * d];
        for a in 0..m {
            for b in 0..m {
                g[a * d + b] = gh[a * m + b].clone();
                g[(m + a) * d + m + b] = gv[a * m + b].clone();
                ginv[a * d + b] = ginv_blocks[0][a][b].clone();
                ginv[(m + a) * d + m + b] = ginv_blocks[1][a][b].clone();
            }
        }
        Ok(PointGeometry {
            m,
            point,
            frame: ProlongedFrame { inner, w },
            g,
            ginv,
            canonical: OnceCell::new(),
            koszul: OnceCell::new(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        2 * self.m
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn frame(&self) -> &dyn Frame {
        &self.frame
    }

    pub fn metric(&self) -> Vec<f64> {
        values(&self.g)
    }

    pub fn inverse_metric(&self) -> Vec<f64> {
        values(&self.ginv)
    }

    /// Full anholonomy values.
    pub fn anholonomy(&self) -> Vec<f64> {
        values(&self.frame.w)
    }

    /// `V_B N_γ^A` as a jet.
    fn dn(&self, b: usize, gamma: usize, a: usize) -> Jet {
        let fr = &self.frame.inner;
        fr.nconn[gamma * self.m + a].partial(fr.n + b)
    }

    /// Canonical d-connection coefficients (order-1 jets).
    pub fn canonical(&self) -> &[Jet] {
        self.canonical.get_or_init(|| self.build_canonical())
    }

    fn build_canonical(&self) -> Vec<Jet> {
        let eg = self.metric_derivatives();
        let w: Vec<Jet> = self.frame.w.iter().map(|j| j.truncate(1)).collect();
        canonical_coefficients(self.m, &self.g, &self.ginv, &eg, &w)
    }

    /// `e_k g_ab` at `[(k D + a) D + b]`.
    fn metric_derivatives(&self) -> Vec<Jet> {
        let d = self.dim();
        let zero = Jet::from_const(0.0, &self.g[0].partial(0));
        let mut eg = vec![zero; d * d * d];
        for k in 0..d {
            for ab in 0..d * d {
                if !self.g[ab].is_zero() {
                    eg[k * d * d + ab] = self.frame.apply(k, &self.g[ab]);
                }
            }
        }
        eg
    }

    /// Levi-Civita connection of the d-metric in the adapted frame.
    pub fn koszul(&self) -> &[Jet] {
        self.koszul.get_or_init(|| koszul(&self.frame, &self.g, &self.ginv))
    }

    /// `K* − Γ̂` as jets.
    pub fn distortion(&self) -> Vec<Jet> {
        self.koszul().iter().zip(self.canonical()).map(|(k, g)| k.sub(g)).collect()
    }

    pub fn torsion(&self, gamma: &[Jet]) -> Vec<f64> {
        torsion(&self.frame, gamma)
    }

    pub fn nonmetricity(&self, gamma: &[Jet]) -> Vec<f64> {
        nonmetricity(&self.frame, gamma, &self.g)
    }

    /// The four d-metric compatibility residuals `max|D_γ g_αβ|`,
    /// `max|D_A g_αβ|`, `max|D_γ g_AB|`, `max|D_C g_AB|`.
    pub fn compatibility(&self, gamma: &[Jet]) -> [f64; 4] {
        let m = self.m;
        let d = 2 * m;
        let q = self.nonmetricity(gamma);
        let mut out = [0.0_f64; 4];
        for c in 0..d {
            for a in 0..m {
                for b in 0..m {
                    let (hk, vk) = if c < m { (0, 2) } else { (1, 3) };
                    out[hk] = out[hk].max(q[i3(d, c, a, b)].abs());
                    out[vk] = out[vk].max(q[i3(d, c, m + a, m + b)].abs());
                }
            }
        }
        out
    }

    /// Full curvature by the general-frame formula.
    pub fn curvature(&self, gamma: &[Jet]) -> Vec<f64> {
        curvature(&self.frame, gamma)
    }

    /// The six d-curvature blocks assembled from L, B, C, Ω and the torsion
    /// block `T^A_βB = ∂_B N_β^A − L^A_Bβ`, without the general formula.
    pub fn curvature_blocks(&self, gamma: &[Jet]) -> CurvatureBlocks {
        let m = self.m;
        let d = 2 * m;
        let de = gamma_derivatives(&self.frame, gamma);
        let gv = values(gamma);
        let wv = values(&self.frame.w);
        let d3 = d * d * d;
        let l = |a: usize, b: usize, c: usize| gv[i3(d, a, b, c)];
        let dl = |e: usize, a: usize, b: usize, c: usize| de[e * d3 + i3(d, a, b, c)];
        let cst = |a: usize, b: usize, g: usize| wv[i3(d, a, b, g)];
        let omega = |a: usize, b: usize, cc: usize| wv[i3(d, a, b, m + cc)];
        // T^A_βB (h, v lower order)
        let tor = |a: usize, beta: usize, b: usize| self.dn(b, beta, a).value() - l(m + a, m + b, beta);
        let n4 = m * m * m * m;
        let mut out = CurvatureBlocks {
            hhhh: vec![0.0; n4],
            vvhh: vec![0.0; n4],
            hhhv: vec![0.0; n4],
            vvhv: vec![0.0; n4],
            hhvv: vec![0.0; n4],
            vvvv: vec![0.0; n4],
        };
        let k4 = |a: usize, b: usize, c: usize, e: usize| ((a * m + b) * m + c) * m + e;
        for p in 0..m {
            for q in 0..m {
                for r in 0..m {
                    for s in 0..m {
                        // R^α_εβγ with (α, ε, β, γ) = (p, q, r, s)
                        let mut v = dl(s, p, q, r) - dl(r, p, q, s);
                        for u in 0..m {
                            v += l(u, q, r) * l(p, u, s) - l(u, q, s) * l(p, u, r);
                            v += l(p, q, u) * cst(r, s, u);
                            v -= l(p, q, m + u) * omega(s, r, u);
                        }
                        out.hhhh[k4(p, q, r, s)] = v;

                        // R^A_Bβγ
                        let (a, b) = (m + p, m + q);
                        let mut v = dl(s, a, b, r) - dl(r, a, b, s);
                        for u in 0..m {
                            v += l(m + u, b, r) * l(a, m + u, s) - l(m + u, b, s) * l(a, m + u, r);
                            v += l(a, b, u) * cst(r, s, u);
                            v -= l(a, b, m + u) * omega(s, r, u);
                        }
                        out.vvhh[k4(p, q, r, s)] = v;

                        // R^α_εβA = V_A L^α_εβ − D_β B^α_εA + B^α_εB T^B_βA, (α, ε, β, A) = (p, q, r, s)
                        let mut dcov = dl(r, p, q, m + s);
                        for u in 0..m {
                            dcov += l(p, u, r) * l(u, q, m + s);
                            dcov -= l(u, q, r) * l(p, u, m + s);
                            dcov -= l(m + u, m + s, r) * l(p, q, m + u);
                        }
                        let mut v = dl(m + s, p, q, r) - dcov;
                        for u in 0..m {
                            v += l(p, q, m + u) * tor(u, r, s);
                        }
                        out.hhhv[k4(p, q, r, s)] = v;

                        // R^C_BγA = V_A L^C_Bγ − D_γ B^C_BA + B^C_BD T^D_γA, (C, B, γ, A) = (p, q, r, s)
                        let (cc, bb, aa) = (m + p, m + q, m + s);
                        let mut dcov = dl(r, cc, bb, aa);
                        for u in 0..m {
                            dcov += l(cc, m + u, r) * l(m + u, bb, aa);
                            dcov -= l(m + u, bb, r) * l(cc, m + u, aa);
                            dcov -= l(m + u, aa, r) * l(cc, bb, m + u);
                        }
                        let mut v = dl(aa, cc, bb, r) - dcov;
                        for u in 0..m {
                            v += l(cc, bb, m + u) * tor(u, r, s);
                        }
                        out.vvhv[k4(p, q, r, s)] = v;

                        // R^α_βBA = V_A B^α_βB − V_B B^α_βA + B^τ_βB B^α_τA − B^τ_βA B^α_τB, (α, β, B, A) = (p, q, r, s)
                        let (bb, aa) = (m + r, m + s);
                        let mut v = dl(aa, p, q, bb) - dl(bb, p, q, aa);
                        for u in 0..m {
                            v += l(u, q, bb) * l(p, u, aa) - l(u, q, aa) * l(p, u, bb);
                        }
                        out.hhvv[k4(p, q, r, s)] = v;

                        // R^A_BCE = V_E B^A_BC − V_C B^A_BE + B^F_BC B^A_FE − B^F_BE B^A_FC
                        let (a, b, c2, e2) = (m + p, m + q, m + r, m + s);
                        let mut v = dl(e2, a, b, c2) - dl(c2, a, b, e2);
                        for u in 0..m {
                            v += l(m + u, b, c2) * l(a, m + u, e2) - l(m + u, b, e2) * l(a, m + u, c2);
                        }
                        out.vvvv[k4(p, q, r, s)] = v;
                    }
                }
            }
        }
        out
    }

    /// Scalar curvature `g^{αβ}R_αβ + g^{AB}R_AB` of a full Ricci array.
    pub fn scalar(&self, ric: &[f64]) -> f64 {
        scalar(self.dim(), &self.inverse_metric(), ric)
    }

    /// The distortion table evaluated literally: every index that does not
    /// appear on the left-hand side of an entry is summed.
    pub fn distortion_literal(&self) -> Vec<f64> {
        let m = self.m;
        let d = 2 * m;
        let gam = values(self.canonical());
        let wv = values(&self.frame.w);
        let g = self.metric();
        let gi = self.inverse_metric();
        let gh = |a: usize, b: usize| g[a * d + b];
        let gvv = |a: usize, b: usize| g[(m + a) * d + m + b];
        let ghi = |a: usize, b: usize| gi[a * d + b];
        let gvi = |a: usize, b: usize| gi[(m + a) * d + m + b];
        let bh = |a: usize, b: usize, c: usize| gam[i3(d, a, b, m + c)];
        let omega = |a: usize, b: usize, c: usize| wv[i3(d, a, b, m + c)];
        let tor = |a: usize, beta: usize, b: usize| self.dn(b, beta, a).value() - gam[i3(d, m + a, m + b, beta)];
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let xi = |a: usize, t: usize, b: usize, c: usize| 0.5 * (delta(a, b) * delta(t, c) - gh(b, c) * ghi(a, t));
        let xi_pm = |s: f64, a: usize, b: usize, c: usize, dd: usize| 0.5 * (delta(a, c) * delta(b, dd) + s * gvv(c, dd) * gvi(a, b));

        let mut z = vec![0.0; d * d * d];
        let r = 0..m;
        for p in r.clone() {
            for q in r.clone() {
                for s in r.clone() {
                    // Z^A_βγ = −B^α_βB g_αγ g^{AB} − ½ Ω_βγ^A, (A, β, γ) = (p, q, s)
                    let mut v = -0.5 * omega(q, s, p);
                    for al in r.clone() {
                        for bb in r.clone() {
                            v -= bh(al, q, bb) * gh(al, s) * gvi(p, bb);
                        }
                    }
                    z[i3(d, m + p, q, s)] = v;

                    // Z^α_Bγ = ½ Ω_αγ^C g_CB g^{βα} − Ξ^{ατ}_{βγ} B^β_τB, (α, B, γ) = (p, q, s)
                    let mut v = 0.0;
                    for be in r.clone() {
                        for cc in r.clone() {
                            v += 0.5 * omega(p, s, cc) * gvv(cc, q) * ghi(be, p);
                        }
                        for t in r.clone() {
                            v -= xi(p, t, be, s) * bh(be, t, q);
                        }
                    }
                    z[i3(d, p, m + q, s)] = v;

                    // Z^A_Bγ = +Ξ^{AB}_{CD} T^C_γB, (A, B, γ) = (p, q, s)
                    let mut v = 0.0;
                    for cc in r.clone() {
                        for dd in r.clone() {
                            v += xi_pm(1.0, p, q, cc, dd) * tor(cc, s, q);
                        }
                    }
                    z[i3(d, m + p, m + q, s)] = v;

                    // Z^α_γB = ½ Ω_βγ^A g_CB g^{βα} + Ξ^{ατ}_{βγ} B^β_τB, (α, γ, B) = (p, q, s)
                    let mut v = 0.0;
                    for be in r.clone() {
                        for a in r.clone() {
                            for cc in r.clone() {
                                v += 0.5 * omega(be, q, a) * gvv(cc, s) * ghi(be, p);
                            }
                        }
                        for t in r.clone() {
                            v += xi(p, t, be, q) * bh(be, t, s);
                        }
                    }
                    z[i3(d, p, q, m + s)] = v;

                    // Z^A_βB = −−Ξ^{AD}_{CB} T^C_βD, (A, β, B) = (p, q, s)
                    let mut v = 0.0;
                    for cc in r.clone() {
                        for dd in r.clone() {
                            v -= xi_pm(-1.0, p, dd, cc, s) * tor(cc, q, dd);
                        }
                    }
                    z[i3(d, m + p, q, m + s)] = v;

                    // Z^α_AB = −½ g^{αβ}(T^C_βA g_CB + T^C_βB g_CA), (α, A, B) = (p, q, s)
                    let mut v = 0.0;
                    for be in r.clone() {
                        for cc in r.clone() {
                            v -= 0.5 * ghi(p, be) * (tor(cc, be, q) * gvv(cc, s) + tor(cc, be, s) * gvv(cc, q));
                        }
                    }
                    z[i3(d, p, m + q, m + s)] = v;
                }
            }
        }
        z
    }

    /// Compare the literal table with `K* − Γ̂` block by block.
    pub fn compare_distortion(&self) -> Vec<DistortionComparison> {
        let m = self.m;
        let d = 2 * m;
        let lit = self.distortion_literal();
        let refz = values(&self.distortion());
        let blocks: [(&'static str, usize, usize, usize); 8] = [
            ("Z^a_bg", 0, 0, 0),
            ("Z^a_gB", 0, 0, m),
            ("Z^a_Bg", 0, m, 0),
            ("Z^a_AB", 0, m, m),
            ("Z^A_bg", m, 0, 0),
            ("Z^A_bB", m, 0, m),
            ("Z^A_Bg", m, m, 0),
            ("Z^A_BC", m, m, m),
        ];
        blocks
            .iter()
            .map(|&(name, oa, ob, oc)| {
                let mut diff = 0.0_f64;
                let mut refmax = 0.0_f64;
                for a in 0..m {
                    for b in 0..m {
                        for c in 0..m {
                            let k = i3(d, oa + a, ob + b, oc + c);
                            diff = diff.max((lit[k] - refz[k]).abs());
                            refmax = refmax.max(refz[k].abs());
                        }
                    }
                }
                DistortionComparison {
                    block: name,
                    max_diff: diff,
                    max_reference: refmax,
                }
            })
            .collect()
    }

    /// Ricci distortion `Ric(Γ̂ + εZ) − Ric(Γ̂)` expanded in `Z`, for
    /// `Z = K* − Γ̂` scaled by `eps`.
    pub fn ricci_distortion(&self, eps: f64) -> Vec<f64> {
        let d = self.dim();
        let gh: Vec<f64> = values(self.canonical());
        let zj: Vec<Jet> = self.distortion().iter().map(|j| j.scale(eps)).collect();
        let z = values(&zj);
        let wv = values(&self.frame.w);
        let dz = gamma_derivatives(&self.frame, &zj);
        let d3 = d * d * d;
        let mut out = vec![0.0; d * d];
        for b in 0..d {
            for c in 0..d {
                let mut v = 0.0;
                for a in 0..d {
                    v += dz[a * d3 + i3(d, a, b, c)] - dz[c * d3 + i3(d, a, b, a)];
                    for f in 0..d {
                        let (zbc, zba) = (z[i3(d, f, b, c)], z[i3(d, f, b, a)]);
                        let (gbc, gba) = (gh[i3(d, f, b, c)], gh[i3(d, f, b, a)]);
                        v += zbc * z[i3(d, a, f, a)] - zba * z[i3(d, a, f, c)];
                        v += gbc * z[i3(d, a, f, a)] - gba * z[i3(d, a, f, c)];
                        v += zbc * gh[i3(d, a, f, a)] - zba * gh[i3(d, a, f, c)];
                        v += z[i3(d, a, b, f)] * wv[i3(d, c, a, f)];
                    }
                }
                out[b * d + c] = v;
            }
        }
        out
    }

    /// Dump rows for the named torsion blocks of a connection.
    pub fn torsion_blocks(&self, gamma: &[Jet]) -> Vec<(&'static str, Vec<f64>)> {
        let m = self.m;
        let d = 2 * m;
        let t = self.torsion(gamma);
        let pick = |oa: usize, ob: usize, oc: usize| {
            let mut out = Vec::with_capacity(m * m * m);
            for a in 0..m {
                for b in 0..m {
                    for c in 0..m {
                        out.push(t[i3(d, oa + a, ob + b, oc + c)]);
                    }
                }
            }
            out
        };
        vec![
            ("T^a_bg", pick(0, 0, 0)),
            ("T^a_bA", pick(0, 0, m)),
            ("T^A_bg", pick(m, 0, 0)),
            // printed as T^A_Ba: value ∂_B N_a^A − L^A_Ba, stored as (A, a, B)
            ("T^A_aB", pick(m, 0, m)),
            ("T^A_BC", pick(m, m, m)),
        ]
    }
}

/// Full `2m × 2m` metric in the coordinate coframe `(X^α, V^B)`:
/// `[[g_h + N g_v Nᵀ, N g_v], [g_v Nᵀ, g_v]]`, with `N[α][A] = N_α^A`.
pub fn offdiagonal_metric(gh: &DMatrix<f64>, gv: &DMatrix<f64>, n: &DMatrix<f64>) -> DMatrix<f64> {
    let m = gh.nrows();
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&(gh + n * gv * n.transpose()));
    out.view_mut((0, m), (m, m)).copy_from(&(n * gv));
    out.view_mut((m, 0), (m, m)).copy_from(&(gv * n.transpose()));
    out.view_mut((m, m), (m, m)).copy_from(gv);
    out
}

/// Matrix `E` of the adapted frame in coordinates, `e_a = E_a^{a'} ∂_{a'}`:
/// `[[I, −N], [0, I]]`.
pub fn frame_matrix(n: &DMatrix<f64>) -> DMatrix<f64> {
    let m = n.nrows();
    let mut e = DMatrix::identity(2 * m, 2 * m);
    e.view_mut((0, m), (m, m)).copy_from(&(-n));
    e
}

/// Transform bilinear-form coefficients with a frame matrix: `E G Eᵀ`.
pub fn frame_transform(coeffs: &DMatrix<f64>, e: &DMatrix<f64>) -> DMatrix<f64> {
    e * coeffs * e.transpose()
}

/// Inverse of [`frame_transform`].
pub fn frame_transform_inverse(coeffs: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = e
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain("frame matrix is not invertible".into()))?;
    Ok(frame_transform(coeffs, &inv))
}

/// `max` and `mean` of `|Ric − λ g|` per block (hh, hv, vh, vv).
#[derive(Clone, Debug, Serialize)]
pub struct SolitonResidual {
    pub lambda: f64,
    pub max: [f64; 4],
    pub mean: [f64; 4],
}

pub fn soliton_residual(m: usize, samples: &[(Vec<f64>, Vec<f64>)], lambda: f64) -> SolitonResidual {
    let d = 2 * m;
    let mut max = [0.0_f64; 4];
    let mut sum = [0.0_f64; 4];
    let mut count = [0usize; 4];
    for (ric, g) in samples {
        for a in 0..d {
            for b in 0..d {
                let blk = (a >= m) as usize * 2 + (b >= m) as usize;
                let r = (ric[a * d + b] - lambda * g[a * d + b]).abs();
                max[blk] = max[blk].max(r);
                sum[blk] += r;
                count[blk] += 1;
            }
        }
    }
    let mean = std::array::from_fn(|k| if count[k] > 0 { sum[k] / count[k] as f64 } else { 0.0 });
    SolitonResidual { lambda, max, mean }
}

/// Scan `λ` over a grid and return the residual with the smallest overall max.
pub fn soliton_scan(m: usize, samples: &[(Vec<f64>, Vec<f64>)], lambdas: &[f64]) -> Option<SolitonResidual> {
    lambdas
        .iter()
        .map(|&l| soliton_residual(m, samples, l))
        .min_by(|a, b| {
            let ka = a.max.iter().copied().fold(0.0, f64::max);
            let kb = b.max.iter().copied().fold(0.0, f64::max);
            ka.total_cmp(&kb)
        })
}
