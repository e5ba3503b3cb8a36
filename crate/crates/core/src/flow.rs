//! N-adapted Ricci flow of a d-metric and a scaling function on a periodic
//! grid over the `(x, y)` box, with Perelman-type functionals and the
//! associated thermodynamic values.
//!
//! Frame derivatives of grid fields use 4th-order central differences with
//! periodic wrap. The anchor, N-connection and anholonomy are sampled once
//! and held fixed. The stored scaling function `f` follows
//! `∂f/∂χ = −Δf + |Df|² − sR`, which keeps `∫e^{−f}dV` fixed; the
//! τ-normalized function used for `W` and the thermodynamic values is
//! `f̆ = f − m ln(τ/τ0)`, so that `μ̆ = (4πτ)^{−m} e^{−f̆}` keeps unit mass.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::algebroid::AlgebroidSpec;
use crate::connection::{canonical_coefficients, koszul_coefficients, ricci, scalar, MetricSource, PointGeometry};
use crate::error::{Error, Result};
use crate::geometry::{AdaptedFrame, NSource};

pub const MIN_POINTS: usize = 8;
/// `c` in the step bound `dχ ≤ c h² / (1 + max|sR|)`.
pub const STABILITY: f64 = 0.1;

/// Uniform periodic grid; point `k` on an axis sits at `lo + k h`, `h = (hi − lo)/count`.
#[derive(Clone, Debug, Serialize)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != counts.len() || lo.is_empty() {
            return Err(Error::Dimension("grid bounds and counts differ in length".into()));
        }
        for (k, ((a, b), c)) in lo.iter().zip(&hi).zip(&counts).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!("grid axis {k}: need finite lo < hi")));
            }
            if *c < MIN_POINTS {
                return Err(Error::invalid(format!("grid axis {k}: at least {MIN_POINTS} points required, got {c}")));
            }
        }
        let mut strides = vec![1; counts.len()];
        for k in (0..counts.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * counts[k + 1];
        }
        Ok(Grid { lo, hi, counts, strides })
    }

    pub fn dims(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `(lo, hi)` of axis `ax`.
    pub fn bounds(&self, ax: usize) -> (f64, f64) {
        (self.lo[ax], self.hi[ax])
    }

    pub fn spacing(&self, ax: usize) -> f64 {
        (self.hi[ax] - self.lo[ax]) / self.counts[ax] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dims()).map(|k| self.spacing(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dims()).map(|k| self.spacing(k)).product()
    }

    pub fn point(&self, p: usize) -> Vec<f64> {
        (0..self.dims())
            .map(|k| self.lo[k] + ((p / self.strides[k]) % self.counts[k]) as f64 * self.spacing(k))
            .collect()
    }

    pub fn index(&self, ks: &[usize]) -> usize {
        ks.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    /// Same box with every count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        Grid::new(self.lo.clone(), self.hi.clone(), self.counts.iter().map(|c| c * factor).collect())
    }

    /// Indices at offsets −2, −1, +1, +2 along `ax`.
    fn stencil(&self, p: usize, ax: usize) -> [usize; 4] {
        let s = self.strides[ax];
        let c = self.counts[ax];
        let k = (p / s) % c;
        let at = |o: isize| {
            let kk = (k as isize + o).rem_euclid(c as isize) as usize;
            p + kk * s - k * s
        };
        [at(-2), at(-1), at(1), at(2)]
    }

    /// `out[k] += coef * ∂_ax u_{start + k}` for the components in `range`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate_axis(&self, field: &[f64], comps: usize, p: usize, ax: usize, range: std::ops::Range<usize>, coef: f64, out: &mut [f64]) {
        let [a, b, c, d] = self.stencil(p, ax);
        let s = coef / (12.0 * self.spacing(ax));
        for (o, k) in out.iter_mut().zip(range) {
            *o += s * ((field[a * comps + k] - field[d * comps + k]) + 8.0 * (field[c * comps + k] - field[b * comps + k]));
        }
    }

    /// Coordinate partials of a field with `comps` components per point,
    /// `out[ax * comps + c]`.
    fn partials(&self, field: &[f64], comps: usize, p: usize, out: &mut [f64]) {
        for ax in 0..self.dims() {
            let [a, b, c, d] = self.stencil(p, ax);
            let inv = 1.0 / (12.0 * self.spacing(ax));
            for k in 0..comps {
                let v = (field[a * comps + k] - field[d * comps + k]) + 8.0 * (field[c * comps + k] - field[b * comps + k]);
                out[ax * comps + k] = v * inv;
            }
        }
    }
}

/// Anchor, N-connection and anholonomy values sampled on the grid.
#[derive(Clone, Debug)]
pub struct FlowFrame {
    pub n: usize,
    pub m: usize,
    /// `[p][α * n + i]`
    pub rho: Vec<f64>,
    /// `[p][α * m + C]`
    pub nconn: Vec<f64>,
    /// `[p][(a D + b) D + c]`
    pub w: Vec<f64>,
}

impl FlowFrame {
    pub fn sample(alg: &AlgebroidSpec, nsrc: &dyn NSource, grid: &Grid) -> Result<Self> {
        let (n, m) = (alg.n(), alg.m());
        if grid.dims() != n + m {
            return Err(Error::Dimension(format!("grid has {} axes, expected n + m = {}", grid.dims(), n + m)));
        }
        let d3 = 8 * m * m * m;
        let per: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..grid.len())
            .into_par_iter()
            .map(|p| {
                let pt = grid.point(p);
                let fr = AdaptedFrame::at(alg, nsrc, &pt[..n], &pt[n..], 1)?;
                let w: Vec<f64> = fr.anholonomy().iter().map(|j| j.value()).collect();
                let rho = fr.rho.iter().map(|j| j.value()).collect();
                let nc = fr.nconn.iter().map(|j| j.value()).collect();
                Ok((rho, nc, w))
            })
            .collect::<Result<_>>()?;
        let mut out = FlowFrame {
            n,
            m,
            rho: Vec::with_capacity(grid.len() * m * n),
            nconn: Vec::with_capacity(grid.len() * m * m),
            w: Vec::with_capacity(grid.len() * d3),
        };
        for (r, nc, w) in per {
            out.rho.extend(r);
            out.nconn.extend(nc);
            out.w.extend(w);
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        2 * self.m
    }

    fn w_at(&self, p: usize) -> &[f64] {
        let d = self.dim();
        &self.w[p * d * d * d..(p + 1) * d * d * d]
    }

    /// Nonzero `(axis, coefficient)` pairs of `e_a` at `p`.
    fn directions(&self, p: usize, a: usize) -> SmallVec<[(usize, f64); 6]> {
        let (n, m) = (self.n, self.m);
        let mut out = SmallVec::new();
        if a >= m {
            out.push((n + a - m, 1.0));
            return out;
        }
        for i in 0..n {
            let r = self.rho[p * m * n + a * n + i];
            if r != 0.0 {
                out.push((i, r));
            }
        }
        for g in 0..m {
            let k = self.nconn[p * m * m + a * m + g];
            if k != 0.0 {
                out.push((n + g, -k));
            }
        }
        out
    }

    /// Frame derivatives from coordinate partials, `out[a * comps + c]`.
    fn apply(&self, p: usize, partials: &[f64], comps: usize, out: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        let rho = &self.rho[p * m * n..(p + 1) * m * n];
        let nc = &self.nconn[p * m * m..(p + 1) * m * m];
        for a in 0..m {
            for c in 0..comps {
                let mut v = 0.0;
                for i in 0..n {
                    let r = rho[a * n + i];
                    if r != 0.0 {
                        v += r * partials[i * comps + c];
                    }
                }
                for g in 0..m {
                    let k = nc[a * m + g];
                    if k != 0.0 {
                        v -= k * partials[(n + g) * comps + c];
                    }
                }
                out[a * comps + c] = v;
            }
        }
        for a in 0..m {
            out[(m + a) * comps..(m + a + 1) * comps].copy_from_slice(&partials[(n + a) * comps..(n + a + 1) * comps]);
        }
    }
}

/// Which connection drives the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    /// canonical d-connection Ricci tensor
    Canonical,
    /// canonical Ricci plus the Ricci distortion, i.e. the Levi-Civita Ricci tensor
    Distorted,
}

/// Reading of the gradient terms inside the `W` bracket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gradient {
    /// `τ(sR + |Df|²)`
    Squared,
    /// `τ(sR + |hDf| + |vDf|)²`
    Literal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    pub mode: FlowMode,
    pub gradient: Gradient,
    pub dchi: f64,
    pub steps: usize,
    /// abort when `max(|R_αA| + |R_Aα|)` exceeds this
    pub mixed_threshold: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            mode: FlowMode::Canonical,
            gradient: Gradient::Squared,
            dchi: 1e-3,
            steps: 10,
            mixed_threshold: None,
        }
    }
}

/// Metric blocks and scaling function on the grid.
#[derive(Clone, Debug, Serialize)]
pub struct FlowState {
    pub m: usize,
    /// `[p][α * m + β]`
    pub gh: Vec<f64>,
    /// `[p][A * m + B]`
    pub gv: Vec<f64>,
    pub f: Vec<f64>,
    pub chi: f64,
    pub tau: f64,
    pub tau0: f64,
}

impl FlowState {
    fn combine(&self, k: &Rates, h: f64) -> FlowState {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + h * y).collect();
        FlowState {
            m: self.m,
            gh: add(&self.gh, &k.gh),
            gv: add(&self.gv, &k.gv),
            f: add(&self.f, &k.f),
            chi: self.chi + h,
            tau: self.tau - h,
            tau0: self.tau0,
        }
    }

    /// The τ-normalized scaling function at grid point `p`.
    pub fn f_breve(&self, p: usize) -> f64 {
        self.f[p] - self.m as f64 * (self.tau / self.tau0).ln()
    }

    /// Smallest eigenvalue over both blocks and all points.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.m;
        self.gh
            .par_chunks(m * m)
            .chain(self.gv.par_chunks(m * m))
            .map(|b| DMatrix::from_row_slice(m, m, b).symmetric_eigenvalues().min())
            .reduce(|| f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
struct Rates {
    gh: Vec<f64>,
    gv: Vec<f64>,
    f: Vec<f64>,
}

/// Curvature and derivative data of a state on the grid.
#[derive(Clone, Debug)]
pub struct GridCurvature {
    pub d: usize,
    /// `[p][b * D + c]`
    pub ricci: Vec<f64>,
    pub scalar: Vec<f64>,
    /// `e_a f`, `[p][a]`
    pub df: Vec<f64>,
    /// `D_a D_b f = e_a e_b f − Γ^c_ba e_c f`, `[p][a * D + b]`
    pub hess: Vec<f64>,
    /// block-diagonal inverse metric, `[p][a * D + b]`
    pub ginv: Vec<f64>,
    /// `√(det g_h det g_v)`
    pub volume: Vec<f64>,
}

impl GridCurvature {
    pub fn len(&self) -> usize {
        self.scalar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scalar.is_empty()
    }

    pub fn ricci_at(&self, p: usize) -> &[f64] {
        &self.ricci[p * self.d * self.d..(p + 1) * self.d * self.d]
    }

    /// `max_p max(|R_αA| + |R_Aα|)`.
    pub fn max_mixed(&self) -> f64 {
        let d = self.d;
        let m = d / 2;
        self.ricci
            .par_chunks(d * d)
            .map(|r| {
                let mut worst = 0.0_f64;
                for a in 0..m {
                    for b in 0..m {
                        worst = worst.max(r[a * d + m + b].abs() + r[(m + b) * d + a].abs());
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn max_abs_scalar(&self) -> f64 {
        self.scalar.iter().fold(0.0_f64, |a, s| a.max(s.abs()))
    }

    /// `(|hDf|², |vDf|²)` at `p`.
    fn grad_sq(&self, p: usize) -> (f64, f64) {
        let d = self.d;
        let m = d / 2;
        let df = &self.df[p * d..(p + 1) * d];
        let gi = &self.ginv[p * d * d..(p + 1) * d * d];
        let mut h = 0.0;
        let mut v = 0.0;
        for a in 0..m {
            for b in 0..m {
                h += gi[a * d + b] * df[a] * df[b];
                v += gi[(m + a) * d + m + b] * df[m + a] * df[m + b];
            }
        }
        (h, v)
    }

    fn laplacian(&self, p: usize) -> f64 {
        let d2 = self.d * self.d;
        self.ginv[p * d2..(p + 1) * d2].iter().zip(&self.hess[p * d2..(p + 1) * d2]).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalReport {
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub mu_total: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThermoReport {
    pub z_log: f64,
    pub e_avg: f64,
    pub s: f64,
    pub sigma: f64,
    pub beta: f64,
    pub tau: f64,
    /// `W` under the configured gradient convention
    pub w: f64,
    /// `S + W` under the squared convention
    pub s_plus_w_squared: f64,
}

/// One row of the flow time series.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesRow {
    pub step: usize,
    pub chi: f64,
    pub tau: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "W")]
    pub w: f64,
    #[serde(rename = "E_avg")]
    pub e_avg: f64,
    #[serde(rename = "S")]
    pub s: f64,
    pub sigma: f64,
    pub max_mixed_ricci_residual: f64,
    pub min_eig_g: f64,
    pub mu_total: f64,
    /// `max|Δg|` over the step that produced this row
    pub max_dg: f64,
}

/// Result of one RK4 step.
#[derive(Clone, Debug)]
pub struct StepInfo {
    pub max_dg: f64,
    pub bound: f64,
}

/// Flow context: grid, frozen frame data and configuration.
pub struct Flow {
    pub grid: Grid,
    pub frame: FlowFrame,
    pub config: FlowConfig,
}

impl Flow {
    pub fn new(alg: &AlgebroidSpec, nsrc: &dyn NSource, grid: Grid, config: FlowConfig) -> Result<Self> {
        if !(config.dchi > 0.0 && config.dchi.is_finite()) {
            return Err(Error::invalid("dchi must be positive"));
        }
        let frame = FlowFrame::sample(alg, nsrc, &grid)?;
        Ok(Flow { grid, frame, config })
    }

    pub fn m(&self) -> usize {
        self.frame.m
    }

    /// Sample the d-metric and set `f` to the constant with `∫μ dV = 1`.
    pub fn init(&self, metric: &dyn MetricSource, tau0: f64) -> Result<FlowState> {
        if !(tau0 > 0.0) {
            return Err(Error::invalid("tau0 must be positive"));
        }
        let (n, m) = (self.frame.n, self.frame.m);
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..self.grid.len())
            .into_par_iter()
            .map(|p| {
                let pt = self.grid.point(p);
                let (gh, gv) = metric.blocks(&pt[..n], &pt[n..], 0)?;
                let gh: Vec<f64> = gh.iter().map(|j| j.value()).collect();
                let gv: Vec<f64> = gv.iter().map(|j| j.value()).collect();
                for (name, b) in [("horizontal", &gh), ("vertical", &gv)] {
                    if DMatrix::from_row_slice(m, m, b).cholesky().is_none() {
                        return Err(Error::NotPositive(format!("{name} block at {pt:?}")));
                    }
                }
                Ok((gh, gv))
            })
            .collect::<Result<_>>()?;
        let mut state = FlowState {
            m,
            gh: Vec::with_capacity(self.grid.len() * m * m),
            gv: Vec::with_capacity(self.grid.len() * m * m),
            f: vec![0.0; self.grid.len()],
            chi: 0.0,
            tau: tau0,
            tau0,
        };
        for (a, b) in blocks {
            state.gh.extend(a);
            state.gv.extend(b);
        }
        let vol = self.volume(&state)?;
        let f0 = vol.ln() - m as f64 * (4.0 * PI * tau0).ln();
        state.f.iter_mut().for_each(|f| *f = f0);
        Ok(state)
    }

    /// `∫dV` with `dV = √(det g_h det g_v) dx dy`.
    pub fn volume(&self, s: &FlowState) -> Result<f64> {
        let m = s.m;
        let cell = self.grid.cell_volume();
        let dets: Vec<f64> = (0..self.grid.len())
            .into_par_iter()
            .map(|p| {
                let a = DMatrix::from_row_slice(m, m, &s.gh[p * m * m..(p + 1) * m * m]).determinant();
                let b = DMatrix::from_row_slice(m, m, &s.gv[p * m * m..(p + 1) * m * m]).determinant();
                if a <= 0.0 || b <= 0.0 {
                    return Err(Error::NotPositive(format!("at {:?}", self.grid.point(p))));
                }
                Ok((a * b).sqrt())
            })
            .collect::<Result<_>>()?;
        Ok(dets.iter().sum::<f64>() * cell)
    }

    /// Curvature of the flow connection, derivatives of `f` and volume density.
    pub fn curvature(&self, s: &FlowState) -> Result<GridCurvature> {
        let m = s.m;
        let d = 2 * m;
        let (d2, d3) = (d * d, d * d * d);
        let np = self.grid.len();
        let nax = self.grid.dims();
        let mode = self.config.mode;
        let mut gamma = vec![0.0; np * d3];
        let mut ginv = vec![0.0; np * d2];
        let mut volume = vec![0.0; np];
        let mut df = vec![0.0; np * d];
        let mut trace = vec![0.0; np * d];
        gamma
            .par_chunks_mut(d3)
            .zip(ginv.par_chunks_mut(d2))
            .zip(volume.par_iter_mut())
            .zip(df.par_chunks_mut(d))
            .zip(trace.par_chunks_mut(d))
            .enumerate()
            .try_for_each(|(p, ((((gam, gi), vol), dfp), tr))| -> Result<()> {
                let mut part = vec![0.0; nax * m * m];
                let mut frame_d = vec![0.0; d * m * m];
                let mut eg = vec![0.0; d3];
                let mut g = vec![0.0; d2];
                let mut det = 1.0;
                for (blk, field) in [(0, &s.gh), (m, &s.gv)] {
                    let local = &field[p * m * m..(p + 1) * m * m];
                    let (inv, bdet) = spd_inverse(local, m).ok_or_else(|| Error::NotPositive(format!("at {:?}", self.grid.point(p))))?;
                    det *= bdet;
                    self.grid.partials(field, m * m, p, &mut part);
                    self.frame.apply(p, &part, m * m, &mut frame_d);
                    for a in 0..m {
                        for b in 0..m {
                            g[(blk + a) * d + blk + b] = local[a * m + b];
                            gi[(blk + a) * d + blk + b] = inv[a * m + b];
                            for k in 0..d {
                                eg[(k * d + blk + a) * d + blk + b] = frame_d[k * m * m + a * m + b];
                            }
                        }
                    }
                }
                *vol = det.sqrt();
                let w = self.frame.w_at(p);
                let coeffs = match mode {
                    FlowMode::Canonical => canonical_coefficients(m, &g, gi, &eg, w),
                    FlowMode::Distorted => koszul_coefficients(d, &g, gi, &eg, w),
                };
                gam.copy_from_slice(&coeffs);
                for (b, t) in tr.iter_mut().enumerate() {
                    *t = (0..d).map(|a| coeffs[(a * d + b) * d + a]).sum();
                }
                let mut fp = vec![0.0; nax];
                self.grid.partials(&s.f, 1, p, &mut fp);
                self.frame.apply(p, &fp, 1, dfp);
                Ok(())
            })?;

        let mut ric = vec![0.0; np * d2];
        let mut hess = vec![0.0; np * d2];
        let mut sc = vec![0.0; np];
        ric.par_chunks_mut(d2)
            .zip(hess.par_chunks_mut(d2))
            .zip(sc.par_iter_mut())
            .enumerate()
            .for_each(|(p, ((r, h), sp))| {
                let gv = &gamma[p * d3..(p + 1) * d3];
                let w = self.frame.w_at(p);
                let ix = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
                // div[b D + c] = e_a Γ^a_bc
                let mut div = vec![0.0; d2];
                for a in 0..d {
                    for (ax, coef) in self.frame.directions(p, a) {
                        self.grid.accumulate_axis(&gamma, d3, p, ax, a * d2..(a + 1) * d2, coef, &mut div);
                    }
                }
                // etr[c D + b] = e_c Γ^a_ba
                let mut tpart = vec![0.0; nax * d];
                let mut etr = vec![0.0; d2];
                self.grid.partials(&trace, d, p, &mut tpart);
                self.frame.apply(p, &tpart, d, &mut etr);
                let trp = &trace[p * d..(p + 1) * d];
                for b in 0..d {
                    for c in 0..d {
                        let mut v = div[b * d + c] - etr[c * d + b];
                        for f in 0..d {
                            v += gv[ix(f, b, c)] * trp[f];
                        }
                        for a in 0..d {
                            for f in 0..d {
                                let x = gv[ix(f, b, a)];
                                if x != 0.0 {
                                    v -= x * gv[ix(a, f, c)];
                                }
                                let wv = w[ix(c, a, f)];
                                if wv != 0.0 {
                                    v += gv[ix(a, b, f)] * wv;
                                }
                            }
                        }
                        r[b * d + c] = v;
                    }
                }
                *sp = scalar(d, &ginv[p * d2..(p + 1) * d2], r);
                let mut dpart = vec![0.0; nax * d];
                let mut ddf = vec![0.0; d2];
                self.grid.partials(&df, d, p, &mut dpart);
                self.frame.apply(p, &dpart, d, &mut ddf);
                let dfp = &df[p * d..(p + 1) * d];
                for a in 0..d {
                    for b in 0..d {
                        let mut v = ddf[a * d + b];
                        for c in 0..d {
                            v -= gv[ix(c, b, a)] * dfp[c];
                        }
                        h[a * d + b] = v;
                    }
                }
            });
        Ok(GridCurvature {
            d,
            ricci: ric,
            scalar: sc,
            df,
            hess,
            ginv,
            volume,
        })
    }

    fn rates(&self, s: &FlowState, c: &GridCurvature) -> Rates {
        let m = s.m;
        let d = 2 * m;
        let np = self.grid.len();
        let mut gh = vec![0.0; np * m * m];
        let mut gv = vec![0.0; np * m * m];
        let mut f = vec![0.0; np];
        for p in 0..np {
            let r = c.ricci_at(p);
            for a in 0..m {
                for b in 0..m {
                    gh[p * m * m + a * m + b] = -(r[a * d + b] + r[b * d + a]);
                    gv[p * m * m + a * m + b] = -(r[(m + a) * d + m + b] + r[(m + b) * d + m + a]);
                }
            }
            let (h2, v2) = c.grad_sq(p);
            f[p] = -c.laplacian(p) + h2 + v2 - c.scalar[p];
        }
        Rates { gh, gv, f }
    }

    /// Largest admissible step for a state with curvature `c`.
    pub fn stability_bound(&self, c: &GridCurvature) -> f64 {
        let h = self.grid.min_spacing();
        STABILITY * h * h / (1.0 + c.max_abs_scalar())
    }

    /// One RK4 step of size `config.dchi`; `c` is the curvature of `s`.
    pub fn step(&self, s: &FlowState, c: &GridCurvature) -> Result<(FlowState, StepInfo)> {
        let h = self.config.dchi;
        let bound = self.stability_bound(c);
        if h > bound {
            return Err(Error::Unstable(format!("dchi = {h:e} exceeds the bound {bound:e}")));
        }
        if s.tau - h <= 0.0 {
            return Err(Error::Unstable(format!("tau would reach {:e}", s.tau - h)));
        }
        let k1 = self.rates(s, c);
        let s2 = s.combine(&k1, 0.5 * h);
        let k2 = self.rates(&s2, &self.curvature(&s2)?);
        let s3 = s.combine(&k2, 0.5 * h);
        let k3 = self.rates(&s3, &self.curvature(&s3)?);
        let s4 = s.combine(&k3, h);
        let k4 = self.rates(&s4, &self.curvature(&s4)?);
        let mix = |a: &[f64], k: [&[f64]; 4]| -> Vec<f64> {
            a.iter()
                .enumerate()
                .map(|(i, x)| x + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
                .collect()
        };
        let next = FlowState {
            m: s.m,
            gh: mix(&s.gh, [&k1.gh, &k2.gh, &k3.gh, &k4.gh]),
            gv: mix(&s.gv, [&k1.gv, &k2.gv, &k3.gv, &k4.gv]),
            f: mix(&s.f, [&k1.f, &k2.f, &k3.f, &k4.f]),
            chi: s.chi + h,
            tau: s.tau - h,
            tau0: s.tau0,
        };
        let max_dg = next
            .gh
            .iter()
            .zip(&s.gh)
            .chain(next.gv.iter().zip(&s.gv))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Ok((next, StepInfo { max_dg, bound }))
    }

    /// `∫μ̆ dV`.
    pub fn mu_total(&self, s: &FlowState, c: &GridCurvature) -> f64 {
        let pre = (4.0 * PI * s.tau).powi(-(s.m as i32));
        let cell = self.grid.cell_volume();
        (0..self.grid.len()).map(|p| pre * (-s.f_breve(p)).exp() * c.volume[p]).sum::<f64>() * cell
    }

    /// Shift `f` by a constant so that `∫μ̆ dV = 1`; returns the shift.
    /// The volume density does not depend on `f`, so `c` stays valid.
    pub fn normalize(&self, s: &mut FlowState, c: &GridCurvature) -> f64 {
        let shift = self.mu_total(s, c).ln();
        s.f.iter_mut().for_each(|f| *f += shift);
        shift
    }

    pub fn functionals(&self, s: &FlowState, c: &GridCurvature) -> FunctionalReport {
        let m = s.m as f64;
        let cell = self.grid.cell_volume();
        let pre = (4.0 * PI * s.tau).powf(-m);
        let mut big_f = 0.0;
        let mut big_w = 0.0;
        let mut mu = 0.0;
        for p in 0..self.grid.len() {
            let (h2, v2) = c.grad_sq(p);
            let sr = c.scalar[p];
            let dv = c.volume[p] * cell;
            big_f += (sr + h2 + v2) * (-s.f[p]).exp() * dv;
            let fb = s.f_breve(p);
            let mup = pre * (-fb).exp() * dv;
            let bracket = match self.config.gradient {
                Gradient::Squared => s.tau * (sr + h2 + v2),
                Gradient::Literal => s.tau * (sr + h2.sqrt() + v2.sqrt()).powi(2),
            };
            big_w += (bracket + fb - 2.0 * m) * mup;
            mu += mup;
        }
        FunctionalReport {
            f: big_f,
            w: big_w,
            mu_total: mu,
        }
    }

    pub fn thermodynamics(&self, s: &FlowState, c: &GridCurvature) -> Result<ThermoReport> {
        if !(s.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", s.tau)));
        }
        let m = s.m as f64;
        let d = 2 * s.m;
        let tau = s.tau;
        let cell = self.grid.cell_volume();
        let pre = (4.0 * PI * tau).powf(-m);
        let mut e = 0.0;
        let mut ent = 0.0;
        let mut sig = 0.0;
        let mut zl = 0.0;
        let mut wsq = 0.0;
        let mut g = vec![0.0; d * d];
        let mut t = vec![0.0; d * d];
        for p in 0..self.grid.len() {
            let (h2, v2) = c.grad_sq(p);
            let sr = c.scalar[p];
            let fb = s.f_breve(p);
            let mup = pre * (-fb).exp() * c.volume[p] * cell;
            e += (sr + h2 + v2 - m / tau) * mup;
            let sq = tau * (sr + h2 + v2) + fb - 2.0 * m;
            ent -= sq * mup;
            wsq += sq * mup;
            zl += (-fb + m) * mup;
            self.full_metric(s, p, &mut g);
            let r = c.ricci_at(p);
            let hs = &c.hess[p * d * d..(p + 1) * d * d];
            for k in 0..d * d {
                t[k] = r[k] + hs[k] - g[k] / (2.0 * tau);
            }
            let gi = &c.ginv[p * d * d..(p + 1) * d * d];
            let mut norm = 0.0;
            for a in 0..d {
                for b in 0..d {
                    for cc in 0..d {
                        let gac = gi[a * d + cc];
                        if gac == 0.0 {
                            continue;
                        }
                        for dd in 0..d {
                            norm += gac * gi[b * d + dd] * t[a * d + b] * t[cc * d + dd];
                        }
                    }
                }
            }
            sig += norm * mup;
        }
        let w = self.functionals(s, c).w;
        Ok(ThermoReport {
            z_log: zl,
            e_avg: -tau * tau * e,
            s: ent,
            sigma: 2.0 * tau.powi(4) * sig,
            beta: 1.0 / tau,
            tau,
            w,
            s_plus_w_squared: ent + wsq,
        })
    }

    fn full_metric(&self, s: &FlowState, p: usize, out: &mut [f64]) {
        let m = s.m;
        let d = 2 * m;
        out.iter_mut().for_each(|x| *x = 0.0);
        for a in 0..m {
            for b in 0..m {
                out[a * d + b] = s.gh[p * m * m + a * m + b];
                out[(m + a) * d + m + b] = s.gv[p * m * m + a * m + b];
            }
        }
    }

    fn row(&self, step: usize, s: &FlowState, c: &GridCurvature, max_dg: f64) -> Result<SeriesRow> {
        let fr = self.functionals(s, c);
        let th = self.thermodynamics(s, c)?;
        Ok(SeriesRow {
            step,
            chi: s.chi,
            tau: s.tau,
            f: fr.f,
            w: fr.w,
            e_avg: th.e_avg,
            s: th.s,
            sigma: th.sigma,
            max_mixed_ricci_residual: c.max_mixed(),
            min_eig_g: s.min_eigenvalue(),
            mu_total: fr.mu_total,
            max_dg,
        })
    }

    /// Run `config.steps` steps from `s0`, renormalizing `f` after each one.
    /// `on_row` sees the initial row and one row per step. Errors carry the
    /// failing step index.
    pub fn run(&self, s0: FlowState, mut on_row: impl FnMut(&SeriesRow)) -> Result<(FlowState, Vec<SeriesRow>)> {
        let mut s = s0;
        let mut c = self.curvature(&s)?;
        self.normalize(&mut s, &c);
        let mut rows = Vec::with_capacity(self.config.steps + 1);
        let first = self.row(0, &s, &c, 0.0)?;
        self.check_mixed(0, &first)?;
        on_row(&first);
        rows.push(first);
        for k in 1..=self.config.steps {
            let at = |e: Error| tag_step(k, e);
            let (mut next, info) = self.step(&s, &c).map_err(at)?;
            let nc = self.curvature(&next).map_err(at)?;
            self.normalize(&mut next, &nc);
            let row = self.row(k, &next, &nc, info.max_dg).map_err(at)?;
            self.check_mixed(k, &row)?;
            on_row(&row);
            rows.push(row);
            s = next;
            c = nc;
        }
        Ok((s, rows))
    }

    fn check_mixed(&self, k: usize, row: &SeriesRow) -> Result<()> {
        match self.config.mixed_threshold {
            Some(t) if row.max_mixed_ricci_residual > t => Err(Error::Invariant(format!(
                "step {k}: mixed Ricci residual {:e} exceeds {t:e}",
                row.max_mixed_ricci_residual
            ))),
            _ => Ok(()),
        }
    }
}

/// Inverse and determinant of a symmetric positive definite `m × m` matrix
/// by Cholesky factorization; `None` if it is not positive definite.
fn spd_inverse(a: &[f64], m: usize) -> Option<(Vec<f64>, f64)> {
    let mut l = vec![0.0; m * m];
    let mut det = 1.0;
    for j in 0..m {
        let mut s = a[j * m + j];
        for k in 0..j {
            s -= l[j * m + k] * l[j * m + k];
        }
        if !(s > 0.0) {
            return None;
        }
        let ljj = s.sqrt();
        l[j * m + j] = ljj;
        det *= s;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = s / ljj;
        }
    }
    // A^{-1} = L^{-T} L^{-1}
    let mut li = vec![0.0; m * m];
    for j in 0..m {
        li[j * m + j] = 1.0 / l[j * m + j];
        for i in j + 1..m {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * m + k] * li[k * m + j];
            }
            li[i * m + j] = s / l[i * m + i];
        }
    }
    let mut inv = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (i..m).map(|k| li[k * m + i] * li[k * m + j]).sum();
            inv[i * m + j] = s;
            inv[j * m + i] = s;
        }
    }
    Some((inv, det))
}

fn tag_step(k: usize, e: Error) -> Error {
    match e {
        Error::NotPositive(s) => Error::NotPositive(format!("step {k}: {s}")),
        Error::Unstable(s) => Error::Unstable(format!("step {k}: {s}")),
        Error::Domain(s) => Error::Domain(format!("step {k}: {s}")),
        other => other,
    }
}

/// Ricci tensor and scalar curvature of the flow connection at one point,
/// evaluated by exact differentiation (no grid).
pub fn point_ricci(
    alg: &AlgebroidSpec,
    nsrc: &dyn NSource,
    metric: &dyn MetricSource,
    mode: FlowMode,
    x: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let pg = PointGeometry::new(alg, nsrc, metric, x, y)?;
    let gamma = match mode {
        FlowMode::Canonical => pg.canonical(),
        FlowMode::Distorted => pg.koszul(),
    };
    let ric = ricci(pg.dim(), &pg.curvature(gamma));
    let s = pg.scalar(&ric);
    Ok((ric, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::ChartBox;
    use crate::connection::ExprDMetric;
    use crate::expr::{parse, Expr, VarSet};
    use crate::geometry::{ExprNConnection, LagrangeModel};

    fn tangent2() -> (AlgebroidSpec, VarSet) {
        let vars = VarSet::new(2, 2);
        let p = |s: &str| parse(s, &vars).unwrap();
        let rho = vec![vec![p("1"), p("0")], vec![p("0"), p("1")]];
        let tp = 2.0 * PI;
        let chart = ChartBox::new(vec![(0.0, tp); 2], vec![(0.0, tp); 2]).unwrap();
        (AlgebroidSpec::new(vars.clone(), rho, vec![], chart).unwrap(), vars)
    }

    fn box_grid(counts: [usize; 4]) -> Grid {
        Grid::new(vec![0.0; 4], vec![2.0 * PI; 4], counts.to_vec()).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = Grid::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![8, 10]).unwrap();
        assert_eq!(g.len(), 80);
        assert_eq!(g.point(g.index(&[3, 5])), vec![0.375, 0.0]);
        assert_eq!(g.stencil(g.index(&[0, 0]), 0), [g.index(&[6, 0]), g.index(&[7, 0]), g.index(&[1, 0]), g.index(&[2, 0])]);
        assert!(Grid::new(vec![0.0], vec![1.0], vec![7]).is_err());
        assert!(Grid::new(vec![1.0], vec![1.0], vec![8]).is_err());
    }

    #[test]
    fn spd_inverse_matches_nalgebra() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0];
        let (inv, det) = spd_inverse(&a, 3).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &a);
        let want = m.clone().try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((inv[i * 3 + j] - want[(i, j)]).abs() < 1e-14);
            }
        }
        assert!((det - m.determinant()).abs() < 1e-12);
        assert!(spd_inverse(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn fd_is_fourth_order() {
        let err = |n: usize| {
            let g = Grid::new(vec![0.0], vec![2.0 * PI], vec![n]).unwrap();
            let u: Vec<f64> = (0..n).map(|p| g.point(p)[0].sin()).collect();
            let mut out = [0.0];
            (0..n)
                .map(|p| {
                    g.partials(&u, 1, p, &mut out);
                    (out[0] - g.point(p)[0].cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 15.0 && ratio < 17.0, "{ratio}");
    }

    #[test]
    fn free_particle_init_and_flat_stationarity() {
        let (alg, vars) = tangent2();
        let model = LagrangeModel::new(alg.clone(), parse("(y1^2 + y2^2)/2", &vars).unwrap()).unwrap();
        let cfg = FlowConfig {
            dchi: 1e-3,
            steps: 3,
            ..FlowConfig::default()
        };
        let flow = Flow::new(&alg, &model, box_grid([8; 4]), cfg).unwrap();
        let s = flow.init(&model, 1.0).unwrap();
        assert!(s.gh.chunks(4).all(|b| b == [1.0, 0.0, 0.0, 1.0]));
        let vol = (2.0 * PI).powi(4);
        // independent: (4π)^{-2} e^{-f} vol = 1
        let want = vol.ln() - 2.0 * (4.0 * PI).ln();
        assert!((s.f[0] - want).abs() < 1e-12);
        let c = flow.curvature(&s).unwrap();
        assert!(c.ricci.iter().all(|r| *r == 0.0));
        let fr = flow.functionals(&s, &c);
        assert_eq!(fr.f, 0.0);
        assert!((fr.mu_total - 1.0).abs() < 1e-12);
        assert!((fr.w - (s.f[0] - 4.0)).abs() < 1e-12);
        let th = flow.thermodynamics(&s, &c).unwrap();
        assert!((th.e_avg - 2.0).abs() < 1e-12);
        assert!(th.s_plus_w_squared.abs() < 1e-12);
        let (_, rows) = flow.run(s, |_| {}).unwrap();
        assert!(rows.iter().all(|r| r.max_dg == 0.0 && r.f == 0.0));
    }

    #[test]
    fn normalize_is_a_group_action() {
        let (alg, vars) = tangent2();
        let model = LagrangeModel::new(alg.clone(), parse("(y1^2 + y2^2)/2", &vars).unwrap()).unwrap();
        let flow = Flow::new(&alg, &model, box_grid([8; 4]), FlowConfig::default()).unwrap();
        let mut s = flow.init(&model, 0.7).unwrap();
        let c = flow.curvature(&s).unwrap();
        assert!(flow.normalize(&mut s, &c).abs() < 1e-12);
        let orig = s.f.clone();
        let mut t = s.clone();
        t.f.iter_mut().for_each(|f| *f += 1.0);
        flow.normalize(&mut t, &c);
        assert!(t.f.iter().zip(&orig).all(|(a, b)| (a - b).abs() < 1e-12));
        for (p, f) in s.f.iter_mut().enumerate() {
            *f += 1.0 + 0.3 * (p as f64 * 0.37).sin();
        }
        flow.normalize(&mut s, &c);
        assert!((flow.mu_total(&s, &c) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_data_one_step_taylor() {
        // so(3)-type rigid body: constant metric and connection, so the flow
        // is the ODE dg/dχ = −2 Ric(g).
        let mut vars = VarSet::new(1, 3);
        vars.add_param("I1", 1.0).unwrap();
        let rho = vec![vec![Expr::zero()]; 3];
        let c = vec![(0, 1, 2, Expr::one()), (1, 2, 0, Expr::one()), (2, 0, 1, Expr::one())];
        let chart = ChartBox::new(vec![(0.0, 1.0)], vec![(-1.0, 1.0); 3]).unwrap();
        let alg = AlgebroidSpec::new(vars.clone(), rho, c, chart).unwrap();
        let model = LagrangeModel::new(alg.clone(), parse("(y1^2 + 2*y2^2 + 3*y3^2)/2", &vars).unwrap()).unwrap();
        let grid = Grid::new(vec![0.0, -1.0, -1.0, -1.0], vec![1.0; 4], vec![8; 4]).unwrap();
        let dchi = 1e-4;
        let flow = Flow::new(
            &alg,
            &model,
            grid,
            FlowConfig {
                dchi,
                ..FlowConfig::default()
            },
        )
        .unwrap();
        let s = flow.init(&model, 1.0).unwrap();
        let c0 = flow.curvature(&s).unwrap();
        let (ric, sr) = point_ricci(&alg, &model, &model, FlowMode::Canonical, &[0.5], &[0.1, 0.2, -0.3]).unwrap();
        for p in [0, 77, 4000] {
            assert!(c0.ricci_at(p).iter().zip(&ric).all(|(a, b)| (a - b).abs() < 1e-8));
            assert!((c0.scalar[p] - sr).abs() < 1e-8);
        }
        let (next, _) = flow.step(&s, &c0).unwrap();
        let m = 3;
        let d = 6;
        for a in 0..m {
            for b in 0..m {
                let want = -(ric[a * d + b] + ric[b * d + a]) * dchi;
                let got = next.gh[a * m + b] - s.gh[a * m + b];
                assert!((got - want).abs() < 10.0 * dchi * dchi, "{got} {want}");
            }
        }
    }

    #[test]
    fn grid_matches_exact_on_smooth_data() {
        let (alg, vars) = tangent2();
        let p = |s: &str| parse(s, &vars).unwrap();
        let metric = ExprDMetric {
            vars: vars.clone(),
            gh: vec![p("1 + 0.1*sin(x1)*cos(x2)"), p("0.05*sin(x2)"), p("0.05*sin(x2)"), p("1")],
            gv: vec![p("1 + 0.1*cos(y1)"), p("0"), p("0"), p("1 + 0.1*sin(y1 + y2) + 0.05*cos(x1)")],
        };
        let nc = ExprNConnection::zero(&vars);
        let err = |k: usize, mode: FlowMode| {
            let cfg = FlowConfig {
                mode,
                ..FlowConfig::default()
            };
            let flow = Flow::new(&alg, &nc, box_grid([k; 4]), cfg).unwrap();
            let s = flow.init(&metric, 1.0).unwrap();
            let c = flow.curvature(&s).unwrap();
            let mut worst = 0.0_f64;
            for idx in [[0, 1, 2, 3], [3, 2, 1, 0], [1, 5, 7, 2]] {
                let q = flow.grid.index(&idx.map(|i| i * k / 8));
                let pt = flow.grid.point(q);
                let (ric, _) = point_ricci(&alg, &nc, &metric, mode, &pt[..2], &pt[2..]).unwrap();
                for (a, b) in c.ricci_at(q).iter().zip(&ric) {
                    worst = worst.max((a - b).abs());
                }
            }
            worst
        };
        for mode in [FlowMode::Canonical, FlowMode::Distorted] {
            let e8 = err(8, mode);
            let e16 = err(16, mode);
            assert!(e16 < 1e-3, "{e16}");
            assert!(e8 / e16 > 10.0, "{mode:?}: {e8} {e16}");
        }
    }
}
