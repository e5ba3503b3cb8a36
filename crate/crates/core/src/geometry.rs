//! Lagrange mechanics on an algebroid: Hessian metric, semi-spray, canonical
//! N-connection, adapted frames, anholonomy, Cartan data and the
//! Euler–Lagrange flow.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::algebroid::AlgebroidSpec;
use crate::error::{Error, Result};
use crate::expr::{Expr, ExprScalar, VarSet};
use crate::jet::{self, Jet};

/// `|det H| ≥ REG_TOL (1 + ‖H‖_∞^m)` is required for regularity.
pub const REG_TOL: f64 = 1e-10;

/// Regularity guard for an `m × m` matrix at `point`.
pub fn check_regular(h: &DMatrix<f64>, point: &[f64]) -> Result<f64> {
    let m = h.nrows() as i32;
    let norm = (0..h.nrows())
        .map(|r| h.row(r).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let threshold = REG_TOL * (1.0 + norm.powi(m));
    let det = h.determinant();
    if !(det.abs() >= threshold) {
        return Err(Error::Singular {
            point: point.to_vec(),
            det,
            threshold,
        });
    }
    Ok(det)
}

/// LU solve with partial pivoting.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::Domain("singular linear system".into()))
}

/// Index into a frame of `2m` elements: horizontal `δ_α` or vertical `V_A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameIndex {
    H(usize),
    V(usize),
}

impl FrameIndex {
    pub fn flat(self, m: usize) -> usize {
        match self {
            FrameIndex::H(a) => a,
            FrameIndex::V(a) => m + a,
        }
    }

    pub fn from_flat(k: usize, m: usize) -> Self {
        if k < m {
            FrameIndex::H(k)
        } else {
            FrameIndex::V(k - m)
        }
    }
}

/// A regular Lagrangian on an algebroid together with its symbolic
/// derivatives.
#[derive(Clone, Debug)]
pub struct LagrangeModel {
    algebroid: AlgebroidSpec,
    l: Expr,
    l_x: Vec<Expr>,
    l_y: Vec<Expr>,
    /// `[α * m + β]`
    l_yy: Vec<Expr>,
    /// `[i * m + α]`
    l_xy: Vec<Expr>,
}

impl LagrangeModel {
    pub fn new(algebroid: AlgebroidSpec, l: Expr) -> Result<Self> {
        let vars = algebroid.vars();
        let (n, m) = (vars.n(), vars.m());
        let l_x: Vec<Expr> = (0..n).map(|i| l.differentiate(vars.x(i))).collect();
        let l_y: Vec<Expr> = (0..m).map(|a| l.differentiate(vars.y(a))).collect();
        let mut l_yy = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                l_yy.push(l_y[a].differentiate(vars.y(b)));
            }
        }
        let mut l_xy = Vec::with_capacity(n * m);
        for lxi in &l_x {
            for a in 0..m {
                l_xy.push(lxi.differentiate(vars.y(a)));
            }
        }
        Ok(LagrangeModel {
            algebroid,
            l,
            l_x,
            l_y,
            l_yy,
            l_xy,
        })
    }

    pub fn algebroid(&self) -> &AlgebroidSpec {
        &self.algebroid
    }

    pub fn vars(&self) -> &VarSet {
        self.algebroid.vars()
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.l
    }

    pub fn n(&self) -> usize {
        self.algebroid.n()
    }

    pub fn m(&self) -> usize {
        self.algebroid.m()
    }

    /// Symbolic Hessian `∂²L/∂y^α∂y^β`, row-major.
    pub fn hessian(&self) -> &[Expr] {
        &self.l_yy
    }

    fn values(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.vars().values(x, y)
    }

    /// Jets of every variable at `(x, y)`.
    pub fn jet_values(&self, x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>> {
        let coords: Vec<f64> = self.values(x, y)?[..self.n() + self.m()].to_vec();
        Ok(Jet::seed_with_params(&coords, self.vars().params(), order))
    }

    pub fn eval_l(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.l.eval(&self.values(x, y)?)
    }

    pub fn hessian_at(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let v = self.values(x, y)?;
        let m = self.m();
        let vals: Vec<f64> = self.l_yy.iter().map(|e| e.eval(&v)).collect::<Result<_>>()?;
        Ok(DMatrix::from_row_slice(m, m, &vals))
    }

    /// Hessian at a point, failing if it is not regular.
    pub fn regular_hessian_at(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let h = self.hessian_at(x, y)?;
        let p: Vec<f64> = x.iter().chain(y).copied().collect();
        check_regular(&h, &p)?;
        Ok(h)
    }

    /// Hessian and semi-spray right-hand side
    /// `b_β = ρ_β^i L_{x^i} − ρ_α^i L_{x^i y^β} y^α − C_βα^γ L_{y^γ} y^α`.
    fn semispray_system<S: ExprScalar>(&self, vals: &[S]) -> Result<(Vec<S>, Vec<S>)> {
        let (n, m) = (self.n(), self.m());
        let rho = self.algebroid.rho_values(vals)?;
        let c = self.algebroid.c_values(vals)?;
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(vals)).collect::<Result<Vec<S>>>();
        let (lx, ly, lyy, lxy) = (ev(&self.l_x)?, ev(&self.l_y)?, ev(&self.l_yy)?, ev(&self.l_xy)?);
        let y = &vals[n..n + m];
        let zero = S::from_const(0.0, &vals[0]);
        let mut b = vec![zero.clone(); m];
        for (beta, bb) in b.iter_mut().enumerate() {
            let mut acc = zero.clone();
            for i in 0..n {
                acc = acc.add(&rho[beta * n + i].mul(&lx[i]));
                for a in 0..m {
                    acc = acc.sub(&rho[a * n + i].mul(&lxy[i * m + beta]).mul(&y[a]));
                }
            }
            for a in 0..m {
                for g in 0..m {
                    let cc = &c[(beta * m + a) * m + g];
                    if cc.re() != 0.0 || !cc.is_constant() {
                        acc = acc.sub(&cc.mul(&ly[g]).mul(&y[a]));
                    }
                }
            }
            *bb = acc;
        }
        Ok((lyy, b))
    }

    /// Semi-spray `φ^ε` at a point by a numeric solve.
    pub fn semispray_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let h = self.regular_hessian_at(x, y)?;
        let (_, b) = self.semispray_system(&self.values(x, y)?)?;
        Ok(solve(h, &DVector::from_vec(b))?.as_slice().to_vec())
    }

    /// Residual of `φ^β ϖ_βα + y^β(ρ_β^i L_{x^i y^α} + C_αβ^γ L_{y^γ}) − ρ_α^i L_{x^i}`.
    pub fn semispray_residual(&self, x: &[f64], y: &[f64], phi: &[f64]) -> Result<f64> {
        let (n, m) = (self.n(), self.m());
        let v = self.values(x, y)?;
        let rho = self.algebroid.rho_values(&v)?;
        let c = self.algebroid.c_values(&v)?;
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(&v)).collect::<Result<Vec<f64>>>();
        let (lx, ly, lyy, lxy) = (ev(&self.l_x)?, ev(&self.l_y)?, ev(&self.l_yy)?, ev(&self.l_xy)?);
        let mut worst = 0.0_f64;
        for a in 0..m {
            let mut r = 0.0;
            for b in 0..m {
                r += phi[b] * lyy[b * m + a];
                for i in 0..n {
                    r += y[b] * rho[b * n + i] * lxy[i * m + a];
                }
                for g in 0..m {
                    r += y[b] * c[(a * m + b) * m + g] * ly[g];
                }
            }
            for i in 0..n {
                r -= rho[a * n + i] * lx[i];
            }
            worst = worst.max(r.abs());
        }
        Ok(worst)
    }

    /// Semi-spray jets from full variable jets of some order.
    pub fn semispray_jets(&self, vals: &[Jet]) -> Result<Vec<Jet>> {
        let m = self.m();
        let (h, b) = self.semispray_system(vals)?;
        let hv = DMatrix::from_row_slice(m, m, &h.iter().map(|j| j.value()).collect::<Vec<_>>());
        let p: Vec<f64> = vals[..self.n() + m].iter().map(|j| j.value()).collect();
        check_regular(&hv, &p)?;
        let rows: Vec<Vec<Jet>> = h.chunks(m).map(|r| r.to_vec()).collect();
        jet::solve(&rows, &b)
    }

    /// Canonical N-connection `Ñ_α^γ = −½(∂φ^γ/∂y^α + y^β C_βα^γ)` as jets
    /// of the requested order, layout `[α * m + γ]`.
    pub fn nconnection_jets(&self, x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>> {
        let (n, m) = (self.n(), self.m());
        let vals = self.jet_values(x, y, order + 1)?;
        let phi = self.semispray_jets(&vals)?;
        let c = self.algebroid.c_values(&vals)?;
        let mut out = Vec::with_capacity(m * m);
        for a in 0..m {
            for g in 0..m {
                let mut acc = phi[g].partial(n + a);
                for b in 0..m {
                    acc = acc.add(&c[(b * m + a) * m + g].mul(&vals[n + b]).truncate(order));
                }
                out.push(acc.scale(-0.5));
            }
        }
        Ok(out)
    }

    pub fn nconnection_at(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.m();
        let j = self.nconnection_jets(x, y, 0)?;
        Ok(DMatrix::from_row_slice(m, m, &j.iter().map(|j| j.value()).collect::<Vec<_>>()))
    }

    /// Energy `E_L = y^α ∂L/∂y^α − L`.
    pub fn energy(&self) -> Expr {
        let vars = self.vars();
        let mut e = self.l.neg();
        for (a, ly) in self.l_y.iter().enumerate() {
            e = e.add(&Expr::var(vars.y(a)).mul(ly));
        }
        e
    }

    pub fn cartan_data(&self) -> CartanData {
        let (n, m) = (self.n(), self.m());
        let alg = &self.algebroid;
        let half = Expr::constant(0.5);
        let mut xx = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                let mut acc = Expr::zero();
                for i in 0..n {
                    acc = acc.add(&alg.rho(b, i).mul(&self.l_xy[i * m + a]));
                    acc = acc.sub(&alg.rho(a, i).mul(&self.l_xy[i * m + b]));
                }
                for g in 0..m {
                    acc = acc.add(&alg.c(a, b, g).mul(&self.l_y[g]));
                }
                xx.push(half.mul(&acc));
            }
        }
        CartanData {
            energy: self.energy(),
            theta: self.l_y.clone(),
            omega_xv: self.l_yy.clone(),
            omega_xx: xx,
            liouville: (0..m).map(|a| Expr::var(self.vars().y(a))).collect(),
        }
    }

    /// `(ẋ, ẏ)` with `ẋ^i = ρ_α^i y^α` and `ẏ` from the expanded
    /// Euler–Lagrange equations.
    pub fn euler_lagrange_rhs(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (n, m) = (self.n(), self.m());
        let v = self.values(x, y)?;
        let rho = self.algebroid.rho_values(&v)?;
        let c = self.algebroid.c_values(&v)?;
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(&v)).collect::<Result<Vec<f64>>>();
        let (lx, ly, lxy) = (ev(&self.l_x)?, ev(&self.l_y)?, ev(&self.l_xy)?);
        let xdot: Vec<f64> = (0..n).map(|i| (0..m).map(|a| rho[a * n + i] * y[a]).sum()).collect();
        let mut rhs = DVector::zeros(m);
        for a in 0..m {
            let mut r = 0.0;
            for i in 0..n {
                r += rho[a * n + i] * lx[i];
                for b in 0..m {
                    r -= lxy[i * m + a] * rho[b * n + i] * y[b];
                }
            }
            for b in 0..m {
                for g in 0..m {
                    r -= y[b] * c[(a * m + b) * m + g] * ly[g];
                }
            }
            rhs[a] = r;
        }
        let h = self.regular_hessian_at(x, y)?;
        let ydot = solve(h, &rhs)?;
        Ok((xdot, ydot.as_slice().to_vec()))
    }

    /// Fixed-step RK4 integration of the Euler–Lagrange flow.
    pub fn integrate_el(&self, x0: &[f64], y0: &[f64], h: f64, steps: usize) -> Result<Trajectory> {
        if !(h.is_finite() && h != 0.0) {
            return Err(Error::invalid("step size must be finite and nonzero"));
        }
        let (n, m) = (self.n(), self.m());
        let energy = self.energy();
        let e_at = |s: &[f64]| -> Result<f64> { energy.eval(&self.values(&s[..n], &s[n..])?) };
        let f = |s: &[f64], tau: f64| -> Result<Vec<f64>> {
            let (xd, yd) = self.euler_lagrange_rhs(&s[..n], &s[n..]).map_err(|e| match e {
                Error::Singular { det, threshold, point } => Error::Singular { point: [vec![tau], point].concat(), det, threshold },
                other => other,
            })?;
            Ok([xd, yd].concat())
        };
        let mut s: Vec<f64> = x0.iter().chain(y0).copied().collect();
        if s.len() != n + m {
            return Err(Error::Dimension("initial state does not match (n, m)".into()));
        }
        let e0 = e_at(&s)?;
        let mut rows = vec![TrajectoryRow { tau: 0.0, state: s.clone(), energy: e0 }];
        let axpy = |a: &[f64], k: &[f64], t: f64| a.iter().zip(k).map(|(p, q)| p + t * q).collect::<Vec<_>>();
        for step in 0..steps {
            let tau = step as f64 * h;
            let k1 = f(&s, tau)?;
            let k2 = f(&axpy(&s, &k1, h / 2.0), tau)?;
            let k3 = f(&axpy(&s, &k2, h / 2.0), tau)?;
            let k4 = f(&axpy(&s, &k3, h), tau)?;
            for j in 0..s.len() {
                s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
            let e = e_at(&s)?;
            rows.push(TrajectoryRow {
                tau: (step + 1) as f64 * h,
                state: s.clone(),
                energy: e,
            });
        }
        Ok(Trajectory { n, m, rows })
    }

    /// Largest difference between the Euler–Lagrange `ẏ` and `φ` over states.
    pub fn el_semispray_gap(&self, states: &[Vec<f64>]) -> Result<f64> {
        let n = self.n();
        let gaps: Vec<f64> = states
            .par_iter()
            .map(|s| {
                let (_, yd) = self.euler_lagrange_rhs(&s[..n], &s[n..])?;
                let phi = self.semispray_at(&s[..n], &s[n..])?;
                Ok(yd.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            })
            .collect::<Result<_>>()?;
        Ok(gaps.into_iter().fold(0.0, f64::max))
    }
}

#[derive(Clone, Debug)]
pub struct CartanData {
    pub energy: Expr,
    pub theta: Vec<Expr>,
    /// `X^α ∧ V^β` block (the Hessian), row-major.
    pub omega_xv: Vec<Expr>,
    /// `X^α ∧ X^β` block, row-major.
    pub omega_xx: Vec<Expr>,
    pub liouville: Vec<Expr>,
}

impl CartanData {
    /// Determinants of the Hessian and of the full `2m × 2m` matrix of the
    /// Cartan 2-section `[[2A, H], [−Hᵀ, 0]]`.
    pub fn regularity_at(&self, values: &[f64]) -> Result<(f64, f64)> {
        let m = self.theta.len();
        let ev = |es: &[Expr]| es.iter().map(|e| e.eval(values)).collect::<Result<Vec<f64>>>();
        let h = DMatrix::from_row_slice(m, m, &ev(&self.omega_xv)?);
        let a = DMatrix::from_row_slice(m, m, &ev(&self.omega_xx)?);
        let mut full = DMatrix::zeros(2 * m, 2 * m);
        full.view_mut((0, 0), (m, m)).copy_from(&(a * 2.0));
        full.view_mut((0, m), (m, m)).copy_from(&h);
        full.view_mut((m, 0), (m, m)).copy_from(&(-h.transpose()));
        Ok((h.determinant(), full.determinant()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRow {
    pub tau: f64,
    /// `x` followed by `y`.
    pub state: Vec<f64>,
    pub energy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub n: usize,
    pub m: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    /// Largest `|E_L(τ) − E_L(0)| / max(|E_L(0)|, 1e-300)`.
    pub fn max_relative_energy_drift(&self) -> f64 {
        let e0 = self.rows[0].energy;
        self.rows
            .iter()
            .map(|r| (r.energy - e0).abs() / e0.abs().max(1e-300))
            .fold(0.0, f64::max)
    }

    /// Per-step energy changes.
    pub fn energy_drift(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].energy - w[0].energy).collect()
    }
}

/// Source of N-connection coefficients as jets at a point.
pub trait NSource: Sync {
    /// `N_α^γ` at `(x, y)` with layout `[α * m + γ]`.
    fn n_jets(&self, x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>>;
}

impl NSource for LagrangeModel {
    fn n_jets(&self, x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>> {
        self.nconnection_jets(x, y, order)
    }
}

/// A user-supplied N-connection given by expressions in `(x, y)`.
#[derive(Clone, Debug)]
pub struct ExprNConnection {
    pub vars: VarSet,
    /// `[α * m + γ]`
    pub n: Vec<Expr>,
}

impl ExprNConnection {
    pub fn zero(vars: &VarSet) -> Self {
        ExprNConnection {
            vars: vars.clone(),
            n: vec![Expr::zero(); vars.m() * vars.m()],
        }
    }
}

impl NSource for ExprNConnection {
    fn n_jets(&self, x: &[f64], y: &[f64], order: usize) -> Result<Vec<Jet>> {
        let coords: Vec<f64> = x.iter().chain(y).copied().collect();
        let vals = Jet::seed_with_params(&coords, self.vars.params(), order);
        self.n.iter().map(|e| e.eval(&vals)).collect()
    }
}

/// Symbolic adapted-frame derivative for an expression N-connection:
/// `δ_α f = ρ_α^i ∂_i f − N_α^γ ∂f/∂y^γ`, `V_A f = ∂f/∂y^A`.
pub fn frame_derivative(alg: &AlgebroidSpec, n_conn: &[Expr], which: FrameIndex, f: &Expr) -> Expr {
    let (n, m) = (alg.n(), alg.m());
    let vars = alg.vars();
    match which {
        FrameIndex::V(a) => f.differentiate(vars.y(a)),
        FrameIndex::H(a) => {
            let mut out = Expr::zero();
            for i in 0..n {
                out = out.add(&alg.rho(a, i).mul(&f.differentiate(vars.x(i))));
            }
            for g in 0..m {
                out = out.sub(&n_conn[a * m + g].mul(&f.differentiate(vars.y(g))));
            }
            out
        }
    }
}

/// Jets of the anchor, structure functions and N-connection at one point:
/// everything needed to apply adapted-frame derivatives to jets.
#[derive(Clone, Debug)]
pub struct AdaptedFrame {
    pub n: usize,
    pub m: usize,
    /// `[α * n + i]`
    pub rho: Vec<Jet>,
    /// `[(α m + β) m + γ]`
    pub c: Vec<Jet>,
    /// `[α * m + γ]`
    pub nconn: Vec<Jet>,
}

impl AdaptedFrame {
    /// Build at `(x, y)` with N-connection jets of order `order`.
    pub fn at(alg: &AlgebroidSpec, nsrc: &dyn NSource, x: &[f64], y: &[f64], order: usize) -> Result<Self> {
        let coords: Vec<f64> = x.iter().chain(y).copied().collect();
        let vals = Jet::seed_with_params(&coords, alg.vars().params(), order);
        Ok(AdaptedFrame {
            n: alg.n(),
            m: alg.m(),
            rho: alg.rho_values(&vals)?,
            c: alg.c_values(&vals)?,
            nconn: nsrc.n_jets(x, y, order)?,
        })
    }

    /// `e_a f` for a flat frame index `a < 2m`; one order lower than `f`.
    pub fn apply(&self, a: usize, f: &Jet) -> Jet {
        let (n, m) = (self.n, self.m);
        if a >= m {
            return f.partial(n + a - m);
        }
        let mut out: Option<Jet> = None;
        let mut add = |term: Jet| match &mut out {
            Some(o) => *o = o.add(&term),
            None => out = Some(term),
        };
        for i in 0..n {
            let r = &self.rho[a * n + i];
            if r.is_zero() {
                continue;
            }
            add(r.mul(&f.partial(i)));
        }
        for g in 0..m {
            let nn = &self.nconn[a * m + g];
            if nn.is_zero() {
                continue;
            }
            add(nn.mul(&f.partial(n + g)).neg());
        }
        out.unwrap_or_else(|| Jet::from_const(0.0, &f.partial(0)))
    }

    /// Raw `Ω_αβ^C = δ_β N_α^C − δ_α N_β^C + C_αβ^γ N_γ^C`, layout
    /// `[(α m + β) m + C]`.
    pub fn omega_raw(&self) -> Vec<Jet> {
        let m = self.m;
        let mut out = Vec::with_capacity(m * m * m);
        for a in 0..m {
            for b in 0..m {
                for cc in 0..m {
                    let mut t = self.apply(b, &self.nconn[a * m + cc]).sub(&self.apply(a, &self.nconn[b * m + cc]));
                    for g in 0..m {
                        t = t.add(&self.c[(a * m + b) * m + g].mul(&self.nconn[g * m + cc]));
                    }
                    out.push(t);
                }
            }
        }
        out
    }

    /// Full anholonomy `[e_a, e_b] = W_ab^c e_c` over the `2m` frame, layout
    /// `[(a D + b) D + c]` with `D = 2m`. `Ω` is antisymmetrized.
    pub fn anholonomy(&self) -> Vec<Jet> {
        let (n, m) = (self.n, self.m);
        let d = 2 * m;
        let raw = self.omega_raw();
        let order = raw[0].order();
        let zero = Jet::from_const(0.0, &raw[0]);
        let mut w = vec![zero; d * d * d];
        let ix = |a: usize, b: usize, c: usize| (a * d + b) * d + c;
        for a in 0..m {
            for b in 0..m {
                for g in 0..m {
                    w[ix(a, b, g)] = self.c[(a * m + b) * m + g].truncate(order);
                    let om = raw[(a * m + b) * m + g].sub(&raw[(b * m + a) * m + g]).scale(0.5);
                    w[ix(a, b, m + g)] = om;
                    // [δ_α, V_B] = ∂_B N_α^C V_C
                    let dn = self.nconn[a * m + g].partial(n + b);
                    w[ix(m + b, a, m + g)] = dn.neg();
                    w[ix(a, m + b, m + g)] = dn;
                }
            }
        }
        w
    }
}

/// Numeric anholonomy blocks at a point.
#[derive(Clone, Debug, Serialize)]
pub struct FrameData {
    pub m: usize,
    /// `C_αβ^γ`
    pub c: Vec<f64>,
    /// antisymmetrized `Ω_αβ^C`
    pub omega: Vec<f64>,
    /// `∂_B N_α^C` at `[(B m + α) m + C]`
    pub dn: Vec<f64>,
    /// `max |Ω_raw(α, β) + Ω_raw(β, α)|`
    pub raw_antisymmetry: f64,
}

pub fn anholonomy_at(alg: &AlgebroidSpec, nsrc: &dyn NSource, x: &[f64], y: &[f64]) -> Result<FrameData> {
    let fr = AdaptedFrame::at(alg, nsrc, x, y, 1)?;
    let (n, m) = (fr.n, fr.m);
    let raw = fr.omega_raw();
    let mut omega = Vec::with_capacity(m * m * m);
    let mut anti = 0.0_f64;
    for a in 0..m {
        for b in 0..m {
            for g in 0..m {
                let p = raw[(a * m + b) * m + g].value();
                let q = raw[(b * m + a) * m + g].value();
                omega.push(0.5 * (p - q));
                anti = anti.max((p + q).abs());
            }
        }
    }
    let mut dn = Vec::with_capacity(m * m * m);
    for b in 0..m {
        for a in 0..m {
            for g in 0..m {
                dn.push(fr.nconn[a * m + g].d1(n + b));
            }
        }
    }
    Ok(FrameData {
        m,
        c: fr.c.iter().map(|j| j.value()).collect(),
        omega,
        dn,
        raw_antisymmetry: anti,
    })
}
