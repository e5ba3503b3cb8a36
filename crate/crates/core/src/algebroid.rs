//! Lie algebroids in coefficient form: anchor `ρ_α^i(x)` and structure
//! functions `C_αβ^γ(x)` with `[e_α, e_β] = C_αβ^γ e_γ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprScalar, VarSet};

/// Coordinate box on which the coefficient functions are trusted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartBox {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

impl ChartBox {
    pub fn new(x: Vec<(f64, f64)>, y: Vec<(f64, f64)>) -> Result<Self> {
        for (lo, hi) in x.iter().chain(y.iter()) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("bad box interval [{lo}, {hi}]")));
            }
        }
        Ok(ChartBox { x, y })
    }

    /// Both boxes concatenated, `x` first.
    pub fn total(&self) -> Vec<(f64, f64)> {
        self.x.iter().chain(self.y.iter()).copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgebroidKind {
    /// Square invertible anchor and vanishing structure functions.
    TangentLike,
    /// Zero anchor and constant structure functions.
    LieAlgebra,
    General,
}

#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub points: usize,
    pub anchor_residual: f64,
    pub jacobi_residual: f64,
    pub antisymmetry_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct AlgebroidSpec {
    vars: VarSet,
    rho: Vec<Vec<Expr>>,
    c: Vec<Expr>,
    chart: ChartBox,
    drho: Vec<Vec<Vec<Expr>>>,
    dc: Vec<Vec<Expr>>,
}

impl AlgebroidSpec {
    /// `rho[α][i]` holds `ρ_α^i`; `structure` lists `(α, β, γ, C_αβ^γ)` with
    /// zero-based indices. Unlisted entries are zero and the mirrored entry
    /// `C_βα^γ` is filled in as `-C_αβ^γ`; if both orders are listed the
    /// antisymmetric part is kept.
    pub fn new(vars: VarSet, rho: Vec<Vec<Expr>>, structure: Vec<(usize, usize, usize, Expr)>, chart: ChartBox) -> Result<Self> {
        let (n, m) = (vars.n(), vars.m());
        if n == 0 || m == 0 {
            return Err(Error::invalid("dimensions n and m must be at least 1"));
        }
        if rho.len() != m || rho.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("anchor must be {m}x{n}")));
        }
        if chart.x.len() != n || chart.y.len() != m {
            return Err(Error::Dimension("chart box does not match (n, m)".into()));
        }
        let base_only = |e: &Expr| e.vars_all(&|v| vars.is_base(v));
        if !rho.iter().flatten().all(base_only) {
            return Err(Error::invalid("anchor coefficients may depend on x only"));
        }

        let idx = |a: usize, b: usize, g: usize| (a * m + b) * m + g;
        let mut given: Vec<Option<Expr>> = vec![None; m * m * m];
        for (a, b, g, e) in structure {
            if a >= m || b >= m || g >= m {
                return Err(Error::Dimension(format!("structure index ({a}, {b}, {g}) out of range")));
            }
            if a == b {
                return Err(Error::invalid("structure functions C_aa^g must vanish"));
            }
            if !base_only(&e) {
                return Err(Error::invalid("structure functions may depend on x only"));
            }
            if given[idx(a, b, g)].replace(e).is_some() {
                return Err(Error::invalid(format!("structure entry ({a}, {b}, {g}) listed twice")));
            }
        }
        let half = Expr::constant(0.5);
        let mut c = vec![Expr::zero(); m * m * m];
        for a in 0..m {
            for b in 0..m {
                for g in 0..m {
                    c[idx(a, b, g)] = match (&given[idx(a, b, g)], &given[idx(b, a, g)]) {
                        (Some(p), Some(q)) => half.mul(&p.sub(q)),
                        (Some(p), None) => p.clone(),
                        (None, Some(q)) => q.neg(),
                        (None, None) => Expr::zero(),
                    };
                }
            }
        }

        let drho = rho
            .iter()
            .map(|row| row.iter().map(|e| (0..n).map(|j| e.differentiate(j)).collect()).collect())
            .collect();
        let dc = c.iter().map(|e| (0..n).map(|j| e.differentiate(j)).collect()).collect();
        Ok(AlgebroidSpec {
            vars,
            rho,
            c,
            chart,
            drho,
            dc,
        })
    }

    pub fn vars(&self) -> &VarSet {
        &self.vars
    }

    pub fn n(&self) -> usize {
        self.vars.n()
    }

    pub fn m(&self) -> usize {
        self.vars.m()
    }

    pub fn chart(&self) -> &ChartBox {
        &self.chart
    }

    pub fn rho(&self, alpha: usize, i: usize) -> &Expr {
        &self.rho[alpha][i]
    }

    pub fn c(&self, alpha: usize, beta: usize, gamma: usize) -> &Expr {
        let m = self.m();
        &self.c[(alpha * m + beta) * m + gamma]
    }

    /// `ρ_α^i` at a point, row-major `[α * n + i]`. `values` is a full
    /// variable vector as produced by [`VarSet::values`].
    pub fn rho_values<S: ExprScalar>(&self, values: &[S]) -> Result<Vec<S>> {
        self.rho.iter().flatten().map(|e| e.eval(values)).collect()
    }

    /// `C_αβ^γ` at a point, indexed `[(α m + β) m + γ]`.
    pub fn c_values<S: ExprScalar>(&self, values: &[S]) -> Result<Vec<S>> {
        self.c.iter().map(|e| e.eval(values)).collect()
    }

    fn base_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.vars.values(x, &vec![0.0; self.m()])
    }

    /// Residuals of the anchor and Jacobi structure equations at a base point.
    pub fn structure_residuals(&self, x: &[f64]) -> Result<(f64, f64, f64)> {
        let (n, m) = (self.n(), self.m());
        let v = self.base_values(x)?;
        let rho = self.rho_values(&v)?;
        let c = self.c_values(&v)?;
        let drho: Vec<f64> = self.drho.iter().flatten().flatten().map(|e| e.eval(&v)).collect::<Result<_>>()?;
        let dc: Vec<f64> = self.dc.iter().flatten().map(|e| e.eval(&v)).collect::<Result<_>>()?;
        let rho_ = |a: usize, i: usize| rho[a * n + i];
        let drho_ = |a: usize, i: usize, j: usize| drho[(a * n + i) * n + j];
        let c_ = |a: usize, b: usize, g: usize| c[(a * m + b) * m + g];
        let dc_ = |a: usize, b: usize, g: usize, j: usize| dc[((a * m + b) * m + g) * n + j];

        let mut anchor = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                for j in 0..n {
                    let mut r = 0.0;
                    for i in 0..n {
                        r += rho_(a, i) * drho_(b, j, i) - rho_(b, i) * drho_(a, j, i);
                    }
                    for g in 0..m {
                        r -= rho_(g, j) * c_(a, b, g);
                    }
                    anchor = anchor.max(r.abs());
                }
            }
        }

        let mut jacobi = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                for g in 0..m {
                    for nu in 0..m {
                        let mut r = 0.0;
                        for (p, q, s) in [(a, b, g), (b, g, a), (g, a, b)] {
                            for i in 0..n {
                                r += rho_(p, i) * dc_(q, s, nu, i);
                            }
                            for mu in 0..m {
                                r += c_(q, s, mu) * c_(p, mu, nu);
                            }
                        }
                        jacobi = jacobi.max(r.abs());
                    }
                }
            }
        }

        let mut anti = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                for g in 0..m {
                    anti = anti.max((c_(a, b, g) + c_(b, a, g)).abs());
                }
            }
        }
        Ok((anchor, jacobi, anti))
    }

    /// Check the structure equations at the given base points.
    pub fn validate_structure(&self, points: &[Vec<f64>], tol: f64) -> Result<StructureReport> {
        let per_point: Vec<(f64, f64, f64)> = points
            .par_iter()
            .map(|x| self.structure_residuals(x))
            .collect::<Result<_>>()?;
        let (mut anchor, mut jacobi, mut anti) = (0.0_f64, 0.0_f64, 0.0_f64);
        for (a, j, s) in per_point {
            anchor = anchor.max(a);
            jacobi = jacobi.max(j);
            anti = anti.max(s);
        }
        Ok(StructureReport {
            points: points.len(),
            anchor_residual: anchor,
            jacobi_residual: jacobi,
            antisymmetry_residual: anti,
            tol,
            pass: anchor < tol && jacobi < tol && anti < tol,
        })
    }

    /// Classify by testing the definitions at the given base points.
    pub fn kind(&self, points: &[Vec<f64>], tol: f64) -> Result<AlgebroidKind> {
        let (n, m) = (self.n(), self.m());
        let mut tangent = n == m;
        let mut lie = true;
        let mut c0: Option<Vec<f64>> = None;
        for x in points {
            let v = self.base_values(x)?;
            let rho = self.rho_values(&v)?;
            let c = self.c_values(&v)?;
            let c_zero = c.iter().all(|x| x.abs() <= tol);
            if tangent {
                let a = nalgebra::DMatrix::from_row_slice(m, n, &rho);
                tangent = c_zero && a.determinant().abs() > tol;
            }
            if lie {
                let same = c0.as_ref().is_none_or(|c0| c0.iter().zip(&c).all(|(p, q)| (p - q).abs() <= tol));
                lie = same && rho.iter().all(|r| r.abs() <= tol);
                c0.get_or_insert(c);
            }
        }
        Ok(if tangent {
            AlgebroidKind::TangentLike
        } else if lie {
            AlgebroidKind::LieAlgebra
        } else {
            AlgebroidKind::General
        })
    }

    fn check_section(&self, s: &[Expr]) -> Result<()> {
        if s.len() != self.m() {
            return Err(Error::Dimension(format!("section needs {} coefficients", self.m())));
        }
        if !s.iter().all(|e| e.vars_all(&|v| self.vars.is_base(v))) {
            return Err(Error::invalid("section coefficients may depend on x only"));
        }
        Ok(())
    }

    /// `ρ(X)(f) = X^α ρ_α^i ∂_i f`.
    pub fn anchor_apply(&self, section: &[Expr], f: &Expr) -> Result<Expr> {
        self.check_section(section)?;
        if !f.vars_all(&|v| self.vars.is_base(v)) {
            return Err(Error::invalid("anchor acts on functions of x only"));
        }
        let df: Vec<Expr> = (0..self.n()).map(|i| f.differentiate(i)).collect();
        let mut out = Expr::zero();
        for (a, xa) in section.iter().enumerate() {
            let mut inner = Expr::zero();
            for (i, dfi) in df.iter().enumerate() {
                inner = inner.add(&self.rho[a][i].mul(dfi));
            }
            out = out.add(&xa.mul(&inner));
        }
        Ok(out)
    }

    /// `[X, Y]^γ = ρ(X)(Y^γ) - ρ(Y)(X^γ) + C_αβ^γ X^α Y^β`.
    pub fn bracket(&self, x: &[Expr], y: &[Expr]) -> Result<Vec<Expr>> {
        self.check_section(x)?;
        self.check_section(y)?;
        let m = self.m();
        (0..m)
            .map(|g| {
                let mut out = self.anchor_apply(x, &y[g])?.sub(&self.anchor_apply(y, &x[g])?);
                for a in 0..m {
                    for b in 0..m {
                        out = out.add(&self.c(a, b, g).mul(&x[a]).mul(&y[b]));
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn spec(n: usize, m: usize, rho: &[&[&str]], c: &[(usize, usize, usize, &str)]) -> AlgebroidSpec {
        let vars = VarSet::new(n, m);
        let rho = rho
            .iter()
            .map(|r| r.iter().map(|s| parse(s, &vars).unwrap()).collect())
            .collect();
        let c = c.iter().map(|&(a, b, g, s)| (a, b, g, parse(s, &vars).unwrap())).collect();
        let chart = ChartBox::new(vec![(-1.0, 1.0); n], vec![(-1.0, 1.0); m]).unwrap();
        AlgebroidSpec::new(vars, rho, c, chart).unwrap()
    }

    fn so3() -> AlgebroidSpec {
        spec(1, 3, &[&["0"], &["0"], &["0"]], &[(0, 1, 2, "1"), (1, 2, 0, "1"), (2, 0, 1, "1")])
    }

    /// Levi-Civita symbol computed by counting inversions.
    fn eps(a: usize, b: usize, c: usize) -> f64 {
        if a == b || b == c || a == c {
            return 0.0;
        }
        let inv = (a > b) as u8 + (a > c) as u8 + (b > c) as u8;
        if inv % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    #[test]
    fn so3_matches_levi_civita_and_satisfies_jacobi() {
        let s = so3();
        let c = s.c_values(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for g in 0..3 {
                    assert_eq!(c[(a * 3 + b) * 3 + g], eps(a, b, g));
                }
            }
        }
        // brute-force cyclic sum of C C over all index triples
        let mut worst = 0.0_f64;
        for a in 0..3 {
            for b in 0..3 {
                for g in 0..3 {
                    for nu in 0..3 {
                        let mut r = 0.0;
                        for mu in 0..3 {
                            r += eps(b, g, mu) * eps(a, mu, nu) + eps(g, a, mu) * eps(b, mu, nu) + eps(a, b, mu) * eps(g, mu, nu);
                        }
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
        assert_eq!(worst, 0.0);
        let rep = s.validate_structure(&[vec![0.3]], 1e-12).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(s.kind(&[vec![0.0], vec![0.5]], 1e-12).unwrap(), AlgebroidKind::LieAlgebra);
    }

    #[test]
    fn anchor_violation_is_reported() {
        let s = spec(2, 2, &[&["1", "0"], &["0", "1"]], &[(0, 1, 0, "x1")]);
        let (anchor, _, _) = s.structure_residuals(&[1.0, 0.0]).unwrap();
        // ρ_γ^j C_12^γ with ρ = δ gives |C_12^1| = 1 at x1 = 1
        assert!((anchor - 1.0).abs() < 1e-15);
        assert!(!s.validate_structure(&[vec![1.0, 0.0]], 1e-10).unwrap().pass);
    }

    #[test]
    fn anchor_apply_and_bracket() {
        let s = spec(2, 2, &[&["x2", "0"], &["0", "1"]], &[]);
        let v = s.vars().clone();
        let one = Expr::one();
        let zero = Expr::zero();
        let f = parse("x1^2", &v).unwrap();
        let r = s.anchor_apply(&[one.clone(), zero.clone()], &f).unwrap();
        assert_eq!(r.eval(&[0.7, 1.3, 0.0, 0.0]).unwrap(), 2.0 * 0.7 * 1.3);

        let so3 = so3();
        let e = |k: usize| (0..3).map(|j| if j == k { Expr::one() } else { Expr::zero() }).collect::<Vec<_>>();
        let b = so3.bracket(&e(0), &e(1)).unwrap();
        let vals: Vec<f64> = b.iter().map(|x| x.eval(&[0.0, 0.0, 0.0, 0.0]).unwrap()).collect();
        assert_eq!(vals, vec![0.0, 0.0, 1.0]);

        // Leibniz: [e1, x1 e2] = x1 [e1, e2] + e2 with ρ = δ
        let t = spec(2, 2, &[&["1", "0"], &["0", "1"]], &[]);
        let tv = t.vars().clone();
        let x1e2 = vec![Expr::zero(), parse("x1", &tv).unwrap()];
        let e1 = vec![Expr::one(), Expr::zero()];
        let b = t.bracket(&e1, &x1e2).unwrap();
        let vals: Vec<f64> = b.iter().map(|x| x.eval(&[0.4, 0.2, 0.0, 0.0]).unwrap()).collect();
        assert_eq!(vals, vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_fiber_dependence() {
        let vars = VarSet::new(1, 1);
        let rho = vec![vec![parse("y1", &vars).unwrap()]];
        let chart = ChartBox::new(vec![(0.0, 1.0)], vec![(0.0, 1.0)]).unwrap();
        assert!(AlgebroidSpec::new(vars, rho, vec![], chart).is_err());
    }
}
