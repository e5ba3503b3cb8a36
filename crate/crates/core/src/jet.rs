//! Truncated multivariate Taylor expansions ("jets").
//!
//! A [`Jet`] of order `r` over `d` variables stores the Taylor coefficients
//! `f_α = ∂^α f / α!` for every multi-index with `|α| ≤ r`. Arithmetic is exact
//! up to truncation, so derivatives of quantities obtained through pointwise
//! numeric solves (inverse Hessians and the like) are exact to rounding.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::expr::ExprScalar;

/// Order of the shared spaces used by [`Jet::seed`]. Jets of lower order
/// live in the same space so they can be combined freely.
pub const MAX_ORDER: usize = 4;

type Coeffs = SmallVec<[f64; 8]>;
type MultiIndex = SmallVec<[u8; 8]>;

/// Monomial layout and multiplication tables for `d` variables up to order
/// `k`. Spaces are interned, see [`JetSpace::get`].
pub struct JetSpace {
    d: usize,
    k: usize,
    monomials: Vec<MultiIndex>,
    /// `len_upto[r]` = number of monomials with degree ≤ r.
    len_upto: Vec<usize>,
    index: HashMap<MultiIndex, usize>,
    /// `(i, j, i*j)` triples sorted by the degree of the product.
    mul_table: Vec<(u32, u32, u32)>,
    /// `mul_end[r]` = number of table entries whose product has degree ≤ r.
    mul_end: Vec<usize>,
    /// `raise[i * d + v]` = index of `α_i + e_v`, or `usize::MAX` past order.
    raise: Vec<usize>,
}

impl fmt::Debug for JetSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JetSpace(d={}, k={})", self.d, self.k)
    }
}

impl JetSpace {
    /// Interned space for `d` variables and maximum order `k`.
    pub fn get(d: usize, k: usize) -> &'static JetSpace {
        static SPACES: OnceLock<Mutex<HashMap<(usize, usize), &'static JetSpace>>> = OnceLock::new();
        let map = SPACES.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = map.lock().unwrap_or_else(|e| e.into_inner());
        map.entry((d, k))
            .or_insert_with(|| Box::leak(Box::new(JetSpace::build(d, k))))
    }

    fn build(d: usize, k: usize) -> JetSpace {
        assert!(d <= 255 && k <= 255, "jet space too large");
        let mut monomials: Vec<MultiIndex> = Vec::new();
        let mut len_upto = Vec::with_capacity(k + 1);
        for deg in 0..=k {
            let mut cur = MultiIndex::from_elem(0, d);
            push_degree(&mut monomials, &mut cur, 0, deg);
            len_upto.push(monomials.len());
        }
        let degree: Vec<u8> = monomials.iter().map(|m| m.iter().sum()).collect();
        let index: HashMap<MultiIndex, usize> =
            monomials.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();

        let mut mul_table = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            for (j, b) in monomials.iter().enumerate() {
                if (degree[i] + degree[j]) as usize > k {
                    continue;
                }
                let prod: MultiIndex = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
                mul_table.push((i as u32, j as u32, index[&prod] as u32));
            }
        }
        mul_table.sort_by_key(|&(_, _, o)| degree[o as usize]);
        let mul_end = (0..=k)
            .map(|r| mul_table.partition_point(|&(_, _, o)| degree[o as usize] as usize <= r))
            .collect();

        let mut raise = vec![usize::MAX; monomials.len() * d];
        for (i, a) in monomials.iter().enumerate() {
            for v in 0..d {
                let mut b = a.clone();
                b[v] += 1;
                if let Some(&j) = index.get(&b) {
                    raise[i * d + v] = j;
                }
            }
        }

        JetSpace {
            d,
            k,
            monomials,
            len_upto,
            index,
            mul_table,
            mul_end,
            raise,
        }
    }

    pub fn vars(&self) -> usize {
        self.d
    }

    pub fn max_order(&self) -> usize {
        self.k
    }

    pub fn len(&self, order: usize) -> usize {
        self.len_upto[order]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn monomial(&self, i: usize) -> &[u8] {
        &self.monomials[i]
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.index.get(alpha).copied()
    }
}

fn push_degree(out: &mut Vec<MultiIndex>, cur: &mut MultiIndex, pos: usize, left: usize) {
    if pos + 1 == cur.len() || cur.is_empty() {
        if let Some(last) = cur.last_mut() {
            *last = left as u8;
            out.push(cur.clone());
            *cur.last_mut().unwrap() = 0;
        } else if left == 0 {
            out.push(cur.clone());
        }
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e as u8;
        push_degree(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

/// Truncated Taylor expansion at a point.
#[derive(Clone)]
pub struct Jet {
    space: &'static JetSpace,
    order: u8,
    c: Coeffs,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet").field("order", &self.order).field("c", &self.c.as_slice()).finish()
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.space, other.space) && self.order == other.order && self.c == other.c
    }
}

impl Jet {
    pub fn constant(space: &'static JetSpace, order: usize, value: f64) -> Jet {
        assert!(order <= space.k);
        let mut c = Coeffs::from_elem(0.0, space.len(order));
        c[0] = value;
        Jet {
            space,
            order: order as u8,
            c,
        }
    }

    /// The coordinate function `t_var` expanded at `value`.
    pub fn variable(space: &'static JetSpace, order: usize, value: f64, var: usize) -> Jet {
        let mut j = Jet::constant(space, order, value);
        if order >= 1 {
            j.c[1 + var] = 1.0;
        }
        j
    }

    /// Coordinate jets for every variable at `point`.
    pub fn seed(point: &[f64], order: usize) -> Vec<Jet> {
        let space = JetSpace::get(point.len(), MAX_ORDER);
        point
            .iter()
            .enumerate()
            .map(|(v, &x)| Jet::variable(space, order, x, v))
            .collect()
    }

    /// Coordinate jets followed by constant jets for fixed parameters, the
    /// layout expected by [`crate::expr::Expr::eval`].
    pub fn seed_with_params(coords: &[f64], params: &[(String, f64)], order: usize) -> Vec<Jet> {
        let mut v = Jet::seed(coords, order);
        let space = JetSpace::get(coords.len(), MAX_ORDER);
        v.extend(params.iter().map(|(_, p)| Jet::constant(space, order, *p)));
        v
    }

    pub fn space(&self) -> &'static JetSpace {
        self.space
    }

    pub fn order(&self) -> usize {
        self.order as usize
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c
    }

    /// Taylor coefficient for multi-index `alpha`.
    pub fn coeff(&self, alpha: &[u8]) -> f64 {
        match self.space.index_of(alpha) {
            Some(i) if i < self.c.len() => self.c[i],
            _ => 0.0,
        }
    }

    /// Partial derivative `∂^alpha f` at the expansion point.
    pub fn derivative(&self, alpha: &[u8]) -> f64 {
        let fact: f64 = alpha.iter().map(|&a| (1..=a as u32).product::<u32>() as f64).product();
        self.coeff(alpha) * fact
    }

    /// First partial derivative with respect to variable `v`.
    pub fn d1(&self, v: usize) -> f64 {
        if self.order == 0 {
            return 0.0;
        }
        self.c[1 + v]
    }

    /// Truncate to a lower order.
    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order as usize);
        Jet {
            space: self.space,
            order: order as u8,
            c: self.c[..self.space.len(order)].iter().copied().collect(),
        }
    }

    /// The jet of `∂f/∂t_v`, one order lower.
    pub fn partial(&self, v: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let order = self.order as usize - 1;
        let sp = self.space;
        let n = sp.len(order);
        let mut c = Coeffs::from_elem(0.0, n);
        for (i, ci) in c.iter_mut().enumerate() {
            let j = sp.raise[i * sp.d + v];
            *ci = (sp.monomials[i][v] as f64 + 1.0) * self.c[j];
        }
        Jet {
            space: sp,
            order: order as u8,
            c,
        }
    }

    fn binary_order(&self, o: &Jet) -> usize {
        debug_assert!(std::ptr::eq(self.space, o.space), "jets from different spaces");
        self.order.min(o.order) as usize
    }

    fn zip(&self, o: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let order = self.binary_order(o);
        let n = self.space.len(order);
        Jet {
            space: self.space,
            order: order as u8,
            c: (0..n).map(|i| f(self.c[i], o.c[i])).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            space: self.space,
            order: self.order,
            c: self.c.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add_const(&self, s: f64) -> Jet {
        let mut j = self.clone();
        j.c[0] += s;
        j
    }

    /// `self += s * o` in place.
    pub fn axpy(&mut self, s: f64, o: &Jet) {
        let order = self.binary_order(o);
        if order < self.order as usize {
            *self = self.truncate(order);
        }
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += s * b;
        }
    }

    fn mul_jet(&self, o: &Jet) -> Jet {
        let order = self.binary_order(o);
        let sp = self.space;
        let mut c = Coeffs::from_elem(0.0, sp.len(order));
        for &(i, j, k) in &sp.mul_table[..sp.mul_end[order]] {
            c[k as usize] += self.c[i as usize] * o.c[j as usize];
        }
        Jet {
            space: sp,
            order: order as u8,
            c,
        }
    }

    /// Compose with a scalar function given its derivatives at the value:
    /// `Σ g^(k)(a0) / k! (f - a0)^k`.
    fn compose(&self, derivs: &[f64]) -> Jet {
        let r = self.order as usize;
        debug_assert!(derivs.len() > r);
        let mut out = Jet::constant(self.space, r, derivs[0]);
        if r == 0 {
            return out;
        }
        let mut u = self.clone();
        u.c[0] = 0.0;
        let mut pow = u.clone();
        let mut fact = 1.0;
        for (k, d) in derivs.iter().enumerate().take(r + 1).skip(1) {
            fact *= k as f64;
            if *d != 0.0 {
                out.axpy(d / fact, &pow);
            }
            if k < r {
                pow = pow.mul_jet(&u);
            }
        }
        out
    }

    pub fn recip(&self) -> Jet {
        let a = self.c[0];
        let r = self.order as usize;
        let mut d = Vec::with_capacity(r + 1);
        // d^k/da^k (1/a) = (-1)^k k! / a^(k+1)
        let mut fact = 1.0;
        for k in 0..=r {
            if k > 0 {
                fact *= k as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            d.push(sign * fact / a.powi(k as i32 + 1));
        }
        self.compose(&d)
    }

    /// `self^p` for a real exponent, expanded about a positive value.
    fn powf_const(&self, p: f64) -> Jet {
        let a = self.c[0];
        let r = self.order as usize;
        let mut d = Vec::with_capacity(r + 1);
        let mut coef = 1.0;
        for k in 0..=r {
            d.push(coef * a.powf(p - k as f64));
            coef *= p - k as f64;
        }
        self.compose(&d)
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&x| x == 0.0)
    }
}

impl ExprScalar for Jet {
    fn from_const(c: f64, like: &Self) -> Self {
        Jet::constant(like.space, like.order as usize, c)
    }
    fn re(&self) -> f64 {
        self.c[0]
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }
    fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }
    fn mul(&self, o: &Self) -> Self {
        self.mul_jet(o)
    }
    fn div(&self, o: &Self) -> Self {
        self.mul_jet(&o.recip())
    }
    fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        let d: Vec<f64> = (0..=self.order as usize).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        let d: Vec<f64> = (0..=self.order as usize).map(|k| cycle[k % 4]).collect();
        self.compose(&d)
    }
    fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.order as usize + 1])
    }
    fn ln(&self) -> Self {
        let a = self.c[0];
        let r = self.order as usize;
        let mut d = vec![a.ln()];
        // d^k/da^k ln a = (-1)^(k-1) (k-1)! / a^k
        let mut fact = 1.0;
        for k in 1..=r {
            if k > 1 {
                fact *= (k - 1) as f64;
            }
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * fact / a.powi(k as i32));
        }
        self.compose(&d)
    }
    fn sqrt(&self) -> Self {
        if self.c[0] == 0.0 && self.order > 0 {
            // value 0, derivatives infinite
            let mut j = Jet::constant(self.space, self.order as usize, 0.0);
            j.c[1..].iter_mut().for_each(|x| *x = f64::INFINITY);
            return j;
        }
        self.powf_const(0.5)
    }
    fn powi(&self, k: i32) -> Self {
        if k < 0 {
            return self.powi(-k).recip();
        }
        let mut result = Jet::constant(self.space, self.order as usize, 1.0);
        let mut base = self.clone();
        let mut e = k as u32;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul_jet(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_jet(&base);
            }
        }
        result
    }
    fn powf(&self, o: &Self) -> Self {
        if o.is_constant() {
            return self.powf_const(o.c[0]);
        }
        o.mul_jet(&self.ln()).exp()
    }
    fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite())
    }
    fn is_constant(&self) -> bool {
        self.c[1..].iter().all(|&x| x == 0.0)
    }
}

/// Solve `A x = b` for jet entries by LU with partial pivoting on the value
/// parts. Fails when a pivot value vanishes.
pub fn solve(a: &[Vec<Jet>], b: &[Jet]) -> Result<Vec<Jet>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("jet system is not square".into()));
    }
    let mut a: Vec<Vec<Jet>> = a.to_vec();
    let mut b: Vec<Jet> = b.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter().map(|x| x.value().abs()))
        .fold(0.0_f64, f64::max);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].value().abs().total_cmp(&a[j][col].value().abs()))
            .unwrap();
        if a[piv][col].value().abs() <= f64::EPSILON * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Domain("singular jet system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for row in col + 1..n {
            let f = a[row][col].mul(&inv);
            if f.is_zero() {
                continue;
            }
            for k in col + 1..n {
                let t = f.mul(&a[col][k]);
                a[row][k] = a[row][k].sub(&t);
            }
            let t = f.mul(&b[col]);
            b[row] = b[row].sub(&t);
        }
    }
    let mut x: Vec<Jet> = b.clone();
    for row in (0..n).rev() {
        let mut acc = b[row].clone();
        for k in row + 1..n {
            let t = a[row][k].mul(&x[k]);
            acc = acc.sub(&t);
        }
        x[row] = acc.div(&a[row][row]);
    }
    Ok(x)
}

/// Inverse of a square jet matrix, one solve per column.
pub fn inverse(a: &[Vec<Jet>]) -> Result<Vec<Vec<Jet>>> {
    let n = a.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let like = &a[0][0];
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let e: Vec<Jet> = (0..n).map(|i| Jet::from_const(if i == k { 1.0 } else { 0.0 }, like)).collect();
        cols.push(solve(a, &e)?);
    }
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i].clone()).collect()).collect())
}
