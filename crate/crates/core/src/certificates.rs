//! Interpolating dual certificates, their verification on dense grids, the
//! product certificate used for positive recovery, the minimal-separation
//! search and the error-bound constant.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::IndexRange;
use crate::kernels::{ConditionCheck, Kernel, Kernel2D};
use crate::par::{self, Execution};

/// Samples per `sigma` on verification grids.
pub const DEFAULT_DENSITY: usize = 40;
/// Grid extent beyond the outermost nodes, in units of `sigma`.
pub const DEFAULT_EXTENT: f64 = 10.0;
/// Largest interpolation error accepted at the nodes.
pub const INTERPOLATION_TOLERANCE: f64 = 1e-9;
/// Systems with a larger condition estimate are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance for conditions that hold with equality at the nodes.
const ROUNDOFF: f64 = 1e-12;

/// `q(t) = sum_m a_m g((t - t_m)/sigma) + b_m g'((t - t_m)/sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kernel: Kernel,
    pub nodes: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Largest `|q(t_m) - 1|` or `|q'(t_m)|`.
    pub interpolation_residual: f64,
    /// 2-norm condition estimate of the interpolation system.
    pub condition: f64,
}

impl Certificate {
    pub fn eval(&self, t: f64) -> f64 {
        let s = self.kernel.sigma;
        self.nodes
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(tm, (a, b))| {
                let u = (t - tm) / s;
                a * self.kernel.eval(u) + b * self.kernel.derivative(1, u)
            })
            .sum()
    }

    /// `dq/dt`.
    pub fn derivative(&self, t: f64) -> f64 {
        let s = self.kernel.sigma;
        self.nodes
            .iter()
            .zip(self.a.iter().zip(&self.b))
            .map(|(tm, (a, b))| {
                let u = (t - tm) / s;
                (a * self.kernel.derivative(1, u) + b * self.kernel.derivative(2, u)) / s
            })
            .sum()
    }

    pub fn a_max(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn b_max(&self) -> f64 {
        self.b.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::measurement::write_json(path, self)
    }
}

fn solve_system(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Construction { reason: "interpolation system is singular or ill-conditioned".into(), condition });
    }
    let x = m.lu().solve(&rhs).ok_or_else(|| Error::Construction { reason: "LU solve failed".into(), condition })?;
    Ok((x, condition))
}

/// Solves for the coefficients enforcing `q(t_m) = 1` and `q'(t_m) = 0`.
pub fn build_certificate_1d(kernel: &Kernel, nodes: &[f64]) -> Result<Certificate> {
    if nodes.is_empty() {
        return Err(invalid("certificate needs at least one node"));
    }
    if nodes.iter().any(|t| !t.is_finite()) {
        return Err(invalid("non-finite node"));
    }
    let mut nodes = nodes.to_vec();
    nodes.sort_by(f64::total_cmp);
    if nodes.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Construction { reason: "repeated node".into(), condition: f64::INFINITY });
    }
    let n = nodes.len();
    let s = kernel.sigma;
    // Unknowns (a_0..a_n, b_0..b_n); rows: values then scaled derivatives
    // (sigma q'(t_i) = 0), which keeps both blocks on the same scale.
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let u = (nodes[i] - nodes[j]) / s;
            let (g0, g1, g2) = (kernel.eval(u), kernel.derivative(1, u), kernel.derivative(2, u));
            m[(i, j)] = g0;
            m[(i, n + j)] = g1;
            m[(n + i, j)] = g1;
            m[(n + i, n + j)] = g2;
        }
    }
    let rhs = DVector::from_iterator(2 * n, (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }));
    let (coef, condition) = solve_system(m, rhs)?;
    let mut cert = Certificate {
        kernel: kernel.clone(),
        nodes,
        a: coef.rows(0, n).iter().copied().collect(),
        b: coef.rows(n, n).iter().copied().collect(),
        interpolation_residual: 0.0,
        condition,
    };
    cert.interpolation_residual =
        cert.nodes.iter().map(|&t| (cert.eval(t) - 1.0).abs().max((s * cert.derivative(t)).abs())).fold(0.0, f64::max);
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub conditions: Vec<ConditionCheck>,
    pub passed: bool,
    pub grid_points: usize,
}

impl CertificateReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Smallest margin over all conditions; negative when one fails.
    pub fn worst_margin(&self) -> f64 {
        self.conditions.iter().map(|c| c.worst_margin).fold(f64::INFINITY, f64::min)
    }
}

/// Tracks the worst margin and its location.
#[derive(Clone, Copy)]
struct Worst {
    margin: f64,
    at: f64,
}

impl Worst {
    const NONE: Worst = Worst { margin: f64::INFINITY, at: f64::NAN };

    fn push(&mut self, margin: f64, at: f64) {
        if margin < self.margin {
            *self = Worst { margin, at };
        }
    }

    fn merge(self, other: Worst) -> Worst {
        if other.margin < self.margin {
            other
        } else {
            self
        }
    }

    fn check(self, name: &str, strict: bool, tol: f64) -> ConditionCheck {
        let passed = if strict { self.margin > 0.0 } else { self.margin >= -tol };
        ConditionCheck { name: name.to_string(), passed, worst_margin: self.margin, location: self.at }
    }
}

fn nearest(nodes: &[f64], t: f64) -> f64 {
    let i = nodes.partition_point(|&v| v < t);
    let mut best = f64::INFINITY;
    for k in [i.saturating_sub(1), i] {
        if let Some(&v) = nodes.get(k) {
            if (t - v).abs() < best.abs() {
                best = t - v;
            }
        }
    }
    best
}

/// Checks the four certificate conditions on a grid of `density` samples
/// per `sigma`, `extent` sigmas beyond the outermost nodes, plus the nodes:
/// `interpolation` (`q = 1`, `q' = 0` at nodes), `near_cap`
/// (`q <= 1 - beta (t - t_m)^2 / (4 g(0) sigma^2)` within `eps sigma`),
/// `far_cap` (`q < 1 - beta eps^2 / (4 g(0))` elsewhere) and
/// `nonnegativity`.
pub fn verify_certificate_1d(cert: &Certificate, density: usize, extent: f64, exec: Execution) -> Result<CertificateReport> {
    if density == 0 || !(extent > 0.0) {
        return Err(invalid("verification grid needs a positive density and extent"));
    }
    let k = &cert.kernel;
    let s = k.sigma;
    let g0 = k.peak();
    let (eps, beta) = (k.eps, k.beta);
    let lo = cert.nodes[0] - extent * s;
    let hi = cert.nodes[cert.nodes.len() - 1] + extent * s;
    let h = s / density as f64;
    let count = ((hi - lo) / h).ceil() as usize + 1;
    let far_cap = 1.0 - beta * eps * eps / (4.0 * g0);

    let chunk = 4096;
    let chunks = count.div_ceil(chunk);
    let parts = par::map_range(exec, chunks, |c| {
        let mut near = Worst::NONE;
        let mut far = Worst::NONE;
        let mut nonneg = Worst::NONE;
        for i in c * chunk..((c + 1) * chunk).min(count) {
            let t = lo + i as f64 * h;
            let q = cert.eval(t);
            let d = nearest(&cert.nodes, t);
            if d.abs() <= eps * s {
                near.push(1.0 - beta * d * d / (4.0 * g0 * s * s) - q, t);
            } else {
                far.push(far_cap - q, t);
            }
            nonneg.push(q, t);
        }
        (near, far, nonneg)
    });
    let (mut near, far, mut nonneg) =
        parts.into_iter().fold((Worst::NONE, Worst::NONE, Worst::NONE), |acc, p| (acc.0.merge(p.0), acc.1.merge(p.1), acc.2.merge(p.2)));

    let mut interp = Worst::NONE;
    for &t in &cert.nodes {
        let q = cert.eval(t);
        let err = (q - 1.0).abs().max((s * cert.derivative(t)).abs());
        interp.push(INTERPOLATION_TOLERANCE - err, t);
        near.push(1.0 - q, t);
        nonneg.push(q, t);
    }

    let conditions = vec![
        interp.check("interpolation", false, 0.0),
        near.check("near_cap", false, ROUNDOFF),
        far.check("far_cap", true, 0.0),
        nonneg.check("nonnegativity", false, ROUNDOFF),
    ];
    let passed = conditions.iter().all(|c| c.passed);
    Ok(CertificateReport { conditions, passed, grid_points: count + cert.nodes.len() })
}

/// Equispaced nodes at spacing `nu * sigma`, centred on zero.
pub fn equispaced_nodes(count: usize, nu: f64, sigma: f64) -> Vec<f64> {
    let mid = (count as f64 - 1.0) / 2.0;
    (0..count).map(|i| (i as f64 - mid) * nu * sigma).collect()
}

/// Builds and verifies a certificate; any construction failure counts as
/// a failing configuration with margin `-inf`.
pub fn certify_nodes(kernel: &Kernel, nodes: &[f64], density: usize, extent: f64, exec: Execution) -> (bool, f64) {
    match build_certificate_1d(kernel, nodes).and_then(|c| verify_certificate_1d(&c, density, extent, exec)) {
        Ok(r) => (r.passed, r.worst_margin()),
        Err(_) => (false, f64::NEG_INFINITY),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub counts: (usize, usize),
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub density: usize,
    pub extent: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { counts: (2, 15), lo: 0.2, hi: 6.0, tol: 0.01, density: DEFAULT_DENSITY, extent: DEFAULT_EXTENT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub kernel: String,
    pub count: usize,
    pub nu: f64,
    pub passed: bool,
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSearch {
    pub kernel: String,
    /// Largest per-count minimal passing `nu`.
    pub nu_star: f64,
    /// `(count, minimal passing nu)`.
    pub per_count: Vec<(usize, f64)>,
    /// Worst margin at `nu_star` for the count that attains it.
    pub margin: f64,
    pub trace: Vec<SearchStep>,
}

impl SeparationSearch {
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for step in &self.trace {
            w.serialize(step)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bisection on `nu` for equispaced node patterns of every count in
/// `opts.counts`; `nu*` is the largest per-count threshold. Each count is
/// searched independently, so the counts run in parallel.
pub fn minimal_separation_search(kernel: &Kernel, opts: &SearchOptions, exec: Execution) -> Result<SeparationSearch> {
    let (c0, c1) = opts.counts;
    if c0 < 2 || c1 < c0 {
        return Err(invalid("node counts must satisfy 2 <= min <= max"));
    }
    if !(opts.lo > 0.0 && opts.hi > opts.lo && opts.tol > 0.0) {
        return Err(invalid("search needs 0 < lo < hi and a positive tolerance"));
    }
    let counts: Vec<usize> = (c0..=c1).collect();
    let name = kernel.name().to_string();
    let results = par::map(exec, &counts, |&count| {
        let mut trace = Vec::new();
        let mut test = |nu: f64| {
            let nodes = equispaced_nodes(count, nu, kernel.sigma);
            let (passed, margin) = certify_nodes(kernel, &nodes, opts.density, opts.extent, Execution::Sequential);
            trace.push(SearchStep { kernel: name.clone(), count, nu, passed, worst_margin: margin });
            (passed, margin)
        };
        let (hi_ok, hi_margin) = test(opts.hi);
        if !hi_ok {
            return (count, None, trace);
        }
        let (lo_ok, lo_margin) = test(opts.lo);
        if lo_ok {
            return (count, Some((opts.lo, lo_margin)), trace);
        }
        let (mut lo, mut hi, mut margin) = (opts.lo, opts.hi, hi_margin);
        while hi - lo > opts.tol {
            let mid = 0.5 * (lo + hi);
            let (ok, m) = test(mid);
            if ok {
                hi = mid;
                margin = m;
            } else {
                lo = mid;
            }
        }
        (count, Some((hi, margin)), trace)
    });

    let mut per_count = Vec::new();
    let mut trace = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for (count, found, steps) in results {
        trace.extend(steps);
        let Some((nu, margin)) = found else {
            return Err(Error::RangeExhausted { lo: opts.lo, hi: opts.hi });
        };
        per_count.push((count, nu));
        if best.is_none_or(|(b, _)| nu > b) {
            best = Some((nu, margin));
        }
    }
    let (nu_star, margin) = best.expect("at least one count");
    Ok(SeparationSearch { kernel: name, nu_star, per_count, margin, trace })
}

/// `gamma = max(N sigma, 1 / eps)`.
pub fn gamma(kernel: &Kernel, n: usize) -> f64 {
    (n as f64 * kernel.sigma).max(1.0 / kernel.eps)
}

/// Smallest admissible `rho`: `(1/2) (beta / (4 g(0) gamma^2))^r`.
pub fn rho_floor(kernel: &Kernel, r: usize, n: usize) -> f64 {
    let g = gamma(kernel, n);
    0.5 * (kernel.beta / (4.0 * kernel.peak() * g * g)).powi(r as i32)
}

/// Sampling-rate condition `N sigma > (1/2)^(1/(2r) + 1) sqrt(beta / g(0))`.
pub fn sampling_condition(kernel: &Kernel, r: usize, n: usize) -> bool {
    let rhs = 0.5f64.powf(1.0 / (2.0 * r as f64) + 1.0) * (kernel.beta / kernel.peak()).sqrt();
    n as f64 * kernel.sigma > rhs
}

/// `q[k] = prod_i (1 - q_i(k / N)) - rho` over a grid window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductCertificate {
    pub r: usize,
    pub n: usize,
    pub window: IndexRange,
    pub rho: f64,
    pub rho_floor: f64,
    pub gamma: f64,
    /// `min prod_i (1 - q_i[k])` over grid points off the nodes.
    pub min_product: f64,
    pub node_indices: Vec<i64>,
    pub q: Vec<f64>,
    pub checks: Vec<ConditionCheck>,
    pub passed: bool,
}

impl ProductCertificate {
    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Combines one certificate per regular subset into the product
/// certificate. `rho` is half the smallest off-node product, so that
/// `q >= rho` holds off the nodes, but never below the admissible floor.
/// Checks: `q = -rho` on the nodes (`nodes`), `q >= rho` elsewhere
/// (`complement`) and `q <= 1` everywhere (`upper`).
pub fn build_product_certificate(certs: &[Certificate], n: usize, window: IndexRange, exec: Execution) -> Result<ProductCertificate> {
    let Some(first) = certs.first() else {
        return Err(invalid("product certificate needs at least one component"));
    };
    let kernel = &first.kernel;
    if certs.iter().any(|c| c.kernel != *kernel) {
        return Err(invalid("component certificates use different kernels"));
    }
    let r = certs.len();
    if !sampling_condition(kernel, r, n) {
        return Err(invalid(format!("N sigma = {} violates the sampling condition for r = {r}", n as f64 * kernel.sigma)));
    }
    let nf = n as f64;
    let mut node_indices = Vec::new();
    for c in certs {
        for &t in &c.nodes {
            let k = (t * nf).round();
            if (t * nf - k).abs() > 1e-9 {
                return Err(invalid(format!("node {t} is not on the 1/{n} grid")));
            }
            if !window.contains(k as i64) {
                return Err(invalid(format!("node {t} lies outside the window")));
            }
            node_indices.push(k as i64);
        }
    }
    node_indices.sort_unstable();
    if node_indices.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("component node sets intersect"));
    }

    let ks: Vec<i64> = window.iter().collect();
    let products = par::map(exec, &ks, |&k| certs.iter().map(|c| 1.0 - c.eval(k as f64 / nf)).product::<f64>());
    let is_node = |k: i64| node_indices.binary_search(&k).is_ok();
    let min_product = ks.iter().zip(&products).filter(|(k, _)| !is_node(**k)).map(|(_, p)| *p).fold(f64::INFINITY, f64::min);
    let floor = rho_floor(kernel, r, n);
    let rho = (0.5 * min_product).max(floor);
    if !(rho < 1.0) {
        return Err(invalid(format!("rho = {rho} is not below 1")));
    }
    let q: Vec<f64> = products.iter().map(|p| p - rho).collect();

    let mut nodes = Worst::NONE;
    let mut complement = Worst::NONE;
    let mut upper = Worst::NONE;
    for (&k, &qk) in ks.iter().zip(&q) {
        let t = k as f64 / nf;
        if is_node(k) {
            nodes.push(INTERPOLATION_TOLERANCE - (qk + rho).abs(), t);
        } else {
            complement.push(qk - rho, t);
        }
        upper.push(1.0 - qk, t);
    }
    let checks =
        vec![nodes.check("nodes", false, 0.0), complement.check("complement", false, ROUNDOFF), upper.check("upper", false, ROUNDOFF)];
    let passed = checks.iter().all(|c| c.passed);
    Ok(ProductCertificate { r, n, window, rho, rho_floor: floor, gamma: gamma(kernel, n), min_product, node_indices, q, checks, passed })
}

/// The error-bound constant and the predicted bound `C gamma^(2r) delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    pub kernel: String,
    pub r: usize,
    pub nu: f64,
    pub n: usize,
    pub delta: f64,
    /// `C(g, r, nu)`, evaluated as written even when its denominator is
    /// not positive.
    pub c: f64,
    pub gamma: f64,
    pub bound: f64,
    /// `3 g(0) nu^2 - 2 pi^2 C_0`.
    pub denominator: f64,
    /// The constant is meaningful only for a positive denominator.
    pub valid: bool,
}

pub fn theorem_bound(kernel: &Kernel, r: usize, nu: f64, n: usize, delta: f64) -> Result<TheoremBound> {
    if r == 0 || !(nu > 0.0) || !(delta >= 0.0) || n == 0 {
        return Err(invalid("theorem bound needs r >= 1, nu > 0, N >= 1 and delta >= 0"));
    }
    let g0 = kernel.peak();
    let c0 = kernel.decay[0];
    let nu2 = nu * nu;
    let denominator = 3.0 * g0 * nu2 - 2.0 * PI * PI * c0;
    let ri = r as i32;
    let c = 4f64.powi(ri + 1)
        * (2f64.powi(ri) - 1.0)
        * (g0 / kernel.beta).powi(ri)
        * (c0 * (1.0 + PI * PI / (6.0 * nu2))).powi(ri - 1)
        * (6.0 * nu2 / denominator).powi(ri);
    let gamma = gamma(kernel, n);
    let bound = if delta == 0.0 { 0.0 } else { c * gamma.powi(2 * ri) * delta };
    Ok(TheoremBound { kernel: kernel.name().to_string(), r, nu, n, delta, c, gamma, bound, denominator, valid: denominator > 0.0 })
}

/// `3 nu^2 / (3 g(0) nu^2 - 2 pi^2 C_0)`, the bound on `|a|_inf`, when the
/// denominator is positive.
pub fn coefficient_bound(kernel: &Kernel, nu: f64) -> Option<f64> {
    let d = 3.0 * kernel.peak() * nu * nu - 2.0 * PI * PI * kernel.decay[0];
    (d > 0.0).then(|| 3.0 * nu * nu / d)
}

/// 2D certificate `q(t) = sum_m a_m g2 + b1_m d1 g2 + b2_m d2 g2`, all
/// evaluated at `(t - t_m) / sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate2d {
    pub kernel: Kernel2D,
    pub nodes: Vec<(f64, f64)>,
    pub a: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub interpolation_residual: f64,
    pub condition: f64,
}

impl Certificate2d {
    fn terms(&self, t: (f64, f64), d: (usize, usize)) -> f64 {
        let s = self.kernel.sigma();
        let k = &self.kernel;
        let mut sum = 0.0;
        for (m, &(x, y)) in self.nodes.iter().enumerate() {
            let (u, v) = ((t.0 - x) / s, (t.1 - y) / s);
            sum += self.a[m] * k.partial(d.0, d.1, u, v)
                + self.b1[m] * k.partial(d.0 + 1, d.1, u, v)
                + self.b2[m] * k.partial(d.0, d.1 + 1, u, v);
        }
        sum
    }

    pub fn eval(&self, t1: f64, t2: f64) -> f64 {
        self.terms((t1, t2), (0, 0))
    }

    /// `(dq/dt1, dq/dt2)`.
    pub fn gradient(&self, t1: f64, t2: f64) -> (f64, f64) {
        let s = self.kernel.sigma();
        (self.terms((t1, t2), (1, 0)) / s, self.terms((t1, t2), (0, 1)) / s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::measurement::write_json(path, self)
    }
}

pub fn build_certificate_2d(kernel: &Kernel2D, nodes: &[(f64, f64)]) -> Result<Certificate2d> {
    if nodes.is_empty() {
        return Err(invalid("certificate needs at least one node"));
    }
    if nodes.iter().any(|t| !(t.0.is_finite() && t.1.is_finite())) {
        return Err(invalid("non-finite node"));
    }
    let n = nodes.len();
    let s = kernel.sigma();
    let mut m = DMatrix::zeros(3 * n, 3 * n);
    // Row blocks: value, d1, d2 at node i. Column blocks: a, b1, b2.
    let orders = [(0, 0), (1, 0), (0, 1)];
    for i in 0..n {
        for j in 0..n {
            let (u, v) = ((nodes[i].0 - nodes[j].0) / s, (nodes[i].1 - nodes[j].1) / s);
            for (ri, dr) in orders.iter().enumerate() {
                for (ci, dc) in orders.iter().enumerate() {
                    m[(ri * n + i, ci * n + j)] = kernel.partial(dr.0 + dc.0, dr.1 + dc.1, u, v);
                }
            }
        }
    }
    let rhs = DVector::from_iterator(3 * n, (0..3 * n).map(|i| if i < n { 1.0 } else { 0.0 }));
    let (coef, condition) = solve_system(m, rhs)?;
    let mut cert = Certificate2d {
        kernel: kernel.clone(),
        nodes: nodes.to_vec(),
        a: coef.rows(0, n).iter().copied().collect(),
        b1: coef.rows(n, n).iter().copied().collect(),
        b2: coef.rows(2 * n, n).iter().copied().collect(),
        interpolation_residual: 0.0,
        condition,
    };
    cert.interpolation_residual = cert
        .nodes
        .iter()
        .map(|&(x, y)| {
            let (d1, d2) = cert.gradient(x, y);
            (cert.eval(x, y) - 1.0).abs().max((s * d1).abs()).max((s * d2).abs())
        })
        .fold(0.0, f64::max);
    Ok(cert)
}

/// Empirical constants of a 2D certificate on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport2d {
    pub conditions: Vec<ConditionCheck>,
    /// `min (1 - q) sigma^2 / |t - t_m|_2^2` over the near regions.
    pub c1: f64,
    /// `min (1 - q)` away from the near regions.
    pub c2: f64,
    pub eps1: f64,
    pub passed: bool,
    pub grid_points: usize,
}

/// Checks the 2D conditions with near regions `|t - t_m|_inf <= eps1 sigma`:
/// interpolation, a positive quadratic-decay constant `c1` near the nodes,
/// a positive gap `c2` elsewhere, and non-negativity. `location` fields
/// hold the first coordinate of the worst point.
pub fn verify_certificate_2d(cert: &Certificate2d, eps1: f64, density: usize, extent: f64, exec: Execution) -> Result<CertificateReport2d> {
    if density == 0 || !(extent > 0.0) || !(eps1 > 0.0) {
        return Err(invalid("verification needs positive density, extent and eps1"));
    }
    let s = cert.kernel.sigma();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = cert.nodes.iter().map(f).fold(f64::INFINITY, f64::min) - extent * s;
        let hi = cert.nodes.iter().map(f).fold(f64::NEG_INFINITY, f64::max) + extent * s;
        (lo, hi)
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let h = s / density as f64;
    let nx = ((x1 - x0) / h).ceil() as usize + 1;
    let ny = ((y1 - y0) / h).ceil() as usize + 1;

    let rows = par::map_range(exec, nx, |i| {
        let t1 = x0 + i as f64 * h;
        let mut c1 = Worst::NONE;
        let mut c2 = Worst::NONE;
        let mut nonneg = Worst::NONE;
        for j in 0..ny {
            let t2 = y0 + j as f64 * h;
            let q = cert.eval(t1, t2);
            let near = cert.nodes.iter().find(|&&(x, y)| (t1 - x).abs().max((t2 - y).abs()) <= eps1 * s);
            match near {
                Some(&(x, y)) => {
                    let r2 = ((t1 - x).powi(2) + (t2 - y).powi(2)) / (s * s);
                    if r2 > 1e-12 {
                        c1.push((1.0 - q) / r2, t1);
                    }
                }
                None => c2.push(1.0 - q, t1),
            }
            nonneg.push(q, t1);
        }
        (c1, c2, nonneg)
    });
    let (c1, c2, nonneg) =
        rows.into_iter().fold((Worst::NONE, Worst::NONE, Worst::NONE), |acc, p| (acc.0.merge(p.0), acc.1.merge(p.1), acc.2.merge(p.2)));

    let mut interp = Worst::NONE;
    for &(x, y) in &cert.nodes {
        let (d1, d2) = cert.gradient(x, y);
        let err = (cert.eval(x, y) - 1.0).abs().max((s * d1).abs()).max((s * d2).abs());
        interp.push(INTERPOLATION_TOLERANCE - err, x);
    }
    let conditions = vec![
        interp.check("interpolation", false, 0.0),
        c1.check("near_decay", true, 0.0),
        c2.check("far_gap", true, 0.0),
        nonneg.check("nonnegativity", false, ROUNDOFF),
    ];
    let passed = conditions.iter().all(|c| c.passed);
    Ok(CertificateReport2d { conditions, c1: c1.margin, c2: c2.margin, eps1, passed, grid_points: nx * ny })
}
