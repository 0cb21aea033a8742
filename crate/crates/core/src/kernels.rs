//! Continuous pulse shapes, their derivatives, grid sampling and numerical
//! admissibility checks.
//!
//! A [`Kernel`] is evaluated in dimensionless units: `g(t)` with the pulse
//! sampled as `g[k] = g(k / (sigma * N))`. Every kernel carries the
//! constants the recovery guarantee is stated in:
//!
//! * decay constants `C_l` with `|g^(l)(t)| <= C_l / (1 + t^2)`, `l = 0..=3`;
//! * a concave cap `|t| <= eps` on which `g''(t) <= -beta`, outside of which
//!   `g(t) < g(eps)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::IndexRange;

/// Samples below this fraction of the peak are dropped from the stencil.
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;
/// Hard cap on the stencil radius, in dimensionless units.
pub const MAX_TRUNCATION_RADIUS: f64 = 5.0;
/// Extent of the grid used to bound the decay constants.
const DECAY_EXTENT: f64 = 50.0;
const DECAY_STEP: f64 = 1e-3;
/// Slack applied to grid-measured decay suprema.
const DECAY_ROUND_UP: f64 = 1.01;
/// Step of the finite-difference derivative cross-check.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Cauchy,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Cauchy => "cauchy",
        }
    }

    /// `g^(order)(t)` for `order <= 3`.
    pub fn derivative(self, order: usize, t: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => {
                let e = (-0.5 * t * t).exp();
                match order {
                    0 => e,
                    1 => -t * e,
                    2 => (t * t - 1.0) * e,
                    3 => (3.0 * t - t * t * t) * e,
                    _ => panic!("derivative order {order} not provided"),
                }
            }
            KernelFamily::Cauchy => {
                let d = 1.0 + t * t;
                match order {
                    0 => 1.0 / d,
                    1 => -2.0 * t / (d * d),
                    2 => (6.0 * t * t - 2.0) / (d * d * d),
                    3 => 24.0 * t * (1.0 - t * t) / (d * d * d * d),
                    _ => panic!("derivative order {order} not provided"),
                }
            }
        }
    }

    /// Largest `beta` with `g''(t) <= -beta` on `|t| <= eps`.
    ///
    /// Both families have `g''` increasing in `|t|` up to their inflection
    /// point and beyond it up to the next extremum, so the maximum of `g''`
    /// over the cap sits at the endpoint. Negative when `eps` reaches past
    /// the inflection.
    pub fn beta_for(self, eps: f64) -> f64 {
        match self {
            KernelFamily::Gaussian if eps > 3f64.sqrt() => {
                // g'' peaks at |t| = sqrt(3) and decays after.
                -self.derivative(2, 3f64.sqrt())
            }
            KernelFamily::Cauchy if eps > 1.0 => -self.derivative(2, 1.0),
            _ => -self.derivative(2, eps),
        }
    }

    pub fn default_eps(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5,
            KernelFamily::Cauchy => 0.3,
        }
    }

    /// Smallest `R` with `g(R) <= tol * g(0)`; both families decrease on `t > 0`.
    fn tail_radius(self, tol: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-2.0 * tol.ln()).sqrt(),
            KernelFamily::Cauchy => (1.0 / tol - 1.0).sqrt(),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(KernelFamily::Gaussian),
            "cauchy" => Ok(KernelFamily::Cauchy),
            other => Err(invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// A non-negative, even pulse shape with its admissibility constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub sigma: f64,
    pub eps: f64,
    pub beta: f64,
    pub decay: [f64; 4],
    /// Dimensionless radius beyond which samples are zero.
    pub trunc_radius: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("kernel scale must be positive, got {sigma}")));
        }
        let eps = family.default_eps();
        let mut decay = [0.0; 4];
        for (order, c) in decay.iter_mut().enumerate() {
            *c = measured_decay(family, order);
        }
        if family == KernelFamily::Cauchy {
            // g(t)(1 + t^2) == 1 identically.
            decay[0] = 1.0;
        }
        Ok(Self {
            family,
            sigma,
            eps,
            beta: family.beta_for(eps),
            decay,
            trunc_radius: family.tail_radius(TRUNCATION_TOLERANCE).min(MAX_TRUNCATION_RADIUS),
        })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, sigma)
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Cauchy, sigma)
    }

    /// Re-targets the concave cap to `eps` with the largest valid `beta`.
    /// The resulting `beta` is non-positive when no cap of that width exists.
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self.beta = self.family.beta_for(eps);
        self
    }

    /// Sets the cap constants verbatim, without checking them.
    pub fn with_local_constants(mut self, eps: f64, beta: f64) -> Self {
        self.eps = eps;
        self.beta = beta;
        self
    }

    pub fn with_trunc_radius(mut self, radius: f64) -> Self {
        self.trunc_radius = radius;
        self
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        self.family.derivative(0, t)
    }

    #[inline]
    pub fn derivative(&self, order: usize, t: f64) -> f64 {
        self.family.derivative(order, t)
    }

    pub fn peak(&self) -> f64 {
        self.eval(0.0)
    }

    /// Stencil half-width in grid steps for sampling interval `1/n`.
    pub fn stencil_radius(&self, n: usize) -> usize {
        (self.trunc_radius * self.sigma * n as f64 + 1e-9).floor() as usize
    }

    /// `g(k / (sigma * n))` for each `k` in `window`, zero past the stencil.
    pub fn sample(&self, n: usize, window: IndexRange) -> Vec<f64> {
        let radius = self.stencil_radius(n) as i64;
        let scale = self.sigma * n as f64;
        window.iter().map(|k| if k.abs() > radius { 0.0 } else { self.eval(k as f64 / scale) }).collect()
    }

    /// Samples over `-radius..=radius`, the full convolution stencil.
    pub fn stencil(&self, n: usize) -> Vec<f64> {
        self.sample(n, IndexRange::symmetric(self.stencil_radius(n) as i64))
    }
}

fn measured_decay(family: KernelFamily, order: usize) -> f64 {
    let steps = (DECAY_EXTENT / DECAY_STEP) as usize;
    let sup = (0..=steps)
        .map(|i| {
            let t = i as f64 * DECAY_STEP;
            family.derivative(order, t).abs() * (1.0 + t * t)
        })
        .fold(0.0, f64::max);
    sup * DECAY_ROUND_UP
}

/// One admissibility condition checked on a dense grid. `worst_margin` is
/// non-negative when the condition holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub location: f64,
}

impl ConditionCheck {
    fn from_margins(name: &str, margins: impl Iterator<Item = (f64, f64)>, tol: f64) -> Self {
        let (location, worst) = margins.fold((f64::NAN, f64::INFINITY), |acc, (t, m)| if m < acc.1 { (t, m) } else { acc });
        Self { name: name.to_string(), passed: worst >= -tol, worst_margin: worst, location }
    }
}

/// Analytic derivative vs. 4th-order central differences of the next lower
/// derivative, relative to the sup norm of the analytic derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub order: usize,
    pub max_relative_error: f64,
    pub location: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub kernel: String,
    pub sigma: f64,
    pub eps: f64,
    pub beta: f64,
    pub decay: Vec<f64>,
    pub conditions: Vec<ConditionCheck>,
    pub derivatives: Vec<DerivativeCheck>,
    pub passed: bool,
}

impl AdmissibilityReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;
const EVENNESS_TOLERANCE: f64 = 1e-14;

/// Checks the non-negative admissibility conditions on the grid
/// `-extent..=extent` with `density` samples per unit.
pub fn verify_admissibility(kernel: &Kernel, density: usize, extent: f64) -> Result<AdmissibilityReport> {
    if density == 0 {
        return Err(invalid("grid density must be positive"));
    }
    if extent < 10.0 {
        return Err(invalid(format!("admissibility grid must cover [-10, 10], got extent {extent}")));
    }
    let steps = (extent * density as f64).round() as i64;
    let h = 1.0 / density as f64;
    let grid: Vec<f64> = (-steps..=steps).map(|i| i as f64 * h).collect();
    let g = |t: f64| kernel.eval(t);

    let mut conditions = vec![
        ConditionCheck::from_margins("nonnegativity", grid.iter().map(|&t| (t, g(t))), 0.0),
        ConditionCheck::from_margins("evenness", grid.iter().map(|&t| (t, EVENNESS_TOLERANCE - (g(t) - g(-t)).abs())), 0.0),
    ];
    for order in 0..4 {
        let c = kernel.decay[order];
        conditions.push(ConditionCheck::from_margins(
            &format!("decay_{order}"),
            grid.iter().map(|&t| (t, c - kernel.derivative(order, t).abs() * (1.0 + t * t))),
            0.0,
        ));
    }

    let eps = kernel.eps;
    let g_eps = g(eps);
    let mut peak = ConditionCheck::from_margins("peak", grid.iter().filter(|t| t.abs() > eps).map(|&t| (t, g_eps - g(t))), 0.0);
    // Strict inequality.
    peak.passed = peak.worst_margin > 0.0 && eps > 0.0;
    conditions.push(peak);

    let curvature_tol = 1e-12 * kernel.derivative(2, 0.0).abs().max(1.0);
    let mut cap: Vec<f64> = grid.iter().copied().filter(|t| t.abs() <= eps).collect();
    cap.extend([-eps, eps]);
    let mut concavity =
        ConditionCheck::from_margins("concavity", cap.iter().map(|&t| (t, -kernel.beta - kernel.derivative(2, t))), curvature_tol);
    concavity.passed &= kernel.beta > 0.0 && eps > 0.0;
    conditions.push(concavity);

    let derivatives = (1..=3).map(|order| derivative_check(kernel, order, &grid)).collect::<Vec<_>>();

    let passed = conditions.iter().all(|c| c.passed) && derivatives.iter().all(|d| d.passed);
    Ok(AdmissibilityReport {
        kernel: kernel.name().to_string(),
        sigma: kernel.sigma,
        eps: kernel.eps,
        beta: kernel.beta,
        decay: kernel.decay.to_vec(),
        conditions,
        derivatives,
        passed,
    })
}

/// 4th-order central difference of `f` at `t`.
pub fn central_difference(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
}

fn derivative_check(kernel: &Kernel, order: usize, grid: &[f64]) -> DerivativeCheck {
    let lower = |t: f64| kernel.derivative(order - 1, t);
    let mut scale: f64 = 0.0;
    let mut worst = (f64::NAN, 0.0);
    for &t in grid {
        let exact = kernel.derivative(order, t);
        scale = scale.max(exact.abs());
        let err = (central_difference(lower, t, FD_STEP) - exact).abs();
        if err > worst.1 {
            worst = (t, err);
        }
    }
    let rel = worst.1 / scale.max(f64::MIN_POSITIVE);
    DerivativeCheck { order, max_relative_error: rel, location: worst.0, passed: rel <= DERIVATIVE_TOLERANCE }
}

/// Separable two-dimensional kernel `g2(t1, t2) = g(t1) g(t2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel2D {
    pub base: Kernel,
    pub eps: f64,
    pub beta: f64,
    /// `C_{l1,l2}` for `l1 + l2 <= 3`, keyed by `(l1, l2)`.
    pub decay: Vec<((usize, usize), f64)>,
}

const DECAY_2D_EXTENT: f64 = 20.0;
const DECAY_2D_STEP: f64 = 0.05;

impl Kernel2D {
    pub fn separable(base: Kernel) -> Self {
        let eps = base.eps;
        // g''(t1) g(t2) is least negative at the corner of the cap.
        let beta = base.beta * base.eval(eps);
        let decay =
            partial_orders().map(|(l1, l2)| ((l1, l2), measured_decay_2d(&base, l1, l2, DECAY_2D_EXTENT) * DECAY_ROUND_UP)).collect();
        Self { base, eps, beta, decay }
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Ok(Self::separable(Kernel::gaussian(sigma)?))
    }

    pub fn cauchy(sigma: f64) -> Result<Self> {
        Ok(Self::separable(Kernel::cauchy(sigma)?))
    }

    pub fn name(&self) -> &'static str {
        self.base.name()
    }

    pub fn sigma(&self) -> f64 {
        self.base.sigma
    }

    pub fn eval(&self, t1: f64, t2: f64) -> f64 {
        self.base.eval(t1) * self.base.eval(t2)
    }

    /// `d^{l1} d^{l2} g2 / dt1^{l1} dt2^{l2}`.
    pub fn partial(&self, l1: usize, l2: usize, t1: f64, t2: f64) -> f64 {
        self.base.derivative(l1, t1) * self.base.derivative(l2, t2)
    }

    pub fn peak(&self) -> f64 {
        self.eval(0.0, 0.0)
    }

    pub fn stencil_radius(&self, n: usize) -> usize {
        self.base.stencil_radius(n)
    }

    /// 1D factor of the sampled separable pulse.
    pub fn stencil_1d(&self, n: usize) -> Vec<f64> {
        self.base.stencil(n)
    }

    pub fn decay_constant(&self, l1: usize, l2: usize) -> Option<f64> {
        self.decay.iter().find(|(k, _)| *k == (l1, l2)).map(|(_, c)| *c)
    }
}

fn partial_orders() -> impl Iterator<Item = (usize, usize)> {
    (0..=3).flat_map(|l1| (0..=3 - l1).map(move |l2| (l1, l2)))
}

fn measured_decay_2d(base: &Kernel, l1: usize, l2: usize, extent: f64) -> f64 {
    let steps = (extent / DECAY_2D_STEP) as i64;
    let mut sup: f64 = 0.0;
    // Quadrant symmetry: the first quadrant suffices.
    for i in 0..=steps {
        let t1 = i as f64 * DECAY_2D_STEP;
        let a = base.derivative(l1, t1).abs();
        for j in 0..=steps {
            let t2 = j as f64 * DECAY_2D_STEP;
            let w = (1.0 + t1 * t1 + t2 * t2).powf(1.5);
            sup = sup.max(a * base.derivative(l2, t2).abs() * w);
        }
    }
    sup
}

/// Admissibility conditions for a 2D kernel. The decay check additionally
/// requires the grid supremum to be stable when the extent doubles, which
/// is how an unbounded weighted derivative shows up on a finite grid.
pub fn verify_admissibility_2d(kernel: &Kernel2D, density: usize, extent: f64) -> Result<AdmissibilityReport> {
    if density == 0 || extent <= 0.0 {
        return Err(invalid("grid density and extent must be positive"));
    }
    let steps = (extent * density as f64).round() as i64;
    let h = 1.0 / density as f64;
    let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 * h).collect();
    let points = || axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b)));
    let loc = |(a, b): (f64, f64)| a.hypot(b) * a.signum();

    let mut conditions = vec![
        ConditionCheck::from_margins("nonnegativity", points().map(|p| (loc(p), kernel.eval(p.0, p.1))), 0.0),
        ConditionCheck::from_margins(
            "quadrant_symmetry",
            points().map(|(a, b)| {
                let v = kernel.eval(a, b);
                let d = (v - kernel.eval(-a, b)).abs().max((v - kernel.eval(a, -b)).abs()).max((v - kernel.eval(-a, -b)).abs());
                (loc((a, b)), EVENNESS_TOLERANCE - d)
            }),
            0.0,
        ),
    ];

    for ((l1, l2), c) in &kernel.decay {
        let near = measured_decay_2d(&kernel.base, *l1, *l2, extent);
        let far = measured_decay_2d(&kernel.base, *l1, *l2, 2.0 * extent);
        let mut check = ConditionCheck::from_margins(&format!("decay_{l1}{l2}"), std::iter::once((extent, c - near)), 0.0);
        check.passed &= far <= near * DECAY_ROUND_UP;
        if far > near * DECAY_ROUND_UP {
            check.worst_margin = c - far;
            check.location = 2.0 * extent;
        }
        conditions.push(check);
    }

    let eps = kernel.eps;
    let ref1 = kernel.eval(eps, 0.0);
    let ref2 = kernel.eval(0.0, eps);
    let mut peak = ConditionCheck::from_margins(
        "peak",
        points().filter_map(|(a, b)| {
            let v = kernel.eval(a, b);
            let m1 = (a.abs() > eps).then_some(ref1 - v);
            let m2 = (b.abs() > eps).then_some(ref2 - v);
            match (m1, m2) {
                (None, None) => None,
                (x, y) => Some((loc((a, b)), x.unwrap_or(f64::INFINITY).min(y.unwrap_or(f64::INFINITY)))),
            }
        }),
        0.0,
    );
    peak.passed = peak.worst_margin > 0.0;
    conditions.push(peak);

    let tol = 1e-12;
    let mut cap_axis: Vec<f64> = axis.iter().copied().filter(|t| t.abs() <= eps).collect();
    cap_axis.extend([-eps, eps]);
    let mut concavity = ConditionCheck::from_margins(
        "concavity",
        cap_axis.iter().flat_map(|&a| {
            cap_axis.iter().map(move |&b| {
                let m = (-kernel.beta - kernel.partial(2, 0, a, b)).min(-kernel.beta - kernel.partial(0, 2, a, b));
                (a.hypot(b), m)
            })
        }),
        tol,
    );
    concavity.passed &= kernel.beta > 0.0;
    conditions.push(concavity);

    let passed = conditions.iter().all(|c| c.passed);
    Ok(AdmissibilityReport {
        kernel: format!("{}_2d", kernel.name()),
        sigma: kernel.sigma(),
        eps: kernel.eps,
        beta: kernel.beta,
        decay: kernel.decay.iter().map(|(_, c)| *c).collect(),
        conditions,
        derivatives: Vec::new(),
        passed,
    })
}
