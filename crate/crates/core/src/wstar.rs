//! W*-norm certificates, the example catalog, sublevel-set bounds,
//! exponential integrals, the Skoda potential and capacity-decay tables.
//!
//! A certificate is a pair `(f, ψ)` with `df ∧ dᶜf ≼ ddᶜψ` at every inside
//! node; its value `‖f‖²_{L²} + ∫ ddᶜψ ∧ ω^{n−1}` bounds `‖f‖*²` from above.
//! Gradient forms are the upwind-averaged ones used by the capacity solver.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{ball_mean, hessian_at, mollify, upwind_gradient_at, Calibration, Mollifier};
use crate::capacity::{dominating_potential, functional_capacity, functional_capacity_with, FunctionalCapOptions};
use crate::error::{CapError, Result};
use crate::field::GridField;
use crate::grid::{BorelSet, GridDomain, ShapeSpec};
use crate::reduce::{log_sum_exp, pairwise_sum};

/// Entries of the example catalog. `delta` in [`example_field`] regularizes
/// the logarithmic singularities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExampleSpec {
    /// `−(−log|z₁|)^a` on `B(0, 1/2)`.
    PowerLog { a: f64 },
    /// `−log(−u)` with `u = log|z₁| − shift ≤ −1`.
    LogLog { shift: f64 },
    /// `|z_ℓ|² / |z|²`, `ℓ` one-based.
    VmoRatio { l: usize },
    /// `u + sign·v` with `u = |z|² − 1` and `v` the max-regularized
    /// `log|z₁|` floored at −3; both bounded psh.
    PshDiff { sign: f64 },
    /// `−Σ w_k |z − c_k|` with seeded weights and centers.
    Lipschitz { seed: u64 },
    /// Minus the mollified indicator of a shape.
    Cutoff { shape: ShapeSpec },
}

const PSH_DIFF_FLOOR: f64 = -3.0;

impl ExampleSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            ExampleSpec::PowerLog { a } if !(*a > 0.0 && *a < 1.0) => {
                Err(CapError::Precondition(format!("power_log exponent {a} not in (0,1)")))
            }
            ExampleSpec::LogLog { shift } if !(*shift >= 1.0) => {
                Err(CapError::Precondition("log_log shift must be at least 1".into()))
            }
            ExampleSpec::VmoRatio { l } if n < 2 => {
                let _ = l;
                Err(CapError::Dimension(n))
            }
            ExampleSpec::VmoRatio { l } if *l < 1 || *l > n => {
                Err(CapError::Precondition(format!("vmo_ratio index {l} not in 1..={n}")))
            }
            ExampleSpec::PshDiff { sign } if sign.abs() != 1.0 => {
                Err(CapError::Precondition("psh_diff sign must be ±1".into()))
            }
            ExampleSpec::Cutoff { shape } => shape.validate(),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ExampleSpec::PowerLog { a } => format!("power_log({a})"),
            ExampleSpec::LogLog { shift } => format!("log_log({shift})"),
            ExampleSpec::VmoRatio { l } => format!("vmo_ratio({l})"),
            ExampleSpec::PshDiff { sign } => {
                format!("psh_diff({})", if *sign > 0.0 { "+" } else { "-" })
            }
            ExampleSpec::Lipschitz { seed } => format!("lipschitz({seed})"),
            ExampleSpec::Cutoff { .. } => "cutoff".into(),
        }
    }

    /// Whether the entry is smooth at every positive grid scale without a
    /// singular limit.
    pub fn is_smooth(&self) -> bool {
        !matches!(
            self,
            ExampleSpec::PowerLog { .. } | ExampleSpec::LogLog { .. } | ExampleSpec::VmoRatio { .. }
        )
    }
}

/// Default catalog on `B(0, 1/2) ⊂ ℂⁿ`.
pub fn catalog(n: usize) -> Vec<ExampleSpec> {
    let mut c = vec![
        ExampleSpec::PowerLog { a: 0.25 },
        ExampleSpec::PowerLog { a: 0.4 },
        ExampleSpec::LogLog { shift: 1.0 },
        ExampleSpec::PshDiff { sign: 1.0 },
        ExampleSpec::Lipschitz { seed: 7 },
        ExampleSpec::Cutoff { shape: ShapeSpec::centered_ball(n, 0.2) },
    ];
    if n >= 2 {
        c.push(ExampleSpec::VmoRatio { l: 1 });
    }
    c
}

fn abs2(p: &[f64], k: usize) -> f64 {
    p[2 * k] * p[2 * k] + p[2 * k + 1] * p[2 * k + 1]
}

/// Regularized analytic evaluation at every lattice node.
pub fn example_field(spec: &ExampleSpec, dom: &Arc<GridDomain>, delta: f64) -> Result<GridField> {
    let n = dom.complex_dim();
    spec.validate(n)?;
    if !(delta > 0.0) {
        return Err(CapError::Precondition("regularization δ must be positive".into()));
    }
    let d2 = delta * delta;
    let dim = dom.real_dim();
    let field = match spec {
        ExampleSpec::PowerLog { a } => {
            let a = *a;
            GridField::from_fn(dom, move |p| {
                let l = -0.5 * (abs2(p, 0) + d2).ln();
                -(l.max(0.0)).powf(a)
            })
        }
        ExampleSpec::LogLog { shift } => {
            let s = *shift;
            GridField::from_fn(dom, move |p| {
                let u = 0.5 * (abs2(p, 0) + d2).ln() - s;
                -(-u).max(1.0).ln()
            })
        }
        ExampleSpec::VmoRatio { l } => {
            let l = *l - 1;
            GridField::from_fn(dom, move |p| {
                let r2: f64 = (0..n).map(|k| abs2(p, k)).sum();
                abs2(p, l) / (d2 + r2)
            })
        }
        ExampleSpec::PshDiff { sign } => {
            let sign = *sign;
            let floor = PSH_DIFF_FLOOR.exp();
            GridField::from_fn(dom, move |p| {
                let r2: f64 = p[..dim].iter().map(|x| x * x).sum();
                (r2 - 1.0) + sign * crate::calculus::reg_log_max(abs2(p, 0), floor)
            })
        }
        ExampleSpec::Lipschitz { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let terms: Vec<(f64, [f64; 4])> = (0..3)
                .map(|_| {
                    let w = rng.gen_range(0.2..1.0);
                    let mut c = [0.0; 4];
                    for x in c.iter_mut().take(dim) {
                        *x = rng.gen_range(-0.15..0.15);
                    }
                    (w, c)
                })
                .collect();
            GridField::from_fn(dom, move |p| {
                -terms
                    .iter()
                    .map(|(w, c)| {
                        w * (0..dim).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>().sqrt()
                    })
                    .sum::<f64>()
            })
        }
        ExampleSpec::Cutoff { shape } => {
            let ind = GridField::from_fn(dom, |p| if shape.contains(p, dim) { 1.0 } else { 0.0 });
            let eps = delta.max(2.0 * dom.spacing());
            let m = Mollifier::new(dom, eps)?.apply(&ind);
            // Nodes too close to the lattice edge keep the raw indicator.
            let vals = (0..dom.len())
                .map(|i| -if m.is_defined(i) { m.value(i) } else { ind.value(i) })
                .collect();
            GridField::new(dom, vals, vec![true; dom.len()])?
        }
    };
    Ok(field)
}

/// A candidate potential dominating the gradient form in the continuum,
/// for entries that have one in closed form.
pub fn candidate_potential(spec: &ExampleSpec, dom: &Arc<GridDomain>) -> Option<GridField> {
    match spec {
        ExampleSpec::PshDiff { .. } => {
            // ddᶜ(u + 1)² + ddᶜ(v + 3)² ≥ 2 du∧dᶜu + 2 dv∧dᶜv ≥ d(u ± v)∧dᶜ(u ± v).
            let dim = dom.real_dim();
            let floor = PSH_DIFF_FLOOR.exp();
            Some(GridField::from_fn(dom, move |p| {
                let r2: f64 = p[..dim].iter().map(|x| x * x).sum();
                let v = crate::calculus::reg_log_max(abs2(p, 0), floor);
                r2 * r2 + (v - PSH_DIFF_FLOOR).powi(2)
            }))
        }
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct WStarCertificate {
    pub f: GridField,
    /// Potential of the dominating current `T = ddᶜψ`.
    pub psi: GridField,
    pub norm_sq: f64,
    pub l2_sq: f64,
    pub trace_mass: f64,
    /// Minimum over inside nodes of `λ_min(H(ψ) − G(f))`.
    pub domination_margin: f64,
    pub delta: f64,
    /// Most negative margin met before the final feasibility lift; strongly
    /// negative values at fine scales are evidence against membership.
    pub margin_before_lift: f64,
}

impl WStarCertificate {
    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }
}

/// Evaluates the certificate `(f, ψ)`; fails if domination is violated by
/// more than `tol` anywhere.
pub fn wstar_norm(
    f: &GridField,
    psi: &GridField,
    cal: &Calibration,
    tol: f64,
    delta: f64,
) -> Result<WStarCertificate> {
    f.same_domain(psi)?;
    let dom = f.domain().clone();
    let n = dom.complex_dim();
    if cal.n != n || !cal.is_calibrated() {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    let inside = dom.inside_indices();
    let mut worst = (usize::MAX, f64::INFINITY);
    let mut tr = Vec::with_capacity(inside.len());
    let mut sq = Vec::with_capacity(inside.len());
    for &i in &inside {
        let h = hessian_at(psi, i)
            .ok_or_else(|| CapError::Precondition("ψ undefined on a Hessian stencil".into()))?;
        let g = upwind_gradient_at(f, i)
            .ok_or_else(|| CapError::Precondition("f undefined on a gradient stencil".into()))?;
        let m = h.sub(g).min_eig(n);
        if m < worst.1 {
            worst = (i, m);
        }
        tr.push(h.trace(n));
        sq.push(f.value(i) * f.value(i));
    }
    if worst.1 < -tol {
        return Err(CapError::DominationFails { node: worst.0, margin: worst.1 });
    }
    let cell = dom.cell_volume();
    let l2_sq = pairwise_sum(&sq) * cell;
    let trace_mass = cal.trace_constant * pairwise_sum(&tr) * cell;
    Ok(WStarCertificate {
        f: f.clone(),
        psi: psi.clone(),
        norm_sq: l2_sq + trace_mass,
        l2_sq,
        trace_mass,
        domination_margin: if inside.is_empty() { 0.0 } else { worst.1 },
        delta,
        margin_before_lift: worst.1,
    })
}

/// Best-found certificate: minimal trace mass over dominating potentials
/// (exact for n = 1), starting from `candidates` as well.
pub fn certify_membership(
    f: &GridField,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
    candidates: &[GridField],
    delta: f64,
) -> Result<WStarCertificate> {
    let dom = f.domain().clone();
    if f.values().iter().any(|x| !x.is_finite()) {
        return Err(CapError::Precondition("f must be finite on the whole lattice".into()));
    }
    let cands: Vec<Vec<f64>> = candidates.iter().map(|c| c.values().to_vec()).collect();
    let pot = dominating_potential(&dom, f.values(), cal, opts, &cands)?;
    let psi = GridField::new(&dom, pot.psi, vec![true; dom.len()])?;
    let mut cert = wstar_norm(f, &psi, cal, 1e-9, delta)?;
    cert.margin_before_lift = pot.margin_before_lift;
    Ok(cert)
}

/// Certificate with `ψ = c|z|²`, `c` the largest eigenvalue of the
/// gradient form over inside nodes. Cheap in any dimension.
pub fn quadratic_certificate(f: &GridField, cal: &Calibration, delta: f64) -> Result<WStarCertificate> {
    let dom = f.domain().clone();
    let n = dom.complex_dim();
    let mut c: f64 = 0.0;
    for i in dom.inside_indices() {
        let g = upwind_gradient_at(f, i)
            .ok_or_else(|| CapError::Precondition("f undefined on a gradient stencil".into()))?;
        c = c.max(g.eigenvalues(n)[..n].iter().copied().fold(0.0, f64::max));
    }
    let dim = dom.real_dim();
    let psi = GridField::from_fn(&dom, move |p| c * p[..dim].iter().map(|x| x * x).sum::<f64>());
    wstar_norm(f, &psi, cal, 1e-9 * c.max(1.0), delta)
}

/// Certificate for `f + g` from certificates of `f` and `g` with the
/// potential `(1 + s²)ψ_f + (1 + 1/s²)ψ_g`, `s² = ‖g‖*/‖f‖*`.
pub fn triangle_certificate(
    cf: &WStarCertificate,
    cg: &WStarCertificate,
    cal: &Calibration,
) -> Result<WStarCertificate> {
    let s2 = if cf.norm() > 0.0 && cg.norm() > 0.0 { cg.norm() / cf.norm() } else { 1.0 };
    let sum = cf.f.zip_with(&cg.f, |a, b| a + b)?;
    let psi = cf.psi.zip_with(&cg.psi, |a, b| (1.0 + s2) * a + (1.0 + 1.0 / s2) * b)?;
    wstar_norm(&sum, &psi, cal, 1e-9, cf.delta.max(cg.delta))
}

/// Sign of `f` on inside nodes: `Some(1)` if `f ≥ 0`, `Some(-1)` if
/// `f ≤ 0`, `None` if it changes sign.
pub fn sign_definite(f: &GridField) -> Option<i8> {
    let dom = f.domain();
    let (mut pos, mut neg) = (false, false);
    for i in 0..dom.len() {
        if dom.is_inside(i) && f.is_defined(i) {
            pos |= f.value(i) > 0.0;
            neg |= f.value(i) < 0.0;
        }
    }
    match (pos, neg) {
        (true, true) => None,
        (false, true) => Some(-1),
        _ => Some(1),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SublevelCheck {
    pub s: f64,
    /// Nodes of `E_s ∩ K`.
    pub count: usize,
    pub capacity: f64,
    /// `‖f‖*² / s²` from the certificate.
    pub bound: f64,
    pub holds: bool,
}

/// `𝚌(E_s ∩ K)` against `‖f‖*²/s²` with `E_s = {|f| > s}`. The interior of
/// `{v ≤ −1}` is taken as the rasterized set itself (no dilation), and
/// `(−min(|f|/s, 1), ψ/s²)` is offered to the solver as a candidate.
pub fn sublevel_capacity_check(
    f: &GridField,
    cert: &WStarCertificate,
    s: f64,
    k: &BorelSet,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
) -> Result<SublevelCheck> {
    if !(s > 0.0) {
        return Err(CapError::Precondition("threshold must be positive".into()));
    }
    if sign_definite(f).is_none() {
        return Err(CapError::Precondition("f changes sign".into()));
    }
    let dom = f.domain().clone();
    let mask: Vec<bool> = (0..dom.len())
        .map(|i| k.contains(i) && f.is_defined(i) && f.value(i).abs() > s)
        .collect();
    let e = BorelSet::from_mask(&dom, mask)?;
    let bound = cert.norm_sq / (s * s);
    let count = e.count();
    let capacity = if e.is_empty() {
        0.0
    } else {
        let mut o = opts.clone();
        o.neighborhood_cells = 0;
        let v = f.map(|x| -(x.abs() / s).min(1.0));
        let psi = cert.psi.map(|p| p / (s * s));
        functional_capacity_with(&e, &dom, cal, &o, &[(v, psi)])?.value
    };
    Ok(SublevelCheck { s, count, capacity, bound, holds: capacity <= bound * (1.0 + 1e-9) + 1e-12 })
}

/// `ln Σ_region e^{α f²} h^{2n}`, accumulated in log space.
pub fn exp_integral_ln(f: &GridField, alpha: f64, region: &BorelSet) -> f64 {
    let dom = f.domain();
    let lc = dom.cell_volume().ln();
    let terms: Vec<f64> = region
        .indices()
        .into_iter()
        .filter(|&i| f.is_defined(i))
        .map(|i| alpha * f.value(i) * f.value(i) + lc)
        .collect();
    log_sum_exp(&terms)
}

/// `Σ_region e^{α f²} h^{2n}`; may be `+∞` for aggressive α.
pub fn exp_integral(f: &GridField, alpha: f64, region: &BorelSet) -> f64 {
    exp_integral_ln(f, alpha, region).exp()
}

/// Potential with `ddᶜU ∧ ω^{n−1} = η σ dV`: the kernel is `−¼|z − x|^{−2}`
/// for n = 2 and `log|z − x|` for n = 1, summed directly over source nodes.
/// The self cell uses the kernel's mean over the ball of one cell's volume.
/// `U` is evaluated on `B(0, 3/4 + 2h)` (undefined elsewhere) and shifted so
/// that `U ≤ 0` on `B(0, 3/4)`.
pub fn skoda_potential(sigma: &GridField, eta: &GridField, cal: &Calibration) -> Result<GridField> {
    use rayon::prelude::*;
    sigma.same_domain(eta)?;
    let dom = sigma.domain().clone();
    let n = dom.complex_dim();
    if cal.n != n {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    let h = dom.spacing();
    let cell = dom.cell_volume();
    let mut sources: Vec<(usize, f64)> = Vec::new();
    for i in 0..dom.len() {
        if !sigma.is_defined(i) || !dom.is_inside(i) {
            continue;
        }
        let s = sigma.value(i);
        if s < 0.0 {
            return Err(CapError::NegativeDensity(i));
        }
        let w = s * if eta.is_defined(i) { eta.value(i) } else { 0.0 } * cell;
        if w > 0.0 {
            sources.push((i, w));
        }
    }
    let (self_mean, kernel): (f64, fn(f64) -> f64) = if n == 2 {
        // Ball of volume h⁴: π²ρ⁴/2 = h⁴; mean of |x|^{−2} over it is 2/ρ².
        let rho2 = (2.0 / (std::f64::consts::PI * std::f64::consts::PI)).sqrt() * h * h;
        (-0.25 * 2.0 / rho2, |r2: f64| -0.25 / r2)
    } else {
        // πρ² = h²; mean of log|x| over the disc is log ρ − ½.
        let rho = h / std::f64::consts::PI.sqrt();
        (rho.ln() - 0.5, |r2: f64| 0.5 * r2.ln())
    };
    let dim = dom.real_dim();
    let spts: Vec<(Vec<f64>, f64, usize)> =
        sources.iter().map(|&(i, w)| (dom.point(i)[..dim].to_vec(), w, i)).collect();
    let reach = (0.75 + 2.0 * h).powi(2);
    let targets: Vec<bool> = (0..dom.len()).map(|j| dom.norm2(j) <= reach).collect();
    let vals: Vec<f64> = (0..dom.len())
        .into_par_iter()
        .map(|j| {
            if !targets[j] {
                return f64::NAN;
            }
            let p = dom.point(j);
            let terms: Vec<f64> = spts
                .iter()
                .map(|(x, w, i)| {
                    if *i == j {
                        w * self_mean
                    } else {
                        let r2: f64 = (0..dim).map(|k| (p[k] - x[k]).powi(2)).sum();
                        w * kernel(r2)
                    }
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    let mut u = GridField::new(&dom, vals, targets)?;
    let inner: Vec<bool> = (0..dom.len()).map(|i| dom.norm2(i) <= 0.5625 + 1e-12).collect();
    let shift = u.max_on(&inner).unwrap_or(0.0).max(0.0);
    if shift > 0.0 {
        u = u.map(|x| x - shift);
    }
    Ok(u)
}

#[derive(Clone, Debug, Serialize)]
pub struct SkodaReport {
    pub mass: f64,
    /// `Σ|c_t tr H(U) − σ| / Σσ` over nodes of `B(0, 3/4)` whose Hessian
    /// stencil is defined.
    pub residual_l1: f64,
    /// Smallest `c₀` with `⨍_{B(0,1/8)} exp(−U/c₀) ≤ e`, by bisection.
    pub c0: f64,
    /// `∫_{B(0,1/8)} exp(−U/c₀)` at the measured `c₀`.
    pub exp_integral: f64,
}

/// Recovery residual and exponential-integrability constant of a Skoda
/// potential `u` built from `sigma`.
pub fn skoda_report(u: &GridField, sigma: &GridField, cal: &Calibration) -> Result<SkodaReport> {
    let dom = u.domain().clone();
    let n = dom.complex_dim();
    let (mut num, mut den) = (Vec::new(), Vec::new());
    for i in 0..dom.len() {
        if dom.norm2(i) > 0.5625 || !dom.is_inside(i) {
            continue;
        }
        if let Some(hu) = hessian_at(u, i) {
            let s = sigma.value(i);
            num.push((cal.trace_constant * hu.trace(n) - s).abs());
            den.push(s);
        }
    }
    let den_s = pairwise_sum(&den);
    if den_s <= 0.0 {
        return Err(CapError::Precondition("no source mass inside B(0, 3/4)".into()));
    }
    let residual_l1 = pairwise_sum(&num) / den_s;
    let mass = sigma.integral();
    let small = BorelSet::from_mask(
        &dom,
        (0..dom.len()).map(|i| dom.norm2(i) <= 1.0 / 64.0 + 1e-12).collect(),
    )?;
    if small.is_empty() {
        return Err(CapError::Precondition("B(0, 1/8) contains no nodes".into()));
    }
    let lnvol = (small.count() as f64 * dom.cell_volume()).ln();
    let mean_ln = |c: f64| {
        let t: Vec<f64> = small.indices().iter().map(|&i| -u.value(i) / c).collect();
        log_sum_exp(&t) + dom.cell_volume().ln() - lnvol
    };
    let (mut lo, mut hi) = (1e-8, 1.0);
    while mean_ln(hi) > 1.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mean_ln(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok(SkodaReport { mass, residual_l1, c0: hi, exp_integral: (mean_ln(hi) + lnvol).exp() })
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyRow {
    pub eps_coarse: f64,
    pub eps_fine: f64,
    /// Nodes of `{|f_coarse − f_fine| > δ} ∩ K`.
    pub count: usize,
    pub capacity: f64,
}

/// Capacities of `{|f∗η_{ε_i} − f∗η_{ε_{i+1}}| > δ} ∩ K` for consecutive
/// scales of a decreasing `eps_list`.
pub fn cauchy_in_capacity(
    f: &GridField,
    k: &BorelSet,
    delta_thresh: f64,
    eps_list: &[f64],
    cal: &Calibration,
    opts: &FunctionalCapOptions,
) -> Result<Vec<CauchyRow>> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CapError::Precondition("eps_list must be strictly decreasing".into()));
    }
    let dom = f.domain().clone();
    let smoothed: Vec<GridField> =
        eps_list.iter().map(|&e| mollify(f, e)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (w, e) in smoothed.windows(2).zip(eps_list.windows(2)) {
        let mask: Vec<bool> = (0..dom.len())
            .map(|i| {
                k.contains(i)
                    && w[0].is_defined(i)
                    && w[1].is_defined(i)
                    && (w[0].value(i) - w[1].value(i)).abs() > delta_thresh
            })
            .collect();
        let set = BorelSet::from_mask(&dom, mask)?;
        let capacity =
            if set.is_empty() { 0.0 } else { functional_capacity(&set, &dom, cal, opts)?.value };
        rows.push(CauchyRow { eps_coarse: e[0], eps_fine: e[1], count: set.count(), capacity });
    }
    Ok(rows)
}

/// Ball means `⨍_{B(x,r)} f` at each sample node for each radius; entries
/// whose ball escapes the domain are `None`.
pub fn ball_mean_profile(f: &GridField, nodes: &[usize], radii: &[f64]) -> Vec<Vec<Option<f64>>> {
    nodes
        .iter()
        .map(|&x| radii.iter().map(|&r| ball_mean(f, x, r).ok()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, rasterize_set};
    use std::f64::consts::PI;

    fn disc(r: f64, h: f64) -> Arc<GridDomain> {
        build_domain(&ShapeSpec::centered_ball(1, r), h).unwrap()
    }

    #[test]
    fn zero_function_has_zero_norm() {
        let dom = disc(1.0, 1.0 / 16.0);
        let cal = Calibration::analytic(1).unwrap();
        let z = GridField::constant(&dom, 0.0);
        let c = wstar_norm(&z, &z, &cal, 1e-12, 0.1).unwrap();
        assert_eq!(c.norm_sq, 0.0);
    }

    #[test]
    fn linear_function_certificate() {
        let dom = disc(1.0, 1.0 / 128.0);
        let cal = Calibration::analytic(1).unwrap();
        let f = GridField::from_fn(&dom, |p| p[0]);
        let psi = GridField::from_fn(&dom, |p| 0.25 * (p[0] * p[0] + p[1] * p[1]));
        let c = wstar_norm(&f, &psi, &cal, 1e-9, 0.0).unwrap();
        assert!(c.domination_margin.abs() < 1e-9);
        // ‖x‖² on the unit disc is π/4; ddᶜ(|z|²/4) has trace mass 1/2.
        assert!((c.trace_mass - 0.5).abs() < 0.02, "{}", c.trace_mass);
        assert!((c.l2_sq - PI / 4.0).abs() < 0.02, "{}", c.l2_sq);
        let bad = psi.map(|x| 0.5 * x);
        assert!(matches!(wstar_norm(&f, &bad, &cal, 1e-9, 0.0), Err(CapError::DominationFails { .. })));
    }

    #[test]
    fn truncation_does_not_increase_norm() {
        let dom = disc(1.0, 1.0 / 64.0);
        let cal = Calibration::analytic(1).unwrap();
        let f = GridField::from_fn(&dom, |p| p[0]);
        let psi = GridField::from_fn(&dom, |p| 0.25 * (p[0] * p[0] + p[1] * p[1]));
        let a = wstar_norm(&f, &psi, &cal, 1e-9, 0.0).unwrap();
        let b = wstar_norm(&f.map(|x| x.max(0.1)), &psi, &cal, 1e-9, 0.0).unwrap();
        assert!(b.norm_sq <= a.norm_sq);
    }

    #[test]
    fn catalog_values() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 0.5), 1.0 / 8.0).unwrap();
        let v = example_field(&ExampleSpec::VmoRatio { l: 1 }, &dom, 1e-9).unwrap();
        for i in 0..dom.len() {
            let p = dom.point(i);
            if p[0].abs() > 0.1 && p[2] == 0.0 && p[3] == 0.0 {
                assert!((v.value(i) - 1.0).abs() < 1e-12);
            }
        }
        let d1 = disc(0.5, 1.0 / 32.0);
        assert!(example_field(&ExampleSpec::VmoRatio { l: 1 }, &d1, 0.1).is_err());
        let a = 0.3;
        let pl = example_field(&ExampleSpec::PowerLog { a }, &d1, 1e-9).unwrap();
        let ll = example_field(&ExampleSpec::LogLog { shift: 1.0 }, &d1, 1e-9).unwrap();
        for i in 0..d1.len() {
            let r = d1.norm2(i).sqrt();
            if r > 0.0 {
                assert!((pl.value(i) + (-r.ln()).powf(a)).abs() < 1e-9);
                assert!((ll.value(i) + (1.0 - r.ln()).ln()).abs() < 1e-9);
            }
        }
        // At |z₁| = 1/e the power is 1 for every exponent.
        let e = (-1.0f64).exp();
        for a in [0.1, 0.4, 0.9] {
            assert!((-(-e.ln()).powf(a) + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn psh_difference_is_certified() {
        let dom = disc(0.5, 1.0 / 32.0);
        let cal = Calibration::analytic(1).unwrap();
        let spec = ExampleSpec::PshDiff { sign: 1.0 };
        let f = example_field(&spec, &dom, 0.01).unwrap();
        assert_eq!(sign_definite(&f), Some(-1));
        let cand = candidate_potential(&spec, &dom).unwrap();
        let c = wstar_norm(&f, &cand, &cal, 1e-9, 0.01).unwrap();
        let best = certify_membership(&f, &cal, &FunctionalCapOptions::default(), &[cand], 0.01).unwrap();
        assert!(best.norm_sq <= c.norm_sq * (1.0 + 1e-9));
        assert!(best.norm_sq >= best.l2_sq);
    }

    #[test]
    fn triangle_and_sublevel() {
        let dom = disc(0.5, 1.0 / 32.0);
        let cal = Calibration::analytic(1).unwrap();
        let opts = FunctionalCapOptions::default();
        let f = example_field(&ExampleSpec::PowerLog { a: 0.4 }, &dom, 1.0 / 32.0).unwrap();
        let g = example_field(&ExampleSpec::Lipschitz { seed: 3 }, &dom, 0.1).unwrap();
        let cf = certify_membership(&f, &cal, &opts, &[], 0.0).unwrap();
        let cg = certify_membership(&g, &cal, &opts, &[], 0.0).unwrap();
        let cs = triangle_certificate(&cf, &cg, &cal).unwrap();
        assert!(cs.norm() <= cf.norm() + cg.norm() + 1e-9);

        let k = rasterize_set(&ShapeSpec::centered_ball(1, 0.35), &dom);
        let big = sublevel_capacity_check(&f, &cf, 10.0, &k, &cal, &opts).unwrap();
        assert_eq!((big.count, big.capacity), (0, 0.0));
        let chk = sublevel_capacity_check(&f, &cf, 1.2, &k, &cal, &opts).unwrap();
        assert!(chk.count > 0 && chk.holds, "{chk:?}");
        let f2 = f.map(|x| 2.0 * x);
        let c2 = certify_membership(&f2, &cal, &opts, &[], 0.0).unwrap();
        let chk2 = sublevel_capacity_check(&f2, &c2, 2.4, &k, &cal, &opts).unwrap();
        assert_eq!(chk2.count, chk.count);
        assert!((chk2.capacity - chk.capacity).abs() < 1e-9 * chk.capacity);
        let mixed = GridField::from_fn(&dom, |p| p[0]);
        assert!(sublevel_capacity_check(&mixed, &cf, 0.1, &k, &cal, &opts).is_err());
    }

    #[test]
    fn exp_integral_basics() {
        let dom = disc(0.5, 1.0 / 32.0);
        let all = BorelSet::full(&dom);
        let z = GridField::constant(&dom, 0.0);
        let vol = crate::grid::volume(&all);
        assert!((exp_integral(&z, 3.0, &all) - vol).abs() < 1e-12 * vol);
        let f = example_field(&ExampleSpec::PowerLog { a: 0.4 }, &dom, 1.0 / 32.0).unwrap();
        let v: Vec<f64> = [0.1, 0.5, 1.0, 2.0].iter().map(|&a| exp_integral(&f, a, &all)).collect();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert!(exp_integral_ln(&GridField::constant(&dom, 100.0), 1e3, &all).is_finite());
    }

    #[test]
    fn skoda_recovers_smooth_source_n1() {
        let dom = disc(1.0, 1.0 / 64.0);
        let cal = Calibration::analytic(1).unwrap();
        let w = 0.1;
        let sigma = GridField::from_fn(&dom, |p| {
            (-(p[0] * p[0] + p[1] * p[1]) / (w * w)).exp() / (PI * w * w)
        });
        let eta = GridField::constant(&dom, 1.0);
        let u = skoda_potential(&sigma, &eta, &cal).unwrap();
        let rep = skoda_report(&u, &sigma, &cal).unwrap();
        assert!((rep.mass - 1.0).abs() < 1e-3);
        assert!(rep.residual_l1 < 0.05, "{rep:?}");
        assert!(rep.c0 > 0.0 && rep.exp_integral.is_finite());
        let inner: Vec<bool> = (0..dom.len()).map(|i| dom.norm2(i) <= 0.5625).collect();
        assert!(u.max_on(&inner).unwrap() <= 1e-12);
        assert!(skoda_potential(&sigma.map(|x| -x), &eta, &cal).is_err());
    }

    #[test]
    fn skoda_point_mass_profile_n2() {
        let h = 1.0 / 8.0;
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), h).unwrap();
        let cal = Calibration::analytic(2).unwrap();
        let o = dom.nearest_node(&[0.0; 4]).unwrap();
        let m = 1.0 / dom.cell_volume();
        let mut sigma = GridField::constant(&dom, 0.0);
        sigma.set(o, m);
        let c = dom.point(o);
        let raw = skoda_potential(&sigma, &GridField::constant(&dom, 1.0), &cal).unwrap();
        for i in 0..dom.len() {
            let p = dom.point(i);
            let r2: f64 = (0..4).map(|k| (p[k] - c[k]).powi(2)).sum();
            if i != o && dom.norm2(i) < 0.5 {
                assert!((raw.value(i) + 0.25 / r2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cauchy_table_for_smooth_function_vanishes() {
        let dom = disc(0.5, 1.0 / 64.0);
        let cal = Calibration::analytic(1).unwrap();
        let f = GridField::from_fn(&dom, |p| p[0] * p[0] - p[1]);
        let k = rasterize_set(&ShapeSpec::centered_ball(1, 0.25), &dom);
        let rows =
            cauchy_in_capacity(&f, &k, 0.05, &[0.2, 0.1, 0.05], &cal, &FunctionalCapOptions::default())
                .unwrap();
        assert!(rows.iter().all(|r| r.capacity == 0.0));
        let prof = ball_mean_profile(&f, &[dom.nearest_node(&[0.0, 0.0]).unwrap()], &[0.05, 0.1]);
        assert!(prof[0].iter().all(|m| m.map_or(false, |m| m.abs() < 0.01)));
    }
}
