//! Bedford–Taylor, functional and Alexander–Taylor capacities.
//!
//! The functional capacity is the discrete minimum of
//!
//! ```text
//! J(v, ψ) = ‖v‖²_{L²(Ω)} + ∫_Ω ddᶜψ ∧ ω^{n−1}
//! ```
//!
//! over `v = −1` near `E` and `−1 ≤ v ≤ 0`, with no boundary condition, and
//! `dv ∧ dᶜv ≼ ddᶜψ` at every inside node. The gradient form is the
//! average of the all-forward and all-backward one-sided forms; see
//! [`crate::calculus::upwind_gradient_at`].

use std::collections::BTreeMap;
use std::sync::Arc;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{ma_density_counted, Calibration, Mollifier};
use crate::envelope::{relative_extremal_report, siciak_extremal, EnvelopeOptions};
use crate::error::{CapError, Result};
use crate::field::{GridField, Herm};
use crate::grid::{dilate, rasterize_set, volume, BorelSet, GridDomain, ShapeSpec};
use crate::reduce::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapMethod {
    Bt,
    Functional,
    AlexanderTaylor,
}

impl CapMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CapMethod::Bt => "bt",
            CapMethod::Functional => "functional",
            CapMethod::AlexanderTaylor => "alexander_taylor",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridMeta {
    pub n: usize,
    pub spacing: f64,
    pub extent: usize,
    /// Regularization or mollification scale, when one was used.
    pub delta: Option<f64>,
}

impl GridMeta {
    pub fn of(dom: &GridDomain, delta: Option<f64>) -> Self {
        GridMeta {
            n: dom.complex_dim(),
            spacing: dom.spacing(),
            extent: dom.extent(),
            delta,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CapacityResult {
    pub value: f64,
    pub method: CapMethod,
    /// `u_E` for bt; `v` and `ψ` for functional; `U_K` for AT.
    pub minimizer: Vec<GridField>,
    pub residuals: BTreeMap<String, f64>,
    pub converged: bool,
    pub grid_meta: GridMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunctionalCapOptions {
    /// Increasing penalty weights, one per outer loop.
    pub penalty_weights: Vec<f64>,
    /// Initial step of the projected-gradient inner solver.
    pub step_size: f64,
    pub max_outer: usize,
    pub inner_iters: usize,
    /// Accepted most-negative eigenvalue of `H(ψ) − G(v)` before restoration.
    pub psd_projection_tol: f64,
    /// Chebyshev dilation of `E` on which `v = −1` is imposed.
    pub neighborhood_cells: usize,
    /// Use the exact projected-SOR branch when n = 1.
    pub exact_n1: bool,
    /// Fixed-point tolerance of the n = 1 branch.
    pub sor_tol: f64,
    pub envelope: EnvelopeOptions,
}

impl Default for FunctionalCapOptions {
    fn default() -> Self {
        FunctionalCapOptions {
            penalty_weights: vec![1e1, 1e2],
            step_size: 1e-2,
            max_outer: 6,
            inner_iters: 1500,
            psd_projection_tol: 1e-3,
            neighborhood_cells: 1,
            exact_n1: true,
            sor_tol: 1e-13,
            envelope: EnvelopeOptions::default(),
        }
    }
}

impl FunctionalCapOptions {
    pub fn validate(&self) -> Result<()> {
        if self.penalty_weights.is_empty()
            || self.penalty_weights.windows(2).any(|w| !(w[1] > w[0]))
            || self.penalty_weights[0] <= 0.0
        {
            return Err(CapError::Precondition(
                "penalty schedule must be positive and increasing".into(),
            ));
        }
        if !(self.step_size > 0.0) {
            return Err(CapError::Precondition("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// `cap(E, Ω) = ∫_Ω (ddᶜ u_E)ⁿ` with `u_E` mollified at `δ = 4h`.
pub fn bt_capacity(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &EnvelopeOptions,
) -> Result<CapacityResult> {
    if set.is_empty() {
        return Ok(CapacityResult {
            value: 0.0,
            method: CapMethod::Bt,
            minimizer: vec![GridField::constant(dom, 0.0)],
            residuals: BTreeMap::new(),
            converged: true,
            grid_meta: GridMeta::of(dom, None),
        });
    }
    let rep = relative_extremal_report(set, dom, opts)?;
    let mut res = bt_from_extremal(&rep.field, cal)?;
    res.residuals.insert("envelope_residual".into(), rep.residual);
    res.residuals.insert("envelope_iterations".into(), rep.iterations as f64);
    res.converged = rep.converged;
    Ok(res)
}

/// Monge–Ampère mass of a precomputed relative extremal function.
pub fn bt_from_extremal(u: &GridField, cal: &Calibration) -> Result<CapacityResult> {
    let dom = u.domain();
    let delta = 4.0 * dom.spacing();
    // Only inside values enter the mollification, so its support stays in Ω_δ.
    let inner = u.restrict(dom.inside());
    let smooth = Mollifier::new(dom, delta)?.apply(&inner);
    let (dens, clipped) = ma_density_counted(&smooth, cal)?;
    let value = dens.integral();
    let mut residuals = BTreeMap::new();
    residuals.insert("clipped_nodes".into(), clipped as f64);
    Ok(CapacityResult {
        value,
        method: CapMethod::Bt,
        minimizer: vec![u.clone()],
        residuals,
        converged: true,
        grid_meta: GridMeta::of(dom, Some(delta)),
    })
}

/// Dirichlet-type data shared by both functional-capacity branches.
struct Constraint {
    /// Nodes where `v` is free in `[−1, 0]`, including the boundary ring.
    free: Vec<usize>,
    /// Initial values: −1 on the dilated set, 0 elsewhere.
    base: Vec<f64>,
}

fn constraint(set: &BorelSet, dom: &Arc<GridDomain>, cells: usize) -> Result<Constraint> {
    if set.domain().len() != dom.len() {
        return Err(CapError::DomainMismatch("set and domain lattices differ".into()));
    }
    if !set.is_empty() && !set.has_margin(2) {
        return Err(CapError::Precondition(
            "set must stay two cells away from the boundary ring".into(),
        ));
    }
    let fixed = dilate(set, cells);
    let mut base = vec![0.0; dom.len()];
    for i in fixed.indices() {
        base[i] = -1.0;
    }
    // No boundary condition: ring values are free, which realizes the
    // natural boundary condition of the minimization on Ω.
    let free = (0..dom.len())
        .filter(|&i| {
            (dom.is_inside(i) && !fixed.contains(i))
                || (dom.is_boundary(i) && dom.edge_distance(i) >= 1)
        })
        .collect();
    Ok(Constraint { free, base })
}

/// Per-node weights of the edge form `c_t Σ tr G(v)`, towards
/// `(+e_a, −e_a)` for each real axis `a`. An edge counts once per inside
/// endpoint, since `tr G = ⅛(|∇⁺v|² + |∇⁻v|²)` at every inside node.
fn edge_weights(dom: &GridDomain, ct: f64) -> Vec<[f64; 8]> {
    let n = dom.complex_dim();
    let w1 = ct * dom.spacing().powi(2 * n as i32 - 2) / 8.0;
    (0..dom.len())
        .map(|i| {
            let mut w = [0.0; 8];
            if dom.edge_distance(i) < 1 {
                return w;
            }
            for a in 0..dom.real_dim() {
                for (k, o) in [1isize, -1].iter().enumerate() {
                    let j = (i as isize + o * dom.strides()[a] as isize) as usize;
                    let cnt = dom.is_inside(i) as usize + dom.is_inside(j) as usize;
                    w[2 * a + k] = w1 * cnt as f64;
                }
            }
            w
        })
        .collect()
}

/// `‖v‖² + c_t Σ tr G(v)` from the edge form.
fn edge_energy(dom: &GridDomain, ct: f64, v: &[f64]) -> f64 {
    let n = dom.complex_dim();
    let cell = dom.cell_volume();
    let w1 = ct * dom.spacing().powi(2 * n as i32 - 2) / 8.0;
    let s = dom.strides();
    let terms: Vec<f64> = (0..dom.len())
        .filter(|&i| dom.is_inside(i))
        .map(|i| {
            let mut t = cell * v[i] * v[i];
            for &st in &s[..dom.real_dim()] {
                let d1 = v[i + st] - v[i];
                let d2 = v[i] - v[i - st];
                t += w1 * (d1 * d1 + d2 * d2);
            }
            t
        })
        .collect();
    pairwise_sum(&terms)
}

/// Minimizes `‖v‖² + c_t Σ tr G(v)` over the constraint set by projected
/// SOR. For n = 1 this is exactly the functional capacity (every (1,1)
/// form dominating `G` has trace at least `tr G`, with equality for
/// `H(ψ) = G`); for n = 2 it is a lower bound.
pub fn trace_bound_capacity(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
    warm: Option<&GridField>,
) -> Result<CapacityResult> {
    if cal.n != dom.complex_dim() || !cal.is_calibrated() {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    let ct = cal.trace_constant;
    let con = constraint(set, dom, opts.neighborhood_cells)?;
    let mut v = con.base.clone();
    if let Some(w) = warm {
        for &i in &con.free {
            if w.is_defined(i) {
                v[i] = w.value(i).clamp(-1.0, 0.0);
            }
        }
    }
    let wts = edge_weights(dom, ct);
    let cell = dom.cell_volume();
    let dim = dom.real_dim();
    let s = dom.strides();
    let cells = dom.extent() as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI * 1.5 / cells).min(0.9));
    let mut it = 0usize;
    let mut res = f64::INFINITY;
    let max_iters = 200_000;
    while it < max_iters {
        res = 0.0;
        for &i in &con.free {
            let w = &wts[i];
            let mut num = 0.0;
            let mut den = if dom.is_inside(i) { cell } else { 0.0 };
            for a in 0..dim {
                num += w[2 * a] * v[i + s[a]] + w[2 * a + 1] * v[i - s[a]];
                den += w[2 * a] + w[2 * a + 1];
            }
            let target = (num / den).clamp(-1.0, 0.0);
            let d = target - v[i];
            res = f64::max(res, d.abs());
            v[i] = (v[i] + omega * d).clamp(-1.0, 0.0);
        }
        it += 1;
        if res < opts.sor_tol {
            break;
        }
    }
    let converged = res < opts.sor_tol;
    if !converged {
        warn!("trace-bound SOR stopped at residual {res:.3e}");
    }
    let value = if set.is_empty() { 0.0 } else { edge_energy(dom, ct, &v) };
    let vf = GridField::new(dom, v, vec![true; dom.len()])?;
    let mut residuals = BTreeMap::new();
    residuals.insert("sor_residual".into(), res);
    residuals.insert("sor_iterations".into(), it as f64);
    Ok(CapacityResult {
        value,
        method: CapMethod::Functional,
        minimizer: vec![vf],
        residuals,
        converged,
        grid_meta: GridMeta::of(dom, None),
    })
}

/// Exact n = 1 functional capacity; `warm` seeds the iterate.
pub fn functional_capacity_n1(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    opts: &FunctionalCapOptions,
    warm: Option<&GridField>,
) -> Result<CapacityResult> {
    if dom.complex_dim() != 1 {
        return Err(CapError::Dimension(dom.complex_dim()));
    }
    trace_bound_capacity(set, dom, &Calibration::analytic(1)?, opts, warm)
}

/// Linear stencils of the penalty formulation on raw lattice arrays.
struct Ops {
    n: usize,
    h: f64,
    st: [isize; 4],
    dim: usize,
    inside: Vec<usize>,
}

impl Ops {
    fn new(dom: &GridDomain) -> Self {
        let s = dom.strides();
        Ops {
            n: dom.complex_dim(),
            h: dom.spacing(),
            st: [s[0] as isize, s[1] as isize, s[2] as isize, s[3] as isize],
            dim: dom.real_dim(),
            inside: dom.inside_indices(),
        }
    }

    #[inline]
    fn d2(&self, p: &[f64], i: isize, a: usize) -> f64 {
        let s = self.st[a];
        (p[(i + s) as usize] - 2.0 * p[i as usize] + p[(i - s) as usize]) / (self.h * self.h)
    }

    #[inline]
    fn mixed(&self, p: &[f64], i: isize, a: usize, b: usize) -> f64 {
        let (sa, sb) = (self.st[a], self.st[b]);
        (p[(i + sa + sb) as usize] - p[(i + sa - sb) as usize] - p[(i - sa + sb) as usize]
            + p[(i - sa - sb) as usize])
            / (4.0 * self.h * self.h)
    }

    fn hess(&self, p: &[f64], i: usize) -> Herm {
        let i = i as isize;
        if self.n == 1 {
            return Herm::scalar(0.25 * (self.d2(p, i, 0) + self.d2(p, i, 1)));
        }
        Herm {
            a: 0.25 * (self.d2(p, i, 0) + self.d2(p, i, 1)),
            b: 0.25 * (self.d2(p, i, 2) + self.d2(p, i, 3)),
            cr: 0.25 * (self.mixed(p, i, 0, 2) + self.mixed(p, i, 1, 3)),
            ci: 0.25 * (self.mixed(p, i, 0, 3) - self.mixed(p, i, 1, 2)),
        }
    }

    fn d2_adj(&self, out: &mut [f64], i: isize, a: usize, c: f64) {
        let s = self.st[a];
        let c = c / (self.h * self.h);
        out[(i + s) as usize] += c;
        out[i as usize] -= 2.0 * c;
        out[(i - s) as usize] += c;
    }

    fn mixed_adj(&self, out: &mut [f64], i: isize, a: usize, b: usize, c: f64) {
        let (sa, sb) = (self.st[a], self.st[b]);
        let c = c / (4.0 * self.h * self.h);
        out[(i + sa + sb) as usize] += c;
        out[(i + sa - sb) as usize] -= c;
        out[(i - sa + sb) as usize] -= c;
        out[(i - sa - sb) as usize] += c;
    }

    /// Adds the gradient of `ψ ↦ ⟨W, H(ψ)⟩_F` at node `i`.
    fn hess_adj(&self, out: &mut [f64], i: usize, w: Herm) {
        let i = i as isize;
        self.d2_adj(out, i, 0, 0.25 * w.a);
        self.d2_adj(out, i, 1, 0.25 * w.a);
        if self.n == 2 {
            self.d2_adj(out, i, 2, 0.25 * w.b);
            self.d2_adj(out, i, 3, 0.25 * w.b);
            self.mixed_adj(out, i, 0, 2, 0.5 * w.cr);
            self.mixed_adj(out, i, 1, 3, 0.5 * w.cr);
            self.mixed_adj(out, i, 0, 3, 0.5 * w.ci);
            self.mixed_adj(out, i, 1, 2, -0.5 * w.ci);
        }
    }

    /// Forward and backward real gradients at node `i`.
    fn grads(&self, v: &[f64], i: usize) -> ([f64; 4], [f64; 4]) {
        let mut gf = [0.0; 4];
        let mut gb = [0.0; 4];
        let ii = i as isize;
        for a in 0..self.dim {
            let s = self.st[a];
            gf[a] = (v[(ii + s) as usize] - v[i]) / self.h;
            gb[a] = (v[i] - v[(ii - s) as usize]) / self.h;
        }
        (gf, gb)
    }

    fn grads_adj(&self, out: &mut [f64], i: usize, df: &[f64; 4], db: &[f64; 4]) {
        let ii = i as isize;
        for a in 0..self.dim {
            let s = self.st[a];
            out[(ii + s) as usize] += df[a] / self.h;
            out[i] -= df[a] / self.h;
            out[i] += db[a] / self.h;
            out[(ii - s) as usize] -= db[a] / self.h;
        }
    }

    fn gradient_form(&self, v: &[f64], i: usize) -> Herm {
        let (gf, gb) = self.grads(v, i);
        crate::calculus::outer_from_real_gradient(&gf, self.n)
            .add(crate::calculus::outer_from_real_gradient(&gb, self.n))
            .scale(0.5)
    }
}

/// Potential with `tr H(ψ) = tr G(v)` on inside nodes and `ψ = 0` off Ω,
/// by SOR. For n = 1 this gives `H(ψ) = G(v)` exactly.
fn initial_potential(dom: &GridDomain, v: &[f64], cal: &Calibration) -> Result<Vec<f64>> {
    let ops = Ops::new(dom);
    let h2 = dom.spacing() * dom.spacing();
    let dim = dom.real_dim();
    let s = dom.strides();
    let mut rhs = vec![0.0; dom.len()];
    let mut scale: f64 = 0.0;
    for &i in &ops.inside {
        rhs[i] = 4.0 * h2 * ops.gradient_form(v, i).trace(cal.n);
        scale = scale.max(rhs[i].abs());
    }
    let mut psi = vec![0.0; dom.len()];
    let omega = 2.0 / (1.0 + std::f64::consts::PI / dom.extent() as f64);
    for _ in 0..100_000 {
        let mut res: f64 = 0.0;
        for &i in &ops.inside {
            let mut sum = 0.0;
            for &st in &s[..dim] {
                sum += psi[i + st] + psi[i - st];
            }
            let d = (sum - rhs[i]) / (2 * dim) as f64 - psi[i];
            res = res.max(d.abs());
            psi[i] += omega * d;
        }
        if res <= 1e-11 * scale.max(1e-300) {
            return Ok(psi);
        }
    }
    warn!("initial potential solve did not reach tolerance");
    Ok(psi)
}

/// Gradient of `g ↦ ⟨A, p p*⟩_F` with `p_j = ½(g_{x_j} − i g_{y_j})`.
fn quad_grad(a: Herm, g: &[f64; 4], n: usize) -> [f64; 4] {
    if n == 1 {
        return [0.5 * a.a * g[0], 0.5 * a.a * g[1], 0.0, 0.0];
    }
    [
        0.5 * (a.a * g[0] + a.cr * g[2] + a.ci * g[3]),
        0.5 * (a.a * g[1] + a.cr * g[3] - a.ci * g[2]),
        0.5 * (a.b * g[2] + a.cr * g[0] - a.ci * g[1]),
        0.5 * (a.b * g[3] + a.cr * g[1] + a.ci * g[0]),
    ]
}

/// Frobenius inner product of Hermitian matrices.
#[cfg(test)]
fn frob(a: Herm, b: Herm, n: usize) -> f64 {
    if n == 1 {
        a.a * b.a
    } else {
        a.a * b.a + a.b * b.b + 2.0 * (a.cr * b.cr + a.ci * b.ci)
    }
}

struct Penalty<'a> {
    ops: &'a Ops,
    cell: f64,
    ct: f64,
    /// Scale of ψ relative to the optimization variable.
    psi_scale: f64,
}

impl Penalty<'_> {
    /// Augmented Lagrangian of the domination constraint `C = H(ψ) − G(v) ≽ 0`
    /// with multipliers `lam`, and its gradient in `(v, φ)`, `ψ = psi_scale·φ`.
    fn eval(
        &self,
        v: &[f64],
        phi: &[f64],
        lam: &[Herm],
        mu: f64,
        gv: &mut [f64],
        gphi: &mut [f64],
    ) -> f64 {
        let ops = self.ops;
        let n = ops.n;
        gv.iter_mut().for_each(|x| *x = 0.0);
        gphi.iter_mut().for_each(|x| *x = 0.0);
        let psi: Vec<f64> = phi.iter().map(|x| x * self.psi_scale).collect();
        let mut terms = Vec::with_capacity(ops.inside.len());
        for (k, &i) in ops.inside.iter().enumerate() {
            let h = ops.hess(&psi, i);
            let (gf, gb) = ops.grads(v, i);
            let g = crate::calculus::outer_from_real_gradient(&gf, n)
                .add(crate::calculus::outer_from_real_gradient(&gb, n))
                .scale(0.5);
            let shifted = lam[k].sub(h.sub(g).scale(mu));
            let p = shifted.sub(shifted.negative_part(n));
            terms.push(
                v[i] * v[i] + self.ct * h.trace(n) + (p.frob2(n) - lam[k].frob2(n)) / (2.0 * mu),
            );
            gv[i] += 2.0 * v[i];
            ops.hess_adj(gphi, i, Herm::identity().scale(self.ct).sub(p));
            let qf = quad_grad(p, &gf, n);
            let qb = quad_grad(p, &gb, n);
            ops.grads_adj(gv, i, &qf.map(|x| 0.5 * x), &qb.map(|x| 0.5 * x));
        }
        for x in gv.iter_mut() {
            *x *= self.cell;
        }
        for x in gphi.iter_mut() {
            *x *= self.cell * self.psi_scale;
        }
        pairwise_sum(&terms) * self.cell
    }

    fn constraint_at(&self, v: &[f64], psi: &[f64], i: usize) -> Herm {
        self.ops.hess(psi, i).sub(self.ops.gradient_form(v, i))
    }

    /// Feasible objective after lifting ψ by `t|z|²`, and `t`.
    fn restore(&self, dom: &GridDomain, v: &[f64], psi: &mut [f64]) -> (f64, f64) {
        let t = (-self.min_margin(v, psi)).max(0.0);
        if t > 0.0 {
            for (i, p) in psi.iter_mut().enumerate() {
                *p += t * dom.norm2(i);
            }
        }
        (self.objective(v, psi), t)
    }

    fn objective(&self, v: &[f64], psi: &[f64]) -> f64 {
        let ops = self.ops;
        let terms: Vec<f64> = ops
            .inside
            .iter()
            .map(|&i| v[i] * v[i] + self.ct * ops.hess(psi, i).trace(ops.n))
            .collect();
        pairwise_sum(&terms) * self.cell
    }

    /// `‖v‖² + c_t Σ tr G(v)`, a lower bound for `J(v, ψ)` over feasible ψ.
    fn gradient_bound(&self, v: &[f64]) -> f64 {
        let ops = self.ops;
        let terms: Vec<f64> = ops
            .inside
            .iter()
            .map(|&i| v[i] * v[i] + self.ct * ops.gradient_form(v, i).trace(ops.n))
            .collect();
        pairwise_sum(&terms) * self.cell
    }

    fn min_margin(&self, v: &[f64], psi: &[f64]) -> f64 {
        self.ops
            .inside
            .iter()
            .map(|&i| self.constraint_at(v, psi, i).min_eig(self.ops.n))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Functional capacity `𝚌(E, Ω)`; dispatches to the exact branch for
/// n = 1 unless disabled.
pub fn functional_capacity(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
) -> Result<CapacityResult> {
    opts.validate()?;
    let mut res = if dom.complex_dim() == 1 && opts.exact_n1 {
        functional_capacity_n1(set, dom, opts, None)?
    } else {
        functional_capacity_penalty(set, dom, cal, opts)?
    };
    // |E| ≤ 𝚌(E) holds for every admissible pair; a failure means a bug.
    let vol = volume(set);
    res.residuals.insert("volume".into(), vol);
    if res.value < vol * (1.0 - 1e-9) {
        return Err(CapError::Precondition(format!(
            "capacity {} below the volume {vol} of the set",
            res.value
        )));
    }
    Ok(res)
}

/// Projected Barzilai–Borwein minimization of the augmented Lagrangian in
/// `(v, φ)`. Returns the final value.
#[allow(clippy::too_many_arguments)]
fn inner_solve(
    pen: &Penalty,
    free: &[usize],
    v: &mut Vec<f64>,
    phi: &mut Vec<f64>,
    lam: &[Herm],
    mu: f64,
    step: &mut f64,
    iters: usize,
) -> f64 {
    let len = v.len();
    let mut gv = vec![0.0; len];
    let mut gphi = vec![0.0; len];
    let mut f = pen.eval(v, phi, lam, mu, &mut gv, &mut gphi);
    let mut recent = [f; 10];
    let mut ngv = vec![0.0; len];
    let mut ngphi = vec![0.0; len];
    for it in 0..iters {
        // Nonmonotone Armijo backtracking along the projected step.
        let fref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = *step;
        let mut nv = v.clone();
        let mut nphi = phi.clone();
        let mut nf;
        let mut tries = 0;
        loop {
            for &i in free {
                nv[i] = (v[i] - alpha * gv[i]).clamp(-1.0, 0.0);
            }
            for k in 0..len {
                nphi[k] = phi[k] - alpha * gphi[k];
            }
            nf = pen.eval(&nv, &nphi, lam, mu, &mut ngv, &mut ngphi);
            let mut dec = 0.0;
            for &i in free {
                dec += gv[i] * (nv[i] - v[i]);
            }
            for k in 0..len {
                dec += gphi[k] * (nphi[k] - phi[k]);
            }
            if nf <= fref + 1e-4 * dec || tries > 30 {
                break;
            }
            alpha *= 0.5;
            tries += 1;
        }
        let mut ss = 0.0;
        let mut sy = 0.0;
        for &i in free {
            let s = nv[i] - v[i];
            ss += s * s;
            sy += s * (ngv[i] - gv[i]);
        }
        for k in 0..len {
            let s = nphi[k] - phi[k];
            ss += s * s;
            sy += s * (ngphi[k] - gphi[k]);
        }
        *step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { alpha * 2.0 };
        let change = (f - nf).abs();
        *v = nv;
        *phi = nphi;
        std::mem::swap(&mut gv, &mut ngv);
        std::mem::swap(&mut gphi, &mut ngphi);
        f = nf;
        recent[it % 10] = f;
        if ss.sqrt() < 1e-13 && change < 1e-15 * f.abs().max(1.0) {
            break;
        }
    }
    f
}

/// Augmented-Lagrangian solver valid in both dimensions.
///
/// Multipliers start at `c_t·I`, the exact multiplier wherever the
/// domination constraint is active, and are updated once per outer
/// iteration; the weight follows `penalty_weights`, holding its last
/// entry. Every outer iterate is made feasible by lifting `ψ` with
/// `t|z|²` and the best feasible `J` is kept.
pub fn functional_capacity_penalty(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
) -> Result<CapacityResult> {
    functional_capacity_candidates(set, dom, cal, opts, &[])
}

/// As [`functional_capacity`], additionally starting from caller-supplied
/// `(v, ψ)` pairs. Candidates are clamped to the constraint set and lifted
/// to feasibility, so the result never exceeds the best candidate's `J`.
pub fn functional_capacity_with(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
    candidates: &[(GridField, GridField)],
) -> Result<CapacityResult> {
    if dom.complex_dim() == 1 && opts.exact_n1 {
        return functional_capacity(set, dom, cal, opts);
    }
    opts.validate()?;
    functional_capacity_candidates(set, dom, cal, opts, candidates)
}

fn functional_capacity_candidates(
    set: &BorelSet,
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
    candidates: &[(GridField, GridField)],
) -> Result<CapacityResult> {
    opts.validate()?;
    let con = constraint(set, dom, opts.neighborhood_cells)?;
    let n = dom.complex_dim();
    if set.is_empty() {
        let z = GridField::constant(dom, 0.0);
        return Ok(CapacityResult {
            value: 0.0,
            method: CapMethod::Functional,
            minimizer: vec![z.clone(), z],
            residuals: BTreeMap::new(),
            converged: true,
            grid_meta: GridMeta::of(dom, None),
        });
    }
    if cal.n != n || !cal.is_calibrated() {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    let ops = Ops::new(dom);
    let pen = Penalty {
        ops: &ops,
        cell: dom.cell_volume(),
        ct: cal.trace_constant,
        psi_scale: dom.spacing(),
    };
    // v starts at the trace-bound minimizer, whose value is a lower bound.
    let lower = trace_bound_capacity(set, dom, cal, opts, None)?;
    let mut v = lower.minimizer[0].values().to_vec();
    let mut psi = initial_potential(dom, &v, cal)?;
    let (mut best, t0) = pen.restore(dom, &v, &mut psi);
    debug!("trace-bound warm start J = {best:.6e} (lift {t0:.3e})");
    let fixed = dilate(set, opts.neighborhood_cells);
    if n > 1 && fixed.has_margin(2) {
        // (v, ψ) = (u, ½(1 + u)²) with u the extremal function of the fixed
        // region: ddᶜψ = (1 + u) ddᶜu + du ∧ dᶜu dominates du ∧ dᶜu.
        let ue = relative_extremal_report(&fixed, dom, &opts.envelope)?.field;
        let mut u = con.base.clone();
        for &i in &con.free {
            u[i] = ue.value(i).clamp(-1.0, 0.0);
        }
        let mut q: Vec<f64> = u.iter().map(|x| 0.5 * (1.0 + x) * (1.0 + x)).collect();
        let (j, t) = pen.restore(dom, &u, &mut q);
        debug!("extremal warm start J = {j:.6e} (lift {t:.3e})");
        if j < best {
            best = j;
            v = u;
            psi = q;
        }
    }
    for (k, (cv, cpsi)) in candidates.iter().enumerate() {
        let mut u = con.base.clone();
        for &i in &con.free {
            u[i] = if cv.is_defined(i) { cv.value(i).clamp(-1.0, 0.0) } else { 0.0 };
        }
        let mut q: Vec<f64> =
            cpsi.values().iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
        let (j, t) = pen.restore(dom, &u, &mut q);
        debug!("candidate {k}: J = {j:.6e} (lift {t:.3e})");
        if j < best {
            best = j;
            v = u;
            psi = q;
        }
    }
    let mut best_v = v.clone();
    let mut best_psi = psi.clone();
    let mut history = vec![best];
    let mut lam = vec![Herm::identity().scale(pen.ct); ops.inside.len()];
    if n == 1 {
        lam.iter_mut().for_each(|l| *l = Herm::scalar(pen.ct));
    }
    let mut phi: Vec<f64> = psi.iter().map(|p| p / pen.psi_scale).collect();
    let mut step = opts.step_size;
    let mut lagrangian = f64::NAN;
    let mut margin = f64::NAN;
    for outer in 0..opts.max_outer {
        let mu = opts.penalty_weights[outer.min(opts.penalty_weights.len() - 1)];
        lagrangian = inner_solve(&pen, &con.free, &mut v, &mut phi, &lam, mu, &mut step, opts.inner_iters);
        psi = phi.iter().map(|p| p * pen.psi_scale).collect();
        for (k, &i) in ops.inside.iter().enumerate() {
            let s = lam[k].sub(pen.constraint_at(&v, &psi, i).scale(mu));
            lam[k] = s.sub(s.negative_part(n));
        }
        margin = pen.min_margin(&v, &psi);
        let mut lifted = psi.clone();
        let (feasible, t) = pen.restore(dom, &v, &mut lifted);
        debug!(
            "outer {outer}: μ = {mu:.1e}, lagrangian {lagrangian:.6e}, margin {margin:.3e}, feasible {feasible:.6e} (lift {t:.2e})"
        );
        if feasible < best {
            best = feasible;
            best_v = v.clone();
            best_psi = lifted;
        }
        history.push(best);
    }
    let vf = GridField::new(dom, best_v, vec![true; dom.len()])?;
    let pf = GridField::new(dom, best_psi, vec![true; dom.len()])?;
    let mut residuals = BTreeMap::new();
    residuals.insert("domination_margin".into(), margin);
    residuals.insert("lagrangian".into(), lagrangian);
    residuals.insert("lower_bound".into(), lower.value);
    residuals.insert("gradient_bound".into(), pen.gradient_bound(vf.values()));
    for (k, j) in history.iter().enumerate() {
        residuals.insert(format!("best_j_{k}"), *j);
    }
    Ok(CapacityResult {
        value: best,
        method: CapMethod::Functional,
        minimizer: vec![vf, pf],
        residuals,
        converged: margin >= -opts.psd_projection_tol,
        grid_meta: GridMeta::of(dom, None),
    })
}

/// Smallest-found trace mass of `ddᶜψ` over potentials with
/// `G(f) ≼ H(ψ)` at every inside node, `f` frozen.
#[derive(Clone, Debug)]
pub struct DominatingPotential {
    pub psi: Vec<f64>,
    /// `c_t Σ tr H(ψ) h^{2n}` over inside nodes.
    pub trace_mass: f64,
    /// Most negative eigenvalue of `H(ψ) − G(f)` before the final lift.
    pub margin_before_lift: f64,
    /// Lower bound `c_t Σ tr G(f) h^{2n}` for the trace mass.
    pub lower_bound: f64,
}

/// Minimizes the trace mass of `ddᶜψ` subject to domination of the
/// gradient form of `f`. Exact for n = 1 (a Poisson solve); for n = 2 the
/// augmented-Lagrangian solver runs with `f` frozen, starting from the
/// Poisson potential and any `candidates`.
pub fn dominating_potential(
    dom: &Arc<GridDomain>,
    f: &[f64],
    cal: &Calibration,
    opts: &FunctionalCapOptions,
    candidates: &[Vec<f64>],
) -> Result<DominatingPotential> {
    opts.validate()?;
    if cal.n != dom.complex_dim() || !cal.is_calibrated() {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    if f.len() != dom.len() || f.iter().any(|x| !x.is_finite()) {
        return Err(CapError::Precondition("f must be finite on every node".into()));
    }
    let n = dom.complex_dim();
    let ops = Ops::new(dom);
    let pen = Penalty {
        ops: &ops,
        cell: dom.cell_volume(),
        ct: cal.trace_constant,
        psi_scale: dom.spacing(),
    };
    let l2 = pairwise_sum(&ops.inside.iter().map(|&i| f[i] * f[i]).collect::<Vec<_>>()) * pen.cell;
    let lower_bound = pen.gradient_bound(f) - l2;
    let mut psi = initial_potential(dom, f, cal)?;
    let mut margin = pen.min_margin(f, &psi);
    let (mut best, _) = pen.restore(dom, f, &mut psi);
    for c in candidates {
        let mut q = c.clone();
        let m = pen.min_margin(f, &q);
        let (j, _) = pen.restore(dom, f, &mut q);
        if j < best {
            best = j;
            psi = q;
            margin = m;
        }
    }
    if n > 1 {
        let mut lam = vec![Herm::identity().scale(pen.ct); ops.inside.len()];
        let mut phi: Vec<f64> = psi.iter().map(|p| p / pen.psi_scale).collect();
        let mut step = opts.step_size;
        let mut v = f.to_vec();
        for outer in 0..opts.max_outer {
            let mu = opts.penalty_weights[outer.min(opts.penalty_weights.len() - 1)];
            inner_solve(&pen, &[], &mut v, &mut phi, &lam, mu, &mut step, opts.inner_iters);
            let cur: Vec<f64> = phi.iter().map(|p| p * pen.psi_scale).collect();
            for (k, &i) in ops.inside.iter().enumerate() {
                let s = lam[k].sub(pen.constraint_at(f, &cur, i).scale(mu));
                lam[k] = s.sub(s.negative_part(n));
            }
            let m = pen.min_margin(f, &cur);
            let mut lifted = cur;
            let (j, t) = pen.restore(dom, f, &mut lifted);
            debug!("potential outer {outer}: J = {j:.6e} (lift {t:.2e})");
            if j < best {
                best = j;
                psi = lifted;
                margin = m;
            }
        }
    }
    Ok(DominatingPotential { trace_mass: best - l2, psi, margin_before_lift: margin, lower_bound })
}

/// `T_R(K) = e^{−M_K}` from the Siciak extremal function on `B_{outer·R}`.
pub fn at_capacity(
    k: &BorelSet,
    r: f64,
    outer_factor: f64,
    opts: &EnvelopeOptions,
) -> Result<CapacityResult> {
    let res = siciak_extremal(k, r, outer_factor, opts)?;
    let mut residuals = BTreeMap::new();
    residuals.insert("m_k".into(), res.m_k);
    residuals.insert("error_budget".into(), res.error_budget);
    residuals.insert("outer_radius".into(), res.outer_radius_s);
    residuals.insert("boundary_constant".into(), res.boundary_constant);
    let meta = GridMeta::of(res.field.domain(), None);
    Ok(CapacityResult {
        value: res.at_capacity(),
        method: CapMethod::AlexanderTaylor,
        minimizer: vec![res.field],
        residuals,
        converged: res.converged,
        grid_meta: meta,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChoquetCheck {
    pub kind: String,
    pub trial: usize,
    /// Left side of the asserted inequality `lhs ≤ rhs`.
    pub lhs: f64,
    pub rhs: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChoquetReport {
    pub seed: u64,
    pub trials: usize,
    pub rel_tol: f64,
    pub checks: Vec<ChoquetCheck>,
    /// Violation counts per kind.
    pub violations: BTreeMap<String, usize>,
}

impl ChoquetReport {
    pub fn total_violations(&self) -> usize {
        self.violations.values().sum()
    }
}

/// Random ball or box with all points inside the disc of radius `reach`.
fn random_shape(rng: &mut ChaCha8Rng, n: usize, reach: f64) -> ShapeSpec {
    let dim = 2 * n;
    let size = rng.gen_range(0.08..0.25) * reach;
    let room = (reach - size * (dim as f64).sqrt()) / (dim as f64).sqrt();
    let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-room..room)).collect();
    if rng.gen_bool(0.5) {
        ShapeSpec::ball(&c, size)
    } else {
        let lo: Vec<f64> = c.iter().map(|x| x - size).collect();
        let hi: Vec<f64> = c.iter().map(|x| x + size).collect();
        ShapeSpec::cuboid(&lo, &hi)
    }
}

/// Randomized checks of the Choquet-capacity axioms for `𝚌` on `dom`.
///
/// Per trial: monotonicity `𝚌(E) ≤ 𝚌(E ∪ G)`, subadditivity
/// `𝚌(E₁ ∪ E₂) ≤ 𝚌(E₁) + 𝚌(E₂)`, a decreasing sequence of closed balls
/// whose distance to the limit value must not increase, and an
/// increasing union whose values must not decrease.
pub fn choquet_battery(
    dom: &Arc<GridDomain>,
    seed: u64,
    trials: usize,
    opts: &FunctionalCapOptions,
) -> Result<ChoquetReport> {
    let rel_tol = 1e-6;
    let cal = Calibration::analytic(dom.complex_dim())?;
    let n = dom.complex_dim();
    // Largest centered radius whose ball keeps a margin of three cells.
    let reach = {
        let mut best = f64::INFINITY;
        for i in 0..dom.len() {
            if !dom.is_inside(i) {
                best = best.min(dom.norm2(i).sqrt());
            }
        }
        best - 3.0 * dom.spacing()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = |shape: &ShapeSpec| -> Result<(BorelSet, f64)> {
        let e = rasterize_set(shape, dom);
        let c = functional_capacity(&e, dom, &cal, opts)?.value;
        Ok((e, c))
    };
    let cap_set = |e: &BorelSet| -> Result<f64> { Ok(functional_capacity(e, dom, &cal, opts)?.value) };
    let leq = |a: f64, b: f64| a <= b + rel_tol * a.abs().max(b.abs()).max(1e-300);
    let mut checks = Vec::new();
    for t in 0..trials {
        let s1 = random_shape(&mut rng, n, reach);
        let s2 = random_shape(&mut rng, n, reach);
        let (e1, c1) = cap(&s1)?;
        let (e2, c2) = cap(&s2)?;
        let c12 = cap_set(&e1.union(&e2))?;
        checks.push(ChoquetCheck {
            kind: "monotonicity".into(),
            trial: t,
            lhs: c1,
            rhs: c12,
            violation: !leq(c1, c12),
        });
        checks.push(ChoquetCheck {
            kind: "subadditivity".into(),
            trial: t,
            lhs: c12,
            rhs: c1 + c2,
            violation: !leq(c12, c1 + c2),
        });

        // Decreasing closed balls around a random center.
        let r0 = rng.gen_range(0.1..0.3) * reach;
        let room = (reach - 2.0 * r0) / (2.0 * n as f64).sqrt();
        let c: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-room..room)).collect();
        let limit = cap_set(&rasterize_set(&ShapeSpec::ball(&c, r0), dom))?;
        let mut prev = f64::INFINITY;
        let mut ok = true;
        let mut worst = (0.0, 0.0);
        for j in 1..=5 {
            let rj = r0 * (1.0 + 2f64.powi(-(j as i32)));
            let gap = cap_set(&rasterize_set(&ShapeSpec::ball(&c, rj), dom))? - limit;
            if !(gap >= -rel_tol * limit && leq(gap, prev)) {
                ok = false;
                worst = (gap, prev);
            }
            prev = gap;
        }
        checks.push(ChoquetCheck {
            kind: "decreasing_limit".into(),
            trial: t,
            lhs: if ok { prev } else { worst.0 },
            rhs: if ok { prev } else { worst.1 },
            violation: !ok,
        });

        // Increasing unions E₁ ⊂ E₁ ∪ E₂ ⊂ E₁ ∪ E₂ ∪ E₃.
        let s3 = random_shape(&mut rng, n, reach);
        let e123 = e1.union(&e2).union(&rasterize_set(&s3, dom));
        let c123 = cap_set(&e123)?;
        checks.push(ChoquetCheck {
            kind: "increasing_union".into(),
            trial: t,
            lhs: c12,
            rhs: c123,
            violation: !(leq(c1, c12) && leq(c12, c123)),
        });
    }
    let mut violations = BTreeMap::new();
    for k in ["monotonicity", "subadditivity", "decreasing_limit", "increasing_union"] {
        violations.insert(k.to_string(), 0);
    }
    for c in &checks {
        if c.violation {
            *violations.get_mut(&c.kind).unwrap() += 1;
        }
    }
    Ok(ChoquetReport {
        seed,
        trials,
        rel_tol,
        checks,
        violations,
    })
}
