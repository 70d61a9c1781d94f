//! Discrete complex calculus on grid fields.
//!
//! Normalization: `dᶜ = (i/2π)(∂̄ − ∂)`, so `ddᶜ = (i/π)∂∂̄`. A Hermitian
//! field `T` stands for the current `(i/π) Σ T_{jk̄} dz_j ∧ dz̄_k`, and
//! `complex_hessian(u)` returns the matrix `∂²u/∂z_j∂z̄_k`, so that the
//! Kähler form `ω = ddᶜ|z|²` has the identity as coefficient matrix.

use std::f64::consts::PI;
use std::sync::Arc;

use log::debug;
use rayon::prelude::*;

use crate::error::{CapError, Result};
use crate::field::{GridField, Herm, HermitianField};
use crate::grid::{BorelSet, GridDomain};
use crate::reduce::pairwise_sum;

/// Volume-form constants turning coefficient sums into masses.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Calibration {
    pub n: usize,
    /// `∫ T ∧ ω^{n−1} = trace_constant · ∫ tr(T) dV`.
    pub trace_constant: f64,
    /// `∫ (ddᶜu)ⁿ = ma_constant · ∫ det(u_{jk̄}) dV`.
    pub ma_constant: f64,
}

impl Calibration {
    /// Closed-form constants: `(i/π)ⁿ` times the wedge combinatorics of
    /// `i dz∧dz̄ = 2 dx∧dy`. The numerical anchor in [`anchor_check`]
    /// reproduces them.
    pub fn analytic(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Calibration { n, trace_constant: 2.0 / PI, ma_constant: 2.0 / PI }),
            2 => Ok(Calibration {
                n,
                trace_constant: 4.0 / (PI * PI),
                ma_constant: 8.0 / (PI * PI),
            }),
            _ => Err(CapError::Dimension(n)),
        }
    }

    pub fn uncalibrated(n: usize) -> Self {
        Calibration { n, trace_constant: 0.0, ma_constant: 0.0 }
    }

    pub fn for_domain(dom: &GridDomain) -> Self {
        Self::analytic(dom.complex_dim()).expect("domains have n ∈ {1, 2}")
    }

    pub fn is_calibrated(&self) -> bool {
        self.trace_constant > 0.0 && self.ma_constant > 0.0
    }

    fn require(&self, n: usize) -> Result<()> {
        if !self.is_calibrated() {
            return Err(CapError::Precondition("calibration constants not set".into()));
        }
        if self.n != n {
            return Err(CapError::DomainMismatch(format!(
                "calibration for n = {} used on n = {n}",
                self.n
            )));
        }
        Ok(())
    }
}

/// C² convex nondecreasing ramp: 0 for x ≤ −1, x for x ≥ 1.
pub fn smooth_ramp(x: f64) -> f64 {
    if x <= -1.0 {
        0.0
    } else if x >= 1.0 {
        x
    } else {
        (x + 1.0).powi(3) * (3.0 - x) / 16.0
    }
}

/// Max-type regularization of `log|z|` at scale δ: a convex increasing
/// function of `log|z|²`, equal to `log|z|` for `|z|² ≥ e δ²` and to
/// `log δ` near the origin. Psh, and its Monge–Ampère mass is exactly 1.
pub fn reg_log_max(r2: f64, delta: f64) -> f64 {
    let a = (delta * delta).ln();
    if r2 <= 0.0 {
        return 0.5 * a;
    }
    0.5 * (a + smooth_ramp(r2.ln() - a))
}

/// Smooth regularization `½ log(|z|² + δ²)`.
pub fn reg_log_smooth(r2: f64, delta: f64) -> f64 {
    0.5 * (r2 + delta * delta).ln()
}

/// Regularization scale actually used: `max(4h, requested)`.
pub fn reg_scale(dom: &GridDomain, requested: f64) -> f64 {
    requested.max(4.0 * dom.spacing())
}

/// Normalized `η(t) = e^{1/(t²−1)}` weights on the lattice ball of radius ε.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub eps: f64,
    reach: usize,
    offsets: Vec<isize>,
    weights: Vec<f64>,
}

impl Mollifier {
    pub fn new(dom: &GridDomain, eps: f64) -> Result<Self> {
        let h = dom.spacing();
        if !(eps >= 2.0 * h - 1e-12) {
            return Err(CapError::UnderResolved { eps, min: 2.0 * h });
        }
        let mut offsets = Vec::new();
        let mut raw = Vec::new();
        for o in dom.ball_offsets(eps) {
            let t2 = o.iter().map(|&x| (x * x) as f64).sum::<f64>() * h * h / (eps * eps);
            if t2 < 1.0 {
                offsets.push(dom.flat_offset(&o));
                raw.push((1.0 / (t2 - 1.0)).exp());
            }
        }
        let total = pairwise_sum(&raw);
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Mollifier {
            eps,
            reach: (eps / h).ceil() as usize,
            offsets,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Convolution at one node, `None` if some stencil node is undefined.
    pub fn apply_at(&self, f: &GridField, i: usize) -> Option<f64> {
        let dom = f.domain();
        if !dom.is_inside(i) || dom.edge_distance(i) < self.reach {
            return None;
        }
        let mut s = 0.0;
        for (&o, &w) in self.offsets.iter().zip(&self.weights) {
            let j = (i as isize + o) as usize;
            if !f.is_defined(j) {
                return None;
            }
            s += w * f.value(j);
        }
        Some(s)
    }

    pub fn apply(&self, f: &GridField) -> GridField {
        let dom = f.domain();
        let out: Vec<Option<f64>> = (0..dom.len()).into_par_iter().map(|i| self.apply_at(f, i)).collect();
        let defined = out.iter().map(|o| o.is_some()).collect();
        let values = out.into_iter().map(|o| o.unwrap_or(f64::NAN)).collect();
        GridField::new(dom, values, defined).expect("lengths match")
    }
}

/// `f ∗ η_ε` on the shrunken domain; ε must be at least `2h`.
pub fn mollify(f: &GridField, eps: f64) -> Result<GridField> {
    Ok(Mollifier::new(f.domain(), eps)?.apply(f))
}

/// Component-wise mollification of a Hermitian field.
pub fn mollify_hermitian(t: &HermitianField, eps: f64) -> Result<HermitianField> {
    let m = Mollifier::new(t.domain(), eps)?;
    let comps: Vec<GridField> = t.components().iter().map(|c| m.apply(c)).collect();
    HermitianField::from_components(&comps)
}

fn lattice_ball(dom: &GridDomain, x: usize, r: f64) -> Result<Vec<usize>> {
    let mut nodes = Vec::new();
    for o in dom.ball_offsets(r) {
        match dom.offset_index(x, &o) {
            Some(j) if dom.is_inside(j) => nodes.push(j),
            _ => return Err(CapError::BallEscapes { radius: r }),
        }
    }
    Ok(nodes)
}

/// Average of `f` over the nodes within distance `r` of node `x`.
pub fn ball_mean(f: &GridField, x: usize, r: f64) -> Result<f64> {
    let dom = f.domain();
    if !(r >= 2.0 * dom.spacing() - 1e-12) {
        return Err(CapError::UnderResolved { eps: r, min: 2.0 * dom.spacing() });
    }
    let nodes = lattice_ball(dom, x, r)?;
    let vals: Vec<f64> = nodes.iter().filter(|&&j| f.is_defined(j)).map(|&j| f.value(j)).collect();
    if vals.is_empty() {
        return Err(CapError::Precondition("field undefined on the ball".into()));
    }
    Ok(pairwise_sum(&vals) / vals.len() as f64)
}

#[inline]
fn val(u: &GridField, i: isize) -> Option<f64> {
    let i = i as usize;
    u.is_defined(i).then(|| u.value(i))
}

/// Complex Hessian `∂²u/∂z_j∂z̄_k` at one node from central differences.
pub fn hessian_at(u: &GridField, i: usize) -> Option<Herm> {
    let dom = u.domain();
    if dom.edge_distance(i) < 1 {
        return None;
    }
    let h2 = dom.spacing() * dom.spacing();
    let s = dom.strides();
    let ii = i as isize;
    let c = val(u, ii)?;
    let d2 = |a: usize| -> Option<f64> {
        let st = s[a] as isize;
        Some((val(u, ii + st)? - 2.0 * c + val(u, ii - st)?) / h2)
    };
    let mixed = |a: usize, b: usize| -> Option<f64> {
        let (sa, sb) = (s[a] as isize, s[b] as isize);
        Some(
            (val(u, ii + sa + sb)? - val(u, ii + sa - sb)? - val(u, ii - sa + sb)?
                + val(u, ii - sa - sb)?)
                / (4.0 * h2),
        )
    };
    if dom.complex_dim() == 1 {
        return Some(Herm::scalar(0.25 * (d2(0)? + d2(1)?)));
    }
    let a = 0.25 * (d2(0)? + d2(1)?);
    let b = 0.25 * (d2(2)? + d2(3)?);
    let cr = 0.25 * (mixed(0, 2)? + mixed(1, 3)?);
    let ci = 0.25 * (mixed(0, 3)? - mixed(1, 2)?);
    Some(Herm { a, b, cr, ci })
}

/// Complex Hessian on inside nodes whose full stencil is defined.
pub fn complex_hessian(u: &GridField) -> HermitianField {
    let dom = u.domain().clone();
    HermitianField::from_fn(&dom, |i| if dom.is_inside(i) { hessian_at(u, i) } else { None })
}

/// `(∂_j f) conj(∂_k f)` from the real gradient `(f_{x1}, f_{y1}, ...)`.
pub fn outer_from_real_gradient(g: &[f64], n: usize) -> Herm {
    let (p1r, p1i) = (0.5 * g[0], -0.5 * g[1]);
    if n == 1 {
        return Herm::scalar(p1r * p1r + p1i * p1i);
    }
    let (p2r, p2i) = (0.5 * g[2], -0.5 * g[3]);
    // p1 · conj(p2)
    Herm {
        a: p1r * p1r + p1i * p1i,
        b: p2r * p2r + p2i * p2i,
        cr: p1r * p2r + p1i * p2i,
        ci: p1i * p2r - p1r * p2i,
    }
}

/// Central-difference gradient form at one node.
pub fn gradient_at(f: &GridField, i: usize) -> Option<Herm> {
    let dom = f.domain();
    if dom.edge_distance(i) < 1 {
        return None;
    }
    let h = dom.spacing();
    let ii = i as isize;
    let mut g = [0.0; 4];
    for (a, ga) in g.iter_mut().enumerate().take(dom.real_dim()) {
        let st = dom.strides()[a] as isize;
        *ga = (val(f, ii + st)? - val(f, ii - st)?) / (2.0 * h);
    }
    Some(outer_from_real_gradient(&g, dom.complex_dim()))
}

/// Average of the all-forward and all-backward one-sided gradient forms.
/// Free of the odd-even blind spot of central differences; for n = 1 its
/// trace sums to the 5-point Dirichlet energy.
pub fn upwind_gradient_at(f: &GridField, i: usize) -> Option<Herm> {
    let dom = f.domain();
    if dom.edge_distance(i) < 1 {
        return None;
    }
    let h = dom.spacing();
    let ii = i as isize;
    let c = val(f, ii)?;
    let mut gf = [0.0; 4];
    let mut gb = [0.0; 4];
    for a in 0..dom.real_dim() {
        let st = dom.strides()[a] as isize;
        gf[a] = (val(f, ii + st)? - c) / h;
        gb[a] = (c - val(f, ii - st)?) / h;
    }
    let n = dom.complex_dim();
    Some(
        outer_from_real_gradient(&gf, n)
            .add(outer_from_real_gradient(&gb, n))
            .scale(0.5),
    )
}

/// `df ∧ dᶜf` coefficients `(∂_j f) conj(∂_k f)` on inside nodes.
pub fn gradient_form(f: &GridField) -> HermitianField {
    let dom = f.domain().clone();
    HermitianField::from_fn(&dom, |i| if dom.is_inside(i) { gradient_at(f, i) } else { None })
}

/// Upwind-averaged variant of [`gradient_form`].
pub fn gradient_form_upwind(f: &GridField) -> HermitianField {
    let dom = f.domain().clone();
    HermitianField::from_fn(&dom, |i| if dom.is_inside(i) { upwind_gradient_at(f, i) } else { None })
}

/// Pointwise test of `S ≼ T`: returns whether `λ_min(T − S) ≥ −tol` at every
/// node where both are defined, and the field of those minimal eigenvalues.
pub fn dominates(t: &HermitianField, s: &HermitianField, tol: f64) -> Result<(bool, GridField)> {
    let diff = t.sub(s)?;
    let margin = diff.min_eig_field();
    let ok = (0..margin.domain().len()).all(|i| !margin.is_defined(i) || margin.value(i) >= -tol);
    Ok((ok, margin))
}

/// `∫_region T ∧ ω^{n−1}`.
pub fn trace_mass(t: &HermitianField, region: &BorelSet, cal: &Calibration) -> Result<f64> {
    cal.require(t.complex_dim())?;
    if region.domain().len() != t.domain().len() {
        return Err(CapError::DomainMismatch("region and field lattices differ".into()));
    }
    Ok(cal.trace_constant * t.trace_integral(region.mask()))
}

/// Determinant after clipping negative eigenvalues to zero, and whether
/// clipping was needed.
pub fn clipped_det(m: Herm, n: usize) -> (f64, bool) {
    if n == 1 {
        return (m.a.max(0.0), m.a < 0.0);
    }
    let [l0, l1] = m.eigenvalues(2);
    (l0.max(0.0) * l1.max(0.0), l0 < 0.0)
}

/// Monge–Ampère density with negative-eigenvalue clipping; also returns
/// the number of clipped nodes.
pub fn ma_density_counted(u: &GridField, cal: &Calibration) -> Result<(GridField, usize)> {
    let dom = u.domain();
    cal.require(dom.complex_dim())?;
    let n = dom.complex_dim();
    let out: Vec<Option<(f64, bool)>> = (0..dom.len())
        .into_par_iter()
        .map(|i| {
            if !dom.is_inside(i) {
                return None;
            }
            hessian_at(u, i).map(|m| clipped_det(m, n))
        })
        .collect();
    let clipped = out.iter().filter(|o| matches!(o, Some((_, true)))).count();
    if clipped > 0 {
        debug!("ma_density: clipped negative eigenvalues at {clipped} nodes");
    }
    let defined = out.iter().map(|o| o.is_some()).collect();
    let values = out
        .into_iter()
        .map(|o| o.map_or(f64::NAN, |(d, _)| cal.ma_constant * d))
        .collect();
    Ok((GridField::new(dom, values, defined)?, clipped))
}

pub fn ma_density(u: &GridField, cal: &Calibration) -> Result<GridField> {
    Ok(ma_density_counted(u, cal)?.0)
}

/// `∫_region (ddᶜu)ⁿ` from the clipped density.
pub fn ma_mass(u: &GridField, region: &BorelSet, cal: &Calibration) -> Result<f64> {
    let d = ma_density(u, cal)?;
    let mask: Vec<bool> = region.mask().iter().zip(d.defined()).map(|(&a, &b)| a && b).collect();
    Ok(crate::reduce::masked_sum(&mask, |i| d.value(i)) * u.domain().cell_volume())
}

/// `r^{2−2n} ∫_{B(x,r)} T ∧ ω^{n−1}`.
pub fn lelong_estimate(t: &HermitianField, x: usize, r: f64, cal: &Calibration) -> Result<f64> {
    let dom = t.domain();
    let nodes = lattice_ball(dom, x, r)?;
    let mut mask = vec![false; dom.len()];
    for j in nodes {
        mask[j] = true;
    }
    let region = BorelSet::from_mask(dom, mask)?;
    let n = dom.complex_dim() as i32;
    Ok(r.powi(2 - 2 * n) * trace_mass(t, &region, cal)?)
}

/// Outcome of the numerical calibration anchor.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AnchorReport {
    pub n: usize,
    pub spacing: f64,
    pub delta: f64,
    /// `∫ (ddᶜ reg-log|z|)ⁿ` over the domain; should be 1.
    pub log_mass: f64,
    /// `trace_mass(ω) / ma_mass(|z|²)` over the domain; should be 1.
    pub consistency_ratio: f64,
}

/// Evaluates the unit-Lelong anchor and the trace/MA consistency on `dom`
/// using the analytic constants.
pub fn anchor_check(dom: &Arc<GridDomain>, delta: f64) -> Result<AnchorReport> {
    let cal = Calibration::for_domain(dom);
    let u = GridField::from_fn(dom, |p| reg_log_max(p.iter().map(|x| x * x).sum(), delta));
    let full = BorelSet::full(dom);
    let log_mass = ma_mass(&u, &full, &cal)?;
    let q = GridField::from_fn(dom, |p| p.iter().map(|x| x * x).sum());
    let hq = complex_hessian(&q);
    let inner = BorelSet::from_mask(dom, hq.defined().to_vec())?;
    let tm = trace_mass(&hq, &inner, &cal)?;
    let mm = ma_mass(&q, &inner, &cal)?;
    Ok(AnchorReport {
        n: dom.complex_dim(),
        spacing: dom.spacing(),
        delta,
        log_mass,
        consistency_ratio: tm / mm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, ShapeSpec};

    fn disc(cells: f64) -> Arc<GridDomain> {
        build_domain(&ShapeSpec::centered_ball(1, 1.0), 2.0 / cells).unwrap()
    }

    fn r2(p: &crate::grid::Point) -> f64 {
        p.iter().map(|x| x * x).sum()
    }

    #[test]
    fn ramp_is_c2() {
        let d = 1e-6;
        for &x in &[-1.0, 1.0] {
            let l = smooth_ramp(x - d);
            let c = smooth_ramp(x);
            let r = smooth_ramp(x + d);
            assert!(((r - l) / (2.0 * d) - if x > 0.0 { 1.0 } else { 0.0 }).abs() < 1e-5);
            assert!(((r - 2.0 * c + l) / (d * d)).abs() < 1e-2);
        }
    }

    #[test]
    fn hessian_of_quadratic_is_identity() {
        for n in [1usize, 2] {
            let dom = build_domain(&ShapeSpec::centered_ball(n, 1.0), 2.0 / 16.0).unwrap();
            let q = GridField::from_fn(&dom, |p| r2(p));
            let h = complex_hessian(&q);
            for i in 0..dom.len() {
                if h.is_defined(i) {
                    let m = h.get(i);
                    assert!((m.a - 1.0).abs() < 1e-9);
                    if n == 2 {
                        assert!((m.b - 1.0).abs() < 1e-9 && m.cr.abs() < 1e-9 && m.ci.abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn pluriharmonic_hessian_vanishes() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 12.0).unwrap();
        // Re z₁, Re(z₁ z₂), Im(z₁²)
        let fs: Vec<GridField> = vec![
            GridField::from_fn(&dom, |p| p[0]),
            GridField::from_fn(&dom, |p| p[0] * p[2] - p[1] * p[3]),
            GridField::from_fn(&dom, |p| 2.0 * p[0] * p[1]),
        ];
        for f in fs {
            let h = complex_hessian(&f);
            for i in 0..dom.len() {
                if h.is_defined(i) {
                    assert!(h.get(i).frob2(2) < 1e-18);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_sign_convention() {
        // u = Re(z₁ z̄₂) = x1 x2 + y1 y2 has u_{12̄} = ∂₁∂̄₂ (z₁z̄₂ + z̄₁z₂)/2 = 1/2.
        // u = Im(z₁ z̄₂) = y1 x2 − x1 y2 has u_{12̄} = (z₁z̄₂ − z̄₁z₂)/(2i) → 1/(2i) = −i/2.
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 12.0).unwrap();
        let re = GridField::from_fn(&dom, |p| p[0] * p[2] + p[1] * p[3]);
        let im = GridField::from_fn(&dom, |p| p[1] * p[2] - p[0] * p[3]);
        let i0 = dom.nearest_node(&[0.1, 0.0, 0.0, 0.0]).unwrap();
        let a = hessian_at(&re, i0).unwrap();
        assert!((a.cr - 0.5).abs() < 1e-9 && a.ci.abs() < 1e-9);
        let b = hessian_at(&im, i0).unwrap();
        assert!(b.cr.abs() < 1e-9 && (b.ci + 0.5).abs() < 1e-9);
    }

    #[test]
    fn log_hessian_matches_symbolic_profile() {
        // ∂∂̄ log(|z|²+δ²) = δ²/(|z|²+δ²)² in ℂ¹.
        let dom = disc(256.0);
        let d = 0.2;
        let u = GridField::from_fn(&dom, |p| (r2(p) + d * d).ln());
        let h = complex_hessian(&u);
        let mut err: f64 = 0.0;
        for i in 0..dom.len() {
            if h.is_defined(i) {
                let s = dom.norm2(i) + d * d;
                err = err.max((h.get(i).a - d * d / (s * s)).abs());
            }
        }
        let hh = dom.spacing();
        // Peak value 1/δ² = 25, fourth derivatives ≈ 600/δ⁶ scale.
        assert!(err < 50.0 * hh * hh / d.powi(4), "err {err}");
    }

    #[test]
    fn gradient_form_of_re_z1() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 12.0).unwrap();
        let f = GridField::from_fn(&dom, |p| p[0]);
        let g = gradient_form(&f);
        let zero = HermitianField::zeros(&dom);
        for i in 0..dom.len() {
            if g.is_defined(i) {
                let m = g.get(i);
                assert!((m.a - 0.25).abs() < 1e-12 && m.b.abs() < 1e-12);
            }
        }
        let (ok, margin) = dominates(&zero, &g, 0.0).unwrap();
        assert!(!ok);
        let mn = margin.min_on(&vec![true; dom.len()]).unwrap();
        assert!((mn + 0.25).abs() < 1e-12);
        let (ok, _) = dominates(&g, &g, 0.0).unwrap();
        assert!(ok);
    }

    #[test]
    fn domination_identity_for_squares() {
        // ddᶜ(f²/2) = df∧dᶜf + f ddᶜf with f = |z|² ≥ 0 psh.
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 12.0).unwrap();
        let f = GridField::from_fn(&dom, |p| r2(p));
        let half_sq = f.map(|v| 0.5 * v * v);
        let (ok, _) = dominates(&complex_hessian(&half_sq), &gradient_form(&f), 1e-9).unwrap();
        assert!(ok);
    }

    #[test]
    fn mollifier_basics() {
        let dom = disc(64.0);
        let h = dom.spacing();
        assert!(matches!(Mollifier::new(&dom, 1.5 * h), Err(CapError::UnderResolved { .. })));
        let m = Mollifier::new(&dom, 3.0 * h).unwrap();
        assert!((m.weight_sum() - 1.0).abs() < 1e-14);
        let c = GridField::from_fn_inside(&dom, |_| 2.5);
        let mc = m.apply(&c);
        let mut count = 0;
        for i in 0..dom.len() {
            if mc.is_defined(i) {
                count += 1;
                assert!((mc.value(i) - 2.5).abs() < 1e-12);
            }
        }
        assert!(count > 0);
        let q = GridField::from_fn_inside(&dom, |p| r2(p));
        let mq = m.apply(&q);
        for i in 0..dom.len() {
            if mq.is_defined(i) {
                assert!(mq.value(i) >= q.value(i) - 1e-14);
            }
        }
    }

    #[test]
    fn ball_mean_checks() {
        let dom = disc(128.0);
        let h = dom.spacing();
        let x0 = dom.nearest_node(&[h / 2.0, h / 2.0]).unwrap();
        let c = GridField::from_fn_inside(&dom, |_| -1.5);
        assert!((ball_mean(&c, x0, 0.3).unwrap() + 1.5).abs() < 1e-14);
        let re = GridField::from_fn_inside(&dom, |p| p[0]);
        assert!(ball_mean(&re, x0, 0.3).unwrap().abs() < 2.0 * h);
        // Harmonic x² − y² + 3xy around an off-center node.
        let x1 = dom.nearest_node(&[0.2, -0.1]).unwrap();
        let p1 = dom.point(x1);
        let f = GridField::from_fn_inside(&dom, |p| p[0] * p[0] - p[1] * p[1] + 3.0 * p[0] * p[1]);
        let m = ball_mean(&f, x1, 0.25).unwrap();
        let exact = p1[0] * p1[0] - p1[1] * p1[1] + 3.0 * p1[0] * p1[1];
        assert!((m - exact).abs() < 4.0 * h * h, "{m} vs {exact}");
        assert!(matches!(ball_mean(&c, x1, 0.95), Err(CapError::BallEscapes { .. })));
    }

    #[test]
    fn trace_mass_requires_calibration() {
        let dom = disc(32.0);
        let w = HermitianField::kahler(&dom);
        let all = BorelSet::full(&dom);
        assert!(trace_mass(&w, &all, &Calibration::uncalibrated(1)).is_err());
        let cal = Calibration::analytic(1).unwrap();
        let z = HermitianField::zeros(&dom);
        assert_eq!(trace_mass(&z, &all, &cal).unwrap(), 0.0);
    }

    #[test]
    fn anchor_and_consistency_n1() {
        let dom = disc(256.0);
        let rep = anchor_check(&dom, 4.0 * dom.spacing()).unwrap();
        assert!((rep.log_mass - 1.0).abs() < 0.02, "{rep:?}");
        assert!((rep.consistency_ratio - 1.0).abs() < 1e-9, "{rep:?}");
    }

    #[test]
    fn consistency_n2() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 12.0).unwrap();
        let cal = Calibration::for_domain(&dom);
        let q = GridField::from_fn(&dom, |p| r2(p));
        let hq = complex_hessian(&q);
        let inner = BorelSet::from_mask(&dom, hq.defined().to_vec()).unwrap();
        let ratio = trace_mass(&hq, &inner, &cal).unwrap() / ma_mass(&q, &inner, &cal).unwrap();
        assert!((ratio - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lelong_of_regularized_log() {
        let dom = disc(256.0);
        let cal = Calibration::for_domain(&dom);
        let h = dom.spacing();
        let delta = 4.0 * h;
        let u = GridField::from_fn(&dom, |p| reg_log_max(r2(p), delta));
        let t = complex_hessian(&u);
        let x0 = dom.nearest_node(&[h / 2.0, h / 2.0]).unwrap();
        let mut prev = 0.0;
        for r in [0.1, 0.2, 0.4, 0.6] {
            let nu = lelong_estimate(&t, x0, r, &cal).unwrap();
            // Discrete log|z| is only approximately harmonic off the core.
            assert!(nu >= prev - 1e-3, "r = {r}: {nu} < {prev}");
            prev = nu;
            assert!((nu - 1.0).abs() < 0.03, "r = {r}: {nu}");
        }
        // Smooth currents have vanishing Lelong number.
        let w = HermitianField::kahler(&dom);
        let a = lelong_estimate(&w, x0, 0.4, &cal).unwrap();
        let b = lelong_estimate(&w, x0, 0.1, &cal).unwrap();
        assert!(b < a && b < 0.05);
    }
}
