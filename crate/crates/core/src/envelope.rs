//! Plurisubharmonic envelopes by complex-circle averaging.
//!
//! A complex direction is a primitive pair of Gaussian integers `(α, β)`
//! (up to units). Writing `v` for the real offset vector of `(α, β)` and
//! `iv` for that of `(iα, iβ)`, the four lattice points `z ± v, z ± iv`
//! lie on the complex circle of radius `|v| h` through `z` in that
//! direction and are equally spaced on it, so their mean is an exact
//! lattice quadrature of the circle average. The envelope iteration is
//!
//! ```text
//! u(z) ← min(obstacle(z), min over stencils of the 4-point mean)
//! ```
//!
//! swept in lexicographic order with over-relaxation, started from a
//! coarse-to-fine cascade.

use std::sync::Arc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::field::GridField;
use crate::grid::GridDomain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeOptions {
    /// Minimum number of complex directions for n = 2; the smallest full
    /// shell of Gaussian-integer directions with at least this many is used.
    pub directions: usize,
    /// Integer radius multipliers applied to every direction.
    pub radii: Vec<usize>,
    /// Samples per circle; the lattice quadrature uses 4.
    pub circle_samples: usize,
    pub max_iters: usize,
    /// Sup-norm fixed-point residual at which sweeping stops.
    pub tol: f64,
    /// Over-relaxation factor; `None` picks one from the grid size.
    pub relaxation: Option<f64>,
    /// Start from a solution on a sequence of coarser sub-lattices.
    pub cascade: bool,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions {
            directions: 16,
            radii: vec![1],
            circle_samples: 4,
            max_iters: 200_000,
            tol: 1e-9,
            relaxation: None,
            cascade: true,
        }
    }
}

impl EnvelopeOptions {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 2 && self.directions < 8 {
            return Err(CapError::Precondition(format!(
                "need at least 8 complex directions in ℂ² (got {})",
                self.directions
            )));
        }
        if self.radii.is_empty() || self.radii.contains(&0) {
            return Err(CapError::Precondition("radius multipliers must be ≥ 1".into()));
        }
        if self.circle_samples != 4 {
            return Err(CapError::Precondition(
                "only the 4-point lattice circle quadrature is available".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(CapError::Precondition("tol must be positive".into()));
        }
        if let Some(w) = self.relaxation {
            if !(w > 0.0 && w < 2.0) {
                return Err(CapError::Precondition("relaxation must lie in (0, 2)".into()));
            }
        }
        Ok(())
    }
}

/// Outcome of an envelope solve.
#[derive(Clone, Debug)]
pub struct EnvelopeReport {
    pub field: GridField,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// `(iteration, residual)` samples on the finest level.
    pub trace: Vec<(usize, f64)>,
}

impl EnvelopeReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (it, r) in &self.trace {
            s.push_str(&format!("{it},{r:e}\n"));
        }
        s
    }
}

type Gauss = (i64, i64);

fn gmul(a: Gauss, b: Gauss) -> Gauss {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

fn gnorm(a: Gauss) -> i64 {
    a.0 * a.0 + a.1 * a.1
}

/// Gaussian-integer gcd by the Euclidean algorithm.
fn ggcd(mut a: Gauss, mut b: Gauss) -> Gauss {
    while b != (0, 0) {
        // a mod b with rounded quotient a / b = a b̄ / |b|².
        let num = gmul(a, (b.0, -b.1));
        let d = gnorm(b) as f64;
        let q = ((num.0 as f64 / d).round() as i64, (num.1 as f64 / d).round() as i64);
        let qb = gmul(q, b);
        let r = (a.0 - qb.0, a.1 - qb.1);
        a = b;
        b = r;
    }
    a
}

/// Canonical representative of `(α, β)` under multiplication by units.
fn canonical(a: Gauss, b: Gauss) -> (Gauss, Gauss) {
    let units = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    units
        .iter()
        .map(|&u| (gmul(a, u), gmul(b, u)))
        .max()
        .expect("four units")
}

/// Primitive complex directions in ℂ² with `|α|² + |β|² ≤ shell`, sorted.
pub fn directions_c2(shell: i64) -> Vec<(Gauss, Gauss)> {
    let k = (shell as f64).sqrt().ceil() as i64;
    let mut out = Vec::new();
    for ar in -k..=k {
        for ai in -k..=k {
            for br in -k..=k {
                for bi in -k..=k {
                    let (a, b) = ((ar, ai), (br, bi));
                    let nrm = gnorm(a) + gnorm(b);
                    if nrm == 0 || nrm > shell {
                        continue;
                    }
                    if gnorm(ggcd(a, b)) != 1 {
                        continue;
                    }
                    let c = canonical(a, b);
                    if c == (a, b) {
                        out.push(c);
                    }
                }
            }
        }
    }
    out.sort_by_key(|&(a, b)| (gnorm(a) + gnorm(b), a, b));
    out
}

/// Number of directions in the smallest complete shell with at least `d`.
pub fn direction_set_c2(d: usize) -> Vec<(Gauss, Gauss)> {
    let mut shell = 1;
    loop {
        let dirs = directions_c2(shell);
        if dirs.len() >= d || shell > 50 {
            return dirs;
        }
        shell += 1;
    }
}

/// Integer offset quadruples `[v, −v, iv, −iv]` of every circle stencil.
pub fn stencil_offsets(n: usize, opts: &EnvelopeOptions) -> Vec<[[isize; 4]; 4]> {
    let mut base: Vec<([isize; 4], [isize; 4])> = Vec::new();
    if n == 1 {
        base.push(([1, 0, 0, 0], [0, 1, 0, 0]));
    } else {
        for (a, b) in direction_set_c2(opts.directions) {
            let v = [a.0 as isize, a.1 as isize, b.0 as isize, b.1 as isize];
            let iv = [-a.1 as isize, a.0 as isize, -b.1 as isize, b.0 as isize];
            base.push((v, iv));
        }
    }
    let mut out = Vec::new();
    for &m in &opts.radii {
        let m = m as isize;
        for (v, iv) in &base {
            let sv = v.map(|x| x * m);
            let siv = iv.map(|x| x * m);
            out.push([sv, sv.map(|x| -x), siv, siv.map(|x| -x)]);
        }
    }
    out
}

struct Level {
    dom: Arc<GridDomain>,
    /// Obstacle per node, `+∞` where unconstrained.
    obstacle: Vec<f64>,
    /// Value on non-inside nodes.
    boundary: Vec<f64>,
}

impl Level {
    /// Sub-lattice of even-indexed nodes (spacing doubled).
    fn coarsen(&self) -> Result<Option<Level>> {
        let fine = &self.dom;
        let dim = fine.real_dim();
        let ce = (fine.extent() + 1) / 2;
        if ce < 12 {
            return Ok(None);
        }
        let mut origin = *fine.origin();
        for o in origin.iter_mut().take(dim) {
            *o -= 0.5 * fine.spacing();
        }
        let clen = ce.pow(dim as u32);
        let mut map = Vec::with_capacity(clen);
        let mut m = [0usize; 4];
        for ci in 0..clen {
            let mut rem = ci;
            for a in (0..dim).rev() {
                m[a] = 2 * (rem % ce);
                rem /= ce;
            }
            map.push(fine.index_of(&m));
        }
        let inside: Vec<bool> = map.iter().map(|&f| fine.is_inside(f)).collect();
        if inside.iter().filter(|&&b| b).count() < 16 {
            return Ok(None);
        }
        let dom = Arc::new(GridDomain::from_mask(
            fine.complex_dim(),
            origin,
            2.0 * fine.spacing(),
            ce,
            inside,
        )?);
        Ok(Some(Level {
            dom,
            obstacle: map.iter().map(|&f| self.obstacle[f]).collect(),
            boundary: map.iter().map(|&f| self.boundary[f]).collect(),
        }))
    }
}

struct SolveStats {
    iterations: usize,
    residual: f64,
    converged: bool,
    trace: Vec<(usize, f64)>,
}

fn flat_stencils(dom: &GridDomain, st: &[[[isize; 4]; 4]]) -> (Vec<[isize; 4]>, usize) {
    let mut reach = 0usize;
    let flat = st
        .iter()
        .map(|q| {
            for o in q {
                for &x in o {
                    reach = reach.max(x.unsigned_abs());
                }
            }
            [
                dom.flat_offset(&q[0]),
                dom.flat_offset(&q[1]),
                dom.flat_offset(&q[2]),
                dom.flat_offset(&q[3]),
            ]
        })
        .collect();
    (flat, reach)
}

/// One lexicographic sweep; returns the sup of the pre-relaxation update.
#[inline(never)]
fn sweep(u: &mut [f64], nodes: &[usize], obstacle: &[f64], st: &[[isize; 4]], w: f64) -> f64 {
    let mut res: f64 = 0.0;
    for &i in nodes {
        let ii = i as isize;
        let mut t = obstacle[i];
        for q in st {
            let m = 0.25
                * (u[(ii + q[0]) as usize]
                    + u[(ii + q[1]) as usize]
                    + u[(ii + q[2]) as usize]
                    + u[(ii + q[3]) as usize]);
            if m < t {
                t = m;
            }
        }
        let old = u[i];
        let d = t - old;
        res = res.max(d.abs());
        let nv = old + w * d;
        u[i] = if nv < obstacle[i] { nv } else { obstacle[i] };
    }
    res
}

fn solve_level(
    lvl: &Level,
    u: &mut [f64],
    stencils: &[[[isize; 4]; 4]],
    opts: &EnvelopeOptions,
) -> SolveStats {
    let dom = &lvl.dom;
    let (st, reach) = flat_stencils(dom, stencils);
    let nodes: Vec<usize> = (0..dom.len())
        .filter(|&i| dom.is_inside(i) && dom.edge_distance(i) >= reach)
        .collect();
    let cells = (dom.extent() as f64 - 4.0).max(4.0);
    let w = opts
        .relaxation
        .unwrap_or_else(|| 2.0 / (1.0 + (std::f64::consts::PI * 1.5 / cells).min(0.9)));
    let mut trace = Vec::new();
    let mut it = 0;
    let mut res = f64::INFINITY;
    let mut converged = false;
    let mut w_cur = w;
    let mut stalls = 0usize;
    let mut best = f64::INFINITY;
    while it < opts.max_iters {
        res = sweep(u, &nodes, &lvl.obstacle, &st, w_cur);
        it += 1;
        if it.is_power_of_two() || it % 100 == 0 {
            trace.push((it, res));
        }
        if res < opts.tol {
            break;
        }
        // Back off the relaxation if the residual stops improving.
        if res < best * 0.999 {
            best = res;
            stalls = 0;
        } else {
            stalls += 1;
            if stalls > 200 && w_cur > 1.0 {
                w_cur = 1.0 + 0.5 * (w_cur - 1.0);
                stalls = 0;
                best = res;
            }
        }
    }
    // Finish with plain Gauss–Seidel sweeps so the returned iterate is a
    // fixed point of the unrelaxed update.
    if res < opts.tol || it >= opts.max_iters {
        for _ in 0..1000 {
            res = sweep(u, &nodes, &lvl.obstacle, &st, 1.0);
            it += 1;
            if res < opts.tol {
                converged = true;
                break;
            }
        }
    }
    trace.push((it, res));
    SolveStats { iterations: it, residual: res, converged, trace }
}

fn prolong(coarse: &Level, cu: &[f64], fine: &Level) -> Vec<f64> {
    let fd = &fine.dom;
    let cd = &coarse.dom;
    let dim = fd.real_dim();
    let ce = cd.extent();
    let mut out = vec![0.0; fd.len()];
    for (i, o) in out.iter_mut().enumerate() {
        if !fd.is_inside(i) {
            *o = fine.boundary[i];
            continue;
        }
        let m = fd.multi_index(i);
        // Multilinear interpolation over the coarse cell containing m.
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for corner in 0..(1usize << dim) {
            let mut cm = [0usize; 4];
            let mut ok = true;
            for a in 0..dim {
                let j = m[a] / 2 + ((corner >> a) & 1) * (m[a] % 2);
                if j >= ce {
                    ok = false;
                    break;
                }
                cm[a] = j;
            }
            if !ok {
                continue;
            }
            let ci = cd.index_of(&cm);
            acc += cu[ci];
            wsum += 1.0;
        }
        let v = if wsum > 0.0 { acc / wsum } else { 0.0 };
        *o = v.min(fine.obstacle[i]);
    }
    out
}

fn initial(lvl: &Level) -> Vec<f64> {
    (0..lvl.dom.len())
        .map(|i| {
            if lvl.dom.is_inside(i) {
                let o = lvl.obstacle[i];
                if o.is_finite() {
                    o
                } else {
                    // Unconstrained nodes start from the boundary maximum.
                    f64::NAN
                }
            } else {
                lvl.boundary[i]
            }
        })
        .collect()
}

fn fill_unconstrained(u: &mut [f64], lvl: &Level) {
    let top = lvl
        .boundary
        .iter()
        .zip(lvl.dom.inside())
        .filter(|(_, &ins)| !ins)
        .map(|(b, _)| *b)
        .fold(f64::NEG_INFINITY, f64::max);
    for v in u.iter_mut() {
        if v.is_nan() {
            *v = top;
        }
    }
}

fn solve_cascade(
    lvl: &Level,
    stencils: &[[[isize; 4]; 4]],
    opts: &EnvelopeOptions,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveStats)> {
    let mut u = match warm {
        Some(w) => {
            let mut u: Vec<f64> = (0..lvl.dom.len())
                .map(|i| {
                    if lvl.dom.is_inside(i) {
                        w[i].min(lvl.obstacle[i])
                    } else {
                        lvl.boundary[i]
                    }
                })
                .collect();
            fill_unconstrained(&mut u, lvl);
            u
        }
        None => {
            let coarse = if opts.cascade { lvl.coarsen()? } else { None };
            match coarse {
                Some(c) => {
                    let (cu, cs) = solve_cascade(&c, stencils, opts, None)?;
                    debug!(
                        "envelope level h = {:.4e}: {} sweeps, residual {:.2e}",
                        c.dom.spacing(),
                        cs.iterations,
                        cs.residual
                    );
                    prolong(&c, &cu, lvl)
                }
                None => {
                    let mut u = initial(lvl);
                    fill_unconstrained(&mut u, lvl);
                    u
                }
            }
        }
    };
    let stats = solve_level(lvl, &mut u, stencils, opts);
    Ok((u, stats))
}

fn check_inputs(obstacle: &GridField, dom: &Arc<GridDomain>, boundary: &GridField) -> Result<()> {
    if obstacle.domain().len() != dom.len() || boundary.domain().len() != dom.len() {
        return Err(CapError::DomainMismatch("envelope inputs on different lattices".into()));
    }
    for i in 0..dom.len() {
        if dom.is_inside(i) {
            let o = obstacle.value(i);
            if obstacle.is_defined(i) && o.is_nan() || o == f64::NEG_INFINITY {
                return Err(CapError::Precondition(format!(
                    "obstacle must be bounded below (node {i})"
                )));
            }
        } else if !boundary.is_defined(i) || !boundary.value(i).is_finite() {
            return Err(CapError::Precondition(format!(
                "boundary data missing at exterior node {i}"
            )));
        }
    }
    Ok(())
}

/// Envelope with full diagnostics. Undefined obstacle nodes are
/// unconstrained; `boundary` must be finite on every non-inside node.
pub fn psh_envelope_report(
    obstacle: &GridField,
    dom: &Arc<GridDomain>,
    boundary: &GridField,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeReport> {
    psh_envelope_warm(obstacle, dom, boundary, opts, None)
}

/// As [`psh_envelope_report`], optionally starting from a previous iterate.
pub fn psh_envelope_warm(
    obstacle: &GridField,
    dom: &Arc<GridDomain>,
    boundary: &GridField,
    opts: &EnvelopeOptions,
    warm: Option<&GridField>,
) -> Result<EnvelopeReport> {
    opts.validate(dom.complex_dim())?;
    check_inputs(obstacle, dom, boundary)?;
    let lvl = Level {
        dom: dom.clone(),
        obstacle: (0..dom.len())
            .map(|i| {
                if obstacle.is_defined(i) {
                    obstacle.value(i)
                } else {
                    f64::INFINITY
                }
            })
            .collect(),
        boundary: (0..dom.len())
            .map(|i| if dom.is_inside(i) { 0.0 } else { boundary.value(i) })
            .collect(),
    };
    let stencils = stencil_offsets(dom.complex_dim(), opts);
    let (u, stats) = solve_cascade(&lvl, &stencils, opts, warm.map(|w| w.values()))?;
    if !stats.converged {
        log::warn!(
            "envelope did not converge: residual {:.3e} after {} sweeps",
            stats.residual,
            stats.iterations
        );
    }
    let field = GridField::new(dom, u, vec![true; dom.len()])?;
    Ok(EnvelopeReport {
        field,
        converged: stats.converged,
        iterations: stats.iterations,
        residual: stats.residual,
        trace: stats.trace,
    })
}

/// Largest fixed point of the circle-averaging update below `obstacle`
/// with the given exterior values.
pub fn psh_envelope(
    obstacle: &GridField,
    dom: &Arc<GridDomain>,
    boundary: &GridField,
    opts: &EnvelopeOptions,
) -> Result<GridField> {
    Ok(psh_envelope_report(obstacle, dom, boundary, opts)?.field)
}

/// Largest violation of the sub-mean-value inequality over all stencils
/// at inside nodes: `max(u(z) − circle mean)`.
pub fn sub_mean_defect(u: &GridField, opts: &EnvelopeOptions) -> f64 {
    let dom = u.domain();
    let stencils = stencil_offsets(dom.complex_dim(), opts);
    let (st, reach) = flat_stencils(dom, &stencils);
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..dom.len() {
        if !dom.is_inside(i) || dom.edge_distance(i) < reach {
            continue;
        }
        let ii = i as isize;
        for q in &st {
            let m = 0.25 * q.iter().map(|&o| u.value((ii + o) as usize)).sum::<f64>();
            worst = worst.max(u.value(i) - m);
        }
    }
    worst
}

/// Relative extremal function `u_E` of `E` in Ω, clamped to `[−1, 0]`.
pub fn relative_extremal(
    set: &crate::grid::BorelSet,
    dom: &Arc<GridDomain>,
    opts: &EnvelopeOptions,
) -> Result<GridField> {
    Ok(relative_extremal_report(set, dom, opts)?.field)
}

pub fn relative_extremal_report(
    set: &crate::grid::BorelSet,
    dom: &Arc<GridDomain>,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeReport> {
    if set.domain().len() != dom.len() {
        return Err(CapError::DomainMismatch("set and domain lattices differ".into()));
    }
    if set.is_empty() {
        return Err(CapError::Precondition("relative extremal of an empty set".into()));
    }
    if !set.has_margin(2) {
        return Err(CapError::Precondition(
            "set must stay two cells away from the boundary ring".into(),
        ));
    }
    let obstacle = GridField::from_fn(dom, |_| 0.0);
    let mut obstacle = obstacle;
    for i in set.indices() {
        obstacle.set(i, -1.0);
    }
    let boundary = GridField::constant(dom, 0.0);
    let mut rep = psh_envelope_report(&obstacle, dom, &boundary, opts)?;
    rep.field = rep.field.map(|v| v.clamp(-1.0, 0.0));
    Ok(rep)
}

/// Siciak–Zaharjuta extremal function computed on a working ball `B_S`.
#[derive(Clone, Debug)]
pub struct SiciakResult {
    /// `U_K` on the working lattice of `B_S`.
    pub field: GridField,
    /// `M_K = max_{B_R} U_K`.
    pub m_k: f64,
    pub outer_radius_s: f64,
    /// Constant `c` in the boundary data `log|z| + c` on `∂B_S`.
    pub boundary_constant: f64,
    /// `O(1/log(S/R))` estimate of the error in `M_K`.
    pub error_budget: f64,
    pub converged: bool,
}

impl SiciakResult {
    /// `T_R(K) = e^{−M_K}`.
    pub fn at_capacity(&self) -> f64 {
        (-self.m_k).exp()
    }
}

/// Lattice covering `B_S` whose nodes coincide with those of `dom`.
pub fn aligned_ball_domain(dom: &GridDomain, s: f64) -> Result<Arc<GridDomain>> {
    let h = dom.spacing();
    let dim = dom.real_dim();
    let pad = crate::grid::PAD as f64 * h;
    let mut origin = [0.0; 4];
    let mut extent = 0usize;
    for a in 0..dim {
        let shift = ((dom.origin()[a] + s + pad) / h).ceil();
        origin[a] = dom.origin()[a] - shift * h;
        let need = ((s + pad - origin[a]) / h + 0.5).ceil() as usize;
        extent = extent.max(need);
    }
    let len = extent.pow(dim as u32);
    let probe = GridDomain::from_mask(dom.complex_dim(), origin, h, extent, vec![false; len])?;
    let inside: Vec<bool> = (0..len).map(|i| probe.norm2(i) <= s * s).collect();
    Ok(Arc::new(GridDomain::from_mask(dom.complex_dim(), origin, h, extent, inside)?))
}

/// Transfers a node mask between lattices with the same spacing.
fn transfer_mask(mask: &[bool], from: &GridDomain, to: &GridDomain) -> Result<Vec<bool>> {
    let mut out = vec![false; to.len()];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let j = to
                .nearest_node(&from.point(i))
                .ok_or_else(|| CapError::DomainMismatch("set falls outside working lattice".into()))?;
            out[j] = true;
        }
    }
    Ok(out)
}

/// Least-squares fit `u ≈ a log|z| + b` over inside nodes with
/// `S/2 ≤ |z| ≤ S − 3h`; returns `(a, b, rms)`.
fn fit_log_growth(u: &GridField, s: f64) -> (f64, f64, f64) {
    let dom = u.domain();
    let h = dom.spacing();
    let (lo, hi) = (0.5 * s, s - 3.0 * h);
    let mut pts = Vec::new();
    for i in 0..dom.len() {
        if dom.is_inside(i) {
            let r = dom.norm2(i).sqrt();
            if r >= lo && r <= hi {
                pts.push((r.ln(), u.value(i)));
            }
        }
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let a = sxy / sxx;
    let b = my - a * mx;
    let rms = (pts.iter().map(|p| (p.1 - a * p.0 - b).powi(2)).sum::<f64>() / m).sqrt();
    (a, b, rms)
}

/// `U_K` with the outer boundary constant refined once from a
/// log-growth fit.
pub fn siciak_extremal(
    k: &crate::grid::BorelSet,
    r: f64,
    outer_factor: f64,
    opts: &EnvelopeOptions,
) -> Result<SiciakResult> {
    siciak_extremal_with(k, r, outer_factor, None, true, opts, None)
}

/// General form: `r_guess` overrides the circumscribed radius of `K` as
/// initial boundary radius, `refine` toggles the one-shot refinement, and
/// `warm` seeds the iteration with a field on the same working lattice.
pub fn siciak_extremal_with(
    k: &crate::grid::BorelSet,
    r: f64,
    outer_factor: f64,
    r_guess: Option<f64>,
    refine: bool,
    opts: &EnvelopeOptions,
    warm: Option<&GridField>,
) -> Result<SiciakResult> {
    if !(outer_factor >= std::f64::consts::E - 1e-9) {
        return Err(CapError::Precondition(format!(
            "outer_factor {outer_factor} must be at least e"
        )));
    }
    if k.is_empty() {
        return Err(CapError::Precondition("extremal function of an empty set".into()));
    }
    let kdom = k.domain();
    let h = kdom.spacing();
    let rmax = k
        .indices()
        .iter()
        .map(|&i| kdom.norm2(i).sqrt())
        .fold(0.0, f64::max);
    if rmax > r - 2.0 * h {
        return Err(CapError::Precondition(format!(
            "K reaches radius {rmax:.4}, not relatively compact in B_{r}"
        )));
    }
    let s = outer_factor * r;
    let wdom = aligned_ball_domain(kdom, s)?;
    let kmask = transfer_mask(k.mask(), kdom, &wdom)?;
    let mut obstacle = GridField::new(&wdom, vec![f64::NAN; wdom.len()], vec![false; wdom.len()])?;
    for (i, &m) in kmask.iter().enumerate() {
        if m {
            obstacle.set(i, 0.0);
        }
    }
    let mut rg = r_guess.unwrap_or(rmax.max(h));
    let boundary = |rg: f64| GridField::from_fn(&wdom, move |p| {
        0.5 * p.iter().map(|x| x * x).sum::<f64>().max(1e-300).ln() - rg.ln()
    });
    let mut rep = psh_envelope_warm(&obstacle, &wdom, &boundary(rg), opts, warm)?;
    let (mut a, mut b, mut rms) = fit_log_growth(&rep.field, s);
    if refine {
        let new_rg = (-b / a).exp();
        let shift = rg.ln() - new_rg.ln();
        let seed = rep.field.map(|v| v + shift);
        rg = new_rg;
        rep = psh_envelope_warm(&obstacle, &wdom, &boundary(rg), opts, Some(&seed))?;
        let fit = fit_log_growth(&rep.field, s);
        a = fit.0;
        b = fit.1;
        rms = fit.2;
    }
    let inner: Vec<bool> = (0..wdom.len())
        .map(|i| wdom.is_inside(i) && wdom.norm2(i) <= r * r)
        .collect();
    let m_k = rep.field.max_on(&inner).unwrap_or(0.0).max(0.0);
    // Mismatch between the fitted and imposed boundary constants.
    let dc = (b / a + rg.ln()).abs();
    let error_budget = (dc + rms + (a - 1.0).abs()) * m_k.max(1.0) / (s / r).ln();
    Ok(SiciakResult {
        field: rep.field,
        m_k,
        outer_radius_s: s,
        boundary_constant: -rg.ln(),
        error_budget,
        converged: rep.converged,
    })
}

/// Output of [`subextension_report`].
#[derive(Clone, Debug)]
pub struct Subextension {
    /// `u` on the lattice of `f`.
    pub u: GridField,
    pub eps: f64,
    pub t_grid: Vec<f64>,
    /// `M(t) = max_{B(0,1)} U_t`; NaN where `G_t` is empty.
    pub m_t: Vec<f64>,
    /// `∫_{T}^{∞} t^{−1−ε} dt / ε` beyond the last grid point, over which
    /// the integrand is replaced by its upper bound 0 on `B(0,1)`.
    pub tail_weight: f64,
}

/// Points per decade of the geometric `t` grid.
pub const T_PER_DECADE: f64 = 40.0;

/// `u = (1/ε) ∫₁^∞ t^{−1−ε} [U_t − M(t)] dt` with `U_t` the extremal
/// function of `G_t = {z ∈ B(0,s) : f(z) < −t}`.
pub fn subextension(f: &GridField, eps: f64, s: f64, opts: &EnvelopeOptions) -> Result<GridField> {
    Ok(subextension_report(f, eps, s, std::f64::consts::E, opts)?.u)
}

pub fn subextension_report(
    f: &GridField,
    eps: f64,
    s: f64,
    outer_factor: f64,
    opts: &EnvelopeOptions,
) -> Result<Subextension> {
    let dom = f.domain();
    let n = dom.complex_dim() as f64;
    if !(eps > 0.0 && eps < 2.0 / n) {
        return Err(CapError::Precondition(format!("eps must lie in (0, {})", 2.0 / n)));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(CapError::Precondition("s must lie in (0, 1)".into()));
    }
    let mut fmax: f64 = 1.0;
    for i in 0..dom.len() {
        if dom.is_inside(i) && f.is_defined(i) {
            if f.value(i) > -1.0 + 1e-12 {
                return Err(CapError::Precondition(format!(
                    "f must be ≤ −1 (node {i} has {})",
                    f.value(i)
                )));
            }
            fmax = fmax.max(-f.value(i));
        }
    }
    let steps = (fmax.log10() * T_PER_DECADE).ceil().max(1.0) as usize;
    let t_grid: Vec<f64> = (0..=steps)
        .map(|k| fmax.powf(k as f64 / steps as f64))
        .collect();
    // Trapezoid weights for ∫ g(t) dt on the geometric grid.
    let mut wts = vec![0.0; t_grid.len()];
    for k in 0..steps {
        let dt = t_grid[k + 1] - t_grid[k];
        wts[k] += 0.5 * dt;
        wts[k + 1] += 0.5 * dt;
    }
    let s2 = s * s;
    let mut acc = vec![0.0; dom.len()];
    let mut m_t = vec![f64::NAN; t_grid.len()];
    let mut warm: Option<GridField> = None;
    let mut rg: Option<f64> = None;
    for k in (0..t_grid.len()).rev() {
        let t = t_grid[k];
        let g: Vec<bool> = (0..dom.len())
            .map(|i| dom.is_inside(i) && f.is_defined(i) && dom.norm2(i) < s2 && f.value(i) < -t)
            .collect();
        if !g.iter().any(|&b| b) {
            continue;
        }
        let set = crate::grid::BorelSet::from_mask(dom, g)?;
        let res = siciak_extremal_with(&set, 1.0, outer_factor, rg, true, opts, warm.as_ref())?;
        let wdom = res.field.domain().clone();
        m_t[k] = res.m_k;
        let c = wts[k] * t.powf(-1.0 - eps) / eps;
        for (i, a) in acc.iter_mut().enumerate() {
            if dom.is_inside(i) {
                let j = wdom.nearest_node(&dom.point(i)).expect("aligned lattices");
                *a += c * (res.field.value(j) - res.m_k);
            }
        }
        rg = Some((-res.boundary_constant).exp());
        warm = Some(res.field);
    }
    let u = GridField::new(
        dom,
        acc.iter()
            .enumerate()
            .map(|(i, &v)| if dom.is_inside(i) { v } else { f64::NAN })
            .collect(),
        dom.inside().to_vec(),
    )?;
    Ok(Subextension {
        u,
        eps,
        tail_weight: fmax.powf(-eps) / (eps * eps),
        t_grid,
        m_t,
    })
}

/// Check of `u ≤ −|f|^e + C` on `B(0, radius)`.
///
/// On a finite lattice some `C` always exists, so the check asks that the
/// constant is not set by the singular part: with `T` the geometric middle of
/// the range of `|f|` on the ball, the maximum of `u + |f|^e` over
/// `{|f| > T}` must not exceed its maximum over `{|f| ≤ T}`.
#[derive(Clone, Debug, Serialize)]
pub struct SubextensionCheck {
    pub exponent: f64,
    /// `C = max_{B(0,radius)} (u + |f|^e)`.
    pub c: f64,
    /// Maximum of `u + |f|^e` over `{|f| ≤ T}` minus that over `{|f| > T}`.
    pub margin: f64,
    pub holds: bool,
}

pub fn check_subextension(u: &GridField, f: &GridField, radius: f64, exponent: f64) -> SubextensionCheck {
    let dom = u.domain();
    let r2 = radius * radius;
    let ball: Vec<usize> = (0..dom.len())
        .filter(|&i| dom.is_inside(i) && u.is_defined(i) && f.is_defined(i) && dom.norm2(i) <= r2)
        .collect();
    let (lo, hi) = ball
        .iter()
        .map(|&i| f.value(i).abs())
        .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let t = (lo * hi).sqrt();
    let (mut reg, mut sing) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in &ball {
        let a = f.value(i).abs();
        let w = u.value(i) + a.powf(exponent);
        if a <= t {
            reg = reg.max(w);
        } else {
            sing = sing.max(w);
        }
    }
    let margin = reg - sing;
    SubextensionCheck { exponent, c: reg.max(sing), margin, holds: margin >= -1e-9 * reg.abs().max(1.0) }
}

/// Largest exponent on a grid of step `0.01` in `[0, 4]` for which
/// [`check_subextension`] holds; `0` when none does.
pub fn subextension_exponent(u: &GridField, f: &GridField, radius: f64) -> f64 {
    let mut best = 0.0;
    for k in 0..=400 {
        let e = k as f64 * 0.01;
        if check_subextension(u, f, radius, e).holds {
            best = e;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, rasterize_set, BorelSet, ShapeSpec};

    fn disc(cells: f64) -> Arc<GridDomain> {
        build_domain(&ShapeSpec::centered_ball(1, 1.0), 2.0 / cells).unwrap()
    }

    #[test]
    fn direction_shells() {
        assert_eq!(directions_c2(2).len(), 6);
        assert_eq!(directions_c2(3).len(), 14);
        assert_eq!(directions_c2(5).len(), 22);
        assert_eq!(direction_set_c2(16).len(), 22);
        for (a, b) in directions_c2(5) {
            assert_eq!(gnorm(ggcd(a, b)), 1);
        }
        // Stencil points are equally spaced on the complex circle: v ⊥ iv, |v| = |iv|.
        let opts = EnvelopeOptions::default();
        for q in stencil_offsets(2, &opts) {
            let dot: isize = (0..4).map(|k| q[0][k] * q[2][k]).sum();
            let n0: isize = q[0].iter().map(|x| x * x).sum();
            let n2: isize = q[2].iter().map(|x| x * x).sum();
            assert_eq!(dot, 0);
            assert_eq!(n0, n2);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let dom = disc(32.0);
        let z = GridField::constant(&dom, 0.0);
        let u = psh_envelope(&z, &dom, &z, &EnvelopeOptions::default()).unwrap();
        for i in 0..dom.len() {
            assert!(u.value(i).abs() < 1e-12);
        }
    }

    #[test]
    fn disc_relative_extremal_oracle() {
        let dom = disc(128.0);
        let e = rasterize_set(&ShapeSpec::centered_ball(1, 0.25), &dom);
        let opts = EnvelopeOptions::default();
        let rep = relative_extremal_report(&e, &dom, &opts).unwrap();
        assert!(rep.converged);
        let u = &rep.field;
        let h = dom.spacing();
        let mut err: f64 = 0.0;
        for i in 0..dom.len() {
            if dom.is_inside(i) {
                let r = dom.norm2(i).sqrt();
                let exact = (r.ln() / 4f64.ln()).max(-1.0);
                err = err.max((u.value(i) - exact).abs());
                assert!(u.value(i) >= -1.0 && u.value(i) <= 0.0);
            }
            if e.contains(i) {
                assert_eq!(u.value(i), -1.0);
            }
        }
        assert!(err <= 3.0 * h, "err {err} vs 3h = {}", 3.0 * h);
        assert!(sub_mean_defect(u, &opts) <= 1e-8);
    }

    #[test]
    fn monotone_in_obstacle_and_set() {
        let dom = disc(48.0);
        let opts = EnvelopeOptions::default();
        let small = rasterize_set(&ShapeSpec::centered_ball(1, 0.2), &dom);
        let big = rasterize_set(&ShapeSpec::ball(&[0.05, 0.0], 0.35), &dom);
        let big = big.union(&small);
        let us = relative_extremal(&small, &dom, &opts).unwrap();
        let ub = relative_extremal(&big, &dom, &opts).unwrap();
        for i in 0..dom.len() {
            assert!(ub.value(i) <= us.value(i) + 1e-7);
        }
        let o1 = GridField::from_fn(&dom, |p| -1.0 + p[0] * p[0]);
        let o2 = o1.map(|v| v + 0.3 * (1.0 + v.sin()));
        let b = GridField::constant(&dom, 0.0);
        let u1 = psh_envelope(&o1, &dom, &b, &opts).unwrap();
        let u2 = psh_envelope(&o2, &dom, &b, &opts).unwrap();
        for i in 0..dom.len() {
            assert!(u1.value(i) <= u2.value(i) + 1e-7);
            assert!(u1.value(i) <= o1.value(i) + 1e-12 || !dom.is_inside(i));
        }
    }

    #[test]
    fn rejects_bad_sets() {
        let dom = disc(32.0);
        let opts = EnvelopeOptions::default();
        assert!(relative_extremal(&BorelSet::empty(&dom), &dom, &opts).is_err());
        assert!(relative_extremal(&BorelSet::full(&dom), &dom, &opts).is_err());
        let mut o = opts.clone();
        o.directions = 6;
        let dom2 = build_domain(&ShapeSpec::centered_ball(2, 1.0), 0.25).unwrap();
        let e = rasterize_set(&ShapeSpec::centered_ball(2, 0.3), &dom2);
        assert!(relative_extremal(&e, &dom2, &o).is_err());
    }

    #[test]
    fn c2_ball_relative_extremal_coarse() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 16.0).unwrap();
        let e = rasterize_set(&ShapeSpec::centered_ball(2, 0.25), &dom);
        let u = relative_extremal(&e, &dom, &EnvelopeOptions::default()).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..dom.len() {
            if dom.is_inside(i) {
                let exact = (dom.norm2(i).sqrt().ln() / 4f64.ln()).max(-1.0);
                err = err.max((u.value(i) - exact).abs());
            }
        }
        assert!(err < 0.25, "err {err}");
    }

    #[test]
    fn siciak_disc() {
        let r_big = 0.5;
        let dom = build_domain(&ShapeSpec::centered_ball(1, r_big), 0.01).unwrap();
        let opts = EnvelopeOptions::default();
        for (r, lam) in [(0.2, 1.0), (0.2, 0.5)] {
            let k = rasterize_set(&ShapeSpec::centered_ball(1, lam * r), &dom);
            let res = siciak_extremal(&k, r_big, std::f64::consts::E, &opts).unwrap();
            let exact = (r_big / (lam * r)).ln();
            assert!((res.m_k - exact).abs() < 0.1, "M_K {} vs {exact}", res.m_k);
            assert!(res.error_budget.is_finite() && res.error_budget >= 0.0);
        }
        let whole = BorelSet::full(&dom);
        assert!(siciak_extremal(&whole, r_big, 3.0, &opts).is_err());
        let k = rasterize_set(&ShapeSpec::centered_ball(1, 0.2), &dom);
        assert!(siciak_extremal(&k, r_big, 2.0, &opts).is_err());
    }

    #[test]
    fn subextension_of_constant() {
        let dom = disc(32.0);
        let f = GridField::from_fn_inside(&dom, |_| -1.0);
        let u = subextension(&f, 0.5, 0.5, &EnvelopeOptions::default()).unwrap();
        for i in 0..dom.len() {
            if dom.is_inside(i) {
                assert!(u.value(i).abs() < 1e-12);
            }
        }
        let g = GridField::from_fn_inside(&dom, |_| -0.5);
        assert!(subextension(&g, 0.5, 0.5, &EnvelopeOptions::default()).is_err());
    }
}
