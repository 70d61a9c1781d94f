//! Randomized checks of the weighted L² gradient inequalities for
//! Monge–Ampère measures and of the Cegrell mixed-mass inequality.
//!
//! All integrals are node sums over the inside of the domain with central
//! second differences for `ddᶜ` and central first differences for the
//! gradient forms of smooth test functions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{gradient_at, hessian_at, Calibration};
use crate::error::{CapError, Result};
use crate::field::{GridField, Herm};
use crate::grid::GridDomain;
use crate::reduce::pairwise_sum;

#[derive(Clone, Debug, Serialize)]
pub struct InequalityRow {
    pub lemma: String,
    pub trial: usize,
    pub lhs: f64,
    /// Right-hand side with the stated constants.
    pub rhs: f64,
    /// `lhs / rhs`; at most 1 when the inequality holds.
    pub ratio: f64,
    /// Smallest constant that would make the leading term alone suffice,
    /// where the inequality has a single term.
    pub effective_constant: Option<f64>,
    pub a0: Option<f64>,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<InequalityRow>,
    pub violations: usize,
}

impl InequalityReport {
    pub fn max_ratio(&self, lemma: &str) -> f64 {
        self.rows.iter().filter(|r| r.lemma == lemma).map(|r| r.ratio).fold(0.0, f64::max)
    }
}

const REL_TOL: f64 = 1e-9;

/// `∫ X ∧ γ` density: `γ = 1` for n = 1 and `γ = ddᶜφ` for n = 2.
fn wedge(x: Herm, gamma: Option<Herm>, cal: &Calibration) -> f64 {
    match gamma {
        None => cal.trace_constant * x.trace(1),
        Some(g) => 0.5 * cal.ma_constant * (x.add(g).det(2) - x.det(2) - g.det(2)),
    }
}

fn bump(r2: f64, rho: f64) -> f64 {
    let t = r2 / (rho * rho);
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t)).exp()
    }
}

fn dist2(p: &[f64], c: &[f64]) -> f64 {
    p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    loop {
        let c: Vec<f64> = (0..dim).map(|_| rng.gen_range(-r..r)).collect();
        if c.iter().map(|x| x * x).sum::<f64>() <= r * r {
            return c;
        }
    }
}

struct Trial {
    phi: GridField,
    chi: GridField,
    g: GridField,
    f: GridField,
}

/// Domain is assumed to be `B(0, 1)`; all cut-offs live in `B(0, 0.9)`.
fn sample(dom: &Arc<GridDomain>, rng: &mut ChaCha8Rng) -> Trial {
    let dim = dom.real_dim();
    let alpha = rng.gen_range(0.2..0.8);
    let beta = rng.gen_range(0.0..1.0 - alpha);
    let c1 = random_point(rng, 2, 0.5);
    let s1 = (1.0 + c1[0].hypot(c1[1])).powi(2);
    let phi = GridField::from_fn(dom, move |p| {
        let r2: f64 = p[..dim].iter().map(|x| x * x).sum();
        alpha * (r2 - 1.0) + beta * (dist2(&p[..2], &c1) / s1 - 1.0)
    });

    let cc = random_point(rng, dim, 0.3);
    let rc = rng.gen_range(0.35..0.6);
    let chi = GridField::from_fn(dom, move |p| bump(dist2(&p[..dim], &cc), rc));

    let gterms: Vec<(Vec<f64>, f64, f64, Vec<f64>, f64)> = (0..2)
        .map(|_| {
            let c = random_point(rng, dim, 0.3);
            let rho = rng.gen_range(0.3..0.6);
            let amp = rng.gen_range(-2.0..2.0);
            let k: Vec<f64> = (0..dim).map(|_| rng.gen_range(-6.0..6.0)).collect();
            (c, rho, amp, k, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let g = GridField::from_fn(dom, move |p| {
        gterms
            .iter()
            .map(|(c, rho, amp, k, th)| {
                let w: f64 = k.iter().zip(&p[..dim]).map(|(a, b)| a * b).sum();
                amp * bump(dist2(&p[..dim], c), *rho) * (0.5 + (w + th).sin())
            })
            .sum()
    });

    let a0 = rng.gen_range(-1.0..1.0);
    let lin: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kf: Vec<f64> = (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let (bf, tf) = (rng.gen_range(0.0..1.5), rng.gen_range(0.0..std::f64::consts::TAU));
    let f = GridField::from_fn(dom, move |p| {
        let l: f64 = lin.iter().zip(&p[..dim]).map(|(a, b)| a * b).sum();
        let w: f64 = kf.iter().zip(&p[..dim]).map(|(a, b)| a * b).sum();
        a0 + l + bf * (w + tf).sin()
    });
    Trial { phi, chi, g, f }
}

fn row(lemma: &str, trial: usize, lhs: f64, rhs: f64, eff: Option<f64>, a0: Option<f64>) -> InequalityRow {
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    InequalityRow {
        lemma: lemma.into(),
        trial,
        lhs,
        rhs,
        ratio,
        effective_constant: eff,
        a0,
        holds: lhs <= rhs * (1.0 + REL_TOL) + 1e-14,
    }
}

/// `trials` random instances of each gradient inequality on `B(0, 1)`.
pub fn inequality_battery(
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    seed: u64,
    trials: usize,
) -> Result<InequalityReport> {
    let n = dom.complex_dim();
    if cal.n != n {
        return Err(CapError::Precondition("calibration does not match the domain".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = dom.inside_indices();
    let mut rows = Vec::new();
    let id = Herm::identity();
    for t in 0..trials {
        let tr = sample(dom, &mut rng);
        // A₀ from the Hessian of χ over every node where it is defined.
        let a0 = (0..dom.len())
            .filter_map(|i| hessian_at(&tr.chi, i))
            .map(|h| {
                let e = h.eigenvalues(n);
                e[..n].iter().fold(0.0f64, |m, x| m.max(x.abs()))
            })
            .fold(0.0, f64::max);
        let mut acc = vec![Vec::with_capacity(inside.len()); 10];
        for &i in &inside {
            let (Some(hp), Some(gg), Some(gf), Some(gc)) = (
                hessian_at(&tr.phi, i),
                gradient_at(&tr.g, i),
                gradient_at(&tr.f, i),
                gradient_at(&tr.chi, i),
            ) else {
                return Err(CapError::Precondition("stencil leaves the lattice".into()));
            };
            let gamma = (n == 2).then_some(hp);
            let ma = cal.ma_constant * hp.det(n);
            let (g, f, chi) = (tr.g.value(i), tr.f.value(i), tr.chi.value(i));
            acc[0].push(g * g * ma);
            acc[1].push(wedge(gg, gamma, cal));
            acc[2].push(f * f * wedge(gc, gamma, cal));
            acc[3].push(chi * chi * wedge(gf, gamma, cal));
            acc[4].push(chi * f * f * wedge(id, gamma, cal));
            acc[5].push((chi * f).powi(2) * ma);
            acc[6].push(chi.powi(2 * n as i32) * f * f * ma);
            acc[7].push(chi.powi(2) * wedge(gf, Some(hp), cal));
            acc[8].push(chi * f * f * cal.ma_constant * id.det(n));
        }
        let cell = dom.cell_volume();
        let s: Vec<f64> = acc.iter().map(|v| pairwise_sum(v) * cell).collect();
        rows.push(row("basic_grad", t, s[0], 10.0 * s[1], Some(s[0] / s[1]), None));
        rows.push(row("extra_grad", t, s[2], 4.0 * s[3] + 2.0 * a0 * s[4], None, Some(a0)));
        rows.push(row("l2_cap_grad", t, s[5], 100.0 * s[3] + 40.0 * a0 * s[4], None, Some(a0)));
        // Iterated form: the gradient sum runs over 1 ≤ k ≤ n − 1 with
        // A_k = [40(1 + A₀)]^{n−1−k}, so it is empty for n = 1.
        let grad = if n == 2 { 100.0 * s[7] } else { 0.0 };
        rows.push(row("cor_l2_cap_grad", t, s[6], grad + (40.0 * a0).powi(n as i32) * s[8], None, Some(a0)));
    }
    let violations = rows.iter().filter(|r| !r.holds).count();
    Ok(InequalityReport { seed, trials, rows, violations })
}

/// `(|z|^{2p} − 1)(1 + Re⟨a, z⟩ + b(|z₁|² − |z₂|²))`: smooth and vanishing
/// on the unit sphere; psh on the unit ball when `|a|` and `|b|` are small.
fn zero_boundary_psh(dom: &Arc<GridDomain>, p: i32, a: [f64; 4], b: f64) -> GridField {
    GridField::from_fn(dom, move |x| {
        let (s1, s2) = (x[0] * x[0] + x[1] * x[1], x[2] * x[2] + x[3] * x[3]);
        let q = 1.0 + a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + a[3] * x[3] + b * (s1 - s2);
        ((s1 + s2).powi(p) - 1.0) * q
    })
}

/// `∫ ddᶜu ∧ ddᶜρ ≤ [∫(ddᶜρ)²]^{1/2} [∫(ddᶜu)²]^{1/2}` on random smooth
/// psh pairs vanishing on `∂B(0, 1) ⊂ ℂ²`.
pub fn cegrell_battery(
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    seed: u64,
    trials: usize,
) -> Result<InequalityReport> {
    if dom.complex_dim() != 2 || cal.n != 2 {
        return Err(CapError::Dimension(dom.complex_dim()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = dom.inside_indices();
    let mut rows = Vec::new();
    let mut t = 0;
    while t < trials {
        let mut draw = || {
            let p = rng.gen_range(1..=3);
            let s = rng.gen_range(0.1..0.45);
            let mut a = [0.0; 4];
            for x in a.iter_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (p, a.map(|x| s * x / norm), rng.gen_range(-0.3..0.3), rng.gen_range(0.5..2.0))
        };
        let (pu, au, bu, cu) = draw();
        let (pr, ar, br, cr) = draw();
        let u = zero_boundary_psh(dom, pu, au, bu).map(|x| cu * x);
        let rho = zero_boundary_psh(dom, pr, ar, br).map(|x| cr * x);
        let mut hs = Vec::with_capacity(inside.len());
        for &i in &inside {
            match (hessian_at(&u, i), hessian_at(&rho, i)) {
                (Some(a), Some(b)) => hs.push((a, b)),
                _ => return Err(CapError::Precondition("stencil leaves the lattice".into())),
            }
        }
        if hs.iter().any(|(a, b)| a.min_eig(2) < 0.0 || b.min_eig(2) < 0.0) {
            continue;
        }
        let cell = dom.cell_volume();
        let mixed: Vec<f64> = hs.iter().map(|(a, b)| wedge(*a, Some(*b), cal)).collect();
        let mu: Vec<f64> = hs.iter().map(|(a, _)| cal.ma_constant * a.det(2)).collect();
        let mr: Vec<f64> = hs.iter().map(|(_, b)| cal.ma_constant * b.det(2)).collect();
        let lhs = pairwise_sum(&mixed) * cell;
        let rhs = (pairwise_sum(&mr) * cell).sqrt() * (pairwise_sum(&mu) * cell).sqrt();
        rows.push(row("cegrell", t, lhs, rhs, None, None));
        t += 1;
    }
    let violations = rows.iter().filter(|r| !r.holds).count();
    Ok(InequalityReport { seed, trials, rows, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, ShapeSpec};

    #[test]
    fn wedge_matches_trace_pairing() {
        let cal = Calibration::analytic(2).unwrap();
        let x = Herm { a: 0.7, b: 0.2, cr: 0.1, ci: -0.3 };
        let w = wedge(x, Some(Herm::identity()), &cal);
        assert!((w - cal.trace_constant * x.trace(2)).abs() < 1e-14);
        let w2 = wedge(x, Some(x), &cal);
        assert!((w2 - cal.ma_constant * x.det(2)).abs() < 1e-14);
    }

    #[test]
    fn battery_n1_has_no_violations() {
        let dom = build_domain(&ShapeSpec::centered_ball(1, 1.0), 1.0 / 64.0).unwrap();
        let cal = Calibration::analytic(1).unwrap();
        let rep = inequality_battery(&dom, &cal, 5, 6).unwrap();
        assert_eq!(rep.violations, 0, "{:#?}", rep.rows.iter().filter(|r| !r.holds).collect::<Vec<_>>());
        assert!(rep.max_ratio("basic_grad") > 0.0);
    }

    #[test]
    fn cegrell_on_small_grid() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 1.0 / 8.0).unwrap();
        let cal = Calibration::analytic(2).unwrap();
        let rep = cegrell_battery(&dom, &cal, 1, 4).unwrap();
        assert_eq!(rep.violations, 0, "{:#?}", rep.rows);
    }
}
