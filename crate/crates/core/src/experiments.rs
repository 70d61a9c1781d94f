//! Named experiments. Each turns an [`ExperimentConfig`] into a report of
//! checked claims, fitted constants, tables and figures.
//!
//! Rows are assembled in a fixed order whatever the worker count, and every
//! reduction is a pairwise sum over a collected vector, so reruns with the
//! same configuration serialize to identical bytes.

use std::sync::Arc;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use crate::calculus::Calibration;
use crate::capacity::{
    at_capacity, bt_capacity, choquet_battery, functional_capacity, functional_capacity_with, CapacityResult,
    FunctionalCapOptions, GridMeta,
};
use crate::config::{DomainConfig, ExperimentConfig, Params, Spacing, EXPERIMENTS};
use crate::envelope::{check_subextension, subextension_exponent, subextension_report};
use crate::error::{CapError, Result};
use crate::field::GridField;
use crate::grid::{build_domain_dim, rasterize_set, volume, BorelSet, GridDomain, ShapeSpec};
use crate::inequalities::{cegrell_battery, inequality_battery};
use crate::report::{ExperimentReport, ReportRow, Table};
use crate::svg::{field_heatmap, Plot, Series};
use crate::wstar::{
    ball_mean_profile, catalog, cauchy_in_capacity, certify_membership, example_field, exp_integral,
    quadratic_certificate, skoda_potential, skoda_report, sublevel_capacity_check, ExampleSpec,
    WStarCertificate,
};

/// One-line descriptions, in registry order.
pub fn describe(name: &str) -> &'static str {
    match name {
        "capacity-comparison" => "functional vs Bedford-Taylor capacity on a ball family, fitted constants and slope",
        "alexander-taylor" => "T_R of closed balls against r/R and the two-sided bracket with the functional capacity",
        "volume-capacity" => "volume decay V(E) <= A1 exp(-alpha/c(E)), fitted on one half of a set family",
        "moser-trudinger" => "sublevel capacity bounds, sublevel-volume decay and exponential integrability",
        "membership-threshold" => "certified norms of power_log(a) under refinement of the regularization",
        "integral-inequalities" => "randomized weighted L2 gradient inequalities and the Cegrell inequality",
        "subextension" => "growth of the subextension of catalog functions on B(0, s)",
        "skoda" => "Skoda potentials of unit-mass sources: recovery residual and exponential constant",
        "choquet" => "monotonicity, subadditivity and monotone limits of the functional capacity",
        "quasicontinuity" => "capacity of mollification differences and ball-mean convergence",
        _ => "",
    }
}

fn domain(shape: ShapeSpec, spacing: f64, n: usize) -> DomainConfig {
    DomainConfig { shape, spacing: Spacing(spacing), n }
}

/// Built-in configuration of a registered experiment.
pub fn default_config(name: &str) -> Result<ExperimentConfig> {
    if !EXPERIMENTS.contains(&name) {
        return Err(CapError::UnknownExperiment(name.into()));
    }
    let ball = |r: f64| ShapeSpec::Ball { center: vec![], radius: r };
    let dom = match name {
        "capacity-comparison" | "volume-capacity" | "moser-trudinger" | "choquet" => {
            domain(ball(1.0), if name == "choquet" { 1.0 / 24.0 } else { 1.0 / 64.0 }, 1)
        }
        "alexander-taylor" => domain(ball(0.5), 0.025, 1),
        "membership-threshold" => domain(ball(0.5), 1.0 / 512.0, 1),
        "integral-inequalities" => domain(ball(1.0), 1.0 / 12.0, 2),
        "subextension" => domain(ball(1.0), 1.0 / 32.0, 1),
        "skoda" => domain(ball(1.0), 1.0 / 14.0, 2),
        "quasicontinuity" => domain(ball(0.5), 1.0 / 256.0, 1),
        _ => unreachable!(),
    };
    Ok(ExperimentConfig {
        schema: crate::config::SCHEMA_VERSION,
        name: name.into(),
        domain: dom,
        sets: Vec::new(),
        examples: Vec::new(),
        envelope: Default::default(),
        functional: Default::default(),
        seed: 0,
        output_dir: None,
        formats: vec![crate::config::Format::Csv, crate::config::Format::Json, crate::config::Format::Svg],
        params: Params::default(),
    })
}

/// Runs `cfg` on a pool of `workers` threads (all cores when `None`).
pub fn run_with_workers(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentReport> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    let pool = b.build().map_err(|e| CapError::Precondition(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let t = Instant::now();
    let dom = cfg.domain.build()?;
    let mut rep = ExperimentReport::new(&cfg.name, cfg.seed);
    match cfg.name.as_str() {
        "capacity-comparison" => capacity_comparison(cfg, &dom, &mut rep)?,
        "alexander-taylor" => alexander_taylor(cfg, &dom, &mut rep)?,
        "volume-capacity" => {
            volume_fit(cfg, &dom, &mut rep)?;
        }
        "moser-trudinger" => moser_trudinger(cfg, &dom, &mut rep)?,
        "membership-threshold" => membership_threshold(cfg, &dom, &mut rep)?,
        "integral-inequalities" => integral_inequalities(cfg, &dom, &mut rep)?,
        "subextension" => subextension(cfg, &dom, &mut rep)?,
        "skoda" => skoda(cfg, &dom, &mut rep)?,
        "choquet" => choquet(cfg, &dom, &mut rep)?,
        "quasicontinuity" => quasicontinuity(cfg, &dom, &mut rep)?,
        other => return Err(CapError::UnknownExperiment(other.into())),
    }
    info!("{}: {} rows, {} failing, {:.1} s", cfg.name, rep.rows.len(), rep.failures(), t.elapsed().as_secs_f64());
    Ok(rep)
}

fn meta(dom: &GridDomain, delta: Option<f64>) -> GridMeta {
    GridMeta::of(dom, delta)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Least squares `y ≈ a x + b`; returns `(a, b, rms)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let rms = (xs.iter().zip(ys).map(|(x, y)| (y - a * x - b).powi(2)).sum::<f64>() / m).sqrt();
    (a, b, rms)
}

fn centered(n: usize, r: f64) -> ShapeSpec {
    ShapeSpec::centered_ball(n, r)
}

/// Configured shapes, or centered balls of the given radii.
fn named_shapes(cfg: &ExperimentConfig, n: usize, radii: &[f64]) -> Vec<(String, ShapeSpec)> {
    if cfg.sets.is_empty() {
        let radii = cfg.params.radii.clone().unwrap_or_else(|| radii.to_vec());
        radii.iter().map(|&r| (format!("ball({r})"), centered(n, r))).collect()
    } else {
        cfg.sets.iter().enumerate().map(|(k, s)| (format!("set{k}"), s.clone())).collect()
    }
}

fn rasterize_all(shapes: &[(String, ShapeSpec)], dom: &Arc<GridDomain>) -> Vec<(String, BorelSet)> {
    shapes.iter().map(|(name, s)| (name.clone(), rasterize_set(s, dom))).collect()
}

fn examples(cfg: &ExperimentConfig, n: usize) -> Vec<ExampleSpec> {
    if cfg.examples.is_empty() {
        catalog(n)
    } else {
        cfg.examples.clone()
    }
}

fn certificate(f: &GridField, cal: &Calibration, cfg: &ExperimentConfig, delta: f64) -> Result<WStarCertificate> {
    if f.domain().complex_dim() == 1 {
        certify_membership(f, cal, &cfg.functional, &[], delta)
    } else {
        quadratic_certificate(f, cal, delta)
    }
}

fn capacity_comparison(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let radii: &[f64] = if n == 1 { &[0.1, 0.15, 0.2, 0.25, 0.3, 0.35] } else { &[0.25, 0.3, 0.35, 0.4, 0.45, 0.5] };
    let shapes = named_shapes(cfg, n, radii);
    let sets = rasterize_all(&shapes, dom);
    let bt_dom = match cfg.params.bt_spacing {
        Some(h) => build_domain_dim(&cfg.domain.shape, h.0, n)?,
        None => dom.clone(),
    };
    let bt_sets = rasterize_all(&shapes, &bt_dom);
    let bts: Vec<(CapacityResult, f64)> = bt_sets
        .par_iter()
        .map(|(_, set)| {
            let t = Instant::now();
            Ok((bt_capacity(set, &bt_dom, &cal, &cfg.envelope)?, secs(t)))
        })
        .collect::<Result<_>>()?;
    let cs = nested_functional(&sets, dom, &cal, &cfg.functional)?;
    let results: Vec<(f64, f64, f64, f64, GridField)> = sets
        .iter()
        .zip(bts)
        .zip(cs)
        .map(|(((_, set), (bt, tb)), (c, tc))| (volume(set), bt.value, c.value, tb + tc, bt.minimizer[0].clone()))
        .collect();
    let g = meta(dom, Some(4.0 * bt_dom.spacing()));
    let inv_n = 1.0 / n as f64;
    let a = results.iter().map(|r| r.2 / r.1.powf(inv_n)).fold(0.0, f64::max);
    let a_min = results.iter().map(|r| r.2 / r.1.powf(inv_n)).fold(f64::INFINITY, f64::min);
    let ap = results.iter().map(|r| r.1 / r.2).fold(0.0, f64::max);
    let ap_min = results.iter().map(|r| r.1 / r.2).fold(f64::INFINITY, f64::min);
    rep.constant("A", a, a / a_min);
    rep.constant("A_prime", ap, ap / ap_min);
    let mut table = Table::new(&["volume", "bt_capacity", "functional_capacity"]);
    for ((name, _), (v, cap, c, t, _)) in sets.iter().zip(&results) {
        table.push(vec![*v, *cap, *c]);
        let rhs = a * cap.powf(inv_n);
        rep.rows.push(ReportRow::le("functional-le-bt-power", name.as_str(), *c, rhs, 1e-12 * rhs, &g).timed(*t));
        let rhs = ap * c;
        rep.rows.push(ReportRow::le("bt-le-functional", name.as_str(), *cap, rhs, 1e-12 * rhs, &g));
        rep.rows.push(ReportRow::le("volume-le-functional", name.as_str(), *v, *c, 1e-9 * c, &g));
    }
    rep.tables.insert("family".into(), table);
    if results.len() >= 2 {
        let xs: Vec<f64> = results.iter().map(|r| r.1.ln()).collect();
        let ys: Vec<f64> = results.iter().map(|r| r.2.ln()).collect();
        let (slope, icpt, rms) = least_squares(&xs, &ys);
        rep.constant("log_log_slope", slope, rms);
        rep.rows.push(ReportRow::le("slope-lower", "family", inv_n - 0.15, slope, 0.0, &g));
        rep.rows.push(ReportRow::le("slope-upper", "family", slope, 1.15, 0.0, &g));
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let plot = Plot::new("functional vs Bedford-Taylor capacity", "cap(E)", "c(E)")
            .log_log()
            .with(Series::points("sets", results.iter().map(|r| (r.1, r.2)).collect()))
            .with(Series::line(
                "least squares",
                vec![(lo.exp(), (slope * lo + icpt).exp()), (hi.exp(), (slope * hi + icpt).exp())],
            ))
            .with(Series::line("A cap^(1/n)", vec![(lo.exp(), a * (lo * inv_n).exp()), (hi.exp(), a * (hi * inv_n).exp())]));
        rep.figures.push(("capacity_comparison".into(), plot.render()));
    }
    if let Some(last) = results.last() {
        rep.figures.push(("relative_extremal".into(), field_heatmap("u_E of the largest set", &last.4)));
        rep.fields.push(("relative_extremal".into(), last.4.clone()));
    }
    Ok(())
}

/// Functional capacities of a family, largest sets first. An admissible
/// pair for a superset is admissible for the subset, so minimizers of
/// supersets are passed on as candidates and the values are monotone.
fn nested_functional(
    sets: &[(String, BorelSet)],
    dom: &Arc<GridDomain>,
    cal: &Calibration,
    opts: &FunctionalCapOptions,
) -> Result<Vec<(CapacityResult, f64)>> {
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(sets[k].1.count()));
    let mut out: Vec<Option<(CapacityResult, f64)>> = (0..sets.len()).map(|_| None).collect();
    for &k in &order {
        let t = Instant::now();
        let cands: Vec<(GridField, GridField)> = order
            .iter()
            .filter_map(|&j| {
                let (r, _) = out[j].as_ref()?;
                (j != k && sets[k].1.is_subset_of(&sets[j].1) && r.minimizer.len() == 2)
                    .then(|| (r.minimizer[0].clone(), r.minimizer[1].clone()))
            })
            .collect();
        let r = if cands.is_empty() {
            functional_capacity(&sets[k].1, dom, cal, opts)?
        } else {
            functional_capacity_with(&sets[k].1, dom, cal, opts, &cands)?
        };
        out[k] = Some((r, secs(t)));
    }
    Ok(out.into_iter().map(|r| r.expect("every set is visited")).collect())
}

fn alexander_taylor(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let r_out = cfg.params.outer_radius.unwrap_or(0.5);
    let of = cfg.params.outer_factor.unwrap_or(3f64.exp());
    let radii = cfg.params.radii.clone().unwrap_or_else(|| vec![0.1, 0.2, 0.3]);
    let results: Vec<(f64, f64, f64, f64, f64)> = radii
        .par_iter()
        .map(|&r| {
            let t = Instant::now();
            let k = rasterize_set(&centered(n, r), dom);
            let at = at_capacity(&k, r_out, of, &cfg.envelope)?;
            let c = functional_capacity(&k, dom, &cal, &cfg.functional)?;
            Ok((r, at.value, at.residuals["m_k"], c.value, secs(t)))
        })
        .collect::<Result<_>>()?;
    let g = meta(dom, None);
    let mut table = Table::new(&["radius", "t_r", "m_k", "functional_capacity"]);
    for &(r, t, m, c, secs) in &results {
        table.push(vec![r, t, m, c]);
        let dev = (t / (r / r_out) - 1.0).abs();
        rep.rows.push(ReportRow::le("at-ball-ratio", format!("ball({r})"), dev, 0.15, 0.0, &g).timed(secs));
    }
    rep.tables.insert("balls".into(), table);
    // c ≥ 1/(A_r Mⁿ) and c ≤ A_R/M with constants fitted over the family.
    let nf = n as i32;
    let a_r = results.iter().map(|r| 1.0 / (r.2.powi(nf) * r.3)).fold(0.0, f64::max);
    let a_r_min = results.iter().map(|r| 1.0 / (r.2.powi(nf) * r.3)).fold(f64::INFINITY, f64::min);
    let a_big = results.iter().map(|r| r.3 * r.2).fold(0.0, f64::max);
    let a_big_min = results.iter().map(|r| r.3 * r.2).fold(f64::INFINITY, f64::min);
    rep.constant("A_r", a_r, a_r / a_r_min);
    rep.constant("A_R", a_big, a_big / a_big_min);
    for &(r, _, m, c, _) in &results {
        let lower = 1.0 / (a_r * m.powi(nf));
        rep.rows.push(ReportRow::le("at-bracket-lower", format!("ball({r})"), lower, c, 1e-12 * c, &g));
        let upper = a_big / m;
        rep.rows.push(ReportRow::le("at-bracket-upper", format!("ball({r})"), c, upper, 1e-12 * upper, &g));
    }
    let plot = Plot::new("Alexander-Taylor capacity of balls", "r", "T_R")
        .with(Series::points("measured", results.iter().map(|r| (r.0, r.1)).collect()))
        .with(Series::line("r/R", results.iter().map(|r| (r.0, r.0 / r_out)).collect()));
    rep.figures.push(("alexander_taylor".into(), plot.render()));
    Ok(())
}

/// Default family for the volume fit: balls and boxes of varied size inside
/// `B(0, reach)`.
fn volume_family(n: usize, reach: f64) -> Vec<(String, ShapeSpec)> {
    let mut out = Vec::new();
    for &r in &[0.04, 0.07, 0.1, 0.14, 0.2, 0.26, 0.32, 0.4] {
        out.push((format!("ball({r})"), centered(n, r * reach / 0.45)));
    }
    let dim = 2 * n;
    for &(c, r) in &[(0.15, 0.06), (0.2, 0.1), (-0.1, 0.15), (0.05, 0.22)] {
        let mut ctr = vec![0.0; dim];
        ctr[0] = c * reach / 0.45;
        out.push((format!("ball({c},{r})"), ShapeSpec::ball(&ctr, r * reach / 0.45)));
    }
    for &s in &[0.05, 0.1, 0.18, 0.25] {
        let s = s * reach / 0.45;
        let lo: Vec<f64> = (0..dim).map(|k| if k == 0 { -s } else { -s / 2.0 }).collect();
        let hi: Vec<f64> = lo.iter().map(|x| -x).collect();
        out.push((format!("box({s:.4})"), ShapeSpec::cuboid(&lo, &hi)));
    }
    out
}

/// Fits `V(E) ≤ A₁ e^{−α/𝚌(E)}` on half of the family (sorted by `𝚌`,
/// even positions) and checks it on the other half. Returns `(α, A₁)`.
fn volume_fit(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<(f64, f64)> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let reach = cfg.params.k_radius.unwrap_or(0.45);
    let shapes: Vec<(String, ShapeSpec)> = if cfg.sets.is_empty() {
        volume_family(n, reach)
    } else {
        cfg.sets.iter().enumerate().map(|(k, s)| (format!("set{k}"), s.clone())).collect()
    };
    let mut results: Vec<(String, f64, f64, f64)> = shapes
        .par_iter()
        .map(|(name, s)| {
            let t = Instant::now();
            let set = rasterize_set(s, dom);
            let c = functional_capacity(&set, dom, &cal, &cfg.functional)?;
            Ok((name.clone(), volume(&set), c.value, secs(t)))
        })
        .collect::<Result<_>>()?;
    results.retain(|r| r.1 > 0.0 && r.2 > 0.0);
    if results.len() < 4 {
        return Err(CapError::Precondition("volume fit needs at least four non-empty sets".into()));
    }
    results.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let g = meta(dom, None);
    let fit: Vec<&(String, f64, f64, f64)> = results.iter().step_by(2).collect();
    let held: Vec<&(String, f64, f64, f64)> = results.iter().skip(1).step_by(2).collect();
    let xs: Vec<f64> = fit.iter().map(|r| -1.0 / r.2).collect();
    let ys: Vec<f64> = fit.iter().map(|r| r.1.ln()).collect();
    let (slope, _, rms) = least_squares(&xs, &ys);
    let alpha = 0.5 * slope.max(0.0);
    let a1 = fit.iter().map(|r| r.1 * (alpha / r.2).exp()).fold(0.0, f64::max);
    rep.constant("alpha", alpha, rms);
    rep.constant("A1", a1, rms);
    let mut table = Table::new(&["volume", "functional_capacity", "held_out"]);
    for r in &results {
        let is_held = held.iter().any(|h| h.0 == r.0);
        table.push(vec![r.1, r.2, if is_held { 1.0 } else { 0.0 }]);
        rep.rows.push(ReportRow::le("volume-le-functional", r.0.as_str(), r.1, r.2, 1e-9 * r.2, &g).timed(r.3));
    }
    for r in &held {
        let rhs = a1 * (-alpha / r.2).exp();
        rep.rows.push(ReportRow::le("volume-decay-held-out", r.0.as_str(), r.1, rhs, 1e-12 * rhs, &g));
    }
    rep.tables.insert("volume_fit".into(), table);
    let cmin = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let cmax = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let curve: Vec<(f64, f64)> = (0..=20)
        .map(|k| {
            let c = cmin * (cmax / cmin).powf(k as f64 / 20.0);
            (1.0 / c, a1 * (-alpha / c).exp())
        })
        .collect();
    let plot = Plot::new("volume against capacity", "1/c(E)", "V(E)")
        .semilog_y()
        .with(Series::points("fit half", fit.iter().map(|r| (1.0 / r.2, r.1)).collect()))
        .with(Series::points("held out", held.iter().map(|r| (1.0 / r.2, r.1)).collect()))
        .with(Series::line("A1 exp(-alpha/c)", curve));
    rep.figures.push(("volume_capacity".into(), plot.render()));
    Ok((alpha, a1))
}

fn moser_trudinger(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let (alpha, a1) = volume_fit(cfg, dom, rep)?;
    let h = dom.spacing();
    let delta = cfg.params.delta_cells.as_ref().and_then(|d| d.first().copied()).unwrap_or(4.0) * h;
    let kr = cfg.params.k_radius.unwrap_or(0.45);
    let k = rasterize_set(&centered(n, kr), dom);
    let small = rasterize_set(&centered(n, 0.125), dom);
    let thresholds = cfg.params.thresholds.clone().unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
    let g = meta(dom, Some(delta));
    let exs = examples(cfg, n);
    let per: Vec<(String, Vec<ReportRow>, Vec<f64>)> = exs
        .par_iter()
        .map(|ex| {
            let t = Instant::now();
            let f = example_field(ex, dom, delta)?.map(|x| -x.abs());
            let cert = certificate(&f, &cal, cfg, delta)?;
            let norm = cert.norm();
            let mut rows = Vec::new();
            let name = ex.name();
            for &s in &thresholds {
                let chk = sublevel_capacity_check(&f, &cert, s, &k, &cal, &cfg.functional)?;
                rows.push(ReportRow::with_pass(
                    "sublevel-capacity",
                    format!("{name} s={s:.4}"),
                    chk.capacity,
                    chk.bound,
                    1e-9 * chk.bound + 1e-12,
                    chk.holds,
                    &g,
                ));
                // {f/‖f‖* < −s/‖f‖*} ∩ K has volume at most A₁ e^{−α (s/‖f‖*)²}.
                let vol = chk.count as f64 * dom.cell_volume();
                let rhs = a1 * (-alpha * (s / norm).powi(2)).exp();
                rows.push(ReportRow::le("sublevel-volume-decay", format!("{name} s={s:.4}"), vol, rhs, 1e-12 * rhs, &g));
            }
            let gn = f.map(|x| x / norm);
            let ei = exp_integral(&gn, alpha, &small);
            rows.push(ReportRow::with_pass(
                "exp-integrable",
                name.clone(),
                ei,
                f64::INFINITY,
                0.0,
                ei.is_finite(),
                &g,
            ));
            let secs = secs(t);
            if let Some(r) = rows.first_mut() {
                r.wallclock_s = secs;
            }
            Ok((name, rows, vec![norm, cert.l2_sq, cert.trace_mass, ei]))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["norm", "l2_sq", "trace_mass", "exp_integral"]);
    for (_, rows, t) in per {
        rep.rows.extend(rows);
        table.push(t);
    }
    rep.tables.insert("examples".into(), table);
    Ok(())
}

fn membership_threshold(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let h = dom.spacing();
    let cells = cfg.params.delta_cells.clone().unwrap_or_else(|| vec![8.0, 4.0]);
    if cells.len() < 2 || cells.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CapError::Precondition("delta_cells must hold at least two decreasing scales".into()));
    }
    let exs = if cfg.examples.is_empty() {
        vec![ExampleSpec::PowerLog { a: 0.4 }, ExampleSpec::PowerLog { a: 0.6 }]
    } else {
        cfg.examples.clone()
    };
    let jobs: Vec<(usize, f64)> = (0..exs.len()).flat_map(|e| cells.iter().map(move |&c| (e, c))).collect();
    let norms: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(e, c)| {
            let t = Instant::now();
            let f = example_field(&exs[e], dom, c * h)?;
            let cert = certificate(&f, &cal, cfg, c * h)?;
            Ok((cert.norm(), secs(t)))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["a", "delta", "norm"]);
    let mut plot = Plot::new("certified norm under refinement", "delta", "norm").log_log();
    for (e, ex) in exs.iter().enumerate() {
        let a = match ex {
            ExampleSpec::PowerLog { a } => Some(*a),
            _ => None,
        };
        let row: Vec<(f64, f64)> = (0..cells.len()).map(|k| norms[e * cells.len() + k]).collect();
        for (k, &c) in cells.iter().enumerate() {
            table.push(vec![a.unwrap_or(f64::NAN), c * h, row[k].0]);
        }
        plot = plot.with(Series::points(&ex.name(), cells.iter().zip(&row).map(|(c, r)| (c * h, r.0)).collect()));
        for k in 0..cells.len() - 1 {
            let g = meta(dom, Some(cells[k + 1] * h));
            let ratio = row[k + 1].0 / row[k].0;
            let inst = format!("{} delta {}h->{}h", ex.name(), cells[k], cells[k + 1]);
            let t = row[k].1 + row[k + 1].1;
            match a {
                Some(a) if a >= 0.5 => {
                    rep.rows.push(ReportRow::le("norm-diverges", inst, 0.5, ratio - 1.0, 0.0, &g).timed(t))
                }
                _ => rep.rows.push(ReportRow::le("norm-stable", inst, (ratio - 1.0).abs(), 0.10, 0.0, &g).timed(t)),
            }
        }
    }
    rep.tables.insert("norms".into(), table);
    rep.figures.push(("membership_threshold".into(), plot.render()));
    Ok(())
}

fn integral_inequalities(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let trials = cfg.params.trials.unwrap_or(20);
    let g = meta(dom, None);
    let t = Instant::now();
    let mut reports = vec![inequality_battery(dom, &cal, cfg.seed, trials)?];
    if n == 2 {
        reports.push(cegrell_battery(dom, &cal, cfg.seed.wrapping_add(1), trials)?);
    }
    let elapsed = secs(t);
    let mut lemmas: Vec<String> = Vec::new();
    for r in &reports {
        for row in &r.rows {
            let tol = 1e-9 * row.rhs.abs();
            rep.rows.push(ReportRow::with_pass(
                &row.lemma,
                format!("trial {}", row.trial),
                row.lhs,
                row.rhs,
                tol,
                row.holds,
                &g,
            ));
            if !lemmas.contains(&row.lemma) {
                lemmas.push(row.lemma.clone());
            }
        }
    }
    if let Some(r) = rep.rows.first_mut() {
        r.wallclock_s = elapsed;
    }
    let mut table = Table::new(&["lemma_index", "max_ratio", "max_effective_constant"]);
    for (k, l) in lemmas.iter().enumerate() {
        let rows: Vec<_> = reports.iter().flat_map(|r| r.rows.iter()).filter(|r| &r.lemma == l).collect();
        let maxr = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let eff = rows.iter().filter_map(|r| r.effective_constant).fold(f64::NAN, f64::max);
        table.push(vec![k as f64, maxr, eff]);
        rep.constant(&format!("{l}_max_ratio"), maxr, 0.0);
        if eff.is_finite() {
            rep.constant(&format!("{l}_effective_constant"), eff, 0.0);
        }
    }
    rep.tables.insert("lemmas".into(), table);
    Ok(())
}

fn subextension(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let h = dom.spacing();
    let eps = cfg.params.exponent_eps.unwrap_or(0.1);
    let of = cfg.params.outer_factor.unwrap_or(std::f64::consts::E);
    let s = cfg.params.k_radius.unwrap_or(0.5);
    let delta = cfg.params.delta_cells.as_ref().and_then(|d| d.first().copied()).unwrap_or(4.0) * h;
    let exs = if cfg.examples.is_empty() {
        vec![ExampleSpec::PowerLog { a: 0.4 }, ExampleSpec::LogLog { shift: 1.0 }]
    } else {
        cfg.examples.clone()
    };
    let g = meta(dom, Some(delta));
    let inv_n = 1.0 / n as f64;
    let mut table = Table::new(&["exponent", "c", "margin", "largest_exponent"]);
    let mut first = true;
    for ex in &exs {
        let t = Instant::now();
        // Scaled and shifted so that −8 ≤ f ≤ −1, which keeps plurisubharmonicity.
        let raw = example_field(ex, dom, delta)?;
        let inside: Vec<bool> = (0..dom.len()).map(|i| dom.is_inside(i)).collect();
        let top = raw.map(f64::abs).max_on(&inside).unwrap_or(0.0);
        let scale = if top > 0.0 { 7.0 / top } else { 0.0 };
        let f = raw.map(|x| -1.0 - scale * x.abs());
        let sub = subextension_report(&f, eps, s, of, &cfg.envelope)?;
        let largest = subextension_exponent(&sub.u, &f, s);
        let elapsed = secs(t);
        // Both exponents are tabulated; only 1/n − ε is asserted.
        for e in [inv_n - eps, 2.0 * inv_n - eps] {
            let chk = check_subextension(&sub.u, &f, s, e);
            table.push(vec![e, chk.c, chk.margin, largest]);
            if e == inv_n - eps {
                rep.rows.push(
                    ReportRow::with_pass(
                        "subextension-growth",
                        format!("{} e={e:.3}", ex.name()),
                        -chk.margin,
                        0.0,
                        1e-9,
                        chk.holds,
                        &g,
                    )
                    .timed(elapsed),
                );
            }
        }
        rep.constant(&format!("{}_largest_exponent", ex.name()), largest, 0.01);
        let c = check_subextension(&sub.u, &f, s, inv_n - eps).c;
        rep.constant(&format!("{}_truncation_constant", ex.name()), c, 0.0);
        if first {
            rep.figures.push(("subextension".into(), field_heatmap("subextension", &sub.u)));
            rep.fields.push(("subextension".into(), sub.u.clone()));
            first = false;
        }
    }
    rep.tables.insert("growth".into(), table);
    Ok(())
}

/// Unit-mass Gaussian-type source densities of width 0.18, truncated at three widths.
fn skoda_sources(dom: &Arc<GridDomain>) -> Result<Vec<(String, GridField)>> {
    let n = dom.complex_dim();
    let gauss = |w: f64, c: f64| {
        move |p: &[f64]| {
            let mut d2: f64 = p.iter().map(|x| x * x).sum();
            d2 += c * c - 2.0 * c * p[0];
            if d2 <= 9.0 * w * w {
                (-d2 / (w * w)).exp()
            } else {
                0.0
            }
        }
    };
    let w = 0.18;
    let centered = gauss(w, 0.0);
    let (left, right) = (gauss(w, -0.3), gauss(w, 0.3));
    let line = move |p: &[f64]| {
        let z1 = p[0] * p[0] + p[1] * p[1];
        let z2: f64 = p[2..].iter().map(|x| x * x).sum();
        if z1 > 9.0 * w * w || z2 >= 0.25 {
            0.0
        } else {
            (-z1 / (w * w)).exp() * (1.0 - z2 / 0.25).powi(2)
        }
    };
    let dim = 2 * n;
    let mut out = Vec::new();
    let shapes: Vec<(&str, Box<dyn Fn(&[f64]) -> f64 + Sync>)> = vec![
        ("centered", Box::new(centered)),
        ("two_bumps", Box::new(move |p: &[f64]| left(p) + right(p))),
        ("near_line", Box::new(line)),
    ];
    for (name, dens) in shapes {
        if name == "near_line" && n < 2 {
            continue;
        }
        let raw = GridField::from_fn_inside(dom, |p| dens(&p[..dim]));
        let mass = raw.integral();
        if !(mass > 0.0) {
            return Err(CapError::Precondition(format!("source `{name}` is not resolved by the grid")));
        }
        out.push((name.to_string(), raw.map(|x| x / mass)));
    }
    Ok(out)
}

fn skoda(_cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let g = meta(dom, None);
    let eta = GridField::constant(dom, 1.0);
    let mut table = Table::new(&["mass", "residual_l1", "c0", "exp_integral"]);
    for (name, sigma) in skoda_sources(dom)? {
        let t = Instant::now();
        let u = skoda_potential(&sigma, &eta, &cal)?;
        let r = skoda_report(&u, &sigma, &cal)?;
        table.push(vec![r.mass, r.residual_l1, r.c0, r.exp_integral]);
        rep.rows.push(ReportRow::le("skoda-recovery", name.as_str(), r.residual_l1, 0.10, 0.0, &g).timed(secs(t)));
        rep.rows.push(ReportRow::with_pass(
            "skoda-exp-constant",
            name.as_str(),
            r.c0,
            f64::INFINITY,
            0.0,
            r.c0.is_finite() && r.c0 > 0.0 && r.exp_integral.is_finite(),
            &g,
        ));
        rep.constant(&format!("{name}_c0"), r.c0, r.residual_l1);
        if name == "centered" {
            rep.figures.push(("skoda_potential".into(), field_heatmap("Skoda potential", &u)));
            rep.fields.push(("skoda_potential".into(), u));
        }
    }
    rep.tables.insert("sources".into(), table);
    Ok(())
}

fn choquet(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let trials = cfg.params.trials.unwrap_or(100);
    let t = Instant::now();
    let r = choquet_battery(dom, cfg.seed, trials, &cfg.functional)?;
    let g = meta(dom, None);
    for c in &r.checks {
        let tol = r.rel_tol * c.rhs.abs();
        rep.rows.push(ReportRow::with_pass(&c.kind, format!("trial {}", c.trial), c.lhs, c.rhs, tol, !c.violation, &g));
    }
    if let Some(row) = rep.rows.first_mut() {
        row.wallclock_s = secs(t);
    }
    let mut table = Table::new(&["kind_index", "checks", "violations"]);
    let mut kinds: Vec<&str> = r.checks.iter().map(|c| c.kind.as_str()).collect();
    kinds.dedup();
    for (k, kind) in kinds.iter().enumerate() {
        let count = r.checks.iter().filter(|c| c.kind == *kind).count();
        table.push(vec![k as f64, count as f64, *r.violations.get(*kind).unwrap_or(&0) as f64]);
    }
    rep.tables.insert("violations".into(), table);
    Ok(())
}

fn quasicontinuity(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, rep: &mut ExperimentReport) -> Result<()> {
    let n = dom.complex_dim();
    let cal = Calibration::analytic(n)?;
    let h = dom.spacing();
    let delta = cfg.params.delta_cells.as_ref().and_then(|d| d.first().copied()).unwrap_or(1.0) * h;
    let smooth_delta = cfg.params.smooth_delta.unwrap_or(0.2);
    let eps_list = cfg.params.eps_list.clone().unwrap_or_else(|| vec![0.08, 0.04, 0.02, 0.01]);
    let thresh = cfg.params.delta_thresh.unwrap_or(0.08);
    let k = rasterize_set(&centered(n, cfg.params.k_radius.unwrap_or(0.25)), dom);
    let exs = if cfg.examples.is_empty() {
        vec![
            ExampleSpec::PowerLog { a: 0.4 },
            ExampleSpec::PshDiff { sign: 1.0 },
            ExampleSpec::Lipschitz { seed: 7 },
            ExampleSpec::Cutoff { shape: centered(n, 0.2) },
        ]
    } else {
        cfg.examples.clone()
    };
    let per: Vec<(ExampleSpec, Vec<crate::wstar::CauchyRow>, f64, GridField)> = exs
        .par_iter()
        .map(|ex| {
            let t = Instant::now();
            let d = if ex.is_smooth() { smooth_delta } else { delta };
            let f = example_field(ex, dom, d)?;
            let rows = cauchy_in_capacity(&f, &k, thresh, &eps_list, &cal, &cfg.functional)?;
            Ok((ex.clone(), rows, secs(t), f))
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(&["eps_coarse", "eps_fine", "count", "capacity", "smooth"]);
    let mut plot = Plot::new("capacity of mollification differences", "eps", "c").log_log();
    for (ex, rows, t, _) in &per {
        let smooth = ex.is_smooth();
        let d = if smooth { smooth_delta } else { delta };
        let g = meta(dom, Some(d));
        for r in rows {
            table.push(vec![r.eps_coarse, r.eps_fine, r.count as f64, r.capacity, if smooth { 1.0 } else { 0.0 }]);
        }
        let name = ex.name();
        if smooth {
            // Uniform convergence empties the sets once past the coarsest pair.
            let worst = rows.iter().skip(1).map(|r| r.capacity).fold(0.0, f64::max);
            rep.rows.push(ReportRow::with_pass("smooth-capacity-small", name, worst, 1e-3, 0.0, worst < 1e-3, &g).timed(*t));
        } else {
            for (k, w) in rows.windows(2).enumerate() {
                let inst = format!("{name} eps {}->{}", w[1].eps_coarse, w[1].eps_fine);
                let row = ReportRow::with_pass("capacity-decreasing", inst, w[1].capacity, w[0].capacity, 0.0, w[1].capacity < w[0].capacity, &g);
                rep.rows.push(if k == 0 { row.timed(*t) } else { row });
            }
            if let Some(last) = rows.last() {
                rep.rows.push(ReportRow::with_pass(
                    "capacity-vanishes",
                    format!("{name} eps {}->{}", last.eps_coarse, last.eps_fine),
                    last.capacity,
                    1e-3,
                    0.0,
                    last.capacity < 1e-3,
                    &g,
                ));
            }
            plot = plot.with(Series::points(&name, rows.iter().map(|r| (r.eps_fine, r.capacity)).collect()));
        }
    }
    rep.tables.insert("cauchy".into(), table);
    rep.figures.push(("quasicontinuity".into(), plot.render()));
    // Ball means of the singular representative at a few nodes.
    if let Some((_, _, _, f)) = per.iter().find(|p| !p.0.is_smooth()) {
        let dim = 2 * n;
        let mut nodes = Vec::new();
        for c in [[0.0, 0.0], [0.1, 0.0], [0.2, 0.1]] {
            let mut p = vec![0.0; dim];
            p[..2].copy_from_slice(&c);
            if let Some(i) = dom.nearest_node(&p) {
                nodes.push(i);
            }
        }
        let radii: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|c| c * h).collect();
        let prof = ball_mean_profile(f, &nodes, &radii);
        let mut t = Table::new(&["x1", "y1", "radius", "ball_mean", "value"]);
        for (&i, means) in nodes.iter().zip(&prof) {
            let p = dom.point(i);
            for (&r, m) in radii.iter().zip(means) {
                t.push(vec![p[0], p[1], r, m.unwrap_or(f64::NAN), f.value(i)]);
            }
        }
        rep.tables.insert("ball_means".into(), t);
    }
    Ok(())
}
