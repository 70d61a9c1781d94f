//! Scalar and Hermitian-matrix fields over a [`GridDomain`].

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{CapError, Result};
use crate::grid::{BorelSet, GridDomain, Point};
use crate::reduce::{masked_sum, pairwise_sum};

const MAGIC: &[u8; 4] = b"CLF1";

/// One real value per lattice node plus a definedness flag. Undefined
/// nodes hold NaN.
#[derive(Clone, Debug)]
pub struct GridField {
    dom: Arc<GridDomain>,
    values: Vec<f64>,
    defined: Vec<bool>,
}

impl GridField {
    pub fn new(dom: &Arc<GridDomain>, values: Vec<f64>, defined: Vec<bool>) -> Result<Self> {
        if values.len() != dom.len() || defined.len() != dom.len() {
            return Err(CapError::DomainMismatch("field length".into()));
        }
        let values = values
            .into_iter()
            .zip(&defined)
            .map(|(v, &d)| if d { v } else { f64::NAN })
            .collect();
        Ok(GridField { dom: dom.clone(), values, defined })
    }

    /// Evaluates `f` at every lattice node.
    pub fn from_fn(dom: &Arc<GridDomain>, f: impl Fn(&Point) -> f64 + Sync) -> Self {
        let values: Vec<f64> = (0..dom.len()).into_par_iter().map(|i| f(&dom.point(i))).collect();
        GridField {
            dom: dom.clone(),
            values,
            defined: vec![true; dom.len()],
        }
    }

    /// Evaluates `f` on inside nodes only.
    pub fn from_fn_inside(dom: &Arc<GridDomain>, f: impl Fn(&Point) -> f64 + Sync) -> Self {
        let values: Vec<f64> = (0..dom.len())
            .into_par_iter()
            .map(|i| if dom.is_inside(i) { f(&dom.point(i)) } else { f64::NAN })
            .collect();
        GridField {
            dom: dom.clone(),
            values,
            defined: dom.inside().to_vec(),
        }
    }

    pub fn constant(dom: &Arc<GridDomain>, c: f64) -> Self {
        GridField {
            dom: dom.clone(),
            values: vec![c; dom.len()],
            defined: vec![true; dom.len()],
        }
    }

    /// Indicator of a set, defined everywhere on the lattice.
    pub fn indicator(set: &BorelSet) -> Self {
        let dom = set.domain();
        GridField {
            dom: dom.clone(),
            values: set.mask().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            defined: vec![true; dom.len()],
        }
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.dom
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn defined(&self) -> &[bool] {
        &self.defined
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
        self.defined[i] = true;
    }

    pub fn undefine(&mut self, i: usize) {
        self.values[i] = f64::NAN;
        self.defined[i] = false;
    }

    /// True when every inside node carries a finite value.
    pub fn defined_on_inside(&self) -> bool {
        (0..self.dom.len())
            .all(|i| !self.dom.is_inside(i) || (self.defined[i] && self.values[i].is_finite()))
    }

    pub fn same_domain(&self, other: &GridField) -> Result<()> {
        if Arc::ptr_eq(&self.dom, &other.dom) || self.dom.len() == other.dom.len() {
            Ok(())
        } else {
            Err(CapError::DomainMismatch("fields live on different lattices".into()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> GridField {
        let values = self
            .values
            .par_iter()
            .zip(self.defined.par_iter())
            .map(|(&v, &d)| if d { f(v) } else { f64::NAN })
            .collect();
        GridField {
            dom: self.dom.clone(),
            values,
            defined: self.defined.clone(),
        }
    }

    /// Pointwise combination, defined where both inputs are.
    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<GridField> {
        self.same_domain(other)?;
        let defined: Vec<bool> = self
            .defined
            .iter()
            .zip(&other.defined)
            .map(|(&a, &b)| a && b)
            .collect();
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|i| if defined[i] { f(self.values[i], other.values[i]) } else { f64::NAN })
            .collect();
        Ok(GridField {
            dom: self.dom.clone(),
            values,
            defined,
        })
    }

    /// Copy restricted to the nodes where `mask` holds.
    pub fn restrict(&self, mask: &[bool]) -> GridField {
        let defined: Vec<bool> = self.defined.iter().zip(mask).map(|(&d, &m)| d && m).collect();
        let values = self
            .values
            .iter()
            .zip(&defined)
            .map(|(&v, &d)| if d { v } else { f64::NAN })
            .collect();
        GridField {
            dom: self.dom.clone(),
            values,
            defined,
        }
    }

    /// Mask of nodes that are both defined and inside Ω.
    pub fn inside_defined(&self) -> Vec<bool> {
        self.defined
            .iter()
            .zip(self.dom.inside())
            .map(|(&d, &i)| d && i)
            .collect()
    }

    /// `Σ f(vᵢ) h^{2n}` over defined inside nodes.
    pub fn integrate_with(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mask = self.inside_defined();
        masked_sum(&mask, |i| f(self.values[i])) * self.dom.cell_volume()
    }

    pub fn integral(&self) -> f64 {
        self.integrate_with(|v| v)
    }

    /// L² norm over defined inside nodes.
    pub fn l2_norm(&self) -> f64 {
        self.integrate_with(|v| v * v).sqrt()
    }

    /// Largest value over defined inside nodes restricted to `mask`.
    pub fn max_on(&self, mask: &[bool]) -> Option<f64> {
        (0..self.values.len())
            .filter(|&i| mask[i] && self.defined[i])
            .map(|i| self.values[i])
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    pub fn min_on(&self, mask: &[bool]) -> Option<f64> {
        (0..self.values.len())
            .filter(|&i| mask[i] && self.defined[i])
            .map(|i| self.values[i])
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.min(v))))
    }

    /// Flat binary layout: magic, n, extent, spacing, origin, then the
    /// row-major payload with NaN for undefined nodes.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.dom.complex_dim() as u32).to_le_bytes())?;
        w.write_all(&(self.dom.extent() as u64).to_le_bytes())?;
        w.write_all(&self.dom.spacing().to_le_bytes())?;
        for o in self.dom.origin() {
            w.write_all(&o.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a field written by [`write_binary`](Self::write_binary); the
    /// header must match `dom`.
    pub fn read_binary(path: &Path, dom: &Arc<GridDomain>) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CapError::DomainMismatch("bad field file magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let extent = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let spacing = f64::from_le_bytes(b8);
        let mut origin = [0.0; 4];
        for o in origin.iter_mut() {
            r.read_exact(&mut b8)?;
            *o = f64::from_le_bytes(b8);
        }
        if n != dom.complex_dim()
            || extent != dom.extent()
            || spacing != dom.spacing()
            || origin != *dom.origin()
        {
            return Err(CapError::DomainMismatch("field header does not match domain".into()));
        }
        let mut values = Vec::with_capacity(dom.len());
        for _ in 0..dom.len() {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        let defined = values.iter().map(|v| !v.is_nan()).collect();
        Ok(GridField {
            dom: dom.clone(),
            values,
            defined,
        })
    }

    /// CSV with one row per defined node: coordinates then value.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let dim = self.dom.real_dim();
        let names = ["x1", "y1", "x2", "y2"];
        writeln!(out, "{},value", names[..dim].join(","))?;
        for i in 0..self.values.len() {
            if !self.defined[i] {
                continue;
            }
            let p = self.dom.point(i);
            let coords: Vec<String> = p[..dim].iter().map(|x| format!("{x}")).collect();
            writeln!(out, "{},{}", coords.join(","), self.values[i])?;
        }
        Ok(())
    }
}

/// A Hermitian matrix of size 1 or 2: `[[a, c], [c̄, b]]` with `c = cr + i ci`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Herm {
    pub a: f64,
    pub b: f64,
    pub cr: f64,
    pub ci: f64,
}

impl Herm {
    pub fn scalar(a: f64) -> Self {
        Herm { a, ..Default::default() }
    }

    pub fn identity() -> Self {
        Herm { a: 1.0, b: 1.0, cr: 0.0, ci: 0.0 }
    }

    pub fn add(self, o: Herm) -> Herm {
        Herm { a: self.a + o.a, b: self.b + o.b, cr: self.cr + o.cr, ci: self.ci + o.ci }
    }

    pub fn sub(self, o: Herm) -> Herm {
        Herm { a: self.a - o.a, b: self.b - o.b, cr: self.cr - o.cr, ci: self.ci - o.ci }
    }

    pub fn scale(self, s: f64) -> Herm {
        Herm { a: self.a * s, b: self.b * s, cr: self.cr * s, ci: self.ci * s }
    }

    pub fn trace(self, n: usize) -> f64 {
        if n == 1 {
            self.a
        } else {
            self.a + self.b
        }
    }

    pub fn det(self, n: usize) -> f64 {
        if n == 1 {
            self.a
        } else {
            self.a * self.b - self.cr * self.cr - self.ci * self.ci
        }
    }

    /// Eigenvalues in ascending order (the second is unused for n = 1).
    pub fn eigenvalues(self, n: usize) -> [f64; 2] {
        if n == 1 {
            return [self.a, self.a];
        }
        let m = 0.5 * (self.a + self.b);
        let d = 0.5 * (self.a - self.b);
        let r = (d * d + self.cr * self.cr + self.ci * self.ci).sqrt();
        [m - r, m + r]
    }

    pub fn min_eig(self, n: usize) -> f64 {
        self.eigenvalues(n)[0]
    }

    /// Frobenius norm squared.
    pub fn frob2(self, n: usize) -> f64 {
        if n == 1 {
            self.a * self.a
        } else {
            self.a * self.a + self.b * self.b + 2.0 * (self.cr * self.cr + self.ci * self.ci)
        }
    }

    /// Negative part `M₋ = Σ min(λ,0) P_λ` of the matrix.
    pub fn negative_part(self, n: usize) -> Herm {
        if n == 1 {
            return Herm::scalar(self.a.min(0.0));
        }
        let [l0, l1] = self.eigenvalues(n);
        if l0 >= 0.0 {
            return Herm::default();
        }
        if l1 <= 0.0 {
            return self;
        }
        // Rank-one projector onto the eigenvector of l0.
        let (vr, vi, w) = self.eigvec(l0);
        let norm2 = vr * vr + vi * vi + w * w;
        let s = l0 / norm2;
        // v = (vr + i vi, w); v v* = [[|v1|², v1 w], [w v̄1, w²]]
        Herm {
            a: s * (vr * vr + vi * vi),
            b: s * w * w,
            cr: s * vr * w,
            ci: s * vi * w,
        }
    }

    /// Unnormalized eigenvector (v1 = vr + i vi, v2 = w) for eigenvalue `l`.
    fn eigvec(self, l: f64) -> (f64, f64, f64) {
        // (a - l) v1 + c v2 = 0  →  v = (c, l - a) or (l - b, c̄)
        let d1 = (self.cr * self.cr + self.ci * self.ci) + (l - self.a) * (l - self.a);
        let d2 = (l - self.b) * (l - self.b) + (self.cr * self.cr + self.ci * self.ci);
        if d1 >= d2 && d1 > 0.0 {
            (self.cr, self.ci, l - self.a)
        } else if d2 > 0.0 {
            // v = (l - b, c̄): scale so that v2 is real by multiplying by c.
            // (l - b) c, |c|²
            let cc = self.cr * self.cr + self.ci * self.ci;
            ((l - self.b) * self.cr, (l - self.b) * self.ci, cc)
        } else {
            (1.0, 0.0, 0.0)
        }
    }
}

/// Per-node Hermitian matrices. Storage stride is 1 for n = 1 and 4 for
/// n = 2 (`a, b, re c, im c`), so Hermitian symmetry holds by construction.
#[derive(Clone, Debug)]
pub struct HermitianField {
    dom: Arc<GridDomain>,
    data: Vec<f64>,
    defined: Vec<bool>,
}

impl HermitianField {
    fn stride(n: usize) -> usize {
        if n == 1 {
            1
        } else {
            4
        }
    }

    pub fn zeros(dom: &Arc<GridDomain>) -> Self {
        HermitianField {
            dom: dom.clone(),
            data: vec![0.0; dom.len() * Self::stride(dom.complex_dim())],
            defined: vec![true; dom.len()],
        }
    }

    /// Builds a field from a per-node closure returning `None` where undefined.
    pub fn from_fn(dom: &Arc<GridDomain>, f: impl Fn(usize) -> Option<Herm> + Sync) -> Self {
        let n = dom.complex_dim();
        let st = Self::stride(n);
        let cells: Vec<Option<Herm>> = (0..dom.len()).into_par_iter().map(|i| f(i)).collect();
        let mut data = vec![f64::NAN; dom.len() * st];
        let mut defined = vec![false; dom.len()];
        for (i, c) in cells.into_iter().enumerate() {
            if let Some(m) = c {
                defined[i] = true;
                if n == 1 {
                    data[i] = m.a;
                } else {
                    data[4 * i..4 * i + 4].copy_from_slice(&[m.a, m.b, m.cr, m.ci]);
                }
            }
        }
        HermitianField { dom: dom.clone(), data, defined }
    }

    /// Coefficient field of the Kähler form ω (the identity matrix).
    pub fn kahler(dom: &Arc<GridDomain>) -> Self {
        Self::from_fn(dom, |_| Some(Herm::identity()))
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.dom
    }

    pub fn complex_dim(&self) -> usize {
        self.dom.complex_dim()
    }

    pub fn defined(&self) -> &[bool] {
        &self.defined
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn get(&self, i: usize) -> Herm {
        if self.complex_dim() == 1 {
            Herm::scalar(self.data[i])
        } else {
            let s = &self.data[4 * i..4 * i + 4];
            Herm { a: s[0], b: s[1], cr: s[2], ci: s[3] }
        }
    }

    pub fn set(&mut self, i: usize, m: Herm) {
        self.defined[i] = true;
        if self.complex_dim() == 1 {
            self.data[i] = m.a;
        } else {
            self.data[4 * i..4 * i + 4].copy_from_slice(&[m.a, m.b, m.cr, m.ci]);
        }
    }

    pub fn undefine(&mut self, i: usize) {
        self.defined[i] = false;
    }

    fn check(&self, o: &HermitianField) -> Result<()> {
        if self.dom.len() != o.dom.len() || self.complex_dim() != o.complex_dim() {
            return Err(CapError::DomainMismatch("Hermitian fields on different lattices".into()));
        }
        Ok(())
    }

    /// Pointwise combination, defined where both inputs are.
    pub fn zip_with(&self, o: &HermitianField, f: impl Fn(Herm, Herm) -> Herm + Sync) -> Result<Self> {
        self.check(o)?;
        Ok(Self::from_fn(&self.dom, |i| {
            (self.defined[i] && o.defined[i]).then(|| f(self.get(i), o.get(i)))
        }))
    }

    pub fn add(&self, o: &HermitianField) -> Result<Self> {
        self.zip_with(o, |a, b| a.add(b))
    }

    pub fn sub(&self, o: &HermitianField) -> Result<Self> {
        self.zip_with(o, |a, b| a.sub(b))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(&self.dom, |i| self.defined[i].then(|| self.get(i).scale(s)))
    }

    /// Scalar field of traces.
    pub fn trace_field(&self) -> GridField {
        let n = self.complex_dim();
        let values = (0..self.dom.len())
            .map(|i| if self.defined[i] { self.get(i).trace(n) } else { f64::NAN })
            .collect();
        GridField::new(&self.dom, values, self.defined.clone()).expect("lengths match")
    }

    /// Scalar field of smallest eigenvalues.
    pub fn min_eig_field(&self) -> GridField {
        let n = self.complex_dim();
        let values = (0..self.dom.len())
            .map(|i| if self.defined[i] { self.get(i).min_eig(n) } else { f64::NAN })
            .collect();
        GridField::new(&self.dom, values, self.defined.clone()).expect("lengths match")
    }

    /// Component-wise scalar fields (`a`, `b`, `re c`, `im c`; one for n = 1).
    pub fn components(&self) -> Vec<GridField> {
        let st = Self::stride(self.complex_dim());
        (0..st)
            .map(|k| {
                let values = (0..self.dom.len())
                    .map(|i| if self.defined[i] { self.data[st * i + k] } else { f64::NAN })
                    .collect();
                GridField::new(&self.dom, values, self.defined.clone()).expect("lengths match")
            })
            .collect()
    }

    /// Reassembles a field from the scalar components of [`components`](Self::components).
    pub fn from_components(comps: &[GridField]) -> Result<Self> {
        let dom = comps
            .first()
            .ok_or_else(|| CapError::Precondition("no components".into()))?
            .domain()
            .clone();
        let st = Self::stride(dom.complex_dim());
        if comps.len() != st {
            return Err(CapError::DomainMismatch("component count".into()));
        }
        Ok(Self::from_fn(&dom, |i| {
            if !comps.iter().all(|c| c.is_defined(i)) {
                return None;
            }
            Some(if st == 1 {
                Herm::scalar(comps[0].value(i))
            } else {
                Herm {
                    a: comps[0].value(i),
                    b: comps[1].value(i),
                    cr: comps[2].value(i),
                    ci: comps[3].value(i),
                }
            })
        }))
    }

    /// Sum of traces over defined nodes in `mask`, times `h^{2n}`.
    pub fn trace_integral(&self, mask: &[bool]) -> f64 {
        let n = self.complex_dim();
        let terms: Vec<f64> = (0..self.dom.len())
            .filter(|&i| mask[i] && self.defined[i])
            .map(|i| self.get(i).trace(n))
            .collect();
        pairwise_sum(&terms) * self.dom.cell_volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, ShapeSpec};

    #[test]
    fn eigen_closed_form() {
        let m = Herm { a: 2.0, b: 1.0, cr: 0.5, ci: -0.5 };
        let [l0, l1] = m.eigenvalues(2);
        assert!((l0 + l1 - 3.0).abs() < 1e-14);
        assert!((l0 * l1 - m.det(2)).abs() < 1e-14);
    }

    #[test]
    fn negative_part_reconstructs() {
        let m = Herm { a: 1.0, b: -2.0, cr: 0.7, ci: 0.3 };
        let neg = m.negative_part(2);
        let pos = m.sub(neg);
        assert!(pos.min_eig(2) > -1e-12);
        assert!(neg.eigenvalues(2)[1] < 1e-12);
        let [l0, _] = m.eigenvalues(2);
        assert!((neg.trace(2) - l0).abs() < 1e-12);
        // Other eigenvector orientation.
        let m = Herm { a: -2.0, b: 1.0, cr: 0.0, ci: 0.4 };
        let neg = m.negative_part(2);
        assert!((neg.trace(2) - m.min_eig(2)).abs() < 1e-12);
        assert!(m.sub(neg).min_eig(2) > -1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let dom = build_domain(&ShapeSpec::centered_ball(1, 1.0), 0.1).unwrap();
        let f = GridField::from_fn_inside(&dom, |p| p[0] * 3.0 - p[1]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        f.write_binary(&path).unwrap();
        let g = GridField::read_binary(&path, &dom).unwrap();
        assert_eq!(f.defined(), g.defined());
        for i in 0..dom.len() {
            if f.is_defined(i) {
                assert_eq!(f.value(i), g.value(i));
            }
        }
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("x1,y1,value"));
        assert_eq!(text.lines().count(), dom.inside_count() + 1);
    }

    #[test]
    fn components_roundtrip() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 0.25).unwrap();
        let t = HermitianField::from_fn(&dom, |i| {
            let p = dom.point(i);
            Some(Herm { a: p[0], b: p[1], cr: p[2], ci: p[3] })
        });
        let back = HermitianField::from_components(&t.components()).unwrap();
        for i in 0..dom.len() {
            assert_eq!(t.get(i), back.get(i));
        }
    }
}
