//! Lattice discretization of bounded domains in ℂⁿ (n = 1, 2) and the
//! rasterized Borel sets on which capacities are evaluated.
//!
//! Nodes sit at cell centers `origin + (i + 1/2) h` along each of the `2n`
//! real axes, ordered `(x₁, y₁, x₂, y₂)` with the last axis fastest.
//! Every domain carries a two-cell padding ring around the bounding box of
//! its shape so that wide stencils anchored at inside nodes never leave
//! the lattice.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{CapError, Result};
use crate::field::GridField;

/// Real coordinates of a node; entries beyond `2n` are zero.
pub type Point = [f64; 4];

/// Cells of padding added on every side of the shape's bounding box.
pub const PAD: usize = 2;

/// Minimum number of cells across the shape along each axis.
pub const MIN_CELLS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Ball {
        #[serde(default)]
        center: Vec<f64>,
        radius: f64,
    },
    Annulus {
        #[serde(default)]
        center: Vec<f64>,
        r_in: f64,
        r_out: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Union {
        shapes: Vec<ShapeSpec>,
    },
    Intersection {
        shapes: Vec<ShapeSpec>,
    },
    /// Complement of `shape` inside the ambient domain Ω.
    ComplementIn {
        shape: std::boxed::Box<ShapeSpec>,
    },
    /// `{z : field(z) < threshold}` for a named field.
    Sublevel {
        field: String,
        threshold: f64,
    },
}

impl ShapeSpec {
    pub fn ball(center: &[f64], radius: f64) -> Self {
        ShapeSpec::Ball {
            center: center.to_vec(),
            radius,
        }
    }

    /// Ball centered at the origin of ℂⁿ.
    pub fn centered_ball(n: usize, radius: f64) -> Self {
        ShapeSpec::Ball {
            center: vec![0.0; 2 * n],
            radius,
        }
    }

    pub fn annulus(center: &[f64], r_in: f64, r_out: f64) -> Self {
        ShapeSpec::Annulus {
            center: center.to_vec(),
            r_in,
            r_out,
        }
    }

    pub fn cuboid(lo: &[f64], hi: &[f64]) -> Self {
        ShapeSpec::Box {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
        }
    }

    /// Checks the shape's own invariants (positive radii, ordered corners).
    pub fn validate(&self) -> Result<()> {
        match self {
            ShapeSpec::Ball { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(CapError::DegenerateShape(format!(
                        "ball radius {radius} must be positive"
                    )));
                }
            }
            ShapeSpec::Annulus { r_in, r_out, .. } => {
                if !(*r_in > 0.0) || !(r_in < r_out) {
                    return Err(CapError::DegenerateShape(format!(
                        "annulus radii must satisfy 0 < r_in < r_out (got {r_in}, {r_out})"
                    )));
                }
            }
            ShapeSpec::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(CapError::DegenerateShape(
                        "box corners must have equal, nonzero length".into(),
                    ));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(CapError::DegenerateShape(format!(
                        "box needs lo < hi componentwise (lo = {lo:?}, hi = {hi:?})"
                    )));
                }
            }
            ShapeSpec::Union { shapes } | ShapeSpec::Intersection { shapes } => {
                if shapes.is_empty() {
                    return Err(CapError::DegenerateShape("empty shape list".into()));
                }
                for s in shapes {
                    s.validate()?;
                }
            }
            ShapeSpec::ComplementIn { shape } => shape.validate()?,
            ShapeSpec::Sublevel { .. } => {}
        }
        Ok(())
    }

    /// Real dimension implied by coordinate vectors, if any.
    fn real_dim_hint(&self) -> Option<usize> {
        match self {
            ShapeSpec::Ball { center, .. } | ShapeSpec::Annulus { center, .. } => {
                (!center.is_empty()).then_some(center.len())
            }
            ShapeSpec::Box { lo, .. } => Some(lo.len()),
            ShapeSpec::Union { shapes } | ShapeSpec::Intersection { shapes } => {
                shapes.iter().find_map(|s| s.real_dim_hint())
            }
            ShapeSpec::ComplementIn { shape } => shape.real_dim_hint(),
            ShapeSpec::Sublevel { .. } => None,
        }
    }

    /// Axis-aligned bounding box in `dim` real coordinates.
    fn bounding_box(&self, dim: usize) -> Result<(Point, Point)> {
        let mut lo = [0.0; 4];
        let mut hi = [0.0; 4];
        match self {
            ShapeSpec::Ball { center, radius } => {
                for a in 0..dim {
                    let c = center.get(a).copied().unwrap_or(0.0);
                    lo[a] = c - radius;
                    hi[a] = c + radius;
                }
            }
            ShapeSpec::Annulus { center, r_out, .. } => {
                for a in 0..dim {
                    let c = center.get(a).copied().unwrap_or(0.0);
                    lo[a] = c - r_out;
                    hi[a] = c + r_out;
                }
            }
            ShapeSpec::Box { lo: l, hi: h } => {
                for a in 0..dim {
                    lo[a] = l[a];
                    hi[a] = h[a];
                }
            }
            ShapeSpec::Union { shapes } => {
                lo = [f64::INFINITY; 4];
                hi = [f64::NEG_INFINITY; 4];
                for s in shapes {
                    let (l, h) = s.bounding_box(dim)?;
                    for a in 0..dim {
                        lo[a] = lo[a].min(l[a]);
                        hi[a] = hi[a].max(h[a]);
                    }
                }
            }
            ShapeSpec::Intersection { shapes } => {
                lo = [f64::NEG_INFINITY; 4];
                hi = [f64::INFINITY; 4];
                for s in shapes {
                    let (l, h) = s.bounding_box(dim)?;
                    for a in 0..dim {
                        lo[a] = lo[a].max(l[a]);
                        hi[a] = hi[a].min(h[a]);
                    }
                }
            }
            ShapeSpec::ComplementIn { .. } | ShapeSpec::Sublevel { .. } => {
                return Err(CapError::DegenerateShape(
                    "complement and sublevel shapes cannot define a domain".into(),
                ))
            }
        }
        for a in 0..dim {
            if !(lo[a] < hi[a]) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(CapError::DegenerateShape(format!(
                    "empty bounding box along axis {a}"
                )));
            }
        }
        Ok((lo, hi))
    }

    /// Geometric membership. Sublevel shapes are resolved elsewhere and
    /// report `false` here; `ComplementIn` reports the negation of its
    /// inner shape (the caller intersects with Ω).
    pub fn contains(&self, p: &Point, dim: usize) -> bool {
        match self {
            ShapeSpec::Ball { center, radius } => dist2(p, center, dim) <= radius * radius,
            ShapeSpec::Annulus { center, r_in, r_out } => {
                let d2 = dist2(p, center, dim);
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
            ShapeSpec::Box { lo, hi } => (0..dim).all(|a| p[a] >= lo[a] && p[a] <= hi[a]),
            ShapeSpec::Union { shapes } => shapes.iter().any(|s| s.contains(p, dim)),
            ShapeSpec::Intersection { shapes } => shapes.iter().all(|s| s.contains(p, dim)),
            ShapeSpec::ComplementIn { shape } => !shape.contains(p, dim),
            ShapeSpec::Sublevel { .. } => false,
        }
    }
}

fn dist2(p: &Point, center: &[f64], dim: usize) -> f64 {
    (0..dim)
        .map(|a| {
            let d = p[a] - center.get(a).copied().unwrap_or(0.0);
            d * d
        })
        .sum()
}

/// Lattice discretization of a bounded domain Ω ⊂ ℂⁿ.
#[derive(Clone, Debug)]
pub struct GridDomain {
    n: usize,
    origin: Point,
    spacing: f64,
    extent: usize,
    strides: [usize; 4],
    len: usize,
    inside: Vec<bool>,
    boundary: Vec<bool>,
}

impl GridDomain {
    /// Builds a lattice of `extent` nodes per axis with an explicit inside
    /// mask. The boundary layer is derived from the mask.
    pub fn from_mask(
        n: usize,
        origin: Point,
        spacing: f64,
        extent: usize,
        inside: Vec<bool>,
    ) -> Result<Self> {
        if n != 1 && n != 2 {
            return Err(CapError::Dimension(n));
        }
        if !(spacing > 0.0) {
            return Err(CapError::InvalidSpacing(format!("spacing {spacing} must be positive")));
        }
        let dim = 2 * n;
        let mut strides = [0usize; 4];
        let mut s = 1;
        for a in (0..dim).rev() {
            strides[a] = s;
            s *= extent;
        }
        let len = s;
        if inside.len() != len {
            return Err(CapError::DomainMismatch(format!(
                "mask length {} != lattice size {len}",
                inside.len()
            )));
        }
        let mut dom = GridDomain {
            n,
            origin,
            spacing,
            extent,
            strides,
            len,
            inside,
            boundary: vec![false; len],
        };
        // Nodes on the outermost lattice layer are never inside.
        for idx in 0..len {
            if dom.inside[idx] && dom.on_lattice_edge(idx) {
                dom.inside[idx] = false;
            }
        }
        let mut boundary = vec![false; len];
        for (idx, b) in boundary.iter_mut().enumerate() {
            if dom.inside[idx] {
                continue;
            }
            *b = (0..dim).any(|a| {
                [-1isize, 1].iter().any(|&o| {
                    dom.axis_neighbor(idx, a, o)
                        .map(|j| dom.inside[j])
                        .unwrap_or(false)
                })
            });
        }
        dom.boundary = boundary;
        Ok(dom)
    }

    pub fn complex_dim(&self) -> usize {
        self.n
    }

    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> usize {
        self.extent
    }

    pub fn origin(&self) -> &Point {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn strides(&self) -> &[usize; 4] {
        &self.strides
    }

    /// `h^{2n}`, the Lebesgue measure of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(2 * self.n as i32)
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_inside(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary[idx]
    }

    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn inside_indices(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| self.inside[i]).collect()
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; 4] {
        let mut m = [0usize; 4];
        for a in 0..self.real_dim() {
            m[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        m
    }

    pub fn index_of(&self, m: &[usize]) -> usize {
        (0..self.real_dim()).map(|a| m[a] * self.strides[a]).sum()
    }

    pub fn point(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let mut p = [0.0; 4];
        for a in 0..self.real_dim() {
            p[a] = self.origin[a] + (m[a] as f64 + 0.5) * self.spacing;
        }
        p
    }

    /// Squared Euclidean norm of the node position.
    pub fn norm2(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        p.iter().map(|x| x * x).sum()
    }

    fn on_lattice_edge(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.real_dim()).any(|a| m[a] == 0 || m[a] + 1 == self.extent)
    }

    pub fn axis_neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let m = self.multi_index(idx);
        let c = m[axis] as isize + offset;
        if c < 0 || c >= self.extent as isize {
            return None;
        }
        Some((idx as isize + offset * self.strides[axis] as isize) as usize)
    }

    /// Node displaced by an integer offset vector, if it stays on the lattice.
    pub fn offset_index(&self, idx: usize, off: &[isize; 4]) -> Option<usize> {
        let m = self.multi_index(idx);
        let mut out = idx as isize;
        for a in 0..self.real_dim() {
            let c = m[a] as isize + off[a];
            if c < 0 || c >= self.extent as isize {
                return None;
            }
            out += off[a] * self.strides[a] as isize;
        }
        Some(out as usize)
    }

    /// Signed flat-index shift of an offset vector; valid whenever the
    /// caller knows the target stays on the lattice.
    pub fn flat_offset(&self, off: &[isize; 4]) -> isize {
        (0..self.real_dim())
            .map(|a| off[a] * self.strides[a] as isize)
            .sum()
    }

    /// Chebyshev distance (in cells) from the node to the lattice edge.
    pub fn edge_distance(&self, idx: usize) -> usize {
        let m = self.multi_index(idx);
        (0..self.real_dim())
            .map(|a| m[a].min(self.extent - 1 - m[a]))
            .min()
            .unwrap_or(0)
    }

    /// Lattice node closest to `p`, if `p` lies within the lattice box.
    pub fn nearest_node(&self, p: &[f64]) -> Option<usize> {
        let mut m = [0usize; 4];
        for a in 0..self.real_dim() {
            let x = p.get(a).copied().unwrap_or(0.0);
            let c = ((x - self.origin[a]) / self.spacing - 0.5).round();
            if c < 0.0 || c >= self.extent as f64 {
                return None;
            }
            m[a] = c as usize;
        }
        Some(self.index_of(&m))
    }

    /// Integer offsets `o` with `|o|·h ≤ r`, including the zero offset.
    pub fn ball_offsets(&self, r: f64) -> Vec<[isize; 4]> {
        let k = (r / self.spacing).floor() as isize;
        let lim = (r / self.spacing) * (r / self.spacing) + 1e-9;
        let dim = self.real_dim();
        let mut out = Vec::new();
        let mut o = [0isize; 4];
        fn rec(a: usize, dim: usize, k: isize, lim: f64, o: &mut [isize; 4], out: &mut Vec<[isize; 4]>) {
            if a == dim {
                let d2: isize = o.iter().map(|x| x * x).sum();
                if (d2 as f64) <= lim {
                    out.push(*o);
                }
                return;
            }
            for v in -k..=k {
                o[a] = v;
                rec(a + 1, dim, k, lim, o, out);
            }
            o[a] = 0;
        }
        rec(0, dim, k, lim, &mut o, &mut out);
        out
    }

    /// Mask of the shrunken domain Ω_ε = {z ∈ Ω : dist(z, ∂Ω) > ε}, realized
    /// on nodes as "every node within distance ε is inside".
    pub fn shrink(&self, eps: f64) -> Vec<bool> {
        let k = (eps / self.spacing).ceil() as usize;
        let core = erode_chebyshev(self, &self.inside, k);
        let offsets = self.ball_offsets(eps);
        let mut out = core.clone();
        for idx in 0..self.len {
            if !self.inside[idx] || core[idx] {
                continue;
            }
            out[idx] = offsets.iter().all(|o| {
                self.offset_index(idx, o)
                    .map(|j| self.inside[j])
                    .unwrap_or(false)
            });
        }
        out
    }
}

/// Chebyshev erosion of a mask by `k` cells.
fn erode_chebyshev(dom: &GridDomain, mask: &[bool], k: usize) -> Vec<bool> {
    let inv: Vec<bool> = mask.iter().map(|b| !b).collect();
    let grown = dilate_chebyshev_raw(dom, &inv, k);
    grown.iter().map(|b| !b).collect()
}

/// Chebyshev dilation of a mask by `k` cells over the whole lattice,
/// computed axis by axis.
fn dilate_chebyshev_raw(dom: &GridDomain, mask: &[bool], k: usize) -> Vec<bool> {
    let mut cur = mask.to_vec();
    if k == 0 {
        return cur;
    }
    let ext = dom.extent;
    for a in 0..dom.real_dim() {
        let stride = dom.strides[a];
        let mut next = vec![false; dom.len];
        for idx in 0..dom.len {
            if !cur[idx] {
                continue;
            }
            let c = (idx / stride) % ext;
            let lo = c.saturating_sub(k);
            let hi = (c + k).min(ext - 1);
            let base = idx - c * stride;
            for j in lo..=hi {
                next[base + j * stride] = true;
            }
        }
        cur = next;
    }
    cur
}

/// Builds the lattice for `shape` at the given spacing. The complex
/// dimension is read off the shape's coordinate vectors.
pub fn build_domain(shape: &ShapeSpec, spacing: f64) -> Result<Arc<GridDomain>> {
    shape.validate()?;
    let dim = shape
        .real_dim_hint()
        .ok_or_else(|| CapError::DegenerateShape("shape carries no coordinates".into()))?;
    if dim != 2 && dim != 4 {
        return Err(CapError::Dimension(dim / 2));
    }
    build_domain_dim(shape, spacing, dim / 2)
}

/// As [`build_domain`] with an explicit complex dimension; shapes with
/// empty centers are interpreted at the origin.
pub fn build_domain_dim(shape: &ShapeSpec, spacing: f64, n: usize) -> Result<Arc<GridDomain>> {
    shape.validate()?;
    if n != 1 && n != 2 {
        return Err(CapError::Dimension(n));
    }
    if !(spacing > 0.0) {
        return Err(CapError::InvalidSpacing(format!("spacing {spacing} must be positive")));
    }
    let dim = 2 * n;
    let (lo, hi) = shape.bounding_box(dim)?;
    let mut cells = 0usize;
    for a in 0..dim {
        let c = ((hi[a] - lo[a]) / spacing - 1e-9).ceil() as usize;
        cells = cells.max(c);
    }
    if cells < MIN_CELLS {
        return Err(CapError::InvalidSpacing(format!(
            "spacing {spacing} gives {cells} cells per axis (< {MIN_CELLS})"
        )));
    }
    let extent = cells + 2 * PAD;
    let mut origin = [0.0; 4];
    for a in 0..dim {
        let mid = 0.5 * (lo[a] + hi[a]);
        origin[a] = mid - 0.5 * extent as f64 * spacing;
    }
    let len = extent.pow(dim as u32);
    let probe = GridDomain {
        n,
        origin,
        spacing,
        extent,
        strides: [0; 4],
        len: 0,
        inside: Vec::new(),
        boundary: Vec::new(),
    };
    let mut strides = [0usize; 4];
    let mut s = 1;
    for a in (0..dim).rev() {
        strides[a] = s;
        s *= extent;
    }
    let probe = GridDomain { strides, len, ..probe };
    let inside: Vec<bool> = (0..len).map(|i| shape.contains(&probe.point(i), dim)).collect();
    if !inside.iter().any(|&b| b) {
        return Err(CapError::DegenerateShape(
            "no lattice node lies inside the shape".into(),
        ));
    }
    Ok(Arc::new(GridDomain::from_mask(n, origin, spacing, extent, inside)?))
}

/// Boolean mask over the lattice; always a subset of the inside mask.
#[derive(Clone, Debug)]
pub struct BorelSet {
    dom: Arc<GridDomain>,
    mask: Vec<bool>,
}

impl BorelSet {
    /// Wraps a raw mask, intersecting it with the inside of the domain.
    pub fn from_mask(dom: &Arc<GridDomain>, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != dom.len() {
            return Err(CapError::DomainMismatch("mask length".into()));
        }
        let mask = mask
            .into_iter()
            .zip(dom.inside())
            .map(|(m, &i)| m && i)
            .collect();
        Ok(BorelSet { dom: dom.clone(), mask })
    }

    pub fn empty(dom: &Arc<GridDomain>) -> Self {
        BorelSet {
            dom: dom.clone(),
            mask: vec![false; dom.len()],
        }
    }

    /// The whole domain Ω.
    pub fn full(dom: &Arc<GridDomain>) -> Self {
        BorelSet {
            dom: dom.clone(),
            mask: dom.inside().to_vec(),
        }
    }

    pub fn domain(&self) -> &Arc<GridDomain> {
        &self.dom
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn is_subset_of(&self, other: &BorelSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn union(&self, other: &BorelSet) -> BorelSet {
        BorelSet {
            dom: self.dom.clone(),
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| a || b).collect(),
        }
    }

    pub fn intersection(&self, other: &BorelSet) -> BorelSet {
        BorelSet {
            dom: self.dom.clone(),
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn is_disjoint(&self, other: &BorelSet) -> bool {
        !self.mask.iter().zip(&other.mask).any(|(&a, &b)| a && b)
    }

    /// True when the Chebyshev `cells`-neighborhood of the set stays inside Ω.
    pub fn has_margin(&self, cells: usize) -> bool {
        let grown = dilate_chebyshev_raw(&self.dom, &self.mask, cells);
        grown.iter().zip(self.dom.inside()).all(|(&g, &i)| !g || i)
    }
}

/// Rasterizes a shape on `dom`; sublevel shapes need [`rasterize_set_with`].
pub fn rasterize_set(shape: &ShapeSpec, dom: &Arc<GridDomain>) -> BorelSet {
    rasterize_set_with(shape, dom, &|_| None).unwrap_or_else(|_| BorelSet::empty(dom))
}

/// Rasterizes a shape, resolving sublevel references through `fields`.
pub fn rasterize_set_with<'a>(
    shape: &ShapeSpec,
    dom: &Arc<GridDomain>,
    fields: &dyn Fn(&str) -> Option<&'a GridField>,
) -> Result<BorelSet> {
    let mask = raster_mask(shape, dom, fields)?;
    BorelSet::from_mask(dom, mask)
}

fn raster_mask<'a>(
    shape: &ShapeSpec,
    dom: &Arc<GridDomain>,
    fields: &dyn Fn(&str) -> Option<&'a GridField>,
) -> Result<Vec<bool>> {
    let dim = dom.real_dim();
    Ok(match shape {
        ShapeSpec::Union { shapes } => {
            let mut m = vec![false; dom.len()];
            for s in shapes {
                for (a, b) in m.iter_mut().zip(raster_mask(s, dom, fields)?) {
                    *a |= b;
                }
            }
            m
        }
        ShapeSpec::Intersection { shapes } => {
            let mut m = dom.inside().to_vec();
            for s in shapes {
                for (a, b) in m.iter_mut().zip(raster_mask(s, dom, fields)?) {
                    *a &= b;
                }
            }
            m
        }
        ShapeSpec::ComplementIn { shape } => raster_mask(shape, dom, fields)?
            .into_iter()
            .zip(dom.inside())
            .map(|(m, &i)| i && !m)
            .collect(),
        ShapeSpec::Sublevel { field, threshold } => {
            let f = fields(field).ok_or_else(|| CapError::UnknownField(field.clone()))?;
            (0..dom.len())
                .map(|i| f.is_defined(i) && f.value(i) < *threshold)
                .collect()
        }
        _ => (0..dom.len())
            .map(|i| dom.is_inside(i) && shape.contains(&dom.point(i), dim))
            .collect(),
    })
}

/// Lebesgue volume of the rasterized set: node count times `h^{2n}`.
pub fn volume(set: &BorelSet) -> f64 {
    set.count() as f64 * set.dom.cell_volume()
}

/// Chebyshev dilation by `cells`, intersected with the inside of Ω.
pub fn dilate(set: &BorelSet, cells: usize) -> BorelSet {
    let grown = dilate_chebyshev_raw(&set.dom, &set.mask, cells);
    BorelSet {
        dom: set.dom.clone(),
        mask: grown
            .into_iter()
            .zip(set.dom.inside())
            .map(|(g, &i)| g && i)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn disc(h: f64) -> Arc<GridDomain> {
        build_domain(&ShapeSpec::centered_ball(1, 1.0), h).unwrap()
    }

    #[test]
    fn unit_disc_area() {
        let dom = disc(2.0 / 256.0);
        assert_eq!(dom.extent(), 256 + 2 * PAD);
        let area = dom.inside_count() as f64 * dom.cell_volume();
        assert!((area - PI).abs() / PI < 0.01, "area {area}");
    }

    #[test]
    fn unit_ball_c2_volume() {
        let dom = build_domain(&ShapeSpec::centered_ball(2, 1.0), 2.0 / 32.0).unwrap();
        let vol = dom.inside_count() as f64 * dom.cell_volume();
        let exact = PI * PI / 2.0;
        assert!((vol - exact).abs() / exact < 0.03, "vol {vol}");
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = build_domain(&ShapeSpec::cuboid(&[0.0, 0.0], &[0.0, 1.0]), 0.01);
        assert!(matches!(err, Err(CapError::DegenerateShape(_))));
        let err = build_domain(&ShapeSpec::centered_ball(1, 1.0), 0.5);
        assert!(matches!(err, Err(CapError::InvalidSpacing(_))));
    }

    #[test]
    fn inside_and_boundary_disjoint_with_closed_neighbors() {
        let dom = disc(2.0 / 40.0);
        for i in 0..dom.len() {
            assert!(!(dom.is_inside(i) && dom.is_boundary(i)));
            if dom.is_inside(i) {
                for a in 0..2 {
                    for o in [-1, 1] {
                        let j = dom.axis_neighbor(i, a, o).unwrap();
                        assert!(dom.is_inside(j) || dom.is_boundary(j));
                    }
                }
            }
        }
    }

    #[test]
    fn rasterization_identities() {
        let dom = disc(2.0 / 64.0);
        let small = rasterize_set(&ShapeSpec::centered_ball(1, 0.25), &dom);
        assert!(!small.is_empty());
        assert!(small.is_subset_of(&BorelSet::full(&dom)));

        let comp = rasterize_set(
            &ShapeSpec::ComplementIn {
                shape: std::boxed::Box::new(ShapeSpec::centered_ball(1, 2.0)),
            },
            &dom,
        );
        assert!(comp.is_empty());

        let a = ShapeSpec::ball(&[-0.3, 0.0], 0.2);
        let b = ShapeSpec::ball(&[0.3, 0.1], 0.25);
        let u = rasterize_set(&ShapeSpec::Union { shapes: vec![a.clone(), b.clone()] }, &dom);
        let ua = rasterize_set(&a, &dom).union(&rasterize_set(&b, &dom));
        assert_eq!(u.mask(), ua.mask());
    }

    #[test]
    fn volumes() {
        let dom = disc(2.0 / 256.0);
        assert!((volume(&BorelSet::full(&dom)) - PI).abs() < 0.01 * PI);
        assert_eq!(volume(&BorelSet::empty(&dom)), 0.0);
        let ann = rasterize_set(&ShapeSpec::annulus(&[0.0, 0.0], 0.5, 1.0), &dom);
        let v = volume(&ann);
        assert!((v - 0.75 * PI).abs() < 0.01 * 0.75 * PI, "annulus {v}");
    }

    #[test]
    fn dilation_basics() {
        let dom = disc(2.0 / 64.0);
        let e = rasterize_set(&ShapeSpec::centered_ball(1, 0.3), &dom);
        assert_eq!(dilate(&e, 0).mask(), e.mask());
        assert!(dilate(&BorelSet::empty(&dom), 3).is_empty());
        let d1 = dilate(&e, 1);
        assert!(e.is_subset_of(&d1));
        assert!(d1.count() > e.count());
        assert!(d1.is_subset_of(&dilate(&e, 2)));
    }

    #[test]
    fn shrink_is_interior() {
        let dom = disc(2.0 / 64.0);
        let eps = 4.0 * dom.spacing();
        let m = dom.shrink(eps);
        for i in 0..dom.len() {
            if m[i] {
                let r = dom.norm2(i).sqrt();
                assert!(r + eps <= 1.0 + dom.spacing());
            }
        }
        assert!(m.iter().filter(|&&b| b).count() > 0);
    }

    #[test]
    fn volume_converges_under_refinement() {
        let coarse = volume(&BorelSet::full(&disc(2.0 / 64.0)));
        let fine = volume(&BorelSet::full(&disc(2.0 / 128.0)));
        let h = 2.0 / 64.0;
        assert!((coarse - fine).abs() < 4.0 * h);
    }
}
