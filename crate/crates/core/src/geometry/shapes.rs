//! Analytic vessel primitives and their voxelization.

use nalgebra::Vector3;

use super::{Coord, GeometryError, IoletKind, IoletSpec, LatticeDomain, Site, SiteKind, WallLink};
use crate::lbm::d3q19::{C, Q};

type V3 = Vector3<f64>;

/// An analytic vessel lumen bounded by a wall surface and capped by iolet planes.
pub trait Surface {
    /// Implicit wall function: negative inside the lumen, zero on the wall.
    fn level(&self, p: &V3) -> f64;
    fn iolets(&self) -> Vec<IoletSpec>;
    /// Axis-aligned bounds of the capped lumen.
    fn bounds(&self) -> (V3, V3);
    /// Narrowest lumen diameter, m.
    fn min_diameter(&self) -> f64;

    /// Outward unit wall normal near `p`.
    fn normal(&self, p: &V3) -> V3 {
        let h = 1e-7 * self.min_diameter().max(1e-12);
        let mut g = V3::zeros();
        for d in 0..3 {
            let mut e = V3::zeros();
            e[d] = h;
            g[d] = self.level(&(p + e)) - self.level(&(p - e));
        }
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            g
        }
    }

    /// Whether a point lies strictly inside the capped lumen.
    fn is_fluid(&self, p: &V3) -> bool {
        self.level(p) < 0.0 && !self.iolets().iter().any(|io| io.excludes(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Straight tube along +z from the origin.
    Cylinder { radius: f64, length: f64 },
    /// Straight tube with a Gaussian narrowing at mid-length; `severity` is the
    /// fractional radius reduction at the throat.
    Stenosis { radius: f64, length: f64, severity: f64, width: f64 },
    /// Tube whose centerline is a circular arc in the x-z plane, starting at the
    /// origin heading +z and bending toward +x.
    TorusSegment { bend_radius: f64, tube_radius: f64, angle: f64 },
    /// Parent tube along +z splitting into two daughters at `±half_angle` in the x-z plane.
    YBifurcation { parent_radius: f64, parent_length: f64, daughter_radius: f64, daughter_length: f64, half_angle: f64 },
    /// Sealed rectangular box with corner at the origin, no iolets.
    ClosedBox { size: [f64; 3] },
}

/// A primitive placed in space by a translation.
#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub primitive: Primitive,
    pub offset: V3,
}

impl Vessel {
    pub fn new(primitive: Primitive) -> Self {
        Self { primitive, offset: V3::zeros() }
    }

    pub fn translated(mut self, by: V3) -> Self {
        self.offset += by;
        self
    }
}

fn segment_distance(p: &V3, a: &V3, b: &V3) -> (f64, f64) {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    ((p - (a + ab * t)).norm(), t)
}

impl Primitive {
    fn level(&self, p: &V3) -> f64 {
        match *self {
            Primitive::Cylinder { radius, .. } => (p.x * p.x + p.y * p.y).sqrt() - radius,
            Primitive::Stenosis { radius, length, severity, width } => {
                let z = p.z.clamp(0.0, length) - 0.5 * length;
                let r = radius * (1.0 - severity * (-(z / width).powi(2)).exp());
                (p.x * p.x + p.y * p.y).sqrt() - r
            }
            Primitive::TorusSegment { bend_radius, tube_radius, angle } => {
                let a = bend_radius - p.x;
                let b = p.z;
                let phi = b.atan2(a);
                let dist = if (0.0..=angle).contains(&phi) {
                    let rho = (a * a + b * b).sqrt() - bend_radius;
                    (rho * rho + p.y * p.y).sqrt()
                } else {
                    let start = V3::zeros();
                    let end = V3::new(bend_radius - bend_radius * angle.cos(), 0.0, bend_radius * angle.sin());
                    (p - start).norm().min((p - end).norm())
                };
                dist - tube_radius
            }
            Primitive::YBifurcation { parent_radius, daughter_radius, .. } => {
                let (j, e1, e2) = self.bifurcation_points();
                let parent = segment_distance(p, &V3::zeros(), &j).0 - parent_radius;
                let d1 = segment_distance(p, &j, &e1).0 - daughter_radius;
                let d2 = segment_distance(p, &j, &e2).0 - daughter_radius;
                parent.min(d1).min(d2)
            }
            Primitive::ClosedBox { size } => {
                (0..3).map(|d| (p[d] - 0.5 * size[d]).abs() - 0.5 * size[d]).fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    fn bifurcation_points(&self) -> (V3, V3, V3) {
        match *self {
            Primitive::YBifurcation { parent_length, daughter_length, half_angle, .. } => {
                let j = V3::new(0.0, 0.0, parent_length);
                let (s, c) = half_angle.sin_cos();
                (j, j + V3::new(s, 0.0, c) * daughter_length, j + V3::new(-s, 0.0, c) * daughter_length)
            }
            _ => unreachable!("not a bifurcation"),
        }
    }

    fn iolets(&self) -> Vec<IoletSpec> {
        let down = V3::new(0.0, 0.0, -1.0);
        let up = V3::new(0.0, 0.0, 1.0);
        let inlet = |c: V3, n: V3, r: f64| IoletSpec::new(c, n, r, IoletKind::VelocityInlet);
        let outlet = |c: V3, n: V3, r: f64| IoletSpec::new(c, n, r, IoletKind::PressureOutlet);
        match *self {
            Primitive::Cylinder { radius, length } | Primitive::Stenosis { radius, length, .. } => {
                vec![inlet(V3::zeros(), down, radius), outlet(V3::new(0.0, 0.0, length), up, radius)]
            }
            Primitive::TorusSegment { bend_radius, tube_radius, angle } => {
                let end = V3::new(bend_radius - bend_radius * angle.cos(), 0.0, bend_radius * angle.sin());
                let tangent = V3::new(angle.sin(), 0.0, angle.cos());
                vec![inlet(V3::zeros(), down, tube_radius), outlet(end, tangent, tube_radius)]
            }
            Primitive::YBifurcation { parent_radius, daughter_radius, .. } => {
                let (j, e1, e2) = self.bifurcation_points();
                vec![
                    inlet(V3::zeros(), down, parent_radius),
                    outlet(e1, (e1 - j).normalize(), daughter_radius),
                    outlet(e2, (e2 - j).normalize(), daughter_radius),
                ]
            }
            Primitive::ClosedBox { .. } => vec![],
        }
    }

    fn bounds(&self) -> (V3, V3) {
        match *self {
            Primitive::Cylinder { radius, length } | Primitive::Stenosis { radius, length, .. } => {
                (V3::new(-radius, -radius, 0.0), V3::new(radius, radius, length))
            }
            Primitive::TorusSegment { bend_radius, tube_radius, angle } => {
                // Sample the arc; pad by the tube radius.
                let mut lo = V3::repeat(f64::INFINITY);
                let mut hi = V3::repeat(f64::NEG_INFINITY);
                for k in 0..=256 {
                    let phi = angle * k as f64 / 256.0;
                    let p = V3::new(bend_radius - bend_radius * phi.cos(), 0.0, bend_radius * phi.sin());
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
                (lo - V3::repeat(tube_radius), hi + V3::repeat(tube_radius))
            }
            Primitive::YBifurcation { parent_radius, daughter_radius, .. } => {
                let (j, e1, e2) = self.bifurcation_points();
                let r = parent_radius.max(daughter_radius);
                let lo = V3::zeros().inf(&j).inf(&e1).inf(&e2) - V3::repeat(r);
                let hi = V3::zeros().sup(&j).sup(&e1).sup(&e2) + V3::repeat(r);
                (V3::new(lo.x, lo.y, 0.0), hi)
            }
            Primitive::ClosedBox { size } => (V3::zeros(), V3::new(size[0], size[1], size[2])),
        }
    }

    fn min_diameter(&self) -> f64 {
        match *self {
            Primitive::Cylinder { radius, .. } => 2.0 * radius,
            Primitive::Stenosis { radius, severity, .. } => 2.0 * radius * (1.0 - severity),
            Primitive::TorusSegment { tube_radius, .. } => 2.0 * tube_radius,
            Primitive::YBifurcation { parent_radius, daughter_radius, .. } => 2.0 * parent_radius.min(daughter_radius),
            Primitive::ClosedBox { size } => size.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

impl Surface for Vessel {
    fn level(&self, p: &V3) -> f64 {
        self.primitive.level(&(p - self.offset))
    }

    fn normal(&self, p: &V3) -> V3 {
        let local = p - self.offset;
        match self.primitive {
            Primitive::Cylinder { .. } => {
                let n = V3::new(local.x, local.y, 0.0);
                let norm = n.norm();
                if norm > 0.0 {
                    n / norm
                } else {
                    n
                }
            }
            _ => {
                let h = 1e-7 * self.min_diameter();
                let mut g = V3::zeros();
                for d in 0..3 {
                    let mut e = V3::zeros();
                    e[d] = h;
                    g[d] = self.primitive.level(&(local + e)) - self.primitive.level(&(local - e));
                }
                g.normalize()
            }
        }
    }

    fn iolets(&self) -> Vec<IoletSpec> {
        self.primitive
            .iolets()
            .into_iter()
            .map(|mut io| {
                io.center += self.offset;
                io
            })
            .collect()
    }

    fn bounds(&self) -> (V3, V3) {
        let (lo, hi) = self.primitive.bounds();
        (lo + self.offset, hi + self.offset)
    }

    fn min_diameter(&self) -> f64 {
        self.primitive.min_diameter()
    }
}

/// Grid placement: site `(i, j, k)` sits at `origin + voxel_size * (i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub dims: [u32; 3],
    pub voxel_size: f64,
}

impl GridSpec {
    /// Grid whose site centers are the world voxel centers `(n + 1/2) * voxel_size`
    /// covering `bounds` with a one-voxel margin.
    pub fn covering(bounds: (V3, V3), voxel_size: f64) -> Self {
        let (lo, hi) = bounds;
        let mut origin = [0.0; 3];
        let mut dims = [0u32; 3];
        for d in 0..3 {
            let first = (lo[d] / voxel_size - 0.5).floor() as i64 - 1;
            let last = (hi[d] / voxel_size - 0.5).ceil() as i64 + 1;
            origin[d] = (first as f64 + 0.5) * voxel_size;
            dims[d] = (last - first + 1) as u32;
        }
        Self { origin, dims, voxel_size }
    }

    pub fn position(&self, c: [i64; 3]) -> V3 {
        V3::new(
            self.origin[0] + c[0] as f64 * self.voxel_size,
            self.origin[1] + c[1] as f64 * self.voxel_size,
            self.origin[2] + c[2] as f64 * self.voxel_size,
        )
    }
}

/// Voxelizes a primitive at the given voxel size on the default aligned grid.
pub fn voxelize_primitive(shape: &Primitive, voxel_size: f64) -> Result<LatticeDomain, GeometryError> {
    voxelize(&Vessel::new(shape.clone()), voxel_size)
}

pub fn voxelize(surface: &dyn Surface, voxel_size: f64) -> Result<LatticeDomain, GeometryError> {
    let grid = GridSpec::covering(surface.bounds(), voxel_size);
    voxelize_on_grid(surface, &grid)
}

/// Classifies sites of `grid` against `surface` and computes wall links.
pub fn voxelize_on_grid(surface: &dyn Surface, grid: &GridSpec) -> Result<LatticeDomain, GeometryError> {
    let diameter_voxels = surface.min_diameter() / grid.voxel_size;
    if diameter_voxels < 4.0 {
        return Err(GeometryError::ResolutionTooCoarse { diameter_voxels });
    }
    let iolets = surface.iolets();
    let fluid_at = |c: [i64; 3]| -> bool {
        let p = grid.position(c);
        surface.level(&p) < 0.0 && !iolets.iter().any(|io| io.excludes(&p))
    };

    let mut coords: Vec<Coord> = Vec::new();
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                if fluid_at([i as i64, j as i64, k as i64]) {
                    coords.push([i, j, k]);
                }
            }
        }
    }
    let set: std::collections::HashSet<Coord> = coords.iter().copied().collect();
    let has_fluid_neighbor = |c: &Coord| {
        (1..Q).any(|i| {
            let n = [c[0] as i64 + C[i][0] as i64, c[1] as i64 + C[i][1] as i64, c[2] as i64 + C[i][2] as i64];
            n.iter().all(|&v| v >= 0) && set.contains(&[n[0] as u32, n[1] as u32, n[2] as u32])
        })
    };
    // Isolated sites cannot carry flow.
    let sites: Vec<Site> = coords
        .iter()
        .filter(|c| has_fluid_neighbor(c))
        .map(|&coord| Site { coord, kind: SiteKind::Fluid, wall_links: vec![] })
        .collect();

    let (inlets, outlets): (Vec<_>, Vec<_>) = iolets.iter().partition(|io| io.kind == IoletKind::VelocityInlet);
    let mut domain =
        LatticeDomain::from_parts_unchecked(grid.dims, grid.origin, grid.voxel_size, sites, inlets, outlets);
    compute_wall_links(&mut domain, surface)?;
    domain.validate()?;
    Ok(domain)
}

/// Outcome of tracing one fluid-to-non-fluid link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkCrossing {
    Wall(f64),
    Iolet(usize),
}

/// Traces the link from the fluid site at `p` along direction `i` (length `|c_i| dx`).
fn trace_link(surface: &dyn Surface, iolets: &[IoletSpec], p: &V3, i: usize, dx: f64) -> Option<LinkCrossing> {
    let step = V3::new(C[i][0] as f64, C[i][1] as f64, C[i][2] as f64) * dx;
    let at = |t: f64| surface.level(&(p + step * t));

    // First sign change of the wall function along the link.
    const SAMPLES: usize = 32;
    let mut t_wall = None;
    let mut prev = 0.0;
    for k in 1..=SAMPLES {
        let t = k as f64 / SAMPLES as f64;
        if at(t) >= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if at(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            t_wall = Some(hi);
            break;
        }
        prev = t;
    }

    let mut t_cap: Option<(f64, usize)> = None;
    for (k, io) in iolets.iter().enumerate() {
        let d0 = io.signed_distance(p);
        let d1 = io.signed_distance(&(p + step));
        if d0 < 0.0 && d1 >= 0.0 {
            let t = d0 / (d0 - d1);
            if io.lateral_distance(&(p + step * t)) <= super::CAP_REACH * io.radius
                && t_cap.is_none_or(|(best, _)| t < best)
            {
                t_cap = Some((t, k));
            }
        }
    }

    match (t_wall, t_cap) {
        (Some(w), Some((c, k))) => Some(if c < w { LinkCrossing::Iolet(k) } else { LinkCrossing::Wall(w) }),
        (Some(w), None) => Some(LinkCrossing::Wall(w)),
        (None, Some((_, k))) => Some(LinkCrossing::Iolet(k)),
        (None, None) => None,
    }
}

/// Full-precision wall fractions for every fluid-to-solid link, as
/// `(site index, direction, q)`, in canonical order.
pub fn wall_link_fractions(
    domain: &LatticeDomain,
    surface: &dyn Surface,
) -> Result<Vec<(usize, usize, f64)>, GeometryError> {
    let iolets = surface.iolets();
    let mut out = Vec::new();
    for (si, site) in domain.sites().iter().enumerate() {
        let p = domain.position(site.coord);
        for i in 1..Q {
            if domain.neighbor_index(site.coord, i).is_some() {
                continue;
            }
            match trace_link(surface, &iolets, &p, i, domain.voxel_size) {
                Some(LinkCrossing::Wall(q)) => out.push((si, i, q)),
                Some(LinkCrossing::Iolet(_)) => {}
                None => return Err(GeometryError::SurfaceMiss { coord: site.coord, direction: i }),
            }
        }
    }
    Ok(out)
}

/// Populates wall links (stored as `f32`) and reclassifies site kinds.
pub fn compute_wall_links(domain: &mut LatticeDomain, surface: &dyn Surface) -> Result<(), GeometryError> {
    let iolets = surface.iolets();
    let dx = domain.voxel_size;
    let mut updates = Vec::with_capacity(domain.site_count());
    for site in domain.sites() {
        let p = domain.position(site.coord);
        let mut links = Vec::new();
        let mut iolet_kind = None;
        for i in 1..Q {
            if domain.neighbor_index(site.coord, i).is_some() {
                continue;
            }
            match trace_link(surface, &iolets, &p, i, dx) {
                Some(LinkCrossing::Wall(q)) => {
                    links.push(WallLink { direction: i as u8, q: (q as f32).max(f32::MIN_POSITIVE) })
                }
                Some(LinkCrossing::Iolet(k)) => iolet_kind = Some(iolets[k].kind),
                None => return Err(GeometryError::SurfaceMiss { coord: site.coord, direction: i }),
            }
        }
        let kind = match iolet_kind {
            Some(IoletKind::VelocityInlet) => SiteKind::Inlet,
            Some(IoletKind::PressureOutlet) => SiteKind::Outlet,
            None if !links.is_empty() => SiteKind::WallFluid,
            None => SiteKind::Fluid,
        };
        updates.push((kind, links));
    }
    domain.replace_site_data(updates);
    Ok(())
}

impl LatticeDomain {
    pub(crate) fn from_parts_unchecked(
        dims: [u32; 3],
        origin: [f64; 3],
        voxel_size: f64,
        mut sites: Vec<Site>,
        inlets: Vec<IoletSpec>,
        outlets: Vec<IoletSpec>,
    ) -> Self {
        sites.sort_by_key(|s| [s.coord[2], s.coord[1], s.coord[0]]);
        let index = sites.iter().enumerate().map(|(i, s)| (s.coord, i)).collect();
        Self { dims, origin, voxel_size, sites, index, inlets, outlets }
    }

    fn replace_site_data(&mut self, updates: Vec<(SiteKind, Vec<WallLink>)>) {
        for (site, (kind, links)) in self.sites.iter_mut().zip(updates) {
            site.kind = kind;
            site.wall_links = links;
        }
    }
}
