//! Sparse voxel domains: site classification, wall-link fractions and the
//! on-disk domain format.

mod io;
mod shapes;

pub use io::{read_domain, write_domain, FORMAT_VERSION, MAGIC};
pub use shapes::{
    compute_wall_links, voxelize, voxelize_on_grid, voxelize_primitive, wall_link_fractions, GridSpec, LinkCrossing,
    Primitive, Surface, Vessel,
};

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

use crate::lbm::d3q19::{C, Q};

pub type Coord = [u32; 3];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("vessel diameter {diameter_voxels:.2} voxels is below the 4-voxel minimum")]
    ResolutionTooCoarse { diameter_voxels: f64 },
    #[error("fluid site {coord:?} has a solid link in direction {direction} without a surface crossing")]
    SurfaceMiss { coord: Coord, direction: usize },
    #[error("domain has no fluid sites")]
    Empty,
    #[error("{kind} plane {index} does not intersect any fluid site")]
    EmptyIolet { kind: &'static str, index: usize },
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("unsupported geometry format version {found} (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt geometry header: {0}")]
    CorruptHeader(String),
    #[error("corrupt geometry body: {0}")]
    CorruptBody(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SiteKind {
    Fluid = 0,
    WallFluid = 1,
    Inlet = 2,
    Outlet = 3,
    Solid = 4,
}

impl SiteKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Self::Fluid,
            1 => Self::WallFluid,
            2 => Self::Inlet,
            3 => Self::Outlet,
            4 => Self::Solid,
            _ => return None,
        })
    }

    pub fn is_fluid(self) -> bool {
        self != Self::Solid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum IoletKind {
    VelocityInlet = 0,
    PressureOutlet = 1,
}

/// A circular inlet or outlet plane. The normal points out of the fluid domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoletSpec {
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
    pub kind: IoletKind,
}

impl IoletSpec {
    pub fn new(center: Vector3<f64>, normal: Vector3<f64>, radius: f64, kind: IoletKind) -> Self {
        Self { center, normal: normal.normalize(), radius, kind }
    }

    /// Signed distance along the outward normal.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - self.center).dot(&self.normal)
    }

    /// Distance from the plane axis (the line through the center along the normal).
    pub fn lateral_distance(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.center;
        (d - self.normal * d.dot(&self.normal)).norm()
    }

    /// Whether the cap of this plane removes `p` from the fluid region.
    pub(crate) fn excludes(&self, p: &Vector3<f64>) -> bool {
        self.signed_distance(p) >= 0.0 && self.lateral_distance(p) <= CAP_REACH * self.radius
    }
}

/// Caps act on points within this many radii of the plane axis.
pub(crate) const CAP_REACH: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IoletRef {
    pub kind: IoletKind,
    pub index: usize,
}

impl PartialOrd for IoletKind {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for IoletKind {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

/// Fluid-to-solid link with its wall-crossing fraction `q` in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallLink {
    pub direction: u8,
    pub q: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub coord: Coord,
    pub kind: SiteKind,
    /// Sorted by direction.
    pub wall_links: Vec<WallLink>,
}

impl Site {
    pub fn wall_link(&self, direction: usize) -> Option<f32> {
        self.wall_links.iter().find(|l| l.direction as usize == direction).map(|l| l.q)
    }
}

/// How a fluid site connects along one lattice direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Fluid(usize),
    Wall(f32),
    Iolet(IoletRef),
}

/// Sparse voxel domain. Only fluid sites are stored; everything else is solid.
#[derive(Debug, Clone)]
pub struct LatticeDomain {
    pub dims: [u32; 3],
    /// Physical position of the center of site (0, 0, 0).
    pub origin: [f64; 3],
    pub voxel_size: f64,
    sites: Vec<Site>,
    index: HashMap<Coord, usize>,
    pub inlets: Vec<IoletSpec>,
    pub outlets: Vec<IoletSpec>,
}

impl PartialEq for LatticeDomain {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.origin == other.origin
            && self.voxel_size == other.voxel_size
            && self.sites == other.sites
            && self.inlets == other.inlets
            && self.outlets == other.outlets
    }
}

impl LatticeDomain {
    /// Assembles a domain; sites are sorted into canonical (z, y, x) order.
    pub fn from_parts(
        dims: [u32; 3],
        origin: [f64; 3],
        voxel_size: f64,
        mut sites: Vec<Site>,
        inlets: Vec<IoletSpec>,
        outlets: Vec<IoletSpec>,
    ) -> Result<Self, GeometryError> {
        sites.sort_by_key(|s| [s.coord[2], s.coord[1], s.coord[0]]);
        for s in &mut sites {
            s.wall_links.sort_by_key(|l| l.direction);
        }
        let mut index = HashMap::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if index.insert(s.coord, i).is_some() {
                return Err(GeometryError::Invalid(format!("duplicate site {:?}", s.coord)));
            }
        }
        let domain = Self { dims, origin, voxel_size, sites, index, inlets, outlets };
        domain.validate()?;
        Ok(domain)
    }

    /// Every site of a `dims` box is fluid; no walls or iolets recorded.
    pub fn full_box(dims: [u32; 3], voxel_size: f64) -> Result<Self, GeometryError> {
        let mut sites = Vec::with_capacity((dims[0] * dims[1] * dims[2]) as usize);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    sites.push(Site { coord: [x, y, z], kind: SiteKind::Fluid, wall_links: vec![] });
                }
            }
        }
        Self::from_parts(dims, [0.0; 3], voxel_size, sites, vec![], vec![])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.sites.is_empty() {
            return Err(GeometryError::Empty);
        }
        if !(self.voxel_size > 0.0) {
            return Err(GeometryError::Invalid(format!("voxel size {}", self.voxel_size)));
        }
        for s in &self.sites {
            if !s.kind.is_fluid() {
                return Err(GeometryError::Invalid(format!("solid site {:?} stored", s.coord)));
            }
            if (0..3).any(|d| s.coord[d] >= self.dims[d]) {
                return Err(GeometryError::Invalid(format!("site {:?} outside dims", s.coord)));
            }
            for l in &s.wall_links {
                if !(l.q > 0.0 && l.q <= 1.0) || l.direction == 0 || l.direction as usize >= Q {
                    return Err(GeometryError::Invalid(format!("bad wall link {:?} at {:?}", l, s.coord)));
                }
                if self.neighbor_index(s.coord, l.direction as usize).is_some() {
                    return Err(GeometryError::Invalid(format!(
                        "wall link toward fluid at {:?} dir {}",
                        s.coord, l.direction
                    )));
                }
            }
        }
        for (kind, list) in [("inlet", &self.inlets), ("outlet", &self.outlets)] {
            for (i, spec) in list.iter().enumerate() {
                if !(spec.radius > 0.0) || (spec.normal.norm() - 1.0).abs() > 1e-9 {
                    return Err(GeometryError::Invalid(format!("{kind} {i} malformed")));
                }
                let r = IoletRef { kind: spec.kind, index: i };
                if self.iolet_sites(r).is_empty() {
                    return Err(GeometryError::EmptyIolet { kind, index: i });
                }
            }
        }
        Ok(())
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn site_index(&self, coord: Coord) -> Option<usize> {
        self.index.get(&coord).copied()
    }

    pub fn position(&self, coord: Coord) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + coord[0] as f64 * self.voxel_size,
            self.origin[1] + coord[1] as f64 * self.voxel_size,
            self.origin[2] + coord[2] as f64 * self.voxel_size,
        )
    }

    /// Neighbor coordinate along direction `i`, if inside the grid.
    pub fn neighbor_coord(&self, coord: Coord, i: usize) -> Option<Coord> {
        let mut out = [0u32; 3];
        for d in 0..3 {
            let v = coord[d] as i64 + C[i][d] as i64;
            if v < 0 || v >= self.dims[d] as i64 {
                return None;
            }
            out[d] = v as u32;
        }
        Some(out)
    }

    pub fn neighbor_index(&self, coord: Coord, i: usize) -> Option<usize> {
        self.neighbor_coord(coord, i).and_then(|c| self.site_index(c))
    }

    pub fn iolet(&self, r: IoletRef) -> &IoletSpec {
        match r.kind {
            IoletKind::VelocityInlet => &self.inlets[r.index],
            IoletKind::PressureOutlet => &self.outlets[r.index],
        }
    }

    /// The iolet a site belongs to, for inlet and outlet sites (nearest plane of that kind).
    pub fn iolet_of_site(&self, site: usize) -> Option<IoletRef> {
        let s = &self.sites[site];
        let (kind, list) = match s.kind {
            SiteKind::Inlet => (IoletKind::VelocityInlet, &self.inlets),
            SiteKind::Outlet => (IoletKind::PressureOutlet, &self.outlets),
            _ => return None,
        };
        let p = self.position(s.coord);
        list.iter()
            .enumerate()
            .map(|(i, spec)| (i, (p - spec.center).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(index, _)| IoletRef { kind, index })
    }

    /// Sites attached to an iolet, in canonical site order.
    pub fn iolet_sites(&self, r: IoletRef) -> Vec<usize> {
        let wanted = match r.kind {
            IoletKind::VelocityInlet => SiteKind::Inlet,
            IoletKind::PressureOutlet => SiteKind::Outlet,
        };
        (0..self.sites.len()).filter(|&i| self.sites[i].kind == wanted && self.iolet_of_site(i) == Some(r)).collect()
    }

    /// Classifies the link from `site` along direction `i`.
    pub fn link(&self, site: usize, i: usize) -> Link {
        let s = &self.sites[site];
        if let Some(n) = self.neighbor_index(s.coord, i) {
            return Link::Fluid(n);
        }
        if let Some(q) = s.wall_link(i) {
            return Link::Wall(q);
        }
        match self.iolet_of_site(site) {
            Some(r) => Link::Iolet(r),
            // Unrecorded solid link on a non-iolet site: treat as half-way wall.
            None => Link::Wall(0.5),
        }
    }

    pub fn wall_link_count(&self) -> usize {
        self.sites.iter().map(|s| s.wall_links.len()).sum()
    }

    /// Sites adjacent to a wall (wall-fluid plus iolet rim sites with wall links).
    pub fn wall_sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sites.len()).filter(|&i| !self.sites[i].wall_links.is_empty())
    }

    /// Unit wall normal estimated from the solid-link directions of a site,
    /// each weighted by `1/q` so nearer crossings dominate. Points out of the fluid.
    pub fn link_normal(&self, site: usize) -> Option<Vector3<f64>> {
        let s = &self.sites[site];
        let mut n = Vector3::zeros();
        for l in &s.wall_links {
            let c = C[l.direction as usize];
            let v = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
            n += v.normalize() / l.q as f64;
        }
        let norm = n.norm();
        (norm > 1e-12).then(|| n / norm)
    }
}
