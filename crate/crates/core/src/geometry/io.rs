//! Binary domain file (little-endian).
//!
//! ```text
//! header: "HFGE" | version u32 | dims 3xu32 | voxel_size f64 | origin 3xf64
//!         | site count u64 | inlet count u16 | outlet count u16
//! site:   coord 3xu32 | kind u8 | link count u8 | link count x (direction u8, q f32)
//! iolet:  center 3xf64 | normal 3xf64 | radius f64 | kind u8   (inlets, then outlets)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{GeometryError, IoletKind, IoletSpec, LatticeDomain, Site, SiteKind, WallLink};

pub const MAGIC: &[u8; 4] = b"HFGE";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_domain(domain: &LatticeDomain, path: &Path) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(domain))?;
    w.flush()?;
    Ok(())
}

pub fn read_domain(path: &Path) -> Result<LatticeDomain, GeometryError> {
    decode(&fs::read(path)?)
}

pub(crate) fn encode(domain: &LatticeDomain) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + domain.site_count() * 16);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in domain.dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b.extend_from_slice(&domain.voxel_size.to_le_bytes());
    for o in domain.origin {
        b.extend_from_slice(&o.to_le_bytes());
    }
    b.extend_from_slice(&(domain.site_count() as u64).to_le_bytes());
    b.extend_from_slice(&(domain.inlets.len() as u16).to_le_bytes());
    b.extend_from_slice(&(domain.outlets.len() as u16).to_le_bytes());
    for s in domain.sites() {
        for c in s.coord {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b.push(s.kind as u8);
        b.push(s.wall_links.len() as u8);
        for l in &s.wall_links {
            b.push(l.direction);
            b.extend_from_slice(&l.q.to_le_bytes());
        }
    }
    for io in domain.inlets.iter().chain(&domain.outlets) {
        for v in io.center.iter().chain(io.normal.iter()) {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&io.radius.to_le_bytes());
        b.push(io.kind as u8);
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let bytes = self.buf.get(self.pos..self.pos + N)?;
        self.pos += N;
        bytes.try_into().ok()
    }
    fn u8(&mut self) -> Option<u8> {
        self.take::<1>().map(|b| b[0])
    }
    fn u16(&mut self) -> Option<u16> {
        self.take().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Option<u64> {
        self.take().map(u64::from_le_bytes)
    }
    fn f32(&mut self) -> Option<f32> {
        self.take().map(f32::from_le_bytes)
    }
    fn f64(&mut self) -> Option<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub(crate) fn decode(buf: &[u8]) -> Result<LatticeDomain, GeometryError> {
    let header = |what: &str| GeometryError::CorruptHeader(format!("truncated at {what}"));
    let body = |what: String| GeometryError::CorruptBody(what);
    let mut r = Reader { buf, pos: 0 };

    let magic = r.take::<4>().ok_or_else(|| header("magic"))?;
    if &magic != MAGIC {
        return Err(GeometryError::CorruptHeader(format!("bad magic {magic:?}")));
    }
    let version = r.u32().ok_or_else(|| header("version"))?;
    if version != FORMAT_VERSION {
        return Err(GeometryError::FormatVersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let mut dims = [0u32; 3];
    for d in &mut dims {
        *d = r.u32().ok_or_else(|| header("dims"))?;
    }
    let voxel_size = r.f64().ok_or_else(|| header("voxel size"))?;
    let mut origin = [0.0; 3];
    for o in &mut origin {
        *o = r.f64().ok_or_else(|| header("origin"))?;
    }
    let n_sites = r.u64().ok_or_else(|| header("site count"))?;
    let n_in = r.u16().ok_or_else(|| header("inlet count"))?;
    let n_out = r.u16().ok_or_else(|| header("outlet count"))?;
    // Smallest possible site record is 14 bytes.
    if n_sites.saturating_mul(14) > (buf.len() - r.pos) as u64 {
        return Err(GeometryError::CorruptHeader(format!("site count {n_sites} exceeds file size {}", buf.len())));
    }

    let mut sites = Vec::with_capacity(n_sites as usize);
    for k in 0..n_sites {
        let trunc = || body(format!("truncated in site record {k}"));
        let coord = [r.u32().ok_or_else(trunc)?, r.u32().ok_or_else(trunc)?, r.u32().ok_or_else(trunc)?];
        let kind_byte = r.u8().ok_or_else(trunc)?;
        let kind = SiteKind::from_u8(kind_byte).ok_or_else(|| body(format!("site {k}: unknown kind {kind_byte}")))?;
        let n_links = r.u8().ok_or_else(trunc)?;
        let mut wall_links = Vec::with_capacity(n_links as usize);
        for _ in 0..n_links {
            let direction = r.u8().ok_or_else(trunc)?;
            let q = r.f32().ok_or_else(trunc)?;
            wall_links.push(WallLink { direction, q });
        }
        sites.push(Site { coord, kind, wall_links });
    }

    let mut inlets = Vec::with_capacity(n_in as usize);
    let mut outlets = Vec::with_capacity(n_out as usize);
    for k in 0..(n_in as usize + n_out as usize) {
        let trunc = || body(format!("truncated in iolet record {k}"));
        let mut v = [0.0; 7];
        for x in &mut v {
            *x = r.f64().ok_or_else(trunc)?;
        }
        let kind = match r.u8().ok_or_else(trunc)? {
            0 => IoletKind::VelocityInlet,
            1 => IoletKind::PressureOutlet,
            other => return Err(body(format!("iolet {k}: unknown kind {other}"))),
        };
        let spec = IoletSpec {
            center: Vector3::new(v[0], v[1], v[2]),
            normal: Vector3::new(v[3], v[4], v[5]),
            radius: v[6],
            kind,
        };
        if k < n_in as usize {
            inlets.push(spec);
        } else {
            outlets.push(spec);
        }
    }
    if r.pos != buf.len() {
        return Err(body(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    LatticeDomain::from_parts(dims, origin, voxel_size, sites, inlets, outlets)
}

#[cfg(test)]
/// Size in bytes of the fixed header.
pub(crate) const HEADER_LEN: usize = 4 + 4 + 12 + 8 + 24 + 8 + 2 + 2;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{voxelize_primitive, Primitive};

    fn tube() -> LatticeDomain {
        voxelize_primitive(&Primitive::Cylinder { radius: 10e-4, length: 40e-4 }, 1e-4).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let d = tube();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tube.hfge");
        write_domain(&d, &path).unwrap();
        let back = read_domain(&path).unwrap();
        assert_eq!(d, back);
        assert_eq!(encode(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn record_count_matches_site_count() {
        let d = tube();
        let bytes = encode(&d);
        let links = d.wall_link_count();
        let expected = HEADER_LEN + d.site_count() * 14 + links * 5 + 2 * 57;
        assert_eq!(bytes.len(), expected, "links {links} sites {}", d.site_count());
        let count = u64::from_le_bytes(bytes[52..60].try_into().unwrap());
        assert_eq!(count as usize, d.site_count());
    }

    #[test]
    fn truncated_header_is_corrupt() {
        let bytes = encode(&tube());
        for cut in [0, 3, 10, HEADER_LEN - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(GeometryError::CorruptHeader(_))), "cut {cut}");
        }
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(GeometryError::CorruptBody(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&tube());
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(GeometryError::FormatVersionMismatch { found: 7, expected: 1 })));
    }
}
