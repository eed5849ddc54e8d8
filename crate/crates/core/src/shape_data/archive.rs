//! MSDF1 sample archives.
//!
//! Layout (all integers and floats little-endian):
//! magic `MSDF1\0`, u32 version, u32 m, u64 n_surface, u64 n_free, f32 bounds,
//! f32 eps_c, u64 seed; f32 blocks for surface positions (n_surface x 3),
//! normals (n_surface x 3), u16 surface category ids, f32 surface sdf vectors
//! (n_surface x m), free positions (n_free x 3), free sdf vectors
//! (n_free x m); then u64 contact count and per entry u64 free index, u16 set
//! size and that many u16 category ids.
//!
//! A category with no ground truth has NaN in its sdf column.

use std::path::Path;

use crate::error::{Error, Result};

pub const MSDF_MAGIC: &[u8; 6] = b"MSDF1\0";
pub const MSDF_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct SurfaceSamples {
    pub positions: Vec<[f32; 3]>,
    pub normals: Vec<[f32; 3]>,
    pub category: Vec<u16>,
    /// Row-major `len x m`.
    pub sdf: Vec<f32>,
}

#[derive(Clone, Debug, Default)]
pub struct FreeSamples {
    pub positions: Vec<[f32; 3]>,
    /// Row-major `len x m`.
    pub sdf: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactPoint {
    pub free_index: u64,
    /// Ascending category ids, at least two.
    pub gamma: Vec<u16>,
}

#[derive(Clone, Debug, Default)]
pub struct SampleArchive {
    pub m: usize,
    pub bounds: f32,
    pub eps_c: f32,
    pub seed: u64,
    pub surface: SurfaceSamples,
    pub free: FreeSamples,
    pub contacts: Vec<ContactPoint>,
}

impl SampleArchive {
    pub fn n_surface(&self) -> usize {
        self.surface.positions.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.positions.len()
    }

    pub fn surface_sdf(&self, i: usize) -> &[f32] {
        &self.surface.sdf[i * self.m..(i + 1) * self.m]
    }

    pub fn free_sdf(&self, i: usize) -> &[f32] {
        &self.free.sdf[i * self.m..(i + 1) * self.m]
    }

    /// Categories without ground truth.
    pub fn missing_categories(&self) -> Vec<usize> {
        (0..self.m)
            .filter(|&j| {
                !self.surface.category.iter().any(|&c| c as usize == j)
                    && (0..self.n_free()).all(|i| self.free_sdf(i)[j].is_nan())
            })
            .collect()
    }

    /// Drops every trace of `categories`: their surface rows are removed, their
    /// sdf columns become NaN and contacts are re-derived from what remains.
    pub fn masked(&self, categories: &[usize]) -> SampleArchive {
        let m = self.m;
        let hide = |j: usize| categories.contains(&j);
        let mut surface = SurfaceSamples::default();
        for i in 0..self.n_surface() {
            if hide(self.surface.category[i] as usize) {
                continue;
            }
            surface.positions.push(self.surface.positions[i]);
            surface.normals.push(self.surface.normals[i]);
            surface.category.push(self.surface.category[i]);
            surface
                .sdf
                .extend(self.surface_sdf(i).iter().enumerate().map(|(j, &v)| if hide(j) { f32::NAN } else { v }));
        }
        let mut free = self.free.clone();
        for (k, v) in free.sdf.iter_mut().enumerate() {
            if hide(k % m) {
                *v = f32::NAN;
            }
        }
        let mut out = SampleArchive {
            m,
            bounds: self.bounds,
            eps_c: self.eps_c,
            seed: self.seed,
            surface,
            free,
            contacts: Vec::new(),
        };
        out.contacts = super::extract_contact_set(&out, self.eps_c as f64);
        out
    }

    /// Bitwise equality, NaN payloads included.
    pub fn bit_eq(&self, other: &SampleArchive) -> bool {
        fn bits3(a: &[[f32; 3]]) -> Vec<u32> {
            a.iter().flatten().map(|v| v.to_bits()).collect()
        }
        fn bits(a: &[f32]) -> Vec<u32> {
            a.iter().map(|v| v.to_bits()).collect()
        }
        self.m == other.m
            && self.bounds.to_bits() == other.bounds.to_bits()
            && self.eps_c.to_bits() == other.eps_c.to_bits()
            && self.seed == other.seed
            && bits3(&self.surface.positions) == bits3(&other.surface.positions)
            && bits3(&self.surface.normals) == bits3(&other.surface.normals)
            && self.surface.category == other.surface.category
            && bits(&self.surface.sdf) == bits(&other.surface.sdf)
            && bits3(&self.free.positions) == bits3(&other.free.positions)
            && bits(&self.free.sdf) == bits(&other.free.sdf)
            && self.contacts == other.contacts
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 4 * (self.surface.sdf.len() + self.free.sdf.len()) + 26 * self.n_surface());
        out.extend_from_slice(MSDF_MAGIC);
        out.extend_from_slice(&MSDF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_surface() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_free() as u64).to_le_bytes());
        out.extend_from_slice(&self.bounds.to_le_bytes());
        out.extend_from_slice(&self.eps_c.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let f32s = |out: &mut Vec<u8>, vals: &mut dyn Iterator<Item = f32>| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        f32s(&mut out, &mut self.surface.positions.iter().flatten().copied());
        f32s(&mut out, &mut self.surface.normals.iter().flatten().copied());
        for c in &self.surface.category {
            out.extend_from_slice(&c.to_le_bytes());
        }
        f32s(&mut out, &mut self.surface.sdf.iter().copied());
        f32s(&mut out, &mut self.free.positions.iter().flatten().copied());
        f32s(&mut out, &mut self.free.sdf.iter().copied());
        out.extend_from_slice(&(self.contacts.len() as u64).to_le_bytes());
        for c in &self.contacts {
            out.extend_from_slice(&c.free_index.to_le_bytes());
            out.extend_from_slice(&(c.gamma.len() as u16).to_le_bytes());
            for g in &c.gamma {
                out.extend_from_slice(&g.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SampleArchive> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(6, "magic")?;
        if magic != MSDF_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {magic:?}"),
            });
        }
        let version_at = r.pos;
        let version = r.u32("version")?;
        if version != MSDF_VERSION {
            return Err(Error::Format {
                offset: version_at as u64,
                msg: format!("unsupported version {version}"),
            });
        }
        let m = r.u32("m")? as usize;
        let n_surface = r.count("n_surface")?;
        let n_free = r.count("n_free")?;
        let bounds = r.f32("bounds")?;
        let eps_c = r.f32("eps_c")?;
        let seed = r.u64("seed")?;
        let mut a = SampleArchive {
            m,
            bounds,
            eps_c,
            seed,
            ..Default::default()
        };
        a.surface.positions = r.vec3s(n_surface, "surface positions")?;
        a.surface.normals = r.vec3s(n_surface, "surface normals")?;
        a.surface.category = (0..n_surface).map(|_| r.u16("surface category")).collect::<Result<_>>()?;
        a.surface.sdf = r.f32s(n_surface * m, "surface sdf")?;
        a.free.positions = r.vec3s(n_free, "free positions")?;
        a.free.sdf = r.f32s(n_free * m, "free sdf")?;
        let n_contacts = r.count("contact count")?;
        for _ in 0..n_contacts {
            let at = r.pos;
            let free_index = r.u64("contact index")?;
            if free_index as usize >= n_free {
                return Err(Error::Format {
                    offset: at as u64,
                    msg: format!("contact index {free_index} out of range"),
                });
            }
            let size = r.u16("contact set size")? as usize;
            let gamma = (0..size).map(|_| r.u16("contact category")).collect::<Result<_>>()?;
            a.contacts.push(ContactPoint { free_index, gamma });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(a)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    /// A count whose payload must still fit in the remaining bytes.
    fn count(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)?;
        if n > self.bytes.len() as u64 {
            return Err(Error::Format {
                offset: at as u64,
                msg: format!("{what} {n} exceeds file size"),
            });
        }
        Ok(n as usize)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn vec3s(&mut self, n: usize, what: &str) -> Result<Vec<[f32; 3]>> {
        let flat = self.f32s(n * 3, what)?;
        Ok(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

pub fn write_archive(archive: &SampleArchive, path: &Path) -> Result<()> {
    std::fs::write(path, archive.to_bytes())?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<SampleArchive> {
    SampleArchive::from_bytes(&std::fs::read(path)?)
}
