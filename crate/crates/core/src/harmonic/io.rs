//! Versioned binary serialization of the calibrated surrogates, keyed by
//! (law hash, k, lattice spec) so an expensive calibration is reused only
//! when it actually matches the requested configuration.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::increments::IncrementLaw;
use crate::rng::RngStream;

use super::vcache::GapLattice;
use super::{HarmonicContext, HarmonicError, SurrogateConfig, UCache, VCache};

const MAGIC: &[u8; 4] = b"OWHC";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarmonicError> {
        if self.pos + n > self.buf.len() {
            return Err(HarmonicError::CacheIo("truncated cache file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, HarmonicError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, HarmonicError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, HarmonicError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, HarmonicError> {
        let n = self.u64()? as usize;
        if n > 1 << 28 {
            return Err(HarmonicError::CacheIo("implausible array length".into()));
        }
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(self.f64()?);
        }
        Ok(v)
    }
}

impl HarmonicContext {
    pub fn save(&self, path: &Path) -> Result<(), HarmonicError> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u64(self.law.law_hash());
        w.u32(self.k as u32);
        w.u32(self.vcache.m as u32);
        w.f64s(&self.vcache.lattice.axes);
        w.f64s(&self.vcache.ratio);
        w.f64s(&self.ucache.lattice.axes);
        w.f64s(&self.ucache.log_ratio);
        w.f64(self.beta_global);
        let mut f = fs::File::create(path)
            .map_err(|e| HarmonicError::CacheIo(format!("create {}: {e}", path.display())))?;
        f.write_all(&w.buf)
            .map_err(|e| HarmonicError::CacheIo(format!("write {}: {e}", path.display())))?;
        Ok(())
    }

    /// Load a previously saved calibration. Fails with `CacheKey` when the
    /// file was built for a different law, dimension or lattice.
    pub fn load(
        path: &Path,
        law: &IncrementLaw,
        k: usize,
        cfg: &SurrogateConfig,
    ) -> Result<Self, HarmonicError> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .map_err(|e| HarmonicError::CacheIo(format!("open {}: {e}", path.display())))?
            .read_to_end(&mut buf)
            .map_err(|e| HarmonicError::CacheIo(format!("read {}: {e}", path.display())))?;
        let mut r = Reader::new(&buf);
        if r.take(4)? != MAGIC {
            return Err(HarmonicError::CacheIo("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(HarmonicError::CacheKey(format!(
                "cache version {version}, expected {VERSION}"
            )));
        }
        let law_hash = r.u64()?;
        if law_hash != law.law_hash() {
            return Err(HarmonicError::CacheKey(
                "cache was built for a different increment law".into(),
            ));
        }
        let file_k = r.u32()? as usize;
        if file_k != k {
            return Err(HarmonicError::CacheKey(format!(
                "cache was built for k = {file_k}, requested k = {k}"
            )));
        }
        let m = r.u32()? as usize;
        let v_axes = r.f64s()?;
        let v_ratio = r.f64s()?;
        let u_axes = r.f64s()?;
        let u_ratio = r.f64s()?;
        let beta_global = r.f64()?;
        if v_axes != cfg.v.axes || u_axes != cfg.u.axes {
            return Err(HarmonicError::CacheKey(
                "cache lattice differs from the requested configuration".into(),
            ));
        }
        let v_lat = GapLattice::new(v_axes, m - 1);
        if v_ratio.len() != v_lat.node_count() {
            return Err(HarmonicError::CacheIo("V lattice size mismatch".into()));
        }
        let u_lat = GapLattice::new(u_axes, k - 1);
        if u_ratio.len() != u_lat.node_count() {
            return Err(HarmonicError::CacheIo("U lattice size mismatch".into()));
        }
        Ok(Self {
            law: law.clone(),
            k,
            vcache: VCache {
                m,
                lattice: v_lat,
                ratio: v_ratio,
                law_hash,
                diagnostics: Default::default(),
            },
            ucache: UCache {
                k,
                lattice: u_lat,
                log_ratio: u_ratio,
                law_hash,
            },
            beta_global,
        })
    }

    /// Load when a matching calibration exists, otherwise build and save.
    pub fn load_or_build(
        path: &Path,
        law: &IncrementLaw,
        k: usize,
        cfg: &SurrogateConfig,
        stream: RngStream,
    ) -> Result<Self, HarmonicError> {
        if path.exists() {
            match Self::load(path, law, k, cfg) {
                Ok(ctx) => return Ok(ctx),
                Err(HarmonicError::CacheKey(_)) | Err(HarmonicError::CacheIo(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let ctx = Self::build(law, k, cfg, stream)?;
        if let Some(dir) = path.parent() {
            let _ = fs::create_dir_all(dir);
        }
        ctx.save(path)?;
        Ok(ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::{UCacheConfig, VCacheConfig};
    use crate::increments::build_law;

    fn tiny_cfg() -> SurrogateConfig {
        SurrogateConfig {
            v: VCacheConfig {
                axes: vec![0.0, 0.8, 2.0, 5.0, 12.0, 30.0],
                samples_per_node: 3_000,
                far_min_gap: 25.0,
                spot_checks: 0,
                ..Default::default()
            },
            u: UCacheConfig {
                axes: vec![0.0, 1.0, 3.0, 8.0, 20.0],
                samples_per_node: 2_000,
                truncation: 256,
            },
            anchor_samples: 20_000,
            anchor_truncation: 64,
        }
    }

    #[test]
    fn save_load_roundtrip_and_key_validation() {
        let law = build_law(2.5, 0.5, 0.5, 1.0).unwrap();
        let cfg = tiny_cfg();
        let ctx =
            HarmonicContext::build(&law, 4, &cfg, RngStream::named(51, "io")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surrogates.owhc");
        ctx.save(&path).unwrap();

        let loaded = HarmonicContext::load(&path, &law, 4, &cfg).unwrap();
        let x = [0.0, 1.0, 2.5, 4.0];
        assert_eq!(ctx.v(&x).to_bits(), loaded.v(&x).to_bits());
        assert_eq!(ctx.u(&x).to_bits(), loaded.u(&x).to_bits());
        assert_eq!(ctx.beta_global.to_bits(), loaded.beta_global.to_bits());

        // wrong law is rejected
        let other = build_law(2.6, 0.5, 0.5, 1.0).unwrap();
        assert!(matches!(
            HarmonicContext::load(&path, &other, 4, &cfg),
            Err(HarmonicError::CacheKey(_))
        ));
        // wrong lattice is rejected
        let mut cfg2 = cfg.clone();
        cfg2.v.axes = vec![0.0, 1.0, 4.0, 16.0];
        assert!(matches!(
            HarmonicContext::load(&path, &law, 4, &cfg2),
            Err(HarmonicError::CacheKey(_))
        ));
    }
}
