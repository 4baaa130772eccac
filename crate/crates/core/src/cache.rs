//! On-disk cache of integrated window pmfs.
//!
//! Entries are keyed by a SHA-256 digest of everything that determines the
//! integration result. Files hold little-endian `f64` arrays and are written
//! through a temporary file plus rename, so readers never see partial data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::mvn::CellIntegration;
use crate::pmf::Pmf;
use crate::solver::Solution;

pub const CACHE_DIR_ENV: &str = "PRIVMAP_CACHE_DIR";
const MAGIC: &[u8; 8] = b"PMAPWIN1";
const SOLUTION_MAGIC: &[u8; 8] = b"PMAPSOL1";

#[derive(Debug, Clone)]
pub struct WindowCache {
    dir: PathBuf,
}

impl WindowCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Uses `$PRIVMAP_CACHE_DIR` when set, else `fallback`.
    pub fn from_env_or(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(fallback),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn load(&self, key: &str) -> Result<Option<CellIntegration>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        Ok(decode(&bytes))
    }

    pub fn store(&self, key: &str, cells: &CellIntegration) -> Result<()> {
        self.write_atomic(key, &encode(cells))
    }
}

impl WindowCache {
    pub fn load_solutions(&self, key: &str) -> Result<Option<Vec<Solution>>> {
        match fs::read(self.path_for(key)) {
            Ok(b) => Ok(decode_solutions(&b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn store_solutions(&self, key: &str, sols: &[Solution]) -> Result<()> {
        self.write_atomic(key, &encode_solutions(sols))
    }

    fn write_atomic(&self, key: &str, bytes: &[u8]) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!("{key}.tmp{}", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path_for(key))?;
        Ok(())
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn cache_key<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn encode(c: &CellIntegration) -> Vec<u8> {
    let n = c.raw.len();
    let mut out = Vec::with_capacity(24 + 24 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(c.budget_exceeded as u64).to_le_bytes());
    for v in c.pmf.probs().iter().chain(&c.raw).chain(&c.errors) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<CellIntegration> {
    let header = bytes.get(..24)?;
    if &header[..8] != MAGIC {
        return None;
    }
    let word = |i: usize| u64::from_le_bytes(header[i..i + 8].try_into().unwrap()) as usize;
    let n = word(8);
    let budget_exceeded = word(16);
    let body = bytes.get(24..)?;
    if body.len() != 24 * n {
        return None;
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let pmf: Vec<f64> = vals.by_ref().take(n).collect();
    let raw: Vec<f64> = vals.by_ref().take(n).collect();
    let errors: Vec<f64> = vals.collect();
    Some(CellIntegration {
        pmf: Pmf::new(pmf).ok()?,
        raw,
        errors,
        budget_exceeded,
    })
}

fn encode_solutions(sols: &[Solution]) -> Vec<u8> {
    let n = sols.first().map_or(0, |s| s.q_star.len());
    let mut out = Vec::new();
    out.extend_from_slice(SOLUTION_MAGIC);
    out.extend_from_slice(&(sols.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for s in sols {
        for v in s.q_star.probs().iter().chain([&s.objective, &s.distortion, &s.gap]) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(s.iterations as u64).to_le_bytes());
        out.extend_from_slice(&(s.converged as u64).to_le_bytes());
    }
    out
}

fn decode_solutions(bytes: &[u8]) -> Option<Vec<Solution>> {
    if bytes.get(..8)? != SOLUTION_MAGIC {
        return None;
    }
    let mut words = bytes[8..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
    let count = words.next()? as usize;
    let n = words.next()? as usize;
    if bytes.len() != 24 + count * 8 * (n + 5) {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let q: Vec<f64> = words.by_ref().take(n).map(f64::from_bits).collect();
        let objective = f64::from_bits(words.next()?);
        let distortion = f64::from_bits(words.next()?);
        let gap = f64::from_bits(words.next()?);
        let iterations = words.next()? as usize;
        let converged = words.next()? != 0;
        out.push(Solution {
            q_star: Pmf::new(q).ok()?,
            objective,
            distortion,
            gap,
            iterations,
            converged,
        });
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CellIntegration {
        CellIntegration {
            pmf: Pmf::new(vec![0.25, 0.75]).unwrap(),
            raw: vec![0.2500001, 0.7499999],
            errors: vec![1e-7, 2e-7],
            budget_exceeded: 1,
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WindowCache::new(dir.path());
        assert!(cache.load("abc").unwrap().is_none());
        cache.store("abc", &sample()).unwrap();
        assert_eq!(cache.load("abc").unwrap().unwrap(), sample());
    }

    #[test]
    fn solutions_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WindowCache::new(dir.path());
        let sols = vec![
            Solution {
                q_star: Pmf::new(vec![0.5, 0.5]).unwrap(),
                objective: 0.1,
                distortion: 1.5,
                gap: 1e-7,
                iterations: 12,
                converged: true,
            },
            Solution {
                q_star: Pmf::new(vec![1.0, 0.0]).unwrap(),
                objective: 0.3,
                distortion: 0.0,
                gap: 2e-3,
                iterations: 20000,
                converged: false,
            },
        ];
        cache.store_solutions("s", &sols).unwrap();
        assert_eq!(cache.load_solutions("s").unwrap().unwrap(), sols);
        cache.store("w", &sample()).unwrap();
        assert!(cache.load_solutions("w").unwrap().is_none());
    }

    #[test]
    fn corrupt_entries_are_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WindowCache::new(dir.path());
        fs::write(cache.path_for("bad"), b"PMAPWIN1garbage").unwrap();
        assert!(cache.load("bad").unwrap().is_none());
    }

    #[test]
    fn key_depends_on_content() {
        let a = cache_key(&(1, "x")).unwrap();
        assert_eq!(a, cache_key(&(1, "x")).unwrap());
        assert_ne!(a, cache_key(&(2, "x")).unwrap());
        assert_eq!(a.len(), 64);
    }
}
