//! Binary checkpoint and mask files, plus TOML run manifests.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "MTE1" | version u16 | stage u8 | scheme u8 (0xff = none) | group u8
//!        | seed u64 | config hash [32]
//!        | segment count u32 | { name_len u16, name, rows u32, cols u32, offset u64 }*
//!        | value count u64 | f64*
//!        | has_mask u8 | [mask block]
//! ```
//!
//! A mask block is `region count u32 | { name_len u16, name }* | bit length u64 |
//! packed bits`, least significant bit first. Mask files are `"MTM1" | version u16 |
//! mask block`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::ensemble::{MemberCheckpoint, Scheme};
use crate::error::{Error, Result};
use crate::model::PruneMask;
use crate::params::{ParamVector, Segment};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MTE1";
pub const MASK_MAGIC: [u8; 4] = *b"MTM1";
pub const FORMAT_VERSION: u16 = 1;

const NO_SCHEME: u8 = 0xff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrained,
    Member,
}

impl Stage {
    fn code(self) -> u8 {
        match self {
            Stage::Pretrained => 0,
            Stage::Member => 1,
        }
    }

    fn from_code(c: u8) -> Option<Stage> {
        match c {
            0 => Some(Stage::Pretrained),
            1 => Some(Stage::Member),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub stage: Stage,
    pub scheme: Option<Scheme>,
    pub group: u8,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub params: ParamVector,
    pub mask: Option<PruneMask>,
}

impl CheckpointFile {
    pub fn body(params: ParamVector, seed: u64, config_hash: [u8; 32]) -> Self {
        Self {
            stage: Stage::Pretrained,
            scheme: None,
            group: 0,
            seed,
            config_hash,
            params,
            mask: None,
        }
    }

    pub fn member(m: &MemberCheckpoint, config_hash: [u8; 32]) -> Self {
        Self {
            stage: Stage::Member,
            scheme: Some(m.scheme),
            group: m.group,
            seed: m.seed,
            config_hash,
            params: m.params.clone(),
            mask: m.mask.clone(),
        }
    }

    pub fn into_member(self) -> Result<MemberCheckpoint> {
        let scheme = match (self.stage, self.scheme) {
            (Stage::Member, Some(s)) => s,
            _ => return Err(Error::contract("checkpoint is not a trained member")),
        };
        Ok(MemberCheckpoint {
            params: self.params,
            mask: self.mask,
            seed: self.seed,
            scheme,
            group: self.group,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::with_capacity(64 + self.params.len() * 8);
        w.extend_from_slice(&CHECKPOINT_MAGIC);
        w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        w.push(self.stage.code());
        w.push(self.scheme.map_or(NO_SCHEME, Scheme::code));
        w.push(self.group);
        w.extend_from_slice(&self.seed.to_le_bytes());
        w.extend_from_slice(&self.config_hash);
        let segs = self.params.segments();
        w.extend_from_slice(&(segs.len() as u32).to_le_bytes());
        for s in segs {
            put_str(&mut w, &s.name);
            w.extend_from_slice(&(s.rows as u32).to_le_bytes());
            w.extend_from_slice(&(s.cols as u32).to_le_bytes());
            w.extend_from_slice(&(s.offset as u64).to_le_bytes());
        }
        w.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
        match &self.mask {
            None => w.push(0),
            Some(m) => {
                w.push(1);
                put_mask(&mut w, m);
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.header(CHECKPOINT_MAGIC)?;
        let stage_code = r.u8("stage")?;
        let stage = Stage::from_code(stage_code).ok_or_else(|| r.malformed(format!("unknown stage {stage_code}")))?;
        let scheme_code = r.u8("scheme")?;
        let scheme = if scheme_code == NO_SCHEME {
            None
        } else {
            Some(Scheme::from_code(scheme_code).ok_or_else(|| r.malformed(format!("unknown scheme code {scheme_code}")))?)
        };
        let group = r.u8("group")?;
        let seed = r.u64("seed")?;
        let config_hash: [u8; 32] = r.take(32, "config hash")?.try_into().expect("32 bytes");
        let nseg = r.u32("segment count")? as usize;
        let mut segments = Vec::with_capacity(nseg.min(1024));
        for _ in 0..nseg {
            let name = r.string("segment name")?;
            let rows = r.u32("segment rows")? as usize;
            let cols = r.u32("segment cols")? as usize;
            let offset = r.u64("segment offset")? as usize;
            segments.push(Segment { name, rows, cols, offset });
        }
        let n = r.u64("value count")? as usize;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| r.malformed("value count overflows"))?, "parameter payload")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = ParamVector::from_parts(segments, data).map_err(|e| r.malformed(e.to_string()))?;
        let mask = match r.u8("mask flag")? {
            0 => None,
            1 => Some(r.mask()?),
            other => return Err(r.malformed(format!("bad mask flag {other}"))),
        };
        r.finish()?;
        Ok(Self {
            stage,
            scheme,
            group,
            seed,
            config_hash,
            params,
            mask,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<()> {
    write_file(path, &ckpt.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let bytes = read_file(path)?;
    CheckpointFile::from_bytes(&bytes, path)
}

pub fn mask_to_bytes(mask: &PruneMask) -> Vec<u8> {
    let mut w = Vec::with_capacity(16 + mask.len() / 8);
    w.extend_from_slice(&MASK_MAGIC);
    w.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_mask(&mut w, mask);
    w
}

pub fn mask_from_bytes(bytes: &[u8], path: &Path) -> Result<PruneMask> {
    let mut r = Reader::new(bytes, path);
    r.header(MASK_MAGIC)?;
    let m = r.mask()?;
    r.finish()?;
    Ok(m)
}

pub fn save_mask(path: &Path, mask: &PruneMask) -> Result<()> {
    write_file(path, &mask_to_bytes(mask))
}

pub fn load_mask(path: &Path) -> Result<PruneMask> {
    let bytes = read_file(path)?;
    mask_from_bytes(&bytes, path)
}

/// Bits packed least significant first; trailing padding bits are zero.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], len: usize) -> Vec<bool> {
    (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u16).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn put_mask(w: &mut Vec<u8>, m: &PruneMask) {
    w.extend_from_slice(&(m.region().len() as u32).to_le_bytes());
    for name in m.region() {
        put_str(w, name);
    }
    w.extend_from_slice(&(m.len() as u64).to_le_bytes());
    w.extend_from_slice(&pack_bits(m.bits()));
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    fn malformed(&self, context: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            context: context.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                context: format!("{what}: need {n} bytes at offset {}, {} left", self.pos, self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u16(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.malformed(format!("{what} is not UTF-8")))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4, "magic")?.try_into().expect("4 bytes");
        if found != magic {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                expected: magic,
                found,
            });
        }
        let version = self.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                path: self.path.to_path_buf(),
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(())
    }

    fn mask(&mut self) -> Result<PruneMask> {
        let nreg = self.u32("mask region count")? as usize;
        let mut region = Vec::with_capacity(nreg.min(1024));
        for _ in 0..nreg {
            region.push(self.string("mask region name")?);
        }
        let len = self.u64("mask length")? as usize;
        let packed = self.take(len.div_ceil(8), "mask bits")?;
        Ok(PruneMask::from_bits(region, unpack_bits(packed, len)))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.display().to_string()),
        _ => Error::io(path, e),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file referenced by a manifest, relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberEntry {
    pub seed: u64,
    pub group: u8,
    pub checkpoint: ArtifactRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<ArtifactRef>,
}

/// Bookkeeping for one pretraining or training run.
///
/// ```toml
/// stage = "member"            # or "pretrained"
/// scheme = "base-lt"          # absent for pretraining
/// gen_seed = 11
/// config_hash = "<hex>"
/// seeds = [1, 2, ...]
/// groups = [1, 1, ..., 2]
/// body = { path = "body.mte", sha256 = "<hex>" }
///
/// [[members]]
/// seed = 1
/// group = 1
/// checkpoint = { path = "base-lt/seed-1.mte", sha256 = "<hex>" }
/// mask = { path = "base-lt/seed-1.mask", sha256 = "<hex>" }
///
/// [config]
/// # the full experiment config
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    pub gen_seed: u64,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub groups: Vec<u8>,
    pub body: ArtifactRef,
    #[serde(default)]
    pub members: Vec<MemberEntry>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        write_file(path, text.as_bytes())
    }

    /// Parses a manifest without touching the files it references.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(format!("manifest {}", path.display())),
            _ => Error::io(path, e),
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Parses and checks that every referenced file exists and hash-verifies.
    pub fn load(path: &Path) -> Result<Self> {
        let m = Self::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        verify(base, &m.body, "pretrained body")?;
        for e in &m.members {
            let who = format!("member seed {}", e.seed);
            verify(base, &e.checkpoint, &who)?;
            if let Some(mask) = &e.mask {
                verify(base, mask, &format!("mask of {who}"))?;
            }
        }
        Ok(m)
    }

    pub fn resolve(base: &Path, r: &ArtifactRef) -> PathBuf {
        base.join(&r.path)
    }
}

/// Writes `bytes` under `base/rel` and returns the reference to it.
pub fn write_artifact(base: &Path, rel: &str, bytes: &[u8]) -> Result<ArtifactRef> {
    write_file(&base.join(rel), bytes)?;
    Ok(ArtifactRef {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
    })
}

fn verify(base: &Path, r: &ArtifactRef, who: &str) -> Result<()> {
    let p = base.join(&r.path);
    let bytes = fs::read(&p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(format!("{who}: {} not found", p.display())),
        _ => Error::io(&p, e),
    })?;
    let h = sha256_hex(&bytes);
    if h != r.sha256 {
        return Err(Error::Malformed {
            path: p,
            context: format!("{who}: sha256 {h} does not match manifest {}", r.sha256),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamVector {
        let mut p = ParamVector::new();
        p.push("body.0.weight", 2, 3, vec![0.1, -0.2, 0.3, f64::MIN_POSITIVE, -0.0, 1e300]).unwrap();
        p.push("body.0.bias", 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        p
    }

    fn sample_mask(n: usize) -> PruneMask {
        PruneMask::from_bits(vec!["body.1.weight".into()], (0..n).map(|i| i % 3 != 0).collect())
    }

    fn sample() -> CheckpointFile {
        CheckpointFile {
            stage: Stage::Member,
            scheme: Some(Scheme::RandomLt),
            group: 2,
            seed: 17,
            config_hash: [7; 32],
            params: sample_params(),
            mask: Some(sample_mask(13)),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = CheckpointFile::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params.data()[4].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn every_truncation_is_reported() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            let err = CheckpointFile::from_bytes(&bytes[..cut], Path::new("x")).unwrap_err();
            assert!(matches!(err, Error::Truncated { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn newer_version_names_both() {
        let mut bytes = sample().to_bytes();
        bytes[4..6].copy_from_slice(&2u16.to_le_bytes());
        let err = CheckpointFile::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Version { found: 2, supported: 1, .. }));
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        let err = CheckpointFile::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        let err = mask_from_bytes(&sample().to_bytes(), Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn trailing_bytes_are_malformed() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        let err = CheckpointFile::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }));
    }

    #[test]
    fn thousand_bit_mask_payload() {
        let m = PruneMask::from_bits(vec!["body.1.weight".into()], vec![true; 1000]);
        let bytes = mask_to_bytes(&m);
        let header = 4 + 2 + 4 + 2 + "body.1.weight".len() + 8;
        assert_eq!(bytes.len(), header + 125);
        let back = mask_from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.surviving(), 1000);
    }

    #[test]
    fn padding_bits_ignored() {
        let m = sample_mask(13);
        let mut bytes = mask_to_bytes(&m);
        *bytes.last_mut().unwrap() |= 0b1110_0000;
        let back = mask_from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.surviving(), m.surviving());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.mte");
        save_checkpoint(&p, &sample()).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), sample());
        let err = load_checkpoint(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }

    #[test]
    fn manifest_missing_member_names_seed() {
        let dir = tempfile::tempdir().unwrap();
        let body = write_artifact(dir.path(), "body.mte", b"body").unwrap();
        let m1 = write_artifact(dir.path(), "m/1.mte", b"one").unwrap();
        let m = RunManifest {
            stage: Stage::Member,
            scheme: Some(Scheme::Baseline),
            gen_seed: 11,
            config_hash: "00".into(),
            seeds: vec![1, 42],
            groups: vec![1, 2],
            body,
            members: vec![
                MemberEntry {
                    seed: 1,
                    group: 1,
                    checkpoint: m1,
                    mask: None,
                },
                MemberEntry {
                    seed: 42,
                    group: 2,
                    checkpoint: ArtifactRef {
                        path: "m/42.mte".into(),
                        sha256: "ff".into(),
                    },
                    mask: None,
                },
            ],
            config: ExperimentConfig::desk_scale(),
        };
        let path = dir.path().join("manifest.toml");
        m.save(&path).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        let err = RunManifest::load(&path).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
        assert!(err.to_string().contains("seed 42"), "{err}");

        fs::write(dir.path().join("m/42.mte"), b"forty-two").unwrap();
        let err = RunManifest::load(&path).unwrap_err();
        assert!(err.to_string().contains("sha256"), "{err}");
    }
}
