//! Snapshot files: a `key = value` text manifest terminated by `end`, then a
//! raw little-endian payload of complex pairs. All coefficients come first,
//! then the orbitals one after another, each in row-major grid order.
//!
//! `form = hermitian` stores one orbital per term (`left == right`), so the
//! payload is `R (2 + 2 n^d) 8` bytes. `form = general` stores the left and
//! then the right orbital of every term, `R (2 + 4 n^d) 8` bytes.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use ksflow::operator::Term;
use ksflow::{FiniteRankOperator, Grid, C64};

use crate::error::{CliError, EXIT_NUMERIC};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "ksflow-snapshot";
const END: &str = "end";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    Hermitian,
    General,
}

impl Form {
    fn as_str(&self) -> &'static str {
        match self {
            Form::Hermitian => "hermitian",
            Form::General => "general",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub format_version: u32,
    pub form: Form,
    pub dim: usize,
    pub n: usize,
    pub half_length: f64,
    pub rank: usize,
    pub time: f64,
    pub seed: u64,
    pub nonneg: bool,
    pub config_hash: String,
    pub payload_bytes: usize,
    pub payload_sha256: String,
}

#[derive(Clone, Debug)]
pub struct SnapshotFile {
    pub manifest: Manifest,
    pub kappa: FiniteRankOperator,
}

fn corrupted(msg: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_NUMERIC, format!("corrupted snapshot: {msg}"))
}

fn push_c64(out: &mut Vec<u8>, z: C64) {
    out.extend_from_slice(&z.re.to_le_bytes());
    out.extend_from_slice(&z.im.to_le_bytes());
}

impl SnapshotFile {
    /// Hermitian form whenever the operator is flagged self-adjoint and every
    /// term has bitwise equal orbitals.
    pub fn new(kappa: FiniteRankOperator, time: f64, seed: u64, config_hash: &str) -> Self {
        let hermitian = kappa.is_self_adjoint() && kappa.terms().iter().all(|t| t.left == t.right);
        let form = if hermitian { Form::Hermitian } else { Form::General };
        let g = kappa.grid();
        let mut manifest = Manifest {
            format_version: FORMAT_VERSION,
            form,
            dim: g.dim(),
            n: g.points_per_axis(),
            half_length: g.half_length(),
            rank: kappa.rank(),
            time,
            seed,
            nonneg: kappa.is_nonneg(),
            config_hash: config_hash.to_string(),
            payload_bytes: 0,
            payload_sha256: String::new(),
        };
        let payload = Self::payload(&kappa, form);
        manifest.payload_bytes = payload.len();
        manifest.payload_sha256 = hex::encode(Sha256::digest(&payload));
        Self { manifest, kappa }
    }

    fn payload(kappa: &FiniteRankOperator, form: Form) -> Vec<u8> {
        let per = match form {
            Form::Hermitian => 1,
            Form::General => 2,
        };
        let mut out = Vec::with_capacity(kappa.rank() * (2 + 2 * per * kappa.grid().len()) * 8);
        for t in kappa.terms() {
            push_c64(&mut out, t.coeff);
        }
        for t in kappa.terms() {
            t.left.iter().for_each(|&z| push_c64(&mut out, z));
            if form == Form::General {
                t.right.iter().for_each(|&z| push_c64(&mut out, z));
            }
        }
        out
    }

    fn manifest_text(&self) -> String {
        let m = &self.manifest;
        format!(
            "{MAGIC}\nformat_version = {}\nform = {}\ndim = {}\nn = {}\nhalf_length = {:?}\nrank = {}\ntime = {:?}\nseed = {}\nnonneg = {}\nconfig_hash = {}\npayload_bytes = {}\npayload_sha256 = {}\n{END}\n",
            m.format_version,
            m.form.as_str(),
            m.dim,
            m.n,
            m.half_length,
            m.rank,
            m.time,
            m.seed,
            m.nonneg,
            m.config_hash,
            m.payload_bytes,
            m.payload_sha256
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.manifest_text().into_bytes();
        out.extend(Self::payload(&self.kappa, self.manifest.form));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let marker = format!("\n{END}\n");
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| corrupted("manifest is not terminated"))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupted("manifest is not text"))?;
        let payload = &bytes[split + marker.len()..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupted("missing magic line"));
        }
        let mut kv = BTreeMap::new();
        for line in lines {
            let (k, v) = line.split_once(" = ").ok_or_else(|| corrupted(format!("bad manifest line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        fn field<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T, CliError> {
            kv.get(key)
                .ok_or_else(|| corrupted(format!("missing {key}")))?
                .parse()
                .map_err(|_| corrupted(format!("unreadable {key}")))
        }
        let format_version: u32 = field(&kv, "format_version")?;
        if format_version != FORMAT_VERSION {
            return Err(corrupted(format!("unsupported format version {format_version}")));
        }
        let form = match kv.get("form").map(String::as_str) {
            Some("hermitian") => Form::Hermitian,
            Some("general") => Form::General,
            other => return Err(corrupted(format!("unknown form {other:?}"))),
        };
        let manifest = Manifest {
            format_version,
            form,
            dim: field(&kv, "dim")?,
            n: field(&kv, "n")?,
            half_length: field(&kv, "half_length")?,
            rank: field(&kv, "rank")?,
            time: field(&kv, "time")?,
            seed: field(&kv, "seed")?,
            nonneg: field(&kv, "nonneg")?,
            config_hash: field(&kv, "config_hash")?,
            payload_bytes: field(&kv, "payload_bytes")?,
            payload_sha256: field(&kv, "payload_sha256")?,
        };
        let digest = hex::encode(Sha256::digest(payload));
        if digest != manifest.payload_sha256 {
            return Err(corrupted(format!(
                "payload checksum {digest} does not match manifest {}",
                manifest.payload_sha256
            )));
        }
        let grid = Grid::new(manifest.dim, manifest.n, manifest.half_length).map_err(corrupted)?;
        let per = if form == Form::General { 2 } else { 1 };
        let expected = manifest.rank * (2 + 2 * per * grid.len()) * 8;
        if payload.len() != expected || manifest.payload_bytes != expected {
            return Err(corrupted(format!("payload has {} bytes, expected {expected}", payload.len())));
        }
        let mut values = payload.chunks_exact(16).map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        });
        let coeffs: Vec<C64> = values.by_ref().take(manifest.rank).collect();
        let mut terms = Vec::with_capacity(manifest.rank);
        for coeff in coeffs {
            let left: Vec<C64> = values.by_ref().take(grid.len()).collect();
            let right = if form == Form::General {
                values.by_ref().take(grid.len()).collect()
            } else {
                left.clone()
            };
            terms.push(Term { coeff, left, right });
        }
        let kappa = FiniteRankOperator::from_terms(grid, terms)
            .map_err(corrupted)?
            .with_flags(form == Form::Hermitian, manifest.nonneg);
        Ok(Self { manifest, kappa })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(&format!("cannot read snapshot {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// `t_<time>.ksnap`, sortable for nonnegative times below 10^6.
    pub fn file_name(time: f64) -> String {
        format!("t_{time:013.6}.ksnap")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ksflow::random::{gaussian_mixture, random_operator, rng_from_seed, MixtureParams};

    fn hermitian() -> FiniteRankOperator {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let params = MixtureParams { rank: 3, ..Default::default() };
        gaussian_mixture(&g, &params, &mut rng_from_seed(1)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let snap = SnapshotFile::new(hermitian(), 2.5, 7, "abc");
        assert_eq!(snap.manifest.form, Form::Hermitian);
        let bytes = snap.to_bytes();
        let back = SnapshotFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.manifest, snap.manifest);
        assert!(back.kappa.is_self_adjoint() && back.kappa.is_nonneg());
        for (a, b) in back.kappa.terms().iter().zip(snap.kappa.terms()) {
            assert_eq!((a.coeff, &a.left, &a.right), (b.coeff, &b.left, &b.right));
        }
        assert_eq!(snap.manifest.payload_bytes, 3 * (2 + 2 * 64) * 8);
    }

    #[test]
    fn general_form() {
        let g = Grid::new(2, 8, 4.0).unwrap();
        let k = random_operator(&g, &Default::default(), &mut rng_from_seed(3));
        let snap = SnapshotFile::new(k.clone(), 0.0, 0, "x");
        assert_eq!(snap.manifest.form, Form::General);
        assert_eq!(snap.manifest.payload_bytes, k.rank() * (2 + 4 * 64) * 8);
        let bytes = snap.to_bytes();
        let back = SnapshotFile::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in back.kappa.terms().iter().zip(k.terms()) {
            assert_eq!(a.left, b.left);
            assert_eq!(a.right, b.right);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = SnapshotFile::new(hermitian(), 1.0, 0, "abc").to_bytes();
        let last = bytes.len() - 3;
        bytes[last] ^= 1;
        let err = SnapshotFile::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.code, EXIT_NUMERIC);
        assert!(err.message.contains("checksum"));
        let truncated = &bytes[..bytes.len() - 16];
        assert_eq!(SnapshotFile::from_bytes(truncated).unwrap_err().code, EXIT_NUMERIC);
        assert_eq!(SnapshotFile::from_bytes(b"garbage").unwrap_err().code, EXIT_NUMERIC);
    }

    #[test]
    fn file_names_sort_by_time() {
        assert_eq!(SnapshotFile::file_name(5.0), "t_000005.000000.ksnap");
        assert!(SnapshotFile::file_name(10.0) > SnapshotFile::file_name(5.0));
    }
}
