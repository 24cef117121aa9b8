//! Config loading, binary snapshots and report emission.
//!
//! A snapshot is `MAGIC (8 bytes) | version (u32 LE) | header length (u64 LE)
//! | JSON header | f64 LE arrays`. Arrays follow the header in the order the
//! header lists them, each in row-major site order.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corrector::{CorrectorSolution, SolutionNorms};
use crate::env::{CycleCatalog, EnvironmentTorus};
use crate::error::{Error, Result};
use crate::krylov::SolveStats;
use crate::lattice::Torus;

pub const ENV_MAGIC: &[u8; 8] = b"CYCLEENV";
pub const SOLUTION_MAGIC: &[u8; 8] = b"CYCLESOL";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Parses JSON, naming the offending field and position on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse(format!(
            "field `{path}` (line {}, column {}): {inner}",
            inner.line(),
            inner.column()
        ))
    })?;
    Ok(value)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// RFC 4180 quoting of a single field.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn csv_line<S: AsRef<str>>(fields: &[S]) -> String {
    let mut out = fields
        .iter()
        .map(|f| csv_field(f.as_ref()))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    out
}

/// Serde adapter for moment exponents: `"inf"` stands for `+∞`.
pub mod moment {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let v = match Repr::deserialize(d)? {
            Repr::Num(v) => v,
            Repr::Text(t) => super::parse_moment(&t).map_err(serde::de::Error::custom)?,
        };
        if !(v > 1.0) {
            return Err(serde::de::Error::custom(format!("moment exponent {v} must exceed 1")));
        }
        Ok(v)
    }
}

/// Parses a moment exponent, accepting `inf` for the max-norm.
pub fn parse_moment(s: &str) -> std::result::Result<f64, String> {
    match s.trim() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        t => t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("expected a number or \"inf\", got {t:?}")),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnvHeader {
    d: usize,
    side: usize,
    seed: u64,
    catalog: CycleCatalog,
    /// One weight array of `side^d` values per catalog entry.
    arrays: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionHeader {
    lambda: f64,
    d: usize,
    side: usize,
    harmonic_identity_gap: f64,
    sigma2: Option<Vec<Vec<f64>>>,
    norms: SolutionNorms,
    stats: Vec<SolveStats>,
    arrays: Vec<String>,
}

fn encode(magic: &[u8; 8], header: &impl Serialize, arrays: &[&[f64]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)
        .map_err(|e| Error::Snapshot(format!("cannot encode header: {e}")))?;
    let body: usize = arrays.iter().map(|a| a.len() * 8).sum();
    let mut out = Vec::with_capacity(20 + json.len() + body);
    out.extend_from_slice(magic);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in arrays {
        for v in *a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits a snapshot into its header and the raw array section.
fn decode<'a, H: DeserializeOwned>(magic: &[u8; 8], bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(Error::Snapshot(format!(
            "missing {} magic",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "snapshot version {version} is not supported (expected {SNAPSHOT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let end = 20usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Snapshot("truncated header".into()))?;
    let header = serde_json::from_slice(&bytes[20..end])
        .map_err(|e| Error::Snapshot(format!("bad header: {e}")))?;
    Ok((header, &bytes[end..]))
}

fn read_arrays(mut body: &[u8], count: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    if body.len() != count * len * 8 {
        return Err(Error::Snapshot(format!(
            "expected {} bytes of array data, found {}",
            count * len * 8,
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (head, rest) = body.split_at(len * 8);
        out.push(
            head.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        );
        body = rest;
    }
    Ok(out)
}

pub fn encode_env(env: &EnvironmentTorus) -> Result<Vec<u8>> {
    let header = EnvHeader {
        d: env.dim(),
        side: env.side(),
        seed: env.seed(),
        catalog: env.catalog().clone(),
        arrays: (0..env.weights().len()).map(|s| format!("weight[{s}]")).collect(),
    };
    let arrays: Vec<&[f64]> = env.weights().iter().map(|w| w.as_slice()).collect();
    encode(ENV_MAGIC, &header, &arrays)
}

pub fn decode_env(bytes: &[u8]) -> Result<EnvironmentTorus> {
    let (h, body): (EnvHeader, _) = decode(ENV_MAGIC, bytes)?;
    if h.catalog.d != h.d || h.arrays.len() != h.catalog.entries.len() {
        return Err(Error::Snapshot("header is inconsistent with its catalog".into()));
    }
    let torus = Torus::new(h.d, h.side)?;
    let weights = read_arrays(body, h.arrays.len(), torus.num_sites())?;
    EnvironmentTorus::from_weights(h.catalog, torus, weights, h.seed)
}

pub fn save_env(env: &EnvironmentTorus, path: &Path) -> Result<()> {
    write_atomic(path, &encode_env(env)?)
}

pub fn load_env(path: &Path) -> Result<EnvironmentTorus> {
    decode_env(&read(path)?)
}

/// Stores `φ`, the solver residual and the harmonic residual as raw arrays.
pub fn encode_solution(sol: &CorrectorSolution) -> Result<Vec<u8>> {
    let groups = [("phi", &sol.phi), ("solver_residual", &sol.solver_residual), ("residual_harmonic", &sol.residual_harmonic)];
    let mut names = Vec::new();
    let mut arrays: Vec<&[f64]> = Vec::new();
    for (name, group) in groups {
        for (i, a) in group.iter().enumerate() {
            names.push(format!("{name}[{i}]"));
            arrays.push(a);
        }
    }
    let header = SolutionHeader {
        lambda: sol.lambda,
        d: sol.d,
        side: sol.side,
        harmonic_identity_gap: sol.harmonic_identity_gap,
        sigma2: sol.sigma2.clone(),
        norms: sol.norms.clone(),
        stats: sol.stats.clone(),
        arrays: names,
    };
    encode(SOLUTION_MAGIC, &header, &arrays)
}

pub fn decode_solution(bytes: &[u8]) -> Result<CorrectorSolution> {
    let (h, body): (SolutionHeader, _) = decode(SOLUTION_MAGIC, bytes)?;
    let n = Torus::new(h.d, h.side)?.num_sites();
    let mut arrays = read_arrays(body, h.arrays.len(), n)?.into_iter();
    let mut take = |prefix: &str| -> Vec<Vec<f64>> {
        let count = h.arrays.iter().filter(|a| a.starts_with(&format!("{prefix}["))).count();
        arrays.by_ref().take(count).collect()
    };
    let phi = take("phi");
    let solver_residual = take("solver_residual");
    let residual_harmonic = take("residual_harmonic");
    if phi.len() != h.d || solver_residual.len() != h.d {
        return Err(Error::Snapshot("solution snapshot lacks per-coordinate arrays".into()));
    }
    Ok(CorrectorSolution {
        lambda: h.lambda,
        d: h.d,
        side: h.side,
        phi,
        solver_residual,
        residual_harmonic,
        harmonic_identity_gap: h.harmonic_identity_gap,
        sigma2: h.sigma2,
        norms: h.norms,
        stats: h.stats,
    })
}

pub fn save_solution(sol: &CorrectorSolution, path: &Path) -> Result<()> {
    write_atomic(path, &encode_solution(sol)?)
}

pub fn load_solution(path: &Path) -> Result<CorrectorSolution> {
    decode_solution(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize, Serialize, PartialEq)]
    struct M {
        #[serde(with = "moment")]
        p: f64,
    }

    #[test]
    fn moment_accepts_inf_and_numbers() {
        assert_eq!(parse_json::<M>(r#"{"p":"inf"}"#).unwrap().p, f64::INFINITY);
        assert_eq!(parse_json::<M>(r#"{"p":4}"#).unwrap().p, 4.0);
        assert!(parse_json::<M>(r#"{"p":1}"#).is_err());
        let s = serde_json::to_string(&M { p: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"p":"inf"}"#);
    }

    #[test]
    fn parse_error_names_field() {
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Outer {
            inner: Inner,
        }
        #[derive(Debug, Deserialize)]
        #[allow(dead_code)]
        struct Inner {
            side: usize,
        }
        let e = parse_json::<Outer>("{\n \"inner\": {\"side\": \"x\"}}").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("inner.side"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(csv_line(&["x", "y\nz"]), "x,\"y\nz\"\n");
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let env = crate::env::sample_environment(&CycleCatalog::simple_random_walk(1).unwrap(), 1, 4, 1).unwrap();
        let mut bytes = encode_env(&env).unwrap();
        bytes[8] = 9;
        let msg = decode_env(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version 9"), "{msg}");
        assert!(decode_solution(&bytes).is_err());
    }
}
