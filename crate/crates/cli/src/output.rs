//! Time-series tables, summaries and checkpoints.
//!
//! Tables are tab-separated text. The first line is
//! `# schema_version=<v> config_hash=<h> code_version=<v>`, the second names
//! the columns, and every further line is one record. Missing values are
//! written as `nan`.
//!
//! Checkpoint layout (little endian):
//!
//! ```text
//! magic      8 bytes  "PLRNCKPT"
//! version    u32
//! d, n, m    u32 x 3
//! half_length, cutoff, alpha, t, theta_e, theta_omega   f64 x 6
//! psi        n^d complex values as (re, im) f64 pairs
//! phi        m complex values
//! crc32      u32 over everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PLRNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width differs from header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_tsv(&self, config_hash: &str) -> String {
        let mut s = format!("# schema_version={SCHEMA_VERSION} config_hash={config_hash} code_version={CODE_VERSION}\n");
        s.push_str(&self.columns.join("\t"));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| fmt_cell(*x)).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<(Self, String), HarnessError> {
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| HarnessError::Format("empty table".into()))?;
        let hash = meta
            .split_whitespace()
            .find_map(|f| f.strip_prefix("config_hash="))
            .ok_or_else(|| HarnessError::Format("missing config_hash".into()))?
            .to_string();
        let version = meta
            .split_whitespace()
            .find_map(|f| f.strip_prefix("schema_version="))
            .and_then(|v| v.parse::<u32>().ok());
        if version != Some(SCHEMA_VERSION) {
            return Err(HarnessError::Format(format!("unsupported schema version in `{meta}`")));
        }
        let header = lines.next().ok_or_else(|| HarnessError::Format("missing header row".into()))?;
        let columns: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split('\t')
                .map(|c| c.parse::<f64>().map_err(|_| HarnessError::Format(format!("row {}: bad value `{c}`", i + 1))))
                .collect::<Result<_, _>>()?;
            if row.len() != columns.len() {
                return Err(HarnessError::Format(format!("row {} has {} cells, expected {}", i + 1, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok((Self { columns, rows }, hash))
    }
}

/// Shortest representation that parses back to the same bits.
fn fmt_cell(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:e}")
    }
}

/// Records plus provenance.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub kind: String,
    pub alpha: f64,
    pub config_hash: String,
    pub code_version: String,
    pub wall_seconds: f64,
    pub table: Table,
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub d: u32,
    pub n: u32,
    pub half_length: f64,
    pub cutoff: f64,
    pub alpha: f64,
    pub t: f64,
    pub theta_e: f64,
    pub theta_omega: f64,
    pub psi: Vec<C64>,
    pub phi: Vec<C64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [CHECKPOINT_VERSION, self.d, self.n, self.phi.len() as u32] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.half_length, self.cutoff, self.alpha, self.t, self.theta_e, self.theta_omega] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for z in self.psi.iter().chain(&self.phi) {
            b.extend_from_slice(&z.re.to_le_bytes());
            b.extend_from_slice(&z.im.to_le_bytes());
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let bad = |m: &str| HarnessError::Format(format!("checkpoint: {m}"));
        if bytes.len() < 8 + 16 + 48 + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(bad("checksum mismatch"));
        }
        let mut pos = 8;
        let mut u32_at = || {
            let v = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
            pos += 4;
            v
        };
        let (version, d, n, m) = (u32_at(), u32_at(), u32_at(), u32_at());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if !(1..=3).contains(&d) {
            return Err(bad("bad dimension"));
        }
        let mut f = body[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut scalars = [0.0; 6];
        for s in scalars.iter_mut() {
            *s = f.next().ok_or_else(|| bad("truncated scalars"))?;
        }
        let npts = (n as usize).pow(d);
        let rest: Vec<f64> = f.collect();
        if rest.len() != 2 * (npts + m as usize) {
            return Err(bad("array length mismatch"));
        }
        let z: Vec<C64> = rest.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
        Ok(Self {
            d,
            n,
            half_length: scalars[0],
            cutoff: scalars[1],
            alpha: scalars[2],
            t: scalars[3],
            theta_e: scalars[4],
            theta_omega: scalars[5],
            psi: z[..npts].to_vec(),
            phi: z[npts..].to_vec(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_is_bitwise() {
        let mut t = Table::new(&["t", "x"]);
        t.push(vec![0.0, 1.0 / 3.0]);
        t.push(vec![0.1, f64::NAN]);
        t.push(vec![1e-300, -2.5e17]);
        let (back, hash) = Table::from_tsv(&t.to_tsv("abc")).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back.columns, t.columns);
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let c = Checkpoint {
            d: 1,
            n: 4,
            half_length: 2.0,
            cutoff: 1.0,
            alpha: 3.0,
            t: 0.5,
            theta_e: -1.0,
            theta_omega: 0.25,
            psi: (0..4).map(|i| C64::new(i as f64, -0.5)).collect(),
            phi: vec![C64::new(0.1, 0.2), C64::new(0.3, 0.4)],
        };
        let mut bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        bytes[40] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
    }
}
