//! Runtime configuration: filter bank geometry, quantization table, parity
//! options — loadable from a TOML file and hashed so indexes and network
//! peers can detect incompatible feature pipelines.

use std::path::Path;

use crate::dct::QuantTable;
use crate::error::{Error, Result};
use crate::gabor::BankConfig;

/// Everything that shapes features and embedding.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub bank: BankConfig,
    pub quant: QuantTable,
    /// Include the DC coefficient in the stego parity set.
    pub parity_dc: bool,
    /// Standardize feature components (per-index z-score) before ranking.
    pub standardize: bool,
}

/// FNV-1a 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Config {
    /// Loads a TOML file; absent keys keep their defaults. `quant_table`
    /// names a 64-integer text file, resolved relative to the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))?;

        let mut cfg = Config::default();
        for (key, v) in &table {
            match key.as_str() {
                "scales" => cfg.bank.scales = usize_value(key, v)?,
                "orientations" => cfg.bank.orientations = usize_value(key, v)?,
                "freq_low" => cfg.bank.freq_low = float_value(key, v)?,
                "freq_high" => cfg.bank.freq_high = float_value(key, v)?,
                "kernel_radius" => cfg.bank.kernel_radius = usize_value(key, v)?,
                "parity_dc" => cfg.parity_dc = bool_value(key, v)?,
                "standardize" => cfg.standardize = bool_value(key, v)?,
                "quant_table" => {
                    let rel = v.as_str().ok_or_else(|| {
                        Error::BadConfig("quant_table must be a path string".into())
                    })?;
                    let table_path = path.parent().unwrap_or(Path::new(".")).join(rel);
                    let table_text = std::fs::read_to_string(&table_path)?;
                    cfg.quant = QuantTable::parse(&table_text)?;
                }
                other => {
                    return Err(Error::BadConfig(format!("unknown key {other:?}")));
                }
            }
        }
        cfg.bank.validate()?;
        Ok(cfg)
    }

    /// Canonical bytes of every parameter that shapes features or embedding.
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 128);
        out.extend_from_slice(&(self.bank.scales as u64).to_le_bytes());
        out.extend_from_slice(&(self.bank.orientations as u64).to_le_bytes());
        out.extend_from_slice(&self.bank.freq_low.to_bits().to_le_bytes());
        out.extend_from_slice(&self.bank.freq_high.to_bits().to_le_bytes());
        out.extend_from_slice(&(self.bank.kernel_radius as u64).to_le_bytes());
        out.push(self.parity_dc as u8);
        out.push(self.standardize as u8);
        for row in self.quant.entries() {
            for &e in row {
                out.extend_from_slice(&e.to_le_bytes());
            }
        }
        out
    }

    /// 16-hex-digit pipeline fingerprint used in index headers and the
    /// network handshake.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", fnv1a64(&self.canonical_bytes()))
    }
}

fn usize_value(key: &str, v: &toml::Value) -> Result<usize> {
    v.as_integer()
        .filter(|&i| i > 0)
        .map(|i| i as usize)
        .ok_or_else(|| Error::BadConfig(format!("{key} must be a positive integer")))
}

fn float_value(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::BadConfig(format!("{key} must be a number"))),
    }
}

fn bool_value(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::BadConfig(format!("{key} must be a boolean")))
}
