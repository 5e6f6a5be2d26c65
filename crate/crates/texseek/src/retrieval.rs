//! Corpus indexing and query-by-example ranking: build rotation-normalized
//! texture signatures for a directory of images (optionally embedding each
//! image's own signature into it), persist them as a diffable text index,
//! and rank by the summed per-cell Euclidean distance.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::gabor::{normalize_rotation, FeatureExtractor, FeatureVector};
use crate::image::GrayImage;
use crate::pnm::{load_pnm, save_pgm};
use crate::stego::{capacity, embed, encode_payload, extract_payload_with, StegoPayload};

/// One indexed image: id (corpus-relative path), rotation-normalized
/// f32-precision features, and free-form attributes.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IndexRecord {
    pub id: String,
    pub features: FeatureVector,
    pub attributes: Vec<(String, String)>,
}

impl IndexRecord {
    /// Normalizes rotation and narrows to f32 so the stored vector matches
    /// the payload a stego image carries bit-for-bit.
    pub fn new(id: String, features: &FeatureVector, attributes: Vec<(String, String)>) -> Self {
        Self {
            id,
            features: normalize_rotation(features).quantize_f32(),
            attributes,
        }
    }
}

/// An immutable, id-sorted set of records sharing one feature pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Index {
    pub scales: usize,
    pub orientations: usize,
    pub config_hash: String,
    records: Vec<IndexRecord>,
}

impl Index {
    pub fn new(
        scales: usize,
        orientations: usize,
        config_hash: String,
        mut records: Vec<IndexRecord>,
    ) -> Result<Self> {
        let dim = 2 * scales * orientations;
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::DimMismatch(r.features.len(), dim));
            }
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Index(format!("duplicate id {:?}", w[0].id)));
        }
        Ok(Self {
            scales,
            orientations,
            config_hash,
            records,
        })
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndexRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }
}

/// One ranking entry.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RankedResult {
    pub id: String,
    pub distance: f64,
}

/// D(Q,T) = Σ_m Σ_n √((μ^Q−μ^T)² + (σ^Q−σ^T)²), the per-cell Euclidean
/// distances summed over the bank.
pub fn distance(q: &FeatureVector, t: &FeatureVector) -> Result<f64> {
    if q.values.len() != t.values.len() {
        return Err(Error::DimMismatch(q.values.len(), t.values.len()));
    }
    let mut total = 0.0;
    for pair in q.values.chunks_exact(2).zip(t.values.chunks_exact(2)) {
        let (qc, tc) = pair;
        let dmu = qc[0] - tc[0];
        let dsigma = qc[1] - tc[1];
        total += (dmu * dmu + dsigma * dsigma).sqrt();
    }
    Ok(total)
}

/// Top-k records by ascending distance, ties broken by id. `q` must already
/// be rotation-normalized. k clamps to the index size.
pub fn rank(q: &FeatureVector, idx: &Index, k: usize) -> Result<Vec<RankedResult>> {
    let mut scored: Vec<RankedResult> = idx
        .records
        .iter()
        .map(|r| {
            Ok(RankedResult {
                id: r.id.clone(),
                distance: distance(q, &r.features)?,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    Ok(scored)
}

/// [`rank`] with optional per-component standardization over the index
/// (z-score fitted on the records, applied to both sides).
pub fn rank_with(
    q: &FeatureVector,
    idx: &Index,
    k: usize,
    standardize: bool,
) -> Result<Vec<RankedResult>> {
    if !standardize || idx.is_empty() {
        return rank(q, idx, k);
    }
    let dim = 2 * idx.scales * idx.orientations;
    if q.values.len() != dim {
        return Err(Error::DimMismatch(q.values.len(), dim));
    }
    let n = idx.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &idx.records {
        for (m, &v) in mean.iter_mut().zip(&r.features.values) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut std = vec![0.0; dim];
    for r in &idx.records {
        for ((s, &m), &v) in std.iter_mut().zip(&mean).zip(&r.features.values) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut std {
        *s = (*s / n).sqrt();
    }
    let transform = |f: &FeatureVector| FeatureVector {
        scales: f.scales,
        orientations: f.orientations,
        values: f
            .values
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((&v, &m), &s)| if s > 0.0 { (v - m) / s } else { 0.0 })
            .collect(),
        dominant_orientation: f.dominant_orientation,
    };
    let zq = transform(q);
    let mut scored: Vec<RankedResult> = idx
        .records
        .iter()
        .map(|r| {
            Ok(RankedResult {
                id: r.id.clone(),
                distance: distance(&zq, &transform(&r.features))?,
            })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    Ok(scored)
}

// ---------------------------------------------------------------------------
// Text serialization

const INDEX_MAGIC: &str = "TEXSEEK-INDEX";
const INDEX_VERSION: &str = "v1";

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'~' | b'-')
}

/// Percent-encodes everything outside [A-Za-z0-9._~-].
pub fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if is_unreserved(b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

/// Inverse of [`encode_component`].
pub fn decode_component(s: &str) -> Result<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s
                .get(i + 1..i + 3)
                .ok_or_else(|| Error::Index(format!("truncated percent escape in {s:?}")))?;
            let v = u8::from_str_radix(hex, 16)
                .map_err(|_| Error::Index(format!("bad percent escape %{hex} in {s:?}")))?;
            out.push(v);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| Error::Index(format!("non-UTF-8 escape in {s:?}")))
}

fn encode_attributes(attrs: &[(String, String)]) -> String {
    attrs
        .iter()
        .map(|(k, v)| format!("{}={}", encode_component(k), encode_component(v)))
        .collect::<Vec<_>>()
        .join(";")
}

fn decode_attributes(field: &str) -> Result<Vec<(String, String)>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|pair| {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Index(format!("malformed attribute {pair:?}")))?;
            Ok((decode_component(k)?, decode_component(v)?))
        })
        .collect()
}

/// Serializes to the line-oriented text format:
/// `TEXSEEK-INDEX v1 M=<scales> N=<orients> cfg=<16 hex>` then per record
/// `id<TAB>values<TAB>dominant<TAB>attrs`, reals at 9 significant digits.
pub fn save_index(idx: &Index) -> String {
    let mut out = format!(
        "{INDEX_MAGIC} {INDEX_VERSION} M={} N={} cfg={}\n",
        idx.scales, idx.orientations, idx.config_hash
    );
    for r in &idx.records {
        let values = r
            .features
            .values
            .iter()
            .map(|v| format!("{v:.8e}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.id,
            values,
            r.features.dominant_orientation,
            encode_attributes(&r.attributes)
        ));
    }
    out
}

/// Parses [`save_index`] output. Duplicate ids, malformed lines, or an
/// unknown version are errors.
pub fn load_index(text: &str) -> Result<Index> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Index("empty file".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 5 || fields[0] != INDEX_MAGIC {
        return Err(Error::Index(format!("bad header {header:?}")));
    }
    if fields[1] != INDEX_VERSION {
        return Err(Error::Index(format!(
            "unsupported version {:?} (want {INDEX_VERSION})",
            fields[1]
        )));
    }
    let scales: usize = fields[2]
        .strip_prefix("M=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Index(format!("bad scales field {:?}", fields[2])))?;
    let orientations: usize = fields[3]
        .strip_prefix("N=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Index(format!("bad orientations field {:?}", fields[3])))?;
    let config_hash = fields[4]
        .strip_prefix("cfg=")
        .filter(|h| h.len() == 16 && h.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| Error::Index(format!("bad config hash field {:?}", fields[4])))?
        .to_string();

    let dim = 2 * scales * orientations;
    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Index(format!(
                "line {}: expected 4 tab-separated fields, got {}",
                lineno + 2,
                parts.len()
            )));
        }
        let mut values = Vec::with_capacity(dim);
        for tok in parts[1].split(' ').filter(|t| !t.is_empty()) {
            // stored at f32 precision: parse narrow, widen exactly
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::Index(format!("line {}: bad real {tok:?}", lineno + 2)))?;
            values.push(v as f64);
        }
        if values.len() != dim {
            return Err(Error::Index(format!(
                "line {}: {} values, want {dim}",
                lineno + 2,
                values.len()
            )));
        }
        let dominant_orientation: usize = parts[2]
            .parse()
            .map_err(|_| Error::Index(format!("line {}: bad dominant field", lineno + 2)))?;
        records.push(IndexRecord {
            id: parts[0].to_string(),
            features: FeatureVector {
                scales,
                orientations,
                values,
                dominant_orientation,
            },
            attributes: decode_attributes(parts[3])?,
        });
    }
    Index::new(scales, orientations, config_hash, records)
}

// ---------------------------------------------------------------------------
// Corpus indexing

/// What [`build_index`] produced besides the index itself.
#[derive(Debug)]
pub struct BuildReport {
    pub index: Index,
    /// Files that could not be read or parsed, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
    /// Ids whose image capacity was below the payload frame.
    pub unembedded: Vec<String>,
    /// Stego images written alongside their sources.
    pub stego_written: usize,
}

fn is_corpus_image(path: &Path) -> bool {
    let name = match path.file_name().and_then(|n| n.to_str()) {
        Some(n) => n,
        None => return false,
    };
    // our own embedding outputs are never corpus members
    if name.ends_with(".stego.pgm") {
        return false;
    }
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "pgm" || e == "ppm" || e == "pnm"
    )
}

fn walk_corpus(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk_corpus(&path, out)?;
        } else if is_corpus_image(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Loads `manifest.tsv` (`id<TAB>class` per line) if present; missing file
/// is just an empty mapping.
fn load_manifest(dir: &Path) -> Vec<(String, String)> {
    let path = dir.join("manifest.tsv");
    let Ok(text) = std::fs::read_to_string(&path) else {
        return Vec::new();
    };
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(id, class)| (id.to_string(), class.to_string()))
        .collect()
}

struct PerImage {
    record: IndexRecord,
    embedded: Option<GrayImage>,
    stego_path: Option<PathBuf>,
    unembedded: bool,
}

/// Per-image outcome: indexed, or skipped with the path and reason.
type ImageOutcome = std::result::Result<PerImage, (PathBuf, String)>;

/// Indexes every PNM under `corpus_dir` (recursively, deterministic order).
/// With `embed_attributes`, each image's own normalized signature and
/// attributes are hidden inside a `<name>.stego.pgm` written next to it;
/// images too small for the frame are indexed but reported unembedded.
pub fn build_index(corpus_dir: &Path, cfg: &Config, embed_attributes: bool) -> Result<BuildReport> {
    let mut paths = Vec::new();
    walk_corpus(corpus_dir, &mut paths)?;
    if paths.is_empty() {
        return Err(Error::EmptyCorpus(corpus_dir.to_path_buf()));
    }
    let manifest = load_manifest(corpus_dir);
    let extractor = FeatureExtractor::new(cfg.bank.clone())?;

    let n_threads = std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
        .min(paths.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, ImageOutcome)>> = Mutex::new(Vec::with_capacity(paths.len()));

    std::thread::scope(|scope| {
        for _ in 0..n_threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let path = &paths[i];
                let outcome = index_one(
                    path,
                    corpus_dir,
                    cfg,
                    &extractor,
                    &manifest,
                    embed_attributes,
                )
                .map_err(|e| (path.clone(), e.to_string()));
                results.lock().unwrap().push((i, outcome));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|(i, _)| *i);

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut unembedded = Vec::new();
    let mut stego_written = 0;
    for (_, outcome) in results {
        match outcome {
            Ok(per) => {
                if per.unembedded {
                    unembedded.push(per.record.id.clone());
                }
                if let (Some(img), Some(path)) = (per.embedded, per.stego_path) {
                    save_pgm(&img, &path)?;
                    stego_written += 1;
                }
                records.push(per.record);
            }
            Err((path, reason)) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped.push((path, reason));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus(corpus_dir.to_path_buf()));
    }
    let index = Index::new(
        cfg.bank.scales,
        cfg.bank.orientations,
        cfg.hash_hex(),
        records,
    )?;
    Ok(BuildReport {
        index,
        skipped,
        unembedded,
        stego_written,
    })
}

fn corpus_id(path: &Path, corpus_dir: &Path) -> String {
    let rel = path.strip_prefix(corpus_dir).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn index_one(
    path: &Path,
    corpus_dir: &Path,
    cfg: &Config,
    extractor: &FeatureExtractor,
    manifest: &[(String, String)],
    embed_attributes: bool,
) -> Result<PerImage> {
    let img = load_pnm(path)?;
    let id = corpus_id(path, corpus_dir);
    let features = extractor.features(&img)?;

    let mut attributes = vec![("id".to_string(), id.clone())];
    if let Some((_, class)) = manifest.iter().find(|(mid, _)| *mid == id) {
        attributes.push(("class".to_string(), class.clone()));
    }
    let record = IndexRecord::new(id, &features, attributes);

    if !embed_attributes {
        return Ok(PerImage {
            record,
            embedded: None,
            stego_path: None,
            unembedded: false,
        });
    }

    let payload = StegoPayload {
        features: record.features.clone(),
        attributes: record.attributes.clone(),
    };
    let bits = encode_payload(&payload)?;
    if bits.len() > capacity(&img) {
        return Ok(PerImage {
            record,
            embedded: None,
            stego_path: None,
            unembedded: true,
        });
    }
    let stego = embed(&img, &bits, &cfg.quant, cfg.parity_dc)?;
    let stego_path = path.with_extension("stego.pgm");
    Ok(PerImage {
        record,
        embedded: Some(stego),
        stego_path: Some(stego_path),
        unembedded: false,
    })
}

// ---------------------------------------------------------------------------
// Query paths

/// Ranks by the signature hidden in `stego_img` — no feature recomputation.
/// Any payload failure maps to "no embedded attributes"; the caller can fall
/// back to [`query_from_image`] explicitly if it wants to.
pub fn query_from_stego(
    stego_img: &GrayImage,
    idx: &Index,
    k: usize,
    cfg: &Config,
) -> Result<Vec<RankedResult>> {
    let payload = extract_payload_with(
        stego_img,
        &cfg.quant,
        cfg.parity_dc,
        idx.scales,
        idx.orientations,
    )
    .map_err(|e| Error::NoEmbeddedAttributes(e.to_string()))?;
    let q = normalize_rotation(&payload.features);
    rank_with(&q, idx, k, cfg.standardize)
}

/// Ranks by freshly computed features of `img`, normalized and narrowed to
/// the same f32 precision as stored records.
pub fn query_from_image(
    img: &GrayImage,
    idx: &Index,
    k: usize,
    cfg: &Config,
) -> Result<Vec<RankedResult>> {
    let features = FeatureExtractor::new(cfg.bank.clone())?.features(img)?;
    let q = normalize_rotation(&features).quantize_f32();
    rank_with(&q, idx, k, cfg.standardize)
}
