//! Broker/provider protocol: indexing runs where the images live, and only
//! feature records travel. Frames are a 4-byte big-endian length prefix
//! followed by a JSON object with a `type` tag; one request per connection.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::gabor::FeatureVector;
use crate::retrieval::{build_index, rank, Index, IndexRecord, RankedResult};

/// Frames larger than this are rejected on both sides.
pub const MAX_FRAME_BYTES: usize = 16 * 1024 * 1024;

const IO_TIMEOUT: Duration = Duration::from_secs(30);

/// Everything that crosses the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// Provider greeting on accept, announcing its configuration.
    Hello {
        config_hash: String,
    },
    /// Broker asks for the provider's whole archive as feature records.
    IndexRequest {
        config_hash: String,
    },
    /// One archive member, streamed.
    FeatureRecord {
        record: IndexRecord,
    },
    /// End of the record stream.
    IndexDone {
        count: usize,
    },
    /// Broker asks for the provider's local top-k.
    QueryRequest {
        config_hash: String,
        features: FeatureVector,
        k: usize,
    },
    QueryResult {
        results: Vec<RankedResult>,
    },
    Error {
        message: String,
    },
}

/// Serializes with the length prefix; refuses frames over [`MAX_FRAME_BYTES`].
pub fn frame(m: &Message) -> Result<Vec<u8>> {
    let body = serde_json::to_vec(m).map_err(|e| Error::Protocol(e.to_string()))?;
    if body.len() > MAX_FRAME_BYTES {
        return Err(Error::Protocol(format!(
            "frame of {} bytes exceeds the {MAX_FRAME_BYTES}-byte cap",
            body.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses one whole frame; the inverse of [`frame`].
pub fn unframe(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < 4 {
        return Err(Error::Protocol("short read: missing length prefix".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Protocol(format!(
            "frame of {len} bytes exceeds the {MAX_FRAME_BYTES}-byte cap"
        )));
    }
    if bytes.len() != 4 + len {
        return Err(Error::Protocol(format!(
            "short read: frame wants {len} bytes, got {}",
            bytes.len() - 4
        )));
    }
    serde_json::from_slice(&bytes[4..]).map_err(|e| Error::Protocol(e.to_string()))
}

fn write_message(w: &mut impl Write, m: &Message) -> Result<()> {
    w.write_all(&frame(m)?)?;
    Ok(())
}

fn read_message(r: &mut impl Read) -> Result<Message> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix)
        .map_err(|e| Error::Protocol(format!("short read: {e}")))?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Protocol(format!(
            "frame of {len} bytes exceeds the {MAX_FRAME_BYTES}-byte cap"
        )));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|e| Error::Protocol(format!("short read: {e}")))?;
    serde_json::from_slice(&body).map_err(|e| Error::Protocol(e.to_string()))
}

// ---------------------------------------------------------------------------
// Provider side

/// A running provider node; dropping it stops the accept loop.
pub struct Provider {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl Provider {
    /// The bound address (resolves `:0` listeners).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits (it only exits on shutdown).
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for Provider {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Archive state shared across connections: features are computed once, on
/// the first request that needs them, never per connection.
struct ProviderState {
    corpus_dir: PathBuf,
    cfg: Config,
    index: Mutex<Option<Arc<Index>>>,
}

impl ProviderState {
    fn local_index(&self) -> Result<Arc<Index>> {
        let mut guard = self.index.lock().unwrap();
        if let Some(idx) = guard.as_ref() {
            return Ok(Arc::clone(idx));
        }
        let idx = Arc::new(build_index(&self.corpus_dir, &self.cfg, false)?.index);
        *guard = Some(Arc::clone(&idx));
        Ok(idx)
    }
}

/// Binds `listen` (e.g. `"127.0.0.1:7070"`, port 0 for ephemeral) and serves
/// the archive in background threads until the returned handle is dropped.
pub fn serve_provider(listen: &str, corpus_dir: &Path, cfg: &Config) -> Result<Provider> {
    let listener = TcpListener::bind(listen)
        .map_err(|e| Error::Protocol(format!("cannot bind {listen}: {e}")))?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let state = Arc::new(ProviderState {
        corpus_dir: corpus_dir.to_path_buf(),
        cfg: cfg.clone(),
        index: Mutex::new(None),
    });
    let flag = Arc::clone(&shutdown);
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let state = Arc::clone(&state);
            std::thread::spawn(move || {
                if let Err(e) = handle_connection(stream, &state) {
                    log::debug!("connection ended: {e}");
                }
            });
        }
    });
    log::info!("provider listening on {addr}");
    Ok(Provider {
        addr,
        shutdown,
        handle: Some(handle),
    })
}

fn handle_connection(mut stream: TcpStream, state: &ProviderState) -> Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let our_hash = state.cfg.hash_hex();
    write_message(
        &mut stream,
        &Message::Hello {
            config_hash: our_hash.clone(),
        },
    )?;
    let request = read_message(&mut stream)?;
    let reply_error = |stream: &mut TcpStream, message: String| {
        let _ = write_message(stream, &Message::Error { message });
    };
    match request {
        Message::IndexRequest { config_hash } => {
            if config_hash != our_hash {
                reply_error(&mut stream, "config mismatch".into());
                return Ok(());
            }
            let idx = match state.local_index() {
                Ok(idx) => idx,
                Err(e) => {
                    reply_error(&mut stream, e.to_string());
                    return Ok(());
                }
            };
            for record in idx.records() {
                write_message(
                    &mut stream,
                    &Message::FeatureRecord {
                        record: record.clone(),
                    },
                )?;
            }
            write_message(&mut stream, &Message::IndexDone { count: idx.len() })?;
        }
        Message::QueryRequest {
            config_hash,
            features,
            k,
        } => {
            if config_hash != our_hash {
                reply_error(&mut stream, "config mismatch".into());
                return Ok(());
            }
            match state.local_index().and_then(|idx| rank(&features, &idx, k)) {
                Ok(results) => write_message(&mut stream, &Message::QueryResult { results })?,
                Err(e) => reply_error(&mut stream, e.to_string()),
            }
        }
        other => reply_error(
            &mut stream,
            format!("unexpected request {:?}", message_type(&other)),
        ),
    }
    Ok(())
}

fn message_type(m: &Message) -> &'static str {
    match m {
        Message::Hello { .. } => "hello",
        Message::IndexRequest { .. } => "index_request",
        Message::FeatureRecord { .. } => "feature_record",
        Message::IndexDone { .. } => "index_done",
        Message::QueryRequest { .. } => "query_request",
        Message::QueryResult { .. } => "query_result",
        Message::Error { .. } => "error",
    }
}

// ---------------------------------------------------------------------------
// Broker side

/// Where to find one archive and what to call it in merged ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ProviderEndpoint {
    pub label: String,
    pub host: String,
    pub port: u16,
}

impl ProviderEndpoint {
    /// Accepts `label=host:port` or bare `host:port` (the address becomes
    /// the label).
    pub fn parse(s: &str) -> Result<Self> {
        let (label, addr) = match s.split_once('=') {
            Some((l, a)) => (l.to_string(), a),
            None => (s.to_string(), s),
        };
        if label.is_empty() {
            return Err(Error::Protocol(format!("empty label in {s:?}")));
        }
        let (host, port) = addr
            .rsplit_once(':')
            .ok_or_else(|| Error::Protocol(format!("missing port in {s:?}")))?;
        let port: u16 = port
            .parse()
            .map_err(|_| Error::Protocol(format!("bad port in {s:?}")))?;
        if host.is_empty() {
            return Err(Error::Protocol(format!("empty host in {s:?}")));
        }
        Ok(Self {
            label,
            host: host.to_string(),
            port,
        })
    }

    fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

/// Parses a comma-separated endpoint list; labels must be unique.
pub fn parse_providers(list: &str) -> Result<Vec<ProviderEndpoint>> {
    let endpoints: Vec<ProviderEndpoint> = list
        .split(',')
        .filter(|s| !s.is_empty())
        .map(ProviderEndpoint::parse)
        .collect::<Result<_>>()?;
    if endpoints.is_empty() {
        return Err(Error::Protocol("empty provider list".into()));
    }
    for (i, a) in endpoints.iter().enumerate() {
        if endpoints[i + 1..].iter().any(|b| b.label == a.label) {
            return Err(Error::Protocol(format!("duplicate label {:?}", a.label)));
        }
    }
    Ok(endpoints)
}

fn connect(ep: &ProviderEndpoint) -> Result<TcpStream> {
    let addr = ep
        .address()
        .to_socket_addrs()
        .map_err(|e| Error::Protocol(format!("cannot resolve {}: {e}", ep.address())))?
        .next()
        .ok_or_else(|| Error::Protocol(format!("cannot resolve {}", ep.address())))?;
    let stream = TcpStream::connect_timeout(&addr, IO_TIMEOUT)
        .map_err(|e| Error::Protocol(format!("cannot connect to {}: {e}", ep.address())))?;
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    Ok(stream)
}

/// Opens a connection, checks the greeting's config hash, and sends one
/// request.
fn open_request(ep: &ProviderEndpoint, cfg_hash: &str, request: &Message) -> Result<TcpStream> {
    let mut stream = connect(ep)?;
    match read_message(&mut stream)? {
        Message::Hello { config_hash } if config_hash == cfg_hash => {}
        Message::Hello { .. } => return Err(Error::ConfigMismatch),
        other => {
            return Err(Error::Protocol(format!(
                "expected hello, got {}",
                message_type(&other)
            )))
        }
    }
    write_message(&mut stream, request)?;
    Ok(stream)
}

fn collect_records(ep: &ProviderEndpoint, cfg_hash: &str) -> Result<Vec<IndexRecord>> {
    let mut stream = open_request(
        ep,
        cfg_hash,
        &Message::IndexRequest {
            config_hash: cfg_hash.to_string(),
        },
    )?;
    let mut records = Vec::new();
    loop {
        match read_message(&mut stream)? {
            Message::FeatureRecord { mut record } => {
                // merged ids carry the archive label; keep the id attribute
                // in step so merged and single-node index files agree
                let prefixed = format!("{}/{}", ep.label, record.id);
                for attr in &mut record.attributes {
                    if attr.0 == "id" && attr.1 == record.id {
                        attr.1 = prefixed.clone();
                    }
                }
                record.id = prefixed;
                records.push(record);
            }
            Message::IndexDone { count } => {
                if count != records.len() {
                    return Err(Error::Protocol(format!(
                        "provider announced {count} records but sent {}",
                        records.len()
                    )));
                }
                return Ok(records);
            }
            Message::Error { message } => return Err(Error::Protocol(message)),
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected {} in record stream",
                    message_type(&other)
                )))
            }
        }
    }
}

/// What a fan-out produced besides the merged value: per-provider tallies
/// and the endpoints that failed, with reasons.
#[derive(Debug)]
pub struct DispatchReport {
    pub index: Index,
    pub per_provider: Vec<(String, usize)>,
    pub failures: Vec<(String, String)>,
}

/// Pulls every reachable provider's records concurrently, prefixes ids with
/// the archive label, and merges into one index. Partial success is explicit
/// in `failures`; only a total failure is an error.
pub fn dispatch_index(providers: &[ProviderEndpoint], cfg: &Config) -> Result<DispatchReport> {
    let outcomes = fan_out(providers, |ep| collect_records(ep, &cfg.hash_hex()));
    let mut records = Vec::new();
    let mut per_provider = Vec::new();
    let mut failures = Vec::new();
    for (ep, outcome) in providers.iter().zip(outcomes) {
        match outcome {
            Ok(batch) => {
                per_provider.push((ep.label.clone(), batch.len()));
                records.extend(batch);
            }
            Err(e) => failures.push((ep.label.clone(), e.to_string())),
        }
    }
    if per_provider.is_empty() {
        return Err(Error::AllProvidersFailed(summarize_failures(&failures)));
    }
    let index = Index::new(
        cfg.bank.scales,
        cfg.bank.orientations,
        cfg.hash_hex(),
        records,
    )?;
    Ok(DispatchReport {
        index,
        per_provider,
        failures,
    })
}

/// Merged remote ranking plus the providers that could not answer.
#[derive(Debug)]
pub struct RemoteQueryReport {
    pub results: Vec<RankedResult>,
    pub failures: Vec<(String, String)>,
}

/// Fans `q` (already rotation-normalized) out to every provider, merges the
/// per-provider top-k lists, re-sorts by (distance, labeled id), and
/// truncates to k.
pub fn remote_query(
    providers: &[ProviderEndpoint],
    q: &FeatureVector,
    k: usize,
    cfg: &Config,
) -> Result<RemoteQueryReport> {
    let cfg_hash = cfg.hash_hex();
    let outcomes = fan_out(providers, |ep| {
        let mut stream = open_request(
            ep,
            &cfg_hash,
            &Message::QueryRequest {
                config_hash: cfg_hash.clone(),
                features: q.clone(),
                k,
            },
        )?;
        match read_message(&mut stream)? {
            Message::QueryResult { mut results } => {
                for r in &mut results {
                    r.id = format!("{}/{}", ep.label, r.id);
                }
                Ok(results)
            }
            Message::Error { message } => Err(Error::Protocol(message)),
            other => Err(Error::Protocol(format!(
                "expected query_result, got {}",
                message_type(&other)
            ))),
        }
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut any_ok = false;
    for (ep, outcome) in providers.iter().zip(outcomes) {
        match outcome {
            Ok(batch) => {
                any_ok = true;
                results.extend(batch);
            }
            Err(e) => failures.push((ep.label.clone(), e.to_string())),
        }
    }
    if !any_ok {
        return Err(Error::AllProvidersFailed(summarize_failures(&failures)));
    }
    results.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    results.truncate(k);
    Ok(RemoteQueryReport { results, failures })
}

/// Runs `task` against every endpoint on its own thread; outcomes come back
/// in endpoint order regardless of completion order.
fn fan_out<T: Send>(
    providers: &[ProviderEndpoint],
    task: impl Fn(&ProviderEndpoint) -> Result<T> + Sync,
) -> Vec<Result<T>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = providers
            .iter()
            .map(|ep| scope.spawn(|| task(ep)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn summarize_failures(failures: &[(String, String)]) -> String {
    failures
        .iter()
        .map(|(label, reason)| format!("{label}: {reason}"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> IndexRecord {
        IndexRecord {
            id: "a.pgm".into(),
            features: FeatureVector {
                scales: 2,
                orientations: 2,
                values: vec![0.5, 0.25, 1.0, 2.0, 3.5, 0.125, 7.0, 0.0625],
                dominant_orientation: 0,
            },
            attributes: vec![("id".into(), "a.pgm".into())],
        }
    }

    fn all_message_kinds() -> Vec<Message> {
        vec![
            Message::Hello {
                config_hash: "00ff".repeat(4),
            },
            Message::IndexRequest {
                config_hash: "00ff".repeat(4),
            },
            Message::FeatureRecord {
                record: sample_record(),
            },
            Message::IndexDone { count: 3 },
            Message::QueryRequest {
                config_hash: "abcd".repeat(4),
                features: sample_record().features,
                k: 10,
            },
            Message::QueryResult {
                results: vec![
                    RankedResult {
                        id: "x".into(),
                        distance: 1.25,
                    },
                    RankedResult {
                        id: "y".into(),
                        distance: 2.5,
                    },
                ],
            },
            Message::Error {
                message: "config mismatch".into(),
            },
        ]
    }

    #[test]
    fn every_message_round_trips() {
        for m in all_message_kinds() {
            let bytes = frame(&m).unwrap();
            assert_eq!(unframe(&bytes).unwrap(), m, "{}", message_type(&m));
        }
    }

    #[test]
    fn prefix_equals_body_length_and_type_tag_is_snake_case() {
        let m = Message::Hello {
            config_hash: "0123456789abcdef".into(),
        };
        let bytes = frame(&m).unwrap();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
        let body: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(body["type"], "hello");
        assert_eq!(body["config_hash"], "0123456789abcdef");
    }

    #[test]
    fn truncated_and_oversized_frames_are_rejected() {
        let bytes = frame(&Message::IndexDone { count: 5 }).unwrap();
        for cut in [0, 3, bytes.len() - 1] {
            let err = unframe(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("short read"), "cut={cut}: {err}");
        }
        // same behavior through the stream reader
        let err = read_message(&mut &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("short read"));

        let mut huge = Vec::new();
        huge.extend_from_slice(&(MAX_FRAME_BYTES as u32 + 1).to_be_bytes());
        assert!(matches!(unframe(&huge), Err(Error::Protocol(_))));
    }

    #[test]
    fn unknown_type_is_a_protocol_error() {
        let body = br#"{"type":"warp_core_request"}"#;
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&(body.len() as u32).to_be_bytes());
        bytes.extend_from_slice(body);
        assert!(matches!(unframe(&bytes), Err(Error::Protocol(_))));
        assert!(matches!(
            unframe(b"\x00\x00\x00\x02{}"),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn feature_values_cross_the_wire_losslessly() {
        // bulk check with awkward mantissas; requires exact (not
        // best-effort) float parsing on the receiving side
        let mut state = 0x8badf00du64;
        let mut values = Vec::new();
        for _ in 0..512 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let v = (state >> 11) as f64 / (1u64 << 53) as f64 * 1e3;
            values.push(v as f32 as f64);
            values.push(v); // full-width f64s must survive too
        }
        let mut record = sample_record();
        record.features.scales = 256;
        record.features.values = values;
        let m = Message::FeatureRecord { record };
        assert_eq!(unframe(&frame(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn endpoint_parsing_accepts_both_forms() {
        let ep = ProviderEndpoint::parse("rocks=127.0.0.1:7070").unwrap();
        assert_eq!(
            ep,
            ProviderEndpoint {
                label: "rocks".into(),
                host: "127.0.0.1".into(),
                port: 7070
            }
        );
        let ep = ProviderEndpoint::parse("localhost:9000").unwrap();
        assert_eq!(ep.label, "localhost:9000");
        assert_eq!(ep.host, "localhost");
        assert_eq!(ep.port, 9000);

        for bad in ["", "=1.2.3.4:5", "host-only", "h:notaport", ":70"] {
            assert!(ProviderEndpoint::parse(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn provider_lists_require_unique_labels() {
        let eps = parse_providers("a=h1:1,b=h2:2").unwrap();
        assert_eq!(eps.len(), 2);
        assert!(matches!(
            parse_providers("a=h1:1,a=h2:2"),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(parse_providers(""), Err(Error::Protocol(_))));
    }
}
