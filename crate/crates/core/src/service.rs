//! Mock victim services and the latency-injection proxy.
//!
//! Wire protocol (newline-framed, keys up to 64 ASCII bytes, no whitespace):
//!
//! ```text
//! -> SET <key> <len>\n<len raw bytes>
//! <- OK\n                | ERR <reason>\n
//! -> GET <key>\n
//! <- VALUE <len>\n<bytes> | ERR <reason>\n
//! ```
//!
//! The key-value flavor mirrors a cache that compresses values above a size
//! threshold when a 1.3 compression factor is met; the cell flavor mirrors a
//! database cell store that keeps a value compressed only when at least 25%
//! of its size is saved. With colocation enabled the service prepends its
//! own prefix-plus-secret to every stored value before compression and
//! strips it from responses, so no secret byte ever leaves the service.

use crate::codec::{self, AcceptancePolicy, CodecId, CompressedBlob, CompressionLevel};
use crate::error::{Error, Result};
use crate::timing::Clock;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::thread::JoinHandle;
use std::time::Duration;

pub const MAX_KEY_LEN: usize = 64;
pub const MAX_VALUE_LEN: usize = 16 * 1024 * 1024;

/// Which storage behavior the service mimics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceFlavor {
    KvMemcached,
    CellPglz,
}

use serde::{Deserialize, Serialize};

/// Full configuration of one victim service instance.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub flavor: ServiceFlavor,
    pub codec: CodecId,
    pub level: CompressionLevel,
    pub policy: AcceptancePolicy,
    pub secret: Vec<u8>,
    pub secret_prefix: Vec<u8>,
    pub colocate: bool,
    /// Diagnostic switch: skip decompression on GET and return payload bytes
    /// directly. Only used to isolate the decompression share of response
    /// latency; never exposed on the command line as an attack option.
    pub bypass_decompression: bool,
}

impl ServiceConfig {
    /// Cache-style service: 2000-byte threshold, 1.3 compression factor.
    pub fn kv_memcached(secret: Vec<u8>, secret_prefix: Vec<u8>) -> Self {
        ServiceConfig {
            flavor: ServiceFlavor::KvMemcached,
            codec: CodecId::Deflate,
            level: CodecId::Deflate.default_level(),
            policy: AcceptancePolicy::memcached(),
            secret,
            secret_prefix,
            colocate: true,
            bypass_decompression: false,
        }
    }

    /// Database-cell-style service: 25% minimum savings.
    pub fn cell_pglz(secret: Vec<u8>, secret_prefix: Vec<u8>) -> Self {
        ServiceConfig {
            flavor: ServiceFlavor::CellPglz,
            codec: CodecId::Pglz,
            level: CodecId::Pglz.default_level(),
            policy: AcceptancePolicy::pglz(),
            secret,
            secret_prefix,
            colocate: true,
            bypass_decompression: false,
        }
    }

    fn secret_region_len(&self) -> usize {
        if self.colocate {
            self.secret_prefix.len() + self.secret.len()
        } else {
            0
        }
    }
}

/// Anything that can sit behind the wire protocol.
pub trait WireStore: Send {
    fn set(&mut self, key: &str, value: Vec<u8>) -> Result<()>;
    fn get(&mut self, key: &str) -> Result<Vec<u8>>;
}

/// The storage engine of both service flavors, usable directly in tests.
pub struct ServiceState {
    config: ServiceConfig,
    entries: HashMap<String, CompressedBlob>,
    scratch: Vec<u8>,
}

impl ServiceState {
    pub fn new(config: ServiceConfig) -> Self {
        ServiceState {
            config,
            entries: HashMap::new(),
            scratch: Vec::new(),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Whether a key is currently stored compressed. Diagnostic surface for
    /// tests; not reachable over the wire.
    pub fn stored_compressed(&self, key: &str) -> Option<bool> {
        self.entries.get(key).map(|b| !b.stored_raw)
    }
}

impl WireStore for ServiceState {
    fn set(&mut self, key: &str, value: Vec<u8>) -> Result<()> {
        let data = if self.config.colocate {
            let mut buf =
                Vec::with_capacity(self.config.secret_region_len() + value.len());
            buf.extend_from_slice(&self.config.secret_prefix);
            buf.extend_from_slice(&self.config.secret);
            buf.extend_from_slice(&value);
            buf
        } else {
            value
        };
        let blob = codec::store_with_policy(
            &self.config.policy,
            self.config.codec,
            self.config.level,
            &data,
        )?;
        self.entries.insert(key.to_string(), blob);
        Ok(())
    }

    fn get(&mut self, key: &str) -> Result<Vec<u8>> {
        let blob = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Protocol(format!("no such key {key}")))?;
        let skip = self.config.secret_region_len();
        if self.config.bypass_decompression {
            let end = blob.payload.len().min(blob.original_len);
            return Ok(blob.payload[skip.min(end)..end].to_vec());
        }
        // Full decompression always runs, even though only the client region
        // is returned.
        codec::decompress_into(blob, &mut self.scratch)?;
        Ok(self.scratch[skip..].to_vec())
    }
}

/// Handle to a running server; dropping it does not stop the server, call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Serve a store on `endpoint` (e.g. `127.0.0.1:7171`, or port 0 to pick a
/// free one). Connections are handled concurrently; store operations are
/// serialized so at most one compress/decompress runs at a time.
pub fn serve(store: Arc<Mutex<dyn WireStore>>, endpoint: &str) -> Result<ServerHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let accept_thread = std::thread::spawn(move || {
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let store = Arc::clone(&store);
                    let stop3 = Arc::clone(&stop2);
                    std::thread::spawn(move || {
                        let _ = handle_connection(stream, store, stop3);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(_) => break,
            }
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

/// Convenience: serve a fresh victim service with the given config.
pub fn serve_victim(config: ServiceConfig, endpoint: &str) -> Result<ServerHandle> {
    serve(Arc::new(Mutex::new(ServiceState::new(config))), endpoint)
}

fn handle_connection(
    stream: TcpStream,
    store: Arc<Mutex<dyn WireStore>>,
    stop: Arc<AtomicBool>,
) -> Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut line = String::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()), // client gone
            Ok(_) => {}
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        match execute_command(line.trim_end_matches(['\r', '\n']), &mut reader, &store) {
            Ok(Response::Ok) => writer.write_all(b"OK\n")?,
            Ok(Response::Value(bytes)) => {
                // One buffered write so header and body leave together.
                let mut out = Vec::with_capacity(16 + bytes.len());
                out.extend_from_slice(format!("VALUE {}\n", bytes.len()).as_bytes());
                out.extend_from_slice(&bytes);
                writer.write_all(&out)?;
            }
            Err(Error::Transport(e)) => return Err(Error::Transport(e)),
            Err(e) => {
                let msg = e.to_string().replace('\n', " ");
                writer.write_all(format!("ERR {msg}\n").as_bytes())?;
            }
        }
        writer.flush()?;
    }
}

enum Response {
    Ok,
    Value(Vec<u8>),
}

fn execute_command(
    line: &str,
    reader: &mut BufReader<TcpStream>,
    store: &Arc<Mutex<dyn WireStore>>,
) -> Result<Response> {
    let mut parts = line.split(' ');
    let verb = parts.next().unwrap_or("");
    match verb {
        "SET" => {
            let key = parts.next().ok_or_else(|| Error::Protocol("SET needs a key".into()))?;
            let len: usize = parts
                .next()
                .ok_or_else(|| Error::Protocol("SET needs a length".into()))?
                .parse()
                .map_err(|_| Error::Protocol("bad length".into()))?;
            if parts.next().is_some() {
                return Err(Error::Protocol("trailing tokens after SET".into()));
            }
            if len > MAX_VALUE_LEN {
                discard_exact(reader, len)?;
                return Err(Error::Protocol(format!("value too large ({len})")));
            }
            // The body must be consumed before any rejection so the stream
            // stays framed for the next command.
            let mut value = vec![0u8; len];
            read_exact_with_retry(reader, &mut value)?;
            validate_key(key)?;
            let mut guard = store.lock().unwrap_or_else(PoisonError::into_inner);
            guard.set(key, value)?;
            Ok(Response::Ok)
        }
        "GET" => {
            let key = parts.next().ok_or_else(|| Error::Protocol("GET needs a key".into()))?;
            validate_key(key)?;
            if parts.next().is_some() {
                return Err(Error::Protocol("trailing tokens after GET".into()));
            }
            let mut guard = store.lock().unwrap_or_else(PoisonError::into_inner);
            Ok(Response::Value(guard.get(key)?))
        }
        other => Err(Error::Protocol(format!("unknown command {other:?}"))),
    }
}

fn discard_exact(reader: &mut BufReader<TcpStream>, mut remaining: usize) -> Result<()> {
    let mut chunk = [0u8; 16384];
    while remaining > 0 {
        let take = remaining.min(chunk.len());
        read_exact_with_retry(reader, &mut chunk[..take])?;
        remaining -= take;
    }
    Ok(())
}

fn read_exact_with_retry(reader: &mut BufReader<TcpStream>, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Transport(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "client closed mid-value",
                )))
            }
            Ok(n) => filled += n,
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn validate_key(key: &str) -> Result<()> {
    if key.is_empty() || key.len() > MAX_KEY_LEN {
        return Err(Error::Protocol(format!("key length {} invalid", key.len())));
    }
    if !key.bytes().all(|b| b.is_ascii_graphic()) {
        return Err(Error::Protocol("key must be printable ASCII without whitespace".into()));
    }
    Ok(())
}

/// Client for the wire protocol with round-trip timing on fetches.
pub struct KvClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    clock: &'static dyn Clock,
}

impl KvClient {
    pub fn connect(endpoint: &str) -> Result<Self> {
        let addr = endpoint
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Protocol(format!("cannot resolve {endpoint}")))?;
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(KvClient {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            clock: crate::timing::default_clock(),
        })
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(Error::Transport(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "server closed connection",
            )));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }

    pub fn set(&mut self, key: &str, value: &[u8]) -> Result<()> {
        let mut msg = Vec::with_capacity(key.len() + value.len() + 16);
        msg.extend_from_slice(format!("SET {key} {}\n", value.len()).as_bytes());
        msg.extend_from_slice(value);
        self.writer.write_all(&msg)?;
        self.writer.flush()?;
        let line = self.read_line()?;
        if line == "OK" {
            Ok(())
        } else {
            Err(Error::Protocol(line))
        }
    }

    pub fn get(&mut self, key: &str) -> Result<Vec<u8>> {
        Ok(self.get_timed(key)?.0)
    }

    /// Fetch a value and report the request-to-last-byte round trip time.
    pub fn get_timed(&mut self, key: &str) -> Result<(Vec<u8>, u64)> {
        let msg = format!("GET {key}\n");
        let t0 = self.clock.now_ns();
        self.writer.write_all(msg.as_bytes())?;
        self.writer.flush()?;
        let line = self.read_line()?;
        let value = if let Some(rest) = line.strip_prefix("VALUE ") {
            let len: usize = rest
                .parse()
                .map_err(|_| Error::Protocol(format!("bad VALUE header {line:?}")))?;
            let mut buf = vec![0u8; len];
            self.reader.read_exact(&mut buf)?;
            buf
        } else {
            return Err(Error::Protocol(line));
        };
        let t1 = self.clock.now_ns();
        Ok((value, t1.saturating_sub(t0)))
    }
}

/// Latency model of the proxy: a fixed per-hop delay plus one-sided Gaussian
/// jitter, applied to each message in each direction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub base_delay_ms: f64,
    pub jitter_stddev_ms: f64,
    pub hops: u32,
    pub seed: u64,
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_delay_ms < 0.0 || self.jitter_stddev_ms < 0.0 {
            return Err(Error::config("proxy", "delays must be non-negative"));
        }
        Ok(())
    }
}

/// Deterministic per-message delay stream: base×hops plus
/// max(0, N(0, stddev)).
pub struct JitterStream {
    base_ns: u64,
    normal: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl JitterStream {
    pub fn new(config: &ProxyConfig, stream_seed: u64) -> Self {
        let base_ns = (config.base_delay_ms * config.hops as f64 * 1e6) as u64;
        let normal = if config.jitter_stddev_ms > 0.0 {
            Some(Normal::new(0.0, config.jitter_stddev_ms * 1e6).expect("valid stddev"))
        } else {
            None
        };
        JitterStream {
            base_ns,
            normal,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ stream_seed),
        }
    }

    pub fn next_delay(&mut self) -> Duration {
        let jitter = match &self.normal {
            Some(n) => n.sample(&mut self.rng).max(0.0) as u64,
            None => 0,
        };
        Duration::from_nanos(self.base_ns + jitter)
    }
}

/// Run a TCP proxy injecting the configured delay into every message both
/// ways. An unreachable upstream surfaces to clients as an immediately
/// closed connection.
pub fn proxy(config: ProxyConfig, upstream: &str, listen: &str) -> Result<ServerHandle> {
    config.validate()?;
    let upstream_addr: SocketAddr = upstream
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::Protocol(format!("cannot resolve {upstream}")))?;
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let conn_counter = Arc::new(AtomicU64::new(0));
    let accept_thread = std::thread::spawn(move || {
        while !stop2.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((client, _)) => {
                    let conn_id = conn_counter.fetch_add(1, Ordering::SeqCst);
                    let stop3 = Arc::clone(&stop2);
                    std::thread::spawn(move || {
                        let _ = run_proxy_connection(client, upstream_addr, config, conn_id, stop3);
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(_) => break,
            }
        }
    });
    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
    })
}

fn run_proxy_connection(
    client: TcpStream,
    upstream_addr: SocketAddr,
    config: ProxyConfig,
    conn_id: u64,
    stop: Arc<AtomicBool>,
) -> Result<()> {
    let upstream = match TcpStream::connect(upstream_addr) {
        Ok(s) => s,
        Err(_) => return Ok(()), // refused passthrough: drop the client
    };
    client.set_nodelay(true)?;
    upstream.set_nodelay(true)?;
    let c2u = pump(
        client.try_clone()?,
        upstream.try_clone()?,
        JitterStream::new(&config, conn_id.wrapping_mul(2)),
        Arc::clone(&stop),
    );
    let u2c = pump(
        upstream,
        client,
        JitterStream::new(&config, conn_id.wrapping_mul(2) + 1),
        stop,
    );
    let _ = c2u.join();
    let _ = u2c.join();
    Ok(())
}

fn pump(
    mut from: TcpStream,
    mut to: TcpStream,
    mut jitter: JitterStream,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let _ = from.set_read_timeout(Some(Duration::from_millis(200)));
        let mut buf = [0u8; 16384];
        loop {
            if stop.load(Ordering::SeqCst) {
                return;
            }
            match from.read(&mut buf) {
                Ok(0) => {
                    let _ = to.shutdown(std::net::Shutdown::Write);
                    return;
                }
                Ok(n) => {
                    std::thread::sleep(jitter.next_delay());
                    if to.write_all(&buf[..n]).is_err() {
                        return;
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(_) => return,
            }
        }
    })
}
