//! Simulated embeddings-as-a-service over TCP.
//!
//! Frames are newline-delimited JSON, one object per line in each
//! direction. The only supported request is
//!
//! ```text
//! {"op":"embed","texts":["..."],"defense":{...},"lang":"en"}
//! ```
//!
//! answered by `{"embeddings":[[...]],"dim":N,"queries_used":M}`, where
//! `queries_used` is the server-wide counter after the request. `defense`
//! and `lang` are optional; the defense overrides the server default and
//! `lang` selects the masking id and language mean. Failures are reported as
//! `{"error":"unknown_op" | "bad_request" | "unknown_lang"}`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::defenses::{apply_defense_stack, DefenseConfig, DefenseContext};
use crate::embedding::{BlackBoxEmbedder, Embedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub op: String,
    pub texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
    pub dim: usize,
    pub queries_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub const ERR_UNKNOWN_OP: &str = "unknown_op";
pub const ERR_BAD_REQUEST: &str = "bad_request";
pub const ERR_UNKNOWN_LANG: &str = "unknown_lang";

/// Server-side state: the embedder, the default defense and optional
/// language means for the language-agnostic stage.
pub struct EaasService {
    embedder: Arc<dyn BlackBoxEmbedder>,
    defense: DefenseConfig,
    group_means: BTreeMap<String, Embedding>,
}

impl EaasService {
    pub fn new(embedder: Arc<dyn BlackBoxEmbedder>, defense: DefenseConfig) -> Self {
        Self {
            embedder,
            defense,
            group_means: BTreeMap::new(),
        }
    }

    pub fn with_group_means(mut self, means: BTreeMap<String, Embedding>) -> Self {
        self.group_means = means;
        self
    }

    /// Handles one request line and returns the response line (without
    /// the trailing newline).
    pub fn handle_line(&self, line: &str) -> String {
        let reply = match self.handle(line) {
            Ok(resp) => serde_json::to_string(&resp),
            Err(code) => serde_json::to_string(&ErrorResponse {
                error: code.to_owned(),
            }),
        };
        reply.expect("responses always serialize")
    }

    fn handle(&self, line: &str) -> std::result::Result<EmbedResponse, &'static str> {
        let value: Value = serde_json::from_str(line).map_err(|_| ERR_BAD_REQUEST)?;
        let op = value
            .get("op")
            .and_then(Value::as_str)
            .ok_or(ERR_BAD_REQUEST)?;
        if op != "embed" {
            return Err(ERR_UNKNOWN_OP);
        }
        let req: EmbedRequest = serde_json::from_value(value).map_err(|_| ERR_BAD_REQUEST)?;
        if req.texts.is_empty() {
            return Err(ERR_BAD_REQUEST);
        }
        let defense = req.defense.as_ref().unwrap_or(&self.defense);
        defense.validate().map_err(|_| ERR_BAD_REQUEST)?;
        if let Some(masking) = &defense.masking {
            let lang = req.lang.as_deref().ok_or(ERR_UNKNOWN_LANG)?;
            masking.id_for(lang).map_err(|_| ERR_UNKNOWN_LANG)?;
        }
        if defense.language_agnostic {
            let lang = req.lang.as_deref().unwrap_or_default();
            if !self.group_means.contains_key(lang) {
                return Err(ERR_UNKNOWN_LANG);
            }
        }
        let raw = self.embedder.embed_batch(&req.texts).map_err(|e| {
            log::error!("embedding failed: {e}");
            ERR_BAD_REQUEST
        })?;
        let mut embeddings = Vec::with_capacity(raw.len());
        for (text, mut e) in req.texts.iter().zip(raw) {
            e.set_lang(req.lang.clone());
            let ctx = DefenseContext {
                sample_id: text,
                group_means: Some(&self.group_means),
                mask_lang: None,
            };
            let defended = apply_defense_stack(&e, defense, &ctx).map_err(|_| ERR_UNKNOWN_LANG)?;
            embeddings.push(defended.into_values());
        }
        Ok(EmbedResponse {
            embeddings,
            dim: self.embedder.dimension(),
            queries_used: self.embedder.queries_used(),
        })
    }
}

/// A running server; dropping it does not stop it, call [`ServerHandle::stop`].
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Open connections finish on their own when the client disconnects.
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_connection(service: &EaasService, stream: TcpStream) -> std::io::Result<()> {
    let mut writer = BufWriter::new(stream.try_clone()?);
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writer.write_all(service.handle_line(&line).as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Binds `addr` (port 0 picks a free port) and serves every connection on
/// its own thread. Requests on one connection are answered in order.
pub fn eaas_serve<A: ToSocketAddrs>(service: EaasService, addr: A) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let service = Arc::new(service);
    let flag = Arc::clone(&shutdown);
    let thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            let service = Arc::clone(&service);
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(&service, stream) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    });
    log::info!("embedding service listening on {addr}");
    Ok(ServerHandle {
        addr,
        shutdown,
        thread: Some(thread),
    })
}

/// One client connection.
pub struct EaasClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl EaasClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends one raw line and returns the raw response line.
    pub fn send_raw(&mut self, line: &str) -> Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Remote("connection closed by server".into()));
        }
        Ok(reply.trim_end().to_owned())
    }

    pub fn request(&mut self, req: &EmbedRequest) -> Result<EmbedResponse> {
        let reply = self.send_raw(&serde_json::to_string(req)?)?;
        // Typed parse first: replies carry thousands of floats and a generic
        // value tree would parse each one twice.
        match serde_json::from_str::<EmbedResponse>(&reply) {
            Ok(resp) => Ok(resp),
            Err(e) => match serde_json::from_str::<ErrorResponse>(&reply) {
                Ok(err) => Err(Error::Remote(err.error)),
                Err(_) => Err(e.into()),
            },
        }
    }
}

/// Embeds `texts` through the service, optionally overriding its defense.
pub fn eaas_embed(
    client: &mut EaasClient,
    texts: &[String],
    defense: Option<&DefenseConfig>,
    lang: Option<&str>,
) -> Result<EmbedResponse> {
    client.request(&EmbedRequest {
        op: "embed".into(),
        texts: texts.to_vec(),
        defense: defense.cloned(),
        lang: lang.map(str::to_owned),
    })
}

/// A [`BlackBoxEmbedder`] whose every query crosses the wire. The
/// dimension is known up front, as it is to anyone holding a leaked vector.
pub struct RemoteEmbedder {
    client: Mutex<EaasClient>,
    dim: usize,
    queries: AtomicU64,
}

impl RemoteEmbedder {
    pub fn connect<A: ToSocketAddrs>(addr: A, dim: usize) -> Result<Self> {
        Ok(Self {
            client: Mutex::new(EaasClient::connect(addr)?),
            dim,
            queries: AtomicU64::new(0),
        })
    }
}

impl BlackBoxEmbedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        Ok(out.remove(0))
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn queries_used(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let resp = {
            let mut client = self
                .client
                .lock()
                .map_err(|_| Error::Remote("client lock poisoned".into()))?;
            eaas_embed(&mut client, texts, None, None)?
        };
        self.queries
            .fetch_add(texts.len() as u64, Ordering::Relaxed);
        if resp.dim != self.dim || resp.embeddings.len() != texts.len() {
            return Err(Error::Remote(format!(
                "expected {} embeddings of dim {}, got {} of dim {}",
                texts.len(),
                self.dim,
                resp.embeddings.len(),
                resp.dim
            )));
        }
        resp.embeddings
            .into_iter()
            .map(|v| Embedding::new(v, None))
            .collect()
    }
}
