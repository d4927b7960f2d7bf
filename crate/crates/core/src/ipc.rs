//! Request/response framing for out-of-process model backends.
//!
//! Every message is the 8-byte magic `C123GUID`, a little-endian `u32` byte
//! length, that many bytes of a single-line UTF-8 JSON header ending in
//! `\n`, then the raw rasters listed in the header's `rasters` shapes, each as
//! row-major little-endian `f32`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::boundary::EmbeddingModel;
use crate::error::{Error, Result};
use crate::evalkit::PerceptualMetric;
use crate::guidance::{Conditioning, ConditioningKind, NoisePredictor, NoiseQuery, NoiseSchedule};
use crate::raster::Raster;
use crate::scene::camera::{Mat3, Vec3};

pub const MAGIC: &[u8; 8] = b"C123GUID";

/// Upper bound on a header, to fail fast on garbage streams.
const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RequestKind {
    /// Text-conditioned noise prediction; rasters `[z_t]`.
    Text,
    /// Image-and-pose-conditioned noise prediction; rasters `[z_t, reference]`.
    ImagePose,
    /// Embedding of `prompt` (no rasters) or of one image raster.
    Embed,
    /// Noise schedule query; the reply carries `ᾱ` as a `1 × 1 × T` raster.
    Schedule,
    /// Perceptual distance between two image rasters.
    Perceptual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseHeader {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub fov: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub id: u64,
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseHeader>,
    /// Relative rotation of the guided view in the reference frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Mat3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<[f64; 3]>,
    #[serde(default)]
    pub rasters: Vec<[usize; 3]>,
}

impl RequestHeader {
    pub fn new(id: u64, kind: RequestKind) -> Self {
        Self {
            id,
            kind,
            t: None,
            prompt: None,
            pose: None,
            rotation: None,
            translation: None,
            background: None,
            rasters: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub rasters: Vec<[usize; 3]>,
}

trait HasShapes {
    fn shapes_mut(&mut self) -> &mut Vec<[usize; 3]>;
    fn shapes(&self) -> &[[usize; 3]];
}

impl HasShapes for RequestHeader {
    fn shapes_mut(&mut self) -> &mut Vec<[usize; 3]> {
        &mut self.rasters
    }
    fn shapes(&self) -> &[[usize; 3]] {
        &self.rasters
    }
}

impl HasShapes for ResponseHeader {
    fn shapes_mut(&mut self) -> &mut Vec<[usize; 3]> {
        &mut self.rasters
    }
    fn shapes(&self) -> &[[usize; 3]] {
        &self.rasters
    }
}

fn encode_frame<H: Serialize + HasShapes + Clone>(header: &H, rasters: &[&Raster]) -> Result<Vec<u8>> {
    let mut header = header.clone();
    *header.shapes_mut() = rasters.iter().map(|r| r.shape()).collect();
    let mut line = serde_json::to_string(&header).map_err(|e| Error::backend(format!("header encode: {e}")))?;
    line.push('\n');
    let len = u32::try_from(line.len()).map_err(|_| Error::backend("header too long"))?;
    let payload: usize = rasters.iter().map(|r| r.len()).sum();
    let mut out = Vec::with_capacity(12 + line.len() + 4 * payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(line.as_bytes());
    for r in rasters {
        for v in r.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_frame<H: DeserializeOwned + HasShapes, R: Read>(mut r: R) -> Result<(H, Vec<Raster>)> {
    let io = |e: std::io::Error| Error::backend(format!("ipc read: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::backend(format!("bad frame magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(io)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(Error::backend(format!("frame header of {len} bytes exceeds limit")));
    }
    let mut line = vec![0u8; len as usize];
    r.read_exact(&mut line).map_err(io)?;
    let line = String::from_utf8(line).map_err(|e| Error::backend(format!("header is not UTF-8: {e}")))?;
    let line = line
        .strip_suffix('\n')
        .ok_or_else(|| Error::backend("frame header is not newline-terminated"))?;
    if line.contains('\n') {
        return Err(Error::backend("frame header spans several lines"));
    }
    let header: H = serde_json::from_str(line).map_err(|e| Error::backend(format!("header decode: {e}")))?;
    let mut rasters = Vec::with_capacity(header.shapes().len());
    for &[h, w, c] in header.shapes() {
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::backend("raster shape overflows"))?;
        let mut bytes = vec![0u8; 4 * n];
        r.read_exact(&mut bytes).map_err(io)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        rasters.push(Raster::from_vec(h, w, c, data)?);
    }
    Ok((header, rasters))
}

pub fn encode_request(header: &RequestHeader, rasters: &[&Raster]) -> Result<Vec<u8>> {
    encode_frame(header, rasters)
}

pub fn encode_response(header: &ResponseHeader, rasters: &[&Raster]) -> Result<Vec<u8>> {
    encode_frame(header, rasters)
}

pub fn read_request<R: Read>(r: R) -> Result<(RequestHeader, Vec<Raster>)> {
    decode_frame(r)
}

pub fn read_response<R: Read>(r: R) -> Result<(ResponseHeader, Vec<Raster>)> {
    decode_frame(r)
}

enum Stream {
    Tcp(TcpStream),
    Unix(UnixStream),
}

impl Stream {
    fn try_clone(&self) -> std::io::Result<Stream> {
        Ok(match self {
            Stream::Tcp(s) => Stream::Tcp(s.try_clone()?),
            Stream::Unix(s) => Stream::Unix(s.try_clone()?),
        })
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            Stream::Unix(s) => s.write(buf),
        }
    }
    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            Stream::Unix(s) => s.flush(),
        }
    }
}

struct Connection {
    reader: BufReader<Stream>,
    writer: BufWriter<Stream>,
}

/// Blocking client for one backend endpoint. The address is `host:port`
/// for TCP, or `unix:<path>` / an absolute path for a Unix socket.
pub struct IpcClient {
    address: String,
    conn: Mutex<Connection>,
    next_id: AtomicU64,
}

impl IpcClient {
    pub fn connect(address: &str) -> Result<Self> {
        let cause = |e: std::io::Error| Error::backend(format!("cannot connect to {address}: {e}"));
        let stream = if let Some(path) = address.strip_prefix("unix:") {
            Stream::Unix(UnixStream::connect(path).map_err(cause)?)
        } else if address.starts_with('/') {
            Stream::Unix(UnixStream::connect(address).map_err(cause)?)
        } else {
            let s = TcpStream::connect(address).map_err(cause)?;
            s.set_nodelay(true).ok();
            Stream::Tcp(s)
        };
        let reader = BufReader::new(stream.try_clone().map_err(cause)?);
        Ok(Self {
            address: address.to_owned(),
            conn: Mutex::new(Connection {
                reader,
                writer: BufWriter::new(stream),
            }),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    /// Sends one request and waits for its response.
    pub fn call(&self, mut header: RequestHeader, rasters: &[&Raster]) -> Result<(ResponseHeader, Vec<Raster>)> {
        header.id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let bytes = encode_request(&header, rasters)?;
        let mut conn = self.conn.lock().map_err(|_| Error::backend("ipc connection poisoned"))?;
        let io = |e: std::io::Error| Error::backend(format!("ipc write to {}: {e}", self.address));
        conn.writer.write_all(&bytes).map_err(io)?;
        conn.writer.flush().map_err(io)?;
        let (resp, out) = read_response(&mut conn.reader)?;
        if resp.id != header.id {
            return Err(Error::backend(format!(
                "response id {} does not match request id {}",
                resp.id, header.id
            )));
        }
        if let Some(err) = &resp.error {
            return Err(Error::backend(format!("{}: {err}", self.address)));
        }
        Ok((resp, out))
    }
}

fn single_raster(mut rasters: Vec<Raster>, what: &str) -> Result<Raster> {
    if rasters.len() != 1 {
        return Err(Error::backend(format!("{what}: expected one raster, got {}", rasters.len())));
    }
    Ok(rasters.remove(0))
}

/// Noise predictor served by a remote process. The remote owns its latent
/// encoder; rasters cross the wire in image space.
pub struct IpcPredictor {
    client: IpcClient,
    schedule: NoiseSchedule,
}

impl IpcPredictor {
    pub fn new(client: IpcClient) -> Result<Self> {
        let (_, rasters) = client.call(RequestHeader::new(0, RequestKind::Schedule), &[])?;
        let values = single_raster(rasters, "schedule")?.into_vec();
        let schedule = NoiseSchedule::new(values)?;
        Ok(Self { client, schedule })
    }

    pub fn connect(address: &str) -> Result<Self> {
        Self::new(IpcClient::connect(address)?)
    }
}

impl NoisePredictor for IpcPredictor {
    fn name(&self) -> &str {
        self.client.address()
    }

    fn accepts(&self, _kind: ConditioningKind) -> bool {
        true
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn predict_noise(&self, query: &NoiseQuery<'_>) -> Result<Raster> {
        let view = query.condition.view();
        let pose = PoseHeader {
            azimuth: view.pose.azimuth,
            elevation: view.pose.elevation,
            radius: view.pose.radius,
            fov: view.pose.fov,
        };
        let (mut header, rasters): (RequestHeader, Vec<&Raster>) = match query.condition {
            Conditioning::Text { prompt, .. } => {
                let mut h = RequestHeader::new(0, RequestKind::Text);
                h.prompt = Some(prompt.clone());
                (h, vec![query.noisy_latent])
            }
            Conditioning::ImagePose { reference_image, .. } => {
                let mut h = RequestHeader::new(0, RequestKind::ImagePose);
                let (r, t) = query.condition.relative_extrinsics().expect("image-pose conditioning");
                h.rotation = Some(r);
                h.translation = Some(t);
                (h, vec![query.noisy_latent, reference_image])
            }
        };
        header.t = Some(query.t_diff);
        header.pose = Some(pose);
        header.background = Some(view.background);
        let (resp, out) = self.client.call(header, &rasters)?;
        if let Some(ab) = resp.alpha_bar {
            let local = self.schedule.alpha_bar(query.t_diff)?;
            if (ab - local).abs() > 1e-6 {
                return Err(Error::backend(format!(
                    "remote ᾱ_{} = {ab} disagrees with the advertised schedule ({local})",
                    query.t_diff
                )));
            }
        }
        single_raster(out, "noise prediction")
    }
}

/// Embedding model served by a remote process.
pub struct IpcEmbedding {
    client: IpcClient,
    dimension: OnceLock<usize>,
}

impl IpcEmbedding {
    pub fn new(client: IpcClient) -> Self {
        Self {
            client,
            dimension: OnceLock::new(),
        }
    }

    pub fn connect(address: &str) -> Result<Self> {
        Ok(Self::new(IpcClient::connect(address)?))
    }

    fn embed(&self, header: RequestHeader, rasters: &[&Raster]) -> Result<Vec<f64>> {
        let (_, out) = self.client.call(header, rasters)?;
        let v = single_raster(out, "embedding")?.into_vec();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::backend("remote embedding has zero or non-finite norm"));
        }
        let dim = *self.dimension.get_or_init(|| v.len());
        if v.len() != dim {
            return Err(Error::backend(format!("embedding length {} != {dim}", v.len())));
        }
        // f32 transport loses the exact unit norm.
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

impl EmbeddingModel for IpcEmbedding {
    fn dimension(&self) -> usize {
        self.dimension.get().copied().unwrap_or(0)
    }

    fn embed_image(&self, image: &Raster) -> Result<Vec<f64>> {
        self.embed(RequestHeader::new(0, RequestKind::Embed), &[image])
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut h = RequestHeader::new(0, RequestKind::Embed);
        h.prompt = Some(text.to_owned());
        self.embed(h, &[])
    }
}

/// Perceptual distance served by a remote process.
pub struct IpcPerceptual {
    client: IpcClient,
}

impl IpcPerceptual {
    pub fn connect(address: &str) -> Result<Self> {
        Ok(Self {
            client: IpcClient::connect(address)?,
        })
    }
}

impl PerceptualMetric for IpcPerceptual {
    fn distance(&self, a: &Raster, b: &Raster) -> Result<f64> {
        let (_, out) = self.client.call(RequestHeader::new(0, RequestKind::Perceptual), &[a, b])?;
        let v = single_raster(out, "perceptual distance")?;
        if v.len() != 1 {
            return Err(Error::backend("perceptual reply must hold one value"));
        }
        Ok(v.data()[0])
    }
}
