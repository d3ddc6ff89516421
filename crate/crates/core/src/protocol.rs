//! Length-prefixed binary frames for external denoisers and samplers.
//!
//! ```text
//! request  = "UQX1" | opcode u8 | height u32 | width u32 | count u32 | count·h·w f32
//! response = "UQX1" | status u8 | height u32 | width u32 | count u32 | body
//! ```
//!
//! All integers and floats are little-endian, images row-major. An ok
//! response (status 0) carries `count·h·w` f32 values. An error response
//! (status 1) echoes the request header when it could be parsed (zeros
//! otherwise) and its body is `len u32 | len bytes of UTF-8`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, Command, Stdio};

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::image::Image;

pub const MAGIC: &[u8; 4] = b"UQX1";
pub const OP_DENOISE: u8 = 1;
pub const OP_SAMPLE: u8 = 2;
pub const STATUS_OK: u8 = 0;
pub const STATUS_ERROR: u8 = 1;
/// Upper bound on `count·h·w`; larger frames are rejected before allocating.
pub const MAX_PAYLOAD_VALUES: u64 = 1 << 24;
const MAX_MESSAGE_BYTES: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub code: u8,
    pub height: u32,
    pub width: u32,
    pub count: u32,
}

impl Header {
    fn values(&self) -> u64 {
        self.height as u64 * self.width as u64 * self.count as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Header,
    pub payload: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(Frame),
    Error { header: Header, message: String },
}

fn read_header(r: &mut impl Read) -> Result<Option<Header>> {
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut magic[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(Error::Protocol("truncated magic".into())),
            k => filled += k,
        }
    }
    if &magic != MAGIC {
        return Err(Error::Protocol(format!("bad magic {magic:02x?}")));
    }
    let mut rest = [0u8; 13];
    r.read_exact(&mut rest)
        .map_err(|_| Error::Protocol("truncated header".into()))?;
    let word = |i: usize| u32::from_le_bytes(rest[i..i + 4].try_into().unwrap());
    Ok(Some(Header {
        code: rest[0],
        height: word(1),
        width: word(5),
        count: word(9),
    }))
}

fn write_header(w: &mut impl Write, h: &Header) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[h.code])?;
    w.write_all(&h.height.to_le_bytes())?;
    w.write_all(&h.width.to_le_bytes())?;
    w.write_all(&h.count.to_le_bytes())
}

fn read_payload(r: &mut impl Read, values: u64) -> Result<Vec<f32>> {
    if values > MAX_PAYLOAD_VALUES {
        return Err(Error::Protocol(format!(
            "payload of {values} values exceeds limit {MAX_PAYLOAD_VALUES}"
        )));
    }
    let mut bytes = vec![0u8; values as usize * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Protocol("truncated payload".into()))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_payload(w: &mut impl Write, payload: &[f32]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(payload.len() * 4);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    write_header(w, &frame.header)?;
    write_payload(w, &frame.payload)?;
    w.flush()?;
    Ok(())
}

/// Read one request. `Ok(None)` on a clean end of stream. Sample requests
/// carry a single observation whatever their `count`.
pub fn read_request(r: &mut impl Read) -> Result<Option<Frame>> {
    read_request_checked(r).map_err(|(_, e)| e)
}

pub fn write_error(w: &mut impl Write, header: Header, message: &str) -> Result<()> {
    let header = Header {
        code: STATUS_ERROR,
        ..header
    };
    write_header(w, &header)?;
    let bytes = message.as_bytes();
    let len = bytes.len().min(MAX_MESSAGE_BYTES as usize);
    w.write_all(&(len as u32).to_le_bytes())?;
    w.write_all(&bytes[..len])?;
    w.flush()?;
    Ok(())
}

pub fn read_response(r: &mut impl Read) -> Result<Response> {
    let header =
        read_header(r)?.ok_or_else(|| Error::Protocol("connection closed by peer".into()))?;
    match header.code {
        STATUS_OK => {
            let payload = read_payload(r, header.values())?;
            Ok(Response::Ok(Frame { header, payload }))
        }
        STATUS_ERROR => {
            let mut len = [0u8; 4];
            r.read_exact(&mut len)
                .map_err(|_| Error::Protocol("truncated error frame".into()))?;
            let len = u32::from_le_bytes(len);
            if len > MAX_MESSAGE_BYTES {
                return Err(Error::Protocol(format!("error message of {len} bytes")));
            }
            let mut msg = vec![0u8; len as usize];
            r.read_exact(&mut msg)
                .map_err(|_| Error::Protocol("truncated error message".into()))?;
            Ok(Response::Error {
                header,
                message: String::from_utf8_lossy(&msg).into_owned(),
            })
        }
        other => Err(Error::Protocol(format!("unknown status {other}"))),
    }
}

pub fn images_to_frame(code: u8, images: &[Image]) -> Result<Frame> {
    let shape = images
        .first()
        .map(|i| i.shape())
        .ok_or_else(|| Error::invalid("frame needs at least one image"))?;
    let mut payload = Vec::with_capacity(shape.len() * images.len());
    for img in images {
        img.check_shape(shape)?;
        payload.extend(img.as_slice().iter().map(|&v| v as f32));
    }
    Ok(Frame {
        header: Header {
            code,
            height: shape.height as u32,
            width: shape.width as u32,
            count: images.len() as u32,
        },
        payload,
    })
}

pub fn frame_to_images(frame: &Frame) -> Result<Vec<Image>> {
    let h = &frame.header;
    let (height, width) = (h.height as usize, h.width as usize);
    if height == 0 || width == 0 {
        return Err(Error::Protocol(format!("empty image {height}x{width}")));
    }
    frame
        .payload
        .chunks_exact(height * width)
        .map(|c| {
            Image::new(height, width, c.iter().map(|&v| v as f64).collect())
                .map_err(|e| Error::Protocol(e.to_string()))
        })
        .collect()
}

/// Server-side behaviour behind the frame protocol.
pub trait FrameHandler {
    fn denoise(&self, x: &Image) -> Result<Image>;

    fn sample(&self, _y: &Image, _count: usize) -> Result<Vec<Image>> {
        Err(Error::Protocol("sampling is not supported by this server".into()))
    }
}

fn handle(handler: &dyn FrameHandler, frame: &Frame) -> Result<Frame> {
    let images = frame_to_images(frame)?;
    match frame.header.code {
        OP_DENOISE => {
            if images.len() != 1 {
                return Err(Error::Protocol(format!(
                    "denoise expects count = 1, got {}",
                    frame.header.count
                )));
            }
            let out = handler.denoise(&images[0])?;
            out.check_shape(images[0].shape())?;
            images_to_frame(STATUS_OK, &[out])
        }
        OP_SAMPLE => {
            if images.len() != 1 {
                return Err(Error::Protocol("sample expects one observation".into()));
            }
            let samples = handler.sample(&images[0], frame.header.count as usize)?;
            if samples.len() != frame.header.count as usize {
                return Err(Error::Protocol("sampler returned wrong sample count".into()));
            }
            images_to_frame(STATUS_OK, &samples)
        }
        other => Err(Error::Protocol(format!("unknown opcode {other}"))),
    }
}

/// Serve requests until the peer closes the stream. A malformed frame is
/// answered with an error frame and ends the session, since the stream can
/// no longer be re-synchronised; handler failures only fail that request.
pub fn serve(handler: &dyn FrameHandler, reader: &mut impl Read, writer: &mut impl Write) -> Result<()> {
    loop {
        let frame = match read_request_checked(reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err((header, err)) => {
                write_error(writer, header, &err.to_string())?;
                return Err(err);
            }
        };
        match handle(handler, &frame) {
            Ok(resp) => write_frame(writer, &resp)?,
            Err(err) => write_error(writer, frame.header, &err.to_string())?,
        }
    }
}

fn read_request_checked(r: &mut impl Read) -> std::result::Result<Option<Frame>, (Header, Error)> {
    let zero = Header {
        code: STATUS_ERROR,
        height: 0,
        width: 0,
        count: 0,
    };
    let header = match read_header(r) {
        Ok(Some(h)) => h,
        Ok(None) => return Ok(None),
        Err(e) => return Err((zero, e)),
    };
    if header.code != OP_DENOISE && header.code != OP_SAMPLE {
        return Err((header, Error::Protocol(format!("unknown opcode {}", header.code))));
    }
    // sample requests carry one observation regardless of `count`
    let values = if header.code == OP_SAMPLE {
        header.height as u64 * header.width as u64
    } else {
        header.values()
    };
    match read_payload(r, values) {
        Ok(payload) => Ok(Some(Frame { header, payload })),
        Err(e) => Err((header, e)),
    }
}

/// Where an external denoiser or sampler listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    #[cfg(unix)]
    Unix(std::path::PathBuf),
    /// Spawn a process and speak the protocol over its stdin/stdout.
    Exec(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("endpoint `{s}` needs a tcp:/unix:/exec: prefix")))?;
        match kind {
            "tcp" if !rest.is_empty() => Ok(Endpoint::Tcp(rest.to_string())),
            #[cfg(unix)]
            "unix" if !rest.is_empty() => Ok(Endpoint::Unix(rest.into())),
            "exec" => {
                let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    return Err(Error::invalid("exec endpoint needs a command"));
                }
                Ok(Endpoint::Exec(argv))
            }
            _ => Err(Error::invalid(format!("unsupported endpoint `{s}`"))),
        }
    }
}

/// Client side of one protocol connection. Requests are strictly sequential.
pub struct Client {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: BufWriter<Box<dyn Write + Send>>,
    child: Option<Child>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("child", &self.child.as_ref().map(|c| c.id())).finish()
    }
}

impl Client {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = std::net::TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Ok(Self::from_parts(Box::new(reader), Box::new(stream)))
            }
            #[cfg(unix)]
            Endpoint::Unix(path) => {
                let stream = std::os::unix::net::UnixStream::connect(path)?;
                let reader = stream.try_clone()?;
                Ok(Self::from_parts(Box::new(reader), Box::new(stream)))
            }
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut client = Self::from_parts(Box::new(stdout), Box::new(stdin));
                client.child = Some(child);
                Ok(client)
            }
        }
    }

    pub fn from_parts(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Self {
        Self {
            reader: BufReader::new(reader),
            writer: BufWriter::new(writer),
            child: None,
        }
    }

    pub fn round_trip(&mut self, frame: &Frame) -> Result<Response> {
        write_frame(&mut self.writer, frame)?;
        read_response(&mut self.reader)
    }

    pub fn denoise(&mut self, x: &Image) -> Result<Image> {
        let frame = images_to_frame(OP_DENOISE, std::slice::from_ref(x))?;
        match self.round_trip(&frame)? {
            Response::Ok(resp) => {
                let mut out = frame_to_images(&resp)?;
                if out.len() != 1 || out[0].shape() != x.shape() {
                    return Err(Error::Protocol(format!(
                        "denoiser returned {} image(s) of shape {}x{}, expected one {}",
                        out.len(),
                        resp.header.height,
                        resp.header.width,
                        x.shape()
                    )));
                }
                Ok(out.pop().unwrap())
            }
            Response::Error { message, .. } => Err(Error::Remote(message)),
        }
    }

    pub fn sample(&mut self, y: &Image, count: usize) -> Result<Vec<Image>> {
        let mut frame = images_to_frame(OP_SAMPLE, std::slice::from_ref(y))?;
        frame.header.count = count as u32;
        match self.round_trip(&frame)? {
            Response::Ok(resp) => {
                let out = frame_to_images(&resp)?;
                if out.len() != count || out.iter().any(|s| s.shape() != y.shape()) {
                    return Err(Error::Protocol(format!(
                        "sampler returned {} samples, expected {count} of shape {}",
                        out.len(),
                        y.shape()
                    )));
                }
                Ok(out)
            }
            Response::Error { message, .. } => Err(Error::Remote(message)),
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.writer.flush();
        if let Some(mut child) = self.child.take() {
            // closing stdin ends the serve loop on the other side
            drop(std::mem::replace(&mut self.writer, BufWriter::new(Box::new(io::sink()))));
            let _ = child.wait();
        }
    }
}

/// Identity denoiser used for loopback conformance checks.
pub struct EchoHandler;

impl FrameHandler for EchoHandler {
    fn denoise(&self, x: &Image) -> Result<Image> {
        Ok(x.clone())
    }

    fn sample(&self, y: &Image, count: usize) -> Result<Vec<Image>> {
        Ok(vec![y.clone(); count])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConformanceReport {
    pub round_trips: usize,
    pub round_trip_failures: Vec<String>,
    pub fuzz_cases: usize,
    pub fuzz_failures: Vec<String>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.round_trip_failures.is_empty() && self.fuzz_failures.is_empty()
    }
}

fn random_frame(rng: &mut impl Rng) -> Frame {
    let height = rng.random_range(1..=12u32);
    let width = rng.random_range(1..=12u32);
    let payload = (0..height * width)
        .map(|_| {
            // finite values spanning many binades, including subnormals
            let bits: u32 = rng.random::<u32>() & !(0xff << 23) | (rng.random_range(0..255u32) << 23);
            f32::from_bits(bits)
        })
        .collect();
    Frame {
        header: Header {
            code: OP_DENOISE,
            height,
            width,
            count: 1,
        },
        payload,
    }
}

fn encode(frame: &Frame) -> Vec<u8> {
    let mut buf = Vec::new();
    write_header(&mut buf, &frame.header).unwrap();
    write_payload(&mut buf, &frame.payload).unwrap();
    buf
}

/// Malformed request `index` of the fuzz corpus.
fn malformed_frame(rng: &mut impl Rng, index: usize) -> Vec<u8> {
    let base = encode(&random_frame(rng));
    match index % 6 {
        0 => {
            let mut b = base;
            b[rng.random_range(0..4)] ^= 0x20 | rng.random_range(1..=0x1fu8);
            b
        }
        1 => {
            let cut = rng.random_range(1..17);
            base[..cut].to_vec()
        }
        2 => {
            let cut = rng.random_range(17..base.len());
            base[..cut].to_vec()
        }
        3 => {
            let mut b = base;
            let big = rng.random_range(1u32 << 13..=u32::MAX);
            b[5..9].copy_from_slice(&big.to_le_bytes());
            b[9..13].copy_from_slice(&big.to_le_bytes());
            b
        }
        4 => {
            let mut b = base;
            b[4] = rng.random_range(3..=u8::MAX);
            b
        }
        _ => {
            // denoise with count != 1
            let mut b = base;
            b[13..17].copy_from_slice(&0u32.to_le_bytes());
            b
        }
    }
}

/// Push `round_trips` random frames through a loopback echo server over a
/// socket pair and check the payloads come back bit-identical; then feed
/// `fuzz_cases` malformed frames and check each yields an error frame.
pub fn conformance_check(round_trips: usize, fuzz_cases: usize, seed: u64) -> Result<ConformanceReport> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = ConformanceReport {
        round_trips,
        fuzz_cases,
        ..Default::default()
    };

    let (client_side, server_side) = loopback_pair()?;
    let server = std::thread::spawn(move || {
        let (mut r, mut w) = server_side;
        serve(&EchoHandler, &mut r, &mut w)
    });
    {
        let (r, w) = client_side;
        let mut client = Client::from_parts(r, w);
        for i in 0..round_trips {
            let frame = random_frame(&mut rng);
            match client.round_trip(&frame) {
                Ok(Response::Ok(resp)) => {
                    let same = resp.header.height == frame.header.height
                        && resp.header.width == frame.header.width
                        && resp.header.count == 1
                        && resp.payload.len() == frame.payload.len()
                        && resp
                            .payload
                            .iter()
                            .zip(&frame.payload)
                            .all(|(a, b)| a.to_bits() == b.to_bits());
                    if !same {
                        report.round_trip_failures.push(format!("frame {i}: payload changed"));
                    }
                }
                Ok(Response::Error { message, .. }) => {
                    report.round_trip_failures.push(format!("frame {i}: {message}"))
                }
                Err(e) => report.round_trip_failures.push(format!("frame {i}: {e}")),
            }
        }
    }
    server
        .join()
        .map_err(|_| Error::Protocol("loopback server panicked".into()))??;

    for i in 0..fuzz_cases {
        let bytes = malformed_frame(&mut rng, i);
        let mut out = Vec::new();
        let served = serve(&EchoHandler, &mut bytes.as_slice(), &mut out);
        let verdict = read_response(&mut out.as_slice());
        match verdict {
            Ok(Response::Error { .. }) => {}
            Ok(Response::Ok(_)) => report
                .fuzz_failures
                .push(format!("case {i}: malformed frame accepted ({served:?})")),
            Err(e) => report.fuzz_failures.push(format!("case {i}: no error frame ({e})")),
        }
    }
    Ok(report)
}

type Halves = (Box<dyn Read + Send>, Box<dyn Write + Send>);

#[cfg(unix)]
fn loopback_pair() -> Result<(Halves, Halves)> {
    let (a, b) = std::os::unix::net::UnixStream::pair()?;
    let (ar, br) = (a.try_clone()?, b.try_clone()?);
    Ok(((Box::new(ar), Box::new(a)), (Box::new(br), Box::new(b))))
}

#[cfg(not(unix))]
fn loopback_pair() -> Result<(Halves, Halves)> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    let a = std::net::TcpStream::connect(listener.local_addr()?)?;
    let (b, _) = listener.accept()?;
    let (ar, br) = (a.try_clone()?, b.try_clone()?);
    Ok(((Box::new(ar), Box::new(a)), (Box::new(br), Box::new(b))))
}
