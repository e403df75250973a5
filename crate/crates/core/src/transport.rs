//! Newline-delimited line transport over loopback channels, TCP and serial
//! ports.
//!
//! A [`Connection`] is shared between one reading thread and one writing
//! thread. Each [`Connection::send_line`] writes the line and its `\n` with a
//! single locked write, so concurrent senders never interleave.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

/// Longest accepted line, terminator excluded.
pub const MAX_LINE_BYTES: usize = 4096;
/// Environment variable naming the default endpoint.
pub const ENDPOINT_ENV: &str = "MIRTO_ENDPOINT";
pub const DEFAULT_BAUD_RATE: u32 = 57_600;
pub const DEFAULT_READ_TIMEOUT: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid endpoint `{0}`")]
    InvalidEndpoint(String),
    #[error("cannot open {endpoint}: {source}")]
    Open {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("connection closed")]
    Closed,
    #[error("line longer than {MAX_LINE_BYTES} bytes")]
    LineTooLong,
    #[error("line contains a terminator")]
    EmbeddedTerminator,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointKind {
    Loopback,
    Tcp,
    Serial,
}

/// Serial line settings; always 8 data bits, no parity, one stop bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SerialSettings {
    pub baud_rate: u32,
    pub hardware_flow_control: bool,
}

impl Default for SerialSettings {
    fn default() -> Self {
        Self {
            baud_rate: DEFAULT_BAUD_RATE,
            hardware_flow_control: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportEndpoint {
    pub kind: EndpointKind,
    /// `host:port` for TCP, a device path for serial, a label for loopback.
    pub address: String,
    pub read_timeout: Duration,
    pub serial: SerialSettings,
}

impl TransportEndpoint {
    pub fn tcp(address: impl Into<String>) -> Self {
        Self::new(EndpointKind::Tcp, address)
    }

    pub fn serial(path: impl Into<String>) -> Self {
        Self::new(EndpointKind::Serial, path)
    }

    pub fn loopback() -> Self {
        Self::new(EndpointKind::Loopback, "loopback")
    }

    fn new(kind: EndpointKind, address: impl Into<String>) -> Self {
        Self {
            kind,
            address: address.into(),
            read_timeout: DEFAULT_READ_TIMEOUT,
            serial: SerialSettings::default(),
        }
    }

    /// Parses `tcp:host:port`, `serial:/dev/...`, `loopback`, or a bare value:
    /// bare `host:port` is TCP, anything else is a serial device path.
    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(TransportError::InvalidEndpoint(text.to_owned()));
        }
        if text == "loopback" {
            return Ok(Self::loopback());
        }
        if let Some(addr) = text.strip_prefix("tcp:") {
            return if is_host_port(addr) {
                Ok(Self::tcp(addr))
            } else {
                Err(TransportError::InvalidEndpoint(text.to_owned()))
            };
        }
        if let Some(path) = text.strip_prefix("serial:") {
            return Ok(Self::serial(path));
        }
        if is_host_port(text) {
            Ok(Self::tcp(text))
        } else {
            Ok(Self::serial(text))
        }
    }

    /// Endpoint named by `MIRTO_ENDPOINT`, if set.
    pub fn from_env() -> Option<Result<Self, TransportError>> {
        std::env::var(ENDPOINT_ENV).ok().map(|v| Self::parse(&v))
    }

    pub fn with_read_timeout(mut self, timeout: Duration) -> Self {
        self.read_timeout = timeout.max(Duration::from_millis(1));
        self
    }
}

impl fmt::Display for TransportEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EndpointKind::Loopback => write!(f, "loopback"),
            EndpointKind::Tcp => write!(f, "tcp:{}", self.address),
            EndpointKind::Serial => write!(f, "serial:{}", self.address),
        }
    }
}

fn is_host_port(text: &str) -> bool {
    match text.rsplit_once(':') {
        Some((host, port)) => !host.is_empty() && !host.contains('/') && port.parse::<u16>().is_ok(),
        None => false,
    }
}

/// Splits a byte stream into lines, bounding the bytes buffered per line.
#[derive(Debug, Default)]
pub struct LineFramer {
    buf: Vec<u8>,
    discarding: bool,
}

impl LineFramer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds `chunk`, appending every completed line (or framing error) to
    /// `out`. Bytes after the last `\n` stay buffered.
    pub fn push(&mut self, chunk: &[u8], out: &mut VecDeque<Result<String, TransportError>>) {
        for &byte in chunk {
            if byte == b'\n' {
                if !self.discarding {
                    out.push_back(Ok(String::from_utf8_lossy(&self.buf).into_owned()));
                }
                self.buf.clear();
                self.discarding = false;
            } else if !self.discarding {
                if self.buf.len() == MAX_LINE_BYTES {
                    self.buf.clear();
                    self.discarding = true;
                    out.push_back(Err(TransportError::LineTooLong));
                } else {
                    self.buf.push(byte);
                }
            }
        }
    }

    /// Bytes of the unterminated tail.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

enum Chunk {
    Data(usize),
    Eof,
    Timeout,
}

trait ByteSource: Send {
    fn read_chunk(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<Chunk>;
}

struct ChannelSource {
    rx: Receiver<Vec<u8>>,
    leftover: VecDeque<u8>,
}

impl ByteSource for ChannelSource {
    fn read_chunk(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<Chunk> {
        if self.leftover.is_empty() {
            match self.rx.recv_timeout(timeout) {
                Ok(bytes) => self.leftover.extend(bytes),
                Err(RecvTimeoutError::Timeout) => return Ok(Chunk::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Ok(Chunk::Eof),
            }
        }
        let n = buf.len().min(self.leftover.len());
        for (slot, byte) in buf.iter_mut().zip(self.leftover.drain(..n)) {
            *slot = byte;
        }
        Ok(Chunk::Data(n))
    }
}

struct ChannelSink(Sender<Vec<u8>>);

impl Write for ChannelSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

struct TcpSource(TcpStream);

impl ByteSource for TcpSource {
    fn read_chunk(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<Chunk> {
        self.0.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        read_with_timeout(&mut self.0, buf)
    }
}

struct SerialSource(Box<dyn serialport::SerialPort>);

impl ByteSource for SerialSource {
    fn read_chunk(&mut self, buf: &mut [u8], timeout: Duration) -> io::Result<Chunk> {
        self.0
            .set_timeout(timeout.max(Duration::from_millis(1)))
            .map_err(io::Error::from)?;
        read_with_timeout(&mut self.0, buf)
    }
}

fn read_with_timeout(reader: &mut impl Read, buf: &mut [u8]) -> io::Result<Chunk> {
    match reader.read(buf) {
        Ok(0) => Ok(Chunk::Eof),
        Ok(n) => Ok(Chunk::Data(n)),
        Err(e)
            if matches!(
                e.kind(),
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
            ) =>
        {
            Ok(Chunk::Timeout)
        }
        Err(e) => Err(e),
    }
}

struct ReadHalf {
    source: Box<dyn ByteSource>,
    framer: LineFramer,
    ready: VecDeque<Result<String, TransportError>>,
    eof: bool,
}

struct Inner {
    label: String,
    reader: Mutex<Option<ReadHalf>>,
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    closed: AtomicBool,
    shutdown: Option<TcpStream>,
}

/// An open line-oriented connection. Cloning shares the same connection.
#[derive(Clone)]
pub struct Connection {
    inner: Arc<Inner>,
}

impl fmt::Debug for Connection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("label", &self.inner.label)
            .field("closed", &self.is_closed())
            .finish()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl Connection {
    fn from_parts(
        label: String,
        source: Box<dyn ByteSource>,
        sink: Box<dyn Write + Send>,
        shutdown: Option<TcpStream>,
    ) -> Self {
        Self {
            inner: Arc::new(Inner {
                label,
                reader: Mutex::new(Some(ReadHalf {
                    source,
                    framer: LineFramer::new(),
                    ready: VecDeque::new(),
                    eof: false,
                })),
                writer: Mutex::new(Some(sink)),
                closed: AtomicBool::new(false),
                shutdown,
            }),
        }
    }

    /// Two in-memory connections wired to each other.
    pub fn loopback_pair() -> (Connection, Connection) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        let a = Self::from_parts(
            "loopback:a".into(),
            Box::new(ChannelSource {
                rx: a_rx,
                leftover: VecDeque::new(),
            }),
            Box::new(ChannelSink(a_tx)),
            None,
        );
        let b = Self::from_parts(
            "loopback:b".into(),
            Box::new(ChannelSource {
                rx: b_rx,
                leftover: VecDeque::new(),
            }),
            Box::new(ChannelSink(b_tx)),
            None,
        );
        (a, b)
    }

    pub fn from_tcp(stream: TcpStream) -> io::Result<Connection> {
        stream.set_nodelay(true)?;
        let label = match stream.peer_addr() {
            Ok(addr) => format!("tcp:{addr}"),
            Err(_) => "tcp".into(),
        };
        let reader = stream.try_clone()?;
        let shutdown = stream.try_clone()?;
        Ok(Self::from_parts(
            label,
            Box::new(TcpSource(reader)),
            Box::new(stream),
            Some(shutdown),
        ))
    }

    pub fn label(&self) -> &str {
        &self.inner.label
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    /// Writes `line` followed by `\n`.
    pub fn send_line(&self, line: &str) -> Result<(), TransportError> {
        if line.contains('\n') {
            return Err(TransportError::EmbeddedTerminator);
        }
        if self.is_closed() {
            return Err(TransportError::Closed);
        }
        let mut framed = Vec::with_capacity(line.len() + 1);
        framed.extend_from_slice(line.as_bytes());
        framed.push(b'\n');
        let mut writer = lock(&self.inner.writer);
        let sink = writer.as_mut().ok_or(TransportError::Closed)?;
        sink.write_all(&framed)?;
        sink.flush()?;
        Ok(())
    }

    /// Next complete line without its terminator, or `None` on timeout.
    pub fn recv_line(&self, timeout: Duration) -> Result<Option<String>, TransportError> {
        if self.is_closed() {
            return Err(TransportError::Closed);
        }
        let mut guard = lock(&self.inner.reader);
        let half = guard.as_mut().ok_or(TransportError::Closed)?;
        let deadline = Instant::now() + timeout;
        let mut chunk = [0u8; 1024];
        loop {
            if let Some(line) = half.ready.pop_front() {
                return line.map(Some);
            }
            if half.eof {
                return Err(TransportError::Closed);
            }
            if self.is_closed() {
                return Err(TransportError::Closed);
            }
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() && timeout > Duration::ZERO {
                return Ok(None);
            }
            match half
                .source
                .read_chunk(&mut chunk, remaining.max(Duration::from_millis(1)))?
            {
                Chunk::Data(n) => half.framer.push(&chunk[..n], &mut half.ready),
                Chunk::Eof => half.eof = true,
                Chunk::Timeout => {
                    if Instant::now() >= deadline {
                        return Ok(None);
                    }
                }
            }
        }
    }

    /// Closes both directions. Idempotent.
    pub fn close(&self) {
        if self.inner.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        lock(&self.inner.writer).take();
        if let Some(stream) = &self.inner.shutdown {
            let _ = stream.shutdown(Shutdown::Both);
        }
        if let Ok(mut reader) = self.inner.reader.try_lock() {
            reader.take();
        }
    }
}

/// Opens a client connection to `endpoint`.
pub fn open(endpoint: &TransportEndpoint) -> Result<Connection, TransportError> {
    let open_err = |source: io::Error| TransportError::Open {
        endpoint: endpoint.to_string(),
        source,
    };
    match endpoint.kind {
        EndpointKind::Loopback => Err(TransportError::InvalidEndpoint(
            "loopback connections are created in pairs".into(),
        )),
        EndpointKind::Tcp => {
            if !is_host_port(&endpoint.address) {
                return Err(TransportError::InvalidEndpoint(endpoint.address.clone()));
            }
            let addrs: Vec<_> = endpoint.address.to_socket_addrs().map_err(open_err)?.collect();
            let mut last = io::Error::new(io::ErrorKind::NotFound, "no address resolved");
            for addr in addrs {
                match TcpStream::connect_timeout(&addr, Duration::from_secs(5)) {
                    Ok(stream) => return Connection::from_tcp(stream).map_err(open_err),
                    Err(e) => last = e,
                }
            }
            Err(open_err(last))
        }
        EndpointKind::Serial => {
            let flow = if endpoint.serial.hardware_flow_control {
                serialport::FlowControl::Hardware
            } else {
                serialport::FlowControl::None
            };
            let port = serialport::new(&endpoint.address, endpoint.serial.baud_rate)
                .data_bits(serialport::DataBits::Eight)
                .parity(serialport::Parity::None)
                .stop_bits(serialport::StopBits::One)
                .flow_control(flow)
                .timeout(endpoint.read_timeout)
                .open()
                .map_err(|e| open_err(e.into()))?;
            let writer = port.try_clone().map_err(|e| open_err(e.into()))?;
            Ok(Connection::from_parts(
                endpoint.to_string(),
                Box::new(SerialSource(port)),
                Box::new(writer),
                None,
            ))
        }
    }
}

/// Device-side TCP listener accepting clients one at a time.
pub struct Listener {
    inner: TcpListener,
}

impl Listener {
    pub fn bind(address: &str) -> Result<Self, TransportError> {
        let inner = TcpListener::bind(address).map_err(|source| TransportError::Open {
            endpoint: format!("tcp:{address}"),
            source,
        })?;
        Ok(Self { inner })
    }

    pub fn local_addr(&self) -> io::Result<std::net::SocketAddr> {
        self.inner.local_addr()
    }

    pub fn accept(&self) -> Result<Connection, TransportError> {
        let (stream, _) = self.inner.accept()?;
        Ok(Connection::from_tcp(stream)?)
    }
}
