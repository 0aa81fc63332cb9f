//! Frame transports between the coordinator and its workers.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::Duration;

use super::FederationError;

/// Why a receive did not produce a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum RecvFailure {
    /// Nothing arrived before the deadline.
    Timeout,
    /// The peer went away.
    Closed,
    /// Bytes arrived but do not form a valid frame.
    Malformed(FederationError),
}

/// One end of a bidirectional, frame-oriented connection.
pub trait Link: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvFailure>;
}

/// Counts every byte written into a transport, by either side.
#[derive(Debug, Clone, Default)]
pub struct TrafficMeter {
    written: Arc<AtomicU64>,
}

impl TrafficMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, bytes: usize) {
        self.written.fetch_add(bytes as u64, Ordering::SeqCst);
    }

    pub fn total(&self) -> u64 {
        self.written.load(Ordering::SeqCst)
    }
}

/// In-process link backed by a pair of channels.
pub struct ChannelLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    meter: TrafficMeter,
}

/// Connected `(coordinator end, worker end)` pair sharing one meter.
pub fn channel_pair(meter: &TrafficMeter) -> (ChannelLink, ChannelLink) {
    let (to_worker, from_coord) = mpsc::channel();
    let (to_coord, from_worker) = mpsc::channel();
    (
        ChannelLink {
            tx: to_worker,
            rx: from_worker,
            meter: meter.clone(),
        },
        ChannelLink {
            tx: to_coord,
            rx: from_coord,
            meter: meter.clone(),
        },
    )
}

impl Link for ChannelLink {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| FederationError::Io("peer hung up".into()))?;
        self.meter.record(frame.len());
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvFailure> {
        match self.rx.recv_timeout(timeout) {
            Ok(frame) => Ok(frame),
            Err(RecvTimeoutError::Timeout) => Err(RecvFailure::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(RecvFailure::Closed),
        }
    }
}

#[cfg(feature = "socket")]
pub use socket::TcpLink;

#[cfg(feature = "socket")]
mod socket {
    use std::io::{ErrorKind, Read, Write};
    use std::net::TcpStream;
    use std::time::Duration;

    use super::{Link, RecvFailure, TrafficMeter};
    use crate::federation::codec::{decode_header, HEADER_LEN};
    use crate::federation::FederationError;

    /// Length-delimited frames over a TCP stream.
    pub struct TcpLink {
        stream: TcpStream,
        meter: TrafficMeter,
    }

    impl TcpLink {
        pub fn new(stream: TcpStream, meter: TrafficMeter) -> Self {
            let _ = stream.set_nodelay(true);
            Self { stream, meter }
        }

        fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), RecvFailure> {
            self.stream.read_exact(buf).map_err(|e| match e.kind() {
                ErrorKind::WouldBlock | ErrorKind::TimedOut => RecvFailure::Timeout,
                _ => RecvFailure::Closed,
            })
        }
    }

    impl Link for TcpLink {
        fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
            self.stream
                .write_all(frame)
                .and_then(|_| self.stream.flush())
                .map_err(|e| FederationError::Io(e.to_string()))?;
            self.meter.record(frame.len());
            Ok(())
        }

        fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvFailure> {
            let timeout = timeout.max(Duration::from_millis(1));
            self.stream
                .set_read_timeout(Some(timeout))
                .map_err(|_| RecvFailure::Closed)?;
            let mut frame = vec![0u8; HEADER_LEN];
            self.read_exact(&mut frame)?;
            let header = decode_header(&frame).map_err(RecvFailure::Malformed)?;
            let len = usize::try_from(header.payload_len)
                .map_err(|_| RecvFailure::Malformed(FederationError::MalformedFrame("dimension overflow".into())))?;
            frame.resize(HEADER_LEN + len, 0);
            self.read_exact(&mut frame[HEADER_LEN..])?;
            Ok(frame)
        }
    }
}
