//! Coordinator/worker execution of the aggregation rules.
//!
//! Every worker runs the same loop: announce itself with `Hello`, compute its
//! local solution, submit it, then answer `BroadcastReference` frames with
//! `SubmitAligned` until it receives `Done`.
//!
//! The coordinator gathers in node-id order regardless of arrival order, so
//! a federated run is bit-identical to calling the aggregator directly on the
//! same local solutions.
//!
//! Round counting: a round is one synchronous payload phase (a gather or a
//! broadcast). The `Hello` handshake and the closing `Done` frames are
//! session control; they are not rounds and are reported separately as
//! `control_bytes`. One-shot mode therefore uses exactly one round, and
//! the broadcast/align mode uses `1 + 2·n_iter`.

pub mod codec;
pub mod transport;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::error::Error;
use crate::estimators::{self, AggregateSolution, LocalSolution, Method};
use crate::linalg::SubspaceEstimate;
use codec::{decode_message, encode_message, Message, MessageKind, PROTOCOL_VERSION};
use transport::{channel_pair, Link, RecvFailure, TrafficMeter};

/// Orthonormality tolerance applied to received bases.
pub const PAYLOAD_ORTHONORMAL_TOL: f64 = 1e-8;

/// Environment variable overriding the coordinator bind address.
pub const BIND_ENV: &str = "EIGENFED_BIND";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FederationError {
    #[error("worker {0} did not respond before the timeout")]
    WorkerTimeout(usize),

    #[error("worker {0} submitted an invalid payload")]
    PayloadValidation(usize),

    #[error("worker {node_id} speaks protocol version {got}, expected {expected}")]
    VersionMismatch { node_id: usize, got: u8, expected: u8 },

    #[error("malformed frame: {0}")]
    MalformedFrame(String),

    #[error("worker {0} reported a failure")]
    WorkerFailed(usize),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("transport error: {0}")]
    Io(String),

    #[error(transparent)]
    Compute(#[from] Error),
}

pub type FedResult<T> = Result<T, FederationError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    /// TCP on `address` (`host:port`; port 0 picks a free port). The
    /// `EIGENFED_BIND` environment variable overrides the address.
    #[cfg(feature = "socket")]
    Socket { address: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub m: usize,
    pub transport: Transport,
    pub timeout: Duration,
}

impl Topology {
    pub fn in_process(m: usize) -> Self {
        Self {
            m,
            transport: Transport::InProcess,
            timeout: Duration::from_secs(30),
        }
    }

    #[cfg(feature = "socket")]
    pub fn socket(m: usize, address: impl Into<String>) -> Self {
        Self {
            m,
            transport: Transport::Socket {
                address: address.into(),
            },
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn validate(&self) -> FedResult<()> {
        if self.m < 1 {
            return Err(Error::InvalidArgument("topology needs at least one worker".into()).into());
        }
        if self.timeout.is_zero() {
            return Err(Error::InvalidArgument("timeout must be positive".into()).into());
        }
        Ok(())
    }
}

/// Aggregation rule applied by the coordinator in one-shot mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregator {
    Naive,
    SignFix { reference_index: usize },
    Procrustes { reference_index: usize },
    ProjectorAverage,
}

impl Aggregator {
    /// Parses `naive`, `sign_fix`, `procrustes` or `projector_avg` (node 0 as reference).
    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "naive" => Self::Naive,
            "sign_fix" => Self::SignFix { reference_index: 0 },
            "procrustes" => Self::Procrustes { reference_index: 0 },
            "projector_avg" => Self::ProjectorAverage,
            _ => return None,
        })
    }

    pub fn apply(self, solutions: &[LocalSolution]) -> Result<AggregateSolution, Error> {
        match self {
            Self::Naive => estimators::naive_average(solutions),
            Self::SignFix { reference_index } => estimators::sign_fix_average(solutions, reference_index),
            Self::Procrustes { reference_index } => {
                let reference = solutions
                    .get(reference_index)
                    .ok_or_else(|| Error::InvalidArgument(format!("reference index {reference_index} out of range")))?
                    .estimate
                    .clone();
                estimators::procrustes_fix_average(solutions, &reference)
            }
            Self::ProjectorAverage => estimators::projector_average(solutions),
        }
    }
}

/// Communication cost of one federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct CommAccounting {
    /// Synchronous payload phases.
    pub rounds: usize,
    /// Worker → coordinator bytes in payload rounds.
    pub bytes_up: u64,
    /// Coordinator → worker bytes in payload rounds.
    pub bytes_down: u64,
    /// `Hello` and `Done` frames.
    pub control_bytes: u64,
    /// Payload-carrying frames sent by workers.
    pub payloads_up: usize,
    /// Payload-carrying frames sent by the coordinator.
    pub payloads_down: usize,
    /// Bytes the transport itself saw written, in both directions.
    pub wire_bytes: u64,
    pub wall_time: Duration,
}

impl CommAccounting {
    fn new() -> Self {
        Self {
            rounds: 0,
            bytes_up: 0,
            bytes_down: 0,
            control_bytes: 0,
            payloads_up: 0,
            payloads_down: 0,
            wire_bytes: 0,
            wall_time: Duration::ZERO,
        }
    }

    pub fn total_counted(&self) -> u64 {
        self.bytes_up + self.bytes_down + self.control_bytes
    }
}

/// Work a node performs before submitting: typically a local eigensolve.
pub type NodeWork<'a> = dyn Fn(usize) -> Result<LocalSolution, Error> + Sync + 'a;

fn send_message(link: &mut dyn Link, msg: &Message) -> FedResult<usize> {
    let bytes = encode_message(msg)?;
    link.send(&bytes)?;
    Ok(bytes.len())
}

/// Runs one worker session over `link` until the coordinator says `Done` or
/// goes away.
pub fn run_worker(link: &mut dyn Link, node_id: usize, work: &NodeWork<'_>, timeout: Duration) -> FedResult<()> {
    let id = node_id as u32;
    send_message(link, &Message::header_only(MessageKind::Hello, id))?;
    let solution = match work(node_id) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("worker {node_id}: local work failed: {e}");
            send_message(link, &Message::header_only(MessageKind::Error, id))?;
            return Err(e.into());
        }
    };
    send_message(
        link,
        &Message::with_payload(MessageKind::SubmitSolution, id, solution.estimate.basis().clone()),
    )?;
    loop {
        let frame = match link.recv(timeout) {
            Ok(f) => f,
            Err(RecvFailure::Closed) => return Ok(()),
            Err(RecvFailure::Timeout) => return Err(FederationError::Protocol("coordinator went silent".into())),
            Err(RecvFailure::Malformed(e)) => return Err(e),
        };
        let msg = decode_message(&frame)?;
        if msg.protocol_version != PROTOCOL_VERSION {
            return Err(FederationError::VersionMismatch {
                node_id,
                got: msg.protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
        match msg.kind {
            MessageKind::BroadcastReference => {
                let payload = msg
                    .payload
                    .ok_or_else(|| FederationError::Protocol("reference broadcast without payload".into()))?;
                let reference = SubspaceEstimate::with_tolerance(payload, PAYLOAD_ORTHONORMAL_TOL)
                    .map_err(|_| FederationError::Protocol("reference is not orthonormal".into()))?;
                let aligned = estimators::align_one(&solution.estimate, &reference)?;
                send_message(link, &Message::with_payload(MessageKind::SubmitAligned, id, aligned))?;
            }
            MessageKind::Done => return Ok(()),
            other => {
                return Err(FederationError::Protocol(format!("unexpected {other:?} at worker")));
            }
        }
    }
}

/// Coordinator view of the connected workers, indexed by node id.
struct Session {
    links: Vec<Box<dyn Link>>,
    timeout: Duration,
    acct: CommAccounting,
}

impl Session {
    fn recv_from(&mut self, node: usize) -> FedResult<Message> {
        let frame = match self.links[node].recv(self.timeout) {
            Ok(f) => f,
            Err(RecvFailure::Timeout) | Err(RecvFailure::Closed) => {
                return Err(FederationError::WorkerTimeout(node));
            }
            Err(RecvFailure::Malformed(e)) => return Err(e),
        };
        let msg = decode_message(&frame)?;
        if msg.protocol_version != PROTOCOL_VERSION {
            return Err(FederationError::VersionMismatch {
                node_id: node,
                got: msg.protocol_version,
                expected: PROTOCOL_VERSION,
            });
        }
        if msg.node_id as usize != node {
            return Err(FederationError::Protocol(format!(
                "frame from node {} on the link of node {node}",
                msg.node_id
            )));
        }
        if msg.kind == MessageKind::Error {
            return Err(FederationError::WorkerFailed(node));
        }
        match msg.kind {
            MessageKind::Hello => self.acct.control_bytes += frame.len() as u64,
            _ => {
                self.acct.bytes_up += frame.len() as u64;
                if msg.payload.is_some() {
                    self.acct.payloads_up += 1;
                }
            }
        }
        Ok(msg)
    }

    fn expect_hello(&mut self) -> FedResult<()> {
        for node in 0..self.links.len() {
            let msg = self.recv_from(node)?;
            if msg.kind != MessageKind::Hello {
                return Err(FederationError::Protocol(format!("expected Hello from node {node}")));
            }
        }
        Ok(())
    }

    /// One gather round: a validated `d × r` basis from every node, in order.
    fn gather(&mut self, kind: MessageKind) -> FedResult<Vec<SubspaceEstimate>> {
        let mut out = Vec::with_capacity(self.links.len());
        for node in 0..self.links.len() {
            let msg = self.recv_from(node)?;
            if msg.kind != kind {
                return Err(FederationError::Protocol(format!(
                    "expected {kind:?} from node {node}, got {:?}",
                    msg.kind
                )));
            }
            let payload = msg.payload.ok_or(FederationError::PayloadValidation(node))?;
            let basis = SubspaceEstimate::with_tolerance(payload, PAYLOAD_ORTHONORMAL_TOL)
                .map_err(|_| FederationError::PayloadValidation(node))?;
            if let Some(first) = out.first() {
                let first: &SubspaceEstimate = first;
                if first.basis().shape() != basis.basis().shape() {
                    return Err(FederationError::PayloadValidation(node));
                }
            }
            out.push(basis);
        }
        self.acct.rounds += 1;
        Ok(out)
    }

    fn broadcast(&mut self, reference: &SubspaceEstimate) -> FedResult<()> {
        for node in 0..self.links.len() {
            let msg = Message::with_payload(MessageKind::BroadcastReference, node as u32, reference.basis().clone());
            let n = send_message(self.links[node].as_mut(), &msg)?;
            self.acct.bytes_down += n as u64;
            self.acct.payloads_down += 1;
        }
        self.acct.rounds += 1;
        Ok(())
    }

    fn finish(&mut self) {
        for node in 0..self.links.len() {
            let msg = Message::header_only(MessageKind::Done, node as u32);
            // A worker that already left does not affect the result.
            if let Ok(n) = send_message(self.links[node].as_mut(), &msg) {
                self.acct.control_bytes += n as u64;
            }
        }
    }
}

enum Plan {
    OneShot(Aggregator),
    ParallelAlign(usize),
}

fn coordinate(session: &mut Session, plan: &Plan) -> FedResult<AggregateSolution> {
    session.expect_hello()?;
    let bases = session.gather(MessageKind::SubmitSolution)?;
    let solutions: Vec<LocalSolution> = bases
        .into_iter()
        .enumerate()
        .map(|(i, b)| LocalSolution::new(i, b))
        .collect();
    let result = match plan {
        Plan::OneShot(aggregator) => aggregator.apply(&solutions)?,
        Plan::ParallelAlign(n_iter) => {
            let mut reference = solutions[0].estimate.clone();
            let mut agg = None;
            for round in 0..*n_iter {
                session.broadcast(&reference)?;
                let aligned: Vec<_> = session
                    .gather(MessageKind::SubmitAligned)?
                    .into_iter()
                    .map(SubspaceEstimate::into_inner)
                    .collect();
                let mut next = estimators::average_aligned(&aligned, Method::IterativeRefinement)?;
                next.rounds_used = round + 1;
                match &next.estimate {
                    Some(e) => reference = e.clone(),
                    None => {
                        agg = Some(next);
                        break;
                    }
                }
                agg = Some(next);
            }
            agg.expect("n_iter >= 1")
        }
    };
    session.finish();
    Ok(result)
}

fn spawn_and_run<'env>(
    topology: &Topology,
    work: &NodeWork<'env>,
    plan: Plan,
) -> FedResult<(AggregateSolution, CommAccounting)> {
    topology.validate()?;
    let start = Instant::now();
    let meter = TrafficMeter::new();
    let m = topology.m;
    let timeout = topology.timeout;

    let (result, mut acct) = std::thread::scope(|scope| -> FedResult<_> {
        let links: Vec<Box<dyn Link>> = match &topology.transport {
            Transport::InProcess => {
                let mut coord_ends: Vec<Box<dyn Link>> = Vec::with_capacity(m);
                for node in 0..m {
                    let (coord, mut worker) = channel_pair(&meter);
                    coord_ends.push(Box::new(coord));
                    scope.spawn(move || worker_thread(&mut worker, node, work, timeout));
                }
                coord_ends
            }
            #[cfg(feature = "socket")]
            Transport::Socket { address } => socket_links(scope, address, m, work, timeout, &meter)?,
        };
        let mut session = Session {
            links,
            timeout,
            acct: CommAccounting::new(),
        };
        let result = coordinate(&mut session, &plan);
        // Dropping the links releases any worker still blocked on a receive.
        let Session { acct, .. } = session;
        Ok((result, acct))
    })?;
    acct.wall_time = start.elapsed();
    acct.wire_bytes = meter.total();
    result.map(|r| (r, acct))
}

fn worker_thread(link: &mut dyn Link, node: usize, work: &NodeWork<'_>, timeout: Duration) {
    // A panicking worker behaves like a crashed process: its link drops.
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_worker(link, node, work, timeout)));
    match outcome {
        Ok(Ok(())) => {}
        Ok(Err(e)) => log::debug!("worker {node} stopped: {e}"),
        Err(_) => log::warn!("worker {node} crashed"),
    }
}

#[cfg(feature = "socket")]
fn socket_links<'scope, 'env>(
    scope: &'scope std::thread::Scope<'scope, 'env>,
    address: &str,
    m: usize,
    work: &'env NodeWork<'env>,
    timeout: Duration,
    meter: &TrafficMeter,
) -> FedResult<Vec<Box<dyn Link>>> {
    use std::net::{TcpListener, TcpStream};
    use transport::TcpLink;

    let address = std::env::var(BIND_ENV).unwrap_or_else(|_| address.to_string());
    let listener = TcpListener::bind(&address).map_err(|e| FederationError::Io(format!("bind {address}: {e}")))?;
    let local = listener.local_addr().map_err(|e| FederationError::Io(e.to_string()))?;
    for node in 0..m {
        let meter = meter.clone();
        scope.spawn(move || match TcpStream::connect(local) {
            Ok(stream) => {
                let mut link = TcpLink::new(stream, meter);
                worker_thread(&mut link, node, work, timeout);
            }
            Err(e) => log::warn!("worker {node} could not connect: {e}"),
        });
    }
    accept_workers(&listener, m, timeout, meter)
}

/// Accepts `m` workers on `listener` and orders their links by the node id
/// announced in each `Hello`. The `Hello` frames are replayed to the session.
#[cfg(feature = "socket")]
fn accept_workers(
    listener: &std::net::TcpListener,
    m: usize,
    timeout: Duration,
    meter: &TrafficMeter,
) -> FedResult<Vec<Box<dyn Link>>> {
    use transport::TcpLink;

    listener
        .set_nonblocking(true)
        .map_err(|e| FederationError::Io(e.to_string()))?;
    let deadline = Instant::now() + timeout;
    let mut slots: Vec<Option<Box<dyn Link>>> = (0..m).map(|_| None).collect();
    let mut connected = 0;
    while connected < m {
        match listener.accept() {
            Ok((stream, _)) => {
                stream
                    .set_nonblocking(false)
                    .map_err(|e| FederationError::Io(e.to_string()))?;
                let mut link = TcpLink::new(stream, meter.clone());
                let remaining = deadline.saturating_duration_since(Instant::now());
                let frame = match link.recv(remaining) {
                    Ok(f) => f,
                    Err(RecvFailure::Malformed(e)) => return Err(e),
                    Err(_) => continue,
                };
                let hello = decode_message(&frame)?;
                let node = hello.node_id as usize;
                if hello.kind != MessageKind::Hello || node >= m || slots[node].is_some() {
                    return Err(FederationError::Protocol(format!("bad handshake from node {node}")));
                }
                slots[node] = Some(Box::new(Replay {
                    pending: Some(frame),
                    inner: link,
                }));
                connected += 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing = slots.iter().position(Option::is_none).unwrap_or(0);
                    return Err(FederationError::WorkerTimeout(missing));
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(FederationError::Io(e.to_string())),
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

/// A link that hands back one already-received frame before reading more.
#[cfg(feature = "socket")]
struct Replay<L: Link> {
    pending: Option<Vec<u8>>,
    inner: L,
}

#[cfg(feature = "socket")]
impl<L: Link> Link for Replay<L> {
    fn send(&mut self, frame: &[u8]) -> FedResult<()> {
        self.inner.send(frame)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvFailure> {
        match self.pending.take() {
            Some(f) => Ok(f),
            None => self.inner.recv(timeout),
        }
    }
}

/// Connects to a coordinator at `address` and serves one worker session.
#[cfg(feature = "socket")]
pub fn serve_socket_worker(address: &str, node_id: usize, work: &NodeWork<'_>, timeout: Duration) -> FedResult<()> {
    let stream = std::net::TcpStream::connect(address).map_err(|e| FederationError::Io(e.to_string()))?;
    let mut link = transport::TcpLink::new(stream, TrafficMeter::new());
    run_worker(&mut link, node_id, work, timeout)
}

/// Single-round protocol: every worker submits its local solution once and
/// the coordinator applies `aggregator` to the collected solutions.
pub fn run_one_shot(
    topology: &Topology,
    per_node_work: &NodeWork<'_>,
    aggregator: Aggregator,
) -> FedResult<(AggregateSolution, CommAccounting)> {
    spawn_and_run(topology, per_node_work, Plan::OneShot(aggregator))
}

/// Gather, then `n_iter` broadcast/align/gather rounds: workers align their
/// own solution to the broadcast reference and the coordinator only averages.
/// Produces the same subspace as [`estimators::iterative_refinement`].
pub fn run_parallel_align(
    topology: &Topology,
    per_node_work: &NodeWork<'_>,
    n_iter: usize,
) -> FedResult<(AggregateSolution, CommAccounting)> {
    if n_iter < 1 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()).into());
    }
    spawn_and_run(topology, per_node_work, Plan::ParallelAlign(n_iter))
}
