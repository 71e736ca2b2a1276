//! TCP transport: one full-duplex socket per unordered rank pair.
//!
//! The higher rank connects to the lower rank's listener and identifies
//! itself with an 8-byte hello (`MAGIC`, rank). Every connection has a
//! reader thread that decodes frames into the rank's incoming channel.
//! Self-sends bypass the network.

use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use crate::error::{Error, Result};
use crate::transport::frame::{self, MAGIC};
use crate::transport::{check_outgoing, Envelope, Frame, Transport, TransportStats};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(20);

pub struct TcpEndpoint {
    rank: u32,
    size: u32,
    writers: Vec<Option<Mutex<TcpStream>>>,
    self_tx: Sender<Frame>,
    incoming: Receiver<Frame>,
    readers: Mutex<Vec<JoinHandle<()>>>,
    closed: AtomicBool,
    sent: AtomicU64,
    received: AtomicU64,
}

/// Binds `size` listeners on ephemeral loopback ports and wires them into a
/// full mesh. Used to run a TCP world inside one process.
pub fn loopback(size: u32) -> Result<Vec<TcpEndpoint>> {
    let listeners = (0..size)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<Vec<_>>>()?;
    let addresses = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<std::io::Result<Vec<_>>>()?;
    mesh(listeners, &addresses)
}

/// Wires already-bound listeners (one per rank, in rank order) into a mesh.
pub fn mesh(listeners: Vec<TcpListener>, addresses: &[SocketAddr]) -> Result<Vec<TcpEndpoint>> {
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(rank, listener)| {
            let addresses = addresses.to_vec();
            thread::spawn(move || TcpEndpoint::establish(rank as u32, listener, &addresses))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| h.join().map_err(|_| Error::Protocol("connection thread panicked".into()))?)
        .collect()
}

impl TcpEndpoint {
    /// Binds `addresses[rank]` and connects to every other rank.
    pub fn connect(rank: u32, addresses: &[SocketAddr]) -> Result<Self> {
        let listener = TcpListener::bind(addresses[rank as usize])?;
        Self::establish(rank, listener, addresses)
    }

    fn establish(rank: u32, listener: TcpListener, addresses: &[SocketAddr]) -> Result<Self> {
        let size = addresses.len() as u32;
        if rank >= size {
            return Err(Error::InvalidRank { rank, size });
        }
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();

        for peer in 0..rank {
            let mut stream = connect_with_retry(addresses[peer as usize])?;
            let mut hello = [0u8; 8];
            hello[..4].copy_from_slice(&MAGIC.to_le_bytes());
            hello[4..].copy_from_slice(&rank.to_le_bytes());
            stream.write_all(&hello)?;
            streams[peer as usize] = Some(stream);
        }
        for _ in rank + 1..size {
            let (mut stream, _) = listener.accept()?;
            let mut hello = [0u8; 8];
            stream.read_exact(&mut hello)?;
            let magic = u32::from_le_bytes(hello[..4].try_into().unwrap());
            let peer = u32::from_le_bytes(hello[4..].try_into().unwrap());
            if magic != MAGIC || peer <= rank || peer >= size || streams[peer as usize].is_some() {
                return Err(Error::Protocol(format!("unexpected hello from rank {peer}")));
            }
            streams[peer as usize] = Some(stream);
        }

        let (self_tx, incoming) = unbounded();
        let mut readers = Vec::new();
        let mut writers = Vec::with_capacity(size as usize);
        for (peer, stream) in streams.into_iter().enumerate() {
            let Some(stream) = stream else {
                writers.push(None);
                continue;
            };
            stream.set_nodelay(true)?;
            let mut read_half = stream.try_clone()?;
            let tx = self_tx.clone();
            readers.push(
                thread::Builder::new()
                    .name(format!("tcp-rx-{rank}<-{peer}"))
                    .spawn(move || {
                        // Ends on EOF once the peer closes, or on a decode error.
                        while let Ok(Some(frame)) = frame::read_frame(&mut read_half) {
                            if frame.envelope.dst != rank || tx.send(frame).is_err() {
                                break;
                            }
                        }
                    })?,
            );
            writers.push(Some(Mutex::new(stream)));
        }

        Ok(TcpEndpoint {
            rank,
            size,
            writers,
            self_tx,
            incoming,
            readers: Mutex::new(readers),
            closed: AtomicBool::new(false),
            sent: AtomicU64::new(0),
            received: AtomicU64::new(0),
        })
    }
}

fn connect_with_retry(addr: SocketAddr) -> Result<TcpStream> {
    let deadline = Instant::now() + CONNECT_TIMEOUT;
    loop {
        match TcpStream::connect(addr) {
            Ok(stream) => return Ok(stream),
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

impl Transport for TcpEndpoint {
    fn rank(&self) -> u32 {
        self.rank
    }

    fn size(&self) -> u32 {
        self.size
    }

    fn send_bytes(&self, envelope: Envelope, payload: Vec<u8>) -> Result<()> {
        check_outgoing(self.rank, self.size, &envelope, &payload)?;
        if self.closed.load(Ordering::Acquire) {
            return Err(Error::TransportClosed(envelope.dst));
        }
        match &self.writers[envelope.dst as usize] {
            None => self
                .self_tx
                .send(Frame { envelope, payload })
                .map_err(|_| Error::TransportClosed(envelope.dst))?,
            Some(writer) => {
                let bytes = frame::encode_frame(&envelope, &payload);
                let mut stream = writer.lock().unwrap_or_else(|e| e.into_inner());
                stream
                    .write_all(&bytes)
                    .map_err(|_| Error::TransportClosed(envelope.dst))?;
            }
        }
        self.sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn poll_incoming(&self) -> Option<Frame> {
        let frame = self.incoming.try_recv().ok()?;
        self.received.fetch_add(1, Ordering::Relaxed);
        Some(frame)
    }

    fn incoming(&self) -> &Receiver<Frame> {
        &self.incoming
    }

    fn close(&self) {
        if self.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        for writer in self.writers.iter().flatten() {
            let stream = writer.lock().unwrap_or_else(|e| e.into_inner());
            let _ = stream.shutdown(Shutdown::Write);
        }
    }

    fn join(&self) {
        let readers = std::mem::take(&mut *self.readers.lock().unwrap_or_else(|e| e.into_inner()));
        for r in readers {
            let _ = r.join();
        }
    }

    fn stats(&self) -> TransportStats {
        TransportStats {
            frames_sent: self.sent.load(Ordering::Relaxed),
            frames_received: self.received.load(Ordering::Relaxed),
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        self.close();
        for writer in self.writers.iter().flatten() {
            let stream = writer.lock().unwrap_or_else(|e| e.into_inner());
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.join();
    }
}
