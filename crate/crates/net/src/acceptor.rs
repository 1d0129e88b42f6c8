//! Thread-per-connection TCP accept loop with orderly shutdown.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;

type Handler = Arc<dyn Fn(TcpStream) + Send + Sync>;

pub struct Acceptor {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<(u64, TcpStream)>>>,
    thread: Option<JoinHandle<()>>,
}

impl Acceptor {
    pub fn bind(addr: &str, name: &str, handler: Handler) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<(u64, TcpStream)>>> = Arc::default();
        let next = Arc::new(AtomicU64::new(0));
        let thread = {
            let stop = stop.clone();
            let conns = conns.clone();
            thread::Builder::new().name(format!("{name}-accept")).spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    let id = next.fetch_add(1, Ordering::Relaxed);
                    if let Ok(clone) = stream.try_clone() {
                        conns.lock().push((id, clone));
                    }
                    let handler = handler.clone();
                    let conns = conns.clone();
                    let spawned = thread::Builder::new().name(format!("conn-{id}")).spawn(move || {
                        handler(stream);
                        conns.lock().retain(|(i, _)| *i != id);
                    });
                    if let Err(e) = spawned {
                        tracing::warn!("cannot spawn connection thread: {e}");
                    }
                }
            })?
        };
        Ok(Acceptor {
            addr,
            stop,
            conns,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connection_count(&self) -> usize {
        self.conns.lock().len()
    }

    /// Stops accepting and closes every open connection.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        for (_, s) in self.conns.lock().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Acceptor {
    fn drop(&mut self) {
        self.shutdown();
    }
}
