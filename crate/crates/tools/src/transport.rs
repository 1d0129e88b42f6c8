//! Reference transports for the data-age comparison: a direct peer-to-peer
//! channel and a single-hop publish/subscribe broker, both on the MEM1 framing.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use epimem_net::acceptor::Acceptor;
use epimem_net::frame::{read_frame, write_frame, Frame, MsgType};
use epimem_net::NetError;
use parking_lot::Mutex;

/// Receiving end of a P2P channel: the producer connects and writes frames directly.
pub struct P2pReceiver {
    listener: TcpListener,
}

impl P2pReceiver {
    pub fn bind() -> Result<Self, NetError> {
        Ok(P2pReceiver {
            listener: TcpListener::bind("127.0.0.1:0")?,
        })
    }

    pub fn endpoint(&self) -> String {
        self.listener.local_addr().expect("bound listener").to_string()
    }

    /// Accepts the producer and calls `on_frame` for each frame until it disconnects.
    pub fn serve_one(self, mut on_frame: impl FnMut(Frame) + Send + 'static) -> thread::JoinHandle<()> {
        thread::spawn(move || {
            let Ok((stream, _)) = self.listener.accept() else {
                return;
            };
            let _ = stream.set_nodelay(true);
            let mut reader = BufReader::new(stream);
            while let Ok(Some(f)) = read_frame(&mut reader) {
                on_frame(f);
            }
        })
    }
}

pub fn connect(endpoint: &str) -> Result<TcpStream, NetError> {
    let s = TcpStream::connect(endpoint)?;
    s.set_nodelay(true)?;
    Ok(s)
}

type Subscribers = Arc<Mutex<Vec<Arc<Mutex<BufWriter<TcpStream>>>>>>;

/// Forwards every COMMIT frame it receives to all connections that sent SUBSCRIBE.
pub struct Broker {
    acceptor: Acceptor,
}

impl Broker {
    pub fn start() -> Result<Self, NetError> {
        let subs: Subscribers = Arc::default();
        let acceptor = Acceptor::bind(
            "127.0.0.1:0",
            "broker",
            Arc::new(move |stream: TcpStream| {
                let Ok(w) = stream.try_clone() else { return };
                let writer = Arc::new(Mutex::new(BufWriter::new(w)));
                let mut reader = BufReader::new(stream);
                while let Ok(Some(f)) = read_frame(&mut reader) {
                    match f.ty {
                        MsgType::Subscribe => {
                            subs.lock().push(writer.clone());
                            let _ = write_frame(&mut *writer.lock(), &f);
                        }
                        MsgType::Commit => {
                            let out = Frame::new(MsgType::Notify, f.payload);
                            subs.lock().retain(|s| write_frame(&mut *s.lock(), &out).is_ok());
                        }
                        _ => {}
                    }
                }
            }),
        )?;
        Ok(Broker { acceptor })
    }

    pub fn endpoint(&self) -> String {
        self.acceptor.local_addr().to_string()
    }
}

/// Subscribes to a broker and calls `on_frame` for every forwarded frame.
pub fn broker_subscribe(
    endpoint: &str,
    mut on_frame: impl FnMut(Frame) + Send + 'static,
) -> Result<thread::JoinHandle<()>, NetError> {
    let mut stream = connect(endpoint)?;
    write_frame(
        &mut stream,
        &Frame::new(MsgType::Subscribe, epimem_core::DataObject::map::<&str>([])),
    )?;
    let mut reader = BufReader::new(stream);
    match read_frame(&mut reader)? {
        Some(f) if f.ty == MsgType::Subscribe => {}
        _ => return Err(NetError::Protocol("broker did not acknowledge the subscription".into())),
    }
    Ok(thread::spawn(move || {
        while let Ok(Some(f)) = read_frame(&mut reader) {
            on_frame(f);
        }
    }))
}
