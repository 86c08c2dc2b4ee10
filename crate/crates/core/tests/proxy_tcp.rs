//! The middleware's TCP front end with a scripted switch and controller.

use std::time::Duration;

use ledgernet::chain::{ConsensusConfig, ElementId, Ledger, Role};
use ledgernet::middleware::service::{self, ServiceConfig};
use ledgernet::middleware::{Middleware, MiddlewareConfig, MwEvent};
use ledgernet::ofwire::{decode, encode, FrameBuffer, OfBody, OfHeader, OfMessage, PacketIn, SwitchFeatures};
use ledgernet::sched::MS;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::timeout;

const WAIT: Duration = Duration::from_secs(10);

fn frame(m: OfMessage) -> Vec<u8> {
    encode(&m).unwrap()
}

async fn read_frame(s: &mut TcpStream, buf: &mut FrameBuffer) -> Vec<u8> {
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(f) = buf.next_frame().unwrap() {
            return f;
        }
        let n = timeout(WAIT, s.read(&mut chunk)).await.expect("read timed out").unwrap();
        assert!(n > 0, "peer closed");
        buf.push(&chunk[..n]);
    }
}

/// Next frame not originated by the middleware itself. Its keepalive echoes
/// are answered the way a real peer would.
async fn read_app_frame(s: &mut TcpStream, buf: &mut FrameBuffer) -> Vec<u8> {
    loop {
        let f = read_frame(s, buf).await;
        let h = OfHeader::peek(&f).unwrap();
        if !ledgernet::ofwire::is_reserved_xid(h.xid) {
            return f;
        }
        if let (OfMessage { body: OfBody::EchoRequest(data), xid }, _) = decode(&f).unwrap() {
            s.write_all(&frame(OfMessage::new(xid, OfBody::EchoReply(data)))).await.unwrap();
        }
    }
}

/// A switch that answers the middleware's handshake and echoes.
async fn switch_handshake(s: &mut TcpStream, buf: &mut FrameBuffer, dpid: u64) {
    s.write_all(&frame(OfMessage::hello(7))).await.unwrap();
    loop {
        let f = read_frame(s, buf).await;
        let (msg, _) = decode(&f).unwrap();
        match msg.body {
            OfBody::FeaturesRequest => {
                let reply = SwitchFeatures { datapath_id: dpid, n_buffers: 0, n_tables: 1, auxiliary_id: 0, capabilities: 0 };
                s.write_all(&frame(OfMessage::new(msg.xid, OfBody::FeaturesReply(reply)))).await.unwrap();
                return;
            }
            OfBody::Hello(_) => {}
            other => panic!("unexpected during handshake: {other:?}"),
        }
    }
}

async fn attach(addr: std::net::SocketAddr, id: &str, of_addr: std::net::SocketAddr) -> (String, BufReader<TcpStream>) {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("ATTACH {id} {of_addr}\n").as_bytes()).await.unwrap();
    let mut r = BufReader::new(s);
    let mut line = String::new();
    timeout(WAIT, r.read_line(&mut line)).await.unwrap().unwrap();
    (line.trim().to_string(), r)
}

async fn wait_event(rx: &mut tokio::sync::mpsc::UnboundedReceiver<MwEvent>, pred: impl Fn(&MwEvent) -> bool) {
    loop {
        let ev = timeout(WAIT, rx.recv()).await.expect("event timed out").expect("service ended");
        if pred(&ev) {
            return;
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn relays_bytes_and_enforces_registry() {
    let mut ledger = Ledger::new(ConsensusConfig::pbft(4, MS), 1).unwrap();
    let mut mw = Middleware::new(MiddlewareConfig::default());
    mw.bootstrap(&mut ledger).unwrap();
    ledger.register(&ElementId::new("C1"), Role::Controller, vec![]).unwrap();
    let cfg = ServiceConfig {
        switch_addr: "127.0.0.1:0".parse().unwrap(),
        controller_addr: "127.0.0.1:0".parse().unwrap(),
        tick: Duration::from_millis(20),
    };
    let (handle, mut events) = service::spawn(mw, ledger, cfg).await.unwrap();

    let of_listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let of_addr = of_listener.local_addr().unwrap();
    let (verdict, _rogue) = attach(handle.controller_addr, "C9", of_addr).await;
    assert!(verdict.starts_with("REJECT"), "{verdict}");
    let (verdict, _attach) = attach(handle.controller_addr, "C1", of_addr).await;
    assert_eq!(verdict, "OK");

    let mut sw = TcpStream::connect(handle.switch_addr).await.unwrap();
    let mut sw_buf = FrameBuffer::new();
    switch_handshake(&mut sw, &mut sw_buf, 42).await;
    wait_event(&mut events, |e| matches!(e, MwEvent::Mapped { .. })).await;

    let (mut ctrl, _) = timeout(WAIT, of_listener.accept()).await.unwrap().unwrap();
    let mut ctrl_buf = FrameBuffer::new();
    assert_eq!(read_app_frame(&mut ctrl, &mut ctrl_buf).await, frame(OfMessage::hello(7)));
    ctrl.write_all(&frame(OfMessage::hello(1))).await.unwrap();

    assert_eq!(read_app_frame(&mut sw, &mut sw_buf).await, frame(OfMessage::hello(1)));

    for i in 0..20u32 {
        let pi = frame(OfMessage::new(
            500 + i,
            OfBody::PacketIn(PacketIn { buffer_id: u32::MAX, reason: 0, table_id: 0, cookie: 0, in_port: 1, frame: vec![i as u8; 40] }),
        ));
        sw.write_all(&pi).await.unwrap();
        assert_eq!(read_app_frame(&mut ctrl, &mut ctrl_buf).await, pi);
        let echo = frame(OfMessage::new(900 + i, OfBody::EchoRequest(vec![i as u8])));
        ctrl.write_all(&echo).await.unwrap();
        assert_eq!(read_app_frame(&mut sw, &mut sw_buf).await, echo);
    }

    handle.evict(ElementId::new("C1"), "test").await.unwrap();
    assert!(handle.mapping().await.is_empty());
    let (verdict, _) = attach(handle.controller_addr, "C1", of_addr).await;
    assert!(verdict.starts_with("REJECT"), "{verdict}");
}
