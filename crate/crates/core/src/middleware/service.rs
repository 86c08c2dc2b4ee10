//! TCP front end for [`Middleware`].
//!
//! Switches connect to the switch-facing port and speak OpenFlow. A
//! controller attaches on the controller-facing port with one line,
//! `ATTACH <id> <openflow-addr>`, answered by `OK` or `REJECT <reason>`. For
//! every switch mapped to it, the middleware then dials `<openflow-addr>` and
//! relays that switch's traffic over the new connection. Closing the attach
//! connection detaches the controller.
//!
//! One coordinator task owns the middleware and the ledger; socket tasks only
//! move bytes. The ledger runs in virtual time slaved to the wall clock.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};

use super::{Admission, ChannelId, ConnId, Middleware, MwError, MwEvent, MwOutput};
use crate::chain::{ElementId, Ledger};
use crate::sched::Micros;

enum Cmd {
    SwitchUp { conn: ConnId, tx: mpsc::UnboundedSender<Vec<u8>> },
    SwitchBytes { conn: ConnId, bytes: Vec<u8> },
    SwitchDown { conn: ConnId },
    Attach { id: ElementId, of_addr: SocketAddr, close: oneshot::Sender<()>, reply: oneshot::Sender<Admission> },
    Detach { id: ElementId },
    ChannelBytes { chan: ChannelId, bytes: Vec<u8> },
    ChannelDown { chan: ChannelId },
    Evict { id: ElementId, reason: String, reply: oneshot::Sender<Result<(), MwError>> },
    Remap { switch: ElementId, controller: ElementId, reply: oneshot::Sender<Result<(), MwError>> },
    Mapping { reply: oneshot::Sender<BTreeMap<ElementId, ElementId>> },
    Tick,
}

/// Control handle for a running service.
#[derive(Clone)]
pub struct ServiceHandle {
    cmd: mpsc::UnboundedSender<Cmd>,
    pub switch_addr: SocketAddr,
    pub controller_addr: SocketAddr,
}

impl ServiceHandle {
    pub async fn evict(&self, id: ElementId, reason: &str) -> Result<(), MwError> {
        let (reply, rx) = oneshot::channel();
        let _ = self.cmd.send(Cmd::Evict { id: id.clone(), reason: reason.to_string(), reply });
        rx.await.unwrap_or(Err(MwError::UnknownElement(id)))
    }

    pub async fn remap(&self, switch: ElementId, controller: ElementId) -> Result<(), MwError> {
        let (reply, rx) = oneshot::channel();
        let _ = self.cmd.send(Cmd::Remap { switch: switch.clone(), controller, reply });
        rx.await.unwrap_or(Err(MwError::UnknownElement(switch)))
    }

    pub async fn mapping(&self) -> BTreeMap<ElementId, ElementId> {
        let (reply, rx) = oneshot::channel();
        let _ = self.cmd.send(Cmd::Mapping { reply });
        rx.await.unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub switch_addr: SocketAddr,
    pub controller_addr: SocketAddr,
    pub tick: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            switch_addr: "127.0.0.1:6633".parse().expect("valid addr"),
            controller_addr: "127.0.0.1:6634".parse().expect("valid addr"),
            tick: Duration::from_millis(100),
        }
    }
}

/// Binds both listeners and spawns the coordinator. Events are published on
/// the returned receiver.
pub async fn spawn(
    mw: Middleware,
    ledger: Ledger,
    cfg: ServiceConfig,
) -> std::io::Result<(ServiceHandle, mpsc::UnboundedReceiver<MwEvent>)> {
    let switch_listener = TcpListener::bind(cfg.switch_addr).await?;
    let ctrl_listener = TcpListener::bind(cfg.controller_addr).await?;
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (ev_tx, ev_rx) = mpsc::unbounded_channel();
    let handle = ServiceHandle {
        cmd: cmd_tx.clone(),
        switch_addr: switch_listener.local_addr()?,
        controller_addr: ctrl_listener.local_addr()?,
    };

    tokio::spawn(accept_switches(switch_listener, cmd_tx.clone()));
    tokio::spawn(accept_controllers(ctrl_listener, cmd_tx.clone()));
    let ticker = cmd_tx.clone();
    let period = cfg.tick;
    tokio::spawn(async move {
        let mut iv = tokio::time::interval(period);
        loop {
            iv.tick().await;
            if ticker.send(Cmd::Tick).is_err() {
                break;
            }
        }
    });
    tokio::spawn(Coordinator::new(mw, ledger, cmd_tx, ev_tx).run(cmd_rx));
    Ok((handle, ev_rx))
}

async fn accept_switches(listener: TcpListener, cmd: mpsc::UnboundedSender<Cmd>) {
    let mut next: ConnId = 1;
    while let Ok((stream, _)) = listener.accept().await {
        let conn = next;
        next += 1;
        let (tx, rx) = mpsc::unbounded_channel();
        if cmd.send(Cmd::SwitchUp { conn, tx }).is_err() {
            break;
        }
        let cmd = cmd.clone();
        tokio::spawn(pump(stream, rx, move |bytes| match bytes {
            Some(bytes) => cmd.send(Cmd::SwitchBytes { conn, bytes }).is_ok(),
            None => {
                let _ = cmd.send(Cmd::SwitchDown { conn });
                false
            }
        }));
    }
}

async fn accept_controllers(listener: TcpListener, cmd: mpsc::UnboundedSender<Cmd>) {
    while let Ok((stream, _)) = listener.accept().await {
        tokio::spawn(serve_attach(stream, cmd.clone()));
    }
}

async fn serve_attach(stream: TcpStream, cmd: mpsc::UnboundedSender<Cmd>) {
    let (rd, mut wr) = stream.into_split();
    let mut lines = BufReader::new(rd).lines();
    let Ok(Some(line)) = lines.next_line().await else { return };
    let parts: Vec<&str> = line.split_whitespace().collect();
    let (id, of_addr) = match parts.as_slice() {
        ["ATTACH", id, addr] => match addr.parse::<SocketAddr>() {
            Ok(a) => (ElementId::new(*id), a),
            Err(_) => {
                let _ = wr.write_all(b"ERR bad address\n").await;
                return;
            }
        },
        _ => {
            let _ = wr.write_all(b"ERR expected ATTACH <id> <addr>\n").await;
            return;
        }
    };
    let (reply, verdict) = oneshot::channel();
    let (close, mut closed) = oneshot::channel();
    if cmd.send(Cmd::Attach { id: id.clone(), of_addr, close, reply }).is_err() {
        return;
    }
    match verdict.await {
        Ok(Admission::Accept) => {
            if wr.write_all(b"OK\n").await.is_err() {
                let _ = cmd.send(Cmd::Detach { id });
                return;
            }
        }
        Ok(Admission::Reject(reason)) => {
            let _ = wr.write_all(format!("REJECT {reason}\n").as_bytes()).await;
            return;
        }
        Err(_) => return,
    }
    loop {
        tokio::select! {
            _ = &mut closed => break,
            line = lines.next_line() => match line {
                Ok(Some(_)) => continue,
                _ => {
                    let _ = cmd.send(Cmd::Detach { id: id.clone() });
                    break;
                }
            }
        }
    }
    let _ = wr.shutdown().await;
}

/// Copies socket reads to `on_read` and `rx` to the socket until either
/// side ends. `on_read(None)` reports the close.
async fn pump(stream: TcpStream, mut rx: mpsc::UnboundedReceiver<Vec<u8>>, mut on_read: impl FnMut(Option<Vec<u8>>) -> bool + Send + 'static) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let writer = tokio::spawn(async move {
        while let Some(bytes) = rx.recv().await {
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
        let _ = wr.shutdown().await;
    });
    let mut buf = vec![0u8; 16 * 1024];
    loop {
        match rd.read(&mut buf).await {
            Ok(0) | Err(_) => {
                on_read(None);
                break;
            }
            Ok(n) => {
                if !on_read(Some(buf[..n].to_vec())) {
                    break;
                }
            }
        }
    }
    writer.abort();
}

struct Coordinator {
    mw: Middleware,
    ledger: Ledger,
    started: Instant,
    cmd: mpsc::UnboundedSender<Cmd>,
    events: mpsc::UnboundedSender<MwEvent>,
    switch_tx: BTreeMap<ConnId, mpsc::UnboundedSender<Vec<u8>>>,
    chan_tx: BTreeMap<ChannelId, mpsc::UnboundedSender<Vec<u8>>>,
    of_addr: BTreeMap<ElementId, SocketAddr>,
    attach_close: BTreeMap<ElementId, oneshot::Sender<()>>,
}

impl Coordinator {
    fn new(mw: Middleware, ledger: Ledger, cmd: mpsc::UnboundedSender<Cmd>, events: mpsc::UnboundedSender<MwEvent>) -> Self {
        Coordinator {
            mw,
            ledger,
            started: Instant::now(),
            cmd,
            events,
            switch_tx: BTreeMap::new(),
            chan_tx: BTreeMap::new(),
            of_addr: BTreeMap::new(),
            attach_close: BTreeMap::new(),
        }
    }

    fn now(&self) -> Micros {
        self.ledger.now().max(self.started.elapsed().as_micros() as Micros)
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Cmd>) {
        while let Some(cmd) = rx.recv().await {
            let now = self.now();
            let outs = match cmd {
                Cmd::SwitchUp { conn, tx } => {
                    self.switch_tx.insert(conn, tx);
                    self.mw.on_switch_connect(conn, now)
                }
                Cmd::SwitchBytes { conn, bytes } => self.mw.on_switch_bytes(conn, &bytes, now, &mut self.ledger),
                Cmd::SwitchDown { conn } => {
                    self.switch_tx.remove(&conn);
                    self.mw.on_switch_disconnect(conn, now)
                }
                Cmd::Attach { id, of_addr, close, reply } => {
                    let (verdict, outs) = self.mw.on_controller_connect(&id, now, &mut self.ledger);
                    if verdict == Admission::Accept {
                        self.of_addr.insert(id.clone(), of_addr);
                        self.attach_close.insert(id, close);
                    }
                    let _ = reply.send(verdict);
                    outs
                }
                Cmd::Detach { id } => {
                    self.attach_close.remove(&id);
                    self.mw.on_controller_disconnect(&id, now, &mut self.ledger)
                }
                Cmd::ChannelBytes { chan, bytes } => self.mw.on_channel_bytes(chan, &bytes, now, &mut self.ledger),
                Cmd::ChannelDown { chan } => {
                    self.chan_tx.remove(&chan);
                    match self.mw.channel_ends(chan).map(|(_, c)| c.clone()) {
                        Some(controller) => self.mw.on_controller_disconnect(&controller, now, &mut self.ledger),
                        None => Vec::new(),
                    }
                }
                Cmd::Evict { id, reason, reply } => match self.mw.evict(&id, &reason, now, &mut self.ledger) {
                    Ok(outs) => {
                        let _ = reply.send(Ok(()));
                        outs
                    }
                    Err(e) => {
                        let _ = reply.send(Err(e));
                        Vec::new()
                    }
                },
                Cmd::Remap { switch, controller, reply } => {
                    match self.mw.remap(&switch, &controller, now, &mut self.ledger) {
                        Ok(outs) => {
                            let _ = reply.send(Ok(()));
                            outs
                        }
                        Err(e) => {
                            let _ = reply.send(Err(e));
                            Vec::new()
                        }
                    }
                }
                Cmd::Mapping { reply } => {
                    let _ = reply.send(self.mw.mapping().clone());
                    Vec::new()
                }
                Cmd::Tick => {
                    self.ledger.run_until(now);
                    self.mw.tick(now, &mut self.ledger)
                }
            };
            self.execute(outs);
        }
    }

    fn execute(&mut self, outs: Vec<MwOutput>) {
        for out in outs {
            match out {
                MwOutput::ToSwitch { conn, bytes } => {
                    if let Some(tx) = self.switch_tx.get(&conn) {
                        let _ = tx.send(bytes);
                    }
                }
                MwOutput::ToController { chan, bytes } => {
                    if let Some(tx) = self.chan_tx.get(&chan) {
                        let _ = tx.send(bytes);
                    }
                }
                MwOutput::OpenChannel { chan, controller, .. } => {
                    let Some(&addr) = self.of_addr.get(&controller) else { continue };
                    let (tx, rx) = mpsc::unbounded_channel();
                    self.chan_tx.insert(chan, tx);
                    let cmd = self.cmd.clone();
                    tokio::spawn(async move {
                        match TcpStream::connect(addr).await {
                            Ok(stream) => {
                                pump(stream, rx, move |bytes| match bytes {
                                    Some(bytes) => cmd.send(Cmd::ChannelBytes { chan, bytes }).is_ok(),
                                    None => {
                                        let _ = cmd.send(Cmd::ChannelDown { chan });
                                        false
                                    }
                                })
                                .await
                            }
                            Err(_) => {
                                let _ = cmd.send(Cmd::ChannelDown { chan });
                            }
                        }
                    });
                }
                MwOutput::CloseChannel { chan } => {
                    self.chan_tx.remove(&chan);
                }
                MwOutput::CloseSwitch { conn } => {
                    self.switch_tx.remove(&conn);
                }
                MwOutput::CloseController { controller } => {
                    if let Some(close) = self.attach_close.remove(&controller) {
                        let _ = close.send(());
                    }
                    self.of_addr.remove(&controller);
                }
                MwOutput::Event(ev) => {
                    let _ = self.events.send(ev);
                }
            }
        }
    }
}
