//! WebSocket control service.
//!
//! One thread per connection parses nothing; it forwards text lines into the
//! inbound queue and writes whatever its bounded outbox holds. The timing
//! loop owns the session and is the only thing that mutates it. Model steps
//! for the bar cycle run on a helper thread and come back through the same
//! queue.

use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender, TrySendError};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use groove_core::session::{
    ControlMessage, CycleJob, CycleResult, OutputRecord, ServerMessage, Session,
};
use tungstenite::Message;

const OUTBOX: usize = 64;
const TRANSPORT_INTERVAL: Duration = Duration::from_millis(250);
const MAX_WAIT: Duration = Duration::from_millis(20);
const READ_POLL: Duration = Duration::from_millis(5);

enum Inbound {
    Connect { id: u64, outbox: SyncSender<String> },
    Disconnect { id: u64 },
    Control { id: u64, text: String },
    Done(CycleResult),
}

pub fn run(session: Session, addr: &str) -> Result<()> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on ws://{}", listener.local_addr()?);
    let (tx, rx) = mpsc::channel();

    let (job_tx, job_rx) = mpsc::channel::<CycleJob>();
    let done_tx = tx.clone();
    thread::Builder::new().name("model".into()).spawn(move || {
        for job in job_rx {
            let bar = job.target_bar;
            match job.run() {
                Ok(result) => {
                    if done_tx.send(Inbound::Done(result)).is_err() {
                        break;
                    }
                }
                Err(e) => log::error!("model step for bar {bar} failed: {e}"),
            }
        }
    })?;

    let accept_tx = tx.clone();
    thread::Builder::new().name("accept".into()).spawn(move || {
        for (id, stream) in (0u64..).zip(listener.incoming()) {
            match stream {
                Ok(stream) => {
                    let tx = accept_tx.clone();
                    let spawned = thread::Builder::new()
                        .name(format!("client-{id}"))
                        .spawn(move || client(id, stream, tx));
                    if let Err(e) = spawned {
                        log::error!("cannot spawn client thread: {e}");
                    }
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    })?;
    drop(tx);

    Timing::new(session, job_tx).run(rx)
}

fn client(id: u64, stream: TcpStream, tx: Sender<Inbound>) {
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("client {id}: handshake failed: {e}");
            return;
        }
    };
    if let Err(e) = ws.get_ref().set_read_timeout(Some(READ_POLL)) {
        log::warn!("client {id}: {e}");
        return;
    }
    let (outbox, pending) = mpsc::sync_channel(OUTBOX);
    if tx.send(Inbound::Connect { id, outbox }).is_err() {
        return;
    }
    'conn: loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    if tx.send(Inbound::Control { id, text: line.to_string() }).is_err() {
                        break 'conn;
                    }
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => {
                log::debug!("client {id}: {e}");
                break;
            }
        }
        while let Ok(text) = pending.try_recv() {
            if let Err(e) = ws.send(Message::Text(text)) {
                log::debug!("client {id}: {e}");
                break 'conn;
            }
        }
    }
    let _ = tx.send(Inbound::Disconnect { id });
}

struct Timing {
    session: Session,
    jobs: Sender<CycleJob>,
    clients: BTreeMap<u64, SyncSender<String>>,
    start: Instant,
    last_transport: Option<Instant>,
    last_pattern: Option<String>,
}

impl Timing {
    fn new(mut session: Session, jobs: Sender<CycleJob>) -> Self {
        session.set_helper_mode(true);
        Self {
            session,
            jobs,
            clients: BTreeMap::new(),
            start: Instant::now(),
            last_transport: None,
            last_pattern: None,
        }
    }

    fn run(mut self, rx: Receiver<Inbound>) -> Result<()> {
        let first = self.session.start()?;
        self.start = Instant::now();
        self.publish(first);
        loop {
            let elapsed = self.start.elapsed().as_secs_f64();
            let due = self.session.now_s() + self.session.time_to_next_step();
            let wait = Duration::from_secs_f64((due - elapsed).max(0.0)).min(MAX_WAIT);
            match rx.recv_timeout(wait) {
                Ok(msg) => {
                    self.catch_up()?;
                    self.handle(msg);
                }
                Err(RecvTimeoutError::Timeout) => self.catch_up()?,
                Err(RecvTimeoutError::Disconnected) => return Ok(()),
            }
        }
    }

    fn catch_up(&mut self) -> Result<()> {
        let dt = self.start.elapsed().as_secs_f64() - self.session.now_s();
        if dt > 0.0 {
            let records = self.session.advance(dt)?;
            for job in self.session.take_jobs() {
                if self.jobs.send(job).is_err() {
                    log::error!("model thread is gone");
                }
            }
            self.publish(records);
        }
        if self.last_transport.is_none_or(|t| t.elapsed() >= TRANSPORT_INTERVAL) {
            self.last_transport = Some(Instant::now());
            let t = self.session.transport();
            let msg = ServerMessage::Transport {
                bpm: t.bpm(),
                bar: t.bar_index(),
                step: t.step_index(),
            };
            self.broadcast(&msg.to_json());
        }
        Ok(())
    }

    fn handle(&mut self, msg: Inbound) {
        match msg {
            Inbound::Connect { id, outbox } => {
                log::info!("client {id} connected");
                self.clients.insert(id, outbox);
                let hello = ServerMessage::Ack(self.session.control_state()).to_json();
                self.send(id, hello);
                if let Some(p) = self.last_pattern.clone() {
                    self.send(id, p);
                }
            }
            Inbound::Disconnect { id } => {
                log::info!("client {id} disconnected");
                self.clients.remove(&id);
            }
            Inbound::Control { id, text } => {
                let reply = match ControlMessage::from_json(&text).and_then(|m| self.session.handle_message(&m)) {
                    Ok(state) => ServerMessage::Ack(state),
                    Err(e) => {
                        log::warn!("client {id}: rejected message: {e}");
                        ServerMessage::error(&e)
                    }
                };
                self.send(id, reply.to_json());
            }
            Inbound::Done(result) => {
                let now = self.session.now_s();
                self.session.deliver(result, now);
            }
        }
    }

    fn publish(&mut self, records: Vec<OutputRecord>) {
        for r in records {
            if let OutputRecord::Pattern {
                bar_index,
                grids,
                densities,
                ..
            } = r
            {
                let msg = ServerMessage::Pattern {
                    bar_index,
                    grids,
                    densities,
                }
                .to_json();
                self.last_pattern = Some(msg.clone());
                self.broadcast(&msg);
                let metrics = ServerMessage::Metrics(self.session.metrics().clone()).to_json();
                self.broadcast(&metrics);
            }
        }
    }

    fn broadcast(&mut self, text: &str) {
        let ids: Vec<u64> = self.clients.keys().copied().collect();
        for id in ids {
            self.send(id, text.to_string());
        }
    }

    fn send(&mut self, id: u64, text: String) {
        let Some(outbox) = self.clients.get(&id) else {
            return;
        };
        match outbox.try_send(text) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => self.session.note_dropped_frames(1),
            Err(TrySendError::Disconnected(_)) => {
                self.clients.remove(&id);
            }
        }
    }
}
