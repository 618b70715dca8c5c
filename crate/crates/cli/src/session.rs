//! Session service: newline-delimited JSON over TCP, one controller per
//! connection.
//!
//! Every message is an envelope `{type, seq, reply_to?, payload}`. Each side
//! numbers its own messages with a strictly increasing `seq`; server replies
//! carry the triggering client message's `seq` in `reply_to`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gaze_core::controller::{Controller, ControllerPolicy, Predictor};
use gaze_core::features::{encode_frame, window_dataset, LabeledFrame, Normalization};
use gaze_core::scene::{BoxState, People, SceneFrame, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    #[serde(default)]
    pub payload: Value,
}

impl Envelope {
    pub fn new(kind: &str, seq: u64, payload: Value) -> Self {
        Self {
            kind: kind.into(),
            seq,
            reply_to: None,
            payload,
        }
    }
}

/// Payload of `scene_update`: the full character state, optionally with the
/// operator's gaze annotation for recording.
#[derive(Debug, Clone, Deserialize)]
pub struct SceneUpdate {
    pub characters: People,
    #[serde(rename = "box", default)]
    pub box_state: Option<BoxState>,
    #[serde(default)]
    pub gaze_label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TickMode {
    /// Ticks at the variant frame rate, holding the last scene when the
    /// client falls behind.
    #[default]
    Paced,
    /// One tick per scene_update, as fast as they arrive.
    Lockstep,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub policy: ControllerPolicy,
    pub normalization: Normalization,
    pub record_dir: PathBuf,
}

/// Accepts sessions until the listener fails; each runs on its own thread.
pub fn serve(listener: TcpListener, predictor: Arc<dyn Predictor>, options: ServeOptions) -> std::io::Result<()> {
    let sessions = Arc::new(AtomicU64::new(0));
    for stream in listener.incoming() {
        let stream = stream?;
        let predictor = Arc::clone(&predictor);
        let options = options.clone();
        let id = sessions.fetch_add(1, Ordering::Relaxed);
        std::thread::spawn(move || {
            if let Err(e) = run_session(stream, predictor.as_ref(), &options, id) {
                eprintln!("session {id}: {e}");
            }
        });
    }
    Ok(())
}

enum Incoming {
    Message(Envelope),
    Malformed(String),
}

struct Recording {
    frames: Vec<LabeledFrame>,
    operator_labels: bool,
}

struct Session<'a, W: Write> {
    out: W,
    seq: u64,
    controller: Controller<'a>,
    variant: Variant,
    options: &'a ServeOptions,
    id: u64,
    mode: Option<TickMode>,
    scene: Option<(SceneUpdate, u64)>,
    tick: usize,
    recording: Option<Recording>,
    saved: usize,
}

impl<W: Write> Session<'_, W> {
    fn send(&mut self, kind: &str, reply_to: Option<u64>, payload: Value) -> std::io::Result<()> {
        self.seq += 1;
        let env = Envelope {
            kind: kind.into(),
            seq: self.seq,
            reply_to,
            payload,
        };
        serde_json::to_writer(&mut self.out, &env)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    fn error(&mut self, reply_to: Option<u64>, message: String) -> std::io::Result<()> {
        self.send("error", reply_to, json!({ "message": message }))
    }

    fn handle(&mut self, msg: Envelope) -> std::io::Result<()> {
        let seq = Some(msg.seq);
        match msg.kind.as_str() {
            "hello" => {
                let mode = match msg.payload.get("mode") {
                    None => TickMode::default(),
                    Some(v) => match serde_json::from_value(v.clone()) {
                        Ok(m) => m,
                        Err(e) => return self.error(seq, format!("bad mode: {e}")),
                    },
                };
                self.mode = Some(mode);
                let payload = json!({
                    "protocol_version": PROTOCOL_VERSION,
                    "variant": self.variant,
                    "m": self.controller.policy().m,
                    "labels": self.variant.label_names(),
                    "tick_s": 1.0 / self.variant.fps(),
                    "session": self.id,
                });
                self.send("ready", seq, payload)
            }
            _ if self.mode.is_none() => self.error(seq, "expected hello first".into()),
            "scene_update" => match serde_json::from_value::<SceneUpdate>(msg.payload) {
                Ok(update) => {
                    let frame = self.frame(&update);
                    if frame.variant() != self.variant {
                        return self.error(seq, format!("scene is not a {} scene", self.variant));
                    }
                    if let Some(label) = update.gaze_label.filter(|&l| l >= self.variant.label_count()) {
                        return self.error(seq, format!("gaze_label {label} out of range"));
                    }
                    self.scene = Some((update, msg.seq));
                    if self.mode == Some(TickMode::Lockstep) {
                        self.tick()?;
                    }
                    Ok(())
                }
                Err(e) => self.error(seq, format!("bad scene_update: {e}")),
            },
            "set_policy" => {
                let mut merged = serde_json::to_value(self.controller.policy()).expect("policy serializes");
                if let (Some(dst), Some(src)) = (merged.as_object_mut(), msg.payload.as_object()) {
                    for (k, v) in src {
                        dst.insert(k.clone(), v.clone());
                    }
                }
                let applied = serde_json::from_value::<ControllerPolicy>(merged)
                    .map_err(|e| e.to_string())
                    .and_then(|p| self.controller.set_policy(p).map_err(|e| e.to_string()));
                match applied {
                    Ok(()) => {
                        let policy = serde_json::to_value(self.controller.policy()).expect("policy serializes");
                        self.send("policy", seq, policy)
                    }
                    Err(e) => self.error(seq, e),
                }
            }
            "start_record" => {
                self.recording = Some(Recording {
                    frames: Vec::new(),
                    operator_labels: false,
                });
                self.send("recording", seq, json!({ "started": true }))
            }
            "stop_record" => match self.recording.take() {
                None => self.error(seq, "not recording".into()),
                Some(rec) => match self.save(rec) {
                    Ok(payload) => self.send("record_saved", seq, payload),
                    Err(e) => self.error(seq, e),
                },
            },
            other => self.error(seq, format!("unknown message type {other:?}")),
        }
    }

    fn frame(&self, update: &SceneUpdate) -> SceneFrame {
        SceneFrame {
            tick: self.tick,
            t_s: self.tick as f64 / self.variant.fps(),
            situation_id: 0,
            people: update.characters.clone(),
            box_state: match self.variant {
                Variant::TwoD => Some(update.box_state.unwrap_or_default()),
                Variant::ThreeD => None,
            },
        }
    }

    fn tick(&mut self) -> std::io::Result<()> {
        let Some((update, scene_seq)) = self.scene.clone() else {
            return Ok(());
        };
        let frame = self.frame(&update);
        let dt = 1.0 / self.variant.fps();
        match self.controller.step(&frame, dt) {
            Ok(cmd) => {
                if let Some(rec) = &mut self.recording {
                    rec.operator_labels |= update.gaze_label.is_some();
                    rec.frames.push(LabeledFrame {
                        tick: frame.tick,
                        situation_id: 0,
                        features: encode_frame(&frame),
                        label: update.gaze_label.or(cmd.target),
                        valid: true,
                    });
                }
                self.tick += 1;
                let payload = serde_json::to_value(&cmd).expect("command serializes");
                self.send("gaze", Some(scene_seq), payload)
            }
            Err(e) => self.error(Some(scene_seq), e.to_string()),
        }
    }

    fn save(&mut self, rec: Recording) -> Result<Value, String> {
        let m = self.controller.policy().m;
        let mut ds = window_dataset(&rec.frames, m, 1, &self.options.normalization).map_err(|e| e.to_string())?;
        ds.meta.source = "session".into();
        ds.meta.provenance = json!({
            "session": self.id,
            "frames": rec.frames.len(),
            "labels": if rec.operator_labels { "operator" } else { "machine" },
        });
        std::fs::create_dir_all(&self.options.record_dir).map_err(|e| e.to_string())?;
        self.saved += 1;
        let path = self
            .options
            .record_dir
            .join(format!("session-{}-{}.jsonl", self.id, self.saved));
        let file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
        ds.write_jsonl(std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
        Ok(json!({ "path": path, "examples": ds.len(), "frames": rec.frames.len() }))
    }
}

/// Runs one session to completion (client disconnect).
pub fn run_session(
    stream: TcpStream,
    predictor: &dyn Predictor,
    options: &ServeOptions,
    id: u64,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            let msg = match serde_json::from_str::<Envelope>(&line) {
                Ok(env) => Incoming::Message(env),
                Err(e) => Incoming::Malformed(e.to_string()),
            };
            if tx.send(msg).is_err() {
                break;
            }
        }
    });

    let controller = Controller::new(options.policy, predictor, options.normalization)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let mut session = Session {
        out: std::io::BufWriter::new(stream),
        seq: 0,
        controller,
        variant: predictor.variant(),
        options,
        id,
        mode: None,
        scene: None,
        tick: 0,
        recording: None,
        saved: 0,
    };
    let tick = Duration::from_secs_f64(1.0 / session.variant.fps());
    let mut next_tick = Instant::now() + tick;
    let mut last_client_seq: Option<u64> = None;
    loop {
        let paced = session.mode == Some(TickMode::Paced) && session.scene.is_some();
        let incoming = if paced {
            match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                Ok(m) => Some(m),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return Ok(()),
            }
        } else {
            match rx.recv() {
                Ok(m) => Some(m),
                Err(_) => return Ok(()),
            }
        };
        match incoming {
            Some(Incoming::Malformed(e)) => session.error(None, format!("malformed message: {e}"))?,
            Some(Incoming::Message(msg)) => {
                if last_client_seq.is_some_and(|s| msg.seq <= s) {
                    session.error(Some(msg.seq), format!("seq {} is not increasing", msg.seq))?;
                    continue;
                }
                last_client_seq = Some(msg.seq);
                let was_waiting = session.scene.is_none();
                session.handle(msg)?;
                if was_waiting && session.scene.is_some() {
                    next_tick = Instant::now();
                }
            }
            None => {}
        }
        if session.mode == Some(TickMode::Paced) && session.scene.is_some() {
            // zero-order hold: catch up on every elapsed tick with the latest scene
            while Instant::now() >= next_tick {
                session.tick()?;
                next_tick += tick;
            }
        }
    }
}
