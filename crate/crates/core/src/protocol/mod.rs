//! Two-party split inference and training over a framed wire format, with a
//! passive tap that records what crosses the cut.

mod wire;

use std::collections::VecDeque;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use thiserror::Error;

pub use wire::{
    deserialize, deserialize_all, frame_len, read_message, serialize, write_message, DType, Direction, MsgType,
    WireMessage, MAGIC, VERSION,
};

use crate::models::{epoch_batches, EpochStats, SHUFFLE_STREAM};
use crate::nn::{cross_entropy_batch, NnError, Optimizer, Sequential, Tensor, TrainConfig};
use crate::seed;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown message type {0:#04x}")]
    BadType(u8),
    #[error("unknown dtype {0:#04x}")]
    BadDType(u8),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("cannot encode: {0}")]
    Unrepresentable(String),
    #[error("sequence number {seq} does not follow {last} for {direction:?}")]
    OutOfOrder { direction: Direction, last: u64, seq: u64 },
    #[error("unexpected {0:?} message")]
    Unexpected(MsgType),
    #[error("{0}")]
    Session(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Messages seen on the wire, in arrival order. Each message's direction
/// follows from its type.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<WireMessage>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a message; its sequence number must exceed the last one seen in
    /// the same direction.
    pub fn push(&mut self, msg: WireMessage) -> Result<(), ProtocolError> {
        let dir = msg.direction();
        if let Some(last) = self.messages.iter().rev().find(|m| m.direction() == dir) {
            if msg.seq() <= last.seq() {
                return Err(ProtocolError::OutOfOrder { direction: dir, last: last.seq(), seq: msg.seq() });
            }
        }
        self.messages.push(msg);
        Ok(())
    }

    pub fn messages(&self) -> &[WireMessage] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn of_type(&self, t: MsgType) -> impl Iterator<Item = &WireMessage> {
        self.messages.iter().filter(move |m| m.msg_type() == t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.messages.iter().flat_map(serialize).collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let mut t = Transcript::new();
        for m in deserialize_all(bytes)? {
            t.push(m)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        Transcript::from_bytes(&fs::read(path)?)
    }
}

/// Shared handle the adversary reads after a run.
pub type Tap = Arc<Mutex<Transcript>>;

pub fn new_tap() -> Tap {
    Arc::new(Mutex::new(Transcript::new()))
}

/// Party B: answers one request at a time.
pub trait Responder {
    fn handle(&mut self, msg: WireMessage) -> Result<WireMessage, ProtocolError>;
}

/// Synchronous in-process duplex link. Every message is encoded, optionally
/// recorded by the tap, and decoded on the other side.
pub struct InProcessChannel<R> {
    responder: R,
    tap: Option<Tap>,
}

impl<R: Responder> InProcessChannel<R> {
    pub fn new(responder: R, tap: Option<Tap>) -> Self {
        InProcessChannel { responder, tap }
    }

    fn cross(&self, msg: &WireMessage) -> Result<WireMessage, ProtocolError> {
        let bytes = serialize(msg);
        let received = deserialize(&bytes)?;
        if let Some(tap) = &self.tap {
            tap.lock().expect("tap lock poisoned").push(received.clone())?;
        }
        Ok(received)
    }

    pub fn request(&mut self, msg: &WireMessage) -> Result<WireMessage, ProtocolError> {
        let req = self.cross(msg)?;
        let resp = self.responder.handle(req)?;
        self.cross(&resp)
    }

    pub fn into_responder(self) -> R {
        self.responder
    }
}

/// Client end of the same wire format over any reliable byte stream.
pub struct StreamChannel<S> {
    stream: S,
}

impl<S: Read + Write> StreamChannel<S> {
    pub fn new(stream: S) -> Self {
        StreamChannel { stream }
    }

    pub fn request(&mut self, msg: &WireMessage) -> Result<WireMessage, ProtocolError> {
        write_message(&mut self.stream, msg)?;
        read_message(&mut self.stream)?
            .ok_or_else(|| ProtocolError::Session("peer closed the stream before replying".into()))
    }
}

/// Answer requests from `stream` until the peer closes it.
pub fn serve<S: Read + Write, R: Responder>(mut stream: S, responder: &mut R) -> Result<(), ProtocolError> {
    while let Some(msg) = read_message(&mut stream)? {
        let reply = responder.handle(msg)?;
        write_message(&mut stream, &reply)?;
    }
    Ok(())
}

/// Restore the batch axis a single-sample message omits.
fn as_batch(t: Tensor, sample_shape: &[usize]) -> Result<Tensor, ProtocolError> {
    if t.shape() == sample_shape {
        let mut shape = vec![1];
        shape.extend_from_slice(sample_shape);
        Ok(t.reshape(shape)?)
    } else {
        Ok(t)
    }
}

/// Party B at inference time: runs its half on received activations and
/// returns probabilities in double precision.
pub struct InferenceServer {
    back: Sequential,
    seq: u64,
}

impl InferenceServer {
    pub fn new(back: Sequential) -> Self {
        InferenceServer { back, seq: 0 }
    }
}

impl Responder for InferenceServer {
    fn handle(&mut self, msg: WireMessage) -> Result<WireMessage, ProtocolError> {
        if msg.msg_type() != MsgType::Activation {
            return Err(ProtocolError::Unexpected(msg.msg_type()));
        }
        let single = msg.tensor().shape() == self.back.input_shape();
        let probs = self.back.predict(&as_batch(msg.into_tensor(), self.back.input_shape())?)?;
        let probs = if single { probs.sample_tensor(0) } else { probs };
        let reply = WireMessage::new(MsgType::Result, DType::F64, self.seq, &probs)?;
        self.seq += 1;
        Ok(reply)
    }
}

fn check_halves(front: &Sequential, back: &Sequential) -> Result<(), ProtocolError> {
    if front.output_shape() != back.input_shape() {
        return Err(ProtocolError::Session(format!(
            "party A emits {:?} but party B expects {:?}",
            front.output_shape(),
            back.input_shape()
        )));
    }
    Ok(())
}

/// Classify one image (`(1, H, W)`, no batch axis) across the two parties.
/// The activation crosses in single precision; the result in double.
pub fn collaborative_infer(
    front: &Sequential,
    back: &Sequential,
    image: &Tensor,
    tap: Option<Tap>,
) -> Result<Vec<f64>, ProtocolError> {
    check_halves(front, back)?;
    let x = as_batch(image.clone(), front.input_shape())?;
    if x.batch_len() != 1 {
        return Err(ProtocolError::Session("collaborative_infer takes one image".into()));
    }
    let v = front.predict(&x)?.sample_tensor(0);
    let mut channel = InProcessChannel::new(InferenceServer::new(back.clone()), tap);
    let reply = channel.request(&WireMessage::new(MsgType::Activation, DType::F32, 0, &v)?)?;
    if reply.msg_type() != MsgType::Result {
        return Err(ProtocolError::Unexpected(reply.msg_type()));
    }
    Ok(reply.into_tensor().into_data())
}

/// Party B during training: owns the labels, its half and its optimizer, and
/// follows the batch schedule both parties derive from the shared seed.
pub struct TrainServer {
    back: Sequential,
    labels: Vec<usize>,
    opt: Optimizer,
    schedule: VecDeque<Vec<usize>>,
    seq: u64,
    loss_sum: f64,
    hits: usize,
}

impl TrainServer {
    fn take_epoch_stats(&mut self, n: usize) -> EpochStats {
        let stats = EpochStats { loss: self.loss_sum / n as f64, accuracy: self.hits as f64 / n as f64 };
        self.loss_sum = 0.0;
        self.hits = 0;
        stats
    }
}

impl Responder for TrainServer {
    fn handle(&mut self, msg: WireMessage) -> Result<WireMessage, ProtocolError> {
        if msg.msg_type() != MsgType::Activation {
            return Err(ProtocolError::Unexpected(msg.msg_type()));
        }
        let batch = self
            .schedule
            .pop_front()
            .ok_or_else(|| ProtocolError::Session("activation received after the schedule ended".into()))?;
        let v = msg.into_tensor();
        if v.batch_len() != batch.len() {
            return Err(ProtocolError::Session(format!("expected a batch of {}, got {}", batch.len(), v.batch_len())));
        }
        let y: Vec<usize> = batch.iter().map(|&i| self.labels[i]).collect();
        let probs = self.back.forward(&v)?;
        let loss = cross_entropy_batch(&probs, &y)?;
        self.loss_sum += loss.value() * batch.len() as f64;
        self.hits += (0..y.len()).filter(|&i| crate::metrics::argmax(probs.sample(i)) == y[i]).count();
        let g = self.back.backward_from(loss.grad(), true)?.expect("input gradient requested");
        self.opt.step(&mut self.back)?;
        let reply = WireMessage::new(MsgType::Gradient, DType::F64, self.seq, &g)?;
        self.seq += 1;
        Ok(reply)
    }
}

/// Outcome of [`collaborative_train`].
pub struct SplitTraining {
    pub front: Sequential,
    pub back: Sequential,
    pub trace: Vec<EpochStats>,
}

/// Train both halves for `config.epochs` epochs. Party A sends each batch's
/// cut activation; party B returns the gradient at the cut. Both travel in
/// double precision, which makes the result identical to training the
/// composed stack with [`crate::models::train_classifier`].
pub fn collaborative_train(
    front: Sequential,
    back: Sequential,
    inputs: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    tap: Option<Tap>,
) -> Result<SplitTraining, ProtocolError> {
    check_halves(&front, &back)?;
    let n = labels.len();
    if n == 0 {
        return Err(ProtocolError::Session("cannot train on an empty dataset".into()));
    }
    if inputs.batch_len() != n {
        return Err(ProtocolError::Session(format!("{} inputs but {n} labels", inputs.batch_len())));
    }
    config.validate(n)?;
    let mut rng = seed::stream(config.seed, SHUFFLE_STREAM);
    let schedule: Vec<Vec<Vec<usize>>> =
        (0..config.epochs).map(|_| epoch_batches(n, config.batch_size, &mut rng)).collect();
    let server = TrainServer {
        back,
        labels: labels.to_vec(),
        opt: Optimizer::new(config),
        schedule: schedule.iter().flatten().cloned().collect(),
        seq: 0,
        loss_sum: 0.0,
        hits: 0,
    };
    let mut channel = InProcessChannel::new(server, tap);
    let mut front = front;
    let mut opt = Optimizer::new(config);
    let mut seq = 0;
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in &schedule {
        for batch in epoch {
            let v = front.forward(&inputs.select(batch))?;
            let reply = channel.request(&WireMessage::new(MsgType::Activation, DType::F64, seq, &v)?)?;
            seq += 1;
            if reply.msg_type() != MsgType::Gradient {
                return Err(ProtocolError::Unexpected(reply.msg_type()));
            }
            front.backward_from(reply.tensor(), false)?;
            opt.step(&mut front)?;
        }
        trace.push(channel.responder.take_epoch_stats(n));
    }
    Ok(SplitTraining { front, back: channel.into_responder().back, trace })
}
