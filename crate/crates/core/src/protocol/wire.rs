use std::io::{self, Read, Write};

use super::ProtocolError;
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"SPLT";
pub const VERSION: u8 = 0x01;
/// Magic, version, type, dtype and ndim.
const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Activation = 0x01,
    Result = 0x02,
    Gradient = 0x03,
}

/// Which party sent a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    AToB,
    BToA,
}

impl MsgType {
    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0x01 => Ok(MsgType::Activation),
            0x02 => Ok(MsgType::Result),
            0x03 => Ok(MsgType::Gradient),
            other => Err(ProtocolError::BadType(other)),
        }
    }

    /// Activations flow from party A; results and gradients come back.
    pub fn direction(self) -> Direction {
        match self {
            MsgType::Activation => Direction::AToB,
            MsgType::Result | MsgType::Gradient => Direction::BToA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0x00,
    F64 = 0x01,
}

impl DType {
    fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0x00 => Ok(DType::F32),
            0x01 => Ok(DType::F64),
            other => Err(ProtocolError::BadDType(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    msg_type: MsgType,
    dtype: DType,
    seq: u64,
    tensor: Tensor,
}

impl WireMessage {
    /// A message carrying `tensor`. With [`DType::F32`] the values are rounded
    /// to single precision here, so the message equals what a receiver decodes.
    pub fn new(msg_type: MsgType, dtype: DType, seq: u64, tensor: &Tensor) -> Result<Self, ProtocolError> {
        if tensor.shape().len() > u8::MAX as usize || tensor.shape().iter().any(|&d| d > u32::MAX as usize) {
            return Err(ProtocolError::Unrepresentable(format!("shape {:?}", tensor.shape())));
        }
        let tensor = match dtype {
            DType::F32 => tensor.round_to_f32(),
            DType::F64 => tensor.clone(),
        };
        Ok(WireMessage { msg_type, dtype, seq, tensor })
    }

    pub fn msg_type(&self) -> MsgType {
        self.msg_type
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn direction(&self) -> Direction {
        self.msg_type.direction()
    }

    /// Total encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        FIXED_HEADER + 4 * self.tensor.shape().len() + 8 + self.tensor.len() * self.dtype.width() + 4
    }
}

pub fn serialize(msg: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(msg.msg_type as u8);
    out.push(msg.dtype as u8);
    out.push(msg.tensor.shape().len() as u8);
    for &d in msg.tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&msg.seq.to_le_bytes());
    for &v in msg.tensor.data() {
        match msg.dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Length of the frame that starts at `bytes[0]`, from its header alone.
pub fn frame_len(bytes: &[u8]) -> Result<usize, ProtocolError> {
    let need = |n: usize| if bytes.len() < n { Err(ProtocolError::Truncated { needed: n, got: bytes.len() }) } else { Ok(()) };
    need(FIXED_HEADER)?;
    if &bytes[..4] != MAGIC {
        return Err(ProtocolError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
    }
    if bytes[4] != VERSION {
        return Err(ProtocolError::BadVersion(bytes[4]));
    }
    MsgType::from_byte(bytes[5])?;
    let dtype = DType::from_byte(bytes[6])?;
    let ndim = bytes[7] as usize;
    if ndim == 0 {
        return Err(ProtocolError::BadShape("zero dimensions".into()));
    }
    need(FIXED_HEADER + 4 * ndim)?;
    let mut count: usize = 1;
    for i in 0..ndim {
        let at = FIXED_HEADER + 4 * i;
        let d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(ProtocolError::BadShape(format!("dimension {i} is zero")));
        }
        count = count
            .checked_mul(d)
            .filter(|c| c.checked_mul(dtype.width()).is_some())
            .ok_or_else(|| ProtocolError::BadShape("payload size overflows".into()))?;
    }
    Ok(FIXED_HEADER + 4 * ndim + 8 + count * dtype.width() + 4)
}

/// Decode exactly one frame; trailing bytes are an error.
pub fn deserialize(bytes: &[u8]) -> Result<WireMessage, ProtocolError> {
    let len = frame_len(bytes)?;
    if bytes.len() < len {
        return Err(ProtocolError::Truncated { needed: len, got: bytes.len() });
    }
    if bytes.len() > len {
        return Err(ProtocolError::TrailingBytes(bytes.len() - len));
    }
    let body = &bytes[..len - 4];
    let stored = u32::from_le_bytes(bytes[len - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ProtocolError::BadCrc { stored, computed });
    }
    let msg_type = MsgType::from_byte(body[5])?;
    let dtype = DType::from_byte(body[6])?;
    let ndim = body[7] as usize;
    let shape: Vec<usize> = (0..ndim)
        .map(|i| u32::from_le_bytes(body[FIXED_HEADER + 4 * i..FIXED_HEADER + 4 * i + 4].try_into().unwrap()) as usize)
        .collect();
    let at = FIXED_HEADER + 4 * ndim;
    let seq = u64::from_le_bytes(body[at..at + 8].try_into().unwrap());
    let payload = &body[at + 8..];
    let data: Vec<f64> = match dtype {
        DType::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    let tensor = Tensor::new(shape, data).map_err(|e| ProtocolError::BadShape(e.to_string()))?;
    Ok(WireMessage { msg_type, dtype, seq, tensor })
}

/// Split a concatenation of frames into messages.
pub fn deserialize_all(mut bytes: &[u8]) -> Result<Vec<WireMessage>, ProtocolError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let len = frame_len(bytes)?;
        if bytes.len() < len {
            return Err(ProtocolError::Truncated { needed: len, got: bytes.len() });
        }
        out.push(deserialize(&bytes[..len])?);
        bytes = &bytes[len..];
    }
    Ok(out)
}

pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> io::Result<()> {
    w.write_all(&serialize(msg))?;
    w.flush()
}

/// Read one frame from a stream. `Ok(None)` on a clean end of stream before
/// any byte of a new frame.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<WireMessage>, ProtocolError> {
    let mut buf = vec![0u8; FIXED_HEADER];
    let mut filled = 0;
    while filled < FIXED_HEADER {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return if filled == 0 {
                Ok(None)
            } else {
                Err(ProtocolError::Truncated { needed: FIXED_HEADER, got: filled })
            };
        }
        filled += n;
    }
    let ndim = buf[7] as usize;
    buf.resize(FIXED_HEADER + 4 * ndim, 0);
    read_rest(r, &mut buf, FIXED_HEADER)?;
    let len = frame_len(&buf)?;
    let start = buf.len();
    buf.resize(len, 0);
    read_rest(r, &mut buf, start)?;
    deserialize(&buf).map(Some)
}

fn read_rest<R: Read>(r: &mut R, buf: &mut [u8], from: usize) -> Result<(), ProtocolError> {
    let mut filled = from;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(ProtocolError::Truncated { needed: buf.len(), got: filled });
        }
        filled += n;
    }
    Ok(())
}
