//! Wire framing: a 4-byte big-endian length, then a UTF-8 JSON object
//! `{"topic": ..., "t": ..., "kind": ..., "data": ...}`.

use std::io::{self, Read, Write};

use super::{BusError, BusMessage};

/// Upper bound on a single frame body.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

pub fn encode(msg: &BusMessage) -> Result<Vec<u8>, BusError> {
    let body = serde_json::to_vec(msg).map_err(|e| BusError::Codec(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(BusError::Codec(format!("frame of {} bytes too large", body.len())));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode(frame: &[u8]) -> Result<BusMessage, BusError> {
    if frame.len() < 4 {
        return Err(BusError::Codec("short frame".into()));
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if frame.len() != 4 + len {
        return Err(BusError::Codec(format!(
            "length prefix {len} does not match body of {} bytes",
            frame.len() - 4
        )));
    }
    decode_body(&frame[4..])
}

fn decode_body(body: &[u8]) -> Result<BusMessage, BusError> {
    let msg: BusMessage = serde_json::from_slice(body).map_err(|e| BusError::Codec(e.to_string()))?;
    msg.check_topic()?;
    Ok(msg)
}

pub fn write_message<W: Write>(w: &mut W, msg: &BusMessage) -> Result<(), BusError> {
    let bytes = encode(msg)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Read one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<BusMessage>, BusError> {
    let mut len_buf = [0u8; 4];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME_LEN {
        return Err(BusError::Codec(format!("frame of {len} bytes too large")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}
