//! Stream framing for interactive jobs: one byte stream id, a four byte
//! big-endian length, then the payload. A zero length closes the stream.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

pub const STDIN: u8 = 0;
pub const STDOUT: u8 = 1;
pub const STDERR: u8 = 2;

const HEADER: usize = 5;
/// Larger frames are split when encoding.
pub const MAX_FRAME: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub stream: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn data(stream: u8, payload: impl Into<Vec<u8>>) -> Frame {
        Frame {
            stream,
            payload: payload.into(),
        }
    }

    pub fn eof(stream: u8) -> Frame {
        Frame {
            stream,
            payload: Vec::new(),
        }
    }

    pub fn is_eof(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.payload.len());
        out.push(self.stream);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Encodes `data` on `stream`, splitting into frames of at most
/// [`MAX_FRAME`] bytes. Empty data produces nothing (use [`Frame::eof`]).
pub fn encode_data(stream: u8, data: &[u8]) -> Vec<u8> {
    data.chunks(MAX_FRAME)
        .flat_map(|c| Frame::data(stream, c).encode())
        .collect()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("unknown stream id {0}")]
    BadStream(u8),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
}

/// Incremental decoder: feed arbitrary byte slices, get whole frames.
#[derive(Debug, Default)]
pub struct Decoder {
    buf: Vec<u8>,
}

impl Decoder {
    pub fn new() -> Decoder {
        Decoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Frame>, FrameError> {
        self.buf.extend_from_slice(bytes);
        let mut frames = Vec::new();
        let mut at = 0;
        while self.buf.len() - at >= HEADER {
            let stream = self.buf[at];
            if stream > STDERR {
                return Err(FrameError::BadStream(stream));
            }
            let len = u32::from_be_bytes(self.buf[at + 1..at + HEADER].try_into().unwrap()) as usize;
            if len > 16 * MAX_FRAME {
                return Err(FrameError::TooLarge(len));
            }
            if self.buf.len() - at - HEADER < len {
                break;
            }
            frames.push(Frame {
                stream,
                payload: self.buf[at + HEADER..at + HEADER + len].to_vec(),
            });
            at += HEADER + len;
        }
        self.buf.drain(..at);
        Ok(frames)
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}

/// Reads one whole frame, or `None` at a clean end of input.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Frame>> {
    let mut header = [0u8; HEADER];
    let mut got = 0;
    while got < HEADER {
        match r.read(&mut header[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    if header[0] > STDERR {
        return Err(io::Error::new(io::ErrorKind::InvalidData, FrameError::BadStream(header[0])));
    }
    let len = u32::from_be_bytes(header[1..].try_into().unwrap()) as usize;
    if len > 16 * MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, FrameError::TooLarge(len)));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame {
        stream: header[0],
        payload,
    }))
}

pub fn write_frame(w: &mut impl Write, f: &Frame) -> io::Result<()> {
    w.write_all(&f.encode())?;
    w.flush()
}

/// Waits up to `timeout` for a job to connect to `listener`.
pub fn accept_job(listener: &TcpListener, timeout: Duration) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "job did not connect in time"));
                }
                thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Bridges local streams to a connected job: `input` goes out as stdin
/// frames, stdout and stderr frames come back. Returns when the job has
/// closed both output streams or the connection.
pub fn bridge_session<R, O, E>(conn: TcpStream, mut input: R, out: &mut O, err: &mut E) -> io::Result<()>
where
    R: Read + Send + 'static,
    O: Write,
    E: Write,
{
    let mut sender = conn.try_clone()?;
    thread::spawn(move || {
        let mut buf = vec![0u8; 8192];
        loop {
            match input.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if write_frame(&mut sender, &Frame::data(STDIN, &buf[..n])).is_err() {
                        return;
                    }
                }
            }
        }
        let _ = write_frame(&mut sender, &Frame::eof(STDIN));
    });
    let mut reader = io::BufReader::new(conn);
    let mut open = [true, true];
    while open[0] || open[1] {
        let Some(f) = read_frame(&mut reader)? else { break };
        let (idx, w): (usize, &mut dyn Write) = match f.stream {
            STDOUT => (0, out),
            STDERR => (1, err),
            _ => continue,
        };
        if f.is_eof() {
            open[idx] = false;
        } else {
            w.write_all(&f.payload)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        assert_eq!(Frame::data(STDOUT, b"hi".to_vec()).encode(), vec![1, 0, 0, 0, 2, b'h', b'i']);
        assert_eq!(Frame::eof(STDIN).encode(), vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn byte_at_a_time() {
        let mut wire = Frame::data(STDERR, b"oops".to_vec()).encode();
        wire.extend(Frame::eof(STDOUT).encode());
        let mut d = Decoder::new();
        let mut got = Vec::new();
        for b in &wire {
            got.extend(d.push(&[*b]).unwrap());
        }
        assert_eq!(got, vec![Frame::data(STDERR, b"oops".to_vec()), Frame::eof(STDOUT)]);
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn rejects_unknown_stream() {
        assert_eq!(Decoder::new().push(&[9, 0, 0, 0, 0]), Err(FrameError::BadStream(9)));
    }

    #[test]
    fn blocking_reader() {
        let wire = encode_data(STDOUT, b"abc");
        let mut r = &wire[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(Frame::data(STDOUT, b"abc".to_vec())));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }
}
