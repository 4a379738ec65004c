use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Map, Value};

use super::{WireRequest, WireResponse, CHUNK};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach gateway: {0}")]
    Transport(#[from] std::io::Error),
    #[error("{code}: {message}")]
    Remote { code: String, message: String, body: Value },
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Remote { code, .. } => Some(code),
            ClientError::Transport(_) => None,
        }
    }
}

/// A connection to the gateway. Requests are answered in order.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    user: String,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, user: &str) -> std::io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            user: user.to_string(),
            next_id: 1,
        })
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    /// Sends one request and waits for its response.
    pub fn raw(&mut self, cmd: &str, args: Map<String, Value>) -> std::io::Result<WireResponse> {
        let id = format!("c{}", self.next_id);
        self.next_id += 1;
        let req = WireRequest {
            id: id.clone(),
            cmd: cmd.to_string(),
            user: self.user.clone(),
            args,
        };
        let mut line = serde_json::to_vec(&req).map_err(std::io::Error::other)?;
        line.push(b'\n');
        self.writer.write_all(&line)?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "gateway closed the connection",
            ));
        }
        let resp: WireResponse = serde_json::from_str(&buf).map_err(std::io::Error::other)?;
        if resp.id != id {
            return Err(std::io::Error::other(format!("response id {} does not match {id}", resp.id)));
        }
        Ok(resp)
    }

    /// Sends a request; error responses become [`ClientError::Remote`].
    pub fn call(&mut self, cmd: &str, args: Value) -> Result<Value, ClientError> {
        let args = match args {
            Value::Object(m) => m,
            Value::Null => Map::new(),
            other => {
                return Err(ClientError::Transport(std::io::Error::other(format!(
                    "arguments must be an object, not {other}"
                ))))
            }
        };
        let resp = self.raw(cmd, args)?;
        if resp.is_ok() {
            return Ok(resp.body);
        }
        Err(ClientError::Remote {
            code: resp.code().unwrap_or("Internal").to_string(),
            message: resp.body.get("message").and_then(Value::as_str).unwrap_or("").to_string(),
            body: resp.body,
        })
    }

    /// Uploads a local file as input sandbox entry `name` of `job`.
    pub fn put_file(&mut self, job: &str, name: &str, path: &Path) -> Result<Value, ClientError> {
        let data = fs::read(path)?;
        let chunks: Vec<&[u8]> = if data.is_empty() { vec![&[][..]] } else { data.chunks(CHUNK).collect() };
        let mut last = Value::Null;
        for (i, c) in chunks.iter().enumerate() {
            last = self.call(
                "sandbox-put",
                json!({
                    "jobId": job,
                    "name": name,
                    "seq": i + 1,
                    "data": B64.encode(c),
                    "eof": i + 1 == chunks.len(),
                }),
            )?;
        }
        Ok(last)
    }

    /// Downloads output sandbox entry `name` of `job` into `dest`.
    pub fn get_file(&mut self, job: &str, name: &str, dest: &Path) -> Result<u64, ClientError> {
        let mut data = Vec::new();
        for seq in 1.. {
            let body = self.call("output-get", json!({ "jobId": job, "name": name, "seq": seq }))?;
            let chunk = B64
                .decode(body.get("data").and_then(Value::as_str).unwrap_or(""))
                .map_err(std::io::Error::other)?;
            data.extend(chunk);
            if body.get("eof").and_then(Value::as_bool).unwrap_or(true) {
                break;
            }
        }
        if let Some(p) = dest.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(dest, &data)?;
        Ok(data.len() as u64)
    }
}
