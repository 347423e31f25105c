use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::DetectionVerdict;
use crate::error::DetectionError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalSpec {
    /// Program and arguments. The process reads one JSON request per line
    /// on stdin and answers with one JSON response per line on stdout.
    pub command: Vec<String>,
    #[serde(default = "timeout_default")]
    pub timeout_ms: u64,
}

fn timeout_default() -> u64 {
    2000
}

#[derive(Debug, Serialize)]
struct Request<'a> {
    block_id: u64,
    text: &'a str,
    history: &'a [String],
}

#[derive(Debug, Deserialize)]
struct Response {
    sensitive: bool,
    score: f64,
    #[serde(default)]
    categories: Vec<String>,
}

#[derive(Debug)]
struct Channel {
    stdin: ChildStdin,
    lines: Receiver<String>,
}

/// Line-delimited JSON detector running as a child process.
#[derive(Debug)]
pub struct ExternalDetector {
    child: Mutex<Child>,
    channel: Mutex<Channel>,
    timeout: Duration,
}

impl ExternalDetector {
    pub fn spawn(spec: &ExternalSpec) -> Result<Self, DetectionError> {
        let (prog, args) = spec
            .command
            .split_first()
            .ok_or_else(|| DetectionError::InvalidSpec("empty external command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| DetectionError::DetectorUnavailable(format!("spawn {prog}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child: Mutex::new(child),
            channel: Mutex::new(Channel { stdin, lines: rx }),
            timeout: Duration::from_millis(spec.timeout_ms),
        })
    }

    pub fn classify(
        &self,
        block_id: u64,
        text: &str,
        history: &[String],
    ) -> Result<DetectionVerdict, DetectionError> {
        let unavailable = |m: String| DetectionError::DetectorUnavailable(m);
        let req = serde_json::to_string(&Request {
            block_id,
            text,
            history,
        })
        .map_err(|e| unavailable(e.to_string()))?;
        let mut ch = self.channel.lock().unwrap();
        // Drop answers that arrived after an earlier timeout.
        while ch.lines.try_recv().is_ok() {}
        writeln!(ch.stdin, "{req}")
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| unavailable(format!("write: {e}")))?;
        let line = match ch.lines.recv_timeout(self.timeout) {
            Ok(l) => l,
            Err(RecvTimeoutError::Timeout) => {
                return Err(unavailable(format!("no answer within {:?}", self.timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => return Err(unavailable("process exited".into())),
        };
        let r: Response =
            serde_json::from_str(&line).map_err(|e| unavailable(format!("bad response: {e}")))?;
        Ok(DetectionVerdict {
            sensitive: r.sensitive,
            tier: 0,
            score: r.score.clamp(0.0, 1.0),
            categories: r.categories,
            escalate: false,
        })
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        if let Ok(mut c) = self.child.lock() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}
