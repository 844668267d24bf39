use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use super::protocol::{Request, Response};
use super::{Detector, ExternalSpec, SnapshotAck, SEED_ENV};
use crate::error::{Error, Result};
use crate::geometry::Detection;

/// A backend process spoken to over its standard input and output.
///
/// Requests are strictly sequential. Any timeout, id mismatch or closed
/// stream kills the child and leaves the handle dead.
pub struct ExternalDetector {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
    dead: Option<String>,
}

impl ExternalDetector {
    /// Launches `<command> --dataset-root <root>` and performs the `init`
    /// handshake.
    pub fn spawn(
        spec: &ExternalSpec,
        dataset_root: &Path,
        classes: &[String],
        seed: u64,
        timeout: Duration,
    ) -> Result<Self> {
        let argv = shlex::split(&spec.command)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::InvalidConfig(format!("cannot parse command {:?}", spec.command)))?;
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .arg("--dataset-root")
            .arg(dataset_root)
            .envs(&spec.env)
            .env(SEED_ENV, seed.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = &spec.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| Error::io(&argv[0], e))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });

        let mut det = Self {
            child,
            stdin,
            lines: rx,
            next_id: 0,
            timeout,
            dead: None,
        };
        let id = det.fresh_id();
        det.call(Request::Init {
            id,
            dataset_root: dataset_root.to_string_lossy().into_owned(),
            classes: classes.to_vec(),
        })?;
        Ok(det)
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    pub fn is_alive(&self) -> bool {
        self.dead.is_none()
    }

    fn kill(&mut self, reason: String) {
        warn!("external detector disabled: {reason}");
        self.stdin = None;
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.dead = Some(reason);
    }

    fn call(&mut self, req: Request) -> Result<Response> {
        if let Some(reason) = &self.dead {
            return Err(Error::DeadHandle(reason.clone()));
        }
        let line = req.to_line();
        debug!("-> {line}");
        let written = match self.stdin.as_mut() {
            Some(stdin) => writeln!(stdin, "{line}").and_then(|_| stdin.flush()),
            None => Err(std::io::Error::other("stdin closed")),
        };
        if let Err(e) = written {
            self.kill(format!("write failed: {e}"));
            return Err(Error::Protocol(format!("cannot write request: {e}")));
        }
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                self.kill(format!("read failed: {e}"));
                return Err(Error::Protocol(format!("cannot read response: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                let secs = self.timeout.as_secs_f64();
                self.kill(format!("timed out after {secs:.1}s"));
                return Err(Error::Timeout(secs));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.kill("backend closed its output".into());
                return Err(Error::Protocol("backend closed its output".into()));
            }
        };
        debug!("<- {reply}");
        match Response::parse(&reply, req.id()) {
            Ok(r) => Ok(r),
            // the backend answered this request; the channel is still in sync
            Err(e @ Error::Backend(_)) => Err(e),
            Err(e) => {
                self.kill(e.to_string());
                Err(e)
            }
        }
    }
}

impl Detector for ExternalDetector {
    fn train_task(&mut self, task: usize, image_ids: &[String]) -> Result<()> {
        let id = self.fresh_id();
        self.call(Request::TrainTask {
            id,
            task,
            image_ids: image_ids.to_vec(),
        })
        .map(|_| ())
    }

    fn predict(&mut self, image_id: &str) -> Result<Vec<Detection>> {
        let id = self.fresh_id();
        let resp = self.call(Request::Predict {
            id,
            image_id: image_id.to_string(),
        })?;
        resp.detections().inspect_err(|e| self.kill(e.to_string()))
    }

    fn snapshot(&mut self, tag: &str) -> Result<SnapshotAck> {
        let id = self.fresh_id();
        let resp = self.call(Request::Snapshot {
            id,
            tag: tag.to_string(),
        })?;
        Ok(SnapshotAck {
            overwritten: resp.flag("overwritten"),
            unsupported: resp.flag("unsupported"),
        })
    }

    fn shutdown(&mut self) -> Result<()> {
        if self.dead.is_some() {
            return Ok(());
        }
        let id = self.fresh_id();
        let res = self.call(Request::Shutdown { id }).map(|_| ());
        self.stdin = None;
        let _ = self.child.wait();
        self.dead = Some("shut down".into());
        res
    }
}

impl Drop for ExternalDetector {
    fn drop(&mut self) {
        if self.dead.is_none() {
            let _ = self.shutdown();
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
