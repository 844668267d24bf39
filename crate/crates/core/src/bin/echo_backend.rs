//! Perfect-detector backend speaking the line protocol on stdin/stdout.
//!
//! Answers `predict` with the image's ground truth read from the dataset
//! root. For exercising failure paths, `CLDET_ECHO_STALL=<op>` makes it hang
//! on that op and `CLDET_ECHO_GARBAGE=<op>` makes it answer with a
//! non-JSON line.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use cldet::dataset::DatasetIndex;
use cldet::detector::echo_detections;
use cldet::detector::protocol::{detections_line, error_line, ok_line, Request};
use serde_json::{Map, Value};

fn op_name(req: &Request) -> &'static str {
    match req {
        Request::Init { .. } => "init",
        Request::TrainTask { .. } => "train_task",
        Request::Predict { .. } => "predict",
        Request::Snapshot { .. } => "snapshot",
        Request::Shutdown { .. } => "shutdown",
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let mut root: Option<PathBuf> = None;
    while let Some(a) = args.next() {
        if a == "--dataset-root" {
            root = args.next().map(PathBuf::from);
        }
    }
    let stall = std::env::var("CLDET_ECHO_STALL").ok();
    let garbage = std::env::var("CLDET_ECHO_GARBAGE").ok();

    let mut dataset: Option<DatasetIndex> = None;
    let mut snapshots = HashSet::new();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line).ok().and_then(|v| v["id"].as_u64());
                let _ = writeln!(out, "{}", error_line(id, &format!("bad request: {e}")));
                let _ = out.flush();
                continue;
            }
        };
        let op = op_name(&req);
        if stall.as_deref() == Some(op) {
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        if garbage.as_deref() == Some(op) {
            let _ = writeln!(out, "this is not json");
            let _ = out.flush();
            continue;
        }
        let id = req.id();
        let reply = match req {
            Request::Init { dataset_root, .. } => {
                let path = root.clone().unwrap_or_else(|| PathBuf::from(dataset_root));
                match DatasetIndex::load(&path) {
                    Ok(ds) => {
                        dataset = Some(ds);
                        ok_line(id, Map::new())
                    }
                    Err(e) => error_line(Some(id), &e.to_string()),
                }
            }
            Request::TrainTask { .. } => ok_line(id, Map::new()),
            Request::Predict { image_id, .. } => match dataset.as_ref().map(|d| d.image(&image_id)) {
                None => error_line(Some(id), "predict before init"),
                Some(Err(e)) => error_line(Some(id), &e.to_string()),
                Some(Ok(img)) => detections_line(id, &echo_detections(img)),
            },
            Request::Snapshot { tag, .. } => {
                let mut extra = Map::new();
                extra.insert("overwritten".into(), Value::Bool(!snapshots.insert(tag)));
                ok_line(id, extra)
            }
            Request::Shutdown { .. } => {
                let _ = writeln!(out, "{}", ok_line(id, Map::new()));
                let _ = out.flush();
                return;
            }
        };
        let _ = writeln!(out, "{reply}");
        let _ = out.flush();
    }
}
