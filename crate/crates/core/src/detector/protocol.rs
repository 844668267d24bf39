//! Line-delimited JSON messages exchanged with an external backend.
//!
//! Requests carry `op` first and `id` second; responses echo the id and
//! carry either `"ok": true` plus operation fields or `"error": "<text>"`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{Detection, RawDetection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Init {
        id: u64,
        dataset_root: String,
        classes: Vec<String>,
    },
    TrainTask {
        id: u64,
        task: usize,
        image_ids: Vec<String>,
    },
    Predict {
        id: u64,
        image_id: String,
    },
    Snapshot {
        id: u64,
        tag: String,
    },
    Shutdown {
        id: u64,
    },
}

impl Request {
    pub fn id(&self) -> u64 {
        match self {
            Request::Init { id, .. }
            | Request::TrainTask { id, .. }
            | Request::Predict { id, .. }
            | Request::Snapshot { id, .. }
            | Request::Shutdown { id } => *id,
        }
    }

    /// One compact JSON object, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }
}

/// A successfully parsed response object with a matching id.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub id: u64,
    pub body: serde_json::Map<String, Value>,
}

impl Response {
    /// Parses one response line and checks it answers request `expected_id`.
    pub fn parse(line: &str, expected_id: u64) -> Result<Self> {
        let value: Value = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Protocol(format!("malformed response line {line:?}: {e}")))?;
        let Value::Object(body) = value else {
            return Err(Error::Protocol(format!("response is not an object: {line:?}")));
        };
        let id = body
            .get("id")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Protocol(format!("response without integer id: {line:?}")))?;
        if id != expected_id {
            return Err(Error::Protocol(format!(
                "response id {id} does not match request id {expected_id}"
            )));
        }
        if let Some(err) = body.get("error") {
            let text = match err {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            return Err(Error::Backend(text));
        }
        if body.get("ok").and_then(Value::as_bool) != Some(true) {
            return Err(Error::Protocol(format!("response lacks \"ok\":true: {line:?}")));
        }
        Ok(Self { id, body })
    }

    pub fn flag(&self, key: &str) -> bool {
        self.body.get(key).and_then(Value::as_bool).unwrap_or(false)
    }

    /// Detections of a `predict` response, validated.
    pub fn detections(&self) -> Result<Vec<Detection>> {
        let Some(raw) = self.body.get("detections") else {
            return Err(Error::Protocol("predict response without detections".into()));
        };
        let raw: Vec<RawDetection> = serde_json::from_value(raw.clone())
            .map_err(|e| Error::Protocol(format!("bad detections payload: {e}")))?;
        raw.into_iter()
            .map(|r| {
                Detection::try_from(r).map_err(|e| Error::Protocol(format!("invalid detection: {e}")))
            })
            .collect()
    }
}

/// Builds a success response line, as a backend would.
pub fn ok_line(id: u64, extra: serde_json::Map<String, Value>) -> String {
    let mut body = serde_json::Map::new();
    body.insert("id".into(), Value::from(id));
    body.insert("ok".into(), Value::Bool(true));
    body.extend(extra);
    Value::Object(body).to_string()
}

/// Builds an error response line; `id` is `-1` when the request was unreadable.
pub fn error_line(id: Option<u64>, message: &str) -> String {
    let id = id.map(Value::from).unwrap_or_else(|| Value::from(-1));
    serde_json::json!({ "id": id, "error": message }).to_string()
}

/// Predict success line carrying the given detections.
pub fn detections_line(id: u64, dets: &[Detection]) -> String {
    let raw: Vec<RawDetection> = dets.iter().map(|&d| d.into()).collect();
    let mut extra = serde_json::Map::new();
    extra.insert("detections".into(), serde_json::to_value(raw).expect("finite detections"));
    ok_line(id, extra)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_lines_are_bit_exact() {
        let r = Request::Init {
            id: 1,
            dataset_root: "/data".into(),
            classes: vec!["a".into(), "b".into()],
        };
        assert_eq!(r.to_line(), r#"{"op":"init","id":1,"dataset_root":"/data","classes":["a","b"]}"#);
        let r = Request::TrainTask {
            id: 1,
            task: 0,
            image_ids: vec!["i1".into()],
        };
        assert_eq!(r.to_line(), r#"{"op":"train_task","id":1,"task":0,"image_ids":["i1"]}"#);
        assert_eq!(
            Request::Predict { id: 7, image_id: "x".into() }.to_line(),
            r#"{"op":"predict","id":7,"image_id":"x"}"#
        );
        assert_eq!(
            Request::Snapshot { id: 3, tag: "task-0".into() }.to_line(),
            r#"{"op":"snapshot","id":3,"tag":"task-0"}"#
        );
        assert_eq!(Request::Shutdown { id: 9 }.to_line(), r#"{"op":"shutdown","id":9}"#);
    }

    #[test]
    fn requests_parse_back() {
        let line = r#"{"op":"predict","id":7,"image_id":"x"}"#;
        let r: Request = serde_json::from_str(line).unwrap();
        assert_eq!(r.id(), 7);
        assert_eq!(r.to_line(), line);
    }

    #[test]
    fn ack_response() {
        let r = Response::parse(r#"{"id":1,"ok":true}"#, 1).unwrap();
        assert_eq!(r.id, 1);
        assert!(!r.flag("unsupported"));
    }

    #[test]
    fn predict_response_parses() {
        let line = r#"{"id":7,"detections":[{"bbox":[0,0,10,10],"class":2,"conf":0.9}],"ok":true}"#;
        let d = Response::parse(line, 7).unwrap().detections().unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].class_id, 2);
        assert_eq!(d[0].confidence(), 0.9);
        assert_eq!(d[0].bbox.to_array(), [0.0, 0.0, 10.0, 10.0]);
        let empty = Response::parse(r#"{"id":7,"ok":true,"detections":[]}"#, 7).unwrap();
        assert!(empty.detections().unwrap().is_empty());
    }

    #[test]
    fn invalid_payloads_are_protocol_errors() {
        let bad_conf = r#"{"id":7,"ok":true,"detections":[{"bbox":[0,0,10,10],"class":2,"conf":1.2}]}"#;
        assert!(matches!(Response::parse(bad_conf, 7).unwrap().detections(), Err(Error::Protocol(_))));
        let bad_box = r#"{"id":7,"ok":true,"detections":[{"bbox":[5,0,1,10],"class":2,"conf":0.5}]}"#;
        assert!(matches!(Response::parse(bad_box, 7).unwrap().detections(), Err(Error::Protocol(_))));
        let huge = r#"{"id":7,"ok":true,"detections":[{"bbox":[0,0,1e999,10],"class":2,"conf":0.5}]}"#;
        assert!(Response::parse(huge, 7).and_then(|r| r.detections()).is_err());
        match Response::parse("not json", 1) {
            Err(Error::Protocol(msg)) => assert!(msg.contains("not json")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Response::parse(r#"{"id":2,"ok":true}"#, 1), Err(Error::Protocol(_))));
        assert!(matches!(Response::parse(r#"{"id":1}"#, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn backend_errors_surface_verbatim() {
        match Response::parse(r#"{"id":4,"error":"CUDA out of memory"}"#, 4) {
            Err(Error::Backend(msg)) => assert_eq!(msg, "CUDA out of memory"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn float_round_trip() {
        use crate::geometry::BBox;
        let x = 0.1 + 0.2;
        let d = Detection::new(BBox::new(x, 1.0 / 3.0, 10.0, 10.0).unwrap(), 0, 2.0 / 3.0).unwrap();
        let line = detections_line(5, &[d]);
        let back = Response::parse(&line, 5).unwrap().detections().unwrap();
        assert_eq!(back, vec![d]);
    }

    #[test]
    fn builder_lines() {
        assert_eq!(ok_line(1, Default::default()), r#"{"id":1,"ok":true}"#);
        assert_eq!(error_line(None, "bad"), r#"{"error":"bad","id":-1}"#);
    }
}
