//! Structured run events: one JSON object per line, written to standard
//! error by default so machine-readable state never mixes with report
//! output on stdout.

use std::io::Write;
use std::sync::{Arc, Mutex};

use serde_json::json;

use crate::frontier::Timestamp;

enum Sink {
    Stderr,
    Buffer(Arc<Mutex<Vec<u8>>>),
    Discard,
}

pub struct EventLog {
    instance_id: String,
    sink: Mutex<Sink>,
}

impl EventLog {
    pub fn stderr(instance_id: &str) -> Arc<Self> {
        Arc::new(EventLog {
            instance_id: instance_id.to_string(),
            sink: Mutex::new(Sink::Stderr),
        })
    }

    /// Captures events in memory; used by tests asserting on the stream.
    pub fn buffer(instance_id: &str) -> (Arc<Self>, Arc<Mutex<Vec<u8>>>) {
        let buf = Arc::new(Mutex::new(Vec::new()));
        (
            Arc::new(EventLog {
                instance_id: instance_id.to_string(),
                sink: Mutex::new(Sink::Buffer(Arc::clone(&buf))),
            }),
            buf,
        )
    }

    pub fn discard(instance_id: &str) -> Arc<Self> {
        Arc::new(EventLog {
            instance_id: instance_id.to_string(),
            sink: Mutex::new(Sink::Discard),
        })
    }

    pub fn emit(&self, event: &str, mut fields: serde_json::Value) {
        if let serde_json::Value::Object(map) = &mut fields {
            map.insert("event".into(), json!(event));
            map.insert("instance".into(), json!(self.instance_id));
            map.insert("ts".into(), json!(Timestamp::now().0));
        }
        let line = fields.to_string();
        let mut sink = self.sink.lock().expect("event sink lock");
        match &mut *sink {
            Sink::Stderr => {
                let _ = writeln!(std::io::stderr(), "{line}");
            }
            Sink::Buffer(buf) => {
                let mut buf = buf.lock().expect("event buffer lock");
                let _ = writeln!(buf, "{line}");
            }
            Sink::Discard => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_are_one_json_object_per_line() {
        let (log, buf) = EventLog::buffer("i-1");
        log.emit("claim", json!({"count": 3}));
        log.emit("fetch", json!({"url": "http://a.fr/", "status": 200}));
        let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for line in lines {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["instance"], "i-1");
            assert!(v["ts"].as_i64().is_some());
        }
    }
}
