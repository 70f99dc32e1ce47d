//! JSONL trace format.
//!
//! One object per line, ordered by `ts`:
//!
//! ```text
//! {"ts":100,"type":"alloc","pid":7,"tid":7,"ptr":"4096","size":64}
//! {"ts":150,"type":"dealloc","pid":7,"tid":7,"ptr":"4096"}
//! {"ts":180,"type":"sched","cpu":0,"prev_tid":7,"next_tid":9,"next_pid":9}
//! ```
//!
//! `ptr` is a decimal string so that readers with 53-bit integers do not
//! truncate it. In strict mode unknown fields and malformed lines are errors;
//! in lenient mode malformed lines are skipped and unknown fields ignored.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::event::{MemoryEvent, MemoryKind, ResourceEvent, SchedEvent};

const ALLOC_FIELDS: &[&str] = &["ts", "type", "pid", "tid", "ptr", "size"];
const DEALLOC_FIELDS: &[&str] = &["ts", "type", "pid", "tid", "ptr"];
const SCHED_FIELDS: &[&str] = &["ts", "type", "cpu", "prev_tid", "next_tid", "next_pid"];

/// Appends the line form of `event` to `out`, without a trailing newline.
pub fn format_event(event: &ResourceEvent, out: &mut String) {
    // fmt::Write on String is infallible
    let _ = match event {
        ResourceEvent::Memory(e) => match e.kind {
            MemoryKind::Alloc => write!(
                out,
                r#"{{"ts":{},"type":"alloc","pid":{},"tid":{},"ptr":"{}","size":{}}}"#,
                e.ts,
                e.pid,
                e.tid,
                e.ptr,
                e.size.unwrap_or(0)
            ),
            MemoryKind::Dealloc => write!(
                out,
                r#"{{"ts":{},"type":"dealloc","pid":{},"tid":{},"ptr":"{}"}}"#,
                e.ts, e.pid, e.tid, e.ptr
            ),
        },
        ResourceEvent::Sched(e) => write!(
            out,
            r#"{{"ts":{},"type":"sched","cpu":{},"prev_tid":{},"next_tid":{},"next_pid":{}}}"#,
            e.ts, e.cpu, e.prev_tid, e.next_tid, e.next_pid
        ),
    };
}

pub fn to_line(event: &ResourceEvent) -> String {
    let mut s = String::with_capacity(96);
    format_event(event, &mut s);
    s
}

pub fn write_trace<W: Write>(events: &[ResourceEvent], mut out: W) -> Result<()> {
    let mut line = String::with_capacity(128);
    for e in events {
        line.clear();
        format_event(e, &mut line);
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Parses one line. The error message carries no line number.
pub fn parse_line(line: &str, strict: bool) -> std::result::Result<ResourceEvent, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let Value::Object(obj) = value else {
        return Err("expected a JSON object".into());
    };
    let kind = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or("missing string field `type`")?;
    let allowed = match kind {
        "alloc" => ALLOC_FIELDS,
        "dealloc" => DEALLOC_FIELDS,
        "sched" => SCHED_FIELDS,
        other => return Err(format!("unknown event type `{other}`")),
    };
    if strict {
        if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(format!("unknown field `{extra}` for {kind} event"));
        }
    }
    let ts = uint(&obj, "ts")?;
    let event = match kind {
        "alloc" => {
            let size = uint(&obj, "size")?;
            if size == 0 {
                return Err("alloc size must be at least 1".into());
            }
            MemoryEvent::alloc(
                ts,
                uint32(&obj, "pid")?,
                uint32(&obj, "tid")?,
                ptr(&obj)?,
                size,
            )
            .into()
        }
        "dealloc" => {
            MemoryEvent::dealloc(ts, uint32(&obj, "pid")?, uint32(&obj, "tid")?, ptr(&obj)?).into()
        }
        _ => SchedEvent {
            ts,
            cpu: uint32(&obj, "cpu")?,
            prev_tid: uint32(&obj, "prev_tid")?,
            next_tid: uint32(&obj, "next_tid")?,
            next_pid: uint32(&obj, "next_pid")?,
        }
        .into(),
    };
    Ok(event)
}

fn uint(obj: &Map<String, Value>, key: &str) -> std::result::Result<u64, String> {
    obj.get(key)
        .ok_or_else(|| format!("missing field `{key}`"))?
        .as_u64()
        .ok_or_else(|| format!("field `{key}` must be a non-negative integer"))
}

fn uint32(obj: &Map<String, Value>, key: &str) -> std::result::Result<u32, String> {
    let v = uint(obj, key)?;
    u32::try_from(v).map_err(|_| format!("field `{key}` out of range: {v}"))
}

fn ptr(obj: &Map<String, Value>) -> std::result::Result<u64, String> {
    match obj.get("ptr") {
        Some(Value::String(s)) => s
            .parse()
            .map_err(|_| format!("field `ptr` is not a decimal u64: {s:?}")),
        Some(_) => Err("field `ptr` must be a decimal string".into()),
        None => Err("missing field `ptr`".into()),
    }
}

/// Result of reading a whole trace.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTrace {
    pub events: Vec<ResourceEvent>,
    /// Lines skipped in lenient mode.
    pub skipped_lines: u64,
}

pub fn read_trace<R: BufRead>(reader: R, strict: bool) -> Result<ParsedTrace> {
    let mut parsed = ParsedTrace::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match parse_line(trimmed, strict) {
            Ok(e) => parsed.events.push(e),
            Err(message) if strict => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message,
                })
            }
            Err(_) => parsed.skipped_lines += 1,
        }
    }
    Ok(parsed)
}

pub fn read_trace_file(path: &std::path::Path, strict: bool) -> Result<ParsedTrace> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file), strict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_layout() {
        let e: ResourceEvent = MemoryEvent::alloc(100, 7, 8, u64::MAX, 64).into();
        assert_eq!(
            to_line(&e),
            r#"{"ts":100,"type":"alloc","pid":7,"tid":8,"ptr":"18446744073709551615","size":64}"#
        );
        let e: ResourceEvent = MemoryEvent::dealloc(150, 7, 8, 4096).into();
        assert_eq!(
            to_line(&e),
            r#"{"ts":150,"type":"dealloc","pid":7,"tid":8,"ptr":"4096"}"#
        );
        let e: ResourceEvent = SchedEvent {
            ts: 180,
            cpu: 2,
            prev_tid: 7,
            next_tid: 9,
            next_pid: 9,
        }
        .into();
        assert_eq!(
            to_line(&e),
            r#"{"ts":180,"type":"sched","cpu":2,"prev_tid":7,"next_tid":9,"next_pid":9}"#
        );
    }

    #[test]
    fn field_order_does_not_matter_when_reading() {
        let e = parse_line(
            r#"{"type":"dealloc","ptr":"5","tid":1,"pid":2,"ts":3}"#,
            true,
        )
        .unwrap();
        assert_eq!(e, MemoryEvent::dealloc(3, 2, 1, 5).into());
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let line = r#"{"ts":1,"type":"dealloc","pid":2,"tid":2,"ptr":"5","comm":"nginx"}"#;
        assert!(parse_line(line, true).unwrap_err().contains("comm"));
        assert!(parse_line(line, false).is_ok());
    }

    #[test]
    fn numeric_ptr_rejected() {
        let line = r#"{"ts":1,"type":"dealloc","pid":2,"tid":2,"ptr":5}"#;
        assert!(parse_line(line, false).is_err());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"ts\":1,\"type\":\"sched\",\"cpu\":0,\"prev_tid\":0,\"next_tid\":1,\"next_pid\":1}\n\nnot json\n";
        match read_trace(text.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let lenient = read_trace(text.as_bytes(), false).unwrap();
        assert_eq!(lenient.events.len(), 1);
        assert_eq!(lenient.skipped_lines, 1);
    }

    #[test]
    fn zero_size_alloc_is_malformed() {
        let line = r#"{"ts":1,"type":"alloc","pid":2,"tid":2,"ptr":"5","size":0}"#;
        assert!(parse_line(line, true).is_err());
    }

    fn arb_event() -> impl Strategy<Value = ResourceEvent> {
        prop_oneof![
            (
                any::<u64>(),
                any::<u32>(),
                any::<u32>(),
                any::<u64>(),
                1..u64::MAX
            )
                .prop_map(
                    |(ts, pid, tid, ptr, size)| MemoryEvent::alloc(ts, pid, tid, ptr, size).into()
                ),
            (any::<u64>(), any::<u32>(), any::<u32>(), any::<u64>())
                .prop_map(|(ts, pid, tid, ptr)| MemoryEvent::dealloc(ts, pid, tid, ptr).into()),
            (
                any::<u64>(),
                any::<u32>(),
                any::<u32>(),
                any::<u32>(),
                any::<u32>()
            )
                .prop_map(|(ts, cpu, prev_tid, next_tid, next_pid)| SchedEvent {
                    ts,
                    cpu,
                    prev_tid,
                    next_tid,
                    next_pid
                }
                .into()),
        ]
    }

    proptest! {
        #[test]
        fn line_round_trip(e in arb_event()) {
            prop_assert_eq!(parse_line(&to_line(&e), true).unwrap(), e);
        }

        #[test]
        fn file_round_trip(events in proptest::collection::vec(arb_event(), 0..40)) {
            let mut buf = Vec::new();
            write_trace(&events, &mut buf).unwrap();
            let parsed = read_trace(buf.as_slice(), true).unwrap();
            prop_assert_eq!(parsed.events, events);
        }
    }
}
