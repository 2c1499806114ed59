use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::workload::{InteractionId, RequestId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrive,
    Enqueue,
    Block,
    /// Request can never fit in the KV cache; dropped before the policy sees it.
    Oversize,
    Admit,
    FirstToken,
    Finish,
    /// Cut off by the simulation horizon while in flight.
    Abort,
}

/// One engine log record.
///
/// `tokens` is kind-specific: prompt tokens for `admit`, generated tokens for
/// `finish` and `abort`, zero otherwise. `occupancy` is the KV occupancy
/// right after the event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub t_ms: f64,
    pub kind: EventKind,
    pub request_id: RequestId,
    pub interaction_id: InteractionId,
    pub stage: u32,
    pub tokens: u64,
    pub occupancy: u64,
}

pub fn write_events<W: Write>(events: &[EngineEvent], w: &mut W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(r: R) -> Result<Vec<EngineEvent>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}
