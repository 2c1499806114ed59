//! Line-delimited JSON trace files.
//!
//! The first line is a header record; every following line is a `user`,
//! `app` or `interaction` record, discriminated by its `kind` field.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{AppProfile, Interaction, Trace, UserProfile};
use crate::error::TraceError;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header {
        version: u32,
        seed: u64,
        duration_ms: f64,
    },
    User(UserProfile),
    App(AppProfile),
    Interaction(Interaction),
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_records(trace, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Serializes a trace into any writer.
pub fn write_records<W: Write>(trace: &Trace, w: &mut W) -> std::io::Result<()> {
    let mut line = |rec: &Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, rec)?;
        w.write_all(b"\n")
    };
    line(&Record::Header {
        version: TRACE_FORMAT_VERSION,
        seed: trace.seed,
        duration_ms: trace.duration_ms,
    })?;
    for u in &trace.users {
        line(&Record::User(u.clone()))?;
    }
    for a in &trace.apps {
        line(&Record::App(a.clone()))?;
    }
    for i in &trace.interactions {
        line(&Record::Interaction(i.clone()))?;
    }
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(BufReader::new(file))
}

/// Parses a trace from any buffered reader. Line numbers in errors are 1-based.
pub fn read_records<R: BufRead>(reader: R) -> Result<Trace, TraceError> {
    let mut trace: Option<Trace> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| TraceError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match (rec, trace.as_mut()) {
            (
                Record::Header {
                    version,
                    seed,
                    duration_ms,
                },
                None,
            ) => {
                if version != TRACE_FORMAT_VERSION {
                    return Err(TraceError::Parse {
                        line: lineno,
                        message: format!("unsupported version {version}"),
                    });
                }
                trace = Some(Trace {
                    seed,
                    duration_ms,
                    users: Vec::new(),
                    apps: Vec::new(),
                    interactions: Vec::new(),
                });
            }
            (Record::Header { .. }, Some(_)) => {
                return Err(TraceError::Parse {
                    line: lineno,
                    message: "duplicate header record".into(),
                })
            }
            (_, None) => {
                return Err(TraceError::Parse {
                    line: lineno,
                    message: "first record must be the header".into(),
                })
            }
            (Record::User(u), Some(t)) => t.users.push(u),
            (Record::App(a), Some(t)) => t.apps.push(a),
            (Record::Interaction(i), Some(t)) => t.interactions.push(i),
        }
    }
    let trace = trace.ok_or(TraceError::Parse {
        line: 1,
        message: "missing header record".into(),
    })?;
    trace.validate()?;
    Ok(trace)
}
