use std::io::Write;

use serde::Serialize;

use super::{MetricSet, RunReport};
use crate::error::Error;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metric_fields(m: &MetricSet) -> Vec<(&'static str, String)> {
    vec![
        ("users", m.users.to_string()),
        ("requests_total", m.requests_total.to_string()),
        ("requests_served", m.requests_served.to_string()),
        ("requests_blocked", m.requests_blocked.to_string()),
        ("requests_oversize", m.requests_oversize.to_string()),
        ("requests_aborted", m.requests_aborted.to_string()),
        ("requests_queued_at_end", m.requests_queued_at_end.to_string()),
        ("interactions_total", m.interactions_total.to_string()),
        ("interactions_completed", m.interactions_completed.to_string()),
        ("interactions_aborted_midway", m.interactions_aborted_midway.to_string()),
        ("interactions_blocked_at_head", m.interactions_blocked_at_head.to_string()),
        ("interactions_rejected", m.interactions_rejected.to_string()),
        ("interactions_unfinished", m.interactions_unfinished.to_string()),
        ("wasted_tokens", m.wasted_tokens.to_string()),
        ("prompt_tokens", m.prompt_tokens.to_string()),
        ("decode_tokens", m.decode_tokens.to_string()),
        ("prompt_throughput", m.prompt_throughput.to_string()),
        ("decode_throughput", m.decode_throughput.to_string()),
        ("ttft_ms_mean", m.ttft_ms.mean.to_string()),
        ("ttft_ms_p50", m.ttft_ms.p50.to_string()),
        ("ttft_ms_p99", m.ttft_ms.p99.to_string()),
        ("delayed_users_pct", m.delayed_users_pct.to_string()),
        ("served_users_pct_requests", m.served_users_pct_requests.to_string()),
        ("served_users_pct_interactions", m.served_users_pct_interactions.to_string()),
        ("service_provided_pct_requests", m.service_provided_pct_requests.to_string()),
        ("service_provided_pct_interactions", m.service_provided_pct_interactions.to_string()),
        ("abuser_token_share", m.abuser_token_share.to_string()),
        ("max_backlogged_service_gap", opt(m.max_backlogged_service_gap)),
        ("jain_fairness_index", opt(m.jain_fairness_index)),
    ]
}

/// Flat CSV: one row per (policy, app), plus an `all` row per policy.
pub fn write_report_csv<W: Write>(reports: &[RunReport], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["policy".to_string(), "app".to_string()];
    header.extend(metric_fields(&MetricSet::default()).into_iter().map(|(k, _)| k.to_string()));
    out.write_record(&header)?;
    for r in reports {
        let scopes = std::iter::once(("all".to_string(), &r.global))
            .chain(r.per_app.iter().map(|(a, m)| (a.to_string(), m)));
        for (app, m) in scopes {
            let mut row = vec![r.policy.clone(), app];
            row.extend(metric_fields(m).into_iter().map(|(_, v)| v));
            out.write_record(&row)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_report_json<W: Write>(reports: &[RunReport], w: W) -> Result<(), Error> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}

/// Long-format plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub policy: String,
    pub metric: String,
    pub value: f64,
}

type Metric = (&'static str, fn(&MetricSet) -> f64);

fn rows(reports: &[RunReport], metrics: &[Metric]) -> Vec<FigureRow> {
    reports
        .iter()
        .flat_map(|r| {
            metrics.iter().map(|(name, f)| FigureRow {
                policy: r.policy.clone(),
                metric: name.to_string(),
                value: f(&r.global),
            })
        })
        .collect()
}

/// Throttling and waste.
pub fn fig7_rows(reports: &[RunReport]) -> Vec<FigureRow> {
    rows(
        reports,
        &[
            ("interactions_aborted_midway", |m| m.interactions_aborted_midway as f64),
            ("interactions_blocked_at_head", |m| m.interactions_blocked_at_head as f64),
            ("wasted_tokens", |m| m.wasted_tokens as f64),
            ("abuser_token_share", |m| m.abuser_token_share),
        ],
    )
}

/// Users served and delayed.
pub fn fig8_rows(reports: &[RunReport]) -> Vec<FigureRow> {
    rows(
        reports,
        &[
            ("served_users_pct_requests", |m| m.served_users_pct_requests),
            ("served_users_pct_interactions", |m| m.served_users_pct_interactions),
            ("delayed_users_pct", |m| m.delayed_users_pct),
            ("ttft_ms_mean", |m| m.ttft_ms.mean),
        ],
    )
}

pub fn write_figure_csv<W: Write>(rows: &[FigureRow], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Throughput, latency and service per policy.
pub fn table2_rows(reports: &[RunReport]) -> Vec<Vec<String>> {
    let mut out = vec![[
        "policy",
        "prompt_throughput",
        "decode_throughput",
        "ttft_ms_mean",
        "served_users_pct_requests",
        "served_users_pct_interactions",
        "service_provided_pct_requests",
        "service_provided_pct_interactions",
    ]
    .map(String::from)
    .to_vec()];
    for r in reports {
        let g = &r.global;
        out.push(vec![
            r.policy.clone(),
            g.prompt_throughput.to_string(),
            g.decode_throughput.to_string(),
            g.ttft_ms.mean.to_string(),
            g.served_users_pct_requests.to_string(),
            g.served_users_pct_interactions.to_string(),
            g.service_provided_pct_requests.to_string(),
            g.service_provided_pct_interactions.to_string(),
        ]);
    }
    out
}

/// Per-app throughput and requests served per policy.
pub fn table3_rows(reports: &[RunReport]) -> Vec<Vec<String>> {
    let mut out = vec![["policy", "app", "requests_served", "prompt_throughput", "decode_throughput"]
        .map(String::from)
        .to_vec()];
    for r in reports {
        for (app, m) in &r.per_app {
            out.push(vec![
                r.policy.clone(),
                app.to_string(),
                m.requests_served.to_string(),
                m.prompt_throughput.to_string(),
                m.decode_throughput.to_string(),
            ]);
        }
    }
    out
}

fn write_rows<W: Write>(rows: &[Vec<String>], w: W) -> Result<(), Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.write_record(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn write_table2_csv<W: Write>(reports: &[RunReport], w: W) -> Result<(), Error> {
    write_rows(&table2_rows(reports), w)
}

pub fn write_table3_csv<W: Write>(reports: &[RunReport], w: W) -> Result<(), Error> {
    write_rows(&table3_rows(reports), w)
}
