//! CSV tables, atomic file writes and small SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Estimate, MeanSeries, MetricsSummary};
use crate::pipeline::TraceRun;
use crate::scenario::ScenarioConfig;
use crate::traces::{Channel, Trace};

pub const TRACE_HEADER: [&str; 5] = ["trace_id", "t", "channel", "node_id", "value_mw"];

pub const DISPATCH_HEADER: [&str; 9] = [
    "trace_id",
    "t",
    "node_id",
    "generation_mw",
    "local_served_mw",
    "compute_placed_mw",
    "curtailed_mw",
    "gas_output_mw",
    "cost_usd",
];

pub const SERIES_HEADER: [&str; 7] = [
    "t",
    "local_served_mw",
    "gas_output_mw",
    "curtailed_mw",
    "compute_served_mw",
    "unserved_compute_mw",
    "price",
];

/// Columns naming a run or sweep cell, ahead of the metric columns.
pub const CELL_HEADER: [&str; 7] = ["scenario", "mode", "level", "market", "theta", "policy", "n_traces"];

pub const SUMMARY_METRICS: [&str; 8] = [
    "coe",
    "curtailed_mw",
    "curtailed_mwh",
    "gas_mean_mw",
    "gas_peak_mw",
    "compute_served_mwh",
    "total_cost_usd",
    "unit_cost",
];

/// Column values in [`CELL_HEADER`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellKey {
    pub scenario: String,
    pub mode: String,
    pub level: Option<f64>,
    pub market: String,
    pub theta: Option<f64>,
    pub policy: String,
    pub n_traces: usize,
}

impl CellKey {
    pub fn values(&self) -> Vec<String> {
        vec![
            self.scenario.clone(),
            self.mode.clone(),
            opt(self.level),
            self.market.clone(),
            opt(self.theta),
            self.policy.clone(),
            self.n_traces.to_string(),
        ]
    }

    /// Filesystem-safe label.
    pub fn slug(&self) -> String {
        let mut s = String::new();
        if let Some(l) = self.level {
            let _ = write!(s, "level{l}_");
        }
        s.push_str(&self.market);
        if let Some(th) = self.theta {
            let _ = write!(s, "_theta{th}");
        }
        let _ = write!(s, "_{}", self.policy);
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = CELL_HEADER.iter().map(|s| s.to_string()).collect();
    for m in SUMMARY_METRICS {
        h.push(m.to_string());
        if m != "unit_cost" {
            h.push(format!("{m}_ci95"));
        }
    }
    h
}

pub fn summary_row(key: &CellKey, s: &MetricsSummary) -> Vec<String> {
    let mut row = key.values();
    let est = |row: &mut Vec<String>, e: &Estimate| {
        row.push(e.mean.to_string());
        row.push(e.ci95.to_string());
    };
    est(&mut row, &s.coe);
    est(&mut row, &s.curtailed);
    est(&mut row, &s.curtailed_mwh);
    est(&mut row, &s.gas_mean);
    est(&mut row, &s.gas_peak);
    est(&mut row, &s.compute_served);
    est(&mut row, &s.total_cost);
    row.push(opt(s.unit_cost));
    row
}

pub fn series_header() -> Vec<String> {
    CELL_HEADER
        .iter()
        .chain(SERIES_HEADER.iter())
        .map(|s| s.to_string())
        .collect()
}

pub fn series_rows(key: &CellKey, s: &MeanSeries) -> Vec<Vec<String>> {
    let prefix = key.values();
    (0..s.gas_output.len())
        .map(|t| {
            let mut row = prefix.clone();
            row.push(t.to_string());
            for v in [
                &s.local_demand,
                &s.gas_output,
                &s.curtailed,
                &s.compute_served,
                &s.unserved_compute,
            ] {
                row.push(v[t].to_string());
            }
            row.push(s.price.get(t).map(|p| p.to_string()).unwrap_or_default());
            row
        })
        .collect()
}

pub fn trace_rows(trace: &Trace) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let id = trace.trace_id.to_string();
    for t in 0..trace.horizon_steps {
        for (channel, per_node) in [
            (Channel::LocalDemand, &trace.local_demand),
            (Channel::Renewable, &trace.renewable_availability),
        ] {
            for (n, xs) in per_node.iter().enumerate() {
                rows.push(vec![
                    id.clone(),
                    t.to_string(),
                    channel.as_str().to_string(),
                    n.to_string(),
                    xs[t].to_string(),
                ]);
            }
        }
        rows.push(vec![
            id.clone(),
            t.to_string(),
            Channel::Compute.as_str().to_string(),
            String::new(),
            trace.compute_arrivals[t].to_string(),
        ]);
    }
    rows
}

/// One row per node per step. `cost_usd` is what the node's loads paid.
pub fn dispatch_rows(cfg: &ScenarioConfig, run: &TraceRun) -> Vec<Vec<String>> {
    let id = run.trace_id.to_string();
    let step_hours = cfg.step_hours();
    let mut rows = Vec::new();
    for rec in &run.dispatch {
        for (n, node) in cfg.nodes.iter().enumerate() {
            let gas = if node.dispatchable { rec.generation[n] } else { 0.0 };
            rows.push(vec![
                id.clone(),
                rec.t.to_string(),
                n.to_string(),
                rec.generation[n].to_string(),
                rec.local_served[n].to_string(),
                rec.compute_placed[n].to_string(),
                rec.curtailed[n].to_string(),
                gas.to_string(),
                rec.cost_at(n, step_hours).to_string(),
            ]);
        }
    }
    rows
}

pub fn market_header(n_suppliers: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "trace_id",
        "t",
        "price",
        "demand_mw",
        "served_mw",
        "shortfall_mw",
        "payment_usd",
        "queue_mw",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..n_suppliers).map(|i| format!("q{i}_mw")));
    h
}

/// Empty when the run had no market.
pub fn market_rows(run: &TraceRun, step_hours: f64) -> Vec<Vec<String>> {
    let Some(outcomes) = &run.market else {
        return Vec::new();
    };
    let id = run.trace_id.to_string();
    outcomes
        .iter()
        .map(|o| {
            let mut row = vec![
                id.clone(),
                o.t.to_string(),
                o.price.to_string(),
                o.demand.to_string(),
                o.served.to_string(),
                o.shortfall.to_string(),
                (o.payment * step_hours).to_string(),
                o.queue_after.to_string(),
            ];
            row.extend(o.quantities.iter().map(|q| q.to_string()));
            row
        })
        .collect()
}

/// Serialize a table to CSV bytes.
pub fn csv_bytes<H, R>(header: &[H], rows: R) -> Result<Vec<u8>>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Output(e.to_string());
    w.write_record(header.iter().map(|h| h.as_ref())).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::Output(e.to_string()))
}

/// Write via a sibling temp file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_csv<H, R>(path: &Path, header: &[H], rows: R) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    write_atomic(path, &csv_bytes(header, rows)?)
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Plain SVG line chart with axes, tick labels and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, lines: &[Line]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 200.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let pts = lines.iter().flat_map(|l| l.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1.partial_cmp(&y0) != Some(std::cmp::Ordering::Greater) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + ph + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            left - 6.0,
            sy(yv) + 4.0,
            tick(yv),
            sy(yv),
            left + pw,
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, line) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = line
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            left + pw + 38.0,
            ly + 4.0,
            escape(&line.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::simulate_trace;
    use crate::scenario::builtin_scenario;

    #[test]
    fn summary_row_matches_header_width() {
        let key = CellKey {
            scenario: "x".into(),
            mode: "run".into(),
            level: None,
            market: "off".into(),
            theta: None,
            policy: "shed".into(),
            n_traces: 3,
        };
        let e = Estimate { mean: 1.5, ci95: 0.25 };
        let s = MetricsSummary {
            n_traces: 3,
            coe: e,
            curtailed: e,
            curtailed_mwh: e,
            gas_mean: e,
            gas_peak: e,
            compute_served: e,
            total_cost: e,
            unit_cost: None,
        };
        let row = summary_row(&key, &s);
        assert_eq!(row.len(), summary_header().len());
        assert_eq!(row[7], "1.5");
        assert_eq!(row.last().unwrap(), "");
        assert_eq!(key.slug(), "off_shed");
    }

    #[test]
    fn dispatch_and_trace_row_counts() {
        let mut cfg = builtin_scenario("case_a").unwrap();
        cfg.horizon_steps = 4;
        let (trace, run) = simulate_trace(&cfg, 0).unwrap();
        assert_eq!(dispatch_rows(&cfg, &run).len(), 4 * 3);
        assert_eq!(trace_rows(&trace).len(), 4 * 7);
        assert!(market_rows(&run, cfg.step_hours()).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let bytes = csv_bytes(&["a", "b"], vec![vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n1,\"x,y\"\n");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn chart_has_one_polyline_per_line() {
        let lines = vec![
            Line {
                label: "a<b".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0)],
            },
            Line {
                label: "c".into(),
                points: vec![(0.0, 0.5), (1.0, 0.0)],
            },
        ];
        let svg = line_chart_svg("t", "x", "y", &lines);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
