use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use gridspin::metrics::{capacities_for_level, normalize_by_max, run_ensemble_with, EnsembleResult, SweepMode};
use gridspin::output::{
    self, dispatch_rows, market_header, market_rows, series_header, series_rows, summary_header, summary_row,
    trace_rows, write_atomic, write_csv, CellKey, Line, DISPATCH_HEADER, TRACE_HEADER,
};
use gridspin::scenario::{ExcessPolicy, MarketConfig, DEFAULT_THETA};
use gridspin::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::args::{Dump, MarketChoice};

/// File name and CSV bytes.
type NamedCsv = (&'static str, Vec<u8>);

/// Everything needed to reproduce a run or sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub scenario: ScenarioConfig,
    pub n_traces: usize,
    pub sweep: Option<SweepSpec>,
    pub dumps: Vec<Dump>,
    pub charts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub mode: SweepMode,
    pub levels: Vec<f64>,
    pub bids: Vec<MarketChoice>,
    pub thetas: Vec<f64>,
    pub policies: Vec<ExcessPolicy>,
}

impl SweepSpec {
    /// Empty lists fall back to the scenario's own settings.
    pub fn resolve(
        base: &ScenarioConfig,
        mode: SweepMode,
        levels: Vec<f64>,
        mut bids: Vec<MarketChoice>,
        mut thetas: Vec<f64>,
        mut policies: Vec<ExcessPolicy>,
    ) -> Self {
        if bids.is_empty() {
            bids.push(MarketChoice::of(base));
        }
        if thetas.is_empty() {
            thetas.push(base.market.as_ref().map_or(DEFAULT_THETA, |m| m.theta));
        }
        if policies.is_empty() {
            policies.push(base.excess_policy);
        }
        SweepSpec {
            mode,
            levels,
            bids,
            thetas,
            policies,
        }
    }
}

/// Files written by [`Job::execute`], relative to the run directory.
pub struct Executed {
    pub written: Vec<PathBuf>,
    /// Per cell: its directory, its own files and its wall-clock seconds.
    pub per_cell: Vec<(PathBuf, Vec<PathBuf>, f64)>,
}

pub struct Cell {
    pub key: CellKey,
    pub cfg: ScenarioConfig,
}

fn policy_str(p: ExcessPolicy) -> &'static str {
    match p {
        ExcessPolicy::Shed => "shed",
        ExcessPolicy::Rollover => "rollover",
    }
}

fn market_str(m: MarketChoice) -> &'static str {
    match m {
        MarketChoice::Off => "off",
        MarketChoice::Merit => "merit",
        MarketChoice::Plsf => "plsf",
    }
}

impl Job {
    /// Expand into validated cells, in output row order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.n_traces == 0 {
            bail!("--traces must be at least 1");
        }
        let base = &self.scenario;
        base.ensure_valid()?;
        let key = |cfg: &ScenarioConfig, mode: &str, level| CellKey {
            scenario: base.name.clone(),
            mode: mode.to_string(),
            level,
            market: market_str(MarketChoice::of(cfg)).to_string(),
            theta: cfg.market.as_ref().map(|m| m.theta),
            policy: policy_str(cfg.excess_policy).to_string(),
            n_traces: self.n_traces,
        };
        let Some(spec) = &self.sweep else {
            return Ok(vec![Cell {
                key: key(base, "run", None),
                cfg: base.clone(),
            }]);
        };
        if spec.levels.is_empty() {
            bail!("--levels needs at least one value");
        }
        let mut cells = Vec::new();
        for &level in &spec.levels {
            let leveled = base.with_compute_capacities(&capacities_for_level(base, spec.mode, level)?);
            for &bid in &spec.bids {
                let thetas: Vec<Option<f64>> = match bid.bid_format() {
                    None => vec![None],
                    Some(_) => spec.thetas.iter().copied().map(Some).collect(),
                };
                for theta in thetas {
                    for &policy in &spec.policies {
                        let mut cfg = leveled.clone();
                        cfg.market = bid.bid_format().map(|bid_format| MarketConfig {
                            theta: theta.unwrap_or(DEFAULT_THETA),
                            bid_format,
                        });
                        cfg.excess_policy = policy;
                        cfg.ensure_valid()?;
                        cells.push(Cell {
                            key: key(&cfg, spec.mode.as_str(), Some(level)),
                            cfg,
                        });
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Run every cell and write results under `dir`. Returns the written
    /// files relative to `dir`.
    pub fn execute(&self, dir: &Path, cells: &[Cell], verbose: bool) -> Result<Executed> {
        let mut written = Vec::new();
        let mut per_cell = Vec::new();
        let mut summary = Vec::new();
        let mut series = Vec::new();
        let mut results = Vec::new();
        for cell in cells {
            let start = Instant::now();
            let (res, dumps) = self.run_cell(cell)?;
            if verbose {
                println!("{}", describe(&cell.key, &res));
            }
            summary.push(summary_row(&cell.key, &res.summary));
            series.extend(series_rows(&cell.key, &res.series));
            let cell_dir = if self.sweep.is_some() {
                PathBuf::from("cells").join(cell.key.slug())
            } else {
                PathBuf::new()
            };
            let mut files = Vec::new();
            for (name, bytes) in dumps {
                let rel = cell_dir.join(name);
                write_atomic(&dir.join(&rel), &bytes)?;
                files.push(rel);
            }
            written.extend(files.iter().cloned());
            per_cell.push((cell_dir, files, start.elapsed().as_secs_f64()));
            results.push(res);
        }
        write_csv(&dir.join("summary.csv"), &summary_header(), summary)?;
        written.push("summary.csv".into());
        write_csv(&dir.join("series.csv"), &series_header(), series)?;
        written.push("series.csv".into());
        if self.charts {
            for (name, svg) in self.charts(cells, &results) {
                let rel = PathBuf::from("charts").join(name);
                write_atomic(&dir.join(&rel), svg.as_bytes())?;
                written.push(rel);
            }
        }
        Ok(Executed { written, per_cell })
    }

    fn run_cell(&self, cell: &Cell) -> Result<(EnsembleResult, Vec<NamedCsv>)> {
        let cfg = &cell.cfg;
        let want = |d| self.dumps.contains(&d);
        let with_market = cfg.market.is_some();
        let (res, chunks) = run_ensemble_with(cfg, self.n_traces, |trace, run| {
            (
                if want(Dump::Traces) {
                    trace_rows(trace)
                } else {
                    Vec::new()
                },
                if want(Dump::Dispatch) {
                    dispatch_rows(cfg, run)
                } else {
                    Vec::new()
                },
                if want(Dump::Market) {
                    market_rows(run, cfg.step_hours())
                } else {
                    Vec::new()
                },
            )
        })?;
        let mut traces = Vec::new();
        let mut dispatch = Vec::new();
        let mut market = Vec::new();
        for (t, d, m) in chunks {
            traces.extend(t);
            dispatch.extend(d);
            market.extend(m);
        }
        let mut files = Vec::new();
        if want(Dump::Traces) {
            files.push(("traces.csv", output::csv_bytes(&TRACE_HEADER, traces)?));
        }
        if want(Dump::Dispatch) {
            files.push(("dispatch.csv", output::csv_bytes(&DISPATCH_HEADER, dispatch)?));
        }
        if want(Dump::Market) {
            if with_market {
                files.push((
                    "market.csv",
                    output::csv_bytes(&market_header(cfg.node_count()), market)?,
                ));
            } else {
                eprintln!("note: {} has no market; skipping market dump", cell.key.slug());
            }
        }
        Ok((res, files))
    }

    fn charts(&self, cells: &[Cell], results: &[EnsembleResult]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if self.sweep.is_none() {
            let (cell, res) = (&cells[0], &results[0]);
            let h = cell.cfg.step_hours();
            let line = |label: &str, ys: &[f64]| Line {
                label: label.to_string(),
                points: ys.iter().enumerate().map(|(t, &y)| (t as f64 * h, y)).collect(),
            };
            let s = &res.series;
            let lines = vec![
                line("gas", &s.gas_output),
                line("curtailed", &s.curtailed),
                line("compute served", &s.compute_served),
                line("compute unserved", &s.unserved_compute),
            ];
            out.push((
                "series.svg".to_string(),
                output::line_chart_svg(&format!("{}: ensemble mean", cell.key.scenario), "hour", "MW", &lines),
            ));
            if !s.price.is_empty() {
                out.push((
                    "price.svg".to_string(),
                    output::line_chart_svg("clearing price", "hour", "$/MWh", &[line("price", &s.price)]),
                ));
            }
            return out;
        }

        // One line per (market, theta, policy), levels on x, each chart
        // scaled by its own maximum.
        type Metric = fn(&EnsembleResult) -> Option<f64>;
        let metrics: [(&str, &str, Metric); 4] = [
            ("total_cost", "total cost", |r| Some(r.summary.total_cost.mean)),
            ("compute_served", "compute served", |r| {
                Some(r.summary.compute_served.mean)
            }),
            ("unit_cost", "unit cost", |r| r.summary.unit_cost),
            ("curtailed", "curtailment", |r| Some(r.summary.curtailed.mean)),
        ];
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, cell) in cells.iter().enumerate() {
            let k = &cell.key;
            let label = match k.theta {
                Some(th) => format!("{} θ={} {}", k.market, th, k.policy),
                None => format!("{} {}", k.market, k.policy),
            };
            match groups.iter_mut().find(|(l, _)| *l == label) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((label, vec![i])),
            }
        }
        for (file, title, metric) in metrics {
            let raw: Vec<Vec<(f64, f64)>> = groups
                .iter()
                .map(|(_, idx)| {
                    idx.iter()
                        .filter_map(|&i| Some((cells[i].key.level?, metric(&results[i])?)))
                        .collect()
                })
                .collect();
            let all: Vec<f64> = raw.iter().flatten().map(|p| p.1).collect();
            let scaled = match normalize_by_max(&[all]) {
                Ok(mut v) => v.remove(0),
                Err(e) => {
                    eprintln!("note: skipping {file} chart: {e}");
                    continue;
                }
            };
            let mut it = scaled.into_iter();
            let lines: Vec<Line> = groups
                .iter()
                .zip(&raw)
                .map(|((label, _), pts)| Line {
                    label: label.clone(),
                    points: pts.iter().map(|&(x, _)| (x, it.next().unwrap_or(0.0))).collect(),
                })
                .collect();
            out.push((
                format!("{file}.svg"),
                output::line_chart_svg(
                    &format!("{title} (normalized)"),
                    "HPC MW per renewable node",
                    "fraction of max",
                    &lines,
                ),
            ));
        }
        out
    }
}

fn describe(key: &CellKey, res: &EnsembleResult) -> String {
    let s = &res.summary;
    let mut line = format!(
        "{:<32} coe {:.3}±{:.3} $/MWh  curtailed {:.2} MW  gas peak {:.1} MW  served {:.1} MWh  cost ${:.0}",
        key.slug(),
        s.coe.mean,
        s.coe.ci95,
        s.curtailed.mean,
        s.gas_peak.mean,
        s.compute_served.mean,
        s.total_cost.mean,
    );
    if let Some(u) = s.unit_cost {
        line.push_str(&format!("  unit {u:.3} $/MWh"));
    }
    line
}

/// Written first with `duration_secs` unset, then rewritten on success.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub created_utc: String,
    pub jobs: usize,
    pub job: Job,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: Option<f64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("failed to read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("failed to parse manifest {}", path.display()))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())?;
        Ok(())
    }
}

/// A fresh timestamped directory under `root/<scenario>/`, with a `latest`
/// link pointing at it.
fn create_run_dir(root: &Path, scenario: &str) -> Result<PathBuf> {
    let parent = root.join(scenario);
    std::fs::create_dir_all(&parent).with_context(|| format!("failed to create {}", parent.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut dir = parent.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = parent.join(format!("{stamp}-{n}"));
    }
    std::fs::create_dir(&dir).with_context(|| format!("failed to create {}", dir.display()))?;
    #[cfg(unix)]
    {
        let target = dir.file_name().expect("timestamp dir has a name");
        let tmp = parent.join(format!(".latest.tmp{}", std::process::id()));
        let _ = std::fs::remove_file(&tmp);
        if std::os::unix::fs::symlink(target, &tmp).is_ok() {
            let _ = std::fs::rename(&tmp, parent.join("latest"));
        }
    }
    Ok(dir)
}

/// Validate, create the output directory, run and record the manifest.
/// Sweeps also get one manifest per cell that replays that cell alone.
pub fn launch(job: Job, root: &Path, jobs: usize, command: &[String], verbose: bool) -> Result<PathBuf> {
    let cells = job.cells()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let dir = create_run_dir(root, &job.scenario.name)?;
    let mut manifest = Manifest {
        tool: "gridspin".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.to_vec(),
        created_utc: chrono::Utc::now().to_rfc3339(),
        jobs,
        job,
        outputs: Vec::new(),
        duration_secs: None,
    };
    manifest.save(&dir)?;
    let start = Instant::now();
    let done = pool.install(|| manifest.job.execute(&dir, &cells, verbose))?;
    if manifest.job.sweep.is_some() {
        for (cell, (cell_dir, files, secs)) in cells.iter().zip(done.per_cell) {
            let cell_manifest = Manifest {
                job: Job {
                    scenario: cell.cfg.clone(),
                    sweep: None,
                    charts: false,
                    ..manifest.job.clone()
                },
                outputs: files
                    .iter()
                    .map(|f| f.strip_prefix(&cell_dir).unwrap_or(f).to_path_buf())
                    .collect(),
                duration_secs: Some(secs),
                ..manifest.clone()
            };
            cell_manifest.save(&dir.join(cell_dir))?;
        }
    }
    manifest.outputs = done.written;
    manifest.duration_secs = Some(start.elapsed().as_secs_f64());
    manifest.save(&dir)?;
    Ok(dir)
}
