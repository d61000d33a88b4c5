//! CSV and JSON artifacts. Numeric CSV cells are written with nine
//! significant digits; every file carries the seeds and config hash that
//! produced it (a `#` comment line in CSV, a `meta` object in JSON).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use cardiotwin_core::analysis::PvLoop;
use cardiotwin_core::identifiability::StateSeries;
use cardiotwin_core::neural::Mlp;
use cardiotwin_core::params::{ParamBounds, N_LEARNABLE};
use cardiotwin_core::pipeline::{SweepRow, TrialResult};
use cardiotwin_core::solver::Trajectory;
use cardiotwin_core::synthetic::{Measurement, PretextExample};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Provenance {
    pub fn new(config: &RunConfig, seeds: &[(&str, u64)]) -> Self {
        Provenance {
            tool: format!("cardiotwin {}", env!("CARGO_PKG_VERSION")),
            config_hash: config.hash(),
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    pub fn header_line(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {} config_hash={} seeds={}", self.tool, self.config_hash, seeds.join(","))
    }
}

/// Nine significant digits, scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// Write with a provenance comment, a header row and string cells.
pub fn write_table<W: Write>(mut w: W, meta: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    writeln!(w, "{}", meta.header_line())?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    /// `None` for empty cells.
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).with_context(|| format!("missing column `{name}`"))
    }

    fn expect_header(&self, expected: &[String]) -> Result<()> {
        ensure!(self.header == expected, "unexpected header {:?}, want {:?}", self.header, expected);
        Ok(())
    }

    fn cell(&self, row: usize, col: usize) -> Result<f64> {
        self.rows[row][col].with_context(|| format!("empty cell at row {}, column `{}`", row + 1, self.header[col]))
    }
}

pub fn read_table<R: Read>(r: R) -> Result<Table> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| {
                let c = c.trim();
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>().map(Some).with_context(|| format!("row {}: bad number `{c}`", i + 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}_{i}")).collect()
}

fn strs(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn trajectory_header(lvad: bool) -> Vec<String> {
    let mut h = strs(&["t", "x1", "x2", "x3", "x4", "x5"]);
    if lvad {
        h.push("x6".into());
    }
    h.extend(strs(&["p_lv", "v_lv"]));
    h
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, meta: &Provenance) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..traj.len())
        .map(|k| {
            let mut r = vec![num(traj.time(k))];
            r.extend(traj.states[k].as_slice().iter().map(|&v| num(v)));
            let (p, v) = traj.pressure_volume(k);
            r.push(num(p));
            r.push(num(v));
            r
        })
        .collect();
    write_table(w, meta, &trajectory_header(traj.dim() == 6), &rows)
}

/// Trajectory file contents: time column, 5 or 6 states, `p_lv`, `v_lv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub p_lv: Vec<f64>,
    pub v_lv: Vec<f64>,
}

impl TrajectoryTable {
    /// Uniform-grid state record; the grid must start at 0.
    pub fn state_series(&self) -> Result<StateSeries> {
        ensure!(self.t.len() >= 2, "trajectory needs at least two samples");
        let dt = (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64;
        ensure!(dt > 0.0, "time column must increase");
        ensure!(self.t[0].abs() <= 1e-6 * dt, "time column must start at 0");
        for (k, &t) in self.t.iter().enumerate() {
            ensure!(
                (t - k as f64 * dt).abs() <= 1e-6 * dt.max(t.abs() * 1e-3),
                "non-uniform time grid at row {}",
                k + 1
            );
        }
        Ok(StateSeries {
            dt,
            x: self.states.iter().map(|s| [s[0], s[1], s[2], s[3], s[4]]).collect(),
            p_lv: self.p_lv.clone(),
            v_lv: self.v_lv.clone(),
        })
    }
}

pub fn read_trajectory<R: Read>(r: R) -> Result<TrajectoryTable> {
    let t = read_table(r)?;
    let lvad = t.header.len() == 9;
    t.expect_header(&trajectory_header(lvad))?;
    let dim = if lvad { 6 } else { 5 };
    let mut out = TrajectoryTable { t: vec![], states: vec![], p_lv: vec![], v_lv: vec![] };
    for i in 0..t.rows.len() {
        out.t.push(t.cell(i, 0)?);
        out.states.push((1..=dim).map(|j| t.cell(i, j)).collect::<Result<_>>()?);
        out.p_lv.push(t.cell(i, dim + 1)?);
        out.v_lv.push(t.cell(i, dim + 2)?);
    }
    Ok(out)
}

pub fn write_pv_loop<W: Write>(w: W, pv: &PvLoop, meta: &Provenance) -> Result<()> {
    let rows: Vec<Vec<String>> = pv.points.iter().map(|p| vec![num(p.phase), num(p.volume), num(p.pressure)]).collect();
    write_table(w, meta, &strs(&["phase", "v_lv", "p_lv"]), &rows)
}

/// `(phase, v_lv, p_lv)` rows.
pub fn read_pv_loop<R: Read>(r: R) -> Result<Vec<[f64; 3]>> {
    let t = read_table(r)?;
    t.expect_header(&strs(&["phase", "v_lv", "p_lv"]))?;
    (0..t.rows.len()).map(|i| Ok([t.cell(i, 0)?, t.cell(i, 1)?, t.cell(i, 2)?])).collect()
}

pub fn pretext_header() -> Vec<String> {
    let mut h = names("theta", N_LEARNABLE);
    h.extend(strs(&["v_ed", "v_es"]));
    h
}

pub fn write_pretext<W: Write>(w: W, examples: &[PretextExample], meta: &Provenance) -> Result<()> {
    let rows: Vec<Vec<String>> =
        examples.iter().map(|e| e.theta.iter().chain([&e.v_ed, &e.v_es]).map(|&v| num(v)).collect()).collect();
    write_table(w, meta, &pretext_header(), &rows)
}

pub fn read_pretext<R: Read>(r: R) -> Result<Vec<PretextExample>> {
    let t = read_table(r)?;
    t.expect_header(&pretext_header())?;
    (0..t.rows.len())
        .map(|i| {
            let mut theta = [0.0; N_LEARNABLE];
            for (j, th) in theta.iter_mut().enumerate() {
                *th = t.cell(i, j)?;
            }
            Ok(PretextExample { theta, v_ed: t.cell(i, N_LEARNABLE)?, v_es: t.cell(i, N_LEARNABLE + 1)? })
        })
        .collect()
}

pub fn finetune_header(y_dim: usize) -> Vec<String> {
    let mut h = names("y", y_dim);
    h.extend(strs(&["v_ed", "v_es"]));
    h.extend(names("theta", N_LEARNABLE));
    h
}

pub fn write_finetune<W: Write>(w: W, measurements: &[Measurement], meta: &Provenance) -> Result<()> {
    let y_dim = measurements.first().map_or(0, |m| m.y.len());
    let rows = measurements
        .iter()
        .map(|m| {
            ensure!(m.y.len() == y_dim, "measurements have mixed dimensions");
            let mut r: Vec<String> = m.y.iter().chain([&m.v_ed, &m.v_es]).map(|&v| num(v)).collect();
            match m.true_theta {
                Some(th) => r.extend(th.iter().map(|&v| num(v))),
                None => r.extend(std::iter::repeat_n(String::new(), N_LEARNABLE)),
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(w, meta, &finetune_header(y_dim), &rows)
}

pub fn read_finetune<R: Read>(r: R) -> Result<Vec<Measurement>> {
    let t = read_table(r)?;
    ensure!(t.header.len() > N_LEARNABLE + 2, "finetune table has too few columns");
    let y_dim = t.header.len() - N_LEARNABLE - 2;
    t.expect_header(&finetune_header(y_dim))?;
    (0..t.rows.len())
        .map(|i| {
            let y = (0..y_dim).map(|j| t.cell(i, j)).collect::<Result<Vec<_>>>()?;
            let th = &t.rows[i][y_dim + 2..];
            let true_theta = if th.iter().all(Option::is_none) {
                None
            } else {
                let mut a = [0.0; N_LEARNABLE];
                for (j, v) in a.iter_mut().enumerate() {
                    *v = t.cell(i, y_dim + 2 + j)?;
                }
                Some(a)
            };
            Ok(Measurement { y, v_ed: t.cell(i, y_dim)?, v_es: t.cell(i, y_dim + 1)?, true_theta })
        })
        .collect()
}

pub fn write_trial<W: Write>(w: W, trial: &TrialResult, meta: &Provenance) -> Result<()> {
    let rows: Vec<Vec<String>> = trial
        .rows
        .iter()
        .map(|r| vec![r.patient_id.to_string(), num(r.ef_baseline), num(r.ef_lvad), num(r.delta_ef)])
        .collect();
    write_table(w, meta, &strs(&["patient_id", "ef_baseline", "ef_lvad", "delta_ef"]), &rows)
}

/// Successful sweep levels only; failures are reported in the summary.
pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow], meta: &Provenance) -> Result<()> {
    let out: Vec<Vec<String>> = rows
        .iter()
        .filter_map(|r| {
            r.outcome.as_ref().ok().map(|o| vec![num(r.omega), num(o.edes.v_ed), num(o.edes.v_es), num(o.ef)])
        })
        .collect();
    write_table(w, meta, &strs(&["omega", "v_ed", "v_es", "ef"]), &out)
}

pub fn write_loss<W: Write>(w: W, history: &[f64], meta: &Provenance) -> Result<()> {
    let rows: Vec<Vec<String>> = history.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), num(*l)]).collect();
    write_table(w, meta, &strs(&["epoch", "loss"]), &rows)
}

/// Counts of baseline and assisted EF in `bins` equal bins over [0, 1].
pub fn write_ef_histogram<W: Write>(w: W, trial: &TrialResult, bins: usize, meta: &Provenance) -> Result<()> {
    let bin = |x: f64| ((x * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    let mut counts = vec![[0usize; 2]; bins];
    for r in &trial.rows {
        counts[bin(r.ef_baseline)][0] += 1;
        counts[bin(r.ef_lvad)][1] += 1;
    }
    let rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![num(i as f64 / bins as f64), num((i + 1) as f64 / bins as f64), c[0].to_string(), c[1].to_string()]
        })
        .collect();
    write_table(w, meta, &strs(&["bin_lo", "bin_hi", "baseline_count", "lvad_count"]), &rows)
}

/// Write a table-producing closure to `path`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_file<T>(path: &Path, f: impl FnOnce(BufReader<File>) -> Result<T>) -> Result<T> {
    f(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_file(path, |r| Ok(serde_json::from_reader(r)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    Surrogate,
    Backbone,
}

/// Trained network plus the box it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub meta: Provenance,
    pub role: NetRole,
    pub bounds: ParamBounds,
    pub net: Mlp,
}

impl Checkpoint {
    pub fn load(path: &Path, role: NetRole) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        if c.role != role {
            bail!("{} holds a {:?} network, expected {:?}", path.display(), c.role, role);
        }
        c.net.validate().with_context(|| format!("checkpoint {}", path.display()))?;
        Ok(c)
    }
}
