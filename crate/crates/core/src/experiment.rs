//! Experiment harness behind the CLI: configs, datasets, run directories and
//! plot export.
//!
//! A run directory holds
//!
//! | file            | contents                                             |
//! |-----------------|------------------------------------------------------|
//! | `config.json`   | the resolved [`ExperimentConfig`]                    |
//! | `dataset.csv`   | `x1,x2,y1,y2` rows                                   |
//! | `model.json`    | the trained network                                  |
//! | `report.jsonl`  | one [`IterationRecord`] per line                     |
//! | `summary.json`  | final losses, verdict and per-piece certificates     |
//! | `timing.json`   | wall time (kept out of the summary so it stays reproducible) |
//!
//! and `export-plot` adds a `plots/` subdirectory of CSV series with SVG twins.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conzono::{contains_point, sample, ConstrainedZonotope};
use crate::error::{Error, Result};
use crate::network::{reach, Network, ReachSet};
use crate::training::{
    certify, label, train_constrained, train_unconstrained, Certification, Dataset,
    IterationRecord, Problem, TrainConfig, TrainReport,
};

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMING_FILE: &str = "timing.json";
pub const PLOT_DIR: &str = "plots";

/// Tolerance for "output point lies in a set" in exported plot data.
const PLOT_MEMBER_TOL: f64 = 1e-9;
const OUTLINE_DIRECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// `f(x) = [x1² + sin x2; x2² + sin x1]`
    QuadraticSine,
}

impl Target {
    pub fn input_dim(self) -> usize {
        2
    }

    pub fn output_dim(self) -> usize {
        2
    }

    pub fn eval(self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Target::QuadraticSine => {
                DVector::from_vec(vec![x[0] * x[0] + x[1].sin(), x[1] * x[1] + x[0].sin()])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Dataset 10³, 200 iterations, constraint every 5th iteration.
    Quick,
    /// Dataset 10⁴, 10³ iterations, constraint every iteration.
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Preset::Quick),
            "full" => Ok(Preset::Full),
            other => Err(Error::Parse(format!(
                "unknown preset {other:?} (expected quick or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: Target,
    pub input_set: ConstrainedZonotope,
    pub unsafe_sets: Vec<ConstrainedZonotope>,
    pub widths: Vec<usize>,
    pub constrained: bool,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            target: Target::QuadraticSine,
            input_set: ConstrainedZonotope::unit_box(2),
            unsafe_sets: vec![default_unsafe_set()],
            widths: vec![2, 10, 2],
            constrained: true,
            train: TrainConfig::default(),
        }
    }
}

/// `CZ([1.5, 1.5], 0.5·I₂)`.
pub fn default_unsafe_set() -> ConstrainedZonotope {
    ConstrainedZonotope::axis_box(
        DVector::from_vec(vec![1.5, 1.5]),
        &DVector::from_element(2, 0.5),
    )
    .expect("valid box")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Quick => {
                self.train.dataset_size = 1_000;
                self.train.iterations = 200;
                self.train.constraint_every = 5;
            }
            Preset::Full => {
                self.train.dataset_size = 10_000;
                self.train.iterations = 1_000;
                self.train.constraint_every = 1;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "invalid widths {:?}",
                self.widths
            )));
        }
        let (n_in, n_out) = (self.widths[0], self.widths[self.widths.len() - 1]);
        if n_in != self.target.input_dim() || n_out != self.target.output_dim() {
            return Err(Error::dims(format!(
                "widths {:?} do not match the target function ({} → {})",
                self.widths,
                self.target.input_dim(),
                self.target.output_dim()
            )));
        }
        if self.input_set.dim() != n_in {
            return Err(Error::dims("input set does not match the input width"));
        }
        if self.unsafe_sets.iter().any(|u| u.dim() != n_out) {
            return Err(Error::dims("unsafe set does not match the output width"));
        }
        if self.train.dataset_size == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    pub fn problem(&self) -> Problem {
        Problem::new(self.input_set.clone(), self.unsafe_sets.clone())
    }

    pub fn initial_network(&self) -> Result<Network> {
        Network::init(&self.widths, self.train.seed)
    }
}

/// Seeded samples of the input set labelled with the target function.
pub fn generate_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let pts = sample(&cfg.input_set, cfg.train.dataset_size, cfg.train.seed)?;
    if pts.is_empty() {
        return Err(Error::EmptySet);
    }
    let inputs = DMatrix::from_columns(&pts);
    label(inputs, |x| cfg.target.eval(x))
}

fn header(prefix: char, n: usize) -> impl Iterator<Item = String> {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn csv_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    let mut out = header('x', data.inputs.nrows())
        .chain(header('y', data.labels.nrows()))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for j in 0..data.len() {
        out.push_str(&csv_row(
            data.inputs
                .column(j)
                .iter()
                .chain(data.labels.column(j).iter())
                .copied(),
        ));
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head: Vec<&str> = lines
        .next()
        .ok_or(Error::EmptyDataset)?
        .split(',')
        .map(str::trim)
        .collect();
    let n_in = head.iter().filter(|h| h.starts_with('x')).count();
    let n_out = head.iter().filter(|h| h.starts_with('y')).count();
    if n_in + n_out != head.len() || n_in == 0 || n_out == 0 {
        return Err(Error::Parse(format!("unexpected dataset header {head:?}")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("dataset row {}: {e}", k + 1)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != head.len() {
            return Err(Error::Parse(format!(
                "dataset row {} has {} fields, expected {}",
                k + 1,
                vals.len(),
                head.len()
            )));
        }
        xs.extend_from_slice(&vals[..n_in]);
        ys.extend_from_slice(&vals[n_in..]);
    }
    let m = xs.len() / n_in;
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(
        DMatrix::from_column_slice(n_in, m, &xs),
        DMatrix::from_column_slice(n_out, m, &ys),
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn require(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = dir.join(file);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact {
            dir: dir.display().to_string(),
            file: file.to_string(),
        })
    }
}

pub fn load_network(path: &Path) -> Result<Network> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub quantity: String,
    pub value: f64,
}

/// Reproducible part of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub constrained: bool,
    pub seed: u64,
    pub iterations: usize,
    pub dataset_size: usize,
    pub final_objective_loss: f64,
    /// Largest `1 − v*` over final pieces and unsafe sets.
    pub final_constraint_loss: f64,
    pub safe: bool,
    pub pieces: usize,
    pub table: Vec<TableRow>,
    pub certification: Certification,
}

impl RunSummary {
    fn from_report(cfg: &ExperimentConfig, report: &TrainReport) -> Self {
        RunSummary {
            constrained: report.constrained,
            seed: cfg.train.seed,
            iterations: cfg.train.iterations,
            dataset_size: cfg.train.dataset_size,
            final_objective_loss: report.final_objective_loss,
            final_constraint_loss: report.final_constraint_loss,
            safe: report.safe(),
            pieces: report.certification.pieces.len(),
            table: vec![
                TableRow {
                    quantity: "final objective loss".into(),
                    value: report.final_objective_loss,
                },
                TableRow {
                    quantity: "final constraint loss".into(),
                    value: report.final_constraint_loss,
                },
            ],
            certification: report.certification.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub network: Network,
    pub report: TrainReport,
    pub summary: RunSummary,
}

/// Writes `dataset.csv` for the config into `out`.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let data = generate_dataset(cfg)?;
    fs::write(out.join(DATASET_FILE), dataset_to_csv(&data))?;
    Ok(data)
}

/// Generates data, trains, certifies and writes every run artifact into `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let data = gen_data(cfg, out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let net = cfg.initial_network()?;
    let problem = cfg.problem();
    let (network, report) = if cfg.constrained {
        train_constrained(net, &data, &problem, &cfg.train)?
    } else {
        train_unconstrained(net, &data, &problem, &cfg.train)?
    };
    write_json(&out.join(MODEL_FILE), &network)?;
    let mut jsonl = String::new();
    for r in &report.records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    fs::write(out.join(REPORT_FILE), jsonl)?;
    let summary = RunSummary::from_report(cfg, &report);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    write_json(
        &out.join(TIMING_FILE),
        &serde_json::json!({ "wall_time_secs": report.wall_time_secs }),
    )?;
    Ok(RunOutcome {
        network,
        report,
        summary,
    })
}

/// Reach + per-piece emptiness for a stored model.
pub fn verify(net: &Network, cfg: &ExperimentConfig) -> Result<Certification> {
    certify(net, &cfg.problem(), &cfg.train)
}

pub fn compute_reach(net: &Network, cfg: &ExperimentConfig) -> Result<ReachSet> {
    reach(net, &cfg.input_set, &cfg.train.reach_options())
}

pub fn write_verdict(path: &Path, cert: &Certification) -> Result<()> {
    write_json(path, cert)
}

pub fn write_reach(path: &Path, r: &ReachSet) -> Result<()> {
    write_json(path, r)
}

/// Boundary points of a 2-D set from support points in evenly spaced
/// directions, counter-clockwise, with repeats removed.
pub fn outline(z: &ConstrainedZonotope, directions: usize) -> Result<Vec<[f64; 2]>> {
    if z.dim() != 2 {
        return Err(Error::dims("outlines are only defined for 2-D sets"));
    }
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(directions);
    for k in 0..directions {
        // half-step offset keeps axis-aligned faces from being hit head on
        let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / directions as f64;
        let p = z.support_point(&DVector::from_vec(vec![t.cos(), t.sin()]))?;
        let p = [p[0], p[1]];
        let repeat = pts
            .last()
            .is_some_and(|q| (q[0] - p[0]).abs() + (q[1] - p[1]).abs() < 1e-12);
        if !repeat {
            pts.push(p);
        }
    }
    if pts.len() > 1 {
        let (f, l) = (pts[0], pts[pts.len() - 1]);
        if (f[0] - l[0]).abs() + (f[1] - l[1]).abs() < 1e-12 {
            pts.pop();
        }
    }
    Ok(pts)
}

/// Paths of the files written by [`export_plot`].
#[derive(Debug, Clone, Default)]
pub struct PlotBundle {
    pub csv: Vec<PathBuf>,
    pub svg: Vec<PathBuf>,
}

/// Exported output points, one per dataset input.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPoint {
    pub input: DVector<f64>,
    pub output: DVector<f64>,
    pub in_unsafe: bool,
}

pub fn output_points(
    net: &Network,
    data: &Dataset,
    unsafe_sets: &[ConstrainedZonotope],
) -> Result<Vec<OutputPoint>> {
    let outs = net.forward_batch(&data.inputs)?;
    (0..data.len())
        .map(|j| {
            let output = outs.column(j).into_owned();
            let mut in_unsafe = false;
            for u in unsafe_sets {
                if contains_point(u, &output, PLOT_MEMBER_TOL)? {
                    in_unsafe = true;
                    break;
                }
            }
            Ok(OutputPoint {
                input: data.inputs.column(j).into_owned(),
                output,
                in_unsafe,
            })
        })
        .collect()
}

/// Reads a completed run directory and writes CSV series (and SVGs when the
/// output is 2-D) into `run_dir/plots`.
pub fn export_plot(run_dir: &Path) -> Result<PlotBundle> {
    let cfg = ExperimentConfig::load(&require(run_dir, CONFIG_FILE)?)?;
    let net = load_network(&require(run_dir, MODEL_FILE)?)?;
    let data = dataset_from_csv(&fs::read_to_string(require(run_dir, DATASET_FILE)?)?)?;
    let records: Vec<IterationRecord> = fs::read_to_string(require(run_dir, REPORT_FILE)?)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;

    let dir = run_dir.join(PLOT_DIR);
    fs::create_dir_all(&dir)?;
    let mut bundle = PlotBundle::default();
    let two_d = net.output_dim() == 2;

    let points = output_points(&net, &data, &cfg.unsafe_sets)?;
    let mut csv = header('x', net.input_dim())
        .chain(header('y', net.output_dim()))
        .chain(std::iter::once("in_unsafe".to_string()))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for p in &points {
        csv.push_str(&csv_row(p.input.iter().chain(p.output.iter()).copied()));
        csv.push_str(if p.in_unsafe { ",1\n" } else { ",0\n" });
    }
    bundle.csv.push(write_file(&dir, "outputs.csv", &csv)?);

    let mut loss = String::from("iteration,objective_loss,max_constraint_loss\n");
    for r in &records {
        let con = r
            .max_constraint_loss
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(loss, "{},{},{}", r.iteration, r.objective_loss, con);
    }
    bundle.csv.push(write_file(&dir, "loss.csv", &loss)?);

    if two_d {
        let r = compute_reach(&net, &cfg)?;
        let piece_outlines: Vec<Vec<[f64; 2]>> = r
            .pieces
            .iter()
            .map(|p| outline(&p.set, OUTLINE_DIRECTIONS))
            .collect::<Result<_>>()?;
        let unsafe_outlines: Vec<Vec<[f64; 2]>> = cfg
            .unsafe_sets
            .iter()
            .map(|u| outline(u, OUTLINE_DIRECTIONS))
            .collect::<Result<_>>()?;
        bundle.csv.push(write_file(
            &dir,
            "pieces.csv",
            &outline_csv("piece", &piece_outlines),
        )?);
        bundle.csv.push(write_file(
            &dir,
            "unsafe.csv",
            &outline_csv("set", &unsafe_outlines),
        )?);
        bundle.svg.push(write_file(
            &dir,
            "outputs.svg",
            &outputs_svg(&points, &piece_outlines, &unsafe_outlines),
        )?);
        bundle
            .svg
            .push(write_file(&dir, "loss.svg", &loss_svg(&records))?);
    }
    Ok(bundle)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, contents)?;
    Ok(p)
}

fn outline_csv(key: &str, outlines: &[Vec<[f64; 2]>]) -> String {
    let mut s = format!("{key},vertex,x,y\n");
    for (i, poly) in outlines.iter().enumerate() {
        for (k, p) in poly.iter().enumerate() {
            let _ = writeln!(s, "{i},{k},{},{}", p[0], p[1]);
        }
    }
    s
}

struct Frame {
    lo: [f64; 2],
    hi: [f64; 2],
    size: f64,
    pad: f64,
}

impl Frame {
    fn around<'a>(pts: impl Iterator<Item = &'a [f64; 2]>, size: f64) -> Frame {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        for k in 0..2 {
            if !lo[k].is_finite() {
                lo[k] = -1.0;
                hi[k] = 1.0;
            }
            if hi[k] - lo[k] < 1e-9 {
                lo[k] -= 0.5;
                hi[k] += 0.5;
            }
        }
        Frame {
            lo,
            hi,
            size,
            pad: 20.0,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let span = self.size - 2.0 * self.pad;
        let x = self.pad + (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * span;
        let y = self.size - self.pad - (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]) * span;
        (x, y)
    }

    fn path(&self, poly: &[[f64; 2]]) -> String {
        let mut d = String::new();
        for (k, p) in poly.iter().enumerate() {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { 'M' } else { 'L' }, x, y);
        }
        d.push('Z');
        d
    }
}

fn svg_open(size: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" \
         version=\"1.1\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Input position mapped to a colour so corresponding inputs and outputs match.
fn input_colour(x: &DVector<f64>, lo: &[f64; 2], hi: &[f64; 2]) -> String {
    let t = |k: usize| {
        let v = x.get(k).copied().unwrap_or(0.0);
        (((v - lo[k]) / (hi[k] - lo[k]).max(1e-12)).clamp(0.0, 1.0) * 255.0).round() as u8
    };
    format!("#{:02x}{:02x}{:02x}", t(0), 64, t(1))
}

fn outputs_svg(
    points: &[OutputPoint],
    pieces: &[Vec<[f64; 2]>],
    unsafe_sets: &[Vec<[f64; 2]>],
) -> String {
    let size = 600.0;
    let outs: Vec<[f64; 2]> = points.iter().map(|p| [p.output[0], p.output[1]]).collect();
    let frame = Frame::around(
        outs.iter()
            .chain(pieces.iter().flatten())
            .chain(unsafe_sets.iter().flatten()),
        size,
    );
    let ins: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [p.input[0], p.input.get(1).copied().unwrap_or(0.0)])
        .collect();
    let in_frame = Frame::around(ins.iter(), size);

    let mut s = svg_open(size);
    for poly in pieces {
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.3\" stroke=\"#3182bd\" stroke-width=\"0.8\"/>",
            frame.path(poly)
        );
    }
    for poly in unsafe_sets {
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            frame.path(poly)
        );
    }
    for (p, q) in points.iter().zip(&outs) {
        let (x, y) = frame.map(*q);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.5\" fill=\"{}\"/>",
            input_colour(&p.input, &in_frame.lo, &in_frame.hi)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn loss_svg(records: &[IterationRecord]) -> String {
    let size = 600.0;
    let obj: Vec<[f64; 2]> = records
        .iter()
        .map(|r| [r.iteration as f64, r.objective_loss.max(1e-300).log10()])
        .collect();
    let con: Vec<[f64; 2]> = records
        .iter()
        .filter_map(|r| r.max_constraint_loss.map(|v| [r.iteration as f64, v]))
        .collect();
    let mut s = svg_open(size);
    for (series, colour) in [(&obj, "#1f77b4"), (&con, "#d62728")] {
        if series.is_empty() {
            continue;
        }
        let frame = Frame::around(series.iter(), size);
        let mut d = String::new();
        for (k, p) in series.iter().enumerate() {
            let (x, y) = frame.map(*p);
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { 'M' } else { 'L' }, x, y);
        }
        let _ = writeln!(
            s,
            "<path d=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            d.trim_end()
        );
    }
    s.push_str("</svg>\n");
    s
}
