//! Run artifacts: the trajectory CSV and three SVG diagnostics.
//!
//! CSV columns, in order:
//! `t, x, y, z, psi, u, w, r, ed, ez, eo, ed_hat, ez_hat, eo_hat, rho_norm,
//! clearance, n_discovered, solver_status, solve_ms`. Numbers use the
//! shortest decimal that parses back to the same `f64`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fhocp::SolverStatus;
use crate::scenario::Scenario;
use crate::sim::{LogRecord, SimLog};
use crate::vehicle::{BodyVelocity, VehicleState};
use crate::Vec3;

pub const CSV_HEADER: [&str; 19] = [
    "t",
    "x",
    "y",
    "z",
    "psi",
    "u",
    "w",
    "r",
    "ed",
    "ez",
    "eo",
    "ed_hat",
    "ez_hat",
    "eo_hat",
    "rho_norm",
    "clearance",
    "n_discovered",
    "solver_status",
    "solve_ms",
];

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.into(),
        source,
    }
}

/// Shortest round-trip decimal; exponent form for very small or large magnitudes.
fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn record_fields(r: &LogRecord) -> Vec<String> {
    let s = &r.state;
    let nums = [
        r.t,
        s.x,
        s.y,
        s.z,
        s.psi,
        r.input.u,
        r.input.w,
        r.input.r,
        r.error[0],
        r.error[1],
        r.error[2],
        r.nominal[0],
        r.nominal[1],
        r.nominal[2],
        r.rho_norm,
        r.clearance,
    ];
    let mut out: Vec<String> = nums.iter().map(|&x| fmt_num(x)).collect();
    out.push(r.n_discovered.to_string());
    out.push(r.status.as_str().to_string());
    out.push(fmt_num(r.solve_ms));
    out
}

pub fn write_csv<W: std::io::Write>(log: &SimLog, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in &log.records {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(log: &SimLog, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(log, std::io::BufWriter::new(file)).map_err(|e| csv_err(path, e))
}

/// Parses a trajectory CSV. Controller statistics are not stored in the
/// file and come back as defaults.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<SimLog> {
    let mut rd = csv::Reader::from_reader(reader);
    let header = rd.headers().map_err(|e| csv_err(Path::new("<csv>"), e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::config(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut log = SimLog::default();
    for (line, row) in rd.records().enumerate() {
        let row = row.map_err(|e| csv_err(Path::new("<csv>"), e))?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| {
                Error::config(format!(
                    "row {}, column {}: {:?}: {e}",
                    line + 1,
                    CSV_HEADER[i],
                    &row[i]
                ))
            })
        };
        let n_discovered = row[16]
            .parse::<usize>()
            .map_err(|e| Error::config(format!("row {}, n_discovered: {e}", line + 1)))?;
        log.records.push(LogRecord {
            t: num(0)?,
            state: VehicleState {
                x: num(1)?,
                y: num(2)?,
                z: num(3)?,
                psi: num(4)?,
            },
            input: BodyVelocity::new(num(5)?, num(6)?, num(7)?),
            error: Vec3::new(num(8)?, num(9)?, num(10)?),
            nominal: Vec3::new(num(11)?, num(12)?, num(13)?),
            rho_norm: num(14)?,
            clearance: num(15)?,
            n_discovered,
            status: row[17].parse::<SolverStatus>()?,
            solve_ms: num(18)?,
        });
    }
    if log.records.last().is_some_and(|r| r.status == SolverStatus::Aborted) {
        log.abort_reason = Some("aborted record at the end of the log".into());
    }
    Ok(log)
}

pub fn read_csv_file(path: &Path) -> Result<SimLog> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        Error::Csv { source, .. } => csv_err(path, source),
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// What the plots can show beyond the log itself.
#[derive(Debug, Clone, Default)]
pub struct PlotContext {
    pub epsilon: Option<f64>,
    pub input_bounds: Option<[f64; 3]>,
    /// `(center, radius)` of each obstacle.
    pub obstacles: Vec<(Vec3, f64)>,
    pub sensing_radius: Option<f64>,
    /// Reference positions sampled over the run.
    pub reference: Vec<Vec3>,
}

impl PlotContext {
    pub fn from_scenario(s: &Scenario) -> Self {
        let n = (s.steps.max(1) * 4).min(4000);
        let duration = s.file.duration;
        PlotContext {
            epsilon: Some(s.error_set.epsilon),
            input_bounds: Some(s.input_box.bounds()),
            obstacles: s.workspace.obstacles.iter().map(|o| (o.center, o.radius)).collect(),
            sensing_radius: Some(s.workspace.sensing_radius),
            reference: (0..=n)
                .map(|i| s.reference.position(duration * i as f64 / n as f64))
                .collect(),
        }
    }
}

const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

struct Frame {
    width: f64,
    height: f64,
    left: f64,
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(width: f64, height: f64, x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if !(lo.is_finite() && hi.is_finite()) {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame {
            width,
            height,
            left: 70.0,
            top: 30.0,
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - self.left - 20.0)
    }

    fn py(&self, y: f64) -> f64 {
        self.height - 40.0 - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - self.top - 40.0)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str) {
        let (x0, x1, y0, y1) = (
            self.px(self.x.0),
            self.px(self.x.1),
            self.py(self.y.0),
            self.py(self.y.1),
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{x0:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y0 - y1
        );
        let _ = writeln!(svg, r#"<text x="{x0:.1}" y="20" font-size="14">{title}</text>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            0.5 * (x0 + x1),
            self.height - 8.0
        );
        for (v, anchor, x, y) in [(self.x.0, "start", x0, y0 + 15.0), (self.x.1, "end", x1, y0 + 15.0)] {
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{y:.1}" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#
            );
        }
        for (v, y) in [(self.y.0, y0), (self.y.1, y1)] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.3}</text>"#,
                x0 - 4.0,
                y + 4.0
            );
        }
    }

    fn polyline(&self, svg: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str, dashed: bool) {
        let mut d = String::new();
        for (x, y) in pts {
            if x.is_finite() && y.is_finite() {
                let _ = write!(d, "{:.2},{:.2} ", self.px(x), self.py(y));
            }
        }
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}"{dash}/>"#,
            d.trim_end()
        );
    }

    fn hline(&self, svg: &mut String, y: f64, color: &str) {
        self.polyline(svg, [(self.x.0, y), (self.x.1, y)].into_iter(), color, true);
    }

    fn circle(&self, svg: &mut String, c: (f64, f64), r: f64, color: &str, dashed: bool) {
        let n = 96;
        let pts = (0..=n).map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            (c.0 + r * a.cos(), c.1 + r * a.sin())
        });
        self.polyline(svg, pts, color, dashed);
    }

    fn legend(&self, svg: &mut String, names: &[&str]) {
        for (i, name) in names.iter().enumerate() {
            let x = self.width - 20.0 - 80.0 * (names.len() - i) as f64;
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="20" font-size="12" fill="{}">{name}</text>"#,
                COLORS[i % COLORS.len()]
            );
        }
    }
}

fn open_svg(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn time_series(log: &SimLog, title: &str, names: &[&str], series: &[fn(&LogRecord) -> f64], levels: &[f64]) -> String {
    let (w, h) = (900.0, 360.0);
    let t = range(log.records.iter().map(|r| r.t));
    let y = range(
        log.records
            .iter()
            .flat_map(|r| series.iter().map(move |f| f(r)))
            .chain(levels.iter().copied()),
    );
    let frame = Frame::new(w, h, t, y);
    let mut svg = open_svg(w, h);
    frame.axes(&mut svg, title, "t [s]");
    for &level in levels {
        frame.hline(&mut svg, level, "#777777");
    }
    for (i, f) in series.iter().enumerate() {
        frame.polyline(
            &mut svg,
            log.records.iter().map(|r| (r.t, f(r))),
            COLORS[i % COLORS.len()],
            false,
        );
    }
    frame.legend(&mut svg, names);
    svg.push_str("</svg>\n");
    svg
}

pub fn errors_svg(log: &SimLog, ctx: &PlotContext) -> String {
    let levels: Vec<f64> = ctx.epsilon.into_iter().collect();
    time_series(
        log,
        "tracking errors (dashed: epsilon)",
        &["e_d", "e_z", "e_o"],
        &[|r| r.error[0], |r| r.error[1], |r| r.error[2]],
        &levels,
    )
}

pub fn inputs_svg(log: &SimLog, ctx: &PlotContext) -> String {
    let levels: Vec<f64> = ctx
        .input_bounds
        .map(|b| b.iter().flat_map(|&x| [x, -x]).collect())
        .unwrap_or_default();
    time_series(
        log,
        "inputs (dashed: bounds)",
        &["u", "w", "r"],
        &[|r| r.input.u, |r| r.input.w, |r| r.input.r],
        &levels,
    )
}

pub fn path_svg(log: &SimLog, ctx: &PlotContext) -> String {
    let mut xs: Vec<f64> = log.records.iter().map(|r| r.state.x).collect();
    let mut ys: Vec<f64> = log.records.iter().map(|r| r.state.y).collect();
    xs.extend(ctx.reference.iter().map(|p| p[0]));
    ys.extend(ctx.reference.iter().map(|p| p[1]));
    for (c, r) in &ctx.obstacles {
        xs.extend([c[0] - r, c[0] + r]);
        ys.extend([c[1] - r, c[1] + r]);
    }
    let (mut x, mut y) = (range(xs.into_iter()), range(ys.into_iter()));
    if !x.0.is_finite() {
        x = (-1.0, 1.0);
        y = (-1.0, 1.0);
    }
    // equal aspect
    let span = (x.1 - x.0).max(y.1 - y.0).max(1e-9) * 0.55;
    let (cx, cy) = (0.5 * (x.0 + x.1), 0.5 * (y.0 + y.1));
    let side = 640.0;
    let frame = Frame::new(side + 90.0, side + 70.0, (cx - span, cx + span), (cy - span, cy + span));
    let mut svg = open_svg(side + 90.0, side + 70.0);
    frame.axes(&mut svg, "path, top view (dashed: reference)", "x [m]");
    frame.polyline(&mut svg, ctx.reference.iter().map(|p| (p[0], p[1])), "#777777", true);
    for (c, r) in &ctx.obstacles {
        frame.circle(&mut svg, (c[0], c[1]), *r, "black", false);
    }
    frame.polyline(
        &mut svg,
        log.records.iter().map(|r| (r.state.x, r.state.y)),
        COLORS[0],
        false,
    );
    if let (Some(last), Some(rs)) = (log.records.last(), ctx.sensing_radius) {
        frame.circle(&mut svg, (last.state.x, last.state.y), rs, COLORS[2], true);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `trajectory.csv`, `errors.svg`, `inputs.svg` and `path.svg` into
/// `out_dir`, creating it if needed. Returns the written paths.
pub fn emit_outputs(log: &SimLog, ctx: &PlotContext, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("trajectory.csv");
    write_csv_file(log, &csv)?;
    let mut written = vec![csv];
    written.extend(emit_plots(log, ctx, out_dir)?);
    Ok(written)
}

/// The three SVG files only.
pub fn emit_plots(log: &SimLog, ctx: &PlotContext, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, svg) in [
        ("errors.svg", errors_svg(log, ctx)),
        ("inputs.svg", inputs_svg(log, ctx)),
        ("path.svg", path_svg(log, ctx)),
    ] {
        let path = out_dir.join(name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
