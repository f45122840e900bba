use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::run::{Cell, SweepResult, SweepSummary};
use super::scenario::{Procedure, ScenarioConfig, SweepParameter};
use crate::error::{Error, Result};

pub fn config_hash(cfg: &ScenarioConfig) -> String {
    Sha256::digest(cfg.to_json().as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub files: Vec<String>,
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_results_csv<W: std::io::Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "sweep", "procedure", "sweep_value", "metric", "mean", "se", "reps", "partial"])?;
    for c in &result.cells {
        for (metric, mean, se) in
            [("fcr", c.fcr_mean, c.fcr_se), ("selection_frequency", c.selection_mean, c.selection_se)]
        {
            w.write_record([
                result.scenario.as_str(),
                &c.sweep,
                c.procedure.name(),
                &c.point.value.to_string(),
                metric,
                &mean.to_string(),
                &se.to_string(),
                &c.reps.to_string(),
                &c.partial.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<results csv>", e))
}

pub fn write_replications_csv<W: std::io::Write>(result: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "sweep",
        "sweep_value",
        "epsilon",
        "n",
        "alpha",
        "rep",
        "procedure",
        "sample_fcr",
        "selection_frequency",
        "n_selected",
        "level",
        "error",
    ])?;
    for r in &result.records {
        let p = &r.point;
        let lead = [
            result.scenario.clone(),
            r.sweep.clone(),
            p.value.to_string(),
            p.epsilon.to_string(),
            p.n.to_string(),
            p.alpha.to_string(),
            r.rep.to_string(),
        ];
        if let Some(err) = &r.error {
            let mut row = lead.to_vec();
            row.extend(["".into(), "".into(), "".into(), "".into(), "".into(), err.clone()]);
            w.write_record(&row)?;
            continue;
        }
        for o in &r.outcomes {
            let mut row = lead.to_vec();
            row.extend([
                o.procedure.name().to_string(),
                o.sample_fcr.to_string(),
                o.selection_frequency.to_string(),
                o.n_selected.to_string(),
                o.level.map(|l| l.to_string()).unwrap_or_default(),
                String::new(),
            ]);
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<replications csv>", e))
}

fn color(p: Procedure) -> &'static str {
    match p {
        Procedure::Oracle => "#000000",
        Procedure::PlugIn => "#d62728",
        Procedure::BootParam => "#1f77b4",
        Procedure::BootNonParam => "#2ca02c",
        Procedure::FixedBaseline => "#9467bd",
    }
}

struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, xticks: &[f64]) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(svg, r##"<rect x="{l}" y="{t}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{title}</text>"#,
            l + w / 2.0,
            t - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#,
            l + w / 2.0,
            t + h + 34.0
        );
        for &x in xticks {
            let px = self.px(x);
            let _ = writeln!(
                svg,
                r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#444"/>"##,
                t + h,
                t + h + 4.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{px:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                t + h + 16.0,
                fmt_tick(x)
            );
        }
        for k in 0..=4 {
            let y = self.y.0 + (self.y.1 - self.y.0) * k as f64 / 4.0;
            let py = self.py(y);
            let _ = writeln!(svg, r##"<line x1="{}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="#444"/>"##, l - 4.0);
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-size="10">{}</text>"#,
                l - 6.0,
                py + 3.0,
                fmt_tick(y)
            );
        }
    }

    fn polyline(&self, svg: &mut String, pts: &[(f64, f64)], stroke: &str, extra: &str) {
        let coords: Vec<String> = pts
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        if coords.is_empty() {
            return;
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"{extra}/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (x, y) = c.split_once(',').unwrap();
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{stroke}"/>"#);
        }
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Two-panel line chart: FCR with the nominal level as a dashed reference, and
/// selection frequency.
pub fn sweep_svg(scenario: &str, sweep: &SweepSummary, cells: &[&Cell]) -> String {
    let xs: Vec<f64> = sweep.points.iter().map(|p| p.value).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(x1 > x0) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let alpha_max = sweep.points.iter().map(|p| p.alpha).fold(0.0, f64::max);
    let fcr_max = cells.iter().map(|c| c.fcr_mean).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let y_top = (fcr_max.max(alpha_max) * 1.2).max(0.05);
    let fcr = Panel { left: 70.0, top: 60.0, width: 360.0, height: 260.0, x: (x0, x1), y: (0.0, y_top) };
    let sel = Panel { left: 520.0, top: 60.0, width: 360.0, height: 260.0, x: (x0, x1), y: (0.0, 1.0) };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="920" height="400" viewBox="0 0 920 400">"#);
    let _ = writeln!(svg, r#"<rect width="920" height="400" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<text x="460" y="22" text-anchor="middle" font-size="15">{scenario}: {}</text>"#, sweep.label);
    let xlabel = sweep.parameter.name();
    fcr.axes(&mut svg, "FCR", xlabel, &xs);
    sel.axes(&mut svg, "selection frequency", xlabel, &xs);

    let reference: Vec<(f64, f64)> = match sweep.parameter {
        SweepParameter::Alpha => sweep.points.iter().map(|p| (p.value, p.alpha)).collect(),
        _ => vec![(x0, alpha_max), (x1, alpha_max)],
    };
    let coords: Vec<String> = reference.iter().map(|&(x, y)| format!("{:.2},{:.2}", fcr.px(x), fcr.py(y))).collect();
    let _ = writeln!(
        svg,
        r##"<polyline class="reference" points="{}" fill="none" stroke="#888" stroke-dasharray="6,4"/>"##,
        coords.join(" ")
    );

    let mut procedures: Vec<Procedure> = Vec::new();
    for c in cells {
        if !procedures.contains(&c.procedure) {
            procedures.push(c.procedure);
        }
    }
    for (k, &p) in procedures.iter().enumerate() {
        let mine: Vec<&&Cell> = cells.iter().filter(|c| c.procedure == p).collect();
        let f: Vec<(f64, f64)> = mine.iter().map(|c| (c.point.value, c.fcr_mean)).collect();
        let s: Vec<(f64, f64)> = mine.iter().map(|c| (c.point.value, c.selection_mean)).collect();
        let attr = format!(r#" class="series" data-procedure="{}""#, p.name());
        fcr.polyline(&mut svg, &f, color(p), &attr);
        sel.polyline(&mut svg, &s, color(p), &attr);
        let lx = 70.0 + 160.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="370" x2="{}" y2="370" stroke="{}" stroke-width="3"/>"#,
            lx + 20.0,
            color(p)
        );
        let _ = writeln!(svg, r#"<text x="{}" y="374" font-size="12">{}</text>"#, lx + 26.0, p.name());
    }
    svg.push_str("</svg>\n");
    svg
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `results.csv`, `replications.csv`, one SVG per sweep and
/// `manifest.json` into `out_dir` (created if needed). Returns the paths written.
pub fn emit_outputs(result: &SweepResult, seed: u64, config_hash: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let path = out_dir.join("results.csv");
    write_results_csv(result, create(&path)?)?;
    written.push(path);

    let path = out_dir.join("replications.csv");
    write_replications_csv(result, create(&path)?)?;
    written.push(path);

    for (s, sweep) in result.sweeps.iter().enumerate() {
        let cells: Vec<&Cell> = result.cells.iter().filter(|c| c.sweep_index == s).collect();
        let path = out_dir.join(format!("{}_{}.svg", file_stem(&result.scenario), file_stem(&sweep.label)));
        std::fs::write(&path, sweep_svg(&result.scenario, sweep, &cells)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let manifest = Manifest {
        scenario: result.scenario.clone(),
        seed,
        config_hash: config_hash.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        files: written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect(),
    };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
