//! Run reports: gated metrics and their emission as JSON, CSV, and a
//! markdown summary with a stable field order and floats at 12 significant
//! digits.
//!
//! The JSON report embeds the wall-clock time and is therefore not byte
//! stable across runs; the CSV metrics table, the markdown summary, and all
//! data artifacts contain only seeded numeric content and are byte identical
//! for a fixed (config, seed) on the same build.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;

/// How a metric value is compared against its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    /// Pass iff |value - target| <= tolerance.
    Within,
    /// Pass iff value <= target.
    AtMost,
    /// Pass iff value >= target.
    AtLeast,
    /// Informational; always passes.
    Report,
}

impl GateMode {
    fn name(self) -> &'static str {
        match self {
            GateMode::Within => "within",
            GateMode::AtMost => "at-most",
            GateMode::AtLeast => "at-least",
            GateMode::Report => "report",
        }
    }
}

/// One named result with its gate and the routine that produced it.
#[derive(Debug, Clone)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub mode: GateMode,
    pub pass: bool,
    pub source: String,
}

impl Metric {
    /// Gate |value - target| <= tolerance.
    pub fn within(name: &str, source: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance,
            mode: GateMode::Within,
            pass: (value - target).abs() <= tolerance,
            source: source.into(),
        }
    }

    /// Gate value <= target.
    pub fn at_most(name: &str, source: &str, value: f64, target: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance: 0.0,
            mode: GateMode::AtMost,
            pass: value <= target,
            source: source.into(),
        }
    }

    /// Gate value >= target.
    pub fn at_least(name: &str, source: &str, value: f64, target: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tolerance: 0.0,
            mode: GateMode::AtLeast,
            pass: value >= target,
            source: source.into(),
        }
    }

    /// Ungated informational value.
    pub fn report(name: &str, source: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: f64::NAN,
            tolerance: f64::NAN,
            mode: GateMode::Report,
            pass: true,
            source: source.into(),
        }
    }
}

/// Complete record of one experiment run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub metrics: Vec<Metric>,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<String>,
}

impl RunReport {
    /// True iff every gated metric passed.
    pub fn all_pass(&self) -> bool {
        self.metrics.iter().all(|m| m.pass)
    }
}

/// Emission formats of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    MarkdownSummary,
}

/// Formats a float at 12 significant digits; non-finite values keep their
/// debug spelling (they never appear in valid reports, only in diagnostics).
pub fn sig12(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

/// JSON number at 12 significant digits; non-finite becomes null.
fn json_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        "null".into()
    }
}

fn json_str(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn json_report(report: &RunReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"kind\": {},", json_str(c.kind.name()));
    out.push_str("  \"config\": {\n");
    let _ = writeln!(out, "    \"seed\": {},", c.seed);
    let _ = writeln!(out, "    \"hurst\": {},", json_num(c.hurst));
    let _ = writeln!(out, "    \"degree\": {},", c.degree);
    let _ = writeln!(out, "    \"grid\": {},", c.grid);
    let _ = writeln!(out, "    \"refinement\": {},", c.refinement);
    let _ = writeln!(out, "    \"samples\": {},", c.samples);
    let _ = writeln!(out, "    \"sigma\": {},", json_str(&c.sigma));
    let _ = writeln!(out, "    \"drift\": {},", json_str(&c.drift));
    let _ = writeln!(out, "    \"kappa\": {},", json_num(c.kappa));
    let _ = writeln!(out, "    \"out\": {}", json_str(&c.out.display().to_string()));
    out.push_str("  },\n");
    out.push_str("  \"metrics\": [");
    for (i, m) in report.metrics.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("\n    {");
        let _ = write!(
            out,
            "\"name\": {}, \"value\": {}, \"target\": {}, \"tolerance\": {}, \
             \"mode\": {}, \"pass\": {}, \"source\": {}",
            json_str(&m.name),
            json_num(m.value),
            json_num(m.target),
            json_num(m.tolerance),
            json_str(m.mode.name()),
            m.pass,
            json_str(&m.source),
        );
        out.push('}');
    }
    if !report.metrics.is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("],\n");
    let _ = writeln!(out, "  \"wall_clock_seconds\": {},", json_num(report.wall_clock_seconds));
    out.push_str("  \"artifacts\": [");
    for (i, a) in report.artifacts.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&json_str(a));
    }
    out.push_str("]\n}\n");
    out
}

fn csv_report(report: &RunReport) -> String {
    let mut out = String::from("name,value,target,tolerance,mode,pass,source\n");
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.name,
            sig12(m.value),
            sig12(m.target),
            sig12(m.tolerance),
            m.mode.name(),
            m.pass,
            m.source
        );
    }
    out
}

fn markdown_report(report: &RunReport) -> String {
    let c = &report.config;
    let mut out = String::new();
    let _ = writeln!(out, "# roughflow {}", c.kind.name());
    out.push('\n');
    let _ = writeln!(
        out,
        "seed {}, hurst {}, degree {}, grid {}, refinement {}, samples {}, \
         sigma {}, drift {}, kappa {}",
        c.seed,
        sig12(c.hurst),
        c.degree,
        c.grid,
        c.refinement,
        c.samples,
        c.sigma,
        c.drift,
        sig12(c.kappa)
    );
    out.push('\n');
    out.push_str("| metric | value | target | tolerance | mode | pass |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    for m in &report.metrics {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            m.name,
            sig12(m.value),
            sig12(m.target),
            sig12(m.tolerance),
            m.mode.name(),
            if m.pass { "pass" } else { "FAIL" }
        );
    }
    if !report.artifacts.is_empty() {
        out.push('\n');
        out.push_str("artifacts: ");
        out.push_str(&report.artifacts.join(", "));
        out.push('\n');
    }
    out
}

/// Writes the report in the requested formats into `dir` and returns the
/// created paths. Formats map to report.json, metrics.csv, and summary.md.
pub fn emit_report(
    report: &RunReport,
    dir: &Path,
    formats: &[Format],
) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            Format::Json => ("report.json", json_report(report)),
            Format::Csv => ("metrics.csv", csv_report(report)),
            Format::MarkdownSummary => ("summary.md", markdown_report(report)),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
