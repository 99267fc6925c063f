//! Run manifests and the files that cite them.
//!
//! Every artifact carries the manifest hash: metric and figure tables in
//! their first column, report lines as a field, SVGs in a comment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(CliError::io(path))?))
}

/// Everything that determines a run's outputs. The output directory and
/// worker count are deliberately absent: they do not change results.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema: u32,
    pub kind: String,
    pub name: String,
    pub master_seed: u64,
    pub config: serde_json::Value,
    /// How each stochastic quantity's stream is derived.
    pub seed_paths: BTreeMap<String, String>,
    /// Digests of input files.
    pub inputs: BTreeMap<String, String>,
    pub versions: BTreeMap<String, String>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(kind: &str, name: &str, master_seed: u64, config: serde_json::Value) -> Self {
        let versions = BTreeMap::from([
            ("gshf-core".to_string(), gshf_core::VERSION.to_string()),
            ("gshf-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        Self {
            schema: 1,
            kind: kind.into(),
            name: name.into(),
            master_seed,
            config,
            seed_paths: BTreeMap::new(),
            inputs: BTreeMap::new(),
            versions,
            files: Vec::new(),
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    /// Writes `manifest.json` into `dir` and returns the hash.
    pub fn write(&self, dir: &Path) -> CliResult<String> {
        let hash = self.hash();
        #[derive(Serialize)]
        struct Stamped<'a> {
            manifest_hash: &'a str,
            #[serde(flatten)]
            manifest: &'a Manifest,
        }
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&Stamped { manifest_hash: &hash, manifest: self })
            .expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::io(&path))?;
        Ok(hash)
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

/// CSV writer with one header row derived from the record type.
pub struct TableWriter {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl TableWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(CliError::io(path))?;
        Ok(Self { path: path.to_path_buf(), inner: csv::Writer::from_writer(BufWriter::new(file)) })
    }

    pub fn row<T: Serialize>(&mut self, record: &T) -> CliResult<()> {
        self.inner.serialize(record).map_err(|e| CliError::Runtime(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(CliError::io(&self.path))
    }
}

/// One JSON object per line.
pub struct JsonLines {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> CliResult<Self> {
        let file = File::create(path).map_err(CliError::io(path))?;
        Ok(Self { path: path.to_path_buf(), inner: BufWriter::new(file) })
    }

    pub fn line<T: Serialize>(&mut self, value: &T) -> CliResult<()> {
        serde_json::to_writer(&mut self.inner, value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.inner.write_all(b"\n").map_err(CliError::io(&self.path))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(CliError::io(&self.path))
    }
}

/// Minimal SVG plotting: line charts and heat maps, nothing more.
pub mod svg {
    use std::fmt::Write;

    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

    pub struct Series {
        pub label: String,
        pub points: Vec<(f64, f64)>,
    }

    fn header(out: &mut String, width: f64, height: f64, hash: &str, title: &str) {
        writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#)
            .unwrap();
        writeln!(out, "<!-- manifest_hash: {hash} -->").unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(out, r#"<text x="{}" y="20" font-size="14" text-anchor="middle" font-family="sans-serif">{title}</text>"#, width / 2.0)
            .unwrap();
    }

    fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            return (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    }

    pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool, hash: &str) -> String {
        let tx = |x: f64| if log_x { x.max(1e-300).log10() } else { x };
        let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| tx(p.0))));
        let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let px = |x: f64| PAD + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let mut out = String::new();
        header(&mut out, W, H, hash, title);
        writeln!(out, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * PAD, H - 2.0 * PAD)
            .unwrap();
        let axis = |v: f64| if log_x { format!("1e{v:.1}") } else { format!("{v:.3}") };
        writeln!(out, r#"<text x="{PAD}" y="{}" font-size="10" font-family="sans-serif">{}</text>"#, H - PAD + 14.0, axis(x0)).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{}</text>"#, W - PAD, H - PAD + 14.0, axis(x1))
            .unwrap();
        writeln!(out, r#"<text x="{}" y="{PAD}" font-size="10" text-anchor="end" font-family="sans-serif">{y1:.3}</text>"#, PAD - 4.0).unwrap();
        writeln!(out, r#"<text x="{}" y="{}" font-size="10" text-anchor="end" font-family="sans-serif">{y0:.3}</text>"#, PAD - 4.0, H - PAD)
            .unwrap();
        writeln!(out, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{x_label}</text>"#, W / 2.0, H - 10.0)
            .unwrap();
        writeln!(out, r#"<text x="14" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {})">{y_label}</text>"#, H / 2.0, H / 2.0)
            .unwrap();
        for (i, s) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
            for &(x, y) in &s.points {
                writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y)).unwrap();
            }
            writeln!(out, r#"<text x="{}" y="{}" font-size="11" fill="{color}" font-family="sans-serif">{}</text>"#, W - PAD + 4.0, PAD + 14.0 * (i as f64 + 1.0), s.label)
                .unwrap();
        }
        out.push_str("</svg>\n");
        out
    }

    /// Side-by-side heat maps of `n×n` grids (row-major, `values[i*n + j]`).
    pub fn heat_maps(title: &str, panels: &[(String, Vec<f64>)], n: usize, hash: &str) -> String {
        let cell = 3.0;
        let side = cell * n as f64;
        let width = PAD + panels.len() as f64 * (side + 16.0);
        let height = side + 70.0;
        let mut out = String::new();
        header(&mut out, width, height, hash, title);
        for (k, (label, values)) in panels.iter().enumerate() {
            let ox = PAD / 2.0 + k as f64 * (side + 16.0);
            let oy = 40.0;
            let max = values.iter().cloned().fold(0.0, f64::max).max(1e-300);
            writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle" font-family="sans-serif">{label}</text>"#, ox + side / 2.0, oy + side + 16.0)
                .unwrap();
            for i in 0..n {
                for j in 0..n {
                    let v = values[i * n + j] / max;
                    if v < 1e-3 {
                        continue;
                    }
                    let shade = (255.0 * (1.0 - v)).round() as u8;
                    // First grid axis runs left to right, second bottom to top.
                    writeln!(out, r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)"/>"#, ox + i as f64 * cell, oy + (n - 1 - j) as f64 * cell)
                        .unwrap();
                }
            }
            writeln!(out, r#"<rect x="{ox}" y="{oy}" width="{side}" height="{side}" fill="none" stroke="black"/>"#).unwrap();
        }
        out.push_str("</svg>\n");
        out
    }
}
