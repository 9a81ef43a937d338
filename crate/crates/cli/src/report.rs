//! Methods × {PSNR, SSIM} × acceleration comparison table.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use ssrecon::dataio::dataset::{ensure_writable, read_json};
use ssrecon::dataio::metrics::error_map;
use ssrecon::dataio::rten::{self, DType};
use ssrecon::kspace::apply_at;
use ssrecon::model::reconstruct_image;
use ssrecon::{Checkpoint, Dataset};

use crate::commands::EvalReport;
use crate::settings::resolve;
use crate::{CliError, ReportArgs};

/// Columns always shown, matching the usual 4× / 8× comparison.
const STANDARD_ACCELS: [f64; 2] = [4.0, 8.0];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Report {
    #[serde(default)]
    inputs: Vec<PathBuf>,
    csv: Option<PathBuf>,
    text: Option<PathBuf>,
    error_maps: Option<PathBuf>,
    #[serde(default)]
    force: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub psnr: f64,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub method: String,
    /// Parallel to [`Table::accels`].
    pub cells: Vec<Option<Cell>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub accels: Vec<f64>,
    pub rows: Vec<Row>,
}

fn sample_ids(r: &EvalReport) -> BTreeSet<&str> {
    r.branches
        .iter()
        .flat_map(|b| b.samples.iter().map(|s| s.id.as_str()))
        .collect()
}

fn method_name(r: &EvalReport, branch: usize) -> String {
    if r.branches.len() > 1 {
        format!("{} (branch {branch})", r.label)
    } else {
        r.label.clone()
    }
}

fn accel_key(a: f64) -> String {
    format!("x{}", fmt_num(a))
}

fn fmt_num(a: f64) -> String {
    if a.fract() == 0.0 {
        format!("{}", a as i64)
    } else {
        format!("{a}")
    }
}

/// Builds the table. Inputs must cover the same sample ids. A method label
/// fills one row across accelerations; a repeated (method, accel) pair
/// starts a new row.
pub fn build_table(reports: &[(PathBuf, EvalReport)]) -> Result<Table, CliError> {
    let Some((first_path, first)) = reports.first() else {
        return Err(CliError::Usage("report needs at least one evaluation JSON".into()));
    };
    let ids = sample_ids(first);
    for (path, r) in &reports[1..] {
        if sample_ids(r) != ids {
            return Err(CliError::Runtime(format!(
                "{} and {} cover different sample ids",
                first_path.display(),
                path.display()
            )));
        }
    }
    let mut accels: Vec<f64> = STANDARD_ACCELS.to_vec();
    for (_, r) in reports {
        if !accels.contains(&r.accel) {
            accels.push(r.accel);
        }
    }
    accels.sort_by(f64::total_cmp);
    let col = |a: f64| accels.iter().position(|&x| x == a).expect("accel collected");

    let mut rows: Vec<Row> = Vec::new();
    let mut place = |method: String, accel: f64, cell: Cell| {
        let c = col(accel);
        match rows.iter_mut().find(|r| r.method == method && r.cells[c].is_none()) {
            Some(row) => row.cells[c] = Some(cell),
            None => {
                let mut cells = vec![None; accels.len()];
                cells[c] = Some(cell);
                rows.push(Row { method, cells });
            }
        }
    };
    let mut zero_filled_done = BTreeSet::new();
    for (_, r) in reports {
        if zero_filled_done.insert(accel_key(r.accel)) {
            place(
                "Zero-filled".into(),
                r.accel,
                Cell {
                    psnr: r.zero_filled.mean_psnr,
                    ssim: r.zero_filled.mean_ssim,
                },
            );
        }
    }
    for (_, r) in reports {
        for b in &r.branches {
            place(
                method_name(r, b.branch),
                r.accel,
                Cell {
                    psnr: b.mean_psnr,
                    ssim: b.mean_ssim,
                },
            );
        }
    }
    Ok(Table { accels, rows })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.digits$}"))
}

pub fn render_text(t: &Table) -> String {
    let width = t.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for a in &t.accels {
        let _ = write!(out, " | {:>9} {:>8}", format!("{} PSNR", accel_key(*a)), "SSIM");
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + t.accels.len() * 21));
    out.push('\n');
    for r in &t.rows {
        let _ = write!(out, "{:<width$}", r.method);
        for c in &r.cells {
            let (p, s) = match c {
                Some(c) => (format!("{:.3}", c.psnr), opt(c.ssim, 4)),
                None => ("-".into(), "-".into()),
            };
            let _ = write!(out, " | {p:>9} {s:>8}");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(t: &Table, path: &Path) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["method".to_string()];
    for a in &t.accels {
        header.push(format!("psnr_{}", accel_key(*a)));
        header.push(format!("ssim_{}", accel_key(*a)));
    }
    w.write_record(&header).map_err(err)?;
    for r in &t.rows {
        let mut rec = vec![r.method.clone()];
        for c in &r.cells {
            rec.push(c.as_ref().map_or(String::new(), |c| format!("{}", c.psnr)));
            rec.push(c.as_ref().and_then(|c| c.ssim).map_or(String::new(), |v| format!("{v}")));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_map(path: &Path, map: &ssrecon::Tensor, force: bool) -> Result<(), CliError> {
    ensure_writable(path, force)?;
    rten::write_tensor(path, map, DType::F64)?;
    Ok(())
}

/// Per-sample `|recon − reference|` maps under `dir/<method>_x<accel>/`.
fn write_error_maps(reports: &[(PathBuf, EvalReport)], dir: &Path, force: bool) -> Result<usize, CliError> {
    let mut written = 0;
    let mut zero_filled_done = BTreeSet::new();
    for (_, r) in reports {
        let ds = Dataset::load(&r.dataset)?;
        let ck = Checkpoint::load(&r.checkpoint)?;
        let zf_dir = dir.join(format!("zero_filled_{}", accel_key(r.accel)));
        let do_zf = zero_filled_done.insert(zf_dir.clone());
        for b in &r.branches {
            let params = ck.branch(b.branch - 1)?;
            let out = dir.join(format!("{}_{}", slug(&method_name(r, b.branch)), accel_key(r.accel)));
            fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
            for s in &ds.samples {
                let Some(gt) = &s.image else { continue };
                let recon = reconstruct_image(&s.kspace, s.mask(), params)?.magnitude()?;
                write_map(&out.join(format!("{}.rten", s.id)), &error_map(gt, &recon)?, force)?;
                written += 1;
            }
        }
        if do_zf {
            fs::create_dir_all(&zf_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", zf_dir.display())))?;
            for s in &ds.samples {
                let Some(gt) = &s.image else { continue };
                let zf = apply_at(&s.kspace, s.mask())?.magnitude()?;
                write_map(&zf_dir.join(format!("{}.rten", s.id)), &error_map(gt, &zf)?, force)?;
                written += 1;
            }
        }
    }
    Ok(written)
}

pub fn run(args: ReportArgs) -> Result<(), CliError> {
    let s: Report = resolve(&args, args.config.as_deref())?;
    let reports = s
        .inputs
        .iter()
        .map(|p| Ok((p.clone(), read_json::<EvalReport>(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let table = build_table(&reports)?;
    let text = render_text(&table);
    print!("{text}");
    if let Some(path) = &s.text {
        ensure_writable(path, s.force)?;
        fs::write(path, &text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &s.csv {
        ensure_writable(path, s.force)?;
        write_csv(&table, path)?;
    }
    if let Some(dir) = &s.error_maps {
        let n = write_error_maps(&reports, dir, s.force)?;
        eprintln!("wrote {n} error maps to {}", dir.display());
    }
    Ok(())
}
