//! Per-leaf CSV report, annotation comparison and mask-directory evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::{dice, dice_loss, mask_iou};
use crate::raster::BinaryMask;

pub const CSV_HEADER: [&str; 5] = [
    "leaf_id",
    "best_frame",
    "leaf_area_px",
    "damage_area_px",
    "damage_ratio_pct",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{context}: {message}")]
    Schema { context: String, message: String },
    #[error("{path}: {message}")]
    Mask { path: PathBuf, message: String },
}

impl ReportError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One CSV row. Area and ratio fields are `None` when no leaf was found in
/// the selected ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub leaf_id: u64,
    pub best_frame: usize,
    pub leaf_area_px: Option<usize>,
    pub damage_area_px: Option<usize>,
    pub ratio_pct: Option<f64>,
}

impl LeafReport {
    pub fn measured(
        leaf_id: u64,
        best_frame: usize,
        leaf_area: usize,
        damage_area: usize,
        ratio: f64,
    ) -> Self {
        Self {
            leaf_id,
            best_frame,
            leaf_area_px: Some(leaf_area),
            damage_area_px: Some(damage_area),
            ratio_pct: Some(ratio),
        }
    }

    pub fn no_leaf(leaf_id: u64, best_frame: usize) -> Self {
        Self {
            leaf_id,
            best_frame,
            leaf_area_px: None,
            damage_area_px: None,
            ratio_pct: None,
        }
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the report rows sorted by leaf id.
pub fn write_csv_to<W: Write>(reports: &[LeafReport], out: W) -> Result<(), ReportError> {
    let mut rows: Vec<&LeafReport> = reports.iter().collect();
    rows.sort_by_key(|r| (r.leaf_id, r.best_frame));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.leaf_id.to_string(),
            r.best_frame.to_string(),
            opt(r.leaf_area_px),
            opt(r.damage_area_px),
            r.ratio_pct.map(|v| format!("{v:.2}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_csv(reports: &[LeafReport], path: &Path) -> Result<(), ReportError> {
    let file = fs::File::create(path).map_err(|e| ReportError::io(path, e))?;
    write_csv_to(reports, io::BufWriter::new(file))
}

pub fn csv_string(reports: &[LeafReport]) -> String {
    let mut buf = Vec::new();
    write_csv_to(reports, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    name: &str,
    line: u64,
) -> Result<Option<T>, ReportError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| ReportError::Schema {
        context: format!("line {line}"),
        message: format!("bad {name} value {raw:?}"),
    })
}

fn required<T: std::str::FromStr>(raw: &str, name: &str, line: u64) -> Result<T, ReportError> {
    parse_field(raw, name, line)?.ok_or_else(|| ReportError::Schema {
        context: format!("line {line}"),
        message: format!("missing {name}"),
    })
}

/// Parses a report CSV with the standard header.
pub fn read_csv_from<R: Read>(input: R) -> Result<Vec<LeafReport>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(ReportError::Schema {
            context: "header".into(),
            message: format!("expected {}", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(LeafReport {
            leaf_id: required(&rec[0], "leaf_id", line)?,
            best_frame: required(&rec[1], "best_frame", line)?,
            leaf_area_px: parse_field(&rec[2], "leaf_area_px", line)?,
            damage_area_px: parse_field(&rec[3], "damage_area_px", line)?,
            ratio_pct: parse_field(&rec[4], "damage_ratio_pct", line)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<LeafReport>, ReportError> {
    let file = fs::File::open(path).map_err(|e| ReportError::io(path, e))?;
    read_csv_from(io::BufReader::new(file)).map_err(|e| match e {
        ReportError::Schema { context, message } => ReportError::Schema {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

/// Difference between a pipeline ratio and a manual one for the same leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafDifference {
    pub leaf_id: u64,
    pub pd_ratio_pct: Option<f64>,
    pub ma_ratio_pct: Option<f64>,
    /// |pd - ma| in percentage points.
    pub abs_diff_pp: Option<f64>,
    /// |pd - ma| / ma in percent.
    pub rel_diff_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Side {
    Pipeline,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub rows: Vec<LeafDifference>,
    pub unmatched: Vec<(Side, u64)>,
    pub mean_abs_diff_pp: Option<f64>,
    pub mean_rel_diff_pct: Option<f64>,
}

pub fn relative_difference(pd: f64, ma: f64) -> Option<f64> {
    let d = (pd - ma).abs();
    if ma != 0.0 {
        Some(100.0 * d / ma.abs())
    } else if d == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Joins two reports on leaf id. Ids present on one side only go to
/// `unmatched` and are left out of the means, as are rows with an empty ratio.
pub fn compare_annotations(pd: &[LeafReport], ma: &[LeafReport]) -> Comparison {
    let pd_map: BTreeMap<u64, Option<f64>> = pd.iter().map(|r| (r.leaf_id, r.ratio_pct)).collect();
    let ma_map: BTreeMap<u64, Option<f64>> = ma.iter().map(|r| (r.leaf_id, r.ratio_pct)).collect();
    let mut cmp = Comparison::default();
    for (&id, &p) in &pd_map {
        let Some(&m) = ma_map.get(&id) else {
            cmp.unmatched.push((Side::Pipeline, id));
            continue;
        };
        let (abs, rel) = match (p, m) {
            (Some(p), Some(m)) => (Some((p - m).abs()), relative_difference(p, m)),
            _ => (None, None),
        };
        cmp.rows.push(LeafDifference {
            leaf_id: id,
            pd_ratio_pct: p,
            ma_ratio_pct: m,
            abs_diff_pp: abs,
            rel_diff_pct: rel,
        });
    }
    cmp.unmatched.extend(
        ma_map
            .keys()
            .filter(|id| !pd_map.contains_key(id))
            .map(|&id| (Side::Manual, id)),
    );
    cmp.mean_abs_diff_pp = mean(cmp.rows.iter().filter_map(|r| r.abs_diff_pp));
    cmp.mean_rel_diff_pct = mean(cmp.rows.iter().filter_map(|r| r.rel_diff_pct));
    cmp
}

fn fmt2(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_default()
}

impl Comparison {
    /// Tab-separated table: per-leaf rows, aggregate lines, unmatched ids.
    pub fn to_tsv(&self) -> String {
        let mut s =
            String::from("leaf_id\tpd_ratio_pct\tma_ratio_pct\tabs_diff_pp\trel_diff_pct\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.leaf_id,
                fmt2(r.pd_ratio_pct),
                fmt2(r.ma_ratio_pct),
                fmt2(r.abs_diff_pp),
                fmt2(r.rel_diff_pct)
            );
        }
        let _ = writeln!(
            s,
            "mean\t\t\t{}\t{}",
            fmt2(self.mean_abs_diff_pp),
            fmt2(self.mean_rel_diff_pct)
        );
        if !self.unmatched.is_empty() {
            s.push_str("\nunmatched_leaf_id\tpresent_in\n");
            for (side, id) in &self.unmatched {
                let which = match side {
                    Side::Pipeline => "pipeline",
                    Side::Manual => "manual",
                };
                let _ = writeln!(s, "{id}\t{which}");
            }
        }
        s
    }
}

/// Scores of one predicted mask against its reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskScore {
    pub name: String,
    pub iou: f64,
    pub dice: f64,
    pub dice_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskEvaluation {
    pub scores: Vec<MaskScore>,
    /// Reference masks with no prediction of the same name.
    pub missing: Vec<String>,
}

fn png_names(dir: &Path) -> Result<Vec<String>, ReportError> {
    let entries = fs::read_dir(dir).map_err(|e| ReportError::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| ReportError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && crate::ingest::is_frame_file(&path) {
            if let Some(n) = path.file_name().and_then(|n| n.to_str()) {
                names.push(n.to_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn load_mask(path: &Path) -> Result<BinaryMask, ReportError> {
    let img = image::open(path).map_err(|e| ReportError::Mask {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(BinaryMask::from_luma(&img.to_luma8()))
}

/// Pairs same-named images in two directories and scores each pair.
pub fn evaluate_mask_dirs(pred: &Path, truth: &Path) -> Result<MaskEvaluation, ReportError> {
    let pred_names = png_names(pred)?;
    let mut eval = MaskEvaluation::default();
    for name in png_names(truth)? {
        if pred_names.binary_search(&name).is_err() {
            eval.missing.push(name);
            continue;
        }
        let p = load_mask(&pred.join(&name))?;
        let t = load_mask(&truth.join(&name))?;
        let mismatch = |_| ReportError::Mask {
            path: pred.join(&name),
            message: format!(
                "size {}x{} differs from reference {}x{}",
                p.width(),
                p.height(),
                t.width(),
                t.height()
            ),
        };
        eval.scores.push(MaskScore {
            iou: mask_iou::<f64>(&p, &t).map_err(mismatch)?,
            dice: dice::<f64>(&p, &t).map_err(mismatch)?,
            dice_loss: dice_loss::<f64>(&p, &t).map_err(mismatch)?,
            name,
        });
    }
    Ok(eval)
}

impl MaskEvaluation {
    pub fn mean_iou(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.iou))
    }

    pub fn mean_dice(&self) -> Option<f64> {
        mean(self.scores.iter().map(|s| s.dice))
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("image\tiou\tdice\tdice_loss\n");
        for r in &self.scores {
            let _ = writeln!(
                s,
                "{}\t{:.4}\t{:.4}\t{:.4}",
                r.name, r.iou, r.dice, r.dice_loss
            );
        }
        let f4 = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        let mean_loss = mean(self.scores.iter().map(|s| s.dice_loss));
        let _ = writeln!(
            s,
            "mean\t{}\t{}\t{}",
            f4(self.mean_iou()),
            f4(self.mean_dice()),
            f4(mean_loss)
        );
        s
    }
}
