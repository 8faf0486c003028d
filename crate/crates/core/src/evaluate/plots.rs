//! Static SVG figures, each written next to the CSV it was drawn from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvaluationReport, ImportanceRow};
use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>
<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
"#,
            W / 2.0,
            escape(title),
            H - MARGIN,
            W - MARGIN,
            H - MARGIN,
            H - MARGIN,
            W / 2.0,
            H - 12.0,
            escape(x_label),
            H / 2.0,
            H / 2.0,
            escape(y_label),
        );
        Self { body }
    }

    /// Maps unit-square coordinates to pixels.
    fn px(x: f64, y: f64) -> (f64, f64) {
        (MARGIN + x * (W - 2.0 * MARGIN), H - MARGIN - y * (H - 2.0 * MARGIN))
    }

    fn polyline(&mut self, pts: &[(f64, f64)], colour: &str, dashed: bool) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (a, b) = Self::px(x, y);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, colour: &str) {
        let (a, b) = Self::px(x0, y1);
        let (c, d) = Self::px(x1, y0);
        let _ = writeln!(
            self.body,
            r#"<rect x="{a:.2}" y="{b:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
            c - a,
            d - b
        );
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str) {
        let (a, b) = Self::px(x, y);
        let _ = writeln!(
            self.body,
            r#"<text x="{a:.2}" y="{b:.2}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    fn ticks(&mut self) {
        for k in 0..=4 {
            let v = f64::from(k) / 4.0;
            self.text(v, -0.05, &format!("{v:.2}"), "middle");
            self.text(-0.02, v - 0.01, &format!("{v:.2}"), "end");
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per report: `model,threshold,auc,precision,recall,f1,n`.
pub fn write_table2(path: &Path, reports: &[EvaluationReport]) -> Result<()> {
    write_csv(
        path,
        &["model", "threshold", "auc", "precision", "recall", "f1", "n"],
        reports.iter().map(|r| {
            vec![
                r.model.clone(),
                r.threshold.to_string(),
                r.auc.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.n.to_string(),
            ]
        }),
    )
}

/// ROC and calibration curves for every report; score histogram and
/// confusion matrix for `primary`; the importance bar chart. Returns the
/// written paths.
pub fn write_plots(
    dir: &Path,
    reports: &[EvaluationReport],
    primary: &EvaluationReport,
    importance: &[ImportanceRow],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    write_csv(
        &out("roc.csv"),
        &["model", "fpr", "tpr"],
        reports.iter().flat_map(|r| {
            r.roc_points
                .iter()
                .map(|(x, y)| vec![r.model.clone(), x.to_string(), y.to_string()])
        }),
    )?;
    let mut roc = Canvas::new("ROC", "false positive rate", "true positive rate");
    roc.ticks();
    roc.polyline(&[(0.0, 0.0), (1.0, 1.0)], "#999999", true);
    for (k, r) in reports.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        roc.polyline(&r.roc_points, colour, false);
        roc.text(
            0.55,
            0.05 + 0.07 * k as f64,
            &format!("{} (AUC {:.3})", r.model, r.auc),
            "start",
        );
    }
    write_file(&out("roc.svg"), &roc.finish())?;

    write_csv(
        &out("calibration.csv"),
        &["model", "bin_lo", "bin_hi", "mean_predicted", "actual_rate", "count"],
        reports.iter().flat_map(|r| {
            r.calibration_bins.iter().map(|b| {
                vec![
                    r.model.clone(),
                    b.bin_lo.to_string(),
                    b.bin_hi.to_string(),
                    opt(b.mean_predicted),
                    opt(b.actual_rate),
                    b.count.to_string(),
                ]
            })
        }),
    )?;
    let mut cal = Canvas::new("Calibration", "mean predicted probability", "observed positive rate");
    cal.ticks();
    cal.polyline(&[(0.0, 0.0), (1.0, 1.0)], "#999999", true);
    for (k, r) in reports.iter().enumerate() {
        let pts: Vec<(f64, f64)> = r
            .calibration_bins
            .iter()
            .filter_map(|b| Some((b.mean_predicted?, b.actual_rate?)))
            .collect();
        cal.polyline(&pts, COLOURS[k % COLOURS.len()], false);
        cal.text(0.05, 0.95 - 0.07 * k as f64, &r.model, "start");
    }
    write_file(&out("calibration.svg"), &cal.finish())?;

    write_csv(
        &out("score_histogram.csv"),
        &["bin_lo", "bin_hi", "count"],
        primary
            .score_histogram
            .iter()
            .map(|b| vec![b.bin_lo.to_string(), b.bin_hi.to_string(), b.count.to_string()]),
    )?;
    let mut hist = Canvas::new("Predicted probabilities", "score", "share of rows");
    hist.ticks();
    let total = primary.score_histogram.iter().map(|b| b.count).sum::<usize>().max(1) as f64;
    let tallest = primary
        .score_histogram
        .iter()
        .map(|b| b.count)
        .max()
        .unwrap_or(0)
        .max(1) as f64
        / total;
    for b in &primary.score_histogram {
        let h = b.count as f64 / total / tallest;
        hist.rect(b.bin_lo, 0.0, b.bin_hi, h, COLOURS[0]);
    }
    write_file(&out("score_histogram.svg"), &hist.finish())?;

    let c = primary.confusion;
    write_csv(
        &out("confusion.csv"),
        &["actual", "predicted_positive", "predicted_negative"],
        [
            vec!["positive".into(), c.tp.to_string(), c.fn_.to_string()],
            vec!["negative".into(), c.fp.to_string(), c.tn.to_string()],
        ],
    )?;
    let mut conf = Canvas::new(
        &format!("Confusion matrix at threshold {:.2}", primary.threshold),
        "predicted",
        "actual",
    );
    let max = [c.tp, c.fp, c.tn, c.fn_].into_iter().max().unwrap_or(0).max(1) as f64;
    for (x, y, v, label) in [
        (0.0, 0.5, c.tp, "TP"),
        (0.5, 0.5, c.fn_, "FN"),
        (0.0, 0.0, c.fp, "FP"),
        (0.5, 0.0, c.tn, "TN"),
    ] {
        let shade = 255 - (v as f64 / max * 180.0) as u8;
        conf.rect(x, y, x + 0.5, y + 0.5, &format!("#{shade:02x}{shade:02x}ff"));
        conf.text(x + 0.25, y + 0.25, &format!("{label} {v}"), "middle");
    }
    conf.text(0.25, -0.05, "positive", "middle");
    conf.text(0.75, -0.05, "negative", "middle");
    write_file(&out("confusion.svg"), &conf.finish())?;

    write_csv(
        &out("importance.csv"),
        &["rank", "feature", "importance"],
        importance
            .iter()
            .map(|r| vec![r.rank.to_string(), r.feature.clone(), r.importance.to_string()]),
    )?;
    let mut imp = Canvas::new("Feature importance", "normalised gain", "");
    let n = importance.len().max(1) as f64;
    let top = importance.first().map_or(1.0, |r| r.importance.max(1e-12));
    for (k, r) in importance.iter().enumerate() {
        let y1 = 1.0 - k as f64 / n;
        let y0 = y1 - 0.8 / n;
        imp.rect(0.3, y0, 0.3 + 0.65 * r.importance / top, y1, COLOURS[0]);
        imp.text(0.29, y0 + 0.2 / n, &r.feature, "end");
        imp.text(
            0.31 + 0.65 * r.importance / top,
            y0 + 0.2 / n,
            &format!("{:.3}", r.importance),
            "start",
        );
    }
    write_file(&out("importance.svg"), &imp.finish())?;

    Ok(written)
}
