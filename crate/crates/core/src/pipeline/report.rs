use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{artifacts, manifest_path, Manifest, STAGES};
use crate::error::{Error, Result};
use crate::strata::SweepReport;

fn csv_to_markdown(path: &Path) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = String::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        let _ = writeln!(out, "| {} |", cells.join(" | "));
        if i == 0 {
            let _ = writeln!(out, "|{}", " --- |".repeat(cells.len()));
        }
    }
    Ok(out)
}

struct Section {
    title: &'static str,
    file: &'static str,
    stage: &'static str,
}

const SECTIONS: [Section; 3] = [
    Section {
        title: "Classification metrics (test period)",
        file: artifacts::TABLE2,
        stage: "evaluate",
    },
    Section {
        title: "Feature importance (normalised gain)",
        file: artifacts::TABLE3,
        stage: "evaluate",
    },
    Section {
        title: "CAR by price deviation",
        file: artifacts::TABLE4,
        stage: "stratify",
    },
];

/// Markdown summary of an output directory. Missing tables become gap
/// notices; a directory with no tables and no manifests is an error.
pub fn render_report(out_dir: &Path) -> Result<String> {
    let manifests: Vec<Manifest> = STAGES
        .iter()
        .map(|s| manifest_path(out_dir, s))
        .filter(|p| p.is_file())
        .map(|p| Manifest::load(&p))
        .collect::<Result<_>>()?;
    let present: Vec<bool> = SECTIONS.iter().map(|s| out_dir.join(s.file).is_file()).collect();
    if manifests.is_empty() && !present.iter().any(|&p| p) {
        let missing: Vec<String> = STAGES.iter().map(|s| format!("`{s}`")).collect();
        return Err(Error::Validation(format!(
            "empty bundle at {}: no artifacts from stages {}",
            out_dir.display(),
            missing.join(", ")
        )));
    }

    let mut doc = String::from("# Insider purchase pipeline report\n");
    let mut gaps = Vec::new();
    for (s, &ok) in SECTIONS.iter().zip(&present) {
        let _ = write!(doc, "\n## {}\n\n", s.title);
        if ok {
            doc.push_str(&csv_to_markdown(&out_dir.join(s.file))?);
        } else {
            let _ = writeln!(doc, "> Not available: `{}` is missing (stage `{}`).", s.file, s.stage);
            gaps.push(s.file);
        }
        if s.file == artifacts::TABLE4 && ok {
            let sweep_path = out_dir.join(artifacts::TABLE4).with_extension("json");
            if let Ok(text) = std::fs::read_to_string(&sweep_path) {
                let sweep: SweepReport = serde_json::from_str(&text)?;
                doc.push_str(&sweep_notes(&sweep));
            }
        }
    }

    doc.push_str("\n## Provenance\n\n");
    let done: Vec<&str> = manifests.iter().map(|m| m.stage.as_str()).collect();
    let not_run: Vec<&str> = STAGES.iter().copied().filter(|s| !done.contains(s)).collect();
    if !not_run.is_empty() {
        let _ = writeln!(doc, "> Stages without a manifest: {}.\n", not_run.join(", "));
    }
    if !manifests.is_empty() {
        doc.push_str("| stage | artifact | sha256 | bytes |\n| --- | --- | --- | --- |\n");
        for m in &manifests {
            for f in &m.outputs {
                let _ = writeln!(
                    doc,
                    "| {} | `{}` | `{}` | {} |",
                    m.stage,
                    f.path,
                    &f.sha256[..16],
                    f.bytes
                );
            }
        }
    }
    if !gaps.is_empty() {
        tracing::warn!(missing = ?gaps, "report is incomplete");
    }
    Ok(doc)
}

fn sweep_notes(sweep: &SweepReport) -> String {
    let mut s = String::new();
    for t in &sweep.tables {
        let test = match &t.extreme_test {
            Some(w) => format!("Welch t = {:.3}, p = {:.3e}, df = {:.1}", w.t_stat, w.p_value, w.dof),
            None => "extreme-bucket test undefined".to_string(),
        };
        let _ = write!(
            s,
            "\n- Horizon {}: {} events, {} skipped; top vs bottom bucket {}.",
            t.horizon,
            t.n_events,
            t.skipped.len(),
            test
        );
    }
    if let Some(r) = &sweep.regime {
        let n = |b: &[crate::strata::BucketStats]| b.iter().map(|x| x.n).sum::<usize>();
        let _ = write!(
            s,
            "\n- Regime split at {} (horizon {}): {} low, {} high, {} unassigned.",
            r.cutoff,
            r.horizon,
            n(&r.low),
            n(&r.high),
            r.unassigned.len()
        );
    }
    s.push('\n');
    s
}

pub fn write_report(out_dir: &Path) -> Result<PathBuf> {
    let text = render_report(out_dir)?;
    let path = out_dir.join(artifacts::REPORT);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
