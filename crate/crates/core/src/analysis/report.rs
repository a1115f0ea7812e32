use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::agreement::AgreementMatrix;
use super::alignment::AlignmentReport;
use super::tables::MetricRow;
use crate::domain::{BudgetSet, CorpusCsm, TopicCluster};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_salience, AggregationWeights, WeightScheme};

/// One heatmap row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsmRow {
    pub topic_id: String,
    pub prevalence: f64,
    pub cells: Vec<f64>,
    pub aggregate: f64,
}

/// Rows of a corpus map sorted by aggregate salience (descending), ties by
/// topic id.
pub fn csm_rows(csm: &CorpusCsm, budgets: &BudgetSet, scheme: WeightScheme) -> Result<Vec<CsmRow>> {
    let weights = AggregationWeights::new(scheme, budgets);
    let mut rows = csm
        .entries
        .iter()
        .map(|(topic, row)| {
            Ok(CsmRow {
                topic_id: topic.clone(),
                prevalence: csm.prevalence.get(topic).copied().unwrap_or(0.0),
                cells: budgets
                    .iter()
                    .map(|b| {
                        row.get(&b).copied().ok_or_else(|| {
                            Error::IncompleteInput(format!("{}: no cell ({topic}, {b})", csm.backend_id))
                        })
                    })
                    .collect::<Result<_>>()?,
                aggregate: aggregate_salience(row, &weights)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.aggregate.total_cmp(&a.aggregate).then_with(|| a.topic_id.cmp(&b.topic_id)));
    Ok(rows)
}

pub struct ReportInputs<'a> {
    pub budgets: &'a BudgetSet,
    pub scheme: WeightScheme,
    /// Headline (mean-over-replicates) map of each backend.
    pub csms: &'a [CorpusCsm],
    pub topics: &'a [TopicCluster],
    pub matrices: &'a [AgreementMatrix],
    pub alignment: &'a AlignmentReport,
    pub metrics: &'a [MetricRow],
}

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// File-name-safe form of a backend id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn truncate(s: &str, n: usize) -> String {
    if s.chars().count() <= n {
        s.to_string()
    } else {
        format!("{}…", s.chars().take(n - 1).collect::<String>())
    }
}

/// White → blue ramp over [lo, hi].
fn shade(v: f64, lo: f64, hi: f64) -> String {
    let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let ch = |from: f64, to: f64| (from + (to - from) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(247.0, 8.0), ch(251.0, 69.0), ch(255.0, 148.0))
}

fn ink(v: f64, lo: f64, hi: f64) -> &'static str {
    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    if t > 0.55 {
        "#ffffff"
    } else {
        "#111111"
    }
}

const CELL_W: usize = 64;
const CELL_H: usize = 24;
const LABEL_W: usize = 360;
const HEAD_H: usize = 40;

struct Grid {
    svg: String,
}

impl Grid {
    fn new(title: &str, cols: usize, rows: usize) -> Self {
        let w = LABEL_W + cols * CELL_W + 10;
        let h = HEAD_H + 20 + rows * CELL_H + 10;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(svg, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
        let _ = writeln!(svg, r#"<text x="8" y="16" font-size="13" font-weight="bold">{}</text>"#, escape(title));
        Self { svg }
    }

    fn header(&mut self, col: usize, text: &str) {
        let x = LABEL_W + col * CELL_W + CELL_W / 2;
        let _ = writeln!(self.svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, HEAD_H + 12, escape(text));
    }

    fn label(&mut self, row: usize, text: &str) {
        let y = HEAD_H + 20 + row * CELL_H + CELL_H / 2 + 4;
        let _ = writeln!(self.svg, r#"<text x="8" y="{y}">{}</text>"#, escape(text));
    }

    fn cell(&mut self, row: usize, col: usize, value: Option<f64>, lo: f64, hi: f64) {
        let x = LABEL_W + col * CELL_W;
        let y = HEAD_H + 20 + row * CELL_H;
        let (fill, color, text) = match value {
            Some(v) => (shade(v, lo, hi), ink(v, lo, hi), format!("{v:.2}")),
            None => ("#eeeeee".to_string(), "#777777", "–".to_string()),
        };
        let _ = writeln!(
            self.svg,
            r##"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}" text-anchor="middle" fill="{color}">{text}</text>"##,
            x + CELL_W / 2,
            y + CELL_H / 2 + 4
        );
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn csm_svg(csm: &CorpusCsm, rows: &[CsmRow], inputs: &ReportInputs<'_>) -> String {
    let labels: BTreeMap<&str, &str> = inputs
        .topics
        .iter()
        .map(|t| (t.topic_id.as_str(), t.representative_text.as_str()))
        .collect();
    let budgets: Vec<_> = inputs.budgets.iter().collect();
    let mut g = Grid::new(
        &format!("Content salience map: {} (|D| = {})", csm.backend_id, csm.corpus_size),
        budgets.len() + 1,
        rows.len() + 1,
    );
    g.header(0, "prev.");
    for (j, b) in budgets.iter().enumerate() {
        g.header(j + 1, &b.words().to_string());
    }
    for (i, r) in rows.iter().enumerate() {
        let text = labels.get(r.topic_id.as_str()).copied().unwrap_or("");
        g.label(i, &truncate(&format!("{}  {text}", r.topic_id), 58));
        g.cell(i, 0, Some(r.prevalence), 0.0, 1.0);
        for (j, v) in r.cells.iter().enumerate() {
            g.cell(i, j + 1, Some(*v), 0.0, 1.0);
        }
    }
    let avg = csm.average_row();
    g.label(rows.len(), "average answerability");
    g.cell(rows.len(), 0, None, 0.0, 1.0);
    for (j, b) in budgets.iter().enumerate() {
        g.cell(rows.len(), j + 1, avg.get(b).copied(), 0.0, 1.0);
    }
    g.finish()
}

fn agreement_svg(m: &AgreementMatrix) -> String {
    let values: Vec<f64> = m.cells.iter().flatten().flatten().copied().collect();
    let lo = values.iter().copied().fold(0.0_f64, f64::min);
    let mut g = Grid::new(
        &format!("Claim-level agreement (Krippendorff's alpha), {} words", m.budget.words()),
        m.backend_ids.len(),
        m.backend_ids.len(),
    );
    for (j, b) in m.backend_ids.iter().enumerate() {
        g.header(j, &truncate(b, 10));
    }
    for (i, b) in m.backend_ids.iter().enumerate() {
        g.label(i, b);
        for j in 0..m.backend_ids.len() {
            g.cell(i, j, m.cells[i][j], lo, 1.0);
        }
    }
    g.finish()
}

/// Write the report bundle into `dir`; returns the files written. Nothing
/// is written when validation fails.
pub fn render_reports(dir: &Path, inputs: &ReportInputs<'_>) -> Result<Vec<PathBuf>> {
    if inputs.csms.is_empty() || inputs.csms.iter().any(|c| c.entries.is_empty()) {
        return Err(Error::EmptyTopics("no topic has a salience row to report".into()));
    }
    let budgets: Vec<_> = inputs.budgets.iter().collect();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut summary = String::new();

    let _ = writeln!(summary, "Content salience maps (mean over replicates, aggregate: {})\n", inputs.scheme.name());
    for csm in inputs.csms {
        let rows = csm_rows(csm, inputs.budgets, inputs.scheme)?;
        let mut header = vec!["topic_id".to_string(), "prevalence".to_string()];
        header.extend(budgets.iter().map(|b| b.words().to_string()));
        header.push(format!("agg_{}", inputs.scheme.name()));
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                let mut line = vec![r.topic_id.clone(), num(r.prevalence)];
                line.extend(r.cells.iter().map(|v| num(*v)));
                line.push(num(r.aggregate));
                line
            })
            .collect();
        let stem = file_stem(&csm.backend_id);
        files.push((format!("csm_{stem}.csv"), csv_bytes(&header, &table)?));
        files.push((format!("csm_{stem}.svg"), csm_svg(csm, &rows, inputs).into_bytes()));

        let _ = writeln!(summary, "[{}]  |D| = {}", csm.backend_id, csm.corpus_size);
        let _ = write!(summary, "  {:<8} {:>6}", "topic", "prev");
        for b in &budgets {
            let _ = write!(summary, " {:>6}", b.words());
        }
        let _ = writeln!(summary, " {:>6}", "agg");
        for r in &rows {
            let _ = write!(summary, "  {:<8} {:>6.2}", r.topic_id, r.prevalence);
            for v in &r.cells {
                let _ = write!(summary, " {v:>6.2}");
            }
            let _ = writeln!(summary, " {:>6.2}", r.aggregate);
        }
        let avg = csm.average_row();
        let _ = write!(summary, "  {:<8} {:>6}", "average", "");
        for b in &budgets {
            let _ = write!(summary, " {:>6.2}", avg.get(b).copied().unwrap_or(f64::NAN));
        }
        let _ = writeln!(summary, "\n");
    }

    if !inputs.matrices.is_empty() {
        let _ = writeln!(summary, "Claim-level agreement (Krippendorff's alpha; diagonal = self-agreement)\n");
    }
    for m in inputs.matrices {
        let mut header = vec!["backend".to_string()];
        header.extend(m.backend_ids.iter().cloned());
        let table: Vec<Vec<String>> = m
            .backend_ids
            .iter()
            .enumerate()
            .map(|(i, b)| std::iter::once(b.clone()).chain(m.cells[i].iter().map(|v| opt(*v))).collect())
            .collect();
        let w = m.budget.words();
        files.push((format!("agreement_{w}.csv"), csv_bytes(&header, &table)?));
        files.push((format!("agreement_{w}.svg"), agreement_svg(m).into_bytes()));
        let _ = writeln!(summary, "  {w} words");
        for (i, b) in m.backend_ids.iter().enumerate() {
            let cells: Vec<String> = m.cells[i].iter().map(|v| v.map_or("  –  ".into(), |x| format!("{x:.3}"))).collect();
            let _ = writeln!(summary, "    {b:<16} {}", cells.join("  "));
        }
    }
    if !inputs.matrices.is_empty() {
        summary.push('\n');
    }

    let header: Vec<String> = [
        "measure", "dataset", "backend", "against", "rho", "p_value", "stars", "n", "pairs", "undefined_pairs", "test",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let table: Vec<Vec<String>> = inputs
        .alignment
        .rows
        .iter()
        .map(|r| {
            vec![
                r.measure.name().to_string(),
                r.dataset.clone(),
                r.backend.clone(),
                r.against.clone(),
                opt(r.rho),
                r.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default(),
                r.stars().to_string(),
                r.n.to_string(),
                r.pairs.to_string(),
                r.undefined_pairs.to_string(),
                "spearman two-sided, harmonic-mean p".to_string(),
            ]
        })
        .collect();
    files.push(("alignment.csv".into(), csv_bytes(&header, &table)?));
    let _ = writeln!(summary, "Salience alignment (averaged pairwise Spearman rho; two-sided p combined by harmonic mean)\n");
    if inputs.alignment.rows.is_empty() {
        let _ = writeln!(summary, "  no rows (missing perceived or human ratings)");
    }
    for r in &inputs.alignment.rows {
        let rho = r.rho.map_or("undefined".to_string(), |v| format!("{v:.3}{}", r.stars()));
        let against = if r.against.is_empty() { String::new() } else { format!(" vs {}", r.against) };
        let _ = writeln!(summary, "  {:<22} {}{against}: rho = {rho} (n = {})", r.measure.name(), r.backend, r.n);
    }
    summary.push('\n');

    let header: Vec<String> = ["metric", "backend", "budget", "replicate", "pair", "value", "n", "p_value", "flags"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let table: Vec<Vec<String>> = inputs
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.metric.clone(),
                m.backend.clone(),
                m.budget.map(|b| b.to_string()).unwrap_or_default(),
                m.replicate.map(|r| r.to_string()).unwrap_or_default(),
                m.pair.clone().unwrap_or_default(),
                opt(m.value),
                m.n.to_string(),
                m.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default(),
                m.flags.clone(),
            ]
        })
        .collect();
    files.push(("metrics.csv".into(), csv_bytes(&header, &table)?));
    let _ = writeln!(summary, "Length compliance and incremental consistency\n");
    for m in inputs
        .metrics
        .iter()
        .filter(|m| m.metric == "tlr_median" || m.metric == "incremental_consistency")
    {
        let at = m.replicate.map(|r| format!(" r{r}")).unwrap_or_default();
        let _ = writeln!(summary, "  {:<24} {}{at}: {}", m.metric, m.backend, opt(m.value));
    }
    files.push(("summary.txt".into(), summary.into_bytes()));

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
