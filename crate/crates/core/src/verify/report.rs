//! CSV tables and SVG line charts of score reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{GhrError, Result};
use crate::format::write_bytes;

use super::score::{ScoreReport, METRICS};

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub variable: String,
    pub lead_hours: u32,
    pub metric: String,
    pub value: f64,
    pub count: usize,
}

pub fn parse_scores_csv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| GhrError::invalid(format!("score CSV line {}: {e}", i + 2)))?;
        let field = |k: usize| {
            rec.get(k).ok_or_else(|| {
                GhrError::invalid(format!("score CSV line {}: too few columns", i + 2))
            })
        };
        let bad = |what: &str| GhrError::invalid(format!("score CSV line {}: bad {what}", i + 2));
        rows.push(ScoreRow {
            variable: field(0)?.to_string(),
            lead_hours: field(1)?.parse().map_err(|_| bad("lead_hours"))?,
            metric: field(2)?.to_string(),
            value: field(3)?.parse().map_err(|_| bad("value"))?,
            count: field(4)?.parse().map_err(|_| bad("count"))?,
        });
    }
    Ok(rows)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| GhrError::io(path, e))?;
    parse_scores_csv(&text)
}

/// All series in one table, prefixed by a `series` column.
pub fn comparison_csv(reports: &[ScoreReport]) -> String {
    let mut s = String::from("series,variable,lead_hours,metric,value,count\n");
    for r in reports {
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(s, "{},{line}", r.series);
        }
    }
    s
}

const COLORS: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f",
];

/// One panel per variable, lead time on the x-axis, one polyline per series.
pub fn metric_svg(metric: &str, reports: &[ScoreReport]) -> String {
    let variables = &reports[0].variables;
    let leads: Vec<u32> = reports.iter().flat_map(|r| r.leads()).collect();
    let max_lead = leads.iter().copied().max().unwrap_or(1).max(1) as f64;
    let (pw, ph, cols) = (260.0, 180.0, 4usize);
    let rows = variables.len().div_ceil(cols);
    let (width, height) = (cols as f64 * pw, rows as f64 * ph + 30.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">"#
    );
    for (i, r) in reports.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="16" fill="{}">{}</text>"#,
            10.0 + 120.0 * i as f64,
            COLORS[i % COLORS.len()],
            r.series
        );
    }
    for (c, var) in variables.iter().enumerate() {
        let (x0, y0) = ((c % cols) as f64 * pw, 30.0 + (c / cols) as f64 * ph);
        let (left, top, w, h) = (x0 + 40.0, y0 + 18.0, pw - 55.0, ph - 45.0);
        let values: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.scores.iter().filter(move |((ch, _), _)| *ch == c))
            .filter_map(|(_, sc)| sc.metric(metric).map(|(v, _)| v))
            .filter(|v| v.is_finite())
            .collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        };
        let _ = writeln!(s, r#"<g class="panel" data-variable="{var}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="{}">{metric} {var}</text>"#,
            y0 + 12.0
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#,
            left - 3.0,
            top + 8.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#,
            left - 3.0,
            top + h
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{max_lead} h</text>"#,
            left + w,
            top + h + 12.0
        );
        for (i, r) in reports.iter().enumerate() {
            let pts: Vec<String> = r
                .scores
                .iter()
                .filter(|((ch, _), _)| *ch == c)
                .filter_map(|(&(_, lead), sc)| {
                    let v = sc.metric(metric)?.0;
                    v.is_finite().then(|| {
                        let x = left + w * lead as f64 / max_lead;
                        let y = top + h * (1.0 - (v - lo) / (hi - lo));
                        format!("{x:.2},{y:.2}")
                    })
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline data-series="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                r.series,
                COLORS[i % COLORS.len()],
                pts.join(" ")
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `scores_{series}.csv` per series, `comparison.csv`, and one
/// `{metric}.svg` per metric. Nothing is written for an empty report set.
pub fn emit_report(dir: &Path, reports: &[ScoreReport]) -> Result<Vec<PathBuf>> {
    if reports.is_empty() || reports.iter().any(|r| r.scores.is_empty()) {
        return Err(GhrError::invalid("no scores to report"));
    }
    if reports.iter().any(|r| r.variables != reports[0].variables) {
        return Err(GhrError::invalid("reports cover different variables"));
    }
    let mut files: Vec<(PathBuf, String)> = reports
        .iter()
        .map(|r| (dir.join(format!("scores_{}.csv", r.series)), r.to_csv()))
        .collect();
    files.push((dir.join("comparison.csv"), comparison_csv(reports)));
    for m in METRICS {
        files.push((dir.join(format!("{m}.svg")), metric_svg(m, reports)));
    }
    for (path, body) in &files {
        write_bytes(path, body.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::verify::score::LeadScores;

    fn report(series: &str) -> ScoreReport {
        let mut scores = BTreeMap::new();
        for c in 0..2 {
            for lead in [6, 12, 18] {
                let x = lead as f64 / 7.0 + c as f64;
                scores.insert(
                    (c, lead),
                    LeadScores {
                        rmse: x,
                        acc: 1.0 / x,
                        bias: -x / 3.0,
                        activity: x.sqrt(),
                        count: 5,
                        acc_skipped: 1,
                    },
                );
            }
        }
        ScoreReport {
            series: series.into(),
            variables: vec!["z500".into(), "t2m".into()],
            grid: (4, 8),
            period: None,
            scores,
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let r = report("model");
        let rows = parse_scores_csv(&r.to_csv()).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 4);
        for row in rows {
            let (v, n) = r
                .get(&row.variable, row.lead_hours)
                .unwrap()
                .metric(&row.metric)
                .unwrap();
            assert_eq!(row.value.to_bits(), v.to_bits());
            assert_eq!(row.count, n);
        }
    }

    #[test]
    fn svg_has_a_polyline_per_series_and_panel() {
        let reports = [
            report("model"),
            report("persistence"),
            report("climatology"),
        ];
        let svg = metric_svg("rmse", &reports);
        assert_eq!(svg.matches("<polyline").count(), 3 * 2);
        assert_eq!(svg.matches("<g class=\"panel\"").count(), 2);
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(dir.path(), &[]).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
        let files = emit_report(dir.path(), &[report("model")]).unwrap();
        assert_eq!(files.len(), 1 + 1 + 4);
    }
}
