//! Output files: condensed graphs, per-epoch traces, evaluation reports, curves and GraphML.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::condense::MatchReport;
use crate::error::{Error, Result};
use crate::eval::{CurvePoint, EvalReport};
use crate::graph::SyntheticGraph;
use crate::linalg::Matrix;

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// On-disk form of a condensed graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondensedFile {
    pub x_prime: Vec<Vec<f64>>,
    pub a_prime: Vec<Vec<f64>>,
    pub y_prime: Vec<usize>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix_of(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Matrix> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Load(format!("{what} rows have unequal lengths")));
    }
    Matrix::from_shape_vec((rows.len(), cols), rows.concat()).map_err(|e| Error::Load(format!("{what}: {e}")))
}

impl CondensedFile {
    pub fn from_graph(g: &SyntheticGraph) -> Self {
        Self {
            x_prime: rows_of(&g.features),
            a_prime: rows_of(&g.adjacency),
            y_prime: g.labels.clone(),
        }
    }

    /// Rebuilds the graph; `num_classes` defaults to one past the largest label.
    pub fn into_graph(self, num_classes: Option<usize>) -> Result<SyntheticGraph> {
        let n = self.y_prime.len();
        if self.x_prime.len() != n || self.a_prime.len() != n {
            return Err(Error::Load(format!(
                "condensed file has {} feature rows and {} adjacency rows for {n} labels",
                self.x_prime.len(),
                self.a_prime.len()
            )));
        }
        let d = self.x_prime.first().map_or(0, Vec::len);
        let features = matrix_of(&self.x_prime, d, "x_prime")?;
        let adjacency = matrix_of(&self.a_prime, n, "a_prime")?;
        let classes = num_classes.unwrap_or_else(|| self.y_prime.iter().max().map_or(0, |m| m + 1));
        if let Some(&bad) = self.y_prime.iter().find(|&&l| l >= classes) {
            return Err(Error::Load(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(SyntheticGraph {
            features,
            adjacency,
            labels: self.y_prime,
            num_classes: classes,
        })
    }
}

pub fn write_condensed(path: impl AsRef<Path>, g: &SyntheticGraph) -> Result<()> {
    write_json(path, &CondensedFile::from_graph(g))
}

pub fn read_condensed(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<SyntheticGraph> {
    read_json::<CondensedFile>(path)?.into_graph(num_classes)
}

pub const TRACE_HEADER: &str = "init,epoch,update,round,distance,averaged_distance,elapsed_ms,linf_delta,mask_churn";

/// Per-epoch trace; absorber epochs get one row per round with the epoch's averaged distance.
pub fn trace_csv(report: &MatchReport) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for e in &report.epochs {
        let update = match e.update {
            crate::condense::UpdateTarget::Features => "features",
            crate::condense::UpdateTarget::Generator => "generator",
        };
        if e.rounds.is_empty() {
            let _ = writeln!(out, "{},{},{update},,{},{},{},,", e.init, e.epoch, e.distance, e.distance, e.elapsed_ms);
        }
        for (r, round) in e.rounds.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{update},{r},{},{},{},{},{}",
                e.init, e.epoch, round.distance, e.distance, e.elapsed_ms, round.linf_delta, round.mask_churn
            );
        }
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, report: &MatchReport) -> Result<()> {
    write_text(path.as_ref(), &trace_csv(report))
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("dataset,method,backbone,condense_seed,eval_seed,test_accuracy,val_accuracy,best_epoch\n");
    for r in &report.runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            report.dataset,
            report.method,
            report.backbone,
            r.condense_seed,
            r.eval_seed,
            r.test_accuracy,
            r.val_accuracy,
            r.best_epoch
        );
    }
    out
}

pub fn write_eval_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    write_text(path.as_ref(), &eval_csv(report))
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("step,init,epoch,test_accuracy\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.step, p.init, p.epoch, p.test_accuracy);
    }
    out
}

pub fn write_curve_csv(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<()> {
    write_text(path.as_ref(), &curve_csv(points))
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize| Error::Load(format!("{}: malformed line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(i + 1));
            }
            Ok(CurvePoint {
                step: f[0].parse().map_err(|_| bad(i + 1))?,
                init: f[1].parse().map_err(|_| bad(i + 1))?,
                epoch: f[2].parse().map_err(|_| bad(i + 1))?,
                test_accuracy: f[3].parse().map_err(|_| bad(i + 1))?,
            })
        })
        .collect()
}

/// Line chart of test accuracy against condensation step.
pub fn curve_svg(points: &[CurvePoint], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    let max_step = points.iter().map(|p| p.step).max().unwrap_or(1).max(1) as f64;
    let x = |s: usize| PAD + (W - 2.0 * PAD) * s as f64 / max_step;
    let y = |a: f64| H - PAD - (H - 2.0 * PAD) * a.clamp(0.0, 1.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape_xml(title));
    let _ = writeln!(
        out,
        r#"<path d="M{PAD} {} V{} H{}" fill="none" stroke="black"/>"#,
        PAD,
        H - PAD,
        W - PAD
    );
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        let _ = writeln!(
            out,
            r##"<line x1="{PAD}" x2="{}" y1="{y0}" y2="{y0}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{a:.1}</text>"##,
            W - PAD,
            PAD - 6.0,
            y(a) + 4.0,
            y0 = y(a)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">test accuracy</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, W - PAD, H - PAD + 16.0, max_step);
    if !points.is_empty() {
        let coords: Vec<String> = points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.step), y(p.test_accuracy)))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            coords.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Undirected weighted GraphML with each node's label.
pub fn graphml(g: &SyntheticGraph) -> String {
    let mut out = String::from(concat!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n",
        "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n",
        "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"int\"/>\n",
        "  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n",
        "  <graph id=\"condensed\" edgedefault=\"undirected\">\n",
    ));
    for (i, l) in g.labels.iter().enumerate() {
        let _ = writeln!(out, "    <node id=\"n{i}\"><data key=\"label\">{l}</data></node>");
    }
    let n = g.num_nodes();
    for i in 0..n {
        for j in i + 1..n {
            let w = g.adjacency[[i, j]];
            if w != 0.0 {
                let _ = writeln!(
                    out,
                    "    <edge source=\"n{i}\" target=\"n{j}\"><data key=\"weight\">{w}</data></edge>"
                );
            }
        }
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

pub fn write_graphml(path: impl AsRef<Path>, g: &SyntheticGraph) -> Result<()> {
    write_text(path.as_ref(), &graphml(g))
}

pub fn write_curve_svg(path: impl AsRef<Path>, points: &[CurvePoint], title: &str) -> Result<()> {
    write_text(path.as_ref(), &curve_svg(points, title))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::{EpochRecord, RoundRecord, UpdateTarget};
    use ndarray::array;

    fn tiny() -> SyntheticGraph {
        SyntheticGraph {
            features: array![[0.5, -1.25], [1.0 / 3.0, 2.0], [0.0, 1e-300]],
            adjacency: array![[0.0, 0.75, 0.0], [0.75, 0.0, 0.6], [0.0, 0.6, 0.0]],
            labels: vec![0, 1, 1],
            num_classes: 2,
        }
    }

    #[test]
    fn condensed_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("condensed.json");
        write_condensed(&path, &tiny()).unwrap();
        assert_eq!(read_condensed(&path, Some(2)).unwrap(), tiny());
        let text = fs::read_to_string(&path).unwrap();
        for key in ["x_prime", "a_prime", "y_prime"] {
            assert!(text.contains(key));
        }
        assert!(read_condensed(&path, Some(1)).is_err());
    }

    #[test]
    fn ragged_condensed_is_rejected() {
        let mut f = CondensedFile::from_graph(&tiny());
        f.x_prime[1].pop();
        assert!(matches!(f.into_graph(None), Err(Error::Load(_))));
    }

    #[test]
    fn trace_rows_per_round() {
        let report = MatchReport {
            epochs: vec![
                EpochRecord {
                    init: 0,
                    epoch: 0,
                    update: UpdateTarget::Features,
                    distance: 1.5,
                    rounds: vec![],
                    elapsed_ms: 2.0,
                },
                EpochRecord {
                    init: 0,
                    epoch: 1,
                    update: UpdateTarget::Generator,
                    distance: 2.0,
                    rounds: vec![
                        RoundRecord { distance: 1.0, linf_delta: 0.1, mask_churn: 0 },
                        RoundRecord { distance: 3.0, linf_delta: 0.2, mask_churn: 4 },
                    ],
                    elapsed_ms: 3.0,
                },
            ],
            passes: 3,
        };
        let csv = trace_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "0,0,features,,1.5,1.5,2,,");
        assert_eq!(lines[3], "0,1,generator,1,3,2,3,0.2,4");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn curve_round_trip_and_svg() {
        let pts: Vec<CurvePoint> = (1..=4)
            .map(|i| CurvePoint { step: i * 10, init: 0, epoch: i * 10 - 1, test_accuracy: 0.2 * i as f64 })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&path, &pts).unwrap();
        assert_eq!(read_curve_csv(&path).unwrap(), pts);
        let svg = curve_svg(&pts, "a < b");
        assert!(svg.starts_with("<svg") && svg.contains("<polyline") && svg.contains("a &lt; b"));
    }

    #[test]
    fn graphml_lists_nonzero_pairs() {
        let xml = graphml(&tiny());
        assert_eq!(xml.matches("<node ").count(), 3);
        assert_eq!(xml.matches("<edge ").count(), 2);
        assert!(xml.contains(r#"source="n1" target="n2"><data key="weight">0.6<"#));
    }
}
