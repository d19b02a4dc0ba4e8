//! On-disk dataset directory:
//!
//! ```text
//! meta.json     {"n": N, "d": d, "c": C}
//! features.bin  little-endian f32, row-major, N*d values   (or features.csv)
//! edges.csv     "src,dst" per line, 0-based, optional header
//! labels.csv    one integer per line, optional header
//! splits.json   {"train": [...], "val": [...], "test": [...]}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Graph, Splits};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub n: usize,
    pub d: usize,
    pub c: usize,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::Load(format!("missing file {}", path.display())));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn is_header(line: &str) -> bool {
    line.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
}

pub fn load_graph(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Load(format!("{} is not a directory", dir.display())));
    }
    let meta: Meta = serde_json::from_str(&read_text(&dir.join("meta.json"))?)
        .map_err(|e| Error::Load(format!("meta.json: {e}")))?;

    let features = load_features(dir, meta)?;
    let edges = load_edges(&dir.join("edges.csv"))?;
    let labels = load_labels(&dir.join("labels.csv"))?;
    if labels.len() != meta.n {
        return Err(Error::Load(format!(
            "labels.csv has {} entries but meta.json declares n = {}",
            labels.len(),
            meta.n
        )));
    }
    let splits: Splits = serde_json::from_str(&read_text(&dir.join("splits.json"))?)
        .map_err(|e| Error::Load(format!("splits.json: {e}")))?;

    Graph::from_edges(meta.n, &edges, features, labels, meta.c, splits)
}

fn load_features(dir: &Path, meta: Meta) -> Result<Matrix> {
    let bin = dir.join("features.bin");
    let values: Vec<f64> = if bin.exists() {
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != meta.n * meta.d * 4 {
            return Err(Error::Load(format!(
                "features.bin holds {} bytes, expected {} for {}x{} f32",
                bytes.len(),
                meta.n * meta.d * 4,
                meta.n,
                meta.d
            )));
        }
        bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect()
    } else {
        let csv = dir.join("features.csv");
        let text = read_text(&csv)?;
        let mut values = Vec::with_capacity(meta.n * meta.d);
        let mut rows = 0;
        for (line_no, line) in data_lines(&text) {
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Load(format!("features.csv:{line_no}: bad number {field:?}"))
                })?;
                values.push(v);
            }
            if values.len() - before != meta.d {
                return Err(Error::Load(format!(
                    "features.csv:{line_no}: {} columns, expected d = {}",
                    values.len() - before,
                    meta.d
                )));
            }
            rows += 1;
        }
        if rows != meta.n {
            return Err(Error::Load(format!(
                "features.csv has {rows} rows, expected n = {}",
                meta.n
            )));
        }
        values
    };
    Ok(Matrix::from_shape_vec((meta.n, meta.d), values).expect("length checked"))
}

fn load_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&text) {
        if edges.is_empty() && is_header(line) {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Load(format!("edges.csv:{line_no}: expected `src,dst`")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Load(format!("edges.csv:{line_no}: bad node id {s:?}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    let mut labels = Vec::new();
    for (line_no, line) in data_lines(&text) {
        if labels.is_empty() && is_header(line) {
            continue;
        }
        let label = line
            .parse::<usize>()
            .map_err(|_| Error::Load(format!("labels.csv:{line_no}: non-integer label {line:?}")))?;
        labels.push(label);
    }
    Ok(labels)
}

/// Writes the graph in the directory format above (binary features).
///
/// Features are stored as f32, so a save of f32-representable data reloads bit-identically.
pub fn save_graph(graph: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, contents: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    };

    let meta = Meta {
        n: graph.num_nodes(),
        d: graph.num_features(),
        c: graph.num_classes(),
    };
    write("meta.json", serde_json::to_string(&meta)?.as_bytes())?;

    let mut bytes = Vec::with_capacity(graph.features().len() * 4);
    for row in graph.features().rows() {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write("features.bin", &bytes)?;

    let mut edges = String::from("src,dst\n");
    for (u, v) in graph.edge_list() {
        edges.push_str(&format!("{u},{v}\n"));
    }
    write("edges.csv", edges.as_bytes())?;

    let mut labels = String::new();
    for l in graph.labels() {
        labels.push_str(&format!("{l}\n"));
    }
    write("labels.csv", labels.as_bytes())?;
    write("splits.json", serde_json::to_string(graph.splits())?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path) {
        fs::write(dir.join("meta.json"), r#"{"n":3,"d":2,"c":2}"#).unwrap();
        fs::write(dir.join("features.csv"), "1,0\n0,1\n0.5,0.5\n").unwrap();
        fs::write(dir.join("edges.csv"), "src,dst\n0,1\n1,2\n").unwrap();
        fs::write(dir.join("labels.csv"), "0\n1\n0\n").unwrap();
        fs::write(dir.join("splits.json"), r#"{"train":[0,1],"val":[2],"test":[]}"#).unwrap();
    }

    #[test]
    fn loads_path_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        let g = load_graph(tmp.path()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.adjacency().nnz(), 4);
        assert_eq!(g.features()[[2, 1]], 0.5);
    }

    #[test]
    fn load_errors_are_descriptive() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        fs::remove_file(tmp.path().join("splits.json")).unwrap();
        let err = load_graph(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("splits.json"), "{err}");

        write_fixture(tmp.path());
        fs::write(tmp.path().join("labels.csv"), "0\n1\n").unwrap();
        let err = load_graph(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("labels.csv has 2"), "{err}");

        write_fixture(tmp.path());
        fs::write(tmp.path().join("labels.csv"), "0\n1.5\n0\n").unwrap();
        let err = load_graph(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("non-integer"), "{err}");

        write_fixture(tmp.path());
        fs::write(tmp.path().join("labels.csv"), "0\n7\n0\n").unwrap();
        assert!(load_graph(tmp.path()).is_err());

        write_fixture(tmp.path());
        fs::write(tmp.path().join("features.csv"), "1,0\n0,1\n").unwrap();
        let err = load_graph(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("2 rows"), "{err}");
    }

    #[test]
    fn save_then_load_is_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path());
        let g = load_graph(tmp.path()).unwrap();
        let out = tmp.path().join("copy");
        save_graph(&g, &out).unwrap();
        let again = load_graph(&out).unwrap();
        assert_eq!(g.features(), again.features());
        assert_eq!(g.edge_list(), again.edge_list());
        assert_eq!(g.labels(), again.labels());
        assert_eq!(g.splits(), again.splits());
    }
}
