//! Plain-text dataset files.
//!
//! * edges: one `src<TAB>dst` pair per line, 0-based ids, `#` starts a comment line
//! * features: header `n f`, then `n` rows of `f` space-separated numbers;
//!   a header of `n f --sparse` switches to `i j v` triplet lines
//! * labels: one `node<TAB>class` per line, absent nodes are unlabeled

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Graph, GraphError, LabelSet};

/// File locations of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
}

impl DatasetPaths {
    /// The conventional layout: `edges.tsv`, `features.txt`, `labels.tsv`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.txt"),
            labels: dir.join("labels.tsv"),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    tok: Option<&str>,
    what: &str,
) -> Result<T, GraphError> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} `{tok}`")))
}

pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut toks = l.split_whitespace();
        let a = parse_field(path, line, toks.next(), "source id")?;
        let b = parse_field(path, line, toks.next(), "target id")?;
        if toks.next().is_some() {
            return Err(parse_err(path, line, "expected two columns"));
        }
        edges.push((a, b));
    }
    Ok(edges)
}

/// Reads a feature file and returns `(n, f, row-major values)`.
pub fn read_features(path: &Path) -> Result<(usize, usize, Vec<f64>), GraphError> {
    let text = fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "missing `n f` header"))?;
    let mut htoks = header.split_whitespace();
    let n: usize = parse_field(path, hline, htoks.next(), "node count")?;
    let f: usize = parse_field(path, hline, htoks.next(), "feature dimension")?;
    let sparse = match htoks.next() {
        None => false,
        Some("--sparse") => true,
        Some(other) => return Err(parse_err(path, hline, format!("unexpected header token `{other}`"))),
    };

    let mut values = vec![0.0; n * f];
    if sparse {
        for (line, l) in lines {
            let mut toks = l.split_whitespace();
            let i: usize = parse_field(path, line, toks.next(), "row index")?;
            let j: usize = parse_field(path, line, toks.next(), "column index")?;
            let v: f64 = parse_field(path, line, toks.next(), "value")?;
            if i >= n {
                return Err(GraphError::NodeOutOfRange { index: i, n });
            }
            if j >= f {
                return Err(GraphError::Dimension(format!("{}:{line}: column {j} >= {f}", path.display())));
            }
            values[i * f + j] = v;
        }
    } else {
        let mut rows = 0;
        for (line, l) in lines {
            if rows == n {
                return Err(GraphError::Dimension(format!(
                    "{}:{line}: more than the {n} declared rows",
                    path.display()
                )));
            }
            let row = &mut values[rows * f..(rows + 1) * f];
            let mut count = 0;
            for tok in l.split_whitespace() {
                if count == f {
                    return Err(GraphError::Dimension(format!(
                        "{}:{line}: more than {f} values",
                        path.display()
                    )));
                }
                row[count] = parse_field(path, line, Some(tok), "feature value")?;
                count += 1;
            }
            if count != f {
                return Err(GraphError::Dimension(format!(
                    "{}:{line}: {count} values, expected {f}",
                    path.display()
                )));
            }
            rows += 1;
        }
        if rows != n {
            return Err(GraphError::Dimension(format!(
                "{}: {rows} rows, header declares {n}",
                path.display()
            )));
        }
    }
    Ok((n, f, values))
}

pub fn read_labels(path: &Path, n: usize) -> Result<LabelSet, GraphError> {
    let text = fs::read_to_string(path)?;
    let mut labels: Vec<Option<u32>> = vec![None; n];
    for (line, l) in content_lines(&text) {
        let mut toks = l.split_whitespace();
        let node: usize = parse_field(path, line, toks.next(), "node id")?;
        let class: u32 = parse_field(path, line, toks.next(), "class")?;
        if node >= n {
            return Err(GraphError::NodeOutOfRange { index: node, n });
        }
        match labels[node] {
            Some(prev) if prev != class => {
                return Err(parse_err(path, line, format!("node {node} relabeled {prev} -> {class}")))
            }
            _ => labels[node] = Some(class),
        }
    }
    Ok(LabelSet::new(labels))
}

/// Loads and validates a dataset. The node count comes from the feature
/// file header; edge and label ids must fall below it.
pub fn load_dataset(paths: &DatasetPaths) -> Result<(Graph, LabelSet), GraphError> {
    let (n, f, features) = read_features(&paths.features)?;
    let edges = read_edges(&paths.edges)?;
    let graph = Graph::from_edges(n, &edges, features, f)?;
    let labels = read_labels(&paths.labels, n)?;
    Ok((graph, labels))
}

/// Writes `graph` and `labels` in the dense text formats. Floats are
/// printed in shortest round-trip form, so reloading is exact.
pub fn save_dataset(paths: &DatasetPaths, graph: &Graph, labels: &LabelSet) -> Result<(), GraphError> {
    let mut out = String::new();
    for (i, j) in graph.edges() {
        writeln!(out, "{i}\t{j}").unwrap();
    }
    fs::write(&paths.edges, &out)?;

    out.clear();
    writeln!(out, "{} {}", graph.n(), graph.feature_dim()).unwrap();
    for i in 0..graph.n() {
        let row = graph.feature_row(i);
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(&paths.features, &out)?;

    out.clear();
    for (i, l) in labels.as_slice().iter().enumerate() {
        if let Some(c) = l {
            writeln!(out, "{i}\t{c}").unwrap();
        }
    }
    fs::write(&paths.labels, &out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        write(d, "edges.tsv", "# comment\n0\t1\n1\t0\n1\t1\n1\t2\n");
        write(d, "features.txt", "3 2\n1 0\n0 1\n0.5 -2e-3\n");
        write(d, "labels.tsv", "0\t1\n2\t0\n");
        let (g, ls) = load_dataset(&DatasetPaths::in_dir(d)).unwrap();
        assert_eq!((g.n(), g.edge_count(), g.feature_dim()), (3, 2, 2));
        assert_eq!(g.feature_row(2), &[0.5, -0.002]);
        assert_eq!(ls.num_classes(), 2);
        assert_eq!(ls.labeled_nodes(), &[0, 2]);
    }

    #[test]
    fn sparse_features() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "f.txt", "2 3 --sparse\n0 2 1.5\n1 0 1\n");
        let (n, f, v) = read_features(&p).unwrap();
        assert_eq!((n, f), (2, 3));
        assert_eq!(v, vec![0.0, 0.0, 1.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.tsv", "0\t1\n# x\n2\tfoo\n");
        match read_edges(&p) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_and_range_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let short = write(d, "short.txt", "2 3\n1 2 3\n1 2\n");
        assert!(matches!(read_features(&short), Err(GraphError::Dimension(_))));
        let missing_row = write(d, "rows.txt", "3 1\n1\n2\n");
        assert!(matches!(read_features(&missing_row), Err(GraphError::Dimension(_))));

        write(d, "edges.tsv", "0\t5\n");
        write(d, "features.txt", "3 1\n0\n0\n0\n");
        write(d, "labels.tsv", "0\t0\n");
        assert!(matches!(
            load_dataset(&DatasetPaths::in_dir(d)),
            Err(GraphError::NodeOutOfRange { index: 5, n: 3 })
        ));
        let labels = write(d, "bad_labels.tsv", "7\t0\n");
        assert!(matches!(read_labels(&labels, 3), Err(GraphError::NodeOutOfRange { .. })));
    }

    #[test]
    fn save_then_load_is_identity() {
        let features = vec![0.1, 1.0 / 3.0, -7.25, 1e-300, 0.0, 2.5];
        let g = Graph::from_edges(3, &[(2, 0), (0, 1), (1, 0)], features, 2).unwrap();
        let ls = LabelSet::new(vec![Some(1), None, Some(0)]);
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        save_dataset(&paths, &g, &ls).unwrap();
        let (g2, ls2) = load_dataset(&paths).unwrap();
        assert_eq!(g2, g);
        assert_eq!(ls2, ls);

        // a second cycle reproduces the files byte for byte
        let first = fs::read(&paths.features).unwrap();
        save_dataset(&paths, &g2, &ls2).unwrap();
        assert_eq!(fs::read(&paths.features).unwrap(), first);
    }
}
