//! Edge-list and node-table file formats.
//!
//! Edge list: one `i<TAB>j` pair per line, 0-based node ids.
//! Node table: CSV with header `node_id,label,f0,f1,...`; row `k` must carry
//! `node_id = k`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph};
use crate::tensor::{csv_error, Tensor};

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(path, i + 1, "expected `i<TAB>j`"));
        };
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad node id `{s}`: {e}")))
        };
        edges.push((id(a)?, id(b)?));
    }
    Ok(edges)
}

pub fn write_edge_list(path: &Path, edges: &[(usize, usize)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        for (i, j) in edges {
            writeln!(w, "{i}\t{j}")?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Reads labels and the feature matrix from a node table.
pub fn read_node_table(path: &Path) -> Result<(Vec<u8>, Tensor)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "node_id" || &header[1] != "label" {
        return Err(Error::parse(path, 1, "header must start with `node_id,label`"));
    }
    let d = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(Error::parse(path, 1, format!("expected column `f{k}`, found `{name}`")));
        }
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let node_id: usize = rec[0]
            .parse()
            .map_err(|e| Error::parse(path, line, format!("bad node_id: {e}")))?;
        if node_id != row {
            return Err(Error::parse(
                path,
                line,
                format!("node_id {node_id} out of order (expected {row})"),
            ));
        }
        let label = match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(path, line, format!("label `{other}` not 0/1"))),
        };
        labels.push(label);
        for field in rec.iter().skip(2) {
            let v: f64 = field
                .parse()
                .map_err(|e| Error::parse(path, line, format!("bad feature `{field}`: {e}")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line, "non-finite feature"));
            }
            data.push(v);
        }
    }
    let n = labels.len();
    Ok((labels, Tensor::from_vec(n, d, data)?))
}

pub fn write_node_table(path: &Path, g: &Graph) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let x = g.features();
    (|| -> std::io::Result<()> {
        write!(w, "node_id,label")?;
        for k in 0..x.cols() {
            write!(w, ",f{k}")?;
        }
        writeln!(w)?;
        for i in 0..g.num_nodes() {
            write!(w, "{i},{}", g.labels()[i])?;
            for v in x.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Loads a graph from an edge list and a node table.
pub fn read_graph(edge_path: &Path, node_path: &Path) -> Result<Graph> {
    let (labels, features) = read_node_table(node_path)?;
    let edges = read_edge_list(edge_path)?;
    build_graph(&edges, labels.len(), features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, SynthConfig};

    #[test]
    fn graph_files_round_trip() {
        let cfg = SynthConfig {
            n: 120,
            d: 3,
            intra_p: 0.05,
            inter_p: 0.05,
            ..SynthConfig::default()
        };
        let g = generate_synthetic(&cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, v) = (dir.path().join("edges.tsv"), dir.path().join("nodes.csv"));
        write_edge_list(&e, &g.edges()).unwrap();
        write_node_table(&v, &g).unwrap();
        assert_eq!(read_graph(&e, &v).unwrap(), g);
    }

    #[test]
    fn malformed_edge_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("edges.tsv");
        std::fs::write(&e, "0\t1\n2 3\n").unwrap();
        match read_edge_list(&e) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_order_node_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = dir.path().join("nodes.csv");
        std::fs::write(&v, "node_id,label,f0\n1,0,0.5\n0,1,0.2\n").unwrap();
        assert!(read_node_table(&v).is_err());
    }
}
