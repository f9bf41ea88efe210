//! CSV ingestion and persistence for event graphs.
//!
//! Three files describe a dataset:
//!
//! - `events.csv`: header `src,dst,time[,ef0..efK]`
//! - `node_feats.csv`: header `node[,time],f0..fD` — a `time` column selects
//!   snapshot mode, otherwise the table is static with one row per node
//! - `labels.csv`: header `node,time,label`
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every `f64` bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Directedness, EventGraph, LabeledQuery, NodeFeatures, TemporalEvent};

/// Dataset-level declarations that cannot be inferred from file contents
/// alone. `num_nodes`/`num_classes` default to (max id + 1) over all files.
#[derive(Debug, Clone, Default)]
pub struct LoadSchema {
    pub directed: bool,
    pub num_nodes: Option<usize>,
    pub num_classes: Option<usize>,
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
}

impl Row<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.display().to_string(), line: self.line, msg: msg.into() }
    }

    fn usize(&self, field: &str, raw: &str) -> Result<usize> {
        raw.trim()
            .parse::<usize>()
            .map_err(|_| self.err(format!("{field} {raw:?} is not a non-negative integer")))
    }

    fn real(&self, field: &str, raw: &str) -> Result<f64> {
        let v: f64 = raw
            .trim()
            .parse()
            .map_err(|_| self.err(format!("{field} {raw:?} is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("{field} {raw:?} is not finite")));
        }
        Ok(v)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file))
}

fn header_err(path: &Path, msg: String) -> Error {
    Error::Schema { path: path.display().to_string(), msg }
}

/// Checks that `headers[offset..]` is exactly `prefix0..prefixN` and returns N+1.
fn numbered_columns(path: &Path, headers: &csv::StringRecord, offset: usize, prefix: &str) -> Result<usize> {
    let n = headers.len() - offset;
    for (k, name) in headers.iter().skip(offset).enumerate() {
        let want = format!("{prefix}{k}");
        if name != want {
            return Err(header_err(
                path,
                format!("column {} is {name:?}, expected {want:?}", offset + k),
            ));
        }
    }
    Ok(n)
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn read_events(path: &Path) -> Result<Vec<TemporalEvent>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| header_err(path, e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "src" || &headers[1] != "dst" || &headers[2] != "time" {
        return Err(header_err(path, format!("header must start with src,dst,time, got {headers:?}")));
    }
    let ef_dim = numbered_columns(path, &headers, 3, "ef")?;

    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let row = Row { path, line: record_line(&rec) };
        if rec.len() != headers.len() {
            return Err(row.err(format!("{} fields, expected {}", rec.len(), headers.len())));
        }
        let src = row.usize("src", &rec[0])?;
        let dst = row.usize("dst", &rec[1])?;
        let time = row.real("time", &rec[2])?;
        let edge_feat = if ef_dim == 0 {
            None
        } else {
            let mut f = Vec::with_capacity(ef_dim);
            for k in 0..ef_dim {
                f.push(row.real(&format!("ef{k}"), &rec[3 + k])?);
            }
            Some(f)
        };
        events.push(TemporalEvent { src, dst, time, edge_feat });
    }
    Ok(events)
}

enum RawFeatures {
    Static(Vec<(usize, Vec<f64>, u64)>),
    Snapshots(Vec<(usize, f64, Vec<f64>)>),
}

fn read_node_feats(path: &Path) -> Result<(RawFeatures, usize)> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| header_err(path, e.to_string()))?.clone();
    if headers.is_empty() || &headers[0] != "node" {
        return Err(header_err(path, format!("first column must be node, got {headers:?}")));
    }
    let snapshot = headers.len() > 1 && &headers[1] == "time";
    let feat_offset = if snapshot { 2 } else { 1 };
    let dim = numbered_columns(path, &headers, feat_offset, "f")?;
    if dim == 0 {
        return Err(header_err(path, "no feature columns".into()));
    }

    let mut stat = Vec::new();
    let mut snaps = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let row = Row { path, line: record_line(&rec) };
        if rec.len() != headers.len() {
            return Err(row.err(format!("{} fields, expected {}", rec.len(), headers.len())));
        }
        let node = row.usize("node", &rec[0])?;
        let time = if snapshot { Some(row.real("time", &rec[1])?) } else { None };
        let mut f = Vec::with_capacity(dim);
        for k in 0..dim {
            f.push(row.real(&format!("f{k}"), &rec[feat_offset + k])?);
        }
        match time {
            Some(t) => snaps.push((node, t, f)),
            None => stat.push((node, f, row.line)),
        }
    }
    Ok(if snapshot { (RawFeatures::Snapshots(snaps), dim) } else { (RawFeatures::Static(stat), dim) })
}

fn read_labels(path: &Path) -> Result<Vec<(LabeledQuery, u64)>> {
    let mut rdr = open_reader(path)?;
    let headers = rdr.headers().map_err(|e| header_err(path, e.to_string()))?.clone();
    let expect = ["node", "time", "label"];
    if headers.len() != 3 || headers.iter().zip(expect).any(|(h, e)| h != e) {
        return Err(header_err(path, format!("header must be node,time,label, got {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let row = Row { path, line: record_line(&rec) };
        if rec.len() != 3 {
            return Err(row.err(format!("{} fields, expected 3", rec.len())));
        }
        let node = row.usize("node", &rec[0])?;
        let time = row.real("time", &rec[1])?;
        let label = row.usize("label", &rec[2])?;
        out.push((LabeledQuery { node, time, label }, row.line));
    }
    Ok(out)
}

/// Loads and fully validates an event graph from its CSV triplet.
pub fn load_event_graph(
    events_path: &Path,
    node_feats_path: Option<&Path>,
    labels_path: &Path,
    schema: &LoadSchema,
) -> Result<EventGraph> {
    let events = read_events(events_path)?;
    let raw_feats = node_feats_path.map(read_node_feats).transpose()?;
    let labels = read_labels(labels_path)?;

    let num_nodes = match schema.num_nodes {
        Some(n) => n,
        None => {
            let mut max_id = None;
            let mut fold = |id: usize| max_id = Some(max_id.map_or(id, |m: usize| m.max(id)));
            for e in &events {
                fold(e.src);
                fold(e.dst);
            }
            if let Some((feats, _)) = &raw_feats {
                match feats {
                    RawFeatures::Static(rows) => rows.iter().for_each(|(n, _, _)| fold(*n)),
                    RawFeatures::Snapshots(rows) => rows.iter().for_each(|(n, _, _)| fold(*n)),
                }
            }
            for (q, _) in &labels {
                fold(q.node);
            }
            max_id.map(|m| m + 1).ok_or_else(|| {
                Error::Integrity(format!("no rows in any input file, cannot infer node count ({})", events_path.display()))
            })?
        }
    };

    // id range checks against declared num_nodes, reported with file lines
    if let Some(n) = schema.num_nodes {
        for (q, line) in &labels {
            if q.node >= n {
                return Err(Error::Integrity(format!(
                    "{}:{line}: node {} outside declared 0..{n}",
                    labels_path.display(),
                    q.node
                )));
            }
        }
    }

    let num_classes = match schema.num_classes {
        Some(c) => c,
        None => labels.iter().map(|(q, _)| q.label + 1).max().unwrap_or(1),
    };

    let node_feats = match raw_feats {
        None => NodeFeatures::None,
        Some((RawFeatures::Static(rows), dim)) => {
            let path = node_feats_path.unwrap();
            let mut table: Vec<Option<Vec<f64>>> = vec![None; num_nodes];
            for (node, f, line) in rows {
                if node >= num_nodes {
                    return Err(Error::Integrity(format!(
                        "{}:{line}: node {node} outside 0..{num_nodes}",
                        path.display()
                    )));
                }
                if table[node].replace(f).is_some() {
                    return Err(Error::Integrity(format!(
                        "{}:{line}: duplicate feature row for node {node}",
                        path.display()
                    )));
                }
            }
            let mut full = Vec::with_capacity(num_nodes);
            for (node, row) in table.into_iter().enumerate() {
                full.push(row.ok_or_else(|| {
                    Error::Integrity(format!(
                        "{}: no feature row for node {node}",
                        path.display()
                    ))
                })?);
            }
            NodeFeatures::Static { dim, table: full }
        }
        Some((RawFeatures::Snapshots(rows), dim)) => {
            let path = node_feats_path.unwrap();
            let mut per_node: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); num_nodes];
            for (node, t, f) in rows {
                if node >= num_nodes {
                    return Err(Error::Integrity(format!(
                        "{}: snapshot names node {node} outside 0..{num_nodes}",
                        path.display()
                    )));
                }
                per_node[node].push((t, f));
            }
            for (node, snaps) in per_node.iter_mut().enumerate() {
                snaps.sort_by(|a, b| a.0.total_cmp(&b.0));
                if snaps.windows(2).any(|w| w[0].0 == w[1].0) {
                    return Err(Error::Integrity(format!(
                        "{}: node {node} has two snapshots at one time",
                        path.display()
                    )));
                }
            }
            NodeFeatures::Snapshots { dim, per_node }
        }
    };

    let directedness = if schema.directed { Directedness::Directed } else { Directedness::Undirected };
    EventGraph::new(
        num_nodes,
        events,
        node_feats,
        labels.into_iter().map(|(q, _)| q).collect(),
        num_classes,
        directedness,
    )
}

fn fmt_row(fields: &[String]) -> String {
    fields.join(",")
}

/// Writes the CSV triplet for `g`. The feature file is omitted when the
/// graph carries no features; returns the paths actually written.
pub fn save_event_graph(g: &EventGraph, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let events_path = dir.join("events.csv");
    let mut out = String::new();
    let ef_dim = g.edge_feat_dim();
    let mut header = vec!["src".to_string(), "dst".into(), "time".into()];
    header.extend((0..ef_dim).map(|k| format!("ef{k}")));
    writeln!(out, "{}", fmt_row(&header)).unwrap();
    for e in g.events() {
        let mut fields = vec![e.src.to_string(), e.dst.to_string(), e.time.to_string()];
        if ef_dim > 0 {
            let feats = e.edge_feat.as_deref().unwrap_or(&[]);
            fields.extend(feats.iter().map(|v| v.to_string()));
        }
        writeln!(out, "{}", fmt_row(&fields)).unwrap();
    }
    std::fs::write(&events_path, out)?;
    written.push(events_path);

    match g.node_feats() {
        NodeFeatures::None => {}
        NodeFeatures::Static { dim, table } => {
            let path = dir.join("node_feats.csv");
            let mut out = String::new();
            let mut header = vec!["node".to_string()];
            header.extend((0..*dim).map(|k| format!("f{k}")));
            writeln!(out, "{}", fmt_row(&header)).unwrap();
            for (node, row) in table.iter().enumerate() {
                let mut fields = vec![node.to_string()];
                fields.extend(row.iter().map(|v| v.to_string()));
                writeln!(out, "{}", fmt_row(&fields)).unwrap();
            }
            std::fs::write(&path, out)?;
            written.push(path);
        }
        NodeFeatures::Snapshots { dim, per_node } => {
            let path = dir.join("node_feats.csv");
            let mut out = String::new();
            let mut header = vec!["node".to_string(), "time".into()];
            header.extend((0..*dim).map(|k| format!("f{k}")));
            writeln!(out, "{}", fmt_row(&header)).unwrap();
            for (node, snaps) in per_node.iter().enumerate() {
                for (t, row) in snaps {
                    let mut fields = vec![node.to_string(), t.to_string()];
                    fields.extend(row.iter().map(|v| v.to_string()));
                    writeln!(out, "{}", fmt_row(&fields)).unwrap();
                }
            }
            std::fs::write(&path, out)?;
            written.push(path);
        }
    }

    let labels_path = dir.join("labels.csv");
    let mut out = String::from("node,time,label\n");
    for q in g.labeled_queries() {
        writeln!(out, "{},{},{}", q.node, q.time, q.label).unwrap();
    }
    std::fs::write(&labels_path, out)?;
    written.push(labels_path);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::IncidenceDirection;

    fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn loads_a_small_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,1,2.5\n1,0,1.0\n0,1,3.0\n");
        let f = write(dir.path(), "node_feats.csv", "node,f0,f1\n0,1.0,2.0\n1,3.0,4.0\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,1\n1,0,0\n");
        let g = load_event_graph(&e, Some(&f), &l, &LoadSchema::default()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_classes(), 2);
        assert_eq!(g.events().len(), 3);
        assert_eq!(g.events()[0].time, 1.0); // sorted on load
        assert_eq!(g.feature_dim(), Some(2));
    }

    #[test]
    fn shuffled_rows_load_identically_to_sorted_rows() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n");
        let shuffled = write(dir.path(), "a.csv", "src,dst,time\n2,0,9.0\n0,1,1.0\n1,2,4.0\n");
        let sorted = write(dir.path(), "b.csv", "src,dst,time\n0,1,1.0\n1,2,4.0\n2,0,9.0\n");
        let schema = LoadSchema { num_nodes: Some(3), num_classes: Some(1), ..Default::default() };
        let ga = load_event_graph(&shuffled, None, &l, &schema).unwrap();
        let gb = load_event_graph(&sorted, None, &l, &schema).unwrap();
        assert_eq!(ga.events(), gb.events());
    }

    #[test]
    fn parse_errors_carry_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,1,2.5\nx,1,3.0\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n");
        let err = load_event_graph(&e, None, &l, &LoadSchema::default()).unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains("src"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_beyond_declared_nodes_is_integrity_error_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,1,1.0\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n9,1,0\n");
        let schema = LoadSchema { num_nodes: Some(2), num_classes: Some(1), ..Default::default() };
        let err = load_event_graph(&e, None, &l, &schema).unwrap_err();
        match err {
            Error::Integrity(msg) => {
                assert!(msg.contains(":3:") && msg.contains("node 9"), "{msg}");
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn header_mismatches_are_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n");
        let bad_events = write(dir.path(), "bad.csv", "source,dst,time\n0,1,1.0\n");
        assert!(matches!(
            load_event_graph(&bad_events, None, &l, &LoadSchema::default()),
            Err(Error::Schema { .. })
        ));
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,1,1.0\n");
        let bad_feats = write(dir.path(), "nf.csv", "node,f0,g1\n0,1,2\n1,1,2\n");
        assert!(matches!(
            load_event_graph(&e, Some(&bad_feats), &l, &LoadSchema::default()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn missing_static_feature_row_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,2,1.0\n");
        let f = write(dir.path(), "node_feats.csv", "node,f0\n0,1.0\n1,2.0\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n");
        let err = load_event_graph(&e, Some(&f), &l, &LoadSchema::default()).unwrap_err();
        match err {
            Error::Integrity(msg) => assert!(msg.contains("node 2"), "{msg}"),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn edge_features_parse_and_snapshot_mode_detected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time,ef0,ef1\n0,1,1.0,0.5,-2\n");
        let f = write(dir.path(), "node_feats.csv", "node,time,f0\n0,1.0,7\n0,2.0,8\n1,0.5,9\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n0,0,0\n1,0,1\n");
        let g = load_event_graph(&e, Some(&f), &l, &LoadSchema::default()).unwrap();
        assert_eq!(g.edge_feat_dim(), 2);
        assert_eq!(g.events()[0].edge_feat.as_deref(), Some(&[0.5, -2.0][..]));
        assert_eq!(g.feature_at(0, 1.5), Some(&[7.0][..]));
        assert_eq!(g.feature_at(0, 2.5), Some(&[8.0][..]));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::from_seed(crate::derive_seed(&[0x10, 1]));
        let events: Vec<TemporalEvent> = (0..100)
            .map(|_| TemporalEvent {
                src: rng.gen_range(0..10),
                dst: rng.gen_range(0..10),
                time: rng.gen_range(0.0..50.0_f64) * (1.0 / 3.0),
                edge_feat: Some(vec![rng.gen_range(-1.0..1.0), rng.gen::<f64>() * 1e-7]),
            })
            .collect();
        let snaps: Vec<Vec<(f64, Vec<f64>)>> = (0..10)
            .map(|_| {
                let mut t = 0.0;
                (0..5)
                    .map(|_| {
                        t += rng.gen_range(0.1..2.0);
                        (t, vec![rng.gen_range(-3.0..3.0), rng.gen::<f64>() / 7.0, 0.1 + 0.2])
                    })
                    .collect()
            })
            .collect();
        let labels: Vec<LabeledQuery> = (0..10)
            .flat_map(|node| {
                [LabeledQuery { node, time: 0.0, label: node % 3 }, LabeledQuery { node, time: 10.0 / 3.0, label: (node + 1) % 3 }]
            })
            .collect();
        let g = EventGraph::new(
            10,
            events,
            NodeFeatures::Snapshots { dim: 3, per_node: snaps },
            labels,
            3,
            Directedness::Undirected,
        )
        .unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_event_graph(&g, dir.path()).unwrap();
        let schema = LoadSchema { num_nodes: Some(10), num_classes: Some(3), ..Default::default() };
        let loaded = load_event_graph(
            &dir.path().join("events.csv"),
            Some(&dir.path().join("node_feats.csv")),
            &dir.path().join("labels.csv"),
            &schema,
        )
        .unwrap();
        assert_eq!(g, loaded);
        // bit-exactness of a few awkward values
        let idx = crate::graph::IncidenceIndex::build(&loaded, IncidenceDirection::Both);
        assert_eq!(idx.all_events(0).len(), crate::graph::IncidenceIndex::build(&g, IncidenceDirection::Both).all_events(0).len());
        for (a, b) in g.events().iter().zip(loaded.events()) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
        }
    }

    #[test]
    fn events_without_labels_still_load_for_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "events.csv", "src,dst,time\n0,1,1.0\n");
        let l = write(dir.path(), "labels.csv", "node,time,label\n");
        let schema = LoadSchema { num_nodes: Some(2), num_classes: Some(1), ..Default::default() };
        let g = load_event_graph(&e, None, &l, &schema).unwrap();
        assert!(g.labeled_queries().is_empty());
    }
}
