//! Line-delimited JSON snapshots.
//!
//! A header line with counts, then nodes sorted by identifier, edges sorted
//! by (head, relation, tail), and the merge journal in application order.
//! Writes go to a sibling temp file that is renamed into place.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, Graph, JournalEntry, Node, StoreError};

pub const SNAPSHOT_FORMAT: &str = "tkg-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub nodes: usize,
    pub edges: usize,
    pub journal: usize,
    /// Set when the snapshot was written after an aborted run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial: Option<String>,
}

fn json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), StoreError> {
    serde_json::to_writer(&mut *w, value).map_err(|e| StoreError::Io(e.into()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_snapshot<W: Write>(graph: &Graph, mut w: W, partial: Option<&str>) -> Result<(), StoreError> {
    let header = SnapshotHeader {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        journal: graph.journal().len(),
        partial: partial.map(str::to_string),
    };
    json_line(&mut w, &header)?;
    for n in graph.nodes() {
        json_line(&mut w, n)?;
    }
    let mut edges: Vec<&Edge> = graph.edges().collect();
    edges.sort_by(|a, b| (&a.head, a.relation, &a.tail).cmp(&(&b.head, b.relation, &b.tail)));
    for e in edges {
        json_line(&mut w, e)?;
    }
    for j in graph.journal() {
        json_line(&mut w, j)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes atomically: temp file in the same directory, then rename.
pub fn save_snapshot(graph: &Graph, path: &Path, partial: Option<&str>) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "snapshot".into());
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_snapshot(graph, &mut w, partial)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

fn parse_line<T, I>(lines: &mut I, line_no: usize, what: &str) -> Result<T, StoreError>
where
    T: for<'de> Deserialize<'de>,
    I: Iterator<Item = std::io::Result<String>>,
{
    let Some(line) = lines.next() else {
        return Err(StoreError::Snapshot { line: line_no, reason: format!("file ends before expected {what} record") });
    };
    serde_json::from_str(&line?).map_err(|e| StoreError::Snapshot { line: line_no, reason: format!("bad {what} record: {e}") })
}

/// Reads and fully validates a snapshot. Nothing is returned unless every
/// line parses and every invariant holds.
pub fn read_snapshot<R: BufRead>(r: R) -> Result<(SnapshotHeader, Graph), StoreError> {
    let mut lines = r.lines();
    let header: SnapshotHeader = parse_line(&mut lines, 1, "header")?;
    if header.format != SNAPSHOT_FORMAT || header.version != SNAPSHOT_VERSION {
        return Err(StoreError::Snapshot {
            line: 1,
            reason: format!("unsupported snapshot {} v{}", header.format, header.version),
        });
    }
    let mut line_no = 1;
    let mut nodes: Vec<Node> = Vec::with_capacity(header.nodes);
    for _ in 0..header.nodes {
        line_no += 1;
        let n: Node = parse_line(&mut lines, line_no, "node")?;
        if nodes.last().is_some_and(|p| p.identifier >= n.identifier) {
            return Err(StoreError::Snapshot { line: line_no, reason: "nodes not in identifier order".into() });
        }
        nodes.push(n);
    }
    let edges_start = line_no + 1;
    let mut edges: Vec<Edge> = Vec::with_capacity(header.edges);
    for _ in 0..header.edges {
        line_no += 1;
        let e: Edge = parse_line(&mut lines, line_no, "edge")?;
        if edges.last().is_some_and(|p| (&p.head, p.relation, &p.tail) >= (&e.head, e.relation, &e.tail)) {
            return Err(StoreError::Snapshot { line: line_no, reason: "edges not in (head, relation, tail) order".into() });
        }
        edges.push(e);
    }
    let mut journal: Vec<JournalEntry> = Vec::with_capacity(header.journal);
    for _ in 0..header.journal {
        line_no += 1;
        journal.push(parse_line(&mut lines, line_no, "journal")?);
    }
    for line in lines {
        line_no += 1;
        if !line?.trim().is_empty() {
            return Err(StoreError::Snapshot { line: line_no, reason: "records beyond the counts in the header".into() });
        }
    }
    let graph = Graph::from_parts(nodes, edges, journal)
        .map_err(|(i, reason)| StoreError::Snapshot { line: edges_start + i, reason })?;
    Ok((header, graph))
}

pub fn load_snapshot(path: &Path) -> Result<(SnapshotHeader, Graph), StoreError> {
    read_snapshot(BufReader::new(File::open(path)?))
}
