//! The fixed face-graph topology.
//!
//! Edges follow the anatomical contour chains of the canonical 468-point
//! face mesh: face oval, the four eyebrow chains, both eye rings and the
//! outer/inner lip rings. The committed data file
//! `data/face_topology_v1.txt` is the source of truth at runtime; the
//! chain constants below regenerate it and a test pins the two together.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Edge, NUM_LANDMARKS};
use crate::{Error, Result};

/// Version string carried in the topology file header.
pub const TOPOLOGY_VERSION: &str = "v1";

const TOPOLOGY_FILE: &str = include_str!("../../data/face_topology_v1.txt");
const TOPOLOGY_FILE_NAME: &str = "data/face_topology_v1.txt";

/// One contour chain: a named walk over landmark indices, closed when the
/// last vertex connects back to the first.
#[derive(Debug, Clone, Copy)]
pub struct ChainGroup {
    pub name: &'static str,
    pub vertices: &'static [u16],
    pub closed: bool,
}

/// The contour chains of the committed topology, in file order.
pub const CONTOUR_CHAINS: [ChainGroup; 9] = [
    ChainGroup {
        name: "face_oval",
        vertices: &[
            10, 338, 297, 332, 284, 251, 389, 356, 454, 323, 361, 288, 397, 365, 379, 378, 400,
            377, 152, 148, 176, 149, 150, 136, 172, 58, 132, 93, 234, 127, 162, 21, 54, 103, 67,
            109,
        ],
        closed: true,
    },
    ChainGroup {
        name: "left_eyebrow_lower",
        vertices: &[276, 283, 282, 295, 285],
        closed: false,
    },
    ChainGroup {
        name: "left_eyebrow_upper",
        vertices: &[300, 293, 334, 296, 336],
        closed: false,
    },
    ChainGroup {
        name: "right_eyebrow_lower",
        vertices: &[46, 53, 52, 65, 55],
        closed: false,
    },
    ChainGroup {
        name: "right_eyebrow_upper",
        vertices: &[70, 63, 105, 66, 107],
        closed: false,
    },
    ChainGroup {
        name: "left_eye",
        vertices: &[
            263, 249, 390, 373, 374, 380, 381, 382, 362, 398, 384, 385, 386, 387, 388, 466,
        ],
        closed: true,
    },
    ChainGroup {
        name: "right_eye",
        vertices: &[
            33, 7, 163, 144, 145, 153, 154, 155, 133, 173, 157, 158, 159, 160, 161, 246,
        ],
        closed: true,
    },
    ChainGroup {
        name: "outer_lip",
        vertices: &[
            61, 146, 91, 181, 84, 17, 314, 405, 321, 375, 291, 409, 270, 269, 267, 0, 37, 39, 40,
            185,
        ],
        closed: true,
    },
    ChainGroup {
        name: "inner_lip",
        vertices: &[
            78, 95, 88, 178, 87, 14, 317, 402, 318, 324, 308, 415, 310, 311, 312, 13, 82, 81, 80,
            191,
        ],
        closed: true,
    },
];

/// Expands the chain constants into the edge list (walk order).
pub fn edges_from_chains() -> Vec<Edge> {
    let mut edges = Vec::new();
    for chain in CONTOUR_CHAINS {
        let n = chain.vertices.len();
        let m = if chain.closed { n } else { n - 1 };
        for k in 0..m {
            edges.push(Edge(chain.vertices[k], chain.vertices[(k + 1) % n]));
        }
    }
    edges
}

/// Content hash of an edge list: SHA-256 over the `i j` body lines
/// exactly as written to the topology file.
pub fn topology_content_hash(edges: &[Edge]) -> String {
    let mut hasher = Sha256::new();
    for e in edges {
        hasher.update(format!("{} {}\n", e.0, e.1).as_bytes());
    }
    hex::encode(hasher.finalize())
}

fn parse_topology(text: &str, origin: &str) -> Result<Vec<Edge>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Topology {
        path: origin.to_string(),
        message: "file is empty".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[0] != "emofusion-face-topology" {
        return Err(Error::Topology {
            path: origin.to_string(),
            message: format!("bad header line '{header}'"),
        });
    }
    let version = fields[1];
    let declared_hash = fields[2].strip_prefix("sha256:").ok_or_else(|| Error::Topology {
        path: origin.to_string(),
        message: "header hash field missing 'sha256:' prefix".into(),
    })?;

    let mut edges = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Topology {
                    path: origin.to_string(),
                    message: format!("line {}: expected 'i j'", lineno + 2),
                })
            }
        };
        let a: u16 = a.parse().map_err(|_| Error::Topology {
            path: origin.to_string(),
            message: format!("line {}: bad index '{a}'", lineno + 2),
        })?;
        let b: u16 = b.parse().map_err(|_| Error::Topology {
            path: origin.to_string(),
            message: format!("line {}: bad index '{b}'", lineno + 2),
        })?;
        if a as usize >= NUM_LANDMARKS || b as usize >= NUM_LANDMARKS {
            return Err(Error::Topology {
                path: origin.to_string(),
                message: format!("line {}: index out of range", lineno + 2),
            });
        }
        if a == b {
            return Err(Error::Topology {
                path: origin.to_string(),
                message: format!("line {}: self-loop {a} {a}", lineno + 2),
            });
        }
        edges.push(Edge(a, b));
    }

    let actual_hash = topology_content_hash(&edges);
    if actual_hash != declared_hash {
        return Err(Error::Topology {
            path: origin.to_string(),
            message: format!("content hash mismatch: header {declared_hash}, body {actual_hash}"),
        });
    }
    if version != TOPOLOGY_VERSION {
        return Err(Error::Topology {
            path: origin.to_string(),
            message: format!("unsupported version '{version}' (supported: {TOPOLOGY_VERSION})"),
        });
    }

    let mut seen = std::collections::HashSet::new();
    for e in &edges {
        if !seen.insert(e.normalized()) {
            return Err(Error::Topology {
                path: origin.to_string(),
                message: format!("duplicate edge {} {}", e.0, e.1),
            });
        }
    }
    Ok(edges)
}

/// Returns the fixed contour edge list from the embedded committed data
/// file, verifying its header hash. Deterministic: every call yields the
/// same list.
pub fn build_topology() -> Result<Vec<Edge>> {
    parse_topology(TOPOLOGY_FILE, TOPOLOGY_FILE_NAME)
}

/// Loads and verifies a topology file from disk.
pub fn load_topology_file(path: &Path) -> Result<Vec<Edge>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Topology {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_topology(&text, &path.display().to_string())
}

/// Writes an edge list in the topology file format (header with version
/// and content hash, then one `i j` pair per line).
pub fn write_topology_file(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut out = format!(
        "emofusion-face-topology {TOPOLOGY_VERSION} sha256:{}\n",
        topology_content_hash(edges)
    );
    for e in edges {
        out.push_str(&format!("{} {}\n", e.0, e.1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn build_topology_is_deterministic_and_valid() {
        let a = build_topology().unwrap();
        let b = build_topology().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 124);

        let mut seen = HashSet::new();
        for e in &a {
            assert_ne!(e.0, e.1);
            assert!((e.0 as usize) < NUM_LANDMARKS && (e.1 as usize) < NUM_LANDMARKS);
            assert!(seen.insert(e.normalized()), "duplicate edge {e:?}");
        }
    }

    #[test]
    fn committed_file_matches_chain_constants() {
        let from_chains = edges_from_chains();
        let from_file = build_topology().unwrap();
        assert_eq!(from_chains, from_file);
    }

    #[test]
    fn degree_histogram_matches_independent_parser() {
        // Independent parse: split every body line ourselves and histogram
        // the node degrees, then compare against build_topology().
        let mut deg_file: HashMap<u16, usize> = HashMap::new();
        for line in TOPOLOGY_FILE.lines().skip(1) {
            let mut it = line.split_whitespace();
            let a: u16 = it.next().unwrap().parse().unwrap();
            let b: u16 = it.next().unwrap().parse().unwrap();
            *deg_file.entry(a).or_default() += 1;
            *deg_file.entry(b).or_default() += 1;
        }
        let mut deg_built: HashMap<u16, usize> = HashMap::new();
        for e in build_topology().unwrap() {
            *deg_built.entry(e.0).or_default() += 1;
            *deg_built.entry(e.1).or_default() += 1;
        }
        assert_eq!(deg_file, deg_built);

        let mut hist: HashMap<usize, usize> = HashMap::new();
        for v in 0..NUM_LANDMARKS as u16 {
            *hist.entry(deg_built.get(&v).copied().unwrap_or(0)).or_default() += 1;
        }
        assert_eq!(hist.get(&0), Some(&340));
        assert_eq!(hist.get(&1), Some(&8));
        assert_eq!(hist.get(&2), Some(&120));
    }

    #[test]
    fn connected_components_are_exactly_the_contour_chains() {
        // Union-find over the touched vertices.
        let edges = build_topology().unwrap();
        let mut parent: HashMap<u16, u16> = HashMap::new();
        fn find(parent: &mut HashMap<u16, u16>, x: u16) -> u16 {
            let p = *parent.entry(x).or_insert(x);
            if p == x {
                x
            } else {
                let r = find(parent, p);
                parent.insert(x, r);
                r
            }
        }
        for e in &edges {
            let (ra, rb) = (find(&mut parent, e.0), find(&mut parent, e.1));
            if ra != rb {
                parent.insert(ra, rb);
            }
        }
        let mut components: HashMap<u16, HashSet<u16>> = HashMap::new();
        let touched: Vec<u16> = parent.keys().copied().collect();
        for v in touched {
            let r = find(&mut parent, v);
            components.entry(r).or_default().insert(v);
        }
        let got: HashSet<Vec<u16>> = components
            .values()
            .map(|s| {
                let mut v: Vec<u16> = s.iter().copied().collect();
                v.sort_unstable();
                v
            })
            .collect();
        let want: HashSet<Vec<u16>> = CONTOUR_CHAINS
            .iter()
            .map(|c| {
                let mut v = c.vertices.to_vec();
                v.sort_unstable();
                v
            })
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn corrupt_file_is_rejected_with_origin() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.txt");
        let mut edges = edges_from_chains();
        write_topology_file(&path, &edges).unwrap();
        assert_eq!(load_topology_file(&path).unwrap(), edges);

        // Flip one index without updating the header hash.
        edges[0] = Edge(5, 6);
        let body: String = edges.iter().map(|e| format!("{} {}\n", e.0, e.1)).collect();
        let good_header = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        std::fs::write(&path, format!("{good_header}\n{body}")).unwrap();
        let err = load_topology_file(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("topo.txt"), "error should name the file: {msg}");
        assert!(msg.contains("hash mismatch"), "unexpected error: {msg}");
    }
}
