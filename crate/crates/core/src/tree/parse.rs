//! Line-oriented tree files.
//!
//! ```text
//! # comment
//! EDGE H X1
//! EDGE H X2
//! EDGE H X3
//! OBS X1
//! OBS X2
//! OBS X3
//! ```
//!
//! `OBS` order fixes the observed index of each node. Anything after `#` is
//! ignored, as are blank lines.

use std::str::FromStr;

use super::{LatentTree, Located, TreeError};

impl FromStr for LatentTree {
    type Err = TreeError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut edges = Vec::new();
        let mut observed = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let parse_err = |message: String| TreeError::Parse { line, message };
            match fields[0] {
                "EDGE" => {
                    if fields.len() != 3 {
                        return Err(parse_err(format!(
                            "EDGE takes exactly two node ids, got {}",
                            fields.len() - 1
                        )));
                    }
                    edges.push(Located {
                        value: (fields[1].to_string(), fields[2].to_string()),
                        line: Some(line),
                    });
                }
                "OBS" => {
                    if fields.len() != 2 {
                        return Err(parse_err(format!(
                            "OBS takes exactly one node id, got {}",
                            fields.len() - 1
                        )));
                    }
                    observed.push(Located { value: fields[1].to_string(), line: Some(line) });
                }
                other => return Err(parse_err(format!("unknown directive `{other}`"))),
            }
        }
        LatentTree::build(edges, observed)
    }
}
