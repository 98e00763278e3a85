use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Lowercase and turn spaces into underscores.
pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase().replace(' ', "_")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeLine {
    id: String,
    #[serde(default)]
    lemmas: Vec<String>,
    #[serde(default)]
    parents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub lemmas: BTreeSet<String>,
    pub parents: Vec<usize>,
}

/// A hypernym DAG with lemma lookup.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    by_id: HashMap<String, usize>,
    by_lemma: HashMap<String, Vec<usize>>,
    roots: Vec<usize>,
    depth: Vec<usize>,
}

impl Taxonomy {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        parse_taxonomy_named(BufReader::new(f), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn index(&self, id: &str) -> Result<usize> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::Lookup(format!("unknown taxonomy node `{id}`")))
    }

    pub fn root_ids(&self) -> Vec<&str> {
        self.roots.iter().map(|&r| self.nodes[r].id.as_str()).collect()
    }

    /// Nodes carrying `label` as a lemma (after normalization), sorted.
    pub fn lookup(&self, label: &str) -> &[usize] {
        self.by_lemma.get(&normalize_label(label)).map_or(&[], Vec::as_slice)
    }

    /// `1 +` length of the shortest parent path to a root.
    pub fn depth(&self, id: &str) -> Result<usize> {
        Ok(self.depth[self.index(id)?])
    }

    pub fn depth_of(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// `i` and every node reachable through parent links.
    pub fn ancestors(&self, i: usize) -> HashSet<usize> {
        let mut seen = HashSet::from([i]);
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            for &p in &self.nodes[n].parents {
                if seen.insert(p) {
                    stack.push(p);
                }
            }
        }
        seen
    }

    pub fn wu_palmer(&self, a: &str, b: &str) -> Result<f64> {
        self.wu_palmer_idx(self.index(a)?, self.index(b)?)
    }

    /// `2·depth(lcs) / (depth(a) + depth(b))`, `lcs` the deepest common
    /// ancestor. Capped at 1: with shortest-path depths in a DAG an ancestor
    /// can be reported deeper than its descendant.
    pub fn wu_palmer_idx(&self, a: usize, b: usize) -> Result<f64> {
        let (aa, ab) = (self.ancestors(a), self.ancestors(b));
        let lcs = aa
            .intersection(&ab)
            .copied()
            .max_by_key(|&n| (self.depth[n], std::cmp::Reverse(n)))
            .ok_or_else(|| {
                Error::Domain(format!(
                    "`{}` and `{}` share no common ancestor",
                    self.nodes[a].id, self.nodes[b].id
                ))
            })?;
        let sim = 2.0 * self.depth[lcs] as f64 / (self.depth[a] + self.depth[b]) as f64;
        Ok(sim.min(1.0))
    }
}

pub fn parse_taxonomy(reader: impl BufRead) -> Result<Taxonomy> {
    parse_taxonomy_named(reader, "<taxonomy>")
}

fn parse_taxonomy_named(reader: impl BufRead, source: &str) -> Result<Taxonomy> {
    let mut raw: Vec<NodeLine> = Vec::new();
    let mut by_id = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let n: NodeLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(source, format!("line {}: {e}", lineno + 1)))?;
        if by_id.insert(n.id.clone(), raw.len()).is_some() {
            return Err(Error::format(source, format!("duplicate node id `{}`", n.id)));
        }
        raw.push(n);
    }
    if raw.is_empty() {
        return Err(Error::format(source, "taxonomy has no nodes"));
    }
    let mut nodes = Vec::with_capacity(raw.len());
    for n in raw {
        let parents = n
            .parents
            .iter()
            .map(|p| {
                by_id
                    .get(p)
                    .copied()
                    .ok_or_else(|| Error::format(source, format!("node `{}` has unknown parent `{p}`", n.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        nodes.push(Node {
            lemmas: n.lemmas.iter().map(|l| normalize_label(l)).collect(),
            id: n.id,
            parents,
        });
    }
    if let Some(bad) = find_cycle(&nodes) {
        return Err(Error::format(source, format!("cycle through node `{}`", nodes[bad].id)));
    }
    let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].parents.is_empty()).collect();
    let mut children = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for &p in &n.parents {
            children[p].push(i);
        }
    }
    let mut depth = vec![0usize; nodes.len()];
    let mut queue: VecDeque<usize> = roots.iter().copied().collect();
    roots.iter().for_each(|&r| depth[r] = 1);
    while let Some(n) = queue.pop_front() {
        for &c in &children[n] {
            if depth[c] == 0 {
                depth[c] = depth[n] + 1;
                queue.push_back(c);
            }
        }
    }
    let mut by_lemma: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        for l in &n.lemmas {
            by_lemma.entry(l.clone()).or_default().push(i);
        }
    }
    Ok(Taxonomy {
        nodes,
        by_id,
        by_lemma,
        roots,
        depth,
    })
}

/// A node on a parent cycle, if any.
fn find_cycle(nodes: &[Node]) -> Option<usize> {
    // 0 unvisited, 1 on stack, 2 done
    let mut state = vec![0u8; nodes.len()];
    for start in 0..nodes.len() {
        if state[start] != 0 {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        state[start] = 1;
        while let Some(&mut (n, ref mut next)) = stack.last_mut() {
            if let Some(&p) = nodes[n].parents.get(*next) {
                *next += 1;
                match state[p] {
                    0 => {
                        state[p] = 1;
                        stack.push((p, 0));
                    }
                    1 => return Some(p),
                    _ => {}
                }
            } else {
                state[n] = 2;
                stack.pop();
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Taxonomy> {
        parse_taxonomy(s.as_bytes())
    }

    const TOY: &str = r#"{"id": "entity", "lemmas": ["entity"], "parents": []}
{"id": "animal", "lemmas": ["animal"], "parents": ["entity"]}
{"id": "dog", "lemmas": ["dog", "domestic dog"], "parents": ["animal"]}
{"id": "cat", "lemmas": ["cat"], "parents": ["animal"]}
{"id": "fish", "lemmas": ["fish"], "parents": ["entity"]}
"#;

    #[test]
    fn chain_depths() {
        let t = parse("{\"id\":\"r\",\"lemmas\":[],\"parents\":[]}\n{\"id\":\"c\",\"lemmas\":[],\"parents\":[\"r\"]}").unwrap();
        assert_eq!(t.depth("r").unwrap(), 1);
        assert_eq!(t.depth("c").unwrap(), 2);
        assert!(t.depth("x").is_err());
    }

    #[test]
    fn toy_similarities() {
        let t = parse(TOY).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t.root_ids(), vec!["entity"]);
        assert_eq!(t.wu_palmer("dog", "cat").unwrap(), 2.0 / 3.0);
        assert_eq!(t.wu_palmer("cat", "dog").unwrap(), 2.0 / 3.0);
        assert_eq!(t.wu_palmer("dog", "fish").unwrap(), 0.4);
        assert_eq!(t.wu_palmer("fish", "fish").unwrap(), 1.0);
        assert_eq!(t.lookup("Domestic Dog"), &[2]);
    }

    #[test]
    fn diamond_uses_shortest_path() {
        // d has parents b (depth 2) and c (depth 3 via b2)
        let t = parse(
            r#"{"id":"r","parents":[]}
{"id":"b","parents":["r"]}
{"id":"b2","parents":["r"]}
{"id":"c","parents":["b2"]}
{"id":"x","parents":["b","c"]}
{"id":"d","parents":["x"]}"#,
        )
        .unwrap();
        assert_eq!(t.depth("x").unwrap(), 3);
        assert_eq!(t.depth("d").unwrap(), 4);
    }

    #[test]
    fn structural_errors_name_the_node() {
        let e = parse(r#"{"id":"a","parents":["a"]}"#).unwrap_err().to_string();
        assert!(e.contains("cycle") && e.contains("`a`"), "{e}");
        let e = parse("{\"id\":\"a\",\"parents\":[]}\n{\"id\":\"a\",\"parents\":[]}").unwrap_err().to_string();
        assert!(e.contains("duplicate") && e.contains("`a`"), "{e}");
        let e = parse(r#"{"id":"a","parents":["zz"]}"#).unwrap_err().to_string();
        assert!(e.contains("unknown parent `zz`"), "{e}");
        let e = parse(
            "{\"id\":\"r\",\"parents\":[]}\n{\"id\":\"a\",\"parents\":[\"r\",\"b\"]}\n{\"id\":\"b\",\"parents\":[\"a\"]}",
        )
        .unwrap_err();
        assert!(e.to_string().contains("cycle"));
    }

    #[test]
    fn disjoint_roots_are_a_domain_error() {
        let t = parse("{\"id\":\"r1\",\"parents\":[]}\n{\"id\":\"r2\",\"parents\":[]}").unwrap();
        assert!(matches!(t.wu_palmer("r1", "r2"), Err(Error::Domain(_))));
    }
}
