use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Id of the synthetic root that every parentless node hangs from.
pub const ROOT: &str = "[ROOT]";

/// Rooted DAG over index labels. A node may have several parents.
#[derive(Debug, Clone)]
pub struct HierarchyTree {
    names: Vec<String>,
    ids: HashMap<String, usize>,
    parents: Vec<Vec<usize>>,
    depth: Vec<usize>,
    // ancestors-or-self, root included
    closure: Vec<BTreeSet<usize>>,
}

impl HierarchyTree {
    /// Builds the DAG from `(child, parent)` edges. When `nodes` is given,
    /// every edge endpoint must be listed there; otherwise the node set is
    /// the set of endpoints.
    pub fn from_edges(edges: &[(String, String)], nodes: Option<&[String]>) -> Result<Self> {
        let mut names = vec![ROOT.to_string()];
        let mut ids = HashMap::from([(ROOT.to_string(), 0usize)]);
        let mut intern = |n: &str, names: &mut Vec<String>| -> usize {
            *ids.entry(n.to_string()).or_insert_with(|| {
                names.push(n.to_string());
                names.len() - 1
            })
        };
        if let Some(list) = nodes {
            for n in list {
                if n == ROOT {
                    return Err(Error::Validation(format!("node id {ROOT} is reserved")));
                }
                intern(n, &mut names);
            }
        }
        let listed = nodes.map(|l| l.iter().map(String::as_str).collect::<BTreeSet<_>>());
        let mut edge_ids = Vec::with_capacity(edges.len());
        for (child, parent) in edges {
            for end in [child, parent] {
                if end == ROOT {
                    return Err(Error::Validation(format!("node id {ROOT} is reserved")));
                }
                if let Some(l) = &listed {
                    if !l.contains(end.as_str()) {
                        return Err(Error::Unknown {
                            kind: "hierarchy node (dangling edge endpoint)",
                            id: end.clone(),
                        });
                    }
                }
            }
            let c = intern(child, &mut names);
            let p = intern(parent, &mut names);
            edge_ids.push((c, p));
        }
        let n = names.len();
        let ids: HashMap<String, usize> = names.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let mut parents = vec![Vec::new(); n];
        for (c, p) in edge_ids {
            if !parents[c].contains(&p) {
                parents[c].push(p);
            }
        }
        if let Some(cycle) = find_cycle(&parents) {
            return Err(Error::HierarchyCycle(cycle.into_iter().map(|i| names[i].clone()).collect()));
        }
        for ps in parents.iter_mut().skip(1) {
            if ps.is_empty() {
                ps.push(0);
            }
            ps.sort_unstable();
        }

        let mut children = vec![Vec::new(); n];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        // shortest path from the root
        let mut depth = vec![usize::MAX; n];
        depth[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                if depth[c] == usize::MAX {
                    depth[c] = depth[u] + 1;
                    queue.push_back(c);
                }
            }
        }
        if let Some(bad) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(Error::Validation(format!("node `{}` unreachable from root", names[bad])));
        }

        let mut closure: Vec<Option<BTreeSet<usize>>> = vec![None; n];
        for i in 0..n {
            ancestor_closure(i, &parents, &mut closure);
        }
        Ok(Self {
            names,
            ids,
            parents,
            depth,
            closure: closure.into_iter().map(Option::unwrap).collect(),
        })
    }

    /// Every node a direct child of the root.
    pub fn flat<S: AsRef<str>>(nodes: &[S]) -> Result<Self> {
        let list: Vec<String> = nodes.iter().map(|s| s.as_ref().to_string()).collect();
        Self::from_edges(&[], Some(&list))
    }

    /// Reads a `child<TAB>parent` edge list.
    pub fn load(path: impl AsRef<Path>, nodes: Option<&[String]>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match line.split('\t').map(str::trim).collect::<Vec<_>>().as_slice() {
                [c, p] if !c.is_empty() && !p.is_empty() => edges.push((c.to_string(), p.to_string())),
                _ => {
                    return Err(Error::Validation(format!(
                        "{}:{}: expected child<TAB>parent",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        Self::from_edges(&edges, nodes)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains_key(id)
    }

    /// Node count, root excluded.
    pub fn len(&self) -> usize {
        self.names.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.names.iter().skip(1).map(String::as_str)
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.ids.get(id).copied().ok_or_else(|| Error::Unknown {
            kind: "hierarchy node",
            id: id.to_string(),
        })
    }

    pub fn depth(&self, id: &str) -> Result<usize> {
        Ok(self.depth[self.index(id)?])
    }

    pub fn parents(&self, id: &str) -> Result<Vec<&str>> {
        Ok(self.parents[self.index(id)?].iter().map(|&p| self.names[p].as_str()).collect())
    }

    /// Strict ancestors of `id`, root included.
    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<&str>> {
        let i = self.index(id)?;
        Ok(self.closure[i]
            .iter()
            .filter(|&&a| a != i)
            .map(|&a| self.names[a].as_str())
            .collect())
    }

    /// Deepest common ancestor-or-self of `a` and `b`; ties go to the
    /// lexicographically smallest id.
    pub fn lca(&self, a: &str, b: &str) -> Result<&str> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        Ok(&self.names[self.lca_idx(ia, ib)])
    }

    pub(crate) fn lca_idx(&self, a: usize, b: usize) -> usize {
        self.closure[a]
            .intersection(&self.closure[b])
            .copied()
            .max_by(|&x, &y| {
                self.depth[x]
                    .cmp(&self.depth[y])
                    .then_with(|| self.names[y].cmp(&self.names[x]))
            })
            .unwrap_or(0)
    }

    pub(crate) fn idx(&self, id: &str) -> Result<usize> {
        self.index(id)
    }

    pub(crate) fn depth_idx(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub(crate) fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Ancestors-or-self of `node` that are also descendants-or-self of `top`.
    pub(crate) fn path_to(&self, node: usize, top: usize) -> impl Iterator<Item = usize> + '_ {
        self.closure[node]
            .iter()
            .copied()
            .filter(move |&a| self.closure[a].contains(&top))
    }
}

fn ancestor_closure(i: usize, parents: &[Vec<usize>], memo: &mut Vec<Option<BTreeSet<usize>>>) {
    if memo[i].is_some() {
        return;
    }
    let mut set = BTreeSet::from([i]);
    for &p in &parents[i] {
        ancestor_closure(p, parents, memo);
        set.extend(memo[p].as_ref().unwrap().iter().copied());
    }
    memo[i] = Some(set);
}

/// Returns one cycle along parent edges, if any.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = parents.len();
    let mut mark = vec![Mark::New; n];
    let mut stack: Vec<usize> = Vec::new();
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        // iterative dfs: (node, next parent index)
        let mut frames = vec![(start, 0usize)];
        mark[start] = Mark::Active;
        stack.push(start);
        while let Some(&mut (u, ref mut next)) = frames.last_mut() {
            if *next < parents[u].len() {
                let p = parents[u][*next];
                *next += 1;
                match mark[p] {
                    Mark::Active => {
                        let from = stack.iter().position(|&x| x == p).unwrap();
                        return Some(stack[from..].to_vec());
                    }
                    Mark::New => {
                        mark[p] = Mark::Active;
                        stack.push(p);
                        frames.push((p, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                stack.pop();
                frames.pop();
            }
        }
    }
    None
}
