use crate::tokenizer::CodeAssignment;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Node {
    /// `(digit, child)` sorted by digit.
    children: Vec<(u32, usize)>,
    item: Option<u32>,
}

/// Prefix tree over every item code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeTrie {
    m: usize,
    nodes: Vec<Node>,
    n_codes: usize,
}

impl CodeTrie {
    pub const ROOT: usize = 0;

    /// Fails on duplicate codes, since a leaf must name exactly one item.
    pub fn new(codes: &CodeAssignment) -> Result<Self> {
        let mut nodes = vec![Node::default()];
        for (item, code) in codes.iter().enumerate() {
            let mut cur = Self::ROOT;
            for &d in code {
                cur = match nodes[cur].children.binary_search_by_key(&d, |c| c.0) {
                    Ok(i) => nodes[cur].children[i].1,
                    Err(i) => {
                        nodes.push(Node::default());
                        let id = nodes.len() - 1;
                        nodes[cur].children.insert(i, (d, id));
                        id
                    }
                };
            }
            if let Some(prev) = nodes[cur].item.replace(item as u32) {
                return Err(Error::Vocabulary(format!(
                    "items {prev} and {item} share code {code:?}"
                )));
            }
        }
        Ok(Self {
            m: codes.m(),
            nodes,
            n_codes: codes.n_items(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_codes(&self) -> usize {
        self.n_codes
    }

    pub fn is_empty(&self) -> bool {
        self.n_codes == 0
    }

    /// Allowed next digits at `node` with the child they lead to.
    pub fn children(&self, node: usize) -> &[(u32, usize)] {
        &self.nodes[node].children
    }

    pub fn child(&self, node: usize, digit: u32) -> Option<usize> {
        let c = &self.nodes[node].children;
        c.binary_search_by_key(&digit, |x| x.0).ok().map(|i| c[i].1)
    }

    /// Node reached by a digit prefix, if the prefix is valid.
    pub fn walk(&self, digits: &[u32]) -> Option<usize> {
        digits.iter().try_fold(Self::ROOT, |n, &d| self.child(n, d))
    }

    /// Item stored at a complete-code node.
    pub fn item(&self, node: usize) -> Option<u32> {
        self.nodes[node].item
    }

    pub fn contains(&self, code: &[u32]) -> bool {
        code.len() == self.m && self.walk(code).and_then(|n| self.item(n)).is_some()
    }

    /// Every stored code with its item, in lexicographic code order.
    pub fn codes(&self) -> Vec<(Vec<u32>, u32)> {
        let mut out = Vec::with_capacity(self.n_codes);
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((n, prefix)) = stack.pop() {
            if let Some(item) = self.nodes[n].item {
                out.push((prefix.clone(), item));
            }
            for &(d, c) in self.nodes[n].children.iter().rev() {
                let mut p = prefix.clone();
                p.push(d);
                stack.push((c, p));
            }
        }
        out
    }
}
