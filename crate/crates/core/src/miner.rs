//! AST path extraction: every terminal-to-terminal walk through the lowest
//! common ancestor, code2seq style.

use serde::{Deserialize, Serialize};

use crate::java::{AstNode, MethodAst, Span};

pub const DEFAULT_MAX_NONTERMINALS: usize = 8;

/// One terminal → LCA → terminal walk.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AstPath {
    pub start_terminal: String,
    /// Kinds along the walk, from the start terminal's parent up to the LCA
    /// and down to the end terminal's parent.
    pub nonterminals: Vec<String>,
    pub end_terminal: String,
    /// Known when the path was mined from source; absent when loaded from a
    /// dataset file.
    pub start_span: Option<Span>,
    pub end_span: Option<Span>,
}

impl AstPath {
    pub fn new(start: impl Into<String>, nonterminals: Vec<String>, end: impl Into<String>) -> Self {
        Self {
            start_terminal: start.into(),
            nonterminals,
            end_terminal: end.into(),
            start_span: None,
            end_span: None,
        }
    }
}

struct Leaf<'a> {
    node: &'a AstNode,
    /// Non-terminal ancestors, root first.
    ancestors: Vec<&'a AstNode>,
}

fn collect<'a>(node: &'a AstNode, stack: &mut Vec<&'a AstNode>, out: &mut Vec<Leaf<'a>>) {
    if node.is_terminal() {
        out.push(Leaf {
            node,
            ancestors: stack.clone(),
        });
        return;
    }
    stack.push(node);
    for c in &node.children {
        collect(c, stack, out);
    }
    stack.pop();
}

/// Paths of a parsed method; see [`extract_paths`].
pub fn extract_ast_paths(method: &MethodAst, max_nonterminals: usize) -> Vec<AstPath> {
    extract_paths(&method.root, max_nonterminals)
}

/// All terminal pairs (i < j in source order) whose connecting walk has at
/// most `max_nonterminals` non-terminals, ordered by (i, j).
pub fn extract_paths(root: &AstNode, max_nonterminals: usize) -> Vec<AstPath> {
    let mut leaves = Vec::new();
    collect(root, &mut Vec::new(), &mut leaves);
    let mut out = Vec::new();
    for i in 0..leaves.len() {
        for j in i + 1..leaves.len() {
            let (a, b) = (&leaves[i], &leaves[j]);
            let common = a
                .ancestors
                .iter()
                .zip(&b.ancestors)
                .take_while(|(x, y)| std::ptr::eq(**x, **y))
                .count();
            // common >= 1 because both hang below the root
            let len = a.ancestors.len() + b.ancestors.len() + 1 - 2 * common;
            if len > max_nonterminals {
                continue;
            }
            let mut nts = Vec::with_capacity(len);
            nts.extend(a.ancestors[common - 1..].iter().rev().map(|n| n.kind.clone()));
            nts.extend(b.ancestors[common..].iter().map(|n| n.kind.clone()));
            out.push(AstPath {
                start_terminal: a.node.text.clone(),
                nonterminals: nts,
                end_terminal: b.node.text.clone(),
                start_span: Some(a.node.span),
                end_span: Some(b.node.span),
            });
        }
    }
    out
}
