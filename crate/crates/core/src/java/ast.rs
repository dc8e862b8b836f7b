use serde::{Deserialize, Serialize};

/// Source region, 1-based lines and columns (columns count chars; end is inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start_line: usize,
    pub start_col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

impl Span {
    pub fn new(start_line: usize, start_col: usize, end_line: usize, end_col: usize) -> Self {
        Self {
            start_line,
            start_col,
            end_line,
            end_col,
        }
    }

    /// Smallest span covering both.
    pub fn join(self, other: Span) -> Span {
        let (start_line, start_col) =
            (self.start_line, self.start_col).min((other.start_line, other.start_col));
        let (end_line, end_col) =
            (self.end_line, self.end_col).max((other.end_line, other.end_col));
        Span {
            start_line,
            start_col,
            end_line,
            end_col,
        }
    }

    pub fn contains(&self, other: &Span) -> bool {
        (self.start_line, self.start_col) <= (other.start_line, other.start_col)
            && (other.end_line, other.end_col) <= (self.end_line, self.end_col)
    }
}

/// A node of a Java AST.
///
/// Terminals carry the identifier or literal lexeme in `text` and have no
/// children; non-terminals have an empty `text` and at least one child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AstNode {
    pub kind: String,
    pub text: String,
    pub children: Vec<AstNode>,
    pub span: Span,
}

impl AstNode {
    pub fn terminal(kind: &str, text: impl Into<String>, span: Span) -> Self {
        Self {
            kind: kind.to_string(),
            text: text.into(),
            children: Vec::new(),
            span,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.children.is_empty()
    }

    /// Terminals in left-to-right order.
    pub fn terminals(&self) -> Vec<&AstNode> {
        let mut out = Vec::new();
        self.collect_terminals(&mut out);
        out
    }

    fn collect_terminals<'a>(&'a self, out: &mut Vec<&'a AstNode>) {
        if self.is_terminal() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_terminals(out);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Pre-order walk.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a AstNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Checks the structural invariants of the whole subtree.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.children.is_empty() {
            if self.text.is_empty() {
                return Err(format!("terminal {} at {:?} has empty text", self.kind, self.span));
            }
        } else {
            if !self.text.is_empty() || self.kind.is_empty() {
                return Err(format!("malformed non-terminal {} at {:?}", self.kind, self.span));
            }
            for c in &self.children {
                if !self.span.contains(&c.span) {
                    return Err(format!(
                        "child {} {:?} escapes parent {} {:?}",
                        c.kind, c.span, self.kind, self.span
                    ));
                }
                c.check_invariants()?;
            }
        }
        Ok(())
    }
}

/// One parsed method ("hop").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodAst {
    pub name: String,
    /// Whole source lines covering the declaration; line `i` (0-based) of this
    /// text is line `first_line + i` of `file`.
    pub source_text: String,
    pub first_line: usize,
    pub root: AstNode,
    pub file: String,
    /// Enclosing type, when parsed from a compilation unit.
    pub class_name: Option<String>,
    pub param_count: usize,
}

impl MethodAst {
    /// Source line `line` (file numbering), if inside this method.
    pub fn line_text(&self, line: usize) -> Option<&str> {
        line.checked_sub(self.first_line)
            .and_then(|i| self.source_text.lines().nth(i))
    }

    pub fn last_line(&self) -> usize {
        self.first_line + self.source_text.lines().count().saturating_sub(1)
    }

    pub fn qualified_name(&self) -> String {
        match &self.class_name {
            Some(c) => format!("{c}.{}", self.name),
            None => self.name.clone(),
        }
    }
}
