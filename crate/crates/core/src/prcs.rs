//! Permission-requiring code segments: methods that call a permission-guarded
//! API, extended with up to two call-graph successors ("hops").

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::java::{parse_java_file, type_text, AstNode, ClassInfo, MethodAst, Span};

#[derive(Debug, Error)]
pub enum PrcsError {
    #[error("no .java sources found under {0}")]
    NoSourcesFound(PathBuf),
    #[error("API list line {line}: `{entry}` is not a dotted method name")]
    InvalidApi { line: usize, entry: String },
    #[error("API list is empty")]
    EmptyApiList,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Fully-qualified permission-requiring API methods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSignatureList {
    entries: BTreeSet<String>,
}

fn is_java_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

impl ApiSignatureList {
    pub fn new<I, S>(entries: I) -> Result<Self, PrcsError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_numbered(entries.into_iter().enumerate().map(|(i, e)| (i + 1, e.into())))
    }

    /// `apis.txt`: one name per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, PrcsError> {
        Self::from_numbered(text.lines().enumerate().filter_map(|(i, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then(|| (i + 1, line.to_string()))
        }))
    }

    fn from_numbered(entries: impl Iterator<Item = (usize, String)>) -> Result<Self, PrcsError> {
        let mut set = BTreeSet::new();
        for (line, entry) in entries {
            let parts: Vec<_> = entry.split('.').collect();
            if parts.len() < 2 || !parts.iter().all(|p| is_java_ident(p)) {
                return Err(PrcsError::InvalidApi { line, entry });
            }
            set.insert(entry);
        }
        if set.is_empty() {
            return Err(PrcsError::EmptyApiList);
        }
        Ok(Self { entries: set })
    }

    pub fn load(path: &Path) -> Result<Self, PrcsError> {
        let text = std::fs::read_to_string(path).map_err(|source| PrcsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    /// Entries whose method name is `name`, as (simple class name, full entry).
    fn by_method(&self, name: &str) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|e| {
                let (owner, method) = e.rsplit_once('.')?;
                (method == name).then(|| (owner.rsplit('.').next().unwrap_or(owner), e.as_str()))
            })
            .collect()
    }
}

/// A call edge between consecutive hops.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: usize,
    pub callee: usize,
    pub call_site: Span,
}

/// Up to three call-linked methods; hop 1 calls the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub hops: Vec<MethodAst>,
    pub label: Option<bool>,
    pub call_edges: Vec<CallEdge>,
}

/// A method invocation found in a method body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub name: String,
    pub arity: usize,
    /// The receiver when it is a plain or `this.`-qualified name.
    pub receiver: Option<String>,
    pub span: Span,
}

/// First non-blank character after `span` in the method's text.
fn char_after(method: &MethodAst, span: Span) -> Option<char> {
    let mut line = span.end_line;
    let mut skip = span.end_col;
    loop {
        let text = method.line_text(line)?;
        if let Some(c) = text.chars().skip(skip).find(|c| !c.is_whitespace()) {
            return Some(c);
        }
        line += 1;
        skip = 0;
    }
}

fn receiver_name(node: &AstNode) -> Option<String> {
    match node.kind.as_str() {
        "SimpleName" => Some(node.text.clone()),
        "FieldAccess" if node.children.len() == 2 && node.children[0].kind == "ThisExpression" => {
            Some(node.children[1].text.clone())
        }
        _ => None,
    }
}

/// Invocations in source order of their name token.
pub fn call_sites(method: &MethodAst) -> Vec<CallSite> {
    let mut out = Vec::new();
    method.root.walk(&mut |n| {
        if n.kind != "MethodInvocation" && n.kind != "SuperMethodInvocation" {
            return;
        }
        // the name is the direct SimpleName child followed by `(`
        let idx = n
            .children
            .iter()
            .position(|c| c.kind == "SimpleName" && char_after(method, c.span) == Some('('));
        let Some(idx) = idx else { return };
        let receiver = match (idx, n.kind.as_str()) {
            (1, "MethodInvocation") => receiver_name(&n.children[0]),
            _ => None,
        };
        out.push(CallSite {
            name: n.children[idx].text.clone(),
            arity: n.children.len() - idx - 1,
            receiver,
            span: n.children[idx].span,
        });
    });
    out.sort_by_key(|c| (c.span.start_line, c.span.start_col));
    out
}

/// Declared simple types of parameters and locals in `method`.
fn local_types(method: &MethodAst) -> HashMap<String, String> {
    let mut types = HashMap::new();
    method.root.walk(&mut |n| match n.kind.as_str() {
        "SingleVariableDeclaration" if n.children.len() == 2 => {
            types.insert(n.children[1].text.clone(), type_text(&n.children[0]));
        }
        "VariableDeclarationStatement" | "VariableDeclarationExpression" | "FieldDeclaration" => {
            let ty = type_text(&n.children[0]);
            for frag in &n.children[1..] {
                if let Some(name) = frag.children.first() {
                    types.insert(name.text.clone(), ty.clone());
                }
            }
        }
        _ => {}
    });
    types
}

fn simple(ty: &str) -> &str {
    ty.rsplit('.').next().unwrap_or(ty)
}

/// The API entries that call sites of `method` resolve to, with the site.
pub fn api_calls<'a>(
    method: &MethodAst,
    classes: &[ClassInfo],
    apis: &'a ApiSignatureList,
) -> Vec<(CallSite, &'a str)> {
    let mut types = HashMap::new();
    if let Some(c) = method.class_name.as_ref().and_then(|n| classes.iter().find(|c| &c.name == n)) {
        for (f, t) in &c.fields {
            types.insert(f.clone(), t.clone());
        }
    }
    // locals shadow fields
    types.extend(local_types(method));
    let mut out = Vec::new();
    for site in call_sites(method) {
        let hit = apis.by_method(&site.name).into_iter().find(|(owner, _)| match &site.receiver {
            Some(r) => match types.get(r) {
                Some(t) => simple(t) == *owner,
                // static call on the class itself, or an untyped receiver
                None => true,
            },
            None => true,
        });
        if let Some((_, entry)) = hit {
            out.push((site, entry));
        }
    }
    out
}

/// Which way hops extend from the API-calling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    /// Hop i+1 is called by hop i.
    #[default]
    Callees,
    /// Hop i+1 calls hop i.
    Callers,
}

/// Methods `site` may resolve to: same simple name and argument count.
fn resolve<'m>(site: &CallSite, methods: &'m [MethodAst]) -> Vec<&'m MethodAst> {
    methods
        .iter()
        .filter(|m| m.name == site.name && m.param_count == site.arity)
        .collect()
}

/// Follows outgoing calls from `seed`: at each hop the lexically first call
/// that names a project method (by simple name and argument count) is
/// taken. A call matching several methods ends the chain; calls back into
/// the chain are skipped.
pub fn link_hops(seed: &MethodAst, project_methods: &[MethodAst], max_hops: usize) -> CodeSample {
    link_hops_with(seed, project_methods, max_hops, LinkDirection::Callees)
}

pub fn link_hops_with(
    seed: &MethodAst,
    project_methods: &[MethodAst],
    max_hops: usize,
    direction: LinkDirection,
) -> CodeSample {
    let mut hops = vec![seed.clone()];
    let mut edges = Vec::new();
    while hops.len() < max_hops.clamp(1, 3) {
        let current = hops.last().unwrap();
        let next = match direction {
            LinkDirection::Callees => next_callee(current, &hops, project_methods),
            LinkDirection::Callers => next_caller(current, &hops, project_methods),
        };
        let Some((method, site)) = next else { break };
        let (caller, callee) = match direction {
            LinkDirection::Callees => (hops.len() - 1, hops.len()),
            LinkDirection::Callers => (hops.len(), hops.len() - 1),
        };
        edges.push(CallEdge {
            caller,
            callee,
            call_site: site,
        });
        hops.push(method.clone());
    }
    CodeSample {
        id: seed.qualified_name(),
        hops,
        label: None,
        call_edges: edges,
    }
}

fn next_callee<'m>(
    current: &MethodAst,
    chain: &[MethodAst],
    methods: &'m [MethodAst],
) -> Option<(&'m MethodAst, Span)> {
    for site in call_sites(current) {
        match resolve(&site, methods).as_slice() {
            [] => continue,
            [only] if chain.iter().any(|h| same_method(h, only)) => continue,
            [only] => return Some((only, site.span)),
            _ => return None,
        }
    }
    None
}

/// The first project method (in project order) with a call that resolves
/// unambiguously to `current`.
fn next_caller<'m>(
    current: &MethodAst,
    chain: &[MethodAst],
    methods: &'m [MethodAst],
) -> Option<(&'m MethodAst, Span)> {
    for m in methods {
        if chain.iter().any(|h| same_method(h, m)) {
            continue;
        }
        for site in call_sites(m) {
            if let [only] = resolve(&site, methods).as_slice() {
                if same_method(only, current) {
                    return Some((m, site.span));
                }
            }
        }
    }
    None
}

fn same_method(a: &MethodAst, b: &MethodAst) -> bool {
    a.file == b.file && a.first_line == b.first_line && a.name == b.name
}

/// Every parsed method and type of a source tree.
#[derive(Debug, Clone, Default)]
pub struct Project {
    pub methods: Vec<MethodAst>,
    pub classes: Vec<ClassInfo>,
    /// Files that failed to parse, with the error message.
    pub skipped: Vec<(String, String)>,
}

fn java_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PrcsError> {
    let io = |source| PrcsError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            java_files(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "java") {
            out.push(path);
        }
    }
    Ok(())
}

impl Project {
    /// Parses all `.java` files under `dir` in path order. Unparseable files
    /// are logged and skipped.
    pub fn load(dir: &Path) -> Result<Self, PrcsError> {
        let mut files = Vec::new();
        java_files(dir, &mut files)?;
        if files.is_empty() {
            return Err(PrcsError::NoSourcesFound(dir.to_path_buf()));
        }
        files.sort();
        let mut project = Project::default();
        for path in files {
            let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            let src = std::fs::read_to_string(&path).map_err(|source| PrcsError::Io {
                path: path.clone(),
                source,
            })?;
            match parse_java_file(&src, &rel) {
                Ok(parsed) => {
                    project.methods.extend(parsed.methods);
                    project.classes.extend(parsed.classes);
                }
                Err(e) => {
                    log::warn!("skipping {rel}: {e}");
                    project.skipped.push((rel, e.to_string()));
                }
            }
        }
        Ok(project)
    }

    /// One sample per (method, API call site), hops linked from that method.
    pub fn find_prcs(&self, apis: &ApiSignatureList) -> Vec<CodeSample> {
        self.find_prcs_with(apis, LinkDirection::Callees)
    }

    pub fn find_prcs_with(&self, apis: &ApiSignatureList, direction: LinkDirection) -> Vec<CodeSample> {
        let mut out = Vec::new();
        for m in &self.methods {
            for (site, api) in api_calls(m, &self.classes, apis) {
                let mut sample = link_hops_with(m, &self.methods, 3, direction);
                sample.id = format!(
                    "{}:{}:{}:{}",
                    m.file,
                    site.span.start_line,
                    m.qualified_name(),
                    api.rsplit('.').next().unwrap_or(api)
                );
                out.push(sample);
            }
        }
        out
    }
}

pub fn find_prcs(project_dir: &Path, apis: &ApiSignatureList) -> Result<Vec<CodeSample>, PrcsError> {
    Ok(Project::load(project_dir)?.find_prcs(apis))
}
