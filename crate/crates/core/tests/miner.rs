use std::collections::BTreeMap;

use privloc::java::{parse_java_method, AstNode, Span};
use privloc::miner::{extract_ast_paths, extract_paths, AstPath};
use proptest::prelude::*;

fn t(kind: &str, text: &str, col: usize) -> AstNode {
    AstNode::terminal(kind, text, Span::new(1, col, 1, col))
}

fn nt(kind: &str, children: Vec<AstNode>) -> AstNode {
    let span = children
        .iter()
        .map(|c| c.span)
        .reduce(Span::join)
        .unwrap();
    AstNode {
        kind: kind.into(),
        text: String::new(),
        children,
        span,
    }
}

#[test]
fn two_terminals_on_a_spine() {
    // A(B(C(x, y))) has a 3-node spine but x and y meet at C
    let root = nt("A", vec![nt("B", vec![nt("C", vec![t("N", "x", 1), t("N", "y", 2)])])]);
    let paths = extract_paths(&root, 8);
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].nonterminals, ["C"]);

    // x under A→B→C, y directly under A: walk C, B, A
    let root = nt("A", vec![nt("B", vec![nt("C", vec![t("N", "x", 1)])]), t("N", "y", 2)]);
    let paths = extract_paths(&root, 8);
    assert_eq!(paths.len(), 1);
    assert_eq!(paths[0].nonterminals, ["C", "B", "A"]);
    assert_eq!((paths[0].start_terminal.as_str(), paths[0].end_terminal.as_str()), ("x", "y"));
}

#[test]
fn fewer_than_two_terminals() {
    assert!(extract_paths(&t("N", "x", 1), 8).is_empty());
    let root = nt("A", vec![t("N", "x", 1)]);
    assert!(extract_paths(&root, 8).is_empty());
}

#[test]
fn long_paths_are_dropped_not_truncated() {
    // x at depth 5, y at depth 5 in separate branches: 5 + 5 - 1 = 9 nodes
    fn chain(depth: usize, leaf: AstNode) -> AstNode {
        (0..depth).fold(leaf, |acc, d| nt(&format!("K{d}"), vec![acc]))
    }
    let root = nt("R", vec![chain(4, t("N", "x", 1)), chain(4, t("N", "y", 2))]);
    assert!(extract_paths(&root, 8).is_empty());
    let paths = extract_paths(&root, 9);
    assert_eq!(paths[0].nonterminals.len(), 9);
}

#[test]
fn location_snippet_has_api_path() {
    let m = parse_java_method(
        "Location getLocation(LocationManager lm) {\n    Location l = lm.getLastKnownLocation(provider);\n    return l;\n}",
    )
    .unwrap();
    let paths = extract_ast_paths(&m, 8);
    let api: Vec<_> = paths
        .iter()
        .filter(|p| p.start_terminal == "getLastKnownLocation" || p.end_terminal == "getLastKnownLocation")
        .collect();
    assert!(!api.is_empty());
    // receiver → method name: SimpleName leaves meet at the invocation
    assert!(api
        .iter()
        .any(|p| p.start_terminal == "lm" && p.nonterminals == ["MethodInvocation"]));
    for p in &paths {
        assert!(!p.nonterminals.is_empty() && p.nonterminals.len() <= 8);
    }
}

#[test]
fn reparse_gives_identical_paths() {
    let src = "void f(int a) { if (a > 0) { g(a, \"s\"); } else { h = a * 2; } }";
    let a = extract_ast_paths(&parse_java_method(src).unwrap(), 8);
    let b = extract_ast_paths(&parse_java_method(src).unwrap(), 8);
    assert_eq!(a, b);
}

// ---- brute-force oracle ---------------------------------------------------

/// Flattened tree with parent links.
struct Flat {
    kind: Vec<String>,
    text: Vec<String>,
    parent: Vec<Option<usize>>,
    terminals: Vec<usize>,
}

fn flatten(root: &AstNode) -> Flat {
    fn go(n: &AstNode, parent: Option<usize>, f: &mut Flat) {
        let id = f.kind.len();
        f.kind.push(n.kind.clone());
        f.text.push(n.text.clone());
        f.parent.push(parent);
        if n.children.is_empty() {
            f.terminals.push(id);
        }
        for c in &n.children {
            go(c, Some(id), f);
        }
    }
    let mut f = Flat {
        kind: vec![],
        text: vec![],
        parent: vec![],
        terminals: vec![],
    };
    go(root, None, &mut f);
    f
}

fn brute_force(root: &AstNode, max: usize) -> BTreeMap<(String, Vec<String>, String), usize> {
    let f = flatten(root);
    let up = |mut n: usize| {
        let mut v = vec![n];
        while let Some(p) = f.parent[n] {
            v.push(p);
            n = p;
        }
        v
    };
    let mut out = BTreeMap::new();
    for (i, &a) in f.terminals.iter().enumerate() {
        for &b in &f.terminals[i + 1..] {
            let ua = up(a);
            let ub = up(b);
            let lca = *ua.iter().find(|x| ub.contains(x)).unwrap();
            let mut walk: Vec<usize> = ua[1..].iter().take_while(|&&x| x != lca).copied().collect();
            walk.push(lca);
            let down: Vec<usize> = ub[1..].iter().take_while(|&&x| x != lca).copied().collect();
            walk.extend(down.into_iter().rev());
            if walk.len() <= max {
                let key = (
                    f.text[a].clone(),
                    walk.iter().map(|&n| f.kind[n].clone()).collect(),
                    f.text[b].clone(),
                );
                *out.entry(key).or_default() += 1;
            }
        }
    }
    out
}

fn as_multiset(paths: &[AstPath]) -> BTreeMap<(String, Vec<String>, String), usize> {
    let mut out = BTreeMap::new();
    for p in paths {
        *out
            .entry((p.start_terminal.clone(), p.nonterminals.clone(), p.end_terminal.clone()))
            .or_default() += 1;
    }
    out
}

/// Random trees of at most `budget` nodes, leaves numbered left to right.
fn arb_tree(budget: usize) -> impl Strategy<Value = AstNode> {
    prop::collection::vec(0usize..4, 1..budget).prop_map(|shape| {
        // shape[k] = number of children of the k-th non-terminal (0 = leaf)
        let mut it = shape.into_iter();
        let mut counter = 0usize;
        let mut left = 30usize;
        fn build(it: &mut impl Iterator<Item = usize>, counter: &mut usize, left: &mut usize, depth: usize) -> AstNode {
            *left = left.saturating_sub(1);
            let arity = it.next().unwrap_or(0).min(*left);
            if arity == 0 || depth > 12 {
                *counter += 1;
                return AstNode::terminal(
                    "Leaf",
                    format!("t{}", *counter % 5),
                    Span::new(1, *counter, 1, *counter),
                );
            }
            let mut children = Vec::new();
            for _ in 0..arity {
                if *left == 0 {
                    break;
                }
                children.push(build(it, counter, left, depth + 1));
            }
            if children.is_empty() {
                *counter += 1;
                return AstNode::terminal("Leaf", "t", Span::new(1, *counter, 1, *counter));
            }
            let span = children.iter().map(|c| c.span).reduce(Span::join).unwrap();
            AstNode {
                kind: format!("K{}", depth % 4),
                text: String::new(),
                children,
                span,
            }
        }
        build(&mut it, &mut counter, &mut left, 0)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_brute_force(root in arb_tree(30), max in 1usize..10) {
        prop_assert!(root.node_count() <= 30);
        let paths = extract_paths(&root, max);
        prop_assert_eq!(as_multiset(&paths), brute_force(&root, max));
        let terminals: Vec<_> = root.terminals().into_iter().map(|t| t.span).collect();
        for p in &paths {
            prop_assert!(p.nonterminals.len() <= max && !p.nonterminals.is_empty());
            let s = terminals.iter().position(|x| Some(*x) == p.start_span).unwrap();
            let e = terminals.iter().position(|x| Some(*x) == p.end_span).unwrap();
            prop_assert!(s < e);
        }
    }
}
