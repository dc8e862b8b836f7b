use std::collections::HashSet;

use privloc::dataset::*;
use privloc::miner::AstPath;
use proptest::prelude::*;

fn path(s: &str, nts: &[&str], e: &str) -> AstPath {
    AstPath::new(s, nts.iter().map(|x| x.to_string()).collect(), e)
}

fn vocab_of(tokens: &[&str]) -> Vocab {
    Vocab::build(tokens.iter().copied(), 1)
}

/// Independent statement of the layout rule.
fn layout_oracle(p: &AstPath, v: &Vocab, tok: bool) -> Vec<u32> {
    let mut out = vec![v.id(&p.start_terminal)];
    let mut middle: Vec<u32> = if tok {
        p.nonterminals.iter().map(|n| v.id(n)).collect()
    } else {
        vec![v.id(&p.nonterminals.join("|"))]
    };
    middle.resize(8, 0);
    out.extend(middle);
    out.push(v.id(&p.end_terminal));
    out.push(0);
    out
}

#[test]
fn tokenized_layout() {
    let v = vocab_of(&["location", "Name", "MethodInvocation", "getLastKnownLocation", "Name|MethodInvocation|Name"]);
    let p = path("location", &["Name", "MethodInvocation", "Name"], "getLastKnownLocation");
    let t = tokenize_path(&p, &v, true).unwrap();
    let (loc, name, mi, api) = (v.id("location"), v.id("Name"), v.id("MethodInvocation"), v.id("getLastKnownLocation"));
    assert_eq!(t, [loc, name, mi, name, 0, 0, 0, 0, 0, api, 0]);
    assert_eq!(t.to_vec(), layout_oracle(&p, &v, true));

    let t = tokenize_path(&p, &v, false).unwrap();
    assert_eq!(t[1], v.id("Name|MethodInvocation|Name"));
    assert!(t[2..9].iter().all(|&x| x == 0));
    assert_eq!(t.to_vec(), layout_oracle(&p, &v, false));
}

#[test]
fn unknown_tokens_are_unk() {
    let v = vocab_of(&["a", "K"]);
    let t = tokenize_path(&path("zzz", &["K"], "a"), &v, true).unwrap();
    assert_eq!(t[0], UNK);
    assert_ne!(t[9], UNK);
}

#[test]
fn too_long_path_is_rejected() {
    let v = vocab_of(&[]);
    let p = path("a", &["K"; 9], "b");
    assert!(matches!(tokenize_path(&p, &v, true), Err(DatasetError::PathTooLong(9))));
}

#[test]
fn vocab_ids_and_file_roundtrip() {
    let v = Vocab::build(["b", "a", "b", "c", "c", "c", "d", "we ird|,tok%"].into_iter().chain(["we ird|,tok%"]), 2);
    assert_eq!(v.token(0), Some(PAD_TOKEN));
    assert_eq!(v.token(1), Some(UNK_TOKEN));
    // most frequent first, ties by text; singletons dropped
    assert_eq!(v.token(2), Some("c"));
    assert_eq!(v.token(3), Some("b"));
    assert_eq!(v.token(4), Some("we ird|,tok%"));
    assert_eq!(v.len(), 5);
    assert_eq!(v.id("a"), UNK);
    assert_eq!(v.count(2), 3);
    let back = Vocab::from_tsv(&v.to_tsv()).unwrap();
    assert_eq!(back, v);
    assert!(Vocab::from_tsv("x\t0\t1\n").is_err());
}

#[test]
fn sampling() {
    let paths: Vec<TokenizedPath> = (0..5u32).map(|i| [i + 2; 11]).collect();
    let rows = sample_paths(&paths, 5, 3);
    let mut sorted = rows.clone();
    sorted.sort();
    assert_eq!(sorted, paths);

    let paths: Vec<TokenizedPath> = (0..80u32).map(|i| [i + 2; 11]).collect();
    let rows = sample_paths(&paths, 100, 9);
    assert_eq!(rows.len(), 100);
    assert!(rows[..80].iter().all(|r| r[0] != 0));
    assert!(rows[80..].iter().all(|r| *r == NULL_PATH));
    assert_eq!(rows, sample_paths(&paths, 100, 9));
    assert_ne!(rows, sample_paths(&paths, 100, 10));
}

#[test]
fn split_sizes() {
    for (n, expect) in [(100, (80, 10, 10)), (10, (8, 1, 1)), (103, (82, 10, 11))] {
        let items: Vec<usize> = (0..n).collect();
        let (a, b, c) = split_dataset(&items, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), expect);
        let all: HashSet<_> = a.iter().chain(&b).chain(&c).collect();
        assert_eq!(all.len(), n);
    }
    assert!(matches!(split_dataset(&[1; 9], 0), Err(DatasetError::TooFewSamples(9))));
}

#[test]
fn embeddings_capture_cooccurrence() {
    // A=2, B=3 always together (with 6); C=4, D=5 always together (with 7)
    let mut corpus = Vec::new();
    for i in 0..200 {
        let mut p = NULL_PATH;
        if i % 2 == 0 {
            (p[0], p[1], p[9]) = (2, 6, 3);
        } else {
            (p[0], p[1], p[9]) = (4, 7, 5);
        }
        corpus.push(p);
    }
    let e = pretrain_embeddings(&corpus, 9, 16, 5, 11);
    let cos = |a: usize, b: usize| {
        let (x, y) = (e.row_slice(a), e.row_slice(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        dot / (x.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    assert!(cos(2, 3) > cos(2, 4), "{} vs {}", cos(2, 3), cos(2, 4));
    assert!(cos(4, 5) > cos(4, 3));
    assert!(e.row_slice(0).iter().all(|&v| v == 0.0));
    assert_eq!(e, pretrain_embeddings(&corpus, 9, 16, 5, 11));
}

#[test]
fn zero_epochs_is_seeded_init() {
    let corpus = vec![[2, 3, 0, 0, 0, 0, 0, 0, 0, 4, 0]];
    let a = pretrain_embeddings(&corpus, 5, 4, 0, 1);
    let b = pretrain_embeddings(&[], 5, 4, 0, 1);
    assert_eq!(a, b);
    assert!(a.row_slice(0).iter().all(|&v| v == 0.0));
    assert!(a.row_slice(1).iter().any(|&v| v != 0.0));
}

fn sample_fixture() -> PathSample {
    PathSample {
        id: "app/A.java:3:A.f:getDeviceId".into(),
        label: Some(true),
        hops: vec![
            vec![path("x", &["K1", "K2"], "y"), path("\"a b,c\"", &["StringLiteral|x"], "z")],
            vec![path("p", &["Q"], "q"), path("r", &["Q", "R", "S"], "s")],
            vec![path("m", &["N"], "n"), path("o", &["N", "N"], "o")],
        ],
    }
}

#[test]
fn c2s_roundtrip() {
    assert!(parse_c2s("").unwrap().is_empty());
    let s = sample_fixture();
    let text = format_c2s(std::slice::from_ref(&s));
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.matches('\t').count(), 4);
    let back = parse_c2s(&text).unwrap();
    assert_eq!(back, vec![s.clone()]);
    assert_eq!(format_c2s(&back), text);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("x.c2s");
    let mut unlabeled = s.clone();
    unlabeled.label = None;
    unlabeled.hops[2].clear();
    save_c2s(&[s.clone(), unlabeled.clone()], &file).unwrap();
    assert_eq!(load_c2s(&file).unwrap(), vec![s, unlabeled]);
}

#[test]
fn c2s_errors() {
    let nine = format!("id\t1\ta,{},b\t\t\n", vec!["K"; 9].join("|"));
    match parse_c2s(&nine) {
        Err(DatasetError::Format { line: 1, reason }) => assert!(reason.contains("9 non-terminals")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_c2s("ok\t0\ta,K,b\t\t\nbad\t2\t\t\t\n"), Err(DatasetError::Format { line: 2, .. })));
    assert!(parse_c2s("id\t1\ta,b\t\t\n").is_err());
    assert!(parse_c2s("id\t1\ta,,b\t\t\n").is_err());
    assert!(parse_c2s("id\t1\t\t\n").is_err());
}

proptest! {
    #[test]
    fn split_follows_floor_rule(n in 10usize..600, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (a, b, c) = split_dataset(&items, seed).unwrap();
        let f = n as f64;
        prop_assert!((a.len() as f64 - 0.8 * f).abs() <= 1.0);
        prop_assert!((b.len() as f64 - 0.1 * f).abs() <= 1.0);
        // the test split takes both floor remainders, so it can run up to
        // (but not including) two samples over 10%
        prop_assert!((c.len() as f64 - 0.1 * f).abs() < 2.0);
        prop_assert_eq!((a.len(), b.len()), (n * 8 / 10, n / 10));
    }

    #[test]
    fn sampled_rows_are_distinct_inputs(len in 0usize..50, n in 1usize..60, seed in any::<u64>()) {
        let idx = sample_indices(len, n, seed);
        prop_assert_eq!(idx.len(), n.min(len));
        let set: HashSet<_> = idx.iter().collect();
        prop_assert_eq!(set.len(), idx.len());
        prop_assert!(idx.iter().all(|&i| i < len));
    }

    #[test]
    fn tokens_escape_roundtrip(s in "[a-z %,|\t\"'.]{1,12}") {
        prop_assert_eq!(unescape(&escape(&s)).unwrap(), s.clone());
        let e = escape(&s);
        prop_assert!(!e.contains([',', '|', ' ', '\t']));
    }
}
