use privloc::dataset::Vocab;
use privloc::java::{parse_java_file, parse_java_method, MethodAst};
use privloc::localizer::*;
use privloc::miner::{extract_ast_paths, AstPath, DEFAULT_MAX_NONTERMINALS};
use privloc::model::{Model, ModelConfig};
use privloc::prcs::{ApiSignatureList, CodeSample, Project};
use privloc::trainer::experiment_config;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GPS: &str = "android.location.LocationManager.getLastKnownLocation";

const CHAIN: &str = "class Geo {
    LocationManager lm;
    View view;

    void locate(String p) {
        Location loc = lm.getLastKnownLocation(p);
        double d = distance(loc);
    }

    double distance(Location loc) {
        float r = loc.distanceTo(home);
        show(r);
        return r;
    }

    void show(float r) {
        view.setText(format(r));
    }
}
";

fn text_path(start: &str, end: &str) -> AstPath {
    AstPath {
        start_terminal: start.into(),
        nonterminals: vec!["MethodInvocation".into()],
        end_terminal: end.into(),
        start_span: None,
        end_span: None,
    }
}

fn chain_sample() -> CodeSample {
    let parsed = parse_java_file(CHAIN, "src/Geo.java").unwrap();
    let mut project = Project::default();
    project.methods.extend(parsed.methods);
    project.classes.extend(parsed.classes);
    let mut samples = project.find_prcs(&ApiSignatureList::new([GPS]).unwrap());
    assert_eq!(samples.len(), 1);
    samples.remove(0)
}

fn small_model(sample: &CodeSample) -> (Model, Vocab) {
    let ps = sample.to_path_sample();
    let vocab = Vocab::from_samples([&ps], true, 1);
    let cfg = ModelConfig {
        embed_size: 6,
        fc_hidden: 5,
        num_paths: 40,
        vocab_size: vocab.len(),
        ..experiment_config("multi_head").unwrap()
    };
    (Model::new(cfg, 3).unwrap(), vocab)
}

#[test]
fn top_k_examples() {
    assert_eq!(top_k_paths(&[0.1, 0.4, 0.2, 0.3], 2), vec![1, 3]);
    assert_eq!(top_k_paths(&[0.25; 4], 3), vec![0, 1, 2]);
    assert_eq!(top_k_paths(&[0.5, 0.5], 20), vec![0, 1]);
    assert_eq!(top_k_masked(&[0.9, 0.05, 0.05], &[false, true, true], 20), vec![1, 2]);
}

#[test]
fn top_k_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        // coarse values force plenty of ties
        let w: Vec<f64> = (0..300).map(|_| rng.gen_range(0..40) as f64 / 40.0).collect();
        let mut oracle: Vec<usize> = (0..300).collect();
        oracle.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
        oracle.truncate(20);
        assert_eq!(top_k_paths(&w, 20), oracle);
    }
}

#[test]
fn token_match_respects_identifier_boundaries() {
    assert!(contains_token("  Location loc = lm.get(p);", "loc"));
    assert!(!contains_token("  Location locX = lm.get(p);", "loc"));
    assert!(contains_token("log.debug(\"time\");", "\"time\""));
    assert!(!contains_token("anything", ""));
}

#[test]
fn text_search_mapping() {
    let m = parse_java_method(
        "void f(LocationManager lm) {\n    Location loc = lm.getLastKnownLocation(p);\n    if (a > 1) { return; }\n    send(loc);\n    if (b > 2) { return; }\n}",
    )
    .unwrap();
    // unique line
    let hit = map_path_to_line(&text_path("lm", "getLastKnownLocation"), &m).unwrap();
    assert_eq!(hit.line, 2);
    assert_eq!(hit.statement_text, "Location loc = lm.getLastKnownLocation(p);");
    // `loc` alone is on lines 2 and 4, but only line 4 has both terminals
    assert_eq!(map_path_to_line(&text_path("send", "loc"), &m).unwrap().line, 4);
    // an identifier on two lines, no span info
    assert_eq!(map_path_to_line(&text_path("a1b2", "return"), &m), Err(SkipReason::Ambiguous));
    assert_eq!(map_path_to_line(&text_path("x9", "y9"), &m), Err(SkipReason::ObfuscatedAbsent));
}

#[test]
fn span_mapping_and_invariant() {
    let sample = chain_sample();
    for hop in &sample.hops {
        for p in extract_ast_paths(hop, DEFAULT_MAX_NONTERMINALS) {
            match map_path_to_line(&p, hop) {
                Ok(m) => {
                    assert_eq!(p.start_span.unwrap().start_line, m.line);
                    assert_eq!(p.end_span.unwrap().start_line, m.line);
                    let text = hop.line_text(m.line).unwrap();
                    assert!(text.contains(&p.start_terminal) && text.contains(&p.end_terminal));
                }
                Err(r) => {
                    assert_eq!(r, SkipReason::Ambiguous);
                    assert_ne!(p.start_span.unwrap().start_line, p.end_span.unwrap().start_line);
                }
            }
        }
    }
}

#[test]
fn caller_name_links_hops() {
    let sample = chain_sample();
    // hop 1 calls hop 2 by name; that call line in hop 1 is mappable
    let hop1: &MethodAst = &sample.hops[0];
    let name2 = &sample.hops[1].name;
    let paths = extract_ast_paths(hop1, DEFAULT_MAX_NONTERMINALS);
    let mapped: Vec<MappedLine> = paths
        .iter()
        .filter(|p| &p.end_terminal == name2 || &p.start_terminal == name2)
        .filter_map(|p| map_path_to_line(p, hop1).ok())
        .collect();
    assert!(!mapped.is_empty());
    assert!(mapped.iter().all(|m| m.statement_text == "double d = distance(loc);"));
}

#[test]
fn localize_report_structure() {
    let sample = chain_sample();
    let (model, vocab) = small_model(&sample);
    let rep = localize(&sample, &model, &vocab, 0, DEFAULT_TOP_K).unwrap();
    assert_eq!(rep.hops.len(), 3);
    assert!(rep.probability > 0.0 && rep.probability < 1.0);
    for (h, hop) in rep.hops.iter().enumerate() {
        assert_eq!(hop.hop, h + 1);
        assert!(hop.entries.len() <= DEFAULT_TOP_K);
        let mut lines = std::collections::HashSet::new();
        for w in hop.entries.windows(2) {
            assert!(w[0].attention_weight >= w[1].attention_weight);
        }
        for e in &hop.entries {
            assert!(e.mapped.is_some() != e.skip_reason.is_some());
            if let Some(m) = &e.mapped {
                assert!(lines.insert(m.line), "line {} reported twice", m.line);
                let text = sample.hops[h].line_text(m.line).unwrap();
                assert!(contains_token(text, &e.start_terminal) || contains_token(text, &e.end_terminal));
            }
        }
    }
    // deterministic
    assert_eq!(rep, localize(&sample, &model, &vocab, 0, DEFAULT_TOP_K).unwrap());
}

#[test]
fn localize_one_hop_and_single_head() {
    let mut sample = chain_sample();
    sample.hops.truncate(1);
    let (model, vocab) = small_model(&sample);
    let rep = localize(&sample, &model, &vocab, 0, 5).unwrap();
    assert_eq!(rep.hops.len(), 1);
    assert!(rep.hops[0].entries.len() <= 5);

    let single = Model::new(
        ModelConfig {
            vocab_size: vocab.len(),
            embed_size: 4,
            fc_hidden: 3,
            ..experiment_config("L_100").unwrap()
        },
        0,
    )
    .unwrap();
    assert!(matches!(localize(&sample, &single, &vocab, 0, 5), Err(LocalizeError::NotMultiHead)));
}

fn hand_report(entries: Vec<(usize, f64)>) -> LocalizationReport {
    let source = "void f() {\n    a();\n    b();\n    c();\n    d();\n}\n".to_string();
    LocalizationReport {
        sample_id: "F.java:3:F.f:b".into(),
        probability: 0.75,
        hops: vec![HopReport {
            hop: 1,
            file: "F.java".into(),
            method: "F.f".into(),
            first_line: 1,
            source,
            entries: entries
                .into_iter()
                .map(|(line, w)| ReportEntry {
                    path_index: line,
                    attention_weight: w,
                    start_terminal: "x".into(),
                    end_terminal: "y".into(),
                    mapped: Some(MappedLine {
                        file: "F.java".into(),
                        line,
                        statement_text: String::new(),
                    }),
                    skip_reason: None,
                })
                .collect(),
        }],
    }
}

#[test]
fn render_text() {
    let empty = hand_report(vec![]);
    let out = String::from_utf8(render_annotated(&empty, ReportFormat::Text).unwrap()).unwrap();
    assert_eq!(out, empty.hops[0].source);

    let one = hand_report(vec![(5, 0.31234)]);
    let out = String::from_utf8(render_annotated(&one, ReportFormat::Text).unwrap()).unwrap();
    let marked: Vec<usize> = out.lines().enumerate().filter(|(_, l)| l.starts_with(">> ")).map(|(i, _)| i + 1).collect();
    assert_eq!(marked, vec![5]);
    assert_eq!(out.lines().nth(4).unwrap(), ">> [w=0.3123]     d();");
}

#[test]
fn render_html_and_json() {
    let r = hand_report(vec![(2, 0.5), (4, 0.25)]);
    let html = String::from_utf8(render_annotated(&r, ReportFormat::Html).unwrap()).unwrap();
    assert_eq!(html.matches("<mark").count(), 2);
    assert!(html.contains("<mark title=\"w=0.5000\">    a();</mark>"));

    let json = render_annotated(&r, ReportFormat::Json).unwrap();
    assert_eq!(parse_report(&json).unwrap(), r);
    assert_eq!(json, render_annotated(&r, ReportFormat::Json).unwrap());
    assert!(matches!("pdf".parse::<ReportFormat>(), Err(LocalizeError::UnknownFormat(_))));
}

#[test]
fn recover_code_sample_from_paths() {
    let sample = chain_sample();
    let parsed = parse_java_file(CHAIN, "src/Geo.java").unwrap();
    let back = recover_code_sample(&sample.to_path_sample(), &parsed.methods).unwrap();
    let names: Vec<&str> = back.hops.iter().map(|m| m.name.as_str()).collect();
    assert_eq!(names, ["locate", "distance", "show"]);
    let only_two = parsed.methods[..2].to_vec();
    assert!(matches!(
        recover_code_sample(&sample.to_path_sample(), &only_two),
        Err(LocalizeError::HopNotFound { hop: 3, .. })
    ));
}
