use privloc::synth::*;

fn line(src: &str, n: usize) -> &str {
    src.lines().nth(n - 1).unwrap()
}

#[test]
fn planted_statements_sit_where_reported() {
    let ds = generate(&SynthConfig { n: 60, ..Default::default() }).unwrap();
    assert_eq!(ds.samples.len(), 60);
    assert_eq!(ds.samples.iter().filter(|s| s.label).count(), 30);
    let mut partner_markers = 0;
    for (s, (_, src)) in ds.samples.iter().zip(&ds.files) {
        assert_eq!(s.code.hops.len(), 3);
        assert_eq!(s.marker_hop, 1);
        assert_eq!(s.partner_hop, 2);
        let want = if s.label { MARKER_TOKEN } else { DECOY_TOKEN };
        assert_eq!(line(src, s.marker_line).trim(), format!("sink.{want}(loc);"));
        let hop = &s.code.hops[s.marker_hop];
        assert!(hop.first_line < s.marker_line && s.marker_line <= hop.last_line());
        let want = if s.partner_is_marker { MARKER_TOKEN } else { DECOY_TOKEN };
        assert_eq!(line(src, s.partner_line).trim(), format!("sink.{want}(loc);"));
        partner_markers += usize::from(s.partner_is_marker);
        assert_eq!(s.code.label, Some(s.label));
    }
    // the partner call is a coin flip, not a function of the label
    assert!((15..=45).contains(&partner_markers));
    for (p, s) in ds.path_samples().iter().zip(&ds.samples) {
        assert_eq!(p.label, Some(s.label));
        assert!(p.hops.iter().all(|h| !h.is_empty() && h.len() <= 120));
    }
}

#[test]
fn generation_is_seeded() {
    let cfg = SynthConfig { n: 10, ..Default::default() };
    assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    let other = generate(&SynthConfig { seed: 8, ..cfg.clone() }).unwrap();
    assert_ne!(other.files, generate(&cfg).unwrap().files);
}

#[test]
fn other_marker_hops() {
    for hop in [1, 3] {
        let ds = generate(&SynthConfig { n: 8, marker_hop: hop, ..Default::default() }).unwrap();
        for (s, (_, src)) in ds.samples.iter().zip(&ds.files) {
            assert_eq!(s.marker_hop, hop - 1);
            assert_ne!(s.partner_hop, s.marker_hop);
            assert!(line(src, s.marker_line).contains("sink.send"));
        }
    }
}

#[test]
fn bad_configs() {
    let d = SynthConfig::default();
    assert!(matches!(generate(&SynthConfig { marker_hop: 4, ..d.clone() }), Err(SynthError::BadHop(4))));
    assert!(matches!(generate(&SynthConfig { n: 0, ..d.clone() }), Err(SynthError::Empty)));
    assert!(matches!(generate(&SynthConfig { positive_rate: 1.5, ..d }), Err(SynthError::BadRate(_))));
}

#[test]
fn sources_written_to_disk() {
    let ds = generate(&SynthConfig { n: 3, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write_sources(dir.path()).unwrap();
    for (name, src) in &ds.files {
        assert_eq!(&std::fs::read_to_string(dir.path().join(name)).unwrap(), src);
    }
}
