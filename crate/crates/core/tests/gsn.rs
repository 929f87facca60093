use std::collections::{BTreeMap, BTreeSet};

use aps_core::gsn::{
    builtin_template, load_case, save_case, Artifact, ArtifactKind, AssuranceCase, GoalStatus as G, GsnError, Link, LinkKind, NodeKind, Pass,
    Profile, ProfileMode,
};

fn golden() -> BTreeSet<String> {
    include_str!("golden/aps_case_structure.txt")
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn solutions(case: &AssuranceCase) -> Vec<(String, ArtifactKind)> {
    case.nodes.iter().filter(|n| n.kind == NodeKind::Solution).map(|n| (n.id.clone(), n.admissible[0])).collect()
}

fn positive(kind: ArtifactKind) -> Artifact {
    Artifact {
        kind,
        ..Artifact::manual(Pass::Positive, "synthetic positive evidence")
    }
}

fn all_positive() -> AssuranceCase {
    let mut case = builtin_template();
    for (id, kind) in solutions(&case) {
        case = case.bind_evidence(&id, positive(kind)).unwrap();
    }
    case
}

fn population_values() -> BTreeMap<String, String> {
    [
        ("subject", "virtual T1D cohort"),
        ("horizon_min", "30"),
        ("input_window_min", "60"),
        ("alpha1", "15"),
        ("alpha2", "120"),
        ("alpha3", "240"),
        ("beta", "140"),
        ("thres", "12"),
        ("architecture", "36-8-8-6 feed-forward ReLU network"),
        ("data_description", "40 simulated days per patient at 5-minute resolution"),
        ("split", "80/20 train/test split"),
        ("age_range", "7-64"),
        ("weight_range_kg", "20-118"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

#[test]
fn template_matches_the_golden_transcription() {
    let t = builtin_template();
    let got: BTreeSet<String> = t.structure().into_iter().collect();
    let want = golden();
    let missing: Vec<_> = want.difference(&got).collect();
    let extra: Vec<_> = got.difference(&want).collect();
    assert!(missing.is_empty() && extra.is_empty(), "missing {missing:?}, extra {extra:?}");
    assert_eq!(t.structure().len(), want.len());
    assert_eq!(t.node("G1-2").unwrap().statement, "The ML glucose prediction component is sufficiently safe and effective");
    assert_eq!(
        t.node("C0-2").unwrap().placeholders(),
        vec!["scope", "alpha1", "alpha2", "alpha3", "beta"],
        "the controller requirements carry the open duration and level parameters"
    );
    assert_eq!(t.node("C4-2").unwrap().items.len(), 14);
}

#[test]
fn fresh_template_is_undeveloped() {
    let s = builtin_template().evaluate_status();
    assert_eq!(s.root, "G0");
    assert_eq!(s.root_status, G::Undeveloped);
    assert_eq!(s.of("G2-2"), Some(G::Undeveloped));
    for n in builtin_template().nodes.iter().filter(|n| n.kind == NodeKind::Goal) {
        assert!(s.of(&n.id).is_some(), "{} has no status", n.id);
    }
}

#[test]
fn positive_evidence_everywhere_but_integration() {
    let s = all_positive().evaluate_status();
    assert_eq!(s.of("G2-1"), Some(G::Supported));
    assert_eq!(s.of("G1-1"), Some(G::Supported));
    assert_eq!(s.of("G2-2"), Some(G::Undeveloped));
    assert_eq!(s.of("G1-2"), Some(G::PartiallySupported));
    assert_eq!(s.root_status, G::PartiallySupported);
}

#[test]
fn a_counterexample_contradicts_up_to_the_ml_claim() {
    let case = all_positive();
    let verdict_json = r#"{"property_id":"ML-RQ1.2","outcome":"Counterexample","witness":{"input":[0.5],"output":[150.0]},
        "stats":{"subproblems":0,"max_depth":0,"wall_time":0.0,"lp_calls":0,"queries":1,"branches":1,"falsify_samples":1},
        "config_hash":"c","model_hash":"m"}"#;
    let art = Artifact::from_json(verdict_json, "rq12.json").unwrap();
    assert_eq!((art.kind, art.pass), (ArtifactKind::VerificationVerdict, Pass::Negative));
    let s = case.bind_evidence("Sn-RQ1.2", art).unwrap().evaluate_status();
    for id in ["Sn-RQ1.2", "G4-1", "G3-1", "S2-1", "G2-1", "G1-2", "G0"] {
        assert_eq!(s.of(id), Some(G::Contradicted), "{id}");
    }
    assert_eq!(s.of("G1-1"), Some(G::Supported));
}

#[test]
fn inconclusive_evidence_is_partial_support() {
    let case = all_positive().bind_evidence("Sn-RQ1.5", Artifact::manual(Pass::Inconclusive, "x")).err();
    assert!(matches!(case, Some(GsnError::Inadmissible { .. })));
    let unknown = Artifact {
        kind: ArtifactKind::VerificationVerdict,
        ..Artifact::manual(Pass::Inconclusive, "timeout")
    };
    let s = all_positive().bind_evidence("Sn-RQ1.5", unknown).unwrap().evaluate_status();
    assert_eq!(s.of("G4-1"), Some(G::PartiallySupported));
    assert_eq!(s.of("G2-1"), Some(G::PartiallySupported));
}

#[test]
fn binding_errors() {
    let t = builtin_template();
    assert!(matches!(t.bind_evidence("Sn-nope", positive(ArtifactKind::Manual)), Err(GsnError::UnknownSolution(_))));
    assert!(matches!(t.bind_evidence("G4-1", positive(ArtifactKind::Manual)), Err(GsnError::UnknownSolution(_))));
    assert!(matches!(t.bind_evidence("Sn-RQ1", positive(ArtifactKind::AuditReport)), Err(GsnError::Inadmissible { .. })));
}

#[test]
fn positive_bindings_never_undo_support() {
    let case = builtin_template();
    let sols = solutions(&case);
    // bind in a scrambled order and watch every goal
    let mut order: Vec<usize> = (0..sols.len()).collect();
    order.sort_by_key(|i| (i * 7) % sols.len());
    let mut current = case;
    let mut before = current.evaluate_status();
    for i in order {
        let (id, kind) = &sols[i];
        current = current.bind_evidence(id, positive(*kind)).unwrap();
        let after = current.evaluate_status();
        for (node, s) in &before.nodes {
            if *s == G::Supported {
                assert_eq!(after.of(node), Some(G::Supported), "{node} lost support after binding {id}");
            }
        }
        before = after;
    }
}

#[test]
fn validation_catches_structural_errors() {
    let t = builtin_template();
    let cyc = Link {
        from: "G3-1".into(),
        to: "G2-1".into(),
        kind: LinkKind::SupportedBy,
        acp: None,
    };
    let err = t.with_link(cyc).unwrap_err();
    assert!(err.to_string().contains("cycle"), "{err}");
    let mut bad = t.clone();
    bad.links.push(Link {
        from: "C0-1".into(),
        to: "G1-1".into(),
        kind: LinkKind::SupportedBy,
        acp: None,
    });
    assert!(bad.validate().unwrap_err().iter().any(|v| v.node.as_deref() == Some("C0-1")));
    let mut bad = t.clone();
    bad.links.push(Link {
        from: "G0".into(),
        to: "G4-1".into(),
        kind: LinkKind::InContextOf,
        acp: None,
    });
    assert!(bad.validate().is_err());
    let mut bad = t.clone();
    bad.links.push(Link {
        from: "G0".into(),
        to: "X".into(),
        kind: LinkKind::SupportedBy,
        acp: None,
    });
    assert!(bad.validate().unwrap_err().iter().any(|v| v.message.contains("dangling")));
    let mut bad = t.clone();
    bad.links.retain(|l| l.from != "S2-1");
    let errs = bad.validate().unwrap_err();
    assert!(errs.iter().any(|v| v.message.contains("strategy")));
    assert!(errs.iter().any(|v| v.message.contains("single root")));
}

#[test]
fn population_profile_resolves_everything() {
    let case = builtin_template()
        .instantiate(&Profile {
            mode: ProfileMode::Population,
            values: population_values(),
        })
        .unwrap();
    assert!(case.unresolved().is_empty());
    assert!(case.node("C0-2").unwrap().items.iter().any(|i| i.text.contains("more than 120 minutes following")));
    case.validate().unwrap();
}

#[test]
fn missing_parameter_is_reported_with_its_node() {
    let mut values = population_values();
    values.remove("alpha2");
    let err = builtin_template()
        .instantiate(&Profile {
            mode: ProfileMode::Population,
            values,
        })
        .unwrap_err();
    match err {
        GsnError::Unresolved(slots) => assert_eq!(slots, vec![("C0-2".to_string(), "alpha2".to_string())]),
        other => panic!("{other}"),
    }
}

#[test]
fn patient_and_population_data_contexts_differ() {
    let pop = builtin_template()
        .instantiate(&Profile {
            mode: ProfileMode::Population,
            values: population_values(),
        })
        .unwrap();
    let mut values = population_values();
    values.insert("subject".into(), "adult_003".into());
    let pat = builtin_template()
        .instantiate(&Profile {
            mode: ProfileMode::Patient,
            values,
        })
        .unwrap();
    let (a, b) = (&pop.node("C3-2").unwrap().statement, &pat.node("C3-2").unwrap().statement);
    assert_ne!(a, b);
    assert!(a.contains("cohort"));
    assert!(b.contains("individual patient adult_003"));
}

#[test]
fn case_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case.toml");
    let case = all_positive()
        .instantiate(&Profile {
            mode: ProfileMode::Population,
            values: population_values(),
        })
        .unwrap();
    save_case(&case, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for section in ["[[nodes]]", "[[links]]", "[[bindings]]"] {
        assert!(text.contains(section));
    }
    assert_eq!(load_case(&path).unwrap(), case);
}

#[test]
fn dot_export() {
    let dot = builtin_template().export_dot();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("\"S2-1\" [shape=\"parallelogram\""));
    assert!(dot.contains("C0-2 (P)"));
    assert!(dot.contains("ACP-ML-data"));
    assert_eq!(dot.matches(" -> ").count(), builtin_template().links.len());
}
