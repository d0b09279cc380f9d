use std::io::{Read, Write};
use std::net::TcpListener;
use std::time::Duration as StdDuration;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;

use super::*;
use crate::registry::{PackageRef, SubstitutionTable};
use crate::search::Channel;
use crate::store::{AllowListAction, AllowListKind, VersionInfo};

fn now() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 0, 0, 0).unwrap()
}

fn pkg(registry: RegistryId, raw: &str) -> PackageRef {
    PackageRef::parse(registry, raw).unwrap()
}

fn pair(registry: RegistryId, suspect: &str, target: &str) -> CandidatePair {
    CandidatePair::assemble(
        &pkg(registry, suspect),
        &pkg(registry, target),
        0.95,
        Channel::Lexical,
        &SubstitutionTable::default(),
    )
    .unwrap()
}

fn meta(package: PackageRef) -> PackageMetadata {
    PackageMetadata::bare(package, now() - Duration::days(400))
}

fn with(p: &CandidatePair, f: impl FnOnce(&mut PackageMetadata, &mut PackageMetadata)) -> MetadataStore {
    let mut s = meta(p.suspect.clone());
    let mut t = meta(p.target.clone());
    f(&mut s, &mut t);
    let mut store = MetadataStore::in_memory();
    store.upsert(s).unwrap();
    store.upsert(t).unwrap();
    store
}

fn heuristic() -> BenignityFilter {
    BenignityFilter::heuristic(RuleWeights::default(), HeuristicConfig::default())
}

#[test]
fn missing_metadata_leaves_metadata_rules_unknown() {
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let store = MetadataStore::in_memory();
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::ActiveDevelopment), Truth::Unknown);
    assert_eq!(out.value(Directive::OverlappedMaintainers), Truth::Unknown);
    assert_eq!(out.value(Directive::IsRelocatedPackage), Truth::Unknown);
    assert_eq!(out.value(Directive::NameLengthUnrelated), Truth::False);
    for d in Directive::ALL {
        if d.is_deterministic() {
            assert_eq!(out.get(d).source, OutcomeSource::Metadata);
        }
    }
}

#[test]
fn active_development_by_recency_or_release_count() {
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let store = with(&p, |s, _| s.created_at = now() - Duration::days(29));
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::ActiveDevelopment), Truth::True);

    let store = with(&p, |s, _| {
        s.versions = (0..6)
            .map(|i| VersionInfo {
                version: format!("0.{i}"),
                published_at: now() - Duration::days(300 - i),
            })
            .collect();
    });
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::ActiveDevelopment), Truth::True);

    let store = with(&p, |_, _| {});
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::ActiveDevelopment), Truth::False);
}

#[test]
fn maven_relocation_matches_target() {
    let p = pair(RegistryId::Maven, "io.fnproject.fn:runtime", "com.fnproject.fn:runtime");
    let store = with(&p, |s, _| s.relocation_target = Some(pkg(RegistryId::Maven, "com.fnproject.fn:runtime")));
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.get(Directive::IsRelocatedPackage).value, Truth::True);
    assert_eq!(out.get(Directive::IsRelocatedPackage).source, OutcomeSource::Metadata);
}

#[test]
fn shared_maintainer_overlaps() {
    let p = pair(
        RegistryId::Pypi,
        "botocore-a-la-carte-machinelearning",
        "botocore-a-la-carte-chatbot",
    );
    let store = with(&p, |s, t| {
        s.maintainers = vec!["Ops@Example.org".into()];
        t.maintainers = vec!["dev@example.org".into(), "ops@example.org".into()];
    });
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::OverlappedMaintainers), Truth::True);
}

#[test]
fn length_gap_over_thirty_percent() {
    assert!(name_length_unrelated("a", "abcdefghij"));
    assert!(!name_length_unrelated("abcdefg", "abcdefghij"));
    assert!(name_length_unrelated("abcdef", "abcdefghij"));
}

#[test]
fn allow_lists_and_verified_prefix() {
    let p = pair(RegistryId::Npm, "@oxc-parser/binding-darwin-arm64", "binding-darwin-arm64");
    let mut store = with(&p, |_, _| {});
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::OrgAllowlisted), Truth::False);
    store
        .update_allowlist(AllowListKind::Organization, "oxc-parser", AllowListAction::Add)
        .unwrap();
    let out = deterministic_checks(&p, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::OrgAllowlisted), Truth::True);

    let g = pair(RegistryId::Golang, "gopkg.in/go-git/go-git", "github.com/go-git/go-git");
    let mut store = with(&g, |_, _| {});
    store
        .update_allowlist(AllowListKind::MirrorDomain, "gopkg.in", AllowListAction::Add)
        .unwrap();
    let out = deterministic_checks(&g, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::MirrorDomain), Truth::True);

    let n = pair(RegistryId::Nuget, "Newtonsoft.Json.Bson", "Newtonsoft.Json");
    let store = with(&n, |s, _| s.verified_prefix = true);
    let out = deterministic_checks(&n, &store, store.allow_lists(), now());
    assert_eq!(out.value(Directive::VerifiedPrefix), Truth::True);
}

#[test]
fn judge_source_never_lands_on_deterministic_directive() {
    let mut out = RuleOutcome::unknown();
    out.set(Directive::OrgAllowlisted, Truth::True, OutcomeSource::Judge);
    assert_eq!(out.get(Directive::OrgAllowlisted).source, OutcomeSource::Metadata);

    let mut map: BTreeMap<Directive, DirectiveOutcome> = RuleOutcome::unknown().into();
    map.insert(
        Directive::VerifiedPrefix,
        DirectiveOutcome {
            value: Truth::True,
            source: OutcomeSource::Judge,
        },
    );
    assert!(RuleOutcome::try_from(map.clone()).is_err());
    map.remove(&Directive::VerifiedPrefix);
    assert!(RuleOutcome::try_from(map).is_err());
}

#[test]
fn outcome_round_trips_through_json() {
    let mut out = RuleOutcome::unknown();
    out.set(Directive::IsFork, Truth::True, OutcomeSource::Judge);
    let text = serde_json::to_string(&out).unwrap();
    assert!(text.contains("\"is_fork\""));
    let back: RuleOutcome = serde_json::from_str(&text).unwrap();
    assert_eq!(back, out);
}

#[test]
fn heuristic_readme_and_fork() {
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let readme = "Read and write bzip2 compressed files with a file like interface in pure python.";
    let store = with(&p, |s, t| {
        s.readme = Some(String::new());
        t.readme = Some(readme.into());
    });
    let out = heuristic().outcomes(&p, &store, now());
    assert_eq!(out.value(Directive::NoReadme), Truth::True);
    assert_eq!(out.get(Directive::NoReadme).source, OutcomeSource::Judge);

    let store = with(&p, |s, t| {
        s.readme = Some(readme.into());
        t.readme = Some(readme.into());
    });
    let out = heuristic().outcomes(&p, &store, now());
    assert_eq!(out.value(Directive::IsFork), Truth::True);
    assert_eq!(out.value(Directive::NoReadme), Truth::False);
}

#[test]
fn heuristic_distinct_purpose_and_intent() {
    let p = pair(RegistryId::Npm, "lodash-utils", "lodash");
    let store = with(&p, |s, t| {
        s.description = Some("command line helpers for parsing csv spreadsheets quickly".into());
        t.description = Some("modern javascript utility library delivering modularity and performance".into());
    });
    let out = heuristic().outcomes(&p, &store, now());
    assert_eq!(out.value(Directive::HasDistinctPurpose), Truth::True);

    let desc = "modern javascript utility library delivering modularity and performance";
    let store = with(&p, |s, t| {
        s.description = Some(desc.into());
        t.description = Some(desc.into());
        s.maintainers = vec!["mallory".into()];
        t.maintainers = vec!["jdalton".into()];
    });
    let out = heuristic().outcomes(&p, &store, now());
    assert_eq!(out.value(Directive::HasSuspiciousIntent), Truth::True);
    assert_eq!(out.value(Directive::HasDistinctPurpose), Truth::False);
}

#[test]
fn heuristic_test_lexicon_and_reputable_maintainers() {
    let p = pair(RegistryId::Pypi, "requests-demo", "requests");
    let out = heuristic().outcomes(&p, &MetadataStore::in_memory(), now());
    assert_eq!(out.value(Directive::IsTest), Truth::True);

    let p = pair(RegistryId::Pypi, "reqeusts", "requests");
    let store = with(&p, |s, _| s.maintainers = vec!["someone@google.com".into()]);
    let out = heuristic().outcomes(&p, &store, now());
    assert_eq!(out.value(Directive::IsKnownMaintainer), Truth::True);
}

#[test]
fn parses_directive_lines() {
    let text = "Here is my analysis.\n\
        1. obvious_not_typosquat: TRUE because the names differ\n\
        2. **is_adversarial_name**: False\n\
        3. is_fork - true\n\
        9. is_relocated_package: maybe";
    let r = parse_judge_output(text).unwrap();
    assert_eq!(r.get(Directive::ObviousNotTyposquat), Truth::True);
    assert_eq!(r.get(Directive::IsAdversarialName), Truth::False);
    assert_eq!(r.get(Directive::IsFork), Truth::True);
    assert_eq!(r.get(Directive::IsRelocatedPackage), Truth::Unknown);
    assert_eq!(r.get(Directive::IsTest), Truth::Unknown);
    assert!(matches!(
        parse_judge_output("I cannot help with that."),
        Err(JudgeError::MalformedOutput(_))
    ));
}

#[test]
fn metadata_text_is_capped() {
    let p = pkg(RegistryId::Pypi, "big");
    let mut m = meta(p);
    m.readme = Some("é".repeat(10_000));
    let text = metadata_text(Some(&m));
    assert!(text.len() <= METADATA_LIMIT);
    assert!(text.len() > METADATA_LIMIT - 4);
}

#[test]
fn prompt_placeholders_are_filled() {
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let req = JudgeRequest::new(&p, None, None);
    let user = PromptTemplates::default().render_user(&req);
    assert!(user.contains("'bz2fiel'"));
    assert!(user.contains("bz2file"));
    assert!(user.contains("pypi"));
    assert!(!user.contains('{'));
    for d in Directive::JUDGED {
        assert!(user.contains(d.as_str()), "{d} missing from prompt");
    }
}

#[test]
fn risk_score_closed_forms() {
    let w = RuleWeights::default();
    let none = RuleOutcome::unknown();
    assert_eq!(risk_score(&none, &w), 0.5);

    let mut weights = RuleWeights::from_vector(&[0.0; 15], 0.0, 0.5);
    weights.weights.insert(Directive::HasSuspiciousIntent, 2.0);
    let mut out = RuleOutcome::unknown();
    out.set(Directive::HasSuspiciousIntent, Truth::True, OutcomeSource::Judge);
    assert!((risk_score(&out, &weights) - 0.880_797_077_977_882_3).abs() < 1e-12);

    let mut out = RuleOutcome::unknown();
    out.set(Directive::IsKnownMaintainer, Truth::True, OutcomeSource::Judge);
    assert!(risk_score(&out, &w) < risk_score(&none, &w));
}

#[test]
fn verdict_short_circuits() {
    let p = pair(RegistryId::Npm, "@oxc-parser/binding-darwin-arm64", "binding-darwin-arm64");
    let mut store = with(&p, |_, _| {});
    store
        .update_allowlist(AllowListKind::Organization, "oxc-parser", AllowListAction::Add)
        .unwrap();
    let r = heuristic().evaluate_pair(&p, &store, now());
    assert_eq!(r.verdict, Verdict::Benign);
    assert!(r.explanation.iter().any(|e| e.rule == "R13"));

    let g = pair(RegistryId::Golang, "gopkg.in/go-git/go-git", "github.com/go-git/go-git");
    let mut store = with(&g, |_, _| {});
    store
        .update_allowlist(AllowListKind::MirrorDomain, "gopkg.in", AllowListAction::Add)
        .unwrap();
    assert_eq!(heuristic().evaluate_pair(&g, &store, now()).verdict, Verdict::Benign);

    let mut out = RuleOutcome::unknown();
    out.set(Directive::HasSuspiciousIntent, Truth::True, OutcomeSource::Judge);
    out.set(Directive::IsKnownMaintainer, Truth::True, OutcomeSource::Judge);
    out.set(Directive::ActiveDevelopment, Truth::True, OutcomeSource::Metadata);
    out.set(Directive::IsTest, Truth::True, OutcomeSource::Judge);
    let score = risk_score(&out, &RuleWeights::default());
    assert!(score < 0.5);
    let r = verdict(&p, &out, score, 0.5);
    assert_eq!(r.verdict, Verdict::SuspectedThreat);
}

#[test]
fn explanation_is_never_empty() {
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let r = verdict(&p, &RuleOutcome::unknown(), 0.5, 0.5);
    assert_eq!(r.verdict, Verdict::SuspectedThreat);
    assert!(!r.explanation.is_empty());
}

fn serve_once(body: &'static str, status: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (mut sock, _) = listener.accept().unwrap();
        sock.set_read_timeout(Some(StdDuration::from_secs(5))).unwrap();
        let mut buf = Vec::new();
        let mut chunk = [0u8; 4096];
        loop {
            let n = sock.read(&mut chunk).unwrap();
            buf.extend_from_slice(&chunk[..n]);
            let text = String::from_utf8_lossy(&buf).to_string();
            if let Some(head_end) = text.find("\r\n\r\n") {
                let len = text[..head_end]
                    .lines()
                    .find_map(|l| {
                        let l = l.to_ascii_lowercase();
                        l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                    })
                    .unwrap_or(0);
                if buf.len() >= head_end + 4 + len {
                    break;
                }
            }
            if n == 0 {
                break;
            }
        }
        let reply = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        sock.write_all(reply.as_bytes()).unwrap();
        String::from_utf8_lossy(&buf).to_string()
    });
    (format!("http://{addr}/v1/complete"), handle)
}

#[test]
fn external_judge_posts_prompt_and_parses_reply() {
    let (url, handle) = serve_once(
        r#"{"output":"1. obvious_not_typosquat: FALSE\n2. is_adversarial_name: TRUE\n8. has_suspicious_intent: TRUE"}"#,
        "200 OK",
    );
    let judge = ExternalJudge::new(ExternalJudgeConfig::new(url, "judge-model")).unwrap();
    let filter = BenignityFilter::new(
        RuleWeights::default(),
        Box::new(judge),
        HeuristicJudge::default(),
    );
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let r = filter.evaluate_pair(&p, &MetadataStore::in_memory(), now());
    let request = handle.join().unwrap();
    assert!(request.starts_with("POST /v1/complete"));
    assert!(request.contains("\"model\":\"judge-model\""));
    assert!(request.contains("\"system\""));
    assert!(request.contains("bz2fiel"));
    assert_eq!(r.outcomes.get(Directive::HasSuspiciousIntent).source, OutcomeSource::Judge);
    assert!(r.outcomes.is_true(Directive::IsAdversarialName));
    assert_eq!(r.outcomes.value(Directive::IsFork), Truth::Unknown);
    assert_eq!(r.verdict, Verdict::SuspectedThreat);
}

#[test]
fn unreachable_judge_falls_back_to_heuristic() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = ExternalJudgeConfig::new(format!("http://127.0.0.1:{port}/"), "m");
    config.timeout = StdDuration::from_secs(2);
    let filter = BenignityFilter::new(
        RuleWeights::default(),
        Box::new(ExternalJudge::new(config).unwrap()),
        HeuristicJudge::default(),
    );
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let out = filter.outcomes(&p, &MetadataStore::in_memory(), now());
    assert_eq!(out.get(Directive::IsAdversarialName).source, OutcomeSource::HeuristicFallback);
    assert_eq!(out.get(Directive::OrgAllowlisted).source, OutcomeSource::Metadata);
}

#[test]
fn garbled_judge_reply_means_unknown() {
    let (url, handle) = serve_once(r#"{"output":"no idea"}"#, "200 OK");
    let filter = BenignityFilter::new(
        RuleWeights::default(),
        Box::new(ExternalJudge::new(ExternalJudgeConfig::new(url, "m")).unwrap()),
        HeuristicJudge::default(),
    );
    let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
    let out = filter.outcomes(&p, &MetadataStore::in_memory(), now());
    handle.join().unwrap();
    for d in Directive::JUDGED {
        assert_eq!(out.value(d), Truth::Unknown, "{d}");
    }
}

fn labeled_separable(n: usize) -> Vec<(RuleOutcome, Label)> {
    (0..n)
        .map(|i| {
            let mut o = RuleOutcome::unknown();
            let label = if i % 2 == 0 {
                o.set(Directive::HasSuspiciousIntent, Truth::True, OutcomeSource::Judge);
                Label::Threat
            } else {
                o.set(Directive::IsKnownMaintainer, Truth::True, OutcomeSource::Judge);
                Label::Benign
            };
            if i % 3 == 0 {
                o.set(Directive::IsFork, Truth::True, OutcomeSource::Judge);
            }
            if i % 5 == 0 {
                o.set(Directive::NoReadme, Truth::True, OutcomeSource::Judge);
            }
            (o, label)
        })
        .collect()
}

#[test]
fn fit_rejects_bad_inputs() {
    let rows = labeled_separable(60);
    assert!(matches!(
        fit_rule_weights(&rows, 1, &FitParams::default()),
        Err(crate::error::FitError::InvalidFolds(1))
    ));
    let few = labeled_separable(20);
    assert!(matches!(
        fit_rule_weights(&few, 5, &FitParams::default()),
        Err(crate::error::FitError::TooFewRows { .. })
    ));
    let single: Vec<_> = rows.iter().map(|(o, _)| (o.clone(), Label::Benign)).collect();
    assert!(matches!(
        fit_rule_weights(&single, 5, &FitParams::default()),
        Err(crate::error::FitError::DegenerateLabels)
    ));
}

#[test]
fn fit_separable_set() {
    let rows = labeled_separable(120);
    let report = fit_rule_weights(&rows, 5, &FitParams::default()).unwrap();
    assert!(report.cv_f1 >= 0.95, "cv f1 {}", report.cv_f1);
    assert_eq!(report.folds.len(), 5);
    report.weights.validate().unwrap();
    let w = &report.weights.weights;
    assert!(w[&Directive::HasSuspiciousIntent] > 0.5);
    assert!(w[&Directive::IsKnownMaintainer] > 0.5);
}

#[test]
fn fit_ignores_row_order() {
    let rows = labeled_separable(80);
    let mut shuffled = rows.clone();
    shuffled.reverse();
    shuffled.rotate_left(17);
    let params = FitParams {
        epochs: 300,
        ..FitParams::default()
    };
    let a = fit_rule_weights(&rows, 4, &params).unwrap();
    let b = fit_rule_weights(&shuffled, 4, &params).unwrap();
    assert_eq!(a, b);
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(
        feats in proptest::collection::vec(proptest::collection::vec(-1i8..=1, 15), 3..12),
        labels in proptest::collection::vec(any::<bool>(), 12),
        params in proptest::collection::vec(-1.5f64..1.5, 16),
        l2 in 0.0f64..0.1,
    ) {
        let x: Vec<[f64; 15]> = feats
            .iter()
            .map(|r| {
                let mut a = [0.0; 15];
                for (ai, v) in a.iter_mut().zip(r) {
                    *ai = *v as f64;
                }
                a
            })
            .collect();
        let y: Vec<f64> = labels[..x.len()].iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let obj = LogisticObjective::new(x, y, l2);
        let g = obj.gradient(&params);
        let h = 1e-5;
        for i in 0..16 {
            let mut up = params.clone();
            let mut down = params.clone();
            up[i] += h;
            down[i] -= h;
            let numeric = (obj.loss(&up) - obj.loss(&down)) / (2.0 * h);
            if g[i].abs() < 1e-7 && numeric.abs() < 1e-7 {
                continue;
            }
            prop_assert!(relative_error(g[i], numeric) < 1e-5, "param {}: {} vs {}", i, g[i], numeric);
        }
    }

    #[test]
    fn risk_score_is_monotone(
        values in proptest::collection::vec(0u8..3, 15),
        weights in proptest::collection::vec(0.0f64..3.0, 15),
        bias in -2.0f64..2.0,
        flip in 0usize..15,
    ) {
        let mut w = [0.0; 15];
        w.copy_from_slice(&weights);
        let weights = RuleWeights::from_vector(&w, bias, 0.5);
        let mut out = RuleOutcome::unknown();
        for (d, v) in Directive::ALL.iter().zip(&values) {
            let t = [Truth::True, Truth::False, Truth::Unknown][*v as usize];
            out.set(*d, t, OutcomeSource::Judge);
        }
        let d = Directive::ALL[flip];
        let mut off = out.clone();
        off.set(d, Truth::False, OutcomeSource::Judge);
        let mut on = out;
        on.set(d, Truth::True, OutcomeSource::Judge);
        let (before, after) = (risk_score(&off, &weights), risk_score(&on, &weights));
        if d.polarity() < 0.0 {
            prop_assert!(after <= before);
        } else {
            prop_assert!(after >= before);
        }
    }

    #[test]
    fn heuristic_reports_are_deterministic(
        suspect in "[a-z]{3,10}",
        desc in "[a-z ]{0,60}",
        readme in proptest::option::of("[a-z ]{0,80}"),
    ) {
        let p = pair(RegistryId::Pypi, &suspect, "requests");
        let store = with(&p, |s, t| {
            s.description = Some(desc.clone());
            s.readme = readme.clone();
            t.description = Some("python http for humans".into());
        });
        let f = heuristic();
        prop_assert_eq!(f.evaluate_pair(&p, &store, now()), f.evaluate_pair(&p, &store, now()));
    }

    #[test]
    fn metadata_short_circuits_force_benign(rule in 0usize..4, score in 0.0f64..1.0) {
        let d = [
            Directive::IsRelocatedPackage,
            Directive::OrgAllowlisted,
            Directive::MirrorDomain,
            Directive::VerifiedPrefix,
        ][rule];
        let mut out = RuleOutcome::unknown();
        out.set(Directive::HasSuspiciousIntent, Truth::True, OutcomeSource::Judge);
        out.set(Directive::IsAdversarialName, Truth::True, OutcomeSource::Judge);
        out.set(d, Truth::True, OutcomeSource::Metadata);
        let p = pair(RegistryId::Pypi, "bz2fiel", "bz2file");
        prop_assert_eq!(verdict(&p, &out, score, 0.5).verdict, Verdict::Benign);
    }
}
