use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use rgmp::gss::*;
use rgmp::numerics::DenseTensor;
use rgmp::verification::{decision_table_agreement, DECISION_TABLE};
use rgmp::{BoundingBox, Error, Instruction, Observation, ShapeCategory, Skill};

fn manifest() -> SceneManifest {
    SceneManifest::from_json(
        r#"{"objects": [
            {"name": "fanta can", "box": [100, 50, 200, 300], "shape": "cylindrical"},
            {"name": "napkin", "box": [400, 400, 430, 420], "shape": "thin_small"},
            {"name": "crushed cola can", "box": [250, 200, 330, 250], "shape": "squashed"}
        ]}"#,
    )
    .unwrap()
}

fn grab(text: &str) -> Instruction {
    Instruction::new(text).unwrap()
}

fn decide(instruction: &str) -> rgmp::Result<rgmp::SkillDecision> {
    let scene = manifest();
    let client = MockClient::new(scene.clone()).unwrap();
    simulate(
        &scene,
        &Observation::blank(),
        &grab(instruction),
        &client,
        &SessionConfig::default(),
        &RuleSet::shipped(),
    )
}

// ---- shape classification ----

fn rect_scene(w: usize, h: usize, rect: (usize, usize, usize, usize)) -> Observation {
    let (x0, y0, x1, y1) = rect;
    let img = DenseTensor::from_fn(&[3, h, w], |i| {
        let (y, x) = ((i / w) % h, i % w);
        if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
            0.8
        } else {
            0.2
        }
    });
    Observation::from_image(img).unwrap()
}

#[test]
fn provided_label_passes_through() {
    let mut obs = Observation::blank();
    obs.shape_label = Some(ShapeCategory::Squashed);
    let b = BoundingBox::new(10.0, 10.0, 20.0, 60.0, 640, 480).unwrap();
    assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::Squashed);
}

#[test]
fn shapes_follow_the_mask_thresholds() {
    // Tall rectangle: aspect 2, full fill.
    let obs = rect_scene(200, 200, (80, 40, 120, 120));
    let b = BoundingBox::new(70.0, 30.0, 130.0, 130.0, 200, 200).unwrap();
    assert_eq!(
        classify_shape(&obs, &b).unwrap(),
        ShapeCategory::Cylindrical
    );

    // Wide and low: aspect 0.25.
    let obs = rect_scene(200, 200, (40, 90, 160, 120));
    let b = BoundingBox::new(30.0, 80.0, 170.0, 130.0, 200, 200).unwrap();
    assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::Squashed);

    // A 5x5 speck is 0.06% of the image.
    let obs = rect_scene(200, 200, (100, 100, 105, 105));
    let b = BoundingBox::new(95.0, 95.0, 110.0, 110.0, 200, 200).unwrap();
    assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::ThinSmall);

    // Square block.
    let obs = rect_scene(200, 200, (60, 60, 120, 120));
    let b = BoundingBox::new(50.0, 50.0, 130.0, 130.0, 200, 200).unwrap();
    assert_eq!(classify_shape(&obs, &b).unwrap(), ShapeCategory::Other);
}

#[test]
fn threshold_table_from_statistics() {
    let stats = |aspect, fill, image_fraction| MaskStats {
        area: 100,
        aspect,
        fill,
        image_fraction,
    };
    assert_eq!(
        shape_from_stats(&stats(1.4, 0.6, 0.1)),
        ShapeCategory::Cylindrical
    );
    assert_eq!(
        shape_from_stats(&stats(1.4, 0.59, 0.1)),
        ShapeCategory::Other
    );
    assert_eq!(
        shape_from_stats(&stats(0.7, 0.9, 0.1)),
        ShapeCategory::Squashed
    );
    assert_eq!(
        shape_from_stats(&stats(1.0, 0.9, 0.019)),
        ShapeCategory::ThinSmall
    );
    assert_eq!(
        shape_from_stats(&stats(1.0, 0.9, 0.1)),
        ShapeCategory::Other
    );
}

#[test]
fn empty_crop_rejected() {
    let obs = rect_scene(100, 100, (0, 0, 0, 0));
    let b = BoundingBox::new(40.0, 40.0, 60.0, 60.0, 100, 100).unwrap();
    assert!(classify_shape(&obs, &b).is_err());
    assert!(classify_shape(&Observation::blank(), &b).is_err());
}

// ---- rules ----

#[test]
fn shipped_catalog_matches_the_pinned_table() {
    let rules = RuleSet::shipped();
    assert_eq!(rules.len(), 20);
    let (agree, first) = decision_table_agreement(&rules);
    assert_eq!(agree, DECISION_TABLE.len(), "{first:?}");
}

#[test]
fn every_cell_has_a_rule() {
    let rules = RuleSet::shipped();
    for shape in ShapeCategory::ALL {
        for bits in 0..8 {
            let scene = SceneSummary {
                side_clear: bits & 1 != 0,
                top_clear: bits & 2 != 0,
                small: bits & 4 != 0,
            };
            assert!(
                rules.first_match(shape, &scene).is_some(),
                "{shape} {scene:?}"
            );
        }
    }
}

#[test]
fn baseline_mappings() {
    let rules = RuleSet::shipped();
    let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 640, 480).unwrap();
    let s = |side_clear, top_clear| SceneSummary {
        side_clear,
        top_clear,
        small: false,
    };
    let pick = |shape, scene: &SceneSummary| select_skill(&b, shape, scene, &rules).unwrap().skill;
    assert_eq!(
        pick(ShapeCategory::Cylindrical, &s(true, true)),
        Skill::SideGrasp
    );
    assert_eq!(
        pick(ShapeCategory::Cylindrical, &s(false, true)),
        Skill::LiftUp
    );
    assert_eq!(pick(ShapeCategory::Squashed, &s(true, true)), Skill::LiftUp);
    assert_eq!(
        pick(ShapeCategory::ThinSmall, &s(true, true)),
        Skill::TopPinch
    );
    assert_eq!(pick(ShapeCategory::Other, &s(true, true)), Skill::LiftUp);
}

#[test]
fn rationale_names_the_rule() {
    let rules = RuleSet::shipped();
    let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 640, 480).unwrap();
    let scene = SceneSummary {
        side_clear: true,
        top_clear: true,
        small: false,
    };
    let d = select_skill(&b, ShapeCategory::Cylindrical, &scene, &rules).unwrap();
    let r = rules
        .first_match(ShapeCategory::Cylindrical, &scene)
        .unwrap();
    assert!(
        d.rationale.contains(r.name) && d.rationale.contains(&format!("rule {}", r.priority)),
        "{}",
        d.rationale
    );
    assert_eq!(d.bbox, b);
}

#[test]
fn first_rule_by_priority_wins() {
    let rule = |priority, skill| Rule {
        priority,
        name: "any",
        shape: None,
        side_clear: None,
        top_clear: None,
        small: None,
        skill,
        confidence: 0.5,
    };
    let rules = RuleSet::new(vec![rule(7, Skill::TopPinch), rule(3, Skill::SideGrasp)]).unwrap();
    let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 640, 480).unwrap();
    let scene = SceneSummary {
        side_clear: false,
        top_clear: false,
        small: false,
    };
    assert_eq!(
        select_skill(&b, ShapeCategory::Other, &scene, &rules)
            .unwrap()
            .skill,
        Skill::SideGrasp
    );
    assert!(RuleSet::new(vec![rule(3, Skill::TopPinch), rule(3, Skill::SideGrasp)]).is_err());
}

#[test]
fn no_matching_rule_is_an_error() {
    let only = Rule {
        priority: 1,
        name: "cylinders only",
        shape: Some(ShapeCategory::Cylindrical),
        side_clear: None,
        top_clear: None,
        small: None,
        skill: Skill::SideGrasp,
        confidence: 0.9,
    };
    let rules = RuleSet::new(vec![only]).unwrap();
    let b = BoundingBox::new(0.0, 0.0, 10.0, 10.0, 640, 480).unwrap();
    let scene = SceneSummary {
        side_clear: true,
        top_clear: true,
        small: false,
    };
    let err = select_skill(&b, ShapeCategory::Squashed, &scene, &rules).unwrap_err();
    assert!(matches!(err, Error::NoApplicableSkill(_)));
    assert!(err.to_string().contains("no applicable skill"), "{err}");
}

#[test]
fn accuracy_is_the_product() {
    assert!((compute_accuracy(0.85, 0.76).unwrap() - 0.646).abs() < 1e-12);
    assert_eq!(
        format!("{:.2}", compute_accuracy(0.85, 0.76).unwrap()),
        "0.65"
    );
    for x in [0.0, 0.3, 1.0] {
        assert_eq!(compute_accuracy(1.0, x).unwrap(), x);
        assert_eq!(compute_accuracy(0.0, x).unwrap(), 0.0);
    }
    let mut prev = 0.0;
    for i in 0..=10 {
        let v = compute_accuracy(0.7, i as f64 / 10.0).unwrap();
        assert!(v >= prev);
        prev = v;
    }
    assert!(compute_accuracy(1.1, 0.5).is_err());
    assert!(compute_accuracy(0.5, -0.1).is_err());
    assert!(compute_accuracy(f64::NAN, 0.5).is_err());
}

// ---- localization and the full session ----

#[test]
fn mock_scene_decisions() {
    let d = decide("grab the fanta can").unwrap();
    assert_eq!(d.skill, Skill::SideGrasp);
    assert_eq!(
        d.bbox,
        BoundingBox {
            x1: 100.0,
            y1: 50.0,
            x2: 200.0,
            y2: 300.0
        }
    );
    assert!(
        d.rationale.starts_with("shape cylindrical"),
        "{}",
        d.rationale
    );

    assert_eq!(
        decide("pick up the crushed cola can").unwrap().skill,
        Skill::LiftUp
    );
    assert_eq!(decide("take the napkin").unwrap().skill, Skill::TopPinch);
    assert_eq!(decide("grab the fanta can").unwrap(), d);
}

#[test]
fn absent_target_is_reported() {
    assert!(matches!(
        decide("grab the banana"),
        Err(Error::TargetNotFound(_))
    ));
}

#[test]
fn mock_boxes_satisfy_the_invariants() {
    let scene = manifest();
    let client = MockClient::new(scene.clone()).unwrap();
    let ctx = PlanningContext::default();
    for o in &scene.objects {
        let loc = locate_target(
            &grab(&o.name),
            &Observation::blank(),
            &ctx,
            &client,
            &SessionConfig::default(),
        )
        .unwrap();
        loc.bbox.validate(640, 480).unwrap();
        assert!(!loc.clipped);
        assert_eq!(loc.attempts, 1);
    }
}

struct Scripted {
    replies: Vec<rgmp::Result<String>>,
    calls: AtomicUsize,
}

impl VlmClient for Scripted {
    fn complete(&self, _: &VlmRequest<'_>) -> rgmp::Result<String> {
        let i = self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.replies[i.min(self.replies.len() - 1)] {
            Ok(s) => Ok(s.clone()),
            Err(e) => Err(Error::Format(e.to_string())),
        }
    }
}

fn scripted(replies: Vec<rgmp::Result<String>>) -> Scripted {
    Scripted {
        replies,
        calls: AtomicUsize::new(0),
    }
}

#[test]
fn failing_client_is_retried_at_most_t_times() {
    let client = scripted(vec![Err(Error::Format("down".into()))]);
    let session = SessionConfig {
        rounds: 4,
        ..SessionConfig::default()
    };
    let err = locate_target(
        &grab("grab the cup"),
        &Observation::blank(),
        &PlanningContext::default(),
        &client,
        &session,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Client { attempts: 4, .. }), "{err}");
    assert_eq!(client.calls.load(Ordering::SeqCst), 4);
}

#[test]
fn garbled_reply_then_success() {
    let client = scripted(vec![
        Ok("I cannot see it".into()),
        Ok("the box is [10, 20, 30, 40]".into()),
    ]);
    let loc = locate_target(
        &grab("grab the cup"),
        &Observation::blank(),
        &PlanningContext::default(),
        &client,
        &SessionConfig::default(),
    )
    .unwrap();
    assert_eq!(loc.attempts, 2);
    assert_eq!(
        loc.bbox,
        BoundingBox {
            x1: 10.0,
            y1: 20.0,
            x2: 30.0,
            y2: 40.0
        }
    );
}

#[test]
fn out_of_range_box_is_clipped_and_flagged() {
    let client = scripted(vec![Ok("[600, 400, 700, 520]".into())]);
    let loc = locate_target(
        &grab("grab the cup"),
        &Observation::blank(),
        &PlanningContext::default(),
        &client,
        &SessionConfig::default(),
    )
    .unwrap();
    assert!(loc.clipped);
    assert_eq!(
        loc.bbox,
        BoundingBox {
            x1: 600.0,
            y1: 400.0,
            x2: 640.0,
            y2: 480.0
        }
    );

    let scene = SceneManifest::from_json(
        r#"{"objects": [{"name": "cup", "box": [600, 400, 640, 480], "shape": "other"}]}"#,
    )
    .unwrap();
    let d = simulate(
        &scene,
        &Observation::blank(),
        &grab("grab the cup"),
        &client,
        &SessionConfig::default(),
        &RuleSet::shipped(),
    )
    .unwrap();
    assert!(d.rationale.contains("clipped"), "{}", d.rationale);
}

#[test]
fn prompts_carry_the_instruction() {
    let ctx = PlanningContext::default();
    ctx.validate().unwrap();
    let p = ctx.locate_prompt(&grab("grab the fanta can"));
    assert!(p.contains("grab the fanta can"));
    assert_eq!(
        parse_box("Box: [1, 2, 3, 4].").unwrap(),
        BoundingBox {
            x1: 1.0,
            y1: 2.0,
            x2: 3.0,
            y2: 4.0
        }
    );
    assert!(parse_box("nothing here").is_err());
    assert_eq!(
        parse_skill("I would use Top Pinch here").unwrap(),
        Skill::TopPinch
    );
}

/// Serves `count` requests with `body`, sending each request body back on
/// the channel.
fn stub_server(body: &'static str, count: usize) -> (String, mpsc::Receiver<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/complete", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(count) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push_str(&line);
            }
            let mut req = vec![0; len];
            reader.read_exact(&mut req).unwrap();
            tx.send((headers, String::from_utf8(req).unwrap())).unwrap();
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

#[test]
fn remote_client_speaks_json() {
    let (url, rx) = stub_server(r#"{"text": "[100, 50, 200, 300]"}"#, 1);
    let client = RemoteClient::new(url, Some("secret".into()), Duration::from_secs(10));
    let reply = client
        .complete(&VlmRequest {
            prompt: "locate it",
            instruction: &grab("grab the can"),
            image_b64: "AAAA",
        })
        .unwrap();
    assert_eq!(reply, "[100, 50, 200, 300]");
    let (headers, body) = rx.recv().unwrap();
    assert!(
        headers
            .to_ascii_lowercase()
            .contains("authorization: bearer secret"),
        "{headers}"
    );
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["prompt"], "locate it");
    assert_eq!(v["image_b64"], "AAAA");
}

#[test]
fn remote_malformed_reply_is_a_format_error() {
    let (url, _rx) = stub_server(r#"{"answer": 1}"#, 1);
    let client = RemoteClient::new(url, None, Duration::from_secs(10));
    let err = client
        .complete(&VlmRequest {
            prompt: "p",
            instruction: &grab("grab it"),
            image_b64: "",
        })
        .unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");
}

#[test]
fn remote_session_locates_the_target() {
    let (url, rx) = stub_server(r#"{"text": "[100, 50, 200, 300]"}"#, 1);
    let client = RemoteClient::new(url, None, Duration::from_secs(10));
    let scene = manifest();
    let d = simulate(
        &scene,
        &Observation::blank(),
        &grab("grab the fanta can"),
        &client,
        &SessionConfig::default(),
        &RuleSet::shipped(),
    )
    .unwrap();
    assert_eq!(d.skill, Skill::SideGrasp);
    let (_, body) = rx.recv().unwrap();
    assert!(body.contains("grab the fanta can"));
}

#[test]
fn unreachable_endpoint_fails_after_t_rounds() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let client = RemoteClient::new(
        format!("http://127.0.0.1:{port}/"),
        None,
        Duration::from_secs(2),
    );
    let session = SessionConfig {
        rounds: 2,
        client: ClientKind::Remote,
    };
    let err = locate_target(
        &grab("grab the cup"),
        &Observation::blank(),
        &PlanningContext::default(),
        &client,
        &session,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Client { attempts: 2, .. }), "{err}");
}
