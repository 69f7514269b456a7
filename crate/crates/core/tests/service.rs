mod common;

use std::sync::Arc;

use serde_json::json;
use weaksift_core::service::{AckStatus, AnnotationService, LabelSubmission};
use weaksift_core::Error;

fn service(n: usize, seed: u64) -> (common::SimWorkspace, AnnotationService) {
    let sim = common::sim_workspace(n, seed, 3);
    sim.pipeline.fit().unwrap();
    sim.pipeline.select().unwrap();
    let config = sim.pipeline.config.clone();
    let svc = AnnotationService::new(weaksift_core::pipeline::Pipeline::open(config).unwrap()).unwrap();
    (sim, svc)
}

fn submission(doc_id: &str, label: serde_json::Value) -> LabelSubmission {
    LabelSubmission {
        doc_id: doc_id.into(),
        label,
        annotator: "a1".into(),
        client_timestamp: "2024-03-01T12:00:00Z".into(),
    }
}

#[test]
fn queue_follows_batch_rank_and_drops_annotated_items() {
    let (_sim, svc) = service(400, 1);
    let items = svc.queue(10).unwrap();
    assert_eq!(items.iter().map(|i| i.rank.unwrap()).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    let first = items[0].doc_id.clone();
    svc.submit(&[submission(&first, json!(1))]).unwrap();
    let after = svc.queue(10).unwrap();
    assert!(after.iter().all(|i| i.doc_id != first));
    assert_eq!(after[0].rank, Some(2));
}

#[test]
fn zero_limit_and_missing_batch_are_errors() {
    let (_sim, svc) = service(200, 2);
    assert!(matches!(svc.queue(0), Err(Error::InvalidArgument(_))));

    let bare = common::sim_workspace(200, 2, 3);
    let svc = AnnotationService::new(weaksift_core::pipeline::Pipeline::open(bare.pipeline.config.clone()).unwrap())
        .unwrap();
    assert!(matches!(svc.queue(5), Err(Error::NoBatch(0))));
}

#[test]
fn items_are_acknowledged_independently() {
    let (sim, svc) = service(200, 3);
    let ids: Vec<String> = svc.queue(2).unwrap().into_iter().map(|i| i.doc_id).collect();
    let acks = svc
        .submit(&[
            submission(&ids[0], json!(1)),
            submission("no-such-doc", json!(0)),
            submission(&ids[1], json!(0)),
        ])
        .unwrap();
    let statuses: Vec<AckStatus> = acks.iter().map(|a| a.status).collect();
    assert_eq!(statuses, [AckStatus::Ok, AckStatus::Error, AckStatus::Ok]);
    assert!(acks[1].reason.as_deref().unwrap().contains("no-such-doc"));
    assert_eq!(sim.pipeline.workspace.load_annotations().unwrap().log().len(), 2);
}

#[test]
fn bad_label_and_timestamp_reject_only_their_item() {
    let (_sim, svc) = service(200, 4);
    let ids: Vec<String> = svc.queue(3).unwrap().into_iter().map(|i| i.doc_id).collect();
    let mut late = submission(&ids[2], json!(1));
    late.client_timestamp = "yesterday".into();
    let acks = svc
        .submit(&[submission(&ids[0], json!(2)), submission(&ids[1], json!("skip")), late])
        .unwrap();
    assert_eq!(acks[0].status, AckStatus::Error);
    assert_eq!(acks[1].status, AckStatus::Ok);
    assert_eq!(acks[2].status, AckStatus::Error);
}

#[test]
fn resubmission_is_idempotent_with_audit() {
    let (sim, svc) = service(200, 5);
    let id = svc.queue(1).unwrap()[0].doc_id.clone();
    let payload = [submission(&id, json!(1))];
    svc.submit(&payload).unwrap();
    let acks = svc.submit(&payload).unwrap();
    assert!(acks.iter().all(|a| a.status == AckStatus::Ok));
    let store = sim.pipeline.workspace.load_annotations().unwrap();
    assert_eq!(store.history(&id).len(), 2);
    assert_eq!(store.current(&id).unwrap().label, 1);
    assert_eq!(store.len(), 1);
}

#[test]
fn skips_are_logged_without_annotating() {
    let (sim, svc) = service(200, 6);
    let id = svc.queue(1).unwrap()[0].doc_id.clone();
    svc.submit(&[submission(&id, json!("skip"))]).unwrap();
    let store = sim.pipeline.workspace.load_annotations().unwrap();
    assert!(!store.is_annotated(&id));
    assert_eq!(store.skips().len(), 1);
    assert_eq!(svc.queue(1).unwrap()[0].doc_id, id);
}

#[test]
fn concurrent_distinct_submissions_are_all_kept() {
    let (sim, svc) = service(400, 7);
    let svc = Arc::new(svc);
    let ids: Vec<String> = svc.queue(64).unwrap().into_iter().map(|i| i.doc_id).collect();
    std::thread::scope(|s| {
        for chunk in ids.chunks(4) {
            let svc = Arc::clone(&svc);
            s.spawn(move || {
                for id in chunk {
                    svc.submit(&[submission(id, json!(1))]).unwrap();
                }
            });
        }
    });
    assert_eq!(sim.pipeline.workspace.load_annotations().unwrap().len(), ids.len());
}

#[test]
fn concurrent_same_document_keeps_one_current_record() {
    let (sim, svc) = service(200, 8);
    let svc = Arc::new(svc);
    let id = svc.queue(1).unwrap()[0].doc_id.clone();
    std::thread::scope(|s| {
        for k in 0..16 {
            let svc = Arc::clone(&svc);
            let id = id.clone();
            s.spawn(move || svc.submit(&[submission(&id, json!(k % 2))]).unwrap());
        }
    });
    let store = sim.pipeline.workspace.load_annotations().unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(store.history(&id).len(), 16);
}

#[test]
fn submissions_during_advancement_are_refused() {
    let (sim, svc) = service(200, 9);
    let lock = sim.pipeline.workspace.lock_path();
    std::fs::write(&lock, b"").unwrap();
    let id = svc.queue(1).unwrap()[0].doc_id.clone();
    assert!(matches!(svc.submit(&[submission(&id, json!(1))]), Err(Error::Advancing)));
    std::fs::remove_file(&lock).unwrap();
    assert!(svc.submit(&[submission(&id, json!(1))]).is_ok());
}

#[test]
fn status_counts_follow_labels_and_evaluation() {
    let (sim, svc) = service(600, 10);
    let fresh = svc.status().unwrap();
    assert_eq!((fresh.round, fresh.annotated_total, fresh.batch_remaining), (0, 0, 100));
    assert!(fresh.last_eval.is_none());
    let ids: Vec<String> = svc.queue(100).unwrap().into_iter().map(|i| i.doc_id).collect();
    let subs: Vec<LabelSubmission> = ids
        .iter()
        .map(|id| submission(id, json!(sim.corpus.truth[id])))
        .collect();
    svc.submit(&subs[..30]).unwrap();
    let mid = svc.status().unwrap();
    assert_eq!((mid.annotated_total, mid.annotated_this_round, mid.batch_remaining), (30, 30, 70));
    svc.submit(&subs[30..]).unwrap();
    sim.pipeline.advance_round().unwrap();
    let (summary, _) = sim.pipeline.evaluate().unwrap();
    let later = svc.status().unwrap();
    assert_eq!(later.round, 1);
    assert_eq!(later.annotated_this_round, 0);
    let brief = later.last_eval.unwrap();
    assert_eq!((brief.auc, brief.sensitivity, brief.specificity), (summary.auc, summary.sensitivity, summary.specificity));
}

#[test]
fn document_lookup_falls_back_to_predictions() {
    let (sim, svc) = service(300, 11);
    let batch_ids: Vec<String> = svc.queue(100).unwrap().into_iter().map(|i| i.doc_id).collect();
    let outside = sim.corpus.truth.keys().find(|id| !batch_ids.contains(id)).unwrap();
    let item = svc.document(outside).unwrap();
    assert!(item.p.is_some());
    assert_eq!(item.rank, None);
    let inside = svc.document(&batch_ids[0]).unwrap();
    assert_eq!(inside.rank, Some(1));
    assert!(matches!(svc.document("missing"), Err(Error::UnknownDocument(_))));
}

#[test]
fn mention_offsets_point_into_served_text() {
    let (_sim, svc) = service(600, 12);
    let items = svc.queue(100).unwrap();
    let mut seen = 0;
    for item in &items {
        for m in &item.mentions {
            let text = match m.field {
                weaksift_core::grammar::TextField::Title => &item.title,
                _ => item.abstract_text.as_ref().unwrap(),
            };
            let slice: String = text.chars().skip(m.char_start).take(m.char_end - m.char_start).collect();
            assert_eq!(slice, m.surface);
            seen += 1;
        }
    }
    assert!(seen > 0);
}
