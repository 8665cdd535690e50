use super::*;
use crate::fixtures::{self, event, DAY0};
use crate::geom::Point;
use crate::journal::MemorySink;
use crate::twin::ViolationType;

const SIX_AM: Timestamp = DAY0 + 6 * 3600;

fn pipeline() -> Pipeline {
    Pipeline::new(fixtures::model(), fixtures::credentials(), PipelineConfig::default()).unwrap()
}

fn body(e: &AnomalyEvent) -> Vec<u8> {
    serde_json::to_vec(e).unwrap()
}

fn ingest(p: &mut Pipeline, e: &AnomalyEvent, now: Timestamp) -> IngestResult {
    p.ingest(&body(e), "key-cam", now, &mut Journal::discard()).unwrap()
}

#[test]
fn immediate_violation_is_published_before_ack() {
    let mut p = pipeline();
    let e = event("e1", ViolationType::Handwash, "cooking", SIX_AM);
    let res = ingest(&mut p, &e, SIX_AM);
    assert_eq!(res.outcome.status, IngestStatus::AcceptedNew);
    assert_eq!(res.outcome.violation_id.as_deref(), Some("v-00000001"));
    let published = res.published.expect("immediate alert");
    assert_eq!(published.reported_at, Some(SIX_AM));
    assert_eq!(p.alert_count(), 1);
    assert_eq!(p.queued().count(), 0);
}

#[test]
fn delay_tolerant_waits_for_tick() {
    let mut p = pipeline();
    let res = ingest(&mut p, &event("e1", ViolationType::FaceMask, "cooking", SIX_AM), SIX_AM);
    assert_eq!(res.outcome.status, IngestStatus::AcceptedNew);
    assert!(res.published.is_none());
    assert_eq!(p.records()[0].reported_at, None);
    assert_eq!(p.alert_count(), 0);
}

#[test]
fn out_of_schedule_gate() {
    let mut p = pipeline();
    let three_am = DAY0 + 3 * 3600;
    let res = ingest(&mut p, &event("e1", ViolationType::FaceMask, "cooking", three_am), three_am);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("out_of_schedule"));
    // stores has no process at all
    let res = ingest(&mut p, &event("e2", ViolationType::Mopping, "stores", SIX_AM), SIX_AM);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("out_of_schedule"));
    // immediate types are never gated
    let res = ingest(&mut p, &event("e3", ViolationType::Handwash, "stores", three_am), three_am);
    assert_eq!(res.outcome.status, IngestStatus::AcceptedNew);
}

#[test]
fn replayed_bytes_are_duplicates() {
    let mut p = pipeline();
    let e = event("e1", ViolationType::Hairnet, "cooking", SIX_AM);
    let first = ingest(&mut p, &e, SIX_AM);
    let again = ingest(&mut p, &e, SIX_AM + 500);
    assert_eq!(again.outcome.status, IngestStatus::AcceptedDuplicate);
    assert_eq!(again.outcome.duplicate_of, first.outcome.violation_id);
    assert_eq!(p.records().len(), 1);
    assert_eq!(p.records()[0].duplicate_event_ids, vec!["e1".to_string()]);
    ingest(&mut p, &e, SIX_AM + 600);
    assert_eq!(p.records()[0].duplicate_event_ids, vec!["e1".to_string()]);
}

#[test]
fn similar_event_joins_record() {
    let mut p = pipeline();
    let mut a = event("e1", ViolationType::Handwash, "cooking", SIX_AM);
    a.location = Some(Point::new(1.0, 1.0));
    let mut b = event("e2", ViolationType::Handwash, "cooking", SIX_AM + 10);
    b.location = Some(Point::new(1.5, 1.0));
    ingest(&mut p, &a, SIX_AM);
    let res = ingest(&mut p, &b, SIX_AM + 10);
    assert_eq!(res.outcome.duplicate_of.as_deref(), Some("v-00000001"));
    // duplicates of a published immediate violation do not re-alert
    assert!(res.published.is_none());
    assert_eq!(p.alert_count(), 1);

    let mut c = b.clone();
    c.event_id = "e3".into();
    c.timestamp = SIX_AM + 400;
    let res = ingest(&mut p, &c, SIX_AM + 400);
    assert_eq!(res.outcome.status, IngestStatus::AcceptedNew);
}

#[test]
fn rejection_codes() {
    let mut p = pipeline();
    let e = event("e1", ViolationType::FaceMask, "cooking", SIX_AM);
    let mut j = Journal::discard();

    let res = p.ingest(&body(&e), "wrong", SIX_AM, &mut j).unwrap();
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("auth_failed"));

    let res = p.ingest(b"{not json", "key-cam", SIX_AM, &mut j).unwrap();
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("malformed"));

    let mut v = serde_json::to_value(&e).unwrap();
    v.as_object_mut().unwrap().remove("space_id");
    let res = p.ingest(&serde_json::to_vec(&v).unwrap(), "key-cam", SIX_AM, &mut j).unwrap();
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("validation:space_id"));
    assert_eq!(res.outcome.field_errors[0].code, "missing_field:space_id");

    let mut far = e.clone();
    far.location = Some(Point::new(50.0, 2.0));
    let res = ingest(&mut p, &far, SIX_AM);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("validation:location"));
    assert_eq!(res.outcome.field_errors[0].code, "location_out_of_bounds");

    let mut nowhere = e.clone();
    nowhere.space_id = "loading-dock".into();
    let res = ingest(&mut p, &nowhere, SIX_AM);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("unknown_space"));

    let mut future = e.clone();
    future.timestamp = SIX_AM + 61;
    assert_eq!(ingest(&mut p, &future, SIX_AM).outcome.reject_reason.as_deref(), Some("validation:timestamp"));
    future.timestamp = SIX_AM + 60;
    assert!(ingest(&mut p, &future, SIX_AM).outcome.is_accepted());

    let mut bad_conf = e.clone();
    bad_conf.event_id = "e9".into();
    bad_conf.confidence = 1.5;
    assert_eq!(ingest(&mut p, &bad_conf, SIX_AM).outcome.reject_reason.as_deref(), Some("validation:confidence"));

    let mut spoofed = e.clone();
    spoofed.source_id = "slow".into();
    assert_eq!(ingest(&mut p, &spoofed, SIX_AM).outcome.reject_reason.as_deref(), Some("validation:source_id"));

    let mut zone = e.clone();
    zone.space_id = "production".into();
    zone.location = None;
    assert_eq!(ingest(&mut p, &zone, SIX_AM).outcome.reject_reason.as_deref(), Some("validation:space_id"));
}

#[test]
fn identity_fields_are_refused() {
    let mut p = pipeline();
    let mut e = event("e1", ViolationType::FaceMask, "cooking", SIX_AM);
    e.payload = Some(serde_json::json!({"bbox": [1, 2, 3, 4], "track": {"badge_id": "b001"}}));
    let res = ingest(&mut p, &e, SIX_AM);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("validation:payload"));

    let mut v = serde_json::to_value(event("e2", ViolationType::FaceMask, "cooking", SIX_AM)).unwrap();
    v["badge_id"] = "b001".into();
    let res = p.ingest(&serde_json::to_vec(&v).unwrap(), "key-cam", SIX_AM, &mut Journal::discard()).unwrap();
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("malformed"));
}

#[test]
fn rate_limit_counts_accepted_only() {
    let mut p = pipeline();
    let mut j = Journal::discard();
    let mut send = |p: &mut Pipeline, id: &str, now| {
        let mut e = event(id, ViolationType::Handwash, "cooking", now);
        e.source_id = "slow".into();
        p.ingest(&body(&e), "key-slow", now, &mut j).unwrap().outcome
    };
    assert!(send(&mut p, "a", SIX_AM).is_accepted());
    assert!(send(&mut p, "b", SIX_AM + 1).is_accepted());
    assert_eq!(send(&mut p, "c", SIX_AM + 2).reject_reason.as_deref(), Some("rate_limited"));
    assert!(send(&mut p, "d", SIX_AM + 61).is_accepted());
}

#[test]
fn classify_per_table() {
    let p = pipeline();
    let pri = |v| p.classify_priority(&event("x", v, "packing", SIX_AM)).unwrap();
    assert_eq!(pri(ViolationType::Handwash), Priority::Immediate);
    assert_eq!(pri(ViolationType::ContactTracing), Priority::Immediate);
    assert_eq!(pri(ViolationType::Sterilization), Priority::DelayTolerant);
    assert_eq!(pri(ViolationType::FaceMask), Priority::DelayTolerant);
}

#[test]
fn batch_tick_publishes_in_order() {
    let mut p = pipeline();
    let mut j = Journal::discard();
    let t0 = SIX_AM + 10;
    for (i, (vtype, dt)) in [(ViolationType::Mopping, 30), (ViolationType::Apron, 5), (ViolationType::Gloves, 20)]
        .into_iter()
        .enumerate()
    {
        let e = event(&format!("e{i}"), vtype, "cooking", t0 + dt);
        p.ingest(&body(&e), "key-cam", t0 + dt, &mut j).unwrap();
    }
    assert!(p.run_batch_tick(t0, &mut j).unwrap().is_empty());
    let out = p.run_batch_tick(SIX_AM + 900, &mut j).unwrap();
    let times: Vec<_> = out.iter().map(|r| r.detected_at).collect();
    assert_eq!(times, vec![t0 + 5, t0 + 20, t0 + 30]);
    assert!(out.iter().all(|r| r.reported_at == Some(SIX_AM + 900)));
    assert!(p.run_batch_tick(SIX_AM + 1800, &mut j).unwrap().is_empty());
}

#[test]
fn enqueued_after_tick_waits_for_next() {
    let mut p = pipeline();
    let mut j = Journal::discard();
    let sched = p.config().schedule;
    let tick = sched.tick_at_or_before(SIX_AM + 100);
    assert!(p.run_batch_tick(tick, &mut j).unwrap().is_empty());
    let e = event("late", ViolationType::Hairnet, "cooking", tick + 1);
    p.ingest(&body(&e), "key-cam", tick + 1, &mut j).unwrap();
    let next: Vec<_> = sched.ticks_between(tick, tick + 2000).collect();
    assert_eq!(next, vec![tick + 900, tick + 1800]);
    let out = p.run_batch_tick(next[0], &mut j).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].reported_at, Some(tick + 900));
    assert!(out[0].reported_at.unwrap() - out[0].detected_at <= 900);
}

#[test]
fn accepted_events_are_journaled_first() {
    let sink = MemorySink::new();
    let mut j = Journal::new(Box::new(sink.clone()));
    let mut p = pipeline();
    let e = event("e1", ViolationType::FaceMask, "cooking", SIX_AM);
    p.ingest(&body(&e), "key-cam", SIX_AM, &mut j).unwrap();
    p.ingest(&body(&e), "key-cam", SIX_AM, &mut j).unwrap();
    p.ingest(&body(&e), "bad", SIX_AM, &mut j).unwrap();
    p.run_batch_tick(SIX_AM + 900, &mut j).unwrap();
    let records = sink.records();
    let kinds: Vec<_> = records.iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![RecordKind::Ingest, RecordKind::Ingest, RecordKind::Publish]);
    let rec: IngestRecord = serde_json::from_value(records[1].body.clone()).unwrap();
    assert_eq!(rec.outcome.status, IngestStatus::AcceptedDuplicate);
    assert_eq!(rec.received_at, SIX_AM);
}

#[test]
fn disabled_policy_rejects() {
    let mut doc = fixtures::doc();
    doc.spaces[2].policy.insert(ViolationType::Gloves, crate::twin::PolicyEntry {
        enabled: false,
        ..crate::twin::PolicyEntry::default_for(ViolationType::Gloves)
    });
    let model = Arc::new(TwinModel::from_document(doc).unwrap());
    let mut p = Pipeline::new(model, fixtures::credentials(), PipelineConfig::default()).unwrap();
    let res = ingest(&mut p, &event("g", ViolationType::Gloves, "cooking", SIX_AM), SIX_AM);
    assert_eq!(res.outcome.reject_reason.as_deref(), Some("validation:vtype"));
}
