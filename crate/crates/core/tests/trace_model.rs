mod common;

use std::collections::BTreeSet;
use std::io::Cursor;

use dyncode_lens::error::TraceError;
use dyncode_lens::synth::{random_trace, SynthConfig};
use dyncode_lens::trace::{instr_of, read_trace, write_trace, Location, MemRange, Space, Trace, TraceReader};
use proptest::prelude::*;

use common::{patched_loop, fixture, record, run_corpus};

fn round_trip(t: &Trace) -> Trace {
    let mut buf = Vec::new();
    write_trace(t, &mut buf).unwrap();
    read_trace(Cursor::new(buf)).unwrap()
}

#[test]
fn reads_patched_loop_fixture() {
    let file = std::fs::File::open(fixture("patched_loop.jsonl")).unwrap();
    let t = read_trace(std::io::BufReader::new(file)).unwrap();
    assert_eq!(t.len(), 9);
    assert_eq!(t, patched_loop());
    let names: Vec<&str> = t.records.iter().map(|r| r.mnemonic.as_str()).collect();
    assert_eq!(names, ["I0", "I1", "I2", "I4", "J1", "I3", "I4", "J1", "I5"]);
}

#[test]
fn empty_file_is_empty_trace() {
    let t = read_trace(Cursor::new("")).unwrap();
    assert!(t.is_empty());
    assert!(t.meta.is_empty());
}

#[test]
fn size_mismatch_names_field() {
    let line = r#"{"pos":0,"tid":0,"addr":0,"size":2,"bytes":"aabbcc","mnemonic":"X","kind":"FALL","mem_reads":[],"mem_writes":[],"reg_reads":[],"reg_writes":[]}"#;
    match read_trace(Cursor::new(line)) {
        Err(TraceError::Validation { line: 1, field, .. }) => assert_eq!(field, "bytes"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn malformed_line_reports_line_number() {
    let good = r#"{"pos":0,"tid":0,"addr":0,"size":1,"bytes":"90","mnemonic":"NOP","kind":"FALL","mem_reads":[],"mem_writes":[],"reg_reads":[],"reg_writes":[]}"#;
    let text = format!("{good}\n{{not json\n");
    match read_trace(Cursor::new(text)) {
        Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn taken_must_match_kind() {
    let line = r#"{"pos":0,"tid":0,"addr":0,"size":1,"bytes":"90","mnemonic":"NOP","kind":"FALL","taken":true,"mem_reads":[],"mem_writes":[],"reg_reads":[],"reg_writes":[]}"#;
    assert!(matches!(
        read_trace(Cursor::new(line)),
        Err(TraceError::Validation { field: "taken", .. })
    ));
}

#[test]
fn out_of_order_pos_is_rejected() {
    let line = r#"{"pos":1,"tid":0,"addr":0,"size":1,"bytes":"90","mnemonic":"NOP","kind":"FALL","mem_reads":[],"mem_writes":[],"reg_reads":[],"reg_writes":[]}"#;
    assert!(matches!(
        read_trace(Cursor::new(line)),
        Err(TraceError::Validation { field: "pos", .. })
    ));
}

#[test]
fn streaming_reader_yields_in_order() {
    let mut buf = Vec::new();
    let mut t = patched_loop();
    t.set_markers(&[4]);
    write_trace(&t, &mut buf).unwrap();
    let reader = TraceReader::new(Cursor::new(buf)).unwrap();
    assert_eq!(reader.meta().get("markers").unwrap(), &serde_json::json!([4]));
    let pos: Vec<usize> = reader.map(|r| r.unwrap().pos).collect();
    assert_eq!(pos, (0..9).collect::<Vec<_>>());
}

#[test]
fn round_trips() {
    let t = patched_loop();
    assert_eq!(round_trip(&t), t);
    assert_eq!(round_trip(&Trace::default()), Trace::default());
    let bench2 = run_corpus("addtwo");
    assert_eq!(round_trip(&bench2), bench2);
}

#[test]
fn location_sets() {
    let mut r = record(0, 100, dyncode_lens::trace::ControlKind::Fall);
    assert_eq!(instr_of(&r), (100..104).map(Location::mem).collect());
    assert!(dyncode_lens::trace::writes_of(&r).is_empty());
    r.mem_writes = vec![MemRange(200, 1)];
    r.reg_writes = vec![3];
    assert_eq!(
        dyncode_lens::trace::writes_of(&r),
        BTreeSet::from([Location::mem(200), Location::reg(3)])
    );
}

#[test]
fn location_equality_by_space() {
    assert_eq!(Location::reg(3), Location { space: Space::Reg, addr: 3 });
    assert_ne!(Location::reg(3), Location::mem(3));
    assert_eq!("mem:0x10".parse::<Location>(), Ok(Location::mem(16)));
    assert_eq!("reg:3".parse::<Location>(), Ok(Location::reg(3)));
    assert!("disk:1".parse::<Location>().is_err());
}

#[test]
fn patch_store_writes_into_patched_instruction() {
    // the STORE in `patch` writes a byte of the ADDI in `addtwo`
    let t = run_corpus("addtwo");
    let store = t.records.iter().find(|r| r.mnemonic == "STORE").unwrap();
    let addi = t.records.iter().find(|r| r.mnemonic == "ADDI").unwrap();
    let w = dyncode_lens::trace::writes_of(store);
    let hit: BTreeSet<_> = w.intersection(&instr_of(addi)).copied().collect();
    // oracle: byte-range intersection
    let lo = store.mem_writes[0].0;
    let expected: BTreeSet<_> = (lo..lo + u64::from(store.mem_writes[0].1))
        .filter(|a| (addi.addr..addi.addr + 4).contains(a))
        .map(Location::mem)
        .collect();
    assert!(!hit.is_empty());
    assert_eq!(hit, expected);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_traces_round_trip(seed in any::<u64>(), len in 0usize..120, threads in 1u32..4) {
        let t = random_trace(seed, &SynthConfig { len, threads, ..Default::default() });
        prop_assert_eq!(round_trip(&t), t);
    }

    #[test]
    fn instr_of_is_contiguous(seed in any::<u64>()) {
        let t = random_trace(seed, &SynthConfig::default());
        for r in &t.records {
            let s: Vec<u64> = instr_of(r).into_iter().map(|l| { assert!(l.is_mem()); l.addr }).collect();
            prop_assert_eq!(s.len(), r.size as usize);
            prop_assert!(s.windows(2).all(|w| w[1] == w[0] + 1));
            prop_assert_eq!(s[0], r.addr);
        }
    }
}
